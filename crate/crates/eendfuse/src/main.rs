fn main() {
    std::process::exit(eendfuse::cli::run());
}
