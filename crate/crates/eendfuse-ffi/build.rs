fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").expect("CARGO_MANIFEST_DIR");
    let header = std::path::Path::new(&crate_dir).join("include").join("eendfuse.h");
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");

    let config = cbindgen::Config::from_file(std::path::Path::new(&crate_dir).join("cbindgen.toml"))
        .expect("read cbindgen.toml");
    match cbindgen::Builder::new().with_crate(&crate_dir).with_config(config).generate() {
        Ok(bindings) => {
            std::fs::create_dir_all(header.parent().unwrap()).expect("create include dir");
            bindings.write_to_file(&header);
        }
        // Keep the committed header usable even if generation hiccups.
        Err(err) => println!("cargo:warning=cbindgen skipped: {err}"),
    }
}
