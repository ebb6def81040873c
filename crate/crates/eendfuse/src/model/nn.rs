//! Minimal layer kit over candle tensors: named parameter store with seeded
//! init, linear / layer-norm / multi-head attention / feed-forward /
//! transformer block / LSTM, and the train-vs-eval dropout switch.
//!
//! Everything runs in f64 on CPU so analytic gradients can be checked
//! against central finite differences at tight tolerance.

use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Forward-pass mode: training draws dropout masks from the caller's RNG,
/// evaluation is deterministic.
pub enum RunMode<'a> {
    Train { rng: &'a mut ChaCha8Rng },
    Eval,
}

impl RunMode<'_> {
    fn is_train(&self) -> bool {
        matches!(self, RunMode::Train { .. })
    }
}

/// Ordered, named parameter set with seeded initialization. The order is
/// the creation order, which makes optimizer state and finite-difference
/// sweeps stable across runs.
pub struct ParamStore {
    device: Device,
    dtype: DType,
    rng: ChaCha8Rng,
    params: Vec<(String, Var)>,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            device: Device::Cpu,
            dtype,
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: Vec::new(),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn register(&mut self, name: &str, var: Var) -> Result<Tensor> {
        if self.params.iter().any(|(n, _)| n == name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name}")));
        }
        let t = var.as_tensor().clone();
        self.params.push((name.to_string(), var));
        Ok(t)
    }

    /// Uniform init in [-bound, bound].
    pub fn var_uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        self.register(name, Var::from_tensor(&t)?)
    }

    pub fn var_zeros(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let t = Tensor::zeros(shape, self.dtype, &self.device)?;
        self.register(name, Var::from_tensor(&t)?)
    }

    pub fn var_ones(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let t = Tensor::ones(shape, self.dtype, &self.device)?;
        self.register(name, Var::from_tensor(&t)?)
    }

    pub fn vars(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|(_, v)| v.as_tensor().elem_count()).sum()
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let map: std::collections::HashMap<String, Tensor> = self
            .params
            .iter()
            .map(|(n, v)| (n.clone(), v.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&map, path)?;
        Ok(())
    }

    /// Load weights saved by [`ParamStore::save`]; every parameter must be
    /// present with a matching shape and no extras may remain.
    pub fn load(&mut self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let mut map = candle_core::safetensors::load(path, &self.device)?;
        for (name, var) in &self.params {
            let t = map.remove(name).ok_or_else(|| {
                Error::CheckpointMismatch(format!("missing parameter {name} in {}", path.display()))
            })?;
            if t.shape() != var.as_tensor().shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "parameter {name}: shape {:?} in file, {:?} expected",
                    t.shape(),
                    var.as_tensor().shape()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        if let Some(extra) = map.keys().next() {
            return Err(Error::CheckpointMismatch(format!(
                "unexpected parameter {extra} in {}",
                path.display()
            )));
        }
        Ok(())
    }
}

/// Numerically stable sigmoid built from tanh.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((((x * 0.5)?.tanh()? * 0.5)? + 0.5)?)
}

/// Softmax over the last dimension (max-shifted; the shift is detached so
/// it stays out of the gradient graph).
pub fn softmax_last_dim(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let sum = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&sum)?)
}

/// Inverted dropout; identity in eval mode or at p = 0.
pub fn dropout(x: &Tensor, p: f64, mode: &mut RunMode) -> Result<Tensor> {
    if p <= 0.0 || !mode.is_train() {
        return Ok(x.clone());
    }
    if p >= 1.0 {
        return Err(Error::InvalidArgument(format!("dropout rate {p} must be < 1")));
    }
    let RunMode::Train { rng } = mode else { unreachable!() };
    let keep = 1.0 - p;
    let n = x.elem_count();
    let mask: Vec<f64> =
        (0..n).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
    let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
    Ok(x.mul(&mask)?)
}

pub struct Linear {
    weight: Tensor, // (in, out)
    bias: Tensor,   // (out)
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Ok(Self {
            weight: store.var_uniform(&format!("{name}.weight"), &[in_dim, out_dim], bound)?,
            bias: store.var_uniform(&format!("{name}.bias"), &[out_dim], bound)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.var_ones(&format!("{name}.gamma"), &[dim])?,
            beta: store.var_zeros(&format!("{name}.beta"), &[dim])?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

pub struct MultiHeadAttention {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    n_heads: usize,
    head_dim: usize,
    dropout_p: f64,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        n_heads: usize,
        dropout_p: f64,
    ) -> Result<Self> {
        if !d_model.is_multiple_of(n_heads) {
            return Err(Error::InvalidArgument(format!(
                "d_model {d_model} not divisible by {n_heads} heads"
            )));
        }
        Ok(Self {
            wq: Linear::new(store, &format!("{name}.wq"), d_model, d_model)?,
            wk: Linear::new(store, &format!("{name}.wk"), d_model, d_model)?,
            wv: Linear::new(store, &format!("{name}.wv"), d_model, d_model)?,
            wo: Linear::new(store, &format!("{name}.wo"), d_model, d_model)?,
            n_heads,
            head_dim: d_model / n_heads,
            dropout_p,
        })
    }

    /// Self-attention over a (T, D) sequence.
    pub fn forward(&self, x: &Tensor, mode: &mut RunMode) -> Result<Tensor> {
        let (t_len, d_model) = x.dims2()?;
        let heads = |y: Tensor| -> Result<Tensor> {
            // (T, D) -> (H, T, Dh)
            Ok(y.reshape((t_len, self.n_heads, self.head_dim))?
                .transpose(0, 1)?
                .contiguous()?)
        };
        let q = heads(self.wq.forward(x)?)?;
        let k = heads(self.wk.forward(x)?)?;
        let v = heads(self.wv.forward(x)?)?;

        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let scores = (q.matmul(&k.transpose(1, 2)?.contiguous()?)? * scale)?;
        let attn = softmax_last_dim(&scores)?;
        let attn = dropout(&attn, self.dropout_p, mode)?;
        let ctx = attn.matmul(&v)?; // (H, T, Dh)
        let merged = ctx.transpose(0, 1)?.contiguous()?.reshape((t_len, d_model))?;
        self.wo.forward(&merged)
    }
}

pub struct FeedForward {
    lin1: Linear,
    lin2: Linear,
    dropout_p: f64,
}

impl FeedForward {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        ff_dim: usize,
        dropout_p: f64,
    ) -> Result<Self> {
        Ok(Self {
            lin1: Linear::new(store, &format!("{name}.lin1"), d_model, ff_dim)?,
            lin2: Linear::new(store, &format!("{name}.lin2"), ff_dim, d_model)?,
            dropout_p,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: &mut RunMode) -> Result<Tensor> {
        let h = self.lin1.forward(x)?.relu()?;
        let h = dropout(&h, self.dropout_p, mode)?;
        self.lin2.forward(&h)
    }
}

/// Pre-norm transformer encoder block without positional encoding.
pub struct TransformerBlock {
    norm1: LayerNorm,
    attn: MultiHeadAttention,
    norm2: LayerNorm,
    ff: FeedForward,
    dropout_p: f64,
}

impl TransformerBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        n_heads: usize,
        ff_dim: usize,
        dropout_p: f64,
    ) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d_model)?,
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d_model, n_heads, dropout_p)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d_model)?,
            ff: FeedForward::new(store, &format!("{name}.ff"), d_model, ff_dim, dropout_p)?,
            dropout_p,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: &mut RunMode) -> Result<Tensor> {
        let a = self.attn.forward(&self.norm1.forward(x)?, mode)?;
        let x = x.add(&dropout(&a, self.dropout_p, mode)?)?;
        let f = self.ff.forward(&self.norm2.forward(&x)?, mode)?;
        Ok(x.add(&dropout(&f, self.dropout_p, mode)?)?)
    }
}

/// Single-layer unidirectional LSTM (gate order i, f, g, o).
pub struct Lstm {
    w_ih: Tensor, // (in, 4H)
    w_hh: Tensor, // (H, 4H)
    b_ih: Tensor, // (4H)
    b_hh: Tensor, // (4H)
    hidden: usize,
}

pub struct LstmState {
    pub h: Tensor, // (1, H)
    pub c: Tensor, // (1, H)
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        Ok(Self {
            w_ih: store.var_uniform(&format!("{name}.w_ih"), &[in_dim, 4 * hidden], bound)?,
            w_hh: store.var_uniform(&format!("{name}.w_hh"), &[hidden, 4 * hidden], bound)?,
            b_ih: store.var_uniform(&format!("{name}.b_ih"), &[4 * hidden], bound)?,
            b_hh: store.var_uniform(&format!("{name}.b_hh"), &[4 * hidden], bound)?,
            hidden,
        })
    }

    pub fn zero_state(&self, dtype: DType, device: &Device) -> Result<LstmState> {
        Ok(LstmState {
            h: Tensor::zeros((1, self.hidden), dtype, device)?,
            c: Tensor::zeros((1, self.hidden), dtype, device)?,
        })
    }

    /// One step on a (1, in) input.
    pub fn step(&self, x: &Tensor, state: &LstmState) -> Result<LstmState> {
        let z = x
            .matmul(&self.w_ih)?
            .add(&state.h.matmul(&self.w_hh)?)?
            .broadcast_add(&self.b_ih)?
            .broadcast_add(&self.b_hh)?;
        let h = self.hidden;
        let i = sigmoid(&z.narrow(1, 0, h)?)?;
        let f = sigmoid(&z.narrow(1, h, h)?)?;
        let g = z.narrow(1, 2 * h, h)?.tanh()?;
        let o = sigmoid(&z.narrow(1, 3 * h, h)?)?;
        let c = f.mul(&state.c)?.add(&i.mul(&g)?)?;
        let h_out = o.mul(&c.tanh()?)?;
        Ok(LstmState { h: h_out, c })
    }

    /// Consume a (T, in) sequence from a zero state, returning the final
    /// state.
    pub fn run(&self, xs: &Tensor) -> Result<LstmState> {
        let (t_len, _) = xs.dims2()?;
        let mut state = self.zero_state(xs.dtype(), xs.device())?;
        for t in 0..t_len {
            state = self.step(&xs.narrow(0, t, 1)?, &state)?;
        }
        Ok(state)
    }
}
