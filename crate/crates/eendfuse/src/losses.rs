//! Binary cross entropy, attractor existence loss, permutation-invariant
//! diarization loss, and the weighted total. Each loss exists twice: a
//! plain-f64 form for scoring and tests, and a tensor form that carries
//! gradients through training. BCE is always evaluated in logit space.

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::labels::LabelMatrix;
use crate::model::{attractor_targets, PosteriorMatrix};

/// Largest speaker count for the exhaustive S! permutation search.
pub const MAX_PIT_SPEAKERS: usize = 6;

/// Loss weighting mode: full attractor weight for training from scratch,
/// reduced weight for adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Train,
    Adapt,
}

impl TrainMode {
    pub fn alpha(&self) -> f64 {
        match self {
            TrainMode::Train => 1.0,
            TrainMode::Adapt => 0.1,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::Train => "train",
            TrainMode::Adapt => "adapt",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(TrainMode::Train),
            "adapt" => Ok(TrainMode::Adapt),
            other => Err(Error::InvalidArgument(format!("unknown mode {other}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LossBundle {
    pub l_d: f64,
    pub l_alpha: f64,
    pub alpha: f64,
    pub total: f64,
    /// Label column assigned to each posterior column by the PIT search.
    pub permutation: Vec<usize>,
}

/// Stable elementwise binary cross entropy given the logit z of the
/// prediction: relu(z) - z*y + ln(1 + exp(-|z|)).
fn bce_term_from_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Binary cross entropy between a label row and a posterior row. The
/// posteriors must lie strictly inside (0, 1); the sum runs over entries.
pub fn bce(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::ShapeMismatch(format!(
            "label row length {} vs posterior row length {}",
            y.len(),
            y_hat.len()
        )));
    }
    let mut total = 0.0;
    for (&yi, &pi) in y.iter().zip(y_hat) {
        if !(pi > 0.0 && pi < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "posterior {pi} outside (0, 1); clamp through the logit form first"
            )));
        }
        let z = (pi / (1.0 - pi)).ln();
        total += bce_term_from_logit(z, yi);
    }
    Ok(total)
}

/// Sum of stable BCE terms between a 0/1 label tensor and a logit tensor of
/// the same shape. abs is composed from two relus so every op in the graph
/// has a backward.
pub fn bce_with_logits_sum(labels: &Tensor, logits: &Tensor) -> Result<Tensor> {
    if labels.shape() != logits.shape() {
        return Err(Error::ShapeMismatch(format!(
            "labels {:?} vs logits {:?}",
            labels.shape(),
            logits.shape()
        )));
    }
    let abs = logits.relu()?.add(&logits.neg()?.relu()?)?;
    let softplus_neg_abs = (abs.neg()?.exp()? + 1.0)?.log()?;
    let term = logits.relu()?.sub(&logits.mul(labels)?)?.add(&softplus_neg_abs)?;
    Ok(term.sum_all()?)
}

/// Attractor existence loss: BCE between the existence probabilities and
/// the `[1, ..., 1, 0]` targets, divided by (1 + S).
pub fn attractor_existence_loss(probs: &[f64], n_speakers: usize) -> Result<f64> {
    if probs.len() != n_speakers + 1 {
        return Err(Error::ShapeMismatch(format!(
            "expected {} existence probabilities for {n_speakers} speakers, got {}",
            n_speakers + 1,
            probs.len()
        )));
    }
    let targets = attractor_targets(n_speakers);
    Ok(bce(&targets, probs)? / (1.0 + n_speakers as f64))
}

/// Tensor form of the existence loss over raw logits.
pub fn attractor_existence_loss_t(exist_logits: &Tensor, n_speakers: usize) -> Result<Tensor> {
    let n = exist_logits.dims1()?;
    if n != n_speakers + 1 {
        return Err(Error::ShapeMismatch(format!(
            "expected {} existence logits for {n_speakers} speakers, got {n}",
            n_speakers + 1
        )));
    }
    let targets = Tensor::from_vec(attractor_targets(n_speakers), (n,), exist_logits.device())?
        .to_dtype(exist_logits.dtype())?;
    Ok((bce_with_logits_sum(&targets, exist_logits)? * (1.0 / (1.0 + n_speakers as f64)))?)
}

/// All permutations of 0..n in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn recurse(prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                recurse(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    recurse(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

fn check_pit_sizes(t_len: usize, s_ref: usize, s_hyp: usize) -> Result<()> {
    if s_ref != s_hyp {
        return Err(Error::ShapeMismatch(format!(
            "label columns {s_ref} vs posterior columns {s_hyp}"
        )));
    }
    if s_ref == 0 || t_len == 0 {
        return Err(Error::InvalidArgument("empty matrices in PIT loss".into()));
    }
    if s_ref > MAX_PIT_SPEAKERS {
        return Err(Error::InvalidArgument(format!(
            "exhaustive PIT search is limited to {MAX_PIT_SPEAKERS} speakers, got {s_ref}"
        )));
    }
    Ok(())
}

/// Permutation-invariant diarization loss: minimum over all label-column
/// permutations of the frame-summed BCE, normalized by T*S. Returns the
/// minimizing assignment (label column for each posterior column).
pub fn pit_loss(labels: &LabelMatrix, posteriors: &PosteriorMatrix) -> Result<(f64, Vec<usize>)> {
    let t_len = labels.num_frames();
    check_pit_sizes(t_len, labels.num_speakers(), posteriors.num_speakers())?;
    if posteriors.num_frames() != t_len {
        return Err(Error::ShapeMismatch(format!(
            "label frames {t_len} vs posterior frames {}",
            posteriors.num_frames()
        )));
    }
    let s_len = labels.num_speakers();

    // Column-pair BCE sums; every permutation's loss is a sum of entries.
    let mut cost = vec![vec![0.0f64; s_len]; s_len];
    for (i, row) in cost.iter_mut().enumerate() {
        let y: Vec<f64> = (0..t_len).map(|t| labels.mat().get(t, i) as f64).collect();
        for (j, cell) in row.iter_mut().enumerate() {
            let p: Vec<f64> = (0..t_len).map(|t| posteriors.mat().get(t, j) as f64).collect();
            *cell = bce(&y, &p)?;
        }
    }

    let mut best = f64::INFINITY;
    let mut best_perm = Vec::new();
    for perm in permutations(s_len) {
        let total: f64 = perm.iter().enumerate().map(|(j, &i)| cost[i][j]).sum();
        if total < best {
            best = total;
            best_perm = perm;
        }
    }
    Ok((best / (t_len as f64 * s_len as f64), best_perm))
}

/// Tensor form of the PIT loss over logits; the returned scalar carries
/// gradients through the minimizing permutation only.
pub fn pit_loss_t(labels: &Tensor, logits: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (t_len, s_ref) = labels.dims2()?;
    let (t_hyp, s_hyp) = logits.dims2()?;
    if t_hyp != t_len {
        return Err(Error::ShapeMismatch(format!("label frames {t_len} vs logit frames {t_hyp}")));
    }
    check_pit_sizes(t_len, s_ref, s_hyp)?;
    let s_len = s_ref;

    let mut cost_t: Vec<Vec<Tensor>> = Vec::with_capacity(s_len);
    let mut cost: Vec<Vec<f64>> = Vec::with_capacity(s_len);
    for i in 0..s_len {
        let y = labels.narrow(1, i, 1)?;
        let mut row_t = Vec::with_capacity(s_len);
        let mut row = Vec::with_capacity(s_len);
        for j in 0..s_len {
            let z = logits.narrow(1, j, 1)?;
            let c = bce_with_logits_sum(&y, &z)?;
            row.push(c.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?);
            row_t.push(c);
        }
        cost_t.push(row_t);
        cost.push(row);
    }

    let mut best = f64::INFINITY;
    let mut best_perm = Vec::new();
    for perm in permutations(s_len) {
        let total: f64 = perm.iter().enumerate().map(|(j, &i)| cost[i][j]).sum();
        if total < best {
            best = total;
            best_perm = perm;
        }
    }

    let mut total = cost_t[best_perm[0]][0].clone();
    for (j, &i) in best_perm.iter().enumerate().skip(1) {
        total = total.add(&cost_t[i][j])?;
    }
    let loss = (total * (1.0 / (t_len as f64 * s_len as f64)))?;
    Ok((loss, best_perm))
}

/// Combine the diarization and attractor losses with the mode's weight.
pub fn total_loss(l_d: f64, l_alpha: f64, mode: TrainMode, permutation: Vec<usize>) -> LossBundle {
    let alpha = mode.alpha();
    LossBundle { l_d, l_alpha, alpha, total: l_d + alpha * l_alpha, permutation }
}
