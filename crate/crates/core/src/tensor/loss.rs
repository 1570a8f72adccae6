//! Fused loss kernels. Each returns the loss value together with its gradient
//! with respect to the input, which the graph scales by the upstream gradient.

use super::kernels::log_sum_exp;
use super::Tensor;
use crate::error::{Error, Result};

/// Label-smoothed NLL over `rows` rows of `v` logits. See
/// [`Graph::label_smoothed_nll`](super::Graph::label_smoothed_nll).
#[allow(clippy::too_many_arguments)]
pub fn label_smoothed_nll_value(
    logits: &[f64],
    shape: &[usize],
    rows: usize,
    v: usize,
    targets: &[usize],
    smoothing: f64,
    pad_id: usize,
    normalizer: Option<f64>,
) -> Result<(f64, Vec<f64>)> {
    if targets.len() != rows {
        return Err(Error::Shape(format!(
            "{} targets for logits of shape {:?}",
            targets.len(),
            shape
        )));
    }
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::Contract(format!("label smoothing {smoothing} outside [0, 1)")));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= v && t != pad_id) {
        return Err(Error::Contract(format!("target id {bad} outside vocabulary of {v}")));
    }
    let count = targets.iter().filter(|&&t| t != pad_id).count();
    let norm = normalizer.unwrap_or(count as f64);
    let mut grad = vec![0.0; rows * v];
    if count == 0 || norm == 0.0 {
        return Ok((0.0, grad));
    }
    let mut total = 0.0;
    let uniform = smoothing / v as f64;
    for (r, &t) in targets.iter().enumerate() {
        if t == pad_id {
            continue;
        }
        let row = &logits[r * v..(r + 1) * v];
        let lse = log_sum_exp(row);
        let nll_t = lse - row[t];
        let mean_nll = lse - row.iter().sum::<f64>() / v as f64;
        total += (1.0 - smoothing) * nll_t + smoothing * mean_nll;
        let g = &mut grad[r * v..(r + 1) * v];
        for (j, gj) in g.iter_mut().enumerate() {
            let p = (row[j] - lse).exp();
            let q = if j == t { 1.0 - smoothing + uniform } else { uniform };
            *gj = (p - q) / norm;
        }
    }
    Ok((total / norm, grad))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CtcResult {
    /// `−log Σ_alignments p`; `+inf` when no alignment fits in `T` frames.
    pub loss: f64,
    pub feasible: bool,
    /// d loss / d log_probs, shape [T, V] flattened.
    pub grad: Vec<f64>,
}

/// Fewest frames that can carry `target`: one per label plus a blank between
/// each pair of equal neighbours.
pub fn ctc_min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// CTC loss by the forward-backward recursion over the blank-interleaved target.
pub fn ctc_loss(log_probs: &Tensor, target: &[usize], blank: usize) -> Result<CtcResult> {
    let (t_len, v) = log_probs.dims2()?;
    if blank >= v {
        return Err(Error::Contract(format!("blank id {blank} outside vocabulary of {v}")));
    }
    if let Some(&bad) = target.iter().find(|&&l| l >= v || l == blank) {
        return Err(Error::Contract(format!("invalid CTC label {bad}")));
    }
    let lp = log_probs.data();
    let mut grad = vec![0.0; t_len * v];
    if t_len == 0 || t_len < ctc_min_frames(target) {
        return Ok(CtcResult { loss: f64::INFINITY, feasible: false, grad });
    }

    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(blank);
    for &l in target {
        ext.push(l);
        ext.push(blank);
    }
    let s_len = ext.len();
    let ninf = f64::NEG_INFINITY;
    let can_skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];

    let mut alpha = vec![ninf; t_len * s_len];
    alpha[0] = lp[ext[0]];
    if s_len > 1 {
        alpha[1] = lp[ext[1]];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut terms = [prev[s], ninf, ninf];
            if s >= 1 {
                terms[1] = prev[s - 1];
            }
            if can_skip(s) {
                terms[2] = prev[s - 2];
            }
            alpha[t * s_len + s] = log_sum_exp(&terms) + lp[t * v + ext[s]];
        }
    }

    let mut beta = vec![ninf; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = lp[(t_len - 1) * v + ext[s_len - 1]];
    if s_len > 1 {
        beta[last + s_len - 2] = lp[(t_len - 1) * v + ext[s_len - 2]];
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let next = &beta[(t + 1) * s_len..(t + 2) * s_len];
            let mut terms = [next[s], ninf, ninf];
            if s + 1 < s_len {
                terms[1] = next[s + 1];
            }
            if s + 2 < s_len && can_skip(s + 2) {
                terms[2] = next[s + 2];
            }
            beta[t * s_len + s] = log_sum_exp(&terms) + lp[t * v + ext[s]];
        }
    }

    let tail = &alpha[last..last + s_len];
    let log_p = if s_len > 1 {
        log_sum_exp(&[tail[s_len - 1], tail[s_len - 2]])
    } else {
        tail[0]
    };
    if log_p == ninf {
        return Ok(CtcResult { loss: f64::INFINITY, feasible: false, grad });
    }

    let mut per_label = vec![ninf; v];
    for t in 0..t_len {
        per_label.iter_mut().for_each(|x| *x = ninf);
        for s in 0..s_len {
            let ab = alpha[t * s_len + s] + beta[t * s_len + s];
            let k = ext[s];
            per_label[k] = log_sum_exp(&[per_label[k], ab]);
        }
        for k in 0..v {
            if per_label[k] != ninf {
                grad[t * v + k] = -(per_label[k] - lp[t * v + k] - log_p).exp();
            }
        }
    }
    Ok(CtcResult { loss: -log_p, feasible: true, grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(rows: &[[f64; 3]]) -> Tensor {
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().map(|p| p.ln())).collect();
        Tensor::new(vec![rows.len(), 3], data).unwrap()
    }

    #[test]
    fn single_frame_single_label() {
        let x = lp(&[[0.2, 0.5, 0.3]]);
        let r = ctc_loss(&x, &[1], 0).unwrap();
        assert!((r.loss - -(0.5f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn two_frames_three_paths() {
        let x = lp(&[[0.2, 0.5, 0.3], [0.6, 0.1, 0.3]]);
        let r = ctc_loss(&x, &[1], 0).unwrap();
        let p: f64 = 0.5 * 0.1 + 0.5 * 0.6 + 0.2 * 0.1;
        assert!((r.loss + p.ln()).abs() < 1e-12);
    }

    #[test]
    fn repeat_needs_blank() {
        let x = lp(&[[0.2, 0.5, 0.3], [0.6, 0.1, 0.3], [0.1, 0.7, 0.2]]);
        let r = ctc_loss(&x, &[1, 1], 0).unwrap();
        assert!((r.loss + (0.5f64 * 0.6 * 0.7).ln()).abs() < 1e-12);
        let short = lp(&[[0.2, 0.5, 0.3], [0.6, 0.1, 0.3]]);
        let r = ctc_loss(&short, &[1, 1], 0).unwrap();
        assert!(!r.feasible);
        assert_eq!(r.loss, f64::INFINITY);
        assert_eq!(ctc_min_frames(&[1, 1, 2]), 4);
    }

    #[test]
    fn empty_target_is_all_blank() {
        let x = lp(&[[0.2, 0.5, 0.3], [0.6, 0.1, 0.3]]);
        let r = ctc_loss(&x, &[], 0).unwrap();
        assert!((r.loss + (0.2f64 * 0.6).ln()).abs() < 1e-12);
    }

    #[test]
    fn nll_rejects_out_of_vocab() {
        let e = label_smoothed_nll_value(&[0.0; 3], &[1, 3], 1, 3, &[5], 0.0, 99, None);
        assert!(e.is_err());
        let ok = label_smoothed_nll_value(&[0.0; 3], &[1, 3], 1, 3, &[99], 0.0, 99, None).unwrap();
        assert_eq!(ok.0, 0.0);
    }
}
