//! Self-supervised and supervised contrastive losses on projected features.

use crate::embedding::dot;
use crate::error::{Error, Result};

pub(crate) fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn zeros_like(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter().map(|r| vec![0.0; r.len()]).collect()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

/// Value and gradients of the view-matching loss
/// `(1/B) Σ_i [-s_ii + log Σ_n exp(s_in)]` with `s_in = za_i·zb_n / tau`.
/// The positive pair is part of the denominator.
pub fn selfcon_loss(za: &[Vec<f64>], zb: &[Vec<f64>], tau: f64) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let b = za.len();
    if b < 2 {
        return Err(Error::Argument(format!("self-supervised contrast needs at least 2 samples, got {b}")));
    }
    if zb.len() != b {
        return Err(Error::Argument("view batches differ in size".into()));
    }
    let mut ga = zeros_like(za);
    let mut gb = zeros_like(zb);
    let mut loss = 0.0;
    for i in 0..b {
        let s: Vec<f64> = zb.iter().map(|z| dot(&za[i], z) / tau).collect();
        let lse = log_sum_exp(s.iter().copied());
        loss += lse - s[i];
        for n in 0..b {
            let ds = ((s[n] - lse).exp() - if n == i { 1.0 } else { 0.0 }) / b as f64;
            axpy(&mut ga[i], ds / tau, &zb[n]);
            axpy(&mut gb[n], ds / tau, &za[i]);
        }
    }
    Ok((loss / b as f64, ga, gb))
}

/// Supervised contrastive loss and gradient. For each anchor with at least one
/// same-label partner, `-(1/|M_i|) Σ_{q∈M_i} s_iq + log Σ_{n≠i} exp(s_in)`,
/// averaged over those anchors. Also returns the number of anchors skipped
/// for lack of a partner.
pub fn supcon_loss<L: PartialEq>(z: &[Vec<f64>], labels: &[L], tau: f64) -> Result<(f64, Vec<Vec<f64>>, usize)> {
    let b = z.len();
    if labels.len() != b {
        return Err(Error::Argument("labels and features differ in length".into()));
    }
    let valid: Vec<usize> = (0..b)
        .filter(|&i| (0..b).any(|q| q != i && labels[q] == labels[i]))
        .collect();
    if valid.is_empty() {
        return Err(Error::DegenerateBatch("no sample has a same-label partner".into()));
    }
    let v = valid.len() as f64;
    let mut g = zeros_like(z);
    let mut loss = 0.0;
    for &i in &valid {
        let s: Vec<f64> = z.iter().map(|zn| dot(&z[i], zn) / tau).collect();
        let lse = log_sum_exp((0..b).filter(|&n| n != i).map(|n| s[n]));
        let m = (0..b).filter(|&q| q != i && labels[q] == labels[i]).count() as f64;
        let pos: f64 = (0..b).filter(|&q| q != i && labels[q] == labels[i]).map(|q| s[q]).sum();
        loss += lse - pos / m;
        for n in (0..b).filter(|&n| n != i) {
            let positive = if labels[n] == labels[i] { 1.0 / m } else { 0.0 };
            let ds = ((s[n] - lse).exp() - positive) / v / tau;
            let (zi, zn) = (z[i].clone(), z[n].clone());
            axpy(&mut g[i], ds, &zn);
            axpy(&mut g[n], ds, &zi);
        }
    }
    Ok((loss / v, g, b - valid.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(i: usize, d: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    #[test]
    fn orthogonal_negatives_closed_form() {
        let z: Vec<Vec<f64>> = (0..3).map(|i| e(i, 3)).collect();
        let (loss, _, _) = selfcon_loss(&z, &z, 1.0).unwrap();
        let want = -(1f64.exp() / (1f64.exp() + 2.0)).ln();
        assert!((loss - want).abs() < 1e-12);
    }

    #[test]
    fn two_sample_direct_transcription() {
        let za = vec![vec![0.6, 0.8], vec![-0.8, 0.6]];
        let zb = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let tau = 0.5;
        let (loss, _, _) = selfcon_loss(&za, &zb, tau).unwrap();
        let mut want = 0.0;
        for i in 0..2 {
            let num = (dot(&za[i], &zb[i]) / tau).exp();
            let den: f64 = (0..2).map(|n| (dot(&za[i], &zb[n]) / tau).exp()).sum();
            want += -(num / den).ln();
        }
        assert!((loss - want / 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_sample_batch_is_rejected() {
        assert!(selfcon_loss(&[e(0, 2)], &[e(0, 2)], 0.1).is_err());
    }

    #[test]
    fn identical_embeddings_give_log_of_candidates() {
        let z = vec![vec![0.0, 1.0]; 6];
        let (loss, _, skipped) = supcon_loss(&z, &[7; 6], 1.0).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
        assert_eq!(skipped, 0);
    }

    #[test]
    fn single_pair_reduces_to_one_positive() {
        let z = vec![vec![0.6, 0.8], vec![1.0, 0.0], vec![0.0, 1.0], vec![-0.6, 0.8]];
        let labels = [0, 0, 1, 2];
        let (loss, _, skipped) = supcon_loss(&z, &labels, 0.3).unwrap();
        assert_eq!(skipped, 2);
        let term = |i: usize, p: usize| {
            let s: Vec<f64> = z.iter().map(|zn| dot(&z[i], zn) / 0.3).collect();
            let den: f64 = (0..4).filter(|&n| n != i).map(|n| s[n].exp()).sum();
            -(s[p].exp() / den).ln()
        };
        assert!((loss - (term(0, 1) + term(1, 0)) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn no_partners_is_degenerate() {
        let z = vec![e(0, 2), e(1, 2)];
        assert_eq!(supcon_loss(&z, &[0, 1], 0.1).unwrap_err().exit_code(), 4);
    }

    fn flat(rows: &[Vec<f64>]) -> Vec<f64> {
        rows.concat()
    }

    fn rows(x: &[f64], d: usize) -> Vec<Vec<f64>> {
        x.chunks(d).map(|c| c.to_vec()).collect()
    }

    fn sample(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
        use rand::Rng;
        let mut rng = crate::rng::stream(seed, crate::rng::Stream::Init);
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn selfcon_gradient_matches_finite_differences() {
        use crate::losses::gradcheck::check_gradient;
        let (za, zb) = (sample(1, 5, 3), sample(2, 5, 3));
        let (_, ga, gb) = selfcon_loss(&za, &zb, 0.5).unwrap();
        let fa = |x: &[f64]| selfcon_loss(&rows(x, 3), &zb, 0.5).unwrap().0;
        assert!(check_gradient(fa, &flat(&za), &flat(&ga), 1e-5) < 1e-6);
        let fb = |x: &[f64]| selfcon_loss(&za, &rows(x, 3), 0.5).unwrap().0;
        assert!(check_gradient(fb, &flat(&zb), &flat(&gb), 1e-5) < 1e-6);
    }

    #[test]
    fn supcon_gradient_matches_finite_differences() {
        use crate::losses::gradcheck::check_gradient;
        let z = sample(3, 6, 3);
        let labels = [0, 0, 1, 1, 1, 2];
        let (_, g, _) = supcon_loss(&z, &labels, 0.5).unwrap();
        let f = |x: &[f64]| supcon_loss(&rows(x, 3), &labels, 0.5).unwrap().0;
        assert!(check_gradient(f, &flat(&z), &flat(&g), 1e-5) < 1e-6);
    }
}
