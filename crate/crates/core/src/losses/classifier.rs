//! Cross-entropy and consistency losses of the soft nearest-neighbor
//! classifier, differentiated with respect to both queries and supports.

use crate::embedding::dot;
use crate::error::{Error, Result};

use super::contrastive::log_sum_exp;

/// Forward pass of the classifier for one query.
struct SnnForward {
    /// Softmax weight of each support entry.
    w: Vec<f64>,
    /// Log-probability of each class.
    log_p: Vec<f64>,
    /// Per-class log-sum-exp of logits.
    lse_class: Vec<f64>,
    logits: Vec<f64>,
}

fn forward(z: &[f64], zs: &[Vec<f64>], pos: &[usize], k: usize, tau: f64) -> SnnForward {
    let logits: Vec<f64> = zs.iter().map(|s| dot(z, s) / tau).collect();
    let lse = log_sum_exp(logits.iter().copied());
    let w = logits.iter().map(|a| (a - lse).exp()).collect();
    let lse_class: Vec<f64> = (0..k)
        .map(|c| log_sum_exp(logits.iter().zip(pos).filter(|(_, &p)| p == c).map(|(a, _)| *a)))
        .collect();
    let log_p = lse_class.iter().map(|l| l - lse).collect();
    SnnForward {
        w,
        log_p,
        lse_class,
        logits,
    }
}

impl SnnForward {
    fn probs(&self) -> Vec<f64> {
        self.log_p.iter().map(|l| l.exp()).collect()
    }
}

/// Class probabilities of one projected query.
pub fn snn_probabilities(z: &[f64], zs: &[Vec<f64>], pos: &[usize], k: usize, tau: f64) -> Vec<f64> {
    forward(z, zs, pos, k, tau).probs()
}

/// Pushes logit gradients `da` back to the query and the supports.
fn backward(z: &[f64], zs: &[Vec<f64>], da: &[f64], tau: f64, gz: &mut [f64], gs: &mut [Vec<f64>]) {
    for (k, &d) in da.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let scale = d / tau;
        gz.iter_mut().zip(&zs[k]).for_each(|(g, s)| *g += scale * s);
        gs[k].iter_mut().zip(z).for_each(|(g, q)| *g += scale * q);
    }
}

/// Gradient of the logits given `g = dL/dp`.
fn logit_grad(f: &SnnForward, pos: &[usize], g: &[f64]) -> Vec<f64> {
    let pg: f64 = f.probs().iter().zip(g).map(|(p, gc)| p * gc).sum();
    f.w.iter().zip(pos).map(|(w, &c)| w * (g[c] - pg)).collect()
}

fn check_support(zs: &[Vec<f64>], pos: &[usize], k: usize) -> Result<()> {
    if zs.is_empty() {
        return Err(Error::State("classifier loss with an empty support set".into()));
    }
    if zs.len() != pos.len() || pos.iter().any(|&p| p >= k) {
        return Err(Error::Argument("support class positions are inconsistent".into()));
    }
    Ok(())
}

/// Gradients of one classifier term.
#[derive(Debug, Clone, PartialEq)]
pub struct TermGrad {
    pub loss: f64,
    pub grad_support: Vec<Vec<f64>>,
}

/// Mean cross-entropy of labeled queries against their classes. Returns the
/// term and the query gradients.
pub fn labeled_ce(
    zl: &[Vec<f64>],
    label_pos: &[usize],
    zs: &[Vec<f64>],
    support_pos: &[usize],
    k: usize,
    tau: f64,
) -> Result<(TermGrad, Vec<Vec<f64>>)> {
    check_support(zs, support_pos, k)?;
    let b = zl.len();
    let mut gq: Vec<Vec<f64>> = zl.iter().map(|z| vec![0.0; z.len()]).collect();
    let mut gs: Vec<Vec<f64>> = zs.iter().map(|s| vec![0.0; s.len()]).collect();
    if b == 0 {
        return Ok((TermGrad { loss: 0.0, grad_support: gs }, gq));
    }
    if label_pos.len() != b || label_pos.iter().any(|&y| y >= k) {
        return Err(Error::Argument("labeled classes are inconsistent with the support".into()));
    }
    let mut loss = 0.0;
    for i in 0..b {
        let f = forward(&zl[i], zs, support_pos, k, tau);
        let y = label_pos[i];
        loss -= f.log_p[y];
        let da: Vec<f64> = f
            .w
            .iter()
            .zip(support_pos)
            .zip(&f.logits)
            .map(|((w, &c), a)| {
                let own = if c == y { (a - f.lse_class[y]).exp() } else { 0.0 };
                (w - own) / b as f64
            })
            .collect();
        backward(&zl[i], zs, &da, tau, &mut gq[i], &mut gs);
    }
    Ok((
        TermGrad {
            loss: loss / b as f64,
            grad_support: gs,
        },
        gq,
    ))
}

/// Consistency term on unlabeled views with its entropy regularizer.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledTerm {
    /// Cross-entropy minus `epsilon` times the entropy.
    pub loss: f64,
    pub cross_entropy: f64,
    /// Entropy of the batch-mean prediction.
    pub entropy: f64,
    pub grad_a: Vec<Vec<f64>>,
    pub grad_b: Vec<Vec<f64>>,
    pub grad_support: Vec<Vec<f64>>,
}

/// Targets come from view `a` at `tau_sharp` and are held constant in the
/// cross-entropy; predictions come from view `b` at `tau`. The entropy of the
/// mean of all targets and predictions is differentiated through both.
pub fn unlabeled_consistency(
    za: &[Vec<f64>],
    zb: &[Vec<f64>],
    zs: &[Vec<f64>],
    support_pos: &[usize],
    k: usize,
    tau: f64,
    tau_sharp: f64,
    epsilon: f64,
) -> Result<UnlabeledTerm> {
    unlabeled_consistency_with_targets(za, zb, zs, support_pos, k, tau, tau_sharp, epsilon, None)
}

/// [`unlabeled_consistency`] with the cross-entropy targets supplied from
/// outside. With targets equal to the ones computed internally this gives the
/// same value and gradient; finite-difference checks use it to freeze them.
#[allow(clippy::too_many_arguments)]
pub fn unlabeled_consistency_with_targets(
    za: &[Vec<f64>],
    zb: &[Vec<f64>],
    zs: &[Vec<f64>],
    support_pos: &[usize],
    k: usize,
    tau: f64,
    tau_sharp: f64,
    epsilon: f64,
    ce_targets: Option<&[Vec<f64>]>,
) -> Result<UnlabeledTerm> {
    check_support(zs, support_pos, k)?;
    if ce_targets.is_some_and(|t| t.len() != za.len() || t.iter().any(|r| r.len() != k)) {
        return Err(Error::Argument("fixed targets do not match the batch".into()));
    }
    let b = za.len();
    if zb.len() != b {
        return Err(Error::Argument("view batches differ in size".into()));
    }
    let mut ga: Vec<Vec<f64>> = za.iter().map(|z| vec![0.0; z.len()]).collect();
    let mut gb: Vec<Vec<f64>> = zb.iter().map(|z| vec![0.0; z.len()]).collect();
    let mut gs: Vec<Vec<f64>> = zs.iter().map(|s| vec![0.0; s.len()]).collect();
    if b == 0 {
        return Ok(UnlabeledTerm {
            loss: 0.0,
            cross_entropy: 0.0,
            entropy: 0.0,
            grad_a: ga,
            grad_b: gb,
            grad_support: gs,
        });
    }
    let bf = b as f64;
    let targets: Vec<SnnForward> = za.iter().map(|z| forward(z, zs, support_pos, k, tau_sharp)).collect();
    let preds: Vec<SnnForward> = zb.iter().map(|z| forward(z, zs, support_pos, k, tau)).collect();

    let mut mean = vec![0.0; k];
    for f in targets.iter().chain(&preds) {
        mean.iter_mut().zip(f.probs()).for_each(|(m, p)| *m += p / (2.0 * bf));
    }
    let entropy: f64 = -mean.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
    // d(-epsilon * H)/dp for every target and prediction.
    let g_entropy: Vec<f64> = mean
        .iter()
        .map(|&p| if p > 0.0 { epsilon * (p.ln() + 1.0) / (2.0 * bf) } else { 0.0 })
        .collect();

    let mut ce = 0.0;
    for i in 0..b {
        let target = match ce_targets {
            Some(t) => t[i].clone(),
            None => targets[i].probs(),
        };
        let pred = &preds[i];
        ce -= target
            .iter()
            .zip(&pred.log_p)
            .filter(|(t, _)| **t > 0.0)
            .map(|(t, l)| t * l)
            .sum::<f64>();
        let mut da_b: Vec<f64> = pred
            .w
            .iter()
            .zip(support_pos)
            .zip(&pred.logits)
            .map(|((w, &c), a)| (w - target[c] * (a - pred.lse_class[c]).exp()) / bf)
            .collect();
        logit_grad(pred, support_pos, &g_entropy)
            .iter()
            .zip(da_b.iter_mut())
            .for_each(|(e, d)| *d += e);
        backward(&zb[i], zs, &da_b, tau, &mut gb[i], &mut gs);
        let da_a = logit_grad(&targets[i], support_pos, &g_entropy);
        backward(&za[i], zs, &da_a, tau_sharp, &mut ga[i], &mut gs);
    }
    let cross_entropy = ce / bf;
    Ok(UnlabeledTerm {
        loss: cross_entropy - epsilon * entropy,
        cross_entropy,
        entropy,
        grad_a: ga,
        grad_b: gb,
        grad_support: gs,
    })
}
