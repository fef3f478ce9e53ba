//! Training objective: contrastive representation terms plus classifier
//! terms, evaluated through a linear projection head with analytic gradients.

mod classifier;
mod contrastive;
pub mod gradcheck;
mod optim;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::RunConfig;
use crate::embedding::{dot, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::registry::CategoryId;
use crate::snn::SupportSet;

pub use classifier::{
    labeled_ce, snn_probabilities, unlabeled_consistency, unlabeled_consistency_with_targets, TermGrad,
    UnlabeledTerm,
};
pub use contrastive::{selfcon_loss, supcon_loss};
pub use optim::{cosine_lr, Schedule, Sgd};

/// Linear map followed by normalization: `z = Wᵀh / ‖Wᵀh‖`, `W` of shape `D × D′`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    d: usize,
    out: usize,
    /// Row-major `D × D′`.
    w: Vec<f64>,
}

/// Pre- and post-normalization outputs of one projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Projected {
    pub u: Vec<f64>,
    pub z: Vec<f64>,
    pub norm: f64,
}

impl Projector {
    pub fn new(d: usize, out: usize, weights: Vec<f64>) -> Result<Self> {
        if out < 2 || d < 1 {
            return Err(Error::Config(format!("projector shape {d}x{out} is invalid")));
        }
        if weights.len() != d * out || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("projector weights must be finite and match the shape".into()));
        }
        Ok(Projector { d, out, w: weights })
    }

    /// Gaussian initialization with entries of variance `1/D`.
    pub fn random(d: usize, out: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let scale = 1.0 / (d as f64).sqrt();
        let w = (0..d * out).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect();
        Projector::new(d, out, w)
    }

    pub fn in_dim(&self) -> usize {
        self.d
    }

    pub fn out_dim(&self) -> usize {
        self.out
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.w
    }

    pub fn forward(&self, h: &[f64]) -> Projected {
        let mut u = vec![0.0; self.out];
        for (i, &hi) in h.iter().enumerate() {
            let row = &self.w[i * self.out..(i + 1) * self.out];
            u.iter_mut().zip(row).for_each(|(uj, wij)| *uj += hi * wij);
        }
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let z = if norm > 0.0 { u.iter().map(|x| x / norm).collect() } else { u.clone() };
        Projected { u, z, norm }
    }

    pub fn project(&self, h: &[f64]) -> Vec<f64> {
        self.forward(h).z
    }

    pub fn project_rows(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|h| self.project(h)).collect()
    }

    /// Adds `∂L/∂W` for one input given `∂L/∂z`.
    fn accumulate(&self, h: &[f64], p: &Projected, dz: &[f64], grad: &mut [f64]) {
        if p.norm == 0.0 {
            return;
        }
        let radial = dot(dz, &p.z);
        let du: Vec<f64> = dz.iter().zip(&p.z).map(|(g, z)| (g - radial * z) / p.norm).collect();
        for (i, &hi) in h.iter().enumerate() {
            if hi == 0.0 {
                continue;
            }
            let row = &mut grad[i * self.out..(i + 1) * self.out];
            row.iter_mut().zip(&du).for_each(|(g, d)| *g += hi * d);
        }
    }

    /// Weights rounded to single precision, for storage.
    pub fn to_matrix(&self) -> Result<EmbeddingMatrix> {
        EmbeddingMatrix::new(self.d, self.out, self.w.iter().map(|&v| v as f32).collect())
    }

    pub fn from_matrix(m: &EmbeddingMatrix) -> Result<Self> {
        Projector::new(m.n(), m.d(), m.data().iter().map(|&v| v as f64).collect())
    }
}

/// One optimization batch of raw embeddings, two perturbed views per sample.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub labeled_a: Vec<Vec<f64>>,
    pub labeled_b: Vec<Vec<f64>>,
    pub labels: Vec<CategoryId>,
    pub unlabeled_a: Vec<Vec<f64>>,
    pub unlabeled_b: Vec<Vec<f64>>,
}

/// Support entries as the classifier terms see them: raw features, the
/// ascending class list and each entry's class position.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierSupport {
    pub rows: Vec<Vec<f64>>,
    pub classes: Vec<CategoryId>,
    pub positions: Vec<usize>,
}

impl ClassifierSupport {
    /// Groups entries by `resolve(label)`.
    pub fn from_support(support: &SupportSet, resolve: impl Fn(CategoryId) -> CategoryId) -> Self {
        let labels: Vec<CategoryId> = support.entries().iter().map(|e| resolve(e.label)).collect();
        let mut classes = labels.clone();
        classes.sort();
        classes.dedup();
        let positions = labels.iter().map(|l| classes.binary_search(l).unwrap()).collect();
        let rows = support
            .entries()
            .iter()
            .map(|e| e.embedding.iter().map(|&x| x as f64).collect())
            .collect();
        ClassifierSupport {
            rows,
            classes,
            positions,
        }
    }

    pub fn position(&self, label: CategoryId) -> Result<usize> {
        self.classes
            .binary_search(&label)
            .map_err(|_| Error::State(format!("category {label} has no support entries")))
    }
}

/// Both classifier terms on already projected features.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierLosses {
    pub labeled: TermGrad,
    pub grad_labeled: Vec<Vec<f64>>,
    pub unlabeled: UnlabeledTerm,
}

pub fn classifier_losses(
    z_labeled: &[Vec<f64>],
    label_pos: &[usize],
    z_unlabeled_a: &[Vec<f64>],
    z_unlabeled_b: &[Vec<f64>],
    z_support: &[Vec<f64>],
    support_pos: &[usize],
    classes: usize,
    config: &RunConfig,
) -> Result<ClassifierLosses> {
    let (labeled, grad_labeled) = labeled_ce(z_labeled, label_pos, z_support, support_pos, classes, config.tau_snn)?;
    let unlabeled = unlabeled_consistency(
        z_unlabeled_a,
        z_unlabeled_b,
        z_support,
        support_pos,
        classes,
        config.tau_snn,
        config.tau_sharp,
        config.epsilon,
    )?;
    Ok(ClassifierLosses {
        labeled,
        grad_labeled,
        unlabeled,
    })
}

/// Individual loss values; `None` when the term's half of the batch is empty.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTerms {
    pub supcon: Option<f64>,
    pub selfcon: Option<f64>,
    pub labeled_ce: Option<f64>,
    pub unlabeled: Option<f64>,
    pub entropy: Option<f64>,
    pub skipped_anchors: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub total: f64,
    pub terms: LossTerms,
    /// `∂total/∂W`, laid out like [`Projector::weights`].
    pub grad: Vec<f64>,
}

/// Term weights `(supcon, selfcon, labeled, unlabeled)`. A term whose half of
/// the batch is empty gets weight zero and its partner takes the full weight.
pub fn term_weights(has_labeled: bool, has_unlabeled: bool, config: &RunConfig) -> (f64, f64, f64, f64) {
    match (has_labeled, has_unlabeled) {
        (true, true) => (
            config.lambda_rep,
            1.0 - config.lambda_rep,
            config.lambda_cls,
            1.0 - config.lambda_cls,
        ),
        (true, false) => (1.0, 0.0, 1.0, 0.0),
        (false, true) => (0.0, 1.0, 0.0, 1.0),
        (false, false) => (0.0, 0.0, 0.0, 0.0),
    }
}

fn scaled_add(acc: &mut [Vec<f64>], weight: f64, g: &[Vec<f64>]) {
    for (a, gi) in acc.iter_mut().zip(g) {
        a.iter_mut().zip(gi).for_each(|(x, y)| *x += weight * y);
    }
}

/// Full objective and its gradient with respect to the projector weights.
/// Supports pass through the projector too and receive gradient.
pub fn total_loss(batch: &Batch, support: &ClassifierSupport, projector: &Projector, config: &RunConfig) -> Result<LossOutput> {
    total_loss_impl(batch, support, projector, config, None)
}

/// [`total_loss`] with the consistency targets computed by `target_projector`
/// and treated as constants. At `target_projector == projector` value and
/// gradient coincide with [`total_loss`], which makes the stop-gradient on the
/// targets checkable by finite differences.
pub fn total_loss_frozen_targets(
    batch: &Batch,
    support: &ClassifierSupport,
    projector: &Projector,
    target_projector: &Projector,
    config: &RunConfig,
) -> Result<LossOutput> {
    total_loss_impl(batch, support, projector, config, Some(target_projector))
}

fn total_loss_impl(
    batch: &Batch,
    support: &ClassifierSupport,
    projector: &Projector,
    config: &RunConfig,
    target_projector: Option<&Projector>,
) -> Result<LossOutput> {
    let nl = batch.labeled_a.len();
    let nu = batch.unlabeled_a.len();
    if batch.labeled_b.len() != nl || batch.labels.len() != nl || batch.unlabeled_b.len() != nu {
        return Err(Error::Argument("batch views are not index-aligned".into()));
    }
    if nl + nu == 0 {
        return Err(Error::DegenerateBatch("empty batch".into()));
    }
    let (w_sup, w_self, w_ll, w_lu) = term_weights(nl > 0, nu > 0, config);
    let fwd = |rows: &[Vec<f64>]| -> Vec<Projected> { rows.iter().map(|h| projector.forward(h)).collect() };
    let (pla, plb, pua, pub_, ps) = (
        fwd(&batch.labeled_a),
        fwd(&batch.labeled_b),
        fwd(&batch.unlabeled_a),
        fwd(&batch.unlabeled_b),
        fwd(&support.rows),
    );
    let zs = |p: &[Projected]| -> Vec<Vec<f64>> { p.iter().map(|x| x.z.clone()).collect() };
    let (zla, zlb, zua, zub, zsup) = (zs(&pla), zs(&plb), zs(&pua), zs(&pub_), zs(&ps));
    let zero = |n: usize| vec![vec![0.0; projector.out]; n];
    let (mut gla, mut glb, mut gua, mut gub, mut gs) = (zero(nl), zero(nl), zero(nu), zero(nu), zero(zsup.len()));
    let mut terms = LossTerms::default();
    let mut total = 0.0;
    let k = support.classes.len();

    if nl > 0 {
        let both: Vec<Vec<f64>> = zla.iter().chain(&zlb).cloned().collect();
        let labels: Vec<CategoryId> = batch.labels.iter().chain(&batch.labels).copied().collect();
        let (l, g, skipped) = supcon_loss(&both, &labels, config.tau_c)?;
        scaled_add(&mut gla, w_sup, &g[..nl]);
        scaled_add(&mut glb, w_sup, &g[nl..]);
        terms.supcon = Some(l);
        terms.skipped_anchors = skipped;
        total += w_sup * l;

        let pos = batch.labels.iter().map(|&c| support.position(c)).collect::<Result<Vec<_>>>()?;
        let (t, gq) = labeled_ce(&zla, &pos, &zsup, &support.positions, k, config.tau_snn)?;
        scaled_add(&mut gla, w_ll, &gq);
        scaled_add(&mut gs, w_ll, &t.grad_support);
        terms.labeled_ce = Some(t.loss);
        total += w_ll * t.loss;
    }
    if nu > 0 {
        let (l, ga, gb) = selfcon_loss(&zua, &zub, config.tau_u)?;
        scaled_add(&mut gua, w_self, &ga);
        scaled_add(&mut gub, w_self, &gb);
        terms.selfcon = Some(l);
        total += w_self * l;

        let frozen = target_projector.map(|tp| {
            let zs_t = tp.project_rows(&support.rows);
            tp.project_rows(&batch.unlabeled_a)
                .iter()
                .map(|z| snn_probabilities(z, &zs_t, &support.positions, k, config.tau_sharp))
                .collect::<Vec<_>>()
        });
        let t = unlabeled_consistency_with_targets(
            &zua,
            &zub,
            &zsup,
            &support.positions,
            k,
            config.tau_snn,
            config.tau_sharp,
            config.epsilon,
            frozen.as_deref(),
        )?;
        scaled_add(&mut gua, w_lu, &t.grad_a);
        scaled_add(&mut gub, w_lu, &t.grad_b);
        scaled_add(&mut gs, w_lu, &t.grad_support);
        terms.unlabeled = Some(t.loss);
        terms.entropy = Some(t.entropy);
        total += w_lu * t.loss;
    }

    let mut grad = vec![0.0; projector.w.len()];
    let groups: [(&[Vec<f64>], &[Projected], &[Vec<f64>]); 5] = [
        (&batch.labeled_a, &pla, &gla),
        (&batch.labeled_b, &plb, &glb),
        (&batch.unlabeled_a, &pua, &gua),
        (&batch.unlabeled_b, &pub_, &gub),
        (&support.rows, &ps, &gs),
    ];
    for (hs, ps, gz) in groups {
        for ((h, p), g) in hs.iter().zip(ps).zip(gz) {
            projector.accumulate(h, p, g, &mut grad);
        }
    }
    Ok(LossOutput { total, terms, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::CategoryId;
    use crate::rng::{stream, Stream};
    use gradcheck::check_gradient;

    fn rand_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect()
    }

    fn fixture(seed: u64) -> (Batch, ClassifierSupport, Projector) {
        let mut rng = stream(seed, Stream::Init);
        let d = 6;
        let labels: Vec<CategoryId> = (0..4).map(|i| CategoryId(i % 2)).collect();
        let la = rand_rows(&mut rng, 4, d);
        let lb = la.iter().map(|r| r.iter().map(|x| x + 0.1).collect()).collect();
        let ua = rand_rows(&mut rng, 4, d);
        let ub = ua.iter().map(|r| r.iter().map(|x| x - 0.1).collect()).collect();
        let support = ClassifierSupport {
            rows: rand_rows(&mut rng, 5, d),
            classes: vec![CategoryId(0), CategoryId(1), CategoryId(2)],
            positions: vec![0, 0, 1, 2, 2],
        };
        let batch = Batch {
            labeled_a: la,
            labeled_b: lb,
            labels,
            unlabeled_a: ua,
            unlabeled_b: ub,
        };
        (batch, support, Projector::random(d, 4, &mut rng).unwrap())
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let cfg = RunConfig {
            tau_snn: 0.5,
            tau_sharp: 0.3,
            tau_u: 0.5,
            tau_c: 0.5,
            ..RunConfig::default()
        };
        for seed in 0..5 {
            let (batch, support, proj) = fixture(seed);
            let out = total_loss(&batch, &support, &proj, &cfg).unwrap();
            let f = |w: &[f64]| {
                let p = Projector::new(6, 4, w.to_vec()).unwrap();
                total_loss_frozen_targets(&batch, &support, &p, &proj, &cfg).unwrap().total
            };
            let same = total_loss_frozen_targets(&batch, &support, &proj, &proj, &cfg).unwrap();
            assert_eq!(same.total, out.total);
            let err = check_gradient(f, proj.weights(), &out.grad, 1e-5);
            assert!(err < 1e-4, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn full_weights_collapse_to_supervised_terms() {
        let cfg = RunConfig {
            lambda_rep: 1.0,
            lambda_cls: 1.0,
            ..RunConfig::default()
        };
        let (batch, support, proj) = fixture(1);
        let out = total_loss(&batch, &support, &proj, &cfg).unwrap();
        let t = &out.terms;
        assert_eq!(out.total, t.supcon.unwrap() + t.labeled_ce.unwrap());
    }

    #[test]
    fn empty_labeled_half_renormalizes_onto_unsupervised_terms() {
        let (mut batch, support, proj) = fixture(2);
        batch.labeled_a.clear();
        batch.labeled_b.clear();
        batch.labels.clear();
        let out = total_loss(&batch, &support, &proj, &RunConfig::default()).unwrap();
        assert!(out.terms.supcon.is_none() && out.terms.labeled_ce.is_none());
        assert!((out.total - out.terms.selfcon.unwrap() - out.terms.unlabeled.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn small_step_descends() {
        let cfg = RunConfig::default();
        let (batch, support, mut proj) = fixture(3);
        let before = total_loss(&batch, &support, &proj, &cfg).unwrap();
        let mut opt = Sgd::new(1e-3, 0.0, 0.0, Schedule::Constant).unwrap();
        opt.step(proj.weights_mut(), &before.grad).unwrap();
        let after = total_loss(&batch, &support, &proj, &cfg).unwrap();
        assert!(after.total < before.total);
    }

    #[test]
    fn projector_matrix_round_trip_is_single_precision() {
        let (_, _, proj) = fixture(4);
        let back = Projector::from_matrix(&proj.to_matrix().unwrap()).unwrap();
        for (a, b) in proj.weights().iter().zip(back.weights()) {
            assert!((a - b).abs() <= a.abs() * 1e-7);
        }
    }

    #[test]
    fn sample_order_does_not_change_losses() {
        let cfg = RunConfig::default();
        let (batch, support, proj) = fixture(5);
        let mut rev = batch.clone();
        rev.labeled_a.reverse();
        rev.labeled_b.reverse();
        rev.labels.reverse();
        rev.unlabeled_a.reverse();
        rev.unlabeled_b.reverse();
        let a = total_loss(&batch, &support, &proj, &cfg).unwrap();
        let b = total_loss(&rev, &support, &proj, &cfg).unwrap();
        assert!((a.total - b.total).abs() < 1e-12);
    }
}
