//! Finite-difference check of the full training objective with respect to the
//! projector weights.

use igcd::losses::gradcheck::{numerical_gradient, relative_error, ridders_gradient};
use igcd::losses::{selfcon_loss, total_loss, total_loss_frozen_targets, Batch, ClassifierSupport, Projector};
use igcd::rng::{stream, Stream};
use igcd::snn::SupportSet;
use igcd::{CategoryId, RunConfig};
use rand::Rng;

fn unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn main() -> igcd::Result<()> {
    let (d, out) = (6, 4);
    let cfg = RunConfig::default();
    let mut rng = stream(7, Stream::Init);
    let rows = |rng: &mut _, n| (0..n).map(|_| unit(rng, d)).collect::<Vec<_>>();

    let batch = Batch {
        labeled_a: rows(&mut rng, 4),
        labeled_b: rows(&mut rng, 4),
        labels: [0, 1, 0, 1].map(CategoryId).to_vec(),
        unlabeled_a: rows(&mut rng, 4),
        unlabeled_b: rows(&mut rng, 4),
    };
    let entries = rows(&mut rng, 4)
        .into_iter()
        .enumerate()
        .map(|(i, r)| (r.iter().map(|&x| x as f32).collect(), CategoryId(i as u32 % 2)))
        .collect();
    let support = ClassifierSupport::from_support(&SupportSet::from_entries(d, 2, entries)?, |c| c);
    let proj = Projector::random(d, out, &mut rng)?;

    // The consistency targets carry no gradient, so the finite-difference
    // probe holds them fixed at the current weights.
    let analytic = total_loss(&batch, &support, &proj, &cfg)?;
    let f = |w: &[f64]| {
        let p = Projector::new(d, out, w.to_vec()).unwrap();
        total_loss_frozen_targets(&batch, &support, &p, &proj, &cfg).unwrap().total
    };
    println!("total = {:.6}", analytic.total);
    println!("terms = {:?}", analytic.terms);
    let numeric = ridders_gradient(f, proj.weights(), 1e-2);
    println!("relative error = {:.2e}", relative_error(&analytic.grad, &numeric));

    // A single term on raw features.
    let (za, zb) = (batch.unlabeled_a.clone(), batch.unlabeled_b.clone());
    let (_, ga, _) = selfcon_loss(&za, &zb, cfg.tau_u)?;
    let flat: Vec<f64> = za.concat();
    let num = numerical_gradient(
        |x| selfcon_loss(&x.chunks(d).map(<[f64]>::to_vec).collect::<Vec<_>>(), &zb, cfg.tau_u).unwrap().0,
        &flat,
        1e-5,
    );
    println!("selfcon central differences: {:.2e}", relative_error(&ga.concat(), &num));
    Ok(())
}
