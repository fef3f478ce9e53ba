//! Central finite-difference comparison for analytic gradients.

/// Central differences of `f` at `x` with step `h`.
pub fn numerical_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central differences refined by Richardson extrapolation (Ridders'
/// method): starting from step `h`, the step shrinks by 1.4 per round and
/// the estimate with the smallest extrapolation error is kept.
pub fn ridders_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    const CON: f64 = 1.4;
    const ROUNDS: usize = 10;
    let mut probe = x.to_vec();
    let mut central = |i: usize, step: f64| {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = f(&probe);
        probe[i] = orig - step;
        let down = f(&probe);
        probe[i] = orig;
        (up - down) / (2.0 * step)
    };
    (0..x.len())
        .map(|i| {
            let mut table = vec![vec![0.0; ROUNDS]; ROUNDS];
            let mut step = h;
            table[0][0] = central(i, step);
            let mut best = table[0][0];
            let mut err = f64::INFINITY;
            for r in 1..ROUNDS {
                step /= CON;
                table[0][r] = central(i, step);
                let mut fac = CON * CON;
                for j in 1..=r {
                    table[j][r] = (table[j - 1][r] * fac - table[j - 1][r - 1]) / (fac - 1.0);
                    fac *= CON * CON;
                    let e = (table[j][r] - table[j - 1][r]).abs().max((table[j][r] - table[j - 1][r - 1]).abs());
                    if e <= err {
                        err = e;
                        best = table[j][r];
                    }
                }
                if (table[r][r] - table[r - 1][r - 1]).abs() >= 2.0 * err {
                    break;
                }
            }
            best
        })
        .collect()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, or the absolute error when both are tiny.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-10 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Relative error between `analytic` and central differences of `f`.
pub fn check_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64], h: f64) -> f64 {
    relative_error(analytic, &numerical_gradient(f, x, h))
}
