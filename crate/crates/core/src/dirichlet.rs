//! Dirichlet draws via normalized gamma variates.
//!
//! Shapes below 1 are drawn in log space using
//! `Gamma(a) = Gamma(a + 1) * U^(1/a)` so tiny concentrations do not
//! underflow to an all-zero vector.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

/// Natural log of a Gamma(shape, 1) variate.
pub fn ln_gamma_variate<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    debug_assert!(shape > 0.0);
    if shape >= 1.0 {
        let g: f64 = Gamma::new(shape, 1.0).expect("positive shape").sample(rng);
        g.ln()
    } else {
        let g: f64 = Gamma::new(shape + 1.0, 1.0).expect("positive shape").sample(rng);
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        g.ln() + u.ln() / shape
    }
}

/// Draw from Dir(alphas).
pub fn sample<R: Rng + ?Sized>(rng: &mut R, alphas: &[f64]) -> Vec<f64> {
    let logs: Vec<f64> = alphas.iter().map(|&a| ln_gamma_variate(rng, a)).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= total);
    out
}

/// Draw from the symmetric Dir(concentration) of dimension `n`.
pub fn sample_symmetric<R: Rng + ?Sized>(rng: &mut R, concentration: f64, n: usize) -> Vec<f64> {
    sample(rng, &vec![concentration; n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn draws_are_probability_vectors() {
        let mut rng = rng_from_seed(1);
        for &a in &[1e-4, 0.01, 0.5, 1.0, 30.0] {
            let p = sample_symmetric(&mut rng, a, 50);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&x| x >= 0.0 && x.is_finite()));
        }
    }

    #[test]
    fn component_means_match_alpha_ratio() {
        let mut rng = rng_from_seed(2);
        let alphas = [0.3, 0.6, 2.1];
        let n = 20_000;
        let mut mean = [0.0; 3];
        for _ in 0..n {
            for (m, x) in mean.iter_mut().zip(sample(&mut rng, &alphas)) {
                *m += x / n as f64;
            }
        }
        let total: f64 = alphas.iter().sum();
        for (m, a) in mean.iter().zip(alphas) {
            assert!((m - a / total).abs() < 0.01, "{m} vs {}", a / total);
        }
    }
}
