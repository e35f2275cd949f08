//! Histogram estimates converge to the true densities as samples grow.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use unlinkability::{estimate_densities, DensityConfig, Label, ScoreSet};

fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

// L1 distance between the estimated mated density and N(0.4, 0.1), by
// midpoint rule on each bin.
fn l1_error(n: usize, seed: u64, kde: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m: Vec<f64> = {
        let d = Normal::new(0.4, 0.1).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    };
    let nm: Vec<f64> = {
        let d = Normal::new(0.6, 0.1).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    };
    let s = ScoreSet::new(m, nm, "normal").unwrap();
    let cfg = DensityConfig {
        kde,
        ..DensityConfig::default()
    };
    let dp = estimate_densities(&s, &cfg).unwrap();
    let edges = dp.edges();
    let mut err = 0.0;
    for (b, &p) in dp.density(Label::Mated).iter().enumerate() {
        let (lo, hi) = (edges[b], edges[b + 1]);
        let steps = 8;
        let h = (hi - lo) / steps as f64;
        for k in 0..steps {
            let x = lo + (k as f64 + 0.5) * h;
            err += (p - normal_pdf(x, 0.4, 0.1)).abs() * h;
        }
    }
    err
}

fn mean_error(n: usize, kde: bool) -> f64 {
    (0..20).map(|seed| l1_error(n, seed, kde)).sum::<f64>() / 20.0
}

#[test]
fn histogram_l1_error_shrinks_with_sample_size() {
    let e: Vec<f64> = [1_000, 10_000, 100_000]
        .iter()
        .map(|&n| mean_error(n, false))
        .collect();
    assert!(e[0] > e[1] && e[1] > e[2], "{e:?}");
    assert!(e[2] < 0.05, "{e:?}");
}

#[test]
fn kde_l1_error_shrinks_with_sample_size() {
    let e: Vec<f64> = [1_000, 10_000]
        .iter()
        .map(|&n| mean_error(n, true))
        .collect();
    assert!(e[0] > e[1], "{e:?}");
    assert!(e[1] < 0.05, "{e:?}");
}
