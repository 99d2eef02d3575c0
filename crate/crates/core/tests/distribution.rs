//! Distributional diagnostics against synthetic embeddings built to satisfy the
//! independence and normality assumptions exactly, and the special functions against
//! an independent series evaluation.

use levemb_core::datagen::PairSample;
use levemb_core::eval::stats::{chi2_cdf, gamma_p};
use levemb_core::eval::{chi2_fit, element_normality, predicted_variance, variance_profile};
use levemb_core::ndnet::Tensor;
use levemb_core::rng::{Rng, Streams};
use levemb_core::seqcore::Sequence;
use levemb_core::siamese::predict_distance;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

fn gaussian(n: usize, g: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(g)).collect()
}

/// Random orthogonal matrix (rows) by Gram–Schmidt on Gaussian vectors.
fn orthogonal(n: usize, g: &mut Rng) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
    while q.len() < n {
        let mut v = gaussian(n, g);
        for _ in 0..2 {
            for row in &q {
                let c: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(row).for_each(|(x, r)| *x -= c * r);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            q.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    q
}

/// Scaled pair `(ũ, ṽ)` at true distance `d`: `ũ − ṽ = (y₁..y_m, 0..0)·√(M/n)·P` with
/// `m = nd/M`, and `ũ` itself an independent scaled Gaussian.
fn correlated_pair(n: usize, m: usize, mean_distance: f64, p: &[Vec<f64>], g: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let r = (mean_distance / (2.0 * n as f64)).sqrt();
    let u: Vec<f64> = gaussian(n, g).into_iter().map(|x| r * x).collect();
    let c = (mean_distance / n as f64).sqrt();
    let mut diff = vec![0.0; n];
    for row in p.iter().take(m) {
        let y: f64 = StandardNormal.sample(g);
        diff.iter_mut().zip(row).for_each(|(d, r)| *d += c * y * r);
    }
    let v = u.iter().zip(&diff).map(|(a, b)| a - b).collect();
    (u, v)
}

fn stub_pair(d: u32) -> PairSample {
    let s = Sequence::from_codes(vec![]);
    PairSample {
        s: s.clone(),
        t: s,
        d,
        homologous: true,
    }
}

#[test]
fn independent_pairs_have_mean_two_n_r_squared() {
    let mut g = Streams::new(3).rng("indep", 0);
    for (n, mean_distance) in [(80usize, 80.0), (120, 80.0)] {
        let r = (mean_distance / (2.0 * n as f64)).sqrt();
        let total: f64 = (0..100_000)
            .map(|_| predict_distance(r, &gaussian(n, &mut g), &gaussian(n, &mut g)).unwrap())
            .sum();
        let mean = total / 100_000.0;
        let expected = 2.0 * n as f64 * r * r;
        assert!((mean / expected - 1.0).abs() < 0.01, "n={n}: mean {mean:.3} vs {expected:.3}");
    }
}

#[test]
fn variance_law_under_the_harness() {
    for (n, mean_distance, d) in [(80usize, 80.0, 5u32), (120, 80.0, 2), (120, 80.0, 10)] {
        let mut g = Streams::new(4).rng("harness", u64::from(d) * 1000 + n as u64);
        let p = orthogonal(n, &mut g);
        let m = (n as f64 * f64::from(d) / mean_distance).round() as usize;
        let dhat: Vec<f64> = (0..10_000)
            .map(|_| {
                let (u, v) = correlated_pair(n, m, mean_distance, &p, &mut g);
                predict_distance(1.0, &u, &v).unwrap()
            })
            .collect();
        let samples: Vec<PairSample> = (0..dhat.len()).map(|_| stub_pair(d)).collect();
        let profile = variance_profile(&dhat, &samples, mean_distance, n, 30).unwrap();
        let row = &profile.rows[0];
        assert_eq!(row.predicted_var, predicted_variance(f64::from(d), mean_distance, n));
        assert!((0.9..=1.1).contains(&row.ratio), "(n,M,d)=({n},{mean_distance},{d}): ratio {:.3}", row.ratio);
        let fit = chi2_fit(&dhat, f64::from(d), n as f64 / mean_distance, 0.01).unwrap();
        assert!(fit.passed, "(n,M,d)=({n},{mean_distance},{d}): KS {:.4} >= {:.4}", fit.ks, fit.critical);
    }
}

#[test]
fn exact_chi_squared_samples_pass_the_fit() {
    let mut g = Streams::new(5).rng("chi2", 0);
    for (d, k) in [(5.0, 1.0), (2.0, 1.5), (10.0, 0.75)] {
        let dist = ChiSquared::new(k * d).unwrap();
        let dhat: Vec<f64> = (0..10_000).map(|_| dist.sample(&mut g) / k).collect();
        let fit = chi2_fit(&dhat, d, k, 0.01).unwrap();
        assert!(fit.passed, "d={d}, k={k}: KS {:.4} >= {:.4}", fit.ks, fit.critical);
        // a shifted law must fail
        let shifted: Vec<f64> = dhat.iter().map(|x| x * 1.2).collect();
        assert!(!chi2_fit(&shifted, d, k, 0.01).unwrap().passed);
    }
}

#[test]
fn standard_normal_elements_are_not_flagged() {
    let mut g = Streams::new(6).rng("normal", 0);
    let (rows, n) = (5000, 12);
    let t = Tensor::from_vec(&[rows, n], gaussian(rows * n, &mut g)).unwrap();
    let stats = element_normality(&t, 10).unwrap();
    assert_eq!(stats.len(), 10);
    for s in &stats {
        assert!(!s.flagged, "element {} flagged: mean {:.3}, var {:.3}", s.element, s.mean, s.var);
        assert!(s.ks < 0.03, "element {}: KS {:.4}", s.element, s.ks);
        assert!(s.skew.abs() < 0.15);
    }
}

/// `ln Γ(a)` for integer or half-integer `a` by exact products.
fn ln_gamma_exact(a: f64) -> f64 {
    let twice = (2.0 * a).round() as i64;
    assert!((2.0 * a - twice as f64).abs() < 1e-12 && twice > 0);
    let (mut x, mut acc) = if twice % 2 == 0 { (1.0, 0.0) } else { (0.5, 0.5 * std::f64::consts::PI.ln()) };
    while x < a - 1e-9 {
        acc += x.ln();
        x += 1.0;
    }
    acc
}

/// `P(a, x) = Σₖ x^(a+k) e^(−x) / Γ(a+k+1)`, all terms positive, summed until they vanish.
fn gamma_p_series_oracle(a: f64, x: f64) -> f64 {
    let mut ln_g = ln_gamma_exact(a) + a.ln();
    let mut sum = 0.0;
    let mut comp = 0.0;
    let mut k = 0.0;
    loop {
        let term = ((a + k) * x.ln() - x - ln_g).exp();
        // Kahan summation
        let y = term - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        if k > x && term < 1e-20 * sum {
            break;
        }
        k += 1.0;
        ln_g += (a + k).ln();
    }
    sum
}

#[test]
fn incomplete_gamma_matches_series_oracle() {
    let points = [
        (0.5, 0.1),
        (0.5, 2.0),
        (1.0, 0.5),
        (1.0, 7.0),
        (1.5, 1.5),
        (2.5, 0.3),
        (2.5, 6.0),
        (3.0, 3.0),
        (5.0, 2.0),
        (5.0, 5.0),
        (5.0, 12.0),
        (7.5, 7.5),
        (10.0, 5.0),
        (10.0, 10.0),
        (10.0, 18.0),
        (20.0, 20.0),
        (20.0, 30.0),
        (40.0, 35.0),
        (60.0, 60.0),
        (75.5, 90.0),
    ];
    assert_eq!(points.len(), 20);
    for (a, x) in points {
        let want = gamma_p_series_oracle(a, x);
        let got = gamma_p(a, x);
        assert!((got - want).abs() < 1e-10, "P({a}, {x}) = {got:.15} vs oracle {want:.15}");
        let via_chi2 = chi2_cdf(2.0 * x, 2.0 * a);
        assert!((via_chi2 - want).abs() < 1e-10, "χ² CDF at ({}, {})", 2.0 * x, 2.0 * a);
    }
}
