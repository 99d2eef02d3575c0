use rand::seq::index;
use rand::Rng;

/// Outcome of a finite-difference gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Index of the worst coordinate.
    pub worst: usize,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// Relative error floor; keeps coordinates with vanishing gradients from dominating.
const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares `analytic` with central differences of `f` around `x`.
///
/// When `max_coords` is smaller than `x.len()`, a random subset of coordinates is checked.
pub fn grad_check<F, R>(
    mut f: F,
    x: &[f64],
    analytic: &[f64],
    h: f64,
    tolerance: f64,
    max_coords: Option<usize>,
    rng: &mut R,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    assert_eq!(x.len(), analytic.len(), "gradient length");
    let coords: Vec<usize> = match max_coords {
        Some(k) if k < x.len() => {
            let mut v = index::sample(rng, x.len(), k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..x.len()).collect(),
    };
    let mut probe = x.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: 0,
        checked: coords.len(),
        tolerance,
    };
    for &i in &coords {
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        let numeric = (fp - fm) / (2.0 * h);
        let e = rel_err(analytic[i], numeric);
        if e > report.max_rel_err || report.max_rel_err.is_nan() {
            report.max_rel_err = e;
            report.worst = i;
        }
    }
    report
}
