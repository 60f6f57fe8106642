/// Result of comparing an analytic gradient with central differences.
///
/// Per coordinate, the relative error is
/// `|a − n| / max(|a|, |n|, floor)` with `floor = floor_ratio · max(‖a‖∞, ‖n‖∞)`,
/// so coordinates that are tiny compared with the gradient as a whole are
/// judged against the gradient's scale rather than against themselves.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst_index: Option<usize>,
    pub tolerance: f64,
    pub passed: bool,
    pub numeric: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct FiniteDiff {
    pub step: f64,
    pub tolerance: f64,
    pub floor_ratio: f64,
}

impl Default for FiniteDiff {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-6,
            floor_ratio: 1e-3,
        }
    }
}

/// Central-difference gradient of `f` at `params`.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(mut f: F, params: &[f64], step: f64) -> Vec<f64> {
    let mut x = params.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + step;
            let fp = f(&x);
            x[i] = orig - step;
            let fm = f(&x);
            x[i] = orig;
            (fp - fm) / (2.0 * step)
        })
        .collect()
}

impl FiniteDiff {
    pub fn check<F: FnMut(&[f64]) -> f64>(&self, f: F, params: &[f64], analytic: &[f64]) -> GradCheckReport {
        let numeric = central_difference(f, params, self.step);
        self.compare(analytic, numeric)
    }

    pub fn compare(&self, analytic: &[f64], numeric: Vec<f64>) -> GradCheckReport {
        assert_eq!(analytic.len(), numeric.len(), "gradient lengths");
        let scale = analytic
            .iter()
            .chain(&numeric)
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = (self.floor_ratio * scale).max(f64::MIN_POSITIVE);
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        let mut worst = None;
        let mut finite = true;
        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            if !a.is_finite() || !n.is_finite() {
                finite = false;
                worst = Some(i);
                continue;
            }
            let abs = (a - n).abs();
            let rel = abs / a.abs().max(n.abs()).max(floor);
            max_abs = max_abs.max(abs);
            if rel > max_rel {
                max_rel = rel;
                worst = Some(i);
            }
        }
        GradCheckReport {
            max_rel_err: max_rel,
            max_abs_err: max_abs,
            worst_index: worst,
            tolerance: self.tolerance,
            passed: finite && max_rel <= self.tolerance,
            numeric,
        }
    }
}

/// Central differences with step `1e-5` against `analytic`.
pub fn finite_diff_check<F: FnMut(&[f64]) -> f64>(
    f: F,
    params: &[f64],
    analytic: &[f64],
    tolerance: f64,
) -> GradCheckReport {
    FiniteDiff {
        tolerance,
        ..FiniteDiff::default()
    }
    .check(f, params, analytic)
}
