//! Central-difference gradient checking in 64-bit.

use crate::error::Result;

/// One evaluation of the checked function.
///
/// `regime` identifies the smooth piece the evaluation landed in (relu
/// activation signs, hinge activity, smooth-L1 branch). Coordinates whose
/// probe crosses a regime boundary have no finite-difference ground truth and
/// are skipped.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub value: f64,
    pub regime: Vec<bool>,
}

impl Probe {
    pub fn smooth(value: f64) -> Self {
        Probe { value, regime: Vec::new() }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub eps: f64,
    pub rel_tol: f64,
    /// Regime boundaries closer than `kink_margin * eps` exclude a coordinate.
    pub kink_margin: f64,
    /// Denominator floor for the relative error, so vanishing gradients are
    /// compared absolutely.
    pub denom_floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck { eps: 1e-6, rel_tol: 1e-3, kink_margin: 10.0, denom_floor: 1e-6 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub pass: bool,
    /// Coordinates actually compared.
    pub checked: usize,
    /// Coordinates excluded as lying near a non-smooth point.
    pub skipped: Vec<usize>,
    /// Coordinate with the largest relative error.
    pub worst: Option<usize>,
    /// Set when the function failed or produced a non-finite value.
    pub failure: Option<String>,
}

impl GradReport {
    /// Combines reports from several checks into one.
    pub fn merge(mut self, other: GradReport) -> GradReport {
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
        }
        self.pass = self.pass && other.pass;
        self.checked += other.checked;
        self.skipped.extend(other.skipped);
        self.failure = self.failure.or(other.failure);
        self
    }

    pub fn empty() -> Self {
        GradReport { pass: true, ..Default::default() }
    }
}

impl GradCheck {
    pub fn relative_error(&self, analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(self.denom_floor)
    }

    /// Compares `analytic[c]` against the central difference of `f` for every `c` in `coords`.
    pub fn check<F>(&self, f: F, params: &[f64], analytic: &[f64], coords: &[usize]) -> GradReport
    where
        F: Fn(&[f64]) -> Result<Probe>,
    {
        let mut report = GradReport::empty();
        let mut theta = params.to_vec();
        let eval = |theta: &[f64]| -> std::result::Result<Probe, String> {
            match f(theta) {
                Ok(p) if p.value.is_finite() => Ok(p),
                Ok(p) => Err(format!("non-finite value {}", p.value)),
                Err(e) => Err(e.to_string()),
            }
        };

        for &c in coords {
            let orig = theta[c];
            let margin = self.kink_margin * self.eps;
            let at = |x: f64, theta: &mut Vec<f64>| {
                theta[c] = x;
                eval(theta)
            };
            let probes = (|| {
                let lo_m = at(orig - margin, &mut theta)?;
                let hi_m = at(orig + margin, &mut theta)?;
                let lo = at(orig - self.eps, &mut theta)?;
                let hi = at(orig + self.eps, &mut theta)?;
                Ok::<_, String>((lo_m, hi_m, lo, hi))
            })();
            theta[c] = orig;
            let (lo_m, hi_m, lo, hi) = match probes {
                Ok(p) => p,
                Err(msg) => {
                    report.pass = false;
                    report.failure = Some(format!("coordinate {c}: {msg}"));
                    return report;
                }
            };
            if lo_m.regime != hi_m.regime || lo.regime != hi.regime || lo.regime != lo_m.regime {
                report.skipped.push(c);
                continue;
            }
            let numeric = (hi.value - lo.value) / (2.0 * self.eps);
            let err = self.relative_error(analytic[c], numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some(c);
            }
        }
        report.pass = report.failure.is_none() && report.max_rel_err < self.rel_tol;
        report
    }
}
