//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::real::Real;
use crate::rng::SeedRng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many randomly chosen entries per parameter.
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-3,
            tolerance: 1e-3,
            max_entries: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub entries_checked: usize,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// `|a - b| / max(|a|, |b|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient returned by `f` with central differences.
///
/// `f(params, want_grad)` evaluates the scalar loss and, when `want_grad`
/// is set, one gradient tensor per parameter.
pub fn grad_check<T, F>(
    names: &[String],
    params: &[Tensor<T>],
    mut f: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    T: Real,
    F: FnMut(&[Tensor<T>], bool) -> Result<(f64, Option<Vec<Tensor<T>>>)>,
{
    let (_, analytic) = f(params, true)?;
    let analytic = analytic.expect("gradient requested");
    let mut work = params.to_vec();
    let mut rng = SeedRng::new(opts.seed);
    let mut checks = Vec::with_capacity(params.len());

    for (pi, param) in params.iter().enumerate() {
        let n = param.len();
        let entries: Vec<usize> = match opts.max_entries {
            Some(k) if k < n => rand::seq::index::sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let mut check = ParamCheck {
            name: names.get(pi).cloned().unwrap_or_else(|| format!("param{pi}")),
            max_rel_error: 0.0,
            entries_checked: entries.len(),
            worst_index: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for &e in &entries {
            let original = param.data()[e];
            let plus = original + T::of(opts.step);
            let minus = original - T::of(opts.step);
            work[pi].data_mut()[e] = plus;
            let (f_plus, _) = f(&work, false)?;
            work[pi].data_mut()[e] = minus;
            let (f_minus, _) = f(&work, false)?;
            work[pi].data_mut()[e] = original;
            // Actual (rounded) step widths, accumulated in f64.
            let width = plus.as_f64() - minus.as_f64();
            let numeric = (f_plus - f_minus) / width;
            let exact = analytic[pi].data()[e].as_f64();
            let err = relative_error(exact, numeric);
            if err > check.max_rel_error || err.is_nan() {
                check.max_rel_error = err;
                check.worst_index = e;
                check.worst_analytic = exact;
                check.worst_numeric = numeric;
            }
        }
        checks.push(check);
    }
    let passed = checks.iter().all(|c| c.max_rel_error < opts.tolerance);
    Ok(GradCheckReport {
        step: opts.step,
        tolerance: opts.tolerance,
        params: checks,
        passed,
    })
}
