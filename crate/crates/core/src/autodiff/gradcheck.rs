//! Central finite-difference verification of tape gradients.
//!
//! The check only uses forward evaluations for the numerical side, so it is
//! independent of every backward rule it verifies.

use super::{AutodiffError, Matrix, Tape, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, so that entries whose
    /// true gradient is zero are compared on an absolute scale.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-6,
            tolerance: 1e-4,
            floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub param: usize,
    pub entry: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Largest relative error over entries where the function is smooth
    /// across the stencil.
    pub max_rel_error: f64,
    /// Entries whose stencil straddles a kink (ReLU, max, |x|). The central
    /// difference is not a derivative there; the analytic value is instead
    /// required to match the one-sided difference on its own side.
    pub kinks: usize,
    pub failures: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares backward gradients of `f` with central differences for every
/// entry of every parameter.
///
/// `f` builds a scalar loss from the parameter handles it is given; it must
/// be a deterministic function of the parameter values (reseed any RNG
/// inside it on every call).
pub fn check_gradients<F>(
    params: &[Matrix],
    config: &GradCheckConfig,
    mut f: F,
) -> Result<GradCheckReport, AutodiffError>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let base = tape.value(loss).as_slice()[0];
    let mut grads = tape.backward(loss)?;
    let analytic: Vec<Matrix> = vars
        .iter()
        .map(|&v| grads.take(v).expect("parameter gradient"))
        .collect();

    let mut eval = |values: &[Matrix]| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|p| tape.constant(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).as_slice()[0])
    };

    let h = config.step;
    let mut report = GradCheckReport::default();
    let mut work: Vec<Matrix> = params.to_vec();
    for p in 0..params.len() {
        for e in 0..params[p].len() {
            let orig = params[p].as_slice()[e];
            work[p].as_mut_slice()[e] = orig + h;
            let plus = eval(&work)?;
            work[p].as_mut_slice()[e] = orig - h;
            let minus = eval(&work)?;
            work[p].as_mut_slice()[e] = orig;

            let a = analytic[p].as_slice()[e];
            let numeric = (plus - minus) / (2.0 * h);
            let err = rel_error(a, numeric, config.floor);
            report.checked += 1;
            if err <= config.tolerance {
                report.max_rel_error = report.max_rel_error.max(err);
                continue;
            }
            // Second-order one-sided differences, so a kink sitting exactly at
            // the evaluation point is not mistaken for an O(h) error.
            work[p].as_mut_slice()[e] = orig + 2.0 * h;
            let plus2 = eval(&work)?;
            work[p].as_mut_slice()[e] = orig - 2.0 * h;
            let minus2 = eval(&work)?;
            work[p].as_mut_slice()[e] = orig;
            let forward = (-3.0 * base + 4.0 * plus - plus2) / (2.0 * h);
            let backward = (3.0 * base - 4.0 * minus + minus2) / (2.0 * h);
            let jump = rel_error(forward, backward, config.floor);
            let one_sided =
                rel_error(a, forward, config.floor).min(rel_error(a, backward, config.floor));
            if jump > config.tolerance && one_sided <= config.tolerance {
                report.kinks += 1;
                continue;
            }
            report.max_rel_error = report.max_rel_error.max(err);
            report.failures.push(Mismatch {
                param: p,
                entry: e,
                analytic: a,
                numeric,
                rel_error: err,
            });
        }
    }
    Ok(report)
}
