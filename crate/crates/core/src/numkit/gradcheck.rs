//! Central-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::matrix::SeqMatrix;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Coordinates checked per parameter matrix; matrices with fewer entries
    /// are checked exhaustively.
    pub coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            coords_per_param: 6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub index: usize,
    pub coords_checked: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub loss: f64,
    pub params: Vec<ParamCheck>,
}

/// `|a - n| / (|a| + |n| + 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

fn eval_loss<F>(f: &F, theta: &[SeqMatrix]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = theta.iter().map(|m| tape.constant(m.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out);
    if value.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "grad_check needs a scalar loss, got {}x{}",
            value.rows(),
            value.cols()
        )));
    }
    Ok(value.get(0, 0))
}

/// Compares the tape gradient of the scalar `f(theta)` against central
/// differences at sampled coordinates of every parameter matrix, returning
/// the worst relative error.
pub fn grad_check<F>(f: F, theta: &[SeqMatrix], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&opts.eps) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {} outside [1e-7, 1e-3]",
            opts.eps
        )));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = theta.iter().map(|m| tape.param(m.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let loss = tape.value(out).get(0, 0);
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss is {loss} at the unperturbed point"
        )));
    }
    let grads = tape.backward(out);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<SeqMatrix> = theta.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        loss,
        params: Vec::with_capacity(theta.len()),
    };

    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        let n = theta[pi].len();
        let coords: Vec<usize> = if n <= opts.coords_per_param {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.coords_per_param).into_vec();
            c.sort_unstable();
            c
        };

        let mut worst = 0.0f64;
        for &k in &coords {
            let orig = theta[pi].data()[k];
            work[pi].data_mut()[k] = orig + opts.eps;
            let plus = eval_loss(&f, &work)?;
            work[pi].data_mut()[k] = orig - opts.eps;
            let minus = eval_loss(&f, &work)?;
            work[pi].data_mut()[k] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss became non-finite perturbing parameter {pi} coordinate {k}"
                )));
            }
            let numeric = (plus - minus) / (2.0 * opts.eps);
            worst = worst.max(relative_error(analytic.data()[k], numeric));
        }
        report.max_rel_err = report.max_rel_err.max(worst);
        report.params.push(ParamCheck {
            index: pi,
            coords_checked: coords.len(),
            max_rel_err: worst,
        });
    }
    Ok(report)
}
