//! Central finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Outcome of checking one objective against central differences.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    /// One entry per parameter tensor, in argument order.
    pub per_param: Vec<ParamCheck>,
    pub tol: f64,
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub param_index: usize,
    pub max_rel_error: f64,
}

impl CheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.per_param
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tol
    }
}

/// Relative error with a floor so that near-zero gradient pairs are compared
/// absolutely at the floor's scale. Exact zero against exact zero is 0.
fn rel_error(analytic: f64, numeric: f64) -> f64 {
    const FLOOR: f64 = 1e-3;
    let denom = analytic.abs().max(numeric.abs()).max(FLOOR);
    (analytic - numeric).abs() / denom
}

/// Checks the analytic gradient of a scalar objective against central finite
/// differences with step `h`.
///
/// `f` must build the objective on the given tape from leaves bound to
/// `params` in order, returning the scalar root. It must be deterministic:
/// the baseline value is evaluated twice and any disagreement is reported as
/// a determinism error.
pub fn finite_difference_check<F>(
    name: &str,
    f: F,
    params: &[Tensor],
    h: f64,
    tol: f64,
) -> Result<CheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::Contract(format!(
            "finite-difference step {h} outside [1e-7, 1e-3]"
        )));
    }

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p)).collect();
        let root = f(&mut tape, &vars)?;
        if tape.value(root).len() != 1 {
            return Err(Error::Contract(format!(
                "objective '{name}' is not scalar"
            )));
        }
        Ok(tape.scalar_value(root))
    };

    let base1 = eval(params)?;
    let base2 = eval(params)?;
    if base1.to_bits() != base2.to_bits() {
        return Err(Error::Determinism(format!(
            "objective '{name}' returned {base1} then {base2} on identical inputs"
        )));
    }

    // Analytic gradients from one taped pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p)).collect();
    let root = f(&mut tape, &vars)?;
    tape.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad(v).to_vec()).collect();

    let mut per_param = Vec::with_capacity(params.len());
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        let mut max_rel: f64 = 0.0;
        for j in 0..param.numel() {
            let orig = param.values()[j];
            work[pi].values_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[pi].values_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[pi].values_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            max_rel = max_rel.max(rel_error(analytic[pi][j], numeric));
        }
        per_param.push(ParamCheck {
            param_index: pi,
            max_rel_error: max_rel,
        });
    }

    Ok(CheckReport {
        name: name.to_string(),
        per_param,
        tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_sum_matches_hand_gradient() {
        // f(x) = sum(x²), x = [1, 2] → analytic gradient [2, 4].
        let x = Tensor::vector(vec![1.0, 2.0]);
        let report = finite_difference_check(
            "sum_of_squares",
            |tape, vars| {
                let sq = tape.mul(vars[0], vars[0])?;
                Ok(tape.sum_all(sq))
            },
            &[x.clone()],
            1e-5,
            1e-8,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_error());

        let mut tape = Tape::new();
        let v = tape.leaf(&x);
        let sq = tape.mul(v, v).unwrap();
        let s = tape.sum_all(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(v), &[2.0, 4.0]);
    }

    #[test]
    fn rejects_out_of_range_step() {
        let x = Tensor::vector(vec![1.0]);
        let err = finite_difference_check("bad_h", |tape, vars| Ok(tape.sum_all(vars[0])), &[x], 1e-2, 1e-5)
            .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn detects_non_deterministic_objective() {
        use std::sync::atomic::{AtomicU64, Ordering};
        let counter = AtomicU64::new(0);
        let x = Tensor::vector(vec![1.0]);
        let err = finite_difference_check(
            "jittery",
            |tape, vars| {
                let n = counter.fetch_add(1, Ordering::SeqCst) as f64;
                let noise = tape.leaf(&Tensor::vector(vec![n * 1e-3]));
                let s = tape.sum_all(vars[0]);
                tape.add(s, noise)
            },
            &[x],
            1e-5,
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Determinism(_)));
    }

    #[test]
    fn random_matmul_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a = Tensor::matrix(3, 4, (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let b = Tensor::matrix(4, 2, (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let report = finite_difference_check(
            "matmul_3x4_4x2",
            |tape, vars| {
                let prod = tape.matmul(vars[0], vars[1])?;
                let sig = tape.sigmoid(prod);
                Ok(tape.sum_all(sig))
            },
            &[a, b],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_error());
    }

    #[test]
    fn random_two_layer_composition_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    // keep ReLU inputs away from the kink
                    loop {
                        let v: f64 = rng.gen_range(-2.0..2.0);
                        if v.abs() > 1e-3 {
                            break v;
                        }
                    }
                })
                .collect()
        };
        let x = Tensor::matrix(2, 3, draw(6)).unwrap();
        let w1 = Tensor::matrix(3, 4, draw(12)).unwrap();
        let b1 = Tensor::vector(draw(4));
        let w2 = Tensor::matrix(4, 1, draw(4)).unwrap();
        let report = finite_difference_check(
            "two_layer",
            |tape, vars| {
                let h = tape.matmul(vars[0], vars[1])?;
                let h = tape.add_row(h, vars[2])?;
                let h = tape.relu(h);
                let out = tape.matmul(h, vars[3])?;
                let out = tape.softplus(out);
                Ok(tape.sum_all(out))
            },
            &[x, w1, b1, w2],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_error());
    }
}
