use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Result, Tensor3, TensorError, Var};

/// Which coordinates of each input are perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordinateSelection {
    All,
    /// At most `per_input` distinct coordinates per input, drawn from `seed`.
    Sample { per_input: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |a - n| / max(1, |a|, |n|)` over checked coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±step evaluation crossed a relu kink or changed a
    /// max-pool argmax; excluded from the maximum.
    pub skipped_kinks: usize,
    /// `(input index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

/// Central-difference check of a scalar program against [`Graph::backward`].
pub fn finite_diff_check_inputs<F, E>(
    f: F,
    inputs: &[Tensor3<f64>],
    step: f64,
    selection: CoordinateSelection,
) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    if !(step > 0.0) {
        return Err(TensorError::Invalid(format!("finite difference step must be > 0, got {step}")).into());
    }

    let eval = |xs: &[Tensor3<f64>]| -> Result<(Graph<f64>, Vec<Var>, Var), E> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.variable(x.clone())).collect();
        let root = f(&mut g, &vars)?;
        Ok((g, vars, root))
    };

    let (g0, vars, root) = eval(inputs)?;
    let base_sig = g0.kink_signature();
    let grads = g0.backward(root)?;
    drop(g0);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
        worst: None,
    };
    let mut work: Vec<Tensor3<f64>> = inputs.to_vec();

    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        let len = inputs[k].data().len();
        let coords: Vec<usize> = match selection {
            CoordinateSelection::All => (0..len).collect(),
            CoordinateSelection::Sample { per_input, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let mut picked = index::sample(&mut rng, len, per_input.min(len)).into_vec();
                picked.sort_unstable();
                picked
            }
        };
        for i in coords {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + step;
            let (gp, _, rp) = eval(&work)?;
            work[k].data_mut()[i] = orig - step;
            let (gm, _, rm) = eval(&work)?;
            work[k].data_mut()[i] = orig;

            if gp.kink_signature() != base_sig || gm.kink_signature() != base_sig {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (gp.scalar(rp) - gm.scalar(rm)) / (2.0 * step);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst = Some((k, i));
                }
            }
        }
    }
    Ok(report)
}

/// Single-input form: the max relative error over every coordinate of `x`.
pub fn finite_diff_check<F>(f: F, x: &Tensor3<f64>, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let report = finite_diff_check_inputs(|g, v| f(g, v[0]), std::slice::from_ref(x), step, CoordinateSelection::All)?;
    Ok(report.max_rel_error)
}
