use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, TensorError, Var};

/// Which coordinates of each input to probe.
#[derive(Clone, Copy, Debug)]
pub enum CoordSelection {
    All,
    /// Up to `per_tensor` seeded-random coordinates per input tensor.
    Sample { per_tensor: usize, seed: u64 },
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn evaluate<F>(f: &mut F, xs: &[Tensor<f64>]) -> Result<f64, TensorError>
where
    F: for<'g> FnMut(&mut Graph<'g, f64>, &[Var]) -> Result<Var, TensorError>,
{
    let mut g = Graph::inference();
    let vars: Vec<Var> = xs.iter().map(|x| g.input(x)).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(TensorError::NotScalar(g.shape(out).to_vec()));
    }
    Ok(g.value(out)[0])
}

/// Compares autodiff gradients of a scalar function of several tensors with
/// central differences `(f(x+he) - f(x-he)) / 2h`.
///
/// Returns the maximum [`relative_error`] over the probed coordinates. The
/// function is evaluated twice at the unperturbed point first; any mismatch is
/// reported as [`TensorError::NonDeterministic`].
pub fn finite_diff_check_many<F>(
    mut f: F,
    xs: &[Tensor<f64>],
    step: f64,
    coords: CoordSelection,
) -> Result<f64, TensorError>
where
    F: for<'g> FnMut(&mut Graph<'g, f64>, &[Var]) -> Result<Var, TensorError>,
{
    if step <= 0.0 {
        return Err(TensorError::Argument { op: "finite_diff_check", reason: format!("step {step} must be positive") });
    }
    let leaves: Vec<Tensor<f64>> = xs.iter().map(|x| x.clone().requiring_grad()).collect();
    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::new();
        let vars: Vec<Var> = leaves.iter().map(|x| g.input(x)).collect();
        let out = f(&mut g, &vars)?;
        let grads = g.backward(out)?;
        vars.iter()
            .zip(&leaves)
            .map(|(&v, x)| grads.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.numel()]))
            .collect()
    };

    let first = evaluate(&mut f, xs)?;
    let second = evaluate(&mut f, xs)?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::NonDeterministic { first, second });
    }

    let mut worst = 0.0f64;
    let mut probe = xs.to_vec();
    for (t, grad) in analytic.iter().enumerate() {
        let n = xs[t].numel();
        let indices: Vec<usize> = match coords {
            CoordSelection::All => (0..n).collect(),
            CoordSelection::Sample { per_tensor, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let mut idx = sample(&mut rng, n, per_tensor.min(n)).into_vec();
                idx.sort_unstable();
                idx
            }
        };
        for i in indices {
            let orig = xs[t].values()[i];
            probe[t].values_mut()[i] = orig + step;
            let plus = evaluate(&mut f, &probe)?;
            probe[t].values_mut()[i] = orig - step;
            let minus = evaluate(&mut f, &probe)?;
            probe[t].values_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(grad[i], numeric));
        }
    }
    Ok(worst)
}

/// Single-input form of [`finite_diff_check_many`] probing every coordinate.
pub fn finite_diff_check<F>(mut f: F, x: &Tensor<f64>, step: f64) -> Result<f64, TensorError>
where
    F: for<'g> FnMut(&mut Graph<'g, f64>, Var) -> Result<Var, TensorError>,
{
    finite_diff_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(x), step, CoordSelection::All)
}
