use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::graph::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Denominator floor for [`relative_error`]; below it the error is absolute.
pub const REL_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares reverse-mode gradients of the scalar root with central
/// differences at up to `points` coordinates of `leaf` (all of them when the
/// leaf is smaller). The graph must already be bound to its inputs. Leaf
/// values are restored before returning.
pub fn grad_check<T: Scalar>(
    graph: &mut Graph<T>,
    leaf: NodeId,
    h: T,
    points: usize,
    seed: u64,
) -> Result<f64> {
    graph.evaluate()?;
    graph.backward()?;
    let analytic = graph
        .grad(leaf)
        .ok_or_else(|| Error::invalid("leaf has no gradient"))?;
    let base = graph.value(leaf).cloned().ok_or(Error::NotForwarded)?;
    if !base.all_finite() {
        return Err(Error::NonFinite("grad_check leaf".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<usize> = if base.len() <= points {
        (0..base.len()).collect()
    } else {
        sample(&mut rng, base.len(), points).into_vec()
    };
    let mut worst = 0.0f64;
    for k in coords {
        let mut probe = base.clone();
        probe.values_mut()[k] = base.values()[k] + h;
        graph.set_value(leaf, probe.clone())?;
        let up = graph.evaluate()?.values()[0];
        probe.values_mut()[k] = base.values()[k] - h;
        graph.set_value(leaf, probe)?;
        let down = graph.evaluate()?.values()[0];
        let numeric = ((up - down) / (h + h)).as_f64();
        worst = worst.max(relative_error(analytic.values()[k].as_f64(), numeric));
    }
    graph.set_value(leaf, base)?;
    graph.evaluate()?;
    Ok(worst)
}
