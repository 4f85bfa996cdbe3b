//! Central finite-difference validation of reverse-mode gradients.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::{Graph, ParamStore, Var};
use crate::Result;

/// Denominator floor for relative errors, so coordinates whose true gradient
/// is numerically zero are compared absolutely.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates skipped because `θ ± h` crosses a relu/max branch.
    pub skipped_kinks: usize,
    pub max_rel_err: f64,
    /// `(name, index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Picks `n` random `(parameter, index)` coordinates, without replacement when
/// the store is large enough.
pub fn sample_coords<R: Rng + ?Sized>(store: &ParamStore, n: usize, rng: &mut R) -> Vec<(String, usize)> {
    let all: Vec<(String, usize)> = store
        .iter()
        .flat_map(|(name, t)| (0..t.len()).map(move |i| (name.clone(), i)))
        .collect();
    if all.len() <= n {
        return all;
    }
    all.choose_multiple(rng, n).cloned().collect()
}

/// Compares analytic gradients of `forward`'s scalar output with central
/// differences of step `h` at the given coordinates. Each evaluation gets a
/// fresh graph from `new_graph`, so dropout masks must be seeded identically.
pub fn check_params<F, G>(
    store: &ParamStore,
    coords: &[(String, usize)],
    h: f64,
    new_graph: G,
    forward: F,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Graph) -> Result<Var>,
    G: Fn() -> Graph,
{
    let mut g = new_graph();
    let out = forward(store, &mut g)?;
    let base_sig = g.kink_signature();
    let grads = g.backward(out)?;
    let mut report = GradCheckReport::default();
    let mut probe = store.clone();
    for (name, i) in coords {
        let analytic = grads.params().get(name).map_or(0.0, |gv| gv[*i]);
        let orig = store.get(name).expect("coordinate names come from the store").values[*i];
        let mut eval = |x: f64| -> Result<(f64, u64)> {
            probe.get_mut(name).expect("present").values[*i] = x;
            let mut g = new_graph();
            let out = forward(&probe, &mut g)?;
            Ok((g.scalar(out), g.kink_signature()))
        };
        let (fp, sp) = eval(orig + h)?;
        let (fm, sm) = eval(orig - h)?;
        probe.get_mut(name).expect("present").values[*i] = orig;
        if sp != base_sig || sm != base_sig {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if err > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(err);
            if err >= report.max_rel_err {
                report.worst = Some((name.clone(), *i, analytic, numeric));
            }
        }
    }
    Ok(report)
}
