//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, Var};
use crate::error::{Error, Result};

const REL_FLOOR: f64 = 1e-6;

/// Which entries of which parameters to probe.
#[derive(Clone, Debug)]
pub struct CheckSpec {
    pub params: Vec<String>,
    pub step: f64,
    /// Probe at most this many entries per parameter, chosen with `seed`.
    pub max_entries_per_param: Option<usize>,
    pub seed: u64,
}

impl CheckSpec {
    pub fn all(store: &ParamStore, step: f64) -> Self {
        Self {
            params: store.names().cloned().collect(),
            step,
            max_entries_per_param: None,
            seed: 0,
        }
    }

    pub fn with_prefixes(store: &ParamStore, prefixes: &[&str], step: f64) -> Self {
        Self {
            params: store
                .names()
                .filter(|n| prefixes.iter().any(|p| n.starts_with(p)))
                .cloned()
                .collect(),
            step,
            max_entries_per_param: None,
            seed: 0,
        }
    }

    pub fn sampled(mut self, per_param: usize, seed: u64) -> Self {
        self.max_entries_per_param = Some(per_param);
        self.seed = seed;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub max_rel_error: f64,
    pub entries_checked: usize,
    /// Parameter and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
}

/// Compares the analytic gradient of the scalar built by `f` against
/// `(f(θ+h) − f(θ−h)) / 2h` per entry, returning the maximum of
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-6)`. The floor keeps
/// rounding noise on exactly-zero gradients (a softmax key bias, say) from
/// reading as a large relative error.
///
/// Perturbed evaluations replay the stop-gradient and token choices recorded
/// by the unperturbed pass, so the numeric derivative is taken of the same
/// surrogate that `backward` differentiates.
pub fn finite_difference_check<F>(store: &mut ParamStore, spec: &CheckSpec, mut f: F) -> Result<CheckReport>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    let h = spec.step;
    if !(h > 0.0 && h <= 1e-2) {
        return Err(Error::Config(format!("finite-difference step {h} outside (0, 1e-2]")));
    }
    let mut g = Graph::recording();
    let loss = f(&mut g, store)?;
    let base = g.value(loss).item();
    if !base.is_finite() {
        return Err(Error::Numeric("objective is not finite".into()));
    }
    let grads = g.backward(loss)?;
    let analytic: std::collections::HashMap<String, super::Tensor> = g.param_grads(&grads).into_iter().collect();
    let frozen = g.take_frozen();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut report = CheckReport {
        max_rel_error: 0.0,
        entries_checked: 0,
        worst: None,
    };
    for name in &spec.params {
        let n = store.value(name)?.numel();
        let entries: Vec<usize> = match spec.max_entries_per_param {
            Some(k) if k < n => {
                let mut v = sample(&mut rng, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        for idx in entries {
            let a = analytic.get(name).map_or(0.0, |t| t.data()[idx]);
            let orig = store.value(name)?.data()[idx];
            store.get_mut(name)?.value.data_mut()[idx] = orig + h;
            let plus = eval_replay(store, &frozen, &mut f)?;
            store.get_mut(name)?.value.data_mut()[idx] = orig - h;
            let minus = eval_replay(store, &frozen, &mut f);
            store.get_mut(name)?.value.data_mut()[idx] = orig;
            let minus = minus?;
            let numeric = (plus - minus) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.entries_checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), idx));
            }
        }
    }
    Ok(report)
}

fn eval_replay<F>(store: &ParamStore, frozen: &[super::Frozen], f: &mut F) -> Result<f64>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::replaying(frozen.to_vec());
    let v = f(&mut g, store)?;
    let out = g.value(v).item();
    if !out.is_finite() {
        return Err(Error::Numeric("perturbed objective is not finite".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn quadratic_matches() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![0.3, -1.2, 2.0])).unwrap();
        let spec = CheckSpec::all(&store, 1e-5);
        let r = finite_difference_check(&mut store, &spec, |g, s| {
            let w = g.param(s, "w")?;
            let sq = g.square(w);
            Ok(g.sum(sq))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.entries_checked, 3);
    }

    #[test]
    fn constant_objective_has_zero_error() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let spec = CheckSpec::all(&store, 1e-5);
        let r = finite_difference_check(&mut store, &spec, |g, _| Ok(g.constant(Tensor::scalar(4.0)))).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn step_out_of_range() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0])).unwrap();
        let spec = CheckSpec::all(&store, 0.5);
        assert!(finite_difference_check(&mut store, &spec, |g, s| g.param(s, "w")).is_err());
    }

    #[test]
    fn non_finite_objective() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![f64::NAN])).unwrap();
        let spec = CheckSpec::all(&store, 1e-5);
        let r = finite_difference_check(&mut store, &spec, |g, s| {
            let w = g.param(s, "w")?;
            Ok(g.sum(w))
        });
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn values_restored_after_check() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![0.25, 0.5])).unwrap();
        let before = store.clone();
        let spec = CheckSpec::all(&store, 1e-4);
        finite_difference_check(&mut store, &spec, |g, s| {
            let w = g.param(s, "w")?;
            let sq = g.square(w);
            Ok(g.mean(sq))
        })
        .unwrap();
        assert_eq!(store, before);
    }
}
