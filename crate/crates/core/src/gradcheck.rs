//! Central finite-difference checks for anything implementing [`ParamSet`].

use indexmap::IndexMap;

use crate::tensorfile::ParamSet;

/// Entries where both the analytic and the numeric derivative are below this
/// magnitude are treated as exact zeros and not scored.
pub const ZERO_FLOOR: f64 = 1e-8;

/// Worst agreement seen inside one named parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub name: &'static str,
    /// Number of scalar entries that were perturbed.
    pub entries: usize,
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|)`.
    pub max_rel_error: f64,
}

/// Perturbs every scalar of `params` by `±eps` and compares the central
/// difference of `loss` with the matching entry of `analytic`.
///
/// Tensors that share a name (one per decoder block, say) are pooled into one
/// group. The result keeps first-seen name order.
pub fn check_gradients<P, F>(params: &P, analytic: &P, eps: f64, mut loss: F) -> Vec<GroupReport>
where
    P: ParamSet + Clone,
    F: FnMut(&P) -> f64,
{
    let grads = analytic.tensors();
    let mut groups: IndexMap<&'static str, GroupReport> = IndexMap::new();
    let mut work = params.clone();
    for (t, (name, _, g)) in grads.iter().enumerate() {
        let report = groups.entry(name).or_insert(GroupReport { name, entries: 0, max_rel_error: 0.0 });
        for (i, &a) in g.iter().enumerate() {
            let orig = work.tensors_mut()[t].1[i];
            work.tensors_mut()[t].1[i] = orig + eps;
            let up = loss(&work);
            work.tensors_mut()[t].1[i] = orig - eps;
            let down = loss(&work);
            work.tensors_mut()[t].1[i] = orig;
            let fd = (up - down) / (2.0 * eps);
            let scale = a.abs().max(fd.abs());
            let rel = if scale < ZERO_FLOOR { 0.0 } else { (a - fd).abs() / scale };
            report.entries += 1;
            report.max_rel_error = report.max_rel_error.max(rel);
        }
    }
    groups.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone)]
    struct Pair(Vec<f64>, Vec<f64>);

    impl ParamSet for Pair {
        fn tensors(&self) -> Vec<(&'static str, &[usize], &[f64])> {
            vec![("a", &[2], &self.0), ("b", &[1], &self.1)]
        }
        fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
            vec![("a", &mut self.0), ("b", &mut self.1)]
        }
    }

    fn loss(p: &Pair) -> f64 {
        p.0[0] * p.0[0] * p.1[0] + p.0[1].sin()
    }

    #[test]
    fn exact_gradient_passes_and_wrong_one_is_caught() {
        let p = Pair(vec![0.7, -1.2], vec![2.0]);
        let good = Pair(vec![2.0 * 0.7 * 2.0, (-1.2f64).cos()], vec![0.49]);
        let r = check_gradients(&p, &good, 1e-4, loss);
        assert_eq!(r.len(), 2);
        assert!(r.iter().all(|g| g.max_rel_error < 1e-6), "{r:?}");
        let bad = Pair(good.0.clone(), vec![0.5]);
        let r = check_gradients(&p, &bad, 1e-4, loss);
        assert!(r[1].max_rel_error > 1e-3);
        assert_eq!(r[0].entries, 2);
    }
}
