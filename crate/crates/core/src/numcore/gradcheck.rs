use super::graph::{Graph, Var};
use super::params::ParameterStore;
use crate::error::{AcgError, Result};

const STEP: f64 = 1e-5;
/// Relative errors are measured against `max(|analytic|, |numeric|, FLOOR)`.
const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_parameter: String,
    pub worst_index: usize,
    pub coordinates_checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }
}

fn evaluate<F>(f: &F, store: &ParameterStore) -> Result<f64>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let out = f(&mut g)?;
    g.status()?;
    let v = g.scalar(out);
    if !v.is_finite() {
        return Err(AcgError::NonFinite("gradient check objective".into()));
    }
    Ok(v)
}

/// Compares reverse-mode gradients of `f` with central differences.
///
/// At most `max_per_param` evenly spaced coordinates of every parameter are
/// probed (all of them when the tensor is smaller).
pub fn gradient_check<F>(f: F, store: &ParameterStore, max_per_param: usize, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let out = f(&mut g)?;
        g.status()?;
        g.backward(out, 1.0)?
    };
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_parameter: String::new(),
        worst_index: 0,
        coordinates_checked: 0,
        tolerance,
    };
    for id in store.ids() {
        let n = store.value(id).len();
        let stride = if max_per_param == 0 || n <= max_per_param {
            1
        } else {
            n.div_ceil(max_per_param)
        };
        for k in (0..n).step_by(stride) {
            let orig = store.value(id).data()[k];
            probe.value_mut(id).data_mut()[k] = orig + STEP;
            let plus = evaluate(&f, &probe)?;
            probe.value_mut(id).data_mut()[k] = orig - STEP;
            let minus = evaluate(&f, &probe)?;
            probe.value_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let a = analytic.get(id)[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            report.coordinates_checked += 1;
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst_parameter = store.entry(id).name.clone();
                report.worst_index = k;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{Component, Tensor};

    fn store() -> ParameterStore {
        let mut s = ParameterStore::new();
        s.add("theta", Component::Encoder, Tensor::vector(vec![0.3, -1.2, 2.5, 0.01]).unwrap())
            .unwrap();
        s
    }

    #[test]
    fn half_squared_norm_has_gradient_theta() {
        let s = store();
        let id = s.id("theta").unwrap();
        let f = |g: &mut Graph<'_>| {
            let t = g.param(id);
            let sq = g.square(t);
            let sum = g.sum_elems(sq);
            Ok(g.scale(sum, 0.5))
        };
        let mut g = Graph::new(&s);
        let out = f(&mut g).unwrap();
        let grads = g.backward(out, 1.0).unwrap();
        for (a, b) in grads.get(id).iter().zip(s.value(id).data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let report = gradient_check(f, &s, 0, 1e-4).unwrap();
        assert!(report.max_relative_error < 1e-8, "{report:?}");
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let s = store();
        let report = gradient_check(|g: &mut Graph<'_>| Ok(g.scalar_constant(3.0)), &s, 0, 1e-4).unwrap();
        assert_eq!(report.max_relative_error, 0.0);
        assert_eq!(report.coordinates_checked, 4);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let s = store();
        let id = s.id("theta").unwrap();
        let f = |g: &mut Graph<'_>| {
            let t = g.param(id);
            let l = g.ln(t);
            Ok(g.sum_elems(l))
        };
        assert!(gradient_check(f, &s, 0, 1e-4).is_err());
    }

    #[test]
    fn every_tape_op_passes_the_check() {
        let mut s = ParameterStore::new();
        let a = s.add("a", Component::Encoder, Tensor::vector(vec![0.3, -0.7, 0.9]).unwrap()).unwrap();
        let b = s.add("b", Component::Decoder, Tensor::vector(vec![0.5, 0.2, 0.4]).unwrap()).unwrap();
        let w = s
            .add("w", Component::Attention, Tensor::new(vec![2, 3], vec![0.1, -0.3, 0.2, 0.7, 0.05, -0.4]).unwrap())
            .unwrap();
        let f = |g: &mut Graph<'_>| {
            let av = g.param(a);
            let bv = g.param(b);
            let r = g.row(w, 1);
            let sl = g_slice(g, av);
            let m = g.matvec_block(w, 1, sl);
            let s1 = g.add(av, bv);
            let s2 = g.sub(s1, r);
            let s3 = g.mul(s2, bv);
            let s4 = g.sigmoid(s3);
            let s5 = g.tanh(s4);
            let c = g.concat(&[s5, m]);
            let sm = g.softmax(c);
            let gathered = g.gather(sm, &[0, 4, 2, 2]);
            let pos = g.one_minus(gathered);
            let nrm = g.normalize(pos);
            let d = g.dot(av, bv);
            let st = g.stack(&[d, d]);
            let ws = g.weighted_sum(st, &[m, m]);
            let sum = g.sum(&[ws, m]);
            let e = g.sum_elems(sum);
            let picked = g.sum_at(nrm, &[1, 3]);
            let lg = g.ln(picked);
            let sq = g.square(e);
            let tot = g.sum(&[lg, sq]);
            Ok(g.scale(tot, 0.7))
        };
        fn g_slice(g: &mut Graph<'_>, v: Var) -> Var {
            g.slice(v, 1, 2)
        }
        let report = gradient_check(f, &s, 0, 1e-4).unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
