use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{Component, Init, ParamId, ParameterStore};
use crate::error::{AcgError, Result};

fn check_parts(g: &Graph<'_>, parts: &[Var], dims: &[usize], what: &str) -> Result<()> {
    if parts.len() != dims.len() {
        return Err(AcgError::dim(format!("{what} input count"), dims.len(), parts.len()));
    }
    for (p, d) in parts.iter().zip(dims) {
        if g.dim(*p) != *d {
            return Err(AcgError::dim(what, *d, g.dim(*p)));
        }
    }
    Ok(())
}

/// `W · [x_1; …; x_k] + b`, with the concatenation done blockwise.
#[derive(Debug, Clone)]
pub struct Affine {
    pub w: ParamId,
    pub b: ParamId,
    input_dims: Vec<usize>,
    output_dim: usize,
}

impl Affine {
    pub fn new<R: Rng>(
        store: &mut ParameterStore,
        name: &str,
        tag: Component,
        input_dims: &[usize],
        output_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let total: usize = input_dims.iter().sum();
        let w = store.add_init(&format!("{name}.w"), tag, &[output_dim, total], Init::Xavier, rng)?;
        let b = store.add_init(&format!("{name}.b"), tag, &[output_dim], Init::Zeros, rng)?;
        Ok(Affine {
            w,
            b,
            input_dims: input_dims.to_vec(),
            output_dim,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn forward(&self, g: &mut Graph<'_>, parts: &[Var]) -> Var {
        let mut terms = Vec::with_capacity(parts.len() + 1);
        let mut col = 0;
        for (p, d) in parts.iter().zip(&self.input_dims) {
            terms.push(g.matvec_block(self.w, col, *p));
            col += d;
        }
        terms.push(g.param(self.b));
        g.sum(&terms)
    }
}

/// Gated recurrent unit with reset/update gates.
///
/// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
/// `c = tanh(W_c x + U_c (r ⊙ h) + b_c)`, `h' = z ⊙ h + (1 − z) ⊙ c`.
#[derive(Debug, Clone)]
pub struct GruCell {
    /// Input weights for the update, reset and candidate blocks, stacked `[3H × I]`.
    pub w_x: ParamId,
    /// Recurrent weights for the update and reset gates, `[2H × H]`.
    pub u_zr: ParamId,
    /// Recurrent weights for the candidate, `[H × H]`.
    pub u_c: ParamId,
    pub b: ParamId,
    input_dims: Vec<usize>,
    hidden: usize,
}

impl GruCell {
    pub fn new<R: Rng>(
        store: &mut ParameterStore,
        name: &str,
        tag: Component,
        input_dims: &[usize],
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let total: usize = input_dims.iter().sum();
        let w_x = store.add_init(&format!("{name}.w_x"), tag, &[3 * hidden, total], Init::Xavier, rng)?;
        let u_zr = store.add_init(&format!("{name}.u_zr"), tag, &[2 * hidden, hidden], Init::Xavier, rng)?;
        let u_c = store.add_init(&format!("{name}.u_c"), tag, &[hidden, hidden], Init::Xavier, rng)?;
        let b = store.add_init(&format!("{name}.b"), tag, &[3 * hidden], Init::Zeros, rng)?;
        Ok(GruCell {
            w_x,
            u_zr,
            u_c,
            b,
            input_dims: input_dims.to_vec(),
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn step(&self, g: &mut Graph<'_>, inputs: &[Var], h: Var) -> Var {
        let hd = self.hidden;
        let mut terms = Vec::with_capacity(inputs.len() + 1);
        let mut col = 0;
        for (x, d) in inputs.iter().zip(&self.input_dims) {
            terms.push(g.matvec_block(self.w_x, col, *x));
            col += d;
        }
        terms.push(g.param(self.b));
        let xb = g.sum(&terms);
        let hzr = g.matvec(self.u_zr, h);

        let xz = g.slice(xb, 0, hd);
        let hz = g.slice(hzr, 0, hd);
        let z_pre = g.add(xz, hz);
        let z = g.sigmoid(z_pre);

        let xr = g.slice(xb, hd, hd);
        let hr = g.slice(hzr, hd, hd);
        let r_pre = g.add(xr, hr);
        let r = g.sigmoid(r_pre);

        let rh = g.mul(r, h);
        let hc = g.matvec(self.u_c, rh);
        let xc = g.slice(xb, 2 * hd, hd);
        let c_pre = g.add(xc, hc);
        let c = g.tanh(c_pre);

        // z ⊙ h + (1 − z) ⊙ c == c + z ⊙ (h − c)
        let diff = g.sub(h, c);
        let zd = g.mul(z, diff);
        g.add(c, zd)
    }

    /// One step on plain vectors, with dimension checks.
    pub fn step_values(&self, store: &ParameterStore, input: &[f64], state: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.hidden {
            return Err(AcgError::dim("gru state", self.hidden, state.len()));
        }
        let total: usize = self.input_dims.iter().sum();
        if input.len() != total {
            return Err(AcgError::dim("gru input", total, input.len()));
        }
        let mut g = Graph::new(store);
        let mut parts = Vec::new();
        let mut off = 0;
        for d in &self.input_dims {
            parts.push(g.constant(input[off..off + d].to_vec()));
            off += d;
        }
        let h = g.constant(state.to_vec());
        let out = self.step(&mut g, &parts, h);
        g.status()?;
        Ok(g.value(out).to_vec())
    }
}

/// Alignment/scoring perceptron: `vᵀ tanh(W [x_1; …; x_k] + b)`.
///
/// `project` exposes the per-input block products so callers can cache the
/// terms that do not change across decode steps.
#[derive(Debug, Clone)]
pub struct Eta {
    pub w: ParamId,
    pub b: ParamId,
    pub v: ParamId,
    input_dims: Vec<usize>,
    offsets: Vec<usize>,
}

impl Eta {
    pub fn new<R: Rng>(
        store: &mut ParameterStore,
        name: &str,
        tag: Component,
        input_dims: &[usize],
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let total: usize = input_dims.iter().sum();
        let w = store.add_init(&format!("{name}.w"), tag, &[hidden, total], Init::Xavier, rng)?;
        let b = store.add_init(&format!("{name}.b"), tag, &[hidden], Init::Zeros, rng)?;
        let v = store.add_init(&format!("{name}.v"), tag, &[hidden], Init::Xavier, rng)?;
        let mut offsets = Vec::with_capacity(input_dims.len());
        let mut acc = 0;
        for d in input_dims {
            offsets.push(acc);
            acc += d;
        }
        Ok(Eta {
            w,
            b,
            v,
            input_dims: input_dims.to_vec(),
            offsets,
        })
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    /// `W_k x` for the k-th input slot.
    pub fn project(&self, g: &mut Graph<'_>, slot: usize, x: Var) -> Var {
        g.matvec_block(self.w, self.offsets[slot], x)
    }

    /// Finishes the logit from one projection per input slot.
    pub fn logit_from(&self, g: &mut Graph<'_>, projections: &[Var]) -> Var {
        let mut terms = projections.to_vec();
        terms.push(g.param(self.b));
        let pre = g.sum(&terms);
        let act = g.tanh(pre);
        let v = g.param(self.v);
        g.dot(v, act)
    }

    pub fn forward(&self, g: &mut Graph<'_>, inputs: &[Var]) -> Var {
        let projections: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(slot, x)| self.project(g, slot, *x))
            .collect();
        self.logit_from(g, &projections)
    }

    /// Scalar logit on plain vectors, with dimension checks.
    pub fn eval_values(&self, store: &ParameterStore, inputs: &[&[f64]]) -> Result<f64> {
        let mut g = Graph::new(store);
        let vars: Vec<Var> = inputs.iter().map(|x| g.constant(x.to_vec())).collect();
        check_parts(&g, &vars, &self.input_dims, "eta")?;
        let out = self.forward(&mut g, &vars);
        g.status()?;
        Ok(g.scalar(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::logistic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zeroed(store: &mut ParameterStore) {
        for e in store.entries_mut() {
            e.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn zero_gru_halves_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParameterStore::new();
        let cell = GruCell::new(&mut store, "g", Component::Encoder, &[3], 4, &mut rng).unwrap();
        zeroed(&mut store);
        let h = [0.4, -0.2, 0.9, -1.0];
        let out = cell.step_values(&store, &[1.0, 2.0, 3.0], &h).unwrap();
        for (o, hv) in out.iter().zip(h) {
            assert!((o - 0.5 * hv).abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_gru_matches_hand_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParameterStore::new();
        let cell = GruCell::new(&mut store, "g", Component::Encoder, &[1], 1, &mut rng).unwrap();
        // w_x = [wz, wr, wc], u_zr = [uz, ur], u_c = [uc], b = [bz, br, bc]
        store.value_mut(cell.w_x).data_mut().copy_from_slice(&[0.3, -0.4, 0.8]);
        store.value_mut(cell.u_zr).data_mut().copy_from_slice(&[1.0, 2.0]);
        store.value_mut(cell.u_c).data_mut().copy_from_slice(&[1.5]);
        store.value_mut(cell.b).data_mut().copy_from_slice(&[0.0, 0.1, 0.5]);
        let (x, h) = (0.0, 0.5);
        let z = logistic(0.3 * x + 1.0 * h);
        let r = logistic(-0.4 * x + 2.0 * h + 0.1);
        let c = (0.8 * x + 1.5 * r * h + 0.5f64).tanh();
        let expected = z * h + (1.0 - z) * c;
        let out = cell.step_values(&store, &[x], &[h]).unwrap();
        assert!((out[0] - expected).abs() < 1e-15);
        // frozen value of the same hand evaluation
        assert!((out[0] - 0.608_238_331_482_930_3).abs() < 1e-9, "{}", out[0]);
    }

    #[test]
    fn gru_rejects_mismatched_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParameterStore::new();
        let cell = GruCell::new(&mut store, "g", Component::Encoder, &[2], 3, &mut rng).unwrap();
        assert!(cell.step_values(&store, &[1.0], &[0.0; 3]).is_err());
        assert!(cell.step_values(&store, &[1.0, 1.0], &[0.0; 2]).is_err());
    }

    #[test]
    fn zero_eta_gives_zero_logit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParameterStore::new();
        let eta = Eta::new(&mut store, "e", Component::Attention, &[2, 3], 4, &mut rng).unwrap();
        zeroed(&mut store);
        let l = eta.eval_values(&store, &[&[1.0, -2.0], &[0.5, 0.5, 9.0]]).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn scalar_eta_matches_hand_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParameterStore::new();
        let eta = Eta::new(&mut store, "e", Component::Attention, &[1, 1], 1, &mut rng).unwrap();
        store.value_mut(eta.w).data_mut().copy_from_slice(&[0.5, -1.0]);
        store.value_mut(eta.b).data_mut().copy_from_slice(&[0.25]);
        store.value_mut(eta.v).data_mut().copy_from_slice(&[2.0]);
        let l = eta.eval_values(&store, &[&[1.0], &[0.5]]).unwrap();
        // 2 * tanh(0.5 - 0.5 + 0.25)
        assert!((l - 2.0 * 0.25f64.tanh()).abs() < 1e-15);
        let swapped = eta.eval_values(&store, &[&[0.5], &[1.0]]).unwrap();
        assert!((l - swapped).abs() > 1e-3);
    }

    #[test]
    fn eta_rejects_mismatched_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParameterStore::new();
        let eta = Eta::new(&mut store, "e", Component::Attention, &[1, 2], 3, &mut rng).unwrap();
        assert!(eta.eval_values(&store, &[&[1.0], &[1.0]]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn gru_output_is_bounded(seed in 0u64..500, x in -5.0f64..5.0, h in -0.999f64..0.999) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParameterStore::new();
            let cell = GruCell::new(&mut store, "g", Component::Encoder, &[2], 3, &mut rng).unwrap();
            let out = cell.step_values(&store, &[x, -x], &[h, -h, h * 0.5]).unwrap();
            proptest::prop_assert!(out.iter().all(|v| v.abs() < 1.0));
        }
    }
}
