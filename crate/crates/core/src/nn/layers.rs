//! Linear layers, ELU MLPs and stacked GRU cells.
//!
//! Every layer exists in two forms that share the same parameters: a tape
//! forward for training and a plain forward for inference (the adaptive
//! solver calls the vector field far too often to justify taping). A parity
//! test keeps the two in lockstep.

use rand::Rng;

use crate::error::Result;

use super::optim::{Binding, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::{matvec, Tensor};

pub(crate) fn elu_scalar(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Uniform init on +-1/sqrt(fan_in).
fn uniform_init<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, len: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}

/// A fully connected layer `y = W x + b` with named parameters.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight_name: String,
    pub bias_name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Registers parameters. `zero_weights` zero-initializes `W` (used for
    /// decode heads so the model starts at a well-defined output), and
    /// `bias_init` overrides the default uniform bias.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        zero_weights: bool,
        bias_init: Option<&[f64]>,
    ) -> Result<Linear> {
        let w = if zero_weights {
            vec![0.0; in_dim * out_dim]
        } else {
            uniform_init(rng, in_dim, in_dim * out_dim)
        };
        let b = match bias_init {
            Some(b) => b.to_vec(),
            None if zero_weights => vec![0.0; out_dim],
            None => uniform_init(rng, in_dim, out_dim),
        };
        let weight_name = format!("{name}.weight");
        let bias_name = format!("{name}.bias");
        store.insert(&weight_name, Tensor::matrix(out_dim, in_dim, w)?)?;
        store.insert(&bias_name, Tensor::vector(b))?;
        Ok(Linear {
            weight_name,
            bias_name,
            in_dim,
            out_dim,
        })
    }

    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        store: &ParamStore,
        x: Var,
    ) -> Result<Var> {
        let w = binding.var(store, &self.weight_name)?;
        let b = binding.var(store, &self.bias_name)?;
        let wx = tape.matmul(w, x)?;
        tape.add(wx, b)
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        let w = store.get(&self.weight_name)?;
        let b = store.get(&self.bias_name)?;
        let mut out = vec![0.0; self.out_dim];
        matvec(w.data(), x, self.out_dim, self.in_dim, &mut out);
        for (o, bv) in out.iter_mut().zip(b.data()) {
            *o += bv;
        }
        Ok(out)
    }
}

/// How the last MLP layer is initialized.
#[derive(Clone, Debug)]
pub enum FinalLayerInit {
    /// Uniform like every other layer.
    Standard,
    /// Zero weights with a fixed bias, so the initial output is constant.
    ZeroWithBias(Vec<f64>),
}

/// Feed-forward stack with ELU between consecutive linear layers.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        dims: &[usize],
        final_init: FinalLayerInit,
    ) -> Result<Mlp> {
        assert!(dims.len() >= 2, "MLP needs at least one layer");
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let last = i == dims.len() - 2;
            let (zero, bias) = match (&final_init, last) {
                (FinalLayerInit::ZeroWithBias(b), true) => (true, Some(b.as_slice())),
                _ => (false, None),
            };
            layers.push(Linear::init(
                store,
                rng,
                &format!("{prefix}.l{i}"),
                dims[i],
                dims[i + 1],
                zero,
                bias,
            )?);
        }
        Ok(Mlp { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        store: &ParamStore,
        x: Var,
    ) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward_tape(tape, binding, store, h)?;
            if i + 1 < self.layers.len() {
                h = tape.elu(h);
            }
        }
        Ok(h)
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(store, &h)?;
            if i + 1 < self.layers.len() {
                for v in &mut h {
                    *v = elu_scalar(*v);
                }
            }
        }
        Ok(h)
    }
}

/// Standard GRU cell (update/reset gates, candidate state):
/// `r = sig(W_ir x + b_ir + W_hr h + b_hr)`,
/// `z = sig(W_iz x + b_iz + W_hz h + b_hz)`,
/// `n = tanh(W_in x + b_in + r * (W_hn h + b_hn))`,
/// `h' = (1 - z) * n + z * h`.
#[derive(Clone, Debug)]
pub struct GruCell {
    prefix: String,
    pub in_dim: usize,
    pub hidden: usize,
}

const GATE_NAMES: [&str; 3] = ["r", "z", "n"];

impl GruCell {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
    ) -> Result<GruCell> {
        for gate in GATE_NAMES {
            store.insert(
                &format!("{prefix}.w_i{gate}"),
                Tensor::matrix(hidden, in_dim, uniform_init(rng, in_dim, hidden * in_dim))?,
            )?;
            store.insert(
                &format!("{prefix}.b_i{gate}"),
                Tensor::vector(uniform_init(rng, in_dim, hidden)),
            )?;
            store.insert(
                &format!("{prefix}.w_h{gate}"),
                Tensor::matrix(hidden, hidden, uniform_init(rng, hidden, hidden * hidden))?,
            )?;
            store.insert(
                &format!("{prefix}.b_h{gate}"),
                Tensor::vector(uniform_init(rng, hidden, hidden)),
            )?;
        }
        Ok(GruCell {
            prefix: prefix.to_string(),
            in_dim,
            hidden,
        })
    }

    fn gate_tape(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        store: &ParamStore,
        gate: &str,
        x: Var,
        h: Var,
    ) -> Result<(Var, Var)> {
        let w_i = binding.var(store, &format!("{}.w_i{gate}", self.prefix))?;
        let b_i = binding.var(store, &format!("{}.b_i{gate}", self.prefix))?;
        let w_h = binding.var(store, &format!("{}.w_h{gate}", self.prefix))?;
        let b_h = binding.var(store, &format!("{}.b_h{gate}", self.prefix))?;
        let xi = tape.matmul(w_i, x)?;
        let xi = tape.add(xi, b_i)?;
        let hh = tape.matmul(w_h, h)?;
        let hh = tape.add(hh, b_h)?;
        Ok((xi, hh))
    }

    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        store: &ParamStore,
        x: Var,
        h: Var,
    ) -> Result<Var> {
        let (ri, rh) = self.gate_tape(tape, binding, store, "r", x, h)?;
        let r_pre = tape.add(ri, rh)?;
        let r = tape.sigmoid(r_pre);

        let (zi, zh) = self.gate_tape(tape, binding, store, "z", x, h)?;
        let z_pre = tape.add(zi, zh)?;
        let z = tape.sigmoid(z_pre);

        let (ni, nh) = self.gate_tape(tape, binding, store, "n", x, h)?;
        let gated = tape.mul(r, nh)?;
        let n_pre = tape.add(ni, gated)?;
        let n = tape.tanh(n_pre);

        let one_minus_z = tape.affine_const(-1.0, 1.0, z);
        let a = tape.mul(one_minus_z, n)?;
        let b = tape.mul(z, h)?;
        tape.add(a, b)
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        let gate = |gate: &str, with_h: bool| -> Result<(Vec<f64>, Vec<f64>)> {
            let w_i = store.get(&format!("{}.w_i{gate}", self.prefix))?;
            let b_i = store.get(&format!("{}.b_i{gate}", self.prefix))?;
            let w_h = store.get(&format!("{}.w_h{gate}", self.prefix))?;
            let b_h = store.get(&format!("{}.b_h{gate}", self.prefix))?;
            let mut xi = vec![0.0; self.hidden];
            matvec(w_i.data(), x, self.hidden, self.in_dim, &mut xi);
            for (v, b) in xi.iter_mut().zip(b_i.data()) {
                *v += b;
            }
            let mut hh = vec![0.0; self.hidden];
            if with_h {
                matvec(w_h.data(), h, self.hidden, self.hidden, &mut hh);
                for (v, b) in hh.iter_mut().zip(b_h.data()) {
                    *v += b;
                }
            }
            Ok((xi, hh))
        };
        let (ri, rh) = gate("r", true)?;
        let r: Vec<f64> = ri
            .iter()
            .zip(&rh)
            .map(|(a, b)| sigmoid_scalar(a + b))
            .collect();
        let (zi, zh) = gate("z", true)?;
        let z: Vec<f64> = zi
            .iter()
            .zip(&zh)
            .map(|(a, b)| sigmoid_scalar(a + b))
            .collect();
        let (ni, nh) = gate("n", true)?;
        let mut out = vec![0.0; self.hidden];
        for i in 0..self.hidden {
            let n = (ni[i] + r[i] * nh[i]).tanh();
            out[i] = (1.0 - z[i]) * n + z[i] * h[i];
        }
        Ok(out)
    }
}

/// Stacked GRU cells; layer `i` feeds layer `i + 1`.
#[derive(Clone, Debug)]
pub struct GruStack {
    pub cells: Vec<GruCell>,
    pub hidden: usize,
}

impl GruStack {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        layers: usize,
    ) -> Result<GruStack> {
        let mut cells = Vec::new();
        for i in 0..layers {
            let cell_in = if i == 0 { in_dim } else { hidden };
            cells.push(GruCell::init(
                store,
                rng,
                &format!("{prefix}.cell{i}"),
                cell_in,
                hidden,
            )?);
        }
        Ok(GruStack { cells, hidden })
    }

    pub fn zero_state(&self) -> Vec<Vec<f64>> {
        self.cells.iter().map(|c| vec![0.0; c.hidden]).collect()
    }

    pub fn zero_state_tape(&self, tape: &mut Tape) -> Vec<Var> {
        self.cells
            .iter()
            .map(|c| tape.constant(Tensor::vector(vec![0.0; c.hidden])))
            .collect()
    }

    /// One time step through the stack; returns the new per-layer states.
    pub fn step_tape(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        store: &ParamStore,
        x: Var,
        states: &[Var],
    ) -> Result<Vec<Var>> {
        let mut new_states = Vec::with_capacity(self.cells.len());
        let mut input = x;
        for (cell, h) in self.cells.iter().zip(states) {
            let h_new = cell.forward_tape(tape, binding, store, input, *h)?;
            new_states.push(h_new);
            input = h_new;
        }
        Ok(new_states)
    }

    pub fn step(&self, store: &ParamStore, x: &[f64], states: &mut [Vec<f64>]) -> Result<()> {
        let mut input = x.to_vec();
        for (cell, h) in self.cells.iter().zip(states.iter_mut()) {
            let h_new = cell.forward(store, &input, h)?;
            input = h_new.clone();
            *h = h_new;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_tape_and_plain_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut store = ParamStore::new();
        let layer = Linear::init(&mut store, &mut rng, "lin", 4, 3, false, None).unwrap();
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();

        let plain = layer.forward(&store, &x).unwrap();
        let mut tape = Tape::new();
        let binding = Binding::bind_all(&mut tape, &store);
        let xv = tape.constant(Tensor::vector(x));
        let y = layer.forward_tape(&mut tape, &binding, &store, xv).unwrap();
        assert_eq!(tape.value(y).data(), plain.as_slice());
    }

    #[test]
    fn mlp_tape_and_plain_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(
            &mut store,
            &mut rng,
            "mlp",
            &[5, 7, 7, 3],
            FinalLayerInit::Standard,
        )
        .unwrap();
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let plain = mlp.forward(&store, &x).unwrap();
        let mut tape = Tape::new();
        let binding = Binding::bind_all(&mut tape, &store);
        let xv = tape.constant(Tensor::vector(x));
        let y = mlp.forward_tape(&mut tape, &binding, &store, xv).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(&plain) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn zero_final_layer_outputs_its_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(
            &mut store,
            &mut rng,
            "dec",
            &[8, 4, 6],
            FinalLayerInit::ZeroWithBias(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
        )
        .unwrap();
        let y = mlp.forward(&store, &[0.3; 8]).unwrap();
        assert_eq!(y, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn gru_tape_and_plain_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let mut store = ParamStore::new();
        let stack = GruStack::new(&mut store, &mut rng, "gru", 4, 6, 3).unwrap();
        let xs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();

        let mut states = stack.zero_state();
        for x in &xs {
            stack.step(&store, x, &mut states).unwrap();
        }

        let mut tape = Tape::new();
        let binding = Binding::bind_all(&mut tape, &store);
        let mut tape_states = stack.zero_state_tape(&mut tape);
        for x in &xs {
            let xv = tape.constant(Tensor::vector(x.clone()));
            tape_states = stack
                .step_tape(&mut tape, &binding, &store, xv, &tape_states)
                .unwrap();
        }
        let top = tape.value(*tape_states.last().unwrap());
        for (a, b) in top.data().iter().zip(states.last().unwrap()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(
            &mut store,
            &mut rng,
            "mlp",
            &[4, 6, 6, 6, 2],
            FinalLayerInit::Standard,
        )
        .unwrap();
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
        let weights: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();

        let inputs: Vec<Tensor> = store.entries().iter().map(|e| e.value.clone()).collect();
        let store_ref = &store;
        let mlp_ref = &mlp;
        check_gradients(
            &inputs,
            move |tape, vars| {
                // Rebind the leaf values as the store parameters.
                let binding = Binding::from_vars(vars.to_vec());
                let xv = tape.constant(Tensor::vector(x.clone()));
                let y = mlp_ref.forward_tape(tape, &binding, store_ref, xv)?;
                let w = tape.constant(Tensor::vector(weights.clone()));
                tape.dot(y, w)
            },
            1e-4,
        );
    }

    #[test]
    fn gru_gradients_match_finite_differences_over_five_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let mut store = ParamStore::new();
        let stack = GruStack::new(&mut store, &mut rng, "g", 3, 4, 1).unwrap();
        let xs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let read: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();

        let inputs: Vec<Tensor> = store.entries().iter().map(|e| e.value.clone()).collect();
        let store_ref = &store;
        let stack_ref = &stack;
        check_gradients(
            &inputs,
            move |tape, vars| {
                let binding = Binding::from_vars(vars.to_vec());
                let mut states = stack_ref.zero_state_tape(tape);
                for x in &xs {
                    let xv = tape.constant(Tensor::vector(x.clone()));
                    states = stack_ref.step_tape(tape, &binding, store_ref, xv, &states)?;
                }
                let w = tape.constant(Tensor::vector(read.clone()));
                tape.dot(states[0], w)
            },
            1e-4,
        );
    }
}
