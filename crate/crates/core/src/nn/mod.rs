//! Minimal reverse-mode automatic differentiation over dense f64 tensors,
//! with the layer set the forecaster needs (linear/ELU MLPs, GRU cells), the
//! Adam optimizer, and checkpoint serialization.
//!
//! The tape is dynamic: every training step rebuilds the graph, which keeps
//! variable-length CDE unrolls straightforward. All math is 64-bit and every
//! reduction has a fixed association order, so identical seeds and inputs
//! give bit-identical losses regardless of thread count.

mod checkpoint;
mod layers;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, TensorRecord, FORMAT_VERSION};
pub use layers::{FinalLayerInit, GruCell, GruStack, Linear, Mlp};
pub use optim::{adam_step, AdamParams, Binding, FlatGrads, ParamEntry, ParamStore};
pub use tape::{CustomOp, Gradients, Tape, Var};
pub use tensor::Tensor;

#[allow(unused_imports)]
pub(crate) use layers::{elu_scalar, sigmoid_scalar};

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::error::Result;

    /// Central-difference gradient check: `h = 1e-6` scaled per element
    /// magnitude, relative error bounded by `tol` (absolute below 1e-7).
    pub fn check_gradients<F>(inputs: &[Tensor], f: F, tol: f64)
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    {
        let eval = |perturbed: &[Tensor]| -> f64 {
            let mut tape = Tape::new();
            let vars: Vec<Var> = perturbed.iter().map(|t| tape.leaf(t.clone())).collect();
            let root = f(&mut tape, &vars).expect("graph construction");
            tape.value(root).item().expect("scalar root")
        };

        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let root = f(&mut tape, &vars).expect("graph construction");
        assert!(tape.value(root).is_scalar(), "root must be scalar");
        let grads = tape.backward(root).expect("backward");

        for (i, input) in inputs.iter().enumerate() {
            for e in 0..input.len() {
                let x = input.data()[e];
                let h = 1e-6 * x.abs().max(1.0);
                let mut plus = inputs.to_vec();
                plus[i].data_mut()[e] = x + h;
                let mut minus = inputs.to_vec();
                minus[i].data_mut()[e] = x - h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let ad = grads
                    .get(vars[i])
                    .map(|g| g.data()[e])
                    .unwrap_or(0.0);
                let scale = fd.abs().max(ad.abs());
                if scale < 1e-7 {
                    assert!(
                        (fd - ad).abs() < 1e-7,
                        "input {i} elem {e}: fd {fd:.3e} vs ad {ad:.3e}"
                    );
                } else {
                    let rel = (fd - ad).abs() / scale;
                    assert!(
                        rel < tol,
                        "input {i} elem {e}: fd {fd:.6e} vs ad {ad:.6e} (rel {rel:.3e})"
                    );
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::nn::testutil::check_gradients;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(lo..hi)).collect()
    }

    /// Random values bounded away from zero (for kinked or singular ops).
    fn rand_vec_away_from_zero(rng: &mut ChaCha8Rng, n: usize, min_abs: f64) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * rng.random_range(min_abs..1.5)
            })
            .collect()
    }

    #[test]
    fn elu_matches_definition() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0, 2.5, -1.0]));
        let y = tape.elu(x);
        let out = tape.value(y).data();
        assert_eq!(out[0], 0.0);
        assert_eq!(out[1], 2.5);
        assert!((out[2] - (1.0f64.exp().recip() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn frobenius_norm_of_identity() {
        let mut tape = Tape::new();
        let eye = tape.constant(
            Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap(),
        );
        let n = tape.frobenius_norm(eye);
        assert!((tape.value(n).item().unwrap() - 3.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn matmul_shape_contract() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![3, 4]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).shape(), &[2, 4]);

        let bad = tape.constant(Tensor::zeros(vec![4, 2]));
        assert!(matches!(tape.matmul(a, bad), Err(Error::Shape(_))));
        let bad_add = tape.add(a, b);
        assert!(matches!(bad_add, Err(Error::Shape(_))));
    }

    #[test]
    fn square_derivative_at_three() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn no_gradient_flows_into_constants() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let c = tape.constant(Tensor::scalar(5.0));
        let y = tape.mul(x, c).unwrap();
        let grads = tape.backward(y).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[5.0]);
    }

    #[test]
    fn replay_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::vector(rand_vec(&mut rng, 6, -1.0, 1.0)));
            let w = tape.leaf(Tensor::matrix(6, 6, rand_vec(&mut rng, 36, -1.0, 1.0)).unwrap());
            let h = tape.matmul(w, x).unwrap();
            let h = tape.tanh(h);
            let loss = tape.frobenius_norm(h);
            let grads = tape.backward(loss).unwrap();
            (
                tape.value(loss).item().unwrap().to_bits(),
                grads.get(w).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn elementwise_ops_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for trial in 0..10 {
            let n = 4 + trial % 3;
            let read = Tensor::vector(rand_vec(&mut rng, n, -1.0, 1.0));

            // add / sub / mul on two inputs.
            let a = Tensor::vector(rand_vec(&mut rng, n, -1.0, 1.0));
            let b = Tensor::vector(rand_vec(&mut rng, n, -1.0, 1.0));
            for op in 0..3 {
                let read = read.clone();
                check_gradients(
                    &[a.clone(), b.clone()],
                    move |tape, vars| {
                        let y = match op {
                            0 => tape.add(vars[0], vars[1])?,
                            1 => tape.sub(vars[0], vars[1])?,
                            _ => tape.mul(vars[0], vars[1])?,
                        };
                        let r = tape.constant(read.clone());
                        tape.dot(y, r)
                    },
                    1e-4,
                );
            }

            // Smooth unaries.
            let x = Tensor::vector(rand_vec(&mut rng, n, -1.4, 1.4));
            for op in 0..5 {
                let read = read.clone();
                check_gradients(
                    &[x.clone()],
                    move |tape, vars| {
                        let y = match op {
                            0 => tape.sigmoid(vars[0]),
                            1 => tape.tanh(vars[0]),
                            2 => tape.softplus(vars[0]),
                            3 => tape.sin(vars[0]),
                            _ => tape.cos(vars[0]),
                        };
                        let r = tape.constant(read.clone());
                        tape.dot(y, r)
                    },
                    1e-4,
                );
            }

            // Kinked / singular unaries on restricted domains.
            let x_kink = Tensor::vector(rand_vec_away_from_zero(&mut rng, n, 0.05));
            let read_k = read.clone();
            check_gradients(
                &[x_kink],
                move |tape, vars| {
                    let y = tape.elu(vars[0]);
                    let r = tape.constant(read_k.clone());
                    tape.dot(y, r)
                },
                1e-4,
            );
            let x_pos = Tensor::vector(rand_vec(&mut rng, n, 0.1, 2.0));
            let read_s = read.clone();
            check_gradients(
                &[x_pos],
                move |tape, vars| {
                    let y = tape.sqrt(vars[0]);
                    let r = tape.constant(read_s.clone());
                    tape.dot(y, r)
                },
                1e-4,
            );
            let x_inv = Tensor::vector(rand_vec_away_from_zero(&mut rng, n, 0.2));
            let read_i = read.clone();
            check_gradients(
                &[x_inv],
                move |tape, vars| {
                    let y = tape.recip(vars[0]);
                    let r = tape.constant(read_i.clone());
                    tape.dot(y, r)
                },
                1e-4,
            );
        }
    }

    #[test]
    fn structural_ops_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..10 {
            // matmul (matrix x matrix) and (matrix x vector).
            let a = Tensor::matrix(3, 4, rand_vec(&mut rng, 12, -1.0, 1.0)).unwrap();
            let b = Tensor::matrix(4, 2, rand_vec(&mut rng, 8, -1.0, 1.0)).unwrap();
            let read = Tensor::vector(rand_vec(&mut rng, 6, -1.0, 1.0));
            let read1 = read.clone();
            check_gradients(
                &[a.clone(), b],
                move |tape, vars| {
                    let y = tape.matmul(vars[0], vars[1])?;
                    let flat = tape.reshape(y, vec![6])?;
                    let r = tape.constant(read1.clone());
                    tape.dot(flat, r)
                },
                1e-4,
            );
            let x = Tensor::vector(rand_vec(&mut rng, 4, -1.0, 1.0));
            let read3 = Tensor::vector(rand_vec(&mut rng, 3, -1.0, 1.0));
            check_gradients(
                &[a, x],
                move |tape, vars| {
                    let y = tape.matmul(vars[0], vars[1])?;
                    let r = tape.constant(read3.clone());
                    tape.dot(y, r)
                },
                1e-4,
            );

            // scale, scale_const, affine_const.
            let s = Tensor::scalar(rng.random_range(-2.0..2.0));
            let v = Tensor::vector(rand_vec(&mut rng, 5, -1.0, 1.0));
            let read5 = Tensor::vector(rand_vec(&mut rng, 5, -1.0, 1.0));
            let read5b = read5.clone();
            check_gradients(
                &[s, v.clone()],
                move |tape, vars| {
                    let y = tape.scale(vars[0], vars[1])?;
                    let r = tape.constant(read5b.clone());
                    tape.dot(y, r)
                },
                1e-4,
            );
            let read5c = read5.clone();
            check_gradients(
                &[v.clone()],
                move |tape, vars| {
                    let y = tape.scale_const(1.7, vars[0]);
                    let y = tape.affine_const(-0.5, 0.3, y);
                    let r = tape.constant(read5c.clone());
                    tape.dot(y, r)
                },
                1e-4,
            );

            // slice, concat, sum, frobenius norm.
            let u = Tensor::vector(rand_vec(&mut rng, 7, -1.0, 1.0));
            let w = Tensor::vector(rand_vec(&mut rng, 3, -1.0, 1.0));
            let read4 = Tensor::vector(rand_vec(&mut rng, 5, -1.0, 1.0));
            check_gradients(
                &[u.clone(), w],
                move |tape, vars| {
                    let part = tape.slice(vars[0], 2, 2)?;
                    let joined = tape.concat(&[part, vars[1]])?;
                    let r = tape.constant(read4.clone());
                    tape.dot(joined, r)
                },
                1e-4,
            );
            check_gradients(
                &[u.clone()],
                move |tape, vars| Ok(tape.sum(vars[0])),
                1e-4,
            );
            check_gradients(
                &[u],
                move |tape, vars| Ok(tape.frobenius_norm(vars[0])),
                1e-4,
            );
        }
    }
}
