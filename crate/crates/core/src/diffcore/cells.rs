//! LSTM and GRU cells composed from tape primitives, so their backward pass
//! is exact by construction and covered by the finite-difference checker.

use rand::Rng;

use super::store::{Init, ParamId, ParameterStore};
use super::tape::{Activation, NodeId, Tape};
use super::{DiffError, Real, Shape};

/// Gate order: input, forget, candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    pub wx: [ParamId; 4],
    pub wh: [ParamId; 4],
    pub b: [ParamId; 4],
}

impl LstmParams {
    pub fn register<F: Real, R: Rng>(
        store: &mut ParameterStore<F>,
        rng: &mut R,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
    ) -> Result<Self, DiffError> {
        let gates = ["i", "f", "g", "o"];
        let mut wx = [ParamId(0); 4];
        let mut wh = [ParamId(0); 4];
        let mut b = [ParamId(0); 4];
        for (k, gate) in gates.iter().enumerate() {
            wx[k] = store.register(
                &format!("{prefix}.wx_{gate}"),
                Shape::Matrix {
                    rows: input_dim,
                    cols: hidden_dim,
                },
                Init::Glorot {
                    fan_in: input_dim,
                    fan_out: hidden_dim,
                },
                rng,
            )?;
            wh[k] = store.register(
                &format!("{prefix}.wh_{gate}"),
                Shape::Matrix {
                    rows: hidden_dim,
                    cols: hidden_dim,
                },
                Init::Glorot {
                    fan_in: hidden_dim,
                    fan_out: hidden_dim,
                },
                rng,
            )?;
            b[k] = store.register(
                &format!("{prefix}.b_{gate}"),
                Shape::Vector(hidden_dim),
                Init::Zeros,
                rng,
            )?;
        }
        Ok(LstmParams { wx, wh, b })
    }
}

/// One LSTM step: i,f,o are sigmoid gates, g the tanh candidate,
/// c = f*c_prev + i*g and h = o*tanh(c).
pub fn lstm_cell<F: Real>(
    tape: &mut Tape<F>,
    store: &ParameterStore<F>,
    params: &LstmParams,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
) -> Result<(NodeId, NodeId), DiffError> {
    let mut pre = [None; 4];
    for (k, slot) in pre.iter_mut().enumerate() {
        let wx = tape.param(store, params.wx[k])?;
        let wh = tape.param(store, params.wh[k])?;
        let b = tape.param(store, params.b[k])?;
        let from_x = tape.affine(x, wx, b)?;
        let from_h = tape.matvec(h_prev, wh)?;
        *slot = Some(tape.add(from_x, from_h)?);
    }
    let i = tape.activation(Activation::Sigmoid, pre[0].unwrap())?;
    let f = tape.activation(Activation::Sigmoid, pre[1].unwrap())?;
    let g = tape.activation(Activation::Tanh, pre[2].unwrap())?;
    let o = tape.activation(Activation::Sigmoid, pre[3].unwrap())?;
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let c_act = tape.activation(Activation::Tanh, c)?;
    let h = tape.mul(o, c_act)?;
    Ok((h, c))
}

/// Gate order: update, reset, candidate.
#[derive(Clone, Copy, Debug)]
pub struct GruParams {
    pub wx: [ParamId; 3],
    pub wh: [ParamId; 3],
    pub b: [ParamId; 3],
}

impl GruParams {
    pub fn register<F: Real, R: Rng>(
        store: &mut ParameterStore<F>,
        rng: &mut R,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
    ) -> Result<Self, DiffError> {
        let gates = ["z", "r", "n"];
        let mut wx = [ParamId(0); 3];
        let mut wh = [ParamId(0); 3];
        let mut b = [ParamId(0); 3];
        for (k, gate) in gates.iter().enumerate() {
            wx[k] = store.register(
                &format!("{prefix}.wx_{gate}"),
                Shape::Matrix {
                    rows: input_dim,
                    cols: hidden_dim,
                },
                Init::Glorot {
                    fan_in: input_dim,
                    fan_out: hidden_dim,
                },
                rng,
            )?;
            wh[k] = store.register(
                &format!("{prefix}.wh_{gate}"),
                Shape::Matrix {
                    rows: hidden_dim,
                    cols: hidden_dim,
                },
                Init::Glorot {
                    fan_in: hidden_dim,
                    fan_out: hidden_dim,
                },
                rng,
            )?;
            b[k] = store.register(
                &format!("{prefix}.b_{gate}"),
                Shape::Vector(hidden_dim),
                Init::Zeros,
                rng,
            )?;
        }
        Ok(GruParams { wx, wh, b })
    }
}

/// One GRU step. The update gate z blends the candidate in:
/// h = z*n + (1-z)*h_prev, so z=0 keeps the previous state.
pub fn gru_cell<F: Real>(
    tape: &mut Tape<F>,
    store: &ParameterStore<F>,
    params: &GruParams,
    x: NodeId,
    h_prev: NodeId,
) -> Result<NodeId, DiffError> {
    let hidden = tape.value(h_prev).len();
    let gate_pre = |tape: &mut Tape<F>, k: usize| -> Result<NodeId, DiffError> {
        let wx = tape.param(store, params.wx[k])?;
        let wh = tape.param(store, params.wh[k])?;
        let b = tape.param(store, params.b[k])?;
        let from_x = tape.affine(x, wx, b)?;
        let from_h = tape.matvec(h_prev, wh)?;
        tape.add(from_x, from_h)
    };
    let z_pre = gate_pre(tape, 0)?;
    let z = tape.activation(Activation::Sigmoid, z_pre)?;
    let r_pre = gate_pre(tape, 1)?;
    let r = tape.activation(Activation::Sigmoid, r_pre)?;

    let wxn = tape.param(store, params.wx[2])?;
    let whn = tape.param(store, params.wh[2])?;
    let bn = tape.param(store, params.b[2])?;
    let from_x = tape.affine(x, wxn, bn)?;
    let from_h = tape.matvec(h_prev, whn)?;
    let gated_h = tape.mul(r, from_h)?;
    let n_pre = tape.add(from_x, gated_h)?;
    let n = tape.activation(Activation::Tanh, n_pre)?;

    let ones = tape.constant(super::Tensor::ones(Shape::Vector(hidden)))?;
    let keep = tape.sub(ones, z)?;
    let kept = tape.mul(keep, h_prev)?;
    let written = tape.mul(z, n)?;
    tape.add(written, kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_store<F: Real>(
        lstm: bool,
        input: usize,
        hidden: usize,
    ) -> (ParameterStore<F>, Option<LstmParams>, Option<GruParams>) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParameterStore::new();
        if lstm {
            let p = LstmParams::register(&mut store, &mut rng, "cell", input, hidden).unwrap();
            // zero out the glorot-initialized weights for the trivial cases
            for k in 0..4 {
                store.get_mut(p.wx[k]).value_mut().fill(F::zero());
                store.get_mut(p.wh[k]).value_mut().fill(F::zero());
            }
            (store, Some(p), None)
        } else {
            let p = GruParams::register(&mut store, &mut rng, "cell", input, hidden).unwrap();
            for k in 0..3 {
                store.get_mut(p.wx[k]).value_mut().fill(F::zero());
                store.get_mut(p.wh[k]).value_mut().fill(F::zero());
            }
            (store, None, Some(p))
        }
    }

    #[test]
    fn lstm_all_zero_params_gives_zero_state() {
        let (store, lstm, _) = zero_store::<f64>(true, 2, 3);
        let params = lstm.unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.7, -0.3])).unwrap();
        let h0 = tape.constant(Tensor::zeros(Shape::Vector(3))).unwrap();
        let c0 = tape.constant(Tensor::zeros(Shape::Vector(3))).unwrap();
        let (h, c) = lstm_cell(&mut tape, &store, &params, x, h0, c0).unwrap();
        assert_eq!(tape.value(h).data(), &[0.0, 0.0, 0.0]);
        assert_eq!(tape.value(c).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn lstm_saturated_gates_remember_perfectly() {
        // forget bias strongly positive -> f ~= 1; input bias strongly negative -> i ~= 0
        let (mut store, lstm, _) = zero_store::<f64>(true, 1, 2);
        let params = lstm.unwrap();
        store.get_mut(params.b[1]).value_mut().fill(40.0);
        store.get_mut(params.b[0]).value_mut().fill(-40.0);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.9])).unwrap();
        let h0 = tape.constant(Tensor::vector(vec![0.1, 0.2])).unwrap();
        let c0 = tape.constant(Tensor::vector(vec![-0.5, 0.25])).unwrap();
        let (_, c) = lstm_cell(&mut tape, &store, &params, x, h0, c0).unwrap();
        for (got, want) in tape.value(c).data().iter().zip(&[-0.5, 0.25]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn lstm_scalar_hand_case() {
        let mut store = ParameterStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = LstmParams::register(&mut store, &mut rng, "cell", 1, 1).unwrap();
        let weights = [
            (params.wx[0], 0.1),
            (params.wh[0], 0.2),
            (params.b[0], 0.05),
            (params.wx[1], -0.3),
            (params.wh[1], 0.4),
            (params.b[1], 0.1),
            (params.wx[2], 0.7),
            (params.wh[2], -0.5),
            (params.b[2], 0.0),
            (params.wx[3], 0.2),
            (params.wh[3], 0.3),
            (params.b[3], -0.1),
        ];
        for (id, v) in weights {
            store.get_mut(id).value_mut().fill(v);
        }
        let (x, h_prev, c_prev) = (0.5, 0.1, -0.2);
        let mut tape = Tape::new();
        let xn = tape.constant(Tensor::vector(vec![x])).unwrap();
        let hn = tape.constant(Tensor::vector(vec![h_prev])).unwrap();
        let cn = tape.constant(Tensor::vector(vec![c_prev])).unwrap();
        let (h, c) = lstm_cell(&mut tape, &store, &params, xn, hn, cn).unwrap();

        // independent scalar arithmetic
        let sigma = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = sigma(0.1 * x + 0.2 * h_prev + 0.05);
        let f = sigma(-0.3 * x + 0.4 * h_prev + 0.1);
        let g = (0.7 * x + -0.5 * h_prev).tanh();
        let o = sigma(0.2 * x + 0.3 * h_prev - 0.1);
        let c_want = f * c_prev + i * g;
        let h_want = o * c_want.tanh();

        assert!((tape.value(c).data()[0] - c_want).abs() < 1e-12);
        assert!((tape.value(h).data()[0] - h_want).abs() < 1e-12);
    }

    #[test]
    fn gru_all_zero_params_gives_zero_state() {
        let (store, _, gru) = zero_store::<f64>(false, 2, 2);
        let params = gru.unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.4, 0.6])).unwrap();
        let h0 = tape.constant(Tensor::zeros(Shape::Vector(2))).unwrap();
        let h = gru_cell(&mut tape, &store, &params, x, h0).unwrap();
        assert_eq!(tape.value(h).data(), &[0.0, 0.0]);
    }

    #[test]
    fn gru_zero_update_gate_keeps_previous_state() {
        let (mut store, _, gru) = zero_store::<f64>(false, 1, 2);
        let params = gru.unwrap();
        store.get_mut(params.b[0]).value_mut().fill(-40.0); // z ~= 0
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.8])).unwrap();
        let h0 = tape.constant(Tensor::vector(vec![0.3, -0.7])).unwrap();
        let h = gru_cell(&mut tape, &store, &params, x, h0).unwrap();
        for (got, want) in tape.value(h).data().iter().zip(&[0.3, -0.7]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn gru_scalar_hand_case() {
        let mut store = ParameterStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = GruParams::register(&mut store, &mut rng, "cell", 1, 1).unwrap();
        let weights = [
            (params.wx[0], 0.3),
            (params.wh[0], -0.2),
            (params.b[0], 0.1),
            (params.wx[1], 0.5),
            (params.wh[1], 0.4),
            (params.b[1], -0.05),
            (params.wx[2], -0.6),
            (params.wh[2], 0.7),
            (params.b[2], 0.2),
        ];
        for (id, v) in weights {
            store.get_mut(id).value_mut().fill(v);
        }
        let (x, h_prev) = (0.25, -0.4);
        let mut tape = Tape::new();
        let xn = tape.constant(Tensor::vector(vec![x])).unwrap();
        let hn = tape.constant(Tensor::vector(vec![h_prev])).unwrap();
        let h = gru_cell(&mut tape, &store, &params, xn, hn).unwrap();

        let sigma = |v: f64| 1.0 / (1.0 + (-v).exp());
        let z = sigma(0.3 * x + -0.2 * h_prev + 0.1);
        let r = sigma(0.5 * x + 0.4 * h_prev - 0.05);
        let n = (-0.6 * x + 0.2 + r * (0.7 * h_prev)).tanh();
        let want = z * n + (1.0 - z) * h_prev;
        assert!((tape.value(h).data()[0] - want).abs() < 1e-12);
    }
}
