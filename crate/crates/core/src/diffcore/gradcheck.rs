//! Central-difference verification of analytic gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::store::ParameterStore;
use super::DiffError;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub entries_checked: usize,
}

/// Compares the analytic gradient of every parameter entry against the
/// central difference (f(t+e) - f(t-e)) / 2e. Parameters with more entries
/// than `sample_cap` are checked on a seeded sample of `sample_cap` entries.
///
/// `eval` must zero the gradient buffers, run one deterministic forward and
/// backward pass, and return the scalar loss. It runs in 64-bit mode, where
/// the relative error |a-n| / max(|a|,|n|,1e-8) resolves to ~1e-9 for linear
/// graphs and stays below 1e-4 for smooth nonlinear ones.
pub fn grad_check<Eval>(
    store: &mut ParameterStore<f64>,
    eps: f64,
    sample_cap: usize,
    seed: u64,
    mut eval: Eval,
) -> Result<GradCheckReport, DiffError>
where
    Eval: FnMut(&mut ParameterStore<f64>) -> Result<f64, DiffError>,
{
    let base_loss = eval(store)?;
    if !base_loss.is_finite() {
        return Err(DiffError::NonFinite { op: "grad_check" });
    }
    let analytic: Vec<Vec<f64>> = store.iter().map(|(_, p)| p.grad().data().to_vec()).collect();
    let names: Vec<String> = store.iter().map(|(_, p)| p.name().to_string()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        entries_checked: 0,
    };

    for pi in 0..analytic.len() {
        let id = super::store::ParamId(pi);
        let len = analytic[pi].len();
        let indices: Vec<usize> = if len <= sample_cap {
            (0..len).collect()
        } else {
            rand::seq::index::sample(&mut rng, len, sample_cap).into_vec()
        };
        for i in indices {
            let orig = store.get(id).value().data()[i];
            store.get_mut(id).value_mut().data_mut()[i] = orig + eps;
            let plus = eval(store)?;
            store.get_mut(id).value_mut().data_mut()[i] = orig - eps;
            let minus = eval(store)?;
            store.get_mut(id).value_mut().data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(DiffError::NonFinite { op: "grad_check" });
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[pi][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.entries_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = names[pi].clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{Init, Shape, Tape, Tensor};
    use rand::Rng;

    #[test]
    fn linear_graph_checks_to_rounding() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParameterStore::<f64>::new();
        let w = store
            .register(
                "w",
                Shape::Matrix { rows: 3, cols: 2 },
                Init::Glorot { fan_in: 3, fan_out: 2 },
                &mut rng,
            )
            .unwrap();
        let b = store
            .register("b", Shape::Vector(2), Init::Zeros, &mut rng)
            .unwrap();
        let x_data = vec![0.3, -0.8, 1.4];
        let probe = vec![0.7, -0.2];
        let report = grad_check(&mut store, 1e-4, 200, 5, |store| {
            store.zero_grads();
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::vector(x_data.clone()))?;
            let wn = tape.param(store, w)?;
            let bn = tape.param(store, b)?;
            let y = tape.affine(x, wn, bn)?;
            let p = tape.constant(Tensor::vector(probe.clone()))?;
            let loss = tape.dot(y, p)?;
            let value = tape.value(loss).data()[0];
            tape.backward(loss, store)?;
            Ok(value)
        })
        .unwrap();
        assert_eq!(report.entries_checked, 8);
        assert!(
            report.max_rel_err < 1e-9,
            "linear FD should be exact to rounding, got {}",
            report.max_rel_err
        );
    }

    #[test]
    fn nonlinear_graph_checks_within_1e4() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut store = ParameterStore::<f64>::new();
        let w1 = store
            .register(
                "w1",
                Shape::Matrix { rows: 4, cols: 3 },
                Init::Glorot { fan_in: 4, fan_out: 3 },
                &mut rng,
            )
            .unwrap();
        let b1 = store
            .register("b1", Shape::Vector(3), Init::Zeros, &mut rng)
            .unwrap();
        let w2 = store
            .register(
                "w2",
                Shape::Matrix { rows: 3, cols: 3 },
                Init::Glorot { fan_in: 3, fan_out: 3 },
                &mut rng,
            )
            .unwrap();
        let x_data: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let report = grad_check(&mut store, 1e-4, 200, 5, |store| {
            store.zero_grads();
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::vector(x_data.clone()))?;
            let w1n = tape.param(store, w1)?;
            let b1n = tape.param(store, b1)?;
            let w2n = tape.param(store, w2)?;
            let hidden = tape.affine(x, w1n, b1n)?;
            let act = tape.activation(crate::diffcore::Activation::Tanh, hidden)?;
            let logits = tape.matvec(act, w2n)?;
            let (_, loss) = tape.softmax_xent(logits, 1)?;
            let value = tape.value(loss).data()[0];
            tape.backward(loss, store)?;
            Ok(value)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "got {}", report.max_rel_err);
    }

    #[test]
    fn corrupted_backward_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut store = ParameterStore::<f64>::new();
        let w = store
            .register(
                "w",
                Shape::Matrix { rows: 2, cols: 2 },
                Init::Glorot { fan_in: 2, fan_out: 2 },
                &mut rng,
            )
            .unwrap();
        let report = grad_check(&mut store, 1e-4, 200, 5, |store| {
            store.zero_grads();
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::vector(vec![0.5, -1.0]))?;
            let wn = tape.param(store, w)?;
            let y = tape.matvec(x, wn)?;
            let p = tape.constant(Tensor::vector(vec![1.0, 2.0]))?;
            let loss = tape.dot(y, p)?;
            let value = tape.value(loss).data()[0];
            tape.backward(loss, store)?;
            // deliberately corrupt the analytic gradient
            for g in store.get_mut(w).grad_mut().data_mut() {
                *g = *g * 1.5 + 0.05;
            }
            Ok(value)
        })
        .unwrap();
        assert!(report.max_rel_err > 1e-2, "got {}", report.max_rel_err);
        assert_eq!(report.worst_param, "w");
    }

    #[test]
    fn sampling_caps_large_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut store = ParameterStore::<f64>::new();
        let w = store
            .register(
                "w",
                Shape::Matrix { rows: 30, cols: 30 },
                Init::Glorot { fan_in: 30, fan_out: 30 },
                &mut rng,
            )
            .unwrap();
        let x_data: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p_data: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let report = grad_check(&mut store, 1e-4, 200, 5, |store| {
            store.zero_grads();
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::vector(x_data.clone()))?;
            let wn = tape.param(store, w)?;
            let y = tape.matvec(x, wn)?;
            let p = tape.constant(Tensor::vector(p_data.clone()))?;
            let loss = tape.dot(y, p)?;
            let value = tape.value(loss).data()[0];
            tape.backward(loss, store)?;
            Ok(value)
        })
        .unwrap();
        assert_eq!(report.entries_checked, 200);
        assert!(report.max_rel_err < 1e-9);
    }
}
