//! Named trainable tensors with paired gradient buffers.

use std::collections::HashMap;

use rand::Rng;

use super::{DiffError, Real, Shape, Tensor};

/// Stable handle to a parameter inside one [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct ParamTensor<F> {
    name: String,
    value: Tensor<F>,
    grad: Tensor<F>,
}

impl<F: Real> ParamTensor<F> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> Shape {
        self.value.shape()
    }

    pub fn value(&self) -> &Tensor<F> {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor<F> {
        &mut self.value
    }

    pub fn grad(&self) -> &Tensor<F> {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut Tensor<F> {
        &mut self.grad
    }

    /// Simultaneous mutable value and read-only grad, for optimizer updates.
    pub fn value_and_grad(&mut self) -> (&mut Tensor<F>, &Tensor<F>) {
        (&mut self.value, &self.grad)
    }

    pub fn grad_norm(&self) -> f64 {
        self.grad
            .data()
            .iter()
            .map(|g| {
                let g = g.as_f64();
                g * g
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Initialization scheme for a registered parameter.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    /// Uniform(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
    Glorot { fan_in: usize, fan_out: usize },
}

/// Ordered map name -> parameter. Registration order is the iteration order,
/// so the parameter count and the RNG consumption are reproducible from the
/// configuration alone.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore<F> {
    params: Vec<ParamTensor<F>>,
    by_name: HashMap<String, usize>,
}

impl<F: Real> ParameterStore<F> {
    pub fn new() -> Self {
        ParameterStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn register<R: Rng>(
        &mut self,
        name: &str,
        shape: Shape,
        init: Init,
        rng: &mut R,
    ) -> Result<ParamId, DiffError> {
        let mut value = Tensor::zeros(shape);
        if let Init::Glorot { fan_in, fan_out } = init {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in value.data_mut() {
                *v = F::from_f64(rng.gen_range(-bound..bound));
            }
        }
        self.register_tensor(name, value)
    }

    pub fn register_tensor(&mut self, name: &str, value: Tensor<F>) -> Result<ParamId, DiffError> {
        if self.by_name.contains_key(name) {
            return Err(DiffError::DuplicateParam(name.to_string()));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.to_string(), id.0);
        let grad = Tensor::zeros(value.shape());
        self.params.push(ParamTensor {
            name: name.to_string(),
            value,
            grad,
        });
        Ok(id)
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor<F> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor<F> {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn value_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamTensor<F>)> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(F::zero());
        }
    }

    pub(crate) fn accumulate_grad(&mut self, index: usize, delta: &Tensor<F>) {
        let grad = self.params[index].grad.data_mut();
        for (g, d) in grad.iter_mut().zip(delta.data()) {
            *g = *g + *d;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn registration_is_ordered_and_unique() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParameterStore::<f32>::new();
        let a = store
            .register("a", Shape::Vector(3), Init::Zeros, &mut rng)
            .unwrap();
        let b = store
            .register(
                "b",
                Shape::Matrix { rows: 2, cols: 2 },
                Init::Glorot {
                    fan_in: 2,
                    fan_out: 2,
                },
                &mut rng,
            )
            .unwrap();
        assert_eq!(store.id_of("a"), Some(a));
        assert_eq!(store.id_of("b"), Some(b));
        assert_eq!(store.value_count(), 7);
        let names: Vec<_> = store.iter().map(|(_, p)| p.name().to_string()).collect();
        assert_eq!(names, ["a", "b"]);
        assert!(matches!(
            store.register("a", Shape::Vector(1), Init::Zeros, &mut rng),
            Err(DiffError::DuplicateParam(_))
        ));
    }

    #[test]
    fn glorot_respects_bound_and_seed() {
        let shape = Shape::Matrix { rows: 4, cols: 6 };
        let init = Init::Glorot {
            fan_in: 4,
            fan_out: 6,
        };
        let bound = (6.0f64 / 10.0).sqrt();
        let sample = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParameterStore::<f64>::new();
            let id = store.register("w", shape, init, &mut rng).unwrap();
            store.get(id).value().data().to_vec()
        };
        let a = sample(7);
        assert!(a.iter().all(|v| v.abs() < bound));
        assert_eq!(a, sample(7));
        assert_ne!(a, sample(8));
    }

    #[test]
    fn grads_start_zero_and_reset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParameterStore::<f32>::new();
        let id = store
            .register("w", Shape::Vector(2), Init::Zeros, &mut rng)
            .unwrap();
        store.accumulate_grad(0, &Tensor::vector(vec![1.0, 2.0]));
        assert_eq!(store.get(id).grad().data(), &[1.0, 2.0]);
        assert!(store.get(id).grad_norm() > 0.0);
        store.zero_grads();
        assert_eq!(store.get(id).grad().data(), &[0.0, 0.0]);
    }
}
