use num_traits::Float;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::EstimatorConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Every trainable tensor of the network in declaration order:
/// `conv1.weight, conv1.bias, ..., dense2.weight, dense2.bias`.
///
/// Convolution kernels are laid out `[tap][in_channel][out_channel]`, dense
/// matrices `[in][out]`, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Float> Params<T> {
    pub fn zeros(cfg: &EstimatorConfig) -> Self {
        Self {
            tensors: cfg
                .tensor_shapes()
                .into_iter()
                .map(|(name, shape)| {
                    let n = shape.iter().product();
                    Tensor {
                        name,
                        shape,
                        data: vec![T::zero(); n],
                    }
                })
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.tensors.iter().flat_map(|t| t.data.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.tensors.iter_mut().flat_map(|t| t.data.iter_mut())
    }

    pub fn same_shape<U>(&self, other: &Params<U>) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape == b.shape && a.data.len() == b.data.len())
    }

    pub fn cast<U: Float>(&self) -> Params<U> {
        Params {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::from(*v).expect("float cast")).collect(),
                })
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl Params<f32> {
    /// Weights uniform in `±sqrt(6 / fan_in)`, biases zero. The generator is
    /// seeded from `cfg.seed` alone, so equal seeds give identical bytes.
    pub fn init(cfg: &EstimatorConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = Self::zeros(cfg);
        for t in &mut params.tensors {
            if t.name.ends_with(".bias") {
                continue;
            }
            // conv: [tap, in, out] -> fan_in = tap * in; dense: [in, out] -> in
            let fan_in: usize = t.shape[..t.shape.len() - 1].iter().product();
            let limit = (6.0 / fan_in as f64).sqrt();
            for v in &mut t.data {
                *v = rng.random_range(-limit..limit) as f32;
            }
        }
        params
    }
}
