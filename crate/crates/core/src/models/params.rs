use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::tensor::Tensor;

/// How a parameter is (re)initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(-bound, bound)`.
    Uniform {
        bound: f64,
    },
    Constant(f64),
}

impl Init {
    /// The usual fan-in scaled uniform draw.
    pub fn fan_in(fan_in: usize) -> Self {
        Init::Uniform {
            bound: 1.0 / crate::math::sqrt(fan_in.max(1) as f64),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, shape: &[usize], rng: &mut R) -> Tensor {
        let n = shape.iter().product();
        let data = match *self {
            Init::Uniform { bound } => (0..n).map(|_| rng.random_range(-bound..=bound)).collect(),
            Init::Constant(v) => alloc::vec![v; n],
        };
        Tensor::from_vec(shape, data).expect("init shape")
    }
}

/// A named trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub init: Init,
}

/// Ordered, named parameters of a network. Names are stable identifiers
/// used by checkpoints.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Adds a freshly initialized parameter and returns its index.
    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: String,
        shape: &[usize],
        init: Init,
        rng: &mut R,
    ) -> usize {
        let value = init.sample(shape, rng);
        self.params.push(Param { name, value, init });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, index: usize) -> &Param {
        &self.params[index]
    }

    pub fn value(&self, index: usize) -> &Tensor {
        &self.params[index].value
    }

    pub fn value_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.params[index].value
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Redraws parameter `index` from its initializer.
    pub fn reinit<R: Rng + ?Sized>(&mut self, index: usize, rng: &mut R) {
        let p = &mut self.params[index];
        p.value = p.init.sample(p.value.shape(), rng);
    }
}
