use crate::nn::NnError;
use crate::real::Real;

/// One named parameter tensor with its gradient slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    /// Set when a backward pass wrote into `grad` since the last `zero_grad`.
    /// Tensors that are not touched are skipped by the optimizer.
    pub touched: bool,
}

impl<T: Real> Tensor<T> {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Flat list of named tensors. Layers refer to tensors by index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet<T> {
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParameterSet<T> {
    pub fn new() -> Self {
        Self {
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, value: Vec<T>) -> usize {
        let n: usize = shape.iter().product();
        assert_eq!(n, value.len(), "tensor shape does not match data");
        self.tensors.push(Tensor {
            name: name.into(),
            shape,
            grad: vec![T::zero(); n],
            value,
            touched: false,
        });
        self.tensors.len() - 1
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    #[inline]
    pub fn tensor(&self, id: usize) -> &Tensor<T> {
        &self.tensors[id]
    }

    #[inline]
    pub fn tensor_mut(&mut self, id: usize) -> &mut Tensor<T> {
        &mut self.tensors[id]
    }

    pub fn find(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad.iter_mut().for_each(|g| *g = T::zero());
            t.touched = false;
        }
    }

    pub fn any_touched(&self) -> bool {
        self.tensors.iter().any(|t| t.touched)
    }

    pub fn check_finite_grads(&self) -> Result<(), NnError> {
        for t in &self.tensors {
            if let Some(i) = t.grad.iter().position(|g| !g.is_finite()) {
                return Err(NnError::NonFiniteGradient {
                    name: t.name.clone(),
                    index: i,
                });
            }
        }
        Ok(())
    }

    pub fn grad_norm(&self) -> T {
        self.tensors
            .iter()
            .flat_map(|t| t.grad.iter())
            .map(|&g| g * g)
            .sum::<T>()
            .sqrt()
    }

    /// Rescale gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: T) -> T {
        let norm = self.grad_norm();
        if norm > max_norm {
            let k = max_norm / norm;
            for t in &mut self.tensors {
                t.grad.iter_mut().for_each(|g| *g *= k);
            }
        }
        norm
    }

    pub fn flat_values(&self) -> Vec<T> {
        self.tensors.iter().flat_map(|t| t.value.iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<T> {
        self.tensors.iter().flat_map(|t| t.grad.iter().copied()).collect()
    }

    pub fn set_flat_values(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.num_params());
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.value.len();
            t.value.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    pub fn fill(&mut self, v: T) {
        for t in &mut self.tensors {
            t.value.iter_mut().for_each(|x| *x = v);
        }
    }

    /// True when every value is finite.
    pub fn all_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.value.iter().all(|v| v.is_finite()))
    }
}
