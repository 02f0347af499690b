use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::archive::{Archive, TensorBlock};

/// A named parameter block with a same-shaped gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    name: String,
    shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            value: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    pub fn from_values(name: impl Into<String>, shape: &[usize], value: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len(), "shape/value mismatch");
        let grad = vec![0.0; value.len()];
        Self { name: name.into(), shape: shape.to_vec(), value, grad }
    }

    /// Uniform in `[-scale, scale]`.
    pub fn uniform<R: Rng>(name: impl Into<String>, shape: &[usize], scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(name, shape);
        for v in &mut p.value {
            *v = rng.gen_range(-scale..=scale);
        }
        p
    }

    pub fn normal<R: Rng>(name: impl Into<String>, shape: &[usize], std: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(name, shape);
        for v in &mut p.value {
            *v = std * rng.sample::<f64, _>(StandardNormal);
        }
        p
    }

    pub fn filled(name: impl Into<String>, shape: &[usize], fill: f64) -> Self {
        let mut p = Self::zeros(name, shape);
        p.value.iter_mut().for_each(|v| *v = fill);
        p
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    fn dims2(&self) -> (usize, usize) {
        match self.shape[..] {
            [r, c] => (r, c),
            [n] => (1, n),
            _ => panic!("parameter `{}` is not a matrix: {:?}", self.name, self.shape),
        }
    }

    pub fn mat(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape(self.dims2(), &self.value).unwrap()
    }

    pub fn mat_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        let d = self.dims2();
        ArrayViewMut2::from_shape(d, &mut self.value).unwrap()
    }

    pub fn grad_mat_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        let d = self.dims2();
        ArrayViewMut2::from_shape(d, &mut self.grad).unwrap()
    }

    pub fn vec(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.value[..])
    }

    pub fn grad_vec_mut(&mut self) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(&mut self.grad[..])
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn to_block(&self) -> TensorBlock {
        TensorBlock::from_f64(self.name.clone(), self.shape.clone(), &self.value)
    }

    /// Loads values from a same-named, same-shaped block.
    pub fn load_from(&mut self, archive: &Archive) -> std::result::Result<(), String> {
        let block = archive.tensor(&self.name, &self.shape)?;
        self.value = block.to_f64();
        Ok(())
    }
}

/// Anything owning trainable [`Param`]s, visited in a fixed order.
pub trait HasParams {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_values(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn flat_values(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.value.iter().copied()).collect()
    }

    fn flat_grads(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.grad.iter().copied()).collect()
    }

    /// Scales every gradient, e.g. to average over a mini-batch.
    fn scale_grads(&mut self, factor: f64) {
        for p in self.params_mut() {
            p.grad.iter_mut().for_each(|g| *g *= factor);
        }
    }

    fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.value.iter().all(|v| v.is_finite()))
    }

    fn write_blocks(&self, archive: &mut Archive) {
        for p in self.params() {
            archive.push(p.to_block());
        }
    }

    fn load_blocks(&mut self, archive: &Archive) -> std::result::Result<(), String> {
        for p in self.params_mut() {
            p.load_from(archive)?;
        }
        Ok(())
    }
}
