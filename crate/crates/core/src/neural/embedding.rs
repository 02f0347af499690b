use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::{HasParams, Param};
use crate::corpus::PAD;
use crate::error::{Error, Result};

/// Lookup table whose padding row stays zero: it is zeroed at init and never
/// receives gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub table: Param,
}

impl Embedding {
    pub fn new<R: Rng>(name: &str, vocab: usize, dim: usize, scale: f64, rng: &mut R) -> Self {
        let mut table = Param::uniform(format!("{name}.table"), &[vocab, dim], scale, rng);
        table.value[..dim].iter_mut().for_each(|v| *v = 0.0);
        Self { table }
    }

    pub fn from_table(name: &str, table: Array2<f64>) -> Self {
        let shape = [table.nrows(), table.ncols()];
        let mut values: Vec<f64> = table.iter().copied().collect();
        values[..shape[1]].iter_mut().for_each(|v| *v = 0.0);
        Self { table: Param::from_values(format!("{name}.table"), &shape, values) }
    }

    pub fn vocab_size(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    /// Row `t` of the output is `table[ids[t]]`.
    pub fn forward(&self, ids: &[u32]) -> Result<Array2<f64>> {
        let (vocab, dim) = (self.vocab_size(), self.dim());
        let mut out = Array2::zeros((ids.len(), dim));
        for (t, &id) in ids.iter().enumerate() {
            let id = id as usize;
            if id >= vocab {
                return Err(Error::TokenOutOfRange { id, size: vocab });
            }
            out.row_mut(t)
                .assign(&ndarray::ArrayView1::from(&self.table.value[id * dim..(id + 1) * dim]));
        }
        Ok(out)
    }

    pub fn backward(&mut self, ids: &[u32], dout: ArrayView2<'_, f64>) {
        let dim = self.dim();
        for (t, &id) in ids.iter().enumerate() {
            if id == PAD {
                continue;
            }
            let row = &mut self.table.grad[id as usize * dim..(id as usize + 1) * dim];
            for (g, d) in row.iter_mut().zip(dout.row(t)) {
                *g += d;
            }
        }
    }
}

impl HasParams for Embedding {
    fn params(&self) -> Vec<&Param> {
        vec![&self.table]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.table]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_pad_sequence_is_zero() {
        let e = Embedding::new("emb", 50, 300, 0.05, &mut ChaCha8Rng::seed_from_u64(1));
        let out = e.forward(&[PAD; 100]).unwrap();
        assert_eq!(out.dim(), (100, 300));
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_range_id() {
        let e = Embedding::new("emb", 5, 3, 0.05, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(matches!(e.forward(&[2, 5]), Err(Error::TokenOutOfRange { id: 5, size: 5 })));
    }

    #[test]
    fn pad_row_gets_no_gradient() {
        let mut e = Embedding::new("emb", 5, 2, 0.05, &mut ChaCha8Rng::seed_from_u64(1));
        let ids = [3, PAD, 3];
        let dout = Array2::from_elem((3, 2), 1.0);
        e.backward(&ids, dout.view());
        assert_eq!(&e.table.grad[0..2], &[0.0, 0.0]);
        assert_eq!(&e.table.grad[6..8], &[2.0, 2.0]);
    }
}
