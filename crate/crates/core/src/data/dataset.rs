//! In-memory patch collections and batch assembly.

use crate::data::augment::{augment, AugmentOp};
use crate::data::cube::HsiCube;
use crate::data::patch::{extract_patch, Patch};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default)]
pub struct PatchSet {
    pub patches: Vec<Patch>,
}

impl PatchSet {
    pub fn from_coords(cube: &HsiCube, coords: &[(usize, usize)], p: usize) -> Result<Self> {
        let patches = coords
            .iter()
            .map(|&(r, c)| extract_patch(cube, r, c, p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { patches })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Originals followed by one copy per op, in op order.
    pub fn augmented(&self, ops: &[AugmentOp]) -> Self {
        let mut patches = self.patches.clone();
        for &op in ops {
            patches.extend(self.patches.iter().map(|p| augment(p, op)));
        }
        Self { patches }
    }

    pub fn labels(&self) -> Vec<usize> {
        self.patches.iter().map(|p| p.label).collect()
    }

    /// Stacks the selected patches into `[B, p, p, CH]` plus labels.
    pub fn batch<T: Real>(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let first = indices
            .first()
            .map(|&i| &self.patches[i])
            .ok_or(Error::Empty("batch"))?;
        let (p, ch) = (first.size, first.bands);
        let mut data = Vec::with_capacity(indices.len() * p * p * ch);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let patch = &self.patches[i];
            if patch.size != p || patch.bands != ch {
                return Err(Error::shape("batch", "patches of mixed geometry"));
            }
            data.extend(patch.values.iter().map(|&v| T::from_f64(v as f64)));
            labels.push(patch.label);
        }
        Ok((Tensor::new(&[indices.len(), p, p, ch], data)?, labels))
    }
}
