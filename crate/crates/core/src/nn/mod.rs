//! A small dense neural-network engine with hand-written reverse-mode
//! gradients: linear layers, MLPs, a GRU cell, Adam and soft target updates.
//!
//! Every trainable network implements [`Module`], which exposes its tensors
//! in a fixed order under stable names. Gradients are stored in a value of
//! the same type (see [`Module::zeros_like`]), so optimizers, target updates
//! and checkpoints all work by zipping two modules tensor by tensor.

mod dense;
mod gru;
mod optim;

pub use dense::{Activation, Dense, Mlp, MlpCache};
pub use gru::{GruCell, GruStepCache};
pub use optim::{soft_update, Adam};

use crate::error::{Error, Result};

/// A named, shaped, owned copy of one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            shape,
            data,
        }
    }

    pub fn scalar(name: impl Into<String>, v: f64) -> Self {
        Self::new(name, vec![1], vec![v])
    }
}

pub trait Module: Clone {
    /// Visits every tensor as `(name, shape, data)` in a fixed order.
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64]));

    /// Mutable counterpart of [`Module::visit`], same order.
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64]));

    /// A copy with every entry set to zero; used as a gradient buffer.
    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |d| d.fill(0.0));
        z
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, d| n += d.len());
        n
    }

    /// Snapshot of all tensors, names prefixed with `prefix`.
    fn to_arrays(&self, prefix: &str) -> Vec<NamedArray> {
        let mut out = Vec::new();
        self.visit(prefix, &mut |name, shape, data| {
            out.push(NamedArray::new(name, shape.to_vec(), data.to_vec()))
        });
        out
    }

    /// Overwrites every tensor from `arrays`, matching names and shapes.
    fn load_arrays(&mut self, prefix: &str, arrays: &[NamedArray]) -> Result<()> {
        let mut expected: Vec<(String, Vec<usize>)> = Vec::new();
        self.visit(prefix, &mut |name, shape, _| expected.push((name.to_string(), shape.to_vec())));
        let mut sources = Vec::with_capacity(expected.len());
        for (name, shape) in &expected {
            let src = arrays
                .iter()
                .find(|a| &a.name == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if &src.shape != shape || src.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Shape {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: src.shape.clone(),
                });
            }
            sources.push(&src.data);
        }
        let mut k = 0;
        self.visit_mut(&mut |d| {
            d.copy_from_slice(sources[k]);
            k += 1;
        });
        Ok(())
    }

    /// Order-sensitive hash of the exact bit patterns of all parameters.
    fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        self.visit("", &mut |_, _, d| {
            for v in d {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        });
        h
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, _, d| ok &= d.iter().all(|v| v.is_finite()));
        ok
    }

    /// `self += alpha * other`, elementwise.
    fn add_scaled(&mut self, other: &Self, alpha: f64) {
        let mut src = Vec::new();
        other.visit("", &mut |_, _, d| src.push(d.to_vec()));
        let mut k = 0;
        self.visit_mut(&mut |d| {
            for (a, b) in d.iter_mut().zip(&src[k]) {
                *a += alpha * b;
            }
            k += 1;
        });
    }

    /// All parameters concatenated in visit order.
    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit("", &mut |_, _, d| out.extend_from_slice(d));
        out
    }

    /// Inverse of [`Module::to_flat`].
    fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape {
                name: "flat parameters".into(),
                expected: vec![self.num_params()],
                found: vec![flat.len()],
            });
        }
        let mut at = 0;
        self.visit_mut(&mut |d| {
            d.copy_from_slice(&flat[at..at + d.len()]);
            at += d.len();
        });
        Ok(())
    }

    /// Euclidean norm over all tensors.
    fn l2_norm(&self) -> f64 {
        let mut s = 0.0;
        self.visit("", &mut |_, _, d| s += d.iter().map(|v| v * v).sum::<f64>());
        s.sqrt()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
