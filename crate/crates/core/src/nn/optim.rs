use super::{join, Module, NamedArray};
use crate::error::{Error, Result};

/// Bias-corrected Adam over every tensor of a [`Module`].
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<M: Module>(params: &M, lr: f64) -> Self {
        let mut first = Vec::new();
        params.visit("", &mut |_, _, d| first.push(vec![0.0; d.len()]));
        let second = first.clone();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first,
            second,
        }
    }

    /// Descends along `grads`.
    pub fn step<M: Module>(&mut self, params: &mut M, grads: &M) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let mut g_all = Vec::with_capacity(self.first.len());
        grads.visit("", &mut |_, _, d| g_all.push(d.to_vec()));
        assert_eq!(g_all.len(), self.first.len(), "optimizer built for a different module");
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let mut k = 0;
        let (first, second) = (&mut self.first, &mut self.second);
        params.visit_mut(&mut |p| {
            let (m, v, g) = (&mut first[k], &mut second[k], &g_all[k]);
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            k += 1;
        });
    }

    pub fn to_arrays(&self, prefix: &str) -> Vec<NamedArray> {
        let mut out = vec![NamedArray::scalar(join(prefix, "step"), f64::from_bits(self.step))];
        for (k, (m, v)) in self.first.iter().zip(&self.second).enumerate() {
            out.push(NamedArray::new(join(prefix, &format!("m{k}")), vec![m.len()], m.clone()));
            out.push(NamedArray::new(join(prefix, &format!("v{k}")), vec![v.len()], v.clone()));
        }
        out
    }

    pub fn load_arrays(&mut self, prefix: &str, arrays: &[NamedArray]) -> Result<()> {
        let find = |name: String| {
            arrays
                .iter()
                .find(|a| a.name == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing optimizer tensor `{name}`")))
        };
        self.step = find(join(prefix, "step"))?.data[0].to_bits();
        for k in 0..self.first.len() {
            for (store, tag) in [(&mut self.first[k], "m"), (&mut self.second[k], "v")] {
                let name = join(prefix, &format!("{tag}{k}"));
                let src = find(name.clone())?;
                if src.data.len() != store.len() {
                    return Err(Error::Shape {
                        name,
                        expected: vec![store.len()],
                        found: src.shape.clone(),
                    });
                }
                store.copy_from_slice(&src.data);
            }
        }
        Ok(())
    }
}

/// `target ← (1 − τ)·target + τ·source`, elementwise.
pub fn soft_update<M: Module>(target: &mut M, source: &M, tau: f64) {
    let mut src = Vec::new();
    source.visit("", &mut |_, _, d| src.push(d.to_vec()));
    let mut k = 0;
    target.visit_mut(&mut |d| {
        for (t, s) in d.iter_mut().zip(&src[k]) {
            *t = if tau == 1.0 {
                *s
            } else if tau == 0.0 {
                *t
            } else {
                (1.0 - tau) * *t + tau * s
            };
        }
        k += 1;
    });
}
