//! Gated recurrent unit, batched over rows.
//!
//! ```text
//! z  = sigmoid(W_z·u + U_z·h + b_z)
//! r  = sigmoid(W_r·u + U_r·h + b_r)
//! n  = tanh(W_n·u + U_n·(r ⊙ h) + b_n)
//! h' = (1 − z) ⊙ n + z ⊙ h
//! ```

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::dense::sigmoid;
use super::{join, Module};

#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    pub w_z: Array2<f64>,
    pub u_z: Array2<f64>,
    pub b_z: Array1<f64>,
    pub w_r: Array2<f64>,
    pub u_r: Array2<f64>,
    pub b_r: Array1<f64>,
    pub w_n: Array2<f64>,
    pub u_n: Array2<f64>,
    pub b_n: Array1<f64>,
}

/// Intermediates of one batched step.
#[derive(Clone, Debug)]
pub struct GruStepCache {
    input: Array2<f64>,
    hidden: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    n: Array2<f64>,
    rh: Array2<f64>,
}

impl GruCell {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Array2::zeros((hidden, input));
        let u = || Array2::zeros((hidden, hidden));
        let b = || Array1::zeros(hidden);
        Self {
            w_z: w(),
            u_z: u(),
            b_z: b(),
            w_r: w(),
            u_r: u(),
            b_r: b(),
            w_n: w(),
            u_n: u(),
            b_n: b(),
        }
    }

    /// Uniform `±1/√H` initialization of every gate tensor.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut cell = Self::zeros(input, hidden);
        let bound = 1.0 / (hidden.max(1) as f64).sqrt();
        cell.visit_mut(&mut |d| d.iter_mut().for_each(|v| *v = rng.random_range(-bound..=bound)));
        cell
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_z.nrows()
    }

    pub fn step(&self, input: ArrayView2<f64>, hidden: ArrayView2<f64>) -> (Array2<f64>, GruStepCache) {
        let mut z = input.dot(&self.w_z.t()) + hidden.dot(&self.u_z.t()) + &self.b_z;
        z.mapv_inplace(sigmoid);
        let mut r = input.dot(&self.w_r.t()) + hidden.dot(&self.u_r.t()) + &self.b_r;
        r.mapv_inplace(sigmoid);
        let rh = &r * &hidden;
        let mut n = input.dot(&self.w_n.t()) + rh.dot(&self.u_n.t()) + &self.b_n;
        n.mapv_inplace(f64::tanh);
        let mut next = n.clone();
        ndarray::Zip::from(&mut next)
            .and(&z)
            .and(&hidden)
            .for_each(|o, &z, &h| *o = (1.0 - z) * *o + z * h);
        let cache = GruStepCache {
            input: input.to_owned(),
            hidden: hidden.to_owned(),
            z,
            r,
            n,
            rh,
        };
        (next, cache)
    }

    /// Backward through one step. Adds parameter gradients into `grads` and
    /// returns `(∂L/∂input, ∂L/∂h_prev)`.
    pub fn backward_step(&self, cache: &GruStepCache, dh_next: ArrayView2<f64>, grads: &mut GruCell) -> (Array2<f64>, Array2<f64>) {
        let GruStepCache { input, hidden, z, r, n, rh } = cache;
        // h' = (1-z)·n + z·h
        let mut da_n = &dh_next * &z.mapv(|v| 1.0 - v);
        da_n.zip_mut_with(n, |g, &n| *g *= 1.0 - n * n);
        let mut da_z = &dh_next * &(hidden - n);
        da_z.zip_mut_with(z, |g, &z| *g *= z * (1.0 - z));
        let mut dh_prev = &dh_next * z;

        grads.w_n += &da_n.t().dot(input);
        grads.u_n += &da_n.t().dot(rh);
        grads.b_n += &da_n.sum_axis(Axis(0));
        let d_rh = da_n.dot(&self.u_n);
        let mut da_r = &d_rh * hidden;
        da_r.zip_mut_with(r, |g, &r| *g *= r * (1.0 - r));
        dh_prev += &(&d_rh * r);

        grads.w_z += &da_z.t().dot(input);
        grads.u_z += &da_z.t().dot(hidden);
        grads.b_z += &da_z.sum_axis(Axis(0));
        grads.w_r += &da_r.t().dot(input);
        grads.u_r += &da_r.t().dot(hidden);
        grads.b_r += &da_r.sum_axis(Axis(0));

        dh_prev += &da_z.dot(&self.u_z);
        dh_prev += &da_r.dot(&self.u_r);
        let dx = da_z.dot(&self.w_z) + da_r.dot(&self.w_r) + da_n.dot(&self.w_n);
        (dx, dh_prev)
    }

    /// Backpropagation through time over consecutive steps.
    ///
    /// `output_grads[t]` is the loss gradient with respect to the hidden
    /// state produced at step `t`. Returns the gradient with respect to the
    /// initial hidden state.
    pub fn backward_through_time(
        &self,
        caches: &[GruStepCache],
        output_grads: &[Array2<f64>],
        grads: &mut GruCell,
    ) -> Array2<f64> {
        assert_eq!(caches.len(), output_grads.len(), "one output gradient per step");
        let mut carry: Option<Array2<f64>> = None;
        for t in (0..caches.len()).rev() {
            let dh = match carry.take() {
                Some(c) => c + &output_grads[t],
                None => output_grads[t].clone(),
            };
            let (_, dh_prev) = self.backward_step(&caches[t], dh.view(), grads);
            carry = Some(dh_prev);
        }
        carry.unwrap_or_else(|| Array2::zeros((0, self.hidden_dim())))
    }
}

impl Module for GruCell {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        let mats = [("w_z", &self.w_z), ("u_z", &self.u_z), ("w_r", &self.w_r), ("u_r", &self.u_r), ("w_n", &self.w_n), ("u_n", &self.u_n)];
        for (name, m) in mats {
            f(&join(prefix, name), m.shape(), m.as_slice().expect("standard layout"));
        }
        for (name, b) in [("b_z", &self.b_z), ("b_r", &self.b_r), ("b_n", &self.b_n)] {
            f(&join(prefix, name), b.shape(), b.as_slice().expect("standard layout"));
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for m in [&mut self.w_z, &mut self.u_z, &mut self.w_r, &mut self.u_r, &mut self.w_n, &mut self.u_n] {
            f(m.as_slice_mut().expect("standard layout"));
        }
        for b in [&mut self.b_z, &mut self.b_r, &mut self.b_n] {
            f(b.as_slice_mut().expect("standard layout"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_cell_keeps_zero_state() {
        let cell = GruCell::zeros(3, 4);
        let x = ndarray::array![[1.0, -2.0, 0.5]];
        let h = Array2::zeros((1, 4));
        let (next, _) = cell.step(x.view(), h.view());
        assert!(next.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_update_gate_passes_state_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut cell = GruCell::init(3, 4, &mut rng);
        cell.b_z.fill(1e3);
        let x = ndarray::array![[0.3, -0.2, 0.9]];
        let h = ndarray::array![[0.1, -0.4, 0.7, 0.0]];
        let (next, _) = cell.step(x.view(), h.view());
        for (a, b) in next.iter().zip(h.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gradients_in_zero_gradients_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cell = GruCell::init(3, 4, &mut rng);
        let mut h = Array2::zeros((2, 4));
        let x = ndarray::array![[0.3, -0.2, 0.9], [0.0, 1.0, -1.0]];
        let mut caches = Vec::new();
        for _ in 0..3 {
            let (n, c) = cell.step(x.view(), h.view());
            caches.push(c);
            h = n;
        }
        let zero = vec![Array2::zeros((2, 4)); 3];
        let mut g = cell.zeros_like();
        let dh0 = cell.backward_through_time(&caches, &zero, &mut g);
        assert_eq!(g.l2_norm(), 0.0);
        assert!(dh0.iter().all(|&v| v == 0.0));
    }
}
