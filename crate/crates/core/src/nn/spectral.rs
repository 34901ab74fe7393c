//! Spectral normalisation by power iteration.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Left/right singular vector estimates for one weight, flattened to
/// `out x (in * k * k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralState<T: Float = f32> {
    pub u: Vec<T>,
    pub v: Vec<T>,
}

fn normalize<T: Float>(x: &mut [T]) -> T {
    let norm = x.iter().map(|&v| v * v).sum::<T>().sqrt();
    let denom = norm.max(T::from_f64(1e-12));
    x.iter_mut().for_each(|v| *v /= denom);
    norm
}

fn matrix_dims(shape: &[usize]) -> (usize, usize) {
    let rows = shape.first().copied().unwrap_or(1);
    let total: usize = shape.iter().product();
    (rows, total / rows.max(1))
}

impl<T: Float> SpectralState<T> {
    pub fn new(weight_shape: &[usize], rng: &mut impl Rng) -> Self {
        let (rows, cols) = matrix_dims(weight_shape);
        let mut sample = |n: usize| {
            let mut v: Vec<T> = (0..n)
                .map(|_| T::from_f64(StandardNormal.sample(rng)))
                .collect();
            normalize(&mut v);
            v
        };
        let u = sample(rows);
        let v = sample(cols);
        Self { u, v }
    }

    /// Run `iters` rounds of `v ← Wᵀu/‖·‖, u ← Wv/‖·‖`.
    pub fn power_iterate(&mut self, weight: &Tensor<T>, iters: usize) -> Result<()> {
        let (rows, cols) = matrix_dims(weight.shape());
        if self.u.len() != rows || self.v.len() != cols {
            return Err(Error::geometry("spectral_normalize", "state does not match weight"));
        }
        let w = weight.data();
        if w.iter().all(|&x| x == T::zero()) {
            return Err(Error::Domain {
                op: "spectral_normalize",
                detail: "zero weight matrix".into(),
            });
        }
        for _ in 0..iters {
            self.v.fill(T::zero());
            for (i, row) in w.chunks(cols).enumerate() {
                let ui = self.u[i];
                for (vj, &wij) in self.v.iter_mut().zip(row) {
                    *vj += wij * ui;
                }
            }
            normalize(&mut self.v);
            for (i, row) in w.chunks(cols).enumerate() {
                self.u[i] = row.iter().zip(&self.v).map(|(a, b)| *a * *b).sum();
            }
            normalize(&mut self.u);
        }
        Ok(())
    }

    /// Current estimate `σ̂ = uᵀ W v`.
    pub fn sigma(&self, weight: &Tensor<T>) -> T {
        let (_, cols) = matrix_dims(weight.shape());
        weight
            .data()
            .chunks(cols)
            .zip(&self.u)
            .map(|(row, &ui)| ui * row.iter().zip(&self.v).map(|(a, b)| *a * *b).sum::<T>())
            .sum()
    }
}

/// `weight / σ̂` after `iters` power-iteration steps that update `state`.
pub fn spectral_normalize<T: Float>(weight: &Tensor<T>, state: &mut SpectralState<T>, iters: usize) -> Result<Tensor<T>> {
    state.power_iterate(weight, iters)?;
    let sigma = state.sigma(weight);
    if sigma.abs() <= T::epsilon() {
        return Err(Error::Domain {
            op: "spectral_normalize",
            detail: "estimated spectral norm is zero".into(),
        });
    }
    Ok(weight.map(|x| x / sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_weight() {
        let w = Tensor::from_f64(&[2, 2], &[3.0, 0.0, 0.0, 1.0]).unwrap();
        let mut st = SpectralState::<f64>::new(w.shape(), &mut ChaCha8Rng::seed_from_u64(1));
        let n = spectral_normalize(&w, &mut st, 50).unwrap();
        let expect = [1.0, 0.0, 0.0, 1.0 / 3.0];
        for (a, b) in n.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-9, "{:?}", n.data());
        }
    }

    #[test]
    fn orthogonal_weight_unchanged() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let w = Tensor::from_f64(&[2, 2], &[s, -s, s, s]).unwrap();
        let mut st = SpectralState::<f64>::new(w.shape(), &mut ChaCha8Rng::seed_from_u64(2));
        let n = spectral_normalize(&w, &mut st, 5).unwrap();
        assert!(n.max_abs_diff(&w).unwrap() < 1e-12);
    }

    #[test]
    fn zero_weight_rejected() {
        let w = Tensor::<f32>::zeros(&[2, 3]);
        let mut st = SpectralState::new(w.shape(), &mut ChaCha8Rng::seed_from_u64(3));
        assert!(matches!(spectral_normalize(&w, &mut st, 1), Err(Error::Domain { .. })));
    }
}
