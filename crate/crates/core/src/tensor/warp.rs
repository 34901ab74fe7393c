use crate::error::{Error, Result};

/// Per-sample sparse linear resampling shared by every channel:
/// `out[n, c, p] = Σ_t weight[n, p, t] · in[n, c, index[n, p, t]]`.
///
/// Flips, crops and bilinear affine warps are all of this form, which keeps
/// them differentiable.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpMap {
    batch: usize,
    in_hw: (usize, usize),
    out_hw: (usize, usize),
    taps: usize,
    index: Vec<u32>,
    weight: Vec<f64>,
}

impl WarpMap {
    pub fn new(
        batch: usize,
        in_hw: (usize, usize),
        out_hw: (usize, usize),
        taps: usize,
        index: Vec<u32>,
        weight: Vec<f64>,
    ) -> Result<Self> {
        let n = batch * out_hw.0 * out_hw.1 * taps;
        let limit = in_hw.0 * in_hw.1;
        if index.len() != n || weight.len() != n {
            return Err(Error::geometry("warp", format!("expected {n} taps, got {}/{}", index.len(), weight.len())));
        }
        if index.iter().any(|&i| i as usize >= limit) {
            return Err(Error::geometry("warp", "tap index outside the input plane"));
        }
        Ok(Self {
            batch,
            in_hw,
            out_hw,
            taps,
            index,
            weight,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn in_hw(&self) -> (usize, usize) {
        self.in_hw
    }

    pub fn out_hw(&self) -> (usize, usize) {
        self.out_hw
    }

    pub(crate) fn forward<T: crate::tensor::Float>(&self, x: &[T], channels: usize) -> Vec<T> {
        let (pi, po) = (self.in_hw.0 * self.in_hw.1, self.out_hw.0 * self.out_hw.1);
        let mut out = vec![T::zero(); self.batch * channels * po];
        for n in 0..self.batch {
            let taps = &self.index[n * po * self.taps..(n + 1) * po * self.taps];
            let wts = &self.weight[n * po * self.taps..(n + 1) * po * self.taps];
            for c in 0..channels {
                let src = &x[(n * channels + c) * pi..][..pi];
                let dst = &mut out[(n * channels + c) * po..][..po];
                for (p, d) in dst.iter_mut().enumerate() {
                    let mut acc = T::zero();
                    for t in 0..self.taps {
                        let k = p * self.taps + t;
                        acc += T::from_f64(wts[k]) * src[taps[k] as usize];
                    }
                    *d = acc;
                }
            }
        }
        out
    }

    pub(crate) fn adjoint<T: crate::tensor::Float>(&self, g: &[T], channels: usize) -> Vec<T> {
        let (pi, po) = (self.in_hw.0 * self.in_hw.1, self.out_hw.0 * self.out_hw.1);
        let mut out = vec![T::zero(); self.batch * channels * pi];
        for n in 0..self.batch {
            let taps = &self.index[n * po * self.taps..(n + 1) * po * self.taps];
            let wts = &self.weight[n * po * self.taps..(n + 1) * po * self.taps];
            for c in 0..channels {
                let src = &g[(n * channels + c) * po..][..po];
                let dst = &mut out[(n * channels + c) * pi..][..pi];
                for (p, &gp) in src.iter().enumerate() {
                    for t in 0..self.taps {
                        let k = p * self.taps + t;
                        dst[taps[k] as usize] += T::from_f64(wts[k]) * gp;
                    }
                }
            }
        }
        out
    }
}
