//! Haar wavelet pooling and unpooling.
//!
//! Pooling is four depthwise stride-2 convolutions with the orthonormal 2x2
//! kernels `k_AB[i][j] = A[i] * B[j]` (first letter filters rows, second
//! filters columns) built from `L = [1, 1]/√2` and `H = [-1, 1]/√2`.
//! Unpooling applies the matching transposed convolution to each band and
//! sums, which inverts pooling exactly.
//!
//! The `*_var` functions record on a [`Graph`] and are differentiable; the
//! tensor-level wrappers run on a throwaway graph of constants.

use crate::error::{Error, Result};
use crate::tensor::{ConvGeom, Float, Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Band {
    LL,
    LH,
    HL,
    HH,
}

impl Band {
    pub const ALL: [Band; 4] = [Band::LL, Band::LH, Band::HL, Band::HH];
    pub const HIGH: [Band; 3] = [Band::LH, Band::HL, Band::HH];

    pub fn name(self) -> &'static str {
        match self {
            Band::LL => "LL",
            Band::LH => "LH",
            Band::HL => "HL",
            Band::HH => "HH",
        }
    }

    /// Row-major 2x2 kernel.
    pub fn kernel(self) -> [f64; 4] {
        let l = [1.0, 1.0];
        let h = [-1.0, 1.0];
        let (row, col) = match self {
            Band::LL => (l, l),
            Band::LH => (l, h),
            Band::HL => (h, l),
            Band::HH => (h, h),
        };
        // (1/√2)² = 1/2
        [
            0.5 * row[0] * col[0],
            0.5 * row[0] * col[1],
            0.5 * row[1] * col[0],
            0.5 * row[1] * col[1],
        ]
    }
}

const GEOM_STRIDE: usize = 2;

/// The four sub-bands of one pooling level.
#[derive(Clone, Debug, PartialEq)]
pub struct Bands<V> {
    pub ll: V,
    pub lh: V,
    pub hl: V,
    pub hh: V,
    pub level: usize,
}

pub type WaveletBands<T = f32> = Bands<Tensor<T>>;
pub type BandVars = Bands<Var>;

impl<V> Bands<V> {
    pub fn get(&self, band: Band) -> &V {
        match band {
            Band::LL => &self.ll,
            Band::LH => &self.lh,
            Band::HL => &self.hl,
            Band::HH => &self.hh,
        }
    }
}

impl<T: Float> WaveletBands<T> {
    /// Sum of squares of each band, in `[LL, LH, HL, HH]` order.
    pub fn energies(&self) -> [f64; 4] {
        Band::ALL.map(|b| self.get(b).sum_sq())
    }

    pub fn high_energy(&self) -> f64 {
        let e = self.energies();
        e[1] + e[2] + e[3]
    }
}

fn kernel_var<T: Float>(g: &mut Graph<T>, band: Band, channels: usize) -> Var {
    let k = band.kernel();
    let data: Vec<T> = (0..channels).flat_map(|_| k.iter().map(|&v| T::from_f64(v))).collect();
    g.constant(Tensor::new(&[channels, 1, 2, 2], data).expect("kernel shape"))
}

fn check_even(op: &'static str, shape: &[usize]) -> Result<usize> {
    match *shape {
        [_, c, h, w] if h % 2 == 0 && w % 2 == 0 && h > 0 && w > 0 => Ok(c),
        [_, _, h, w] => Err(Error::geometry(op, format!("spatial extent {h}x{w} must be even"))),
        _ => Err(Error::geometry(op, format!("expected NCHW tensor, got {shape:?}"))),
    }
}

/// Depthwise pooling with a single band's kernel.
pub fn pool_band_var<T: Float>(g: &mut Graph<T>, x: Var, band: Band) -> Result<Var> {
    let c = check_even("haar_pool", g.shape(x))?;
    let k = kernel_var(g, band, c);
    g.conv2d(x, k, None, ConvGeom::grouped(GEOM_STRIDE, 0, c))
}

pub fn haar_pool_var<T: Float>(g: &mut Graph<T>, x: Var) -> Result<BandVars> {
    Ok(Bands {
        ll: pool_band_var(g, x, Band::LL)?,
        lh: pool_band_var(g, x, Band::LH)?,
        hl: pool_band_var(g, x, Band::HL)?,
        hh: pool_band_var(g, x, Band::HH)?,
        level: 1,
    })
}

/// Transposed convolution of one band with its own kernel, back to full
/// resolution.
pub fn unpool_band_var<T: Float>(g: &mut Graph<T>, band_value: Var, band: Band) -> Result<Var> {
    let c = match *g.shape(band_value) {
        [_, c, _, _] => c,
        ref s => return Err(Error::geometry("haar_unpool", format!("expected NCHW band, got {s:?}"))),
    };
    let k = kernel_var(g, band, c);
    g.transposed_conv2d(band_value, k, ConvGeom::grouped(GEOM_STRIDE, 0, c))
}

fn check_bands<T: Float>(g: &Graph<T>, bands: &BandVars) -> Result<()> {
    let s = g.shape(bands.ll);
    for b in Band::HIGH {
        let other = g.shape(*bands.get(b));
        if other != s {
            return Err(Error::shape("haar_unpool", s, other));
        }
    }
    Ok(())
}

/// Unpool the selected bands and sum them.
pub fn unpool_selected_var<T: Float>(g: &mut Graph<T>, bands: &BandVars, which: &[Band]) -> Result<Var> {
    check_bands(g, bands)?;
    let mut acc: Option<Var> = None;
    for &b in which {
        let up = unpool_band_var(g, *bands.get(b), b)?;
        acc = Some(match acc {
            Some(a) => g.add(a, up)?,
            None => up,
        });
    }
    acc.ok_or(Error::Empty { op: "haar_unpool" })
}

pub fn haar_unpool_var<T: Float>(g: &mut Graph<T>, bands: &BandVars) -> Result<Var> {
    unpool_selected_var(g, bands, &Band::ALL)
}

/// Full-resolution reconstruction from the LH, HL and HH bands only.
pub fn high_freq_reconstruct_var<T: Float>(g: &mut Graph<T>, bands: &BandVars) -> Result<Var> {
    unpool_selected_var(g, bands, &Band::HIGH)
}

/// The 9-channel `[LH, HL, HH]` stack of a level's bands.
pub fn high_band_stack_var<T: Float>(g: &mut Graph<T>, bands: &BandVars) -> Result<Var> {
    g.concat_channels(&[bands.lh, bands.hl, bands.hh])
}

pub fn multi_level_pool_var<T: Float>(g: &mut Graph<T>, x: Var, levels: usize) -> Result<Vec<BandVars>> {
    check_levels(g.shape(x), levels)?;
    let mut out: Vec<BandVars> = Vec::with_capacity(levels);
    let mut src = x;
    for level in 1..=levels {
        let mut b = haar_pool_var(g, src)?;
        b.level = level;
        src = b.ll;
        out.push(b);
    }
    Ok(out)
}

fn check_levels(shape: &[usize], levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::geometry("multi_level_pool", "levels must be >= 1"));
    }
    let div = 1usize << levels;
    match *shape {
        [_, _, h, w] if h % div == 0 && w % div == 0 && h > 0 && w > 0 => Ok(()),
        [_, _, h, w] => Err(Error::geometry(
            "multi_level_pool",
            format!("extent {h}x{w} not divisible by 2^{levels}"),
        )),
        _ => Err(Error::geometry("multi_level_pool", "expected NCHW tensor")),
    }
}

fn take_bands<T: Float>(g: &Graph<T>, b: &BandVars) -> WaveletBands<T> {
    Bands {
        ll: g.value(b.ll).clone(),
        lh: g.value(b.lh).clone(),
        hl: g.value(b.hl).clone(),
        hh: g.value(b.hh).clone(),
        level: b.level,
    }
}

fn load_bands<T: Float>(g: &mut Graph<T>, b: &WaveletBands<T>) -> BandVars {
    Bands {
        ll: g.constant(b.ll.clone()),
        lh: g.constant(b.lh.clone()),
        hl: g.constant(b.hl.clone()),
        hh: g.constant(b.hh.clone()),
        level: b.level,
    }
}

pub fn haar_pool<T: Float>(x: &Tensor<T>) -> Result<WaveletBands<T>> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let b = haar_pool_var(&mut g, xv)?;
    Ok(take_bands(&g, &b))
}

pub fn haar_unpool<T: Float>(bands: &WaveletBands<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let b = load_bands(&mut g, bands);
    let y = haar_unpool_var(&mut g, &b)?;
    Ok(g.value(y).clone())
}

pub fn high_freq_reconstruct<T: Float>(bands: &WaveletBands<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let b = load_bands(&mut g, bands);
    let y = high_freq_reconstruct_var(&mut g, &b)?;
    Ok(g.value(y).clone())
}

/// Reconstruction from the LL band alone (the low-frequency complement of
/// [`high_freq_reconstruct`]).
pub fn low_freq_reconstruct<T: Float>(bands: &WaveletBands<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let b = load_bands(&mut g, bands);
    let y = unpool_selected_var(&mut g, &b, &[Band::LL])?;
    Ok(g.value(y).clone())
}

pub fn multi_level_pool<T: Float>(x: &Tensor<T>, levels: usize) -> Result<Vec<WaveletBands<T>>> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let bands = multi_level_pool_var(&mut g, xv, levels)?;
    Ok(bands.iter().map(|b| take_bands(&g, b)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch() -> Tensor<f64> {
        Tensor::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn kernels_match_definition() {
        assert_eq!(Band::LL.kernel(), [0.5, 0.5, 0.5, 0.5]);
        assert_eq!(Band::LH.kernel(), [-0.5, 0.5, -0.5, 0.5]);
        assert_eq!(Band::HL.kernel(), [-0.5, -0.5, 0.5, 0.5]);
        assert_eq!(Band::HH.kernel(), [0.5, -0.5, -0.5, 0.5]);
    }

    #[test]
    fn single_patch_bands() {
        let b = haar_pool(&patch()).unwrap();
        assert_eq!(b.ll.data(), &[5.0]);
        assert_eq!(b.lh.data(), &[1.0]);
        assert_eq!(b.hl.data(), &[2.0]);
        assert_eq!(b.hh.data(), &[0.0]);
        let back = haar_unpool(&b).unwrap();
        assert_eq!(back, patch());
    }

    #[test]
    fn constant_image_has_no_high_bands() {
        let x = Tensor::<f64>::full(&[1, 2, 4, 6], 1.0);
        let b = haar_pool(&x).unwrap();
        assert!(b.ll.data().iter().all(|&v| (v - 2.0).abs() < 1e-12));
        assert_eq!(b.high_energy(), 0.0);
        let hf = high_freq_reconstruct(&b).unwrap();
        assert!(hf.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checkerboard_is_all_high_frequency() {
        let data: Vec<f64> = (0..16).map(|i| if (i / 4 + i % 4) % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let x = Tensor::<f64>::from_f64(&[1, 1, 4, 4], &data).unwrap();
        let b = haar_pool(&x).unwrap();
        assert_eq!(b.ll.sum_sq(), 0.0);
        let hf = high_freq_reconstruct(&b).unwrap();
        assert!(hf.max_abs_diff(&x).unwrap() < 1e-12);
        let e = b.energies();
        assert!((e[3] - x.sum_sq()).abs() < 1e-12);
    }

    #[test]
    fn zero_bands_unpool_to_zero() {
        let z = Tensor::<f32>::zeros(&[1, 3, 2, 2]);
        let b = Bands {
            ll: z.clone(),
            lh: z.clone(),
            hl: z.clone(),
            hh: z,
            level: 1,
        };
        let y = haar_unpool(&b).unwrap();
        assert_eq!(y.shape(), &[1, 3, 4, 4]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn odd_extent_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 3, 4]);
        assert!(matches!(haar_pool(&x), Err(Error::Geometry { .. })));
        let y = Tensor::<f32>::zeros(&[1, 1, 8, 6]);
        assert!(multi_level_pool(&y, 2).is_err());
    }

    #[test]
    fn band_shape_mismatch_rejected() {
        let b = Bands {
            ll: Tensor::<f32>::zeros(&[1, 1, 2, 2]),
            lh: Tensor::zeros(&[1, 1, 2, 2]),
            hl: Tensor::zeros(&[1, 1, 2, 3]),
            hh: Tensor::zeros(&[1, 1, 2, 2]),
            level: 1,
        };
        assert!(matches!(haar_unpool(&b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn two_level_constant() {
        let x = Tensor::<f64>::full(&[1, 1, 8, 8], 3.0);
        let levels = multi_level_pool(&x, 2).unwrap();
        assert_eq!(levels.len(), 2);
        assert_eq!(levels[1].level, 2);
        for l in &levels {
            assert_eq!(l.high_energy(), 0.0);
        }
        assert!(levels[1].ll.data().iter().all(|&v| (v - 12.0).abs() < 1e-12));
    }
}
