//! Convolution kernels (cross-correlation, no kernel flip).
//!
//! Three primitives cover both convolution and transposed convolution:
//! `forward` (y = W ⋆ x), `adjoint` (x = Wᵀ ⋆ y) and `weight_grad`.
//! Grouped convolutions with GEMM-sized groups go through im2col; the
//! depthwise case (one channel in, one out per group) uses direct loops.

use super::{Float, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub const fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride,
            padding,
            groups: 1,
        }
    }

    pub const fn grouped(stride: usize, padding: usize, groups: usize) -> Self {
        Self {
            stride,
            padding,
            groups,
        }
    }
}

/// Full geometry of one convolution: input `n x c x h x w`, weight
/// `o x c/groups x k x k`, output `n x o x ho x wo`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
    pub ho: usize,
    pub wo: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvDims {
    fn cg(&self) -> usize {
        self.c / self.groups
    }

    fn og(&self) -> usize {
        self.o / self.groups
    }

    fn out_len(&self) -> usize {
        self.n * self.o * self.ho * self.wo
    }

    fn in_len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    fn depthwise(&self) -> bool {
        self.cg() == 1 && self.og() == 1
    }

    /// Geometry of a forward convolution of `input` by `weight`.
    pub fn for_conv(input: &[usize], weight: &[usize], geom: ConvGeom) -> Result<Self> {
        let (n, c, h, w) = rank4("conv2d", input)?;
        let (o, wc, kh, kw) = rank4("conv2d weight", weight)?;
        check_common("conv2d", c, o, wc, kh, kw, geom)?;
        let ho = conv_extent(h, kh, geom)?;
        let wo = conv_extent(w, kw, geom)?;
        Ok(Self {
            n,
            c,
            h,
            w,
            o,
            k: kh,
            ho,
            wo,
            stride: geom.stride,
            pad: geom.padding,
            groups: geom.groups,
        })
    }

    /// Geometry of a transposed convolution. `input` plays the role of the
    /// forward convolution's output; weight is `in x out/groups x k x k`.
    pub fn for_transposed(input: &[usize], weight: &[usize], geom: ConvGeom) -> Result<Self> {
        let (n, ci, hi, wi) = rank4("transposed_conv2d", input)?;
        let (wo_ch, wc, kh, kw) = rank4("transposed_conv2d weight", weight)?;
        if wo_ch != ci {
            return Err(Error::geometry(
                "transposed_conv2d",
                format!("input has {ci} channels, weight expects {wo_ch}"),
            ));
        }
        let c = wc * geom.groups;
        check_common("transposed_conv2d", c, ci, wc, kh, kw, geom)?;
        let h = transposed_extent(hi, kh, geom)?;
        let w = transposed_extent(wi, kw, geom)?;
        // The transposed op's output extent must map back onto the input.
        if conv_extent(h, kh, geom)? != hi || conv_extent(w, kw, geom)? != wi {
            return Err(Error::geometry(
                "transposed_conv2d",
                "geometry is not invertible for this input extent",
            ));
        }
        Ok(Self {
            n,
            c,
            h,
            w,
            o: ci,
            k: kh,
            ho: hi,
            wo: wi,
            stride: geom.stride,
            pad: geom.padding,
            groups: geom.groups,
        })
    }

    pub fn input_shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.n, self.o, self.ho, self.wo]
    }
}

fn rank4(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [a, b, c, d] => Ok((a, b, c, d)),
        _ => Err(Error::geometry(op, format!("expected rank-4 tensor, got {shape:?}"))),
    }
}

fn check_common(
    op: &'static str,
    c: usize,
    o: usize,
    wc: usize,
    kh: usize,
    kw: usize,
    geom: ConvGeom,
) -> Result<()> {
    if geom.groups == 0 || geom.stride == 0 {
        return Err(Error::geometry(op, "stride and groups must be positive"));
    }
    if !c.is_multiple_of(geom.groups) || !o.is_multiple_of(geom.groups) {
        return Err(Error::geometry(
            op,
            format!("channels {c}->{o} not divisible by groups {}", geom.groups),
        ));
    }
    if wc * geom.groups != c {
        return Err(Error::geometry(
            op,
            format!("weight expects {} input channels, got {c}", wc * geom.groups),
        ));
    }
    if kh != kw || kh == 0 {
        return Err(Error::geometry(op, format!("kernel must be square, got {kh}x{kw}")));
    }
    Ok(())
}

pub(crate) fn conv_extent(h: usize, k: usize, geom: ConvGeom) -> Result<usize> {
    let padded = h + 2 * geom.padding;
    if padded < k {
        return Err(Error::geometry(
            "conv2d",
            format!("kernel {k} larger than padded extent {padded}"),
        ));
    }
    Ok((padded - k) / geom.stride + 1)
}

pub(crate) fn transposed_extent(h: usize, k: usize, geom: ConvGeom) -> Result<usize> {
    let full = (h.saturating_sub(1)) * geom.stride + k;
    if h == 0 || full <= 2 * geom.padding {
        return Err(Error::geometry(
            "transposed_conv2d",
            format!("non-positive output extent for input {h}"),
        ));
    }
    Ok(full - 2 * geom.padding)
}

/// Output positions `lo..hi` whose input index `o * s + off - p` lies in
/// `0..inp`.
#[inline]
fn valid_span(off: usize, s: usize, p: usize, out: usize, inp: usize) -> (usize, usize) {
    let lo = if p > off { (p - off).div_ceil(s) } else { 0 };
    let hi = if inp + p > off { ((inp + p - off - 1) / s + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

/// Unfold group `g` of `x` into `[cg*k*k, n*ho*wo]`.
fn im2col<T: Float>(x: &[T], d: &ConvDims, g: usize, cols: &mut [T]) {
    let (cg, k, s, p) = (d.cg(), d.k, d.stride, d.pad);
    let hw_out = d.ho * d.wo;
    let ncols = d.n * hw_out;
    for ci in 0..cg {
        let c = g * cg + ci;
        for ky in 0..k {
            let (ylo, yhi) = valid_span(ky, s, p, d.ho, d.h);
            for kx in 0..k {
                let (xlo, xhi) = valid_span(kx, s, p, d.wo, d.w);
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for n in 0..d.n {
                    let plane = &x[(n * d.c + c) * d.h * d.w..][..d.h * d.w];
                    let img = &mut dst[n * hw_out..][..hw_out];
                    img[..ylo * d.wo].fill(T::zero());
                    img[yhi * d.wo..].fill(T::zero());
                    for oy in ylo..yhi {
                        let iy = oy * s + ky - p;
                        let out = &mut img[oy * d.wo..][..d.wo];
                        out[..xlo].fill(T::zero());
                        out[xhi..].fill(T::zero());
                        if xlo == xhi {
                            continue;
                        }
                        let start = iy * d.w + xlo * s + kx - p;
                        if s == 1 {
                            out[xlo..xhi].copy_from_slice(&plane[start..start + (xhi - xlo)]);
                        } else {
                            for (v, src) in out[xlo..xhi].iter_mut().zip(plane[start..].iter().step_by(s)) {
                                *v = *src;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Fold `[cg*k*k, n*ho*wo]` columns back into group `g` of `x`, accumulating.
fn col2im<T: Float>(cols: &[T], d: &ConvDims, g: usize, x: &mut [T]) {
    let (cg, k, s, p) = (d.cg(), d.k, d.stride, d.pad);
    let hw_out = d.ho * d.wo;
    let ncols = d.n * hw_out;
    for ci in 0..cg {
        let c = g * cg + ci;
        for ky in 0..k {
            let (ylo, yhi) = valid_span(ky, s, p, d.ho, d.h);
            for kx in 0..k {
                let (xlo, xhi) = valid_span(kx, s, p, d.wo, d.w);
                if xlo == xhi {
                    continue;
                }
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for n in 0..d.n {
                    let plane = &mut x[(n * d.c + c) * d.h * d.w..][..d.h * d.w];
                    for oy in ylo..yhi {
                        let iy = oy * s + ky - p;
                        let inp = &src[n * hw_out + oy * d.wo..][xlo..xhi];
                        let start = iy * d.w + xlo * s + kx - p;
                        if s == 1 {
                            for (o, &v) in plane[start..start + inp.len()].iter_mut().zip(inp) {
                                *o += v;
                            }
                        } else {
                            for (o, &v) in plane[start..].iter_mut().step_by(s).zip(inp) {
                                *o += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gather output channels of group `g` into `[og, n*ho*wo]`.
fn gather_out<T: Float>(y: &[T], d: &ConvDims, g: usize, dst: &mut [T]) {
    let (og, hw) = (d.og(), d.ho * d.wo);
    for o in 0..og {
        for n in 0..d.n {
            let src = &y[(n * d.o + g * og + o) * hw..][..hw];
            dst[o * d.n * hw + n * hw..][..hw].copy_from_slice(src);
        }
    }
}

fn scatter_out<T: Float>(src: &[T], d: &ConvDims, g: usize, y: &mut [T]) {
    let (og, hw) = (d.og(), d.ho * d.wo);
    for o in 0..og {
        for n in 0..d.n {
            y[(n * d.o + g * og + o) * hw..][..hw].copy_from_slice(&src[o * d.n * hw + n * hw..][..hw]);
        }
    }
}

/// `y = W ⋆ x`; returns a tensor shaped `[n, o, ho, wo]`.
pub(crate) fn forward<T: Float>(x: &[T], w: &[T], d: &ConvDims) -> Vec<T> {
    let mut y = vec![T::zero(); d.out_len()];
    if d.depthwise() {
        depthwise_forward(x, w, d, &mut y);
        return y;
    }
    let (cg, og, kk) = (d.cg(), d.og(), d.k * d.k);
    let ncols = d.n * d.ho * d.wo;
    let rows = cg * kk;
    T::with_scratch(rows * ncols + og * ncols, |buf| {
        let (cols, tmp) = buf.split_at_mut(rows * ncols);
        for g in 0..d.groups {
            im2col(x, d, g, cols);
            let wg = &w[g * og * rows..][..og * rows];
            T::gemm(
                og,
                rows,
                ncols,
                wg,
                (rows as isize, 1),
                cols,
                (ncols as isize, 1),
                T::zero(),
                tmp,
                (ncols as isize, 1),
            );
            scatter_out(tmp, d, g, &mut y);
        }
    });
    y
}

/// `x = Wᵀ ⋆ y`, the exact adjoint of [`forward`]; returns `[n, c, h, w]`.
pub(crate) fn adjoint<T: Float>(y: &[T], w: &[T], d: &ConvDims) -> Vec<T> {
    let mut x = vec![T::zero(); d.in_len()];
    if d.depthwise() {
        depthwise_adjoint(y, w, d, &mut x);
        return x;
    }
    let (cg, og, kk) = (d.cg(), d.og(), d.k * d.k);
    let ncols = d.n * d.ho * d.wo;
    let rows = cg * kk;
    T::with_scratch(rows * ncols + og * ncols, |buf| {
        let (cols, tmp) = buf.split_at_mut(rows * ncols);
        for g in 0..d.groups {
            gather_out(y, d, g, tmp);
            let wg = &w[g * og * rows..][..og * rows];
            T::gemm(
                rows,
                og,
                ncols,
                wg,
                (1, rows as isize),
                tmp,
                (ncols as isize, 1),
                T::zero(),
                cols,
                (ncols as isize, 1),
            );
            col2im(cols, d, g, &mut x);
        }
    });
    x
}

/// Gradient of `⟨y_grad, W ⋆ x⟩` with respect to `W`.
pub(crate) fn weight_grad<T: Float>(x: &[T], y_grad: &[T], d: &ConvDims) -> Vec<T> {
    let (cg, og, kk) = (d.cg(), d.og(), d.k * d.k);
    let rows = cg * kk;
    let mut dw = vec![T::zero(); d.o * rows];
    if d.depthwise() {
        depthwise_weight_grad(x, y_grad, d, &mut dw);
        return dw;
    }
    let ncols = d.n * d.ho * d.wo;
    T::with_scratch(rows * ncols + og * ncols, |buf| {
        let (cols, tmp) = buf.split_at_mut(rows * ncols);
        for g in 0..d.groups {
            im2col(x, d, g, cols);
            gather_out(y_grad, d, g, tmp);
            let dwg = &mut dw[g * og * rows..][..og * rows];
            T::gemm(
                og,
                ncols,
                rows,
                tmp,
                (ncols as isize, 1),
                cols,
                (1, ncols as isize),
                T::zero(),
                dwg,
                (rows as isize, 1),
            );
        }
    });
    dw
}

/// Visit every (input index, output index, weight index) triple of a
/// depthwise convolution.
#[inline]
fn depthwise_visit(d: &ConvDims, mut f: impl FnMut(usize, usize, usize)) {
    let (k, s, p) = (d.k, d.stride as isize, d.pad as isize);
    for n in 0..d.n {
        for c in 0..d.c {
            let in_base = (n * d.c + c) * d.h * d.w;
            let out_base = (n * d.o + c) * d.ho * d.wo;
            for ky in 0..k {
                for kx in 0..k {
                    let wi = (c * k + ky) * k + kx;
                    for oy in 0..d.ho {
                        let iy = oy as isize * s + ky as isize - p;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        for ox in 0..d.wo {
                            let ix = ox as isize * s + kx as isize - p;
                            if ix < 0 || ix >= d.w as isize {
                                continue;
                            }
                            f(
                                in_base + iy as usize * d.w + ix as usize,
                                out_base + oy * d.wo + ox,
                                wi,
                            );
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_forward<T: Float>(x: &[T], w: &[T], d: &ConvDims, y: &mut [T]) {
    depthwise_visit(d, |i, o, wi| y[o] += w[wi] * x[i]);
}

fn depthwise_adjoint<T: Float>(y: &[T], w: &[T], d: &ConvDims, x: &mut [T]) {
    depthwise_visit(d, |i, o, wi| x[i] += w[wi] * y[o]);
}

fn depthwise_weight_grad<T: Float>(x: &[T], y: &[T], d: &ConvDims, dw: &mut [T]) {
    depthwise_visit(d, |i, o, wi| dw[wi] += x[i] * y[o]);
}

/// Convenience: forward convolution on plain tensors (no tape).
pub fn conv2d<T: Float>(x: &Tensor<T>, w: &Tensor<T>, geom: ConvGeom) -> Result<Tensor<T>> {
    let d = ConvDims::for_conv(x.shape(), w.shape(), geom)?;
    Tensor::new(&d.output_shape(), forward(x.data(), w.data(), &d))
}

/// Convenience: transposed convolution on plain tensors (no tape).
pub fn transposed_conv2d<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    geom: ConvGeom,
) -> Result<Tensor<T>> {
    let d = ConvDims::for_transposed(x.shape(), w.shape(), geom)?;
    Tensor::new(&d.input_shape(), adjoint(x.data(), w.data(), &d))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn half_box_kernel_stride_two() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let w = t(&[1, 1, 2, 2], &[0.5; 4]);
        let y = conv2d(&x, &w, ConvGeom::new(2, 0)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn identity_and_zero_kernels() {
        let x = t(&[1, 1, 2, 3], &[1.0, -2.0, 3.0, 4.0, 0.5, 6.0]);
        let y = conv2d(&x, &t(&[1, 1, 1, 1], &[1.0]), ConvGeom::new(1, 0)).unwrap();
        assert_eq!(y, x);
        let z = conv2d(&x, &t(&[1, 1, 1, 1], &[0.0]), ConvGeom::new(1, 0)).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transposed_of_single_pixel_spreads_kernel() {
        let x = t(&[1, 1, 1, 1], &[1.0]);
        let w = t(&[1, 1, 2, 2], &[0.5; 4]);
        let y = transposed_conv2d(&x, &w, ConvGeom::new(2, 0)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[0.5; 4]);
        let z = transposed_conv2d(&t(&[1, 1, 1, 1], &[0.0]), &w, ConvGeom::new(2, 0)).unwrap();
        assert_eq!(z.data(), &[0.0; 4]);
    }

    #[test]
    fn rejects_bad_geometry() {
        let x = Tensor::<f32>::zeros(&[1, 3, 4, 4]);
        assert!(conv2d(&x, &Tensor::zeros(&[4, 3, 5, 5]), ConvGeom::new(1, 0)).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[4, 2, 3, 3]), ConvGeom::new(1, 1)).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[4, 1, 3, 3]), ConvGeom::grouped(1, 1, 2)).is_err());
    }

    #[test]
    fn padded_conv_matches_direct_sum() {
        let x = t(&[1, 2, 3, 3], &(0..18).map(|v| v as f64 * 0.1).collect::<Vec<_>>());
        let w = t(&[2, 2, 3, 3], &(0..36).map(|v| (v as f64 - 17.0) * 0.05).collect::<Vec<_>>());
        let y = conv2d(&x, &w, ConvGeom::new(1, 1)).unwrap();
        let xd = x.data();
        let wd = w.data();
        for o in 0..2 {
            for oy in 0..3isize {
                for ox in 0..3isize {
                    let mut acc = 0.0;
                    for c in 0..2 {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (iy, ix) = (oy + ky - 1, ox + kx - 1);
                                if (0..3).contains(&iy) && (0..3).contains(&ix) {
                                    acc += wd[((o * 2 + c) * 3 + ky as usize) * 3 + kx as usize]
                                        * xd[(c * 3 + iy as usize) * 3 + ix as usize];
                                }
                            }
                        }
                    }
                    let got = y.data()[(o * 3 + oy as usize) * 3 + ox as usize];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }
}
