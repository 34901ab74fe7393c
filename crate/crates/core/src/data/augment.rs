use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Float, Graph, ReduceKind, Tensor, Var, WarpMap};

/// Augmentation families used in the augmented cycle loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AugmentKind {
    HFlip,
    Noise {
        sigma: f64,
    },
    /// Each factor is drawn from `1 ± range` (brightness: an offset in
    /// `±range`).
    ColorJitter {
        contrast: f64,
        saturation: f64,
        brightness: f64,
    },
    /// Rotation in degrees, translation in pixels, scale drawn from
    /// `1 ± scale`.
    Affine {
        rotation_deg: f64,
        translate_px: f64,
        scale: f64,
    },
}

impl AugmentKind {
    pub const NAMES: [&'static str; 4] = ["hflip", "noise", "jitter", "affine"];

    pub fn noise() -> Self {
        AugmentKind::Noise { sigma: 0.05 }
    }

    pub fn jitter() -> Self {
        AugmentKind::ColorJitter {
            contrast: 0.2,
            saturation: 0.2,
            brightness: 0.2,
        }
    }

    pub fn affine() -> Self {
        AugmentKind::Affine {
            rotation_deg: 15.0,
            translate_px: 2.0,
            scale: 0.1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AugmentKind::HFlip => "hflip",
            AugmentKind::Noise { .. } => "noise",
            AugmentKind::ColorJitter { .. } => "jitter",
            AugmentKind::Affine { .. } => "affine",
        }
    }

    /// Parse a family name into its default magnitudes.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hflip" => Ok(AugmentKind::HFlip),
            "noise" => Ok(Self::noise()),
            "jitter" => Ok(Self::jitter()),
            "affine" => Ok(Self::affine()),
            _ => Err(Error::Config(format!("unknown augmentation {s:?} (hflip|noise|jitter|affine)"))),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            AugmentKind::HFlip => true,
            AugmentKind::Noise { sigma } => sigma >= 0.0,
            AugmentKind::ColorJitter {
                contrast,
                saturation,
                brightness,
            } => [contrast, saturation, brightness].iter().all(|v| (0.0..1.0).contains(v)),
            AugmentKind::Affine { translate_px, scale, .. } => translate_px >= 0.0 && (0.0..1.0).contains(&scale),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid augmentation magnitudes {self:?}")))
        }
    }

    /// Draw concrete per-sample parameters for an `n x c x h x w` batch.
    pub fn draw(&self, rng: &mut impl Rng, shape: [usize; 4]) -> Result<AugmentDraw> {
        self.validate()?;
        let [n, c, h, w] = shape;
        Ok(match *self {
            AugmentKind::HFlip => AugmentDraw::warp(hflip_map(n, h, w)?),
            AugmentKind::Noise { sigma } => {
                let dist = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
                AugmentDraw::Noise {
                    shape,
                    values: (0..n * c * h * w).map(|_| dist.sample(rng)).collect(),
                }
            }
            AugmentKind::ColorJitter {
                contrast,
                saturation,
                brightness,
            } => {
                let mut draw = |r: f64, center: f64| -> Vec<f64> {
                    (0..n)
                        .map(|_| if r > 0.0 { center + rng.random_range(-r..=r) } else { center })
                        .collect()
                };
                AugmentDraw::Jitter {
                    contrast: draw(contrast, 1.0),
                    saturation: draw(saturation, 1.0),
                    brightness: draw(brightness, 0.0),
                }
            }
            AugmentKind::Affine {
                rotation_deg,
                translate_px,
                scale,
            } => {
                let mut params = Vec::with_capacity(n);
                for _ in 0..n {
                    let sym = |rng: &mut dyn rand::RngCore, r: f64| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
                    params.push(AffineParams {
                        rotation_deg: sym(rng, rotation_deg),
                        translate: (sym(rng, translate_px), sym(rng, translate_px)),
                        scale: 1.0 + sym(rng, scale),
                    });
                }
                AugmentDraw::warp(affine_map(&params, h, w)?)
            }
        })
    }
}

/// An augmentation family with its RNG seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentOp {
    pub kind: AugmentKind,
    pub seed: u64,
}

/// One concrete geometric transform: rotation about the image centre, then
/// scaling, then translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams {
    pub rotation_deg: f64,
    pub translate: (f64, f64),
    pub scale: f64,
}

/// Concrete augmentation parameters, applicable as a graph op so gradients
/// flow through it.
#[derive(Clone, Debug, PartialEq)]
pub enum AugmentDraw {
    Warp(Arc<WarpMap>),
    Noise {
        shape: [usize; 4],
        values: Vec<f64>,
    },
    Jitter {
        contrast: Vec<f64>,
        saturation: Vec<f64>,
        brightness: Vec<f64>,
    },
}

impl AugmentDraw {
    fn warp(map: WarpMap) -> Self {
        AugmentDraw::Warp(Arc::new(map))
    }

    pub fn affine(params: &[AffineParams], h: usize, w: usize) -> Result<Self> {
        Ok(Self::warp(affine_map(params, h, w)?))
    }

    /// Apply and clamp to `[−1, 1]`.
    pub fn apply_var<T: Float>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let y = match self {
            AugmentDraw::Warp(map) => g.warp(x, map)?,
            AugmentDraw::Noise { shape, values } => {
                if g.value(x).dims4() != *shape {
                    return Err(Error::shape("apply_augment", shape, g.shape(x)));
                }
                let noise = g.constant(Tensor::from_f64(g.shape(x), values)?);
                g.add(x, noise)?
            }
            AugmentDraw::Jitter {
                contrast,
                saturation,
                brightness,
            } => {
                let n = g.shape(x)[0];
                if contrast.len() != n {
                    return Err(Error::geometry("apply_augment", "jitter drawn for a different batch size"));
                }
                let per = |g: &mut Graph<T>, v: &[f64]| g.constant(Tensor::from_f64(&[n, 1, 1, 1], v).expect("batch vector"));
                let one_minus = |v: &[f64]| v.iter().map(|c| 1.0 - c).collect::<Vec<_>>();
                let b = per(g, brightness);
                let y = g.add(x, b)?;
                // Contrast about the per-image mean.
                let m = g.reduce(y, ReduceKind::Mean, Some(&[1, 2, 3]))?;
                let c = per(g, contrast);
                let c1 = per(g, &one_minus(contrast));
                let ys = g.mul(y, c)?;
                let ms = g.mul(m, c1)?;
                let y = g.add(ys, ms)?;
                // Saturation towards the per-pixel grey level.
                let grey = g.reduce(y, ReduceKind::Mean, Some(&[1]))?;
                let s = per(g, saturation);
                let s1 = per(g, &one_minus(saturation));
                let ys = g.mul(y, s)?;
                let gs = g.mul(grey, s1)?;
                g.add(ys, gs)?
            }
        };
        g.clamp(y, -1.0, 1.0)
    }

    pub fn apply<T: Float>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = self.apply_var(&mut g, xv)?;
        Ok(g.value(y).clone())
    }
}

/// Draw from the op's seed and apply to `x`.
pub fn apply_augment<T: Float>(op: &AugmentOp, x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(op.seed);
    op.kind.draw(&mut rng, x.dims4())?.apply(x)
}

fn hflip_map(n: usize, h: usize, w: usize) -> Result<WarpMap> {
    let mut index = Vec::with_capacity(n * h * w);
    for _ in 0..n {
        for i in 0..h {
            for j in 0..w {
                index.push((i * w + (w - 1 - j)) as u32);
            }
        }
    }
    let weight = vec![1.0; index.len()];
    WarpMap::new(n, (h, w), (h, w), 1, index, weight)
}

/// Bilinear inverse-mapped warp with border replication.
fn affine_map(params: &[AffineParams], h: usize, w: usize) -> Result<WarpMap> {
    let n = params.len();
    let mut index = Vec::with_capacity(n * h * w * 4);
    let mut weight = Vec::with_capacity(n * h * w * 4);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    for p in params {
        if !(p.scale.is_finite() && p.scale.abs() > 1e-6) {
            return Err(Error::Domain {
                op: "apply_augment",
                detail: format!("non-invertible affine scale {}", p.scale),
            });
        }
        let (sin, cos) = p.rotation_deg.to_radians().sin_cos();
        for i in 0..h {
            for j in 0..w {
                // Output (x, y) relative to the centre, undo translation,
                // scale and rotation to find the source point.
                let ox = (j as f64 - cx - p.translate.0) / p.scale;
                let oy = (i as f64 - cy - p.translate.1) / p.scale;
                let sx = (cos * ox + sin * oy + cx).clamp(0.0, (w - 1) as f64);
                let sy = (-sin * ox + cos * oy + cy).clamp(0.0, (h - 1) as f64);
                let (x0, y0) = (sx.floor(), sy.floor());
                let (fx, fy) = (sx - x0, sy - y0);
                let (x0, y0) = (x0 as usize, y0 as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                for (yy, xx, wt) in [
                    (y0, x0, (1.0 - fx) * (1.0 - fy)),
                    (y0, x1, fx * (1.0 - fy)),
                    (y1, x0, (1.0 - fx) * fy),
                    (y1, x1, fx * fy),
                ] {
                    index.push((yy * w + xx) as u32);
                    weight.push(wt);
                }
            }
        }
    }
    WarpMap::new(n, (h, w), (h, w), 4, index, weight)
}
