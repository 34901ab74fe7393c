use rand::Rng;

use super::layers::{Conv2d, LRELU_SLOPE};
use super::params::{Bound, ParamSet};
use super::spectral::SpectralState;
use crate::error::{Error, Result};
use crate::tensor::{ConvGeom, Float, Graph, Var};
use crate::wavelet;

/// Which view of the image a discriminator judges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DiscKind {
    /// Full-resolution image.
    I0,
    /// Image average-pooled by 2.
    I1,
    /// Level-1 `[LH, HL, HH]` stack (9 channels, half resolution).
    H0,
    /// Level-2 `[LH, HL, HH]` stack (9 channels, quarter resolution).
    H1,
}

impl DiscKind {
    pub const ALL: [DiscKind; 4] = [DiscKind::I0, DiscKind::I1, DiscKind::H0, DiscKind::H1];

    pub fn name(self) -> &'static str {
        match self {
            DiscKind::I0 => "d_i0",
            DiscKind::I1 => "d_i1",
            DiscKind::H0 => "d_h0",
            DiscKind::H1 => "d_h1",
        }
    }

    pub fn in_channels(self) -> usize {
        match self {
            DiscKind::I0 | DiscKind::I1 => 3,
            DiscKind::H0 | DiscKind::H1 => 9,
        }
    }

    pub fn input_size(self, image_size: usize) -> usize {
        match self {
            DiscKind::I0 => image_size,
            DiscKind::I1 | DiscKind::H0 => image_size / 2,
            DiscKind::H1 => image_size / 4,
        }
    }

    fn first_channels(self, width: usize) -> usize {
        match self {
            DiscKind::H1 => width,
            _ => (width / 2).max(1),
        }
    }
}

/// PatchGAN-style stack: stride-2 4x4 convolutions down to 4x4 (or the
/// input size if smaller), then one convolution covering the remaining
/// extent. Every weight is spectrally normalised.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T: Float = f32> {
    pub kind: DiscKind,
    pub params: ParamSet<T>,
    pub spectral: Vec<SpectralState<T>>,
    convs: Vec<Conv2d>,
    input_size: usize,
}

impl<T: Float> Discriminator<T> {
    pub fn new(kind: DiscKind, width: usize, image_size: usize, rng: &mut impl Rng) -> Result<Self> {
        let size = kind.input_size(image_size);
        if width == 0 || image_size < 8 || !image_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "{}: image size {image_size} must be a power of two >= 8",
                kind.name()
            )));
        }
        let mut ps = ParamSet::new();
        let mut convs = Vec::new();
        let cap = 8 * width;
        let mut cin = kind.in_channels();
        let mut cout = kind.first_channels(width);
        let mut s = size;
        while s > 4 {
            let name = format!("conv{}", convs.len());
            convs.push(Conv2d::new(&mut ps, &name, cin, cout, 4, ConvGeom::new(2, 1), true, rng));
            cin = cout;
            cout = (cout * 2).min(cap);
            s /= 2;
        }
        convs.push(Conv2d::new(&mut ps, "out", cin, 1, s, ConvGeom::new(1, 0), true, rng));
        let spectral = convs
            .iter()
            .map(|c| SpectralState::new(ps.get(c.weight).shape(), rng))
            .collect();
        Ok(Self {
            kind,
            params: ps,
            spectral,
            convs,
            input_size: size,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.convs.len()
    }

    /// Advance every power iteration by `iters` steps from the current
    /// weights.
    pub fn update_spectral(&mut self, iters: usize) -> Result<()> {
        for (conv, st) in self.convs.iter().zip(&mut self.spectral) {
            st.power_iterate(self.params.get(conv.weight), iters)?;
        }
        Ok(())
    }

    /// Logits `N x 1 x 1 x 1` for an already prepared input.
    pub fn forward(&self, g: &mut Graph<T>, b: &Bound, input: Var) -> Result<Var> {
        match *g.shape(input) {
            [_, c, h, w] if c == self.kind.in_channels() && h == self.input_size && w == self.input_size => {}
            ref s => {
                return Err(Error::geometry(
                    "discriminator_forward",
                    format!(
                        "{} expects N x {} x {s2} x {s2}, got {s:?}",
                        self.kind.name(),
                        self.kind.in_channels(),
                        s2 = self.input_size
                    ),
                ))
            }
        }
        let mut h = input;
        let last = self.convs.len() - 1;
        for (i, (conv, st)) in self.convs.iter().zip(&self.spectral).enumerate() {
            let w = g.spectral_norm(b.var(conv.weight), &st.u, &st.v)?;
            h = conv.forward_with_weight(g, b, w, h)?;
            if i < last {
                h = g.leaky_relu(h, LRELU_SLOPE)?;
            }
        }
        Ok(h)
    }

    pub fn cast<U: Float>(&self) -> Discriminator<U> {
        Discriminator {
            kind: self.kind,
            params: self.params.cast(),
            spectral: self
                .spectral
                .iter()
                .map(|s| SpectralState {
                    u: s.u.iter().map(|x| U::from_f64(x.as_f64())).collect(),
                    v: s.v.iter().map(|x| U::from_f64(x.as_f64())).collect(),
                })
                .collect(),
            convs: self.convs.clone(),
            input_size: self.input_size,
        }
    }
}

/// Views of an image consumed by the discriminators.
#[derive(Clone, Copy, Debug)]
pub struct DiscInputs {
    pub i0: Var,
    pub i1: Var,
    pub h0: Option<Var>,
    pub h1: Option<Var>,
}

impl DiscInputs {
    pub fn prepare<T: Float>(g: &mut Graph<T>, image: Var, highfreq: bool) -> Result<Self> {
        let i1 = g.avg_pool2(image)?;
        let (h0, h1) = if highfreq {
            let levels = wavelet::multi_level_pool_var(g, image, 2)?;
            (
                Some(wavelet::high_band_stack_var(g, &levels[0])?),
                Some(wavelet::high_band_stack_var(g, &levels[1])?),
            )
        } else {
            (None, None)
        };
        Ok(Self { i0: image, i1, h0, h1 })
    }

    pub fn get(&self, kind: DiscKind) -> Option<Var> {
        match kind {
            DiscKind::I0 => Some(self.i0),
            DiscKind::I1 => Some(self.i1),
            DiscKind::H0 => self.h0,
            DiscKind::H1 => self.h1,
        }
    }
}

/// The two image-level and (optionally) two high-frequency discriminators.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorSet<T: Float = f32> {
    pub nets: Vec<Discriminator<T>>,
}

/// Graph handles for every discriminator of a set, in the same order.
#[derive(Clone, Debug)]
pub struct DiscBound(pub Vec<Bound>);

impl<T: Float> DiscriminatorSet<T> {
    pub fn new(width: usize, image_size: usize, highfreq: bool, rng: &mut impl Rng) -> Result<Self> {
        let kinds: &[DiscKind] = if highfreq {
            &DiscKind::ALL
        } else {
            &DiscKind::ALL[..2]
        };
        let nets = kinds
            .iter()
            .map(|&k| Discriminator::new(k, width, image_size, rng))
            .collect::<Result<_>>()?;
        Ok(Self { nets })
    }

    pub fn has_highfreq(&self) -> bool {
        self.nets.iter().any(|d| matches!(d.kind, DiscKind::H0 | DiscKind::H1))
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> DiscBound {
        DiscBound(self.nets.iter().map(|d| d.params.bind(g, trainable)).collect())
    }

    pub fn update_spectral(&mut self, iters: usize) -> Result<()> {
        self.nets.iter_mut().try_for_each(|d| d.update_spectral(iters))
    }

    fn average(&self, g: &mut Graph<T>, b: &DiscBound, inputs: &DiscInputs, kinds: [DiscKind; 2]) -> Result<Option<Var>> {
        let mut logits = Vec::new();
        for (d, bound) in self.nets.iter().zip(&b.0) {
            if kinds.contains(&d.kind) {
                let input = inputs.get(d.kind).ok_or_else(|| {
                    Error::geometry("discriminator_forward", format!("{} input not prepared", d.kind.name()))
                })?;
                logits.push(d.forward(g, bound, input)?);
            }
        }
        match logits.as_slice() {
            [] => Ok(None),
            [a] => Ok(Some(*a)),
            [a, rest @ ..] => {
                let mut acc = *a;
                for r in rest {
                    acc = g.add(acc, *r)?;
                }
                Ok(Some(g.scale(acc, 1.0 / logits.len() as f64)?))
            }
        }
    }

    /// Mean of the `D_I0` and `D_I1` logits.
    pub fn image_logits(&self, g: &mut Graph<T>, b: &DiscBound, inputs: &DiscInputs) -> Result<Var> {
        self.average(g, b, inputs, [DiscKind::I0, DiscKind::I1])?
            .ok_or_else(|| Error::Config("no image-level discriminators".into()))
    }

    /// Mean of the `D_H0` and `D_H1` logits, `None` when disabled.
    pub fn highfreq_logits(&self, g: &mut Graph<T>, b: &DiscBound, inputs: &DiscInputs) -> Result<Option<Var>> {
        self.average(g, b, inputs, [DiscKind::H0, DiscKind::H1])
    }

    pub fn cast<U: Float>(&self) -> DiscriminatorSet<U> {
        DiscriminatorSet {
            nets: self.nets.iter().map(Discriminator::cast).collect(),
        }
    }
}
