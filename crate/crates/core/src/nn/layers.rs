use rand::Rng;

use super::params::{Bound, ParamId, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{ConvGeom, Float, Graph, Tensor, Var};

pub const LRELU_SLOPE: f64 = 0.2;
pub const IN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float>(
        ps: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        geom: ConvGeom,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let per_group = cin / geom.groups;
        let fan_in = per_group * kernel * kernel;
        let weight = ps.add_he(
            format!("{name}.weight"),
            &[cout, per_group, kernel, kernel],
            fan_in,
            1.0,
            rng,
        );
        let bias = bias.then(|| ps.add(format!("{name}.bias"), Tensor::zeros(&[cout])));
        Self {
            weight,
            bias,
            geom,
            in_channels: cin,
            out_channels: cout,
            kernel,
        }
    }

    /// 3x3, stride 1, padding 1.
    pub fn same3<T: Float>(ps: &mut ParamSet<T>, name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        Self::new(ps, name, cin, cout, 3, ConvGeom::new(1, 1), true, rng)
    }

    /// 1x1 projection; on `N x C x 1 x 1` inputs this is a linear layer.
    pub fn pointwise<T: Float>(
        ps: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        cout: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        Self::new(ps, name, cin, cout, 1, ConvGeom::new(1, 0), bias, rng)
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<Var> {
        self.forward_with_weight(g, b, b.var(self.weight), x)
    }

    /// Forward with a substitute weight (e.g. its spectrally normalised copy).
    pub fn forward_with_weight<T: Float>(&self, g: &mut Graph<T>, b: &Bound, w: Var, x: Var) -> Result<Var> {
        let bias = self.bias.map(|id| b.var(id));
        g.conv2d(x, w, bias, self.geom)
    }

    pub fn zero<T: Float>(&self, ps: &mut ParamSet<T>) {
        ps.get_mut(self.weight).data_mut().fill(T::zero());
        if let Some(b) = self.bias {
            ps.get_mut(b).data_mut().fill(T::zero());
        }
    }
}

/// Adaptive instance normalisation driven by the attribute condition.
///
/// A 1x1 affine map turns the `N x K x 1 x 1` condition into per-sample
/// `γ` and `β`; it starts at weight 0, bias `(1, 0)` so a zero condition
/// reduces to plain instance normalisation.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaIn {
    pub affine: Conv2d,
    pub channels: usize,
}

impl AdaIn {
    pub fn new<T: Float>(ps: &mut ParamSet<T>, name: &str, num_attrs: usize, channels: usize, rng: &mut impl Rng) -> Self {
        let affine = Conv2d::pointwise(ps, &format!("{name}.affine"), num_attrs, 2 * channels, true, rng);
        ps.get_mut(affine.weight).data_mut().fill(T::zero());
        if let Some(bias) = affine.bias {
            let data = ps.get_mut(bias).data_mut();
            data[..channels].fill(T::one());
            data[channels..].fill(T::zero());
        }
        Self { affine, channels }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, b: &Bound, x: Var, cond: Var) -> Result<Var> {
        let c = g.shape(x)[1];
        if c != self.channels {
            return Err(Error::geometry("adain", format!("expected {} channels, got {c}", self.channels)));
        }
        let k = g.shape(cond)[1];
        if k != self.affine.in_channels {
            return Err(Error::geometry(
                "adain",
                format!("condition length {k}, expected {}", self.affine.in_channels),
            ));
        }
        let normed = g.instance_norm(x, IN_EPS)?;
        let (gamma, beta) = self.modulation(g, b, cond)?;
        let scaled = g.mul(normed, gamma)?;
        g.add(scaled, beta)
    }

    /// `(γ, β)`, each `N x C x 1 x 1`.
    pub fn modulation<T: Float>(&self, g: &mut Graph<T>, b: &Bound, cond: Var) -> Result<(Var, Var)> {
        let gb = self.affine.forward(g, b, cond)?;
        let gamma = g.slice_channels(gb, 0, self.channels)?;
        let beta = g.slice_channels(gb, self.channels, self.channels)?;
        Ok((gamma, beta))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Norm {
    Instance,
    Adaptive(AdaIn),
}

impl Norm {
    fn forward<T: Float>(&self, g: &mut Graph<T>, b: &Bound, x: Var, cond: Option<Var>) -> Result<Var> {
        match self {
            Norm::Instance => g.instance_norm(x, IN_EPS),
            Norm::Adaptive(a) => {
                let cond = cond.ok_or_else(|| Error::geometry("adain", "missing condition"))?;
                a.forward(g, b, x, cond)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resample {
    None,
    /// 2x2 average pooling between the two convolutions.
    Down,
    /// Nearest-neighbour x2 between the two convolutions.
    Up,
}

/// Pre-activation residual block: `norm-LReLU-conv-[resample]-norm-LReLU-conv`
/// plus a shortcut (1x1 projection when channel counts differ, resampled to
/// match).
#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock {
    pub norm1: Norm,
    pub conv1: Conv2d,
    pub norm2: Norm,
    pub conv2: Conv2d,
    pub shortcut: Option<Conv2d>,
    pub resample: Resample,
}

impl ResBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float>(
        ps: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        mid: usize,
        cout: usize,
        resample: Resample,
        adain_attrs: Option<usize>,
        rng: &mut impl Rng,
    ) -> Self {
        let norm = |ps: &mut ParamSet<T>, tag: &str, ch: usize, rng: &mut _| match adain_attrs {
            Some(k) => Norm::Adaptive(AdaIn::new(ps, &format!("{name}.{tag}"), k, ch, rng)),
            None => Norm::Instance,
        };
        let norm1 = norm(ps, "norm1", cin, rng);
        let conv1 = Conv2d::same3(ps, &format!("{name}.conv1"), cin, mid, rng);
        let norm2 = norm(ps, "norm2", mid, rng);
        let conv2 = Conv2d::same3(ps, &format!("{name}.conv2"), mid, cout, rng);
        let shortcut = (cin != cout).then(|| Conv2d::pointwise(ps, &format!("{name}.shortcut"), cin, cout, false, rng));
        Self {
            norm1,
            conv1,
            norm2,
            conv2,
            shortcut,
            resample,
        }
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, b: &Bound, x: Var, cond: Option<Var>) -> Result<Var> {
        let h = self.norm1.forward(g, b, x, cond)?;
        let h = g.leaky_relu(h, LRELU_SLOPE)?;
        let h = self.conv1.forward(g, b, h)?;
        let h = match self.resample {
            Resample::None => h,
            Resample::Down => g.avg_pool2(h)?,
            Resample::Up => g.upsample2(h)?,
        };
        let h = self.norm2.forward(g, b, h, cond)?;
        let h = g.leaky_relu(h, LRELU_SLOPE)?;
        let h = self.conv2.forward(g, b, h)?;

        // A 1x1 conv commutes with both resamplers, so project first at the
        // cheaper resolution.
        let s = match &self.shortcut {
            Some(conv) => conv.forward(g, b, x)?,
            None => x,
        };
        let s = match self.resample {
            Resample::None => s,
            Resample::Down => g.avg_pool2(s)?,
            Resample::Up => g.upsample2(s)?,
        };
        g.add(s, h)
    }

    /// Zero the residual branch so the block reduces to its shortcut.
    pub fn zero_residual<T: Float>(&self, ps: &mut ParamSet<T>) {
        self.conv2.zero(ps);
    }
}
