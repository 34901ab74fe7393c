use rand::Rng;

use super::layers::{Conv2d, LRELU_SLOPE};
use super::params::{Bound, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{ConvGeom, Float, Graph, ReduceKind, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub width: usize,
    pub num_attrs: usize,
    /// Hidden units of each per-attribute head.
    pub hidden: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            width: 16,
            num_attrs: 3,
            hidden: 16,
        }
    }
}

const TRUNK_MULT: [usize; 4] = [1, 2, 4, 4];

/// Strided CNN trunk (3x3, stride 2) with global average pooling and `K`
/// independent two-layer binary heads. The heads are realised together as a
/// 1x1 convolution followed by a grouped 1x1 convolution with `K` groups.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier<T: Float = f32> {
    pub config: ClassifierConfig,
    pub params: ParamSet<T>,
    trunk: Vec<Conv2d>,
    head_hidden: Conv2d,
    head_out: Conv2d,
}

/// Classifier outputs: `N x K` logits and the `N x F` pooled feature.
#[derive(Clone, Copy, Debug)]
pub struct ClassifierOutput {
    pub logits: Var,
    pub feature: Var,
}

impl<T: Float> Classifier<T> {
    pub fn new(config: ClassifierConfig, rng: &mut impl Rng) -> Result<Self> {
        let ClassifierConfig { width, num_attrs: k, hidden } = config;
        if width == 0 || k == 0 || hidden == 0 {
            return Err(Error::Config("classifier sizes must be positive".into()));
        }
        let mut ps = ParamSet::new();
        let mut cin = 3;
        let trunk = TRUNK_MULT
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let conv = Conv2d::new(&mut ps, &format!("trunk{i}"), cin, m * width, 3, ConvGeom::new(2, 1), true, rng);
                cin = m * width;
                conv
            })
            .collect();
        let head_hidden = Conv2d::pointwise(&mut ps, "head_hidden", cin, k * hidden, true, rng);
        let head_out = Conv2d::new(&mut ps, "head_out", k * hidden, k, 1, ConvGeom::grouped(1, 0, k), true, rng);
        Ok(Self {
            config,
            params: ps,
            trunk,
            head_hidden,
            head_out,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.trunk.last().map_or(0, |c| c.out_channels)
    }

    pub fn forward(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Result<ClassifierOutput> {
        let n = match *g.shape(x) {
            [n, 3, h, w] if h > 0 && w > 0 => n,
            ref s => {
                return Err(Error::geometry(
                    "classifier_forward",
                    format!("expected N x 3 x H x W image batch, got {s:?}"),
                ))
            }
        };
        let mut h = x;
        for conv in &self.trunk {
            h = conv.forward(g, b, h)?;
            h = g.leaky_relu(h, LRELU_SLOPE)?;
        }
        let pooled = g.reduce(h, ReduceKind::Mean, Some(&[2, 3]))?;
        let feature = g.reshape(pooled, &[n, self.feature_dim()])?;
        let z = self.head_hidden.forward(g, b, pooled)?;
        let z = g.leaky_relu(z, LRELU_SLOPE)?;
        let z = self.head_out.forward(g, b, z)?;
        let logits = g.reshape(z, &[n, self.config.num_attrs])?;
        Ok(ClassifierOutput { logits, feature })
    }

    /// Attribute probabilities `σ(logits)` for a batch, `N x K`.
    pub fn probabilities(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &b, xv)?;
        let p = g.sigmoid(out.logits)?;
        Ok(g.value(p).clone())
    }

    /// Zero the output heads so every probability is exactly 0.5.
    pub fn zero_heads(&mut self) {
        self.head_out.zero(&mut self.params);
    }

    pub fn cast<U: Float>(&self) -> Classifier<U> {
        Classifier {
            config: self.config,
            params: self.params.cast(),
            trunk: self.trunk.clone(),
            head_hidden: self.head_hidden.clone(),
            head_out: self.head_out.clone(),
        }
    }
}
