use rand::Rng;

use super::layers::{Conv2d, ResBlock, Resample, LRELU_SLOPE};
use super::params::{Bound, ParamSet};
use crate::error::{Error, Result};
use crate::loss::AttributeDelta;
use crate::tensor::{Float, Graph, Tensor, Var};
use crate::wavelet::{self, Band};

/// What the encoder taps contribute to the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SkipMode {
    /// LH, HL and HH, each unpooled separately.
    HighFreq,
    /// LL only.
    LowFreq,
    /// All four bands, each unpooled separately.
    AllFreq,
    /// The raw encoder activation.
    Vanilla,
    /// No skip connections.
    Off,
}

impl SkipMode {
    pub const ALL: [SkipMode; 5] = [
        SkipMode::HighFreq,
        SkipMode::LowFreq,
        SkipMode::AllFreq,
        SkipMode::Vanilla,
        SkipMode::Off,
    ];

    pub fn bands(self) -> &'static [Band] {
        match self {
            SkipMode::HighFreq => &Band::HIGH,
            SkipMode::LowFreq => &[Band::LL],
            SkipMode::AllFreq => &Band::ALL,
            SkipMode::Vanilla | SkipMode::Off => &[],
        }
    }

    /// Number of tap-sized maps concatenated onto each decoder input.
    pub fn extra_maps(self) -> usize {
        match self {
            SkipMode::Vanilla => 1,
            SkipMode::Off => 0,
            m => m.bands().len(),
        }
    }

    /// Decoder input channel multiplier.
    pub fn multiplier(self) -> usize {
        1 + self.extra_maps()
    }

    pub fn name(self) -> &'static str {
        match self {
            SkipMode::HighFreq => "high",
            SkipMode::LowFreq => "low",
            SkipMode::AllFreq => "all",
            SkipMode::Vanilla => "vanilla",
            SkipMode::Off => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown skip mode {s:?} (high|low|all|vanilla|none)")))
    }

    fn spatial_divisor(self) -> usize {
        if self.bands().is_empty() {
            4
        } else {
            8
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub width: usize,
    pub num_attrs: usize,
    pub skip: SkipMode,
    pub output_tanh: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            width: 16,
            num_attrs: 3,
            skip: SkipMode::HighFreq,
            output_tanh: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    from_rgb: Conv2d,
    down: [ResBlock; 2],
    bottleneck: Vec<ResBlock>,
    up: [ResBlock; 2],
    to_rgb: Conv2d,
}

const ADAIN_SLOT: usize = 3;
const BOTTLENECK_LEN: usize = 6;

/// Encoder-decoder generator with skip connections from the three encoder
/// stages into the mirrored decoder stages and an AdaIN block in the
/// bottleneck.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T: Float = f32> {
    pub config: GeneratorConfig,
    pub params: ParamSet<T>,
    layout: Layout,
}

impl<T: Float> Generator<T> {
    pub fn new(config: GeneratorConfig, rng: &mut impl Rng) -> Result<Self> {
        let GeneratorConfig { width: w, num_attrs: k, skip, .. } = config;
        if w == 0 || k == 0 {
            return Err(Error::Config("generator width and attribute count must be positive".into()));
        }
        let m = skip.multiplier();
        let mut ps = ParamSet::new();
        let from_rgb = Conv2d::same3(&mut ps, "from_rgb", 3, w, rng);
        let down = [
            ResBlock::new(&mut ps, "down0", w, w, 2 * w, Resample::Down, None, rng),
            ResBlock::new(&mut ps, "down1", 2 * w, 2 * w, 4 * w, Resample::Down, None, rng),
        ];
        let bottleneck = (0..BOTTLENECK_LEN)
            .map(|i| {
                let adain = (i == ADAIN_SLOT).then_some(k);
                ResBlock::new(&mut ps, &format!("mid{i}"), 4 * w, 4 * w, 4 * w, Resample::None, adain, rng)
            })
            .collect();
        let up = [
            ResBlock::new(&mut ps, "up0", 4 * w * m, 4 * w, 2 * w, Resample::Up, None, rng),
            ResBlock::new(&mut ps, "up1", 2 * w * m, 2 * w, w, Resample::Up, None, rng),
        ];
        let to_rgb = Conv2d::same3(&mut ps, "to_rgb", w * m, 3, rng);
        Ok(Self {
            config,
            params: ps,
            layout: Layout {
                from_rgb,
                down,
                bottleneck,
                up,
                to_rgb,
            },
        })
    }

    /// A high-frequency-skip generator whose weights are set by hand so that
    /// `G(x, Δ) = x` for every `x` and `Δ`.
    ///
    /// Residual branches are zeroed; shortcuts pass the first channels
    /// through, the decoder sums its input with the unpooled skip bands, and
    /// the output layer reads the pair `(x, −x)` so that
    /// `LReLU(a) − LReLU(−a) = (1 + slope)·a` undoes the activation. The
    /// output `tanh` is disabled.
    pub fn identity(config: GeneratorConfig, rng: &mut impl Rng) -> Result<Self> {
        Self::construct(config, true, rng)
    }

    /// Like [`identity`](Self::identity) but the output layer reads only the
    /// outermost skip bands, so `G(x, Δ)` is the high-frequency part of `x`.
    pub fn skip_only(config: GeneratorConfig, rng: &mut impl Rng) -> Result<Self> {
        Self::construct(config, false, rng)
    }

    fn construct(mut config: GeneratorConfig, read_decoder: bool, rng: &mut impl Rng) -> Result<Self> {
        if config.skip != SkipMode::HighFreq || config.width < 6 {
            return Err(Error::Config(
                "identity construction needs high-frequency skips and width >= 6".into(),
            ));
        }
        config.output_tanh = false;
        let mut gen = Self::new(config, rng)?;
        let w = config.width;
        let l = gen.layout.clone();
        let ps = &mut gen.params;

        let set = |ps: &mut ParamSet<T>, conv: &Conv2d, o: usize, i: usize, v: f64| {
            let k = conv.kernel;
            let c = k / 2;
            let idx = ((o * conv.in_channels + i) * k + c) * k + c;
            ps.get_mut(conv.weight).data_mut()[idx] = T::from_f64(v);
        };

        l.from_rgb.zero(ps);
        for c in 0..3 {
            set(ps, &l.from_rgb, c, c, 1.0);
            set(ps, &l.from_rgb, c + 3, c, -1.0);
        }
        for block in l.down.iter().chain(&l.bottleneck).chain(&l.up) {
            block.zero_residual(ps);
            if let Some(sc) = &block.shortcut {
                sc.zero(ps);
            }
        }
        for block in &l.down {
            let sc = block.shortcut.as_ref().expect("down blocks widen");
            for i in 0..block.conv1.in_channels {
                set(ps, sc, i, i, 1.0);
            }
        }
        // The innermost skip is already contained in the bottleneck signal.
        let up0 = l.up[0].shortcut.as_ref().expect("up blocks narrow");
        for i in 0..2 * w {
            set(ps, up0, i, i, 1.0);
        }
        let up1 = l.up[1].shortcut.as_ref().expect("up blocks narrow");
        for grp in 0..4 {
            for i in 0..w {
                set(ps, up1, i, grp * 2 * w + i, 1.0);
            }
        }
        l.to_rgb.zero(ps);
        let gain = 1.0 / (1.0 + LRELU_SLOPE);
        let first = if read_decoder { 0 } else { 1 };
        for grp in first..4 {
            for c in 0..3 {
                set(ps, &l.to_rgb, c, grp * w + c, gain);
                set(ps, &l.to_rgb, c, grp * w + c + 3, -gain);
            }
        }
        Ok(gen)
    }

    pub fn forward(&self, g: &mut Graph<T>, b: &Bound, x: Var, cond: Var) -> Result<Var> {
        self.forward_inner(g, b, x, cond, false)
    }

    /// Forward pass with every skip contribution replaced by zeros.
    pub fn forward_zero_skips(&self, g: &mut Graph<T>, b: &Bound, x: Var, cond: Var) -> Result<Var> {
        self.forward_inner(g, b, x, cond, true)
    }

    fn check_input(&self, g: &Graph<T>, x: Var, cond: Var) -> Result<()> {
        let div = self.config.skip.spatial_divisor();
        match *g.shape(x) {
            [n, 3, h, w] if h % div == 0 && w % div == 0 && h > 0 && w > 0 => {
                let expect = [n, self.config.num_attrs, 1, 1];
                if g.shape(cond) != expect {
                    return Err(Error::shape("generator_forward", &expect, g.shape(cond)));
                }
                Ok(())
            }
            ref s => Err(Error::geometry(
                "generator_forward",
                format!("expected N x 3 x H x W with H, W divisible by {div}, got {s:?}"),
            )),
        }
    }

    fn forward_inner(&self, g: &mut Graph<T>, b: &Bound, x: Var, cond: Var, zero_skips: bool) -> Result<Var> {
        self.check_input(g, x, cond)?;
        let l = &self.layout;
        let e1 = l.from_rgb.forward(g, b, x)?;
        let e2 = l.down[0].forward(g, b, e1, None)?;
        let e3 = l.down[1].forward(g, b, e2, None)?;
        let mut h = e3;
        for block in &l.bottleneck {
            h = block.forward(g, b, h, Some(cond))?;
        }
        h = self.merge_skip(g, h, e3, zero_skips)?;
        h = l.up[0].forward(g, b, h, None)?;
        h = self.merge_skip(g, h, e2, zero_skips)?;
        h = l.up[1].forward(g, b, h, None)?;
        h = self.merge_skip(g, h, e1, zero_skips)?;
        h = g.leaky_relu(h, LRELU_SLOPE)?;
        let out = l.to_rgb.forward(g, b, h)?;
        if self.config.output_tanh {
            g.tanh(out)
        } else {
            Ok(out)
        }
    }

    fn merge_skip(&self, g: &mut Graph<T>, dec: Var, tap: Var, zero: bool) -> Result<Var> {
        let mode = self.config.skip;
        let mut parts = vec![dec];
        match mode {
            SkipMode::Off => return Ok(dec),
            SkipMode::Vanilla => parts.push(tap),
            _ => {
                let bands = wavelet::haar_pool_var(g, tap)?;
                for &band in mode.bands() {
                    parts.push(wavelet::unpool_band_var(g, *bands.get(band), band)?);
                }
            }
        }
        if zero {
            let shape = g.shape(tap).to_vec();
            for p in &mut parts[1..] {
                *p = g.constant(Tensor::zeros(&shape));
            }
        }
        g.concat_channels(&parts)
    }

    /// Run on concrete tensors with a prepared `N x K x 1 x 1` condition.
    pub fn apply(&self, x: &Tensor<T>, cond: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let cv = g.constant(cond.clone());
        let y = self.forward(&mut g, &b, xv, cv)?;
        Ok(g.value(y).clone())
    }

    /// `G(x, α·Δ)` with one delta per sample.
    pub fn edit(&self, x: &Tensor<T>, deltas: &[AttributeDelta]) -> Result<Tensor<T>> {
        let cond = AttributeDelta::condition_tensor(deltas)?;
        self.apply(x, &cond)
    }

    /// Same architecture with different weights (e.g. the EMA shadow).
    pub fn with_params(&self, params: ParamSet<T>) -> Result<Self> {
        let mut out = Self {
            config: self.config,
            params: self.params.clone(),
            layout: self.layout.clone(),
        };
        out.params.assign(&params)?;
        Ok(out)
    }

    pub fn cast<U: Float>(&self) -> Generator<U> {
        Generator {
            config: self.config,
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Uniform};

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn random_image(n: usize, s: usize, seed: u64) -> Tensor<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let u = Uniform::new(-1.0, 1.0).unwrap();
        let data = (0..n * 3 * s * s).map(|_| u.sample(&mut r)).collect();
        Tensor::new(&[n, 3, s, s], data).unwrap()
    }

    fn cfg(width: usize, skip: SkipMode) -> GeneratorConfig {
        GeneratorConfig {
            width,
            num_attrs: 2,
            skip,
            output_tanh: true,
        }
    }

    #[test]
    fn output_shape_matches_input_for_every_mode() {
        for mode in SkipMode::ALL {
            let gen = Generator::<f32>::new(cfg(4, mode), &mut rng()).unwrap();
            let x = random_image(2, 16, 1).cast();
            let y = gen.edit(&x, &[AttributeDelta::zero(2), AttributeDelta::zero(2)]).unwrap();
            assert_eq!(y.shape(), x.shape(), "{mode:?}");
            assert!(y.data().iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn decoder_channel_multipliers() {
        assert_eq!(SkipMode::HighFreq.multiplier(), 4);
        assert_eq!(SkipMode::Vanilla.multiplier(), 2);
        assert_eq!(SkipMode::LowFreq.multiplier(), 2);
        assert_eq!(SkipMode::AllFreq.multiplier(), 5);
        assert_eq!(SkipMode::Off.multiplier(), 1);
        let gen = Generator::<f32>::new(cfg(4, SkipMode::HighFreq), &mut rng()).unwrap();
        assert_eq!(gen.layout.up[0].conv1.in_channels, 4 * 4 * 4);
        assert_eq!(gen.layout.to_rgb.in_channels, 4 * 4);
    }

    #[test]
    fn identity_construction_reproduces_input() {
        let gen = Generator::<f64>::identity(cfg(8, SkipMode::HighFreq), &mut rng()).unwrap();
        let x = random_image(2, 16, 2);
        let d = AttributeDelta::new(vec![1, -1], 1.5).unwrap();
        let y = gen.edit(&x, &[d.clone(), d]).unwrap();
        assert!(y.max_abs_diff(&x).unwrap() < 1e-10);
    }

    #[test]
    fn skip_only_construction_keeps_high_frequencies() {
        let gen = Generator::<f64>::skip_only(cfg(8, SkipMode::HighFreq), &mut rng()).unwrap();
        let x = random_image(1, 16, 3);
        let y = gen.edit(&x, &[AttributeDelta::zero(2)]).unwrap();
        let hx = wavelet::high_freq_reconstruct(&wavelet::haar_pool(&x).unwrap()).unwrap();
        assert!(y.max_abs_diff(&hx).unwrap() < 1e-10);
    }

    #[test]
    fn identity_requires_room_for_signed_copies() {
        assert!(Generator::<f32>::identity(cfg(4, SkipMode::HighFreq), &mut rng()).is_err());
        assert!(Generator::<f32>::identity(cfg(8, SkipMode::Vanilla), &mut rng()).is_err());
    }

    #[test]
    fn skips_are_live_paths() {
        let gen = Generator::<f64>::new(cfg(4, SkipMode::HighFreq), &mut rng()).unwrap();
        let x = random_image(1, 16, 4);
        let mut g = Graph::new();
        let b = gen.params.bind(&mut g, false);
        let xv = g.constant(x);
        let c = g.constant(Tensor::zeros(&[1, 2, 1, 1]));
        let y = gen.forward(&mut g, &b, xv, c).unwrap();
        let z = gen.forward_zero_skips(&mut g, &b, xv, c).unwrap();
        assert!(g.value(y).max_abs_diff(g.value(z)).unwrap() > 1e-6);
    }

    #[test]
    fn constant_image_gives_zero_high_frequency_skips() {
        let gen = Generator::<f64>::new(cfg(4, SkipMode::HighFreq), &mut rng()).unwrap();
        let x = Tensor::full(&[1, 3, 16, 16], 0.3);
        let mut g = Graph::new();
        let b = gen.params.bind(&mut g, false);
        let xv = g.constant(x);
        let c = g.constant(Tensor::zeros(&[1, 2, 1, 1]));
        let e1 = gen.layout.from_rgb.forward(&mut g, &b, xv).unwrap();
        // Away from the zero-padded border the first tap is constant too.
        let inner = {
            let v = g.value(e1);
            let [_, ch, h, w] = v.dims4();
            let mut out = Vec::new();
            for c in 0..ch {
                for i in 2..h - 2 {
                    for j in 2..w - 2 {
                        out.push(v.data()[(c * h + i) * w + j]);
                    }
                }
            }
            Tensor::new(&[1, ch, h - 4, w - 4], out).unwrap()
        };
        let bands = wavelet::haar_pool(&inner).unwrap();
        assert!(bands.high_energy() < 1e-20);
        let y = gen.forward(&mut g, &b, xv, c).unwrap();
        assert!(g.value(y).is_finite());
    }

    #[test]
    fn rejects_bad_geometry() {
        let gen = Generator::<f32>::new(cfg(4, SkipMode::HighFreq), &mut rng()).unwrap();
        let x = Tensor::zeros(&[1, 3, 12, 12]);
        assert!(gen.edit(&x, &[AttributeDelta::zero(2)]).is_err());
        let x = Tensor::zeros(&[1, 3, 16, 16]);
        assert!(gen.edit(&x, &[AttributeDelta::zero(3)]).is_err());
    }
}
