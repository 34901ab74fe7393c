use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Attribute renderers in label order.
pub const ATTRIBUTE_NAMES: [&str; 3] = ["eyeglasses", "smile", "dark_hair"];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub size: usize,
    pub num_attrs: usize,
    /// Amplitude of the per-sample fine texture (speckle, stripes, moles).
    pub detail_texture_amp: f64,
    /// Probability that each attribute is present.
    pub attr_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            size: 32,
            num_attrs: 3,
            detail_texture_amp: 0.3,
            attr_prob: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 8 || !self.size.is_multiple_of(4) {
            return Err(Error::Config(format!("image size {} must be a multiple of 4, >= 8", self.size)));
        }
        if self.num_attrs == 0 || self.num_attrs > ATTRIBUTE_NAMES.len() {
            return Err(Error::Config(format!(
                "num_attrs {} must be in 1..={}",
                self.num_attrs,
                ATTRIBUTE_NAMES.len()
            )));
        }
        if !(self.detail_texture_amp >= 0.0 && self.detail_texture_amp <= 1.0) {
            return Err(Error::Config("detail_texture_amp must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.attr_prob) {
            return Err(Error::Config("attr_prob must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Provenance {
    GroundTruth,
    Pseudo,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::GroundTruth => "ground_truth",
            Provenance::Pseudo => "pseudo",
        }
    }
}

/// One rendered image (`1 x 3 x S x S`, values in `[−1, 1]`) with labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub image: Tensor<f32>,
    pub labels: Vec<bool>,
    pub provenance: Provenance,
    pub seed: u64,
}

/// Seed of sample `index` in a dataset seeded with `dataset_seed`.
pub fn sample_seed(dataset_seed: u64, index: usize) -> u64 {
    dataset_seed ^ index as u64
}

/// Number of worker threads from `WAVEGAN_THREADS` (default 1).
pub fn worker_threads() -> usize {
    std::env::var("WAVEGAN_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

pub fn generate_dataset(config: &SynthConfig, count: usize, seed: u64) -> Result<Vec<SynthSample>> {
    generate_dataset_with_threads(config, count, seed, worker_threads())
}

/// Samples are independently seeded, so the result does not depend on
/// `threads`.
pub fn generate_dataset_with_threads(
    config: &SynthConfig,
    count: usize,
    seed: u64,
    threads: usize,
) -> Result<Vec<SynthSample>> {
    config.validate()?;
    let threads = threads.clamp(1, count.max(1));
    if threads == 1 {
        return Ok((0..count).map(|i| render_sample(config, sample_seed(seed, i))).collect());
    }
    let chunk = count.div_ceil(threads);
    let mut out = Vec::with_capacity(count);
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let range = t * chunk..((t + 1) * chunk).min(count);
                s.spawn(move || {
                    range
                        .map(|i| render_sample(config, sample_seed(seed, i)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            out.extend(h.join().expect("dataset worker panicked"));
        }
    });
    Ok(out)
}

fn coverage(signed_dist_px: f64) -> f64 {
    (0.5 - signed_dist_px).clamp(0.0, 1.0)
}

fn blend(px: &mut [f64; 3], color: [f64; 3], alpha: f64) {
    for c in 0..3 {
        px[c] += alpha * (color[c] - px[c]);
    }
}

/// Separable `[1, 4, 6, 4, 1] / 16` blur with replicated borders.
fn binomial_blur(plane: &mut [f64], s: usize) {
    const K: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let at = |i: isize| i.clamp(0, s as isize - 1) as usize;
    let mut tmp = vec![0.0; s * s];
    for i in 0..s {
        for j in 0..s {
            tmp[i * s + j] = (0..5).map(|t| K[t] * plane[i * s + at(j as isize + t as isize - 2)]).sum();
        }
    }
    for i in 0..s {
        for j in 0..s {
            plane[i * s + j] = (0..5).map(|t| K[t] * tmp[at(i as isize + t as isize - 2) * s + j]).sum();
        }
    }
}

/// Render one sample from its seed.
pub fn render_sample(config: &SynthConfig, seed: u64) -> SynthSample {
    let mut label_rng = ChaCha8Rng::seed_from_u64(seed);
    label_rng.set_stream(1);
    let labels: Vec<bool> = (0..config.num_attrs)
        .map(|_| label_rng.random_bool(config.attr_prob))
        .collect();
    render_with_labels(config, seed, &labels)
}

/// Render the sample of `seed` with the given attribute labels; everything
/// except the attribute strokes is unchanged.
pub fn render_with_labels(config: &SynthConfig, seed: u64, labels: &[bool]) -> SynthSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attr = |i: usize, l: &[bool]| l.get(i).copied().unwrap_or(false);

    let mut jit = |r: f64| rng.random_range(-r..=r);
    let bg_top = [jit(0.3) - 0.2, jit(0.3) - 0.1, jit(0.3) + 0.3];
    let bg_bottom = [bg_top[0] + jit(0.2), bg_top[1] + jit(0.2), bg_top[2] - 0.3];
    let skin = [0.55 + jit(0.15), 0.2 + jit(0.15), -0.05 + jit(0.15)];
    let (cx, cy) = (0.5 + jit(0.03), 0.55 + jit(0.03));
    let (rx, ry) = (0.30 + jit(0.02), 0.36 + jit(0.02));
    let eye_dx = 0.12 + jit(0.01);
    let eye_y = cy - 0.08 + jit(0.01);
    let mouth_y = cy + 0.18 + jit(0.01);
    let hair_line = cy - 0.45 * ry + jit(0.02);
    let dark_hair = [-0.75 + jit(0.1), -0.8 + jit(0.05), -0.8 + jit(0.05)];
    let light_hair = [0.7 + jit(0.1), 0.5 + jit(0.1), -0.2 + jit(0.1)];

    let amp = config.detail_texture_amp;
    let stripe_theta = rng.random_range(0.0..std::f64::consts::PI);
    let stripe_freq = rng.random_range(0.3..0.45);
    let stripe_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let s = config.size;
    let n_moles = rng.random_range(2..6);
    let moles: Vec<(usize, usize)> = (0..n_moles)
        .map(|_| (rng.random_range(s / 4..3 * s / 4), rng.random_range(s / 4..3 * s / 4)))
        .collect();
    let speckle: Vec<f64> = (0..s * s).map(|_| rng.random_range(-1.0..1.0)).collect();

    let sf = s as f64;
    let mut base = vec![0.0f64; 3 * s * s];
    let mut texture = vec![0.0f64; s * s];
    for i in 0..s {
        for j in 0..s {
            let (u, v) = ((j as f64 + 0.5) / sf, (i as f64 + 0.5) / sf);
            let mut px = [0.0; 3];
            for c in 0..3 {
                px[c] = bg_top[c] * (1.0 - v) + bg_bottom[c] * v;
            }

            // Head: hair cap behind a face ellipse.
            let head_r = ((u - cx) / (rx + 0.05)).hypot((v - cy + 0.03) / (ry + 0.06));
            let head_cov = coverage((head_r - 1.0) * (rx + 0.05) * sf);
            let face_r = ((u - cx) / rx).hypot((v - cy) / ry);
            let face_cov = coverage((face_r - 1.0) * rx * sf);
            let hair = if attr(2, labels) { dark_hair } else { light_hair };
            blend(&mut px, hair, head_cov * coverage((v - cy) * sf));
            let below_hairline = coverage((hair_line - v) * sf);
            blend(&mut px, skin, face_cov * below_hairline);

            if amp > 0.0 {
                let mut d = 0.5 * speckle[i * s + j];
                let phase = std::f64::consts::TAU * stripe_freq * (j as f64 * stripe_theta.cos() + i as f64 * stripe_theta.sin());
                d += 0.5 * (phase + stripe_phase).sin();
                if moles.contains(&(i, j)) {
                    d -= 2.0;
                }
                texture[i * s + j] = amp * d;
            }

            // Eyes.
            for side in [-1.0, 1.0] {
                let ex = cx + side * eye_dx;
                let er = ((u - ex) / 0.04).hypot((v - eye_y) / 0.03);
                blend(&mut px, [-0.9, -0.9, -0.7], coverage((er - 1.0) * 0.03 * sf));
            }

            // Eyeglasses: dark lenses and a bridge.
            if attr(0, labels) {
                let mut cov: f64 = 0.0;
                for side in [-1.0, 1.0] {
                    let ex = cx + side * eye_dx;
                    let dx = (u - ex).abs() - 0.085;
                    let dy = (v - eye_y).abs() - 0.06;
                    cov = cov.max(coverage(dx.max(dy) * sf));
                }
                let bridge = ((u - cx).abs() - (eye_dx - 0.085)).max((v - eye_y + 0.02).abs() - 0.015);
                cov = cov.max(coverage(bridge * sf));
                blend(&mut px, [-0.85, -0.85, -0.8], 0.9 * cov);
            }

            // Mouth: an arc whose curvature sign encodes the smile.
            let hw = 0.13;
            let tx = (u - cx) / hw;
            if tx.abs() <= 1.1 {
                let bend = if attr(1, labels) { 1.0 } else { -1.0 };
                let curve = mouth_y + bend * 0.16 * (0.5 - tx * tx);
                let d = ((v - curve).abs() - 0.028).max((tx.abs() - 1.0) * hw);
                blend(&mut px, [0.5, -0.65, -0.55], coverage(d * sf));
            }

            for c in 0..3 {
                base[(c * s + i) * s + j] = px[c];
            }
        }
    }
    // The smooth layer is low-passed so that fine detail comes only from
    // the texture.
    for plane in base.chunks_mut(s * s) {
        for _ in 0..3 {
            binomial_blur(plane, s);
        }
    }
    let img = base
        .iter()
        .enumerate()
        .map(|(idx, &b)| (b + texture[idx % (s * s)]).clamp(-1.0, 1.0) as f32)
        .collect();
    SynthSample {
        image: Tensor::new(&[1, 3, s, s], img).expect("image shape"),
        labels: labels.to_vec(),
        provenance: Provenance::GroundTruth,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::haar_pool;

    fn cfg() -> SynthConfig {
        SynthConfig::default()
    }

    #[test]
    fn empty_and_deterministic() {
        assert!(generate_dataset(&cfg(), 0, 1).unwrap().is_empty());
        let a = generate_dataset_with_threads(&cfg(), 6, 9, 1).unwrap();
        let b = generate_dataset_with_threads(&cfg(), 6, 9, 3).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&cfg(), 6, 10).unwrap();
        assert_ne!(a[0].image, c[0].image);
    }

    #[test]
    fn values_in_range() {
        for s in generate_dataset(&cfg(), 8, 3).unwrap() {
            assert!(s.image.data().iter().all(|v| (-1.0..=1.0).contains(v)));
            assert_eq!(s.labels.len(), 3);
        }
    }

    #[test]
    fn texture_amplitude_controls_high_frequency_energy() {
        let plain = SynthConfig {
            detail_texture_amp: 0.0,
            ..cfg()
        };
        let mut with = 0.0;
        let mut without = 0.0;
        for seed in 0..8 {
            let a = render_sample(&cfg(), seed);
            let b = render_sample(&plain, seed);
            with += haar_pool(&a.image).unwrap().high_energy();
            without += haar_pool(&b.image).unwrap().high_energy();
        }
        assert!(without < 0.1 * with, "{without} vs {with}");
    }

    #[test]
    fn attributes_are_localized() {
        let c = cfg();
        let s = c.size;
        let changed_rows = |k: usize| {
            let mut a = vec![false; 3];
            let base = render_with_labels(&c, 5, &a);
            a[k] = true;
            let flipped = render_with_labels(&c, 5, &a);
            let mut rows = Vec::new();
            for (idx, (x, y)) in base.image.data().iter().zip(flipped.image.data()).enumerate() {
                if (x - y).abs() > 0.05 {
                    rows.push((idx / s) % s);
                }
            }
            assert!(!rows.is_empty());
            (*rows.iter().min().unwrap(), *rows.iter().max().unwrap())
        };
        let (lo, hi) = changed_rows(0);
        assert!(lo >= s / 4 && hi <= 5 * s / 8, "eyeglasses rows {lo}..{hi}");
        let (lo, _) = changed_rows(1);
        assert!(lo >= s / 2, "smile rows from {lo}");
        let (_, hi) = changed_rows(2);
        assert!(hi < 2 * s / 3, "hair rows up to {hi}");
    }

    #[test]
    fn invalid_config() {
        let bad = SynthConfig { size: 30, ..cfg() };
        assert!(generate_dataset(&bad, 1, 0).is_err());
        let bad = SynthConfig { num_attrs: 4, ..cfg() };
        assert!(generate_dataset(&bad, 1, 0).is_err());
    }
}
