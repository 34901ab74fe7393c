//! Steganography probe, self-reconstruction error, edit accuracy and
//! wavelet band energies.
//!
//! SRE values are reported in `[0, 1]` pixel units: a mean absolute
//! difference of `d` between images in `[-1, 1]` is reported as `d / 2`.

use crate::data::{stack_images, SynthSample};
use crate::error::{Error, Result};
use crate::loss::AttributeDelta;
use crate::nn::{Classifier, Generator};
use crate::tensor::Tensor;
use crate::wavelet::multi_level_pool;

/// Anything that maps a batch of images and per-sample deltas to edited
/// images.
pub trait ImageEditor {
    fn num_attrs(&self) -> usize;
    fn edit_batch(&self, x: &Tensor<f32>, deltas: &[AttributeDelta]) -> Result<Tensor<f32>>;

    /// `G(x, 0)`.
    fn reconstruct(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let n = x.shape().first().copied().unwrap_or(0);
        let zero = vec![AttributeDelta::zero(self.num_attrs()); n];
        self.edit_batch(x, &zero)
    }
}

impl ImageEditor for Generator<f32> {
    fn num_attrs(&self) -> usize {
        self.config.num_attrs
    }

    fn edit_batch(&self, x: &Tensor<f32>, deltas: &[AttributeDelta]) -> Result<Tensor<f32>> {
        self.edit(x, deltas)
    }
}

const EVAL_BATCH: usize = 32;

/// Per-band energies `[LL, LH, HL, HH]` for each pooling level. Level `l`
/// decomposes the LL band of level `l - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct BandEnergyReport {
    pub levels: Vec<[f64; 4]>,
}

impl BandEnergyReport {
    /// Sum of the high bands of every level plus the deepest LL band.
    pub fn total(&self) -> f64 {
        let high: f64 = self.levels.iter().map(|e| e[1] + e[2] + e[3]).sum();
        high + self.levels.last().map_or(0.0, |e| e[0])
    }

    pub fn high(&self) -> f64 {
        self.levels.iter().map(|e| e[1] + e[2] + e[3]).sum()
    }

    /// Fraction of energy in the high bands (0 for an all-zero image).
    pub fn high_ratio(&self) -> f64 {
        let t = self.total();
        if t > 0.0 {
            self.high() / t
        } else {
            0.0
        }
    }
}

pub fn band_energy_report(x: &Tensor<f32>, levels: usize) -> Result<BandEnergyReport> {
    if levels == 0 {
        return Err(Error::geometry("band_energy_report", "levels must be positive"));
    }
    let bands = multi_level_pool(x, levels)?;
    Ok(BandEnergyReport {
        levels: bands.iter().map(|b| b.energies()).collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StegBandEnergy {
    pub x: BandEnergyReport,
    pub y_bar: BandEnergyReport,
    pub h: BandEnergyReport,
}

/// Result of feeding an image and a zero delta through the generator twice.
#[derive(Clone, Debug, PartialEq)]
pub struct StegReport {
    /// `G(x, 0)`.
    pub y_bar: Tensor<f32>,
    /// `G(ȳ, 0)`.
    pub x_bar: Tensor<f32>,
    /// `ȳ − x̄`.
    pub h: Tensor<f32>,
    /// Mean SRE over the batch.
    pub sre: f64,
    pub per_sample_sre: Vec<f64>,
    pub band_energy: StegBandEnergy,
}

fn per_sample_mean_abs(h: &Tensor<f32>) -> Vec<f64> {
    let n = h.shape()[0];
    let per = h.len() / n.max(1);
    h.data()
        .chunks(per.max(1))
        .map(|c| c.iter().map(|&v| f64::from(v).abs()).sum::<f64>() / per as f64)
        .collect()
}

pub fn steg_probe(editor: &dyn ImageEditor, x: &Tensor<f32>) -> Result<StegReport> {
    let shape = x.shape();
    if shape.len() != 4 || shape[0] == 0 {
        return Err(Error::geometry("steg_probe", format!("expected a non-empty NCHW batch, got {shape:?}")));
    }
    let y_bar = editor.reconstruct(x)?;
    let x_bar = editor.reconstruct(&y_bar)?;
    let h = Tensor::new(
        y_bar.shape(),
        y_bar.data().iter().zip(x_bar.data()).map(|(a, b)| a - b).collect(),
    )?;
    let per_sample_sre: Vec<f64> = per_sample_mean_abs(&h).into_iter().map(|v| 0.5 * v).collect();
    let sre = per_sample_sre.iter().sum::<f64>() / per_sample_sre.len() as f64;
    let levels = if shape[2].is_multiple_of(4) && shape[3].is_multiple_of(4) { 2 } else { 1 };
    let band_energy = StegBandEnergy {
        x: band_energy_report(x, levels)?,
        y_bar: band_energy_report(&y_bar, levels)?,
        h: band_energy_report(&h, levels)?,
    };
    Ok(StegReport {
        y_bar,
        x_bar,
        h,
        sre,
        per_sample_sre,
        band_energy,
    })
}

/// Mean per-sample SRE over a dataset.
pub fn sre(editor: &dyn ImageEditor, data: &[SynthSample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty { op: "sre" });
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(EVAL_BATCH) {
        let r = steg_probe(editor, &stack_images(data, chunk)?)?;
        total += r.per_sample_sre.iter().sum::<f64>();
    }
    Ok(total / data.len() as f64)
}

/// A classifier whose held-out accuracy has cleared a gate.
#[derive(Clone, Debug)]
pub struct GatedClassifier<'a> {
    pub classifier: &'a Classifier<f32>,
    pub accuracy: f64,
}

impl<'a> GatedClassifier<'a> {
    pub fn new(classifier: &'a Classifier<f32>, accuracy: f64, gate: f64) -> Result<Self> {
        if accuracy < gate {
            return Err(Error::AccuracyGate { accuracy, gate });
        }
        Ok(Self { classifier, accuracy })
    }
}

fn flip_delta(labels: &[bool], k: usize, alpha: f64) -> Result<AttributeDelta> {
    let mut target = labels.to_vec();
    target[k] = !target[k];
    AttributeDelta::between(labels, &target).with_alpha(alpha)
}

/// Fraction of samples whose edited image (attribute `k` flipped) is
/// classified as the target value.
pub fn attribute_edit_accuracy(
    editor: &dyn ImageEditor,
    classifier: &GatedClassifier,
    data: &[SynthSample],
    k: usize,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty { op: "attribute_edit_accuracy" });
    }
    let ka = editor.num_attrs();
    if k >= ka || classifier.classifier.config.num_attrs != ka {
        return Err(Error::Config(format!("attribute index {k} out of range for {ka} attributes")));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut hits = 0usize;
    for chunk in idx.chunks(EVAL_BATCH) {
        let x = stack_images(data, chunk)?;
        let deltas = chunk
            .iter()
            .map(|&i| flip_delta(&data[i].labels, k, 1.0))
            .collect::<Result<Vec<_>>>()?;
        let y = editor.edit_batch(&x, &deltas)?;
        let p = classifier.classifier.probabilities(&y)?;
        for (row, &i) in p.data().chunks(ka).zip(chunk) {
            if (row[k] > 0.5) == !data[i].labels[k] {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Edit accuracy for every attribute.
pub fn edit_accuracy_all(editor: &dyn ImageEditor, classifier: &GatedClassifier, data: &[SynthSample]) -> Result<Vec<f64>> {
    (0..editor.num_attrs())
        .map(|k| attribute_edit_accuracy(editor, classifier, data, k))
        .collect()
}

/// `start, start + step, …` up to and including `end` (within half a step).
pub fn alpha_range(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !start.is_finite() || !end.is_finite() || end < start {
        return Err(Error::Config(format!("invalid alpha range {start}:{end}:{step}")));
    }
    let n = ((end - start) / step + 0.5).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

/// Classifier probability of the flipped attribute `k`'s target value for
/// each `α` in `alphas`; one row per sample.
pub fn alpha_sweep(
    editor: &dyn ImageEditor,
    classifier: &Classifier<f32>,
    data: &[SynthSample],
    k: usize,
    alphas: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let ka = editor.num_attrs();
    if k >= ka {
        return Err(Error::Config(format!("attribute index {k} out of range for {ka} attributes")));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut rows = vec![Vec::with_capacity(alphas.len()); data.len()];
    for chunk in idx.chunks(EVAL_BATCH) {
        let x = stack_images(data, chunk)?;
        for &a in alphas {
            let deltas = chunk
                .iter()
                .map(|&i| flip_delta(&data[i].labels, k, a))
                .collect::<Result<Vec<_>>>()?;
            let p = classifier.probabilities(&editor.edit_batch(&x, &deltas)?)?;
            for (row, &i) in p.data().chunks(ka).zip(chunk) {
                let pk = f64::from(row[k]);
                rows[i].push(if data[i].labels[k] { 1.0 - pk } else { pk });
            }
        }
    }
    Ok(rows)
}

/// Fraction of rows that never decrease by more than `tol`.
pub fn monotone_fraction(rows: &[Vec<f64>], tol: f64) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let ok = rows.iter().filter(|r| r.windows(2).all(|w| w[1] >= w[0] - tol)).count();
    ok as f64 / rows.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, SynthConfig};
    use crate::nn::{ClassifierConfig, GeneratorConfig, SkipMode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Shift(f32);

    impl ImageEditor for Shift {
        fn num_attrs(&self) -> usize {
            3
        }
        fn edit_batch(&self, x: &Tensor<f32>, _: &[AttributeDelta]) -> Result<Tensor<f32>> {
            Ok(x.map(|v| v + self.0))
        }
    }

    struct Flip;

    impl ImageEditor for Flip {
        fn num_attrs(&self) -> usize {
            3
        }
        fn edit_batch(&self, x: &Tensor<f32>, _: &[AttributeDelta]) -> Result<Tensor<f32>> {
            Ok(x.map(|v| -v))
        }
    }

    fn batch() -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = (0..2 * 3 * 8 * 8).map(|_| rand::Rng::random_range(&mut rng, -0.5..0.5)).collect();
        Tensor::new(&[2, 3, 8, 8], data).unwrap()
    }

    #[test]
    fn identity_generator_has_zero_sre() {
        let cfg = GeneratorConfig {
            width: 6,
            num_attrs: 3,
            skip: SkipMode::HighFreq,
            output_tanh: false,
        };
        let g = Generator::<f32>::identity(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let r = steg_probe(&g, &batch()).unwrap();
        assert!(r.sre < 1e-5, "{}", r.sre);
    }

    #[test]
    fn constant_shift_sre() {
        let r = steg_probe(&Shift(0.1), &batch()).unwrap();
        assert!((r.sre - 0.05).abs() < 1e-6);
        assert!(r.h.data().iter().all(|&v| (v + 0.1).abs() < 1e-6));
    }

    #[test]
    fn sre_matches_scalar_loop_and_recombines() {
        let x = batch();
        let r = steg_probe(&Flip, &x).unwrap();
        let mut acc = 0.0;
        for (a, b) in r.y_bar.data().iter().zip(r.x_bar.data()) {
            acc += f64::from(a - b).abs();
        }
        assert!((r.sre - 0.5 * acc / x.len() as f64).abs() < 1e-12);
        for ((y, xb), h) in r.y_bar.data().iter().zip(r.x_bar.data()).zip(r.h.data()) {
            assert_eq!(*y, xb + h);
        }
    }

    #[test]
    fn dataset_sre_averages_probe() {
        let data = generate_dataset(&SynthConfig { size: 8, ..Default::default() }, 5, 2).unwrap();
        let s = sre(&Shift(0.2), &data).unwrap();
        let r = steg_probe(&Shift(0.2), &stack_images(&data, &[0, 1, 2, 3, 4]).unwrap()).unwrap();
        assert!((s - r.sre).abs() < 1e-12);
        assert!(matches!(sre(&Shift(0.0), &[]), Err(Error::Empty { .. })));
    }

    #[test]
    fn checkerboard_energy_is_all_hh() {
        let data: Vec<f64> = (0..16).map(|i| if (i / 4 + i % 4) % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let x = Tensor::<f32>::from_f64(&[1, 1, 4, 4], &data).unwrap();
        let r = band_energy_report(&x, 1).unwrap();
        assert_eq!(r.levels[0][3], 16.0);
        assert_eq!(r.levels[0][0] + r.levels[0][1] + r.levels[0][2], 0.0);
        let c = band_energy_report(&Tensor::full(&[1, 3, 8, 8], 0.4), 2).unwrap();
        assert_eq!(c.high(), 0.0);
    }

    #[test]
    fn energy_is_parseval_and_ratio_scale_invariant() {
        let x = batch();
        let r = band_energy_report(&x, 3).unwrap();
        assert!((r.total() - x.sum_sq()).abs() < 1e-4 * x.sum_sq());
        let r2 = band_energy_report(&x.map(|v| 3.0 * v), 3).unwrap();
        assert!((r.high_ratio() - r2.high_ratio()).abs() < 1e-6);
        assert!(band_energy_report(&Tensor::<f32>::zeros(&[1, 1, 6, 6]), 2).is_err());
    }

    #[test]
    fn alpha_range_counts() {
        assert_eq!(alpha_range(0.4, 2.0, 0.2).unwrap().len(), 9);
        assert_eq!(alpha_range(0.0, 0.0, 0.5).unwrap(), vec![0.0]);
        assert!(alpha_range(1.0, 0.0, 0.2).is_err());
    }

    #[test]
    fn monotone_fraction_counts_rows() {
        let rows = vec![vec![0.1, 0.2, 0.3], vec![0.3, 0.2, 0.4]];
        assert_eq!(monotone_fraction(&rows, 0.0), 0.5);
        assert_eq!(monotone_fraction(&rows, 0.2), 1.0);
    }

    #[test]
    fn gate_and_identity_accuracy() {
        let data = generate_dataset(&SynthConfig::default(), 12, 4).unwrap();
        let mut c = Classifier::<f32>::new(ClassifierConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(matches!(GatedClassifier::new(&c, 0.5, 0.95), Err(Error::AccuracyGate { .. })));
        c.zero_heads();
        let gc = GatedClassifier::new(&c, 1.0, 0.95).unwrap();
        let acc = attribute_edit_accuracy(&Shift(0.0), &gc, &data, 1).unwrap();
        // p = 0.5 exactly predicts false, so hits are the samples whose label is true.
        let expect = data.iter().filter(|s| s.labels[1]).count() as f64 / data.len() as f64;
        assert_eq!(acc, expect);
    }
}
