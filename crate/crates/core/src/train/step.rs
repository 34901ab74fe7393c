use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::classifier::label_tensor;
use super::config::{ModelConfig, RealSource, TrainConfig};
use super::optim::{ema_update, Adam, AdamConfig, LrSet};
use crate::data::{stack_images, SynthSample};
use crate::error::{Error, Result};
use crate::loss::{self, AttributeDelta, LossValues, Side};
use crate::nn::{
    Classifier, ClassifierConfig, DiscInputs, DiscKind, DiscriminatorSet, Generator, GeneratorConfig, ParamSet,
};
use crate::tensor::{Graph, Tensor, Var};

/// Every network of one experiment plus the EMA shadow of the generator.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSet {
    pub config: ModelConfig,
    pub generator: Generator<f32>,
    pub ema: ParamSet<f32>,
    pub discriminators: DiscriminatorSet<f32>,
    pub classifier: Classifier<f32>,
}

impl ModelSet {
    /// Networks initialised from independent streams of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        let generator = Generator::new(
            GeneratorConfig {
                width: config.g_width,
                num_attrs: config.num_attrs,
                skip: config.skip,
                output_tanh: true,
            },
            &mut stream(1),
        )?;
        let discriminators =
            DiscriminatorSet::new(config.d_width, config.image_size, config.highfreq_disc, &mut stream(2))?;
        let classifier = Classifier::new(
            ClassifierConfig {
                width: config.c_width,
                num_attrs: config.num_attrs,
                hidden: config.c_hidden,
            },
            &mut stream(3),
        )?;
        Ok(Self {
            config,
            ema: generator.params.clone(),
            generator,
            discriminators,
            classifier,
        })
    }

    /// The generator with EMA weights, used for evaluation.
    pub fn ema_generator(&self) -> Result<Generator<f32>> {
        self.generator.with_params(self.ema.clone())
    }
}

/// Values logged after one step. Loss components are the generator-side
/// values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub epoch: usize,
    pub values: LossValues,
    pub total: f64,
    pub d_loss: f64,
    pub lr: LrSet,
    pub grad_norm_g: f64,
    pub grad_norm_d: f64,
}

impl StepMetrics {
    pub const TSV_HEADER: &'static str = "step\tL_GAN_I\tL_GAN_H\tL_cyc\tL_ac\tL_ar\ttotal\tlr_G\tlr_D";

    pub fn to_tsv(&self) -> String {
        let v = &self.values;
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.step, v.gan_i, v.gan_h, v.cyc, v.ac, v.ar, self.total, self.lr.g, self.lr.d_i
        )
    }
}

/// Optimiser and RNG state around a [`ModelSet`].
#[derive(Clone, Debug)]
pub struct Trainer {
    pub models: ModelSet,
    pub config: TrainConfig,
    pub opt_g: Adam<f32>,
    pub opt_d: Vec<Adam<f32>>,
    pub step: usize,
    pub epoch: usize,
    pub rng: ChaCha8Rng,
}

/// Random target labels differing from `source` in at least one bit: each
/// bit flips with probability 1/2, redrawn while nothing flips.
pub fn sample_target(source: &[bool], rng: &mut impl Rng) -> Vec<bool> {
    if source.is_empty() {
        return Vec::new();
    }
    loop {
        let t: Vec<bool> = source.iter().map(|&s| s ^ rng.random_bool(0.5)).collect();
        if t != source {
            return t;
        }
    }
}

fn grad_norm(grads: &[Tensor<f32>]) -> f64 {
    grads.iter().map(Tensor::sum_sq).sum::<f64>().sqrt()
}

impl Trainer {
    pub fn new(models: ModelSet, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = |lr| AdamConfig {
            lr,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: 1e-8,
        };
        let opt_g = Adam::new(adam(config.lr.g), &models.generator.params);
        let opt_d = models
            .discriminators
            .nets
            .iter()
            .map(|d| {
                let lr = match d.kind {
                    DiscKind::I0 | DiscKind::I1 => config.lr.d_i,
                    DiscKind::H0 | DiscKind::H1 => config.lr.d_h,
                };
                Adam::new(adam(lr), &d.params)
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(7);
        Ok(Self {
            models,
            config,
            opt_g,
            opt_d,
            step: 0,
            epoch: 0,
            rng,
        })
    }

    /// One discriminator update followed by one generator update.
    pub fn train_step(&mut self, x: &Tensor<f32>, labels: &[Vec<bool>], real: &Tensor<f32>, lr: LrSet) -> Result<StepMetrics> {
        let step = self.step;
        self.train_step_inner(x, labels, real, lr).map_err(|e| match e {
            Error::NonFinite { op } => Error::Numerical {
                step,
                detail: format!("non-finite value in {op}"),
            },
            other => other,
        })
    }

    fn train_step_inner(&mut self, x: &Tensor<f32>, labels: &[Vec<bool>], real: &Tensor<f32>, lr: LrSet) -> Result<StepMetrics> {
        let n = x.shape()[0];
        let k = self.models.config.num_attrs;
        if labels.len() != n || labels.iter().any(|l| l.len() != k) {
            return Err(Error::geometry("train_step", "labels do not match the batch"));
        }
        let cfg = self.config;
        let w = cfg.weights;
        let highfreq = self.models.discriminators.has_highfreq();
        let use_ar = !cfg.disable_ar_loss && w.ar > 0.0;

        let targets: Vec<Vec<bool>> = labels.iter().map(|l| sample_target(l, &mut self.rng)).collect();
        let alpha = self.rng.random_range(0.0..=2.0);
        let deltas: Vec<AttributeDelta> = labels
            .iter()
            .zip(&targets)
            .map(|(s, t)| AttributeDelta::between(s, t))
            .collect();
        let augment = match cfg.cycle_augment {
            Some(kind) => Some(kind.draw(&mut self.rng, x.dims4())?),
            None => None,
        };

        let gen = &self.models.generator;
        let mut g = Graph::<f32>::new();
        let gb = gen.params.bind(&mut g, true);
        let xv = g.constant(x.clone());
        let with_alpha: Vec<AttributeDelta> = deltas.iter().map(|d| d.with_alpha(alpha)).collect::<Result<_>>()?;
        let ca = g.constant(AttributeDelta::condition_tensor(&with_alpha)?);
        // `G(x, α·Δ)`, shared by the adversarial, cycle and regression terms.
        let ya = gen.forward(&mut g, &gb, xv, ca)?;

        // Discriminator update against the current generator output.
        self.models.discriminators.update_spectral(cfg.sn_iters)?;
        let (d_loss, grad_norm_d) = {
            let ds = &self.models.discriminators;
            let mut gd = Graph::<f32>::new();
            let db = ds.bind(&mut gd, true);
            let fake = gd.constant(g.value(ya).clone());
            let realv = gd.constant(real.clone());
            let ri = DiscInputs::prepare(&mut gd, realv, highfreq)?;
            let fi = DiscInputs::prepare(&mut gd, fake, highfreq)?;
            let lr_ = ds.image_logits(&mut gd, &db, &ri)?;
            let lf = ds.image_logits(&mut gd, &db, &fi)?;
            let li = loss::adv_loss_image(&mut gd, Some(lr_), lf, Side::Discriminator)?;
            let mut terms = vec![(li, w.gan_i)];
            if highfreq {
                let hr = ds.highfreq_logits(&mut gd, &db, &ri)?.expect("high-frequency discriminators");
                let hf = ds.highfreq_logits(&mut gd, &db, &fi)?.expect("high-frequency discriminators");
                terms.push((loss::adv_loss_highfreq(&mut gd, Some(hr), hf, Side::Discriminator)?, w.gan_h));
            }
            let total = loss::weighted_total(&mut gd, &terms)?;
            let value = f64::from(gd.value(total).item());
            let mut norm = 0.0;
            if gd.requires_grad(total) {
                let mut grads = gd.backward(total)?;
                let ds = &mut self.models.discriminators;
                for ((net, bound), opt) in ds.nets.iter_mut().zip(&db.0).zip(&mut self.opt_d) {
                    let gr = net.params.collect_grads(bound, &mut grads);
                    norm += grad_norm(&gr).powi(2);
                    opt.config.lr = match net.kind {
                        DiscKind::I0 | DiscKind::I1 => lr.d_i,
                        DiscKind::H0 | DiscKind::H1 => lr.d_h,
                    };
                    opt.update(&mut net.params, &gr)?;
                }
            }
            (value, norm.sqrt())
        };

        // Generator objective.
        let ds = &self.models.discriminators;
        let db = ds.bind(&mut g, false);
        let cb = self.models.classifier.params.bind(&mut g, false);
        let classifier = &self.models.classifier;
        let mut values = LossValues::default();
        let mut terms: Vec<(Var, f64)> = Vec::new();
        let val = |g: &Graph<f32>, v: Var| f64::from(g.value(v).item());

        let fi = DiscInputs::prepare(&mut g, ya, highfreq)?;
        let li = ds.image_logits(&mut g, &db, &fi)?;
        let l_gan_i = loss::adv_loss_image(&mut g, None, li, Side::Generator)?;
        values.gan_i = val(&g, l_gan_i);
        terms.push((l_gan_i, w.gan_i));
        if let Some(lh) = ds.highfreq_logits(&mut g, &db, &fi)? {
            let l = loss::adv_loss_highfreq(&mut g, None, lh, Side::Generator)?;
            values.gan_h = val(&g, l);
            terms.push((l, w.gan_h));
        }

        if w.cyc > 0.0 {
            let neg: Vec<AttributeDelta> = with_alpha.iter().map(AttributeDelta::negated).collect();
            let cn = g.constant(AttributeDelta::condition_tensor(&neg)?);
            let (src, target) = match &augment {
                Some(a) => (a.apply_var(&mut g, ya)?, a.apply_var(&mut g, xv)?),
                None => (ya, xv),
            };
            let x_cyc = gen.forward(&mut g, &gb, src, cn)?;
            let l = loss::cycle_loss(&mut g, target, x_cyc)?;
            values.cyc = val(&g, l);
            terms.push((l, w.cyc));
        }

        let c1 = g.constant(AttributeDelta::condition_tensor(&deltas)?);
        let y1 = gen.forward(&mut g, &gb, xv, c1)?;
        let out1 = classifier.forward(&mut g, &cb, y1)?;
        if w.ac > 0.0 {
            let trefs: Vec<&[bool]> = targets.iter().map(Vec::as_slice).collect();
            let tv = g.constant(label_tensor(&trefs, k)?);
            let mask: Vec<f64> = if cfg.ac_all_attrs {
                vec![1.0; n * k]
            } else {
                deltas.iter().flat_map(AttributeDelta::change_mask).collect()
            };
            let mv = g.constant(Tensor::from_f64(&[n, k], &mask)?);
            let l = loss::attr_classification_loss(&mut g, out1.logits, tv, mv)?;
            values.ac = val(&g, l);
            terms.push((l, w.ac));
        }

        if use_ar {
            let c0 = g.constant(Tensor::zeros(&[n, k, 1, 1]));
            let y0 = gen.forward(&mut g, &gb, xv, c0)?;
            let f0 = classifier.forward(&mut g, &cb, y0)?.feature;
            let fa = classifier.forward(&mut g, &cb, ya)?.feature;
            let l = loss::attr_regression_loss(&mut g, f0, out1.feature, fa, alpha)?;
            values.ar = val(&g, l);
            terms.push((l, w.ar));
        }

        let total = loss::weighted_total(&mut g, &terms)?;
        let total_value = val(&g, total);
        if !total_value.is_finite() {
            return Err(Error::Numerical {
                step: self.step,
                detail: "non-finite generator loss".into(),
            });
        }
        let mut grad_norm_g = 0.0;
        if g.requires_grad(total) {
            let mut grads = g.backward(total)?;
            let gr = self.models.generator.params.collect_grads(&gb, &mut grads);
            grad_norm_g = grad_norm(&gr);
            self.opt_g.config.lr = lr.g;
            self.opt_g.update(&mut self.models.generator.params, &gr)?;
            ema_update(&mut self.models.ema, &self.models.generator.params, cfg.ema_decay)?;
        }

        self.step += 1;
        Ok(StepMetrics {
            step: self.step,
            epoch: self.epoch,
            values,
            total: total_value,
            d_loss,
            lr,
            grad_norm_g,
            grad_norm_d,
        })
    }

    /// One epoch over `pool` in a freshly shuffled order; `on_step` sees
    /// every step's metrics.
    pub fn run_epoch(&mut self, pool: &[SynthSample], mut on_step: impl FnMut(&StepMetrics) -> Result<()>) -> Result<()> {
        let bs = self.config.batch_size;
        if pool.len() < bs {
            return Err(Error::Config(format!(
                "training pool of {} is smaller than batch size {bs}",
                pool.len()
            )));
        }
        let lr = self.config.schedule().at(self.epoch);
        let mut order: Vec<usize> = (0..pool.len()).collect();
        let mut real_order = order.clone();
        order.shuffle(&mut self.rng);
        real_order.shuffle(&mut self.rng);
        let mut steps = pool.len() / bs;
        if self.config.max_steps_per_epoch > 0 {
            steps = steps.min(self.config.max_steps_per_epoch);
        }
        for s in 0..steps {
            let idx = &order[s * bs..(s + 1) * bs];
            let x = stack_images(pool, idx)?;
            let labels: Vec<Vec<bool>> = idx.iter().map(|&i| pool[i].labels.clone()).collect();
            let real = match self.config.real_source {
                RealSource::Sampled => stack_images(pool, &real_order[s * bs..(s + 1) * bs])?,
                RealSource::Input => x.clone(),
            };
            let m = self.train_step(&x, &labels, &real, lr)?;
            on_step(&m)?;
        }
        self.epoch += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_targets_always_differ() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let src = [true, false, true];
        for _ in 0..200 {
            let t = sample_target(&src, &mut rng);
            assert_ne!(t.as_slice(), &src);
        }
    }

    #[test]
    fn metrics_line_has_nine_columns() {
        let m = StepMetrics {
            step: 3,
            epoch: 0,
            values: LossValues::default(),
            total: 0.0,
            d_loss: 0.0,
            lr: LrSet {
                g: 5e-4,
                d_i: 2e-3,
                d_h: 2e-3,
            },
            grad_norm_g: 0.0,
            grad_norm_d: 0.0,
        };
        assert_eq!(m.to_tsv().split('\t').count(), 9);
        assert_eq!(StepMetrics::TSV_HEADER.split('\t').count(), 9);
    }
}
