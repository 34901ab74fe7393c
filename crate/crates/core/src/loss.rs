//! Training objectives.
//!
//! Everything is written against logits: `−log σ(z) = softplus(−z)` and
//! `−log(1 − σ(z)) = softplus(z)` keep the adversarial and classification
//! terms finite for any logit.

use crate::error::{Error, Result};
use crate::tensor::{Float, Graph, ReduceKind, Tensor, Var};

/// Weights of the five generator objectives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub gan_i: f64,
    pub gan_h: f64,
    pub cyc: f64,
    pub ac: f64,
    pub ar: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gan_i: 1.0,
            gan_h: 1.0,
            cyc: 10.0,
            ac: 1.0,
            ar: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.gan_i, self.gan_h, self.cyc, self.ac, self.ar];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }

    pub fn total(&self, v: &LossValues) -> f64 {
        self.gan_i * v.gan_i + self.gan_h * v.gan_h + self.cyc * v.cyc + self.ac * v.ac + self.ar * v.ar
    }
}

/// Unweighted values of each objective for one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub gan_i: f64,
    pub gan_h: f64,
    pub cyc: f64,
    pub ac: f64,
    pub ar: f64,
}

/// Target-minus-source attribute difference `Δ ∈ {−1, 0, 1}^K` with edit
/// strength `α ∈ [0, 2]`; the generator sees `α·Δ`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeDelta {
    delta: Vec<i8>,
    alpha: f64,
}

impl AttributeDelta {
    pub fn new(delta: Vec<i8>, alpha: f64) -> Result<Self> {
        if delta.iter().any(|d| d.abs() > 1) {
            return Err(Error::Config(format!("delta entries must be in {{-1,0,1}}: {delta:?}")));
        }
        if !(0.0..=2.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha {alpha} outside [0, 2]")));
        }
        Ok(Self { delta, alpha })
    }

    pub fn zero(num_attrs: usize) -> Self {
        Self {
            delta: vec![0; num_attrs],
            alpha: 1.0,
        }
    }

    /// Delta taking `source` labels to `target` labels.
    pub fn between(source: &[bool], target: &[bool]) -> Self {
        let delta = source
            .iter()
            .zip(target)
            .map(|(&s, &t)| t as i8 - s as i8)
            .collect();
        Self { delta, alpha: 1.0 }
    }

    pub fn delta(&self) -> &[i8] {
        &self.delta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.delta.iter().all(|&d| d == 0)
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.delta.clone(), alpha)
    }

    pub fn negated(&self) -> Self {
        Self {
            delta: self.delta.iter().map(|d| -d).collect(),
            alpha: self.alpha,
        }
    }

    /// `α·Δ`.
    pub fn effective(&self) -> Vec<f64> {
        self.delta.iter().map(|&d| self.alpha * d as f64).collect()
    }

    /// `1` where the attribute is being changed (`|Δ_k| = 1`).
    pub fn change_mask(&self) -> Vec<f64> {
        self.delta.iter().map(|&d| (d != 0) as u8 as f64).collect()
    }

    /// Stack a batch of conditions into an `N x K x 1 x 1` tensor.
    pub fn condition_tensor<T: Float>(batch: &[AttributeDelta]) -> Result<Tensor<T>> {
        let k = batch.first().ok_or(Error::Empty { op: "condition_tensor" })?.len();
        let mut data = Vec::with_capacity(batch.len() * k);
        for d in batch {
            if d.len() != k {
                return Err(Error::geometry("condition_tensor", "ragged attribute deltas"));
            }
            data.extend(d.effective().into_iter().map(T::from_f64));
        }
        Tensor::new(&[batch.len(), k, 1, 1], data)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Discriminator,
    Generator,
}

/// Adversarial objective on logits.
///
/// Discriminator side: `mean softplus(−real) + mean softplus(fake)`, i.e.
/// `−[log σ(real) + log(1 − σ(fake))]`. Generator side (non-saturating):
/// `mean softplus(−fake)`.
pub fn adversarial<T: Float>(g: &mut Graph<T>, real: Option<Var>, fake: Var, side: Side) -> Result<Var> {
    match side {
        Side::Discriminator => {
            let real = real.ok_or_else(|| Error::Config("discriminator loss needs real logits".into()))?;
            let neg_real = g.scale(real, -1.0)?;
            let a = g.softplus(neg_real)?;
            let a = g.mean(a)?;
            let b = g.softplus(fake)?;
            let b = g.mean(b)?;
            g.add(a, b)
        }
        Side::Generator => {
            let neg = g.scale(fake, -1.0)?;
            let a = g.softplus(neg)?;
            g.mean(a)
        }
    }
}

/// Image-level adversarial loss on (multi-scale averaged) `D_I` logits.
pub fn adv_loss_image<T: Float>(g: &mut Graph<T>, real: Option<Var>, fake: Var, side: Side) -> Result<Var> {
    adversarial(g, real, fake, side)
}

/// High-frequency adversarial loss on `D_H` logits of wavelet bands.
pub fn adv_loss_highfreq<T: Float>(g: &mut Graph<T>, real: Option<Var>, fake: Var, side: Side) -> Result<Var> {
    adversarial(g, real, fake, side)
}

/// Mean absolute error `mean |x − x_cyc|`.
pub fn cycle_loss<T: Float>(g: &mut Graph<T>, x: Var, x_cyc: Var) -> Result<Var> {
    if g.shape(x) != g.shape(x_cyc) {
        return Err(Error::shape("cycle_loss", g.shape(x), g.shape(x_cyc)));
    }
    let d = g.sub(x, x_cyc)?;
    let a = g.abs(d)?;
    g.mean(a)
}

/// Masked binary cross-entropy over the changed attributes, summed over
/// attributes and averaged over the batch.
///
/// `logits`, `targets` and `mask` are `N x K`; targets are 0/1 and the mask
/// is `|Δ_k|`.
pub fn attr_classification_loss<T: Float>(g: &mut Graph<T>, logits: Var, targets: Var, mask: Var) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    for other in [targets, mask] {
        if g.shape(other) != shape.as_slice() {
            return Err(Error::shape("attr_classification_loss", &shape, g.shape(other)));
        }
    }
    let n = shape.first().copied().unwrap_or(1).max(1);
    let neg = g.scale(logits, -1.0)?;
    let pos_term = g.softplus(neg)?; // −log p
    let neg_term = g.softplus(logits)?; // −log(1 − p)
    let a = g.mul(targets, pos_term)?;
    let one_minus = {
        let t = g.scale(targets, -1.0)?;
        g.offset(t, 1.0)?
    };
    let b = g.mul(one_minus, neg_term)?;
    let per = g.add(a, b)?;
    let masked = g.mul(per, mask)?;
    let total = g.sum(masked)?;
    g.scale(total, 1.0 / n as f64)
}

/// Row-wise ℓ2 normalisation of an `N x F` feature matrix.
pub fn l2_normalize_rows<T: Float>(g: &mut Graph<T>, f: Var) -> Result<Var> {
    let sq = g.reduce(f, ReduceKind::L2Sq, Some(&[1]))?;
    if g.value(sq).data().iter().any(|&v| v <= T::zero()) {
        return Err(Error::Domain {
            op: "attr_regression_loss",
            detail: "zero-norm feature vector".into(),
        });
    }
    let norm = g.sqrt(sq)?;
    g.div(f, norm)
}

/// Row-wise Euclidean distance, `N x 1`.
pub fn row_distance<T: Float>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let sq = g.reduce(d, ReduceKind::L2Sq, Some(&[1]))?;
    g.sqrt(sq)
}

/// Attribute regression: with `f̂ = f/‖f‖`,
/// `r = d(f̂0, f̂α) − d(f̂1, f̂0) − (α − 1)`, returned as `mean |r|`.
///
/// The absolute value gives the residual a well-posed minimum at zero.
pub fn attr_regression_loss<T: Float>(g: &mut Graph<T>, f0: Var, f1: Var, f_alpha: Var, alpha: f64) -> Result<Var> {
    let n0 = l2_normalize_rows(g, f0)?;
    let n1 = l2_normalize_rows(g, f1)?;
    let na = l2_normalize_rows(g, f_alpha)?;
    let d0a = row_distance(g, n0, na)?;
    let d10 = row_distance(g, n1, n0)?;
    let r = g.sub(d0a, d10)?;
    let r = g.offset(r, -(alpha - 1.0))?;
    let r = g.abs(r)?;
    g.mean(r)
}

/// `Σ λ_i L_i`, skipping terms whose weight is zero.
pub fn weighted_total<T: Float>(g: &mut Graph<T>, terms: &[(Var, f64)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(v, w) in terms {
        if w == 0.0 {
            continue;
        }
        let s = g.scale(v, w)?;
        acc = Some(match acc {
            Some(a) => g.add(a, s)?,
            None => s,
        });
    }
    match acc {
        Some(a) => Ok(a),
        None => Ok(g.constant(Tensor::scalar(T::zero()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(g: &mut Graph<f64>, shape: &[usize], v: &[f64]) -> Var {
        g.constant(Tensor::from_f64(shape, v).unwrap())
    }

    #[test]
    fn delta_validation() {
        assert!(AttributeDelta::new(vec![2, 0], 1.0).is_err());
        assert!(AttributeDelta::new(vec![1, 0], 2.5).is_err());
        let d = AttributeDelta::between(&[true, false, true], &[false, false, true]);
        assert_eq!(d.delta(), &[-1, 0, 0]);
        assert_eq!(d.negated().delta(), &[1, 0, 0]);
        assert_eq!(d.with_alpha(0.5).unwrap().effective(), vec![-0.5, 0.0, 0.0]);
    }

    #[test]
    fn condition_tensor_layout() {
        let b = [
            AttributeDelta::new(vec![1, 0], 0.5).unwrap(),
            AttributeDelta::new(vec![0, -1], 2.0).unwrap(),
        ];
        let t: Tensor<f32> = AttributeDelta::condition_tensor(&b).unwrap();
        assert_eq!(t.shape(), &[2, 2, 1, 1]);
        assert_eq!(t.data(), &[0.5, 0.0, 0.0, -2.0]);
    }

    #[test]
    fn perfect_discriminator_loss_vanishes() {
        let mut g = Graph::<f64>::new();
        let real = var(&mut g, &[1], &[60.0]);
        let fake = var(&mut g, &[1], &[-60.0]);
        let l = adversarial(&mut g, Some(real), fake, Side::Discriminator).unwrap();
        assert!(g.value(l).item() < 1e-20);
    }

    #[test]
    fn cycle_extremes() {
        let mut g = Graph::<f64>::new();
        let x = var(&mut g, &[1, 1, 2, 2], &[1.0; 4]);
        let y = var(&mut g, &[1, 1, 2, 2], &[-1.0; 4]);
        let l = cycle_loss(&mut g, x, y).unwrap();
        assert_eq!(g.value(l).item(), 2.0);
        let z = cycle_loss(&mut g, x, x).unwrap();
        assert_eq!(g.value(z).item(), 0.0);
        let bad = var(&mut g, &[1, 1, 1, 4], &[0.0; 4]);
        assert!(cycle_loss(&mut g, x, bad).is_err());
    }

    #[test]
    fn zero_norm_feature_rejected() {
        let mut g = Graph::<f64>::new();
        let z = var(&mut g, &[1, 2], &[0.0, 0.0]);
        let f = var(&mut g, &[1, 2], &[1.0, 0.0]);
        assert!(matches!(
            attr_regression_loss(&mut g, z, f, f, 1.0),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn weighted_total_skips_zero_weights() {
        let mut g = Graph::<f64>::new();
        let a = var(&mut g, &[], &[1.0]);
        let b = var(&mut g, &[], &[1.0]);
        let t = weighted_total(&mut g, &[(a, 10.0), (b, 0.0)]).unwrap();
        assert_eq!(g.value(t).item(), 10.0);
        let empty = weighted_total(&mut g, &[]).unwrap();
        assert_eq!(g.value(empty).item(), 0.0);
    }
}
