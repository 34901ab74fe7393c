//! Central finite-difference gradient checking in `f64`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Maximum number of entries probed per tensor; larger tensors are
    /// sampled uniformly without replacement.
    pub max_probes: usize,
    pub seed: u64,
    /// Gradient norms below this are treated as this value in the relative
    /// error, so structurally zero gradients are judged on rounding noise
    /// against a meaningful scale.
    pub norm_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            max_probes: 24,
            seed: 0,
            norm_floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub index: usize,
    pub probes: usize,
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂, norm_floor)` over
    /// the probed entries.
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error() < tol
    }
}

/// Compare reverse-mode gradients of the scalar built by `f` against central
/// differences, for every tensor in `inputs`.
///
/// `f` receives a fresh graph and one trainable [`Var`] per input and must
/// return a scalar.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], cfg: GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let mut grads = g.backward(loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut tensors = Vec::with_capacity(inputs.len());
    for (ti, var) in vars.iter().enumerate() {
        let n = inputs[ti].len();
        let analytic = grads
            .take(*var)
            .unwrap_or_else(|| Tensor::zeros(inputs[ti].shape()));
        let probes: Vec<usize> = if n <= cfg.max_probes {
            (0..n).collect()
        } else {
            let mut idx = sample(&mut rng, n, cfg.max_probes).into_vec();
            idx.sort_unstable();
            idx
        };
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for &i in &probes {
            let orig = work[ti].data()[i];
            work[ti].data_mut()[i] = orig + cfg.step;
            let plus = eval(&work)?;
            work[ti].data_mut()[i] = orig - cfg.step;
            let minus = eval(&work)?;
            work[ti].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic.data()[i];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let denom = a2.sqrt().max(n2.sqrt()).max(cfg.norm_floor);
        let rel_error = diff2.sqrt() / denom;
        tensors.push(TensorCheck {
            index: ti,
            probes: probes.len(),
            rel_error,
        });
    }
    Ok(GradCheckReport { tensors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ReduceKind;

    #[test]
    fn detects_correct_and_wrong_gradients() {
        let x = Tensor::from_f64(&[3], &[0.3, -1.2, 2.0]).unwrap();
        let ok = check_gradients(&[x.clone()], GradCheckConfig::default(), |g, v| {
            let t = g.tanh(v[0])?;
            g.reduce(t, ReduceKind::L2Sq, None)
        })
        .unwrap();
        assert!(ok.passes(1e-6), "{ok:?}");

        // Detaching half of the computation makes the analytic gradient wrong.
        let bad = check_gradients(&[x], GradCheckConfig::default(), |g, v| {
            let frozen = g.constant(g.value(v[0]).clone());
            let p = g.mul(v[0], frozen)?;
            g.sum(p)
        })
        .unwrap();
        assert!(!bad.passes(1e-2));
    }
}
