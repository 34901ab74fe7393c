//! Finite-difference check of the generator and a discriminator in `f64`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wavegan::gradcheck::{check_gradients, GradCheckConfig};
use wavegan::loss::AttributeDelta;
use wavegan::nn::{Bound, DiscKind, Discriminator, Generator, GeneratorConfig, SkipMode};
use wavegan::Tensor;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    use rand::Rng;
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

fn main() -> wavegan::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = GeneratorConfig {
        width: 4,
        num_attrs: 3,
        skip: SkipMode::HighFreq,
        output_tanh: true,
    };
    let gen = Generator::<f64>::new(cfg, &mut rng)?;
    let x = random(&[2, 3, 8, 8], &mut rng);
    let cond = AttributeDelta::condition_tensor::<f64>(&[
        AttributeDelta::new(vec![1, 0, -1], 0.7)?,
        AttributeDelta::new(vec![0, 1, 0], 1.3)?,
    ])?;
    let mut inputs = vec![x, cond];
    inputs.extend(gen.params.tensors().iter().cloned());
    let report = check_gradients(&inputs, GradCheckConfig::default(), |g, v| {
        let b = Bound::from_vars(v[2..].to_vec());
        let y = gen.forward(g, &b, v[0], v[1])?;
        let sq = g.mul(y, y)?;
        g.mean(sq)
    })?;
    println!("generator: {} tensors, max rel error {:.2e}", report.tensors.len(), report.max_rel_error());

    let disc = Discriminator::<f64>::new(DiscKind::I0, 4, 8, &mut rng)?;
    let x = random(&[2, 3, 8, 8], &mut rng);
    let mut inputs = vec![x];
    inputs.extend(disc.params.tensors().iter().cloned());
    let report = check_gradients(&inputs, GradCheckConfig::default(), |g, v| {
        let b = Bound::from_vars(v[1..].to_vec());
        let logits = disc.forward(g, &b, v[0])?;
        g.mean(logits)
    })?;
    println!("discriminator: max rel error {:.2e}", report.max_rel_error());
    Ok(())
}
