//! Steganography probe on untrained and identity-like generators.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wavegan::data::{generate_dataset, stack_images, SynthConfig};
use wavegan::diagnostics::{sre, steg_probe};
use wavegan::nn::{Generator, GeneratorConfig};

fn main() -> wavegan::Result<()> {
    let data = generate_dataset(&SynthConfig::default(), 16, 11)?;
    let x = stack_images(&data, &(0..4).collect::<Vec<_>>())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = GeneratorConfig {
        width: 8,
        ..GeneratorConfig::default()
    };

    let random = Generator::<f32>::new(cfg, &mut rng)?;
    let identity = Generator::<f32>::identity(cfg, &mut rng)?;
    for (name, g) in [("random init", &random), ("identity", &identity)] {
        let r = steg_probe(g, &x)?;
        println!("{name}: SRE {:.5} (dataset {:.5})", r.sre, sre(g, &data)?);
        let h = &r.band_energy.h;
        println!("  h energy by level: {:?}", h.levels);
        println!("  h high-frequency ratio: {:.3}", h.high_ratio());
    }
    Ok(())
}
