//! Decompose a synthetic face into Haar bands and check the round trip.
//!
//! `cargo run --example wavelet_decompose -- [out_dir]`

use std::path::PathBuf;

use wavegan::data::{render_sample, SynthConfig};
use wavegan::io::write_image;
use wavegan::wavelet::{haar_pool, haar_unpool, high_freq_reconstruct, multi_level_pool};

fn main() -> wavegan::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "wavelet_out".into()));
    std::fs::create_dir_all(&out)?;
    let x = render_sample(&SynthConfig::default(), 7).image;

    let bands = haar_pool(&x)?;
    let back = haar_unpool(&bands)?;
    println!("round-trip max error: {:e}", x.max_abs_diff(&back)?);
    println!("energy of x: {:.4}, sum over bands: {:.4}", x.sum_sq(), bands.energies().iter().sum::<f64>());

    for (level, b) in multi_level_pool(&x, 3)?.iter().enumerate() {
        let [ll, lh, hl, hh] = b.energies();
        println!("level {}: LL {ll:.3} LH {lh:.3} HL {hl:.3} HH {hh:.3}", level + 1);
    }

    write_image(&out.join("input.png"), &x)?;
    write_image(&out.join("ll.png"), &bands.ll.map(|v| v * 0.5))?;
    write_image(&out.join("highfreq.png"), &high_freq_reconstruct(&bands)?.map(|v| v * 4.0))?;
    println!("wrote {}", out.display());
    Ok(())
}
