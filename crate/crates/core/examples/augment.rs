//! Apply each cycle-loss augmentation family to one image.

use wavegan::data::{apply_augment, render_sample, AugmentKind, AugmentOp, SynthConfig};
use wavegan::io::{hconcat, write_image};

fn main() -> wavegan::Result<()> {
    let x = render_sample(&SynthConfig::default(), 3).image;
    let mut row = vec![x.clone()];
    for name in AugmentKind::NAMES {
        let op = AugmentOp {
            kind: AugmentKind::parse(name)?,
            seed: 1,
        };
        let y = apply_augment(&op, &x)?;
        println!("{name:>7}: mean |y - x| = {:.4}", mean_abs_diff(&x, &y));
        row.push(y);
    }
    let refs: Vec<_> = row.iter().collect();
    write_image(std::path::Path::new("augment.png"), &hconcat(&refs)?)?;
    Ok(())
}

fn mean_abs_diff(a: &wavegan::Tensor, b: &wavegan::Tensor) -> f64 {
    let s: f64 = a.data().iter().zip(b.data()).map(|(p, q)| f64::from((p - q).abs())).sum();
    s / a.len() as f64
}
