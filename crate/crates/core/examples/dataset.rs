//! Render a few synthetic faces with their attribute labels.

use wavegan::data::{generate_dataset, render_with_labels, SynthConfig, ATTRIBUTE_NAMES};
use wavegan::io::{hconcat, write_image};

fn main() -> wavegan::Result<()> {
    let cfg = SynthConfig::default();
    for s in generate_dataset(&cfg, 6, 42)? {
        let on: Vec<&str> = ATTRIBUTE_NAMES.iter().zip(&s.labels).filter(|(_, &l)| l).map(|(n, _)| *n).collect();
        println!("seed {:>20}  {:?}", s.seed, on);
    }

    // Same identity and texture, each attribute toggled in turn.
    let base = render_with_labels(&cfg, 9, &[false, false, false]);
    let mut row = vec![base.image.clone()];
    for k in 0..cfg.num_attrs {
        let mut labels = vec![false; cfg.num_attrs];
        labels[k] = true;
        row.push(render_with_labels(&cfg, 9, &labels).image);
    }
    let refs: Vec<_> = row.iter().collect();
    write_image(std::path::Path::new("attributes.png"), &hconcat(&refs)?)?;
    println!("wrote attributes.png");
    Ok(())
}
