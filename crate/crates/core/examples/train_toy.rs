//! Short end-to-end training run on the synthetic dataset, printing the
//! per-epoch mean loss, SRE and edit accuracy of the EMA generator.
//!
//! `cargo run --release --example train_toy -- [epochs]`

use wavegan::config::RunConfig;
use wavegan::diagnostics::{edit_accuracy_all, sre};
use wavegan::experiment::Experiment;
use wavegan::train::StepMetrics;

fn main() -> wavegan::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let cfg = RunConfig::parse(&format!(
        "g_width = 8\nd_width = 8\nbatch_size = 8\ntrain_size = 128\ntest_size = 32\n\
         classifier_epochs = 24\nema_decay = 0.99\nepochs = {epochs}\ndecay_epochs = 0\n"
    ))?;
    let mut exp = Experiment::prepare(&cfg)?;
    println!("classifier accuracy {:?}", exp.classifier_accuracy);
    println!("{}", StepMetrics::TSV_HEADER);
    while exp.epochs_left() > 0 {
        let mut last = None;
        exp.epoch(|m| {
            last = Some(m.to_tsv());
            Ok(())
        })?;
        let g = exp.trainer.models.ema_generator()?;
        let acc = edit_accuracy_all(&g, &exp.gated_classifier()?, &exp.test)?;
        println!("{}", last.unwrap_or_default());
        println!("# epoch {}: SRE {:.4}, edit accuracy {acc:?}", exp.trainer.epoch, sre(&g, &exp.test)?);
    }
    Ok(())
}
