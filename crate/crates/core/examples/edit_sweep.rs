//! Train briefly, then sweep α for one attribute and report the classifier's
//! probability of the target value along the sweep.

use wavegan::config::RunConfig;
use wavegan::diagnostics::{alpha_range, alpha_sweep, monotone_fraction};
use wavegan::experiment::Experiment;

fn main() -> wavegan::Result<()> {
    let cfg = RunConfig::parse(
        "g_width = 8\nd_width = 8\nbatch_size = 8\ntrain_size = 128\ntest_size = 16\n\
         classifier_epochs = 24\nema_decay = 0.99\nepochs = 2\ndecay_epochs = 0\n",
    )?;
    let mut exp = Experiment::prepare(&cfg)?;
    exp.run(|_| Ok(()), |_| Ok(()))?;
    let g = exp.trainer.models.ema_generator()?;
    let alphas = alpha_range(0.4, 2.0, 0.2)?;
    for k in 0..cfg.model.num_attrs {
        let rows = alpha_sweep(&g, &exp.trainer.models.classifier, &exp.test, k, &alphas)?;
        let first: Vec<String> = rows[0].iter().map(|p| format!("{p:.3}")).collect();
        println!(
            "attribute {k}: sample 0 [{}], monotone fraction {:.2}",
            first.join(" "),
            monotone_fraction(&rows, 0.0)
        );
    }
    Ok(())
}
