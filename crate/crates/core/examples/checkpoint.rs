//! Save mid-run, resume from disk and confirm the resumed run matches an
//! uninterrupted one exactly.

use wavegan::config::RunConfig;
use wavegan::experiment::Experiment;

fn main() -> wavegan::Result<()> {
    let cfg = RunConfig::parse(
        "g_width = 4\nd_width = 4\nbatch_size = 8\ntrain_size = 64\ntest_size = 16\n\
         classifier_epochs = 24\nepochs = 2\ndecay_epochs = 0\nmax_steps_per_epoch = 3\noverride_gate = true\n",
    )?;
    let dir = std::env::temp_dir().join("wavegan_checkpoint_example");

    let mut straight = Experiment::prepare(&cfg)?;
    straight.run(|_| Ok(()), |_| Ok(()))?;

    let mut first = Experiment::prepare(&cfg)?;
    first.epoch(|_| Ok(()))?;
    first.save_checkpoint(&dir)?;
    let mut resumed = Experiment::load_checkpoint(&dir)?;
    resumed.run(|_| Ok(()), |_| Ok(()))?;

    let same = straight.trainer.models.generator.params.tensors() == resumed.trainer.models.generator.params.tensors();
    println!("checkpoint at {}", dir.display());
    println!("resumed generator identical to uninterrupted run: {same}");
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
