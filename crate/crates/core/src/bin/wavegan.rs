use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use wavegan::config::RunConfig;
use wavegan::data::{generate_dataset, stack_images, SynthConfig, ATTRIBUTE_NAMES};
use wavegan::diagnostics::{alpha_range, edit_accuracy_all, sre, steg_probe};
use wavegan::experiment::Experiment;
use wavegan::io::{batch_item, hconcat, read_image, write_image};
use wavegan::loss::AttributeDelta;
use wavegan::train::{mean, StepMetrics};
use wavegan::wavelet::{haar_pool, high_freq_reconstruct};
use wavegan::{Error, Result};

#[derive(Parser)]
#[command(name = "wavegan", about = "Wavelet-skip attribute editing on synthetic faces")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Pre-train the classifier, then train the GAN.
    Train(TrainArgs),
    /// Edit one image with a checkpoint's EMA generator.
    Edit(EditArgs),
    /// Steganography probe: ȳ = G(x,0), x̄ = G(ȳ,0), h = ȳ − x̄.
    Probe(ProbeArgs),
    /// Wavelet tools.
    Wavelet {
        #[command(subcommand)]
        cmd: WaveletCmd,
    },
    /// SRE and edit accuracy of one or more checkpoints.
    Metrics(MetricsArgs),
    /// Synthetic dataset tools.
    Dataset {
        #[command(subcommand)]
        cmd: DatasetCmd,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// `key = value` config file; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train for exactly this many epochs at the base learning rate, with no
    /// decay phase (`--set decay_epochs=N` re-enables one).
    #[arg(long)]
    epochs: Option<usize>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set")]
    overrides: Vec<String>,
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Args)]
struct EditArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Comma-separated `name=+1` / `name=-1` entries (names or indices,
    /// optionally prefixed `attr:`).
    #[arg(long)]
    delta: String,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// `start:end:step` sweep; writes one image per α into `--out`.
    #[arg(long)]
    alpha_range: Option<String>,
    /// Output image, or directory for sweeps.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Probe a single image instead of the checkpoint's test set.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Number of test samples to probe.
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value = "probe")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum WaveletCmd {
    /// Write LL, LH, HL, HH and the high-frequency recombination.
    Decompose {
        image: PathBuf,
        #[arg(long, default_value = "wavelet")]
        out: PathBuf,
        /// Gain applied to the high bands for display.
        #[arg(long, default_value_t = 4.0)]
        gain: f32,
    },
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long, required = true)]
    ckpt: Vec<PathBuf>,
    /// Evaluate on the first `count` test samples (0 = all).
    #[arg(long, default_value_t = 0)]
    count: usize,
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Render synthetic samples as PNG files with a labels table.
    Gen {
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value = "dataset")]
        out: PathBuf,
    },
}

fn hash_text(s: &str) -> String {
    Sha256::digest(s.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Files produced under one output directory, with the hash of the
/// configuration that produced them.
struct Manifest {
    dir: PathBuf,
    hash: String,
    files: Vec<String>,
}

impl Manifest {
    fn new(dir: &Path, hash: String) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hash,
            files: Vec::new(),
        })
    }

    fn path(&mut self, rel: &str) -> PathBuf {
        self.files.push(rel.to_string());
        self.dir.join(rel)
    }

    fn write(&self) -> Result<()> {
        let mut s = String::from("# file\tconfig_hash\n");
        for f in &self.files {
            writeln!(s, "{f}\t{}", self.hash).expect("write to string");
        }
        fs::write(self.dir.join("MANIFEST"), s)?;
        Ok(())
    }
}

fn resolve_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = &a.config {
        cfg.apply_text(&fs::read_to_string(p)?)?;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
        cfg.train.decay_epochs = 0;
    }
    for o in &a.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = resolve_config(a)?;
    let mut man = Manifest::new(&a.out, cfg.hash())?;
    fs::write(man.path("config.cfg"), cfg.to_text())?;
    let mut exp = Experiment::prepare(&cfg)?;
    eprintln!("classifier accuracy {:?}", exp.classifier_accuracy);
    let metrics_path = man.path("metrics.tsv");
    let mut metrics = std::io::BufWriter::new(fs::File::create(&metrics_path)?);
    writeln!(metrics, "{}", StepMetrics::TSV_HEADER)?;
    while exp.epochs_left() > 0 {
        let result = exp.epoch(|m| {
            writeln!(metrics, "{}", m.to_tsv())?;
            Ok(())
        });
        if let Err(e) = result {
            metrics.flush()?;
            if matches!(e, Error::Numerical { .. }) {
                exp.save_checkpoint(&man.path("ckpt_abort"))?;
                man.write()?;
            }
            return Err(e);
        }
        let epoch = exp.trainer.epoch;
        eprintln!("epoch {epoch} done (step {})", exp.trainer.step);
        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
            exp.save_checkpoint(&man.path(&format!("ckpt_{epoch:03}")))?;
        }
    }
    metrics.flush()?;
    exp.save_checkpoint(&man.path("ckpt_final"))?;
    man.write()
}

fn attribute_index(name: &str, k: usize) -> Result<usize> {
    let name = name.trim().trim_start_matches("attr:");
    if let Ok(i) = name.parse::<usize>() {
        if i < k {
            return Ok(i);
        }
    }
    ATTRIBUTE_NAMES[..k.min(ATTRIBUTE_NAMES.len())]
        .iter()
        .position(|n| *n == name)
        .ok_or_else(|| Error::Config(format!("unknown attribute {name:?} (known: {})", ATTRIBUTE_NAMES.join(", "))))
}

fn parse_delta(spec: &str, k: usize) -> Result<Vec<i8>> {
    let mut delta = vec![0i8; k];
    for entry in spec.split(',').filter(|e| !e.trim().is_empty()) {
        let (name, v) = entry
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("delta entry {entry:?} is not name=±1")))?;
        delta[attribute_index(name, k)?] = match v.trim() {
            "+1" | "1" => 1,
            "-1" => -1,
            "0" => 0,
            other => return Err(Error::Config(format!("delta value {other:?} must be +1, -1 or 0"))),
        };
    }
    Ok(delta)
}

fn parse_range(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse().map_err(|_| Error::Config(format!("bad alpha range {s:?}"))))
        .collect::<Result<_>>()?;
    match parts.as_slice() {
        [a, b, c] => alpha_range(*a, *b, *c),
        _ => Err(Error::Config(format!("alpha range {s:?} must be start:end:step"))),
    }
}

fn cmd_edit(a: &EditArgs) -> Result<()> {
    let exp = Experiment::load_checkpoint(&a.ckpt)?;
    let g = exp.trainer.models.ema_generator()?;
    let x = read_image(&a.image)?;
    let size = exp.config.model.image_size;
    if x.shape()[2..] != [size, size] {
        return Err(Error::Config(format!(
            "image is {}x{}, model expects {size}x{size}",
            x.shape()[2],
            x.shape()[3]
        )));
    }
    let delta = parse_delta(&a.delta, g.config.num_attrs)?;
    match &a.alpha_range {
        None => {
            let y = g.edit(&x, &[AttributeDelta::new(delta, a.alpha)?])?;
            if let Some(parent) = a.out.parent() {
                fs::create_dir_all(parent)?;
            }
            write_image(&a.out, &y)
        }
        Some(r) => {
            let alphas = parse_range(r)?;
            let mut man = Manifest::new(&a.out, exp.config.hash())?;
            for (i, &alpha) in alphas.iter().enumerate() {
                let y = g.edit(&x, &[AttributeDelta::new(delta.clone(), alpha)?])?;
                write_image(&man.path(&format!("alpha_{i:02}_{alpha:.2}.png")), &y)?;
            }
            man.write()
        }
    }
}

fn cmd_probe(a: &ProbeArgs) -> Result<()> {
    let exp = Experiment::load_checkpoint(&a.ckpt)?;
    let g = exp.trainer.models.ema_generator()?;
    let x = match &a.image {
        Some(p) => read_image(p)?,
        None => {
            let n = a.count.clamp(1, exp.test.len());
            stack_images(&exp.test, &(0..n).collect::<Vec<_>>())?
        }
    };
    let r = steg_probe(&g, &x)?;
    let mut man = Manifest::new(&a.out, exp.config.hash())?;
    let mut report = String::from(
        "# sre in [0,1] pixel units (mean |y_bar - x_bar| / 2); energies are sums of squares at level 1\n\
         sample\tsre\tx_LL\tx_LH\tx_HL\tx_HH\ty_LL\ty_LH\ty_HL\ty_HH\th_LL\th_LH\th_HL\th_HH\n",
    );
    for i in 0..x.shape()[0] {
        let xi = batch_item(&x, i)?;
        let yi = batch_item(&r.y_bar, i)?;
        let xb = batch_item(&r.x_bar, i)?;
        let hi = batch_item(&r.h, i)?.map(|v| v * 5.0);
        write_image(&man.path(&format!("panel_{i:03}.png")), &hconcat(&[&xi, &yi, &xb, &hi])?)?;
        let mut row = format!("{i}\t{}", r.per_sample_sre[i]);
        for img in [&xi, &yi, &batch_item(&r.h, i)?] {
            for e in haar_pool(img)?.energies() {
                write!(row, "\t{e}").expect("write to string");
            }
        }
        report.push_str(&row);
        report.push('\n');
    }
    fs::write(man.path("report.tsv"), report)?;
    man.write()?;
    println!("sre\t{}", r.sre);
    Ok(())
}

fn cmd_wavelet_decompose(image: &Path, out: &Path, gain: f32) -> Result<()> {
    let x = read_image(image)?;
    let bands = haar_pool(&x)?;
    let mut man = Manifest::new(out, hash_text(&format!("wavelet decompose gain={gain}")))?;
    write_image(&man.path("ll.png"), &bands.ll.map(|v| v * 0.5))?;
    for (name, t) in [("lh.png", &bands.lh), ("hl.png", &bands.hl), ("hh.png", &bands.hh)] {
        write_image(&man.path(name), &t.map(|v| v * gain))?;
    }
    write_image(&man.path("highfreq.png"), &high_freq_reconstruct(&bands)?.map(|v| v * gain))?;
    man.write()
}

fn cmd_metrics(a: &MetricsArgs) -> Result<()> {
    let mut rows = Vec::new();
    for path in &a.ckpt {
        let exp = Experiment::load_checkpoint(path)?;
        let g = exp.trainer.models.ema_generator()?;
        let n = if a.count == 0 { exp.test.len() } else { a.count.min(exp.test.len()) };
        let test = &exp.test[..n];
        let s = sre(&g, test)?;
        let acc = edit_accuracy_all(&g, &exp.gated_classifier()?, test)?;
        rows.push((path.display().to_string(), s, mean(&acc), acc));
    }
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(4).max(10);
    println!("{:<width$}  {:>8}  {:>8}  per-attribute Acc.", "checkpoint", "SRE", "Acc.");
    for (name, s, acc, per) in rows {
        let per: Vec<String> = per.iter().map(|v| format!("{v:.3}")).collect();
        println!("{name:<width$}  {s:>8.4}  {acc:>8.3}  {}", per.join(" "));
    }
    println!("# SRE in [0,1] pixel units");
    Ok(())
}

fn cmd_dataset_gen(count: usize, seed: u64, size: usize, out: &Path) -> Result<()> {
    let cfg = SynthConfig {
        size,
        ..SynthConfig::default()
    };
    cfg.validate()?;
    let data = generate_dataset(&cfg, count, seed)?;
    let mut man = Manifest::new(out, hash_text(&format!("dataset {cfg:?} count={count} seed={seed}")))?;
    let mut labels = format!("index\tseed\t{}\tprovenance\n", ATTRIBUTE_NAMES[..cfg.num_attrs].join("\t"));
    for (i, s) in data.iter().enumerate() {
        write_image(&man.path(&format!("sample_{i:04}.png")), &s.image)?;
        let l: Vec<&str> = s.labels.iter().map(|&b| if b { "1" } else { "0" }).collect();
        writeln!(labels, "{i}\t{}\t{}\t{}", s.seed, l.join("\t"), s.provenance.name()).expect("write to string");
    }
    fs::write(man.path("labels.tsv"), labels)?;
    man.write()
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train(a) => cmd_train(&a),
        Cmd::Edit(a) => cmd_edit(&a),
        Cmd::Probe(a) => cmd_probe(&a),
        Cmd::Wavelet {
            cmd: WaveletCmd::Decompose { image, out, gain },
        } => cmd_wavelet_decompose(&image, &out, gain),
        Cmd::Metrics(a) => cmd_metrics(&a),
        Cmd::Dataset {
            cmd: DatasetCmd::Gen { count, seed, size, out },
        } => cmd_dataset_gen(count, seed, size, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
