//! Directory checkpoints: a text `manifest` and a little-endian f32 `blob`.
//!
//! ```text
//! wavegan-checkpoint 1
//! meta <key> <value>
//! tensor <name> <d0>x<d1>... f32 <byte offset> <byte length>
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::tensor::Tensor;
use crate::train::{Adam, ModelSet, Trainer};

pub const MANIFEST_FILE: &str = "manifest";
pub const BLOB_FILE: &str = "blob";
const MAGIC: &str = "wavegan-checkpoint";
const VERSION: u32 = 1;

fn ckpt_err(detail: impl Into<String>) -> Error {
    Error::Checkpoint(detail.into())
}

/// Named tensors plus ordered string metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require_meta(&self, key: &str) -> Result<&str> {
        self.meta(key).ok_or_else(|| ckpt_err(format!("missing meta field {key:?}")))
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn push_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    pub fn push_tensor(&mut self, name: String, t: Tensor<f32>) {
        self.tensors.push((name, t));
    }

    pub fn manifest_text(&self) -> String {
        let mut s = format!("{MAGIC} {VERSION}\n");
        for (k, v) in &self.meta {
            writeln!(s, "meta {k} {v}").expect("write to string");
        }
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let len = 4 * t.len();
            writeln!(s, "tensor {name} {} f32 {offset} {len}", shape.join("x")).expect("write to string");
            offset += len;
        }
        s
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for (k, v) in &self.meta {
            if k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(ckpt_err(format!("meta field {k:?} is not representable")));
            }
        }
        for (n, _) in &self.tensors {
            if n.contains(char::is_whitespace) {
                return Err(ckpt_err(format!("tensor name {n:?} contains whitespace")));
            }
        }
        fs::create_dir_all(dir)?;
        let mut blob = Vec::with_capacity(self.tensors.iter().map(|(_, t)| 4 * t.len()).sum());
        for (_, t) in &self.tensors {
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(dir.join(MANIFEST_FILE), self.manifest_text())?;
        fs::write(dir.join(BLOB_FILE), blob)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let blob = fs::read(dir.join(BLOB_FILE))?;
        Self::parse(&manifest, &blob)
    }

    pub fn parse(manifest: &str, blob: &[u8]) -> Result<Self> {
        let mut lines = manifest.lines();
        let header = lines.next().ok_or_else(|| ckpt_err("empty manifest"))?;
        match header.split_once(' ') {
            Some((MAGIC, v)) if v.trim() == VERSION.to_string() => {}
            Some((MAGIC, v)) => return Err(ckpt_err(format!("unsupported checkpoint version {v}"))),
            _ => return Err(ckpt_err("not a checkpoint manifest")),
        }
        let mut out = Checkpoint::default();
        let mut expect_offset = 0usize;
        for line in lines {
            let fields: Vec<&str> = line.split(' ').collect();
            match fields.as_slice() {
                ["meta", key, rest @ ..] => out.push_meta(key, rest.join(" ")),
                ["tensor", name, shape, "f32", offset, len] => {
                    let bad = |what: &str| ckpt_err(format!("tensor {name}: bad {what}"));
                    let shape: Vec<usize> = shape
                        .split('x')
                        .map(|d| d.parse().map_err(|_| bad("shape")))
                        .collect::<Result<_>>()?;
                    let offset: usize = offset.parse().map_err(|_| bad("offset"))?;
                    let len: usize = len.parse().map_err(|_| bad("length"))?;
                    let count: usize = shape.iter().product();
                    if len != 4 * count {
                        return Err(ckpt_err(format!("tensor {name}: length {len} does not match shape {shape:?}")));
                    }
                    if offset != expect_offset {
                        return Err(ckpt_err(format!(
                            "tensor {name}: offset {offset} overlaps or leaves a gap (expected {expect_offset})"
                        )));
                    }
                    let end = offset + len;
                    if end > blob.len() {
                        return Err(ckpt_err(format!(
                            "tensor {name}: needs bytes {offset}..{end} but the blob has {}",
                            blob.len()
                        )));
                    }
                    let data = blob[offset..end]
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                        .collect();
                    out.push_tensor(name.to_string(), Tensor::new(&shape, data)?);
                    expect_offset = end;
                }
                [""] => {}
                _ => return Err(ckpt_err(format!("unrecognised manifest line {line:?}"))),
            }
        }
        if expect_offset != blob.len() {
            return Err(ckpt_err(format!(
                "blob has {} trailing bytes after the last tensor",
                blob.len() - expect_offset
            )));
        }
        Ok(out)
    }
}

fn push_params(ck: &mut Checkpoint, prefix: &str, ps: &ParamSet<f32>) {
    for (name, t) in ps.iter() {
        ck.push_tensor(format!("{prefix}/{name}"), t.clone());
    }
}

fn push_adam(ck: &mut Checkpoint, prefix: &str, ps: &ParamSet<f32>, opt: &Adam<f32>) {
    ck.push_meta(&format!("{prefix}.step"), opt.step);
    for (name, (m, v)) in ps.names().iter().zip(opt.m.iter().zip(&opt.v)) {
        ck.push_tensor(format!("{prefix}/m/{name}"), m.clone());
        ck.push_tensor(format!("{prefix}/v/{name}"), v.clone());
    }
}

fn model_tensors(ck: &mut Checkpoint, m: &ModelSet) {
    push_params(ck, "g", &m.generator.params);
    push_params(ck, "ema", &m.ema);
    push_params(ck, "c", &m.classifier.params);
    for d in &m.discriminators.nets {
        let name = d.kind.name();
        push_params(ck, name, &d.params);
        for (i, s) in d.spectral.iter().enumerate() {
            ck.push_tensor(format!("{name}/sn{i}/u"), Tensor::new(&[s.u.len()], s.u.clone()).expect("vector"));
            ck.push_tensor(format!("{name}/sn{i}/v"), Tensor::new(&[s.v.len()], s.v.clone()).expect("vector"));
        }
    }
}

fn rng_meta(rng: &ChaCha8Rng) -> String {
    let seed: String = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
    format!("{seed}:{}:{}", rng.get_stream(), rng.get_word_pos())
}

fn parse_rng(s: &str) -> Result<ChaCha8Rng> {
    let bad = || ckpt_err(format!("bad rng state {s:?}"));
    let mut parts = s.split(':');
    let (seed, stream, pos) = (parts.next().ok_or_else(bad)?, parts.next().ok_or_else(bad)?, parts.next().ok_or_else(bad)?);
    if seed.len() != 64 {
        return Err(bad());
    }
    let mut bytes = [0u8; 32];
    for (i, b) in bytes.iter_mut().enumerate() {
        *b = u8::from_str_radix(&seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    let mut rng = ChaCha8Rng::from_seed(bytes);
    rng.set_stream(stream.parse().map_err(|_| bad())?);
    rng.set_word_pos(pos.parse().map_err(|_| bad())?);
    Ok(rng)
}

/// Full training state: networks, EMA shadow, spectral vectors, optimiser
/// moments, counters and RNG position.
pub fn trainer_checkpoint(t: &Trainer, config_hash: &str, classifier_accuracy: &[f64]) -> Checkpoint {
    let mut ck = Checkpoint::default();
    ck.push_meta("config_hash", config_hash);
    ck.push_meta("seed", t.config.seed);
    ck.push_meta("epoch", t.epoch);
    ck.push_meta("step", t.step);
    ck.push_meta("rng", rng_meta(&t.rng));
    let acc: Vec<String> = classifier_accuracy.iter().map(|a| format!("{a:?}")).collect();
    ck.push_meta("classifier_accuracy", acc.join(","));
    model_tensors(&mut ck, &t.models);
    push_adam(&mut ck, "opt_g", &t.models.generator.params, &t.opt_g);
    for (d, opt) in t.models.discriminators.nets.iter().zip(&t.opt_d) {
        push_adam(&mut ck, &format!("opt_{}", d.kind.name()), &d.params, opt);
    }
    ck
}

struct Reader<'a> {
    ck: &'a Checkpoint,
    used: HashSet<&'a str>,
}

impl Reader<'_> {
    fn take(&mut self, name: &str, into: &mut Tensor<f32>) -> Result<()> {
        let (key, t) = self
            .ck
            .tensors
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| ckpt_err(format!("tensor {name} missing from checkpoint")))?;
        if t.shape() != into.shape() {
            return Err(ckpt_err(format!(
                "tensor {name}: shape {:?} does not match model {:?}",
                t.shape(),
                into.shape()
            )));
        }
        into.data_mut().copy_from_slice(t.data());
        self.used.insert(key.as_str());
        Ok(())
    }

    fn params(&mut self, prefix: &str, ps: &mut ParamSet<f32>) -> Result<()> {
        let names = ps.names().to_vec();
        for (name, t) in names.iter().zip(ps.tensors_mut()) {
            self.take(&format!("{prefix}/{name}"), t)?;
        }
        Ok(())
    }

    fn vector(&mut self, name: &str, v: &mut [f32]) -> Result<()> {
        let mut t = Tensor::new(&[v.len()], v.to_vec())?;
        self.take(name, &mut t)?;
        v.copy_from_slice(t.data());
        Ok(())
    }

    fn adam(&mut self, prefix: &str, names: &[String], opt: &mut Adam<f32>) -> Result<()> {
        let step = self.ck.require_meta(&format!("{prefix}.step"))?;
        opt.step = step.parse().map_err(|_| ckpt_err(format!("bad {prefix}.step {step:?}")))?;
        for (name, (m, v)) in names.iter().zip(opt.m.iter_mut().zip(opt.v.iter_mut())) {
            self.take(&format!("{prefix}/m/{name}"), m)?;
            self.take(&format!("{prefix}/v/{name}"), v)?;
        }
        Ok(())
    }

    fn models(&mut self, m: &mut ModelSet) -> Result<()> {
        self.params("g", &mut m.generator.params)?;
        self.params("ema", &mut m.ema)?;
        self.params("c", &mut m.classifier.params)?;
        for d in &mut m.discriminators.nets {
            let name = d.kind.name();
            self.params(name, &mut d.params)?;
            for (i, s) in d.spectral.iter_mut().enumerate() {
                self.vector(&format!("{name}/sn{i}/u"), &mut s.u)?;
                self.vector(&format!("{name}/sn{i}/v"), &mut s.v)?;
            }
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        match self.ck.names().find(|n| !self.used.contains(n)) {
            Some(extra) => Err(ckpt_err(format!("tensor {extra} is not used by the model"))),
            None => Ok(()),
        }
    }
}

fn parse_meta<T: std::str::FromStr>(ck: &Checkpoint, key: &str) -> Result<T> {
    let v = ck.require_meta(key)?;
    v.parse().map_err(|_| ckpt_err(format!("bad meta {key} {v:?}")))
}

/// Per-attribute classifier accuracy stored with the checkpoint.
pub fn stored_accuracy(ck: &Checkpoint) -> Result<Vec<f64>> {
    let v = ck.require_meta("classifier_accuracy")?;
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|a| a.parse().map_err(|_| ckpt_err(format!("bad classifier_accuracy {v:?}"))))
        .collect()
}

/// Restore a trainer built from the same configuration.
pub fn restore_trainer(t: &mut Trainer, ck: &Checkpoint, config_hash: &str) -> Result<()> {
    let stored = ck.require_meta("config_hash")?;
    if stored != config_hash {
        return Err(ckpt_err(format!("config hash {stored} does not match {config_hash}")));
    }
    let mut r = Reader { ck, used: HashSet::new() };
    r.models(&mut t.models)?;
    let names = t.models.generator.params.names().to_vec();
    r.adam("opt_g", &names, &mut t.opt_g)?;
    for (d, opt) in t.models.discriminators.nets.iter().zip(t.opt_d.iter_mut()) {
        let names = d.params.names().to_vec();
        r.adam(&format!("opt_{}", d.kind.name()), &names, opt)?;
    }
    r.finish()?;
    t.epoch = parse_meta(ck, "epoch")?;
    t.step = parse_meta(ck, "step")?;
    t.rng = parse_rng(ck.require_meta("rng")?)?;
    Ok(())
}

/// Restore only the networks (optimiser state is ignored).
pub fn restore_models(m: &mut ModelSet, ck: &Checkpoint) -> Result<()> {
    let mut r = Reader { ck, used: HashSet::new() };
    r.models(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{ModelConfig, TrainConfig};

    fn small() -> ModelConfig {
        ModelConfig {
            image_size: 8,
            g_width: 4,
            d_width: 4,
            c_width: 4,
            c_hidden: 4,
            ..Default::default()
        }
    }

    fn trainer(cfg: ModelConfig) -> Trainer {
        Trainer::new(ModelSet::new(cfg, 3).unwrap(), TrainConfig::default()).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = trainer(small());
        t.opt_g.m[0].data_mut()[0] = 0.25;
        t.opt_g.step = 4;
        let ck = trainer_checkpoint(&t, "abc", &[0.9, 1.0, 0.75]);
        ck.save(&dir.path().join("a")).unwrap();
        let back = Checkpoint::load(&dir.path().join("a")).unwrap();
        assert_eq!(back, ck);
        back.save(&dir.path().join("b")).unwrap();
        for f in [MANIFEST_FILE, BLOB_FILE] {
            assert_eq!(
                fs::read(dir.path().join("a").join(f)).unwrap(),
                fs::read(dir.path().join("b").join(f)).unwrap()
            );
        }
        let mut fresh = trainer(small());
        fresh.rng = ChaCha8Rng::seed_from_u64(99);
        restore_trainer(&mut fresh, &back, "abc").unwrap();
        assert_eq!(fresh.models, t.models);
        assert_eq!(fresh.opt_g, t.opt_g);
        assert_eq!(fresh.rng, t.rng);
        assert_eq!(stored_accuracy(&back).unwrap(), vec![0.9, 1.0, 0.75]);
        assert!(restore_trainer(&mut fresh, &back, "other").is_err());
    }

    #[test]
    fn truncated_blob_names_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let ck = trainer_checkpoint(&trainer(small()), "h", &[]);
        ck.save(dir.path()).unwrap();
        let blob = fs::read(dir.path().join(BLOB_FILE)).unwrap();
        fs::write(dir.path().join(BLOB_FILE), &blob[..blob.len() - 3]).unwrap();
        let err = Checkpoint::load(dir.path()).unwrap_err().to_string();
        let last = &ck.tensors.last().unwrap().0;
        assert!(err.contains(last.as_str()), "{err}");
    }

    #[test]
    fn corrupt_manifest_rejected() {
        let good = "wavegan-checkpoint 1\ntensor a 2 f32 0 8\n";
        let blob = [0u8; 8];
        assert!(Checkpoint::parse(good, &blob).is_ok());
        assert!(Checkpoint::parse("wavegan-checkpoint 2\n", &[]).is_err());
        assert!(Checkpoint::parse("wavegan-checkpoint 1\ntensor a 2 f32 0 4\n", &blob).is_err());
        assert!(Checkpoint::parse("wavegan-checkpoint 1\ntensor a 2 f32 4 8\n", &blob).is_err());
        assert!(Checkpoint::parse(good, &[0u8; 12]).is_err());
    }

    #[test]
    fn disabled_highfreq_has_no_dh_tensors() {
        let full = trainer_checkpoint(&trainer(small()), "h", &[]);
        let ablated = trainer_checkpoint(
            &trainer(ModelConfig {
                highfreq_disc: false,
                ..small()
            }),
            "h",
            &[],
        );
        assert!(full.names().any(|n| n.starts_with("d_h0/")));
        assert!(!ablated.names().any(|n| n.starts_with("d_h") || n.starts_with("opt_d_h")));
        let mut t = trainer(ModelConfig {
            highfreq_disc: false,
            ..small()
        });
        assert!(restore_trainer(&mut t, &full, "h").is_err());
    }
}
