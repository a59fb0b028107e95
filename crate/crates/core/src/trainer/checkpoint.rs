//! Checkpoint directory: `manifest.tsv` (name, dtype, shape, byte offset,
//! byte length) indexing little-endian f64 data in `weights.bin`, the run
//! configuration in `config.txt`, and loop state in `rng.txt`.
//!
//! Every random draw in training comes from a stream keyed by the seed and
//! the step or epoch counter, so the counters in `rng.txt` are the complete
//! random state.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{TrainConfig, Trainer};
use crate::diffcore::{ParamGroup, Tensor};
use crate::error::{Error, Result};
use crate::lossfns::LossReport;
use crate::runconfig::RunConfig;

pub const CHECKPOINT_FILES: [&str; 4] = ["manifest.tsv", "weights.bin", "config.txt", "rng.txt"];

fn shape_str(s: &[usize]) -> String {
    if s.is_empty() {
        "scalar".into()
    } else {
        s.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
    }
}

fn parse_shape(s: &str) -> Option<Vec<usize>> {
    if s == "scalar" {
        return Some(Vec::new());
    }
    s.split('x').map(|d| d.parse().ok()).collect()
}

fn entries<'a>(prefix: &str, group: &'a ParamGroup) -> Vec<(String, &'a Tensor)> {
    let mut out = Vec::new();
    for p in group.params() {
        out.push((format!("{prefix}/param/{}", p.name), &p.value));
        out.push((format!("{prefix}/adam_m/{}", p.name), p.first_moment()));
        out.push((format!("{prefix}/adam_v/{}", p.name), p.second_moment()));
    }
    for (name, t) in group.buffers() {
        out.push((format!("{prefix}/buffer/{name}"), t));
    }
    out
}

fn hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn unhex(s: &str) -> Option<f64> {
    u64::from_str_radix(s, 16).ok().map(f64::from_bits)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint(t: &Trainer, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::from("name\tdtype\tshape\toffset\tlength\n");
    let mut blob = Vec::new();
    let all = entries("gen", &t.model.generator)
        .into_iter()
        .chain(entries("disc", &t.model.discriminator.group));
    for (name, tensor) in all {
        let offset = blob.len();
        for v in tensor.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        let _ = writeln!(
            manifest,
            "{name}\tf64\t{}\t{offset}\t{}",
            shape_str(tensor.shape()),
            blob.len() - offset
        );
    }
    let mut state = String::new();
    let _ = writeln!(state, "seed {}", t.config.seed);
    let _ = writeln!(state, "step {}", t.step);
    let _ = writeln!(state, "epoch {}", t.epoch);
    let _ = writeln!(state, "batch_in_epoch {}", t.batch_in_epoch);
    let _ = writeln!(state, "gen_adam_step {}", t.model.generator.step_count());
    let _ = writeln!(state, "disc_adam_step {}", t.model.discriminator.group.step_count());
    let _ = writeln!(
        state,
        "initial_mse {}",
        t.initial_mse.map_or_else(|| "none".into(), hex)
    );
    let _ = writeln!(state, "epoch_steps {}", t.epoch_steps);
    let _ = writeln!(state, "epoch_sums {}", t.epoch_sums.map(hex).join(" "));
    for r in &t.history {
        let _ = writeln!(
            state,
            "history {}",
            [r.j_mse, r.j_ce1, r.j_ce2, r.j_lda, r.j_total].map(hex).join(" ")
        );
    }
    write(&dir.join("manifest.tsv"), manifest.as_bytes())?;
    write(&dir.join("weights.bin"), &blob)?;
    write(&dir.join("config.txt"), t.config.run.to_text().as_bytes())?;
    write(&dir.join("rng.txt"), state.as_bytes())
}

fn restore(prefix: &str, group: &mut ParamGroup, table: &HashMap<String, Tensor>) -> Result<usize> {
    let missing = |n: &str| Error::Config(format!("architecture mismatch: checkpoint has no tensor {n}"));
    let take = |n: String, shape: &[usize]| -> Result<Tensor> {
        let t = table.get(&n).ok_or_else(|| missing(&n))?;
        if t.shape() != shape {
            return Err(Error::Config(format!(
                "architecture mismatch: {n} is {:?} in the checkpoint, {:?} in the model",
                t.shape(),
                shape
            )));
        }
        Ok(t.clone())
    };
    let mut used = 0;
    for i in 0..group.params().len() {
        let (name, shape) = {
            let p = &group.params()[i];
            (p.name.clone(), p.value.shape().to_vec())
        };
        let value = take(format!("{prefix}/param/{name}"), &shape)?;
        let m = take(format!("{prefix}/adam_m/{name}"), &shape)?;
        let v = take(format!("{prefix}/adam_v/{name}"), &shape)?;
        group.params_mut()[i].value = value;
        group.set_moments(i, m, v)?;
        used += 3;
    }
    for (name, buf) in group.buffers_mut() {
        *buf = take(format!("{prefix}/buffer/{name}"), buf.shape())?;
        used += 1;
    }
    Ok(used)
}

fn state_value<'a>(state: &'a HashMap<&str, Vec<&str>>, key: &str) -> Result<&'a [&'a str]> {
    state
        .get(key)
        .map(|v| v.as_slice())
        .ok_or_else(|| Error::data(format!("rng.txt: missing {key}")))
}

fn parse_one<T: std::str::FromStr>(state: &HashMap<&str, Vec<&str>>, key: &str) -> Result<T> {
    state_value(state, key)?
        .first()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::data(format!("rng.txt: bad {key}")))
}

fn parse_hexes<const N: usize>(fields: &[&str], what: &str) -> Result<[f64; N]> {
    let v: Vec<f64> = fields.iter().filter_map(|s| unhex(s)).collect();
    v.try_into()
        .map_err(|_| Error::data(format!("rng.txt: bad {what}")))
}

/// Rebuilds a trainer (model, optimiser state and loop counters) from a
/// checkpoint directory.
pub fn load_checkpoint(dir: &Path) -> Result<Trainer> {
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read(&p).map_err(|e| Error::io(&p, e))
    };
    let run = RunConfig::parse(&String::from_utf8_lossy(&read("config.txt")?))?;
    let mut trainer = Trainer::new(TrainConfig::from_run(&run)?)?;

    let manifest = String::from_utf8_lossy(&read("manifest.tsv")?).into_owned();
    let blob = read("weights.bin")?;
    let mut table = HashMap::new();
    for (lineno, line) in manifest.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::data(format!("manifest.tsv line {}: malformed", lineno + 1));
        if f.len() != 5 || f[1] != "f64" {
            return Err(bad());
        }
        let shape = parse_shape(f[2]).ok_or_else(bad)?;
        let offset: usize = f[3].parse().map_err(|_| bad())?;
        let len: usize = f[4].parse().map_err(|_| bad())?;
        let bytes = blob.get(offset..offset + len).ok_or_else(bad)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        table.insert(f[0].to_string(), Tensor::new(shape, data)?);
    }
    let used = restore("gen", &mut trainer.model.generator, &table)?
        + restore("disc", &mut trainer.model.discriminator.group, &table)?;
    if used != table.len() {
        return Err(Error::Config(format!(
            "architecture mismatch: checkpoint has {} tensors, model uses {used}",
            table.len()
        )));
    }

    let text = String::from_utf8_lossy(&read("rng.txt")?).into_owned();
    let mut state: HashMap<&str, Vec<&str>> = HashMap::new();
    let mut history = Vec::new();
    for line in text.lines() {
        let mut it = line.split_whitespace();
        let Some(key) = it.next() else { continue };
        let rest: Vec<&str> = it.collect();
        if key == "history" {
            let [j_mse, j_ce1, j_ce2, j_lda, j_total] = parse_hexes::<5>(&rest, "history")?;
            history.push(LossReport { j_mse, j_ce1, j_ce2, j_lda, j_total });
        } else {
            state.insert(key, rest);
        }
    }
    let seed: u64 = parse_one(&state, "seed")?;
    if seed != trainer.config.seed {
        return Err(Error::data("rng.txt seed disagrees with config.txt"));
    }
    trainer.step = parse_one(&state, "step")?;
    trainer.epoch = parse_one(&state, "epoch")?;
    trainer.batch_in_epoch = parse_one(&state, "batch_in_epoch")?;
    trainer.model.generator.set_step_count(parse_one(&state, "gen_adam_step")?);
    trainer
        .model
        .discriminator
        .group
        .set_step_count(parse_one(&state, "disc_adam_step")?);
    let init = state_value(&state, "initial_mse")?;
    trainer.initial_mse = match init.first() {
        Some(&"none") => None,
        Some(s) => Some(unhex(s).ok_or_else(|| Error::data("rng.txt: bad initial_mse"))?),
        None => return Err(Error::data("rng.txt: bad initial_mse")),
    };
    trainer.epoch_steps = parse_one(&state, "epoch_steps")?;
    trainer.epoch_sums = parse_hexes::<5>(state_value(&state, "epoch_sums")?, "epoch_sums")?;
    trainer.history = history;
    Ok(trainer)
}
