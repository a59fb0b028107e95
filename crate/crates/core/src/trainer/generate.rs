use std::fmt;
use std::fs;
use std::path::Path;

use crate::datakit::{csv_err, write_pgm, Grade, GrayImage, ImageSet, SamplePair};
use crate::error::{Error, Result};
use crate::netlib::KeCae;

const CHUNK: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OutputKind {
    /// Reconstruction of the KL-0 input.
    Recon1,
    /// Reconstruction of the KL-2 input.
    Recon2,
    /// KL-0 unrelated code with the KL-2 key.
    Exchanged1,
    /// KL-2 unrelated code with the KL-0 key.
    Exchanged2,
}

impl OutputKind {
    pub const ALL: [OutputKind; 4] = [
        OutputKind::Recon1,
        OutputKind::Recon2,
        OutputKind::Exchanged1,
        OutputKind::Exchanged2,
    ];

    /// Label carried by the output: reconstructions keep their input's
    /// label, exchanged outputs take the other one.
    pub fn grade(self) -> Grade {
        match self {
            OutputKind::Recon1 | OutputKind::Exchanged2 => Grade::Kl0,
            OutputKind::Recon2 | OutputKind::Exchanged1 => Grade::Kl2,
        }
    }

    pub fn is_exchanged(self) -> bool {
        matches!(self, OutputKind::Exchanged1 | OutputKind::Exchanged2)
    }
}

impl fmt::Display for OutputKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputKind::Recon1 => "recon1",
            OutputKind::Recon2 => "recon2",
            OutputKind::Exchanged1 => "exchanged1",
            OutputKind::Exchanged2 => "exchanged2",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub kind: OutputKind,
    pub grade: Grade,
    pub kl0_id: String,
    pub kl2_id: String,
    pub pixels: Vec<f64>,
}

/// Four eval-mode outputs per pair, in [`OutputKind::ALL`] order.
pub fn generate(model: &mut KeCae, set: &ImageSet, pairs: &[SamplePair]) -> Result<Vec<Generated>> {
    if set.side != model.arch.input_side {
        return Err(Error::Config(format!(
            "images are {0}x{0} but the model expects {1}x{1}",
            set.side, model.arch.input_side
        )));
    }
    let mut out = Vec::with_capacity(4 * pairs.len());
    for chunk in pairs.chunks(CHUNK) {
        let i0: Vec<usize> = chunk.iter().map(|p| p.kl0).collect();
        let i2: Vec<usize> = chunk.iter().map(|p| p.kl2).collect();
        let r = model.run_pairs(&set.tensor(Grade::Kl0, &i0)?, &set.tensor(Grade::Kl2, &i2)?)?;
        let px = set.side * set.side;
        for (j, p) in chunk.iter().enumerate() {
            for (kind, t) in OutputKind::ALL
                .iter()
                .zip([&r.recon1, &r.recon2, &r.exchanged1, &r.exchanged2])
            {
                out.push(Generated {
                    kind: *kind,
                    grade: kind.grade(),
                    kl0_id: set.kl0[p.kl0].id.clone(),
                    kl2_id: set.kl2[p.kl2].id.clone(),
                    pixels: t.data()[j * px..(j + 1) * px].to_vec(),
                });
            }
        }
    }
    Ok(out)
}

/// Writes outputs as PGM files under `dir/kl0` and `dir/kl2` (clamped to
/// [0, 1]) with a `labels.csv` index.
pub fn write_generated(dir: &Path, side: usize, items: &[Generated]) -> Result<()> {
    for g in Grade::ALL {
        let sub = dir.join(g.dir_name());
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    }
    let path = dir.join("labels.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(["file", "kind", "class", "kl0_id", "kl2_id"])
        .map_err(|e| csv_err(&path, e))?;
    for it in items {
        let file = format!("{}/{}_{}_{}.pgm", it.grade.dir_name(), it.kind, it.kl0_id, it.kl2_id);
        let img = GrayImage {
            width: side,
            height: side,
            pixels: it.pixels.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        };
        write_pgm(&dir.join(&file), &img)?;
        w.write_record([file, it.kind.to_string(), it.grade.to_string(), it.kl0_id.clone(), it.kl2_id.clone()])
            .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}
