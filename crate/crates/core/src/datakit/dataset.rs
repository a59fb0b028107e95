//! In-memory image sets and their on-disk layout: one directory per set
//! holding `kl0/` and `kl2/` PGM files plus an `attributes.csv` sidecar.

use std::fs;
use std::path::Path;

use super::pgm::{quantize, read_pgm, write_pgm, GrayImage};
use super::split::split_oversample;
use super::synth::synth_generate;
use super::Grade;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::rng::derive_seed;

pub const ATTRIBUTE_HEADER: [&str; 5] = ["id", "class", "gap_width", "osteo_amp", "seed"];

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub id: String,
    pub grade: Grade,
    pub gap_width: f64,
    pub osteo_amp: f64,
    /// Generator seed; shared by bootstrap copies of the same source image.
    pub seed: u64,
    pub pixels: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageSet {
    pub side: usize,
    pub kl0: Vec<Record>,
    pub kl2: Vec<Record>,
}

impl ImageSet {
    pub fn class(&self, grade: Grade) -> &[Record] {
        match grade {
            Grade::Kl0 => &self.kl0,
            Grade::Kl2 => &self.kl2,
        }
    }

    fn class_mut(&mut self, grade: Grade) -> &mut Vec<Record> {
        match grade {
            Grade::Kl0 => &mut self.kl0,
            Grade::Kl2 => &mut self.kl2,
        }
    }

    pub fn len(&self) -> usize {
        self.kl0.len() + self.kl2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> impl Iterator<Item = &Record> {
        self.kl0.iter().chain(&self.kl2)
    }

    /// Stacks the given records of one class into `[n, 1, s, s]`.
    pub fn tensor(&self, grade: Grade, idx: &[usize]) -> Result<Tensor> {
        let recs = self.class(grade);
        let mut data = Vec::with_capacity(idx.len() * self.side * self.side);
        for &i in idx {
            let r = recs
                .get(i)
                .ok_or_else(|| Error::data(format!("{grade} index {i} out of range")))?;
            data.extend_from_slice(&r.pixels);
        }
        Tensor::new(vec![idx.len(), 1, self.side, self.side], data)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut w = csv_writer(&dir.join("attributes.csv"))?;
        w.write_record(ATTRIBUTE_HEADER).map_err(|e| csv_err(dir, e))?;
        for grade in Grade::ALL {
            let sub = dir.join(grade.dir_name());
            fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            for r in self.class(grade) {
                let img = GrayImage {
                    width: self.side,
                    height: self.side,
                    pixels: r.pixels.clone(),
                };
                write_pgm(&sub.join(format!("{}.pgm", r.id)), &img)?;
                w.write_record([
                    r.id.clone(),
                    grade.to_string(),
                    format!("{}", r.gap_width),
                    format!("{}", r.osteo_amp),
                    r.seed.to_string(),
                ])
                .map_err(|e| csv_err(dir, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(dir, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("attributes.csv");
        let mut rd = csv::Reader::from_path(&path).map_err(|e| csv_err(&path, e))?;
        let header = rd.headers().map_err(|e| csv_err(&path, e))?;
        if header.iter().ne(ATTRIBUTE_HEADER) {
            return Err(Error::data(format!(
                "{}: expected header {}",
                path.display(),
                ATTRIBUTE_HEADER.join(",")
            )));
        }
        let mut set = ImageSet::default();
        for row in rd.records() {
            let row = row.map_err(|e| csv_err(&path, e))?;
            let field = |i: usize| row.get(i).unwrap_or("");
            let bad = |what: &str| {
                Error::data(format!("{}: bad {what} in row {:?}", path.display(), row))
            };
            let grade: Grade = field(1).parse()?;
            let id = field(0).to_string();
            let img = read_pgm(&dir.join(grade.dir_name()).join(format!("{id}.pgm")))?;
            if img.width != img.height || (set.side != 0 && img.width != set.side) {
                return Err(Error::data(format!(
                    "{id}: image is {}x{}, expected square side {}",
                    img.width, img.height, set.side
                )));
            }
            set.side = img.width;
            set.class_mut(grade).push(Record {
                id,
                grade,
                gap_width: field(2).parse().map_err(|_| bad("gap_width"))?,
                osteo_amp: field(3).parse().map_err(|_| bad("osteo_amp"))?,
                seed: field(4).parse().map_err(|_| bad("seed"))?,
                pixels: img.pixels,
            });
        }
        Ok(set)
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::data(format!("{}: {other:?}", path.display())),
    }
}

/// Renders `counts[c]` images of each class, stored at 8-bit precision so
/// that writing and re-reading the set is lossless.
pub fn generate_pool(counts: [usize; 2], side: usize, seed: u64) -> Result<ImageSet> {
    let mut set = ImageSet {
        side,
        ..Default::default()
    };
    for (grade, &n) in Grade::ALL.iter().zip(&counts) {
        for i in 0..n {
            let s = derive_seed(seed, &[grade.index() as u64, i as u64]);
            let img = synth_generate(*grade, s, side)?;
            set.class_mut(*grade).push(Record {
                id: format!("{}_{i:05}", grade.dir_name()),
                grade: *grade,
                gap_width: img.gap_width,
                osteo_amp: img.osteo_amp,
                seed: s,
                pixels: img.pixels.iter().map(|&v| quantize(v) as f64 / 255.0).collect(),
            });
        }
    }
    Ok(set)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: ImageSet,
    pub val: ImageSet,
    pub test: ImageSet,
}

impl Dataset {
    /// Balances and partitions a pool; bootstrap copies get an `_bN` id
    /// suffix and keep their source's seed.
    pub fn from_pool(pool: &ImageSet, seed: u64) -> Result<Self> {
        let splits = split_oversample(&[pool.kl0.len(), pool.kl2.len()], seed)?;
        let empty = || ImageSet {
            side: pool.side,
            ..Default::default()
        };
        let mut ds = Dataset {
            train: empty(),
            val: empty(),
            test: empty(),
        };
        for (grade, sp) in Grade::ALL.iter().zip(&splits) {
            let src = pool.class(*grade);
            let mut copies = vec![0usize; src.len()];
            for &i in &sp.train {
                let mut r = src[i].clone();
                if copies[i] > 0 {
                    r.id = format!("{}_b{}", r.id, copies[i]);
                }
                copies[i] += 1;
                ds.train.class_mut(*grade).push(r);
            }
            ds.val.class_mut(*grade).extend(sp.val.iter().map(|&i| src[i].clone()));
            ds.test.class_mut(*grade).extend(sp.test.iter().map(|&i| src[i].clone()));
        }
        Ok(ds)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.train.save(&dir.join("train"))?;
        self.val.save(&dir.join("val"))?;
        self.test.save(&dir.join("test"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Dataset {
            train: ImageSet::load(&dir.join("train"))?,
            val: ImageSet::load(&dir.join("val"))?,
            test: ImageSet::load(&dir.join("test"))?,
        })
    }
}
