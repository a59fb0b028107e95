use std::collections::{HashMap, HashSet};
use std::path::Path;

use super::dataset::{csv_err, ImageSet, Record};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// One training input: a KL-0 item and a KL-2 item, always in that order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SamplePair {
    pub kl0: usize,
    pub kl2: usize,
}

/// Every KL-0 item combined with every KL-2 item, enumerated lazily in
/// row-major order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairIndex {
    n0: usize,
    n2: usize,
}

impl PairIndex {
    pub fn new(n0: usize, n2: usize) -> Self {
        PairIndex { n0, n2 }
    }

    pub fn len(&self) -> u64 {
        self.n0 as u64 * self.n2 as u64
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: u64) -> Option<SamplePair> {
        (i < self.len()).then(|| SamplePair {
            kl0: (i / self.n2 as u64) as usize,
            kl2: (i % self.n2 as u64) as usize,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = SamplePair> + '_ {
        (0..self.len()).filter_map(|i| self.get(i))
    }
}

pub fn make_pairs(n0: usize, n2: usize) -> PairIndex {
    PairIndex::new(n0, n2)
}

/// `n` distinct pairs drawn uniformly without replacement.
pub fn sample_pairs(index: &PairIndex, n: usize, seed: u64) -> Result<Vec<SamplePair>> {
    let size = index.len();
    if n as u64 > size {
        return Err(Error::Range(format!(
            "cannot sample {n} pairs from an index of {size}"
        )));
    }
    let mut rng = Rng::stream(seed, &[0x9a1e]);
    let picks: Vec<u64> = if (n as u64) * 2 >= size {
        // dense case: partial Fisher-Yates over the whole index
        let mut all: Vec<u64> = (0..size).collect();
        for i in 0..n {
            let j = i + rng.below(all.len() - i);
            all.swap(i, j);
        }
        all.truncate(n);
        all
    } else {
        let mut seen = HashSet::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let i = rng.next_u64() % size;
            if seen.insert(i) {
                out.push(i);
            }
        }
        out
    };
    Ok(picks.into_iter().filter_map(|i| index.get(i)).collect())
}

/// Integer square root, for checking that a pair total factors as `n * n`.
pub fn isqrt(v: u64) -> u64 {
    let mut r = (v as f64).sqrt() as u64;
    while r * r > v {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= v {
        r += 1;
    }
    r
}

/// Writes `kl0_id,kl2_id` rows naming the items of `set`.
pub fn write_pairs(path: &Path, set: &ImageSet, pairs: &[SamplePair]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["kl0_id", "kl2_id"]).map_err(|e| csv_err(path, e))?;
    for p in pairs {
        let (a, b) = match (set.kl0.get(p.kl0), set.kl2.get(p.kl2)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::Range(format!("pair {p:?} outside the image set"))),
        };
        w.write_record([&a.id, &b.id]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a pair list back into indices of `set`.
pub fn read_pairs(path: &Path, set: &ImageSet) -> Result<Vec<SamplePair>> {
    let lookup = |records: &[Record]| -> HashMap<String, usize> {
        records.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect()
    };
    let (ids0, ids2) = (lookup(&set.kl0), lookup(&set.kl2));
    let mut rd = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let find = |i: usize, ids: &HashMap<String, usize>| -> Result<usize> {
            row.get(i)
                .and_then(|id| ids.get(id.trim()).copied())
                .ok_or_else(|| Error::Data(format!("{}: unknown pair row {:?}", path.display(), row)))
        };
        out.push(SamplePair { kl0: find(0, &ids0)?, kl2: find(1, &ids2)? });
    }
    Ok(out)
}
