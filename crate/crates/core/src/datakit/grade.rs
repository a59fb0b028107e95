use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Severity class of a knee image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Grade {
    Kl0,
    Kl2,
}

impl Grade {
    pub const ALL: [Grade; 2] = [Grade::Kl0, Grade::Kl2];

    /// Class index used by the classifiers (KL-0 = 0, KL-2 = 1).
    pub fn index(self) -> usize {
        match self {
            Grade::Kl0 => 0,
            Grade::Kl2 => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Grade::Kl0),
            1 => Ok(Grade::Kl2),
            _ => Err(Error::data(format!("class index {i} is not 0 or 1"))),
        }
    }

    pub fn swapped(self) -> Self {
        match self {
            Grade::Kl0 => Grade::Kl2,
            Grade::Kl2 => Grade::Kl0,
        }
    }

    pub fn dir_name(self) -> &'static str {
        match self {
            Grade::Kl0 => "kl0",
            Grade::Kl2 => "kl2",
        }
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grade::Kl0 => "KL0",
            Grade::Kl2 => "KL2",
        })
    }
}

impl FromStr for Grade {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "kl0" | "0" => Ok(Grade::Kl0),
            "kl2" | "2" => Ok(Grade::Kl2),
            _ => Err(Error::data(format!("unknown grade {s:?}"))),
        }
    }
}
