use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tiers for the resolution-dependent crop count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AdaptiveParams {
    pub low: usize,
    pub high: usize,
}

impl Default for AdaptiveParams {
    fn default() -> Self {
        Self { low: 5, high: 20 }
    }
}

impl AdaptiveParams {
    pub fn validate(&self) -> Result<()> {
        if self.low == 0 || self.low > self.high {
            return Err(Error::config(format!(
                "adaptive tiers must satisfy 1 <= low <= high, got low={} high={}",
                self.low, self.high
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "count", rename_all = "snake_case")]
pub enum CropPrimitive {
    Center,
    Random(usize),
    MirroredRandom(usize),
    Fixed5,
    MirroredFixed5,
    Adaptive(AdaptiveParams),
}

/// Ordered composition of crop primitives, e.g. `fixed5+mfixed5+random:10+mrandom:10`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CropStrategy {
    primitives: Vec<CropPrimitive>,
}

impl CropStrategy {
    pub fn new(primitives: Vec<CropPrimitive>) -> Result<Self> {
        if primitives.is_empty() {
            return Err(Error::config("crop strategy must have at least one term"));
        }
        for p in &primitives {
            match p {
                CropPrimitive::Random(0) | CropPrimitive::MirroredRandom(0) => {
                    return Err(Error::config("random crop counts must be >= 1"));
                }
                CropPrimitive::Adaptive(params) => params.validate()?,
                _ => {}
            }
        }
        Ok(Self { primitives })
    }

    pub fn center() -> Self {
        Self {
            primitives: vec![CropPrimitive::Center],
        }
    }

    pub fn random(n: usize) -> Result<Self> {
        Self::new(vec![CropPrimitive::Random(n)])
    }

    /// Same strategy with every (mirrored) random term drawing `n` crops.
    pub fn with_random_count(&self, n: usize) -> Result<Self> {
        let mut found = false;
        let primitives = self
            .primitives
            .iter()
            .map(|p| match p {
                CropPrimitive::Random(_) => {
                    found = true;
                    CropPrimitive::Random(n)
                }
                CropPrimitive::MirroredRandom(_) => {
                    found = true;
                    CropPrimitive::MirroredRandom(n)
                }
                other => *other,
            })
            .collect();
        if !found {
            return Err(Error::config(format!(
                "strategy '{self}' has no random term to sweep"
            )));
        }
        Self::new(primitives)
    }

    pub fn primitives(&self) -> &[CropPrimitive] {
        &self.primitives
    }

    /// Number of crops when every random term has a fixed count; `None` when
    /// the strategy contains an adaptive term.
    pub fn fixed_count(&self) -> Option<usize> {
        self.primitives
            .iter()
            .map(|p| match p {
                CropPrimitive::Center => Some(1),
                CropPrimitive::Random(n) | CropPrimitive::MirroredRandom(n) => Some(*n),
                CropPrimitive::Fixed5 | CropPrimitive::MirroredFixed5 => Some(5),
                CropPrimitive::Adaptive(_) => None,
            })
            .sum()
    }
}

impl fmt::Display for CropPrimitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CropPrimitive::Center => f.write_str("center"),
            CropPrimitive::Random(n) => write!(f, "random:{n}"),
            CropPrimitive::MirroredRandom(n) => write!(f, "mrandom:{n}"),
            CropPrimitive::Fixed5 => f.write_str("fixed5"),
            CropPrimitive::MirroredFixed5 => f.write_str("mfixed5"),
            CropPrimitive::Adaptive(p) if *p == AdaptiveParams::default() => f.write_str("adaptive"),
            CropPrimitive::Adaptive(p) => write!(f, "adaptive:{}:{}", p.low, p.high),
        }
    }
}

impl fmt::Display for CropStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.primitives.iter().enumerate() {
            if i > 0 {
                f.write_str("+")?;
            }
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

fn parse_count(term: &str, value: &str) -> Result<usize> {
    value
        .trim()
        .parse::<usize>()
        .map_err(|_| Error::config(format!("bad crop count in '{term}'")))
}

impl FromStr for CropPrimitive {
    type Err = Error;

    fn from_str(term: &str) -> Result<Self> {
        let lower = term.trim().to_ascii_lowercase();
        let mut parts = lower.split(':');
        let name = parts.next().unwrap_or_default().trim();
        let args: Vec<&str> = parts.collect();
        let primitive = match (name, args.as_slice()) {
            ("center", []) => CropPrimitive::Center,
            ("fixed5", []) => CropPrimitive::Fixed5,
            ("mfixed5", []) => CropPrimitive::MirroredFixed5,
            ("random", [n]) => CropPrimitive::Random(parse_count(term, n)?),
            ("mrandom", [n]) => CropPrimitive::MirroredRandom(parse_count(term, n)?),
            ("adaptive", []) => CropPrimitive::Adaptive(AdaptiveParams::default()),
            ("adaptive", [low, high]) => CropPrimitive::Adaptive(AdaptiveParams {
                low: parse_count(term, low)?,
                high: parse_count(term, high)?,
            }),
            _ => return Err(Error::config(format!("unknown crop term '{}'", term.trim()))),
        };
        Ok(primitive)
    }
}

impl FromStr for CropStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let primitives = s
            .split('+')
            .map(str::parse)
            .collect::<Result<Vec<CropPrimitive>>>()?;
        Self::new(primitives)
    }
}

impl TryFrom<String> for CropStrategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<CropStrategy> for String {
    fn from(s: CropStrategy) -> Self {
        s.to_string()
    }
}
