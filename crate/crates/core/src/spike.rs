//! Sparse spike representation: spaces, patterns, events, encoders and
//! stream joining.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Number of spike channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SpikeSpace(usize);

impl SpikeSpace {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::Domain("spike space must have at least one channel".into()));
        }
        Ok(Self(size))
    }

    pub fn size(self) -> usize {
        self.0
    }
}

/// Strictly increasing list of active channel ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct SpikePattern {
    ids: Vec<usize>,
}

impl SpikePattern {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Ids must already be strictly increasing and inside `space`.
    pub fn new(ids: Vec<usize>, space: SpikeSpace) -> Result<Self> {
        if let Some(w) = ids.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Pattern(format!(
                "ids must be strictly increasing, found {} before {}",
                w[0], w[1]
            )));
        }
        if let Some(&last) = ids.last() {
            if last >= space.size() {
                return Err(Error::Pattern(format!(
                    "id {last} outside space of {} channels",
                    space.size()
                )));
            }
        }
        Ok(Self { ids })
    }

    /// Sorts and de-duplicates before validating the range.
    pub fn from_unsorted(mut ids: Vec<usize>, space: SpikeSpace) -> Result<Self> {
        ids.sort_unstable();
        ids.dedup();
        Self::new(ids, space)
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.ids.binary_search(&id).is_ok()
    }

    pub fn fits(&self, space: SpikeSpace) -> bool {
        self.ids.last().is_none_or(|&id| id < space.size())
    }

    pub fn to_dense(&self, space: SpikeSpace) -> Vec<u8> {
        let mut bits = vec![0u8; space.size()];
        for &id in &self.ids {
            bits[id] = 1;
        }
        bits
    }

    pub fn intersection_len(&self, other: &SpikePattern) -> usize {
        self.ids.iter().filter(|id| other.contains(**id)).count()
    }
}

/// A timestamped pattern on a named stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeEvent {
    pub stream: String,
    /// Microseconds; non-decreasing per stream.
    pub time: u64,
    pub pattern: SpikePattern,
}

/// Fraction of channels active.
pub fn sparsity(x: &SpikePattern, space: SpikeSpace) -> f64 {
    x.len() as f64 / space.size() as f64
}

/// Indices of the set bits, in order. Any non-zero entry counts as a spike.
pub fn from_dense(bits: &[u8]) -> SpikePattern {
    SpikePattern {
        ids: bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0)
            .map(|(i, _)| i)
            .collect(),
    }
}

/// Parse a dense bit string such as `1000001000000000`.
pub fn from_bit_string(bits: &str) -> Result<SpikePattern> {
    let dense = bits
        .chars()
        .map(|c| match c {
            '0' => Ok(0u8),
            '1' => Ok(1u8),
            other => Err(Error::Pattern(format!("`{other}` is not a bit"))),
        })
        .collect::<Result<Vec<u8>>>()?;
    Ok(from_dense(&dense))
}

/// Concatenate spaces in order, offsetting each pattern by the sizes of the
/// spaces before it.
pub fn join(parts: &[(SpikePattern, SpikeSpace)]) -> Result<(SpikePattern, SpikeSpace)> {
    let mut ids = Vec::with_capacity(parts.iter().map(|(p, _)| p.len()).sum());
    let mut offset = 0usize;
    for (pattern, space) in parts {
        if !pattern.fits(*space) {
            return Err(Error::Pattern(format!(
                "pattern does not fit its space of {}",
                space.size()
            )));
        }
        ids.extend(pattern.ids.iter().map(|id| id + offset));
        offset += space.size();
    }
    let space = SpikeSpace::new(offset)?;
    // Offsets are increasing so the concatenation is already sorted.
    Ok((SpikePattern { ids }, space))
}

/// Overlapping thermometer encoder: a value selects `k` consecutive
/// channels out of `bins + k − 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarEncoder {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
    pub k: usize,
}

impl ScalarEncoder {
    pub fn new(lo: f64, hi: f64, bins: usize, k: usize) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Domain(format!("invalid encoder range [{lo}, {hi}]")));
        }
        if k == 0 || k > bins {
            return Err(Error::Domain(format!(
                "encoder needs 1 <= k <= bins, got k={k}, bins={bins}"
            )));
        }
        Ok(Self { lo, hi, bins, k })
    }

    pub fn space(&self) -> SpikeSpace {
        SpikeSpace(self.bins + self.k - 1)
    }

    pub fn encode(&self, value: f64) -> SpikePattern {
        let v = if value.is_nan() { self.lo } else { value.clamp(self.lo, self.hi) };
        let scaled = (v - self.lo) / (self.hi - self.lo) * (self.bins - 1) as f64;
        let lead = (scaled.round() as usize).min(self.bins - 1);
        SpikePattern {
            ids: (lead..lead + self.k).collect(),
        }
    }
}

pub fn encode_scalar(value: f64, lo: f64, hi: f64, bins: usize, k: usize) -> Result<SpikePattern> {
    Ok(ScalarEncoder::new(lo, hi, bins, k)?.encode(value))
}

/// `{0,6}@16` literal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternLiteral {
    pub pattern: SpikePattern,
    pub space: SpikeSpace,
}

impl fmt::Display for PatternLiteral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, id) in self.pattern.ids.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{id}")?;
        }
        write!(f, "}}@{}", self.space.size())
    }
}

impl FromStr for PatternLiteral {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Pattern(format!("malformed pattern literal `{s}`"));
        let (body, space) = s.trim().split_once('@').ok_or_else(bad)?;
        let space: usize = space.trim().parse().map_err(|_| bad())?;
        let space = SpikeSpace::new(space)?;
        let inner = body
            .trim()
            .strip_prefix('{')
            .and_then(|b| b.strip_suffix('}'))
            .ok_or_else(bad)?;
        let ids = if inner.trim().is_empty() {
            Vec::new()
        } else {
            inner
                .split(',')
                .map(|t| t.trim().parse::<usize>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?
        };
        Ok(Self {
            pattern: SpikePattern::new(ids, space)?,
            space,
        })
    }
}
