//! Declarative segment taxonomy and the partition of frame columns into
//! canonical segments, residual families, and unmatched columns.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use glob::Pattern;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::MetricFrame;

const BUNDLED_TAXONOMY: &str = include_str!("../data/default_taxonomy.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TransformId {
    /// Monotonic counter rate.
    Mcr,
    /// Logarithmic tail compression.
    Ltc,
    /// Baseline stress ratio.
    Bsr,
    NetRate,
    /// Global baseline deviation.
    Gbd,
    /// Rolling baseline drift ratio.
    Rbdr,
    ResidNone,
    ResidSqrt,
    ResidLog1p,
    ResidDiff,
}

impl TransformId {
    pub const ALL: [TransformId; 10] = [
        TransformId::Mcr,
        TransformId::Ltc,
        TransformId::Bsr,
        TransformId::NetRate,
        TransformId::Gbd,
        TransformId::Rbdr,
        TransformId::ResidNone,
        TransformId::ResidSqrt,
        TransformId::ResidLog1p,
        TransformId::ResidDiff,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TransformId::Mcr => "MCR",
            TransformId::Ltc => "LTC",
            TransformId::Bsr => "BSR",
            TransformId::NetRate => "NETRATE",
            TransformId::Gbd => "GBD",
            TransformId::Rbdr => "RBDR",
            TransformId::ResidNone => "RESID_NONE",
            TransformId::ResidSqrt => "RESID_SQRT",
            TransformId::ResidLog1p => "RESID_LOG1P",
            TransformId::ResidDiff => "RESID_DIFF",
        }
    }
}

impl FromStr for TransformId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TransformId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown transform {s}")))
    }
}

impl fmt::Display for TransformId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NormalizationId {
    Robust,
    Log1p,
    ZscoreCond,
    None,
}

impl NormalizationId {
    pub const ALL: [NormalizationId; 4] = [
        NormalizationId::Robust,
        NormalizationId::Log1p,
        NormalizationId::ZscoreCond,
        NormalizationId::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NormalizationId::Robust => "ROBUST",
            NormalizationId::Log1p => "LOG1P",
            NormalizationId::ZscoreCond => "ZSCORE_COND",
            NormalizationId::None => "NONE",
        }
    }
}

impl FromStr for NormalizationId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NormalizationId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown normalization {s}")))
    }
}

impl fmt::Display for NormalizationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

macro_rules! string_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(TransformId);
string_serde!(NormalizationId);

/// One canonical segment or residual family.
#[derive(Debug, Clone)]
pub struct SegmentSpec {
    pub name: String,
    pub transform: TransformId,
    pub normalization: NormalizationId,
    patterns: Vec<Pattern>,
}

impl SegmentSpec {
    pub fn new(
        name: impl Into<String>,
        transform: TransformId,
        normalization: NormalizationId,
        patterns: &[&str],
    ) -> Result<Self> {
        let patterns = patterns
            .iter()
            .map(|p| Pattern::new(p).map_err(|e| Error::Config(format!("bad pattern {p:?}: {e}"))))
            .collect::<Result<_>>()?;
        Ok(Self {
            name: name.into(),
            transform,
            normalization,
            patterns,
        })
    }

    pub fn patterns(&self) -> impl Iterator<Item = &str> {
        self.patterns.iter().map(Pattern::as_str)
    }

    pub fn matches(&self, column: &str) -> bool {
        self.patterns.iter().any(|p| p.matches(column))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSegment {
    name: String,
    transform: String,
    normalization: String,
    #[serde(default)]
    patterns: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTaxonomy {
    canonical: Vec<RawSegment>,
    #[serde(default)]
    residual: Vec<RawSegment>,
    #[serde(default)]
    keep_list: Vec<String>,
}

#[derive(Serialize)]
struct SegmentView<'a> {
    name: &'a str,
    transform: TransformId,
    normalization: NormalizationId,
    patterns: Vec<&'a str>,
}

/// Canonical segments and residual families, in declaration order.
#[derive(Debug, Clone)]
pub struct SegmentTaxonomy {
    pub canonical: Vec<SegmentSpec>,
    pub residual: Vec<SegmentSpec>,
    pub keep_list: BTreeSet<String>,
}

impl SegmentTaxonomy {
    pub fn new(canonical: Vec<SegmentSpec>, residual: Vec<SegmentSpec>, keep_list: BTreeSet<String>) -> Result<Self> {
        for (kind, list) in [("segment", &canonical), ("family", &residual)] {
            let mut seen = BTreeSet::new();
            for s in list {
                if !seen.insert(s.name.as_str()) {
                    return Err(Error::Config(format!("duplicate {kind} name {}", s.name)));
                }
            }
        }
        Ok(Self {
            canonical,
            residual,
            keep_list,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawTaxonomy =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("taxonomy: {e}")))?;
        let convert = |segs: Vec<RawSegment>| -> Result<Vec<SegmentSpec>> {
            segs.into_iter()
                .map(|s| {
                    let patterns: Vec<&str> = s.patterns.iter().map(String::as_str).collect();
                    SegmentSpec::new(s.name, s.transform.parse()?, s.normalization.parse()?, &patterns)
                })
                .collect()
        };
        Self::new(
            convert(raw.canonical)?,
            convert(raw.residual)?,
            raw.keep_list.into_iter().collect(),
        )
    }

    pub fn to_json(&self) -> serde_json::Value {
        let view = |segs: &[SegmentSpec]| -> Vec<serde_json::Value> {
            segs.iter()
                .map(|s| {
                    serde_json::to_value(SegmentView {
                        name: &s.name,
                        transform: s.transform,
                        normalization: s.normalization,
                        patterns: s.patterns().collect(),
                    })
                    .expect("segment view serializes")
                })
                .collect()
        };
        serde_json::json!({
            "canonical": view(&self.canonical),
            "residual": view(&self.residual),
            "keep_list": self.keep_list,
        })
    }

    /// Taxonomy shipped with the crate: six canonical segments and four
    /// residual families for Cassandra/JVM monitoring.
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_TAXONOMY).expect("bundled taxonomy is valid")
    }

    pub fn bundled_json() -> &'static str {
        BUNDLED_TAXONOMY
    }

    pub fn canonical_spec(&self, name: &str) -> Option<&SegmentSpec> {
        self.canonical.iter().find(|s| s.name == name)
    }

    pub fn residual_spec(&self, name: &str) -> Option<&SegmentSpec> {
        self.residual.iter().find(|s| s.name == name)
    }
}

pub fn parse_taxonomy(path: &Path) -> Result<SegmentTaxonomy> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SegmentTaxonomy::from_json(&text)
}

/// Column partition induced by a taxonomy on a frame.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentedSpace {
    pub canonical: BTreeMap<String, Vec<String>>,
    pub residual: BTreeMap<String, Vec<String>>,
    pub unmatched: Vec<String>,
}

impl SegmentedSpace {
    pub fn canonical_columns(&self) -> Vec<String> {
        self.canonical.values().flatten().cloned().collect()
    }

    pub fn residual_columns(&self) -> Vec<String> {
        self.residual.values().flatten().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.canonical.values().map(Vec::len).sum::<usize>()
            + self.residual.values().map(Vec::len).sum::<usize>()
            + self.unmatched.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Matches every column against canonical patterns first, then residual
/// ones; the first declared match wins.
pub fn assign_segments(frame: &MetricFrame, taxonomy: &SegmentTaxonomy) -> Result<SegmentedSpace> {
    let mut columns: Vec<&str> = frame.columns().iter().map(String::as_str).collect();
    columns.sort_unstable();

    let mut space = SegmentedSpace {
        canonical: taxonomy.canonical.iter().map(|s| (s.name.clone(), Vec::new())).collect(),
        residual: taxonomy.residual.iter().map(|s| (s.name.clone(), Vec::new())).collect(),
        unmatched: Vec::new(),
    };
    let mut any_canonical = false;
    'columns: for col in columns {
        for seg in &taxonomy.canonical {
            if seg.matches(col) {
                space.canonical.get_mut(&seg.name).unwrap().push(col.to_string());
                any_canonical = true;
                continue 'columns;
            }
        }
        for fam in &taxonomy.residual {
            if fam.matches(col) {
                space.residual.get_mut(&fam.name).unwrap().push(col.to_string());
                continue 'columns;
            }
        }
        space.unmatched.push(col.to_string());
    }
    if !any_canonical {
        return Err(Error::EmptyCanonical);
    }
    Ok(space)
}
