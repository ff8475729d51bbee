//! Label statistics: φ-coefficient matrix over the (action, framework) binary
//! variables, pairwise Jaccard overlap of aligned-action sets, and per-action
//! alignment rates.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Scenario;
use crate::error::{Error, Result};
use crate::framework::{ActionIndex, FrameworkId, FrameworkSet};

/// Label bits of one (action, framework) pair across a scenario list.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryAlignmentVariable {
    pub action: ActionIndex,
    pub framework: FrameworkId,
    pub values: Vec<u8>,
}

impl BinaryAlignmentVariable {
    pub fn name(&self) -> String {
        format!("a{}-{}", self.action.index() + 1, self.framework)
    }

    pub fn rate(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }
}

/// A φ value, or the marker for a zero-variance variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhiCell {
    Value(f64),
    #[serde(with = "undefined_marker")]
    Undefined,
}

mod undefined_marker {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("undefined")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let v = String::deserialize(d)?;
        if v == "undefined" {
            Ok(())
        } else {
            Err(serde::de::Error::custom("expected \"undefined\""))
        }
    }
}

impl PhiCell {
    pub fn value(self) -> Option<f64> {
        match self {
            PhiCell::Value(v) => Some(v),
            PhiCell::Undefined => None,
        }
    }
}

impl From<Option<f64>> for PhiCell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(PhiCell::Undefined, PhiCell::Value)
    }
}

/// φ between two bit vectors, using empirical means. `None` when either
/// variable is constant.
pub fn phi_coefficient(x: &[u8], y: &[u8]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::Data("φ needs at least one observation".into()));
    }
    let n = x.len() as f64;
    let (mut sx, mut sy, mut sxy) = (0u64, 0u64, 0u64);
    for (&a, &b) in x.iter().zip(y) {
        sx += a as u64;
        sy += b as u64;
        sxy += (a & b) as u64;
    }
    let ex = sx as f64 / n;
    let ey = sy as f64 / n;
    let exy = sxy as f64 / n;
    let var = ex * (1.0 - ex) * ey * (1.0 - ey);
    if var <= 0.0 {
        return Ok(None);
    }
    Ok(Some(((exy - ex * ey) / var.sqrt()).clamp(-1.0, 1.0)))
}

/// Jaccard overlap of two frameworks' aligned (scenario, action) sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapTerm {
    pub first: FrameworkId,
    pub second: FrameworkId,
    pub intersection: usize,
    pub union: usize,
    /// `None` when both sets are empty.
    pub jaccard: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapSummary {
    /// Always `"unordered pairs"`: each framework pair contributes once.
    pub convention: String,
    pub total: f64,
    pub pairs: Vec<OverlapTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisCounts {
    pub scenarios: usize,
    pub entries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub variables: Vec<String>,
    pub phi_matrix: Vec<Vec<PhiCell>>,
    pub overlap: OverlapSummary,
    pub rates: BTreeMap<String, f64>,
    pub counts: AnalysisCounts,
}

impl AnalysisReport {
    pub fn phi(&self, a: &str, b: &str) -> Option<PhiCell> {
        let i = self.variables.iter().position(|v| v == a)?;
        let j = self.variables.iter().position(|v| v == b)?;
        Some(self.phi_matrix[i][j])
    }

    pub fn rate(&self, action: ActionIndex, framework: &str) -> Option<f64> {
        self.rates
            .get(&format!("a{}-{}", action.index() + 1, framework))
            .copied()
    }

    /// φ matrix as CSV; zero-variance cells read `undefined`.
    pub fn phi_csv(&self) -> String {
        let mut out = String::from("variable");
        for v in &self.variables {
            out.push(',');
            out.push_str(v);
        }
        out.push('\n');
        for (name, row) in self.variables.iter().zip(&self.phi_matrix) {
            out.push_str(name);
            for cell in row {
                match cell {
                    PhiCell::Value(v) => write!(out, ",{v:.6}").unwrap(),
                    PhiCell::Undefined => out.push_str(",undefined"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Builds the `2 × M` binary variables, actions outer, frameworks inner.
pub fn alignment_variables(scenarios: &[Scenario], frameworks: &FrameworkSet) -> Vec<BinaryAlignmentVariable> {
    ActionIndex::BOTH
        .iter()
        .flat_map(|&action| {
            frameworks.iter().map(move |f| BinaryAlignmentVariable {
                action,
                framework: f.clone(),
                values: scenarios.iter().map(|s| s.label(action, f)).collect(),
            })
        })
        .collect()
}

fn aligned_set(scenarios: &[Scenario], f: &FrameworkId) -> HashSet<(usize, ActionIndex)> {
    scenarios
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            ActionIndex::BOTH
                .into_iter()
                .filter(move |&k| s.label(k, f) == 1)
                .map(move |k| (i, k))
        })
        .collect()
}

pub fn analyze_corpus(scenarios: &[Scenario], frameworks: &FrameworkSet) -> Result<AnalysisReport> {
    if scenarios.is_empty() {
        return Err(Error::Data("cannot analyze an empty corpus".into()));
    }
    if let Some(s) = scenarios.iter().find(|s| !s.labels.is_complete(frameworks)) {
        return Err(Error::Data(format!("scenario {} has incomplete labels", s.id)));
    }
    let vars = alignment_variables(scenarios, frameworks);
    let m = vars.len();
    let mut phi_matrix = vec![vec![PhiCell::Undefined; m]; m];
    for i in 0..m {
        phi_matrix[i][i] = PhiCell::Value(1.0);
        for j in (i + 1)..m {
            let cell = PhiCell::from(phi_coefficient(&vars[i].values, &vars[j].values)?);
            phi_matrix[i][j] = cell;
            phi_matrix[j][i] = cell;
        }
    }

    let sets: Vec<_> = frameworks.iter().map(|f| aligned_set(scenarios, f)).collect();
    let mut pairs = Vec::new();
    for i in 0..sets.len() {
        for j in (i + 1)..sets.len() {
            let intersection = sets[i].intersection(&sets[j]).count();
            let union = sets[i].union(&sets[j]).count();
            pairs.push(OverlapTerm {
                first: frameworks.as_slice()[i].clone(),
                second: frameworks.as_slice()[j].clone(),
                intersection,
                union,
                jaccard: (union > 0).then(|| intersection as f64 / union as f64),
            });
        }
    }
    let total = pairs.iter().filter_map(|p| p.jaccard).sum();

    Ok(AnalysisReport {
        variables: vars.iter().map(|v| v.name()).collect(),
        phi_matrix,
        overlap: OverlapSummary {
            convention: "unordered pairs".into(),
            total,
            pairs,
        },
        rates: vars.iter().map(|v| (v.name(), v.rate())).collect(),
        counts: AnalysisCounts {
            scenarios: scenarios.len(),
            entries: scenarios
                .iter()
                .map(|s| s.labels.frameworks().filter(|f| frameworks.contains(f)).count())
                .sum(),
        },
    })
}
