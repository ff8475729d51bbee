//! Scenario data model, line-delimited import/export, the disagreement filter
//! and the ordered train/eval split.
//!
//! On disk a corpus is one JSON object per (scenario, framework) pair:
//!
//! ```text
//! {"id":"G_002","description":"...","action_a":"...","action_b":"...",
//!  "framework":"utilitarian","decision":"B","reasoning":"..."}
//! ```
//!
//! Records sharing an `id` merge into one [`Scenario`]. The label bit for
//! action `k` under framework `f` is 1 exactly when `f`'s recorded decision
//! selects `k`. A record whose decision is neither `A` nor `B` contributes a
//! 0 to both actions.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::framework::{ActionIndex, Decision, FrameworkId, FrameworkSet};

/// Framework-conditioned reasoning attached to a scenario in the source data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub framework: FrameworkId,
    pub text: String,
    pub decision: Decision,
}

/// Binary alignment label per (action, framework). Any pattern is legal.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FrameworkLabelMatrix {
    entries: BTreeMap<FrameworkId, [u8; 2]>,
}

impl FrameworkLabelMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets both action bits for a framework.
    pub fn set(&mut self, framework: FrameworkId, a: bool, b: bool) {
        self.entries.insert(framework, [a as u8, b as u8]);
    }

    /// Labels a framework from its decision: the chosen action gets 1.
    pub fn set_from_decision(&mut self, framework: FrameworkId, decision: Decision) {
        self.set(
            framework,
            decision == Decision::A,
            decision == Decision::B,
        );
    }

    pub fn get(&self, action: ActionIndex, framework: &FrameworkId) -> Option<bool> {
        self.entries.get(framework).map(|bits| bits[action.index()] == 1)
    }

    /// Label bit that must exist; callers guarantee completeness.
    pub fn bit(&self, action: ActionIndex, framework: &FrameworkId) -> u8 {
        self.entries
            .get(framework)
            .map(|bits| bits[action.index()])
            .unwrap_or(0)
    }

    pub fn contains(&self, framework: &FrameworkId) -> bool {
        self.entries.contains_key(framework)
    }

    pub fn frameworks(&self) -> impl Iterator<Item = &FrameworkId> {
        self.entries.keys()
    }

    pub fn is_complete(&self, set: &FrameworkSet) -> bool {
        set.iter().all(|f| self.entries.contains_key(f))
    }
}

/// One two-action moral dilemma with per-framework labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub description: String,
    pub actions: [String; 2],
    pub labels: FrameworkLabelMatrix,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub traces: BTreeMap<FrameworkId, ReasoningTrace>,
    /// Latent feature vector of synthetic scenarios.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<Vec<f64>>,
}

impl Scenario {
    pub fn action(&self, a: ActionIndex) -> &str {
        &self.actions[a.index()]
    }

    pub fn label(&self, action: ActionIndex, framework: &FrameworkId) -> u8 {
        self.labels.bit(action, framework)
    }

    fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(Error::Data("scenario id must be non-empty".into()));
        }
        if self.actions.iter().any(|a| a.trim().is_empty()) {
            return Err(Error::Data(format!("scenario {} has an empty action", self.id)));
        }
        Ok(())
    }
}

/// An ordered scenario list together with its framework set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub frameworks: FrameworkSet,
    pub scenarios: Vec<Scenario>,
}

impl Corpus {
    pub fn new(frameworks: FrameworkSet, scenarios: Vec<Scenario>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &scenarios {
            s.validate()?;
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Data(format!("duplicate scenario id {}", s.id)));
            }
        }
        Ok(Corpus {
            frameworks,
            scenarios,
        })
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    /// Number of (scenario, framework) label entries.
    pub fn trace_count(&self) -> usize {
        self.scenarios
            .iter()
            .map(|s| s.labels.frameworks().count())
            .sum()
    }

    pub fn is_complete(&self) -> bool {
        self.scenarios
            .iter()
            .all(|s| s.labels.is_complete(&self.frameworks))
    }

    pub fn find(&self, id: &str) -> Option<&Scenario> {
        self.scenarios.iter().find(|s| s.id == id)
    }

    /// Canonical line-delimited encoding.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.scenarios {
            for f in &self.frameworks {
                let Some(bits) = s.labels.entries.get(f) else {
                    continue;
                };
                let decision = match bits {
                    [1, 0] => Decision::A,
                    [0, 1] => Decision::B,
                    _ => Decision::Unclear,
                };
                let record = CanonicalRecord {
                    id: s.id.clone(),
                    description: s.description.clone(),
                    action_a: s.actions[0].clone(),
                    action_b: s.actions[1].clone(),
                    framework: f.clone(),
                    decision: decision.as_str().to_string(),
                    reasoning: s.traces.get(f).map(|t| t.text.clone()).unwrap_or_default(),
                    latent: s.latent.clone(),
                };
                out.push_str(&serde_json::to_string(&record).expect("record serializes"));
                out.push('\n');
            }
        }
        out
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the canonical encoding, hex encoded.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_jsonl().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CanonicalRecord {
    id: String,
    description: String,
    action_a: String,
    action_b: String,
    framework: FrameworkId,
    decision: String,
    #[serde(default)]
    reasoning: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    latent: Option<Vec<f64>>,
}

/// External column names for each canonical field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMap {
    pub id: String,
    pub description: String,
    pub action_a: String,
    pub action_b: String,
    pub framework: String,
    pub decision: String,
    pub reasoning: String,
    pub latent: String,
}

impl Default for FieldMap {
    fn default() -> Self {
        FieldMap {
            id: "id".into(),
            description: "description".into(),
            action_a: "action_a".into(),
            action_b: "action_b".into(),
            framework: "framework".into(),
            decision: "decision".into(),
            reasoning: "reasoning".into(),
            latent: "latent".into(),
        }
    }
}

/// Adapts an external record layout to the canonical one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImportProfile {
    pub fields: FieldMap,
    /// External framework name (lowercased) → canonical framework id.
    pub framework_aliases: BTreeMap<String, String>,
    /// Keep scenarios that lack some framework instead of rejecting them.
    pub allow_partial: bool,
}

impl Default for ImportProfile {
    fn default() -> Self {
        let aliases = [
            ("utilitarianism", "utilitarian"),
            ("deontology", "deontological"),
            ("deontological ethics", "deontological"),
            ("virtue ethics", "virtue"),
            ("virtue_ethics", "virtue"),
        ];
        ImportProfile {
            fields: FieldMap::default(),
            framework_aliases: aliases
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            allow_partial: false,
        }
    }
}

impl ImportProfile {
    /// Loads a profile from TOML (`.toml`) or JSON (anything else).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        } else {
            Ok(serde_json::from_str(&text)?)
        }
    }

    fn canonical_framework(&self, raw: &str) -> FrameworkId {
        let key = raw.trim().to_lowercase();
        match self.framework_aliases.get(&key) {
            Some(canonical) => FrameworkId::new(canonical),
            None => FrameworkId::new(key),
        }
    }
}

/// Result of an import: the accepted corpus plus everything that was rejected.
#[derive(Debug)]
pub struct ImportReport {
    pub corpus: Corpus,
    /// Record-level problems, each carrying its 1-based line number.
    pub errors: Vec<Error>,
    /// Ids of scenarios missing at least one framework.
    pub incomplete: Vec<String>,
    pub records_read: usize,
}

impl ImportReport {
    pub fn has_rejections(&self) -> bool {
        !self.errors.is_empty() || (!self.incomplete.is_empty() && !self.corpus_keeps_partial())
    }

    fn corpus_keeps_partial(&self) -> bool {
        self.incomplete
            .iter()
            .all(|id| self.corpus.find(id).is_some())
    }
}

type RawRecord = HashMap<String, serde_json::Value>;

fn field_string(record: &RawRecord, name: &str) -> Option<String> {
    match record.get(name)? {
        serde_json::Value::Null => None,
        serde_json::Value::String(s) => Some(s.clone()),
        other => Some(other.to_string()),
    }
}

fn read_records(path: &Path) -> Result<Vec<(usize, std::result::Result<RawRecord, String>)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let mut out = Vec::new();
    if is_csv {
        let mut reader = csv::Reader::from_reader(file);
        let headers = reader.headers()?.clone();
        for (i, row) in reader.records().enumerate() {
            // header occupies line 1
            let line = row
                .as_ref()
                .ok()
                .and_then(|r| r.position().map(|p| p.line() as usize))
                .unwrap_or(i + 2);
            let parsed = row.map_err(|e| e.to_string()).map(|r| {
                headers
                    .iter()
                    .zip(r.iter())
                    .map(|(h, v)| (h.to_string(), serde_json::Value::String(v.to_string())))
                    .collect()
            });
            out.push((line, parsed));
        }
    } else {
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<RawRecord>(&line).map_err(|e| e.to_string());
            out.push((i + 1, parsed));
        }
    }
    Ok(out)
}

struct PendingScenario {
    scenario: Scenario,
    line: usize,
}

/// Reads a line-delimited (or CSV with header) dataset and merges its records
/// into scenarios, preserving first-appearance order.
pub fn import_dataset(path: impl AsRef<Path>, profile: &ImportProfile) -> Result<ImportReport> {
    let path = path.as_ref();
    let records = read_records(path)?;
    let fields = &profile.fields;
    let mut errors = Vec::new();
    let mut order: Vec<String> = Vec::new();
    let mut pending: HashMap<String, PendingScenario> = HashMap::new();
    let mut seen_frameworks: Vec<FrameworkId> = Vec::new();
    let records_read = records.len();

    for (line, record) in records {
        let record = match record {
            Ok(r) => r,
            Err(msg) => {
                errors.push(Error::Record {
                    line,
                    message: format!("malformed record: {msg}"),
                });
                continue;
            }
        };
        let required = [
            &fields.id,
            &fields.description,
            &fields.action_a,
            &fields.action_b,
            &fields.framework,
            &fields.decision,
        ];
        let missing: Vec<&str> = required
            .iter()
            .filter(|name| field_string(&record, name).is_none())
            .map(|s| s.as_str())
            .collect();
        if !missing.is_empty() {
            errors.push(Error::Record {
                line,
                message: format!("missing field(s): {}", missing.join(", ")),
            });
            continue;
        }
        let get = |name: &str| field_string(&record, name).unwrap_or_default();
        let id = get(&fields.id).trim().to_string();
        let description = get(&fields.description);
        let actions = [get(&fields.action_a), get(&fields.action_b)];
        if id.is_empty() || actions.iter().any(|a| a.trim().is_empty()) {
            errors.push(Error::Record {
                line,
                message: "id and both actions must be non-empty".into(),
            });
            continue;
        }
        let framework = profile.canonical_framework(&get(&fields.framework));
        if framework.as_str().is_empty() {
            errors.push(Error::Record {
                line,
                message: "empty framework".into(),
            });
            continue;
        }
        let decision = Decision::parse_lenient(&get(&fields.decision));
        let reasoning = field_string(&record, &fields.reasoning).unwrap_or_default();
        let latent = match record.get(&fields.latent) {
            Some(v) if !v.is_null() => match serde_json::from_value::<Vec<f64>>(v.clone()) {
                Ok(l) => Some(l),
                Err(e) => {
                    errors.push(Error::Record {
                        line,
                        message: format!("bad latent vector: {e}"),
                    });
                    continue;
                }
            },
            _ => None,
        };

        if !seen_frameworks.contains(&framework) {
            seen_frameworks.push(framework.clone());
        }

        if let Some(p) = pending.get(&id) {
            let s = &p.scenario;
            if s.description != description || s.actions != actions {
                errors.push(Error::Record {
                    line,
                    message: format!(
                        "scenario {id} conflicts with its first record on line {}",
                        p.line
                    ),
                });
                continue;
            }
            if s.labels.contains(&framework) {
                errors.push(Error::Record {
                    line,
                    message: format!("duplicate framework {framework} for scenario {id}"),
                });
                continue;
            }
        } else {
            order.push(id.clone());
        }
        let entry = pending.entry(id.clone()).or_insert_with(|| PendingScenario {
            scenario: Scenario {
                id: id.clone(),
                description,
                actions,
                labels: FrameworkLabelMatrix::new(),
                traces: BTreeMap::new(),
                latent: None,
            },
            line,
        });
        let s = &mut entry.scenario;
        s.labels.set_from_decision(framework.clone(), decision);
        if !reasoning.trim().is_empty() {
            s.traces.insert(
                framework.clone(),
                ReasoningTrace {
                    framework: framework.clone(),
                    text: reasoning,
                    decision,
                },
            );
        }
        if latent.is_some() {
            s.latent = latent;
        }
    }

    let frameworks = ordered_frameworks(seen_frameworks)?;
    let mut scenarios = Vec::with_capacity(order.len());
    let mut incomplete = Vec::new();
    for id in order {
        let p = pending.remove(&id).expect("pending scenario");
        if !p.scenario.labels.is_complete(&frameworks) {
            incomplete.push(id);
            if !profile.allow_partial {
                continue;
            }
        }
        scenarios.push(p.scenario);
    }
    Ok(ImportReport {
        corpus: Corpus::new(frameworks, scenarios)?,
        errors,
        incomplete,
        records_read,
    })
}

/// Known frameworks first in their default order, then the rest by appearance.
fn ordered_frameworks(seen: Vec<FrameworkId>) -> Result<FrameworkSet> {
    if seen.is_empty() {
        return Ok(FrameworkSet::default());
    }
    let defaults = FrameworkSet::default();
    let mut ordered: Vec<FrameworkId> = defaults
        .iter()
        .filter(|f| seen.contains(f))
        .cloned()
        .collect();
    ordered.extend(seen.into_iter().filter(|f| !defaults.contains(f)));
    FrameworkSet::new(ordered)
}

/// Which scenarios count as framework disagreements.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisagreementRule {
    /// No action is unanimously aligned nor unanimously opposed.
    #[default]
    NoUnanimousAction,
    /// No action is unanimously aligned (unanimous opposition is allowed).
    NoUnanimousAlignment,
}

impl DisagreementRule {
    pub fn keeps(self, scenario: &Scenario, frameworks: &FrameworkSet) -> bool {
        ActionIndex::BOTH.iter().all(|&k| {
            let all_aligned = frameworks.iter().all(|f| scenario.label(k, f) == 1);
            let all_opposed = frameworks.iter().all(|f| scenario.label(k, f) == 0);
            match self {
                DisagreementRule::NoUnanimousAction => !all_aligned && !all_opposed,
                DisagreementRule::NoUnanimousAlignment => !all_aligned,
            }
        })
    }
}

impl fmt::Display for DisagreementRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DisagreementRule::NoUnanimousAction => f.write_str("no action unanimously aligned or opposed"),
            DisagreementRule::NoUnanimousAlignment => f.write_str("no action unanimously aligned"),
        }
    }
}

/// Keeps the disagreement scenarios, in order.
pub fn filter_disagreement(scenarios: &[Scenario], frameworks: &FrameworkSet) -> Vec<Scenario> {
    filter_disagreement_with(scenarios, frameworks, DisagreementRule::default())
}

pub fn filter_disagreement_with(
    scenarios: &[Scenario],
    frameworks: &FrameworkSet,
    rule: DisagreementRule,
) -> Vec<Scenario> {
    scenarios
        .iter()
        .filter(|s| rule.keeps(s, frameworks))
        .cloned()
        .collect()
}

/// How the eval set is taken from the tail of the list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSelection {
    /// The last `n` scenarios.
    Last(usize),
    /// Everything after the training prefix.
    Remainder,
}

/// Ordered split: the first `train_percent`% (floored) for training and an
/// eval tail; anything in between is held out of both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRule {
    pub train_percent: u32,
    pub eval: EvalSelection,
}

impl SplitRule {
    /// First 70% for training, last 50 for evaluation.
    pub const PAPER: SplitRule = SplitRule {
        train_percent: 70,
        eval: EvalSelection::Last(50),
    };

    /// First 70% for training, the rest for evaluation.
    pub const PROPORTIONAL: SplitRule = SplitRule {
        train_percent: 70,
        eval: EvalSelection::Remainder,
    };

    pub fn train_count(&self, n: usize) -> usize {
        n * self.train_percent as usize / 100
    }
}

impl fmt::Display for SplitRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.eval {
            EvalSelection::Last(n) => write!(f, "first {}% train / last {n} eval", self.train_percent),
            EvalSelection::Remainder => write!(f, "first {}% train / remainder eval", self.train_percent),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitProvenance {
    pub filter: Option<DisagreementRule>,
    pub rule: SplitRule,
    pub source_count: usize,
    pub train_count: usize,
    pub eval_count: usize,
    pub unused_count: usize,
}

/// Disjoint, order-preserving train and eval sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub frameworks: FrameworkSet,
    pub train: Vec<Scenario>,
    pub eval: Vec<Scenario>,
    pub provenance: SplitProvenance,
}

impl CorpusSplit {
    /// Fails when any eval id also appears in the training set.
    pub fn verify_disjoint(&self) -> Result<()> {
        let train_ids: HashSet<&str> = self.train.iter().map(|s| s.id.as_str()).collect();
        let shared: Vec<&str> = self
            .eval
            .iter()
            .map(|s| s.id.as_str())
            .filter(|id| train_ids.contains(id))
            .collect();
        match shared.first() {
            None => Ok(()),
            Some(first) => Err(Error::Contamination {
                count: shared.len(),
                first: first.to_string(),
            }),
        }
    }
}

pub fn split_corpus(scenarios: &[Scenario], frameworks: &FrameworkSet, rule: SplitRule) -> Result<CorpusSplit> {
    let n = scenarios.len();
    let train = rule.train_count(n);
    let eval = match rule.eval {
        EvalSelection::Last(k) => k,
        EvalSelection::Remainder => n - train,
    };
    if train + eval > n || train == 0 || eval == 0 {
        return Err(Error::SplitSize {
            needed: (train + eval).max(2),
            train,
            eval,
            available: n,
        });
    }
    let split = CorpusSplit {
        frameworks: frameworks.clone(),
        train: scenarios[..train].to_vec(),
        eval: scenarios[n - eval..].to_vec(),
        provenance: SplitProvenance {
            filter: None,
            rule,
            source_count: n,
            train_count: train,
            eval_count: eval,
            unused_count: n - train - eval,
        },
    };
    split.verify_disjoint()?;
    Ok(split)
}

/// Filter then split, recording the filter in the provenance.
pub fn prepare_split(corpus: &Corpus, filter: Option<DisagreementRule>, rule: SplitRule) -> Result<CorpusSplit> {
    let pool = match filter {
        Some(r) => filter_disagreement_with(&corpus.scenarios, &corpus.frameworks, r),
        None => corpus.scenarios.clone(),
    };
    let mut split = split_corpus(&pool, &corpus.frameworks, rule)?;
    split.provenance.filter = filter;
    Ok(split)
}
