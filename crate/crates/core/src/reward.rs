//! Composite reward: a capped, presence-based keyword term plus a decision
//! alignment term.
//!
//! `r_total = min(weight · #distinct keywords present, cap) + r_align`, where
//! `r_align` is +3 for an aligned decision, −1 for an opposed one and −3 when
//! no decision can be read off the completion. With the default cap of 2.0
//! the keyword term can never close the 4-point gap between an aligned and an
//! opposed decision.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::corpus::Scenario;
use crate::error::{Error, Result};
use crate::framework::{Decision, DecisionToken, FrameworkId};

pub const ALIGNED_REWARD: f64 = 3.0;
pub const OPPOSED_REWARD: f64 = -1.0;
pub const UNCLEAR_REWARD: f64 = -3.0;

/// Version tag of the free-text extraction rules below.
pub const EXTRACTOR_VERSION: &str = "extract-v1";
/// Only this many trailing characters of free text are scanned.
pub const EXTRACTOR_WINDOW: usize = 512;

const DEFAULT_KEYWORDS: &str = include_str!("../config/keywords.toml");

/// Text the reward sees, plus where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub reasoning: String,
    pub origin: Origin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    /// Free text; the decision is recovered by the rule table.
    ExternalText,
    /// Toy-policy output; the decision token is known exactly.
    ToyPolicy(DecisionToken),
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Completion {
            reasoning: text.into(),
            origin: Origin::ExternalText,
        }
    }

    pub fn toy(reasoning_tokens: &[&str], decision: DecisionToken) -> Self {
        Completion {
            reasoning: reasoning_tokens.join(" "),
            origin: Origin::ToyPolicy(decision),
        }
    }
}

struct ExtractorRules {
    decision_line: Regex,
    option: Regex,
    paren: Regex,
}

fn rules() -> &'static ExtractorRules {
    static RULES: OnceLock<ExtractorRules> = OnceLock::new();
    RULES.get_or_init(|| ExtractorRules {
        decision_line: Regex::new(r"(?i)\bdecision\s*:\s*\**\s*\(?\s*([ab])\b").unwrap(),
        option: Regex::new(r"(?i)\boption\s+([ab])\b").unwrap(),
        paren: Regex::new(r"(?:^|[^A-Za-z0-9_])([AB])\)").unwrap(),
    })
}

fn trailing_window(text: &str) -> &str {
    match text.char_indices().rev().nth(EXTRACTOR_WINDOW - 1) {
        Some((i, _)) => &text[i..],
        None => text,
    }
}

fn last_letter(re: &Regex, text: &str) -> Option<Decision> {
    re.captures_iter(text)
        .last()
        .map(|c| Decision::parse_lenient(&c[1]))
}

/// Reads the decision off a completion. For free text the first matching
/// rule wins, each taking its last occurrence within the trailing window:
/// `DECISION: <A|B>`, then `option A|B`, then a standalone `A)` / `B)`.
pub fn extract_decision(completion: &Completion) -> Decision {
    match completion.origin {
        Origin::ToyPolicy(token) => token.decision(),
        Origin::ExternalText => {
            let window = trailing_window(&completion.reasoning);
            let r = rules();
            last_letter(&r.decision_line, window)
                .or_else(|| last_letter(&r.option, window))
                .or_else(|| last_letter(&r.paren, window))
                .unwrap_or(Decision::Unclear)
        }
    }
}

/// One framework's keyword list with compiled whole-phrase matchers.
#[derive(Debug, Clone)]
pub struct KeywordSet {
    pub framework: FrameworkId,
    pub keywords: Vec<String>,
    pub per_hit_weight: f64,
    pub cap: f64,
    matchers: Vec<Regex>,
}

impl KeywordSet {
    pub fn new(framework: FrameworkId, keywords: Vec<String>, per_hit_weight: f64, cap: f64) -> Result<Self> {
        if !(per_hit_weight > 0.0 && cap > 0.0 && cap >= per_hit_weight) {
            return Err(Error::Config(format!(
                "keyword weight {per_hit_weight} and cap {cap} must be positive with cap ≥ weight"
            )));
        }
        let mut normalized: Vec<String> = Vec::with_capacity(keywords.len());
        for k in keywords {
            let k = k.trim().to_lowercase();
            if k.is_empty() {
                return Err(Error::Config(format!("empty keyword for {framework}")));
            }
            if normalized.contains(&k) {
                return Err(Error::Config(format!("duplicate keyword `{k}` for {framework}")));
            }
            normalized.push(k);
        }
        let matchers = normalized
            .iter()
            .map(|k| {
                let pattern = k
                    .split_whitespace()
                    .map(regex::escape)
                    .collect::<Vec<_>>()
                    .join(r"\s+");
                Regex::new(&format!(r"(?i)\b{pattern}\b")).expect("escaped keyword compiles")
            })
            .collect();
        Ok(KeywordSet {
            framework,
            keywords: normalized,
            per_hit_weight,
            cap,
            matchers,
        })
    }

    /// Distinct keywords present in `text`, in list order.
    pub fn matches<'a>(&'a self, text: &str) -> Vec<&'a str> {
        self.keywords
            .iter()
            .zip(&self.matchers)
            .filter(|(_, re)| re.is_match(text))
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn contains_any(&self, text: &str) -> Option<&str> {
        self.matches(text).into_iter().next()
    }

    /// `min(weight · hits, cap)`, snapped to 1e-9 so decimal weights give
    /// decimal rewards (0.3 · 3 is 0.9, not 0.8999999999999999).
    pub fn reward_for_hits(&self, hits: usize) -> f64 {
        let raw = ((self.per_hit_weight * hits as f64) * 1e9).round() / 1e9;
        raw.min(self.cap)
    }
}

/// Keyword lists for every framework, as shipped in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordConfig {
    pub version: String,
    pub per_hit_weight: f64,
    pub cap: f64,
    pub frameworks: BTreeMap<FrameworkId, Vec<String>>,
}

impl Default for KeywordConfig {
    fn default() -> Self {
        toml::from_str(DEFAULT_KEYWORDS).expect("bundled keyword config parses")
    }
}

impl KeywordConfig {
    /// Loads TOML (`.toml`) or JSON keyword lists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: KeywordConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text)?
        };
        for f in cfg.frameworks.keys() {
            cfg.set_for(f)?;
        }
        Ok(cfg)
    }

    pub fn set_for(&self, framework: &FrameworkId) -> Result<KeywordSet> {
        let words = self.frameworks.get(framework).ok_or_else(|| {
            Error::Config(format!("no keyword list configured for framework {framework}"))
        })?;
        KeywordSet::new(framework.clone(), words.clone(), self.per_hit_weight, self.cap)
    }

    pub fn all_sets(&self) -> Result<Vec<KeywordSet>> {
        self.frameworks.keys().map(|f| self.set_for(f)).collect()
    }

    /// Every keyword of every framework, deduplicated, in config order.
    pub fn all_keywords(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for words in self.frameworks.values() {
            for w in words {
                let w = w.trim().to_lowercase();
                if !out.contains(&w) {
                    out.push(w);
                }
            }
        }
        out
    }
}

pub fn keyword_reward(completion: &Completion, keyset: &KeywordSet) -> f64 {
    keyset.reward_for_hits(keyset.matches(&completion.reasoning).len())
}

/// +3 aligned, −1 opposed, −3 unclear.
pub fn alignment_reward(decision: Decision, scenario: &Scenario, framework: &FrameworkId) -> f64 {
    match decision.action() {
        None => UNCLEAR_REWARD,
        Some(k) if scenario.label(k, framework) == 1 => ALIGNED_REWARD,
        Some(_) => OPPOSED_REWARD,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub extracted_decision: Decision,
    pub r_keyword: f64,
    pub r_align: f64,
    pub r_total: f64,
    pub matched_keywords: Vec<String>,
}

pub fn total_reward(
    completion: &Completion,
    scenario: &Scenario,
    framework: &FrameworkId,
    keyset: &KeywordSet,
) -> RewardBreakdown {
    let decision = extract_decision(completion);
    let matched = keyset.matches(&completion.reasoning);
    let r_keyword = keyset.reward_for_hits(matched.len());
    let r_align = alignment_reward(decision, scenario, framework);
    RewardBreakdown {
        extracted_decision: decision,
        r_keyword,
        r_align,
        r_total: r_keyword + r_align,
        matched_keywords: matched.into_iter().map(String::from).collect(),
    }
}

/// One row of an external transcript batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRow {
    pub scenario_id: String,
    #[serde(default)]
    pub framework: Option<FrameworkId>,
    pub completion_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRow {
    pub scenario_id: String,
    pub framework: FrameworkId,
    pub completion_text: String,
    #[serde(flatten)]
    pub reward: RewardBreakdown,
}

#[derive(Debug, Default)]
pub struct BatchScore {
    pub rows: Vec<ScoredRow>,
    pub errors: Vec<Error>,
}

impl BatchScore {
    pub fn mean(&self, pick: impl Fn(&RewardBreakdown) -> f64) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| pick(&r.reward)).sum::<f64>() / self.rows.len() as f64
    }

    pub fn to_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("row serializes") + "\n")
            .collect()
    }
}

/// Scores line-delimited transcripts against a corpus. Rows without a
/// `framework` use `default_framework`; unknown scenario ids become
/// row-level errors.
pub fn score_transcripts(
    jsonl: &str,
    corpus: &Corpus,
    default_framework: Option<&FrameworkId>,
    keywords: &KeywordConfig,
) -> Result<BatchScore> {
    let mut sets: BTreeMap<FrameworkId, KeywordSet> = BTreeMap::new();
    let mut out = BatchScore::default();
    for (i, line) in jsonl.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: TranscriptRow = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                out.errors.push(Error::Record {
                    line: line_no,
                    message: format!("malformed transcript row: {e}"),
                });
                continue;
            }
        };
        let Some(framework) = row.framework.clone().or_else(|| default_framework.cloned()) else {
            out.errors.push(Error::Record {
                line: line_no,
                message: "row has no framework and none was given".into(),
            });
            continue;
        };
        if !corpus.frameworks.contains(&framework) {
            out.errors.push(Error::Record {
                line: line_no,
                message: format!("framework {framework} not in corpus ({})", corpus.frameworks.names().join(", ")),
            });
            continue;
        }
        let Some(scenario) = corpus.find(&row.scenario_id) else {
            out.errors.push(Error::Record {
                line: line_no,
                message: format!("unknown scenario id {}", row.scenario_id),
            });
            continue;
        };
        if !sets.contains_key(&framework) {
            sets.insert(framework.clone(), keywords.set_for(&framework)?);
        }
        let completion = Completion::text(row.completion_text.clone());
        let reward = total_reward(&completion, scenario, &framework, &sets[&framework]);
        out.rows.push(ScoredRow {
            scenario_id: row.scenario_id,
            framework,
            completion_text: row.completion_text,
            reward,
        });
    }
    Ok(out)
}
