//! WordNet-style lexical expansion of a seed term into prompt plans.
//!
//! Lexicons are loaded from a four-column UTF-8 TSV:
//!
//! ```text
//! seed <TAB> sense-id <TAB> linkage-type <TAB> target
//! seed <TAB> sense-id <TAB> gloss        <TAB> definition text
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Terms keep the
//! WordNet underscore convention (`horse-drawn_vehicle`); prompts render
//! underscores as spaces.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("lexicon contains no entries")]
    EmptyLexicon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkageType {
    Synonym,
    Antonym,
    Hypernym,
    Hyponym,
    Meronym,
    Holonym,
}

impl LinkageType {
    pub const ALL: [LinkageType; 6] = [
        LinkageType::Synonym,
        LinkageType::Antonym,
        LinkageType::Hypernym,
        LinkageType::Hyponym,
        LinkageType::Meronym,
        LinkageType::Holonym,
    ];

    /// Order in which positive expansions are appended to a prompt plan.
    const POSITIVE_ORDER: [LinkageType; 5] = [
        LinkageType::Synonym,
        LinkageType::Hypernym,
        LinkageType::Hyponym,
        LinkageType::Meronym,
        LinkageType::Holonym,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LinkageType::Synonym => "synonym",
            LinkageType::Antonym => "antonym",
            LinkageType::Hypernym => "hypernym",
            LinkageType::Hyponym => "hyponym",
            LinkageType::Meronym => "meronym",
            LinkageType::Holonym => "holonym",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }

    /// Parses a comma-separated list such as `synonym,hypernym`.
    pub fn parse_list(s: &str) -> Result<Vec<LinkageType>, String> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for LinkageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LinkageType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "synonym" | "synonyms" => Ok(LinkageType::Synonym),
            "antonym" | "antonyms" => Ok(LinkageType::Antonym),
            "hypernym" | "hypernyms" => Ok(LinkageType::Hypernym),
            "hyponym" | "hyponyms" => Ok(LinkageType::Hyponym),
            "meronym" | "meronyms" | "meronymy" => Ok(LinkageType::Meronym),
            "holonym" | "holonyms" | "holonymy" => Ok(LinkageType::Holonym),
            other => Err(format!("unknown linkage type {other:?}")),
        }
    }
}

/// Lowercases and joins whitespace-separated words with underscores.
pub fn normalize_term(term: &str) -> String {
    term.split_whitespace()
        .collect::<Vec<_>>()
        .join("_")
        .to_lowercase()
}

/// Renders a stored term as prompt text.
pub fn render_term(term: &str) -> String {
    term.replace('_', " ")
}

/// Linked terms of one sense of a seed term. Lists are sorted and unique.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LinkageSet {
    pub seed: String,
    pub sense: String,
    pub sense_gloss: String,
    pub synonyms: Vec<String>,
    pub antonyms: Vec<String>,
    pub hypernyms: Vec<String>,
    pub hyponyms: Vec<String>,
    pub meronyms: Vec<String>,
    pub holonyms: Vec<String>,
}

impl LinkageSet {
    pub fn new(seed: impl Into<String>) -> Self {
        Self {
            seed: seed.into(),
            ..Default::default()
        }
    }

    pub fn get(&self, kind: LinkageType) -> &[String] {
        match kind {
            LinkageType::Synonym => &self.synonyms,
            LinkageType::Antonym => &self.antonyms,
            LinkageType::Hypernym => &self.hypernyms,
            LinkageType::Hyponym => &self.hyponyms,
            LinkageType::Meronym => &self.meronyms,
            LinkageType::Holonym => &self.holonyms,
        }
    }

    fn get_mut(&mut self, kind: LinkageType) -> &mut Vec<String> {
        match kind {
            LinkageType::Synonym => &mut self.synonyms,
            LinkageType::Antonym => &mut self.antonyms,
            LinkageType::Hypernym => &mut self.hypernyms,
            LinkageType::Hyponym => &mut self.hyponyms,
            LinkageType::Meronym => &mut self.meronyms,
            LinkageType::Holonym => &mut self.holonyms,
        }
    }

    /// Replaces the list for `kind`, normalizing, sorting and deduplicating.
    pub fn with(mut self, kind: LinkageType, terms: &[&str]) -> Self {
        let set: BTreeSet<String> = terms
            .iter()
            .map(|t| normalize_term(t))
            .filter(|t| !t.is_empty())
            .collect();
        *self.get_mut(kind) = set.into_iter().collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PromptPlan {
    pub positive_prompts: Vec<String>,
    pub negative_prompts: Vec<String>,
    /// Terms that were dropped from the positive side because they also
    /// appear as antonyms.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl PromptPlan {
    /// Appends another plan, keeping first occurrences. A string present on
    /// the negative side is removed from the positive side.
    pub fn merge(&mut self, other: PromptPlan) {
        for p in other.positive_prompts {
            if !self.positive_prompts.contains(&p) {
                self.positive_prompts.push(p);
            }
        }
        for n in other.negative_prompts {
            if !self.negative_prompts.contains(&n) {
                self.negative_prompts.push(n);
            }
        }
        self.warnings.extend(other.warnings);
        self.resolve_conflicts();
    }

    fn resolve_conflicts(&mut self) {
        let negatives = &self.negative_prompts;
        let warnings = &mut self.warnings;
        self.positive_prompts.retain(|p| {
            let conflict = negatives.contains(p);
            if conflict {
                let w = format!("{p:?} appears as both a positive and a negative prompt; kept as negative");
                if !warnings.contains(&w) {
                    warnings.push(w);
                }
            }
            !conflict
        });
    }
}

/// Maps a linkage set to prompts: the seed and the selected positive
/// linkages become positive prompts, antonyms become negative prompts.
pub fn build_prompt_plan(set: &LinkageSet, include: &[LinkageType]) -> PromptPlan {
    let mut plan = PromptPlan::default();
    let push = |list: &mut Vec<String>, term: &str| {
        let rendered = render_term(term);
        if !rendered.is_empty() && !list.contains(&rendered) {
            list.push(rendered);
        }
    };
    push(&mut plan.positive_prompts, &set.seed);
    for kind in LinkageType::POSITIVE_ORDER {
        if include.contains(&kind) {
            for term in set.get(kind) {
                push(&mut plan.positive_prompts, term);
            }
        }
    }
    for term in &set.antonyms {
        push(&mut plan.negative_prompts, term);
    }
    plan.resolve_conflicts();
    plan
}

#[derive(Debug, Clone, Default)]
struct Sense {
    gloss: Option<String>,
    links: [BTreeSet<String>; 6],
}

/// Immutable in-memory lexicon keyed by term, then sense in file order.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    terms: IndexMap<String, IndexMap<String, Sense>>,
}

impl Lexicon {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, LexiconError> {
        let mut terms: IndexMap<String, IndexMap<String, Sense>> = IndexMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| LexiconError::ParseError { line, message };
            let trimmed = raw.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = trimmed.split('\t').collect();
            if cols.len() != 4 {
                return Err(err(format!("expected 4 tab-separated columns, found {}", cols.len())));
            }
            let seed = normalize_term(cols[0]);
            let sense_id = cols[1].trim();
            let kind = cols[2].trim();
            if seed.is_empty() {
                return Err(err("empty seed".into()));
            }
            if sense_id.is_empty() {
                return Err(err("empty sense id".into()));
            }
            let sense = terms
                .entry(seed)
                .or_default()
                .entry(sense_id.to_owned())
                .or_default();
            if kind.eq_ignore_ascii_case("gloss") {
                let gloss = cols[3].trim().to_owned();
                match &sense.gloss {
                    Some(existing) if *existing != gloss => {
                        return Err(err(format!("conflicting gloss for sense {sense_id:?}")));
                    }
                    _ => sense.gloss = Some(gloss),
                }
                continue;
            }
            let kind: LinkageType = kind.parse().map_err(err)?;
            let target = normalize_term(cols[3]);
            if target.is_empty() {
                return Err(err("empty target".into()));
            }
            sense.links[kind.slot()].insert(target);
        }
        if terms.is_empty() {
            return Err(LexiconError::EmptyLexicon);
        }
        Ok(Self { terms })
    }

    /// Number of distinct seed terms.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// One linkage set per sense of `term`, in file order. Only the
    /// requested linkage lists are populated. Unknown terms yield nothing.
    pub fn expand(&self, term: &str, kinds: &[LinkageType]) -> Vec<LinkageSet> {
        let seed = normalize_term(term);
        let Some(senses) = self.terms.get(&seed) else {
            return Vec::new();
        };
        senses
            .iter()
            .map(|(id, sense)| {
                let mut set = LinkageSet {
                    seed: seed.clone(),
                    sense: id.clone(),
                    sense_gloss: sense.gloss.clone().unwrap_or_default(),
                    ..Default::default()
                };
                for &kind in kinds {
                    *set.get_mut(kind) = sense.links[kind.slot()].iter().cloned().collect();
                }
                set
            })
            .collect()
    }
}
