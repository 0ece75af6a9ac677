use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{KnowledgeStore, MentionSpan, Token};
use crate::error::Error;

/// Label of a sample that expresses no relation.
pub const NONE_LABEL: &str = "NONE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Template {
    /// Entity, relation, entity.
    Ere,
    /// Type word, relation, entity.
    Tre,
}

impl Template {
    pub fn as_str(self) -> &'static str {
        match self {
            Template::Ere => "ERE",
            Template::Tre => "TRE",
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Template {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_uppercase().replace('-', "").as_str() {
            "ERE" => Ok(Template::Ere),
            "TRE" => Ok(Template::Tre),
            _ => Err(Error::invalid(format!("unknown template {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RelationArg {
    Span(MentionSpan),
    /// A single token from the type lexicon, e.g. "movies" for `film`.
    TypeWord { position: usize, entity_type: String },
}

impl RelationArg {
    pub fn start(&self) -> usize {
        match self {
            RelationArg::Span(s) => s.start,
            RelationArg::TypeWord { position, .. } => *position,
        }
    }

    pub fn end(&self) -> usize {
        match self {
            RelationArg::Span(s) => s.end,
            RelationArg::TypeWord { position, .. } => position + 1,
        }
    }

    pub fn entity_type(&self) -> Option<&str> {
        match self {
            RelationArg::Span(s) => s.entity_type.as_deref(),
            RelationArg::TypeWord { entity_type, .. } => Some(entity_type),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationSample {
    pub tokens: Vec<Token>,
    pub template: Template,
    pub arg1: RelationArg,
    pub arg2: MentionSpan,
    pub label: String,
}

impl RelationSample {
    pub fn is_positive(&self) -> bool {
        self.label != NONE_LABEL
    }
}

/// One sample per unordered pair of id-carrying spans. The label is the
/// lexicographically first relation linking the two ids in either direction.
pub fn generate_ere_samples(
    tokens: &[Token],
    spans: &[MentionSpan],
    store: &KnowledgeStore,
) -> Vec<RelationSample> {
    let mut with_ids: Vec<&MentionSpan> = spans.iter().filter(|s| s.entity_id.is_some()).collect();
    with_ids.sort();
    let mut out = Vec::new();
    for i in 0..with_ids.len() {
        for j in i + 1..with_ids.len() {
            let (a, b) = (with_ids[i], with_ids[j]);
            let label = store
                .relations_between(a.entity_id.as_deref().unwrap(), b.entity_id.as_deref().unwrap())
                .first()
                .map_or(NONE_LABEL, |r| r)
                .to_owned();
            out.push(RelationSample {
                tokens: tokens.to_vec(),
                template: Template::Ere,
                arg1: RelationArg::Span(a.clone()),
                arg2: b.clone(),
                label,
            });
        }
    }
    out
}

/// Type-lexicon words outside every span.
pub fn type_words<'a>(
    tokens: &'a [Token],
    spans: &[MentionSpan],
    store: &'a KnowledgeStore,
) -> Vec<(usize, &'a str)> {
    tokens
        .iter()
        .enumerate()
        .filter(|(p, _)| !spans.iter().any(|s| s.contains(*p)))
        .filter_map(|(p, t)| store.type_of_word(&t.lower).map(|ty| (p, ty)))
        .collect()
}

/// One sample per `(span, type word)` pair among `candidates`.
///
/// The label is the relation `r` with the most triples `(e, r, e')` or
/// `(e', r, e)` where `e'` has the type named by the word; ties go to the
/// lexicographically smallest relation. `all_spans` masks type words that sit
/// inside any mention.
pub fn generate_tre_samples(
    tokens: &[Token],
    candidates: &[MentionSpan],
    all_spans: &[MentionSpan],
    store: &KnowledgeStore,
) -> Vec<RelationSample> {
    let words = type_words(tokens, all_spans, store);
    let mut out = Vec::new();
    for span in candidates {
        let Some(id) = span.entity_id.as_deref() else {
            continue;
        };
        for &(position, ty) in &words {
            let mut support: BTreeMap<&str, usize> = BTreeMap::new();
            for (rel, other) in store.neighbors(id) {
                if store.entity_type(other) == Some(ty) {
                    *support.entry(rel.as_str()).or_default() += 1;
                }
            }
            let mut best: Option<(&str, usize)> = None;
            for (rel, n) in support {
                if best.is_none_or(|(_, m)| n > m) {
                    best = Some((rel, n));
                }
            }
            out.push(RelationSample {
                tokens: tokens.to_vec(),
                template: Template::Tre,
                arg1: RelationArg::TypeWord {
                    position,
                    entity_type: ty.to_owned(),
                },
                arg2: span.clone(),
                label: best.map_or(NONE_LABEL, |(r, _)| r).to_owned(),
            });
        }
    }
    out
}

/// E-R-E samples, then T-R-E samples over spans not used by a positive E-R-E
/// pair.
pub fn generate_query_samples(
    tokens: &[Token],
    spans: &[MentionSpan],
    store: &KnowledgeStore,
) -> (Vec<RelationSample>, Vec<RelationSample>) {
    let ere = generate_ere_samples(tokens, spans, store);
    let consumed: Vec<&MentionSpan> = ere
        .iter()
        .filter(|s| s.is_positive())
        .flat_map(|s| match &s.arg1 {
            RelationArg::Span(a) => vec![a, &s.arg2],
            RelationArg::TypeWord { .. } => vec![&s.arg2],
        })
        .collect();
    let remaining: Vec<MentionSpan> = spans
        .iter()
        .filter(|s| !consumed.contains(s))
        .cloned()
        .collect();
    let tre = generate_tre_samples(tokens, &remaining, spans, store);
    (ere, tre)
}

/// Keeps every positive and at most `multiple × positives` NONE samples per
/// template, chosen by a seeded draw. Relative order is preserved.
pub fn cap_negatives<T>(
    items: Vec<T>,
    sample: impl Fn(&T) -> &RelationSample,
    multiple: f64,
    seed: u64,
) -> Vec<T> {
    let mut keep = vec![true; items.len()];
    for template in [Template::Ere, Template::Tre] {
        let of_template: Vec<usize> = (0..items.len())
            .filter(|&i| sample(&items[i]).template == template)
            .collect();
        let positives = of_template
            .iter()
            .filter(|&&i| sample(&items[i]).is_positive())
            .count();
        let negatives: Vec<usize> = of_template
            .iter()
            .copied()
            .filter(|&i| !sample(&items[i]).is_positive())
            .collect();
        let cap = (multiple.max(0.0) * positives as f64).floor() as usize;
        if negatives.len() <= cap {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ template as u64);
        negatives.iter().for_each(|&i| keep[i] = false);
        for k in index::sample(&mut rng, negatives.len(), cap) {
            keep[negatives[k]] = true;
        }
    }
    items
        .into_iter()
        .zip(keep)
        .filter_map(|(it, k)| k.then_some(it))
        .collect()
}

/// One row of the relation-sample TSV:
/// `session_id \t turn \t template \t a1_start \t a1_end \t a2_start \t a2_end \t label`.
pub fn sample_row(session_id: &str, turn: usize, sample: &RelationSample) -> String {
    format!(
        "{session_id}\t{turn}\t{}\t{}\t{}\t{}\t{}\t{}",
        sample.template,
        sample.arg1.start(),
        sample.arg1.end(),
        sample.arg2.start,
        sample.arg2.end,
        sample.label
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRow {
    pub session_id: String,
    pub turn: usize,
    pub template: Template,
    pub arg1: (usize, usize),
    pub arg2: (usize, usize),
    pub label: String,
}

impl SampleRow {
    pub fn parse(line_no: usize, line: &str) -> Result<Self, Error> {
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != 8 {
            return Err(Error::parse(line_no, format!("expected 8 columns, found {}", cells.len())));
        }
        let num = |i: usize| {
            cells[i]
                .parse::<usize>()
                .map_err(|_| Error::parse(line_no, format!("column {}: bad index {:?}", i + 1, cells[i])))
        };
        Ok(SampleRow {
            session_id: cells[0].to_owned(),
            turn: num(1)?,
            template: cells[2].parse().map_err(|e: Error| Error::parse(line_no, e.to_string()))?,
            arg1: (num(3)?, num(4)?),
            arg2: (num(5)?, num(6)?),
            label: cells[7].to_owned(),
        })
    }

    /// Rebuilds the sample over the query's tokens. Span ids and types come
    /// from the gazetteer; a T-R-E type word must be in the type lexicon.
    pub fn resolve(&self, tokens: &[Token], store: &KnowledgeStore) -> Result<RelationSample, Error> {
        let n = tokens.len();
        let in_bounds = |(a, b): (usize, usize)| a < b && b <= n;
        if !in_bounds(self.arg1) || !in_bounds(self.arg2) {
            return Err(Error::invalid(format!(
                "sample {}:{}: argument out of bounds for a {n}-token query",
                self.session_id, self.turn
            )));
        }
        let span = |(a, b): (usize, usize)| {
            let words: Vec<String> = tokens[a..b].iter().map(|t| t.lower.clone()).collect();
            let rec = store.lookup_name(&words);
            MentionSpan {
                start: a,
                end: b,
                entity_id: rec.map(|r| r.id.clone()),
                entity_type: rec.map(|r| r.entity_type.clone()),
            }
        };
        let arg1 = match self.template {
            Template::Ere => RelationArg::Span(span(self.arg1)),
            Template::Tre => {
                let word = &tokens[self.arg1.0].lower;
                let entity_type = store.type_of_word(word).ok_or_else(|| {
                    Error::invalid(format!(
                        "sample {}:{}: {word:?} is not in the type lexicon",
                        self.session_id, self.turn
                    ))
                })?;
                RelationArg::TypeWord {
                    position: self.arg1.0,
                    entity_type: entity_type.to_owned(),
                }
            }
        };
        Ok(RelationSample {
            tokens: tokens.to_vec(),
            template: self.template,
            arg1,
            arg2: span(self.arg2),
            label: self.label.clone(),
        })
    }
}
