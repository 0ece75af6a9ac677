use std::fmt;

use crate::corpus::{MentionSpan, Token};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BioTag {
    Begin,
    Inside,
    Outside,
}

impl BioTag {
    pub fn as_str(self) -> &'static str {
        match self {
            BioTag::Begin => "B-ENT",
            BioTag::Inside => "I-ENT",
            BioTag::Outside => "O",
        }
    }

    pub fn parse(s: &str) -> Option<BioTag> {
        match s {
            "B-ENT" => Some(BioTag::Begin),
            "I-ENT" => Some(BioTag::Inside),
            "O" => Some(BioTag::Outside),
            _ => None,
        }
    }
}

impl fmt::Display for BioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledQuery {
    pub tokens: Vec<Token>,
    pub bio: Vec<BioTag>,
    pub spans: Vec<MentionSpan>,
}

impl LabeledQuery {
    pub fn bio_strings(&self) -> Vec<String> {
        self.bio.iter().map(|t| t.as_str().to_owned()).collect()
    }
}

/// Encodes spans as BIO tags. Spans must be in bounds and disjoint.
pub fn label_bio(tokens: &[Token], spans: &[MentionSpan]) -> Result<LabeledQuery> {
    let mut bio = vec![BioTag::Outside; tokens.len()];
    let mut sorted: Vec<&MentionSpan> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    for pair in sorted.windows(2) {
        if pair[0].overlaps(pair[1]) {
            return Err(Error::invalid(format!(
                "overlapping spans [{}, {}) and [{}, {})",
                pair[0].start, pair[0].end, pair[1].start, pair[1].end
            )));
        }
    }
    for s in spans {
        if s.start >= s.end || s.end > tokens.len() {
            return Err(Error::invalid(format!(
                "span [{}, {}) out of bounds for {} tokens",
                s.start,
                s.end,
                tokens.len()
            )));
        }
        bio[s.start] = BioTag::Begin;
        for tag in &mut bio[s.start + 1..s.end] {
            *tag = BioTag::Inside;
        }
    }
    Ok(LabeledQuery {
        tokens: tokens.to_vec(),
        bio,
        spans: spans.to_vec(),
    })
}

/// No `I-ENT` at the start or after `O`.
pub fn validate_bio(tags: &[BioTag]) -> bool {
    let mut prev = BioTag::Outside;
    for &t in tags {
        if t == BioTag::Inside && prev == BioTag::Outside {
            return false;
        }
        prev = t;
    }
    true
}

/// Decodes a valid BIO sequence into untyped spans.
pub fn spans_from_bio(tags: &[BioTag]) -> Vec<MentionSpan> {
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &t) in tags.iter().enumerate() {
        match t {
            BioTag::Begin => {
                if let Some(s) = open.take() {
                    spans.push(MentionSpan::new(s, i));
                }
                open = Some(i);
            }
            BioTag::Inside => {
                if open.is_none() {
                    open = Some(i);
                }
            }
            BioTag::Outside => {
                if let Some(s) = open.take() {
                    spans.push(MentionSpan::new(s, i));
                }
            }
        }
    }
    if let Some(s) = open {
        spans.push(MentionSpan::new(s, tags.len()));
    }
    spans
}
