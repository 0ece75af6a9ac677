//! Weak supervision from a knowledge store.
//!
//! Queries are matched against the gazetteer to produce BIO mention labels,
//! clicks are resolved through the URL map, and co-occurring entities are
//! checked against relation triples to produce E-R-E and T-R-E samples.

mod bio;
mod matcher;
mod samples;

pub use bio::{label_bio, spans_from_bio, validate_bio, BioTag, LabeledQuery};
pub use matcher::match_entities;
pub use samples::{
    cap_negatives, generate_ere_samples, generate_query_samples, generate_tre_samples,
    sample_row, type_words, RelationArg, RelationSample, SampleRow, Template, NONE_LABEL,
};

use crate::corpus::{KnowledgeStore, Session, TurnBody};
use crate::error::{Error, Result};

/// Picks the type with the highest instance count; ties go to the
/// lexicographically smallest label.
pub fn resolve_entity_type(candidates: &[(String, u64)]) -> Result<String> {
    candidates
        .iter()
        .min_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)))
        .map(|(t, _)| t.clone())
        .ok_or_else(|| Error::invalid("resolve_entity_type: no candidate types"))
}

/// Resolves a clicked URL to `(entity id, entity type)` by longest URL prefix.
pub fn map_click_to_entity(url: &str, store: &KnowledgeStore) -> Option<(String, String)> {
    let id = store.url_entity(url)?;
    match store.entity(id) {
        Some(e) => Some((e.id.clone(), e.entity_type.clone())),
        None => {
            log::warn!("url {url} maps to {id}, which is not in the gazetteer");
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistsupConfig {
    /// Shortest gazetteer name (in tokens) that may be matched.
    pub min_name_tokens: usize,
    /// NONE samples kept per positive sample, per template.
    pub none_multiple: f64,
    pub seed: u64,
}

impl Default for DistsupConfig {
    fn default() -> Self {
        DistsupConfig {
            min_name_tokens: 3,
            none_multiple: 5.0,
            seed: 42,
        }
    }
}

/// Distant labels for one session.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSession {
    /// `(turn index, labels)` for every query turn.
    pub queries: Vec<(usize, LabeledQuery)>,
    /// `(turn index, entity id, entity type)` for every mapped click.
    pub clicks: Vec<(usize, String, String)>,
    pub unmapped_clicks: usize,
    /// `(turn index, sample)`; NONE samples are not yet capped.
    pub samples: Vec<(usize, RelationSample)>,
}

impl LabeledSession {
    /// Entity id and type of every state, in session order.
    pub fn entity_sequence(&self) -> Vec<(String, String)> {
        let mut items: Vec<(usize, usize, String, String)> = Vec::new();
        for (turn, q) in &self.queries {
            for s in &q.spans {
                if let (Some(id), Some(ty)) = (&s.entity_id, &s.entity_type) {
                    items.push((*turn, s.start, id.clone(), ty.clone()));
                }
            }
        }
        for (turn, id, ty) in &self.clicks {
            items.push((*turn, 0, id.clone(), ty.clone()));
        }
        items.sort_by_key(|i| (i.0, i.1));
        items.into_iter().map(|(_, _, id, ty)| (id, ty)).collect()
    }
}

pub fn label_session(session: &Session, store: &KnowledgeStore, config: &DistsupConfig) -> LabeledSession {
    let mut out = LabeledSession {
        queries: Vec::new(),
        clicks: Vec::new(),
        unmapped_clicks: 0,
        samples: Vec::new(),
    };
    for turn in &session.turns {
        match &turn.body {
            TurnBody::Query(tokens) => {
                let spans = match_entities(tokens, store, config.min_name_tokens);
                let (ere, tre) = generate_query_samples(tokens, &spans, store);
                out.samples
                    .extend(ere.into_iter().chain(tre).map(|s| (turn.index, s)));
                let labeled = label_bio(tokens, &spans).expect("matcher spans never overlap");
                out.queries.push((turn.index, labeled));
            }
            TurnBody::Click(url) => match map_click_to_entity(url, store) {
                Some((id, ty)) => out.clicks.push((turn.index, id, ty)),
                None => out.unmapped_clicks += 1,
            },
        }
    }
    out
}

/// Matching statistics in the shape of a corpus summary table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchStats {
    pub sessions: usize,
    pub queries: usize,
    pub matched_queries: usize,
    pub urls: usize,
    pub matched_urls: usize,
    pub entity_mentions: usize,
    pub entity_types: std::collections::BTreeSet<String>,
    pub entities: std::collections::BTreeSet<String>,
    pub relation_types: std::collections::BTreeSet<String>,
    pub ere_positive: usize,
    pub tre_positive: usize,
}

impl MatchStats {
    pub fn add(&mut self, labeled: &LabeledSession) {
        self.sessions += 1;
        for (_, q) in &labeled.queries {
            self.queries += 1;
            if !q.spans.is_empty() {
                self.matched_queries += 1;
            }
            for s in &q.spans {
                self.entity_mentions += 1;
                self.entities.extend(s.entity_id.clone());
                self.entity_types.extend(s.entity_type.clone());
            }
        }
        self.urls += labeled.clicks.len() + labeled.unmapped_clicks;
        self.matched_urls += labeled.clicks.len();
        for (_, id, ty) in &labeled.clicks {
            self.entities.insert(id.clone());
            self.entity_types.insert(ty.clone());
        }
        for (_, s) in &labeled.samples {
            if s.is_positive() {
                self.relation_types.insert(s.label.clone());
                match s.template {
                    Template::Ere => self.ere_positive += 1,
                    Template::Tre => self.tre_positive += 1,
                }
            }
        }
    }

    pub fn query_match_fraction(&self) -> f64 {
        ratio(self.matched_queries, self.queries)
    }

    pub fn url_match_fraction(&self) -> f64 {
        ratio(self.matched_urls, self.urls)
    }

    /// Human-readable summary.
    pub fn report(&self) -> String {
        format!(
            "\tTotal\tMatched\tMatched %\n\
             Query\t{}\t{}\t{:.2}%\n\
             URL\t{}\t{}\t{:.2}%\n\n\
             sessions\t{}\n# Ent Type\t{}\n# Ent\t{}\n# Ent mentions\t{}\n# Rel Type\t{}\n# Rel (E-R-E)\t{}\n# Rel (T-R-E)\t{}\n",
            self.queries,
            self.matched_queries,
            100.0 * self.query_match_fraction(),
            self.urls,
            self.matched_urls,
            100.0 * self.url_match_fraction(),
            self.sessions,
            self.entity_types.len(),
            self.entities.len(),
            self.entity_mentions,
            self.relation_types.len(),
            self.ere_positive,
            self.tre_positive,
        )
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}
