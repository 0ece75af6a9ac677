//! Session-level entity typing.
//!
//! Every query mention and every mapped click in a session becomes one state
//! of a linear chain, and a CRF labels the whole chain with entity types.
//! Mentions without a known type are hidden states: either dropped before
//! training or marginalized out.

use crate::corpus::{KnowledgeStore, MentionSpan, Session, Token, TurnBody, NONE_TAG};
use crate::crf::{self, CrfConfig, CrfModel, MaskKind, TrainMode, TrainReport, TrainingSequence};
use crate::distsup::map_click_to_entity;
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::text;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StateSource {
    QueryMention(MentionSpan),
    Click(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityState {
    pub source: StateSource,
    pub turn_index: usize,
    pub entity_id: Option<String>,
    /// Known type, or `None` for a hidden state.
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EntityStateSequence {
    pub session_id: String,
    pub states: Vec<EntityState>,
}

impl EntityStateSequence {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn hidden_count(&self) -> usize {
        self.states.iter().filter(|s| s.label.is_none()).count()
    }

    /// The sequence with hidden states removed.
    pub fn drop_hidden(&self) -> Self {
        EntityStateSequence {
            session_id: self.session_id.clone(),
            states: self.states.iter().filter(|s| s.label.is_some()).cloned().collect(),
        }
    }

    pub fn labels(&self) -> Vec<Option<String>> {
        self.states.iter().map(|s| s.label.clone()).collect()
    }
}

/// One state per mention (ordered by turn, then span start) and one per click
/// whose URL resolves to a gazetteer entity.
///
/// `spans` holds `(turn index, spans)` for query turns; a span's own type, if
/// any, becomes the state's observed label.
pub fn build_state_sequence(
    session: &Session,
    spans: &[(usize, Vec<MentionSpan>)],
    store: &KnowledgeStore,
) -> EntityStateSequence {
    let mut states = Vec::new();
    for turn in &session.turns {
        match &turn.body {
            TurnBody::Query(_) => {
                let mut here: Vec<&MentionSpan> = spans
                    .iter()
                    .filter(|(i, _)| *i == turn.index)
                    .flat_map(|(_, s)| s)
                    .collect();
                here.sort_by_key(|s| (s.start, s.end));
                for s in here {
                    states.push(EntityState {
                        source: StateSource::QueryMention(s.clone()),
                        turn_index: turn.index,
                        entity_id: s.entity_id.clone(),
                        label: s.entity_type.clone(),
                    });
                }
            }
            TurnBody::Click(url) => {
                if let Some((id, ty)) = map_click_to_entity(url, store) {
                    states.push(EntityState {
                        source: StateSource::Click(url.clone()),
                        turn_index: turn.index,
                        entity_id: Some(id),
                        label: Some(ty),
                    });
                }
            }
        }
    }
    EntityStateSequence {
        session_id: session.id.clone(),
        states,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TyperFeatureConfig {
    /// Longest context n-gram on each side of a mention.
    pub context_n: usize,
    /// Neighbor states used in conjunctions (0 disables them).
    pub neighbor_window: usize,
}

impl Default for TyperFeatureConfig {
    fn default() -> Self {
        TyperFeatureConfig {
            context_n: 3,
            neighbor_window: 2,
        }
    }
}

fn query_of(session: &Session, turn_index: usize) -> Result<&[Token]> {
    session
        .turns
        .get(turn_index)
        .and_then(|t| t.tokens())
        .ok_or_else(|| Error::invalid(format!("session {}: turn {turn_index} is not a query", session.id)))
}

/// Low-cardinality per-state values reused in neighbor conjunctions.
fn coarse(session: &Session, state: &EntityState, store: &KnowledgeStore) -> Result<Vec<(&'static str, String)>> {
    let flag = |b: bool| if b { "1" } else { "0" }.to_owned();
    Ok(match &state.source {
        StateSource::QueryMention(span) => {
            let toks = &query_of(session, state.turn_index)?[span.start..span.end];
            let mut ner: Vec<&str> = toks.iter().map(|t| t.ner.as_str()).collect();
            ner.dedup();
            let cap = toks.iter().any(|t| t.surface.chars().next().is_some_and(char::is_uppercase));
            let lower: Vec<String> = toks.iter().map(|t| t.lower.clone()).collect();
            vec![
                ("src", "Q".to_owned()),
                ("ner", ner.join("_")),
                ("cap", flag(cap)),
                ("ntok", toks.len().min(5).to_string()),
                ("gaz", flag(store.lookup_name(&lower).is_some())),
            ]
        }
        StateSource::Click(_) => vec![
            ("src", "C".to_owned()),
            ("ner", NONE_TAG.to_owned()),
            ("cap", NONE_TAG.to_owned()),
            ("ntok", NONE_TAG.to_owned()),
            ("gaz", NONE_TAG.to_owned()),
        ],
    })
}

fn context_features(feats: &mut Vec<String>, tokens: &[Token], span: &MentionSpan, n_max: usize) {
    for n in 1..=n_max {
        let left = (span.start >= n).then(|| &tokens[span.start - n..span.start]);
        let right = (span.end + n <= tokens.len()).then(|| &tokens[span.end..span.end + n]);
        for (side, toks) in [("l", left), ("r", right)] {
            let (words, pos) = match toks {
                Some(t) => (
                    t.iter().map(|x| x.lower.as_str()).collect::<Vec<_>>().join(" "),
                    t.iter().map(|x| x.pos.as_str()).collect::<Vec<_>>().join(" "),
                ),
                None => (NONE_TAG.to_owned(), NONE_TAG.to_owned()),
            };
            feats.push(format!("{side}ctx{n}={words}"));
            feats.push(format!("{side}pos{n}={pos}"));
        }
    }
}

/// Sparse feature names per state.
pub fn extract_typer_features(
    session: &Session,
    states: &EntityStateSequence,
    store: &KnowledgeStore,
    config: &TyperFeatureConfig,
) -> Result<Vec<Vec<String>>> {
    let coarse_vals: Vec<Vec<(&str, String)>> = states
        .states
        .iter()
        .map(|s| coarse(session, s, store))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(states.len());
    for (i, state) in states.states.iter().enumerate() {
        let mut feats = vec!["bias".to_owned()];
        feats.extend(coarse_vals[i].iter().map(|(k, v)| format!("{k}={v}")));
        match &state.source {
            StateSource::QueryMention(span) => {
                let tokens = query_of(session, state.turn_index)?;
                let words: Vec<&str> = tokens[span.start..span.end].iter().map(|t| t.lower.as_str()).collect();
                for w in &words {
                    feats.push(format!("mw={w}"));
                }
                feats.push(format!("mtext={}", words.join(" ")));
                feats.push(format!("dom={NONE_TAG}"));
                context_features(&mut feats, tokens, span, config.context_n);
            }
            StateSource::Click(url) => {
                feats.push(format!("dom={}", text::url_domain(url)));
                let path = text::normalize_url(url);
                let head = path.split('/').nth(1).filter(|s| !s.is_empty()).unwrap_or(NONE_TAG);
                feats.push(format!("upath={head}"));
            }
        }
        let w = config.neighbor_window;
        for (k, (name, _)) in coarse_vals[i].iter().enumerate() {
            let at = |o: usize| -> &str {
                if o > i { "PAD" } else { &coarse_vals[i - o][k].1 }
            };
            for o in 1..=w {
                feats.push(format!("{name}[-{o}]={}", at(o)));
            }
            for order in 2..=(w + 1).min(3) {
                let vals: Vec<&str> = (0..order).rev().map(at).collect();
                feats.push(format!("{name}[-{}..0]={}", order - 1, vals.join(":")));
            }
        }
        out.push(feats);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TyperMode {
    /// Remove hidden states and splice their neighbors.
    Drop,
    /// Keep hidden states and marginalize over their labels.
    Marginal,
}

/// A session with its state chain.
#[derive(Debug, Clone, PartialEq)]
pub struct TyperExample<'a> {
    pub session: &'a Session,
    pub states: EntityStateSequence,
}

pub fn training_sequences(
    examples: &[TyperExample<'_>],
    mode: TyperMode,
    store: &KnowledgeStore,
    config: &TyperFeatureConfig,
    exec: Execution,
) -> Result<Vec<TrainingSequence>> {
    let seqs: Vec<Result<Option<TrainingSequence>>> = par::map(exec, examples, |ex| {
        let states = match mode {
            TyperMode::Drop => ex.states.drop_hidden(),
            TyperMode::Marginal => ex.states.clone(),
        };
        if states.is_empty() {
            return Ok(None);
        }
        let features = extract_typer_features(ex.session, &states, store, config)?;
        Ok(Some(TrainingSequence {
            features,
            labels: states.labels(),
        }))
    });
    let mut out = Vec::new();
    for s in seqs {
        out.extend(s?);
    }
    Ok(out)
}

pub fn train_typer(
    examples: &[TyperExample<'_>],
    mode: TyperMode,
    store: &KnowledgeStore,
    features: &TyperFeatureConfig,
    crf_config: &CrfConfig,
) -> Result<(CrfModel, TrainReport)> {
    let data = training_sequences(examples, mode, store, features, crf_config.exec)?;
    if !data.iter().any(|s| s.labels.iter().any(Option::is_some)) {
        return Err(Error::invalid("no observed entity types in training sessions"));
    }
    let config = CrfConfig {
        mask: MaskKind::Full,
        ..crf_config.clone()
    };
    let train_mode = match mode {
        TyperMode::Drop => TrainMode::Observed,
        TyperMode::Marginal => TrainMode::Marginal,
    };
    crf::train(&data, train_mode, &config)
}

/// Jointly decodes every state of the session; known labels are not clamped.
pub fn predict_types(
    model: &CrfModel,
    session: &Session,
    states: &EntityStateSequence,
    store: &KnowledgeStore,
    config: &TyperFeatureConfig,
) -> Result<Vec<String>> {
    if states.is_empty() {
        return Ok(Vec::new());
    }
    let features = extract_typer_features(session, states, store, config)?;
    let (path, _) = crf::viterbi(&model.observe(&features), model)?;
    Ok(model.label_names(&path))
}
