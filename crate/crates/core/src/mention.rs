//! Entity mention identification as BIO tagging.
//!
//! Each token gets atomic features (word, shape, annotation tags, gazetteer
//! membership and the session repeat indicator) at every window offset, plus
//! bigram and trigram conjunctions of the same feature ending at the token.

use std::collections::HashSet;

use crate::corpus::{KnowledgeStore, MentionSpan, Session, Token};
use crate::crf::{self, CrfConfig, CrfModel, MaskKind, TrainMode, TrainReport, TrainingSequence};
use crate::error::{Error, Result};
use crate::par::{self, Execution};

pub const PAD: &str = "PAD";
pub const OUTSIDE: &str = "O";
pub const UNTYPED: &str = "ENT";

#[derive(Debug, Clone, PartialEq)]
pub struct MentionFeatureConfig {
    /// Offsets `-window..=window` around each token.
    pub window: usize,
    /// Highest conjunction order (1 disables conjunctions).
    pub max_ngram: usize,
    /// Number of earlier query turns inspected for repeats.
    pub repeat_window: usize,
    /// An n-gram is repeated when it occurs in more than this many queries.
    pub repeat_threshold: usize,
    /// Session repeat features on or off.
    pub session_context: bool,
    /// Shortest gazetteer name for the gazetteer feature.
    pub gazetteer_min_tokens: usize,
}

impl Default for MentionFeatureConfig {
    fn default() -> Self {
        MentionFeatureConfig {
            window: 2,
            max_ngram: 3,
            repeat_window: 5,
            repeat_threshold: 2,
            session_context: true,
            gazetteer_min_tokens: 1,
        }
    }
}

impl MentionFeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeat_window == 0 {
            return Err(Error::invalid("repeat_window must be at least 1"));
        }
        if self.max_ngram == 0 || self.gazetteer_min_tokens == 0 {
            return Err(Error::invalid("max_ngram and gazetteer_min_tokens must be at least 1"));
        }
        Ok(())
    }
}

fn ngrams(tokens: &[Token], max_n: usize) -> HashSet<Vec<&str>> {
    let mut out = HashSet::new();
    for n in 1..=max_n.min(tokens.len()) {
        for w in tokens.windows(n) {
            out.insert(w.iter().map(|t| t.lower.as_str()).collect());
        }
    }
    out
}

/// Per token: whether an n-gram (n ≤ 3) covering it occurs in more than
/// `repeat_threshold` of the recent queries, counting the current one.
pub fn repeat_flags(session: &Session, turn_index: usize, config: &MentionFeatureConfig) -> Result<Vec<bool>> {
    let tokens = query_tokens(session, turn_index)?;
    let earlier: Vec<&[Token]> = session
        .queries()
        .filter(|(i, _)| *i < turn_index)
        .map(|(_, t)| t)
        .collect();
    let recent = &earlier[earlier.len().saturating_sub(config.repeat_window)..];
    let sets: Vec<HashSet<Vec<&str>>> = recent.iter().map(|t| ngrams(t, 3)).collect();
    let mut flags = vec![false; tokens.len()];
    for n in 1..=3.min(tokens.len()) {
        for start in 0..=tokens.len() - n {
            let gram: Vec<&str> = tokens[start..start + n].iter().map(|t| t.lower.as_str()).collect();
            let count = 1 + sets.iter().filter(|s| s.contains(&gram)).count();
            if count > config.repeat_threshold {
                flags[start..start + n].iter_mut().for_each(|f| *f = true);
            }
        }
    }
    Ok(flags)
}

/// Per token: the type of the longest gazetteer name covering it, if any.
/// Every match counts, overlapping or not.
pub fn gazetteer_cover(tokens: &[Token], store: &KnowledgeStore, min_tokens: usize) -> Vec<Option<String>> {
    let lower: Vec<String> = tokens.iter().map(|t| t.lower.clone()).collect();
    let mut best: Vec<Option<(usize, String)>> = vec![None; tokens.len()];
    let max_len = store.max_name_len().min(lower.len());
    for start in 0..lower.len() {
        for len in min_tokens.max(1)..=max_len.min(lower.len() - start) {
            if let Some(e) = store.lookup_name(&lower[start..start + len]) {
                for slot in &mut best[start..start + len] {
                    if slot.as_ref().is_none_or(|(l, _)| len > *l) {
                        *slot = Some((len, e.entity_type.clone()));
                    }
                }
            }
        }
    }
    best.into_iter().map(|b| b.map(|(_, t)| t)).collect()
}

fn query_tokens(session: &Session, turn_index: usize) -> Result<&[Token]> {
    let turn = session
        .turns
        .get(turn_index)
        .ok_or_else(|| Error::invalid(format!("session {}: no turn {turn_index}", session.id)))?;
    turn.tokens()
        .ok_or_else(|| Error::invalid(format!("session {}: turn {turn_index} is a click", session.id)))
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_owned()
}

fn shape_values(tok: &Token) -> [(&'static str, String); 7] {
    let cap = tok.surface.chars().next().is_some_and(char::is_uppercase);
    let num = tok.surface.chars().any(|c| c.is_numeric());
    let nonalpha = tok.surface.chars().any(|c| !c.is_alphabetic());
    [
        ("w", tok.lower.clone()),
        ("cap", flag(cap)),
        ("num", flag(num)),
        ("nonalpha", flag(nonalpha)),
        ("pos", tok.pos.clone()),
        ("ner", tok.ner.clone()),
        ("dep", tok.dep.clone()),
    ]
}

/// Sparse feature names for every token of a query turn.
pub fn extract_mention_features(
    session: &Session,
    turn_index: usize,
    config: &MentionFeatureConfig,
    store: &KnowledgeStore,
) -> Result<Vec<Vec<String>>> {
    config.validate()?;
    let tokens = query_tokens(session, turn_index)?;
    let gaz = gazetteer_cover(tokens, store, config.gazetteer_min_tokens);
    let rep = if config.session_context {
        Some(repeat_flags(session, turn_index, config)?)
    } else {
        None
    };

    // kind -> value per position
    let mut kinds: Vec<(&'static str, Vec<String>)> = Vec::new();
    for (k, (name, _)) in shape_values(&tokens[0]).iter().enumerate() {
        let vals = tokens.iter().map(|t| shape_values(t)[k].1.clone()).collect();
        kinds.push((name, vals));
    }
    kinds.push(("gaz", gaz.iter().map(|g| flag(g.is_some())).collect()));
    kinds.push((
        "gaztype",
        gaz.iter().map(|g| g.clone().unwrap_or_else(|| crate::corpus::NONE_TAG.to_owned())).collect(),
    ));
    if let Some(rep) = &rep {
        kinds.push(("rep", rep.iter().map(|&r| flag(r)).collect()));
    }

    let w = config.window as isize;
    let n = tokens.len() as isize;
    let out = (0..n)
        .map(|t| {
            let mut feats = vec!["bias".to_owned()];
            for (name, vals) in &kinds {
                let at = |o: isize| -> &str {
                    let p = t + o;
                    if p < 0 || p >= n { PAD } else { &vals[p as usize] }
                };
                for o in -w..=w {
                    feats.push(format!("{name}[{o}]={}", at(o)));
                }
                for order in 2..=config.max_ngram {
                    let order = order as isize;
                    for end in (-w + order - 1)..=0 {
                        let key: Vec<String> = (end - order + 1..=end).map(|o| o.to_string()).collect();
                        let val: Vec<&str> = (end - order + 1..=end).map(at).collect();
                        feats.push(format!("{name}[{}]={}", key.join(":"), val.join(":")));
                    }
                }
            }
            feats
        })
        .collect();
    Ok(out)
}

/// BIO label strings for `spans` over `len` tokens. With `typed`, labels are
/// `B-<type>`/`I-<type>`; otherwise `B-ENT`/`I-ENT`.
pub fn bio_labels(len: usize, spans: &[MentionSpan], typed: bool) -> Result<Vec<String>> {
    let mut labels = vec![OUTSIDE.to_owned(); len];
    let mut sorted: Vec<&MentionSpan> = spans.iter().collect();
    sorted.sort();
    for (i, s) in sorted.iter().enumerate() {
        if s.start >= s.end || s.end > len {
            return Err(Error::invalid(format!("span [{}, {}) out of bounds", s.start, s.end)));
        }
        if i > 0 && sorted[i - 1].end > s.start {
            return Err(Error::invalid("overlapping spans"));
        }
        let ty = if typed {
            s.entity_type
                .as_deref()
                .ok_or_else(|| Error::invalid("typed labels need typed spans"))?
        } else {
            UNTYPED
        };
        labels[s.start] = format!("B-{ty}");
        for l in &mut labels[s.start + 1..s.end] {
            *l = format!("I-{ty}");
        }
    }
    Ok(labels)
}

/// Reads spans back from BIO strings. `B-ENT` spans are untyped; other
/// suffixes become the span type. Stray `I-` labels open a new span.
pub fn spans_from_labels(labels: &[String]) -> Vec<MentionSpan> {
    let mut spans: Vec<MentionSpan> = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    let close = |spans: &mut Vec<MentionSpan>, open: Option<(usize, &str)>, end: usize| {
        if let Some((start, ty)) = open {
            let mut s = MentionSpan::new(start, end);
            if ty != UNTYPED {
                s.entity_type = Some(ty.to_owned());
            }
            spans.push(s);
        }
    };
    for (i, l) in labels.iter().enumerate() {
        if let Some(ty) = l.strip_prefix("B-") {
            close(&mut spans, open.take(), i);
            open = Some((i, ty));
        } else if let Some(ty) = l.strip_prefix("I-") {
            if open.is_none_or(|(_, t)| t != ty) {
                close(&mut spans, open.take(), i);
                open = Some((i, ty));
            }
        } else {
            close(&mut spans, open.take(), i);
        }
    }
    close(&mut spans, open, labels.len());
    spans
}

/// A query turn with its gold or distant spans.
#[derive(Debug, Clone, PartialEq)]
pub struct MentionExample<'a> {
    pub session: &'a Session,
    pub turn: usize,
    pub spans: Vec<MentionSpan>,
}

pub fn build_training_set(
    examples: &[MentionExample<'_>],
    config: &MentionFeatureConfig,
    store: &KnowledgeStore,
    typed: bool,
    exec: Execution,
) -> Result<Vec<TrainingSequence>> {
    par::map(exec, examples, |ex| {
        let features = extract_mention_features(ex.session, ex.turn, config, store)?;
        let labels = bio_labels(features.len(), &ex.spans, typed)?;
        Ok(TrainingSequence::labeled(features, labels))
    })
    .into_iter()
    .collect()
}

/// Trains a BIO tagger. Untyped training fixes the label set to
/// `O, B-ENT, I-ENT`.
pub fn train_mention(data: &[TrainingSequence], typed: bool, crf: &CrfConfig) -> Result<(CrfModel, TrainReport)> {
    let labels = (!typed).then(|| vec![OUTSIDE.to_owned(), "B-ENT".to_owned(), "I-ENT".to_owned()]);
    let config = CrfConfig {
        mask: MaskKind::Bio,
        labels: labels.or_else(|| crf.labels.clone()),
        ..crf.clone()
    };
    crf::train(data, TrainMode::Observed, &config)
}

/// Viterbi decode of one query turn into sorted, disjoint spans.
pub fn tag_query(
    model: &CrfModel,
    session: &Session,
    turn_index: usize,
    config: &MentionFeatureConfig,
    store: &KnowledgeStore,
) -> Result<Vec<MentionSpan>> {
    let features = extract_mention_features(session, turn_index, config, store)?;
    let (path, _) = crf::viterbi(&model.observe(&features), model)?;
    Ok(spans_from_labels(&model.label_names(&path)))
}

/// Tags every query turn of a session: `(turn index, spans)`.
pub fn tag_session(
    model: &CrfModel,
    session: &Session,
    config: &MentionFeatureConfig,
    store: &KnowledgeStore,
) -> Result<Vec<(usize, Vec<MentionSpan>)>> {
    session
        .queries()
        .map(|(i, _)| Ok((i, tag_query(model, session, i, config, store)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TurnBody;
    use crate::crf::{Alphabet, TransitionMask};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn q(text: &str) -> TurnBody {
        TurnBody::Query(Token::tokenize(text))
    }

    fn c(url: &str) -> TurnBody {
        TurnBody::Click(url.to_owned())
    }

    fn fig1() -> Session {
        Session::new(
            "s1",
            vec![
                q("the great gatsby 2013"),
                c("www.imdb.com/title/tt1343092/"),
                q("movies by leonardo dicaprio"),
                c("www.imdb.com/name/nm0000138/"),
                q("titanic"),
                c("www.imdb.com/title/tt0120338/"),
                c("http://www.imdb.com/character/ch0002338/"),
                q("does leonardo dicaprio have an award"),
            ],
        )
    }

    fn has(feats: &[String], f: &str) -> bool {
        feats.iter().any(|x| x == f)
    }

    #[test]
    fn repeat_threshold_reading() {
        let s = fig1();
        let strict = MentionFeatureConfig::default();
        let flags = repeat_flags(&s, 7, &strict).unwrap();
        assert_eq!(flags, vec![false; 6]);
        let loose = MentionFeatureConfig {
            repeat_threshold: 1,
            ..strict.clone()
        };
        let flags = repeat_flags(&s, 7, &loose).unwrap();
        assert_eq!(flags, vec![false, true, true, false, false, false]);
        // later turns never feed earlier ones
        assert_eq!(repeat_flags(&s, 2, &loose).unwrap(), vec![false; 4]);
    }

    #[test]
    fn single_token_padding() {
        let s = Session::new("s", vec![q("titanic")]);
        let f = extract_mention_features(&s, 0, &MentionFeatureConfig::default(), &KnowledgeStore::default()).unwrap();
        for o in [-2, -1, 1, 2] {
            assert!(has(&f[0], &format!("w[{o}]=PAD")));
        }
        assert!(has(&f[0], "w[0]=titanic"));
        assert!(has(&f[0], "w[-2:-1:0]=PAD:PAD:titanic"));
        assert!(has(&f[0], "w[-1:0]=PAD:titanic"));
    }

    #[test]
    fn gazetteer_feature_covers_name() {
        let store = KnowledgeStore::builder()
            .gazetteer_row("the great gatsby", "film", "e1", 10)
            .build()
            .unwrap();
        let s = Session::new("s", vec![q("search for the great gatsby")]);
        let f = extract_mention_features(&s, 0, &MentionFeatureConfig::default(), &store).unwrap();
        for (t, feats) in f.iter().enumerate() {
            assert_eq!(has(feats, "gaz[0]=1"), t >= 2, "token {t}");
        }
        assert!(has(&f[2], "gaztype[0]=film"));
    }

    #[test]
    fn shape_features() {
        let s = Session::new("s", vec![q("Gatsby 2013 r&b")]);
        let f = extract_mention_features(&s, 0, &MentionFeatureConfig::default(), &KnowledgeStore::default()).unwrap();
        assert!(has(&f[0], "cap[0]=1") && has(&f[0], "w[0]=gatsby"));
        assert!(has(&f[1], "num[0]=1") && has(&f[1], "nonalpha[0]=1"));
        assert!(has(&f[2], "nonalpha[0]=1") && has(&f[2], "num[0]=0"));
        assert!(has(&f[0], "pos[0]=NONE"));
    }

    #[test]
    fn click_turn_is_an_error() {
        let s = fig1();
        assert!(extract_mention_features(&s, 1, &MentionFeatureConfig::default(), &KnowledgeStore::default()).is_err());
    }

    #[test]
    fn session_context_off_drops_repeat() {
        let cfg = MentionFeatureConfig {
            session_context: false,
            ..MentionFeatureConfig::default()
        };
        let f = extract_mention_features(&fig1(), 7, &cfg, &KnowledgeStore::default()).unwrap();
        assert!(f.iter().flatten().all(|x| !x.starts_with("rep")));
    }

    #[test]
    fn labels_round_trip() {
        let spans = vec![MentionSpan::typed(2, 5, "film"), MentionSpan::typed(0, 1, "actor")];
        let l = bio_labels(6, &spans, false).unwrap();
        assert_eq!(l, ["B-ENT", "O", "B-ENT", "I-ENT", "I-ENT", "O"]);
        assert_eq!(spans_from_labels(&l), vec![MentionSpan::new(0, 1), MentionSpan::new(2, 5)]);
        let l = bio_labels(6, &spans, true).unwrap();
        assert_eq!(l[2], "B-film");
        let mut sorted = spans.clone();
        sorted.sort();
        assert_eq!(spans_from_labels(&l), sorted);
        assert!(bio_labels(6, &[MentionSpan::new(0, 2), MentionSpan::new(1, 3)], false).is_err());
        assert!(spans_from_labels(&vec!["O".to_owned(); 3]).is_empty());
    }

    #[test]
    fn toy_training_recovers_known_entity() {
        let texts = ["find zorb quill", "zorb quill tickets", "show me zorb quill now", "find tickets"];
        let sessions: Vec<Session> = texts
            .iter()
            .map(|t| Session::new("s", vec![q(t)]))
            .collect();
        let span_of = |t: &str| -> Vec<MentionSpan> {
            let toks: Vec<&str> = t.split(' ').collect();
            toks.iter()
                .position(|w| *w == "zorb")
                .map(|p| vec![MentionSpan::new(p, p + 2)])
                .unwrap_or_default()
        };
        let examples: Vec<MentionExample> = sessions
            .iter()
            .zip(texts)
            .map(|(s, t)| MentionExample {
                session: s,
                turn: 0,
                spans: span_of(t),
            })
            .collect();
        let cfg = MentionFeatureConfig::default();
        let store = KnowledgeStore::default();
        let data = build_training_set(&examples, &cfg, &store, false, Execution::Sequential).unwrap();
        let (model, _) = train_mention(&data, false, &CrfConfig::default()).unwrap();
        let test = Session::new("t", vec![q("find zorb quill")]);
        assert_eq!(tag_query(&model, &test, 0, &cfg, &store).unwrap(), vec![MentionSpan::new(1, 3)]);
        let test = Session::new("t", vec![q("find tickets")]);
        assert!(tag_query(&model, &test, 0, &cfg, &store).unwrap().is_empty());
    }

    #[test]
    fn random_models_never_decode_invalid_bio() {
        let labels = Alphabet::from_names(["O", "B-ENT", "I-ENT"]);
        let mask = TransitionMask::bio(&labels);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let feats = Alphabet::from_names((0..8).map(|i| format!("f{i}")));
        for _ in 0..10_000 {
            let mut m = CrfModel::new(labels.clone(), feats.clone(), mask.clone());
            for w in m.weights_mut() {
                *w = rng.random_range(-3.0..3.0);
            }
            let t = rng.random_range(1..8);
            let obs: Vec<Vec<usize>> = (0..t).map(|_| vec![rng.random_range(0..8)]).collect();
            let (path, _) = crf::viterbi(&crate::crf::ObservationSequence::unlabeled(obs), &m).unwrap();
            for (i, &y) in path.iter().enumerate() {
                if y == 2 {
                    assert!(i > 0 && path[i - 1] != 0);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn features_are_causal(extra in "[a-c]{1,3}( [a-c]{1,3}){0,3}") {
            let cfg = MentionFeatureConfig { repeat_threshold: 1, ..MentionFeatureConfig::default() };
            let base = fig1();
            let mut longer = base.clone();
            longer.turns.push(crate::corpus::Turn { index: 8, body: q(&extra) });
            let store = KnowledgeStore::default();
            for (i, _) in base.queries() {
                prop_assert_eq!(
                    extract_mention_features(&base, i, &cfg, &store).unwrap(),
                    extract_mention_features(&longer, i, &cfg, &store).unwrap()
                );
            }
        }
    }
}
