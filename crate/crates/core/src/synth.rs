//! Synthetic film-domain corpora with known ground truth.
//!
//! A [`SynthWorld`] holds pseudo-word entities of four types, relation
//! triples between them and the knowledge files that describe them.
//! Sessions are drawn from an order-k Markov process over entity types;
//! each state is realized as a click or as a query following the E, E-R-E or
//! T-R-E templates.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::corpus::{
    write_record, KnowledgeStore, MentionSpan, Session, SessionRecord, Token, TurnAnnotation, TurnBody,
};
use crate::distsup::{RelationArg, RelationSample, Template, NONE_LABEL};
use crate::error::{Error, Result};
use crate::mention::bio_labels;
use crate::sessionlm::EntityItem;

pub const TYPES: [&str; 4] = ["film", "actor", "director", "character"];
const FILM: usize = 0;
const ACTOR: usize = 1;
const DIRECTOR: usize = 2;
const CHARACTER: usize = 3;

const ID_PREFIX: [&str; 4] = ["f", "a", "d", "c"];
const TYPE_WORDS: [&[&str]; 4] = [&["movies", "films", "movie"], &["actors", "actor", "cast"], &["directors", "director"], &["characters", "character", "roles"]];
const URL_PATH: [&str; 4] = ["title", "name", "director", "character"];
const SITES: [&str; 3] = ["http://www.imdb.com", "http://www.rottentomatoes.com", "http://en.wikipedia.org/wiki"];

/// `(label, subject type, object type, forward connector, reverse connector)`.
pub const RELATIONS: [(&str, usize, usize, &str, &str); 3] = [
    ("directed_by", FILM, DIRECTOR, "directed by", "who directed"),
    ("starring", FILM, ACTOR, "starring", "appearing in"),
    ("played_by", CHARACTER, ACTOR, "played by", "who played"),
];

const E_CARRIERS: [(&str, &str); 6] = [("", ""), ("about", ""), ("search", ""), ("", "info"), ("show me", ""), ("", "details")];
const NONE_CONNECTORS: [&str; 3] = ["and", "or", "versus"];

fn pos_of(word: &str) -> &'static str {
    match word {
        "by" | "in" | "of" | "about" | "like" | "versus" => "IN",
        "and" | "or" => "CC",
        "who" => "WP",
        "directed" | "played" => "VBD",
        "starring" | "appearing" => "VBG",
        "search" | "show" => "VB",
        "me" => "PRP",
        "info" | "details" => "NN",
        w if TYPE_WORDS.iter().any(|ws| ws.contains(&w)) => "NNS",
        _ => "NN",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_sessions: usize,
    /// The next type depends on the previous `type_order - 1` types.
    pub type_order: usize,
    pub entities_per_type: usize,
    pub min_states: usize,
    pub max_states: usize,
    pub click_prob: f64,
    /// Chance two adjacent states share one query: a relation query when
    /// the entities are linked, an unrelated pair otherwise.
    pub ere_prob: f64,
    pub tre_prob: f64,
    /// Query mentions written with two letters swapped, outside the gazetteer.
    pub misspell_prob: f64,
    /// Chance the next entity is related to the previous one.
    pub related_prob: f64,
    /// Exponent applied to uniform draws to sharpen type transitions.
    pub sharpness: f64,
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_sessions: 2000,
            type_order: 2,
            entities_per_type: 3000,
            min_states: 3,
            max_states: 9,
            click_prob: 0.35,
            ere_prob: 0.1,
            tre_prob: 0.1,
            misspell_prob: 0.2,
            related_prob: 0.3,
            sharpness: 4.0,
            zipf_exponent: 0.5,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("click_prob", self.click_prob),
            ("ere_prob", self.ere_prob),
            ("tre_prob", self.tre_prob),
            ("misspell_prob", self.misspell_prob),
            ("related_prob", self.related_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.type_order < 1 {
            return Err(Error::invalid("type_order must be at least 1"));
        }
        if self.entities_per_type < 4 {
            return Err(Error::invalid("entities_per_type must be at least 4"));
        }
        if self.min_states < 1 || self.min_states > self.max_states {
            return Err(Error::invalid("need 1 <= min_states <= max_states"));
        }
        if !(self.sharpness > 0.0) || !(self.zipf_exponent >= 0.0) {
            return Err(Error::invalid("sharpness must be positive and zipf_exponent nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthEntity {
    pub id: String,
    pub name: Vec<String>,
    pub type_index: usize,
}

impl SynthEntity {
    pub fn entity_type(&self) -> &'static str {
        TYPES[self.type_index]
    }
}

/// Entities, triples and the type transition table.
#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub entities: Vec<SynthEntity>,
    by_type: Vec<Vec<usize>>,
    /// `(subject, relation index, object)`.
    pub triples: Vec<(usize, usize, usize)>,
    /// entity -> `(relation index, other entity, entity is subject)`.
    links: Vec<Vec<(usize, usize, bool)>>,
    names: HashSet<String>,
    type_order: usize,
    transitions: HashMap<Vec<usize>, Vec<f64>>,
    zipf: Vec<WeightedIndex<f64>>,
}

const START: usize = TYPES.len();

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "th", "br"];
    const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];
    const CODAS: [&str; 6] = ["", "n", "r", "s", "x", "l"];
    let syllables = rng.random_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).unwrap());
        w.push_str(VOWELS.choose(rng).unwrap());
    }
    w.push_str(CODAS.choose(rng).unwrap());
    w
}

impl SynthWorld {
    pub fn generate(config: &SynthConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut names: HashSet<String> = HashSet::new();
        let reserved: HashSet<&str> = TYPE_WORDS
            .iter()
            .flat_map(|w| w.iter().copied())
            .chain(RELATIONS.iter().flat_map(|r| r.3.split(' ').chain(r.4.split(' '))))
            .chain(E_CARRIERS.iter().flat_map(|(a, b)| a.split(' ').chain(b.split(' '))))
            .chain(NONE_CONNECTORS)
            .collect();
        let mut entities = Vec::new();
        let mut by_type = vec![Vec::new(); TYPES.len()];
        for (t, prefix) in ID_PREFIX.iter().enumerate() {
            for i in 0..config.entities_per_type {
                let name = loop {
                    let len = match rng.random_range(0..10) {
                        0..=3 => 1,
                        4..=7 => 2,
                        _ => 3,
                    };
                    let words: Vec<String> = (0..len).map(|_| pseudo_word(&mut rng)).collect();
                    let joined = words.join(" ");
                    if words.iter().all(|w| !reserved.contains(w.as_str())) && names.insert(joined) {
                        break words;
                    }
                };
                by_type[t].push(entities.len());
                entities.push(SynthEntity {
                    id: format!("{prefix}{i:04}"),
                    name,
                    type_index: t,
                });
            }
        }
        let mut triples = Vec::new();
        for &f in &by_type[FILM] {
            triples.push((f, 0, *by_type[DIRECTOR].choose(&mut rng).unwrap()));
            let mut cast: BTreeSet<usize> = BTreeSet::new();
            while cast.len() < 3 {
                cast.insert(*by_type[ACTOR].choose(&mut rng).unwrap());
            }
            triples.extend(cast.into_iter().map(|a| (f, 1, a)));
        }
        for &c in &by_type[CHARACTER] {
            triples.push((c, 2, *by_type[ACTOR].choose(&mut rng).unwrap()));
        }
        let mut links = vec![Vec::new(); entities.len()];
        for &(s, r, o) in &triples {
            links[s].push((r, o, true));
            links[o].push((r, s, false));
        }
        let mut transitions = HashMap::new();
        let k = config.type_order - 1;
        let mut contexts: Vec<Vec<usize>> = vec![vec![]];
        for _ in 0..k {
            contexts = contexts
                .into_iter()
                .flat_map(|c| {
                    (0..=TYPES.len()).map(move |t| {
                        let mut c = c.clone();
                        c.push(t);
                        c
                    })
                })
                .collect();
        }
        for ctx in contexts {
            // a start symbol may only precede other start symbols
            if ctx.windows(2).any(|w| w[0] != START && w[1] == START) {
                continue;
            }
            let raw: Vec<f64> = (0..TYPES.len()).map(|_| rng.random::<f64>().powf(config.sharpness) + 1e-3).collect();
            let sum: f64 = raw.iter().sum();
            transitions.insert(ctx, raw.into_iter().map(|x| x / sum).collect());
        }
        let zipf = (0..TYPES.len())
            .map(|_| {
                let w: Vec<f64> = (0..config.entities_per_type)
                    .map(|r| 1.0 / ((r + 1) as f64).powf(config.zipf_exponent))
                    .collect();
                WeightedIndex::new(w).expect("positive weights")
            })
            .collect();
        Ok(SynthWorld {
            entities,
            by_type,
            triples,
            links,
            names,
            type_order: config.type_order,
            transitions,
            zipf,
        })
    }

    pub fn entity(&self, i: usize) -> &SynthEntity {
        &self.entities[i]
    }

    /// Type distribution given the previous `type_order - 1` types.
    pub fn transition(&self, previous: &[usize]) -> &[f64] {
        let k = self.type_order - 1;
        let mut ctx = vec![START; k];
        let tail = &previous[previous.len().saturating_sub(k)..];
        ctx[k - tail.len()..].copy_from_slice(tail);
        &self.transitions[&ctx]
    }

    pub fn store(&self) -> Result<KnowledgeStore> {
        let mut b = KnowledgeStore::builder();
        for (t, members) in self.by_type.iter().enumerate() {
            for (rank, &i) in members.iter().enumerate() {
                let e = &self.entities[i];
                let count = (1000 / (rank + 1)).max(1) as u64;
                b.gazetteer_row(&e.name.join(" "), TYPES[t], &e.id, count);
                for site in SITES {
                    b.url(&self.url(i, site), &e.id);
                }
            }
        }
        for &(s, r, o) in &self.triples {
            b.relation(&self.entities[s].id, RELATIONS[r].0, &self.entities[o].id);
        }
        for (t, words) in TYPE_WORDS.iter().enumerate() {
            for w in *words {
                b.type_word(w, TYPES[t]);
            }
        }
        b.build()
    }

    fn url(&self, i: usize, site: &str) -> String {
        let e = &self.entities[i];
        if site.ends_with("/wiki") {
            format!("{site}/{}/", e.name.join("_"))
        } else {
            format!("{site}/{}/{}/", URL_PATH[e.type_index], e.id)
        }
    }

    fn draw_entity(&self, t: usize, previous: Option<usize>, related_prob: f64, rng: &mut ChaCha8Rng) -> usize {
        if let Some(p) = previous {
            let related: Vec<usize> = self.links[p]
                .iter()
                .map(|l| l.1)
                .filter(|&o| self.entities[o].type_index == t)
                .collect();
            if !related.is_empty() && rng.random_bool(related_prob) {
                return *related.choose(rng).unwrap();
            }
        }
        self.by_type[t][self.zipf[t].sample(rng)]
    }

    fn misspell(&self, name: &[String], rng: &mut ChaCha8Rng) -> Option<Vec<String>> {
        let w = rng.random_range(0..name.len());
        let chars: Vec<char> = name[w].chars().collect();
        let candidates: Vec<usize> = (0..chars.len() - 1).filter(|&i| chars[i] != chars[i + 1]).collect();
        let &i = candidates.choose(rng)?;
        let mut swapped = chars;
        swapped.swap(i, i + 1);
        let mut out = name.to_vec();
        out[w] = swapped.into_iter().collect();
        let joined = out.join(" ");
        (!self.names.contains(&joined)).then_some(out)
    }
}

/// One generated query with its gold annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldQuery {
    pub template: Template,
    pub relation: Option<String>,
}

/// Generated sessions with gold labels.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub store: KnowledgeStore,
    pub records: Vec<SessionRecord>,
    /// Gold relation samples, `(session index, turn, sample)`.
    pub samples: Vec<(usize, usize, RelationSample)>,
}

struct QueryBuilder {
    tokens: Vec<Token>,
    spans: Vec<MentionSpan>,
}

impl QueryBuilder {
    fn new() -> Self {
        QueryBuilder {
            tokens: Vec::new(),
            spans: Vec::new(),
        }
    }

    fn words(&mut self, text: &str) {
        for w in text.split_whitespace() {
            self.tokens.push(Token::with_tags(w, pos_of(w), "NONE", "NONE"));
        }
    }

    fn entity(&mut self, surface: &[String], e: &SynthEntity) -> MentionSpan {
        let start = self.tokens.len();
        for w in surface {
            self.tokens.push(Token::with_tags(w.as_str(), "NNP", "NONE", "NONE"));
        }
        let span = MentionSpan {
            start,
            end: self.tokens.len(),
            entity_id: Some(e.id.clone()),
            entity_type: Some(e.entity_type().to_owned()),
        };
        self.spans.push(span.clone());
        span
    }
}

/// Draws sessions over `world`.
pub fn generate_corpus(world: &SynthWorld, config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let store = world.store()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5e55_1075);
    let mut records = Vec::with_capacity(config.n_sessions);
    let mut samples = Vec::new();
    for s in 0..config.n_sessions {
        let n = rng.random_range(config.min_states..=config.max_states);
        let mut types: Vec<usize> = Vec::with_capacity(n);
        let mut ents: Vec<usize> = Vec::with_capacity(n);
        for _ in 0..n {
            let dist = WeightedIndex::new(world.transition(&types)).expect("valid transition row");
            let t = dist.sample(&mut rng);
            let e = world.draw_entity(t, ents.last().copied(), config.related_prob, &mut rng);
            types.push(t);
            ents.push(e);
        }
        let mut bodies = Vec::new();
        let mut notes = Vec::new();
        let mut i = 0;
        while i < n {
            let turn = bodies.len();
            let surface = |e: usize, rng: &mut ChaCha8Rng| -> Vec<String> {
                let name = &world.entities[e].name;
                if rng.random_bool(config.misspell_prob) {
                    world.misspell(name, rng).unwrap_or_else(|| name.clone())
                } else {
                    name.clone()
                }
            };
            let pair = i + 1 < n && rng.random_bool(config.ere_prob);
            let ere = pair
                .then(|| world.links[ents[i]].iter().find(|l| l.1 == ents[i + 1]).copied())
                .flatten();
            if pair && ere.is_none() && ents[i] != ents[i + 1] {
                let mut q = QueryBuilder::new();
                let a = q.entity(&surface(ents[i], &mut rng), &world.entities[ents[i]]);
                q.words(NONE_CONNECTORS.choose(&mut rng).unwrap());
                let b = q.entity(&surface(ents[i + 1], &mut rng), &world.entities[ents[i + 1]]);
                samples.push((
                    s,
                    turn,
                    RelationSample {
                        tokens: q.tokens.clone(),
                        template: Template::Ere,
                        arg1: RelationArg::Span(a),
                        arg2: b,
                        label: NONE_LABEL.to_owned(),
                    },
                ));
                notes.push(Some(json!({"template": "E"})));
                bodies.push((TurnBody::Query(q.tokens), q.spans));
                i += 2;
                continue;
            }
            if let Some((r, _, first_is_subject)) = ere {
                let (label, _, _, fwd, rev) = RELATIONS[r];
                let mut q = QueryBuilder::new();
                let a = q.entity(&surface(ents[i], &mut rng), &world.entities[ents[i]]);
                q.words(if first_is_subject { fwd } else { rev });
                let b = q.entity(&surface(ents[i + 1], &mut rng), &world.entities[ents[i + 1]]);
                samples.push((
                    s,
                    turn,
                    RelationSample {
                        tokens: q.tokens.clone(),
                        template: Template::Ere,
                        arg1: RelationArg::Span(a),
                        arg2: b,
                        label: label.to_owned(),
                    },
                ));
                notes.push(Some(json!({"template": "ERE", "relation": label})));
                bodies.push((TurnBody::Query(q.tokens), q.spans));
                i += 2;
                continue;
            }
            let e = ents[i];
            let tre: Vec<(usize, bool)> = {
                let mut seen = BTreeSet::new();
                world.links[e].iter().filter(|l| seen.insert((l.0, l.2))).map(|l| (l.0, l.2)).collect()
            };
            if !tre.is_empty() && rng.random_bool(config.tre_prob) {
                let &(r, e_is_subject) = tre.choose(&mut rng).unwrap();
                let (label, subj, obj, fwd, rev) = RELATIONS[r];
                let mut q = QueryBuilder::new();
                // the type word names the other argument's type
                let other = if e_is_subject { obj } else { subj };
                let word = *TYPE_WORDS[other].choose(&mut rng).unwrap();
                q.words(word);
                q.words(if e_is_subject { rev } else { fwd });
                let span = q.entity(&surface(e, &mut rng), &world.entities[e]);
                samples.push((
                    s,
                    turn,
                    RelationSample {
                        tokens: q.tokens.clone(),
                        template: Template::Tre,
                        arg1: RelationArg::TypeWord {
                            position: 0,
                            entity_type: TYPES[other].to_owned(),
                        },
                        arg2: span,
                        label: label.to_owned(),
                    },
                ));
                notes.push(Some(json!({"template": "TRE", "relation": label})));
                bodies.push((TurnBody::Query(q.tokens), q.spans));
            } else if rng.random_bool(config.click_prob) {
                let site = *SITES.choose(&mut rng).unwrap();
                notes.push(None);
                bodies.push((TurnBody::Click(world.url(e, site)), Vec::new()));
            } else {
                let (pre, post) = *E_CARRIERS.choose(&mut rng).unwrap();
                let mut q = QueryBuilder::new();
                q.words(pre);
                q.entity(&surface(e, &mut rng), &world.entities[e]);
                q.words(post);
                notes.push(Some(json!({"template": "E"})));
                bodies.push((TurnBody::Query(q.tokens), q.spans));
            }
            i += 1;
        }
        let spans: Vec<Vec<MentionSpan>> = bodies.iter().map(|b| b.1.clone()).collect();
        let session = Session::new(format!("synth{s:06}"), bodies.into_iter().map(|b| b.0).collect());
        let mut annotations = Vec::with_capacity(session.turns.len());
        let mut click_entities = ents.iter();
        for (turn, spans) in session.turns.iter().zip(spans) {
            let ann = match &turn.body {
                TurnBody::Query(tokens) => {
                    for _ in &spans {
                        click_entities.next();
                    }
                    TurnAnnotation {
                        bio: Some(bio_labels(tokens.len(), &spans, false)?),
                        spans: Some(spans),
                        interpretations: notes[turn.index].clone().into_iter().collect(),
                        ..TurnAnnotation::default()
                    }
                }
                TurnBody::Click(_) => {
                    let e = &world.entities[*click_entities.next().expect("one entity per state")];
                    TurnAnnotation {
                        entity_id: Some(e.id.clone()),
                        entity_type: Some(e.entity_type().to_owned()),
                        ..TurnAnnotation::default()
                    }
                }
            };
            annotations.push(ann);
        }
        records.push(SessionRecord { session, annotations });
    }
    Ok(SynthCorpus { store, records, samples })
}

impl SynthCorpus {
    /// Gold `(entity, type)` sequence of every session.
    pub fn entity_sessions(&self) -> Vec<Vec<EntityItem>> {
        self.records.iter().map(gold_entities).collect()
    }

    /// Unlabeled sessions, one JSON line each.
    pub fn sessions_text(&self) -> String {
        self.records.iter().map(|r| crate::corpus::write_session(&r.session) + "\n").collect()
    }

    pub fn gold_text(&self) -> String {
        self.records.iter().map(|r| write_record(r) + "\n").collect()
    }

    /// Writes `sessions.jsonl`, `gold.jsonl`, `relations.tsv` and the
    /// knowledge files under `dir/knowledge`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("knowledge"))?;
        self.store.write_dir(&dir.join("knowledge"))?;
        std::fs::write(dir.join("sessions.jsonl"), self.sessions_text())?;
        std::fs::write(dir.join("gold.jsonl"), self.gold_text())?;
        let mut rows = String::new();
        for (s, turn, sample) in &self.samples {
            rows.push_str(&crate::distsup::sample_row(&self.records[*s].session.id, *turn, sample));
            rows.push('\n');
        }
        std::fs::write(dir.join("relations.tsv"), rows)?;
        Ok(())
    }
}

/// Gold entity sequence of a labeled record, in state order.
pub fn gold_entities(rec: &SessionRecord) -> Vec<EntityItem> {
    let mut out = Vec::new();
    for ann in &rec.annotations {
        if let Some(spans) = &ann.spans {
            let mut spans = spans.clone();
            spans.sort();
            for s in spans {
                if let (Some(id), Some(ty)) = (s.entity_id, s.entity_type) {
                    out.push(EntityItem::new(id, ty));
                }
            }
        }
        if let (Some(id), Some(ty)) = (&ann.entity_id, &ann.entity_type) {
            out.push(EntityItem::new(id.clone(), ty.clone()));
        }
    }
    out
}

/// Standalone relation samples: `per_label` positives for each relation plus
/// `per_label` NONE samples, for one template.
pub fn relation_dataset(world: &SynthWorld, template: Template, per_label: usize, seed: u64) -> Vec<RelationSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(4 * per_label);
    let name = |e: usize| world.entities[e].name.clone();
    for (r, &(label, subj, obj, fwd, rev)) in RELATIONS.iter().enumerate() {
        let triples: Vec<&(usize, usize, usize)> = world.triples.iter().filter(|t| t.1 == r).collect();
        for _ in 0..per_label {
            let &&(s, _, o) = triples.choose(&mut rng).unwrap();
            let forward = rng.random_bool(0.5);
            let mut q = QueryBuilder::new();
            let sample = match template {
                Template::Ere => {
                    let (first, second, conn) = if forward { (s, o, fwd) } else { (o, s, rev) };
                    let a = q.entity(&name(first), &world.entities[first]);
                    q.words(conn);
                    let b = q.entity(&name(second), &world.entities[second]);
                    RelationSample {
                        tokens: q.tokens,
                        template,
                        arg1: RelationArg::Span(a),
                        arg2: b,
                        label: label.to_owned(),
                    }
                }
                Template::Tre => {
                    let (e, other, conn) = if forward { (o, subj, fwd) } else { (s, obj, rev) };
                    q.words(TYPE_WORDS[other].choose(&mut rng).unwrap());
                    q.words(conn);
                    let span = q.entity(&name(e), &world.entities[e]);
                    RelationSample {
                        tokens: q.tokens,
                        template,
                        arg1: RelationArg::TypeWord {
                            position: 0,
                            entity_type: TYPES[other].to_owned(),
                        },
                        arg2: span,
                        label: label.to_owned(),
                    }
                }
            };
            out.push(sample);
        }
    }
    let related: HashSet<(usize, usize)> = world.triples.iter().flat_map(|&(s, _, o)| [(s, o), (o, s)]).collect();
    let mut made = 0;
    while made < per_label {
        let mut q = QueryBuilder::new();
        let conn = *NONE_CONNECTORS.choose(&mut rng).unwrap();
        let sample = match template {
            Template::Ere => {
                let a = rng.random_range(0..world.entities.len());
                let b = rng.random_range(0..world.entities.len());
                if a == b || related.contains(&(a, b)) {
                    continue;
                }
                let x = q.entity(&name(a), &world.entities[a]);
                q.words(conn);
                let y = q.entity(&name(b), &world.entities[b]);
                RelationSample {
                    tokens: q.tokens,
                    template,
                    arg1: RelationArg::Span(x),
                    arg2: y,
                    label: NONE_LABEL.to_owned(),
                }
            }
            Template::Tre => {
                // a type word no relation connects to the entity's type
                let e = rng.random_range(0..world.entities.len());
                let te = world.entities[e].type_index;
                let unrelated: Vec<usize> = (0..TYPES.len())
                    .filter(|&t| !RELATIONS.iter().any(|r| (r.1 == t && r.2 == te) || (r.2 == t && r.1 == te)))
                    .collect();
                let Some(&t) = unrelated.choose(&mut rng) else { continue };
                q.words(TYPE_WORDS[t].choose(&mut rng).unwrap());
                q.words("like");
                let span = q.entity(&name(e), &world.entities[e]);
                RelationSample {
                    tokens: q.tokens,
                    template,
                    arg1: RelationArg::TypeWord {
                        position: 0,
                        entity_type: TYPES[t].to_owned(),
                    },
                    arg2: span,
                    label: NONE_LABEL.to_owned(),
                }
            }
        };
        out.push(sample);
        made += 1;
    }
    out
}
