//! Subcommand implementations.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use session_parse::corpus::{
    read_records, write_record, KnowledgeStore, MentionSpan, ModelFile, ModelKind, SessionRecord, TurnAnnotation,
    TurnBody,
};
use session_parse::crf::{CrfConfig, CrfModel};
use session_parse::distsup::{cap_negatives, label_session, sample_row, MatchStats, RelationSample, SampleRow, Template};
use session_parse::evaluate::{paired_t_test, score_entities, unit_scores, Protocol, SpanTable, Unit};
use session_parse::mention::{self, bio_labels, MentionExample, MentionFeatureConfig};
use session_parse::par::{self, Execution};
use session_parse::relex::{self, classify_query, LogRegModel};
use session_parse::sessionlm::{cross_entropy, fit_counts, tune_interpolation, NgramCounts, Smoothing};
use session_parse::synth::{self, generate_corpus, SynthWorld};
use session_parse::typer::{self, StateSource, TyperExample, TyperFeatureConfig, TyperMode};

/// An invocation problem rather than a data problem.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn require(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let p = path.ok_or_else(|| UsageError(format!("no {what} path given on the command line or in the config")))?;
    Ok(p)
}

pub fn require_existing(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let p = require(path, what)?;
    if !p.exists() {
        bail!("{what} {} does not exist", p.display());
    }
    Ok(p)
}

pub fn load_store(dir: &Path) -> Result<KnowledgeStore> {
    KnowledgeStore::load_dir(dir).with_context(|| format!("loading knowledge files from {}", dir.display()))
}

pub fn load_records(path: &Path, exec: Execution) -> Result<Vec<SessionRecord>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_records(BufReader::new(f), exec).with_context(|| format!("reading {}", path.display()))
}

fn write_records(path: &Path, records: &[SessionRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&write_record(r));
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_model(path: &Path, file: &ModelFile) -> Result<()> {
    write_file(path, file.to_text()?.as_bytes())
}

pub fn load_model(path: &Path, kind: ModelKind) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    let file = ModelFile::parse(&text).with_context(|| format!("parsing model {}", path.display()))?;
    file.kind_must_be(kind).with_context(|| format!("model {}", path.display()))?;
    Ok(file)
}

fn load_crf(path: &Path, kind: ModelKind) -> Result<CrfModel> {
    CrfModel::from_model_file(&load_model(path, kind)?).with_context(|| format!("model {}", path.display()))
}

fn load_logreg(path: &Path, kind: ModelKind) -> Result<LogRegModel> {
    LogRegModel::from_model_file(&load_model(path, kind)?).with_context(|| format!("model {}", path.display()))
}

pub struct DistsupArgs {
    pub knowledge: PathBuf,
    pub sessions: PathBuf,
    pub out: PathBuf,
    pub config: session_parse::distsup::DistsupConfig,
    pub exec: Execution,
}

/// Writes `labeled.jsonl`, `relations.tsv` and `stats.txt` under `out`.
pub fn distsup_label(args: &DistsupArgs) -> Result<MatchStats> {
    let store = load_store(&args.knowledge)?;
    let records = load_records(&args.sessions, args.exec)?;
    let labeled = par::map(args.exec, &records, |r| label_session(&r.session, &store, &args.config));
    let mut stats = MatchStats::default();
    let mut out_records = Vec::with_capacity(records.len());
    let mut samples: Vec<(usize, usize, RelationSample)> = Vec::new();
    for (i, (rec, lab)) in records.iter().zip(&labeled).enumerate() {
        stats.add(lab);
        let mut annotations = vec![TurnAnnotation::default(); rec.session.turns.len()];
        for (turn, q) in &lab.queries {
            annotations[*turn].bio = Some(q.bio_strings());
            annotations[*turn].spans = Some(q.spans.clone());
        }
        for (turn, id, ty) in &lab.clicks {
            annotations[*turn].entity_id = Some(id.clone());
            annotations[*turn].entity_type = Some(ty.clone());
        }
        samples.extend(lab.samples.iter().map(|(turn, s)| (i, *turn, s.clone())));
        out_records.push(SessionRecord {
            session: rec.session.clone(),
            annotations,
        });
    }
    let samples = cap_negatives(samples, |x| &x.2, args.config.none_multiple, args.config.seed);
    let mut rows = String::new();
    for (i, turn, s) in &samples {
        rows.push_str(&sample_row(&records[*i].session.id, *turn, s));
        rows.push('\n');
    }
    write_records(&args.out.join("labeled.jsonl"), &out_records)?;
    write_file(&args.out.join("relations.tsv"), rows.as_bytes())?;
    write_file(&args.out.join("stats.txt"), stats.report().as_bytes())?;
    Ok(stats)
}

fn annotated_spans(rec: &SessionRecord) -> Vec<(usize, Vec<MentionSpan>)> {
    rec.session
        .turns
        .iter()
        .zip(&rec.annotations)
        .filter(|(t, _)| t.tokens().is_some())
        .filter_map(|(t, a)| a.spans.clone().map(|s| (t.index, s)))
        .collect()
}

pub fn train_mention(
    store: &KnowledgeStore,
    records: &[SessionRecord],
    features: &MentionFeatureConfig,
    typed: bool,
    crf: &CrfConfig,
) -> Result<ModelFile> {
    let examples: Vec<MentionExample<'_>> = records
        .iter()
        .flat_map(|r| {
            annotated_spans(r).into_iter().map(move |(turn, spans)| MentionExample {
                session: &r.session,
                turn,
                spans,
            })
        })
        .collect();
    if examples.is_empty() {
        bail!("no query turns with span annotations to train on");
    }
    let data = mention::build_training_set(&examples, features, store, typed, crf.exec)?;
    let (model, report) = mention::train_mention(&data, typed, crf)?;
    log::info!(
        "mention CRF: {} sequences, {} iterations, objective {:.6}",
        data.len(),
        report.optim.iterations,
        report.objective
    );
    Ok(model.to_model_file(ModelKind::MentionCrf)?)
}

/// Gazetteer id and type for a span's surface, keeping any it already has.
fn type_from_gazetteer(tokens: &[session_parse::corpus::Token], mut span: MentionSpan, store: &KnowledgeStore) -> MentionSpan {
    let words: Vec<String> = tokens[span.start..span.end].iter().map(|t| t.lower.clone()).collect();
    if let Some(rec) = store.lookup_name(&words) {
        span.entity_id.get_or_insert_with(|| rec.id.clone());
        span.entity_type.get_or_insert_with(|| rec.entity_type.clone());
    }
    span
}

/// Per-query spans for typer training: tagger output typed by exact
/// gazetteer match, or the file's own span annotations.
pub fn typer_spans(
    rec: &SessionRecord,
    tagger: Option<(&CrfModel, &MentionFeatureConfig)>,
    store: &KnowledgeStore,
) -> Result<Vec<(usize, Vec<MentionSpan>)>> {
    match tagger {
        Some((model, features)) => {
            let tagged = mention::tag_session(model, &rec.session, features, store)?;
            Ok(tagged
                .into_iter()
                .map(|(turn, spans)| {
                    let tokens = rec.session.turns[turn].tokens().expect("tagged turns are queries");
                    (turn, spans.into_iter().map(|s| type_from_gazetteer(tokens, MentionSpan::new(s.start, s.end), store)).collect())
                })
                .collect())
        }
        None => Ok(annotated_spans(rec)),
    }
}

pub fn train_typer(
    store: &KnowledgeStore,
    records: &[SessionRecord],
    tagger: Option<(&CrfModel, &MentionFeatureConfig)>,
    features: &TyperFeatureConfig,
    mode: TyperMode,
    crf: &CrfConfig,
) -> Result<ModelFile> {
    let spans: Vec<Vec<(usize, Vec<MentionSpan>)>> = par::map(crf.exec, records, |r| typer_spans(r, tagger, store))
        .into_iter()
        .collect::<Result<_>>()?;
    let examples: Vec<TyperExample<'_>> = records
        .iter()
        .zip(&spans)
        .map(|(r, s)| TyperExample {
            session: &r.session,
            states: typer::build_state_sequence(&r.session, s, store),
        })
        .collect();
    let hidden: usize = examples.iter().map(|e| e.states.hidden_count()).sum();
    let total: usize = examples.iter().map(|e| e.states.len()).sum();
    log::info!("typer: {total} states, {hidden} hidden");
    let (model, report) = typer::train_typer(&examples, mode, store, features, crf)?;
    log::info!(
        "typer CRF: {} iterations, objective {:.6}",
        report.optim.iterations,
        report.objective
    );
    Ok(model.to_model_file(ModelKind::TyperCrf)?)
}

/// Relation samples of one template, rebuilt from a sample TSV over the
/// tokens of `records`.
pub fn load_samples(
    path: &Path,
    records: &[SessionRecord],
    store: &KnowledgeStore,
    template: Option<Template>,
) -> Result<Vec<RelationSample>> {
    let by_id: HashMap<&str, &SessionRecord> = records.iter().map(|r| (r.session.id.as_str(), r)).collect();
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let at = || format!("{} line {}", path.display(), i + 1);
        let row = SampleRow::parse(i + 1, &line).with_context(|| path.display().to_string())?;
        if template.is_some_and(|t| t != row.template) {
            continue;
        }
        let rec = by_id
            .get(row.session_id.as_str())
            .with_context(|| format!("{}: unknown session {}", at(), row.session_id))?;
        let tokens = rec
            .session
            .turns
            .get(row.turn)
            .and_then(|t| t.tokens())
            .with_context(|| format!("{}: turn {} is not a query", at(), row.turn))?;
        out.push(row.resolve(tokens, store).with_context(at)?);
    }
    Ok(out)
}

pub fn train_relex(
    store: &KnowledgeStore,
    samples: &[RelationSample],
    template: Template,
    config: &session_parse::relex::RelexConfig,
) -> Result<ModelFile> {
    let examples = relex::featurize(samples, store, config.exec)?;
    let model = relex::train_relex(&examples, template, config)?;
    Ok(model.to_model_file()?)
}

pub struct Tagger {
    pub mention: CrfModel,
    pub mention_features: MentionFeatureConfig,
    pub typer: Option<CrfModel>,
    pub typer_features: TyperFeatureConfig,
    pub ere: Option<LogRegModel>,
    pub tre: Option<LogRegModel>,
    pub threshold: f64,
}

impl Tagger {
    pub fn load(
        mention_path: &Path,
        typer_path: Option<&Path>,
        ere_path: Option<&Path>,
        tre_path: Option<&Path>,
        mention_features: MentionFeatureConfig,
        typer_features: TyperFeatureConfig,
        threshold: f64,
    ) -> Result<Self> {
        Ok(Tagger {
            mention: load_crf(mention_path, ModelKind::MentionCrf)?,
            mention_features,
            typer: typer_path.map(|p| load_crf(p, ModelKind::TyperCrf)).transpose()?,
            typer_features,
            ere: ere_path.map(|p| load_logreg(p, ModelKind::RelexEre)).transpose()?,
            tre: tre_path.map(|p| load_logreg(p, ModelKind::RelexTre)).transpose()?,
            threshold,
        })
    }

    fn typed_mentions(&self) -> bool {
        self.mention.labels().iter().any(|l| l.starts_with("B-") && l != "B-ENT")
    }

    /// Mention spans, then session types, then template interpretations.
    pub fn tag(&self, rec: &SessionRecord, store: &KnowledgeStore) -> Result<SessionRecord> {
        let session = &rec.session;
        let mut spans: Vec<(usize, Vec<MentionSpan>)> =
            mention::tag_session(&self.mention, session, &self.mention_features, store)?
                .into_iter()
                .map(|(turn, spans)| {
                    let tokens = session.turns[turn].tokens().expect("tagged turns are queries");
                    let spans = spans
                        .into_iter()
                        .map(|s| {
                            let typed = s.entity_type.clone();
                            let mut s = type_from_gazetteer(tokens, MentionSpan::new(s.start, s.end), store);
                            s.entity_type = typed;
                            s
                        })
                        .collect();
                    (turn, spans)
                })
                .collect();
        let mut typed = self.typed_mentions();
        if let Some(model) = &self.typer {
            let states = typer::build_state_sequence(session, &spans, store);
            let types = typer::predict_types(model, session, &states, store, &self.typer_features)?;
            for (state, ty) in states.states.iter().zip(types) {
                if let StateSource::QueryMention(m) = &state.source {
                    let (_, turn_spans) = spans.iter_mut().find(|(t, _)| *t == state.turn_index).expect("state turn");
                    let s = turn_spans.iter_mut().find(|s| s.start == m.start && s.end == m.end).expect("state span");
                    s.entity_type = Some(ty);
                }
            }
            typed = true;
        }
        let mut annotations = vec![TurnAnnotation::default(); session.turns.len()];
        for turn in &session.turns {
            if let TurnBody::Click(url) = &turn.body {
                if let Some((id, ty)) = session_parse::distsup::map_click_to_entity(url, store) {
                    annotations[turn.index].entity_id = Some(id);
                    annotations[turn.index].entity_type = Some(ty);
                }
            }
        }
        for (turn, turn_spans) in spans {
            let tokens = session.turns[turn].tokens().expect("tagged turns are queries");
            let ann = &mut annotations[turn];
            ann.bio = Some(bio_labels(tokens.len(), &turn_spans, false)?);
            if typed && (self.ere.is_some() || self.tre.is_some()) {
                let q = classify_query(tokens, &turn_spans, self.ere.as_ref(), self.tre.as_ref(), store, self.threshold)?;
                ann.interpretations = q.interpretations.iter().map(|i| i.to_json(tokens)).collect();
            }
            ann.spans = Some(turn_spans);
        }
        Ok(SessionRecord {
            session: session.clone(),
            annotations,
        })
    }

    pub fn warn_partial(&self) {
        if self.typer.is_none() && !self.typed_mentions() {
            log::warn!("no typer model given: spans are emitted untyped and relations are skipped");
        } else if self.ere.is_none() && self.tre.is_none() {
            log::warn!("no relation models given: template interpretations are skipped");
        }
    }
}

pub fn tag_all(tagger: &Tagger, records: &[SessionRecord], store: &KnowledgeStore, exec: Execution) -> Result<Vec<SessionRecord>> {
    tagger.warn_partial();
    par::map(exec, records, |r| tagger.tag(r, store)).into_iter().collect()
}

/// Spans of every query turn; turns without annotations count as empty.
pub fn span_table(records: &[SessionRecord]) -> SpanTable {
    let mut t = SpanTable::new();
    for r in records {
        for (turn, ann) in r.session.turns.iter().zip(&r.annotations) {
            if turn.tokens().is_some() {
                t.insert((r.session.id.clone(), turn.index), ann.spans.clone().unwrap_or_default());
            }
        }
    }
    t
}

pub struct EvalOutput {
    pub table: String,
    pub tsv: String,
    pub comparison: Option<String>,
}

pub fn evaluate(
    gold: &[SessionRecord],
    pred: &[SessionRecord],
    baseline: Option<&[SessionRecord]>,
    protocol: Protocol,
    unit: Unit,
) -> Result<EvalOutput> {
    let g = span_table(gold);
    let p = span_table(pred);
    let report = score_entities(&g, &p, protocol)?;
    let comparison = match baseline {
        Some(b) => {
            let b = span_table(b);
            let a_scores = unit_scores(&g, &p, protocol, unit)?;
            let b_scores = unit_scores(&g, &b, protocol, unit)?;
            let t = paired_t_test(&a_scores, &b_scores)?;
            Some(format!(
                "paired t-test over {} units: mean difference {:.6}, t = {:.6}, df = {}, p = {:.6e}\n",
                a_scores.len(),
                t.mean_difference,
                t.t,
                t.df,
                t.p
            ))
        }
        None => None,
    };
    Ok(EvalOutput {
        table: report.to_table(),
        tsv: report.to_tsv(),
        comparison,
    })
}

pub fn entity_sessions(records: &[SessionRecord]) -> Vec<Vec<session_parse::sessionlm::EntityItem>> {
    records.iter().map(synth::gold_entities).collect()
}

pub fn fit_sessionlm(records: &[SessionRecord], order: usize, unk: bool, exec: Execution) -> Result<NgramCounts> {
    Ok(fit_counts(&entity_sessions(records), order, unk, exec)?)
}

pub fn load_counts(path: &Path) -> Result<NgramCounts> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    NgramCounts::parse_tsv(BufReader::new(f)).with_context(|| format!("reading counts {}", path.display()))
}

pub fn perplexity(counts: &NgramCounts, smoothing: &Smoothing, records: &[SessionRecord], bits: bool) -> Result<f64> {
    Ok(cross_entropy(counts, smoothing, &entity_sessions(records), bits)?)
}

pub fn tune_lm(counts: &NgramCounts, dev: &[SessionRecord], step: f64, include_type: bool) -> Result<Smoothing> {
    Ok(tune_interpolation(counts, &entity_sessions(dev), step, include_type)?)
}

pub fn synth_corpus(config: &session_parse::synth::SynthConfig, out: &Path) -> Result<usize> {
    let world = SynthWorld::generate(config)?;
    let corpus = generate_corpus(&world, config)?;
    corpus.write_dir(out).with_context(|| format!("writing corpus to {}", out.display()))?;
    Ok(corpus.records.len())
}

pub fn save_model(path: &Path, file: &ModelFile) -> Result<()> {
    write_model(path, file)
}

pub fn save_text(path: &Path, text: &str) -> Result<()> {
    write_file(path, text.as_bytes())
}

pub fn save_records(path: &Path, records: &[SessionRecord]) -> Result<()> {
    write_records(path, records)
}

pub fn print(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}
