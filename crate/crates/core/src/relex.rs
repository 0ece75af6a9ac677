//! Relation extraction for the E-R-E and T-R-E query templates.
//!
//! Each template has its own one-vs-all logistic regression: one binary
//! scorer per relation, with NONE predicted by abstention below a threshold.

use std::fmt;

use crate::corpus::{KnowledgeStore, MentionSpan, ModelFile, ModelKind, Token};
use crate::crf::Alphabet;
use crate::distsup::{type_words, RelationArg, RelationSample, Template, NONE_LABEL};
use crate::error::{Error, Result};
use crate::optim::{maximize, LbfgsConfig};
use crate::par::{self, Execution};

fn span_id<'a>(span: &'a MentionSpan, tokens: &[Token], store: &'a KnowledgeStore) -> Option<&'a str> {
    if let Some(id) = span.entity_id.as_deref() {
        return Some(id);
    }
    let name: Vec<String> = tokens.get(span.start..span.end)?.iter().map(|t| t.lower.clone()).collect();
    store.lookup_name(&name).map(|e| e.id.as_str())
}

fn span_type<'a>(span: &'a MentionSpan, tokens: &[Token], store: &'a KnowledgeStore) -> Option<&'a str> {
    span.entity_type
        .as_deref()
        .or_else(|| span_id(span, tokens, store).and_then(|id| store.entity_type(id)))
}

/// Whether the store holds a relation instance for the sample's arguments.
pub fn in_knowledge_store(sample: &RelationSample, store: &KnowledgeStore) -> bool {
    let Some(b) = span_id(&sample.arg2, &sample.tokens, store) else {
        return false;
    };
    match &sample.arg1 {
        RelationArg::Span(a) => span_id(a, &sample.tokens, store)
            .is_some_and(|a| !store.relations_between(a, b).is_empty()),
        RelationArg::TypeWord { entity_type, .. } => store
            .neighbors(b)
            .iter()
            .any(|(_, other)| store.entity_type(other) == Some(entity_type)),
    }
}

/// Sparse features for one sample. Argument types come from the spans
/// (predicted types in the pipeline) and fall back to the gazetteer.
pub fn extract_relation_features(sample: &RelationSample, store: &KnowledgeStore) -> Result<Vec<String>> {
    let (a0, a1) = (sample.arg1.start(), sample.arg1.end());
    let (b0, b1) = (sample.arg2.start, sample.arg2.end);
    let n = sample.tokens.len();
    if a1 > n || b1 > n || a0 >= a1 || b0 >= b1 {
        return Err(Error::invalid("relation argument out of bounds"));
    }
    if a0 < b1 && b0 < a1 {
        return Err(Error::invalid("relation arguments overlap"));
    }
    let (lo, hi) = if a1 <= b0 { (a1, b0) } else { (b1, a0) };
    let between = &sample.tokens[lo..hi];

    let mut feats = vec!["bias".to_owned()];
    for t in between {
        feats.push(format!("bw={}", t.lower));
        feats.push(format!("bp={}", t.pos));
        feats.push(format!("bd={}", t.dep));
    }
    if !between.is_empty() {
        let words: Vec<&str> = between.iter().map(|t| t.lower.as_str()).collect();
        feats.push(format!("bseq={}", words.join(" ")));
    }
    let t1 = match &sample.arg1 {
        RelationArg::Span(s) => span_type(s, &sample.tokens, store),
        RelationArg::TypeWord { entity_type, .. } => Some(entity_type.as_str()),
    }
    .unwrap_or("NONE");
    let t2 = span_type(&sample.arg2, &sample.tokens, store).unwrap_or("NONE");
    feats.push(format!("types={t1}|{t2}"));
    feats.push(format!("t1={t1}"));
    feats.push(format!("t2={t2}"));
    feats.push(format!("kb={}", u8::from(in_knowledge_store(sample, store))));
    feats.push(format!("order={}", if a1 <= b0 { "12" } else { "21" }));
    let d = between.len();
    feats.push(format!("dist={}", if d >= 4 { "4+".to_owned() } else { d.to_string() }));
    if let RelationArg::TypeWord { position, .. } = &sample.arg1 {
        feats.push(format!("tw={}", sample.tokens[*position].lower));
    }
    feats.sort();
    feats.dedup();
    Ok(feats)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log σ(z)` without overflow.
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// Penalized binary log-likelihood `Σ log P(y_i | x_i)` and its gradient.
/// Inputs are sparse index sets with binary targets.
pub fn binary_loglik_grad(xs: &[Vec<usize>], ys: &[bool], w: &[f64], l2_variance: f64) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let mut grad = vec![0.0; w.len()];
    for (x, &y) in xs.iter().zip(ys) {
        let z: f64 = x.iter().map(|&f| w[f]).sum();
        value += if y { log_sigmoid(z) } else { log_sigmoid(-z) };
        let r = f64::from(u8::from(y)) - sigmoid(z);
        for &f in x {
            grad[f] += r;
        }
    }
    value -= w.iter().map(|v| v * v).sum::<f64>() / (2.0 * l2_variance);
    for (g, v) in grad.iter_mut().zip(w) {
        *g -= v / l2_variance;
    }
    (value, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelexConfig {
    pub l2_variance: f64,
    pub optimizer: LbfgsConfig,
    /// Minimum winning probability; below it the prediction is NONE.
    pub threshold: f64,
    pub exec: Execution,
}

impl Default for RelexConfig {
    fn default() -> Self {
        RelexConfig {
            l2_variance: 10.0,
            optimizer: LbfgsConfig::default(),
            threshold: 0.5,
            exec: Execution::default(),
        }
    }
}

/// One binary scorer per relation label over a frozen feature alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    pub template: Template,
    /// Relation labels, sorted; NONE is not among them.
    labels: Vec<String>,
    features: Alphabet,
    weights: Vec<Vec<f64>>,
}

/// A featurized sample with its gold label.
#[derive(Debug, Clone, PartialEq)]
pub struct RelexExample {
    pub features: Vec<String>,
    pub label: String,
}

pub fn featurize(samples: &[RelationSample], store: &KnowledgeStore, exec: Execution) -> Result<Vec<RelexExample>> {
    par::map(exec, samples, |s| {
        Ok(RelexExample {
            features: extract_relation_features(s, store)?,
            label: s.label.clone(),
        })
    })
    .into_iter()
    .collect()
}

pub fn train_relex(examples: &[RelexExample], template: Template, config: &RelexConfig) -> Result<LogRegModel> {
    let mut labels: Vec<&str> = examples.iter().map(|e| e.label.as_str()).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() < 2 {
        return Err(Error::invalid(format!(
            "{template} training needs at least two distinct labels, found {labels:?}"
        )));
    }
    let positive: Vec<String> = labels.iter().filter(|l| **l != NONE_LABEL).map(|l| l.to_string()).collect();

    let mut names: Vec<&str> = examples.iter().flat_map(|e| e.features.iter().map(String::as_str)).collect();
    names.sort_unstable();
    names.dedup();
    let mut features = Alphabet::from_names(names);
    features.freeze();
    let xs: Vec<Vec<usize>> = examples
        .iter()
        .map(|e| {
            let mut v: Vec<usize> = e.features.iter().filter_map(|f| features.index(f)).collect();
            v.sort_unstable();
            v.dedup();
            v
        })
        .collect();

    let nf = features.len();
    let weights = par::map(config.exec, &positive, |label| -> Result<Vec<f64>> {
        let ys: Vec<bool> = examples.iter().map(|e| &e.label == label).collect();
        let (w, _) = maximize(vec![0.0; nf], &config.optimizer, |w| {
            Ok(binary_loglik_grad(&xs, &ys, w, config.l2_variance))
        })?;
        Ok(w)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(LogRegModel {
        template,
        labels: positive,
        features,
        weights,
    })
}

/// A prediction with the per-label probabilities it was chosen from.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationPrediction {
    pub label: String,
    pub probabilities: Vec<(String, f64)>,
}

impl LogRegModel {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn probabilities(&self, features: &[String]) -> Vec<(String, f64)> {
        let mut idx: Vec<usize> = features.iter().filter_map(|f| self.features.index(f)).collect();
        idx.sort_unstable();
        idx.dedup();
        self.labels
            .iter()
            .zip(&self.weights)
            .map(|(l, w)| (l.clone(), sigmoid(idx.iter().map(|&f| w[f]).sum())))
            .collect()
    }

    /// Highest-probability label if it reaches `threshold`, else NONE. Ties
    /// go to the lexicographically smaller label.
    pub fn predict(&self, features: &[String], threshold: f64) -> RelationPrediction {
        let probabilities = self.probabilities(features);
        let mut best: Option<&(String, f64)> = None;
        for p in &probabilities {
            if best.is_none_or(|b| p.1 > b.1) {
                best = Some(p);
            }
        }
        let label = match best {
            Some((l, p)) if *p >= threshold => l.clone(),
            _ => NONE_LABEL.to_owned(),
        };
        RelationPrediction { label, probabilities }
    }

    pub fn kind(&self) -> ModelKind {
        match self.template {
            Template::Ere => ModelKind::RelexEre,
            Template::Tre => ModelKind::RelexTre,
        }
    }

    pub fn to_model_file(&self) -> Result<ModelFile> {
        let mut file = ModelFile::new(self.kind());
        for (i, l) in self.labels.iter().enumerate() {
            file.push("@label", l, i as f64);
        }
        for (l, w) in self.labels.iter().zip(&self.weights) {
            for (f, name) in self.features.iter().enumerate() {
                if name.starts_with('@') {
                    return Err(Error::invalid(format!("feature name {name:?} is reserved")));
                }
                if w[f] != 0.0 {
                    file.push(name, l, w[f]);
                }
            }
        }
        Ok(file)
    }

    pub fn from_model_file(file: &ModelFile) -> Result<Self> {
        let template = match file.kind {
            ModelKind::RelexEre => Template::Ere,
            ModelKind::RelexTre => Template::Tre,
            other => return Err(Error::Load(format!("expected a relex model, found {other}"))),
        };
        let mut labels: Vec<(usize, String)> = Vec::new();
        let mut names: Vec<&str> = Vec::new();
        for e in &file.entries {
            if e.feature == "@label" {
                labels.push((e.weight as usize, e.label.clone()));
            } else {
                names.push(&e.feature);
            }
        }
        labels.sort();
        let labels: Vec<String> = labels.into_iter().map(|(_, l)| l).collect();
        names.sort_unstable();
        names.dedup();
        let mut features = Alphabet::from_names(names);
        features.freeze();
        let mut weights = vec![vec![0.0; features.len()]; labels.len()];
        for e in file.entries.iter().filter(|e| e.feature != "@label") {
            let y = labels
                .iter()
                .position(|l| *l == e.label)
                .ok_or_else(|| Error::Load(format!("weight for undeclared label {:?}", e.label)))?;
            let f = features.index(&e.feature).expect("feature interned above");
            weights[y][f] = e.weight;
        }
        Ok(LogRegModel {
            template,
            labels,
            features,
            weights,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryTemplate {
    E,
    Ere,
    Tre,
}

impl fmt::Display for QueryTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryTemplate::E => "E",
            QueryTemplate::Ere => "ERE",
            QueryTemplate::Tre => "TRE",
        })
    }
}

/// One structured reading of (part of) a query.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpretation {
    pub template: QueryTemplate,
    pub arg1: RelationArg,
    /// Second argument; absent for template E.
    pub arg2: Option<MentionSpan>,
    pub relation: Option<String>,
    pub probability: Option<f64>,
}

impl Interpretation {
    pub fn to_json(&self, tokens: &[Token]) -> serde_json::Value {
        let text = |s: usize, e: usize| {
            tokens[s..e].iter().map(|t| t.surface.as_str()).collect::<Vec<_>>().join(" ")
        };
        let arg = |a: &RelationArg| match a {
            RelationArg::Span(s) => serde_json::json!({
                "start": s.start, "end": s.end, "text": text(s.start, s.end),
                "type": s.entity_type,
            }),
            RelationArg::TypeWord { position, entity_type } => serde_json::json!({
                "type_word": position, "text": text(*position, position + 1), "type": entity_type,
            }),
        };
        serde_json::json!({
            "template": self.template.to_string(),
            "arg1": arg(&self.arg1),
            "arg2": self.arg2.as_ref().map(|s| arg(&RelationArg::Span(s.clone()))),
            "relation": self.relation,
            "probability": self.probability,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryInterpretation {
    /// E-R-E if any pair is related, else T-R-E if any type word applies,
    /// else E when the query has at least one mention.
    pub template: Option<QueryTemplate>,
    pub interpretations: Vec<Interpretation>,
}

/// Runs E-R-E over all mention pairs, then T-R-E over mentions left
/// unrelated, and labels remaining mentions as template E.
pub fn classify_query(
    tokens: &[Token],
    spans: &[MentionSpan],
    ere: Option<&LogRegModel>,
    tre: Option<&LogRegModel>,
    store: &KnowledgeStore,
    threshold: f64,
) -> Result<QueryInterpretation> {
    let mut sorted: Vec<MentionSpan> = spans.to_vec();
    sorted.sort();
    let mut used = vec![false; sorted.len()];
    let mut out = Vec::new();
    if let Some(model) = ere {
        for i in 0..sorted.len() {
            for j in i + 1..sorted.len() {
                if used[i] || used[j] {
                    continue;
                }
                let sample = RelationSample {
                    tokens: tokens.to_vec(),
                    template: Template::Ere,
                    arg1: RelationArg::Span(sorted[i].clone()),
                    arg2: sorted[j].clone(),
                    label: NONE_LABEL.to_owned(),
                };
                let pred = model.predict(&extract_relation_features(&sample, store)?, threshold);
                if pred.label != NONE_LABEL {
                    used[i] = true;
                    used[j] = true;
                    let p = pred.probabilities.iter().find(|(l, _)| *l == pred.label).map(|x| x.1);
                    out.push(Interpretation {
                        template: QueryTemplate::Ere,
                        arg1: sample.arg1,
                        arg2: Some(sample.arg2),
                        relation: Some(pred.label),
                        probability: p,
                    });
                }
            }
        }
    }
    if let Some(model) = tre {
        let words = type_words(tokens, &sorted, store);
        for i in 0..sorted.len() {
            if used[i] {
                continue;
            }
            let mut best: Option<(f64, Interpretation)> = None;
            for &(position, ty) in &words {
                let sample = RelationSample {
                    tokens: tokens.to_vec(),
                    template: Template::Tre,
                    arg1: RelationArg::TypeWord {
                        position,
                        entity_type: ty.to_owned(),
                    },
                    arg2: sorted[i].clone(),
                    label: NONE_LABEL.to_owned(),
                };
                let pred = model.predict(&extract_relation_features(&sample, store)?, threshold);
                if pred.label == NONE_LABEL {
                    continue;
                }
                let p = pred.probabilities.iter().find(|(l, _)| *l == pred.label).map_or(0.0, |x| x.1);
                if best.as_ref().is_none_or(|(q, _)| p > *q) {
                    best = Some((
                        p,
                        Interpretation {
                            template: QueryTemplate::Tre,
                            arg1: sample.arg1,
                            arg2: Some(sample.arg2),
                            relation: Some(pred.label),
                            probability: Some(p),
                        },
                    ));
                }
            }
            if let Some((_, interp)) = best {
                used[i] = true;
                out.push(interp);
            }
        }
    }
    for (i, s) in sorted.iter().enumerate() {
        if !used[i] {
            out.push(Interpretation {
                template: QueryTemplate::E,
                arg1: RelationArg::Span(s.clone()),
                arg2: None,
                relation: None,
                probability: None,
            });
        }
    }
    let has = |t| out.iter().any(|i: &Interpretation| i.template == t);
    let template = [QueryTemplate::Ere, QueryTemplate::Tre, QueryTemplate::E]
        .into_iter()
        .find(|&t| has(t));
    Ok(QueryInterpretation {
        template,
        interpretations: out,
    })
}
