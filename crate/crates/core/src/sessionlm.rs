//! Order-n Markov models over the entity sequence of a session.
//!
//! Counts are kept for every n-gram order up to `n`, plus counts of entities
//! given the types of the preceding `n - 1` entities. Sessions are padded
//! with `<s>` and, optionally, first occurrences are rewritten to `<Unk>`
//! during training so unseen test entities get probability mass.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::io::BufRead;

use indexmap::IndexSet;

use crate::error::{Error, Result};
use crate::par::{self, Execution};

pub const UNK: &str = "<Unk>";
pub const BOS: &str = "<s>";

/// One entity occurrence with its type.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EntityItem {
    pub entity: String,
    pub entity_type: String,
}

impl EntityItem {
    pub fn new(entity: impl Into<String>, entity_type: impl Into<String>) -> Self {
        EntityItem {
            entity: entity.into(),
            entity_type: entity_type.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Smoothing {
    Mle,
    Additive { delta: f64 },
    /// `weights[k - 1]` weighs the order-k MLE component; `type_weight`
    /// weighs the entity-given-context-types component.
    Interpolated { weights: Vec<f64>, type_weight: f64 },
}

impl Smoothing {
    pub fn validate(&self, order: usize) -> Result<()> {
        match self {
            Smoothing::Mle => Ok(()),
            Smoothing::Additive { delta } if *delta > 0.0 && delta.is_finite() => Ok(()),
            Smoothing::Additive { delta } => Err(Error::invalid(format!("additive delta must be positive, got {delta}"))),
            Smoothing::Interpolated { weights, type_weight } => {
                if weights.len() != order {
                    return Err(Error::invalid(format!(
                        "{} interpolation weights for an order-{order} model",
                        weights.len()
                    )));
                }
                if weights.iter().chain([type_weight]).any(|w| !(*w >= 0.0) || !w.is_finite()) {
                    return Err(Error::invalid("interpolation weights must be nonnegative"));
                }
                let sum: f64 = weights.iter().sum::<f64>() + type_weight;
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(format!("interpolation weights sum to {sum}, not 1")));
                }
                Ok(())
            }
        }
    }
}

type Key = Vec<u32>;

#[derive(Debug, Clone, PartialEq, Default)]
struct Tables {
    /// `grams[k - 1]`: k-gram counts, context then predicted entity.
    grams: Vec<HashMap<Key, u64>>,
    /// `contexts[k - 1]`: totals over extensions of each (k-1)-gram context.
    contexts: Vec<HashMap<Key, u64>>,
    /// Type context followed by the predicted entity.
    typed: HashMap<Key, u64>,
    typed_contexts: HashMap<Key, u64>,
}

impl Tables {
    fn new(order: usize) -> Self {
        Tables {
            grams: vec![HashMap::new(); order],
            contexts: vec![HashMap::new(); order],
            ..Tables::default()
        }
    }

    fn merge(mut self, other: Tables) -> Tables {
        fn add(a: &mut HashMap<Key, u64>, b: HashMap<Key, u64>) {
            for (k, v) in b {
                *a.entry(k).or_default() += v;
            }
        }
        for (a, b) in self.grams.iter_mut().zip(other.grams) {
            add(a, b);
        }
        for (a, b) in self.contexts.iter_mut().zip(other.contexts) {
            add(a, b);
        }
        add(&mut self.typed, other.typed);
        add(&mut self.typed_contexts, other.typed_contexts);
        self
    }
}

/// Entity n-gram counts for `k ≤ n` and type-context counts.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramCounts {
    order: usize,
    unk: bool,
    entities: IndexSet<String>,
    types: IndexSet<String>,
    /// Predicted-entity symbols seen in training, plus `<Unk>`.
    vocab: HashSet<u32>,
    tables: Tables,
    total: u64,
}

const UNK_ID: u32 = 0;
const BOS_ID: u32 = 1;

/// Replaces the first occurrence, in stream order, of every entity by `<Unk>`.
pub fn apply_first_occurrence_unk(sessions: &[Vec<EntityItem>]) -> Vec<Vec<EntityItem>> {
    let mut seen: HashSet<&str> = HashSet::new();
    sessions
        .iter()
        .map(|s| {
            s.iter()
                .map(|item| {
                    if seen.insert(&item.entity) {
                        EntityItem::new(UNK, item.entity_type.clone())
                    } else {
                        item.clone()
                    }
                })
                .collect()
        })
        .collect()
}

fn count_session(order: usize, ents: &[u32], types: &[u32]) -> Tables {
    let mut t = Tables::new(order);
    let pad = order - 1;
    let mut padded = vec![BOS_ID; pad];
    padded.extend_from_slice(ents);
    let mut tpadded = vec![BOS_ID; pad];
    tpadded.extend_from_slice(types);
    for i in pad..padded.len() {
        for k in 1..=order {
            let gram = &padded[i + 1 - k..=i];
            *t.grams[k - 1].entry(gram.to_vec()).or_default() += 1;
            *t.contexts[k - 1].entry(gram[..k - 1].to_vec()).or_default() += 1;
        }
        let tctx = &tpadded[i - pad..i];
        let mut key = tctx.to_vec();
        key.push(padded[i]);
        *t.typed.entry(key).or_default() += 1;
        *t.typed_contexts.entry(tctx.to_vec()).or_default() += 1;
    }
    t
}

/// Counts all orders up to `order` over the training sessions.
pub fn fit_counts(sessions: &[Vec<EntityItem>], order: usize, unk: bool, exec: Execution) -> Result<NgramCounts> {
    if order < 1 {
        return Err(Error::invalid("model order must be at least 1"));
    }
    let rewritten;
    let sessions = if unk {
        rewritten = apply_first_occurrence_unk(sessions);
        &rewritten
    } else {
        sessions
    };
    let mut entities: IndexSet<String> = IndexSet::new();
    entities.insert(UNK.to_owned());
    entities.insert(BOS.to_owned());
    let mut types: IndexSet<String> = IndexSet::new();
    types.insert(UNK.to_owned());
    types.insert(BOS.to_owned());
    let encoded: Vec<(Vec<u32>, Vec<u32>)> = sessions
        .iter()
        .map(|s| {
            let e = s.iter().map(|x| entities.insert_full(x.entity.clone()).0 as u32).collect();
            let t = s.iter().map(|x| types.insert_full(x.entity_type.clone()).0 as u32).collect();
            (e, t)
        })
        .collect();
    let chunk = encoded.len().div_ceil(16).max(1);
    let tables = par::fold_chunks(
        exec,
        &encoded,
        chunk,
        |c| {
            c.iter()
                .map(|(e, t)| count_session(order, e, t))
                .fold(Tables::new(order), Tables::merge)
        },
        Tables::merge,
    )
    .unwrap_or_else(|| Tables::new(order));
    Ok(NgramCounts::from_tables(order, unk, entities, types, tables))
}

impl NgramCounts {
    fn from_tables(order: usize, unk: bool, entities: IndexSet<String>, types: IndexSet<String>, tables: Tables) -> Self {
        let mut vocab: HashSet<u32> = tables.grams[0].keys().map(|k| k[0]).collect();
        vocab.insert(UNK_ID);
        let total = tables.contexts[0].get(&Vec::new()).copied().unwrap_or(0);
        NgramCounts {
            order,
            unk,
            entities,
            types,
            vocab,
            tables,
            total,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn unk(&self) -> bool {
        self.unk
    }

    /// Number of predicted events counted.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// `|V|`, counting `<Unk>` whether or not it was seen.
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocabulary(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.vocab.iter().map(|&i| self.entities[i as usize].as_str()).collect();
        v.sort_unstable();
        v
    }

    fn entity_id(&self, e: &str) -> Option<u32> {
        self.entities.get_index_of(e).map(|i| i as u32)
    }

    /// Count of an entity sequence (length ≤ n); `<s>` may appear as padding.
    pub fn count(&self, gram: &[&str]) -> u64 {
        if gram.is_empty() || gram.len() > self.order {
            return 0;
        }
        let Some(key) = gram.iter().map(|e| self.entity_id(e)).collect::<Option<Key>>() else {
            return 0;
        };
        self.tables.grams[gram.len() - 1].get(&key).copied().unwrap_or(0)
    }

    /// Sum of counts over all one-entity extensions of `context`.
    pub fn context_count(&self, context: &[&str]) -> u64 {
        if context.len() >= self.order {
            return 0;
        }
        let Some(key) = context.iter().map(|e| self.entity_id(e)).collect::<Option<Key>>() else {
            return 0;
        };
        self.tables.contexts[context.len()].get(&key).copied().unwrap_or(0)
    }

    /// Maps entities outside the vocabulary to `<Unk>`.
    pub fn map_unknown(&self, session: &[EntityItem]) -> Vec<EntityItem> {
        session
            .iter()
            .map(|x| match self.entity_id(&x.entity) {
                Some(id) if self.vocab.contains(&id) => x.clone(),
                _ => EntityItem::new(UNK, x.entity_type.clone()),
            })
            .collect()
    }

    fn encode_context(&self, history: &[EntityItem]) -> (Key, Key) {
        let pad = self.order - 1;
        let mut ents = vec![BOS_ID; pad];
        let mut tys = vec![BOS_ID; pad];
        let start = history.len().saturating_sub(pad);
        for (slot, item) in history[start..].iter().enumerate() {
            let at = pad - (history.len() - start) + slot;
            ents[at] = match self.entity_id(&item.entity) {
                Some(id) if self.vocab.contains(&id) => id,
                _ => UNK_ID,
            };
            tys[at] = self.types.get_index_of(&item.entity_type).map_or(u32::MAX, |i| i as u32);
        }
        (ents, tys)
    }

    /// Order-k MLE as `(count, context count)`.
    fn component(&self, k: usize, e: u32, ctx: &[u32]) -> (u64, u64) {
        let c = &ctx[ctx.len() + 1 - k..];
        let cc = self.tables.contexts[k - 1].get(c).copied().unwrap_or(0);
        if cc == 0 {
            return (0, 0);
        }
        let mut key = c.to_vec();
        key.push(e);
        (self.tables.grams[k - 1].get(&key).copied().unwrap_or(0), cc)
    }

    fn type_component(&self, e: u32, tctx: &[u32]) -> (u64, u64) {
        let cc = self.tables.typed_contexts.get(tctx).copied().unwrap_or(0);
        if cc == 0 {
            return (0, 0);
        }
        let mut key = tctx.to_vec();
        key.push(e);
        (self.tables.typed.get(&key).copied().unwrap_or(0), cc)
    }

    /// Component probabilities for one event, `None` where the context is
    /// unseen. Order 1..n, then the type component.
    fn components(&self, e: u32, ctx: &[u32], tctx: &[u32]) -> Vec<Option<f64>> {
        let ratio = |(c, cc): (u64, u64)| (cc > 0).then(|| c as f64 / cc as f64);
        let mut out: Vec<Option<f64>> = (1..=self.order).map(|k| ratio(self.component(k, e, ctx))).collect();
        out.push(ratio(self.type_component(e, tctx)));
        out
    }

    fn prob_ids(&self, smoothing: &Smoothing, e: u32, ctx: &[u32], tctx: &[u32]) -> f64 {
        match smoothing {
            Smoothing::Mle => {
                let (c, cc) = self.component(self.order, e, ctx);
                if cc == 0 { 0.0 } else { c as f64 / cc as f64 }
            }
            Smoothing::Additive { delta } => {
                let (c, cc) = self.component(self.order, e, ctx);
                (c as f64 + delta) / (cc as f64 + delta * self.vocab_size() as f64)
            }
            Smoothing::Interpolated { weights, type_weight } => {
                let comps = self.components(e, ctx, tctx);
                mix(&comps, weights, *type_weight, self.vocab_size())
            }
        }
    }

    /// `P(e | history)`; only the last `n - 1` history items matter.
    /// Entities outside the vocabulary are treated as `<Unk>`.
    pub fn prob(&self, smoothing: &Smoothing, entity: &str, history: &[EntityItem]) -> Result<f64> {
        smoothing.validate(self.order)?;
        let e = match self.entity_id(entity) {
            Some(id) if self.vocab.contains(&id) => id,
            _ => UNK_ID,
        };
        let (ctx, tctx) = self.encode_context(history);
        Ok(self.prob_ids(smoothing, e, &ctx, &tctx))
    }

    /// `Σ_i ln P(e_i | e_{i-n+1}..e_{i-1})`; may be `-∞` under MLE.
    pub fn session_log_prob(&self, smoothing: &Smoothing, session: &[EntityItem]) -> Result<f64> {
        smoothing.validate(self.order)?;
        let mapped = self.map_unknown(session);
        let mut lp = 0.0;
        for i in 0..mapped.len() {
            let (ctx, tctx) = self.encode_context(&mapped[..i]);
            let e = self.entity_id(&mapped[i].entity).expect("mapped into vocabulary");
            lp += self.prob_ids(smoothing, e, &ctx, &tctx).ln();
        }
        Ok(lp)
    }

    /// Writes the counts as TSV: one `ngram \t count` row per entity n-gram
    /// and one `@type ... entity \t count` row per type-context count.
    pub fn to_tsv(&self) -> String {
        let mut rows: Vec<String> = Vec::new();
        let name = |i: &u32| self.entities[*i as usize].as_str();
        for table in &self.tables.grams {
            for (k, v) in table {
                rows.push(format!("{}\t{v}", k.iter().map(name).collect::<Vec<_>>().join(" ")));
            }
        }
        for (k, v) in &self.tables.typed {
            let (ctx, e) = k.split_at(k.len() - 1);
            let mut cells: Vec<String> = ctx.iter().map(|t| format!("@{}", self.types[*t as usize])).collect();
            cells.push(name(&e[0]).to_owned());
            if ctx.is_empty() {
                cells.insert(0, "@".to_owned());
            }
            rows.push(format!("{}\t{v}", cells.join(" ")));
        }
        rows.sort();
        let mut out = format!("# session-parse-counts v1 order={} unk={}\n", self.order, self.unk);
        for r in rows {
            let _ = writeln!(out, "{r}");
        }
        out
    }

    pub fn parse_tsv<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines.next().transpose()?.ok_or_else(|| Error::Load("empty counts file".into()))?;
        let rest = header
            .strip_prefix("# session-parse-counts v1 ")
            .ok_or_else(|| Error::Version(format!("unrecognized counts header {header:?}")))?;
        let mut order = None;
        let mut unk = None;
        for kv in rest.split_whitespace() {
            match kv.split_once('=') {
                Some(("order", v)) => order = v.parse::<usize>().ok(),
                Some(("unk", v)) => unk = v.parse::<bool>().ok(),
                _ => {}
            }
        }
        let (Some(order), Some(unk)) = (order, unk) else {
            return Err(Error::Load(format!("counts header lacks order/unk: {header:?}")));
        };
        if order == 0 {
            return Err(Error::Load("counts order must be at least 1".into()));
        }
        let mut entities: IndexSet<String> = [UNK, BOS].iter().map(|s| s.to_string()).collect();
        let mut types: IndexSet<String> = entities.clone();
        let mut tables = Tables::new(order);
        for (i, line) in lines.enumerate() {
            let line = line?;
            let line_no = i + 2;
            if line.is_empty() {
                continue;
            }
            let (gram, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(line_no, "expected `ngram \\t count`"))?;
            let count: u64 = count
                .parse()
                .map_err(|_| Error::parse(line_no, format!("bad count {count:?}")))?;
            let cells: Vec<&str> = gram.split(' ').collect();
            if cells[0].starts_with('@') {
                let (ctx, e) = cells.split_at(cells.len() - 1);
                let mut key: Key = ctx
                    .iter()
                    .filter(|c| **c != "@")
                    .map(|c| types.insert_full(c[1..].to_owned()).0 as u32)
                    .collect();
                if key.len() != order - 1 {
                    return Err(Error::parse(line_no, "type context length must be order - 1"));
                }
                *tables.typed_contexts.entry(key.clone()).or_default() += count;
                key.push(entities.insert_full(e[0].to_owned()).0 as u32);
                tables.typed.insert(key, count);
            } else {
                if cells.len() > order {
                    return Err(Error::parse(line_no, format!("{}-gram in an order-{order} file", cells.len())));
                }
                let key: Key = cells.iter().map(|c| entities.insert_full(c.to_string()).0 as u32).collect();
                let k = key.len();
                *tables.contexts[k - 1].entry(key[..k - 1].to_vec()).or_default() += count;
                tables.grams[k - 1].insert(key, count);
            }
        }
        Ok(NgramCounts::from_tables(order, unk, entities, types, tables))
    }
}

/// Weighted mixture over the components with a seen context, renormalized
/// over those components; uniform over `V` if none qualifies.
fn mix(comps: &[Option<f64>], weights: &[f64], type_weight: f64, vocab: usize) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, w) in comps.iter().zip(weights.iter().chain([&type_weight])) {
        if let Some(p) = p {
            num += w * p;
            den += w;
        }
    }
    if den > 0.0 {
        num / den
    } else {
        1.0 / vocab as f64
    }
}

/// Mean negative log-probability per entity over `sessions`, in nats or bits.
pub fn cross_entropy(counts: &NgramCounts, smoothing: &Smoothing, sessions: &[Vec<EntityItem>], bits: bool) -> Result<f64> {
    let n: usize = sessions.iter().map(Vec::len).sum();
    if n == 0 {
        return Err(Error::invalid("cross-entropy needs at least one test entity"));
    }
    let mut total = 0.0;
    for s in sessions {
        total -= counts.session_log_prob(smoothing, s)?;
    }
    let nats = total / n as f64;
    Ok(if bits { nats / std::f64::consts::LN_2 } else { nats })
}

/// All weight vectors on the simplex grid with `parts` steps, as integer
/// step counts per component.
fn simplex(components: usize, parts: usize) -> Vec<Vec<usize>> {
    if components == 1 {
        return vec![vec![parts]];
    }
    let mut out = Vec::new();
    for first in 0..=parts {
        for mut rest in simplex(components - 1, parts - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Grid search over interpolation weights minimizing dev cross-entropy.
///
/// Ties prefer the lexicographically largest `(λ_n, ..., λ_1, λ_type)`.
pub fn tune_interpolation(counts: &NgramCounts, dev: &[Vec<EntityItem>], step: f64, include_type: bool) -> Result<Smoothing> {
    let n: usize = dev.iter().map(Vec::len).sum();
    if n == 0 {
        return Err(Error::invalid("empty development set"));
    }
    let parts = (1.0 / step).round();
    if !(step > 0.0) || parts < 1.0 || (parts * step - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("grid step {step} does not divide 1")));
    }
    let parts = parts as usize;
    let order = counts.order();
    let mut events: Vec<Vec<Option<f64>>> = Vec::with_capacity(n);
    for s in dev {
        let mapped = counts.map_unknown(s);
        for i in 0..mapped.len() {
            let (ctx, tctx) = counts.encode_context(&mapped[..i]);
            let e = counts.entity_id(&mapped[i].entity).expect("mapped into vocabulary");
            events.push(counts.components(e, &ctx, &tctx));
        }
    }
    let comps = order + usize::from(include_type);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for grid in simplex(comps, parts) {
        let weights: Vec<f64> = grid[..order].iter().map(|&g| g as f64 / parts as f64).collect();
        let type_weight = if include_type { grid[order] as f64 / parts as f64 } else { 0.0 };
        let ce = -events
            .iter()
            .map(|c| mix(c, &weights, type_weight, counts.vocab_size()).ln())
            .sum::<f64>()
            / n as f64;
        // (λ_n, ..., λ_1, λ_type)
        let mut rank: Vec<usize> = grid[..order].iter().rev().copied().collect();
        if include_type {
            rank.push(grid[order]);
        }
        let better = match &best {
            None => true,
            Some((b, r)) => ce < *b || (ce == *b && rank > *r),
        };
        if better {
            best = Some((ce, rank));
        }
    }
    let (_, rank) = best.expect("grid is non-empty");
    let mut weights: Vec<f64> = rank[..order].iter().rev().map(|&g| g as f64 / parts as f64).collect();
    let type_weight = if include_type { rank[order] as f64 / parts as f64 } else { 0.0 };
    // exact sum for validation
    let sum: f64 = weights.iter().sum::<f64>() + type_weight;
    if let Some(w) = weights.iter_mut().rev().find(|w| **w > 0.0) {
        *w += 1.0 - sum;
    }
    Ok(Smoothing::Interpolated { weights, type_weight })
}
