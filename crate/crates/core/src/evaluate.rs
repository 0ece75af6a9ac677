//! Scoring: per-type entity P/R/F1, recall-only scoring, relation recall,
//! and the paired t-test.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::corpus::MentionSpan;
use crate::distsup::{RelationSample, Template};
use crate::error::{Error, Result};
use crate::mention::UNTYPED;

/// `(session id, turn index)`.
pub type TurnKey = (String, usize);

pub type SpanTable = BTreeMap<TurnKey, Vec<MentionSpan>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    FullF1,
    /// Precision is not reported: predictions outside the gold gazetteer
    /// cannot be judged.
    RecallOnly,
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Protocol::FullF1),
            "recall-only" => Ok(Protocol::RecallOnly),
            other => Err(Error::invalid(format!("unknown protocol {other:?}"))),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::FullF1 => "full",
            Protocol::RecallOnly => "recall-only",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Counts {
    pub true_positives: usize,
    pub gold: usize,
    pub predicted: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.true_positives, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.true_positives, self.gold)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }

    fn add(&mut self, other: &Counts) {
        self.true_positives += other.true_positives;
        self.gold += other.gold;
        self.predicted += other.predicted;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 { 0.0 } else { a as f64 / b as f64 }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) }
}

/// Metrics for one row of the report. Precision and F1 are `None` under
/// the recall-only protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub precision: Option<f64>,
    pub recall: f64,
    pub f1: Option<f64>,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub per_type: BTreeMap<String, Counts>,
    pub micro: Counts,
}

impl EvalReport {
    fn scores(&self, c: &Counts) -> Scores {
        let full = self.protocol == Protocol::FullF1;
        Scores {
            precision: full.then(|| c.precision()),
            recall: c.recall(),
            f1: full.then(|| c.f1()),
            support: c.gold,
        }
    }

    pub fn type_scores(&self, entity_type: &str) -> Option<Scores> {
        self.per_type.get(entity_type).map(|c| self.scores(c))
    }

    pub fn micro_scores(&self) -> Scores {
        self.scores(&self.micro)
    }

    /// Unweighted mean over types with gold support.
    pub fn macro_scores(&self) -> Scores {
        let rows: Vec<Scores> = self.per_type.values().filter(|c| c.gold > 0).map(|c| self.scores(c)).collect();
        let n = rows.len().max(1) as f64;
        let mean = |f: &dyn Fn(&Scores) -> Option<f64>| rows.iter().map(f).sum::<Option<f64>>().map(|x| x / n);
        Scores {
            precision: mean(&|s| s.precision),
            recall: rows.iter().map(|s| s.recall).sum::<f64>() / n,
            f1: mean(&|s| s.f1),
            support: self.micro.gold,
        }
    }

    fn rows(&self) -> Vec<(String, Scores)> {
        let mut rows: Vec<(String, Scores)> = self.per_type.iter().map(|(t, c)| (t.clone(), self.scores(c))).collect();
        rows.push(("micro".into(), self.micro_scores()));
        rows.push(("macro".into(), self.macro_scores()));
        rows
    }

    pub fn to_tsv(&self) -> String {
        let cell = |x: Option<f64>| x.map_or("-".to_owned(), |v| format!("{v:.6}"));
        let mut out = String::from("type\tprecision\trecall\tf1\tsupport\n");
        for (name, s) in self.rows() {
            let _ = writeln!(
                out,
                "{name}\t{}\t{}\t{}\t{}",
                cell(s.precision),
                cell(Some(s.recall)),
                cell(s.f1),
                s.support
            );
        }
        out
    }

    /// Human-readable table, metrics multiplied by 100.
    pub fn to_table(&self) -> String {
        let cell = |x: Option<f64>| x.map_or("-".to_owned(), |v| format!("{:.2}", 100.0 * v));
        let rows = self.rows();
        let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(4).max(4);
        let mut out = format!("protocol: {}\n", self.protocol);
        let _ = writeln!(out, "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}", "type", "precision", "recall", "f1", "support");
        for (name, s) in rows {
            let _ = writeln!(
                out,
                "{name:<width$}  {:>9}  {:>9}  {:>9}  {:>7}",
                cell(s.precision),
                cell(Some(s.recall)),
                cell(s.f1),
                s.support
            );
        }
        out
    }
}

fn span_key(s: &MentionSpan) -> (usize, usize, &str) {
    (s.start, s.end, s.entity_type.as_deref().unwrap_or(UNTYPED))
}

fn check_keys<A, B>(gold: &BTreeMap<TurnKey, A>, pred: &BTreeMap<TurnKey, B>) -> Result<()> {
    if let Some(k) = gold.keys().find(|k| !pred.contains_key(*k)) {
        return Err(Error::invalid(format!("turn {}:{} missing from predictions", k.0, k.1)));
    }
    if let Some(k) = pred.keys().find(|k| !gold.contains_key(*k)) {
        return Err(Error::invalid(format!("turn {}:{} missing from gold", k.0, k.1)));
    }
    Ok(())
}

/// Per-type exact-match counts for one turn.
fn turn_counts(gold: &[MentionSpan], pred: &[MentionSpan]) -> BTreeMap<String, Counts> {
    let mut out: BTreeMap<String, Counts> = BTreeMap::new();
    let mut remaining: Vec<(usize, usize, &str)> = gold.iter().map(span_key).collect();
    for g in &remaining {
        out.entry(g.2.to_owned()).or_default().gold += 1;
    }
    for p in pred.iter().map(span_key) {
        let c = out.entry(p.2.to_owned()).or_default();
        c.predicted += 1;
        if let Some(i) = remaining.iter().position(|g| *g == p) {
            remaining.swap_remove(i);
            c.true_positives += 1;
        }
    }
    out
}

/// Scores predicted against gold spans by exact `(start, end, type)` match.
/// Untyped spans count under the untyped label.
pub fn score_entities(gold: &SpanTable, pred: &SpanTable, protocol: Protocol) -> Result<EvalReport> {
    check_keys(gold, pred)?;
    let mut per_type: BTreeMap<String, Counts> = BTreeMap::new();
    for (k, g) in gold {
        for (t, c) in turn_counts(g, &pred[k]) {
            per_type.entry(t).or_default().add(&c);
        }
    }
    let mut micro = Counts::default();
    for c in per_type.values() {
        micro.add(c);
    }
    Ok(EvalReport {
        protocol,
        per_type,
        micro,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    Session,
    Query,
}

/// One micro score per significance unit, in key order: F1 under
/// `FullF1` (1.0 for a unit with no gold and no predictions), recall under
/// `RecallOnly` (units without gold are skipped).
pub fn unit_scores(gold: &SpanTable, pred: &SpanTable, protocol: Protocol, unit: Unit) -> Result<Vec<f64>> {
    check_keys(gold, pred)?;
    let mut units: BTreeMap<(String, usize), Counts> = BTreeMap::new();
    for (k, g) in gold {
        let key = match unit {
            Unit::Session => (k.0.clone(), 0),
            Unit::Query => k.clone(),
        };
        let slot = units.entry(key).or_default();
        for c in turn_counts(g, &pred[k]).values() {
            slot.add(c);
        }
    }
    Ok(units
        .values()
        .filter_map(|c| match protocol {
            Protocol::FullF1 if c.gold + c.predicted == 0 => Some(1.0),
            Protocol::FullF1 => Some(c.f1()),
            Protocol::RecallOnly => (c.gold > 0).then(|| c.recall()),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RelationRecall {
    pub positives: usize,
    pub recovered: usize,
}

impl RelationRecall {
    pub fn recall(&self) -> f64 {
        ratio(self.recovered, self.positives)
    }
}

/// Recall over gold positives (label other than `NONE`), per template.
pub fn score_relations(gold: &[RelationSample], predicted: &[String]) -> Result<BTreeMap<Template, RelationRecall>> {
    if gold.len() != predicted.len() {
        return Err(Error::invalid(format!(
            "{} gold relation samples but {} predictions",
            gold.len(),
            predicted.len()
        )));
    }
    let mut out: BTreeMap<Template, RelationRecall> = BTreeMap::new();
    for (g, p) in gold.iter().zip(predicted) {
        let slot = out.entry(g.template).or_default();
        if g.is_positive() {
            slot.positives += 1;
            if *p == g.label {
                slot.recovered += 1;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    pub mean_difference: f64,
}

/// Two-sided paired t-test on `a - b`.
///
/// All-zero differences give `t = 0, p = 1`. Zero variance with a nonzero
/// mean gives an infinite `t` and `p = f64::MIN_POSITIVE`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("paired samples of length {} and {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid("paired t-test needs at least two pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("paired t-test input".into()));
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TTest { t: 0.0, p: 1.0, df, mean_difference: 0.0 }
        } else {
            TTest {
                t: f64::INFINITY.copysign(mean),
                p: f64::MIN_POSITIVE,
                df,
                mean_difference: mean,
            }
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let p = student_t_two_sided(t, df as f64).clamp(0.0, 1.0);
    Ok(TTest { t, p, df, mean_difference: mean })
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    regularized_beta(df / (df + t * t), 0.5 * df, 0.5)
}

/// Lanczos approximation (g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = C[0];
    for (i, c) in C.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_fraction(x, a, b) / a
    } else {
        1.0 - ln_front.exp() * beta_fraction(1.0 - x, b, a) / b
    }
}

/// Continued fraction for the incomplete beta, modified Lentz.
fn beta_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Types present in either table, sorted.
pub fn types_in(tables: &[&SpanTable]) -> BTreeSet<String> {
    tables
        .iter()
        .flat_map(|t| t.values().flatten())
        .map(|s| span_key(s).2.to_owned())
        .collect()
}
