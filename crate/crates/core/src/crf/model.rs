use std::collections::BTreeMap;

use super::Alphabet;
use crate::corpus::{ModelFile, ModelKind};
use crate::error::{Error, Result};

/// Allowed label transitions, including which labels may start or end a
/// sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionMask {
    n: usize,
    pairs: Vec<bool>,
    start: Vec<bool>,
    end: Vec<bool>,
}

impl TransitionMask {
    pub fn full(n: usize) -> Self {
        TransitionMask {
            n,
            pairs: vec![true; n * n],
            start: vec![true; n],
            end: vec![true; n],
        }
    }

    /// BIO constraints over label names: `I-X` only after `B-X` or `I-X`, and
    /// never first.
    pub fn bio(labels: &Alphabet) -> Self {
        let n = labels.len();
        let mut m = Self::full(n);
        for (c, name) in labels.iter().enumerate() {
            if let Some(ty) = name.strip_prefix("I-") {
                m.start[c] = false;
                for (p, prev) in labels.iter().enumerate() {
                    let ok = prev.strip_prefix("B-") == Some(ty) || prev.strip_prefix("I-") == Some(ty);
                    m.pairs[p * n + c] = ok;
                }
            }
        }
        m
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn allows(&self, prev: usize, cur: usize) -> bool {
        self.pairs[prev * self.n + cur]
    }

    pub fn allows_start(&self, y: usize) -> bool {
        self.start[y]
    }

    pub fn allows_end(&self, y: usize) -> bool {
        self.end[y]
    }

    pub fn forbid(&mut self, prev: usize, cur: usize) {
        self.pairs[prev * self.n + cur] = false;
    }

    pub fn forbid_start(&mut self, y: usize) {
        self.start[y] = false;
    }

    pub fn forbid_end(&mut self, y: usize) {
        self.end[y] = false;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelConstraint {
    Observed(usize),
    /// Unobserved in training; unconstrained when decoding.
    Hidden,
}

/// Feature indices per position plus per-position label constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSequence {
    pub features: Vec<Vec<usize>>,
    pub labels: Vec<LabelConstraint>,
}

impl ObservationSequence {
    /// A sequence with every position hidden.
    pub fn unlabeled(features: Vec<Vec<usize>>) -> Self {
        let labels = vec![LabelConstraint::Hidden; features.len()];
        ObservationSequence { features, labels }
    }

    pub fn labeled(features: Vec<Vec<usize>>, labels: &[usize]) -> Self {
        ObservationSequence {
            labels: labels.iter().map(|&y| LabelConstraint::Observed(y)).collect(),
            features,
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn hidden_count(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| matches!(l, LabelConstraint::Hidden))
            .count()
    }

    /// Observed labels, if every position is observed.
    pub fn observed_labels(&self) -> Option<Vec<usize>> {
        self.labels
            .iter()
            .map(|l| match l {
                LabelConstraint::Observed(y) => Some(*y),
                LabelConstraint::Hidden => None,
            })
            .collect()
    }
}

/// Label and feature alphabets with a flat weight vector.
///
/// Layout: emissions `f·L + y`, then transitions `L·L`, then start and end
/// weights `L` each.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfModel {
    labels: Alphabet,
    features: Alphabet,
    weights: Vec<f64>,
    mask: TransitionMask,
}

const LABEL: &str = "@label";
const START: &str = "@start";
const END: &str = "@end";
const TRANS: &str = "@trans:";
const FORBID: &str = "@forbid:";
const FORBID_START: &str = "@forbid-start";
const FORBID_END: &str = "@forbid-end";

impl CrfModel {
    pub fn new(labels: Alphabet, features: Alphabet, mask: TransitionMask) -> Self {
        assert_eq!(labels.len(), mask.len(), "mask size must match label count");
        let n = Self::weight_len(features.len(), labels.len());
        CrfModel {
            labels,
            features,
            weights: vec![0.0; n],
            mask,
        }
    }

    pub fn weight_len(features: usize, labels: usize) -> usize {
        features * labels + labels * labels + 2 * labels
    }

    pub fn labels(&self) -> &Alphabet {
        &self.labels
    }

    pub fn features(&self) -> &Alphabet {
        &self.features
    }

    pub fn mask(&self) -> &TransitionMask {
        &self.mask
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, w: Vec<f64>) {
        assert_eq!(w.len(), self.weights.len());
        self.weights = w;
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    #[inline]
    pub fn emission_index(&self, feature: usize, label: usize) -> usize {
        feature * self.labels.len() + label
    }

    #[inline]
    pub fn transition_index(&self, prev: usize, cur: usize) -> usize {
        let l = self.labels.len();
        self.features.len() * l + prev * l + cur
    }

    #[inline]
    pub fn start_index(&self, label: usize) -> usize {
        let l = self.labels.len();
        self.features.len() * l + l * l + label
    }

    #[inline]
    pub fn end_index(&self, label: usize) -> usize {
        let l = self.labels.len();
        self.features.len() * l + l * l + l + label
    }

    /// First index past the emission block.
    pub fn emission_len(&self) -> usize {
        self.features.len() * self.labels.len()
    }

    /// Maps feature names through the (frozen) alphabet, dropping unknowns.
    pub fn observe(&self, features: &[Vec<String>]) -> ObservationSequence {
        ObservationSequence::unlabeled(self.map_features(features))
    }

    pub fn map_features(&self, features: &[Vec<String>]) -> Vec<Vec<usize>> {
        features
            .iter()
            .map(|fs| {
                let mut idx: Vec<usize> = fs.iter().filter_map(|f| self.features.index(f)).collect();
                idx.sort_unstable();
                idx.dedup();
                idx
            })
            .collect()
    }

    pub fn label_names(&self, labels: &[usize]) -> Vec<String> {
        labels
            .iter()
            .map(|&y| self.labels.name(y).expect("label index in range").to_owned())
            .collect()
    }

    /// Writes labels, mask and every non-zero weight.
    pub fn to_model_file(&self, kind: ModelKind) -> Result<ModelFile> {
        let mut file = ModelFile::new(kind);
        let names: Vec<&str> = self.labels.iter().collect();
        for (i, l) in names.iter().enumerate() {
            file.push(LABEL, *l, i as f64);
        }
        for (f, fname) in self.features.iter().enumerate() {
            if fname.starts_with('@') {
                return Err(Error::invalid(format!("feature name {fname:?} uses the reserved '@' prefix")));
            }
            for (y, l) in names.iter().enumerate() {
                let w = self.weights[self.emission_index(f, y)];
                if w != 0.0 {
                    file.push(fname, *l, w);
                }
            }
        }
        for (p, pl) in names.iter().enumerate() {
            for (c, cl) in names.iter().enumerate() {
                let w = self.weights[self.transition_index(p, c)];
                if w != 0.0 {
                    file.push(format!("{TRANS}{pl}"), *cl, w);
                }
                if !self.mask.allows(p, c) {
                    file.push(format!("{FORBID}{pl}"), *cl, 0.0);
                }
            }
        }
        for (y, l) in names.iter().enumerate() {
            for (key, idx) in [(START, self.start_index(y)), (END, self.end_index(y))] {
                if self.weights[idx] != 0.0 {
                    file.push(key, *l, self.weights[idx]);
                }
            }
            if !self.mask.allows_start(y) {
                file.push(FORBID_START, *l, 0.0);
            }
            if !self.mask.allows_end(y) {
                file.push(FORBID_END, *l, 0.0);
            }
        }
        Ok(file)
    }

    pub fn from_model_file(file: &ModelFile) -> Result<Self> {
        let mut label_idx: BTreeMap<usize, String> = BTreeMap::new();
        for e in file.entries.iter().filter(|e| e.feature == LABEL) {
            let i = e.weight as usize;
            if e.weight < 0.0 || e.weight.fract() != 0.0 || label_idx.insert(i, e.label.clone()).is_some() {
                return Err(Error::invalid(format!("bad label index for {}", e.label)));
            }
        }
        if label_idx.keys().copied().ne(0..label_idx.len()) {
            return Err(Error::invalid("label indices are not contiguous"));
        }
        let labels = Alphabet::from_names(label_idx.into_values());
        let mut features = Alphabet::new();
        for e in &file.entries {
            if !e.feature.starts_with('@') {
                features.intern(&e.feature);
            }
        }
        features.freeze();
        let mut labels = labels;
        labels.freeze();
        let n = labels.len();
        let mut model = CrfModel::new(labels, features, TransitionMask::full(n));
        let label = |name: &str, m: &CrfModel| {
            m.labels
                .index(name)
                .ok_or_else(|| Error::invalid(format!("undeclared label {name:?}")))
        };
        for e in &file.entries {
            let y = if e.feature == LABEL { continue } else { label(&e.label, &model)? };
            let idx = if let Some(prev) = e.feature.strip_prefix(TRANS) {
                model.transition_index(label(prev, &model)?, y)
            } else if let Some(prev) = e.feature.strip_prefix(FORBID) {
                let p = label(prev, &model)?;
                model.mask.forbid(p, y);
                continue;
            } else {
                match e.feature.as_str() {
                    START => model.start_index(y),
                    END => model.end_index(y),
                    FORBID_START => {
                        model.mask.forbid_start(y);
                        continue;
                    }
                    FORBID_END => {
                        model.mask.forbid_end(y);
                        continue;
                    }
                    f if f.starts_with('@') => {
                        return Err(Error::invalid(format!("unknown reserved key {f:?}")))
                    }
                    f => model.emission_index(model.features.index(f).expect("interned above"), y),
                }
            };
            model.weights[idx] = e.weight;
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bio_labels() -> Alphabet {
        Alphabet::from_names(["O", "B-ENT", "I-ENT"])
    }

    #[test]
    fn bio_mask() {
        let m = TransitionMask::bio(&bio_labels());
        assert!(!m.allows_start(2));
        assert!(!m.allows(0, 2));
        assert!(m.allows(1, 2) && m.allows(2, 2) && m.allows(2, 0) && m.allows(0, 1));
        let typed = Alphabet::from_names(["O", "B-film", "I-film", "B-actor", "I-actor"]);
        let m = TransitionMask::bio(&typed);
        assert!(m.allows(1, 2) && !m.allows(1, 4) && !m.allows(3, 2) && m.allows(3, 4));
    }

    #[test]
    fn weight_layout_length() {
        let f = Alphabet::from_names(["a", "b", "c"]);
        let m = CrfModel::new(bio_labels(), f, TransitionMask::full(3));
        assert_eq!(m.weights().len(), 3 * 3 + 9 + 6);
        assert_eq!(m.end_index(2), m.weights().len() - 1);
    }

    #[test]
    fn model_file_round_trip() {
        let f = Alphabet::from_names(["w=gatsby", "w=the", "cap=1"]);
        let labels = bio_labels();
        let mask = TransitionMask::bio(&labels);
        let mut m = CrfModel::new(labels, f, mask);
        let n = m.weights.len();
        for (i, w) in m.weights_mut().iter_mut().enumerate() {
            *w = if i % 4 == 0 { 0.0 } else { (i as f64 * 0.37).sin() / 3.0 };
        }
        let _ = n;
        let text = m.to_model_file(ModelKind::MentionCrf).unwrap().to_text().unwrap();
        let back = CrfModel::from_model_file(&ModelFile::parse(&text).unwrap()).unwrap();
        assert_eq!(back.mask, m.mask);
        assert_eq!(back.labels.iter().collect::<Vec<_>>(), m.labels.iter().collect::<Vec<_>>());
        // Same weights by name, bit for bit.
        for (fi, fname) in m.features.iter().enumerate() {
            for y in 0..3 {
                let w = m.weights[m.emission_index(fi, y)];
                let bw = back
                    .features
                    .index(fname)
                    .map_or(0.0, |bf| back.weights[back.emission_index(bf, y)]);
                assert_eq!(w.to_bits(), bw.to_bits());
            }
        }
        for p in 0..3 {
            for c in 0..3 {
                assert_eq!(m.weights[m.transition_index(p, c)], back.weights[back.transition_index(p, c)]);
            }
            assert_eq!(m.weights[m.end_index(p)], back.weights[back.end_index(p)]);
        }
        let again = back.to_model_file(ModelKind::MentionCrf).unwrap().to_text().unwrap();
        assert_eq!(again, text);
    }
}
