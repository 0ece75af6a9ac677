//! Exhaustive-enumeration oracles for small CRF instances.

use rand::Rng;

use super::{Alphabet, CrfModel, LabelConstraint, ObservationSequence, TransitionMask};

pub struct Enumerated {
    pub log_z: f64,
    pub node: Vec<f64>,
    pub edge: Vec<f64>,
}

/// Scores one path directly from the weight layout.
pub fn score(seq: &ObservationSequence, m: &CrfModel, path: &[usize]) -> f64 {
    let w = m.weights();
    let mask = m.mask();
    let mut s = 0.0;
    for (t, &y) in path.iter().enumerate() {
        let allowed = if t == 0 { mask.allows_start(y) } else { mask.allows(path[t - 1], y) };
        if !allowed {
            return f64::NEG_INFINITY;
        }
        s += if t == 0 { w[m.start_index(y)] } else { w[m.transition_index(path[t - 1], y)] };
        for &f in &seq.features[t] {
            s += w[m.emission_index(f, y)];
        }
    }
    if !mask.allows_end(*path.last().unwrap()) {
        return f64::NEG_INFINITY;
    }
    s + w[m.end_index(*path.last().unwrap())]
}

pub fn all_paths(t: usize, l: usize) -> Vec<Vec<usize>> {
    let total = l.pow(t as u32);
    (0..total)
        .map(|mut k| {
            let mut p = vec![0; t];
            for slot in p.iter_mut() {
                *slot = k % l;
                k /= l;
            }
            p
        })
        .collect()
}

fn agrees(seq: &ObservationSequence, path: &[usize]) -> bool {
    seq.labels.iter().zip(path).all(|(c, &y)| match c {
        LabelConstraint::Observed(o) => *o == y,
        LabelConstraint::Hidden => true,
    })
}

pub fn enumerate(seq: &ObservationSequence, m: &CrfModel, constrained: bool) -> Enumerated {
    let (t, l) = (seq.len(), m.num_labels());
    let paths: Vec<(Vec<usize>, f64)> = all_paths(t, l)
        .into_iter()
        .filter(|p| !constrained || agrees(seq, p))
        .map(|p| {
            let s = score(seq, m, &p);
            (p, s)
        })
        .collect();
    let max = paths.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = paths.iter().map(|p| (p.1 - max).exp()).sum();
    let log_z = max + z.ln();
    let mut node = vec![0.0; t * l];
    let mut edge = vec![0.0; t.saturating_sub(1) * l * l];
    for (p, s) in &paths {
        let pr = (s - log_z).exp();
        for (i, &y) in p.iter().enumerate() {
            node[i * l + y] += pr;
            if i > 0 {
                edge[(i - 1) * l * l + p[i - 1] * l + y] += pr;
            }
        }
    }
    Enumerated { log_z, node, edge }
}

pub fn argmax(seq: &ObservationSequence, m: &CrfModel) -> (Vec<usize>, f64) {
    let mut best = (vec![], f64::NEG_INFINITY);
    for p in all_paths(seq.len(), m.num_labels()) {
        let s = score(seq, m, &p);
        if s > best.1 {
            best = (p, s);
        }
    }
    best
}

/// Random weights in [-1, 1] and random sparse features per position.
pub fn random_instance(
    rng: &mut impl Rng,
    t: usize,
    labels: usize,
    features: usize,
) -> (CrfModel, ObservationSequence) {
    let mut m = CrfModel::new(
        Alphabet::from_names((0..labels).map(|i| format!("y{i}"))),
        Alphabet::from_names((0..features).map(|i| format!("f{i}"))),
        TransitionMask::full(labels),
    );
    for w in m.weights_mut() {
        *w = rng.random_range(-1.0..1.0);
    }
    let feats = (0..t)
        .map(|_| {
            let mut v: Vec<usize> = (0..features).filter(|_| rng.random_bool(0.4)).collect();
            v.dedup();
            v
        })
        .collect();
    (m, ObservationSequence::unlabeled(feats))
}

pub fn with_mask(m: CrfModel, mask: TransitionMask) -> CrfModel {
    let mut out = CrfModel::new(m.labels().clone(), m.features().clone(), mask);
    out.set_weights(m.weights().to_vec());
    out
}
