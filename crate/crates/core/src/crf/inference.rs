use super::model::{CrfModel, LabelConstraint, ObservationSequence};
use crate::error::{Error, Result};

const NEG_INF: f64 = f64::NEG_INFINITY;

/// Log partition function and marginals.
///
/// `node[t·L + y]` is `P(y_t = y)`; `edge[(t-1)·L² + p·L + c]` is
/// `P(y_{t-1} = p, y_t = c)` for `t ≥ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub log_z: f64,
    pub num_labels: usize,
    pub node: Vec<f64>,
    pub edge: Vec<f64>,
}

impl Marginals {
    pub fn node(&self, t: usize, y: usize) -> f64 {
        self.node[t * self.num_labels + y]
    }

    pub fn edge(&self, t: usize, prev: usize, cur: usize) -> f64 {
        let l = self.num_labels;
        self.edge[(t - 1) * l * l + prev * l + cur]
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(NEG_INF, f64::max);
    if max == NEG_INF {
        return NEG_INF;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Per-position emission scores, `T × L`.
pub(crate) fn emission_scores(seq: &ObservationSequence, model: &CrfModel) -> Vec<f64> {
    let l = model.num_labels();
    let w = model.weights();
    let mut emit = vec![0.0; seq.len() * l];
    for (t, feats) in seq.features.iter().enumerate() {
        let row = &mut emit[t * l..(t + 1) * l];
        for &f in feats {
            let base = model.emission_index(f, 0);
            for (y, e) in row.iter_mut().enumerate() {
                *e += w[base + y];
            }
        }
    }
    emit
}

/// Precomputed log-potentials with the mask applied.
struct Potentials {
    l: usize,
    t: usize,
    emit: Vec<f64>,
    trans: Vec<f64>,
    start: Vec<f64>,
    end: Vec<f64>,
}

impl Potentials {
    fn new(seq: &ObservationSequence, model: &CrfModel, clamp: bool) -> Self {
        let l = model.num_labels();
        let w = model.weights();
        let mask = model.mask();
        let mut emit = emission_scores(seq, model);
        if clamp {
            for (t, c) in seq.labels.iter().enumerate() {
                if let LabelConstraint::Observed(obs) = *c {
                    for y in 0..l {
                        if y != obs {
                            emit[t * l + y] = NEG_INF;
                        }
                    }
                }
            }
        }
        let mut trans = vec![NEG_INF; l * l];
        for p in 0..l {
            for c in 0..l {
                if mask.allows(p, c) {
                    trans[p * l + c] = w[model.transition_index(p, c)];
                }
            }
        }
        let start = (0..l)
            .map(|y| if mask.allows_start(y) { w[model.start_index(y)] } else { NEG_INF })
            .collect();
        let end = (0..l)
            .map(|y| if mask.allows_end(y) { w[model.end_index(y)] } else { NEG_INF })
            .collect();
        Potentials {
            l,
            t: seq.len(),
            emit,
            trans,
            start,
            end,
        }
    }

    fn forward(&self) -> (Vec<f64>, f64) {
        let (l, tn) = (self.l, self.t);
        let mut alpha = vec![NEG_INF; tn * l];
        for y in 0..l {
            alpha[y] = self.start[y] + self.emit[y];
        }
        let mut buf = vec![0.0; l];
        for t in 1..tn {
            for c in 0..l {
                for p in 0..l {
                    buf[p] = alpha[(t - 1) * l + p] + self.trans[p * l + c];
                }
                alpha[t * l + c] = log_sum_exp(&buf) + self.emit[t * l + c];
            }
        }
        for y in 0..l {
            buf[y] = alpha[(tn - 1) * l + y] + self.end[y];
        }
        (alpha, log_sum_exp(&buf))
    }

    fn backward(&self) -> Vec<f64> {
        let (l, tn) = (self.l, self.t);
        let mut beta = vec![NEG_INF; tn * l];
        beta[(tn - 1) * l..].copy_from_slice(&self.end);
        let mut buf = vec![0.0; l];
        for t in (0..tn - 1).rev() {
            for p in 0..l {
                for c in 0..l {
                    buf[c] = self.trans[p * l + c] + self.emit[(t + 1) * l + c] + beta[(t + 1) * l + c];
                }
                beta[t * l + p] = log_sum_exp(&buf);
            }
        }
        beta
    }

    fn marginals(&self) -> Marginals {
        let (l, tn) = (self.l, self.t);
        let (alpha, log_z) = self.forward();
        if log_z == NEG_INF {
            return Marginals {
                log_z,
                num_labels: l,
                node: vec![0.0; tn * l],
                edge: vec![0.0; tn.saturating_sub(1) * l * l],
            };
        }
        let beta = self.backward();
        let node = (0..tn * l)
            .map(|i| {
                let s = alpha[i] + beta[i];
                if s == NEG_INF {
                    0.0
                } else {
                    (s - log_z).exp()
                }
            })
            .collect();
        let mut edge = vec![0.0; tn.saturating_sub(1) * l * l];
        for t in 1..tn {
            for p in 0..l {
                for c in 0..l {
                    let s = alpha[(t - 1) * l + p]
                        + self.trans[p * l + c]
                        + self.emit[t * l + c]
                        + beta[t * l + c];
                    if s != NEG_INF {
                        edge[(t - 1) * l * l + p * l + c] = (s - log_z).exp();
                    }
                }
            }
        }
        Marginals {
            log_z,
            num_labels: l,
            node,
            edge,
        }
    }
}

fn check_len(seq: &ObservationSequence) -> Result<()> {
    if seq.is_empty() {
        return Err(Error::invalid("empty observation sequence"));
    }
    if seq.labels.len() != seq.len() {
        return Err(Error::invalid("label constraints do not match sequence length"));
    }
    Ok(())
}

/// Unconstrained inference. Label constraints in `seq` are ignored.
pub fn forward_backward(seq: &ObservationSequence, model: &CrfModel) -> Result<Marginals> {
    check_len(seq)?;
    Ok(Potentials::new(seq, model, false).marginals())
}

/// Inference summing only over paths that agree with the observed positions.
///
/// Returns `log_z = -∞` (and zero marginals) when the observed labels admit
/// no mask-valid path.
pub fn constrained_forward_backward(seq: &ObservationSequence, model: &CrfModel) -> Result<Marginals> {
    check_len(seq)?;
    Ok(Potentials::new(seq, model, true).marginals())
}

/// Unnormalized log score of one label path (`-∞` if the mask forbids it).
pub fn path_score(seq: &ObservationSequence, model: &CrfModel, labels: &[usize]) -> f64 {
    let l = model.num_labels();
    let w = model.weights();
    let mask = model.mask();
    let emit = emission_scores(seq, model);
    let mut score = 0.0;
    for (t, &y) in labels.iter().enumerate() {
        if t == 0 {
            if !mask.allows_start(y) {
                return NEG_INF;
            }
            score += w[model.start_index(y)];
        } else {
            let p = labels[t - 1];
            if !mask.allows(p, y) {
                return NEG_INF;
            }
            score += w[model.transition_index(p, y)];
        }
        score += emit[t * l + y];
    }
    if let Some(&last) = labels.last() {
        if !mask.allows_end(last) {
            return NEG_INF;
        }
        score += w[model.end_index(last)];
    }
    score
}

/// Max-product decoding. Ties go to the lower label index.
pub fn viterbi(seq: &ObservationSequence, model: &CrfModel) -> Result<(Vec<usize>, f64)> {
    check_len(seq)?;
    let pot = Potentials::new(seq, model, false);
    let (l, tn) = (pot.l, pot.t);
    let mut delta = vec![NEG_INF; tn * l];
    let mut back = vec![0usize; tn * l];
    for y in 0..l {
        delta[y] = pot.start[y] + pot.emit[y];
    }
    for t in 1..tn {
        for c in 0..l {
            let mut best = NEG_INF;
            let mut arg = 0;
            for p in 0..l {
                let s = delta[(t - 1) * l + p] + pot.trans[p * l + c];
                if s > best {
                    best = s;
                    arg = p;
                }
            }
            delta[t * l + c] = best + pot.emit[t * l + c];
            back[t * l + c] = arg;
        }
    }
    let mut best = NEG_INF;
    let mut last = 0;
    for y in 0..l {
        let s = delta[(tn - 1) * l + y] + pot.end[y];
        if s > best {
            best = s;
            last = y;
        }
    }
    if best == NEG_INF {
        return Err(Error::invalid("no label path satisfies the transition mask"));
    }
    let mut path = vec![0; tn];
    path[tn - 1] = last;
    for t in (1..tn).rev() {
        path[t - 1] = back[t * l + path[t]];
    }
    Ok((path, best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crf::brute::{self, random_instance};
    use crate::crf::{Alphabet, TransitionMask};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_model(labels: usize, features: usize) -> CrfModel {
        CrfModel::new(
            Alphabet::from_names((0..labels).map(|i| format!("y{i}"))),
            Alphabet::from_names((0..features).map(|i| format!("f{i}"))),
            TransitionMask::full(labels),
        )
    }

    #[test]
    fn uniform_model() {
        let m = zero_model(2, 1);
        let seq = ObservationSequence::unlabeled(vec![vec![0]; 3]);
        let fb = forward_backward(&seq, &m).unwrap();
        assert!((fb.log_z - 3.0 * 2f64.ln()).abs() < 1e-12);
        assert!((fb.log_z - 2.079442).abs() < 1e-6);
        assert!(fb.node.iter().all(|p| (p - 0.5).abs() < 1e-12));
        assert!(fb.edge.iter().all(|p| (p - 0.25).abs() < 1e-12));
    }

    #[test]
    fn empty_sequence_is_an_error() {
        let m = zero_model(2, 1);
        let seq = ObservationSequence::unlabeled(vec![]);
        assert!(forward_backward(&seq, &m).is_err());
        assert!(viterbi(&seq, &m).is_err());
    }

    #[test]
    fn masked_edge_has_zero_marginal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut m, seq) = random_instance(&mut rng, 4, 2, 3);
        let mut mask = TransitionMask::full(2);
        mask.forbid(1, 0);
        m = brute::with_mask(m, mask);
        let fb = forward_backward(&seq, &m).unwrap();
        for t in 1..4 {
            assert_eq!(fb.edge(t, 1, 0), 0.0);
        }
    }

    #[test]
    fn matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (m, seq) = random_instance(&mut rng, 4, 3, 5);
        let fb = forward_backward(&seq, &m).unwrap();
        let oracle = brute::enumerate(&seq, &m, false);
        assert!((fb.log_z - oracle.log_z).abs() < 1e-10);
        for (a, b) in fb.node.iter().zip(&oracle.node) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in fb.edge.iter().zip(&oracle.edge) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn constrained_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (m, mut seq) = random_instance(&mut rng, 3, 2, 4);
        // all hidden == unconstrained
        let free = forward_backward(&seq, &m).unwrap();
        let c = constrained_forward_backward(&seq, &m).unwrap();
        assert_eq!(free.log_z, c.log_z);
        // middle hidden: sum of two completions
        seq.labels = vec![
            LabelConstraint::Observed(1),
            LabelConstraint::Hidden,
            LabelConstraint::Observed(0),
        ];
        let c = constrained_forward_backward(&seq, &m).unwrap();
        let a = path_score(&seq, &m, &[1, 0, 0]);
        let b = path_score(&seq, &m, &[1, 1, 0]);
        let want = a.max(b) + (-(a - b).abs()).exp().ln_1p();
        assert!((c.log_z - want).abs() < 1e-12);
        assert!((c.node(1, 0) + c.node(1, 1) - 1.0).abs() < 1e-12);
        assert_eq!(c.node(0, 1), 1.0);
        // fully observed: single path
        seq.labels = vec![
            LabelConstraint::Observed(1),
            LabelConstraint::Observed(1),
            LabelConstraint::Observed(0),
        ];
        let c = constrained_forward_backward(&seq, &m).unwrap();
        assert!((c.log_z - path_score(&seq, &m, &[1, 1, 0])).abs() < 1e-12);
    }

    #[test]
    fn infeasible_observation_gives_neg_infinity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (m, mut seq) = random_instance(&mut rng, 2, 2, 2);
        let mut mask = TransitionMask::full(2);
        mask.forbid(0, 1);
        let m = brute::with_mask(m, mask);
        seq.labels = vec![LabelConstraint::Observed(0), LabelConstraint::Observed(1)];
        let c = constrained_forward_backward(&seq, &m).unwrap();
        assert_eq!(c.log_z, f64::NEG_INFINITY);
        assert!(c.node.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn viterbi_cases() {
        let m = zero_model(3, 2);
        let seq = ObservationSequence::unlabeled(vec![vec![0], vec![1], vec![]]);
        assert_eq!(viterbi(&seq, &m).unwrap().0, vec![0, 0, 0]);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (m, seq) = random_instance(&mut rng, 5, 3, 4);
        let (path, score) = viterbi(&seq, &m).unwrap();
        let (bp, bs) = brute::argmax(&seq, &m);
        assert_eq!(path, bp);
        assert!((score - bs).abs() < 1e-10);

        // only the path 0 -> 1 -> 0 -> 1 survives
        let (m, seq) = random_instance(&mut rng, 4, 2, 3);
        let mut mask = TransitionMask::full(2);
        mask.forbid(0, 0);
        mask.forbid(1, 1);
        mask.forbid_start(1);
        let m = brute::with_mask(m, mask);
        assert_eq!(viterbi(&seq, &m).unwrap().0, vec![0, 1, 0, 1]);

        let mut mask = TransitionMask::full(2);
        mask.forbid_end(0);
        mask.forbid_end(1);
        let m = brute::with_mask(m, mask);
        assert!(viterbi(&seq, &m).is_err());
    }

    proptest! {
        #[test]
        fn marginals_normalize_and_viterbi_bounds(seed in 0u64..10_000, t in 1usize..7, l in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (m, seq) = random_instance(&mut rng, t, l, 6);
            let fb = forward_backward(&seq, &m).unwrap();
            for pos in 0..t {
                let s: f64 = (0..l).map(|y| fb.node(pos, y)).sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
            let (_, score) = viterbi(&seq, &m).unwrap();
            let p_best = (score - fb.log_z).exp();
            prop_assert!(p_best <= 1.0 + 1e-12);
            // any other path has no more mass
            let other: Vec<usize> = (0..t).map(|i| (i + seed as usize) % l).collect();
            prop_assert!((path_score(&seq, &m, &other) - fb.log_z).exp() <= p_best + 1e-12);
        }

        #[test]
        fn transition_shift_keeps_argmax(seed in 0u64..10_000, t in 1usize..7, shift in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut m, seq) = random_instance(&mut rng, t, 3, 5);
            let (path, score) = viterbi(&seq, &m).unwrap();
            let emission_end = m.emission_len();
            for w in &mut m.weights_mut()[emission_end..] {
                *w += shift;
            }
            let (p2, s2) = viterbi(&seq, &m).unwrap();
            prop_assert_eq!(p2, path);
            prop_assert!((s2 - score - shift * (t as f64 + 1.0)).abs() < 1e-9);
        }
    }
}
