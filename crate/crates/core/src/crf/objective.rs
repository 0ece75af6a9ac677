use super::inference::{constrained_forward_backward, forward_backward, path_score, Marginals};
use super::model::{CrfModel, ObservationSequence};
use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// Fixed chunk count for the batch reduction, independent of thread count.
const REDUCTION_CHUNKS: usize = 16;

struct Partial {
    value: f64,
    grad: Vec<f64>,
}

fn add_path_counts(grad: &mut [f64], seq: &ObservationSequence, model: &CrfModel, path: &[usize], scale: f64) {
    for (t, &y) in path.iter().enumerate() {
        for &f in &seq.features[t] {
            grad[model.emission_index(f, y)] += scale;
        }
        if t == 0 {
            grad[model.start_index(y)] += scale;
        } else {
            grad[model.transition_index(path[t - 1], y)] += scale;
        }
    }
    if let Some(&last) = path.last() {
        grad[model.end_index(last)] += scale;
    }
}

fn add_expected_counts(grad: &mut [f64], seq: &ObservationSequence, model: &CrfModel, m: &Marginals, scale: f64) {
    let l = model.num_labels();
    let tn = seq.len();
    for t in 0..tn {
        for &f in &seq.features[t] {
            let base = model.emission_index(f, 0);
            for y in 0..l {
                grad[base + y] += scale * m.node(t, y);
            }
        }
    }
    for y in 0..l {
        grad[model.start_index(y)] += scale * m.node(0, y);
        grad[model.end_index(y)] += scale * m.node(tn - 1, y);
    }
    for t in 1..tn {
        for p in 0..l {
            for c in 0..l {
                let e = m.edge(t, p, c);
                if e != 0.0 {
                    grad[model.transition_index(p, c)] += scale * e;
                }
            }
        }
    }
}

fn finite(value: f64, index: usize, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(format!("{what} is {value} for sequence {index}")))
    }
}

fn reduce<F>(batch: &[ObservationSequence], model: &CrfModel, l2_variance: f64, exec: Execution, term: F) -> Result<(f64, Vec<f64>)>
where
    F: Fn(usize, &ObservationSequence, &mut [f64]) -> Result<f64> + Sync + Send,
{
    if !(l2_variance > 0.0) {
        return Err(Error::invalid("l2 variance must be positive"));
    }
    let n_weights = model.weights().len();
    let indexed: Vec<(usize, &ObservationSequence)> = batch.iter().enumerate().collect();
    let chunk = indexed.len().div_ceil(REDUCTION_CHUNKS).max(1);
    let total = par::fold_chunks(
        exec,
        &indexed,
        chunk,
        |items| -> Result<Partial> {
            let mut p = Partial {
                value: 0.0,
                grad: vec![0.0; n_weights],
            };
            for &(i, seq) in items {
                p.value += term(i, seq, &mut p.grad)?;
            }
            Ok(p)
        },
        |a, b| {
            let (mut a, b) = (a?, b?);
            a.value += b.value;
            for (x, y) in a.grad.iter_mut().zip(&b.grad) {
                *x += y;
            }
            Ok(a)
        },
    )
    .unwrap_or_else(|| {
        Ok(Partial {
            value: 0.0,
            grad: vec![0.0; n_weights],
        })
    })?;
    let Partial { mut value, mut grad } = total;
    let w = model.weights();
    value -= w.iter().map(|x| x * x).sum::<f64>() / (2.0 * l2_variance);
    for (g, x) in grad.iter_mut().zip(w) {
        *g -= x / l2_variance;
    }
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("objective is {value}")));
    }
    Ok((value, grad))
}

/// Penalized log-likelihood of fully labeled sequences and its gradient.
pub fn loglik_grad_observed(
    batch: &[ObservationSequence],
    model: &CrfModel,
    l2_variance: f64,
    exec: Execution,
) -> Result<(f64, Vec<f64>)> {
    reduce(batch, model, l2_variance, exec, |i, seq, grad| {
        let path = seq
            .observed_labels()
            .ok_or_else(|| Error::invalid(format!("sequence {i} has hidden positions")))?;
        let fb = forward_backward(seq, model)?;
        let log_z = finite(fb.log_z, i, "log partition")?;
        let score = finite(path_score(seq, model, &path), i, "path score")?;
        add_path_counts(grad, seq, model, &path, 1.0);
        add_expected_counts(grad, seq, model, &fb, -1.0);
        Ok(score - log_z)
    })
}

/// Penalized log marginal likelihood of the observed positions, summing over
/// hidden ones. Sequences with no observed position contribute nothing.
pub fn loglik_grad_marginal(
    batch: &[ObservationSequence],
    model: &CrfModel,
    l2_variance: f64,
    exec: Execution,
) -> Result<(f64, Vec<f64>)> {
    reduce(batch, model, l2_variance, exec, |i, seq, grad| {
        if seq.hidden_count() == seq.len() {
            return Ok(0.0);
        }
        let free = forward_backward(seq, model)?;
        let clamped = constrained_forward_backward(seq, model)?;
        let log_z = finite(free.log_z, i, "log partition")?;
        let log_c = finite(clamped.log_z, i, "constrained log mass")?;
        add_expected_counts(grad, seq, model, &clamped, 1.0);
        add_expected_counts(grad, seq, model, &free, -1.0);
        Ok(log_c - log_z)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crf::brute::{self, random_instance};
    use crate::crf::{Alphabet, LabelConstraint, TransitionMask};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labeled_batch(rng: &mut ChaCha8Rng, n: usize, t: usize, l: usize) -> (CrfModel, Vec<ObservationSequence>) {
        let (m, _) = random_instance(rng, t, l, 5);
        let batch = (0..n)
            .map(|_| {
                let (_, s) = random_instance(rng, t, l, 5);
                let labels: Vec<usize> = (0..t).map(|_| rng.random_range(0..l)).collect();
                ObservationSequence::labeled(s.features, &labels)
            })
            .collect();
        (m, batch)
    }

    fn fd_check(m: &CrfModel, f: impl Fn(&CrfModel) -> (f64, Vec<f64>)) -> f64 {
        let (_, g) = f(m);
        let h = 1e-5;
        let mut worst = 0.0f64;
        for k in 0..g.len() {
            let mut plus = m.clone();
            plus.weights_mut()[k] += h;
            let mut minus = m.clone();
            minus.weights_mut()[k] -= h;
            let fd = (f(&plus).0 - f(&minus).0) / (2.0 * h);
            let rel = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-3);
            worst = worst.max(rel);
        }
        worst
    }

    #[test]
    fn zero_weights_value() {
        let m = CrfModel::new(
            Alphabet::from_names(["a", "b"]),
            Alphabet::from_names(["f"]),
            TransitionMask::full(2),
        );
        let seq = ObservationSequence::labeled(vec![vec![0], vec![]], &[0, 1]);
        let (v, _) = loglik_grad_observed(&[seq], &m, 10.0, Execution::Sequential).unwrap();
        assert!((v + 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn duplicated_sequence_doubles_data_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (m, batch) = labeled_batch(&mut rng, 1, 4, 3);
        let penalty = m.weights().iter().map(|x| x * x).sum::<f64>() / 20.0;
        let (v1, _) = loglik_grad_observed(&batch, &m, 10.0, Execution::Sequential).unwrap();
        let twice = vec![batch[0].clone(), batch[0].clone()];
        let (v2, _) = loglik_grad_observed(&twice, &m, 10.0, Execution::Sequential).unwrap();
        assert!(((v2 + penalty) - 2.0 * (v1 + penalty)).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = rng.random_range(1..=6);
            let l = rng.random_range(1..=4);
            let (m, batch) = labeled_batch(&mut rng, 3, t, l);
            let obs = fd_check(&m, |m| loglik_grad_observed(&batch, m, 10.0, Execution::Sequential).unwrap());
            assert!(obs < 1e-4, "seed {seed}: {obs}");
            let mut hidden = batch.clone();
            for s in &mut hidden {
                for c in s.labels.iter_mut() {
                    if rng.random_bool(0.5) {
                        *c = LabelConstraint::Hidden;
                    }
                }
            }
            let marg = fd_check(&m, |m| loglik_grad_marginal(&hidden, m, 10.0, Execution::Sequential).unwrap());
            assert!(marg < 1e-4, "seed {seed}: {marg}");
        }
    }

    #[test]
    fn marginal_reduces_to_observed() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (m, batch) = labeled_batch(&mut rng, 4, 5, 3);
            let (vo, go) = loglik_grad_observed(&batch, &m, 10.0, Execution::Sequential).unwrap();
            let (vm, gm) = loglik_grad_marginal(&batch, &m, 10.0, Execution::Sequential).unwrap();
            assert!((vo - vm).abs() < 1e-12);
            for (a, b) in go.iter().zip(&gm) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_hidden_position_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (m, mut batch) = labeled_batch(&mut rng, 1, 4, 3);
        batch[0].labels[2] = LabelConstraint::Hidden;
        let (v, _) = loglik_grad_marginal(&batch, &m, 1e300, Execution::Sequential).unwrap();
        let c = brute::enumerate(&batch[0], &m, true).log_z;
        let z = brute::enumerate(&batch[0], &m, false).log_z;
        assert!((v - (c - z)).abs() < 1e-10);
    }

    #[test]
    fn fully_hidden_contributes_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (m, batch) = labeled_batch(&mut rng, 2, 3, 3);
        let base = loglik_grad_marginal(&batch, &m, 10.0, Execution::Sequential).unwrap();
        let mut extended = batch.clone();
        extended.push(ObservationSequence::unlabeled(batch[0].features.clone()));
        let ext = loglik_grad_marginal(&extended, &m, 10.0, Execution::Sequential).unwrap();
        assert_eq!(base.0.to_bits(), ext.0.to_bits());
        assert_eq!(base.1, ext.1);
    }

    #[test]
    fn parallel_matches_sequential_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (m, batch) = labeled_batch(&mut rng, 100, 5, 3);
        let a = loglik_grad_observed(&batch, &m, 10.0, Execution::Sequential).unwrap();
        let b = loglik_grad_observed(&batch, &m, 10.0, Execution::Parallel).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn infeasible_sequence_is_named() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let (m, batch) = labeled_batch(&mut rng, 1, 2, 2);
        let mut mask = TransitionMask::full(2);
        let obs = batch[0].observed_labels().unwrap();
        mask.forbid(obs[0], obs[1]);
        let m = brute::with_mask(m, mask);
        let err = loglik_grad_observed(&batch, &m, 10.0, Execution::Sequential).unwrap_err();
        assert!(err.to_string().contains("sequence 0"), "{err}");
    }
}
