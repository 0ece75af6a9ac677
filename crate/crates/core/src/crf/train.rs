use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{CrfModel, LabelConstraint, ObservationSequence, TransitionMask};
use super::objective::{loglik_grad_marginal, loglik_grad_observed};
use super::Alphabet;
use crate::error::{Error, Result};
use crate::optim::{maximize, LbfgsConfig, OptimReport};
use crate::par::Execution;

/// Feature names per position and an optional label per position.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSequence {
    pub features: Vec<Vec<String>>,
    pub labels: Vec<Option<String>>,
}

impl TrainingSequence {
    pub fn labeled(features: Vec<Vec<String>>, labels: Vec<String>) -> Self {
        TrainingSequence {
            features,
            labels: labels.into_iter().map(Some).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Every position labeled.
    Observed,
    /// Unlabeled positions are marginalized out.
    Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Full,
    Bio,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfConfig {
    pub l2_variance: f64,
    pub optimizer: LbfgsConfig,
    pub seed: u64,
    /// Marginal mode only: also train from a uniform `[-s, s]` start and keep
    /// the better optimum.
    pub restart_noise: Option<f64>,
    /// When false, transition, start and end weights stay at zero.
    pub transitions: bool,
    pub mask: MaskKind,
    /// Fixed label alphabet. Otherwise labels seen in training, sorted, with
    /// `O` first.
    pub labels: Option<Vec<String>>,
    pub exec: Execution,
}

impl Default for CrfConfig {
    fn default() -> Self {
        CrfConfig {
            l2_variance: 10.0,
            optimizer: LbfgsConfig::default(),
            seed: 42,
            restart_noise: None,
            transitions: true,
            mask: MaskKind::Full,
            labels: None,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub optim: OptimReport,
    pub objective: f64,
    /// Sequences without any labeled position.
    pub skipped: usize,
}

fn label_alphabet(data: &[TrainingSequence], config: &CrfConfig) -> Result<Alphabet> {
    let mut alphabet = match &config.labels {
        Some(names) => Alphabet::from_names(names),
        None => {
            let mut names: Vec<&str> = data
                .iter()
                .flat_map(|s| s.labels.iter().flatten().map(String::as_str))
                .collect();
            names.sort_unstable_by(|a, b| (*a != "O", a).cmp(&(*b != "O", b)));
            names.dedup();
            Alphabet::from_names(names)
        }
    };
    if alphabet.is_empty() {
        return Err(Error::invalid("no labeled positions in training data"));
    }
    alphabet.freeze();
    Ok(alphabet)
}

fn feature_alphabet(data: &[TrainingSequence]) -> Alphabet {
    let mut names: Vec<&str> = data
        .iter()
        .flat_map(|s| s.features.iter().flatten().map(String::as_str))
        .collect();
    names.sort_unstable();
    names.dedup();
    let mut a = Alphabet::from_names(names);
    a.freeze();
    a
}

/// Fits a CRF from zero weights with L-BFGS.
pub fn train(data: &[TrainingSequence], mode: TrainMode, config: &CrfConfig) -> Result<(CrfModel, TrainReport)> {
    if data.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let labels = label_alphabet(data, config)?;
    let features = feature_alphabet(data);
    let mask = match config.mask {
        MaskKind::Full => TransitionMask::full(labels.len()),
        MaskKind::Bio => TransitionMask::bio(&labels),
    };
    let mut model = CrfModel::new(labels, features, mask);

    let mut batch = Vec::with_capacity(data.len());
    let mut skipped = 0;
    for (i, seq) in data.iter().enumerate() {
        if seq.features.len() != seq.labels.len() {
            return Err(Error::invalid(format!("sequence {i}: features and labels differ in length")));
        }
        if seq.features.is_empty() {
            skipped += 1;
            continue;
        }
        let constraints = seq
            .labels
            .iter()
            .map(|l| match l {
                None if mode == TrainMode::Observed => {
                    Err(Error::invalid(format!("sequence {i} has an unlabeled position")))
                }
                None => Ok(LabelConstraint::Hidden),
                Some(name) => model
                    .labels()
                    .index(name)
                    .map(LabelConstraint::Observed)
                    .ok_or_else(|| Error::invalid(format!("sequence {i}: unknown label {name:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if constraints.iter().all(|c| *c == LabelConstraint::Hidden) {
            skipped += 1;
            continue;
        }
        batch.push(ObservationSequence {
            features: model.map_features(&seq.features),
            labels: constraints,
        });
    }
    if skipped > 0 {
        log::warn!("{skipped} training sequences carry no labels and were skipped");
    }
    if batch.is_empty() {
        return Err(Error::invalid("no training sequence has a labeled position"));
    }

    let tail = model.emission_len();
    let objective = |w: &[f64], model: &mut CrfModel| -> Result<(f64, Vec<f64>)> {
        model.weights_mut().copy_from_slice(w);
        let (v, mut g) = match mode {
            TrainMode::Observed => loglik_grad_observed(&batch, model, config.l2_variance, config.exec)?,
            TrainMode::Marginal => loglik_grad_marginal(&batch, model, config.l2_variance, config.exec)?,
        };
        if !config.transitions {
            g[tail..].iter_mut().for_each(|x| *x = 0.0);
        }
        Ok((v, g))
    };

    let n = model.weights().len();
    let run = |x0: Vec<f64>, model: &mut CrfModel| maximize(x0, &config.optimizer, |w| objective(w, model));
    let (mut best_w, mut best) = run(vec![0.0; n], &mut model)?;
    if let (TrainMode::Marginal, Some(scale)) = (mode, config.restart_noise) {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut x0: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..=scale)).collect();
        if !config.transitions {
            x0[tail..].iter_mut().for_each(|x| *x = 0.0);
        }
        let (w, report) = run(x0, &mut model)?;
        if report.final_value() > best.final_value() {
            best_w = w;
            best = report;
        }
    }
    model.set_weights(best_w);
    let report = TrainReport {
        objective: best.final_value(),
        optim: best,
        skipped,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crf::viterbi;

    fn s(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|x| x.to_string()).collect()
    }

    fn toy() -> Vec<TrainingSequence> {
        vec![
            TrainingSequence::labeled(
                vec![s(&["w=find"]), s(&["w=film"]), s(&["w=x"])],
                s(&["O", "B-ENT", "I-ENT"]),
            ),
            TrainingSequence::labeled(vec![s(&["w=film"]), s(&["w=y"])], s(&["B-ENT", "O"])),
        ]
    }

    #[test]
    fn separable_toy_is_recovered() {
        let config = CrfConfig {
            mask: MaskKind::Bio,
            ..CrfConfig::default()
        };
        let data = toy();
        let (m, report) = train(&data, TrainMode::Observed, &config).unwrap();
        assert_eq!(m.labels().name(0), Some("O"));
        for seq in &data {
            let obs = m.observe(&seq.features);
            let (path, _) = viterbi(&obs, &m).unwrap();
            let want: Vec<String> = seq.labels.iter().flatten().cloned().collect();
            assert_eq!(m.label_names(&path), want);
        }
        assert!(report.optim.history.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn transitions_decide_without_features() {
        let data = vec![TrainingSequence::labeled(vec![vec![], vec![]], s(&["a", "b"]))];
        let (m, _) = train(&data, TrainMode::Observed, &CrfConfig::default()).unwrap();
        let obs = m.observe(&[vec![], vec![]]);
        let (path, _) = viterbi(&obs, &m).unwrap();
        assert_eq!(m.label_names(&path), s(&["a", "b"]));
    }

    #[test]
    fn uniform_without_data_signal() {
        let data = vec![
            TrainingSequence::labeled(vec![vec![]], s(&["a"])),
            TrainingSequence::labeled(vec![vec![]], s(&["b"])),
        ];
        let (m, _) = train(&data, TrainMode::Observed, &CrfConfig::default()).unwrap();
        assert!(m.weights().iter().all(|w| w.abs() < 1e-12));
        let (path, _) = viterbi(&m.observe(&[vec![]]), &m).unwrap();
        assert_eq!(path, vec![0]);
    }

    #[test]
    fn marginal_equals_observed_without_hidden() {
        let data = toy();
        let config = CrfConfig {
            optimizer: LbfgsConfig {
                tol: 0.0,
                gtol: 1e-10,
                max_iters: 1000,
                ..LbfgsConfig::default()
            },
            ..CrfConfig::default()
        };
        let (a, _) = train(&data, TrainMode::Observed, &config).unwrap();
        let (b, _) = train(&data, TrainMode::Marginal, &config).unwrap();
        for (x, y) in a.weights().iter().zip(b.weights()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn missing_labels_rules() {
        let mut data = toy();
        data.push(TrainingSequence {
            features: vec![s(&["w=q"])],
            labels: vec![None],
        });
        assert!(train(&data, TrainMode::Observed, &CrfConfig::default()).is_err());
        let (_, report) = train(&data, TrainMode::Marginal, &CrfConfig::default()).unwrap();
        assert_eq!(report.skipped, 1);
        let all_hidden = vec![data.pop().unwrap()];
        assert!(train(&all_hidden, TrainMode::Marginal, &CrfConfig::default()).is_err());
        assert!(train(&[], TrainMode::Marginal, &CrfConfig::default()).is_err());
    }

    #[test]
    fn transitions_disabled_stay_zero() {
        let config = CrfConfig {
            transitions: false,
            ..CrfConfig::default()
        };
        let (m, _) = train(&toy(), TrainMode::Observed, &config).unwrap();
        assert!(m.weights()[m.emission_len()..].iter().all(|&w| w == 0.0));
    }

    #[test]
    fn deterministic_and_execution_independent() {
        let seq = CrfConfig {
            exec: Execution::Sequential,
            ..CrfConfig::default()
        };
        let (a, _) = train(&toy(), TrainMode::Observed, &seq).unwrap();
        let (b, _) = train(&toy(), TrainMode::Observed, &CrfConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
