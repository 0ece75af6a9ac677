//! TOML pipeline configuration. Every field is optional; missing values
//! take the library defaults.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;
use session_parse::crf::CrfConfig;
use session_parse::distsup::DistsupConfig;
use session_parse::mention::MentionFeatureConfig;
use session_parse::optim::LbfgsConfig;
use session_parse::par::Execution;
use session_parse::relex::RelexConfig;
use session_parse::synth::SynthConfig;
use session_parse::typer::TyperFeatureConfig;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub paths: Paths,
    pub distsup: DistsupSection,
    pub mention: MentionSection,
    pub typer: TyperSection,
    pub crf: OptimSection,
    pub relex: RelexSection,
    pub sessionlm: SessionLmSection,
    pub synth: SynthSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub knowledge: Option<PathBuf>,
    pub sessions: Option<PathBuf>,
    pub labeled: Option<PathBuf>,
    pub samples: Option<PathBuf>,
    pub mention_model: Option<PathBuf>,
    pub typer_model: Option<PathBuf>,
    pub ere_model: Option<PathBuf>,
    pub tre_model: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistsupSection {
    pub min_name_tokens: Option<usize>,
    pub none_multiple: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MentionSection {
    pub window: Option<usize>,
    pub max_ngram: Option<usize>,
    pub repeat_window: Option<usize>,
    pub repeat_threshold: Option<usize>,
    pub session_context: Option<bool>,
    pub gazetteer_min_tokens: Option<usize>,
    pub typed: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TyperSection {
    pub context_n: Option<usize>,
    pub neighbor_window: Option<usize>,
    pub mode: Option<String>,
    pub transitions: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSection {
    pub l2_variance: Option<f64>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub restart_noise: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelexSection {
    pub l2_variance: Option<f64>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionLmSection {
    pub order: Option<usize>,
    pub unk: Option<bool>,
    pub grid_step: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_sessions: Option<usize>,
    pub type_order: Option<usize>,
    pub entities_per_type: Option<usize>,
    pub min_states: Option<usize>,
    pub max_states: Option<usize>,
    pub click_prob: Option<f64>,
    pub ere_prob: Option<f64>,
    pub tre_prob: Option<f64>,
    pub misspell_prob: Option<f64>,
    pub related_prob: Option<f64>,
    pub sharpness: Option<f64>,
    pub zipf_exponent: Option<f64>,
}

macro_rules! apply {
    ($target:expr, $section:expr, $($field:ident),+) => {
        $(if let Some(v) = $section.$field.clone() { $target.$field = v; })+
    };
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn distsup(&self, seed: u64) -> DistsupConfig {
        let mut c = DistsupConfig {
            seed,
            ..DistsupConfig::default()
        };
        apply!(c, self.distsup, min_name_tokens, none_multiple);
        c
    }

    pub fn mention(&self) -> MentionFeatureConfig {
        let mut c = MentionFeatureConfig::default();
        apply!(
            c,
            self.mention,
            window,
            max_ngram,
            repeat_window,
            repeat_threshold,
            session_context,
            gazetteer_min_tokens
        );
        c
    }

    pub fn typer(&self) -> TyperFeatureConfig {
        let mut c = TyperFeatureConfig::default();
        apply!(c, self.typer, context_n, neighbor_window);
        c
    }

    pub fn crf(&self, seed: u64, exec: Execution) -> CrfConfig {
        let mut optimizer = LbfgsConfig::default();
        apply!(optimizer, self.crf, max_iters, tol);
        let mut c = CrfConfig {
            seed,
            exec,
            optimizer,
            ..CrfConfig::default()
        };
        apply!(c, self.crf, l2_variance);
        c.restart_noise = self.crf.restart_noise;
        c
    }

    pub fn relex(&self, exec: Execution) -> RelexConfig {
        let mut optimizer = LbfgsConfig::default();
        apply!(optimizer, self.relex, max_iters, tol);
        let mut c = RelexConfig {
            optimizer,
            exec,
            ..RelexConfig::default()
        };
        apply!(c, self.relex, l2_variance, threshold);
        c
    }

    pub fn synth(&self, seed: u64) -> SynthConfig {
        let mut c = SynthConfig {
            seed,
            ..SynthConfig::default()
        };
        apply!(
            c,
            self.synth,
            n_sessions,
            type_order,
            entities_per_type,
            min_states,
            max_states,
            click_prob,
            ere_prob,
            tre_prob,
            misspell_prob,
            related_prob,
            sharpness,
            zipf_exponent
        );
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let c: PipelineConfig = toml::from_str("").unwrap();
        assert_eq!(c.mention(), MentionFeatureConfig::default());
        assert_eq!(c.crf(42, Execution::Parallel), CrfConfig::default());
        assert_eq!(c.synth(42), SynthConfig::default());
    }

    #[test]
    fn sections_override_fields() {
        let c: PipelineConfig = toml::from_str(
            "seed = 7\n[mention]\nrepeat_threshold = 1\n[crf]\nmax_iters = 5\nl2_variance = 2.0\n[synth]\nn_sessions = 3\n",
        )
        .unwrap();
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.mention().repeat_threshold, 1);
        let crf = c.crf(7, Execution::Sequential);
        assert_eq!((crf.optimizer.max_iters, crf.l2_variance, crf.seed), (5, 2.0, 7));
        assert_eq!(c.synth(7).n_sessions, 3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<PipelineConfig>("[mention]\nwindoww = 3\n").is_err());
    }
}
