//! Run configuration stored as flat `section.key = value` lines.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use exrec::datamodel::SynthConfig;
use exrec::kcmp::EnhancerMode;
use exrec::pipeline::PipelineConfig;
use exrec::reranker::{LabelRule, ScoreMode, SigmaInit};

/// Everything a run needs besides the command line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// Interaction log and concept map read by `ingest`.
    pub log: Option<PathBuf>,
    pub kc_map: Option<PathBuf>,
    pub synth: SynthConfig,
    pub pipeline: PipelineConfig,
}

trait Value: Sized {
    fn render(&self) -> String;
    fn read(s: &str) -> Result<Self, String>;
}

macro_rules! from_str_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn render(&self) -> String {
                self.to_string()
            }
            fn read(s: &str) -> Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
        }
    )*};
}

// `f64::to_string` prints the shortest representation that parses back
// to the same bits, so rendering is lossless.
from_str_value!(usize, u64, f64, bool);

macro_rules! named_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn render(&self) -> String {
                self.name().to_string()
            }
            fn read(s: &str) -> Result<Self, String> {
                <$t>::parse(s).ok_or_else(|| format!("unknown value `{s}`"))
            }
        }
    )*};
}

named_value!(EnhancerMode, ScoreMode, SigmaInit, LabelRule);

impl Value for (u32, u32) {
    fn render(&self) -> String {
        format!("{}:{}", self.0, self.1)
    }
    fn read(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once(':').ok_or("expected TRAIN:TEST")?;
        let a = a.trim().parse().map_err(|e| format!("{e}"))?;
        let b = b.trim().parse().map_err(|e| format!("{e}"))?;
        Ok((a, b))
    }
}

impl Value for Option<PathBuf> {
    fn render(&self) -> String {
        self.as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default()
    }
    fn read(s: &str) -> Result<Self, String> {
        Ok((!s.is_empty()).then(|| PathBuf::from(s)))
    }
}

macro_rules! keys {
    ($($key:literal => $($field:ident).+;)*) => {
        impl RunConfig {
            /// Every key with its current value, in file order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$(($key, Value::render(&self.$($field).+))),*]
            }

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => {
                        self.$($field).+ = Value::read(value)
                            .map_err(|e| anyhow::anyhow!("{key}: {e}"))?;
                    })*
                    _ => bail!("unknown configuration key `{key}`"),
                }
                Ok(())
            }
        }
    };
}

keys! {
    "run.seed" => seed;
    "data.log" => log;
    "data.kc_map" => kc_map;
    "data.active_fraction" => pipeline.active_fraction;
    "data.split" => pipeline.split_ratio;
    "synth.students" => synth.students;
    "synth.concepts" => synth.concepts;
    "synth.exercises" => synth.exercises;
    "synth.skew" => synth.skew;
    "synth.min_length" => synth.min_length;
    "synth.max_length" => synth.max_length;
    "synth.second_concept_prob" => synth.second_concept_prob;
    "synth.stickiness" => synth.stickiness;
    "synth.target_difficulty" => synth.target_difficulty;
    "synth.difficulty_spread" => synth.difficulty_spread;
    "enhancer.truncation" => pipeline.kcmp.enhancer.truncation;
    "enhancer.beta" => pipeline.kcmp.enhancer.beta;
    "enhancer.lambda_s" => pipeline.kcmp.enhancer.lambda_s;
    "enhancer.dim" => pipeline.kcmp.enhancer.dim;
    "enhancer.embed_dim" => pipeline.kcmp.enhancer.embed_dim;
    "kcmp.hidden" => pipeline.kcmp.hidden;
    "kcmp.epochs" => pipeline.kcmp.epochs;
    "kcmp.batch_size" => pipeline.kcmp.batch_size;
    "kcmp.learning_rate" => pipeline.kcmp.learning_rate;
    "kcmp.mode" => pipeline.kcmp.mode;
    "filter.delta" => pipeline.rerank.filter.delta;
    "filter.size" => pipeline.rerank.filter.size;
    "filter.exclude_solved" => pipeline.rerank.filter.exclude_solved;
    "rerank.q_s" => pipeline.rerank.q_s;
    "rerank.q_e" => pipeline.rerank.q_e;
    "rerank.q_h" => pipeline.rerank.q_h;
    "rerank.heads" => pipeline.rerank.heads;
    "rerank.head_hidden" => pipeline.rerank.head_hidden;
    "rerank.epochs" => pipeline.rerank.epochs;
    "rerank.batch_size" => pipeline.rerank.batch_size;
    "rerank.learning_rate" => pipeline.rerank.learning_rate;
    "rerank.mode" => pipeline.rerank.mode;
    "rerank.sigma_init" => pipeline.rerank.sigma_init;
    "rerank.labels" => pipeline.rerank.labels;
    "rerank.history_fraction" => pipeline.rerank.history_fraction;
    "rerank.windows" => pipeline.rerank.windows;
    "eval.k" => pipeline.top_k;
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected `key = value`", no + 1))?;
            cfg.set(key.trim(), value.trim())
                .with_context(|| format!("line {}", no + 1))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (key, value) in self.entries() {
            let s = key.split('.').next().unwrap_or("");
            if s != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "# {s}");
                section = s;
            }
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    /// Pipeline settings with the run seed copied into every component.
    pub fn seeded_pipeline(&self) -> PipelineConfig {
        self.pipeline.clone().with_seed(self.seed)
    }

    pub fn seeded_synth(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.seeded_pipeline().validate()?;
        self.seeded_synth().validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn awkward_values_round_trip() {
        let mut cfg = RunConfig {
            seed: u64::MAX,
            log: Some(PathBuf::from("/tmp/some log.csv")),
            ..RunConfig::default()
        };
        cfg.pipeline.kcmp.learning_rate = 0.1 + 0.2;
        cfg.pipeline.kcmp.mode = EnhancerMode::Off;
        cfg.pipeline.rerank.mode = ScoreMode::Probabilistic;
        cfg.pipeline.rerank.sigma_init = SigmaInit::Zero;
        cfg.pipeline.rerank.labels = LabelRule::NotMastered;
        cfg.pipeline.split_ratio = (7, 3);
        cfg.synth.skew = 1.0 / 3.0;
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::parse("kcmp.depth = 3").is_err());
        assert!(RunConfig::parse("kcmp.mode = sometimes").is_err());
        assert!(RunConfig::parse("just words").is_err());
        let cfg = RunConfig::parse("# comment\n\nkcmp.epochs = 4 # trailing\n").unwrap();
        assert_eq!(cfg.pipeline.kcmp.epochs, 4);
    }
}
