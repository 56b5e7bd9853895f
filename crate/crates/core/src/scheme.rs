//! Training-inference schemes, training hyperparameters and ablation toggles.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::EaeInstance;
use crate::error::{Error, Result};
use crate::mask::MaskOptions;
use crate::span::AssignmentCost;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Single,
    Multi,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Single => "single",
            Mode::Multi => "multi",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SchemeConfig {
    pub train_mode: Mode,
    pub infer_mode: Mode,
}

pub const VALID_SCHEMES: [&str; 3] = ["single-single", "multi-multi", "multi-single"];

impl SchemeConfig {
    pub const SINGLE_SINGLE: SchemeConfig = SchemeConfig {
        train_mode: Mode::Single,
        infer_mode: Mode::Single,
    };
    pub const MULTI_MULTI: SchemeConfig = SchemeConfig {
        train_mode: Mode::Multi,
        infer_mode: Mode::Multi,
    };
    pub const MULTI_SINGLE: SchemeConfig = SchemeConfig {
        train_mode: Mode::Multi,
        infer_mode: Mode::Single,
    };
}

impl fmt::Display for SchemeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.train_mode, self.infer_mode)
    }
}

impl FromStr for SchemeConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single-single" => Ok(Self::SINGLE_SINGLE),
            "multi-multi" => Ok(Self::MULTI_MULTI),
            "multi-single" => Ok(Self::MULTI_SINGLE),
            other => Err(Error::InvalidArgument(format!(
                "unsupported scheme `{other}`; valid schemes are {}",
                VALID_SCHEMES.join(", ")
            ))),
        }
    }
}

impl TryFrom<String> for SchemeConfig {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SchemeConfig> for String {
    fn from(s: SchemeConfig) -> String {
        s.to_string()
    }
}

/// One model input: the events whose triggers are marked and whose rows
/// form the table.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Sample {
    pub instance: usize,
    pub events: Vec<usize>,
}

/// Single mode gives one sample per event. Multi mode gives one sample with
/// every event, split into trigger-order groups only when the triggers do
/// not fit in one `window`.
pub fn expand_instance(x: &EaeInstance, instance: usize, mode: Mode, window: usize) -> Vec<Sample> {
    match mode {
        Mode::Single => (0..x.num_events())
            .map(|e| Sample {
                instance,
                events: vec![e],
            })
            .collect(),
        Mode::Multi => x
            .window_groups(window)
            .into_iter()
            .map(|events| Sample { instance, events })
            .collect(),
    }
}

pub fn expand_instances(corpus: &[EaeInstance], mode: Mode, window: usize) -> Vec<Sample> {
    corpus
        .iter()
        .enumerate()
        .flat_map(|(i, x)| expand_instance(x, i, mode, window))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    Desk,
}

impl FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::InvalidArgument(format!("unknown profile `{other}` (paper or desk)"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Ace05,
    Rams,
    Wikievents,
    Mlee,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub warmup_ratio: f64,
    pub learning_rate: f64,
    /// Learning-rate multiplier of the cross-attention parameters.
    pub cross_attention_lr_scale: f64,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
    pub batch_size: usize,
    /// Words.
    pub context_window: usize,
    /// Words.
    pub max_span_length: usize,
    pub max_encoder_len: usize,
    pub max_decoder_len: usize,
    pub seed: u64,
    /// Steps between dev evaluations; 0 evaluates only at the end.
    pub eval_every: usize,
    pub assignment_cost: AssignmentCost,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn paper(dataset: Dataset) -> Self {
        let (batch_size, max_encoder_len, max_decoder_len) = match dataset {
            Dataset::Ace05 => (8, 200, 250),
            Dataset::Rams => (4, 500, 200),
            Dataset::Wikievents | Dataset::Mlee => (4, 500, 360),
        };
        TrainConfig {
            steps: 10000,
            warmup_ratio: 0.1,
            learning_rate: 2e-5,
            cross_attention_lr_scale: 1.5,
            weight_decay: 0.01,
            max_grad_norm: 5.0,
            batch_size,
            context_window: 250,
            max_span_length: 10,
            max_encoder_len,
            max_decoder_len,
            seed: 42,
            eval_every: 500,
            assignment_cost: AssignmentCost::Logit,
        }
    }

    pub fn desk() -> Self {
        TrainConfig {
            steps: 300,
            warmup_ratio: 0.1,
            learning_rate: 2e-3,
            cross_attention_lr_scale: 1.5,
            weight_decay: 0.0,
            max_grad_norm: 5.0,
            batch_size: 4,
            context_window: 250,
            max_span_length: 10,
            max_encoder_len: 512,
            max_decoder_len: 512,
            seed: 0,
            eval_every: 0,
            assignment_cost: AssignmentCost::Logit,
        }
    }

    pub fn for_profile(profile: Profile, dataset: Dataset) -> Self {
        match profile {
            Profile::Paper => Self::paper(dataset),
            Profile::Desk => Self::desk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("context_window", self.context_window),
            ("max_span_length", self.max_span_length),
            ("max_encoder_len", self.max_encoder_len),
            ("max_decoder_len", self.max_decoder_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        let reals = [
            ("learning_rate", self.learning_rate),
            ("cross_attention_lr_scale", self.cross_attention_lr_scale),
            ("max_grad_norm", self.max_grad_norm),
        ];
        for (name, v) in reals {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::InvalidArgument(format!(
                "warmup_ratio must lie in [0, 1), got {}",
                self.warmup_ratio
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("weight_decay must be non-negative".into()));
        }
        Ok(())
    }

    /// Linear warmup then linear decay to zero, as a factor of the base rate.
    pub fn lr_factor(&self, step: usize) -> f64 {
        let warm = (self.warmup_ratio * self.steps as f64).round() as usize;
        if step < warm {
            (step + 1) as f64 / warm as f64
        } else {
            let rest = self.steps.saturating_sub(warm).max(1);
            (self.steps.saturating_sub(step) as f64 / rest as f64).clamp(0.0, 1.0)
        }
    }
}

/// Component toggles; all on by default.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// Structure-aware attention mask; off means all-true.
    pub saam: bool,
    /// Table initialized from encoder outputs; off means token embeddings.
    pub pet: bool,
    /// Natural-language prompts; off means bare role names.
    pub prompts: bool,
    pub mask: MaskOptions,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            saam: true,
            pet: true,
            prompts: true,
            mask: MaskOptions::default(),
        }
    }
}

impl Ablation {
    pub fn label(&self) -> String {
        let mut off = Vec::new();
        if !self.saam {
            off.push("saam");
        }
        if !self.pet {
            off.push("pet");
        }
        if !self.prompts {
            off.push("prompts");
        }
        if off.is_empty() {
            "full".to_string()
        } else {
            format!("w/o {}", off.join("+"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{total_events, EventRecord, Span};

    fn inst(triggers: &[(usize, usize)]) -> EaeInstance {
        EaeInstance {
            doc_id: "s".into(),
            tokens: (0..40).map(|i| format!("w{i}")).collect(),
            events: triggers
                .iter()
                .map(|&(s, e)| EventRecord {
                    trigger: Span::new(s, e),
                    event_type: "T".into(),
                    arguments: vec![],
                })
                .collect(),
        }
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("multi-single".parse::<SchemeConfig>().unwrap(), SchemeConfig::MULTI_SINGLE);
        let err = "single-multi".parse::<SchemeConfig>().unwrap_err().to_string();
        assert!(VALID_SCHEMES.iter().all(|s| err.contains(s)));
        let json = serde_json::to_string(&SchemeConfig::MULTI_MULTI).unwrap();
        assert_eq!(json, "\"multi-multi\"");
    }

    #[test]
    fn expansion_counts() {
        let one = inst(&[(3, 4)]);
        assert_eq!(expand_instance(&one, 0, Mode::Single, 250), expand_instance(&one, 0, Mode::Multi, 250));
        let three = inst(&[(9, 10), (3, 4), (20, 21)]);
        assert_eq!(expand_instance(&three, 0, Mode::Single, 250).len(), 3);
        let multi = expand_instance(&three, 0, Mode::Multi, 250);
        assert_eq!(multi.len(), 1);
        assert_eq!(multi[0].events, vec![1, 0, 2]);
        assert_eq!(expand_instance(&three, 0, Mode::Multi, 10).len(), 2);
        let corpus = vec![one, three];
        assert_eq!(expand_instances(&corpus, Mode::Single, 250).len(), total_events(&corpus));
        assert_eq!(expand_instances(&corpus, Mode::Multi, 250).len(), corpus.len());
    }

    #[test]
    fn paper_defaults() {
        let c = TrainConfig::paper(Dataset::Ace05);
        assert_eq!((c.steps, c.warmup_ratio, c.learning_rate, c.max_grad_norm), (10000, 0.1, 2e-5, 5.0));
        assert_eq!((c.batch_size, c.max_encoder_len, c.max_decoder_len), (8, 200, 250));
        assert_eq!(TrainConfig::paper(Dataset::Mlee).max_decoder_len, 360);
        c.validate().unwrap();
        TrainConfig::desk().validate().unwrap();
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::desk()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn schedule_shape() {
        let c = TrainConfig {
            steps: 100,
            warmup_ratio: 0.1,
            ..TrainConfig::desk()
        };
        assert!((c.lr_factor(0) - 0.1).abs() < 1e-12);
        assert_eq!(c.lr_factor(9), 1.0);
        assert_eq!(c.lr_factor(10), 1.0);
        assert!((c.lr_factor(55) - 0.5).abs() < 1e-12);
        assert_eq!(c.lr_factor(100), 0.0);
    }

    #[test]
    fn toggles_default_on() {
        let a = Ablation::default();
        assert!(a.saam && a.pet && a.prompts);
        assert_eq!(a.label(), "full");
        let t: Ablation = serde_json::from_str(r#"{"saam": false}"#).unwrap();
        assert_eq!(t.label(), "w/o saam");
    }
}
