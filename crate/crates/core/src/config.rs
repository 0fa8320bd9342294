//! Flat, namespaced run configuration.
//!
//! A config file is a JSON object whose keys come from [`KEYS`], for example
//! `{"model.d": 32, "train.epochs": 60}`. Resolution order is command-line
//! overrides, then the file, then the defaults below. Unknown keys are
//! rejected.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::synthetic::KinematicsConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub synth: KinematicsConfig,
    pub synth_subjects: usize,
    pub synth_per_class: usize,
    /// Give both labels the same onset range.
    pub synth_null_mode: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            synth: KinematicsConfig::default(),
            synth_subjects: 40,
            synth_per_class: 1,
            synth_null_mode: false,
        }
    }
}

macro_rules! registry {
    ($($key:literal => $($field:ident).+ , $doc:literal;)*) => {
        /// Every accepted key with its description.
        pub const KEYS: &[(&str, &str)] = &[$(($key, $doc)),*];

        impl RunConfig {
            /// Current value of `key` as JSON.
            pub fn get(&self, key: &str) -> Result<Value> {
                match key {
                    $($key => Ok(serde_json::to_value(&self.$($field).+)?),)*
                    _ => Err(Error::UnknownConfigKey(key.to_string())),
                }
            }

            /// Sets `key` from a JSON value of the field's type.
            pub fn set(&mut self, key: &str, value: Value) -> Result<()> {
                match key {
                    $($key => {
                        self.$($field).+ = serde_json::from_value(value)
                            .map_err(|e| Error::ConfigInvalid(format!("{key}: {e}")))?;
                    })*
                    _ => return Err(Error::UnknownConfigKey(key.to_string())),
                }
                Ok(())
            }
        }
    };
}

registry! {
    "model.d" => train.model.d, "Feature width of every layer";
    "model.tokens" => train.model.tokens, "Tokens mixed from the per-landmark features";
    "model.heads" => train.model.heads, "Attention heads; must divide model.d";
    "model.n_curves" => train.model.n_curves, "Curves grown per grouping stage";
    "model.curve_len" => train.model.curve_len, "Steps per curve";
    "model.knn" => train.model.knn, "Neighbours per landmark";
    "model.spatial_blocks" => train.model.spatial_blocks, "Blocks attending across tokens within a frame";
    "model.temporal_blocks" => train.model.temporal_blocks, "Blocks attending across frames for each token";
    "model.block_order" => train.model.block_order, "sequential or interleaved";
    "model.pool" => train.model.pool, "Token and frame pooling before the head: mean or max";
    "model.tau" => train.model.tau, "Gumbel-Softmax temperature during training";
    "model.use_curves" => train.model.use_curves, "Curve grouping after CIC layers 2 and 4";
    "model.normalize" => train.model.normalize, "Coordinate normalization: frame, video or off";
    "model.eval_clips" => train.model.eval_clips, "Clips averaged per video at evaluation";
    "data.clip_len" => train.model.clip_len, "Consecutive frames per clip";
    "data.fps" => train.fps, "Resample videos to this rate on load; null keeps the source rate";
    "train.batch_size" => train.batch_size, "Videos per optimizer step";
    "train.epochs" => train.epochs, "Passes over the training videos";
    "train.lr" => train.lr, "AdamW learning rate";
    "train.lr_schedule" => train.lr_schedule, "constant, or cosine decay to 0 over all steps";
    "train.weight_decay" => train.weight_decay, "AdamW decoupled weight decay";
    "train.seed" => train.seed, "Root seed for every random draw";
    "train.folds" => train.folds, "Subject-disjoint cross-validation folds";
    "train.jobs" => train.jobs, "Folds trained in parallel";
    "trials.count" => train.trials, "Repeated cross-validation runs averaged together";
    "trials.reseed_folds" => train.reseed_folds, "Draw new folds per trial instead of only new weights";
    "synth.subjects" => synth_subjects, "Synthetic subjects";
    "synth.per_class" => synth_per_class, "Videos per subject and label";
    "synth.null_mode" => synth_null_mode, "Use one onset range for both labels";
    "synth.n_landmarks" => synth.n_landmarks, "Landmarks per synthetic frame";
    "synth.fps" => synth.fps, "Synthetic frame rate";
    "synth.duration_s" => synth.duration_s, "Synthetic video length in seconds";
    "synth.onset_range_spontaneous" => synth.onset_range_spontaneous, "Onset rise time range for spontaneous smiles, seconds";
    "synth.onset_range_posed" => synth.onset_range_posed, "Onset rise time range for posed smiles, seconds";
    "synth.amplitude_range" => synth.amplitude_range, "Apex displacement range in face-radius units";
    "synth.noise_sd" => synth.noise_sd, "Gaussian coordinate noise";
    "synth.asymmetry_range" => synth.asymmetry_range, "Left-side gain range";
    "synth.lead_in_range" => synth.lead_in_range, "Neutral lead-in range, seconds";
    "synth.apex_range" => synth.apex_range, "Apex hold range, seconds";
    "synth.offset_range" => synth.offset_range, "Offset decay range, seconds";
}

impl RunConfig {
    /// Applies a flat JSON object of overrides.
    pub fn apply_json(&mut self, text: &str) -> Result<()> {
        let map: BTreeMap<String, Value> = serde_json::from_str(text)?;
        for (k, v) in map {
            self.set(&k, v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_json(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key=value`; the value is read as JSON, falling back to a
    /// bare string.
    pub fn set_str(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment.split_once('=').ok_or_else(|| {
            Error::ConfigInvalid(format!("expected key=value, got `{assignment}`"))
        })?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        self.set(key.trim(), value)
    }

    /// All keys with their current values.
    pub fn to_flat(&self) -> BTreeMap<String, Value> {
        KEYS.iter()
            .map(|(k, _)| (k.to_string(), self.get(k).expect("registered key")))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_flat())?)
    }

    /// Kinematics after applying `synth.null_mode`.
    pub fn kinematics(&self) -> KinematicsConfig {
        if self.synth_null_mode {
            self.synth.clone().null_mode()
        } else {
            self.synth.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.kinematics().validate()?;
        if self.synth_subjects == 0 || self.synth_per_class == 0 {
            return Err(Error::ConfigInvalid(
                "synth.subjects and synth.per_class must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Key table with defaults, for help output.
pub fn describe_keys() -> String {
    let defaults = RunConfig::default();
    let width = KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    KEYS.iter()
        .map(|(k, doc)| {
            format!(
                "  {k:<width$}  {doc} [default: {}]\n",
                defaults.get(k).expect("registered key")
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::BlockOrder;

    #[test]
    fn every_key_round_trips_its_default() {
        let d = RunConfig::default();
        let mut c = RunConfig::default();
        for (k, _) in KEYS {
            c.set(k, d.get(k).unwrap()).unwrap();
        }
        assert_eq!(c, d);
        assert_eq!(d.to_flat().len(), KEYS.len());
    }

    #[test]
    fn documented_defaults() {
        let d = RunConfig::default();
        assert_eq!(d.get("train.batch_size").unwrap(), 16);
        assert_eq!(d.get("train.epochs").unwrap(), 300);
        assert_eq!(d.get("train.lr").unwrap(), 5e-4);
        assert_eq!(d.get("data.clip_len").unwrap(), 16);
        assert_eq!(d.get("model.tokens").unwrap(), 32);
        assert_eq!(d.get("data.fps").unwrap(), Value::Null);
        assert_eq!(d.get("trials.reseed_folds").unwrap(), false);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut c = RunConfig::default();
        assert!(
            matches!(c.apply_json(r#"{"model.width": 3}"#), Err(Error::UnknownConfigKey(k)) if k == "model.width")
        );
        assert!(matches!(
            c.set_str("train.nope=1"),
            Err(Error::UnknownConfigKey(_))
        ));
    }

    #[test]
    fn wrong_types_rejected() {
        let mut c = RunConfig::default();
        assert!(matches!(
            c.set_str("train.epochs=fast"),
            Err(Error::ConfigInvalid(_))
        ));
        assert!(matches!(
            c.set_str("model.block_order=diagonal"),
            Err(Error::ConfigInvalid(_))
        ));
        assert!(matches!(c.set_str("model.d"), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn overrides_apply_in_order() {
        let mut c = RunConfig::default();
        c.apply_json(r#"{"train.epochs": 20, "model.block_order": "interleaved", "synth.onset_range_posed": [0.1, 0.3]}"#)
            .unwrap();
        c.set_str("train.epochs=7").unwrap();
        c.set_str("data.fps=10").unwrap();
        assert_eq!(c.train.epochs, 7);
        assert_eq!(c.train.fps, Some(10.0));
        assert_eq!(c.train.model.block_order, BlockOrder::Interleaved);
        assert_eq!(c.synth.onset_range_posed, (0.1, 0.3));
    }

    #[test]
    fn help_lists_every_key() {
        let text = describe_keys();
        assert!(KEYS.iter().all(|(k, _)| text.contains(k)));
        assert!(text.contains("[default: 300]"));
    }
}
