//! Run configuration: dataset, model dimensions, and training settings
//! bundled into one JSON-serializable document with two named presets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{Model, ModelDims, ModelVariant};
use crate::optim::LrSchedule;
use crate::synth::DatasetConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub variant: String,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dataset: DatasetConfig,
    pub dims: ModelDims,
    pub schedule: LrSchedule,
}

impl RunConfig {
    /// Small dimensions tuned for minutes-long CPU runs.
    pub fn desk(seed: u64) -> Self {
        let dataset = DatasetConfig {
            n_train: 64,
            n_val: 16,
            rounds: 10,
            n_objects: 8,
            n_dense: 4,
            n_cand: 10,
            d_obj: 64,
            d_rel: 32,
            seed,
        };
        let dims = ModelDims {
            d_obj: 64,
            d_rel: 32,
            d_word: 16,
            d_hid: 32,
            d_att: 32,
            d_fuse: 32,
            n_objects: 8,
            n_dense: 4,
            n_cand: 10,
            max_len: 10,
            vocab_size: dataset.vocab().len(),
            second_source: true,
            dropout: 0.0,
        };
        let epochs = 40;
        RunConfig {
            variant: ModelVariant::DualVd.name().to_string(),
            seed,
            epochs,
            batch_size: 16,
            dataset,
            dims,
            schedule: LrSchedule::default().with_total(epochs),
        }
    }

    /// The published model capacity; dialogue counts stay desk-sized so
    /// the configuration remains runnable without a corpus.
    pub fn paper(seed: u64) -> Self {
        let dataset = DatasetConfig {
            n_train: 64,
            n_val: 16,
            rounds: 10,
            n_objects: 36,
            n_dense: 6,
            n_cand: 100,
            d_obj: 2048,
            d_rel: 512,
            seed,
        };
        let dims = ModelDims {
            d_obj: 2048,
            d_rel: 512,
            d_word: 300,
            d_hid: 512,
            d_att: 512,
            d_fuse: 512,
            n_objects: 36,
            n_dense: 6,
            n_cand: 100,
            max_len: 20,
            vocab_size: dataset.vocab().len(),
            second_source: true,
            dropout: 0.5,
        };
        RunConfig {
            variant: ModelVariant::DualVd.name().to_string(),
            seed,
            epochs: 16,
            batch_size: 15,
            dataset,
            dims,
            schedule: LrSchedule::default(),
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "desk" => Ok(Self::desk(seed)),
            "paper" => Ok(Self::paper(seed)),
            other => Err(Error::Config(format!(
                "unknown preset `{other}`; expected desk or paper"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ModelVariant::parse(&self.variant)?;
        self.dims.validate()?;
        self.dataset.validate()?;
        self.schedule.validate()?;
        let mismatch = |what: &str| {
            Err(Error::Config(format!(
                "dataset and model disagree on {what}"
            )))
        };
        if self.dims.n_objects != self.dataset.n_objects {
            return mismatch("n_objects");
        }
        if self.dims.n_dense != self.dataset.n_dense {
            return mismatch("n_dense");
        }
        if self.dims.n_cand != self.dataset.n_cand {
            return mismatch("n_cand");
        }
        if self.dims.d_obj != self.dataset.d_obj {
            return mismatch("d_obj");
        }
        if self.dims.d_rel != self.dataset.d_rel {
            return mismatch("d_rel");
        }
        let vocab_len = self.dataset.vocab().len();
        if self.dims.vocab_size != vocab_len {
            return Err(Error::Config(format!(
                "vocab_size {} but the generator vocabulary holds {vocab_len} words",
                self.dims.vocab_size
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.schedule.total_epochs < self.epochs {
            return Err(Error::Config(
                "schedule must cover the full training run".into(),
            ));
        }
        Ok(())
    }

    pub fn parsed_variant(&self) -> Result<ModelVariant> {
        ModelVariant::parse(&self.variant)
    }

    pub fn model(&self) -> Result<Model> {
        Model::new(self.dims.clone(), self.parsed_variant()?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        RunConfig::desk(42).validate().unwrap();
        RunConfig::paper(42).validate().unwrap();
        assert!(RunConfig::preset("desk", 1).is_ok());
        assert!(RunConfig::preset("PAPER", 1).is_ok());
        assert!(RunConfig::preset("tiny", 1).is_err());
    }

    #[test]
    fn json_roundtrip_preserves_everything() {
        let cfg = RunConfig::desk(7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        cfg.save(&path).unwrap();
        let loaded = RunConfig::load(&path).unwrap();
        assert_eq!(cfg, loaded);
    }

    #[test]
    fn cross_field_disagreements_are_rejected() {
        let mut cfg = RunConfig::desk(1);
        cfg.dims.n_objects = 7;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::desk(1);
        cfg.dims.vocab_size = 9;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::desk(1);
        cfg.variant = "nope".into();
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::desk(1);
        cfg.epochs = cfg.schedule.total_epochs + 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn desk_model_builds_for_every_variant() {
        let cfg = RunConfig::desk(3);
        for v in crate::fusion::ALL_VARIANTS {
            let mut c = cfg.clone();
            c.variant = v.name().to_string();
            c.validate().unwrap();
            let model = c.model().unwrap();
            let params = model.init_params(c.seed).unwrap();
            assert!(params.total_values() > 0);
        }
    }
}
