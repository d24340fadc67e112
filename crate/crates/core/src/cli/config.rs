//! The run configuration read by `train`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::{ModelConfig, Variant};
use crate::trainer::TrainConfig;

/// Everything one training run needs. Relative paths resolve against the
/// directory holding the configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub records: PathBuf,
    /// Built-in protocol name; ignored when `split_file` or `manifest` is set.
    #[serde(default)]
    pub split: Option<String>,
    /// JSON split specification.
    #[serde(default)]
    pub split_file: Option<PathBuf>,
    /// Pre-built task manifest; takes precedence over the split fields.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default = "default_feature_dim")]
    pub d_img: usize,
    #[serde(default = "default_feature_dim")]
    pub d_body: usize,
    #[serde(default = "default_n_sem")]
    pub n_sem: usize,
    #[serde(default = "default_branch_width")]
    pub branch_width: usize,
    #[serde(default = "default_sem_hidden")]
    pub sem_hidden: usize,
    #[serde(default = "default_d_emb")]
    pub d_emb: usize,
    /// Run seed for initialization and batch sampling.
    #[serde(default)]
    pub seed: u64,
    /// Overrides the split's support-selection seed.
    #[serde(default)]
    pub support_seed: Option<u64>,
    /// Write an intermediate checkpoint every this many epochs; 0 disables.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_variant() -> Variant {
    ModelConfig::default().variant
}

fn default_feature_dim() -> usize {
    ModelConfig::default().d_img
}

fn default_n_sem() -> usize {
    ModelConfig::default().n_sem
}

fn default_branch_width() -> usize {
    ModelConfig::default().branch_width
}

fn default_sem_hidden() -> usize {
    ModelConfig::default().sem_hidden
}

fn default_d_emb() -> usize {
    ModelConfig::default().d_emb
}

impl RunConfig {
    /// Reads a configuration, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.rebase(base);
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.records);
        join(&mut self.out_dir);
        if let Some(p) = self.split_file.as_mut() {
            join(p);
        }
        if let Some(p) = self.manifest.as_mut() {
            join(p);
        }
    }

    pub fn model_config(&self, n_classes: usize) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            d_img: self.d_img,
            d_body: self.d_body,
            n_sem: self.n_sem,
            branch_width: self.branch_width,
            sem_hidden: self.sem_hidden,
            d_emb: self.d_emb,
            n_classes,
        }
    }

    /// Problems that can be found without reading any data.
    pub fn problems(&self) -> Vec<String> {
        let mut out: Vec<String> = self.train.problems();
        if !self.records.is_file() {
            out.push(format!(
                "records file {} does not exist",
                self.records.display()
            ));
        }
        for (what, p) in [
            ("split_file", &self.split_file),
            ("manifest", &self.manifest),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    out.push(format!("{what} {} does not exist", p.display()));
                }
            }
        }
        if self.split.is_none() && self.split_file.is_none() && self.manifest.is_none() {
            out.push("one of split, split_file or manifest is required".into());
        }
        if self.out_dir.is_file() {
            out.push(format!("out_dir {} is a file", self.out_dir.display()));
        }
        if let Err(e) = self.model_config(1).validate() {
            out.push(e.to_string());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_unknown_keys() {
        let c: RunConfig =
            serde_json::from_str(r#"{"records": "r.jsonl", "split": "CAT-6:6", "out_dir": "o"}"#)
                .unwrap();
        assert_eq!(c.variant, Variant::SemIbDml);
        assert_eq!((c.d_img, c.n_sem, c.d_emb), (512, 150, 128));
        assert_eq!(c.train, TrainConfig::default());
        let err = serde_json::from_str::<RunConfig>(r#"{"records": "r", "out_dir": "o", "lr": 1}"#)
            .unwrap_err();
        assert!(err.to_string().contains("unknown field"));
        let err = serde_json::from_str::<RunConfig>(
            r#"{"records": "r", "out_dir": "o", "train": {"epoch": 1}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("unknown field"));
    }

    #[test]
    fn problems_are_collected() {
        let mut c: RunConfig =
            serde_json::from_str(r#"{"records": "/nonexistent/r.jsonl", "out_dir": "o"}"#).unwrap();
        c.train.lr = 0.0;
        c.d_emb = 0;
        let p = c.problems();
        assert_eq!(p.len(), 4, "{p:?}");
    }
}
