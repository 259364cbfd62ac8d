//! Run configuration shared by every command-line subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    load_csv, load_idx, mnist_column_split, stratified_split, Dataset, NormStats, PartitionSpec,
};
use crate::error::{Error, Result};
use crate::fuzz::CampaignConfig;
use crate::protocol::{ModelSpec, SplitArchitecture, TrainConfig};
use crate::synthesis::SynthesisConfig;
use crate::variance::SplitnnMode;

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "VFLKIT_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Idx { images: PathBuf, labels: PathBuf },
    Csv { path: PathBuf, label_column: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub source: DataSource,
    /// Z-score features with statistics of the training split.
    #[serde(default)]
    pub normalize: bool,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
}

fn default_test_fraction() -> f64 {
    0.2
}

/// How feature columns are divided among participants; A is participant 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionChoice {
    /// Contiguous image-column blocks for 2, 3 or 5 participants.
    ImageColumns {
        participants: usize,
    },
    /// Two parties where A holds ratio/(1 + ratio) of the columns.
    Ratio {
        ratio: f64,
    },
    /// A holds the first `a_columns` features, B the rest.
    Leading {
        a_columns: usize,
    },
    Explicit {
        parts: Vec<Vec<usize>>,
    },
}

impl PartitionChoice {
    pub fn resolve(&self, ds: &Dataset) -> Result<PartitionSpec> {
        let d = ds.dim();
        match self {
            Self::ImageColumns { participants } => mnist_column_split(ds, *participants),
            Self::Ratio { ratio } => ds.ratio_partition(*ratio),
            Self::Leading { a_columns } => {
                if *a_columns == 0 || *a_columns >= d {
                    return Err(Error::Partition(format!(
                        "A must hold between 1 and {} columns",
                        d - 1
                    )));
                }
                PartitionSpec::contiguous(&[*a_columns, d - a_columns])
            }
            Self::Explicit { parts } => PartitionSpec::new(parts.clone(), d),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssessmentConfig {
    /// A-inputs drawn from the test view for success rates.
    pub sample: usize,
    /// Rows of the tiny dataset S.
    pub tiny: usize,
    pub thresholds: Vec<f64>,
    /// Multiplier on the variance bound of bounded mutation.
    pub bound_multiplier: f64,
}

impl Default for AssessmentConfig {
    fn default() -> Self {
        Self {
            sample: 200,
            tiny: 20,
            thresholds: vec![0.95, 0.99],
            bound_multiplier: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureFixture {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VarianceConfig {
    pub mixtures: Vec<MixtureFixture>,
    pub samples: usize,
    pub splitnn_mode: SplitnnMode,
}

impl Default for VarianceConfig {
    fn default() -> Self {
        Self {
            mixtures: vec![MixtureFixture {
                weights: vec![1.0],
                means: vec![-1.0],
                stds: vec![1.5],
            }],
            samples: 1_000_000,
            splitnn_mode: SplitnnMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvdConfig {
    /// Benign rows, one synthesis pass each.
    pub h: usize,
    /// Test row of A to perturb; defaults to the first row that does not
    /// already dominate.
    pub input_index: Option<usize>,
    /// Reconstruction ranks to rate.
    pub ranks: Vec<usize>,
}

impl Default for SvdConfig {
    fn default() -> Self {
        Self {
            h: 1000,
            input_index: None,
            ranks: vec![1, 10],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub ratios: Vec<f64>,
    pub counts: Vec<usize>,
    /// Add a fuzzing column using the `fuzz` section.
    pub fuzz: bool,
    pub fuzz_corpus: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            ratios: vec![0.40, 0.65, 1.00, 1.33, 1.80, 2.11],
            counts: vec![2, 3, 5],
            fuzz: false,
            fuzz_corpus: 50,
        }
    }
}

/// Everything one command needs. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<DatasetSpec>,
    #[serde(default = "default_partition")]
    pub partition: PartitionChoice,
    #[serde(default = "default_model")]
    pub model: ModelSpec,
    /// Defaults depend on the model kind.
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default)]
    pub fuzz: CampaignConfig,
    /// `"sample:N"` or a path to a JSON array of A-inputs.
    #[serde(default = "default_corpus")]
    pub corpus: String,
    #[serde(default)]
    pub assessment: AssessmentConfig,
    #[serde(default)]
    pub variance: VarianceConfig,
    #[serde(default)]
    pub svd: SvdConfig,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Seeds training, sampling and fuzzing; per-section seeds are replaced.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_partition() -> PartitionChoice {
    PartitionChoice::Ratio { ratio: 1.0 }
}

fn default_model() -> ModelSpec {
    ModelSpec::Splitnn {
        arch: SplitArchitecture::default(),
    }
}

fn default_corpus() -> String {
    "sample:500".into()
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_workers() -> usize {
    1
}

/// Loaded and split data with its partition.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub spec: PartitionSpec,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks every section before any work starts.
    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if let Some(d) = &self.dataset {
            if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
                return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
            }
        }
        self.fuzz.validate().map_err(wrap)?;
        let a = &self.assessment;
        if a.sample == 0 || a.tiny == 0 {
            return Err(Error::Config(
                "assessment sample and tiny sizes must be positive".into(),
            ));
        }
        if a.thresholds.is_empty() || a.thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(Error::Config(
                "thresholds must be nonempty and lie in (0, 1]".into(),
            ));
        }
        if !(a.bound_multiplier.is_finite() && a.bound_multiplier > 0.0) {
            return Err(Error::Config("bound multiplier must be positive".into()));
        }
        if self.variance.samples < 2 {
            return Err(Error::Config(
                "variance needs at least two Monte-Carlo samples".into(),
            ));
        }
        if self.svd.h < 2 || self.svd.ranks.contains(&0) {
            return Err(Error::Config("svd needs h >= 2 and positive ranks".into()));
        }
        self.corpus_spec()?;
        Ok(())
    }

    /// Applies the global seed to every stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.fuzz.seed = seed;
        self
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = self
            .train
            .clone()
            .unwrap_or_else(|| self.model.default_train());
        t.seed = self.seed;
        t
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.output_dir.join("checkpoint.json")
    }

    pub fn corpus_spec(&self) -> Result<CorpusSpec> {
        match self.corpus.strip_prefix("sample:") {
            Some(n) => n
                .parse::<usize>()
                .ok()
                .filter(|n| *n > 0)
                .map(CorpusSpec::Sample)
                .ok_or_else(|| Error::Config(format!("bad corpus directive {:?}", self.corpus))),
            None => Ok(CorpusSpec::File(PathBuf::from(&self.corpus))),
        }
    }

    /// Reads, splits, normalizes and partitions the dataset.
    pub fn prepare_data(&self) -> Result<PreparedData> {
        let spec = self
            .dataset
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs a dataset section".into()))?;
        let full = match &spec.source {
            DataSource::Idx { images, labels } => load_idx(images, labels)?,
            DataSource::Csv { path, label_column } => load_csv(path, label_column)?,
        };
        let (mut train, mut test) = stratified_split(&full, spec.test_fraction, spec.split_seed)?;
        if spec.normalize {
            let stats = NormStats::fit(&train.features)?;
            train.features = stats.apply(&train.features)?;
            test.features = stats.apply(&test.features)?;
            train.norm_stats = Some(stats.clone());
            test.norm_stats = Some(stats);
        }
        let partition = self
            .partition
            .resolve(&train)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(PreparedData {
            train,
            test,
            spec: partition,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CorpusSpec {
    /// Draw this many test inputs of A.
    Sample(usize),
    File(PathBuf),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg.workers, 1);
        assert_eq!(cfg.corpus_spec().unwrap(), CorpusSpec::Sample(500));
        assert_eq!(cfg.fuzz.max_iter, 5000);
        assert_eq!(cfg.train_config(), TrainConfig::splitnn());
        assert!(cfg.prepare_data().is_err());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        for text in [
            r#"{"sed": 1}"#,
            r#"{"synthesis": {"rounds": 3, "round": 4}}"#,
            r#"{"workers": 0}"#,
            r#"{"corpus": "sample:x"}"#,
            r#"{"assessment": {"thresholds": [1.5]}}"#,
            "{not json",
        ] {
            assert!(
                matches!(RunConfig::from_json(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn seed_reaches_every_stage() {
        let cfg = RunConfig::from_json(r#"{"model": {"kind": "heterolr"}}"#)
            .unwrap()
            .with_seed(9);
        assert_eq!(cfg.train_config().seed, 9);
        assert_eq!(cfg.train_config().epochs, TrainConfig::heterolr().epochs);
        assert_eq!(cfg.fuzz.seed, 9);
    }

    #[test]
    fn partition_choices() {
        let ds = Dataset::new(crate::matrix::Matrix::zeros(4, 23), vec![0, 1, 0, 1], 2).unwrap();
        let spec = PartitionChoice::Leading { a_columns: 13 }
            .resolve(&ds)
            .unwrap();
        assert_eq!(spec.widths(), vec![13, 10]);
        assert!(PartitionChoice::Leading { a_columns: 23 }
            .resolve(&ds)
            .is_err());
        let spec = PartitionChoice::Ratio { ratio: 1.0 }.resolve(&ds).unwrap();
        assert_eq!(spec.participants(), 2);
        assert!(PartitionChoice::ImageColumns { participants: 2 }
            .resolve(&ds)
            .is_err());
    }
}
