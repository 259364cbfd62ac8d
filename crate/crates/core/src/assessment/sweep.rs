use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assessment::{dominating_rate, success_rate, ExperimentReport};
use crate::data::{mnist_column_split, partition_vertical, Dataset, PartitionSpec};
use crate::error::{Error, Result};
use crate::fuzz::{CampaignConfig, Fuzzer, SaliencyCalibration};
use crate::matrix::Matrix;
use crate::protocol::{evaluate, ModelSpec, TrainConfig, VFLSystem, ADVERSARY};
use crate::synthesis::{default_bound, Strategy, SynthesisConfig};

/// Settings shared by every cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub synthesis: SynthesisConfig,
    /// A-inputs drawn from the test view for success rates.
    pub sample: usize,
    /// Rows of S.
    pub tiny: usize,
    pub threshold: f64,
    /// Multiplier on the variance bound of the bounded strategy.
    pub bound_multiplier: f64,
    /// Fuzzing column: campaign settings and corpus size.
    pub fuzz: Option<CampaignConfig>,
    pub fuzz_corpus: usize,
    pub workers: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec::Splitnn {
                arch: Default::default(),
            },
            train: TrainConfig::splitnn(),
            synthesis: SynthesisConfig::default(),
            sample: 200,
            tiny: 20,
            threshold: 0.95,
            bound_multiplier: 1.0,
            fuzz: None,
            fuzz_corpus: 50,
            workers: 1,
            seed: 0,
        }
    }
}

/// A trained cell with its test-time material.
struct Cell {
    system: VFLSystem,
    train_views: Vec<Matrix>,
    test_views: Vec<Matrix>,
    accuracy: f64,
}

impl SweepConfig {
    fn cell(&self, train: &Dataset, test: &Dataset, spec: &PartitionSpec) -> Result<Cell> {
        let system = self.model.train(train, spec, &self.train)?.system;
        let train_views = partition_vertical(&train.features, spec)?;
        let test_views = partition_vertical(&test.features, spec)?;
        let accuracy = evaluate(&system, &test_views, &test.labels)?.accuracy;
        Ok(Cell {
            system,
            train_views,
            test_views,
            accuracy,
        })
    }

    fn sample_indices(&self, n: usize, k: usize, salt: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ salt);
        rand::seq::index::sample(&mut rng, n, k.min(n)).into_vec()
    }

    /// Success rate of synthesis from the sampled A-inputs.
    fn success(&self, cell: &Cell, strategy: Strategy) -> Result<f64> {
        let (sample, s, check) = self.material(cell)?;
        let mut cfg = self.synthesis.clone();
        cfg.strategy = strategy;
        if strategy == Strategy::Bounded {
            cfg.bound = Some(default_bound(
                &cell.train_views[ADVERSARY],
                self.bound_multiplier,
            )?);
        }
        let refs: Vec<&Matrix> = s.iter().collect();
        let cache = cell
            .system
            .benign_cache(ADVERSARY, &check.iter().collect::<Vec<_>>())?;
        let summary = success_rate(
            &cell.system,
            &sample,
            &refs,
            &cache,
            &cfg,
            &[self.threshold],
            self.workers,
        )?;
        Ok(summary.rates[0].1)
    }

    /// Sampled A-inputs, S rows for each benign participant, and the benign
    /// test views.
    fn material(&self, cell: &Cell) -> Result<(Matrix, Vec<Matrix>, Vec<Matrix>)> {
        let n = cell.test_views[0].rows();
        let sample =
            cell.test_views[ADVERSARY].select_rows(&self.sample_indices(n, self.sample, 0x5a));
        let s_idx = self.sample_indices(n, self.tiny, 0x5b);
        let s = cell.test_views[1..]
            .iter()
            .map(|v| v.select_rows(&s_idx))
            .collect();
        Ok((sample, s, cell.test_views[1..].to_vec()))
    }

    fn fuzz_count(&self, cell: &Cell) -> Result<Option<f64>> {
        let Some(campaign) = &self.fuzz else {
            return Ok(None);
        };
        let (sample, s, check) = self.material(cell)?;
        let refs: Vec<&Matrix> = s.iter().collect();
        let cache = cell
            .system
            .benign_cache(ADVERSARY, &check.iter().collect::<Vec<_>>())?;
        let train_refs: Vec<&Matrix> = cell.train_views.iter().collect();
        let calib = SaliencyCalibration::fit(&cell.system, &train_refs)?;
        let bound = default_bound(&cell.train_views[ADVERSARY], self.bound_multiplier)?;
        let fuzzer = Fuzzer::new(&cell.system, &refs, &cache, calib, bound, campaign.clone())?;
        let corpus: Vec<Vec<f64>> = sample
            .iter_rows()
            .take(self.fuzz_corpus)
            .map(<[f64]>::to_vec)
            .collect();
        let result = fuzzer.run(&corpus)?;
        Ok(Some(result.count_at(self.threshold) as f64))
    }

    fn views<'a>(cell: &'a Cell) -> Vec<&'a Matrix> {
        cell.test_views.iter().collect()
    }
}

/// Per feature-partition ratio: accuracy, dominating rates of A and B,
/// synthesis success and optionally the fuzzing yield.
pub fn partition_ratio_sweep(
    train: &Dataset,
    test: &Dataset,
    ratios: &[f64],
    cfg: &SweepConfig,
) -> Result<ExperimentReport> {
    if ratios.is_empty() {
        return Err(Error::invalid("ratio sweep needs at least one ratio"));
    }
    let started = Instant::now();
    let mut columns = vec![
        "ratio",
        "accuracy",
        "dominating_a",
        "dominating_b",
        "success",
    ];
    if cfg.fuzz.is_some() {
        columns.push("fuzz_adis");
    }
    let snapshot = serde_json::json!({ "ratios": ratios, "sweep": cfg });
    let mut report = ExperimentReport::new("ratio-sweep", &snapshot, cfg.seed, &columns)?;
    for &r in ratios {
        let spec = train.ratio_partition(r)?;
        let cell = cfg.cell(train, test, &spec)?;
        let views = SweepConfig::views(&cell);
        let dom_a = dominating_rate(&cell.system, ADVERSARY, &views, cfg.threshold, cfg.workers)?;
        let dom_b = dominating_rate(&cell.system, 1, &views, cfg.threshold, cfg.workers)?;
        let success = cfg.success(&cell, cfg.synthesis.strategy)?;
        let mut row = vec![r, cell.accuracy, dom_a, dom_b, success];
        if let Some(f) = cfg.fuzz_count(&cell)? {
            row.push(f);
        }
        report.push_row(format!("{r}"), row)?;
    }
    report.finish(started.elapsed().as_secs_f64());
    Ok(report)
}

/// Per participant count over image-column splits: accuracy, dominating
/// rate of A, random and bounded success and optionally the fuzzing yield.
pub fn participants_sweep(
    train: &Dataset,
    test: &Dataset,
    counts: &[usize],
    cfg: &SweepConfig,
) -> Result<ExperimentReport> {
    if counts.is_empty() {
        return Err(Error::invalid("participant sweep needs at least one count"));
    }
    let started = Instant::now();
    let mut columns = vec![
        "participants",
        "accuracy",
        "dominating",
        "random_success",
        "bounded_success",
    ];
    if cfg.fuzz.is_some() {
        columns.push("fuzz_adis");
    }
    let snapshot = serde_json::json!({ "counts": counts, "sweep": cfg });
    let mut report = ExperimentReport::new("participants-sweep", &snapshot, cfg.seed, &columns)?;
    for &m in counts {
        let spec = mnist_column_split(train, m)?;
        let cell = cfg.cell(train, test, &spec)?;
        let views = SweepConfig::views(&cell);
        let dom = dominating_rate(&cell.system, ADVERSARY, &views, cfg.threshold, cfg.workers)?;
        let random = cfg.success(&cell, Strategy::Random)?;
        let bounded = cfg.success(&cell, Strategy::Bounded)?;
        let mut row = vec![m as f64, cell.accuracy, dom, random, bounded];
        if let Some(f) = cfg.fuzz_count(&cell)? {
            row.push(f);
        }
        report.push_row(format!("{m}"), row)?;
    }
    report.finish(started.elapsed().as_secs_f64());
    Ok(report)
}
