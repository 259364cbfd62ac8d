use std::collections::{HashSet, VecDeque};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuzz::{FuzzSeed, Fuzzer, MASK_METHOD};
use crate::synthesis::{AdiCandidate, Provenance};

/// Slack for the Λ-box check on enqueue.
const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FuzzOutcome {
    /// Stable on S and confirmed on the full test view.
    Adi,
    /// Stable on S but below the lowest threshold on the full test view.
    Unconfirmed,
    /// Lowered the benign saliency score and was queued.
    Reduced,
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignLogEntry {
    pub iteration: usize,
    pub seed_id: usize,
    pub lineage: usize,
    pub mutation: usize,
    pub score: f64,
    pub outcome: FuzzOutcome,
    pub attack_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub adis: Vec<AdiCandidate>,
    /// `(threshold, count)` of found ADIs at each configured threshold.
    pub counts: Vec<(f64, usize)>,
    pub iterations: usize,
    pub mutations: usize,
    pub elapsed_secs: f64,
    pub budget_exhausted: bool,
    pub cooperation_messages: usize,
    pub mask_method: String,
    pub log: Vec<CampaignLogEntry>,
}

impl CampaignResult {
    pub fn count_at(&self, threshold: f64) -> usize {
        self.adis
            .iter()
            .filter(|a| a.attack_accuracy >= threshold)
            .count()
    }

    pub fn write_log(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for e in &self.log {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// What one popped seed produced.
struct SeedReport {
    lineage: usize,
    log: Vec<CampaignLogEntry>,
    queued: Vec<FuzzSeed>,
    adi: Option<AdiCandidate>,
    mutations: usize,
    messages: usize,
}

impl Fuzzer<'_> {
    /// Queue entries for the corpus; targets are each input's majority
    /// label over S.
    pub fn initial_seeds(&self, corpus: &[Vec<f64>]) -> Result<Vec<FuzzSeed>> {
        corpus
            .iter()
            .enumerate()
            .map(|(i, x)| {
                Ok(FuzzSeed {
                    input: x.clone(),
                    origin: x.clone(),
                    target: self.target_label(x)?,
                    best_score: self.benign_score(x)?,
                    lineage: i,
                    id: i,
                })
            })
            .collect()
    }

    /// Runs the campaign: FIFO seed order, constant energy, one lineage
    /// stops at its first confirmed ADI.
    pub fn run(&self, corpus: &[Vec<f64>]) -> Result<CampaignResult> {
        if corpus.is_empty() {
            return Err(Error::invalid("fuzz corpus is empty"));
        }
        let started = Instant::now();
        let cfg = self.config();
        let mut queue: VecDeque<FuzzSeed> = self.initial_seeds(corpus)?.into();
        let mut next_id = queue.len();
        let mut done: HashSet<usize> = HashSet::new();
        let mut result = CampaignResult {
            adis: Vec::new(),
            counts: Vec::new(),
            iterations: 0,
            mutations: 0,
            elapsed_secs: 0.0,
            budget_exhausted: false,
            cooperation_messages: 0,
            mask_method: MASK_METHOD.to_string(),
            log: Vec::new(),
        };
        while result.iterations < cfg.max_iter {
            if cfg
                .budget_secs
                .is_some_and(|b| started.elapsed().as_secs_f64() >= b)
            {
                result.budget_exhausted = true;
                break;
            }
            let mut batch = Vec::new();
            while batch.len() < cfg.batch && result.iterations + batch.len() < cfg.max_iter {
                match queue.pop_front() {
                    Some(s) if done.contains(&s.lineage) => continue,
                    Some(s) => batch.push((result.iterations + batch.len(), s)),
                    None => break,
                }
            }
            if batch.is_empty() {
                break;
            }
            result.iterations += batch.len();
            for report in self.run_batch(&batch)? {
                let report = report?;
                result.mutations += report.mutations;
                result.cooperation_messages += report.messages;
                result.log.extend(report.log);
                if let Some(adi) = report.adi {
                    if done.insert(report.lineage) {
                        result.adis.push(adi);
                    }
                    continue;
                }
                if done.contains(&report.lineage) {
                    continue;
                }
                for mut q in report.queued {
                    q.id = next_id;
                    next_id += 1;
                    queue.push_back(q);
                }
            }
        }
        result.counts = cfg
            .thresholds
            .iter()
            .map(|&t| (t, result.count_at(t)))
            .collect();
        result.elapsed_secs = started.elapsed().as_secs_f64();
        Ok(result)
    }

    fn run_batch(&self, batch: &[(usize, FuzzSeed)]) -> Result<Vec<Result<SeedReport>>> {
        let workers = self.config().workers.min(batch.len());
        if workers <= 1 {
            return Ok(batch.iter().map(|(it, s)| self.fuzz_seed(*it, s)).collect());
        }
        let per = batch.len().div_ceil(workers);
        let reports = std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .chunks(per)
                .map(|chunk| {
                    scope.spawn(move || {
                        chunk
                            .iter()
                            .map(|(it, s)| self.fuzz_seed(*it, s))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("fuzz worker panicked"))
                .collect()
        });
        Ok(reports)
    }

    /// Spends the seed's energy; the RNG stream depends only on the
    /// campaign seed and the iteration number.
    fn fuzz_seed(&self, iteration: usize, seed: &FuzzSeed) -> Result<SeedReport> {
        let cfg = self.config();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(iteration as u64);
        let mut report = SeedReport {
            lineage: seed.lineage,
            log: Vec::new(),
            queued: Vec::new(),
            adi: None,
            mutations: 0,
            messages: 0,
        };
        if cfg.trace_cooperation {
            let coop = self.cooperation_trace(seed, 1, &mut rng)?;
            report.messages = coop.messages.len();
            if coop.found {
                if let Some(adi) = self.judge(&coop.input, seed)? {
                    report.adi = Some(adi);
                    return Ok(report);
                }
            }
        }
        let mask = self.seed_mask(seed)?;
        let mut best = seed.best_score;
        for m in 0..cfg.energy {
            let x = self.mutate(seed, &mask, &mut rng)?;
            report.mutations += 1;
            let score = self.benign_score(&x)?;
            let mut entry = CampaignLogEntry {
                iteration,
                seed_id: seed.id,
                lineage: seed.lineage,
                mutation: m,
                score,
                outcome: FuzzOutcome::Discarded,
                attack_accuracy: None,
            };
            if self.is_adi(&x, seed.target)? {
                let r = self.confirm(&x, seed.target)?;
                entry.attack_accuracy = Some(r);
                if r >= cfg.report_threshold() {
                    entry.outcome = FuzzOutcome::Adi;
                    report.log.push(entry);
                    report.adi = Some(self.candidate(&x, seed, r, iteration));
                    return Ok(report);
                }
                entry.outcome = FuzzOutcome::Unconfirmed;
            } else if Self::reduce_saliency(best, score) {
                best = score;
                self.check_bound(&x, &seed.origin)?;
                entry.outcome = FuzzOutcome::Reduced;
                report.queued.push(FuzzSeed {
                    input: x,
                    origin: seed.origin.clone(),
                    target: seed.target,
                    best_score: score,
                    lineage: seed.lineage,
                    id: 0,
                });
            }
            report.log.push(entry);
        }
        Ok(report)
    }

    fn judge(&self, x: &[f64], seed: &FuzzSeed) -> Result<Option<AdiCandidate>> {
        if !self.is_adi(x, seed.target)? {
            return Ok(None);
        }
        let r = self.confirm(x, seed.target)?;
        Ok((r >= self.config().report_threshold()).then(|| self.candidate(x, seed, r, 0)))
    }

    fn candidate(&self, x: &[f64], seed: &FuzzSeed, r: f64, iteration: usize) -> AdiCandidate {
        AdiCandidate {
            base: seed.origin.clone(),
            perturbation: x.iter().zip(&seed.origin).map(|(a, b)| a - b).collect(),
            target: seed.target,
            attack_accuracy: r,
            rounds: iteration,
            strategy: None,
            mode: None,
            provenance: Provenance::Fuzz,
            seed: Some(seed.lineage as u64),
        }
    }

    fn check_bound(&self, x: &[f64], origin: &[f64]) -> Result<()> {
        let inside = x
            .iter()
            .zip(origin)
            .zip(&self.bound)
            .all(|((v, o), b)| (v - o).abs() <= b + BOUND_SLACK);
        if inside {
            Ok(())
        } else {
            Err(Error::invalid("queued input left the mutation bound"))
        }
    }
}
