//! Outer meta-training loop with validation-based model selection.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::Config;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate, Metrics, Summary};
use crate::kg::{sample_episode, Episode};
use crate::model::{retrieve_for_episode, run_episode, EpisodeContext, EpisodeOutput, Gradients, Mode, ModelParams, Table};
use crate::numerics::Tensor;

/// Seed offset for negative-prompt resampling.
const NEGATIVE_STREAM: u64 = 0x6e65_6761_7469_7665;

/// Adam with lazy row updates for the embedding tables and the pool: rows
/// without a gradient in a step keep their parameters and moments.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    dense_m: Vec<Tensor>,
    dense_v: Vec<Tensor>,
    table_m: Vec<Tensor>,
    table_v: Vec<Tensor>,
}

impl Adam {
    pub fn new(cfg: &Config, params: &ModelParams) -> Self {
        let dense: Vec<Tensor> = params.dense().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        let tables: Vec<Tensor> = Table::ALL.iter().map(|&t| Tensor::zeros(params.table(t).shape())).collect();
        Self {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            t: 0,
            dense_m: dense.clone(),
            dense_v: dense,
            table_m: tables.clone(),
            table_v: tables,
        }
    }

    fn update(&self, p: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64]) {
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..p.len() {
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients) {
        self.t += 1;
        let mut dense_m = std::mem::take(&mut self.dense_m);
        let mut dense_v = std::mem::take(&mut self.dense_v);
        for (((p, m), v), g) in params.dense_mut().into_iter().zip(&mut dense_m).zip(&mut dense_v).zip(&grads.dense) {
            self.update(p.data_mut(), m.data_mut(), v.data_mut(), g.data());
        }
        self.dense_m = dense_m;
        self.dense_v = dense_v;
        for (&(table, row), g) in &grads.rows {
            let ti = Table::ALL.iter().position(|&t| t == table).expect("known table");
            let mut m = std::mem::replace(&mut self.table_m[ti], Tensor::scalar(0.0));
            let mut v = std::mem::replace(&mut self.table_v[ti], Tensor::scalar(0.0));
            self.update(params.table_mut(table).row_mut(row), m.row_mut(row), v.row_mut(row), g);
            self.table_m[ti] = m;
            self.table_v[ti] = v;
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss_q: f64,
    pub loss_pt: f64,
    pub valid: Summary,
}

pub const LOG_HEADER: &str = "step,loss_q,loss_pt,val_mrr,val_hits1,val_hits5,val_hits10";

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.step, r.loss_q, r.loss_pt, r.valid.mrr, r.valid.hits1, r.valid.hits5, r.valid.hits10
        );
    }
    s
}

/// Final metrics of a run, written as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub ablations: Vec<String>,
    pub seed: u64,
    pub steps: usize,
    pub best_step: usize,
    pub step0_valid_mrr: f64,
    pub valid: Metrics,
    pub test: Metrics,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.pmkg";
pub const LOG_FILE: &str = "train_log.csv";
pub const REPORT_FILE: &str = "report.json";

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best validation MRR.
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
    pub step0_valid: Metrics,
    pub best_valid: Metrics,
    pub report: TrainReport,
}

impl TrainOutcome {
    /// Writes the checkpoint, CSV log and JSON report into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.checkpoint.save(dir.join(CHECKPOINT_FILE))?;
        let log = dir.join(LOG_FILE);
        fs::write(&log, log_csv(&self.log)).map_err(|e| Error::io(&log, e))?;
        let report = dir.join(REPORT_FILE);
        let json = serde_json::to_string_pretty(&self.report).expect("report serializes") + "\n";
        fs::write(&report, json).map_err(|e| Error::io(&report, e))
    }
}

/// Pool indices for every episode (first pass) and each episode's negative
/// prompts: indices retrieved by other relations in the batch, excluding its
/// own, resampled with replacement up to `N`.
pub fn batch_contexts(params: &ModelParams, cfg: &Config, episodes: &[Episode]) -> Result<Vec<EpisodeContext>> {
    if !cfg.ablate.uses_pool() {
        return Ok(vec![EpisodeContext::default(); episodes.len()]);
    }
    let picks = episodes
        .iter()
        .map(|e| retrieve_for_episode(params, e))
        .collect::<Result<Vec<usize>>>()?;
    let want_negatives = cfg.loss().lambda > 0.0 && cfg.num_negatives > 0;
    Ok(episodes
        .iter()
        .enumerate()
        .map(|(i, ep)| {
            let mut negatives = Vec::new();
            if want_negatives {
                let mut pool: Vec<usize> = episodes
                    .iter()
                    .zip(&picks)
                    .filter(|(other, &j)| other.relation != ep.relation && j != picks[i])
                    .map(|(_, &j)| j)
                    .collect();
                pool.sort_unstable();
                pool.dedup();
                if !pool.is_empty() {
                    let mut rng = ChaCha8Rng::seed_from_u64(ep.rng_seed ^ NEGATIVE_STREAM);
                    negatives = if pool.len() >= cfg.num_negatives {
                        pool.shuffle(&mut rng);
                        pool.truncate(cfg.num_negatives);
                        pool
                    } else {
                        (0..cfg.num_negatives).map(|_| *pool.choose(&mut rng).expect("non-empty")).collect()
                    };
                }
            }
            EpisodeContext {
                prompt_index: Some(picks[i]),
                negatives,
                frozen_inner: None,
            }
        })
        .collect())
}

/// Averaged losses and gradient of one batch, reduced in task order.
pub struct BatchResult {
    pub loss_q: f64,
    pub loss_pt: f64,
    pub gradients: Gradients,
}

pub fn run_batch(
    params: &ModelParams,
    cfg: &Config,
    data: &Dataset,
    episodes: &[Episode],
    pool: Option<&rayon::ThreadPool>,
) -> Result<BatchResult> {
    let contexts = batch_contexts(params, cfg, episodes)?;
    let one = |(ep, ctx): (&Episode, &EpisodeContext)| run_episode(params, cfg, &data.kg, ep, Mode::Train, ctx);
    let outputs: Vec<Result<EpisodeOutput>> = match pool {
        Some(p) => p.install(|| episodes.par_iter().zip(contexts.par_iter()).map(one).collect()),
        None => episodes.iter().zip(&contexts).map(one).collect(),
    };
    let n = episodes.len() as f64;
    let mut out = BatchResult {
        loss_q: 0.0,
        loss_pt: 0.0,
        gradients: Gradients::zeros(params),
    };
    for o in outputs {
        let o = o?;
        out.loss_q += o.loss_query / n;
        out.loss_pt += o.loss_pt / n;
        out.gradients.add_scaled(o.gradients.as_ref().expect("train mode"), 1.0 / n);
    }
    Ok(out)
}

fn sample_batch(cfg: &Config, data: &Dataset, rng: &mut ChaCha8Rng) -> Result<Vec<Episode>> {
    (0..cfg.batch_size)
        .map(|_| {
            let task = &data.train[rng.random_range(0..data.train.len())];
            sample_episode(&data.kg, task, cfg.k_shot, cfg.queries_per_episode, rng)
        })
        .collect()
}

/// Trains from a fresh initialization derived from `cfg.seed`. `threads > 1`
/// runs the episodes of a batch in parallel; results do not depend on it.
pub fn train(cfg: &Config, data: &Dataset, threads: usize) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Empty("training tasks"));
    }
    if data.valid.is_empty() {
        return Err(Error::Empty("validation tasks"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(cfg, data, &mut rng)?;
    let mut adam = Adam::new(cfg, &params);
    let pool = if threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    let validate = |p: &ModelParams| evaluate(p, cfg, &data.kg, &data.valid);
    let probe = run_batch(&params, cfg, data, &sample_batch(cfg, data, &mut rng)?, pool.as_ref())?;
    let step0_valid = validate(&params)?;
    let mut log = vec![LogRow {
        step: 0,
        loss_q: probe.loss_q,
        loss_pt: probe.loss_pt,
        valid: step0_valid.overall,
    }];
    let mut best = (0usize, step0_valid.clone(), params.clone());
    log::info!("step 0: valid mrr {:.4}", step0_valid.mrr);

    for step in 1..=cfg.steps {
        let episodes = sample_batch(cfg, data, &mut rng)?;
        let batch = run_batch(&params, cfg, data, &episodes, pool.as_ref())?;
        adam.step(&mut params, &batch.gradients);
        if step % cfg.eval_interval == 0 || step == cfg.steps {
            let m = validate(&params)?;
            log::info!(
                "step {step}: loss_q {:.4} loss_pt {:.4} valid mrr {:.4}",
                batch.loss_q,
                batch.loss_pt,
                m.mrr
            );
            log.push(LogRow {
                step,
                loss_q: batch.loss_q,
                loss_pt: batch.loss_pt,
                valid: m.overall,
            });
            if m.mrr > best.1.mrr {
                best = (step, m, params.clone());
            }
        }
    }

    let (best_step, best_valid, best_params) = best;
    let test = if data.test.is_empty() {
        Metrics::default()
    } else {
        evaluate(&best_params, cfg, &data.kg, &data.test)?
    };
    let report = TrainReport {
        ablations: cfg.ablate.tags().into_iter().map(String::from).collect(),
        seed: cfg.seed,
        steps: cfg.steps,
        best_step,
        step0_valid_mrr: step0_valid.mrr,
        valid: best_valid.clone(),
        test,
    };
    let checkpoint = Checkpoint::new(cfg, &data.kg, best_params, best_step as u64, best_valid.mrr);
    Ok(TrainOutcome {
        checkpoint,
        log,
        step0_valid,
        best_valid,
        report,
    })
}
