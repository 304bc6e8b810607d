//! Finite-difference verification of the full episode gradient on a tiny
//! synthetic graph.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::Result;
use crate::kg::synthetic::{generate_synthetic, SyntheticSpec};
use crate::kg::tasks::tasks_from_file;
use crate::kg::{sample_episode, Episode, Kg};
use crate::model::{retrieve_for_episode, run_episode, EpisodeContext, EpisodeOutput, Mode, ModelParams, Table};
use crate::numerics::{finite_difference_check, Probe, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub dim: usize,
    pub eps: f64,
    pub tolerance: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            dim: 4,
            eps: 1e-5,
            tolerance: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub groups: Vec<GroupReport>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Parameter groups and the tensors each covers.
pub fn parameter_groups() -> Vec<(&'static str, Vec<String>)> {
    let v = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    vec![
        ("embeddings", v(&["entity_relational", "relation_relational", "entity_semantic"])),
        ("W_q", v(&["neighbor.w_q"])),
        ("W_k", v(&["neighbor.w_k"])),
        ("f_n", v(&["neighbor.f_n.0.w", "neighbor.f_n.0.b", "neighbor.f_n.1.w", "neighbor.f_n.1.b"])),
        ("g_n", v(&["neighbor.g_n.0.w", "neighbor.g_n.0.b"])),
        ("f_sa", v(&["self_attention.w_q", "self_attention.w_k", "self_attention.w_v"])),
        ("pool", v(&["pool"])),
        ("phi_fuse", v(&["fusion.phi.0.w", "fusion.phi.0.b", "fusion.phi.1.w", "fusion.phi.1.b"])),
        ("g_fp", v(&["fusion.g_fp.0.w", "fusion.g_fp.0.b"])),
        ("projection", v(&["entity_projection", "relation_projection"])),
    ]
}

/// A 10-entity graph with two background relations and one few-shot relation.
pub fn toy_problem(seed: u64) -> Result<(Kg, Vec<crate::kg::FewShotTask>)> {
    let spec = SyntheticSpec {
        num_types: 2,
        entities_per_type: 5,
        num_relations: 1,
        num_patterns: 1,
        type_pairs: 1,
        triples_per_relation: 8,
        valid_relations: 0,
        test_relations: 0,
        background_relations: 2,
        background_triples_per_relation: 8,
        semantic_noise: 0.1,
        tail_choices: 3,
        offset_scale: 3.0,
        dim: 4,
        candidates_per_query: 10,
    };
    let data = generate_synthetic(&spec, seed)?;
    let mut kg = Kg::from_named_triples(data.background.iter().map(|[h, r, t]| (h.as_str(), r.as_str(), t.as_str())));
    let tasks = tasks_from_file(&data.train, &mut kg, 3, None)?;
    kg.build_neighbor_index(50, &mut ChaCha8Rng::seed_from_u64(seed));
    Ok((kg, tasks))
}

/// Config used for the check: every component active, dropout on.
pub fn gradcheck_config(opts: &GradcheckOptions) -> Config {
    Config {
        seed: opts.seed,
        dim: Some(opts.dim),
        pool_size: 4,
        num_negatives: 6,
        inner_lr: Some(0.05),
        ..Config::default()
    }
}

fn analytic(params: &ModelParams, out: &EpisodeOutput, name: &str) -> Tensor {
    let grads = out.gradients.as_ref().expect("train mode");
    if let Some(&t) = Table::ALL.iter().find(|t| t.name() == name) {
        return grads.table_dense(params, t);
    }
    let idx = params.dense().iter().position(|(n, _)| n == name).expect("known tensor");
    grads.dense[idx].clone()
}

/// Total episode loss as a function of each parameter tensor, with the
/// inner-step gradient held at its base value, compared against reverse-mode
/// gradients.
pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let cfg = gradcheck_config(opts);
    let (kg, tasks) = toy_problem(opts.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let params = ModelParams::random(&cfg, kg.num_entities(), kg.num_background_relations(), opts.dim, &mut rng);
    let episode: Episode = sample_episode(&kg, &tasks[0], cfg.k_shot.min(3), 4, &mut rng)?;
    let own = retrieve_for_episode(&params, &episode)?;
    let negatives: Vec<usize> = (0..params.pool.size()).filter(|&j| j != own).collect();
    let mut ctx = EpisodeContext {
        prompt_index: None,
        negatives,
        frozen_inner: None,
    };
    let base = run_episode(&params, &cfg, &kg, &episode, Mode::Train, &ctx)?;
    ctx.frozen_inner = Some(base.inner_grads.clone());

    let mut groups = Vec::new();
    for (group, names) in parameter_groups() {
        let mut report = GroupReport {
            group: group.to_string(),
            max_rel_error: 0.0,
            checked: 0,
            skipped: 0,
        };
        for name in names {
            let point = params.named_tensors().into_iter().find(|(n, _)| *n == name).expect("known tensor").1.clone();
            let grad = analytic(&params, &base, &name);
            let f = |x: &Tensor| -> Probe {
                let mut p = params.clone();
                *p.tensor_mut(&name).expect("known tensor") = x.clone();
                match run_episode(&p, &cfg, &kg, &episode, Mode::Train, &ctx) {
                    Ok(o) => Probe {
                        value: o.total,
                        pattern: Some(o.kink),
                    },
                    Err(_) => Probe {
                        value: f64::NAN,
                        pattern: None,
                    },
                }
            };
            let r = finite_difference_check(f, &point, &grad, opts.eps);
            report.max_rel_error = report.max_rel_error.max(r.max_rel_error);
            report.checked += r.checked;
            report.skipped += r.skipped;
        }
        groups.push(report);
    }
    let passed = groups.iter().all(|g| g.max_rel_error <= opts.tolerance && g.checked > 0);
    Ok(GradcheckReport {
        groups,
        tolerance: opts.tolerance,
        passed,
    })
}
