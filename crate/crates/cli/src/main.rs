use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pmkg::diagnostics::{run_gradcheck, GradcheckOptions};
use pmkg::kg::sif::{sif_embed, DEFAULT_SIF_A};
use pmkg::kg::synthetic::{generate_synthetic, SyntheticSpec};
use pmkg::kg::{read_embedding_file, write_embedding_file};
use pmkg::{evaluate, train, Checkpoint, Config, Dataset};

const RUN_CONFIG_FILE: &str = "run-config.txt";

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_GRADCHECK: u8 = 3;

#[derive(Parser)]
#[command(name = "pmkg", version, about = "Few-shot knowledge graph completion with meta-semantic prompts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset with planted entity-type patterns.
    GenSynthetic(GenArgs),
    /// Meta-train on a dataset directory.
    Train(TrainArgs),
    /// Rank candidates for a task split with a trained checkpoint.
    Eval(EvalArgs),
    /// Compare reverse-mode gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Build semantic entity embeddings from token lists and word vectors.
    EmbedSif(SifArgs),
}

#[derive(Args)]
#[command(args_override_self = true)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of latent entity types.
    #[arg(long)]
    types: Option<usize>,
    #[arg(long)]
    entities_per_type: Option<usize>,
    /// Few-shot relations across all splits.
    #[arg(long)]
    relations: Option<usize>,
    #[arg(long)]
    patterns: Option<usize>,
    /// Type pairs the patterns are spread over.
    #[arg(long)]
    type_pairs: Option<usize>,
    #[arg(long)]
    triples_per_relation: Option<usize>,
    #[arg(long)]
    valid_relations: Option<usize>,
    #[arg(long)]
    test_relations: Option<usize>,
    #[arg(long)]
    background_relations: Option<usize>,
    #[arg(long)]
    background_triples: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    /// Tails per head a few-shot relation may pick from.
    #[arg(long)]
    tail_choices: Option<usize>,
    /// Spread of the per-pattern semantic offsets relative to the noise.
    #[arg(long)]
    offset_scale: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    candidates: Option<usize>,
}

#[derive(Args)]
#[command(args_override_self = true)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Any config key, e.g. `--set lambda=0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    eval_interval: Option<usize>,
    #[arg(long)]
    k_shot: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Comma-separated subset of semantic, pool, fusion-prompt, pool-tuning.
    #[arg(long)]
    ablate: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Task file to evaluate; defaults to the dataset's test split.
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// Support size; defaults to the checkpoint's.
    #[arg(long)]
    k_shot: Option<usize>,
    /// Also write the metrics JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct SifArgs {
    /// Lines of `entity<TAB>token token ...`.
    #[arg(long)]
    tokens: PathBuf,
    /// Word vectors in the embedding text format.
    #[arg(long)]
    vectors: PathBuf,
    /// Lines of `token probability`.
    #[arg(long)]
    freqs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SIF_A)]
    a: f64,
}

fn threads() -> Result<usize> {
    match std::env::var("PMKG_THREADS") {
        Ok(v) => {
            let n: usize = v.trim().parse().with_context(|| format!("PMKG_THREADS must be a positive integer, got {v:?}"))?;
            Ok(n.max(1))
        }
        Err(_) => Ok(1),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn gen_synthetic(a: GenArgs) -> Result<()> {
    let mut spec = SyntheticSpec::default();
    let overrides = [
        (a.types, &mut spec.num_types),
        (a.entities_per_type, &mut spec.entities_per_type),
        (a.relations, &mut spec.num_relations),
        (a.patterns, &mut spec.num_patterns),
        (a.type_pairs, &mut spec.type_pairs),
        (a.triples_per_relation, &mut spec.triples_per_relation),
        (a.valid_relations, &mut spec.valid_relations),
        (a.test_relations, &mut spec.test_relations),
        (a.background_relations, &mut spec.background_relations),
        (a.background_triples, &mut spec.background_triples_per_relation),
        (a.tail_choices, &mut spec.tail_choices),
        (a.dim, &mut spec.dim),
        (a.candidates, &mut spec.candidates_per_query),
    ];
    for (v, slot) in overrides {
        if let Some(v) = v {
            *slot = v;
        }
    }
    if let Some(n) = a.noise {
        spec.semantic_noise = n;
    }
    if let Some(s) = a.offset_scale {
        spec.offset_scale = s;
    }
    let data = generate_synthetic(&spec, a.seed)?;
    data.write(&a.out)?;
    // Reload as a self-check of the written files.
    Dataset::load(&a.out, 1, 50, a.seed).context("reloading the generated dataset")?;
    println!(
        "wrote {} entities, {} background triples, {}/{}/{} train/valid/test relations to {}",
        data.entity_names.len(),
        data.background.len(),
        data.train.len(),
        data.valid.len(),
        data.test.len(),
        a.out.display()
    );
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<Config> {
    let mut cfg = match &a.config {
        Some(p) => Config::from_file(p)?,
        None => Config::default(),
    };
    let mut sets: Vec<(String, String)> = Vec::new();
    let flags = [
        ("seed", a.seed.map(|v| v.to_string())),
        ("steps", a.steps.map(|v| v.to_string())),
        ("batch_size", a.batch_size.map(|v| v.to_string())),
        ("eval_interval", a.eval_interval.map(|v| v.to_string())),
        ("k_shot", a.k_shot.map(|v| v.to_string())),
        ("lambda", a.lambda.map(|v| v.to_string())),
        ("ablate", a.ablate.clone()),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            sets.push((k.to_string(), v));
        }
    }
    for s in &a.sets {
        let (k, v) = s.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {s:?}"))?;
        sets.push((k.trim().to_string(), v.trim().to_string()));
    }
    for (k, v) in sets {
        cfg.set(&k, &v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = train_config(&a)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write(&a.out.join(RUN_CONFIG_FILE), cfg.to_text())?;
    let data = Dataset::load(&a.data, cfg.k_shot, cfg.max_neighbors, cfg.seed)?;
    let outcome = train(&cfg, &data, threads()?)?;
    outcome.write(&a.out)?;
    println!(
        "best step {}: valid mrr {:.4} (step 0: {:.4}), test mrr {:.4}",
        outcome.report.best_step, outcome.best_valid.mrr, outcome.step0_valid.mrr, outcome.report.test.mrr
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let mut cfg = ck.config.clone();
    if let Some(k) = a.k_shot {
        cfg.k_shot = k;
    }
    let mut data = Dataset::load(&a.data, cfg.k_shot, cfg.max_neighbors, cfg.seed)?;
    ck.check_vocab(&data.kg)?;
    let tasks = match &a.tasks {
        Some(p) => data.load_extra_tasks(p, cfg.k_shot)?,
        None => data.test.clone(),
    };
    let metrics = evaluate(&ck.params, &cfg, &data.kg, &tasks)?;
    let json = serde_json::to_string_pretty(&metrics)? + "\n";
    print!("{json}");
    if let Some(out) = &a.out {
        write(out, &json)?;
    }
    Ok(())
}

/// Returns whether every group passed.
fn cmd_gradcheck(a: GradcheckArgs) -> Result<bool> {
    if !(a.eps > 0.0) || a.dim == 0 {
        bail!("--eps must be positive and --dim nonzero");
    }
    let report = run_gradcheck(&GradcheckOptions {
        seed: a.seed,
        dim: a.dim,
        eps: a.eps,
        tolerance: a.tolerance,
    })?;
    for g in &report.groups {
        let ok = g.max_rel_error <= report.tolerance && g.checked > 0;
        println!(
            "{:<12} max_rel_error {:.3e}  checked {:>4}  skipped {:>3}  {}",
            g.group,
            g.max_rel_error,
            g.checked,
            g.skipped,
            if ok { "ok" } else { "FAIL" }
        );
    }
    println!("gradcheck {} (tolerance {:e})", if report.passed { "passed" } else { "FAILED" }, report.tolerance);
    Ok(report.passed)
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

fn cmd_embed_sif(a: SifArgs) -> Result<()> {
    let mut entities = Vec::new();
    for (line, l) in read_lines(&a.tokens)? {
        let (name, toks) = l.split_once('\t').unwrap_or((l.as_str(), ""));
        if name.trim().is_empty() {
            bail!("{}:{line}: missing entity name", a.tokens.display());
        }
        entities.push((name.trim().to_string(), toks.split_whitespace().map(String::from).collect::<Vec<_>>()));
    }
    let vectors: HashMap<String, Vec<f64>> = read_embedding_file(&a.vectors)?.into_iter().collect();
    let mut probs = HashMap::new();
    for (line, l) in read_lines(&a.freqs)? {
        let mut parts = l.split_whitespace();
        let (Some(w), Some(p), None) = (parts.next(), parts.next(), parts.next()) else {
            bail!("{}:{line}: expected `token probability`", a.freqs.display());
        };
        let p: f64 = p.parse().with_context(|| format!("{}:{line}: bad probability {p:?}", a.freqs.display()))?;
        probs.insert(w.to_string(), p);
    }
    let out = sif_embed(&entities, &vectors, &probs, a.a)?;
    let names: Vec<String> = entities.into_iter().map(|(n, _)| n).collect();
    write_embedding_file(&a.out, &names, &out.embeddings)?;
    println!("wrote {} embeddings of width {} to {}", names.len(), out.embeddings.cols(), a.out.display());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<pmkg::Error>() {
        Some(e) if !e.is_data_error() => EXIT_USAGE,
        Some(_) => EXIT_DATA,
        None if err.downcast_ref::<std::io::Error>().is_some() => EXIT_DATA,
        None => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenSynthetic(a) => gen_synthetic(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::EmbedSif(a) => cmd_embed_sif(a),
        Command::Gradcheck(a) => match cmd_gradcheck(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(EXIT_GRADCHECK),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
