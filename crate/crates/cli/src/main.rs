use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use npt_core::meshio::{
    index_colors, normalize_unit_sphere, obj_string, parse_obj, write_ply_colored, Mesh,
};
use npt_core::network::checkpoint::load_checkpoint;
use npt_core::network::{predict, Variant, Widths};
use npt_core::synthdata::{load_dataset, make_dataset, write_dataset, DatasetConfig, KinematicBody, PoseRanges, Split};
use npt_core::trainer::{
    evaluate, robustness_probe, run_ablation_suite, train, AblationTable, Precision, TrainConfig, TrainOutput,
};
use npt_core::util::write_atomic;
use npt_core::verify::grad_check_suite;

#[derive(Parser)]
#[command(name = "npt", version, about = "Neural pose transfer on triangle meshes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic training pool and evaluation pairs.
    GenData(GenDataArgs),
    /// Train a model on a generated dataset.
    Train(TrainArgs),
    /// Score a checkpoint on the evaluation pairs of a dataset.
    Eval(EvalArgs),
    /// Move the pose of one mesh onto another.
    Transfer(TransferArgs),
    /// Train and compare every ablation variant.
    Ablate(AblateArgs),
    /// Finite-difference check of every gradient.
    GradCheck(GradCheckArgs),
    /// Noise and vertex-order sensitivity of a checkpoint.
    Probe(ProbeArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 8)]
    identities: usize,
    #[arg(long, default_value_t = 50)]
    poses: usize,
    #[arg(long, default_value_t = 4)]
    eval_identities: usize,
    #[arg(long, default_value_t = 24)]
    seen_pairs: usize,
    #[arg(long, default_value_t = 24)]
    unseen_pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON joint-angle ranges replacing the bundled defaults.
    #[arg(long)]
    ranges: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Default)]
struct TrainFlags {
    /// JSON file with training settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lambda_edge: Option<f64>,
    /// full, concat1, no_spadain or maxpool.
    #[arg(long)]
    variant: Option<Variant>,
    /// `desk`, `paper` or five comma-separated widths.
    #[arg(long, value_parser = parse_widths)]
    widths: Option<Widths>,
    #[arg(long)]
    seed: Option<u64>,
    /// f32 or f64.
    #[arg(long)]
    precision: Option<Precision>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Fill the wall-clock column of metrics.csv.
    #[arg(long)]
    record_time: bool,
    /// Skip evaluation after intermediate epochs.
    #[arg(long)]
    no_epoch_eval: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Write the per-sample report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct TransferArgs {
    #[arg(long)]
    pose: PathBuf,
    #[arg(long)]
    identity: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    colored_ply: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Directory for ablation.csv.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    sigma: f64,
    #[arg(long, default_value_t = 10)]
    shuffles: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Evaluation split to probe: seen or unseen.
    #[arg(long, default_value = "seen", value_parser = parse_split)]
    split: Split,
}

fn parse_widths(s: &str) -> Result<Widths, String> {
    match s {
        "desk" => Ok(Widths::DESK),
        "paper" => Ok(Widths::PAPER),
        _ => {
            let parts: Vec<usize> = s
                .split(',')
                .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
                .collect::<Result<_, _>>()?;
            let arr: [usize; 5] = parts
                .try_into()
                .map_err(|_| "expected desk, paper or five comma-separated widths".to_string())?;
            Widths::from_array(arr).map_err(|e| e.to_string())
        }
    }
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "seen" => Ok(Split::Seen),
        "unseen" => Ok(Split::Unseen),
        other => Err(format!("unknown split `{other}` (expected seen or unseen)")),
    }
}

impl TrainFlags {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => TrainConfig::default(),
        };
        macro_rules! take {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { cfg.$f = v; })* };
        }
        take!(epochs, lr, batch_size, lambda_edge, variant, widths, seed, precision, checkpoint_every);
        if self.record_time {
            cfg.record_time = true;
        }
        if self.no_epoch_eval {
            cfg.eval_each_epoch = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn result_line(cmd: &str, pass: bool, fields: &[(&str, String)]) {
    let mut line = format!("RESULT {cmd} {}", if pass { "PASS" } else { "FAIL" });
    for (k, v) in fields {
        line.push_str(&format!(" {k}={v}"));
    }
    println!("{line}");
}

fn sci(x: f64) -> String {
    format!("{x:.6e}")
}

fn cmd_gen_data(a: &GenDataArgs) -> Result<()> {
    let ranges = match &a.ranges {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<PoseRanges>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => PoseRanges::default(),
    };
    let config = DatasetConfig {
        identities: a.identities,
        poses: a.poses,
        eval_identities: a.eval_identities,
        seen_pairs: a.seen_pairs,
        unseen_pairs: a.unseen_pairs,
        seed: a.seed,
        ranges,
    };
    let body = KinematicBody::new();
    let dataset = make_dataset(&body, &config)?;
    let manifest = write_dataset(&dataset, &a.out)?;
    result_line(
        "gen-data",
        true,
        &[
            ("identities", a.identities.to_string()),
            ("poses", a.poses.to_string()),
            ("train_meshes", dataset.train.len().to_string()),
            ("eval_pairs", dataset.eval.len().to_string()),
            ("vertices", manifest.vertex_count.to_string()),
            ("out", a.out.display().to_string()),
        ],
    );
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = a.flags.resolve()?;
    let dataset = load_dataset(&a.data).with_context(|| format!("loading dataset {}", a.data.display()))?;
    let out = TrainOutput::new(&a.out);
    let (log, ckpt) = match cfg.precision {
        Precision::F32 => {
            let t = train::<f32>(&dataset, &cfg, Some(&out))?;
            (t.log, t.checkpoints)
        }
        Precision::F64 => {
            let t = train::<f64>(&dataset, &cfg, Some(&out))?;
            (t.log, t.checkpoints)
        }
    };
    let last = log.last();
    let show = |x: Option<f64>| x.map(sci).unwrap_or_else(|| "na".into());
    result_line(
        "train",
        true,
        &[
            ("variant", cfg.variant.to_string()),
            ("epochs", cfg.epochs.to_string()),
            ("final_loss", show(last.map(|r| r.total))),
            ("seen_pmd", show(last.and_then(|r| r.seen_pmd))),
            ("unseen_pmd", show(last.and_then(|r| r.unseen_pmd))),
            ("checkpoint", ckpt.last().map(|p| p.display().to_string()).unwrap_or_default()),
        ],
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<(npt_core::network::ModelParams<f32>, npt_core::network::ModelConfig)> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let (params, model) = load_model(&a.checkpoint)?;
    let dataset = load_dataset(&a.data).with_context(|| format!("loading dataset {}", a.data.display()))?;
    let report = evaluate(&params, &model, &dataset.eval)?;
    if let Some(path) = &a.json {
        let json = serde_json::to_string_pretty(&report)?;
        write_atomic(path, json.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
    }
    result_line(
        "eval",
        report.seen_pmd.is_finite() && report.unseen_pmd.is_finite(),
        &[
            ("seen_pmd", sci(report.seen_pmd)),
            ("unseen_pmd", sci(report.unseen_pmd)),
            ("copy_seen_pmd", sci(report.copy_seen_pmd)),
            ("copy_unseen_pmd", sci(report.copy_unseen_pmd)),
        ],
    );
    Ok(())
}

fn read_mesh(path: &Path) -> Result<Mesh> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_obj(&text).with_context(|| format!("parsing {}", path.display()))
}

fn cmd_transfer(a: &TransferArgs) -> Result<()> {
    let pose = read_mesh(&a.pose)?;
    let identity = read_mesh(&a.identity)?;
    if pose.vertex_count() != identity.vertex_count() {
        bail!(
            "vertex count mismatch: pose mesh {} has {} vertices, identity mesh {} has {}",
            a.pose.display(),
            pose.vertex_count(),
            a.identity.display(),
            identity.vertex_count()
        );
    }
    let (params, model) = load_model(&a.checkpoint)?;
    let (pose_n, _) = normalize_unit_sphere(&pose)?;
    let (id_n, frame) = normalize_unit_sphere(&identity)?;
    let out = predict(&params, &model, &pose_n.to_tensor::<f32>(), &id_n.to_tensor::<f32>())?;
    let result = frame.denormalize(&id_n.with_tensor_vertices(&out, 0)?);
    write_atomic(&a.out, obj_string(&result).as_bytes()).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(ply) = &a.colored_ply {
        write_ply_colored(&result, &index_colors(result.vertex_count()), ply)?;
    }
    result_line(
        "transfer",
        true,
        &[
            ("vertices", result.vertex_count().to_string()),
            ("out", a.out.display().to_string()),
        ],
    );
    Ok(())
}

/// The directional orderings expected between ablation variants.
fn ablation_checks(t: &AblationTable) -> Vec<(&'static str, bool)> {
    let seen = |n: &str| t.get(n).map_or(f64::NAN, |r| r.seen_pmd);
    let (full, no_edge, no_spadain, concat1, maxpool) =
        (seen("full"), seen("no_edge"), seen("no_spadain"), seen("concat1"), seen("maxpool"));
    vec![
        ("full_le_1.15_no_edge", full <= 1.15 * no_edge),
        ("full_lt_no_spadain", full < no_spadain),
        ("full_lt_concat1", full < concat1),
        ("full_le_maxpool", full <= maxpool),
        ("no_spadain_lt_concat1", no_spadain < concat1),
    ]
}

fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    let cfg = a.flags.resolve()?;
    let dataset = load_dataset(&a.data).with_context(|| format!("loading dataset {}", a.data.display()))?;
    let table = run_ablation_suite(&dataset, &cfg)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let csv = a.out.join("ablation.csv");
    write_atomic(&csv, table.csv().as_bytes()).with_context(|| format!("writing {}", csv.display()))?;
    print!("{}", table.text());
    let checks = ablation_checks(&table);
    let pass = checks.iter().all(|c| c.1);
    let mut fields: Vec<(&str, String)> = table.rows.iter().map(|r| (r.name.as_str(), sci(r.seen_pmd))).collect();
    fields.extend(checks.iter().map(|(k, ok)| (*k, ok.to_string())));
    result_line("ablate", pass, &fields);
    Ok(())
}

fn cmd_grad_check(a: &GradCheckArgs) -> Result<()> {
    let start = Instant::now();
    let entries = grad_check_suite(a.seed)?;
    let mut worst = 0.0f64;
    for e in &entries {
        println!(
            "grad-check op={} max_rel_err={} checked={} skipped_kinks={}",
            e.name,
            sci(e.report.max_rel_error),
            e.report.checked,
            e.report.skipped_kinks
        );
        worst = worst.max(e.report.max_rel_error);
    }
    log::info!("grad-check finished in {:.1}s", start.elapsed().as_secs_f64());
    let pass = entries.iter().all(|e| e.report.max_rel_error < a.tol && e.report.checked > 0);
    result_line(
        "grad-check",
        pass,
        &[("ops", entries.len().to_string()), ("max_rel_err", sci(worst)), ("tol", sci(a.tol))],
    );
    Ok(())
}

fn cmd_probe(a: &ProbeArgs) -> Result<()> {
    let (params, model) = load_model(&a.checkpoint)?;
    let dataset = load_dataset(&a.data).with_context(|| format!("loading dataset {}", a.data.display()))?;
    let samples: Vec<_> = dataset.split(a.split).map(|p| &p.sample).collect();
    let r = robustness_probe(&params, &model, &samples, a.sigma, a.shuffles, a.seed)?;
    let pass = r.noise_relative < 0.5 && r.shuffle_pmd_spread < 0.5 * r.clean_pmd;
    result_line(
        "probe",
        pass,
        &[
            ("samples", r.samples.to_string()),
            ("clean_pmd", sci(r.clean_pmd)),
            ("noisy_pmd", sci(r.noisy_pmd)),
            ("noise_relative", sci(r.noise_relative)),
            ("shuffle_spread", sci(r.shuffle_pmd_spread)),
            ("shuffle_spread_max", sci(r.shuffle_pmd_spread_max)),
        ],
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Transfer(a) => cmd_transfer(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::GradCheck(a) => cmd_grad_check(a),
        Command::Probe(a) => cmd_probe(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
