//! Command-line front end: single-pair registration, manifest benchmarks,
//! synthetic sweeps, and the L-shape ambiguity table.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bufferx::bench::{
    evaluate_pair, synth_scene, BenchmarkSummary, SceneKind, SuccessCriteria, SynthParams,
};
use bufferx::io::poses::{detect_pose_format, relative_pose};
use bufferx::io::{clouds, config, descriptors, load_manifest, poses};
use bufferx::pipeline::{register, register_with_backend, PipelineConfig, RegistrationReport};
use bufferx::solver::lshape_ambiguity_demo;
use bufferx::{Error, PointCloud, Result};

#[derive(Parser)]
#[command(name = "bufferx", version, about = "Zero-shot point cloud registration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register a source cloud onto a target cloud.
    Register(RegisterArgs),
    /// Evaluate a manifest of cloud pairs against ground truth.
    Bench(BenchArgs),
    /// Run seeded synthetic registration trials.
    Synth(SynthArgs),
    /// Print the L-shape partial-overlap cost table.
    DemoLshape,
}

#[derive(Args)]
struct RegisterArgs {
    /// Source cloud path (.ply, .bin, .xyz/.txt).
    src: PathBuf,
    /// Target cloud path.
    tgt: PathBuf,
    /// Ground-truth pose file (KITTI odometry or TUM; format sniffed).
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Frame indices `i,j` into the pose file: source frame i, target frame j.
    #[arg(long, value_parser = parse_index_pair)]
    gt_index: Option<(usize, usize)>,
    /// Success criteria preset name or `tau_trans_m,tau_rot_deg`.
    #[arg(long, default_value = "default")]
    criteria: String,
    /// Flat TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the full report as JSON here.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Explicit cloud format (ply_ascii, ply_binary_le, kitti_bin, xyz_text).
    #[arg(long)]
    format: Option<String>,
    /// External descriptor record file (replaces the handcrafted backend).
    #[arg(long)]
    descriptors: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Manifest: `src tgt gt_pose_file src_idx tgt_idx` per line.
    manifest: PathBuf,
    #[arg(long, default_value = "default")]
    criteria: String,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write per-pair records as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the summary as JSON here.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Report squared translation error (m²) instead of Euclidean cm.
    #[arg(long)]
    rte_squared: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene kind: indoor_room or lidar_sweep.
    kind: String,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overlap fraction of each cloud.
    #[arg(long)]
    overlap: Option<f64>,
    /// Gaussian noise sigma in meters.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Per-trial CSV output (plot-ready).
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn parse_index_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err("expected `i,j`".into());
    }
    let i = parts[0].trim().parse().map_err(|_| "bad index i")?;
    let j = parts[1].trim().parse().map_err(|_| "bad index j")?;
    Ok((i, j))
}

fn parse_criteria(s: &str) -> Result<SuccessCriteria> {
    if let Some((t, r)) = s.split_once(',') {
        let t: f64 = t.trim().parse().map_err(|_| {
            Error::InvalidParameter(format!("bad translation threshold `{t}`"))
        })?;
        let r: f64 = r.trim().parse().map_err(|_| {
            Error::InvalidParameter(format!("bad rotation threshold `{r}`"))
        })?;
        SuccessCriteria::new(t, r)
    } else {
        Ok(SuccessCriteria::preset(s))
    }
}

fn load_cloud_arg(path: &Path, format: &Option<String>) -> Result<PointCloud> {
    match format {
        Some(f) => clouds::load_cloud(path, f.parse()?),
        None => clouds::load_cloud(path, clouds::detect_cloud_format(path)?),
    }
}

fn load_config_arg(path: &Option<PathBuf>) -> Result<PipelineConfig> {
    match path {
        Some(p) => config::load_config(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn print_report_line(report: &RegistrationReport) {
    let pose = report.pose();
    eprintln!(
        "status: {:?}{}",
        report.status,
        if report.degraded { " (degraded)" } else { "" }
    );
    if let Some(b) = &report.bootstrap {
        eprintln!(
            "bootstrap: v = {:.4} m ({:?}), radii = [{:.3}, {:.3}, {:.3}] m",
            b.voxel_size, b.branch, b.radii[0], b.radii[1], b.radii[2]
        );
    }
    if let Some(c) = &report.consensus {
        eprintln!(
            "consensus: {} candidates, {} inliers (eps = {:.4} m)",
            c.candidates, c.inlier_count, c.epsilon
        );
    }
    if let Some(r) = &report.ransac {
        eprintln!(
            "ransac: {} iterations, {}/{} inliers",
            r.iterations, r.inlier_count, r.input_pairs
        );
    }
    if let Some(m) = &report.metrics {
        eprintln!(
            "metrics: RTE = {:.2} cm, RRE = {:.3} deg, success = {}",
            m.rte_cm, m.rre_deg, m.success
        );
    }
    eprintln!("timings: {:.1} ms total", report.timings_ms.total_ms);
    println!("pose (3x4 row-major):");
    let rows = bufferx::pipeline::PoseRows::from(&pose);
    for row in rows.0 {
        println!("  {:>12.6} {:>12.6} {:>12.6} {:>12.6}", row[0], row[1], row[2], row[3]);
    }
}

fn cmd_register(args: RegisterArgs) -> Result<ExitCode> {
    let cfg = load_config_arg(&args.config)?;
    let src = load_cloud_arg(&args.src, &args.format)?;
    let tgt = load_cloud_arg(&args.tgt, &args.format)?;

    let mut report = match &args.descriptors {
        Some(dpath) => {
            let backend = descriptors::load_external_backend(dpath, cfg.dims)?;
            register_with_backend(&src, &tgt, &cfg, &backend)?
        }
        None => register(&src, &tgt, &cfg)?,
    };

    if let Some(gt_path) = &args.gt {
        let (i, j) = args.gt_index.ok_or_else(|| {
            Error::InvalidParameter("--gt requires --gt-index i,j".into())
        })?;
        let fmt = detect_pose_format(gt_path)?;
        let all = poses::load_poses(gt_path, fmt)?;
        let gt = relative_pose(&all, i, j)?;
        report = report.with_ground_truth(&gt, &parse_criteria(&args.criteria)?);
    }

    if let Some(out) = &args.json {
        std::fs::write(out, serde_json::to_string_pretty(&report).unwrap())?;
    }
    print_report_line(&report);
    Ok(if report.status.is_usable() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn cmd_bench(args: BenchArgs) -> Result<ExitCode> {
    let cfg = load_config_arg(&args.config)?;
    let crit = parse_criteria(&args.criteria)?;
    let entries = load_manifest(&args.manifest)?;
    if entries.is_empty() {
        return Err(Error::EmptyInput("manifest has no pairs".into()));
    }

    let mut records = Vec::new();
    let mut rows = Vec::new();
    for (k, entry) in entries.iter().enumerate() {
        let src = clouds::load_cloud_auto(&entry.src)?;
        let tgt = clouds::load_cloud_auto(&entry.tgt)?;
        let fmt = detect_pose_format(&entry.gt_poses)?;
        let all = poses::load_poses(&entry.gt_poses, fmt)?;
        let gt = relative_pose(&all, entry.src_idx, entry.tgt_idx)?;

        let report = register(&src, &tgt, &cfg)?;
        let mut rec = evaluate_pair(&report.pose(), &gt, &crit);
        if !report.status.is_usable() {
            rec.success = false;
        }
        eprintln!(
            "pair {k}: status {:?}, RTE {:.2} cm, RRE {:.3} deg, success {}",
            report.status, rec.rte_cm, rec.rre_deg, rec.success
        );
        let rte_report = if args.rte_squared {
            let gt_t = gt.translation;
            bufferx::bench::translation_error_squared(&report.pose().translation, &gt_t)
        } else {
            rec.rte_cm
        };
        rows.push((
            k,
            entry.src.display().to_string(),
            entry.tgt.display().to_string(),
            format!("{:?}", report.status),
            rte_report,
            rec.rre_deg,
            rec.success,
            report.timings_ms.total_ms,
        ));
        records.push(rec);
    }

    let summary = BenchmarkSummary::from_records(records);
    println!(
        "pairs: {}  success: {}  rate: {:.2}%  mean RTE: {}  mean RRE: {}",
        summary.n_pairs,
        summary.n_success,
        summary.success_rate_pct,
        summary
            .mean_rte_cm
            .map_or("n/a".into(), |v| format!("{v:.2} cm")),
        summary
            .mean_rre_deg
            .map_or("n/a".into(), |v| format!("{v:.3} deg")),
    );

    if let Some(out) = &args.csv {
        let mut w = csv::Writer::from_path(out).map_err(csv_err)?;
        let rte_col = if args.rte_squared { "rte_m2" } else { "rte_cm" };
        w.write_record(["pair", "src", "tgt", "status", rte_col, "rre_deg", "success", "time_ms"])
            .map_err(csv_err)?;
        for (k, src, tgt, status, rte, rre, success, time_ms) in &rows {
            w.write_record([
                k.to_string(),
                src.clone(),
                tgt.clone(),
                status.clone(),
                format!("{rte}"),
                format!("{rre}"),
                success.to_string(),
                format!("{time_ms}"),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
    }
    if let Some(out) = &args.json {
        std::fs::write(out, serde_json::to_string_pretty(&summary).unwrap())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidParameter(format!("csv write failed: {e}"))
}

fn cmd_synth(args: SynthArgs) -> Result<ExitCode> {
    let kind: SceneKind = args.kind.parse()?;
    let cfg = load_config_arg(&args.config)?;
    let mut params = SynthParams::defaults_for(kind);
    if let Some(o) = args.overlap {
        params.overlap = o;
    }
    if let Some(n) = args.noise {
        params.noise_sigma = n;
    }
    let crit = match kind {
        SceneKind::IndoorRoom => SuccessCriteria::preset("indoor"),
        SceneKind::LidarSweep => SuccessCriteria::preset("kitti"),
    };

    let mut records = Vec::new();
    let mut rows = Vec::new();
    for trial in 0..args.trials {
        let seed = args.seed + trial as u64;
        let (p, q, gt) = synth_scene(kind, &params, seed)?;
        let mut run_cfg = cfg.clone();
        run_cfg.rng_seed = seed;
        let report = register(&p, &q, &run_cfg)?;
        let mut rec = evaluate_pair(&report.pose(), &gt, &crit);
        if !report.status.is_usable() {
            rec.success = false;
        }
        eprintln!(
            "trial {trial} (seed {seed}): status {:?}, RTE {:.2} cm, RRE {:.3} deg, success {}",
            report.status, rec.rte_cm, rec.rre_deg, rec.success
        );
        rows.push((trial, seed, rec.clone(), report.timings_ms.total_ms));
        records.push(rec);
    }

    let summary = BenchmarkSummary::from_records(records);
    println!(
        "{:?}: {} trials, success rate {:.1}%, mean RTE {} / RRE {}",
        kind,
        summary.n_pairs,
        summary.success_rate_pct,
        summary
            .mean_rte_cm
            .map_or("n/a".into(), |v| format!("{v:.2} cm")),
        summary
            .mean_rre_deg
            .map_or("n/a".into(), |v| format!("{v:.3} deg")),
    );

    if let Some(out) = &args.csv {
        let mut w = csv::Writer::from_path(out).map_err(csv_err)?;
        w.write_record([
            "trial", "seed", "overlap", "noise_sigma", "rte_cm", "rre_deg", "success", "time_ms",
        ])
        .map_err(csv_err)?;
        for (trial, seed, rec, time_ms) in &rows {
            w.write_record([
                trial.to_string(),
                seed.to_string(),
                params.overlap.to_string(),
                params.noise_sigma.to_string(),
                format!("{}", rec.rte_cm),
                format!("{}", rec.rre_deg),
                rec.success.to_string(),
                format!("{time_ms}"),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_demo_lshape() -> ExitCode {
    let table = lshape_ambiguity_demo();
    println!("{:<6} {:>8} {:>6} {:<6} {:>14}", "kernel", "mu", "c_bar", "case", "cost");
    for rec in &table {
        println!(
            "{:<6} {:>8.1} {:>6.1} {:<6} {:>14.6}",
            rec.kernel, rec.mu, rec.c_bar, rec.alignment, rec.cost
        );
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Register(args) => cmd_register(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Synth(args) => cmd_synth(args),
        Command::DemoLshape => Ok(cmd_demo_lshape()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Parse { .. } | Error::InvalidParameter(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
