mod config;
mod svg;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use mitwin_core::forward::ForwardModel;
use mitwin_core::geometry::save_mesh_with_comment;
use mitwin_core::inverse::{default_candidates, invert};
use mitwin_core::metrics::{evaluate, evaluation_csv, AhaLocWeights};
use mitwin_core::pseudo_ecg::{EcgRecord, Lead};
use mitwin_core::qrs_analysis::{detect_abnormalities, sensitivity_sweep};
use mitwin_core::scenario::{find_scenario, InfarctSpec, ScenarioSpec, TissueLabeling};
use mitwin_core::Error;

use config::{check_hashes, embedded_hash, RunConfig};

#[derive(Parser)]
#[command(name = "mitwin", version, about = "Infarct scenario simulation, QRS sensitivity and inverse recovery")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the phantom mesh.
    Phantom,
    /// Simulate one catalogue scenario (or `baseline`).
    Simulate {
        #[arg(long)]
        scenario: String,
    },
    /// Simulate every scenario and tabulate DTW against the baseline.
    Sweep,
    /// Recover infarct parameters from a QRS record.
    Invert {
        /// Simulate the observed QRS from this scenario.
        #[arg(long, conflicts_with = "observed")]
        scenario: Option<String>,
        /// Observed QRS CSV.
        #[arg(long)]
        observed: Option<PathBuf>,
        /// Ground-truth labeling for scoring the result.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Score predicted labelings against ground truth.
    Evaluate {
        /// Predicted labeling; repeat together with `--truth`.
        #[arg(long, required = true)]
        pred: Vec<PathBuf>,
        #[arg(long, required = true)]
        truth: Vec<PathBuf>,
    },
    /// Index the artifacts of one or more output directories and draw their traces.
    Report {
        /// Directories to collect (defaults to the output directory).
        dirs: Vec<PathBuf>,
    },
}

struct Ctx {
    cfg: RunConfig,
    hash: String,
    out: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, body: &str) -> Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    /// Writes a text artifact with a leading hash comment.
    fn write_tagged(&self, name: &str, body: &str) -> Result<PathBuf> {
        self.write(name, &format!("# config_hash={}\n{body}", self.hash))
    }

    fn write_record(&self, name: &str, rec: &EcgRecord) -> Result<PathBuf> {
        let p = self.path(name);
        rec.write_csv(&p, &[("config_hash", self.hash.clone())])?;
        Ok(p)
    }

    fn write_labeling(&self, name: &str, l: &TissueLabeling, what: &str) -> Result<PathBuf> {
        let p = self.path(name);
        l.write(&p, &format!("config_hash={}\nscenario={what}", self.hash))?;
        Ok(p)
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    }
    let cfg = RunConfig::load(cli.config.as_deref(), cli.seed)?;
    let hash = cfg.hash()?;
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let ctx = Ctx { cfg, hash, out: cli.out };
    match cli.cmd {
        Command::Phantom => cmd_phantom(&ctx),
        Command::Simulate { scenario } => cmd_simulate(&ctx, &scenario),
        Command::Sweep => cmd_sweep(&ctx),
        Command::Invert {
            scenario,
            observed,
            truth,
        } => cmd_invert(&ctx, scenario.as_deref(), observed.as_deref(), truth.as_deref()),
        Command::Evaluate { pred, truth } => cmd_evaluate(&ctx, &pred, &truth),
        Command::Report { dirs } => cmd_report(&ctx, &dirs),
    }
}

fn cmd_phantom(ctx: &Ctx) -> Result<()> {
    let mesh = ctx.cfg.mesh()?;
    let p = ctx.path("phantom.mesh");
    save_mesh_with_comment(&mesh, &p, &format!("config_hash={}", ctx.hash))?;
    println!(
        "{}: {} nodes, {} tets, mean edge {:.2} mm",
        p.display(),
        mesh.num_nodes(),
        mesh.num_tets(),
        mesh.mean_edge_length()
    );
    Ok(())
}

fn baseline_spec(ctx: &Ctx) -> ScenarioSpec {
    ScenarioSpec {
        name: "baseline".into(),
        infarct: InfarctSpec::none(),
        cv: ctx.cfg.cv,
    }
}

fn lookup(ctx: &Ctx, name: &str) -> Result<ScenarioSpec> {
    if name == "baseline" {
        return Ok(baseline_spec(ctx));
    }
    Ok(find_scenario(&ctx.cfg.catalogue()?, name)?.clone())
}

fn cmd_simulate(ctx: &Ctx, name: &str) -> Result<()> {
    let spec = lookup(ctx, name)?;
    let mesh = ctx.cfg.mesh()?;
    let roots = ctx.cfg.roots(&mesh)?;
    let model = ForwardModel::new(&mesh, &roots, &ctx.cfg.electrodes(&mesh)?, ctx.cfg.forward())?;
    let out = if name == "baseline" {
        model.baseline(&spec.cv)?
    } else {
        model.simulate(&spec.infarct, &spec.cv)?
    };
    let rec = out.record.with_name(name);
    let qrs = ctx.write_record(&format!("{name}.qrs.csv"), &rec)?;
    ctx.write_tagged(&format!("{name}.activation.csv"), &out.activation.to_csv())?;
    ctx.write_labeling(&format!("{name}.labeling.csv"), &out.labeling, name)?;
    ctx.write(&format!("{name}.traces.svg"), &svg::lead_traces(&[&rec], &ctx.hash))?;
    println!(
        "{}: {} samples x {} leads, QRS {:.1} ms, max activation {:.1} ms",
        qrs.display(),
        rec.len(),
        Lead::ALL.len(),
        (rec.offset - rec.onset) as f64 * rec.dt_effective,
        out.activation.max_finite().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_sweep(ctx: &Ctx) -> Result<()> {
    let mesh = ctx.cfg.mesh()?;
    let roots = ctx.cfg.roots(&mesh)?;
    let model = ForwardModel::new(&mesh, &roots, &ctx.cfg.electrodes(&mesh)?, ctx.cfg.forward())?;
    let cat = ctx.cfg.catalogue()?;
    let (table, records, baseline) = sensitivity_sweep(&model, &cat, &ctx.cfg.cv, ctx.cfg.sweep.gamma)?;
    ctx.write_tagged("sweep.csv", &table.to_csv())?;
    ctx.write("sweep_heatmap.svg", &svg::heatmap(&table, &ctx.hash))?;

    let mut flags = String::from("scenario,qrs_ms,prolongation,pathological_q,prwp,fqrs\n");
    let leads = |v: &[bool]| -> String {
        Lead::ALL
            .iter()
            .zip(v)
            .filter(|(_, f)| **f)
            .map(|(l, _)| l.name())
            .collect::<Vec<_>>()
            .join(" ")
    };
    for r in &records {
        let f = detect_abnormalities(r, &baseline, &ctx.cfg.sweep.thresholds)?;
        let _ = writeln!(
            flags,
            "{},{},{},{},{},{}",
            r.name,
            f.duration_ms,
            f.prolongation,
            leads(&f.pathological_q),
            f.prwp,
            leads(&f.fqrs)
        );
    }
    ctx.write_tagged("sweep_flags.csv", &flags)?;
    fs::create_dir_all(ctx.path("sweep_qrs"))?;
    ctx.write_record("sweep_qrs/baseline.qrs.csv", &baseline)?;
    for r in &records {
        ctx.write_record(&format!("sweep_qrs/{}.qrs.csv", r.name), r)?;
    }
    println!(
        "{} scenarios, baseline QRS {:.1} ms -> {}",
        table.scenarios.len(),
        table.baseline_duration_ms,
        ctx.path("sweep.csv").display()
    );
    Ok(())
}

fn cmd_invert(ctx: &Ctx, scenario: Option<&str>, observed: Option<&Path>, truth: Option<&Path>) -> Result<()> {
    let mesh = ctx.cfg.mesh()?;
    let roots = ctx.cfg.roots(&mesh)?;
    let model = ForwardModel::new(&mesh, &roots, &ctx.cfg.electrodes(&mesh)?, ctx.cfg.forward())?;
    let observed = match (scenario, observed) {
        (Some(name), None) => {
            let spec = lookup(ctx, name)?;
            model.simulate(&spec.infarct, &spec.cv)?.record.with_name(name)
        }
        (None, Some(p)) => EcgRecord::read_csv(p)?.0,
        _ => return Err(Error::InvalidInput("invert needs exactly one of --scenario or --observed".into()).into()),
    };
    let candidates = default_candidates(&ctx.cfg.cv)?;
    let mut result = invert(&observed, &model, &candidates, &ctx.cfg.inverse)?;
    if let Some(t) = truth {
        let truth = TissueLabeling::read(t)?;
        result = result.with_truth(&model, &truth, &ctx.cfg.subject)?;
    }
    let fitted = model.simulate(&result.theta, &result.cv)?.record.with_name("fitted");
    let report = format!("config_hash = {}\nobserved = {}\n{}", ctx.hash, observed.name, result.report());
    ctx.write("invert.txt", &report)?;
    ctx.write_labeling("invert.labeling.csv", &result.labeling, "inverted")?;
    ctx.write_record("invert.qrs.csv", &fitted)?;
    ctx.write("invert.traces.svg", &svg::lead_traces(&[&observed, &fitted], &ctx.hash))?;
    print!("{report}");
    Ok(())
}

fn cmd_evaluate(ctx: &Ctx, pred: &[PathBuf], truth: &[PathBuf]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions but {} ground truths",
            pred.len(),
            truth.len()
        ))
        .into());
    }
    let mesh = ctx.cfg.mesh()?;
    let mut rows = Vec::new();
    for (p, t) in pred.iter().zip(truth) {
        let scenario = t
            .file_name()
            .and_then(|f| f.to_str())
            .map(|f| f.split('.').next().unwrap_or(f).to_string())
            .unwrap_or_default();
        rows.push(evaluate(
            &ctx.cfg.subject,
            &scenario,
            &TissueLabeling::read(p)?,
            &TissueLabeling::read(t)?,
            &mesh,
            &AhaLocWeights::default(),
        )?);
    }
    let body = evaluation_csv(&rows);
    let p = ctx.write_tagged("evaluation.csv", &body)?;
    print!("{body}");
    eprintln!("wrote {}", p.display());
    Ok(())
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect(&p, out)?;
        } else {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if !name.starts_with("report.") {
                out.push(p);
            }
        }
    }
    Ok(())
}

fn cmd_report(ctx: &Ctx, dirs: &[PathBuf]) -> Result<()> {
    let dirs = if dirs.is_empty() { vec![ctx.out.clone()] } else { dirs.to_vec() };
    let mut files = Vec::new();
    for d in &dirs {
        collect(d, &mut files)?;
    }
    let texts: Vec<String> = files
        .iter()
        .map(|p| fs::read_to_string(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<_>>()?;
    let hash = check_hashes(files.iter().map(PathBuf::as_path).zip(texts.iter().map(|t| embedded_hash(t))))?;

    let mut index = String::from("file,kind\n");
    let mut records = Vec::new();
    for p in &files {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        let kind = name.split_once('.').map_or("", |(_, k)| k);
        let _ = writeln!(index, "{},{kind}", p.display());
        if name.ends_with(".qrs.csv") {
            let (mut rec, _) = EcgRecord::read_csv(p)?;
            if rec.name.is_empty() {
                rec.name = name.trim_end_matches(".qrs.csv").to_string();
            }
            records.push(rec);
        }
    }
    let refs: Vec<&EcgRecord> = records.iter().collect();
    let index_path = ctx.out.join("report.csv");
    fs::write(&index_path, format!("# config_hash={hash}\n{index}"))?;
    fs::write(ctx.out.join("report.svg"), svg::lead_traces(&refs, &hash))?;
    println!("{} artifacts, config {hash} -> {}", files.len(), index_path.display());
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(err) if err.is_numerical() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
