//! `attnfuse`: explore attention-head schedules, verify the closed forms,
//! sweep α and dump the built-in platforms.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use attnfuse::allocator::{GaConfig, Objective};
use attnfuse::analysis::{alpha_sweep, footprint, ClosedForms, STANDARD_GRID};
use attnfuse::explore::ExploreConfig;
use attnfuse::export::{alpha_csv, alpha_svg};
use attnfuse::hwmodel::{builtin_names, builtin_platform, export_hardware, load_hardware, HardwareSpec};
use attnfuse::mapper::MappingOverrides;
use attnfuse::pipeline::{run_explore, run_verify, Artifact};
use attnfuse::scheduler::{Priority, Template};
use attnfuse::workload::{LayerGraph, WorkloadConfig};
use attnfuse::Error;

#[derive(Parser)]
#[command(name = "attnfuse", version, about = "Layer-by-layer vs layer-fused scheduling of attention heads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Schedule a workload on a platform and write the requested artifacts.
    Explore(ExploreArgs),
    /// Compare simulated peaks, makespans and trace endpoints with the closed forms.
    Verify(VerifyArgs),
    /// Closed-form α over a range of M/N, or the footprints of one shape.
    Alpha(AlphaArgs),
    /// Write the built-in platform descriptions as TOML.
    ExportPlatforms {
        #[arg(long, env = "ATTNFUSE_OUT", default_value = "platforms")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ExploreArgs {
    /// Run config file (TOML). Flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Workload file or shorthand `head_MxN` / `mhsa_MxN_hH`.
    #[arg(long)]
    workload: Option<String>,
    /// Built-in platform name or platform file.
    #[arg(long)]
    hw: Option<String>,
    /// Number of heads, overriding the workload.
    #[arg(long)]
    heads: Option<usize>,
    /// latency, memory or weighted:<lambda>.
    #[arg(long)]
    policy: Option<String>,
    /// Schedule only this template.
    #[arg(long)]
    template: Option<String>,
    #[arg(long)]
    population: Option<usize>,
    #[arg(long)]
    generations: Option<usize>,
    #[arg(long)]
    mutation: Option<f64>,
    #[arg(long)]
    crossover: Option<f64>,
    /// GA fitness: latency, energy, memory or weighted:<lambda>.
    #[arg(long)]
    objective: Option<String>,
    /// GA seed (default 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long, env = "ATTNFUSE_OUT")]
    out: Option<PathBuf>,
    /// Comma-separated artifacts (default all).
    #[arg(long, value_delimiter = ',')]
    emit: Option<Vec<String>>,
    /// Mapping overrides file.
    #[arg(long)]
    mappings: Option<PathBuf>,
}

/// Run config file. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunFile {
    workload: Option<String>,
    hw: Option<String>,
    heads: Option<usize>,
    policy: Option<String>,
    template: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    emit: Option<Vec<String>>,
    mappings: Option<PathBuf>,
    ga: Option<GaConfig>,
}

#[derive(Args)]
struct VerifyArgs {
    /// M and N values; every pair is checked.
    #[arg(long, value_delimiter = ',', default_values_t = STANDARD_GRID.to_vec())]
    sizes: Vec<u64>,
    #[arg(long, default_value = "single64x64")]
    hw: String,
    /// Platform for the sequence-length scaling check.
    #[arg(long, default_value = "gap8like")]
    scaling_hw: String,
    #[arg(long)]
    no_scaling: bool,
    #[arg(long, default_value_t = 16)]
    population: usize,
    #[arg(long, default_value_t = 10)]
    generations: usize,
    #[arg(long, default_value_t = 3)]
    seed: u64,
    /// Write verify.csv here.
    #[arg(long, env = "ATTNFUSE_OUT")]
    out: Option<PathBuf>,
    /// Add one word to a closed form (lbl, fuse_q_qkt or fuse_qkt_qktv).
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

#[derive(Args)]
struct AlphaArgs {
    /// Range of M/N, e.g. `1/64..64`.
    #[arg(long, default_value = "1/64..64")]
    sweep: String,
    #[arg(long, default_value_t = 97)]
    points: usize,
    /// Print the footprints of one shape instead of sweeping.
    #[arg(long, requires = "n")]
    m: Option<u64>,
    #[arg(long, requires = "m")]
    n: Option<u64>,
    #[arg(long, env = "ATTNFUSE_OUT", default_value = "out")]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.command {
        Command::Explore(a) => explore(a),
        Command::Verify(a) => verify(a),
        Command::Alpha(a) => alpha(a),
        Command::ExportPlatforms { out } => export_platforms(&out),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn load_workload(spec: &str) -> Result<WorkloadConfig, Failure> {
    let path = Path::new(spec);
    if path.is_file() {
        return Ok(WorkloadConfig::parse(&read(path)?)?);
    }
    WorkloadConfig::from_name(spec).ok_or_else(|| {
        usage(format!("workload '{spec}' is neither a file nor a shorthand like head_64x256 or mhsa_64x256_h4"))
    })
}

fn load_platform(spec: &str, word_bytes: usize) -> Result<HardwareSpec, Failure> {
    if builtin_names().contains(&spec) {
        return Ok(builtin_platform(spec, word_bytes)?);
    }
    let path = Path::new(spec);
    if path.is_file() {
        return Ok(load_hardware(&read(path)?, word_bytes)?);
    }
    Err(usage(format!("platform '{spec}' is neither a file nor one of {}", builtin_names().join(", "))))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn explore(a: ExploreArgs) -> Result<(), Failure> {
    let file = match &a.config {
        Some(p) => toml::from_str::<RunFile>(&read(p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => RunFile::default(),
    };
    let workload = a.workload.or(file.workload).unwrap_or_else(|| "head_64x256".to_string());
    let mut wl = load_workload(&workload)?;
    if let Some(h) = a.heads.or(file.heads) {
        wl.heads = h;
    }
    let g: LayerGraph = wl.build()?;
    let hw = load_platform(&a.hw.or(file.hw).unwrap_or_else(|| "single64x64".to_string()), wl.word_bytes)?;

    let mut ga = file.ga.unwrap_or_default();
    if let Some(v) = a.population {
        ga.population = v;
    }
    if let Some(v) = a.generations {
        ga.generations = v;
    }
    if let Some(v) = a.mutation {
        ga.mutation_rate = v;
    }
    if let Some(v) = a.crossover {
        ga.crossover_rate = v;
    }
    if let Some(v) = a.objective {
        ga.objective = v.parse::<Objective>()?;
    }
    if let Some(v) = a.seed.or(file.seed) {
        ga.seed = v;
    }
    ga.validate()?;

    let priority: Priority = a.policy.or(file.policy).as_deref().unwrap_or("latency").parse()?;
    let templates = match a.template.or(file.template).as_deref() {
        None | Some("all") => Vec::new(),
        Some(t) => vec![t.parse::<Template>()?],
    };
    let overrides = match a.mappings.or(file.mappings) {
        Some(p) => MappingOverrides::parse(&read(&p)?)?,
        None => MappingOverrides::default(),
    };
    let emit: BTreeSet<Artifact> = match a.emit.or(file.emit) {
        Some(names) => names.iter().map(|s| s.trim().parse()).collect::<Result<_, _>>()?,
        None => Artifact::ALL.into_iter().collect(),
    };
    let out = a.out.or(file.out).unwrap_or_else(|| PathBuf::from("out"));

    let cfg = ExploreConfig { search_templates: templates.clone(), templates, priority, ga, overrides };
    let run = run_explore(&g, &hw, &cfg, &emit)?;
    print!("{}", run.summary);
    let best = run.exploration.best_candidate();
    println!(
        "best {}: makespan {} cycles, peak {} words ({} bytes)",
        best.template,
        best.metrics.makespan,
        best.metrics.peak_memory,
        best.metrics.peak_memory * wl.word_bytes as u64
    );
    for (name, text) in &run.files {
        write(&out, name, text)?;
    }
    println!("wrote {} file(s) to {}", run.files.len(), out.display());
    Ok(())
}

fn verify(a: VerifyArgs) -> Result<(), Failure> {
    if a.sizes.is_empty() || a.sizes.contains(&0) {
        return Err(usage("--sizes needs positive values"));
    }
    let hw = load_platform(&a.hw, 1)?;
    let mut forms = ClosedForms::default();
    match a.inject_fault.as_deref() {
        None => {}
        Some("lbl") => forms.lbl = |m, n| attnfuse::analysis::closed_form_lbl(m, n) + 1,
        Some("fuse_q_qkt") => forms.fuse_q_qkt = |m, n| 2 * m * n + m * m + 1,
        Some("fuse_qkt_qktv") => forms.fuse_qkt_qktv = |m, n| 3 * m * n + 1,
        Some(other) => return Err(usage(format!("cannot inject a fault into '{other}'"))),
    }
    let scaling_hw = if a.no_scaling { None } else { Some(load_platform(&a.scaling_hw, 1)?) };
    let ga = GaConfig { population: a.population, generations: a.generations, seed: a.seed, ..GaConfig::default() };
    ga.validate()?;
    let r = run_verify(&a.sizes, &hw, &forms, scaling_hw.as_ref().map(|h| (h, &ga)))?;
    print!("{}", r.text);
    if let Some(out) = &a.out {
        write(out, "verify.csv", &r.grid.csv())?;
    }
    if r.passed() {
        println!("all checks passed");
        Ok(())
    } else {
        Err(Failure::Check("verification failed".into()))
    }
}

fn parse_ratio(s: &str) -> Result<f64, Failure> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((a, b)) => a.trim().parse::<f64>().ok().zip(b.trim().parse::<f64>().ok()).map(|(a, b)| a / b),
        None => s.parse().ok(),
    };
    v.filter(|v| v.is_finite() && *v > 0.0).ok_or_else(|| usage(format!("bad ratio '{s}'")))
}

fn alpha(a: AlphaArgs) -> Result<(), Failure> {
    if let (Some(m), Some(n)) = (a.m, a.n) {
        let r = footprint(m, n)?;
        println!("M={m} N={n}");
        println!("  {:<16} {:>12}", "lbl", r.a_lbl);
        for (t, w) in &r.a_lf {
            println!("  {:<16} {:>12}", t.name(), w);
        }
        println!("alpha {} ({})", r.alpha, r.best_template);
        return Ok(());
    }
    let (lo, hi) = a.sweep.split_once("..").ok_or_else(|| usage(format!("sweep '{}' is not lo..hi", a.sweep)))?;
    let pts = alpha_sweep(parse_ratio(lo)?, parse_ratio(hi)?, a.points)?;
    write(&a.out, "alpha.csv", &alpha_csv(&pts))?;
    write(&a.out, "alpha.svg", &alpha_svg(&pts))?;
    let min = pts.iter().map(|p| p.alpha).fold(f64::INFINITY, f64::min);
    println!("{} points, minimum alpha {min:.4}; wrote alpha.csv and alpha.svg to {}", pts.len(), a.out.display());
    Ok(())
}

fn export_platforms(out: &Path) -> Result<(), Failure> {
    for name in builtin_names() {
        let hw = builtin_platform(name, 1)?;
        write(out, &format!("{name}.toml"), &export_hardware(&hw))?;
        println!("{}", out.join(format!("{name}.toml")).display());
    }
    Ok(())
}
