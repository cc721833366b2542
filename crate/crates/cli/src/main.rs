use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use cellpack::compare::{self, ExperimentConfig, Pipeline, RunReport, VerifyOptions, SCOPES};
use cellpack::corrector::GaugeFit;
use cellpack::generators;
use cellpack::geometry::Pt;
use cellpack::surface;
use cellpack::svg;
use cellpack::walks::DubejkoVariant;
use cellpack::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cellpack", version, about = "Cell configurations versus their circle packings and uniformizations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML); defaults to the preset of the subcommand.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a cell configuration and write it as JSON.
    Generate(Common),
    /// Pack truncations and compare them with the cells.
    Pack(Common),
    /// Dubejko walk statistics and the covariance gauge.
    Walk(Common),
    /// Uniformize M(S) and compare it with the cells.
    Uniformize(Common),
    /// Run the pipeline named in the config.
    Compare(Common),
    /// Run the invariant checks.
    Verify {
        #[command(flatten)]
        common: Common,
        /// One of packing, walks, surface, corrector, config, compare, or all.
        #[arg(long, default_value = "all")]
        scope: String,
        #[arg(long, default_value_t = 400)]
        walks: usize,
        #[arg(long, default_value_t = 4000)]
        steps: usize,
        /// Use the swapped-factor Dubejko formula (the suite must fail).
        #[arg(long)]
        mutate: bool,
    },
    /// Summarize a report written by an earlier run.
    Report {
        /// Directory holding report.json.
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parse(_) => Failure::Usage(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

fn load(common: &Common, pipeline: Option<Pipeline>) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            ExperimentConfig::from_toml(&text)?
        }
        None => ExperimentConfig::preset(pipeline.unwrap_or(Pipeline::Pack)),
    };
    if let Some(p) = pipeline {
        cfg.pipeline = p;
    }
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    cfg.validate()?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.out));
    fs::create_dir_all(&out)?;
    Ok((cfg, out))
}

fn write_report(report: &RunReport, out: &Path) -> Result<(), Failure> {
    fs::write(out.join("report.json"), report.to_json()?)?;
    fs::write(out.join("report.csv"), report.to_csv())?;
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let prov = serde_json::json!({ "version": compare::VERSION, "unix_time": stamp });
    fs::write(out.join("provenance.json"), serde_json::to_string_pretty(&prov).map_err(|e| Failure::Run(e.to_string()))?)?;
    Ok(())
}

fn summary_line(report: &RunReport) -> String {
    let s = &report.summary;
    let mut line = format!(
        "{:?}: {}/{} seeds pass (need {}), {} errors",
        report.pipeline, s.passing, s.seeds, s.needed, s.errors
    );
    if let Some(e) = s.edge_passing {
        line.push_str(&format!(", edge metric {e}/{}", s.seeds));
    }
    if let Some(d) = s.pooled_gauge_distance {
        line.push_str(&format!(", pooled |A - I| = {d:.4}"));
    }
    line.push_str(if s.pass { " -> PASS" } else { " -> FAIL" });
    line
}

fn figures(cfg: &ExperimentConfig, report: &RunReport, out: &Path) -> Result<(), Failure> {
    let Some(first) = report.outcomes.iter().find(|o| o.comparison.is_some()) else {
        return Ok(());
    };
    let gauge = first.comparison.as_ref().map(|c| c.gauge).unwrap_or_else(GaugeFit::identity);
    let inv = gauge.linear().inverse().ok_or_else(|| Failure::Run("singular gauge".into()))?;
    let config = generators::generate(&generators::GeneratorSpec { seed: first.seed, ..cfg.generator.clone() })?;
    match cfg.pipeline {
        Pipeline::Pack => {
            let radius = cfg.pack.margin * cfg.pack.radii.last().copied().unwrap_or(1.0);
            let (trunc, packing) = compare::pack_truncation(&config, radius, cfg.tolerances.solver)?;
            fs::write(out.join("packing.svg"), svg::packing_overlay(&config, &trunc.ids, &packing, &gauge, 2.0 * cfg.pack.radii[0]))?;
        }
        Pipeline::Uniformize => {
            let u = &cfg.uniformize;
            let surf = surface::build_surface(&config.map)?;
            let half = u.s_factor * 2f64.powi(*u.k.last().unwrap());
            let (_, map) = compare::uniformize_square(&config, &surf, half, u.n, cfg.tolerances.solver)?;
            let within = 2f64.powi(u.k[0] + 1);
            let pos: Vec<Pt> = map.images.iter().map(|&p| inv.apply(p)).collect();
            let tris: Vec<[usize; 3]> =
                map.sub.triangles.iter().copied().filter(|t| t.iter().all(|&v| pos[v].norm() <= within)).collect();
            let cells: Vec<Vec<Pt>> = config
                .cells
                .iter()
                .filter(|c| c.centroid.norm() <= within)
                .flat_map(|c| c.pieces.iter().cloned())
                .collect();
            fs::write(out.join("embedding.svg"), svg::mesh_overlay(&tris, &pos, Some(&cells)))?;
        }
        _ => {}
    }
    Ok(())
}

fn run_pipeline(common: &Common, pipeline: Option<Pipeline>) -> Result<bool, Failure> {
    let (cfg, out) = load(common, pipeline)?;
    let report = compare::run(&cfg)?;
    write_report(&report, &out)?;
    for o in &report.outcomes {
        if let Some(e) = &o.error {
            eprintln!("seed {}: {e}", o.seed);
        }
    }
    figures(&cfg, &report, &out)?;
    println!("{}", summary_line(&report));
    Ok(report.summary.pass)
}

fn execute(cli: Cli) -> Result<bool, Failure> {
    match cli.command {
        Command::Generate(common) => {
            let (cfg, out) = load(&common, None)?;
            let seed = cfg.seeds[0];
            let config = generators::generate(&generators::GeneratorSpec { seed, ..cfg.generator.clone() })?;
            fs::write(out.join("config.json"), config.to_json()?)?;
            let v = config.validate();
            println!("{} cells, carrier side {}, valid: {}", config.len(), config.carrier.side, v.ok());
            Ok(v.ok())
        }
        Command::Pack(c) => run_pipeline(&c, Some(Pipeline::Pack)),
        Command::Walk(c) => run_pipeline(&c, Some(Pipeline::Walk)),
        Command::Uniformize(c) => run_pipeline(&c, Some(Pipeline::Uniformize)),
        Command::Compare(c) => {
            if c.config.is_none() {
                return Err(Failure::Usage("compare needs --config".into()));
            }
            run_pipeline(&c, None)
        }
        Command::Verify { common, scope, walks, steps, mutate } => {
            if scope != "all" && !SCOPES.contains(&scope.as_str()) {
                return Err(Failure::Usage(format!("unknown scope '{scope}'; expected all or one of {SCOPES:?}")));
            }
            let opts = VerifyOptions {
                scope,
                seed: common.seed.unwrap_or(1),
                walks,
                steps,
                mutation: mutate.then_some(DubejkoVariant::SwappedFactor),
            };
            let summary = compare::run_verify_suite(&opts);
            for c in &summary.checks {
                println!("{:<10} {:<30} {:?} value={:e} threshold={:e} {}", c.scope, c.name, c.verdict, c.value, c.threshold, c.detail);
            }
            println!("{} failed, {} underpowered -> {}", summary.failed, summary.underpowered, if summary.pass { "PASS" } else { "FAIL" });
            if let Some(out) = &common.out {
                fs::create_dir_all(out)?;
                let json = serde_json::to_string_pretty(&summary).map_err(|e| Failure::Run(e.to_string()))?;
                fs::write(out.join("verify.json"), json)?;
            }
            Ok(summary.pass)
        }
        Command::Report { out } => {
            let path = out.join("report.json");
            let text = fs::read_to_string(&path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            let report = RunReport::from_json(&text)?;
            for o in &report.outcomes {
                if let Some(c) = &o.comparison {
                    let vals: Vec<String> = c.rows.iter().map(|r| format!("{}:{:.4}", r.scale, r.vertex_metric)).collect();
                    println!("seed {} {} [{}] ratio {:.3} {}", o.seed, c.kind, vals.join(" "), c.trend.ratio, if c.trend.pass { "pass" } else { "fail" });
                }
                if let Some(w) = &o.walk {
                    println!("seed {} drift {:?} msd {:?} isotropy {:?}", o.seed, w.drift, w.msd, w.isotropy);
                }
                if let Some(e) = &o.error {
                    println!("seed {} error: {e}", o.seed);
                }
            }
            println!("{}", summary_line(&report));
            Ok(report.summary.pass)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
