//! `osmag-nav` command line.
//!
//! Exit codes: 0 success, 1 validation or retrieval failure, 2 I/O, config
//! or usage error.

mod backend;
mod table;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use osmag_nav::enrichment::{ingest, IngestOptions, RecordsFile, DEFAULT_MERGE_RADIUS_M};
use osmag_nav::eval::{map_size, records_from_jsonl, records_to_jsonl, run_demo, DirMode, ExperimentConfig};
use osmag_nav::grid::{inflate, render_grid, DEFAULT_RESOLUTION_M};
use osmag_nav::llm::prompt_hash;
use osmag_nav::retrieval::build_prompt;
use osmag_nav::{
    parse_osmag, retrieve, serialize_osmag, validate, Experiment, MapMode, MetricsConfig, MetricsReport, Query,
    SemanticMap,
};

use crate::backend::BackendArgs;

#[derive(Parser)]
#[command(
    name = "osmag-nav",
    version,
    about = "Semantic osmAG maps, LLM-planned object search and evaluation"
)]
struct Cli {
    /// Print machine-readable JSON on stdout instead of tables.
    #[arg(long, global = true)]
    json: bool,
    /// Increase log detail (-v info, -vv debug). Logs go to stderr.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a map against every structural rule.
    Validate { map: PathBuf },
    /// Add object nodes, viewpoint nodes and room descriptions from a records file.
    Enrich {
        map: PathBuf,
        records: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Same-label instances closer than this (m) merge; 0 disables.
        #[arg(long, default_value_t = DEFAULT_MERGE_RADIUS_M)]
        merge_radius: f64,
        #[command(flatten)]
        summarizer: BackendArgs,
    },
    /// Rasterize a map into a PGM occupancy grid plus a JSON sidecar.
    Render {
        map: PathBuf,
        /// Cell size in meters.
        #[arg(long, default_value_t = DEFAULT_RESOLUTION_M)]
        res: f64,
        /// Dilate occupied cells by this radius (m) before writing.
        #[arg(long)]
        inflate: Option<f64>,
        /// PGM path; the sidecar goes next to it with a .json extension.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Ask the text backend where to look for an object.
    Query {
        map: PathBuf,
        /// "OBJECT", "OBJECT in the ROOM" or "OBJECT in the ROOM on floor F".
        query: String,
        #[arg(long, value_enum, default_value_t = ModeArg::Full)]
        mode: ModeArg,
        /// Print the prompt and its fixture hash instead of calling a backend.
        #[arg(long)]
        print_prompt: bool,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Run every episode of an experiment config and write JSON-lines records.
    Simulate {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the metrics report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Compute metrics from a records file.
    Eval {
        records: PathBuf,
        /// Map whose serialized size goes into the report.
        #[arg(long)]
        map: Option<PathBuf>,
        /// Other map artifacts to size alongside (needs --map).
        #[arg(long, requires = "map")]
        compare: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = DirArg::AllQueries)]
        dir_mode: DirArg,
        /// Success radius for path length, meters.
        #[arg(long, default_value_t = 1.0)]
        success_radius: f64,
        /// Newline-separated episode ids; path length only averages these.
        #[arg(long)]
        success_ids: Option<PathBuf>,
        /// Write the report JSON here.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Write the results table as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the packaged five-room experiment with the heuristic backend.
    Demo {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Directory for per-run records and reports.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    RoomsOnly,
}

impl From<ModeArg> for MapMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => MapMode::Full,
            ModeArg::RoomsOnly => MapMode::RoomsOnly,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DirArg {
    AllQueries,
    FailedOnly,
}

/// Commands either succeed or report a domain failure (exit 1); anything
/// returned as `Err` is an I/O or configuration problem (exit 2).
enum Status {
    Ok,
    Failed,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();

    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<Status> {
    let json = cli.json;
    match cli.command {
        Command::Validate { map } => cmd_validate(&map, json),
        Command::Enrich {
            map,
            records,
            output,
            merge_radius,
            summarizer,
        } => cmd_enrich(&map, &records, &output, merge_radius, &summarizer, json),
        Command::Render {
            map,
            res,
            inflate,
            output,
        } => cmd_render(&map, res, inflate, &output, json),
        Command::Query {
            map,
            query,
            mode,
            print_prompt,
            backend,
        } => cmd_query(&map, &query, mode.into(), print_prompt, &backend, json),
        Command::Simulate {
            config,
            output,
            report,
            seed,
            jobs,
        } => cmd_simulate(&config, &output, report.as_deref(), seed, jobs, json),
        Command::Eval {
            records,
            map,
            compare,
            dir_mode,
            success_radius,
            success_ids,
            output,
            csv,
        } => {
            let mut cfg = MetricsConfig {
                success_radius_m: success_radius,
                dir_mode: match dir_mode {
                    DirArg::AllQueries => DirMode::AllQueries,
                    DirArg::FailedOnly => DirMode::FailedOnly,
                },
                ..MetricsConfig::default()
            };
            if let Some(p) = success_ids {
                let text = read(&p)?;
                cfg.success_ids = Some(
                    text.lines()
                        .map(str::trim)
                        .filter(|l| !l.is_empty())
                        .map(String::from)
                        .collect(),
                );
            }
            cfg.check().map_err(anyhow::Error::msg)?;
            cmd_eval(
                &records,
                map.as_deref(),
                &compare,
                &cfg,
                output.as_deref(),
                csv.as_deref(),
                json,
            )
        }
        Command::Demo { seed, jobs, out } => cmd_demo(seed, jobs, out.as_deref(), json),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}

fn load_map(path: &Path) -> Result<SemanticMap> {
    parse_osmag(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn print_json(value: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("json values serialize")
    );
}

fn cmd_validate(path: &Path, json: bool) -> Result<Status> {
    let map = load_map(path)?;
    let violations = validate(&map);
    if json {
        print_json(&json!({ "map": path, "violations": violations }));
    } else {
        for v in &violations {
            println!("{v}");
        }
        println!("{} violations", violations.len());
    }
    Ok(if violations.is_empty() {
        Status::Ok
    } else {
        Status::Failed
    })
}

fn cmd_enrich(
    map_path: &Path,
    records_path: &Path,
    output: &Path,
    merge_radius: f64,
    summarizer: &BackendArgs,
    json: bool,
) -> Result<Status> {
    let map = load_map(map_path)?;
    let records =
        RecordsFile::from_json(&read(records_path)?).with_context(|| format!("reading {}", records_path.display()))?;
    let backend = summarizer.summarizer()?;
    let opts = IngestOptions {
        merge_radius_m: merge_radius,
    };
    let (enriched, report) = ingest(&map, &records, backend.as_deref(), opts)?;
    write(output, &serialize_osmag(&enriched))?;
    if json {
        print_json(&json!({ "output": output, "report": report }));
    } else {
        println!(
            "applied {} (instances {}, viewpoints {}, descriptions {}), merged {}, skipped {}",
            report.applied.total(),
            report.applied.instances,
            report.applied.viewpoints,
            report.applied.room_descriptions,
            report.merged_instances,
            report.skipped.total()
        );
        for s in &report.skips {
            println!("  skipped {:?} #{}: {}", s.kind, s.index, s.reason);
        }
        println!("wrote {}", output.display());
    }
    Ok(Status::Ok)
}

fn cmd_render(map_path: &Path, res: f64, inflation: Option<f64>, output: &Path, json: bool) -> Result<Status> {
    let map = load_map(map_path)?;
    let mut grid = render_grid(&map, res)?;
    if let Some(r) = inflation {
        if !(r.is_finite() && r >= 0.0) {
            bail!("inflation radius must be a non-negative number, got {r}");
        }
        grid = inflate(&grid, r);
    }
    let sidecar = output.with_extension("json");
    let meta = grid.meta();
    write(output, &grid.to_pgm())?;
    write(&sidecar, &(serde_json::to_string_pretty(&meta)? + "\n"))?;
    if json {
        print_json(&json!({ "pgm": output, "sidecar": sidecar, "meta": meta }));
    } else {
        println!(
            "{}x{} cells at {} m, wrote {} and {}",
            meta.width,
            meta.height,
            meta.resolution,
            output.display(),
            sidecar.display()
        );
    }
    Ok(Status::Ok)
}

fn cmd_query(
    map_path: &Path,
    text: &str,
    mode: MapMode,
    print_prompt: bool,
    args: &BackendArgs,
    json: bool,
) -> Result<Status> {
    let map = load_map(map_path)?;
    let query = Query::parse(text)?;
    if print_prompt {
        let req = build_prompt(&map, &query, mode);
        let hash = prompt_hash(&req);
        if json {
            print_json(&json!({ "hash": hash, "request": req }));
        } else {
            println!(
                "hash: {hash}\n--- system ---\n{}\n--- user ---\n{}",
                req.system_text, req.user_text
            );
        }
        return Ok(Status::Ok);
    }
    let backend = args.retrieval()?;
    match retrieve(&map, &query, backend.as_ref(), mode) {
        Ok(plan) => {
            if json {
                print_json(&json!({ "query": query.text(), "granularity": query.granularity(), "plan": plan }));
            } else {
                println!("{}", table::plan(&map, &plan));
            }
            Ok(Status::Ok)
        }
        Err(e) => {
            if json {
                print_json(&json!({ "query": query.text(), "error": e.to_string() }));
            } else {
                eprintln!("retrieval failed: {e}");
            }
            Ok(Status::Failed)
        }
    }
}

fn cmd_simulate(
    config: &Path,
    output: &Path,
    report_path: Option<&Path>,
    seed: Option<u64>,
    jobs: usize,
    json: bool,
) -> Result<Status> {
    let mut cfg = ExperimentConfig::from_json(&read(config)?)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let base = config.parent().unwrap_or(Path::new("."));
    let exp = Experiment::from_config(&cfg, base)?;
    log::info!("running {} episodes on {} job(s)", exp.episode_count(), jobs);
    let out = exp.run(jobs.max(1))?;
    write(output, &records_to_jsonl(&out.records))?;
    if let Some(p) = report_path {
        write(p, &(out.report.to_json() + "\n"))?;
    }
    if json {
        print_json(&json!({ "records": output, "episodes": out.records.len(), "report": out.report }));
    } else {
        println!("{}", table::report(&out.report));
        println!("wrote {} records to {}", out.records.len(), output.display());
    }
    Ok(Status::Ok)
}

fn cmd_eval(
    records_path: &Path,
    map_path: Option<&Path>,
    compare: &[PathBuf],
    cfg: &MetricsConfig,
    output: Option<&Path>,
    csv: Option<&Path>,
    json: bool,
) -> Result<Status> {
    let records = records_from_jsonl(&read(records_path)?)
        .map_err(|(line, e)| anyhow::anyhow!("{} line {line}: {e}", records_path.display()))?;
    let mut report = MetricsReport::compute(&records, cfg);
    if let Some(p) = map_path {
        report.map_size = Some(map_size(&load_map(p)?, compare)?);
    }
    if let Some(p) = output {
        write(p, &(report.to_json() + "\n"))?;
    }
    if let Some(p) = csv {
        write(p, &report.to_csv())?;
    }
    if json {
        println!("{}", report.to_json());
    } else {
        println!("{}", table::report(&report));
    }
    Ok(Status::Ok)
}

fn cmd_demo(seed: u64, jobs: usize, out: Option<&Path>, json: bool) -> Result<Status> {
    let runs = run_demo(seed, jobs.max(1))?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for r in &runs {
            write(
                &dir.join(format!("{}.records.jsonl", r.name)),
                &records_to_jsonl(&r.output.records),
            )?;
            write(
                &dir.join(format!("{}.report.json", r.name)),
                &(r.output.report.to_json() + "\n"),
            )?;
        }
    }
    if json {
        let runs: Vec<_> = runs
            .iter()
            .map(|r| json!({ "name": r.name, "episodes": r.output.records.len(), "report": r.output.report }))
            .collect();
        print_json(&json!({ "seed": seed, "runs": runs }));
    } else {
        for r in &runs {
            println!("== {} ({} episodes)", r.name, r.output.records.len());
            println!("{}", table::report(&r.output.report));
        }
        if let Some(dir) = out {
            println!("wrote records and reports to {}", dir.display());
        }
    }
    Ok(Status::Ok)
}
