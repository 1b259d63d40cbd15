use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use exprforge_core::backends::BackendKind;
use exprforge_core::bench::{compare, run_benchmark, Comparison, LatencyReport};
use exprforge_core::diff::{l1_map, render_grayscale, stats, DEFAULT_THRESHOLD};
use exprforge_core::expression_db::load_database;
use exprforge_core::pipeline::{EditOptions, EditRequest, HyperParams};
use exprforge_core::prompting::LoRAConfig;
use exprforge_core::retrieval::{build_index, retrieve, retrieve_via_llm, OpenAiCompatibleClient, RetrievalQuery};
use exprforge_core::{RasterImage, SelectionMask};
use exprforge_service::settings::{merge_patch, BackendSettings};
use exprforge_service::{AppState, JobStore, RunDir, Settings, SettingsStore, DEFAULT_JOB_CAP};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(
    name = "exprforge",
    version,
    about = "Expression-tag retrieval and region-locked image editing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expression database tools.
    Db {
        #[command(subcommand)]
        command: DbCommand,
    },
    /// Rank tags for a story.
    Retrieve {
        #[arg(long)]
        db: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Ask the LLM configured by EXPRFORGE_LLM_URL first.
        #[arg(long)]
        llm: bool,
        text: String,
    },
    /// Per-pixel L1 difference between two images.
    Diff {
        original: PathBuf,
        edited: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: u16,
        /// Where to write the grayscale heatmap PNG.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time edits for one or more configurations.
    Bench {
        #[arg(long, default_value = "stub")]
        backend: BackendKind,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 1024)]
        size: u32,
        /// JSON file with the backend settings and the configurations to compare.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "bench_report.json")]
        out: PathBuf,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        db: PathBuf,
        #[arg(long, default_value_t = 8787)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Overrides the backend kind stored in the settings file.
        #[arg(long)]
        backend: Option<BackendKind>,
        /// Holds settings.json and the job cache.
        #[arg(long, default_value = ".exprforge")]
        run_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_JOB_CAP)]
        job_cap: usize,
    },
}

#[derive(Subcommand)]
enum DbCommand {
    /// Check schema and alias invariants; print counts.
    Validate { path: PathBuf },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Db {
            command: DbCommand::Validate { path },
        } => db_validate(&path),
        Command::Retrieve { db, k, llm, text } => retrieve_cmd(&db, k, llm, &text),
        Command::Diff {
            original,
            edited,
            mask,
            threshold,
            out,
        } => diff_cmd(&original, &edited, mask.as_deref(), threshold, out.as_deref()),
        Command::Bench {
            backend,
            runs,
            size,
            config,
            out,
        } => bench_cmd(backend, runs, size, config.as_deref(), &out),
        Command::Serve {
            db,
            port,
            host,
            backend,
            run_dir,
            job_cap,
        } => serve_cmd(&db, &host, port, backend, RunDir(run_dir), job_cap),
    }
}

fn db_validate(path: &Path) -> Result<()> {
    let db = load_database(path)?;
    let c = db.counts();
    println!("{:<26} {:>6}", "tags", c.tags);
    println!("{:<26} {:>6}", "aliases", c.aliases);
    println!("{:<26} {:>6}", "stories", c.stories);
    println!("{:<26} {:>6}", "example images", c.example_images);
    println!("{:<26} {:>6}", "transformation-free tags", c.transformation_free);
    for w in db.count_warnings() {
        eprintln!("note: {w}");
    }
    Ok(())
}

fn retrieve_cmd(db_path: &Path, k: usize, use_llm: bool, text: &str) -> Result<()> {
    let db = load_database(db_path)?;
    let index = build_index(&db);
    let query = RetrievalQuery::new(text, k)?;
    let results = if use_llm {
        let client = OpenAiCompatibleClient::from_env().context("--llm needs EXPRFORGE_LLM_URL")?;
        let out = retrieve_via_llm(&db, &index, &query, &client)?;
        if out.degraded {
            eprintln!("note: the model named no known tag; showing lexical results");
        }
        out.results
    } else {
        retrieve(&index, &query)
    };
    println!("{:>4}  {:<24} {:>10}  fields", "rank", "tag", "score");
    for (i, r) in results.iter().enumerate() {
        let score = if r.score == f64::MAX {
            "exact".to_string()
        } else {
            format!("{:.4}", r.score)
        };
        let fields: Vec<_> = r.matched_fields.iter().map(|f| f.as_str()).collect();
        println!("{:>4}  {:<24} {:>10}  {}", i + 1, r.tag_name, score, fields.join(","));
    }
    Ok(())
}

fn diff_cmd(original: &Path, edited: &Path, mask: Option<&Path>, threshold: u16, out: Option<&Path>) -> Result<()> {
    let a = RasterImage::load_png(original).with_context(|| original.display().to_string())?;
    let b = RasterImage::load_png(edited).with_context(|| edited.display().to_string())?;
    let mask = mask
        .map(|p| SelectionMask::load_png(p).with_context(|| p.display().to_string()))
        .transpose()?;
    let map = l1_map(&a, &b)?;
    let s = stats(&map, mask.as_ref())?;
    if let Some(out) = out {
        let png = render_grayscale(&map, threshold)?.encode_png()?;
        std::fs::write(out, png).with_context(|| out.display().to_string())?;
    }
    println!("{}", serde_json::to_string_pretty(&s)?);
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchConfig {
    #[serde(default)]
    backend: Option<BackendSettings>,
    #[serde(default = "default_prompt")]
    prompt: String,
    configs: Vec<BenchCase>,
}

fn default_prompt() -> String {
    "smile".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchCase {
    label: String,
    /// Merge patch over the default hyperparameters.
    #[serde(default)]
    params: Option<serde_json::Value>,
    #[serde(default)]
    loras: Vec<LoRAConfig>,
}

#[derive(Serialize)]
struct BenchOutput {
    size: u32,
    backend: String,
    reports: Vec<LatencyReport>,
    comparison: Option<Comparison>,
}

fn bench_image(size: u32) -> Result<(RasterImage, SelectionMask)> {
    let img = RasterImage::from_fn(size, size, |x, y| {
        [(x * 255 / size) as u8, (y * 255 / size) as u8, 128, 255]
    })?;
    let r = (size / 4) as i64;
    let c = (size / 2) as i64;
    let mask = SelectionMask::from_fn(size, size, |x, y| {
        let (dx, dy) = (x as i64 - c, y as i64 - c);
        dx * dx + dy * dy <= r * r
    })?;
    Ok((img, mask))
}

fn bench_cmd(kind: BackendKind, runs: usize, size: u32, config: Option<&Path>, out: &Path) -> Result<()> {
    let config = match config {
        Some(p) => serde_json::from_slice::<BenchConfig>(&std::fs::read(p).with_context(|| p.display().to_string())?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => BenchConfig {
            backend: None,
            prompt: default_prompt(),
            configs: vec![BenchCase {
                label: "default".into(),
                params: None,
                loras: vec![],
            }],
        },
    };
    if config.configs.is_empty() {
        bail!("the config lists no configurations");
    }
    let mut backend_settings = config.backend.unwrap_or_default();
    backend_settings.kind = kind;
    if kind == BackendKind::Http {
        backend_settings.http = backend_settings.http.with_env_overrides();
    }
    let backend = backend_settings.build()?;
    let (img, mask) = bench_image(size)?;
    let options = EditOptions {
        timeout: backend_settings.edit_timeout(),
        ..EditOptions::default()
    };

    let mut reports = Vec::new();
    for case in &config.configs {
        let mut params = serde_json::to_value(HyperParams::default())?;
        if let Some(p) = &case.params {
            merge_patch(&mut params, p);
        }
        let req = EditRequest {
            params: serde_json::from_value(params).with_context(|| format!("params of `{}`", case.label))?,
            loras: case.loras.clone(),
            ..EditRequest::new(img.clone(), mask.clone(), config.prompt.clone())
        };
        eprintln!("running `{}` ({runs} runs + 1 warm-up)", case.label);
        reports.push(run_benchmark(
            case.label.clone(),
            backend.as_ref(),
            &req,
            runs,
            &options,
        )?);
    }
    let comparison = (reports.len() >= 2).then(|| compare(&reports)).transpose()?;
    match &comparison {
        Some(c) => print!("{}", c.render()),
        None => {
            let r = &reports[0];
            println!("{}: n={} mean={:.2} ms std={:.2} ms", r.label, r.n, r.mean_ms, r.std_ms);
        }
    }
    let output = BenchOutput {
        size,
        backend: backend.descriptor().id,
        reports,
        comparison,
    };
    std::fs::write(out, serde_json::to_vec_pretty(&output)?).with_context(|| out.display().to_string())?;
    eprintln!("report written to {}", out.display());
    Ok(())
}

fn serve_cmd(
    db_path: &Path,
    host: &str,
    port: u16,
    backend: Option<BackendKind>,
    run_dir: RunDir,
    job_cap: usize,
) -> Result<()> {
    let db = load_database(db_path)?;
    for w in db.count_warnings() {
        tracing::info!("{w}");
    }
    let settings = SettingsStore::open(run_dir.settings_file(), Settings::default())?;
    let mut patch = serde_json::json!({});
    if let Some(kind) = backend {
        patch["backend"]["kind"] = serde_json::to_value(kind)?;
    }
    if std::env::var_os(exprforge_core::backends::ENV_BACKEND_URL).is_some()
        || std::env::var_os(exprforge_core::backends::ENV_BACKEND_TIMEOUT).is_some()
    {
        let http = settings.get().backend.http.clone().with_env_overrides();
        patch["backend"]["http"] = serde_json::to_value(http)?;
    }
    settings.update(&patch)?;
    let jobs = JobStore::open(run_dir.jobs_dir(), job_cap)?;
    let llm = OpenAiCompatibleClient::from_env().map(|c| Arc::new(c) as Arc<_>);
    let state = Arc::new(AppState::new(db, settings, jobs, llm));
    let addr: SocketAddr = format!("{host}:{port}").parse().context("bad --host/--port")?;
    tokio::runtime::Runtime::new()?.block_on(exprforge_service::serve(addr, state))?;
    Ok(())
}
