//! Command-line front end. [`run`] parses arguments and returns the process
//! exit code: 0 on success, 2 for usage, configuration or format errors, 3
//! when a fit aborts on a non-finite value.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::Error;
use crate::io::{
    export_loss_csv, export_pgm, load_dataset, load_model, save_dataset, save_model, write_atomic,
    PgmScale, MODEL_FORMAT_VERSION, TENSOR_FORMAT_VERSION,
};
use crate::model::{
    param_count, reconstruct, stratum_losses, EarlyStop, FitConfig, ModelState, StrataRanks,
    StratifiedDataset,
};
use crate::solver::{fit_with, relative_loss, IterationRecord, Progress};
use crate::synth::{
    apply_block_watermark, generate_glyphs, generate_planted, salt_and_pepper, FactorDistribution,
    GlyphSpec, PlantedSpec, Watermark,
};
use crate::tensor::{outer_product, DenseTensor};
use crate::tv::Normalization;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "strat-ntf", version, about = "Stratified non-negative tensor factorization")]
pub struct Cli {
    /// Worker threads (default: all available cores).
    #[arg(long, global = true, env = "STRAT_NTF_THREADS")]
    pub threads: Option<usize>,

    /// Suppress progress output.
    #[arg(long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to the strata listed in a manifest.
    Fit {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a synthetic dataset from a spec file.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Report objective, per-stratum losses and parameter count.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Render factors or reconstructions as PGM images or top-k reports.
    Export {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        what: ExportWhat,
        /// Comma list of topics, strata, or `stratum:sample` pairs.
        #[arg(long)]
        indices: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        top: usize,
        #[arg(long, value_enum, default_value_t = ExportFormat::Auto)]
        format: ExportFormat,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportWhat {
    Topics,
    Strata,
    Reconstruction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    /// PGM when there are exactly two trailing modes, top-k otherwise.
    Auto,
    Pgm,
    Topk,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Numeric(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Runs the CLI with process stdout/stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut { stdout }, &mut { stderr })
}

pub fn run_with<I, T>(args: I, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if code == EXIT_OK {
                write!(out, "{e}")
            } else {
                write!(err, "{e}")
            };
            return code;
        }
    };
    let threads = cli.threads.unwrap_or(0);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: cannot start {threads} worker threads: {e}");
            return EXIT_USAGE;
        }
    };
    let result = pool.install(|| dispatch(&cli, out, err));
    match result {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Numeric(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_NUMERIC
        }
    }
}

fn dispatch(cli: &Cli, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> CliResult<()> {
    match &cli.command {
        Command::Fit {
            manifest,
            config,
            out: dir,
            seed,
        } => cmd_fit(manifest, config, dir, *seed, cli.quiet, out, err),
        Command::Synth {
            config,
            out: dir,
            seed,
        } => cmd_synth(config, dir, *seed, cli.quiet, out),
        Command::Eval { model, manifest } => cmd_eval(model, manifest, out),
        Command::Export {
            model,
            what,
            indices,
            out: dir,
            top,
            format,
        } => cmd_export(model, *what, indices.as_deref(), dir, *top, *format, cli.quiet, out),
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))
}

/// Parses `key=value` lines. Blank lines and `#` comments are skipped; keys in
/// `repeatable` may appear more than once.
fn parse_key_values(
    text: &str,
    allowed: &[&str],
    repeatable: &[&str],
) -> CliResult<BTreeMap<String, Vec<String>>> {
    let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("line {}: expected key=value, got {line:?}", no + 1)))?;
        let key = key.trim();
        if !allowed.contains(&key) {
            return Err(usage(format!("line {}: unknown key {key:?}", no + 1)));
        }
        let entry = map.entry(key.to_string()).or_default();
        if !entry.is_empty() && !repeatable.contains(&key) {
            return Err(usage(format!("line {}: duplicate key {key:?}", no + 1)));
        }
        entry.push(value.trim().to_string());
    }
    Ok(map)
}

fn parse_num<T: std::str::FromStr>(key: &str, s: &str) -> CliResult<T> {
    s.trim()
        .parse()
        .map_err(|_| usage(format!("{key}: cannot parse {s:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, s: &str) -> CliResult<Vec<T>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|p| parse_num(key, p)).collect()
}

const RUN_CONFIG_KEYS: &[&str] = &[
    "topic_rank",
    "strata_rank",
    "iterations",
    "strata_sweeps",
    "lambda",
    "regularized_modes",
    "seed",
    "clip_floor",
    "normalization",
    "early_stop",
];

/// Parses a run configuration. `topic_rank` and `strata_rank` are required;
/// every other key has a default.
pub fn parse_run_config(text: &str) -> Result<FitConfig, String> {
    parse_run_config_inner(text).map_err(|e| match e {
        CliError::Usage(m) | CliError::Numeric(m) => m,
    })
}

fn parse_run_config_inner(text: &str) -> CliResult<FitConfig> {
    let map = parse_key_values(text, RUN_CONFIG_KEYS, &[])?;
    let get = |k: &str| map.get(k).map(|v| v[0].as_str());
    let topic_rank = parse_num("topic_rank", get("topic_rank").ok_or_else(|| usage("missing topic_rank"))?)?;
    let strata_rank = get("strata_rank").ok_or_else(|| usage("missing strata_rank"))?;
    let strata_ranks = if strata_rank.contains(',') {
        StrataRanks::PerStratum(parse_list("strata_rank", strata_rank.trim_end_matches(','))?)
    } else {
        StrataRanks::Uniform(parse_num("strata_rank", strata_rank)?)
    };
    let mut cfg = FitConfig::new(topic_rank, strata_ranks);
    if let Some(v) = get("iterations") {
        cfg.iterations = parse_num("iterations", v)?;
    }
    if let Some(v) = get("strata_sweeps") {
        cfg.strata_sweeps = parse_num("strata_sweeps", v)?;
    }
    if let Some(v) = get("lambda") {
        cfg.reg_strength = parse_num("lambda", v)?;
    }
    if let Some(v) = get("regularized_modes") {
        cfg.regularized_modes = Some(parse_list("regularized_modes", v)?);
    }
    if let Some(v) = get("seed") {
        cfg.seed = parse_num("seed", v)?;
    }
    if let Some(v) = get("clip_floor") {
        cfg.clip_floor = parse_num("clip_floor", v)?;
    }
    if let Some(v) = get("normalization") {
        cfg.normalization = v.parse::<Normalization>()?;
    }
    if let Some(v) = get("early_stop") {
        if v != "off" {
            let (tol, patience) = v
                .split_once(',')
                .ok_or_else(|| usage("early_stop must be off or rel_tol,patience"))?;
            cfg.early_stop = Some(EarlyStop {
                rel_tol: parse_num("early_stop", tol)?,
                patience: parse_num("early_stop", patience)?,
            });
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The configuration as a run-config file that reproduces it exactly.
pub fn format_run_config(cfg: &FitConfig) -> String {
    let mut s = String::new();
    writeln!(s, "topic_rank={}", cfg.topic_rank).unwrap();
    match &cfg.strata_ranks {
        StrataRanks::Uniform(r) => writeln!(s, "strata_rank={r}").unwrap(),
        StrataRanks::PerStratum(v) => {
            let list: Vec<String> = v.iter().map(ToString::to_string).collect();
            // A single per-stratum value needs the trailing comma to stay a list.
            let sep = if v.len() == 1 { "," } else { "" };
            writeln!(s, "strata_rank={}{sep}", list.join(",")).unwrap()
        }
    }
    writeln!(s, "iterations={}", cfg.iterations).unwrap();
    writeln!(s, "strata_sweeps={}", cfg.strata_sweeps).unwrap();
    writeln!(s, "lambda={:?}", cfg.reg_strength).unwrap();
    if let Some(m) = &cfg.regularized_modes {
        let list: Vec<String> = m.iter().map(ToString::to_string).collect();
        writeln!(s, "regularized_modes={}", list.join(",")).unwrap();
    }
    writeln!(s, "seed={}", cfg.seed).unwrap();
    writeln!(s, "clip_floor={:?}", cfg.clip_floor).unwrap();
    writeln!(s, "normalization={}", cfg.normalization.name()).unwrap();
    match cfg.early_stop {
        None => writeln!(s, "early_stop=off").unwrap(),
        Some(es) => writeln!(s, "early_stop={:?},{}", es.rel_tol, es.patience).unwrap(),
    }
    s
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit(
    manifest: &Path,
    config: &Path,
    dir: &Path,
    seed: Option<u64>,
    quiet: bool,
    out: &mut (dyn Write + Send),
    err: &mut (dyn Write + Send),
) -> CliResult<()> {
    let mut cfg = parse_run_config_inner(&read_text(config)?)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dataset = load_dataset(manifest)?;
    let ranks = cfg.resolve(&dataset)?;
    create_dir(dir)?;

    let every = (cfg.iterations / 10).max(1);
    let start = Instant::now();
    let mut progress = Progress(|r: &IterationRecord| {
        if !quiet && (r.iteration.is_multiple_of(every) || r.iteration == cfg.iterations) {
            let _ = writeln!(err, "iter {:>6}  objective {:.6e}  {:.2}s", r.iteration, r.objective, r.seconds);
        }
    });
    let result = match fit_with(&dataset, &cfg, &mut progress) {
        Ok(r) => r,
        Err(Error::NonFinite { iteration, state }) => {
            let dump = dir.join("nonfinite_state.sntm");
            let saved = save_model(&dump, &state);
            let where_ = match saved {
                Ok(()) => format!("state dumped to {}", dump.display()),
                Err(e) => format!("state dump failed: {e}"),
            };
            return Err(CliError::Numeric(format!(
                "non-finite objective at iteration {iteration}; {where_}"
            )));
        }
        Err(e) => return Err(e.into()),
    };
    let wall = start.elapsed().as_secs_f64();

    save_model(dir.join("model.sntm"), &result.model)?;
    export_loss_csv(&result.trace, dir.join("loss.csv"))?;
    write_atomic(&dir.join("config.txt"), format_run_config(&cfg).as_bytes())?;

    let final_obj = result.trace.last_objective().unwrap_or(f64::NAN);
    let rel = relative_loss(&result, &dataset).ok();
    let mut meta = String::from("# strat-ntf run metadata\n");
    writeln!(meta, "manifest={}", manifest.display()).unwrap();
    writeln!(meta, "config_file={}", config.display()).unwrap();
    writeln!(meta, "resolved_config=config.txt").unwrap();
    writeln!(meta, "seed={}", cfg.seed).unwrap();
    writeln!(meta, "strata_ranks={}", ranks.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")).unwrap();
    writeln!(meta, "regularized_modes={}", regularized_list(&cfg, dataset.ndim())).unwrap();
    writeln!(meta, "normalization={}", cfg.normalization.name()).unwrap();
    writeln!(meta, "tensor_format_version={TENSOR_FORMAT_VERSION}").unwrap();
    writeln!(meta, "model_format_version={MODEL_FORMAT_VERSION}").unwrap();
    writeln!(meta, "crate_version={}", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(meta, "strata={}", dataset.num_strata()).unwrap();
    writeln!(meta, "param_count={}", result.model.param_count()).unwrap();
    writeln!(meta, "iterations_run={}", result.trace.len() - 1).unwrap();
    writeln!(meta, "termination={}", result.termination.name()).unwrap();
    writeln!(meta, "final_objective={final_obj:.16e}").unwrap();
    if let Some(r) = rel {
        writeln!(meta, "relative_loss={r:.16e}").unwrap();
    }
    writeln!(
        meta,
        "monotonicity_violations={}",
        result.monotonicity_violations.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
    )
    .unwrap();
    writeln!(meta, "threads={}", rayon::current_num_threads()).unwrap();
    writeln!(meta, "wall_seconds={wall:.6}").unwrap();
    write_atomic(&dir.join("run.txt"), meta.as_bytes())?;

    if !result.monotonicity_violations.is_empty() && !quiet {
        let _ = writeln!(
            err,
            "warning: objective increased at iterations {:?}",
            result.monotonicity_violations
        );
    }
    if !quiet {
        let _ = writeln!(out, "final objective {final_obj:.6e}");
        if let Some(r) = rel {
            let _ = writeln!(out, "relative loss {r:.6e}");
        }
        let _ = writeln!(out, "wrote {}", dir.display());
    }
    Ok(())
}

fn regularized_list(cfg: &FitConfig, ndim: usize) -> String {
    if cfg.reg_strength == 0.0 {
        return String::new();
    }
    (1..ndim)
        .filter(|&m| cfg.is_regularized(m))
        .map(|m| m.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

const SYNTH_KEYS: &[&str] = &[
    "kind",
    "seed",
    "samples",
    "dims",
    "topic_rank",
    "strata_rank",
    "density",
    "noise",
    "image_size",
    "stratum",
    "samples_per_class",
    "salt_pepper",
    "watermark",
];

/// `stratum:lo..hi,lo..hi[:value]`
fn parse_watermark(s: &str) -> CliResult<Watermark> {
    let bad = || usage(format!("watermark {s:?}: expected stratum:lo..hi,lo..hi[:value]"));
    let mut parts = s.split(':');
    let stratum = parts.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
    let region = parts
        .next()
        .ok_or_else(bad)?
        .split(',')
        .map(|r| {
            let (lo, hi) = r.trim().split_once("..").ok_or_else(bad)?;
            let lo: usize = lo.parse().map_err(|_| bad())?;
            let hi: usize = hi.parse().map_err(|_| bad())?;
            Ok(lo..hi)
        })
        .collect::<CliResult<Vec<Range<usize>>>>()?;
    let value = match parts.next() {
        Some(v) => v.trim().parse().map_err(|_| bad())?,
        None => 1.0,
    };
    if parts.next().is_some() {
        return Err(bad());
    }
    Ok(Watermark {
        stratum,
        region,
        value,
    })
}

fn cmd_synth(
    config: &Path,
    dir: &Path,
    seed: Option<u64>,
    quiet: bool,
    out: &mut (dyn Write + Send),
) -> CliResult<()> {
    let map = parse_key_values(&read_text(config)?, SYNTH_KEYS, &["stratum", "watermark"])?;
    let get = |k: &str| map.get(k).map(|v| v[0].as_str());
    let seed = match seed {
        Some(s) => s,
        None => get("seed").map(|v| parse_num("seed", v)).transpose()?.unwrap_or(0),
    };
    let watermarks = map
        .get("watermark")
        .map(|v| v.iter().map(|w| parse_watermark(w)).collect::<CliResult<Vec<_>>>())
        .transpose()?
        .unwrap_or_default();
    let salt_pepper = get("salt_pepper").map(|v| parse_num::<f64>("salt_pepper", v)).transpose()?;
    if let Some(p) = salt_pepper {
        if !(0.0..=0.5).contains(&p) {
            return Err(usage(format!("salt_pepper {p} outside [0, 0.5]")));
        }
    }
    let kind = get("kind").unwrap_or("planted");
    let require = |k: &str| get(k).ok_or_else(|| usage(format!("{kind} spec needs {k}")));

    let (dataset, truth) = match kind {
        "planted" => {
            for k in ["image_size", "stratum", "samples_per_class"] {
                if map.contains_key(k) {
                    return Err(usage(format!("key {k} does not apply to planted specs")));
                }
            }
            let samples: Vec<usize> = parse_list("samples", require("samples")?)?;
            let rank_text = require("strata_rank")?;
            let strata_ranks = if rank_text.contains(',') {
                parse_list("strata_rank", rank_text)?
            } else {
                vec![parse_num("strata_rank", rank_text)?; samples.len()]
            };
            let distribution = match get("density") {
                None => FactorDistribution::Uniform,
                Some(d) => FactorDistribution::SparseUniform {
                    density: parse_num("density", d)?,
                },
            };
            let spec = PlantedSpec {
                sample_counts: samples,
                trailing_dims: parse_list("dims", require("dims")?)?,
                topic_rank: parse_num("topic_rank", require("topic_rank")?)?,
                strata_ranks,
                distribution,
                noise: get("noise").map(|v| parse_num("noise", v)).transpose()?.unwrap_or(0.0),
                seed,
            };
            let (ds, truth) = generate_planted(&spec)?;
            let mut strata = ds.into_strata();
            let corrupted = !watermarks.is_empty() || salt_pepper.is_some();
            for w in &watermarks {
                let t = strata
                    .get_mut(w.stratum)
                    .ok_or_else(|| usage(format!("watermark targets missing stratum {}", w.stratum)))?;
                let mut region = vec![0..t.shape()[0]];
                region.extend(w.region.iter().cloned());
                *t = apply_block_watermark(t, &region, w.value)?;
            }
            if let Some(p) = salt_pepper {
                for (i, t) in strata.iter_mut().enumerate() {
                    *t = salt_and_pepper(t, p, seed.wrapping_add(i as u64 + 1))?;
                }
            }
            if corrupted && !quiet {
                let _ = writeln!(out, "note: corruption applied; truth.sntm no longer fits exactly");
            }
            (StratifiedDataset::new(strata)?, Some(truth))
        }
        "glyphs" => {
            for k in ["samples", "dims", "topic_rank", "strata_rank", "density", "noise"] {
                if map.contains_key(k) {
                    return Err(usage(format!("key {k} does not apply to glyph specs")));
                }
            }
            let strata_classes = map
                .get("stratum")
                .ok_or_else(|| usage("glyph spec needs at least one stratum= line"))?
                .iter()
                .map(|s| parse_list::<usize>("stratum", s))
                .collect::<CliResult<Vec<_>>>()?;
            let spec = GlyphSpec {
                image_size: parse_num("image_size", require("image_size")?)?,
                strata_classes,
                samples_per_class: parse_num("samples_per_class", require("samples_per_class")?)?,
                watermarks,
                salt_pepper,
                seed,
            };
            (generate_glyphs(&spec)?, None)
        }
        other => return Err(usage(format!("unknown kind {other:?} (expected planted or glyphs)"))),
    };

    create_dir(dir)?;
    let manifest = dir.join("manifest.txt");
    save_dataset(&manifest, &dataset)?;
    if let Some(t) = &truth {
        save_model(dir.join("truth.sntm"), t)?;
    }
    if !quiet {
        let _ = writeln!(
            out,
            "wrote {} strata ({:?} samples, trailing dims {:?}) to {}",
            dataset.num_strata(),
            dataset.sample_counts(),
            dataset.trailing_dims(),
            manifest.display()
        );
    }
    Ok(())
}

fn cmd_eval(model_path: &Path, manifest: &Path, out: &mut (dyn Write + Send)) -> CliResult<()> {
    let model = load_model(model_path)?;
    let dataset = load_dataset(manifest)?;
    let losses = stratum_losses(&model, &dataset)?;
    let total: f64 = losses.iter().sum();
    let norm = dataset.sq_norm();
    let params = param_count(
        &model.sample_counts(),
        &model.trailing_dims(),
        model.topic_rank(),
        &model.strata_ranks(),
    )?;
    let mut s = String::new();
    writeln!(s, "objective {total:.16e}").unwrap();
    if norm > 0.0 {
        writeln!(s, "relative_loss {:.16e}", total / norm).unwrap();
    } else {
        writeln!(s, "relative_loss undefined (all-zero data)").unwrap();
    }
    for (i, l) in losses.iter().enumerate() {
        writeln!(s, "stratum {i} loss {l:.16e}").unwrap();
    }
    writeln!(s, "parameters {params}").unwrap();
    out.write_all(s.as_bytes())
        .map_err(|e| usage(format!("cannot write output: {e}")))?;
    Ok(())
}

/// Indices of the `k` largest entries, descending, ties by ascending index.
pub fn top_k(v: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<(usize, f64)> = v.iter().copied().enumerate().collect();
    idx.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    idx.truncate(k);
    idx
}

fn parse_index_list(s: Option<&str>, bound: usize, what: &str) -> CliResult<Vec<usize>> {
    let Some(s) = s else {
        return Ok((0..bound).collect());
    };
    let list: Vec<usize> = parse_list("indices", s)?;
    if let Some(bad) = list.iter().find(|&&i| i >= bound) {
        return Err(usage(format!("{what} index {bad} out of range (have {bound})")));
    }
    Ok(list)
}

fn format_topk(label: &str, factors: &[Vec<f64>], k: usize, report: &mut String) {
    for (m, v) in factors.iter().enumerate() {
        let items: Vec<String> = top_k(v, k)
            .iter()
            .map(|(i, x)| format!("{i}:{x:.6e}"))
            .collect();
        writeln!(report, "{label} mode {} {}", m + 1, items.join(" ")).unwrap();
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_export(
    model_path: &Path,
    what: ExportWhat,
    indices: Option<&str>,
    dir: &Path,
    top: usize,
    format: ExportFormat,
    quiet: bool,
    out: &mut (dyn Write + Send),
) -> CliResult<()> {
    let model = load_model(model_path)?;
    let image = model.trailing_dims().len() == 2;
    let as_pgm = match format {
        ExportFormat::Auto => image,
        ExportFormat::Pgm if !image => {
            return Err(usage("PGM export needs exactly two trailing modes"))
        }
        ExportFormat::Pgm => true,
        ExportFormat::Topk => false,
    };
    create_dir(dir)?;
    let mut written: Vec<PathBuf> = Vec::new();
    let mut report = String::new();
    match what {
        ExportWhat::Topics => {
            for l in parse_index_list(indices, model.topic_rank(), "topic")? {
                let topic = &model.topics[l];
                if as_pgm {
                    let path = dir.join(format!("topic_{l}.pgm"));
                    export_pgm(&outer_product(topic)?, &path, PgmScale::Auto)?;
                    written.push(path);
                } else {
                    format_topk(&format!("topic {l}"), topic, top, &mut report);
                }
            }
        }
        ExportWhat::Strata => {
            for i in parse_index_list(indices, model.num_strata(), "stratum")? {
                for (j, comp) in model.strata[i].iter().enumerate() {
                    if as_pgm {
                        let path = dir.join(format!("strata_{i}_{j}.pgm"));
                        export_pgm(&outer_product(comp)?, &path, PgmScale::Auto)?;
                        written.push(path);
                    } else {
                        format_topk(&format!("stratum {i} feature {j}"), comp, top, &mut report);
                    }
                }
            }
        }
        ExportWhat::Reconstruction => {
            if !as_pgm {
                return Err(usage("reconstruction export writes images and needs two trailing modes"));
            }
            let pairs = match indices {
                None => (0..model.num_strata()).map(|i| (i, 0)).collect(),
                Some(s) => parse_pairs(s, &model)?,
            };
            for (i, j) in pairs {
                let slice = reconstruct(&model, i)?.first_mode_slice(j)?;
                let path = dir.join(format!("recon_{i}_{j}.pgm"));
                export_pgm(&slice, &path, PgmScale::Auto)?;
                written.push(path);
            }
        }
    }
    if !report.is_empty() {
        let name = match what {
            ExportWhat::Topics => "topics_topk.txt",
            _ => "strata_topk.txt",
        };
        let path = dir.join(name);
        write_atomic(&path, report.as_bytes())?;
        written.push(path);
    }
    if !quiet {
        for p in &written {
            let _ = writeln!(out, "wrote {}", p.display());
        }
    }
    Ok(())
}

fn parse_pairs(s: &str, model: &ModelState) -> CliResult<Vec<(usize, usize)>> {
    let samples = model.sample_counts();
    s.split(',')
        .map(|p| {
            let (i, j) = p
                .trim()
                .split_once(':')
                .ok_or_else(|| usage(format!("expected stratum:sample, got {p:?}")))?;
            let i: usize = parse_num("indices", i)?;
            let j: usize = parse_num("indices", j)?;
            if i >= samples.len() || j >= samples[i] {
                return Err(usage(format!("reconstruction index {i}:{j} out of range")));
            }
            Ok((i, j))
        })
        .collect()
}

/// Renders the reconstruction slice exactly as `export --what reconstruction` does.
pub fn reconstruction_slice(model: &ModelState, stratum: usize, sample: usize) -> crate::Result<DenseTensor> {
    reconstruct(model, stratum)?.first_mode_slice(sample)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_defaults_and_rejections() {
        let cfg = parse_run_config("topic_rank=4\nstrata_rank=2\n# comment\n").unwrap();
        assert_eq!(cfg.strata_sweeps, 2);
        assert_eq!(cfg.reg_strength, 0.0);
        assert_eq!(cfg.normalization, Normalization::L2);
        assert_eq!(cfg.early_stop, None);
        assert_eq!(cfg.clip_floor, f64::EPSILON);
        assert!(parse_run_config("topic_rank=4\nstrata_rank=2\nbogus=1").is_err());
        assert!(parse_run_config("strata_rank=2").is_err());
        assert!(parse_run_config("topic_rank=4\ntopic_rank=5\nstrata_rank=1").is_err());
        let err = parse_run_config("topic_rank=4\nstrata_rank=1\nlambda=10\nregularized_modes=").unwrap_err();
        assert!(err.contains("regularized"), "{err}");
        let cfg = parse_run_config("topic_rank=1\nstrata_rank=1,0,2\nearly_stop=1e-6,5\nnormalization=l1").unwrap();
        assert_eq!(cfg.strata_ranks, StrataRanks::PerStratum(vec![1, 0, 2]));
        assert_eq!(cfg.early_stop, Some(EarlyStop { rel_tol: 1e-6, patience: 5 }));
        assert_eq!(cfg.normalization, Normalization::L1);
    }

    #[test]
    fn run_config_echo_round_trips() {
        let mut cfg = parse_run_config("topic_rank=3\nstrata_rank=4,\nlambda=0.1\nregularized_modes=1,2").unwrap();
        cfg.clip_floor = 1e-12;
        cfg.seed = u64::MAX;
        cfg.early_stop = Some(EarlyStop { rel_tol: 0.3, patience: 2 });
        assert_eq!(parse_run_config(&format_run_config(&cfg)).unwrap(), cfg);
    }

    #[test]
    fn top_k_breaks_ties_by_index() {
        let picks: Vec<usize> = top_k(&[0.1, 0.9, 0.5, 0.9], 3).iter().map(|p| p.0).collect();
        assert_eq!(picks, vec![1, 3, 2]);
        assert_eq!(top_k(&[1.0], 3).len(), 1);
    }

    #[test]
    fn watermark_directive_parsing() {
        let w = parse_watermark("1:0..3,2..14:0.5").unwrap();
        assert_eq!(w.stratum, 1);
        assert_eq!(w.region, vec![0..3, 2..14]);
        assert_eq!(w.value, 0.5);
        assert_eq!(parse_watermark("0:1..2,1..2").unwrap().value, 1.0);
        assert!(parse_watermark("0:1-2").is_err());
    }
}
