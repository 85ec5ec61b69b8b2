//! `skexcraft`: corpus generation, tokenization, training, sampling,
//! latent exploration, evaluation and the HTTP API.

mod config;

use std::fs;
use std::io::Read;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use skexcraft_core::dataset::{dedup, generate_corpus, read_corpus, split, write_corpus, write_models, CorpusSpec};
use skexcraft_core::geom::{csg_surface_sample, export_obj, export_svg, SampleConfig, DEFAULT_CHORD_TOL, P3};
use skexcraft_core::metrics::{normalize_unit_cube, report, EvalInput};
use skexcraft_core::seq::{canonicalize, parse, validate, views, CadModel, Views};
use skexcraft_model::{train_branch, train_selector, BranchKind, BranchSample, Condition, Decoded, Given, Sampling, SkexGen, TrainEvent};
use skexcraft_serve::{model_mesh, view_decoded, AppState, ResultView};

use crate::config::{resolve, Preset};

#[derive(Parser, Debug)]
#[command(name = "skexcraft", version, about = "Sketch-and-extrude CAD generation with disentangled codebooks")]
struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus with train/val/test splits.
    GenData(GenData),
    /// Check models against the grammar rules.
    Validate(InputArg),
    /// Model JSON to token text, or token text back to model JSON.
    Tokenize(InputArg),
    /// Write one SVG per sketch and an OBJ mesh.
    Render(Render),
    /// Train both branches and the selectors, or one of them.
    Train(Train),
    /// Draw models from a checkpoint.
    Sample(Sample),
    /// Decode blends of two models' latent codes.
    Interpolate(Interpolate),
    /// Decode a tuple mixing code groups of two models.
    Mix(Mix),
    /// COV, MMD, JSD, Unique and Novel of a generated set.
    Eval(Eval),
    /// HTTP JSON API over a checkpoint.
    Serve(Serve),
}

#[derive(Args, Debug)]
struct InputArg {
    /// Model JSON, NDJSON, or token text; `-` reads stdin.
    input: PathBuf,
}

#[derive(Args, Debug)]
struct GenData {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    /// Corpus spec JSON; `--n` and `--seed` override its size and seed.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Render {
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CHORD_TOL)]
    chord_tol: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TrainTarget {
    All,
    Sketch,
    Extrude,
    Selector,
}

#[derive(Args, Debug)]
struct Train {
    /// Corpus directory or NDJSON file.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint directory; single-branch runs update it in place.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = TrainTarget::All)]
    branch: TrainTarget,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Preset::Toy)]
    preset: Preset,
    /// `key = value` file with `model.` and `train.` keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `train.epochs=50`.
    #[arg(long = "set")]
    sets: Vec<String>,
    /// Log every n-th epoch to stderr; 0 is silent.
    #[arg(long, default_value_t = 10)]
    log_every: usize,
}

#[derive(Args, Debug)]
struct Sample {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.9)]
    nucleus_p: f64,
    /// JSON object with any of `topology`, `geometry`, `extrude` index lists.
    #[arg(long)]
    condition: Option<String>,
    /// Redraws per sample when a draw is invalid.
    #[arg(long, default_value_t = 0)]
    retries: usize,
    /// Directory receiving `corpus.ndjson` of the valid samples.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Interpolate {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = 5)]
    steps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CHORD_TOL)]
    chord_tol: f64,
}

#[derive(Args, Debug)]
struct Mix {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Groups taken from A: any of `t`, `g`, `e`, or `all` / `none`.
    #[arg(long)]
    take: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CHORD_TOL)]
    chord_tol: f64,
}

#[derive(Args, Debug)]
struct Eval {
    #[arg(long)]
    gen: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    points: usize,
    /// Occupancy grid resolution for JSD.
    #[arg(long, default_value_t = 28)]
    grid: usize,
    #[arg(long, default_value_t = DEFAULT_CHORD_TOL)]
    chord_tol: f64,
    /// Total generation attempts, when more than the valid models in `--gen`.
    #[arg(long)]
    attempts: Option<usize>,
}

#[derive(Args, Debug)]
struct Serve {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    #[arg(long, default_value_t = 1e-2)]
    chord_tol: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let json = cli.json;
    match &cli.command {
        Command::GenData(a) => gen_data(a, json),
        Command::Validate(a) => validate_cmd(&a.input, json),
        Command::Tokenize(a) => tokenize(&a.input, json),
        Command::Render(a) => render(a, json),
        Command::Train(a) => train(a, json),
        Command::Sample(a) => sample(a, json),
        Command::Interpolate(a) => interpolate(a, json),
        Command::Mix(a) => mix(a, json),
        Command::Eval(a) => eval(a, json),
        Command::Serve(a) => serve(a),
    }
}

/// Worker cap from `SKEXCRAFT_THREADS`, else the available parallelism.
fn threads() -> usize {
    std::env::var("SKEXCRAFT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    if path.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        return Ok(s);
    }
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

enum Input {
    Models(Vec<CadModel>),
    Tokens(Views),
}

fn read_input(path: &Path) -> Result<Input> {
    let text = read_text(path)?;
    let trimmed = text.trim_start();
    if ["TOPO:", "GEOM:", "EXT:"].iter().any(|p| trimmed.starts_with(p)) {
        return Ok(Input::Tokens(Views::from_text(&text)?));
    }
    if let Ok(m) = serde_json::from_str::<CadModel>(&text) {
        return Ok(Input::Models(vec![m]));
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        out.push(CadModel::from_json(line).with_context(|| format!("{} line {}", path.display(), i + 1))?);
    }
    if out.is_empty() {
        bail!("{} holds no models", path.display());
    }
    Ok(Input::Models(out))
}

fn read_models(path: &Path) -> Result<Vec<CadModel>> {
    match read_input(path)? {
        Input::Models(m) => Ok(m),
        Input::Tokens(v) => Ok(vec![parse(&v.geometry, &v.extrude)?]),
    }
}

fn read_one(path: &Path) -> Result<CadModel> {
    let mut m = read_models(path)?;
    if m.len() != 1 {
        bail!("{} holds {} models, expected one", path.display(), m.len());
    }
    Ok(m.remove(0))
}

fn load_ckpt(dir: &Path) -> Result<SkexGen> {
    SkexGen::load(dir).with_context(|| format!("loading checkpoint {}", dir.display()))
}

fn gen_data(a: &GenData, json: bool) -> Result<()> {
    let mut spec = match &a.config {
        Some(p) => serde_json::from_str::<CorpusSpec>(&read_text(p)?).with_context(|| format!("corpus spec {}", p.display()))?,
        None => CorpusSpec::default(),
    };
    spec.size = a.n;
    spec.seed = a.seed;
    let models = dedup(&generate_corpus(&spec)?);
    write_corpus(&a.out, &spec, &models)?;
    let parts = split(&models, [0.90, 0.05, 0.05], a.seed);
    for (name, part) in [("train", &parts.train), ("val", &parts.val), ("test", &parts.test)] {
        write_corpus(&a.out.join(name), &spec, part)?;
    }
    let summary = json!({
        "out": a.out,
        "generated": spec.size,
        "unique": models.len(),
        "train": parts.train.len(),
        "val": parts.val.len(),
        "test": parts.test.len(),
    });
    if json {
        print_json(&summary)
    } else {
        println!(
            "{} models ({} unique) -> {}: train {}, val {}, test {}",
            spec.size,
            models.len(),
            a.out.display(),
            parts.train.len(),
            parts.val.len(),
            parts.test.len()
        );
        Ok(())
    }
}

fn validate_cmd(path: &Path, json: bool) -> Result<()> {
    let models = read_models(path)?;
    let reports: Vec<_> = models.iter().map(validate).collect();
    if json {
        let out: Vec<_> = reports.iter().map(|d| json!({ "valid": d.is_empty(), "diagnostics": d })).collect();
        print_json(&out)?;
    } else {
        for (i, d) in reports.iter().enumerate() {
            if d.is_empty() {
                println!("model {i}: ok");
            }
            for diag in d {
                println!("model {i}: {diag}");
            }
        }
    }
    let bad: Vec<_> = reports.iter().flatten().collect();
    if let Some(first) = bad.first() {
        let invalid = reports.iter().filter(|d| !d.is_empty()).count();
        bail!("{invalid} of {} models invalid; first violation {} at {}", models.len(), first.rule, first.path);
    }
    Ok(())
}

fn tokenize(path: &Path, json: bool) -> Result<()> {
    match read_input(path)? {
        Input::Tokens(v) => {
            let m = parse(&v.geometry, &v.extrude)?;
            println!("{}", m.to_json());
        }
        Input::Models(models) => {
            for m in &models {
                let v = views(m)?;
                if json {
                    print_json(&json!({
                        "topology": v.topology.classes,
                        "geometry": v.geometry.classes,
                        "extrude": v.extrude.classes,
                    }))?;
                } else {
                    print!("{}", v.to_text());
                }
            }
        }
    }
    Ok(())
}

/// Writes `sketch_{i}.svg` per sketch and `model.obj`; returns the paths.
fn write_renders(dir: &Path, model: &CadModel, chord_tol: f64) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (i, s) in model.steps.iter().enumerate() {
        let p = dir.join(format!("sketch_{i}.svg"));
        fs::write(&p, export_svg(&s.sketch))?;
        paths.push(p);
    }
    let mesh = model_mesh(model, chord_tol).context("model does not extrude to a mesh")?;
    let p = dir.join("model.obj");
    fs::write(&p, export_obj(&mesh))?;
    paths.push(p);
    Ok(paths)
}

fn render(a: &Render, json: bool) -> Result<()> {
    let model = read_one(&a.input)?;
    if let Some(d) = validate(&model).first() {
        bail!("cannot render an invalid model: {d}");
    }
    let paths = write_renders(&a.out, &model, a.chord_tol)?;
    if json {
        print_json(&json!({ "files": paths }))
    } else {
        paths.iter().for_each(|p| println!("{}", p.display()));
        Ok(())
    }
}

fn train(a: &Train, json: bool) -> Result<()> {
    let cfg = resolve(a.preset, a.config.as_deref(), &a.sets, a.seed)?;
    let models: Vec<CadModel> = read_corpus(&a.data)?.iter().map(canonicalize).collect();
    if models.is_empty() {
        bail!("{} holds no models", a.data.display());
    }
    let every = a.log_every;
    let logged = |epoch: usize| every > 0 && (epoch + 1) % every == 0;
    let mut finals = serde_json::Map::new();
    let mut log = |e: TrainEvent<'_>| match e {
        TrainEvent::Branch(kind, s) => {
            if logged(s.epoch) {
                eprintln!("{} epoch {} loss {:.4} acc {:.4}", kind.name(), s.epoch + 1, s.loss, s.accuracy);
            }
            finals.insert(kind.name().into(), serde_json::to_value(s).expect("stats serialize"));
        }
        TrainEvent::Selector(given, s) => {
            if logged(s.epoch) {
                eprintln!("selector {} epoch {} loss {:.4} acc {:.4}", given.name(), s.epoch + 1, s.loss, s.accuracy);
            }
            finals.insert(format!("selector_{}", given.name()), serde_json::to_value(s).expect("stats serialize"));
        }
    };
    let existing = a.out.join("manifest.json").exists();
    let model = match a.branch {
        TrainTarget::All => SkexGen::train(&models, cfg.model, &cfg.train, log)?,
        target => {
            let mut m = if existing {
                if cfg.model_overridden {
                    bail!("model.* keys cannot change an existing checkpoint in {}", a.out.display());
                }
                load_ckpt(&a.out)?
            } else if target == TrainTarget::Selector {
                bail!("selector training needs trained branches in {}", a.out.display());
            } else {
                SkexGen::new(cfg.model, a.seed)?
            };
            let all_views = models.iter().map(views).collect::<Result<Vec<_>, _>>()?;
            match target {
                TrainTarget::Sketch | TrainTarget::Extrude => {
                    let kind = if target == TrainTarget::Sketch { BranchKind::Sketch } else { BranchKind::Extrude };
                    let data: Vec<BranchSample> = all_views.iter().map(|v| BranchSample::of(kind, v)).collect();
                    let branch = if kind == BranchKind::Sketch { &mut m.sketch } else { &mut m.extrude };
                    train_branch(branch, &data, &cfg.train, |s| log(TrainEvent::Branch(kind, s)))?;
                }
                _ => {
                    let tuples = models.iter().map(|x| m.encode(x).map(|(_, c)| c)).collect::<Result<Vec<_>, _>>()?;
                    for sel in &mut m.selectors {
                        let given = sel.given;
                        train_selector(sel, &tuples, &cfg.train, |s| log(TrainEvent::Selector(given, s)))?;
                    }
                }
            }
            m
        }
    };
    model.save(&a.out)?;
    if json {
        print_json(&json!({ "checkpoint": a.out, "models": models.len(), "final": finals }))
    } else {
        for (k, v) in &finals {
            println!("{k}: loss {:.4} acc {:.4}", v["loss"].as_f64().unwrap_or(f64::NAN), v["accuracy"].as_f64().unwrap_or(f64::NAN));
        }
        println!("saved {}", a.out.display());
        Ok(())
    }
}

fn nucleus(p: f64) -> Result<Sampling> {
    if !(p > 0.0 && p <= 1.0) {
        bail!("--nucleus-p {p} outside (0, 1]");
    }
    Ok(Sampling::Nucleus { p, temperature: 1.0 })
}

#[derive(Serialize)]
struct Summary<'a> {
    valid: bool,
    codes: &'a skexcraft_model::CodeTuple,
    model: Option<&'a CadModel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
    diagnostics: &'a [skexcraft_core::seq::Diagnostic],
}

fn summary(d: &Decoded) -> Summary<'_> {
    Summary { valid: d.is_valid(), codes: &d.codes, model: d.model.as_ref(), error: d.error.as_deref(), diagnostics: &d.diagnostics }
}

fn describe(i: usize, d: &Decoded) -> String {
    let status = if d.is_valid() {
        "valid".to_string()
    } else if let Some(e) = &d.error {
        format!("unparsable: {e}")
    } else {
        format!("invalid: {}", d.diagnostics.first().map_or_else(String::new, |x| x.rule.to_string()))
    };
    let c = &d.codes;
    format!("{i:>4}  T{:?} G{:?} E{:?}  {status}", c.topology, c.geometry, c.extrude)
}

fn sample(a: &Sample, json: bool) -> Result<()> {
    let m = load_ckpt(&a.ckpt)?;
    let sampling = nucleus(a.nucleus_p)?;
    let cond: Condition = match &a.condition {
        Some(s) => serde_json::from_str(s).context("--condition")?,
        None => Condition::default(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let (draws, attempts) = if a.retries > 0 {
        let g = m.generate(a.n, &cond, sampling, a.retries, &mut rng)?;
        (g.samples, g.attempts)
    } else {
        let d = (0..a.n).map(|_| m.sample(&cond, sampling, &mut rng)).collect::<Result<Vec<_>, _>>()?;
        (d, a.n)
    };
    let valid: Vec<CadModel> = draws.iter().filter(|d| d.is_valid()).filter_map(|d| d.model.clone()).collect();
    let rate = valid.len() as f64 / attempts.max(1) as f64;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        write_models(&dir.join(skexcraft_core::dataset::CORPUS_FILE), &valid)?;
    }
    if json {
        let samples: Vec<_> = draws.iter().map(summary).collect();
        print_json(&json!({ "attempts": attempts, "valid": valid.len(), "validity_rate": rate, "samples": samples }))
    } else {
        for (i, d) in draws.iter().enumerate() {
            println!("{}", describe(i, d));
        }
        println!("valid {}/{attempts} ({:.1}%)", valid.len(), 100.0 * rate);
        Ok(())
    }
}

fn write_results(dir: &Path, results: &[ResultView]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, r) in results.iter().enumerate() {
        let sub = dir.join(format!("{i:03}"));
        fs::create_dir_all(&sub)?;
        fs::write(sub.join("result.json"), serde_json::to_string_pretty(r)?)?;
        for (k, svg) in r.svg.iter().enumerate() {
            fs::write(sub.join(format!("sketch_{k}.svg")), svg)?;
        }
        if let Some(obj) = &r.obj {
            fs::write(sub.join("model.obj"), obj)?;
        }
    }
    Ok(())
}

fn report_decoded(decoded: &[Decoded], out: Option<&Path>, chord_tol: f64, json: bool) -> Result<()> {
    if let Some(dir) = out {
        let views: Vec<ResultView> = decoded.iter().map(|d| view_decoded(d, chord_tol)).collect();
        write_results(dir, &views)?;
    }
    if json {
        print_json(&decoded.iter().map(summary).collect::<Vec<_>>())
    } else {
        decoded.iter().enumerate().for_each(|(i, d)| println!("{}", describe(i, d)));
        Ok(())
    }
}

fn interpolate(a: &Interpolate, json: bool) -> Result<()> {
    if a.steps == 0 {
        bail!("--steps must be positive");
    }
    let m = load_ckpt(&a.ckpt)?;
    let path = m.interpolate(&read_one(&a.a)?, &read_one(&a.b)?, a.steps)?;
    report_decoded(&path, a.out.as_deref(), a.chord_tol, json)
}

fn mix(a: &Mix, json: bool) -> Result<()> {
    let take: Given = a.take.parse()?;
    let m = load_ckpt(&a.ckpt)?;
    let d = m.mix(&read_one(&a.a)?, &read_one(&a.b)?, take)?;
    report_decoded(&[d], a.out.as_deref(), a.chord_tol, json)
}

/// Unit-cube surface clouds, one per model that samples; model `i` draws
/// from its own stream so results do not depend on the worker count.
fn clouds(models: &[CadModel], points: usize, chord_tol: f64, seed: u64) -> Vec<Option<Vec<P3>>> {
    let cfg = SampleConfig { chord_tol, ..SampleConfig::default() };
    let one = |i: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        csg_surface_sample(&models[i], points, &cfg, &mut rng).ok().map(|c| normalize_unit_cube(&c))
    };
    let workers = threads().min(models.len()).max(1);
    let mut out: Vec<Option<Vec<P3>>> = vec![None; models.len()];
    std::thread::scope(|s| {
        for (w, chunk) in out.chunks_mut(models.len().div_ceil(workers).max(1)).enumerate() {
            let start = w * models.len().div_ceil(workers).max(1);
            let one = &one;
            s.spawn(move || chunk.iter_mut().enumerate().for_each(|(k, slot)| *slot = one(start + k)));
        }
    });
    out
}

fn eval(a: &Eval, json: bool) -> Result<()> {
    let gen = read_corpus(&a.gen)?;
    let reference = read_corpus(&a.reference)?;
    let train = read_corpus(&a.train)?;
    let attempts = a.attempts.unwrap_or(gen.len());
    if attempts < gen.len() {
        bail!("--attempts {attempts} is below the {} generated models", gen.len());
    }
    let mut generated: Vec<Option<CadModel>> = gen.iter().map(|m| validate(m).is_empty().then(|| m.clone())).collect();
    generated.resize(attempts, None);
    let valid: Vec<CadModel> = generated.iter().flatten().cloned().collect();
    let gen_clouds: Vec<Vec<P3>> = clouds(&valid, a.points, a.chord_tol, a.seed).into_iter().flatten().collect();
    let ref_clouds: Vec<Vec<P3>> = clouds(&reference, a.points, a.chord_tol, a.seed ^ 0x5eed).into_iter().flatten().collect();
    let r = report(&EvalInput {
        generated: &generated,
        gen_clouds: &gen_clouds,
        ref_clouds: &ref_clouds,
        train: &train,
        points_per_model: a.points,
        grid_resolution: a.grid,
    })?;
    if json {
        print_json(&r)
    } else {
        print!("{r}");
        Ok(())
    }
}

fn serve(a: &Serve) -> Result<()> {
    let state = AppState::empty(a.chord_tol);
    let addr = SocketAddr::new(a.host, a.port);
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(threads()).enable_all().build()?;
    rt.block_on(async {
        let loader = state.clone();
        let ckpt = a.ckpt.clone();
        tokio::task::spawn_blocking(move || match SkexGen::load(&ckpt) {
            Ok(m) => {
                loader.install(m);
                eprintln!("loaded {}", ckpt.display());
            }
            Err(e) => {
                eprintln!("error: loading checkpoint {}: {e}", ckpt.display());
                std::process::exit(1);
            }
        });
        eprintln!("listening on http://{addr}");
        skexcraft_serve::serve(state, addr).await
    })?;
    Ok(())
}
