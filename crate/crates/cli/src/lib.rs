//! `strokegan` command line: data ingestion, training, sampling, scoring,
//! rendering and the HTTP service.

pub mod serve;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use strokegan::checkpoint::Checkpoint;
use strokegan::config::{Profile, SkeganConfig, VaskeganConfig};
use strokegan::discriminator::DiscriminatorKind;
use strokegan::eval::{self, dataset_ske_score, goodness, model_ske_score, SkeScoreReport};
use strokegan::model::{Model, TrainedModel};
use strokegan::render::{render_grid, render_svg_styled, RenderStyle};
use strokegan::skegan::{SkeganModel, Temperature};
use strokegan::stroke::{normalize_offsets, parse_stroke3_lines, Sketch, SketchDataset, SketchRecord, StrokePoint3, StrokePoint5};
use strokegan::train::{reconstruction_eval, SkeganTrainer};
use strokegan::vaskegan::{VaskeganModel, VaskeganTrainer};
use strokegan::{seeded_rng, Error as CoreError, Real};

/// Relative `--dataset` paths are resolved against this directory when it is set.
pub const DATA_DIR_ENV: &str = "STROKEGAN_DATA_DIR";

#[derive(Parser, Debug)]
#[command(name = "strokegan", version, about = "Stroke-format sketch generation with SkeGAN and VASkeGAN")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate and filter a line-delimited stroke-3 file.
    Ingest(IngestArgs),
    /// SkeGAN pre-training only (generator likelihood, then discriminator).
    Pretrain(SkeganArgs),
    /// SkeGAN pre-training followed by adversarial rounds.
    TrainSkegan(SkeganArgs),
    TrainVaskegan(VaskeganArgs),
    /// Unconditional samples from a checkpoint.
    Sample(SampleArgs),
    /// Complete a partial sketch.
    Complete(CompleteArgs),
    /// Ske-score of a dataset, a model, or both with the goodness test.
    Score(ScoreArgs),
    /// Temperature grid or a pg-weight / w_KL ablation table.
    Sweep(SweepArgs),
    /// Render dataset sketches to SVG.
    Render(RenderArgs),
    /// HTTP service for sampling and completion.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Keep only records with this label.
    #[arg(long)]
    category: Option<String>,
    /// Drop sketches with more points than this.
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainCommon {
    #[arg(long)]
    dataset: PathBuf,
    /// Checkpoint written after every phase.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "toy")]
    profile: Profile,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Continue from a training checkpoint; its config wins over profile flags.
    #[arg(long, conflicts_with = "init")]
    resume: Option<PathBuf>,
    /// Initialize matching parameters from another checkpoint (transfer).
    #[arg(long)]
    init: Option<PathBuf>,
    /// Append line-delimited JSON metrics here.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Hold out this many sketches for evaluation.
    #[arg(long, default_value_t = 0)]
    held_out: usize,
    #[arg(long)]
    category: Option<String>,
}

#[derive(Args, Debug)]
struct SkeganArgs {
    #[command(flatten)]
    common: TrainCommon,
    #[arg(long)]
    pretrain_g: Option<usize>,
    #[arg(long)]
    pretrain_d: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    epoch_iters: Option<usize>,
    #[arg(long)]
    pg_weight: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    rollouts: Option<usize>,
    /// Also checkpoint every this many pre-training iterations.
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
}

#[derive(Args, Debug)]
struct VaskeganArgs {
    #[command(flatten)]
    common: TrainCommon,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    w_kl: Option<f64>,
    #[arg(long)]
    disc: Option<DiscriminatorKind>,
    /// Ablation: no encoder, no KL term.
    #[arg(long)]
    pure_gan: bool,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = 500)]
    checkpoint_every: usize,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0.4)]
    tau: f64,
    #[arg(long, default_value_t = 8)]
    count: usize,
    /// SVG grid; without it records are printed.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct CompleteArgs {
    #[arg(long)]
    model: PathBuf,
    /// Prefix as a JSON list of [dx, dy, p] triples.
    #[arg(long, conflicts_with = "input")]
    strokes: Option<String>,
    /// File whose first record is the prefix.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 0.25)]
    tau: f64,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = eval::DEFAULT_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = eval::DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// One JSON record per line instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SweepKind {
    Temperature,
    PgWeight,
    WKl,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, value_enum, default_value = "temperature")]
    kind: SweepKind,
    /// Checkpoint for temperature sweeps.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset for ablations.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Comma-separated values; defaults to the published grids.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 200)]
    samples: usize,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value = "toy")]
    profile: Profile,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Render only this record.
    #[arg(long)]
    index: Option<usize>,
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 8)]
    columns: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    /// `name=path` of a checkpoint to serve; repeatable.
    #[arg(long = "model", required = true, value_parser = parse_model_spec)]
    models: Vec<(String, PathBuf)>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    /// Deterministic mode: identical requests get identical results.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory of static files served at `/`.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
}

fn parse_model_spec(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected name=path, got {s:?}")),
    }
}

/// Parses `args` (program name first) and runs the command. Returns the process exit code:
/// 0 on success, 1 on a runtime error, 2 on a usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest(a) => ingest(&a),
        Command::Pretrain(a) => train_skegan(&a, true),
        Command::TrainSkegan(a) => train_skegan(&a, false),
        Command::TrainVaskegan(a) => train_vaskegan(&a),
        Command::Sample(a) => sample(&a),
        Command::Complete(a) => complete(&a),
        Command::Score(a) => score(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Render(a) => render(&a),
        Command::Serve(a) => {
            let cfg = serve::ServeConfig { addr: a.addr, models: a.models, seed: a.seed, static_dir: a.static_dir };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve::serve(cfg))
        }
    }
}

pub fn resolve_data_path(p: &Path) -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) if p.is_relative() => Path::new(&dir).join(p),
        _ => p.to_path_buf(),
    }
}

fn read_dataset(p: &Path) -> Result<SketchDataset> {
    let path = resolve_data_path(p);
    let f = File::open(&path).with_context(|| format!("cannot open dataset {}", path.display()))?;
    let parsed = parse_stroke3_lines(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?;
    if parsed.skipped > 0 {
        log::warn!("{}: skipped {} malformed records", path.display(), parsed.skipped);
    }
    Ok(parsed.dataset)
}

fn load_model(p: &Path) -> Result<TrainedModel> {
    let c = Checkpoint::load(p).with_context(|| format!("cannot load model {}", p.display()))?;
    Ok(c.to_model()?)
}

fn write_records<W: Write>(mut w: W, drawings: &[(String, Vec<StrokePoint3>)]) -> Result<()> {
    for (label, drawing) in drawings {
        serde_json::to_writer(&mut w, &SketchRecord { label: label.clone(), drawing: drawing.clone() })?;
        writeln!(w)?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn temperature(tau: f64) -> Result<Temperature> {
    if !(tau > 0.0 && tau <= 1.0) {
        bail!("temperature must be in (0, 1], got {tau}");
    }
    Ok(Temperature::new(tau as Real)?)
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let data = read_dataset(&a.input)?;
    let total = data.len();
    let mut kept: Vec<Sketch> = data
        .sketches
        .into_iter()
        .filter(|s| a.category.as_ref().is_none_or(|c| &s.label == c))
        .filter(|s| a.max_len.is_none_or(|m| s.len_real() <= m))
        .collect();
    if let Some(l) = a.limit {
        kept.truncate(l);
    }
    let clean = SketchDataset::new(kept).context("no sketches left after filtering")?;
    clean.write_records(BufWriter::new(File::create(&a.out)?))?;
    let spread = normalize_offsets(&clean)?.offset_scale;
    let report = dataset_ske_score(&clean).ok();
    let summary = serde_json::json!({
        "read": total,
        "kept": clean.len(),
        "n_max": clean.n_max,
        "offset_scale": spread,
        "ske_score": report,
    });
    println!("{summary}");
    Ok(())
}

/// Divides offsets by `scale` and drops sketches longer than `n_max`.
fn rescale(data: &SketchDataset, scale: Real, n_max: usize) -> Result<SketchDataset> {
    let sketches: Vec<Sketch> = data
        .sketches
        .iter()
        .filter(|s| s.len_real() <= n_max)
        .map(|s| Sketch::new(s.points.iter().map(|p| StrokePoint5::new(p.dx / scale, p.dy / scale, p.pen)).collect(), s.label.clone()))
        .collect();
    let mut d = SketchDataset::new(sketches)?;
    d.n_max = n_max;
    d.offset_scale = scale;
    Ok(d)
}

struct Prepared {
    train: Vec<Sketch>,
    held_out: Vec<Sketch>,
    raw_score: Option<SkeScoreReport>,
}

fn prepare(data: &SketchDataset, held_out: usize) -> Result<Prepared> {
    let raw_score = dataset_ske_score(data).ok();
    if held_out == 0 {
        return Ok(Prepared { train: data.sketches.clone(), held_out: Vec::new(), raw_score });
    }
    let (t, h) = data.split(held_out)?;
    Ok(Prepared { train: t.sketches, held_out: h.sketches, raw_score })
}

fn metrics_sink(p: &Option<PathBuf>) -> Result<Option<Box<dyn Write + Send>>> {
    Ok(match p {
        Some(path) => Some(Box::new(BufWriter::new(std::fs::OpenOptions::new().create(true).append(true).open(path)?))),
        None => None,
    })
}

fn category_of(c: &TrainCommon, data: &SketchDataset) -> String {
    c.category.clone().unwrap_or_else(|| data.sketches.first().map(|s| s.label.clone()).unwrap_or_default())
}

fn diverged_context(e: CoreError, out: &Path) -> anyhow::Error {
    match e {
        CoreError::Diverged { .. } => anyhow::Error::new(e).context(format!("last good checkpoint: {}", out.display())),
        other => other.into(),
    }
}

fn train_skegan(a: &SkeganArgs, pretrain_only: bool) -> Result<()> {
    let c = &a.common;
    let raw = read_dataset(&c.dataset)?;
    let category = category_of(c, &raw);
    let (mut t, data) = match &c.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let mut t = ck.skegan_trainer()?;
            if let Some(r) = a.rounds {
                t.model.config.rounds = r;
            }
            let data = rescale(&raw, ck.meta.offset_scale as Real, t.n_max)?;
            (t, data)
        }
        None => {
            let data = normalize_offsets(&raw)?;
            let mut cfg = match c.profile {
                Profile::Toy => SkeganConfig::toy(),
                Profile::Paper => SkeganConfig::paper(),
            };
            if let Some(v) = a.pretrain_g {
                cfg.pretrain_g_iters = v;
            }
            if let Some(v) = a.pretrain_d {
                cfg.pretrain_d_iters = v;
            }
            if let Some(v) = a.rounds {
                cfg.rounds = v;
            }
            if a.epoch_iters.is_some() {
                cfg.epoch_iters = a.epoch_iters;
            }
            if let Some(v) = a.pg_weight {
                cfg.pg_weight = v;
            }
            if let Some(v) = a.batch {
                cfg.batch = v;
            }
            if let Some(v) = a.rollouts {
                cfg.rollout_count = v;
            }
            let mut t = SkeganTrainer::new(SkeganModel::new(cfg, c.seed)?, data.n_max, c.seed);
            if let Some(init) = &c.init {
                let n = Checkpoint::load(init)?.transfer_into(&mut t.model.store);
                t.rollout = t.model.store.clone();
                log::info!("initialized {n} parameters from {}", init.display());
            }
            (t, data)
        }
    };
    if let Some(sink) = metrics_sink(&c.metrics)? {
        t.metrics.set_sink(sink);
    }
    let scale = data.offset_scale;
    let p = prepare(&data, c.held_out)?;
    let save = |t: &SkeganTrainer| -> Result<()> { Checkpoint::from_skegan_trainer(t, scale, &category)?.save(&c.out).map_err(Into::into) };
    let eval_set = if p.held_out.is_empty() { &p.train } else { &p.held_out };
    let lr0 = reconstruction_eval(&t.model.generator, &t.model.store, eval_set, t.n_max, t.model.config.batch)?[2];

    let g_left = t.model.config.pretrain_g_iters.saturating_sub(t.counters.pretrain_g);
    for k in 0..g_left {
        let l = t.pretrain_generator_step(&p.train).map_err(|e| diverged_context(e, &c.out))?;
        if k % 100 == 0 {
            log::info!("pretrain G {}: L_R {:.4}", t.counters.pretrain_g, l[2]);
        }
        if a.checkpoint_every > 0 && t.counters.pretrain_g % a.checkpoint_every == 0 {
            save(&t)?;
        }
    }
    let lr1 = reconstruction_eval(&t.model.generator, &t.model.store, eval_set, t.n_max, t.model.config.batch)?[2];
    println!("generator pre-training: L_R {lr0:.4} -> {lr1:.4}");
    save(&t)?;

    let d_left = t.model.config.pretrain_d_iters.saturating_sub(t.counters.pretrain_d);
    if d_left > 0 {
        let steps = t.pretrain_discriminator(&p.train, d_left).map_err(|e| diverged_context(e, &c.out))?;
        let acc = steps.iter().rev().take(20).map(|s| s.accuracy).sum::<f64>() / steps.len().min(20) as f64;
        println!("discriminator pre-training: {} iterations, recent batch accuracy {acc:.3}", steps.len());
        save(&t)?;
    }

    if !pretrain_only {
        while t.counters.rounds < t.model.config.rounds {
            let r = t.train_round(&p.train).map_err(|e| diverged_context(e, &c.out))?;
            println!(
                "round {}: mean Q {:.3}, offset adversarial loss {:.4}, D NLL {:.4}, D accuracy {:.3}",
                r.round, r.mean_q, r.adv_loss, r.d_nll, r.d_accuracy
            );
            save(&t)?;
        }
    }
    if !p.held_out.is_empty() {
        let (lr, nll) = t.eval_losses(&p.held_out)?;
        println!("held-out: L_R {lr:.4}, D NLL {nll:.4}");
    }
    let model = TrainedModel { model: Model::Skegan(t.model.clone()), n_max: t.n_max, offset_scale: scale, category: category.clone() };
    report_scores(&model, p.raw_score.as_ref(), &mut t.rng)?;
    println!("saved {}", c.out.display());
    Ok(())
}

fn report_scores(model: &TrainedModel, data: Option<&SkeScoreReport>, rng: &mut strokegan::Rng) -> Result<()> {
    match model_ske_score(model, 500, Temperature::ONE, rng) {
        Ok(m) => {
            println!("model Ske-score: {m}");
            if let Some(d) = data {
                println!("dataset Ske-score: {d}; good at eps={}: {}", eval::DEFAULT_EPSILON, goodness(d, &m, eval::DEFAULT_EPSILON));
            }
        }
        Err(e) => println!("model Ske-score: {e}"),
    }
    Ok(())
}

fn train_vaskegan(a: &VaskeganArgs) -> Result<()> {
    let c = &a.common;
    let raw = read_dataset(&c.dataset)?;
    let category = category_of(c, &raw);
    let (mut t, data) = match &c.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let mut t = ck.vaskegan_trainer()?;
            if let Some(v) = a.iters {
                t.model.config.iterations = v;
            }
            let data = rescale(&raw, ck.meta.offset_scale as Real, t.n_max)?;
            (t, data)
        }
        None => {
            let data = normalize_offsets(&raw)?;
            let mut cfg = match c.profile {
                Profile::Toy => VaskeganConfig::toy(),
                Profile::Paper => VaskeganConfig::paper(),
            };
            if let Some(v) = a.iters {
                cfg.iterations = v;
            }
            if let Some(v) = a.w_kl {
                cfg.w_kl = v;
            }
            if let Some(v) = a.disc {
                cfg.disc_kind = v;
            }
            if let Some(v) = a.batch {
                cfg.batch = v;
            }
            cfg.pure_gan = a.pure_gan;
            let mut t = VaskeganTrainer::new(VaskeganModel::new(cfg, c.seed)?, data.n_max, c.seed);
            if let Some(init) = &c.init {
                let n = Checkpoint::load(init)?.transfer_into(&mut t.model.store);
                log::info!("initialized {n} parameters from {}", init.display());
            }
            (t, data)
        }
    };
    if let Some(sink) = metrics_sink(&c.metrics)? {
        t.metrics.set_sink(sink);
    }
    let scale = data.offset_scale;
    let p = prepare(&data, c.held_out)?;
    let eval_set = if p.held_out.is_empty() { &p.train } else { &p.held_out };
    let save = |t: &VaskeganTrainer| -> Result<()> { Checkpoint::from_vaskegan_trainer(t, scale, &category)?.save(&c.out).map_err(Into::into) };
    let lr0 = t.reconstruction_eval(eval_set)?;
    while t.counters.iteration < t.model.config.iterations {
        let s = t.step(&p.train).map_err(|e| diverged_context(e, &c.out))?;
        if s.iteration % 100 == 0 {
            log::info!("iter {}: L_R {:.4} KL {:.4} adv {:.4} D {:.4}", s.iteration, s.lr, s.kl, s.adv, s.d_loss);
        }
        if a.checkpoint_every > 0 && t.counters.iteration % a.checkpoint_every == 0 {
            save(&t)?;
        }
    }
    save(&t)?;
    let lr1 = t.reconstruction_eval(eval_set)?;
    println!("L_R {lr0:.4} -> {lr1:.4} after {} iterations", t.counters.iteration);
    let model = TrainedModel { model: Model::Vaskegan(t.model.clone()), n_max: t.n_max, offset_scale: scale, category };
    report_scores(&model, p.raw_score.as_ref(), &mut t.rng)?;
    println!("saved {}", c.out.display());
    Ok(())
}

fn grid_rows(sketches: Vec<Sketch>, columns: usize) -> Vec<Vec<Sketch>> {
    sketches.chunks(columns.max(1)).map(<[Sketch]>::to_vec).collect()
}

fn sample(a: &SampleArgs) -> Result<()> {
    let m = load_model(&a.model)?;
    let tau = temperature(a.tau)?;
    let mut rng = seeded_rng(a.seed);
    let sketches = m.sample(a.count, tau, &mut rng)?;
    match &a.out {
        Some(out) => {
            write_text(out, &render_grid(&grid_rows(sketches, 8), 128.0, 1.5))?;
            println!("wrote {} samples to {}", a.count, out.display());
        }
        None => {
            let s = m.offset_scale;
            let drawings: Vec<_> = sketches
                .iter()
                .map(|sk| (m.category.clone(), sk.to_stroke3().into_iter().map(|p| StrokePoint3::new(p.dx * s, p.dy * s, p.lift)).collect()))
                .collect();
            write_records(std::io::stdout().lock(), &drawings)?;
        }
    }
    Ok(())
}

fn complete(a: &CompleteArgs) -> Result<()> {
    let m = load_model(&a.model)?;
    let tau = temperature(a.tau)?;
    let prefix: Vec<StrokePoint3> = match (&a.strokes, &a.input) {
        (Some(s), _) => serde_json::from_str(s).context("--strokes must be a JSON list of [dx, dy, p]")?,
        (None, Some(path)) => {
            let d = read_dataset(path)?;
            d.sketches[0].to_stroke3()
        }
        (None, None) => bail!("give the prefix with --strokes or --input"),
    };
    if prefix.is_empty() {
        bail!("the prefix is empty");
    }
    let mut rng = seeded_rng(a.seed);
    let mut done = Vec::with_capacity(a.count);
    for _ in 0..a.count {
        done.push(m.complete_strokes(&prefix, tau, &mut rng)?);
    }
    match &a.out {
        Some(out) => {
            let style = RenderStyle { canvas_size: 256.0, ..RenderStyle::default() };
            let svg = if done.len() == 1 {
                render_svg_styled(&Sketch::from_stroke3(&done[0], ""), Some(prefix.len()), &style)
            } else {
                let sketches = done.iter().map(|d| Sketch::from_stroke3(d, "")).collect();
                render_grid(&grid_rows(sketches, 4), 192.0, 1.5)
            };
            write_text(out, &svg)?;
            println!("wrote {} completion(s) to {}", done.len(), out.display());
        }
        None => write_records(std::io::stdout().lock(), &done.into_iter().map(|d| (m.category.clone(), d)).collect::<Vec<_>>())?,
    }
    Ok(())
}

fn print_report(kind: &str, r: &SkeScoreReport, json: bool) -> Result<()> {
    if json {
        println!("{}", serde_json::json!({ "source": kind, "report": r }));
    } else {
        println!("{kind} Ske-score: {r}");
    }
    Ok(())
}

fn score(a: &ScoreArgs) -> Result<()> {
    if a.dataset.is_none() && a.model.is_none() {
        bail!("give --dataset, --model or both");
    }
    let d = match &a.dataset {
        Some(p) => Some(dataset_ske_score(&read_dataset(p)?)?),
        None => None,
    };
    let m = match &a.model {
        Some(p) => {
            let model = load_model(p)?;
            Some(model_ske_score(&model, a.samples, temperature(a.tau)?, &mut seeded_rng(a.seed))?)
        }
        None => None,
    };
    if let Some(r) = &d {
        print_report("dataset", r, a.json)?;
    }
    if let Some(r) = &m {
        print_report("model", r, a.json)?;
    }
    if let (Some(d), Some(m)) = (&d, &m) {
        let good = goodness(d, m, a.epsilon);
        if a.json {
            println!("{}", serde_json::json!({ "goodness": good, "epsilon": a.epsilon, "difference": (d.mean - m.mean).abs() }));
        } else {
            println!("|S_D - S_M| = {:.4}; good at eps={}: {good}", (d.mean - m.mean).abs(), a.epsilon);
        }
    }
    Ok(())
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let mut rng = seeded_rng(a.seed);
    match a.kind {
        SweepKind::Temperature => {
            let model = load_model(a.model.as_deref().context("temperature sweeps need --model")?)?;
            let taus: Vec<Real> = if a.values.is_empty() { eval::PAPER_TEMPERATURES.to_vec() } else { a.values.iter().map(|&v| v as Real).collect() };
            let s = eval::temperature_sweep(&model, &taus, a.count, &mut rng)?;
            for (tau, r) in &s.reports {
                match r {
                    Some(r) => println!("tau {tau}: {r}"),
                    None => println!("tau {tau}: all degenerate"),
                }
            }
            if let Some(out) = &a.out {
                write_text(out, &s.svg)?;
                println!("wrote {}", out.display());
            }
        }
        SweepKind::PgWeight | SweepKind::WKl => {
            let raw = read_dataset(a.dataset.as_deref().context("ablations need --dataset")?)?;
            let data = normalize_offsets(&raw)?;
            let tau = temperature(a.tau)?;
            let rows = if matches!(a.kind, SweepKind::PgWeight) {
                let values = if a.values.is_empty() { vec![0.0, 0.25, 0.5, 1.0, 2.0] } else { a.values.clone() };
                let cfg = if a.profile == Profile::Paper { SkeganConfig::paper() } else { SkeganConfig::toy() };
                eval::pg_weight_ablation(&data, &values, &cfg, a.seed, a.samples, tau)?
            } else {
                let values = if a.values.is_empty() { vec![0.25, 0.5, 1.0] } else { a.values.clone() };
                let cfg = if a.profile == Profile::Paper { VaskeganConfig::paper() } else { VaskeganConfig::toy() };
                eval::w_kl_sweep(&data, &values, &cfg, a.seed, a.samples, tau)?
            };
            if let Ok(d) = dataset_ske_score(&raw) {
                println!("dataset Ske-score: {d}");
            }
            print!("{}", eval::format_table(&rows));
            if let Some(out) = &a.out {
                let mut w = BufWriter::new(File::create(out)?);
                for r in &rows {
                    serde_json::to_writer(&mut w, r)?;
                    writeln!(w)?;
                }
            }
        }
    }
    Ok(())
}

fn render(a: &RenderArgs) -> Result<()> {
    let data = read_dataset(&a.dataset)?;
    let svg = match a.index {
        Some(i) => {
            let s = data.sketches.get(i).with_context(|| format!("index {i} out of range ({} sketches)", data.len()))?;
            render_svg_styled(s, None, &RenderStyle::default())
        }
        None => {
            let picked: Vec<Sketch> = data.sketches.iter().take(a.count).cloned().collect();
            render_grid(&grid_rows(picked, a.columns), 128.0, 1.5)
        }
    };
    match &a.out {
        Some(out) => write_text(out, &svg)?,
        None => print!("{svg}"),
    }
    Ok(())
}
