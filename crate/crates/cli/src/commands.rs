use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use flowline::dataset::{self, BuildOptions, DatasetManifest, PairMode, Split, MANIFEST_FILE};
use flowline::etf::visualize_field;
use flowline::io::{load_image, read_flo, save_image, write_flo};
use flowline::metrics::evaluate_batch;
use flowline::neural::checkpoint::{load_checkpoint, save_checkpoint, Model};
use flowline::neural::train::{history_to_jsonl, StepLog};
use flowline::neural::{
    train_dfg, train_i2fnet, train_lcr, DiscriminatorConfig, Frozen, LcrConfig, Objective, TrainConfig,
    TrainSample, UNetConfig,
};
use flowline::{compute_etf, EtfParams, Error};

use crate::error::CliError;
use crate::render::{self, Control, DEFAULT_PASSES};
use crate::service::{self, ServiceConfig, DEFAULT_MAX_PIXELS};

type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(name = "flowline", version, about = "Controllable line drawings from photographs")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute the edge tangent flow of an image.
    Etf(EtfArgs),
    /// Render a line drawing under a global or per-pixel control value.
    Draw(DrawArgs),
    /// Build or check a paired training dataset.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Score predicted drawings against ground truth.
    Eval(EvalArgs),
    /// Train one of the networks on a built dataset.
    Train(TrainArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct EtfArgs {
    #[arg(short, long)]
    input: PathBuf,
    /// Output tangent file; the magnitude plane goes next to it as `.mag`.
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = 5)]
    radius: usize,
    #[arg(long, default_value_t = 3)]
    iterations: usize,
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    /// Also write a color visualization.
    #[arg(long)]
    viz: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("control").required(true).args(["alpha", "lcm"])))]
struct DrawArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Global control value in [0, 1].
    #[arg(long)]
    alpha: Option<f64>,
    /// Grayscale control matrix image, same size as the input.
    #[arg(long)]
    lcm: Option<PathBuf>,
    /// Precomputed tangent field; computed on the fly when absent.
    #[arg(long)]
    etf: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PASSES)]
    passes: usize,
}

#[derive(Debug, Subcommand)]
enum DatasetCommand {
    /// Resize sources and write images, fields, drawings and a manifest.
    Build(BuildArgs),
    /// Check a dataset directory against its manifest.
    Validate {
        /// Dataset directory containing the manifest.
        dir: PathBuf,
    },
}

#[derive(Debug, Args)]
struct BuildArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = flowline::fdog::ANCHOR_LEVELS)]
    levels: Vec<f64>,
    #[arg(long, default_value_t = 1024)]
    size: usize,
    /// Fraction of images in the training split.
    #[arg(long, default_value_t = 0.76)]
    split: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_PASSES)]
    passes: usize,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum NetKind {
    /// Photograph to tangent field.
    I2f,
    /// Line control regressor.
    Lcr,
    /// Drawing generator; needs trained `--i2f` and `--lcr` checkpoints.
    Dfg,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(value_enum)]
    kind: NetKind,
    /// Dataset directory produced by `dataset build`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, default_value_t = 2e-4)]
    lr: f64,
    /// Width of the first generator or regressor level.
    #[arg(long, default_value_t = 8)]
    base_ch: usize,
    /// Width of the first discriminator layer.
    #[arg(long, default_value_t = 8)]
    disc_base: usize,
    /// Checkpoint path; defaults to `<data>/<kind>.ckpt`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-step losses as JSON lines.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    i2f: Option<PathBuf>,
    #[arg(long)]
    lcr: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Overridden by the FLOWLINE_PORT environment variable.
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, default_value_t = 512)]
    cache_mb: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_PIXELS)]
    max_pixels: usize,
    /// Directory of static assets served under `/`.
    #[arg(long)]
    static_dir: Option<PathBuf>,
}

pub(crate) fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Etf(a) => etf(a),
        Command::Draw(a) => draw(a),
        Command::Dataset(DatasetCommand::Build(a)) => build(a),
        Command::Dataset(DatasetCommand::Validate { dir }) => validate(&dir),
        Command::Eval(a) => eval(a),
        Command::Train(a) => train(a),
        Command::Serve(a) => serve(a),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn etf(a: EtfArgs) -> Result<()> {
    let params = EtfParams {
        kernel_radius: a.radius,
        eta: a.eta,
        iterations: a.iterations,
    };
    let field = compute_etf(&load_image(&a.input)?, &params)?;
    write_flo(&field, &a.output)?;
    if let Some(viz) = &a.viz {
        save_image(&visualize_field(&field), viz)?;
    }
    println!("{}x{} field written to {}", field.width(), field.height(), a.output.display());
    Ok(())
}

fn draw(a: DrawArgs) -> Result<()> {
    // Bytes are decoded exactly as the service decodes uploads.
    let img = flowline::io::decode_image(&read(&a.input)?)?;
    let control = match (a.alpha, &a.lcm) {
        (Some(alpha), _) => Control::Alpha(alpha),
        (None, Some(path)) => {
            let lcm = render::decode_lcm(&read(path)?)?;
            render::check_lcm_size(&lcm, &img)?;
            Control::Matrix(lcm)
        }
        (None, None) => unreachable!("clap requires one control"),
    };
    let field = match &a.etf {
        Some(path) => {
            let field = read_flo(path)?;
            if (field.width(), field.height()) != (img.width(), img.height()) {
                return Err(Error::DimensionMismatch(format!(
                    "field is {}x{}, image is {}x{}",
                    field.width(),
                    field.height(),
                    img.width(),
                    img.height()
                ))
                .into());
            }
            field
        }
        None => render::default_field(&img)?,
    };
    write(&a.output, render::render_png(&img, &field, &control, a.passes)?)
}

fn build(a: BuildArgs) -> Result<()> {
    let opts = BuildOptions {
        levels: a.levels,
        size: a.size,
        split_ratio: a.split,
        seed: a.seed,
        etf: EtfParams::default(),
        passes: a.passes,
    };
    let manifest = dataset::build_dataset(&a.src, &a.out, &opts)?;
    let train = manifest.entries.iter().filter(|e| e.split == Split::Train).count();
    let drawings: usize = manifest.entries.iter().map(|e| e.drawings.len()).sum();
    println!(
        "{} images ({train} train, {} test), {drawings} drawings in {}",
        manifest.entries.len(),
        manifest.entries.len() - train,
        a.out.display()
    );
    Ok(())
}

fn validate(dir: &Path) -> Result<()> {
    let violations = dataset::validate_manifest(dir.join(MANIFEST_FILE))?;
    for v in &violations {
        println!("{v}");
    }
    if violations.is_empty() {
        println!("ok");
        Ok(())
    } else {
        Err(CliError::Invalid(violations.len()))
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    let report = evaluate_batch(&a.pred, &a.gt)?;
    print!("{}", report.to_table());
    if let Some(path) = &a.json {
        write(path, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

fn checkpoint(path: Option<&PathBuf>, flag: &str) -> Result<Model> {
    let path = path.ok_or_else(|| CliError::Config(format!("training the drawing generator needs --{flag}")))?;
    Ok(load_checkpoint(path)?)
}

fn train(a: TrainArgs) -> Result<()> {
    let manifest = DatasetManifest::load(a.data.join(MANIFEST_FILE))?;
    let mode = match a.kind {
        NetKind::I2f => PairMode::Etf,
        NetKind::Lcr | NetKind::Dfg => PairMode::Drawing,
    };
    let refs = dataset::iter_pairs(&manifest, &a.data, Split::Train, mode, a.seed)?;
    let data = TrainSample::load_all(&refs, a.size)?;
    let cfg = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size.unwrap_or(if a.kind == NetKind::I2f { 1 } else { 2 }),
        image_size: a.size,
        seed: a.seed,
        max_steps: a.steps,
        ..TrainConfig::default()
    };
    let out = a.out.clone().unwrap_or_else(|| {
        let name = match a.kind {
            NetKind::I2f => "i2f.ckpt",
            NetKind::Lcr => "lcr.ckpt",
            NetKind::Dfg => "dfg.ckpt",
        };
        a.data.join(name)
    });
    let history = match a.kind {
        NetKind::I2f => {
            let disc = DiscriminatorConfig::patch_gan(5, a.disc_base);
            let (net, history) = train_i2fnet(&data, UNetConfig::i2f(a.base_ch), disc, &cfg)?;
            save_checkpoint(&net, &out)?;
            history
        }
        NetKind::Lcr => {
            let (net, history) = train_lcr(&data, LcrConfig::new(a.base_ch), &cfg)?;
            save_checkpoint(&net, &out)?;
            history
        }
        NetKind::Dfg => {
            let Model::I2f(i2f) = checkpoint(a.i2f.as_ref(), "i2f")? else {
                return Err(CliError::Config("--i2f is not a flow generator checkpoint".into()));
            };
            let Model::Lcr(lcr) = checkpoint(a.lcr.as_ref(), "lcr")? else {
                return Err(CliError::Config("--lcr is not a regressor checkpoint".into()));
            };
            let disc = DiscriminatorConfig::patch_gan(4, a.disc_base);
            let frozen = Some(Frozen { i2f: &i2f, lcr: &lcr });
            let (net, history) =
                train_dfg(&data, UNetConfig::dfg(a.base_ch), disc, &cfg, frozen, Objective::Full)?;
            save_checkpoint(&net, &out)?;
            history
        }
    };
    if let Some(log) = &a.log {
        write(log, history_to_jsonl(&history)?)?;
    }
    report_training(&history, data.len(), &out);
    Ok(())
}

fn report_training(history: &[StepLog], samples: usize, out: &Path) {
    if let Some(last) = history.last() {
        println!(
            "{} steps over {} epoch(s) on {samples} samples, final loss {:.5}",
            history.len(),
            last.epoch + 1,
            last.total
        );
    }
    println!("checkpoint written to {}", out.display());
}

fn serve(a: ServeArgs) -> Result<()> {
    let port = match std::env::var("FLOWLINE_PORT") {
        Ok(v) => v
            .parse()
            .map_err(|_| CliError::Config(format!("FLOWLINE_PORT={v:?} is not a port number")))?,
        Err(_) => a.port,
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let config = ServiceConfig {
        cache_bytes: a.cache_mb << 20,
        max_pixels: a.max_pixels,
        static_dir: a.static_dir,
        ..ServiceConfig::default()
    };
    tokio::runtime::Runtime::new()
        .map_err(CliError::Server)?
        .block_on(service::serve(SocketAddr::new(a.host, port), config))
        .map_err(CliError::Server)
}
