use std::error::Error;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;

use leo_jscc::channel::{draw_realization, SymbolVector};
use leo_jscc::fading::{
    loo_pdf, mixture_pdf, occupancy, sample_loo_components, sample_state_sequence, stationary_distribution, ChannelState,
    Environment,
};
use leo_jscc::harness::{
    self, load_manifest, mismatch, report, sweep, write_atomic, DType, ExperimentConfig, ModelSpec, RawTensor,
    ResultRow, Session,
};
use leo_jscc::jscc::{ChannelContext, JsccModel, ModelKind};
use leo_jscc::nn::Tensor;
use leo_jscc::rng::{stream_id, stream_rng};

type Res<T> = Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "leo-jscc", version, about = "Adaptive deep JSCC over a LEO satellite downlink")]
struct Cli {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory. Commands that print CSV write to stdout without it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Slant range, path loss, noise and SNR at one elevation.
    Linkbudget(LinkArgs),
    #[command(subcommand)]
    Fading(FadingCmd),
    #[command(subcommand)]
    Channel(ChannelCmd),
    #[command(subcommand)]
    Jscc(JsccCmd),
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Trains one model, reusing its checkpoint if present.
    Train(TrainArgs),
    /// Evaluates a checkpoint on the test split.
    Eval(EvalArgs),
    /// Trains and evaluates every cell of the plan.
    Sweep,
    /// Assumed-vs-actual channel state study.
    Mismatch,
    /// Seed-averaged figure tables from the sweep outputs.
    Report,
}

#[derive(Args)]
struct LinkArgs {
    #[arg(long)]
    elevation: f64,
    #[arg(long)]
    orbit_height_km: Option<f64>,
    #[arg(long)]
    carrier_hz: Option<f64>,
    #[arg(long)]
    tx_power_w: Option<f64>,
    #[arg(long)]
    tx_gain_dbi: Option<f64>,
    #[arg(long)]
    rx_gain_dbi: Option<f64>,
    #[arg(long)]
    bandwidth_hz: Option<f64>,
    #[arg(long)]
    noise_figure_db: Option<f64>,
    #[arg(long)]
    antenna_temp_k: Option<f64>,
}

#[derive(Args)]
struct Where {
    #[arg(long, default_value = "open")]
    env: Environment,
    #[arg(long, default_value_t = 40.0)]
    elev: f64,
}

#[derive(Subcommand)]
enum FadingCmd {
    /// CSV of complex Loo gains.
    Sample {
        #[command(flatten)]
        at: Where,
        #[arg(long, default_value = "los")]
        state: ChannelState,
        #[arg(short = 'n', long = "count", default_value_t = 1000)]
        n: usize,
    },
    /// CSV of a Markov state sequence.
    States {
        #[command(flatten)]
        at: Where,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
    },
    /// CSV of the per-state and mixture amplitude densities.
    Pdf {
        #[command(flatten)]
        at: Where,
        #[arg(long, default_value_t = 2.0)]
        r_max: f64,
        #[arg(long, default_value_t = 200)]
        points: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SnrSource {
    Linkbudget,
    Explicit,
}

#[derive(Subcommand)]
enum ChannelCmd {
    /// Passes symbols (`image,index,re,im`) through one channel draw per image.
    Pass {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        at: Where,
        #[arg(long, default_value = "los")]
        state: ChannelState,
        #[arg(long, value_enum, default_value = "linkbudget")]
        snr_source: SnrSource,
        /// Required with `--snr-source explicit`.
        #[arg(long)]
        snr: Option<f64>,
    },
}

#[derive(Subcommand)]
enum JsccCmd {
    /// Raw-tensor images `(n, bands, H, W)` or `(bands, H, W)` to symbol CSV.
    Encode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// `snr=<db>,state=<s>`; required for adaptive models.
        #[arg(long)]
        ctx: Option<ChannelContext>,
    },
    /// Symbol CSV to a raw-tensor image file `decoded.rawt`.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        ctx: Option<ChannelContext>,
    },
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Generates the synthetic dataset described by the config.
    Synth {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Reads a band-file manifest into a dataset directory.
    Import {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "baseline")]
    kind: ModelKind,
    #[command(flatten)]
    at: Where,
    /// Baseline models only.
    #[arg(long, default_value = "los")]
    state: ChannelState,
    #[arg(long, default_value_t = 0.17)]
    ratio: f64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    at: Where,
    /// State the channel realizes.
    #[arg(long, default_value = "los")]
    state: ChannelState,
    /// State given to the model; defaults to `--state`.
    #[arg(long)]
    assume: Option<ChannelState>,
}

fn load_config(cli: &Cli) -> Res<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

/// Writes `bytes` to `<out>/<name>` when `--out` is set, else to stdout.
fn emit(cli: &Cli, name: &str, bytes: &[u8]) -> Res<()> {
    match &cli.out {
        Some(dir) => {
            let p = dir.join(name);
            write_atomic(&p, bytes)?;
            eprintln!("wrote {}", p.display());
        }
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn check(ok: bool, what: impl Into<String>) -> Res<()> {
    if ok {
        Ok(())
    } else {
        Err(Box::new(harness::HarnessError::Invariant(what.into())))
    }
}

fn linkbudget(cli: &Cli, a: &LinkArgs) -> Res<()> {
    let mut p = load_config(cli)?.link;
    let overrides = [
        (&mut p.orbit_height_km, a.orbit_height_km),
        (&mut p.carrier_hz, a.carrier_hz),
        (&mut p.tx_power_w, a.tx_power_w),
        (&mut p.tx_gain_dbi, a.tx_gain_dbi),
        (&mut p.rx_gain_dbi, a.rx_gain_dbi),
        (&mut p.bandwidth_hz, a.bandwidth_hz),
        (&mut p.noise_figure_db, a.noise_figure_db),
        (&mut p.antenna_temp_k, a.antenna_temp_k),
    ];
    for (field, value) in overrides {
        if let Some(v) = value {
            *field = v;
        }
    }
    let r = p.snr_at(a.elevation)?;
    check(r.slant_range_km >= p.orbit_height_km && r.snr_db.is_finite(), "slant range below orbit height or SNR not finite")?;
    println!("{r}");
    println!("{}\n{}", leo_jscc::linkbudget::SnrReport::CSV_HEADER, r.csv_row());
    Ok(())
}

fn fading(cli: &Cli, cmd: &FadingCmd) -> Res<()> {
    let cfg = load_config(cli)?;
    let tables = cfg.tables()?;
    match cmd {
        FadingCmd::Sample { at, state, n } => {
            let p = tables.lookup(at.env, at.elev, *state)?;
            let mut rng = stream_rng(cfg.seed, stream_id(&[1, state.index() as u64]));
            let draws = sample_loo_components(&p, *n, cfg.channel.direct_phase, &mut rng)?;
            let mut s = String::from("re,im,amplitude\n");
            for d in &draws {
                let h = d.gain();
                check(h.re.is_finite() && h.im.is_finite(), "non-finite gain")?;
                s.push_str(&format!("{},{},{}\n", h.re, h.im, h.norm()));
            }
            emit(cli, "fading_sample.csv", s.as_bytes())
        }
        FadingCmd::States { at, steps } => {
            let chain = tables.get(at.env)?.chain_at(at.elev)?;
            let mut rng = stream_rng(cfg.seed, stream_id(&[2]));
            let seq = sample_state_sequence(&chain, *steps, &mut rng)?;
            let mut s = String::from("step,state\n");
            for (i, st) in seq.iter().enumerate() {
                s.push_str(&format!("{i},{st}\n"));
            }
            let occ = occupancy(&seq);
            let pi = stationary_distribution(&chain)?;
            eprintln!("occupancy {occ:.4?}, stationary {pi:.4?}");
            emit(cli, "fading_states.csv", s.as_bytes())
        }
        FadingCmd::Pdf { at, r_max, points } => {
            check(*r_max > 0.0 && *points >= 2, "--r-max must be positive and --points >= 2")?;
            let table = tables.get(at.env)?;
            let per_state = table.per_state(at.elev)?;
            let chain = table.chain_at(at.elev)?;
            let mut s = String::from("r,los,shadow,deep_shadow,mixture\n");
            for i in 0..*points {
                let r = r_max * i as f64 / (*points - 1) as f64;
                let v: Vec<f64> = per_state.iter().map(|p| loo_pdf(r, p)).collect::<Result<_, _>>()?;
                let m = mixture_pdf(r, &chain, &per_state)?;
                check(v.iter().chain([&m]).all(|x| x.is_finite() && *x >= 0.0), format!("bad density at r = {r}"))?;
                s.push_str(&format!("{r},{},{},{},{m}\n", v[0], v[1], v[2]));
            }
            emit(cli, "fading_pdf.csv", s.as_bytes())
        }
    }
}

/// Reads `image,index,re,im` rows into one symbol vector per image.
fn read_symbols(path: &Path) -> Res<Vec<SymbolVector>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out: Vec<Vec<Complex64>> = Vec::new();
    for rec in rdr.deserialize::<(usize, usize, f64, f64)>() {
        let (image, index, re, im) = rec?;
        if image >= out.len() {
            out.resize(image + 1, Vec::new());
        }
        if index != out[image].len() {
            return Err(format!("{}: symbol {index} of image {image} out of order", path.display()).into());
        }
        out[image].push(Complex64::new(re, im));
    }
    Ok(out.into_iter().map(SymbolVector::new).collect::<Result<_, _>>()?)
}

fn symbols_csv(z: &[SymbolVector]) -> String {
    let mut s = String::from("image,index,re,im\n");
    for (i, v) in z.iter().enumerate() {
        for (t, c) in v.symbols.iter().enumerate() {
            s.push_str(&format!("{i},{t},{},{}\n", c.re, c.im));
        }
    }
    s
}

fn channel(cli: &Cli, cmd: &ChannelCmd) -> Res<()> {
    let ChannelCmd::Pass { input, at, state, snr_source, snr } = cmd;
    let cfg = load_config(cli)?;
    let p = cfg.tables()?.lookup(at.env, at.elev, *state)?;
    let snr_db = match (snr_source, snr) {
        (SnrSource::Explicit, Some(v)) => *v,
        (SnrSource::Explicit, None) => return Err("--snr-source explicit needs --snr".into()),
        (SnrSource::Linkbudget, _) => cfg.link.snr_at(at.elev)?.snr_db,
    };
    let z = read_symbols(input)?;
    let mut s = String::from("image,index,re,im,h_re,h_im\n");
    for (i, zi) in z.iter().enumerate() {
        let mut rng = stream_rng(cfg.seed, stream_id(&[3, i as u64]));
        let real = draw_realization(zi.len(), &p, snr_db, &cfg.channel, &mut rng)?;
        let out = real.apply(zi)?;
        for (t, c) in out.symbols.iter().enumerate() {
            let h = real.gain(t);
            s.push_str(&format!("{i},{t},{},{},{},{}\n", c.re, c.im, h.re, h.im));
        }
    }
    eprintln!("snr {snr_db:.4} dB, sigma^2 {:.4e}", leo_jscc::linkbudget::noise_sigma_squared(snr_db, cfg.channel.signal_power));
    emit(cli, "channel_out.csv", s.as_bytes())
}

fn contexts(model: &JsccModel<f32>, ctx: &Option<ChannelContext>, n: usize) -> Option<Vec<ChannelContext>> {
    match (model.kind(), ctx) {
        (ModelKind::Adaptive, Some(c)) => Some(vec![*c; n]),
        _ => None,
    }
}

fn jscc(cli: &Cli, cmd: &JsccCmd) -> Res<()> {
    match cmd {
        JsccCmd::Encode { model, input, ctx } => {
            let mut m = JsccModel::<f32>::load(model)?;
            let raw = RawTensor::read(input)?;
            let shape = if raw.shape.len() == 3 { vec![1, raw.shape[0], raw.shape[1], raw.shape[2]] } else { raw.shape.clone() };
            let x = Tensor::from_vec(&shape, raw.data.iter().map(|&v| v as f32).collect())?;
            let ctxs = contexts(&m, ctx, shape[0]);
            let z = m.encode(&x, ctxs.as_deref())?;
            let p = m.architecture.power;
            for zi in &z {
                check((zi.average_power() - p).abs() <= 1e-9, format!("symbol power {} differs from {p}", zi.average_power()))?;
            }
            emit(cli, "symbols.csv", symbols_csv(&z).as_bytes())
        }
        JsccCmd::Decode { model, input, ctx } => {
            let mut m = JsccModel::<f32>::load(model)?;
            let z = read_symbols(input)?;
            let ctxs = contexts(&m, ctx, z.len());
            let y = m.decode(&z, ctxs.as_deref())?;
            check(y.data().iter().all(|v| (0.0..=1.0).contains(v)), "decoded pixel outside [0, 1]")?;
            let raw = RawTensor { dtype: DType::F32, shape: y.shape().to_vec(), data: y.data().iter().map(|&v| f64::from(v)).collect() };
            let p = out_dir(cli).join("decoded.rawt");
            raw.write(&p)?;
            eprintln!("wrote {}", p.display());
            Ok(())
        }
    }
}

fn dataset(cli: &Cli, cmd: &DatasetCmd) -> Res<()> {
    let cfg = load_config(cli)?;
    let ds = match cmd {
        DatasetCmd::Synth { count } => {
            let mut params = match &cfg.data {
                harness::DataSource::Synthetic(p) => p.clone(),
                _ => harness::SynthParams::default(),
            };
            if let Some(c) = count {
                params.count = *c;
            }
            harness::generate_synthetic(&params, cfg.seed)?
        }
        DatasetCmd::Import { manifest } => load_manifest(manifest)?,
    };
    ds.validate()?;
    let dir = out_dir(cli);
    ds.save(&dir)?;
    println!("{} images of {:?} in {}, sha256 {}", ds.len(), ds.shape, dir.display(), ds.hash());
    Ok(())
}

fn train(cli: &Cli, a: &TrainArgs) -> Res<()> {
    let cfg = load_config(cli)?;
    let seed = cfg.seed;
    let spec = match a.kind {
        ModelKind::Baseline => ModelSpec::baseline(a.at.env, a.at.elev, a.state, a.ratio, seed),
        ModelKind::Adaptive => ModelSpec::adaptive(a.at.env, a.ratio, seed),
    };
    let session = Session::open(cfg, &out_dir(cli))?;
    let model = session.model(&spec)?;
    let report = model.parameter_report();
    println!("{}", session.model_path(&spec).display());
    println!("parameters {} (attention {}, {:.3}%)", report.total, report.attention, 100.0 * report.attention_ratio);
    Ok(())
}

fn eval(cli: &Cli, a: &EvalArgs) -> Res<()> {
    let cfg = load_config(cli)?;
    let out = out_dir(cli);
    let session = Session::open(cfg, &out)?;
    let model = JsccModel::<f32>::load(&a.model)?;
    let assumed_state = a.assume.unwrap_or(a.state);
    let actual = session.condition(a.at.env, a.at.elev, a.state)?;
    let assumed = session.condition(a.at.env, a.at.elev, assumed_state)?.context();
    let idx = session.dataset.indices(harness::Split::Test);
    let cfg = &session.cfg;
    let o = harness::evaluate(&model, &session.dataset, &idx, &actual, &assumed, &cfg.channel, &cfg.plan.eval, cfg.seed)?;
    let row = ResultRow {
        environment: a.at.env.to_string(),
        elevation_deg: a.at.elev,
        state_trained: assumed_state.to_string(),
        state_actual: a.state.to_string(),
        ratio: model.architecture.compression_ratio(),
        channel_filters: model.architecture.channel_filters,
        kind: model.kind().to_string(),
        seed: model.metadata.seed,
        snr_db: actual.snr_db,
        realizations: o.realizations,
        mse: o.mse,
        psnr_db: harness::psnr_from_mse(o.mse),
    };
    let p = out.join("eval.csv");
    harness::write_results(&p, std::slice::from_ref(&row))?;
    println!("psnr {:.4} dB over {} realizations (se {:.4} dB); wrote {}", row.psnr_db, o.realizations, o.psnr_se_db, p.display());
    Ok(())
}

fn run(cli: &Cli) -> Res<()> {
    match &cli.command {
        Command::Linkbudget(a) => linkbudget(cli, a),
        Command::Fading(c) => fading(cli, c),
        Command::Channel(c) => channel(cli, c),
        Command::Jscc(c) => jscc(cli, c),
        Command::Dataset(c) => dataset(cli, c),
        Command::Train(a) => train(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Sweep => {
            let session = Session::open(load_config(cli)?, &out_dir(cli))?;
            let out = sweep(&session)?;
            println!("{} rows, {} comparison rows in {}", out.rows.len(), out.comparison.len(), session.out.display());
            Ok(())
        }
        Command::Mismatch => {
            let session = Session::open(load_config(cli)?, &out_dir(cli))?;
            let rows = mismatch(&session)?;
            println!("{} rows in {}", rows.len(), session.out.join("mismatch.csv").display());
            Ok(())
        }
        Command::Report => {
            for p in report(&out_dir(cli))? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
