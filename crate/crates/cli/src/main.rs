use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use plcsim::apps::{
    capacity_ensemble, measure_impulse, measure_real, propagate_impulse, ImpulseEvent,
    SpectralMask, DEFAULT_QUANTILES,
};
use plcsim::cable::{CableCatalog, CATALOG_ENV};
use plcsim::changen::{GeneratedChannel, Generator, GeneratorConfig};
use plcsim::dsp::{farrow_resample, ResampleSpec};
use plcsim::pipeline::{
    build_ensemble, compare, read_ensemble, render_compare, write_atomic, write_ensemble,
    CompareConfig, EnsembleConfig,
};
use plcsim::rng::{derive_seed, rng_for};
use plcsim::statfit::{fit_model, FitConfig, StatModelParams};
use plcsim::tlsolver::{
    channel_response, extract_paths, impulse_response, FrequencyGrid, FrequencyResponse,
    ImpulseResponse, PathList,
};
use plcsim::topology::{generate, Topology, TopologyConfig};

#[derive(Parser, Debug)]
#[command(
    name = "plcsim",
    version,
    about = "Powerline channel modelling: oracle sweeps, statistical fits and generation"
)]
struct Cli {
    /// Cable catalog JSON; the built-in catalog is used when absent.
    #[arg(long, global = true, env = CATALOG_ENV)]
    catalog: Option<PathBuf>,

    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Random topologies.
    Topo {
        #[command(subcommand)]
        action: TopoCommand,
    },
    /// Transmission-line sweeps.
    Tl {
        #[command(subcommand)]
        action: TlCommand,
    },
    /// Oracle ensemble, one JSON file per cluster.
    Ensemble(EnsembleArgs),
    /// Fit the statistical model to an oracle ensemble.
    Fit(FitArgs),
    /// Statistical channels.
    Chan {
        #[command(subcommand)]
        action: ChanCommand,
    },
    /// Farrow sample-rate conversion of a single-column text signal.
    Resample(ResampleArgs),
    /// Shannon capacity over a directory of channels.
    Capacity(CapacityArgs),
    /// Impulsive noise observed at nodes of two clusters.
    Impulse(ImpulseArgs),
    /// Oracle and statistical ensembles side by side.
    Compare(CompareArgs),
}

#[derive(Subcommand, Debug)]
enum TopoCommand {
    Gen(TopoGenArgs),
}

#[derive(Subcommand, Debug)]
enum TlCommand {
    Sweep(TlSweepArgs),
}

#[derive(Subcommand, Debug)]
enum ChanCommand {
    Gen(ChanGenArgs),
}

#[derive(Args, Debug)]
struct TopoGenArgs {
    /// Backbone length, metres.
    #[arg(long)]
    distance: f64,
    /// Mean branches per 100 m.
    #[arg(long, default_value_t = 5.0)]
    density: f64,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TlSweepArgs {
    /// Topology JSON.
    #[arg(long)]
    topo: PathBuf,
    #[arg(long, default_value_t = 4096)]
    bins: usize,
    /// Hz.
    #[arg(long, default_value_t = 30e6)]
    bandwidth: f64,
    /// Source impedance, ohms; the topology's value when absent.
    #[arg(long)]
    zs: Option<f64>,
    /// Load impedance, ohms; the topology's value when absent.
    #[arg(long)]
    zl: Option<f64>,
    /// `.csv` for a per-bin table, JSON otherwise.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EnsembleArgs {
    /// Comma-separated cluster indices.
    #[arg(long, value_delimiter = ',', default_values_t = 1..=20)]
    clusters: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    per_cluster: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Directory written by `ensemble`.
    #[arg(long)]
    ensemble: PathBuf,
    /// Seed of the interval dither.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    min_cluster_records: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args, Debug)]
struct ChanGenArgs {
    #[arg(long)]
    params: PathBuf,
    /// Metres.
    #[arg(long)]
    distance: f64,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    cable_loss: Toggle,
    /// Drop later paths below the -20 dB analysis threshold.
    #[arg(long)]
    prune_weak_paths: bool,
    /// `.csv` for a path table, JSON otherwise.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ResampleArgs {
    /// One sample per line.
    #[arg(long = "in")]
    input: PathBuf,
    /// Input period over output period.
    #[arg(long)]
    ratio: f64,
    #[arg(long, default_value_t = 3)]
    order: u8,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CapacityArgs {
    /// Directory of JSON files from `chan gen` or `tl sweep`.
    #[arg(long)]
    channels: PathBuf,
    /// Transmit mask JSON; flat -50 dBm/Hz when absent.
    #[arg(long)]
    tx: Option<PathBuf>,
    /// Noise mask JSON; the default decaying background when absent.
    #[arg(long)]
    noise: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ImpulseArgs {
    #[arg(long)]
    params: PathBuf,
    /// Clusters hosting an observing node.
    #[arg(long, value_delimiter = ',', default_values_t = [10, 20])]
    clusters: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Independent realisations.
    #[arg(long, default_value_t = 1000)]
    count: usize,
    /// Pulse width in tap periods.
    #[arg(long, default_value_t = 8)]
    width: usize,
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [5, 10, 15, 20])]
    clusters: Vec<usize>,
    #[arg(long, default_value_t = 500)]
    per_cluster: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    bands: usize,
    #[arg(long)]
    tx: Option<PathBuf>,
    #[arg(long)]
    noise: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .parse_env("RUST_LOG")
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let catalog = match &cli.catalog {
        Some(p) => CableCatalog::load(p)
            .with_context(|| format!("loading cable catalog {}", p.display()))?,
        None => CableCatalog::builtin(),
    };
    match cli.command {
        Command::Topo {
            action: TopoCommand::Gen(a),
        } => topo_gen(a),
        Command::Tl {
            action: TlCommand::Sweep(a),
        } => tl_sweep(a, &catalog),
        Command::Ensemble(a) => ensemble(a, &catalog),
        Command::Fit(a) => fit(a, &catalog),
        Command::Chan {
            action: ChanCommand::Gen(a),
        } => chan_gen(a),
        Command::Resample(a) => resample(a),
        Command::Capacity(a) => capacity(a),
        Command::Impulse(a) => impulse(a),
        Command::Compare(a) => compare_cmd(a, &catalog),
    }
}

fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(value)?;
    s.push(b'\n');
    Ok(s)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    info!("wrote {}", path.display());
    Ok(())
}

/// Every artifact is rendered before the first one is written.
fn write_all(dir: &Path, files: &[(&str, Vec<u8>)]) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    files
        .iter()
        .try_for_each(|(name, bytes)| write_file(&dir.join(name), bytes))
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn load_params(path: &Path) -> Result<StatModelParams> {
    StatModelParams::load(path)
        .with_context(|| format!("loading model parameters {}", path.display()))
}

fn load_mask(path: Option<&PathBuf>, default: SpectralMask) -> Result<SpectralMask> {
    match path {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            SpectralMask::from_json(&text).with_context(|| format!("parsing mask {}", p.display()))
        }
        None => Ok(default),
    }
}

fn topo_gen(a: TopoGenArgs) -> Result<()> {
    if a.count == 0 {
        bail!("--count must be positive");
    }
    let config = TopologyConfig {
        density: a.density,
        ..Default::default()
    };
    let topos: Vec<Topology> = (0..a.count)
        .map(|i| {
            generate(
                a.distance,
                a.density,
                derive_seed(a.seed, &[i as u64]),
                &config,
            )
        })
        .collect::<plcsim::Result<_>>()?;
    let bytes = if a.count == 1 {
        to_json(&topos[0])?
    } else {
        to_json(&topos)?
    };
    match a.out {
        Some(p) => write_file(&p, &bytes),
        None => {
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct SweepOutput {
    response: FrequencyResponse,
    singular_bins: Vec<usize>,
    cir: ImpulseResponse,
    paths: PathList,
}

fn tl_sweep(a: TlSweepArgs, catalog: &CableCatalog) -> Result<()> {
    let text = std::fs::read_to_string(&a.topo)
        .with_context(|| format!("reading {}", a.topo.display()))?;
    let mut topo = Topology::from_json(&text)?;
    if let Some(zs) = a.zs {
        topo.source_impedance = zs;
    }
    if let Some(zl) = a.zl {
        topo.load_impedance = zl;
    }
    let grid = FrequencyGrid {
        bins: a.bins,
        bandwidth: a.bandwidth,
    };
    let sweep = channel_response(&topo, catalog, &grid)?;
    let cir = impulse_response(&sweep.response)?;
    let paths = extract_paths(&cir)?;
    let bytes = if is_csv(&a.out) {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["frequency_hz", "h_re", "h_im", "tap_re", "tap_im"])?;
        for (m, (f, h)) in sweep
            .response
            .f_grid
            .iter()
            .zip(&sweep.response.h)
            .enumerate()
        {
            let t = cir.taps[m];
            w.write_record([
                f.to_string(),
                h.re.to_string(),
                h.im.to_string(),
                t.re.to_string(),
                t.im.to_string(),
            ])?;
        }
        w.into_inner()?
    } else {
        to_json(&SweepOutput {
            response: sweep.response,
            singular_bins: sweep.singular_bins,
            cir,
            paths,
        })?
    };
    write_file(&a.out, &bytes)
}

fn ensemble(a: EnsembleArgs, catalog: &CableCatalog) -> Result<()> {
    let config = EnsembleConfig {
        clusters: a.clusters,
        per_cluster: a.per_cluster,
        seed: a.seed,
        ..Default::default()
    };
    let records = build_ensemble(&config, catalog)?;
    let files = write_ensemble(&a.out, &records)?;
    info!("{} records in {} files", records.len(), files.len());
    Ok(())
}

fn fit(a: FitArgs, catalog: &CableCatalog) -> Result<()> {
    let records = read_ensemble(&a.ensemble)
        .with_context(|| format!("reading ensemble {}", a.ensemble.display()))?;
    let mut config = FitConfig {
        seed: a.seed,
        ..Default::default()
    };
    if let Some(n) = a.min_cluster_records {
        config.min_cluster_records = n;
    }
    let params = fit_model(&records, &config, catalog)?;
    write_file(&a.out, params.to_json()?.as_bytes())
}

fn chan_gen(a: ChanGenArgs) -> Result<()> {
    let params = load_params(&a.params)?;
    let config = GeneratorConfig {
        cable_loss: matches!(a.cable_loss, Toggle::On),
        prune_weak_paths: a.prune_weak_paths,
        ..Default::default()
    };
    let generator = Generator::new(&params, config)?;
    let channels: Vec<GeneratedChannel> = (0..a.count)
        .map(|i| generator.generate(a.distance, derive_seed(a.seed, &[i as u64])))
        .collect::<plcsim::Result<_>>()?;
    let bytes = if is_csv(&a.out) {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "channel",
            "class",
            "index",
            "delay_s",
            "magnitude",
            "phase_rad",
        ])?;
        for (c, ch) in channels.iter().enumerate() {
            for p in &ch.paths.paths {
                w.write_record([
                    c.to_string(),
                    ch.class.to_string(),
                    p.index.to_string(),
                    p.delay.to_string(),
                    p.magnitude.to_string(),
                    p.phase.to_string(),
                ])?;
            }
        }
        w.into_inner()?
    } else {
        to_json(&channels)?
    };
    write_file(&a.out, &bytes)
}

fn resample(a: ResampleArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.input)
        .with_context(|| format!("reading {}", a.input.display()))?;
    let input: Vec<f64> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.trim()
                .parse::<f64>()
                .with_context(|| format!("line {}: not a number", n + 1))
        })
        .collect::<Result<_>>()?;
    let out = farrow_resample(
        &input,
        &ResampleSpec {
            ratio: a.ratio,
            order: a.order,
        },
    )?;
    let body: String = out.iter().map(|v| format!("{v}\n")).collect();
    write_file(&a.out, body.as_bytes())
}

/// Channel documents accepted by `capacity`.
#[derive(serde::Deserialize)]
#[serde(untagged)]
enum ChannelDoc {
    Generated(Vec<GeneratedChannel>),
    Single(GeneratedChannel),
    Sweep { response: FrequencyResponse },
    Response(FrequencyResponse),
}

fn read_channels(dir: &Path) -> Result<Vec<FrequencyResponse>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(&f)?;
        let doc: ChannelDoc = serde_json::from_str(&text)
            .with_context(|| format!("{} is not a channel document", f.display()))?;
        match doc {
            ChannelDoc::Generated(chs) => {
                for ch in chs {
                    out.push(ch.frequency_response()?);
                }
            }
            ChannelDoc::Single(ch) => out.push(ch.frequency_response()?),
            ChannelDoc::Sweep { response } | ChannelDoc::Response(response) => out.push(response),
        }
    }
    Ok(out)
}

fn capacity(a: CapacityArgs) -> Result<()> {
    let tx = load_mask(a.tx.as_ref(), SpectralMask::default_transmit())?;
    let noise = load_mask(a.noise.as_ref(), SpectralMask::default_noise())?;
    let channels = read_channels(&a.channels)?;
    let summary = capacity_ensemble(&channels, &tx, &noise, &DEFAULT_QUANTILES)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["capacity_bps", "probability"])?;
    for p in &summary.cdf {
        w.write_record([p.capacity.to_string(), p.probability.to_string()])?;
    }
    write_all(
        &a.out,
        &[
            ("capacity_cdf.csv", w.into_inner()?),
            ("capacity_summary.json", to_json(&summary)?),
        ],
    )
}

#[derive(Serialize)]
struct ImpulseClusterSummary {
    cluster: usize,
    realisations: usize,
    mean_peak: f64,
    mean_spread_s: f64,
}

#[derive(Serialize)]
struct ImpulseSummary {
    source_peak: f64,
    source_spread_s: f64,
    clusters: Vec<ImpulseClusterSummary>,
}

fn impulse(a: ImpulseArgs) -> Result<()> {
    let params = load_params(&a.params)?;
    if a.clusters.is_empty() || a.count == 0 {
        bail!("need at least one cluster and one realisation");
    }
    let generator = Generator::new(&params, GeneratorConfig::default())?;
    let tau = params.sample_period;
    let event = ImpulseEvent::rectangular("source", a.amplitude, a.width, tau)?;
    let source = measure_real(&event.waveform, tau)?;
    let mut rows = csv::Writer::from_writer(Vec::new());
    rows.write_record(["realisation", "cluster", "distance_m", "peak", "spread_s"])?;
    let mut sums: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for s in 0..a.count {
        let mut nodes = BTreeMap::new();
        let mut distances = BTreeMap::new();
        for &k in &a.clusters {
            let (lo, hi) = params.cluster_geometry.band(k);
            let u: f64 = rand::Rng::random(&mut rng_for(a.seed, &[s as u64, k as u64]));
            let d = hi - (hi - lo) * u;
            let name = format!("cluster_{k:02}");
            nodes.insert(
                name.clone(),
                generator.generate(d, derive_seed(a.seed, &[s as u64, k as u64, 1]))?,
            );
            distances.insert(name, (k, d));
        }
        for (name, w) in propagate_impulse(&event, &nodes)? {
            let m = measure_impulse(&w, tau)?;
            let (k, d) = distances[&name];
            rows.write_record([
                s.to_string(),
                k.to_string(),
                d.to_string(),
                m.peak.to_string(),
                m.spread.to_string(),
            ])?;
            let e = sums.entry(k).or_default();
            e.0 += m.peak;
            e.1 += m.spread;
        }
    }
    let n = a.count as f64;
    let summary = ImpulseSummary {
        source_peak: source.peak,
        source_spread_s: source.spread,
        clusters: sums
            .into_iter()
            .map(|(cluster, (p, w))| ImpulseClusterSummary {
                cluster,
                realisations: a.count,
                mean_peak: p / n,
                mean_spread_s: w / n,
            })
            .collect(),
    };
    write_all(
        &a.out,
        &[
            ("impulse.csv", rows.into_inner()?),
            ("impulse_summary.json", to_json(&summary)?),
        ],
    )
}

fn compare_cmd(a: CompareArgs, catalog: &CableCatalog) -> Result<()> {
    let params = load_params(&a.params)?;
    let defaults = CompareConfig::default();
    let config = CompareConfig {
        ensemble: EnsembleConfig {
            clusters: a.clusters,
            per_cluster: a.per_cluster,
            seed: a.seed,
            grid: params.grid,
            geometry: params.cluster_geometry,
            ..Default::default()
        },
        bands: a.bands,
        tx: load_mask(a.tx.as_ref(), defaults.tx)?,
        noise: load_mask(a.noise.as_ref(), defaults.noise)?,
        ..defaults
    };
    let report = compare(&params, &config, catalog)?;
    write_all(&a.out, &render_compare(&report)?)
}
