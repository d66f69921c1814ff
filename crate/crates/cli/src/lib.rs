//! Command-line front end: argument parsing and subcommand dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mcvd_core::channel::{hit_probability, invert_distance, ChannelParams};
use mcvd_core::clustering::Method;
use mcvd_core::config::RunConfig;
use mcvd_core::dataset::{
    gen_dataset, generate_scenario, load_training_samples, open_dataset, write_clusters_csv,
    Scenario, ScenarioSeeds, Split,
};
use mcvd_core::eval::{run_report, CenterMethod, MetricsReport, ReportOptions};
use mcvd_core::nn::{self, train, Arch, Frame, ModelKind};
use mcvd_core::sim::Stepping;
use mcvd_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "mcvd", version, about = "Multi-transmitter localization for molecular communication via diffusion")]
pub struct Cli {
    /// Run configuration (TOML). Flags override values from the file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Start from the paper's molecule count and step size instead of the desk-scale defaults.
    #[arg(long, global = true, value_enum)]
    pub preset: Option<Preset>,
    /// Master seed for simulation and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Increase log detail (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one scenario into a directory.
    Simulate(SimulateArgs),
    /// Simulate, cluster and store a dataset of scenarios (resumable).
    GenDataset(GenDatasetArgs),
    /// Cluster one scenario directory.
    Cluster(ClusterArgs),
    /// Train AngleNN or SizeNN on a dataset.
    Train(TrainArgs),
    /// Evaluate every method on a dataset and write the report CSVs.
    Eval(EvalArgs),
    /// First-hit probability, or its inverse with --invert.
    Fhit(FhitArgs),
}

#[derive(Debug, Args, Default)]
pub struct PhysicalFlags {
    /// Receiver radius (µm).
    #[arg(long)]
    pub rx_radius: Option<f64>,
    /// Diffusion coefficient (µm²/s).
    #[arg(long)]
    pub diffusion: Option<f64>,
    /// Observation window (s).
    #[arg(long)]
    pub obs_time: Option<f64>,
    /// Simulation step (s).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Closest transmitter distance from the receiver center (µm).
    #[arg(long)]
    pub d_min: Option<f64>,
    /// Farthest transmitter distance (µm).
    #[arg(long)]
    pub d_max: Option<f64>,
    /// Molecules released per transmitter.
    #[arg(long)]
    pub n_molecules: Option<u64>,
    /// Use fixed time steps everywhere instead of far-field step merging.
    #[arg(long)]
    pub fixed_steps: bool,
    /// Number of transmitters.
    #[arg(long)]
    pub k: Option<usize>,
    /// Minimum angle between transmitter directions (degrees).
    #[arg(long)]
    pub min_separation: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub physical: PhysicalFlags,
    /// Scenario index (selects the placement and molecule streams).
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    #[command(flatten)]
    pub physical: PhysicalFlags,
    /// Number of scenarios to generate.
    #[arg(long)]
    pub scenarios: Option<usize>,
    /// Dataset directory (default: output.dataset_dir from the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    /// Scenario directory holding meta.toml and hits.csv.
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, default_value = "kmeans")]
    pub method: String,
    #[arg(long)]
    pub knn: Option<usize>,
    #[arg(long)]
    pub support_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Which {
    Angle,
    Size,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub which: Which,
    /// Transmitter count the model is built for; must match the dataset.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output weights file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Coordinate frame of the network inputs (canonical or ambient).
    #[arg(long)]
    pub frame: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory for the report CSVs (default: output.report_dir from the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub angle_weights: Option<PathBuf>,
    #[arg(long)]
    pub size_weights: Option<PathBuf>,
    /// Scenarios to evaluate: all, train, val or test.
    #[arg(long, default_value = "all")]
    pub split: String,
    /// Comma-separated direction methods to report (default: all available).
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long)]
    pub knn: Option<usize>,
    #[arg(long)]
    pub support_fraction: Option<f64>,
    #[arg(long)]
    pub bin_width: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FhitArgs {
    /// Transmitter distance from the receiver center (µm).
    #[arg(long)]
    pub d: Option<f64>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long = "D")]
    pub diffusion: Option<f64>,
    #[arg(long)]
    pub t: Option<f64>,
    /// Print the distance whose first-hit probability is this value.
    #[arg(long, conflicts_with = "d")]
    pub invert: Option<f64>,
    /// Upper end of the distance search (µm).
    #[arg(long)]
    pub d_max: Option<f64>,
}

fn set<T>(dst: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *dst = v;
    }
}

impl PhysicalFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        let p = &mut cfg.physical;
        set(&mut p.rx_radius_um, self.rx_radius);
        set(&mut p.diffusion_coeff, self.diffusion);
        set(&mut p.obs_time_s, self.obs_time);
        set(&mut p.dt_s, self.dt);
        set(&mut p.d_min_um, self.d_min);
        set(&mut p.d_max_um, self.d_max);
        set(&mut p.n_molecules_per_tx, self.n_molecules);
        if self.fixed_steps {
            p.stepping = Stepping::Fixed;
        }
        set(&mut cfg.experiment.k, self.k);
        set(&mut cfg.experiment.min_separation_deg, self.min_separation);
    }
}

/// Build the effective configuration: preset or file, then flag overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match (&cli.config, cli.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(Preset::Paper)) => RunConfig::paper(),
        (None, _) => RunConfig::default(),
    };
    if cli.config.is_some() && cli.preset == Some(Preset::Paper) {
        let paper = RunConfig::paper();
        cfg.physical.n_molecules_per_tx = paper.physical.n_molecules_per_tx;
        cfg.physical.dt_s = paper.physical.dt_s;
    }
    if let Some(seed) = cli.seed {
        cfg.experiment.seed = seed;
        cfg.training.seed = seed;
    }
    match &cli.command {
        Command::Simulate(a) => a.physical.apply(&mut cfg),
        Command::GenDataset(a) => {
            a.physical.apply(&mut cfg);
            set(&mut cfg.experiment.scenarios, a.scenarios);
            set(&mut cfg.output.dataset_dir, a.out.clone());
        }
        Command::Cluster(a) => {
            set(&mut cfg.methods.k_nn, a.knn);
            set(&mut cfg.methods.support_fraction, a.support_fraction);
        }
        Command::Train(a) => {
            let t = &mut cfg.training;
            set(&mut t.learning_rate, a.learning_rate);
            set(&mut t.batch_size, a.batch_size);
            set(&mut t.epochs, a.epochs);
            set(&mut t.dropout_rate, a.dropout);
            set(&mut t.weight_decay, a.weight_decay);
            set(&mut t.patience, a.patience);
            set(&mut cfg.network.hidden, a.hidden);
            set(&mut cfg.network.blocks, a.blocks);
            if let Some(f) = &a.frame {
                cfg.network.frame = Frame::from_slug(f)
                    .ok_or_else(|| Error::config("network.frame", format!("unknown frame `{f}`")))?;
            }
        }
        Command::Eval(a) => {
            set(&mut cfg.methods.k_nn, a.knn);
            set(&mut cfg.methods.support_fraction, a.support_fraction);
            set(&mut cfg.methods.imbalance_bin_width, a.bin_width);
            set(&mut cfg.output.report_dir, a.out.clone());
        }
        Command::Fhit(a) => {
            set(&mut cfg.physical.rx_radius_um, a.r);
            set(&mut cfg.physical.diffusion_coeff, a.diffusion);
            set(&mut cfg.physical.obs_time_s, a.t);
            set(&mut cfg.methods.inversion_d_max_um, a.d_max);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_fhit(a: &FhitArgs, cfg: &RunConfig, out: &mut dyn std::io::Write) -> Result<()> {
    let params = ChannelParams::new(
        cfg.physical.rx_radius_um,
        cfg.physical.diffusion_coeff,
        cfg.physical.obs_time_s,
    )?;
    let value = match (a.d, a.invert) {
        (Some(d), None) => hit_probability(d, &params)?.value(),
        (None, Some(p)) => invert_distance(p, &params, cfg.methods.inversion_d_max_um)?,
        _ => return Err(Error::InvalidInput("fhit needs exactly one of --d or --invert".into())),
    };
    writeln!(out, "{value:?}").map_err(|e| Error::io("<stdout>", e))
}

fn cmd_simulate(a: &SimulateArgs, cfg: &RunConfig, out: &mut dyn std::io::Write) -> Result<()> {
    let meta = generate_scenario(cfg, &a.out, a.index)?;
    let total: u64 = meta.true_sizes.iter().sum();
    writeln!(
        out,
        "{}: {} hits from {} transmitters ({} still free)",
        a.out.display(),
        total,
        meta.config.num_tx(),
        meta.surviving
    )
    .map_err(|e| Error::io("<stdout>", e))
}

fn cmd_gen_dataset(cfg: &RunConfig, out: &mut dyn std::io::Write) -> Result<()> {
    let root = &cfg.output.dataset_dir;
    let m = gen_dataset(cfg, root)?;
    writeln!(
        out,
        "{}: {} scenarios, K = {}, config {}",
        root.display(),
        m.scenarios.len(),
        m.k(),
        &m.config_hash[..16]
    )
    .map_err(|e| Error::io("<stdout>", e))
}

fn cmd_cluster(a: &ClusterArgs, cli_seed: Option<u64>, cfg: &RunConfig, out: &mut dyn std::io::Write) -> Result<()> {
    let method = Method::from_slug(&a.method)
        .ok_or_else(|| Error::InvalidInput(format!("unknown method `{}`", a.method)))?;
    let mut scn = Scenario::load(&a.scenario)?;
    if let Some(seed) = cli_seed {
        scn.meta.seeds = ScenarioSeeds::new(seed, scn.meta.index);
    }
    let cs = scn.cluster(method, cfg.methods.k_nn, cfg.methods.support_fraction)?;
    let path = a.scenario.join(format!("clusters_{}.csv", method.slug()));
    write_clusters_csv(&path, &cs)?;
    let fallbacks = cs.clusters.iter().filter(|c| c.fallback).count();
    writeln!(out, "{}: {} clusters, {} fallbacks", path.display(), cs.k(), fallbacks)
        .map_err(|e| Error::io("<stdout>", e))
}

fn cmd_train(a: &TrainArgs, cfg: &RunConfig, out: &mut dyn std::io::Write) -> Result<()> {
    let manifest = open_dataset(&a.dataset)?;
    let k = manifest.k();
    if let Some(want) = a.k {
        if want != k {
            return Err(Error::InvalidInput(format!(
                "--k {want} does not match the dataset at {} (K = {k})",
                a.dataset.display()
            )));
        }
    }
    let frame = cfg.network.frame;
    let train_set = load_training_samples(&a.dataset, Split::Train, frame)?;
    let val_set = load_training_samples(&a.dataset, Split::Val, frame)?;
    let kind = match a.which {
        Which::Angle => ModelKind::Angle,
        Which::Size => ModelKind::Size,
    };
    let arch = Arch {
        hidden: cfg.network.hidden,
        blocks: cfg.network.blocks,
        frame,
        ..Arch::new(kind, k)
    };
    let outcome = train(&train_set, &val_set, arch, &cfg.training)?;
    nn::io::save(&outcome.weights, &a.out)?;
    let m = &outcome.weights.meta;
    writeln!(
        out,
        "{}: {} epochs, best validation loss {:e}",
        a.out.display(),
        m.epochs_run,
        m.final_val_loss
    )
    .map_err(|e| Error::io("<stdout>", e))
}

fn load_weights(path: &Option<PathBuf>) -> Result<Option<nn::ModelWeights>> {
    path.as_deref().map(nn::io::load).transpose()
}

pub fn summary_table(report: &MetricsReport) -> String {
    let mut s = format!("K = {}, split {}, {} scenarios\n", report.k, report.split.slug(), report.scenarios.len());
    for m in &report.center_methods {
        let a = report.angular_summary(*m);
        s += &format!(
            "  {:<18} mean angular error {:>8} deg\n",
            m.slug(),
            a.mean_deg.map_or("-".into(), |v| format!("{v:.3}"))
        );
    }
    for z in &report.size_methods {
        if let Some(x) = report.size_summary(*z) {
            s += &format!(
                "  {:<18} size MAPE {:>8} %  RMSE {:.2}\n",
                z.slug(),
                x.mape_pct.map_or("-".into(), |v| format!("{v:.3}")),
                x.rmse
            );
        }
    }
    for (c, z) in report.pairs() {
        let l = report.localization_summary((c, z));
        s += &format!(
            "  {:<18} + {:<7} localization MAPE {:>8} %\n",
            c.slug(),
            z.slug(),
            l.mape_pct.map_or("-".into(), |v| format!("{v:.3}"))
        );
    }
    s
}

fn cmd_eval(a: &EvalArgs, cfg: &RunConfig, out: &mut dyn std::io::Write) -> Result<()> {
    let split = Split::from_slug(&a.split)
        .ok_or_else(|| Error::InvalidInput(format!("unknown split `{}`", a.split)))?;
    let methods = a
        .methods
        .as_ref()
        .map(|v| {
            v.iter()
                .map(|s| {
                    CenterMethod::from_slug(s.trim())
                        .ok_or_else(|| Error::InvalidInput(format!("unknown method `{s}`")))
                })
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    let opts = ReportOptions {
        split,
        angle_weights: load_weights(&a.angle_weights)?,
        size_weights: load_weights(&a.size_weights)?,
        methods,
        ..ReportOptions::from_config(cfg)
    };
    let report = run_report(&a.dataset, &opts)?;
    let dir = &cfg.output.report_dir;
    let files = report.write_csvs(dir)?;
    write!(out, "{}", summary_table(&report)).map_err(|e| Error::io("<stdout>", e))?;
    writeln!(out, "wrote {} files to {}", files.len(), dir.display()).map_err(|e| Error::io("<stdout>", e))
}

fn dispatch(cli: &Cli, cfg: &RunConfig, out: &mut Vec<u8>) -> Result<()> {
    match &cli.command {
        Command::Fhit(a) => cmd_fhit(a, cfg, out),
        Command::Simulate(a) => cmd_simulate(a, cfg, out),
        Command::GenDataset(_) => cmd_gen_dataset(cfg, out),
        Command::Cluster(a) => cmd_cluster(a, cli.seed, cfg, out),
        Command::Train(a) => cmd_train(a, cfg, out),
        Command::Eval(a) => cmd_eval(a, cfg, out),
    }
}

/// Parse `args`, run the command, and return the process exit code.
/// Usage errors exit with 2, runtime errors with 1 after printing
/// `error[<category>]: <message>` to stderr.
pub fn run<I, T>(args: I, out: &mut dyn std::io::Write) -> i32
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
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    let result = (|| {
        let cfg = resolve_config(&cli)?;
        let mut pool = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cli.threads {
            pool = pool.num_threads(n.max(1));
        }
        let pool = pool
            .build()
            .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
        // Command output is buffered so the worker pool never touches stdout.
        let mut buf = Vec::new();
        pool.install(|| dispatch(&cli, &cfg, &mut buf))?;
        out.write_all(&buf).map_err(|e| Error::io("<stdout>", e))
    })();
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            1
        }
    }
}
