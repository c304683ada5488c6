//! `propforge` command line.
//!
//! Every subcommand reads and writes under the data directory and prints one
//! JSON summary line on standard output. Progress goes to standard error.

use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use propforge_core::cfm::{sample_designs, train_cfm, CfmModel};
use propforge_core::config::{ProfileName, WorkbenchConfig};
use propforge_core::dataset::{generate_dataset_with, load_dataset, save_dataset, split, LabeledDataset};
use propforge_core::geometry::{build_blade, export_sections, DesignVector, DESIGN_COLUMNS};
use propforge_core::hydro::{simulate, TargetSpec, LABEL_COLUMNS};
use propforge_core::nn::NetSpec;
use propforge_core::par::{derive_seed, Execution};
use propforge_core::studies::{run_accuracy_study, run_augmentation_study, run_diversity_study, AugmentationTable, StudyReport};
use propforge_core::surrogate::train_surrogates;
use propforge_core::{svg, Error};

#[derive(Debug, Parser)]
#[command(name = "propforge", version, about = "Inverse propeller design workbench")]
pub struct Cli {
    /// Storage root; defaults to the config file entry, then $PROPFORGE_DATA_DIR, then ./propforge-data.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    /// Hyperparameter profile; overrides the config file.
    #[arg(long, global = true, value_enum)]
    pub profile: Option<ProfileArg>,
    /// TOML file with seeds, operating grid and design ranges.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run batch work on the calling thread only.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProfileArg {
    Desk,
    #[value(name = "paper")]
    Full,
}

impl From<ProfileArg> for ProfileName {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Desk => ProfileName::Desk,
            ProfileArg::Full => ProfileName::Full,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample and simulate a labelled dataset.
    GenData {
        /// Number of valid records; defaults to the profile size.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Split the dataset into train and test files.
    Split {
        /// Training records; defaults to the profile split when the dataset
        /// has the profile size and to two thirds otherwise.
        #[arg(long)]
        n_train: Option<usize>,
    },
    /// Train the three forward surrogates on the training split.
    TrainSurrogates(#[command(flatten)] NetOverrides),
    /// Train the flow-matching generator on the training split.
    TrainCfm(#[command(flatten)] NetOverrides),
    /// Generate designs for target labels; omitted labels are free.
    Generate {
        #[command(flatten)]
        targets: TargetArgs,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV; defaults to reports/generated.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate the designs of a CSV or JSON file.
    Simulate {
        #[arg(long)]
        design_file: PathBuf,
    },
    /// Write the section table of each design in a file.
    ExportGeometry {
        #[arg(long)]
        design_file: PathBuf,
    },
    /// Evaluation studies.
    Study {
        #[command(subcommand)]
        study: Study,
    },
    /// Serve the JSON API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
}

#[derive(Debug, Subcommand)]
pub enum Study {
    /// Generate one design per test record and score the re-simulated labels.
    Accuracy,
    /// Many designs for one target; defaults to the profile target.
    Diversity {
        #[command(flatten)]
        targets: TargetArgs,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Surrogate augmentation sweep over restricted training sizes.
    Augmentation,
}

#[derive(Debug, Clone, Args)]
pub struct TargetArgs {
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub j: Option<f64>,
    #[arg(long)]
    pub kt: Option<f64>,
}

impl TargetArgs {
    fn spec(&self) -> TargetSpec {
        TargetSpec { eta_star: self.eta, j_star: self.j, kt_star: self.kt }
    }
}

/// Per-command changes to the profile network.
#[derive(Debug, Clone, Args)]
pub struct NetOverrides {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hidden_layers: Option<usize>,
    #[arg(long)]
    pub hidden_width: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl NetOverrides {
    /// Applies overrides; a changed epoch count moves the rate drop to its
    /// middle.
    fn apply(&self, mut spec: NetSpec) -> NetSpec {
        if let Some(e) = self.epochs {
            spec.schedule.epochs = e;
            spec.schedule.lr_drop_epoch = e / 2;
        }
        if let Some(b) = self.batch_size {
            spec.schedule.batch_size = b;
        }
        if let Some(l) = self.hidden_layers {
            spec.hidden_layers = l;
        }
        if let Some(w) = self.hidden_width {
            spec.hidden_width = w;
        }
        spec
    }
}

/// Failure classes mapped to exit codes 1 and 2.
#[derive(Debug)]
pub enum Failure {
    User(String),
    Internal(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::User(_) => 1,
            Failure::Internal(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::User(m) | Failure::Internal(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Integration { .. } | Error::Shape { .. } | Error::Json(_) => Failure::Internal(msg),
            Error::Io(io) if io.kind() != std::io::ErrorKind::NotFound => Failure::Internal(msg),
            _ => Failure::User(msg),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

type Outcome = Result<Value, Failure>;

pub fn resolve_config(cli: &Cli) -> Result<WorkbenchConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => WorkbenchConfig::load(path)?,
        None => {
            let mut c = WorkbenchConfig::default();
            if let Some(dir) = propforge_core::config::env_data_dir() {
                c.data_dir = dir;
            }
            c
        }
    };
    if let Some(p) = cli.profile {
        let name = ProfileName::from(p);
        cfg.profile = propforge_core::config::Profile::named(name);
    }
    if let Some(dir) = &cli.data_dir {
        cfg.data_dir = dir.clone();
    }
    if cli.sequential {
        cfg.execution = Execution::Sequential;
    }
    Ok(cfg)
}

fn load(path: &Path, what: &str) -> Result<LabeledDataset, Failure> {
    if !path.exists() {
        return Err(Failure::User(format!("{what} not found at {}", path.display())));
    }
    Ok(load_dataset(path)?)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// Reads designs from CSV with the design columns as header, or JSON holding
/// one design object or an array of them.
pub fn read_designs(path: &Path) -> Result<Vec<DesignVector>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::User(format!("cannot read design file {}: {e}", path.display())))?;
    let designs: Vec<DesignVector> = if path.extension().is_some_and(|e| e == "json") {
        let v: Value = serde_json::from_str(&text).map_err(|e| Failure::User(format!("{}: {e}", path.display())))?;
        let parsed = if v.is_array() { serde_json::from_value(v) } else { serde_json::from_value(v).map(|d| vec![d]) };
        parsed.map_err(|e| Failure::User(format!("{}: {e}", path.display())))?
    } else {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header: Vec<String> = reader.headers().map_err(|e| Failure::User(e.to_string()))?.iter().map(String::from).collect();
        if header != DESIGN_COLUMNS {
            return Err(Failure::User(format!("{}: header must be {}", path.display(), DESIGN_COLUMNS.join(","))));
        }
        reader
            .deserialize()
            .enumerate()
            .map(|(i, r)| r.map_err(|e| Failure::User(format!("{} line {}: {e}", path.display(), i + 2))))
            .collect::<Result<_, _>>()?
    };
    if designs.is_empty() {
        return Err(Failure::User(format!("{} holds no designs", path.display())));
    }
    for (i, d) in designs.iter().enumerate() {
        d.validate().map_err(|e| Failure::User(format!("design {i}: {e}")))?;
    }
    Ok(designs)
}

fn gen_data(cfg: &WorkbenchConfig, n: Option<usize>, seed: Option<u64>) -> Outcome {
    let n = n.unwrap_or(cfg.profile.data.n_samples);
    let seed = seed.unwrap_or(cfg.seeds.data);
    let g = generate_dataset_with(n, seed, &cfg.generation())?;
    let path = cfg.layout().dataset();
    save_dataset(&g.dataset, &path)?;
    Ok(
        json!({"command": "gen-data", "records": g.dataset.len(), "requested": n, "attempts": g.attempts, "dropped": g.dropped, "seed": seed, "path": path_str(&path)}),
    )
}

fn split_cmd(cfg: &WorkbenchConfig, n_train: Option<usize>) -> Outcome {
    let layout = cfg.layout();
    let d = load(&layout.dataset(), "dataset")?;
    let n_train = n_train.unwrap_or(if d.len() == cfg.profile.data.n_samples { cfg.profile.data.n_train } else { d.len() * 2 / 3 });
    let (train, test) = split(&d, n_train)?;
    save_dataset(&train, &layout.train())?;
    save_dataset(&test, &layout.test())?;
    Ok(
        json!({"command": "split", "train": train.len(), "test": test.len(), "train_path": path_str(&layout.train()), "test_path": path_str(&layout.test())}),
    )
}

fn train_surrogates_cmd(cfg: &WorkbenchConfig, o: &NetOverrides) -> Outcome {
    let layout = cfg.layout();
    let train = load(&layout.train(), "training split")?;
    let spec = o.apply(cfg.profile.surrogate);
    let seed = o.seed.unwrap_or(cfg.seeds.surrogate);
    let t = train_surrogates(&train, &spec, seed, cfg.execution)?;
    t.set.save(&layout.models())?;
    let losses: serde_json::Map<String, Value> =
        LABEL_COLUMNS.iter().zip(&t.reports).map(|(n, r)| (n.to_string(), json!(r.final_loss()))).collect();
    Ok(
        json!({"command": "train-surrogates", "records": train.len(), "seed": seed, "final_loss": losses, "dir": path_str(&layout.models())}),
    )
}

fn train_cfm_cmd(cfg: &WorkbenchConfig, o: &NetOverrides) -> Outcome {
    let layout = cfg.layout();
    let train = load(&layout.train(), "training split")?;
    let spec = o.apply(cfg.profile.cfm);
    let seed = o.seed.unwrap_or(cfg.seeds.cfm);
    let t = train_cfm(&train, &spec, seed)?;
    t.model.save(&layout.cfm_checkpoint())?;
    Ok(
        json!({"command": "train-cfm", "records": train.len(), "seed": seed, "epochs": spec.schedule.epochs, "final_loss": t.report.final_loss(), "path": path_str(&layout.cfm_checkpoint())}),
    )
}

fn generate_cmd(
    cfg: &WorkbenchConfig,
    targets: &TargetArgs,
    count: usize,
    steps: Option<usize>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Outcome {
    let layout = cfg.layout();
    let spec = targets.spec();
    spec.validate()?;
    if count == 0 {
        return Err(Failure::User("count must be at least 1".into()));
    }
    let model = CfmModel::load(&layout.cfm_checkpoint())?;
    let seed = seed.unwrap_or(cfg.seeds.study);
    let steps = steps.unwrap_or(cfg.profile.steps);
    let report = sample_designs(&model, &spec, count, steps, seed, cfg.execution)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| layout.reports().join("generated.csv"));
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    write_file(&path, &buf)?;
    let clamped = report.clamped.iter().filter(|c| c.any()).count();
    Ok(json!({"command": "generate", "count": report.len(), "clamped": clamped, "seed": seed, "steps": steps, "path": path_str(&path)}))
}

fn simulate_cmd(cfg: &WorkbenchConfig, design_file: &Path) -> Outcome {
    let designs = read_designs(design_file)?;
    let dir = cfg.layout().reports();
    let mut results = Vec::new();
    for (k, p) in designs.iter().enumerate() {
        let sim = simulate(p, &cfg.grid)?;
        let curve_path = dir.join(format!("simulation_{k}.csv"));
        write_file(&curve_path, sim.curve.to_csv().as_bytes())?;
        write_file(&dir.join(format!("simulation_{k}.svg")), svg::open_water_svg(&sim.curve).as_bytes())?;
        results.push(match sim.labels {
            Ok(l) => json!({"design": p, "labels": l, "curve": path_str(&curve_path)}),
            Err(e) => json!({"design": p, "labels": {"invalid": e, "message": e.to_string()}, "curve": path_str(&curve_path)}),
        });
    }
    Ok(json!({"command": "simulate", "designs": results}))
}

fn export_geometry_cmd(cfg: &WorkbenchConfig, design_file: &Path) -> Outcome {
    let designs = read_designs(design_file)?;
    let dir = cfg.layout().reports();
    let mut paths = Vec::new();
    for (k, p) in designs.iter().enumerate() {
        let table = export_sections(&build_blade(p)?);
        let path = dir.join(format!("geometry_{k}.csv"));
        write_file(&path, table.to_csv().as_bytes())?;
        paths.push(path_str(&path));
    }
    Ok(json!({"command": "export-geometry", "designs": designs.len(), "paths": paths}))
}

fn write_study(dir: &Path, r: &StudyReport) -> Result<PathBuf, Failure> {
    let path = dir.join(format!("{}.json", r.study));
    write_file(&path, &serde_json::to_vec_pretty(r).map_err(Error::from)?)?;
    let mut parity = Vec::new();
    r.write_parity_csv(&mut parity)?;
    write_file(&dir.join(format!("{}_parity.csv", r.study)), &parity)?;
    for (k, name) in LABEL_COLUMNS.iter().enumerate() {
        if r.mre[k].is_some() {
            write_file(&dir.join(format!("{}_parity_{name}.svg", r.study)), svg::parity_svg(r, k).as_bytes())?;
        }
    }
    for h in &r.histograms {
        write_file(&dir.join(format!("{}_hist_{}.svg", r.study, h.name)), svg::histogram_svg(h).as_bytes())?;
    }
    Ok(path)
}

fn mre_json(mre: &[Option<f64>; 3]) -> Value {
    Value::Object(LABEL_COLUMNS.iter().zip(mre).map(|(n, m)| (n.to_string(), json!(m))).collect())
}

fn study_cmd(cfg: &WorkbenchConfig, study: &Study) -> Outcome {
    let layout = cfg.layout();
    let dir = layout.reports();
    match study {
        Study::Accuracy => {
            let model = CfmModel::load(&layout.cfm_checkpoint())?;
            let test = load(&layout.test(), "test split")?;
            let r = run_accuracy_study(&model, &test, &cfg.study())?;
            let path = write_study(&dir, &r)?;
            Ok(
                json!({"command": "study accuracy", "requested": r.requested, "valid": r.valid, "mre": mre_json(&r.mre), "path": path_str(&path)}),
            )
        }
        Study::Diversity { targets, count } => {
            let model = CfmModel::load(&layout.cfm_checkpoint())?;
            let spec = if targets.spec().n_targeted() == 0 { cfg.profile.diversity.target } else { targets.spec() };
            let n = count.unwrap_or(cfg.profile.diversity.n);
            let r = run_diversity_study(&model, &spec, n, &cfg.study())?;
            let path = write_study(&dir, &r)?;
            let within = r.fraction_within(0.1);
            Ok(json!({
                "command": "study diversity",
                "requested": r.requested,
                "valid": r.valid,
                "blade_counts": r.distinct_blade_counts(),
                "within_10pct": mre_json(&within),
                "mre": mre_json(&r.mre),
                "path": path_str(&path),
            }))
        }
        Study::Augmentation => {
            let base = load(&layout.train(), "training split")?;
            let test = load(&layout.test(), "test split")?;
            let mut tables = Vec::new();
            for r in 0..cfg.profile.augmentation.repeats.max(1) {
                let mut a = cfg.augmentation();
                a.study.seed = derive_seed(cfg.seeds.study, r as u64);
                let t = run_augmentation_study(&base, &test, &a)?;
                write_table(&dir, r, &t)?;
                tables.push(t);
            }
            let summary: Vec<Value> =
                tables.iter().map(|t| json!({"seed": t.seed, "improvement": t.improvement, "base_mre": t.base_mre})).collect();
            Ok(json!({"command": "study augmentation", "runs": summary, "dir": path_str(&dir)}))
        }
    }
}

fn write_table(dir: &Path, run: usize, t: &AugmentationTable) -> Result<(), Failure> {
    let mut buf = Vec::new();
    t.write_csv(&mut buf)?;
    write_file(&dir.join(format!("augmentation_{run}.csv")), &buf)?;
    let mut buf = Vec::new();
    t.write_mre_csv(&mut buf)?;
    write_file(&dir.join(format!("augmentation_{run}_mre.csv")), &buf)?;
    for (k, name) in LABEL_COLUMNS.iter().enumerate() {
        write_file(&dir.join(format!("augmentation_{run}_{name}.svg")), svg::mre_vs_d_svg(t, k).as_bytes())?;
    }
    Ok(())
}

fn serve_cmd(cfg: &WorkbenchConfig, host: std::net::IpAddr, port: u16) -> Outcome {
    let state = Arc::new(propforge_service::AppState::from_data_dir(&cfg.data_dir, cfg.grid.clone()));
    let addr = SocketAddr::new(host, port);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Internal(e.to_string()))?;
    rt.block_on(propforge_service::serve(state, addr)).map_err(|e| Failure::User(format!("cannot serve on {addr}: {e}")))?;
    Ok(json!({"command": "serve", "address": addr.to_string()}))
}

pub fn dispatch(cli: &Cli) -> Outcome {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::GenData { n, seed } => gen_data(&cfg, *n, *seed),
        Command::Split { n_train } => split_cmd(&cfg, *n_train),
        Command::TrainSurrogates(o) => train_surrogates_cmd(&cfg, o),
        Command::TrainCfm(o) => train_cfm_cmd(&cfg, o),
        Command::Generate { targets, count, steps, seed, out } => generate_cmd(&cfg, targets, *count, *steps, *seed, out.as_deref()),
        Command::Simulate { design_file } => simulate_cmd(&cfg, design_file),
        Command::ExportGeometry { design_file } => export_geometry_cmd(&cfg, design_file),
        Command::Study { study } => study_cmd(&cfg, study),
        Command::Serve { port, host } => serve_cmd(&cfg, *host, *port),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return 1;
            }
            let _ = write!(out, "{}", e.render());
            return 0;
        }
    };
    match dispatch(&cli) {
        Ok(summary) => {
            let _ = writeln!(out, "{summary}");
            0
        }
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message());
            f.exit_code()
        }
    }
}
