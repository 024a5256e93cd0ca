//! The `dimp` command line: argument types, one function per subcommand
//! and the run manifest every command leaves behind.
//!
//! Exit codes: 0 success, 1 I/O or corrupt input, 2 configuration or
//! validation error, 3 numeric abort, 4 incompatible artifact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{attention_concentration, logits_with_gap, fano_lower_bound, posterior_collapse_check, snr_weight_check, verify_prop_info_loss};
use crate::diffusion::make_cosine_schedule;
use crate::error::{DimpError, Result};
use crate::geom::read_dpc1;
use crate::losses::LossReport;
use crate::motion::{decile_grid, is_u_shaped, profile_csv, sample_diversity, timestep_error_profile, write_mot1};
use crate::rng;
use crate::sampling::sample_motion;
use crate::synthdata::{gen_dataset, Dataset, GeneratorParams, Split};
use crate::training::{linear_probe, load_checkpoint, metrics_header, metrics_row, save_checkpoint, ProbeConfig, ProbeReport, TrainConfig, Trainer, Variant};
use crate::verify::run_suite;

pub const SEED_ENV: &str = "DIMP_SEED";

#[derive(Debug, Parser)]
#[command(name = "dimp", version, about = "Diffusion masked pretraining for dynamic point clouds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset.
    GenData(GenDataArgs),
    /// Pretrain a model and write metrics and a checkpoint.
    Pretrain(PretrainArgs),
    /// Linear probe on frozen encoder features.
    Probe(ProbeArgs),
    /// Draw motion samples for one sequence.
    SampleMotion(SampleArgs),
    /// Numeric theory checks and the timestep error profile.
    Analyze(AnalyzeArgs),
    /// Run the invariant suite.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with `count`, `train_fraction`, `test_fraction`, `seed` and
    /// a `[generator]` table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// TrainConfig TOML; defaults apply when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "dimp")]
    pub variant: String,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Continue from a checkpoint with optimizer state; config flags other
    /// than `--steps` are ignored.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Also render the metrics as SVG line charts.
    #[arg(long)]
    pub plots: bool,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// One or more checkpoints; several give a per-variant comparison.
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Config the checkpoints must match.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// DPC1 sequence file.
    #[arg(long)]
    pub sequence: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CheckKind {
    All,
    Mi,
    Fano,
    Attn,
    Posterior,
    Snr,
    Profile,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub check: CheckKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Test items used for the profile.
    #[arg(long, default_value_t = 32)]
    pub profile_items: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Flag, then `DIMP_SEED`, then the config value.
pub fn resolve_seed(flag: Option<u64>, config: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| DimpError::Config {
            field: SEED_ENV.into(),
            message: format!("`{v}` is not an unsigned integer"),
        }),
        Err(_) => Ok(config),
    }
}

/// Record of one command invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub config_hash: Option<String>,
    pub seed: u64,
    /// SHA-256 over the input files in order.
    pub input_hash: String,
    pub outputs: Vec<PathBuf>,
    pub start_time: f64,
    pub end_time: f64,
    pub exit_status: i32,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_files(paths: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        let bytes = fs::read(p).map_err(|e| DimpError::io(p, e))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

/// Write `bytes` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| DimpError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| DimpError::io(path, e))
}

struct Recorder {
    manifest: RunManifest,
    dir: PathBuf,
}

impl Recorder {
    fn start(command: &str, dir: &Path, config: Option<&Path>, inputs: &[PathBuf]) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| DimpError::io(dir, e))?;
        let config_hash = config.map(|p| hash_files(&[p.to_path_buf()])).transpose()?;
        Ok(Self {
            manifest: RunManifest {
                command: command.into(),
                config_path: config.map(Path::to_path_buf),
                config_hash,
                seed: 0,
                input_hash: hash_files(inputs)?,
                outputs: Vec::new(),
                start_time: now(),
                end_time: 0.0,
                exit_status: 0,
            },
            dir: dir.to_path_buf(),
        })
    }

    fn output(&mut self, path: PathBuf) {
        self.manifest.outputs.push(path);
    }

    fn write(&mut self, path: PathBuf, bytes: &[u8]) -> Result<()> {
        write_atomic(&path, bytes)?;
        self.output(path);
        Ok(())
    }

    /// Write the manifest; outputs that do not exist are dropped.
    fn finish<T>(mut self, result: Result<T>) -> Result<T> {
        self.manifest.end_time = now();
        self.manifest.exit_status = result.as_ref().map_or_else(DimpError::exit_code, |_| 0);
        self.manifest.outputs.retain(|p| p.exists());
        let path = self.dir.join("run_manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest)?;
        write_atomic(&path, text.as_bytes())?;
        result
    }
}

/// Run a parsed command; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::GenData(a) => cmd_gen_data(&a).map(|_| 0),
        Command::Pretrain(a) => cmd_pretrain(&a).map(|_| 0),
        Command::Probe(a) => cmd_probe(&a).map(|_| 0),
        Command::SampleMotion(a) => cmd_sample_motion(&a).map(|_| 0),
        Command::Analyze(a) => cmd_analyze(&a).map(|_| 0),
        Command::Verify(a) => cmd_verify(&a).map(|ok| if ok { 0 } else { 1 }),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Dataset generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub count: usize,
    pub train_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
    pub generator: GeneratorParams,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            count: 512,
            train_fraction: 0.8,
            test_fraction: 0.2,
            seed: 0,
            generator: GeneratorParams::default(),
        }
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| DimpError::io(path, e))?;
    toml::from_str(&text).map_err(|e| DimpError::Config {
        field: "config".into(),
        message: format!("{}: {e}", path.display()),
    })
}

pub fn cmd_gen_data(a: &GenDataArgs) -> Result<Dataset> {
    let inputs: Vec<PathBuf> = a.config.iter().cloned().collect();
    let mut rec = Recorder::start("gen-data", &a.out, a.config.as_deref(), &inputs)?;
    let result = (|| {
        let mut cfg = match &a.config {
            Some(p) => read_toml::<DataConfig>(p)?,
            None => DataConfig::default(),
        };
        cfg.count = a.count.unwrap_or(cfg.count);
        cfg.train_fraction = a.train_fraction.unwrap_or(cfg.train_fraction);
        cfg.test_fraction = a.test_fraction.unwrap_or(cfg.test_fraction);
        cfg.seed = resolve_seed(a.seed, cfg.seed)?;
        rec.manifest.seed = cfg.seed;
        let manifest = gen_dataset(
            &cfg.generator,
            cfg.count,
            (cfg.train_fraction, cfg.test_fraction),
            cfg.seed,
            &a.out,
        )?;
        for it in &manifest.items {
            rec.output(a.out.join(&it.path));
            rec.output(a.out.join(&it.motion_path));
        }
        rec.output(a.out.join("manifest.json"));
        let ds = Dataset::load(&a.out)?;
        let (tr, te) = (ds.indices(Split::Train).len(), ds.indices(Split::Test).len());
        println!("{} sequences ({tr} train, {te} test)", ds.items.len());
        for (label, n) in ds.class_counts() {
            println!("class {label} {}: {n}", ds.manifest.classes[label]);
        }
        Ok(ds)
    })();
    rec.finish(result)
}

/// Effective training config: file, then variant, then flags.
pub fn pretrain_config(a: &PretrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    Variant::parse(&a.variant)?.apply(&mut cfg);
    if let Some(v) = &a.data {
        cfg.data = v.clone();
    }
    cfg.steps = a.steps.unwrap_or(cfg.steps);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.optimizer.lr = a.lr.unwrap_or(cfg.optimizer.lr);
    cfg.optimizer.warmup_steps = a.warmup_steps.unwrap_or(cfg.optimizer.warmup_steps);
    cfg.checkpoint_every = a.checkpoint_every.unwrap_or(cfg.checkpoint_every);
    cfg.seed = resolve_seed(a.seed, cfg.seed)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_pretrain(a: &PretrainArgs) -> Result<Vec<LossReport>> {
    let (mut trainer, data) = match &a.resume {
        Some(ckpt) => {
            let mut t = Trainer::from_checkpoint(&load_checkpoint(ckpt)?)?;
            if let Some(s) = a.steps {
                t.config.steps = s;
            }
            let data = a.data.clone().unwrap_or_else(|| t.config.data.clone());
            (t, data)
        }
        None => {
            let cfg = pretrain_config(a)?;
            let data = cfg.data.clone();
            (Trainer::new(cfg)?, data)
        }
    };
    let mut inputs: Vec<PathBuf> = a.config.iter().cloned().collect();
    inputs.extend(a.resume.iter().cloned());
    inputs.push(data.join("manifest.json"));
    let mut rec = Recorder::start("pretrain", &a.out, a.config.as_deref(), &inputs)?;
    rec.manifest.seed = trainer.config.seed;
    let result = (|| {
        let dataset = Dataset::load(&data)?;
        rec.write(a.out.join("config.toml"), trainer.config.to_toml_string().as_bytes())?;
        let h = trainer.config.model.h;
        let mut csv = metrics_header(h);
        let mut reports = Vec::new();
        let start = std::time::Instant::now();
        let total = trainer.config.steps;
        while trainer.step < total {
            let lr = trainer.lr();
            match trainer.train_one(&dataset) {
                Ok(r) => {
                    csv.push_str(&metrics_row(trainer.step, &r, lr, start.elapsed().as_secs_f64(), h));
                    reports.push(r);
                }
                Err(e) => {
                    rec.write(a.out.join("metrics.csv"), csv.as_bytes())?;
                    if let Some(last) = reports.last() {
                        eprintln!("last loss report: {last:?}");
                    }
                    return Err(e);
                }
            }
            let every = trainer.config.checkpoint_every;
            if every > 0 && trainer.step % every == 0 && trainer.step < total {
                rec.write_checkpoint(&a.out.join(format!("step_{:06}.ckpt", trainer.step)), &trainer)?;
            }
        }
        rec.write(a.out.join("metrics.csv"), csv.as_bytes())?;
        rec.write_checkpoint(&a.out.join("final.ckpt"), &trainer)?;
        if a.plots {
            let svg = metrics_svg(&csv, &["l_total", "l_cen", "l_geo", "l_mot"])?;
            rec.write(a.out.join("metrics.svg"), svg.as_bytes())?;
        }
        if let Some(r) = reports.last() {
            println!(
                "{} steps, final l_total {:.4} (l_cen {:.4}, l_geo {:.4}, l_mot {:.4})",
                trainer.step, r.l_total, r.l_cen, r.l_geo, r.l_mot
            );
        }
        Ok(reports)
    })();
    rec.finish(result)
}

impl Recorder {
    fn write_checkpoint(&mut self, path: &Path, t: &Trainer) -> Result<()> {
        save_checkpoint(&t.checkpoint(), path)?;
        self.output(path.to_path_buf());
        Ok(())
    }
}

pub const PROBE_HEADER: &str = "checkpoint,variant,seed,overall,pair_shared_mean,pair_control\n";

pub fn cmd_probe(a: &ProbeArgs) -> Result<Vec<(Variant, u64, ProbeReport)>> {
    let mut inputs = a.checkpoint.clone();
    inputs.push(a.data.join("manifest.json"));
    let dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut rec = Recorder::start("probe", dir, a.config.as_deref(), &inputs)?;
    let result = (|| {
        let expected = a.config.as_deref().map(TrainConfig::load).transpose()?;
        let dataset = Dataset::load(&a.data)?;
        let mut cfg = ProbeConfig::default();
        cfg.iterations = a.iterations.unwrap_or(cfg.iterations);
        let mut csv = String::from(PROBE_HEADER);
        let mut rows = Vec::new();
        for path in &a.checkpoint {
            let ckpt = load_checkpoint(path)?;
            if let Some(e) = &expected {
                if e.model != ckpt.config.model {
                    return Err(DimpError::Incompatible(format!(
                        "{} was trained with a different model config",
                        path.display()
                    )));
                }
            }
            check_dataset(&ckpt.config, &dataset)?;
            let state = ckpt.state()?.encoder_only();
            let report = linear_probe(&state, &dataset, &cfg)?;
            let variant = Variant::of(&ckpt.config.model);
            writeln!(
                csv,
                "{},{},{},{},{},{}",
                path.display(),
                variant.name(),
                ckpt.config.seed,
                report.overall,
                report.pair_shared_mean,
                report.pair_control
            )
            .expect("write to string");
            println!(
                "{}: overall {:.3}, shared-mean pair {:.3}, control pair {:.3}",
                path.display(),
                report.overall,
                report.pair_shared_mean,
                report.pair_control
            );
            rows.push((variant, ckpt.config.seed, report));
        }
        rec.write(a.out.clone(), csv.as_bytes())?;
        let table = comparison_table(&rows);
        if rows.iter().map(|r| r.0).collect::<std::collections::HashSet<_>>().len() > 1 {
            print!("{table}");
            let mut cmp = a.out.as_os_str().to_owned();
            cmp.push(".comparison.csv");
            rec.write(PathBuf::from(cmp), table.as_bytes())?;
        }
        Ok(rows)
    })();
    rec.finish(result)
}

/// Per-variant means over seeds.
pub fn comparison_table(rows: &[(Variant, u64, ProbeReport)]) -> String {
    let mut groups: BTreeMap<&str, Vec<&ProbeReport>> = BTreeMap::new();
    for (v, _, r) in rows {
        groups.entry(v.name()).or_default().push(r);
    }
    let mut s = String::from("variant,seeds,overall,pair_shared_mean,pair_control\n");
    for (name, rs) in groups {
        let n = rs.len() as f64;
        let mean = |f: fn(&ProbeReport) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
        writeln!(
            s,
            "{name},{},{},{},{}",
            rs.len(),
            mean(|r| r.overall),
            mean(|r| r.pair_shared_mean),
            mean(|r| r.pair_control)
        )
        .expect("write to string");
    }
    s
}

fn check_dataset(cfg: &TrainConfig, ds: &Dataset) -> Result<()> {
    match ds.items.first() {
        Some(it) if it.sequence.num_frames() != cfg.model.seq_len => Err(DimpError::Incompatible(format!(
            "model expects {}-frame sequences, dataset has {}",
            cfg.model.seq_len,
            it.sequence.num_frames()
        ))),
        Some(_) => Ok(()),
        None => Err(DimpError::invalid("dataset is empty")),
    }
}

pub fn cmd_sample_motion(a: &SampleArgs) -> Result<f64> {
    if a.k < 2 {
        return Err(DimpError::invalid(format!(
            "sample diversity needs at least 2 samples, got k = {}",
            a.k
        )));
    }
    let inputs = vec![a.checkpoint.clone(), a.sequence.clone()];
    let mut rec = Recorder::start("sample-motion", &a.out, None, &inputs)?;
    let result = (|| {
        let ckpt = load_checkpoint(&a.checkpoint)?;
        let seed = resolve_seed(a.seed, ckpt.config.seed)?;
        rec.manifest.seed = seed;
        let state = ckpt.state()?;
        let seq = read_dpc1(&a.sequence)?;
        let (cs, ms) = (ckpt.center_schedule.build()?, ckpt.motion_schedule.build()?);
        let samples = sample_motion(&state, &seq, &cs, &ms, a.k, seed)?;
        for (i, s) in samples.iter().enumerate() {
            let path = a.out.join(format!("sample_{i:02}.mot1"));
            // standardized units
            write_mot1(s, 1.0, &path)?;
            rec.output(path);
        }
        let div = sample_diversity(&samples)?;
        rec.write(a.out.join("diversity.csv"), format!("k,diversity\n{},{div}\n", a.k).as_bytes())?;
        println!("sample diversity over {} samples: {div:.6}", a.k);
        Ok(div)
    })();
    rec.finish(result)
}

pub const ANALYZE_FILES: [&str; 6] = [
    "mi_gap.csv",
    "fano_grid.csv",
    "attn_bound.csv",
    "posterior_collapse.csv",
    "snr_identity.csv",
    "timestep_profile.csv",
];

pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<Vec<PathBuf>> {
    let wants = |k: CheckKind| a.check == CheckKind::All || a.check == k;
    if wants(CheckKind::Profile) && (a.checkpoint.is_none() || a.data.is_none()) {
        return Err(DimpError::invalid("the profile check needs --checkpoint and --data"));
    }
    let mut inputs: Vec<PathBuf> = a.checkpoint.iter().cloned().collect();
    inputs.extend(a.data.iter().map(|d| d.join("manifest.json")));
    let mut rec = Recorder::start("analyze", &a.out, None, &inputs)?;
    let result = (|| {
        let seed = resolve_seed(a.seed, 0)?;
        rec.manifest.seed = seed;
        let sched = make_cosine_schedule(200)?;
        if wants(CheckKind::Mi) {
            let (bar, full) = verify_prop_info_loss()?;
            println!("I(A;M̄)={bar:.3}, I(A;M)={full:.3} bits");
            let csv = format!("quantity,bits\nI(A;mean_motion),{bar}\nI(A;motion),{full}\n");
            rec.write(a.out.join(ANALYZE_FILES[0]), csv.as_bytes())?;
        }
        if wants(CheckKind::Fano) {
            let mut csv = String::from("h_cond,n_classes,bound\n");
            for n in [2usize, 4, 8, 16] {
                for q in 0..=16 {
                    let h = q as f64 * 0.25;
                    writeln!(csv, "{h},{n},{}", fano_lower_bound(h, n)?).expect("write to string");
                }
            }
            println!("Fano grid: 68 entries");
            rec.write(a.out.join(ANALYZE_FILES[1]), csv.as_bytes())?;
        }
        if wants(CheckKind::Attn) {
            let mut r = rng::seeded(rng::derive(seed, &[2]));
            let mut csv = String::from("config,n,gap,alpha_max,bound,holds\n");
            let mut held = 0;
            for c in 0..100 {
                let (n, gap) = (r.random_range(2..=256), r.random_range(0.0..=20.0));
                let k = attention_concentration(&logits_with_gap(n, gap, &mut r))?;
                held += usize::from(k.holds);
                writeln!(csv, "{c},{n},{},{},{},{}", k.gap, k.alpha_max, k.bound, k.holds).expect("write to string");
            }
            println!("attention bound holds on {held}/100 configurations");
            rec.write(a.out.join(ANALYZE_FILES[2]), csv.as_bytes())?;
        }
        if wants(CheckKind::Posterior) {
            let (mu, sigma) = (0.3, 1.0);
            let mut csv = String::from("t,alpha_bar,bayes_estimate,conditional_mean,deviation,sigma_prior,mean_abs_shift\n");
            for t in decile_grid(sched.steps()) {
                let c = posterior_collapse_check(mu, sigma, &sched, t, 10_000, rng::derive(seed, &[3, t as u64]))?;
                writeln!(
                    csv,
                    "{t},{},{},{},{},{sigma},{}",
                    sched.alpha_bar(t),
                    c.bayes_estimate,
                    c.conditional_mean,
                    c.deviation,
                    c.mean_abs_shift
                )
                .expect("write to string");
            }
            let last = posterior_collapse_check(mu, sigma, &sched, sched.steps(), 10_000, rng::derive(seed, &[3]))?;
            println!("posterior collapse at t = T: deviation {:.2e} (sigma_prior {sigma})", last.deviation);
            rec.write(a.out.join(ANALYZE_FILES[3]), csv.as_bytes())?;
        }
        if wants(CheckKind::Snr) {
            let err = snr_weight_check(&sched, 1000, (16, 21), rng::derive(seed, &[4]))?;
            println!("SNR weight identity: max relative error {err:.2e}");
            rec.write(a.out.join(ANALYZE_FILES[4]), format!("trials,max_rel_error\n1000,{err}\n").as_bytes())?;
        }
        if wants(CheckKind::Profile) {
            let (ck, data) = (a.checkpoint.as_ref().expect("checked"), a.data.as_ref().expect("checked"));
            let ckpt = load_checkpoint(ck)?;
            let ds = Dataset::load(data)?;
            check_dataset(&ckpt.config, &ds)?;
            let state = ckpt.state()?;
            let (cs, ms) = (ckpt.center_schedule.build()?, ckpt.motion_schedule.build()?);
            let idx: Vec<usize> = ds.indices(Split::Test).into_iter().take(a.profile_items).collect();
            let items: Vec<_> = idx
                .iter()
                .map(|&i| (&ds.items[i].sequence, &ds.items[i].motion, ds.items[i].seed))
                .collect();
            let prof = timestep_error_profile(&state, &items, &cs, &ms, &decile_grid(ms.steps()), seed)?;
            println!(
                "timestep profile over {} items: {}",
                items.len(),
                if is_u_shaped(&prof) { "U-shaped" } else { "not U-shaped" }
            );
            rec.write(a.out.join(ANALYZE_FILES[5]), profile_csv(&prof).as_bytes())?;
        }
        Ok(rec.manifest.outputs.clone())
    })();
    rec.finish(result)
}

pub fn cmd_verify(a: &VerifyArgs) -> Result<bool> {
    let seed = resolve_seed(a.seed, 0)?;
    let checks = run_suite(seed)?;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed", checks.len());
    Ok(failed == 0)
}

/// Line charts of the named columns of a metrics CSV, one panel each.
pub fn metrics_svg(csv: &str, columns: &[&str]) -> Result<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap_or(f64::NAN)).collect())
        .collect();
    let (w, h, pad) = (480.0, 160.0, 30.0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"11\">\n",
        h * columns.len() as f64
    );
    for (panel, name) in columns.iter().enumerate() {
        let col = header
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| DimpError::invalid(format!("metrics have no column `{name}`")))?;
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|r| Some((r[0], *r.get(col)?)))
            .filter(|p| p.1.is_finite())
            .collect();
        let y0 = panel as f64 * h;
        writeln!(svg, "<text x=\"{pad}\" y=\"{}\">{name}</text>", y0 + 14.0).expect("write to string");
        if pts.is_empty() {
            continue;
        }
        let (xmin, xmax) = (pts[0].0, pts[pts.len() - 1].0.max(pts[0].0 + 1.0));
        let ymin = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let ymax = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).max(ymin + 1e-12);
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| {
                let px = pad + (x - xmin) / (xmax - xmin) * (w - 2.0 * pad);
                let py = y0 + h - pad + (ymin - y) / (ymax - ymin) * (h - 2.0 * pad);
                format!("{px:.1},{py:.1}")
            })
            .collect();
        writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"steelblue\" points=\"{}\"/>\n<text x=\"{}\" y=\"{}\">{ymax:.3}</text>\n<text x=\"{}\" y=\"{}\">{ymin:.3}</text>",
            path.join(" "),
            w - pad * 2.5,
            y0 + pad,
            w - pad * 2.5,
            y0 + h - pad
        )
        .expect("write to string");
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
