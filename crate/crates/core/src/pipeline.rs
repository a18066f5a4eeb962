//! Batch experiments: orchestration, manifest, replay and merged reports.
//!
//! An experiment directory holds `config.toml`, the CSV tables, binary
//! snapshots and `manifest.json`, which lists every other file with its
//! SHA-256.

mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::constraints::{
    backreaction_report_with, generate_initial_data, smoothed_phi, write_backreaction_csv, MomentumTreatment,
};
use crate::coupling::{backward_march, Variant};
use crate::error::{Error, Result};
use crate::field::{Components, Field};
use crate::flow::{evolve, FlowState, FlowTrajectory};
use crate::geometry::Geometry;
use crate::homogeneous::{self, fmt};
use crate::kernel::{self, conjugate_kernel, kernel_mass, KernelField, KernelManifestEntry, Rank, Represented, Target};
use crate::snapshot::{self, SnapshotHeader};
use crate::tensor::Sym6;

pub use config::{
    BackreactionConfig, CouplingConfig, ExperimentConfig, FlowConfig, GaugeChoice, GridConfig, HomogeneousConfig,
    KernelConfig, OutputConfig, RankChoice,
};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.toml";
pub const MANIFEST_FORMAT: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    Validation,
    BlowUp,
    Numerical,
}

impl FailureKind {
    pub fn of(e: &Error) -> Self {
        match e {
            Error::BlowUp { .. } | Error::Extinction { .. } => FailureKind::BlowUp,
            Error::InvalidChart(_)
            | Error::SampleCount { .. }
            | Error::ChartMismatch
            | Error::NonPositiveCoefficient(_)
            | Error::NonPositiveTau { .. }
            | Error::MissingCoverage { .. }
            | Error::UnderResolvedMollifier { .. }
            | Error::BeyondInjectivityGuard
            | Error::MissingKernel(_)
            | Error::Inadmissible { .. }
            | Error::Config(_) => FailureKind::Validation,
            _ => FailureKind::Numerical,
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            FailureKind::Validation => 2,
            FailureKind::BlowUp => 3,
            FailureKind::Numerical => 4,
        }
    }
}

/// Process exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    FailureKind::of(e).exit_code()
}

/// Flow parameter an error refers to, when it carries one.
pub fn error_beta(e: &Error) -> Option<f64> {
    match e {
        Error::Extinction { beta, .. }
        | Error::BlowUp { beta, .. }
        | Error::StepUnderflow { beta, .. }
        | Error::NonFinite { beta, .. }
        | Error::PositivityLoss { beta, .. }
        | Error::NormalizationDrift { beta, .. }
        | Error::NonPositiveTau { beta, .. }
        | Error::MissingCoverage { beta, .. } => Some(*beta),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    /// Written by a stage that did not finish.
    #[serde(default)]
    pub partial: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: StageStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub kind: FailureKind,
    pub exit_code: i32,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub tool: String,
    pub version: String,
    pub snapshot_format: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub input_hash: String,
    pub complete: bool,
    pub stages: Vec<StageRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
    pub diagnostics: BTreeMap<String, f64>,
    #[serde(default)]
    pub kernels: Vec<KernelManifestEntry>,
    pub files: Vec<FileRecord>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?)
    }

    pub fn exit_code(&self) -> i32 {
        self.failure.as_ref().map_or(0, |f| f.exit_code)
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub error: Option<Error>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        self.manifest.exit_code()
    }
}

/// Mutable bookkeeping of one run.
struct Recorder {
    dir: PathBuf,
    planned: Vec<&'static str>,
    done: Vec<StageRecord>,
    partial: BTreeSet<String>,
    failure: Option<Failure>,
    diagnostics: BTreeMap<String, f64>,
    kernels: Vec<KernelManifestEntry>,
}

impl Recorder {
    fn stage<T>(&mut self, name: &'static str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        match f(self) {
            Ok(v) => {
                self.done.push(StageRecord {
                    stage: name.into(),
                    status: StageStatus::Ok,
                });
                Ok(v)
            }
            Err(e) => {
                self.done.push(StageRecord {
                    stage: name.into(),
                    status: StageStatus::Failed,
                });
                self.failure = Some(Failure {
                    stage: name.into(),
                    beta: error_beta(&e),
                    kind: FailureKind::of(&e),
                    exit_code: exit_code(&e),
                    message: e.to_string(),
                });
                Err(e)
            }
        }
    }

    fn path(&self, rel: &str) -> Result<PathBuf> {
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(p)
    }

    fn csv(&mut self, rel: &str, partial: bool, write: impl FnOnce(fs::File) -> Result<()>) -> Result<()> {
        write(fs::File::create(self.path(rel)?)?)?;
        if partial {
            self.partial.insert(rel.to_string());
        }
        Ok(())
    }

    fn diag(&mut self, key: &str, v: f64) {
        if v.is_finite() {
            self.diagnostics.insert(key.to_string(), v);
        }
    }

    fn finish(self, cfg: &ExperimentConfig) -> Result<Manifest> {
        let mut stages = self.done;
        for s in &self.planned {
            if !stages.iter().any(|r| r.stage == *s) {
                stages.push(StageRecord {
                    stage: (*s).into(),
                    status: StageStatus::Skipped,
                });
            }
        }
        let mut files = Vec::new();
        for rel in list_files(&self.dir)? {
            if rel == MANIFEST {
                continue;
            }
            let bytes = fs::read(self.dir.join(&rel))?;
            files.push(FileRecord {
                sha256: hex::encode(Sha256::digest(&bytes)),
                bytes: bytes.len() as u64,
                partial: self.partial.contains(&rel),
                path: rel,
            });
        }
        let manifest = Manifest {
            format: MANIFEST_FORMAT,
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            snapshot_format: snapshot::FORMAT_VERSION,
            name: cfg.name.clone(),
            input_hash: cfg.input_hash()?,
            complete: self.failure.is_none(),
            stages,
            failure: self.failure,
            diagnostics: self.diagnostics,
            kernels: self.kernels,
            files,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.dir.join(MANIFEST), text)?;
        Ok(manifest)
    }
}

/// Relative paths (with `/`) of all regular files below `dir`, sorted.
pub fn list_files(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Io(e.into()))?;
        if entry.file_type().is_file() {
            let rel = entry.path().strip_prefix(dir).expect("walk stays below its root");
            let parts: Vec<String> = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect();
            out.push(parts.join("/"));
        }
    }
    out.sort();
    Ok(out)
}

/// Output directory for a config file: the configured one (relative to the
/// file) or `<stem>.out` beside it.
pub fn default_output_dir(config_path: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let base = config_path.parent().unwrap_or(Path::new("."));
    match &cfg.output.directory {
        Some(d) if d.is_relative() => base.join(d),
        Some(d) => d.clone(),
        None => config_path.with_extension("out"),
    }
}

/// Reads, validates and runs a config file.
pub fn run_file(config_path: &Path, dir: Option<&Path>) -> Result<RunOutcome> {
    let text = fs::read_to_string(config_path)?;
    let cfg = ExperimentConfig::from_toml_str(&text)?;
    let dir = dir.map_or_else(|| default_output_dir(config_path, &cfg), Path::to_path_buf);
    run(&cfg, Some(&text), &dir)
}

/// Runs an experiment into `dir`, which must be absent or empty.
///
/// Configuration errors are returned directly. Failures of later stages are
/// recorded in the manifest and returned in [`RunOutcome::error`].
pub fn run(cfg: &ExperimentConfig, text: Option<&str>, dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    if dir.exists() && fs::read_dir(dir)?.next().is_some() {
        return Err(Error::Config(format!(
            "output directory {} is not empty",
            dir.display()
        )));
    }
    fs::create_dir_all(dir)?;
    let text = match text {
        Some(t) => t.to_string(),
        None => cfg.to_toml_string()?,
    };
    fs::write(dir.join(CONFIG), text)?;
    let mut planned = vec!["initial-data", "evolve"];
    if cfg.grid.is_some() {
        if cfg.coupling.is_some() {
            planned.push("coupling");
        }
        if cfg.kernels.is_some() {
            planned.push("kernels");
        }
        planned.push("backreaction");
    }
    let mut rec = Recorder {
        dir: dir.to_path_buf(),
        planned,
        done: Vec::new(),
        partial: BTreeSet::new(),
        failure: None,
        diagnostics: BTreeMap::new(),
        kernels: Vec::new(),
    };
    let result = match &cfg.homogeneous {
        Some(h) => run_homogeneous(h, &mut rec),
        None => run_grid(cfg, &mut rec),
    };
    let manifest = rec.finish(cfg)?;
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        manifest,
        error: result.err(),
    })
}

fn run_homogeneous(h: &HomogeneousConfig, rec: &mut Recorder) -> Result<()> {
    let s0 = rec.stage("initial-data", |_| h.initial_state())?;
    rec.stage("evolve", |rec| {
        let run = homogeneous::evolve(&s0, &h.controls())?;
        rec.csv("trajectory.csv", run.stop.is_some(), |f| {
            homogeneous::write_csv(&run, h.alpha3, f)
        })?;
        let (beta, last) = *run.samples.last().expect("run holds the initial state");
        rec.diag("final_beta", beta);
        rec.diag("steps", (run.samples.len() - 1) as f64);
        let c0 = s0.coefficients();
        let c1 = last.coefficients();
        let names: &[&str] = if c1.len() == 2 { &["a", "c"] } else { &["c"] };
        let mut drift = 0.0f64;
        for ((name, a), b) in names.iter().zip(&c0).zip(&c1) {
            rec.diag(&format!("final_{name}"), *b);
            drift = drift.max((b - a).abs());
        }
        rec.diag("coefficient_drift", drift);
        let mut err = 0.0f64;
        for (b, s) in &run.samples {
            if let Ok(exact) = homogeneous::analytic_solution(&s0, *b) {
                for (x, y) in s.coefficients().iter().zip(exact.coefficients()) {
                    err = err.max((x - y).abs());
                }
            }
        }
        if h.normalization == homogeneous::Normalization::Plain {
            rec.diag("max_reference_error", err);
        }
        match run.stop {
            Some(e) => Err(e),
            None => Ok(()),
        }
    })
}

fn write_field<T: crate::chart::Linear + Components>(
    rec: &Recorder,
    rel: &str,
    field: &Field<T>,
    header: SnapshotHeader,
) -> Result<()> {
    snapshot::write(&rec.path(rel)?, field, &header)
}

fn snapshot_states(rec: &Recorder, traj: &FlowTrajectory, every: usize) -> Result<()> {
    let n = traj.states.len();
    for (i, s) in traj.states.iter().enumerate() {
        let keep = if every == 0 {
            i == 0 || i + 1 == n
        } else {
            i % every == 0 || i + 1 == n
        };
        if !keep {
            continue;
        }
        let chart = *s.chart();
        let h = |q: &str, sym: bool| {
            let base = if sym {
                SnapshotHeader::for_field::<Sym6>(&chart)
            } else {
                SnapshotHeader::for_field::<f64>(&chart)
            };
            base.with_label(s.beta).with_quantity(q)
        };
        write_field(
            rec,
            &format!("snapshots/state{i:05}_metric.snap"),
            s.metric.field(),
            h("metric", true),
        )?;
        write_field(
            rec,
            &format!("snapshots/state{i:05}_extrinsic.snap"),
            &s.extrinsic,
            h("extrinsic", true),
        )?;
        write_field(
            rec,
            &format!("snapshots/state{i:05}_density.snap"),
            &s.density,
            h("density", false),
        )?;
    }
    Ok(())
}

/// Initial state of a grid experiment, validated.
pub fn initial_state(cfg: &ExperimentConfig) -> Result<FlowState> {
    let chart = cfg.chart()?;
    let spec = cfg
        .initial_data
        .as_ref()
        .ok_or_else(|| Error::Config("no [initial_data] section".into()))?;
    let data = generate_initial_data(chart, spec)?;
    let gauge = cfg.gauge(&data.metric)?;
    FlowState::new(data.metric, data.extrinsic, data.density, gauge)?
        .with_momentum(data.momentum)
        .map(|s| s.with_constants(data.constants))
}

/// Forward trajectory of a grid experiment; early stops are errors.
pub fn forward_trajectory(cfg: &ExperimentConfig) -> Result<FlowTrajectory> {
    evolve(initial_state(cfg)?, &cfg.flow_controls()?)?.into_result()
}

fn run_grid(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let flow = cfg.flow.as_ref().expect("validated");
    let init = rec.stage("initial-data", |_| initial_state(cfg))?;
    let traj = rec.stage("evolve", |rec| {
        let evo = evolve(init, &cfg.flow_controls()?)?;
        let traj = evo.trajectory;
        rec.csv("trajectory.csv", evo.stop.is_some(), |f| traj.write_csv(f))?;
        snapshot_states(rec, &traj, flow.snapshot_every)?;
        let (a, b) = (&traj.states[0], traj.final_state());
        rec.diag("final_beta", b.beta);
        rec.diag("steps", (traj.diagnostics.len() - 1) as f64);
        rec.diag("metric_drift", b.metric.field().max_abs_diff(a.metric.field()));
        rec.diag("extrinsic_drift", b.extrinsic.max_abs_diff(&a.extrinsic));
        rec.diag("density_drift", b.density.max_abs_diff(&a.density));
        let (d0, d1) = (
            &traj.diagnostics[0],
            traj.diagnostics.last().expect("initial diagnostics"),
        );
        rec.diag("relative_volume_drift", (d1.volume - d0.volume).abs() / d0.volume);
        rec.diag("mass_drift", (d1.mass - d0.mass).abs());
        rec.diag("final_sup_rm", d1.sup_rm);
        rec.diag("initial_hamiltonian_residual", d0.hamiltonian_residual);
        rec.diag("initial_momentum_residual", d0.momentum_residual);
        match evo.stop {
            Some(e) => Err(e),
            None => Ok(traj),
        }
    })?;
    if let Some(c) = &cfg.coupling {
        rec.stage("coupling", |rec| {
            let run = backward_march(&traj, &c.controls())?;
            let worst = run
                .samples
                .iter()
                .find(|s| (s.check - 1.0).abs() > c.normalization_tolerance)
                .filter(|_| c.variant == Variant::GradientSquared)
                .copied();
            rec.csv("coupling.csv", worst.is_some(), |f| run.write_csv(f))?;
            rec.diag("coupling_normalization_drift", run.normalization_drift());
            rec.diag("coupling_mass_drift", run.mass_drift());
            match worst {
                Some(s) => Err(Error::NormalizationDrift {
                    beta: s.beta,
                    drift: s.check - 1.0,
                }),
                None => Ok(()),
            }
        })?;
    }
    if let Some(k) = &cfg.kernels {
        rec.stage("kernels", |rec| run_kernels(cfg, k, &traj, rec))?;
    }
    rec.stage("backreaction", |rec| {
        let n = traj.states.len();
        let every = cfg.backreaction.every;
        let mut rows = Vec::new();
        for (i, s) in traj.states.iter().enumerate() {
            if i % every == 0 || i + 1 == n {
                let geo = Geometry::new(&s.metric)?;
                rows.push((
                    s.beta,
                    backreaction_report_with(&geo, &s.extrinsic, &s.density, &s.momentum, &s.constants)?,
                ));
            }
        }
        rec.csv("backreaction.csv", false, |f| {
            write_backreaction_csv(&rows, MomentumTreatment::Held, f)
        })
    })
}

const KERNEL_COLUMNS: [&str; 14] = [
    "source",
    "i",
    "j",
    "k",
    "eta",
    "beta",
    "kernel_mass",
    "smoothed_density",
    "phi_full",
    "phi_fluctuation",
    "phi_difference",
    "background_c",
    "scale_constraint_residual",
    "rank",
];

fn run_kernels(cfg: &ExperimentConfig, k: &KernelConfig, traj: &FlowTrajectory, rec: &mut Recorder) -> Result<()> {
    let chart = cfg.chart()?;
    let controls = k.controls();
    let c = traj.states[0].constants;
    let mut w = csv::Writer::from_writer(fs::File::create(rec.path("kernels.csv")?)?);
    w.write_record(KERNEL_COLUMNS)?;
    for src in &k.sources {
        let y = chart.index(*src);
        let scalar = match k.rank {
            RankChoice::Scalar | RankChoice::Both => Some(conjugate_kernel(traj, y, Rank::Scalar, &controls)?),
            RankChoice::Tensor => None,
        };
        let tensor = match k.rank {
            RankChoice::Tensor | RankChoice::Both => Some(conjugate_kernel(traj, y, Rank::Tensor, &controls)?),
            RankChoice::Scalar => None,
        };
        for (kf, stem) in [(&scalar, "scalar"), (&tensor, "tensor")] {
            if let (Some(kf), true) = (kf, k.write_snapshots) {
                let dir = rec.dir.join("kernels");
                fs::create_dir_all(&dir)?;
                for mut e in kf.write_snapshots(&dir, stem)? {
                    e.file = Path::new("kernels").join(&e.file);
                    rec.kernels.push(e);
                }
            }
        }
        let mut worst_mass = 0.0f64;
        for &eta in &k.etas {
            let mut row = vec![
                y.to_string(),
                src[0].to_string(),
                src[1].to_string(),
                src[2].to_string(),
                fmt(eta),
            ];
            row.push(fmt(traj.last_beta() - eta));
            let mut rest = vec![String::new(); 7];
            if let Some(s) = &scalar {
                let m = kernel_mass(s, traj, eta)?;
                worst_mass = worst_mass.max((m - 1.0).abs());
                rest[0] = fmt(m);
                if let Represented::Scalar(v) = kernel::represent_field(s, traj, Target::Density, eta)? {
                    rest[1] = fmt(v);
                }
            }
            if let (Some(s), Some(t)) = (&scalar, &tensor) {
                let p = smoothed_phi(traj, s, t, eta, &c)?;
                rest[2] = fmt(p.full);
                rest[3] = fmt(p.fluctuation);
                rest[4] = fmt(p.difference);
                rest[5] = fmt(p.background_c);
                rest[6] = fmt(p.scale_constraint_residual);
            }
            row.extend(rest);
            row.push(
                match k.rank {
                    RankChoice::Scalar => "scalar",
                    RankChoice::Tensor => "tensor",
                    RankChoice::Both => "both",
                }
                .to_string(),
            );
            w.write_record(&row)?;
        }
        if scalar.is_some() {
            let key = format!("kernel_mass_error_{}_{}_{}", src[0], src[1], src[2]);
            rec.diag(&key, worst_mass);
        }
    }
    w.flush()?;
    Ok(())
}

/// Result of [`replay_check`].
#[derive(Clone, Debug, PartialEq)]
pub enum ReplayVerdict {
    Pass,
    /// The stored config no longer hashes to the recorded input hash.
    ConfigMismatch {
        recorded: String,
        found: String,
    },
    /// First divergence. `line` is 1-based for text files; `offset` is a byte offset otherwise.
    Mismatch {
        file: String,
        line: Option<usize>,
        offset: Option<usize>,
        detail: String,
    },
}

impl ReplayVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, ReplayVerdict::Pass)
    }
}

fn first_difference(file: &str, stored: &[u8], fresh: &[u8]) -> Option<ReplayVerdict> {
    if stored == fresh {
        return None;
    }
    let text = file.ends_with(".csv") || file.ends_with(".json") || file.ends_with(".toml");
    if text {
        let a: Vec<&[u8]> = stored.split(|&b| b == b'\n').collect();
        let b: Vec<&[u8]> = fresh.split(|&b| b == b'\n').collect();
        let i = (0..a.len().max(b.len()))
            .find(|&i| a.get(i) != b.get(i))
            .expect("inputs differ");
        let show = |l: Option<&&[u8]>| l.map_or("<missing>".to_string(), |l| String::from_utf8_lossy(l).into_owned());
        return Some(ReplayVerdict::Mismatch {
            file: file.into(),
            line: Some(i + 1),
            offset: None,
            detail: format!("stored `{}`, replay `{}`", show(a.get(i)), show(b.get(i))),
        });
    }
    let i = stored
        .iter()
        .zip(fresh)
        .position(|(x, y)| x != y)
        .unwrap_or(stored.len().min(fresh.len()));
    Some(ReplayVerdict::Mismatch {
        file: file.into(),
        line: None,
        offset: Some(i),
        detail: format!("{} stored bytes, {} replayed bytes", stored.len(), fresh.len()),
    })
}

/// Re-runs the stored config and compares every file bit for bit.
pub fn replay_check(dir: &Path) -> Result<ReplayVerdict> {
    let manifest = Manifest::read(dir)?;
    let text = fs::read_to_string(dir.join(CONFIG))?;
    let cfg = ExperimentConfig::from_toml_str(&text)?;
    let found = cfg.input_hash()?;
    if found != manifest.input_hash {
        return Ok(ReplayVerdict::ConfigMismatch {
            recorded: manifest.input_hash,
            found,
        });
    }
    let listed: BTreeSet<String> = manifest.files.iter().map(|f| f.path.clone()).collect();
    for rel in list_files(dir)? {
        if rel != MANIFEST && !listed.contains(&rel) {
            return Ok(ReplayVerdict::Mismatch {
                file: rel,
                line: None,
                offset: None,
                detail: "file is not listed in the manifest".into(),
            });
        }
    }
    let scratch = tempfile::tempdir()?;
    let fresh_dir = scratch.path().join("replay");
    let fresh = run(&cfg, Some(&text), &fresh_dir)?;
    let fresh_listed: BTreeSet<String> = fresh.manifest.files.iter().map(|f| f.path.clone()).collect();
    let mut all: Vec<&String> = listed.union(&fresh_listed).collect();
    all.sort();
    for rel in all {
        let stored = fs::read(dir.join(rel)).ok();
        let again = fs::read(fresh_dir.join(rel)).ok();
        match (stored, again) {
            (Some(a), Some(b)) => {
                if let Some(v) = first_difference(rel, &a, &b) {
                    return Ok(v);
                }
            }
            (a, _) => {
                return Ok(ReplayVerdict::Mismatch {
                    file: rel.clone(),
                    line: None,
                    offset: None,
                    detail: if a.is_some() {
                        "not produced by the replay"
                    } else {
                        "missing from the directory"
                    }
                    .into(),
                })
            }
        }
    }
    let a = fs::read(dir.join(MANIFEST))?;
    let b = fs::read(fresh_dir.join(MANIFEST))?;
    Ok(first_difference(MANIFEST, &a, &b).unwrap_or(ReplayVerdict::Pass))
}

/// Tables merged by [`write_report`], with the columns that identify a series.
const REPORT_TABLES: [(&str, &[&str]); 4] = [
    ("trajectory", &[]),
    ("coupling", &["variant"]),
    ("backreaction", &["momentum"]),
    ("kernels", &["i", "j", "k", "eta"]),
];

/// Long-format CSV `table, series, beta, quantity, value` of every numeric
/// column in the experiment's tables. Returns the number of data rows.
pub fn write_report<W: Write>(dir: &Path, out: W) -> Result<usize> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["table", "series", "beta", "quantity", "value"])?;
    let mut rows = 0;
    for (table, keys) in REPORT_TABLES {
        let path = dir.join(format!("{table}.csv"));
        if !path.exists() {
            continue;
        }
        let mut r = csv::Reader::from_path(&path)?;
        let header = r.headers()?.clone();
        let col = |name: &str| header.iter().position(|h| h == name);
        let beta_col = col("beta").ok_or_else(|| Error::Config(format!("{table}.csv has no beta column")))?;
        let key_cols: Vec<usize> = keys.iter().filter_map(|k| col(k)).collect();
        for rec in r.records() {
            let rec = rec?;
            let series = key_cols
                .iter()
                .map(|&c| format!("{}={}", &header[c], &rec[c]))
                .collect::<Vec<_>>()
                .join(";");
            for (c, name) in header.iter().enumerate() {
                if c == beta_col || key_cols.contains(&c) || ["source", "step"].contains(&name) {
                    continue;
                }
                if rec[c].parse::<f64>().is_ok() {
                    w.write_record([table, &series, &rec[beta_col], name, &rec[c]])?;
                    rows += 1;
                }
            }
        }
    }
    w.flush()?;
    Ok(rows)
}

/// Kernel summary at one label.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KernelSummary {
    pub eta: f64,
    pub beta: f64,
    /// `int E dmu` (scalar kernels).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    /// Kernel-smoothed density (scalar) or metric (tensor, packed).
    pub represented: Vec<f64>,
}

/// Computes a kernel at `y` on the trajectory of an existing experiment.
///
/// `eta0` defaults to the experiment's kernel scale, else the smallest label.
/// Snapshots go to `out` when given.
pub fn kernel_on_experiment(
    dir: &Path,
    y: [usize; 3],
    etas: &[f64],
    eta0: Option<f64>,
    rank: Rank,
    out: Option<&Path>,
) -> Result<Vec<KernelSummary>> {
    let cfg = ExperimentConfig::load(&dir.join(CONFIG))?;
    let chart = cfg.chart()?;
    if (0..3).any(|a| y[a] >= chart.resolution()[a]) || etas.is_empty() {
        return Err(Error::Config(format!(
            "source {y:?} is not a grid node or no eta given"
        )));
    }
    let eta0 = eta0
        .or(cfg.kernels.as_ref().map(|k| k.eta0))
        .unwrap_or_else(|| etas.iter().copied().fold(f64::INFINITY, f64::min));
    let kc = KernelConfig {
        sources: vec![y],
        eta0,
        etas: etas.to_vec(),
        rank: RankChoice::Both,
        safety: 0.5,
        write_snapshots: false,
    };
    let traj = forward_trajectory(&cfg)?;
    for &eta in etas {
        if !(eta >= eta0) || eta > traj.last_beta() - traj.first_beta() {
            return Err(Error::Config(format!(
                "eta = {eta} must lie in [eta0, beta*] = [{eta0}, {}]",
                traj.last_beta()
            )));
        }
    }
    let kf = conjugate_kernel(&traj, chart.index(y), rank, &kc.controls())?;
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        let stem = if rank == Rank::Scalar { "scalar" } else { "tensor" };
        let entries = kf.write_snapshots(out, stem)?;
        let mut text = serde_json::to_string_pretty(&entries)?;
        text.push('\n');
        fs::write(out.join("kernels.json"), text)?;
    }
    etas.iter().map(|&eta| summarize(&kf, &traj, eta)).collect()
}

fn summarize(kf: &KernelField, traj: &FlowTrajectory, eta: f64) -> Result<KernelSummary> {
    let (mass, target) = match kf.rank() {
        Rank::Scalar => (Some(kernel_mass(kf, traj, eta)?), Target::Density),
        Rank::Tensor => (None, Target::Metric),
    };
    let represented = match kernel::represent_field(kf, traj, target, eta)? {
        Represented::Scalar(v) => vec![v],
        Represented::Tensor(v) => v.to_vec(),
    };
    Ok(KernelSummary {
        eta,
        beta: kf.slice_beta(eta),
        mass,
        represented,
    })
}
