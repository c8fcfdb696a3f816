//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage or parameter error, 3 I/O or format
//! error, 4 degenerate input. Every failure prints one diagnostic line to
//! stderr and removes the files the failed command had already written.
//!
//! Subcommands and their outputs (all under `--out`):
//!
//! | command     | writes |
//! |-------------|--------|
//! | `phantom`   | `frame_NNN.mvol`, `label_NNN.mvol` (ground truth), `manifest.toml`, `summary.json` |
//! | `propagate` | `label_NNN.mvol` per unlabeled frame, `propagation_report.json` |
//! | `histmatch` | `<subject>/<frame>.mvol`, `histmatch_summary.json` |
//! | `transfer`  | `<subject>/<frame>.mvol` for `--from-vendor` subjects, `transfer_summary.json` |
//! | `evaluate`  | `evaluation_report.json` (also printed to stdout) |
//! | `report`    | `histogram_report.json`, `histogram_report.tsv` |
//!
//! The default worker count comes from `CARDIOPROP_WORKERS`; `--workers`
//! overrides it.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::{
    self, load_labels_any, load_volume_any, read_manifest, write_json, write_labels, write_manifest, write_volume,
    CineManifest, MvolData,
};
use crate::metrics::{evaluate_case, CaseReport};
use crate::phantom::{generate_cine, PhantomSpec};
use crate::propagation::{propagate_series, Template};
use crate::registration::{RegistrationParams, Similarity};
use crate::style::{build_reference, histogram_match, histogram_report, vendor_transfer, DEFAULT_REFERENCE_VOLUMES};
use crate::volume::{Label, ScalarVolume};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DEGENERATE: i32 = 4;

pub const WORKERS_ENV: &str = "CARDIOPROP_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "cardioprop", version, about = "Cine MRI label propagation and vendor histogram matching")]
struct Cli {
    /// Worker threads (>= 1); defaults to the number of CPUs.
    #[arg(long, global = true, env = WORKERS_ENV, value_parser = clap::value_parser!(u32).range(1..))]
    workers: Option<u32>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic beating-heart cine series with ground truth.
    Phantom(PhantomArgs),
    /// Propagate the ES/ED labels to every other frame of a series.
    Propagate(PropagateArgs),
    /// Match every frame to one reference pooled over all given series.
    Histmatch(StyleArgs),
    /// Match the frames of one vendor to a reference drawn from another.
    Transfer(TransferArgs),
    /// Dice and Hausdorff of predicted labels against ground truth, paired by file name.
    Evaluate(EvaluateArgs),
    /// Per-group intensity histograms and pairwise KS distances.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct PhantomArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 11)]
    frames: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Edge length of the cubic grid, voxels; the heart scales with it.
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Gaussian noise standard deviation, intensity units.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value = "phantom")]
    vendor: String,
    #[arg(long, default_value = "synthetic")]
    center: String,
}

#[derive(Debug, Args)]
struct RegistrationArgs {
    #[arg(long, value_enum, default_value_t = SimilarityArg::Ncc)]
    similarity: SimilarityArg,
    #[arg(long, default_value_t = 3)]
    pyramid_levels: usize,
    /// Iterations per level, coarsest first; a single value applies to every level.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    iters: Option<Vec<usize>>,
    /// Demons field smoothing sigma, voxels.
    #[arg(long, default_value_t = 1.5)]
    sigma: f64,
    #[arg(long, default_value_t = 0.5)]
    step: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SimilarityArg {
    Mse,
    Ncc,
}

#[derive(Debug, Args)]
struct PropagateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    registration: RegistrationArgs,
}

#[derive(Debug, Args)]
struct StyleArgs {
    #[arg(long, required = true)]
    manifest: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Reference volumes to sample; capped at the number available.
    #[arg(long, default_value_t = DEFAULT_REFERENCE_VOLUMES)]
    n_ref_volumes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TransferArgs {
    #[command(flatten)]
    style: StyleArgs,
    #[arg(long)]
    from_vendor: String,
    #[arg(long)]
    to_vendor: String,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Directory for `evaluation_report.json`; the report is printed either way.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GroupBy {
    Vendor,
    Center,
    Subject,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long, required = true)]
    manifest: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    bins: usize,
    #[arg(long, value_enum, default_value_t = GroupBy::Vendor)]
    group_by: GroupBy,
}

/// Parses `argv` (program name first), runs the command, and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let rendered = e.to_string();
            eprintln!("{}", rendered.lines().next().unwrap_or("usage error"));
            return EXIT_USAGE;
        }
    };

    let workers = cli
        .workers
        .map(|w| w as usize)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start {workers} workers: {e}");
            return EXIT_IO;
        }
    };

    let mut outputs = Outputs::default();
    match pool.install(|| execute(cli.command, &mut outputs)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            outputs.rollback();
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            exit_code(&e)
        }
    }
}

/// Maps a library error to the documented exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter { .. } | Error::InvalidTarget(_) | Error::MissingVendor(_) => EXIT_USAGE,
        Error::DimensionMismatch(_)
        | Error::Format { .. }
        | Error::UnsupportedDatatype(_)
        | Error::Io { .. }
        | Error::Manifest(_) => EXIT_IO,
        Error::Degenerate(_) => EXIT_DEGENERATE,
        Error::Frames(errs) => errs.first().map_or(EXIT_IO, |(_, e)| exit_code(e)),
    }
}

fn execute(command: Command, out: &mut Outputs) -> Result<()> {
    match command {
        Command::Phantom(a) => phantom(a, out),
        Command::Propagate(a) => propagate(a, out),
        Command::Histmatch(a) => histmatch(a, out),
        Command::Transfer(a) => transfer(a, out),
        Command::Evaluate(a) => evaluate(a, out),
        Command::Report(a) => report(a, out),
    }
}

/// Files and directories created by the current command, removed on failure.
#[derive(Default)]
struct Outputs {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
}

impl Outputs {
    fn dir(&mut self, path: &Path) -> Result<()> {
        let missing: Vec<PathBuf> = path.ancestors().take_while(|p| !p.as_os_str().is_empty() && !p.exists()).map(Path::to_path_buf).collect();
        fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
        self.dirs.extend(missing.into_iter().rev());
        if !path.is_dir() {
            return Err(Error::io(path, std::io::Error::other("not a directory")));
        }
        Ok(())
    }

    fn write(&mut self, path: PathBuf, f: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        f(&path)?;
        self.files.push(path);
        Ok(())
    }

    fn rollback(self) {
        for f in self.files.iter().rev() {
            let _ = fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}

fn frame_name(prefix: &str, index: usize) -> String {
    format!("{prefix}_{index:03}.mvol")
}

#[derive(Serialize)]
struct PhantomSummary {
    subject_id: String,
    spec: PhantomSpec,
    frames: Vec<String>,
    labels: Vec<String>,
    manifest: String,
}

fn phantom(a: PhantomArgs, out: &mut Outputs) -> Result<()> {
    if a.frames < 3 {
        return Err(Error::param("frames", "at least 3 frames are required"));
    }
    let base = PhantomSpec::default();
    let k = a.size as f64 / base.dims[0] as f64;
    let spec = PhantomSpec {
        dims: [a.size; 3],
        lv_radius_es: base.lv_radius_es * k,
        lv_radius_ed: base.lv_radius_ed * k,
        myo_thickness: base.myo_thickness * k,
        rv_offset: base.rv_offset * k,
        frames: a.frames,
        ed_index: a.frames - 1,
        noise_sigma: a.noise,
        seed: a.seed,
        ..Default::default()
    };
    spec.validate()?;
    out.dir(&a.out)?;
    let cine = generate_cine(&spec)?;

    let frames: Vec<String> = (0..spec.frames).map(|t| frame_name("frame", t)).collect();
    let labels: Vec<String> = (0..spec.frames).map(|t| frame_name("label", t)).collect();
    for (t, vol) in cine.series.frames.iter().enumerate() {
        out.write(a.out.join(&frames[t]), |p| write_volume(p, vol))?;
        out.write(a.out.join(&labels[t]), |p| write_labels(p, &cine.ground_truth[t]))?;
    }
    let manifest = CineManifest {
        subject_id: cine.series.subject_id.clone(),
        vendor: a.vendor,
        center: a.center,
        es_index: spec.es_index,
        ed_index: spec.ed_index,
        es_label_path: a.out.join(&labels[spec.es_index]),
        ed_label_path: a.out.join(&labels[spec.ed_index]),
        frame_paths: frames.iter().map(|f| a.out.join(f)).collect(),
    };
    out.write(a.out.join("manifest.toml"), |p| write_manifest(p, &manifest))?;
    let summary = PhantomSummary {
        subject_id: manifest.subject_id,
        spec,
        frames,
        labels,
        manifest: "manifest.toml".into(),
    };
    out.write(a.out.join("summary.json"), |p| write_json(p, &summary))
}

fn registration_params(a: &RegistrationArgs) -> Result<RegistrationParams> {
    let defaults = RegistrationParams::default();
    let iterations_per_level = match &a.iters {
        Some(v) if v.len() == 1 => vec![v[0]; a.pyramid_levels],
        Some(v) => v.clone(),
        None if a.pyramid_levels == defaults.pyramid_levels => defaults.iterations_per_level.clone(),
        None => {
            // Coarse levels get the default coarse budget, the finest the fine one.
            let mut v = vec![defaults.iterations_per_level[0]; a.pyramid_levels];
            if let Some(last) = v.last_mut() {
                *last = defaults.iterations_per_level[defaults.pyramid_levels - 1];
            }
            v
        }
    };
    let params = RegistrationParams {
        pyramid_levels: a.pyramid_levels,
        iterations_per_level,
        similarity: match a.similarity {
            SimilarityArg::Mse => Similarity::Mse,
            SimilarityArg::Ncc => Similarity::Ncc,
        },
        step_size: a.step,
        demons_sigma_vox: a.sigma,
        ..defaults
    };
    params.validate()?;
    Ok(params)
}

#[derive(Serialize)]
struct FrameEntry {
    frame_index: usize,
    chosen_template: Template,
    es_norm_mm: f64,
    ed_norm_mm: f64,
    pseudo_label: String,
}

#[derive(Serialize)]
struct PropagationReport {
    subject_id: String,
    es_index: usize,
    ed_index: usize,
    params: RegistrationParams,
    frames: Vec<FrameEntry>,
}

fn propagate(a: PropagateArgs, out: &mut Outputs) -> Result<()> {
    let params = registration_params(&a.registration)?;
    let manifest = read_manifest(&a.manifest)?;
    out.dir(&a.out)?;
    let series = io::load_series(&manifest)?;
    let results = propagate_series(&series, &params)?;

    let mut frames = Vec::with_capacity(results.len());
    for r in &results {
        let name = frame_name("label", r.frame_index);
        out.write(a.out.join(&name), |p| write_labels(p, &r.pseudo_label))?;
        frames.push(FrameEntry {
            frame_index: r.frame_index,
            chosen_template: r.chosen_template,
            es_norm_mm: r.es_norm,
            ed_norm_mm: r.ed_norm,
            pseudo_label: name,
        });
    }
    let report = PropagationReport {
        subject_id: series.subject_id,
        es_index: series.es_index,
        ed_index: series.ed_index,
        params,
        frames,
    };
    out.write(a.out.join("propagation_report.json"), |p| write_json(p, &report))
}

struct LoadedFrame {
    subject_id: String,
    vendor: String,
    center: String,
    file_name: String,
    volume: ScalarVolume,
}

fn load_frames(manifests: &[PathBuf]) -> Result<Vec<LoadedFrame>> {
    let parsed = manifests.iter().map(|m| read_manifest(m)).collect::<Result<Vec<_>>>()?;
    let mut subjects = std::collections::BTreeSet::new();
    for m in &parsed {
        if !subjects.insert(m.subject_id.as_str()) {
            return Err(Error::param("manifest", format!("subject `{}` listed twice", m.subject_id)));
        }
    }
    let mut frames = Vec::new();
    for m in &parsed {
        let loaded = m
            .frame_paths
            .par_iter()
            .map(|p| load_volume_any(p))
            .collect::<Result<Vec<_>>>()?;
        for (path, volume) in m.frame_paths.iter().zip(loaded) {
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            frames.push(LoadedFrame {
                subject_id: m.subject_id.clone(),
                vendor: m.vendor.clone(),
                center: m.center.clone(),
                file_name: format!("{stem}.mvol"),
                volume,
            });
        }
    }
    Ok(frames)
}

#[derive(Serialize)]
struct MatchedEntry {
    subject_id: String,
    vendor: String,
    output: String,
    degenerate: bool,
}

#[derive(Serialize)]
struct StyleSummary {
    seed: u64,
    n_ref_volumes: usize,
    reference_voxels: usize,
    reference_median: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    from_vendor: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    to_vendor: Option<String>,
    outputs: Vec<MatchedEntry>,
}

fn relative_output(f: &LoadedFrame) -> String {
    format!("{}/{}", f.subject_id, f.file_name)
}

fn write_matched(out: &mut Outputs, root: &Path, frames: &[&LoadedFrame], volumes: &[ScalarVolume]) -> Result<()> {
    for (f, v) in frames.iter().zip(volumes) {
        out.dir(&root.join(&f.subject_id))?;
        out.write(root.join(relative_output(f)), |p| write_volume(p, v))?;
    }
    Ok(())
}

fn histmatch(a: StyleArgs, out: &mut Outputs) -> Result<()> {
    let frames = load_frames(&a.manifest)?;
    out.dir(&a.out)?;
    let corpus: Vec<ScalarVolume> = frames.iter().map(|f| f.volume.clone()).collect();
    let n = a.n_ref_volumes.min(corpus.len());
    let reference = build_reference(&corpus, n, a.seed)?;
    let matched = frames
        .par_iter()
        .map(|f| histogram_match(&f.volume, &reference))
        .collect::<Result<Vec<_>>>()?;

    let refs: Vec<&LoadedFrame> = frames.iter().collect();
    let volumes: Vec<ScalarVolume> = matched.iter().map(|m| m.volume.clone()).collect();
    write_matched(out, &a.out, &refs, &volumes)?;
    let summary = StyleSummary {
        seed: a.seed,
        n_ref_volumes: n,
        reference_voxels: reference.len(),
        reference_median: reference.median(),
        from_vendor: None,
        to_vendor: None,
        outputs: frames
            .iter()
            .zip(&matched)
            .map(|(f, m)| MatchedEntry {
                subject_id: f.subject_id.clone(),
                vendor: f.vendor.clone(),
                output: relative_output(f),
                degenerate: m.degenerate,
            })
            .collect(),
    };
    out.write(a.out.join("histmatch_summary.json"), |p| write_json(p, &summary))
}

fn transfer(a: TransferArgs, out: &mut Outputs) -> Result<()> {
    let frames = load_frames(&a.style.manifest)?;
    for tag in [&a.from_vendor, &a.to_vendor] {
        if !frames.iter().any(|f| &f.vendor == tag) {
            return Err(Error::MissingVendor(tag.clone()));
        }
    }
    out.dir(&a.style.out)?;
    let n_targets = frames.iter().filter(|f| f.vendor == a.to_vendor).count();
    let n = a.style.n_ref_volumes.min(n_targets);
    let dataset: Vec<(ScalarVolume, String)> = frames.iter().map(|f| (f.volume.clone(), f.vendor.clone())).collect();
    let volumes = vendor_transfer(&dataset, &a.from_vendor, &a.to_vendor, n, a.style.seed)?;

    let sources: Vec<&LoadedFrame> = frames.iter().filter(|f| f.vendor == a.from_vendor).collect();
    write_matched(out, &a.style.out, &sources, &volumes)?;
    let targets: Vec<ScalarVolume> = frames
        .iter()
        .filter(|f| f.vendor == a.to_vendor)
        .map(|f| f.volume.clone())
        .collect();
    let reference = build_reference(&targets, n, a.style.seed)?;
    let summary = StyleSummary {
        seed: a.style.seed,
        n_ref_volumes: n,
        reference_voxels: reference.len(),
        reference_median: reference.median(),
        from_vendor: Some(a.from_vendor.clone()),
        to_vendor: Some(a.to_vendor.clone()),
        outputs: sources
            .iter()
            .zip(&volumes)
            .map(|(f, v)| MatchedEntry {
                subject_id: f.subject_id.clone(),
                vendor: a.to_vendor.clone(),
                output: relative_output(f),
                degenerate: v.is_constant(),
            })
            .collect(),
    };
    out.write(a.style.out.join("transfer_summary.json"), |p| write_json(p, &summary))
}

#[derive(Serialize)]
struct NamedCase {
    name: String,
    #[serde(flatten)]
    report: CaseReport,
}

#[derive(Serialize)]
struct ClassMean {
    class: String,
    dice: f64,
    /// Mean over cases where the distance is defined; `None` if it never is.
    hausdorff_mm: Option<f64>,
}

#[derive(Serialize)]
struct EvaluationReport {
    cases: Vec<NamedCase>,
    mean: Vec<ClassMean>,
}

/// Label files in `dir` by file name: MVOL label volumes and `.nii` files.
fn label_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().map(|n| n.to_string_lossy().into_owned()) else {
            continue;
        };
        if name.ends_with(".mvol") || name.ends_with(".nii") {
            out.insert(name, path);
        }
    }
    Ok(out)
}

fn load_label_file(path: &Path) -> Result<Option<crate::volume::LabelMap>> {
    if path.extension().is_some_and(|e| e == "nii") {
        return load_labels_any(path).map(Some);
    }
    match io::read_mvol(path)? {
        MvolData::Label(lm) => Ok(Some(lm)),
        MvolData::Scalar(_) => Ok(None),
    }
}

fn evaluate(a: EvaluateArgs, out: &mut Outputs) -> Result<()> {
    let pred = label_files(&a.pred)?;
    let gt = label_files(&a.gt)?;
    let mut cases = Vec::new();
    for (name, pred_path) in &pred {
        let Some(gt_path) = gt.get(name) else { continue };
        let Some(p) = load_label_file(pred_path)? else { continue };
        let g = load_label_file(gt_path)?
            .ok_or_else(|| Error::format("kind", format!("{} is not a label volume", gt_path.display())))?;
        cases.push(NamedCase {
            name: name.clone(),
            report: evaluate_case(&p, &g)?,
        });
    }
    if cases.is_empty() {
        return Err(Error::Degenerate(format!(
            "no label files in {} have a counterpart in {}",
            a.pred.display(),
            a.gt.display()
        )));
    }
    let mean = Label::FOREGROUND
        .iter()
        .enumerate()
        .map(|(k, label)| {
            let dice = cases.iter().map(|c| c.report.classes[k].dice).sum::<f64>() / cases.len() as f64;
            let hd: Vec<f64> = cases.iter().filter_map(|c| c.report.classes[k].hausdorff_mm).collect();
            ClassMean {
                class: label.name().to_string(),
                dice,
                hausdorff_mm: (!hd.is_empty()).then(|| hd.iter().sum::<f64>() / hd.len() as f64),
            }
        })
        .collect();
    let report = EvaluationReport { cases, mean };
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::io(&a.pred, std::io::Error::other(e)))?;
    if let Some(dir) = &a.out {
        out.dir(dir)?;
        out.write(dir.join("evaluation_report.json"), |p| write_json(p, &report))?;
    }
    println!("{text}");
    Ok(())
}

fn report(a: ReportArgs, out: &mut Outputs) -> Result<()> {
    if a.bins < 2 {
        return Err(Error::param("bins", "at least 2 bins are required"));
    }
    let frames = load_frames(&a.manifest)?;
    out.dir(&a.out)?;
    let mut groups: BTreeMap<String, Vec<ScalarVolume>> = BTreeMap::new();
    for f in frames {
        let tag = match a.group_by {
            GroupBy::Vendor => f.vendor,
            GroupBy::Center => f.center,
            GroupBy::Subject => f.subject_id,
        };
        groups.entry(tag).or_default().push(f.volume);
    }
    let rep = histogram_report(&groups, a.bins)?;
    out.write(a.out.join("histogram_report.json"), |p| write_json(p, &rep))?;
    out.write(a.out.join("histogram_report.tsv"), |p| io::write_atomic(p, rep.to_rows().as_bytes()))
}
