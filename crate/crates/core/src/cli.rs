//! The `spinemorph` command line.
//!
//! Exit codes: 0 on success, 1 on domain errors (bad data, failed
//! measurement, missing inputs), 2 on usage errors. Every artifact is written
//! atomically. `--log` writes a JSON-lines run log without timestamps, so
//! identical invocations produce identical logs.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::autoplan::{self, SegPlan};
use crate::cohort;
use crate::error::{Error, Result};
use crate::evalkit::{self, EvalAccumulator, MetricsReport, ReportFormat};
use crate::fsutil::{atomic_write, read_json, write_json};
use crate::morpho::{self, MeasureParams, MeasurementReport};
use crate::niftiio::{self, Datatype, WriteOptions};
use crate::phantom::{self, BaselineConfig, PhantomSpec};
use crate::postseg::{self, Connectivity};
use crate::prep::{self, Resample, ResampleMode, WindowSpec};
use crate::volgrid::{Grid, LabelMap, LabelScheme};

#[derive(Debug, Parser)]
#[command(name = "spinemorph", version, about = "Spinal MRI morphometry toolkit")]
pub struct Cli {
    /// Worker threads for per-scan parallelism (default: all cores)
    #[arg(long, global = true, env = "SPINEMORPH_JOBS")]
    pub jobs: Option<usize>,
    /// Write a JSON-lines run log to this path
    #[arg(long, global = true)]
    pub log: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Lumbar,
    Cervical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Segmentation {
    /// Threshold segmenter driven by the scan's phantom spec or --baseline
    Baseline,
    /// Use `<scan>/labels.nii` as the segmentation
    Precomputed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CohortFormat {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Re-encode a NIfTI file in RAS orientation
    Convert {
        input: PathBuf,
        output: PathBuf,
        /// Treat the input as a label map
        #[arg(long)]
        labels: bool,
        /// Output datatype: u8, i16 or f32
        #[arg(long)]
        datatype: Option<Datatype>,
        /// Linearly rescale intensities into the datatype range
        #[arg(long)]
        quantize: bool,
    },
    /// Fingerprint a set of images and write the segmentation plan
    Plan {
        #[arg(long = "image", required = true)]
        images: Vec<PathBuf>,
        /// Foreground label maps, one per image, in the same order
        #[arg(long = "labels")]
        labels: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reorient, resample and normalize an image
    Preprocess {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Isotropic target spacing in mm (overrides the plan)
        #[arg(long)]
        target_spacing: Option<f64>,
        /// Window as WW:WC instead of z-score
        #[arg(long)]
        window: Option<WindowSpec>,
        /// Label map whose foreground defines the z-score statistics region
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Remove small connected components from a label map
    Postprocess {
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        min_voxels: Option<usize>,
        /// 6 or 26
        #[arg(long)]
        connectivity: Option<Connectivity>,
        /// Write the pre-filter component table as JSON
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Measure disc heights and canal AP diameters
    Measure {
        #[arg(long)]
        labels: PathBuf,
        /// Measurement JSON (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        min_columns: Option<usize>,
        #[arg(long)]
        connectivity: Option<Connectivity>,
    },
    /// Compare a predicted label map (and measurements) with ground truth
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred_measurements: Option<PathBuf>,
        #[arg(long)]
        gt_measurements: Option<PathBuf>,
        /// text, json or csv
        #[arg(long, default_value = "text")]
        format: ReportFormat,
        /// Rendered report (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the metrics JSON here
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Generate synthetic phantoms with ground truth
    Phantom {
        #[arg(long, conflicts_with = "preset")]
        spec: Option<PathBuf>,
        #[arg(long)]
        preset: Option<Preset>,
        /// Generate this many phantoms from the built-in sweep
        #[arg(long, conflicts_with_all = ["spec", "preset"])]
        sweep: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a scan manifest into cohort tables
    Cohort {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: CohortFormat,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fail on the first bad row instead of skipping it
        #[arg(long)]
        strict: bool,
    },
    /// Render a metrics JSON file
    Report {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, default_value = "text")]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Preprocess, segment, postprocess, measure and evaluate a scan directory
    Pipeline {
        /// Directory of scan subdirectories, each holding `image.nii`
        #[arg(long)]
        scans: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "baseline")]
        segmentation: Segmentation,
        /// Baseline thresholds as JSON (default: derived from `<scan>/spec.json`)
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Skip writing the preprocessed image
        #[arg(long)]
        no_preprocess: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Convert { .. } => "convert",
            Command::Plan { .. } => "plan",
            Command::Preprocess { .. } => "preprocess",
            Command::Postprocess { .. } => "postprocess",
            Command::Measure { .. } => "measure",
            Command::Evaluate { .. } => "evaluate",
            Command::Phantom { .. } => "phantom",
            Command::Cohort { .. } => "cohort",
            Command::Report { .. } => "report",
            Command::Pipeline { .. } => "pipeline",
        }
    }
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(String),
    Domain(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

struct Ctx<'a> {
    stdout: &'a mut dyn Write,
    stderr: &'a mut dyn Write,
    log: Vec<Value>,
    pool: Option<rayon::ThreadPool>,
}

impl Ctx<'_> {
    /// Run parallel work on the configured pool.
    fn par<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match &self.pool {
            Some(p) => p.install(f),
            None => f(),
        }
    }

    fn event(&mut self, v: Value) {
        self.log.push(v);
    }

    /// Write to `path` atomically, or to stdout when no path is given.
    fn emit(&mut self, path: Option<&Path>, text: &str) -> Result<()> {
        match path {
            Some(p) => {
                atomic_write(p, text.as_bytes())?;
                self.event(json!({"event": "artifact", "path": p.display().to_string()}));
            }
            None => self.stdout.write_all(text.as_bytes())?,
        }
        Ok(())
    }

    fn warn(&mut self, msg: &str) {
        let _ = writeln!(self.stderr, "warning: {msg}");
    }
}

/// Run with process stdio. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

/// Run with explicit output streams.
pub fn run_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = stdout.write_all(text.as_bytes());
            } else {
                let _ = stderr.write_all(text.as_bytes());
            }
            return code;
        }
    };
    let log_path = cli.log.clone();
    let mut ctx = Ctx {
        stdout,
        stderr,
        log: Vec::new(),
        pool: None,
    };
    ctx.event(json!({
        "event": "start",
        "tool": "spinemorph",
        "version": crate::VERSION,
        "command": cli.command.name(),
        "argv": argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect::<Vec<_>>(),
        "jobs": cli.jobs,
    }));

    let outcome = match cli.jobs {
        Some(0) => Err(Failure::Usage("--jobs must be at least 1".into())),
        jobs => {
            let mut builder = rayon::ThreadPoolBuilder::new();
            if let Some(n) = jobs {
                builder = builder.num_threads(n);
            }
            match builder.build() {
                Ok(pool) => {
                    ctx.pool = Some(pool);
                    dispatch(cli.command, &mut ctx)
                }
                Err(e) => Err(Failure::Domain(Error::arg(format!("thread pool: {e}")))),
            }
        }
    };
    let code = match &outcome {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(ctx.stderr, "usage error: {m}");
            2
        }
        Err(Failure::Domain(e)) => {
            let _ = writeln!(ctx.stderr, "error: {e}");
            1
        }
    };
    let mut end = json!({"event": "end", "exit_code": code});
    if let Err(Failure::Domain(e)) = &outcome {
        end["error"] = json!(e.to_string());
    }
    ctx.event(end);
    if let Some(path) = log_path {
        let mut text = String::new();
        for v in &ctx.log {
            text.push_str(&v.to_string());
            text.push('\n');
        }
        if let Err(e) = atomic_write(&path, text.as_bytes()) {
            let _ = writeln!(ctx.stderr, "error: writing run log: {e}");
            return code.max(1);
        }
    }
    code
}

fn require_exists(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::at_path(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "input does not exist"),
        ))
    }
}

fn read_plan(path: &Path) -> Result<SegPlan> {
    require_exists(path)?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::at_path(path, e))?;
    SegPlan::from_json(&text)
}

fn read_labels(path: &Path) -> Result<LabelMap> {
    require_exists(path)?;
    niftiio::read_labels(path, LabelScheme::shared_standard())
}

fn write_labels(lm: &LabelMap, path: &Path) -> Result<()> {
    niftiio::write_labels(lm, path, niftiio::label_datatype_for(lm.scheme()))
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::at_path(path, e))
}

fn dispatch(cmd: Command, ctx: &mut Ctx<'_>) -> CmdResult {
    match cmd {
        Command::Convert {
            input,
            output,
            labels,
            datatype,
            quantize,
        } => {
            require_exists(&input)?;
            if labels {
                if quantize {
                    return Err(Failure::Usage("--quantize does not apply to label maps".into()));
                }
                let lm = niftiio::read_labels(&input, LabelScheme::shared_standard())?;
                let dt = datatype.unwrap_or_else(|| niftiio::label_datatype_for(lm.scheme()));
                niftiio::write_labels(&lm, &output, dt)?;
            } else {
                let v = niftiio::read_volume(&input)?;
                let dt = datatype.unwrap_or(Datatype::F32);
                let opts = if quantize {
                    WriteOptions::quantized(dt)
                } else {
                    WriteOptions::new(dt)
                };
                niftiio::write_volume(&v, &output, opts)?;
            }
            ctx.event(json!({"event": "artifact", "path": output.display().to_string()}));
            Ok(())
        }
        Command::Plan { images, labels, out } => {
            if !labels.is_empty() && labels.len() != images.len() {
                return Err(Failure::Usage(format!(
                    "{} label maps given for {} images",
                    labels.len(),
                    images.len()
                )));
            }
            let volumes = ctx.par(|| {
                images
                    .par_iter()
                    .map(|p| require_exists(p).and_then(|_| niftiio::read_volume(p)))
                    .collect::<Result<Vec<_>>>()
            })?;
            let masks = ctx.par(|| labels.par_iter().map(|p| read_labels(p)).collect::<Result<Vec<_>>>())?;
            let fp = autoplan::fingerprint(&volumes, (!masks.is_empty()).then_some(masks.as_slice()))?;
            let plan = autoplan::make_plan(&fp);
            ctx.emit(out.as_deref(), &plan.to_json()?)?;
            Ok(())
        }
        Command::Preprocess {
            input,
            out,
            plan,
            target_spacing,
            window,
            mask,
        } => {
            require_exists(&input)?;
            let plan = plan.as_deref().map(read_plan).transpose()?;
            let target = match (target_spacing, &plan) {
                (Some(s), _) if !(s.is_finite() && s > 0.0) => {
                    return Err(Failure::Usage("--target-spacing must be positive".into()))
                }
                (Some(s), _) => [s; 3],
                (None, Some(p)) => p.target_spacing_mm,
                (None, None) => [1.25; 3],
            };
            let v = niftiio::read_volume(&input)?;
            let resampled = v.resample(target, ResampleMode::Trilinear)?;
            let normalized = match window {
                Some(w) => {
                    ctx.event(json!({"event": "stage", "stage": "window", "ww": w.width(), "wc": w.center()}));
                    prep::window(&resampled, &w)
                }
                None => {
                    let m = mask
                        .as_deref()
                        .map(|p| read_labels(p).and_then(|lm| lm.resample(target, ResampleMode::Nearest)))
                        .transpose()?
                        .map(|lm| lm.foreground());
                    let z = prep::zscore(&resampled, m.as_ref())?;
                    if z.degenerate {
                        ctx.warn("constant intensities; z-scored image is all zeros");
                    }
                    ctx.event(json!({"event": "stage", "stage": "zscore", "mean": z.mean, "std": z.std, "degenerate": z.degenerate}));
                    z.volume
                }
            };
            niftiio::write_volume(&normalized, &out, WriteOptions::default())?;
            ctx.event(json!({
                "event": "artifact",
                "path": out.display().to_string(),
                "dims": normalized.geometry().dims,
                "spacing_mm": normalized.geometry().spacing,
            }));
            Ok(())
        }
        Command::Postprocess {
            labels,
            out,
            plan,
            min_voxels,
            connectivity,
            report,
        } => {
            let plan = plan.as_deref().map(read_plan).transpose()?;
            let min = min_voxels
                .or(plan.as_ref().map(|p| p.min_component_voxels))
                .unwrap_or(50);
            if min == 0 {
                return Err(Failure::Usage("--min-voxels must be at least 1".into()));
            }
            let conn = connectivity
                .or(plan.as_ref().map(|p| p.connectivity))
                .unwrap_or_default();
            let lm = read_labels(&labels)?;
            let (filtered, table) = postseg::filter_small_with_report(&lm, min, conn);
            let removed = table.components.iter().filter(|c| c.voxels < min).count();
            write_labels(&filtered, &out)?;
            if let Some(r) = report {
                write_json(&r, &table)?;
            }
            ctx.event(json!({
                "event": "stage",
                "stage": "postprocess",
                "min_voxels": min,
                "connectivity": conn,
                "components": table.len(),
                "removed": removed,
            }));
            Ok(())
        }
        Command::Measure {
            labels,
            out,
            csv,
            min_columns,
            connectivity,
        } => {
            let lm = read_labels(&labels)?;
            let mut params = MeasureParams::default();
            if let Some(c) = min_columns {
                params.min_columns = c;
            }
            if let Some(c) = connectivity {
                params.connectivity = c;
            }
            let report = morpho::measure_all_with(&lm, &params);
            for l in &report.levels {
                if let Some(e) = &l.disc_height_error {
                    ctx.warn(&format!("{}: {e}", l.level));
                }
            }
            if let Some(c) = csv {
                atomic_write(&c, report.to_csv()?.as_bytes())?;
            }
            ctx.emit(out.as_deref(), &report.to_json()?)?;
            Ok(())
        }
        Command::Evaluate {
            pred,
            gt,
            pred_measurements,
            gt_measurements,
            format,
            out,
            metrics,
        } => {
            let p = read_labels(&pred)?;
            let g = read_labels(&gt)?;
            let load = |path: Option<PathBuf>| -> Result<Option<MeasurementReport>> {
                path.map(|p| require_exists(&p).and_then(|_| read_json(&p))).transpose()
            };
            let pm = load(pred_measurements)?;
            let gm = load(gt_measurements)?;
            let mut acc = EvalAccumulator::new();
            acc.add_scan(&p, &g, pm.as_ref(), gm.as_ref())?;
            let report = acc.finish();
            if let Some(m) = metrics {
                atomic_write(&m, evalkit::render_report(&report, ReportFormat::Json)?.as_bytes())?;
            }
            ctx.emit(out.as_deref(), &evalkit::render_report(&report, format)?)?;
            Ok(())
        }
        Command::Phantom {
            spec,
            preset,
            sweep,
            seed,
            out,
        } => {
            let specs: Vec<(String, PhantomSpec)> = if let Some(n) = sweep {
                PhantomSpec::sweep(n, seed.unwrap_or(1))
                    .into_iter()
                    .enumerate()
                    .map(|(i, s)| (format!("phantom_{i:03}"), s))
                    .collect()
            } else {
                let mut s = match (spec, preset) {
                    (Some(path), _) => {
                        require_exists(&path)?;
                        read_json::<PhantomSpec>(&path)?
                    }
                    (None, Some(Preset::Cervical)) => PhantomSpec::cervical(),
                    (None, _) => PhantomSpec::lumbar(),
                };
                if let Some(seed) = seed {
                    s.seed = seed;
                }
                vec![(String::new(), s)]
            };
            ensure_dir(&out)?;
            let results: Vec<Result<()>> = ctx.par(|| {
                specs
                    .par_iter()
                    .map(|(name, spec)| {
                        let dir = if name.is_empty() { out.clone() } else { out.join(name) };
                        ensure_dir(&dir)?;
                        write_phantom(spec, &dir)
                    })
                    .collect()
            });
            for ((name, _), r) in specs.iter().zip(results) {
                r?;
                ctx.event(json!({"event": "phantom", "name": name}));
            }
            Ok(())
        }
        Command::Cohort {
            manifest,
            format,
            out,
            strict,
        } => {
            require_exists(&manifest)?;
            let m = cohort::load_manifest(&manifest)?;
            let n_errors = m.errors.len();
            for e in &m.errors {
                ctx.warn(&format!("{}: line {}: {}", manifest.display(), e.line, e.kind));
            }
            let records = if strict { m.strict()? } else { m.records };
            let summary = cohort::summarize(&records);
            let text = match format {
                CohortFormat::Text => cohort::render_text(&summary),
                CohortFormat::Json => cohort::render_json(&summary)?,
            };
            ctx.event(json!({"event": "stage", "stage": "cohort", "records": records.len(), "rejected_rows": n_errors}));
            ctx.emit(out.as_deref(), &text)?;
            Ok(())
        }
        Command::Report { metrics, format, out } => {
            require_exists(&metrics)?;
            let report: MetricsReport = read_json(&metrics)?;
            report.validate()?;
            ctx.emit(out.as_deref(), &evalkit::render_report(&report, format)?)?;
            Ok(())
        }
        Command::Pipeline {
            scans,
            plan,
            out,
            segmentation,
            baseline,
            no_preprocess,
        } => {
            let plan = read_plan(&plan)?;
            require_exists(&scans)?;
            let baseline = baseline
                .map(|p| require_exists(&p).and_then(|_| read_json::<BaselineConfig>(&p)))
                .transpose()?;
            let opts = PipelineOptions {
                plan,
                segmentation,
                baseline,
                preprocess: !no_preprocess,
            };
            run_pipeline(&scans, &out, &opts, ctx)
        }
    }
}

/// Write `image.nii`, `gt_labels.nii`, `gt_measurements.json` and
/// `spec.json` into `dir`.
pub fn write_phantom(spec: &PhantomSpec, dir: &Path) -> Result<()> {
    let (volume, gt) = phantom::generate(spec)?;
    ensure_dir(dir)?;
    niftiio::write_volume(&volume, &dir.join("image.nii"), WriteOptions::default())?;
    write_labels(&gt.labels, &dir.join("gt_labels.nii"))?;
    write_json(&dir.join("gt_measurements.json"), &gt.measurements)?;
    write_json(&dir.join("spec.json"), spec)?;
    Ok(())
}

pub struct PipelineOptions {
    pub plan: SegPlan,
    pub segmentation: Segmentation,
    pub baseline: Option<BaselineConfig>,
    pub preprocess: bool,
}

impl PipelineOptions {
    /// Baseline segmentation driven by each scan's `spec.json`, with the
    /// preprocessed image written.
    pub fn new(plan: SegPlan) -> Self {
        PipelineOptions {
            plan,
            segmentation: Segmentation::Baseline,
            baseline: None,
            preprocess: true,
        }
    }
}

struct ScanOutput {
    labels: LabelMap,
    measurements: MeasurementReport,
    gt: Option<(LabelMap, Option<MeasurementReport>)>,
}

/// Scan ids are subdirectory names holding an `image.nii`, sorted.
fn list_scans(scans: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(scans).map_err(|e| Error::at_path(scans, e))? {
        let entry = entry.map_err(|e| Error::at_path(scans, e))?;
        if entry.path().join("image.nii").is_file() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(Error::arg(format!(
            "no scan directories with image.nii under {}",
            scans.display()
        )));
    }
    Ok(ids)
}

fn process_scan(src: &Path, dst: &Path, opts: &PipelineOptions, events: &mut Vec<Value>) -> Result<ScanOutput> {
    ensure_dir(dst)?;
    let plan = &opts.plan;
    let image = niftiio::read_volume(&src.join("image.nii"))?;

    if opts.preprocess {
        let resampled = image.resample(plan.target_spacing_mm, ResampleMode::Trilinear)?;
        let z = prep::zscore(&resampled, None)?;
        niftiio::write_volume(&z.volume, &dst.join("preprocessed.nii"), WriteOptions::default())?;
        events.push(json!({"stage": "preprocess", "dims": z.volume.geometry().dims, "degenerate": z.degenerate}));
    }

    let raw = match opts.segmentation {
        Segmentation::Precomputed => {
            let lm = read_labels(&src.join("labels.nii"))?;
            events.push(json!({"stage": "segment", "source": "precomputed"}));
            lm
        }
        Segmentation::Baseline => {
            let cfg = match &opts.baseline {
                Some(c) => c.clone(),
                None => {
                    let spec_path = src.join("spec.json");
                    require_exists(&spec_path)?;
                    BaselineConfig::for_spec(&read_json::<PhantomSpec>(&spec_path)?)
                }
            };
            let lm = phantom::segment_baseline(&image, &cfg)?;
            events.push(json!({"stage": "segment", "source": "baseline"}));
            lm
        }
    };
    if raw.geometry().dims != image.geometry().dims {
        return Err(Error::arg(format!(
            "segmentation dims {:?} differ from image dims {:?}",
            raw.geometry().dims,
            image.geometry().dims
        )));
    }

    let (labels, table) = postseg::filter_small_with_report(&raw, plan.min_component_voxels, plan.connectivity);
    write_labels(&labels, &dst.join("labels.nii"))?;
    let removed = table.components.iter().filter(|c| c.voxels < plan.min_component_voxels).count();
    events.push(json!({"stage": "postprocess", "components": table.len(), "removed": removed}));

    let params = MeasureParams {
        connectivity: plan.connectivity,
        ..MeasureParams::default()
    };
    let measurements = morpho::measure_all_with(&labels, &params);
    write_json(&dst.join("measurements.json"), &measurements)?;
    let failed = measurements.levels.iter().filter(|l| l.disc_height_mm.is_none()).count();
    events.push(json!({"stage": "measure", "levels": measurements.levels.len(), "failed_levels": failed}));

    let gt_path = src.join("gt_labels.nii");
    let gt = if gt_path.is_file() {
        let gl = read_labels(&gt_path)?;
        let gm_path = src.join("gt_measurements.json");
        let gm = gm_path.is_file().then(|| read_json(&gm_path)).transpose()?;
        Some((gl, gm))
    } else {
        None
    };
    Ok(ScanOutput {
        labels,
        measurements,
        gt,
    })
}

/// Run every stage for each scan in parallel, then evaluate in scan-id order.
/// A failed scan keeps the outputs already written and stops the aggregate.
pub fn pipeline(scans: &Path, out: &Path, opts: &PipelineOptions) -> Result<Option<MetricsReport>> {
    let mut stdout = std::io::sink();
    let mut stderr = std::io::sink();
    let mut ctx = Ctx {
        stdout: &mut stdout,
        stderr: &mut stderr,
        log: Vec::new(),
        pool: None,
    };
    pipeline_inner(scans, out, opts, &mut ctx)
}

fn run_pipeline(scans: &Path, out: &Path, opts: &PipelineOptions, ctx: &mut Ctx<'_>) -> CmdResult {
    pipeline_inner(scans, out, opts, ctx)?;
    Ok(())
}

fn pipeline_inner(scans: &Path, out: &Path, opts: &PipelineOptions, ctx: &mut Ctx<'_>) -> Result<Option<MetricsReport>> {
    opts.plan.validate()?;
    let ids = list_scans(scans)?;
    ensure_dir(out)?;
    let outcomes: Vec<(Vec<Value>, Result<ScanOutput>)> = ctx.par(|| {
        ids.par_iter()
            .map(|id| {
                let mut events = Vec::new();
                let r = process_scan(&scans.join(id), &out.join(id), opts, &mut events);
                (events, r)
            })
            .collect()
    });

    let mut outputs = Vec::new();
    let mut first_error = None;
    for (id, (events, result)) in ids.iter().zip(outcomes) {
        for mut e in events {
            e["event"] = json!("stage");
            e["scan"] = json!(id);
            ctx.event(e);
        }
        match result {
            Ok(o) => outputs.push((id, o)),
            Err(e) => {
                ctx.event(json!({"event": "scan_failed", "scan": id, "error": e.to_string()}));
                let _ = writeln!(ctx.stderr, "error: scan {id}: {e}");
                first_error.get_or_insert(Error::arg(format!("scan {id}: {e}")));
            }
        }
    }
    if let Some(e) = first_error {
        return Err(e);
    }

    let mut acc = EvalAccumulator::new();
    let mut evaluated = 0;
    for (_, o) in &outputs {
        if let Some((gl, gm)) = &o.gt {
            acc.add_scan(&o.labels, gl, Some(&o.measurements), gm.as_ref())?;
            evaluated += 1;
        }
    }
    let summary: Vec<Value> = outputs
        .iter()
        .map(|(id, o)| {
            json!({
                "scan": id,
                "levels": o.measurements.levels.len(),
                "labels_present": o.labels.labels_present().len(),
            })
        })
        .collect();
    write_json(&out.join("summary.json"), &summary)?;
    if evaluated == 0 {
        ctx.event(json!({"event": "stage", "stage": "evaluate", "scans": 0}));
        return Ok(None);
    }
    let report = acc.finish();
    atomic_write(
        &out.join("metrics.json"),
        evalkit::render_report(&report, ReportFormat::Json)?.as_bytes(),
    )?;
    atomic_write(
        &out.join("metrics.txt"),
        evalkit::render_report(&report, ReportFormat::Text)?.as_bytes(),
    )?;
    ctx.event(json!({"event": "stage", "stage": "evaluate", "scans": evaluated}));
    Ok(Some(report))
}
