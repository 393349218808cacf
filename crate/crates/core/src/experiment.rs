//! End-to-end pipelines behind the command-line subcommands.
//!
//! Every run writes into `<output_dir>/<run-id>/`. Files are first written to
//! a hidden sibling `.<run-id>.partial` directory that is renamed into place
//! only when the run succeeds, so a failed run leaves nothing behind.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::beams::{build_codebook, codebook_digest, write_codebook, Codebook};
use crate::channel::argmax_lowest;
use crate::checks::{gradient_suite, CheckResult, TOLERANCE};
use crate::config::{ExperimentConfig, Method};
use crate::dataset::{
    generate_samples, label_histogram, read_dataset, split_dataset, student_input_dim, student_row,
    teacher_input_dim, teacher_row, top_label_coverage, write_dataset, DatasetManifest,
    FeatureLayout, Sample,
};
use crate::distill::BeamSpace;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, format_table, MetricsReport};
use crate::nn::{
    load_checkpoint, round_to_f32, save_checkpoint, train, BeamNet, Guidance, History, Mlp, Model,
    Parameterized, TeacherNet, TeacherTargets, TrainConfig, TrainData, ValData,
};
use crate::scene::{build_scene, generate_episode, SceneConfig};
use crate::seed;

const STREAM_TEACHER: u64 = 31;
const STREAM_STUDENT: u64 = 32;
const STREAM_SCENE: u64 = 33;

/// Number of most frequent labels whose coverage is reported.
pub const COVERAGE_TOP: usize = 10;
/// Coverage below which the label histogram is flagged as not concentrated.
pub const COVERAGE_WARN: f64 = 0.5;
/// Finite-difference configurations per gradient check.
pub const GRAD_CHECK_CONFIGURATIONS: usize = 20;

/// The subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    SceneGen,
    DatasetGen,
    TrainTeacher,
    Distill,
    Evaluate,
    GradCheck,
    Reproduce,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SceneGen => "scene-gen",
            Command::DatasetGen => "dataset-gen",
            Command::TrainTeacher => "train-teacher",
            Command::Distill => "distill",
            Command::Evaluate => "evaluate",
            Command::GradCheck => "grad-check",
            Command::Reproduce => "reproduce",
        }
    }
}

/// Existing artifacts a run may start from instead of regenerating them.
#[derive(Debug, Clone, Default)]
pub struct Inputs {
    /// Dataset directory written by `dataset-gen`.
    pub dataset: Option<PathBuf>,
    /// Teacher checkpoint header for `distill`.
    pub teacher: Option<PathBuf>,
    /// Checkpoint header for `evaluate`.
    pub checkpoint: Option<PathBuf>,
}

/// What a finished run reports back.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub run_dir: PathBuf,
    /// Human-readable summary, also written to `report.txt` where relevant.
    pub text: String,
    /// The reports threshold assertions apply to.
    pub reports: Vec<(String, MetricsReport)>,
    /// False when a built-in check (the gradient suite) failed.
    pub passed: bool,
}

pub fn run_id(command: Command, config: &ExperimentConfig) -> String {
    let seeds: Vec<String> = config.seeds.iter().map(|s| s.to_string()).collect();
    format!(
        "{}-{}-s{}",
        command.name(),
        &config.digest()[..12],
        seeds.join("_")
    )
}

/// Runs one subcommand end to end and commits its run directory.
pub fn run(command: Command, config: &ExperimentConfig, inputs: &Inputs) -> Result<Outcome> {
    config.validate()?;
    let id = run_id(command, config);
    let staging = Staging::create(&config.output_dir, &id)?;
    let dir = staging.path().to_path_buf();
    write_json(&dir.join("config.json"), config)?;
    let (text, reports, passed) = match command {
        Command::SceneGen => scene_gen(config, &dir)?,
        Command::DatasetGen => dataset_gen(config, &dir)?,
        Command::TrainTeacher => train_teacher_cmd(config, inputs, &dir)?,
        Command::Distill => distill_cmd(config, inputs, &dir)?,
        Command::Evaluate => evaluate_cmd(config, inputs, &dir)?,
        Command::GradCheck => grad_check_cmd(config, &dir)?,
        Command::Reproduce => reproduce(config, inputs, &dir)?,
    };
    let manifest = RunManifest {
        subcommand: command.name().to_string(),
        run_id: id,
        config_digest: config.digest(),
        seeds: config.seeds.clone(),
        artifacts: list_files(&dir)?,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    let run_dir = staging.commit()?;
    Ok(Outcome {
        run_dir,
        text,
        reports,
        passed,
    })
}

#[derive(Debug, Serialize)]
struct RunManifest {
    subcommand: String,
    run_id: String,
    config_digest: String,
    seeds: Vec<u64>,
    /// Paths relative to the run directory, sorted.
    artifacts: Vec<String>,
}

/// A run directory under construction. Dropping it without
/// [`Staging::commit`] removes everything written so far.
#[derive(Debug)]
pub struct Staging {
    partial: PathBuf,
    target: PathBuf,
    committed: bool,
}

impl Staging {
    pub fn create(root: &Path, id: &str) -> Result<Self> {
        let partial = root.join(format!(".{id}.partial"));
        if partial.exists() {
            fs::remove_dir_all(&partial).map_err(|e| Error::io(&partial, e))?;
        }
        fs::create_dir_all(&partial).map_err(|e| Error::io(&partial, e))?;
        Ok(Staging {
            partial,
            target: root.join(id),
            committed: false,
        })
    }

    pub fn path(&self) -> &Path {
        &self.partial
    }

    /// Moves the finished run into place, replacing an earlier run with the
    /// same id.
    pub fn commit(mut self) -> Result<PathBuf> {
        if self.target.exists() {
            fs::remove_dir_all(&self.target).map_err(|e| Error::io(&self.target, e))?;
        }
        fs::rename(&self.partial, &self.target).map_err(|e| Error::io(&self.target, e))?;
        self.committed = true;
        Ok(self.target.clone())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.partial);
        }
    }
}

fn list_files(dir: &Path) -> Result<Vec<String>> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(base, &path, out)?;
            } else {
                let rel = path.strip_prefix(base).expect("walk stays under base");
                out.push(rel.to_string_lossy().replace('\\', "/"));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

/// A labelled dataset together with the codebook its labels refer to.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub codebook: Codebook,
    pub manifest: DatasetManifest,
    pub samples: Vec<Sample>,
    pub layout: FeatureLayout,
}

/// Label statistics of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelSummary {
    pub samples: usize,
    /// Samples whose label is the lowest-index argmax of their RSS vector.
    pub consistent_labels: usize,
    pub histogram: Vec<usize>,
    pub top10_coverage: f64,
    /// Of the ten most frequent labels, how many are single-beam patterns.
    pub top10_single_beam: usize,
}

impl LabelSummary {
    pub fn concentrated(&self) -> bool {
        self.top10_coverage > COVERAGE_WARN
    }
}

/// Generates, labels and splits the dataset described by `config`.
pub fn generate_dataset(config: &ExperimentConfig) -> Result<PreparedData> {
    let codebook = build_codebook(&config.codebook)?;
    let samples = generate_samples(&config.scene, &config.channel, &codebook, &config.dataset)?;
    let mut manifest = split_dataset(
        &samples,
        config.dataset.split_fractions,
        config.dataset.split_seed,
    )?;
    manifest.config_digest = config.digest();
    manifest.codebook_digest = codebook_digest(&codebook);
    Ok(PreparedData {
        codebook,
        manifest,
        samples,
        layout: FeatureLayout::from_config(&config.dataset),
    })
}

/// Reads a dataset written by `dataset-gen` and checks that it matches the
/// codebook and feature layout of `config`.
pub fn open_dataset(config: &ExperimentConfig, dir: &Path) -> Result<PreparedData> {
    let (manifest, samples) = read_dataset(dir)?;
    let codebook = build_codebook(&config.codebook)?;
    if manifest.codebook_digest != codebook_digest(&codebook) {
        return Err(Error::Invalid(format!(
            "dataset {} was labelled with a different codebook",
            dir.display()
        )));
    }
    let layout = FeatureLayout::from_config(&config.dataset);
    for s in &samples {
        let ok = s.window.len() == layout.window
            && s.window.iter().all(|f| {
                f.radar.points.len() == layout.radar_points
                    && f.bev.occupancy.len() == layout.bev_cells
                    && f.gps.slots.len() == layout.gps_slots
            })
            && s.rss_vector.len() == codebook.len();
        if !ok {
            return Err(Error::shape(
                format!("samples shaped for {layout:?}"),
                "a different layout",
            ));
        }
    }
    Ok(PreparedData {
        codebook,
        manifest,
        samples,
        layout,
    })
}

fn prepare(config: &ExperimentConfig, inputs: &Inputs) -> Result<PreparedData> {
    match &inputs.dataset {
        Some(dir) => open_dataset(config, dir),
        None => generate_dataset(config),
    }
}

impl PreparedData {
    pub fn label_summary(&self) -> LabelSummary {
        let histogram = label_histogram(&self.samples, self.codebook.len());
        let consistent_labels = self
            .samples
            .iter()
            .filter(|s| {
                argmax_lowest(s.rss_vector.iter().map(|&x| x as f64)).ok() == Some(s.label as usize)
            })
            .count();
        let mut order: Vec<usize> = (0..histogram.len()).collect();
        order.sort_by_key(|&b| (std::cmp::Reverse(histogram[b]), b));
        let top10_single_beam = order
            .iter()
            .take(COVERAGE_TOP)
            .filter(|&&b| self.codebook.patterns[b].components.len() == 1)
            .count();
        LabelSummary {
            samples: self.samples.len(),
            consistent_labels,
            top10_coverage: top_label_coverage(&histogram, COVERAGE_TOP),
            histogram,
            top10_single_beam,
        }
    }

    pub fn tensors(&self) -> DataSplits {
        let s = &self.manifest.splits;
        DataSplits {
            train: Tensors::gather(&self.samples, &s.train, &self.layout),
            val: Tensors::gather(&self.samples, &s.val, &self.layout),
            test: Tensors::gather(&self.samples, &s.test, &self.layout),
        }
    }

    /// Writes the dataset and codebook into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let data_dir = dir.join("dataset");
        fs::create_dir_all(&data_dir).map_err(|e| Error::io(&data_dir, e))?;
        write_dataset(&self.manifest, &self.samples, &data_dir)?;
        write_codebook(&self.codebook, dir, "codebook")
    }
}

/// Model inputs for one split: student (radar) rows, teacher (all
/// modalities) rows, labels and full RSS vectors.
#[derive(Debug, Clone)]
pub struct Tensors {
    pub student: Array2<f64>,
    pub teacher: Array2<f64>,
    pub labels: Vec<usize>,
    pub rss: Vec<Vec<f32>>,
}

impl Tensors {
    pub fn gather(samples: &[Sample], indices: &[usize], layout: &FeatureLayout) -> Self {
        let mut student = Array2::zeros((indices.len(), student_input_dim(layout)));
        let mut teacher = Array2::zeros((indices.len(), teacher_input_dim(layout)));
        for (r, &i) in indices.iter().enumerate() {
            student_row(
                &samples[i],
                student.row_mut(r).as_slice_mut().expect("standard layout"),
            );
            teacher_row(
                &samples[i],
                layout,
                teacher.row_mut(r).as_slice_mut().expect("standard layout"),
            );
        }
        Tensors {
            student,
            teacher,
            labels: indices.iter().map(|&i| samples[i].label as usize).collect(),
            rss: indices
                .iter()
                .map(|&i| samples[i].rss_vector.clone())
                .collect(),
        }
    }

    pub fn inputs(&self, teacher: bool) -> ArrayView2<'_, f64> {
        if teacher {
            self.teacher.view()
        } else {
            self.student.view()
        }
    }

    fn train_data(&self, teacher: bool) -> TrainData<'_> {
        TrainData {
            inputs: self.inputs(teacher),
            labels: &self.labels,
        }
    }

    fn val_data(&self, teacher: bool) -> Option<ValData<'_>> {
        (!self.labels.is_empty()).then(|| ValData {
            inputs: self.inputs(teacher),
            labels: &self.labels,
            rss: &self.rss,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DataSplits {
    pub train: Tensors,
    pub val: Tensors,
    pub test: Tensors,
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// A trained model with its history and test metrics.
#[derive(Debug, Clone)]
pub struct Trained<M> {
    pub model: M,
    pub history: History,
    pub metrics: MetricsReport,
}

fn schedule(base: &TrainConfig, run_seed: u64, stream: u64) -> TrainConfig {
    TrainConfig {
        seed: seed::derive(base.seed, &[run_seed, stream]),
        ..base.clone()
    }
}

pub fn new_teacher(
    config: &ExperimentConfig,
    layout: &FeatureLayout,
    beams: usize,
    run_seed: u64,
) -> Result<TeacherNet> {
    let spec = config.teacher.spec(layout.teacher_segments(), beams);
    TeacherNet::new(&spec, &mut seed::rng(run_seed, &[STREAM_TEACHER]))
}

/// The student initialization shared by every student method of a seed.
pub fn new_student(
    config: &ExperimentConfig,
    layout: &FeatureLayout,
    beams: usize,
    run_seed: u64,
) -> Result<Mlp> {
    let spec = config.student.spec(student_input_dim(layout), beams);
    Mlp::new(&spec, &mut seed::rng(run_seed, &[STREAM_STUDENT]))
}

pub fn train_teacher(
    config: &ExperimentConfig,
    data: &PreparedData,
    splits: &DataSplits,
    run_seed: u64,
) -> Result<Trained<TeacherNet>> {
    let net = new_teacher(config, &data.layout, data.codebook.len(), run_seed)?;
    let cfg = schedule(config.teacher_schedule(), run_seed, STREAM_TEACHER);
    let (mut model, history) = train(
        net,
        splits.train.train_data(true),
        splits.val.val_data(true),
        &cfg,
        &Guidance::supervised(&config.distill),
    )?;
    round_to_f32(&mut model);
    let metrics = evaluate(
        &model,
        splits.test.inputs(true),
        &splits.test.labels,
        &splits.test.rss,
    )?;
    Ok(Trained {
        model,
        history,
        metrics,
    })
}

/// Trains one student with `method`. `teacher` holds frozen teacher outputs
/// on the training split and is required by every distilling method.
pub fn train_student(
    config: &ExperimentConfig,
    data: &PreparedData,
    splits: &DataSplits,
    method: Method,
    teacher: Option<&TeacherTargets>,
    space: &BeamSpace,
    run_seed: u64,
) -> Result<Trained<Mlp>> {
    let objective = method
        .objective(&config.distill)
        .ok_or_else(|| Error::Config("the teacher is not a student method".into()))?;
    if method.needs_teacher() && teacher.is_none() {
        return Err(Error::Config(format!("{method} needs a teacher")));
    }
    let net = new_student(config, &data.layout, data.codebook.len(), run_seed)?;
    let cfg = schedule(&config.train, run_seed, STREAM_STUDENT);
    let guidance = Guidance {
        objective,
        teacher: if method.needs_teacher() {
            teacher
        } else {
            None
        },
        space: Some(space),
        distill: &config.distill,
    };
    let (mut model, history) = train(
        net,
        splits.train.train_data(false),
        splits.val.val_data(false),
        &cfg,
        &guidance,
    )?;
    round_to_f32(&mut model);
    let metrics = evaluate(
        &model,
        splits.test.inputs(false),
        &splits.test.labels,
        &splits.test.rss,
    )?;
    Ok(Trained {
        model,
        history,
        metrics,
    })
}

fn save_run<M: Clone>(
    dir: &Path,
    stem: &str,
    trained: &Trained<M>,
    wrap: fn(M) -> Model,
    run_seed: u64,
    digest: &str,
) -> Result<()> {
    save_checkpoint(&wrap(trained.model.clone()), run_seed, digest, dir, stem)?;
    trained.history.write_csv(dir, stem)?;
    write_json(&dir.join(format!("{stem}_metrics.json")), &trained.metrics)
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

type CommandResult = (String, Vec<(String, MetricsReport)>, bool);

fn scene_gen(config: &ExperimentConfig, dir: &Path) -> Result<CommandResult> {
    let mut text = String::new();
    for &s in &config.seeds {
        let scene_cfg = SceneConfig {
            seed: seed::derive(config.scene.seed, &[s, STREAM_SCENE]),
            ..config.scene.clone()
        };
        let scene = build_scene(&scene_cfg)?;
        let episode = generate_episode(&scene_cfg)?;
        write_json(&dir.join(format!("scene_s{s}.json")), &scene)?;
        write_json(&dir.join(format!("episode_s{s}.json")), &episode)?;
        let _ = writeln!(
            text,
            "seed {s}: {} buildings, {} vehicles, {} frames",
            scene.buildings.len(),
            scene.vehicles.len(),
            episode.frames.len()
        );
    }
    Ok((text, Vec::new(), true))
}

fn label_text(summary: &LabelSummary, manifest: &DatasetManifest) -> String {
    let c = &manifest.counts;
    let mut text = format!(
        "samples {} (train {}, val {}, test {})\nlabels consistent with argmax RSS: {}/{}\ntop-{COVERAGE_TOP} label coverage: {:.4} ({} of them single-beam)\n",
        c.samples, c.train, c.val, c.test, summary.consistent_labels, summary.samples, summary.top10_coverage, summary.top10_single_beam
    );
    if !summary.concentrated() {
        let _ = writeln!(
            text,
            "warning: the {COVERAGE_TOP} most frequent labels cover only {:.1}% of samples",
            100.0 * summary.top10_coverage
        );
    }
    text
}

fn dataset_gen(config: &ExperimentConfig, dir: &Path) -> Result<CommandResult> {
    let data = generate_dataset(config)?;
    data.write(dir)?;
    let summary = data.label_summary();
    write_json(&dir.join("labels.json"), &summary)?;
    let text = label_text(&summary, &data.manifest);
    write_text(&dir.join("report.txt"), &text)?;
    Ok((text, Vec::new(), true))
}

fn train_teacher_cmd(
    config: &ExperimentConfig,
    inputs: &Inputs,
    dir: &Path,
) -> Result<CommandResult> {
    let data = prepare(config, inputs)?;
    let splits = data.tensors();
    let digest = config.digest();
    let mut rows = Vec::new();
    for &s in &config.seeds {
        let t = train_teacher(config, &data, &splits, s)?;
        save_run(
            dir,
            &format!("teacher_s{s}"),
            &t,
            Model::Teacher,
            s,
            &digest,
        )?;
        rows.push((format!("teacher (seed {s})"), t.metrics));
    }
    finish_table(dir, rows)
}

fn load_teacher(path: &Path, data: &PreparedData) -> Result<TeacherNet> {
    match load_checkpoint(path)?.1 {
        Model::Teacher(t)
            if t.input_dim() == teacher_input_dim(&data.layout)
                && t.output_dim() == data.codebook.len() =>
        {
            Ok(t)
        }
        Model::Teacher(_) => Err(Error::shape(
            "a teacher matching the dataset layout",
            "a different teacher",
        )),
        Model::Student(_) => Err(Error::Invalid(format!(
            "{} holds a student, not a teacher",
            path.display()
        ))),
    }
}

fn distill_cmd(config: &ExperimentConfig, inputs: &Inputs, dir: &Path) -> Result<CommandResult> {
    let method = config.method;
    if method == Method::Teacher {
        return Err(Error::Config(
            "distill needs a student method; use train-teacher for the teacher".into(),
        ));
    }
    let data = prepare(config, inputs)?;
    let splits = data.tensors();
    let space = BeamSpace::new(&data.codebook)?;
    let digest = config.digest();
    let loaded = match &inputs.teacher {
        Some(p) if method.needs_teacher() => Some(load_teacher(p, &data)?),
        _ => None,
    };
    let mut rows = Vec::new();
    for &s in &config.seeds {
        let teacher = match (&loaded, method.needs_teacher()) {
            (Some(t), _) => Some(t.clone()),
            (None, true) => {
                let t = train_teacher(config, &data, &splits, s)?;
                save_run(
                    dir,
                    &format!("teacher_s{s}"),
                    &t,
                    Model::Teacher,
                    s,
                    &digest,
                )?;
                Some(t.model)
            }
            (None, false) => None,
        };
        let targets = teacher
            .as_ref()
            .map(|t| TeacherTargets::compute(t, splits.train.inputs(true)))
            .transpose()?;
        let st = train_student(config, &data, &splits, method, targets.as_ref(), &space, s)?;
        save_run(
            dir,
            &format!("{}_s{s}", method.name()),
            &st,
            Model::Student,
            s,
            &digest,
        )?;
        rows.push((format!("{method} (seed {s})"), st.metrics));
    }
    finish_table(dir, rows)
}

fn evaluate_cmd(config: &ExperimentConfig, inputs: &Inputs, dir: &Path) -> Result<CommandResult> {
    let path = inputs
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("evaluate needs --checkpoint".into()))?;
    let (header, model) = load_checkpoint(path)?;
    let data = prepare(config, inputs)?;
    let test = Tensors::gather(&data.samples, &data.manifest.splits.test, &data.layout);
    let (name, report) = match &model {
        Model::Teacher(t) => {
            check_dims(t, teacher_input_dim(&data.layout), data.codebook.len())?;
            (
                "teacher",
                evaluate(t, test.inputs(true), &test.labels, &test.rss)?,
            )
        }
        Model::Student(m) => {
            check_dims(m, student_input_dim(&data.layout), data.codebook.len())?;
            (
                "student",
                evaluate(m, test.inputs(false), &test.labels, &test.rss)?,
            )
        }
    };
    write_json(&dir.join("metrics.json"), &report)?;
    let row = (format!("{name} (seed {})", header.seed), report);
    finish_table(dir, vec![row])
}

fn check_dims<M: BeamNet>(m: &M, input: usize, beams: usize) -> Result<()> {
    if m.input_dim() != input || m.output_dim() != beams {
        return Err(Error::shape(
            format!("{input} inputs and {beams} beams"),
            format!("{} inputs and {} beams", m.input_dim(), m.output_dim()),
        ));
    }
    Ok(())
}

fn finish_table(dir: &Path, rows: Vec<(String, MetricsReport)>) -> Result<CommandResult> {
    let text = format_table(&rows);
    write_text(&dir.join("report.txt"), &text)?;
    Ok((text, rows, true))
}

/// Runs the gradient suite and renders one line per check.
pub fn grad_check_report(base_seed: u64) -> Result<(Vec<CheckResult>, String)> {
    let results = gradient_suite(GRAD_CHECK_CONFIGURATIONS, base_seed)?;
    let w = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut text = String::new();
    for r in &results {
        let _ = writeln!(
            text,
            "{:<w$}  max rel err {:.3e}  {}",
            r.name,
            r.max_relative_error,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    let worst = results
        .iter()
        .map(|r| r.max_relative_error)
        .fold(0.0, f64::max);
    let _ = writeln!(text, "worst {worst:.3e} (tolerance {TOLERANCE:.0e})");
    Ok((results, text))
}

fn grad_check_cmd(config: &ExperimentConfig, dir: &Path) -> Result<CommandResult> {
    let (results, text) = grad_check_report(config.seeds[0])?;
    write_json(&dir.join("gradcheck.json"), &results)?;
    write_text(&dir.join("report.txt"), &text)?;
    let passed = results.iter().all(CheckResult::passed);
    Ok((text, Vec::new(), passed))
}

// ---------------------------------------------------------------------------
// Reproduce
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodRun {
    pub seed: u64,
    pub method: Method,
    pub best_epoch: usize,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamCounts {
    pub teacher: usize,
    pub student: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedDelta {
    pub seed: u64,
    pub kd_minus_without_kd: f64,
    pub rkd_both_minus_without_kd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderingChecks {
    pub kd_ge_without_kd: bool,
    pub rkd_both_ge_without_kd: bool,
}

/// The comparison written to `report.json` by `reproduce`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReproduceReport {
    pub config_digest: String,
    pub seeds: Vec<u64>,
    pub dataset: DatasetSummary,
    pub params: ParamCounts,
    pub runs: Vec<MethodRun>,
    /// Per-field medians over seeds, keyed by method name.
    pub medians: BTreeMap<String, MetricsReport>,
    /// Test MPR differences against the undistilled student.
    pub mpr_deltas: Vec<SeedDelta>,
    pub ordering: OrderingChecks,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub samples: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub episodes: usize,
    pub consistent_labels: usize,
    pub top10_coverage: f64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Field-wise median of several reports over the same test set.
pub fn median_report(reports: &[&MetricsReport]) -> MetricsReport {
    let pick = |f: &dyn Fn(&MetricsReport) -> f64| {
        median(&mut reports.iter().map(|r| f(r)).collect::<Vec<_>>())
    };
    let top_k = reports[0]
        .top_k
        .keys()
        .map(|&k| (k, pick(&|r| r.top_k.get(&k).copied().unwrap_or(f64::NAN))))
        .collect();
    MetricsReport {
        samples: reports[0].samples,
        top_k,
        mean_rss_dbm: pick(&|r| r.mean_rss_dbm),
        rss_excluded: reports.iter().map(|r| r.rss_excluded).max().unwrap_or(0),
        mpr_percent: pick(&|r| r.mpr_percent),
    }
}

/// Trains the teacher and every student method for each seed on one dataset
/// and assembles the comparison.
pub fn reproduce_runs(
    config: &ExperimentConfig,
    data: &PreparedData,
    mut save: impl FnMut(u64, &str, Artifact) -> Result<()>,
) -> Result<ReproduceReport> {
    let splits = data.tensors();
    let space = BeamSpace::new(&data.codebook)?;
    let mut runs = Vec::new();
    let mut params = ParamCounts {
        teacher: 0,
        student: 0,
        ratio: 0.0,
    };
    for &s in &config.seeds {
        let teacher = train_teacher(config, data, &splits, s)?;
        params.teacher = teacher.model.param_count();
        runs.push(MethodRun {
            seed: s,
            method: Method::Teacher,
            best_epoch: teacher.history.best_epoch,
            metrics: teacher.metrics.clone(),
        });
        let targets = TeacherTargets::compute(&teacher.model, splits.train.inputs(true))?;
        save(s, Method::Teacher.name(), Artifact::Teacher(&teacher))?;
        for method in Method::STUDENTS {
            let st = train_student(config, data, &splits, method, Some(&targets), &space, s)?;
            params.student = st.model.param_count();
            runs.push(MethodRun {
                seed: s,
                method,
                best_epoch: st.history.best_epoch,
                metrics: st.metrics.clone(),
            });
            save(s, method.name(), Artifact::Student(&st))?;
        }
    }
    params.ratio = params.student as f64 / params.teacher as f64;

    let mut medians = BTreeMap::new();
    for method in [Method::Teacher].into_iter().chain(Method::STUDENTS) {
        let reports: Vec<&MetricsReport> = runs
            .iter()
            .filter(|r| r.method == method)
            .map(|r| &r.metrics)
            .collect();
        medians.insert(method.name().to_string(), median_report(&reports));
    }
    let mpr_of = |seed: u64, m: Method| {
        runs.iter()
            .find(|r| r.seed == seed && r.method == m)
            .map(|r| r.metrics.mpr_percent)
            .expect("every method ran for every seed")
    };
    let mpr_deltas = config
        .seeds
        .iter()
        .map(|&s| SeedDelta {
            seed: s,
            kd_minus_without_kd: mpr_of(s, Method::Kd) - mpr_of(s, Method::WithoutKd),
            rkd_both_minus_without_kd: mpr_of(s, Method::RkdBoth) - mpr_of(s, Method::WithoutKd),
        })
        .collect();
    let med = |m: Method| medians[m.name()].mpr_percent;
    let ordering = OrderingChecks {
        kd_ge_without_kd: med(Method::Kd) >= med(Method::WithoutKd),
        rkd_both_ge_without_kd: med(Method::RkdBoth) >= med(Method::WithoutKd),
    };
    let summary = data.label_summary();
    let c = &data.manifest.counts;
    Ok(ReproduceReport {
        config_digest: config.digest(),
        seeds: config.seeds.clone(),
        dataset: DatasetSummary {
            samples: c.samples,
            train: c.train,
            val: c.val,
            test: c.test,
            episodes: config.dataset.episodes,
            consistent_labels: summary.consistent_labels,
            top10_coverage: summary.top10_coverage,
        },
        params,
        runs,
        medians,
        mpr_deltas,
        ordering,
    })
}

/// A trained model handed to the artifact writer of [`reproduce_runs`].
pub enum Artifact<'a> {
    Teacher(&'a Trained<TeacherNet>),
    Student(&'a Trained<Mlp>),
}

pub fn format_reproduce(report: &ReproduceReport) -> String {
    let mut text = String::new();
    let d = &report.dataset;
    let seeds: Vec<String> = report.seeds.iter().map(|s| s.to_string()).collect();
    let _ = writeln!(text, "config digest {}", report.config_digest);
    let _ = writeln!(
        text,
        "dataset: {} samples from {} episodes (train {}, val {}, test {}), top-{COVERAGE_TOP} label coverage {:.4}",
        d.samples, d.episodes, d.train, d.val, d.test, d.top10_coverage
    );
    let p = &report.params;
    let _ = writeln!(
        text,
        "parameters: teacher {}, student {}, ratio {:.4}",
        p.teacher, p.student, p.ratio
    );
    let _ = writeln!(text, "\nmedian over seeds {}", seeds.join(", "));
    let rows: Vec<(String, MetricsReport)> = [Method::Teacher]
        .into_iter()
        .chain(Method::STUDENTS)
        .map(|m| (m.name().to_string(), report.medians[m.name()].clone()))
        .collect();
    text.push_str(&format_table(&rows));
    let _ = writeln!(text, "\ntest MPR minus withoutKD");
    let _ = writeln!(text, "{:>6}  {:>9}  {:>9}", "seed", "KD", "RKD-both");
    for s in &report.mpr_deltas {
        let _ = writeln!(
            text,
            "{:>6}  {:>+9.3}  {:>+9.3}",
            s.seed, s.kd_minus_without_kd, s.rkd_both_minus_without_kd
        );
    }
    let yes = |b: bool| if b { "yes" } else { "no" };
    let _ = writeln!(
        text,
        "\nmedian KD >= withoutKD: {}",
        yes(report.ordering.kd_ge_without_kd)
    );
    let _ = writeln!(
        text,
        "median RKD-both >= withoutKD: {}",
        yes(report.ordering.rkd_both_ge_without_kd)
    );
    text
}

fn reproduce(config: &ExperimentConfig, inputs: &Inputs, dir: &Path) -> Result<CommandResult> {
    let data = prepare(config, inputs)?;
    if inputs.dataset.is_none() {
        data.write(dir)?;
    }
    let digest = config.digest();
    let report = reproduce_runs(config, &data, |s, name, artifact| {
        let sub = dir.join(format!("seed{s}"));
        match artifact {
            Artifact::Teacher(t) => save_run(&sub, name, t, Model::Teacher, s, &digest),
            Artifact::Student(t) => save_run(&sub, name, t, Model::Student, s, &digest),
        }
    })?;
    write_json(&dir.join("report.json"), &report)?;
    let text = format_reproduce(&report);
    write_text(&dir.join("report.txt"), &text)?;
    let rows = vec![(
        config.method.name().to_string(),
        report.medians[config.method.name()].clone(),
    )];
    Ok((text, rows, true))
}
