//! Command implementations. Each takes the effective config, writes its
//! outputs under `run_dir` and records them in `artifacts.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use lookaround_core::inference::{
    run_ensemble_configs, window_starts, InferConfig, WindowClassifier,
};
use lookaround_core::manifest::{DatasetManifest, ManifestEntry, Split};
use lookaround_core::model::{grad_check, load_checkpoint, ModelConfig, ModelParams};
use lookaround_core::preprocess::{preprocess_pipeline, MontagedRecording};
use lookaround_core::recording::annotations::parse_annotations;
use lookaround_core::recording::raw::{raw_paths, RawHeader};
use lookaround_core::recording::{read_annotations, read_edf, write_raw, AnnotationSet};
use lookaround_core::scoring::{aggregate, format_table, score_recording, ScoreReport, Tolerance};
use lookaround_core::training::{train_run, TrainData, ValidationSet};
use lookaround_core::EventList;
use rayon::prelude::*;
use serde::Serialize;

use crate::cache::{sha256_file, PreprocessCache};
use crate::config::{RunConfig, CONFIG_DUMP};
use crate::render::{build_lanes, render_svg, ReferenceRecording};
use crate::synth::{generate_recording, write_corpus, SynthSpec};

pub const ARTIFACTS: &str = "artifacts.json";

#[derive(Debug, Serialize)]
struct Artifact {
    path: PathBuf,
    bytes: u64,
    sha256: String,
}

/// Output directory of one command invocation.
pub struct RunDir {
    pub dir: PathBuf,
    command: String,
    artifacts: Vec<PathBuf>,
}

impl RunDir {
    /// Creates `cfg.run_dir` and writes the effective config into it.
    pub fn open(cfg: &RunConfig, command: &str) -> Result<Self> {
        let dump = cfg.dump(&cfg.run_dir)?;
        Ok(RunDir {
            dir: cfg.run_dir.clone(),
            command: command.into(),
            artifacts: vec![dump],
        })
    }

    pub fn record(&mut self, path: impl Into<PathBuf>) {
        self.artifacts.push(path.into());
    }

    /// Writes `artifacts.json`: every recorded file with size and digest.
    pub fn finish(self) -> Result<PathBuf> {
        let mut list = Vec::with_capacity(self.artifacts.len());
        for p in &self.artifacts {
            let meta = fs::metadata(p).with_context(|| format!("artifact {}", p.display()))?;
            list.push(Artifact {
                path: p.strip_prefix(&self.dir).unwrap_or(p).to_path_buf(),
                bytes: meta.len(),
                sha256: sha256_file(p)?,
            });
        }
        let path = self.dir.join(ARTIFACTS);
        let doc = serde_json::json!({ "command": self.command, "config": CONFIG_DUMP, "artifacts": list });
        fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")?;
        Ok(path)
    }
}

/// Runs `f` on a pool of `threads` workers; 0 means one per core.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()?;
    Ok(pool.install(f))
}

pub fn cache_for(cfg: &RunConfig) -> PreprocessCache {
    PreprocessCache::new(cfg.paths.cache_dir.clone())
}

pub fn load_manifest(cfg: &RunConfig) -> Result<DatasetManifest> {
    let path = cfg
        .paths
        .manifest
        .as_ref()
        .context("no manifest given (paths.manifest)")?;
    DatasetManifest::load(path).with_context(|| format!("loading manifest {}", path.display()))
}

/// Duration in seconds without decoding raw payloads.
pub fn recording_duration(path: &Path) -> Result<f64> {
    if path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("edf"))
    {
        return Ok(read_edf(path)?.duration_s());
    }
    let (json, _) = raw_paths(path);
    let header: RawHeader = serde_json::from_slice(
        &fs::read(&json).with_context(|| format!("reading {}", json.display()))?,
    )
    .with_context(|| format!("parsing {}", json.display()))?;
    Ok(header.n_samples as f64 / header.fs)
}

/// A preprocessed recording with its reference annotations.
pub struct Labelled {
    pub entry: ManifestEntry,
    pub rec: MontagedRecording,
    pub ann: AnnotationSet,
}

/// Preprocesses every recording of `split` (all when `None`). Manifest ids
/// are authoritative over ids stored in the files.
pub fn load_split(
    manifest: &DatasetManifest,
    split: Option<Split>,
    cache: &PreprocessCache,
    cfg: &RunConfig,
) -> Result<Vec<Labelled>> {
    let entries: Vec<&ManifestEntry> = manifest
        .recordings
        .iter()
        .filter(|e| split.is_none_or(|s| e.split == s))
        .collect();
    entries
        .par_iter()
        .map(|e| {
            let path = manifest.resolve(&e.path);
            let mut rec = cache.load(&path, &cfg.preprocess)?.into_recording();
            rec.id = e.id.clone();
            rec.patient_id = e.patient_id.clone();
            let ann = match &e.annotations {
                Some(a) => read_annotations(&manifest.resolve(a), &rec)?,
                None => AnnotationSet::empty(e.id.clone()),
            };
            Ok(Labelled {
                entry: (*e).clone(),
                rec: MontagedRecording::new(rec)?,
                ann,
            })
        })
        .collect()
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<PathBuf> {
    let mut run = RunDir::open(cfg, "synth")?;
    let manifest_path = write_corpus(&cfg.synth, &run.dir)?;
    let manifest = DatasetManifest::load(&manifest_path)?;
    for e in &manifest.recordings {
        let (json, bin) = raw_paths(&manifest.resolve(&e.path));
        run.record(json);
        run.record(bin);
        if let Some(a) = &e.annotations {
            run.record(manifest.resolve(a));
        }
    }
    run.record(&manifest_path);
    run.finish()?;
    Ok(manifest_path)
}

pub fn cmd_preprocess(cfg: &RunConfig) -> Result<(usize, usize, usize)> {
    let mut run = RunDir::open(cfg, "preprocess")?;
    let mut cfg = cfg.clone();
    let dir = cfg
        .paths
        .cache_dir
        .get_or_insert_with(|| run.dir.join("cache"))
        .clone();
    let manifest = load_manifest(&cfg)?;
    let cache = PreprocessCache::new(Some(dir));
    manifest
        .recordings
        .par_iter()
        .map(|e| {
            cache
                .load(&manifest.resolve(&e.path), &cfg.preprocess)
                .map(|_| ())
        })
        .collect::<Result<()>>()?;
    for e in &manifest.recordings {
        let key = cache.key(&manifest.resolve(&e.path), &cfg.preprocess)?;
        let (json, bin) = cache.entry_paths(&key).expect("cache dir set");
        run.record(json);
        run.record(bin);
    }
    run.finish()?;
    Ok(cache.stats.snapshot())
}

pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf> {
    let mut run = RunDir::open(cfg, "train")?;
    let manifest = load_manifest(cfg)?;
    let cache = cache_for(cfg);
    let train = load_split(&manifest, Some(Split::Train), &cache, cfg)?;
    let val = load_split(&manifest, Some(Split::Validation), &cache, cfg)?;
    ensure!(!train.is_empty(), "manifest has no training recordings");
    ensure!(!val.is_empty(), "manifest has no validation recordings");
    let data = TrainData::new(
        train
            .into_iter()
            .map(|l| (l.rec, l.ann, l.entry.long_form))
            .collect(),
    );
    let val = ValidationSet {
        items: val.into_iter().map(|l| (l.rec, l.ann)).collect(),
    };
    let best = train_run(
        &data,
        &val,
        &cfg.model,
        &cfg.train,
        &run.dir,
        cfg.resume,
        |m| {
            eprintln!(
            "epoch {:>3}  loss {:.4}  val F1 {:.3} (sens {:.3}, prec {:.3}, FP/day {:.1})  best {:.3}@{}  {:.1}s",
            m.epoch, m.loss, m.val_f1, m.val_sensitivity, m.val_precision, m.fp_per_day, m.best_f1, m.best_epoch, m.seconds
        )
        },
    )?;
    for f in [
        lookaround_core::training::BEST_FILE,
        lookaround_core::training::STATE_FILE,
        lookaround_core::training::METRICS_FILE,
    ] {
        run.record(run.dir.join(f));
    }
    run.finish()?;
    Ok(best)
}

pub fn load_members(paths: &[PathBuf]) -> Result<Vec<ModelParams>> {
    ensure!(
        !paths.is_empty(),
        "no checkpoints given (paths.checkpoints)"
    );
    paths
        .iter()
        .map(|p| {
            Ok(load_checkpoint(p)
                .with_context(|| format!("loading {}", p.display()))?
                .params)
        })
        .collect()
}

/// Runs the (possibly single-member) ensemble over `rec` and scores it.
pub fn detect(
    members: &[ModelParams],
    rec: &MontagedRecording,
    infer: &InferConfig,
) -> Result<(EventList, lookaround_core::ProbabilityTrace)> {
    let refs: Vec<&dyn WindowClassifier> =
        members.iter().map(|m| m as &dyn WindowClassifier).collect();
    Ok(run_ensemble_configs(rec, &refs, infer)?)
}

/// Pooled score of an ensemble over labelled recordings.
pub fn evaluate(
    members: &[ModelParams],
    items: &[Labelled],
    infer: &InferConfig,
    tol: &Tolerance,
) -> Result<ScoreReport> {
    let reports = items
        .iter()
        .map(|l| {
            let (hyp, _) = detect(members, &l.rec, infer)?;
            Ok(score_recording(&hyp, &l.ann, l.rec.duration_s(), tol)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&reports)?)
}

pub const HYPOTHESES_DIR: &str = "hypotheses";
pub const TRACES_DIR: &str = "traces";

/// Writes `hypotheses/<id>.tsv` and `traces/<id>.csv` for each recording.
pub fn cmd_infer(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let mut run = RunDir::open(cfg, "infer")?;
    let members = load_members(&cfg.paths.checkpoints)?;
    let cache = cache_for(cfg);
    let recs: Vec<MontagedRecording> = if cfg.paths.recordings.is_empty() {
        let manifest = load_manifest(cfg)?;
        load_split(&manifest, Some(cfg.split), &cache, cfg)?
            .into_iter()
            .map(|l| l.rec)
            .collect()
    } else {
        cfg.paths
            .recordings
            .iter()
            .map(|p| cache.load(p, &cfg.preprocess))
            .collect::<Result<_>>()?
    };
    let (hyp_dir, trace_dir) = (run.dir.join(HYPOTHESES_DIR), run.dir.join(TRACES_DIR));
    fs::create_dir_all(&hyp_dir)?;
    fs::create_dir_all(&trace_dir)?;
    let mut written = Vec::new();
    for rec in &recs {
        let (events, trace) = detect(&members, rec, &cfg.infer)?;
        let tsv = hyp_dir.join(format!("{}.tsv", rec.id));
        let csv = trace_dir.join(format!("{}.csv", rec.id));
        events.write_tsv(&tsv)?;
        trace.write_csv(&csv)?;
        run.record(&tsv);
        run.record(&csv);
        written.push(tsv);
    }
    run.finish()?;
    Ok(written)
}

/// Hypothesis TSVs of a directory, keyed by file stem.
fn read_hypotheses(
    dir: &Path,
    durations: &BTreeMap<String, f64>,
) -> Result<BTreeMap<String, AnnotationSet>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("tsv") {
            continue;
        }
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .context("non-UTF-8 file name")?
            .to_string();
        // Unknown recordings are reported by the caller with the full list.
        let duration = durations.get(&id).copied().unwrap_or(f64::INFINITY);
        let text = fs::read_to_string(&path)?;
        out.insert(id.clone(), parse_annotations(&text, &id, duration, &path)?);
    }
    Ok(out)
}

/// Reference annotations and durations of the configured split.
fn reference_set(cfg: &RunConfig) -> Result<BTreeMap<String, ReferenceRecording>> {
    let manifest_path = cfg
        .paths
        .reference
        .as_ref()
        .or(cfg.paths.manifest.as_ref())
        .context("no reference manifest given")?;
    let manifest = DatasetManifest::load(manifest_path)?;
    manifest
        .split(cfg.split)
        .map(|e| {
            let path = manifest.resolve(&e.path);
            let duration_s = recording_duration(&path)?;
            let annotations = match &e.annotations {
                Some(a) => {
                    let a = manifest.resolve(a);
                    parse_annotations(&fs::read_to_string(&a)?, &e.id, duration_s, &a)?
                }
                None => AnnotationSet::empty(e.id.clone()),
            };
            Ok((
                e.id.clone(),
                ReferenceRecording {
                    patient_id: e.patient_id.clone(),
                    duration_s,
                    annotations,
                },
            ))
        })
        .collect()
}

fn paired_sets(
    cfg: &RunConfig,
) -> Result<(
    BTreeMap<String, AnnotationSet>,
    BTreeMap<String, ReferenceRecording>,
)> {
    let reference = reference_set(cfg)?;
    let dir = cfg
        .paths
        .hypothesis
        .as_ref()
        .context("no hypothesis directory given (paths.hypothesis)")?;
    let durations = reference
        .iter()
        .map(|(k, v)| (k.clone(), v.duration_s))
        .collect();
    Ok((read_hypotheses(dir, &durations)?, reference))
}

pub const SCORE_FILE: &str = "score.json";

/// Scores hypothesis TSVs against the manifest split; writes per-recording
/// and pooled reports.
pub fn cmd_score(cfg: &RunConfig) -> Result<ScoreReport> {
    let mut run = RunDir::open(cfg, "score")?;
    let (hyp, reference) = paired_sets(cfg)?;
    // The same pairing rule as the timeline: both sides name the same set.
    build_lanes(&hyp, &reference, &cfg.tolerance)?;
    let mut reports = Vec::new();
    for (id, r) in &reference {
        let list = EventList::from_intervals(id.clone(), &hyp[id].intervals(), r.duration_s);
        reports.push(score_recording(
            &list,
            &r.annotations,
            r.duration_s,
            &cfg.tolerance,
        )?);
    }
    let pooled = aggregate(&reports)?;
    let mut table = reports.clone();
    table.push(pooled.clone());
    print!("{}", format_table(&table));
    let path = run.dir.join(SCORE_FILE);
    fs::write(
        &path,
        serde_json::to_string_pretty(
            &serde_json::json!({ "recordings": reports, "pooled": pooled }),
        )? + "\n",
    )?;
    run.record(&path);
    run.finish()?;
    Ok(pooled)
}

pub const TIMELINE_FILE: &str = "timeline.svg";

pub fn cmd_render(cfg: &RunConfig) -> Result<PathBuf> {
    let mut run = RunDir::open(cfg, "render")?;
    let (hyp, reference) = paired_sets(cfg)?;
    let lanes = build_lanes(&hyp, &reference, &cfg.tolerance)?;
    let path = run.dir.join(TIMELINE_FILE);
    fs::write(&path, render_svg(&lanes))?;
    run.record(&path);
    run.finish()?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRun {
    pub threads: usize,
    /// Sliding inference alone.
    pub infer_s: f64,
    pub real_time_factor: f64,
    /// Preprocessing plus inference.
    pub with_preprocess_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub duration_s: f64,
    pub stride_s: f64,
    pub windows: usize,
    pub read_s: f64,
    pub preprocess_s: f64,
    pub runs: Vec<BenchRun>,
}

pub const BENCH_FILE: &str = "bench.json";

/// Times sliding inference on one recording per thread count. Disk reads
/// and preprocessing are timed separately from the headline inference time.
pub fn cmd_bench(cfg: &RunConfig) -> Result<BenchReport> {
    let mut run = RunDir::open(cfg, "bench")?;
    let params = match cfg.paths.checkpoints.first() {
        Some(p) => load_checkpoint(p)?.params,
        None => ModelParams::init(&cfg.model, cfg.bench.seed)?,
    };
    let path = match cfg.paths.recordings.first() {
        Some(p) => p.clone(),
        None => {
            let spec = SynthSpec {
                duration_s: cfg.bench.duration_s,
                seed: cfg.bench.seed,
                ..SynthSpec::default()
            };
            let (rec, _) = generate_recording(&spec, 0, 0)?;
            let base = run.dir.join("bench_recording");
            write_raw(&rec, &base)?;
            base.with_extension("json")
        }
    };
    let t = Instant::now();
    let raw = crate::cache::read_recording(&path)?;
    let read_s = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let rec = preprocess_pipeline(&raw, &cfg.preprocess)?;
    let preprocess_s = t.elapsed().as_secs_f64();
    let stride_s = cfg.infer.stride_s;
    let target = params.config.window.target_s.round() as usize;
    let windows = window_starts(
        rec.duration_s().ceil() as usize,
        target,
        stride_s.round() as usize,
    )
    .len();

    let threads = if cfg.bench.threads.is_empty() {
        vec![0]
    } else {
        cfg.bench.threads.clone()
    };
    let mut runs = Vec::new();
    for &n in &threads {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
        let actual = pool.current_num_threads();
        let (infer_s, with_preprocess_s) = pool.install(|| -> Result<(f64, f64)> {
            let t = Instant::now();
            lookaround_core::inference::sliding_infer(&rec, &params, stride_s)?;
            let infer_s = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let again = preprocess_pipeline(&raw, &cfg.preprocess)?;
            lookaround_core::inference::sliding_infer(&again, &params, stride_s)?;
            Ok((infer_s, t.elapsed().as_secs_f64()))
        })?;
        let r = BenchRun {
            threads: actual,
            infer_s,
            real_time_factor: rec.duration_s() / infer_s,
            with_preprocess_s,
        };
        eprintln!(
            "threads {:>2}: {} windows in {:.2} s (real-time factor {:.1}); with preprocessing {:.2} s",
            r.threads, windows, r.infer_s, r.real_time_factor, r.with_preprocess_s
        );
        runs.push(r);
    }
    let report = BenchReport {
        duration_s: rec.duration_s(),
        stride_s,
        windows,
        read_s,
        preprocess_s,
        runs,
    };
    let out = run.dir.join(BENCH_FILE);
    fs::write(&out, serde_json::to_string_pretty(&report)? + "\n")?;
    run.record(&out);
    run.finish()?;
    Ok(report)
}

pub const GRADCHECK_FILE: &str = "gradcheck.json";

/// Finite-difference check of the tiny model; fails when any tensor does.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<f64> {
    let mut run = RunDir::open(cfg, "gradcheck")?;
    let tiny = ModelConfig::tiny();
    let report = grad_check(&tiny, cfg.train.seed)?;
    let path = run.dir.join(GRADCHECK_FILE);
    fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
    run.record(&path);
    run.finish()?;
    if !report.passed() {
        bail!(
            "gradient check failed for {:?} (max relative error {:.3e})",
            report.failures(),
            report.max_rel_error()
        );
    }
    Ok(report.max_rel_error())
}
