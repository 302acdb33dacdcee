use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use lookaround_cli::commands;
use lookaround_cli::config::{parse_override, resolve, RunConfig};
use serde_json::{json, Value};

/// Seizure detection on scalp EEG with look-around context windows.
#[derive(Parser)]
#[command(name = "lookaround", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML or JSON config file; a previous run's config.json repeats it.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Dotted override applied last, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory for this run.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Clone)]
struct Data {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Manifest split to use: train, validation or test.
    #[arg(long)]
    split: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with a split manifest.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        patients: Option<usize>,
        /// Recording length in seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Pre-ictal cue plus seizure-like artifacts.
        #[arg(long)]
        context_task: bool,
    },
    /// Preprocess every manifest recording into the cache.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
    },
    /// Train on the train split, selecting on the validation split.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from the state file in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Detect seizures; several checkpoints form an ensemble.
    Infer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
        /// Recordings to process instead of a manifest split.
        #[arg(long = "recording")]
        recordings: Vec<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        stride: Option<f64>,
    },
    /// Score hypothesis TSVs against the manifest's reference annotations.
    Score {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        /// Directory of `<recording id>.tsv` hypotheses.
        #[arg(long)]
        hypothesis: Option<PathBuf>,
    },
    /// Time sliding inference over one hour of EEG.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        recording: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Thread counts to time, comma separated.
        #[arg(long, value_delimiter = ',')]
        thread_counts: Vec<usize>,
    },
    /// Draw detections against reference seizures as an SVG timeline.
    Render {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        #[arg(long)]
        hypothesis: Option<PathBuf>,
    },
    /// Finite-difference gradient check of a tiny model.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Collects set flags into override layers, lowest precedence first.
#[derive(Default)]
struct Layers(Vec<Value>);

impl Layers {
    fn put<T: serde::Serialize>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            let mut value = serde_json::to_value(v).expect("flag serialises");
            for part in key.rsplit('.') {
                value = json!({ part: value });
            }
            self.0.push(value);
        }
    }

    fn data(&mut self, d: &Data) {
        self.put("paths.manifest", d.manifest.clone());
        self.put("paths.cache_dir", d.cache_dir.clone());
        self.put("split", d.split.clone());
    }

    fn finish(mut self, common: &Common) -> Result<RunConfig> {
        self.put("run_dir", common.run_dir.clone());
        self.put("threads", common.threads);
        for s in &common.set {
            self.0.push(parse_override(s)?);
        }
        resolve(common.config.as_deref(), &self.0)
    }
}

fn non_empty<T>(v: Vec<T>) -> Option<Vec<T>> {
    (!v.is_empty()).then_some(v)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut l = Layers::default();
    let (common, name) = match &cli.command {
        Command::Synth {
            common,
            seed,
            patients,
            duration,
            context_task,
        } => {
            if *context_task {
                l.0.push(json!({ "synth": { "preictal_cue": true, "artifact_kind": "seizure_like", "artifacts_per_hour": 6.0 } }));
            }
            l.put("synth.seed", *seed);
            l.put("synth.n_patients", *patients);
            l.put("synth.duration_s", *duration);
            (common, "synth")
        }
        Command::Preprocess { common, data } => {
            l.data(data);
            (common, "preprocess")
        }
        Command::Train {
            common,
            data,
            epochs,
            seed,
            resume,
        } => {
            l.data(data);
            l.put("train.epochs", *epochs);
            l.put("train.seed", *seed);
            l.put("resume", resume.then_some(true));
            (common, "train")
        }
        Command::Infer {
            common,
            data,
            checkpoints,
            recordings,
            threshold,
            stride,
        } => {
            l.data(data);
            l.put("paths.checkpoints", non_empty(checkpoints.clone()));
            l.put("paths.recordings", non_empty(recordings.clone()));
            l.put("infer.threshold", *threshold);
            l.put("infer.stride_s", *stride);
            (common, "infer")
        }
        Command::Score {
            common,
            data,
            hypothesis,
        }
        | Command::Render {
            common,
            data,
            hypothesis,
        } => {
            l.data(data);
            l.put("paths.hypothesis", hypothesis.clone());
            (
                common,
                if matches!(cli.command, Command::Score { .. }) {
                    "score"
                } else {
                    "render"
                },
            )
        }
        Command::Bench {
            common,
            recording,
            checkpoint,
            thread_counts,
        } => {
            l.put("paths.recordings", recording.clone().map(|r| vec![r]));
            l.put("paths.checkpoints", checkpoint.clone().map(|c| vec![c]));
            l.put("bench.threads", non_empty(thread_counts.clone()));
            (common, "bench")
        }
        Command::Gradcheck { common, seed } => {
            l.put("train.seed", *seed);
            (common, "gradcheck")
        }
    };
    let cfg = l.finish(common)?;
    commands::with_threads(cfg.threads, || -> Result<()> {
        match name {
            "synth" => println!("{}", commands::cmd_synth(&cfg)?.display()),
            "preprocess" => {
                let (hits, misses, repaired) = commands::cmd_preprocess(&cfg)?;
                println!("cache hits {hits}, computed {misses}, repaired {repaired}");
            }
            "train" => println!("{}", commands::cmd_train(&cfg)?.display()),
            "infer" => {
                for p in commands::cmd_infer(&cfg)? {
                    println!("{}", p.display());
                }
            }
            "score" => {
                commands::cmd_score(&cfg)?;
            }
            "render" => println!("{}", commands::cmd_render(&cfg)?.display()),
            "bench" => {
                let r = commands::cmd_bench(&cfg)?;
                println!("{}", serde_json::to_string_pretty(&r)?);
            }
            "gradcheck" => println!(
                "gradient check passed, max relative error {:.3e}",
                commands::cmd_gradcheck(&cfg)?
            ),
            _ => unreachable!(),
        }
        Ok(())
    })?
}
