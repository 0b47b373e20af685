use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ndarray::{Array1, ArrayD};
use polyf0::audio::{load_wav, save_wav, WavFormat};
use polyf0::corpus::{generate_corpus, load_corpus, write_corpus};
use polyf0::cqt::{compute_hcqt, CqtParams};
use polyf0::io::{self, TensorMap};
use polyf0::model::{gradient_suite, history_csv, score_estimate, Checkpoint, TaskId};
use polyf0::pipeline::{predict_and_decode, scores_csv, summarize_scores, test_tracks, train_model, RunConfig, ScoreRow};
use polyf0::remix::{generate_strums, match_sound_font, render_remix};
use polyf0::salience::{annotation_to_salience, Annotation, TimeFreqGrid};
use polyf0::{rng, Error, Result};

#[derive(Parser)]
#[command(
    name = "polyf0",
    version,
    about = "Multitask f0 estimation: features, training, remixing and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Harmonic CQT magnitudes of a WAV file.
    Hcqt {
        input: PathBuf,
        #[arg(short)]
        o: PathBuf,
        #[arg(long, default_value_t = CqtParams::default().f_min)]
        fmin: f64,
        #[arg(long, default_value_t = 60)]
        bpo: usize,
        #[arg(long, default_value_t = 6)]
        octaves: usize,
        #[arg(long, default_value_t = 256)]
        hop: usize,
        #[arg(long, default_value = "1,2,3,4,5")]
        harmonics: String,
    },
    /// Salience target of an annotation CSV on a config's feature grid.
    Target {
        annotation: PathBuf,
        #[arg(long)]
        grid_from: PathBuf,
        #[arg(short)]
        o: PathBuf,
        /// Frames in the grid; defaults to covering the last annotated time.
        #[arg(long)]
        n_frames: Option<usize>,
    },
    Corpus {
        #[command(subcommand)]
        cmd: CorpusCmd,
    },
    /// Trains a model on the training split of a corpus directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "multif0,melody,bass,vocal")]
        tasks: String,
        #[arg(short)]
        o: PathBuf,
    },
    /// Salience TNSR and decoded CSV per task.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        input: PathBuf,
        #[arg(short)]
        o: PathBuf,
    },
    /// Scores `<name>.<task>.csv` files of --est against those of --ref.
    Evaluate {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        task: TaskId,
        #[arg(short)]
        o: PathBuf,
    },
    /// Renders a mix-spec file; merged annotations go next to the output.
    Remix {
        #[arg(long)]
        mixspec: PathBuf,
        #[arg(short)]
        o: PathBuf,
    },
    /// Strummed note events for chord segments.
    Strum {
        #[arg(long)]
        chords: PathBuf,
        #[arg(long)]
        voicings: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(short)]
        o: PathBuf,
    },
    /// Prints the id (file stem) of the closest-sounding WAV in --bank.
    Fontmatch {
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        bank: PathBuf,
    },
    /// Finite-difference gradient checks of every layer and a model graph.
    Gradcheck {
        #[arg(long, default_value = "multif0,melody,bass,vocal")]
        graph: String,
        #[arg(long, default_value_t = 4)]
        seeds: u64,
    },
}

#[derive(Subcommand)]
enum CorpusCmd {
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(short)]
        o: PathBuf,
    },
}

fn tensor_1d(v: impl IntoIterator<Item = f64>) -> ArrayD<f32> {
    let v: Vec<f32> = v.into_iter().map(|x| x as f32).collect();
    Array1::from(v).into_dyn()
}

fn annotation_csv(ann: &Annotation) -> String {
    match ann {
        Annotation::Single(t) => io::single_f0_to_csv(t),
        Annotation::Multi(t) => io::multi_f0_to_csv(t),
    }
}

fn load_annotation(path: &Path, task: TaskId) -> Result<Annotation> {
    Ok(if task.is_multi_pitch() {
        Annotation::Multi(io::load_multi_f0(path)?)
    } else {
        Annotation::Single(io::load_single_f0(path)?)
    })
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}{suffix}"))
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Hcqt {
            input,
            o,
            fmin,
            bpo,
            octaves,
            hop,
            harmonics,
        } => {
            let audio = load_wav(&input)?;
            let params = CqtParams {
                f_min: fmin,
                bins_per_octave: bpo,
                n_octaves: octaves,
                hop_length: hop,
                sample_rate: audio.sample_rate(),
            };
            params.validate()?;
            let harmonics = harmonics
                .split(',')
                .map(|h| {
                    h.trim()
                        .parse::<usize>()
                        .map_err(|e| Error::InvalidInput(format!("harmonic {h:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let hcqt = compute_hcqt(&audio, &params, &harmonics)?;
            let grid = TimeFreqGrid::from_params(&params, hcqt.n_frames());
            let tensors = TensorMap::from([
                ("hcqt".to_string(), hcqt.data.into_dyn()),
                ("freqs".to_string(), tensor_1d(grid.freq_centers.iter().copied())),
                ("times".to_string(), tensor_1d(grid.times())),
                ("harmonics".to_string(), tensor_1d(harmonics.iter().map(|&h| h as f64))),
            ]);
            io::save_tensors(&o, &tensors)
        }
        Cmd::Target {
            annotation,
            grid_from,
            o,
            n_frames,
        } => {
            let cfg = RunConfig::load(&grid_from)?;
            // the multi-f0 parser also reads single-f0 rows (zeros dropped)
            let track = io::load_multi_f0(&annotation)?;
            let hop = cfg.feature.cqt.hop_seconds();
            let n = n_frames.unwrap_or_else(|| track.times.last().map_or(0, |&t| (t / hop).round() as usize + 1));
            let ann = Annotation::Multi(track).resampled(hop, n)?;
            let grid = TimeFreqGrid::from_params(&cfg.feature.cqt, n);
            let (map, skipped) = annotation_to_salience(&ann, &grid);
            if skipped.pitches_out_of_range > 0 || skipped.frames_out_of_range > 0 {
                eprintln!(
                    "skipped {} pitches and {} frames outside the grid",
                    skipped.pitches_out_of_range, skipped.frames_out_of_range
                );
            }
            let tensors = TensorMap::from([
                ("salience".to_string(), map.values.into_dyn()),
                ("freqs".to_string(), tensor_1d(grid.freq_centers.iter().copied())),
                ("times".to_string(), tensor_1d(grid.times())),
            ]);
            io::save_tensors(&o, &tensors)
        }
        Cmd::Corpus {
            cmd: CorpusCmd::Generate { config, o },
        } => {
            let cfg = RunConfig::load(&config)?;
            let tracks = generate_corpus(&cfg.corpus)?;
            write_corpus(&o, &cfg.corpus, &tracks)?;
            eprintln!("wrote {} mixtures to {}", tracks.len(), o.display());
            Ok(())
        }
        Cmd::Train { config, corpus, tasks, o } => {
            let cfg = RunConfig::load(&config)?;
            let tasks = TaskId::parse_list(&tasks)?;
            let (spec, tracks) = load_corpus(&corpus)?;
            if spec.sample_rate != cfg.feature.cqt.sample_rate {
                return Err(Error::Config(format!(
                    "corpus sample rate {} differs from feature sample rate {}",
                    spec.sample_rate, cfg.feature.cqt.sample_rate
                )));
            }
            let (train, val, _) = test_tracks(&cfg, tracks)?;
            let trained = train_model(&cfg, &tasks, &train, &val, |r| {
                eprintln!("epoch {:>3}  train {:.5}  val {:.5}", r.epoch, r.train_loss, r.val_loss);
            })?;
            trained.checkpoint.save(&o)?;
            fs::write(o.join("history.csv"), history_csv(&trained.history))?;
            eprintln!(
                "best epoch {}, thresholds {:?}",
                trained.checkpoint.manifest.best_epoch, trained.checkpoint.manifest.thresholds
            );
            Ok(())
        }
        Cmd::Predict { ckpt, input, o } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let audio = load_wav(&input)?;
            let stem = input
                .file_stem()
                .map_or_else(|| "audio".into(), |s| s.to_string_lossy().into_owned());
            fs::create_dir_all(&o)?;
            for (task, (map, est)) in predict_and_decode(&ckpt, &audio)? {
                let tensors = TensorMap::from([
                    ("salience".to_string(), map.values.into_dyn()),
                    ("freqs".to_string(), tensor_1d(map.grid.freq_centers.iter().copied())),
                    ("times".to_string(), tensor_1d(map.grid.times())),
                ]);
                io::save_tensors(&o.join(format!("{stem}.{task}.tnsr")), &tensors)?;
                fs::write(o.join(format!("{stem}.{task}.csv")), annotation_csv(&est))?;
            }
            Ok(())
        }
        Cmd::Evaluate { reference, est, task, o } => {
            let suffix = format!(".{task}.csv");
            let mut names: Vec<String> = fs::read_dir(&reference)?
                .map(|e| Ok(e?.file_name().to_string_lossy().into_owned()))
                .collect::<Result<Vec<_>>>()?;
            names.retain(|n| n.ends_with(&suffix));
            names.sort();
            if names.is_empty() {
                return Err(Error::InvalidInput(format!("no *{suffix} files in {}", reference.display())));
            }
            let mut rows = Vec::new();
            for name in names {
                let est_path = est.join(&name);
                if !est_path.exists() {
                    return Err(Error::InvalidInput(format!("missing estimate {}", est_path.display())));
                }
                let r = load_annotation(&reference.join(&name), task)?;
                let e = load_annotation(&est_path, task)?;
                let times = e.times();
                let hop = if times.len() > 1 {
                    times[1] - times[0]
                } else {
                    r.times().get(1).map_or(0.01, |t| t - r.times()[0])
                };
                rows.push(ScoreRow {
                    track: name.trim_end_matches(&suffix).to_string(),
                    task,
                    scores: score_estimate(task, &r, &e, hop)?,
                });
            }
            fs::write(&o, scores_csv(&rows, task))?;
            let summary = serde_json::to_string_pretty(&summarize_scores(&rows))?;
            fs::write(sibling(&o, ".summary.json"), summary)?;
            Ok(())
        }
        Cmd::Remix { mixspec, o } => {
            let (spec, hop) = io::load_mix_spec(&mixspec)?;
            let remix = render_remix(&spec, hop)?;
            save_wav(&remix.audio, &o, WavFormat::Float32)?;
            for (task, ann) in &remix.annotations {
                fs::write(sibling(&o, &format!(".{task}.csv")), annotation_csv(ann))?;
            }
            Ok(())
        }
        Cmd::Strum { chords, voicings, seed, o } => {
            let segments = io::load_chords(&chords)?;
            let dict = io::load_voicings(&voicings)?;
            let notes = generate_strums(&segments, &dict, &mut rng::stream(seed, "strum"))?;
            fs::write(&o, io::notes_to_csv(&notes))?;
            Ok(())
        }
        Cmd::Fontmatch { query, bank } => {
            let mut paths: Vec<PathBuf> = fs::read_dir(&bank)?
                .map(|e| Ok(e?.path()))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
                .collect();
            paths.sort();
            let fonts = paths
                .iter()
                .map(|p| Ok((p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), load_wav(p)?)))
                .collect::<Result<Vec<_>>>()?;
            let m = match_sound_font(&load_wav(&query)?, &fonts)?;
            for ((id, _), d) in fonts.iter().zip(&m.distances) {
                eprintln!("{id}\t{d:.4}");
            }
            println!("{}", m.font_id);
            Ok(())
        }
        Cmd::Gradcheck { graph, seeds } => {
            let tasks = TaskId::parse_list(&graph)?;
            let suite = gradient_suite(&tasks, seeds)?;
            let mut failed = 0;
            for e in &suite {
                println!(
                    "{} {:<40} coord {:.2e} tensor {:.2e} checked {} kinks {}",
                    if e.passed { "PASS" } else { "FAIL" },
                    e.name,
                    e.report.max_rel_error,
                    e.report.max_tensor_rel_error,
                    e.report.checked,
                    e.report.skipped_kinks
                );
                failed += usize::from(!e.passed);
            }
            if failed > 0 {
                return Err(Error::Numerical(format!("{failed} gradient checks failed")));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(1))
        }
    }
}
