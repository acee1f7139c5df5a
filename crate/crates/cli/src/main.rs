//! Command-line entry point for the retrieval pipeline. Every command is a
//! pure function of its flags and seeds: no wall-clock seeding, no
//! environment variables, atomic file writes.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use std::io::Write;
use std::path::{Path, PathBuf};
use textra_core::checkpoint::{fingerprint_file, Checkpoint};
use textra_core::config::Config;
use textra_core::model::FdpModel;
use textra_core::synth::{self, Dictionary, GalleryConfig, Manifest};
use textra_core::{retrieval, train};

#[derive(Parser)]
#[command(name = "textra", version, about = "Scene-text retrieval pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic gallery with word annotations into a directory.
    GenData {
        /// Output directory (created if absent).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of images to render (must be positive).
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        images: u64,
        /// Vocabulary size drawn from the built-in word list.
        #[arg(long, default_value_t = 30)]
        vocab_size: usize,
        /// Optional file of phrases (one per line) rendered as units.
        #[arg(long)]
        phrase_list: Option<PathBuf>,
        /// Fraction of images rendered without any text.
        #[arg(long, default_value_t = 0.0)]
        distractor_rate: f64,
    },
    /// Train a model; writes a checkpoint at every epoch boundary.
    Train {
        /// Config file; defaults apply for every missing key and the
        /// effective configuration is echoed to the log.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Gallery directory (or direct path to its manifest.tsv).
        #[arg(long)]
        data: PathBuf,
        /// Dictionary file (word<TAB>count per line).
        #[arg(long)]
        dict: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Resume from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Refit the query-class clusters of a checkpoint with its current
    /// text tower.
    FitClusters {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed a gallery into a binary index bound to the checkpoint.
    Index {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Store five vectors per image: full view plus four quadrants.
        #[arg(long, default_value_t = false)]
        subdivision: bool,
    },
    /// Rank an indexed gallery for a query string.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Query text; phrases are passed through unchanged.
        #[arg(long)]
        q: String,
        /// Rows to print; a value past the gallery size prints everything.
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Index a gallery and score a query set against rendered ground truth.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Query file, one per line; defaults to the gallery vocabulary.
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long, default_value_t = false)]
        subdivision: bool,
    },
    /// Finite-difference verification of every parameter gradient.
    GradCheck {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Coordinates sampled per parameter tensor.
        #[arg(long, default_value_t = 2)]
        samples: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData {
            out,
            seed,
            images,
            vocab_size,
            phrase_list,
            distractor_rate,
        } => gen_data(&out, seed, images as usize, vocab_size, phrase_list.as_deref(), distractor_rate),
        Cmd::Train {
            config,
            data,
            dict,
            out,
            resume,
        } => train_cmd(config.as_deref(), &data, &dict, &out, resume.as_deref()),
        Cmd::FitClusters { ckpt, dict, out } => fit_clusters(&ckpt, &dict, &out),
        Cmd::Index {
            data,
            ckpt,
            out,
            subdivision,
        } => index_cmd(&data, &ckpt, &out, subdivision),
        Cmd::Query { index, ckpt, q, top } => query_cmd(&index, &ckpt, &q, top),
        Cmd::Eval {
            data,
            ckpt,
            queries,
            subdivision,
        } => eval_cmd(&data, &ckpt, queries.as_deref(), subdivision),
        Cmd::GradCheck {
            config,
            samples,
            tolerance,
            seed,
        } => grad_check_cmd(config.as_deref(), samples, tolerance, seed),
    }
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(Config::default()),
    }
}

fn load_manifest_from(data: &Path) -> Result<Manifest> {
    let path = if data.is_dir() {
        data.join("manifest.tsv")
    } else {
        data.to_path_buf()
    };
    synth::load_manifest(&path).with_context(|| format!("loading manifest {}", path.display()))
}

fn load_model(ckpt: &Path) -> Result<(FdpModel, u64)> {
    let fp = fingerprint_file(ckpt)?;
    let loaded = FdpModel::from_checkpoint(Checkpoint::load(ckpt)?)
        .with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    Ok((loaded.model, fp))
}

fn gen_data(
    out: &Path,
    seed: u64,
    images: usize,
    vocab_size: usize,
    phrase_list: Option<&Path>,
    distractor_rate: f64,
) -> Result<()> {
    let vocab = synth::vocab_of_size(vocab_size)?;
    let mut cfg = GalleryConfig::new(seed, images, vocab);
    cfg.distractor_rate = distractor_rate;
    if let Some(path) = phrase_list {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading phrase list {}", path.display()))?;
        cfg.phrases = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        if cfg.phrases.is_empty() {
            bail!("phrase list {} holds no phrases", path.display());
        }
    }
    let manifest = synth::write_gallery(out, &cfg)?;
    let text_free = manifest.samples.iter().filter(|s| !s.has_text()).count();
    let phrased = manifest.samples.iter().filter(|s| !s.phrases.is_empty()).count();
    println!(
        "rendered {} images into {} ({} text-free, {} phrase-bearing)",
        manifest.samples.len(),
        out.display(),
        text_free,
        phrased
    );
    Ok(())
}

fn train_cmd(
    config: Option<&Path>,
    data: &Path,
    dict_path: &Path,
    out: &Path,
    resume: Option<&Path>,
) -> Result<()> {
    let cfg = load_config(config)?;
    let manifest = load_manifest_from(data)?;
    let dict = Dictionary::load(dict_path)
        .with_context(|| format!("loading dictionary {}", dict_path.display()))?;

    let (mut model, state) = match resume {
        None => (FdpModel::new(&cfg)?, None),
        Some(path) => {
            let loaded = FdpModel::from_checkpoint(Checkpoint::load(path)?)
                .with_context(|| format!("resuming from {}", path.display()))?;
            let (mut model, state) = loaded.into_parts();
            // The architecture must not change under a resumed run; only the
            // epoch target may move.
            let mut stored = model.cfg.clone();
            stored.training.epochs = cfg.training.epochs;
            if stored != cfg {
                bail!(
                    "config differs from the checkpoint's beyond the epoch count; \
                     refusing to resume"
                );
            }
            model.cfg = cfg.clone();
            (model, Some(state))
        }
    };

    let stdout = std::io::stdout();
    let mut log = stdout.lock();
    for line in cfg.echo().lines() {
        writeln!(log, "# {line}")?;
    }
    let logs = train::train_loop(&mut model, &manifest, &dict, Some(out), &mut log, state.as_ref())?;
    drop(log);
    eprintln!(
        "trained {} steps; checkpoint at {}",
        logs.len(),
        out.display()
    );
    Ok(())
}

fn fit_clusters(ckpt: &Path, dict_path: &Path, out: &Path) -> Result<()> {
    let loaded = FdpModel::from_checkpoint(Checkpoint::load(ckpt)?)?;
    let (mut model, state) = loaded.into_parts();
    let dict = Dictionary::load(dict_path)?;
    let words: Vec<String> = dict.words().map(str::to_string).collect();
    model.fit_clusters(&words)?;
    let extra = textra_core::model::CheckpointExtra {
        epoch: state.epoch,
        step: state.step,
        opt_state: state
            .opt
            .array_names()
            .map(str::to_string)
            .collect::<Vec<_>>()
            .into_iter()
            .map(|n| {
                let arr = state.opt.array(&n).expect("listed name present").clone();
                (n, arr)
            })
            .collect(),
    };
    model.to_checkpoint(&extra).save(out)?;
    let c = model.clusters.as_ref().expect("just fitted");
    println!(
        "fitted {} clusters over {} words -> {}",
        c.labels.len(),
        c.words.len(),
        out.display()
    );
    Ok(())
}

fn index_cmd(data: &Path, ckpt: &Path, out: &Path, subdivision: bool) -> Result<()> {
    let manifest = load_manifest_from(data)?;
    let (mut model, fp) = load_model(ckpt)?;
    let outcome = retrieval::index_gallery(&mut model, &manifest, subdivision, fp)?;
    for s in &outcome.skipped {
        eprintln!("warning: skipped {s}");
    }
    retrieval::save_index(out, &outcome.index)?;
    println!(
        "indexed {} images ({} skipped) -> {}",
        outcome.index.entries.len(),
        outcome.skipped.len(),
        out.display()
    );
    Ok(())
}

fn query_cmd(index_path: &Path, ckpt: &Path, q: &str, top: usize) -> Result<()> {
    let index = retrieval::load_index(index_path)?;
    let (mut model, fp) = load_model(ckpt)?;
    let ranked = retrieval::rank(&mut model, &index, q, fp)?;
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    for (rank, (id, score)) in ranked.entries.iter().take(top).enumerate() {
        writeln!(w, "{}\t{}\t{:.6}", rank + 1, id, score)?;
    }
    Ok(())
}

fn eval_cmd(data: &Path, ckpt: &Path, queries: Option<&Path>, subdivision: bool) -> Result<()> {
    let manifest = load_manifest_from(data)?;
    let (mut model, fp) = load_model(ckpt)?;
    let queries: Vec<String> = match queries {
        Some(path) => std::fs::read_to_string(path)
            .with_context(|| format!("reading queries {}", path.display()))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect(),
        None => manifest.vocab.clone(),
    };
    if queries.is_empty() {
        bail!("no queries to evaluate");
    }
    let report = retrieval::evaluate(&mut model, &manifest, &queries, subdivision, fp)?;
    print!("{}", report.render());
    Ok(())
}

fn grad_check_cmd(config: Option<&Path>, samples: usize, tolerance: f64, seed: u64) -> Result<()> {
    let cfg = load_config(config)?;
    let started = std::time::Instant::now();
    let report = textra_core::verify_gradients(&cfg, samples, tolerance, seed)?;
    let mut failed = false;
    for group in &report {
        let verdict = if group.report.passed() { "pass" } else { "FAIL" };
        println!(
            "{}: {} ({} coords, max rel err {:.3e})",
            group.name,
            verdict,
            group.report.coords_checked,
            group.report.max_rel_err
        );
        if !group.report.passed() {
            failed = true;
            println!("  {}", group.report.summary());
        }
    }
    println!(
        "gradient check {} in {:.1}s",
        if failed { "FAILED" } else { "PASSED" },
        started.elapsed().as_secs_f64()
    );
    if failed {
        std::process::exit(1);
    }
    Ok(())
}
