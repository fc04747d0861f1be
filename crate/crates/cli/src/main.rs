mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use chordmixer::autograd::{Rng, Stream, Tensor};
use chordmixer::data::{gen_adding, read_adding, write_adding};
use chordmixer::exec::Exec;
use chordmixer::model::{
    matrix_rank, param_count_formula, rank_certificates, Checkpoint, HeadKind, Input, InputKind,
    MAX_RANK_ELEMENTS,
};
use chordmixer::topology::{reachability_closure, reaching_probabilities};
use chordmixer::training::{
    evaluate, load_task, prepare, write_metrics, DataSource, MetricsRecord, TrainConfig, Trainer,
};
use chordmixer::{ceil_log2, Error};

use config::ConfigFile;

type CliResult<T> = std::result::Result<T, Error>;

#[derive(Parser)]
#[command(name = "chordmixer", version, about = "ChordMixer training and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an adding-problem dataset (ADD1 file).
    Generate(GenerateArgs),
    /// Train a network; writes metrics.jsonl, best.chmx and last.chmx.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Structural analyses.
    Analyze {
        #[command(subcommand)]
        kind: AnalyzeKind,
    },
    /// Write the embedded input and every traversed block's output as CSV.
    ExportActivations(ExportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Base length.
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Default)]
struct TrainArgs {
    /// `key = value` file; keys are the flag names below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Generate the adding problem with this base length.
    #[arg(long)]
    lambda: Option<f64>,
    /// Instances to generate with --lambda.
    #[arg(long)]
    count: Option<usize>,
    /// ADD1 file or label<TAB>symbols text file.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    track_size: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    n_max: Option<usize>,
    /// avg or cls.
    #[arg(long)]
    head: Option<HeadKind>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Length-percentile bins in evaluation reports.
    #[arg(long)]
    eval_bins: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Clip the global gradient norm to this value.
    #[arg(long)]
    clip: Option<f64>,
    /// Continue from this last.chmx (best.chmx is read from the same directory).
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset file; alternatively regenerate with --lambda/--count.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    count: Option<usize>,
    /// train, val or test.
    #[arg(long, default_value = "val")]
    split: String,
    /// Split seed; defaults to the seed stored in the checkpoint.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 10)]
    eval_bins: usize,
    /// Directory for eval.jsonl.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum AnalyzeKind {
    /// Hops until every Chord node reaches every node.
    Reachability {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random-walk reaching probabilities from node 0.
    ReachProb {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        hops: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank certificates of the rotation and mix matrices.
    Rank {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact learnable-parameter count.
    Params {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        h: usize,
        #[arg(long)]
        blocks: usize,
        /// Vocabulary size or real input channels (0 = no embedding).
        #[arg(long, default_value_t = 0)]
        embedding_cols: usize,
        /// Head outputs (0 = no head).
        #[arg(long, default_value_t = 0)]
        out_dim: usize,
        #[arg(long)]
        cls: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Symbol string for symbol-input networks.
    #[arg(long)]
    sequence: Option<String>,
    /// Dataset file to pick the sequence from.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Analyze { kind } => cmd_analyze(kind),
        Command::ExportActivations(args) => cmd_export(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Diverged { .. } => 3,
        Error::Dimension { .. } => 1,
        _ => 2,
    }
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn cmd_generate(args: GenerateArgs) -> CliResult<()> {
    let mut rng = Rng::stream(args.seed, Stream::DataGen);
    let data = gen_adding(args.count, args.lambda, 0.5, 0.7, &mut rng)?;
    write_adding(&args.out, &data)?;
    let mut lengths: Vec<usize> = data.iter().map(|i| i.len()).collect();
    lengths.sort_unstable();
    let mid = lengths.len() / 2;
    let median = if lengths.len() % 2 == 0 {
        (lengths[mid - 1] + lengths[mid]) as f64 / 2.0
    } else {
        lengths[mid] as f64
    };
    println!(
        "wrote {} instances to {}\nlength min={} median={} max={}",
        data.len(),
        args.out.display(),
        lengths[0],
        median,
        lengths[lengths.len() - 1]
    );
    Ok(())
}

fn train_config(args: &TrainArgs) -> CliResult<(TrainConfig, PathBuf, Option<PathBuf>)> {
    let file = match &args.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let defaults = TrainConfig::default();
    let lambda = file.pick(args.lambda, "lambda")?;
    let count = file.pick(args.count, "count")?;
    let dataset: Option<PathBuf> = file.pick(args.dataset.clone(), "dataset")?;
    let source = match (dataset, lambda) {
        (Some(_), Some(_)) => {
            return Err(Error::Config("give either dataset or lambda, not both".into()))
        }
        (Some(path), None) => DataSource::File(path),
        (None, Some(lambda)) => DataSource::Adding {
            lambda,
            count: count.unwrap_or(60_000),
        },
        (None, None) => return Err(Error::Config("no data: give dataset or lambda".into())),
    };
    let config = TrainConfig {
        source,
        track_size: file.pick(args.track_size, "track-size")?.unwrap_or(defaults.track_size),
        hidden: file.pick(args.hidden, "hidden")?.unwrap_or(defaults.hidden),
        dropout: file.pick(args.dropout, "dropout")?.unwrap_or(defaults.dropout),
        lr: file.pick(args.lr, "lr")?.unwrap_or(defaults.lr),
        batch_size: file.pick(args.batch_size, "batch-size")?.unwrap_or(defaults.batch_size),
        epochs: file.pick(args.epochs, "epochs")?.unwrap_or(defaults.epochs),
        seed: file.pick(args.seed, "seed")?.unwrap_or(defaults.seed),
        eval_every: file.pick(args.eval_every, "eval-every")?.unwrap_or(defaults.eval_every),
        n_max: file.pick(args.n_max, "n-max")?,
        head: file.pick(args.head, "head")?.unwrap_or(defaults.head),
        eval_bins: file.pick(args.eval_bins, "eval-bins")?.unwrap_or(defaults.eval_bins),
        clip: file.pick(args.clip, "clip")?,
    };
    config.validate()?;
    let out = file.pick(args.out.clone(), "out")?.unwrap_or_else(|| PathBuf::from("."));
    let resume = file.pick(args.resume.clone(), "resume")?;
    Ok((config, out, resume))
}

fn print_record(r: &MetricsRecord) {
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    println!(
        "{:>5}  {:<12} {:>12.6} {:>8} {:>8} {:>8.1}s",
        r.epoch,
        r.split,
        r.loss,
        fmt(r.accuracy),
        fmt(r.roc_auc),
        r.wall_time_s
    );
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let (config, out, resume) = train_config(&args)?;
    ensure_dir(&out)?;
    let task = load_task(&config.source, config.seed)?;

    let trainer = match &resume {
        Some(last_path) => {
            let last = Checkpoint::load(last_path)?;
            let best_path = last_path.with_file_name("best.chmx");
            let best = best_path.exists().then(|| Checkpoint::load(&best_path)).transpose()?;
            let data = prepare(task, config.seed, last.vocab.as_deref())?;
            Trainer::resume(config, data, &last, best.as_ref())?
        }
        None => {
            let data = prepare(task, config.seed, None)?;
            Trainer::new(config, data)?
        }
    };
    let cfg = trainer.net().config();
    println!(
        "d={} h={} blocks={} n_max={} params={}",
        cfg.channels,
        cfg.hidden,
        cfg.blocks(),
        cfg.n_max,
        trainer.net().param_count()
    );
    println!(
        "{:>5}  {:<12} {:>12} {:>8} {:>8} {:>9}",
        "epoch", "split", "loss", "acc", "auc", "time"
    );
    let outcome = trainer.run(|r| {
        print_record(r);
        Ok(())
    })?;
    write_metrics(&out.join("metrics.jsonl"), &outcome.records)?;
    outcome.best.save(&out.join("best.chmx"))?;
    outcome.last.save(&out.join("last.chmx"))?;
    println!("best epoch {}; outputs in {}", outcome.best_epoch, out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let seed = args.seed.unwrap_or(ck.net.config().seed);
    let source = match (args.dataset, args.lambda) {
        (Some(path), None) => DataSource::File(path),
        (None, Some(lambda)) => DataSource::Adding {
            lambda,
            count: args.count.unwrap_or(60_000),
        },
        _ => return Err(Error::Config("give exactly one of --dataset or --lambda".into())),
    };
    let data = prepare(load_task(&source, seed)?, seed, ck.vocab.as_deref())?;
    let indices = data.split_indices(&args.split)?;
    let report = evaluate(&ck.net, &data, indices, args.eval_bins, Exec::default())?;
    let record = MetricsRecord::from_eval(0, args.split.clone(), report, 0.0);
    println!("{}", record.to_json());
    if let Some(dir) = args.out {
        ensure_dir(&dir)?;
        write_metrics(&dir.join("eval.jsonl"), &[record])?;
    }
    Ok(())
}

fn cmd_analyze(kind: AnalyzeKind) -> CliResult<()> {
    match kind {
        AnalyzeKind::Reachability { n, out } => {
            if n == 0 {
                return Err(Error::Parameter("n must be positive".into()));
            }
            let hops = reachability_closure(n);
            let bound = ceil_log2(n);
            let line = format!("{{\"n\":{n},\"hops\":{hops},\"bound\":{bound},\"within_bound\":{}}}", hops <= bound);
            println!("nodes={n} hops={hops} bound={bound}");
            if let Some(dir) = out {
                ensure_dir(&dir)?;
                write_file(&dir.join("reachability.json"), &(line + "\n"))?;
            }
        }
        AnalyzeKind::ReachProb { n, hops, out } => {
            let r = reaching_probabilities(n, hops)?;
            let mut csv = String::from("target_node,probability\n");
            for (i, p) in r.distribution.iter().enumerate() {
                csv.push_str(&format!("{i},{p:e}\n"));
            }
            let stats = format!("stats: nodes={} hops={} mean={:e} std={:e}", r.nodes, r.hops, r.mean, r.std);
            match out {
                Some(dir) => {
                    ensure_dir(&dir)?;
                    write_file(&dir.join("reach_prob.csv"), &csv)?;
                    write_file(&dir.join("reach_prob_stats.txt"), &(stats.clone() + "\n"))?;
                }
                None => print!("{csv}"),
            }
            println!("{stats}");
        }
        AnalyzeKind::Rank { d, n, seed, out } => {
            if d * n > MAX_RANK_ELEMENTS || d == 0 || n == 0 {
                return Err(Error::Parameter(format!(
                    "rank analysis needs 1 <= d·N <= {MAX_RANK_ELEMENTS}, got {}",
                    d * n
                )));
            }
            let w = random_full_rank(d, seed);
            let report = rank_certificates(d, n, &w)?;
            let json = format!(
                "{{\"d\":{d},\"n\":{n},\"rotation_is_permutation\":{},\"rotation_rank\":{},\"w_rank\":{},\"mix_rank\":{},\"block_rank\":{},\"full_rank\":{}}}",
                report.rotation_is_permutation,
                report.rotation_rank,
                report.w_rank,
                report.mix_rank,
                report.block_rank,
                report.full_rank()
            );
            println!("{json}");
            if let Some(dir) = out {
                ensure_dir(&dir)?;
                write_file(&dir.join("rank.json"), &(json + "\n"))?;
            }
        }
        AnalyzeKind::Params {
            d,
            h,
            blocks,
            embedding_cols,
            out_dim,
            cls,
            out,
        } => {
            let total = param_count_formula(d, h, blocks, embedding_cols, out_dim, cls);
            println!("{total}");
            if let Some(dir) = out {
                ensure_dir(&dir)?;
                let json = format!(
                    "{{\"d\":{d},\"h\":{h},\"blocks\":{blocks},\"per_block\":{},\"total\":{total}}}\n",
                    2 * d * h + h + d
                );
                write_file(&dir.join("params.json"), &json)?;
            }
        }
    }
    Ok(())
}

/// Uniform `d×d` matrix, redrawn until elimination reports rank `d`.
fn random_full_rank(d: usize, seed: u64) -> Tensor {
    let mut rng = Rng::stream(seed, Stream::Custom(7));
    loop {
        let w = Tensor::from_fn(d, d, |_, _| rng.uniform_range(-1.0, 1.0));
        let rows: Vec<Vec<f64>> = (0..d).map(|i| w.data()[i * d..(i + 1) * d].to_vec()).collect();
        if matrix_rank(&rows) == d {
            return w;
        }
    }
}

fn cmd_export(args: ExportArgs) -> CliResult<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let input = match (ck.net.config().input, args.sequence, args.dataset) {
        (InputKind::Symbols { .. }, Some(seq), None) => {
            let vocab = ck
                .vocab
                .clone()
                .ok_or_else(|| Error::Config("checkpoint has no vocabulary".into()))?;
            let vocab = chordmixer::data::Vocabulary::from_chars(vocab);
            Input::Symbols(vocab.encode(&seq)?)
        }
        (InputKind::Real { .. }, None, Some(path)) => {
            let data = read_adding(&path)?;
            let inst = data.get(args.index).ok_or_else(|| {
                Error::Parameter(format!("index {} outside {} instances", args.index, data.len()))
            })?;
            inst.to_input()
        }
        (InputKind::Symbols { .. }, _, _) => {
            return Err(Error::Config("symbol networks take --sequence".into()))
        }
        (InputKind::Real { .. }, _, _) => {
            return Err(Error::Config("real-input networks take --dataset and --index".into()))
        }
    };
    let (pred, trace) = ck.net.trace(&input)?;
    let files = trace.write_csv(&args.out)?;
    println!(
        "length {} depth {}: wrote {} files to {}; prediction {:?}",
        input.len(),
        trace.blocks.len(),
        files.len(),
        args.out.display(),
        pred
    );
    Ok(())
}
