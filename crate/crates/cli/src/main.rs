//! `multimodel`: train, evaluate, decode, ablate, selftest and export for
//! the multi-task multi-modality model.

mod checkpoint;
mod config;
mod selftest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use mm_data::{
    command_names, desk_tasks, export_tsv, find_task, make_batch, sample, vocab_corpus, Batch,
    BatchInput, BatchTarget, SampleInput, TaskSpec, Vocab, DEV_BASE, TERM_ID,
};
use mm_model::{generate, Generated, ModelParams, TaskRoute};
use mm_train::{evaluate, experiment_battery, train, BatteryConfig};

use config::Config;

#[derive(Parser)]
#[command(name = "multimodel", version, about = "One model for multiple synthetic modalities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config step budget.
    #[arg(long)]
    steps: Option<usize>,
    /// Comma-separated task subset.
    #[arg(long)]
    tasks: Option<String>,
    /// Checkpoint path.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the configured tasks and write a checkpoint + metric log.
    Train(CommonOpts),
    /// Evaluate a checkpoint on every configured task's dev split.
    Eval(CommonOpts),
    /// Greedily decode one input with a trained checkpoint.
    Decode {
        #[command(flatten)]
        common: CommonOpts,
        /// Task route to decode under.
        #[arg(long)]
        task: String,
        /// Input text (language-input tasks).
        #[arg(long)]
        input: Option<String>,
        /// Dev sample index (image/audio tasks).
        #[arg(long)]
        sample: Option<usize>,
    },
    /// Run the experiment battery and print its report.
    Ablate {
        #[command(flatten)]
        common: CommonOpts,
        /// Cut every battery budget for a quick smoke run.
        #[arg(long)]
        fast: bool,
    },
    /// Run the built-in invariant suite; exits nonzero on any failure.
    Selftest,
    /// Export generated samples as `input<TAB>target` lines.
    GenData {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 32)]
        count: usize,
        /// Export from the dev split instead of train.
        #[arg(long)]
        dev: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MM_LOG_LEVEL", "error"))
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(opts) => cmd_train(&opts),
        Command::Eval(opts) => cmd_eval(&opts),
        Command::Decode { common, task, input, sample } => {
            cmd_decode(&common, &task, input.as_deref(), sample)
        }
        Command::Ablate { common, fast } => cmd_ablate(&common, fast),
        Command::Selftest => return match selftest::run() {
            Ok(()) => ExitCode::SUCCESS,
            Err(_) => ExitCode::FAILURE,
        },
        Command::GenData { common, task, count, dev } => cmd_gen_data(&common, &task, count, dev),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type AnyError = Box<dyn std::error::Error>;

fn load_config(opts: &CommonOpts) -> Result<Config, AnyError> {
    let mut cfg = match &opts.config {
        Some(path) => Config::parse(&fs::read_to_string(path)?)?,
        None => Config::default(),
    };
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(steps) = opts.steps {
        cfg.steps = steps;
    }
    if let Some(tasks) = &opts.tasks {
        cfg.tasks = tasks.split(',').map(|s| s.trim().to_string()).collect();
    }
    if let Some(out) = &opts.out {
        cfg.out_dir = out.display().to_string();
    }
    if let Some(ckpt) = &opts.ckpt {
        cfg.ckpt_path = ckpt.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The full roster defines command ids; the config's task list selects the
/// subset to train/evaluate on.
fn select_tasks(cfg: &Config) -> Result<(Vec<TaskSpec>, Vec<TaskSpec>), AnyError> {
    let roster = desk_tasks();
    let mut selected = Vec::new();
    for name in &cfg.tasks {
        selected.push(find_task(&roster, name)?.clone());
    }
    Ok((roster, selected))
}

fn build_vocab(cfg: &Config, roster: &[TaskSpec]) -> Result<Vocab, AnyError> {
    let reserved = 3 + roster.len();
    if cfg.vocab_size <= reserved + 8 {
        return Err(format!("vocab_size {} too small", cfg.vocab_size).into());
    }
    let corpus = vocab_corpus(roster, cfg.seed, 64);
    Ok(Vocab::learn(&corpus, cfg.vocab_size - reserved, &command_names(roster))?)
}

fn vocab_paths(out_dir: &str) -> (PathBuf, PathBuf) {
    let dir = Path::new(out_dir);
    (dir.join("vocab.txt"), dir.join("merges.txt"))
}

fn cmd_train(opts: &CommonOpts) -> Result<(), AnyError> {
    let cfg = load_config(opts)?;
    let (roster, selected) = select_tasks(&cfg)?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(Path::new(&cfg.out_dir).join("config.txt"), cfg.serialize())?;
    let vocab = build_vocab(&cfg, &roster)?;
    let (vpath, mpath) = vocab_paths(&cfg.out_dir);
    fs::write(&vpath, vocab.vocab_file())?;
    fs::write(&mpath, vocab.merges_file())?;
    info!("vocab: {} tokens -> {}", vocab.size(), vpath.display());

    let model = ModelParams::new(cfg.model_config(vocab.size(), roster.len()), cfg.seed)?;
    info!("model: {} parameters", model.n_params());
    let out = train(model, &selected, &vocab, &cfg.train_config())?;

    let log_path = Path::new(&cfg.out_dir).join("metrics.tsv");
    fs::write(&log_path, &out.log)?;
    checkpoint::save(&out.model.params(), Path::new(&cfg.ckpt_path))?;
    println!("saved checkpoint to {}", cfg.ckpt_path);
    println!("metric log at {}", log_path.display());
    for (task, m) in &out.final_metrics {
        println!("{task}\tlogppl {:.4}\tacc {:.4}\texact {:.4}", m.log_ppl, m.accuracy, m.exact_match);
    }
    Ok(())
}

fn load_model(cfg: &Config, roster: &[TaskSpec], vocab: &Vocab) -> Result<ModelParams, AnyError> {
    let mut model = ModelParams::new(cfg.model_config(vocab.size(), roster.len()), cfg.seed)?;
    let tensors = checkpoint::load(Path::new(&cfg.ckpt_path))?;
    checkpoint::load_into(&mut model, tensors)?;
    Ok(model)
}

fn load_vocab(cfg: &Config) -> Result<Vocab, AnyError> {
    let (vpath, mpath) = vocab_paths(&cfg.out_dir);
    Ok(Vocab::from_files(
        &fs::read_to_string(&vpath)?,
        &fs::read_to_string(&mpath)?,
    )?)
}

fn cmd_eval(opts: &CommonOpts) -> Result<(), AnyError> {
    let cfg = load_config(opts)?;
    let (roster, selected) = select_tasks(&cfg)?;
    let vocab = load_vocab(&cfg)?;
    let model = load_model(&cfg, &roster, &vocab)?;
    let tc = cfg.train_config();
    for task in &selected {
        let m = evaluate(&model, task, &vocab, &tc)?;
        println!("{}\tlogppl {:.4}\tacc {:.4}\texact {:.4}", task.name, m.log_ppl, m.accuracy, m.exact_match);
    }
    Ok(())
}

fn cmd_decode(
    opts: &CommonOpts,
    task_name: &str,
    input: Option<&str>,
    sample_id: Option<usize>,
) -> Result<(), AnyError> {
    let cfg = load_config(opts)?;
    let (roster, _) = select_tasks(&cfg)?;
    let vocab = load_vocab(&cfg)?;
    let model = load_model(&cfg, &roster, &vocab)?;
    let task = find_task(&roster, task_name)?;
    let route = TaskRoute::from(task);
    println!(
        "route: {} (command {}, {:?} -> {:?})",
        route.name, route.command, route.input, route.output
    );

    let batch = match (input, sample_id) {
        (Some(text), _) => {
            let ids = vocab.encode(text);
            Batch {
                task_name: task.name.clone(),
                command: task.command,
                input: BatchInput::Tokens(vec![ids]),
                target: BatchTarget::Tokens(vec![vec![TERM_ID]]),
                spatial_hint: None,
            }
        }
        (None, Some(idx)) => {
            let s = sample(task, cfg.seed, DEV_BASE + idx);
            println!("sample: {}", s.describe);
            match s.input {
                SampleInput::Text(_) => make_batch(task, &vocab, cfg.seed, DEV_BASE + idx, 1)?,
                _ => make_batch(task, &vocab, cfg.seed, DEV_BASE + idx, 1)?,
            }
        }
        (None, None) => return Err("decode needs --input or --sample".into()),
    };

    match generate(&model, &batch, 48)? {
        Generated::Tokens(seqs) => {
            for seq in seqs {
                println!("{}", vocab.decode(&seq));
            }
        }
        Generated::Classes(classes) => {
            for c in classes {
                println!("class {c}");
            }
        }
    }
    Ok(())
}

fn cmd_ablate(opts: &CommonOpts, fast: bool) -> Result<(), AnyError> {
    let mut bc = BatteryConfig::default();
    if let Some(seed) = opts.seed {
        bc.seed = seed;
    }
    if fast {
        bc.compare_steps = 60;
        bc.lowdata_steps = 40;
        bc.ablation_steps = 40;
        bc.eval_interval = 20;
        bc.dev_batches = 1;
    }
    if let Some(steps) = opts.steps {
        bc.compare_steps = steps;
        bc.lowdata_steps = steps;
        bc.ablation_steps = steps;
    }
    let report = experiment_battery(&bc)?;
    println!("{}", report.render());
    Ok(())
}

fn cmd_gen_data(opts: &CommonOpts, task_name: &str, count: usize, dev: bool) -> Result<(), AnyError> {
    let cfg = load_config(opts)?;
    let roster = desk_tasks();
    let task = find_task(&roster, task_name)?;
    let start = if dev { DEV_BASE } else { 0 };
    let text = export_tsv(task, cfg.seed, start, count);
    match &opts.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(format!("{task_name}.tsv"));
            fs::write(&path, text)?;
            println!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}
