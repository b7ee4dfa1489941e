use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use fast_transfer::config::ExperimentConfig;
use fast_transfer::experiment::{behavioral_suite, default_jobs, run_parallel, DeskConfig, DeskSetup};
use fast_transfer::nn::Network;
use fast_transfer::report::write_report;
use fast_transfer::verify::{analytic_criteria, module_properties};
use fast_transfer::{Error, Result};

#[derive(Parser)]
#[command(name = "fast-transfer", version, about = "Zero-init head fine-tuning experiments with anytime deployment evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the source model and save its checkpoint.
    Pretrain(RunArgs),
    /// Fine-tune one run per seed; each lands in `<out>/seed-<k>/`. Without
    /// `output.checkpoint` a missing source model is pretrained first.
    Finetune(RunArgs),
    /// Aggregate ADP CSVs of one or more method directories into CSVs and an SVG.
    Report {
        /// Method directories, each holding `seed-*/adp.csv` (or an `adp.csv` directly).
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the property suite and the analytic acceptance checks.
    Verify {
        /// Also train the desk-scale behavioral experiments (several minutes per core).
        #[arg(long)]
        behavioral: bool,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds overriding `finetune.seeds`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Concurrent runs; defaults to the available cores.
    #[arg(long)]
    jobs: Option<usize>,
}

struct Loaded {
    cfg: ExperimentConfig,
    text: String,
    out: PathBuf,
    checkpoint: PathBuf,
}

fn load(args: &RunArgs) -> Result<Loaded> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    let text = fs::read_to_string(&args.config).map_err(|e| Error::io(&args.config, e))?;
    if let Some(seeds) = &args.seeds {
        if seeds.is_empty() {
            return Err(Error::Config("--seeds needs at least one seed".into()));
        }
        cfg.finetune.seeds = seeds.clone();
    }
    let out = args.out.clone().unwrap_or_else(|| cfg.output_dir());
    let checkpoint = match (&cfg.output.checkpoint, &args.out) {
        (Some(p), _) => cfg.resolve(p),
        (None, Some(dir)) => dir.join("pretrained.json"),
        (None, None) => cfg.checkpoint_path(),
    };
    Ok(Loaded {
        cfg,
        text,
        out,
        checkpoint,
    })
}

fn pretrain_setup(l: &Loaded) -> Result<DeskSetup> {
    let corpus = l.cfg.load_corpus()?;
    let d = &l.cfg.data;
    DeskSetup::build(&corpus, &d.source_classes, &d.target_classes, &d.split, &l.cfg.pretrain_config())
}

fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    net.save(path)
}

fn cmd_pretrain(args: &RunArgs) -> Result<()> {
    let l = load(args)?;
    let setup = pretrain_setup(&l)?;
    save_checkpoint(&setup.pretrained, &l.checkpoint)?;
    println!(
        "pretrained: train accuracy {:.4}, source test accuracy {:.4} -> {}",
        setup.pretrain_report.train_accuracy,
        setup.source_accuracy()?,
        l.checkpoint.display()
    );
    Ok(())
}

fn cmd_finetune(args: &RunArgs) -> Result<()> {
    let l = load(args)?;
    if l.cfg.output.checkpoint.is_some() && !l.checkpoint.is_file() {
        return Err(Error::Config(format!(
            "checkpoint {} named in output.checkpoint does not exist; run `pretrain` first",
            l.checkpoint.display()
        )));
    }
    let setup = if l.checkpoint.is_file() {
        let net = Network::load(&l.checkpoint)?;
        let corpus = l.cfg.load_corpus()?;
        let d = &l.cfg.data;
        println!("using checkpoint {}", l.checkpoint.display());
        DeskSetup::with_pretrained(&corpus, &d.source_classes, &d.target_classes, &d.split, net)?
    } else {
        let setup = pretrain_setup(&l)?;
        save_checkpoint(&setup.pretrained, &l.checkpoint)?;
        println!("pretrained a source model -> {}", l.checkpoint.display());
        setup
    };
    println!("source test accuracy {:.4}", setup.source_accuracy()?);
    let cfgs: Vec<_> = l.cfg.finetune.seeds.iter().map(|&s| l.cfg.finetune_config(s)).collect();
    let with_source = l.cfg.eval.source_retention;
    let jobs = args.jobs.unwrap_or_else(default_jobs);
    let results = run_parallel(&cfgs, jobs, |cfg| {
        let run = setup.run(cfg, with_source)?;
        let dir = l.out.join(format!("seed-{}", cfg.seed));
        run.save(&dir)?;
        let echo = dir.join("config.toml");
        fs::write(&echo, &l.text).map_err(|e| Error::io(&echo, e))?;
        Ok::<_, Error>((cfg.seed, dir, run))
    });
    for r in results {
        let (seed, dir, run) = r?;
        let last = run.adp.last().expect("at least one checkpoint");
        println!(
            "seed {seed}: step {} target top-1 {:.4}{} θ distance {:.4} -> {}",
            last.step,
            last.target_top1,
            last.source_top1.map(|s| format!(" source top-1 {s:.4}")).unwrap_or_default(),
            last.theta_dist,
            dir.display()
        );
    }
    Ok(())
}

fn cmd_report(runs: &[PathBuf], out: &Path) -> Result<()> {
    let files = write_report(runs, out)?;
    for p in files.aggregates.iter().chain([&files.convergence, &files.svg]) {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_verify(behavioral: bool, jobs: Option<usize>) -> Result<bool> {
    let start = Instant::now();
    let mut ok = true;
    for p in module_properties()? {
        ok &= p.passed;
        let status = if p.passed { "PASS" } else { "FAIL" };
        if p.detail.is_empty() {
            println!("property [{status}] {}", p.name);
        } else {
            println!("property [{status}] {}: {}", p.name, p.detail);
        }
    }
    for c in analytic_criteria()? {
        ok &= c.passed;
        println!("{}", c.line());
    }
    if behavioral {
        let setup = DeskSetup::desk()?;
        for c in behavioral_suite(&setup, &DeskConfig::default(), jobs.unwrap_or_else(default_jobs))? {
            ok &= c.passed;
            println!("{}", c.line());
        }
    }
    println!(
        "{} in {:.1}s",
        if ok { "all checks passed" } else { "some checks failed" },
        start.elapsed().as_secs_f64()
    );
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Pretrain(args) => cmd_pretrain(args).map(|_| true),
        Command::Finetune(args) => cmd_finetune(args).map(|_| true),
        Command::Report { runs, out } => cmd_report(runs, out).map(|_| true),
        Command::Verify { behavioral, jobs } => cmd_verify(*behavioral, *jobs),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
