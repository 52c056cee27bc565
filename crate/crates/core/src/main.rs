use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use finalbn::checkpoint::save_checkpoint;
use finalbn::data::{generate_synthetic, save_dataset, save_splits, split_pool, SkewProtocol, SPLIT_FILES};
use finalbn::experiment::tables::{confident_wrongs_csv, Comparison};
use finalbn::experiment::{
    best_worst_csv, best_worst_table, confident_wrongs, load_runs, prepare_output_dir, run_grid, summarize,
    write_grid, write_run, GridManifest, GridRun,
};
use finalbn::training::{train_model, Schedule};
use finalbn::{Flags, Hyper, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "finalbn", version, about = "Final batch-normalization ablation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic pool and, with --protocol, train/val/test splits.
    GenData(GenDataArgs),
    /// Train one configuration.
    Train(TrainArgs),
    /// Run a grid of configurations from a JSON manifest.
    Grid(GridArgs),
    /// Print a table from grid output as CSV.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "FN_SEED", default_value_t = 0)]
    seed: u64,
    /// Majority-class pool size (defaults to what the protocol needs).
    #[arg(long)]
    majority: Option<usize>,
    /// Minority-class pool size (defaults to what the protocol needs).
    #[arg(long)]
    minority: Option<usize>,
    /// `default` for 1000/10, 150/7, 150/150, or a JSON protocol file.
    #[arg(long)]
    protocol: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Directory holding train.fnd, val.fnd and test.fnd.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated subset of bn,wl,da,mx,uf,wd.
    #[arg(long, default_value = "", conflicts_with = "config")]
    flags: String,
    #[arg(long, env = "FN_SEED")]
    seed: Option<u64>,
    #[arg(long, conflicts_with = "config")]
    epochs: Option<usize>,
    #[arg(long, conflicts_with = "config")]
    lr: Option<f64>,
    #[arg(long, conflicts_with = "config")]
    batch_size: Option<usize>,
    /// constant, one-cycle or step.
    #[arg(long, conflicts_with = "config")]
    schedule: Option<Schedule>,
    /// Train the final BN's scale and shift.
    #[arg(long, conflicts_with = "config")]
    final_bn_learnable: bool,
    /// Resolved run config as echoed by a previous invocation.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (defaults to the number of cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Rows in each half of the best/worst table.
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Replace grid output already present in --out.
    #[arg(long)]
    force: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Table {
    ThreePlants,
    BestWorst,
    ConfidentWrongs,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum)]
    table: Table,
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Config ids compared by confident-wrongs (left, right).
    #[arg(long, default_value = "0,32")]
    pair: String,
    #[arg(long, default_value_t = 0)]
    repeat: usize,
    #[arg(long)]
    limit: Option<usize>,
}

/// The fully resolved inputs of one training run.
#[derive(Debug, Serialize, Deserialize)]
struct ResolvedTrain {
    seed: u64,
    config_id: u8,
    flags: Flags,
    hyper: Hyper,
}

enum Failure {
    Usage(anyhow::Error),
    Run(anyhow::Error),
}

type CmdResult = std::result::Result<(), Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn run_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Run(e.into())
}

fn echo<T: Serialize>(value: &T) -> CmdResult {
    println!("{}", serde_json::to_string_pretty(value).map_err(run_err)?);
    Ok(())
}

fn require_dir(path: &Path, what: &str) -> CmdResult {
    if path.is_dir() {
        Ok(())
    } else {
        Err(usage(anyhow!("{what} directory not found: {}", path.display())))
    }
}

fn load_protocol(spec: &str) -> anyhow::Result<SkewProtocol> {
    if spec == "default" {
        return Ok(SkewProtocol::default());
    }
    let text = fs::read_to_string(spec).with_context(|| format!("reading protocol {spec}"))?;
    serde_json::from_str(&text).with_context(|| format!("parsing protocol {spec}"))
}

#[derive(Serialize)]
struct SplitIds {
    protocol: SkewProtocol,
    seed: u64,
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

fn gen_data(args: GenDataArgs) -> CmdResult {
    let protocol = args.protocol.as_deref().map(load_protocol).transpose().map_err(usage)?;
    let need = protocol.map(|p| p.required());
    let majority = args.majority.or(need.map(|n| n.majority));
    let minority = args.minority.or(need.map(|n| n.minority));
    let (Some(majority), Some(minority)) = (majority, minority) else {
        return Err(usage(anyhow!("pass --majority and --minority, or --protocol")));
    };
    echo(&serde_json::json!({
        "command": "gen-data",
        "out": args.out,
        "seed": args.seed,
        "majority": majority,
        "minority": minority,
        "protocol": protocol,
    }))?;

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(run_err)?;
    let pool = generate_synthetic(majority, minority, args.seed);
    save_dataset(args.out.join("pool.fnd"), &pool).map_err(run_err)?;
    if let Some(protocol) = protocol {
        let splits = split_pool(&pool, &protocol, args.seed).map_err(usage)?;
        save_splits(&args.out, &splits).map_err(run_err)?;
        let ids = SplitIds {
            protocol,
            seed: args.seed,
            train: splits.train.ids(),
            val: splits.val.ids(),
            test: splits.test.ids(),
        };
        let json = serde_json::to_string_pretty(&ids).map_err(run_err)? + "\n";
        fs::write(args.out.join("splits.json"), json).map_err(run_err)?;
        for (file, split) in SPLIT_FILES.iter().zip([&splits.train, &splits.val, &splits.test]) {
            let c = split.counts();
            eprintln!("{file}: {} majority, {} minority", c.majority, c.minority);
        }
    }
    Ok(())
}

fn resolve_train(args: &TrainArgs) -> anyhow::Result<ResolvedTrain> {
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut resolved: ResolvedTrain =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if resolved.flags.config_id() != resolved.config_id {
            bail!(
                "config_id {} disagrees with flags ({})",
                resolved.config_id,
                resolved.flags
            );
        }
        if let Some(seed) = args.seed {
            resolved.seed = seed;
        }
        return Ok(resolved);
    }
    let flags = Flags::parse_list(&args.flags)?;
    let mut hyper = Hyper::default();
    if let Some(e) = args.epochs {
        hyper.optim.epochs = e;
    }
    if let Some(lr) = args.lr {
        hyper.optim.base_lr = lr;
    }
    if let Some(b) = args.batch_size {
        hyper.optim.batch_size = b;
    }
    if let Some(s) = args.schedule {
        hyper.optim.schedule = s;
    }
    hyper.final_bn_learnable = args.final_bn_learnable;
    hyper.validate()?;
    Ok(ResolvedTrain {
        seed: args.seed.unwrap_or(0),
        config_id: flags.config_id(),
        flags,
        hyper,
    })
}

fn train(args: TrainArgs) -> CmdResult {
    let resolved = resolve_train(&args).map_err(usage)?;
    require_dir(&args.data, "data")?;
    echo(&resolved)?;
    let splits = finalbn::data::load_splits(&args.data)
        .with_context(|| format!("loading {}", args.data.display()))
        .map_err(run_err)?;
    let config = TrainConfig::new(resolved.flags, resolved.hyper.clone());
    let run = train_model::<f64>(&config, &splits, resolved.seed).map_err(run_err)?;
    write_run(&args.out, &run.report).map_err(run_err)?;
    save_checkpoint(&run.model, args.out.join("model.fnbn")).map_err(run_err)?;
    let json = serde_json::to_string_pretty(&resolved).map_err(run_err)? + "\n";
    fs::write(args.out.join("config.json"), json).map_err(run_err)?;
    if let Some(last) = run.report.final_test() {
        eprintln!(
            "config {} epoch {}: test minority F1 {:.4}, ECE {:.4}",
            resolved.config_id, last.epoch, last.class1.f1, last.ece
        );
    }
    Ok(())
}

fn grid(args: GridArgs) -> CmdResult {
    let text = fs::read_to_string(&args.manifest)
        .with_context(|| format!("reading manifest {}", args.manifest.display()))
        .map_err(usage)?;
    let manifest: GridManifest = serde_json::from_str(&text)
        .with_context(|| format!("parsing manifest {}", args.manifest.display()))
        .map_err(usage)?;
    manifest.validate().map_err(usage)?;
    if let Some(dir) = &manifest.data_dir {
        require_dir(dir, "data")?;
    }
    echo(&manifest)?;
    prepare_output_dir(&args.out, args.force).map_err(usage)?;
    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let splits = manifest.prepare_splits().map_err(run_err)?;
    let outcome = run_grid(&manifest, &splits, workers, args.k).map_err(run_err)?;
    write_grid(&args.out, &outcome).map_err(run_err)?;

    let rows = best_worst_table(&outcome.summary, args.k);
    print!("{}", best_worst_csv(&rows));
    eprintln!("{}", outcome.summary.annotation);
    for run in outcome.runs.iter().filter(|r| r.result.is_err()) {
        eprintln!(
            "config {} repeat {} failed: {}",
            run.config_id,
            run.repeat,
            run.result.as_ref().err().map_or("", String::as_str)
        );
    }
    if outcome.all_failed() {
        return Err(run_err(anyhow!("every grid cell failed")));
    }
    Ok(())
}

fn parse_pair(pair: &str) -> anyhow::Result<(u8, u8)> {
    let ids: Vec<u8> = pair
        .split(',')
        .map(|s| s.trim().parse::<u8>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("--pair expects two config ids, got '{pair}'"))?;
    match ids[..] {
        [a, b] if a < 64 && b < 64 => Ok((a, b)),
        _ => bail!("--pair expects two config ids in 0..63, got '{pair}'"),
    }
}

fn report(args: ReportArgs) -> CmdResult {
    require_dir(&args.input, "input")?;
    let pair = parse_pair(&args.pair).map_err(usage)?;
    let runs = load_runs(&args.input).map_err(run_err)?;
    if runs.is_empty() {
        return Err(run_err(anyhow!("no runs found in {}", args.input.display())));
    }
    let csv = match args.table {
        Table::ThreePlants => Comparison::from_reports(runs.iter().map(|r| &r.report))
            .map_err(run_err)?
            .to_csv(),
        Table::BestWorst => {
            let repeats = runs.iter().map(|r| r.repeat + 1).max().unwrap_or(1);
            let grid_runs: Vec<GridRun> = runs
                .into_iter()
                .map(|r| GridRun {
                    config_id: r.config_id,
                    repeat: r.repeat,
                    seed: r.report.seed,
                    result: Ok(r.report),
                })
                .collect();
            let summary = summarize(&grid_runs, 0, repeats, args.k).map_err(run_err)?;
            best_worst_csv(&best_worst_table(&summary, args.k))
        }
        Table::ConfidentWrongs => {
            let find = |id: u8| {
                runs.iter()
                    .find(|r| r.config_id == id && r.repeat == args.repeat)
                    .map(|r| &r.report)
                    .ok_or_else(|| run_err(anyhow!("no run of config {id} repeat {}", args.repeat)))
            };
            let (left, right) = (find(pair.0)?, find(pair.1)?);
            confident_wrongs_csv(&confident_wrongs(left, right, args.limit))
        }
    };
    print!("{csv}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Grid(a) => grid(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
