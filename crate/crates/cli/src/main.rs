use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use copyledger::calibration::{calibrate, write_samples_csv, CalibrationConfig};
use copyledger::content_store::ContentStore;
use copyledger::corpus::{bundled_corpus, load_corpus_dir};
use copyledger::crypto::AuthorityRecord;
use copyledger::escrow_contract::{ChallengeEvidence, Serial, TaskId};
use copyledger::fingerprint::{SimHashParams, Threshold};
use copyledger::ledger::{import_jsonl, validate_chain, Block, ImportError};
use copyledger::simulation::{
    run_scenario, Behavior, ChallengeStatus, ScenarioConfig, World, WorldSettings, CONTRACT_IDENTITY,
};

/// Shortest paragraph kept when reading a corpus directory.
const MIN_PARAGRAPH_CHARS: usize = 40;

#[derive(Parser)]
#[command(
    name = "copyledger",
    version,
    about = "Copyright ledger: fingerprinting, escrowed detection and arbitration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the distance/similarity model and derive the threshold.
    Calibrate(CalibrateArgs),
    /// Run a scenario config end to end and write its artifacts.
    RunScenario(RunScenarioArgs),
    /// Summarize an exported chain, optionally validating it.
    InspectChain(InspectArgs),
    /// Create a state directory with a deployed contract.
    Init(InitArgs),
    /// Register a legal medium in a state directory.
    Register(RegisterArgs),
    /// Request detection of a medium and have the DA post a result.
    Detect(DetectArgs),
    /// Challenge a posted result.
    Challenge(ChallengeArgs),
    /// Print the contract state of a state directory.
    DumpState(DumpArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    /// Directory of .txt files; the bundled synthetic corpus when omitted.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    n_base: usize,
    #[arg(long, default_value_t = 500)]
    n_perturbed: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.8)]
    min_similarity: f64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    theta: Option<Threshold>,
    #[arg(long)]
    timeout_ticks: Option<u64>,
    #[arg(long)]
    fee: Option<u64>,
    #[arg(long)]
    deposit: Option<u64>,
}

#[derive(Args)]
struct RunScenarioArgs {
    config: PathBuf,
    #[arg(long, default_value = "scenario_out")]
    out_dir: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct InspectArgs {
    chain: PathBuf,
    /// Validate signatures, links and hashes against the CA record.
    #[arg(long)]
    verify: bool,
    /// CA record; defaults to ca.json beside the chain file.
    #[arg(long)]
    ca: Option<PathBuf>,
}

#[derive(Args)]
struct InitArgs {
    state: PathBuf,
    /// The detection agency, as NAME:BALANCE.
    #[arg(long)]
    da: String,
    /// A media provider, as NAME:BALANCE. Repeatable.
    #[arg(long = "mp", required = true)]
    mps: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = Threshold::DEFAULT)]
    theta: Threshold,
    #[arg(long, default_value_t = 10)]
    timeout_ticks: u64,
    #[arg(long, default_value_t = 10)]
    fee: u64,
    #[arg(long, default_value_t = 50)]
    deposit: u64,
}

#[derive(Args)]
struct RegisterArgs {
    state: PathBuf,
    #[arg(long)]
    owner: String,
    media: PathBuf,
    /// Ticks to advance after the command.
    #[arg(long, default_value_t = 0)]
    advance: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum DaBehavior {
    Honest,
    MisreportPiracy,
    MisreportLegitimate,
}

#[derive(Args)]
struct DetectArgs {
    state: PathBuf,
    #[arg(long)]
    requester: String,
    media: PathBuf,
    #[arg(long)]
    fee: Option<u64>,
    #[arg(long)]
    deposit: Option<u64>,
    #[arg(long, value_enum, default_value_t = DaBehavior::Honest)]
    behavior: DaBehavior,
    /// Serial a misreported piracy verdict names.
    #[arg(long, default_value_t = 1)]
    target: u64,
    #[arg(long, default_value_t = 0)]
    advance: u64,
}

#[derive(Args)]
struct ChallengeArgs {
    state: PathBuf,
    #[arg(long)]
    challenger: String,
    #[arg(long)]
    task: u64,
    /// Evidence {N', N}; found from chain data when omitted.
    #[arg(long, requires = "n")]
    n_prime: Option<u64>,
    #[arg(long, requires = "n_prime")]
    n: Option<u64>,
    #[arg(long, default_value_t = 0)]
    advance: u64,
}

#[derive(Args)]
struct DumpArgs {
    state: PathBuf,
    #[arg(long, default_value_t = 0)]
    advance: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::RunScenario(a) => cmd_run_scenario(a),
        Command::InspectChain(a) => cmd_inspect(a),
        Command::Init(a) => cmd_init(a),
        Command::Register(a) => cmd_register(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Challenge(a) => cmd_challenge(a),
        Command::DumpState(a) => cmd_dump(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<ExitCode> {
    let corpus = match &a.corpus {
        Some(dir) => {
            load_corpus_dir(dir, MIN_PARAGRAPH_CHARS).with_context(|| format!("reading corpus {}", dir.display()))?
        }
        None => bundled_corpus(),
    };
    let config = CalibrationConfig {
        n_base: a.n_base,
        n_perturbed: a.n_perturbed,
        seed: a.seed,
        min_pirate_similarity: a.min_similarity,
        params: SimHashParams::default(),
        ..CalibrationConfig::default()
    };
    let cal = calibrate(&corpus, &config)?;
    fs::create_dir_all(&a.out_dir)?;
    let mut csv = BufWriter::new(fs::File::create(a.out_dir.join("samples.csv"))?);
    write_samples_csv(&mut csv, &cal.samples)?;
    csv.flush()?;
    write_json(
        &a.out_dir.join("model.json"),
        &serde_json::json!({
            "model": cal.model,
            "min_pirate_similarity": a.min_similarity,
            "theta": cal.threshold,
            "n_base": a.n_base,
            "n_perturbed": a.n_perturbed,
            "seed": a.seed,
        }),
    )?;
    println!(
        "{} samples, slope {:.6}, intercept {:.6}, r^2 {:.4}",
        cal.samples.len(),
        cal.model.slope,
        cal.model.intercept,
        cal.model.r_squared
    );
    println!("theta {}", cal.threshold.value());
    Ok(ExitCode::SUCCESS)
}

fn cmd_run_scenario(a: RunScenarioArgs) -> Result<ExitCode> {
    let mut config = ScenarioConfig::load(&a.config)?;
    let o = &a.overrides;
    if let Some(v) = o.seed {
        config.rng_seed = v;
    }
    if let Some(v) = o.theta {
        config.theta = v;
    }
    if let Some(v) = o.timeout_ticks {
        config.timeout_ticks = v;
    }
    if let Some(v) = o.fee {
        config.fee = v;
    }
    if let Some(v) = o.deposit {
        config.deposit = v;
    }
    let run = run_scenario(&config)?;
    let out = &a.out_dir;
    fs::create_dir_all(out)?;
    write_json(&out.join("scenario_report.json"), &run.report)?;
    fs::write(out.join("events.log"), run.report.event_log_text())?;
    let mut chain = BufWriter::new(fs::File::create(out.join("chain.jsonl"))?);
    run.world.ledger().export_jsonl(&mut chain)?;
    chain.flush()?;
    write_json(&out.join("ca.json"), &run.world.authority())?;
    write_json(&out.join("contract_state.json"), &run.world.contract().state())?;
    run.world.save(&out.join("state"))?;

    let r = &run.report;
    for v in &r.verdicts {
        println!(
            "{} {} posted {:?} {} -> {:?}",
            v.task, v.requester, v.posted, v.posted_serial, v.final_state
        );
    }
    for (who, bal) in &r.final_balances {
        println!(
            "balance {who} {} -> {bal}",
            r.initial_balances.get(who).copied().unwrap_or(0)
        );
    }
    for f in &r.failures {
        println!("task failure: {f}");
    }
    for i in &r.invariants {
        if i.passed {
            println!("invariant {}: ok", i.name);
        } else {
            println!("invariant {}: VIOLATED: {}", i.name, i.detail);
        }
    }
    println!("chain height {}, artifacts in {}", r.chain_height, out.display());
    Ok(if r.all_invariants_hold() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn cmd_inspect(a: InspectArgs) -> Result<ExitCode> {
    let file = fs::File::open(&a.chain).with_context(|| format!("opening {}", a.chain.display()))?;
    let blocks = match import_jsonl(BufReader::new(file)) {
        Ok(b) => b,
        Err(e @ (ImportError::Parse { line, .. } | ImportError::NonCanonical { line })) if a.verify => {
            println!("verify: FAILED at block {}: {e}", line - 1);
            return Ok(ExitCode::FAILURE);
        }
        Err(e) => return Err(e).context("parsing chain"),
    };
    print_summary(&blocks);
    if !a.verify {
        return Ok(ExitCode::SUCCESS);
    }
    let ca_path = match a.ca {
        Some(p) => p,
        None => a.chain.parent().unwrap_or(Path::new(".")).join("ca.json"),
    };
    let authority: AuthorityRecord =
        serde_json::from_slice(&fs::read(&ca_path).with_context(|| format!("reading {}", ca_path.display()))?)
            .with_context(|| format!("parsing {}", ca_path.display()))?;
    match validate_chain(&blocks, &authority) {
        Ok(()) => {
            println!("verify: ok");
            Ok(ExitCode::SUCCESS)
        }
        Err(v) => {
            println!("verify: FAILED at block {}: {v}", v.height);
            Ok(ExitCode::FAILURE)
        }
    }
}

fn print_summary(blocks: &[Block]) {
    let total: usize = blocks.iter().map(|b| b.transactions.len()).sum();
    println!("blocks: {}", blocks.len());
    println!("transactions: {total}");
    for b in blocks {
        println!(
            "block {} t={} txs={} hash={}",
            b.height,
            b.timestamp,
            b.transactions.len(),
            b.block_hash
        );
        for (i, tx) in b.transactions.iter().enumerate() {
            println!("  {i:>3} {} #{} {}", tx.sender, tx.nonce, tx.payload.kind());
        }
    }
}

fn parse_actor(spec: &str) -> Result<(String, u64)> {
    let Some((name, balance)) = spec.rsplit_once(':') else {
        bail!("expected NAME:BALANCE, got {spec:?}");
    };
    Ok((
        name.to_owned(),
        balance.parse().with_context(|| format!("balance in {spec:?}"))?,
    ))
}

fn cmd_init(a: InitArgs) -> Result<ExitCode> {
    if a.state.join("world.json").exists() {
        bail!("{} already holds a state directory", a.state.display());
    }
    let da = parse_actor(&a.da)?;
    let mut actors = vec![da.clone()];
    for m in &a.mps {
        actors.push(parse_actor(m)?);
    }
    let settings = WorldSettings {
        contract: CONTRACT_IDENTITY.to_owned(),
        da: da.0,
        theta: a.theta,
        timeout_ticks: a.timeout_ticks,
        fee: a.fee,
        deposit: a.deposit,
        params: SimHashParams::default(),
        seed: a.seed,
    };
    let world = World::create(settings, &actors, ContentStore::in_memory())?;
    world.save(&a.state)?;
    println!(
        "initialized {} at height {}",
        a.state.display(),
        world.ledger().height()
    );
    Ok(ExitCode::SUCCESS)
}

fn finish(mut world: World, state: &Path, advance: u64) -> Result<()> {
    if advance > 0 {
        world.advance_clock(advance);
        world.flush();
    }
    world.save(state)?;
    println!("clock {}, height {}", world.clock(), world.ledger().height());
    Ok(())
}

fn read_media(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading media {}", path.display()))
}

fn cmd_register(a: RegisterArgs) -> Result<ExitCode> {
    let mut world = World::open(&a.state)?;
    let serial = world.register_media(&a.owner, &read_media(&a.media)?)?;
    println!("registered {serial}");
    finish(world, &a.state, a.advance)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_detect(a: DetectArgs) -> Result<ExitCode> {
    let mut world = World::open(&a.state)?;
    let media = read_media(&a.media)?;
    let fee = a.fee.unwrap_or(world.settings().fee);
    let deposit = a.deposit.unwrap_or(world.settings().deposit);
    let da = world.settings().da.clone();
    world.authenticate(&a.requester, &da)?;
    let task = world.request_detection(&a.requester, &media, fee)?;
    let behavior = match a.behavior {
        DaBehavior::Honest => Behavior::Honest,
        DaBehavior::MisreportPiracy => Behavior::MisreportPiracy {
            target: Serial(a.target),
        },
        DaBehavior::MisreportLegitimate => Behavior::MisreportLegitimate,
    };
    let processed = world.process_task(task, behavior, deposit)?;
    println!("{task}");
    println!("detected: {}", serde_json::to_string(&processed.honest.kind)?);
    println!("posted: {}", serde_json::to_string(&processed.posted)?);
    let state = world.contract().task(task).map(|t| t.state);
    println!("state: {state:?}");
    finish(world, &a.state, a.advance)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_challenge(a: ChallengeArgs) -> Result<ExitCode> {
    let mut world = World::open(&a.state)?;
    let task = TaskId(a.task);
    let evidence = match (a.n_prime, a.n) {
        (Some(n_prime), Some(n)) => ChallengeEvidence {
            n_prime: Serial(n_prime),
            n: Serial(n),
        },
        _ => match world.verify_task(&a.challenger, task)? {
            Some(ev) => ev,
            None => {
                println!("no evidence against {task} on chain");
                return Ok(ExitCode::FAILURE);
            }
        },
    };
    let receipt = world.submit_challenge(&a.challenger, task, evidence)?;
    world.flush();
    let status = world.challenge_status(receipt, task, &a.challenger);
    println!(
        "evidence {{{}, {}}}: {}",
        evidence.n_prime,
        evidence.n,
        serde_json::to_string(&status)?
    );
    finish(world, &a.state, a.advance)?;
    Ok(if status == ChallengeStatus::Upheld {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn cmd_dump(a: DumpArgs) -> Result<ExitCode> {
    let mut world = World::open(&a.state)?;
    if a.advance > 0 {
        world.advance_clock(a.advance);
        world.flush();
        world.save(&a.state)?;
    }
    println!("{}", serde_json::to_string_pretty(&world.contract().state())?);
    Ok(ExitCode::SUCCESS)
}
