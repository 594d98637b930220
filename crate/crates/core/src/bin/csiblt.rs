use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;
use std::thread;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};

use csiblt::harness::{
    self, gen_instance, gen_instance_in, run_trial, session_params, HarnessError, Instance, Protocol, SweepConfig,
    TransportKind, TrialOptions, BLOOM_UNIVERSE,
};
use csiblt::protocol::transport::{
    run_receiver, run_sender, ReceiverOptions, SenderOptions, TcpLink, TransportError,
};
use csiblt::protocol::{apply_reconciliation, Message};

const EXIT_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_TRANSPORT: u8 = 3;

#[derive(Parser)]
#[command(name = "csiblt", version, about = "CS-IBLT set reconciliation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconcile one random instance.
    Reconcile(ReconcileArgs),
    /// Sweep d and write one CSV row per trial.
    Bench(BenchArgs),
    /// Render a sweep CSV as an SVG cost curve.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ReconcileArgs {
    #[arg(long)]
    n: u64,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    d: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    protocol: Protocol,
    #[arg(long, default_value = "inproc")]
    transport: TransportKind,
    /// Act as host B and wait for host A on this address.
    #[arg(long, conflicts_with = "connect")]
    listen: Option<String>,
    /// Act as host A and connect to host B at this address.
    #[arg(long)]
    connect: Option<String>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    n: u64,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    d_min: u64,
    #[arg(long)]
    d_max: u64,
    #[arg(long)]
    d_step: u64,
    #[arg(long)]
    trials: u64,
    /// Comma-separated protocol names.
    #[arg(long, value_delimiter = ',', required = true)]
    protocols: Vec<Protocol>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    jobs: Option<usize>,
    /// Permit n > 200.
    #[arg(long)]
    allow_long: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn usage(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_USAGE)
}

fn harness_failure(e: HarnessError) -> ExitCode {
    match e {
        HarnessError::Io(_) | HarnessError::Csv(_) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILED)
        }
        other => usage(other),
    }
}

fn transport_failure(e: TransportError) -> ExitCode {
    eprintln!("transport error: {e}");
    ExitCode::from(EXIT_TRANSPORT)
}

fn instance_for(a: &ReconcileArgs) -> Result<Instance, HarnessError> {
    match a.protocol {
        Protocol::Bloom => gen_instance_in(a.n, a.d, a.seed, BLOOM_UNIVERSE),
        _ => gen_instance(a.n, a.d, a.seed),
    }
}

fn reconcile(a: ReconcileArgs) -> ExitCode {
    let inst = match instance_for(&a) {
        Ok(i) => i,
        Err(e) => return harness_failure(e),
    };
    if a.listen.is_some() || a.connect.is_some() {
        if a.protocol != Protocol::CsIblt {
            return usage(format!("{} runs in-process only", a.protocol));
        }
        return match (&a.listen, &a.connect) {
            (Some(addr), _) => listen(&inst, addr),
            (_, Some(addr)) => connect(&a, &inst, addr),
            _ => unreachable!(),
        };
    }
    let opts = TrialOptions {
        transport: a.transport,
        ..Default::default()
    };
    let rec = match run_trial(&inst, a.protocol, a.k, &opts) {
        Ok(r) => r,
        Err(e) => return harness_failure(e),
    };
    println!("protocol={} n={} k={} d={} seed={}", rec.protocol, rec.n, rec.k, rec.d, a.seed);
    println!(
        "scalars_sent={} rows_used={} rounds={} success={}",
        rec.scalars_sent,
        rec.rows_used.map(|m| m.to_string()).unwrap_or_else(|| "-".into()),
        rec.rounds,
        rec.success
    );
    if let Some(r) = rec.abort {
        println!("abort={r:?}");
    }
    if let Some(e) = rec.error {
        eprintln!("transport error: {e}");
        return ExitCode::from(EXIT_TRANSPORT);
    }
    if rec.success {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAILED)
    }
}

fn listen(inst: &Instance, addr: &str) -> ExitCode {
    let listener = match TcpListener::bind(addr) {
        Ok(l) => l,
        Err(e) => return transport_failure(e.into()),
    };
    if let Ok(local) = listener.local_addr() {
        println!("listening={local}");
    }
    let report = TcpLink::accept(&listener).and_then(|mut link| run_receiver(&mut link, &inst.s_b, ReceiverOptions::default()));
    let report = match report {
        Ok(r) => r,
        Err(e) => return transport_failure(e),
    };
    let o = report.outcome;
    let ok = o.success && matches!(apply_reconciliation(&inst.s_b, &o.delta_a, &o.delta_b), Ok(s) if s == inst.s_a);
    println!(
        "role=receiver rows_used={} scalars_sent={} delta_a={} delta_b={} success={ok}",
        o.rows_used,
        o.scalars_sent,
        o.delta_a.len(),
        o.delta_b.len()
    );
    if let Some(r) = o.abort {
        println!("abort={r:?}");
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAILED)
    }
}

fn connect(a: &ReconcileArgs, inst: &Instance, addr: &str) -> ExitCode {
    let params = match session_params(a.n, a.k, a.seed) {
        Ok(p) => p,
        Err(e) => return harness_failure(e),
    };
    // Give a freshly started listener a moment to come up.
    let deadline = Instant::now() + Duration::from_secs(5);
    let mut link = loop {
        match TcpLink::connect(addr) {
            Ok(l) => break l,
            Err(_) if Instant::now() < deadline => thread::sleep(Duration::from_millis(50)),
            Err(e) => return transport_failure(e),
        }
    };
    let report = match run_sender(&mut link, &inst.s_a, params, SenderOptions::default()) {
        Ok(r) => r,
        Err(e) => return transport_failure(e),
    };
    println!("role=sender rows_sent={} reply={:?}", report.rows_sent, report.reply);
    match report.reply {
        Some(Message::Done { .. }) => ExitCode::SUCCESS,
        Some(_) => ExitCode::from(EXIT_FAILED),
        None => {
            eprintln!("transport error: no reply from receiver");
            ExitCode::from(EXIT_TRANSPORT)
        }
    }
}

fn bench(a: BenchArgs) -> ExitCode {
    if a.n > 200 && !a.allow_long {
        return usage(format!("n={} is a long-running sweep; pass --allow-long", a.n));
    }
    if a.d_step == 0 {
        return usage("--d-step must be positive");
    }
    if a.trials == 0 {
        return usage("--trials must be positive");
    }
    let ds: Vec<u64> = (a.d_min..=a.d_max).step_by(a.d_step as usize).collect();
    let cfg = SweepConfig {
        n: a.n,
        k: a.k,
        ds,
        trials: a.trials,
        protocols: a.protocols,
        jobs: a.jobs,
        seed: a.seed,
        options: TrialOptions::default(),
    };
    match harness::sweep(&cfg, &a.out) {
        Ok(records) => {
            let ok = records.iter().filter(|r| r.success).count();
            println!("wrote {} rows to {} ({ok} successful)", records.len(), a.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => harness_failure(e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Reconcile(a) => reconcile(a),
        Command::Bench(a) => bench(a),
        Command::Plot { input, out } => match harness::plot(&input, &out) {
            Ok(()) => ExitCode::SUCCESS,
            Err(HarnessError::Io(e)) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_FAILED)
            }
            Err(e) => usage(e),
        },
    }
}
