use std::time::Instant;

use super::{HarnessError, Instance, Protocol, TransportKind};
use crate::baselines;
use crate::hash;
use crate::protocol::transport::{
    reconcile_in_process, reconcile_tcp_loopback, ReceiverOptions, SenderOptions, SessionReport, TransportError,
};
use crate::protocol::{apply_reconciliation, negotiate, AbortReason, DBound, ReceiverConfig, ReconcileOutcome, SessionParams};

/// Universe for Bloom instances, small enough to enumerate.
pub const BLOOM_UNIVERSE: u64 = 1_000_000;
pub const BLOOM_BITS_PER_ELEMENT: usize = 8;

const SEED_KEY: u64 = 0x5eed_c51b;

#[derive(Debug, Clone, Copy)]
pub struct TrialOptions {
    pub transport: TransportKind,
    pub receiver: ReceiverConfig,
    pub bloom_bits_per_element: usize,
}

impl Default for TrialOptions {
    fn default() -> Self {
        Self {
            transport: TransportKind::InProc,
            receiver: ReceiverConfig::default(),
            bloom_bits_per_element: BLOOM_BITS_PER_ELEMENT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub protocol: Protocol,
    pub n: u64,
    pub k: usize,
    pub d: u64,
    pub trial: u64,
    pub seed: u64,
    pub scalars_sent: u64,
    pub rows_used: Option<usize>,
    pub rounds: u32,
    /// Oracle verdict: the receiver's reconciled set equals `S_A`.
    pub success: bool,
    /// What the protocol itself reported.
    pub claimed_success: bool,
    pub abort: Option<AbortReason>,
    pub fallback_used: bool,
    pub error: Option<String>,
    pub wall_ms: f64,
}

impl TrialRecord {
    /// A claimed success the oracle disagrees with.
    pub fn silently_wrong(&self) -> bool {
        self.claimed_success && !self.success
    }
}

/// CS-IBLT session parameters for a trial seed.
pub fn session_params(n: u64, k: usize, seed: u64) -> Result<SessionParams, HarnessError> {
    Ok(negotiate(
        n,
        k,
        DBound::AtMostN,
        hash::keyed(seed, SEED_KEY, 0),
        hash::keyed(seed, SEED_KEY, 1),
    )?)
}

fn run_cs(inst: &Instance, k: usize, opts: &TrialOptions) -> Result<Result<ReconcileOutcome, TransportError>, HarnessError> {
    let params = session_params(inst.n, k, inst.rng_seed)?;
    let ropts = ReceiverOptions {
        config: opts.receiver,
        ..Default::default()
    };
    let sopts = SenderOptions::default();
    let run = match opts.transport {
        TransportKind::InProc => reconcile_in_process(&inst.s_a, &inst.s_b, params, sopts, ropts),
        TransportKind::Tcp => reconcile_tcp_loopback(&inst.s_a, &inst.s_b, params, sopts, ropts),
    };
    Ok(run.map(|SessionReport { receiver, .. }| receiver.outcome))
}

/// Runs one protocol end to end on `inst`. Transport failures become failed
/// records; only invalid parameter combinations are errors.
pub fn run_trial(inst: &Instance, protocol: Protocol, k: usize, opts: &TrialOptions) -> Result<TrialRecord, HarnessError> {
    if protocol != Protocol::CsIblt && opts.transport != TransportKind::InProc {
        return Err(HarnessError::InvalidCombination(format!(
            "{protocol} runs in-process only"
        )));
    }
    let start = Instant::now();
    let result = match protocol {
        Protocol::CsIblt => run_cs(inst, k, opts)?,
        Protocol::IbltGuess => Ok(baselines::iblt_guess_reconcile(
            &inst.s_a,
            &inst.s_b,
            inst.n,
            k,
            hash::keyed(inst.rng_seed, SEED_KEY, 2),
        )?),
        Protocol::Naive => Ok(baselines::naive_reconcile(&inst.s_a, &inst.s_b)),
        Protocol::Bloom => Ok(baselines::bloom_reconcile(
            &inst.s_a,
            &inst.s_b,
            inst.universe_max,
            opts.bloom_bits_per_element,
            hash::keyed(inst.rng_seed, SEED_KEY, 3),
        )?),
    };
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;

    let mut rec = TrialRecord {
        protocol,
        n: inst.n,
        k,
        d: inst.d,
        trial: 0,
        seed: inst.rng_seed,
        scalars_sent: 0,
        rows_used: None,
        rounds: 0,
        success: false,
        claimed_success: false,
        abort: None,
        fallback_used: false,
        error: None,
        wall_ms,
    };
    match result {
        Ok(o) => {
            let reconciled = apply_reconciliation(&inst.s_b, &o.delta_a, &o.delta_b);
            rec.success = matches!(reconciled, Ok(ref s) if *s == inst.s_a);
            rec.claimed_success = o.success;
            rec.scalars_sent = o.scalars_sent;
            rec.rows_used = (protocol == Protocol::CsIblt).then_some(o.rows_used);
            rec.rounds = o.rounds;
            rec.abort = o.abort;
            rec.fallback_used = o.fallback_used;
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    Ok(rec)
}
