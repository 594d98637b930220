//! Two-host reconciliation protocol.
//!
//! Host A streams measurement rows of its table; host B subtracts its own
//! measurements, attempts sparse recovery of the difference table after each
//! row and acknowledges with [`Message::Done`] as soon as the recovered table
//! peels cleanly. Host B then applies `(S_B ∪ Δ_A) \ Δ_B`.

mod session;
pub mod transport;
pub mod wire;

use std::collections::BTreeSet;

use thiserror::Error;

use crate::iblt::{Element, ExtractResult, IbltError, TableParams};

pub use session::{ReceiverConfig, ReceiverState, ReceiverStep, SenderState};
pub use wire::{AbortReason, Message, WireError};

pub const PROTOCOL_VERSION: u8 = 1;

/// Largest table either host will agree to build.
pub const MAX_TABLE_LEN: u64 = 1 << 24;

pub type ElementSet = BTreeSet<Element>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("protocol version {0} is not supported")]
    VersionMismatch(u8),
    #[error("session parameters rejected: {0}")]
    ParameterRejection(String),
    #[error("set of {size} elements exceeds the declared bound n={n}")]
    SetTooLarge { size: usize, n: u64 },
    #[error(transparent)]
    Table(#[from] IbltError),
    #[error("cannot classify an extraction that did not drain the table")]
    ClassificationOnFailedExtract,
    #[error("deltas are inconsistent with the local set: {0}")]
    InconsistentDeltas(String),
}

/// Which difference sizes the table is provisioned for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DBound {
    /// `d <= n`, table length `2n`.
    AtMostN,
    /// `n < d <= 2n`, table length `4n`.
    AtMost2N,
}

impl DBound {
    pub fn table_len(self, n: u64) -> Option<u64> {
        match self {
            DBound::AtMostN => n.checked_mul(2),
            DBound::AtMost2N => n.checked_mul(4),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            DBound::AtMostN => 0,
            DBound::AtMost2N => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DBound::AtMostN),
            1 => Some(DBound::AtMost2N),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionParams {
    pub n: u64,
    pub k: u8,
    pub b: u64,
    pub matrix_seed: u64,
    pub hash_seed: u64,
    pub d_bound: DBound,
}

impl SessionParams {
    pub fn table_params(&self) -> TableParams {
        TableParams::new(self.b as usize, self.k as usize, self.hash_seed)
            .expect("negotiated parameters are valid")
    }

    pub fn matrix_spec(&self) -> crate::cs_encode::MatrixSpec {
        crate::cs_encode::MatrixSpec::new(self.matrix_seed, self.b as usize)
    }

    pub fn hello(&self) -> Message {
        Message::Hello {
            version: PROTOCOL_VERSION,
            n: self.n,
            k: self.k,
            b: self.b,
            matrix_seed: self.matrix_seed,
            hash_seed: self.hash_seed,
            d_bound: self.d_bound,
        }
    }

    /// Validates a received `Hello` and derives the same parameters the sender used.
    pub fn from_hello(msg: &Message) -> Result<Self, ProtocolError> {
        let Message::Hello {
            version,
            n,
            k,
            b,
            matrix_seed,
            hash_seed,
            d_bound,
        } = *msg
        else {
            return Err(ProtocolError::ParameterRejection(
                "expected a Hello message".into(),
            ));
        };
        if version != PROTOCOL_VERSION {
            return Err(ProtocolError::VersionMismatch(version));
        }
        let params = negotiate(n, k as usize, d_bound, matrix_seed, hash_seed)?;
        if params.b != b {
            return Err(ProtocolError::ParameterRejection(format!(
                "table length {b} does not match n={n} under {d_bound:?}"
            )));
        }
        Ok(params)
    }
}

/// Derives session parameters: the table holds `2n` cells, or `4n` when the
/// difference may exceed `n`.
pub fn negotiate(
    n: u64,
    k: usize,
    d_bound: DBound,
    matrix_seed: u64,
    hash_seed: u64,
) -> Result<SessionParams, ProtocolError> {
    if n == 0 {
        return Err(ProtocolError::ParameterRejection("n must be positive".into()));
    }
    if !(2..=u8::MAX as usize).contains(&k) {
        return Err(ProtocolError::ParameterRejection(format!(
            "hash count {k} outside [2, 255]"
        )));
    }
    let b = d_bound
        .table_len(n)
        .filter(|&b| b <= MAX_TABLE_LEN)
        .ok_or_else(|| {
            ProtocolError::ParameterRejection(format!("table for n={n} exceeds {MAX_TABLE_LEN} cells"))
        })?;
    if (b as usize) < k {
        return Err(ProtocolError::ParameterRejection(format!(
            "table length {b} is smaller than k={k}"
        )));
    }
    Ok(SessionParams {
        n,
        k: k as u8,
        b,
        matrix_seed,
        hash_seed,
        d_bound,
    })
}

/// What one reconciliation run found and what it cost.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ReconcileOutcome {
    pub delta_a: ElementSet,
    pub delta_b: ElementSet,
    /// Measurement rows consumed by the receiver (CS-IBLT only).
    pub rows_used: usize,
    /// Payload cost in 64-bit scalars.
    pub scalars_sent: u64,
    /// Control messages (Hello, Done, Abort, per-round replies).
    pub handshake_messages: u32,
    /// Transmission rounds; always 1 for CS-IBLT.
    pub rounds: u32,
    /// Set when a baseline had to fall back past its planned schedule.
    pub fallback_used: bool,
    pub success: bool,
    pub abort: Option<AbortReason>,
}

/// Positives become `Δ_A`; negatives (already reported as positive values) become `Δ_B`.
pub fn classify(extract: &ExtractResult) -> Result<(ElementSet, ElementSet), ProtocolError> {
    if !extract.success {
        return Err(ProtocolError::ClassificationOnFailedExtract);
    }
    Ok((extract.positives.clone(), extract.negatives.clone()))
}

/// Checks that `Δ_B ⊆ S_B` and `Δ_A ∩ S_B = ∅`.
pub fn check_deltas(s_b: &ElementSet, delta_a: &ElementSet, delta_b: &ElementSet) -> Result<(), ProtocolError> {
    if let Some(e) = delta_b.iter().find(|e| !s_b.contains(e)) {
        return Err(ProtocolError::InconsistentDeltas(format!(
            "{e} is in Δ_B but not in S_B"
        )));
    }
    if let Some(e) = delta_a.iter().find(|e| s_b.contains(e)) {
        return Err(ProtocolError::InconsistentDeltas(format!(
            "{e} is in Δ_A but already in S_B"
        )));
    }
    Ok(())
}

/// `(S_B ∪ Δ_A) \ Δ_B`, refusing deltas that cannot have come from a correct recovery.
pub fn apply_reconciliation(
    s_b: &ElementSet,
    delta_a: &ElementSet,
    delta_b: &ElementSet,
) -> Result<ElementSet, ProtocolError> {
    check_deltas(s_b, delta_a, delta_b)?;
    Ok(s_b
        .union(delta_a)
        .filter(|e| !delta_b.contains(e))
        .copied()
        .collect())
}
