//! Instance generation, trial execution, sweeps and plots.

mod instance;
mod plot;
mod sweep;
mod trial;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::baselines::BaselineError;
use crate::protocol::ProtocolError;

pub use instance::{fig1_instance, gen_instance, gen_instance_in, Instance, FULL_UNIVERSE};
pub use plot::{plot, render_svg};
pub use sweep::{read_csv, sweep, write_csv, SweepConfig, CSV_HEADER};
pub use trial::{run_trial, session_params, TrialOptions, TrialRecord, BLOOM_BITS_PER_ELEMENT, BLOOM_UNIVERSE};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("infeasible parameters: {0}")]
    Infeasible(String),
    #[error("invalid combination: {0}")]
    InvalidCombination(String),
    #[error("malformed csv: {0}")]
    MalformedCsv(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Protocol {
    CsIblt,
    IbltGuess,
    Naive,
    Bloom,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [Protocol::CsIblt, Protocol::IbltGuess, Protocol::Naive, Protocol::Bloom];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::CsIblt => "cs-iblt",
            Protocol::IbltGuess => "iblt-guess",
            Protocol::Naive => "naive",
            Protocol::Bloom => "bloom",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown protocol '{s}' (expected cs-iblt, iblt-guess, naive or bloom)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransportKind {
    #[default]
    InProc,
    Tcp,
}

impl FromStr for TransportKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inproc" => Ok(TransportKind::InProc),
            "tcp" => Ok(TransportKind::Tcp),
            _ => Err(format!("unknown transport '{s}' (expected inproc or tcp)")),
        }
    }
}
