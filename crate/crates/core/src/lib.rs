pub mod baselines;
pub mod cs_encode;
pub mod hash;
pub mod iblt;
pub mod protocol;
pub mod sparse_recovery;
pub mod harness;
