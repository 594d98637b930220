use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use super::{gen_instance, gen_instance_in, run_trial, HarnessError, Protocol, TrialOptions, TrialRecord, BLOOM_UNIVERSE};
use crate::hash;

pub const CSV_HEADER: [&str; 10] = [
    "protocol",
    "n",
    "k",
    "d",
    "trial",
    "scalars_sent",
    "rows_used",
    "rounds",
    "success",
    "wall_ms",
];

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub n: u64,
    pub k: usize,
    pub ds: Vec<u64>,
    pub trials: u64,
    pub protocols: Vec<Protocol>,
    /// Worker threads; `None` uses rayon's default.
    pub jobs: Option<usize>,
    pub seed: u64,
    pub options: TrialOptions,
}

impl SweepConfig {
    /// Instance seed for `(d, trial)`; every protocol sees the same instance.
    pub fn instance_seed(&self, d: u64, trial: u64) -> u64 {
        hash::keyed(trial, self.seed, d)
    }
}

/// Runs every `(d, trial, protocol)` combination and writes one CSV row each.
pub fn sweep(cfg: &SweepConfig, out: &Path) -> Result<Vec<TrialRecord>, HarnessError> {
    let mut jobs = Vec::new();
    for &d in &cfg.ds {
        for trial in 0..cfg.trials {
            for &p in &cfg.protocols {
                jobs.push((d, trial, p));
            }
        }
    }
    let run = |&(d, trial, p): &(u64, u64, Protocol)| -> Result<TrialRecord, HarnessError> {
        let seed = cfg.instance_seed(d, trial);
        let inst = match p {
            Protocol::Bloom => gen_instance_in(cfg.n, d, seed, BLOOM_UNIVERSE)?,
            _ => gen_instance(cfg.n, d, seed)?,
        };
        let mut rec = run_trial(&inst, p, cfg.k, &cfg.options)?;
        rec.trial = trial;
        Ok(rec)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.unwrap_or(0))
        .build()
        .map_err(|e| HarnessError::InvalidCombination(e.to_string()))?;
    let records = pool.install(|| jobs.par_iter().map(run).collect::<Result<Vec<_>, _>>())?;
    write_csv(File::create(out)?, &records)?;
    Ok(records)
}

pub fn write_csv<W: Write>(w: W, records: &[TrialRecord]) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in records {
        out.write_record([
            r.protocol.name().to_string(),
            r.n.to_string(),
            r.k.to_string(),
            r.d.to_string(),
            r.trial.to_string(),
            r.scalars_sent.to_string(),
            r.rows_used.map(|m| m.to_string()).unwrap_or_default(),
            r.rounds.to_string(),
            r.success.to_string(),
            format!("{:.3}", r.wall_ms),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: u64) -> Result<T, HarnessError> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| HarnessError::MalformedCsv(format!("line {line}: bad {} field", CSV_HEADER[i])))
}

/// Parses the fixed schema back into records. Fields not in the CSV keep defaults.
pub fn read_csv<R: Read>(r: R) -> Result<Vec<TrialRecord>, HarnessError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rdr
        .headers()
        .map_err(|e| HarnessError::MalformedCsv(e.to_string()))?
        .clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(HarnessError::MalformedCsv(format!(
            "expected header {}",
            CSV_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| HarnessError::MalformedCsv(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let protocol = rec
            .get(0)
            .unwrap_or_default()
            .parse::<Protocol>()
            .map_err(|e| HarnessError::MalformedCsv(format!("line {line}: {e}")))?;
        let rows_used = match rec.get(6) {
            Some("") => None,
            _ => Some(field(&rec, 6, line)?),
        };
        let success = field(&rec, 8, line)?;
        out.push(TrialRecord {
            protocol,
            n: field(&rec, 1, line)?,
            k: field(&rec, 2, line)?,
            d: field(&rec, 3, line)?,
            trial: field(&rec, 4, line)?,
            seed: 0,
            scalars_sent: field(&rec, 5, line)?,
            rows_used,
            rounds: field(&rec, 7, line)?,
            success,
            claimed_success: success,
            abort: None,
            fallback_used: false,
            error: None,
            wall_ms: field(&rec, 9, line)?,
        });
    }
    Ok(out)
}
