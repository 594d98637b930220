use super::{
    check_deltas, classify, AbortReason, ElementSet, Message, ProtocolError, ReconcileOutcome,
    SessionParams,
};
use crate::cs_encode::{self, MatrixSpec, MeasurementRow};
use crate::iblt::Iblt;
use crate::sparse_recovery::{RecoveryProblem, SolverConfig};

fn build_table(set: &ElementSet, params: &SessionParams) -> Result<Iblt, ProtocolError> {
    if set.len() as u64 > params.n {
        return Err(ProtocolError::SetTooLarge {
            size: set.len(),
            n: params.n,
        });
    }
    Ok(Iblt::from_elements(params.table_params(), set))
}

/// Host A: streams rows of `Phi * IBLT_A` until acknowledged or out of rows.
#[derive(Debug, Clone)]
pub struct SenderState {
    params: SessionParams,
    spec: MatrixSpec,
    table: Iblt,
    next_row: usize,
    finished: bool,
}

impl SenderState {
    pub fn new(s_a: &ElementSet, params: SessionParams) -> Result<Self, ProtocolError> {
        Ok(Self {
            table: build_table(s_a, &params)?,
            spec: params.matrix_spec(),
            params,
            next_row: 0,
            finished: false,
        })
    }

    pub fn params(&self) -> &SessionParams {
        &self.params
    }

    pub fn table(&self) -> &Iblt {
        &self.table
    }

    pub fn rows_sent(&self) -> usize {
        self.next_row
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// The next `Row` message, or `None` once acknowledged or all `b` rows are out.
    pub fn next_row(&mut self) -> Option<Message> {
        if self.finished || self.next_row >= self.spec.max_rows {
            self.finished = true;
            return None;
        }
        let row = cs_encode::encode_row(&self.table, &self.spec, self.next_row)
            .expect("row index is within budget");
        self.next_row += 1;
        Some(Message::Row(row))
    }

    /// Handles a reply from host B. Any `Done` or `Abort` ends the stream.
    pub fn on_reply(&mut self, msg: &Message) {
        if matches!(msg, Message::Done { .. } | Message::Abort(_)) {
            self.finished = true;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceiverConfig {
    pub solver: SolverConfig,
    /// Attempt recovery after every `attempt_every` rows (and always at the last row).
    pub attempt_every: usize,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            attempt_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReceiverStep {
    Continue,
    Done(ReconcileOutcome),
    Abort(AbortReason),
}

impl ReceiverStep {
    /// The message host B sends back for this step, if any.
    pub fn reply(&self) -> Option<Message> {
        match self {
            ReceiverStep::Continue => None,
            ReceiverStep::Done(o) => Some(Message::Done {
                delta_a: o.delta_a.len() as u32,
                delta_b: o.delta_b.len() as u32,
            }),
            ReceiverStep::Abort(r) => Some(Message::Abort(*r)),
        }
    }
}

/// Host B: accumulates difference measurements and tries to decode after each row.
#[derive(Debug, Clone)]
pub struct ReceiverState {
    params: SessionParams,
    spec: MatrixSpec,
    set: ElementSet,
    table: Iblt,
    cfg: ReceiverConfig,
    problem: RecoveryProblem,
    received: Vec<MeasurementRow>,
    outcome: Option<ReconcileOutcome>,
}

impl ReceiverState {
    pub fn new(s_b: &ElementSet, params: SessionParams, cfg: ReceiverConfig) -> Result<Self, ProtocolError> {
        if cfg.attempt_every == 0 {
            return Err(ProtocolError::ParameterRejection(
                "attempt_every must be at least 1".into(),
            ));
        }
        Ok(Self {
            table: build_table(s_b, &params)?,
            spec: params.matrix_spec(),
            set: s_b.clone(),
            problem: RecoveryProblem::new(params.b as usize),
            params,
            cfg,
            received: Vec::new(),
            outcome: None,
        })
    }

    pub fn params(&self) -> &SessionParams {
        &self.params
    }

    pub fn table(&self) -> &Iblt {
        &self.table
    }

    pub fn received_rows(&self) -> &[MeasurementRow] {
        &self.received
    }

    pub fn outcome(&self) -> Option<&ReconcileOutcome> {
        self.outcome.as_ref()
    }

    fn finish(&mut self, outcome: ReconcileOutcome) -> ReconcileOutcome {
        self.outcome = Some(outcome.clone());
        outcome
    }

    fn failed(&self, reason: AbortReason) -> ReconcileOutcome {
        ReconcileOutcome {
            rows_used: self.received.len(),
            scalars_sent: 2 * self.received.len() as u64,
            handshake_messages: 2,
            rounds: 1,
            success: false,
            abort: Some(reason),
            ..Default::default()
        }
    }

    /// Ends the session from outside, e.g. when the sender went silent.
    pub fn abort(&mut self, reason: AbortReason) -> ReceiverStep {
        if self.outcome.is_none() {
            let o = self.failed(reason);
            self.finish(o);
        }
        ReceiverStep::Abort(reason)
    }

    pub fn on_row(&mut self, row: MeasurementRow) -> ReceiverStep {
        if let Some(done) = &self.outcome {
            // Rows after the session ended are a protocol violation.
            return match done.abort {
                Some(r) => ReceiverStep::Abort(r),
                None => ReceiverStep::Abort(AbortReason::OutOfOrder),
            };
        }
        let i = self.received.len();
        if row.index != i || i >= self.spec.max_rows {
            return self.abort(AbortReason::OutOfOrder);
        }
        let phi = self.spec.matrix_row(i).expect("row index is within budget");
        let own = cs_encode::encode_with_row(&self.table, i, &phi);
        self.problem
            .push(&phi, row.y_sum - own.y_sum, row.y_count - own.y_count)
            .expect("row width matches table");
        self.received.push(row);

        let m = i + 1;
        let last = m == self.spec.max_rows;
        if m % self.cfg.attempt_every == 0 || last {
            if let Some(outcome) = self.attempt() {
                return ReceiverStep::Done(self.finish(outcome));
            }
        }
        if last {
            return self.abort(AbortReason::RowBudgetExhausted);
        }
        ReceiverStep::Continue
    }

    /// One recovery attempt on the rows so far.
    fn attempt(&mut self) -> Option<ReconcileOutcome> {
        let recovered = self.problem.recover(self.params.table_params(), &self.cfg.solver).ok()?;
        if !recovered.verified {
            return None;
        }
        let extract = recovered.table.list_entries();
        let (delta_a, delta_b) = classify(&extract).ok()?;
        // A recovery that contradicts S_B is wrong; keep listening.
        check_deltas(&self.set, &delta_a, &delta_b).ok()?;
        let rows = self.received.len();
        Some(ReconcileOutcome {
            delta_a,
            delta_b,
            rows_used: rows,
            scalars_sent: 2 * rows as u64,
            handshake_messages: 2,
            rounds: 1,
            success: true,
            abort: None,
            fallback_used: false,
        })
    }
}
