//! Message transports and the two host loops that drive a session over them.
//!
//! Both transports carry encoded frames, so every session exercises the wire
//! format. Delivery is in order; gaps or reordering are detected from the row
//! indices and answered with an `Abort`.

use std::io::{self, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, SyncSender, TryRecvError};
use std::thread;
use std::time::Duration;

use thiserror::Error;

use super::wire::{read_message, write_message, WireError};
use super::{
    AbortReason, ElementSet, Message, ProtocolError, ReceiverConfig, ReceiverState,
    ReconcileOutcome, SenderState, SessionParams,
};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("peer closed the connection")]
    Disconnected,
    #[error("timed out waiting for the peer")]
    Timeout,
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// A bidirectional, in-order message pipe.
pub trait Link: Send {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError>;
    fn recv_timeout(&mut self, timeout: Duration) -> Result<Message, TransportError>;
    /// Non-blocking receive.
    fn try_recv(&mut self) -> Result<Option<Message>, TransportError>;
}

/// In-process link: encoded frames over bounded channels.
pub struct ChannelLink {
    tx: SyncSender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

/// Two connected endpoints. `capacity` bounds the frames in flight per direction.
pub fn channel_pair(capacity: usize) -> (ChannelLink, ChannelLink) {
    let (a_tx, b_rx) = mpsc::sync_channel(capacity);
    let (b_tx, a_rx) = mpsc::sync_channel(capacity);
    (
        ChannelLink { tx: a_tx, rx: a_rx },
        ChannelLink { tx: b_tx, rx: b_rx },
    )
}

fn decode_frame(bytes: &[u8]) -> Result<Message, TransportError> {
    Ok(Message::decode(bytes)?.0)
}

impl Link for ChannelLink {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        self.tx
            .send(msg.encode()?)
            .map_err(|_| TransportError::Disconnected)
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Result<Message, TransportError> {
        match self.rx.recv_timeout(timeout) {
            Ok(bytes) => decode_frame(&bytes),
            Err(RecvTimeoutError::Timeout) => Err(TransportError::Timeout),
            Err(RecvTimeoutError::Disconnected) => Err(TransportError::Disconnected),
        }
    }

    fn try_recv(&mut self) -> Result<Option<Message>, TransportError> {
        match self.rx.try_recv() {
            Ok(bytes) => decode_frame(&bytes).map(Some),
            Err(TryRecvError::Empty) => Ok(None),
            Err(TryRecvError::Disconnected) => Err(TransportError::Disconnected),
        }
    }
}

/// TCP link. A background thread decodes incoming frames so the owner can
/// poll for replies while it keeps writing.
pub struct TcpLink {
    writer: BufWriter<TcpStream>,
    incoming: Receiver<Result<Message, TransportError>>,
}

impl TcpLink {
    pub fn new(stream: TcpStream) -> Result<Self, TransportError> {
        stream.set_nodelay(true)?;
        let mut reader = stream.try_clone()?;
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || loop {
            let item = match read_message(&mut reader) {
                Ok(m) => Ok(m),
                Err(WireError::Io(e)) if e.kind() == io::ErrorKind::UnexpectedEof => {
                    Err(TransportError::Disconnected)
                }
                Err(e) => Err(TransportError::Wire(e)),
            };
            let stop = item.is_err();
            if tx.send(item).is_err() || stop {
                break;
            }
        });
        Ok(Self {
            writer: BufWriter::new(stream),
            incoming: rx,
        })
    }

    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, TransportError> {
        Self::new(TcpStream::connect(addr)?)
    }

    /// Accepts exactly one peer.
    pub fn accept(listener: &TcpListener) -> Result<Self, TransportError> {
        let (stream, _) = listener.accept()?;
        Self::new(stream)
    }
}

impl Drop for TcpLink {
    // Half-close only: the reader thread keeps draining until the peer's FIN,
    // so no unread data is left behind to turn the close into a reset.
    fn drop(&mut self) {
        let _ = self.writer.flush();
        let _ = self.writer.get_ref().shutdown(Shutdown::Write);
    }
}

impl Link for TcpLink {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        let res = write_message(&mut self.writer, msg).and_then(|_| Ok(self.writer.flush()?));
        match res {
            Ok(()) => Ok(()),
            Err(WireError::Io(e))
                if matches!(
                    e.kind(),
                    io::ErrorKind::BrokenPipe
                        | io::ErrorKind::ConnectionReset
                        | io::ErrorKind::ConnectionAborted
                ) =>
            {
                Err(TransportError::Disconnected)
            }
            Err(e) => Err(e.into()),
        }
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Result<Message, TransportError> {
        match self.incoming.recv_timeout(timeout) {
            Ok(item) => item,
            Err(RecvTimeoutError::Timeout) => Err(TransportError::Timeout),
            Err(RecvTimeoutError::Disconnected) => Err(TransportError::Disconnected),
        }
    }

    fn try_recv(&mut self) -> Result<Option<Message>, TransportError> {
        match self.incoming.try_recv() {
            Ok(item) => item.map(Some),
            Err(TryRecvError::Empty) => Ok(None),
            Err(TryRecvError::Disconnected) => Err(TransportError::Disconnected),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SenderOptions {
    /// How long to wait for the final reply once all rows are out.
    pub reply_timeout: Duration,
    /// Stop streaming after this many rows without closing the link (for testing liveness).
    pub truncate_after: Option<usize>,
}

impl Default for SenderOptions {
    fn default() -> Self {
        Self {
            reply_timeout: Duration::from_secs(30),
            truncate_after: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SenderReport {
    pub rows_sent: usize,
    pub reply: Option<Message>,
}

/// Host A: Hello, then rows until a `Done`/`Abort` arrives or the budget runs out.
pub fn run_sender<L: Link>(
    link: &mut L,
    s_a: &ElementSet,
    params: SessionParams,
    opts: SenderOptions,
) -> Result<SenderReport, TransportError> {
    let mut state = SenderState::new(s_a, params)?;
    link.send(&params.hello())?;
    let limit = opts.truncate_after.unwrap_or(usize::MAX);
    let mut reply = None;
    while state.rows_sent() < limit {
        match link.try_recv() {
            Ok(Some(msg)) => {
                state.on_reply(&msg);
                reply = Some(msg);
                break;
            }
            Ok(None) => {}
            Err(TransportError::Disconnected) => break,
            Err(e) => return Err(e),
        }
        let Some(row) = state.next_row() else { break };
        match link.send(&row) {
            Ok(()) => {}
            // The receiver hangs up once it has replied; the reply is still queued.
            Err(TransportError::Disconnected) => break,
            Err(e) => return Err(e),
        }
    }
    if reply.is_none() {
        match link.recv_timeout(opts.reply_timeout) {
            Ok(msg) => {
                state.on_reply(&msg);
                reply = Some(msg);
            }
            Err(TransportError::Timeout) | Err(TransportError::Disconnected) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(SenderReport {
        rows_sent: state.rows_sent(),
        reply,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct ReceiverOptions {
    pub config: ReceiverConfig,
    /// Silence longer than this ends the session with `Abort(Timeout)`.
    pub row_timeout: Duration,
}

impl Default for ReceiverOptions {
    fn default() -> Self {
        Self {
            config: ReceiverConfig::default(),
            row_timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceiverReport {
    pub params: Option<SessionParams>,
    pub outcome: ReconcileOutcome,
}

fn rejected(reason: AbortReason) -> ReconcileOutcome {
    ReconcileOutcome {
        handshake_messages: 2,
        success: false,
        abort: Some(reason),
        ..Default::default()
    }
}

/// Host B: waits for Hello, consumes rows, replies with `Done` or `Abort`.
pub fn run_receiver<L: Link>(
    link: &mut L,
    s_b: &ElementSet,
    opts: ReceiverOptions,
) -> Result<ReceiverReport, TransportError> {
    let hello = match link.recv_timeout(opts.row_timeout) {
        Ok(m) => m,
        Err(TransportError::Timeout) => {
            let _ = link.send(&Message::Abort(AbortReason::Timeout));
            return Ok(ReceiverReport {
                params: None,
                outcome: rejected(AbortReason::Timeout),
            });
        }
        Err(e) => return Err(e),
    };
    let params = match SessionParams::from_hello(&hello) {
        Ok(p) => p,
        Err(_) => {
            let reason = if matches!(hello, Message::Hello { .. }) {
                AbortReason::ParameterRejection
            } else {
                AbortReason::OutOfOrder
            };
            link.send(&Message::Abort(reason))?;
            return Ok(ReceiverReport {
                params: None,
                outcome: rejected(reason),
            });
        }
    };
    let mut state = match ReceiverState::new(s_b, params, opts.config) {
        Ok(s) => s,
        Err(_) => {
            link.send(&Message::Abort(AbortReason::ParameterRejection))?;
            return Ok(ReceiverReport {
                params: Some(params),
                outcome: rejected(AbortReason::ParameterRejection),
            });
        }
    };

    loop {
        let step = match link.recv_timeout(opts.row_timeout) {
            Ok(Message::Row(row)) => state.on_row(row),
            Ok(_) => state.abort(AbortReason::OutOfOrder),
            Err(TransportError::Timeout) => state.abort(AbortReason::Timeout),
            Err(e) => return Err(e),
        };
        if let Some(reply) = step.reply() {
            // The sender may already have hung up after exhausting its rows.
            match link.send(&reply) {
                Ok(()) | Err(TransportError::Disconnected) => {}
                Err(e) => return Err(e),
            }
            let outcome = state.outcome().cloned().expect("terminal step records an outcome");
            return Ok(ReceiverReport {
                params: Some(params),
                outcome,
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionReport {
    pub sender: SenderReport,
    pub receiver: ReceiverReport,
}

/// Runs both hosts on their own threads over an in-process channel link.
pub fn reconcile_in_process(
    s_a: &ElementSet,
    s_b: &ElementSet,
    params: SessionParams,
    sender_opts: SenderOptions,
    receiver_opts: ReceiverOptions,
) -> Result<SessionReport, TransportError> {
    let (mut a, mut b) = channel_pair(8);
    thread::scope(|scope| {
        let tx = scope.spawn(move || run_sender(&mut a, s_a, params, sender_opts));
        let receiver = run_receiver(&mut b, s_b, receiver_opts);
        drop(b);
        let sender = tx.join().expect("sender thread panicked");
        Ok(SessionReport {
            sender: sender?,
            receiver: receiver?,
        })
    })
}

/// Runs both hosts over a loopback TCP connection.
pub fn reconcile_tcp_loopback(
    s_a: &ElementSet,
    s_b: &ElementSet,
    params: SessionParams,
    sender_opts: SenderOptions,
    receiver_opts: ReceiverOptions,
) -> Result<SessionReport, TransportError> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr: SocketAddr = listener.local_addr()?;
    thread::scope(|scope| {
        let tx = scope.spawn(move || -> Result<SenderReport, TransportError> {
            let mut link = TcpLink::connect(addr)?;
            run_sender(&mut link, s_a, params, sender_opts)
        });
        let receiver = TcpLink::accept(&listener).and_then(|mut link| run_receiver(&mut link, s_b, receiver_opts));
        let sender = tx.join().expect("sender thread panicked");
        Ok(SessionReport {
            sender: sender?,
            receiver: receiver?,
        })
    })
}

/// Drives both state machines in lockstep on the calling thread and records
/// every frame the receiver consumed plus its final reply.
pub fn reconcile_lockstep(
    s_a: &ElementSet,
    s_b: &ElementSet,
    params: SessionParams,
    cfg: ReceiverConfig,
) -> Result<(ReconcileOutcome, Vec<Vec<u8>>), TransportError> {
    let mut transcript = Vec::new();
    let hello = params.hello();
    transcript.push(hello.encode()?);
    let params = SessionParams::from_hello(&hello)?;
    let mut tx = SenderState::new(s_a, params)?;
    let mut rx = ReceiverState::new(s_b, params, cfg)?;
    loop {
        let step = match tx.next_row() {
            Some(msg @ Message::Row(row)) => {
                transcript.push(msg.encode()?);
                rx.on_row(row)
            }
            _ => rx.abort(AbortReason::Timeout),
        };
        if let Some(reply) = step.reply() {
            transcript.push(reply.encode()?);
            tx.on_reply(&reply);
            return Ok((rx.outcome().cloned().expect("terminal step"), transcript));
        }
    }
}
