//! Reliable ordered message links: in-process channels or loopback TCP streams.

use std::io::{BufReader, BufWriter, Write};
use std::net::{Ipv4Addr, SocketAddr, TcpListener, TcpStream};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, Sender};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result, WireError};
use crate::wire::{read_frame, write_frame, Message};

/// Sending half of a link.
pub trait Outbound: Send {
    fn send(&mut self, msg: &Message) -> Result<()>;
}

/// Receiving half of a link. `Ok(None)` means the peer closed the link.
pub trait Inbound: Send {
    fn recv(&mut self) -> Result<Option<Message>>;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    #[default]
    Inproc,
    Socket,
}

impl FromStr for TransportKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "inproc" => Ok(TransportKind::Inproc),
            "socket" => Ok(TransportKind::Socket),
            other => Err(format!("unknown transport `{other}` (expected inproc or socket)")),
        }
    }
}

pub struct ChannelOutbound(Sender<Message>);
pub struct ChannelInbound(Receiver<Message>);

impl Outbound for ChannelOutbound {
    fn send(&mut self, msg: &Message) -> Result<()> {
        self.0.send(msg.clone()).map_err(|_| PipelineError::Disconnected("channel receiver".into()))
    }
}

impl Inbound for ChannelInbound {
    fn recv(&mut self) -> Result<Option<Message>> {
        Ok(self.0.recv().ok())
    }
}

pub fn channel_link() -> (ChannelOutbound, ChannelInbound) {
    let (tx, rx) = mpsc::channel();
    (ChannelOutbound(tx), ChannelInbound(rx))
}

pub struct SocketOutbound(BufWriter<TcpStream>);
pub struct SocketInbound(BufReader<TcpStream>);

impl SocketOutbound {
    pub fn connect(addr: SocketAddr) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(WireError::from)?;
        stream.set_nodelay(true).map_err(WireError::from)?;
        Ok(Self(BufWriter::new(stream)))
    }
}

impl SocketInbound {
    /// Blocks until one peer connects to `listener`.
    pub fn accept(listener: &TcpListener) -> Result<Self> {
        let (stream, _) = listener.accept().map_err(WireError::from)?;
        Ok(Self(BufReader::new(stream)))
    }
}

impl Outbound for SocketOutbound {
    fn send(&mut self, msg: &Message) -> Result<()> {
        write_frame(&mut self.0, msg).map_err(WireError::from)?;
        self.0.flush().map_err(WireError::from)?;
        Ok(())
    }
}

impl Inbound for SocketInbound {
    fn recv(&mut self) -> Result<Option<Message>> {
        Ok(read_frame(&mut self.0)?)
    }
}

/// Loopback TCP link. Port 0 picks an ephemeral port.
pub fn socket_link(port: u16) -> Result<(SocketOutbound, SocketInbound)> {
    let listener = TcpListener::bind((Ipv4Addr::LOCALHOST, port)).map_err(WireError::from)?;
    let addr = listener.local_addr().map_err(WireError::from)?;
    let tx = SocketOutbound::connect(addr)?;
    let rx = SocketInbound::accept(&listener)?;
    Ok((tx, rx))
}

pub fn link(kind: TransportKind, port: u16) -> Result<(Box<dyn Outbound>, Box<dyn Inbound>)> {
    Ok(match kind {
        TransportKind::Inproc => {
            let (tx, rx) = channel_link();
            (Box::new(tx), Box::new(rx))
        }
        TransportKind::Socket => {
            let (tx, rx) = socket_link(port)?;
            (Box::new(tx), Box::new(rx))
        }
    })
}

/// Holds every message back for a fixed wall-clock delay after it was read from the
/// underlying link. A reader thread stamps messages so the delay does not accumulate.
pub struct DelayedInbound {
    rx: Receiver<(Instant, Result<Option<Message>>)>,
    delay: Duration,
}

impl DelayedInbound {
    pub fn new(mut inner: Box<dyn Inbound>, delay: Duration) -> Self {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || loop {
            let item = inner.recv();
            let done = !matches!(item, Ok(Some(_)));
            if tx.send((Instant::now(), item)).is_err() || done {
                break;
            }
        });
        Self { rx, delay }
    }
}

impl Inbound for DelayedInbound {
    fn recv(&mut self) -> Result<Option<Message>> {
        match self.rx.recv() {
            Ok((stamp, item)) => {
                let due = stamp + self.delay;
                let now = Instant::now();
                if due > now {
                    thread::sleep(due - now);
                }
                item
            }
            Err(_) => Ok(None),
        }
    }
}
