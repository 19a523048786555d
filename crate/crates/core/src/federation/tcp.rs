use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::wire::{read_frame, write_frame, WireError};
use super::{ClientNode, FederationError, Transport, WireMessage};
use crate::svm::GlobalModel;

struct Peer {
    addr: SocketAddr,
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    /// Client index, learned from the first reply.
    client: Option<usize>,
}

impl Peer {
    fn name(&self) -> String {
        match self.client {
            Some(g) => format!("client {g} ({})", self.addr),
            None => format!("client at {}", self.addr),
        }
    }

    fn wire_err(&self, source: WireError) -> FederationError {
        FederationError::Wire {
            peer: self.name(),
            source,
        }
    }
}

/// Server end of the TCP transport: accepts exactly `clients` connections.
pub struct TcpServerTransport {
    peers: Vec<Peer>,
    max_frame: usize,
}

impl TcpServerTransport {
    pub fn accept(listener: &TcpListener, clients: usize, max_frame: usize) -> Result<Self, FederationError> {
        let mut peers = Vec::with_capacity(clients);
        while peers.len() < clients {
            let (stream, addr) = listener.accept().map_err(|e| FederationError::Wire {
                peer: "listener".into(),
                source: e.into(),
            })?;
            stream.set_nodelay(true).ok();
            let reader = stream.try_clone().map_err(|e| FederationError::Wire {
                peer: addr.to_string(),
                source: e.into(),
            })?;
            log::info!("accepted {addr} ({}/{clients})", peers.len() + 1);
            peers.push(Peer {
                addr,
                reader: BufReader::new(reader),
                writer: BufWriter::new(stream),
                client: None,
            });
        }
        Ok(Self { peers, max_frame })
    }

    pub fn bind(addr: impl ToSocketAddrs, clients: usize, max_frame: usize) -> Result<Self, FederationError> {
        let listener = TcpListener::bind(addr).map_err(|e| FederationError::Wire {
            peer: "listener".into(),
            source: e.into(),
        })?;
        Self::accept(&listener, clients, max_frame)
    }

    fn send_all(&mut self, msg: &WireMessage) -> Result<(), FederationError> {
        for p in &mut self.peers {
            write_frame(&mut p.writer, msg, self.max_frame).map_err(|e| p.wire_err(e))?;
        }
        Ok(())
    }
}

impl Transport for TcpServerTransport {
    fn num_clients(&self) -> usize {
        self.peers.len()
    }

    fn round(&mut self, t: usize, w: &GlobalModel) -> Result<Vec<WireMessage>, FederationError> {
        self.send_all(&WireMessage::RoundStart {
            t: t as u64,
            w: w.w.clone(),
        })?;
        let mut replies: Vec<Option<WireMessage>> = vec![None; self.peers.len()];
        for p in &mut self.peers {
            let msg = read_frame(&mut p.reader, self.max_frame).map_err(|e| p.wire_err(e))?;
            let g = match &msg {
                WireMessage::SmResult { g, .. } | WireMessage::AdmmResult { g, .. } => *g as usize,
                other => return Err(FederationError::Protocol(format!("{} sent {other:?}", p.name()))),
            };
            if p.client.is_some_and(|known| known != g) {
                return Err(FederationError::Protocol(format!("{} now claims to be client {g}", p.name())));
            }
            p.client = Some(g);
            let slot = replies
                .get_mut(g)
                .ok_or_else(|| FederationError::Protocol(format!("{} has an out-of-range index", p.name())))?;
            if slot.replace(msg).is_some() {
                return Err(FederationError::Protocol(format!("two connections claim client {g}")));
            }
        }
        Ok(replies.into_iter().map(|r| r.expect("every slot filled")).collect())
    }

    fn broadcast(&mut self, t: usize, w: &GlobalModel) -> Result<(), FederationError> {
        self.send_all(&WireMessage::Broadcast {
            t: t as u64,
            w: w.w.clone(),
        })
    }

    fn shutdown(&mut self) -> Result<(), FederationError> {
        // best effort: a peer that already went away does not matter here
        for p in &mut self.peers {
            if let Err(e) = write_frame(&mut p.writer, &WireMessage::Shutdown, self.max_frame) {
                log::warn!("{}: {e}", p.name());
            }
        }
        Ok(())
    }
}

/// Connects to a server (retrying for up to `patience`) and serves `node`
/// until `Shutdown`. A failing local step closes the connection, which the
/// server reports as a lost client.
pub fn run_tcp_client(
    addr: impl ToSocketAddrs,
    node: &mut ClientNode,
    max_frame: usize,
    patience: Duration,
) -> Result<(), FederationError> {
    let addrs: Vec<SocketAddr> = addr
        .to_socket_addrs()
        .map_err(|e| FederationError::Wire {
            peer: "server".into(),
            source: e.into(),
        })?
        .collect();
    let deadline = std::time::Instant::now() + patience;
    let stream = loop {
        match TcpStream::connect(&addrs[..]) {
            Ok(s) => break s,
            Err(e) if std::time::Instant::now() >= deadline => {
                return Err(FederationError::Wire {
                    peer: format!("{addrs:?}"),
                    source: e.into(),
                })
            }
            Err(_) => std::thread::sleep(Duration::from_millis(20)),
        }
    };
    stream.set_nodelay(true).ok();
    let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_else(|_| "server".into());
    let wire = |source: WireError| FederationError::Wire {
        peer: peer.clone(),
        source,
    };
    let mut reader = BufReader::new(stream.try_clone().map_err(|e| wire(e.into()))?);
    let mut writer = BufWriter::new(stream);
    while !node.is_finished() {
        let msg = read_frame(&mut reader, max_frame).map_err(wire)?;
        let reply = node.handle(&msg).map_err(|source| FederationError::Client { g: node.index(), source })?;
        if let Some(r) = reply {
            write_frame(&mut writer, &r, max_frame).map_err(wire)?;
        }
    }
    Ok(())
}
