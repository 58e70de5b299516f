//! Socket transport: mutually authenticated encrypted channels over TCP and
//! a full-mesh round barrier that realizes the synchronous model. Each pair
//! runs an ephemeral Diffie-Hellman handshake over the session's group,
//! binds it to the parties' long-term roster keys with Schnorr signatures
//! over the handshake transcript, and seals every frame with an AEAD.
//!
//! Rounds are timeout-driven: a party closes round r by sending a signed
//! heartbeat carrying r; a receiver advances once every live peer's
//! heartbeat for r arrived, or the round deadline expires. A heartbeat with
//! round u32::MAX means the peer has finished the session and will never
//! send again, so later barriers skip it instead of waiting out the clock.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use chacha20poly1305::aead::Aead;
use chacha20poly1305::{ChaCha20Poly1305, Key, KeyInit, Nonce};
use hkdf::Hkdf;
use rand_core::OsRng;
use sha2::{Digest, Sha256};

use psc_core::broadcast::{
    heartbeat_frame, sign_parts, verify_heartbeat, verify_parts, Roster, RoundLinks, SigningKey,
};
use psc_core::group::{Element, Scalar};
use psc_core::wire::{Frame, MsgType, PartyId, PhaseTag, MAX_FRAME};

const MAGIC: &[u8; 8] = b"pscnet1\0";
const DOMAIN_AUTH: &[u8] = b"psc.net.auth";
/// AEAD tag overhead per sealed frame.
const TAG_LEN: usize = 16;
/// Marker round meaning "sender finished; never wait for it again".
const CLOSING_ROUND: u32 = u32::MAX;

#[derive(Debug)]
pub enum NetError {
    /// Could not reach or complete a handshake with a peer.
    ConnectFailed(String),
    /// The round or receive deadline expired.
    Deadline,
    /// A length prefix exceeded the frame cap; rejected before allocation.
    FrameTooLarge,
    /// The peer's handshake signature did not verify against its roster key.
    AuthFailed,
    Io(std::io::Error),
}

impl fmt::Display for NetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetError::ConnectFailed(what) => write!(f, "connect failed: {what}"),
            NetError::Deadline => f.write_str("receive deadline expired"),
            NetError::FrameTooLarge => f.write_str("frame exceeds size cap"),
            NetError::AuthFailed => f.write_str("peer authentication failed"),
            NetError::Io(e) => write!(f, "io: {e}"),
        }
    }
}

impl std::error::Error for NetError {}

impl From<std::io::Error> for NetError {
    fn from(e: std::io::Error) -> NetError {
        if matches!(
            e.kind(),
            std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
        ) {
            NetError::Deadline
        } else {
            NetError::Io(e)
        }
    }
}

fn read_exact_vec(stream: &mut TcpStream, len: usize) -> Result<Vec<u8>, NetError> {
    let mut buf = vec![0u8; len];
    stream.read_exact(&mut buf)?;
    Ok(buf)
}

fn seal_nonce(counter: u64) -> Nonce {
    let mut nonce = [0u8; 12];
    nonce[4..].copy_from_slice(&counter.to_le_bytes());
    Nonce::from(nonce)
}

struct TxHalf {
    stream: TcpStream,
    cipher: ChaCha20Poly1305,
    counter: u64,
}

impl TxHalf {
    fn send(&mut self, plaintext: &[u8]) -> Result<(), NetError> {
        let sealed = self
            .cipher
            .encrypt(&seal_nonce(self.counter), plaintext)
            .map_err(|_| NetError::AuthFailed)?;
        self.counter += 1;
        let mut out = Vec::with_capacity(4 + sealed.len());
        out.extend_from_slice(&(sealed.len() as u32).to_be_bytes());
        out.extend_from_slice(&sealed);
        self.stream.write_all(&out)?;
        Ok(())
    }
}

struct RxHalf {
    stream: TcpStream,
    cipher: ChaCha20Poly1305,
    counter: u64,
}

impl RxHalf {
    fn recv(&mut self) -> Result<Vec<u8>, NetError> {
        let mut prefix = [0u8; 4];
        self.stream.read_exact(&mut prefix)?;
        let len = u32::from_be_bytes(prefix) as usize;
        if len > MAX_FRAME + TAG_LEN {
            return Err(NetError::FrameTooLarge);
        }
        let sealed = read_exact_vec(&mut self.stream, len)?;
        let plain = self
            .cipher
            .decrypt(&seal_nonce(self.counter), sealed.as_slice())
            .map_err(|_| NetError::AuthFailed)?;
        self.counter += 1;
        Ok(plain)
    }
}

/// One authenticated, encrypted channel to a known peer.
pub struct Channel {
    pub peer: PartyId,
    tx: TxHalf,
    rx: RxHalf,
}

impl Channel {
    pub fn send(&mut self, frame: &Frame) -> Result<(), NetError> {
        self.tx.send(&frame.encode())
    }

    pub fn recv_deadline(&mut self, timeout: Duration) -> Result<Frame, NetError> {
        self.rx.stream.set_read_timeout(Some(timeout))?;
        let bytes = self.rx.recv()?;
        Frame::decode(&bytes).map_err(|_| NetError::AuthFailed)
    }

    fn split(self) -> (TxHalf, RxHalf) {
        (self.tx, self.rx)
    }
}

/// Hello message: magic, session, claimed party id, ephemeral public key.
fn hello_bytes(session: &[u8; 16], me: PartyId, eph: &Element) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 16 + 2 + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(session);
    out.extend_from_slice(&me.0.to_be_bytes());
    out.extend_from_slice(&eph.encode());
    out
}

fn read_hello(stream: &mut TcpStream, session: &[u8; 16]) -> Result<(PartyId, Element), NetError> {
    let bytes = read_exact_vec(stream, 8 + 16 + 2 + 32)?;
    if &bytes[..8] != MAGIC || &bytes[8..24] != session {
        return Err(NetError::ConnectFailed("wrong magic or session".to_string()));
    }
    let id = PartyId(u16::from_be_bytes([bytes[24], bytes[25]]));
    let eph = Element::decode(&bytes[26..58]).map_err(|_| NetError::AuthFailed)?;
    Ok((id, eph))
}

/// Both sides derive the directional AEAD keys and sign the transcript with
/// their long-term keys; each verifies the other against the roster before
/// any payload flows.
fn secure(
    stream: TcpStream,
    session: &[u8; 16],
    me: PartyId,
    signing: &SigningKey,
    roster: &Roster,
    peer: PartyId,
    my_eph: (Scalar, Element),
    peer_eph: Element,
    dialer: bool,
) -> Result<Channel, NetError> {
    let (dialer_id, dialer_eph, listener_id, listener_eph) = if dialer {
        (me, my_eph.1, peer, peer_eph)
    } else {
        (peer, peer_eph, me, my_eph.1)
    };
    let mut hasher = Sha256::new();
    hasher.update(MAGIC);
    hasher.update(session);
    hasher.update(dialer_id.0.to_be_bytes());
    hasher.update(dialer_eph.encode());
    hasher.update(listener_id.0.to_be_bytes());
    hasher.update(listener_eph.encode());
    let transcript: [u8; 32] = hasher.finalize().into();

    let shared = peer_eph.exp(&my_eph.0).encode();
    let hk = Hkdf::<Sha256>::new(Some(&transcript), &shared);
    let mut key_d2l = [0u8; 32];
    let mut key_l2d = [0u8; 32];
    hk.expand(b"psc.net.d2l", &mut key_d2l)
        .expect("valid hkdf length");
    hk.expand(b"psc.net.l2d", &mut key_l2d)
        .expect("valid hkdf length");
    let (tx_key, rx_key) = if dialer {
        (key_d2l, key_l2d)
    } else {
        (key_l2d, key_d2l)
    };
    let mut tx = TxHalf {
        stream: stream.try_clone()?,
        cipher: ChaCha20Poly1305::new(Key::from_slice(&tx_key)),
        counter: 0,
    };
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let mut rx = RxHalf {
        stream,
        cipher: ChaCha20Poly1305::new(Key::from_slice(&rx_key)),
        counter: 0,
    };

    let role = [u8::from(dialer)];
    let sig = sign_parts(signing, DOMAIN_AUTH, &[&transcript, &role]);
    tx.send(&sig)?;
    let peer_sig = rx.recv()?;
    let peer_key = roster.key_of(peer).ok_or(NetError::AuthFailed)?;
    let sig_arr: [u8; 64] = peer_sig.as_slice().try_into().map_err(|_| NetError::AuthFailed)?;
    let peer_role = [u8::from(!dialer)];
    if !verify_parts(peer_key, DOMAIN_AUTH, &[&transcript, &peer_role], &sig_arr) {
        return Err(NetError::AuthFailed);
    }
    Ok(Channel { peer, tx, rx })
}

/// Dial a roster peer and complete the mutual handshake.
pub fn net_connect(
    addr: SocketAddr,
    session: &[u8; 16],
    me: PartyId,
    signing: &SigningKey,
    roster: &Roster,
    peer: PartyId,
) -> Result<Channel, NetError> {
    let mut stream = TcpStream::connect(addr)
        .map_err(|e| NetError::ConnectFailed(format!("{peer} at {addr}: {e}")))?;
    stream.set_nodelay(true).ok();
    let eph_secret = Scalar::random(&mut OsRng);
    let eph_public = Element::base_exp(&eph_secret);
    stream.write_all(&hello_bytes(session, me, &eph_public))?;
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let (claimed, peer_eph) = read_hello(&mut stream, session)?;
    if claimed != peer {
        return Err(NetError::AuthFailed);
    }
    secure(
        stream,
        session,
        me,
        signing,
        roster,
        peer,
        (eph_secret, eph_public),
        peer_eph,
        true,
    )
}

/// Accept one inbound connection and complete the mutual handshake. The
/// claimed peer identity is bound by its transcript signature.
pub fn net_accept(
    listener: &TcpListener,
    session: &[u8; 16],
    me: PartyId,
    signing: &SigningKey,
    roster: &Roster,
) -> Result<Channel, NetError> {
    let (mut stream, _) = listener.accept()?;
    stream.set_nodelay(true).ok();
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let (claimed, peer_eph) = read_hello(&mut stream, session)?;
    let eph_secret = Scalar::random(&mut OsRng);
    let eph_public = Element::base_exp(&eph_secret);
    stream.write_all(&hello_bytes(session, me, &eph_public))?;
    secure(
        stream,
        session,
        me,
        signing,
        roster,
        claimed,
        (eph_secret, eph_public),
        peer_eph,
        false,
    )
}

enum Event {
    Frame(Frame),
    Heartbeat(u32),
    Closed,
}

struct PeerState {
    tx: Option<TxHalf>,
    hb_round: u32,
    closed: bool,
    /// Frames received after the peer closed a round; they belong to the
    /// next round's inbox.
    carry: Vec<Frame>,
}

/// Full-mesh transport for one party. Dials every lower-id peer, accepts
/// every higher-id peer, then drives lockstep rounds over the mesh.
pub struct MeshLinks {
    me: PartyId,
    session: [u8; 16],
    signing: SigningKey,
    round: u32,
    timeout: Duration,
    peers: BTreeMap<PartyId, PeerState>,
    events: mpsc::Receiver<(PartyId, Event)>,
}

pub struct NetConfig {
    pub session: [u8; 16],
    pub me: PartyId,
    pub signing: SigningKey,
    pub roster: Roster,
    pub listen: SocketAddr,
    pub peers: Vec<(PartyId, SocketAddr)>,
    pub timeout: Duration,
    pub connect_window: Duration,
}

fn spawn_reader(
    peer: PartyId,
    mut rx: RxHalf,
    session: [u8; 16],
    roster: Roster,
    sink: mpsc::Sender<(PartyId, Event)>,
) -> JoinHandle<()> {
    std::thread::spawn(move || {
        // Block indefinitely; the barrier's deadline lives in the main
        // thread, and a dead peer surfaces as EOF.
        rx.stream.set_read_timeout(None).ok();
        loop {
            let event = match rx.recv() {
                Ok(bytes) => match Frame::decode(&bytes) {
                    Ok(frame) if frame.session == session && frame.sender == peer => {
                        if frame.msg_type == MsgType::Heartbeat {
                            if verify_heartbeat(&roster, &frame).is_ok() {
                                Event::Heartbeat(frame.round)
                            } else {
                                continue;
                            }
                        } else {
                            Event::Frame(frame)
                        }
                    }
                    _ => continue,
                },
                Err(_) => Event::Closed,
            };
            let closed = matches!(event, Event::Closed);
            if sink.send((peer, event)).is_err() || closed {
                return;
            }
        }
    })
}

impl MeshLinks {
    /// Bind, connect the mesh, and authenticate every peer. Fails if any
    /// peer is unreachable within the connect window.
    pub fn establish(cfg: NetConfig) -> Result<MeshLinks, NetError> {
        let deadline = Instant::now() + cfg.connect_window;
        let (event_tx, event_rx) = mpsc::channel();
        let mut peers: BTreeMap<PartyId, PeerState> = BTreeMap::new();

        let inbound: Vec<PartyId> = cfg
            .peers
            .iter()
            .map(|(p, _)| *p)
            .filter(|p| *p > cfg.me)
            .collect();
        let accept_rx = if inbound.is_empty() {
            None
        } else {
            let listener = TcpListener::bind(cfg.listen)
                .map_err(|e| NetError::ConnectFailed(format!("bind {}: {e}", cfg.listen)))?;
            listener.set_nonblocking(true)?;
            let (tx, rx) = mpsc::channel();
            let session = cfg.session;
            let me = cfg.me;
            let signing = cfg.signing.clone();
            let roster = cfg.roster.clone();
            let expected = inbound.clone();
            std::thread::spawn(move || {
                let mut remaining: Vec<PartyId> = expected;
                while !remaining.is_empty() && Instant::now() < deadline {
                    match listener.accept() {
                        Ok((stream, _)) => {
                            stream.set_nonblocking(false).ok();
                            stream.set_nodelay(true).ok();
                            let mut stream = stream;
                            let result = (|| {
                                stream.set_read_timeout(Some(Duration::from_secs(10)))?;
                                let (claimed, peer_eph) = read_hello(&mut stream, &session)?;
                                if !remaining.contains(&claimed) {
                                    return Err(NetError::AuthFailed);
                                }
                                let eph_secret = Scalar::random(&mut OsRng);
                                let eph_public = Element::base_exp(&eph_secret);
                                stream.write_all(&hello_bytes(&session, me, &eph_public))?;
                                secure(
                                    stream,
                                    &session,
                                    me,
                                    &signing,
                                    &roster,
                                    claimed,
                                    (eph_secret, eph_public),
                                    peer_eph,
                                    false,
                                )
                            })();
                            if let Ok(channel) = result {
                                remaining.retain(|p| *p != channel.peer);
                                if tx.send(channel).is_err() {
                                    return;
                                }
                            }
                        }
                        Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                            std::thread::sleep(Duration::from_millis(20));
                        }
                        Err(_) => return,
                    }
                }
            });
            Some(rx)
        };

        // Dial lower-id peers, retrying while they come up.
        for (peer, addr) in cfg.peers.iter().filter(|(p, _)| *p < cfg.me) {
            let channel = loop {
                match net_connect(*addr, &cfg.session, cfg.me, &cfg.signing, &cfg.roster, *peer) {
                    Ok(channel) => break channel,
                    Err(NetError::AuthFailed) => return Err(NetError::AuthFailed),
                    Err(e) => {
                        if Instant::now() >= deadline {
                            return Err(NetError::ConnectFailed(format!(
                                "{peer} at {addr} within window: {e}"
                            )));
                        }
                        std::thread::sleep(Duration::from_millis(50));
                    }
                }
            };
            let (tx, rx) = channel.split();
            spawn_reader(*peer, rx, cfg.session, cfg.roster.clone(), event_tx.clone());
            peers.insert(
                *peer,
                PeerState {
                    tx: Some(tx),
                    hb_round: 0,
                    closed: false,
                    carry: Vec::new(),
                },
            );
        }

        if let Some(accept_rx) = accept_rx {
            while peers.len() < cfg.peers.len() {
                let remaining = deadline.saturating_duration_since(Instant::now());
                if remaining.is_zero() {
                    let missing: Vec<String> = inbound
                        .iter()
                        .filter(|p| !peers.contains_key(p))
                        .map(|p| p.to_string())
                        .collect();
                    return Err(NetError::ConnectFailed(format!(
                        "no connection from {}",
                        missing.join(", ")
                    )));
                }
                match accept_rx.recv_timeout(remaining) {
                    Ok(channel) => {
                        let peer = channel.peer;
                        let (tx, rx) = channel.split();
                        spawn_reader(peer, rx, cfg.session, cfg.roster.clone(), event_tx.clone());
                        peers.insert(
                            peer,
                            PeerState {
                                tx: Some(tx),
                                hb_round: 0,
                                closed: false,
                                carry: Vec::new(),
                            },
                        );
                    }
                    Err(_) => continue,
                }
            }
        }

        Ok(MeshLinks {
            me: cfg.me,
            session: cfg.session,
            signing: cfg.signing,
            round: 1,
            timeout: cfg.timeout,
            peers,
            events: event_rx,
        })
    }

    fn apply(&mut self, peer: PartyId, event: Event, inbox: &mut Vec<Frame>) {
        let Some(state) = self.peers.get_mut(&peer) else {
            return;
        };
        match event {
            Event::Frame(frame) => {
                if state.hb_round >= self.round {
                    state.carry.push(frame);
                } else {
                    inbox.push(frame);
                }
            }
            Event::Heartbeat(round) => {
                state.hb_round = state.hb_round.max(round);
                if round == CLOSING_ROUND {
                    state.closed = true;
                }
            }
            Event::Closed => state.closed = true,
        }
    }

    fn barrier_complete(&self) -> bool {
        self.peers
            .values()
            .all(|p| p.closed || p.hb_round >= self.round)
    }

    /// Announce the end of the session so peers stop waiting on us, then
    /// close the mesh.
    pub fn finish(mut self) {
        let marker = heartbeat_frame(
            &self.signing,
            self.session,
            PhaseTag::Output,
            CLOSING_ROUND,
            self.me,
        );
        let encoded = marker.encode();
        for state in self.peers.values_mut() {
            if let Some(tx) = &mut state.tx {
                tx.send(&encoded).ok();
            }
        }
    }
}

impl RoundLinks for MeshLinks {
    fn send(&mut self, to: PartyId, frame: Frame) {
        let Some(state) = self.peers.get_mut(&to) else {
            return;
        };
        if let Some(tx) = &mut state.tx {
            if tx.send(&frame.encode()).is_err() {
                // Peer gone; its absence surfaces through blame semantics.
                state.tx = None;
            }
        }
    }

    fn next_round(&mut self) -> Vec<Frame> {
        let hb = heartbeat_frame(
            &self.signing,
            self.session,
            PhaseTag::Output,
            self.round,
            self.me,
        );
        let encoded = hb.encode();
        for state in self.peers.values_mut() {
            if let Some(tx) = &mut state.tx {
                if tx.send(&encoded).is_err() {
                    state.tx = None;
                }
            }
        }

        let mut inbox = Vec::new();
        for state in self.peers.values_mut() {
            inbox.append(&mut state.carry);
        }
        let deadline = Instant::now() + self.timeout;
        while !self.barrier_complete() {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                break;
            }
            match self.events.recv_timeout(remaining) {
                Ok((peer, event)) => self.apply(peer, event, &mut inbox),
                Err(mpsc::RecvTimeoutError::Timeout) => break,
                Err(mpsc::RecvTimeoutError::Disconnected) => break,
            }
        }
        self.round += 1;
        inbox
    }
}
