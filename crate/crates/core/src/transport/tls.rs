//! Mutually authenticated TLS channels between peers.
//!
//! Certificates are self-signed; trust is established by pinning the SHA-256
//! fingerprint of every peer's certificate, distributed out of band. After
//! the handshake each channel has a reader thread that decrypts incoming
//! records and hands complete frames to the consumer, so a peer keeps
//! draining its sockets while it is busy writing.

use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use rustls::client::danger::{HandshakeSignatureValid, ServerCertVerified, ServerCertVerifier};
use rustls::crypto::{verify_tls12_signature, verify_tls13_signature, CryptoProvider, WebPkiSupportedAlgorithms};
use rustls::pki_types::pem::PemObject;
use rustls::pki_types::{CertificateDer, PrivateKeyDer, PrivatePkcs8KeyDer, ServerName, UnixTime};
use rustls::server::danger::{ClientCertVerified, ClientCertVerifier};
use rustls::{
    AlertDescription, CertificateError, ClientConfig, ClientConnection, Connection, DigitallySignedStruct,
    DistinguishedName, ServerConfig, ServerConnection, SignatureScheme,
};
use sha2::{Digest, Sha256};

use super::wire::{Hello, MsgType, Role, WireError, WireFrame, VERSION};
use super::{expect_batch, Exchange, RoundBatch, TrafficStats, TransportError};

pub type Fingerprint = [u8; 32];

pub fn fingerprint(cert: &[u8]) -> Fingerprint {
    Sha256::digest(cert).into()
}

pub fn parse_fingerprint(s: &str) -> Option<Fingerprint> {
    let bytes = hex::decode(s.trim().replace(':', "")).ok()?;
    bytes.try_into().ok()
}

fn provider() -> Arc<CryptoProvider> {
    Arc::new(rustls::crypto::ring::default_provider())
}

/// A certificate and its private key.
pub struct Identity {
    cert_pem: String,
    key_pem: String,
    cert: CertificateDer<'static>,
    key: PrivatePkcs8KeyDer<'static>,
}

impl Clone for Identity {
    fn clone(&self) -> Self {
        Identity {
            cert_pem: self.cert_pem.clone(),
            key_pem: self.key_pem.clone(),
            cert: self.cert.clone(),
            key: self.key.clone_key(),
        }
    }
}

impl std::fmt::Debug for Identity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Identity({})", hex::encode(self.fingerprint()))
    }
}

impl Identity {
    /// Fresh self-signed certificate for `name`.
    pub fn generate(name: &str) -> Result<Self, TransportError> {
        let certified = rcgen::generate_simple_self_signed(vec![name.to_string()])
            .map_err(|e| TransportError::Tls(format!("certificate generation: {e}")))?;
        Self::from_pem(certified.cert.pem().as_bytes(), certified.signing_key.serialize_pem().as_bytes())
    }

    pub fn from_pem(cert_pem: &[u8], key_pem: &[u8]) -> Result<Self, TransportError> {
        let bad = |what: &str, e: rustls::pki_types::pem::Error| TransportError::Tls(format!("{what}: {e}"));
        let cert = CertificateDer::from_pem_slice(cert_pem).map_err(|e| bad("certificate", e))?;
        let key = PrivatePkcs8KeyDer::from_pem_slice(key_pem).map_err(|e| bad("private key", e))?;
        Ok(Identity {
            cert_pem: String::from_utf8_lossy(cert_pem).into_owned(),
            key_pem: String::from_utf8_lossy(key_pem).into_owned(),
            cert,
            key,
        })
    }

    pub fn load(cert_path: &Path, key_path: &Path) -> Result<Self, TransportError> {
        Self::from_pem(&std::fs::read(cert_path)?, &std::fs::read(key_path)?)
    }

    pub fn save(&self, cert_path: &Path, key_path: &Path) -> io::Result<()> {
        std::fs::write(cert_path, &self.cert_pem)?;
        std::fs::write(key_path, &self.key_pem)
    }

    pub fn fingerprint(&self) -> Fingerprint {
        fingerprint(&self.cert)
    }

    fn key_der(&self) -> PrivateKeyDer<'static> {
        PrivateKeyDer::Pkcs8(self.key.clone_key())
    }
}

/// Pinned certificate fingerprints of all peers, by role and id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trust {
    pub privacy: Vec<Fingerprint>,
    pub input: Vec<Fingerprint>,
}

impl Trust {
    pub fn lookup(&self, fp: &Fingerprint) -> Option<(Role, usize)> {
        if let Some(i) = self.privacy.iter().position(|f| f == fp) {
            return Some((Role::Privacy, i));
        }
        self.input.iter().position(|f| f == fp).map(|i| (Role::Input, i))
    }

    fn all(&self) -> Vec<Fingerprint> {
        self.privacy.iter().chain(&self.input).copied().collect()
    }
}

#[derive(Debug)]
struct Pinned {
    allowed: Vec<Fingerprint>,
    algs: WebPkiSupportedAlgorithms,
}

impl Pinned {
    fn new(allowed: Vec<Fingerprint>) -> Arc<Self> {
        Arc::new(Pinned { allowed, algs: provider().signature_verification_algorithms })
    }

    fn check(&self, cert: &CertificateDer<'_>) -> Result<(), rustls::Error> {
        if self.allowed.contains(&fingerprint(cert)) {
            Ok(())
        } else {
            Err(rustls::Error::InvalidCertificate(CertificateError::ApplicationVerificationFailure))
        }
    }
}

impl ServerCertVerifier for Pinned {
    fn verify_server_cert(
        &self,
        end_entity: &CertificateDer<'_>,
        _intermediates: &[CertificateDer<'_>],
        _server_name: &ServerName<'_>,
        _ocsp_response: &[u8],
        _now: UnixTime,
    ) -> Result<ServerCertVerified, rustls::Error> {
        self.check(end_entity).map(|_| ServerCertVerified::assertion())
    }

    fn verify_tls12_signature(
        &self,
        message: &[u8],
        cert: &CertificateDer<'_>,
        dss: &DigitallySignedStruct,
    ) -> Result<HandshakeSignatureValid, rustls::Error> {
        verify_tls12_signature(message, cert, dss, &self.algs)
    }

    fn verify_tls13_signature(
        &self,
        message: &[u8],
        cert: &CertificateDer<'_>,
        dss: &DigitallySignedStruct,
    ) -> Result<HandshakeSignatureValid, rustls::Error> {
        verify_tls13_signature(message, cert, dss, &self.algs)
    }

    fn supported_verify_schemes(&self) -> Vec<SignatureScheme> {
        self.algs.supported_schemes()
    }
}

impl ClientCertVerifier for Pinned {
    fn root_hint_subjects(&self) -> &[DistinguishedName] {
        &[]
    }

    fn verify_client_cert(
        &self,
        end_entity: &CertificateDer<'_>,
        _intermediates: &[CertificateDer<'_>],
        _now: UnixTime,
    ) -> Result<ClientCertVerified, rustls::Error> {
        self.check(end_entity).map(|_| ClientCertVerified::assertion())
    }

    fn verify_tls12_signature(
        &self,
        message: &[u8],
        cert: &CertificateDer<'_>,
        dss: &DigitallySignedStruct,
    ) -> Result<HandshakeSignatureValid, rustls::Error> {
        verify_tls12_signature(message, cert, dss, &self.algs)
    }

    fn verify_tls13_signature(
        &self,
        message: &[u8],
        cert: &CertificateDer<'_>,
        dss: &DigitallySignedStruct,
    ) -> Result<HandshakeSignatureValid, rustls::Error> {
        verify_tls13_signature(message, cert, dss, &self.algs)
    }

    fn supported_verify_schemes(&self) -> Vec<SignatureScheme> {
        self.algs.supported_schemes()
    }
}

fn tls_error(e: rustls::Error) -> TransportError {
    use rustls::Error as E;
    match e {
        E::InvalidCertificate(_)
        | E::NoCertificatesPresented
        | E::AlertReceived(
            AlertDescription::BadCertificate
            | AlertDescription::CertificateUnknown
            | AlertDescription::UnknownCA
            | AlertDescription::AccessDenied
            | AlertDescription::CertificateRequired
            | AlertDescription::DecryptError,
        ) => TransportError::AuthFailure(e.to_string()),
        other => TransportError::Tls(other.to_string()),
    }
}

fn io_error(e: io::Error) -> TransportError {
    match e.get_ref().and_then(|inner| inner.downcast_ref::<rustls::Error>()) {
        Some(tls) => tls_error(tls.clone()),
        None => TransportError::Io(e),
    }
}

fn client_config(identity: &Identity, allowed: Vec<Fingerprint>) -> Result<Arc<ClientConfig>, TransportError> {
    let config = ClientConfig::builder_with_provider(provider())
        .with_safe_default_protocol_versions()
        .map_err(tls_error)?
        .dangerous()
        .with_custom_certificate_verifier(Pinned::new(allowed))
        .with_client_auth_cert(vec![identity.cert.clone()], identity.key_der())
        .map_err(tls_error)?;
    Ok(Arc::new(config))
}

fn server_config(identity: &Identity, allowed: Vec<Fingerprint>) -> Result<Arc<ServerConfig>, TransportError> {
    let config = ServerConfig::builder_with_provider(provider())
        .with_safe_default_protocol_versions()
        .map_err(tls_error)?
        .with_client_cert_verifier(Pinned::new(allowed))
        .with_single_cert(vec![identity.cert.clone()], identity.key_der())
        .map_err(tls_error)?;
    Ok(Arc::new(config))
}

type Inbox = Receiver<Result<WireFrame, TransportError>>;

/// One established TLS connection carrying wire frames.
pub struct TlsChannel {
    conn: Arc<Mutex<Connection>>,
    // serializes ciphertext writes; taken before `conn` whenever both are held
    wsock: Arc<Mutex<TcpStream>>,
    inbox: Inbox,
    peer_fp: Fingerprint,
    reader: Option<JoinHandle<()>>,
}

impl TlsChannel {
    fn establish(mut sock: TcpStream, mut conn: Connection, timeout: Duration) -> Result<Self, TransportError> {
        sock.set_nodelay(true)?;
        sock.set_read_timeout(Some(timeout))?;
        sock.set_write_timeout(Some(timeout))?;
        while conn.is_handshaking() {
            conn.complete_io(&mut sock).map_err(io_error)?;
        }
        while conn.wants_write() {
            conn.write_tls(&mut sock).map_err(io_error)?;
        }
        let peer_fp = conn
            .peer_certificates()
            .and_then(|c| c.first())
            .map(|c| fingerprint(c))
            .ok_or_else(|| TransportError::AuthFailure("peer presented no certificate".into()))?;
        sock.set_read_timeout(None)?;
        sock.set_write_timeout(None)?;

        let conn = Arc::new(Mutex::new(conn));
        let wsock = Arc::new(Mutex::new(sock.try_clone()?));
        let (tx, inbox) = unbounded();
        let reader = {
            let conn = Arc::clone(&conn);
            let wsock = Arc::clone(&wsock);
            std::thread::spawn(move || read_loop(sock, conn, wsock, tx))
        };
        Ok(TlsChannel { conn, wsock, inbox, peer_fp, reader: Some(reader) })
    }

    pub fn client(sock: TcpStream, config: Arc<ClientConfig>, timeout: Duration) -> Result<Self, TransportError> {
        let name = ServerName::try_from("privacy-peer").expect("valid name");
        let conn = ClientConnection::new(config, name).map_err(tls_error)?;
        Self::establish(sock, conn.into(), timeout)
    }

    pub fn server(sock: TcpStream, config: Arc<ServerConfig>, timeout: Duration) -> Result<Self, TransportError> {
        let conn = ServerConnection::new(config).map_err(tls_error)?;
        Self::establish(sock, conn.into(), timeout)
    }

    pub fn peer_fingerprint(&self) -> Fingerprint {
        self.peer_fp
    }

    /// Encrypts and writes one frame; returns its encoded length.
    pub fn send(&self, frame: &WireFrame) -> Result<usize, TransportError> {
        let bytes = frame.encode();
        let mut sock = self.wsock.lock().expect("socket lock");
        let mut offset = 0;
        let mut cipher = Vec::new();
        loop {
            {
                let mut conn = self.conn.lock().expect("connection lock");
                if offset < bytes.len() {
                    offset += conn.writer().write(&bytes[offset..])?;
                }
                while conn.wants_write() {
                    conn.write_tls(&mut cipher)?;
                }
            }
            if !cipher.is_empty() {
                sock.write_all(&cipher).map_err(|_| TransportError::PeerDisconnected(usize::MAX))?;
                cipher.clear();
            }
            if offset == bytes.len() {
                return Ok(bytes.len());
            }
        }
    }

    /// Next frame, waiting at most `timeout`.
    pub fn recv(&self, timeout: Duration) -> Result<WireFrame, TransportError> {
        match self.inbox.recv_timeout(timeout) {
            Ok(r) => r,
            Err(RecvTimeoutError::Timeout) => Err(TransportError::Timeout("frame from peer".into())),
            Err(RecvTimeoutError::Disconnected) => Err(TransportError::PeerDisconnected(usize::MAX)),
        }
    }

    /// Frame of the given type; anything else is a protocol violation.
    pub fn recv_type(&self, msg_type: MsgType, timeout: Duration) -> Result<WireFrame, TransportError> {
        let frame = self.recv(timeout)?;
        if frame.msg_type != msg_type {
            return Err(TransportError::DesyncDetected {
                peer: usize::MAX,
                window: frame.window_id,
                expected: 0,
                got: format!("{:?} instead of {msg_type:?}", frame.msg_type),
            });
        }
        Ok(frame)
    }
}

impl Drop for TlsChannel {
    fn drop(&mut self) {
        if let Ok(sock) = self.wsock.lock() {
            let _ = sock.shutdown(Shutdown::Both);
        }
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
    }
}

fn read_loop(
    mut sock: TcpStream,
    conn: Arc<Mutex<Connection>>,
    wsock: Arc<Mutex<TcpStream>>,
    tx: Sender<Result<WireFrame, TransportError>>,
) {
    let mut buf = vec![0u8; 64 * 1024];
    let mut plain = vec![0u8; 64 * 1024];
    let mut pending: Vec<u8> = Vec::new();
    // the handshake may already have buffered the first records
    let mut first = true;
    loop {
        let n = if std::mem::take(&mut first) {
            0
        } else {
            match sock.read(&mut buf) {
                Ok(0) => {
                    let _ = tx.send(Err(TransportError::PeerDisconnected(usize::MAX)));
                    return;
                }
                Ok(n) => n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(_) => {
                    let _ = tx.send(Err(TransportError::PeerDisconnected(usize::MAX)));
                    return;
                }
            }
        };
        let mut closed = false;
        let wants_write = {
            let mut conn = conn.lock().expect("connection lock");
            let mut rd = &buf[..n];
            loop {
                if !rd.is_empty() {
                    if let Err(e) = conn.read_tls(&mut rd) {
                        let _ = tx.send(Err(TransportError::Io(e)));
                        return;
                    }
                    if let Err(e) = conn.process_new_packets() {
                        let _ = tx.send(Err(tls_error(e)));
                        return;
                    }
                }
                loop {
                    match conn.reader().read(&mut plain) {
                        Ok(0) => {
                            closed = true;
                            break;
                        }
                        Ok(k) => pending.extend_from_slice(&plain[..k]),
                        Err(e) if e.kind() == io::ErrorKind::WouldBlock => break,
                        Err(_) => {
                            closed = true;
                            break;
                        }
                    }
                }
                if rd.is_empty() {
                    break;
                }
            }
            conn.wants_write()
        };
        if wants_write {
            // a writer holding the socket will flush these records itself
            if let Ok(mut sock) = wsock.try_lock() {
                let mut cipher = Vec::new();
                {
                    let mut conn = conn.lock().expect("connection lock");
                    while conn.wants_write() {
                        if conn.write_tls(&mut cipher).is_err() {
                            break;
                        }
                    }
                }
                let _ = sock.write_all(&cipher);
            }
        }
        let mut used = 0;
        loop {
            match WireFrame::decode_prefix(&pending[used..]) {
                Ok((frame, len)) => {
                    used += len;
                    if tx.send(Ok(frame)).is_err() {
                        return;
                    }
                }
                Err(WireError::Truncated { .. }) => break,
                Err(e) => {
                    let _ = tx.send(Err(e.into()));
                    return;
                }
            }
        }
        pending.drain(..used);
        if closed {
            let _ = tx.send(Err(TransportError::PeerDisconnected(usize::MAX)));
            return;
        }
    }
}

/// What a peer needs to open and accept authenticated connections.
pub struct Session {
    pub identity: Identity,
    pub trust: Trust,
    /// Our own HELLO; the remote one must agree on everything but role and id.
    pub hello: Hello,
    pub timeout: Duration,
    server: Arc<ServerConfig>,
}

impl Session {
    pub fn new(identity: Identity, trust: Trust, hello: Hello, timeout: Duration) -> Result<Arc<Self>, TransportError> {
        let server = server_config(&identity, trust.all())?;
        Ok(Arc::new(Session { identity, trust, hello, timeout, server }))
    }
}

/// An authenticated connection together with the remote HELLO.
pub struct Link {
    pub role: Role,
    pub id: usize,
    pub hello: Hello,
    pub channel: TlsChannel,
}

/// Compares a remote HELLO with ours.
pub fn check_hello(ours: &Hello, theirs: &Hello, peer: usize) -> Result<(), TransportError> {
    if theirs.p != ours.p {
        return Err(TransportError::PrimeMismatch { peer, ours: ours.p, theirs: theirs.p });
    }
    let mismatch = |what: &str| Err(TransportError::ConfigMismatch { peer, what: what.to_string() });
    if theirs.m != ours.m {
        return mismatch("privacy peer count");
    }
    if theirs.n != ours.n {
        return mismatch("input peer count");
    }
    if theirs.window_secs != ours.window_secs {
        return mismatch("window length");
    }
    if theirs.protocol != ours.protocol {
        return mismatch("protocol");
    }
    if theirs.config_hash != ours.config_hash {
        return mismatch("configuration hash");
    }
    Ok(())
}

fn read_hello(channel: &TlsChannel, timeout: Duration, peer: usize) -> Result<Hello, TransportError> {
    let frame = channel.recv(timeout)?;
    if frame.msg_type != MsgType::Hello {
        return Err(TransportError::DesyncDetected {
            peer,
            window: frame.window_id,
            expected: 0,
            got: format!("{:?} before HELLO", frame.msg_type),
        });
    }
    Hello::from_frame(&frame).ok_or_else(|| TransportError::ConfigMismatch { peer, what: "malformed HELLO".into() })
}

/// Connects to `addr`, which must present the pinned certificate of
/// `(role, id)`. Connection refusals are retried until the session timeout.
pub fn dial(session: &Session, addr: &str, role: Role, id: usize) -> Result<Link, TransportError> {
    let expected = match role {
        Role::Privacy => session.trust.privacy.get(id),
        Role::Input => session.trust.input.get(id),
    }
    .copied()
    .ok_or_else(|| TransportError::AuthFailure(format!("no pinned certificate for {role:?} peer {id}")))?;
    let deadline = Instant::now() + session.timeout;
    let sock = loop {
        let attempt = addr
            .to_socket_addrs()
            .and_then(|mut it| it.next().ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, "no address")))
            .and_then(|a| TcpStream::connect_timeout(&a, session.timeout));
        match attempt {
            Ok(s) => break s,
            Err(e) if Instant::now() < deadline && e.kind() != io::ErrorKind::NotFound => {
                std::thread::sleep(Duration::from_millis(50));
            }
            Err(e) => return Err(TransportError::Timeout(format!("connecting to {addr}: {e}"))),
        }
    };
    let config = client_config(&session.identity, vec![expected])?;
    let channel = TlsChannel::client(sock, config, session.timeout)?;
    channel.send(&session.hello.to_frame())?;
    let theirs = read_hello(&channel, session.timeout, id)?;
    if theirs.role != role || theirs.peer_id as usize != id {
        return Err(TransportError::AuthFailure(format!(
            "{addr} introduced itself as {:?} peer {}",
            theirs.role, theirs.peer_id
        )));
    }
    check_hello(&session.hello, &theirs, id)?;
    Ok(Link { role, id, hello: theirs, channel })
}

/// Server side of [`dial`]: handshake, identify the client by its pinned
/// certificate, swap HELLOs.
pub fn accept(session: &Session, sock: TcpStream) -> Result<Link, TransportError> {
    let channel = TlsChannel::server(sock, Arc::clone(&session.server), session.timeout)?;
    let (role, id) = session
        .trust
        .lookup(&channel.peer_fingerprint())
        .ok_or_else(|| TransportError::AuthFailure("unknown client certificate".into()))?;
    let theirs = read_hello(&channel, session.timeout, id)?;
    channel.send(&session.hello.to_frame())?;
    if theirs.role != role || theirs.peer_id as usize != id {
        return Err(TransportError::AuthFailure(format!(
            "certificate of {role:?} peer {id} used by {:?} peer {}",
            theirs.role, theirs.peer_id
        )));
    }
    check_hello(&session.hello, &theirs, id)?;
    Ok(Link { role, id, hello: theirs, channel })
}

/// Accepts connections on `listener` in the background; every completed
/// (or failed) handshake is delivered on the returned channel.
pub fn spawn_acceptor(session: Arc<Session>, listener: TcpListener) -> Receiver<Result<Link, TransportError>> {
    let (tx, rx) = unbounded();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let session = Arc::clone(&session);
            let tx = tx.clone();
            std::thread::spawn(move || {
                let _ = tx.send(accept(&session, stream));
            });
        }
    });
    rx
}

/// Full mesh among the privacy peers.
pub struct TlsMesh {
    me: usize,
    m: usize,
    links: Vec<Option<TlsChannel>>,
    timeout: Duration,
    stats: TrafficStats,
}

/// Builds the privacy peer mesh: dial every lower id, wait for every higher
/// id on `accepted`. Input peer connections arriving meanwhile are moved to
/// `inputs`; failed inbound handshakes are logged and skipped.
pub fn connect_mesh(
    session: &Session,
    addrs: &[String],
    accepted: &Receiver<Result<Link, TransportError>>,
    inputs: &mut Vec<Link>,
) -> Result<TlsMesh, TransportError> {
    let me = session.hello.peer_id as usize;
    let m = addrs.len();
    let mut links: Vec<Option<TlsChannel>> = (0..m).map(|_| None).collect();
    for (j, addr) in addrs.iter().enumerate().take(me) {
        links[j] = Some(dial(session, addr, Role::Privacy, j)?.channel);
    }
    let deadline = Instant::now() + session.timeout;
    while links.iter().enumerate().any(|(j, l)| j > me && l.is_none()) {
        let left = deadline.saturating_duration_since(Instant::now());
        let link = match accepted.recv_timeout(left) {
            Ok(Ok(link)) => link,
            Ok(Err(e)) => {
                log::warn!("rejected inbound connection: {e}");
                continue;
            }
            Err(_) => {
                let missing: Vec<usize> = (me + 1..m).filter(|&j| links[j].is_none()).collect();
                return Err(TransportError::Timeout(format!("privacy peers {missing:?} did not connect")));
            }
        };
        match link.role {
            Role::Input => inputs.push(link),
            Role::Privacy if link.id > me && link.id < m && links[link.id].is_none() => {
                links[link.id] = Some(link.channel);
            }
            Role::Privacy => log::warn!("ignoring unexpected connection from privacy peer {}", link.id),
        }
    }
    log::info!("privacy peer {me}: mesh of {m} established");
    Ok(TlsMesh { me, m, links, timeout: session.timeout, stats: TrafficStats::default() })
}

impl TlsMesh {
    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    fn link(&self, peer: usize) -> &TlsChannel {
        self.links[peer].as_ref().expect("link to every other peer")
    }

    pub fn send_to(&mut self, peer: usize, frame: &WireFrame) -> Result<(), TransportError> {
        let len = self.link(peer).send(frame).map_err(|e| with_peer(e, peer))?;
        self.stats.frames_sent += 1;
        self.stats.bytes_sent += len as u64;
        Ok(())
    }

    pub fn recv_from(&mut self, peer: usize) -> Result<WireFrame, TransportError> {
        let frame = self.link(peer).recv(self.timeout).map_err(|e| with_peer(e, peer))?;
        self.stats.frames_received += 1;
        self.stats.bytes_received += frame.encoded_len() as u64;
        Ok(frame)
    }
}

fn with_peer(e: TransportError, peer: usize) -> TransportError {
    match e {
        TransportError::PeerDisconnected(_) => TransportError::PeerDisconnected(peer),
        TransportError::DesyncDetected { window, expected, got, .. } => {
            TransportError::DesyncDetected { peer, window, expected, got }
        }
        other => other,
    }
}

impl Exchange for TlsMesh {
    fn me(&self) -> usize {
        self.me
    }

    fn peers(&self) -> usize {
        self.m
    }

    fn exchange(&mut self, window: u64, mut outgoing: Vec<RoundBatch>) -> Result<Vec<RoundBatch>, TransportError> {
        assert_eq!(outgoing.len(), self.m);
        let round = outgoing[self.me].round;
        for (to, batch) in outgoing.iter().enumerate() {
            if to != self.me {
                self.send_to(to, &batch.to_frame(window))?;
            }
        }
        let mut incoming = Vec::with_capacity(self.m);
        for (from, own) in outgoing.iter_mut().enumerate() {
            if from == self.me {
                incoming.push(std::mem::take(own));
                continue;
            }
            let frame = self.recv_from(from)?;
            expect_batch(&frame, from, window, round)?;
            incoming.push(RoundBatch::from_frame(frame));
        }
        Ok(incoming)
    }

    fn stats(&self) -> TrafficStats {
        self.stats
    }
}

/// HELLO for `role`/`id` with the given session parameters.
#[allow(clippy::too_many_arguments)]
pub fn hello(
    role: Role,
    id: usize,
    p: u64,
    m: usize,
    n: usize,
    window_secs: u64,
    protocol: u8,
    config_hash: [u8; 32],
) -> Hello {
    Hello { role, peer_id: id as u32, p, m: m as u32, n: n as u32, window_secs, protocol, config_hash }
}

/// Protocol version spoken by this build.
pub const PROTOCOL_VERSION: u8 = VERSION;
