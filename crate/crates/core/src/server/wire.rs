//! Line-oriented TCP protocol.
//!
//! A request is one line: `VERB arg...`, each argument radix-64 encoded
//! without line breaks (`=` stands for an empty argument). The reply is one
//! line, `OK <payload>` or `ERR <code> <detail>`. Binary payloads are the
//! framed encodings of the corresponding model types.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::codec::radix64;
use crate::crypto::{KeyRole, PublicKey};
use crate::model::{EvidenceRecord, MessageId, PrincipalId, Receipt, TransmissionEnvelope};

use super::{decode_items, encode_items, Delivery, FetchedMessage, ForwardedEvidence, InboxEntry, Server, ServerError};

/// Upper bound on one request or response line.
pub const MAX_LINE: usize = 64 * 1024 * 1024;

const IO_TIMEOUT: Duration = Duration::from_secs(60);

fn encode_arg(bytes: &[u8]) -> String {
    if bytes.is_empty() {
        "=".to_owned()
    } else {
        radix64::encode(bytes)
    }
}

fn decode_arg(text: &str) -> Result<Vec<u8>, ServerError> {
    if text == "=" {
        return Ok(Vec::new());
    }
    radix64::decode(text).map_err(|e| ServerError::BadRequest(format!("argument encoding: {e}")))
}

fn text_arg(bytes: Vec<u8>) -> Result<String, ServerError> {
    String::from_utf8(bytes).map_err(|_| ServerError::BadRequest("argument is not UTF-8".into()))
}

pub fn encode_request(verb: &str, args: &[&[u8]]) -> String {
    let mut line = verb.to_owned();
    for arg in args {
        line.push(' ');
        line.push_str(&encode_arg(arg));
    }
    line
}

fn ok(payload: &[u8]) -> String {
    format!("OK {}", encode_arg(payload))
}

fn err(e: &ServerError) -> String {
    // Details are single-line ASCII so the reply stays one line.
    let detail: String = e
        .detail()
        .chars()
        .map(|c| if c.is_ascii_graphic() || c == ' ' { c } else { '?' })
        .collect();
    format!("ERR {} {}", e.code(), detail).trim_end().to_owned()
}

/// Handles one request line against any delivery backend.
pub fn dispatch<D: Delivery + ?Sized>(backend: &D, line: &str) -> String {
    match handle(backend, line) {
        Ok(payload) => ok(&payload),
        Err(e) => err(&e),
    }
}

fn handle<D: Delivery + ?Sized>(backend: &D, line: &str) -> Result<Vec<u8>, ServerError> {
    let mut parts = line.trim_end_matches(['\r', '\n']).split(' ');
    let verb = parts.next().unwrap_or_default();
    let args = parts.map(decode_arg).collect::<Result<Vec<_>, _>>()?;
    let arity = |n: usize| -> Result<(), ServerError> {
        if args.len() == n {
            Ok(())
        } else {
            Err(ServerError::BadRequest(format!(
                "{verb} takes {n} arguments, got {}",
                args.len()
            )))
        }
    };
    let text = |i: usize| text_arg(args[i].clone());
    let id = |i: usize| -> Result<MessageId, ServerError> { Ok(MessageId::new(&text(i)?)?) };

    match verb {
        "REGISTER" => {
            arity(4)?;
            let signing = PublicKey::from_bytes(&args[2]).map_err(|e| ServerError::BadRequest(e.to_string()))?;
            let encryption = PublicKey::from_bytes(&args[3]).map_err(|e| ServerError::BadRequest(e.to_string()))?;
            backend.register(&text(0)?, &text(1)?, &signing, &encryption)?;
            Ok(Vec::new())
        }
        "LOGIN" => {
            arity(2)?;
            Ok(backend.login(&text(0)?, &text(1)?)?.into_bytes())
        }
        "UPLOAD" => {
            arity(3)?;
            let envelope = TransmissionEnvelope::from_bytes(&args[1])?;
            let token = text(2)?;
            let idempotency = (!token.is_empty()).then_some(token.as_str());
            Ok(backend
                .upload(&text(0)?, &envelope, idempotency)?
                .as_str()
                .as_bytes()
                .to_vec())
        }
        "INBOX" => {
            arity(1)?;
            Ok(encode_items(&backend.inbox(&text(0)?)?, InboxEntry::to_bytes))
        }
        "FETCH" => {
            arity(2)?;
            Ok(backend.fetch(&text(0)?, &id(1)?)?.to_bytes())
        }
        "RECEIPT" => {
            arity(3)?;
            let receipt = Receipt::from_bytes(&args[2])?;
            backend.submit_receipt(&text(0)?, &id(1)?, &receipt)
        }
        "EVIDENCE" => {
            arity(1)?;
            Ok(encode_items(
                &backend.fetch_evidence(&text(0)?)?,
                ForwardedEvidence::to_bytes,
            ))
        }
        "ACK" => {
            arity(2)?;
            backend.ack(&text(0)?, &id(1)?)?;
            Ok(Vec::new())
        }
        "PUBKEY" => {
            arity(2)?;
            let role: KeyRole = text(1)?
                .parse()
                .map_err(|_| ServerError::BadRequest("unknown key role".into()))?;
            Ok(backend.pubkey(&text(0)?, role)?.to_bytes())
        }
        "DISPUTE" => {
            arity(2)?;
            Ok(encode_items(
                &backend.dispute(&text(0)?, &id(1)?)?,
                EvidenceRecord::to_bytes,
            ))
        }
        "DELETE" => {
            arity(2)?;
            backend.delete(&text(0)?, &id(1)?)?;
            Ok(Vec::new())
        }
        other => Err(ServerError::BadRequest(format!("unknown verb {other:?}"))),
    }
}

/// Splits a reply line into its payload or the error it carries.
pub fn parse_reply(reply: &str) -> Result<Vec<u8>, ServerError> {
    if let Some(payload) = reply.strip_prefix("OK ") {
        return decode_arg(payload).map_err(|e| ServerError::Unavailable(format!("bad reply payload: {e}")));
    }
    if let Some(rest) = reply.strip_prefix("ERR ") {
        let (code, detail) = rest.split_once(' ').unwrap_or((rest, ""));
        return Err(ServerError::from_code(code, detail)
            .unwrap_or_else(|| ServerError::Unavailable(format!("unknown error code {code}"))));
    }
    Err(ServerError::Unavailable(format!(
        "malformed reply {:?}",
        reply.chars().take(40).collect::<String>()
    )))
}

/// Decodes one request argument or reply payload.
pub fn decode_field(text: &str) -> Result<Vec<u8>, ServerError> {
    decode_arg(text)
}

/// Encodes a reply carrying `payload`.
pub fn ok_reply(payload: &[u8]) -> String {
    ok(payload)
}

fn read_line_limited(reader: &mut impl BufRead) -> io::Result<Option<String>> {
    let mut buf = Vec::new();
    let n = reader.take(MAX_LINE as u64 + 1).read_until(b'\n', &mut buf)?;
    if n == 0 {
        return Ok(None);
    }
    if buf.len() > MAX_LINE {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "line too long"));
    }
    String::from_utf8(buf)
        .map(Some)
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "line is not UTF-8"))
}

fn serve_connection(server: &Server, stream: TcpStream) -> io::Result<()> {
    stream.set_read_timeout(Some(IO_TIMEOUT))?;
    stream.set_write_timeout(Some(IO_TIMEOUT))?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    while let Some(line) = read_line_limited(&mut reader)? {
        let reply = dispatch(server, &line);
        writer.write_all(reply.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

/// A running listener. Dropping the handle does not stop it; call
/// [`shutdown`](Self::shutdown).
#[derive(Debug)]
pub struct ListenerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ListenerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the accept loop exits.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds and serves in a background thread, one thread per connection.
pub fn spawn(server: Arc<Server>, addr: impl ToSocketAddrs) -> io::Result<ListenerHandle> {
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = stop.clone();
    let thread = thread::spawn(move || {
        for conn in listener.incoming() {
            if stop_flag.load(Ordering::SeqCst) {
                break;
            }
            let stream = match conn {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let server = server.clone();
            thread::spawn(move || {
                let peer = stream.peer_addr().ok();
                if let Err(e) = serve_connection(&server, stream) {
                    log::debug!("connection {peer:?} ended: {e}");
                }
            });
        }
    });
    log::info!("listening on {addr}");
    Ok(ListenerHandle {
        addr,
        stop,
        thread: Some(thread),
    })
}

/// Carries one request line to a server and returns its reply line.
pub trait Transport {
    fn exchange(&self, request: &str) -> Result<String, ServerError>;
}

/// TCP transport. Opens one connection per request.
#[derive(Debug, Clone)]
pub struct TcpTransport {
    addr: String,
}

impl Transport for TcpTransport {
    fn exchange(&self, request: &str) -> Result<String, ServerError> {
        let unavailable = |e: io::Error| ServerError::Unavailable(format!("{}: {e}", self.addr));
        let stream = TcpStream::connect(&self.addr).map_err(unavailable)?;
        stream.set_read_timeout(Some(IO_TIMEOUT)).map_err(unavailable)?;
        let mut writer = stream.try_clone().map_err(unavailable)?;
        writer.write_all(request.as_bytes()).map_err(unavailable)?;
        writer.write_all(b"\n").map_err(unavailable)?;
        writer.flush().map_err(unavailable)?;
        let _ = writer.shutdown(Shutdown::Write);
        let reply = read_line_limited(&mut BufReader::new(stream))
            .map_err(unavailable)?
            .ok_or_else(|| ServerError::Unavailable("connection closed without a reply".into()))?;
        Ok(reply.trim_end_matches(['\r', '\n']).to_owned())
    }
}

/// Client side of the protocol over any transport.
#[derive(Debug, Clone)]
pub struct LineClient<T> {
    transport: T,
}

/// Client side of the protocol over TCP.
pub type WireClient = LineClient<TcpTransport>;

impl WireClient {
    pub fn new(addr: impl Into<String>) -> Self {
        Self::over(TcpTransport { addr: addr.into() })
    }

    pub fn addr(&self) -> &str {
        &self.transport.addr
    }
}

impl<T: Transport> LineClient<T> {
    pub fn over(transport: T) -> Self {
        Self { transport }
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    fn call(&self, verb: &str, args: &[&[u8]]) -> Result<Vec<u8>, ServerError> {
        parse_reply(&self.transport.exchange(&encode_request(verb, args))?)
    }

    pub fn register_keys(
        &self,
        email: &str,
        password: &str,
        signing: &PublicKey,
        encryption: &PublicKey,
    ) -> Result<(), ServerError> {
        self.call(
            "REGISTER",
            &[
                email.as_bytes(),
                password.as_bytes(),
                &signing.to_bytes(),
                &encryption.to_bytes(),
            ],
        )
        .map(|_| ())
    }
}

fn reply_model<T>(r: Result<T, crate::model::ModelError>) -> Result<T, ServerError> {
    r.map_err(|e| ServerError::Unavailable(format!("bad reply payload: {e}")))
}

fn reply_text(bytes: Vec<u8>) -> Result<String, ServerError> {
    String::from_utf8(bytes).map_err(|_| ServerError::Unavailable("reply is not UTF-8".into()))
}

impl<T: Transport> Delivery for LineClient<T> {
    fn register(
        &self,
        email: &str,
        password: &str,
        signing: &PublicKey,
        encryption: &PublicKey,
    ) -> Result<(), ServerError> {
        self.register_keys(email, password, signing, encryption)
    }

    fn login(&self, email: &str, password: &str) -> Result<String, ServerError> {
        reply_text(self.call("LOGIN", &[email.as_bytes(), password.as_bytes()])?)
    }

    fn upload(
        &self,
        token: &str,
        envelope: &TransmissionEnvelope,
        idempotency: Option<&str>,
    ) -> Result<MessageId, ServerError> {
        let raw = self.call(
            "UPLOAD",
            &[
                token.as_bytes(),
                &envelope.to_bytes(),
                idempotency.unwrap_or_default().as_bytes(),
            ],
        )?;
        reply_model(MessageId::new(&reply_text(raw)?))
    }

    fn inbox(&self, token: &str) -> Result<Vec<InboxEntry>, ServerError> {
        reply_model(decode_items(
            &self.call("INBOX", &[token.as_bytes()])?,
            InboxEntry::from_bytes,
        ))
    }

    fn fetch(&self, token: &str, id: &MessageId) -> Result<FetchedMessage, ServerError> {
        reply_model(FetchedMessage::from_bytes(
            &self.call("FETCH", &[token.as_bytes(), id.as_str().as_bytes()])?,
        ))
    }

    fn submit_receipt(&self, token: &str, id: &MessageId, receipt: &Receipt) -> Result<Vec<u8>, ServerError> {
        self.call(
            "RECEIPT",
            &[token.as_bytes(), id.as_str().as_bytes(), &receipt.to_bytes()],
        )
    }

    fn fetch_evidence(&self, token: &str) -> Result<Vec<ForwardedEvidence>, ServerError> {
        reply_model(decode_items(
            &self.call("EVIDENCE", &[token.as_bytes()])?,
            ForwardedEvidence::from_bytes,
        ))
    }

    fn ack(&self, token: &str, id: &MessageId) -> Result<(), ServerError> {
        self.call("ACK", &[token.as_bytes(), id.as_str().as_bytes()])
            .map(|_| ())
    }

    fn pubkey(&self, email: &str, role: KeyRole) -> Result<PublicKey, ServerError> {
        let raw = self.call("PUBKEY", &[email.as_bytes(), role.to_string().as_bytes()])?;
        let key = PublicKey::from_bytes(&raw).map_err(|e| ServerError::Unavailable(format!("bad key: {e}")))?;
        // The reply must be the key we asked for.
        let expected = PrincipalId::new(email).map_err(|e| ServerError::BadRequest(e.to_string()))?;
        if key.owner() != &expected || key.role() != role {
            return Err(ServerError::Unavailable(
                "server returned a key for another principal or role".into(),
            ));
        }
        Ok(key)
    }

    fn dispute(&self, token: &str, id: &MessageId) -> Result<Vec<EvidenceRecord>, ServerError> {
        reply_model(decode_items(
            &self.call("DISPUTE", &[token.as_bytes(), id.as_str().as_bytes()])?,
            EvidenceRecord::from_bytes,
        ))
    }

    fn delete(&self, token: &str, id: &MessageId) -> Result<(), ServerError> {
        self.call("DELETE", &[token.as_bytes(), id.as_str().as_bytes()])
            .map(|_| ())
    }
}
