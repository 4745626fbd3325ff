//! `epgp`: register, send, read and prove delivery of receipt-gated mail,
//! or run the delivery server.
//!
//! Every command is a thin adapter over the core library; protocol logic
//! lives there.

mod config;
mod keyring;

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use epgp::client::{Client, ClientError, EvidenceOutcome, LocalStores};
use epgp::crypto::KeyMaterial;
use epgp::evidence::Claim;
use epgp::model::{MessageId, PrincipalId};
use epgp::server::wire::{self, WireClient};
use epgp::server::{Server, ServerConfig, ServerError, SystemClock};
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde_json::{json, Value};
use thiserror::Error;
use zeroize::Zeroizing;

use config::Config;
use keyring::KeyringError;

#[derive(Debug, Parser)]
#[command(name = "epgp", version, about = "Receipt-gated mail with mutual non-repudiation")]
struct Cli {
    /// Directory holding config.toml, the keyring and local stores.
    #[arg(long, global = true, env = "EPGP_HOME")]
    home: Option<PathBuf>,
    /// Server address, overriding the config file.
    #[arg(long, global = true)]
    server: Option<String>,
    /// Print one JSON object instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run server D.
    Serve {
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value = config::DEFAULT_SERVER)]
        listen: String,
    },
    /// Generate keys locally, register their public halves and write the keyring.
    Register {
        email: String,
        /// Algorithm profile: classic or modern.
        #[arg(long)]
        suite: Option<String>,
    },
    /// Seal and upload a message; the body comes from a file or stdin.
    Send {
        #[arg(long)]
        to: String,
        #[arg(long, default_value = "")]
        subject: String,
        #[arg(long)]
        body_file: Option<PathBuf>,
    },
    /// List messages addressed to you.
    Inbox,
    /// Download a message. The session key stays in escrow.
    Fetch {
        id: String,
        /// Try to open it without a released key.
        #[arg(long)]
        decrypt: bool,
    },
    /// Fetch, sign a receipt, trade it for the key and open the message.
    Read {
        id: String,
        /// Write the raw body bytes here.
        #[arg(long)]
        body_out: Option<PathBuf>,
    },
    /// Remove a message from your inbox.
    Delete { id: String },
    /// Answer a message you have read.
    Reply {
        id: String,
        #[arg(long)]
        body_file: Option<PathBuf>,
    },
    /// Send a message you have read on to someone else.
    Forward { id: String, to: String },
    /// Collect forwarded receipts and store them as delivery evidence.
    Evidence,
    /// Decide a claim from local evidence.
    Dispute {
        #[arg(long, value_enum)]
        claim: ClaimArg,
        #[arg(long)]
        id: String,
    },
    /// Set a new password for an account, directly on the server's data directory.
    AdminReset {
        email: String,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ClaimArg {
    /// The sender claims the receiver got the message.
    Sender,
    /// The receiver claims the sender sent it.
    Receiver,
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("{0}")]
    Server(#[from] ServerError),
    #[error(transparent)]
    Keyring(#[from] KeyringError),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn code(&self) -> &'static str {
        match self {
            CliError::Client(e) => e.code(),
            CliError::Server(e) => e.code(),
            CliError::Keyring(KeyringError::Locked) => "KeyringLocked",
            CliError::Keyring(KeyringError::Missing(_)) => "NoKeyring",
            CliError::Keyring(KeyringError::Exists(_)) => "KeyringExists",
            CliError::Keyring(KeyringError::Malformed(_)) => "KeyringMalformed",
            CliError::Keyring(KeyringError::Io(_)) | CliError::Io(_) => "LocalError",
            CliError::Config(_) => "ConfigError",
            CliError::Input(_) => "BadInput",
        }
    }
}

struct Output {
    json: bool,
}

impl Output {
    fn emit(&self, value: Value, text: impl FnOnce() -> String) {
        if self.json {
            println!("{value}");
        } else {
            let text = text();
            if !text.is_empty() {
                println!("{text}");
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let out = Output { json: cli.json };
    match run(cli, &out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if out.json {
                println!("{}", json!({ "error": e.code(), "detail": e.to_string() }));
            } else {
                eprintln!("error: {}: {e}", e.code());
            }
            ExitCode::FAILURE
        }
    }
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or_default()
}

fn secret(var: &str, prompt: &str) -> Result<Zeroizing<String>, CliError> {
    if let Ok(value) = std::env::var(var) {
        return Ok(Zeroizing::new(value));
    }
    rpassword::prompt_password(prompt)
        .map(Zeroizing::new)
        .map_err(|e| CliError::Input(format!("{prompt} {e} (or set {var})")))
}

fn account_password() -> Result<Zeroizing<String>, CliError> {
    secret("EPGP_PASSWORD", "Account password: ")
}

fn keyring_passphrase() -> Result<Zeroizing<String>, CliError> {
    secret("EPGP_PASSPHRASE", "Keyring passphrase: ")
}

fn message_id(raw: &str) -> Result<MessageId, CliError> {
    MessageId::new(raw).map_err(|e| CliError::Input(e.to_string()))
}

fn read_body(file: Option<&Path>) -> Result<Vec<u8>, CliError> {
    match file {
        Some(path) => Ok(std::fs::read(path)?),
        None => {
            let mut body = Vec::new();
            std::io::stdin().read_to_end(&mut body)?;
            Ok(body)
        }
    }
}

fn run(cli: Cli, out: &Output) -> Result<(), CliError> {
    let home = cli.home.clone().unwrap_or_else(config::default_home);
    let mut cfg = Config::load(&home, |k| std::env::var(k).ok())?;
    if let Some(server) = cli.server {
        cfg.server = server;
    }
    let mut rng = StdRng::from_entropy();

    match cli.command {
        Command::Serve { data_dir, listen } => serve(&cfg, data_dir.unwrap_or(cfg.data_dir.clone()), &listen, out),
        Command::AdminReset { email, data_dir } => {
            let config = ServerConfig {
                data_dir: Some(data_dir.unwrap_or(cfg.data_dir.clone())),
                password_cost: cfg.password_cost,
                ..ServerConfig::default()
            };
            let server = Server::open(config, SystemClock, StdRng::from_entropy())?;
            let password = secret("EPGP_NEW_PASSWORD", "New password: ")?;
            server.reset_password(&email, &password)?;
            out.emit(json!({ "reset": email }), || format!("password reset for {email}"));
            Ok(())
        }
        Command::Register { email, suite } => {
            let suite = match suite {
                Some(name) => name.parse().map_err(|e| CliError::Input(format!("suite: {e}")))?,
                None => cfg.suite,
            };
            let path = cfg.keyring_path();
            if path.exists() {
                return Err(KeyringError::Exists(path.display().to_string()).into());
            }
            let password = account_password()?;
            let passphrase = keyring_passphrase()?;
            let delivery = WireClient::new(cfg.server.clone());
            let keys = epgp::client::register_account(&delivery, &email, &password, suite, &mut rng)?;
            let sealed = keyring::seal(&keys, &passphrase, cfg.password_cost, &mut rng)?;
            keyring::create(&path, &sealed)?;
            let fingerprint = keys.signing.public.fingerprint();
            out.emit(
                json!({
                    "registered": keys.owner.as_str(),
                    "suite": suite.to_string(),
                    "signing_key": fingerprint,
                    "keyring": path.display().to_string(),
                }),
                || format!("registered {} ({suite}), signing key {fingerprint}", keys.owner),
            );
            Ok(())
        }
        command => {
            let mut client = connect(&cfg)?;
            user_command(&mut client, command, out, &mut rng)
        }
    }
}

fn serve(cfg: &Config, data_dir: PathBuf, listen: &str, out: &Output) -> Result<(), CliError> {
    let config = ServerConfig {
        data_dir: Some(data_dir.clone()),
        password_cost: cfg.password_cost,
        ..ServerConfig::default()
    };
    let server = Arc::new(Server::open(config, SystemClock, StdRng::from_entropy())?);
    let handle = wire::spawn(server, listen)?;
    let addr = handle.local_addr();
    out.emit(
        json!({ "listening": addr.to_string(), "data_dir": data_dir.display().to_string() }),
        || format!("listening on {addr}"),
    );
    std::io::stdout().flush()?;
    handle.join();
    Ok(())
}

fn connect(cfg: &Config) -> Result<Client<WireClient>, CliError> {
    let passphrase = keyring_passphrase()?;
    let keys: KeyMaterial = keyring::load(&cfg.keyring_path(), &passphrase)?;
    let stores = LocalStores::open(cfg.store_dir())?;
    let suite = keys.suite;
    let mut client = Client::new(WireClient::new(cfg.server.clone()), keys, suite, stores);
    client.login(&account_password()?)?;
    Ok(client)
}

fn user_command(
    client: &mut Client<WireClient>,
    command: Command,
    out: &Output,
    rng: &mut StdRng,
) -> Result<(), CliError> {
    match command {
        Command::Send { to, subject, body_file } => {
            let body = read_body(body_file.as_deref())?;
            let id = client.send(&to, &subject, &body, now(), rng)?;
            out.emit(json!({ "message_id": id.as_str() }), || id.to_string());
        }
        Command::Inbox => {
            let entries = client.inbox()?;
            let list: Vec<Value> = entries
                .iter()
                .map(|e| {
                    json!({
                        "message_id": e.message_id.as_str(),
                        "from": e.from.as_str(),
                        "subject": e.subject,
                        "date": e.date,
                        "opened": e.opened,
                    })
                })
                .collect();
            out.emit(json!({ "messages": list }), || {
                entries
                    .iter()
                    .map(|e| {
                        let mark = if e.opened { ' ' } else { '*' };
                        format!("{mark} {}  {}  {}", e.message_id, e.from, e.subject)
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
            });
        }
        Command::Fetch { id, decrypt } => {
            let fetched = client.fetch(&message_id(&id)?)?;
            if decrypt {
                client.open_without_receipt(&fetched)?;
            }
            let m5 = String::from_utf8_lossy(&fetched.m5).into_owned();
            out.emit(
                json!({
                    "message_id": fetched.message_id.as_str(),
                    "from": fetched.sender.as_str(),
                    "to": fetched.recipient.as_str(),
                    "subject": fetched.subject,
                    "suite": fetched.suite.to_string(),
                    "uploaded_at": fetched.uploaded_at,
                    "m5": m5,
                }),
                || {
                    format!(
                        "From: {}\nTo: {}\nSubject: {}\n\n{m5}",
                        fetched.sender, fetched.recipient, fetched.subject
                    )
                },
            );
        }
        Command::Read { id, body_out } => {
            let read = client.read(&message_id(&id)?, now(), rng)?;
            let m = &read.message;
            if let Some(path) = &body_out {
                std::fs::write(path, &m.body)?;
            }
            let text = std::str::from_utf8(&m.body).ok();
            out.emit(
                json!({
                    "message_id": read.message_id.as_str(),
                    "from": m.from.as_str(),
                    "to": m.to.as_str(),
                    "subject": m.subject,
                    "date": m.date,
                    "body": text,
                    "body_len": m.body.len(),
                    "origin": read.origin.kind.to_string(),
                    "fresh": read.fresh,
                }),
                || {
                    let body = text
                        .map(str::to_owned)
                        .unwrap_or_else(|| format!("<{} bytes of binary data>", m.body.len()));
                    format!(
                        "Message-Id: {}\nFrom: {}\nTo: {}\nSubject: {}\nDate: {}\nOrigin: {} verified\n\n{body}",
                        read.message_id, m.from, m.to, m.subject, m.date, read.origin.kind
                    )
                },
            );
        }
        Command::Delete { id } => {
            let id = message_id(&id)?;
            client.delete(&id)?;
            out.emit(json!({ "deleted": id.as_str() }), || format!("deleted {id}"));
        }
        Command::Reply { id, body_file } => {
            let body = read_body(body_file.as_deref())?;
            let new = client.reply(&message_id(&id)?, &body, now(), rng)?;
            out.emit(json!({ "message_id": new.as_str() }), || new.to_string());
        }
        Command::Forward { id, to } => {
            let new = client.forward(&message_id(&id)?, &to, now(), rng)?;
            out.emit(json!({ "message_id": new.as_str() }), || new.to_string());
        }
        Command::Evidence => {
            let mut items = Vec::new();
            let mut lines = Vec::new();
            for outcome in client.collect_evidence(now())? {
                match outcome {
                    EvidenceOutcome::Verified(record) => {
                        let (_, verdict) = client.dispute(Claim::SenderClaimsDelivery, &record.message_id)?;
                        lines.push(format!(
                            "{} {} from {}: {verdict}",
                            record.kind, record.message_id, record.receiver
                        ));
                        items.push(json!({
                            "message_id": record.message_id.as_str(),
                            "kind": record.kind.to_string(),
                            "receiver": record.receiver.as_str(),
                            "verdict": verdict.to_string(),
                        }));
                    }
                    EvidenceOutcome::Rejected { message_id, error } => {
                        lines.push(format!("rejected {message_id}: {}: {error}", error.code()));
                        items.push(json!({
                            "message_id": message_id.as_str(),
                            "error": error.code(),
                            "detail": error.to_string(),
                        }));
                    }
                }
            }
            out.emit(json!({ "evidence": items }), || {
                if lines.is_empty() {
                    "no new evidence".to_owned()
                } else {
                    lines.join("\n")
                }
            });
        }
        Command::Dispute { claim, id } => {
            let claim = match claim {
                ClaimArg::Sender => Claim::SenderClaimsDelivery,
                ClaimArg::Receiver => Claim::ReceiverClaimsOrigin,
            };
            let id = message_id(&id)?;
            let (case, verdict) = client.dispute(claim, &id)?;
            let respondent: &PrincipalId = &case.respondent;
            out.emit(
                json!({
                    "message_id": id.as_str(),
                    "claim": claim.required_kind().to_string(),
                    "respondent": respondent.as_str(),
                    "records": case.records.len(),
                    "verdict": verdict.to_string(),
                }),
                || format!("{}: {verdict}", claim.required_kind()),
            );
        }
        Command::Serve { .. } | Command::Register { .. } | Command::AdminReset { .. } => unreachable!("handled in run"),
    }
    Ok(())
}
