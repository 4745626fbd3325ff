//! Principals, their local state and the operations a scenario or the
//! fuzzer can perform. Every operation is one step: it runs, records its
//! outcome and then lets the monitor check the wire and D's state.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::crypto::{self, AlgorithmSuite, KeyMaterial, KeyRole, PublicKey};
use crate::directory::PasswordCost;
use crate::evidence::{adjudicate, Claim, DisputeCase, Verdict};
use crate::model::{
    EvidenceKind, EvidenceRecord, MessageId, PlaintextMessage, PrincipalId, Receipt, TransmissionEnvelope,
};
use crate::receiver::{self, OpenError, OpenedMessage, ReceiverError};
use crate::sender::{self, SenderError};
use crate::server::wire::{self, LineClient, Transport};
use crate::server::{Delivery, EscrowState, FetchedMessage, ManualClock, Server, ServerError};
use crate::testkit::{derive_seed, seeded_keys, test_rng};

use super::monitor::{Monitor, Violation};
use super::net::{DropKind, SimNet, WireEvent};
use super::Inspect;

/// Simulated time at which every world starts.
pub const START_TIME: u64 = 1_700_000_000;

/// Seed for principals' key material. Independent of the scenario seed so
/// that keys are generated once per process.
pub const DEFAULT_KEY_SEED: u64 = 0x5eed_4b65_7973;

const FORGED_KEY_SALT: u64 = 0xf0f0_f0f0;
const DOMAIN: &str = "sim.test";

/// How a principal deviates from the protocol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Role {
    Honest,
    /// Fetches M5 but never issues or submits a receipt.
    SilentReceiver,
    /// Submits each receipt several times.
    ReplayingReceiver,
    /// Signs receipts with a key that is not its registered one.
    ForgingReceiver,
    /// Sends mail that claims to come from `victim`, signed with a key the
    /// impostor made up for the victim.
    ImpostorSender {
        victim: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// The sender claims delivery (needs NRR).
    Sender,
    /// The receiver claims origin (needs NRO).
    Receiver,
}

/// Outcome of a failed step: a server error code, a pipeline stage name or
/// a harness condition such as `NotFetched`.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{code}: {detail}")]
pub struct StepError {
    pub code: String,
    pub detail: String,
}

impl StepError {
    pub fn new(code: &str, detail: impl Into<String>) -> Self {
        Self {
            code: code.to_owned(),
            detail: detail.into(),
        }
    }
}

impl From<ServerError> for StepError {
    fn from(e: ServerError) -> Self {
        Self::new(e.code(), e.detail())
    }
}

impl From<OpenError> for StepError {
    fn from(e: OpenError) -> Self {
        Self::new(e.stage.error_name(), e.detail)
    }
}

impl From<SenderError> for StepError {
    fn from(e: SenderError) -> Self {
        let code = match e {
            SenderError::EvidenceInvalid(_) => "EvidenceInvalid",
            _ => "SenderError",
        };
        Self::new(code, e.to_string())
    }
}

impl From<ReceiverError> for StepError {
    fn from(e: ReceiverError) -> Self {
        match e {
            ReceiverError::Open(e) => e.into(),
            ReceiverError::EvidenceInvalid(_) => Self::new("EvidenceInvalid", e.to_string()),
            other => Self::new("ReceiverError", other.to_string()),
        }
    }
}

impl From<crypto::CryptoError> for StepError {
    fn from(e: crypto::CryptoError) -> Self {
        Self::new("CryptoError", e.to_string())
    }
}

#[derive(Debug, Clone)]
struct Actor {
    email: PrincipalId,
    password: String,
    keys: KeyMaterial,
    role: Role,
    token: Option<String>,
    /// NRR records this principal verified or fabricated.
    evidence: Vec<EvidenceRecord>,
}

#[derive(Debug, Clone)]
struct SimMessage {
    from: String,
    to: String,
    envelope: TransmissionEnvelope,
    idempotency: String,
    id: Option<MessageId>,
    fetched: Option<FetchedMessage>,
    receipt: Option<Receipt>,
    held_key: Option<Vec<u8>>,
    opened: Option<OpenedMessage>,
    nro: Option<EvidenceRecord>,
}

pub struct World<D> {
    seed: u64,
    key_seed: u64,
    suite: AlgorithmSuite,
    clock: Arc<ManualClock>,
    rng: ChaCha20Rng,
    client: LineClient<SimNet<D>>,
    actors: BTreeMap<String, Actor>,
    messages: BTreeMap<String, SimMessage>,
    last_error: Option<StepError>,
    step: usize,
    monitor: Monitor,
    max_body: usize,
}

impl World<Server> {
    /// A world around a fresh in-memory server.
    pub fn new(seed: u64) -> Self {
        let clock = Arc::new(ManualClock::new(START_TIME));
        let server = Server::in_memory(
            PasswordCost::TESTING,
            clock.clone(),
            test_rng(derive_seed(seed, "server")),
        );
        Self::with_backend(seed, clock, server)
    }
}

impl<D: Delivery + Inspect> World<D> {
    /// `clock` must be the clock `backend` reads.
    pub fn with_backend(seed: u64, clock: Arc<ManualClock>, backend: D) -> Self {
        Self {
            seed,
            key_seed: DEFAULT_KEY_SEED,
            suite: AlgorithmSuite::CLASSIC,
            clock,
            rng: test_rng(derive_seed(seed, "world")),
            client: LineClient::over(SimNet::new(backend)),
            actors: BTreeMap::new(),
            messages: BTreeMap::new(),
            last_error: None,
            step: 0,
            monitor: Monitor::default(),
            max_body: 1024,
        }
    }

    /// Changes the suite for principals declared from now on and the
    /// messages they send.
    pub fn set_suite(&mut self, suite: AlgorithmSuite) {
        self.suite = suite;
    }

    pub fn set_max_body(&mut self, max: usize) {
        self.max_body = max;
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn backend(&self) -> &D {
        self.net().backend()
    }

    fn net(&self) -> &SimNet<D> {
        self.client.transport()
    }

    pub fn events(&self) -> Vec<WireEvent> {
        self.net().events()
    }

    pub fn violations(&self) -> &[Violation] {
        self.monitor.violations()
    }

    pub fn last_error(&self) -> Option<&StepError> {
        self.last_error.as_ref()
    }

    pub fn principals(&self) -> impl Iterator<Item = &str> {
        self.actors.keys().map(String::as_str)
    }

    pub fn messages(&self) -> impl Iterator<Item = &str> {
        self.messages.keys().map(String::as_str)
    }

    pub fn has_principal(&self, name: &str) -> bool {
        self.actors.contains_key(name)
    }

    pub fn role(&self, name: &str) -> Option<&Role> {
        self.actors.get(name).map(|a| &a.role)
    }

    pub fn message_id(&self, label: &str) -> Option<&MessageId> {
        self.messages.get(label).and_then(|m| m.id.as_ref())
    }

    pub fn recipient_of(&self, label: &str) -> Option<&str> {
        self.messages.get(label).map(|m| m.to.as_str())
    }

    pub fn sender_of(&self, label: &str) -> Option<&str> {
        self.messages.get(label).map(|m| m.from.as_str())
    }

    pub fn escrow(&self, label: &str) -> Option<EscrowState> {
        let id = self.message_id(label)?;
        self.backend()
            .escrow_states()
            .into_iter()
            .find(|(i, _)| i == id)
            .map(|(_, s)| s)
    }

    pub fn is_opened(&self, label: &str) -> bool {
        self.messages.get(label).is_some_and(|m| m.opened.is_some())
    }

    pub fn opened(&self, label: &str) -> Option<&PlaintextMessage> {
        self.messages
            .get(label)
            .and_then(|m| m.opened.as_ref())
            .map(|o| &o.message)
    }

    pub fn is_fetched(&self, label: &str) -> bool {
        self.messages.get(label).is_some_and(|m| m.fetched.is_some())
    }

    pub fn has_receipt(&self, label: &str) -> bool {
        self.messages.get(label).is_some_and(|m| m.receipt.is_some())
    }

    pub fn holds_key(&self, label: &str) -> bool {
        self.messages.get(label).is_some_and(|m| m.held_key.is_some())
    }

    pub fn nrr_logged(&self, label: &str) -> bool {
        let Some(id) = self.message_id(label) else { return false };
        self.backend()
            .log_entries_from(0)
            .iter()
            .any(|e| &e.record.message_id == id && e.record.kind == EvidenceKind::Nrr)
    }

    /// True if `name` holds a verified (not fabricated) NRR for `label`.
    pub fn evidence_verified(&self, name: &str, label: &str) -> bool {
        let (Some(actor), Some(msg)) = (self.actors.get(name), self.messages.get(label)) else {
            return false;
        };
        let Some(recipient) = self.actors.get(&msg.to) else {
            return false;
        };
        actor.evidence.iter().any(|r| {
            Some(&r.message_id) == msg.id.as_ref()
                && r.signer_key == recipient.keys.signing.public
                && r.reverify().is_ok()
        })
    }

    fn email(name: &str) -> Result<PrincipalId, StepError> {
        PrincipalId::new(&format!("{name}@{DOMAIN}")).map_err(|e| StepError::new("BadName", e.to_string()))
    }

    fn actor(&self, name: &str) -> Result<&Actor, StepError> {
        self.actors
            .get(name)
            .ok_or_else(|| StepError::new("UnknownPrincipal", name))
    }

    fn message(&self, label: &str) -> Result<&SimMessage, StepError> {
        self.messages
            .get(label)
            .ok_or_else(|| StepError::new("UnknownMessage", label))
    }

    fn message_mut(&mut self, label: &str) -> Result<&mut SimMessage, StepError> {
        self.messages
            .get_mut(label)
            .ok_or_else(|| StepError::new("UnknownMessage", label))
    }

    fn id_of(&self, label: &str) -> Result<MessageId, StepError> {
        self.message(label)?
            .id
            .clone()
            .ok_or_else(|| StepError::new("NoMessageId", format!("{label} was never acknowledged by D")))
    }

    fn token(&self, name: &str) -> Result<String, StepError> {
        Ok(self.actor(name)?.token.clone().unwrap_or_default())
    }

    fn forged_keys(&self, name: &str) -> Result<KeyMaterial, StepError> {
        let email = Self::email(name)?;
        Ok(seeded_keys(email.as_str(), self.key_seed ^ FORGED_KEY_SALT, self.suite))
    }

    fn begin(&mut self, actor: &str) {
        self.step += 1;
        self.net().begin(self.step, actor);
    }

    fn settle<T>(&mut self, result: Result<T, StepError>) -> Result<T, StepError> {
        self.last_error = result.as_ref().err().cloned();
        for exchange in self.net().take_exchanges() {
            self.monitor.observe(&exchange, self.step);
        }
        let step = self.step;
        let Self { monitor, client, .. } = self;
        monitor.check_server(client.transport().backend(), step);
        result
    }

    /// Registers and logs in a principal.
    pub fn add_principal(&mut self, name: &str, role: Role) -> Result<(), StepError> {
        self.begin(name);
        let result = self.try_add_principal(name, role);
        self.settle(result)
    }

    fn try_add_principal(&mut self, name: &str, role: Role) -> Result<(), StepError> {
        if self.actors.contains_key(name) {
            return Err(StepError::new("DuplicatePrincipal", name));
        }
        if let Role::ImpostorSender { victim } = &role {
            self.actor(victim)?;
        }
        let email = Self::email(name)?;
        let keys = seeded_keys(email.as_str(), self.key_seed, self.suite);
        let password = format!("passphrase of {name}");
        self.monitor.add_principal(email.clone(), keys.signing.public.clone());
        self.client
            .register(email.as_str(), &password, &keys.signing.public, &keys.encryption.public)?;
        let token = self.client.login(email.as_str(), &password).ok();
        self.actors.insert(
            name.to_owned(),
            Actor {
                email,
                password,
                keys,
                role,
                token,
                evidence: Vec::new(),
            },
        );
        Ok(())
    }

    pub fn login(&mut self, name: &str) -> Result<(), StepError> {
        self.begin(name);
        let result = self.try_login(name);
        self.settle(result)
    }

    fn try_login(&mut self, name: &str) -> Result<(), StepError> {
        let actor = self.actor(name)?;
        let token = self.client.login(actor.email.as_str(), &actor.password)?;
        self.actors.get_mut(name).expect("checked").token = Some(token);
        Ok(())
    }

    /// Replaces `name`'s session token with garbage.
    pub fn corrupt_token(&mut self, name: &str) {
        let token = format!("{:032x}", self.rng.gen::<u128>());
        if let Some(actor) = self.actors.get_mut(name) {
            actor.token = Some(token);
        }
    }

    /// `from` seals a fresh message to `to` and uploads it under `label`.
    pub fn upload(&mut self, label: &str, from: &str, to: &str, subject: &str) -> Result<(), StepError> {
        self.begin(from);
        let result = self.try_upload(label, from, to, subject);
        self.settle(result)
    }

    fn try_upload(&mut self, label: &str, from: &str, to: &str, subject: &str) -> Result<(), StepError> {
        if self.messages.contains_key(label) {
            return Err(StepError::new("DuplicateMessage", label));
        }
        let sender = self.actor(from)?.clone();
        let recipient = self.actor(to)?.clone();
        let (claimed_from, signing_keys) = match &sender.role {
            Role::ImpostorSender { victim } => (Self::email(victim)?, self.forged_keys(victim)?),
            _ => (sender.email.clone(), sender.keys.clone()),
        };
        let len = self.rng.gen_range(0..=self.max_body);
        let mut body = vec![0u8; len];
        self.rng.fill_bytes(&mut body);
        let msg = PlaintextMessage {
            from: claimed_from,
            to: recipient.email.clone(),
            subject: subject.to_owned(),
            date: self.clock_now(),
            body,
        };
        let mut envelope = sender::compose_and_seal(
            &msg,
            &signing_keys,
            &recipient.keys.encryption.public,
            sender.keys.suite,
            &mut self.rng,
        )?;
        // An impostor can only upload under its own account; the lie is
        // inside the signed content.
        envelope.sender = sender.email.clone();
        let idempotency = format!("{:016x}", self.rng.gen::<u64>());
        self.messages.insert(
            label.to_owned(),
            SimMessage {
                from: from.to_owned(),
                to: to.to_owned(),
                envelope,
                idempotency,
                id: None,
                fetched: None,
                receipt: None,
                held_key: None,
                opened: None,
                nro: None,
            },
        );
        self.send_upload(label, from)
    }

    /// Uploads `label` again with the same envelope and idempotency token,
    /// as a sender does after losing the reply.
    pub fn resend(&mut self, label: &str) -> Result<(), StepError> {
        let from = self.messages.get(label).map(|m| m.from.clone()).unwrap_or_default();
        self.begin(&from);
        let result = self.send_upload(label, &from);
        self.settle(result)
    }

    fn send_upload(&mut self, label: &str, from: &str) -> Result<(), StepError> {
        let token = self.token(from)?;
        let msg = self.message(label)?;
        let id = self.client.upload(&token, &msg.envelope, Some(&msg.idempotency))?;
        self.message_mut(label)?.id = Some(id);
        Ok(())
    }

    fn clock_now(&self) -> u64 {
        use crate::server::Clock;
        self.clock.now()
    }

    /// The addressee fetches M5.
    pub fn fetch(&mut self, label: &str) -> Result<(), StepError> {
        let to = self.recipient_of(label).unwrap_or_default().to_owned();
        self.begin(&to);
        let result = self.try_fetch(label, &to);
        self.settle(result)
    }

    fn try_fetch(&mut self, label: &str, to: &str) -> Result<(), StepError> {
        let id = self.id_of(label)?;
        let fetched = self.client.fetch(&self.token(to)?, &id)?;
        self.message_mut(label)?.fetched = Some(fetched);
        Ok(())
    }

    /// The addressee signs the M5 it fetched.
    pub fn issue_receipt(&mut self, label: &str) -> Result<(), StepError> {
        let to = self.recipient_of(label).unwrap_or_default().to_owned();
        self.begin(&to);
        let result = self.try_issue_receipt(label, &to);
        self.settle(result)
    }

    fn try_issue_receipt(&mut self, label: &str, to: &str) -> Result<(), StepError> {
        let actor = self.actor(to)?.clone();
        if actor.role == Role::SilentReceiver {
            return Ok(());
        }
        let id = self.id_of(label)?;
        let fetched = self
            .message(label)?
            .fetched
            .clone()
            .ok_or_else(|| StepError::new("NotFetched", label))?;
        let sender_pub = self.client.pubkey(fetched.sender.as_str(), KeyRole::Encryption)?;
        let keys = match actor.role {
            Role::ForgingReceiver => self.forged_keys(to)?,
            _ => actor.keys.clone(),
        };
        let now = self.clock_now();
        let receipt = receiver::issue_receipt(&fetched.m5, &keys, &sender_pub, &id, fetched.suite, now, &mut self.rng)?;
        self.message_mut(label)?.receipt = Some(receipt);
        Ok(())
    }

    /// The addressee trades its receipt for the wrapped key.
    pub fn submit_receipt(&mut self, label: &str) -> Result<(), StepError> {
        let to = self.recipient_of(label).unwrap_or_default().to_owned();
        self.begin(&to);
        let result = self.try_submit_receipt(label, &to);
        self.settle(result)
    }

    fn try_submit_receipt(&mut self, label: &str, to: &str) -> Result<(), StepError> {
        let role = self.actor(to)?.role.clone();
        if role == Role::SilentReceiver {
            return Ok(());
        }
        let id = self.id_of(label)?;
        let receipt = self
            .message(label)?
            .receipt
            .clone()
            .ok_or_else(|| StepError::new("NoReceipt", label))?;
        let token = self.token(to)?;
        let attempts = if role == Role::ReplayingReceiver { 3 } else { 1 };
        let mut last = Ok(Vec::new());
        for _ in 0..attempts {
            last = self.client.submit_receipt(&token, &id, &receipt);
            if let Ok(key) = &last {
                self.message_mut(label)?.held_key = Some(key.clone());
            }
        }
        last.map(|_| ()).map_err(StepError::from)
    }

    /// Submits a copy of the addressee's receipt with one signature byte
    /// flipped.
    pub fn submit_mutated_receipt(&mut self, label: &str, index: usize) -> Result<(), StepError> {
        let to = self.recipient_of(label).unwrap_or_default().to_owned();
        self.begin(&to);
        let result = (|| {
            let id = self.id_of(label)?;
            let mut receipt = self
                .message(label)?
                .receipt
                .clone()
                .ok_or_else(|| StepError::new("NoReceipt", label))?;
            let mut value = receipt.receipt_sig.value().to_vec();
            if value.is_empty() {
                return Err(StepError::new("NoReceipt", label));
            }
            let at = index % value.len();
            value[at] ^= 0x01;
            receipt.receipt_sig =
                crypto::Signature::from_parts(receipt.receipt_sig.alg(), receipt.receipt_sig.signer().clone(), value);
            self.client.submit_receipt(&self.token(&to)?, &id, &receipt)?;
            Ok(())
        })();
        self.settle(result)
    }

    /// `actor` submits the receipt belonging to `label` under its own
    /// session, trying to claim a key addressed to someone else.
    pub fn submit_receipt_as(&mut self, actor: &str, label: &str) -> Result<(), StepError> {
        self.begin(actor);
        let result = (|| {
            let id = self.id_of(label)?;
            let receipt = self
                .message(label)?
                .receipt
                .clone()
                .ok_or_else(|| StepError::new("NoReceipt", label))?;
            self.client.submit_receipt(&self.token(actor)?, &id, &receipt)?;
            Ok(())
        })();
        self.settle(result)
    }

    /// `actor` tries to fetch a message, addressed to it or not.
    pub fn fetch_as(&mut self, actor: &str, label: &str) -> Result<(), StepError> {
        self.begin(actor);
        let result = (|| {
            let id = self.id_of(label)?;
            self.client.fetch(&self.token(actor)?, &id)?;
            Ok(())
        })();
        self.settle(result)
    }

    /// The addressee runs the inverse pipeline with whatever key it holds.
    pub fn open(&mut self, label: &str) -> Result<(), StepError> {
        let to = self.recipient_of(label).unwrap_or_default().to_owned();
        self.begin(&to);
        let result = self.try_open(label, &to);
        self.settle(result)
    }

    fn try_open(&mut self, label: &str, to: &str) -> Result<(), StepError> {
        let id = self.id_of(label)?;
        let keys = self.actor(to)?.keys.clone();
        let msg = self.message(label)?;
        let fetched = msg.fetched.clone().ok_or_else(|| StepError::new("NotFetched", label))?;
        let held = msg.held_key.clone().unwrap_or_default();
        let sender_pub = self.client.pubkey(fetched.sender.as_str(), KeyRole::Signing)?;
        let opened = receiver::open_message_detailed(&fetched.m5, &held, &keys, &sender_pub, fetched.suite)?;
        let nro = receiver::verify_origin(
            &opened.message,
            &opened.signature,
            &sender_pub,
            &id,
            fetched.suite,
            self.clock_now(),
        )?;
        let msg = self.message_mut(label)?;
        msg.opened = Some(opened);
        msg.nro = Some(nro);
        Ok(())
    }

    /// `name` collects forwarded M6s, verifies them against what it sent
    /// and acknowledges the valid ones.
    pub fn collect_evidence(&mut self, name: &str) -> Result<(), StepError> {
        self.begin(name);
        let result = self.try_collect_evidence(name);
        self.settle(result)
    }

    fn try_collect_evidence(&mut self, name: &str) -> Result<(), StepError> {
        let token = self.token(name)?;
        let keys = self.actor(name)?.keys.clone();
        let forwarded = self.client.fetch_evidence(&token)?;
        let mut rejected = 0;
        for item in forwarded {
            let Some(sent) = self
                .messages
                .values()
                .find(|m| m.from == name && m.id.as_ref() == Some(&item.message_id))
            else {
                continue;
            };
            let m5 = sent.envelope.armored_body.clone();
            let receiver_pub = self.client.pubkey(item.receiver.as_str(), KeyRole::Signing)?;
            match sender::verify_receipt(&item.m6, &keys, &receiver_pub, &item.message_id, &m5, self.clock_now()) {
                Ok(record) => {
                    let actor = self.actors.get_mut(name).expect("checked");
                    if !actor.evidence.contains(&record) {
                        actor.evidence.push(record);
                    }
                    self.client.ack(&token, &item.message_id)?;
                }
                Err(_) => rejected += 1,
            }
        }
        if rejected > 0 {
            return Err(StepError::new(
                "EvidenceInvalid",
                format!("{rejected} forwarded receipts did not verify"),
            ));
        }
        Ok(())
    }

    /// `name` fabricates an NRR for `label` with a key it made up for the
    /// addressee and keeps it as evidence.
    pub fn forge_evidence(&mut self, name: &str, label: &str) -> Result<(), StepError> {
        self.begin(name);
        let result = (|| {
            let id = self.id_of(label)?;
            let msg = self.message(label)?.clone();
            let fake = self.forged_keys(&msg.to)?;
            let m5 = msg.envelope.armored_body.clone();
            let digest = crypto::hash(&m5, msg.envelope.suite);
            let signature = crypto::sign(&fake.signing.private, &digest)?;
            let record = EvidenceRecord {
                kind: EvidenceKind::Nrr,
                message_id: id,
                sender: msg.envelope.sender.clone(),
                receiver: msg.envelope.recipient.clone(),
                digest,
                signature,
                signer_key: fake.signing.public.clone(),
                verdict_input: m5,
                recorded_at: self.clock_now(),
            };
            self.actors
                .get_mut(name)
                .ok_or_else(|| StepError::new("UnknownPrincipal", name))?
                .evidence
                .push(record);
            Ok(())
        })();
        self.settle(result)
    }

    /// Builds the dispute one side would bring over `label` and decides it.
    /// The sender's case combines its own records with D's log; the
    /// adjudicator's key view is the principals' real keys.
    pub fn verdict(&mut self, side: Side, label: &str) -> Result<Verdict, StepError> {
        let actor = match side {
            Side::Sender => self.sender_of(label),
            Side::Receiver => self.recipient_of(label),
        }
        .unwrap_or_default()
        .to_owned();
        self.begin(&actor);
        let result = self.try_verdict(side, label, &actor);
        if let (Ok(Verdict::Proved), Side::Sender, Some(id)) = (&result, side, self.message_id(label).cloned()) {
            self.monitor.check_proved_delivery(&id, self.step);
        }
        self.settle(result)
    }

    fn try_verdict(&mut self, side: Side, label: &str, actor: &str) -> Result<Verdict, StepError> {
        let msg = self.message(label)?.clone();
        let Some(id) = msg.id.clone() else {
            return Ok(Verdict::NotProved);
        };
        let public_keys: BTreeMap<PrincipalId, PublicKey> = self
            .actors
            .values()
            .map(|a| (a.email.clone(), a.keys.signing.public.clone()))
            .collect();
        let case = match side {
            Side::Sender => {
                let mut records: Vec<EvidenceRecord> = self
                    .actor(actor)?
                    .evidence
                    .iter()
                    .filter(|r| r.message_id == id)
                    .cloned()
                    .collect();
                records.extend(self.client.dispute(&self.token(actor)?, &id)?);
                DisputeCase {
                    claim: Claim::SenderClaimsDelivery,
                    respondent: msg.envelope.recipient.clone(),
                    records,
                    public_keys,
                    contested_message_digest: crypto::hash(&msg.envelope.armored_body, msg.envelope.suite),
                }
            }
            Side::Receiver => {
                let contested = match &msg.nro {
                    Some(r) => r.digest.clone(),
                    None => crypto::hash(&[], msg.envelope.suite),
                };
                DisputeCase {
                    claim: Claim::ReceiverClaimsOrigin,
                    respondent: msg.envelope.sender.clone(),
                    records: msg.nro.iter().cloned().collect(),
                    public_keys,
                    contested_message_digest: contested,
                }
            }
        };
        Ok(adjudicate(&case))
    }

    pub fn inbox(&mut self, name: &str) -> Result<usize, StepError> {
        self.begin(name);
        let result = (|| Ok(self.client.inbox(&self.token(name)?)?.len()))();
        self.settle(result)
    }

    pub fn delete(&mut self, label: &str) -> Result<(), StepError> {
        let to = self.recipient_of(label).unwrap_or_default().to_owned();
        self.begin(&to);
        let result = (|| {
            let id = self.id_of(label)?;
            self.client.delete(&self.token(&to)?, &id)?;
            Ok(())
        })();
        self.settle(result)
    }

    /// The next request (or its reply) is lost.
    pub fn drop_next(&mut self, kind: DropKind) {
        self.net().drop_next(kind);
    }

    /// The next fetch reply for `label` arrives with one M5 byte flipped.
    pub fn tamper(&mut self, label: &str, index: usize) -> Result<(), StepError> {
        let id = self.id_of(label)?;
        self.net().tamper_next_fetch(id, index);
        Ok(())
    }

    /// The adversary re-sends the last receipt submission seen for `label`.
    pub fn replay(&mut self, label: &str) -> Result<(), StepError> {
        self.begin("adversary");
        let result = (|| {
            let id = self.id_of(label)?;
            let line = self
                .net()
                .captured()
                .into_iter()
                .rev()
                .find(|line| is_receipt_for(line, &id))
                .ok_or_else(|| StepError::new("NothingToReplay", label))?;
            self.resend_line(&line)
        })();
        self.settle(result)
    }

    /// The adversary re-sends the `index`-th captured request verbatim.
    pub fn replay_captured(&mut self, index: usize) -> Result<(), StepError> {
        self.begin("adversary");
        let result = match self.net().captured_at(index) {
            Some(line) => self.resend_line(&line),
            None => Err(StepError::new("NothingToReplay", format!("no request {index}"))),
        };
        self.settle(result)
    }

    pub fn captured_len(&self) -> usize {
        self.net().captured_len()
    }

    /// The adversary injects an arbitrary request line.
    pub fn inject(&mut self, line: &str) -> Result<(), StepError> {
        self.begin("adversary");
        let result = self.resend_line(line);
        self.settle(result)
    }

    fn resend_line(&self, line: &str) -> Result<(), StepError> {
        self.net().set_replaying(true);
        let reply = self.net().exchange(line);
        self.net().set_replaying(false);
        wire::parse_reply(&reply?)?;
        Ok(())
    }

    pub fn advance(&mut self, secs: u64) {
        self.clock.advance(secs);
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }
}

fn is_receipt_for(line: &str, id: &MessageId) -> bool {
    let mut parts = line.split(' ');
    parts.next() == Some("RECEIPT")
        && parts
            .nth(1)
            .and_then(|arg| wire::decode_field(arg).ok())
            .is_some_and(|raw| raw == id.as_str().as_bytes())
}
