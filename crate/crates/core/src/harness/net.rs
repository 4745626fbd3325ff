//! Simulated network between the principals and server D.
//!
//! Requests go through the same line encoding and dispatcher as the TCP
//! server. The adversary sits on this link: it sees every line, can lose a
//! request or a reply, replay a captured request and flip bytes of M5 in a
//! fetch reply.

use std::cell::RefCell;
use std::fmt;

use crate::model::MessageId;
use crate::server::wire::{self, Transport};
use crate::server::{Delivery, FetchedMessage, ServerError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropKind {
    /// Lost before reaching D; D never sees it.
    Request,
    /// D processes the request but the reply is lost.
    Response,
}

/// One request/reply pair as it appeared on the link.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireEvent {
    pub step: usize,
    pub actor: String,
    pub verb: String,
    pub request_len: usize,
    pub outcome: String,
    pub replayed: bool,
}

impl fmt::Display for WireEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let replay = if self.replayed { " (replayed)" } else { "" };
        write!(
            f,
            "step {} {} -> D {} {} bytes{}: {}",
            self.step, self.actor, self.verb, self.request_len, replay, self.outcome
        )
    }
}

/// A request and the reply D produced, before any fault was applied. The
/// monitor inspects these, so a reply the adversary dropped still counts.
#[derive(Debug, Clone)]
pub(crate) struct Exchange {
    pub request: String,
    pub reply: Option<String>,
}

#[derive(Debug, Default)]
struct LinkState {
    step: usize,
    actor: String,
    replaying: bool,
    drop_next: Option<DropKind>,
    tamper: Vec<(MessageId, usize)>,
    events: Vec<WireEvent>,
    captured: Vec<String>,
    unchecked: Vec<Exchange>,
}

pub struct SimNet<D> {
    backend: D,
    link: RefCell<LinkState>,
}

impl<D: Delivery> SimNet<D> {
    pub fn new(backend: D) -> Self {
        Self {
            backend,
            link: RefCell::default(),
        }
    }

    pub fn backend(&self) -> &D {
        &self.backend
    }

    pub(crate) fn begin(&self, step: usize, actor: &str) {
        let mut link = self.link.borrow_mut();
        link.step = step;
        link.actor = actor.to_owned();
    }

    pub(crate) fn set_replaying(&self, on: bool) {
        self.link.borrow_mut().replaying = on;
    }

    pub(crate) fn drop_next(&self, kind: DropKind) {
        self.link.borrow_mut().drop_next = Some(kind);
    }

    /// Flips byte `index` (modulo its length) of M5 in the next fetch reply
    /// for `id`.
    pub(crate) fn tamper_next_fetch(&self, id: MessageId, index: usize) {
        self.link.borrow_mut().tamper.push((id, index));
    }

    pub(crate) fn take_exchanges(&self) -> Vec<Exchange> {
        std::mem::take(&mut self.link.borrow_mut().unchecked)
    }

    pub fn events(&self) -> Vec<WireEvent> {
        self.link.borrow().events.clone()
    }

    pub fn event_count(&self) -> usize {
        self.link.borrow().events.len()
    }

    /// Every request line seen so far, in order.
    pub fn captured(&self) -> Vec<String> {
        self.link.borrow().captured.clone()
    }

    pub fn captured_len(&self) -> usize {
        self.link.borrow().captured.len()
    }

    pub fn captured_at(&self, index: usize) -> Option<String> {
        self.link.borrow().captured.get(index).cloned()
    }

    fn record(&self, verb: &str, request_len: usize, outcome: String) {
        let mut link = self.link.borrow_mut();
        let event = WireEvent {
            step: link.step,
            actor: link.actor.clone(),
            verb: verb.to_owned(),
            request_len,
            outcome,
            replayed: link.replaying,
        };
        link.events.push(event);
    }

    fn apply_tamper(&self, reply: String) -> (String, Option<usize>) {
        let Ok(payload) = wire::parse_reply(&reply) else {
            return (reply, None);
        };
        let Ok(mut fetched) = FetchedMessage::from_bytes(&payload) else {
            return (reply, None);
        };
        let mut link = self.link.borrow_mut();
        let Some(pos) = link.tamper.iter().position(|(id, _)| *id == fetched.message_id) else {
            return (reply, None);
        };
        let (_, index) = link.tamper.remove(pos);
        if fetched.m5.is_empty() {
            return (reply, None);
        }
        let at = index % fetched.m5.len();
        fetched.m5[at] ^= 0x01;
        (wire::ok_reply(&fetched.to_bytes()), Some(at))
    }
}

fn summarize(reply: &str) -> String {
    match wire::parse_reply(reply) {
        Ok(payload) => format!("OK {} bytes", payload.len()),
        Err(e) => format!("ERR {}", e.code()),
    }
}

impl<D: Delivery> Transport for SimNet<D> {
    fn exchange(&self, request: &str) -> Result<String, ServerError> {
        let verb = request.split(' ').next().unwrap_or_default().to_owned();
        let drop = {
            let mut link = self.link.borrow_mut();
            link.captured.push(request.to_owned());
            link.drop_next.take()
        };
        if drop == Some(DropKind::Request) {
            self.link.borrow_mut().unchecked.push(Exchange {
                request: request.to_owned(),
                reply: None,
            });
            self.record(&verb, request.len(), "request lost".into());
            return Err(ServerError::Unavailable("request lost".into()));
        }

        let reply = wire::dispatch(&self.backend, request);
        self.link.borrow_mut().unchecked.push(Exchange {
            request: request.to_owned(),
            reply: Some(reply.clone()),
        });
        if drop == Some(DropKind::Response) {
            self.record(&verb, request.len(), format!("{}, reply lost", summarize(&reply)));
            return Err(ServerError::Unavailable("reply lost".into()));
        }

        let (reply, tampered) = if verb == "FETCH" {
            self.apply_tamper(reply)
        } else {
            (reply, None)
        };
        let mut outcome = summarize(&reply);
        if let Some(at) = tampered {
            outcome.push_str(&format!(", M5 byte {at} flipped in transit"));
        }
        self.record(&verb, request.len(), outcome);
        Ok(reply)
    }
}
