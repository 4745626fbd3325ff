//! Scenario scripts: one action or expectation per line.
//!
//! ```text
//! # comments and blank lines are ignored
//! seed 7
//! suite classic
//! principal alice
//! principal bob
//! adversary mallory forging_receiver
//! adversary eve impostor_sender alice
//! upload m1 alice bob Lunch on Friday
//! fetch m1
//! issue_receipt m1
//! submit_receipt m1
//! open m1
//! evidence alice
//! expect escrow m1 released
//! expect verdict sender m1 proved
//! expect invariants
//! ```
//!
//! Actions: `upload MSG FROM TO [SUBJECT]`, `resend MSG`, `fetch MSG`,
//! `issue_receipt MSG`, `submit_receipt MSG`, `open MSG`, `evidence NAME`,
//! `login NAME`, `forge_evidence NAME MSG`, `drop request|response`,
//! `replay MSG`, `tamper MSG INDEX`, `advance SECONDS`.
//!
//! Expectations: `escrow MSG held|released`, `opened MSG yes|no`,
//! `holds_key MSG yes|no`, `last_error CODE|none`, `nrr MSG logged|absent`,
//! `evidence NAME MSG verified|none`,
//! `verdict sender|receiver MSG proved|not_proved|forged`, `invariants`.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::crypto::AlgorithmSuite;
use crate::directory::PasswordCost;
use crate::evidence::Verdict;
use crate::server::{Delivery, EscrowState, ManualClock, Server};
use crate::testkit::{derive_seed, test_rng};

use super::monitor::Violation;
use super::net::{DropKind, WireEvent};
use super::world::{Role, Side, World, START_TIME};
use super::Inspect;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ScriptError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Principal {
        name: String,
        role: Role,
    },
    Upload {
        msg: String,
        from: String,
        to: String,
        subject: String,
    },
    Resend {
        msg: String,
    },
    Fetch {
        msg: String,
    },
    IssueReceipt {
        msg: String,
    },
    SubmitReceipt {
        msg: String,
    },
    Open {
        msg: String,
    },
    Evidence {
        name: String,
    },
    Login {
        name: String,
    },
    ForgeEvidence {
        name: String,
        msg: String,
    },
    Drop(DropKind),
    Replay {
        msg: String,
    },
    Tamper {
        msg: String,
        index: usize,
    },
    Advance {
        secs: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expectation {
    Escrow { msg: String, state: EscrowState },
    Opened { msg: String, yes: bool },
    HoldsKey { msg: String, yes: bool },
    LastError { code: Option<String> },
    Nrr { msg: String, logged: bool },
    Evidence { name: String, msg: String, verified: bool },
    Verdict { side: Side, msg: String, verdict: Verdict },
    Invariants,
}

impl fmt::Display for Expectation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let yn = |b: bool| if b { "yes" } else { "no" };
        match self {
            Expectation::Escrow { msg, state } => write!(f, "escrow {msg} {state}"),
            Expectation::Opened { msg, yes } => write!(f, "opened {msg} {}", yn(*yes)),
            Expectation::HoldsKey { msg, yes } => write!(f, "holds_key {msg} {}", yn(*yes)),
            Expectation::LastError { code } => write!(f, "last_error {}", code.as_deref().unwrap_or("none")),
            Expectation::Nrr { msg, logged } => write!(f, "nrr {msg} {}", if *logged { "logged" } else { "absent" }),
            Expectation::Evidence { name, msg, verified } => {
                write!(
                    f,
                    "evidence {name} {msg} {}",
                    if *verified { "verified" } else { "none" }
                )
            }
            Expectation::Verdict { side, msg, verdict } => {
                let side = match side {
                    Side::Sender => "sender",
                    Side::Receiver => "receiver",
                };
                write!(f, "verdict {side} {msg} {verdict}")
            }
            Expectation::Invariants => f.write_str("invariants"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepKind {
    Act(Action),
    Expect(Expectation),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub line: usize,
    pub kind: StepKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub seed: u64,
    pub suite: AlgorithmSuite,
    pub script: Vec<Step>,
}

impl Scenario {
    /// Parses a script. Every principal and message must be declared before
    /// it is used.
    pub fn parse(text: &str) -> Result<Self, ScriptError> {
        let mut scenario = Scenario {
            seed: 0,
            suite: AlgorithmSuite::CLASSIC,
            script: Vec::new(),
        };
        let mut principals = BTreeSet::new();
        let mut messages = BTreeSet::new();
        for (index, raw) in text.lines().enumerate() {
            let line = index + 1;
            let content = raw.split('#').next().unwrap_or_default().trim();
            if content.is_empty() {
                continue;
            }
            let words: Vec<&str> = content.split_whitespace().collect();
            let fail = |message: String| ScriptError { line, message };
            let kind = Parser {
                words: &words,
                principals: &mut principals,
                messages: &mut messages,
            }
            .parse(&mut scenario)
            .map_err(fail)?;
            if let Some(kind) = kind {
                scenario.script.push(Step { line, kind });
            }
        }
        Ok(scenario)
    }
}

struct Parser<'a> {
    words: &'a [&'a str],
    principals: &'a mut BTreeSet<String>,
    messages: &'a mut BTreeSet<String>,
}

impl Parser<'_> {
    fn arity(&self, min: usize, max: usize) -> Result<(), String> {
        let n = self.words.len() - 1;
        if n < min || n > max {
            let want = if min == max {
                min.to_string()
            } else {
                format!("{min} to {max}")
            };
            return Err(format!("{} takes {want} arguments, got {n}", self.words[0]));
        }
        Ok(())
    }

    fn principal(&self, i: usize) -> Result<String, String> {
        let name = self.words[i];
        if !self.principals.contains(name) {
            return Err(format!("undeclared principal {name:?}"));
        }
        Ok(name.to_owned())
    }

    fn message(&self, i: usize) -> Result<String, String> {
        let msg = self.words[i];
        if !self.messages.contains(msg) {
            return Err(format!("undeclared message {msg:?}"));
        }
        Ok(msg.to_owned())
    }

    fn declare(&mut self, name: &str) -> Result<String, String> {
        let valid = name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-');
        if !valid {
            return Err(format!("invalid principal name {name:?}"));
        }
        if !self.principals.insert(name.to_owned()) {
            return Err(format!("principal {name:?} declared twice"));
        }
        Ok(name.to_owned())
    }

    fn number<T: std::str::FromStr>(&self, i: usize) -> Result<T, String> {
        self.words[i]
            .parse()
            .map_err(|_| format!("expected a number, got {:?}", self.words[i]))
    }

    fn yes_no(&self, i: usize) -> Result<bool, String> {
        match self.words[i] {
            "yes" => Ok(true),
            "no" => Ok(false),
            other => Err(format!("expected yes or no, got {other:?}")),
        }
    }

    fn parse(mut self, scenario: &mut Scenario) -> Result<Option<StepKind>, String> {
        let w = self.words;
        let action = match w[0] {
            "seed" => {
                self.arity(1, 1)?;
                scenario.seed = self.number(1)?;
                return Ok(None);
            }
            "suite" => {
                self.arity(1, 1)?;
                if !scenario.script.is_empty() {
                    return Err("suite must come before any other step".into());
                }
                scenario.suite = w[1].parse().map_err(|e| format!("{e}"))?;
                return Ok(None);
            }
            "expect" => return self.parse_expectation().map(|e| Some(StepKind::Expect(e))),
            "principal" => {
                self.arity(1, 1)?;
                Action::Principal {
                    name: self.declare(w[1])?,
                    role: Role::Honest,
                }
            }
            "adversary" => {
                self.arity(2, 3)?;
                let role = match (w[2], w.len()) {
                    ("silent_receiver", 3) => Role::SilentReceiver,
                    ("replaying_receiver", 3) => Role::ReplayingReceiver,
                    ("forging_receiver", 3) => Role::ForgingReceiver,
                    ("impostor_sender", 4) => Role::ImpostorSender {
                        victim: self.principal(3)?,
                    },
                    ("impostor_sender", _) => return Err("impostor_sender needs a victim".into()),
                    (other, _) => return Err(format!("unknown adversary kind {other:?}")),
                };
                Action::Principal {
                    name: self.declare(w[1])?,
                    role,
                }
            }
            "upload" => {
                if w.len() < 4 {
                    return Err(format!("upload takes at least 3 arguments, got {}", w.len() - 1));
                }
                let from = self.principal(2)?;
                let to = self.principal(3)?;
                if !self.messages.insert(w[1].to_owned()) {
                    return Err(format!("message {:?} declared twice", w[1]));
                }
                Action::Upload {
                    msg: w[1].to_owned(),
                    from,
                    to,
                    subject: w[4..].join(" "),
                }
            }
            "resend" | "fetch" | "issue_receipt" | "submit_receipt" | "open" | "replay" => {
                self.arity(1, 1)?;
                let msg = self.message(1)?;
                match w[0] {
                    "resend" => Action::Resend { msg },
                    "fetch" => Action::Fetch { msg },
                    "issue_receipt" => Action::IssueReceipt { msg },
                    "submit_receipt" => Action::SubmitReceipt { msg },
                    "open" => Action::Open { msg },
                    _ => Action::Replay { msg },
                }
            }
            "evidence" | "login" => {
                self.arity(1, 1)?;
                let name = self.principal(1)?;
                if w[0] == "evidence" {
                    Action::Evidence { name }
                } else {
                    Action::Login { name }
                }
            }
            "forge_evidence" => {
                self.arity(2, 2)?;
                Action::ForgeEvidence {
                    name: self.principal(1)?,
                    msg: self.message(2)?,
                }
            }
            "drop" => {
                self.arity(0, 1)?;
                match w.get(1).copied().unwrap_or("request") {
                    "request" => Action::Drop(DropKind::Request),
                    "response" => Action::Drop(DropKind::Response),
                    other => return Err(format!("drop takes request or response, got {other:?}")),
                }
            }
            "tamper" => {
                self.arity(2, 2)?;
                Action::Tamper {
                    msg: self.message(1)?,
                    index: self.number(2)?,
                }
            }
            "advance" => {
                self.arity(1, 1)?;
                Action::Advance { secs: self.number(1)? }
            }
            other => return Err(format!("unknown action {other:?}")),
        };
        Ok(Some(StepKind::Act(action)))
    }

    fn parse_expectation(&mut self) -> Result<Expectation, String> {
        let w = &self.words[1..];
        let Some(&what) = w.first() else {
            return Err("expect needs an outcome".into());
        };
        let arity = |n: usize| {
            if w.len() - 1 == n {
                Ok(())
            } else {
                Err(format!("expect {what} takes {n} arguments, got {}", w.len() - 1))
            }
        };
        // Indices below are into self.words, hence the +1.
        Ok(match what {
            "escrow" => {
                arity(2)?;
                let state = match w[2] {
                    "held" => EscrowState::Held,
                    "released" => EscrowState::Released,
                    other => return Err(format!("escrow state is held or released, got {other:?}")),
                };
                Expectation::Escrow {
                    msg: self.message(2)?,
                    state,
                }
            }
            "opened" | "holds_key" => {
                arity(2)?;
                let msg = self.message(2)?;
                let yes = self.yes_no(3)?;
                if what == "opened" {
                    Expectation::Opened { msg, yes }
                } else {
                    Expectation::HoldsKey { msg, yes }
                }
            }
            "last_error" => {
                arity(1)?;
                Expectation::LastError {
                    code: (w[1] != "none").then(|| w[1].to_owned()),
                }
            }
            "nrr" => {
                arity(2)?;
                let logged = match w[2] {
                    "logged" => true,
                    "absent" => false,
                    other => return Err(format!("nrr is logged or absent, got {other:?}")),
                };
                Expectation::Nrr {
                    msg: self.message(2)?,
                    logged,
                }
            }
            "evidence" => {
                arity(3)?;
                let verified = match w[3] {
                    "verified" => true,
                    "none" => false,
                    other => return Err(format!("evidence is verified or none, got {other:?}")),
                };
                Expectation::Evidence {
                    name: self.principal(2)?,
                    msg: self.message(3)?,
                    verified,
                }
            }
            "verdict" => {
                arity(3)?;
                let side = match w[1] {
                    "sender" => Side::Sender,
                    "receiver" => Side::Receiver,
                    other => return Err(format!("verdict side is sender or receiver, got {other:?}")),
                };
                let verdict = match w[3] {
                    "proved" => Verdict::Proved,
                    "not_proved" => Verdict::NotProved,
                    "forged" => Verdict::EvidenceForged,
                    other => return Err(format!("verdict is proved, not_proved or forged, got {other:?}")),
                };
                Expectation::Verdict {
                    side,
                    msg: self.message(3)?,
                    verdict,
                }
            }
            "invariants" => {
                arity(0)?;
                Expectation::Invariants
            }
            other => return Err(format!("unknown expectation {other:?}")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpectationResult {
    pub line: usize,
    pub expectation: Expectation,
    pub passed: bool,
    pub observed: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogSummary {
    pub message: String,
    pub message_id: String,
    pub kind: String,
    pub sender: String,
    pub receiver: String,
    pub digest: String,
    pub reverifies: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptReport {
    pub seed: u64,
    pub wire: Vec<WireEvent>,
    /// (label, message id, state) for every message D acknowledged.
    pub escrow: Vec<(String, String, EscrowState)>,
    pub evidence_log: Vec<LogSummary>,
    pub expectations: Vec<ExpectationResult>,
    pub violations: Vec<Violation>,
}

impl TranscriptReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.expectations.iter().all(|e| e.passed)
    }
}

impl fmt::Display for TranscriptReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "seed {}", self.seed)?;
        writeln!(f, "wire:")?;
        for event in &self.wire {
            writeln!(f, "  {event}")?;
        }
        writeln!(f, "escrow:")?;
        for (label, id, state) in &self.escrow {
            writeln!(f, "  {label} {id} {state}")?;
        }
        writeln!(f, "evidence log:")?;
        for entry in &self.evidence_log {
            let check = if entry.reverifies {
                "reverifies"
            } else {
                "DOES NOT REVERIFY"
            };
            writeln!(
                f,
                "  {} {} {} {} -> {} digest {} ({check})",
                entry.message, entry.message_id, entry.kind, entry.sender, entry.receiver, entry.digest
            )?;
        }
        writeln!(f, "expectations:")?;
        for e in &self.expectations {
            let mark = if e.passed { "PASS" } else { "FAIL" };
            writeln!(
                f,
                "  {mark} line {}: {} (observed {})",
                e.line, e.expectation, e.observed
            )?;
        }
        if self.violations.is_empty() {
            writeln!(f, "violations: none")?;
        } else {
            writeln!(f, "violations:")?;
            for v in &self.violations {
                writeln!(f, "  {v}")?;
            }
        }
        write!(f, "result: {}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// Runs a scenario against a fresh in-memory server.
pub fn run_scenario(scenario: &Scenario) -> TranscriptReport {
    let clock = Arc::new(ManualClock::new(START_TIME));
    let server = Server::in_memory(
        PasswordCost::TESTING,
        clock.clone(),
        test_rng(derive_seed(scenario.seed, "server")),
    );
    run_scenario_on(scenario, World::with_backend(scenario.seed, clock, server))
}

/// Runs a scenario in a prepared world, e.g. one around a faulty server.
pub fn run_scenario_on<D: Delivery + Inspect>(scenario: &Scenario, mut world: World<D>) -> TranscriptReport {
    world.set_suite(scenario.suite);
    let mut expectations = Vec::new();
    for step in &scenario.script {
        match &step.kind {
            // Step failures are outcomes, recorded as the last error.
            StepKind::Act(action) => {
                let _ = perform(&mut world, action);
            }
            StepKind::Expect(expectation) => {
                let (passed, observed) = evaluate(&mut world, expectation);
                expectations.push(ExpectationResult {
                    line: step.line,
                    expectation: expectation.clone(),
                    passed,
                    observed,
                });
            }
        }
    }
    report(&world, expectations)
}

fn perform<D: Delivery + Inspect>(world: &mut World<D>, action: &Action) -> Result<(), super::StepError> {
    match action {
        Action::Principal { name, role } => world.add_principal(name, role.clone()),
        Action::Upload { msg, from, to, subject } => world.upload(msg, from, to, subject),
        Action::Resend { msg } => world.resend(msg),
        Action::Fetch { msg } => world.fetch(msg),
        Action::IssueReceipt { msg } => world.issue_receipt(msg),
        Action::SubmitReceipt { msg } => world.submit_receipt(msg),
        Action::Open { msg } => world.open(msg),
        Action::Evidence { name } => world.collect_evidence(name),
        Action::Login { name } => world.login(name),
        Action::ForgeEvidence { name, msg } => world.forge_evidence(name, msg),
        Action::Drop(kind) => {
            world.drop_next(*kind);
            Ok(())
        }
        Action::Replay { msg } => world.replay(msg),
        Action::Tamper { msg, index } => world.tamper(msg, *index),
        Action::Advance { secs } => {
            world.advance(*secs);
            Ok(())
        }
    }
}

fn evaluate<D: Delivery + Inspect>(world: &mut World<D>, expectation: &Expectation) -> (bool, String) {
    let yn = |b: bool| if b { "yes" } else { "no" }.to_owned();
    match expectation {
        Expectation::Escrow { msg, state } => {
            let actual = world.escrow(msg);
            (
                actual == Some(*state),
                actual.map_or("no escrow".into(), |s| s.to_string()),
            )
        }
        Expectation::Opened { msg, yes } => {
            let actual = world.is_opened(msg);
            (actual == *yes, yn(actual))
        }
        Expectation::HoldsKey { msg, yes } => {
            let actual = world.holds_key(msg);
            (actual == *yes, yn(actual))
        }
        Expectation::LastError { code } => {
            let actual = world.last_error().map(|e| e.code.clone());
            (actual == *code, actual.unwrap_or_else(|| "none".into()))
        }
        Expectation::Nrr { msg, logged } => {
            let actual = world.nrr_logged(msg);
            (actual == *logged, if actual { "logged" } else { "absent" }.into())
        }
        Expectation::Evidence { name, msg, verified } => {
            let actual = world.evidence_verified(name, msg);
            (actual == *verified, if actual { "verified" } else { "none" }.into())
        }
        Expectation::Verdict { side, msg, verdict } => match world.verdict(*side, msg) {
            Ok(actual) => (actual == *verdict, actual.to_string()),
            Err(e) => (false, e.to_string()),
        },
        Expectation::Invariants => {
            let n = world.violations().len();
            (n == 0, format!("{n} violations"))
        }
    }
}

fn report<D: Delivery + Inspect>(world: &World<D>, expectations: Vec<ExpectationResult>) -> TranscriptReport {
    let labels: Vec<(String, String)> = world
        .messages()
        .filter_map(|label| world.message_id(label).map(|id| (id.to_string(), label.to_owned())))
        .collect();
    let label_of = |id: &str| {
        labels
            .iter()
            .find(|(i, _)| i == id)
            .map(|(_, l)| l.clone())
            .unwrap_or_else(|| "?".into())
    };
    let escrow = world
        .backend()
        .escrow_states()
        .into_iter()
        .map(|(id, state)| (label_of(id.as_str()), id.to_string(), state))
        .collect();
    let evidence_log = world
        .backend()
        .log_entries_from(0)
        .into_iter()
        .map(|entry| {
            let r = entry.record;
            LogSummary {
                message: label_of(r.message_id.as_str()),
                message_id: r.message_id.to_string(),
                kind: r.kind.to_string(),
                sender: r.sender.to_string(),
                receiver: r.receiver.to_string(),
                digest: r.digest.to_hex(),
                reverifies: r.reverify().is_ok(),
            }
        })
        .collect();
    TranscriptReport {
        seed: world.seed(),
        wire: world.events(),
        escrow,
        evidence_log,
        expectations,
        violations: world.violations().to_vec(),
    }
}
