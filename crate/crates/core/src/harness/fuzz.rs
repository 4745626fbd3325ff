//! Random interleavings of honest and adversarial calls with the monitor
//! checking every step.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_chacha::ChaCha20Rng;

use crate::server::wire;
use crate::server::{Delivery, EscrowState};
use crate::testkit::{derive_seed, test_rng};

use super::monitor::Violation;
use super::net::DropKind;
use super::world::{Role, Side, StepError, World};
use super::Inspect;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuzzSummary {
    pub seed: u64,
    pub iterations: u64,
    /// Calls made, by kind.
    pub calls: BTreeMap<String, u64>,
    /// Outcomes, by `ok` or error code.
    pub outcomes: BTreeMap<String, u64>,
    pub messages: u64,
    pub released: u64,
    pub log_entries: u64,
    pub wire_events: u64,
    pub violations: Vec<Violation>,
}

impl FuzzSummary {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for FuzzSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "seed {} iterations {}", self.seed, self.iterations)?;
        writeln!(
            f,
            "messages {} released {} log entries {} wire exchanges {}",
            self.messages, self.released, self.log_entries, self.wire_events
        )?;
        let join = |m: &BTreeMap<String, u64>| m.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ");
        writeln!(f, "calls: {}", join(&self.calls))?;
        writeln!(f, "outcomes: {}", join(&self.outcomes))?;
        for v in self.violations.iter().take(20) {
            writeln!(f, "violation: {v}")?;
        }
        write!(f, "violations: {}", self.violations.len())
    }
}

/// Runs `iterations` random calls against a fresh in-memory server.
pub fn fuzz_protocol(iterations: u64, seed: u64) -> FuzzSummary {
    fuzz_protocol_on(iterations, World::new(seed))
}

/// Runs the fuzzer in a prepared world, e.g. one around a faulty server.
pub fn fuzz_protocol_on<D: Delivery + Inspect>(iterations: u64, mut world: World<D>) -> FuzzSummary {
    let seed = world.seed();
    let mut rng = test_rng(derive_seed(seed, "fuzz"));
    world.set_max_body(512);
    let cast = [
        ("alice", Role::Honest),
        ("bob", Role::Honest),
        ("carol", Role::Honest),
        ("sam", Role::SilentReceiver),
        ("rita", Role::ReplayingReceiver),
        ("mallory", Role::ForgingReceiver),
        ("eve", Role::ImpostorSender { victim: "alice".into() }),
    ];
    for (name, role) in cast.iter().cloned() {
        world.add_principal(name, role).expect("fresh principal registers");
    }
    let names: Vec<&str> = cast.iter().map(|(n, _)| *n).collect();

    let mut fuzz = Fuzzer {
        world,
        rng: &mut rng,
        names,
        labels: Vec::new(),
        live: Vec::new(),
        calls: BTreeMap::new(),
        outcomes: BTreeMap::new(),
    };
    for _ in 0..iterations {
        fuzz.step();
    }

    let Fuzzer {
        world,
        calls,
        outcomes,
        labels,
        ..
    } = fuzz;
    let states = world.backend().escrow_states();
    FuzzSummary {
        seed,
        iterations,
        calls,
        outcomes,
        messages: labels.len() as u64,
        released: states.iter().filter(|(_, s)| *s == EscrowState::Released).count() as u64,
        log_entries: world.backend().log_entries_from(0).len() as u64,
        wire_events: world.events().len() as u64,
        violations: world.violations().to_vec(),
    }
}

struct Fuzzer<'a, D> {
    world: World<D>,
    rng: &'a mut ChaCha20Rng,
    names: Vec<&'static str>,
    labels: Vec<String>,
    /// Labels D acknowledged with an id.
    live: Vec<String>,
    calls: BTreeMap<String, u64>,
    outcomes: BTreeMap<String, u64>,
}

impl<D: Delivery + Inspect> Fuzzer<'_, D> {
    fn name(&mut self) -> &'static str {
        self.names.choose(self.rng).copied().expect("cast is not empty")
    }

    /// Mostly recent messages D acknowledged, so that flows make progress.
    fn label(&mut self) -> Option<String> {
        let pool = if self.live.is_empty() || self.rng.gen_bool(0.05) {
            &self.labels
        } else {
            &self.live
        };
        if pool.is_empty() {
            return None;
        }
        let n = pool.len();
        let index = if self.rng.gen_bool(0.7) {
            n - 1 - self.rng.gen_range(0..n.min(6))
        } else {
            self.rng.gen_range(0..n)
        };
        Some(pool[index].clone())
    }

    fn record(&mut self, call: &str, result: Result<(), StepError>) {
        *self.calls.entry(call.to_owned()).or_default() += 1;
        let outcome = match result {
            Ok(()) => "ok".to_owned(),
            Err(e) => e.code,
        };
        if outcome == "AuthRequired" {
            // Clients log in again when their session is gone.
            for name in self.names.clone() {
                let _ = self.world.login(name);
            }
        }
        *self.outcomes.entry(outcome).or_default() += 1;
    }

    fn note_live(&mut self, label: &str) {
        if self.world.message_id(label).is_some() && !self.live.iter().any(|l| l == label) {
            self.live.push(label.to_owned());
        }
    }

    fn step(&mut self) {
        let roll = self.rng.gen_range(0..100);
        let label = self.label();
        let (call, result) = match (roll, label) {
            (0..=13, _) | (_, None) => {
                let from = self.name();
                let to = loop {
                    let to = self.name();
                    if to != from {
                        break to;
                    }
                };
                let label = format!("m{}", self.labels.len() + 1);
                self.labels.push(label.clone());
                let result = self.world.upload(&label, from, to, "fuzz");
                self.note_live(&label);
                ("upload", result)
            }
            (14..=38, Some(l)) => self.progress(&l),
            (39..=44, Some(l)) => ("fetch", self.world.fetch(&l)),
            (45..=48, Some(l)) => ("issue_receipt", self.world.issue_receipt(&l)),
            (49..=52, Some(l)) => ("submit_receipt", self.world.submit_receipt(&l)),
            (53..=56, Some(l)) => ("open", self.world.open(&l)),
            (57..=62, _) => {
                let name = self.name();
                ("evidence", self.world.collect_evidence(name))
            }
            (63..=65, Some(l)) => {
                let index = self.rng.gen_range(0..128);
                ("mutated_receipt", self.world.submit_mutated_receipt(&l, index))
            }
            (66..=68, Some(l)) => {
                let actor = self.name();
                ("foreign_receipt", self.world.submit_receipt_as(actor, &l))
            }
            (69..=71, Some(l)) => {
                let actor = self.name();
                ("foreign_fetch", self.world.fetch_as(actor, &l))
            }
            (72..=75, Some(l)) => ("replay_receipt", self.world.replay(&l)),
            (76..=78, _) => {
                let n = self.world.captured_len();
                let index = self.rng.gen_range(0..n.max(1));
                ("replay_captured", self.world.replay_captured(index))
            }
            (79..=80, _) => {
                let kind = if self.rng.gen_bool(0.5) {
                    DropKind::Request
                } else {
                    DropKind::Response
                };
                self.world.drop_next(kind);
                ("drop", Ok(()))
            }
            (81..=83, Some(l)) => {
                let index = self.rng.gen_range(0..4096);
                ("tamper", self.world.tamper(&l, index))
            }
            (84..=85, _) => {
                let line = self.garbage();
                ("garbage", self.world.inject(&line))
            }
            (86..=87, _) => {
                let name = self.name();
                self.world.corrupt_token(name);
                ("corrupt_token", Ok(()))
            }
            (88..=89, _) => {
                let secs = self.rng.gen_range(0..600);
                self.world.advance(secs);
                ("advance", Ok(()))
            }
            (90..=92, _) => {
                let name = self.name();
                ("login", self.world.login(name))
            }
            (93..=94, _) => {
                let name = self.name();
                ("inbox", self.world.inbox(name).map(|_| ()))
            }
            (95, Some(l)) => ("delete", self.world.delete(&l)),
            (96, Some(l)) => {
                let result = self.world.resend(&l);
                self.note_live(&l);
                ("resend", result)
            }
            (_, Some(l)) => {
                let side = if self.rng.gen_bool(0.7) {
                    Side::Sender
                } else {
                    Side::Receiver
                };
                ("verdict", self.world.verdict(side, &l).map(|_| ()))
            }
        };
        self.record(call, result);
    }

    /// The next step an honest flow would take for `label`.
    fn progress(&mut self, label: &str) -> (&'static str, Result<(), StepError>) {
        let w = &mut self.world;
        if !w.is_fetched(label) {
            ("fetch", w.fetch(label))
        } else if !w.has_receipt(label) {
            ("issue_receipt", w.issue_receipt(label))
        } else if !w.holds_key(label) {
            ("submit_receipt", w.submit_receipt(label))
        } else if !w.is_opened(label) {
            ("open", w.open(label))
        } else {
            let sender = w.sender_of(label).unwrap_or_default().to_owned();
            ("evidence", w.collect_evidence(&sender))
        }
    }

    fn garbage(&mut self) -> String {
        const VERBS: [&str; 9] = [
            "FETCH", "RECEIPT", "UPLOAD", "EVIDENCE", "ACK", "DISPUTE", "DELETE", "PUBKEY", "BOGUS",
        ];
        let verb = VERBS.choose(self.rng).copied().expect("verbs");
        let count = self.rng.gen_range(0..4);
        let args: Vec<Vec<u8>> = (0..count)
            .map(|_| {
                let mut arg = vec![0u8; self.rng.gen_range(0..48)];
                self.rng.fill_bytes(&mut arg);
                arg
            })
            .collect();
        let refs: Vec<&[u8]> = args.iter().map(Vec::as_slice).collect();
        let mut line = wire::encode_request(verb, &refs);
        if self.rng.gen_bool(0.2) {
            // Not even valid radix-64.
            line.push_str(" !!*");
        }
        line
    }
}
