//! The acceptance suite: seven criteria, one PASS or FAIL line each.
//! Runs without the libtest harness so the lines always reach the output.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitCode, Output, Stdio};
use std::time::{Duration, Instant};

use epgp::crypto::AlgorithmSuite;
use serde_json::Value;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("round trip", round_trip),
        ("staged oracle", staged_oracle),
        ("fuzz safety", fuzz_safety),
        ("tamper detection", tamper_detection),
        ("adjudication", adjudication),
        ("codec conformance", codec_conformance),
        ("cli over tcp", cli_over_tcp),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = check();
        let secs = started.elapsed().as_secs_f64();
        let line = match &outcome {
            Ok(detail) => format!("criterion {} {name}: PASS ({detail}; {secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                format!("criterion {} {name}: FAIL ({detail}; {secs:.1}s)", i + 1)
            }
        };
        println!("{line}");
        let _ = std::io::stdout().flush();
    }
    println!("acceptance: {} of {} passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn round_trip() -> Outcome {
    let report = common::round_trip(1000, 2024, AlgorithmSuite::CLASSIC)?;
    if report.elapsed > Duration::from_secs(60) {
        return Err(format!(
            "took {:.1}s, over the 60s budget",
            report.elapsed.as_secs_f64()
        ));
    }
    Ok(format!(
        "{} messages, {} body bytes, byte-exact",
        report.messages, report.bytes
    ))
}

fn staged_oracle() -> Outcome {
    let n = common::staged_oracle_sweep()?;
    Ok(format!("M1-M5 matched in {n} fixed-key cases across both suites"))
}

fn fuzz_safety() -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_epgp-sim"))
        .args(["fuzz", "--iters", "10000", "--seed", "1"])
        .output()
        .map_err(|e| e.to_string())?;
    let stdout = String::from_utf8_lossy(&out.stdout);
    let last = stdout.lines().last().unwrap_or_default().to_owned();
    let released = stdout
        .lines()
        .find(|l| l.starts_with("messages "))
        .unwrap_or_default()
        .to_owned();
    if out.status.success() && last == "violations: 0" {
        Ok(format!("{last}; {released}"))
    } else {
        Err(format!("exit {:?}: {}", out.status.code(), stdout.trim()))
    }
}

fn tamper_detection() -> Outcome {
    let stages = common::tamper_sweep(10_000, 4, AlgorithmSuite::CLASSIC)?;
    let total: usize = stages.values().sum();
    if total != 10_000 {
        return Err(format!("{total} labeled failures"));
    }
    let by_stage: Vec<String> = stages.iter().map(|(s, n)| format!("{s}={n}")).collect();
    Ok(format!("10000 labeled failures, 0 opened: {}", by_stage.join(" ")))
}

fn adjudication() -> Outcome {
    let r = common::adjudication_runs(200);
    if !r.failures.is_empty() {
        return Err(format!("{} failures, first: {}", r.failures.len(), r.failures[0]));
    }
    if r.honest_proved != 200 || r.silent_not_proved != 200 || r.forged_detected != r.forged_cases {
        return Err(format!("{r:?}"));
    }
    Ok(format!(
        "honest Proved {}/200, silent NotProved {}/200, forged EvidenceForged {}/{}",
        r.honest_proved, r.silent_not_proved, r.forged_detected, r.forged_cases
    ))
}

fn codec_conformance() -> Outcome {
    let r = common::radix64_conformance(2000)?;
    let d = common::deflate_conformance(200)?;
    Ok(format!("{r} radix-64 cases, {d} DEFLATE cases both directions"))
}

// ---- criterion 7: real processes over TCP ----

const PASSWORD: &str = "tcp-acceptance-pw";

struct Served {
    child: Child,
    addr: String,
}

impl Drop for Served {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn serve(home: &Path, data_dir: &Path) -> Result<Served, String> {
    let mut child = Command::new(env!("CARGO_BIN_EXE_epgp"))
        .args(["--json", "serve", "--listen", "127.0.0.1:0", "--data-dir"])
        .arg(data_dir)
        .env("EPGP_HOME", home)
        .env("EPGP_PASSWORD_COST", "64,1,1")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| format!("spawn serve: {e}"))?;
    let stdout = child.stdout.take().ok_or("no stdout")?;
    let mut line = String::new();
    BufReader::new(stdout).read_line(&mut line).map_err(|e| e.to_string())?;
    let v: Value = serde_json::from_str(&line).map_err(|e| format!("serve said {line:?}: {e}"))?;
    let addr = v["listening"].as_str().ok_or("no address")?.to_owned();
    Ok(Served { child, addr })
}

struct User {
    home: PathBuf,
}

impl User {
    fn run(&self, server: &Served, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_epgp"))
            .arg("--json")
            .args(["--server", &server.addr])
            .args(args)
            .env("EPGP_HOME", &self.home)
            .env("EPGP_PASSWORD", PASSWORD)
            .env("EPGP_PASSPHRASE", "keyring passphrase")
            .env("EPGP_PASSWORD_COST", "64,1,1")
            .stdin(Stdio::null())
            .output()
            .expect("run epgp")
    }

    fn ok(&self, server: &Served, args: &[&str]) -> Result<Value, String> {
        let out = self.run(server, args);
        let text = String::from_utf8_lossy(&out.stdout);
        if !out.status.success() {
            return Err(format!("`epgp {}` failed: {}", args.join(" "), text.trim()));
        }
        serde_json::from_str(&text).map_err(|e| format!("`epgp {}` printed {text:?}: {e}", args.join(" ")))
    }

    fn fails(&self, server: &Served, args: &[&str]) -> Result<String, String> {
        let out = self.run(server, args);
        if out.status.success() {
            return Err(format!("`epgp {}` unexpectedly succeeded", args.join(" ")));
        }
        let v: Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
        Ok(v["error"].as_str().unwrap_or_default().to_owned())
    }
}

fn expect(cond: bool, what: &str) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.to_owned())
    }
}

fn cli_over_tcp() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("server-data");
    let alice = User {
        home: tmp.path().join("alice"),
    };
    let bob = User {
        home: tmp.path().join("bob"),
    };

    let server = serve(&tmp.path().join("server-home"), &data)?;
    alice.ok(&server, &["register", "alice@tcp.test"])?;
    bob.ok(&server, &["register", "bob@tcp.test"])?;

    let body = "Figures attached.\nAll bytes matter: \u{00e9}\u{00df}\n";
    let body_file = tmp.path().join("body.txt");
    std::fs::write(&body_file, body).map_err(|e| e.to_string())?;
    let sent = alice.ok(
        &server,
        &[
            "send",
            "--to",
            "bob@tcp.test",
            "--subject",
            "Q3",
            "--body-file",
            body_file.to_str().unwrap(),
        ],
    )?;
    let id = sent["message_id"].as_str().ok_or("no message id")?.to_owned();

    let inbox = bob.ok(&server, &["inbox"])?;
    expect(
        inbox["messages"][0]["message_id"] == id.as_str(),
        "message missing from inbox",
    )?;
    let code = bob.fails(&server, &["fetch", &id, "--decrypt"])?;
    expect(code == "KeyUnwrapFailed", &format!("fetch without receipt gave {code}"))?;
    let early = alice.ok(&server, &["dispute", "--claim", "sender", "--id", &id])?;
    expect(
        early["verdict"] == "NotProved",
        "dispute before reading was not NotProved",
    )?;

    let read = bob.ok(&server, &["read", &id])?;
    expect(read["body"] == body, "read body differs")?;
    expect(read["origin"] == "NRO", "no origin evidence")?;

    // Restart between the key release and the evidence fetch.
    let port_before = server.addr.clone();
    drop(server);
    let server = serve(&tmp.path().join("server-home"), &data)?;

    let evidence = alice.ok(&server, &["evidence"])?;
    let items = evidence["evidence"].as_array().ok_or("no evidence list")?;
    expect(
        items.len() == 1,
        &format!("{} evidence items after restart", items.len()),
    )?;
    expect(
        items[0]["message_id"] == id.as_str() && items[0]["kind"] == "NRR",
        "wrong evidence item",
    )?;
    expect(items[0]["verdict"] == "Proved", "NRR did not prove delivery")?;
    let sender_claim = alice.ok(&server, &["dispute", "--claim", "sender", "--id", &id])?;
    let receiver_claim = bob.ok(&server, &["dispute", "--claim", "receiver", "--id", &id])?;
    expect(sender_claim["verdict"] == "Proved", "sender dispute not Proved")?;
    expect(receiver_claim["verdict"] == "Proved", "receiver dispute not Proved")?;

    let again = alice.ok(&server, &["evidence"])?;
    expect(
        again["evidence"].as_array().map_or(0, Vec::len) == 0,
        "evidence forwarded twice",
    )?;

    Ok(format!(
        "register, send, fetch, receipt, key release, evidence over TCP; restart {port_before} -> {} kept the NRR",
        server.addr
    ))
}
