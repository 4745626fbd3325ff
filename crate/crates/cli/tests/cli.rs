//! The command surface end to end: mailbox conveniences, error codes,
//! the keyring, admin reset and the simulator's exit codes.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use serde_json::Value;

const EPGP: &str = env!("CARGO_BIN_EXE_epgp");
const SIM: &str = env!("CARGO_BIN_EXE_epgp-sim");

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

fn serve(data_dir: &Path) -> Served {
    let mut child = Command::new(EPGP)
        .args(["serve", "--listen", "127.0.0.1:0", "--data-dir"])
        .arg(data_dir)
        .env("EPGP_HOME", data_dir)
        .env("EPGP_PASSWORD_COST", "64,1,1")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .expect("address line")
        .to_owned();
    Served { child, addr }
}

struct User {
    home: PathBuf,
    password: String,
}

impl User {
    fn new(root: &Path, name: &str) -> Self {
        Self {
            home: root.join(name),
            password: format!("{name}-password"),
        }
    }

    fn cmd(&self, server: &Served) -> Command {
        let mut cmd = Command::new(EPGP);
        cmd.args(["--server", &server.addr])
            .env("EPGP_HOME", &self.home)
            .env("EPGP_PASSWORD", &self.password)
            .env("EPGP_PASSPHRASE", "pass phrase")
            .env("EPGP_PASSWORD_COST", "64,1,1")
            .stdin(Stdio::null());
        cmd
    }

    fn run(&self, server: &Served, args: &[&str]) -> Output {
        self.cmd(server).arg("--json").args(args).output().unwrap()
    }

    fn json(&self, server: &Served, args: &[&str]) -> Value {
        let out = self.run(server, args);
        assert!(
            out.status.success(),
            "epgp {args:?}: {}",
            String::from_utf8_lossy(&out.stdout)
        );
        serde_json::from_slice(&out.stdout).unwrap()
    }

    fn error(&self, server: &Served, args: &[&str]) -> String {
        let out = self.run(server, args);
        assert!(!out.status.success(), "epgp {args:?} succeeded");
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        v["error"].as_str().unwrap().to_owned()
    }
}

fn send(user: &User, server: &Served, to: &str, subject: &str, body: &[u8]) -> String {
    let file = user.home.join("outgoing");
    std::fs::write(&file, body).unwrap();
    let v = user.json(
        server,
        &[
            "send",
            "--to",
            to,
            "--subject",
            subject,
            "--body-file",
            file.to_str().unwrap(),
        ],
    );
    v["message_id"].as_str().unwrap().to_owned()
}

#[test]
fn mailbox_commands_and_text_output() {
    let tmp = tempfile::tempdir().unwrap();
    let server = serve(&tmp.path().join("d"));
    let a = User::new(tmp.path(), "a");
    let b = User::new(tmp.path(), "b");
    let c = User::new(tmp.path(), "c");
    a.json(&server, &["register", "a@x"]);
    b.json(&server, &["register", "b@x", "--suite", "classic"]);
    c.json(&server, &["register", "c@x"]);

    let id = send(&a, &server, "b@x", "plans", b"meet at noon");

    // Plain text output: the decrypted mail, then the delivery verdict.
    let out = b.cmd(&server).args(["read", &id]).output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(
        text.contains("From: a@x") && text.contains("Subject: plans") && text.ends_with("meet at noon\n"),
        "{text}"
    );
    let out = a.cmd(&server).arg("evidence").output().unwrap();
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        format!("NRR {id} from b@x: Proved\n")
    );

    // reading twice is served locally
    assert_eq!(b.json(&server, &["read", &id])["fresh"], false);

    let reply = b.json(&server, &["reply", &id, "--body-file", "/dev/null"]);
    let reply_id = reply["message_id"].as_str().unwrap();
    let opened = a.json(&server, &["read", reply_id]);
    assert_eq!(opened["subject"], "Re: plans");
    assert_eq!(opened["body"], "");

    let fwd = b.json(&server, &["forward", &id, "c@x"]);
    let fwd_id = fwd["message_id"].as_str().unwrap();
    let forwarded = c.json(&server, &["read", fwd_id]);
    assert_eq!(forwarded["from"], "b@x");
    assert_eq!(forwarded["subject"], "Fwd: plans");
    assert!(forwarded["body"].as_str().unwrap().ends_with("meet at noon"));

    assert_eq!(c.json(&server, &["delete", fwd_id])["deleted"], fwd_id);
    assert_eq!(c.json(&server, &["inbox"])["messages"].as_array().unwrap().len(), 0);
}

#[test]
fn binary_bodies_survive() {
    let tmp = tempfile::tempdir().unwrap();
    let server = serve(&tmp.path().join("d"));
    let a = User::new(tmp.path(), "a");
    let b = User::new(tmp.path(), "b");
    a.json(&server, &["register", "a@x", "--suite", "modern"]);
    b.json(&server, &["register", "b@x", "--suite", "modern"]);
    let body: Vec<u8> = (0..=255u8).cycle().take(40_000).collect();
    let id = send(&a, &server, "b@x", "bin", &body);
    let out_file = tmp.path().join("out.bin");
    let read = b.json(&server, &["read", &id, "--body-out", out_file.to_str().unwrap()]);
    assert_eq!(read["body"], Value::Null);
    assert_eq!(read["body_len"], 40_000);
    assert_eq!(std::fs::read(&out_file).unwrap(), body);
}

#[test]
fn error_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let server = serve(&tmp.path().join("d"));
    let a = User::new(tmp.path(), "a");
    let b = User::new(tmp.path(), "b");
    assert_eq!(a.error(&server, &["inbox"]), "NoKeyring");
    a.json(&server, &["register", "a@x"]);
    assert_eq!(a.error(&server, &["register", "a@x"]), "KeyringExists");
    assert_eq!(b.error(&server, &["register", "a@x"]), "EmailTaken");
    b.json(&server, &["register", "b@x"]);

    let id = send(&a, &server, "b@x", "s", b"x");
    assert_eq!(a.error(&server, &["fetch", &id]), "NotAddressee");
    assert_eq!(b.error(&server, &["fetch", &id, "--decrypt"]), "KeyUnwrapFailed");
    assert_eq!(b.error(&server, &["read", "nonsense"]), "NotFound");
    assert_eq!(b.error(&server, &["reply", &id]), "NotFound");
    assert_eq!(
        a.error(&server, &["send", "--to", "nobody@x", "--body-file", "/dev/null"]),
        "UnknownPrincipal"
    );

    let wrong = b
        .cmd(&server)
        .args(["--json", "inbox"])
        .env("EPGP_PASSPHRASE", "nope")
        .output()
        .unwrap();
    let v: Value = serde_json::from_slice(&wrong.stdout).unwrap();
    assert_eq!(v["error"], "KeyringLocked");
    let wrong = b
        .cmd(&server)
        .args(["--json", "inbox"])
        .env("EPGP_PASSWORD", "not-the-password")
        .output()
        .unwrap();
    let v: Value = serde_json::from_slice(&wrong.stdout).unwrap();
    assert_eq!(v["error"], "BadCredentials");

    let out = b
        .cmd(&server)
        .args(["inbox"])
        .env("EPGP_PASSPHRASE", "nope")
        .output()
        .unwrap();
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .starts_with("error: KeyringLocked:"));
}

#[test]
fn keyring_never_reaches_the_server() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    let server = serve(&data);
    let a = User::new(tmp.path(), "a");
    a.json(&server, &["register", "a@x"]);
    let keyring = std::fs::read_to_string(a.home.join("keyring.asc")).unwrap();
    assert!(keyring.starts_with("-----BEGIN EPGP KEYRING-----"));
    for entry in std::fs::read_dir(&data).unwrap() {
        let bytes = std::fs::read(entry.unwrap().path()).unwrap_or_default();
        assert!(!String::from_utf8_lossy(&bytes).contains("EPGP KEYRING"));
    }
}

#[test]
fn admin_reset_sets_a_new_password() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    let mut a = User::new(tmp.path(), "a");
    {
        let server = serve(&data);
        a.json(&server, &["register", "a@x"]);
    }
    let out = Command::new(EPGP)
        .args(["--json", "admin-reset", "a@x", "--data-dir"])
        .arg(&data)
        .env("EPGP_HOME", tmp.path().join("admin"))
        .env("EPGP_NEW_PASSWORD", "brand-new-password")
        .env("EPGP_PASSWORD_COST", "64,1,1")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));

    let server = serve(&data);
    assert_eq!(a.error(&server, &["inbox"]), "BadCredentials");
    a.password = "brand-new-password".into();
    a.json(&server, &["inbox"]);
}

#[test]
fn config_file_supplies_the_server() {
    let tmp = tempfile::tempdir().unwrap();
    let server = serve(&tmp.path().join("d"));
    let a = User::new(tmp.path(), "a");
    std::fs::create_dir_all(&a.home).unwrap();
    std::fs::write(
        a.home.join("config.toml"),
        format!("server = \"{}\"\nsuite = \"modern\"\n", server.addr),
    )
    .unwrap();
    let out = Command::new(EPGP)
        .args(["--json", "register", "a@x"])
        .env("EPGP_HOME", &a.home)
        .env("EPGP_PASSWORD", &a.password)
        .env("EPGP_PASSPHRASE", "pass phrase")
        .env("EPGP_PASSWORD_COST", "64,1,1")
        .output()
        .unwrap();
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["registered"], "a@x");
    assert_eq!(v["suite"], "sha256/ed25519/aes256-cbc/rsa2048-oaep");
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

#[test]
fn sim_run_exit_codes() {
    let ok = Command::new(SIM)
        .arg("run")
        .arg(scenario("honest.scn"))
        .output()
        .unwrap();
    assert!(ok.status.success());
    assert!(String::from_utf8(ok.stdout)
        .unwrap()
        .trim_end()
        .ends_with("result: PASS"));

    let seeded = Command::new(SIM)
        .arg("run")
        .arg(scenario("faults.scn"))
        .args(["--seed", "77"])
        .output()
        .unwrap();
    assert!(seeded.status.success(), "{}", String::from_utf8_lossy(&seeded.stdout));

    let tmp = tempfile::tempdir().unwrap();
    let failing = tmp.path().join("f.scn");
    std::fs::write(
        &failing,
        "principal a\nprincipal b\nupload m a b\nexpect escrow m released\n",
    )
    .unwrap();
    let out = Command::new(SIM).arg("run").arg(&failing).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stdout).unwrap().contains("result: FAIL"));

    std::fs::write(&failing, "teleport m\n").unwrap();
    let out = Command::new(SIM).arg("run").arg(&failing).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sim_fuzz_reports_summary() {
    let out = Command::new(SIM)
        .args(["fuzz", "--iters", "300", "--seed", "4"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("seed 4 iterations 300"), "{text}");
    assert!(text.trim_end().ends_with("violations: 0"), "{text}");
}
