//! Settings from `$EPGP_HOME/config.toml`, overridden by environment
//! variables, overridden in turn by command-line flags.

use std::path::{Path, PathBuf};

use epgp::crypto::AlgorithmSuite;
use epgp::directory::PasswordCost;
use serde::Deserialize;

use crate::CliError;

pub const DEFAULT_SERVER: &str = "127.0.0.1:7878";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    server: Option<String>,
    data_dir: Option<PathBuf>,
    suite: Option<String>,
    password_cost: Option<CostTable>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostTable {
    memory_kib: u32,
    iterations: u32,
    parallelism: u32,
}

#[derive(Debug, Clone)]
pub struct Config {
    pub home: PathBuf,
    pub server: String,
    pub data_dir: PathBuf,
    pub suite: AlgorithmSuite,
    /// Argon2id cost for the server's password hashes and the keyring.
    pub password_cost: PasswordCost,
}

impl Config {
    /// Loads the config for `home`, reading overrides through `env`.
    pub fn load(home: &Path, env: impl Fn(&str) -> Option<String>) -> Result<Self, CliError> {
        let path = home.join("config.toml");
        let file: FileConfig = match std::fs::read_to_string(&path) {
            Ok(text) => toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => FileConfig::default(),
            Err(e) => return Err(CliError::Config(format!("{}: {e}", path.display()))),
        };

        let server = env("EPGP_SERVER")
            .or(file.server)
            .unwrap_or_else(|| DEFAULT_SERVER.to_owned());
        let data_dir = env("EPGP_DATA_DIR")
            .map(PathBuf::from)
            .or(file.data_dir)
            .unwrap_or_else(|| home.join("server"));
        let suite = match env("EPGP_SUITE").or(file.suite) {
            Some(name) => name.parse().map_err(|e| CliError::Config(format!("suite: {e}")))?,
            None => AlgorithmSuite::default(),
        };
        let password_cost = match env("EPGP_PASSWORD_COST") {
            Some(text) => parse_cost(&text)?,
            None => file.password_cost.map(CostTable::into_cost).unwrap_or_default(),
        };
        Ok(Self {
            home: home.to_owned(),
            server,
            data_dir,
            suite,
            password_cost,
        })
    }

    pub fn keyring_path(&self) -> PathBuf {
        self.home.join("keyring.asc")
    }

    pub fn store_dir(&self) -> PathBuf {
        self.home.join("store")
    }
}

impl CostTable {
    fn into_cost(self) -> PasswordCost {
        PasswordCost {
            memory_kib: self.memory_kib,
            iterations: self.iterations,
            parallelism: self.parallelism,
        }
    }
}

/// `memory_kib,iterations,parallelism`
fn parse_cost(text: &str) -> Result<PasswordCost, CliError> {
    let bad = || {
        CliError::Config(format!(
            "EPGP_PASSWORD_COST must be memory_kib,iterations,parallelism, got {text:?}"
        ))
    };
    let parts: Vec<u32> = text
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    match parts.as_slice() {
        [memory_kib, iterations, parallelism] => Ok(PasswordCost {
            memory_kib: *memory_kib,
            iterations: *iterations,
            parallelism: *parallelism,
        }),
        _ => Err(bad()),
    }
}

/// `~/.epgp`, used when neither `--home` nor `$EPGP_HOME` is given.
pub fn default_home() -> PathBuf {
    std::env::var_os("HOME")
        .map(|h| PathBuf::from(h).join(".epgp"))
        .unwrap_or_else(|| PathBuf::from(".epgp"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn env(vars: &[(&str, &str)]) -> impl Fn(&str) -> Option<String> {
        let map: HashMap<String, String> = vars.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        move |k| map.get(k).cloned()
    }

    #[test]
    fn defaults_without_file() {
        let dir = tempfile::tempdir().unwrap();
        let c = Config::load(dir.path(), env(&[])).unwrap();
        assert_eq!(c.server, DEFAULT_SERVER);
        assert_eq!(c.suite, AlgorithmSuite::CLASSIC);
        assert_eq!(c.password_cost, PasswordCost::default());
        assert_eq!(c.data_dir, dir.path().join("server"));
    }

    #[test]
    fn file_then_env() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("config.toml"),
            "server = \"10.0.0.1:1\"\nsuite = \"modern\"\n[password_cost]\nmemory_kib = 64\niterations = 1\nparallelism = 1\n",
        )
        .unwrap();
        let c = Config::load(dir.path(), env(&[])).unwrap();
        assert_eq!(c.server, "10.0.0.1:1");
        assert_eq!(c.suite, AlgorithmSuite::MODERN);
        assert_eq!(c.password_cost, PasswordCost::TESTING);

        let c = Config::load(
            dir.path(),
            env(&[
                ("EPGP_SERVER", "h:2"),
                ("EPGP_SUITE", "classic"),
                ("EPGP_PASSWORD_COST", "128,2,1"),
            ]),
        )
        .unwrap();
        assert_eq!(c.server, "h:2");
        assert_eq!(c.suite, AlgorithmSuite::CLASSIC);
        assert_eq!(c.password_cost.memory_kib, 128);
    }

    #[test]
    fn rejects_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        assert!(Config::load(dir.path(), env(&[("EPGP_PASSWORD_COST", "1,2")])).is_err());
        assert!(Config::load(dir.path(), env(&[("EPGP_SUITE", "rot13")])).is_err());
        std::fs::write(dir.path().join("config.toml"), "colour = \"blue\"\n").unwrap();
        assert!(Config::load(dir.path(), env(&[])).is_err());
    }
}
