//! Run configuration: `key=value` files overridden by command-line flags,
//! and the echo written next to every command's outputs.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use clap::{Arg, ArgMatches, Command};
use pong::manifest::Manifest;
use pong::{Error, Result};

/// One configurable key; `default: None` makes it required.
pub struct Key {
    pub name: &'static str,
    pub default: Option<&'static str>,
    pub help: &'static str,
}

pub const fn key(name: &'static str, default: Option<&'static str>, help: &'static str) -> Key {
    Key { name, default, help }
}

pub const ECHO_FILE: &str = "config-echo";

/// Adds `--config` and one `--<key>` flag per key.
pub fn command(name: &'static str, about: &'static str, keys: &[Key]) -> Command {
    let mut cmd = Command::new(name).about(about).arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("key=value file; flags override its entries"),
    );
    for k in keys {
        let help = match k.default {
            Some("") => k.help.to_string(),
            Some(d) => format!("{} [default: {d}]", k.help),
            None => format!("{} [required]", k.help),
        };
        cmd = cmd.arg(Arg::new(k.name).long(k.name).value_name("VALUE").help(help));
    }
    cmd
}

/// Fully resolved settings of one command, in key order.
pub struct RunConfig {
    pub command: &'static str,
    values: Vec<(&'static str, String)>,
}

impl RunConfig {
    /// Flags win over the config file, which wins over defaults.
    pub fn resolve(command: &'static str, keys: &[Key], m: &ArgMatches) -> Result<Self> {
        let mut file = BTreeMap::new();
        if let Some(path) = m.get_one::<String>("config") {
            let manifest = Manifest::read(Path::new(path))?;
            for (k, v) in manifest.entries() {
                if k == "command" {
                    if v != command {
                        return Err(Error::Config(format!("{path} configures '{v}', not '{command}'")));
                    }
                    continue;
                }
                if !keys.iter().any(|x| x.name == k) {
                    return Err(Error::Config(format!("{path}: unknown key '{k}' for '{command}'")));
                }
                file.insert(k.clone(), v.clone());
            }
        }
        let mut values = Vec::with_capacity(keys.len());
        for k in keys {
            let v = m
                .get_one::<String>(k.name)
                .cloned()
                .or_else(|| file.get(k.name).cloned())
                .or_else(|| k.default.map(str::to_string))
                .ok_or_else(|| Error::Config(format!("--{} is required", k.name)))?;
            values.push((k.name, v));
        }
        Ok(RunConfig { command, values })
    }

    pub fn raw(&self, name: &str) -> &str {
        self.values
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| v.as_str())
            .unwrap_or_else(|| panic!("key '{name}' is not declared for '{}'", self.command))
    }

    pub fn get<V: FromStr>(&self, name: &str) -> Result<V> {
        let v = self.raw(name);
        v.parse()
            .map_err(|_| Error::Config(format!("invalid value '{v}' for --{name}")))
    }

    /// Writes `command=` plus every resolved key; replays with `--config`.
    pub fn write_echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::Io { context: format!("creating {}", dir.display()), source: e })?;
        let mut m = Manifest::new();
        m.push("command", self.command);
        for (k, v) in &self.values {
            m.push(*k, v);
        }
        m.write(&dir.join(ECHO_FILE))
    }
}
