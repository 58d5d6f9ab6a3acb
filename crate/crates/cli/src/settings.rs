//! Table-driven options. Every key can come from a flag or from a flat JSON
//! config file; flags win. Keys not in the subcommand's table are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use clap::{Arg, ArgMatches, Command};
use serde_json::Value;

#[derive(Debug, Clone, Copy)]
pub enum Kind {
    Num(f64),
    Int(u64),
    Text(&'static str),
}

#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub kind: Kind,
    pub help: &'static str,
}

pub const fn num(name: &'static str, v: f64, help: &'static str) -> Key {
    Key { name, kind: Kind::Num(v), help }
}

pub const fn int(name: &'static str, v: u64, help: &'static str) -> Key {
    Key { name, kind: Kind::Int(v), help }
}

pub const fn text(name: &'static str, v: &'static str, help: &'static str) -> Key {
    Key { name, kind: Kind::Text(v), help }
}

/// Keys shared by every subcommand.
pub const COMMON: &[Key] = &[
    text("out", "tic-out", "output directory"),
    int("seed", 42, "base seed of the random streams"),
];

pub fn subcommand(name: &'static str, about: &'static str, keys: &'static [Key]) -> Command {
    let mut cmd = Command::new(name).about(about).arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("flat JSON object of option overrides"),
    );
    for k in COMMON.iter().chain(keys) {
        let default = match k.kind {
            Kind::Num(v) => v.to_string(),
            Kind::Int(v) => v.to_string(),
            Kind::Text(v) => v.to_string(),
        };
        cmd = cmd.arg(
            Arg::new(k.name)
                .long(k.name)
                .value_name("VALUE")
                .allow_negative_numbers(true)
                .help(format!("{} [default: {default}]", k.help)),
        );
    }
    cmd
}

/// Error in the configuration: reported on one line, exit status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone)]
pub struct Settings {
    values: BTreeMap<&'static str, Value>,
}

impl Settings {
    pub fn resolve(keys: &'static [Key], matches: &ArgMatches) -> Result<Self, ConfigError> {
        let table: Vec<&Key> = COMMON.iter().chain(keys).collect();
        let mut values = BTreeMap::new();
        for k in &table {
            let v = match k.kind {
                Kind::Num(v) => Value::from(v),
                Kind::Int(v) => Value::from(v),
                Kind::Text(v) => Value::from(v),
            };
            values.insert(k.name, v);
        }
        if let Some(path) = matches.get_one::<String>("config") {
            for (key, v) in read_config(Path::new(path))? {
                let Some(k) = table.iter().find(|k| k.name == key) else {
                    return bad(format!("unknown key '{key}' in config file {path}"));
                };
                values.insert(k.name, coerce(k, &v)?);
            }
        }
        for k in &table {
            if let Some(raw) = matches.get_one::<String>(k.name) {
                values.insert(k.name, parse_flag(k, raw)?);
            }
        }
        Ok(Self { values })
    }

    pub fn num(&self, name: &str) -> f64 {
        self.values[name].as_f64().expect("numeric key")
    }

    pub fn int(&self, name: &str) -> u64 {
        self.values[name].as_u64().expect("integer key")
    }

    pub fn usize(&self, name: &str) -> usize {
        self.int(name) as usize
    }

    pub fn text(&self, name: &str) -> &str {
        self.values[name].as_str().expect("text key")
    }
}

fn read_config(path: &Path) -> Result<serde_json::Map<String, Value>, ConfigError> {
    let raw = match std::fs::read_to_string(path) {
        Ok(s) => s,
        Err(e) => return bad(format!("cannot read config file {}: {e}", path.display())),
    };
    match serde_json::from_str::<Value>(&raw) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => bad(format!("config file {} must hold a flat JSON object", path.display())),
        Err(e) => bad(format!("config file {} is not valid JSON: {e}", path.display())),
    }
}

fn coerce(k: &Key, v: &Value) -> Result<Value, ConfigError> {
    let ok = match k.kind {
        Kind::Num(_) => v.as_f64().filter(|x| x.is_finite()).map(Value::from),
        Kind::Int(_) => v.as_u64().map(Value::from),
        Kind::Text(_) => v.as_str().map(Value::from),
    };
    match ok {
        Some(v) => Ok(v),
        None => bad(format!("config key '{}' has the wrong type: {v}", k.name)),
    }
}

fn parse_flag(k: &Key, raw: &str) -> Result<Value, ConfigError> {
    match k.kind {
        Kind::Num(_) => match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Value::from(v)),
            _ => bad(format!("--{} expects a finite number, got '{raw}'", k.name)),
        },
        Kind::Int(_) => match raw.parse::<u64>() {
            Ok(v) => Ok(Value::from(v)),
            Err(_) => bad(format!("--{} expects a non-negative integer, got '{raw}'", k.name)),
        },
        Kind::Text(_) => Ok(Value::from(raw)),
    }
}
