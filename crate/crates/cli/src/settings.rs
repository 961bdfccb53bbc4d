//! Flat `key = value` settings shared by flags and config files.
//!
//! Every setting is a long flag (`--r-self 5`) and may also appear in the
//! file given by `--config` as `r-self = 5` (`r_self` is accepted too).
//! Flags win over the file, the file wins over defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::parser::ValueSource;
use clap::{Arg, ArgMatches, Command};

/// One configurable setting of a subcommand.
pub struct Key {
    pub name: &'static str,
    pub default: Option<&'static str>,
    pub help: &'static str,
}

pub const fn key(name: &'static str, default: Option<&'static str>, help: &'static str) -> Key {
    Key {
        name,
        default,
        help,
    }
}

pub fn add_keys(mut cmd: Command, keys: &[Key]) -> Command {
    for k in keys {
        let mut arg = Arg::new(k.name).long(k.name).help(k.help).value_name("VALUE");
        if let Some(d) = k.default {
            arg = arg.default_value(d);
        }
        cmd = cmd.arg(arg);
    }
    cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("Settings file of `key = value` lines; flags take precedence"),
    )
}

/// Resolved settings of one invocation.
pub struct Settings {
    values: BTreeMap<&'static str, String>,
    order: Vec<&'static str>,
}

fn read_config_file(path: &Path, keys: &[Key]) -> Result<BTreeMap<&'static str, String>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            anyhow!("{}:{}: expected `key = value`", path.display(), i + 1)
        })?;
        let k = k.trim().replace('_', "-");
        let known = keys.iter().find(|key| key.name == k).ok_or_else(|| {
            let names: Vec<_> = keys.iter().map(|k| k.name).collect();
            anyhow!(
                "{}:{}: unknown key `{k}` (known keys: {})",
                path.display(),
                i + 1,
                names.join(", ")
            )
        })?;
        out.insert(known.name, v.trim().to_string());
    }
    Ok(out)
}

impl Settings {
    pub fn resolve(matches: &ArgMatches, keys: &[Key]) -> Result<Self> {
        let file = match matches.get_one::<String>("config") {
            Some(p) => read_config_file(Path::new(p), keys)?,
            None => BTreeMap::new(),
        };
        let mut values = BTreeMap::new();
        for k in keys {
            let flag = matches.get_one::<String>(k.name);
            let explicit = matches.value_source(k.name) == Some(ValueSource::CommandLine);
            let v = if explicit {
                flag.cloned()
            } else {
                file.get(k.name).cloned().or_else(|| flag.cloned())
            };
            if let Some(v) = v {
                values.insert(k.name, v);
            }
        }
        Ok(Self {
            values,
            order: keys.iter().map(|k| k.name).collect(),
        })
    }

    pub fn opt_str(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(String::as_str)
    }

    pub fn str(&self, name: &str) -> Result<&str> {
        self.opt_str(name)
            .ok_or_else(|| anyhow!("--{name} is required"))
    }

    pub fn path(&self, name: &str) -> Result<PathBuf> {
        self.str(name).map(PathBuf::from)
    }

    pub fn get<T: FromStr>(&self, name: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.str(name)?;
        raw.parse::<T>()
            .map_err(|e| anyhow!("--{name}: cannot parse `{raw}`: {e}"))
    }

    pub fn list<T: FromStr>(&self, name: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.str(name)?;
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>()
                    .map_err(|e| anyhow!("--{name}: cannot parse `{s}`: {e}"))
            })
            .collect()
    }

    /// Settings in `key = value` form, readable back through `--config`.
    pub fn render(&self, command: &str) -> String {
        let mut s = format!("# effective settings of `swan {command}`\n");
        for name in &self.order {
            if let Some(v) = self.values.get(name) {
                let _ = writeln!(s, "{name} = {v}");
            }
        }
        s
    }

    /// Writes the resolved settings into `dir` before any work is done.
    pub fn echo(&self, command: &str, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let path = dir.join("effective_config.txt");
        fs::write(&path, self.render(command))
            .with_context(|| format!("cannot write {}", path.display()))
    }
}

/// Parses `--seeds`: a count `N` means seeds `0..N`; a comma list is used
/// as given.
pub fn parse_seeds(raw: &str) -> Result<Vec<u64>> {
    if raw.contains(',') {
        return raw
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|e| anyhow!("--seeds: `{s}`: {e}"))
            })
            .collect();
    }
    let n: u64 = raw
        .trim()
        .parse()
        .map_err(|e| anyhow!("--seeds: `{raw}`: {e}"))?;
    if n == 0 {
        bail!("--seeds: need at least one seed");
    }
    Ok((0..n).collect())
}
