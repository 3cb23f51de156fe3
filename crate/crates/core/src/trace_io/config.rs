//! Flat `key = value` configuration files.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored;
//! a key may appear only once. Experiment files use dotted prefixes:
//!
//! ```text
//! # source: exactly one of `trace`, `gen.*`, `live.*`
//! trace = traces/sink.bin
//! gen.seq_len = 128            # plus gen.n_layers, gen.n_heads, gen.sink_strength,
//!                              # gen.locality_window, gen.locality_strength,
//!                              # gen.heavy_hitters = 17:3,60:3, gen.noise_temperature, gen.seed
//! live.seq_len = 128           # plus live.n_layers, live.n_heads, live.d_head,
//!                              # live.vocab_size, live.seed
//! policies = local, h2o, a2sf:0.1, a2sf:0.5, full, local:16
//! budget.ratio = 0.2           # or budget.count = 25
//! mode = replay                # or live (needs a live.* source)
//! renormalize = true
//! out = report.csv
//! dump_masks = masks/
//! seed = 7
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::attn_model::decoder::DecoderConfig;
use crate::attn_model::tracegen::TraceGenConfig;
use crate::error::{Error, Result};
use crate::eviction::{resolve_budget, BudgetConfig};
use crate::metrics::EvalMode;
use crate::scoring::PolicyKind;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "line {}: empty key",
                    lineno + 1
                )));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "line {}: duplicate key {k}",
                    lineno + 1
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.entries.keys().any(|k| k.starts_with(prefix))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {v:?}")))
            })
            .transpose()
    }

    fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    fn required<T: FromStr>(&self, key: &str) -> Result<T> {
        self.parsed(key)?
            .ok_or_else(|| Error::InvalidConfig(format!("missing key {key}")))
    }
}

/// Parses `idx:strength,idx:strength`.
pub fn parse_heavy_hitters(s: &str) -> Result<Vec<(usize, f64)>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let (i, v) = p.split_once(':').ok_or_else(|| {
                Error::InvalidConfig(format!("heavy hitter {p:?} is not idx:strength"))
            })?;
            let idx = i
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad heavy hitter index {i:?}")))?;
            let strength = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad heavy hitter strength {v:?}")))?;
            Ok((idx, strength))
        })
        .collect()
}

impl TraceGenConfig {
    /// Reads `{prefix}seq_len`, `{prefix}sink_strength`, ...; unset keys take
    /// the defaults.
    pub fn from_kv(kv: &KvConfig, prefix: &str) -> Result<Self> {
        let d = TraceGenConfig::default();
        let key = |k: &str| format!("{prefix}{k}");
        let cfg = TraceGenConfig {
            seq_len: kv.or(&key("seq_len"), d.seq_len)?,
            n_layers: kv.or(&key("n_layers"), d.n_layers)?,
            n_heads: kv.or(&key("n_heads"), d.n_heads)?,
            sink_strength: kv.or(&key("sink_strength"), d.sink_strength)?,
            locality_window: kv.or(&key("locality_window"), d.locality_window)?,
            locality_strength: kv.or(&key("locality_strength"), d.locality_strength)?,
            heavy_hitters: match kv.get(&key("heavy_hitters")) {
                Some(s) => parse_heavy_hitters(s)?,
                None => d.heavy_hitters,
            },
            noise_temperature: kv.or(&key("noise_temperature"), d.noise_temperature)?,
            seed: kv.or(&key("seed"), d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A policy as written by the user; Local's window defaults to the budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicySpec {
    Full,
    Local { window: Option<usize> },
    H2o,
    A2sf { alpha: f64 },
}

impl PolicySpec {
    pub fn resolve(&self, budget: usize) -> Result<PolicyKind> {
        let p = match *self {
            PolicySpec::Full => PolicyKind::Full,
            PolicySpec::Local { window } => PolicyKind::Local {
                window: window.unwrap_or(budget),
            },
            PolicySpec::H2o => PolicyKind::A2s,
            PolicySpec::A2sf { alpha } => PolicyKind::A2sf { alpha },
        };
        p.validate()?;
        Ok(p)
    }

    /// Spec with the same name as this one, for `a>b>c` ordering assertions.
    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Full => "full",
            PolicySpec::Local { .. } => "local",
            PolicySpec::H2o => "h2o",
            PolicySpec::A2sf { .. } => "a2sf",
        }
    }

    /// Parses a comma-separated list.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        let v: Vec<Self> = s
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?;
        if v.is_empty() {
            return Err(Error::InvalidConfig("policy list is empty".into()));
        }
        Ok(v)
    }
}

impl FromStr for PolicySpec {
    type Err = Error;

    /// `full`, `local`, `local:W`, `h2o` (alias `a2s`), `a2sf:ALPHA`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let bad_arg = || Error::InvalidConfig(format!("bad argument in policy {s:?}"));
        let spec = match (name.to_ascii_lowercase().as_str(), arg) {
            ("full", None) => PolicySpec::Full,
            ("local", None) => PolicySpec::Local { window: None },
            ("local", Some(w)) => {
                let window: usize = w.parse().map_err(|_| bad_arg())?;
                if window == 0 {
                    return Err(Error::BadWindow);
                }
                PolicySpec::Local {
                    window: Some(window),
                }
            }
            ("h2o" | "a2s", None) => PolicySpec::H2o,
            ("a2sf", Some(a)) => {
                let alpha: f64 = a.parse().map_err(|_| bad_arg())?;
                if !(0.0..1.0).contains(&alpha) {
                    return Err(Error::BadAlpha(alpha));
                }
                PolicySpec::A2sf { alpha }
            }
            ("a2sf", None) => {
                return Err(Error::InvalidConfig(
                    "a2sf needs a forgetting factor, e.g. a2sf:0.2".into(),
                ))
            }
            _ => return Err(Error::InvalidConfig(format!("unknown policy {s:?}"))),
        };
        Ok(spec)
    }
}

/// Budget without its reference length, which is the trace length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BudgetSpec {
    Ratio(f64),
    Count(usize),
}

impl BudgetSpec {
    pub fn resolve(&self, seq_len: usize) -> Result<usize> {
        resolve_budget(&match *self {
            BudgetSpec::Ratio(r) => BudgetConfig::Ratio {
                cache_ratio: r,
                reference_len: seq_len,
            },
            BudgetSpec::Count(c) => BudgetConfig::Absolute(c),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiveSource {
    pub decoder: DecoderConfig,
    pub seq_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceSource {
    File(PathBuf),
    Generate(TraceGenConfig),
    Live(LiveSource),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: TraceSource,
    pub policies: Vec<PolicySpec>,
    pub budget: BudgetSpec,
    pub mode: EvalMode,
    pub renormalize: bool,
    pub out: Option<PathBuf>,
    pub dump_masks: Option<PathBuf>,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        const TOP: [&str; 9] = [
            "trace",
            "policies",
            "budget.ratio",
            "budget.count",
            "mode",
            "renormalize",
            "out",
            "dump_masks",
            "seed",
        ];
        if let Some(k) = kv
            .keys()
            .find(|k| !TOP.contains(k) && !k.starts_with("gen.") && !k.starts_with("live."))
        {
            return Err(Error::InvalidConfig(format!("unknown key {k}")));
        }

        let sources = [
            kv.get("trace").is_some(),
            kv.has_prefix("gen."),
            kv.has_prefix("live."),
        ];
        if sources.iter().filter(|&&s| s).count() != 1 {
            return Err(Error::InvalidConfig(
                "exactly one trace source (trace, gen.*, live.*) is required".into(),
            ));
        }
        let seed: u64 = kv.or("seed", 0)?;
        let source = if let Some(p) = kv.get("trace") {
            TraceSource::File(PathBuf::from(p))
        } else if sources[1] {
            TraceSource::Generate(TraceGenConfig::from_kv(kv, "gen.")?)
        } else {
            let decoder = DecoderConfig {
                n_layers: kv.or("live.n_layers", 4)?,
                n_heads: kv.or("live.n_heads", 4)?,
                d_head: kv.or("live.d_head", 16)?,
                vocab_size: kv.or("live.vocab_size", 64)?,
                seed: kv.or("live.seed", seed)?,
            };
            decoder.validate()?;
            let seq_len = kv.required("live.seq_len")?;
            if seq_len < 2 {
                return Err(Error::InvalidConfig("live.seq_len must be >= 2".into()));
            }
            TraceSource::Live(LiveSource { decoder, seq_len })
        };

        let policies = PolicySpec::parse_list(kv.get("policies").ok_or_else(|| {
            Error::InvalidConfig("missing key policies (at least one policy)".into())
        })?)?;

        let budget = match (
            kv.parsed::<f64>("budget.ratio")?,
            kv.parsed("budget.count")?,
        ) {
            (Some(r), None) => BudgetSpec::Ratio(r),
            (None, Some(c)) => BudgetSpec::Count(c),
            _ => {
                return Err(Error::InvalidConfig(
                    "exactly one of budget.ratio and budget.count is required".into(),
                ))
            }
        };
        budget.resolve(2)?;

        let mode = match kv.get("mode").unwrap_or("replay") {
            "replay" => EvalMode::Replay,
            "live" => EvalMode::Live,
            m => return Err(Error::InvalidConfig(format!("unknown mode {m:?}"))),
        };
        if mode == EvalMode::Live && !matches!(source, TraceSource::Live(_)) {
            return Err(Error::InvalidConfig(
                "mode = live needs a live.* decoder source".into(),
            ));
        }

        Ok(Self {
            source,
            policies,
            budget,
            mode,
            renormalize: parse_flag(kv.get("renormalize").unwrap_or("true"))?,
            out: kv.get("out").map(PathBuf::from),
            dump_masks: kv.get("dump_masks").map(PathBuf::from),
            seed,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&KvConfig::load(path)?)
    }
}

pub fn parse_flag(s: &str) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        other => Err(Error::InvalidConfig(format!("not a boolean: {other:?}"))),
    }
}
