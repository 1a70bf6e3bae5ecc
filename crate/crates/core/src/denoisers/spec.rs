//! Textual denoiser selection, e.g. `point:mu=0.5` or `remote:tcp=127.0.0.1:9000`.
//!
//! Grammar: `kind[:key=value[,key=value]...]`. Per-channel lists use `/`.
//!
//! | kind      | keys                                                   |
//! |-----------|--------------------------------------------------------|
//! | `point`   | `mu=0.5` or `mu=0.1/0.2/...`, or `targets=FILE`        |
//! | `pattern` | `constant=V`, `border=B,interior=I`, or `targets=FILE` |
//! | `mixture` | `modes=a/b/..,size=S,channels=C`                       |
//! | `remote`  | `cmd=PROGRAM ARGS` or `tcp=HOST:PORT`, `timeout=SECS`  |
//! | `replay`  | `file=FILE`                                            |

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use super::{Denoiser, MixtureField, Pattern, PatternField, PointTarget, RemoteDenoiser, ReplayDenoiser};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenoiserSpec {
    pub kind: String,
    pub params: BTreeMap<String, String>,
    raw: String,
}

impl DenoiserSpec {
    pub fn as_str(&self) -> &str {
        &self.raw
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.params.get(key).map(String::as_str)
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("denoiser `{}` needs `{key}=`", self.kind)))
    }

    fn number<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("bad value for `{key}`: {v:?}")))
            })
            .transpose()
    }
}

fn parse_list(v: &str) -> Result<Vec<f32>> {
    v.split('/')
        .map(|x| {
            x.trim()
                .parse::<f32>()
                .map_err(|_| Error::Config(format!("bad number {x:?}")))
        })
        .collect()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &str) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_string(),
        message: e.to_string(),
    })
}

#[derive(serde::Deserialize)]
#[serde(untagged)]
enum TargetValue {
    Scalar(f32),
    PerChannel(Vec<f32>),
}

impl FromStr for DenoiserSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        if kind.is_empty() {
            return Err(Error::Config("empty denoiser spec".into()));
        }
        let mut params = BTreeMap::new();
        // `cmd=` swallows the rest so commands may contain commas
        let mut rest = rest;
        while !rest.is_empty() {
            let (item, tail) = if rest.starts_with("cmd=") {
                (rest, "")
            } else {
                rest.split_once(',').unwrap_or((rest, ""))
            };
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value in denoiser spec, got {item:?}")))?;
            params.insert(k.trim().to_string(), v.trim().to_string());
            rest = tail;
        }
        Ok(Self {
            kind: kind.to_string(),
            params,
            raw: s.to_string(),
        })
    }
}

impl fmt::Display for DenoiserSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

/// Instantiates the denoiser described by `spec`.
pub fn build_denoiser(spec: &DenoiserSpec) -> Result<Box<dyn Denoiser>> {
    match spec.kind.as_str() {
        "point" => {
            if let Some(path) = spec.get("targets") {
                let table: BTreeMap<String, TargetValue> = read_json(path)?;
                let table = table
                    .into_iter()
                    .map(|(k, v)| {
                        let mu = match v {
                            TargetValue::Scalar(x) => vec![x],
                            TargetValue::PerChannel(xs) => xs,
                        };
                        (k, mu)
                    })
                    .collect();
                Ok(Box::new(PointTarget::from_table(table)))
            } else {
                Ok(Box::new(PointTarget::uniform_per_channel(parse_list(
                    spec.require("mu")?,
                )?)))
            }
        }
        "pattern" => {
            if let Some(path) = spec.get("targets") {
                let table: BTreeMap<String, Pattern> = read_json(path)?;
                return Ok(Box::new(PatternField::from_table(table)));
            }
            let pattern = if let Some(b) = spec.number::<f32>("border")? {
                Pattern::Border {
                    interior: spec.number("interior")?.unwrap_or(0.0),
                    border: b,
                }
            } else if let Some(v) = spec.number::<f32>("constant")? {
                Pattern::Constant { value: v }
            } else if let Some(slope) = spec.number::<f32>("slope")? {
                Pattern::Ramp {
                    base: spec.number("base")?.unwrap_or(0.0),
                    slope,
                    axis: spec.number("axis")?.unwrap_or(0),
                }
            } else {
                return Err(Error::Config(
                    "pattern denoiser needs constant=, border=, slope= or targets=".into(),
                ));
            };
            Ok(Box::new(PatternField::uniform(pattern)))
        }
        "mixture" => {
            let modes = parse_list(spec.require("modes")?)?;
            let size = spec
                .number("size")?
                .ok_or_else(|| Error::Config("mixture needs size=".into()))?;
            let channels = spec.number("channels")?.unwrap_or(1);
            Ok(Box::new(MixtureField::constant_modes(size, channels, &modes)?))
        }
        "remote" => {
            let timeout = spec
                .number::<f64>("timeout")?
                .map(Duration::from_secs_f64)
                .unwrap_or(RemoteDenoiser::DEFAULT_TIMEOUT);
            if let Some(addr) = spec.get("tcp") {
                Ok(Box::new(RemoteDenoiser::connect_tcp(addr, timeout)?))
            } else {
                Ok(Box::new(RemoteDenoiser::spawn(spec.require("cmd")?, timeout)?))
            }
        }
        "replay" => Ok(Box::new(ReplayDenoiser::load(Path::new(spec.require("file")?))?)),
        other => Err(Error::Config(format!(
            "unknown denoiser kind {other:?} (expected point, pattern, mixture, remote or replay)"
        ))),
    }
}
