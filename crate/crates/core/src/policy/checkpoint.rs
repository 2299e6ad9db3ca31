//! Line-oriented text checkpoints.
//!
//! ```text
//! RATCHET-CKPT v1
//! arch=deepsets
//! H=64
//! E=16
//! out_dim=2
//! n=2
//! tau=0
//! seed=3
//! epoch=50
//! param policy.phi1.weight 64x2
//! <row-major values, whitespace separated>
//! param value.phi1.weight 64x2
//! ...
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{ArchConfig, ArchKind, Network};
use crate::autograd::ParamSet;
use crate::error::{CheckpointError, Error, Result};
use crate::physics::{delay_depth, RatchetParams};
use crate::rng::stream_rng;

pub const CHECKPOINT_HEADER: &str = "RATCHET-CKPT v1";
const VALUES_PER_LINE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub n: usize,
    pub tau: f64,
    pub seed: u64,
    pub epoch: usize,
}

/// A policy network, optionally with its value network, plus the training
/// context it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub policy: Network,
    pub value: Option<Network>,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let c = self.policy.config();
        let m = &self.meta;
        let mut s = String::new();
        let _ = writeln!(s, "{CHECKPOINT_HEADER}");
        let _ = writeln!(s, "arch={}", c.kind);
        let _ = writeln!(s, "H={}", c.hidden);
        let _ = writeln!(s, "E={}", c.embed);
        let _ = writeln!(s, "out_dim={}", c.out_dim);
        let _ = writeln!(s, "n={}", c.n);
        let _ = writeln!(s, "tau={}", m.tau);
        let _ = writeln!(s, "seed={}", m.seed);
        let _ = writeln!(s, "epoch={}", m.epoch);
        write_params(&mut s, "policy", self.policy.params());
        if let Some(v) = &self.value {
            write_params(&mut s, "value", v.params());
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().peekable();
        let header = lines.next().map(|(_, l)| l.trim()).unwrap_or("");
        if header != CHECKPOINT_HEADER {
            return Err(CheckpointError::VersionMismatch {
                found: header.to_string(),
                expected: CHECKPOINT_HEADER,
            }
            .into());
        }

        let mut keys = std::collections::BTreeMap::new();
        while let Some((_, line)) = lines.peek() {
            let line = line.trim();
            if line.starts_with("param ") {
                break;
            }
            let (i, line) = lines.next().expect("peeked");
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| malformed(i, "expected key=value"))?;
            keys.insert(k.trim().to_string(), (i, v.trim().to_string()));
        }
        let get = |k: &str| -> Result<(usize, &str)> {
            keys.get(k)
                .map(|(i, v)| (*i, v.as_str()))
                .ok_or_else(|| CheckpointError::Truncated(format!("missing header key `{k}`")).into())
        };
        fn parse<T: std::str::FromStr>(kv: (usize, &str), what: &str) -> Result<T> {
            kv.1.parse().map_err(|_| malformed(kv.0, &format!("bad {what} {:?}", kv.1)))
        }
        let kind: ArchKind = {
            let (i, v) = get("arch")?;
            v.parse().map_err(|_| malformed(i, &format!("unknown arch {v:?}")))?
        };
        let config = ArchConfig {
            kind,
            n: parse(get("n")?, "n")?,
            hidden: parse(get("H")?, "H")?,
            embed: parse(get("E")?, "E")?,
            out_dim: parse(get("out_dim")?, "out_dim")?,
        };
        config.validate()?;
        let meta = CheckpointMeta {
            n: config.n,
            tau: parse(get("tau")?, "tau")?,
            seed: parse(get("seed")?, "seed")?,
            epoch: parse(get("epoch")?, "epoch")?,
        };

        // parameter blocks: header line then values spanning any number of lines
        let mut blocks: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
        let mut open: Option<(String, Vec<usize>, Vec<f64>, usize)> = None;
        for (i, line) in lines {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("param ") {
                if let Some((name, shape, values, want)) = open.take() {
                    if values.len() != want {
                        return Err(truncated_block(&name, values.len(), want));
                    }
                    blocks.push((name, shape, values));
                }
                let mut parts = rest.split_whitespace();
                let name = parts.next().ok_or_else(|| malformed(i, "param without name"))?;
                let dims = parts.next().ok_or_else(|| malformed(i, "param without shape"))?;
                let shape = dims
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| malformed(i, &format!("bad shape {dims:?}")))?;
                let want = shape.iter().product();
                open = Some((name.to_string(), shape, Vec::with_capacity(want), want));
                continue;
            }
            let Some((_, _, values, want)) = open.as_mut() else {
                if line.is_empty() {
                    continue;
                }
                return Err(malformed(i, "values outside a param block"));
            };
            for tok in line.split_whitespace() {
                if values.len() == *want {
                    return Err(malformed(i, "more values than the declared shape"));
                }
                values.push(tok.parse().map_err(|_| malformed(i, &format!("bad value {tok:?}")))?);
            }
        }
        if let Some((name, shape, values, want)) = open.take() {
            if values.len() != want {
                return Err(truncated_block(&name, values.len(), want));
            }
            blocks.push((name, shape, values));
        }

        let mut rng = stream_rng(0, 0);
        let mut policy = Network::new(config, &mut rng)?;
        let has_value = blocks.iter().any(|(n, ..)| n.starts_with("value."));
        let mut value = if has_value { Some(Network::new(config.value_head(), &mut rng)?) } else { None };

        let mut seen = std::collections::HashSet::new();
        for (name, shape, values) in blocks {
            if !seen.insert(name.clone()) {
                return Err(CheckpointError::Malformed {
                    line: 0,
                    message: format!("parameter `{name}` appears twice"),
                }
                .into());
            }
            let (prefix, local) = name
                .split_once('.')
                .ok_or_else(|| CheckpointError::Truncated(format!("unknown parameter `{name}`")))?;
            let target = match (prefix, value.as_mut()) {
                ("policy", _) => policy.params_mut(),
                ("value", Some(v)) => v.params_mut(),
                _ => return Err(CheckpointError::Truncated(format!("unknown parameter `{name}`")).into()),
            };
            let slot = target
                .find(local)
                .ok_or_else(|| CheckpointError::Truncated(format!("unknown parameter `{name}`")))?;
            let p = target.get_mut(slot);
            if p.value.shape() != shape.as_slice() {
                return Err(CheckpointError::ShapeMismatch {
                    name,
                    found: shape,
                    expected: p.value.shape().to_vec(),
                }
                .into());
            }
            p.value.data_mut().copy_from_slice(&values);
        }
        let filled = seen.len();
        let expected = policy.params().len() + value.as_ref().map_or(0, |v| v.params().len());
        if filled != expected {
            return Err(CheckpointError::Truncated(format!(
                "found {filled} parameter blocks, network has {expected}"
            ))
            .into());
        }
        Ok(Self { meta, policy, value })
    }

    /// Verifies the policy can act on `n` particles at delay `tau`.
    /// Recurrent policies additionally need the delay they were trained with.
    pub fn check_compatible(&self, n: usize, tau: f64, params: &RatchetParams) -> Result<()> {
        let depth = delay_depth(tau, params.dt)?;
        self.policy.check_input(n, depth)?;
        if self.policy.config().kind == ArchKind::Rnn && (tau - self.meta.tau).abs() > 1e-9 {
            return Err(Error::Incompatible(format!(
                "rnn policy trained for tau = {}, asked to run at tau = {tau}",
                self.meta.tau
            )));
        }
        Ok(())
    }
}

fn write_params(s: &mut String, prefix: &str, params: &ParamSet) {
    for p in params.iter() {
        let dims: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(s, "param {prefix}.{} {}", p.name, dims.join("x"));
        for chunk in p.value.data().chunks(VALUES_PER_LINE) {
            let row: Vec<String> = chunk.iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
    }
}

fn malformed(line: usize, message: &str) -> Error {
    CheckpointError::Malformed { line: line + 1, message: message.to_string() }.into()
}

fn truncated_block(name: &str, got: usize, want: usize) -> Error {
    CheckpointError::Truncated(format!("parameter `{name}` has {got} of {want} values")).into()
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, ckpt.to_text()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_text(&text)
}
