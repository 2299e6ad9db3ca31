//! Flat `key=value` run configuration.
//!
//! Values are layered: built-in defaults, then a config file, then command
//! line flags. Every resolved value is written back into the run manifest,
//! which is itself a valid config file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::bench::{EvalBudget, PolicySpec, DEFAULT_ENSEMBLE};
use crate::error::{Error, Result};
use crate::physics::{PotentialKind, RatchetParams};
use crate::policy::{ArchConfig, ArchKind, DEFAULT_EMBED, DEFAULT_HIDDEN};
use crate::ppo::{table_batch, PpoConfig};

/// Every accepted key with its default; `None` means unset unless given.
const KEYS: &[(&str, Option<&str>)] = &[
    ("n", Some("1")),
    ("tau", Some("0")),
    ("potential", Some("smooth")),
    ("seed", Some("0")),
    ("duration", Some("50")),
    ("ensemble", Some("32")),
    ("policy", Some("greedy")),
    ("t_on", Some("0.03")),
    ("t_off", Some("0.04")),
    ("u_on", Some("auto")),
    ("u_off", Some("auto")),
    ("x0", Some("auto")),
    ("search_ensemble", Some("8")),
    ("search_duration", Some("10")),
    ("checkpoint", None),
    ("runs", None),
    ("n_list", None),
    ("tau_list", None),
    ("resolution", Some("100")),
    ("arch", Some("deepsets")),
    ("hidden", Some("64")),
    ("embed", Some("16")),
    ("seeds", Some("1")),
    ("T", Some("2000")),
    ("epochs", Some("400")),
    ("gamma", Some("0.999")),
    ("lambda", Some("0.95")),
    ("clip_eps", Some("0.2")),
    ("d_targ", Some("0.01")),
    ("iters_pi", Some("625")),
    ("iters_v", Some("625")),
    ("lr_pi", Some("3e-4")),
    ("lr_v", Some("1e-3")),
    ("M", Some("auto")),
    ("B", Some("auto")),
];

/// Parses `key=value` lines; `#` starts a comment line, blank lines are
/// skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::config(format!("line {}", i + 1), format!("expected key=value, got {line:?}"))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Fully resolved configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Defaults, overridden by `file` pairs, overridden by `flags`.
    pub fn resolve(file: &[(String, String)], flags: &[(String, String)]) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (k, v) in KEYS {
            if let Some(v) = v {
                values.insert(k.to_string(), v.to_string());
            }
        }
        for (k, v) in file.iter().chain(flags) {
            if !KEYS.iter().any(|(known, _)| known == k) {
                return Err(Error::config(k.clone(), "unknown key"));
            }
            values.insert(k.clone(), v.clone());
        }
        let mut cfg = Self { values };
        // batch sizes follow the particle count unless pinned
        let n = cfg.n()?;
        let (m, b) = table_batch(n);
        if cfg.raw("M") == Some("auto") {
            cfg.values.insert("M".into(), m.to_string());
        }
        if cfg.raw("B") == Some("auto") {
            cfg.values.insert("B".into(), b.to_string());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::resolve(&parse_pairs(text)?, &[])
    }

    fn validate(&self) -> Result<()> {
        self.params()?;
        self.budget()?;
        self.ppo()?;
        self.arch()?;
        self.tau()?;
        self.resolution()?;
        self.seeds()?;
        self.policy_kind()?;
        self.n_list()?;
        self.tau_list()?;
        for key in ["u_on", "u_off", "x0"] {
            self.auto_or::<f64>(key)?;
        }
        self.search_budget()?;
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key).ok_or_else(|| Error::config(key, "required but not set"))?;
        raw.parse().map_err(|_| Error::config(key, format!("cannot parse {raw:?}")))
    }

    /// `None` for the literal `auto`.
    pub fn auto_or<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            Some("auto") | None => Ok(None),
            Some(_) => self.get(key).map(Some),
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        let Some(raw) = self.raw(key) else { return Ok(None) };
        let items: Vec<T> = raw
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::config(key, format!("cannot parse list {raw:?}")))?;
        if items.is_empty() {
            return Err(Error::config(key, "empty list"));
        }
        Ok(Some(items))
    }

    pub fn n(&self) -> Result<usize> {
        let n: usize = self.get("n")?;
        if n == 0 {
            return Err(Error::config("n", "must be >= 1"));
        }
        Ok(n)
    }

    pub fn tau(&self) -> Result<f64> {
        let tau: f64 = self.get("tau")?;
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(Error::config("tau", format!("must be >= 0, got {tau}")));
        }
        Ok(tau)
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")
    }

    pub fn seeds(&self) -> Result<usize> {
        let s: usize = self.get("seeds")?;
        if s == 0 {
            return Err(Error::config("seeds", "must be >= 1"));
        }
        Ok(s)
    }

    pub fn resolution(&self) -> Result<usize> {
        let r: usize = self.get("resolution")?;
        if r == 0 {
            return Err(Error::config("resolution", "must be >= 1"));
        }
        Ok(r)
    }

    pub fn checkpoint(&self) -> Option<PathBuf> {
        self.raw("checkpoint").map(PathBuf::from)
    }

    /// Run directories for best-of selection.
    pub fn runs(&self) -> Option<Vec<PathBuf>> {
        self.raw("runs").map(|r| r.split(',').map(|p| PathBuf::from(p.trim())).collect())
    }

    pub fn n_list(&self) -> Result<Option<Vec<usize>>> {
        let l = self.list::<usize>("n_list")?;
        if l.as_ref().is_some_and(|l| l.contains(&0)) {
            return Err(Error::config("n_list", "particle counts must be >= 1"));
        }
        Ok(l)
    }

    pub fn tau_list(&self) -> Result<Option<Vec<f64>>> {
        let l = self.list::<f64>("tau_list")?;
        if l.as_ref().is_some_and(|l| l.iter().any(|t| !(t.is_finite() && *t >= 0.0))) {
            return Err(Error::config("tau_list", "delays must be >= 0"));
        }
        Ok(l)
    }

    pub fn params(&self) -> Result<RatchetParams> {
        let potential: PotentialKind = self
            .get::<String>("potential")?
            .parse()
            .map_err(|e: Error| Error::config("potential", e.to_string()))?;
        Ok(RatchetParams::with_potential(potential))
    }

    pub fn budget(&self) -> Result<EvalBudget> {
        let b = EvalBudget {
            duration: self.get("duration")?,
            ensemble: self.get("ensemble")?,
            seed: self.seed()?,
        };
        b.validate(&self.params()?).map_err(|e| Error::config("duration/ensemble", e.to_string()))?;
        Ok(b)
    }

    /// Budget for grid searches over baseline parameters.
    pub fn search_budget(&self) -> Result<EvalBudget> {
        let b = EvalBudget {
            duration: self.get("search_duration")?,
            ensemble: self.get("search_ensemble")?,
            // a stream independent of the final evaluation
            seed: self.seed()?.wrapping_add(0x5eed),
        };
        b.validate(&self.params()?)
            .map_err(|e| Error::config("search_duration/search_ensemble", e.to_string()))?;
        Ok(b)
    }

    pub fn ppo(&self) -> Result<PpoConfig> {
        let cfg = PpoConfig {
            t: self.get("T")?,
            epochs: self.get("epochs")?,
            gamma: self.get("gamma")?,
            lambda: self.get("lambda")?,
            clip_eps: self.get("clip_eps")?,
            d_targ: self.get("d_targ")?,
            iters_pi: self.get("iters_pi")?,
            iters_v: self.get("iters_v")?,
            lr_pi: self.get("lr_pi")?,
            lr_v: self.get("lr_v")?,
            m: self.get("M")?,
            b: self.get("B")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn arch(&self) -> Result<ArchConfig> {
        let kind: ArchKind =
            self.get::<String>("arch")?.parse().map_err(|e: Error| Error::config("arch", e.to_string()))?;
        let cfg = ArchConfig {
            hidden: self.get("hidden")?,
            embed: self.get("embed")?,
            ..ArchConfig::policy(kind, self.n()?)
        };
        cfg.validate().map_err(|e| Error::config("hidden/embed", e.to_string()))?;
        Ok(cfg)
    }

    fn policy_kind(&self) -> Result<String> {
        let p: String = self.get("policy")?;
        const KNOWN: [&str; 7] = ["off", "on", "periodic", "greedy", "threshold", "mnd", "network"];
        if !KNOWN.contains(&p.as_str()) {
            return Err(Error::config(
                "policy",
                format!("unknown policy {p:?} (expected one of {})", KNOWN.join(", ")),
            ));
        }
        Ok(p)
    }

    /// The baseline named by `policy`, with explicit parameters. `auto`
    /// thresholds and offsets are left for the caller to search.
    pub fn baseline(&self) -> Result<BaselineChoice> {
        Ok(match self.policy_kind()?.as_str() {
            "off" => BaselineChoice::Fixed(PolicySpec::Off),
            "on" => BaselineChoice::Fixed(PolicySpec::On),
            "greedy" => BaselineChoice::Fixed(PolicySpec::Greedy),
            "periodic" => {
                let (t_on, t_off) = (self.get("t_on")?, self.get("t_off")?);
                if !(t_on > 0.0 && t_off > 0.0) {
                    return Err(Error::config("t_on/t_off", "must both be > 0"));
                }
                BaselineChoice::Fixed(PolicySpec::Periodic { t_on, t_off })
            }
            "threshold" => match (self.auto_or("u_on")?, self.auto_or("u_off")?) {
                (Some(u_on), Some(u_off)) => BaselineChoice::Fixed(PolicySpec::Threshold { u_on, u_off }),
                (None, None) => BaselineChoice::SearchThresholds,
                _ => return Err(Error::config("u_on/u_off", "set both or leave both auto")),
            },
            "mnd" => match self.auto_or("x0")? {
                Some(x0) => BaselineChoice::Fixed(PolicySpec::Mnd { x0 }),
                None => BaselineChoice::SearchX0,
            },
            _ => BaselineChoice::Network,
        })
    }

    /// Manifest text: metadata comments, then every resolved key.
    pub fn to_manifest(&self, command: &str, comments: &[(&str, String)]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# ratchet run manifest");
        let _ = writeln!(s, "# command={command}");
        for (k, v) in comments {
            let _ = writeln!(s, "# {k}={v}");
        }
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

/// Reads a `# command=` line from a manifest.
pub fn manifest_command(text: &str) -> Option<String> {
    text.lines()
        .filter_map(|l| l.trim().strip_prefix('#'))
        .filter_map(|l| l.trim().strip_prefix("command="))
        .map(|c| c.trim().to_string())
        .next()
}

#[derive(Clone, Debug)]
pub enum BaselineChoice {
    Fixed(PolicySpec),
    SearchThresholds,
    SearchX0,
    Network,
}

const _: () = {
    // keep the table in step with the library defaults
    assert!(DEFAULT_HIDDEN == 64 && DEFAULT_EMBED == 16);
    assert!(DEFAULT_ENSEMBLE == 32);
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{DEFAULT_T_OFF, DEFAULT_T_ON};
    use crate::bench::DEFAULT_DURATION;

    fn flags(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_match_library() {
        let c = RunConfig::resolve(&[], &[]).unwrap();
        assert_eq!(c.get::<f64>("duration").unwrap(), DEFAULT_DURATION);
        assert_eq!(c.get::<f64>("t_on").unwrap(), DEFAULT_T_ON);
        assert_eq!(c.get::<f64>("t_off").unwrap(), DEFAULT_T_OFF);
        assert_eq!(c.ppo().unwrap(), PpoConfig::for_n(1));
    }

    #[test]
    fn batch_sizes_follow_n() {
        let c = RunConfig::resolve(&flags(&[("n", "64")]), &[]).unwrap();
        assert_eq!((c.ppo().unwrap().m, c.ppo().unwrap().b), (16, 512));
        let c = RunConfig::resolve(&flags(&[("n", "1")]), &[]).unwrap();
        assert_eq!((c.ppo().unwrap().m, c.ppo().unwrap().b), (1024, 4096));
        let c = RunConfig::resolve(&flags(&[("n", "64"), ("M", "3")]), &[]).unwrap();
        assert_eq!((c.ppo().unwrap().m, c.ppo().unwrap().b), (3, 512));
    }

    #[test]
    fn invalid_values_name_the_key() {
        let err = RunConfig::resolve(&flags(&[("gamma", "1.5")]), &[]).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "gamma"), "{err}");
        let err = RunConfig::resolve(&flags(&[("bogus", "1")]), &[]).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "bogus"));
        let err = RunConfig::resolve(&flags(&[("n", "two")]), &[]).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "n"));
        let err = RunConfig::resolve(&flags(&[("policy", "clever")]), &[]).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "policy"));
        assert!(RunConfig::resolve(&flags(&[("potential", "square")]), &[]).is_err());
        assert!(RunConfig::resolve(&flags(&[("n_list", "1,x")]), &[]).is_err());
    }

    #[test]
    fn flags_override_file() {
        let file = parse_pairs("# comment\nn = 4\nseed=3\n\n").unwrap();
        let c = RunConfig::resolve(&file, &flags(&[("seed", "9")])).unwrap();
        assert_eq!(c.n().unwrap(), 4);
        assert_eq!(c.seed().unwrap(), 9);
        assert!(parse_pairs("novalue").is_err());
    }

    #[test]
    fn manifest_round_trips() {
        let c = RunConfig::resolve(&flags(&[("n", "8"), ("policy", "periodic"), ("n_list", "1,2")]), &[])
            .unwrap();
        let text = c.to_manifest("sweep", &[("version", "0.1.0".into())]);
        assert_eq!(manifest_command(&text).as_deref(), Some("sweep"));
        assert_eq!(RunConfig::from_text(&text).unwrap(), c);
        assert_eq!(c.n_list().unwrap(), Some(vec![1, 2]));
    }

    #[test]
    fn baseline_choices() {
        let c = RunConfig::resolve(&flags(&[("policy", "mnd")]), &[]).unwrap();
        assert!(matches!(c.baseline().unwrap(), BaselineChoice::SearchX0));
        let c = RunConfig::resolve(&flags(&[("policy", "mnd"), ("x0", "-0.1")]), &[]).unwrap();
        assert!(matches!(c.baseline().unwrap(), BaselineChoice::Fixed(PolicySpec::Mnd { x0 }) if x0 == -0.1));
        let c = RunConfig::resolve(&flags(&[("policy", "threshold"), ("u_on", "1")]), &[]).unwrap();
        assert!(c.baseline().is_err());
        let c = RunConfig::resolve(&flags(&[("policy", "periodic"), ("t_on", "0")]), &[]).unwrap();
        assert!(c.baseline().is_err());
    }
}
