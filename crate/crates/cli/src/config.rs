//! Line-oriented `key=value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use majority_tree::VertexId;
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Simulate,
    Commutation,
    Theta,
    Alpha,
    Trace,
    Resample,
    Chains,
    Audit,
    Tailcheck,
    Neverflip,
}

impl Kind {
    pub const ALL: [Kind; 10] = [
        Kind::Simulate,
        Kind::Commutation,
        Kind::Theta,
        Kind::Alpha,
        Kind::Trace,
        Kind::Resample,
        Kind::Chains,
        Kind::Audit,
        Kind::Tailcheck,
        Kind::Neverflip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Simulate => "simulate",
            Kind::Commutation => "commutation",
            Kind::Theta => "theta",
            Kind::Alpha => "alpha",
            Kind::Trace => "trace",
            Kind::Resample => "resample",
            Kind::Chains => "chains",
            Kind::Audit => "audit",
            Kind::Tailcheck => "tailcheck",
            Kind::Neverflip => "neverflip",
        }
    }
}

impl FromStr for Kind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Kind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown experiment kind '{s}'"))
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Certified,
    Window,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    Identity,
    LargerNeighbors,
    Nearest,
}

/// A validated experiment configuration. Unset knobs take per-kind defaults
/// when the experiment runs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub seed: u64,
    pub replicas: Option<usize>,
    pub radius: Option<usize>,
    pub horizon: Option<f64>,
    pub p: Option<f64>,
    pub grid_step: Option<f64>,
    pub depth: Option<usize>,
    pub distances: Option<Vec<usize>>,
    pub margin: Option<usize>,
    pub window: Option<usize>,
    pub epsilon: Option<f64>,
    pub radii: Option<Vec<usize>>,
    pub policy: Option<Policy>,
    pub k: Option<usize>,
    pub limit: Option<f64>,
    pub rule: Option<Rule>,
    pub times: Option<Vec<f64>>,
    pub target: Option<VertexId>,
    pub resample_clock: Option<bool>,
    pub runs: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(kind: Kind, seed: u64) -> Self {
        ExperimentConfig {
            kind,
            seed,
            replicas: None,
            radius: None,
            horizon: None,
            p: None,
            grid_step: None,
            depth: None,
            distances: None,
            margin: None,
            window: None,
            epsilon: None,
            radii: None,
            policy: None,
            k: None,
            limit: None,
            rule: None,
            times: None,
            target: None,
            resample_clock: None,
            runs: None,
        }
    }

    /// Set one key from its textual value, with the same validation as the parser.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "kind" => self.kind = value.parse()?,
            "seed" => self.seed = parse_num(key, value)?,
            "replicas" => self.replicas = Some(positive(key, parse_num(key, value)?)?),
            "radius" => self.radius = Some(parse_num(key, value)?),
            "horizon" => self.horizon = Some(nonneg(key, parse_num(key, value)?)?),
            "p" => self.p = Some(unit(key, parse_num(key, value)?)?),
            "grid_step" => {
                let h: f64 = parse_num(key, value)?;
                if !(h > 0.0 && h <= 1.0) {
                    return Err(format!("{key}: {h} outside (0, 1]"));
                }
                self.grid_step = Some(h)
            }
            "depth" => self.depth = Some(parse_num(key, value)?),
            "distances" => self.distances = Some(parse_list(key, value)?),
            "margin" => self.margin = Some(parse_num(key, value)?),
            "window" => self.window = Some(parse_num(key, value)?),
            "epsilon" => {
                let e: f64 = parse_num(key, value)?;
                if !(e > 0.0 && e < 0.5) {
                    return Err(format!("{key}: {e} outside (0, 0.5)"));
                }
                self.epsilon = Some(e)
            }
            "radii" => {
                let r: Vec<usize> = parse_list(key, value)?;
                if r.is_empty() || r.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(format!("{key}: must be a nonempty increasing list"));
                }
                self.radii = Some(r)
            }
            "policy" => {
                self.policy = Some(match value {
                    "certified" => Policy::Certified,
                    "window" => Policy::Window,
                    _ => return Err(format!("{key}: expected 'certified' or 'window', got '{value}'")),
                })
            }
            "k" => self.k = Some(parse_num(key, value)?),
            "limit" => self.limit = Some(unit(key, parse_num(key, value)?)?),
            "rule" => {
                self.rule = Some(match value {
                    "identity" => Rule::Identity,
                    "larger-neighbors" => Rule::LargerNeighbors,
                    "nearest" => Rule::Nearest,
                    _ => return Err(format!("{key}: expected identity, larger-neighbors or nearest, got '{value}'")),
                })
            }
            "times" => {
                let t: Vec<f64> = parse_list(key, value)?;
                if t.iter().any(|x| *x < 0.0) || t.windows(2).any(|w| w[0] > w[1]) {
                    return Err(format!("{key}: must be a nondecreasing list of nonnegative times"));
                }
                self.times = Some(t)
            }
            "target" => {
                let v = if value == "root" || value.is_empty() { Ok(VertexId::root()) } else { value.parse() };
                self.target = Some(v.map_err(|e| format!("{key}: {e}"))?)
            }
            "resample_clock" => self.resample_clock = Some(parse_num(key, value)?),
            "runs" => self.runs = Some(positive(key, parse_num(key, value)?)?),
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    /// The configuration as `key=value` lines, in a fixed key order.
    pub fn to_text(&self) -> String {
        let v = serde_json::to_value(self).expect("configs serialize");
        let mut out = String::new();
        for (key, val) in v.as_object().expect("struct serializes to an object") {
            let text = match val {
                serde_json::Value::Null => continue,
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Array(items) => items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
                other => other.to_string(),
            };
            out.push_str(&format!("{key}={text}\n"));
        }
        out
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("{key}: cannot parse '{value}' as {}", std::any::type_name::<T>()))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, String> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse_num(key, s)).collect()
}

fn positive(key: &str, n: usize) -> Result<usize, String> {
    if n == 0 {
        Err(format!("{key}: must be positive"))
    } else {
        Ok(n)
    }
}

fn nonneg(key: &str, x: f64) -> Result<f64, String> {
    if x.is_finite() && x >= 0.0 {
        Ok(x)
    } else {
        Err(format!("{key}: {x} must be finite and nonnegative"))
    }
}

fn unit(key: &str, x: f64) -> Result<f64, String> {
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(format!("{key}: {x} outside [0, 1]"))
    }
}

/// One problem found while parsing, with its 1-based line number.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigIssue {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{}", .0.iter().map(|i| format!("line {}: {}", i.line, i.message)).collect::<Vec<_>>().join("\n"))]
pub struct ConfigErrors(pub Vec<ConfigIssue>);

/// Parse a configuration, collecting every error.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigErrors> {
    let mut issues = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            issues.push(ConfigIssue { line, message: format!("expected key=value, got '{body}'") });
            continue;
        };
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        if let Some(&first) = seen.get(&key) {
            issues.push(ConfigIssue { line, message: format!("duplicate key '{key}' (lines {first} and {line})") });
            continue;
        }
        seen.insert(key.clone(), line);
        pairs.push((line, key, value));
    }
    let kind = match pairs.iter().find(|p| p.1 == "kind") {
        Some((line, _, v)) => match v.parse::<Kind>() {
            Ok(k) => Some(k),
            Err(e) => {
                issues.push(ConfigIssue { line: *line, message: format!("kind: {e}") });
                None
            }
        },
        None => {
            issues.push(ConfigIssue { line: 0, message: "missing key 'kind'".into() });
            None
        }
    };
    let mut config = ExperimentConfig::new(kind.unwrap_or(Kind::Simulate), 0);
    for (line, key, value) in &pairs {
        if key == "kind" {
            continue;
        }
        if let Err(message) = config.set(key, value) {
            issues.push(ConfigIssue { line: *line, message });
        }
    }
    if issues.is_empty() {
        Ok(config)
    } else {
        issues.sort_by_key(|i| i.line);
        Err(ConfigErrors(issues))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theta_example() {
        let c = parse_config("kind=theta\nseed=42\nreplicas=10000\nhorizon=32\nradius=14").unwrap();
        assert_eq!(c.kind, Kind::Theta);
        assert_eq!(c.seed, 42);
        assert_eq!(c.replicas, Some(10000));
        assert_eq!(c.horizon, Some(32.0));
        assert_eq!(c.radius, Some(14));
    }

    #[test]
    fn negative_replicas_names_the_key() {
        let e = parse_config("kind=theta\nreplicas=-1").unwrap_err();
        assert_eq!(e.0.len(), 1);
        assert_eq!(e.0[0].line, 2);
        assert!(e.0[0].message.contains("replicas"));
    }

    #[test]
    fn duplicate_cites_both_lines() {
        let e = parse_config("kind=theta\nseed=1\n# comment\nseed=2\n").unwrap_err();
        assert!(e.to_string().contains("lines 2 and 4"), "{e}");
    }

    #[test]
    fn all_errors_reported() {
        let e = parse_config("kind=alpha\nbogus=1\np=1.5\nhorizon=x\nnoequals").unwrap_err();
        assert_eq!(e.0.iter().map(|i| i.line).collect::<Vec<_>>(), vec![2, 3, 4, 5]);
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = parse_config("# header\n\nkind = chains   # trailing\np=0.5\ntimes=0,1,2.5\n").unwrap();
        assert_eq!(c.times, Some(vec![0.0, 1.0, 2.5]));
    }

    #[test]
    fn text_roundtrip() {
        let c = parse_config("kind=resample\nseed=3\ntarget=10\nresample_clock=true\nradii=4,8").unwrap();
        assert_eq!(parse_config(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn missing_kind() {
        assert!(parse_config("seed=1").is_err());
    }
}
