//! Flat `key = value` peer configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Relative paths are
//! resolved against the directory of the configuration file. Recognized keys:
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `role` | `input` or `privacy` | required unless `--role` or `--sim` |
//! | `id` | peer id within its role | `0` |
//! | `protocol` | `addition`, `entropy`, `distinctcount`, `eventcorrelation` | required unless `--protocol` |
//! | `listen` | `host:port` a privacy peer listens on | its entry in `privacy_peers` |
//! | `privacy_peers` | comma-separated `host:port` of privacy peers 0..m−1 | required for networked mode |
//! | `input_peers` | number of input peers `n` | required |
//! | `min_input_peers` | input peers needed before a window starts | `n` |
//! | `min_privacy_peers` | privacy peers needed before starting; must be `m` | `m` |
//! | `cert`, `key` | PEM certificate and PKCS#8 key of this peer | required for networked mode |
//! | `trusted` | trust file with lines `privacy <id> <sha256 hex>` / `input <id> <sha256 hex>` | required for networked mode |
//! | `input_dir`, `output_dir` | window files in, results and logs out | `input`, `output` |
//! | `window_secs` | window length for `--realtime` | `300` |
//! | `timeout_secs` | connection and per-window wait limit | `60` |
//! | `field_bits`, `max_k` | field prime of `field_bits` bits with popcount(p−1) ≤ `max_k` | `62`, `3` |
//! | `r` | vector length (histogram size, bit-vector domain K) | required for vector protocols |
//! | `q`, `max_count` | entropy order and largest local count | `2`, `65535` |
//! | `s`, `t_c`, `t_w`, `w_max` | event correlation: events per peer, thresholds, weight bound | `s` and `w_max` required, `t_c = 1`, `t_w = 0` |
//! | `verify_weights`, `verify_keys` | event correlation input verification | `true` |
//! | `seed` | seeds the input peer's share randomness (testing only) | OS randomness |

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use privagg::protocols::check_entropy_params;
use privagg::{find_prime, CorrelationConfig, Field, Role};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Protocol {
    Addition,
    Entropy,
    DistinctCount,
    EventCorrelation,
}

impl Protocol {
    pub const ALL: [Protocol; 4] =
        [Protocol::Addition, Protocol::Entropy, Protocol::DistinctCount, Protocol::EventCorrelation];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Addition => "addition",
            Protocol::Entropy => "entropy",
            Protocol::DistinctCount => "distinctcount",
            Protocol::EventCorrelation => "eventcorrelation",
        }
    }

    /// Protocol id carried in HELLO.
    pub fn id(self) -> u8 {
        match self {
            Protocol::Addition => 1,
            Protocol::Entropy => 2,
            Protocol::DistinctCount => 3,
            Protocol::EventCorrelation => 4,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Protocol::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| format!("unknown protocol {s:?}"))
    }
}

pub fn parse_role(s: &str) -> Result<Role, String> {
    match s {
        "input" => Ok(Role::Input),
        "privacy" => Ok(Role::Privacy),
        _ => Err(format!("unknown role {s:?}; expected input or privacy")),
    }
}

/// Protocol-dependent parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Params {
    pub field_bits: u32,
    pub max_k: u32,
    pub r: usize,
    pub q: u32,
    pub max_count: u64,
    pub s: usize,
    pub t_c: u64,
    pub t_w: u64,
    pub w_max: u64,
    pub verify_weights: bool,
    pub verify_keys: bool,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            field_bits: 62,
            max_k: 3,
            r: 0,
            q: 2,
            max_count: 65535,
            s: 0,
            t_c: 1,
            t_w: 0,
            w_max: 0,
            verify_weights: true,
            verify_keys: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PeerConfig {
    pub role: Option<Role>,
    pub id: usize,
    pub protocol: Option<Protocol>,
    pub listen: Option<String>,
    pub privacy_peers: Vec<String>,
    pub n: usize,
    pub min_input_peers: Option<usize>,
    pub min_privacy_peers: Option<usize>,
    pub cert: Option<PathBuf>,
    pub key: Option<PathBuf>,
    pub trusted: Option<PathBuf>,
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
    pub window_secs: u64,
    pub timeout_secs: u64,
    pub seed: Option<u64>,
    pub params: Params,
    /// Privacy peer count when there is no `privacy_peers` list (simulator).
    pub sim_m: Option<usize>,
}

/// Parses `key = value` lines. Duplicate keys are an error.
pub fn parse_kv(text: &str, file: &Path) -> Result<BTreeMap<String, (usize, String)>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::parse(file, i + 1, 1, "expected key = value"));
        };
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(CliError::parse(file, i + 1, 1, "empty key"));
        }
        if out.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
            return Err(CliError::parse(file, i + 1, 1, format!("duplicate key {key:?}")));
        }
    }
    Ok(out)
}

struct Reader<'a> {
    file: &'a Path,
    base: PathBuf,
    kv: BTreeMap<String, (usize, String)>,
}

impl Reader<'_> {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.kv.remove(key)
    }

    fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e| {
                let col = key.len() + 1;
                CliError::parse(self.file, line, col, format!("{key}: cannot parse {v:?}: {e}"))
            }),
        }
    }

    fn path(&mut self, key: &str) -> Option<PathBuf> {
        self.take(key).map(|(_, v)| self.base.join(v))
    }
}

impl PeerConfig {
    pub fn from_str(text: &str, file: &Path) -> Result<Self, CliError> {
        let base = file.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut r = Reader { file, base, kv: parse_kv(text, file)? };
        let role = match r.take("role") {
            None => None,
            Some((line, v)) => Some(parse_role(&v).map_err(|e| CliError::parse(file, line, 1, e))?),
        };
        let d = Params::default();
        let params = Params {
            field_bits: r.get("field_bits")?.unwrap_or(d.field_bits),
            max_k: r.get("max_k")?.unwrap_or(d.max_k),
            r: r.get("r")?.unwrap_or(d.r),
            q: r.get("q")?.unwrap_or(d.q),
            max_count: r.get("max_count")?.unwrap_or(d.max_count),
            s: r.get("s")?.unwrap_or(d.s),
            t_c: r.get("t_c")?.unwrap_or(d.t_c),
            t_w: r.get("t_w")?.unwrap_or(d.t_w),
            w_max: r.get("w_max")?.unwrap_or(d.w_max),
            verify_weights: r.get("verify_weights")?.unwrap_or(d.verify_weights),
            verify_keys: r.get("verify_keys")?.unwrap_or(d.verify_keys),
        };
        let privacy_peers = r
            .take("privacy_peers")
            .map(|(_, v)| v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
            .unwrap_or_default();
        let cfg = PeerConfig {
            role,
            id: r.get("id")?.unwrap_or(0),
            protocol: r.get("protocol")?,
            listen: r.get("listen")?,
            privacy_peers,
            n: r.get("input_peers")?.unwrap_or(0),
            min_input_peers: r.get("min_input_peers")?,
            min_privacy_peers: r.get("min_privacy_peers")?,
            cert: r.path("cert"),
            key: r.path("key"),
            trusted: r.path("trusted"),
            input_dir: r.path("input_dir").unwrap_or_else(|| r.base.join("input")),
            output_dir: r.path("output_dir").unwrap_or_else(|| r.base.join("output")),
            window_secs: r.get("window_secs")?.unwrap_or(300),
            timeout_secs: r.get("timeout_secs")?.unwrap_or(60),
            seed: r.get("seed")?,
            params,
            sim_m: None,
        };
        if let Some((key, (line, _))) = r.kv.into_iter().next() {
            return Err(CliError::parse(file, line, 1, format!("unknown key {key:?}")));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_str(&text, path)
    }

    /// Number of privacy peers.
    pub fn m(&self) -> usize {
        self.sim_m.unwrap_or(self.privacy_peers.len())
    }

    pub fn protocol(&self) -> Result<Protocol, CliError> {
        self.protocol.ok_or_else(|| CliError::Validation("no protocol given (config key or --protocol)".into()))
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }

    pub fn min_input_peers(&self) -> usize {
        self.min_input_peers.unwrap_or(self.n)
    }

    pub fn field(&self) -> Result<Field, CliError> {
        let bits = self.params.field_bits;
        if !(3..=62).contains(&bits) {
            return Err(CliError::Validation(format!("field_bits = {bits} outside 3..=62")));
        }
        find_prime(bits - 1, self.params.max_k).map_err(|e| CliError::Validation(e.to_string()))
    }

    pub fn correlation(&self) -> CorrelationConfig {
        let p = &self.params;
        CorrelationConfig {
            n: self.n,
            s: p.s,
            t_c: p.t_c,
            t_w: p.t_w,
            w_max: p.w_max,
            verify_weights: p.verify_weights,
            verify_keys: p.verify_keys,
        }
    }

    /// Checks everything that does not depend on the role.
    pub fn validate_common(&self) -> Result<Field, CliError> {
        let protocol = self.protocol()?;
        let bad = |msg: String| Err(CliError::Validation(msg));
        if self.n == 0 {
            return bad("input_peers must be at least 1".into());
        }
        let m = self.m();
        if m == 0 {
            return bad("no privacy peers configured".into());
        }
        if self.min_privacy_peers.is_some_and(|v| v != m) {
            return bad(format!("min_privacy_peers must equal the number of privacy peers ({m})"));
        }
        let min_in = self.min_input_peers();
        if min_in == 0 || min_in > self.n {
            return bad(format!("min_input_peers = {min_in} outside 1..={}", self.n));
        }
        let field = self.field()?;
        let p = &self.params;
        match protocol {
            Protocol::Addition | Protocol::DistinctCount => {
                if p.r == 0 {
                    return bad("r must be at least 1".into());
                }
            }
            Protocol::Entropy => {
                if p.r == 0 {
                    return bad("r must be at least 1".into());
                }
                check_entropy_params(&field, self.n, p.r, p.q, p.max_count)?;
            }
            Protocol::EventCorrelation => self.correlation().validate(&field)?,
        }
        Ok(field)
    }

    /// SHA-256 over the parameters every peer must agree on, as sorted
    /// `key=value` lines.
    pub fn config_hash(&self, field: &Field) -> [u8; 32] {
        let p = &self.params;
        let mut shared: BTreeMap<&str, String> = BTreeMap::new();
        shared.insert("protocol", self.protocol.map(|p| p.name()).unwrap_or("").to_string());
        shared.insert("p", field.p().to_string());
        shared.insert("m", self.m().to_string());
        shared.insert("input_peers", self.n.to_string());
        shared.insert("window_secs", self.window_secs.to_string());
        match self.protocol {
            Some(Protocol::Addition | Protocol::DistinctCount) => {
                shared.insert("r", p.r.to_string());
            }
            Some(Protocol::Entropy) => {
                shared.insert("r", p.r.to_string());
                shared.insert("q", p.q.to_string());
                shared.insert("max_count", p.max_count.to_string());
            }
            Some(Protocol::EventCorrelation) => {
                for (k, v) in [
                    ("s", p.s.to_string()),
                    ("t_c", p.t_c.to_string()),
                    ("t_w", p.t_w.to_string()),
                    ("w_max", p.w_max.to_string()),
                    ("verify_weights", p.verify_weights.to_string()),
                    ("verify_keys", p.verify_keys.to_string()),
                ] {
                    shared.insert(k, v);
                }
            }
            None => {}
        }
        let mut h = Sha256::new();
        for (k, v) in shared {
            h.update(format!("{k}={v}\n"));
        }
        h.finalize().into()
    }
}

/// Reads a trust file: `privacy <id> <hex>` and `input <id> <hex>` lines.
pub fn load_trust(path: &Path) -> Result<privagg::transport::tls::Trust, CliError> {
    use privagg::transport::tls::{parse_fingerprint, Trust};
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut privacy = BTreeMap::new();
    let mut input = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let err = |col, msg: &str| CliError::parse(path, i + 1, col, msg);
        if parts.len() != 3 {
            return Err(err(1, "expected: <privacy|input> <id> <fingerprint>"));
        }
        let id: usize = parts[1].parse().map_err(|_| err(raw.find(parts[1]).unwrap_or(0) + 1, "bad peer id"))?;
        let fp =
            parse_fingerprint(parts[2]).ok_or_else(|| err(raw.find(parts[2]).unwrap_or(0) + 1, "bad fingerprint"))?;
        let map = match parts[0] {
            "privacy" => &mut privacy,
            "input" => &mut input,
            _ => return Err(err(1, "role must be privacy or input")),
        };
        if map.insert(id, fp).is_some() {
            return Err(err(1, "duplicate peer id"));
        }
    }
    let dense = |map: BTreeMap<usize, [u8; 32]>, what: &str| {
        if map.keys().enumerate().any(|(i, &k)| i != k) {
            return Err(CliError::Validation(format!("{}: {what} ids must be 0..{}", path.display(), map.len())));
        }
        Ok(map.into_values().collect::<Vec<_>>())
    };
    let trust = Trust { privacy: dense(privacy, "privacy")?, input: dense(input, "input")? };
    let all: std::collections::BTreeSet<_> = trust.privacy.iter().chain(&trust.input).collect();
    if all.len() != trust.privacy.len() + trust.input.len() {
        return Err(CliError::Validation(format!("{}: fingerprints are not unique", path.display())));
    }
    Ok(trust)
}
