//! Session config files. One TOML file describes a whole session: bin and
//! noise parameters, the party rosters, transport choice, and optional
//! scripted adversary behavior and network faults for testing. Field
//! problems are reported with their TOML path; syntax problems carry the
//! parser's line/column diagnostic.

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, ensure, Context, Result};
use serde::Deserialize;

use psc_core::group::Element;
use psc_core::protocol::{AdversaryPlan, Deviation, DpDeviation, Mode};
use psc_core::transport::{FaultAction, FaultPlan};
use psc_core::wire::{PartyId, PhaseTag};

use crate::json::phase_from_name;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    seed: Option<String>,
    params: ParamsSection,
    #[serde(default)]
    transport: TransportSection,
    #[serde(default)]
    cps: Vec<CpSection>,
    #[serde(default)]
    dps: Vec<DpSection>,
    #[serde(default)]
    adversary: AdversarySection,
    #[serde(default)]
    faults: Vec<FaultSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsSection {
    bins: usize,
    epsilon: f64,
    delta: f64,
    mode: String,
    noise: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TransportSection {
    kind: String,
    timeout_ms: u64,
    connect_window_ms: u64,
}

impl Default for TransportSection {
    fn default() -> TransportSection {
        TransportSection {
            kind: "sim".to_string(),
            timeout_ms: 10_000,
            connect_window_ms: 15_000,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CpSection {
    address: Option<String>,
    public_key: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DpSection {
    address: Option<String>,
    public_key: Option<String>,
    #[serde(default)]
    observations: Vec<usize>,
    feed: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdversarySection {
    #[serde(default)]
    cps: Vec<CpDeviationSection>,
    #[serde(default)]
    dps: Vec<DpDeviationSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CpDeviationSection {
    party: u16,
    deviation: String,
    phase: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DpDeviationSection {
    party: u16,
    deviation: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FaultSection {
    party: String,
    round: u32,
    action: String,
    #[serde(default)]
    to: Vec<String>,
    payload: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    Sim,
    Socket,
}

#[derive(Debug, Clone)]
pub struct CpEntry {
    pub address: Option<SocketAddr>,
    pub public_key: Option<Element>,
}

#[derive(Debug, Clone)]
pub struct DpEntry {
    pub address: Option<SocketAddr>,
    pub public_key: Option<Element>,
    pub observations: Vec<usize>,
    pub feed: Option<PathBuf>,
}

/// A validated session description.
#[derive(Debug, Clone)]
pub struct Config {
    pub seed: Option<[u8; 32]>,
    pub bins: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub noise: Option<usize>,
    pub mode: Mode,
    pub transport: TransportKind,
    pub timeout: Duration,
    pub connect_window: Duration,
    pub cps: Vec<CpEntry>,
    pub dps: Vec<DpEntry>,
    pub plan: AdversaryPlan,
    pub faults: FaultPlan,
}

pub fn parse_hex32(field: &str, text: &str) -> Result<[u8; 32]> {
    let bytes = hex::decode(text).with_context(|| format!("{field}: not hex"))?;
    let arr: [u8; 32] = bytes
        .as_slice()
        .try_into()
        .map_err(|_| anyhow!("{field}: expected 32 bytes (64 hex chars), got {}", bytes.len()))?;
    Ok(arr)
}

fn parse_element(field: &str, text: &str) -> Result<Element> {
    let bytes = parse_hex32(field, text)?;
    Element::decode(&bytes).map_err(|e| anyhow!("{field}: not a valid public key: {e}"))
}

fn parse_address(field: &str, text: &str) -> Result<SocketAddr> {
    text.parse()
        .with_context(|| format!("{field}: expected host:port"))
}

fn parse_party(field: &str, text: &str, m: usize, d: usize) -> Result<PartyId> {
    let (role, index) = text
        .split_at_checked(2)
        .ok_or_else(|| anyhow!("{field}: expected cp<k> or dp<k>"))?;
    let index: u16 = index
        .parse()
        .with_context(|| format!("{field}: expected cp<k> or dp<k>"))?;
    match role {
        "cp" => {
            ensure!((index as usize) < m, "{field}: cp{index} not in roster of {m}");
            Ok(PartyId::cp(index))
        }
        "dp" => {
            ensure!((index as usize) < d, "{field}: dp{index} not in roster of {d}");
            Ok(PartyId::dp(index))
        }
        _ => bail!("{field}: expected cp<k> or dp<k>"),
    }
}

fn parse_phase(field: &str, text: &str) -> Result<PhaseTag> {
    phase_from_name(text).ok_or_else(|| anyhow!("{field}: unknown phase {text:?}"))
}

fn cp_deviation(section: &CpDeviationSection, idx: usize) -> Result<Deviation> {
    let field = format!("adversary.cps[{idx}]");
    let phase = section
        .phase
        .as_deref()
        .map(|p| parse_phase(&format!("{field}.phase"), p))
        .transpose()?;
    let need_phase = || {
        phase.ok_or_else(|| {
            anyhow!("{field}: deviation {:?} needs a phase", section.deviation)
        })
    };
    match section.deviation.as_str() {
        "silent" => Ok(Deviation::SilentFrom { phase: need_phase()? }),
        "equivocate" => Ok(Deviation::Equivocate { phase: need_phase()? }),
        "tamper-proof" => Ok(Deviation::TamperProof { phase: need_phase()? }),
        "wrong-statement" => {
            let phase = need_phase()?;
            ensure!(
                matches!(
                    phase,
                    PhaseTag::NoiseGeneration | PhaseTag::Shuffling | PhaseTag::Rrd
                ),
                "{field}: wrong-statement applies to a proof-bearing phase"
            );
            Ok(Deviation::WrongStatement { phase })
        }
        "identity-first" => {
            ensure!(
                phase.is_none() || phase == Some(PhaseTag::Rrd),
                "{field}: identity-first is a decryption-phase deviation"
            );
            Ok(Deviation::IdentityFirst)
        }
        "bad-key-signature" => {
            ensure!(
                phase.is_none() || phase == Some(PhaseTag::KeyGen),
                "{field}: bad-key-signature is a keygen deviation"
            );
            Ok(Deviation::BadKeySignature)
        }
        other => bail!("{field}.deviation: unknown deviation {other:?}"),
    }
}

fn dp_deviation(section: &DpDeviationSection, idx: usize) -> Result<DpDeviation> {
    let field = format!("adversary.dps[{idx}].deviation");
    match section.deviation.as_str() {
        "silent" => Ok(DpDeviation::Silent),
        "short-vector" => Ok(DpDeviation::ShortVector),
        "bad-blind-proof" => Ok(DpDeviation::BadBlindProof),
        "equivocate" => Ok(DpDeviation::Equivocate),
        "bad-submission-proof" => Ok(DpDeviation::BadSubmissionProof),
        other => bail!("{field}: unknown deviation {other:?}"),
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config = Config::parse(&text)
            .with_context(|| format!("config {}", path.display()))?;
        // Feed paths are relative to the config file.
        if let Some(dir) = path.parent() {
            for dp in &mut config.dps {
                if let Some(feed) = &dp.feed {
                    if feed.is_relative() {
                        dp.feed = Some(dir.join(feed));
                    }
                }
            }
        }
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Config> {
        let file: ConfigFile = toml::from_str(text)?;
        let seed = file
            .seed
            .as_deref()
            .map(|s| parse_hex32("seed", s))
            .transpose()?;

        ensure!(file.params.bins >= 1, "params.bins: at least one bin");
        ensure!(
            file.params.epsilon > 0.0 && file.params.epsilon.is_finite(),
            "params.epsilon: must be a positive number"
        );
        ensure!(
            file.params.delta > 0.0 && file.params.delta < 1.0,
            "params.delta: must lie in (0, 1)"
        );
        let mode = match file.params.mode.as_str() {
            "union" => Mode::Union,
            "intersection" => Mode::Intersection,
            other => bail!("params.mode: expected union or intersection, got {other:?}"),
        };
        let transport = match file.transport.kind.as_str() {
            "sim" => TransportKind::Sim,
            "socket" => TransportKind::Socket,
            other => bail!("transport.kind: expected sim or socket, got {other:?}"),
        };

        ensure!(!file.cps.is_empty(), "cps: at least one computation party");
        ensure!(!file.dps.is_empty(), "dps: at least one data provider");
        let m = file.cps.len();
        let d = file.dps.len();

        let mut cps = Vec::with_capacity(m);
        for (j, section) in file.cps.iter().enumerate() {
            let field = format!("cps[{j}]");
            cps.push(CpEntry {
                address: section
                    .address
                    .as_deref()
                    .map(|a| parse_address(&format!("{field}.address"), a))
                    .transpose()?,
                public_key: section
                    .public_key
                    .as_deref()
                    .map(|k| parse_element(&format!("{field}.public_key"), k))
                    .transpose()?,
            });
        }
        let mut dps = Vec::with_capacity(d);
        for (t, section) in file.dps.iter().enumerate() {
            let field = format!("dps[{t}]");
            for &bin in &section.observations {
                ensure!(
                    bin < file.params.bins,
                    "{field}.observations: bin {bin} outside 0..{}",
                    file.params.bins
                );
            }
            dps.push(DpEntry {
                address: section
                    .address
                    .as_deref()
                    .map(|a| parse_address(&format!("{field}.address"), a))
                    .transpose()?,
                public_key: section
                    .public_key
                    .as_deref()
                    .map(|k| parse_element(&format!("{field}.public_key"), k))
                    .transpose()?,
                observations: section.observations.clone(),
                feed: section.feed.clone(),
            });
        }

        let with_keys = cps.iter().filter(|c| c.public_key.is_some()).count()
            + dps.iter().filter(|d| d.public_key.is_some()).count();
        ensure!(
            with_keys == 0 || with_keys == m + d,
            "public_key: set for all parties or none (derived test keys)"
        );
        if with_keys == 0 {
            ensure!(
                seed.is_some(),
                "seed: required to derive test keys when no public_key entries are given"
            );
        }
        if transport == TransportKind::Socket {
            ensure!(seed.is_some(), "seed: required for socket transport");
            for (j, cp) in cps.iter().enumerate() {
                ensure!(cp.address.is_some(), "cps[{j}].address: required for socket transport");
            }
            for (t, dp) in dps.iter().enumerate() {
                ensure!(dp.address.is_some(), "dps[{t}].address: required for socket transport");
            }
        }

        let mut plan = AdversaryPlan::default();
        let mut seen: BTreeMap<PartyId, ()> = BTreeMap::new();
        for (idx, section) in file.adversary.cps.iter().enumerate() {
            ensure!(
                (section.party as usize) < m,
                "adversary.cps[{idx}].party: cp{} not in roster of {m}",
                section.party
            );
            let id = PartyId::cp(section.party);
            ensure!(
                seen.insert(id, ()).is_none(),
                "adversary.cps[{idx}]: duplicate entry for {id}"
            );
            plan.cps.insert(id, cp_deviation(section, idx)?);
        }
        for (idx, section) in file.adversary.dps.iter().enumerate() {
            ensure!(
                (section.party as usize) < d,
                "adversary.dps[{idx}].party: dp{} not in roster of {d}",
                section.party
            );
            let id = PartyId::dp(section.party);
            ensure!(
                seen.insert(id, ()).is_none(),
                "adversary.dps[{idx}]: duplicate entry for {id}"
            );
            plan.dps.insert(id, dp_deviation(section, idx)?);
        }

        let mut faults = FaultPlan::new();
        for (idx, section) in file.faults.iter().enumerate() {
            let field = format!("faults[{idx}]");
            let sender = parse_party(&format!("{field}.party"), &section.party, m, d)?;
            let action = match section.action.as_str() {
                "drop" => FaultAction::Drop,
                "duplicate" => {
                    ensure!(!section.to.is_empty(), "{field}.to: duplicate needs targets");
                    let mut targets = Vec::with_capacity(section.to.len());
                    for target in &section.to {
                        targets.push(parse_party(&format!("{field}.to"), target, m, d)?);
                    }
                    FaultAction::DuplicateTo(targets)
                }
                "replace" => {
                    let payload = section
                        .payload
                        .as_deref()
                        .ok_or_else(|| anyhow!("{field}.payload: replace needs bytes"))?;
                    FaultAction::ReplacePayload(
                        hex::decode(payload)
                            .with_context(|| format!("{field}.payload: not hex"))?,
                    )
                }
                other => bail!("{field}.action: expected drop, duplicate, or replace, got {other:?}"),
            };
            faults = faults.rule(sender, section.round, action);
        }

        Ok(Config {
            seed,
            bins: file.params.bins,
            epsilon: file.params.epsilon,
            delta: file.params.delta,
            noise: file.params.noise,
            mode,
            transport,
            timeout: Duration::from_millis(file.transport.timeout_ms),
            connect_window: Duration::from_millis(file.transport.connect_window_ms),
            cps,
            dps,
            plan,
            faults,
        })
    }

    pub fn m(&self) -> usize {
        self.cps.len()
    }

    pub fn d(&self) -> usize {
        self.dps.len()
    }

    /// Whether the roster carries explicit long-term keys (deployment) or
    /// derives throwaway test keys from the seed.
    pub fn has_explicit_keys(&self) -> bool {
        self.cps.iter().any(|c| c.public_key.is_some())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = "0101010101010101010101010101010101010101010101010101010101010101"

[params]
bins = 8
epsilon = 8.0
delta = 0.5
mode = "union"
noise = 4

[[cps]]
[[cps]]

[[dps]]
observations = [0, 3]
"#;

    #[test]
    fn minimal_sim_config_parses() {
        let config = Config::parse(MINIMAL).unwrap();
        assert_eq!(config.m(), 2);
        assert_eq!(config.d(), 1);
        assert_eq!(config.mode, Mode::Union);
        assert_eq!(config.transport, TransportKind::Sim);
        assert!(!config.has_explicit_keys());
    }

    #[test]
    fn field_diagnostics_name_the_field() {
        let bad = MINIMAL.replace("mode = \"union\"", "mode = \"both\"");
        let err = Config::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("params.mode"), "{err}");

        let bad = MINIMAL.replace("observations = [0, 3]", "observations = [0, 9]");
        let err = Config::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("dps[0].observations"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let bad = format!("{MINIMAL}\n[paramz]\nx = 1\n");
        let err = format!("{:#}", Config::parse(&bad).unwrap_err());
        assert!(err.contains("paramz"), "{err}");
    }

    #[test]
    fn adversary_and_faults_parse() {
        let text = format!(
            "{MINIMAL}\n\
             [[adversary.cps]]\nparty = 1\ndeviation = \"equivocate\"\nphase = \"shuffling\"\n\
             [[adversary.dps]]\nparty = 0\ndeviation = \"short-vector\"\n\
             [[faults]]\nparty = \"cp0\"\nround = 3\naction = \"drop\"\n"
        );
        let config = Config::parse(&text).unwrap();
        assert_eq!(config.plan.cps.len(), 1);
        assert_eq!(config.plan.dps.len(), 1);
        assert!(!config.faults.is_empty());
    }

    #[test]
    fn socket_requires_addresses_and_seed() {
        let text = MINIMAL.replace(
            "[params]",
            "[transport]\nkind = \"socket\"\n\n[params]",
        );
        let err = Config::parse(&text).unwrap_err().to_string();
        assert!(err.contains("address"), "{err}");
    }
}
