//! Verb implementations behind the CLI: parameter calibration, key tooling,
//! the in-process simulator front end, socket daemons for both roles, and
//! the scripted adversary matrix.

use std::fs;
use std::net::SocketAddr;
use std::path::Path;

use anyhow::{anyhow, ensure, Context, Result};
use rand_core::{OsRng, RngCore};

use psc_core::broadcast::{Roster, SigningKey};
use psc_core::group::{hash_bytes, hash_to_scalar, Scalar};
use psc_core::protocol::{
    noise_size, run_session, simulate, AdversaryPlan, CpEnv, Deviation, DpDeviation, DpEnv,
    Evidence, Outcome, ProtocolParams, RoleEnv, Rosters, SessionConfig,
};
use psc_core::transport::FaultPlan;
use psc_core::wire::{PartyId, PhaseTag};

use crate::config::{Config, TransportKind};
use crate::feed;
use crate::json::OutcomeJson;
use crate::net::{MeshLinks, NetConfig};

/// Exit status contract: 0 result, 2 config/usage error, 3 blame.
pub fn exit_code(outcome: &Outcome) -> i32 {
    match outcome {
        Outcome::Result(_) => 0,
        Outcome::Blame(_) => 3,
    }
}

pub fn random_seed() -> [u8; 32] {
    let mut seed = [0u8; 32];
    OsRng.fill_bytes(&mut seed);
    seed
}

/// Session id shared by every party: a digest of the session seed.
pub fn derive_session_id(seed: &[u8; 32]) -> [u8; 16] {
    let mut session = [0u8; 16];
    session.copy_from_slice(&hash_bytes(b"psc.session-id", &[seed])[..16]);
    session
}

/// Throwaway long-term key for rosters without explicit keys; kind is 0
/// for CPs and 1 for DPs.
fn derived_secret(seed: &[u8; 32], kind: u8, index: u16) -> Scalar {
    hash_to_scalar(b"psc.roster-seed", &[seed, &[kind], &index.to_be_bytes()])
}

/// Per-party randomness seed: the shared session seed mixed with the
/// party's long-term secret, so one party's blinds and nonces are not
/// predictable from the config file alone.
fn party_seed(seed: &[u8; 32], party: PartyId, secret: &Scalar) -> [u8; 32] {
    hash_bytes(
        b"psc.party-seed",
        &[seed, &party.0.to_be_bytes(), &secret.encode()],
    )
}

fn build_rosters(config: &Config, seed: &[u8; 32]) -> Result<Rosters> {
    let mut cps = Vec::with_capacity(config.m());
    for (j, entry) in config.cps.iter().enumerate() {
        let id = PartyId::cp(j as u16);
        let key = match &entry.public_key {
            Some(key) => *key,
            None => SigningKey::from_secret(derived_secret(seed, 0, j as u16)).public,
        };
        cps.push((id, key));
    }
    let mut dps = Vec::with_capacity(config.d());
    for (t, entry) in config.dps.iter().enumerate() {
        let id = PartyId::dp(t as u16);
        let key = match &entry.public_key {
            Some(key) => *key,
            None => SigningKey::from_secret(derived_secret(seed, 1, t as u16)).public,
        };
        dps.push((id, key));
    }
    Ok(Rosters { cps, dps })
}

pub fn protocol_params(config: &Config, seed: &[u8; 32]) -> Result<ProtocolParams> {
    let n = match config.noise {
        Some(n) => n,
        None => noise_size(config.epsilon, config.delta)
            .map_err(|e| anyhow!("params: {e}"))?,
    };
    let params = ProtocolParams {
        b: config.bins,
        m: config.m(),
        d: config.d(),
        epsilon: config.epsilon,
        delta: config.delta,
        n,
        mode: config.mode,
        session: derive_session_id(seed),
        rosters: build_rosters(config, seed)?,
    };
    params.validate().map_err(|e| anyhow!("params: {e}"))?;
    Ok(params)
}

fn resolve_observations(config: &Config, index: usize, feed_override: Option<&Path>) -> Result<Vec<usize>> {
    let entry = &config.dps[index];
    let mut bins = entry.observations.clone();
    let path = feed_override.or(entry.feed.as_deref());
    if let Some(path) = path {
        bins.extend(
            feed::load_feed(path, config.bins)
                .with_context(|| format!("dps[{index}] feed {}", path.display()))?,
        );
    }
    Ok(bins)
}

/// Assemble every party's environment for an in-process run. Requires a
/// derived-key roster, since the simulator needs all secrets.
pub fn build_sim_session(config: &Config, seed: &[u8; 32]) -> Result<SessionConfig> {
    ensure!(
        !config.has_explicit_keys(),
        "simulate needs derived keys; drop the public_key entries or run daemons"
    );
    let params = protocol_params(config, seed)?;
    let mut cps = Vec::with_capacity(config.m());
    for j in 0..config.m() as u16 {
        let secret = derived_secret(seed, 0, j);
        cps.push(CpEnv {
            index: j,
            signing: SigningKey::from_secret(secret),
            session_seed: party_seed(seed, PartyId::cp(j), &secret),
            clock: None,
        });
    }
    let mut dps = Vec::with_capacity(config.d());
    for t in 0..config.d() {
        let secret = derived_secret(seed, 1, t as u16);
        dps.push(DpEnv {
            index: t as u16,
            signing: SigningKey::from_secret(secret),
            session_seed: party_seed(seed, PartyId::dp(t as u16), &secret),
            observations: resolve_observations(config, t, None)?,
            clock: None,
        });
    }
    Ok(SessionConfig { params, cps, dps })
}

/// The outcome an operator reads: the lowest-indexed CP not scripted to
/// deviate (all honest CPs agree, so the choice is cosmetic).
fn representative(config: &Config, outcomes: &[(PartyId, Outcome)]) -> Outcome {
    outcomes
        .iter()
        .find(|(p, _)| p.is_cp() && !config.plan.cps.contains_key(p))
        .or_else(|| outcomes.iter().find(|(p, _)| p.is_cp()))
        .map(|(_, o)| o.clone())
        .expect("at least one cp")
}

pub fn run_simulate(config: &Config, seed_override: Option<[u8; 32]>) -> Result<(OutcomeJson, i32)> {
    ensure!(
        config.transport == TransportKind::Sim,
        "transport.kind: simulate needs the sim transport"
    );
    let seed = seed_override
        .or(config.seed)
        .unwrap_or_else(random_seed);
    let session = build_sim_session(config, &seed)?;
    let report = simulate(&session, &config.plan, config.faults.clone())
        .map_err(|e| anyhow!("simulation: {e}"))?;
    let outcome = representative(config, &report.outcomes);
    Ok((OutcomeJson::from_outcome(&outcome), exit_code(&outcome)))
}

pub fn load_secret(path: &Path) -> Result<SigningKey> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading key {}", path.display()))?;
    let bytes = hex::decode(text.trim())
        .with_context(|| format!("key {}: not hex", path.display()))?;
    let arr: [u8; 32] = bytes
        .as_slice()
        .try_into()
        .map_err(|_| anyhow!("key {}: expected 32 bytes", path.display()))?;
    let secret = Scalar::decode(&arr)
        .map_err(|e| anyhow!("key {}: not a valid secret: {e}", path.display()))?;
    Ok(SigningKey::from_secret(secret))
}

/// Write `<out>` (hex secret) and `<out>.pub` (hex public); returns the
/// public half for pasting into rosters.
pub fn keygen(out: &Path) -> Result<String> {
    let secret = Scalar::random(&mut OsRng);
    let key = SigningKey::from_secret(secret);
    let public_hex = hex::encode(key.public.encode());
    fs::write(out, format!("{}\n", hex::encode(secret.encode())))
        .with_context(|| format!("writing {}", out.display()))?;
    let mut pub_path = out.as_os_str().to_owned();
    pub_path.push(".pub");
    fs::write(&pub_path, format!("{public_hex}\n"))
        .with_context(|| format!("writing {}", Path::new(&pub_path).display()))?;
    Ok(public_hex)
}

pub fn params_json(epsilon: f64, delta: f64) -> Result<String> {
    let n = noise_size(epsilon, delta).map_err(|e| anyhow!("params: {e}"))?;
    let std = (n as f64).sqrt() / 2.0;
    Ok(format!("{{\"n\":{n},\"std\":{std}}}"))
}

fn daemon_signing(
    config: &Config,
    seed: &[u8; 32],
    kind: u8,
    index: u16,
    key_path: Option<&Path>,
) -> Result<SigningKey> {
    match key_path {
        Some(path) => load_secret(path),
        None => {
            ensure!(
                !config.has_explicit_keys(),
                "--key: required when the roster lists explicit public keys"
            );
            Ok(SigningKey::from_secret(derived_secret(seed, kind, index)))
        }
    }
}

fn mesh_for(
    config: &Config,
    params: &ProtocolParams,
    me: PartyId,
    signing: SigningKey,
) -> Result<MeshLinks> {
    let addr_of = |p: PartyId| -> Result<SocketAddr> {
        let addr = if p.is_cp() {
            config.cps[p.index()].address
        } else {
            config.dps[p.index()].address
        };
        addr.ok_or_else(|| anyhow!("{p}: no address in config"))
    };
    // CPs talk to everyone; DPs talk only to CPs.
    let mut peers = Vec::new();
    for (p, _) in &params.rosters.cps {
        if *p != me {
            peers.push((*p, addr_of(*p)?));
        }
    }
    if me.is_cp() {
        for (p, _) in &params.rosters.dps {
            peers.push((*p, addr_of(*p)?));
        }
    }
    let links = MeshLinks::establish(NetConfig {
        session: params.session,
        me,
        signing,
        roster: Roster::new(params.rosters.all()),
        listen: addr_of(me)?,
        peers,
        timeout: config.timeout,
        connect_window: config.connect_window,
    })
    .map_err(|e| anyhow!("transport: {e}"))?;
    Ok(links)
}

pub fn run_cp(config: &Config, index: u16, key_path: Option<&Path>) -> Result<(OutcomeJson, i32)> {
    ensure!(
        config.transport == TransportKind::Socket,
        "transport.kind: the cp daemon needs the socket transport"
    );
    ensure!((index as usize) < config.m(), "--index: cp{index} not in roster");
    let seed = config.seed.expect("socket config carries a seed");
    let params = protocol_params(config, &seed)?;
    let me = PartyId::cp(index);
    let signing = daemon_signing(config, &seed, 0, index, key_path)?;
    ensure!(
        params.rosters.cps[index as usize].1 == signing.public,
        "key does not match the roster entry for cp{index}"
    );
    let env = CpEnv {
        index,
        signing: signing.clone(),
        session_seed: party_seed(&seed, me, &secret_of(config, &seed, 0, index, key_path)?),
        clock: Some(crate::monotonic_micros),
    };
    let mut links = mesh_for(config, &params, me, signing)?;
    let outcome = run_session(&params, RoleEnv::Cp(env), &mut links)
        .map_err(|e| anyhow!("session: {e}"))?;
    links.finish();
    Ok((OutcomeJson::from_outcome(&outcome), exit_code(&outcome)))
}

pub fn run_dp(
    config: &Config,
    index: u16,
    key_path: Option<&Path>,
    feed_override: Option<&Path>,
) -> Result<(OutcomeJson, i32)> {
    ensure!(
        config.transport == TransportKind::Socket,
        "transport.kind: the dp daemon needs the socket transport"
    );
    ensure!((index as usize) < config.d(), "--index: dp{index} not in roster");
    let seed = config.seed.expect("socket config carries a seed");
    let params = protocol_params(config, &seed)?;
    let me = PartyId::dp(index);
    let signing = daemon_signing(config, &seed, 1, index, key_path)?;
    ensure!(
        params.rosters.dps[index as usize].1 == signing.public,
        "key does not match the roster entry for dp{index}"
    );
    let env = DpEnv {
        index,
        signing: signing.clone(),
        session_seed: party_seed(&seed, me, &secret_of(config, &seed, 1, index, key_path)?),
        observations: resolve_observations(config, index as usize, feed_override)?,
        clock: Some(crate::monotonic_micros),
    };
    let mut links = mesh_for(config, &params, me, signing)?;
    let outcome = run_session(&params, RoleEnv::Dp(env), &mut links)
        .map_err(|e| anyhow!("session: {e}"))?;
    links.finish();
    Ok((OutcomeJson::from_outcome(&outcome), exit_code(&outcome)))
}

/// The party's long-term secret scalar, for mixing into its session seed.
fn secret_of(
    config: &Config,
    seed: &[u8; 32],
    kind: u8,
    index: u16,
    key_path: Option<&Path>,
) -> Result<Scalar> {
    match key_path {
        None => {
            ensure!(!config.has_explicit_keys(), "--key required");
            Ok(derived_secret(seed, kind, index))
        }
        Some(path) => {
            let text = fs::read_to_string(path)?;
            let bytes = hex::decode(text.trim()).context("key file")?;
            let arr: [u8; 32] = bytes.as_slice().try_into().map_err(|_| anyhow!("key length"))?;
            Scalar::decode(&arr).map_err(|e| anyhow!("key: {e}"))
        }
    }
}

/// One scripted deviation with its expected verdict.
pub struct Scenario {
    pub name: String,
    pub plan: AdversaryPlan,
    pub deviator: PartyId,
    /// None: expect a normal result (DP misbehavior ends in exclusion).
    pub expect: Option<(PhaseTag, Evidence)>,
}

/// The full deviation matrix: every blame-bearing phase crossed with every
/// CP deviation that phase admits, plus the DP exclusion cases. The CP
/// deviator is cp1, the DP deviator dp0.
pub fn scenario_matrix() -> Vec<Scenario> {
    let cp = PartyId::cp(1);
    let dp = PartyId::dp(0);
    let mut out = Vec::new();
    let phases = [
        (PhaseTag::KeyGen, "keygen"),
        (PhaseTag::NoiseGeneration, "noise-generation"),
        (PhaseTag::Shuffling, "shuffling"),
        (PhaseTag::Rrd, "rrd"),
    ];
    for (phase, phase_name) in phases {
        let mut cases: Vec<(&str, Deviation, Evidence)> = vec![
            ("silent", Deviation::SilentFrom { phase }, Evidence::MissingMessage),
            ("equivocate", Deviation::Equivocate { phase }, Evidence::Equivocation),
            ("invalid-proof", Deviation::TamperProof { phase }, Evidence::InvalidProof),
        ];
        if phase != PhaseTag::KeyGen {
            cases.push((
                "wrong-statement",
                Deviation::WrongStatement { phase },
                Evidence::WrongStatement,
            ));
        }
        if phase == PhaseTag::KeyGen {
            cases.push((
                "bad-key-signature",
                Deviation::BadKeySignature,
                Evidence::BadKeySignature,
            ));
        }
        if phase == PhaseTag::Rrd {
            cases.push((
                "identity-first",
                Deviation::IdentityFirst,
                Evidence::IdentityFirstComponent,
            ));
        }
        for (case_name, deviation, evidence) in cases {
            let mut plan = AdversaryPlan::default();
            plan.cps.insert(cp, deviation);
            out.push(Scenario {
                name: format!("{phase_name}/{case_name}"),
                plan,
                deviator: cp,
                expect: Some((phase, evidence)),
            });
        }
    }
    let dp_cases = [
        ("silent", DpDeviation::Silent),
        ("short-vector", DpDeviation::ShortVector),
        ("bad-blind-proof", DpDeviation::BadBlindProof),
        ("equivocate", DpDeviation::Equivocate),
        ("bad-submission-proof", DpDeviation::BadSubmissionProof),
    ];
    for (case_name, deviation) in dp_cases {
        let mut plan = AdversaryPlan::default();
        plan.dps.insert(dp, deviation);
        out.push(Scenario {
            name: format!("dp-exclusion/{case_name}"),
            plan,
            deviator: dp,
            expect: None,
        });
    }
    out
}

pub struct ScenarioResult {
    pub name: String,
    pub outcome: OutcomeJson,
    pub ok: bool,
}

/// Check one finished session against a scenario's expectation: every
/// party other than the deviator must hold the same verdict, and blame
/// must name exactly the deviator. The deviator's own report is not
/// trustworthy (a silent party ends up accusing everyone else of
/// silence), so it carries no weight here.
pub fn check_scenario(
    scenario: &Scenario,
    outcomes: &[(PartyId, Outcome)],
) -> (OutcomeJson, bool) {
    let honest: Vec<&Outcome> = outcomes
        .iter()
        .filter(|(p, _)| *p != scenario.deviator)
        .map(|(_, o)| o)
        .collect();
    let first = honest[0];
    let unanimous = honest.iter().all(|o| *o == first);
    let ok = unanimous
        && match &scenario.expect {
            None => first.result().is_some(),
            Some((phase, evidence)) => match first.blame() {
                Some(report) => {
                    report.phase == *phase
                        && report.evidence == *evidence
                        && report.accused.iter().copied().collect::<Vec<_>>()
                            == [scenario.deviator]
                }
                None => false,
            },
        };
    (OutcomeJson::from_outcome(first), ok)
}

/// Run the whole matrix under the config's parameters. Needs m >= 3 so
/// equivocation is observable (with fewer parties a two-faced broadcast
/// never meets its other face).
pub fn run_scenarios(config: &Config) -> Result<(Vec<ScenarioResult>, bool)> {
    ensure!(
        config.transport == TransportKind::Sim,
        "transport.kind: scenarios need the sim transport"
    );
    ensure!(config.m() >= 3, "cps: the scenario matrix needs at least 3");
    let base_seed = config.seed.unwrap_or_else(random_seed);
    let mut results = Vec::new();
    let mut all_ok = true;
    for scenario in scenario_matrix() {
        let seed = hash_bytes(b"psc.scenario", &[&base_seed, scenario.name.as_bytes()]);
        let session = build_sim_session(config, &seed)?;
        let report = simulate(&session, &scenario.plan, FaultPlan::new())
            .map_err(|e| anyhow!("scenario {}: {e}", scenario.name))?;
        let (outcome, ok) = check_scenario(&scenario, &report.outcomes);
        all_ok &= ok;
        results.push(ScenarioResult {
            name: scenario.name,
            outcome,
            ok,
        });
    }
    Ok((results, all_ok))
}
