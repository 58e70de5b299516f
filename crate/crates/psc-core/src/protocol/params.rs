//! Measurement parameters, their validity rules, and the differential
//! privacy noise calibration.

use alloc::vec::Vec;
use core::fmt;

use crate::group::Element;
use crate::wire::PartyId;

/// What the measurement counts: bins observed by at least one provider, or
/// bins observed by every provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Union,
    Intersection,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Union => "union",
            Mode::Intersection => "intersection",
        }
    }

    pub fn tag(&self) -> u8 {
        match self {
            Mode::Union => 0,
            Mode::Intersection => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Mode> {
        match tag {
            0 => Some(Mode::Union),
            1 => Some(Mode::Intersection),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Long-term signing identities of both committees, in protocol order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rosters {
    pub cps: Vec<(PartyId, Element)>,
    pub dps: Vec<(PartyId, Element)>,
}

impl Rosters {
    pub fn cp_ids(&self) -> Vec<PartyId> {
        self.cps.iter().map(|(id, _)| *id).collect()
    }

    pub fn dp_ids(&self) -> Vec<PartyId> {
        self.dps.iter().map(|(id, _)| *id).collect()
    }

    /// All identities as one signing roster for the broadcast layer.
    pub fn all(&self) -> Vec<(PartyId, Element)> {
        let mut out = self.cps.clone();
        out.extend(self.dps.iter().cloned());
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamsError {
    InvalidParams(&'static str),
}

impl fmt::Display for ParamsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamsError::InvalidParams(what) => write!(f, "invalid parameters: {what}"),
        }
    }
}

impl core::error::Error for ParamsError {}

/// Smallest even n with n ≥ 64·ln(2/δ)/ε², the number of uniform binary
/// noise counters giving the aggregate (ε, δ)-differential privacy.
pub fn noise_size(epsilon: f64, delta: f64) -> Result<usize, ParamsError> {
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(ParamsError::InvalidParams("epsilon must be positive"));
    }
    if !delta.is_finite() || delta <= 0.0 || delta >= 1.0 {
        return Err(ParamsError::InvalidParams("delta must be in (0, 1)"));
    }
    let raw = 64.0 * libm::log(2.0 / delta) / (epsilon * epsilon);
    if raw >= u32::MAX as f64 {
        return Err(ParamsError::InvalidParams("noise size overflows"));
    }
    let mut n = libm::ceil(raw) as usize;
    n += n % 2;
    Ok(n.max(2))
}

/// One measurement session's full configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolParams {
    /// Bin count of the counter vector.
    pub b: usize,
    /// Computation party count.
    pub m: usize,
    /// Data provider count.
    pub d: usize,
    pub epsilon: f64,
    pub delta: f64,
    /// Noise counter count; must satisfy `noise_size(epsilon, delta)`.
    pub n: usize,
    pub mode: Mode,
    pub session: [u8; 16],
    pub rosters: Rosters,
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        if self.b < 1 || self.m < 1 || self.d < 1 {
            return Err(ParamsError::InvalidParams("b, m, d must all be at least 1"));
        }
        let floor = noise_size(self.epsilon, self.delta)?;
        if self.n % 2 != 0 || self.n < floor {
            return Err(ParamsError::InvalidParams(
                "n must be even and meet the privacy floor",
            ));
        }
        if self.rosters.cps.len() != self.m || self.rosters.dps.len() != self.d {
            return Err(ParamsError::InvalidParams("roster sizes disagree with m, d"));
        }
        let mut seen = alloc::collections::BTreeSet::new();
        for (id, _) in &self.rosters.cps {
            if !id.is_cp() || !seen.insert(*id) {
                return Err(ParamsError::InvalidParams("bad CP roster entry"));
            }
        }
        for (id, _) in &self.rosters.dps {
            if !id.is_dp() || !seen.insert(*id) {
                return Err(ParamsError::InvalidParams("bad DP roster entry"));
            }
        }
        Ok(())
    }

    /// Length of the shuffled vector: the noise counters followed by the
    /// aggregated bins.
    pub fn vector_len(&self) -> usize {
        self.n + self.b
    }
}
