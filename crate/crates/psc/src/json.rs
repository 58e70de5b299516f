//! Stable single-line JSON rendering of session outcomes, the scripting
//! contract for every verb: {"outcome","value","accused","phase","evidence"}.
//! All five keys are always present so downstream parsers never branch on
//! shape, only on `outcome`.

use serde::{Deserialize, Serialize};

use psc_core::protocol::{Evidence, Outcome};
use psc_core::wire::PhaseTag;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeJson {
    pub outcome: String,
    pub value: Option<i64>,
    pub accused: Vec<String>,
    pub phase: Option<String>,
    pub evidence: Option<String>,
}

pub fn phase_name(phase: PhaseTag) -> &'static str {
    match phase {
        PhaseTag::KeyGen => "keygen",
        PhaseTag::DataCollection => "data-collection",
        PhaseTag::NoiseGeneration => "noise-generation",
        PhaseTag::InputSubmission => "input-submission",
        PhaseTag::Shuffling => "shuffling",
        PhaseTag::Rrd => "rrd",
        PhaseTag::Output => "output",
    }
}

pub fn phase_from_name(name: &str) -> Option<PhaseTag> {
    const ALL: [PhaseTag; 7] = [
        PhaseTag::KeyGen,
        PhaseTag::DataCollection,
        PhaseTag::NoiseGeneration,
        PhaseTag::InputSubmission,
        PhaseTag::Shuffling,
        PhaseTag::Rrd,
        PhaseTag::Output,
    ];
    ALL.into_iter().find(|p| phase_name(*p) == name)
}

pub fn evidence_name(evidence: Evidence) -> &'static str {
    match evidence {
        Evidence::Equivocation => "equivocation",
        Evidence::MissingMessage => "missing-message",
        Evidence::InvalidProof => "invalid-proof",
        Evidence::WrongStatement => "wrong-statement",
        Evidence::IdentityFirstComponent => "identity-first-component",
        Evidence::BadKeySignature => "bad-key-signature",
    }
}

impl OutcomeJson {
    pub fn from_outcome(outcome: &Outcome) -> OutcomeJson {
        match outcome {
            Outcome::Result(r) => OutcomeJson {
                outcome: "result".to_string(),
                value: Some(r.noisy_count),
                accused: Vec::new(),
                phase: None,
                evidence: None,
            },
            Outcome::Blame(b) => OutcomeJson {
                outcome: "blame".to_string(),
                value: None,
                accused: b.accused.iter().map(|p| p.to_string()).collect(),
                phase: Some(phase_name(b.phase).to_string()),
                evidence: Some(evidence_name(b.evidence).to_string()),
            },
        }
    }

    /// One line, no trailing newline; field order is fixed by the struct.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("outcome serializes")
    }
}
