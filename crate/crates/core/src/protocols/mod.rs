//! Multi-party measurement protocols built from local operations and
//! classical messages, each producing a causally ordered transcript.

pub mod aa;
pub mod gr;
pub mod transcript;
pub mod vaidman;

use serde::ser::{Serialize, SerializeStruct, Serializer};
use serde_json::Value;

use crate::branch::Chooser;
use crate::error::{Error, Result};
use crate::statevec::Ket;

pub use aa::{aa_total_spin_z, aa_verify_singlet, verify_canonical_equal};
pub use gr::{general_basis, gr_general_angle_measure, gr_twisted_basis_measure, twisted_basis, OUTCOME_TABLE};
pub use transcript::{Event, EventKind, Transcript, Violation};
pub use vaidman::{
    partial_teleport, twisted_observable, vaidman_bipartite_measure, vaidman_three_party_measure, EigenBasis,
};

pub const ALICE: &str = "A";
pub const BOB: &str = "B";
pub const COLLIN: &str = "C";
pub const DEFAULT_MAX_ROUNDS: usize = 8;

/// Site label of party `i`: A, B, C, …
pub fn site_name(i: usize) -> String {
    char::from(b'A' + (i % 26) as u8).to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Inferred {
    Real(f64),
    Verdict(bool),
    /// One-based eigenstate index.
    Index(usize),
    Label(String),
    Failure(String),
}

impl Serialize for Inferred {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("Inferred", 2)?;
        match self {
            Inferred::Real(v) => {
                st.serialize_field("type", "real")?;
                st.serialize_field("value", v)?;
            }
            Inferred::Verdict(v) => {
                st.serialize_field("type", "verdict")?;
                st.serialize_field("value", if *v { "yes" } else { "no" })?;
            }
            Inferred::Index(v) => {
                st.serialize_field("type", "index")?;
                st.serialize_field("value", v)?;
            }
            Inferred::Label(v) => {
                st.serialize_field("type", "label")?;
                st.serialize_field("value", v)?;
            }
            Inferred::Failure(v) => {
                st.serialize_field("type", "failure")?;
                st.serialize_field("value", v)?;
            }
        }
        st.end()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PostState {
    State(Ket),
    Destroyed,
}

impl Serialize for PostState {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PostState::State(k) => k.serialize(s),
            PostState::Destroyed => s.serialize_str("destroyed"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Resources {
    pub ebits_consumed: usize,
    pub rounds: usize,
    pub messages: usize,
}

/// Every live subsystem at the end of a run together with its holder.
#[derive(Debug, Clone, PartialEq)]
pub struct Physical {
    pub ket: Ket,
    pub owners: Vec<String>,
}

impl Physical {
    pub fn held_by(&self, site: &str) -> Vec<usize> {
        self.owners.iter().enumerate().filter(|(_, o)| *o == site).map(|(i, _)| i).collect()
    }
}

#[derive(Debug, Clone, serde::Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ProtocolResult {
    pub protocol: String,
    pub success: bool,
    pub inferred_value: Inferred,
    pub post_state: PostState,
    pub resources: Resources,
    pub details: Value,
    #[serde(skip)]
    pub transcript: Transcript,
    #[serde(skip)]
    pub physical: Option<Physical>,
}

impl ProtocolResult {
    /// Fills in the message count from the transcript.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn build(
        protocol: &str,
        success: bool,
        inferred_value: Inferred,
        post_state: PostState,
        ebits_consumed: usize,
        rounds: usize,
        details: Value,
        transcript: Transcript,
        physical: Option<Physical>,
    ) -> Self {
        let messages = transcript.count(EventKind::ClassicalSend);
        Self {
            protocol: protocol.into(),
            success,
            inferred_value,
            post_state,
            resources: Resources { ebits_consumed, rounds, messages },
            details,
            transcript,
            physical,
        }
    }

    /// Resource counts agree with the events that produced them.
    pub fn resources_consistent(&self) -> bool {
        let t = &self.transcript;
        self.resources.messages == t.count(EventKind::ClassicalSend)
            && self.resources.ebits_consumed == t.count_op("ebitDraw")
    }

    /// A short key for frequency tables.
    pub fn outcome_key(&self) -> String {
        match &self.inferred_value {
            Inferred::Real(v) => value_key(*v),
            Inferred::Verdict(v) => (if *v { "yes" } else { "no" }).into(),
            Inferred::Index(i) => format!("Psi{i}"),
            Inferred::Label(l) => l.clone(),
            Inferred::Failure(_) => "failure".into(),
        }
    }
}

/// Frequency-table key of a real outcome, rounded to 1e-9.
pub fn value_key(v: f64) -> String {
    let r = (v * 1e9).round() / 1e9;
    format!("{}", if r == 0.0 { 0.0 } else { r })
}

/// Parameters selecting one of the shipped protocols.
#[derive(Debug, Clone)]
pub enum ProtocolSpec {
    AaTotalSpinZ,
    AaVerifySinglet,
    VerifyCanonicalEqual { parties: usize, local_dim: usize },
    GrTwisted,
    GrGeneral { alpha: f64 },
    PartialTeleport,
    VaidmanBipartite { basis: EigenBasis, qubits_per_site: usize },
    VaidmanThreeParty { basis: EigenBasis },
}

pub struct CatalogEntry {
    pub name: &'static str,
    pub description: &'static str,
}

pub const CATALOG: &[CatalogEntry] = &[
    CatalogEntry { name: "aa_total_spin_z", description: "total spin-z of two qubits via correlated meters" },
    CatalogEntry { name: "aa_verify_singlet", description: "nondemolition verification of the singlet" },
    CatalogEntry {
        name: "verify_canonical_equal",
        description: "verification of the equal-coefficient canonical form",
    },
    CatalogEntry { name: "gr_twisted_basis_measure", description: "stator measurement of the twisted product basis" },
    CatalogEntry {
        name: "gr_general_angle_measure",
        description: "repeat-until-success stator measurement of a rotated product basis",
    },
    CatalogEntry { name: "partial_teleport", description: "uncorrected teleportation of Bob's qubits to Alice" },
    CatalogEntry {
        name: "vaidman_bipartite_measure",
        description: "nonlocal observable measurement by nested teleportation rounds",
    },
    CatalogEntry { name: "vaidman_three_party_measure", description: "three-party nested teleportation measurement" },
];

impl ProtocolSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProtocolSpec::AaTotalSpinZ => "aa_total_spin_z",
            ProtocolSpec::AaVerifySinglet => "aa_verify_singlet",
            ProtocolSpec::VerifyCanonicalEqual { .. } => "verify_canonical_equal",
            ProtocolSpec::GrTwisted => "gr_twisted_basis_measure",
            ProtocolSpec::GrGeneral { .. } => "gr_general_angle_measure",
            ProtocolSpec::PartialTeleport => "partial_teleport",
            ProtocolSpec::VaidmanBipartite { .. } => "vaidman_bipartite_measure",
            ProtocolSpec::VaidmanThreeParty { .. } => "vaidman_three_party_measure",
        }
    }

    /// Default parameters for a named protocol on `qubits` input qubits.
    pub fn from_name(name: &str, alpha: Option<f64>, state_dims: &[usize]) -> Result<Self> {
        let all_qubits = state_dims.iter().all(|&d| d == 2);
        Ok(match name {
            "aa_total_spin_z" => ProtocolSpec::AaTotalSpinZ,
            "aa_verify_singlet" => ProtocolSpec::AaVerifySinglet,
            "verify_canonical_equal" => ProtocolSpec::VerifyCanonicalEqual {
                parties: state_dims.len(),
                local_dim: state_dims.first().copied().unwrap_or(0),
            },
            "gr_twisted_basis_measure" => ProtocolSpec::GrTwisted,
            "gr_general_angle_measure" => {
                ProtocolSpec::GrGeneral { alpha: alpha.unwrap_or(std::f64::consts::FRAC_PI_4) }
            }
            "partial_teleport" => ProtocolSpec::PartialTeleport,
            "vaidman_bipartite_measure" => {
                if !all_qubits || !state_dims.len().is_multiple_of(2) || state_dims.is_empty() {
                    return Err(Error::DimensionMismatch("expected 2K qubits".into()));
                }
                let k = state_dims.len() / 2;
                let basis = if k == 1 {
                    EigenBasis::from_operator(&twisted_observable(), 1e-9)?
                } else {
                    EigenBasis::computational(state_dims.len())
                };
                ProtocolSpec::VaidmanBipartite { basis, qubits_per_site: k }
            }
            "vaidman_three_party_measure" => {
                if state_dims != [2, 2, 2] {
                    return Err(Error::DimensionMismatch("expected three qubits".into()));
                }
                ProtocolSpec::VaidmanThreeParty { basis: EigenBasis::ghz() }
            }
            other => return Err(Error::InvalidArgument(format!("unknown protocol {other}"))),
        })
    }

    /// Site holding input subsystem `i` of an `n`-subsystem state.
    pub fn owner(&self, i: usize, n: usize) -> String {
        match self {
            ProtocolSpec::VaidmanBipartite { qubits_per_site, .. } => {
                (if i < *qubits_per_site { ALICE } else { BOB }).into()
            }
            ProtocolSpec::PartialTeleport => (if i < n / 2 { ALICE } else { BOB }).into(),
            _ => site_name(i),
        }
    }

    pub fn run(&self, psi: &Ket, max_rounds: usize, chooser: &mut dyn Chooser) -> Result<ProtocolResult> {
        use crate::bell::EbitPool;
        match self {
            ProtocolSpec::AaTotalSpinZ => aa_total_spin_z(psi, chooser),
            ProtocolSpec::AaVerifySinglet => aa_verify_singlet(psi, chooser),
            ProtocolSpec::VerifyCanonicalEqual { parties, local_dim } => {
                verify_canonical_equal(psi, *parties, *local_dim, chooser)
            }
            ProtocolSpec::GrTwisted => gr_twisted_basis_measure(psi, &mut EbitPool::stator(1), chooser),
            ProtocolSpec::GrGeneral { alpha } => {
                gr_general_angle_measure(psi, *alpha, &mut EbitPool::stator(max_rounds), max_rounds, chooser)
            }
            ProtocolSpec::PartialTeleport => vaidman::partial_teleport_protocol(psi, chooser),
            ProtocolSpec::VaidmanBipartite { basis, qubits_per_site } => {
                let k = *qubits_per_site;
                let mut pool = EbitPool::teleport(vaidman::bipartite_ebits(k, max_rounds));
                vaidman_bipartite_measure(psi, basis, k, &mut pool, max_rounds, chooser)
            }
            ProtocolSpec::VaidmanThreeParty { basis } => {
                let mut pool = EbitPool::teleport(vaidman::three_party_ebits(max_rounds));
                vaidman_three_party_measure(psi, basis, &mut pool, max_rounds, chooser)
            }
        }
    }
}
