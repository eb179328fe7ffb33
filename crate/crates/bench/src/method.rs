use std::fmt;
use std::str::FromStr;

use msphs::baselines::Smoother;
use serde::{Deserialize, Serialize};

use crate::error::BenchError;

/// Inference method identifiers as they appear in configs and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MethodId {
    MsPhs { order: usize },
    MsOde { order: usize },
    GpPhsLoess,
    GpPhsSavgol,
}

impl MethodId {
    /// Whether the method yields a Hamiltonian posterior.
    pub fn has_hamiltonian(&self) -> bool {
        !matches!(self, MethodId::MsOde { .. })
    }

    pub fn smoother(&self) -> Option<Smoother> {
        match self {
            MethodId::GpPhsLoess => Some(Smoother::DEFAULT_LOESS),
            MethodId::GpPhsSavgol => Some(Smoother::DEFAULT_SAVGOL),
            _ => None,
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodId::MsPhs { order } => write!(f, "ms-phs-ab-{order}"),
            MethodId::MsOde { order } => write!(f, "ms-ode-ab-{order}"),
            MethodId::GpPhsLoess => f.write_str("gp-phs-loess-2"),
            MethodId::GpPhsSavgol => f.write_str("gp-phs-savgol-3"),
        }
    }
}

impl FromStr for MethodId {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let order = |rest: &str| match rest {
            "1" | "2" | "3" => Ok(rest.parse().expect("digit")),
            _ => Err(BenchError::UnknownMethod(s.to_string())),
        };
        if let Some(rest) = s.strip_prefix("ms-phs-ab-") {
            return Ok(MethodId::MsPhs { order: order(rest)? });
        }
        if let Some(rest) = s.strip_prefix("ms-ode-ab-") {
            return Ok(MethodId::MsOde { order: order(rest)? });
        }
        match s {
            "gp-phs-loess-2" => Ok(MethodId::GpPhsLoess),
            "gp-phs-savgol-3" => Ok(MethodId::GpPhsSavgol),
            _ => Err(BenchError::UnknownMethod(s.to_string())),
        }
    }
}

impl TryFrom<String> for MethodId {
    type Error = BenchError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<MethodId> for String {
    fn from(m: MethodId) -> String {
        m.to_string()
    }
}
