use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Trip purpose. The survey covers `HBW` and `HBO`; the trip population uses all six.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[allow(clippy::upper_case_acronyms)]
pub enum Purpose {
    HBW,
    HBE,
    HBS,
    HBO,
    NHBW,
    NHBO,
}

impl Purpose {
    pub const ALL: [Purpose; 6] = [
        Purpose::HBW,
        Purpose::HBE,
        Purpose::HBS,
        Purpose::HBO,
        Purpose::NHBW,
        Purpose::NHBO,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Purpose::HBW => "HBW",
            Purpose::HBE => "HBE",
            Purpose::HBS => "HBS",
            Purpose::HBO => "HBO",
            Purpose::NHBW => "NHBW",
            Purpose::NHBO => "NHBO",
        }
    }
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownPurpose(pub String);

impl fmt::Display for UnknownPurpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown trip purpose `{}`", self.0)
    }
}

impl std::error::Error for UnknownPurpose {}

impl FromStr for Purpose {
    type Err = UnknownPurpose;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Purpose::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownPurpose(s.to_string()))
    }
}
