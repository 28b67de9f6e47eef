use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{EpisodeConfig, Mode};

/// The eight standard conditions, in reporting order.
pub const STANDARD_CONDITIONS: [&str; 8] = [
    "sim5nc", "sim5c", "seq5nc", "seq5c", "sim3nc", "sim3c", "seq3nc", "seq3c",
];

/// Decision mode, table size and communication flag, written as
/// `sim`/`seq` + n + `c`/`nc` (e.g. `sim5nc`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConditionCode {
    pub mode: Mode,
    pub n: usize,
    pub comms: bool,
}

impl ConditionCode {
    pub fn new(mode: Mode, n: usize, comms: bool) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidConfiguration(format!(
                "a table needs at least 3 philosophers, got {n}"
            )));
        }
        Ok(ConditionCode { mode, n, comms })
    }

    pub fn standard() -> Vec<ConditionCode> {
        STANDARD_CONDITIONS
            .iter()
            .map(|c| c.parse().expect("standard codes parse"))
            .collect()
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            mode: self.mode,
            n: self.n,
            comms: self.comms,
        }
    }

    /// Position in the standard reporting order; non-standard codes sort
    /// after all standard ones.
    pub fn sort_key(&self) -> (usize, String) {
        let code = self.to_string();
        let rank = STANDARD_CONDITIONS
            .iter()
            .position(|c| *c == code)
            .unwrap_or(STANDARD_CONDITIONS.len());
        (rank, code)
    }
}

impl fmt::Display for ConditionCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.mode {
            Mode::Simultaneous => "sim",
            Mode::Sequential => "seq",
        };
        let comms = if self.comms { "c" } else { "nc" };
        write!(f, "{mode}{}{comms}", self.n)
    }
}

impl FromStr for ConditionCode {
    type Err = Error;

    fn from_str(code: &str) -> Result<Self> {
        let unknown = || Error::UnknownCondition {
            code: code.to_string(),
            valid: STANDARD_CONDITIONS.join(", "),
        };
        let (mode, rest) = if let Some(rest) = code.strip_prefix("sim") {
            (Mode::Simultaneous, rest)
        } else if let Some(rest) = code.strip_prefix("seq") {
            (Mode::Sequential, rest)
        } else {
            return Err(unknown());
        };
        let (digits, comms) = if let Some(d) = rest.strip_suffix("nc") {
            (d, false)
        } else if let Some(d) = rest.strip_suffix('c') {
            (d, true)
        } else {
            return Err(unknown());
        };
        if digits.is_empty()
            || !digits.bytes().all(|b| b.is_ascii_digit())
            || digits.starts_with('0')
        {
            return Err(unknown());
        }
        let n: usize = digits.parse().map_err(|_| unknown())?;
        if n < 3 {
            return Err(unknown());
        }
        Ok(ConditionCode { mode, n, comms })
    }
}

impl Serialize for ConditionCode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ConditionCode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
