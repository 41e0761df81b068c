use std::fmt;

use serde::{Deserialize, Serialize};

/// Traffic condition class. The numeric value is the training label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Normal = 0,
    Recurrent = 1,
    Incident = 2,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Normal, Condition::Recurrent, Condition::Incident];

    pub fn label(self) -> u8 {
        self as u8
    }

    pub fn from_label(label: u8) -> Option<Self> {
        match label {
            0 => Some(Condition::Normal),
            1 => Some(Condition::Recurrent),
            2 => Some(Condition::Incident),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Map dot color used by the operator views.
    pub fn color(self) -> &'static str {
        match self {
            Condition::Incident => "red",
            Condition::Recurrent => "orange",
            Condition::Normal => "green",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Condition::Normal => "normal",
            Condition::Recurrent => "recurrent",
            Condition::Incident => "incident",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
