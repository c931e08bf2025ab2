use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which count a regressor is trained against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    #[default]
    AllPeople,
    CustomersOnly,
}

impl std::str::FromStr for LabelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all_people" | "all-people" => Ok(LabelMode::AllPeople),
            "customers_only" | "customers-only" => Ok(LabelMode::CustomersOnly),
            other => Err(Error::Config(format!("unknown label mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for LabelMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LabelMode::AllPeople => "all_people",
            LabelMode::CustomersOnly => "customers_only",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PeopleLabel {
    pub total_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub customer_count: Option<u32>,
}

impl PeopleLabel {
    pub fn new(total_count: u32, customer_count: Option<u32>) -> Result<Self> {
        if let Some(c) = customer_count {
            if c > total_count {
                return Err(Error::Label(format!(
                    "customer count {c} exceeds people count {total_count}"
                )));
            }
        }
        Ok(Self {
            total_count,
            customer_count,
        })
    }

    pub fn total(total_count: u32) -> Self {
        Self {
            total_count,
            customer_count: None,
        }
    }

    /// Regression target under the given mode; `None` when the customer count is missing.
    pub fn target(&self, mode: LabelMode) -> Option<u32> {
        match mode {
            LabelMode::AllPeople => Some(self.total_count),
            LabelMode::CustomersOnly => self.customer_count,
        }
    }
}
