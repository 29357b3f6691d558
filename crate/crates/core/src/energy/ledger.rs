use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::PowerState;
use crate::error::{Error, Result};

/// Accumulated energy per power state. Entries only grow and `total` is kept
/// equal to the sum of the entries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    per_state_j: BTreeMap<PowerState, f64>,
    total_j: f64,
}

impl EnergyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, state: PowerState, joules: f64) -> Result<()> {
        if !(joules >= 0.0 && joules.is_finite()) {
            return Err(Error::param(
                "joules",
                format!("ledger entries must be finite and non-negative, got {joules}"),
            ));
        }
        if joules == 0.0 {
            return Ok(());
        }
        *self.per_state_j.entry(state).or_insert(0.0) += joules;
        self.total_j += joules;
        Ok(())
    }

    /// Value-style variant of [`EnergyLedger::add`].
    pub fn with(mut self, state: PowerState, joules: f64) -> Result<Self> {
        self.add(state, joules)?;
        Ok(self)
    }

    pub fn get(&self, state: PowerState) -> f64 {
        self.per_state_j.get(&state).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.total_j
    }

    pub fn sum_of_states(&self) -> f64 {
        self.per_state_j.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (PowerState, f64)> + '_ {
        self.per_state_j.iter().map(|(s, j)| (*s, *j))
    }

    /// Fraction of the total attributed to `state`; zero for an empty ledger.
    pub fn share(&self, state: PowerState) -> f64 {
        if self.total_j > 0.0 {
            self.get(state) / self.total_j
        } else {
            0.0
        }
    }
}
