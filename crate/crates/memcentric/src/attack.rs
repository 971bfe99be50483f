//! Attack-pattern generators: single/double/many-sided hammering and
//! open-row press holds. A generator declares an exact per-window access
//! multiset (auditable), which the runner replays between refreshes.

use serde::Deserialize;
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "pattern", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackSpec {
    /// Hammer one aggressor row.
    SingleSided {
        row: usize,
        acts_per_window: u64,
        windows: u64,
    },
    /// Hammer both neighbors of a victim row.
    DoubleSided {
        victim: usize,
        acts_per_window: u64,
        windows: u64,
    },
    /// Round-robin over `sides` aggressors spaced `spacing` rows apart
    /// (spacing > 2x blast radius keeps victim sets disjoint).
    ManySided {
        sides: usize,
        base_row: usize,
        spacing: usize,
        acts_per_window: u64,
        windows: u64,
    },
    /// Single-sided with each activation holding the row open.
    PressHold {
        row: usize,
        hold_cycles: u64,
        acts_per_window: u64,
        windows: u64,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("attack: {0}")]
    Invalid(String),
}

impl AttackSpec {
    pub fn windows(&self) -> u64 {
        match self {
            AttackSpec::SingleSided { windows, .. }
            | AttackSpec::DoubleSided { windows, .. }
            | AttackSpec::ManySided { windows, .. }
            | AttackSpec::PressHold { windows, .. } => *windows,
        }
    }

    pub fn aggressor_rows(&self) -> Vec<usize> {
        match self {
            AttackSpec::SingleSided { row, .. } | AttackSpec::PressHold { row, .. } => {
                vec![*row]
            }
            AttackSpec::DoubleSided { victim, .. } => vec![victim - 1, victim + 1],
            AttackSpec::ManySided {
                sides,
                base_row,
                spacing,
                ..
            } => (0..*sides).map(|i| base_row + i * spacing).collect(),
        }
    }

    pub fn hold_cycles(&self) -> Option<u64> {
        match self {
            AttackSpec::PressHold { hold_cycles, .. } => Some(*hold_cycles),
            _ => None,
        }
    }

    /// The declared per-window access multiset: (row, activation count).
    pub fn window_multiset(&self) -> Vec<(usize, u64)> {
        let acts = match self {
            AttackSpec::SingleSided {
                acts_per_window, ..
            }
            | AttackSpec::DoubleSided {
                acts_per_window, ..
            }
            | AttackSpec::ManySided {
                acts_per_window, ..
            }
            | AttackSpec::PressHold {
                acts_per_window, ..
            } => *acts_per_window,
        };
        self.aggressor_rows().into_iter().map(|r| (r, acts)).collect()
    }

    /// One window's activation sequence, round-robin across aggressors (the
    /// interleaving that defeats sampler-based mitigations).
    pub fn window_sequence(&self) -> Vec<usize> {
        let multiset = self.window_multiset();
        let max_acts = multiset.iter().map(|(_, n)| *n).max().unwrap_or(0);
        let mut seq = Vec::new();
        for i in 0..max_acts {
            for (row, n) in &multiset {
                if i < *n {
                    seq.push(*row);
                }
            }
        }
        seq
    }

    pub fn validate(&self, rows_per_subarray: usize) -> Result<(), AttackError> {
        if self.windows() == 0 {
            return Err(AttackError::Invalid("windows ≥ 1".into()));
        }
        if self.window_multiset().iter().all(|(_, n)| *n == 0) {
            return Err(AttackError::Invalid("acts_per_window ≥ 1".into()));
        }
        if let AttackSpec::DoubleSided { victim, .. } = self {
            if *victim == 0 {
                return Err(AttackError::Invalid(
                    "double-sided victim needs a row below it".into(),
                ));
            }
        }
        if let AttackSpec::ManySided { sides, spacing, .. } = self {
            if *sides < 2 {
                return Err(AttackError::Invalid("many-sided needs ≥ 2 sides".into()));
            }
            if *spacing == 0 {
                return Err(AttackError::Invalid("spacing ≥ 1".into()));
            }
        }
        for row in self.aggressor_rows() {
            if row >= rows_per_subarray {
                return Err(AttackError::Invalid(format!(
                    "aggressor row {row} outside subarray of {rows_per_subarray} rows"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multiset_matches_declaration() {
        let spec = AttackSpec::ManySided {
            sides: 3,
            base_row: 10,
            spacing: 6,
            acts_per_window: 5,
            windows: 2,
        };
        assert_eq!(
            spec.window_multiset(),
            vec![(10, 5), (16, 5), (22, 5)]
        );
        let seq = spec.window_sequence();
        assert_eq!(seq.len(), 15);
        // exact multiset: each aggressor appears acts_per_window times
        for row in [10, 16, 22] {
            assert_eq!(seq.iter().filter(|&&r| r == row).count(), 5);
        }
        // round-robin interleaving
        assert_eq!(&seq[0..6], &[10, 16, 22, 10, 16, 22]);
    }

    #[test]
    fn double_sided_aggressors() {
        let spec = AttackSpec::DoubleSided {
            victim: 8,
            acts_per_window: 3,
            windows: 1,
        };
        assert_eq!(spec.aggressor_rows(), vec![7, 9]);
    }

    #[test]
    fn validation_rejects_out_of_range() {
        let spec = AttackSpec::SingleSided {
            row: 80,
            acts_per_window: 1,
            windows: 1,
        };
        assert!(spec.validate(64).is_err());
        let spec = AttackSpec::ManySided {
            sides: 1,
            base_row: 0,
            spacing: 4,
            acts_per_window: 1,
            windows: 1,
        };
        assert!(spec.validate(64).is_err());
    }
}
