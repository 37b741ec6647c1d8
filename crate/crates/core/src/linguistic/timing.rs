use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hierarchy level of a coarse-coded timing signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingLevel {
    Word,
    Syllable,
    Phone,
    Frame,
}

impl TimingLevel {
    pub const ALL: [TimingLevel; 4] = [
        TimingLevel::Word,
        TimingLevel::Syllable,
        TimingLevel::Phone,
        TimingLevel::Frame,
    ];

    pub fn dim(self) -> usize {
        match self {
            TimingLevel::Word => 64,
            TimingLevel::Syllable | TimingLevel::Phone => 4,
            TimingLevel::Frame => 3,
        }
    }

    pub fn encode(self, relative_position: f64) -> Vec<f64> {
        timing_signal(relative_position, self.dim()).expect("positions produced by the tree are in range")
    }
}

/// Cosine coarse coding of a relative position in `[0, 1]`.
///
/// Component `j` is a raised-cosine bump centred at `j / (dim - 1)` with
/// half-width `1 / (dim - 1)`, so neighbouring bumps overlap and every
/// component lies in `[0, 1]`.
pub fn timing_signal(relative_position: f64, dim: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&relative_position) {
        return Err(Error::Input(format!(
            "relative position {relative_position} outside [0, 1]"
        )));
    }
    if dim < 2 {
        return Err(Error::Input(format!("timing signal needs dim >= 2, got {dim}")));
    }
    let width = 1.0 / (dim - 1) as f64;
    Ok((0..dim)
        .map(|j| {
            let center = j as f64 * width;
            let u = ((relative_position - center) / width).clamp(-1.0, 1.0);
            0.5 * (1.0 + (PI * u).cos())
        })
        .collect())
}
