use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::SeqMatrix;

pub const ROPE_BASE: f64 = 10_000.0;

/// Where positional information enters attention. Both schemes touch only
/// language queries and keys; vision keys never receive positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PeScheme {
    None,
    /// `Q + P`, `K + P` with a sinusoidal table.
    #[default]
    AdditiveSinusoidal,
    Rotary,
}

/// Positional scheme plus the index of the first positioned token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Positional {
    pub scheme: PeScheme,
    pub offset: usize,
}

impl Positional {
    pub const NONE: Positional = Positional {
        scheme: PeScheme::None,
        offset: 0,
    };

    pub fn sinusoidal() -> Self {
        Self {
            scheme: PeScheme::AdditiveSinusoidal,
            offset: 0,
        }
    }

    pub fn positions(&self, len: usize) -> Vec<usize> {
        (self.offset..self.offset + len).collect()
    }
}

/// Additive positional vectors for a list of positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PETable {
    pub positions: Vec<usize>,
    pub dim: usize,
    pub entries: SeqMatrix,
}

impl PETable {
    /// Table covering positions `0..max_len`.
    pub fn new(max_len: usize, dim: usize) -> Result<Self> {
        let positions: Vec<usize> = (0..max_len).collect();
        sinusoidal_pe(&positions, dim)
    }

    pub fn max_len(&self) -> usize {
        self.positions.iter().max().map_or(0, |p| p + 1)
    }
}

/// Interleaved sinusoidal embedding: feature `2i` is
/// `sin(pos / 10000^(2i/dim))`, feature `2i+1` the matching cosine.
pub fn sinusoidal_pe(positions: &[usize], dim: usize) -> Result<PETable> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "sinusoidal embedding needs an even, non-zero dim (got {dim})"
        )));
    }
    let entries = SeqMatrix::from_fn(positions.len(), dim, |r, c| {
        let pair = (c / 2) as f64;
        let angle = positions[r] as f64 / 10_000f64.powf(2.0 * pair / dim as f64);
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    });
    Ok(PETable {
        positions: positions.to_vec(),
        dim,
        entries,
    })
}
