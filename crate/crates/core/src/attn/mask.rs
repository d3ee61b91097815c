use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::SeqMatrix;

/// Additive value for blocked query/key pairs. Finite, so every intermediate
/// stays finite; after max subtraction its softmax weight underflows to 0.
pub const MASK_SENTINEL: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskKind {
    /// Queries span the whole `[vision; language]` sequence, key `q` is
    /// visible from query `p` iff `q <= p`.
    CausalConcat,
    /// Queries are language tokens only. Every vision key is visible, language
    /// keys are visible up to and including the query's own position.
    PartCausal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub n_vision: usize,
    pub n_language: usize,
    pub kind: MaskKind,
    pub sentinel: f64,
}

impl MaskSpec {
    pub fn query_len(&self) -> usize {
        match self.kind {
            MaskKind::CausalConcat => self.n_vision + self.n_language,
            MaskKind::PartCausal => self.n_language,
        }
    }

    pub fn key_len(&self) -> usize {
        self.n_vision + self.n_language
    }

    pub fn is_visible(&self, query: usize, key: usize) -> bool {
        match self.kind {
            MaskKind::CausalConcat => key <= query,
            MaskKind::PartCausal => key < self.n_vision || key - self.n_vision <= query,
        }
    }

    /// `query_len x key_len` additive mask: 0 where visible, sentinel elsewhere.
    pub fn to_matrix(&self) -> SeqMatrix {
        SeqMatrix::from_fn(self.query_len(), self.key_len(), |q, k| {
            if self.is_visible(q, k) {
                0.0
            } else {
                self.sentinel
            }
        })
    }
}

/// Mask for mixture attention over `n_vision` vision keys followed by
/// `n_language` language tokens.
pub fn build_part_causal_mask(n_vision: usize, n_language: usize) -> Result<MaskSpec> {
    if n_language == 0 {
        return Err(Error::InvalidArgument(
            "part-causal mask needs at least one language token".into(),
        ));
    }
    Ok(MaskSpec {
        n_vision,
        n_language,
        kind: MaskKind::PartCausal,
        sentinel: MASK_SENTINEL,
    })
}

/// Plain causal mask over `total_len` tokens.
pub fn build_causal_mask(total_len: usize) -> Result<MaskSpec> {
    build_causal_concat_mask(0, total_len)
}

/// Causal mask over a concatenated `[vision; language]` sequence.
pub fn build_causal_concat_mask(n_vision: usize, n_language: usize) -> Result<MaskSpec> {
    if n_vision + n_language == 0 {
        return Err(Error::InvalidArgument(
            "causal mask needs a non-empty sequence".into(),
        ));
    }
    Ok(MaskSpec {
        n_vision,
        n_language,
        kind: MaskKind::CausalConcat,
        sentinel: MASK_SENTINEL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn visible_count(m: &SeqMatrix, row: usize) -> usize {
        m.row(row).iter().filter(|&&v| v == 0.0).count()
    }

    #[test]
    fn no_vision_degenerates_to_causal() {
        let part = build_part_causal_mask(0, 3).unwrap().to_matrix();
        let causal = build_causal_mask(3).unwrap().to_matrix();
        assert_eq!(part, causal);
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(part.get(r, c) == 0.0, c <= r);
            }
        }
    }

    #[test]
    fn two_by_two_visibility() {
        // keys: v0 v1 l0 l1
        let m = build_part_causal_mask(2, 2).unwrap().to_matrix();
        assert_eq!(m.row(0), &[0.0, 0.0, 0.0, MASK_SENTINEL]);
        assert_eq!(m.row(1), &[0.0, 0.0, 0.0, 0.0]);
        let single = build_part_causal_mask(2, 1).unwrap().to_matrix();
        assert_eq!(single.row(0), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn causal_triangle_counts() {
        assert_eq!(build_causal_mask(1).unwrap().to_matrix().data(), &[0.0]);
        let m = build_causal_mask(3).unwrap().to_matrix();
        assert_eq!(
            (0..3).map(|r| visible_count(&m, r)).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
    }

    #[test]
    fn empty_sizes_rejected() {
        assert!(build_part_causal_mask(4, 0).is_err());
        assert!(build_causal_mask(0).is_err());
    }
}
