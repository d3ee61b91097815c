use serde::{Deserialize, Serialize};

use super::matrix::{matmul, SeqMatrix};
use crate::error::{Error, Result};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// Pointwise nonlinearity used inside FFNs and connectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    /// GELU, tanh approximation.
    #[default]
    Gelu,
    Silu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let t = (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh();
                0.5 * x * (1.0 + t)
            }
            Activation::Silu => x / (1.0 + (-x).exp()),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let inner = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
                let t = inner.tanh();
                let dinner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
        }
    }

    pub fn apply_matrix(self, m: &SeqMatrix) -> SeqMatrix {
        m.map(|v| self.apply(v))
    }
}

/// Two-matrix feed-forward block applied row-wise: `Act(a * w1) * w2`.
pub fn ffn_forward(
    a: &SeqMatrix,
    w1: &SeqMatrix,
    w2: &SeqMatrix,
    act: Activation,
) -> Result<SeqMatrix> {
    if w2.cols() != a.cols() {
        return Err(Error::shape("ffn_forward", a.shape(), w2.shape()));
    }
    let hidden = act.apply_matrix(&matmul(a, w1)?);
    matmul(&hidden, w2)
}
