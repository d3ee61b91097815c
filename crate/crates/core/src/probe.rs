//! Layer-wise cosine similarity between a decoder's input rows and each
//! layer's output rows, per modality.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::decoder::ForwardTrace;
use crate::error::{Error, Result};
use crate::numkit::SeqMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Vision,
    Language,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Vision => "vision",
            Modality::Language => "language",
        })
    }
}

/// Which vision rows count as "the original sequence".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VisionReference {
    /// Encoder features before the connector. Needs `d_vision == d_model`.
    PreConnector,
    /// What the first decoder layer actually sees.
    #[default]
    PostConnector,
}

/// Mean per-token cosine for one modality across layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityTrack {
    pub modality: Modality,
    /// `mean_cos[i]` compares layer `i + 1`'s output with the reference.
    pub mean_cos: Vec<f64>,
    /// Tokens skipped per layer because a row had zero norm.
    pub excluded_tokens: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityProfile {
    pub n_layers: usize,
    pub language: ModalityTrack,
    /// Absent for mixture decoders, whose vision rows never enter the stream.
    pub vision: Option<ModalityTrack>,
    pub aggregation: String,
}

pub const AGGREGATION: &str = "mean of per-token cosine";

/// Mean over rows of `cos(a_i, b_i)`, skipping rows where either side has
/// zero norm. Returns the mean and the number of skipped rows.
pub fn mean_token_cosine(a: &SeqMatrix, b: &SeqMatrix) -> Result<(f64, usize)> {
    if a.shape() != b.shape() {
        return Err(Error::shape("mean_token_cosine", a.shape(), b.shape()));
    }
    let mut sum = 0.0;
    let mut kept = 0usize;
    for i in 0..a.rows() {
        let (x, y) = (a.row(i), b.row(i));
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        let syy: f64 = y.iter().map(|v| v * v).sum();
        if sxx == 0.0 || syy == 0.0 {
            continue;
        }
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        // one square root keeps cos(x, x) at exactly 1
        sum += (dot / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
        kept += 1;
    }
    if kept == 0 {
        return Err(Error::InvalidArgument("every token has zero norm".into()));
    }
    Ok((sum / kept as f64, a.rows() - kept))
}

fn track(
    modality: Modality,
    reference: &SeqMatrix,
    outputs: impl Iterator<Item = SeqMatrix>,
) -> Result<ModalityTrack> {
    let mut mean_cos = Vec::new();
    let mut excluded_tokens = Vec::new();
    for out in outputs {
        let (c, skipped) = mean_token_cosine(reference, &out)?;
        mean_cos.push(c);
        excluded_tokens.push(skipped);
    }
    Ok(ModalityTrack {
        modality,
        mean_cos,
        excluded_tokens,
    })
}

/// Per-layer similarity profile of `trace` against reference rows.
///
/// `vision` is only consulted for traces whose layers carry vision rows.
pub fn cosine_profile(
    trace: &ForwardTrace,
    language: &SeqMatrix,
    vision: Option<&SeqMatrix>,
) -> Result<SimilarityProfile> {
    let n = trace.n_layers();
    let language = track(
        Modality::Language,
        language,
        (0..n).map(|i| trace.language_output(i)),
    )?;
    let vision = match (trace.carries_vision(), vision) {
        (true, Some(reference)) => Some(track(
            Modality::Vision,
            reference,
            (0..n).map(|i| {
                trace
                    .vision_output(i)
                    .expect("vanilla trace carries vision")
            }),
        )?),
        (true, None) => {
            return Err(Error::InvalidArgument(
                "a vanilla trace needs a vision reference".into(),
            ))
        }
        (false, _) => None,
    };
    Ok(SimilarityProfile {
        n_layers: n,
        language,
        vision,
        aggregation: AGGREGATION.to_string(),
    })
}

/// Profile against the trace's own inputs. `raw_vision` is the encoder
/// output, needed only for [`VisionReference::PreConnector`].
pub fn cosine_profile_from_inputs(
    trace: &ForwardTrace,
    which: VisionReference,
    raw_vision: Option<&SeqMatrix>,
) -> Result<SimilarityProfile> {
    let vision = match which {
        VisionReference::PostConnector => trace.vision_input.as_ref(),
        VisionReference::PreConnector => raw_vision,
    };
    cosine_profile(trace, &trace.language_input, vision)
}

#[derive(Serialize)]
struct CsvRow {
    layer: usize,
    modality: Modality,
    mean_cos: f64,
    excluded_tokens: usize,
}

impl SimilarityProfile {
    pub fn tracks(&self) -> impl Iterator<Item = &ModalityTrack> {
        self.vision.iter().chain(std::iter::once(&self.language))
    }

    /// One row per (layer, modality); layers numbered from 1.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for t in self.tracks() {
            for (i, (&mean_cos, &excluded_tokens)) in
                t.mean_cos.iter().zip(&t.excluded_tokens).enumerate()
            {
                w.serialize(CsvRow {
                    layer: i + 1,
                    modality: t.modality,
                    mean_cos,
                    excluded_tokens,
                })?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
