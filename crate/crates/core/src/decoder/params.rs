use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, Variant};
use crate::error::Result;
use crate::numkit::SeqMatrix;

/// Two-layer map `Act(x W1) W2` from vision width to model width.
#[derive(Debug, Clone, PartialEq)]
pub struct Connector<T> {
    pub w1: T,
    pub w2: T,
}

/// Per-layer parameter bundle. Which optional blocks exist depends on the
/// variant: `w_vk`/`w_vv` for dedicated injection, `connector` for the
/// per-layer-connector variant.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub w_q: T,
    pub w_k: T,
    pub w_v: T,
    pub w_o: T,
    pub w_vk: Option<T>,
    pub w_vv: Option<T>,
    pub connector: Option<Connector<T>>,
    pub w_ffn1: T,
    pub w_ffn2: T,
    pub norm_attn: T,
    pub norm_ffn: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub embed: T,
    /// Shared connector (vanilla and uniform injection).
    pub connector: Option<Connector<T>>,
    pub layers: Vec<LayerParams<T>>,
    pub norm_final: T,
    /// Untied output head; `None` when the head reuses `embed`.
    pub head: Option<T>,
}

pub type LayerWeights = LayerParams<SeqMatrix>;

impl<T> Connector<T> {
    fn try_map<'a, U, E>(
        &'a self,
        prefix: &str,
        f: &mut impl FnMut(&str, &'a T) -> Result<U, E>,
    ) -> Result<Connector<U>, E> {
        Ok(Connector {
            w1: f(&format!("{prefix}.w1"), &self.w1)?,
            w2: f(&format!("{prefix}.w2"), &self.w2)?,
        })
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        out.push(&mut self.w1);
        out.push(&mut self.w2);
    }
}

impl<T> LayerParams<T> {
    fn try_map<'a, U, E>(
        &'a self,
        prefix: &str,
        f: &mut impl FnMut(&str, &'a T) -> Result<U, E>,
    ) -> Result<LayerParams<U>, E> {
        let opt = |name: &str, t: &'a Option<T>, f: &mut dyn FnMut(&str, &'a T) -> Result<U, E>| {
            t.as_ref()
                .map(|t| f(&format!("{prefix}.{name}"), t))
                .transpose()
        };
        let w_q = f(&format!("{prefix}.w_q"), &self.w_q)?;
        let w_k = f(&format!("{prefix}.w_k"), &self.w_k)?;
        let w_v = f(&format!("{prefix}.w_v"), &self.w_v)?;
        let w_o = f(&format!("{prefix}.w_o"), &self.w_o)?;
        let w_vk = opt("w_vk", &self.w_vk, f)?;
        let w_vv = opt("w_vv", &self.w_vv, f)?;
        let connector = self
            .connector
            .as_ref()
            .map(|c| c.try_map(&format!("{prefix}.connector"), f))
            .transpose()?;
        Ok(LayerParams {
            w_q,
            w_k,
            w_v,
            w_o,
            w_vk,
            w_vv,
            connector,
            w_ffn1: f(&format!("{prefix}.w_ffn1"), &self.w_ffn1)?,
            w_ffn2: f(&format!("{prefix}.w_ffn2"), &self.w_ffn2)?,
            norm_attn: f(&format!("{prefix}.norm_attn"), &self.norm_attn)?,
            norm_ffn: f(&format!("{prefix}.norm_ffn"), &self.norm_ffn)?,
        })
    }

    fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut T>) {
        out.extend([&mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.w_o]);
        if let Some(w) = self.w_vk.as_mut() {
            out.push(w);
        }
        if let Some(w) = self.w_vv.as_mut() {
            out.push(w);
        }
        if let Some(c) = self.connector.as_mut() {
            c.collect_mut(out);
        }
        out.extend([
            &mut self.w_ffn1,
            &mut self.w_ffn2,
            &mut self.norm_attn,
            &mut self.norm_ffn,
        ]);
    }
}

impl<T> ModelParams<T> {
    /// Maps every block in canonical order, passing its dotted name.
    pub fn try_map<'a, U, E>(
        &'a self,
        mut f: impl FnMut(&str, &'a T) -> Result<U, E>,
    ) -> Result<ModelParams<U>, E> {
        let embed = f("embed", &self.embed)?;
        let connector = self
            .connector
            .as_ref()
            .map(|c| c.try_map("connector", &mut f))
            .transpose()?;
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| l.try_map(&format!("layers.{i}"), &mut f))
            .collect::<Result<Vec<_>, E>>()?;
        let norm_final = f("norm_final", &self.norm_final)?;
        let head = self.head.as_ref().map(|h| f("head", h)).transpose()?;
        Ok(ModelParams {
            embed,
            connector,
            layers,
            norm_final,
            head,
        })
    }

    pub fn map<'a, U>(&'a self, mut f: impl FnMut(&str, &'a T) -> U) -> ModelParams<U> {
        match self.try_map(|n, t| Ok::<U, std::convert::Infallible>(f(n, t))) {
            Ok(p) => p,
            Err(never) => match never {},
        }
    }

    /// `(name, block)` pairs in canonical order.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        self.map(|n, t| out.push((n.to_string(), t)));
        out
    }

    /// Mutable blocks in the same canonical order as [`Self::named`].
    pub fn blocks_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        out.push(&mut self.embed);
        if let Some(c) = self.connector.as_mut() {
            c.collect_mut(&mut out);
        }
        for l in &mut self.layers {
            l.collect_mut(&mut out);
        }
        out.push(&mut self.norm_final);
        if let Some(h) = self.head.as_mut() {
            out.push(h);
        }
        out
    }
}

impl ModelParams<SeqMatrix> {
    pub fn n_params(&self) -> usize {
        self.named().iter().map(|(_, m)| m.len()).sum()
    }
}

/// Weight shapes implied by a config, in canonical order. Values are unused
/// placeholders.
pub(crate) fn layout(cfg: &ModelConfig) -> ModelParams<(usize, usize)> {
    let (d, dv, f) = (cfg.d_model, cfg.d_vision, cfg.d_ffn);
    let shared_connector = matches!(cfg.variant, Variant::Vanilla | Variant::HimixUniform);
    let layers = (0..cfg.n_layers)
        .map(|_| LayerParams {
            w_q: (d, d),
            w_k: (d, d),
            w_v: (d, d),
            w_o: (d, d),
            w_vk: (cfg.variant == Variant::HimixDedicated).then_some((dv, d)),
            w_vv: (cfg.variant == Variant::HimixDedicated).then_some((dv, d)),
            connector: (cfg.variant == Variant::HimixConnector).then_some(Connector {
                w1: (dv, d),
                w2: (d, d),
            }),
            w_ffn1: (d, f),
            w_ffn2: (f, d),
            norm_attn: (1, d),
            norm_ffn: (1, d),
        })
        .collect();
    ModelParams {
        embed: (cfg.vocab, d),
        connector: shared_connector.then_some(Connector {
            w1: (dv, d),
            w2: (d, d),
        }),
        layers,
        norm_final: (1, d),
        head: (!cfg.tied_embeddings).then_some((d, cfg.vocab)),
    }
}

/// Seeded scaled-normal initialization: `N(0, init_std^2)` everywhere,
/// output projections (`w_o`, `w_ffn2`) additionally scaled by
/// `1/sqrt(2 l)`, norm gains at 1.
pub fn init_params(cfg: &ModelConfig) -> Result<ModelParams<SeqMatrix>> {
    cfg.validate_runnable()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let out_std = cfg.init_std / (2.0 * cfg.n_layers as f64).sqrt();
    Ok(layout(cfg).map(|name, &(r, c)| {
        if name.contains("norm") {
            SeqMatrix::filled(r, c, 1.0)
        } else if name.ends_with("w_o") || name.ends_with("w_ffn2") {
            SeqMatrix::random_normal(r, c, out_std, &mut rng)
        } else {
            SeqMatrix::random_normal(r, c, cfg.init_std, &mut rng)
        }
    }))
}
