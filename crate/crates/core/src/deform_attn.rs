//! Single-scale multi-head deformable attention and the BEV encoder layer.
//!
//! For a query `q_t` with reference location `p_t` on a feature map `F`, head
//! `m` samples `K` points `p_t + Δp_mk` with offsets predicted from `q_t`, and
//! mixes them with weights `a_mk = softmax_k(weight_proj(q_t))`:
//!
//! ```text
//! out_t = output_proj( concat_m  Σ_k a_mk · value_proj_m( sample(F, p_t + Δp_mk) ) )
//! ```
//!
//! Several sources (camera views, pillar levels) can be attended by one
//! module. Offsets and weights depend only on the query, so they are computed
//! once and every source contributes its own term; rows invisible in a source
//! contribute exactly zero.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn;
use crate::tensor::{Binder, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DeformAttnConfig {
    /// Query and output width `N`.
    pub channels: usize,
    /// Width of the sampled feature maps.
    pub value_channels: usize,
    pub heads: usize,
    pub points: usize,
}

impl DeformAttnConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.heads == 0 || self.channels % self.heads != 0 {
            errs.push(format!(
                "channels {} must be divisible by heads {}",
                self.channels, self.heads
            ));
        }
        if self.points == 0 {
            errs.push("points per head must be >= 1".into());
        }
        if self.channels == 0 || self.value_channels == 0 {
            errs.push("attention widths must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }
}

/// One feature map attended by a deformable attention module.
#[derive(Clone, Debug)]
pub struct AttnSource<'t> {
    /// `[H_f, W_f, C]`.
    pub features: Var<'t>,
    /// Continuous `(row, col)` reference per query.
    pub refs: Vec<[f64; 2]>,
    /// Queries whose reference is not visible in this source.
    pub valid: Vec<bool>,
}

/// Parameter layout of one deformable attention module under `prefix`.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformAttn {
    pub prefix: String,
    pub config: DeformAttnConfig,
}

impl DeformAttn {
    pub fn new(prefix: impl Into<String>, config: DeformAttnConfig) -> Self {
        DeformAttn {
            prefix: prefix.into(),
            config,
        }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    /// Registers parameters. Offsets start from a fixed pattern (head `m` points
    /// along angle `2πm/M`, point `k` at distance `(k + 1) · spread`); attention
    /// weights start uniform.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng, spread: f64) -> Result<()> {
        let c = self.config;
        c.validate()?;
        let (m, k, n) = (c.heads, c.points, c.channels);
        store.insert(self.name("offset_proj.weight"), Tensor::zeros(&[n, m * k * 2]))?;
        let bias = Tensor::from_fn(&[m * k * 2], |i| {
            let (head, point, axis) = (i / (2 * k), (i / 2) % k, i % 2);
            let angle = 2.0 * std::f64::consts::PI * head as f64 / m as f64;
            let r = (point + 1) as f64 * spread;
            if axis == 0 {
                r * angle.sin()
            } else {
                r * angle.cos()
            }
        });
        store.insert(self.name("offset_proj.bias"), bias)?;
        nn::init_linear_zero(store, &self.name("weight_proj"), n, m * k)?;
        let hd = c.head_dim();
        store.insert(
            self.name("value_proj.weight"),
            nn::xavier(rng, &[m, c.value_channels, hd], c.value_channels, hd),
        )?;
        store.insert(self.name("value_proj.bias"), Tensor::zeros(&[n]))?;
        nn::init_linear(store, rng, &self.name("output_proj"), n, n)
    }

    /// Sampling offsets `[T·M·K, 2]` and weights `[T·M·K]` for `queries: [T, N]`.
    pub fn sampling<'t>(&self, bind: &Binder<'_, 't>, queries: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let c = self.config;
        let qs = queries.shape();
        if qs.len() != 2 || qs[1] != c.channels {
            return Err(Error::dim("deform_attn", &qs, &[c.channels]));
        }
        let t = qs[0];
        let mk = c.heads * c.points;
        let offsets = nn::linear(bind, queries, &self.name("offset_proj"))?.reshape(&[t * mk, 2])?;
        let weights = nn::linear(bind, queries, &self.name("weight_proj"))?
            .reshape(&[t * c.heads, c.points])?
            .softmax_last()?
            .reshape(&[t * mk])?;
        Ok((offsets, weights))
    }

    /// Attends `queries: [T, N]` over every source and sums the per-source
    /// outputs. With `normalize_hits`, each row is divided by the number of
    /// sources in which it is valid (at least one).
    pub fn forward<'t>(
        &self,
        bind: &Binder<'_, 't>,
        queries: Var<'t>,
        sources: &[AttnSource<'t>],
        normalize_hits: bool,
    ) -> Result<Var<'t>> {
        let c = self.config;
        if sources.is_empty() {
            return Err(Error::contract("deformable attention needs at least one source"));
        }
        let tape = bind.tape();
        let t = queries.shape()[0];
        let (m, k) = (c.heads, c.points);
        let (offsets, weights) = self.sampling(bind, queries)?;
        let mut hits = vec![0.0; t];
        let mut acc: Option<Var<'t>> = None;
        for src in sources {
            let fs = src.features.shape();
            if fs.len() != 3 || fs[2] != c.value_channels {
                return Err(Error::dim("deform_attn", &fs, &[c.value_channels]));
            }
            if src.refs.len() != t || src.valid.len() != t {
                return Err(Error::contract(format!(
                    "source has {} refs / {} flags for {t} queries",
                    src.refs.len(),
                    src.valid.len()
                )));
            }
            let base = Tensor::from_fn(&[t * m * k, 2], |i| src.refs[i / (2 * m * k)][i % 2]);
            let pts = tape.constant(base).add(offsets)?;
            let sampled = src.features.weighted_sample(pts, weights, m, &src.valid)?;
            for (h, &v) in hits.iter_mut().zip(&src.valid) {
                if v {
                    *h += 1.0;
                }
            }
            acc = Some(match acc {
                None => sampled,
                Some(a) => a.add(sampled)?,
            });
        }
        let acc = acc.expect("at least one source");
        // Σ_k a_mk = 1, so each valid (row, source) pair adds exactly one bias.
        let values = acc
            .grouped_linear(bind.get(&self.name("value_proj.weight"))?)?
            .add_row_scaled(bind.get(&self.name("value_proj.bias"))?, &hits)?;
        let out = values
            .linear(bind.get(&self.name("output_proj.weight"))?, None)?
            .add_row_scaled(bind.get(&self.name("output_proj.bias"))?, &hits)?;
        if normalize_hits {
            let inv: Vec<f64> = hits.iter().map(|h| 1.0 / h.max(1.0)).collect();
            out.scale_rows(&inv)
        } else {
            Ok(out)
        }
    }
}

/// Widths of one encoder layer.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EncoderLayerConfig {
    pub channels: usize,
    /// Width of the sensor feature maps attended by cross-attention.
    pub source_channels: usize,
    pub heads: usize,
    pub points: usize,
    pub ffn_hidden: usize,
}

/// Self-attention over the BEV token map, cross-attention into sensor
/// features, then a feed-forward block; each followed by residual + norm.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub prefix: String,
    pub config: EncoderLayerConfig,
    pub self_attn: DeformAttn,
    pub cross_attn: DeformAttn,
}

impl EncoderLayer {
    pub fn new(prefix: impl Into<String>, config: EncoderLayerConfig) -> Self {
        let prefix = prefix.into();
        let attn = |value_channels| DeformAttnConfig {
            channels: config.channels,
            value_channels,
            heads: config.heads,
            points: config.points,
        };
        EncoderLayer {
            self_attn: DeformAttn::new(format!("{prefix}.self_attn"), attn(config.channels)),
            cross_attn: DeformAttn::new(format!("{prefix}.cross_attn"), attn(config.source_channels)),
            prefix,
            config,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng, self_spread: f64, cross_spread: f64) -> Result<()> {
        self.self_attn.init(store, rng, self_spread)?;
        self.cross_attn.init(store, rng, cross_spread)?;
        let n = self.config.channels;
        nn::init_mlp(store, rng, &format!("{}.ffn", self.prefix), n, self.config.ffn_hidden, n)?;
        for i in 1..=3 {
            nn::init_norm(store, &format!("{}.norm{i}", self.prefix), n)?;
        }
        Ok(())
    }

    /// `tokens: [H·W, N]` laid out row-major over the `grid = (H, W)` BEV map.
    pub fn forward<'t>(
        &self,
        bind: &Binder<'_, 't>,
        tokens: Var<'t>,
        grid: (usize, usize),
        sources: &[AttnSource<'t>],
        normalize_hits: bool,
    ) -> Result<Var<'t>> {
        let (h, w) = grid;
        let n = self.config.channels;
        if tokens.shape() != [h * w, n] {
            return Err(Error::dim("encoder_layer", &tokens.shape(), &[h * w, n]));
        }
        let own = AttnSource {
            features: tokens.reshape(&[h, w, n])?,
            refs: (0..h * w).map(|i| [(i / w) as f64, (i % w) as f64]).collect(),
            valid: vec![true; h * w],
        };
        let sa = self.self_attn.forward(bind, tokens, &[own], false)?;
        let x = nn::norm(bind, tokens.add(sa)?, &format!("{}.norm1", self.prefix))?;
        let ca = self.cross_attn.forward(bind, x, sources, normalize_hits)?;
        let x = nn::norm(bind, x.add(ca)?, &format!("{}.norm2", self.prefix))?;
        let ff = nn::mlp(bind, x, &format!("{}.ffn", self.prefix))?;
        nn::norm(bind, x.add(ff)?, &format!("{}.norm3", self.prefix))
    }
}
