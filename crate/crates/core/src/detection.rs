//! Set-prediction detection head: a small attention decoder over the fused BEV
//! map, optimal bipartite matching and the matching-based loss.
//!
//! Each object query attends over the BEV tokens. Its box center starts from
//! the attention-weighted mean of the cell centers and is refined in logit
//! space, so a query that looks at an object is already placed on it:
//!
//! ```text
//! c = sigmoid(logit(Σ_j A_j · cell_j) + Δ)      (extent-normalized, then meters)
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BevGridSpec;
use crate::nn;
use crate::tensor::{Binder, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub center: [f64; 2],
    /// `(w, l)` in meters.
    pub size: [f64; 2],
    pub yaw: f64,
    pub class_id: usize,
}

/// One decoded query.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxPrediction {
    pub center: [f64; 2],
    pub size: [f64; 2],
    pub yaw: f64,
    /// `C` logits, background last.
    pub class_logits: Vec<f64>,
}

impl BoxPrediction {
    /// Most likely object class and its probability.
    pub fn best_class(&self) -> (usize, f64) {
        let mut p = self.class_logits.clone();
        crate::tensor::softmax_in_place(&mut p);
        let mut best = (0, f64::NEG_INFINITY);
        for (c, &v) in p[..p.len() - 1].iter().enumerate() {
            if v > best.1 {
                best = (c, v);
            }
        }
        best
    }

    pub fn scored(&self) -> ScoredBox {
        let (class, score) = self.best_class();
        ScoredBox {
            x: self.center[0],
            y: self.center[1],
            w: self.size[0],
            l: self.size[1],
            yaw: self.yaw,
            class,
            score,
        }
    }
}

/// Exported detection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub l: f64,
    pub yaw: f64,
    pub class: usize,
    pub score: f64,
}

/// One line of the predictions JSONL file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub scene_id: u64,
    pub boxes: Vec<ScoredBox>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub channels: usize,
    pub layers: usize,
    pub n_obj: usize,
    /// Object classes plus background.
    pub classes: usize,
    pub ffn_hidden: usize,
    /// Self-attention among object queries before each cross-attention.
    pub query_self_attn: bool,
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.channels == 0 || self.ffn_hidden == 0 {
            errs.push("decoder widths must be positive".to_string());
        }
        if self.layers == 0 {
            errs.push("decoder needs at least one layer".to_string());
        }
        if self.n_obj == 0 {
            errs.push("n_obj must be >= 1".to_string());
        }
        if self.classes < 2 {
            errs.push("classes must include at least one object class and background".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_cls: f64,
    pub lambda_box: f64,
    /// Meters per unit of center error in the L1 term.
    pub center_unit: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_cls: 1.0,
            lambda_box: 2.0,
            center_unit: 2.0,
        }
    }
}

/// Raw decoder outputs for one scene.
#[derive(Clone, Copy, Debug)]
pub struct DecoderOutput<'t> {
    /// `[n_obj, C]`.
    pub logits: Var<'t>,
    /// `[n_obj, 2]` in meters.
    pub centers: Var<'t>,
    /// `[n_obj, 4]`: `ln w, ln l, sin, cos`.
    pub shape: Var<'t>,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub config: DecoderConfig,
    pub spec: BevGridSpec,
    pos: Tensor,
    cells: Tensor,
}

const P: &str = "decoder";

fn sinusoid(x: f64, y: f64, c: usize) -> f64 {
    let f = std::f64::consts::PI * 2f64.powi((c / 4) as i32);
    match c % 4 {
        0 => (f * x).sin(),
        1 => (f * x).cos(),
        2 => (f * y).sin(),
        _ => (f * y).cos(),
    }
}

impl Decoder {
    pub fn new(config: DecoderConfig, spec: BevGridSpec) -> Self {
        let (h, w, n) = (spec.h, spec.w, config.channels);
        let norm_x = |i: usize| ((i % w) as f64 + 0.5) / w as f64;
        let norm_y = |i: usize| ((i / w) as f64 + 0.5) / h as f64;
        let pos = Tensor::from_fn(&[h * w, n], |i| sinusoid(norm_x(i / n), norm_y(i / n), i % n));
        let cells = Tensor::from_fn(&[h * w, 2], |i| if i % 2 == 0 { norm_x(i / 2) } else { norm_y(i / 2) });
        Decoder { config, spec, pos, cells }
    }

    /// Fixed positional encoding added to the memory keys, `[H·W, N]`.
    pub fn positional_encoding(&self) -> &Tensor {
        &self.pos
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        let c = self.config;
        c.validate()?;
        let n = c.channels;
        store.insert(format!("{P}.query"), nn::xavier(rng, &[c.n_obj, n], n, n))?;
        for i in 0..c.layers {
            let mut blocks = vec!["cross"];
            if c.query_self_attn {
                blocks.push("self");
            }
            for b in blocks {
                for part in ["q", "k", "v", "o"] {
                    nn::init_linear(store, rng, &format!("{P}.layer{i}.{b}.{part}"), n, n)?;
                }
            }
            nn::init_mlp(store, rng, &format!("{P}.layer{i}.ffn"), n, c.ffn_hidden, n)?;
            for k in 0..3 {
                nn::init_norm(store, &format!("{P}.layer{i}.norm{k}"), n)?;
            }
        }
        nn::init_linear(store, rng, &format!("{P}.cls"), n, c.classes)?;
        nn::init_mlp(store, rng, &format!("{P}.box"), n, n, 6)
    }

    /// Single-head scaled dot-product attention; returns the output and the
    /// attention map `[rows(q), rows(k)]`.
    fn attention<'t>(
        &self,
        bind: &Binder<'_, 't>,
        q: Var<'t>,
        k: Var<'t>,
        v: Var<'t>,
        name: &str,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let scale = 1.0 / (self.config.channels as f64).sqrt();
        let qp = nn::linear(bind, q, &format!("{name}.q"))?;
        let kp = nn::linear(bind, k, &format!("{name}.k"))?;
        let vp = nn::linear(bind, v, &format!("{name}.v"))?;
        let a = qp.matmul_nt(kp)?.scale(scale).softmax_last()?;
        let out = nn::linear(bind, a.matmul(vp)?, &format!("{name}.o"))?;
        Ok((out, a))
    }

    /// `fused: [H·W, N]`.
    pub fn forward<'t>(&self, bind: &Binder<'_, 't>, fused: Var<'t>) -> Result<DecoderOutput<'t>> {
        let c = self.config;
        let cells = self.spec.h * self.spec.w;
        if fused.shape() != [cells, c.channels] {
            return Err(Error::dim("decoder", &fused.shape(), &[cells, c.channels]));
        }
        let tape = bind.tape();
        let keys = fused.add(tape.constant(self.pos.clone()))?;
        let mut q = bind.get(&format!("{P}.query"))?;
        let mut attn = None;
        for i in 0..c.layers {
            let l = format!("{P}.layer{i}");
            if c.query_self_attn {
                let (sa, _) = self.attention(bind, q, q, q, &format!("{l}.self"))?;
                q = nn::norm(bind, q.add(sa)?, &format!("{l}.norm0"))?;
            }
            let (ca, a) = self.attention(bind, q, keys, fused, &format!("{l}.cross"))?;
            q = nn::norm(bind, q.add(ca)?, &format!("{l}.norm1"))?;
            let ff = nn::mlp(bind, q, &format!("{l}.ffn"))?;
            q = nn::norm(bind, q.add(ff)?, &format!("{l}.norm2"))?;
            attn = Some(a);
        }
        let attn = attn.expect("at least one decoder layer");
        let logits = nn::linear(bind, q, &format!("{P}.cls"))?;
        let raw = nn::mlp(bind, q, &format!("{P}.box"))?;
        let reference = attn.matmul(tape.constant(self.cells.clone()))?;
        let unit = reference.logit(1e-6).add(raw.slice_last(0, 2)?)?.sigmoid();
        let (x0, x1, y0, y1) = self.spec.extent;
        let span = tape.constant(Tensor::new(&[2], vec![x1 - x0, y1 - y0])?);
        let origin = tape.constant(Tensor::from_fn(&[c.n_obj, 2], |i| if i % 2 == 0 { x0 } else { y0 }));
        let centers = unit.mul_channel(span)?.add(origin)?;
        Ok(DecoderOutput {
            logits,
            centers,
            shape: raw.slice_last(2, 4)?,
        })
    }
}

/// Boxes from raw outputs: sizes through `exp`, yaw through `atan2`.
pub fn decode(out: &DecoderOutput<'_>) -> Vec<BoxPrediction> {
    let (lg, ce, sh) = (out.logits.value(), out.centers.value(), out.shape.value());
    let c = lg.last_dim();
    (0..lg.rows())
        .map(|i| {
            let s = &sh.data()[i * 4..i * 4 + 4];
            BoxPrediction {
                center: [ce.data()[i * 2], ce.data()[i * 2 + 1]],
                size: [s[0].exp(), s[1].exp()],
                yaw: s[2].atan2(s[3]),
                class_logits: lg.data()[i * c..(i + 1) * c].to_vec(),
            }
        })
        .collect()
}

/// Regression target `(x/u, y/u, ln w, ln l, sin, cos)` of a ground-truth box.
pub fn box_target(gt: &GroundTruthBox, center_unit: f64) -> [f64; 6] {
    [
        gt.center[0] / center_unit,
        gt.center[1] / center_unit,
        gt.size[0].ln(),
        gt.size[1].ln(),
        gt.yaw.sin(),
        gt.yaw.cos(),
    ]
}

/// Assigns every ground truth (column of `cost`) to a distinct prediction (row)
/// with minimal total cost. Among optimal assignments the one whose vector
/// `gt → prediction` is lexicographically smallest is returned.
pub fn hungarian_match(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n_obj = cost.len();
    let n_gt = cost.first().map_or(0, Vec::len);
    if cost.iter().any(|r| r.len() != n_gt) {
        return Err(Error::contract("ragged cost matrix"));
    }
    if n_gt == 0 {
        return Ok(Vec::new());
    }
    if n_gt > n_obj {
        return Err(Error::contract(format!("{n_gt} ground truths but only {n_obj} predictions")));
    }
    if cost.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::contract("cost matrix has non-finite entries"));
    }
    let rows: Vec<usize> = (0..n_gt).collect();
    let cols: Vec<usize> = (0..n_obj).collect();
    let (best, total) = solve(cost, &rows, &cols);
    let tol = 1e-9 * total.abs().max(1.0);

    // Fix ground truths in order to the smallest prediction that keeps the optimum.
    let mut fixed: Vec<usize> = Vec::with_capacity(n_gt);
    let mut fixed_cost = 0.0;
    for g in 0..n_gt {
        let rest: Vec<usize> = (g + 1..n_gt).collect();
        let mut chosen = best[g];
        for p in 0..n_obj {
            if fixed.contains(&p) {
                continue;
            }
            if p == best[g] && fixed.iter().zip(&best).all(|(a, b)| a == b) {
                chosen = p;
                break;
            }
            let free: Vec<usize> = (0..n_obj).filter(|c| *c != p && !fixed.contains(c)).collect();
            let (_, sub) = solve(cost, &rest, &free);
            if fixed_cost + cost[p][g] + sub <= total + tol {
                chosen = p;
                break;
            }
        }
        fixed_cost += cost[chosen][g];
        fixed.push(chosen);
    }
    Ok(fixed)
}

/// Shortest-augmenting-path assignment of `rows` (ground truths) to `cols`
/// (predictions); returns the prediction per row and the total cost.
fn solve(cost: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> (Vec<usize>, f64) {
    let (n, m) = (rows.len(), cols.len());
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let c = |i: usize, j: usize| cost[cols[j - 1]][rows[i - 1]];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = c(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = cols[j - 1];
        }
    }
    let total = out.iter().enumerate().map(|(i, &pj)| cost[pj][rows[i]]).sum();
    (out, total)
}

/// Matching cost `[n_obj][n_gt]` from detached outputs.
pub fn matching_cost(out: &DecoderOutput<'_>, gts: &[GroundTruthBox], cfg: &LossConfig) -> Vec<Vec<f64>> {
    let (lg, ce, sh) = (out.logits.value(), out.centers.value(), out.shape.value());
    let c = lg.last_dim();
    (0..lg.rows())
        .map(|i| {
            let mut prob = lg.data()[i * c..(i + 1) * c].to_vec();
            crate::tensor::softmax_in_place(&mut prob);
            let s = &sh.data()[i * 4..i * 4 + 4];
            let pred = [
                ce.data()[i * 2] / cfg.center_unit,
                ce.data()[i * 2 + 1] / cfg.center_unit,
                s[0],
                s[1],
                s[2],
                s[3],
            ];
            gts.iter()
                .map(|g| {
                    let l1: f64 = pred.iter().zip(box_target(g, cfg.center_unit)).map(|(a, b)| (a - b).abs()).sum();
                    -cfg.lambda_cls * prob[g.class_id] + cfg.lambda_box * l1
                })
                .collect()
        })
        .collect()
}

/// Scalar loss and the matching it was computed with (`gt → prediction`).
pub struct SetLoss<'t> {
    pub loss: Var<'t>,
    pub assignment: Vec<usize>,
}

/// Cross-entropy over every query (unmatched ones target background, the last
/// class) plus `λ_box` times the per-ground-truth mean L1 of matched boxes.
pub fn set_loss<'t>(out: &DecoderOutput<'t>, gts: &[GroundTruthBox], cfg: &LossConfig) -> Result<SetLoss<'t>> {
    let lg = out.logits.value();
    let (n_obj, classes) = (lg.rows(), lg.last_dim());
    let bg = classes - 1;
    if let Some(g) = gts.iter().find(|g| g.class_id >= bg) {
        return Err(Error::contract(format!("ground-truth class {} is not an object class", g.class_id)));
    }
    let assignment = hungarian_match(&matching_cost(out, gts, cfg))?;
    let mut targets = vec![bg; n_obj];
    for (g, &p) in assignment.iter().enumerate() {
        targets[p] = gts[g].class_id;
    }
    let ce = out.logits.cross_entropy(&targets)?.scale(cfg.lambda_cls);
    if gts.is_empty() {
        return Ok(SetLoss { loss: ce, assignment });
    }
    let tape = out.logits.tape();
    let pred = Var::concat_last(&[
        out.centers.select_rows(&assignment)?.scale(1.0 / cfg.center_unit),
        out.shape.select_rows(&assignment)?,
    ])?;
    let target: Vec<f64> = gts.iter().flat_map(|g| box_target(g, cfg.center_unit)).collect();
    let l1 = pred.sub(tape.constant(Tensor::new(&[gts.len(), 6], target)?))?.abs().sum();
    let loss = ce.add(l1.scale(cfg.lambda_box / gts.len() as f64))?;
    Ok(SetLoss { loss, assignment })
}
