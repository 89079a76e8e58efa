//! Elementwise, reduction and linear-algebra operations on [`Var`].

use super::gemm::{mm, mm_nt, mm_tn};
use super::tape::Var;
use super::value::Tensor;
use crate::error::{Error, Result};

fn same_shape(op: &'static str, a: &Var<'_>, b: &Var<'_>) -> Result<Vec<usize>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::dim(op, &sa, &sb));
    }
    Ok(sa)
}

fn unary<'t>(
    x: Var<'t>,
    f: impl Fn(f64) -> f64,
    // derivative from (input, output)
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Var<'t> {
    let xv = x.value();
    let out = Tensor::new(xv.shape(), xv.data().iter().map(|&v| f(v)).collect())
        .expect("shape preserved");
    x.tape().op(
        out,
        &[x],
        Box::new(move |args, slots| {
            if let Some(g) = &mut slots[0] {
                let (xs, ys) = (args.inputs[0].data(), args.output.data());
                for i in 0..g.len() {
                    g[i] = args.grad[i] * df(xs[i], ys[i]);
                }
            }
        }),
    )
}

impl<'t> Var<'t> {
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let shape = same_shape("add", &self, &other)?;
        let (a, b) = (self.value(), other.value());
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        Ok(self.tape().op(
            Tensor::new(&shape, data)?,
            &[self, other],
            Box::new(|args, slots| {
                for g in slots.iter_mut().flatten() {
                    g.copy_from_slice(args.grad);
                }
            }),
        ))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let shape = same_shape("sub", &self, &other)?;
        let (a, b) = (self.value(), other.value());
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        Ok(self.tape().op(
            Tensor::new(&shape, data)?,
            &[self, other],
            Box::new(|args, slots| {
                if let Some(g) = &mut slots[0] {
                    g.copy_from_slice(args.grad);
                }
                if let Some(g) = &mut slots[1] {
                    g.iter_mut().zip(args.grad).for_each(|(g, d)| *g = -d);
                }
            }),
        ))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let shape = same_shape("mul", &self, &other)?;
        let (a, b) = (self.value(), other.value());
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        Ok(self.tape().op(
            Tensor::new(&shape, data)?,
            &[self, other],
            Box::new(|args, slots| {
                let (a, b) = (args.inputs[0].data(), args.inputs[1].data());
                if let Some(g) = &mut slots[0] {
                    for i in 0..g.len() {
                        g[i] = args.grad[i] * b[i];
                    }
                }
                if let Some(g) = &mut slots[1] {
                    for i in 0..g.len() {
                        g[i] = args.grad[i] * a[i];
                    }
                }
            }),
        ))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        unary(self, move |v| v * c, move |_, _| c)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        unary(self, move |v| v + c, |_, _| 1.0)
    }

    pub fn relu(self) -> Var<'t> {
        unary(self, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(self) -> Var<'t> {
        unary(self, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn exp(self) -> Var<'t> {
        unary(self, f64::exp, |_, y| y)
    }

    pub fn ln(self) -> Var<'t> {
        unary(self, f64::ln, |x, _| 1.0 / x)
    }

    pub fn abs(self) -> Var<'t> {
        unary(self, f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// `ln(p / (1 - p))` with `p` clamped to `[eps, 1 - eps]`.
    pub fn logit(self, eps: f64) -> Var<'t> {
        unary(
            self,
            move |p| {
                let p = p.clamp(eps, 1.0 - eps);
                (p / (1.0 - p)).ln()
            },
            move |p, _| {
                if p < eps || p > 1.0 - eps {
                    0.0
                } else {
                    1.0 / (p * (1.0 - p))
                }
            },
        )
    }

    pub fn sum(self) -> Var<'t> {
        let s: f64 = self.value().data().iter().sum();
        self.tape().op(
            Tensor::scalar(s),
            &[self],
            Box::new(|args, slots| {
                if let Some(g) = &mut slots[0] {
                    g.fill(args.grad[0]);
                }
            }),
        )
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let v = (*self.value()).clone().reshaped(shape)?;
        Ok(self.tape().op(
            v,
            &[self],
            Box::new(|args, slots| {
                if let Some(g) = &mut slots[0] {
                    g.copy_from_slice(args.grad);
                }
            }),
        ))
    }

    /// Concatenates along the last axis; leading shapes must agree.
    pub fn concat_last(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let lead = first.shape()[..first.shape().len() - 1].to_vec();
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let mut widths = Vec::with_capacity(parts.len());
        for v in &values {
            if v.shape()[..v.shape().len() - 1] != lead[..] {
                return Err(Error::dim("concat_last", first.value().shape(), v.shape()));
            }
            widths.push(v.last_dim());
        }
        let total: usize = widths.iter().sum();
        let rows = first.value().rows();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (v, &w) in values.iter().zip(&widths) {
                data.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        Ok(first.tape().op(
            Tensor::new(&shape, data)?,
            parts,
            Box::new(move |args, slots| {
                let mut start = 0;
                for (slot, &w) in slots.iter_mut().zip(&widths) {
                    if let Some(g) = slot {
                        for r in 0..rows {
                            g[r * w..(r + 1) * w]
                                .copy_from_slice(&args.grad[r * total + start..r * total + start + w]);
                        }
                    }
                    start += w;
                }
            }),
        ))
    }

    /// Channels `start..start + len` of the last axis.
    pub fn slice_last(self, start: usize, len: usize) -> Result<Var<'t>> {
        let v = self.value();
        let w = v.last_dim();
        if len == 0 || start + len > w {
            return Err(Error::dim("slice_last", v.shape(), &[start, len]));
        }
        let rows = v.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&v.data()[r * w + start..r * w + start + len]);
        }
        let mut shape = v.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        Ok(self.tape().op(
            Tensor::new(&shape, data)?,
            &[self],
            Box::new(move |args, slots| {
                if let Some(g) = &mut slots[0] {
                    for r in 0..rows {
                        g[r * w + start..r * w + start + len]
                            .copy_from_slice(&args.grad[r * len..(r + 1) * len]);
                    }
                }
            }),
        ))
    }

    /// Rows `idx` of the `[rows, last]` view, in the given order.
    pub fn select_rows(self, idx: &[usize]) -> Result<Var<'t>> {
        let v = self.value();
        let (rows, w) = (v.rows(), v.last_dim());
        if idx.is_empty() || idx.iter().any(|&i| i >= rows) {
            return Err(Error::contract(format!(
                "select_rows: indices {idx:?} invalid for {rows} rows"
            )));
        }
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(&v.data()[i * w..(i + 1) * w]);
        }
        let idx = idx.to_vec();
        Ok(self.tape().op(
            Tensor::new(&[idx.len(), w], data)?,
            &[self],
            Box::new(move |args, slots| {
                if let Some(g) = &mut slots[0] {
                    for (j, &i) in idx.iter().enumerate() {
                        for c in 0..w {
                            g[i * w + c] += args.grad[j * w + c];
                        }
                    }
                }
            }),
        ))
    }

    /// Zeroes whole rows of the `[rows, last]` view where `keep` is false.
    pub fn mask_rows(self, keep: &[bool]) -> Result<Var<'t>> {
        let v = self.value();
        let (rows, w) = (v.rows(), v.last_dim());
        if keep.len() != rows {
            return Err(Error::dim("mask_rows", v.shape(), &[keep.len()]));
        }
        let mut data = v.data().to_vec();
        for (r, &k) in keep.iter().enumerate() {
            if !k {
                data[r * w..(r + 1) * w].fill(0.0);
            }
        }
        let keep = keep.to_vec();
        Ok(self.tape().op(
            Tensor::new(v.shape(), data)?,
            &[self],
            Box::new(move |args, slots| {
                if let Some(g) = &mut slots[0] {
                    for (r, &k) in keep.iter().enumerate() {
                        if k {
                            g[r * w..(r + 1) * w].copy_from_slice(&args.grad[r * w..(r + 1) * w]);
                        }
                    }
                }
            }),
        ))
    }

    /// Multiplies row `r` of the `[rows, last]` view by the constant `s[r]`.
    pub fn scale_rows(self, s: &[f64]) -> Result<Var<'t>> {
        let v = self.value();
        let (rows, w) = (v.rows(), v.last_dim());
        if s.len() != rows {
            return Err(Error::dim("scale_rows", v.shape(), &[s.len()]));
        }
        let data = v.data().iter().enumerate().map(|(i, x)| x * s[i / w]).collect();
        let s = s.to_vec();
        Ok(self.tape().op(
            Tensor::new(v.shape(), data)?,
            &[self],
            Box::new(move |args, slots| {
                if let Some(g) = &mut slots[0] {
                    for (i, gi) in g.iter_mut().enumerate() {
                        *gi = args.grad[i] * s[i / w];
                    }
                }
            }),
        ))
    }

    /// Multiplies every channel `c` of the last axis by `v[c]`.
    pub fn mul_channel(self, v: Var<'t>) -> Result<Var<'t>> {
        let (x, w) = (self.value(), v.value());
        let c = x.last_dim();
        if w.shape() != [c] {
            return Err(Error::dim("mul_channel", x.shape(), w.shape()));
        }
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, a)| a * w.data()[i % c])
            .collect();
        Ok(self.tape().op(
            Tensor::new(x.shape(), data)?,
            &[self, v],
            Box::new(move |args, slots| {
                let (x, w) = (args.inputs[0].data(), args.inputs[1].data());
                if let Some(g) = &mut slots[0] {
                    for i in 0..g.len() {
                        g[i] = args.grad[i] * w[i % c];
                    }
                }
                if let Some(g) = &mut slots[1] {
                    for i in 0..x.len() {
                        g[i % c] += args.grad[i] * x[i];
                    }
                }
            }),
        ))
    }

    /// `x[r, :] + s[r] · b` for each row `r`, with `s` a constant weight per row.
    pub fn add_row_scaled(self, b: Var<'t>, s: &[f64]) -> Result<Var<'t>> {
        let (x, bv) = (self.value(), b.value());
        let (rows, w) = (x.rows(), x.last_dim());
        if bv.shape() != [w] || s.len() != rows {
            return Err(Error::dim("add_row_scaled", x.shape(), bv.shape()));
        }
        let mut data = x.data().to_vec();
        for r in 0..rows {
            if s[r] != 0.0 {
                for c in 0..w {
                    data[r * w + c] += s[r] * bv.data()[c];
                }
            }
        }
        let s = s.to_vec();
        Ok(self.tape().op(
            Tensor::new(x.shape(), data)?,
            &[self, b],
            Box::new(move |args, slots| {
                if let Some(g) = &mut slots[0] {
                    g.copy_from_slice(args.grad);
                }
                if let Some(g) = &mut slots[1] {
                    for r in 0..rows {
                        for c in 0..w {
                            g[c] += s[r] * args.grad[r * w + c];
                        }
                    }
                }
            }),
        ))
    }

    /// `x · weight + bias` over the last axis of `x`.
    pub fn linear(self, weight: Var<'t>, bias: Option<Var<'t>>) -> Result<Var<'t>> {
        let (x, wv) = (self.value(), weight.value());
        let ws = wv.shape();
        let i = x.last_dim();
        if ws.len() != 2 || ws[0] != i {
            return Err(Error::dim("linear", x.shape(), ws));
        }
        let o = ws[1];
        let rows = x.rows();
        let mut out = vec![0.0; rows * o];
        mm(rows, i, o, x.data(), wv.data(), &mut out, 0.0);
        let mut inputs = vec![self, weight];
        if let Some(b) = bias {
            let bv = b.value();
            if bv.shape() != [o] {
                return Err(Error::dim("linear", ws, bv.shape()));
            }
            for r in 0..rows {
                out[r * o..(r + 1) * o]
                    .iter_mut()
                    .zip(bv.data())
                    .for_each(|(a, b)| *a += b);
            }
            inputs.push(b);
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = o;
        Ok(self.tape().op(
            Tensor::new(&shape, out)?,
            &inputs,
            Box::new(move |args, slots| {
                let (x, w) = (args.inputs[0].data(), args.inputs[1].data());
                if let Some(g) = &mut slots[0] {
                    mm_nt(rows, o, i, args.grad, w, g, 0.0);
                }
                if let Some(g) = &mut slots[1] {
                    mm_tn(i, rows, o, x, args.grad, g, 0.0);
                }
                if let Some(Some(g)) = slots.get_mut(2) {
                    for r in 0..rows {
                        g.iter_mut()
                            .zip(&args.grad[r * o..(r + 1) * o])
                            .for_each(|(a, b)| *a += b);
                    }
                }
            }),
        ))
    }

    /// `a · b` for 2-D `a: [n, m]`, `b: [m, d]`.
    pub fn matmul(self, b: Var<'t>) -> Result<Var<'t>> {
        let (av, bv) = (self.value(), b.value());
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (n, m, d) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; n * d];
        mm(n, m, d, av.data(), bv.data(), &mut out, 0.0);
        Ok(self.tape().op(
            Tensor::new(&[n, d], out)?,
            &[self, b],
            Box::new(move |args, slots| {
                let (a, b) = (args.inputs[0].data(), args.inputs[1].data());
                if let Some(g) = &mut slots[0] {
                    mm_nt(n, d, m, args.grad, b, g, 0.0);
                }
                if let Some(g) = &mut slots[1] {
                    mm_tn(m, n, d, a, args.grad, g, 0.0);
                }
            }),
        ))
    }

    /// `a · bᵀ` for 2-D `a: [n, d]`, `b: [m, d]`.
    pub fn matmul_nt(self, b: Var<'t>) -> Result<Var<'t>> {
        let (av, bv) = (self.value(), b.value());
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::dim("matmul_nt", sa, sb));
        }
        let (n, d, m) = (sa[0], sa[1], sb[0]);
        let mut out = vec![0.0; n * m];
        mm_nt(n, d, m, av.data(), bv.data(), &mut out, 0.0);
        Ok(self.tape().op(
            Tensor::new(&[n, m], out)?,
            &[self, b],
            Box::new(move |args, slots| {
                let (a, b) = (args.inputs[0].data(), args.inputs[1].data());
                if let Some(g) = &mut slots[0] {
                    mm(n, m, d, args.grad, b, g, 0.0);
                }
                if let Some(g) = &mut slots[1] {
                    mm_tn(m, n, d, args.grad, a, g, 0.0);
                }
            }),
        ))
    }

    /// Block-diagonal projection: `x: [rows, G, C]`, `w: [G, C, O]` → `[rows, G·O]`
    /// where group `g` of the output is `x[:, g, :] · w[g]`.
    pub fn grouped_linear(self, w: Var<'t>) -> Result<Var<'t>> {
        let (xv, wv) = (self.value(), w.value());
        let (xs, ws) = (xv.shape(), wv.shape());
        if xs.len() < 2 || ws.len() != 3 || xs[xs.len() - 2] != ws[0] || xs[xs.len() - 1] != ws[1] {
            return Err(Error::dim("grouped_linear", xs, ws));
        }
        let (groups, c, o) = (ws[0], ws[1], ws[2]);
        let rows = xv.len() / (groups * c);
        let mut out = vec![0.0; rows * groups * o];
        for r in 0..rows {
            for g in 0..groups {
                let xr = &xv.data()[(r * groups + g) * c..(r * groups + g + 1) * c];
                let orow = &mut out[(r * groups + g) * o..(r * groups + g + 1) * o];
                for (ci, &xval) in xr.iter().enumerate() {
                    if xval == 0.0 {
                        continue;
                    }
                    let wrow = &wv.data()[(g * c + ci) * o..(g * c + ci + 1) * o];
                    orow.iter_mut().zip(wrow).for_each(|(a, b)| *a += xval * b);
                }
            }
        }
        let mut shape = xs[..xs.len() - 2].to_vec();
        shape.push(groups * o);
        Ok(self.tape().op(
            Tensor::new(&shape, out)?,
            &[self, w],
            Box::new(move |args, slots| {
                let (x, wd) = (args.inputs[0].data(), args.inputs[1].data());
                let go = args.grad;
                if let Some(gx) = &mut slots[0] {
                    for r in 0..rows {
                        for g in 0..groups {
                            let grow = &go[(r * groups + g) * o..(r * groups + g + 1) * o];
                            for ci in 0..c {
                                let wrow = &wd[(g * c + ci) * o..(g * c + ci + 1) * o];
                                gx[(r * groups + g) * c + ci] =
                                    grow.iter().zip(wrow).map(|(a, b)| a * b).sum();
                            }
                        }
                    }
                }
                if let Some(gw) = &mut slots[1] {
                    for r in 0..rows {
                        for g in 0..groups {
                            let grow = &go[(r * groups + g) * o..(r * groups + g + 1) * o];
                            for ci in 0..c {
                                let xval = x[(r * groups + g) * c + ci];
                                if xval == 0.0 {
                                    continue;
                                }
                                let wrow = &mut gw[(g * c + ci) * o..(g * c + ci + 1) * o];
                                wrow.iter_mut().zip(grow).for_each(|(a, b)| *a += xval * b);
                            }
                        }
                    }
                }
            }),
        ))
    }

    /// Softmax over the last axis, stabilized by max subtraction.
    pub fn softmax_last(self) -> Result<Var<'t>> {
        let x = self.value();
        if !x.is_finite() {
            return Err(Error::NumericInput { op: "softmax_last" });
        }
        let w = x.last_dim();
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(w) {
            softmax_in_place(row);
        }
        Ok(self.tape().op(
            Tensor::new(x.shape(), out)?,
            &[self],
            Box::new(move |args, slots| {
                if let Some(g) = &mut slots[0] {
                    let y = args.output.data();
                    for r in 0..y.len() / w {
                        let (ys, gs) = (&y[r * w..(r + 1) * w], &args.grad[r * w..(r + 1) * w]);
                        let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                        for c in 0..w {
                            g[r * w + c] = ys[c] * (gs[c] - dot);
                        }
                    }
                }
            }),
        ))
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies
    /// per-channel `gain` and `shift`.
    pub fn layer_norm(self, gain: Var<'t>, shift: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let x = self.value();
        let w = x.last_dim();
        if gain.shape() != [w] || shift.shape() != [w] {
            return Err(Error::dim("layer_norm", x.shape(), &gain.shape()));
        }
        let (gv, sv) = (gain.value(), shift.value());
        let rows = x.rows();
        let mut xhat = vec![0.0; x.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; x.len()];
        for r in 0..rows {
            let row = &x.data()[r * w..(r + 1) * w];
            let mean = row.iter().sum::<f64>() / w as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..w {
                let h = (row[c] - mean) * rs;
                xhat[r * w + c] = h;
                out[r * w + c] = h * gv.data()[c] + sv.data()[c];
            }
        }
        Ok(self.tape().op(
            Tensor::new(x.shape(), out)?,
            &[self, gain, shift],
            Box::new(move |args, slots| {
                let gd = args.inputs[1].data();
                let go = args.grad;
                if let Some(gx) = &mut slots[0] {
                    for r in 0..rows {
                        let h = &xhat[r * w..(r + 1) * w];
                        let dh: Vec<f64> = (0..w).map(|c| go[r * w + c] * gd[c]).collect();
                        let mean_dh = dh.iter().sum::<f64>() / w as f64;
                        let mean_dh_h = dh.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() / w as f64;
                        for c in 0..w {
                            gx[r * w + c] = rstd[r] * (dh[c] - mean_dh - h[c] * mean_dh_h);
                        }
                    }
                }
                if let Some(gg) = &mut slots[1] {
                    for i in 0..go.len() {
                        gg[i % w] += go[i] * xhat[i];
                    }
                }
                if let Some(gs) = &mut slots[2] {
                    for i in 0..go.len() {
                        gs[i % w] += go[i];
                    }
                }
            }),
        ))
    }

    /// Mean cross-entropy of `[rows, classes]` logits against integer targets.
    pub fn cross_entropy(self, targets: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let (rows, w) = (x.rows(), x.last_dim());
        if targets.len() != rows || targets.iter().any(|&t| t >= w) {
            return Err(Error::dim("cross_entropy", x.shape(), &[targets.len()]));
        }
        let mut probs = x.data().to_vec();
        let mut loss = 0.0;
        for (r, row) in probs.chunks_mut(w).enumerate() {
            let lse = log_sum_exp(row);
            loss += lse - row[targets[r]];
            softmax_in_place(row);
        }
        let targets = targets.to_vec();
        Ok(self.tape().op(
            Tensor::scalar(loss / rows as f64),
            &[self],
            Box::new(move |args, slots| {
                if let Some(g) = &mut slots[0] {
                    let s = args.grad[0] / rows as f64;
                    for r in 0..rows {
                        for c in 0..w {
                            let t = if c == targets[r] { 1.0 } else { 0.0 };
                            g[r * w + c] = s * (probs[r * w + c] - t);
                        }
                    }
                }
            }),
        ))
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}
