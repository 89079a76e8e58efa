//! Operations over `[H, W, C]` feature maps: bilinear sampling, the fused
//! sampling kernel used by deformable attention, 3×3 convolution and pooling.

use super::gemm::{mm, mm_nt, mm_tn};
use super::tape::Var;
use super::value::Tensor;
use crate::error::{Error, Result};

/// Bilinear corner weights and indices for a continuous (row, col) location.
/// Corners outside the map are reported as `None` (zero padding).
#[derive(Clone, Copy)]
struct Corners {
    idx: [Option<usize>; 4],
    w: [f64; 4],
    fr: f64,
    fc: f64,
}

impl Corners {
    fn new(h: usize, w: usize, r: f64, c: f64) -> Self {
        let (r0, c0) = (r.floor(), c.floor());
        let (fr, fc) = (r - r0, c - c0);
        let cell = |rr: f64, cc: f64| {
            if rr >= 0.0 && cc >= 0.0 && rr < h as f64 && cc < w as f64 {
                Some(rr as usize * w + cc as usize)
            } else {
                None
            }
        };
        Corners {
            idx: [
                cell(r0, c0),
                cell(r0, c0 + 1.0),
                cell(r0 + 1.0, c0),
                cell(r0 + 1.0, c0 + 1.0),
            ],
            w: [(1.0 - fr) * (1.0 - fc), (1.0 - fr) * fc, fr * (1.0 - fc), fr * fc],
            fr,
            fc,
        }
    }

    fn sample_into(&self, f: &[f64], ch: usize, scale: f64, out: &mut [f64]) {
        for q in 0..4 {
            if let Some(i) = self.idx[q] {
                let wq = self.w[q] * scale;
                if wq != 0.0 {
                    out.iter_mut()
                        .zip(&f[i * ch..(i + 1) * ch])
                        .for_each(|(o, v)| *o += wq * v);
                }
            }
        }
    }

    fn corner<'a>(&self, f: &'a [f64], ch: usize, q: usize) -> Option<&'a [f64]> {
        self.idx[q].map(|i| &f[i * ch..(i + 1) * ch])
    }

    /// d(sample · g)/d(row, col) for a channel-wise upstream gradient `g`.
    fn location_grad(&self, f: &[f64], ch: usize, g: &[f64]) -> (f64, f64) {
        let dot = |q: usize| {
            self.corner(f, ch, q)
                .map(|v| v.iter().zip(g).map(|(a, b)| a * b).sum::<f64>())
                .unwrap_or(0.0)
        };
        let (v00, v01, v10, v11) = (dot(0), dot(1), dot(2), dot(3));
        let dr = (1.0 - self.fc) * (v10 - v00) + self.fc * (v11 - v01);
        let dc = (1.0 - self.fr) * (v01 - v00) + self.fr * (v11 - v10);
        (dr, dc)
    }

    fn scatter(&self, gf: &mut [f64], ch: usize, scale: f64, g: &[f64]) {
        for q in 0..4 {
            if let Some(i) = self.idx[q] {
                let wq = self.w[q] * scale;
                if wq != 0.0 {
                    gf[i * ch..(i + 1) * ch]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(o, v)| *o += wq * v);
                }
            }
        }
    }
}

fn map_dims(op: &'static str, f: &Tensor) -> Result<(usize, usize, usize)> {
    match *f.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::dim(op, f.shape(), &[0, 0, 0])),
    }
}

impl<'t> Var<'t> {
    /// Samples `self: [H, W, C]` at continuous `(row, col)` points `pts: [P, 2]`.
    ///
    /// Corners outside `[0, H-1] × [0, W-1]` read as zero.
    pub fn bilinear_sample(self, pts: Var<'t>) -> Result<Var<'t>> {
        let (fv, pv) = (self.value(), pts.value());
        let (h, w, ch) = map_dims("bilinear_sample", &fv)?;
        if pv.shape().len() != 2 || pv.shape()[1] != 2 {
            return Err(Error::dim("bilinear_sample", fv.shape(), pv.shape()));
        }
        let p = pv.shape()[0];
        let corners: Vec<Corners> = pv
            .data()
            .chunks(2)
            .map(|rc| Corners::new(h, w, rc[0], rc[1]))
            .collect();
        let mut out = vec![0.0; p * ch];
        for (i, cr) in corners.iter().enumerate() {
            cr.sample_into(fv.data(), ch, 1.0, &mut out[i * ch..(i + 1) * ch]);
        }
        Ok(self.tape().op(
            Tensor::new(&[p, ch], out)?,
            &[self, pts],
            Box::new(move |args, slots| {
                let f = args.inputs[0].data();
                if let Some(gf) = &mut slots[0] {
                    for (i, cr) in corners.iter().enumerate() {
                        cr.scatter(gf, ch, 1.0, &args.grad[i * ch..(i + 1) * ch]);
                    }
                }
                if let Some(gp) = &mut slots[1] {
                    for (i, cr) in corners.iter().enumerate() {
                        let (dr, dc) = cr.location_grad(f, ch, &args.grad[i * ch..(i + 1) * ch]);
                        gp[2 * i] = dr;
                        gp[2 * i + 1] = dc;
                    }
                }
            }),
        ))
    }

    /// Weighted bilinear aggregation used by deformable attention.
    ///
    /// `self: [H, W, C]`, `pts: [T·G·K, 2]`, `weights: [T·G·K]`. Returns
    /// `[T, G, C]` with `out[t, g] = Σ_k weights[t,g,k] · sample(pts[t,g,k])`.
    /// Rows `t` with `keep[t] == false` are exactly zero and pass no gradient.
    pub fn weighted_sample(
        self,
        pts: Var<'t>,
        weights: Var<'t>,
        groups: usize,
        keep: &[bool],
    ) -> Result<Var<'t>> {
        let (fv, pv, wv) = (self.value(), pts.value(), weights.value());
        let (h, w, ch) = map_dims("weighted_sample", &fv)?;
        let t = keep.len();
        let n = wv.len();
        if pv.shape() != [n, 2] || t == 0 || groups == 0 || n % (t * groups) != 0 {
            return Err(Error::dim("weighted_sample", pv.shape(), wv.shape()));
        }
        let k = n / (t * groups);
        let corners: Vec<Option<Corners>> = pv
            .data()
            .chunks(2)
            .enumerate()
            .map(|(i, rc)| keep[i / (groups * k)].then(|| Corners::new(h, w, rc[0], rc[1])))
            .collect();
        let mut out = vec![0.0; t * groups * ch];
        for (i, cr) in corners.iter().enumerate() {
            if let Some(cr) = cr {
                let row = i / k;
                cr.sample_into(fv.data(), ch, wv.data()[i], &mut out[row * ch..(row + 1) * ch]);
            }
        }
        Ok(self.tape().op(
            Tensor::new(&[t, groups, ch], out)?,
            &[self, pts, weights],
            Box::new(move |args, slots| {
                let f = args.inputs[0].data();
                let wd = args.inputs[2].data();
                let go = args.grad;
                if let Some(gf) = &mut slots[0] {
                    for (i, cr) in corners.iter().enumerate() {
                        if let Some(cr) = cr {
                            let row = i / k;
                            cr.scatter(gf, ch, wd[i], &go[row * ch..(row + 1) * ch]);
                        }
                    }
                }
                if let Some(gp) = &mut slots[1] {
                    for (i, cr) in corners.iter().enumerate() {
                        if let Some(cr) = cr {
                            let row = i / k;
                            let (dr, dc) = cr.location_grad(f, ch, &go[row * ch..(row + 1) * ch]);
                            gp[2 * i] = wd[i] * dr;
                            gp[2 * i + 1] = wd[i] * dc;
                        }
                    }
                }
                if let Some(gw) = &mut slots[2] {
                    let mut s = vec![0.0; ch];
                    for (i, cr) in corners.iter().enumerate() {
                        if let Some(cr) = cr {
                            let row = i / k;
                            s.fill(0.0);
                            cr.sample_into(f, ch, 1.0, &mut s);
                            gw[i] = s.iter().zip(&go[row * ch..(row + 1) * ch]).map(|(a, b)| a * b).sum();
                        }
                    }
                }
            }),
        ))
    }

    /// Zero-padded same-size 3×3 convolution.
    /// `self: [H, W, Ci]`, `kernel: [3, 3, Ci, Co]`, `bias: [Co]`.
    pub fn conv2d_3x3(self, kernel: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        let (xv, kv, bv) = (self.value(), kernel.value(), bias.value());
        let (h, w, ci) = map_dims("conv2d_3x3", &xv)?;
        let co = match *kv.shape() {
            [3, 3, kci, co] if kci == ci => co,
            _ => return Err(Error::dim("conv2d_3x3", xv.shape(), kv.shape())),
        };
        if bv.shape() != [co] {
            return Err(Error::dim("conv2d_3x3", kv.shape(), bv.shape()));
        }
        let kdim = 9 * ci;
        let cols = im2col(xv.data(), h, w, ci);
        let mut out = vec![0.0; h * w * co];
        mm(h * w, kdim, co, &cols, kv.data(), &mut out, 0.0);
        for px in out.chunks_mut(co) {
            px.iter_mut().zip(bv.data()).for_each(|(a, b)| *a += b);
        }
        Ok(self.tape().op(
            Tensor::new(&[h, w, co], out)?,
            &[self, kernel, bias],
            Box::new(move |args, slots| {
                let go = args.grad;
                if let Some(gx) = &mut slots[0] {
                    let mut gcols = vec![0.0; h * w * kdim];
                    mm_nt(h * w, co, kdim, go, args.inputs[1].data(), &mut gcols, 0.0);
                    col2im_add(&gcols, h, w, ci, gx);
                }
                if let Some(gk) = &mut slots[1] {
                    mm_tn(kdim, h * w, co, &cols, go, gk, 0.0);
                }
                if let Some(gb) = &mut slots[2] {
                    for px in go.chunks(co) {
                        gb.iter_mut().zip(px).for_each(|(a, b)| *a += b);
                    }
                }
            }),
        ))
    }

    /// 2×2 average pooling with stride 2; `H` and `W` must be even.
    pub fn avg_pool2(self) -> Result<Var<'t>> {
        let xv = self.value();
        let (h, w, c) = map_dims("avg_pool2", &xv)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::dim("avg_pool2", xv.shape(), &[2, 2]));
        }
        let (ho, wo) = (h / 2, w / 2);
        let x = xv.data();
        let mut out = vec![0.0; ho * wo * c];
        for r in 0..ho {
            for q in 0..wo {
                for ch in 0..c {
                    let at = |rr: usize, qq: usize| x[(rr * w + qq) * c + ch];
                    out[(r * wo + q) * c + ch] = 0.25
                        * (at(2 * r, 2 * q) + at(2 * r, 2 * q + 1) + at(2 * r + 1, 2 * q) + at(2 * r + 1, 2 * q + 1));
                }
            }
        }
        Ok(self.tape().op(
            Tensor::new(&[ho, wo, c], out)?,
            &[self],
            Box::new(move |args, slots| {
                if let Some(g) = &mut slots[0] {
                    for r in 0..h {
                        for q in 0..w {
                            for ch in 0..c {
                                g[(r * w + q) * c + ch] = 0.25 * args.grad[((r / 2) * wo + q / 2) * c + ch];
                            }
                        }
                    }
                }
            }),
        ))
    }
}

fn im2col(x: &[f64], h: usize, w: usize, ci: usize) -> Vec<f64> {
    let kdim = 9 * ci;
    let mut cols = vec![0.0; h * w * kdim];
    for r in 0..h {
        for q in 0..w {
            let base = (r * w + q) * kdim;
            for dy in 0..3 {
                let rr = r as isize + dy as isize - 1;
                if rr < 0 || rr >= h as isize {
                    continue;
                }
                for dx in 0..3 {
                    let qq = q as isize + dx as isize - 1;
                    if qq < 0 || qq >= w as isize {
                        continue;
                    }
                    let src = (rr as usize * w + qq as usize) * ci;
                    let dst = base + (dy * 3 + dx) * ci;
                    cols[dst..dst + ci].copy_from_slice(&x[src..src + ci]);
                }
            }
        }
    }
    cols
}

fn col2im_add(cols: &[f64], h: usize, w: usize, ci: usize, gx: &mut [f64]) {
    let kdim = 9 * ci;
    for r in 0..h {
        for q in 0..w {
            let base = (r * w + q) * kdim;
            for dy in 0..3 {
                let rr = r as isize + dy as isize - 1;
                if rr < 0 || rr >= h as isize {
                    continue;
                }
                for dx in 0..3 {
                    let qq = q as isize + dx as isize - 1;
                    if qq < 0 || qq >= w as isize {
                        continue;
                    }
                    let dst = (rr as usize * w + qq as usize) * ci;
                    let src = base + (dy * 3 + dx) * ci;
                    gx[dst..dst + ci]
                        .iter_mut()
                        .zip(&cols[src..src + ci])
                        .for_each(|(a, b)| *a += b);
                }
            }
        }
    }
}
