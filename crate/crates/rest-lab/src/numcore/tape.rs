//! Wengert tape: records the forward primitives of one pass and replays
//! them in reverse to populate gradients.
//!
//! The primitive vocabulary is fixed to what the three networks need:
//! conv2d 3x3 (stride 1, zero pad), max-pool 2x2, nearest upsample 2x,
//! channel concat, relu, sigmoid, elementwise BCE and hinge, mean/sum
//! reductions, scalar scaling and addition.

use super::tensor::{ParamSet, Tensor};
use super::NumError;

/// Handle to a tensor recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorRef(usize);

enum Op {
    Leaf { param: Option<usize> },
    Conv2d { x: usize, w: usize, b: usize },
    MaxPool2 { x: usize, argmax: Vec<u32> },
    Upsample2 { x: usize },
    ConcatC { a: usize, b: usize },
    Relu { x: usize },
    Sigmoid { x: usize },
    Bce { p: usize, t: usize },
    Hinge { s: usize, y: usize },
    Mean { x: usize },
    Sum { x: usize },
    MulScalar { x: usize, c: f32 },
    Add { a: usize, b: usize },
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
    backward_done: bool,
}

const BCE_EPS: f32 = 1e-6;

fn dims4(t: &Tensor) -> Option<(usize, usize, usize, usize)> {
    match t.shape() {
        [n, c, h, w] => Some((*n, *c, *h, *w)),
        _ => None,
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<TensorRef, NumError> {
        if !value.all_finite() {
            return Err(NumError::NonFinite { context: op_name(&op).to_string() });
        }
        self.nodes.push(Node { op, value });
        Ok(TensorRef(self.nodes.len() - 1))
    }

    pub fn value(&self, r: TensorRef) -> &Tensor {
        &self.nodes[r.0].value
    }

    /// Gradient of the loss w.r.t. a recorded tensor. Zeros if unreachable.
    pub fn grad(&self, r: TensorRef) -> Vec<f32> {
        match self.grads.get(r.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => vec![0.0; self.nodes[r.0].value.len()],
        }
    }

    /// Record a constant leaf (no gradient is reported for it).
    pub fn leaf(&mut self, value: Tensor) -> Result<TensorRef, NumError> {
        self.push(Op::Leaf { param: None }, value)
    }

    /// Record a parameter leaf; `index` addresses the owning `ParamSet`.
    pub fn param(&mut self, index: usize, value: Tensor) -> Result<TensorRef, NumError> {
        self.push(Op::Leaf { param: Some(index) }, value)
    }

    /// Register every parameter of a set as a leaf, in order.
    pub fn params(&mut self, set: &ParamSet) -> Result<Vec<TensorRef>, NumError> {
        set.params
            .iter()
            .enumerate()
            .map(|(i, p)| self.param(i, p.value.clone()))
            .collect()
    }

    // ── primitives ──────────────────────────────────────────────────

    /// 3x3 convolution, stride 1, zero padding 1, with per-channel bias.
    /// x: [N,Ci,H,W], w: [Co,Ci,3,3], b: [Co] -> [N,Co,H,W]
    pub fn conv2d(&mut self, x: TensorRef, w: TensorRef, b: TensorRef) -> Result<TensorRef, NumError> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        let bs = self.value(b).shape().to_vec();
        let (n, ci, h, wd) = dims4(self.value(x)).ok_or_else(|| shape_err("conv2d", &xs, &ws))?;
        let ok = matches!(ws[..], [_, wci, 3, 3] if wci == ci) && bs.len() == 1 && bs[0] == ws[0];
        if !ok {
            return Err(shape_err("conv2d", &xs, &ws));
        }
        let co = ws[0];
        let xd = self.value(x).data();
        let wdat = self.value(w).data();
        let bd = self.value(b).data();
        let mut out = vec![0.0f32; n * co * h * wd];
        conv2d_forward(xd, wdat, bd, &mut out, n, ci, co, h, wd);
        let value = Tensor::new(vec![n, co, h, wd], out)?;
        self.push(Op::Conv2d { x: x.0, w: w.0, b: b.0 }, value)
    }

    /// 2x2 max pooling, stride 2. H and W must be even.
    pub fn max_pool2(&mut self, x: TensorRef) -> Result<TensorRef, NumError> {
        let xs = self.value(x).shape().to_vec();
        let (n, c, h, w) = dims4(self.value(x)).ok_or_else(|| shape_err("max-pool2", &xs, &[]))?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err("max-pool2", &xs, &[]));
        }
        let (oh, ow) = (h / 2, w / 2);
        let xd = self.value(x).data();
        let mut out = vec![0.0f32; n * c * oh * ow];
        let mut argmax = vec![0u32; n * c * oh * ow];
        for p in 0..n * c {
            let xp = &xd[p * h * w..(p + 1) * h * w];
            let op_ = &mut out[p * oh * ow..(p + 1) * oh * ow];
            let ap = &mut argmax[p * oh * ow..(p + 1) * oh * ow];
            for r in 0..oh {
                for cc in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut bi = 0u32;
                    for dr in 0..2 {
                        for dc in 0..2 {
                            let idx = (2 * r + dr) * w + 2 * cc + dc;
                            if xp[idx] > best {
                                best = xp[idx];
                                bi = idx as u32;
                            }
                        }
                    }
                    op_[r * ow + cc] = best;
                    ap[r * ow + cc] = bi;
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        self.push(Op::MaxPool2 { x: x.0, argmax }, value)
    }

    /// Nearest-neighbor 2x upsampling.
    pub fn upsample2(&mut self, x: TensorRef) -> Result<TensorRef, NumError> {
        let xs = self.value(x).shape().to_vec();
        let (n, c, h, w) = dims4(self.value(x)).ok_or_else(|| shape_err("upsample2", &xs, &[]))?;
        let (oh, ow) = (h * 2, w * 2);
        let xd = self.value(x).data();
        let mut out = vec![0.0f32; n * c * oh * ow];
        for p in 0..n * c {
            let xp = &xd[p * h * w..(p + 1) * h * w];
            let op_ = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for r in 0..oh {
                for cc in 0..ow {
                    op_[r * ow + cc] = xp[(r / 2) * w + cc / 2];
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        self.push(Op::Upsample2 { x: x.0 }, value)
    }

    /// Channel concatenation: [N,C1,H,W] ++ [N,C2,H,W] -> [N,C1+C2,H,W].
    pub fn concat_c(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef, NumError> {
        let asv = self.value(a).shape().to_vec();
        let bsv = self.value(b).shape().to_vec();
        let (n, c1, h, w) = dims4(self.value(a)).ok_or_else(|| shape_err("concat-c", &asv, &bsv))?;
        let (n2, c2, h2, w2) = dims4(self.value(b)).ok_or_else(|| shape_err("concat-c", &asv, &bsv))?;
        if n != n2 || h != h2 || w != w2 {
            return Err(shape_err("concat-c", &asv, &bsv));
        }
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let plane = h * w;
        let mut out = vec![0.0f32; n * (c1 + c2) * plane];
        for i in 0..n {
            let dst = &mut out[i * (c1 + c2) * plane..];
            dst[..c1 * plane].copy_from_slice(&ad[i * c1 * plane..(i + 1) * c1 * plane]);
            dst[c1 * plane..(c1 + c2) * plane]
                .copy_from_slice(&bd[i * c2 * plane..(i + 1) * c2 * plane]);
        }
        let value = Tensor::new(vec![n, c1 + c2, h, w], out)?;
        self.push(Op::ConcatC { a: a.0, b: b.0 }, value)
    }

    pub fn relu(&mut self, x: TensorRef) -> Result<TensorRef, NumError> {
        let v = self.value(x);
        let out: Vec<f32> = v.data().iter().map(|&a| a.max(0.0)).collect();
        let value = Tensor::new(v.shape().to_vec(), out)?;
        self.push(Op::Relu { x: x.0 }, value)
    }

    pub fn sigmoid(&mut self, x: TensorRef) -> Result<TensorRef, NumError> {
        let v = self.value(x);
        let out: Vec<f32> = v.data().iter().map(|&a| 1.0 / (1.0 + (-a).exp())).collect();
        let value = Tensor::new(v.shape().to_vec(), out)?;
        self.push(Op::Sigmoid { x: x.0 }, value)
    }

    /// Elementwise binary cross-entropy of probabilities `p` against targets `t`.
    pub fn bce(&mut self, p: TensorRef, t: TensorRef) -> Result<TensorRef, NumError> {
        let ps = self.value(p).shape().to_vec();
        let ts = self.value(t).shape().to_vec();
        if ps != ts {
            return Err(shape_err("bce", &ps, &ts));
        }
        let pd = self.value(p).data();
        let td = self.value(t).data();
        let out: Vec<f32> = pd
            .iter()
            .zip(td)
            .map(|(&pv, &tv)| {
                let pc = pv.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(tv * pc.ln() + (1.0 - tv) * (1.0 - pc).ln())
            })
            .collect();
        let value = Tensor::new(ps, out)?;
        self.push(Op::Bce { p: p.0, t: t.0 }, value)
    }

    /// Elementwise hinge loss max(0, 1 - y*s) with labels y in {-1, +1}.
    pub fn hinge(&mut self, s: TensorRef, y: TensorRef) -> Result<TensorRef, NumError> {
        let ss = self.value(s).shape().to_vec();
        let ys = self.value(y).shape().to_vec();
        if ss != ys {
            return Err(shape_err("hinge", &ss, &ys));
        }
        let sd = self.value(s).data();
        let yd = self.value(y).data();
        let out: Vec<f32> = sd.iter().zip(yd).map(|(&sv, &yv)| (1.0 - yv * sv).max(0.0)).collect();
        let value = Tensor::new(ss, out)?;
        self.push(Op::Hinge { s: s.0, y: y.0 }, value)
    }

    /// Mean over all elements -> scalar.
    pub fn mean(&mut self, x: TensorRef) -> Result<TensorRef, NumError> {
        let v = self.value(x);
        if v.is_empty() {
            return Err(shape_err("mean", v.shape(), &[]));
        }
        let m = v.data().iter().sum::<f32>() / v.len() as f32;
        self.push(Op::Mean { x: x.0 }, Tensor::scalar(m))
    }

    /// Sum over all elements -> scalar.
    pub fn sum(&mut self, x: TensorRef) -> Result<TensorRef, NumError> {
        let v = self.value(x);
        let s = v.data().iter().sum::<f32>();
        self.push(Op::Sum { x: x.0 }, Tensor::scalar(s))
    }

    /// Multiply every element by a constant.
    pub fn mul_scalar(&mut self, x: TensorRef, c: f32) -> Result<TensorRef, NumError> {
        let v = self.value(x);
        let out: Vec<f32> = v.data().iter().map(|&a| a * c).collect();
        let value = Tensor::new(v.shape().to_vec(), out)?;
        self.push(Op::MulScalar { x: x.0, c }, value)
    }

    /// Elementwise addition. Shapes must match, except that either side
    /// may be a scalar (broadcast over the other).
    pub fn add(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef, NumError> {
        let av = self.value(a);
        let bv = self.value(b);
        let (asv, bsv) = (av.shape().to_vec(), bv.shape().to_vec());
        let value = if asv == bsv {
            let out: Vec<f32> = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
            Tensor::new(asv, out)?
        } else if bv.is_scalar() {
            let s = bv.data()[0];
            Tensor::new(asv, av.data().iter().map(|&x| x + s).collect())?
        } else if av.is_scalar() {
            let s = av.data()[0];
            Tensor::new(bsv, bv.data().iter().map(|&x| x + s).collect())?
        } else {
            return Err(shape_err("add", &asv, &bsv));
        };
        self.push(Op::Add { a: a.0, b: b.0 }, value)
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. May run at most once per tape.
    pub fn backward(&mut self, loss: TensorRef) -> Result<(), NumError> {
        if self.backward_done {
            return Err(NumError::TapeConsumed);
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(NumError::NonScalarLoss { shape: self.nodes[loss.0].value.shape().to_vec() });
        }
        self.backward_done = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            // re-insert; the taken value is still needed by readers
            let gref = &g;
            match &self.nodes[i].op {
                Op::Leaf { .. } => {}
                Op::Conv2d { x, w, b } => {
                    let (xn, ci, h, wd) = dims4(&self.nodes[*x].value).unwrap();
                    let co = self.nodes[*w].value.shape()[0];
                    let xd = self.nodes[*x].value.data();
                    let wdat = self.nodes[*w].value.data();
                    let mut dx = take_or_zero(&mut grads, *x, xd.len());
                    let mut dw = take_or_zero(&mut grads, *w, wdat.len());
                    let mut db = take_or_zero(&mut grads, *b, co);
                    conv2d_backward(xd, wdat, gref, &mut dx, &mut dw, &mut db, xn, ci, co, h, wd);
                    grads[*x] = Some(dx);
                    grads[*w] = Some(dw);
                    grads[*b] = Some(db);
                }
                Op::MaxPool2 { x, argmax } => {
                    let xlen = self.nodes[*x].value.len();
                    let (_, _, h, w) = dims4(&self.nodes[*x].value).unwrap();
                    let opl = (h / 2) * (w / 2);
                    let ipl = h * w;
                    let mut dx = take_or_zero(&mut grads, *x, xlen);
                    for (oi, &ai) in argmax.iter().enumerate() {
                        let p = oi / opl;
                        dx[p * ipl + ai as usize] += gref[oi];
                    }
                    grads[*x] = Some(dx);
                }
                Op::Upsample2 { x } => {
                    let (nb, c, h, w) = dims4(&self.nodes[*x].value).unwrap();
                    let (oh, ow) = (h * 2, w * 2);
                    let mut dx = take_or_zero(&mut grads, *x, nb * c * h * w);
                    for p in 0..nb * c {
                        let gp = &gref[p * oh * ow..(p + 1) * oh * ow];
                        let dp = &mut dx[p * h * w..(p + 1) * h * w];
                        for r in 0..oh {
                            for cc in 0..ow {
                                dp[(r / 2) * w + cc / 2] += gp[r * ow + cc];
                            }
                        }
                    }
                    grads[*x] = Some(dx);
                }
                Op::ConcatC { a, b } => {
                    let (nb, c1, h, w) = dims4(&self.nodes[*a].value).unwrap();
                    let c2 = self.nodes[*b].value.shape()[1];
                    let plane = h * w;
                    let mut da = take_or_zero(&mut grads, *a, nb * c1 * plane);
                    let mut db = take_or_zero(&mut grads, *b, nb * c2 * plane);
                    for i in 0..nb {
                        let src = &gref[i * (c1 + c2) * plane..];
                        for (d, s) in da[i * c1 * plane..(i + 1) * c1 * plane]
                            .iter_mut()
                            .zip(&src[..c1 * plane])
                        {
                            *d += s;
                        }
                        for (d, s) in db[i * c2 * plane..(i + 1) * c2 * plane]
                            .iter_mut()
                            .zip(&src[c1 * plane..(c1 + c2) * plane])
                        {
                            *d += s;
                        }
                    }
                    grads[*a] = Some(da);
                    grads[*b] = Some(db);
                }
                Op::Relu { x } => {
                    let xd = self.nodes[*x].value.data();
                    let mut dx = take_or_zero(&mut grads, *x, xd.len());
                    for ((d, &xv), &gv) in dx.iter_mut().zip(xd).zip(gref) {
                        if xv > 0.0 {
                            *d += gv;
                        }
                    }
                    grads[*x] = Some(dx);
                }
                Op::Sigmoid { x } => {
                    let yd = self.nodes[i].value.data();
                    let mut dx = take_or_zero(&mut grads, *x, yd.len());
                    for ((d, &yv), &gv) in dx.iter_mut().zip(yd).zip(gref) {
                        *d += gv * yv * (1.0 - yv);
                    }
                    grads[*x] = Some(dx);
                }
                Op::Bce { p, t } => {
                    let pd = self.nodes[*p].value.data();
                    let td = self.nodes[*t].value.data();
                    let mut dp = take_or_zero(&mut grads, *p, pd.len());
                    let mut dt = take_or_zero(&mut grads, *t, td.len());
                    for k in 0..pd.len() {
                        let pc = pd[k].clamp(BCE_EPS, 1.0 - BCE_EPS);
                        if pd[k] > BCE_EPS && pd[k] < 1.0 - BCE_EPS {
                            dp[k] += gref[k] * (pc - td[k]) / (pc * (1.0 - pc));
                        }
                        dt[k] += gref[k] * ((1.0 - pc).ln() - pc.ln());
                    }
                    grads[*p] = Some(dp);
                    grads[*t] = Some(dt);
                }
                Op::Hinge { s, y } => {
                    let sd = self.nodes[*s].value.data();
                    let yd = self.nodes[*y].value.data();
                    let mut ds = take_or_zero(&mut grads, *s, sd.len());
                    let mut dy = take_or_zero(&mut grads, *y, yd.len());
                    for k in 0..sd.len() {
                        if 1.0 - yd[k] * sd[k] > 0.0 {
                            ds[k] += -yd[k] * gref[k];
                            dy[k] += -sd[k] * gref[k];
                        }
                    }
                    grads[*s] = Some(ds);
                    grads[*y] = Some(dy);
                }
                Op::Mean { x } => {
                    let xlen = self.nodes[*x].value.len();
                    let mut dx = take_or_zero(&mut grads, *x, xlen);
                    let gv = gref[0] / xlen as f32;
                    for d in dx.iter_mut() {
                        *d += gv;
                    }
                    grads[*x] = Some(dx);
                }
                Op::Sum { x } => {
                    let xlen = self.nodes[*x].value.len();
                    let mut dx = take_or_zero(&mut grads, *x, xlen);
                    for d in dx.iter_mut() {
                        *d += gref[0];
                    }
                    grads[*x] = Some(dx);
                }
                Op::MulScalar { x, c } => {
                    let xlen = self.nodes[*x].value.len();
                    let c = *c;
                    let mut dx = take_or_zero(&mut grads, *x, xlen);
                    for (d, &gv) in dx.iter_mut().zip(gref) {
                        *d += c * gv;
                    }
                    grads[*x] = Some(dx);
                }
                Op::Add { a, b } => {
                    let alen = self.nodes[*a].value.len();
                    let blen = self.nodes[*b].value.len();
                    let mut da = take_or_zero(&mut grads, *a, alen);
                    let mut db = take_or_zero(&mut grads, *b, blen);
                    if alen == gref.len() {
                        for (d, &gv) in da.iter_mut().zip(gref) {
                            *d += gv;
                        }
                    } else {
                        da[0] += gref.iter().sum::<f32>();
                    }
                    if blen == gref.len() {
                        for (d, &gv) in db.iter_mut().zip(gref) {
                            *d += gv;
                        }
                    } else {
                        db[0] += gref.iter().sum::<f32>();
                    }
                    grads[*a] = Some(da);
                    grads[*b] = Some(db);
                }
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Accumulate computed gradients into the owning parameter set.
    /// Registered parameters unreachable from the loss receive zeros.
    pub fn apply_grads(&self, set: &mut ParamSet) -> Result<(), NumError> {
        if !self.backward_done {
            return Err(NumError::BackwardNotRun);
        }
        for (ni, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(pi) } = node.op {
                let zeros;
                let g: &[f32] = match self.grads[ni].as_ref() {
                    Some(g) => g,
                    None => {
                        zeros = vec![0.0; node.value.len()];
                        &zeros
                    }
                };
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(NumError::NonFinite {
                        context: format!("gradient of parameter '{}'", set.params[pi].name),
                    });
                }
                set.params[pi].accumulate_grad(g);
            }
        }
        Ok(())
    }
}

fn take_or_zero(grads: &mut [Option<Vec<f32>>], idx: usize, len: usize) -> Vec<f32> {
    grads[idx].take().unwrap_or_else(|| vec![0.0; len])
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf { .. } => "leaf",
        Op::Conv2d { .. } => "conv2d",
        Op::MaxPool2 { .. } => "max-pool2",
        Op::Upsample2 { .. } => "upsample2",
        Op::ConcatC { .. } => "concat-c",
        Op::Relu { .. } => "relu",
        Op::Sigmoid { .. } => "sigmoid",
        Op::Bce { .. } => "bce",
        Op::Hinge { .. } => "hinge",
        Op::Mean { .. } => "mean",
        Op::Sum { .. } => "sum",
        Op::MulScalar { .. } => "mul-scalar",
        Op::Add { .. } => "add",
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> NumError {
    NumError::ShapeMismatch { op: op.to_string(), detail: format!("shapes {:?} / {:?}", a, b) }
}

fn conv2d_forward(
    x: &[f32],
    w: &[f32],
    b: &[f32],
    out: &mut [f32],
    n: usize,
    ci: usize,
    co: usize,
    h: usize,
    wd: usize,
) {
    let plane = h * wd;
    for ni in 0..n {
        for oc in 0..co {
            let ob = &mut out[(ni * co + oc) * plane..(ni * co + oc + 1) * plane];
            ob.fill(b[oc]);
            for ic in 0..ci {
                let xp = &x[(ni * ci + ic) * plane..(ni * ci + ic + 1) * plane];
                let k = &w[(oc * ci + ic) * 9..(oc * ci + ic) * 9 + 9];
                for r in 0..h {
                    let orow = r * wd;
                    for kr in 0..3usize {
                        let rr = r as isize + kr as isize - 1;
                        if rr < 0 || rr >= h as isize {
                            continue;
                        }
                        let xrow = rr as usize * wd;
                        for kc in 0..3usize {
                            let kv = k[kr * 3 + kc];
                            let (c0, c1) = col_range(kc, wd);
                            let off = kc as isize - 1;
                            for c in c0..c1 {
                                ob[orow + c] += kv * xp[(xrow as isize + c as isize + off) as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_backward(
    x: &[f32],
    w: &[f32],
    gy: &[f32],
    dx: &mut [f32],
    dw: &mut [f32],
    db: &mut [f32],
    n: usize,
    ci: usize,
    co: usize,
    h: usize,
    wd: usize,
) {
    let plane = h * wd;
    for ni in 0..n {
        for oc in 0..co {
            let gp = &gy[(ni * co + oc) * plane..(ni * co + oc + 1) * plane];
            db[oc] += gp.iter().sum::<f32>();
            for ic in 0..ci {
                let xp = &x[(ni * ci + ic) * plane..(ni * ci + ic + 1) * plane];
                let k = &w[(oc * ci + ic) * 9..(oc * ci + ic) * 9 + 9];
                let dk = &mut dw[(oc * ci + ic) * 9..(oc * ci + ic) * 9 + 9];
                let dxp = &mut dx[(ni * ci + ic) * plane..(ni * ci + ic + 1) * plane];
                for r in 0..h {
                    let orow = r * wd;
                    for kr in 0..3usize {
                        let rr = r as isize + kr as isize - 1;
                        if rr < 0 || rr >= h as isize {
                            continue;
                        }
                        let xrow = rr as usize * wd;
                        for kc in 0..3usize {
                            let kv = k[kr * 3 + kc];
                            let (c0, c1) = col_range(kc, wd);
                            let off = kc as isize - 1;
                            let mut acc = 0.0f32;
                            for c in c0..c1 {
                                let xi = (xrow as isize + c as isize + off) as usize;
                                let g = gp[orow + c];
                                acc += g * xp[xi];
                                dxp[xi] += kv * g;
                            }
                            dk[kr * 3 + kc] += acc;
                        }
                    }
                }
            }
        }
    }
}

/// Valid output-column range for a kernel column offset of (kc - 1).
fn col_range(kc: usize, wd: usize) -> (usize, usize) {
    match kc {
        0 => (1, wd),
        1 => (0, wd),
        _ => (0, wd.saturating_sub(1)),
    }
}
