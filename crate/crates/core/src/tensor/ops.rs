use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::tape::Var;
use crate::error::{bail, Result};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolKind {
    Max,
    Avg,
}

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchNormStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

fn same_shape(a: &Var<'_>, b: &Var<'_>, op: &str) -> Result<Vec<usize>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        bail!(Dimension, "{op}: shapes {:?} and {:?} differ", sa, sb);
    }
    Ok(sa)
}

fn rank3(v: &Var<'_>, op: &str) -> Result<(usize, usize, usize)> {
    match v.shape()[..] {
        [b, c, l] => Ok((b, c, l)),
        ref s => bail!(Dimension, "{op}: expected [B, C, L], got {:?}", s),
    }
}

fn rank2(v: &Var<'_>, op: &str) -> Result<(usize, usize)> {
    match v.shape()[..] {
        [r, c] => Ok((r, c)),
        ref s => bail!(Dimension, "{op}: expected a matrix, got {:?}", s),
    }
}

fn rank1(v: &Var<'_>, op: &str) -> Result<usize> {
    match v.shape()[..] {
        [n] => Ok(n),
        ref s => bail!(Dimension, "{op}: expected a vector, got {:?}", s),
    }
}

impl<'t> Var<'t> {
    fn unary(
        &self,
        value: Vec<f64>,
        backward: impl Fn(&[f64]) -> Vec<f64> + 'static,
    ) -> Var<'t> {
        self.tape.record(
            self.shape(),
            value,
            &[*self],
            Box::new(move |g, _| vec![Some(backward(g))]),
        )
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let shape = same_shape(self, other, "add")?;
        let (a, b) = (self.value(), other.value());
        let out = a.iter().zip(b.iter()).map(|(x, y)| x + y).collect();
        Ok(self.tape.record(
            shape,
            out,
            &[*self, *other],
            Box::new(|g, _| vec![Some(g.to_vec()), Some(g.to_vec())]),
        ))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let shape = same_shape(self, other, "sub")?;
        let (a, b) = (self.value(), other.value());
        let out = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
        Ok(self.tape.record(
            shape,
            out,
            &[*self, *other],
            Box::new(|g, _| vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]),
        ))
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let shape = same_shape(self, other, "mul")?;
        let (a, b) = (self.value(), other.value());
        let out = a.iter().zip(b.iter()).map(|(x, y)| x * y).collect();
        Ok(self.tape.record(
            shape,
            out,
            &[*self, *other],
            Box::new(move |g, need| {
                let ga = need[0].then(|| g.iter().zip(b.iter()).map(|(g, y)| g * y).collect());
                let gb = need[1].then(|| g.iter().zip(a.iter()).map(|(g, x)| g * x).collect());
                vec![ga, gb]
            }),
        ))
    }

    pub fn scale(&self, factor: f64) -> Var<'t> {
        let out = self.value().iter().map(|x| x * factor).collect();
        self.unary(out, move |g| g.iter().map(|g| g * factor).collect())
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        let out = self.value().iter().map(|x| x + c).collect();
        self.unary(out, |g| g.to_vec())
    }

    pub fn relu(&self) -> Var<'t> {
        let x = self.value();
        let out = x.iter().map(|&v| v.max(0.0)).collect();
        self.unary(out, move |g| {
            g.iter()
                .zip(x.iter())
                .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                .collect()
        })
    }

    pub fn tanh(&self) -> Var<'t> {
        let y: Vec<f64> = self.value().iter().map(|v| v.tanh()).collect();
        let saved = Rc::new(y.clone());
        self.unary(y, move |g| {
            g.iter().zip(saved.iter()).map(|(g, y)| g * (1.0 - y * y)).collect()
        })
    }

    pub fn exp(&self) -> Var<'t> {
        let y: Vec<f64> = self.value().iter().map(|v| v.exp()).collect();
        let saved = Rc::new(y.clone());
        self.unary(y, move |g| g.iter().zip(saved.iter()).map(|(g, y)| g * y).collect())
    }

    pub fn log(&self) -> Var<'t> {
        let x = self.value();
        let out = x.iter().map(|v| v.ln()).collect();
        self.unary(out, move |g| g.iter().zip(x.iter()).map(|(g, x)| g / x).collect())
    }

    pub fn sum(&self) -> Var<'t> {
        let n = self.value().len();
        let total = self.value().iter().sum();
        self.tape.record(
            Vec::new(),
            vec![total],
            &[*self],
            Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.value().len().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    /// Inner product of two vectors.
    pub fn dot(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let n = rank1(self, "dot")?;
        if rank1(other, "dot")? != n {
            bail!(Dimension, "dot: lengths {} and {:?} differ", n, other.shape());
        }
        Ok(self.mul(other)?.sum())
    }

    /// `[m, k] x [k, n] -> [m, n]`
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let (m, k) = rank2(self, "matmul")?;
        let (k2, n) = rank2(other, "matmul")?;
        if k != k2 {
            bail!(Dimension, "matmul: inner dimensions {} and {} differ", k, k2);
        }
        let (a, b) = (self.value(), other.value());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = a[i * k + p];
                let row = &b[p * n..(p + 1) * n];
                out[i * n..(i + 1) * n]
                    .iter_mut()
                    .zip(row)
                    .for_each(|(o, bv)| *o += av * bv);
            }
        }
        Ok(self.tape.record(
            vec![m, n],
            out,
            &[*self, *other],
            Box::new(move |g, need| {
                let ga = need[0].then(|| {
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            ga[i * k + p] = (0..n).map(|j| g[i * n + j] * b[p * n + j]).sum();
                        }
                    }
                    ga
                });
                let gb = need[1].then(|| {
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let av = a[i * k + p];
                            gb[p * n..(p + 1) * n]
                                .iter_mut()
                                .zip(&g[i * n..(i + 1) * n])
                                .for_each(|(o, gv)| *o += av * gv);
                        }
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Affine map of rows: `x [B, in]`, `weight [out, in]`, `bias [out]`.
    pub fn linear(&self, weight: &Var<'t>, bias: &Var<'t>) -> Result<Var<'t>> {
        let (batch, fan_in) = rank2(self, "linear")?;
        let (fan_out, w_in) = rank2(weight, "linear")?;
        if w_in != fan_in || rank1(bias, "linear")? != fan_out {
            bail!(
                Dimension,
                "linear: input {:?}, weight {:?}, bias {:?}",
                self.shape(),
                weight.shape(),
                bias.shape()
            );
        }
        let (x, w, b) = (self.value(), weight.value(), bias.value());
        let mut out = vec![0.0; batch * fan_out];
        for r in 0..batch {
            let xr = &x[r * fan_in..(r + 1) * fan_in];
            for o in 0..fan_out {
                let wr = &w[o * fan_in..(o + 1) * fan_in];
                out[r * fan_out + o] = b[o] + xr.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Ok(self.tape.record(
            vec![batch, fan_out],
            out,
            &[*self, *weight, *bias],
            Box::new(move |g, need| {
                let gx = need[0].then(|| {
                    let mut gx = vec![0.0; batch * fan_in];
                    for r in 0..batch {
                        for o in 0..fan_out {
                            let gv = g[r * fan_out + o];
                            gx[r * fan_in..(r + 1) * fan_in]
                                .iter_mut()
                                .zip(&w[o * fan_in..(o + 1) * fan_in])
                                .for_each(|(a, w)| *a += gv * w);
                        }
                    }
                    gx
                });
                let gw = need[1].then(|| {
                    let mut gw = vec![0.0; fan_out * fan_in];
                    for r in 0..batch {
                        for o in 0..fan_out {
                            let gv = g[r * fan_out + o];
                            gw[o * fan_in..(o + 1) * fan_in]
                                .iter_mut()
                                .zip(&x[r * fan_in..(r + 1) * fan_in])
                                .for_each(|(a, x)| *a += gv * x);
                        }
                    }
                    gw
                });
                let gb = need[2].then(|| {
                    let mut gb = vec![0.0; fan_out];
                    for r in 0..batch {
                        for o in 0..fan_out {
                            gb[o] += g[r * fan_out + o];
                        }
                    }
                    gb
                });
                vec![gx, gw, gb]
            }),
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Var<'t>> {
        let shape = self.shape();
        let Some(&n) = shape.last() else {
            bail!(Dimension, "softmax of a scalar");
        };
        let x = self.value();
        let mut y = vec![0.0; x.len()];
        for (xr, yr) in x.chunks(n).zip(y.chunks_mut(n)) {
            let max = xr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, v) in yr.iter_mut().zip(xr) {
                *o = (v - max).exp();
                z += *o;
            }
            yr.iter_mut().for_each(|o| *o /= z);
        }
        let saved = Rc::new(y.clone());
        Ok(self.unary(y, move |g| {
            let mut gx = vec![0.0; g.len()];
            for ((gr, yr), out) in g.chunks(n).zip(saved.chunks(n)).zip(gx.chunks_mut(n)) {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for ((o, gv), yv) in out.iter_mut().zip(gr).zip(yr) {
                    *o = yv * (gv - dot);
                }
            }
            gx
        }))
    }

    /// Log-softmax over the last axis, via log-sum-exp.
    pub fn log_softmax(&self) -> Result<Var<'t>> {
        let shape = self.shape();
        let Some(&n) = shape.last() else {
            bail!(Dimension, "log_softmax of a scalar");
        };
        let x = self.value();
        let mut y = vec![0.0; x.len()];
        for (xr, yr) in x.chunks(n).zip(y.chunks_mut(n)) {
            let lse = log_sum_exp(xr);
            yr.iter_mut().zip(xr).for_each(|(o, v)| *o = v - lse);
        }
        let saved = Rc::new(y.clone());
        Ok(self.unary(y, move |g| {
            let mut gx = vec![0.0; g.len()];
            for ((gr, yr), out) in g.chunks(n).zip(saved.chunks(n)).zip(gx.chunks_mut(n)) {
                let total: f64 = gr.iter().sum();
                for ((o, gv), yv) in out.iter_mut().zip(gr).zip(yr) {
                    *o = gv - yv.exp() * total;
                }
            }
            gx
        }))
    }

    /// One-hot of the argmax in the forward direction, identity Jacobian in
    /// the backward direction. Ties go to the lowest index.
    pub fn straight_through(&self) -> Result<Var<'t>> {
        let n = rank1(self, "straight_through")?;
        let y = self.value();
        let mut out = vec![0.0; n];
        out[argmax(&y)] = 1.0;
        Ok(self.unary(out, |g| g.to_vec()))
    }

    /// `Σ_i weights[i] * items[i]` for a weight vector on the tape. Items
    /// whose weight is exactly zero receive no gradient.
    pub fn weighted_sum(weights: &Var<'t>, items: &[Var<'t>]) -> Result<Var<'t>> {
        let n = rank1(weights, "weighted_sum")?;
        if n != items.len() || items.is_empty() {
            bail!(Dimension, "weighted_sum: {} weights for {} items", n, items.len());
        }
        let shape = items[0].shape();
        for it in items {
            if it.shape() != shape {
                bail!(Dimension, "weighted_sum: item shapes {:?} and {:?}", shape, it.shape());
            }
        }
        let w = weights.value();
        let values: Vec<Rc<Vec<f64>>> = items.iter().map(|v| v.value()).collect();
        let mut out = vec![0.0; values[0].len()];
        for (wi, v) in w.iter().zip(&values) {
            if *wi != 0.0 {
                out.iter_mut().zip(v.iter()).for_each(|(o, x)| *o += wi * x);
            }
        }
        let mut parents = Vec::with_capacity(n + 1);
        parents.push(*weights);
        parents.extend_from_slice(items);
        Ok(weights.tape.record(
            shape,
            out,
            &parents,
            Box::new(move |g, need| {
                let mut grads = Vec::with_capacity(n + 1);
                grads.push(need[0].then(|| {
                    values
                        .iter()
                        .map(|v| v.iter().zip(g).map(|(x, g)| x * g).sum())
                        .collect()
                }));
                for (i, wi) in w.iter().enumerate() {
                    grads.push(
                        (need[i + 1] && *wi != 0.0).then(|| g.iter().map(|g| g * wi).collect()),
                    );
                }
                grads
            }),
        ))
    }

    /// Elementwise sum of same-shaped tensors.
    pub fn add_n(items: &[Var<'t>]) -> Result<Var<'t>> {
        let Some(first) = items.first() else {
            bail!(Dimension, "add_n of an empty list");
        };
        let shape = first.shape();
        let mut out = vec![0.0; first.value().len()];
        for it in items {
            if it.shape() != shape {
                bail!(Dimension, "add_n: shapes {:?} and {:?}", shape, it.shape());
            }
            out.iter_mut().zip(it.value().iter()).for_each(|(o, x)| *o += x);
        }
        let k = items.len();
        Ok(first.tape.record(
            shape,
            out,
            items,
            Box::new(move |g, need| (0..k).map(|i| need[i].then(|| g.to_vec())).collect()),
        ))
    }

    /// Per-example mixture: `alpha [B, N]` weights `items[n] [B, ...]`.
    pub fn batched_weighted_sum(alpha: &Var<'t>, items: &[Var<'t>]) -> Result<Var<'t>> {
        let (batch, n) = rank2(alpha, "batched_weighted_sum")?;
        if n != items.len() || n == 0 {
            bail!(Dimension, "batched_weighted_sum: {} weights for {} items", n, items.len());
        }
        let shape = items[0].shape();
        if shape.first() != Some(&batch) || items.iter().any(|v| v.shape() != shape) {
            bail!(Dimension, "batched_weighted_sum: inconsistent item shapes");
        }
        let a = alpha.value();
        let values: Vec<Rc<Vec<f64>>> = items.iter().map(|v| v.value()).collect();
        let per = values[0].len() / batch;
        let mut out = vec![0.0; values[0].len()];
        for b in 0..batch {
            for (i, v) in values.iter().enumerate() {
                let w = a[b * n + i];
                out[b * per..(b + 1) * per]
                    .iter_mut()
                    .zip(&v[b * per..(b + 1) * per])
                    .for_each(|(o, x)| *o += w * x);
            }
        }
        let mut parents = vec![*alpha];
        parents.extend_from_slice(items);
        Ok(alpha.tape.record(
            shape,
            out,
            &parents,
            Box::new(move |g, need| {
                let mut grads = Vec::with_capacity(n + 1);
                grads.push(need[0].then(|| {
                    let mut ga = vec![0.0; batch * n];
                    for b in 0..batch {
                        for (i, v) in values.iter().enumerate() {
                            ga[b * n + i] = v[b * per..(b + 1) * per]
                                .iter()
                                .zip(&g[b * per..(b + 1) * per])
                                .map(|(x, g)| x * g)
                                .sum();
                        }
                    }
                    ga
                }));
                for i in 0..n {
                    grads.push(need[i + 1].then(|| {
                        let mut gi = vec![0.0; g.len()];
                        for b in 0..batch {
                            let w = a[b * n + i];
                            gi[b * per..(b + 1) * per]
                                .iter_mut()
                                .zip(&g[b * per..(b + 1) * per])
                                .for_each(|(o, g)| *o = w * g);
                        }
                        gi
                    }));
                }
                grads
            }),
        ))
    }

    /// Mean over the last axis.
    pub fn mean_last(&self) -> Result<Var<'t>> {
        let mut shape = self.shape();
        let Some(n) = shape.pop() else {
            bail!(Dimension, "mean_last of a scalar");
        };
        if n == 0 {
            bail!(Dimension, "mean_last over an empty axis");
        }
        let x = self.value();
        let out: Vec<f64> = x.chunks(n).map(|c| c.iter().sum::<f64>() / n as f64).collect();
        Ok(self.tape.record(
            shape,
            out,
            &[*self],
            Box::new(move |g, _| {
                let inv = 1.0 / n as f64;
                vec![Some(g.iter().flat_map(|gv| std::iter::repeat(gv * inv).take(n)).collect())]
            }),
        ))
    }

    /// Row-wise inner product with one vector: `[B, C] . [C] -> [B]`.
    pub fn row_dot(&self, vector: &Var<'t>) -> Result<Var<'t>> {
        let (batch, c) = rank2(self, "row_dot")?;
        if rank1(vector, "row_dot")? != c {
            bail!(Dimension, "row_dot: {:?} with {:?}", self.shape(), vector.shape());
        }
        let (m, v) = (self.value(), vector.value());
        let out = m
            .chunks(c)
            .map(|r| r.iter().zip(v.iter()).map(|(a, b)| a * b).sum())
            .collect();
        Ok(self.tape.record(
            vec![batch],
            out,
            &[*self, *vector],
            Box::new(move |g, need| {
                let gm = need[0].then(|| {
                    (0..batch)
                        .flat_map(|b| v.iter().map(move |vv| vv * g[b]).collect::<Vec<_>>())
                        .collect()
                });
                let gv = need[1].then(|| {
                    let mut gv = vec![0.0; c];
                    for b in 0..batch {
                        gv.iter_mut()
                            .zip(&m[b * c..(b + 1) * c])
                            .for_each(|(o, x)| *o += g[b] * x);
                    }
                    gv
                });
                vec![gm, gv]
            }),
        ))
    }

    /// Stacks `N` tensors of shape `[B]` into `[B, N]`.
    pub fn stack_columns(items: &[Var<'t>]) -> Result<Var<'t>> {
        let Some(first) = items.first() else {
            bail!(Dimension, "stack_columns of an empty list");
        };
        let batch = rank1(first, "stack_columns")?;
        let n = items.len();
        let mut out = vec![0.0; batch * n];
        for (i, it) in items.iter().enumerate() {
            if rank1(it, "stack_columns")? != batch {
                bail!(Dimension, "stack_columns: lengths differ");
            }
            for (b, v) in it.value().iter().enumerate() {
                out[b * n + i] = *v;
            }
        }
        Ok(first.tape.record(
            vec![batch, n],
            out,
            items,
            Box::new(move |g, need| {
                (0..n)
                    .map(|i| need[i].then(|| (0..batch).map(|b| g[b * n + i]).collect()))
                    .collect()
            }),
        ))
    }

    /// Attention scores over positions: `h [B, C, L] . p [C] -> [B, L]`.
    pub fn channel_dot(&self, vector: &Var<'t>) -> Result<Var<'t>> {
        let (batch, c, l) = rank3(self, "channel_dot")?;
        if rank1(vector, "channel_dot")? != c {
            bail!(Dimension, "channel_dot: {:?} with {:?}", self.shape(), vector.shape());
        }
        let (h, p) = (self.value(), vector.value());
        let mut out = vec![0.0; batch * l];
        for b in 0..batch {
            for ch in 0..c {
                let row = &h[(b * c + ch) * l..(b * c + ch + 1) * l];
                out[b * l..(b + 1) * l]
                    .iter_mut()
                    .zip(row)
                    .for_each(|(o, x)| *o += p[ch] * x);
            }
        }
        Ok(self.tape.record(
            vec![batch, l],
            out,
            &[*self, *vector],
            Box::new(move |g, need| {
                let gh = need[0].then(|| {
                    let mut gh = vec![0.0; batch * c * l];
                    for b in 0..batch {
                        for ch in 0..c {
                            gh[(b * c + ch) * l..(b * c + ch + 1) * l]
                                .iter_mut()
                                .zip(&g[b * l..(b + 1) * l])
                                .for_each(|(o, g)| *o = p[ch] * g);
                        }
                    }
                    gh
                });
                let gp = need[1].then(|| {
                    let mut gp = vec![0.0; c];
                    for b in 0..batch {
                        for (ch, o) in gp.iter_mut().enumerate() {
                            *o += h[(b * c + ch) * l..(b * c + ch + 1) * l]
                                .iter()
                                .zip(&g[b * l..(b + 1) * l])
                                .map(|(x, g)| x * g)
                                .sum::<f64>();
                        }
                    }
                    gp
                });
                vec![gh, gp]
            }),
        ))
    }

    /// Weighted pooling over positions: `h [B, C, L]`, `alpha [B, L] -> [B, C]`.
    pub fn sequence_pool(&self, alpha: &Var<'t>) -> Result<Var<'t>> {
        let (batch, c, l) = rank3(self, "sequence_pool")?;
        if alpha.shape() != [batch, l] {
            bail!(Dimension, "sequence_pool: {:?} with weights {:?}", self.shape(), alpha.shape());
        }
        let (h, a) = (self.value(), alpha.value());
        let mut out = vec![0.0; batch * c];
        for b in 0..batch {
            for ch in 0..c {
                out[b * c + ch] = h[(b * c + ch) * l..(b * c + ch + 1) * l]
                    .iter()
                    .zip(&a[b * l..(b + 1) * l])
                    .map(|(x, w)| x * w)
                    .sum();
            }
        }
        Ok(self.tape.record(
            vec![batch, c],
            out,
            &[*self, *alpha],
            Box::new(move |g, need| {
                let gh = need[0].then(|| {
                    let mut gh = vec![0.0; batch * c * l];
                    for b in 0..batch {
                        for ch in 0..c {
                            let gv = g[b * c + ch];
                            gh[(b * c + ch) * l..(b * c + ch + 1) * l]
                                .iter_mut()
                                .zip(&a[b * l..(b + 1) * l])
                                .for_each(|(o, w)| *o = gv * w);
                        }
                    }
                    gh
                });
                let ga = need[1].then(|| {
                    let mut ga = vec![0.0; batch * l];
                    for b in 0..batch {
                        for ch in 0..c {
                            let gv = g[b * c + ch];
                            ga[b * l..(b + 1) * l]
                                .iter_mut()
                                .zip(&h[(b * c + ch) * l..(b * c + ch + 1) * l])
                                .for_each(|(o, x)| *o += gv * x);
                        }
                    }
                    ga
                });
                vec![gh, ga]
            }),
        ))
    }

    /// Looks up rows of `table [V, C]` for `ids [batch, len]` and lays them
    /// out channels-first as `[batch, C, len]`. The padding row reads as zero
    /// and receives no gradient.
    pub fn embedding(
        table: &Var<'t>,
        ids: &[usize],
        batch: usize,
        len: usize,
        padding_idx: Option<usize>,
    ) -> Result<Var<'t>> {
        let (vocab, c) = rank2(table, "embedding")?;
        if ids.len() != batch * len {
            bail!(Dimension, "embedding: {} ids for [{}, {}]", ids.len(), batch, len);
        }
        if let Some(bad) = ids.iter().find(|&&i| i >= vocab) {
            bail!(Dimension, "embedding: id {} outside vocabulary of {}", bad, vocab);
        }
        let t = table.value();
        let mut out = vec![0.0; batch * c * len];
        for b in 0..batch {
            for pos in 0..len {
                let id = ids[b * len + pos];
                if Some(id) == padding_idx {
                    continue;
                }
                for ch in 0..c {
                    out[(b * c + ch) * len + pos] = t[id * c + ch];
                }
            }
        }
        let ids = ids.to_vec();
        Ok(table.tape.record(
            vec![batch, c, len],
            out,
            &[*table],
            Box::new(move |g, _| {
                let mut gt = vec![0.0; vocab * c];
                for b in 0..batch {
                    for pos in 0..len {
                        let id = ids[b * len + pos];
                        if Some(id) == padding_idx {
                            continue;
                        }
                        for ch in 0..c {
                            gt[id * c + ch] += g[(b * c + ch) * len + pos];
                        }
                    }
                }
                vec![Some(gt)]
            }),
        ))
    }

    /// Length-preserving 1D cross-correlation with symmetric zero padding of
    /// `(k - 1) * dilation / 2` per side. `kernel` is `[C_out, C_in, k]`.
    pub fn conv1d(
        &self,
        kernel: &Var<'t>,
        bias: Option<&Var<'t>>,
        dilation: usize,
    ) -> Result<Var<'t>> {
        let (batch, c_in, len) = rank3(self, "conv1d")?;
        let (c_out, k_in, k) = rank3(kernel, "conv1d")?;
        if k_in != c_in {
            bail!(Dimension, "conv1d: input has {} channels, kernel expects {}", c_in, k_in);
        }
        if k % 2 == 0 {
            bail!(Config, "conv1d: kernel size {} is even", k);
        }
        if dilation == 0 {
            bail!(Config, "conv1d: dilation must be at least 1");
        }
        if let Some(b) = bias {
            if rank1(b, "conv1d bias")? != c_out {
                bail!(Dimension, "conv1d: bias {:?} for {} outputs", b.shape(), c_out);
            }
        }
        let pad = (k - 1) * dilation / 2;
        let (x, w) = (self.value(), kernel.value());
        let mut out = vec![0.0; batch * c_out * len];
        if let Some(b) = bias {
            let bv = b.value();
            for bi in 0..batch {
                for co in 0..c_out {
                    out[(bi * c_out + co) * len..(bi * c_out + co + 1) * len].fill(bv[co]);
                }
            }
        }
        // Valid output range for a tap at offset `shift`.
        let span = move |t: usize| -> (isize, usize, usize) {
            let shift = (t * dilation) as isize - pad as isize;
            let lo = ((-shift).max(0) as usize).min(len);
            let hi = (len as isize - shift).clamp(0, len as isize) as usize;
            // A tap that falls entirely into the padding touches nothing.
            if hi <= lo {
                (0, 0, 0)
            } else {
                (shift, lo, hi)
            }
        };
        for bi in 0..batch {
            for co in 0..c_out {
                let o = &mut out[(bi * c_out + co) * len..(bi * c_out + co + 1) * len];
                for ci in 0..c_in {
                    let xr = &x[(bi * c_in + ci) * len..(bi * c_in + ci + 1) * len];
                    for t in 0..k {
                        let wv = w[(co * c_in + ci) * k + t];
                        let (shift, lo, hi) = span(t);
                        let src = &xr[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                        o[lo..hi].iter_mut().zip(src).for_each(|(o, x)| *o += wv * x);
                    }
                }
            }
        }
        let mut parents = vec![*self, *kernel];
        if let Some(b) = bias {
            parents.push(*b);
        }
        let has_bias = bias.is_some();
        Ok(self.tape.record(
            vec![batch, c_out, len],
            out,
            &parents,
            Box::new(move |g, need| {
                let gx = need[0].then(|| {
                    let mut gx = vec![0.0; batch * c_in * len];
                    for bi in 0..batch {
                        for co in 0..c_out {
                            let gr = &g[(bi * c_out + co) * len..(bi * c_out + co + 1) * len];
                            for ci in 0..c_in {
                                let dst = &mut gx[(bi * c_in + ci) * len..(bi * c_in + ci + 1) * len];
                                for t in 0..k {
                                    let wv = w[(co * c_in + ci) * k + t];
                                    let (shift, lo, hi) = span(t);
                                    dst[(lo as isize + shift) as usize..(hi as isize + shift) as usize]
                                        .iter_mut()
                                        .zip(&gr[lo..hi])
                                        .for_each(|(d, g)| *d += wv * g);
                                }
                            }
                        }
                    }
                    gx
                });
                let gw = need[1].then(|| {
                    let mut gw = vec![0.0; c_out * c_in * k];
                    for bi in 0..batch {
                        for co in 0..c_out {
                            let gr = &g[(bi * c_out + co) * len..(bi * c_out + co + 1) * len];
                            for ci in 0..c_in {
                                let xr = &x[(bi * c_in + ci) * len..(bi * c_in + ci + 1) * len];
                                for t in 0..k {
                                    let (shift, lo, hi) = span(t);
                                    let src = &xr[(lo as isize + shift) as usize
                                        ..(hi as isize + shift) as usize];
                                    gw[(co * c_in + ci) * k + t] += gr[lo..hi]
                                        .iter()
                                        .zip(src)
                                        .map(|(g, x)| g * x)
                                        .sum::<f64>();
                                }
                            }
                        }
                    }
                    gw
                });
                let mut grads = vec![gx, gw];
                if has_bias {
                    grads.push(need[2].then(|| {
                        let mut gb = vec![0.0; c_out];
                        for bi in 0..batch {
                            for (co, o) in gb.iter_mut().enumerate() {
                                *o += g[(bi * c_out + co) * len..(bi * c_out + co + 1) * len]
                                    .iter()
                                    .sum::<f64>();
                            }
                        }
                        gb
                    }));
                }
                grads
            }),
        ))
    }

    /// Length-preserving pooling with window 3. Out-of-range positions are
    /// skipped: max ignores them and avg divides by the in-range count.
    pub fn pool1d(&self, kind: PoolKind) -> Result<Var<'t>> {
        const K: usize = 3;
        let (batch, c, len) = rank3(self, "pool1d")?;
        let x = self.value();
        let rows = batch * c;
        let half = (K - 1) / 2;
        let window = move |pos: usize| (pos.saturating_sub(half), (pos + half + 1).min(len));
        let mut out = vec![0.0; x.len()];
        let mut arg = vec![0usize; if kind == PoolKind::Max { x.len() } else { 0 }];
        for r in 0..rows {
            let xr = &x[r * len..(r + 1) * len];
            for pos in 0..len {
                let (lo, hi) = window(pos);
                match kind {
                    PoolKind::Max => {
                        let mut best = lo;
                        for q in lo + 1..hi {
                            if xr[q] > xr[best] {
                                best = q;
                            }
                        }
                        out[r * len + pos] = xr[best];
                        arg[r * len + pos] = best;
                    }
                    PoolKind::Avg => {
                        out[r * len + pos] = xr[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
                    }
                }
            }
        }
        Ok(self.unary(out, move |g| {
            let mut gx = vec![0.0; g.len()];
            for r in 0..rows {
                for pos in 0..len {
                    let gv = g[r * len + pos];
                    match kind {
                        PoolKind::Max => gx[r * len + arg[r * len + pos]] += gv,
                        PoolKind::Avg => {
                            let (lo, hi) = window(pos);
                            let share = gv / (hi - lo) as f64;
                            gx[r * len + lo..r * len + hi].iter_mut().for_each(|o| *o += share);
                        }
                    }
                }
            }
            gx
        }))
    }

    /// Per-channel normalization of `[B, C, L]`. Training mode uses batch
    /// statistics and updates `stats` with momentum 0.1; evaluation mode
    /// uses `stats` as is.
    pub fn batch_norm(
        &self,
        gamma: &Var<'t>,
        beta: &Var<'t>,
        stats: &mut BatchNormStats,
        train: bool,
    ) -> Result<Var<'t>> {
        let (batch, c, len) = rank3(self, "batch_norm")?;
        if rank1(gamma, "batch_norm")? != c || rank1(beta, "batch_norm")? != c {
            bail!(Dimension, "batch_norm: affine parameters must have {} entries", c);
        }
        if stats.mean.len() != c || stats.var.len() != c {
            bail!(Dimension, "batch_norm: running statistics sized for another layer");
        }
        let count = batch * len;
        if train && count < 2 {
            bail!(DegenerateBatch, "batch norm needs at least two values per channel, got {}", count);
        }
        let (x, gm, bt) = (self.value(), gamma.value(), beta.value());
        let mut mean = vec![0.0; c];
        let mut inv_std = vec![0.0; c];
        if train {
            for ch in 0..c {
                let mut s = 0.0;
                for b in 0..batch {
                    s += x[(b * c + ch) * len..(b * c + ch + 1) * len].iter().sum::<f64>();
                }
                let mu = s / count as f64;
                let mut ss = 0.0;
                for b in 0..batch {
                    ss += x[(b * c + ch) * len..(b * c + ch + 1) * len]
                        .iter()
                        .map(|v| (v - mu) * (v - mu))
                        .sum::<f64>();
                }
                let var = ss / count as f64;
                mean[ch] = mu;
                inv_std[ch] = 1.0 / (var + BN_EPS).sqrt();
                let unbiased = ss / (count - 1) as f64;
                stats.mean[ch] = (1.0 - BN_MOMENTUM) * stats.mean[ch] + BN_MOMENTUM * mu;
                stats.var[ch] = (1.0 - BN_MOMENTUM) * stats.var[ch] + BN_MOMENTUM * unbiased;
            }
        } else {
            for ch in 0..c {
                mean[ch] = stats.mean[ch];
                inv_std[ch] = 1.0 / (stats.var[ch] + BN_EPS).sqrt();
            }
        }
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for b in 0..batch {
            for ch in 0..c {
                let base = (b * c + ch) * len;
                for i in base..base + len {
                    xhat[i] = (x[i] - mean[ch]) * inv_std[ch];
                    out[i] = gm[ch] * xhat[i] + bt[ch];
                }
            }
        }
        Ok(self.tape.record(
            vec![batch, c, len],
            out,
            &[*self, *gamma, *beta],
            Box::new(move |g, need| {
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for b in 0..batch {
                    for ch in 0..c {
                        let base = (b * c + ch) * len;
                        for i in base..base + len {
                            sum_g[ch] += g[i];
                            sum_gx[ch] += g[i] * xhat[i];
                        }
                    }
                }
                let gx = need[0].then(|| {
                    let mut gx = vec![0.0; g.len()];
                    let n = count as f64;
                    for b in 0..batch {
                        for ch in 0..c {
                            let base = (b * c + ch) * len;
                            let scale = gm[ch] * inv_std[ch];
                            for i in base..base + len {
                                gx[i] = if train {
                                    scale * (g[i] - sum_g[ch] / n - xhat[i] * sum_gx[ch] / n)
                                } else {
                                    scale * g[i]
                                };
                            }
                        }
                    }
                    gx
                });
                vec![gx, need[1].then(|| sum_gx.clone()), need[2].then(|| sum_g.clone())]
            }),
        ))
    }

    /// Mean over rows of `row_weight_b * (-Σ_c target_bc * log_softmax(logits)_bc)`.
    ///
    /// Each target row must sum to one within 1e-6.
    pub fn cross_entropy(
        &self,
        target: &[f64],
        row_weights: Option<&[f64]>,
    ) -> Result<Var<'t>> {
        let (batch, n) = rank2(self, "cross_entropy")?;
        if batch == 0 {
            bail!(Validation, "cross entropy over an empty batch");
        }
        if target.len() != batch * n {
            bail!(Dimension, "cross_entropy: target has {} values for [{}, {}]", target.len(), batch, n);
        }
        if let Some(w) = row_weights {
            if w.len() != batch {
                bail!(Dimension, "cross_entropy: {} row weights for {} rows", w.len(), batch);
            }
        }
        for (r, row) in target.chunks(n).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 || row.iter().any(|v| *v < 0.0) {
                bail!(Validation, "target row {} is not a distribution (sum {})", r, s);
            }
        }
        let z = self.value();
        let weights: Vec<f64> = row_weights.map_or_else(|| vec![1.0; batch], <[f64]>::to_vec);
        let mut probs = vec![0.0; batch * n];
        let mut total = 0.0;
        for r in 0..batch {
            let zr = &z[r * n..(r + 1) * n];
            let lse = log_sum_exp(zr);
            let mut loss = 0.0;
            for c in 0..n {
                let lp = zr[c] - lse;
                probs[r * n + c] = lp.exp();
                if target[r * n + c] != 0.0 {
                    loss -= target[r * n + c] * lp;
                }
            }
            total += weights[r] * loss;
        }
        let target = target.to_vec();
        Ok(self.tape.record(
            Vec::new(),
            vec![total / batch as f64],
            &[*self],
            Box::new(move |g, _| {
                let scale = g[0] / batch as f64;
                let mut gz = vec![0.0; batch * n];
                for r in 0..batch {
                    let mass: f64 = target[r * n..(r + 1) * n].iter().sum();
                    for c in 0..n {
                        gz[r * n + c] =
                            scale * weights[r] * (probs[r * n + c] * mass - target[r * n + c]);
                    }
                }
                vec![Some(gz)]
            }),
        ))
    }

    /// Mean cross entropy of softmax(logits) against target distributions.
    pub fn softmax_xent(&self, target: &[f64]) -> Result<Var<'t>> {
        self.cross_entropy(target, None)
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate() {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    fn approx(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    fn seq<'a>(tape: &'a Tape, v: &[f64]) -> Var<'a> {
        tape.constant(vec![1, 1, v.len()], v.to_vec()).unwrap()
    }

    /// Direct loop over the definition with explicit zero padding.
    fn conv_oracle(x: &[f64], w: &[f64], dilation: usize) -> Vec<f64> {
        let k = w.len();
        let pad = ((k - 1) * dilation / 2) as isize;
        (0..x.len() as isize)
            .map(|l| {
                (0..k)
                    .map(|t| {
                        let src = l + (t * dilation) as isize - pad;
                        if src < 0 || src >= x.len() as isize {
                            0.0
                        } else {
                            w[t] * x[src as usize]
                        }
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn conv_examples() {
        let tape = Tape::new();
        let x = seq(&tape, &[1.0, 2.0, 3.0, 4.0]);
        let w = tape.constant(vec![1, 1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        let y = x.conv1d(&w, None, 1).unwrap();
        assert_eq!(conv_oracle(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 1.0], 1), vec![3.0, 6.0, 9.0, 7.0]);
        assert_eq!(y.to_vec(), vec![3.0, 6.0, 9.0, 7.0]);

        let ident = tape.constant(vec![1, 1, 3], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(x.conv1d(&ident, None, 1).unwrap().to_vec(), vec![1.0, 2.0, 3.0, 4.0]);

        let zeros = seq(&tape, &[0.0; 5]);
        let w5 = tape.constant(vec![1, 1, 5], vec![0.3, -1.0, 2.0, 0.5, 7.0]).unwrap();
        assert!(zeros.conv1d(&w5, None, 2).unwrap().to_vec().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn conv_matches_oracle_with_dilation() {
        let xs: Vec<f64> = (0..9).map(|i| (i as f64 * 0.7).sin()).collect();
        for &(k, d) in &[(3, 1), (5, 1), (7, 1), (3, 2), (5, 2), (7, 2)] {
            let w: Vec<f64> = (0..k).map(|i| 0.1 * i as f64 - 0.2).collect();
            let tape = Tape::new();
            let x = seq(&tape, &xs);
            let wv = tape.constant(vec![1, 1, k], w.clone()).unwrap();
            let y = x.conv1d(&wv, None, d).unwrap();
            assert_eq!(y.shape(), vec![1, 1, 9]);
            approx(&y.to_vec(), &conv_oracle(&xs, &w, d), 1e-12);
        }
    }

    #[test]
    fn conv_wider_than_the_sequence() {
        for len in 1..6 {
            let xs: Vec<f64> = (0..len).map(|i| 1.0 + i as f64).collect();
            let w: Vec<f64> = (0..7).map(|i| 0.5 - 0.1 * i as f64).collect();
            let tape = Tape::new();
            let x = tape.leaf(&Tensor::param(vec![1, 1, len], xs.clone()));
            let wv = tape.constant(vec![1, 1, 7], w.clone()).unwrap();
            let y = x.conv1d(&wv, None, 2).unwrap();
            approx(&y.to_vec(), &conv_oracle(&xs, &w, 2), 1e-12);
            let g = tape.backward(&y.sum()).unwrap();
            assert_eq!(g.get(&x).unwrap().len(), len);
        }
    }

    #[test]
    fn conv_rejects_even_kernel_and_channel_mismatch() {
        let tape = Tape::new();
        let x = seq(&tape, &[1.0, 2.0]);
        let w = tape.constant(vec![1, 1, 2], vec![1.0, 1.0]).unwrap();
        assert!(matches!(x.conv1d(&w, None, 1), Err(crate::Error::Config(_))));
        let w2 = tape.constant(vec![1, 2, 3], vec![0.0; 6]).unwrap();
        assert!(matches!(x.conv1d(&w2, None, 1), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn pool_examples() {
        let tape = Tape::new();
        let x = seq(&tape, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(x.pool1d(PoolKind::Max).unwrap().to_vec(), vec![2.0, 3.0, 4.0, 4.0]);
        approx(&x.pool1d(PoolKind::Avg).unwrap().to_vec(), &[1.5, 2.0, 3.0, 3.5], 1e-15);
        let c = seq(&tape, &[2.5; 6]);
        assert_eq!(c.pool1d(PoolKind::Max).unwrap().to_vec(), vec![2.5; 6]);
        approx(&c.pool1d(PoolKind::Avg).unwrap().to_vec(), &[2.5; 6], 1e-15);
    }

    #[test]
    fn max_pool_tie_sends_gradient_to_lowest_index() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::param(vec![1, 1, 3], vec![1.0, 1.0, 0.0]));
        let y = x.pool1d(PoolKind::Max).unwrap().sum();
        let g = tape.backward(&y).unwrap();
        // windows: {0,1} -> 0, {0,1,2} -> 0, {1,2} -> 1
        assert_eq!(g.get(&x).unwrap(), &[2.0, 1.0, 0.0]);
    }

    #[test]
    fn batch_norm_examples() {
        let tape = Tape::new();
        let gamma = tape.constant(vec![1], vec![1.0]).unwrap();
        let beta = tape.constant(vec![1], vec![0.0]).unwrap();
        let mut stats = BatchNormStats::new(1);
        let x = seq(&tape, &[1.0, 2.0, 3.0, 4.0]);
        let y = x.batch_norm(&gamma, &beta, &mut stats, true).unwrap().to_vec();
        let denom = (1.25f64 + 1e-5).sqrt();
        approx(&y, &[-1.5 / denom, -0.5 / denom, 0.5 / denom, 1.5 / denom], 1e-12);
        let mean: f64 = y.iter().sum::<f64>() / 4.0;
        let var: f64 = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-4);
        approx(&stats.mean, &[0.25], 1e-12);
        approx(&stats.var, &[0.9 + 0.1 * 5.0 / 3.0], 1e-12);

        // Already standardized input is a fixed point (up to epsilon).
        let s = [-1.0, 1.0, -1.0, 1.0];
        let z = seq(&tape, &s).batch_norm(&gamma, &beta, &mut stats, true).unwrap();
        approx(&z.to_vec(), &s, 1e-5);

        let g0 = tape.constant(vec![1], vec![0.0]).unwrap();
        let b3 = tape.constant(vec![1], vec![3.0]).unwrap();
        let w = seq(&tape, &[5.0, -2.0, 0.1]).batch_norm(&g0, &b3, &mut stats, true).unwrap();
        assert_eq!(w.to_vec(), vec![3.0; 3]);
    }

    #[test]
    fn batch_norm_degenerate_batch() {
        let tape = Tape::new();
        let gamma = tape.constant(vec![1], vec![1.0]).unwrap();
        let beta = tape.constant(vec![1], vec![0.0]).unwrap();
        let mut stats = BatchNormStats::new(1);
        let x = seq(&tape, &[1.0]);
        assert!(matches!(
            x.batch_norm(&gamma, &beta, &mut stats, true),
            Err(crate::Error::DegenerateBatch(_))
        ));
        assert!(x.batch_norm(&gamma, &beta, &mut stats, false).is_ok());
    }

    #[test]
    fn softmax_xent_examples() {
        let tape = Tape::new();
        let uniform = tape.constant(vec![1, 4], vec![0.3; 4]).unwrap();
        let v = uniform.softmax_xent(&[0.0, 0.0, 1.0, 0.0]).unwrap().item();
        assert!((v - 4f64.ln()).abs() < 1e-12);

        let sat = tape.constant(vec![1, 2], vec![10.0, -10.0]).unwrap();
        assert!(sat.softmax_xent(&[1.0, 0.0]).unwrap().item() <= 1e-4);

        // -Σ t_c (z_c - ln Σ exp z)
        let z = [1.0f64, 2.0, 3.0];
        let t = [0.2, 0.3, 0.5];
        let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
        let oracle: f64 = -z.iter().zip(&t).map(|(z, t)| t * (z - lse)).sum::<f64>();
        let logits = tape.constant(vec![1, 3], z.to_vec()).unwrap();
        assert!((logits.softmax_xent(&t).unwrap().item() - oracle).abs() < 1e-12);
        assert!((oracle - 1.10760596444438).abs() < 1e-12);

        assert!(matches!(
            logits.softmax_xent(&[0.2, 0.3, 0.4]),
            Err(crate::Error::Validation(_))
        ));
    }

    #[test]
    fn primitive_examples() {
        let tape = Tape::new();
        let x = tape.constant(vec![3], vec![-1.0, -0.5, 2.0]).unwrap();
        assert_eq!(x.scale(-1.0).scale(-1.0).relu().to_vec(), vec![0.0, 0.0, 2.0]);

        let a = tape.constant(vec![2], vec![1.0, 2.0]).unwrap();
        let b = tape.constant(vec![2], vec![3.0, 4.0]).unwrap();
        let sel = tape.constant(vec![2], vec![1.0, 0.0]).unwrap();
        assert_eq!(Var::weighted_sum(&sel, &[a, b]).unwrap().to_vec(), vec![1.0, 2.0]);

        let m1 = tape.constant(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m2 = tape.constant(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        // [[1*5+2*7, 1*6+2*8], [3*5+4*7, 3*6+4*8]]
        assert_eq!(m1.matmul(&m2).unwrap().to_vec(), vec![19.0, 22.0, 43.0, 50.0]);
        assert!(m1.matmul(&a).is_err());
    }

    #[test]
    fn weighted_sum_gradient_is_proportional_to_weights() {
        let tape = Tape::new();
        let w = tape.constant(vec![3], vec![0.25, 0.0, 2.0]).unwrap();
        let items: Vec<_> = (0..3)
            .map(|i| tape.leaf(&Tensor::param(vec![2], vec![i as f64, 1.0])))
            .collect();
        let y = Var::weighted_sum(&w, &items).unwrap().sum();
        let g = tape.backward(&y).unwrap();
        assert_eq!(g.get(&items[0]).unwrap(), &[0.25, 0.25]);
        assert!(g.get(&items[1]).is_none());
        assert_eq!(g.get(&items[2]).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn straight_through_forward_and_backward() {
        let tape = Tape::new();
        let y = tape.leaf(&Tensor::param(vec![3], vec![0.2, 0.5, 0.3]));
        let h = y.straight_through().unwrap();
        assert_eq!(h.to_vec(), vec![0.0, 1.0, 0.0]);
        let up = tape.constant(vec![3], vec![0.7, -1.3, 2.0]).unwrap();
        let loss = h.mul(&up).unwrap().sum();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.get(&y).unwrap(), &[0.7, -1.3, 2.0]);

        let tape = Tape::new();
        let tie = tape.constant(vec![2], vec![0.5, 0.5]).unwrap();
        assert_eq!(tie.straight_through().unwrap().to_vec(), vec![1.0, 0.0]);
    }

    #[test]
    fn backward_accumulates_shared_inputs_and_runs_once() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::param(vec![2], vec![1.0, 2.0]));
        let y = x.mul(&x).unwrap().add(&x).unwrap().sum();
        let g = tape.backward(&y).unwrap();
        assert_eq!(g.get(&x).unwrap(), &[3.0, 5.0]);
        assert!(tape.backward(&y).is_err());
    }

    #[test]
    fn embedding_layout_and_padding() {
        let tape = Tape::new();
        let table = tape.leaf(&Tensor::param(vec![3, 2], vec![9.0, 9.0, 1.0, 2.0, 3.0, 4.0]));
        let e = Var::embedding(&table, &[1, 2, 0], 1, 3, Some(0)).unwrap();
        assert_eq!(e.shape(), vec![1, 2, 3]);
        assert_eq!(e.to_vec(), vec![1.0, 3.0, 0.0, 2.0, 4.0, 0.0]);
        let g = tape.backward(&e.sum()).unwrap();
        assert_eq!(g.get(&table).unwrap(), &[0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    }
}
