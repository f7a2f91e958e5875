//! Causal self-attention decoder with hand-derived backpropagation.
//!
//! Pre-layer-norm blocks, learned positional embeddings and an output
//! projection tied to the item embedding table. All parameters live in one
//! flat buffer so the optimizer, checkpoints and gradient diagnostics can
//! treat them uniformly. The network is generic over the float type: `f32`
//! for training, `f64` for finite-difference checks.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, Range, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::ItemId;

pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("representable constant")
}

const LN_EPS: f64 = 1e-5;

/// Architectural dimensions. `n_items` counts real items; the embedding
/// table has one extra padding row at index 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub n_items: usize,
    pub hidden: usize,
    pub heads: usize,
    pub inner: usize,
    pub layers: usize,
    pub max_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct LayerLayout {
    ln1_g: Range<usize>,
    ln1_b: Range<usize>,
    wq: Range<usize>,
    bq: Range<usize>,
    wk: Range<usize>,
    bk: Range<usize>,
    wv: Range<usize>,
    bv: Range<usize>,
    wo: Range<usize>,
    bo: Range<usize>,
    ln2_g: Range<usize>,
    ln2_b: Range<usize>,
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
}

/// Offsets of every tensor inside the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    item_emb: Range<usize>,
    pos_emb: Range<usize>,
    layers: Vec<LayerLayout>,
    lnf_g: Range<usize>,
    lnf_b: Range<usize>,
    total: usize,
}

impl Layout {
    fn new(s: &Shape) -> Self {
        let mut off = 0;
        let mut take = |n: usize| {
            let r = off..off + n;
            off += n;
            r
        };
        let d = s.hidden;
        let item_emb = take((s.n_items + 1) * d);
        let pos_emb = take(s.max_len * d);
        let layers = (0..s.layers)
            .map(|_| LayerLayout {
                ln1_g: take(d),
                ln1_b: take(d),
                wq: take(d * d),
                bq: take(d),
                wk: take(d * d),
                bk: take(d),
                wv: take(d * d),
                bv: take(d),
                wo: take(d * d),
                bo: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
                w1: take(d * s.inner),
                b1: take(s.inner),
                w2: take(s.inner * d),
                b2: take(d),
            })
            .collect();
        let lnf_g = take(d);
        let lnf_b = take(d);
        Self {
            item_emb,
            pos_emb,
            layers,
            lnf_g,
            lnf_b,
            total: off,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Range of the item embedding table (padding row first).
    pub fn item_embedding(&self) -> Range<usize> {
        self.item_emb.clone()
    }

    pub fn positional_embedding(&self) -> Range<usize> {
        self.pos_emb.clone()
    }

    /// Ranges of layer-norm gains (initialised to one rather than drawn).
    fn gains(&self) -> Vec<Range<usize>> {
        let mut v: Vec<_> = self
            .layers
            .iter()
            .flat_map(|l| [l.ln1_g.clone(), l.ln2_g.clone()])
            .collect();
        v.push(self.lnf_g.clone());
        v
    }

    fn biases(&self) -> Vec<Range<usize>> {
        let mut v: Vec<_> = self
            .layers
            .iter()
            .flat_map(|l| {
                [
                    l.ln1_b.clone(),
                    l.bq.clone(),
                    l.bk.clone(),
                    l.bv.clone(),
                    l.bo.clone(),
                    l.ln2_b.clone(),
                    l.b1.clone(),
                    l.b2.clone(),
                ]
            })
            .collect();
        v.push(self.lnf_b.clone());
        v
    }
}

/// One training sequence: input tokens and, per position, the item to
/// predict there (`ItemId::PADDING` = no target at that position).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainSeq {
    pub tokens: Vec<ItemId>,
    pub targets: Vec<ItemId>,
}

impl TrainSeq {
    /// Next-item targets: `tokens = items[..n-1]`, `targets = items[1..]`.
    pub fn next_item(items: &[ItemId]) -> Self {
        let n = items.len().saturating_sub(1);
        Self {
            tokens: items[..n].to_vec(),
            targets: items[1..].to_vec(),
        }
    }

    pub fn n_targets(&self) -> usize {
        self.targets.iter().filter(|t| **t != ItemId::PADDING).count()
    }

    /// Keeps the most recent `max_len` positions.
    pub fn truncated(mut self, max_len: usize) -> Self {
        if self.tokens.len() > max_len {
            let cut = self.tokens.len() - max_len;
            self.tokens.drain(..cut);
            self.targets.drain(..cut);
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    shape: Shape,
    layout: Layout,
    params: Vec<T>,
}

struct LnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

struct LayerCache<T> {
    ln1: LnCache<T>,
    a1: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    att: Vec<T>,
    ctx: Vec<T>,
    mask1: Option<Vec<T>>,
    ln2: LnCache<T>,
    a2: Vec<T>,
    u: Vec<T>,
    g: Vec<T>,
    mask2: Option<Vec<T>>,
}

struct Cache<T> {
    mask0: Option<Vec<T>>,
    layers: Vec<LayerCache<T>>,
    lnf: LnCache<T>,
}

/// Training-time dropout: a rate and the generator that draws masks.
pub struct Dropout<'a, R: Rng> {
    pub rate: f64,
    pub rng: &'a mut R,
}

impl<R: Rng> Dropout<'_, R> {
    fn mask<T: Real>(&mut self, n: usize) -> Option<Vec<T>> {
        if self.rate <= 0.0 {
            return None;
        }
        let keep = lit::<T>(1.0 / (1.0 - self.rate));
        Some(
            (0..n)
                .map(|_| {
                    if self.rng.random::<f64>() < self.rate {
                        T::zero()
                    } else {
                        keep
                    }
                })
                .collect(),
        )
    }
}

// ---------------------------------------------------------------------------
// dense helpers, all row-major

/// `out[r, :] = x[r, :] · w + b`, with `w` stored `n_in × n_out`.
fn linear<T: Real>(x: &[T], rows: usize, n_in: usize, w: &[T], b: &[T], n_out: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * n_out);
    for r in 0..rows {
        out.extend_from_slice(b);
        let o = &mut out[r * n_out..(r + 1) * n_out];
        let xr = &x[r * n_in..(r + 1) * n_in];
        for (k, &xv) in xr.iter().enumerate() {
            let wk = &w[k * n_out..(k + 1) * n_out];
            for (oj, &wj) in o.iter_mut().zip(wk) {
                *oj += xv * wj;
            }
        }
    }
    out
}

/// `dw += xᵀ · dy`.
fn acc_weight_grad<T: Real>(x: &[T], dy: &[T], rows: usize, n_in: usize, n_out: usize, dw: &mut [T]) {
    for r in 0..rows {
        let xr = &x[r * n_in..(r + 1) * n_in];
        let dyr = &dy[r * n_out..(r + 1) * n_out];
        for (k, &xv) in xr.iter().enumerate() {
            if xv == T::zero() {
                continue;
            }
            let dwk = &mut dw[k * n_out..(k + 1) * n_out];
            for (g, &d) in dwk.iter_mut().zip(dyr) {
                *g += xv * d;
            }
        }
    }
}

fn acc_bias_grad<T: Real>(dy: &[T], rows: usize, n_out: usize, db: &mut [T]) {
    for r in 0..rows {
        for (g, &d) in db.iter_mut().zip(&dy[r * n_out..(r + 1) * n_out]) {
            *g += d;
        }
    }
}

/// `dx += dy · wᵀ`.
fn acc_input_grad<T: Real>(dy: &[T], w: &[T], rows: usize, n_in: usize, n_out: usize, dx: &mut [T]) {
    for r in 0..rows {
        let dyr = &dy[r * n_out..(r + 1) * n_out];
        let dxr = &mut dx[r * n_in..(r + 1) * n_in];
        for (k, g) in dxr.iter_mut().enumerate() {
            *g += dot(dyr, &w[k * n_out..(k + 1) * n_out]);
        }
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

fn layer_norm<T: Real>(x: &[T], rows: usize, d: usize, g: &[T], b: &[T]) -> (Vec<T>, LnCache<T>) {
    let mut y = vec![T::zero(); rows * d];
    let mut xhat = vec![T::zero(); rows * d];
    let mut rstd = vec![T::zero(); rows];
    let n = lit::<T>(d as f64);
    let eps = lit::<T>(LN_EPS);
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().copied().sum::<T>() / n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let xh = (xr[j] - mean) * rs;
            xhat[r * d + j] = xh;
            y[r * d + j] = xh * g[j] + b[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Returns `dx`; accumulates gain/bias gradients.
fn layer_norm_backward<T: Real>(
    dy: &[T],
    cache: &LnCache<T>,
    rows: usize,
    d: usize,
    g: &[T],
    dg: &mut [T],
    db: &mut [T],
) -> Vec<T> {
    let mut dx = vec![T::zero(); rows * d];
    let n = lit::<T>(d as f64);
    let mut dxhat = vec![T::zero(); d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        for j in 0..d {
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
            dxhat[j] = dyr[j] * g[j];
        }
        let mean_dxhat = dxhat.iter().copied().sum::<T>() / n;
        let mean_dxhat_xhat = dot(&dxhat, xh) / n;
        let rs = cache.rstd[r];
        for j in 0..d {
            dx[r * d + j] = rs * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

fn gelu<T: Real>(u: T) -> T {
    let c = lit::<T>((2.0 / std::f64::consts::PI).sqrt());
    let a = lit::<T>(0.044715);
    let half = lit::<T>(0.5);
    half * u * (T::one() + (c * (u + a * u * u * u)).tanh())
}

fn gelu_grad<T: Real>(u: T) -> T {
    let c = lit::<T>((2.0 / std::f64::consts::PI).sqrt());
    let a = lit::<T>(0.044715);
    let half = lit::<T>(0.5);
    let t = (c * (u + a * u * u * u)).tanh();
    half * (T::one() + t) + half * u * (T::one() - t * t) * c * (T::one() + lit::<T>(3.0) * a * u * u)
}

fn apply_mask<T: Real>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (v, &k) in x.iter_mut().zip(m) {
            *v *= k;
        }
    }
}

/// In-place log-softmax of a logit row, returning `ln Σ exp`.
pub(crate) fn log_softmax_in_place(row: &mut [f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    for v in row.iter_mut() {
        *v -= lse;
    }
    lse
}

// ---------------------------------------------------------------------------

impl<T: Real> Network<T> {
    pub fn zeros(shape: Shape) -> Self {
        let layout = Layout::new(&shape);
        Self {
            params: vec![T::zero(); layout.total],
            layout,
            shape,
        }
    }

    /// Normal(0, `std`) weights and embeddings, unit layer-norm gains, zero biases.
    pub fn random<R: Rng>(shape: Shape, std: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(shape);
        let normal = Normal::new(0.0, std).expect("valid std");
        for p in net.params.iter_mut() {
            *p = lit(normal.sample(rng));
        }
        for r in net.layout.gains() {
            net.params[r].iter_mut().for_each(|p| *p = T::one());
        }
        for r in net.layout.biases() {
            net.params[r].iter_mut().for_each(|p| *p = T::zero());
        }
        let d = shape.hidden;
        net.params[0..d].iter_mut().for_each(|p| *p = T::zero());
        net
    }

    pub fn from_params(shape: Shape, params: Vec<T>) -> Option<Self> {
        let layout = Layout::new(&shape);
        (params.len() == layout.total).then_some(Self {
            shape,
            layout,
            params,
        })
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            shape: self.shape,
            layout: self.layout.clone(),
            params: self
                .params
                .iter()
                .map(|p| U::from_f64(p.to_f64().unwrap_or(0.0)).unwrap_or_else(U::zero))
                .collect(),
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Embedding row of one item.
    pub fn item_embedding(&self, item: ItemId) -> &[T] {
        let d = self.shape.hidden;
        let start = self.layout.item_emb.start + item.index() * d;
        &self.params[start..start + d]
    }

    fn p(&self, r: &Range<usize>) -> &[T] {
        &self.params[r.clone()]
    }

    fn forward_cached<R: Rng>(
        &self,
        tokens: &[ItemId],
        mut dropout: Option<&mut Dropout<'_, R>>,
    ) -> (Vec<T>, Cache<T>) {
        let s = &self.shape;
        let (l, d, dh) = (tokens.len(), s.hidden, s.hidden / s.heads);
        assert!(l >= 1 && l <= s.max_len, "sequence length {l} outside 1..={}", s.max_len);
        let emb = self.p(&self.layout.item_emb);
        let pos = self.p(&self.layout.pos_emb);
        let mut h = vec![T::zero(); l * d];
        for (t, tok) in tokens.iter().enumerate() {
            let e = &emb[tok.index() * d..(tok.index() + 1) * d];
            let pe = &pos[t * d..(t + 1) * d];
            for j in 0..d {
                h[t * d + j] = e[j] + pe[j];
            }
        }
        let mask0 = dropout.as_mut().and_then(|dr| dr.mask(l * d));
        apply_mask(&mut h, &mask0);

        let scale = lit::<T>(1.0 / (dh as f64).sqrt());
        let mut layers = Vec::with_capacity(s.layers);
        for lay in &self.layout.layers {
            let (a1, ln1) = layer_norm(&h, l, d, self.p(&lay.ln1_g), self.p(&lay.ln1_b));
            let q = linear(&a1, l, d, self.p(&lay.wq), self.p(&lay.bq), d);
            let k = linear(&a1, l, d, self.p(&lay.wk), self.p(&lay.bk), d);
            let v = linear(&a1, l, d, self.p(&lay.wv), self.p(&lay.bv), d);
            let mut att = vec![T::zero(); s.heads * l * l];
            let mut ctx = vec![T::zero(); l * d];
            for hd in 0..s.heads {
                let c0 = hd * dh;
                for i in 0..l {
                    let qi = &q[i * d + c0..i * d + c0 + dh];
                    let row = &mut att[(hd * l + i) * l..(hd * l + i) * l + l];
                    let mut max = T::neg_infinity();
                    for j in 0..=i {
                        let sij = dot(qi, &k[j * d + c0..j * d + c0 + dh]) * scale;
                        row[j] = sij;
                        if sij > max {
                            max = sij;
                        }
                    }
                    let mut z = T::zero();
                    for rj in row.iter_mut().take(i + 1) {
                        *rj = (*rj - max).exp();
                        z += *rj;
                    }
                    for rj in row.iter_mut().take(i + 1) {
                        *rj /= z;
                    }
                    let ci = &mut ctx[i * d + c0..i * d + c0 + dh];
                    for j in 0..=i {
                        let pij = row[j];
                        for (c, &vv) in ci.iter_mut().zip(&v[j * d + c0..j * d + c0 + dh]) {
                            *c += pij * vv;
                        }
                    }
                }
            }
            let mut o = linear(&ctx, l, d, self.p(&lay.wo), self.p(&lay.bo), d);
            let mask1 = dropout.as_mut().and_then(|dr| dr.mask(l * d));
            apply_mask(&mut o, &mask1);
            for (hv, ov) in h.iter_mut().zip(&o) {
                *hv += *ov;
            }

            let (a2, ln2) = layer_norm(&h, l, d, self.p(&lay.ln2_g), self.p(&lay.ln2_b));
            let u = linear(&a2, l, d, self.p(&lay.w1), self.p(&lay.b1), s.inner);
            let g: Vec<T> = u.iter().map(|&x| gelu(x)).collect();
            let mut f = linear(&g, l, s.inner, self.p(&lay.w2), self.p(&lay.b2), d);
            let mask2 = dropout.as_mut().and_then(|dr| dr.mask(l * d));
            apply_mask(&mut f, &mask2);
            for (hv, fv) in h.iter_mut().zip(&f) {
                *hv += *fv;
            }
            layers.push(LayerCache {
                ln1,
                a1,
                q,
                k,
                v,
                att,
                ctx,
                mask1,
                ln2,
                a2,
                u,
                g,
                mask2,
            });
        }
        let (z, lnf) = layer_norm(&h, l, d, self.p(&self.layout.lnf_g), self.p(&self.layout.lnf_b));
        (z, Cache { mask0, layers, lnf })
    }

    /// Final hidden states (`len × hidden`) without dropout.
    pub fn hidden_states(&self, tokens: &[ItemId]) -> Vec<T> {
        self.forward_cached::<rand_chacha::ChaCha8Rng>(tokens, None).0
    }

    /// Scores of every real item (ids `1..=n_items`) for one hidden row.
    pub fn item_scores(&self, z: &[T]) -> Vec<T> {
        let d = self.shape.hidden;
        let emb = self.p(&self.layout.item_emb);
        (1..=self.shape.n_items)
            .map(|v| dot(z, &emb[v * d..(v + 1) * d]))
            .collect()
    }

    /// Item scores after the last token of `tokens`.
    pub fn scores_last(&self, tokens: &[ItemId]) -> Vec<T> {
        let d = self.shape.hidden;
        let z = self.hidden_states(tokens);
        let l = tokens.len();
        self.item_scores(&z[(l - 1) * d..l * d])
    }

    /// Item scores after every prefix of `tokens`; row `i` depends on
    /// `tokens[..=i]` only.
    pub fn scores_all(&self, tokens: &[ItemId]) -> Vec<Vec<T>> {
        let d = self.shape.hidden;
        let z = self.hidden_states(tokens);
        (0..tokens.len())
            .map(|i| self.item_scores(&z[i * d..(i + 1) * d]))
            .collect()
    }

    /// Summed cross-entropy over the target positions of `seq`.
    pub fn loss(&self, seq: &TrainSeq) -> f64 {
        let d = self.shape.hidden;
        let z = self.hidden_states(&seq.tokens);
        let mut total = 0.0;
        for (t, target) in seq.targets.iter().enumerate() {
            if *target == ItemId::PADDING {
                continue;
            }
            let mut row: Vec<f64> = self
                .item_scores(&z[t * d..(t + 1) * d])
                .iter()
                .map(|v| v.to_f64().unwrap_or(f64::NAN))
                .collect();
            log_softmax_in_place(&mut row);
            total -= row[target.index() - 1];
        }
        total
    }

    /// Summed cross-entropy over the target positions; accumulates
    /// `scale · ∂loss/∂θ` into `grad`.
    pub fn loss_and_grad<R: Rng>(
        &self,
        seq: &TrainSeq,
        scale: T,
        grad: &mut [T],
        dropout: Option<&mut Dropout<'_, R>>,
    ) -> f64 {
        assert_eq!(grad.len(), self.params.len());
        assert_eq!(seq.tokens.len(), seq.targets.len());
        let s = self.shape;
        let (l, d, dh) = (seq.tokens.len(), s.hidden, s.hidden / s.heads);
        let (z, cache) = self.forward_cached(&seq.tokens, dropout);

        // output layer
        let emb_r = self.layout.item_emb.clone();
        let mut dz = vec![T::zero(); l * d];
        let mut loss = 0.0;
        for (t, target) in seq.targets.iter().enumerate() {
            if *target == ItemId::PADDING {
                continue;
            }
            let zt = &z[t * d..(t + 1) * d];
            let mut row: Vec<f64> = self
                .item_scores(zt)
                .iter()
                .map(|v| v.to_f64().unwrap_or(f64::NAN))
                .collect();
            log_softmax_in_place(&mut row);
            loss -= row[target.index() - 1];
            let dzt = &mut dz[t * d..(t + 1) * d];
            for (vi, lp) in row.iter().enumerate() {
                let mut dl = lp.exp();
                if vi + 1 == target.index() {
                    dl -= 1.0;
                }
                let dl = lit::<T>(dl) * scale;
                let item = vi + 1;
                let e = &self.params[emb_r.start + item * d..emb_r.start + (item + 1) * d];
                for j in 0..d {
                    dzt[j] += dl * e[j];
                }
                let ge = &mut grad[emb_r.start + item * d..emb_r.start + (item + 1) * d];
                for j in 0..d {
                    ge[j] += dl * zt[j];
                }
            }
        }

        let mut dh_buf = {
            let (gg, gb) = two_mut(grad, &self.layout.lnf_g, &self.layout.lnf_b);
            layer_norm_backward(&dz, &cache.lnf, l, d, self.p(&self.layout.lnf_g), gg, gb)
        };

        let scale_att = lit::<T>(1.0 / (dh as f64).sqrt());
        for (lay, lc) in self.layout.layers.iter().zip(&cache.layers).rev() {
            // feed-forward branch
            let mut df = dh_buf.clone();
            apply_mask(&mut df, &lc.mask2);
            let mut dg = vec![T::zero(); l * s.inner];
            acc_input_grad(&df, self.p(&lay.w2), l, s.inner, d, &mut dg);
            acc_weight_grad(&lc.g, &df, l, s.inner, d, &mut grad[lay.w2.clone()]);
            acc_bias_grad(&df, l, d, &mut grad[lay.b2.clone()]);
            for (x, &u) in dg.iter_mut().zip(&lc.u) {
                *x *= gelu_grad(u);
            }
            let mut da2 = vec![T::zero(); l * d];
            acc_input_grad(&dg, self.p(&lay.w1), l, d, s.inner, &mut da2);
            acc_weight_grad(&lc.a2, &dg, l, d, s.inner, &mut grad[lay.w1.clone()]);
            acc_bias_grad(&dg, l, s.inner, &mut grad[lay.b1.clone()]);
            let dx2 = {
                let (gg, gb) = two_mut(grad, &lay.ln2_g, &lay.ln2_b);
                layer_norm_backward(&da2, &lc.ln2, l, d, self.p(&lay.ln2_g), gg, gb)
            };
            for (a, b) in dh_buf.iter_mut().zip(&dx2) {
                *a += *b;
            }

            // attention branch
            let mut dout = dh_buf.clone();
            apply_mask(&mut dout, &lc.mask1);
            let mut dctx = vec![T::zero(); l * d];
            acc_input_grad(&dout, self.p(&lay.wo), l, d, d, &mut dctx);
            acc_weight_grad(&lc.ctx, &dout, l, d, d, &mut grad[lay.wo.clone()]);
            acc_bias_grad(&dout, l, d, &mut grad[lay.bo.clone()]);

            let mut dq = vec![T::zero(); l * d];
            let mut dk = vec![T::zero(); l * d];
            let mut dv = vec![T::zero(); l * d];
            let mut dp = vec![T::zero(); l];
            for hd in 0..s.heads {
                let c0 = hd * dh;
                for i in 0..l {
                    let row = &lc.att[(hd * l + i) * l..(hd * l + i) * l + l];
                    let dci = &dctx[i * d + c0..i * d + c0 + dh];
                    let mut weighted = T::zero();
                    for j in 0..=i {
                        let vj = &lc.v[j * d + c0..j * d + c0 + dh];
                        dp[j] = dot(dci, vj);
                        weighted += row[j] * dp[j];
                        let dvj = &mut dv[j * d + c0..j * d + c0 + dh];
                        for (g, &c) in dvj.iter_mut().zip(dci) {
                            *g += row[j] * c;
                        }
                    }
                    for j in 0..=i {
                        let ds = row[j] * (dp[j] - weighted) * scale_att;
                        if ds == T::zero() {
                            continue;
                        }
                        for c in 0..dh {
                            dq[i * d + c0 + c] += ds * lc.k[j * d + c0 + c];
                            dk[j * d + c0 + c] += ds * lc.q[i * d + c0 + c];
                        }
                    }
                }
            }
            let mut da1 = vec![T::zero(); l * d];
            for (dy, w, b) in [(&dq, &lay.wq, &lay.bq), (&dk, &lay.wk, &lay.bk), (&dv, &lay.wv, &lay.bv)] {
                acc_input_grad(dy, self.p(w), l, d, d, &mut da1);
                acc_weight_grad(&lc.a1, dy, l, d, d, &mut grad[w.clone()]);
                acc_bias_grad(dy, l, d, &mut grad[b.clone()]);
            }
            let dx1 = {
                let (gg, gb) = two_mut(grad, &lay.ln1_g, &lay.ln1_b);
                layer_norm_backward(&da1, &lc.ln1, l, d, self.p(&lay.ln1_g), gg, gb)
            };
            for (a, b) in dh_buf.iter_mut().zip(&dx1) {
                *a += *b;
            }
        }

        apply_mask(&mut dh_buf, &cache.mask0);
        let pos_r = self.layout.pos_emb.clone();
        for (t, tok) in seq.tokens.iter().enumerate() {
            let src = &dh_buf[t * d..(t + 1) * d];
            let ge = &mut grad[emb_r.start + tok.index() * d..emb_r.start + (tok.index() + 1) * d];
            for j in 0..d {
                ge[j] += src[j];
            }
            let gp = &mut grad[pos_r.start + t * d..pos_r.start + (t + 1) * d];
            for j in 0..d {
                gp[j] += src[j];
            }
        }
        loss
    }
}

/// Two disjoint mutable views into the gradient buffer; `a` must precede `b`.
fn two_mut<'a, T>(buf: &'a mut [T], a: &Range<usize>, b: &Range<usize>) -> (&'a mut [T], &'a mut [T]) {
    assert!(a.end <= b.start);
    let (left, right) = buf.split_at_mut(b.start);
    (&mut left[a.clone()], &mut right[..b.len()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape() -> Shape {
        Shape {
            n_items: 12,
            hidden: 8,
            heads: 2,
            inner: 12,
            layers: 2,
            max_len: 10,
        }
    }

    #[test]
    fn causal_prefix_rows_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net: Network<f64> = Network::random(shape(), 0.3, &mut rng);
        let toks: Vec<ItemId> = [3, 1, 4, 1, 5, 9].iter().map(|&i| ItemId(i)).collect();
        let all = net.scores_all(&toks);
        for i in 0..toks.len() {
            let last = net.scores_last(&toks[..=i]);
            for (a, b) in all[i].iter().zip(&last) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loss_matches_loss_and_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net: Network<f64> = Network::random(shape(), 0.3, &mut rng);
        let seq = TrainSeq::next_item(&[ItemId(2), ItemId(7), ItemId(3), ItemId(12)]);
        let mut g = vec![0.0; net.n_params()];
        let a = net.loss_and_grad::<ChaCha8Rng>(&seq, 1.0, &mut g, None);
        assert!((a - net.loss(&seq)).abs() < 1e-12);
        assert_eq!(seq.n_targets(), 3);
    }

    #[test]
    fn padding_row_never_receives_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net: Network<f64> = Network::random(shape(), 0.3, &mut rng);
        let seq = TrainSeq::next_item(&[ItemId(2), ItemId(7), ItemId(3)]);
        let mut g = vec![0.0; net.n_params()];
        net.loss_and_grad::<ChaCha8Rng>(&seq, 1.0, &mut g, None);
        assert!(g[..8].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn layout_is_contiguous() {
        let s = shape();
        let lay = Layout::new(&s);
        let d = s.hidden;
        let per_layer = 2 * d + 4 * (d * d + d) + 2 * d + d * s.inner + s.inner + s.inner * d + d;
        assert_eq!(lay.total, (s.n_items + 1) * d + s.max_len * d + s.layers * per_layer + 2 * d);
    }
}
