//! Per-sub-column embedding, regressor and predictor stacks with
//! permutation masking.

use rand::Rng;

use super::{compute_layer_sizes, LayerSizes};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::tensor::{axpy, dot, dropout_mask, softmax_cross_entropy, softmax_in_place, ParamTensor, Scalar};

/// Parameters per sub-column, in storage order: E, W, b, V, c.
pub const PARAMS_PER_SUB: usize = 5;

/// Gradient buffers aligned with `Network::params`.
pub type Grads<T> = Vec<Vec<T>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub cardinalities: Vec<u32>,
    pub sizes: Vec<LayerSizes>,
    /// Start of each sub-column's slot in the context vector.
    pub offsets: Vec<usize>,
    pub context_width: usize,
    pub params: Vec<ParamTensor<T>>,
}

/// Concatenates embeddings in canonical order, zeroing every slot whose
/// sub-column does not precede `target` in `order`.
pub fn masked_context<T: Scalar>(embeddings: &[&[T]], order: &[usize], target: usize) -> Vec<T> {
    let pos = order.iter().position(|&j| j == target).unwrap_or(order.len());
    let visible: Vec<bool> = {
        let mut v = vec![false; embeddings.len()];
        for &j in &order[..pos] {
            v[j] = true;
        }
        v
    };
    let mut out = Vec::with_capacity(embeddings.iter().map(|e| e.len()).sum());
    for (e, &vis) in embeddings.iter().zip(&visible) {
        if vis {
            out.extend_from_slice(e);
        } else {
            out.extend(std::iter::repeat(T::zero()).take(e.len()));
        }
    }
    out
}

/// Positions and visibility sets for one feature order.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderPlan {
    pub order: Vec<usize>,
    pub position: Vec<usize>,
}

impl OrderPlan {
    pub fn new(order: Vec<usize>, d: usize) -> Result<Self> {
        let mut position = vec![usize::MAX; d];
        if order.len() != d {
            return Err(Error::InvalidArgument(format!("order has {} entries, expected {d}", order.len())));
        }
        for (k, &j) in order.iter().enumerate() {
            if j >= d || position[j] != usize::MAX {
                return Err(Error::InvalidArgument(format!("order {order:?} is not a permutation of 0..{d}")));
            }
            position[j] = k;
        }
        Ok(Self { order, position })
    }

    pub fn canonical(d: usize) -> Self {
        Self { order: (0..d).collect(), position: (0..d).collect() }
    }

    pub fn random<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..d).collect();
        order.shuffle(rng);
        Self::new(order, d).expect("shuffle is a permutation")
    }

    pub fn precedes(&self, j: usize, i: usize) -> bool {
        self.position[j] < self.position[i]
    }
}

/// Scratch buffers reused across rows.
#[derive(Debug, Clone)]
pub struct Workspace<T> {
    ctx: Vec<T>,
    masked: Vec<T>,
    dmasked: Vec<T>,
    dctx: Vec<T>,
    z: Vec<T>,
    h: Vec<T>,
    dh: Vec<T>,
    logits: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    pub fn new(net: &Network<T>) -> Self {
        let r = net.sizes.iter().map(|s| s.regressor).max().unwrap_or(0);
        let c = net.cardinalities.iter().copied().max().unwrap_or(0) as usize;
        let w = net.context_width;
        Self {
            ctx: vec![T::zero(); w],
            masked: vec![T::zero(); w],
            dmasked: vec![T::zero(); w],
            dctx: vec![T::zero(); w],
            z: vec![T::zero(); r],
            h: vec![T::zero(); r],
            dh: vec![T::zero(); r],
            logits: vec![T::zero(); c],
        }
    }
}

/// Dropout masks for every sub-column's regressor output.
pub fn draw_masks<T: Scalar>(sizes: &[LayerSizes], rate: f64, rng: &mut StreamRng) -> Vec<Vec<T>> {
    sizes.iter().map(|s| dropout_mask(s.regressor, rate, rng)).collect()
}

impl<T: Scalar> Network<T> {
    pub fn param_shapes(cards: &[u32], sizes: &[LayerSizes]) -> Vec<Vec<usize>> {
        let ctx: usize = sizes.iter().map(|s| s.embedding).sum();
        let mut out = Vec::with_capacity(cards.len() * PARAMS_PER_SUB);
        for (&c, s) in cards.iter().zip(sizes) {
            let c = c as usize;
            out.push(vec![c, s.embedding]);
            out.push(vec![s.regressor, ctx]);
            out.push(vec![s.regressor]);
            out.push(vec![c, s.regressor]);
            out.push(vec![c]);
        }
        out
    }

    fn layout(cards: &[u32]) -> Result<(Vec<LayerSizes>, Vec<usize>, usize)> {
        if cards.is_empty() || cards.contains(&0) {
            return Err(Error::InvalidArgument("every sub-column needs cardinality >= 1".into()));
        }
        let sizes = compute_layer_sizes(cards);
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut w = 0;
        for s in &sizes {
            offsets.push(w);
            w += s.embedding;
        }
        Ok((sizes, offsets, w))
    }

    /// Uniform ±sqrt(6/(fan_in+fan_out)) weights, zero biases.
    pub fn init<R: Rng + ?Sized>(cards: &[u32], rng: &mut R) -> Result<Self> {
        let (sizes, offsets, w) = Self::layout(cards)?;
        let mut params = Vec::with_capacity(cards.len() * PARAMS_PER_SUB);
        for (&c, s) in cards.iter().zip(&sizes) {
            let c = c as usize;
            params.push(ParamTensor::glorot(&[c, s.embedding], c, s.embedding, rng));
            params.push(ParamTensor::glorot(&[s.regressor, w], w, s.regressor, rng));
            params.push(ParamTensor::zeros(&[s.regressor]));
            params.push(ParamTensor::glorot(&[c, s.regressor], s.regressor, c, rng));
            params.push(ParamTensor::zeros(&[c]));
        }
        Ok(Self { cardinalities: cards.to_vec(), sizes, offsets, context_width: w, params })
    }

    /// Rebuilds a network from flat parameter values in storage order.
    pub fn from_flat(cards: &[u32], flat: &[T]) -> Result<Self> {
        let (sizes, offsets, w) = Self::layout(cards)?;
        let shapes = Self::param_shapes(cards, &sizes);
        let expected: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        if flat.len() != expected {
            return Err(Error::ModelFile(format!("expected {expected} floats, found {}", flat.len())));
        }
        let mut params = Vec::with_capacity(shapes.len());
        let mut off = 0;
        for s in shapes {
            let n: usize = s.iter().product();
            params.push(ParamTensor::from_values(&s, flat[off..off + n].to_vec())?);
            off += n;
        }
        Ok(Self { cardinalities: cards.to_vec(), sizes, offsets, context_width: w, params })
    }

    pub fn n_sub(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            cardinalities: self.cardinalities.clone(),
            sizes: self.sizes.clone(),
            offsets: self.offsets.clone(),
            context_width: self.context_width,
            params: self.params.iter().map(|p| p.cast()).collect(),
        }
    }

    pub fn zero_grads(&self) -> Grads<T> {
        self.params.iter().map(|p| vec![T::zero(); p.len()]).collect()
    }

    pub fn embedding(&self, i: usize, index: u32) -> &[T] {
        let e = self.sizes[i].embedding;
        let k = index as usize;
        &self.params[i * PARAMS_PER_SUB].values[k * e..(k + 1) * e]
    }

    fn fill_context(&self, row: &[u32], ctx: &mut [T]) {
        for (j, &x) in row.iter().enumerate() {
            let off = self.offsets[j];
            let e = self.sizes[j].embedding;
            ctx[off..off + e].copy_from_slice(self.embedding(j, x));
        }
    }

    /// The masked context for sub-column `target` of `row` under `order`.
    pub fn masked_context_for(&self, row: &[u32], order: &[usize], target: usize) -> Vec<T> {
        let embs: Vec<&[T]> = row.iter().enumerate().map(|(j, &x)| self.embedding(j, x)).collect();
        masked_context(&embs, order, target)
    }

    /// Regressor output `h` and logits for sub-column `i` given a context.
    fn column_logits(&self, ctx: &[T], i: usize, mask: Option<&[T]>, z: &mut [T], h: &mut [T], logits: &mut [T]) {
        let base = i * PARAMS_PER_SUB;
        let (w, b) = (&self.params[base + 1].values, &self.params[base + 2].values);
        let (v, c) = (&self.params[base + 3].values, &self.params[base + 4].values);
        let cw = self.context_width;
        let r = self.sizes[i].regressor;
        for q in 0..r {
            let zq = if cw > 0 { b[q] + dot(&w[q * cw..(q + 1) * cw], ctx) } else { b[q] };
            z[q] = zq;
            let a = if zq > T::zero() { zq } else { T::zero() };
            h[q] = match mask {
                Some(m) => a * m[q],
                None => a,
            };
        }
        for (p, l) in logits.iter_mut().enumerate() {
            *l = c[p] + dot(&v[p * r..(p + 1) * r], h);
        }
    }

    /// Probability vector for sub-column `i` given a (masked) context.
    pub fn forward_column(&self, context: &[T], i: usize, mask: Option<&[T]>) -> Result<Vec<T>> {
        if context.len() != self.context_width {
            return Err(Error::Dimension(format!(
                "context width {} differs from {}",
                context.len(),
                self.context_width
            )));
        }
        let r = self.sizes[i].regressor;
        let mut z = vec![T::zero(); r];
        let mut h = vec![T::zero(); r];
        let mut p = vec![T::zero(); self.cardinalities[i] as usize];
        self.column_logits(context, i, mask, &mut z, &mut h, &mut p);
        softmax_in_place(&mut p);
        Ok(p)
    }

    /// Logits for sub-column `i` from a full (unmasked) context and a visibility predicate.
    pub fn logits_with_visible(
        &self,
        ctx: &[T],
        visible: impl Fn(usize) -> bool,
        i: usize,
        ws: &mut Workspace<T>,
    ) -> Vec<T> {
        self.build_masked(ctx, &visible, &mut ws.masked);
        let card = self.cardinalities[i] as usize;
        let r = self.sizes[i].regressor;
        let Workspace { masked, z, h, logits, .. } = ws;
        self.column_logits(masked, i, None, &mut z[..r], &mut h[..r], &mut logits[..card]);
        logits[..card].to_vec()
    }

    fn build_masked(&self, ctx: &[T], visible: &impl Fn(usize) -> bool, out: &mut [T]) {
        for j in 0..self.n_sub() {
            let off = self.offsets[j];
            let e = self.sizes[j].embedding;
            if visible(j) {
                out[off..off + e].copy_from_slice(&ctx[off..off + e]);
            } else {
                out[off..off + e].fill(T::zero());
            }
        }
    }

    /// Fills `ctx` with the unmasked embeddings of `row`.
    pub fn embed_row(&self, row: &[u32], ctx: &mut [T]) {
        self.fill_context(row, ctx);
    }

    /// Teacher-forced loss of one row under `plan`, summed over sub-columns.
    /// With `grads`, accumulates `scale * dLoss/dθ` into it.
    pub fn row_pass(
        &self,
        row: &[u32],
        plan: &OrderPlan,
        masks: Option<&[Vec<T>]>,
        mut grads: Option<&mut Grads<T>>,
        scale: T,
        ws: &mut Workspace<T>,
    ) -> f64 {
        let d = self.n_sub();
        let cw = self.context_width;
        self.fill_context(row, &mut ws.ctx);
        if grads.is_some() {
            ws.dctx.fill(T::zero());
        }
        let mut loss = 0.0;
        for i in 0..d {
            let r = self.sizes[i].regressor;
            let card = self.cardinalities[i] as usize;
            let visible = |j: usize| plan.precedes(j, i);
            self.build_masked(&ws.ctx, &visible, &mut ws.masked);
            let mask = masks.map(|m| m[i].as_slice());
            {
                let Workspace { masked, z, h, logits, .. } = &mut *ws;
                self.column_logits(masked, i, mask, &mut z[..r], &mut h[..r], &mut logits[..card]);
            }
            let (l, mut dl) = softmax_cross_entropy(&ws.logits[..card], row[i] as usize);
            loss += l.as_f64();
            let Some(g) = grads.as_deref_mut() else { continue };
            for v in dl.iter_mut() {
                *v = *v * scale;
            }
            let base = i * PARAMS_PER_SUB;
            let w = &self.params[base + 1].values;
            let v = &self.params[base + 3].values;
            // predictor
            ws.dh[..r].fill(T::zero());
            for (p, &dlp) in dl.iter().enumerate() {
                g[base + 4][p] = g[base + 4][p] + dlp;
                axpy(dlp, &ws.h[..r], &mut g[base + 3][p * r..(p + 1) * r]);
                axpy(dlp, &v[p * r..(p + 1) * r], &mut ws.dh[..r]);
            }
            // regressor
            ws.dmasked.fill(T::zero());
            for q in 0..r {
                if ws.z[q] <= T::zero() {
                    continue;
                }
                let dz = match mask {
                    Some(m) => ws.dh[q] * m[q],
                    None => ws.dh[q],
                };
                if dz == T::zero() {
                    continue;
                }
                g[base + 2][q] = g[base + 2][q] + dz;
                if cw > 0 {
                    axpy(dz, &ws.masked, &mut g[base + 1][q * cw..(q + 1) * cw]);
                    axpy(dz, &w[q * cw..(q + 1) * cw], &mut ws.dmasked);
                }
            }
            for j in 0..d {
                if visible(j) {
                    let off = self.offsets[j];
                    let e = self.sizes[j].embedding;
                    for k in off..off + e {
                        ws.dctx[k] = ws.dctx[k] + ws.dmasked[k];
                    }
                }
            }
        }
        if let Some(g) = grads {
            for (j, &x) in row.iter().enumerate() {
                let off = self.offsets[j];
                let e = self.sizes[j].embedding;
                let k = x as usize;
                let ge = &mut g[j * PARAMS_PER_SUB][k * e..(k + 1) * e];
                for (a, b) in ge.iter_mut().zip(&ws.dctx[off..off + e]) {
                    *a = *a + *b;
                }
            }
        }
        loss
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::tensor::tests::rel_err;
    use rand::Rng;

    fn net(cards: &[u32], seed: u64) -> Network<f64> {
        let mut n = Network::<f64>::init(cards, &mut substream(seed, &[])).unwrap();
        // non-zero biases so ReLUs are not all balanced at init
        let mut rng = substream(seed, &[1]);
        for p in &mut n.params {
            if p.shape.len() == 1 {
                for v in &mut p.values {
                    *v = rng.random_range(-0.5..0.5);
                }
            }
        }
        n
    }

    #[test]
    fn masked_context_rules() {
        let e0 = [1.0f32, 1.0];
        let e1 = [2.0f32, 2.0, 2.0];
        let e2 = [3.0f32];
        let embs: Vec<&[f32]> = vec![&e0, &e1, &e2];
        // first in order: all zero
        assert!(masked_context(&embs, &[1, 0, 2], 1).iter().all(|&v| v == 0.0));
        // order [2,1,3] (1-based) targeting sub-column 1: only slot 2 populated
        assert_eq!(masked_context(&embs, &[1, 0, 2], 0), vec![0.0, 0.0, 2.0, 2.0, 2.0, 0.0]);
        // last: everything but itself
        assert_eq!(masked_context(&embs, &[1, 0, 2], 2), vec![1.0, 1.0, 2.0, 2.0, 2.0, 0.0]);
    }

    #[test]
    fn probabilities_sum_to_one_and_zero_predictor_is_uniform() {
        let mut n = net(&[3, 7, 2], 2);
        let row = [1u32, 5, 0];
        for i in 0..3 {
            let ctx = n.masked_context_for(&row, &[2, 0, 1], i);
            let p = n.forward_column(&ctx, i, None).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        for i in 0..3 {
            n.params[i * PARAMS_PER_SUB + 3].values.fill(0.0);
            n.params[i * PARAMS_PER_SUB + 4].values.fill(0.0);
            let ctx = n.masked_context_for(&row, &[0, 1, 2], i);
            let p = n.forward_column(&ctx, i, None).unwrap();
            let u = 1.0 / n.cardinalities[i] as f64;
            assert!(p.iter().all(|&x| (x - u).abs() < 1e-12));
        }
    }

    #[test]
    fn row_pass_matches_dense_path() {
        let n = net(&[4, 9, 3, 12], 3);
        let row = [3u32, 8, 0, 11];
        let plan = OrderPlan::new(vec![2, 0, 3, 1], 4).unwrap();
        let mut ws = Workspace::new(&n);
        let fast = n.row_pass(&row, &plan, None, None, 1.0, &mut ws);
        let mut dense = 0.0;
        for i in 0..4 {
            let ctx = n.masked_context_for(&row, &plan.order, i);
            let p = n.forward_column(&ctx, i, None).unwrap();
            dense -= p[row[i] as usize].ln();
        }
        assert!((fast - dense).abs() < 1e-9);
    }

    /// Every parameter of the full stack, including dropout masks, against
    /// central differences in 64-bit precision.
    #[test]
    fn full_network_gradients_match_finite_differences() {
        const H: f64 = 1e-3;
        let mut rng = substream(21, &[]);
        let mut points = 0;
        let mut attempts = 0;
        while points < 20 {
            attempts += 1;
            assert!(attempts < 500);
            let cards = [3u32, 5, 2];
            let n = net(&cards, 100 + attempts);
            let row: Vec<u32> = cards.iter().map(|&c| rng.random_range(0..c)).collect();
            let plan = OrderPlan::random(3, &mut rng);
            let masks: Vec<Vec<f64>> = n.sizes.iter().map(|s| dropout_mask(s.regressor, 0.25, &mut rng)).collect();
            if near_kink(&n, &row, &plan) {
                continue;
            }
            let mut ws = Workspace::new(&n);
            let mut g = n.zero_grads();
            n.row_pass(&row, &plan, Some(&masks), Some(&mut g), 1.0, &mut ws);
            for (pi, p) in n.params.iter().enumerate() {
                for k in 0..p.len() {
                    let mut a = n.clone();
                    a.params[pi].values[k] += H;
                    let mut b = n.clone();
                    b.params[pi].values[k] -= H;
                    let la = a.row_pass(&row, &plan, Some(&masks), None, 1.0, &mut ws);
                    let lb = b.row_pass(&row, &plan, Some(&masks), None, 1.0, &mut ws);
                    let num = (la - lb) / (2.0 * H);
                    let ana = g[pi][k];
                    assert!(
                        rel_err(ana, num) < 1e-4 || (ana - num).abs() < 1e-9,
                        "param {pi}[{k}]: analytic {ana} numeric {num}"
                    );
                }
            }
            points += 1;
        }
    }

    /// True if some pre-activation lies within the finite-difference reach of zero.
    fn near_kink(n: &Network<f64>, row: &[u32], plan: &OrderPlan) -> bool {
        for i in 0..n.n_sub() {
            let ctx = n.masked_context_for(row, &plan.order, i);
            let base = i * PARAMS_PER_SUB;
            let w = &n.params[base + 1].values;
            let b = &n.params[base + 2].values;
            let cw = n.context_width;
            for q in 0..n.sizes[i].regressor {
                let z = b[q] + dot(&w[q * cw..(q + 1) * cw], &ctx);
                if z.abs() < 0.02 {
                    return true;
                }
            }
        }
        false
    }

    #[test]
    fn causality_under_perturbation() {
        let n = net(&[4, 6, 3, 5], 7).cast::<f32>();
        let mut rng = substream(8, &[]);
        for _ in 0..50 {
            let plan = OrderPlan::random(4, &mut rng);
            let row: Vec<u32> = n.cardinalities.iter().map(|&c| rng.random_range(0..c)).collect();
            for k in 0..4 {
                let i = plan.order[k];
                let base = n.forward_column(&n.masked_context_for(&row, &plan.order, i), i, None).unwrap();
                let mut other = row.clone();
                for &j in &plan.order[k + 1..] {
                    other[j] = rng.random_range(0..n.cardinalities[j]);
                }
                let again = n.forward_column(&n.masked_context_for(&other, &plan.order, i), i, None).unwrap();
                assert_eq!(base.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                           again.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn flat_round_trip() {
        let n = net(&[2, 3], 9).cast::<f32>();
        let flat: Vec<f32> = n.params.iter().flat_map(|p| p.values.iter().copied()).collect();
        let back = Network::<f32>::from_flat(&[2, 3], &flat).unwrap();
        assert_eq!(back.params.iter().map(|p| &p.values).collect::<Vec<_>>(),
                   n.params.iter().map(|p| &p.values).collect::<Vec<_>>());
        let err = Network::<f32>::from_flat(&[2, 3], &flat[1..]).unwrap_err().to_string();
        assert_eq!(err, format!("expected {} floats, found {}", flat.len(), flat.len() - 1));
    }

    #[test]
    fn rejects_non_permutation() {
        assert!(OrderPlan::new(vec![0, 0, 1], 3).is_err());
        assert!(OrderPlan::new(vec![0, 1], 3).is_err());
    }
}
