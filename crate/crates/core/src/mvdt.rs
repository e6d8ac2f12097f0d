//! A toy residual transformer stack for masking, fusion and caching logic.
//!
//! Each block maps `x ↦ x + r(x)` over `N×d` token matrices with
//! `r(x) = g·tanh(x·W + b)`. Per-block gains follow a U-shaped profile so the
//! first and last blocks matter most, the shape real DiT ablations show.
//!
//! - [`mvdt_forward`]: encoder on visible tokens, side-interpolator for the
//!   masked ones, gated fusion, decoder on all tokens.
//! - [`run_with_cache`]: reuse stored residuals of selected layers for `l_c`
//!   steps after each full compute, optionally stored as bfloat16.
//! - [`block_importance_scores`] / [`select_cacheable_layers`]: ablation MSE
//!   per block and the lowest-scoring layers.

use std::collections::BTreeSet;

use half::bf16;
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;

pub const DEFAULT_BLOCKS: usize = 40;
pub const DEFAULT_MASK_RATIO: f64 = 0.3;
pub const DEFAULT_CACHEABLE: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MvdtError {
    #[error("mask ratio must lie in [0, 1), got {0}")]
    BadRatio(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("encoder depth {depth} must be smaller than the block count {blocks}")]
    BadDepth { depth: usize, blocks: usize },
    #[error("cannot select {k} layers out of {blocks}")]
    BadK { k: usize, blocks: usize },
    #[error("layer {layer} out of range for {blocks} blocks")]
    BadLayer { layer: usize, blocks: usize },
    #[error("cache ratio must be at least 1")]
    BadCacheRatio,
    #[error("no input sequences")]
    EmptyInput,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Block {
    Residual {
        weight: Array2<f32>,
        bias: Array1<f32>,
        gain: f32,
    },
    Identity,
}

impl Block {
    /// `Block(x) − x`.
    pub fn residual(&self, x: ArrayView2<f32>) -> Array2<f32> {
        match self {
            Block::Residual { weight, bias, gain } => {
                let mut h = x.dot(weight);
                h += bias;
                h.mapv_inplace(|v| gain * v.tanh());
                h
            }
            Block::Identity => Array2::zeros(x.raw_dim()),
        }
    }

    pub fn apply(&self, x: ArrayView2<f32>) -> Array2<f32> {
        match self {
            Block::Identity => x.to_owned(),
            _ => {
                let mut r = self.residual(x);
                r += &x;
                r
            }
        }
    }
}

/// U-shaped gain: large at both ends of the stack, small in the middle.
fn gain_profile(i: usize, blocks: usize) -> f32 {
    if blocks <= 1 {
        return 0.5;
    }
    let u = 2.0 * i as f32 / (blocks - 1) as f32 - 1.0;
    0.05 + 0.45 * u * u
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyBlockStack {
    blocks: Vec<Block>,
    dim: usize,
    seed: u64,
    interp_query: Array1<f32>,
}

impl ToyBlockStack {
    pub fn new(blocks: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (dim as f32).sqrt();
        let blocks = (0..blocks)
            .map(|i| Block::Residual {
                weight: Array2::from_shape_simple_fn((dim, dim), || scale * rng.sample::<f32, _>(StandardNormal)),
                bias: Array1::from_shape_simple_fn(dim, || 0.1 * rng.sample::<f32, _>(StandardNormal)),
                gain: gain_profile(i, blocks),
            })
            .collect();
        let interp_query = Array1::from_shape_simple_fn(dim, || rng.sample::<f32, _>(StandardNormal));
        ToyBlockStack {
            blocks,
            dim,
            seed,
            interp_query,
        }
    }

    /// Inserts an identity block so it becomes block `index`.
    pub fn with_identity_at(mut self, index: usize) -> Self {
        self.blocks.insert(index.min(self.blocks.len()), Block::Identity);
        self
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn check(&self, x: ArrayView2<f32>) -> Result<(), MvdtError> {
        if x.ncols() != self.dim {
            return Err(MvdtError::ShapeMismatch(format!(
                "token width {} vs {}",
                x.ncols(),
                self.dim
            )));
        }
        Ok(())
    }

    fn run_range(&self, x: ArrayView2<f32>, range: std::ops::Range<usize>, skip: Option<usize>) -> Array2<f32> {
        let mut x = x.to_owned();
        for i in range {
            if Some(i) != skip {
                x = self.blocks[i].apply(x.view());
            }
        }
        x
    }

    /// All blocks in order.
    pub fn forward(&self, x: ArrayView2<f32>) -> Result<Array2<f32>, MvdtError> {
        self.check(x)?;
        Ok(self.run_range(x, 0..self.len(), None))
    }

    /// All blocks except `skip`, which passes its input through.
    pub fn forward_skipping(&self, x: ArrayView2<f32>, skip: usize) -> Result<Array2<f32>, MvdtError> {
        self.check(x)?;
        Ok(self.run_range(x, 0..self.len(), Some(skip)))
    }

    /// Softmax attention of per-position queries over the visible tokens.
    fn side_interpolate(&self, visible: ArrayView2<f32>, n: usize) -> Array2<f32> {
        let d = self.dim;
        let scale = 1.0 / (d as f32).sqrt();
        let mut out = Array2::zeros((n, d));
        for (j, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let q: Array1<f32> = Array1::from_shape_fn(d, |c| self.interp_query[c] + positional(j, c, d));
            let logits = visible.dot(&q) * scale;
            let max = logits.fold(f32::NEG_INFINITY, |m, &v| m.max(v));
            let w = logits.mapv(|v| (v - max).exp());
            let total = w.sum();
            row.assign(&(w.dot(&visible) / total));
        }
        out
    }
}

fn positional(pos: usize, c: usize, d: usize) -> f32 {
    let freq = 10000f32.powf((c - c % 2) as f32 / d as f32);
    let a = pos as f32 / freq;
    if c.is_multiple_of(2) {
        a.sin()
    } else {
        a.cos()
    }
}

/// Which tokens are hidden from the encoder; `true` means masked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenMask {
    pub mask: Vec<bool>,
    pub ratio: f64,
}

impl TokenMask {
    pub fn none(n: usize) -> Self {
        TokenMask {
            mask: vec![false; n],
            ratio: 0.0,
        }
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn visible_indices(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| !self.mask[i]).collect()
    }
}

/// `N̂ = round((1 − ρ)·N)` with ties to even.
pub fn visible_count(n: usize, rho: f64) -> usize {
    ((1.0 - rho) * n as f64).round_ties_even() as usize
}

/// Masks `N − N̂` uniformly chosen rows; returns the visible rows in order.
pub fn mask_tokens<R: Rng + ?Sized>(
    z: ArrayView2<f32>,
    rho: f64,
    rng: &mut R,
) -> Result<(Array2<f32>, TokenMask), MvdtError> {
    if !(0.0..1.0).contains(&rho) {
        return Err(MvdtError::BadRatio(rho));
    }
    let n = z.nrows();
    if n == 0 {
        return Err(MvdtError::EmptyInput);
    }
    let hidden = n - visible_count(n, rho);
    let mut mask = vec![false; n];
    for i in rand::seq::index::sample(rng, n, hidden) {
        mask[i] = true;
    }
    let mask = TokenMask { mask, ratio: rho };
    let visible = z.select(Axis(0), &mask.visible_indices());
    Ok((visible, mask))
}

/// `(1 − MASK)⊙z + MASK⊙z_I`, row-wise.
pub fn gated_fusion(
    z_full: ArrayView2<f32>,
    z_interp: ArrayView2<f32>,
    mask: &TokenMask,
) -> Result<Array2<f32>, MvdtError> {
    if z_full.dim() != z_interp.dim() || z_full.nrows() != mask.mask.len() {
        return Err(MvdtError::ShapeMismatch(format!(
            "z {:?}, z_I {:?}, mask {}",
            z_full.dim(),
            z_interp.dim(),
            mask.mask.len()
        )));
    }
    let mut out = z_full.to_owned();
    for (i, &m) in mask.mask.iter().enumerate() {
        if m {
            out.row_mut(i).assign(&z_interp.row(i));
        }
    }
    Ok(out)
}

/// Intermediate values of one masked forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct MvdtTrace {
    pub mask: TokenMask,
    /// Rows processed by the encoder blocks.
    pub encoder_tokens: usize,
    /// Encoder output scattered back to `N` rows; masked rows are zero.
    pub encoder_scattered: Array2<f32>,
    /// Fused tokens entering the decoder.
    pub decoder_input: Array2<f32>,
    pub output: Array2<f32>,
}

pub fn mvdt_forward<R: Rng + ?Sized>(
    stack: &ToyBlockStack,
    z: ArrayView2<f32>,
    rho: f64,
    encoder_depth: usize,
    rng: &mut R,
) -> Result<MvdtTrace, MvdtError> {
    if encoder_depth >= stack.len() {
        return Err(MvdtError::BadDepth {
            depth: encoder_depth,
            blocks: stack.len(),
        });
    }
    stack.check(z)?;
    if rho == 0.0 {
        let output = stack.forward(z)?;
        let n = z.nrows();
        return Ok(MvdtTrace {
            mask: TokenMask::none(n),
            encoder_tokens: n,
            encoder_scattered: stack.run_range(z, 0..encoder_depth, None),
            decoder_input: stack.run_range(z, 0..encoder_depth, None),
            output,
        });
    }
    let (visible, mask) = mask_tokens(z, rho, rng)?;
    let encoded = stack.run_range(visible.view(), 0..encoder_depth, None);
    let mut scattered = Array2::zeros(z.raw_dim());
    for (row, idx) in mask.visible_indices().into_iter().enumerate() {
        scattered.row_mut(idx).assign(&encoded.row(row));
    }
    let interp = stack.side_interpolate(encoded.view(), z.nrows());
    let fused = gated_fusion(scattered.view(), interp.view(), &mask)?;
    let output = stack.run_range(fused.view(), encoder_depth..stack.len(), None);
    Ok(MvdtTrace {
        encoder_tokens: encoded.nrows(),
        mask,
        encoder_scattered: scattered,
        decoder_input: fused,
        output,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Full,
    #[default]
    Bf16,
}

/// Rounds every value to the nearest bfloat16 (ties to even) and widens back.
pub fn to_reduced_precision(x: &[f32]) -> Vec<f32> {
    x.iter().map(|&v| bf16::from_f32(v).to_f32()).collect()
}

fn round_array(mut a: Array2<f32>, p: Precision) -> Array2<f32> {
    if p == Precision::Bf16 {
        a.mapv_inplace(|v| bf16::from_f32(v).to_f32());
    }
    a
}

/// Layers whose residuals are reused, and for how many steps.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachePlan {
    pub cacheable_layers: BTreeSet<usize>,
    /// One full compute is followed by `l_c` cached steps.
    pub ratio: usize,
    #[serde(default)]
    pub precision: Precision,
}

impl CachePlan {
    pub fn new(layers: impl IntoIterator<Item = usize>, ratio: usize, precision: Precision) -> Self {
        CachePlan {
            cacheable_layers: layers.into_iter().collect(),
            ratio,
            precision,
        }
    }

    pub fn empty() -> Self {
        Self::new([], 1, Precision::Bf16)
    }

    pub fn validate(&self, blocks: usize) -> Result<(), MvdtError> {
        if self.ratio == 0 {
            return Err(MvdtError::BadCacheRatio);
        }
        match self.cacheable_layers.iter().find(|&&l| l >= blocks) {
            Some(&layer) => Err(MvdtError::BadLayer { layer, blocks }),
            None => Ok(()),
        }
    }

    /// Whether step `step` recomputes every layer.
    pub fn is_full_step(&self, step: usize) -> bool {
        step.is_multiple_of(self.ratio + 1)
    }
}

/// Runs the stack over a sequence of timestep inputs, reusing cached
/// residuals for the plan's layers on non-full steps.
pub fn run_with_cache(
    stack: &ToyBlockStack,
    inputs: &[Array2<f32>],
    plan: &CachePlan,
) -> Result<Vec<Array2<f32>>, MvdtError> {
    plan.validate(stack.len())?;
    let mut cache: Vec<Option<Array2<f32>>> = vec![None; stack.len()];
    let mut outputs = Vec::with_capacity(inputs.len());
    for (step, x0) in inputs.iter().enumerate() {
        stack.check(x0.view())?;
        let full = plan.is_full_step(step);
        let mut x = x0.clone();
        for (l, block) in stack.blocks.iter().enumerate() {
            if !plan.cacheable_layers.contains(&l) {
                x = block.apply(x.view());
                continue;
            }
            match (&cache[l], full) {
                (Some(r), false) if r.dim() == x.dim() => x += r,
                _ => {
                    let r = block.residual(x.view());
                    x += &r;
                    cache[l] = Some(round_array(r, plan.precision));
                }
            }
        }
        outputs.push(x);
    }
    Ok(outputs)
}

fn mse(a: &Array2<f32>, b: &Array2<f32>) -> f64 {
    let mut sum = 0.0f64;
    Zip::from(a).and(b).for_each(|&x, &y| {
        let d = (x - y) as f64;
        sum += d * d;
    });
    sum / a.len() as f64
}

/// Timesteps at which each cached segment ends: the last index of every
/// consecutive group of `l_c + 1` steps, including a trailing partial group.
pub fn measurement_steps(len: usize, l_c: usize) -> Vec<usize> {
    (0..len).step_by(l_c + 1).map(|s| (s + l_c).min(len - 1)).collect()
}

/// Mean squared output change when each block is skipped, averaged over the
/// measurement steps of every input sequence.
pub fn block_importance_scores(
    stack: &ToyBlockStack,
    videos: &[Vec<Array2<f32>>],
    l_c: usize,
) -> Result<Vec<f64>, MvdtError> {
    if videos.iter().all(Vec::is_empty) {
        return Err(MvdtError::EmptyInput);
    }
    let mut points: Vec<(&Array2<f32>, Array2<f32>)> = Vec::new();
    for video in videos {
        for s in measurement_steps(video.len(), l_c) {
            let x = &video[s];
            points.push((x, stack.forward(x.view())?));
        }
    }
    let n = points.len() as f64;
    Ok(par::map_range(stack.len(), |i| {
        points
            .iter()
            .map(|(x, reference)| mse(&stack.run_range(x.view(), 0..stack.len(), Some(i)), reference))
            .sum::<f64>()
            / n
    }))
}

/// Indices of the `k` smallest scores, lowest first; ties go to the lower index.
pub fn select_cacheable_layers(scores: &[f64], k: usize) -> Result<Vec<usize>, MvdtError> {
    if k > scores.len() {
        return Err(MvdtError::BadK {
            k,
            blocks: scores.len(),
        });
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

/// Seeded `N×d` standard-normal tokens.
pub fn random_tokens(n: usize, d: usize, seed: u64) -> Array2<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, d), || rng.sample::<f32, _>(StandardNormal))
}

/// A slowly drifting token sequence, mimicking latents across nearby
/// denoising steps.
pub fn drifting_sequence(steps: usize, n: usize, d: usize, seed: u64) -> Vec<Array2<f32>> {
    let base = random_tokens(n, d, seed);
    let drift = random_tokens(n, d, seed.wrapping_add(1));
    (0..steps).map(|s| &base + &(&drift * (0.02 * s as f32))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stack() -> ToyBlockStack {
        ToyBlockStack::new(8, 6, 3)
    }

    #[test]
    fn masking_counts() {
        let z = random_tokens(10, 4, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (zu, m) = mask_tokens(z.view(), 0.0, &mut rng).unwrap();
        assert_eq!(zu, z);
        assert_eq!(m.masked_count(), 0);
        let (zu, m) = mask_tokens(z.view(), 0.3, &mut rng).unwrap();
        assert_eq!(zu.nrows(), 7);
        assert_eq!(m.masked_count(), 3);
        let vis = m.visible_indices();
        for (r, &i) in vis.iter().enumerate() {
            assert_eq!(zu.row(r), z.row(i));
        }
        assert_eq!(visible_count(100, 0.3), 70);
        assert_eq!(visible_count(5, 0.5), 2);
        assert!(matches!(
            mask_tokens(z.view(), 1.0, &mut rng),
            Err(MvdtError::BadRatio(_))
        ));
        assert!(matches!(
            mask_tokens(z.view(), -0.1, &mut rng),
            Err(MvdtError::BadRatio(_))
        ));
    }

    #[test]
    fn masking_is_seeded() {
        let z = random_tokens(50, 4, 1);
        let draw = || mask_tokens(z.view(), 0.3, &mut ChaCha8Rng::seed_from_u64(8)).unwrap().1;
        assert_eq!(draw(), draw());
    }

    #[test]
    fn fusion_selects_rows() {
        let a = random_tokens(6, 3, 1);
        let b = random_tokens(6, 3, 2);
        assert_eq!(gated_fusion(a.view(), b.view(), &TokenMask::none(6)).unwrap(), a);
        let all = TokenMask {
            mask: vec![true; 6],
            ratio: 0.5,
        };
        assert_eq!(gated_fusion(a.view(), b.view(), &all).unwrap(), b);
        let m = TokenMask {
            mask: vec![true, false, false, true, false, true],
            ratio: 0.5,
        };
        let out = gated_fusion(a.view(), b.view(), &m).unwrap();
        for i in 0..6 {
            let src = if m.mask[i] { &b } else { &a };
            assert_eq!(out.row(i), src.row(i));
        }
        assert!(gated_fusion(a.view(), random_tokens(5, 3, 1).view(), &m).is_err());
    }

    #[test]
    fn mvdt_bypass_and_preservation() {
        let s = stack();
        let z = random_tokens(20, 6, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let plain = mvdt_forward(&s, z.view(), 0.0, 3, &mut rng).unwrap();
        assert_eq!(plain.output, s.forward(z.view()).unwrap());

        let t = mvdt_forward(&s, z.view(), 0.3, 3, &mut rng).unwrap();
        assert_eq!(t.encoder_tokens, 14);
        for i in t.mask.visible_indices() {
            assert_eq!(t.decoder_input.row(i), t.encoder_scattered.row(i));
        }
        assert_eq!(t.output.dim(), (20, 6));
        assert!(matches!(
            mvdt_forward(&s, z.view(), 0.3, 8, &mut rng),
            Err(MvdtError::BadDepth { .. })
        ));
    }

    #[test]
    fn bf16_rounding() {
        assert_eq!(to_reduced_precision(&[1.0]), vec![1.0]);
        assert_eq!(to_reduced_precision(&[1.0 + 2f32.powi(-9)]), vec![1.0]);
        assert_eq!(
            to_reduced_precision(&[1.0 + 3.0 * 2f32.powi(-8)]),
            vec![1.0 + 2f32.powi(-6)]
        );
        let r = to_reduced_precision(&[f32::INFINITY, f32::NEG_INFINITY, f32::NAN]);
        assert_eq!(r[..2], [f32::INFINITY, f32::NEG_INFINITY]);
        assert!(r[2].is_nan());
    }

    #[test]
    fn cache_reuse_exact_on_repeated_input() {
        let s = stack();
        let x = random_tokens(5, 6, 9);
        let plan = CachePlan::new(0..s.len(), 1, Precision::Full);
        let out = run_with_cache(&s, &[x.clone(), x.clone()], &plan).unwrap();
        assert_eq!(out[0], out[1]);
        assert_eq!(out[0], s.forward(x.view()).unwrap());
    }

    #[test]
    fn cache_matches_reference() {
        let s = stack();
        let seq = drifting_sequence(7, 5, 6, 2);
        let layers = [1, 4, 5];
        let plan = CachePlan::new(layers, 2, Precision::Bf16);
        let got = run_with_cache(&s, &seq, &plan).unwrap();

        let mut stored: Vec<Vec<f32>> = vec![Vec::new(); s.len()];
        for (step, x0) in seq.iter().enumerate() {
            let full = step % 3 == 0;
            let mut x = x0.clone();
            for (l, slot) in stored.iter_mut().enumerate() {
                if layers.contains(&l) && !full {
                    let r = Array2::from_shape_vec(x.raw_dim(), slot.clone()).unwrap();
                    x = &x + &r;
                } else {
                    let r = s.blocks()[l].residual(x.view());
                    if layers.contains(&l) {
                        *slot = r.iter().map(|&v| bf16::from_f32(v).to_f32()).collect();
                    }
                    x = &x + &r;
                }
            }
            assert_eq!(got[step], x, "step {step}");
        }
        assert_ne!(got[1], s.forward(seq[1].view()).unwrap());
    }

    #[test]
    fn cache_plan_validation() {
        let s = stack();
        let x = vec![random_tokens(2, 6, 1)];
        assert_eq!(
            run_with_cache(&s, &x, &CachePlan::new([8], 1, Precision::Full)),
            Err(MvdtError::BadLayer { layer: 8, blocks: 8 })
        );
        assert_eq!(
            run_with_cache(&s, &x, &CachePlan::new([1], 0, Precision::Full)),
            Err(MvdtError::BadCacheRatio)
        );
    }

    #[test]
    fn importance_identity_and_single_block() {
        let s = ToyBlockStack::new(6, 4, 1).with_identity_at(2);
        let seq = drifting_sequence(6, 5, 4, 7);
        let scores = block_importance_scores(&s, std::slice::from_ref(&seq), 2).unwrap();
        assert_eq!(scores[2], 0.0);
        assert_eq!(select_cacheable_layers(&scores, 1).unwrap(), vec![2]);

        let one = ToyBlockStack::new(1, 4, 5);
        let x = random_tokens(3, 4, 3);
        let scores = block_importance_scores(&one, &[vec![x.clone()]], 1).unwrap();
        let y = one.forward(x.view()).unwrap();
        let want = x
            .iter()
            .zip(y.iter())
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            / x.len() as f64;
        assert_eq!(scores[0], want);
    }

    #[test]
    fn importance_duplicate_inputs() {
        let s = stack();
        let seq = drifting_sequence(4, 5, 6, 1);
        let one = block_importance_scores(&s, std::slice::from_ref(&seq), 1).unwrap();
        let two = block_importance_scores(&s, &[seq.clone(), seq], 1).unwrap();
        for (a, b) in one.iter().zip(&two) {
            assert!((a - b).abs() <= 1e-15 * a.abs());
        }
        assert_eq!(block_importance_scores(&s, &[], 1), Err(MvdtError::EmptyInput));
    }

    #[test]
    fn importance_is_u_shaped() {
        let s = ToyBlockStack::new(40, 16, 0);
        let seq = drifting_sequence(4, 8, 16, 1);
        let scores = block_importance_scores(&s, &[seq], 1).unwrap();
        let ends = scores[0].min(scores[39]);
        assert!(scores[15..25].iter().all(|&m| m < ends));
    }

    #[test]
    fn measurement_steps_cover_segments() {
        assert_eq!(measurement_steps(6, 2), vec![2, 5]);
        assert_eq!(measurement_steps(7, 2), vec![2, 5, 6]);
        assert_eq!(measurement_steps(1, 3), vec![0]);
    }

    #[test]
    fn selection() {
        assert_eq!(select_cacheable_layers(&[3.0, 1.0, 2.0], 2).unwrap(), vec![1, 2]);
        assert_eq!(
            select_cacheable_layers(&[3.0, 1.0, 2.0], 0).unwrap(),
            Vec::<usize>::new()
        );
        assert_eq!(select_cacheable_layers(&[3.0, 1.0, 2.0], 3).unwrap(), vec![1, 2, 0]);
        assert_eq!(select_cacheable_layers(&[1.0, 1.0, 0.5], 2).unwrap(), vec![2, 0]);
        assert_eq!(
            select_cacheable_layers(&[1.0], 2),
            Err(MvdtError::BadK { k: 2, blocks: 1 })
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn empty_plan_is_full_compute(seed in any::<u64>(), steps in 1usize..6, ratio in 1usize..4) {
            let s = ToyBlockStack::new(5, 4, seed);
            let seq = drifting_sequence(steps, 3, 4, seed);
            let plan = CachePlan { ratio, ..CachePlan::empty() };
            let out = run_with_cache(&s, &seq, &plan).unwrap();
            for (x, y) in seq.iter().zip(&out) {
                prop_assert_eq!(&s.forward(x.view()).unwrap(), y);
            }
        }

        #[test]
        fn mask_cardinality(n in 1usize..300, rho in 0.0f64..0.99, seed in any::<u64>()) {
            let z = Array2::<f32>::zeros((n, 2));
            let (zu, m) = mask_tokens(z.view(), rho, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let want = ((1.0 - rho) * n as f64).round_ties_even() as usize;
            prop_assert_eq!(zu.nrows(), want);
            prop_assert_eq!(m.masked_count(), n - want);
        }

        #[test]
        fn bf16_half_ulp_bound(x in prop::num::f32::NORMAL) {
            prop_assume!(x.abs() < 1e38);
            let r = to_reduced_precision(&[x])[0];
            prop_assert!(((r - x) as f64).abs() <= 2f64.powi(-8) * (x as f64).abs());
            prop_assert_eq!(to_reduced_precision(&[r])[0], r);
        }
    }
}
