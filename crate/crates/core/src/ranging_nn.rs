//! Bounded-output MLP mapping a raw FTM triple to an enhanced distance and
//! standard deviation.
//!
//! Hidden layers use sigmoid activations; both heads are sigmoids scaled by
//! fixed upper bounds, so `0 < d̂ < d_max` and `0 < ŝ < s_max` hold for every
//! input.
//!
//! Parameters live in one flat vector, laid out per hidden layer as the
//! row-major weight matrix followed by its bias vector, then the distance
//! head (weights, bias) and the std head (weights, bias).
//!
//! Three evaluation routes share that layout:
//! - [`RangingModule::forward`]: plain `f64`.
//! - [`RangingModule::forward_on_tape`]: every parameter a tape leaf, either
//!   through scalar ops or fused affine nodes ([`DenseMode`]).
//! - [`RangingModule::forward_cached`] + [`RangingModule::backprop`]: keeps
//!   activations and pushes output adjoints back by hand. The training loop
//!   uses this one; the tape only carries filter and cost.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Scalar, Tape, Var};
use crate::error::{config, Error, Result};
use crate::ftm_sim::FtmMeasurement;

pub const INPUT_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub input: usize,
    pub hidden: Vec<usize>,
}

impl Default for Shape {
    fn default() -> Self {
        Shape {
            input: INPUT_DIM,
            hidden: vec![100, 100],
        }
    }
}

impl Shape {
    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        let mut prev = self.input;
        for &w in &self.hidden {
            n += w * prev + w;
            prev = w;
        }
        n + 2 * (prev + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input != INPUT_DIM {
            return Err(config(format!("input width must be {INPUT_DIM}, got {}", self.input)));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(config("hidden layers must be non-empty with positive widths"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub d_max: f64,
    pub s_max: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            d_max: 100.0,
            s_max: 10.0,
        }
    }
}

/// Fixed affine input scaling `(d / d_scale, s / s_scale, (p - p_offset) / p_scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub d_scale: f64,
    pub s_scale: f64,
    pub p_offset: f64,
    pub p_scale: f64,
}

impl Normalization {
    pub fn for_bounds(bounds: Bounds) -> Self {
        Normalization {
            d_scale: bounds.d_max,
            s_scale: bounds.s_max,
            p_offset: -100.0,
            p_scale: 80.0,
        }
    }

    pub fn apply(&self, x: &FtmMeasurement) -> [f64; 3] {
        [
            x.d_ftm / self.d_scale,
            x.s_ftm / self.s_scale,
            (x.p_ftm - self.p_offset) / self.p_scale,
        ]
    }

    pub fn invert(&self, h: [f64; 3]) -> FtmMeasurement {
        FtmMeasurement {
            d_ftm: h[0] * self.d_scale,
            s_ftm: h[1] * self.s_scale,
            p_ftm: h[2] * self.p_scale + self.p_offset,
        }
    }
}

/// Dense-node representation used by [`RangingModule::forward_on_tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenseMode {
    /// One mul/add node per weight.
    Scalar,
    /// One [`Tape::affine`] node per output unit.
    Fused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangingModule {
    pub shape: Shape,
    pub bounds: Bounds,
    pub normalization: Normalization,
    params: Vec<f64>,
}

/// Activations kept by [`RangingModule::forward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: [f64; 3],
    /// Post-activation per hidden layer.
    hidden: Vec<Vec<f64>>,
    d_sig: f64,
    s_sig: f64,
}

/// Byte offsets of one dense block inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Block {
    weights: usize,
    bias: usize,
    rows: usize,
    cols: usize,
}

impl RangingModule {
    /// Module with all parameters zero.
    pub fn zeros(shape: Shape, bounds: Bounds) -> Result<Self> {
        shape.validate()?;
        if !(bounds.d_max > 0.0 && bounds.s_max > 0.0) {
            return Err(config("output bounds must be positive"));
        }
        Ok(RangingModule {
            params: vec![0.0; shape.parameter_count()],
            normalization: Normalization::for_bounds(bounds),
            shape,
            bounds,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(shape: Shape, bounds: Bounds, rng: &mut R) -> Result<Self> {
        let mut m = Self::zeros(shape, bounds)?;
        for block in m.blocks() {
            let limit = (6.0 / (block.rows + block.cols) as f64).sqrt();
            for w in &mut m.params[block.weights..block.weights + block.rows * block.cols] {
                *w = rng.random_range(-limit..=limit);
            }
        }
        Ok(m)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.shape.parameter_count() {
            return Err(config(format!(
                "parameter count mismatch: model shape needs {}, got {}",
                self.shape.parameter_count(),
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    /// Dense blocks in layout order: hidden layers, distance head, std head.
    fn blocks(&self) -> Vec<Block> {
        let mut out = Vec::with_capacity(self.shape.hidden.len() + 2);
        let mut offset = 0;
        let mut prev = self.shape.input;
        let mut push = |rows: usize, cols: usize, offset: &mut usize| {
            out.push(Block {
                weights: *offset,
                bias: *offset + rows * cols,
                rows,
                cols,
            });
            *offset += rows * cols + rows;
        };
        for &w in &self.shape.hidden {
            push(w, prev, &mut offset);
            prev = w;
        }
        push(1, prev, &mut offset);
        push(1, prev, &mut offset);
        out
    }

    /// Offset of the distance-head bias in the flat parameter vector.
    pub fn distance_bias_index(&self) -> usize {
        self.blocks()[self.shape.hidden.len()].bias
    }

    pub fn std_bias_index(&self) -> usize {
        self.blocks()[self.shape.hidden.len() + 1].bias
    }

    fn dense(&self, block: Block, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let w = &self.params[block.weights..block.bias];
        let b = &self.params[block.bias..block.bias + block.rows];
        for r in 0..block.rows {
            let row = &w[r * block.cols..(r + 1) * block.cols];
            let z: f64 = row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>() + b[r];
            out.push(z);
        }
    }

    pub fn forward(&self, x: &FtmMeasurement) -> (f64, f64) {
        let c = self.forward_cached(x);
        (self.bounds.d_max * c.d_sig, self.bounds.s_max * c.s_sig)
    }

    /// Forward pass that keeps the activations needed by [`Self::backprop`].
    pub fn forward_cached(&self, x: &FtmMeasurement) -> ForwardCache {
        let blocks = self.blocks();
        let nh = self.shape.hidden.len();
        let input = self.normalization.apply(x);
        let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(nh);
        let mut z = Vec::new();
        for (l, block) in blocks[..nh].iter().enumerate() {
            let prev: &[f64] = if l == 0 { &input } else { &hidden[l - 1] };
            self.dense(*block, prev, &mut z);
            hidden.push(z.iter().map(|&v| sigmoid(v)).collect());
        }
        let last = hidden.last().expect("validated non-empty");
        self.dense(blocks[nh], last, &mut z);
        let d_sig = sigmoid(z[0]);
        self.dense(blocks[nh + 1], last, &mut z);
        let s_sig = sigmoid(z[0]);
        ForwardCache {
            input,
            hidden,
            d_sig,
            s_sig,
        }
    }

    pub fn outputs(&self, cache: &ForwardCache) -> (f64, f64) {
        (self.bounds.d_max * cache.d_sig, self.bounds.s_max * cache.s_sig)
    }

    /// Accumulates `grad_d · ∂d̂/∂θ + grad_s · ∂ŝ/∂θ` into `grad`.
    pub fn backprop(&self, cache: &ForwardCache, grad_d: f64, grad_s: f64, grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let blocks = self.blocks();
        let nh = self.shape.hidden.len();
        let last = &cache.hidden[nh - 1];
        // adjoints of the head pre-activations
        let heads = [
            (
                blocks[nh],
                grad_d * self.bounds.d_max * cache.d_sig * (1.0 - cache.d_sig),
            ),
            (
                blocks[nh + 1],
                grad_s * self.bounds.s_max * cache.s_sig * (1.0 - cache.s_sig),
            ),
        ];
        let mut upstream = vec![0.0; last.len()];
        for (block, dz) in heads {
            if dz == 0.0 {
                continue;
            }
            grad[block.bias] += dz;
            for (j, &h) in last.iter().enumerate() {
                grad[block.weights + j] += dz * h;
                upstream[j] += dz * self.params[block.weights + j];
            }
        }
        for l in (0..nh).rev() {
            let block = blocks[l];
            let h = &cache.hidden[l];
            let prev: &[f64] = if l == 0 { &cache.input } else { &cache.hidden[l - 1] };
            let mut down = vec![0.0; block.cols];
            for r in 0..block.rows {
                let dz = upstream[r] * h[r] * (1.0 - h[r]);
                if dz == 0.0 {
                    continue;
                }
                grad[block.bias + r] += dz;
                let w0 = block.weights + r * block.cols;
                for c in 0..block.cols {
                    grad[w0 + c] += dz * prev[c];
                    down[c] += dz * self.params[w0 + c];
                }
            }
            upstream = down;
        }
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn register<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.params.iter().map(|&p| tape.var(p)).collect()
    }

    /// Taped forward pass given the leaves from [`Self::register`].
    pub fn forward_on_tape<'t>(
        &self,
        tape: &'t Tape,
        leaves: &[Var<'t>],
        x: &FtmMeasurement,
        mode: DenseMode,
    ) -> Result<(Var<'t>, Var<'t>)> {
        if leaves.len() != self.params.len() {
            return Err(config("leaf count does not match the parameter vector"));
        }
        let blocks = self.blocks();
        let nh = self.shape.hidden.len();
        let mut h: Vec<Var<'t>> = self.normalization.apply(x).iter().map(|&v| tape.constant(v)).collect();
        let layer = |block: Block, input: &[Var<'t>]| -> Vec<Var<'t>> {
            (0..block.rows)
                .map(|r| {
                    let w = &leaves[block.weights + r * block.cols..block.weights + (r + 1) * block.cols];
                    let b = leaves[block.bias + r];
                    match mode {
                        DenseMode::Fused => tape.affine(w, input, b),
                        DenseMode::Scalar => w.iter().zip(input).fold(b, |acc, (wi, xi)| acc + *wi * *xi),
                    }
                })
                .collect()
        };
        for block in &blocks[..nh] {
            h = layer(*block, &h).into_iter().map(|z| z.sigmoid()).collect();
        }
        let d = layer(blocks[nh], &h)[0].sigmoid() * self.bounds.d_max;
        let s = layer(blocks[nh + 1], &h)[0].sigmoid() * self.bounds.s_max;
        Ok((d, s))
    }

    /// Generic forward over any [`Scalar`] parameter representation.
    pub fn forward_generic<S: Scalar>(&self, params: &[S], x: &FtmMeasurement) -> (S, S) {
        assert_eq!(params.len(), self.params.len());
        let blocks = self.blocks();
        let nh = self.shape.hidden.len();
        let like = params[0];
        let mut h: Vec<S> = self.normalization.apply(x).iter().map(|&v| like.lift(v)).collect();
        let layer = |block: Block, input: &[S]| -> Vec<S> {
            (0..block.rows)
                .map(|r| {
                    let w = &params[block.weights + r * block.cols..block.weights + (r + 1) * block.cols];
                    w.iter()
                        .zip(input)
                        .fold(params[block.bias + r], |acc, (wi, xi)| acc + *wi * *xi)
                })
                .collect()
        };
        for block in &blocks[..nh] {
            h = layer(*block, &h).into_iter().map(|z| z.sigmoid()).collect();
        }
        let d = layer(blocks[nh], &h)[0].sigmoid() * self.bounds.d_max;
        let s = layer(blocks[nh + 1], &h)[0].sigmoid() * self.bounds.s_max;
        (d, s)
    }

    pub fn to_file(&self) -> ModelFile {
        let blocks = self.blocks();
        let nh = self.shape.hidden.len();
        let dense = |b: Block| DenseParams {
            weights: self.params[b.weights..b.bias].to_vec(),
            biases: self.params[b.bias..b.bias + b.rows].to_vec(),
        };
        ModelFile {
            shape: self.shape.clone(),
            normalization: self.normalization,
            bounds: self.bounds,
            parameters: ModelParameters {
                layers: blocks[..nh].iter().map(|b| dense(*b)).collect(),
                distance_head: dense(blocks[nh]),
                std_head: dense(blocks[nh + 1]),
            },
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        let mut m = RangingModule::zeros(file.shape, file.bounds)?;
        m.normalization = file.normalization;
        let blocks = m.blocks();
        let nh = m.shape.hidden.len();
        let p = file.parameters;
        if p.layers.len() != nh {
            return Err(config(format!(
                "model declares {nh} hidden layers but stores {}",
                p.layers.len()
            )));
        }
        let all = p.layers.iter().chain([&p.distance_head, &p.std_head]);
        let mut flat = Vec::with_capacity(m.params.len());
        for (i, (dense, block)) in all.zip(&blocks).enumerate() {
            if dense.weights.len() != block.rows * block.cols || dense.biases.len() != block.rows {
                return Err(config(format!(
                    "dense block {i}: expected {}x{} weights and {} biases",
                    block.rows, block.cols, block.rows
                )));
            }
            flat.extend_from_slice(&dense.weights);
            flat.extend_from_slice(&dense.biases);
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(config("model parameters must be finite"));
        }
        m.params = flat;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file()).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Self::from_file(file)
    }
}

/// On-disk model layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub shape: Shape,
    pub normalization: Normalization,
    pub bounds: Bounds,
    pub parameters: ModelParameters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    pub layers: Vec<DenseParams>,
    pub distance_head: DenseParams,
    pub std_head: DenseParams,
}

/// Row-major weights and biases of one dense block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_shape() -> Shape {
        Shape {
            input: 3,
            hidden: vec![6, 5],
        }
    }

    fn x(d: f64, s: f64, p: f64) -> FtmMeasurement {
        FtmMeasurement {
            d_ftm: d,
            s_ftm: s,
            p_ftm: p,
        }
    }

    #[test]
    fn zero_parameters_give_half_bounds() {
        let m = RangingModule::zeros(Shape::default(), Bounds::default()).unwrap();
        let (d, s) = m.forward(&x(12.0, 0.4, -60.0));
        assert_eq!((d, s), (50.0, 5.0));
    }

    #[test]
    fn distance_bias_slope_at_zero_parameters() {
        let m = RangingModule::zeros(small_shape(), Bounds::default()).unwrap();
        let tape = Tape::new();
        let leaves = m.register(&tape);
        let (d, _) = m
            .forward_on_tape(&tape, &leaves, &x(3.0, 1.0, -50.0), DenseMode::Scalar)
            .unwrap();
        let g = tape.backward(d).unwrap();
        assert!((g.wrt(leaves[m.distance_bias_index()]) - 25.0).abs() < 1e-12);
    }

    #[test]
    fn init_is_seeded_glorot() {
        let a = RangingModule::init(Shape::default(), Bounds::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = RangingModule::init(Shape::default(), Bounds::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        let blocks = a.blocks();
        let first = blocks[0];
        let limit = (6.0f64 / 103.0).sqrt();
        assert!((limit - 0.2414).abs() < 1e-4);
        assert!(a.params[first.weights..first.bias].iter().all(|w| w.abs() <= limit));
        for b in &blocks {
            assert!(a.params[b.bias..b.bias + b.rows].iter().all(|&v| v == 0.0));
        }
        assert_eq!(a.params.len(), 3 * 100 + 100 + 100 * 100 + 100 + 2 * 101);
    }

    #[test]
    fn normalization_endpoints_and_inverse() {
        let n = Normalization::for_bounds(Bounds::default());
        assert_eq!(n.apply(&x(100.0, 10.0, -20.0)), [1.0, 1.0, 1.0]);
        assert_eq!(n.apply(&x(0.0, 0.0, -100.0)), [0.0, 0.0, 0.0]);
        let v = x(17.3, 0.9, -71.2);
        let back = n.invert(n.apply(&v));
        assert!((back.d_ftm - v.d_ftm).abs() < 1e-12 && (back.p_ftm - v.p_ftm).abs() < 1e-12);
    }

    #[test]
    fn routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = RangingModule::init(small_shape(), Bounds::default(), &mut rng).unwrap();
        let input = x(23.0, 0.7, -75.0);
        let plain = m.forward(&input);
        let generic = m.forward_generic(m.params(), &input);
        let tape = Tape::new();
        let leaves = m.register(&tape);
        let (ds, ss) = m.forward_on_tape(&tape, &leaves, &input, DenseMode::Scalar).unwrap();
        let (df, sf) = m.forward_on_tape(&tape, &leaves, &input, DenseMode::Fused).unwrap();
        for (a, b) in [
            (plain.0, ds.value()),
            (plain.1, ss.value()),
            (generic.0, df.value()),
            (plain.0, generic.0),
        ] {
            assert!((a - b).abs() < 1e-12);
        }

        // gradients: scalar tape vs fused tape vs hand backprop
        let root_s = ds * 0.7 + ss * -1.3;
        let root_f = df * 0.7 + sf * -1.3;
        let gs = tape.backward(root_s).unwrap();
        let gf = tape.backward(root_f).unwrap();
        let mut manual = vec![0.0; m.params.len()];
        m.backprop(&m.forward_cached(&input), 0.7, -1.3, &mut manual);
        for (i, leaf) in leaves.iter().enumerate() {
            assert!((gs.wrt(*leaf) - gf.wrt(*leaf)).abs() < 1e-10);
            assert!((gs.wrt(*leaf) - manual[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = RangingModule::init(small_shape(), Bounds::default(), &mut rng).unwrap();
        for input in [x(5.0, 0.3, -45.0), x(40.0, 2.0, -88.0)] {
            let mut grad = vec![0.0; m.params.len()];
            m.backprop(&m.forward_cached(&input), 1.0, 0.0, &mut grad);
            let h = 1e-5;
            for (i, &g) in grad.iter().enumerate() {
                let mut p = m.clone();
                p.params[i] += h;
                let up = p.forward(&input).0;
                p.params[i] -= 2.0 * h;
                let down = p.forward(&input).0;
                let fd = (up - down) / (2.0 * h);
                let denom = fd.abs().max(g.abs()).max(1e-6);
                assert!((fd - g).abs() / denom < 1e-4, "param {i}: fd {fd} vs {g}");
            }
        }
    }

    #[test]
    fn model_file_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = RangingModule::init(small_shape(), Bounds::default(), &mut rng).unwrap();
        #[allow(clippy::excessive_precision)]
        let scale = 80.000000000000014;
        m.normalization.p_scale = scale;
        let text = serde_json::to_string(&m.to_file()).unwrap();
        let back = RangingModule::from_file(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, m);
        for (a, b) in back.params.iter().zip(&m.params) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.normalization.p_scale.to_bits(), m.normalization.p_scale.to_bits());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = RangingModule::zeros(small_shape(), Bounds::default()).unwrap();
        let mut file = m.to_file();
        file.parameters.layers[1].biases.pop();
        assert!(matches!(RangingModule::from_file(file), Err(Error::Config(_))));
        let mut file = m.to_file();
        file.shape.input = 4;
        assert!(RangingModule::from_file(file).is_err());
        let mut file = m.to_file();
        file.parameters.layers.pop();
        assert!(RangingModule::from_file(file).is_err());
    }

    proptest::proptest! {
        #[test]
        fn outputs_always_within_bounds(
            d in -1e6f64..1e6, s in -1e6f64..1e6, p in -1e6f64..1e6, seed: u64
        ) {
            let m = RangingModule::init(small_shape(), Bounds::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let (dh, sh) = m.forward(&x(d, s, p));
            proptest::prop_assert!(dh > 0.0 && dh < 100.0);
            proptest::prop_assert!(sh > 0.0 && sh < 10.0);
        }
    }
}
