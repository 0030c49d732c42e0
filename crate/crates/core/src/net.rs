//! The matching network: a fully connected trunk over the encoded profile,
//! whose output layer yields two score tensors that are masked, normalized
//! along opposite axes, and combined by an elementwise minimum.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::rc::Rc;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{leaky_relu, softplus, SparseMap, Tape, Var};
use crate::error::{Error, Result};
use crate::mechanisms::{Mechanism, RandomizedMatching};
use crate::prefs::{EncodedProfile, PreferenceProfile};

/// Negative-side slope of the hidden activations.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Rows per chunk in batched forward passes.
const FORWARD_CHUNK: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetworkDims {
    pub n: usize,
    pub m: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
}

impl NetworkDims {
    pub fn new(n: usize, m: usize, hidden_layers: usize, hidden_units: usize) -> Result<Self> {
        let dims = Self {
            n,
            m,
            hidden_layers,
            hidden_units,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::Dimension("market needs at least one worker and one firm".into()));
        }
        if self.hidden_layers == 0 || self.hidden_units == 0 {
            return Err(Error::Dimension(
                "network needs at least one hidden layer with one unit".into(),
            ));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        2 * self.n * self.m
    }

    /// Width of the worker-side score block, `(n + 1) × m`.
    fn column_block(&self) -> usize {
        (self.n + 1) * self.m
    }

    /// Width of the firm-side score block, `n × (m + 1)`.
    fn row_block(&self) -> usize {
        self.n * (self.m + 1)
    }

    pub fn output_width(&self) -> usize {
        self.column_block() + self.row_block()
    }

    /// `(out, in)` for every layer, output layer last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let j = self.hidden_units;
        let mut shapes = vec![(j, self.input_width())];
        shapes.extend(std::iter::repeat((j, j)).take(self.hidden_layers - 1));
        shapes.push((self.output_width(), j));
        shapes
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `out × in`; the layer computes `x · Wᵀ + b`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<Layer>,
}

impl NetworkParams {
    pub fn zeros(dims: &NetworkDims) -> Self {
        let layers = dims
            .layer_shapes()
            .into_iter()
            .map(|(o, i)| Layer {
                weight: Array2::zeros((o, i)),
                bias: Array1::zeros(o),
            })
            .collect();
        Self { layers }
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Weights then bias of each layer, in layer order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                self.len(),
                flat.len()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *w = flat[at];
                at += 1;
            }
        }
        Ok(())
    }

    pub fn check(&self, dims: &NetworkDims) -> Result<()> {
        let shapes = dims.layer_shapes();
        if shapes.len() != self.layers.len() {
            return Err(Error::Dimension(format!(
                "expected {} layers, found {}",
                shapes.len(),
                self.layers.len()
            )));
        }
        for (k, (l, &(o, i))) in self.layers.iter().zip(&shapes).enumerate() {
            if l.weight.dim() != (o, i) || l.bias.len() != o {
                return Err(Error::Dimension(format!(
                    "layer {k} is {:?} + {}, expected ({o}, {i}) + {o}",
                    l.weight.dim(),
                    l.bias.len()
                )));
            }
        }
        if self.layers.iter().any(|l| {
            l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite())
        }) {
            return Err(Error::Numeric("parameters contain non-finite entries".into()));
        }
        Ok(())
    }

    /// Rounds every entry through `f32`, as a checkpoint would.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        for l in &mut out.layers {
            l.weight.mapv_inplace(|v| v as f32 as f64);
            l.bias.mapv_inplace(|v| v as f32 as f64);
        }
        out
    }
}

/// Uniform weights in `±√(1/fan_in)` and zero biases, drawn from a
/// generator seeded with `seed`.
pub fn init_params(dims: &NetworkDims, seed: u64) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetworkParams::zeros(dims);
    for l in &mut params.layers {
        let bound = (1.0 / l.weight.ncols() as f64).sqrt();
        l.weight.mapv_inplace(|_| rng.gen_range(-bound..bound));
    }
    params
}

/// Acceptability mask over `(W ∪ {⊥}) × (F ∪ {⊥})`; the `⊥` row and column
/// are all ones.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskMatrix {
    beta: Array2<f64>,
}

impl MaskMatrix {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.beta
    }

    pub fn get(&self, w: usize, f: usize) -> f64 {
        self.beta[[w, f]]
    }

    pub fn n(&self) -> usize {
        self.beta.nrows() - 1
    }

    pub fn m(&self) -> usize {
        self.beta.ncols() - 1
    }

    /// The mask flattened into a single row.
    pub fn as_row(&self) -> ArrayView2<'_, f64> {
        self.beta
            .view()
            .into_shape_with_order((1, self.beta.len()))
            .expect("mask is stored contiguously")
    }
}

pub fn build_mask(profile: &PreferenceProfile) -> MaskMatrix {
    let (n, m) = (profile.n(), profile.m());
    let mut beta = Array2::ones((n + 1, m + 1));
    for w in 0..n {
        for f in 0..m {
            if !profile.mutually_acceptable(w, f) {
                beta[[w, f]] = 0.0;
            }
        }
    }
    MaskMatrix { beta }
}

fn trunk(params: &NetworkParams, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let last = params.layers.len() - 1;
    let mut h = x.to_owned();
    for (k, layer) in params.layers.iter().enumerate() {
        h = h.dot(&layer.weight.t()) + &layer.bias;
        if k < last {
            h.mapv_inplace(|v| leaky_relu(v, LEAKY_SLOPE));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite activation in layer {k}")));
        }
    }
    Ok(h)
}

/// Masked, normalized, min-combined marginals for one row of trunk output.
/// `mask` is a flattened `(n + 1) × (m + 1)` acceptability matrix.
fn head(
    dims: &NetworkDims,
    scores: &[f64],
    mask: &[f64],
    out: &mut [f64],
    scratch: &mut Vec<f64>,
) -> Result<()> {
    let (n, m) = (dims.n, dims.m);
    let (cb, rb) = (dims.column_block(), dims.row_block());
    scratch.clear();
    scratch.resize(cb + rb + m + n, 0.0);
    let (col_bar, rest) = scratch.split_at_mut(cb);
    let (row_bar, rest) = rest.split_at_mut(rb);
    let (col_sum, row_sum) = rest.split_at_mut(m);
    // worker-side block, normalized down each firm's column over W ∪ {⊥}
    for w in 0..=n {
        for f in 0..m {
            col_bar[w * m + f] = softplus(scores[w * m + f]) * mask[w * (m + 1) + f];
        }
    }
    // firm-side block, normalized along each worker's row over F ∪ {⊥}
    for w in 0..n {
        for f in 0..=m {
            let k = w * (m + 1) + f;
            row_bar[k] = softplus(scores[cb + k]) * mask[k];
        }
    }
    for f in 0..m {
        col_sum[f] = (0..=n).fold(0.0, |acc, w| acc + col_bar[w * m + f]);
    }
    for w in 0..n {
        row_sum[w] = (0..=m).fold(0.0, |acc, f| acc + row_bar[w * (m + 1) + f]);
    }
    if col_sum.iter().chain(row_sum.iter()).any(|&d| d <= 0.0) {
        return Err(Error::Numeric("normalizer underflowed to zero".into()));
    }
    for w in 0..n {
        for f in 0..m {
            let a = col_bar[w * m + f] / col_sum[f];
            let b = row_bar[w * (m + 1) + f] / row_sum[w];
            out[w * m + f] = if a <= b { a } else { b };
        }
    }
    Ok(())
}

/// Marginals for a batch of encoded inputs (`B × 2nm`) and flattened masks
/// (`B × (n+1)(m+1)`), returned as `B × nm` in row-major `(w, f)` order.
pub fn forward_raw(
    params: &NetworkParams,
    dims: &NetworkDims,
    inputs: ArrayView2<f64>,
    masks: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    check_batch(dims, inputs, masks)?;
    let nm = dims.n * dims.m;
    let mut out = Array2::zeros((inputs.nrows(), nm));
    let mut scratch = Vec::new();
    let mut start = 0;
    while start < inputs.nrows() {
        let end = (start + FORWARD_CHUNK).min(inputs.nrows());
        let scores = trunk(params, inputs.slice(s![start..end, ..]))?;
        for (i, row) in scores.axis_iter(Axis(0)).enumerate() {
            let k = start + i;
            let mask = masks.row(k);
            let mut r = out.row_mut(k);
            head(
                dims,
                row.as_slice().expect("standard layout"),
                mask.as_slice().expect("standard layout"),
                r.as_slice_mut().expect("standard layout"),
                &mut scratch,
            )?;
        }
        start = end;
    }
    Ok(out)
}

fn check_batch(dims: &NetworkDims, inputs: ArrayView2<f64>, masks: ArrayView2<f64>) -> Result<()> {
    let mask_width = (dims.n + 1) * (dims.m + 1);
    if inputs.ncols() != dims.input_width()
        || masks.ncols() != mask_width
        || inputs.nrows() != masks.nrows()
        || !masks.is_standard_layout()
    {
        return Err(Error::Dimension(format!(
            "inputs are {:?} and masks {:?}, network expects widths {} and {}",
            inputs.dim(),
            masks.dim(),
            dims.input_width(),
            mask_width
        )));
    }
    Ok(())
}

pub fn forward(
    params: &NetworkParams,
    dims: &NetworkDims,
    enc: &EncodedProfile,
    mask: &MaskMatrix,
) -> Result<RandomizedMatching> {
    if enc.n() != dims.n || enc.m() != dims.m || mask.n() != dims.n || mask.m() != dims.m {
        return Err(Error::Dimension(format!(
            "network is {}x{}, profile is {}x{}",
            dims.n,
            dims.m,
            enc.n(),
            enc.m()
        )));
    }
    let x = Array2::from_shape_vec((1, dims.input_width()), enc.to_input())
        .expect("encoding width");
    let r = forward_raw(params, dims, x.view(), mask.as_row())?;
    RandomizedMatching::new(
        r.into_shape_with_order((dims.n, dims.m))
            .expect("one row of n·m marginals"),
    )
}

/// Stacked encoder inputs and flattened masks for a profile batch.
pub fn batch_inputs(
    dims: &NetworkDims,
    profiles: &[PreferenceProfile],
) -> Result<(Array2<f64>, Array2<f64>)> {
    let width = dims.input_width();
    let mask_width = (dims.n + 1) * (dims.m + 1);
    let mut data = Vec::with_capacity(profiles.len() * width);
    let mut masks = Vec::with_capacity(profiles.len() * mask_width);
    for (i, p) in profiles.iter().enumerate() {
        if p.n() != dims.n || p.m() != dims.m {
            return Err(Error::at_profile(
                i,
                Error::Dimension(format!(
                    "network is {}x{}, profile is {}x{}",
                    dims.n,
                    dims.m,
                    p.n(),
                    p.m()
                )),
            ));
        }
        data.extend(p.encode().to_input());
        masks.extend(build_mask(p).beta.iter());
    }
    let x = Array2::from_shape_vec((profiles.len(), width), data).expect("stacked widths");
    let masks =
        Array2::from_shape_vec((profiles.len(), mask_width), masks).expect("stacked widths");
    Ok((x, masks))
}

pub fn forward_profiles(
    params: &NetworkParams,
    dims: &NetworkDims,
    profiles: &[PreferenceProfile],
) -> Result<Vec<RandomizedMatching>> {
    let (x, masks) = batch_inputs(dims, profiles)?;
    let r = forward_raw(params, dims, x.view(), masks.view())?;
    r.axis_iter(Axis(0))
        .map(|row| {
            RandomizedMatching::new(
                row.to_owned()
                    .into_shape_with_order((dims.n, dims.m))
                    .expect("n·m marginals"),
            )
        })
        .collect()
}

/// Tape handles for every parameter tensor, biases as `1 × out` rows.
pub struct ParamVars {
    pub layers: Vec<(Var, Var)>,
}

impl ParamVars {
    pub fn register(tape: &mut Tape, params: &NetworkParams) -> Result<Self> {
        let mut layers = Vec::with_capacity(params.layers.len());
        for l in &params.layers {
            let w = tape.leaf(l.weight.clone())?;
            let b = tape.leaf(l.bias.clone().insert_axis(Axis(0)))?;
            layers.push((w, b));
        }
        Ok(Self { layers })
    }

    /// Gradients shaped like `NetworkParams`, flattened in the same order.
    pub fn flat_grads(&self, grads: &mut crate::autodiff::Gradients) -> Vec<f64> {
        let mut out = Vec::new();
        for &(w, b) in &self.layers {
            out.extend(grads.take(w).iter());
            out.extend(grads.take(b).iter());
        }
        out
    }
}

fn copy_map(
    input: (usize, usize),
    rows: usize,
    width: usize,
    source: impl Fn(usize, usize) -> usize,
) -> SparseMap {
    let mut b = SparseMap::builder(input, (rows, width));
    for i in 0..rows {
        for k in 0..width {
            b.push(0.0, [(source(i, k), 1.0)]);
        }
    }
    b.build()
}

/// Nodes of a recorded forward pass.
pub struct ForwardNodes {
    /// `B × nm` marginals.
    pub r: Var,
    /// Hidden-layer inputs to the leaky ReLU, one per hidden layer.
    pub pre_activations: Vec<Var>,
    /// The two normalized score blocks compared by the final minimum.
    pub min_operands: (Var, Var),
}

/// Records the network on `tape` for a stacked batch. Values match
/// [`forward_raw`].
pub fn record_forward(
    tape: &mut Tape,
    vars: &ParamVars,
    dims: &NetworkDims,
    inputs: Array2<f64>,
    masks: ArrayView2<f64>,
) -> Result<ForwardNodes> {
    let (n, m) = (dims.n, dims.m);
    let batch = inputs.nrows();
    check_batch(dims, inputs.view(), masks)?;
    let mut h = tape.leaf(inputs)?;
    let last = vars.layers.len() - 1;
    let mut pre_activations = Vec::with_capacity(last);
    for (k, &(w, b)) in vars.layers.iter().enumerate() {
        let z = tape.matmul_t(h, w)?;
        h = tape.add_bias(z, b)?;
        if k < last {
            pre_activations.push(h);
            h = tape.leaky_relu(h, LEAKY_SLOPE)?;
        }
    }
    let out_w = dims.output_width();
    let (cb, rb) = (dims.column_block(), dims.row_block());

    let col_scores = tape.affine(h, Rc::new(copy_map((batch, out_w), batch, cb, |i, k| i * out_w + k)))?;
    let row_scores =
        tape.affine(h, Rc::new(copy_map((batch, out_w), batch, rb, |i, k| i * out_w + cb + k)))?;

    let mut col_mask = Array2::zeros((batch, cb));
    let mut row_mask = Array2::zeros((batch, rb));
    for (i, mask) in masks.axis_iter(Axis(0)).enumerate() {
        for w in 0..=n {
            for f in 0..m {
                col_mask[[i, w * m + f]] = mask[w * (m + 1) + f];
            }
        }
        for w in 0..n {
            for f in 0..=m {
                row_mask[[i, w * (m + 1) + f]] = mask[w * (m + 1) + f];
            }
        }
    }
    let col_sp = tape.softplus(col_scores)?;
    let col_bar = tape.mul_const(col_sp, Rc::new(col_mask))?;
    let row_sp = tape.softplus(row_scores)?;
    let row_bar = tape.mul_const(row_sp, Rc::new(row_mask))?;

    // column sums over W ∪ {⊥}, then broadcast back over the block
    let mut sums = SparseMap::builder((batch, cb), (batch, m));
    for i in 0..batch {
        for f in 0..m {
            sums.push(0.0, (0..=n).map(|w| (i * cb + w * m + f, 1.0)));
        }
    }
    let col_sum = tape.affine(col_bar, Rc::new(sums.build()))?;
    let col_den = tape.affine(col_sum, Rc::new(copy_map((batch, m), batch, cb, |i, k| i * m + k % m)))?;
    let col_hat = tape.div(col_bar, col_den)?;

    let mut sums = SparseMap::builder((batch, rb), (batch, n));
    for i in 0..batch {
        for w in 0..n {
            sums.push(0.0, (0..=m).map(|f| (i * rb + w * (m + 1) + f, 1.0)));
        }
    }
    let row_sum = tape.affine(row_bar, Rc::new(sums.build()))?;
    let row_den =
        tape.affine(row_sum, Rc::new(copy_map((batch, n), batch, rb, |i, k| i * n + k / (m + 1))))?;
    let row_hat = tape.div(row_bar, row_den)?;

    let nm = n * m;
    let a = tape.affine(col_hat, Rc::new(copy_map((batch, cb), batch, nm, |i, k| i * cb + k)))?;
    let b = tape.affine(
        row_hat,
        Rc::new(copy_map((batch, rb), batch, nm, |i, k| {
            i * rb + (k / m) * (m + 1) + k % m
        })),
    )?;
    Ok(ForwardNodes {
        r: tape.min(a, b)?,
        pre_activations,
        min_operands: (a, b),
    })
}

/// Binary checkpoint: header, then each layer's weights and biases as `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub dims: NetworkDims,
    pub lambda: f64,
    pub seed: u64,
    pub params: NetworkParams,
}

const MAGIC: &[u8; 4] = b"MTCH";
const VERSION: u32 = 1;

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b) as f64)
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        self.params.check(&self.dims)?;
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Checkpoint(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        let d = &self.dims;
        let field = |v: usize| -> Result<[u8; 4]> {
            u32::try_from(v)
                .map(u32::to_le_bytes)
                .map_err(|_| Error::Checkpoint(format!("{v} does not fit the header")))
        };
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for v in [d.n, d.m, d.hidden_layers, d.hidden_units] {
            w.write_all(&field(v)?)?;
        }
        w.write_all(&((self.lambda * 1e6).round() as u32).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for l in &self.params.layers {
            for v in l.weight.iter().chain(l.bias.iter()) {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let mut header = [0usize; 4];
        for h in &mut header {
            *h = read_u32(r)? as usize;
        }
        let dims = NetworkDims::new(header[0], header[1], header[2], header[3])
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let lambda = read_u32(r)? as f64 / 1e6;
        let seed = read_u64(r)?;
        let mut params = NetworkParams::zeros(&dims);
        for l in &mut params.layers {
            for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *v = read_f32(r)?;
            }
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after parameters".into()));
        }
        params.check(&dims)?;
        Ok(Self {
            dims,
            lambda,
            seed,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

/// A trained (or initialized) network used as a mechanism.
#[derive(Clone, Debug)]
pub struct NeuralMechanism {
    pub dims: NetworkDims,
    pub params: NetworkParams,
    pub label: String,
}

impl NeuralMechanism {
    pub fn new(dims: NetworkDims, params: NetworkParams, label: impl Into<String>) -> Result<Self> {
        params.check(&dims)?;
        Ok(Self {
            dims,
            params,
            label: label.into(),
        })
    }

    pub fn from_checkpoint(ck: Checkpoint, label: impl Into<String>) -> Result<Self> {
        Self::new(ck.dims, ck.params, label)
    }
}

impl Mechanism for NeuralMechanism {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn evaluate(&self, profile: &PreferenceProfile) -> Result<RandomizedMatching> {
        forward(&self.params, &self.dims, &profile.encode(), &build_mask(profile))
    }

    fn evaluate_batch(&self, profiles: &[PreferenceProfile]) -> Result<Vec<RandomizedMatching>> {
        forward_profiles(&self.params, &self.dims, profiles)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prefs::{example_market, PreferenceOrder};

    fn full_profile(size: usize) -> PreferenceProfile {
        let order: Vec<usize> = (0..size).collect();
        PreferenceProfile::from_full_rankings(&vec![order.clone(); size], &vec![order; size])
            .unwrap()
    }

    #[test]
    fn dims_and_shapes() {
        let d = NetworkDims::new(3, 4, 2, 8).unwrap();
        assert_eq!(d.input_width(), 24);
        assert_eq!(d.output_width(), 4 * 4 + 3 * 5);
        assert_eq!(d.layer_shapes(), vec![(8, 24), (8, 8), (31, 8)]);
        assert!(NetworkDims::new(3, 3, 0, 8).is_err());
    }

    #[test]
    fn masks() {
        assert!(build_mask(&example_market()).matrix().iter().all(|&b| b == 1.0));
        let p = example_market()
            .with_report(crate::prefs::AgentId::worker(0), PreferenceOrder::truncated(&[], 3).unwrap())
            .unwrap();
        let mask = build_mask(&p);
        assert_eq!(mask.matrix().row(0).to_vec(), vec![0.0, 0.0, 0.0, 1.0]);
        assert!(mask.matrix().row(3).iter().all(|&b| b == 1.0));
    }

    #[test]
    fn zero_params_give_uniform_fifth() {
        let d = NetworkDims::new(4, 4, 2, 8).unwrap();
        let p = full_profile(4);
        let r = forward(&NetworkParams::zeros(&d), &d, &p.encode(), &build_mask(&p)).unwrap();
        for v in r.matrix() {
            assert!((v - 0.2).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_params_with_masked_row() {
        let d = NetworkDims::new(3, 3, 1, 4).unwrap();
        let p = example_market()
            .with_report(crate::prefs::AgentId::worker(0), PreferenceOrder::truncated(&[], 3).unwrap())
            .unwrap();
        let r = forward(&NetworkParams::zeros(&d), &d, &p.encode(), &build_mask(&p)).unwrap();
        assert!(r.matrix().row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_by_one_zero_params() {
        let d = NetworkDims::new(1, 1, 1, 3).unwrap();
        let p = full_profile(1);
        let r = forward(&NetworkParams::zeros(&d), &d, &p.encode(), &build_mask(&p)).unwrap();
        assert!((r.get(0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn init_is_seeded() {
        let d = NetworkDims::new(2, 2, 2, 4).unwrap();
        assert_eq!(init_params(&d, 7), init_params(&d, 7));
        assert_ne!(init_params(&d, 7), init_params(&d, 8));
        let p = init_params(&d, 7);
        assert!(p.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        let bound = (1.0f64 / 8.0).sqrt();
        assert!(p.layers[0].weight.iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn flatten_round_trip() {
        let d = NetworkDims::new(2, 3, 2, 5).unwrap();
        let p = init_params(&d, 1);
        let mut q = NetworkParams::zeros(&d);
        q.assign_flat(&p.flatten()).unwrap();
        assert_eq!(p, q);
        assert!(q.assign_flat(&[0.0]).is_err());
    }

    #[test]
    fn tape_forward_matches_direct_forward() {
        let d = NetworkDims::new(3, 3, 2, 6).unwrap();
        let params = init_params(&d, 3);
        let profiles = crate::prefs::DistributionConfig::uncorrelated(3, 3, 0.5, 11)
            .sample_range(0, 5)
            .unwrap();
        let (x, masks) = batch_inputs(&d, &profiles).unwrap();
        let direct = forward_raw(&params, &d, x.view(), masks.view()).unwrap();
        let mut tape = Tape::new();
        let vars = ParamVars::register(&mut tape, &params).unwrap();
        let r = record_forward(&mut tape, &vars, &d, x, masks.view()).unwrap().r;
        for (a, b) in tape.value(r).iter().zip(direct.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip_and_version_check() {
        let d = NetworkDims::new(2, 2, 2, 4).unwrap();
        let ck = Checkpoint {
            dims: d,
            lambda: 0.3,
            seed: 42,
            params: init_params(&d, 5),
        };
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"MTCH");
        assert_eq!(buf.len(), 4 + 4 * 6 + 8 + 4 * ck.params.len());
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.dims, d);
        assert_eq!(back.lambda, 0.3);
        assert_eq!(back.seed, 42);
        assert_eq!(back.params, ck.params.quantized());

        let mut bad = buf.clone();
        bad[4] = 2;
        let err = Checkpoint::read_from(&mut bad.as_slice()).unwrap_err();
        assert!(err.to_string().contains("version 2"));
        assert!(Checkpoint::read_from(&mut &buf[..20]).is_err());
    }
}
