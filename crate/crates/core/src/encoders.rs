//! Encoder families, their forward maps and exact parameter VJPs, and the
//! tilting similarity matrices built from embedded batches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, MatrixJson, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative at the pre-activation `x`; the ReLU kink gets 0.
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EncoderFamily {
    /// `x ↦ W x`.
    Linear { n_in: usize, n_e: usize },
    /// `x ↦ W x + b`.
    Affine { n_in: usize, n_e: usize },
    /// Affine layers `[n_in, h_1, …, n_e]` with the activation between them.
    Mlp {
        layer_sizes: Vec<usize>,
        activation: Activation,
    },
    /// Integer label in a single input column ↦ standard basis vector.
    OneHot { n_classes: usize },
    /// Fixed table `T ∈ ℝ^{n_items×n_e}`; `x ↦ Tᵀ x`, so one-hot inputs look up rows.
    FrozenTable { n_items: usize, n_e: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub family: EncoderFamily,
    #[serde(default)]
    pub normalized: bool,
}

/// Shape of one parameter block in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockShape {
    pub rows: usize,
    pub cols: usize,
}

/// Flat parameter vector with a per-block shape table. Serializes as a list
/// of matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsJson", into = "ParamsJson")]
pub struct EncoderParams {
    data: Vec<f64>,
    shapes: Vec<BlockShape>,
}

#[derive(Serialize, Deserialize)]
struct ParamsJson {
    blocks: Vec<MatrixJson>,
}

impl From<EncoderParams> for ParamsJson {
    fn from(p: EncoderParams) -> Self {
        let mut off = 0;
        let blocks = p
            .shapes
            .iter()
            .map(|s| {
                let n = s.rows * s.cols;
                let data = p.data[off..off + n].to_vec();
                off += n;
                MatrixJson {
                    rows: s.rows,
                    cols: s.cols,
                    data,
                }
            })
            .collect();
        ParamsJson { blocks }
    }
}

impl TryFrom<ParamsJson> for EncoderParams {
    type Error = Error;

    fn try_from(j: ParamsJson) -> Result<Self> {
        let mut data = Vec::new();
        let mut shapes = Vec::new();
        for b in j.blocks {
            if b.rows * b.cols != b.data.len() || b.data.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid("parameter block has wrong length or non-finite entries"));
            }
            shapes.push(BlockShape {
                rows: b.rows,
                cols: b.cols,
            });
            data.extend(b.data);
        }
        Ok(EncoderParams { data, shapes })
    }
}

impl EncoderParams {
    pub fn from_flat(data: Vec<f64>, shapes: Vec<BlockShape>) -> Result<Self> {
        let n: usize = shapes.iter().map(|s| s.rows * s.cols).sum();
        if n != data.len() {
            return Err(Error::dims("EncoderParams", n, data.len()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        Ok(EncoderParams { data, shapes })
    }

    /// Parameters from whole blocks, in layout order.
    pub fn from_blocks(blocks: &[Matrix]) -> Result<Self> {
        let mut data = Vec::new();
        let mut shapes = Vec::new();
        for b in blocks {
            data.extend(MatrixJson::from(b).data);
            shapes.push(BlockShape {
                rows: b.nrows(),
                cols: b.ncols(),
            });
        }
        Self::from_flat(data, shapes)
    }

    pub fn empty() -> Self {
        EncoderParams {
            data: Vec::new(),
            shapes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn shapes(&self) -> &[BlockShape] {
        &self.shapes
    }

    /// Block `k` as a matrix (row-major storage).
    pub fn block(&self, k: usize) -> Matrix {
        let off: usize = self.shapes[..k].iter().map(|s| s.rows * s.cols).sum();
        let s = self.shapes[k];
        Matrix::from_row_slice(s.rows, s.cols, &self.data[off..off + s.rows * s.cols])
    }
}

impl EncoderSpec {
    pub fn new(family: EncoderFamily) -> Self {
        EncoderSpec {
            family,
            normalized: false,
        }
    }

    pub fn normalized(mut self, yes: bool) -> Self {
        self.normalized = yes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match &self.family {
            EncoderFamily::Linear { n_in, n_e } | EncoderFamily::Affine { n_in, n_e } => *n_in > 0 && *n_e > 0,
            EncoderFamily::Mlp { layer_sizes, .. } => layer_sizes.len() >= 2 && layer_sizes.iter().all(|&s| s > 0),
            EncoderFamily::OneHot { n_classes } => *n_classes > 0,
            EncoderFamily::FrozenTable { n_items, n_e } => *n_items > 0 && *n_e > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "encoder sizes must be positive: {:?}",
                self.family
            )))
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.family {
            EncoderFamily::Linear { n_in, .. } | EncoderFamily::Affine { n_in, .. } => *n_in,
            EncoderFamily::Mlp { layer_sizes, .. } => layer_sizes[0],
            EncoderFamily::OneHot { .. } => 1,
            EncoderFamily::FrozenTable { n_items, .. } => *n_items,
        }
    }

    pub fn output_dim(&self) -> usize {
        match &self.family {
            EncoderFamily::Linear { n_e, .. }
            | EncoderFamily::Affine { n_e, .. }
            | EncoderFamily::FrozenTable { n_e, .. } => *n_e,
            EncoderFamily::Mlp { layer_sizes, .. } => *layer_sizes.last().expect("validated"),
            EncoderFamily::OneHot { n_classes } => *n_classes,
        }
    }

    /// Whether training updates this encoder.
    pub fn trainable(&self) -> bool {
        !matches!(
            self.family,
            EncoderFamily::OneHot { .. } | EncoderFamily::FrozenTable { .. }
        )
    }

    /// Parameter block shapes with the fan-in used for initialization.
    fn layout(&self) -> Vec<(BlockShape, usize)> {
        let bs = |rows, cols| BlockShape { rows, cols };
        match &self.family {
            EncoderFamily::Linear { n_in, n_e } => vec![(bs(*n_e, *n_in), *n_in)],
            EncoderFamily::Affine { n_in, n_e } => {
                vec![(bs(*n_e, *n_in), *n_in), (bs(1, *n_e), *n_in)]
            }
            EncoderFamily::Mlp { layer_sizes, .. } => layer_sizes
                .windows(2)
                .flat_map(|w| [(bs(w[1], w[0]), w[0]), (bs(1, w[1]), w[0])])
                .collect(),
            EncoderFamily::OneHot { .. } => Vec::new(),
            EncoderFamily::FrozenTable { n_items, n_e } => vec![(bs(*n_items, *n_e), *n_items)],
        }
    }

    /// Uniform `[−1/√fan_in, 1/√fan_in]` initialization. Frozen tables start
    /// as the rectangular identity.
    pub fn init(&self, rng: &mut SeededRng) -> Result<EncoderParams> {
        self.validate()?;
        if let EncoderFamily::FrozenTable { n_items, n_e } = self.family {
            return EncoderParams::from_blocks(&[Matrix::identity(n_items, n_e)]);
        }
        let mut data = Vec::new();
        let mut shapes = Vec::new();
        for (shape, fan_in) in self.layout() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            data.extend((0..shape.rows * shape.cols).map(|_| rng.uniform_range(-bound, bound)));
            shapes.push(shape);
        }
        EncoderParams::from_flat(data, shapes)
    }

    fn check(&self, params: &EncoderParams, batch: &Matrix) -> Result<()> {
        let want: Vec<BlockShape> = self.layout().into_iter().map(|(s, _)| s).collect();
        if params.shapes != want {
            return Err(Error::dims(
                "encoder parameters",
                format!("{want:?}"),
                format!("{:?}", params.shapes),
            ));
        }
        if batch.ncols() != self.input_dim() {
            return Err(Error::dims("encoder input width", self.input_dim(), batch.ncols()));
        }
        Ok(())
    }
}

/// Intermediate values kept for the backward pass.
struct Trace {
    /// Input to each affine layer (MLP only; the batch itself otherwise).
    inputs: Vec<Matrix>,
    /// Pre-activations of hidden layers.
    pre: Vec<Matrix>,
    raw: Matrix,
}

fn affine(x: &Matrix, w: &Matrix, b: Option<&Matrix>) -> Matrix {
    let mut y = x * w.transpose();
    if let Some(b) = b {
        for mut row in y.row_iter_mut() {
            row += b;
        }
    }
    y
}

fn forward(spec: &EncoderSpec, params: &EncoderParams, x: &Matrix) -> Result<Trace> {
    spec.check(params, x)?;
    let single = |raw| Trace {
        inputs: vec![x.clone()],
        pre: Vec::new(),
        raw,
    };
    Ok(match &spec.family {
        EncoderFamily::Linear { .. } => single(affine(x, &params.block(0), None)),
        EncoderFamily::Affine { .. } => single(affine(x, &params.block(0), Some(&params.block(1)))),
        EncoderFamily::FrozenTable { .. } => single(x * params.block(0)),
        EncoderFamily::OneHot { n_classes } => {
            let mut out = Matrix::zeros(x.nrows(), *n_classes);
            for i in 0..x.nrows() {
                let l = x[(i, 0)];
                if l.fract() != 0.0 || l < 0.0 || l >= *n_classes as f64 {
                    return Err(Error::invalid(format!("row {i}: label {l} outside 0..{n_classes}")));
                }
                out[(i, l as usize)] = 1.0;
            }
            single(out)
        }
        EncoderFamily::Mlp {
            layer_sizes,
            activation,
        } => {
            let n_layers = layer_sizes.len() - 1;
            let mut inputs = Vec::with_capacity(n_layers);
            let mut pre = Vec::with_capacity(n_layers - 1);
            let mut h = x.clone();
            for l in 0..n_layers {
                let z = affine(&h, &params.block(2 * l), Some(&params.block(2 * l + 1)));
                inputs.push(h);
                if l + 1 == n_layers {
                    h = z;
                } else {
                    h = z.map(|v| activation.apply(v));
                    pre.push(z);
                }
            }
            Trace { inputs, pre, raw: h }
        }
    })
}

fn normalize_rows(raw: &Matrix) -> Result<Matrix> {
    let mut out = raw.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let n = row.norm();
        if n == 0.0 {
            return Err(Error::ZeroNormRow { row: i });
        }
        row /= n;
    }
    Ok(out)
}

/// Embeds each row of `batch`, dividing by the row norm when the spec is normalized.
/// `1×cols` matrix of column sums.
fn column_sums(m: &Matrix) -> Matrix {
    Matrix::from_fn(1, m.ncols(), |_, j| m.column(j).sum())
}

pub fn encode(spec: &EncoderSpec, params: &EncoderParams, batch: &Matrix) -> Result<Matrix> {
    let t = forward(spec, params, batch)?;
    if spec.normalized {
        normalize_rows(&t.raw)
    } else {
        Ok(t.raw)
    }
}

/// Gradient of `⟨cotangent, encode(spec, params, batch)⟩` with respect to the
/// flat parameter vector.
pub fn encode_vjp(spec: &EncoderSpec, params: &EncoderParams, batch: &Matrix, cotangent: &Matrix) -> Result<Vec<f64>> {
    let t = forward(spec, params, batch)?;
    if cotangent.shape() != t.raw.shape() {
        return Err(Error::dims(
            "encode_vjp cotangent",
            format!("{:?}", t.raw.shape()),
            format!("{:?}", cotangent.shape()),
        ));
    }
    let mut g = cotangent.clone();
    if spec.normalized {
        // y = z/|z|  ⇒  ∂/∂z ⟨c, y⟩ = (c − y⟨y, c⟩)/|z|
        for i in 0..g.nrows() {
            let z = t.raw.row(i);
            let n = z.norm();
            if n == 0.0 {
                return Err(Error::ZeroNormRow { row: i });
            }
            let y = z / n;
            let c = cotangent.row(i);
            let proj = y.dot(&c);
            g.set_row(i, &((c - y * proj) / n));
        }
    }
    let mut grads: Vec<Matrix> = Vec::new();
    match &spec.family {
        EncoderFamily::Linear { .. } => grads.push(g.transpose() * &t.inputs[0]),
        EncoderFamily::Affine { .. } => {
            grads.push(g.transpose() * &t.inputs[0]);
            grads.push(column_sums(&g));
        }
        EncoderFamily::FrozenTable { .. } => grads.push(t.inputs[0].transpose() * &g),
        EncoderFamily::OneHot { .. } => {}
        EncoderFamily::Mlp { activation, .. } => {
            let n_layers = t.inputs.len();
            let mut per_layer: Vec<(Matrix, Matrix)> = Vec::with_capacity(n_layers);
            let mut delta = g;
            for l in (0..n_layers).rev() {
                let gw = delta.transpose() * &t.inputs[l];
                let gb = column_sums(&delta);
                if l > 0 {
                    let back = &delta * params.block(2 * l);
                    let dz = t.pre[l - 1].map(|v| activation.derivative(v));
                    delta = back.component_mul(&dz);
                }
                per_layer.push((gw, gb));
            }
            for (gw, gb) in per_layer.into_iter().rev() {
                grads.push(gw);
                grads.push(gb);
            }
        }
    }
    let mut flat = Vec::with_capacity(params.len());
    for m in &grads {
        flat.extend(MatrixJson::from(m).data);
    }
    debug_assert_eq!(flat.len(), params.len());
    Ok(flat)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tilting {
    /// `⟨e_u, e_v⟩/τ`
    InnerProduct,
    /// `−|e_u − e_v|²/(2τ)`
    L2Distance,
}

/// Tilting scores `s[i][j]` of `(u^i, v^j)`.
#[derive(Debug, Clone)]
pub struct SimilarityBatch {
    pub s: Matrix,
    pub tilting: Tilting,
    pub tau: f64,
}

impl SimilarityBatch {
    pub fn n(&self) -> usize {
        self.s.nrows()
    }
}

fn check_pair(e_u: &Matrix, e_v: &Matrix, tau: f64) -> Result<()> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    if e_u.ncols() != e_v.ncols() {
        return Err(Error::dims("embedding width", e_u.ncols(), e_v.ncols()));
    }
    Ok(())
}

pub fn similarity_matrix(e_u: &Matrix, e_v: &Matrix, tilting: Tilting, tau: f64) -> Result<SimilarityBatch> {
    similarity_matrix_in(e_u, e_v, tilting, tau, Vec::new())
}

/// As [`similarity_matrix`], reusing `buf` as the score storage.
pub fn similarity_matrix_in(
    e_u: &Matrix,
    e_v: &Matrix,
    tilting: Tilting,
    tau: f64,
    mut buf: Vec<f64>,
) -> Result<SimilarityBatch> {
    check_pair(e_u, e_v, tau)?;
    let (n, m) = (e_u.nrows(), e_v.nrows());
    buf.clear();
    buf.resize(n * m, 0.0);
    for (j, col) in buf.chunks_exact_mut(n.max(1)).take(m).enumerate() {
        for k in 0..e_u.ncols() {
            let w = e_v[(j, k)];
            for (c, x) in col.iter_mut().zip(e_u.column(k).iter()) {
                *c += w * x;
            }
        }
    }
    let mut ip = Matrix::from_vec(n, m, buf);
    let s = match tilting {
        Tilting::InnerProduct => {
            ip /= tau;
            ip
        }
        Tilting::L2Distance => {
            let nu: Vec<f64> = e_u.row_iter().map(|r| r.norm_squared()).collect();
            let nv: Vec<f64> = e_v.row_iter().map(|r| r.norm_squared()).collect();
            Matrix::from_fn(e_u.nrows(), e_v.nrows(), |i, j| {
                -(nu[i] + nv[j] - 2.0 * ip[(i, j)]).max(0.0) / (2.0 * tau)
            })
        }
    };
    Ok(SimilarityBatch { s, tilting, tau })
}

/// Pulls a score cotangent back to the two embedding batches.
pub fn similarity_vjp(e_u: &Matrix, e_v: &Matrix, tilting: Tilting, tau: f64, ds: &Matrix) -> Result<(Matrix, Matrix)> {
    check_pair(e_u, e_v, tau)?;
    if ds.shape() != (e_u.nrows(), e_v.nrows()) {
        return Err(Error::dims(
            "similarity cotangent",
            format!("{}x{}", e_u.nrows(), e_v.nrows()),
            format!("{}x{}", ds.nrows(), ds.ncols()),
        ));
    }
    Ok(match tilting {
        Tilting::InnerProduct => (ds * e_v / tau, ds.tr_mul(e_u) / tau),
        Tilting::L2Distance => {
            let rs = ds.column_sum();
            let cs = ds.row_sum();
            let mut du = ds * e_v;
            for (i, mut row) in du.row_iter_mut().enumerate() {
                row -= e_u.row(i) * rs[i];
            }
            let mut dv = ds.tr_mul(e_u);
            for (j, mut row) in dv.row_iter_mut().enumerate() {
                row -= e_v.row(j) * cs[j];
            }
            (du / tau, dv / tau)
        }
    })
}

/// Persisted encoder: spec, parameters, seed and free-form training metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: EncoderSpec,
    pub params: EncoderParams,
    pub seed: u64,
    #[serde(default)]
    pub train_meta: serde_json::Value,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        c.spec.validate()?;
        c.spec.check(&c.params, &Matrix::zeros(0, c.spec.input_dim()))?;
        Ok(c)
    }
}
