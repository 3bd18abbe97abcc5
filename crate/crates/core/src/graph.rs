//! Dynamic reverse-mode autodiff.
//!
//! A [`Graph`] is an append-only arena of nodes built during one forward
//! pass. Every op computes its value eagerly and records enough to replay
//! the chain rule; [`Graph::gradients`] walks the arena backwards once.
//! Values are never mutated after creation, so a graph can be discarded
//! and rebuilt per batch.
//!
//! Shape conventions: most row-wise ops view a tensor as `[outer, last]`
//! where `last` is the trailing dimension. Feature maps are stored as
//! `[H, W, C]`, so "rows" are spatial positions and "last" is channels.

use crate::attention::{softmax, sparsemax, sparsemax_backward};
use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    DivCol(Var, Var),
    MulScalar(Var, Var),
    DivScalar(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    RowSum(Var),
    MeanRows(Var),
    Relu(Var),
    Gelu(Var),
    Sqrt(Var),
    LnClamped(Var, f64),
    Acos(Var),
    Reshape(Var),
    ConcatLast(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceLast(Var, usize),
    SliceRows(Var, usize),
    Conv2d {
        input: Var,
        kernel: Var,
        stride: usize,
        pad: usize,
    },
    SoftmaxRows(Var),
    SparsemaxRows(Var),
    LayerNormRows {
        input: Var,
        rstd: Vec<f64>,
    },
    RowMinOffDiag {
        input: Var,
        argmin: Vec<usize>,
    },
    Pick(Var, usize),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Parameters of a [`ParamSet`] registered as leaves of one graph.
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: crate::tensor::ParamId) -> Var {
        self.vars[id.index()]
    }

    /// Binding over existing leaves, one per parameter in `ParamSet` order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }
}

/// Arccos inputs are clamped to this band for the derivative.
pub const ACOS_CLAMP: f64 = 1e-7;
/// Inputs this close to ±1 are rounding noise around an exact ±1.
const ACOS_SNAP: f64 = 1e-12;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn rows_last(shape: &[usize]) -> (usize, usize) {
    let last = *shape.last().expect("non-empty shape");
    (shape.iter().product::<usize>() / last, last)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::from_vec(&n.shape, n.value.clone()).expect("graph node shape is valid")
    }

    /// Leaf holding a copy of `t`; tracked for gradients iff `t.requires_grad()`.
    pub fn input(&mut self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let t = Tensor::from_vec(shape, data)?;
        Ok(self.push(t.shape().to_vec(), t.into_data(), Op::Leaf, false))
    }

    /// Registers every parameter of `params` as a trainable leaf.
    pub fn bind(&mut self, params: &ParamSet) -> Binding {
        let vars = params.iter().map(|(_, t)| self.input(t)).collect();
        Binding { vars }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!(
                "matmul of {sa:?} and {sb:?}: inner dimensions disagree"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for t in 0..k {
                let x = av[i * k + t];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[t * n..(t + 1) * n];
                for (o, &y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let ng = self.ng(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::shape(format!("transpose needs rank 2, got {s:?}")));
        }
        let (m, n) = (s[0], s[1]);
        let av = self.value(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let ng = self.ng(&[a]);
        Ok(self.push(vec![n, m], out, Op::Transpose(a), ng))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what} of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_op(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let ng = self.ng(&[a, b]);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip_op(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip_op(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip_op(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    fn row_op(&mut self, a: Var, row: Var, add: bool) -> Result<Var> {
        let (_, last) = rows_last(self.shape(a));
        if self.value(row).len() != last {
            return Err(Error::shape(format!(
                "row broadcast of {:?} over {:?}",
                self.shape(row),
                self.shape(a)
            )));
        }
        let r = self.value(row);
        let out = self
            .value(a)
            .chunks(last)
            .flat_map(|chunk| {
                chunk
                    .iter()
                    .zip(r)
                    .map(move |(&x, &y)| if add { x + y } else { x * y })
            })
            .collect();
        let ng = self.ng(&[a, row]);
        let shape = self.shape(a).to_vec();
        let op = if add {
            Op::AddRow(a, row)
        } else {
            Op::MulRow(a, row)
        };
        Ok(self.push(shape, out, op, ng))
    }

    /// `a[.., j] + row[j]` over the trailing dimension.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_op(a, row, true)
    }

    /// `a[.., j] * row[j]` over the trailing dimension.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_op(a, row, false)
    }

    /// `a[i, j] / col[i]` with `a` viewed as `[outer, last]`.
    pub fn div_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (outer, last) = rows_last(self.shape(a));
        if self.value(col).len() != outer {
            return Err(Error::shape(format!(
                "column divide of {:?} by {:?}",
                self.shape(a),
                self.shape(col)
            )));
        }
        let c = self.value(col);
        let out = self
            .value(a)
            .chunks(last)
            .zip(c)
            .flat_map(|(chunk, &d)| chunk.iter().map(move |&x| x / d))
            .collect();
        let ng = self.ng(&[a, col]);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::DivCol(a, col), ng))
    }

    fn check_scalar(&self, s: Var) -> Result<f64> {
        if self.value(s).len() != 1 {
            return Err(Error::shape(format!(
                "expected a scalar, got {:?}",
                self.shape(s)
            )));
        }
        Ok(self.value(s)[0])
    }

    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let k = self.check_scalar(s)?;
        let out = self.value(a).iter().map(|&x| x * k).collect();
        let ng = self.ng(&[a, s]);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::MulScalar(a, s), ng))
    }

    pub fn div_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let k = self.check_scalar(s)?;
        let out = self.value(a).iter().map(|&x| x / k).collect();
        let ng = self.ng(&[a, s]);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::DivScalar(a, s), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).iter().map(|&x| x * c).collect();
        let ng = self.ng(&[a]);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Scale(a, c), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let ng = self.ng(&[a]);
        self.push(vec![1], vec![s], Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum over the trailing dimension: `[outer, last] -> [outer]`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let (outer, last) = rows_last(self.shape(a));
        let out = self
            .value(a)
            .chunks(last)
            .map(|c| c.iter().sum())
            .collect();
        let ng = self.ng(&[a]);
        self.push(vec![outer], out, Op::RowSum(a), ng)
    }

    /// Mean over all leading positions: `[.., last] -> [last]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (outer, last) = rows_last(self.shape(a));
        let mut out = vec![0.0; last];
        for chunk in self.value(a).chunks(last) {
            for (o, &x) in out.iter_mut().zip(chunk) {
                *o += x;
            }
        }
        let inv = 1.0 / outer as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        let ng = self.ng(&[a]);
        self.push(vec![last], out, Op::MeanRows(a), ng)
    }

    /// Spatial mean of an `[H, W, C]` map.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() != 3 {
            return Err(Error::shape(format!(
                "global_avg_pool expects [H, W, C], got {:?}",
                self.shape(a)
            )));
        }
        Ok(self.mean_rows(a))
    }

    fn map_op(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let ng = self.ng(&[a]);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map_op(a, Op::Relu(a), |x| x.max(0.0))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.map_op(a, Op::Gelu(a), |x| {
            0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh())
        })
    }

    /// Square root; the derivative at exactly zero is taken as zero.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.value(a).iter().any(|&x| x < 0.0) {
            return Err(Error::contract("sqrt of a negative value"));
        }
        Ok(self.map_op(a, Op::Sqrt(a), f64::sqrt))
    }

    /// `ln(max(x, floor))`.
    pub fn ln_clamped(&mut self, a: Var, floor: f64) -> Var {
        self.map_op(a, Op::LnClamped(a, floor), move |x| x.max(floor).ln())
    }

    /// Arccos with exact endpoints and a clamped derivative.
    pub fn acos(&mut self, a: Var) -> Var {
        self.map_op(a, Op::Acos(a), |x| {
            if x >= 1.0 - ACOS_SNAP {
                0.0
            } else if x <= -1.0 + ACOS_SNAP {
                std::f64::consts::PI
            } else {
                x.acos()
            }
        })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || numel != self.value(a).len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape(a)
            )));
        }
        let out = self.value(a).to_vec();
        let ng = self.ng(&[a]);
        Ok(self.push(shape.to_vec(), out, Op::Reshape(a), ng))
    }

    /// Concatenate along the trailing dimension; leading dims must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let lead = self.shape(*first)[..self.shape(*first).len() - 1].to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::shape(format!(
                    "concat_last of {:?} with leading dims {lead:?}",
                    s
                )));
            }
            total += s[s.len() - 1];
        }
        let outer: usize = lead.iter().product();
        let mut out = Vec::with_capacity(outer * total);
        for r in 0..outer {
            for &p in parts {
                let last = *self.shape(p).last().unwrap();
                out.extend_from_slice(&self.value(p)[r * last..(r + 1) * last]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let ng = self.ng(parts);
        Ok(self.push(shape, out, Op::ConcatLast(parts.to_vec()), ng))
    }

    /// Concatenate along the leading dimension; trailing dims must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s[1..] != tail[..] {
                return Err(Error::shape(format!(
                    "concat_rows of {s:?} with trailing dims {tail:?}"
                )));
            }
            rows += s[0];
            out.extend_from_slice(self.value(p));
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let ng = self.ng(parts);
        Ok(self.push(shape, out, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Columns `start..start+len` of the trailing dimension.
    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (outer, last) = rows_last(self.shape(a));
        if len == 0 || start + len > last {
            return Err(Error::shape(format!(
                "slice {start}..{} of trailing dim {last}",
                start + len
            )));
        }
        let out = self
            .value(a)
            .chunks(last)
            .flat_map(|c| c[start..start + len].iter().copied())
            .collect();
        let mut shape = self.shape(a).to_vec();
        *shape.last_mut().unwrap() = len;
        debug_assert_eq!(shape.iter().product::<usize>(), outer * len);
        let ng = self.ng(&[a]);
        Ok(self.push(shape, out, Op::SliceLast(a, start), ng))
    }

    /// Rows `start..start+len` of the leading dimension.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if len == 0 || start + len > s[0] {
            return Err(Error::shape(format!(
                "row slice {start}..{} of leading dim {}",
                start + len,
                s[0]
            )));
        }
        let stride: usize = s[1..].iter().product();
        let out = self.value(a)[start * stride..(start + len) * stride].to_vec();
        let mut shape = s.to_vec();
        shape[0] = len;
        let ng = self.ng(&[a]);
        Ok(self.push(shape, out, Op::SliceRows(a, start), ng))
    }

    /// Cross-correlation of an `[H, W, Cin]` map with `[k, k, Cin, Cout]` kernels.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let si = self.shape(input).to_vec();
        let sk = self.shape(kernel).to_vec();
        if si.len() != 3 || sk.len() != 4 || sk[0] != sk[1] || sk[2] != si[2] {
            return Err(Error::shape(format!(
                "conv2d of input {si:?} with kernels {sk:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::contract("conv2d stride must be >= 1"));
        }
        let (h, w, cin) = (si[0], si[1], si[2]);
        let (k, cout) = (sk[0], sk[3]);
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::shape(format!(
                "kernel {k}x{k} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let x = self.value(input);
        let kv = self.value(kernel);
        let mut out = vec![0.0; ho * wo * cout];
        for oy in 0..ho {
            for ox in 0..wo {
                let o = &mut out[(oy * wo + ox) * cout..(oy * wo + ox + 1) * cout];
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let px = &x[(iy as usize * w + ix as usize) * cin..][..cin];
                        let kbase = (ky * k + kx) * cin * cout;
                        for (ci, &v) in px.iter().enumerate() {
                            if v == 0.0 {
                                continue;
                            }
                            let krow = &kv[kbase + ci * cout..kbase + (ci + 1) * cout];
                            for (acc, &kw) in o.iter_mut().zip(krow) {
                                *acc += v * kw;
                            }
                        }
                    }
                }
            }
        }
        let ng = self.ng(&[input, kernel]);
        Ok(self.push(
            vec![ho, wo, cout],
            out,
            Op::Conv2d {
                input,
                kernel,
                stride,
                pad,
            },
            ng,
        ))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (_, last) = rows_last(self.shape(a));
        let mut out = Vec::with_capacity(self.value(a).len());
        for row in self.value(a).chunks(last) {
            out.extend(softmax(row)?);
        }
        let ng = self.ng(&[a]);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::SoftmaxRows(a), ng))
    }

    pub fn sparsemax_rows(&mut self, a: Var) -> Result<Var> {
        let (_, last) = rows_last(self.shape(a));
        let mut out = Vec::with_capacity(self.value(a).len());
        for row in self.value(a).chunks(last) {
            out.extend(sparsemax(row)?);
        }
        let ng = self.ng(&[a]);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::SparsemaxRows(a), ng))
    }

    /// Normalizes each trailing-dim row to zero mean, unit variance.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let (outer, last) = rows_last(self.shape(a));
        let mut out = Vec::with_capacity(outer * last);
        let mut rstd = Vec::with_capacity(outer);
        for row in self.value(a).chunks(last) {
            let mean = row.iter().sum::<f64>() / last as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / last as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd.push(r);
            out.extend(row.iter().map(|x| (x - mean) * r));
        }
        let ng = self.ng(&[a]);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::LayerNormRows { input: a, rstd }, ng)
    }

    /// Per row of a square matrix, the minimum over off-diagonal entries.
    /// Ties resolve to the lowest column index.
    pub fn row_min_offdiag(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || s[0] != s[1] || s[0] < 2 {
            return Err(Error::shape(format!(
                "row_min_offdiag needs a square matrix of size >= 2, got {s:?}"
            )));
        }
        let n = s[0];
        let v = self.value(a);
        let mut out = Vec::with_capacity(n);
        let mut argmin = Vec::with_capacity(n);
        for i in 0..n {
            let (j, m) = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, v[i * n + j]))
                .fold((usize::MAX, f64::INFINITY), |best, cur| {
                    if cur.1 < best.1 {
                        cur
                    } else {
                        best
                    }
                });
            argmin.push(j);
            out.push(m);
        }
        let ng = self.ng(&[a]);
        Ok(self.push(vec![n], out, Op::RowMinOffDiag { input: a, argmin }, ng))
    }

    /// Single element by flat index, as a `[1]` tensor.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let v = *self.value(a).get(index).ok_or_else(|| {
            Error::contract(format!(
                "index {index} out of range for {:?}",
                self.shape(a)
            ))
        })?;
        let ng = self.ng(&[a]);
        Ok(self.push(vec![1], vec![v], Op::Pick(a, index), ng))
    }

    /// `x W + b` for `x: [n, in]`, `W: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    /// Inner product of two equal-length tensors as a `[1]` tensor.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        Ok(self.sum(p))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.backprop(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Fills the gradient of every bound parameter; unreachable ones get zeros.
    pub fn backward(&self, loss: Var, binding: &Binding, params: &mut ParamSet) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (id, &var) in params.ids().collect::<Vec<_>>().into_iter().zip(&binding.vars) {
            let g = grads.wrt(self, var);
            params.get_mut(id).set_grad(g)?;
        }
        Ok(())
    }

    fn backprop(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = &nodes[v.0];
            if !n.needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (&nodes[a.0].shape, &nodes[b.0].shape);
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let av = &nodes[a.0].value;
                let bv = &nodes[b.0].value;
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for t in 0..k {
                            let brow = &bv[t * n..(t + 1) * n];
                            ga[i * k + t] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for t in 0..k {
                            let x = av[i * k + t];
                            if x == 0.0 {
                                continue;
                            }
                            for (o, &y) in gb[t * n..(t + 1) * n].iter_mut().zip(grow) {
                                *o += x * y;
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (m, n) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, &x)| *o -= x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(*a, &mut |ga| {
                    for ((o, &x), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *o += x * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, &x), &y) in gb.iter_mut().zip(g).zip(av) {
                        *o += x * y;
                    }
                });
            }
            Op::AddRow(a, row) => {
                let last = nodes[row.0].value.len();
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*row, &mut |gr| {
                    for chunk in g.chunks(last) {
                        add_into(gr, chunk);
                    }
                });
            }
            Op::MulRow(a, row) => {
                let last = nodes[row.0].value.len();
                let (av, rv) = (&nodes[a.0].value, &nodes[row.0].value);
                acc(*a, &mut |ga| {
                    for (gc, oc) in g.chunks(last).zip(ga.chunks_mut(last)) {
                        for ((o, &x), &r) in oc.iter_mut().zip(gc).zip(rv) {
                            *o += x * r;
                        }
                    }
                });
                acc(*row, &mut |gr| {
                    for (gc, ac) in g.chunks(last).zip(av.chunks(last)) {
                        for ((o, &x), &y) in gr.iter_mut().zip(gc).zip(ac) {
                            *o += x * y;
                        }
                    }
                });
            }
            Op::DivCol(a, col) => {
                let cv = &nodes[col.0].value;
                let last = nodes[a.0].value.len() / cv.len();
                let out = &node.value;
                acc(*a, &mut |ga| {
                    for ((oc, gc), &d) in ga.chunks_mut(last).zip(g.chunks(last)).zip(cv) {
                        for (o, &x) in oc.iter_mut().zip(gc) {
                            *o += x / d;
                        }
                    }
                });
                acc(*col, &mut |gc| {
                    for (i, (gch, ych)) in g.chunks(last).zip(out.chunks(last)).enumerate() {
                        let s: f64 = gch.iter().zip(ych).map(|(x, y)| x * y).sum();
                        gc[i] -= s / cv[i];
                    }
                });
            }
            Op::MulScalar(a, s) => {
                let k = nodes[s.0].value[0];
                let av = &nodes[a.0].value;
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, &x)| *o += x * k));
                acc(*s, &mut |gs| {
                    gs[0] += g.iter().zip(av).map(|(x, y)| x * y).sum::<f64>();
                });
            }
            Op::DivScalar(a, s) => {
                let k = nodes[s.0].value[0];
                let out = &node.value;
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, &x)| *o += x / k));
                acc(*s, &mut |gs| {
                    gs[0] -= g.iter().zip(out).map(|(x, y)| x * y).sum::<f64>() / k;
                });
            }
            Op::Scale(a, c) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, &x)| *o += x * c));
            }
            Op::Sum(a) => {
                acc(*a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0]));
            }
            Op::RowSum(a) => {
                let last = nodes[a.0].value.len() / g.len();
                acc(*a, &mut |ga| {
                    for (oc, &x) in ga.chunks_mut(last).zip(g) {
                        oc.iter_mut().for_each(|o| *o += x);
                    }
                });
            }
            Op::MeanRows(a) => {
                let last = g.len();
                let inv = last as f64 / nodes[a.0].value.len() as f64;
                acc(*a, &mut |ga| {
                    for oc in ga.chunks_mut(last) {
                        for (o, &x) in oc.iter_mut().zip(g) {
                            *o += x * inv;
                        }
                    }
                });
            }
            Op::Relu(a) => {
                let av = &nodes[a.0].value;
                acc(*a, &mut |ga| {
                    for ((o, &x), &v) in ga.iter_mut().zip(g).zip(av) {
                        if v > 0.0 {
                            *o += x;
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let av = &nodes[a.0].value;
                acc(*a, &mut |ga| {
                    for ((o, &x), &v) in ga.iter_mut().zip(g).zip(av) {
                        let u = SQRT_2_OVER_PI * (v + GELU_C * v * v * v);
                        let t = u.tanh();
                        let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * v * v);
                        *o += x * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
                    }
                });
            }
            Op::Sqrt(a) => {
                let out = &node.value;
                acc(*a, &mut |ga| {
                    for ((o, &x), &y) in ga.iter_mut().zip(g).zip(out) {
                        if y > 0.0 {
                            *o += x / (2.0 * y);
                        }
                    }
                });
            }
            Op::LnClamped(a, floor) => {
                let av = &nodes[a.0].value;
                acc(*a, &mut |ga| {
                    for ((o, &x), &v) in ga.iter_mut().zip(g).zip(av) {
                        if v > *floor {
                            *o += x / v;
                        }
                    }
                });
            }
            Op::Acos(a) => {
                let av = &nodes[a.0].value;
                acc(*a, &mut |ga| {
                    for ((o, &x), &v) in ga.iter_mut().zip(g).zip(av) {
                        if v.abs() >= 1.0 - ACOS_SNAP {
                            continue;
                        }
                        let c = v.clamp(-1.0 + ACOS_CLAMP, 1.0 - ACOS_CLAMP);
                        *o -= x / (1.0 - c * c).sqrt();
                    }
                });
            }
            Op::Reshape(a) => acc(*a, &mut |ga| add_into(ga, g)),
            Op::ConcatLast(parts) => {
                let total = *node.shape.last().unwrap();
                let outer = node.value.len() / total;
                let mut offset = 0;
                for p in parts {
                    let last = *nodes[p.0].shape.last().unwrap();
                    acc(*p, &mut |gp| {
                        for r in 0..outer {
                            add_into(
                                &mut gp[r * last..(r + 1) * last],
                                &g[r * total + offset..r * total + offset + last],
                            );
                        }
                    });
                    offset += last;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = nodes[p.0].value.len();
                    acc(*p, &mut |gp| add_into(gp, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::SliceLast(a, start) => {
                let len = *node.shape.last().unwrap();
                let last = *nodes[a.0].shape.last().unwrap();
                acc(*a, &mut |ga| {
                    for (oc, gc) in ga.chunks_mut(last).zip(g.chunks(len)) {
                        add_into(&mut oc[*start..start + len], gc);
                    }
                });
            }
            Op::SliceRows(a, start) => {
                let stride = node.value.len() / node.shape[0];
                acc(*a, &mut |ga| {
                    add_into(&mut ga[start * stride..start * stride + g.len()], g);
                });
            }
            Op::Conv2d {
                input,
                kernel,
                stride,
                pad,
            } => {
                let (si, sk) = (&nodes[input.0].shape, &nodes[kernel.0].shape);
                let (h, w, cin) = (si[0], si[1], si[2]);
                let (k, cout) = (sk[0], sk[3]);
                let (ho, wo) = (node.shape[0], node.shape[1]);
                let x = &nodes[input.0].value;
                let kv = &nodes[kernel.0].value;
                let taps = |oy: usize, ox: usize, f: &mut dyn FnMut(usize, usize)| {
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - *pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - *pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            f((iy as usize * w + ix as usize) * cin, (ky * k + kx) * cin * cout);
                        }
                    }
                };
                acc(*input, &mut |gi| {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let go = &g[(oy * wo + ox) * cout..(oy * wo + ox + 1) * cout];
                            taps(oy, ox, &mut |ibase, kbase| {
                                for ci in 0..cin {
                                    let krow = &kv[kbase + ci * cout..kbase + (ci + 1) * cout];
                                    gi[ibase + ci] +=
                                        go.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>();
                                }
                            });
                        }
                    }
                });
                acc(*kernel, &mut |gk| {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let go = &g[(oy * wo + ox) * cout..(oy * wo + ox + 1) * cout];
                            taps(oy, ox, &mut |ibase, kbase| {
                                for ci in 0..cin {
                                    let v = x[ibase + ci];
                                    if v == 0.0 {
                                        continue;
                                    }
                                    let krow = &mut gk[kbase + ci * cout..kbase + (ci + 1) * cout];
                                    for (o, &y) in krow.iter_mut().zip(go) {
                                        *o += v * y;
                                    }
                                }
                            });
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let last = *node.shape.last().unwrap();
                let p = &node.value;
                acc(*a, &mut |ga| {
                    for ((oc, gc), pc) in ga.chunks_mut(last).zip(g.chunks(last)).zip(p.chunks(last)) {
                        let dot: f64 = gc.iter().zip(pc).map(|(x, y)| x * y).sum();
                        for ((o, &x), &y) in oc.iter_mut().zip(gc).zip(pc) {
                            *o += y * (x - dot);
                        }
                    }
                });
            }
            Op::SparsemaxRows(a) => {
                let last = *node.shape.last().unwrap();
                let p = &node.value;
                acc(*a, &mut |ga| {
                    for ((oc, gc), pc) in ga.chunks_mut(last).zip(g.chunks(last)).zip(p.chunks(last)) {
                        let d = sparsemax_backward(pc, gc).expect("sparsemax output has support");
                        add_into(oc, &d);
                    }
                });
            }
            Op::LayerNormRows { input, rstd } => {
                let last = *node.shape.last().unwrap();
                let y = &node.value;
                acc(*input, &mut |ga| {
                    for (((oc, gc), yc), &r) in ga
                        .chunks_mut(last)
                        .zip(g.chunks(last))
                        .zip(y.chunks(last))
                        .zip(rstd)
                    {
                        let n = last as f64;
                        let mg = gc.iter().sum::<f64>() / n;
                        let mgy = gc.iter().zip(yc).map(|(a, b)| a * b).sum::<f64>() / n;
                        for ((o, &gi), &yi) in oc.iter_mut().zip(gc).zip(yc) {
                            *o += r * (gi - mg - yi * mgy);
                        }
                    }
                });
            }
            Op::RowMinOffDiag { input, argmin } => {
                let n = argmin.len();
                acc(*input, &mut |ga| {
                    for (i, &j) in argmin.iter().enumerate() {
                        ga[i * n + j] += g[i];
                    }
                });
            }
            Op::Pick(a, index) => acc(*a, &mut |ga| ga[*index] += g[0]),
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Result of one reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `v`, zeros when `v` does not reach the loss.
    pub fn wrt(&self, graph: &Graph, v: Var) -> Vec<f64> {
        self.grads
            .get(v.0)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| vec![0.0; graph.value(v).len()])
    }
}
