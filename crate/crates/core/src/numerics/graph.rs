//! Graph-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation eagerly: values are computed when a
//! node is created and the node remembers its inputs. [`Graph::backward`]
//! walks the nodes in reverse creation order, which is a topological order
//! by construction.
//!
//! Shape errors in graph construction are programming errors and panic.
//! Non-finite values are recorded as a fault on the first offending node
//! and reported by [`Graph::check`] and [`Graph::backward`].

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    Affine { w: Var, x: Var, b: Option<Var> },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddN(Vec<Var>),
    ScaleShift { a: Var, scale: f64 },
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    Log(Var),
    Clamp { a: Var, lo: f64, hi: f64 },
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Slice { a: Var, start: usize },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Pick { a: Var, index: usize },
    SelectRow { table: Var, row: usize },
    PickSpatial { map: Var, row: usize, col: usize },
    SpatialMean(Var),
    Upscale2x(Var),
    Conv3x3s2 { x: Var, w: Var, b: Var },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::Affine { .. } => "affine",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddN(_) => "add_n",
            Op::ScaleShift { .. } => "scale_shift",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softmax(_) => "softmax",
            Op::Log(_) => "log",
            Op::Clamp { .. } => "clamp",
            Op::Concat(_) => "concat",
            Op::Stack(_) => "stack",
            Op::Slice { .. } => "slice",
            Op::Reshape(_) => "reshape",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Pick { .. } => "pick",
            Op::SelectRow { .. } => "select_row",
            Op::PickSpatial { .. } => "pick_spatial",
            Op::SpatialMean(_) => "spatial_mean",
            Op::Upscale2x(_) => "upscale2x",
            Op::Conv3x3s2 { .. } => "conv3x3s2",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    label: Option<String>,
}

/// A single-writer computation graph.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    fault: Option<(usize, String)>,
}

/// Interpolation taps for one output coordinate of a 2x upscale.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Taps {
    pub i0: usize,
    pub i1: usize,
    pub w0: f64,
    pub w1: f64,
}

/// Taps for doubling an axis of length `n` with half-pixel centres.
///
/// Output cell `i` samples input coordinate `(i + 0.5) / 2 - 0.5`. Outside
/// the outermost input centres the two nearest cells are extrapolated
/// linearly, so affine ramps are reproduced exactly up to the border.
pub(crate) fn upscale_taps(n: usize) -> Vec<Taps> {
    (0..2 * n)
        .map(|i| {
            if n == 1 {
                return Taps {
                    i0: 0,
                    i1: 0,
                    w0: 1.0,
                    w1: 0.0,
                };
            }
            let src = (i as f64 + 0.5) / 2.0 - 0.5;
            let i0 = (src.floor().max(0.0) as usize).min(n - 2);
            let frac = src - i0 as f64;
            Taps {
                i0,
                i1: i0 + 1,
                w0: 1.0 - frac,
                w1: frac,
            }
        })
        .collect()
}

fn conv_out(n: usize) -> usize {
    n.div_ceil(2)
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.dims()
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item().expect("scalar node")
    }

    /// Attach a human-readable name used in fault reports.
    pub fn label(&mut self, v: Var, name: impl Into<String>) -> Var {
        self.nodes[v.0].label = Some(name.into());
        v
    }

    fn node_name(&self, i: usize) -> String {
        let n = &self.nodes[i];
        match &n.label {
            Some(l) => format!("{l} ({}#{i})", n.op.name()),
            None => format!("{}#{i}", n.op.name()),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = matches!(op, Op::Param(_)) || inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        let id = self.nodes.len();
        if self.fault.is_none() && !value.is_finite() {
            self.fault = Some((id, format!("non-finite output of {}", op.name())));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            label: None,
        });
        Var(id)
    }

    /// First recorded numeric fault, if any.
    pub fn check(&self) -> Result<()> {
        match &self.fault {
            None => Ok(()),
            Some((i, detail)) => Err(Error::Numeric {
                node: self.node_name(*i),
                detail: detail.clone(),
            }),
        }
    }

    // ---- leaves ----------------------------------------------------------

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, &[])
    }

    /// Leaf for a parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id), &[]);
        self.nodes[v.0].label = Some(store.get(id).name().to_string());
        self.params.insert(id, v);
        v
    }

    // ---- linear algebra ---------------------------------------------------

    /// `w · x + b` for `w: [m, n]`, `x: [n]`, `b: [m]`.
    pub fn affine(&mut self, w: Var, x: Var, b: Option<Var>) -> Var {
        let (wt, xt) = (self.value(w), self.value(x));
        assert_eq!(wt.rank(), 2, "affine weight must be a matrix");
        let (m, n) = (wt.dims()[0], wt.dims()[1]);
        assert_eq!(xt.dims(), &[n], "affine input width mismatch");
        let mut out = match b {
            Some(b) => {
                assert_eq!(self.dims(b), &[m], "affine bias width mismatch");
                self.value(b).data().to_vec()
            }
            None => vec![0.0; m],
        };
        let (wd, xd) = (wt.data(), xt.data());
        for (i, o) in out.iter_mut().enumerate() {
            *o += dot(&wd[i * n..(i + 1) * n], xd);
        }
        let mut inputs = vec![w, x];
        inputs.extend(b);
        self.push(Tensor::vector(out), Op::Affine { w, x, b }, &inputs)
    }

    /// Matrix product for `[m,k]·[k,n]`, `[m,k]·[k]` and `[k]·[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (at, bt) = (self.value(a), self.value(b));
        let (m, k, lhs_vec) = match at.dims() {
            [k] => (1, *k, true),
            [m, k] => (*m, *k, false),
            d => panic!("matmul lhs has dims {d:?}"),
        };
        let (k2, n, rhs_vec) = match bt.dims() {
            [k] => (*k, 1, true),
            [k, n] => (*k, *n, false),
            d => panic!("matmul rhs has dims {d:?}"),
        };
        assert_eq!(k, k2, "matmul inner dimension mismatch");
        assert!(!(lhs_vec && rhs_vec), "matmul of two vectors; use mul + sum");
        let out = matmul_raw(at.data(), bt.data(), m, k, n);
        let dims = match (lhs_vec, rhs_vec) {
            (true, false) => vec![n],
            (false, true) => vec![m],
            _ => vec![m, n],
        };
        self.push(Tensor::from_parts(dims, out), Op::MatMul(a, b), &[a, b])
    }

    // ---- elementwise ------------------------------------------------------

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (at, bt) = (self.value(a), self.value(b));
        assert_eq!(at.dims(), bt.dims(), "{} operands differ in dims", op.name());
        let data = at.data().iter().zip(bt.data()).map(|(&x, &y)| f(x, y)).collect();
        let dims = at.dims().to_vec();
        self.push(Tensor::from_parts(dims, data), op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Sum of same-shaped nodes.
    pub fn add_n(&mut self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty(), "add_n of nothing");
        let dims = self.dims(vars[0]).to_vec();
        let mut acc = vec![0.0; self.value(vars[0]).len()];
        for &v in vars {
            assert_eq!(self.dims(v), dims.as_slice(), "add_n operands differ in dims");
            for (a, b) in acc.iter_mut().zip(self.value(v).data()) {
                *a += b;
            }
        }
        self.push(Tensor::from_parts(dims, acc), Op::AddN(vars.to_vec()), vars)
    }

    /// `scale * a + shift`.
    pub fn scale_shift(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let t = self.value(a).map(|x| scale * x + shift);
        self.push(t, Op::ScaleShift { a, scale }, &[a])
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Var {
        self.scale_shift(a, scale, 0.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::tanh);
        self.push(t, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        self.push(t, Op::Sigmoid(a), &[a])
    }

    /// Natural log; non-positive inputs are a numeric fault.
    pub fn log(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| if x > 0.0 { x.ln() } else { f64::NAN });
        self.push(t, Op::Log(a), &[a])
    }

    /// Clamp into `[lo, hi]`; gradient passes only where unclamped.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let t = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(t, Op::Clamp { a, lo, hi }, &[a])
    }

    /// Softmax over a vector, computed with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        assert_eq!(t.rank(), 1, "softmax expects a vector");
        let out = softmax_raw(t.data());
        self.push(Tensor::vector(out), Op::Softmax(a), &[a])
    }

    // ---- structure --------------------------------------------------------

    /// Concatenate flattened operands into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), parts)
    }

    /// Stack equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack of nothing");
        let n = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(n * rows.len());
        for &r in rows {
            assert_eq!(self.value(r).len(), n, "stack rows differ in length");
            data.extend_from_slice(self.value(r).data());
        }
        let t = Tensor::from_parts(vec![rows.len(), n], data);
        self.push(t, Op::Stack(rows.to_vec()), rows)
    }

    /// Contiguous sub-range of the flattened operand, as a vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let d = self.value(a).data();
        assert!(start + len <= d.len(), "slice out of range");
        let t = Tensor::vector(d[start..start + len].to_vec());
        self.push(t, Op::Slice { a, start }, &[a])
    }

    pub fn reshape(&mut self, a: Var, dims: &[usize]) -> Var {
        let t = self.value(a).reshape(dims).expect("reshape preserves element count");
        self.push(t, Op::Reshape(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.sum() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Element at a flat index, as a scalar.
    pub fn pick(&mut self, a: Var, index: usize) -> Var {
        let x = self.value(a).data()[index];
        self.push(Tensor::scalar(x), Op::Pick { a, index }, &[a])
    }

    /// Row of a `[rows, d]` table.
    pub fn select_row(&mut self, table: Var, row: usize) -> Var {
        let t = self.value(table);
        assert_eq!(t.rank(), 2, "select_row expects a matrix");
        let d = t.dims()[1];
        assert!(row < t.dims()[0], "select_row index out of range");
        let v = Tensor::vector(t.data()[row * d..(row + 1) * d].to_vec());
        self.push(v, Op::SelectRow { table, row }, &[table])
    }

    /// Channel vector `map[:, row, col]` of a `[C, H, W]` map.
    pub fn pick_spatial(&mut self, map: Var, row: usize, col: usize) -> Var {
        let t = self.value(map);
        let [c, h, w] = dims3(t);
        assert!(row < h && col < w, "pick_spatial out of range");
        let v: Vec<f64> = (0..c).map(|ch| t.data()[(ch * h + row) * w + col]).collect();
        self.push(Tensor::vector(v), Op::PickSpatial { map, row, col }, &[map])
    }

    /// Per-channel mean over the spatial axes of a `[C, H, W]` map.
    pub fn spatial_mean(&mut self, map: Var) -> Var {
        let t = self.value(map);
        let [c, h, w] = dims3(t);
        let hw = h * w;
        let v: Vec<f64> = (0..c)
            .map(|ch| t.data()[ch * hw..(ch + 1) * hw].iter().sum::<f64>() / hw as f64)
            .collect();
        self.push(Tensor::vector(v), Op::SpatialMean(map), &[map])
    }

    /// Bilinear 2x upscale of a `[C, H, W]` map (see [`upscale_taps`]).
    pub fn upscale2x(&mut self, map: Var) -> Var {
        let t = self.value(map);
        let [c, h, w] = dims3(t);
        let (ty, tx) = (upscale_taps(h), upscale_taps(w));
        let (oh, ow) = (2 * h, 2 * w);
        let src = t.data();
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            let plane = &src[ch * h * w..(ch + 1) * h * w];
            for (oy, a) in ty.iter().enumerate() {
                for (ox, b) in tx.iter().enumerate() {
                    let v = a.w0 * (b.w0 * plane[a.i0 * w + b.i0] + b.w1 * plane[a.i0 * w + b.i1])
                        + a.w1 * (b.w0 * plane[a.i1 * w + b.i0] + b.w1 * plane[a.i1 * w + b.i1]);
                    out[(ch * oh + oy) * ow + ox] = v;
                }
            }
        }
        let t = Tensor::from_parts(vec![c, oh, ow], out);
        self.push(t, Op::Upscale2x(map), &[map])
    }

    /// 3x3 convolution, stride 2, zero padding 1.
    ///
    /// `x: [Cin, H, W]`, `w: [Cout, Cin, 3, 3]`, `b: [Cout]` gives
    /// `[Cout, ceil(H/2), ceil(W/2)]`.
    pub fn conv3x3s2(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (xt, wt, bt) = (self.value(x), self.value(w), self.value(b));
        let [cin, h, wd] = dims3(xt);
        let (cout, wcin) = match wt.dims() {
            [co, ci, 3, 3] => (*co, *ci),
            d => panic!("conv weight has dims {d:?}"),
        };
        assert_eq!(wcin, cin, "conv input channel mismatch");
        assert_eq!(bt.dims(), &[cout], "conv bias width mismatch");
        let (oh, ow) = (conv_out(h), conv_out(wd));
        let mut out = vec![0.0; cout * oh * ow];
        let (xs, ws) = (xt.data(), wt.data());
        for co in 0..cout {
            let plane = &mut out[co * oh * ow..(co + 1) * oh * ow];
            plane.fill(bt.data()[co]);
            for ci in 0..cin {
                let xin = &xs[ci * h * wd..(ci + 1) * h * wd];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let k = ws[((co * cin + ci) * 3 + ky) * 3 + kx];
                        for oy in 0..oh {
                            let iy = (2 * oy + ky) as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &xin[iy as usize * wd..(iy as usize + 1) * wd];
                            for ox in 0..ow {
                                let ix = (2 * ox + kx) as isize - 1;
                                if ix >= 0 && ix < wd as isize {
                                    plane[oy * ow + ox] += k * row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        let t = Tensor::from_parts(vec![cout, oh, ow], out);
        self.push(t, Op::Conv3x3s2 { x, w, b }, &[x, w, b])
    }

    // ---- backward ---------------------------------------------------------

    /// Accumulate `∂loss/∂param` into the gradients held by `store`.
    ///
    /// Parameters not reached from `loss` are left untouched; use
    /// [`reverse_grad`] to zero them first.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        self.check()?;
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got dims {:?}",
                self.dims(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if gy.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric {
                    node: self.node_name(i),
                    detail: "non-finite gradient".into(),
                });
            }
            self.backprop_node(i, &gy, &mut grads, store);
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>], store: &mut ParamStore) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                let n = self.nodes[v.0].value.len();
                grads[v.0].get_or_insert_with(|| vec![0.0; n])
            }};
        }
        match &node.op {
            Op::Input => {}
            Op::Param(id) => store.accumulate_grad(*id, gy),
            Op::Affine { w, x, b } => {
                let (wd, xd) = (val(*w), val(*x));
                let n = xd.len();
                if wants(*w) {
                    let gw = acc!(*w);
                    for (r, &g) in gy.iter().enumerate() {
                        if g != 0.0 {
                            axpy(g, xd, &mut gw[r * n..(r + 1) * n]);
                        }
                    }
                }
                if wants(*x) {
                    let gx = acc!(*x);
                    for (r, &g) in gy.iter().enumerate() {
                        if g != 0.0 {
                            axpy(g, &wd[r * n..(r + 1) * n], gx);
                        }
                    }
                }
                if let Some(b) = b {
                    if wants(*b) {
                        add_into(acc!(*b), gy);
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (at, bt) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k) = if at.rank() == 1 {
                    (1, at.len())
                } else {
                    (at.dims()[0], at.dims()[1])
                };
                let n = if bt.rank() == 1 { 1 } else { bt.dims()[1] };
                // gy is [m, n]; ga = gy · bᵀ, gb = aᵀ · gy
                if wants(*a) {
                    let ga = acc!(*a);
                    let bd = bt.data();
                    for r in 0..m {
                        for c in 0..k {
                            ga[r * k + c] += dot(&gy[r * n..(r + 1) * n], &bd[c * n..(c + 1) * n]);
                        }
                    }
                }
                if wants(*b) {
                    let gb = acc!(*b);
                    let ad = at.data();
                    for r in 0..m {
                        for c in 0..k {
                            let s = ad[r * k + c];
                            if s != 0.0 {
                                axpy(s, &gy[r * n..(r + 1) * n], &mut gb[c * n..(c + 1) * n]);
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    add_into(acc!(*a), gy);
                }
                if wants(*b) {
                    add_into(acc!(*b), gy);
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    add_into(acc!(*a), gy);
                }
                if wants(*b) {
                    axpy(-1.0, gy, acc!(*b));
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bd = val(*b);
                    let ga = acc!(*a);
                    for ((g, &d), &o) in ga.iter_mut().zip(gy).zip(bd) {
                        *g += d * o;
                    }
                }
                if wants(*b) {
                    let ad = val(*a);
                    let gb = acc!(*b);
                    for ((g, &d), &o) in gb.iter_mut().zip(gy).zip(ad) {
                        *g += d * o;
                    }
                }
            }
            Op::AddN(vars) => {
                for &v in vars {
                    if wants(v) {
                        add_into(acc!(v), gy);
                    }
                }
            }
            Op::ScaleShift { a, scale } => {
                if wants(*a) {
                    axpy(*scale, gy, acc!(*a));
                }
            }
            Op::Tanh(a) => {
                let ga = acc!(*a);
                for ((g, &d), &t) in ga.iter_mut().zip(gy).zip(y) {
                    *g += d * (1.0 - t * t);
                }
            }
            Op::Sigmoid(a) => {
                let ga = acc!(*a);
                for ((g, &d), &s) in ga.iter_mut().zip(gy).zip(y) {
                    *g += d * s * (1.0 - s);
                }
            }
            Op::Softmax(a) => {
                let inner = dot(gy, y);
                let ga = acc!(*a);
                for ((g, &d), &s) in ga.iter_mut().zip(gy).zip(y) {
                    *g += s * (d - inner);
                }
            }
            Op::Log(a) => {
                let x = val(*a);
                let ga = acc!(*a);
                for ((g, &d), &xv) in ga.iter_mut().zip(gy).zip(x) {
                    *g += d / xv;
                }
            }
            Op::Clamp { a, lo, hi } => {
                let x = val(*a);
                let ga = acc!(*a);
                for ((g, &d), &xv) in ga.iter_mut().zip(gy).zip(x) {
                    if xv >= *lo && xv <= *hi {
                        *g += d;
                    }
                }
            }
            Op::Concat(parts) | Op::Stack(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.len();
                    if wants(p) {
                        add_into(acc!(p), &gy[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::Slice { a, start } => {
                let ga = acc!(*a);
                add_into(&mut ga[*start..*start + gy.len()], gy);
            }
            Op::Reshape(a) => add_into(acc!(*a), gy),
            Op::Sum(a) => {
                let ga = acc!(*a);
                ga.iter_mut().for_each(|g| *g += gy[0]);
            }
            Op::Mean(a) => {
                let ga = acc!(*a);
                let s = gy[0] / ga.len() as f64;
                ga.iter_mut().for_each(|g| *g += s);
            }
            Op::Pick { a, index } => acc!(*a)[*index] += gy[0],
            Op::SelectRow { table, row } => {
                let d = gy.len();
                let gt = acc!(*table);
                add_into(&mut gt[row * d..(row + 1) * d], gy);
            }
            Op::PickSpatial { map, row, col } => {
                let [_, h, w] = dims3(&self.nodes[map.0].value);
                let gm = acc!(*map);
                for (ch, &g) in gy.iter().enumerate() {
                    gm[(ch * h + row) * w + col] += g;
                }
            }
            Op::SpatialMean(map) => {
                let [c, h, w] = dims3(&self.nodes[map.0].value);
                let hw = h * w;
                let gm = acc!(*map);
                for ch in 0..c {
                    let s = gy[ch] / hw as f64;
                    gm[ch * hw..(ch + 1) * hw].iter_mut().for_each(|g| *g += s);
                }
            }
            Op::Upscale2x(map) => {
                let [c, h, w] = dims3(&self.nodes[map.0].value);
                let (ty, tx) = (upscale_taps(h), upscale_taps(w));
                let (oh, ow) = (2 * h, 2 * w);
                let gm = acc!(*map);
                for ch in 0..c {
                    let plane = &mut gm[ch * h * w..(ch + 1) * h * w];
                    for (oy, a) in ty.iter().enumerate() {
                        for (ox, b) in tx.iter().enumerate() {
                            let g = gy[(ch * oh + oy) * ow + ox];
                            plane[a.i0 * w + b.i0] += a.w0 * b.w0 * g;
                            plane[a.i0 * w + b.i1] += a.w0 * b.w1 * g;
                            plane[a.i1 * w + b.i0] += a.w1 * b.w0 * g;
                            plane[a.i1 * w + b.i1] += a.w1 * b.w1 * g;
                        }
                    }
                }
            }
            Op::Conv3x3s2 { x, w, b } => self.conv_backward(*x, *w, *b, gy, grads),
        }
    }

    fn conv_backward(&self, x: Var, w: Var, b: Var, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let xt = &self.nodes[x.0].value;
        let wt = &self.nodes[w.0].value;
        let [cin, h, wd] = dims3(xt);
        let cout = wt.dims()[0];
        let (oh, ow) = (conv_out(h), conv_out(wd));
        let (xs, ws) = (xt.data(), wt.data());
        if self.nodes[b.0].needs_grad {
            let gb = grads[b.0].get_or_insert_with(|| vec![0.0; cout]);
            for co in 0..cout {
                gb[co] += gy[co * oh * ow..(co + 1) * oh * ow].iter().sum::<f64>();
            }
        }
        let want_w = self.nodes[w.0].needs_grad;
        let want_x = self.nodes[x.0].needs_grad;
        let mut gw = want_w.then(|| grads[w.0].take().unwrap_or_else(|| vec![0.0; ws.len()]));
        let mut gx = want_x.then(|| grads[x.0].take().unwrap_or_else(|| vec![0.0; xs.len()]));
        for co in 0..cout {
            let gplane = &gy[co * oh * ow..(co + 1) * oh * ow];
            for ci in 0..cin {
                let base = ci * h * wd;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let widx = ((co * cin + ci) * 3 + ky) * 3 + kx;
                        let k = ws[widx];
                        let mut kgrad = 0.0;
                        for oy in 0..oh {
                            let iy = (2 * oy + ky) as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = base + iy as usize * wd;
                            for ox in 0..ow {
                                let ix = (2 * ox + kx) as isize - 1;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                let g = gplane[oy * ow + ox];
                                kgrad += g * xs[row + ix as usize];
                                if let Some(gx) = gx.as_mut() {
                                    gx[row + ix as usize] += g * k;
                                }
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            gw[widx] += kgrad;
                        }
                    }
                }
            }
        }
        if let Some(gw) = gw {
            grads[w.0] = Some(gw);
        }
        if let Some(gx) = gx {
            grads[x.0] = Some(gx);
        }
    }
}

/// Zero every gradient in `store`, then write `∂loss/∂param` into it.
pub fn reverse_grad(graph: &Graph, loss: Var, store: &mut ParamStore) -> Result<()> {
    store.zero_grad();
    graph.backward(loss, store)
}

fn dims3(t: &Tensor) -> [usize; 3] {
    match t.dims() {
        [c, h, w] => [*c, *h, *w],
        d => panic!("expected a [C, H, W] map, got {d:?}"),
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators so the loop vectorizes.
    let mut s = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        s[0] += a[j] * b[j];
        s[1] += a[j + 1] * b[j + 1];
        s[2] += a[j + 2] * b[j + 2];
        s[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in 4 * chunks..a.len() {
        tail += a[j] * b[j];
    }
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[inline]
fn add_into(y: &mut [f64], x: &[f64]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += xv;
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        let orow = &mut out[r * n..(r + 1) * n];
        for c in 0..k {
            let s = a[r * k + c];
            if s != 0.0 {
                axpy(s, &b[c * n..(c + 1) * n], orow);
            }
        }
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_raw(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}
