//! Primitive kinds with their forward rule and vector-Jacobian product.

use super::tensor::{dot, norm, Tensor};
use crate::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const MIN_COSINE_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    /// Multiply every entry by a constant.
    Scale(f64),
    /// Add a constant to every entry.
    Shift(f64),
    Mul,
    MatMul,
    Transpose,
    /// Add a length-`d` vector to every row of an `n x d` matrix.
    AddRow,
    RowSoftmax,
    /// Per-row normalization to zero mean and unit variance (no affine).
    LayerNorm,
    Tanh,
    /// Mean over rows, `n x d -> 1 x d`.
    MeanPool,
    Dot,
    Norm,
    Cosine,
    /// `max(0, x)` elementwise.
    Hinge,
    Abs,
    Sum,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "subtract",
            OpKind::Scale(_) => "scalar-multiply",
            OpKind::Shift(_) => "shift",
            OpKind::Mul => "elementwise-multiply",
            OpKind::MatMul => "matrix-multiply",
            OpKind::Transpose => "transpose",
            OpKind::AddRow => "add-row",
            OpKind::RowSoftmax => "row-softmax",
            OpKind::LayerNorm => "layer-normalize",
            OpKind::Tanh => "tanh",
            OpKind::MeanPool => "mean-pool",
            OpKind::Dot => "dot-product",
            OpKind::Norm => "euclidean-norm",
            OpKind::Cosine => "cosine-similarity",
            OpKind::Hinge => "hinge",
            OpKind::Abs => "absolute-value",
            OpKind::Sum => "sum",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            OpKind::Add
            | OpKind::Sub
            | OpKind::Mul
            | OpKind::MatMul
            | OpKind::AddRow
            | OpKind::Dot
            | OpKind::Cosine => 2,
            _ => 1,
        }
    }
}

fn mismatch(kind: &OpKind, a: &Tensor, b: Option<&Tensor>) -> Error {
    Error::ShapeMismatch {
        kind: kind.name(),
        lhs: a.shape().to_vec(),
        rhs: b.map(|t| t.shape().to_vec()).unwrap_or_default(),
    }
}

fn same_shape(kind: &OpKind, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(mismatch(kind, a, Some(b)));
    }
    Ok(())
}

fn rank2(kind: &OpKind, a: &Tensor) -> Result<()> {
    if a.rank() != 2 {
        return Err(mismatch(kind, a, None));
    }
    Ok(())
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let c = x.cols();
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Returns the normalized rows and each row's `1/sqrt(var + eps)`.
fn layer_norm_rows(x: &Tensor) -> (Tensor, Vec<f64>) {
    let c = x.cols();
    let mut out = x.clone();
    let mut inv_std = Vec::with_capacity(x.rows());
    for row in out.data_mut().chunks_mut(c) {
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * s;
        }
        inv_std.push(s);
    }
    (out, inv_std)
}

/// Evaluates one primitive.
pub fn forward(kind: &OpKind, xs: &[&Tensor]) -> Result<Tensor> {
    if xs.len() != kind.arity() {
        return Err(Error::Arity {
            kind: kind.name(),
            expected: kind.arity(),
            got: xs.len(),
        });
    }
    let a = xs[0];
    Ok(match kind {
        OpKind::Add => {
            same_shape(kind, a, xs[1])?;
            a.zip(xs[1], |x, y| x + y)
        }
        OpKind::Sub => {
            same_shape(kind, a, xs[1])?;
            a.zip(xs[1], |x, y| x - y)
        }
        OpKind::Mul => {
            same_shape(kind, a, xs[1])?;
            a.zip(xs[1], |x, y| x * y)
        }
        OpKind::Scale(c) => a.map(|x| x * c),
        OpKind::Shift(c) => a.map(|x| x + c),
        OpKind::MatMul => a.matmul(xs[1]).map_err(|_| mismatch(kind, a, Some(xs[1])))?,
        OpKind::Transpose => a.transpose().map_err(|_| mismatch(kind, a, None))?,
        OpKind::AddRow => {
            let b = xs[1];
            if a.rank() != 2 || b.len() != a.cols() {
                return Err(mismatch(kind, a, Some(b)));
            }
            let mut out = a.clone();
            let c = a.cols();
            for row in out.data_mut().chunks_mut(c) {
                for (v, &bv) in row.iter_mut().zip(b.data()) {
                    *v += bv;
                }
            }
            out
        }
        OpKind::RowSoftmax => {
            rank2(kind, a)?;
            softmax_rows(a)
        }
        OpKind::LayerNorm => {
            rank2(kind, a)?;
            layer_norm_rows(a).0
        }
        OpKind::Tanh => a.map(f64::tanh),
        OpKind::MeanPool => {
            rank2(kind, a)?;
            let (n, c) = (a.rows(), a.cols());
            let mut out = vec![0.0; c];
            for r in 0..n {
                for (o, &v) in out.iter_mut().zip(a.row(r)) {
                    *o += v;
                }
            }
            for o in out.iter_mut() {
                *o /= n as f64;
            }
            Tensor::matrix(1, c, out)?
        }
        OpKind::Dot => {
            same_shape(kind, a, xs[1])?;
            Tensor::scalar(dot(a.data(), xs[1].data()))
        }
        OpKind::Norm => Tensor::scalar(norm(a.data())),
        OpKind::Cosine => {
            let b = xs[1];
            same_shape(kind, a, b)?;
            let (na, nb) = (norm(a.data()), norm(b.data()));
            if na < MIN_COSINE_NORM || nb < MIN_COSINE_NORM {
                return Err(Error::ZeroNorm("cosine-similarity"));
            }
            Tensor::scalar(dot(a.data(), b.data()) / (na * nb))
        }
        OpKind::Hinge => a.map(|x| x.max(0.0)),
        OpKind::Abs => a.map(f64::abs),
        OpKind::Sum => Tensor::scalar(a.data().iter().sum()),
    })
}

/// Vector-Jacobian product: gradients for each operand given the upstream
/// gradient `g` of the output `out`.
/// Like [`vjp`], but only for operands flagged in `want`. Matrix products
/// skip the unwanted side entirely.
pub fn vjp_selected(kind: &OpKind, xs: &[&Tensor], out: &Tensor, g: &Tensor, want: &[bool]) -> Vec<Option<Tensor>> {
    if let OpKind::MatMul = kind {
        let ga = want[0].then(|| g.matmul_nt(xs[1]));
        let gb = want[1].then(|| xs[0].matmul_tn(g));
        return vec![ga, gb];
    }
    vjp(kind, xs, out, g)
        .into_iter()
        .zip(want)
        .map(|(t, &w)| w.then_some(t))
        .collect()
}

pub fn vjp(kind: &OpKind, xs: &[&Tensor], out: &Tensor, g: &Tensor) -> Vec<Tensor> {
    let a = xs[0];
    match kind {
        OpKind::Add => vec![g.clone(), g.clone()],
        OpKind::Sub => vec![g.clone(), g.map(|v| -v)],
        OpKind::Mul => vec![g.zip(xs[1], |gv, b| gv * b), g.zip(a, |gv, x| gv * x)],
        OpKind::Scale(c) => vec![g.map(|v| v * c)],
        OpKind::Shift(_) => vec![g.clone()],
        OpKind::MatMul => {
            let b = xs[1];
            // shapes were validated on the forward pass
            let ga = g.matmul_nt(b);
            let gb = a.matmul_tn(g);
            vec![ga, gb]
        }
        OpKind::Transpose => vec![g.transpose().unwrap()],
        OpKind::AddRow => {
            let b = xs[1];
            let c = a.cols();
            let mut gb = vec![0.0; c];
            for row in g.data().chunks(c) {
                for (o, &v) in gb.iter_mut().zip(row) {
                    *o += v;
                }
            }
            vec![g.clone(), Tensor::new(b.shape().to_vec(), gb).unwrap()]
        }
        OpKind::RowSoftmax => {
            let c = a.cols();
            let mut gx = g.clone();
            for (r, row) in gx.data_mut().chunks_mut(c).enumerate() {
                let y = out.row(r);
                let s = dot(row, y);
                for (v, &yv) in row.iter_mut().zip(y) {
                    *v = yv * (*v - s);
                }
            }
            vec![gx]
        }
        OpKind::LayerNorm => {
            let (_, inv_std) = layer_norm_rows(a);
            let c = a.cols();
            let mut gx = g.clone();
            for (r, row) in gx.data_mut().chunks_mut(c).enumerate() {
                let y = out.row(r);
                let mean_g = row.iter().sum::<f64>() / c as f64;
                let mean_gy = dot(row, y) / c as f64;
                for (v, &yv) in row.iter_mut().zip(y) {
                    *v = inv_std[r] * (*v - mean_g - yv * mean_gy);
                }
            }
            vec![gx]
        }
        OpKind::Tanh => vec![g.zip(out, |gv, y| gv * (1.0 - y * y))],
        OpKind::MeanPool => {
            let n = a.rows() as f64;
            let c = a.cols();
            let mut gx = Tensor::zeros(a.shape());
            for row in gx.data_mut().chunks_mut(c) {
                for (v, &gv) in row.iter_mut().zip(g.data()) {
                    *v = gv / n;
                }
            }
            vec![gx]
        }
        OpKind::Dot => {
            let s = g.item();
            vec![xs[1].map(|v| v * s), a.map(|v| v * s)]
        }
        OpKind::Norm => {
            let n = out.item();
            let s = g.item();
            if n == 0.0 {
                vec![Tensor::zeros(a.shape())]
            } else {
                vec![a.map(|v| s * v / n)]
            }
        }
        OpKind::Cosine => {
            let b = xs[1];
            let s = g.item();
            let cos = out.item();
            let (na, nb) = (norm(a.data()), norm(b.data()));
            // d cos / d a = b / (|a||b|) - cos * a / |a|^2
            let ga = a.zip(b, |x, y| s * (y / (na * nb) - cos * x / (na * na)));
            let gb = b.zip(a, |y, x| s * (x / (na * nb) - cos * y / (nb * nb)));
            vec![ga, gb]
        }
        OpKind::Hinge => vec![g.zip(a, |gv, x| if x > 0.0 { gv } else { 0.0 })],
        OpKind::Abs => vec![g.zip(a, |gv, x| {
            if x > 0.0 {
                gv
            } else if x < 0.0 {
                -gv
            } else {
                0.0
            }
        })],
        OpKind::Sum => vec![Tensor::filled(a.shape(), g.item())],
    }
}
