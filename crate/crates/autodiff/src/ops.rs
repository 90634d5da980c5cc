use std::ops::{Add, Mul, Neg, Sub};
use std::rc::Rc;

use ndarray::{concatenate, s, Array2, Axis};

use crate::graph::Var;

#[derive(Clone)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(f64),
    AddScalar,
    MatMul,
    Transpose,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Sqrt,
    MulConst(Rc<Array2<f64>>),
    SumAll,
    BroadcastScalar,
    SumRows,
    BroadcastRows,
    SumCols,
    BroadcastCols,
    SliceCols(usize),
    PadCols(usize),
    SliceRows(usize),
    PadRows(usize),
    ConcatCols,
    ConcatRows,
}

impl Op {
    /// Gradient contribution to each parent, expressed with differentiable ops.
    pub(crate) fn backward(&self, out: &Var, parents: &[Var], g: &Var) -> Vec<Option<Var>> {
        let p = |i: usize| &parents[i];
        match self {
            Op::Leaf => Vec::new(),
            Op::Add => vec![Some(g.clone()), Some(g.clone())],
            Op::Sub => vec![Some(g.clone()), Some(g.neg())],
            Op::Mul => vec![Some(g.mul(p(1))), Some(g.mul(p(0)))],
            Op::Div => vec![Some(g.div(p(1))), Some(g.mul(out).div(p(1)).neg())],
            Op::Neg => vec![Some(g.neg())],
            Op::Scale(c) => vec![Some(g.scale(*c))],
            Op::AddScalar => vec![Some(g.clone())],
            Op::MatMul => vec![
                Some(g.matmul(&p(1).t())),
                Some(p(0).t().matmul(g)),
            ],
            Op::Transpose => vec![Some(g.t())],
            Op::Tanh => vec![Some(g.mul(&out.mul(out).neg().add_scalar(1.0)))],
            Op::Sigmoid => vec![Some(g.mul(out).mul(&out.neg().add_scalar(1.0)))],
            Op::Exp => vec![Some(g.mul(out))],
            Op::Log => vec![Some(g.div(p(0)))],
            Op::Sqrt => vec![Some(g.scale(0.5).div(out))],
            Op::MulConst(m) => vec![Some(g.mul_const(Rc::clone(m)))],
            Op::SumAll => {
                let (r, c) = p(0).shape();
                vec![Some(g.broadcast_scalar(r, c))]
            }
            Op::BroadcastScalar => vec![Some(g.sum_all())],
            Op::SumRows => vec![Some(g.broadcast_rows(p(0).rows()))],
            Op::BroadcastRows => vec![Some(g.sum_rows())],
            Op::SumCols => vec![Some(g.broadcast_cols(p(0).cols()))],
            Op::BroadcastCols => vec![Some(g.sum_cols())],
            Op::SliceCols(start) => vec![Some(g.pad_cols(*start, p(0).cols()))],
            Op::PadCols(start) => vec![Some(g.slice_cols(*start, p(0).cols()))],
            Op::SliceRows(start) => vec![Some(g.pad_rows(*start, p(0).rows()))],
            Op::PadRows(start) => vec![Some(g.slice_rows(*start, p(0).rows()))],
            Op::ConcatCols => {
                let mut offset = 0;
                parents
                    .iter()
                    .map(|part| {
                        let piece = g.slice_cols(offset, part.cols());
                        offset += part.cols();
                        Some(piece)
                    })
                    .collect()
            }
            Op::ConcatRows => {
                let mut offset = 0;
                parents
                    .iter()
                    .map(|part| {
                        let piece = g.slice_rows(offset, part.rows());
                        offset += part.rows();
                        Some(piece)
                    })
                    .collect()
            }
        }
    }
}

fn same_shape(op: &str, a: &Var, b: &Var) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{op}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
}

impl Var {
    pub fn add(&self, other: &Var) -> Var {
        same_shape("add", self, other);
        Var::from_op(self.value() + other.value(), Op::Add, vec![self.clone(), other.clone()])
    }

    pub fn sub(&self, other: &Var) -> Var {
        same_shape("sub", self, other);
        Var::from_op(self.value() - other.value(), Op::Sub, vec![self.clone(), other.clone()])
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Var) -> Var {
        same_shape("mul", self, other);
        Var::from_op(self.value() * other.value(), Op::Mul, vec![self.clone(), other.clone()])
    }

    /// Elementwise quotient.
    pub fn div(&self, other: &Var) -> Var {
        same_shape("div", self, other);
        Var::from_op(self.value() / other.value(), Op::Div, vec![self.clone(), other.clone()])
    }

    pub fn neg(&self) -> Var {
        Var::from_op(-self.value(), Op::Neg, vec![self.clone()])
    }

    pub fn scale(&self, c: f64) -> Var {
        Var::from_op(self.value() * c, Op::Scale(c), vec![self.clone()])
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        Var::from_op(self.value() + c, Op::AddScalar, vec![self.clone()])
    }

    pub fn matmul(&self, other: &Var) -> Var {
        assert_eq!(
            self.cols(),
            other.rows(),
            "matmul: {:?} x {:?}",
            self.shape(),
            other.shape()
        );
        Var::from_op(self.value().dot(other.value()), Op::MatMul, vec![self.clone(), other.clone()])
    }

    pub fn t(&self) -> Var {
        let v = self.value().t().as_standard_layout().into_owned();
        Var::from_op(v, Op::Transpose, vec![self.clone()])
    }

    pub fn tanh(&self) -> Var {
        Var::from_op(self.value().mapv(f64::tanh), Op::Tanh, vec![self.clone()])
    }

    pub fn sigmoid(&self) -> Var {
        let v = self.value().mapv(|x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        });
        Var::from_op(v, Op::Sigmoid, vec![self.clone()])
    }

    pub fn exp(&self) -> Var {
        Var::from_op(self.value().mapv(f64::exp), Op::Exp, vec![self.clone()])
    }

    pub fn ln(&self) -> Var {
        Var::from_op(self.value().mapv(f64::ln), Op::Log, vec![self.clone()])
    }

    pub fn sqrt(&self) -> Var {
        Var::from_op(self.value().mapv(f64::sqrt), Op::Sqrt, vec![self.clone()])
    }

    /// Elementwise product with a constant matrix of the same shape.
    pub fn mul_const(&self, m: Rc<Array2<f64>>) -> Var {
        assert_eq!(self.shape(), m.dim(), "mul_const: shape mismatch");
        let v = self.value() * &*m;
        Var::from_op(v, Op::MulConst(m), vec![self.clone()])
    }

    pub fn relu(&self) -> Var {
        self.leaky_relu(0.0)
    }

    /// `max(x, slope·x)`; the mask is constant so second derivatives vanish, as they should.
    pub fn leaky_relu(&self, slope: f64) -> Var {
        let mask = self.value().mapv(|x| if x > 0.0 { 1.0 } else { slope });
        self.mul_const(Rc::new(mask))
    }

    pub fn square(&self) -> Var {
        self.mul(self)
    }

    pub fn sum_all(&self) -> Var {
        Var::from_op(
            Array2::from_elem((1, 1), self.value().sum()),
            Op::SumAll,
            vec![self.clone()],
        )
    }

    pub fn mean_all(&self) -> Var {
        let n = self.value().len() as f64;
        self.sum_all().scale(1.0 / n)
    }

    pub(crate) fn broadcast_scalar(&self, rows: usize, cols: usize) -> Var {
        let v = Array2::from_elem((rows, cols), self.item());
        Var::from_op(v, Op::BroadcastScalar, vec![self.clone()])
    }

    /// `[m, n] → [1, n]`
    pub fn sum_rows(&self) -> Var {
        let v = self.value().sum_axis(Axis(0)).insert_axis(Axis(0));
        Var::from_op(v, Op::SumRows, vec![self.clone()])
    }

    /// `[1, n] → [rows, n]`
    pub fn broadcast_rows(&self, rows: usize) -> Var {
        assert_eq!(self.rows(), 1, "broadcast_rows needs a single row");
        let v = self
            .value()
            .broadcast((rows, self.cols()))
            .expect("row broadcast")
            .to_owned();
        Var::from_op(v, Op::BroadcastRows, vec![self.clone()])
    }

    /// `[m, n] → [m, 1]`
    pub fn sum_cols(&self) -> Var {
        let v = self.value().sum_axis(Axis(1)).insert_axis(Axis(1));
        Var::from_op(v, Op::SumCols, vec![self.clone()])
    }

    /// `[m, 1] → [m, cols]`
    pub fn broadcast_cols(&self, cols: usize) -> Var {
        assert_eq!(self.cols(), 1, "broadcast_cols needs a single column");
        let v = self
            .value()
            .broadcast((self.rows(), cols))
            .expect("column broadcast")
            .to_owned();
        Var::from_op(v, Op::BroadcastCols, vec![self.clone()])
    }

    /// Adds a `[1, n]` row vector to every row.
    pub fn add_row(&self, row: &Var) -> Var {
        self.add(&row.broadcast_rows(self.rows()))
    }

    /// Multiplies every column by a `[m, 1]` column vector.
    pub fn mul_col(&self, col: &Var) -> Var {
        self.mul(&col.broadcast_cols(self.cols()))
    }

    /// Divides every column by a `[m, 1]` column vector.
    pub fn div_col(&self, col: &Var) -> Var {
        self.div(&col.broadcast_cols(self.cols()))
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Var {
        assert!(start + len <= self.cols(), "slice_cols out of range");
        let v = self.value().slice(s![.., start..start + len]).to_owned();
        Var::from_op(v, Op::SliceCols(start), vec![self.clone()])
    }

    pub(crate) fn pad_cols(&self, start: usize, total: usize) -> Var {
        let mut v = Array2::zeros((self.rows(), total));
        v.slice_mut(s![.., start..start + self.cols()]).assign(self.value());
        Var::from_op(v, Op::PadCols(start), vec![self.clone()])
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Var {
        assert!(start + len <= self.rows(), "slice_rows out of range");
        let v = self.value().slice(s![start..start + len, ..]).to_owned();
        Var::from_op(v, Op::SliceRows(start), vec![self.clone()])
    }

    pub(crate) fn pad_rows(&self, start: usize, total: usize) -> Var {
        let mut v = Array2::zeros((total, self.cols()));
        v.slice_mut(s![start..start + self.rows(), ..]).assign(self.value());
        Var::from_op(v, Op::PadRows(start), vec![self.clone()])
    }

    pub fn concat_cols(parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let views: Vec<_> = parts.iter().map(|p| p.value().view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        Var::from_op(v, Op::ConcatCols, parts.to_vec())
    }

    pub fn concat_rows(parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let views: Vec<_> = parts.iter().map(|p| p.value().view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        Var::from_op(v, Op::ConcatRows, parts.to_vec())
    }

    /// Row-wise softmax. The row max is subtracted as a constant, which leaves
    /// the function (and therefore every derivative) unchanged.
    pub fn softmax_rows(&self) -> Var {
        let e = self.sub_row_max().exp();
        e.div_col(&e.sum_cols())
    }

    /// Row-wise log-softmax.
    pub fn log_softmax_rows(&self) -> Var {
        let shifted = self.sub_row_max();
        let lse = shifted.exp().sum_cols().ln();
        shifted.sub(&lse.broadcast_cols(self.cols()))
    }

    fn sub_row_max(&self) -> Var {
        let max = self
            .value()
            .map_axis(Axis(1), |row| row.fold(f64::NEG_INFINITY, |a, &b| a.max(b)))
            .insert_axis(Axis(1));
        let max = Var::constant(max).broadcast_cols(self.cols());
        self.sub(&max)
    }
}

impl Add for &Var {
    type Output = Var;
    fn add(self, rhs: &Var) -> Var {
        Var::add(self, rhs)
    }
}

impl Sub for &Var {
    type Output = Var;
    fn sub(self, rhs: &Var) -> Var {
        Var::sub(self, rhs)
    }
}

impl Mul for &Var {
    type Output = Var;
    fn mul(self, rhs: &Var) -> Var {
        Var::mul(self, rhs)
    }
}

impl Neg for &Var {
    type Output = Var;
    fn neg(self) -> Var {
        Var::neg(self)
    }
}
