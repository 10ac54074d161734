//! Dense layer, activations and row pooling, each with its backward pass.

use crate::tensor::{matmul_nn, matmul_nt, matmul_tn_acc, Tensor2};
use crate::{NnError, Real, Result};

/// `y = x Wᵀ + b` with `W: out × in`, plus gradient accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer<T> {
    pub weight: Tensor2<T>,
    pub bias: Vec<T>,
    pub grad_weight: Tensor2<T>,
    pub grad_bias: Vec<T>,
}

impl<T: Real> LinearLayer<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor2::zeros(outputs, inputs),
            bias: vec![T::zero(); outputs],
            grad_weight: Tensor2::zeros(outputs, inputs),
            grad_bias: vec![T::zero(); outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.fill(T::zero());
        self.grad_bias.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn forward(&self, x: &Tensor2<T>) -> Result<Tensor2<T>> {
        if x.cols() != self.inputs() {
            return Err(NnError::ShapeMismatch {
                op: "linear_forward",
                expected: format!("{} input columns", self.inputs()),
                got: x.cols().to_string(),
            });
        }
        let mut y = matmul_nt(x, &self.weight)?;
        for i in 0..y.rows() {
            for (v, &b) in y.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        y.ensure_finite("linear_forward")?;
        Ok(y)
    }

    /// Accumulates parameter gradients for input `x` and upstream `dy`.
    pub fn accumulate_grads(&mut self, x: &Tensor2<T>, dy: &Tensor2<T>) -> Result<()> {
        if dy.cols() != self.outputs() || dy.rows() != x.rows() {
            return Err(NnError::ShapeMismatch {
                op: "linear_backward",
                expected: format!("{}x{}", x.rows(), self.outputs()),
                got: format!("{}x{}", dy.rows(), dy.cols()),
            });
        }
        matmul_tn_acc(dy, x, &mut self.grad_weight)?;
        for i in 0..dy.rows() {
            for (g, &d) in self.grad_bias.iter_mut().zip(dy.row(i)) {
                *g += d;
            }
        }
        Ok(())
    }

    /// Accumulates parameter gradients and returns `dx`.
    pub fn backward(&mut self, x: &Tensor2<T>, dy: &Tensor2<T>) -> Result<Tensor2<T>> {
        self.accumulate_grads(x, dy)?;
        let dx = matmul_nn(dy, &self.weight)?;
        dx.ensure_finite("linear_backward")?;
        Ok(dx)
    }

    /// Adds another layer's gradients into this one's.
    pub fn add_grads(&mut self, other: &Self) {
        for (a, &b) in self
            .grad_weight
            .data_mut()
            .iter_mut()
            .zip(other.grad_weight.data())
        {
            *a += b;
        }
        for (a, &b) in self.grad_bias.iter_mut().zip(&other.grad_bias) {
            *a += b;
        }
    }

    /// `(value, gradient)` views of the weight and the bias.
    pub fn params_mut(&mut self) -> [(&mut [T], &[T]); 2] {
        [
            (self.weight.data_mut(), self.grad_weight.data()),
            (&mut self.bias, &self.grad_bias),
        ]
    }

    pub fn cast<U: Real>(&self) -> LinearLayer<U> {
        let cast = |v: &[T]| {
            v.iter()
                .map(|x| U::from_f64(x.as_f64()))
                .collect::<Vec<U>>()
        };
        LinearLayer {
            weight: self.weight.cast(),
            bias: cast(&self.bias),
            grad_weight: self.grad_weight.cast(),
            grad_bias: cast(&self.grad_bias),
        }
    }
}

pub fn relu_forward<T: Real>(x: &Tensor2<T>) -> Tensor2<T> {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
    y
}

/// Gradient through ReLU given its output `y`; zero where `y <= 0`.
pub fn relu_backward<T: Real>(y: &Tensor2<T>, dy: &Tensor2<T>) -> Tensor2<T> {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid_forward<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| sigmoid(v)).collect()
}

/// Row groups `offsets[g]..offsets[g + 1]`; `offsets` starts at 0, ends at the row count.
fn check_offsets<T: Real>(op: &'static str, x: &Tensor2<T>, offsets: &[usize]) -> Result<()> {
    let ok = offsets.first() == Some(&0)
        && offsets.last() == Some(&x.rows())
        && offsets.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(())
    } else {
        Err(NnError::ShapeMismatch {
            op,
            expected: "non-empty row groups covering the input".into(),
            got: format!("{offsets:?}"),
        })
    }
}

/// Column-wise maximum over each row group.
#[derive(Clone, Debug)]
pub struct MaxPool<T> {
    pub output: Tensor2<T>,
    /// Winning input row per output cell; the first row wins ties.
    pub argmax: Vec<usize>,
    input_rows: usize,
}

pub fn maxpool_rows<T: Real>(x: &Tensor2<T>, offsets: &[usize]) -> Result<MaxPool<T>> {
    check_offsets("maxpool_rows", x, offsets)?;
    let (groups, cols) = (offsets.len() - 1, x.cols());
    let mut output = Tensor2::zeros(groups, cols);
    let mut argmax = vec![0; groups * cols];
    for g in 0..groups {
        let start = offsets[g];
        let out = output.row_mut(g);
        out.copy_from_slice(x.row(start));
        let arg = &mut argmax[g * cols..(g + 1) * cols];
        arg.iter_mut().for_each(|a| *a = start);
        for r in start + 1..offsets[g + 1] {
            for (c, &v) in x.row(r).iter().enumerate() {
                if v > out[c] {
                    out[c] = v;
                    arg[c] = r;
                }
            }
        }
    }
    Ok(MaxPool {
        output,
        argmax,
        input_rows: x.rows(),
    })
}

impl<T: Real> MaxPool<T> {
    pub fn backward(&self, dy: &Tensor2<T>) -> Tensor2<T> {
        let cols = self.output.cols();
        let mut dx = Tensor2::zeros(self.input_rows, cols);
        for g in 0..self.output.rows() {
            for c in 0..cols {
                let r = self.argmax[g * cols + c];
                let v = dx.get(r, c) + dy.get(g, c);
                dx.set(r, c, v);
            }
        }
        dx
    }
}

/// Column-wise mean over each row group.
pub fn avgpool_rows<T: Real>(x: &Tensor2<T>, offsets: &[usize]) -> Result<Tensor2<T>> {
    check_offsets("avgpool_rows", x, offsets)?;
    let mut out = Tensor2::zeros(offsets.len() - 1, x.cols());
    for g in 0..offsets.len() - 1 {
        let inv = T::one() / T::from_f64((offsets[g + 1] - offsets[g]) as f64);
        let acc = out.row_mut(g);
        for r in offsets[g]..offsets[g + 1] {
            for (a, &v) in acc.iter_mut().zip(x.row(r)) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a *= inv);
    }
    Ok(out)
}

pub fn avgpool_rows_backward<T: Real>(dy: &Tensor2<T>, offsets: &[usize]) -> Tensor2<T> {
    let rows = *offsets.last().unwrap_or(&0);
    let mut dx = Tensor2::zeros(rows, dy.cols());
    for g in 0..offsets.len() - 1 {
        let inv = T::one() / T::from_f64((offsets[g + 1] - offsets[g]) as f64);
        for r in offsets[g]..offsets[g + 1] {
            for (d, &v) in dx.row_mut(r).iter_mut().zip(dy.row(g)) {
                *d = v * inv;
            }
        }
    }
    dx
}
