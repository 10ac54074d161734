use crate::{NnError, Real, Result};

/// Row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor2<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor2<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(NnError::ShapeMismatch {
                op: "tensor",
                expected: format!("{} values for {rows}x{cols}", rows * cols),
                got: data.len().to_string(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(NnError::ShapeMismatch {
                    op: "tensor",
                    expected: cols.to_string(),
                    got: r.len().to_string(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn cast<U: Real>(&self) -> Tensor2<U> {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Gathers rows by index.
    pub fn gather_rows(&self, indices: &[usize]) -> Self {
        let mut out = Self::zeros(indices.len(), self.cols);
        for (k, &i) in indices.iter().enumerate() {
            out.row_mut(k).copy_from_slice(self.row(i));
        }
        out
    }

    /// Concatenates columns of two tensors with the same row count.
    pub fn hcat(&self, other: &Self) -> Result<Self> {
        check_rows("hcat", self, other.rows)?;
        let cols = self.cols + other.cols;
        let mut out = Self::zeros(self.rows, cols);
        for i in 0..self.rows {
            let row = out.row_mut(i);
            row[..self.cols].copy_from_slice(self.row(i));
            row[self.cols..].copy_from_slice(other.row(i));
        }
        Ok(out)
    }

    /// Splits off the first `left` columns.
    pub fn split_cols(&self, left: usize) -> (Self, Self) {
        let right = self.cols - left;
        let mut a = Self::zeros(self.rows, left);
        let mut b = Self::zeros(self.rows, right);
        for i in 0..self.rows {
            a.row_mut(i).copy_from_slice(&self.row(i)[..left]);
            b.row_mut(i).copy_from_slice(&self.row(i)[left..]);
        }
        (a, b)
    }

    pub fn ensure_finite(&self, op: &'static str) -> Result<()> {
        crate::ensure_finite(op, &self.data)
    }
}

fn check_rows<T>(op: &'static str, t: &Tensor2<T>, rows: usize) -> Result<()> {
    if t.rows != rows {
        return Err(NnError::ShapeMismatch {
            op,
            expected: format!("{rows} rows"),
            got: format!("{} rows", t.rows),
        });
    }
    Ok(())
}

fn check_cols<T>(op: &'static str, t: &Tensor2<T>, cols: usize) -> Result<()> {
    if t.cols != cols {
        return Err(NnError::ShapeMismatch {
            op,
            expected: format!("{cols} columns"),
            got: format!("{} columns", t.cols),
        });
    }
    Ok(())
}

/// `a bᵀ` for `a: m×k`, `b: n×k`.
pub fn matmul_nt<T: Real>(a: &Tensor2<T>, b: &Tensor2<T>) -> Result<Tensor2<T>> {
    check_cols("matmul_nt", b, a.cols)?;
    let (m, k, n) = (a.rows, a.cols, b.rows);
    let mut c = Tensor2::zeros(m, n);
    // SAFETY: shapes were checked above; strides describe the row-major buffers.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            &a.data,
            (k as isize, 1),
            &b.data,
            (1, k as isize),
            T::zero(),
            &mut c.data,
            (n as isize, 1),
        );
    }
    Ok(c)
}

/// `a b` for `a: m×k`, `b: k×n`.
pub fn matmul_nn<T: Real>(a: &Tensor2<T>, b: &Tensor2<T>) -> Result<Tensor2<T>> {
    check_rows("matmul_nn", b, a.cols)?;
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut c = Tensor2::zeros(m, n);
    // SAFETY: shapes were checked above; strides describe the row-major buffers.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            &a.data,
            (k as isize, 1),
            &b.data,
            (n as isize, 1),
            T::zero(),
            &mut c.data,
            (n as isize, 1),
        );
    }
    Ok(c)
}

/// `c += aᵀ b` for `a: r×m`, `b: r×n`, `c: m×n`.
pub fn matmul_tn_acc<T: Real>(a: &Tensor2<T>, b: &Tensor2<T>, c: &mut Tensor2<T>) -> Result<()> {
    check_rows("matmul_tn", b, a.rows)?;
    if c.shape() != (a.cols, b.cols) {
        return Err(NnError::ShapeMismatch {
            op: "matmul_tn",
            expected: format!("{}x{}", a.cols, b.cols),
            got: format!("{}x{}", c.rows, c.cols),
        });
    }
    let (m, k, n) = (a.cols, a.rows, b.cols);
    // SAFETY: shapes were checked above; strides describe the row-major buffers.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            &a.data,
            (1, m as isize),
            &b.data,
            (n as isize, 1),
            T::one(),
            &mut c.data,
            (n as isize, 1),
        );
    }
    Ok(())
}
