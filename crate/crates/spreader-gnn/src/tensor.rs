use crate::error::{Error, Result};

/// Dense 2-D array of f64, row-major, with an optional gradient slot.
///
/// This is the only tensor rank in the crate; 1-D sequences are stored as
/// `channels x length` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "tensor {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Tensor {
            rows,
            cols,
            data,
            grad: None,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            grad: None,
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![value],
            grad: None,
        }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Reinterpret the same row-major buffer under a new shape.
    pub fn reshaped(&self, rows: usize, cols: usize) -> Result<Tensor> {
        if rows * cols != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {}x{} to {rows}x{cols}",
                self.rows, self.cols
            )));
        }
        Tensor::new(rows, cols, self.data.clone())
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::Shape(
                "gradient length does not match tensor".to_string(),
            ));
        }
        self.grad = Some(grad);
        Ok(())
    }

    /// Like [`Self::set_grad`] but copies into the existing buffer when one
    /// is already allocated.
    pub fn set_grad_from(&mut self, src: &[f64]) -> Result<()> {
        if src.len() != self.data.len() {
            return Err(Error::Shape(
                "gradient length does not match tensor".to_string(),
            ));
        }
        match &mut self.grad {
            Some(g) => g.copy_from_slice(src),
            None => self.grad = Some(src.to_vec()),
        }
        Ok(())
    }

    /// Simultaneous access to the values and the gradient, for optimizers.
    pub fn data_and_grad_mut(&mut self) -> (&mut [f64], Option<&[f64]>) {
        (&mut self.data, self.grad.as_deref())
    }

    pub fn clear_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        // bitwise fold instead of a short-circuiting all() so the scan
        // vectorizes; the common case reads every element anyway
        self.data.iter().fold(true, |acc, v| acc & v.is_finite())
    }

    /// Dense matrix product, used by forward kernels and by test oracles alike.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Tensor::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }
}
