use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Val(usize);

/// Backward rule: (all node values, gradient of this node, gradients of
/// strictly earlier nodes). Parents always precede their outputs on the
/// tape, so the earlier-grads slice covers every parent.
type BackFn = Box<dyn Fn(&[Tensor], &Tensor, &mut [Tensor])>;

/// Dynamic reverse-mode tape over 2-D f64 tensors.
///
/// A tape is built per forward pass: leaves go in via [`Tape::input`], ops
/// append nodes with recorded backward rules, and [`Tape::backward`] replays
/// them in reverse, accumulating gradients for every node.
#[derive(Default)]
pub struct Tape {
    values: Vec<Tensor>,
    back_fns: Vec<Option<BackFn>>,
}

/// Gradients produced by one backward pass, indexed by tape handle.
pub struct Grads {
    grads: Vec<Tensor>,
}

impl Grads {
    pub fn get(&self, v: Val) -> &Tensor {
        &self.grads[v.0]
    }
}

fn axpy(dst: &mut [f64], scale: f64, src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four independent accumulators: float sums don't reassociate, so a
    // plain zip-sum is latency-bound on one add chain
    let quads = a.len() / 4 * 4;
    let mut acc = [0.0f64; 4];
    for (ca, cb) in a[..quads].chunks_exact(4).zip(b[..quads].chunks_exact(4)) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in a[quads..].iter().zip(&b[quads..]) {
        s += x * y;
    }
    s
}

/// dst += a * b^T without materializing the transpose.
fn mm_nt_acc(a: &Tensor, b: &Tensor, dst: &mut Tensor) {
    debug_assert_eq!(a.cols(), b.cols());
    let cols = dst.cols();
    for i in 0..a.rows() {
        let arow = a.row(i);
        let drow = &mut dst.data_mut()[i * cols..(i + 1) * cols];
        for (j, d) in drow.iter_mut().enumerate() {
            *d += dot(arow, b.row(j));
        }
    }
}

/// dst += a^T * b without materializing the transpose.
fn mm_tn_acc(a: &Tensor, b: &Tensor, dst: &mut Tensor) {
    debug_assert_eq!(a.rows(), b.rows());
    let cols = dst.cols();
    for k in 0..a.rows() {
        let arow = a.row(k);
        let brow = b.row(k);
        for (j, &aj) in arow.iter().enumerate() {
            if aj != 0.0 {
                axpy(&mut dst.data_mut()[j * cols..(j + 1) * cols], aj, brow);
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, v: Val) -> &Tensor {
        &self.values[v.0]
    }

    /// Index the next pushed node will get; lets backward closures refer to
    /// their own output.
    fn next_idx(&self) -> usize {
        self.values.len()
    }

    fn push(&mut self, value: Tensor, back: Option<BackFn>, op: &str) -> Result<Val> {
        if !value.all_finite() {
            return Err(Error::Numeric(format!("{op} produced a non-finite value")));
        }
        self.values.push(value);
        self.back_fns.push(back);
        Ok(Val(self.values.len() - 1))
    }

    pub fn input(&mut self, value: Tensor) -> Result<Val> {
        self.push(value, None, "input")
    }

    pub fn matmul(&mut self, a: Val, b: Val) -> Result<Val> {
        let out = self.value(a).matmul(self.value(b))?;
        let back: BackFn = Box::new(move |values, g, grads| {
            mm_nt_acc(g, &values[b.0], &mut grads[a.0]);
            mm_tn_acc(&values[a.0], g, &mut grads[b.0]);
        });
        self.push(out, Some(back), "matmul")
    }

    /// Adds a 1 x cols bias row to every row of x.
    pub fn add_bias(&mut self, x: Val, bias: Val) -> Result<Val> {
        let xv = self.value(x);
        let bv = self.value(bias);
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::Shape(format!(
                "add_bias: x is {}x{}, bias is {}x{}",
                xv.rows(),
                xv.cols(),
                bv.rows(),
                bv.cols()
            )));
        }
        let (rows, cols) = xv.shape();
        let mut out = xv.clone();
        let brow = bv.row(0).to_vec();
        for r in 0..rows {
            axpy(&mut out.data_mut()[r * cols..(r + 1) * cols], 1.0, &brow);
        }
        let back: BackFn = Box::new(move |_, g, grads| {
            axpy(grads[x.0].data_mut(), 1.0, g.data());
            let db = grads[bias.0].data_mut();
            for r in 0..rows {
                axpy(db, 1.0, g.row(r));
            }
        });
        self.push(out, Some(back), "add_bias")
    }

    fn unary(
        &mut self,
        x: Val,
        op: &str,
        fwd: impl Fn(f64) -> f64,
        // derivative expressed in terms of (input, output)
        dfn: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Val> {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let data: Vec<f64> = xv.data().iter().map(|&v| fwd(v)).collect();
        let out = Tensor::new(rows, cols, data)?;
        let out_idx = self.next_idx();
        let back: BackFn = Box::new(move |values, g, grads| {
            let xs = values[x.0].data();
            let os = values[out_idx].data();
            for ((d, &gv), (&iv, &ov)) in grads[x.0]
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(xs.iter().zip(os))
            {
                *d += gv * dfn(iv, ov);
            }
        });
        self.push(out, Some(back), op)
    }

    pub fn relu(&mut self, x: Val) -> Result<Val> {
        self.unary(x, "relu", |v| v.max(0.0), |i, _| if i > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn tanh(&mut self, x: Val) -> Result<Val> {
        self.unary(x, "tanh", f64::tanh, |_, o| 1.0 - o * o)
    }

    pub fn sigmoid(&mut self, x: Val) -> Result<Val> {
        self.unary(x, "sigmoid", sigmoid, |_, o| o * (1.0 - o))
    }

    pub fn concat_cols(&mut self, a: Val, b: Val) -> Result<Val> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.rows() != bv.rows() {
            return Err(Error::Shape(format!(
                "concat_cols: {} rows vs {} rows",
                av.rows(),
                bv.rows()
            )));
        }
        let (rows, ca) = av.shape();
        let cb = bv.cols();
        let mut out = Tensor::zeros(rows, ca + cb);
        for r in 0..rows {
            out.data_mut()[r * (ca + cb)..r * (ca + cb) + ca].copy_from_slice(av.row(r));
            out.data_mut()[r * (ca + cb) + ca..(r + 1) * (ca + cb)].copy_from_slice(bv.row(r));
        }
        let back: BackFn = Box::new(move |_, g, grads| {
            for r in 0..rows {
                let grow = g.row(r);
                axpy(
                    &mut grads[a.0].data_mut()[r * ca..(r + 1) * ca],
                    1.0,
                    &grow[..ca],
                );
                axpy(
                    &mut grads[b.0].data_mut()[r * cb..(r + 1) * cb],
                    1.0,
                    &grow[ca..],
                );
            }
        });
        self.push(out, Some(back), "concat_cols")
    }

    /// Selects the given rows of x (with repetition allowed).
    pub fn gather_rows(&mut self, x: Val, rows: Vec<usize>) -> Result<Val> {
        let xv = self.value(x);
        let cols = xv.cols();
        let n = xv.rows();
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::Shape(format!("gather_rows: row {bad} out of {n}")));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in &rows {
            data.extend_from_slice(xv.row(r));
        }
        let out = Tensor::new(rows.len(), cols, data)?;
        let back: BackFn = Box::new(move |_, g, grads| {
            for (i, &r) in rows.iter().enumerate() {
                axpy(
                    &mut grads[x.0].data_mut()[r * cols..(r + 1) * cols],
                    1.0,
                    g.row(i),
                );
            }
        });
        self.push(out, Some(back), "gather_rows")
    }

    /// Inverted dropout: zero with probability p, scale survivors by 1/(1-p).
    /// Identity in eval mode.
    pub fn dropout(&mut self, x: Val, p: f64, training: bool, rng: &mut ChaCha8Rng) -> Result<Val> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout p must be in [0, 1), got {p}")));
        }
        if !training || p == 0.0 {
            // exact identity; still a tape node so gradients flow
            let xv = self.value(x).clone();
            let back: BackFn = Box::new(move |_, g, grads| {
                axpy(grads[x.0].data_mut(), 1.0, g.data());
            });
            return self.push(xv, Some(back), "dropout");
        }
        let xv = self.value(x);
        let scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..xv.data().len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { scale })
            .collect();
        let data: Vec<f64> = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::new(xv.rows(), xv.cols(), data)?;
        let back: BackFn = Box::new(move |_, g, grads| {
            for ((d, &gv), &m) in grads[x.0].data_mut().iter_mut().zip(g.data()).zip(&mask) {
                *d += gv * m;
            }
        });
        self.push(out, Some(back), "dropout")
    }

    /// Differentiable sparse-matrix x dense product. Relies on the graph
    /// being symmetric for the backward rule.
    pub fn spmm(&mut self, graph: &Rc<SparseGraph>, x: Val) -> Result<Val> {
        let out = graph.spmm(self.value(x))?;
        let g = Rc::clone(graph);
        let back: BackFn = Box::new(move |_, grad, grads| {
            g.spmm_acc(grad, &mut grads[x.0]);
        });
        self.push(out, Some(back), "spmm")
    }

    /// Differentiable neighbor-mean aggregation over the raw graph.
    pub fn mean_aggregate(&mut self, graph: &Rc<SparseGraph>, x: Val) -> Result<Val> {
        let out = graph.mean_neighbor_aggregate(self.value(x))?;
        let g = Rc::clone(graph);
        let back: BackFn = Box::new(move |_, grad, grads| {
            g.mean_aggregate_transpose_acc(grad, &mut grads[x.0]);
        });
        self.push(out, Some(back), "mean_aggregate")
    }

    /// Valid (no-padding) 1-D cross-correlation. x is in_ch x length, kernels
    /// are out_ch x (in_ch * width); output is out_ch x out_len.
    pub fn conv1d(&mut self, x: Val, kernels: Val, width: usize, stride: usize) -> Result<Val> {
        let xv = self.value(x);
        let kv = self.value(kernels);
        let (in_ch, len) = xv.shape();
        let out_ch = kv.rows();
        if stride == 0 {
            return Err(Error::Config("conv1d stride must be >= 1".to_string()));
        }
        if kv.cols() != in_ch * width {
            return Err(Error::Shape(format!(
                "conv1d: kernels have {} cols, expected in_ch {} * width {}",
                kv.cols(),
                in_ch,
                width
            )));
        }
        if len < width {
            return Err(Error::Shape(format!(
                "conv1d: input length {len} shorter than kernel width {width}"
            )));
        }
        let out_len = (len - width) / stride + 1;
        let mut out = Tensor::zeros(out_ch, out_len);
        if stride == 1 {
            // tap-major loops: the innermost op runs over the whole output
            // length, which matters when the kernel is much shorter than it
            for o in 0..out_ch {
                let krow = kv.row(o);
                for c in 0..in_ch {
                    for (j, &kval) in krow[c * width..(c + 1) * width].iter().enumerate() {
                        let src = &xv.row(c)[j..j + out_len];
                        axpy(&mut out.data_mut()[o * out_len..(o + 1) * out_len], kval, src);
                    }
                }
            }
        } else {
            for o in 0..out_ch {
                let krow = kv.row(o);
                for t in 0..out_len {
                    let mut acc = 0.0;
                    for c in 0..in_ch {
                        let xrow = &xv.row(c)[t * stride..t * stride + width];
                        acc += dot(xrow, &krow[c * width..(c + 1) * width]);
                    }
                    out.set(o, t, acc);
                }
            }
        }
        let back: BackFn = Box::new(move |values, g, grads| {
            let xv = &values[x.0];
            let kv = &values[kernels.0];
            // both sides may need updating; compute into locals to avoid
            // aliasing the grads slice twice
            let mut dx = Tensor::zeros(in_ch, len);
            let mut dk = Tensor::zeros(out_ch, in_ch * width);
            if stride == 1 {
                for o in 0..out_ch {
                    let krow = kv.row(o);
                    let grow = g.row(o);
                    for c in 0..in_ch {
                        for j in 0..width {
                            axpy(
                                &mut dx.data_mut()[c * len + j..c * len + j + out_len],
                                krow[c * width + j],
                                grow,
                            );
                            dk.data_mut()[o * in_ch * width + c * width + j] +=
                                dot(grow, &xv.row(c)[j..j + out_len]);
                        }
                    }
                }
            } else {
                for o in 0..out_ch {
                    let krow = kv.row(o);
                    let grow = g.row(o);
                    for (t, &gv) in grow.iter().enumerate() {
                        if gv == 0.0 {
                            continue;
                        }
                        for c in 0..in_ch {
                            let lo = c * len + t * stride;
                            axpy(
                                &mut dx.data_mut()[lo..lo + width],
                                gv,
                                &krow[c * width..(c + 1) * width],
                            );
                            axpy(
                                &mut dk.data_mut()[o * in_ch * width + c * width..][..width],
                                gv,
                                &xv.row(c)[t * stride..t * stride + width],
                            );
                        }
                    }
                }
            }
            axpy(grads[x.0].data_mut(), 1.0, dx.data());
            axpy(grads[kernels.0].data_mut(), 1.0, dk.data());
        });
        self.push(out, Some(back), "conv1d")
    }

    /// Windowed max over the length axis; gradient routes to the argmax
    /// (first occurrence on ties).
    pub fn maxpool1d(&mut self, x: Val, window: usize, stride: usize) -> Result<Val> {
        let xv = self.value(x);
        let (ch, len) = xv.shape();
        if stride == 0 || window == 0 {
            return Err(Error::Config("maxpool1d window/stride must be >= 1".to_string()));
        }
        if len < window {
            return Err(Error::Shape(format!(
                "maxpool1d: input length {len} shorter than window {window}"
            )));
        }
        let out_len = (len - window) / stride + 1;
        let mut out = Tensor::zeros(ch, out_len);
        let mut argmax = vec![0usize; ch * out_len];
        for c in 0..ch {
            for t in 0..out_len {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0;
                for j in 0..window {
                    let v = xv.get(c, t * stride + j);
                    if v > best {
                        best = v;
                        best_i = t * stride + j;
                    }
                }
                out.set(c, t, best);
                argmax[c * out_len + t] = best_i;
            }
        }
        let back: BackFn = Box::new(move |_, g, grads| {
            let dst = &mut grads[x.0];
            for c in 0..ch {
                for t in 0..out_len {
                    let i = argmax[c * out_len + t];
                    dst.set(c, i, dst.get(c, i) + g.get(c, t));
                }
            }
        });
        self.push(out, Some(back), "maxpool1d")
    }

    /// SortPooling readout: rows sorted descending by reversed-lexicographic
    /// comparison (last channel is the primary key), truncated or zero-padded
    /// to exactly k rows.
    pub fn sort_pool(&mut self, x: Val, k: usize) -> Result<Val> {
        if k == 0 {
            return Err(Error::Config("sort_pool k must be >= 1".to_string()));
        }
        let xv = self.value(x);
        let (n, cols) = xv.shape();
        let order = sort_pool_order(xv);
        let mut out = Tensor::zeros(k, cols);
        let kept = n.min(k);
        for (i, &src) in order[..kept].iter().enumerate() {
            out.data_mut()[i * cols..(i + 1) * cols].copy_from_slice(xv.row(src));
        }
        let back: BackFn = Box::new(move |_, g, grads| {
            for (i, &src) in order[..kept].iter().enumerate() {
                axpy(
                    &mut grads[x.0].data_mut()[src * cols..(src + 1) * cols],
                    1.0,
                    g.row(i),
                );
            }
        });
        self.push(out, Some(back), "sort_pool")
    }

    /// Zero-pads the length axis up to min_len columns (no-op if already long
    /// enough). Lets short pooled sequences pass through the conv head.
    pub fn pad_cols(&mut self, x: Val, min_len: usize) -> Result<Val> {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        if cols >= min_len {
            let out = xv.clone();
            let back: BackFn = Box::new(move |_, g, grads| {
                axpy(grads[x.0].data_mut(), 1.0, g.data());
            });
            return self.push(out, Some(back), "pad_cols");
        }
        let mut out = Tensor::zeros(rows, min_len);
        for r in 0..rows {
            out.data_mut()[r * min_len..r * min_len + cols].copy_from_slice(xv.row(r));
        }
        let back: BackFn = Box::new(move |_, g, grads| {
            for r in 0..rows {
                axpy(
                    &mut grads[x.0].data_mut()[r * cols..(r + 1) * cols],
                    1.0,
                    &g.row(r)[..cols],
                );
            }
        });
        self.push(out, Some(back), "pad_cols")
    }

    /// Reinterprets the row-major buffer under a new shape.
    pub fn reshape(&mut self, x: Val, rows: usize, cols: usize) -> Result<Val> {
        let out = self.value(x).reshaped(rows, cols)?;
        let back: BackFn = Box::new(move |_, g, grads| {
            axpy(grads[x.0].data_mut(), 1.0, g.data());
        });
        self.push(out, Some(back), "reshape")
    }

    /// Mean binary cross entropy on logits, in the numerically stable
    /// softplus form: mean over i of softplus(z_i) - y_i * z_i.
    pub fn bce_with_logits(&mut self, logits: Val, labels: &[u8]) -> Result<Val> {
        let zv = self.value(logits);
        if zv.cols() != 1 || zv.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "bce_with_logits: logits {}x{} vs {} labels",
                zv.rows(),
                zv.cols(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::Data(format!("label {bad} outside {{0, 1}}")));
        }
        let n = labels.len() as f64;
        let loss = zv
            .data()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| softplus(z) - f64::from(y) * z)
            .sum::<f64>()
            / n;
        let labels: Vec<u8> = labels.to_vec();
        let back: BackFn = Box::new(move |values, g, grads| {
            let scale = g.get(0, 0) / n;
            for ((d, &z), &y) in grads[logits.0]
                .data_mut()
                .iter_mut()
                .zip(values[logits.0].data())
                .zip(&labels)
            {
                *d += scale * (sigmoid(z) - f64::from(y));
            }
        });
        self.push(Tensor::scalar(loss), Some(back), "bce_with_logits")
    }

    /// Runs the backward pass from a scalar loss node.
    pub fn backward(&self, loss: Val) -> Result<Grads> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Shape("backward: loss must be 1x1".to_string()));
        }
        let mut grads: Vec<Tensor> = self
            .values
            .iter()
            .map(|v| Tensor::zeros(v.rows(), v.cols()))
            .collect();
        grads[loss.0].set(0, 0, 1.0);
        for i in (0..self.values.len()).rev() {
            if let Some(back) = &self.back_fns[i] {
                // parents always sit strictly before their output
                let (earlier, rest) = grads.split_at_mut(i);
                back(&self.values, &rest[0], earlier);
            }
        }
        Ok(Grads { grads })
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Row order used by SortPooling: descending, comparing the last channel
/// first, then second-to-last, and so on. Stable on fully equal rows.
pub fn sort_pool_order(x: &Tensor) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.rows()).collect();
    order.sort_by(|&a, &b| {
        let ra = x.row(a);
        let rb = x.row(b);
        for c in (0..x.cols()).rev() {
            match rb[c].partial_cmp(&ra[c]).expect("finite values") {
                std::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
        std::cmp::Ordering::Equal
    });
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::new(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn relu_values() {
        let mut tape = Tape::new();
        let x = tape.input(t(1, 3, &[-1.0, 0.0, 2.0])).unwrap();
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn sigmoid_at_zero() {
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn bce_forced_values() {
        // z=0, y=1 -> ln 2
        let mut tape = Tape::new();
        let z = tape.input(t(1, 1, &[0.0])).unwrap();
        let l = tape.bce_with_logits(z, &[1]).unwrap();
        assert!((tape.value(l).get(0, 0) - std::f64::consts::LN_2).abs() < 1e-15);

        // z=+40, y=1 -> ~0 and finite
        let mut tape = Tape::new();
        let z = tape.input(t(1, 1, &[40.0])).unwrap();
        let l = tape.bce_with_logits(z, &[1]).unwrap();
        let v = tape.value(l).get(0, 0);
        assert!(v.is_finite() && v < 1e-15);
    }

    #[test]
    fn bce_rejects_bad_label() {
        let mut tape = Tape::new();
        let z = tape.input(t(1, 1, &[0.0])).unwrap();
        assert!(tape.bce_with_logits(z, &[2]).is_err());
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let x = tape.input(t(2, 2, &[1.0, -2.0, 3.0, 4.0])).unwrap();
        let y = tape.dropout(x, 0.5, false, &mut rng).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn dropout_p_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let x = tape.input(t(2, 2, &[1.0, -2.0, 3.0, 4.0])).unwrap();
        let y = tape.dropout(x, 0.0, true, &mut rng).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn dropout_preserves_mean() {
        // 10000 ones at p=0.5: mean stays within a 3-sigma binomial band,
        // sd = (1/(1-p)) * sqrt(p(1-p)/n) = 2 * sqrt(0.25/10000) = 0.01
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tape = Tape::new();
        let x = tape.input(Tensor::filled(100, 100, 1.0)).unwrap();
        let y = tape.dropout(x, 0.5, true, &mut rng).unwrap();
        let mean = tape.value(y).data().iter().sum::<f64>() / 10_000.0;
        assert!((0.97..=1.03).contains(&mean), "mean {mean}");
    }

    #[test]
    fn dropout_rejects_bad_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let x = tape.input(t(1, 1, &[1.0])).unwrap();
        assert!(tape.dropout(x, 1.0, true, &mut rng).is_err());
        assert!(tape.dropout(x, -0.1, true, &mut rng).is_err());
    }

    #[test]
    fn conv1d_hand_sum() {
        let mut tape = Tape::new();
        let x = tape.input(t(1, 4, &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let k = tape.input(t(1, 2, &[1.0, 1.0])).unwrap();
        let y = tape.conv1d(x, k, 2, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 5.0, 7.0]);
    }

    #[test]
    fn maxpool_hand() {
        let mut tape = Tape::new();
        let x = tape.input(t(1, 4, &[1.0, 3.0, 2.0, 5.0])).unwrap();
        let y = tape.maxpool1d(x, 2, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 5.0]);
    }

    #[test]
    fn maxpool_window_too_large() {
        let mut tape = Tape::new();
        let x = tape.input(t(1, 2, &[1.0, 2.0])).unwrap();
        assert!(tape.maxpool1d(x, 3, 1).is_err());
    }

    #[test]
    fn sort_pool_two_rows() {
        let mut tape = Tape::new();
        let x = tape.input(t(2, 1, &[3.0, 7.0])).unwrap();
        let y = tape.sort_pool(x, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[7.0, 3.0]);
    }

    #[test]
    fn sort_pool_pads() {
        let mut tape = Tape::new();
        let x = tape.input(t(1, 2, &[1.0, 2.0])).unwrap();
        let y = tape.sort_pool(x, 3).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_linearity() {
        // grad of (alpha * f) is alpha * grad of f, via scaling the loss
        // through a matmul with a constant
        let xs = t(2, 2, &[0.3, -0.7, 1.1, 0.4]);
        let w = t(2, 1, &[0.5, -0.2]);
        let grad_for = |alpha: f64| {
            let mut tape = Tape::new();
            let x = tape.input(xs.clone()).unwrap();
            let wv = tape.input(w.clone()).unwrap();
            let z = tape.matmul(x, wv).unwrap();
            let s = tape.input(t(1, 1, &[alpha])).unwrap();
            let zt = tape.reshape(z, 1, 2).unwrap();
            let l2 = tape.matmul(s, zt).unwrap(); // 1x2
            let ones = tape.input(t(2, 1, &[1.0, 1.0])).unwrap();
            let l = tape.matmul(l2, ones).unwrap();
            let grads = tape.backward(l).unwrap();
            grads.get(wv).data().to_vec()
        };
        let g1 = grad_for(1.0);
        let g3 = grad_for(3.0);
        for (a, b) in g1.iter().zip(&g3) {
            assert!((3.0 * a - b).abs() < 1e-12);
        }
    }
}
