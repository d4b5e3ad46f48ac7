//! Dense numeric core: matrices, linear layers, activations, BCE and Adam.
//!
//! Every layer exposes an explicit forward/backward pair; composition is
//! done by the discriminator, not by a general tape.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
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

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} += {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Column sums.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }
}

/// Strided read-only view used by [`gemm`].
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> View<'a> {
    pub fn of(m: &'a Matrix) -> Self {
        Self {
            data: &m.data,
            rows: m.rows,
            cols: m.cols,
            row_stride: m.cols,
            col_stride: 1,
        }
    }

    /// Columns `start..start + width` of `m`.
    pub fn columns(m: &'a Matrix, start: usize, width: usize) -> Self {
        assert!(start + width <= m.cols);
        Self {
            data: &m.data[start.min(m.data.len())..],
            rows: m.rows,
            cols: width,
            row_stride: m.cols,
            col_stride: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
            ..self
        }
    }

    fn max_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride
        }
    }
}

/// `out = alpha·a·b + beta·out`, with `out` a dense row-major matrix.
pub(crate) fn gemm(alpha: f64, a: View<'_>, b: View<'_>, beta: f64, out: &mut Matrix) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!((a.rows, b.cols), (out.rows, out.cols), "gemm output shape");
    if a.rows == 0 || b.cols == 0 {
        return;
    }
    if a.cols == 0 {
        out.data.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(a.max_index() < a.data.len() && b.max_index() < b.data.len());
    // SAFETY: every index the kernel touches is bounded by `max_index`, checked
    // above against the backing slices; `out` is dense with matching shape.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            out.data.as_mut_ptr(),
            out.cols as isize,
            1,
        );
    }
}

/// Fully connected layer `y = W·x + b`, with `W` stored out × in.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Gradients returned by [`LinearLayer::backward`].
#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub grad_input: Matrix,
    pub grad_weights: Matrix,
    pub grad_bias: Vec<f64>,
}

impl LinearLayer {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weights: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    /// Uniform Glorot init in ±sqrt(6 / (fan_in + fan_out)); zero bias.
    pub fn glorot<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        let mut layer = Self::zeros(input, output);
        for w in layer.weights.data_mut() {
            *w = rng.gen_range(-bound..bound);
        }
        layer
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    fn check_input(&self, input: &Matrix) -> Result<()> {
        if input.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "linear layer expects {} inputs, got {}",
                self.input_dim(),
                input.cols()
            )));
        }
        Ok(())
    }

    /// Batched forward pass; each row of `input` is one sample.
    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        self.check_input(input)?;
        let mut out = Matrix::zeros(input.rows(), self.output_dim());
        for r in 0..out.rows() {
            out.row_mut(r).copy_from_slice(&self.bias);
        }
        gemm(1.0, View::of(input), View::of(&self.weights).t(), 1.0, &mut out);
        Ok(out)
    }

    pub fn forward_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.forward(&m)?.data)
    }

    /// Exact gradients for the batch given the cached forward input.
    pub fn backward(&self, input: &Matrix, grad_out: &Matrix) -> Result<LinearGrads> {
        let mut grads = LinearLayer::zeros(self.input_dim(), self.output_dim());
        let grad_input = self.backward_accumulate(input, grad_out, &mut grads, true)?;
        Ok(LinearGrads {
            grad_input: grad_input.expect("requested"),
            grad_weights: grads.weights,
            grad_bias: grads.bias,
        })
    }

    /// Adds this batch's weight/bias gradients into `acc`; optionally returns
    /// the gradient with respect to the input.
    pub fn backward_accumulate(
        &self,
        input: &Matrix,
        grad_out: &Matrix,
        acc: &mut LinearLayer,
        want_input_grad: bool,
    ) -> Result<Option<Matrix>> {
        self.check_input(input)?;
        if grad_out.cols() != self.output_dim() || grad_out.rows() != input.rows() {
            return Err(Error::ShapeMismatch(format!(
                "grad_out is {}x{}, expected {}x{}",
                grad_out.rows(),
                grad_out.cols(),
                input.rows(),
                self.output_dim()
            )));
        }
        gemm(1.0, View::of(grad_out).t(), View::of(input), 1.0, &mut acc.weights);
        for (b, g) in acc.bias.iter_mut().zip(grad_out.col_sums()) {
            *b += g;
        }
        if !want_input_grad {
            return Ok(None);
        }
        let mut grad_input = Matrix::zeros(input.rows(), self.input_dim());
        gemm(1.0, View::of(grad_out), View::of(&self.weights), 0.0, &mut grad_input);
        Ok(Some(grad_input))
    }

    pub fn param_count(&self) -> usize {
        self.weights.data().len() + self.bias.len()
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Gradient through ReLU given the pre-activation.
pub fn relu_backward(pre: f64, grad: f64) -> f64 {
    if pre > 0.0 {
        grad
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradient through the sigmoid given its output.
pub fn sigmoid_backward(out: f64, grad: f64) -> f64 {
    grad * out * (1.0 - out)
}

pub const BCE_CLAMP: f64 = 1e-7;

/// Binary cross-entropy with `p` clamped to `[1e-7, 1 − 1e-7]`.
pub fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// d bce / d p (zero where the clamp is active).
pub fn bce_grad_prob(p: f64, y: f64) -> f64 {
    if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
        return 0.0;
    }
    -y / p + (1.0 - y) / (1.0 - p)
}

/// d bce(sigmoid(z)) / d z, expressed through p = sigmoid(z).
pub fn bce_grad_logit(p: f64, y: f64) -> f64 {
    p - y
}

/// Adam with bias correction; one moment buffer pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(shapes: &[usize]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam tracks {} tensors, got {} params / {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.first[i].len() || g.len() != p.len() {
                return Err(Error::ShapeMismatch(format!(
                    "adam tensor {i}: buffer {}, params {}, grads {}",
                    self.first[i].len(),
                    p.len(),
                    g.len()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

pub const WEIGHTS_MAGIC: [u8; 4] = *b"PSDW";
pub const WEIGHTS_SCHEMA_VERSION: u32 = 1;

/// Decoded weights file: architecture dims, auxiliary scalars and the flat
/// parameter vector in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightsFile {
    pub dims: Vec<u32>,
    pub scalars: Vec<f64>,
    pub params: Vec<f64>,
}

/// Layout: magic, u32 schema version, u32 dim count, dims (u32), u32 scalar
/// count, scalars (f64), u64 param count, params (f64). All little-endian.
pub fn write_weights<W: Write>(mut w: W, dims: &[u32], scalars: &[f64], params: &[&[f64]]) -> std::io::Result<()> {
    w.write_all(&WEIGHTS_MAGIC)?;
    w.write_all(&WEIGHTS_SCHEMA_VERSION.to_le_bytes())?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    w.write_all(&(scalars.len() as u32).to_le_bytes())?;
    for s in scalars {
        w.write_all(&s.to_le_bytes())?;
    }
    let total: usize = params.iter().map(|p| p.len()).sum();
    w.write_all(&(total as u64).to_le_bytes())?;
    for p in params {
        for v in p.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

#[derive(Debug)]
pub enum WeightsReadError {
    Io(std::io::Error),
    BadMagic,
    Version(u32),
}

impl From<std::io::Error> for WeightsReadError {
    fn from(e: std::io::Error) -> Self {
        WeightsReadError::Io(e)
    }
}

pub fn read_weights<R: Read>(mut r: R) -> std::result::Result<WeightsFile, WeightsReadError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != WEIGHTS_MAGIC {
        return Err(WeightsReadError::BadMagic);
    }
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    let mut read_u32 = |r: &mut R| -> std::io::Result<u32> {
        r.read_exact(&mut u32buf)?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let version = read_u32(&mut r)?;
    if version != WEIGHTS_SCHEMA_VERSION {
        return Err(WeightsReadError::Version(version));
    }
    let n_dims = read_u32(&mut r)? as usize;
    let dims = (0..n_dims)
        .map(|_| read_u32(&mut r))
        .collect::<std::io::Result<Vec<_>>>()?;
    let n_scalars = read_u32(&mut r)? as usize;
    let mut read_f64 = |r: &mut R| -> std::io::Result<f64> {
        r.read_exact(&mut u64buf)?;
        Ok(f64::from_le_bytes(u64buf))
    };
    let scalars = (0..n_scalars)
        .map(|_| read_f64(&mut r))
        .collect::<std::io::Result<Vec<_>>>()?;
    let mut count = [0u8; 8];
    r.read_exact(&mut count)?;
    let count = u64::from_le_bytes(count) as usize;
    let mut bytes = Vec::with_capacity(count * 8);
    r.take((count * 8) as u64).read_to_end(&mut bytes)?;
    if bytes.len() != count * 8 {
        return Err(WeightsReadError::Io(std::io::Error::new(
            std::io::ErrorKind::UnexpectedEof,
            "truncated parameter block",
        )));
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(WeightsFile { dims, scalars, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut layer = LinearLayer::zeros(3, 3);
        layer.weights = Matrix::identity(3);
        assert_eq!(layer.forward_vec(&[1.0, -2.0, 3.5]).unwrap(), vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn zero_input_yields_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut layer = LinearLayer::glorot(4, 2, &mut rng);
        layer.bias = vec![0.25, -1.5];
        assert_eq!(layer.forward_vec(&[0.0; 4]).unwrap(), vec![0.25, -1.5]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let layer = LinearLayer::zeros(3, 2);
        assert!(matches!(layer.forward_vec(&[1.0, 2.0]), Err(Error::ShapeMismatch(_))));
        let x = Matrix::zeros(2, 3);
        assert!(matches!(
            layer.backward(&x, &Matrix::zeros(2, 3)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn linear_gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut layer = LinearLayer::glorot(8, 8, &mut rng);
        layer.bias = (0..8).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let x = random_matrix(3, 8, &mut rng);
        let probe = random_matrix(3, 8, &mut rng);
        // loss = Σ probe ⊙ (W x + b)
        let loss = |l: &LinearLayer, x: &Matrix| -> f64 {
            l.forward(x)
                .unwrap()
                .data()
                .iter()
                .zip(probe.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let grads = layer.backward(&x, &probe).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..layer.weights.data().len() {
            let mut plus = layer.clone();
            plus.weights.data_mut()[i] += h;
            let mut minus = layer.clone();
            minus.weights.data_mut()[i] -= h;
            let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h);
            worst = worst.max(rel_err(grads.grad_weights.data()[i], fd));
        }
        for i in 0..8 {
            let mut plus = layer.clone();
            plus.bias[i] += h;
            let mut minus = layer.clone();
            minus.bias[i] -= h;
            let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h);
            worst = worst.max(rel_err(grads.grad_bias[i], fd));
        }
        for i in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss(&layer, &xp) - loss(&layer, &xm)) / (2.0 * h);
            worst = worst.max(rel_err(grads.grad_input.data()[i], fd));
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn activation_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!(bce(1.0 - 1e-7, 1.0) < 2e-7);
        assert!(bce(1.0, 1.0) < 2e-7);
        assert!(bce(0.0, 1.0).is_finite());
        assert_eq!(relu(-1.0), 0.0);
        assert_eq!(relu_backward(-0.1, 3.0), 0.0);
        assert_eq!(relu_backward(0.1, 3.0), 3.0);
    }

    #[test]
    fn bce_logit_gradient_matches_finite_difference() {
        let g = bce_grad_logit(sigmoid(0.0), 1.0);
        assert_eq!(g, -0.5);
        let h = 1e-5;
        let fd = (bce(sigmoid(h), 1.0) - bce(sigmoid(-h), 1.0)) / (2.0 * h);
        assert!(rel_err(g, fd) < 1e-6);
        for &(z, y) in &[(1.3, 0.0), (-0.7, 1.0), (2.5, 1.0)] {
            let p = sigmoid(z);
            let fd = (bce(sigmoid(z + h), y) - bce(sigmoid(z - h), y)) / (2.0 * h);
            assert!(rel_err(bce_grad_logit(p, y), fd) < 1e-6);
            let fdp = (bce(p + h, y) - bce(p - h, y)) / (2.0 * h);
            assert!(rel_err(bce_grad_prob(p, y), fdp) < 1e-6);
            assert!(rel_err(sigmoid_backward(p, 1.0), (sigmoid(z + h) - sigmoid(z - h)) / (2.0 * h)) < 1e-6);
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut adam = AdamState::new(&[3]);
        let mut p = vec![1.0, -2.0, 0.5];
        let before = p.clone();
        for _ in 0..5 {
            adam.step(&mut [&mut p[..]], &[&[0.0; 3][..]], 1e-3).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε).
        let mut adam = AdamState::new(&[3]);
        let mut p = vec![0.0; 3];
        let g = [0.3, -2.0, 1e-3];
        let lr = 1e-3;
        adam.step(&mut [&mut p[..]], &[&g[..]], lr).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            let expected = -lr * gi / (gi.abs() + 1e-8);
            assert!((pi - expected).abs() < 1e-15);
            assert!((pi + lr * gi.signum()).abs() < 1e-7);
        }
        assert!(adam.step(&mut [&mut p[..]], &[&g[..2]], lr).is_err());
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut adam = AdamState::new(&[16]);
            let mut p: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for _ in 0..20 {
                let g: Vec<f64> = p.iter().map(|x| 2.0 * x + rng.gen_range(-0.1..0.1)).collect();
                adam.step(&mut [&mut p[..]], &[&g[..]], 0.01).unwrap();
            }
            p
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn weights_roundtrip_and_rejects_bad_header() {
        let params = [vec![1.5, -2.25], vec![f64::MIN_POSITIVE, 3.0e10]];
        let views: Vec<&[f64]> = params.iter().map(|p| &p[..]).collect();
        let mut buf = Vec::new();
        write_weights(&mut buf, &[24, 172, 64, 4], &[1.6094], &views).unwrap();
        let file = read_weights(&buf[..]).unwrap();
        assert_eq!(file.dims, vec![24, 172, 64, 4]);
        assert_eq!(file.scalars, vec![1.6094]);
        assert_eq!(file.params, vec![1.5, -2.25, f64::MIN_POSITIVE, 3.0e10]);

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_weights(&bad[..]), Err(WeightsReadError::BadMagic)));
        let mut v2 = buf.clone();
        v2[4] = 2;
        assert!(matches!(read_weights(&v2[..]), Err(WeightsReadError::Version(2))));
        assert!(read_weights(&buf[..buf.len() - 3]).is_err());
    }
}
