use crate::error::{Error, Result};

/// Dense row-major tensor of `f64` values with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("tensor", format!("zero dimension in {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![0.0; numel]).expect("zeros: nonzero shape")
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::new(vec![1], vec![value]).expect("scalar shape")
    }

    /// Matrix from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("tensor", "ragged rows"));
        }
        Tensor::new(vec![rows.len(), cols], rows.concat())
    }

    /// Marks the tensor as a trainable parameter.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Rows when viewed as a matrix: the product of all leading dimensions.
    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    /// Size of the trailing dimension.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("tensor has at least one dimension")
    }

    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.iter_mut().for_each(|v| *v = 0.0),
            None => self.grad = Some(vec![0.0; self.data.len()]),
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `delta` into the gradient buffer, allocating it if needed.
    pub fn accumulate_grad(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.data.len() {
            return Err(Error::shape(
                "accumulate_grad",
                format!("{} values for tensor of {}", delta.len(), self.data.len()),
            ));
        }
        let grad = self.grad.get_or_insert_with(|| vec![0.0; delta.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
            && self
                .grad
                .as_ref()
                .is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Numerically stable softmax along `axis` of an N-d tensor.
pub fn softmax(t: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = t.shape();
    if axis >= shape.len() {
        return Err(Error::shape(
            "softmax",
            format!("axis {axis} out of range for {shape:?}"),
        ));
    }
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let src = t.data();
    let mut out = vec![0.0; src.len()];
    let mut lane = vec![0.0; len];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            for (j, v) in lane.iter_mut().enumerate() {
                *v = src[base + j * inner];
            }
            softmax_in_place(&mut lane);
            for (j, v) in lane.iter().enumerate() {
                out[base + j * inner] = *v;
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
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

/// `-log(exp(pos) / (exp(pos) + Σ exp(neg)))`, evaluated stably.
pub fn nll_ranking_loss(pos_score: f64, neg_scores: &[f64]) -> Result<f64> {
    if neg_scores.is_empty() {
        return Err(Error::contract("nll_ranking_loss needs at least one negative"));
    }
    let max = neg_scores.iter().copied().fold(pos_score, f64::max);
    let total: f64 = std::iter::once(pos_score)
        .chain(neg_scores.iter().copied())
        .map(|s| (s - max).exp())
        .sum();
    Ok(max + total.ln() - pos_score)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
        let t = Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!((t.rows(), t.cols()), (2, 3));
    }

    #[test]
    fn softmax_uniform_and_shifted() {
        let t = Tensor::new(vec![3], vec![0.0; 3]).unwrap();
        let s = softmax(&t, 0).unwrap();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let t = Tensor::new(vec![2], vec![1000.0, 1000.0]).unwrap();
        assert_eq!(softmax(&t, 0).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_reference_values() {
        // exp(k) / (e + e^2 + e^3), evaluated with 30-digit arithmetic.
        let expected = [
            0.090_030_573_170_380_458_0,
            0.244_728_471_054_797_652_5,
            0.665_240_955_774_821_889_5,
        ];
        let t = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let s = softmax(&t, 0).unwrap();
        for (a, b) in s.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn softmax_along_leading_axis() {
        let t = Tensor::new(vec![2, 2], vec![0.0, 5.0, 0.0, -5.0]).unwrap();
        let s = softmax(&t, 0).unwrap();
        assert_eq!(s.data()[0], 0.5);
        assert_eq!(s.data()[2], 0.5);
        assert!((s.data()[1] + s.data()[3] - 1.0).abs() < 1e-15);
        assert!(s.data()[1] > 0.99);
        assert!(softmax(&t, 2).is_err());
    }

    #[test]
    fn nll_cases() {
        let l = nll_ranking_loss(0.0, &[0.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(nll_ranking_loss(50.0, &[0.0]).unwrap() < 1e-20);
        let e = std::f64::consts::E;
        let reference = -(e / (e + 1.0 + 1.0 / e)).ln();
        let l = nll_ranking_loss(1.0, &[0.0, -1.0]).unwrap();
        assert!((l - reference).abs() < 1e-10);
        assert!(nll_ranking_loss(1.0, &[]).is_err());
    }

    #[test]
    fn grad_accumulates() {
        let mut t = Tensor::zeros(vec![2]).with_grad();
        t.accumulate_grad(&[1.0, 2.0]).unwrap();
        t.accumulate_grad(&[1.0, 2.0]).unwrap();
        assert_eq!(t.grad().unwrap(), &[2.0, 4.0]);
        t.zero_grad();
        assert_eq!(t.grad().unwrap(), &[0.0, 0.0]);
        assert!(t.accumulate_grad(&[1.0]).is_err());
    }
}
