use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    logits.expect_ndim(2, "softmax")?;
    let k = logits.shape()[1];
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Ok(out)
}

pub fn one_hot<T: Scalar>(classes: &[usize], k: usize) -> Result<Tensor<T>> {
    if classes.is_empty() {
        return Err(Error::EmptyInput("one_hot needs at least one label"));
    }
    let mut t = Tensor::zeros(&[classes.len(), k]);
    for (i, &c) in classes.iter().enumerate() {
        if c >= k {
            return Err(Error::Label(format!("class {c} out of range for {k} classes")));
        }
        t.data_mut()[i * k + c] = T::one();
    }
    Ok(t)
}

fn true_classes<T: Scalar>(labels: &Tensor<T>) -> Result<Vec<usize>> {
    let k = labels.shape()[1];
    labels
        .data()
        .chunks(k)
        .enumerate()
        .map(|(i, row)| {
            let ones: Vec<usize> = row
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == T::one())
                .map(|(j, _)| j)
                .collect();
            let others = row.iter().filter(|&&v| v != T::one() && v != T::zero()).count();
            if ones.len() != 1 || others != 0 {
                Err(Error::Label(format!("label row {i} is not one-hot: {row:?}")))
            } else {
                Ok(ones[0])
            }
        })
        .collect()
}

/// Mean negative log-likelihood of the true class and its gradient
/// `(softmax − labels) / N`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    logits.expect_ndim(2, "softmax_cross_entropy")?;
    labels.expect_shape(logits.shape())?;
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if k < 2 {
        return Err(Error::Label(format!("need at least 2 classes, got {k}")));
    }
    let cls = true_classes(labels)?;
    let nf = T::of(n as f64);
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(logits.shape());
    for (i, row) in logits.data().chunks(k).enumerate() {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - m).exp()).sum::<T>().ln() + m;
        loss += lse - row[cls[i]];
        let g = &mut grad.data_mut()[i * k..(i + 1) * k];
        for j in 0..k {
            let p = (row[j] - lse).exp();
            let y = if j == cls[i] { T::one() } else { T::zero() };
            g[j] = (p - y) / nf;
        }
    }
    Ok((loss / nf, grad))
}
