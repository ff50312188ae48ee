use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Affine map `input . weights + bias` for `N x F` input and `F x G` weights.
pub fn dense<T: Element>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, f) = input.dims2("dense")?;
    let (wf, g) = weights.dims2("dense")?;
    if wf != f {
        return Err(Error::dim(
            "dense",
            format!("input has {f} features but weights expect {wf}"),
        ));
    }
    if bias.shape() != [g] {
        return Err(Error::dim(
            "dense",
            format!("bias shape {:?} does not match {g} outputs", bias.shape()),
        ));
    }
    let mut out = Vec::with_capacity(n * g);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    T::gemm(
        n,
        f,
        g,
        T::one(),
        input.data(),
        f as isize,
        1,
        weights.data(),
        g as isize,
        1,
        T::one(),
        &mut out,
        g as isize,
        1,
    );
    Tensor::new(vec![n, g], out)
}

pub struct DenseGrads<T: Element> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_backward<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let (n, f) = input.dims2("dense_backward")?;
    let (_, g) = weights.dims2("dense_backward")?;
    if grad_out.shape() != [n, g] {
        return Err(Error::dim(
            "dense_backward",
            format!("gradient shape {:?} does not match [{n}, {g}]", grad_out.shape()),
        ));
    }
    let dy = grad_out.data();
    let mut dx = vec![T::zero(); n * f];
    // dX = dY . W^T
    T::gemm(n, g, f, T::one(), dy, g as isize, 1, weights.data(), 1, g as isize, T::zero(), &mut dx, f as isize, 1);
    let mut dw = vec![T::zero(); f * g];
    // dW = X^T . dY
    T::gemm(f, n, g, T::one(), input.data(), 1, f as isize, dy, g as isize, 1, T::zero(), &mut dw, g as isize, 1);
    let mut db = vec![T::zero(); g];
    for row in dy.chunks_exact(g) {
        for (b, &v) in db.iter_mut().zip(row) {
            *b += v;
        }
    }
    Ok(DenseGrads {
        input: Tensor::new(vec![n, f], dx)?,
        weights: Tensor::new(vec![f, g], dw)?,
        bias: Tensor::new(vec![g], db)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sums_with_ones() {
        let x = Tensor::<f32>::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap();
        let b = Tensor::new(vec![1], vec![0.0]).unwrap();
        assert_eq!(dense(&x, &w, &b).unwrap().data(), &[3.0]);
    }

    #[test]
    fn identity_weights() {
        let x = Tensor::<f64>::from_fn(&[3, 4], |i| i as f64 - 5.0);
        let w = Tensor::from_fn(&[4, 4], |i| if i % 5 == 0 { 1.0 } else { 0.0 });
        let b = Tensor::zeros(&[4]);
        assert_eq!(dense(&x, &w, &b).unwrap(), x);
    }

    #[test]
    fn inner_dimension_mismatch() {
        let x = Tensor::<f32>::zeros(&[2, 3]);
        let w = Tensor::zeros(&[4, 1]);
        let b = Tensor::zeros(&[1]);
        assert!(dense(&x, &w, &b).is_err());
    }
}
