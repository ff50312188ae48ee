use crate::error::{Error, Result};
use crate::ops::conv::{output_extent, Padding};
use crate::tensor::{Element, Tensor};

/// Max-pool output together with the flat input index that won each window.
#[derive(Clone, Debug)]
pub struct Pooled<T: Element> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
}

/// Windowed maximum over each channel plane. Padded cells never win; ties go to
/// the first maximum in row-major window order.
pub fn maxpool2d<T: Element>(
    input: &Tensor<T>,
    window: (usize, usize),
    stride: usize,
    padding: Padding,
) -> Result<Pooled<T>> {
    let (n, c, h, w) = input.dims4("maxpool2d")?;
    let (oh, pad_top) = output_extent("maxpool2d", h, window.0, stride, padding)?;
    let (ow, pad_left) = output_extent("maxpool2d", w, window.1, stride, padding)?;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let x = input.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            let y0 = (oy * stride) as isize - pad_top as isize;
            for ox in 0..ow {
                let x0 = (ox * stride) as isize - pad_left as isize;
                let mut best = T::neg_infinity();
                let mut best_idx = usize::MAX;
                for ky in 0..window.0 as isize {
                    let iy = y0 + ky;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..window.1 as isize {
                        let ix = x0 + kx;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = base + iy as usize * w + ix as usize;
                        if best_idx == usize::MAX || x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok(Pooled {
        output: Tensor::new(vec![n, c, oh, ow], out)?,
        argmax,
    })
}

/// Routes each output gradient to its recorded argmax.
pub fn maxpool2d_backward<T: Element>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if argmax.len() != grad_out.len() {
        return Err(Error::dim(
            "maxpool2d_backward",
            format!("{} argmax entries for {} output gradients", argmax.len(), grad_out.len()),
        ));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        d[idx] += g;
    }
    Ok(dx)
}

/// Spatial mean per channel: `N x C x H x W -> N x C`.
pub fn global_avg_pool<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4("global_avg_pool")?;
    let plane = h * w;
    let scale = T::one() / T::from_usize(plane).unwrap();
    let data = input
        .data()
        .chunks_exact(plane)
        .map(|p| p.iter().fold(T::zero(), |a, &v| a + v) * scale)
        .collect();
    Tensor::new(vec![n, c], data)
}

pub fn global_avg_pool_backward<T: Element>(input_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = *input_shape else {
        return Err(Error::dim("global_avg_pool_backward", format!("bad input shape {input_shape:?}")));
    };
    if grad_out.shape() != [n, c] {
        return Err(Error::dim(
            "global_avg_pool_backward",
            format!("gradient shape {:?} does not match [{n}, {c}]", grad_out.shape()),
        ));
    }
    let plane = h * w;
    let scale = T::one() / T::from_usize(plane).unwrap();
    let mut dx = Vec::with_capacity(n * c * plane);
    for &g in grad_out.data() {
        dx.extend(std::iter::repeat_n(g * scale, plane));
    }
    Tensor::new(input_shape.to_vec(), dx)
}
