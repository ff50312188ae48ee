//! 2-D cross-correlation via per-sample im2col + GEMM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Spatial padding policy.
///
/// `Same` yields `ceil(in / stride)` outputs; when the total padding is odd the
/// extra cell goes on the bottom/right.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

/// Output extent and leading pad for one spatial axis.
pub fn output_extent(
    op: &'static str,
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    if stride == 0 || kernel == 0 {
        return Err(Error::dim(op, "kernel and stride must be positive"));
    }
    match padding {
        Padding::Valid => {
            if input < kernel {
                return Err(Error::dim(
                    op,
                    format!("input extent {input} is smaller than kernel extent {kernel} under valid padding"),
                ));
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Ok((out, total / 2))
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConvParams<T: Element = f32> {
    /// Extents `(out_channels, in_channels, kh, kw)`.
    pub kernel: Tensor<T>,
    /// `(vertical, horizontal)`.
    pub stride: (usize, usize),
    pub padding: Padding,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub oh: usize,
    pub ow: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    pub fn new<T: Element>(
        input: &Tensor<T>,
        kernel: &Tensor<T>,
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Self> {
        let (n, c, h, w) = input.dims4("conv2d")?;
        let (o, kc, kh, kw) = kernel.dims4("conv2d")?;
        if kc != c {
            return Err(Error::dim(
                "conv2d",
                format!("input has {c} channels but kernel expects {kc} input channels"),
            ));
        }
        let (oh, pad_top) = output_extent("conv2d", h, kh, stride.0, padding)?;
        let (ow, pad_left) = output_extent("conv2d", w, kw, stride.1, padding)?;
        Ok(Self {
            n,
            c,
            h,
            w,
            o,
            kh,
            kw,
            sh: stride.0,
            sw: stride.1,
            oh,
            ow,
            pad_top,
            pad_left,
        })
    }

    fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    /// A 1x1 stride-1 unpadded conv reads the input plane directly as its column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.pad_top == 0 && self.pad_left == 0
    }
}

/// Column matrix `[c*kh*kw, oh*ow]` for one sample.
fn im2col<T: Element>(x: &[T], g: &ConvGeometry, col: &mut [T]) {
    let plane = g.out_plane();
    for ci in 0..g.c {
        let x_c = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.sh + ki) as isize - g.pad_top as isize;
                    let dst_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        dst_row.fill(T::zero());
                        continue;
                    }
                    let src = &x_c[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * g.sw + kj) as isize - g.pad_left as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column matrix back into one sample's input gradient.
fn col2im<T: Element>(col: &[T], g: &ConvGeometry, dx: &mut [T]) {
    let plane = g.out_plane();
    for ci in 0..g.c {
        let dx_c = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.sh + ki) as isize - g.pad_top as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut dx_c[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.sw + kj) as isize - g.pad_left as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of an NCHW input with an `(O, C, kh, kw)` kernel.
pub fn conv2d<T: Element>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    conv2d_forward(input, &params.kernel, None, params.stride, params.padding)
}

pub fn conv2d_forward<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: (usize, usize),
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input, kernel, stride, padding)?;
    if let Some(b) = bias {
        if b.shape() != [g.o] {
            return Err(Error::dim(
                "conv2d",
                format!("bias shape {:?} does not match {} output channels", b.shape(), g.o),
            ));
        }
    }
    let k = g.patch_len();
    let plane = g.out_plane();
    let in_sample = g.c * g.h * g.w;
    let mut out = vec![T::zero(); g.n * g.o * plane];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * plane] };
    for ni in 0..g.n {
        let x_n = &input.data()[ni * in_sample..(ni + 1) * in_sample];
        let cols: &[T] = if g.is_pointwise() {
            x_n
        } else {
            im2col(x_n, &g, &mut col);
            &col
        };
        let out_n = &mut out[ni * g.o * plane..(ni + 1) * g.o * plane];
        if let Some(b) = bias {
            for (oc, chunk) in out_n.chunks_exact_mut(plane).enumerate() {
                chunk.fill(b.data()[oc]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(
            g.o,
            k,
            plane,
            T::one(),
            kernel.data(),
            k as isize,
            1,
            cols,
            plane as isize,
            1,
            beta,
            out_n,
            plane as isize,
            1,
        );
    }
    Tensor::new(vec![g.n, g.o, g.oh, g.ow], out)
}

pub struct Conv2dGrads<T: Element> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: (usize, usize),
    padding: Padding,
) -> Result<Conv2dGrads<T>> {
    let g = ConvGeometry::new(input, kernel, stride, padding)?;
    if grad_out.shape() != [g.n, g.o, g.oh, g.ow] {
        return Err(Error::dim(
            "conv2d_backward",
            format!(
                "output gradient shape {:?} does not match forward output {:?}",
                grad_out.shape(),
                [g.n, g.o, g.oh, g.ow]
            ),
        ));
    }
    let k = g.patch_len();
    let plane = g.out_plane();
    let in_sample = g.c * g.h * g.w;
    let mut dx = vec![T::zero(); input.len()];
    let mut dk = vec![T::zero(); kernel.len()];
    let mut db = vec![T::zero(); g.o];
    let pointwise = g.is_pointwise();
    let mut col = if pointwise { Vec::new() } else { vec![T::zero(); k * plane] };
    let mut dcol = if pointwise { Vec::new() } else { vec![T::zero(); k * plane] };

    for ni in 0..g.n {
        let x_n = &input.data()[ni * in_sample..(ni + 1) * in_sample];
        let dy_n = &grad_out.data()[ni * g.o * plane..(ni + 1) * g.o * plane];
        for (oc, chunk) in dy_n.chunks_exact(plane).enumerate() {
            db[oc] += chunk.iter().fold(T::zero(), |a, &v| a + v);
        }
        let cols: &[T] = if pointwise {
            x_n
        } else {
            im2col(x_n, &g, &mut col);
            &col
        };
        // dK[O,K] += dY[O,P] . col^T[P,K]
        T::gemm(
            g.o,
            plane,
            k,
            T::one(),
            dy_n,
            plane as isize,
            1,
            cols,
            1,
            plane as isize,
            T::one(),
            &mut dk,
            k as isize,
            1,
        );
        // dcol[K,P] = K^T[K,O] . dY[O,P]
        let dx_n = &mut dx[ni * in_sample..(ni + 1) * in_sample];
        if pointwise {
            T::gemm(
                k,
                g.o,
                plane,
                T::one(),
                kernel.data(),
                1,
                k as isize,
                dy_n,
                plane as isize,
                1,
                T::zero(),
                dx_n,
                plane as isize,
                1,
            );
        } else {
            T::gemm(
                k,
                g.o,
                plane,
                T::one(),
                kernel.data(),
                1,
                k as isize,
                dy_n,
                plane as isize,
                1,
                T::zero(),
                &mut dcol,
                plane as isize,
                1,
            );
            col2im(&dcol, &g, dx_n);
        }
    }
    Ok(Conv2dGrads {
        input: Tensor::new(input.shape().to_vec(), dx)?,
        kernel: Tensor::new(kernel.shape().to_vec(), dk)?,
        bias: Tensor::new(vec![g.o], db)?,
    })
}
