use serde::{Deserialize, Serialize};

use super::{Padding, Scalar, Tensor};
use crate::error::{Error, Result};

/// Convolution weights: kernel is `kh × kw × in_ch × out_ch`, bias is `out_ch`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ConvParams<T> {
    pub kernel: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub kernel: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

/// `floor((size + 2·pad − kernel) / stride) + 1`, or an error when the window does not fit.
pub fn conv_output_dim(size: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    if size + 2 * pad < kernel {
        return Err(Error::InvalidArgument(format!(
            "window {kernel} does not fit spatial size {size} with padding {pad}"
        )));
    }
    Ok((size + 2 * pad - kernel) / stride + 1)
}

struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.n * self.ho * self.wo
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn geometry<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    stride: usize,
    padding: Padding,
) -> Result<Geometry> {
    let (n, h, w, cin) = input.dims4("conv2d")?;
    let [kh, kw, kcin, cout] = params.kernel.shape()[..] else {
        return Err(Error::InvalidArgument(format!(
            "conv2d kernel must be kh×kw×in×out, got {:?}",
            params.kernel.shape()
        )));
    };
    if kcin != cin {
        return Err(Error::shape("conv2d (input vs kernel)", input.shape(), params.kernel.shape()));
    }
    if let Some(bias) = &params.bias {
        if bias.shape() != [cout] {
            return Err(Error::shape("conv2d (bias vs out channels)", bias.shape(), &[cout]));
        }
    }
    if kh != kw {
        return Err(Error::InvalidArgument(format!("conv2d kernel must be square, got {kh}×{kw}")));
    }
    let pad = padding.amount(kh);
    let ho = conv_output_dim(h, kh, stride, pad)?;
    let wo = conv_output_dim(w, kw, stride, pad)?;
    Ok(Geometry {
        n,
        h,
        w,
        cin,
        kh,
        kw,
        cout,
        ho,
        wo,
        stride,
        pad,
    })
}

fn im2col<T: Scalar>(input: &[T], g: &Geometry) -> Vec<T> {
    let patch = g.patch();
    let mut cols = vec![T::zero(); g.rows() * patch];
    for b in 0..g.n {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let row = (b * g.ho + oy) * g.wo + ox;
                let dst = &mut cols[row * patch..(row + 1) * patch];
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let src = ((b * g.h + iy as usize) * g.w + ix as usize) * g.cin;
                        let off = (ky * g.kw + kx) * g.cin;
                        dst[off..off + g.cin].copy_from_slice(&input[src..src + g.cin]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], g: &Geometry) -> Vec<T> {
    let patch = g.patch();
    let mut out = vec![T::zero(); g.n * g.h * g.w * g.cin];
    for b in 0..g.n {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let row = (b * g.ho + oy) * g.wo + ox;
                let src = &cols[row * patch..(row + 1) * patch];
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let dst = ((b * g.h + iy as usize) * g.w + ix as usize) * g.cin;
                        let off = (ky * g.kw + kx) * g.cin;
                        for (d, &s) in out[dst..dst + g.cin].iter_mut().zip(&src[off..off + g.cin]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// 2-D convolution over an NHWC batch.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = geometry(input, params, stride, padding)?;
    let owned;
    let cols: &[T] = if g.is_pointwise() {
        input.data()
    } else {
        owned = im2col(input.data(), &g);
        &owned
    };
    let (m, k, n) = (g.rows(), g.patch(), g.cout);
    let mut out = vec![T::zero(); m * n];
    T::gemm(
        m,
        k,
        n,
        T::one(),
        cols,
        (k as isize, 1),
        params.kernel.data(),
        (n as isize, 1),
        T::zero(),
        &mut out,
        (n as isize, 1),
    );
    if let Some(bias) = &params.bias {
        for row in out.chunks_exact_mut(n) {
            for (o, &b) in row.iter_mut().zip(bias.data()) {
                *o += b;
            }
        }
    }
    Tensor::new(vec![g.n, g.ho, g.wo, g.cout], out)?.ensure_finite("conv2d forward")
}

/// Gradients of [`conv2d_forward`] with respect to its input and parameters.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, ConvGrads<T>)> {
    let g = geometry(input, params, stride, padding)?;
    let expected = [g.n, g.ho, g.wo, g.cout];
    if grad_out.shape() != expected {
        return Err(Error::shape("conv2d backward (grad_out)", grad_out.shape(), &expected));
    }
    let (m, k, n) = (g.rows(), g.patch(), g.cout);
    let dy = grad_out.data();

    let owned;
    let cols: &[T] = if g.is_pointwise() {
        input.data()
    } else {
        owned = im2col(input.data(), &g);
        &owned
    };
    let mut dkernel = vec![T::zero(); k * n];
    T::gemm(
        k,
        m,
        n,
        T::one(),
        cols,
        (1, k as isize),
        dy,
        (n as isize, 1),
        T::zero(),
        &mut dkernel,
        (n as isize, 1),
    );

    let dbias = params.bias.as_ref().map(|_| {
        let mut acc = vec![T::zero(); n];
        for row in dy.chunks_exact(n) {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        acc
    });

    let mut dcols = vec![T::zero(); m * k];
    T::gemm(
        m,
        n,
        k,
        T::one(),
        dy,
        (n as isize, 1),
        params.kernel.data(),
        (1, n as isize),
        T::zero(),
        &mut dcols,
        (k as isize, 1),
    );
    let dinput = if g.is_pointwise() {
        dcols
    } else {
        col2im(&dcols, &g)
    };

    let grad_input = Tensor::new(input.shape().to_vec(), dinput)?.ensure_finite("conv2d backward")?;
    let grads = ConvGrads {
        kernel: Tensor::new(params.kernel.shape().to_vec(), dkernel)?,
        bias: dbias.map(|b| Tensor::new(vec![n], b)).transpose()?,
    };
    Ok((grad_input, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(kernel: Tensor<f64>, bias: Option<Tensor<f64>>) -> ConvParams<f64> {
        ConvParams { kernel, bias }
    }

    #[test]
    fn unit_pointwise_kernel_is_identity() {
        let input = Tensor::from_fn(&[1, 4, 5, 1], |i| i as f64 * 0.5 - 3.0);
        let p = params(Tensor::full(&[1, 1, 1, 1], 1.0), None);
        let out = conv2d_forward(&input, &p, 1, Padding::Explicit(0)).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn ones_kernel_same_padding_center_is_nine() {
        let input = Tensor::full(&[1, 5, 5, 1], 1.0);
        let p = params(Tensor::full(&[3, 3, 1, 1], 1.0), None);
        let out = conv2d_forward(&input, &p, 1, Padding::Same).unwrap();
        assert_eq!(out.shape(), &[1, 5, 5, 1]);
        assert_eq!(out.data()[2 * 5 + 2], 9.0);
        // corners see a 2×2 patch of the input
        assert_eq!(out.data()[0], 4.0);
    }

    #[test]
    fn stem_geometry_halves_resolution() {
        let input = Tensor::<f32>::zeros(&[1, 256, 256, 3]);
        let p = ConvParams {
            kernel: Tensor::zeros(&[7, 7, 3, 64]),
            bias: Some(Tensor::zeros(&[64])),
        };
        let out = conv2d_forward(&input, &p, 2, Padding::Same).unwrap();
        assert_eq!(out.shape(), &[1, 128, 128, 64]);
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let input = Tensor::<f64>::zeros(&[1, 4, 4, 2]);
        let p = params(Tensor::zeros(&[3, 3, 3, 4]), None);
        let err = conv2d_forward(&input, &p, 1, Padding::Same).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 4, 4, 2]") && msg.contains("[3, 3, 3, 4]"), "{msg}");
    }

    #[test]
    fn non_finite_output_is_numeric_fault() {
        let input = Tensor::full(&[1, 2, 2, 1], f64::INFINITY);
        let p = params(Tensor::full(&[1, 1, 1, 1], 1.0), None);
        assert!(matches!(
            conv2d_forward(&input, &p, 1, Padding::Explicit(0)),
            Err(Error::NumericFault(_))
        ));
    }

    #[test]
    fn strided_output_dims_follow_floor_formula() {
        assert_eq!(conv_output_dim(64, 1, 2, 0).unwrap(), 32);
        assert_eq!(conv_output_dim(64, 3, 2, 1).unwrap(), 32);
        assert_eq!(conv_output_dim(7, 3, 2, 0).unwrap(), 3);
        assert!(conv_output_dim(2, 3, 1, 0).is_err());
    }
}
