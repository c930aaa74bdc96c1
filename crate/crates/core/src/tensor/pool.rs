use super::conv::conv_output_dim;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

fn check_window(op: &str, h: usize, w: usize, window: usize, stride: usize) -> Result<()> {
    if window == 0 || stride == 0 {
        return Err(Error::InvalidArgument(format!("{op}: window and stride must be at least 1")));
    }
    if window > h || window > w {
        return Err(Error::InvalidArgument(format!(
            "{op}: window {window} larger than input {h}×{w}"
        )));
    }
    Ok(())
}

/// Visits every output cell of a pooling window scan and the in-bounds input
/// offsets (NHWC, channel 0) of its window in row-major order.
fn for_each_window(
    (n, h, w, c): (usize, usize, usize, usize),
    (ho, wo): (usize, usize),
    window: usize,
    stride: usize,
    pad: usize,
    mut visit: impl FnMut(usize, &[usize]),
) {
    let mut offsets = Vec::with_capacity(window * window);
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                offsets.clear();
                for ky in 0..window {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..window {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        offsets.push(((b * h + iy as usize) * w + ix as usize) * c);
                    }
                }
                visit(((b * ho + oy) * wo + ox) * c, &offsets);
            }
        }
    }
}

/// Max pooling. Padded cells never win; ties go to the first maximum in row-major window order.
pub fn maxpool2d_forward<T: Scalar>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let dims @ (n, h, w, c) = input.dims4("maxpool2d")?;
    check_window("maxpool2d", h, w, window, stride)?;
    if pad >= window {
        return Err(Error::InvalidArgument(format!(
            "maxpool2d: padding {pad} must be smaller than window {window}"
        )));
    }
    let ho = conv_output_dim(h, window, stride, pad)?;
    let wo = conv_output_dim(w, window, stride, pad)?;
    let src = input.data();
    let mut out = vec![T::neg_infinity(); n * ho * wo * c];
    for_each_window(dims, (ho, wo), window, stride, pad, |dst, offsets| {
        for ch in 0..c {
            let mut best = T::neg_infinity();
            for &o in offsets {
                let v = src[o + ch];
                if v > best {
                    best = v;
                }
            }
            out[dst + ch] = best;
        }
    });
    Tensor::new(vec![n, ho, wo, c], out)?.ensure_finite("maxpool2d forward")
}

pub fn maxpool2d_backward<T: Scalar>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
    pad: usize,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let dims @ (n, h, w, c) = input.dims4("maxpool2d")?;
    check_window("maxpool2d", h, w, window, stride)?;
    let ho = conv_output_dim(h, window, stride, pad)?;
    let wo = conv_output_dim(w, window, stride, pad)?;
    if grad_out.shape() != [n, ho, wo, c] {
        return Err(Error::shape("maxpool2d backward", grad_out.shape(), &[n, ho, wo, c]));
    }
    let src = input.data();
    let dy = grad_out.data();
    let mut dx = vec![T::zero(); src.len()];
    for_each_window(dims, (ho, wo), window, stride, pad, |dst, offsets| {
        for ch in 0..c {
            let mut best = T::neg_infinity();
            let mut arg = None;
            for &o in offsets {
                let v = src[o + ch];
                if v > best {
                    best = v;
                    arg = Some(o + ch);
                }
            }
            if let Some(i) = arg {
                dx[i] += dy[dst + ch];
            }
        }
    });
    Tensor::new(input.shape().to_vec(), dx)
}

/// Average pooling without padding.
pub fn avgpool2d_forward<T: Scalar>(input: &Tensor<T>, window: usize, stride: usize) -> Result<Tensor<T>> {
    let dims @ (n, h, w, c) = input.dims4("avgpool2d")?;
    check_window("avgpool2d", h, w, window, stride)?;
    let ho = conv_output_dim(h, window, stride, 0)?;
    let wo = conv_output_dim(w, window, stride, 0)?;
    let src = input.data();
    let inv = T::one() / T::from_f64((window * window) as f64);
    let mut out = vec![T::zero(); n * ho * wo * c];
    for_each_window(dims, (ho, wo), window, stride, 0, |dst, offsets| {
        for ch in 0..c {
            let mut acc = T::zero();
            for &o in offsets {
                acc += src[o + ch];
            }
            out[dst + ch] = acc * inv;
        }
    });
    Tensor::new(vec![n, ho, wo, c], out)?.ensure_finite("avgpool2d forward")
}

pub fn avgpool2d_backward<T: Scalar>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let dims @ (n, h, w, c) = input.dims4("avgpool2d")?;
    check_window("avgpool2d", h, w, window, stride)?;
    let ho = conv_output_dim(h, window, stride, 0)?;
    let wo = conv_output_dim(w, window, stride, 0)?;
    if grad_out.shape() != [n, ho, wo, c] {
        return Err(Error::shape("avgpool2d backward", grad_out.shape(), &[n, ho, wo, c]));
    }
    let dy = grad_out.data();
    let inv = T::one() / T::from_f64((window * window) as f64);
    let mut dx = vec![T::zero(); input.len()];
    for_each_window(dims, (ho, wo), window, stride, 0, |dst, offsets| {
        for ch in 0..c {
            let g = dy[dst + ch] * inv;
            for &o in offsets {
                dx[o + ch] += g;
            }
        }
    });
    Tensor::new(input.shape().to_vec(), dx)
}

/// Mean over every spatial position per channel: `n×h×w×c → n×1×1×c`.
pub fn global_avgpool_forward<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, h, w, c) = input.dims4("global_avgpool")?;
    let inv = T::one() / T::from_f64((h * w) as f64);
    let mut out = vec![T::zero(); n * c];
    for (b, plane) in input.data().chunks_exact(h * w * c).enumerate() {
        let acc = &mut out[b * c..(b + 1) * c];
        for px in plane.chunks_exact(c) {
            for (a, &v) in acc.iter_mut().zip(px) {
                *a += v;
            }
        }
        for a in acc.iter_mut() {
            *a *= inv;
        }
    }
    Tensor::new(vec![n, 1, 1, c], out)?.ensure_finite("global_avgpool forward")
}

pub fn global_avgpool_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, h, w, c) = input.dims4("global_avgpool")?;
    if grad_out.shape() != [n, 1, 1, c] {
        return Err(Error::shape("global_avgpool backward", grad_out.shape(), &[n, 1, 1, c]));
    }
    let inv = T::one() / T::from_f64((h * w) as f64);
    let mut dx = vec![T::zero(); input.len()];
    for (b, plane) in dx.chunks_exact_mut(h * w * c).enumerate() {
        let g = &grad_out.data()[b * c..(b + 1) * c];
        for px in plane.chunks_exact_mut(c) {
            for (d, &v) in px.iter_mut().zip(g) {
                *d = v * inv;
            }
        }
    }
    Tensor::new(input.shape().to_vec(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Tensor<f64> {
        Tensor::new(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn max_and_avg_of_two_by_two() {
        assert_eq!(maxpool2d_forward(&square(), 2, 2, 0).unwrap().data(), &[4.0]);
        assert_eq!(avgpool2d_forward(&square(), 2, 2).unwrap().data(), &[2.5]);
    }

    #[test]
    fn stem_pool_geometry() {
        let x = Tensor::<f32>::zeros(&[1, 128, 128, 2]);
        assert_eq!(maxpool2d_forward(&x, 3, 2, 1).unwrap().shape(), &[1, 64, 64, 2]);
    }

    #[test]
    fn constant_input_constant_output() {
        let x = Tensor::full(&[2, 6, 6, 3], 0.75f64);
        for y in [
            maxpool2d_forward(&x, 3, 2, 1).unwrap(),
            avgpool2d_forward(&x, 2, 2).unwrap(),
            global_avgpool_forward(&x).unwrap(),
        ] {
            assert!(y.data().iter().all(|&v| (v - 0.75).abs() < 1e-15));
        }
    }

    #[test]
    fn global_pool_collapses_spatial() {
        let x = Tensor::<f32>::zeros(&[1, 8, 8, 2048]);
        assert_eq!(global_avgpool_forward(&x).unwrap().shape(), &[1, 1, 1, 2048]);
    }

    #[test]
    fn window_larger_than_input_is_rejected() {
        assert!(maxpool2d_forward(&square(), 3, 1, 0).is_err());
        assert!(avgpool2d_forward(&square(), 3, 1).is_err());
    }

    #[test]
    fn max_gradient_goes_to_first_tie() {
        let x = Tensor::new(vec![1, 2, 2, 1], vec![5.0, 5.0, 1.0, 5.0]).unwrap();
        let dy = Tensor::full(&[1, 1, 1, 1], 1.0);
        let dx = maxpool2d_backward(&x, 2, 2, 0, &dy).unwrap();
        assert_eq!(dx.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn avg_gradient_is_uniform() {
        let dy = Tensor::full(&[1, 1, 1, 1], 1.0);
        let dx = avgpool2d_backward(&square(), 2, 2, &dy).unwrap();
        assert_eq!(dx.data(), &[0.25; 4]);
    }
}
