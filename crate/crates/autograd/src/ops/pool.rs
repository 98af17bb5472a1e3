use crate::error::{AutogradError, Result};
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Non-overlapping `size × size` max pooling of `[N, C, H, W]`.
///
/// Returns the pooled tensor and, for every output element, the flat input
/// index of the maximum (first index wins on ties).
pub fn maxpool2d_forward<T: Scalar>(x: &Tensor<T>, size: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let xs = x.shape();
    let [n, c, h, w] = *xs else {
        return Err(AutogradError::invalid(
            "maxpool2d",
            format!("expected [N, C, H, W], got {xs:?}"),
        ));
    };
    if size == 0 || h % size != 0 || w % size != 0 {
        return Err(AutogradError::invalid(
            "maxpool2d",
            format!("spatial extents {h}x{w} are not divisible by window {size}"),
        ));
    }
    let (oh, ow) = (h / size, w / size);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    let data = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * size * w + ox * size;
                for dy in 0..size {
                    for dx in 0..size {
                        let idx = base + (oy * size + dy) * w + ox * size + dx;
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                }
                out.push(data[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(out, &[n, c, oh, ow])?, arg))
}

/// Elementwise max over groups of `pieces` consecutive channels.
/// Returns the output and the winning flat input index per output element.
pub fn maxout_forward<T: Scalar>(x: &Tensor<T>, pieces: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let xs = x.shape();
    let [n, c, h, w] = *xs else {
        return Err(AutogradError::invalid(
            "maxout",
            format!("expected [N, C, H, W], got {xs:?}"),
        ));
    };
    if pieces == 0 || c % pieces != 0 {
        return Err(AutogradError::invalid(
            "maxout",
            format!("channel count {c} is not a multiple of {pieces} pieces"),
        ));
    }
    let k = c / pieces;
    let plane = h * w;
    let data = x.data();
    let mut out = Vec::with_capacity(n * k * plane);
    let mut arg = Vec::with_capacity(n * k * plane);
    for b in 0..n {
        for ch in 0..k {
            let first = (b * c + ch * pieces) * plane;
            for p in 0..plane {
                let mut best = first + p;
                for piece in 1..pieces {
                    let idx = first + piece * plane + p;
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                out.push(data[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(out, &[n, k, h, w])?, arg))
}

fn route_back<T: Scalar>(grad: &Tensor<T>, arg: &[usize], shape: &[usize]) -> Tensor<T> {
    let mut dx = Tensor::zeros(shape);
    let d = dx.data_mut();
    for (&g, &i) in grad.data().iter().zip(arg) {
        d[i] += g;
    }
    dx
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn maxpool2d(self, size: usize) -> Result<Var<'t, T>> {
        let (out, arg) = maxpool2d_forward(&self.value(), size)?;
        let shape = self.shape();
        Ok(self.tape().record(&[self], out, move |g| {
            vec![Some(route_back(g, &arg, &shape))]
        }))
    }

    pub fn maxout(self, pieces: usize) -> Result<Var<'t, T>> {
        let (out, arg) = maxout_forward(&self.value(), pieces)?;
        let shape = self.shape();
        Ok(self.tape().record(&[self], out, move |g| {
            vec![Some(route_back(g, &arg, &shape))]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    #[test]
    fn single_window_takes_max() {
        let x = Tensor::from_vec(vec![1.0f32, 2.0, 3.0, 4.0], &[1, 1, 2, 2]).unwrap();
        let (y, arg) = maxpool2d_forward(&x, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
    }

    #[test]
    fn constant_image_halves() {
        let x = Tensor::full(&[1, 2, 4, 6], 0.7f32);
        let (y, _) = maxpool2d_forward(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 3]);
        assert!(y.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn odd_extent_is_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 3, 4]);
        assert!(maxpool2d_forward(&x, 2).is_err());
    }

    #[test]
    fn maxout_picks_larger_piece() {
        let x = Tensor::from_vec(vec![1.0f32, 5.0], &[1, 2, 1, 1]).unwrap();
        let (y, arg) = maxout_forward(&x, 2).unwrap();
        assert_eq!(y.data(), &[5.0]);
        assert_eq!(arg, vec![1]);
    }

    #[test]
    fn maxout_tie_routes_to_first_piece() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_vec(vec![2.0, 2.0], &[1, 2, 1, 1]).unwrap());
        let y = x.maxout(2).unwrap();
        assert_eq!(y.value().data(), &[2.0]);
        let g = tape.backward(y.sum()).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn maxout_odd_channels_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 3, 2, 2]);
        assert!(maxout_forward(&x, 2).is_err());
    }
}
