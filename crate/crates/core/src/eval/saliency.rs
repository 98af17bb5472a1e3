use afinet_autograd::{Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::iris::io::encode_pgm;
use crate::iris::NormalizedIris;
use crate::model::{AfinetModel, Net};

/// Below this range a map is treated as flat and returned as zeros.
const FLAT_RANGE: f32 = 1e-20;

/// `|∂f/∂x|` per input element, min-max normalized to `[0, 1]`.
pub fn gradient_saliency<F>(x: &Tensor<f32>, f: F) -> Result<Vec<f32>>
where
    F: for<'t> Fn(Var<'t, f32>) -> Result<Var<'t, f32>>,
{
    let tape = Tape::<f32>::new();
    let input = tape.param(x.clone());
    let out = f(input)?;
    let grads = tape.backward(out)?;
    let g = grads.get_or_zeros(input);
    let abs: Vec<f32> = g.data().iter().map(|v| v.abs()).collect();
    let lo = abs.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = abs.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let range = hi - lo;
    if !(range > FLAT_RANGE) {
        return Ok(vec![0.0; abs.len()]);
    }
    Ok(abs.iter().map(|v| (v - lo) / range).collect())
}

/// Saliency of one class logit with respect to the (intensity normalized)
/// input image, row-major `height × width`.
pub fn saliency_map(model: &AfinetModel, img: &NormalizedIris, class: usize) -> Result<Vec<f32>> {
    let classes = model.config.num_classes;
    if class >= classes {
        return Err(Error::invalid(
            "saliency class",
            format!("class {class} with {classes} classes"),
        ));
    }
    let x = model.input_batch(&[img])?;
    let selector = Tensor::from_fn(&[1, classes], |i| f32::from(u8::from(i == class)));
    gradient_saliency(&x, |input| {
        let tape = input.tape();
        let params = model.bind(tape, false);
        let (_, logits) = Net::new(&model.config, &params).forward(input)?;
        Ok(logits.mul(tape.constant(selector.clone()))?.sum())
    })
}

/// 8-bit PGM of a `[0, 1]` map.
pub fn saliency_pgm(map: &[f32], width: usize, height: usize) -> Vec<u8> {
    let bytes: Vec<u8> = map
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    encode_pgm(width, height, &bytes)
}

/// Circular cross-correlation (Pearson) of `b` against `a` rolled right by
/// `shift` columns.
pub fn shifted_correlation(a: &[f32], b: &[f32], width: usize, shift: isize) -> f64 {
    let height = a.len() / width;
    let mut rolled = vec![0.0f64; a.len()];
    for r in 0..height {
        for c in 0..width {
            let dst = (c as isize + shift).rem_euclid(width as isize) as usize;
            rolled[r * width + dst] = a[r * width + c] as f64;
        }
    }
    let b: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(&rolled), mean(&b));
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for (x, y) in rolled.iter().zip(&b) {
        num += (x - ma) * (y - mb);
        da += (x - ma).powi(2);
        db += (y - mb).powi(2);
    }
    if da == 0.0 || db == 0.0 {
        return 0.0;
    }
    num / (da * db).sqrt()
}
