use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `M[t, v] = sum_k W[class, k] * F[k, t, v]` for features `(C, T, V)` and classifier `(classes, C)`.
pub fn cam_raw<F: Scalar>(features: &Tensor<F>, weight: &Tensor<F>, class: usize) -> Result<Tensor<f64>> {
    let fs = features.shape();
    let ws = weight.shape();
    if fs.len() != 3 || ws.len() != 2 || ws[1] != fs[0] {
        return Err(Error::shape("cam", fs, ws));
    }
    if class >= ws[0] {
        return Err(Error::Input(format!("class {class} out of range for {} classes", ws[0])));
    }
    let (c, plane) = (fs[0], fs[1] * fs[2]);
    let mut out = vec![0.0; plane];
    for k in 0..c {
        let w = weight.data()[class * c + k].as_f64();
        for (o, f) in out.iter_mut().zip(&features.data()[k * plane..(k + 1) * plane]) {
            *o += w * f.as_f64();
        }
    }
    Tensor::new(&fs[1..], out)
}

/// Min-max scale to `[0, 1]`; a constant map becomes all 0.5.
pub fn normalize_map(map: &Tensor<f64>) -> Tensor<f64> {
    let lo = map.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return map.map(|_| 0.5);
    }
    map.map(|x| (x - lo) / (hi - lo))
}

/// Normalized class activation map `(T', V)`.
pub fn cam<F: Scalar>(features: &Tensor<F>, weight: &Tensor<F>, class: usize) -> Result<Tensor<f64>> {
    Ok(normalize_map(&cam_raw(features, weight, class)?))
}
