use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPoolSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Window maxima over `[N,C,D,H,W]`. Padded positions never win.
///
/// Returns the output and, per output element, the flat input offset of the
/// selected maximum. Ties go to the lowest flat index.
pub fn maxpool3d_forward<T: Element>(input: &Tensor<T>, spec: MaxPoolSpec) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = input.shape();
    if s.len() != 5 {
        return Err(Error::shape("maxpool3d", format!("input must be [N,C,D,H,W], got {s:?}")));
    }
    if spec.kernel == 0 || spec.stride == 0 {
        return Err(Error::invalid("maxpool3d", "kernel and stride must be >= 1"));
    }
    if spec.padding * 2 > spec.kernel {
        return Err(Error::invalid("maxpool3d", "padding must be at most half the kernel"));
    }
    let mut out_ext = [0usize; 3];
    for axis in 0..3 {
        let padded = s[2 + axis] + 2 * spec.padding;
        if padded < spec.kernel {
            return Err(Error::shape(
                "maxpool3d",
                format!(
                    "{} axis: window {} exceeds padded extent {padded}",
                    ["depth", "height", "width"][axis],
                    spec.kernel
                ),
            ));
        }
        out_ext[axis] = (padded - spec.kernel) / spec.stride + 1;
    }
    let (nc, [d, h, w], [od, oh, ow]) = (s[0] * s[1], [s[2], s[3], s[4]], out_ext);
    let (in_plane, out_plane) = (d * h * w, od * oh * ow);
    let x = input.data();
    let mut out = Vec::with_capacity(nc * out_plane);
    let mut argmax = Vec::with_capacity(nc * out_plane);
    let p = spec.padding as isize;
    for plane in 0..nc {
        let base = plane * in_plane;
        for oz in 0..od {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best: Option<(T, usize)> = None;
                    for a in 0..spec.kernel {
                        let iz = (oz * spec.stride + a) as isize - p;
                        if iz < 0 || iz >= d as isize {
                            continue;
                        }
                        for b in 0..spec.kernel {
                            let iy = (oy * spec.stride + b) as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for c in 0..spec.kernel {
                                let ix = (ox * spec.stride + c) as isize - p;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let idx = base + (iz as usize * h + iy as usize) * w + ix as usize;
                                let v = x[idx];
                                match best {
                                    Some((bv, bi)) if !(v > bv) && !(v == bv && idx < bi) => {}
                                    _ => best = Some((v, idx)),
                                }
                            }
                        }
                    }
                    // padding <= kernel/2 guarantees at least one in-bounds tap
                    let (v, i) = best.expect("window covers at least one input voxel");
                    out.push(v);
                    argmax.push(i);
                }
            }
        }
    }
    let out = Tensor::from_vec(vec![s[0], s[1], od, oh, ow], out)?;
    Ok((out, argmax))
}

pub fn maxpool3d_backward<T: Element>(input_len: usize, argmax: &[usize], grad_out: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&i, &g) in argmax.iter().zip(grad_out) {
        dx[i] = dx[i] + g;
    }
    dx
}

/// Mean over all axes after the first two: `[N,C,...] -> [N,C]`.
pub fn global_avgpool_forward<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    if s.len() < 3 {
        return Err(Error::shape("global_avgpool", format!("input must be [N,C,...], got {s:?}")));
    }
    let plane: usize = s[2..].iter().product();
    if plane == 0 {
        return Err(Error::shape("global_avgpool", "empty spatial extent"));
    }
    let denom = T::from_f64(plane as f64);
    let out = input
        .data()
        .chunks(plane)
        .map(|chunk| chunk.iter().fold(T::zero(), |acc, &v| acc + v) / denom)
        .collect();
    Tensor::from_vec(vec![s[0], s[1]], out)
}

pub fn global_avgpool_backward<T: Element>(input_shape: &[usize], grad_out: &[T]) -> Vec<T> {
    let plane: usize = input_shape[2..].iter().product();
    let denom = T::from_f64(plane as f64);
    grad_out
        .iter()
        .flat_map(|&g| std::iter::repeat(g / denom).take(plane))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_volume_averages_to_constant() {
        let x = Tensor::full(&[2, 3, 4, 4, 4], 7.0f32);
        let y = global_avgpool_forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert!(y.data().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn maxpool_picks_maximum_and_routes_gradient() {
        let data: Vec<f32> = (0..8).map(|v| v as f32).collect();
        let x = Tensor::from_vec(vec![1, 1, 2, 2, 2], data).unwrap();
        let spec = MaxPoolSpec { kernel: 2, stride: 2, padding: 0 };
        let (y, arg) = maxpool3d_forward(&x, spec).unwrap();
        assert_eq!(y.data(), &[7.0]);
        assert_eq!(arg, vec![7]);
        assert_eq!(maxpool3d_backward(8, &arg, &[2.5f32])[7], 2.5);
    }

    #[test]
    fn maxpool_ties_go_to_lowest_index() {
        let x = Tensor::full(&[1, 1, 2, 2, 2], 3.0f64);
        let spec = MaxPoolSpec { kernel: 2, stride: 2, padding: 0 };
        let (_, arg) = maxpool3d_forward(&x, spec).unwrap();
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn padded_maxpool_shape() {
        let x = Tensor::<f32>::zeros(&[1, 2, 8, 8, 8]);
        let spec = MaxPoolSpec { kernel: 3, stride: 2, padding: 1 };
        let (y, _) = maxpool3d_forward(&x, spec).unwrap();
        assert_eq!(y.shape(), &[1, 2, 4, 4, 4]);
    }

    #[test]
    fn window_larger_than_input_is_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 1, 4, 4]);
        let spec = MaxPoolSpec { kernel: 3, stride: 1, padding: 0 };
        assert!(maxpool3d_forward(&x, spec).is_err());
    }
}
