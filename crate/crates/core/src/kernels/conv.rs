//! Zero-padded 3D cross-correlation via im2col and GEMM.

use super::{gemm_nn, gemm_nt, gemm_tn};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

const AXES: [&str; 3] = ["depth", "height", "width"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3dSpec {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Conv3dSpec {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride: [stride; 3],
            padding: [padding; 3],
        }
    }
}

impl Default for Conv3dSpec {
    fn default() -> Self {
        Self::new(1, 0)
    }
}

/// Resolved geometry of one convolution call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub output: [usize; 3],
    pub spec: Conv3dSpec,
}

impl ConvGeometry {
    pub fn resolve(input: &[usize], weight: &[usize], spec: Conv3dSpec) -> Result<Self> {
        if input.len() != 5 {
            return Err(Error::shape(
                "conv3d",
                format!("input must be [N,C,D,H,W], got {input:?}"),
            ));
        }
        if weight.len() != 5 {
            return Err(Error::shape(
                "conv3d",
                format!("weight must be [Cout,Cin,kd,kh,kw], got {weight:?}"),
            ));
        }
        if input[1] != weight[1] {
            return Err(Error::shape(
                "conv3d",
                format!(
                    "channel axis: input has {} channels, weight expects {}",
                    input[1], weight[1]
                ),
            ));
        }
        let mut output = [0usize; 3];
        for axis in 0..3 {
            if spec.stride[axis] == 0 {
                return Err(Error::invalid(
                    "conv3d",
                    format!("stride along {} must be >= 1", AXES[axis]),
                ));
            }
            if weight[2 + axis] == 0 {
                return Err(Error::shape(
                    "conv3d",
                    format!("{} axis: zero kernel extent", AXES[axis]),
                ));
            }
            let span = input[2 + axis] as i64 + 2 * spec.padding[axis] as i64 - weight[2 + axis] as i64;
            let extent = span.div_euclid(spec.stride[axis] as i64) + 1;
            if extent < 1 {
                return Err(Error::NonPositiveExtent {
                    op: "conv3d",
                    axis: AXES[axis],
                    extent,
                });
            }
            output[axis] = extent as usize;
        }
        Ok(Self {
            batch: input[0],
            in_channels: input[1],
            out_channels: weight[0],
            input: [input[2], input[3], input[4]],
            kernel: [weight[2], weight[3], weight[4]],
            output,
            spec,
        })
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![
            self.batch,
            self.out_channels,
            self.output[0],
            self.output[1],
            self.output[2],
        ]
    }

    fn in_plane(&self) -> usize {
        self.input.iter().product()
    }

    fn out_plane(&self) -> usize {
        self.output.iter().product()
    }

    /// Rows of the unfolded matrix: `Cin · kd · kh · kw`.
    fn patch(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    /// Columns of the unfolded matrix: `N · D' · H' · W'`.
    fn columns(&self) -> usize {
        self.batch * self.out_plane()
    }
}

/// Unfold `input` into a `[Cin·kd·kh·kw] × [N·D'·H'·W']` matrix.
fn im2col<T: Element>(g: &ConvGeometry, input: &[T]) -> Vec<T> {
    let (in_plane, out_plane, ncols) = (g.in_plane(), g.out_plane(), g.columns());
    let [id, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [od, oh, ow] = g.output;
    let [sd, sh, sw] = g.spec.stride;
    let [pd, ph, pw] = g.spec.padding;
    let mut cols = vec![T::zero(); g.patch() * ncols];
    for ci in 0..g.in_channels {
        for a in 0..kd {
            for b in 0..kh {
                for c in 0..kw {
                    let row = ((ci * kd + a) * kh + b) * kw + c;
                    for n in 0..g.batch {
                        let src = &input[(n * g.in_channels + ci) * in_plane..][..in_plane];
                        let dst = &mut cols[row * ncols + n * out_plane..][..out_plane];
                        for oz in 0..od {
                            let iz = (oz * sd + a) as isize - pd as isize;
                            if iz < 0 || iz >= id as isize {
                                continue;
                            }
                            for oy in 0..oh {
                                let iy = (oy * sh + b) as isize - ph as isize;
                                if iy < 0 || iy >= ih as isize {
                                    continue;
                                }
                                let src_row = (iz as usize * ih + iy as usize) * iw;
                                let dst_row = (oz * oh + oy) * ow;
                                for ox in 0..ow {
                                    let ix = (ox * sw + c) as isize - pw as isize;
                                    if ix >= 0 && ix < iw as isize {
                                        dst[dst_row + ox] = src[src_row + ix as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Fold an unfolded gradient matrix back onto the input layout, accumulating overlaps.
fn col2im<T: Element>(g: &ConvGeometry, cols: &[T], grad_input: &mut [T]) {
    let (in_plane, out_plane, ncols) = (g.in_plane(), g.out_plane(), g.columns());
    let [id, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [od, oh, ow] = g.output;
    let [sd, sh, sw] = g.spec.stride;
    let [pd, ph, pw] = g.spec.padding;
    for ci in 0..g.in_channels {
        for a in 0..kd {
            for b in 0..kh {
                for c in 0..kw {
                    let row = ((ci * kd + a) * kh + b) * kw + c;
                    for n in 0..g.batch {
                        let dst = &mut grad_input[(n * g.in_channels + ci) * in_plane..][..in_plane];
                        let src = &cols[row * ncols + n * out_plane..][..out_plane];
                        for oz in 0..od {
                            let iz = (oz * sd + a) as isize - pd as isize;
                            if iz < 0 || iz >= id as isize {
                                continue;
                            }
                            for oy in 0..oh {
                                let iy = (oy * sh + b) as isize - ph as isize;
                                if iy < 0 || iy >= ih as isize {
                                    continue;
                                }
                                let dst_row = (iz as usize * ih + iy as usize) * iw;
                                let src_row = (oz * oh + oy) * ow;
                                for ox in 0..ow {
                                    let ix = (ox * sw + c) as isize - pw as isize;
                                    if ix >= 0 && ix < iw as isize {
                                        let d = &mut dst[dst_row + ix as usize];
                                        *d = *d + src[src_row + ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Forward pass. When `keep_columns` is set the unfolded input is returned
/// for reuse by [`conv3d_backward`].
pub fn conv3d_forward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: Conv3dSpec,
    keep_columns: bool,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    let g = ConvGeometry::resolve(input.shape(), weight.shape(), spec)?;
    if let Some(b) = bias {
        if b.shape() != [g.out_channels] {
            return Err(Error::shape(
                "conv3d",
                format!("bias must be [{}], got {:?}", g.out_channels, b.shape()),
            ));
        }
    }
    let cols = im2col(&g, input.data());
    let (ncols, out_plane) = (g.columns(), g.out_plane());
    let mut product = vec![T::zero(); g.out_channels * ncols];
    gemm_nn(g.out_channels, g.patch(), ncols, weight.data(), &cols, &mut product);

    let mut out = vec![T::zero(); g.batch * g.out_channels * out_plane];
    for co in 0..g.out_channels {
        let shift = bias.map_or(T::zero(), |b| b.data()[co]);
        for n in 0..g.batch {
            let src = &product[co * ncols + n * out_plane..][..out_plane];
            let dst = &mut out[(n * g.out_channels + co) * out_plane..][..out_plane];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s + shift;
            }
        }
    }
    let out = Tensor::from_vec(g.output_shape(), out)?;
    Ok((out, keep_columns.then_some(cols)))
}

pub struct Conv3dGrads<T: Element> {
    pub input: Option<Vec<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Gradients of a convolution given the upstream gradient `grad_out`.
///
/// `columns` must be the unfolded input produced by the forward pass; the
/// input gradient is only computed when `need_input` is set.
pub fn conv3d_backward<T: Element>(
    geometry: &ConvGeometry,
    weight: &[T],
    columns: &[T],
    grad_out: &[T],
    need_input: bool,
) -> Conv3dGrads<T> {
    let g = geometry;
    let (ncols, out_plane, patch) = (g.columns(), g.out_plane(), g.patch());

    // [N,Cout,P] -> [Cout, N·P]
    let mut dy = vec![T::zero(); g.out_channels * ncols];
    for co in 0..g.out_channels {
        for n in 0..g.batch {
            dy[co * ncols + n * out_plane..][..out_plane]
                .copy_from_slice(&grad_out[(n * g.out_channels + co) * out_plane..][..out_plane]);
        }
    }

    let bias = (0..g.out_channels)
        .map(|co| dy[co * ncols..(co + 1) * ncols].iter().fold(T::zero(), |acc, &v| acc + v))
        .collect();

    let mut dweight = vec![T::zero(); g.out_channels * patch];
    gemm_nt(g.out_channels, ncols, patch, &dy, columns, &mut dweight);

    let input = need_input.then(|| {
        let mut dcols = vec![T::zero(); patch * ncols];
        gemm_tn(g.out_channels, patch, ncols, weight, &dy, &mut dcols);
        let mut dx = vec![T::zero(); g.batch * g.in_channels * g.in_plane()];
        col2im(g, &dcols, &mut dx);
        dx
    });

    Conv3dGrads {
        input,
        weight: dweight,
        bias,
    }
}
