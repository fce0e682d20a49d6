//! Direct (non-im2col) convolution over channel-major tensors.

use super::{ConvGeometry, Real};

#[inline]
fn input_index(g: &ConvGeometry, c: usize, y: usize, x: usize) -> usize {
    (c * g.in_height + y) * g.in_width + x
}

#[inline]
fn kernel_index(g: &ConvGeometry, oc: usize, ky: usize, kx: usize, ic: usize) -> usize {
    ((oc * g.kernel_height + ky) * g.kernel_width + kx) * g.in_channels + ic
}

/// Source pixel for output position `o` and kernel tap `k`, or `None` when it
/// falls into the zero padding.
#[inline]
fn source(o: usize, k: usize, stride: usize, padding: usize, extent: usize) -> Option<usize> {
    (o * stride + k).checked_sub(padding).filter(|&p| p < extent)
}

pub(super) fn forward<T: Real>(g: &ConvGeometry, kernels: &[T], bias: &[T], input: &[T], out: &mut [T]) {
    for oc in 0..g.out_channels {
        for oy in 0..g.out_height {
            for ox in 0..g.out_width {
                let mut acc = bias[oc];
                for ky in 0..g.kernel_height {
                    let Some(iy) = source(oy, ky, g.stride, g.padding, g.in_height) else { continue };
                    for kx in 0..g.kernel_width {
                        let Some(ix) = source(ox, kx, g.stride, g.padding, g.in_width) else { continue };
                        for ic in 0..g.in_channels {
                            let x = input[input_index(g, ic, iy, ix)];
                            if !x.is_zero() {
                                acc += x * kernels[kernel_index(g, oc, ky, kx, ic)];
                            }
                        }
                    }
                }
                out[(oc * g.out_height + oy) * g.out_width + ox] = acc;
            }
        }
    }
}

/// Accumulates kernel and bias gradients from `dz` (gradient w.r.t. the
/// pre-activation output). Writes the input gradient when `dx` is given.
pub(super) fn backward<T: Real>(
    g: &ConvGeometry,
    kernels: &[T],
    input: &[T],
    dz: &[T],
    dkernels: &mut [T],
    dbias: &mut [T],
    mut dx: Option<&mut [T]>,
) {
    if let Some(dx) = dx.as_deref_mut() {
        dx.fill(T::zero());
    }
    for oc in 0..g.out_channels {
        for oy in 0..g.out_height {
            for ox in 0..g.out_width {
                let d = dz[(oc * g.out_height + oy) * g.out_width + ox];
                if d.is_zero() {
                    continue;
                }
                dbias[oc] += d;
                for ky in 0..g.kernel_height {
                    let Some(iy) = source(oy, ky, g.stride, g.padding, g.in_height) else { continue };
                    for kx in 0..g.kernel_width {
                        let Some(ix) = source(ox, kx, g.stride, g.padding, g.in_width) else { continue };
                        for ic in 0..g.in_channels {
                            let ii = input_index(g, ic, iy, ix);
                            let ki = kernel_index(g, oc, ky, kx, ic);
                            dkernels[ki] += d * input[ii];
                            if let Some(dx) = dx.as_deref_mut() {
                                dx[ii] += d * kernels[ki];
                            }
                        }
                    }
                }
            }
        }
    }
}
