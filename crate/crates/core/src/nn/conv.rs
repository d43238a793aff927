//! Patch extraction kernels shared by convolution and transposed convolution.
//!
//! Column matrices have one row per `(channel, ky, kx)` triple and one column per
//! `(sample, oy, ox)` triple, both in row-major order.

/// Geometry of a strided, zero-padded sliding window over a `(C, H, W)` image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Geometry {
    pub fn new(channels: usize, height: usize, width: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Geometry {
            channels,
            height,
            width,
            kernel,
            stride,
            padding,
            out_h: (height + 2 * padding - kernel) / stride + 1,
            out_w: (width + 2 * padding - kernel) / stride + 1,
        }
    }

    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols(&self, batch: usize) -> usize {
        batch * self.out_h * self.out_w
    }

    /// Input coordinate hit by output position `o` and kernel offset `k`, if inside the image.
    #[inline]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        (o * self.stride + k).checked_sub(self.padding).filter(|&i| i < extent)
    }
}

pub(crate) fn im2col(x: &[f64], batch: usize, g: &Geometry) -> Vec<f64> {
    let ncols = g.cols(batch);
    let plane = g.height * g.width;
    let out_plane = g.out_h * g.out_w;
    let mut cols = vec![0.0; g.rows() * ncols];
    for c in 0..g.channels {
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for b in 0..batch {
                    let src = &x[(b * g.channels + c) * plane..][..plane];
                    for oy in 0..g.out_h {
                        let Some(iy) = g.source(oy, ky, g.height) else { continue };
                        let base = b * out_plane + oy * g.out_w;
                        for ox in 0..g.out_w {
                            if let Some(ix) = g.source(ox, kx, g.width) {
                                dst[base + ox] = src[iy * g.width + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column entries back onto the image, summing overlaps.
pub(crate) fn col2im(cols: &[f64], batch: usize, g: &Geometry) -> Vec<f64> {
    let ncols = g.cols(batch);
    let plane = g.height * g.width;
    let out_plane = g.out_h * g.out_w;
    let mut x = vec![0.0; batch * g.channels * plane];
    for c in 0..g.channels {
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for b in 0..batch {
                    let dst = &mut x[(b * g.channels + c) * plane..][..plane];
                    for oy in 0..g.out_h {
                        let Some(iy) = g.source(oy, ky, g.height) else { continue };
                        let base = b * out_plane + oy * g.out_w;
                        for ox in 0..g.out_w {
                            if let Some(ix) = g.source(ox, kx, g.width) {
                                dst[iy * g.width + ix] += src[base + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `(B, C, S)` → `(C, B·S)`.
pub(crate) fn to_channel_major(x: &[f64], batch: usize, channels: usize, spatial: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let src = &x[(b * channels + c) * spatial..][..spatial];
            out[(c * batch + b) * spatial..][..spatial].copy_from_slice(src);
        }
    }
    out
}

/// `(C, B·S)` → `(B, C, S)`.
pub(crate) fn to_batch_major(x: &[f64], batch: usize, channels: usize, spatial: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for c in 0..channels {
        for b in 0..batch {
            let src = &x[(c * batch + b) * spatial..][..spatial];
            out[(b * channels + c) * spatial..][..spatial].copy_from_slice(src);
        }
    }
    out
}
