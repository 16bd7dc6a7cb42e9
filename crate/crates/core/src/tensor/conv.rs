//! im2col/col2im kernels shared by convolution and transposed convolution.

use super::Scalar;

/// Geometry of a square-kernel convolution from a `c × h × w` image to `ho × wo` outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    /// Forward-convolution geometry; `None` when the output would be empty.
    pub fn conv(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        let ho = out_len(h, k, stride, pad)?;
        let wo = out_len(w, k, stride, pad)?;
        Some(Self { c, h, w, k, stride, pad, ho, wo })
    }

    /// Geometry of the convolution whose adjoint maps `hi × wi` to the transposed output.
    pub fn transposed(c: usize, hi: usize, wi: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        let h = ((hi.checked_sub(1)? * stride) + k).checked_sub(2 * pad)?;
        let w = ((wi.checked_sub(1)? * stride) + k).checked_sub(2 * pad)?;
        if h == 0 || w == 0 {
            return None;
        }
        let g = Self::conv(c, h, w, k, stride, pad)?;
        (g.ho == hi && g.wo == wi).then_some(g)
    }

    pub fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

fn out_len(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let span = (n + 2 * pad).checked_sub(k)?;
    Some(span / stride + 1)
}

/// Unfolds one `c × h × w` image into a `rows × cols` patch matrix.
pub(crate) fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    debug_assert_eq!(x.len(), g.c * g.h * g.w);
    debug_assert_eq!(cols.len(), g.rows() * g.cols());
    let ncols = g.cols();
    let mut row = 0;
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let seg = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        seg.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in seg.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Folds a patch matrix back onto an image, accumulating overlapping entries.
pub(crate) fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    debug_assert_eq!(x.len(), g.c * g.h * g.w);
    debug_assert_eq!(cols.len(), g.rows() * g.cols());
    let ncols = g.cols();
    let mut row = 0;
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in src[oy * g.wo..(oy + 1) * g.wo].iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] = dst[ix as usize] + v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}
