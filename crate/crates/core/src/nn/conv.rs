//! Stride-1, unpadded 2-D convolution over HWC images, lowered to GEMM per sample.
//!
//! Weights are `(k·k·c_in) × filters`, row index `(dy·k + dx)·c_in + c`.

use crate::data::ImageShape;
use crate::linalg::Matrix;
use crate::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub input: ImageShape,
    pub kernel: usize,
    pub filters: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        self.input.height + 1 - self.kernel
    }

    pub fn out_w(&self) -> usize {
        self.input.width + 1 - self.kernel
    }

    pub fn output(&self) -> ImageShape {
        ImageShape::new(self.out_h(), self.out_w(), self.filters)
    }

    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.input.channels
    }

    fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeometry, patches: &mut [T]) {
    let (w, c, k) = (g.input.width, g.input.channels, g.kernel);
    let plen = g.patch_len();
    for oy in 0..g.out_h() {
        for ox in 0..g.out_w() {
            let row = &mut patches[(oy * g.out_w() + ox) * plen..][..plen];
            for dy in 0..k {
                let src = ((oy + dy) * w + ox) * c;
                row[dy * k * c..(dy + 1) * k * c].copy_from_slice(&x[src..src + k * c]);
            }
        }
    }
}

fn col2im_add<T: Real>(dpatches: &[T], g: &ConvGeometry, dx: &mut [T]) {
    let (w, c, k) = (g.input.width, g.input.channels, g.kernel);
    let plen = g.patch_len();
    for oy in 0..g.out_h() {
        for ox in 0..g.out_w() {
            let row = &dpatches[(oy * g.out_w() + ox) * plen..][..plen];
            for dy in 0..k {
                let dst = ((oy + dy) * w + ox) * c;
                for (d, &v) in dx[dst..dst + k * c].iter_mut().zip(&row[dy * k * c..(dy + 1) * k * c]) {
                    *d += v;
                }
            }
        }
    }
}

pub(crate) fn conv_forward<T: Real>(input: &Matrix<T>, weights: &[T], biases: &[T], g: &ConvGeometry) -> Matrix<T> {
    let n = input.rows();
    let positions = g.positions();
    let plen = g.patch_len();
    let out_len = positions * g.filters;
    let mut out = Matrix::zeros(n, out_len);
    let mut patches = vec![T::zero(); positions * plen];
    for s in 0..n {
        im2col(input.row(s), g, &mut patches);
        let dst = out.row_mut(s);
        for pos in 0..positions {
            dst[pos * g.filters..(pos + 1) * g.filters].copy_from_slice(biases);
        }
        T::gemm(positions, plen, g.filters, T::one(), &patches, false, weights, false, T::one(), dst);
    }
    out
}

/// Returns `(dW, db, dX)`; `dX` only when requested.
pub(crate) fn conv_backward<T: Real>(
    input: &Matrix<T>,
    d_out: &Matrix<T>,
    weights: &[T],
    g: &ConvGeometry,
    want_input_grad: bool,
) -> (Vec<T>, Vec<T>, Option<Matrix<T>>) {
    let n = input.rows();
    let positions = g.positions();
    let plen = g.patch_len();
    let mut dw = vec![T::zero(); plen * g.filters];
    let mut db = vec![T::zero(); g.filters];
    let mut dx = want_input_grad.then(|| Matrix::zeros(n, input.cols()));
    let mut patches = vec![T::zero(); positions * plen];
    let mut dpatches = vec![T::zero(); positions * plen];
    for s in 0..n {
        let ds = d_out.row(s);
        for pos in 0..positions {
            for (b, &v) in db.iter_mut().zip(&ds[pos * g.filters..(pos + 1) * g.filters]) {
                *b += v;
            }
        }
        im2col(input.row(s), g, &mut patches);
        // dW += patchesᵀ · dOut_s
        T::gemm(plen, positions, g.filters, T::one(), &patches, true, ds, false, T::one(), &mut dw);
        if let Some(dx) = dx.as_mut() {
            // dPatches = dOut_s · Wᵀ
            T::gemm(positions, g.filters, plen, T::one(), ds, false, weights, true, T::zero(), &mut dpatches);
            col2im_add(&dpatches, g, dx.row_mut(s));
        }
    }
    (dw, db, dx)
}
