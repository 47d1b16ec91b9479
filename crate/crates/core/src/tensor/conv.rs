//! im2col-based 2-D cross-correlation kernels.

use super::{shape_err, Element, Result};

/// Output side length of a convolution: `floor((size + 2*pad - k) / stride) + 1`.
pub fn conv2d_output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || size + 2 * padding < kernel {
        return None;
    }
    Some((size + 2 * padding - kernel) / stride + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(
        input: &[usize],
        weight: &[usize],
        bias: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let [n, cin, h, w] = *input else {
            return Err(shape_err("conv2d", format!("input must be NCHW, got {input:?}")));
        };
        let [cout, wcin, kh, kw] = *weight else {
            return Err(shape_err("conv2d", format!("weight must be [Cout,Cin,kh,kw], got {weight:?}")));
        };
        if wcin != cin {
            return Err(shape_err("conv2d", format!("input has {cin} channels, weight expects {wcin}")));
        }
        if bias != [cout] {
            return Err(shape_err("conv2d", format!("bias {bias:?} does not match {cout} output channels")));
        }
        let ho = conv2d_output_size(h, kh, stride, pad)
            .ok_or_else(|| shape_err("conv2d", format!("kernel {kh} too large for height {h} with padding {pad} (stride {stride})")))?;
        let wo = conv2d_output_size(w, kw, stride, pad)
            .ok_or_else(|| shape_err("conv2d", format!("kernel {kw} too large for width {w} with padding {pad} (stride {stride})")))?;
        Ok(Self { n, cin, h, w, cout, kh, kw, stride, pad, ho, wo })
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.n, self.cout, self.ho, self.wo]
    }
}

fn im2col<T: Element>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.p();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let out = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let dst = &mut out[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Element>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let p = g.p();
    for c in 0..g.cin {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] = dst[ix as usize] + src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Element>(x: &[T], weight: &[T], bias: &[T], g: &ConvGeom) -> Vec<T> {
    let (k, p) = (g.k(), g.p());
    let in_per = g.cin * g.h * g.w;
    let out_per = g.cout * p;
    let mut out = vec![T::zero(); g.n * out_per];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    for s in 0..g.n {
        let xs = &x[s * in_per..(s + 1) * in_per];
        let os = &mut out[s * out_per..(s + 1) * out_per];
        for (co, row) in os.chunks_mut(p).enumerate() {
            row.fill(bias[co]);
        }
        let b: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, g, &mut cols);
            &cols
        };
        T::gemm(g.cout, k, p, T::one(), weight, (k as isize, 1), b, (p as isize, 1), T::one(), os, p);
    }
    out
}

/// Returns `(d input, d weight, d bias)`.
pub(crate) fn conv2d_backward<T: Element>(
    x: &[T],
    weight: &[T],
    grad_out: &[T],
    g: &ConvGeom,
    need_input_grad: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let (k, p) = (g.k(), g.p());
    let in_per = g.cin * g.h * g.w;
    let out_per = g.cout * p;
    let mut gw = vec![T::zero(); g.cout * k];
    let mut gb = vec![T::zero(); g.cout];
    let mut gx = need_input_grad.then(|| vec![T::zero(); g.n * in_per]);
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    let mut gcols = vec![T::zero(); k * p];
    for s in 0..g.n {
        let xs = &x[s * in_per..(s + 1) * in_per];
        let gos = &grad_out[s * out_per..(s + 1) * out_per];
        for (co, row) in gos.chunks(p).enumerate() {
            gb[co] = gb[co] + row.iter().copied().sum::<T>();
        }
        let b: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, g, &mut cols);
            &cols
        };
        // dW += dOut [cout, P] @ cols^T [P, K]
        T::gemm(g.cout, p, k, T::one(), gos, (p as isize, 1), b, (1, p as isize), T::one(), &mut gw, k);
        if let Some(gx) = gx.as_mut() {
            let gxs = &mut gx[s * in_per..(s + 1) * in_per];
            if g.is_pointwise() {
                T::gemm(k, g.cout, p, T::one(), weight, (1, k as isize), gos, (p as isize, 1), T::zero(), gxs, p);
            } else {
                T::gemm(k, g.cout, p, T::one(), weight, (1, k as isize), gos, (p as isize, 1), T::zero(), &mut gcols, p);
                col2im_add(&gcols, g, gxs);
            }
        }
    }
    (gx, gw, gb)
}
