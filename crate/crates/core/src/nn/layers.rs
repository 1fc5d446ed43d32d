//! Forward and backward kernels on channel-major single-sample buffers.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of the network.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + AddAssign + Sum + Default + Debug + Send + Sync + 'static
{
    /// `c ← a·b + beta·c` with explicit row/column strides (in elements).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: usize,
        csa: usize,
        b: &[Self],
        rsb: usize,
        csb: usize,
        beta: Self,
        c: &mut [Self],
        rsc: usize,
        csc: usize,
    );

    fn erf(self) -> Self;

    fn from_f(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 is representable")
    }

    fn to_f(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("finite float")
    }
}

fn span(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path, $erf:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                rsa: usize,
                csa: usize,
                b: &[Self],
                rsb: usize,
                csb: usize,
                beta: Self,
                c: &mut [Self],
                rsc: usize,
                csc: usize,
            ) {
                assert!(a.len() >= span(m, k, rsa, csa));
                assert!(b.len() >= span(k, n, rsb, csb));
                assert!(c.len() >= span(m, n, rsc, csc));
                // SAFETY: the asserts above bound every strided access.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        beta,
                        c.as_mut_ptr(),
                        rsc as isize,
                        csc as isize,
                    )
                }
            }

            fn erf(self) -> Self {
                $erf(self)
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm, libm::erff);
impl_real!(f64, matrixmultiply::dgemm, libm::erf);

/// Unfolds a 3×3, stride-1, zero-padded neighbourhood into `(c·9) × (h·w)` rows.
pub fn im2col3<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    debug_assert_eq!(x.len(), c * hw);
    let zero = T::zero();
    let zeros = vec![zero; w];
    let mut col = Vec::with_capacity(c * 9 * hw);
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                for y in 0..h {
                    let sy = y + ky;
                    if sy == 0 || sy > h {
                        col.extend_from_slice(&zeros);
                        continue;
                    }
                    let src = &plane[(sy - 1) * w..sy * w];
                    match kx {
                        0 => {
                            col.push(zero);
                            col.extend_from_slice(&src[..w - 1]);
                        }
                        1 => col.extend_from_slice(src),
                        _ => {
                            col.extend_from_slice(&src[1..]);
                            col.push(zero);
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col3`]: scatters column gradients back onto `dx`.
pub fn col2im3<T: Real>(col: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    debug_assert_eq!(dx.len(), c * hw);
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y + ky;
                    if sy == 0 || sy > h {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[(sy - 1) * w..sy * w];
                    match kx {
                        0 => {
                            for (d, &s) in dst[..w - 1].iter_mut().zip(&src[1..]) {
                                *d += s;
                            }
                        }
                        1 => {
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                        _ => {
                            for (d, &s) in dst[1..].iter_mut().zip(&src[..w - 1]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Shape and parameter offsets of one convolution in the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    /// Square kernel size, 1 or 3.
    pub kernel: usize,
    pub w_off: usize,
    pub b_off: usize,
}

impl ConvShape {
    pub fn fan_in(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.fan_in()
    }

    pub fn param_count(&self) -> usize {
        self.weight_len() + self.cout
    }
}

/// Saved state for the backward pass of one convolution.
pub struct ConvTrace<T> {
    /// Unfolded input for 3×3 kernels, the raw input for 1×1 kernels.
    pub col: Vec<T>,
    /// Pre-activation output.
    pub z: Vec<T>,
}

pub fn conv_forward<T: Real>(
    shape: &ConvShape,
    params: &[T],
    x: Vec<T>,
    h: usize,
    w: usize,
) -> ConvTrace<T> {
    let hw = h * w;
    let k = shape.fan_in();
    let col = if shape.kernel == 3 {
        im2col3(&x, shape.cin, h, w)
    } else {
        x
    };
    let weights = &params[shape.w_off..shape.w_off + shape.weight_len()];
    let bias = &params[shape.b_off..shape.b_off + shape.cout];
    let mut z = Vec::with_capacity(shape.cout * hw);
    for &b in bias {
        z.extend(std::iter::repeat_n(b, hw));
    }
    T::gemm(shape.cout, k, hw, weights, k, 1, &col, hw, 1, T::one(), &mut z, hw, 1);
    ConvTrace { col, z }
}

/// Accumulates parameter gradients into `grads`; returns the input gradient when asked.
pub fn conv_backward<T: Real>(
    shape: &ConvShape,
    params: &[T],
    trace: &ConvTrace<T>,
    dz: &[T],
    h: usize,
    w: usize,
    grads: &mut [T],
    need_input_grad: bool,
) -> Option<Vec<T>> {
    let hw = h * w;
    let k = shape.fan_in();
    {
        let dw = &mut grads[shape.w_off..shape.w_off + shape.weight_len()];
        T::gemm(shape.cout, hw, k, dz, hw, 1, &trace.col, 1, hw, T::one(), dw, k, 1);
    }
    {
        let db = &mut grads[shape.b_off..shape.b_off + shape.cout];
        for (co, g) in db.iter_mut().enumerate() {
            *g += dz[co * hw..(co + 1) * hw].iter().copied().sum::<T>();
        }
    }
    if !need_input_grad {
        return None;
    }
    let weights = &params[shape.w_off..shape.w_off + shape.weight_len()];
    let mut dcol = vec![T::zero(); k * hw];
    T::gemm(k, shape.cout, hw, weights, 1, k, dz, hw, 1, T::zero(), &mut dcol, hw, 1);
    if shape.kernel == 3 {
        let mut dx = vec![T::zero(); shape.cin * hw];
        col2im3(&dcol, shape.cin, h, w, &mut dx);
        Some(dx)
    } else {
        Some(dcol)
    }
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
// 1 / sqrt(2π)
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF, the gate of the exact GELU.
#[inline]
pub fn gelu_cdf<T: Real>(x: T) -> T {
    T::from_f(0.5) * (T::one() + (x * T::from_f(FRAC_1_SQRT_2)).erf())
}

/// Exact (erf-based) GELU.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    x * gelu_cdf(x)
}

#[inline]
fn gelu_grad_with_cdf<T: Real>(x: T, cdf: T) -> T {
    let pdf = T::from_f(INV_SQRT_2PI) * (-(x * x) * T::from_f(0.5)).exp();
    cdf + x * pdf
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    gelu_grad_with_cdf(x, gelu_cdf(x))
}

/// Activations and the CDF values the backward pass reuses.
pub fn gelu_with_cdf<T: Real>(z: &[T]) -> (Vec<T>, Vec<T>) {
    let cdf: Vec<T> = z.iter().map(|&v| gelu_cdf(v)).collect();
    let y = z.iter().zip(&cdf).map(|(&v, &c)| v * c).collect();
    (y, cdf)
}

/// `dz = dy ⊙ gelu'(z)`, reusing the `dy` buffer.
pub fn gelu_backward<T: Real>(z: &[T], cdf: &[T], mut dy: Vec<T>) -> Vec<T> {
    for ((d, &v), &c) in dy.iter_mut().zip(z).zip(cdf) {
        *d = *d * gelu_grad_with_cdf(v, c);
    }
    dy
}

/// 2×2 max pool with stride 2. Returns the pooled map and the flat source index of each max.
pub fn maxpool2<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let base = ci * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let i0 = base + 2 * oy * w + 2 * ox;
                let cands = [i0, i0 + 1, i0 + w, i0 + w + 1];
                let mut best = cands[0];
                for &i in &cands[1..] {
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward<T: Real>(dy: &[T], arg: &[u32], dx: &mut [T]) {
    for (&g, &i) in dy.iter().zip(arg) {
        dx[i as usize] += g;
    }
}

/// Source taps for 2× bilinear upsampling along one axis (half-pixel centres,
/// no corner alignment): `(lo, hi, w_lo, w_hi)` per output index.
pub fn upsample_taps(n: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            let f = src - lo as f64;
            (lo, hi, 1.0 - f, f)
        })
        .collect()
}

pub fn upsample2<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let p = &x[ci * h * w..(ci + 1) * h * w];
        for &(y0, y1, wy0, wy1) in &ty {
            let (wy0, wy1) = (T::from_f(wy0), T::from_f(wy1));
            for &(x0, x1, wx0, wx1) in &tx {
                let (wx0, wx1) = (T::from_f(wx0), T::from_f(wx1));
                let top = wx0 * p[y0 * w + x0] + wx1 * p[y0 * w + x1];
                let bot = wx0 * p[y1 * w + x0] + wx1 * p[y1 * w + x1];
                out.push(wy0 * top + wy1 * bot);
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Real>(dy: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let ow = 2 * w;
    let mut dx = vec![T::zero(); c * h * w];
    for ci in 0..c {
        let g = &dy[ci * 4 * h * w..(ci + 1) * 4 * h * w];
        let p = &mut dx[ci * h * w..(ci + 1) * h * w];
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            let (wy0, wy1) = (T::from_f(wy0), T::from_f(wy1));
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                let (wx0, wx1) = (T::from_f(wx0), T::from_f(wx1));
                let v = g[oy * ow + ox];
                p[y0 * w + x0] += wy0 * wx0 * v;
                p[y0 * w + x1] += wy0 * wx1 * v;
                p[y1 * w + x0] += wy1 * wx0 * v;
                p[y1 * w + x1] += wy1 * wx1 * v;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Direct 3×3 zero-padded convolution used as an oracle.
    fn naive_conv(x: &[f64], wts: &[f64], bias: &[f64], cin: usize, cout: usize, h: usize, w: usize) -> Vec<f64> {
        let mut out = vec![0.0; cout * h * w];
        for co in 0..cout {
            for y in 0..h {
                for xx in 0..w {
                    let mut s = bias[co];
                    for ci in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = y as isize + ky as isize - 1;
                                let sx = xx as isize + kx as isize - 1;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                s += wts[((co * cin + ci) * 3 + ky) * 3 + kx]
                                    * x[(ci * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out[(co * h + y) * w + xx] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_evaluation() {
        let (cin, cout, h, w) = (3, 4, 5, 6);
        let shape = ConvShape {
            cin,
            cout,
            kernel: 3,
            w_off: 0,
            b_off: cout * cin * 9,
        };
        let params = random(shape.param_count(), 1);
        let x = random(cin * h * w, 2);
        let trace = conv_forward(&shape, &params, x.clone(), h, w);
        let oracle = naive_conv(&x, &params[..shape.weight_len()], &params[shape.b_off..], cin, cout, h, w);
        for (a, b) in trace.z.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y.
        let (c, h, w) = (2, 4, 5);
        let x = random(c * h * w, 3);
        let y = random(c * 9 * h * w, 4);
        let col = im2col3(&x, c, h, w);
        let mut back = vec![0.0; c * h * w];
        col2im3(&y, c, h, w, &mut back);
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn upsample_backward_is_adjoint() {
        let (c, h, w) = (2, 3, 4);
        let x = random(c * h * w, 5);
        let g = random(c * 4 * h * w, 6);
        let up = upsample2(&x, c, h, w);
        let back = upsample2_backward(&g, c, h, w);
        let lhs: f64 = up.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn upsample_reproduces_half_pixel_bilinear() {
        // 1-D row [0, 4] → [0, 1, 3, 4] under half-pixel-centre sampling.
        let out = upsample2(&[0.0f64, 4.0], 1, 1, 2);
        assert_eq!(&out[..4], &[0.0, 1.0, 3.0, 4.0]);
        let constant = upsample2(&[2.5f64; 9], 1, 3, 3);
        assert!(constant.iter().all(|&v| (v - 2.5).abs() < 1e-15));
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let x = [1.0f64, 5.0, 2.0, 0.0, 3.0, 4.0, -1.0, 9.0];
        let (out, arg) = maxpool2(&x, 1, 2, 4);
        assert_eq!(out, vec![5.0, 9.0]);
        let mut dx = vec![0.0; 8];
        maxpool2_backward(&[1.0, 2.0], &arg, &mut dx);
        assert_eq!(dx, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn gelu_derivative_matches_finite_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.2] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
        assert!((gelu(1.0f64) - 0.841_344_746_068_542_9).abs() < 1e-12);
    }
}
