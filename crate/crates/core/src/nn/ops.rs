//! Layer kernels. Forward functions are pure; backward functions take the
//! upstream gradient and return gradients for every input and parameter.

use ndarray::{linalg::general_mat_mul, s, Array1, Array2, Array4, ArrayView1, ArrayView4, Axis};

use super::Real;

/// Upper bound on im2col buffer entries; larger inputs are processed in
/// bands of frequency rows.
const COL_BUDGET: usize = 1 << 22;

struct ConvGeom {
    c_in: usize,
    kf: usize,
    kt: usize,
    f: usize,
    t: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c_in * self.kf * self.kt
    }

    fn band(&self) -> usize {
        (COL_BUDGET / (self.rows() * self.t).max(1)).clamp(1, self.f)
    }
}

/// Fills `cols[(c, i, j), (f - f0, t)] = x[c, f + i - kf/2, t + j - kt/2]`, zero outside.
fn im2col<T: Real>(x: &[T], g: &ConvGeom, f0: usize, f1: usize, cols: &mut [T]) {
    let (pf, pt) = ((g.kf / 2) as isize, (g.kt / 2) as isize);
    let width = (f1 - f0) * g.t;
    for c in 0..g.c_in {
        for i in 0..g.kf {
            for j in 0..g.kt {
                let row = &mut cols[((c * g.kf + i) * g.kt + j) * width..][..width];
                let shift = j as isize - pt;
                let (lo, hi) = ((-shift).max(0) as usize, (g.t as isize - shift).min(g.t as isize).max(0) as usize);
                for f in f0..f1 {
                    let dst = &mut row[(f - f0) * g.t..][..g.t];
                    let fs = f as isize + i as isize - pf;
                    if fs < 0 || fs >= g.f as isize || lo >= hi {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &x[(c * g.f + fs as usize) * g.t..][..g.t];
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    let s0 = (lo as isize + shift) as usize;
                    dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto `dx`.
fn col2im<T: Real>(cols: &[T], g: &ConvGeom, f0: usize, f1: usize, dx: &mut [T]) {
    let (pf, pt) = ((g.kf / 2) as isize, (g.kt / 2) as isize);
    let width = (f1 - f0) * g.t;
    for c in 0..g.c_in {
        for i in 0..g.kf {
            for j in 0..g.kt {
                let row = &cols[((c * g.kf + i) * g.kt + j) * width..][..width];
                let shift = j as isize - pt;
                let (lo, hi) = ((-shift).max(0) as usize, (g.t as isize - shift).min(g.t as isize).max(0) as usize);
                if lo >= hi {
                    continue;
                }
                for f in f0..f1 {
                    let fs = f as isize + i as isize - pf;
                    if fs < 0 || fs >= g.f as isize {
                        continue;
                    }
                    let src = &row[(f - f0) * g.t..][..g.t];
                    let s0 = (lo as isize + shift) as usize;
                    let dst = &mut dx[(c * g.f + fs as usize) * g.t + s0..][..hi - lo];
                    for (d, &v) in dst.iter_mut().zip(&src[lo..hi]) {
                        *d += v;
                    }
                }
            }
        }
    }
}

fn geometry<T>(x: &ArrayView4<T>, w: &ArrayView4<T>) -> ConvGeom {
    let (_, c_in, f, t) = x.dim();
    let (_, wc, kf, kt) = w.dim();
    assert_eq!(c_in, wc, "conv input channels");
    ConvGeom { c_in, kf, kt, f, t }
}

/// Same-padded 2-D cross-correlation. `w` is `[out, in, kf, kt]`.
pub fn conv2d_forward<T: Real>(x: ArrayView4<T>, w: ArrayView4<T>, bias: ArrayView1<T>) -> Array4<T> {
    let g = geometry(&x, &w);
    let (b, c_out) = (x.dim().0, w.dim().0);
    let x = x.as_standard_layout();
    let w2 = w.as_standard_layout().into_shape_with_order((c_out, g.rows())).expect("contiguous");
    let mut y = Array4::zeros((b, c_out, g.f, g.t));
    let band = g.band();
    let mut cols = vec![T::zero(); g.rows() * band * g.t];
    for n in 0..b {
        let xn = x.index_axis(Axis(0), n);
        let xs = xn.as_slice().expect("standard layout");
        for f0 in (0..g.f).step_by(band) {
            let f1 = (f0 + band).min(g.f);
            let width = (f1 - f0) * g.t;
            let cols = &mut cols[..g.rows() * width];
            im2col(xs, &g, f0, f1, cols);
            let cols = ndarray::ArrayView2::from_shape((g.rows(), width), cols).expect("sized");
            let mut out = Array2::zeros((c_out, width));
            general_mat_mul(T::one(), &w2, &cols, T::zero(), &mut out);
            for co in 0..c_out {
                let mut dst = y.slice_mut(s![n, co, f0..f1, ..]);
                let src = out.row(co);
                for (d, &v) in dst.iter_mut().zip(src.iter()) {
                    *d = v + bias[co];
                }
            }
        }
    }
    y
}

pub struct ConvGrads<T> {
    pub dx: Array4<T>,
    pub dw: Array4<T>,
    pub db: Array1<T>,
}

pub fn conv2d_backward<T: Real>(x: ArrayView4<T>, w: ArrayView4<T>, dy: ArrayView4<T>) -> ConvGrads<T> {
    let g = geometry(&x, &w);
    let (b, c_out) = (x.dim().0, w.dim().0);
    let x = x.as_standard_layout();
    let w2 = w.as_standard_layout().into_shape_with_order((c_out, g.rows())).expect("contiguous");
    let w2t = w2.t();
    let mut dx = Array4::zeros(x.dim());
    let mut dw2 = Array2::zeros((c_out, g.rows()));
    let band = g.band();
    let mut cols = vec![T::zero(); g.rows() * band * g.t];
    let mut dcols = vec![T::zero(); g.rows() * band * g.t];
    for n in 0..b {
        let xn = x.index_axis(Axis(0), n);
        let xs = xn.as_slice().expect("standard layout");
        let mut dxn = dx.index_axis_mut(Axis(0), n);
        let dxs = dxn.as_slice_mut().expect("standard layout");
        for f0 in (0..g.f).step_by(band) {
            let f1 = (f0 + band).min(g.f);
            let width = (f1 - f0) * g.t;
            let mut dyc = Array2::zeros((c_out, width));
            for co in 0..c_out {
                for (d, &v) in dyc.row_mut(co).iter_mut().zip(dy.slice(s![n, co, f0..f1, ..]).iter()) {
                    *d = v;
                }
            }
            let cols = &mut cols[..g.rows() * width];
            im2col(xs, &g, f0, f1, cols);
            let colv = ndarray::ArrayView2::from_shape((g.rows(), width), &*cols).expect("sized");
            general_mat_mul(T::one(), &dyc, &colv.t(), T::one(), &mut dw2);
            let dcols = &mut dcols[..g.rows() * width];
            let mut dcv = ndarray::ArrayViewMut2::from_shape((g.rows(), width), dcols).expect("sized");
            general_mat_mul(T::one(), &w2t, &dyc, T::zero(), &mut dcv);
            col2im(dcv.as_slice().expect("contiguous"), &g, f0, f1, dxs);
        }
    }
    let db = dy.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
    ConvGrads {
        dx,
        dw: dw2.into_shape_with_order(w.dim()).expect("same size"),
        db,
    }
}

/// Per-channel statistics over batch, frequency and time.
pub struct BnStats<T> {
    pub mean: Array1<T>,
    /// Biased variance used for normalisation.
    pub var: Array1<T>,
    /// Bessel-corrected variance for the running estimate.
    pub var_unbiased: Array1<T>,
}

pub struct BnCache<T> {
    pub xhat: Array4<T>,
    pub inv_std: Array1<T>,
    pub train: bool,
}

pub fn channel_stats<T: Real>(x: ArrayView4<T>) -> BnStats<T> {
    let c = x.dim().1;
    let count = (x.len() / c) as f64;
    let mut mean = Array1::zeros(c);
    let mut var = Array1::zeros(c);
    let mut var_unbiased = Array1::zeros(c);
    for ch in 0..c {
        let v = x.index_axis(Axis(1), ch);
        let m = v.iter().map(|a| a.f64()).sum::<f64>() / count;
        let ss = v.iter().map(|a| (a.f64() - m).powi(2)).sum::<f64>();
        mean[ch] = T::of(m);
        var[ch] = T::of(ss / count);
        var_unbiased[ch] = T::of(if count > 1.0 { ss / (count - 1.0) } else { 0.0 });
    }
    BnStats { mean, var, var_unbiased }
}

/// `y = gamma * (x - mean) / sqrt(var + eps) + beta` per channel.
pub fn batchnorm_forward<T: Real>(
    x: ArrayView4<T>,
    gamma: ArrayView1<T>,
    beta: ArrayView1<T>,
    mean: ArrayView1<T>,
    var: ArrayView1<T>,
    eps: T,
    train: bool,
) -> (Array4<T>, BnCache<T>) {
    let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
    let mut xhat = x.to_owned();
    for (ch, mut v) in xhat.axis_iter_mut(Axis(1)).enumerate() {
        let (m, s) = (mean[ch], inv_std[ch]);
        v.mapv_inplace(|a| (a - m) * s);
    }
    let mut y = xhat.clone();
    for (ch, mut v) in y.axis_iter_mut(Axis(1)).enumerate() {
        let (g, b) = (gamma[ch], beta[ch]);
        v.mapv_inplace(|a| a * g + b);
    }
    (y, BnCache { xhat, inv_std, train })
}

pub struct BnGrads<T> {
    pub dx: Array4<T>,
    pub dgamma: Array1<T>,
    pub dbeta: Array1<T>,
}

pub fn batchnorm_backward<T: Real>(cache: &BnCache<T>, gamma: ArrayView1<T>, dy: ArrayView4<T>) -> BnGrads<T> {
    let c = dy.dim().1;
    let count = T::of((dy.len() / c) as f64);
    let mut dx = Array4::zeros(dy.dim());
    let mut dgamma = Array1::zeros(c);
    let mut dbeta = Array1::zeros(c);
    for ch in 0..c {
        let dyc = dy.index_axis(Axis(1), ch);
        let xh = cache.xhat.index_axis(Axis(1), ch);
        let sum_dy: T = dyc.iter().copied().sum();
        let sum_dy_xh: T = dyc.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum();
        dgamma[ch] = sum_dy_xh;
        dbeta[ch] = sum_dy;
        let k = gamma[ch] * cache.inv_std[ch];
        let mut dxc = dx.index_axis_mut(Axis(1), ch);
        if cache.train {
            ndarray::Zip::from(&mut dxc).and(&dyc).and(&xh).for_each(|d, &g, &h| {
                *d = k / count * (count * g - sum_dy - h * sum_dy_xh);
            });
        } else {
            ndarray::Zip::from(&mut dxc).and(&dyc).for_each(|d, &g| *d = k * g);
        }
    }
    BnGrads { dx, dgamma, dbeta }
}

pub fn relu_forward<T: Real>(x: ArrayView4<T>) -> Array4<T> {
    x.mapv(|v| v.max(T::zero()))
}

pub fn relu_backward<T: Real>(y: ArrayView4<T>, dy: ArrayView4<T>) -> Array4<T> {
    let mut dx = dy.to_owned();
    ndarray::Zip::from(&mut dx).and(&y).for_each(|d, &v| {
        if v <= T::zero() {
            *d = T::zero();
        }
    });
    dx
}

/// Logistic function kept strictly inside (0, 1).
pub fn sigmoid_forward<T: Real>(x: ArrayView4<T>) -> Array4<T> {
    let lo = T::epsilon();
    let hi = T::one() - T::epsilon();
    x.mapv(|v| (T::one() / (T::one() + (-v).exp())).max(lo).min(hi))
}

pub fn sigmoid_backward<T: Real>(y: ArrayView4<T>, dy: ArrayView4<T>) -> Array4<T> {
    let mut dx = dy.to_owned();
    ndarray::Zip::from(&mut dx).and(&y).for_each(|d, &v| *d = *d * v * (T::one() - v));
    dx
}

/// `a * m` with a single-channel `m` broadcast over the channels of `a`.
pub fn multiply_forward<T: Real>(a: ArrayView4<T>, m: ArrayView4<T>) -> Array4<T> {
    let mb = m.broadcast(a.dim()).expect("broadcast-compatible");
    let mut y = a.to_owned();
    y *= &mb;
    y
}

/// Returns `(da, dm)`; `dm` is summed over the broadcast channel axis.
pub fn multiply_backward<T: Real>(a: ArrayView4<T>, m: ArrayView4<T>, dy: ArrayView4<T>) -> (Array4<T>, Array4<T>) {
    let mut da = dy.to_owned();
    da *= &m.broadcast(a.dim()).expect("broadcast-compatible");
    let mut prod = dy.to_owned();
    prod *= &a;
    let dm = if m.dim().1 == a.dim().1 {
        prod
    } else {
        prod.sum_axis(Axis(1)).insert_axis(Axis(1))
    };
    (da, dm)
}

pub fn concat_forward<T: Real>(parts: &[ArrayView4<T>]) -> Array4<T> {
    ndarray::concatenate(Axis(1), parts).expect("matching batch and spatial shapes")
}

/// Splits `dy` back into per-input channel blocks.
pub fn concat_backward<T: Real>(channels: &[usize], dy: ArrayView4<T>) -> Vec<Array4<T>> {
    let mut start = 0;
    channels
        .iter()
        .map(|&c| {
            let part = dy.slice(s![.., start..start + c, .., ..]).to_owned();
            start += c;
            part
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array, Array1};
    use rand::{Rng, SeedableRng};

    fn random4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array::from_shape_simple_fn(shape, || rng.gen_range(-1.0..1.0))
    }

    /// Direct nested-loop cross-correlation.
    fn conv_reference(x: &Array4<f64>, w: &Array4<f64>, b: &Array1<f64>) -> Array4<f64> {
        let (n, ci, f, t) = x.dim();
        let (co, _, kf, kt) = w.dim();
        let mut y = Array4::zeros((n, co, f, t));
        for bn in 0..n {
            for o in 0..co {
                for ff in 0..f {
                    for tt in 0..t {
                        let mut acc = b[o];
                        for c in 0..ci {
                            for i in 0..kf {
                                for j in 0..kt {
                                    let fs = ff as isize + i as isize - (kf / 2) as isize;
                                    let ts = tt as isize + j as isize - (kt / 2) as isize;
                                    if fs >= 0 && ts >= 0 && (fs as usize) < f && (ts as usize) < t {
                                        acc += w[[o, c, i, j]] * x[[bn, c, fs as usize, ts as usize]];
                                    }
                                }
                            }
                        }
                        y[[bn, o, ff, tt]] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn identity_kernel_copies_input() {
        let x = random4((2, 3, 4, 5), 1);
        let mut w = Array4::zeros((3, 3, 1, 1));
        for c in 0..3 {
            w[[c, c, 0, 0]] = 1.0;
        }
        let y = conv2d_forward(x.view(), w.view(), Array1::zeros(3).view());
        assert_eq!(y, x);
    }

    #[test]
    fn zero_input_gives_bias() {
        let x = Array4::<f64>::zeros((1, 2, 3, 3));
        let w = random4((4, 2, 3, 3), 2);
        let b = Array1::from(vec![0.5, -1.0, 2.0, 0.0]);
        let y = conv2d_forward(x.view(), w.view(), b.view());
        for o in 0..4 {
            assert!(y.index_axis(Axis(1), o).iter().all(|&v| v == b[o]));
        }
    }

    #[test]
    fn matches_direct_loops_including_asymmetric_kernels() {
        for (kf, kt, seed) in [(3, 3, 3), (5, 1, 4), (1, 7, 5), (7, 3, 6)] {
            let x = random4((2, 3, 6, 5), seed);
            let w = random4((2, 3, kf, kt), seed + 10);
            let b = Array1::from(vec![0.1, -0.2]);
            let y = conv2d_forward(x.view(), w.view(), b.view());
            let r = conv_reference(&x, &w, &b);
            assert!((&y - &r).iter().all(|v| v.abs() < 1e-12), "{kf}x{kt}");
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // With zero bias the output is linear in x and in w separately, so
        // <dx, x> = <dw, w> = <y, dy>.
        let x = random4((2, 3, 7, 6), 7);
        let w = random4((4, 3, 5, 3), 8);
        let dy = random4((2, 4, 7, 6), 9);
        let zero = Array1::zeros(4);
        let y = conv2d_forward(x.view(), w.view(), zero.view());
        let g = conv2d_backward(x.view(), w.view(), dy.view());
        let lhs = (&y * &dy).sum();
        assert!(((&g.dx * &x).sum() - lhs).abs() < 1e-10);
        assert!(((&g.dw * &w).sum() - lhs).abs() < 1e-10);
        assert!((g.db.sum() - dy.sum()).abs() < 1e-12);
    }

    #[test]
    fn standardized_batch_passes_through_batchnorm() {
        let mut x = random4((4, 2, 5, 5), 11);
        let stats = channel_stats(x.view());
        for (c, mut v) in x.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (stats.mean[c], stats.var[c].sqrt());
            v.mapv_inplace(|a| (a - m) / s);
        }
        let st = channel_stats(x.view());
        let ones = Array1::ones(2);
        let zeros = Array1::zeros(2);
        let (y, _) = batchnorm_forward(x.view(), ones.view(), zeros.view(), st.mean.view(), st.var.view(), 1e-3, true);
        assert!((&y - &x).iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn sigmoid_stays_open_interval() {
        let x = Array4::from_shape_vec((1, 1, 1, 4), vec![-1000.0f32, -30.0, 30.0, 1000.0]).unwrap();
        let y = sigmoid_forward(x.view());
        assert!(y.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn multiply_with_constant_masks() {
        let a = random4((2, 3, 4, 4), 12);
        let ones = Array4::ones((2, 1, 4, 4));
        assert_eq!(multiply_forward(a.view(), ones.view()), a);
        let zeros = Array4::zeros((2, 1, 4, 4));
        assert!(multiply_forward(a.view(), zeros.view()).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn concat_round_trip() {
        let a = random4((2, 3, 4, 4), 13);
        let b = random4((2, 1, 4, 4), 14);
        let y = concat_forward(&[a.view(), b.view()]);
        let parts = concat_backward(&[3, 1], y.view());
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }
}
