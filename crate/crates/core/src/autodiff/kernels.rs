//! Forward and backward kernels for the differentiable ops. Everything here
//! is a plain function over tensors; the tape in `graph` decides which
//! backward pieces to run.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding so that `out = ceil(in / stride)`. Kernels must be odd.
    Same,
    /// No padding: `out = (in - k) / stride + 1`.
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub f: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_y: usize,
    pub pad_x: usize,
}

fn out_extent(
    axis: &'static str,
    len: usize,
    k: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    match padding {
        Padding::Same => {
            if k % 2 == 0 {
                return Err(Error::shape("conv2d", axis, format!("same padding needs an odd kernel, got {k}")));
            }
            let out = len.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(len);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if k > len {
                return Err(Error::shape("conv2d", axis, format!("kernel {k} larger than input {len}")));
            }
            Ok(((len - k) / stride + 1, 0))
        }
    }
}

pub(crate) fn conv_geom<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<ConvGeom> {
    let (h, w, c) = input.dims3("conv2d")?;
    let (kh, kw, kc, f) = match kernel.shape() {
        &[a, b, c, d] => (a, b, c, d),
        other => return Err(Error::shape("conv2d", "kernel rank", format!("expected kh×kw×C×F, got {other:?}"))),
    };
    if kc != c {
        return Err(Error::shape("conv2d", "channel", format!("input has {c} channels, kernel expects {kc}")));
    }
    if bias.shape() != [f] {
        return Err(Error::shape("conv2d", "filter", format!("bias shape {:?} does not match {f} filters", bias.shape())));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
    }
    let (out_h, pad_y) = out_extent("height", h, kh, stride, padding)?;
    let (out_w, pad_x) = out_extent("width", w, kw, stride, padding)?;
    Ok(ConvGeom { h, w, c, kh, kw, f, stride, out_h, out_w, pad_y, pad_x })
}

impl ConvGeom {
    /// Input coordinate hit by output `o` and kernel tap `k`, if inside.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
        let p = (o * stride + k).checked_sub(pad)?;
        (p < len).then_some(p)
    }
}

pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = conv_geom(input, kernel, bias, stride, padding)?;
    Ok(conv2d_with(&g, input, kernel, bias))
}

pub(crate) fn conv2d_with<T: Real>(g: &ConvGeom, input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Tensor<T> {
    let (x, k, b) = (input.data(), kernel.data(), bias.data());
    let mut out = Vec::with_capacity(g.out_h * g.out_w * g.f);
    for _ in 0..g.out_h * g.out_w {
        out.extend_from_slice(b);
    }
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let o = &mut out[(oy * g.out_w + ox) * g.f..][..g.f];
            for ky in 0..g.kh {
                let Some(iy) = ConvGeom::src(oy, ky, g.stride, g.pad_y, g.h) else { continue };
                for kx in 0..g.kw {
                    let Some(ix) = ConvGeom::src(ox, kx, g.stride, g.pad_x, g.w) else { continue };
                    let xin = &x[(iy * g.w + ix) * g.c..][..g.c];
                    let kbase = (ky * g.kw + kx) * g.c * g.f;
                    for (ci, &xv) in xin.iter().enumerate() {
                        if xv == T::zero() {
                            continue;
                        }
                        let krow = &k[kbase + ci * g.f..][..g.f];
                        for (acc, &kv) in o.iter_mut().zip(krow) {
                            *acc += xv * kv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.out_h, g.out_w, g.f], out).expect("conv2d output shape")
}

/// Gradients of conv2d. Each piece is computed only when requested.
pub(crate) fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    want: [bool; 3],
) -> [Option<Tensor<T>>; 3] {
    let (x, k, go) = (input.data(), kernel.data(), grad_out.data());
    let mut dx = want[0].then(|| vec![T::zero(); x.len()]);
    let mut dk = want[1].then(|| vec![T::zero(); k.len()]);
    if want[0] || want[1] {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let grow = &go[(oy * g.out_w + ox) * g.f..][..g.f];
                for ky in 0..g.kh {
                    let Some(iy) = ConvGeom::src(oy, ky, g.stride, g.pad_y, g.h) else { continue };
                    for kx in 0..g.kw {
                        let Some(ix) = ConvGeom::src(ox, kx, g.stride, g.pad_x, g.w) else { continue };
                        let xoff = (iy * g.w + ix) * g.c;
                        let kbase = (ky * g.kw + kx) * g.c * g.f;
                        for ci in 0..g.c {
                            let krange = kbase + ci * g.f..kbase + (ci + 1) * g.f;
                            if let Some(dx) = dx.as_mut() {
                                let mut acc = T::zero();
                                for (&gv, &kv) in grow.iter().zip(&k[krange.clone()]) {
                                    acc += gv * kv;
                                }
                                dx[xoff + ci] += acc;
                            }
                            if let Some(dk) = dk.as_mut() {
                                let xv = x[xoff + ci];
                                if xv != T::zero() {
                                    for (d, &gv) in dk[krange].iter_mut().zip(grow) {
                                        *d += xv * gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let db = want[2].then(|| {
        let mut db = vec![T::zero(); g.f];
        for row in go.chunks_exact(g.f) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        Tensor::new(vec![g.f], db).expect("bias grad")
    });
    [
        dx.map(|d| Tensor::new(input.shape().to_vec(), d).expect("input grad")),
        dk.map(|d| Tensor::new(kernel.shape().to_vec(), d).expect("kernel grad")),
        db,
    ]
}

pub(crate) fn dense_dims<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize)> {
    if input.rank() != 1 {
        return Err(Error::shape("dense", "input rank", format!("expected rank-1 input, got {:?}", input.shape())));
    }
    let (p, q) = match weights.shape() {
        &[p, q] => (p, q),
        other => return Err(Error::shape("dense", "weight rank", format!("expected p×q weights, got {other:?}"))),
    };
    if input.len() != p {
        return Err(Error::shape("dense", "input", format!("input length {} but weights expect {p}", input.len())));
    }
    if bias.shape() != [q] {
        return Err(Error::shape("dense", "output", format!("bias shape {:?} but weights produce {q}", bias.shape())));
    }
    Ok((p, q))
}

pub fn dense<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, q) = dense_dims(input, weights, bias)?;
    let mut out = bias.data().to_vec();
    for (&xv, wrow) in input.data().iter().zip(weights.data().chunks_exact(q)) {
        if xv == T::zero() {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(wrow) {
            *o += xv * wv;
        }
    }
    Tensor::new(vec![q], out)
}

pub(crate) fn dense_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    want: [bool; 3],
) -> [Option<Tensor<T>>; 3] {
    let q = grad_out.len();
    let go = grad_out.data();
    let dx = want[0].then(|| {
        let d = weights
            .data()
            .chunks_exact(q)
            .map(|wrow| wrow.iter().zip(go).fold(T::zero(), |a, (&w, &g)| a + w * g))
            .collect();
        Tensor::new(input.shape().to_vec(), d).expect("dense input grad")
    });
    let dw = want[1].then(|| {
        let mut d = vec![T::zero(); weights.len()];
        for (&xv, drow) in input.data().iter().zip(d.chunks_exact_mut(q)) {
            for (dv, &g) in drow.iter_mut().zip(go) {
                *dv = xv * g;
            }
        }
        Tensor::new(weights.shape().to_vec(), d).expect("dense weight grad")
    });
    let db = want[2].then(|| grad_out.clone());
    [dx, dw, db]
}

/// Mean over non-overlapping `r×r` blocks, per channel.
pub fn downsample_avg<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (h, w, c) = x.dims3("downsample_avg")?;
    if r == 0 {
        return Err(Error::InvalidArgument("downsample factor must be positive".into()));
    }
    if h % r != 0 {
        return Err(Error::shape("downsample_avg", "height", format!("{h} not divisible by {r}")));
    }
    if w % r != 0 {
        return Err(Error::shape("downsample_avg", "width", format!("{w} not divisible by {r}")));
    }
    let (oh, ow) = (h / r, w / r);
    let src = x.data();
    let mut out = vec![T::zero(); oh * ow * c];
    for y in 0..h {
        for xx in 0..w {
            let o = &mut out[((y / r) * ow + xx / r) * c..][..c];
            for (a, &v) in o.iter_mut().zip(&src[(y * w + xx) * c..][..c]) {
                *a += v;
            }
        }
    }
    let scale = T::one() / T::lit((r * r) as f64);
    for v in &mut out {
        *v = *v * scale;
    }
    Tensor::new(vec![oh, ow, c], out)
}

pub(crate) fn downsample_avg_backward<T: Real>(grad_out: &Tensor<T>, in_shape: &[usize], r: usize) -> Tensor<T> {
    let (h, w, c) = (in_shape[0], in_shape[1], in_shape[2]);
    let ow = w / r;
    let scale = T::one() / T::lit((r * r) as f64);
    let go = grad_out.data();
    let mut d = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for xx in 0..w {
            d.extend(go[((y / r) * ow + xx / r) * c..][..c].iter().map(|&g| g * scale));
        }
    }
    Tensor::new(in_shape.to_vec(), d).expect("pool grad")
}

/// Replicates each element into a `factor×factor` block.
pub fn upsample_nearest<T: Real>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (h, w, c) = x.dims3("upsample_nearest")?;
    if factor == 0 {
        return Err(Error::InvalidArgument("upsample factor must be positive".into()));
    }
    let (oh, ow) = (h * factor, w * factor);
    let src = x.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    for y in 0..oh {
        for xx in 0..ow {
            out.extend_from_slice(&src[((y / factor) * w + xx / factor) * c..][..c]);
        }
    }
    Tensor::new(vec![oh, ow, c], out)
}

pub(crate) fn upsample_nearest_backward<T: Real>(grad_out: &Tensor<T>, in_shape: &[usize], factor: usize) -> Tensor<T> {
    let (w, c) = (in_shape[1], in_shape[2]);
    let ow = w * factor;
    let mut d = vec![T::zero(); in_shape.iter().product()];
    for (i, px) in grad_out.data().chunks_exact(c).enumerate() {
        let (y, xx) = (i / ow, i % ow);
        for (a, &g) in d[((y / factor) * w + xx / factor) * c..][..c].iter_mut().zip(px) {
            *a += g;
        }
    }
    Tensor::new(in_shape.to_vec(), d).expect("upsample grad")
}

/// Channels of `a` followed by channels of `b`.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ha, wa, ca) = a.dims3("concat_channels")?;
    let (hb, wb, cb) = b.dims3("concat_channels")?;
    if ha != hb {
        return Err(Error::shape("concat_channels", "height", format!("{ha} vs {hb}")));
    }
    if wa != wb {
        return Err(Error::shape("concat_channels", "width", format!("{wa} vs {wb}")));
    }
    let mut out = Vec::with_capacity(a.len() + b.len());
    for (pa, pb) in a.data().chunks_exact(ca).zip(b.data().chunks_exact(cb)) {
        out.extend_from_slice(pa);
        out.extend_from_slice(pb);
    }
    Tensor::new(vec![ha, wa, ca + cb], out)
}

/// Scatters a channel-slice gradient back into a zero tensor of `in_shape`.
pub(crate) fn slice_channels_backward<T: Real>(grad_out: &Tensor<T>, in_shape: &[usize], start: usize) -> Tensor<T> {
    let c = in_shape[2];
    let len = grad_out.shape()[2];
    let mut d = vec![T::zero(); in_shape.iter().product()];
    for (dst, src) in d.chunks_exact_mut(c).zip(grad_out.data().chunks_exact(len)) {
        dst[start..start + len].copy_from_slice(src);
    }
    Tensor::new(in_shape.to_vec(), d).expect("slice grad")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
    }

    /// Six nested loops straight from the definition, same padding, stride 1.
    fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (kh, kw, f) = (k.shape()[0], k.shape()[1], k.shape()[3]);
        let (py, px) = ((kh - 1) / 2, (kw - 1) / 2);
        let mut out = Tensor::zeros([h, w, f]);
        for y in 0..h {
            for xx in 0..w {
                for fi in 0..f {
                    let mut acc = b.data()[fi];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            for ci in 0..c {
                                let iy = y as isize + ky as isize - py as isize;
                                let ix = xx as isize + kx as isize - px as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x.data()[(iy as usize * w + ix as usize) * c + ci];
                                acc += xv * k.data()[((ky * kw + kx) * c + ci) * f + fi];
                            }
                        }
                    }
                    out.data_mut()[(y * w + xx) * f + fi] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_zero_kernel_gives_zero() {
        let x = Tensor::<f32>::full([4, 4, 1], 1.0);
        let k = Tensor::zeros([3, 3, 1, 1]);
        let out = conv2d(&x, &k, &Tensor::zeros([1]), 1, Padding::Same).unwrap();
        assert_eq!(out.shape(), &[4, 4, 1]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_scalar_multiply_add() {
        let x = Tensor::<f32>::new(vec![1, 1, 1], vec![2.0]).unwrap();
        let k = Tensor::new(vec![1, 1, 1, 1], vec![3.0]).unwrap();
        let b = Tensor::new(vec![1], vec![1.0]).unwrap();
        let out = conv2d(&x, &k, &b, 1, Padding::Same).unwrap();
        assert_eq!(out.data(), &[7.0]);
    }

    #[test]
    fn conv_matches_nested_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&[5, 5, 2], &mut rng);
        let k = random(&[3, 3, 2, 3], &mut rng);
        let b = random(&[3], &mut rng);
        let out = conv2d(&x, &k, &b, 1, Padding::Same).unwrap();
        assert!(out.max_abs_diff(&naive_conv(&x, &k, &b)) < 1e-6);
    }

    #[test]
    fn conv_same_preserves_extent_for_odd_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in [1, 3, 5, 7] {
            let x = random(&[6, 9, 2], &mut rng);
            let kern = random(&[k, k, 2, 4], &mut rng);
            let out = conv2d(&x, &kern, &Tensor::zeros([4]), 1, Padding::Same).unwrap();
            assert_eq!(out.shape(), &[6, 9, 4]);
            assert!(out.max_abs_diff(&naive_conv(&x, &kern, &Tensor::zeros([4]))) < 1e-12);
        }
    }

    #[test]
    fn conv_stride_and_valid_extents() {
        let x = Tensor::<f32>::zeros([7, 8, 1]);
        let k = Tensor::zeros([3, 3, 1, 2]);
        let b = Tensor::zeros([2]);
        assert_eq!(conv2d(&x, &k, &b, 2, Padding::Same).unwrap().shape(), &[4, 4, 2]);
        assert_eq!(conv2d(&x, &k, &b, 1, Padding::Valid).unwrap().shape(), &[5, 6, 2]);
        assert_eq!(conv2d(&x, &k, &b, 2, Padding::Valid).unwrap().shape(), &[3, 3, 2]);
    }

    #[test]
    fn conv_rejects_mismatches_naming_axis() {
        let x = Tensor::<f32>::zeros([4, 4, 2]);
        let err = conv2d(&x, &Tensor::zeros([3, 3, 1, 1]), &Tensor::zeros([1]), 1, Padding::Same).unwrap_err();
        assert!(err.to_string().contains("channel"), "{err}");
        let err = conv2d(&x, &Tensor::zeros([2, 2, 2, 1]), &Tensor::zeros([1]), 1, Padding::Same).unwrap_err();
        assert!(err.to_string().contains("height"), "{err}");
        let err = conv2d(&x, &Tensor::zeros([3, 3, 2, 2]), &Tensor::zeros([1]), 1, Padding::Same).unwrap_err();
        assert!(err.to_string().contains("filter"), "{err}");
    }

    #[test]
    fn dense_examples() {
        let x = Tensor::<f32>::new(vec![2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(dense(&x, &w, &Tensor::zeros([2])).unwrap().data(), &[1.0, 2.0]);
        let x = Tensor::<f32>::new(vec![2], vec![1.0, 1.0]).unwrap();
        let w = Tensor::new(vec![2, 1], vec![2.0, 3.0]).unwrap();
        let b = Tensor::new(vec![1], vec![-5.0]).unwrap();
        assert_eq!(dense(&x, &w, &b).unwrap().data(), &[0.0]);
        assert!(dense(&Tensor::<f32>::zeros([3]), &w, &b).is_err());
    }

    #[test]
    fn dense_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[6], &mut rng);
        let w = random(&[6, 4], &mut rng);
        let b = random(&[4], &mut rng);
        let out = dense(&x, &w, &b).unwrap();
        for j in 0..4 {
            let mut acc = b.data()[j];
            for i in 0..6 {
                acc += x.data()[i] * w.data()[i * 4 + j];
            }
            assert!((out.data()[j] - acc).abs() < 1e-6);
        }
    }

    #[test]
    fn downsample_examples() {
        let x = Tensor::<f32>::from_fn([4, 4, 1], |i| (i + 1) as f32);
        let d = downsample_avg(&x, 2).unwrap();
        assert_eq!(d.data(), &[3.5, 5.5, 11.5, 13.5]);
        let c = Tensor::<f32>::full([8, 8, 3], 0.25);
        let d = downsample_avg(&c, 4).unwrap();
        assert_eq!(d.shape(), &[2, 2, 3]);
        assert!(d.data().iter().all(|&v| v == 0.25));
        assert_eq!(downsample_avg(&Tensor::<f32>::zeros([128, 128, 3]), 4).unwrap().shape(), &[32, 32, 3]);
        let err = downsample_avg(&Tensor::<f32>::zeros([6, 8, 1]), 4).unwrap_err();
        assert!(err.to_string().contains("height"));
    }

    #[test]
    fn upsample_then_downsample_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(&[3, 5, 2], &mut rng);
        let up = upsample_nearest(&x, 2).unwrap();
        assert_eq!(up.shape(), &[6, 10, 2]);
        assert_eq!(downsample_avg(&up, 2).unwrap(), x);
        let one = Tensor::<f32>::new(vec![1, 1, 1], vec![5.0]).unwrap();
        assert_eq!(upsample_nearest(&one, 2).unwrap().data(), &[5.0; 4]);
        assert_eq!(upsample_nearest(&Tensor::<f32>::zeros([16, 16, 8]), 2).unwrap().shape(), &[32, 32, 8]);
    }

    #[test]
    fn concat_then_slice_recovers_operands() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&[4, 3, 2], &mut rng);
        let b = random(&[4, 3, 3], &mut rng);
        let ab = concat_channels(&a, &b).unwrap();
        assert_eq!(ab.shape(), &[4, 3, 5]);
        assert_eq!(ab.slice_channels(0, 2).unwrap(), a);
        assert_eq!(ab.slice_channels(2, 3).unwrap(), b);
        let big = concat_channels(&Tensor::<f32>::zeros([32, 32, 16]), &Tensor::zeros([32, 32, 3])).unwrap();
        assert_eq!(big.shape(), &[32, 32, 19]);
        let err = concat_channels(&a, &Tensor::zeros([4, 2, 1])).unwrap_err();
        assert!(err.to_string().contains("width"));
    }
}
