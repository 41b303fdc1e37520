//! Dense 4-D tensors in batch × channel × height × width layout, plus the
//! channel split/concat, strip-reshape and directional pooling operations the
//! dynamic-convolution modules are built from.
//!
//! Tensors are plain `Vec`-backed values: immutable once an operation has
//! produced them unless you own them exclusively, so sharing read-only across
//! threads is always safe.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::{s, to_f64, Scalar};

/// Shape of a 4-D tensor: `(batch, channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn new(b: usize, c: usize, h: usize, w: usize) -> Self {
        Dims { b, c, h, w }
    }

    /// Number of elements a tensor of this shape holds.
    pub fn count(&self) -> usize {
        self.b * self.c * self.h * self.w
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.b, self.c, self.h, self.w)
    }
}

/// Dense 4-D array, row-major over `(b, c, h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Wrap an existing buffer. The buffer length must match the shape.
    pub fn new(dims: Dims, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.count() {
            return Err(Error::shape(
                "Tensor::new",
                format!("data length {} does not match dims {dims}", data.len()),
            ));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Tensor {
            dims,
            data: vec![T::zero(); dims.count()],
        }
    }

    pub fn full(dims: Dims, v: T) -> Self {
        Tensor {
            dims,
            data: vec![v; dims.count()],
        }
    }

    /// Build a tensor by evaluating `f(b, c, h, w)` at every position.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.count());
        for b in 0..dims.b {
            for c in 0..dims.c {
                for h in 0..dims.h {
                    for w in 0..dims.w {
                        data.push(f(b, c, h, w));
                    }
                }
            }
        }
        Tensor { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Flat index of `(b, c, h, w)`; round-trips with the layout exactly.
    #[inline]
    pub fn idx(&self, b: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert!(b < self.dims.b && c < self.dims.c && h < self.dims.h && w < self.dims.w);
        ((b * self.dims.c + c) * self.dims.h + h) * self.dims.w + w
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.idx(b, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.idx(b, c, h, w);
        self.data[i] = v;
    }

    #[inline]
    pub fn add_at(&mut self, b: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.idx(b, c, h, w);
        self.data[i] += v;
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Tensor<T> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor<T>, mut f: impl FnMut(T, T) -> T) -> Result<Tensor<T>> {
        ensure_same_dims(self, other, "Tensor::zip_map")?;
        Ok(Tensor {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, a: T) -> Tensor<T> {
        self.map(|v| v * a)
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, |a, b| a + b)
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn add_assign_tensor(&mut self, other: &Tensor<T>) -> Result<()> {
        ensure_same_dims(self, other, "Tensor::add_assign_tensor")?;
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        Ok(())
    }

    /// Copy of the channel block `[start, end)`. `start == end` yields a
    /// zero-channel tensor, which concat treats as an empty part.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Tensor<T>> {
        if start > end || end > self.dims.c {
            return Err(Error::shape(
                "Tensor::slice_channels",
                format!("range {start}..{end} out of {} channels", self.dims.c),
            ));
        }
        let out_dims = Dims::new(self.dims.b, end - start, self.dims.h, self.dims.w);
        let plane = self.dims.h * self.dims.w;
        let mut data = Vec::with_capacity(out_dims.count());
        for b in 0..self.dims.b {
            let base = (b * self.dims.c + start) * plane;
            data.extend_from_slice(&self.data[base..base + (end - start) * plane]);
        }
        Tensor::new(out_dims, data)
    }

    /// Copy of batch item `b` as a `(1, C, H, W)` tensor.
    pub fn slice_batch(&self, b: usize) -> Result<Tensor<T>> {
        if b >= self.dims.b {
            return Err(Error::shape(
                "Tensor::slice_batch",
                format!("item {b} out of {} batch entries", self.dims.b),
            ));
        }
        let stride = self.dims.c * self.dims.h * self.dims.w;
        let data = self.data[b * stride..(b + 1) * stride].to_vec();
        Tensor::new(Dims::new(1, self.dims.c, self.dims.h, self.dims.w), data)
    }

    /// Largest absolute entry difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<f64> {
        ensure_same_dims(self, other, "Tensor::max_abs_diff")?;
        let mut m = 0.0f64;
        for (&a, &b) in self.data.iter().zip(other.data.iter()) {
            m = m.max((to_f64(a) - to_f64(b)).abs());
        }
        Ok(m)
    }
}

pub(crate) fn ensure_same_dims<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    context: &'static str,
) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(
            context,
            format!("dims {} vs {}", a.dims(), b.dims()),
        ));
    }
    Ok(())
}

/// A tensor paired with its gradient accumulator.
///
/// Invariant: `value.dims() == grad.dims()` at all times; every constructor
/// and mutator preserves it.
#[derive(Debug, Clone)]
pub struct TensorGrad<T: Scalar> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> TensorGrad<T> {
    /// Wrap a value with a zero-initialized gradient of matching shape.
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.dims());
        TensorGrad { value, grad }
    }

    /// Add `g` into the stored gradient.
    pub fn accumulate(&mut self, g: &Tensor<T>) -> Result<()> {
        ensure_same_dims(&self.value, g, "TensorGrad::accumulate")?;
        self.grad.add_assign_tensor(g)
    }

    pub fn zero_grad(&mut self) {
        for v in self.grad.data_mut() {
            *v = T::zero();
        }
    }
}

/// Deterministic channel partition used by every split in the library: the
/// first k−1 groups take ⌊ratio·C⌋ channels each and the last group takes the
/// remainder, so the widest (identity) branch absorbs any rounding slack.
pub fn channel_partition(channels: usize, ratios: &[f64]) -> Result<Vec<usize>> {
    if ratios.is_empty() {
        return Err(Error::config("channel_partition", "no ratios given"));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::config(
            "channel_partition",
            format!("ratios sum to {sum}, expected 1"),
        ));
    }
    if ratios.iter().any(|&r| r <= 0.0) {
        return Err(Error::config("channel_partition", "ratio must be positive"));
    }
    let mut widths = Vec::with_capacity(ratios.len());
    let mut used = 0usize;
    for &r in &ratios[..ratios.len() - 1] {
        let k = (r * channels as f64).floor() as usize;
        widths.push(k);
        used += k;
    }
    if used > channels {
        return Err(Error::config(
            "channel_partition",
            format!("groups need {used} channels but only {channels} exist"),
        ));
    }
    widths.push(channels - used);
    if widths.iter().any(|&k| k == 0) {
        return Err(Error::config(
            "channel_partition",
            format!("partition {widths:?} of {channels} channels has an empty group"),
        ));
    }
    Ok(widths)
}

/// Split along the channel dimension according to `ratios`.
/// Concatenating the parts back reproduces the input exactly.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, ratios: &[f64]) -> Result<Vec<Tensor<T>>> {
    let widths = channel_partition(x.dims().c, ratios)?;
    let mut parts = Vec::with_capacity(widths.len());
    let mut start = 0;
    for w in widths {
        parts.push(x.slice_channels(start, start + w)?);
        start += w;
    }
    Ok(parts)
}

/// Concatenate along the channel dimension; part k occupies the k-th
/// contiguous channel block. Zero-channel parts are legal and contribute
/// nothing.
pub fn concat_channels<T: Scalar>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::config("concat_channels", "no parts given"))?;
    let (b, h, w) = (first.dims().b, first.dims().h, first.dims().w);
    let mut c_total = 0;
    for p in parts {
        let d = p.dims();
        if (d.b, d.h, d.w) != (b, h, w) {
            return Err(Error::shape(
                "concat_channels",
                format!("part dims {d} do not match leading part {}", first.dims()),
            ));
        }
        c_total += d.c;
    }
    let out_dims = Dims::new(b, c_total, h, w);
    let plane = h * w;
    let mut data = Vec::with_capacity(out_dims.count());
    for bi in 0..b {
        for p in parts {
            let stride = p.dims().c * plane;
            data.extend_from_slice(&p.data()[bi * stride..(bi + 1) * stride]);
        }
    }
    Tensor::new(out_dims, data)
}

/// Small dense 2-D kernel produced by [`reshape_kernel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2d<T: Scalar> {
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries, `rows·cols` of them.
    pub data: Vec<T>,
}

impl<T: Scalar> Kernel2d<T> {
    #[inline]
    pub fn at(&self, r: usize, c: usize) -> T {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    /// Transposed copy. Used to fold height strips so their spatial
    /// orientation survives the reshape.
    pub fn transposed(&self) -> Kernel2d<T> {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                data.push(self.at(r, c));
            }
        }
        Kernel2d {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    pub fn flatten(&self) -> &[T] {
        &self.data
    }
}

/// Fold a flat strip of `rows·cols` values into a 2-D kernel, row-major.
pub fn reshape_kernel<T: Scalar>(v: &[T], rows: usize, cols: usize) -> Result<Kernel2d<T>> {
    if rows * cols != v.len() {
        return Err(Error::shape(
            "reshape_kernel",
            format!("{} values cannot fill {rows}×{cols}", v.len()),
        ));
    }
    Ok(Kernel2d {
        rows,
        cols,
        data: v.to_vec(),
    })
}

/// Average over the height dimension: `(B, C, H, W) → (B, C, 1, W)`.
pub fn gap_height<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let d = x.dims();
    if d.h == 0 {
        return Err(Error::shape("gap_height", "empty height dimension"));
    }
    let inv = s::<T>(1.0) / s::<T>(d.h as f64);
    let mut out = Tensor::zeros(Dims::new(d.b, d.c, 1, d.w));
    for b in 0..d.b {
        for c in 0..d.c {
            for w in 0..d.w {
                let mut acc = T::zero();
                for h in 0..d.h {
                    acc += x.get(b, c, h, w);
                }
                out.set(b, c, 0, w, acc * inv);
            }
        }
    }
    Ok(out)
}

/// Average over the width dimension: `(B, C, H, W) → (B, C, H, 1)`.
pub fn gap_width<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let d = x.dims();
    if d.w == 0 {
        return Err(Error::shape("gap_width", "empty width dimension"));
    }
    let inv = s::<T>(1.0) / s::<T>(d.w as f64);
    let mut out = Tensor::zeros(Dims::new(d.b, d.c, d.h, 1));
    for b in 0..d.b {
        for c in 0..d.c {
            for h in 0..d.h {
                let mut acc = T::zero();
                for w in 0..d.w {
                    acc += x.get(b, c, h, w);
                }
                out.set(b, c, h, 0, acc * inv);
            }
        }
    }
    Ok(out)
}

// --- .t4 fixture/dump format -------------------------------------------------
//
// 16-byte header of four little-endian u32 dims (B, C, H, W), followed by
// B·C·H·W little-endian f64 values in row-major (b, c, h, w) order.

/// Write a tensor in the `.t4` format (always stored as f64 on disk).
pub fn save_t4<T: Scalar>(x: &Tensor<T>, path: &Path) -> Result<()> {
    let d = x.dims();
    for (axis, v) in [("b", d.b), ("c", d.c), ("h", d.h), ("w", d.w)] {
        if v > u32::MAX as usize {
            return Err(Error::shape(
                "save_t4",
                format!("dim {axis}={v} exceeds the u32 header"),
            ));
        }
    }
    let mut buf = Vec::with_capacity(16 + 8 * x.data().len());
    for v in [d.b, d.c, d.h, d.w] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &v in x.data() {
        buf.extend_from_slice(&to_f64(v).to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Read a `.t4` tensor back; errors on truncated or oversized files.
pub fn load_t4<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    if buf.len() < 16 {
        return Err(Error::io(path, "file shorter than the 16-byte header"));
    }
    let dim = |i: usize| {
        u32::from_le_bytes([buf[4 * i], buf[4 * i + 1], buf[4 * i + 2], buf[4 * i + 3]]) as usize
    };
    let dims = Dims::new(dim(0), dim(1), dim(2), dim(3));
    let expected = 16 + 8 * dims.count();
    if buf.len() != expected {
        return Err(Error::io(
            path,
            format!("expected {expected} bytes for dims {dims}, found {}", buf.len()),
        ));
    }
    let mut data = Vec::with_capacity(dims.count());
    for i in 0..dims.count() {
        let at = 16 + 8 * i;
        let mut raw = [0u8; 8];
        raw.copy_from_slice(&buf[at..at + 8]);
        data.push(s::<T>(f64::from_le_bytes(raw)));
    }
    Tensor::new(dims, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::fill_tensor;

    // Averages over H / W of the seed-99 (1,2,4,4) fixture, computed with an
    // independent reference implementation.
    const GAP_H_EXPECTED: [f64; 8] = [
        -3.95478291034170870e-01,
        -3.68385290448039582e-01,
        7.38450110817870375e-02,
        1.65012615105978200e-01,
        4.78328483383696434e-01,
        -2.52761158367772132e-01,
        -3.54637782472992213e-01,
        -1.53409144086075422e-01,
    ];
    const GAP_W_EXPECTED: [f64; 8] = [
        -3.84866323264962451e-01,
        -9.84455205389223043e-02,
        1.79184293188374755e-01,
        -2.20878404678935214e-01,
        -4.51376022421362266e-01,
        -3.57175744238598880e-01,
        1.45004716319236393e-02,
        5.11571693484894174e-01,
    ];

    fn seq_tensor(dims: Dims) -> Tensor<f64> {
        let mut i = 0.0;
        Tensor::from_fn(dims, |_, _, _, _| {
            i += 1.0;
            i
        })
    }

    #[test]
    fn indexing_round_trips() {
        let t = seq_tensor(Dims::new(2, 3, 4, 5));
        let mut flat = 0usize;
        for b in 0..2 {
            for c in 0..3 {
                for h in 0..4 {
                    for w in 0..5 {
                        assert_eq!(t.idx(b, c, h, w), flat);
                        assert_eq!(t.get(b, c, h, w), (flat + 1) as f64);
                        flat += 1;
                    }
                }
            }
        }
    }

    #[test]
    fn new_rejects_wrong_length() {
        assert!(matches!(
            Tensor::new(Dims::new(1, 1, 2, 2), vec![0.0; 3]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn split_four_equal_groups() {
        let x = fill_tensor::<f64>(1, Dims::new(2, 64, 3, 3));
        let parts = split_channels(&x, &[0.25, 0.25, 0.25, 0.25]).unwrap();
        assert_eq!(parts.len(), 4);
        for p in &parts {
            assert_eq!(p.dims().c, 16);
        }
    }

    #[test]
    fn split_identity_ratio_returns_same_tensor() {
        let x = fill_tensor::<f64>(2, Dims::new(1, 8, 2, 2));
        let parts = split_channels(&x, &[1.0]).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0], x);
    }

    #[test]
    fn split_concat_round_trip() {
        let x = fill_tensor::<f64>(3, Dims::new(2, 64, 4, 4));
        let back = concat_channels(&split_channels(&x, &[0.5, 0.5]).unwrap()).unwrap();
        assert_eq!(back, x);
        let back = concat_channels(&split_channels(&x, &[0.25, 0.75]).unwrap()).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn split_rejects_bad_ratios() {
        let x = Tensor::<f64>::zeros(Dims::new(1, 8, 2, 2));
        assert!(matches!(
            split_channels(&x, &[0.5, 0.4]),
            Err(Error::InvalidConfig { .. })
        ));
        // 0.05·8 floors to zero channels
        assert!(matches!(
            split_channels(&x, &[0.05, 0.95]),
            Err(Error::InvalidConfig { .. })
        ));
    }

    #[test]
    fn partition_gives_remainder_to_last_group() {
        assert_eq!(channel_partition(10, &[0.25, 0.25, 0.25, 0.25]).unwrap(), vec![2, 2, 2, 4]);
        assert_eq!(channel_partition(512, &[0.3, 0.3, 0.3, 0.1]).unwrap(), vec![153, 153, 153, 53]);
    }

    #[test]
    fn concat_four_blocks_of_16() {
        let parts: Vec<Tensor<f64>> = (0..4)
            .map(|i| fill_tensor(10 + i, Dims::new(2, 16, 3, 3)))
            .collect();
        let cat = concat_channels(&parts).unwrap();
        assert_eq!(cat.dims(), Dims::new(2, 64, 3, 3));
        // block k occupies channels [16k, 16k+16)
        for (k, p) in parts.iter().enumerate() {
            assert_eq!(cat.slice_channels(16 * k, 16 * k + 16).unwrap(), *p);
        }
    }

    #[test]
    fn concat_single_part_is_bit_identical() {
        let x = fill_tensor::<f64>(7, Dims::new(1, 5, 2, 3));
        let cat = concat_channels(std::slice::from_ref(&x)).unwrap();
        for (a, b) in cat.data().iter().zip(x.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn concat_rejects_mismatched_spatial_dims() {
        let a = Tensor::<f64>::zeros(Dims::new(1, 2, 3, 3));
        let b = Tensor::<f64>::zeros(Dims::new(1, 2, 4, 3));
        assert!(matches!(
            concat_channels(&[a, b]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn concat_accepts_zero_channel_parts() {
        let x = fill_tensor::<f64>(4, Dims::new(2, 6, 2, 2));
        let empty = x.slice_channels(6, 6).unwrap();
        assert_eq!(empty.dims().c, 0);
        let cat = concat_channels(&[x.clone(), empty]).unwrap();
        assert_eq!(cat, x);
    }

    #[test]
    fn reshape_kernel_row_major() {
        let v: Vec<f64> = (1..=9).map(|i| i as f64).collect();
        let k = reshape_kernel(&v, 3, 3).unwrap();
        assert_eq!(k.at(0, 0), 1.0);
        assert_eq!(k.at(0, 2), 3.0);
        assert_eq!(k.at(1, 0), 4.0);
        assert_eq!(k.at(2, 2), 9.0);
    }

    #[test]
    fn reshape_kernel_zeros_and_errors() {
        let z = reshape_kernel(&[0.0f64; 9], 3, 3).unwrap();
        assert!(z.data.iter().all(|&v| v == 0.0));
        assert!(matches!(
            reshape_kernel(&[0.0f64; 8], 3, 3),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn reshape_kernel_round_trips_and_preserves_sum() {
        let v = fill_tensor::<f64>(11, Dims::new(1, 1, 1, 9)).into_data();
        let k = reshape_kernel(&v, 3, 3).unwrap();
        assert_eq!(k.flatten(), &v[..]);
        let s1: f64 = v.iter().sum();
        let s2: f64 = k.data.iter().sum();
        assert_eq!(s1, s2);
    }

    #[test]
    fn transpose_swaps_axes() {
        let v: Vec<f64> = (1..=6).map(|i| i as f64).collect();
        let k = reshape_kernel(&v, 2, 3).unwrap();
        let t = k.transposed();
        assert_eq!((t.rows, t.cols), (3, 2));
        for r in 0..2 {
            for c in 0..3 {
                assert_eq!(k.at(r, c), t.at(c, r));
            }
        }
    }

    #[test]
    fn gap_on_constant_tensor_is_constant() {
        let x = Tensor::full(Dims::new(2, 3, 4, 5), 5.0f64);
        let gh = gap_height(&x).unwrap();
        assert_eq!(gh.dims(), Dims::new(2, 3, 1, 5));
        assert!(gh.data().iter().all(|&v| v == 5.0));
        let gw = gap_width(&x).unwrap();
        assert_eq!(gw.dims(), Dims::new(2, 3, 4, 1));
        assert!(gw.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn gap_height_averages_columns() {
        // H=2 with column values {1, 3} → 2 everywhere
        let x = Tensor::from_fn(Dims::new(1, 1, 2, 4), |_, _, h, _| if h == 0 { 1.0 } else { 3.0 });
        let g = gap_height(&x).unwrap();
        assert!(g.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn gap_matches_brute_force_means() {
        let x = fill_tensor::<f64>(99, Dims::new(1, 2, 4, 4));
        let gh = gap_height(&x).unwrap();
        let gw = gap_width(&x).unwrap();
        // independent loop oracle
        for b in 0..1 {
            for c in 0..2 {
                for w in 0..4 {
                    let m: f64 = (0..4).map(|h| x.get(b, c, h, w)).sum::<f64>() / 4.0;
                    assert!((gh.get(b, c, 0, w) - m).abs() < 1e-15);
                }
                for h in 0..4 {
                    let m: f64 = (0..4).map(|w| x.get(b, c, h, w)).sum::<f64>() / 4.0;
                    assert!((gw.get(b, c, h, 0) - m).abs() < 1e-15);
                }
            }
        }
        // frozen cross-checked values
        for (i, &e) in GAP_H_EXPECTED.iter().enumerate() {
            assert!((gh.data()[i] - e).abs() < 1e-15, "gap_height[{i}]");
        }
        for (i, &e) in GAP_W_EXPECTED.iter().enumerate() {
            assert!((gw.data()[i] - e).abs() < 1e-15, "gap_width[{i}]");
        }
    }

    #[test]
    fn gap_rejects_empty_spatial_dim() {
        let x = Tensor::<f64>::zeros(Dims::new(1, 2, 0, 4));
        assert!(matches!(gap_height(&x), Err(Error::Shape { .. })));
        let x = Tensor::<f64>::zeros(Dims::new(1, 2, 4, 0));
        assert!(matches!(gap_width(&x), Err(Error::Shape { .. })));
    }

    #[test]
    fn gap_linearity() {
        let x = fill_tensor::<f64>(21, Dims::new(2, 3, 5, 4));
        let y = fill_tensor::<f64>(22, Dims::new(2, 3, 5, 4));
        let combo = x.scale(1.7).add(&y.scale(-0.3)).unwrap();
        let lhs = gap_height(&combo).unwrap();
        let rhs = gap_height(&x)
            .unwrap()
            .scale(1.7)
            .add(&gap_height(&y).unwrap().scale(-0.3))
            .unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
    }

    #[test]
    fn tensor_grad_keeps_dims_and_accumulates() {
        let v = fill_tensor::<f64>(31, Dims::new(1, 2, 2, 2));
        let mut tg = TensorGrad::new(v.clone());
        assert_eq!(tg.value.dims(), tg.grad.dims());
        assert!(tg.grad.data().iter().all(|&g| g == 0.0));

        let g = fill_tensor::<f64>(32, Dims::new(1, 2, 2, 2));
        tg.accumulate(&g).unwrap();
        tg.accumulate(&g).unwrap();
        for (acc, &one) in tg.grad.data().iter().zip(g.data()) {
            assert!((acc - 2.0 * one).abs() < 1e-15);
        }
        tg.zero_grad();
        assert!(tg.grad.data().iter().all(|&g| g == 0.0));

        let bad = Tensor::<f64>::zeros(Dims::new(1, 2, 2, 3));
        assert!(tg.accumulate(&bad).is_err());
        assert_eq!(tg.value.dims(), tg.grad.dims());
    }

    #[test]
    fn t4_round_trip_and_header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.t4");
        let x = fill_tensor::<f64>(5, Dims::new(2, 3, 4, 5));
        save_t4(&x, &path).unwrap();

        let raw = std::fs::read(&path).unwrap();
        assert_eq!(raw.len(), 16 + 8 * x.data().len());
        assert_eq!(&raw[0..4], &2u32.to_le_bytes());
        assert_eq!(&raw[4..8], &3u32.to_le_bytes());
        assert_eq!(&raw[8..12], &4u32.to_le_bytes());
        assert_eq!(&raw[12..16], &5u32.to_le_bytes());
        assert_eq!(&raw[16..24], &x.data()[0].to_le_bytes());

        let back: Tensor<f64> = load_t4(&path).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn t4_rejects_truncated_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.t4");
        std::fs::write(&path, [1u8, 2, 3]).unwrap();
        assert!(matches!(load_t4::<f64>(&path), Err(Error::Io { .. })));
    }
}
