//! Dense row-major `f64` tensors.
//!
//! Every binary operation requires identical shapes; nothing broadcasts. All
//! reductions accumulate sequentially in row-major order starting from `0.0`,
//! so results are bit-reproducible on a given build.

use std::fmt;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

const BLOB_MAGIC: &[u8; 4] = b"CGT1";

/// Deterministic generator used for every seeded draw in the crate: ChaCha8
/// keyed by `seed_from_u64`.
pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Results of [`axpy_norms`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Norms {
    /// Σ (aᵢ + bᵢ)
    pub sum: f64,
    /// Σ (aᵢ − bᵢ)²
    pub diff_l2_sq: f64,
    /// Σ aᵢ·bᵢ
    pub dot: f64,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Shape("empty shape list".into()));
    }
    if let Some(pos) = shape.iter().position(|&d| d == 0) {
        return Err(Error::Shape(format!(
            "extent {pos} of {shape:?} is zero"
        )));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        let len = check_shape(shape)?;
        if !value.is_finite() {
            return Err(Error::NonFinite("fill value".into()));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len = check_shape(shape)?;
        if data.len() != len {
            return Err(Error::Shape(format!(
                "{} elements do not fill shape {shape:?}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor data".into()));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Rank-1 tensor holding `data`.
    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::from_vec(&[n], data)
    }

    /// Elements drawn from N(mean, stddev²) with the [`Rng`] seeded by `seed`.
    pub fn randn(shape: &[usize], mean: f64, stddev: f64, seed: u64) -> Result<Self> {
        let mut rng = rng(seed);
        Self::randn_with(shape, mean, stddev, &mut rng)
    }

    pub fn randn_with(shape: &[usize], mean: f64, stddev: f64, rng: &mut Rng) -> Result<Self> {
        let len = check_shape(shape)?;
        if !(stddev >= 0.0) || !stddev.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "stddev must be finite and >= 0, got {stddev}"
            )));
        }
        if !mean.is_finite() {
            return Err(Error::InvalidArgument(format!("mean must be finite, got {mean}")));
        }
        let normal = Normal::new(mean, stddev)
            .map_err(|e| Error::InvalidArgument(format!("normal distribution: {e}")))?;
        let data = (0..len).map(|_| normal.sample(rng)).collect();
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        self.clone().into_shape(shape)
    }

    pub fn into_shape(self, shape: &[usize]) -> Result<Tensor> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    pub fn flatten(&self) -> Tensor {
        Tensor {
            shape: vec![self.data.len()],
            data: self.data.clone(),
        }
    }

    fn expect_same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "{op}: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Tensor, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_same_shape(other, op)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += alpha * x`
    pub fn axpy_assign(&mut self, alpha: f64, x: &Tensor) -> Result<()> {
        self.expect_same_shape(x, "axpy")?;
        for (dst, &src) in self.data.iter_mut().zip(&x.data) {
            *dst += alpha * src;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.axpy_assign(1.0, other)
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, &v| acc + v)
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Index of the first maximal element.
    pub fn argmax(&self) -> usize {
        argmax(&self.data)
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, &v| acc + v * v)
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.expect_same_shape(other, "dot")?;
        Ok(dot(&self.data, &other.data))
    }

    /// Sub-tensor at `index` along the leading axis.
    pub fn index_axis0(&self, index: usize) -> Result<Tensor> {
        if self.shape.len() < 2 {
            return Err(Error::Shape(format!(
                "index_axis0 needs rank >= 2, got {:?}",
                self.shape
            )));
        }
        if index >= self.shape[0] {
            return Err(Error::InvalidArgument(format!(
                "index {index} out of range for leading extent {}",
                self.shape[0]
            )));
        }
        let stride: usize = self.shape[1..].iter().product();
        Ok(Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[index * stride..(index + 1) * stride].to_vec(),
        })
    }

    /// Matrix product of two rank-2 tensors. Each output element accumulates
    /// its inner-dimension terms in increasing index order.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::Shape(format!(
                "matmul: {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(m, k, n, &self.data, &other.data, &mut out);
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn write_blob<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(BLOB_MAGIC)?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_blob(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.shape.len() + 8 * self.data.len());
        self.write_blob(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_blob<R: Read>(r: &mut R) -> Result<Tensor> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic, "tensor blob")?;
        if &magic != BLOB_MAGIC {
            return Err(Error::format("tensor blob", format!("bad magic {magic:?}")));
        }
        let rank = read_u32(r, "tensor blob")? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::format("tensor blob", format!("unsupported rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(r, "tensor blob")? as usize);
        }
        let len = check_shape(&shape)
            .map_err(|e| Error::format("tensor blob", e.to_string()))?;
        let mut data = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            read_exact(r, &mut buf, "tensor blob")?;
            data.push(f64::from_le_bytes(buf));
        }
        Tensor::from_vec(&shape, data).map_err(|e| Error::format("tensor blob", e.to_string()))
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}[", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ... ({} total)", self.data.len())?;
        }
        write!(f, "]")
    }
}

/// Sum, squared-difference norm and dot product of two equally shaped tensors,
/// each accumulated sequentially in row-major order.
pub fn axpy_norms(a: &Tensor, b: &Tensor) -> Result<Norms> {
    a.expect_same_shape(b, "axpy_norms")?;
    let mut norms = Norms {
        sum: 0.0,
        diff_l2_sq: 0.0,
        dot: 0.0,
    };
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let d = x - y;
        norms.sum += x + y;
        norms.diff_l2_sq += d * d;
        norms.dot += x * y;
    }
    Ok(norms)
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format(what, "truncated"),
        _ => Error::Io(e),
    })
}

pub(crate) fn read_u32<R: Read>(r: &mut R, what: &'static str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, what)?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_f64<R: Read>(r: &mut R, what: &'static str) -> Result<f64> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf, what)?;
    Ok(f64::from_le_bytes(buf))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (&x, &y)| acc + x * y)
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += aip * bv;
            }
        }
    }
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
pub(crate) fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            if api == 0.0 {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += api * bv;
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`, via an explicit transpose of `b`.
pub(crate) fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(b.len(), n * k);
    let mut bt = vec![0.0; k * n];
    for j in 0..n {
        for p in 0..k {
            bt[p * n + j] = b[j * k + p];
        }
    }
    gemm_nn(m, k, n, a, &bt, c);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_has_requested_shape() {
        let t = Tensor::zeros(&[2, 2]).unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.data(), &[0.0; 4]);
        assert_eq!(Tensor::zeros(&[1]).unwrap().data(), &[0.0]);
    }

    #[test]
    fn zeros_rejects_empty_and_zero_extents() {
        assert!(matches!(Tensor::zeros(&[]), Err(Error::Shape(_))));
        assert!(matches!(Tensor::zeros(&[3, 0]), Err(Error::Shape(_))));
    }

    #[test]
    fn randn_zero_variance_is_constant() {
        let t = Tensor::randn(&[4], 0.0, 0.0, 9).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
    }

    #[test]
    fn randn_is_reproducible() {
        let a = Tensor::randn(&[4], 0.0, 1.0, 42).unwrap();
        let b = Tensor::randn(&[4], 0.0, 1.0, 42).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c = Tensor::randn(&[4], 0.0, 1.0, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn randn_sample_mean_is_close_to_zero() {
        let t = Tensor::randn(&[10_000], 0.0, 1.0, 7).unwrap();
        // naive mean, independent of Tensor::mean
        let mut acc = 0.0;
        for v in t.data() {
            acc += v;
        }
        assert!((acc / 10_000.0).abs() < 0.05);
    }

    #[test]
    fn randn_rejects_negative_stddev() {
        assert!(Tensor::randn(&[2], 0.0, -1.0, 0).is_err());
    }

    #[test]
    fn axpy_norms_basic() {
        let a = Tensor::vector(vec![1.0, 0.0]).unwrap();
        let b = Tensor::vector(vec![0.0, 1.0]).unwrap();
        let n = axpy_norms(&a, &b).unwrap();
        assert_eq!(n.diff_l2_sq, 2.0);
        assert_eq!(n.dot, 0.0);
        assert_eq!(n.sum, 2.0);
        assert_eq!(axpy_norms(&a, &a).unwrap().diff_l2_sq, 0.0);
    }

    #[test]
    fn axpy_norms_matches_naive_loop() {
        let a = Tensor::randn(&[1000], 0.0, 1.0, 1).unwrap();
        let b = Tensor::randn(&[1000], 0.5, 2.0, 2).unwrap();
        let mut expected = 0.0;
        for i in 0..1000 {
            let d = a.data()[i] - b.data()[i];
            expected += d * d;
        }
        let got = axpy_norms(&a, &b).unwrap().diff_l2_sq;
        assert!(((got - expected) / expected).abs() <= 1e-12);
    }

    #[test]
    fn shape_mismatch_never_broadcasts() {
        let a = Tensor::zeros(&[2, 3]).unwrap();
        let b = Tensor::zeros(&[3, 2]).unwrap();
        let c = Tensor::zeros(&[3]).unwrap();
        assert!(a.add(&b).is_err());
        assert!(a.sub(&c).is_err());
        assert!(a.mul(&b).is_err());
        assert!(axpy_norms(&a, &b).is_err());
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = Tensor::randn(&[32, 32], 0.0, 1.0, 11).unwrap();
        let b = Tensor::randn(&[32, 32], 0.0, 1.0, 12).unwrap();
        let c = a.matmul(&b).unwrap();
        for i in 0..32 {
            for j in 0..32 {
                let mut acc = 0.0;
                for p in 0..32 {
                    acc += a.data()[i * 32 + p] * b.data()[p * 32 + j];
                }
                assert!((c.data()[i * 32 + j] - acc).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn transposed_gemms_agree_with_plain() {
        let (m, k, n) = (5, 7, 3);
        let a = Tensor::randn(&[m, k], 0.0, 1.0, 3).unwrap();
        let b = Tensor::randn(&[k, n], 0.0, 1.0, 4).unwrap();
        let reference = a.matmul(&b).unwrap();

        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a.data()[i * k + p];
            }
        }
        let mut c = vec![0.0; m * n];
        gemm_tn(m, k, n, &at, b.data(), &mut c);
        for (x, y) in c.iter().zip(reference.data()) {
            assert!((x - y).abs() < 1e-12);
        }

        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b.data()[p * n + j];
            }
        }
        let mut c = vec![0.0; m * n];
        gemm_nt(m, k, n, a.data(), &bt, &mut c);
        for (x, y) in c.iter().zip(reference.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn reductions_and_slicing() {
        let t = Tensor::from_vec(&[2, 3], vec![1.0, 5.0, -2.0, 5.0, 0.0, 3.0]).unwrap();
        assert_eq!(t.sum(), 12.0);
        assert_eq!(t.max(), 5.0);
        assert_eq!(t.argmax(), 1);
        let row = t.index_axis0(1).unwrap();
        assert_eq!(row.shape(), &[3]);
        assert_eq!(row.data(), &[5.0, 0.0, 3.0]);
        assert!(t.index_axis0(2).is_err());
    }

    #[test]
    fn from_vec_rejects_non_finite() {
        assert!(matches!(
            Tensor::from_vec(&[2], vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn blob_layout_is_little_endian() {
        let t = Tensor::from_vec(&[1, 2], vec![1.0, -0.5]).unwrap();
        let blob = t.to_blob();
        assert_eq!(&blob[..4], b"CGT1");
        assert_eq!(&blob[4..8], &2u32.to_le_bytes());
        assert_eq!(&blob[8..12], &1u32.to_le_bytes());
        assert_eq!(&blob[12..16], &2u32.to_le_bytes());
        assert_eq!(&blob[16..24], &1.0f64.to_le_bytes());
        assert_eq!(blob.len(), 32);
        let back = Tensor::read_blob(&mut blob.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn blob_truncation_is_reported() {
        let blob = Tensor::zeros(&[3]).unwrap().to_blob();
        let err = Tensor::read_blob(&mut &blob[..blob.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }
}
