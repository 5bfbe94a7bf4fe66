//! Rank-4 `f64` arrays in NCHW layout.

use crate::error::{Error, Result};

/// Dense (batch, channels, height, width) array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Tensor4 {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(Error::shape(
                "tensor",
                format!("dims {dims:?} need {expected} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor4 { dims, data })
    }

    pub fn filled(dims: [usize; 4], value: f64) -> Self {
        Tensor4 {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    #[inline]
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }
    #[inline]
    pub fn batch(&self) -> usize {
        self.dims[0]
    }
    #[inline]
    pub fn channels(&self) -> usize {
        self.dims[1]
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.dims[2]
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.dims[3]
    }

    /// Elements in one (h, w) plane.
    #[inline]
    pub fn plane(&self) -> usize {
        self.dims[2] * self.dims[3]
    }

    /// Elements in one sample.
    #[inline]
    pub fn sample_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + h) * self.dims[3] + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.index(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: f64) {
        let i = self.index(n, c, h, w);
        self.data[i] = v;
    }

    pub fn sample(&self, n: usize) -> &[f64] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.sample_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    /// One (h, w) plane of sample `n`, channel `c`.
    pub fn channel(&self, n: usize, c: usize) -> &[f64] {
        let p = self.plane();
        let start = (n * self.dims[1] + c) * p;
        &self.data[start..start + p]
    }

    pub fn channel_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let p = self.plane();
        let start = (n * self.dims[1] + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor4) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(
                "tensor",
                format!("cannot add {:?} to {:?}", other.dims, self.dims),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Stack single-sample tensors along the batch axis.
    pub fn stack(samples: &[Tensor4]) -> Result<Tensor4> {
        let first = samples
            .first()
            .ok_or_else(|| Error::shape("tensor", "cannot stack zero samples"))?;
        let [_, c, h, w] = first.dims;
        let mut data = Vec::with_capacity(samples.len() * c * h * w);
        let mut n = 0;
        for s in samples {
            if s.dims[1..] != first.dims[1..] {
                return Err(Error::shape(
                    "tensor",
                    format!("stack mismatch {:?} vs {:?}", s.dims, first.dims),
                ));
            }
            n += s.dims[0];
            data.extend_from_slice(&s.data);
        }
        Ok(Tensor4 {
            dims: [n, c, h, w],
            data,
        })
    }

    /// Copy out samples `range` as a new tensor.
    pub fn slice_batch(&self, start: usize, end: usize) -> Tensor4 {
        let len = self.sample_len();
        Tensor4 {
            dims: [end - start, self.dims[1], self.dims[2], self.dims[3]],
            data: self.data[start * len..end * len].to_vec(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor4) -> f64 {
        assert_eq!(self.dims, other.dims, "max_abs_diff on mismatched dims");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor4::from_vec([1, 2, 2, 2], vec![0.0; 8]).is_ok());
        assert!(Tensor4::from_vec([1, 2, 2, 2], vec![0.0; 7]).is_err());
    }

    #[test]
    fn row_major_indexing() {
        let t = Tensor4::from_vec([2, 2, 2, 3], (0..24).map(f64::from).collect()).unwrap();
        assert_eq!(t.at(0, 0, 0, 1), 1.0);
        assert_eq!(t.at(0, 0, 1, 0), 3.0);
        assert_eq!(t.at(0, 1, 0, 0), 6.0);
        assert_eq!(t.at(1, 0, 0, 0), 12.0);
        assert_eq!(t.channel(1, 1), &[18.0, 19.0, 20.0, 21.0, 22.0, 23.0]);
    }

    #[test]
    fn stack_and_slice() {
        let a = Tensor4::filled([1, 1, 2, 2], 1.0);
        let b = Tensor4::filled([1, 1, 2, 2], 2.0);
        let s = Tensor4::stack(&[a.clone(), b]).unwrap();
        assert_eq!(s.dims(), [2, 1, 2, 2]);
        assert_eq!(s.slice_batch(0, 1), a);
    }
}
