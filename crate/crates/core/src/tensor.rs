//! Dense third-order tensors.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense real tensor of shape `rows × cols × chans`.
///
/// Storage is row-major over `(i, j, k)`: the tube `(i, j, ·)` is contiguous
/// and row `i` occupies `cols * chans` consecutive values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3<T = f64> {
    rows: usize,
    cols: usize,
    chans: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor3<T> {
    pub fn zeros(rows: usize, cols: usize, chans: usize) -> Self {
        Self {
            rows,
            cols,
            chans,
            data: vec![T::zero(); rows * cols * chans],
        }
    }

    pub fn filled(rows: usize, cols: usize, chans: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            chans,
            data: vec![value; rows * cols * chans],
        }
    }

    /// Wraps `data`, checking its length and that every value is finite.
    pub fn from_vec(rows: usize, cols: usize, chans: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols * chans {
            return Err(Error::shape(
                "Tensor3::from_vec",
                format!("{} values for shape {rows}x{cols}x{chans}", data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        Ok(Self {
            rows,
            cols,
            chans,
            data,
        })
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        chans: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(rows * cols * chans);
        for i in 0..rows {
            for j in 0..cols {
                for k in 0..chans {
                    data.push(f(i, j, k));
                }
            }
        }
        Self {
            rows,
            cols,
            chans,
            data,
        }
    }

    /// Builds a tensor from `chans` row-major `rows × cols` frontal slices.
    pub fn from_slices(rows: usize, cols: usize, slices: &[Vec<T>]) -> Result<Self> {
        let chans = slices.len();
        if slices.iter().any(|s| s.len() != rows * cols) {
            return Err(Error::shape(
                "Tensor3::from_slices",
                format!("every slice must hold {rows}x{cols} values"),
            ));
        }
        Ok(Self::from_fn(rows, cols, chans, |i, j, k| {
            slices[k][i * cols + j]
        }))
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn chans(&self) -> usize {
        self.chans
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.chans)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.rows && j < self.cols && k < self.chans);
        (i * self.cols + j) * self.chans + k
    }

    /// The tube `(i, j, ·)`.
    #[inline]
    pub fn tube(&self, i: usize, j: usize) -> &[T] {
        let start = self.offset(i, j, 0);
        &self.data[start..start + self.chans]
    }

    /// All values of row `i` (`cols * chans` of them).
    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        let w = self.cols * self.chans;
        &self.data[i * w..(i + 1) * w]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let w = self.cols * self.chans;
        &mut self.data[i * w..(i + 1) * w]
    }

    /// Frontal slice `k` as a row-major `rows × cols` matrix.
    pub fn frontal_slice(&self, k: usize) -> Vec<T> {
        assert!(k < self.chans, "slice index out of range");
        self.data
            .iter()
            .skip(k)
            .step_by(self.chans)
            .copied()
            .collect()
    }

    pub fn set_frontal_slice(&mut self, k: usize, slice: &[T]) {
        assert!(k < self.chans, "slice index out of range");
        assert_eq!(slice.len(), self.rows * self.cols, "slice size");
        for (dst, &src) in self.data.iter_mut().skip(k).step_by(self.chans).zip(slice) {
            *dst = src;
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ))
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            chans: self.chans,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other, "Tensor3::zip_map")?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            chans: self.chans,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other, "Tensor3::add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.check_same_shape(other, "Tensor3::axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn sum_squares(&self) -> T {
        self.data.iter().fold(T::zero(), |s, &v| s + v * v)
    }

    pub fn frobenius_norm(&self) -> T {
        self.sum_squares().sqrt()
    }

    /// Largest absolute elementwise difference; `None` when shapes differ.
    pub fn max_abs_diff(&self, other: &Self) -> Option<T> {
        if !self.same_shape(other) {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())),
        )
    }

    /// Concatenation along mode 2 (columns).
    pub fn concat_cols(parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("Tensor3::concat_cols", "no parts"))?;
        let (rows, chans) = (first.rows, first.chans);
        if parts.iter().any(|p| p.rows != rows || p.chans != chans) {
            return Err(Error::shape(
                "Tensor3::concat_cols",
                "parts disagree in rows or channels",
            ));
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols * chans);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Ok(Self {
            rows,
            cols,
            chans,
            data,
        })
    }

    /// Columns `start..start + width` (mode-2 block).
    pub fn col_block(&self, start: usize, width: usize) -> Result<Self> {
        if start + width > self.cols {
            return Err(Error::shape(
                "Tensor3::col_block",
                format!("block {start}+{width} exceeds {} columns", self.cols),
            ));
        }
        let c = self.chans;
        let mut data = Vec::with_capacity(self.rows * width * c);
        for i in 0..self.rows {
            let row = self.row(i);
            data.extend_from_slice(&row[start * c..(start + width) * c]);
        }
        Ok(Self {
            rows: self.rows,
            cols: width,
            chans: c,
            data,
        })
    }

    /// Concatenation along mode 1 (rows).
    pub fn concat_rows(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("Tensor3::concat_rows", "no parts"))?;
        let (cols, chans) = (first.cols, first.chans);
        if parts.iter().any(|p| p.cols != cols || p.chans != chans) {
            return Err(Error::shape(
                "Tensor3::concat_rows",
                "parts disagree in columns or channels",
            ));
        }
        let rows = parts.iter().map(|p| p.rows).sum();
        let mut data = Vec::with_capacity(rows * cols * chans);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            rows,
            cols,
            chans,
            data,
        })
    }

    /// Rows `start..start + count` (mode-1 block).
    pub fn row_block(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.rows {
            return Err(Error::shape(
                "Tensor3::row_block",
                format!("block {start}+{count} exceeds {} rows", self.rows),
            ));
        }
        let w = self.cols * self.chans;
        Ok(Self {
            rows: count,
            cols: self.cols,
            chans: self.chans,
            data: self.data[start * w..(start + count) * w].to_vec(),
        })
    }

    /// Reinterprets the storage under a new shape with the same element count.
    pub fn reshape(self, rows: usize, cols: usize, chans: usize) -> Result<Self> {
        if rows * cols * chans != self.data.len() {
            return Err(Error::shape(
                "Tensor3::reshape",
                format!("{:?} -> {rows}x{cols}x{chans}", self.shape()),
            ));
        }
        Ok(Self {
            rows,
            cols,
            chans,
            data: self.data,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor3<U> {
        Tensor3 {
            rows: self.rows,
            cols: self.cols,
            chans: self.chans,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

impl<T: Scalar> Index<(usize, usize, usize)> for Tensor3<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j, k): (usize, usize, usize)) -> &T {
        &self.data[self.offset(i, j, k)]
    }
}

impl<T: Scalar> IndexMut<(usize, usize, usize)> for Tensor3<T> {
    #[inline]
    fn index_mut(&mut self, (i, j, k): (usize, usize, usize)) -> &mut T {
        let o = self.offset(i, j, k);
        &mut self.data[o]
    }
}
