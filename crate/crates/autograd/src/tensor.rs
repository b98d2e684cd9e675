use std::fmt;

use crate::Real;

/// Dense NCHW tensor. Vectors are stored as `[n, d, 1, 1]`, scalars as `[1, 1, 1, 1]`.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::full(shape, T::ZERO)
    }

    pub fn full(shape: [usize; 4], v: T) -> Self {
        Tensor {
            shape,
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn scalar(v: T) -> Self {
        Self::full([1, 1, 1, 1], v)
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} elements",
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for n in 0..shape[0] {
            for c in 0..shape[1] {
                for y in 0..shape[2] {
                    for x in 0..shape[3] {
                        data.push(f([n, c, y, x]));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
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
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Spatial plane size `h * w`.
    #[inline]
    pub fn plane(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    #[inline]
    pub fn index(&self, [n, c, y, x]: [usize; 4]) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, idx: [usize; 4]) -> T {
        self.data[self.index(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: [usize; 4], v: T) {
        let i = self.index(idx);
        self.data[i] = v;
    }

    /// Contiguous `[c, h, w]` slab of one batch item.
    pub fn item(&self, n: usize) -> &[T] {
        let sz = self.shape[1] * self.plane();
        &self.data[n * sz..(n + 1) * sz]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let sz = self.shape[1] * self.plane();
        &mut self.data[n * sz..(n + 1) * sz]
    }

    pub fn reshape(mut self, shape: [usize; 4]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape;
        self
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, other.shape, "shape mismatch");
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Channels `[start, start + len)` of every batch item.
    pub fn slice_channels(&self, start: usize, len: usize) -> Self {
        let [n, c, h, w] = self.shape;
        assert!(start + len <= c, "channel slice out of range");
        let p = h * w;
        let mut data = Vec::with_capacity(n * len * p);
        for b in 0..n {
            let base = (b * c + start) * p;
            data.extend_from_slice(&self.data[base..base + len * p]);
        }
        Tensor {
            shape: [n, len, h, w],
            data,
        }
    }

    /// Concatenates along the channel axis.
    pub fn cat_channels(parts: &[&Self]) -> Self {
        assert!(!parts.is_empty());
        let [n, _, h, w] = parts[0].shape;
        for t in parts {
            assert!(
                t.shape[0] == n && t.shape[2] == h && t.shape[3] == w,
                "concat shape mismatch: {:?} vs {:?}",
                t.shape,
                parts[0].shape
            );
        }
        let c: usize = parts.iter().map(|t| t.shape[1]).sum();
        let mut data = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            for t in parts {
                data.extend_from_slice(t.item(b));
            }
        }
        Tensor {
            shape: [n, c, h, w],
            data,
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor<{}>{:?}", std::any::type_name::<T>(), self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slice_and_cat_are_inverse() {
        let t = Tensor::<f32>::from_fn([2, 5, 3, 2], |[n, c, y, x]| {
            (n * 1000 + c * 100 + y * 10 + x) as f32
        });
        let a = t.slice_channels(0, 2);
        let b = t.slice_channels(2, 3);
        assert_eq!(a.at([1, 1, 2, 1]), 1121.0);
        assert_eq!(Tensor::cat_channels(&[&a, &b]), t);
    }

    #[test]
    fn index_is_row_major_nchw() {
        let t = Tensor::<f64>::from_fn([2, 3, 4, 5], |[n, c, y, x]| {
            (((n * 3 + c) * 4 + y) * 5 + x) as f64
        });
        for (i, v) in t.data().iter().enumerate() {
            assert_eq!(*v as usize, i);
        }
    }
}
