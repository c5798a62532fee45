//! Dense rank-3 latent tensors stored row-major as (row, col, channel).

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{CutError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub const fn new(h: usize, w: usize, c: usize) -> Self {
        Shape { h, w, c }
    }

    pub const fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    shape: Shape,
    data: Vec<f64>,
}

impl Latent {
    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Latent {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(CutError::Invariant(format!(
                "buffer of {} values cannot hold a {shape} latent",
                data.len()
            )));
        }
        Ok(Latent { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for r in 0..shape.h {
            for col in 0..shape.w {
                for ch in 0..shape.c {
                    data.push(f(r, col, ch));
                }
            }
        }
        Latent { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, row: usize, col: usize) -> usize {
        (row * self.shape.w + col) * self.shape.c
    }

    /// Channel vector at a spatial coordinate.
    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let o = self.offset(row, col);
        &self.data[o..o + self.shape.c]
    }

    #[inline]
    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let o = self.offset(row, col);
        let c = self.shape.c;
        &mut self.data[o..o + c]
    }

    pub fn ensure_same_shape(&self, other: &Latent, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(CutError::Invariant(format!(
                "{what}: shape {} does not match {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Copies the `shape`-sized window whose top-left corner is (`top`, `left`).
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Latent> {
        if top + h > self.shape.h || left + w > self.shape.w {
            return Err(CutError::Invariant(format!(
                "window {h}x{w} at ({top}, {left}) exceeds {} canvas",
                self.shape
            )));
        }
        let c = self.shape.c;
        let mut data = Vec::with_capacity(h * w * c);
        for r in top..top + h {
            let o = self.offset(r, left);
            data.extend_from_slice(&self.data[o..o + w * c]);
        }
        Ok(Latent {
            shape: Shape::new(h, w, c),
            data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Latent {
        Latent {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn to_bits(&self) -> Vec<u64> {
        self.data.iter().map(|v| v.to_bits()).collect()
    }
}

impl Index<(usize, usize, usize)> for Latent {
    type Output = f64;

    #[inline]
    fn index(&self, (r, col, ch): (usize, usize, usize)) -> &f64 {
        &self.data[self.offset(r, col) + ch]
    }
}

impl IndexMut<(usize, usize, usize)> for Latent {
    #[inline]
    fn index_mut(&mut self, (r, col, ch): (usize, usize, usize)) -> &mut f64 {
        let o = self.offset(r, col) + ch;
        &mut self.data[o]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_copies_window() {
        let z = Latent::from_fn(Shape::new(4, 5, 2), |r, c, k| (r * 100 + c * 10 + k) as f64);
        let w = z.crop(1, 2, 2, 3).unwrap();
        assert_eq!(w.shape(), Shape::new(2, 3, 2));
        assert_eq!(w[(0, 0, 0)], 120.0);
        assert_eq!(w[(1, 2, 1)], 241.0);
        assert!(z.crop(3, 0, 2, 1).is_err());
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Latent::from_vec(Shape::new(2, 2, 1), vec![0.0; 3]).is_err());
    }
}
