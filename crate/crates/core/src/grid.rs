//! Row-major 2-D arrays for single slices: float images and label masks.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

pub type Image = Grid<f32>;
pub type Mask = Grid<u8>;

impl<T: Copy> Grid<T> {
    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Geometry {
                op: "grid",
                msg: format!("extents must be positive, got {height}x{width}"),
            });
        }
        if data.len() != height * width {
            return Err(Error::Geometry {
                op: "grid",
                msg: format!("{} values for a {height}x{width} grid", data.len()),
            });
        }
        Ok(Grid {
            height,
            width,
            data,
        })
    }

    /// Panics on zero extents; use [`Grid::from_vec`] for untrusted sizes.
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self::from_vec(height, width, vec![value; height * width]).expect("positive extents")
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::from_vec(height, width, data).expect("positive extents")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn at(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    /// Value at signed coordinates, `None` outside the grid.
    pub fn get(&self, row: isize, col: isize) -> Option<T> {
        if row < 0 || col < 0 || row as usize >= self.height || col as usize >= self.width {
            return None;
        }
        Some(self.at(row as usize, col as usize))
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_extent<U>(&self, other: &Grid<U>) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.height, self.width, |r, c| self.at(r, self.width - 1 - c))
    }

    pub fn flip_vertical(&self) -> Self {
        Self::from_fn(self.height, self.width, |r, c| self.at(self.height - 1 - r, c))
    }
}

pub(crate) fn check_same_extent<A, B>(op: &'static str, a: &Grid<A>, b: &Grid<B>) -> Result<()> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::ShapeMismatch {
            op,
            left: format!("{}x{}", a.height, a.width),
            right: format!("{}x{}", b.height, b.width),
        });
    }
    Ok(())
}
