//! 2-D grids (image slices, label maps)

/// Row-major 2-D array. `(x, y)` indexes column `x` of row `y`, with row 0 at
/// the top — the same orientation the slice exporters use.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid2<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Grid2<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid2 {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "grid data length");
        Grid2 {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        let i = self.idx(x, y);
        self.data[i] = value;
    }

    /// Clamped lookup: indices are clamped to the border (replicate padding).
    #[inline]
    pub fn at_clamped(&self, x: isize, y: isize) -> T {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.at(xc, yc)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}
