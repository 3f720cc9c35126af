use std::fmt;

/// Dense row-major shape of rank 0 through 4.
///
/// Rank 0 is a scalar with one element. Unused trailing dims are kept at 1 so
/// stride math can always treat the shape as padded to rank 4.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    dims: [usize; 4],
    ndim: u8,
}

impl Shape {
    pub fn scalar() -> Self {
        Shape { dims: [1, 1, 1, 1], ndim: 0 }
    }

    pub fn d1(a: usize) -> Self {
        Shape { dims: [a, 1, 1, 1], ndim: 1 }
    }

    pub fn d2(a: usize, b: usize) -> Self {
        Shape { dims: [a, b, 1, 1], ndim: 2 }
    }

    pub fn d3(a: usize, b: usize, c: usize) -> Self {
        Shape { dims: [a, b, c, 1], ndim: 3 }
    }

    pub fn d4(a: usize, b: usize, c: usize, d: usize) -> Self {
        Shape { dims: [a, b, c, d], ndim: 4 }
    }

    /// Builds a shape from a slice of up to four extents.
    pub fn from_dims(dims: &[usize]) -> Option<Self> {
        if dims.len() > 4 {
            return None;
        }
        let mut out = [1usize; 4];
        out[..dims.len()].copy_from_slice(dims);
        Some(Shape { dims: out, ndim: dims.len() as u8 })
    }

    pub fn ndim(&self) -> usize {
        self.ndim as usize
    }

    /// The logical extents (length equals `ndim`).
    pub fn dims(&self) -> &[usize] {
        &self.dims[..self.ndim as usize]
    }

    /// Extents padded with trailing 1s to rank 4.
    pub fn padded(&self) -> [usize; 4] {
        self.dims
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.dims[axis]
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    /// Row-major strides padded to rank 4 (stride of a size-1 dim is still
    /// well defined and unused).
    pub fn strides(&self) -> [usize; 4] {
        let d = self.dims;
        [d[1] * d[2] * d[3], d[2] * d[3], d[3], 1]
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.dims().iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}
