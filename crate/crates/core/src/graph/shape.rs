use std::fmt;

/// Dimensions of a tensor, outermost first. An empty list is a scalar.
///
/// A leading dimension may be [`Shape::DEFERRED`] on placeholders whose batch
/// size is only known when the feed is supplied.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Shape(Vec<usize>);

impl Shape {
    /// Marker for a dimension resolved at feed time.
    pub const DEFERRED: usize = usize::MAX;

    pub fn new(dims: impl Into<Vec<usize>>) -> Self {
        Shape(dims.into())
    }

    pub fn scalar() -> Self {
        Shape(Vec::new())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.0.is_empty()
    }

    pub fn has_deferred(&self) -> bool {
        self.0.contains(&Self::DEFERRED)
    }

    /// Number of elements. Deferred dimensions count as zero here; callers
    /// that care check [`Shape::has_deferred`] first.
    pub fn numel(&self) -> usize {
        if self.has_deferred() {
            return 0;
        }
        self.0.iter().product()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0[axis]
    }

    /// Resolve a possibly negative axis against this rank.
    pub fn axis(&self, axis: isize) -> Option<usize> {
        let r = self.rank() as isize;
        let a = if axis < 0 { axis + r } else { axis };
        (0..r).contains(&a).then_some(a as usize)
    }

    /// Trailing-aligned broadcast of two shapes, `None` when incompatible.
    /// A `DEFERRED` dim yields to any concrete extent other than 1.
    pub fn broadcast(a: &Shape, b: &Shape) -> Option<Shape> {
        let rank = a.rank().max(b.rank());
        let mut out = vec![0; rank];
        for (i, slot) in out.iter_mut().enumerate() {
            let da = if i < rank - a.rank() { 1 } else { a.0[i - (rank - a.rank())] };
            let db = if i < rank - b.rank() { 1 } else { b.0[i - (rank - b.rank())] };
            *slot = if da == db {
                da
            } else if da == 1 || (da == Self::DEFERRED && db != 1) {
                db
            } else if db == 1 || db == Self::DEFERRED {
                da
            } else {
                return None;
            };
        }
        Some(Shape(out))
    }

    /// Whether a concrete shape can be fed where `self` is expected.
    pub fn accepts(&self, concrete: &Shape) -> bool {
        self.rank() == concrete.rank()
            && self
                .0
                .iter()
                .zip(&concrete.0)
                .all(|(&s, &c)| s == Self::DEFERRED || s == c)
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.rank()];
        for i in (0..self.rank().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.0[i + 1];
        }
        strides
    }

    pub fn concat(&self, other: &Shape) -> Shape {
        let mut dims = self.0.clone();
        dims.extend_from_slice(&other.0);
        Shape(dims)
    }

    /// Shape without its first `n` dimensions.
    pub fn drop_leading(&self, n: usize) -> Shape {
        Shape(self.0[n.min(self.rank())..].to_vec())
    }

    /// Shape without its last `n` dimensions.
    pub fn drop_trailing(&self, n: usize) -> Shape {
        Shape(self.0[..self.rank().saturating_sub(n)].to_vec())
    }

    pub fn with_leading(&self, n: usize) -> Shape {
        let mut dims = Vec::with_capacity(self.rank() + 1);
        dims.push(n);
        dims.extend_from_slice(&self.0);
        Shape(dims)
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            if *d == Self::DEFERRED {
                write!(f, "?")?;
            } else {
                write!(f, "{d}")?;
            }
        }
        write!(f, "]")
    }
}

impl From<Vec<usize>> for Shape {
    fn from(v: Vec<usize>) -> Self {
        Shape(v)
    }
}

impl From<&[usize]> for Shape {
    fn from(v: &[usize]) -> Self {
        Shape(v.to_vec())
    }
}

impl<const N: usize> From<[usize; N]> for Shape {
    fn from(v: [usize; N]) -> Self {
        Shape(v.to_vec())
    }
}
