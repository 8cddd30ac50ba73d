use nalgebra::DVector;

use crate::scalar::Real;

/// Which safety constraint produced a half-space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintKind {
    Sca,
    Eca,
}

/// Affine acceleration constraint `g·q̈ + b ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace<T: Real = f64> {
    pub normal: DVector<T>,
    pub offset: T,
    pub kind: ConstraintKind,
}

impl<T: Real> HalfSpace<T> {
    pub fn new(normal: DVector<T>, offset: T, kind: ConstraintKind) -> Self {
        Self {
            normal,
            offset,
            kind,
        }
    }

    pub fn value(&self, qdd: &DVector<T>) -> T {
        self.normal.dot(qdd) + self.offset
    }

    pub fn is_finite(&self) -> bool {
        self.offset.is_finite() && self.normal.iter().all(|v| v.is_finite())
    }

    /// Scales so that `‖g‖ = 1`; a zero normal is returned unchanged.
    pub fn normalized(&self) -> Self {
        let norm = self.normal.norm();
        if norm > T::zero() {
            Self {
                normal: &self.normal / norm,
                offset: self.offset / norm,
                kind: self.kind,
            }
        } else {
            self.clone()
        }
    }
}
