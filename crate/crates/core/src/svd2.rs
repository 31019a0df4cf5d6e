//! Closed-form signed SVD of 2x2 matrices.
//!
//! A 2x2 matrix splits into a conformal part `E*I + H*J` and an
//! anti-conformal part `F*K1 + G*K2`. With `Q = |(E, H)|` and `R = |(F, G)|`
//! the singular values are `Q + R` and `Q - R`, and both singular-vector
//! frames are pure rotations. The second singular value carries the sign of
//! the determinant.

use crate::Mat2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignedSvd {
    /// Left rotation angle.
    pub phi: f64,
    /// Angle of `V^T`.
    pub psi: f64,
    pub sigma1: f64,
    /// Negative when the matrix reverses orientation.
    pub sigma2: f64,
}

#[inline]
pub fn rotation(theta: f64) -> Mat2 {
    let (s, c) = theta.sin_cos();
    Mat2::new(c, -s, s, c)
}

impl SignedSvd {
    pub fn new(m: &Mat2) -> Self {
        let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
        let e = 0.5 * (a + d);
        let f = 0.5 * (a - d);
        let g = 0.5 * (c + b);
        let h = 0.5 * (c - b);
        let q = e.hypot(h);
        let r = f.hypot(g);
        let a1 = g.atan2(f);
        let a2 = h.atan2(e);
        SignedSvd {
            phi: 0.5 * (a2 + a1),
            psi: 0.5 * (a2 - a1),
            sigma1: q + r,
            sigma2: q - r,
        }
    }

    pub fn u(&self) -> Mat2 {
        rotation(self.phi)
    }

    pub fn vt(&self) -> Mat2 {
        rotation(self.psi)
    }

    /// `U V^T`, the rotation closest to the decomposed matrix.
    pub fn rotation(&self) -> Mat2 {
        rotation(self.phi + self.psi)
    }

    /// `U diag(s1, s2) V^T`.
    pub fn recompose(&self, s1: f64, s2: f64) -> Mat2 {
        self.u() * Mat2::new(s1, 0.0, 0.0, s2) * self.vt()
    }
}
