use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `y = matrix * x + translation`, mapping fixed physical points (mm) to
/// moving physical points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub matrix: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineTransform {
    pub fn identity() -> Self {
        Self {
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn new(matrix: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        let t = Self { matrix, translation };
        if !matrix.iter().flatten().chain(&translation).all(|v| v.is_finite()) {
            return Err(Error::param("transform", "non-finite entry"));
        }
        if t.determinant() == 0.0 {
            return Err(Error::param("transform", "matrix is singular"));
        }
        Ok(t)
    }

    /// Transform `y = matrix (x - center) + center + offset`.
    pub fn about_center(matrix: [[f64; 3]; 3], center: [f64; 3], offset: [f64; 3]) -> Self {
        let mc = mat_vec(&matrix, &center);
        Self {
            matrix,
            translation: [0, 1, 2].map(|i| center[i] - mc[i] + offset[i]),
        }
    }

    /// Offset term of the centred form; inverse of [`Self::about_center`].
    pub fn offset_about(&self, center: [f64; 3]) -> [f64; 3] {
        let mc = mat_vec(&self.matrix, &center);
        [0, 1, 2].map(|i| self.translation[i] - center[i] + mc[i])
    }

    pub fn translation_only(t: [f64; 3]) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    #[inline]
    pub fn apply(&self, x: [f64; 3]) -> [f64; 3] {
        let m = mat_vec(&self.matrix, &x);
        [0, 1, 2].map(|i| m[i] + self.translation[i])
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.matrix;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Largest deviation of `matrixᵀ matrix` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let m = &self.matrix;
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// Rotation `Rz(az) Ry(ay) Rx(ax)`, angles in degrees.
    pub fn euler_matrix(degrees: [f64; 3]) -> [[f64; 3]; 3] {
        let [ax, ay, az] = degrees.map(f64::to_radians);
        let (sx, cx) = ax.sin_cos();
        let (sy, cy) = ay.sin_cos();
        let (sz, cz) = az.sin_cos();
        [
            [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
            [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
            [-sy, cy * sx, cy * cx],
        ]
    }

    /// Rotation angle about z in degrees, for transforms that are close to a z-rotation.
    pub fn z_rotation_degrees(&self) -> f64 {
        self.matrix[1][0].atan2(self.matrix[0][0]).to_degrees()
    }

    /// Max-norm distance between matrices and translations (mm).
    pub fn distance(&self, other: &AffineTransform) -> (f64, f64) {
        let dm = self
            .matrix
            .iter()
            .flatten()
            .zip(other.matrix.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let dt = self
            .translation
            .iter()
            .zip(&other.translation)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        (dm, dt)
    }
}

#[inline]
pub(crate) fn mat_vec(m: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
}
