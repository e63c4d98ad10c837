//! Primitives for the rotation group SO(3).
//!
//! Rotations are 3x3 orthonormal matrices with determinant +1. Tangent
//! vectors live in R^3 and map to skew-symmetric matrices through the hat
//! operator. The exponential map uses the Rodrigues closed form with a
//! second-order Taylor branch below `TAYLOR_SWITCH`, and the logarithm is
//! restricted to rotation angles below pi (near-antipodal inputs are an
//! error, not a best-effort value).

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use crate::error::{Error, Result};

/// Element of R^3 identified with so(3) via the hat operator.
pub type TangentVector = Vector3<f64>;

/// Angle threshold below which exp/log coefficients switch to their
/// Taylor expansions to avoid 0/0 cancellation.
pub const TAYLOR_SWITCH: f64 = 1e-4;

/// Margin around pi inside which the logarithm refuses to evaluate.
pub const ANTIPODAL_MARGIN: f64 = 1e-6;

/// Frobenius tolerance for the rotation invariants.
pub const ROTATION_TOL: f64 = 1e-9;

/// A rotation matrix; `m^T m = I` and `det m = 1` within [`ROTATION_TOL`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validates the group invariants before wrapping.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let ortho = (m.transpose() * m - Matrix3::identity()).norm();
        if ortho > ROTATION_TOL {
            return Err(Error::NotRotation(format!(
                "orthonormality residual {ortho:.3e}"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::NotRotation(format!("determinant {det:.12}")));
        }
        Ok(Rotation(m))
    }

    /// Wraps without checking; callers must uphold the invariants.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Inverse rotation (the transpose).
    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// Frobenius norm of `m^T m - I`.
    pub fn orthonormality_residual(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).norm()
    }

    /// Rotation angle in [0, pi].
    pub fn angle(&self) -> f64 {
        let c = ((self.0.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }

    /// Scalar-first unit quaternion `[w, x, y, z]` with `w >= 0`.
    ///
    /// Representation conversion for file I/O and sampling only; this crate
    /// deliberately exposes no quaternion algebra.
    pub fn to_quaternion_wxyz(&self) -> [f64; 4] {
        let m = &self.0;
        let t = m.trace();
        // Shepperd's method: branch on the largest of w^2, x^2, y^2, z^2.
        let (w, x, y, z);
        if t > m[(0, 0)] && t > m[(1, 1)] && t > m[(2, 2)] {
            let r = (1.0 + t).sqrt();
            let s = 0.5 / r;
            w = 0.5 * r;
            x = (m[(2, 1)] - m[(1, 2)]) * s;
            y = (m[(0, 2)] - m[(2, 0)]) * s;
            z = (m[(1, 0)] - m[(0, 1)]) * s;
        } else if m[(0, 0)] >= m[(1, 1)] && m[(0, 0)] >= m[(2, 2)] {
            let r = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
            let s = 0.5 / r;
            w = (m[(2, 1)] - m[(1, 2)]) * s;
            x = 0.5 * r;
            y = (m[(0, 1)] + m[(1, 0)]) * s;
            z = (m[(0, 2)] + m[(2, 0)]) * s;
        } else if m[(1, 1)] >= m[(2, 2)] {
            let r = (1.0 - m[(0, 0)] + m[(1, 1)] - m[(2, 2)]).sqrt();
            let s = 0.5 / r;
            w = (m[(0, 2)] - m[(2, 0)]) * s;
            x = (m[(0, 1)] + m[(1, 0)]) * s;
            y = 0.5 * r;
            z = (m[(1, 2)] + m[(2, 1)]) * s;
        } else {
            let r = (1.0 - m[(0, 0)] - m[(1, 1)] + m[(2, 2)]).sqrt();
            let s = 0.5 / r;
            w = (m[(1, 0)] - m[(0, 1)]) * s;
            x = (m[(0, 2)] + m[(2, 0)]) * s;
            y = (m[(1, 2)] + m[(2, 1)]) * s;
            z = 0.5 * r;
        }
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        let sign = if w < 0.0 { -1.0 } else { 1.0 };
        let f = sign / norm;
        [w * f, x * f, y * f, z * f]
    }

    /// Builds a rotation from a scalar-first quaternion (normalized first).
    pub fn from_quaternion_wxyz(q: [f64; 4]) -> Result<Self> {
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if !(n.is_finite() && n > 1e-12) {
            return Err(Error::NotRotation(format!("quaternion norm {n:.3e}")));
        }
        let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
        let m = Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        );
        Ok(Rotation(m))
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl std::ops::Mul for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

/// A skew-symmetric 3x3 matrix, `m = -m^T` exactly when built via [`hat`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SkewMatrix(Matrix3<f64>);

impl SkewMatrix {
    /// Validates skew-symmetry within 1e-9 (Frobenius) before wrapping.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let residual = (m + m.transpose()).norm();
        if residual > 1e-9 {
            return Err(Error::NotSkew(residual));
        }
        Ok(SkewMatrix(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }
}

/// Maps `v` to its skew-symmetric matrix: `hat(v) u = v x u`.
pub fn hat(v: &TangentVector) -> SkewMatrix {
    SkewMatrix(hat_matrix(v))
}

pub(crate) fn hat_matrix(v: &TangentVector) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`]; exact on matrices produced by it.
pub fn vee(m: &SkewMatrix) -> TangentVector {
    Vector3::new(m.0[(2, 1)], m.0[(0, 2)], m.0[(1, 0)])
}

/// Validating form of [`vee`] for raw matrices.
pub fn vee_checked(m: &Matrix3<f64>) -> Result<TangentVector> {
    Ok(vee(&SkewMatrix::new(*m)?))
}

/// Rodrigues coefficients (sin t / t, (1 - cos t) / t^2) with Taylor
/// branches below [`TAYLOR_SWITCH`].
pub(crate) fn rodrigues_coefficients(theta: f64) -> (f64, f64) {
    if theta < TAYLOR_SWITCH {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        let t2 = theta * theta;
        (theta.sin() / theta, (1.0 - theta.cos()) / t2)
    }
}

/// Exponential map so(3) -> SO(3) in Rodrigues closed form.
pub fn exp_so3(v: &TangentVector) -> Rotation {
    let theta = v.norm();
    let (a, b) = rodrigues_coefficients(theta);
    let k = hat_matrix(v);
    Rotation(Matrix3::identity() + a * k + b * (k * k))
}

/// Logarithmic map SO(3) -> so(3), defined for rotation angles below pi.
///
/// Angles within [`ANTIPODAL_MARGIN`] of pi are rejected: the axis is not
/// recoverable there to useful precision and a silently chosen branch would
/// corrupt downstream residuals.
pub fn log_so3(r: &Rotation) -> Result<TangentVector> {
    let theta = r.angle();
    if theta >= std::f64::consts::PI - ANTIPODAL_MARGIN {
        return Err(Error::NearAntipodal { angle: theta });
    }
    let c = if theta < TAYLOR_SWITCH {
        0.5 + theta * theta / 12.0
    } else {
        theta / (2.0 * theta.sin())
    };
    let m = r.matrix();
    let d = m - m.transpose();
    Ok(c * Vector3::new(d[(2, 1)], d[(0, 2)], d[(1, 0)]))
}

/// Rotational geodesic error `2 asin(|R2 - R1|_F / (2 sqrt 2))` in radians.
pub fn geodesic_error(r1: &Rotation, r2: &Rotation) -> f64 {
    let diff = (r2.matrix() - r1.matrix()).norm();
    let arg = (diff / (2.0 * std::f64::consts::SQRT_2)).clamp(0.0, 1.0);
    2.0 * arg.asin()
}

/// The two leading rotation-matrix columns; a full rotation is recovered
/// through [`gram_schmidt`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation6D {
    pub nu1: Vector3<f64>,
    pub nu2: Vector3<f64>,
}

/// Minimum column norm / orthogonal component accepted by [`gram_schmidt`].
pub const GSO_DEGENERACY_TOL: f64 = 1e-12;

/// Recovers a rotation from a 6D representation by Gram-Schmidt
/// orthonormalization; the third column is the cross product of the first
/// two, so the result always has determinant +1.
pub fn gram_schmidt(r: &Rotation6D) -> Result<Rotation> {
    let n1 = r.nu1.norm();
    if n1 <= GSO_DEGENERACY_TOL {
        return Err(Error::Degenerate6d("first column has vanishing norm"));
    }
    let c1 = r.nu1 / n1;
    let proj = r.nu2 - c1 * c1.dot(&r.nu2);
    let n2 = proj.norm();
    if n2 <= GSO_DEGENERACY_TOL {
        return Err(Error::Degenerate6d("columns are parallel"));
    }
    let c2 = proj / n2;
    let c3 = c1.cross(&c2);
    Ok(Rotation(Matrix3::from_columns(&[c1, c2, c3])))
}

/// Row-major flattening of the rotation matrix.
pub fn to_9d(r: &Rotation) -> [f64; 9] {
    let m = r.matrix();
    [
        m[(0, 0)],
        m[(0, 1)],
        m[(0, 2)],
        m[(1, 0)],
        m[(1, 1)],
        m[(1, 2)],
        m[(2, 0)],
        m[(2, 1)],
        m[(2, 2)],
    ]
}

/// First two matrix columns as the 6D representation.
pub fn to_6d(r: &Rotation) -> Rotation6D {
    let m = r.matrix();
    Rotation6D {
        nu1: m.column(0).into(),
        nu2: m.column(1).into(),
    }
}

/// Nearest rotation in Frobenius norm, via SVD with determinant correction.
pub fn project_to_so3(m: &Matrix3<f64>) -> Result<Rotation> {
    let svd = m.svd(true, true);
    let smin = svd.singular_values.min();
    if !(smin.is_finite() && smin > 1e-12) {
        return Err(Error::Singular(smin));
    }
    let u = svd.u.expect("svd with u requested");
    let vt = svd.v_t.expect("svd with v_t requested");
    let det = (u * vt).determinant();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det.signum()));
    Ok(Rotation(u * fix * vt))
}

/// Haar-uniform rotation via Shoemake's three-uniform-number quaternion
/// construction.
pub fn sample_uniform_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    use std::f64::consts::TAU;
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let (s1, c1) = (TAU * u2).sin_cos();
    let (s2, c2) = (TAU * u3).sin_cos();
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let q = [b * c2, a * s1, a * c1, b * s2];
    Rotation::from_quaternion_wxyz(q).expect("unit quaternion by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// Appendix-style truncated power series, used as the independent oracle
    /// for the Rodrigues closed form. Summed far enough to converge below
    /// 1e-24 at theta = pi.
    fn exp_series(v: &TangentVector, terms: usize) -> Matrix3<f64> {
        let xi = hat_matrix(v);
        let mut acc = Matrix3::identity();
        let mut pow = Matrix3::identity();
        let mut fact = 1.0;
        for n in 1..=terms {
            pow *= xi;
            fact *= n as f64;
            acc += pow / fact;
        }
        acc
    }

    fn random_tangent(rng: &mut ChaCha8Rng, max_norm: f64) -> TangentVector {
        loop {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-6 && n <= 1.0 {
                let scale = rng.random_range(0.0..max_norm);
                return v / n * scale;
            }
        }
    }

    #[test]
    fn hat_of_zero_is_zero_matrix() {
        let m = hat(&Vector3::zeros());
        assert_eq!(m.matrix(), &Matrix3::zeros());
    }

    #[test]
    fn hat_matches_definition_layout() {
        let m = hat(&Vector3::new(1.0, 2.0, 3.0));
        let expected = Matrix3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0);
        assert_eq!(m.matrix(), &expected);
    }

    #[test]
    fn hat_times_vector_is_cross_product() {
        let v = Vector3::new(1.0, 2.0, 3.0);
        let u = Vector3::new(4.0, 5.0, 6.0);
        let prod = hat(&v).matrix() * u;
        assert_eq!(prod, Vector3::new(-3.0, 6.0, -3.0));
    }

    #[test]
    fn vee_of_zero_is_zero() {
        let z = SkewMatrix::new(Matrix3::zeros()).unwrap();
        assert_eq!(vee(&z), Vector3::zeros());
    }

    #[test]
    fn vee_hat_roundtrips_exactly() {
        for v in [
            Vector3::new(1.0, 2.0, 3.0),
            Vector3::new(-0.5, 0.25, 7.0),
        ] {
            assert_eq!(vee(&hat(&v)), v);
        }
    }

    #[test]
    fn vee_rejects_non_skew_input() {
        let m = Matrix3::new(0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert!(matches!(vee_checked(&m), Err(Error::NotSkew(_))));
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(exp_so3(&Vector3::zeros()).matrix(), &Matrix3::identity());
    }

    #[test]
    fn exp_quarter_turn_about_z() {
        let r = exp_so3(&Vector3::new(0.0, 0.0, PI / 2.0));
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((r.matrix() - expected).norm() < 1e-15);
    }

    #[test]
    fn exp_log_roundtrip_over_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let v = random_tangent(&mut rng, PI - 1e-3);
            let back = log_so3(&exp_so3(&v)).unwrap();
            assert!((back - v).norm() < 1e-9, "v={v:?} back={back:?}");
        }
    }

    #[test]
    fn log_exp_roundtrip_on_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..500 {
            let r = sample_uniform_rotation(&mut rng);
            if let Ok(v) = log_so3(&r) {
                let back = exp_so3(&v);
                assert!((back.matrix() - r.matrix()).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn log_of_identity_is_zero() {
        assert_eq!(log_so3(&Rotation::identity()).unwrap(), Vector3::zeros());
    }

    #[test]
    fn log_inverts_quarter_turn() {
        let r = exp_so3(&Vector3::new(0.0, 0.0, PI / 2.0));
        let v = log_so3(&r).unwrap();
        assert!((v - Vector3::new(0.0, 0.0, PI / 2.0)).norm() < 1e-12);
    }

    #[test]
    fn log_rejects_half_turn() {
        let r = exp_so3(&Vector3::new(PI, 0.0, 0.0));
        assert!(matches!(
            log_so3(&r),
            Err(Error::NearAntipodal { .. })
        ));
    }

    #[test]
    fn exp_matches_series_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..300 {
            let v = random_tangent(&mut rng, PI);
            let err = (exp_so3(&v).matrix() - exp_series(&v, 40)).norm();
            assert!(err < 1e-10, "series mismatch {err:.3e} at |v|={}", v.norm());
        }
        // Extremes of the angle range.
        for v in [Vector3::new(PI, 0.0, 0.0), Vector3::new(0.0, 1e-5, 0.0)] {
            assert!((exp_so3(&v).matrix() - exp_series(&v, 40)).norm() < 1e-10);
        }
    }

    #[test]
    fn geodesic_error_of_equal_rotations_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let r = sample_uniform_rotation(&mut rng);
        assert_eq!(geodesic_error(&r, &r), 0.0);
    }

    #[test]
    fn geodesic_error_recovers_angle_on_grid() {
        for i in 0..=50 {
            let theta = PI * i as f64 / 50.0;
            let r = exp_so3(&Vector3::new(0.0, 0.0, theta));
            let err = (geodesic_error(&Rotation::identity(), &r) - theta).abs();
            assert!(err < 1e-9, "theta={theta} err={err:.3e}");
        }
    }

    #[test]
    fn geodesic_error_at_pi() {
        let r = exp_so3(&Vector3::new(PI, 0.0, 0.0));
        assert!((geodesic_error(&Rotation::identity(), &r) - PI).abs() < 1e-9);
    }

    #[test]
    fn geodesic_error_equals_relative_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..200 {
            let r1 = sample_uniform_rotation(&mut rng);
            let r2 = sample_uniform_rotation(&mut rng);
            let rel = (r1.inverse() * r2).angle();
            assert!((geodesic_error(&r1, &r2) - rel).abs() < 1e-9);
            assert!(
                (geodesic_error(&r1, &r2) - geodesic_error(&r2, &r1)).abs() < 1e-15
            );
        }
    }

    #[test]
    fn gram_schmidt_identity_cases() {
        let r = gram_schmidt(&Rotation6D {
            nu1: Vector3::new(1.0, 0.0, 0.0),
            nu2: Vector3::new(0.0, 1.0, 0.0),
        })
        .unwrap();
        assert!((r.matrix() - Matrix3::identity()).norm() < 1e-15);

        // Scale and shear invariance.
        let r = gram_schmidt(&Rotation6D {
            nu1: Vector3::new(2.0, 0.0, 0.0),
            nu2: Vector3::new(1.0, 1.0, 0.0),
        })
        .unwrap();
        assert!((r.matrix() - Matrix3::identity()).norm() < 1e-15);
    }

    #[test]
    fn gram_schmidt_rejects_parallel_columns() {
        let res = gram_schmidt(&Rotation6D {
            nu1: Vector3::new(1.0, 0.0, 0.0),
            nu2: Vector3::new(2.0, 0.0, 0.0),
        });
        assert!(matches!(res, Err(Error::Degenerate6d(_))));
    }

    #[test]
    fn gram_schmidt_output_is_valid_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..200 {
            let r6 = Rotation6D {
                nu1: random_tangent(&mut rng, 2.0),
                nu2: random_tangent(&mut rng, 2.0),
            };
            if let Ok(r) = gram_schmidt(&r6) {
                assert!(Rotation::from_matrix(*r.matrix()).is_ok());
            }
        }
    }

    #[test]
    fn nine_d_and_six_d_of_identity() {
        let i = Rotation::identity();
        assert_eq!(to_9d(&i), [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let r6 = to_6d(&i);
        assert_eq!(r6.nu1, Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(r6.nu2, Vector3::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn gram_schmidt_inverts_to_6d() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..300 {
            let r = sample_uniform_rotation(&mut rng);
            let back = gram_schmidt(&to_6d(&r)).unwrap();
            assert!((back.matrix() - r.matrix()).norm() < 1e-9);
        }
    }

    #[test]
    fn project_is_fixed_point_on_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let r = sample_uniform_rotation(&mut rng);
        let p = project_to_so3(r.matrix()).unwrap();
        assert!((p.matrix() - r.matrix()).norm() < 1e-12);
    }

    #[test]
    fn project_ignores_scaling() {
        let p = project_to_so3(&(1.001 * Matrix3::identity())).unwrap();
        assert!((p.matrix() - Matrix3::identity()).norm() < 1e-12);
    }

    #[test]
    fn project_fixes_small_perturbation() {
        let mut m = Matrix3::identity();
        m[(0, 1)] += 1e-6;
        let p = project_to_so3(&m).unwrap();
        assert!((p.matrix() - Matrix3::identity()).norm() < 1e-5);
        assert!(p.orthonormality_residual() < 1e-14);
    }

    #[test]
    fn project_rejects_singular_input() {
        let mut m = Matrix3::zeros();
        m[(0, 0)] = 1.0;
        m[(1, 1)] = 1.0;
        assert!(matches!(project_to_so3(&m), Err(Error::Singular(_))));
    }

    #[test]
    fn uniform_samples_satisfy_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..1000 {
            let r = sample_uniform_rotation(&mut rng);
            assert!(Rotation::from_matrix(*r.matrix()).is_ok());
        }
    }

    #[test]
    fn uniform_angle_distribution_matches_haar_density() {
        // Haar angle CDF on [0, pi] is (theta - sin theta) / pi.
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let mut angles: Vec<f64> = (0..n)
            .map(|_| sample_uniform_rotation(&mut rng).angle())
            .collect();
        angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks: f64 = 0.0;
        for (i, theta) in angles.iter().enumerate() {
            let cdf = (theta - theta.sin()) / PI;
            let emp_hi = (i + 1) as f64 / n as f64;
            let emp_lo = i as f64 / n as f64;
            ks = ks.max((cdf - emp_lo).abs()).max((cdf - emp_hi).abs());
        }
        assert!(ks < 0.01, "KS statistic {ks:.4}");
    }

    #[test]
    fn uniform_samples_have_zero_mean_entries() {
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut acc = Matrix3::zeros();
        for _ in 0..n {
            acc += sample_uniform_rotation(&mut rng).matrix();
        }
        acc /= n as f64;
        assert!(acc.abs().max() < 0.01, "mean {acc:?}");
    }

    #[test]
    fn quaternion_conversion_roundtrips() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..500 {
            let r = sample_uniform_rotation(&mut rng);
            let q = r.to_quaternion_wxyz();
            assert!(q[0] >= 0.0);
            let back = Rotation::from_quaternion_wxyz(q).unwrap();
            assert!((back.matrix() - r.matrix()).norm() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn prop_hat_vee_exact(a in -10.0f64..10.0, b in -10.0f64..10.0, c in -10.0f64..10.0) {
            let v = Vector3::new(a, b, c);
            prop_assert_eq!(vee(&hat(&v)), v);
            let m = hat(&v);
            prop_assert_eq!(m.matrix() + m.matrix().transpose(), Matrix3::zeros());
        }

        #[test]
        fn prop_exp_log_roundtrip(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, s in 0.0f64..1.0) {
            let dir = Vector3::new(a, b, c);
            prop_assume!(dir.norm() > 1e-3);
            let v = dir / dir.norm() * (s * (PI - 1e-3));
            let back = log_so3(&exp_so3(&v)).unwrap();
            prop_assert!((back - v).norm() < 1e-9);
        }
    }
}
