//! Exponential-map and Euler-angle conversions.
//!
//! Euler angles are `[x, y, z]` for the intrinsic ZYX composition
//! `R = Rz(z) * Ry(y) * Rx(x)`. The same convention is applied to
//! predictions and ground truth alike, so angle-space errors are
//! consistent regardless of how a dataset's original tooling chose.

pub type Mat3 = [[f64; 3]; 3];

/// Distance of `|R[2][0]|` from 1 below which the pose is treated as gimbal-locked.
pub const GIMBAL_TOL: f64 = 1e-9;

/// Rodrigues' formula: axis-angle vector to rotation matrix.
pub fn expmap_to_matrix(v: [f64; 3]) -> Mat3 {
    let theta = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if theta < 1e-12 {
        // First-order expansion: I + [v]x.
        return [[1.0, -v[2], v[1]], [v[2], 1.0, -v[0]], [-v[1], v[0], 1.0]];
    }
    let (x, y, z) = (v[0] / theta, v[1] / theta, v[2] / theta);
    let (s, c) = theta.sin_cos();
    let t = 1.0 - c;
    [
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ]
}

/// ZYX Euler angles `[x, y, z]` of a rotation matrix.
pub fn matrix_to_euler_zyx(r: &Mat3) -> [f64; 3] {
    let r20 = r[2][0];
    if r20.abs() >= 1.0 - GIMBAL_TOL {
        // Gimbal lock: z is fixed to 0 and x absorbs the remaining roll.
        let y = if r20 < 0.0 {
            std::f64::consts::FRAC_PI_2
        } else {
            -std::f64::consts::FRAC_PI_2
        };
        let x = if r20 < 0.0 {
            r[0][1].atan2(r[1][1])
        } else {
            (-r[0][1]).atan2(r[1][1])
        };
        return [x, y, 0.0];
    }
    let y = -r20.asin();
    let x = r[2][1].atan2(r[2][2]);
    let z = r[1][0].atan2(r[0][0]);
    [x, y, z]
}

pub fn euler_zyx_to_matrix(e: [f64; 3]) -> Mat3 {
    let (sx, cx) = e[0].sin_cos();
    let (sy, cy) = e[1].sin_cos();
    let (sz, cz) = e[2].sin_cos();
    [
        [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
        [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
        [-sy, cy * sx, cy * cx],
    ]
}

pub fn expmap_to_euler(v: [f64; 3]) -> [f64; 3] {
    matrix_to_euler_zyx(&expmap_to_matrix(v))
}

/// Converts every joint triple of a flat `[.., 3]` buffer.
pub fn expmap_slice_to_euler(values: &[f64]) -> Vec<f64> {
    values
        .chunks_exact(3)
        .flat_map(|c| expmap_to_euler([c[0], c[1], c[2]]))
        .collect()
}

/// Axis-angle vector of a rotation matrix (inverse of Rodrigues).
pub fn matrix_to_expmap(r: &Mat3) -> [f64; 3] {
    let cos = ((r[0][0] + r[1][1] + r[2][2] - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let w = [r[2][1] - r[1][2], r[0][2] - r[2][0], r[1][0] - r[0][1]];
    if theta < 1e-12 {
        return [w[0] / 2.0, w[1] / 2.0, w[2] / 2.0];
    }
    if std::f64::consts::PI - theta < 1e-6 {
        // Near pi the antisymmetric part vanishes; read the axis off the diagonal.
        let k = (0..3)
            .max_by(|&a, &b| r[a][a].partial_cmp(&r[b][b]).unwrap())
            .unwrap();
        let mut axis = [0.0; 3];
        axis[k] = ((r[k][k] + 1.0) / 2.0).max(0.0).sqrt();
        for j in 0..3 {
            if j != k {
                axis[j] = (r[k][j] + r[j][k]) / (4.0 * axis[k]);
            }
        }
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        return [axis[0] / n * theta, axis[1] / n * theta, axis[2] / n * theta];
    }
    let s = theta / (2.0 * theta.sin());
    [w[0] * s, w[1] * s, w[2] * s]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn max_abs_diff(a: &Mat3, b: &Mat3) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                m = m.max((a[i][j] - b[i][j]).abs());
            }
        }
        m
    }

    #[test]
    fn zero_is_identity() {
        assert_eq!(expmap_to_euler([0.0, 0.0, 0.0]), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn pure_z_rotation() {
        let e = expmap_to_euler([0.0, 0.0, 0.3]);
        assert!(e[0].abs() < 1e-15 && e[1].abs() < 1e-15);
        assert!((e[2] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn gimbal_lock_fixes_z() {
        for &y in &[std::f64::consts::FRAC_PI_2, -std::f64::consts::FRAC_PI_2] {
            let r = euler_zyx_to_matrix([0.4, y, 0.0]);
            let e = matrix_to_euler_zyx(&r);
            assert_eq!(e[2], 0.0);
            assert!(max_abs_diff(&euler_zyx_to_matrix(e), &r) < 1e-9);
        }
        // Any z at the lock collapses onto an equivalent x.
        let r = euler_zyx_to_matrix([0.1, std::f64::consts::FRAC_PI_2, 0.5]);
        let e = matrix_to_euler_zyx(&r);
        assert!(max_abs_diff(&euler_zyx_to_matrix(e), &r) < 1e-9);
    }

    proptest! {
        #[test]
        fn euler_reproduces_rotation(v in proptest::array::uniform3(-3.0f64..3.0)) {
            let r = expmap_to_matrix(v);
            let e = expmap_to_euler(v);
            prop_assert!(max_abs_diff(&euler_zyx_to_matrix(e), &r) < 1e-9);
        }

        #[test]
        fn zyx_composition_round_trip(e in proptest::array::uniform3(-1.5f64..1.5)) {
            let r = euler_zyx_to_matrix(e);
            let v = matrix_to_expmap(&r);
            let back = euler_zyx_to_matrix(expmap_to_euler(v));
            prop_assert!(max_abs_diff(&back, &r) < 1e-9);
        }

        #[test]
        fn rodrigues_is_orthonormal(v in proptest::array::uniform3(-4.0f64..4.0)) {
            let r = expmap_to_matrix(v);
            for i in 0..3 {
                for j in 0..3 {
                    let d: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((d - want).abs() < 1e-12);
                }
            }
        }
    }
}
