//! Polynomial omnidirectional (Scaramuzza) fisheye camera model.
//!
//! A pixel `(px, py)` maps to sensor-plane coordinates `(u, v)` through the
//! inverse of the affine stretch `[[c, d], [e, 1]]` about the principal
//! point. The back-projected ray is `(u, v, f(rho))` with
//! `f(rho) = a0 + a1 rho + ... + a4 rho^4` and `rho = |(u, v)|`.
//!
//! With `a0 > 0` the optical axis is `+Z`; calibration files that use a
//! negative `a0` put the scene on `-Z`, and both conventions are handled.

use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

/// Intrinsics of the fisheye model.
#[derive(Debug, Clone, PartialEq)]
pub struct FisheyeIntrinsics {
    /// Back-projection polynomial `a0..a4`.
    pub poly: [f64; 5],
    /// Principal point `(cx, cy)` in pixels.
    pub center: [f64; 2],
    /// Affine entries `(c, d, e)`.
    pub affine: [f64; 3],
    /// Forward polynomial mapping the elevation angle to the image radius.
    /// Only used as a starting point; projection refines it on `poly`.
    pub inverse_poly: Vec<f64>,
    pub width: usize,
    pub height: usize,
}

/// Degree of the fitted inverse polynomial when none is supplied.
pub const DEFAULT_INVERSE_DEGREE: usize = 8;

impl FisheyeIntrinsics {
    /// Builds intrinsics, fitting `inverse_poly` when it is not supplied.
    pub fn new(
        poly: [f64; 5],
        center: [f64; 2],
        affine: [f64; 3],
        inverse_poly: Option<Vec<f64>>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if poly[0] == 0.0 || !poly.iter().all(|a| a.is_finite()) {
            return Err(Error::InvalidArgument("poly a0 must be finite and non-zero".into()));
        }
        let [c, d, e] = affine;
        if (c - d * e).abs() < 1e-12 {
            return Err(Error::InvalidArgument("affine matrix is singular".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("sensor size must be positive".into()));
        }
        let mut intr = FisheyeIntrinsics { poly, center, affine, inverse_poly: Vec::new(), width, height };
        intr.inverse_poly = match inverse_poly {
            Some(p) if !p.is_empty() => p,
            _ => intr.fit_inverse_poly(DEFAULT_INVERSE_DEGREE)?,
        };
        Ok(intr)
    }

    /// Equidistant-like 190° lens on a 256x192 sensor, the image circle
    /// touching the top and bottom edges.
    pub fn default_egocentric() -> Self {
        let k = 96.0 / (95.0f64.to_radians());
        let poly = [k, 0.0, -1.0 / (3.0 * k), 0.0, -1.0 / (45.0 * k * k * k)];
        FisheyeIntrinsics::new(poly, [127.5, 95.5], [1.0, 0.0, 0.0], None, 256, 192)
            .expect("default intrinsics are valid")
    }

    fn sign(&self) -> f64 {
        if self.poly[0] > 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    /// `f(rho)` with the sign normalised so the axis value is positive.
    fn f_pos(&self, rho: f64) -> f64 {
        self.sign() * horner(&self.poly, rho)
    }

    fn df_pos(&self, rho: f64) -> f64 {
        let a = &self.poly;
        self.sign() * (a[1] + rho * (2.0 * a[2] + rho * (3.0 * a[3] + rho * 4.0 * a[4])))
    }

    /// Largest sensor-plane radius reachable inside the image.
    fn max_radius(&self) -> f64 {
        let corners = [
            [-0.5, -0.5],
            [self.width as f64 - 0.5, -0.5],
            [-0.5, self.height as f64 - 0.5],
            [self.width as f64 - 0.5, self.height as f64 - 0.5],
        ];
        corners
            .iter()
            .map(|&[x, y]| {
                let (u, v) = self.pixel_to_plane(x, y);
                math::sqrt(u * u + v * v)
            })
            .fold(0.0, f64::max)
    }

    fn pixel_to_plane(&self, px: f64, py: f64) -> (f64, f64) {
        let [c, d, e] = self.affine;
        let det = c - d * e;
        let dx = px - self.center[0];
        let dy = py - self.center[1];
        ((dx - d * dy) / det, (-e * dx + c * dy) / det)
    }

    fn plane_to_pixel(&self, u: f64, v: f64) -> [f64; 2] {
        let [c, d, e] = self.affine;
        [c * u + d * v + self.center[0], e * u + v + self.center[1]]
    }

    /// Least-squares fit of `rho(theta)` of the given degree over the image.
    pub fn fit_inverse_poly(&self, degree: usize) -> Result<Vec<f64>> {
        let rho_max = self.max_radius();
        let samples = 400;
        let mut rows = Vec::with_capacity(samples);
        let mut rhs = Vec::with_capacity(samples);
        for i in 0..samples {
            let rho = rho_max * i as f64 / (samples - 1) as f64;
            let theta = math::atan2(self.f_pos(rho), rho);
            let mut row = Vec::with_capacity(degree + 1);
            let mut p = 1.0;
            for _ in 0..=degree {
                row.push(p);
                p *= theta;
            }
            rows.push(row);
            rhs.push(rho);
        }
        least_squares(&rows, &rhs)
    }

    /// Projects a camera-frame point to pixel coordinates.
    pub fn project(&self, point: [f64; 3]) -> Result<[f64; 2]> {
        let [x, y, z] = point;
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(Error::InvalidArgument("non-finite point".into()));
        }
        let norm = math::sqrt(x * x + y * y);
        if norm == 0.0 {
            if z == 0.0 {
                return Err(Error::Degenerate("point at the optical center".into()));
            }
            return Ok(self.center);
        }
        let zs = self.sign() * z;
        let r3 = math::sqrt(norm * norm + zs * zs);
        let (cos_t, sin_t) = (norm / r3, zs / r3);
        let theta = math::atan2(zs, norm);
        let rho = self.solve_radius(cos_t, sin_t, theta)?;
        Ok(self.plane_to_pixel(x / norm * rho, y / norm * rho))
    }

    /// Solves `f(rho) cos(theta) - rho sin(theta) = 0` for `rho > 0` with a
    /// bracketed Newton iteration seeded by the inverse polynomial.
    fn solve_radius(&self, cos_t: f64, sin_t: f64, theta: f64) -> Result<f64> {
        let g = |r: f64| self.f_pos(r) * cos_t - r * sin_t;
        let dg = |r: f64| self.df_pos(r) * cos_t - sin_t;
        let mut lo = 0.0;
        let mut hi = 4.0 * self.max_radius().max(1.0);
        if g(hi) > 0.0 {
            return Err(Error::Degenerate("point outside the lens model range".into()));
        }
        let mut rho = horner(&self.inverse_poly, theta);
        if !(rho > lo && rho < hi) {
            rho = 0.5 * (lo + hi);
        }
        for _ in 0..100 {
            let gv = g(rho);
            if gv > 0.0 {
                lo = rho;
            } else {
                hi = rho;
            }
            let d = dg(rho);
            let mut next = rho - gv / d;
            if !next.is_finite() || next <= lo || next >= hi {
                next = 0.5 * (lo + hi);
            }
            if (next - rho).abs() <= 1e-13 * (1.0 + rho) {
                return Ok(next);
            }
            rho = next;
        }
        Ok(rho)
    }

    /// Back-projects a pixel to a unit ray in the camera frame.
    pub fn unproject(&self, pixel: [f64; 2]) -> Result<[f64; 3]> {
        let [px, py] = pixel;
        let (w, h) = (self.width as f64, self.height as f64);
        if !(px >= -0.5 && px < w - 0.5 && py >= -0.5 && py < h - 0.5) {
            return Err(Error::OutOfBounds(alloc::format!("pixel ({px}, {py}) outside {w}x{h}")));
        }
        let (u, v) = self.pixel_to_plane(px, py);
        let rho = math::sqrt(u * u + v * v);
        let z = horner(&self.poly, rho);
        let n = math::sqrt(u * u + v * v + z * z);
        Ok([u / n, v / n, z / n])
    }

    /// Angle between a point direction and the optical axis, in radians.
    pub fn off_axis_angle(&self, point: [f64; 3]) -> f64 {
        let norm = math::sqrt(point[0] * point[0] + point[1] * point[1]);
        math::atan2(norm, self.sign() * point[2])
    }

    /// True when `pixel` lies on the sensor.
    pub fn in_image(&self, pixel: [f64; 2]) -> bool {
        pixel[0] >= -0.5
            && pixel[0] < self.width as f64 - 0.5
            && pixel[1] >= -0.5
            && pixel[1] < self.height as f64 - 0.5
    }
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Householder QR least squares for a tall dense system.
fn least_squares(rows: &[Vec<f64>], rhs: &[f64]) -> Result<Vec<f64>> {
    let m = rows.len();
    let n = rows.first().map_or(0, |r| r.len());
    if m < n || n == 0 {
        return Err(Error::InvalidArgument("underdetermined fit".into()));
    }
    // column scaling keeps high-degree monomials comparable
    let scale: Vec<f64> = (0..n)
        .map(|j| {
            let s = math::sqrt(rows.iter().map(|r| r[j] * r[j]).sum::<f64>());
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let mut a: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&scale).map(|(v, s)| v / s).collect()).collect();
    let mut b = rhs.to_vec();
    for k in 0..n {
        let norm = math::sqrt((k..m).map(|i| a[i][k] * a[i][k]).sum::<f64>());
        if norm < 1e-300 {
            return Err(Error::Degenerate("rank-deficient fit".into()));
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..m).map(|i| a[i][k]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in k..n {
            let dot: f64 = (k..m).map(|i| v[i - k] * a[i][j]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k..m {
                a[i][j] -= f * v[i - k];
            }
        }
        let dot: f64 = (k..m).map(|i| v[i - k] * b[i]).sum();
        let f = 2.0 * dot / vnorm2;
        for i in k..m {
            b[i] -= f * v[i - k];
        }
    }
    let mut x = alloc::vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    Ok(x.iter().zip(&scale).map(|(v, s)| v / s).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn angle(a: [f64; 3], b: [f64; 3]) -> f64 {
        let d = crate::math::dot3(a, b) / (crate::math::norm3(a) * crate::math::norm3(b));
        libm::acos(d.clamp(-1.0, 1.0))
    }

    #[test]
    fn axial_points_hit_the_principal_point() {
        let mut intr = FisheyeIntrinsics::default_egocentric();
        intr.center = [128.0, 96.0];
        assert_eq!(intr.project([0.0, 0.0, -1.0]).unwrap(), [128.0, 96.0]);
        assert_eq!(intr.project([0.0, 0.0, 2.5]).unwrap(), [128.0, 96.0]);
    }

    #[test]
    fn origin_is_degenerate() {
        let intr = FisheyeIntrinsics::default_egocentric();
        assert!(matches!(intr.project([0.0, 0.0, 0.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn principal_point_unprojects_to_axis() {
        let intr = FisheyeIntrinsics::default_egocentric();
        let r = intr.unproject(intr.center).unwrap();
        assert!(r[0].abs() < 1e-15 && r[1].abs() < 1e-15);
        assert!((r[2].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rays_are_unit_and_bounds_checked() {
        let intr = FisheyeIntrinsics::default_egocentric();
        for y in (0..192).step_by(7) {
            for x in (0..256).step_by(9) {
                let r = intr.unproject([x as f64, y as f64]).unwrap();
                assert!((crate::math::norm3(r) - 1.0).abs() < 1e-12);
            }
        }
        assert!(intr.unproject([256.0, 10.0]).is_err());
        assert!(intr.unproject([10.0, -1.0]).is_err());
    }

    #[test]
    fn wide_angles_round_trip_including_past_90_degrees() {
        let intr = FisheyeIntrinsics::default_egocentric();
        for deg in [1.0f64, 30.0, 60.0, 85.0, 92.0] {
            let a = deg.to_radians();
            let p = [crate::math::sin(a) * 0.6, crate::math::sin(a) * 0.8, crate::math::cos(a)];
            let px = intr.project(p).unwrap();
            if intr.in_image(px) {
                let r = intr.unproject(px).unwrap();
                assert!(angle(p, r) < 1e-9, "deg {deg}");
            }
        }
    }

    #[test]
    fn negative_a0_convention() {
        let base = FisheyeIntrinsics::default_egocentric();
        let mut poly = base.poly;
        poly.iter_mut().for_each(|a| *a = -*a);
        let intr = FisheyeIntrinsics::new(poly, base.center, base.affine, None, 256, 192).unwrap();
        let p = [0.3, -0.2, -1.0];
        let r = intr.unproject(intr.project(p).unwrap()).unwrap();
        assert!(angle(p, r) < 1e-9);
    }

    #[test]
    fn affine_stretch_round_trip() {
        let base = FisheyeIntrinsics::default_egocentric();
        let intr = FisheyeIntrinsics::new(base.poly, [130.2, 94.1], [1.01, 0.002, -0.003], None, 256, 192).unwrap();
        let p = [0.4, 0.1, 1.0];
        let r = intr.unproject(intr.project(p).unwrap()).unwrap();
        assert!(angle(p, r) < 1e-9);
    }

    #[test]
    fn singular_affine_rejected() {
        let base = FisheyeIntrinsics::default_egocentric();
        assert!(FisheyeIntrinsics::new(base.poly, base.center, [1.0, 1.0, 1.0], None, 256, 192).is_err());
    }

    #[test]
    fn inverse_poly_is_a_close_seed() {
        let intr = FisheyeIntrinsics::default_egocentric();
        for i in 1..50 {
            let rho = 90.0 * i as f64 / 50.0;
            let theta = crate::math::atan2(intr.f_pos(rho), rho);
            assert!((horner(&intr.inverse_poly, theta) - rho).abs() < 0.05, "rho {rho}");
        }
    }
}
