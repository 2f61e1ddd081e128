//! Acquisition geometry: parallel zero-doppler azimuth planes, in-plane rays
//! sharing one look direction, and the fixed range sampling of a view.
//!
//! For heading ψ the track direction is `h = (cos ψ, sin ψ, 0)` and the sensor
//! looks to the right of the track, along the ground direction
//! `g = (−sin ψ, cos ψ, 0)`. With incidence ι the ray direction is
//! `v = sin ι · g − cos ι · ẑ` and the in-plane across-ray direction is
//! `w = cos ι · g + sin ι · ẑ`, so that `v × w = h`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::scalar::Real;

/// Center of the unit scene cube.
const CUBE_CENTER: [f64; 3] = [0.5, 0.5, 0.5];

/// Height of the ray-origin line above the cube along `−v`, scene units.
pub const DEFAULT_STANDOFF: f64 = 2.0;
pub const DEFAULT_RAYS: usize = 256;
pub const DEFAULT_RANGE_BINS: usize = 256;

/// One SAR acquisition geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewConfig {
    /// Track heading in radians, measured from +x towards +y.
    pub azimuth_heading: f64,
    /// Angle of the look direction from the vertical, radians in (0, π/2).
    pub incidence: f64,
    pub n_planes: usize,
    pub n_range_bins: usize,
    /// Distance of the first range bin from the ray-origin line.
    pub range_origin: f64,
    pub range_step: f64,
    pub n_rays: usize,
    pub standoff: f64,
}

/// Half extent of the unit cube projected on a unit direction.
fn cube_half_extent(d: [f64; 3]) -> f64 {
    0.5 * (d[0].abs() + d[1].abs() + d[2].abs())
}

impl ViewConfig {
    /// View whose range slab exactly covers the unit cube projected on `v`.
    pub fn covering(
        azimuth_heading: f64,
        incidence: f64,
        n_planes: usize,
        n_range_bins: usize,
        n_rays: usize,
    ) -> Result<Self> {
        check_incidence(incidence)?;
        if n_range_bins == 0 {
            return Err(Error::InvalidGeometry("n_range_bins must be >= 1".into()));
        }
        let mut view = Self {
            azimuth_heading,
            incidence,
            n_planes,
            n_range_bins,
            range_origin: 0.0,
            range_step: 1.0,
            n_rays,
            standoff: DEFAULT_STANDOFF,
        };
        let e = cube_half_extent(view.look_direction());
        view.range_origin = view.standoff - e;
        view.range_step = 2.0 * e / n_range_bins as f64;
        view.validate()?;
        Ok(view)
    }

    /// Five views with headings {0°, 72°, 144°, 216°, 288°} at 45° incidence.
    pub fn five_view_default(n_planes: usize) -> Vec<Self> {
        (0..5)
            .map(|k| {
                Self::covering(
                    (72.0 * k as f64).to_radians(),
                    std::f64::consts::FRAC_PI_4,
                    n_planes,
                    DEFAULT_RANGE_BINS,
                    DEFAULT_RAYS,
                )
                .expect("default geometry is valid")
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        check_incidence(self.incidence)?;
        if !self.azimuth_heading.is_finite() {
            return Err(Error::InvalidGeometry("heading must be finite".into()));
        }
        if self.n_planes == 0 || self.n_range_bins == 0 || self.n_rays == 0 {
            return Err(Error::InvalidGeometry(format!(
                "n_planes, n_range_bins and n_rays must be >= 1 (got {}, {}, {})",
                self.n_planes, self.n_range_bins, self.n_rays
            )));
        }
        if !(self.range_step > 0.0) || !self.range_step.is_finite() {
            return Err(Error::InvalidGeometry(format!(
                "range_step must be positive, got {}",
                self.range_step
            )));
        }
        let e = cube_half_extent(self.look_direction());
        let (lo, hi) = (self.standoff - e, self.standoff + e);
        let slab_end = self.range_origin + self.n_range_bins as f64 * self.range_step;
        let tol = 1e-9;
        if self.range_origin > lo + tol || slab_end < hi - tol {
            return Err(Error::InvalidGeometry(format!(
                "range slab [{}, {}] does not cover the scene cube [{lo}, {hi}]",
                self.range_origin, slab_end
            )));
        }
        if lo <= 0.0 {
            return Err(Error::InvalidGeometry(format!(
                "standoff {} places ray origins inside the scene cube",
                self.standoff
            )));
        }
        Ok(())
    }

    pub fn heading_direction(&self) -> [f64; 3] {
        let (s, c) = self.azimuth_heading.sin_cos();
        [c, s, 0.0]
    }

    fn ground_look(&self) -> [f64; 3] {
        let (s, c) = self.azimuth_heading.sin_cos();
        [-s, c, 0.0]
    }

    /// Ray direction `v` (unit, pointing down into the scene).
    pub fn look_direction(&self) -> [f64; 3] {
        let g = self.ground_look();
        let (si, ci) = self.incidence.sin_cos();
        [si * g[0], si * g[1], -ci]
    }

    /// In-plane direction orthogonal to `v`, with positive z.
    pub fn across_direction(&self) -> [f64; 3] {
        let g = self.ground_look();
        let (si, ci) = self.incidence.sin_cos();
        [ci * g[0], ci * g[1], si]
    }

    /// Distance `d_i` of range bin `i` (0-based).
    pub fn range_distance(&self, bin: usize) -> f64 {
        self.range_origin + bin as f64 * self.range_step
    }

    /// Spacing of the unjittered ray origins along `w`.
    pub fn ray_spacing(&self) -> f64 {
        2.0 * cube_half_extent(self.across_direction()) / self.n_rays as f64
    }
}

fn check_incidence(incidence: f64) -> Result<()> {
    if incidence > 0.0 && incidence < std::f64::consts::FRAC_PI_2 {
        Ok(())
    } else {
        Err(Error::InvalidGeometry(format!(
            "incidence {incidence} rad is outside (0, pi/2)"
        )))
    }
}

/// One zero-doppler plane of a view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AzimuthPlane<T> {
    pub plane_index: usize,
    /// Point of the ray-origin line at the center of the ray fan.
    pub origin_line_point: Vec3<T>,
    pub v: Vec3<T>,
    pub w: Vec3<T>,
    /// Plane normal (the heading direction).
    pub normal: Vec3<T>,
}

fn vec3<T: Real>(a: [f64; 3]) -> Vec3<T> {
    Vec3::new(T::lit(a[0]), T::lit(a[1]), T::lit(a[2]))
}

/// Builds plane `index` of `view`. Planes are uniformly spaced along the
/// heading so that they span the cube footprint.
pub fn build_plane<T: Real>(view: &ViewConfig, index: usize) -> Result<AzimuthPlane<T>> {
    view.validate()?;
    if index >= view.n_planes {
        return Err(Error::InvalidGeometry(format!(
            "plane index {index} out of range (n_planes = {})",
            view.n_planes
        )));
    }
    let h = view.heading_direction();
    let v = view.look_direction();
    let e_h = cube_half_extent(h);
    let offset = -e_h + (index as f64 + 0.5) * (2.0 * e_h / view.n_planes as f64);
    let origin: [f64; 3] =
        std::array::from_fn(|k| CUBE_CENTER[k] + offset * h[k] - view.standoff * v[k]);
    Ok(AzimuthPlane {
        plane_index: index,
        origin_line_point: vec3(origin),
        v: vec3(v),
        w: vec3(view.across_direction()),
        normal: vec3(h),
    })
}

pub fn build_planes<T: Real>(view: &ViewConfig) -> Result<Vec<AzimuthPlane<T>>> {
    (0..view.n_planes).map(|k| build_plane(view, k)).collect()
}

/// Ray origins of a plane: `n_rays` points evenly spread along `w` over the
/// cube's extent. With a random source each origin moves by `n·σ_w·w`,
/// `n ~ N(0, 1)`, `σ_w` = half the inter-ray spacing.
pub fn sample_rays<T: Real, R: Rng + ?Sized>(
    plane: &AzimuthPlane<T>,
    view: &ViewConfig,
    mut jitter: Option<&mut R>,
) -> Vec<Vec3<T>> {
    let spacing = view.ray_spacing();
    let half = 0.5 * spacing * view.n_rays as f64;
    let sigma_w = 0.5 * spacing;
    (0..view.n_rays)
        .map(|j| {
            let mut t = -half + (j as f64 + 0.5) * spacing;
            if let Some(rng) = jitter.as_deref_mut() {
                let n: f64 = rng.sample(StandardNormal);
                t += n * sigma_w;
            }
            plane.origin_line_point + plane.w * T::lit(t)
        })
        .collect()
}

/// Sample points `x_i = origin + d_i·v` at the view's fixed range distances.
pub fn march_points<T: Real>(origin: Vec3<T>, v: Vec3<T>, view: &ViewConfig) -> Vec<(T, Vec3<T>)> {
    (0..view.n_range_bins)
        .map(|i| {
            let d = T::lit(view.range_distance(i));
            (d, origin + v * d)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn close(a: Vec3<f64>, b: Vec3<f64>, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn heading_zero_incidence_45() {
        let view = ViewConfig::covering(0.0, FRAC_PI_4, 8, 32, 16).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for p in build_planes::<f64>(&view).unwrap() {
            assert!(close(p.v, Vec3::new(0.0, s, -s), 1e-15));
        }
    }

    #[test]
    fn single_plane_bisects_footprint() {
        for heading in [0.0, 0.3, 1.2, 2.5] {
            let view = ViewConfig::covering(heading, 0.6, 1, 32, 16).unwrap();
            let p = build_plane::<f64>(&view, 0).unwrap();
            let center = Vec3::new(0.5, 0.5, 0.5);
            assert!((p.origin_line_point - center).dot(p.normal).abs() < 1e-12);
        }
    }

    #[test]
    fn planes_share_normal_and_orthonormal_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..25 {
            let heading = rng.gen_range(-7.0..7.0);
            let inc = rng.gen_range(0.05..1.5);
            let view = ViewConfig::covering(heading, inc, rng.gen_range(1..20), 64, 32).unwrap();
            let planes = build_planes::<f64>(&view).unwrap();
            for p in &planes {
                assert!(p.v.dot(p.w).abs() < 1e-12);
                assert!((p.v.norm() - 1.0).abs() < 1e-12 && (p.w.norm() - 1.0).abs() < 1e-12);
                assert!(close(p.v.cross(p.w), p.normal, 1e-12));
                assert_eq!(p.normal, planes[0].normal);
                assert!(p.v.z < 0.0 && p.w.z > 0.0);
                assert!((p.v.z + inc.cos()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_incidence() {
        for inc in [0.0, FRAC_PI_2, -0.3, 2.0, f64::NAN] {
            assert!(matches!(
                ViewConfig::covering(0.0, inc, 4, 4, 4),
                Err(Error::InvalidGeometry(_))
            ));
        }
        let mut v = ViewConfig::covering(0.0, 0.7, 4, 4, 4).unwrap();
        v.incidence = 1.7;
        assert!(build_plane::<f64>(&v, 0).is_err());
    }

    #[test]
    fn rejects_slab_not_covering_cube() {
        let mut v = ViewConfig::covering(0.3, 0.7, 4, 16, 4).unwrap();
        v.range_step *= 0.9;
        assert!(v.validate().is_err());
        let mut v = ViewConfig::covering(0.3, 0.7, 4, 16, 4).unwrap();
        v.range_origin += 0.01;
        assert!(v.validate().is_err());
    }

    #[test]
    fn unjittered_rays_evenly_spaced() {
        let view = ViewConfig::covering(0.4, 0.8, 3, 16, 3).unwrap();
        let plane = build_plane::<f64>(&view, 1).unwrap();
        let o = sample_rays::<f64, ChaCha8Rng>(&plane, &view, None);
        assert_eq!(o.len(), 3);
        let d01 = o[1] - o[0];
        let d12 = o[2] - o[1];
        assert!(close(d01, d12, 1e-14));
        assert!((d01.norm() - view.ray_spacing()).abs() < 1e-14);
        assert_eq!(o, sample_rays::<f64, ChaCha8Rng>(&plane, &view, None));
    }

    #[test]
    fn jitter_is_seeded() {
        let view = ViewConfig::covering(0.4, 0.8, 3, 16, 64).unwrap();
        let plane = build_plane::<f64>(&view, 2).unwrap();
        let a = sample_rays(&plane, &view, Some(&mut ChaCha8Rng::seed_from_u64(9)));
        let b = sample_rays(&plane, &view, Some(&mut ChaCha8Rng::seed_from_u64(9)));
        let c = sample_rays(&plane, &view, Some(&mut ChaCha8Rng::seed_from_u64(10)));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn jitter_statistics_and_plane_membership() {
        let view = ViewConfig::covering(1.1, 0.6, 5, 16, 100).unwrap();
        let plane = build_plane::<f64>(&view, 3).unwrap();
        let base = sample_rays::<f64, ChaCha8Rng>(&plane, &view, None);
        let sigma_w = 0.5 * view.ray_spacing();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut sum = 0.0;
        let mut count = 0usize;
        for _ in 0..100 {
            let o = sample_rays(&plane, &view, Some(&mut rng));
            for (p, b) in o.iter().zip(&base) {
                let disp = *p - *b;
                // displacement is purely along w
                assert!(close(disp, plane.w * disp.dot(plane.w), 1e-12));
                assert!((*p - plane.origin_line_point).dot(plane.normal).abs() < 1e-12);
                sum += disp.dot(plane.w) / sigma_w;
                count += 1;
            }
        }
        assert_eq!(count, 10_000);
        let mean = sum / count as f64;
        assert!(mean.abs() < 3.0 / (count as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn march_points_arithmetic_progression() {
        let mut view = ViewConfig::covering(0.0, 0.5, 1, 3, 1).unwrap();
        view.range_origin = 0.0;
        view.range_step = 0.5;
        let pts = march_points(Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.0, -1.0), &view);
        let z: Vec<f64> = pts.iter().map(|(_, p)| p.z).collect();
        assert_eq!(z, vec![1.0, 0.5, 0.0]);
        let view = ViewConfig::covering(0.9, 0.5, 1, 40, 1).unwrap();
        let v = Vec3::new(0.3, -0.2, -0.9).normalized();
        let pts = march_points(Vec3::new(0.1, 0.2, 3.0), v, &view);
        assert_eq!(pts.len(), 40);
        for w in pts.windows(2) {
            assert!(close(w[1].1 - w[0].1, v * view.range_step, 1e-12));
        }
    }

    /// Every marched sample lies in the cube's bounding box aligned with
    /// (v, w, h); only jitter may push samples slightly past it along w.
    #[test]
    fn marched_points_cover_cube_neighborhood() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let view =
                ViewConfig::covering(rng.gen_range(0.0..6.3), rng.gen_range(0.1..1.4), 4, 32, 16)
                    .unwrap();
            let c = Vec3::new(0.5, 0.5, 0.5);
            let (v, w, h) = (
                vec3::<f64>(view.look_direction()),
                vec3::<f64>(view.across_direction()),
                vec3::<f64>(view.heading_direction()),
            );
            let ext = |d: Vec3<f64>| 0.5 * (d.x.abs() + d.y.abs() + d.z.abs());
            for plane in build_planes::<f64>(&view).unwrap() {
                for o in sample_rays(&plane, &view, Some(&mut rng)) {
                    for (_, p) in march_points(o, plane.v, &view) {
                        let q = p - c;
                        assert!(q.dot(v).abs() <= ext(v) + 1e-9);
                        assert!(q.dot(w).abs() <= ext(w) + 2.5 * view.ray_spacing());
                        assert!(q.dot(h).abs() <= ext(h) + 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn equal_distance_maps_to_equal_bin() {
        let view = ViewConfig::covering(0.2, 0.9, 2, 50, 8).unwrap();
        let plane = build_plane::<f64>(&view, 0).unwrap();
        let rays = sample_rays::<f64, ChaCha8Rng>(&plane, &view, None);
        let a = march_points(rays[0], plane.v, &view);
        let b = march_points(rays[7], plane.v, &view);
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(pa.0, pb.0);
            // equal distance from the origin line
            let da = (pa.1 - plane.origin_line_point).dot(plane.v);
            let db = (pb.1 - plane.origin_line_point).dot(plane.v);
            assert!((da - db).abs() < 1e-12);
        }
    }
}
