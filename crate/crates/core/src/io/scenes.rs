//! Procedural test scenes on `size × size` grids with heights in scene units.
//!
//! Cells are addressed by centered coordinates `a = (2i + 1 − size)/size`,
//! which are exactly antisymmetric, so the radially symmetric scenes are
//! exactly invariant under 90° rotations of the grid.

use std::path::Path;

use super::raster::read_raster;
use crate::error::{Error, Result};
use crate::math::Grid2;
use crate::scalar::Real;
use crate::scene::{DsmSurface, Scene, SpecularityMap};

/// Laplace sharpness (scene units) used to render synthetic acquisitions;
/// equal to the default sharpness the solver renders with.
pub const SIMULATION_BETA: f64 = 0.05;

pub const SCENE_NAMES: [&str; 5] = ["pyramid", "round_pile", "fuji", "fournaise", "two_region"];

/// Surface plus an optional θ map (absent means Lambertian).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec<T> {
    pub surface: DsmSurface<T>,
    pub theta: Option<Grid2<T>>,
}

impl<T: Real> SceneSpec<T> {
    pub fn to_scene(&self, beta: T) -> Result<Scene<T>> {
        let spec = match &self.theta {
            Some(t) => SpecularityMap::from_theta(t)?,
            None => SpecularityMap::lambertian(self.surface.width(), self.surface.height_cells()),
        };
        Scene::new(self.surface.clone(), spec, crate::scene::SharpnessParam::new(beta)?)
    }
}

fn centered(i: usize, size: usize) -> f64 {
    (2.0 * i as f64 + 1.0 - size as f64) / size as f64
}

fn radial(size: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(size * size);
    for row in 0..size {
        for col in 0..size {
            let (a, b) = (centered(col, size), centered(row, size));
            out.push(f((a * a + b * b).sqrt()));
        }
    }
    out
}

fn pyramid(size: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(size * size);
    for row in 0..size {
        for col in 0..size {
            let m = centered(col, size).abs().max(centered(row, size).abs());
            out.push(0.4 * (1.0 - m / 0.8).max(0.0));
        }
    }
    out
}

fn round_pile(r: f64) -> f64 {
    if r < 0.8 {
        0.35 * 0.5 * (1.0 + (std::f64::consts::PI * r / 0.8).cos())
    } else {
        0.0
    }
}

fn fuji(r: f64) -> f64 {
    0.6 * (1.0 - r / 0.9).max(0.0).powf(1.5)
}

fn fournaise(r: f64) -> f64 {
    let cone = 0.45 * (1.0 - r / 0.9).max(0.0);
    // steeper than the cone so the crater floor is a local minimum
    let crater = 0.15 * (1.0 - r / 0.25).max(0.0);
    cone - crater
}

pub fn make_scene<T: Real>(name: &str, size: usize) -> Result<SceneSpec<T>> {
    if size < 8 {
        return Err(Error::InvalidSurface(format!("scene size must be >= 8, got {size}")));
    }
    let (heights, theta) = match name {
        "pyramid" => (pyramid(size), None),
        "round_pile" => (radial(size, round_pile), None),
        "fuji" => (radial(size, fuji), None),
        "fournaise" | "fournaise-like" => (radial(size, fournaise), None),
        "two_region" => {
            let theta = Grid2::from_fn(size, size, |col, _| if 2 * col < size { T::one() } else { T::lit(4.0) });
            (radial(size, round_pile), Some(theta))
        }
        other => return Err(Error::UnknownScene(other.to_string())),
    };
    let surface = DsmSurface::new(size, size, heights.into_iter().map(T::lit).collect())?;
    Ok(SceneSpec { surface, theta })
}

/// A scene name, or the path of an `RDF1` DSM raster.
pub fn resolve_scene<T: Real>(name_or_path: &str, size: usize) -> Result<SceneSpec<T>> {
    match make_scene(name_or_path, size) {
        Err(Error::UnknownScene(name)) => {
            let path = Path::new(&name);
            if !path.is_file() {
                return Err(Error::UnknownScene(name));
            }
            Ok(SceneSpec {
                surface: read_raster(path)?.to_surface()?,
                theta: None,
            })
        }
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rotate(g: &Grid2<f64>) -> Grid2<f64> {
        let n = g.width();
        Grid2::from_fn(n, n, |c, r| g.get(r, n - 1 - c))
    }

    #[test]
    fn pyramid_apex_and_base() {
        let s: SceneSpec<f64> = make_scene("pyramid", 64).unwrap();
        let h = s.surface.heights();
        let max = h.as_slice().iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(h.get(31, 31), max);
        assert_eq!(h.get(32, 32), max);
        for i in 0..64 {
            assert_eq!(h.get(i, 0), 0.0);
            assert_eq!(h.get(0, i), 0.0);
            assert_eq!(h.get(63, i), 0.0);
        }
    }

    #[test]
    fn radial_scenes_rotation_invariant() {
        for name in ["round_pile", "fuji", "fournaise", "pyramid"] {
            let s: SceneSpec<f64> = make_scene(name, 37).unwrap();
            let g = s.surface.heights();
            assert_eq!(&rotate(g), g, "{name}");
        }
    }

    #[test]
    fn caldera_center_below_rim() {
        let s: SceneSpec<f64> = make_scene("fournaise", 64).unwrap();
        let h = s.surface.heights();
        let center = h.get(31, 31);
        let max = h.as_slice().iter().cloned().fold(f64::MIN, f64::max);
        assert!(center < max);
        // local minimum: no 8-neighbor lower
        for (dc, dr) in [(-1i32, -1i32), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)] {
            assert!(h.get((31 + dc) as usize, (31 + dr) as usize) >= center);
        }
    }

    #[test]
    fn two_region_theta() {
        let s: SceneSpec<f64> = make_scene("two_region", 16).unwrap();
        let t = s.theta.unwrap();
        assert_eq!(t.get(7, 3), 1.0);
        assert_eq!(t.get(8, 3), 4.0);
        let scene = s.surface.clone();
        assert_eq!(scene, make_scene::<f64>("round_pile", 16).unwrap().surface);
    }

    #[test]
    fn unknown_and_small() {
        assert!(matches!(make_scene::<f64>("everest", 64), Err(Error::UnknownScene(_))));
        assert!(matches!(resolve_scene::<f64>("/no/such/file.rdf", 64), Err(Error::UnknownScene(_))));
        assert!(make_scene::<f64>("pyramid", 7).is_err());
    }
}
