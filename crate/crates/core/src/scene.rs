//! Optimizable scene representation: a rasterized height field over the unit
//! square, a per-cell specularity exponent and the Laplace sharpness.
//!
//! Heights live at cell centers `((col + ½)/width, (row + ½)/height)`. Between
//! centers the surface is the bilinear patch of the four surrounding values;
//! outside the center extent it is extended with the border values.

use crate::error::{Error, Result};
use crate::math::{Grid2, Vec3};
use crate::scalar::Real;

/// Bilinear interpolation footprint of a query point: the lower-left cell
/// `(col, row)` of the 2×2 neighborhood plus the fractional offsets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint<T> {
    pub col: usize,
    pub row: usize,
    pub fx: T,
    pub fy: T,
    /// False when the x coordinate was clamped to the border (zero slope in x).
    pub x_inside: bool,
    pub y_inside: bool,
}

impl<T: Real> Footprint<T> {
    /// Weights of cells `(c,r), (c+1,r), (c,r+1), (c+1,r+1)`.
    #[inline(always)]
    pub fn weights(&self) -> [T; 4] {
        let one = T::one();
        [
            (one - self.fx) * (one - self.fy),
            self.fx * (one - self.fy),
            (one - self.fx) * self.fy,
            self.fx * self.fy,
        ]
    }

    /// Flat indices of the four cells, same order as [`Footprint::weights`].
    #[inline(always)]
    pub fn indices(&self, width: usize) -> [usize; 4] {
        let base = self.row * width + self.col;
        [base, base + 1, base + width, base + width + 1]
    }
}

#[inline(always)]
fn axis_footprint<T: Real>(coord: T, cells: usize) -> (usize, T, bool) {
    let n = T::from_usize_exact(cells);
    let u = coord * n - T::lit(0.5);
    let last = T::from_usize_exact(cells - 1);
    let (u, inside) = if u <= T::zero() {
        (T::zero(), false)
    } else if u >= last {
        (last, false)
    } else {
        (u, true)
    };
    let i = u.to_index().min(cells - 2);
    (i, u - T::from_usize_exact(i), inside)
}

/// Footprint lookup shared by every raster with the surface layout.
#[inline(always)]
pub fn footprint<T: Real>(width: usize, height: usize, x: T, y: T) -> Footprint<T> {
    let (col, fx, x_inside) = axis_footprint(x, width);
    let (row, fy, y_inside) = axis_footprint(y, height);
    Footprint {
        col,
        row,
        fx,
        fy,
        x_inside,
        y_inside,
    }
}

/// Interpolated value and analytic partial derivatives of a bilinear patch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchSample<T> {
    pub value: T,
    pub dx: T,
    pub dy: T,
}

/// Digital surface model: one altitude per cell, scene units in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DsmSurface<T> {
    heights: Grid2<T>,
}

impl<T: Real> DsmSurface<T> {
    pub fn new(width: usize, height_cells: usize, heights: Vec<T>) -> Result<Self> {
        if width < 2 || height_cells < 2 {
            return Err(Error::InvalidSurface(format!(
                "surface needs at least 2x2 cells, got {width}x{height_cells}"
            )));
        }
        let heights = Grid2::from_vec(width, height_cells, heights).ok_or_else(|| {
            Error::InvalidSurface(format!("height count does not match {width}x{height_cells}"))
        })?;
        if let Some(i) = heights.as_slice().iter().position(|h| !h.is_finite()) {
            return Err(Error::InvalidSurface(format!("non-finite height at index {i}")));
        }
        Ok(Self { heights })
    }

    pub fn from_grid(heights: Grid2<T>) -> Result<Self> {
        let (w, h) = (heights.width(), heights.height());
        Self::new(w, h, heights.into_vec())
    }

    pub fn flat(width: usize, height_cells: usize, value: T) -> Result<Self> {
        Self::new(width, height_cells, vec![value; width * height_cells])
    }

    /// Builds a surface from a function of the cell-center coordinates.
    pub fn from_fn(width: usize, height_cells: usize, mut f: impl FnMut(T, T) -> T) -> Result<Self> {
        let grid = Grid2::from_fn(width, height_cells, |c, r| {
            let x = (T::from_usize_exact(c) + T::lit(0.5)) / T::from_usize_exact(width);
            let y = (T::from_usize_exact(r) + T::lit(0.5)) / T::from_usize_exact(height_cells);
            f(x, y)
        });
        Self::from_grid(grid)
    }

    #[inline(always)]
    pub fn width(&self) -> usize {
        self.heights.width()
    }

    #[inline(always)]
    pub fn height_cells(&self) -> usize {
        self.heights.height()
    }

    /// Ground sampling distance in scene units (`1 / width`).
    #[inline(always)]
    pub fn cell_size(&self) -> T {
        T::from_usize_exact(self.width()).recip()
    }

    pub fn heights(&self) -> &Grid2<T> {
        &self.heights
    }

    pub fn heights_mut(&mut self) -> &mut Grid2<T> {
        &mut self.heights
    }

    pub fn clamp_heights(&mut self) {
        for h in self.heights.as_mut_slice() {
            *h = h.max(T::zero()).min(T::one());
        }
    }

    #[inline(always)]
    pub fn footprint(&self, x: T, y: T) -> Footprint<T> {
        footprint(self.width(), self.height_cells(), x, y)
    }

    /// Height and slopes of the bilinear patch at a precomputed footprint.
    #[inline(always)]
    pub fn patch(&self, fp: &Footprint<T>) -> PatchSample<T> {
        bilinear_patch(&self.heights, fp)
    }

    pub fn height_at(&self, x: T, y: T) -> T {
        self.patch(&self.footprint(x, y)).value
    }

    /// Implicit surface function `z − dsm(x, y)`: positive above, negative below.
    pub fn implicit_value(&self, p: Vec3<T>) -> T {
        p.z - self.height_at(p.x, p.y)
    }

    /// Unit normal `(−∂h/∂x, −∂h/∂y, 1) / ‖·‖` of the bilinear patch.
    pub fn normal_at(&self, x: T, y: T) -> Vec3<T> {
        let s = self.patch(&self.footprint(x, y));
        Vec3::new(-s.dx, -s.dy, T::one()).normalized()
    }
}

/// Bilinear value and slopes (per scene unit) of any grid with the surface layout.
#[inline(always)]
pub fn bilinear_patch<T: Real>(grid: &Grid2<T>, fp: &Footprint<T>) -> PatchSample<T> {
    let w = grid.width();
    let data = grid.as_slice();
    let [i00, i10, i01, i11] = fp.indices(w);
    let (h00, h10, h01, h11) = (data[i00], data[i10], data[i01], data[i11]);
    let one = T::one();
    let (fx, fy) = (fp.fx, fp.fy);
    let value = (one - fy) * ((one - fx) * h00 + fx * h10) + fy * ((one - fx) * h01 + fx * h11);
    let dx = if fp.x_inside {
        ((h10 - h00) * (one - fy) + (h11 - h01) * fy) * T::from_usize_exact(w)
    } else {
        T::zero()
    };
    let dy = if fp.y_inside {
        ((h01 - h00) * (one - fx) + (h11 - h10) * fx) * T::from_usize_exact(grid.height())
    } else {
        T::zero()
    };
    PatchSample { value, dx, dy }
}

/// Raw parameter giving θ = 1 to working precision in both `f32` and `f64`.
pub const EXACT_LAMBERTIAN_RAW: f64 = -40.0;

/// Numerically stable `ln(1 + eˣ)`.
#[inline(always)]
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::lit(30.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline(always)]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        (T::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Per-cell specularity exponent θ = 1 + softplus(raw) ≥ 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecularityMap<T> {
    raw: Grid2<T>,
}

impl<T: Real> SpecularityMap<T> {
    pub fn from_raw(raw: Grid2<T>) -> Self {
        Self { raw }
    }

    /// Uniform map with the given raw value.
    pub fn uniform_raw(width: usize, height: usize, raw: T) -> Self {
        Self {
            raw: Grid2::filled(width, height, raw),
        }
    }

    /// Purely Lambertian map (θ = 1 everywhere, exactly).
    pub fn lambertian(width: usize, height: usize) -> Self {
        Self::uniform_raw(width, height, T::lit(EXACT_LAMBERTIAN_RAW))
    }

    /// Builds the map from exponents; values below 1 are rejected.
    pub fn from_theta(theta: &Grid2<T>) -> Result<Self> {
        if let Some(t) = theta.as_slice().iter().find(|t| !(**t >= T::one()) || !t.is_finite()) {
            return Err(Error::InvalidSurface(format!("specularity exponent {t} is not >= 1")));
        }
        Ok(Self {
            raw: theta.map(|&t| raw_from_theta(t)),
        })
    }

    pub fn raw(&self) -> &Grid2<T> {
        &self.raw
    }

    pub fn raw_mut(&mut self) -> &mut Grid2<T> {
        &mut self.raw
    }

    pub fn width(&self) -> usize {
        self.raw.width()
    }

    pub fn height(&self) -> usize {
        self.raw.height()
    }

    pub fn theta_grid(&self) -> Grid2<T> {
        self.raw.map(|&r| theta_from_raw(r))
    }

    /// Bilinearly interpolated θ (interpolates per-cell θ, not raw values).
    pub fn theta_at(&self, x: T, y: T) -> T {
        let fp = footprint(self.width(), self.height(), x, y);
        let w = fp.weights();
        let idx = fp.indices(self.width());
        let raw = self.raw.as_slice();
        (0..4).map(|k| w[k] * theta_from_raw(raw[idx[k]])).sum()
    }

    pub fn is_lambertian(&self) -> bool {
        self.raw.as_slice().iter().all(|&r| theta_from_raw(r) == T::one())
    }
}

#[inline(always)]
pub fn theta_from_raw<T: Real>(raw: T) -> T {
    T::one() + softplus(raw)
}

/// Inverse of [`theta_from_raw`], clamped at [`EXACT_LAMBERTIAN_RAW`].
pub fn raw_from_theta<T: Real>(theta: T) -> T {
    let excess = theta - T::one();
    if excess <= T::zero() {
        return T::lit(EXACT_LAMBERTIAN_RAW);
    }
    // softplus⁻¹(s) = s + ln(1 − e^{−s})
    let raw = excess + (-(-excess).exp_m1()).ln();
    raw.max(T::lit(EXACT_LAMBERTIAN_RAW))
}

/// Laplace sharpness β > 0, stored as `ln β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharpnessParam<T> {
    raw: T,
}

impl<T: Real> SharpnessParam<T> {
    pub fn new(beta: T) -> Result<Self> {
        if !(beta > T::zero()) || !beta.is_finite() {
            return Err(Error::InvalidConfig(format!("beta must be positive, got {beta}")));
        }
        Ok(Self { raw: beta.ln() })
    }

    pub fn from_raw(raw: T) -> Self {
        Self { raw }
    }

    #[inline(always)]
    pub fn beta(&self) -> T {
        self.raw.exp()
    }

    pub fn raw(&self) -> T {
        self.raw
    }

    pub fn raw_mut(&mut self) -> &mut T {
        &mut self.raw
    }
}

/// Everything the renderer reads: surface, specularity and sharpness.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene<T> {
    pub surface: DsmSurface<T>,
    pub specularity: SpecularityMap<T>,
    pub beta: SharpnessParam<T>,
}

impl<T: Real> Scene<T> {
    pub fn new(
        surface: DsmSurface<T>,
        specularity: SpecularityMap<T>,
        beta: SharpnessParam<T>,
    ) -> Result<Self> {
        if !surface.heights().same_shape(specularity.raw()) {
            return Err(Error::shape(
                format!("{}x{}", surface.width(), surface.height_cells()),
                format!("{}x{}", specularity.width(), specularity.height()),
            ));
        }
        Ok(Self {
            surface,
            specularity,
            beta,
        })
    }

    /// Lambertian scene over `surface`.
    pub fn lambertian(surface: DsmSurface<T>, beta: T) -> Result<Self> {
        let spec = SpecularityMap::lambertian(surface.width(), surface.height_cells());
        Self::new(surface, spec, SharpnessParam::new(beta)?)
    }
}
