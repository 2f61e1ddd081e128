//! Reverse-mode gradients of range profiles with respect to the scene
//! parameters (cell heights, raw specularity, raw sharpness).
//!
//! Transmittance is differentiated through the optical depths `τ_k = σ_k·Δd`:
//! with `c_i = T_i α_i r_i`, `T_i = exp(−Σ_{k<i} τ_k)` and `α_k = 1 − e^{−τ_k}`,
//!
//! ```text
//! ∂L/∂τ_k = g_k T_{k+1} r_k − Σ_{i>k} g_i c_i
//! ```
//!
//! which needs no division by `1 − α_k` and stays exact for opaque samples.

use crate::error::{Error, Result};
use crate::geometry::{AzimuthPlane, ViewConfig};
use crate::math::{Grid2, Vec3};
use crate::renderer::{Kernel, RenderTape, SampleRecord};
use crate::scalar::Real;
use crate::scene::{sigmoid, Scene};

/// Gradients with the raster layout of the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T> {
    pub d_heights: Grid2<T>,
    pub d_theta_raw: Grid2<T>,
    pub d_beta_raw: T,
}

impl<T: Real> GradientSet<T> {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            d_heights: Grid2::filled(width, height, T::zero()),
            d_theta_raw: Grid2::filled(width, height, T::zero()),
            d_beta_raw: T::zero(),
        }
    }

    pub fn zeros_like(scene: &Scene<T>) -> Self {
        Self::zeros(scene.surface.width(), scene.surface.height_cells())
    }

    /// Adds `other` into `self`.
    pub fn merge(&mut self, other: &Self) {
        for (a, b) in self.d_heights.as_mut_slice().iter_mut().zip(other.d_heights.as_slice()) {
            *a += *b;
        }
        for (a, b) in self
            .d_theta_raw
            .as_mut_slice()
            .iter_mut()
            .zip(other.d_theta_raw.as_slice())
        {
            *a += *b;
        }
        self.d_beta_raw += other.d_beta_raw;
    }

    pub fn scale(&mut self, s: T) {
        self.d_heights.as_mut_slice().iter_mut().for_each(|g| *g *= s);
        self.d_theta_raw.as_mut_slice().iter_mut().for_each(|g| *g *= s);
        self.d_beta_raw *= s;
    }

    /// Describes the first non-finite entry, if any.
    pub fn non_finite(&self) -> Option<String> {
        if let Some(i) = self.d_heights.as_slice().iter().position(|g| !g.is_finite()) {
            return Some(format!("d_heights[{i}] = {}", self.d_heights.as_slice()[i]));
        }
        if let Some(i) = self.d_theta_raw.as_slice().iter().position(|g| !g.is_finite()) {
            return Some(format!("d_theta_raw[{i}] = {}", self.d_theta_raw.as_slice()[i]));
        }
        (!self.d_beta_raw.is_finite()).then(|| format!("d_beta_raw = {}", self.d_beta_raw))
    }

    pub fn max_abs(&self) -> T {
        self.d_heights
            .as_slice()
            .iter()
            .chain(self.d_theta_raw.as_slice())
            .fold(self.d_beta_raw.abs(), |m, g| m.max(g.abs()))
    }
}

/// Which parameter groups to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradMask {
    pub heights: bool,
    pub theta: bool,
    pub beta: bool,
}

impl GradMask {
    pub const ALL: Self = Self {
        heights: true,
        theta: true,
        beta: true,
    };
}

/// Shared per-ray adjoint state.
struct RayAdjoint<T> {
    v: Vec3<T>,
    beta: T,
    step_eff: T,
    width: usize,
    height: usize,
    mask: GradMask,
}

impl<T: Real> RayAdjoint<T> {
    /// Backpropagates one ray. `upstream[i]` is ∂L/∂c_i for this ray.
    #[inline(always)]
    fn backward(
        &self,
        records: &[SampleRecord<T>],
        upstream: &[T],
        grads: &mut GradientSet<T>,
    ) {
        let wf = T::from_usize_exact(self.width);
        let hf = T::from_usize_exact(self.height);
        let inv_beta = self.beta.recip();
        let mut suffix = T::zero();
        let mut d_beta = T::zero();
        let d_h = grads.d_heights.as_mut_slice();
        let d_th = grads.d_theta_raw.as_mut_slice();
        for (rec, &g) in records.iter().zip(upstream).rev() {
            let trans_after = rec.transmittance * (T::one() - rec.alpha);
            let d_tau = g * trans_after * rec.reflectance - suffix;
            suffix += g * rec.contribution;
            let d_sigma = d_tau * self.step_eff;

            // Laplace CDF, both branches
            let f = rec.implicit;
            let tail = if f >= T::zero() { rec.sigma } else { T::one() - rec.sigma };
            let d_f = -d_sigma * tail * inv_beta;
            if self.mask.beta {
                d_beta += d_sigma * tail * f * inv_beta * inv_beta;
            }

            let fp = &rec.footprint;
            let w = fp.weights();
            let idx = fp.indices(self.width);

            if self.mask.heights {
                // F = z − h
                let d_hv = -d_f;
                let mut cell = [d_hv * w[0], d_hv * w[1], d_hv * w[2], d_hv * w[3]];
                if rec.cosine > T::zero() {
                    let d_r = g * rec.transmittance * rec.alpha;
                    let d_q = d_r * rec.theta * rec.reflectance / rec.cosine;
                    let q = rec.cosine;
                    // ∂q/∂s = (v − q·s/N)/N, N = ‖(−sx, −sy, 1)‖
                    let d_sx = d_q * (self.v.x - q * rec.slope_x * rec.inv_norm) * rec.inv_norm;
                    let d_sy = d_q * (self.v.y - q * rec.slope_y * rec.inv_norm) * rec.inv_norm;
                    let one = T::one();
                    if fp.x_inside {
                        let a = d_sx * wf;
                        cell[0] -= a * (one - fp.fy);
                        cell[1] += a * (one - fp.fy);
                        cell[2] -= a * fp.fy;
                        cell[3] += a * fp.fy;
                    }
                    if fp.y_inside {
                        let b = d_sy * hf;
                        cell[0] -= b * (one - fp.fx);
                        cell[2] += b * (one - fp.fx);
                        cell[1] -= b * fp.fx;
                        cell[3] += b * fp.fx;
                    }
                }
                for k in 0..4 {
                    d_h[idx[k]] += cell[k];
                }
            }

            if self.mask.theta && rec.cosine > T::zero() {
                // r = q^θ, 0·ln 0 never arises since q > 0 here
                let d_theta = g * rec.transmittance * rec.alpha * rec.reflectance * rec.cosine.ln();
                for k in 0..4 {
                    d_th[idx[k]] += d_theta * w[k];
                }
            }
        }
        grads.d_beta_raw += d_beta * self.beta;
    }
}

fn finish_theta<T: Real>(scene: &Scene<T>, grads: &mut GradientSet<T>) {
    // θ_c = 1 + softplus(raw_c)
    for (g, &r) in grads
        .d_theta_raw
        .as_mut_slice()
        .iter_mut()
        .zip(scene.specularity.raw().as_slice())
    {
        *g *= sigmoid(r);
    }
}

/// Gradient of `Σ_i d_profile[i]·s_i` for the plane recorded in `tape`.
pub fn backward_plane<T: Real>(
    tape: &RenderTape<T>,
    scene: &Scene<T>,
    d_profile: &[T],
) -> Result<GradientSet<T>> {
    if d_profile.len() != tape.n_range_bins {
        return Err(Error::TapeMismatch(format!(
            "upstream gradient has {} bins, tape has {}",
            d_profile.len(),
            tape.n_range_bins
        )));
    }
    if tape.records.len() != tape.n_rays * tape.n_range_bins {
        return Err(Error::TapeMismatch("record count does not match rays x bins".into()));
    }
    if scene.surface.width() != tape.grid_width || scene.surface.height_cells() != tape.grid_height {
        return Err(Error::TapeMismatch(format!(
            "scene is {}x{}, tape was recorded on {}x{}",
            scene.surface.width(),
            scene.surface.height_cells(),
            tape.grid_width,
            tape.grid_height
        )));
    }
    let mut grads = GradientSet::zeros(tape.grid_width, tape.grid_height);
    let adj = RayAdjoint {
        v: tape.v,
        beta: tape.beta,
        step_eff: tape.step_eff,
        width: tape.grid_width,
        height: tape.grid_height,
        mask: GradMask::ALL,
    };
    let inv = T::from_usize_exact(tape.n_rays).recip();
    let upstream: Vec<T> = d_profile.iter().map(|&g| g * inv).collect();
    for j in 0..tape.n_rays {
        adj.backward(tape.ray(j), &upstream, &mut grads);
    }
    finish_theta(scene, &mut grads);
    Ok(grads)
}

/// Squared-error loss of one plane and its gradient.
///
/// Returns `Σ_i (s_i − o_i)²` and adds `weight · ∂/∂params` of it to `grads`.
/// Records are kept in a single flat buffer instead of a [`RenderTape`].
pub fn plane_squared_error_grad<T: Real>(
    scene: &Scene<T>,
    plane: &AzimuthPlane<T>,
    view: &ViewConfig,
    origins: &[Vec3<T>],
    observed: &[T],
    weight: T,
    mask: GradMask,
    grads: &mut GradientSet<T>,
) -> Result<T> {
    if observed.len() != view.n_range_bins {
        return Err(Error::shape(view.n_range_bins, observed.len()));
    }
    let kernel = Kernel::new(scene, plane, view);
    let n = kernel.n_bins();
    let mut profile = vec![T::zero(); n];
    let mut records = Vec::with_capacity(n * origins.len());
    for &o in origins {
        kernel.march(o, |i, rec| {
            profile[i] += rec.contribution;
            records.push(*rec);
        });
    }
    let inv = T::from_usize_exact(origins.len()).recip();
    let mut sse = T::zero();
    let upstream: Vec<T> = profile
        .iter()
        .zip(observed)
        .map(|(&c, &o)| {
            let r = c * inv - o;
            sse += r * r;
            T::lit(2.0) * weight * r * inv
        })
        .collect();
    let adj = RayAdjoint {
        v: kernel.v,
        beta: kernel.beta,
        step_eff: kernel.step_eff,
        width: scene.surface.width(),
        height: scene.surface.height_cells(),
        mask: GradMask {
            theta: mask.theta && kernel.has_theta(),
            ..mask
        },
    };
    let mut local = GradientSet::zeros_like(scene);
    for ray in records.chunks_exact(n) {
        adj.backward(ray, &upstream, &mut local);
    }
    if adj.mask.theta {
        finish_theta(scene, &mut local);
    }
    grads.merge(&local);
    Ok(sse)
}

/// Parameter count above which [`finite_difference_oracle`] warns about cost.
pub const FD_COST_WARNING: usize = 10_000;

/// Central-difference gradient of `loss` with respect to every height, raw
/// specularity and raw sharpness of `scene`.
pub fn finite_difference_oracle<T: Real>(
    loss: impl Fn(&Scene<T>) -> T,
    scene: &Scene<T>,
    step: T,
) -> GradientSet<T> {
    let n = scene.surface.heights().as_slice().len();
    if 2 * n + 1 > FD_COST_WARNING {
        log::warn!(
            "finite differences over {} parameters need {} loss evaluations",
            2 * n + 1,
            2 * (2 * n + 1)
        );
    }
    let two_step = step + step;
    let mut grads = GradientSet::zeros_like(scene);
    let mut probe = scene.clone();
    for i in 0..n {
        let h0 = probe.surface.heights().as_slice()[i];
        probe.surface.heights_mut().as_mut_slice()[i] = h0 + step;
        let up = loss(&probe);
        probe.surface.heights_mut().as_mut_slice()[i] = h0 - step;
        let down = loss(&probe);
        probe.surface.heights_mut().as_mut_slice()[i] = h0;
        grads.d_heights.as_mut_slice()[i] = (up - down) / two_step;
    }
    for i in 0..n {
        let r0 = probe.specularity.raw().as_slice()[i];
        probe.specularity.raw_mut().as_mut_slice()[i] = r0 + step;
        let up = loss(&probe);
        probe.specularity.raw_mut().as_mut_slice()[i] = r0 - step;
        let down = loss(&probe);
        probe.specularity.raw_mut().as_mut_slice()[i] = r0;
        grads.d_theta_raw.as_mut_slice()[i] = (up - down) / two_step;
    }
    let b0 = probe.beta.raw();
    *probe.beta.raw_mut() = b0 + step;
    let up = loss(&probe);
    *probe.beta.raw_mut() = b0 - step;
    let down = loss(&probe);
    grads.d_beta_raw = (up - down) / two_step;
    grads
}
