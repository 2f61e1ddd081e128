//! Forward SAR model.
//!
//! Along every ray of an azimuth plane the implicit surface value is mapped to
//! a pseudo-density by the Laplace CDF, turned into per-sample opacity and
//! transmittance, and weighted by the back-scattered reflectance. Unlike an
//! optical radiance field the weighted samples are summed *across* rays: all
//! samples at the same range distance land in the same range bin.
//!
//! Opacity uses the range step expressed in ground pixels
//! (`Δd / cell_size`), i.e. the pseudo-density is an extinction per ground
//! pixel. Profiles are averaged over rays so amplitudes do not depend on the
//! number of rays.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{build_plane, sample_rays, AzimuthPlane, ViewConfig};
use crate::math::Vec3;
use crate::scalar::Real;
use crate::scene::{bilinear_patch, footprint, theta_from_raw, Footprint, Scene};

/// Laplace CDF used as pseudo-density: `½e^{−d/β}` for `d ≥ 0`,
/// `1 − ½e^{d/β}` otherwise.
#[inline(always)]
pub fn laplace_cdf<T: Real>(d: T, beta: T) -> T {
    let half = T::lit(0.5);
    if d >= T::zero() {
        half * (-d / beta).exp()
    } else {
        T::one() - half * (d / beta).exp()
    }
}

/// Pseudo-density at `p`: the Laplace CDF of the implicit surface value.
pub fn pseudo_density<T: Real>(scene: &Scene<T>, p: Vec3<T>) -> T {
    laplace_cdf(scene.surface.implicit_value(p), scene.beta.beta())
}

/// Opacities `α_i = 1 − e^{−σ_i·Δd}` and transmittances `T_i = Π_{k<i}(1 − α_k)`.
pub fn ray_transmittance<T: Real>(sigmas: &[T], range_step: T) -> (Vec<T>, Vec<T>) {
    let mut alphas = Vec::with_capacity(sigmas.len());
    let mut trans = Vec::with_capacity(sigmas.len());
    let mut t = T::one();
    for &s in sigmas {
        let keep = (-s * range_step).exp();
        alphas.push(T::one() - keep);
        trans.push(t);
        t *= keep;
    }
    (alphas, trans)
}

/// Back-scattered amplitude `max(0, −⟨v, n⟩)^θ` for unit `v` and `n`.
pub fn reflectance<T: Real>(v: Vec3<T>, n: Vec3<T>, theta: T) -> T {
    let q = (-v.dot(n)).max(T::zero());
    cosine_power(q, theta)
}

#[inline(always)]
fn cosine_power<T: Real>(q: T, theta: T) -> T {
    if q <= T::zero() {
        T::zero()
    } else if theta == T::one() {
        q
    } else {
        q.powf(theta)
    }
}

/// Intermediates of one sample, enough to differentiate it exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRecord<T> {
    pub footprint: Footprint<T>,
    /// Implicit value `z − dsm(x, y)`.
    pub implicit: T,
    pub sigma: T,
    pub alpha: T,
    /// Transmittance reaching this sample.
    pub transmittance: T,
    /// Clamped cosine `max(0, −⟨v, n⟩)`.
    pub cosine: T,
    pub theta: T,
    pub reflectance: T,
    pub slope_x: T,
    pub slope_y: T,
    /// `1 / ‖(−∂h/∂x, −∂h/∂y, 1)‖`.
    pub inv_norm: T,
    /// `T·α·r`.
    pub contribution: T,
}

/// Per-plane constants shared by every sample evaluation.
pub(crate) struct Kernel<'a, T> {
    scene: &'a Scene<T>,
    /// θ per cell, `None` when the map is exactly Lambertian.
    theta: Option<Vec<T>>,
    pub(crate) v: Vec3<T>,
    pub(crate) beta: T,
    /// Range step in ground pixels.
    pub(crate) step_eff: T,
    distances: Vec<T>,
}

impl<'a, T: Real> Kernel<'a, T> {
    pub(crate) fn new(scene: &'a Scene<T>, plane: &AzimuthPlane<T>, view: &ViewConfig) -> Self {
        let theta = if scene.specularity.is_lambertian() {
            None
        } else {
            Some(scene.specularity.raw().as_slice().iter().map(|&r| theta_from_raw(r)).collect())
        };
        let step = T::lit(view.range_step);
        Self {
            scene,
            theta,
            v: plane.v,
            beta: scene.beta.beta(),
            step_eff: step / scene.surface.cell_size(),
            distances: (0..view.n_range_bins).map(|i| T::lit(view.range_distance(i))).collect(),
        }
    }

    pub(crate) fn n_bins(&self) -> usize {
        self.distances.len()
    }

    pub(crate) fn has_theta(&self) -> bool {
        self.theta.is_some()
    }

    #[inline(always)]
    fn sample(&self, p: Vec3<T>, transmittance: T) -> (SampleRecord<T>, T) {
        let surface = &self.scene.surface;
        let fp = footprint(surface.width(), surface.height_cells(), p.x, p.y);
        let patch = bilinear_patch(surface.heights(), &fp);
        let implicit = p.z - patch.value;
        let sigma = laplace_cdf(implicit, self.beta);
        let keep = (-sigma * self.step_eff).exp();
        let alpha = T::one() - keep;
        let inv_norm = (T::one() + patch.dx * patch.dx + patch.dy * patch.dy).sqrt().recip();
        let cosine = ((self.v.x * patch.dx + self.v.y * patch.dy - self.v.z) * inv_norm).max(T::zero());
        let theta = match &self.theta {
            None => T::one(),
            Some(th) => {
                let w = fp.weights();
                let idx = fp.indices(surface.width());
                w[0] * th[idx[0]] + w[1] * th[idx[1]] + w[2] * th[idx[2]] + w[3] * th[idx[3]]
            }
        };
        let refl = cosine_power(cosine, theta);
        let record = SampleRecord {
            footprint: fp,
            implicit,
            sigma,
            alpha,
            transmittance,
            cosine,
            theta,
            reflectance: refl,
            slope_x: patch.dx,
            slope_y: patch.dy,
            inv_norm,
            contribution: transmittance * alpha * refl,
        };
        (record, transmittance * keep)
    }

    /// Evaluates every sample of the ray starting at `origin`, calling `visit`
    /// with the bin index and its record.
    #[inline(always)]
    pub(crate) fn march(&self, origin: Vec3<T>, mut visit: impl FnMut(usize, &SampleRecord<T>)) {
        let mut t = T::one();
        for (i, &d) in self.distances.iter().enumerate() {
            let (rec, next) = self.sample(origin + self.v * d, t);
            visit(i, &rec);
            t = next;
        }
    }
}

/// Recorded forward intermediates of one azimuth plane.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderTape<T> {
    pub plane_index: usize,
    pub n_rays: usize,
    pub n_range_bins: usize,
    /// Shape of the parameter rasters the tape was recorded against.
    pub grid_width: usize,
    pub grid_height: usize,
    /// Ray origins actually used (after jitter).
    pub origins: Vec<Vec3<T>>,
    pub v: Vec3<T>,
    pub beta: T,
    /// Range step in ground pixels.
    pub step_eff: T,
    pub lambertian: bool,
    /// Ray-major: `records[j * n_range_bins + i]`.
    pub records: Vec<SampleRecord<T>>,
}

impl<T: Real> RenderTape<T> {
    pub fn ray(&self, j: usize) -> &[SampleRecord<T>] {
        &self.records[j * self.n_range_bins..(j + 1) * self.n_range_bins]
    }

    /// Re-runs the forward pass from the recorded origins and checks every
    /// stored value is reproduced bit-for-bit.
    pub fn replays(&self, scene: &Scene<T>, plane: &AzimuthPlane<T>, view: &ViewConfig) -> bool {
        let (_, again) = render_plane_from_origins(scene, plane, view, &self.origins);
        again.records == self.records
    }
}

/// Radar image of one view: rows are azimuth planes, columns range bins.
#[derive(Debug, Clone, PartialEq)]
pub struct SarImage<T> {
    n_planes: usize,
    n_range_bins: usize,
    data: Vec<T>,
    pub view_id: usize,
    pub noisy: bool,
}

impl<T: Real> SarImage<T> {
    pub fn new(n_planes: usize, n_range_bins: usize, data: Vec<T>, view_id: usize, noisy: bool) -> Result<Self> {
        if data.len() != n_planes * n_range_bins {
            return Err(Error::shape(n_planes * n_range_bins, data.len()));
        }
        if let Some(i) = data.iter().position(|a| !a.is_finite() || *a < T::zero()) {
            return Err(Error::InvalidConfig(format!(
                "SAR amplitude at index {i} is negative or non-finite"
            )));
        }
        Ok(Self {
            n_planes,
            n_range_bins,
            data,
            view_id,
            noisy,
        })
    }

    pub fn n_planes(&self) -> usize {
        self.n_planes
    }

    pub fn n_range_bins(&self) -> usize {
        self.n_range_bins
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, plane: usize, bin: usize) -> T {
        self.data[plane * self.n_range_bins + bin]
    }

    pub fn profile(&self, plane: usize) -> &[T] {
        &self.data[plane * self.n_range_bins..(plane + 1) * self.n_range_bins]
    }

    pub fn matches_view(&self, view: &ViewConfig) -> bool {
        self.n_planes == view.n_planes && self.n_range_bins == view.n_range_bins
    }

    pub(crate) fn map(&self, mut f: impl FnMut(usize, usize, T) -> T) -> Self {
        let nb = self.n_range_bins;
        Self {
            data: self
                .data
                .iter()
                .enumerate()
                .map(|(k, &a)| f(k / nb, k % nb, a))
                .collect(),
            ..self.clone()
        }
    }

    pub(crate) fn with_noisy(mut self, noisy: bool) -> Self {
        self.noisy = noisy;
        self
    }
}

/// Range profile from explicit ray origins, without keeping a tape.
pub fn profile_from_origins<T: Real>(
    scene: &Scene<T>,
    plane: &AzimuthPlane<T>,
    view: &ViewConfig,
    origins: &[Vec3<T>],
) -> Vec<T> {
    let kernel = Kernel::new(scene, plane, view);
    let mut profile = vec![T::zero(); kernel.n_bins()];
    for &o in origins {
        kernel.march(o, |i, rec| profile[i] += rec.contribution);
    }
    let inv = T::from_usize_exact(origins.len()).recip();
    profile.iter_mut().for_each(|s| *s *= inv);
    profile
}

/// Range profile and tape from explicit ray origins.
pub fn render_plane_from_origins<T: Real>(
    scene: &Scene<T>,
    plane: &AzimuthPlane<T>,
    view: &ViewConfig,
    origins: &[Vec3<T>],
) -> (Vec<T>, RenderTape<T>) {
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
    profile.iter_mut().for_each(|s| *s *= inv);
    let tape = RenderTape {
        plane_index: plane.plane_index,
        n_rays: origins.len(),
        n_range_bins: n,
        grid_width: scene.surface.width(),
        grid_height: scene.surface.height_cells(),
        origins: origins.to_vec(),
        v: kernel.v,
        beta: kernel.beta,
        step_eff: kernel.step_eff,
        lambertian: !kernel.has_theta(),
        records,
    };
    (profile, tape)
}

/// Renders one azimuth plane: samples rays (optionally jittered), marches them
/// and accumulates contributions per range bin.
pub fn render_plane<T: Real, R: Rng + ?Sized>(
    scene: &Scene<T>,
    plane: &AzimuthPlane<T>,
    view: &ViewConfig,
    jitter: Option<&mut R>,
) -> (Vec<T>, RenderTape<T>) {
    let origins = sample_rays(plane, view, jitter);
    render_plane_from_origins(scene, plane, view, &origins)
}

/// Jitter source of plane `plane_index` for a render seed.
pub fn plane_rng(seed: u64, plane_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(plane_index as u64);
    rng
}

/// Renders every azimuth plane of a view into a noiseless image.
pub fn render_image<T: Real>(
    scene: &Scene<T>,
    view: &ViewConfig,
    view_id: usize,
    jitter: bool,
    seed: u64,
) -> Result<SarImage<T>> {
    view.validate()?;
    let rows: Vec<Vec<T>> = (0..view.n_planes)
        .into_par_iter()
        .map(|k| {
            let plane = build_plane(view, k)?;
            let origins = if jitter {
                sample_rays(&plane, view, Some(&mut plane_rng(seed, k)))
            } else {
                sample_rays::<T, ChaCha8Rng>(&plane, view, None)
            };
            Ok(profile_from_origins(scene, &plane, view, &origins))
        })
        .collect::<Result<_>>()?;
    SarImage::new(view.n_planes, view.n_range_bins, rows.concat(), view_id, false)
}
