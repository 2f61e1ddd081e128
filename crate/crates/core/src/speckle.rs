//! Single-look multiplicative speckle, `I = n·R` with `n ~ Γ(1, 1)`.
//!
//! Every pixel draws from its own position in a ChaCha stream keyed by
//! `(seed, view, plane)` and indexed by the range bin, so regeneration does
//! not depend on iteration order or threading.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::ViewConfig;
use crate::renderer::{render_image, SarImage};
use crate::scene::Scene;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseConfig {
    pub seed: u64,
    /// Number of looks; only single-look speckle is modeled.
    pub looks: u32,
}

impl NoiseConfig {
    pub fn single_look(seed: u64) -> Self {
        Self { seed, looks: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.looks != 1 {
            return Err(Error::UnsupportedLooks(self.looks));
        }
        Ok(())
    }
}

/// Γ(1, 1) draw for pixel `(view, plane, bin)`, as `−ln(1 − u)` with `u ∈ [0, 1)`.
pub fn speckle_draw(seed: u64, view: usize, plane: usize, bin: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((view as u64) << 32) | plane as u64);
    rng.set_word_pos(2 * bin as u128);
    let u: f64 = rng.gen();
    -(-u).ln_1p()
}

/// Multiplies every amplitude by an independent Γ(1, 1) draw.
pub fn apply_speckle<T: Real>(image: &SarImage<T>, cfg: &NoiseConfig) -> Result<SarImage<T>> {
    cfg.validate()?;
    let view = image.view_id;
    Ok(image
        .map(|plane, bin, a| a * T::lit(speckle_draw(cfg.seed, view, plane, bin)))
        .with_noisy(true))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeckleStats {
    /// Pixels where the reference exceeds the comparison threshold.
    pub count: usize,
    pub mean_ratio: f64,
    pub variance_ratio: f64,
    /// Kolmogorov–Smirnov distance of the ratios to Exp(1).
    pub ks_distance: f64,
}

/// Reference amplitudes at or below this are excluded from ratio statistics.
pub const REFERENCE_FLOOR: f64 = 1e-9;

/// Statistics of `image / reference` over pixels with a positive reference.
pub fn speckle_statistics<T: Real>(image: &SarImage<T>, reference: &SarImage<T>) -> Result<SpeckleStats> {
    if image.n_planes() != reference.n_planes() || image.n_range_bins() != reference.n_range_bins() {
        return Err(Error::shape(
            format!("{}x{}", reference.n_planes(), reference.n_range_bins()),
            format!("{}x{}", image.n_planes(), image.n_range_bins()),
        ));
    }
    let ratios: Vec<f64> = image
        .data()
        .iter()
        .zip(reference.data())
        .filter(|(_, r)| r.to_f64_lossless() > REFERENCE_FLOOR)
        .map(|(i, r)| i.to_f64_lossless() / r.to_f64_lossless())
        .collect();
    Ok(ratio_statistics(ratios))
}

/// Mean, variance and KS distance to Exp(1) of a sample of ratios.
pub fn ratio_statistics(mut ratios: Vec<f64>) -> SpeckleStats {
    let n = ratios.len();
    if n == 0 {
        return SpeckleStats {
            count: 0,
            mean_ratio: f64::NAN,
            variance_ratio: f64::NAN,
            ks_distance: f64::NAN,
        };
    }
    let nf = n as f64;
    let mean = ratios.iter().sum::<f64>() / nf;
    let variance = ratios.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / nf;
    ratios.sort_by(f64::total_cmp);
    let ks = ratios
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = if x > 0.0 { -(-x).exp_m1() } else { 0.0 };
            let lo = cdf - i as f64 / nf;
            let hi = (i + 1) as f64 / nf - cdf;
            lo.max(hi)
        })
        .fold(0.0, f64::max);
    SpeckleStats {
        count: n,
        mean_ratio: mean,
        variance_ratio: variance,
        ks_distance: ks,
    }
}

/// Asymptotic one-sample KS critical value at the 1% level.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// Noiseless and speckled images of `scene` for every view (no ray jitter).
pub fn simulate_acquisitions<T: Real>(
    scene: &Scene<T>,
    views: &[ViewConfig],
    noise: &NoiseConfig,
) -> Result<(Vec<SarImage<T>>, Vec<SarImage<T>>)> {
    noise.validate()?;
    let clean = views
        .iter()
        .enumerate()
        .map(|(k, v)| render_image(scene, v, k, false, 0))
        .collect::<Result<Vec<_>>>()?;
    let noisy = clean
        .iter()
        .map(|img| apply_speckle(img, noise))
        .collect::<Result<Vec<_>>>()?;
    Ok((clean, noisy))
}
