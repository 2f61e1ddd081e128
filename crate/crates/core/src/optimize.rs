//! Inverse solver: recovers heights (and optionally specularity and
//! sharpness) from SAR images by stochastic gradient descent over batches of
//! azimuth planes.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::diff::{plane_squared_error_grad, GradMask, GradientSet};
use crate::error::{Error, Result};
use crate::geometry::{build_plane, sample_rays, ViewConfig};
use crate::math::Grid2;
use crate::metrics::{altitude_report, image_mse, AltitudeReport};
use crate::renderer::{render_image, SarImage};
use crate::scalar::Real;
use crate::scene::{DsmSurface, Scene, SharpnessParam, SpecularityMap, EXACT_LAMBERTIAN_RAW};

/// Piecewise-constant learning rate: `(first_step, lr)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    breakpoints: Vec<(usize, f64)>,
}

impl LrSchedule {
    pub fn new(breakpoints: Vec<(usize, f64)>) -> Result<Self> {
        if breakpoints.first().map(|b| b.0) != Some(0) {
            return Err(Error::InvalidConfig("schedule must start at step 0".into()));
        }
        if breakpoints.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidConfig("schedule breakpoints must be strictly increasing".into()));
        }
        if breakpoints.iter().any(|b| !(b.1 >= 0.0) || !b.1.is_finite()) {
            return Err(Error::InvalidConfig("learning rates must be finite and non-negative".into()));
        }
        Ok(Self { breakpoints })
    }

    pub fn breakpoints(&self) -> &[(usize, f64)] {
        &self.breakpoints
    }

    pub fn lr(&self, step: usize) -> f64 {
        self.breakpoints
            .iter()
            .take_while(|b| b.0 <= step)
            .last()
            .map_or(0.0, |b| b.1)
    }
}

impl Default for LrSchedule {
    /// 1.0, then 0.1 from step 5000 and 0.01 from step 8000.
    fn default() -> Self {
        Self {
            breakpoints: vec![(0, 1.0), (5000, 0.1), (8000, 0.01)],
        }
    }
}

/// How the Laplace sharpness evolves during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaMode {
    /// Optimized with the other parameters.
    Learned,
    /// Held at its initial value.
    Fixed,
    /// Geometric interpolation from the initial value to `final_beta` over the run.
    Anneal { final_beta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub steps: usize,
    pub lr_schedule: LrSchedule,
    pub plane_batch: usize,
    pub rays_per_plane: usize,
    /// Weight λ of the neighbor smoothness term.
    pub reg_weight: f64,
    pub learn_theta: bool,
    pub beta_mode: BetaMode,
    pub beta_init: f64,
    /// Height of the flat starting surface; the floor (0) by default, since a
    /// surface starting above the true echoes gets no carving gradient.
    pub height_init: f64,
    /// Initial raw specularity (θ = 1 + softplus(raw)) when θ is learned;
    /// otherwise the map is exactly Lambertian.
    pub theta_raw_init: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    /// Must sit well below the gradient scale: with ray-averaged profiles and
    /// a per-value mean loss, height gradients are ~1e-8 and θ gradients ~1e-12.
    pub adam_eps: f64,
    /// Height updates are taken in ground pixels when true, so a learning
    /// rate of 1 moves a cell by at most about one pixel per step.
    pub height_lr_in_pixels: bool,
    /// Learning-rate multipliers for raw θ and raw β relative to the schedule.
    pub theta_lr_scale: f64,
    pub beta_lr_scale: f64,
    /// Jitter ray origins while training.
    pub jitter: bool,
    pub seed: u64,
    /// Checkpoint period in steps; 0 disables checkpoints.
    pub checkpoint_every: usize,
    pub data_dir: Option<String>,
    pub out_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            lr_schedule: LrSchedule::default(),
            plane_batch: 64,
            rays_per_plane: 256,
            reg_weight: 1e-3,
            learn_theta: false,
            beta_mode: BetaMode::Fixed,
            beta_init: 0.05,
            height_init: 0.0,
            theta_raw_init: -5.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-14,
            height_lr_in_pixels: true,
            theta_lr_scale: 0.1,
            beta_lr_scale: 0.01,
            jitter: true,
            seed: 0,
            checkpoint_every: 0,
            data_dir: None,
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.plane_batch == 0 {
            return bad("plane_batch must be >= 1");
        }
        if self.rays_per_plane == 0 {
            return bad("rays_per_plane must be >= 1");
        }
        if !(self.reg_weight >= 0.0) || !self.reg_weight.is_finite() {
            return bad("reg_weight must be finite and non-negative");
        }
        if !(self.beta_init > 0.0) {
            return bad("beta_init must be positive");
        }
        if let BetaMode::Anneal { final_beta } = self.beta_mode {
            if !(final_beta > 0.0) {
                return bad("final beta must be positive");
            }
        }
        if !(0.0..=1.0).contains(&self.height_init) {
            return bad("height_init must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam decay rates must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        // re-check the schedule in case it was built by hand
        LrSchedule::new(self.lr_schedule.breakpoints.clone())?;
        Ok(())
    }
}

/// Mean squared error over every `(plane, bin)` pair.
pub fn data_loss<T: Real, A: AsRef<[T]>>(rendered: &[A], observed: &[A]) -> Result<T> {
    if rendered.len() != observed.len() {
        return Err(Error::shape(format!("{} profiles", observed.len()), rendered.len()));
    }
    let mut sum = T::zero();
    let mut count = 0usize;
    for (r, o) in rendered.iter().zip(observed) {
        let (r, o) = (r.as_ref(), o.as_ref());
        if r.len() != o.len() {
            return Err(Error::shape(format!("{} bins", o.len()), r.len()));
        }
        for (a, b) in r.iter().zip(o) {
            sum += (*a - *b) * (*a - *b);
        }
        count += r.len();
    }
    if count == 0 {
        return Ok(T::zero());
    }
    Ok(sum / T::from_usize_exact(count))
}

/// Mean squared difference over 4-connected neighbor pairs of a grid
/// (each unordered pair once). Zero for grids with no pairs.
pub fn smoothness_reg_grid<T: Real>(grid: &Grid2<T>) -> T {
    let (sum, pairs) = neighbor_pairs(grid, |_, _, _| {});
    if pairs == 0 {
        T::zero()
    } else {
        sum / T::from_usize_exact(pairs)
    }
}

pub fn smoothness_reg<T: Real>(surface: &DsmSurface<T>) -> T {
    smoothness_reg_grid(surface.heights())
}

/// Adds `weight · ∂reg/∂h` to `grad` and returns the regularizer value.
pub fn smoothness_reg_grad<T: Real>(grid: &Grid2<T>, weight: T, grad: &mut Grid2<T>) -> T {
    let pairs = grid.width().saturating_sub(1) * grid.height() + grid.width() * grid.height().saturating_sub(1);
    if pairs == 0 {
        return T::zero();
    }
    let scale = T::lit(2.0) * weight / T::from_usize_exact(pairs);
    let g = grad.as_mut_slice();
    let (sum, _) = neighbor_pairs(grid, |a, b, diff| {
        g[a] += scale * diff;
        g[b] -= scale * diff;
    });
    sum / T::from_usize_exact(pairs)
}

fn neighbor_pairs<T: Real>(grid: &Grid2<T>, mut visit: impl FnMut(usize, usize, T)) -> (T, usize) {
    let (w, h) = (grid.width(), grid.height());
    let d = grid.as_slice();
    let mut sum = T::zero();
    let mut pairs = 0;
    for r in 0..h {
        for c in 0..w {
            let a = r * w + c;
            if c + 1 < w {
                let diff = d[a] - d[a + 1];
                sum += diff * diff;
                visit(a, a + 1, diff);
                pairs += 1;
            }
            if r + 1 < h {
                let diff = d[a] - d[a + w];
                sum += diff * diff;
                visit(a, a + w, diff);
                pairs += 1;
            }
        }
    }
    (sum, pairs)
}

/// First and second moment estimates of one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> AdamMoments<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }

    /// One bias-corrected Adam update; `t` is the 1-based update count.
    pub fn update(&mut self, params: &mut [T], grads: &[T], lr: T, t: usize, cfg: &RunConfig) {
        let b1 = T::lit(cfg.adam_beta1);
        let b2 = T::lit(cfg.adam_beta2);
        let eps = T::lit(cfg.adam_eps);
        let one = T::one();
        let c1 = one - b1.powi(t as i32);
        let c2 = one - b2.powi(t as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Complete optimizer state; everything needed to resume a run bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub scene: Scene<T>,
    pub heights_moments: AdamMoments<T>,
    pub theta_moments: AdamMoments<T>,
    pub beta_moments: AdamMoments<T>,
    /// Number of completed steps.
    pub step: usize,
    pub loss_history: Vec<f64>,
}

impl<T: Real> TrainState<T> {
    /// Flat surface at `height_init`, θ from `theta_raw_init`, β = `beta_init`.
    pub fn initial(width: usize, height: usize, cfg: &RunConfig) -> Result<Self> {
        let surface = DsmSurface::flat(width, height, T::lit(cfg.height_init))?;
        let raw = if cfg.learn_theta {
            cfg.theta_raw_init
        } else {
            EXACT_LAMBERTIAN_RAW
        };
        let specularity = SpecularityMap::uniform_raw(width, height, T::lit(raw));
        let beta = SharpnessParam::new(T::lit(cfg.beta_init))?;
        let n = width * height;
        Ok(Self {
            scene: Scene::new(surface, specularity, beta)?,
            heights_moments: AdamMoments::zeros(n),
            theta_moments: AdamMoments::zeros(n),
            beta_moments: AdamMoments::zeros(1),
            step: 0,
            loss_history: Vec::new(),
        })
    }
}

/// One azimuth plane of one observed view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchItem {
    pub view: usize,
    pub plane: usize,
}

const BATCH_DOMAIN: u64 = 0x6261_7463_685f_7273;
const JITTER_DOMAIN: u64 = 0x6a69_7474_6572_5f72;

/// Draws `size` planes uniformly with replacement over all views.
pub fn sample_batch(views: &[ViewConfig], size: usize, seed: u64, step: usize) -> Vec<BatchItem> {
    let total: usize = views.iter().map(|v| v.n_planes).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ BATCH_DOMAIN);
    rng.set_stream(step as u64);
    (0..size)
        .map(|_| {
            let mut k = rng.gen_range(0..total);
            let mut view = 0;
            while k >= views[view].n_planes {
                k -= views[view].n_planes;
                view += 1;
            }
            BatchItem { view, plane: k }
        })
        .collect()
}

fn jitter_rng(seed: u64, step: usize, slot: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ JITTER_DOMAIN);
    rng.set_stream(step as u64);
    rng.set_word_pos((slot as u128) << 24);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// Index of the step just taken (0-based).
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub data_loss: f64,
    pub reg: f64,
    pub beta: f64,
    pub grad_max: f64,
}

/// Runs optimizer steps against a fixed set of observed images.
pub struct Trainer<'a, T> {
    images: &'a [SarImage<T>],
    views: Vec<ViewConfig>,
    cfg: RunConfig,
    pub state: TrainState<T>,
}

impl<'a, T: Real> Trainer<'a, T> {
    /// Starts from the flat initialization of `cfg`.
    pub fn new(images: &'a [SarImage<T>], views: &[ViewConfig], grid: (usize, usize), cfg: RunConfig) -> Result<Self> {
        let state = TrainState::initial(grid.0, grid.1, &cfg)?;
        Self::resume(images, views, cfg, state)
    }

    /// Continues from a saved state.
    pub fn resume(images: &'a [SarImage<T>], views: &[ViewConfig], cfg: RunConfig, state: TrainState<T>) -> Result<Self> {
        cfg.validate()?;
        if images.is_empty() {
            return Err(Error::InvalidConfig("at least one image is required".into()));
        }
        if images.len() != views.len() {
            return Err(Error::shape(format!("{} views", views.len()), format!("{} images", images.len())));
        }
        let mut training_views = Vec::with_capacity(views.len());
        for (img, view) in images.iter().zip(views) {
            view.validate()?;
            if !img.matches_view(view) {
                return Err(Error::shape(
                    format!("{}x{}", view.n_planes, view.n_range_bins),
                    format!("{}x{}", img.n_planes(), img.n_range_bins()),
                ));
            }
            training_views.push(ViewConfig {
                n_rays: cfg.rays_per_plane,
                ..*view
            });
        }
        Ok(Self {
            images,
            views: training_views,
            cfg,
            state,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn views(&self) -> &[ViewConfig] {
        &self.views
    }

    fn beta_schedule(&self, step: usize) -> Option<f64> {
        match self.cfg.beta_mode {
            BetaMode::Anneal { final_beta } => {
                let frac = step as f64 / self.cfg.steps.max(1) as f64;
                Some(self.cfg.beta_init * (final_beta / self.cfg.beta_init).powf(frac))
            }
            _ => None,
        }
    }

    /// Takes one optimizer step on the batch drawn for the current step.
    pub fn step(&mut self) -> Result<StepReport> {
        let step = self.state.step;
        let batch = sample_batch(&self.views, self.cfg.plane_batch, self.cfg.seed, step);
        self.step_on(&batch)
    }

    /// Takes one optimizer step on an explicit batch.
    pub fn step_on(&mut self, batch: &[BatchItem]) -> Result<StepReport> {
        let step = self.state.step;
        let cfg = &self.cfg;
        if let Some(beta) = self.beta_schedule(step) {
            self.state.scene.beta = SharpnessParam::new(T::lit(beta))?;
        }
        let scene = &self.state.scene;
        let mask = GradMask {
            heights: true,
            theta: cfg.learn_theta,
            beta: cfg.beta_mode == BetaMode::Learned,
        };
        let n_values: usize = batch.iter().map(|b| self.views[b.view].n_range_bins).sum();
        let weight = T::from_usize_exact(n_values).recip();
        let per_item: Vec<(T, GradientSet<T>)> = batch
            .par_iter()
            .enumerate()
            .map(|(slot, item)| {
                let view = &self.views[item.view];
                let plane = build_plane(view, item.plane)?;
                let origins = if cfg.jitter {
                    sample_rays(&plane, view, Some(&mut jitter_rng(cfg.seed, step, slot)))
                } else {
                    sample_rays::<T, ChaCha8Rng>(&plane, view, None)
                };
                let observed = self.images[item.view].profile(item.plane);
                let mut g = GradientSet::zeros_like(scene);
                let sse = plane_squared_error_grad(scene, &plane, view, &origins, observed, weight, mask, &mut g)?;
                Ok((sse, g))
            })
            .collect::<Result<_>>()?;

        let mut grads = GradientSet::zeros_like(scene);
        let mut sse = T::zero();
        for (s, g) in &per_item {
            sse += *s;
            grads.merge(g);
        }
        let data = sse * weight;
        let reg = smoothness_reg_grad(scene.surface.heights(), T::lit(cfg.reg_weight), &mut grads.d_heights);
        let loss = data + T::lit(cfg.reg_weight) * reg;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                diagnostics: format!(
                    "data={data} reg={reg} beta={} batch={batch:?}",
                    scene.beta.beta()
                ),
            });
        }
        if let Some(d) = grads.non_finite() {
            return Err(Error::NonFiniteGradient { step, diagnostics: d });
        }

        let lr = cfg.lr_schedule.lr(step);
        let t = step + 1;
        let state = &mut self.state;
        let height_lr = if cfg.height_lr_in_pixels {
            T::lit(lr) * state.scene.surface.cell_size()
        } else {
            T::lit(lr)
        };
        state.heights_moments.update(
            state.scene.surface.heights_mut().as_mut_slice(),
            grads.d_heights.as_slice(),
            height_lr,
            t,
            cfg,
        );
        state.scene.surface.clamp_heights();
        if cfg.learn_theta {
            state.theta_moments.update(
                state.scene.specularity.raw_mut().as_mut_slice(),
                grads.d_theta_raw.as_slice(),
                T::lit(lr * cfg.theta_lr_scale),
                t,
                cfg,
            );
        }
        if mask.beta {
            let mut raw = [state.scene.beta.raw()];
            state
                .beta_moments
                .update(&mut raw, &[grads.d_beta_raw], T::lit(lr * cfg.beta_lr_scale), t, cfg);
            *state.scene.beta.raw_mut() = raw[0];
        }
        let loss = loss.to_f64_lossless();
        state.loss_history.push(loss);
        state.step += 1;
        Ok(StepReport {
            step,
            lr,
            loss,
            data_loss: data.to_f64_lossless(),
            reg: reg.to_f64_lossless(),
            beta: state.scene.beta.beta().to_f64_lossless(),
            grad_max: grads.max_abs().to_f64_lossless(),
        })
    }

    /// Steps until `until` steps are complete (capped at the configured total).
    pub fn run_until(&mut self, until: usize, mut observer: impl FnMut(&StepReport, &TrainState<T>)) -> Result<()> {
        let until = until.min(self.cfg.steps);
        while self.state.step < until {
            let report = self.step()?;
            observer(&report, &self.state);
        }
        Ok(())
    }

    /// Noiseless, unjittered renders of the current scene for every view.
    pub fn render_views(&self) -> Result<Vec<SarImage<T>>> {
        self.views
            .iter()
            .enumerate()
            .map(|(k, v)| render_image(&self.state.scene, v, k, false, 0))
            .collect()
    }

    /// Final report; altitude metrics only when a ground truth is supplied.
    pub fn report(&self, truth: Option<&DsmSurface<T>>, wall_time_s: f64) -> Result<FitReport> {
        let renders = self.render_views()?;
        let per_view_residual = renders
            .iter()
            .zip(self.images)
            .map(|(r, o)| image_mse(r, o).map(|x| x.to_f64_lossless()))
            .collect::<Result<_>>()?;
        let altitude = truth
            .map(|t| {
                altitude_report(&self.state.scene.surface, t).map(|a| AltitudeReport {
                    rmse: a.rmse.to_f64_lossless(),
                    mae: a.mae.to_f64_lossless(),
                    median: a.median.to_f64_lossless(),
                })
            })
            .transpose()?;
        let theta = self.state.scene.specularity.theta_grid();
        let th = theta.as_slice();
        Ok(FitReport {
            steps: self.state.step,
            loss_history: self.state.loss_history.clone(),
            per_view_residual,
            altitude,
            reg_weight: self.cfg.reg_weight,
            final_beta: self.state.scene.beta.beta().to_f64_lossless(),
            theta_mean: th.iter().map(|t| t.to_f64_lossless()).sum::<f64>() / th.len() as f64,
            smoothness: smoothness_reg(&self.state.scene.surface).to_f64_lossless(),
            wall_time_s,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub steps: usize,
    pub loss_history: Vec<f64>,
    /// Image MSE between the final noiseless render and each observed image.
    pub per_view_residual: Vec<f64>,
    pub altitude: Option<AltitudeReport<f64>>,
    pub reg_weight: f64,
    pub final_beta: f64,
    pub theta_mean: f64,
    pub smoothness: f64,
    pub wall_time_s: f64,
}

impl FitReport {
    /// `key=value` lines.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let mut kv = vec![
            ("steps".to_string(), self.steps.to_string()),
            (
                "final_loss".to_string(),
                self.loss_history.last().map_or("nan".into(), |l| l.to_string()),
            ),
            ("reg_weight".to_string(), self.reg_weight.to_string()),
            ("final_beta".to_string(), self.final_beta.to_string()),
            ("theta_mean".to_string(), self.theta_mean.to_string()),
            ("smoothness".to_string(), self.smoothness.to_string()),
            ("wall_time_s".to_string(), format!("{:.3}", self.wall_time_s)),
        ];
        if let Some(a) = &self.altitude {
            kv.push(("altitude_rmse".into(), a.rmse.to_string()));
            kv.push(("altitude_mae".into(), a.mae.to_string()));
            kv.push(("altitude_median".into(), a.median.to_string()));
        }
        for (k, r) in self.per_view_residual.iter().enumerate() {
            kv.push((format!("view.{k}.residual"), r.to_string()));
        }
        kv
    }
}

/// Recovered scene and run report.
#[derive(Debug, Clone)]
pub struct FitOutput<T> {
    pub surface: DsmSurface<T>,
    pub specularity: SpecularityMap<T>,
    pub beta: SharpnessParam<T>,
    pub report: FitReport,
}

/// Runs `cfg.steps` optimizer steps from a flat surface of `grid` cells.
pub fn fit<T: Real>(
    images: &[SarImage<T>],
    views: &[ViewConfig],
    grid: (usize, usize),
    cfg: &RunConfig,
    truth: Option<&DsmSurface<T>>,
    observer: impl FnMut(&StepReport, &TrainState<T>),
) -> Result<FitOutput<T>> {
    let start = Instant::now();
    let mut trainer = Trainer::new(images, views, grid, cfg.clone())?;
    trainer.run_until(cfg.steps, observer)?;
    let report = trainer.report(truth, start.elapsed().as_secs_f64())?;
    let scene = trainer.state.scene;
    Ok(FitOutput {
        surface: scene.surface,
        specularity: scene.specularity,
        beta: scene.beta,
        report,
    })
}
