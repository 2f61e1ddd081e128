use std::path::Path;

use radar_fields::io::checkpoint::{checkpoint_bytes, parse_checkpoint};
use radar_fields::io::{make_scene, ExperimentConfig};
use radar_fields::optimize::{sample_batch, TrainState, Trainer};
use radar_fields::{
    fit, render_image, simulate_acquisitions, BetaMode, Image, LrSchedule, NoiseConfig, RunConfig, SceneF64, Surface,
    ViewConfig,
};

const N: usize = 16;

fn views(count: usize) -> Vec<ViewConfig> {
    (0..count)
        .map(|k| ViewConfig::covering(1.1 * k as f64 + 0.2, 0.7 + 0.1 * k as f64, N, 32, 16).unwrap())
        .collect()
}

fn pyramid() -> SceneF64 {
    make_scene::<f64>("pyramid", N).unwrap().to_scene(0.05).unwrap()
}

fn small_run(steps: usize) -> RunConfig {
    RunConfig {
        steps,
        lr_schedule: LrSchedule::new(vec![(0, 1.0), (steps / 2, 0.1)]).unwrap(),
        plane_batch: 8,
        rays_per_plane: 16,
        height_init: 0.0,
        seed: 21,
        ..RunConfig::default()
    }
}

fn data(views: &[ViewConfig], noisy: bool) -> Vec<Image> {
    let (clean, speckled) = simulate_acquisitions(&pyramid(), views, &NoiseConfig::single_look(4)).unwrap();
    if noisy {
        speckled
    } else {
        clean
    }
}

#[test]
fn self_consistent_state_has_vanishing_gradient() {
    let views = views(3);
    let scene = pyramid();
    let images: Vec<Image> = views
        .iter()
        .enumerate()
        .map(|(k, v)| render_image(&scene, v, k, false, 0).unwrap())
        .collect();
    let cfg = RunConfig {
        reg_weight: 0.0,
        jitter: false,
        beta_mode: BetaMode::Fixed,
        ..small_run(4)
    };
    let mut state = TrainState::initial(N, N, &cfg).unwrap();
    state.scene = scene;
    let mut trainer = Trainer::resume(&images, &views, cfg, state).unwrap();
    let report = trainer.step().unwrap();
    assert_eq!(report.data_loss, 0.0);
    assert!(report.grad_max < 1e-8, "gradient {}", report.grad_max);
}

#[test]
fn repeated_steps_on_a_frozen_batch_descend() {
    let views = views(3);
    let images = data(&views, false);
    let cfg = RunConfig {
        lr_schedule: LrSchedule::new(vec![(0, 0.01)]).unwrap(),
        jitter: false,
        height_init: 0.5,
        ..small_run(50)
    };
    let batch = sample_batch(&views, cfg.plane_batch, cfg.seed, 0);
    let mut trainer = Trainer::new(&images, &views, (N, N), cfg).unwrap();
    let losses: Vec<f64> = (0..50).map(|_| trainer.step_on(&batch).unwrap().loss).collect();
    assert!(losses[49] < losses[0], "{} !< {}", losses[49], losses[0]);
}

#[test]
fn checkpoint_resume_matches_uninterrupted_run() {
    let views = views(2);
    let images = data(&views, true);
    let cfg = small_run(12);
    let mut whole = Trainer::new(&images, &views, (N, N), cfg.clone()).unwrap();
    whole.run_until(12, |_, _| {}).unwrap();

    let mut first = Trainer::new(&images, &views, (N, N), cfg.clone()).unwrap();
    first.run_until(5, |_, _| {}).unwrap();
    let experiment = ExperimentConfig {
        run: cfg.clone(),
        views: views.clone(),
        noise: NoiseConfig::single_look(4),
        grid_width: N,
        grid_height: N,
    };
    let bytes = checkpoint_bytes(&experiment, &first.state);
    drop(first);
    let restored = parse_checkpoint::<f64>(&bytes, Path::new("mem")).unwrap();
    assert_eq!(restored.config, experiment);
    let mut second = Trainer::resume(&images, &views, restored.config.run, restored.state).unwrap();
    second.run_until(12, |_, _| {}).unwrap();

    assert_eq!(whole.state.loss_history, second.state.loss_history);
    assert_eq!(whole.state.scene, second.state.scene);
}

#[test]
fn replay_is_bitwise_identical() {
    let views = views(2);
    let images = data(&views, true);
    let run = || fit(&images, &views, (N, N), &small_run(8), None, |_, _| {}).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.report.loss_history, b.report.loss_history);
    assert_eq!(a.surface, b.surface);
}

#[test]
fn stronger_regularization_gives_smoother_surfaces() {
    let views = views(3);
    let images = data(&views, true);
    let smoothness: Vec<f64> = [1e-4, 1e-1, 10.0]
        .iter()
        .map(|&reg_weight| {
            let cfg = RunConfig {
                reg_weight,
                ..small_run(30)
            };
            fit(&images, &views, (N, N), &cfg, None, |_, _| {}).unwrap().report.smoothness
        })
        .collect();
    assert!(
        smoothness[0] > smoothness[1] && smoothness[1] > smoothness[2],
        "{smoothness:?}"
    );
}

#[test]
fn single_view_run_completes_with_finite_metrics() {
    let views = views(1);
    let images = data(&views, true);
    let truth: Surface = pyramid().surface;
    let out = fit(&images, &views, (N, N), &small_run(20), Some(&truth), |_, _| {}).unwrap();
    let report = out.report;
    assert_eq!(report.per_view_residual.len(), 1);
    assert!(report.per_view_residual[0].is_finite());
    let a = report.altitude.unwrap();
    assert!(a.rmse.is_finite() && a.mae.is_finite() && a.median.is_finite());
    assert!(report.loss_history.iter().all(|l| l.is_finite()));
}
