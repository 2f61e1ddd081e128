//! Human-readable `key = value` run configuration.
//!
//! Full-line `#` comments and blank lines are ignored. Angles are radians.
//! Views are `view.<k>.<field>` with contiguous indices from 0. Required:
//! `seed`, `view.<k>.heading_rad`, `view.<k>.incidence_rad`; everything else
//! falls back to the defaults, and the range slab of a view is derived from
//! its geometry when `range_origin`/`range_step` are absent.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{ViewConfig, DEFAULT_RANGE_BINS, DEFAULT_RAYS, DEFAULT_STANDOFF};
use crate::optimize::{BetaMode, LrSchedule, RunConfig};
use crate::speckle::NoiseConfig;

pub const DEFAULT_GRID: usize = 64;

/// Everything a `simulate` or `reconstruct` run needs besides file paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub run: RunConfig,
    pub views: Vec<ViewConfig>,
    pub noise: NoiseConfig,
    /// Cells of the reconstructed surface.
    pub grid_width: usize,
    pub grid_height: usize,
}

impl ExperimentConfig {
    /// The five-view setup on a 64×64 grid.
    pub fn five_view_default(seed: u64) -> Self {
        Self {
            run: RunConfig {
                seed,
                ..RunConfig::default()
            },
            views: ViewConfig::five_view_default(DEFAULT_GRID),
            noise: NoiseConfig::single_look(seed),
            grid_width: DEFAULT_GRID,
            grid_height: DEFAULT_GRID,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.run.validate()?;
        self.noise.validate()?;
        if self.views.is_empty() {
            return Err(Error::InvalidConfig("at least one view is required".into()));
        }
        for v in &self.views {
            v.validate()?;
        }
        if self.grid_width < 2 || self.grid_height < 2 {
            return Err(Error::InvalidConfig("grid must be at least 2x2".into()));
        }
        Ok(())
    }
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| Error::MalformedLine {
                line,
                content: raw.to_string(),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::MalformedLine {
                    line,
                    content: raw.to_string(),
                });
            }
            if map.insert(key.to_string(), (line, value.trim().to_string())).is_some() {
                return Err(Error::DuplicateKey {
                    key: key.to_string(),
                    line,
                });
            }
        }
        Ok(Self { map })
    }

    fn take_str(&mut self, key: &str) -> Option<String> {
        self.map.remove(key).map(|(_, v)| v)
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some((_, v)) => v.parse().map(Some).map_err(|_| Error::BadValue {
                key: key.to_string(),
                value: v,
            }),
        }
    }

    fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    fn require<T: FromStr>(&mut self, key: &str) -> Result<T> {
        self.take(key)?.ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    fn finish(self) -> Result<()> {
        match self.map.into_iter().min_by_key(|(_, (line, _))| *line) {
            None => Ok(()),
            Some((key, (line, _))) => Err(Error::UnknownKey { key, line }),
        }
    }
}

fn parse_schedule(key: &str, value: &str) -> Result<LrSchedule> {
    let bad = || Error::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    };
    let points = value
        .split(',')
        .map(|part| {
            let (step, lr) = part.split_once(':').ok_or_else(bad)?;
            Ok((
                step.trim().parse().map_err(|_| bad())?,
                lr.trim().parse().map_err(|_| bad())?,
            ))
        })
        .collect::<Result<Vec<(usize, f64)>>>()?;
    LrSchedule::new(points)
}

fn format_schedule(s: &LrSchedule) -> String {
    s.breakpoints()
        .iter()
        .map(|(step, lr)| format!("{step}:{lr}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Largest `k` with any `view.<k>.` key, plus one.
fn view_count(entries: &Entries) -> Result<usize> {
    let mut count = 0;
    for (key, (line, _)) in &entries.map {
        if let Some(rest) = key.strip_prefix("view.") {
            let index = rest
                .split_once('.')
                .and_then(|(k, _)| k.parse::<usize>().ok())
                .ok_or_else(|| Error::UnknownKey {
                    key: key.clone(),
                    line: *line,
                })?;
            count = count.max(index + 1);
        }
    }
    Ok(count)
}

fn parse_view(e: &mut Entries, k: usize, default_planes: usize) -> Result<ViewConfig> {
    let key = |f: &str| format!("view.{k}.{f}");
    let heading: f64 = e.require(&key("heading_rad"))?;
    let incidence: f64 = e.require(&key("incidence_rad"))?;
    let n_planes = e.take_or(&key("n_planes"), default_planes)?;
    let n_range_bins = e.take_or(&key("n_range_bins"), DEFAULT_RANGE_BINS)?;
    let n_rays = e.take_or(&key("n_rays"), DEFAULT_RAYS)?;
    let standoff = e.take_or(&key("standoff"), DEFAULT_STANDOFF)?;
    let mut view = ViewConfig::covering(heading, incidence, n_planes, n_range_bins, n_rays)?;
    // shift the derived slab with the standoff
    view.range_origin += standoff - view.standoff;
    view.standoff = standoff;
    match (e.take::<f64>(&key("range_origin"))?, e.take::<f64>(&key("range_step"))?) {
        (Some(o), Some(s)) => {
            view.range_origin = o;
            view.range_step = s;
        }
        (None, None) => {}
        (Some(_), None) => return Err(Error::MissingKey(key("range_step"))),
        (None, Some(_)) => return Err(Error::MissingKey(key("range_origin"))),
    }
    view.validate()?;
    Ok(view)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut e = Entries::parse(text)?;
    let d = RunConfig::default();
    let seed: u64 = e.require("seed")?;
    let grid_width = e.take_or("grid.width", DEFAULT_GRID)?;
    let grid_height = e.take_or("grid.height", DEFAULT_GRID)?;
    let lr_schedule = match e.take_str("lr_schedule") {
        Some(v) => parse_schedule("lr_schedule", &v)?,
        None => d.lr_schedule.clone(),
    };
    let beta_mode = match e.take_str("beta_mode").as_deref() {
        None => d.beta_mode,
        Some("learned") => BetaMode::Learned,
        Some("fixed") => BetaMode::Fixed,
        Some("anneal") => BetaMode::Anneal {
            final_beta: e.require("beta_final")?,
        },
        Some(other) => {
            return Err(Error::BadValue {
                key: "beta_mode".into(),
                value: other.into(),
            })
        }
    };
    let run = RunConfig {
        steps: e.take_or("steps", d.steps)?,
        lr_schedule,
        plane_batch: e.take_or("plane_batch", d.plane_batch)?,
        rays_per_plane: e.take_or("rays_per_plane", d.rays_per_plane)?,
        reg_weight: e.take_or("reg_weight", d.reg_weight)?,
        learn_theta: e.take_or("learn_theta", d.learn_theta)?,
        beta_mode,
        beta_init: e.take_or("beta_init", d.beta_init)?,
        height_init: e.take_or("height_init", d.height_init)?,
        theta_raw_init: e.take_or("theta_raw_init", d.theta_raw_init)?,
        adam_beta1: e.take_or("adam_beta1", d.adam_beta1)?,
        adam_beta2: e.take_or("adam_beta2", d.adam_beta2)?,
        adam_eps: e.take_or("adam_eps", d.adam_eps)?,
        height_lr_in_pixels: e.take_or("height_lr_in_pixels", d.height_lr_in_pixels)?,
        theta_lr_scale: e.take_or("theta_lr_scale", d.theta_lr_scale)?,
        beta_lr_scale: e.take_or("beta_lr_scale", d.beta_lr_scale)?,
        jitter: e.take_or("jitter", d.jitter)?,
        seed,
        checkpoint_every: e.take_or("checkpoint_every", d.checkpoint_every)?,
        data_dir: e.take_str("data_dir"),
        out_dir: e.take_str("out_dir"),
    };
    let noise = NoiseConfig {
        seed: e.take_or("noise.seed", seed)?,
        looks: e.take_or("noise.looks", 1)?,
    };
    let n_views = view_count(&e)?;
    let views = (0..n_views)
        .map(|k| parse_view(&mut e, k, grid_height))
        .collect::<Result<Vec<_>>>()?;
    if views.is_empty() {
        return Err(Error::MissingKey("view.0.heading_rad".into()));
    }
    e.finish()?;
    let cfg = ExperimentConfig {
        run,
        views,
        noise,
        grid_width,
        grid_height,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Serializes every field; floats use the shortest representation that
/// parses back to the same value.
pub fn format_config(cfg: &ExperimentConfig) -> String {
    let r = &cfg.run;
    let mut s = String::new();
    let mut kv = |k: &str, v: &dyn std::fmt::Display| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("seed", &r.seed);
    kv("grid.width", &cfg.grid_width);
    kv("grid.height", &cfg.grid_height);
    kv("steps", &r.steps);
    kv("lr_schedule", &format_schedule(&r.lr_schedule));
    kv("plane_batch", &r.plane_batch);
    kv("rays_per_plane", &r.rays_per_plane);
    kv("reg_weight", &r.reg_weight);
    kv("learn_theta", &r.learn_theta);
    match r.beta_mode {
        BetaMode::Learned => kv("beta_mode", &"learned"),
        BetaMode::Fixed => kv("beta_mode", &"fixed"),
        BetaMode::Anneal { final_beta } => {
            kv("beta_mode", &"anneal");
            kv("beta_final", &final_beta);
        }
    }
    kv("beta_init", &r.beta_init);
    kv("height_init", &r.height_init);
    kv("theta_raw_init", &r.theta_raw_init);
    kv("adam_beta1", &r.adam_beta1);
    kv("adam_beta2", &r.adam_beta2);
    kv("adam_eps", &r.adam_eps);
    kv("height_lr_in_pixels", &r.height_lr_in_pixels);
    kv("theta_lr_scale", &r.theta_lr_scale);
    kv("beta_lr_scale", &r.beta_lr_scale);
    kv("jitter", &r.jitter);
    kv("checkpoint_every", &r.checkpoint_every);
    if let Some(d) = &r.data_dir {
        kv("data_dir", d);
    }
    if let Some(d) = &r.out_dir {
        kv("out_dir", d);
    }
    kv("noise.seed", &cfg.noise.seed);
    kv("noise.looks", &cfg.noise.looks);
    for (k, v) in cfg.views.iter().enumerate() {
        let p = format!("view.{k}.");
        kv(&(p.clone() + "heading_rad"), &v.azimuth_heading);
        kv(&(p.clone() + "incidence_rad"), &v.incidence);
        kv(&(p.clone() + "n_planes"), &v.n_planes);
        kv(&(p.clone() + "n_range_bins"), &v.n_range_bins);
        kv(&(p.clone() + "n_rays"), &v.n_rays);
        kv(&(p.clone() + "standoff"), &v.standoff);
        kv(&(p.clone() + "range_origin"), &v.range_origin);
        kv(&(p + "range_step"), &v.range_step);
    }
    s
}

pub fn read_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

pub fn write_config(cfg: &ExperimentConfig, path: impl AsRef<Path>) -> Result<()> {
    super::raster::write_atomic(path.as_ref(), format_config(cfg).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "seed = 3\nview.0.heading_rad = 0\nview.0.incidence_rad = 0.7853981633974483\n";

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.run.seed, 3);
        assert_eq!(cfg.noise.seed, 3);
        assert_eq!(cfg.run.steps, 10_000);
        assert_eq!(cfg.views.len(), 1);
        let expect = ViewConfig::covering(0.0, std::f64::consts::FRAC_PI_4, 64, 256, 256).unwrap();
        assert_eq!(cfg.views[0], expect);
    }

    #[test]
    fn default_round_trips() {
        let mut cfg = ExperimentConfig::five_view_default(11);
        cfg.run.beta_mode = BetaMode::Anneal { final_beta: 0.003 };
        cfg.run.reg_weight = 1.0 / 3.0;
        cfg.run.out_dir = Some("out dir/x".into());
        cfg.views[2].standoff = 2.5;
        cfg.views[2].range_origin += 0.5;
        let text = format_config(&cfg);
        assert_eq!(parse_config(&text).unwrap(), cfg);
    }

    #[test]
    fn errors() {
        assert!(matches!(parse_config("view.0.heading_rad = 0\nview.0.incidence_rad = 0.5\n"), Err(Error::MissingKey(k)) if k == "seed"));
        assert!(matches!(parse_config("seed = 1\n"), Err(Error::MissingKey(_))));
        let dup = format!("{MINIMAL}seed = 4\n");
        assert!(matches!(parse_config(&dup), Err(Error::DuplicateKey { line: 4, .. })));
        let unknown = format!("{MINIMAL}learning_rate = 4\n");
        assert!(matches!(parse_config(&unknown), Err(Error::UnknownKey { line: 4, .. })));
        let unknown_view = format!("{MINIMAL}view.0.colour = 4\n");
        assert!(matches!(parse_config(&unknown_view), Err(Error::UnknownKey { .. })));
        let gap = format!("{MINIMAL}view.2.heading_rad = 1\nview.2.incidence_rad = 0.5\n");
        assert!(matches!(parse_config(&gap), Err(Error::MissingKey(k)) if k == "view.1.heading_rad"));
        let bad = format!("{MINIMAL}steps = many\n");
        assert!(matches!(parse_config(&bad), Err(Error::BadValue { .. })));
        assert!(matches!(parse_config("seed 3\n"), Err(Error::MalformedLine { line: 1, .. })));
        let looks = format!("{MINIMAL}noise.looks = 4\n");
        assert!(matches!(parse_config(&looks), Err(Error::UnsupportedLooks(4))));
    }

    #[test]
    fn comments_and_blank_lines() {
        let text = format!("# run\n\n{MINIMAL}  # trailing\n");
        assert!(parse_config(&text).is_ok());
    }
}
