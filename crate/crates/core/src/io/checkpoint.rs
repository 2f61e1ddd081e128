//! Resumable training checkpoints.
//!
//! Layout: a text manifest (`RDFCKPT1`, `key = value` lines, one `section`
//! line per payload block, `end`), then the run config text and the
//! payload blocks as little-endian `f64`, in manifest order. Values are
//! stored as `f64` so both scalar types resume bit-exactly.

use std::fs;
use std::path::Path;

use super::config::{format_config, parse_config, ExperimentConfig};
use crate::error::{Error, Result};
use crate::math::Grid2;
use crate::optimize::{AdamMoments, TrainState};
use crate::scalar::Real;
use crate::scene::{DsmSurface, Scene, SharpnessParam, SpecularityMap};

const MAGIC: &str = "RDFCKPT1";
const SECTIONS: [&str; 10] = [
    "heights",
    "theta_raw",
    "beta_raw",
    "heights_m",
    "heights_v",
    "theta_m",
    "theta_v",
    "beta_m",
    "beta_v",
    "loss_history",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: ExperimentConfig,
    pub state: TrainState<T>,
}

fn widen<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossless()).collect()
}

pub fn checkpoint_bytes<T: Real>(config: &ExperimentConfig, state: &TrainState<T>) -> Vec<u8> {
    let s = &state.scene;
    let blocks: [Vec<f64>; 10] = [
        widen(s.surface.heights().as_slice()),
        widen(s.specularity.raw().as_slice()),
        vec![s.beta.raw().to_f64_lossless()],
        widen(&state.heights_moments.m),
        widen(&state.heights_moments.v),
        widen(&state.theta_moments.m),
        widen(&state.theta_moments.v),
        widen(&state.beta_moments.m),
        widen(&state.beta_moments.v),
        state.loss_history.clone(),
    ];
    let config_text = format_config(config);
    let mut manifest = format!(
        "{MAGIC}\nstep = {}\nwidth = {}\nheight = {}\nconfig_bytes = {}\n",
        state.step,
        s.surface.width(),
        s.surface.height_cells(),
        config_text.len()
    );
    for (name, b) in SECTIONS.iter().zip(&blocks) {
        manifest.push_str(&format!("section {name} {}\n", b.len()));
    }
    manifest.push_str("end\n");
    let mut out = manifest.into_bytes();
    out.extend_from_slice(config_text.as_bytes());
    for b in &blocks {
        for v in b {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::BadCheckpoint(msg.into())
}

pub fn parse_checkpoint<T: Real>(bytes: &[u8], path: &Path) -> Result<Checkpoint<T>> {
    let end_marker = b"\nend\n";
    let header_end = bytes
        .windows(end_marker.len())
        .position(|w| w == end_marker)
        .map(|p| p + end_marker.len())
        .ok_or_else(|| bad("manifest has no end marker"))?;
    let manifest = std::str::from_utf8(&bytes[..header_end]).map_err(|_| bad("manifest is not UTF-8"))?;
    let mut lines = manifest.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: bytes[..bytes.len().min(MAGIC.len())].to_vec(),
        });
    }
    let mut field = |name: &str| -> Result<usize> {
        let line = lines.next().ok_or_else(|| bad(format!("missing {name}")))?;
        let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("malformed line {line:?}")))?;
        if k.trim() != name {
            return Err(bad(format!("expected {name}, found {line:?}")));
        }
        v.trim().parse().map_err(|_| bad(format!("bad value in {line:?}")))
    };
    let step = field("step")?;
    let width = field("width")?;
    let height = field("height")?;
    let config_len = field("config_bytes")?;
    let mut counts = Vec::with_capacity(SECTIONS.len());
    for name in SECTIONS {
        let line = lines.next().ok_or_else(|| bad(format!("missing section {name}")))?;
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next().and_then(|c| c.parse::<usize>().ok())) {
            (Some("section"), Some(n), Some(count)) if n == name => counts.push(count),
            _ => return Err(bad(format!("expected section {name}, found {line:?}"))),
        }
    }
    let payload: usize = counts.iter().sum::<usize>() * 8;
    let expected = header_end + config_len + payload;
    if bytes.len() != expected {
        return Err(Error::TruncatedFile {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    let config_text = std::str::from_utf8(&bytes[header_end..header_end + config_len])
        .map_err(|_| bad("config is not UTF-8"))?;
    let config = parse_config(config_text)?;

    let mut offset = header_end + config_len;
    let mut blocks = Vec::with_capacity(SECTIONS.len());
    for &count in &counts {
        let block: Vec<f64> = bytes[offset..offset + 8 * count]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        offset += 8 * count;
        blocks.push(block);
    }
    let cells = width * height;
    let expect_len = [cells, cells, 1, cells, cells, cells, cells, 1, 1, step];
    for ((name, b), n) in SECTIONS.iter().zip(&blocks).zip(expect_len) {
        if b.len() != n {
            return Err(bad(format!("section {name} has {} values, expected {n}", b.len())));
        }
    }
    let narrow = |v: &[f64]| -> Vec<T> { v.iter().map(|&x| T::lit(x)).collect() };
    let grid = |v: &[f64]| Grid2::from_vec(width, height, narrow(v)).expect("length checked");
    let surface = DsmSurface::from_grid(grid(&blocks[0]))?;
    let specularity = SpecularityMap::from_raw(grid(&blocks[1]));
    let beta = SharpnessParam::from_raw(T::lit(blocks[2][0]));
    let moments = |m: &[f64], v: &[f64]| AdamMoments {
        m: narrow(m),
        v: narrow(v),
    };
    let state = TrainState {
        scene: Scene::new(surface, specularity, beta)?,
        heights_moments: moments(&blocks[3], &blocks[4]),
        theta_moments: moments(&blocks[5], &blocks[6]),
        beta_moments: moments(&blocks[7], &blocks[8]),
        step,
        loss_history: blocks[9].clone(),
    };
    Ok(Checkpoint { config, state })
}

pub fn write_checkpoint<T: Real>(config: &ExperimentConfig, state: &TrainState<T>, path: impl AsRef<Path>) -> Result<()> {
    super::raster::write_atomic(path.as_ref(), &checkpoint_bytes(config, state))
}

pub fn read_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimize::RunConfig;

    fn sample_state() -> TrainState<f64> {
        let mut s = TrainState::<f64>::initial(4, 3, &RunConfig::default()).unwrap();
        for (i, h) in s.scene.surface.heights_mut().as_mut_slice().iter_mut().enumerate() {
            *h = (i as f64 * 0.37).sin().abs();
        }
        s.heights_moments.m[2] = 1e-300;
        s.heights_moments.v[5] = 3.0e-17;
        s.beta_moments.m[0] = -0.25;
        s.step = 3;
        s.loss_history = vec![0.5, 0.25, 1.0 / 3.0];
        s
    }

    #[test]
    fn round_trip_is_exact() {
        let cfg = ExperimentConfig::five_view_default(5);
        let state = sample_state();
        let bytes = checkpoint_bytes(&cfg, &state);
        let back: Checkpoint<f64> = parse_checkpoint(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.config, cfg);
        assert_eq!(back.state, state);
    }

    #[test]
    fn truncation_and_magic() {
        let cfg = ExperimentConfig::five_view_default(5);
        let bytes = checkpoint_bytes(&cfg, &sample_state());
        let p = Path::new("mem");
        assert!(matches!(
            parse_checkpoint::<f64>(&bytes[..bytes.len() - 3], p),
            Err(Error::TruncatedFile { .. })
        ));
        let mut other = bytes.clone();
        other[0] = b'X';
        assert!(matches!(parse_checkpoint::<f64>(&other, p), Err(Error::BadMagic { .. })));
        assert!(parse_checkpoint::<f64>(b"RDF1", p).is_err());
    }
}
