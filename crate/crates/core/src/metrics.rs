//! Reconstruction and image error metrics.
//!
//! Altitude errors are expressed in ground pixels: height differences divided
//! by the recovered surface's cell size.

use crate::error::{Error, Result};
use crate::renderer::SarImage;
use crate::scalar::Real;
use crate::scene::DsmSurface;

fn altitude_errors<T: Real>(recovered: &DsmSurface<T>, truth: &DsmSurface<T>) -> Result<Vec<T>> {
    if !recovered.heights().same_shape(truth.heights()) {
        return Err(Error::shape(
            format!("{}x{}", truth.width(), truth.height_cells()),
            format!("{}x{}", recovered.width(), recovered.height_cells()),
        ));
    }
    let cell = recovered.cell_size();
    Ok(recovered
        .heights()
        .as_slice()
        .iter()
        .zip(truth.heights().as_slice())
        .map(|(a, b)| (*a - *b) / cell)
        .collect())
}

pub fn altitude_rmse<T: Real>(recovered: &DsmSurface<T>, truth: &DsmSurface<T>) -> Result<T> {
    let e = altitude_errors(recovered, truth)?;
    let n = T::from_usize_exact(e.len());
    Ok((e.iter().map(|x| *x * *x).sum::<T>() / n).sqrt())
}

pub fn altitude_mae<T: Real>(recovered: &DsmSurface<T>, truth: &DsmSurface<T>) -> Result<T> {
    let e = altitude_errors(recovered, truth)?;
    let n = T::from_usize_exact(e.len());
    Ok(e.iter().map(|x| x.abs()).sum::<T>() / n)
}

/// Median absolute altitude error (mean of the two middle values for even counts).
pub fn altitude_median<T: Real>(recovered: &DsmSurface<T>, truth: &DsmSurface<T>) -> Result<T> {
    let mut e: Vec<T> = altitude_errors(recovered, truth)?.into_iter().map(|x| x.abs()).collect();
    e.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
    let n = e.len();
    Ok(if n % 2 == 1 {
        e[n / 2]
    } else {
        (e[n / 2 - 1] + e[n / 2]) * T::lit(0.5)
    })
}

pub fn image_mse<T: Real>(a: &SarImage<T>, b: &SarImage<T>) -> Result<T> {
    if a.n_planes() != b.n_planes() || a.n_range_bins() != b.n_range_bins() {
        return Err(Error::shape(
            format!("{}x{}", a.n_planes(), a.n_range_bins()),
            format!("{}x{}", b.n_planes(), b.n_range_bins()),
        ));
    }
    let n = T::from_usize_exact(a.data().len());
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (*x - *y) * (*x - *y))
        .sum::<T>()
        / n)
}

/// All altitude metrics at once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AltitudeReport<T> {
    pub rmse: T,
    pub mae: T,
    pub median: T,
}

pub fn altitude_report<T: Real>(recovered: &DsmSurface<T>, truth: &DsmSurface<T>) -> Result<AltitudeReport<T>> {
    Ok(AltitudeReport {
        rmse: altitude_rmse(recovered, truth)?,
        mae: altitude_mae(recovered, truth)?,
        median: altitude_median(recovered, truth)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn surface(w: usize, h: usize, v: Vec<f64>) -> DsmSurface<f64> {
        DsmSurface::new(w, h, v).unwrap()
    }

    #[test]
    fn identical_is_zero() {
        let a = surface(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        assert_eq!(altitude_rmse(&a, &a).unwrap(), 0.0);
        assert_eq!(altitude_mae(&a, &a).unwrap(), 0.0);
        assert_eq!(altitude_median(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn uniform_offset_of_one_cell() {
        let a = surface(4, 4, vec![0.3; 16]);
        let b = surface(4, 4, vec![0.3 + 0.25; 16]);
        assert!((altitude_rmse(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert!((altitude_mae(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let c = surface(4, 4, vec![0.3 + 0.1; 16]);
        assert!((altitude_mae(&a, &c).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let a = surface(2, 2, vec![0.0; 4]);
        let b = surface(2, 3, vec![0.0; 6]);
        assert!(matches!(altitude_rmse(&a, &b), Err(Error::ShapeMismatch { .. })));
        let x = SarImage::new(1, 2, vec![0.0; 2], 0, false).unwrap();
        let y = SarImage::new(2, 1, vec![0.0; 2], 0, false).unwrap();
        assert!(image_mse(&x, &y).is_err());
    }

    #[test]
    fn image_mse_examples() {
        let a = SarImage::new(2, 2, vec![0.1, 0.2, 0.3, 0.4], 0, false).unwrap();
        assert_eq!(image_mse(&a, &a).unwrap(), 0.0);
        let b = SarImage::new(2, 2, vec![0.35, 0.45, 0.55, 0.65], 0, false).unwrap();
        assert!((image_mse(&a, &b).unwrap() - 0.0625f64).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn metrics_match_naive_oracle_and_order(
            a in prop::collection::vec(0.0f64..1.0, 12),
            b in prop::collection::vec(0.0f64..1.0, 12),
        ) {
            let sa = surface(4, 3, a.clone());
            let sb = surface(4, 3, b.clone());
            let mut sq = 0.0;
            let mut ab = 0.0;
            for i in 0..12 {
                let d = (a[i] - b[i]) * 4.0;
                sq += d * d;
                ab += d.abs();
            }
            let rmse = altitude_rmse(&sa, &sb).unwrap();
            let mae = altitude_mae(&sa, &sb).unwrap();
            prop_assert!((rmse - (sq / 12.0).sqrt()).abs() < 1e-12);
            prop_assert!((mae - ab / 12.0).abs() < 1e-12);
            prop_assert!(rmse >= mae - 1e-15 && mae >= 0.0);
            prop_assert_eq!(rmse, altitude_rmse(&sb, &sa).unwrap());
            prop_assert_eq!(mae, altitude_mae(&sb, &sa).unwrap());

            let ia = SarImage::new(3, 4, a.clone(), 0, false).unwrap();
            let ib = SarImage::new(3, 4, b.clone(), 0, false).unwrap();
            let naive = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 12.0;
            prop_assert!((image_mse(&ia, &ib).unwrap() - naive).abs() < 1e-12);
            prop_assert_eq!(image_mse(&ia, &ib).unwrap(), image_mse(&ib, &ia).unwrap());
        }
    }
}
