//! Orthonormal DCT-II / DCT-III transforms, last-pose padding, the Gaussian
//! distance map and the per-layer frequency rescale schedule.
//!
//! Channel layout for xyz spectra: channel `axis * C + c` holds frequency `c`
//! of axis `axis`.

use std::f64::consts::PI;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

use crate::data::MotionSequence;
use crate::error::{HumofError, Result};

/// Orthonormal DCT-II basis truncated to the first `coeffs` rows: `coeffs × len`.
///
/// Row `k` is `s_k cos(pi (2n + 1) k / 2len)` with `s_0 = sqrt(1/len)` and
/// `s_k = sqrt(2/len)` otherwise; its transpose is the DCT-III synthesis matrix.
pub fn dct_matrix(coeffs: usize, len: usize) -> Result<Array2<f64>> {
    if coeffs == 0 || coeffs > len {
        return Err(HumofError::BadTruncation { coeffs, len });
    }
    let n = len as f64;
    Ok(Array2::from_shape_fn((coeffs, len), |(k, i)| {
        let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        scale * (PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * n)).cos()
    }))
}

/// First `coeffs` orthonormal DCT-II coefficients of `series`.
pub fn dct_forward(series: ArrayView1<f64>, coeffs: usize) -> Result<Array1<f64>> {
    let d = dct_matrix(coeffs, series.len())?;
    Ok(d.dot(&series))
}

/// Orthonormal DCT-III of `coeffs` zero-padded to `len`.
pub fn dct_inverse(coeffs: ArrayView1<f64>, len: usize) -> Result<Array1<f64>> {
    let d = dct_matrix(coeffs.len(), len)?;
    Ok(d.t().dot(&coeffs))
}

/// Row-wise forward transform: `rows × len` → `rows × coeffs`.
pub fn dct_rows(series: ArrayView2<f64>, coeffs: usize) -> Result<Array2<f64>> {
    let d = dct_matrix(coeffs, series.ncols())?;
    Ok(series.dot(&d.t()))
}

/// Forward transform of each row to `coeffs` coefficients. When a row is
/// shorter than `coeffs`, only `len` coefficients exist and the rest are zero.
pub fn dct_rows_padded(series: ArrayView2<f64>, coeffs: usize) -> Result<Array2<f64>> {
    let len = series.ncols();
    if len >= coeffs {
        return dct_rows(series, coeffs);
    }
    let mut out = Array2::zeros((series.nrows(), coeffs));
    out.slice_mut(s![.., ..len]).assign(&dct_rows(series, len)?);
    Ok(out)
}

/// Repeats the last pose `extra` times after the observed frames.
pub fn pad_with_last_pose(motion: &MotionSequence, extra: usize) -> MotionSequence {
    let (j, h, _) = motion.coords.dim();
    let mut coords = ndarray::Array3::zeros((j, h + extra, 3));
    coords.slice_mut(s![.., ..h, ..]).assign(&motion.coords);
    for t in h..h + extra {
        let last = motion.coords.slice(s![.., h - 1, ..]);
        coords.slice_mut(s![.., t, ..]).assign(&last);
    }
    MotionSequence {
        coords,
        fps: motion.fps,
    }
}

/// Per-joint xyz spectrum of a motion: `J × 3C`, channel `axis * C + c`.
pub fn motion_spectrum(motion: &MotionSequence, coeffs: usize) -> Result<Array2<f64>> {
    let (j, f, _) = motion.coords.dim();
    let d = dct_matrix(coeffs, f)?;
    let mut out = Array2::zeros((j, 3 * coeffs));
    for axis in 0..3 {
        let series: ndarray::ArrayView2<f64> = motion.coords.slice(s![.., .., axis]);
        let spec = series.dot(&d.t());
        out.slice_mut(s![.., axis * coeffs..(axis + 1) * coeffs]).assign(&spec);
    }
    Ok(out)
}

/// Gaussian proximity map `exp(-d^2 / 2 sigma^2)`; 1 at contact, decaying with distance.
pub fn gaussian_map(distance: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(HumofError::BadSigma(sigma));
    }
    Ok((-(distance * distance) / (2.0 * sigma * sigma)).exp())
}

/// Shared per-layer multiplicative gate over frequency channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaleSchedule {
    pub coeffs: usize,
    /// One vector of length `3 * coeffs` per layer, first layer first.
    pub vectors: Vec<Array1<f64>>,
}

impl RescaleSchedule {
    pub fn layers(&self) -> usize {
        self.vectors.len()
    }

    /// Vector for 1-based layer `l`.
    pub fn layer(&self, l: usize) -> &Array1<f64> {
        &self.vectors[l - 1]
    }
}

/// `v[axis*C + c] = 1 - (1 - l/L) * c/(C-1)` for layers `l = 1..=L`.
///
/// Low frequencies stay at 1, high frequencies are damped most in the first
/// layer, and the last layer is all ones.
pub fn make_rescale_schedule(layers: usize, coeffs: usize) -> RescaleSchedule {
    let vectors = (1..=layers)
        .map(|l| {
            let relax = 1.0 - l as f64 / layers as f64;
            Array1::from_shape_fn(3 * coeffs, |ch| {
                let c = ch % coeffs;
                if coeffs == 1 {
                    1.0
                } else {
                    1.0 - relax * (c as f64 / (coeffs - 1) as f64)
                }
            })
        })
        .collect();
    RescaleSchedule { coeffs, vectors }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{Array1, Array3};
    use proptest::prelude::*;

    /// Direct O(F^2) evaluation of the orthonormal DCT-II sum.
    fn naive_dct(x: &[f64], k: usize) -> f64 {
        let n = x.len() as f64;
        let s = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        s * x
            .iter()
            .enumerate()
            .map(|(i, v)| v * (PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * n)).cos())
            .sum::<f64>()
    }

    #[test]
    fn constant_series_has_only_dc() {
        let x = Array1::from_elem(17, 2.5);
        let c = dct_forward(x.view(), 17).unwrap();
        assert_abs_diff_eq!(c[0], 2.5 * 17f64.sqrt(), epsilon = 1e-12);
        for k in 1..17 {
            assert!(c[k].abs() < 1e-12);
        }
    }

    #[test]
    fn basis_vector_maps_to_unit_vector() {
        let f = 12;
        for k in 0..f {
            let mut e = Array1::zeros(f);
            e[k] = 1.0;
            let basis = dct_inverse(e.view(), f).unwrap();
            for m in 0..f {
                let want = if m == k { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(naive_dct(basis.as_slice().unwrap(), m), want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn truncation_beyond_length_fails() {
        let x = Array1::zeros(4);
        assert!(matches!(
            dct_forward(x.view(), 5),
            Err(HumofError::BadTruncation { coeffs: 5, len: 4 })
        ));
        assert!(dct_forward(x.view(), 0).is_err());
    }

    #[test]
    fn padding_repeats_last_pose() {
        let mut c = Array3::zeros((2, 2, 3));
        c[[0, 1, 0]] = 0.4;
        c[[1, 1, 2]] = 1.2;
        let m = MotionSequence::new(c, 30.0).unwrap();
        let p = pad_with_last_pose(&m, 3);
        assert_eq!(p.frames(), 5);
        for t in 2..5 {
            assert_eq!(p.joint_pos(0, t), m.joint_pos(0, 1));
            assert_eq!(p.joint_pos(1, t), m.joint_pos(1, 1));
        }
        assert_eq!(p.joint_pos(0, 0), m.joint_pos(0, 0));
        assert_eq!(pad_with_last_pose(&MotionSequence::zeros(2, 30, 30.0), 60).frames(), 90);
    }

    #[test]
    fn gaussian_map_values() {
        assert_eq!(gaussian_map(0.0, 0.5).unwrap(), 1.0);
        assert_abs_diff_eq!(gaussian_map(0.5, 0.5).unwrap(), (-0.5f64).exp(), epsilon = 1e-15);
        assert!(matches!(gaussian_map(1.0, 0.0), Err(HumofError::BadSigma(_))));
        assert!(matches!(gaussian_map(1.0, -1.0), Err(HumofError::BadSigma(_))));
    }

    #[test]
    fn schedule_formula_points() {
        let s = make_rescale_schedule(6, 20);
        assert!(s.layer(6).iter().all(|&v| v == 1.0));
        assert_abs_diff_eq!(s.layer(1)[19], 1.0 / 6.0, epsilon = 1e-15);
        assert_eq!(s.layer(1)[0], 1.0);
        assert_eq!(s.layer(1)[20], 1.0);
        let one = make_rescale_schedule(3, 1);
        assert!(one.vectors.iter().all(|v| v.iter().all(|&x| x == 1.0)));
    }

    proptest! {
        #[test]
        fn roundtrip_full_length(x in prop::collection::vec(-5.0f64..5.0, 1..64)) {
            let x = Array1::from(x);
            let n = x.len();
            let c = dct_forward(x.view(), n).unwrap();
            let back = dct_inverse(c.view(), n).unwrap();
            for i in 0..n {
                prop_assert!((back[i] - x[i]).abs() < 1e-9);
            }
        }

        #[test]
        fn truncated_energy_is_bounded(x in prop::collection::vec(-5.0f64..5.0, 2..48), frac in 0.05f64..1.0) {
            let x = Array1::from(x);
            let n = x.len();
            let c = ((n as f64 * frac).ceil() as usize).clamp(1, n);
            let coeffs = dct_forward(x.view(), c).unwrap();
            let kept: f64 = coeffs.iter().map(|v| v * v).sum();
            let total: f64 = x.iter().map(|v| v * v).sum();
            prop_assert!(kept <= total * (1.0 + 1e-12) + 1e-12);
            if c == n {
                prop_assert!((kept - total).abs() <= 1e-9 * (1.0 + total));
            }
        }

        #[test]
        fn gaussian_map_strictly_decreasing(mut d in prop::collection::vec(0.0f64..3.0, 100), sigma in 0.1f64..2.0) {
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            d.dedup();
            for w in d.windows(2) {
                prop_assert!(gaussian_map(w[1], sigma).unwrap() < gaussian_map(w[0], sigma).unwrap());
            }
        }

        #[test]
        fn schedule_invariants(layers in 1usize..10, coeffs in 1usize..24) {
            let s = make_rescale_schedule(layers, coeffs);
            prop_assert_eq!(s.vectors.len(), layers);
            prop_assert!(s.layer(layers).iter().all(|&v| v == 1.0));
            for l in 1..=layers {
                let v = s.layer(l);
                prop_assert!(v.iter().all(|&x| x > 0.0 && x <= 1.0));
                for axis in 0..3 {
                    for c in 1..coeffs {
                        prop_assert!(v[axis * coeffs + c] <= v[axis * coeffs + c - 1]);
                    }
                }
                if l > 1 {
                    let prev = s.layer(l - 1);
                    for ch in 0..3 * coeffs {
                        prop_assert!(v[ch] >= prev[ch]);
                    }
                }
            }
        }
    }

    #[test]
    fn constant_motion_spectrum_has_no_ac() {
        let mut c = Array3::zeros((3, 5, 3));
        for j in 0..3 {
            for t in 0..5 {
                c[[j, t, 0]] = 1.0 + j as f64;
                c[[j, t, 2]] = -0.3;
            }
        }
        let m = MotionSequence::new(c, 30.0).unwrap();
        let spec = motion_spectrum(&pad_with_last_pose(&m, 4), 6).unwrap();
        for j in 0..3 {
            for axis in 0..3 {
                for k in 1..6 {
                    assert!(spec[[j, axis * 6 + k]].abs() < 1e-12);
                }
            }
        }
    }
}
