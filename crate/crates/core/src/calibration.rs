//! Stiffness estimation from paired (signal, wrench) data, wrench
//! reconstruction and the fiducial sensitivity analysis.

use std::io::{Read, Write};

use nalgebra::{DMatrix, Matrix6, Vector3, Vector6};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::{DeformationSignal, Wrench};
use crate::sensing::{Pipeline, PipelineConfig, TraceRecord};
use crate::wrist::{CameraModel, StiffnessMatrix, WristSimulator};

/// Column layout of the paired dataset CSV.
pub const DATASET_HEADER: [&str; 12] = [
    "tx_mm", "ty_mm", "tz_mm", "rx_rad", "ry_rad", "rz_rad", "fx_n", "fy_n", "fz_n", "tx_nm",
    "ty_nm", "tz_nm",
];

/// Minimum number of rows for a full-rank 6x6 estimate.
pub const MIN_ROWS: usize = 36;

/// Relative singular-value cutoff used to decide the rank of the signal design.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Simulated,
    Recorded,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairedDataset {
    pub rows: Vec<(DeformationSignal, Wrench)>,
    pub source: DataSource,
}

impl PairedDataset {
    pub fn new(rows: Vec<(DeformationSignal, Wrench)>, source: DataSource) -> Self {
        Self { rows, source }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(DATASET_HEADER)?;
        for (s, f) in &self.rows {
            let mut rec: Vec<String> = s.as_vector6().iter().map(|v| v.to_string()).collect();
            rec.extend(f.as_vector6().iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses the dataset CSV. Errors name the offending 1-based line.
    pub fn read_csv<R: Read>(input: R, source: DataSource) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let header = reader.headers()?.clone();
        let got: Vec<&str> = header.iter().map(str::trim).collect();
        if got != DATASET_HEADER {
            return Err(Error::MalformedRow {
                line: 1,
                reason: format!("unexpected header {got:?}"),
            });
        }
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::MalformedRow {
                line: e.position().map(|p| p.line() as usize).unwrap_or(line),
                reason: e.to_string(),
            })?;
            if rec.len() != 12 {
                return Err(Error::MalformedRow {
                    line,
                    reason: format!("expected 12 fields, got {}", rec.len()),
                });
            }
            let mut v = [0.0; 12];
            for (j, field) in rec.iter().enumerate() {
                v[j] = field.trim().parse::<f64>().map_err(|e| Error::MalformedRow {
                    line,
                    reason: format!("column {}: {e}", DATASET_HEADER[j]),
                })?;
                if !v[j].is_finite() {
                    return Err(Error::MalformedRow {
                        line,
                        reason: format!("column {} is not finite", DATASET_HEADER[j]),
                    });
                }
            }
            let signal = DeformationSignal::from_vector6(&Vector6::from_column_slice(&v[..6]));
            let wrench = Wrench::from_vector6(&Vector6::from_column_slice(&v[6..]))?;
            rows.push((signal, wrench));
        }
        Ok(Self { rows, source })
    }
}

/// Result of a stiffness fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub k_hat: StiffnessMatrix,
    pub r_squared: [f64; 6],
    pub residual_rms: [f64; 6],
}

impl FitReport {
    pub fn mean_r_squared(&self) -> f64 {
        self.r_squared.iter().sum::<f64>() / 6.0
    }
}

/// Ordinary least squares of each wrench component on the 6D signal, no
/// intercept. `ridge` adds `λ I` to the normal equations (0 disables it).
pub fn estimate_stiffness_ridge(data: &PairedDataset, ridge: f64) -> Result<FitReport> {
    let n = data.len();
    if n < MIN_ROWS {
        return Err(Error::InsufficientRows {
            rows: n,
            required: MIN_ROWS,
        });
    }
    let signals = DMatrix::from_fn(n, 6, |r, c| data.rows[r].0.as_vector6()[c]);
    let wrenches = DMatrix::from_fn(n, 6, |r, c| data.rows[r].1.as_vector6()[c]);

    let svd = signals.clone().svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let rank = sv.iter().filter(|&&s| s > RANK_TOL * smax).count();
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    if rank < 6 && ridge <= 0.0 {
        let dirs: Vec<String> = (0..6)
            .filter(|&i| sv[i] <= RANK_TOL * smax)
            .map(|i| {
                let row: Vec<String> = (0..6).map(|c| format!("{:.4}", v_t[(i, c)])).collect();
                format!("[{}]", row.join(", "))
            })
            .collect();
        return Err(Error::RankDeficient {
            rank,
            directions: dirs.join(" "),
        });
    }
    let u = svd.u.as_ref().expect("requested U");
    // X = V diag(σ / (σ² + λ)) U^T F, and K̂ = X^T
    let gains = sv.map(|s| if s > 0.0 { s / (s * s + ridge) } else { 0.0 });
    let ut_f = u.transpose() * &wrenches;
    let scaled = DMatrix::from_fn(6, 6, |r, c| gains[r] * ut_f[(r, c)]);
    let x = v_t.transpose() * scaled;
    let k_hat = Matrix6::from_fn(|r, c| x[(c, r)]);

    let fitted = &signals * &x;
    let mut r_squared = [0.0; 6];
    let mut residual_rms = [0.0; 6];
    for j in 0..6 {
        let col = wrenches.column(j);
        let mean = col.mean();
        let ss_tot: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
        let ss_res: f64 = col
            .iter()
            .zip(fitted.column(j).iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        r_squared[j] = if ss_tot > 0.0 {
            1.0 - ss_res / ss_tot
        } else if ss_res == 0.0 {
            1.0
        } else {
            0.0
        };
        residual_rms[j] = (ss_res / n as f64).sqrt();
    }
    Ok(FitReport {
        k_hat: StiffnessMatrix::new(k_hat)?,
        r_squared,
        residual_rms,
    })
}

pub fn estimate_stiffness(data: &PairedDataset) -> Result<FitReport> {
    estimate_stiffness_ridge(data, 0.0)
}

/// `K̂ * signal`.
pub fn reconstruct_wrench(k_hat: &StiffnessMatrix, signal: &DeformationSignal) -> Wrench {
    Wrench::from_vector6(&(k_hat.matrix() * signal.as_vector6()))
        .expect("finite stiffness and signal give a finite wrench")
}

/// Smallest resolvable deformation per axis, ordered (x, y, z, θx, θy, θz);
/// millimeters for translations, radians for rotations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityVector(pub Vector6<f64>);

/// Fiducial sensitivity of the camera model.
///
/// In-plane translation: `s_x = s_z = (w_tag / w_img) d_R`.
/// Out-of-plane translation is seen through the oblique probe view, so by
/// similar triangles `s_y = s_x / sin θ`.
/// Rotation about the probe axis uses the chord length
/// `l = 2 r sin(θ/2)`: `s_θy = θ d_R / l`.
/// The two remaining tilts are the angle subtended by one quantum of
/// in-plane displacement at the tag half-width:
/// `s_θx = s_θz = atan(s_x / (w_tag / 2))`.
pub fn sensitivity(cam: &CameraModel) -> SensitivityVector {
    let s_xz = cam.tag_width_mm / cam.tag_image_width_px * cam.pixel_resolution;
    let theta = cam.probe_angle_rad;
    let s_y = s_xz / theta.sin();
    let chord = 2.0 * cam.patch_half_diagonal_px * (theta / 2.0).sin();
    let s_ty = theta / chord * cam.pixel_resolution;
    let s_tilt = (s_xz / (cam.tag_width_mm / 2.0)).atan();
    SensitivityVector(Vector6::new(s_xz, s_y, s_xz, s_tilt, s_ty, s_tilt))
}

/// `F_min = K s`.
pub fn min_detectable_wrench(k: &StiffnessMatrix, s: &SensitivityVector) -> Wrench {
    Wrench::from_vector6(&(k.matrix() * s.0)).expect("finite inputs")
}

/// Per-component standard deviation of the wrench error caused by
/// observation noise alone: `sqrt(diag(K Σ K^T))`.
pub fn wrench_noise_floor(k: &StiffnessMatrix, signal_cov: &Matrix6<f64>) -> Vector6<f64> {
    let cov = k.matrix() * signal_cov * k.matrix().transpose();
    Vector6::from_fn(|i, _| cov[(i, i)].max(0.0).sqrt())
}

/// Half-widths of the uniform box randomized wrenches are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WrenchRanges {
    pub force_n: [f64; 3],
    pub torque_nm: [f64; 3],
}

impl Default for WrenchRanges {
    fn default() -> Self {
        Self {
            force_n: [10.0, 10.0, 20.0],
            torque_nm: [1.5, 1.5, 0.3],
        }
    }
}

impl WrenchRanges {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Wrench {
        let f = Vector3::from_fn(|i, _| rng.random_range(-1.0..=1.0) * self.force_n[i]);
        let t = Vector3::from_fn(|i, _| rng.random_range(-1.0..=1.0) * self.torque_nm[i]);
        Wrench::new(f, t).expect("finite ranges")
    }
}

/// Sweeps `n` random wrenches through the simulated wrist and the sensing
/// pipeline (filter off), pairing each raw signal with its true wrench.
pub fn generate_dataset<R: Rng + ?Sized>(
    sim: &WristSimulator,
    n: usize,
    ranges: &WrenchRanges,
    rng: &mut R,
) -> Result<(PairedDataset, Vec<TraceRecord>)> {
    let mut pipeline = Pipeline::new(PipelineConfig::unfiltered_for(sim))?;
    pipeline.set_reference(&sim.reference_observation(&mut *rng));
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let w = ranges.sample(rng);
        let obs = sim.observe(&w, &mut *rng);
        pipeline.ingest_with_truth((i + 1) as f64 * 0.01, Some(obs), Some(w))?;
        let raw = pipeline.last_raw().expect("just ingested");
        rows.push((raw, w));
    }
    Ok((
        PairedDataset::new(rows, DataSource::Simulated),
        pipeline.take_trace(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noiseless_dataset(k: &StiffnessMatrix, n: usize, seed: u64) -> PairedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|_| {
                let s = Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0));
                let w = Wrench::from_vector6(&(k.matrix() * s)).unwrap();
                (DeformationSignal::from_vector6(&s), w)
            })
            .collect();
        PairedDataset::new(rows, DataSource::Simulated)
    }

    #[test]
    fn exact_recovery_on_noiseless_data() {
        let k = StiffnessMatrix::default_wrist();
        let fit = estimate_stiffness(&noiseless_dataset(&k, 200, 1)).unwrap();
        let rel = (fit.k_hat.matrix() - k.matrix()).norm() / k.matrix().norm();
        assert!(rel <= 1e-6, "relative error {rel}");
        for r2 in fit.r_squared {
            assert!((r2 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn z_only_wrenches_are_rank_deficient() {
        let k = StiffnessMatrix::default_wrist();
        let rows = (0..100)
            .map(|i| {
                let w = Wrench::new(Vector3::new(0.0, 0.0, i as f64 * 0.1), Vector3::zeros()).unwrap();
                (crate::wrist::deform(&k, &w), w)
            })
            .collect();
        let err = estimate_stiffness(&PairedDataset::new(rows, DataSource::Simulated)).unwrap_err();
        match err {
            Error::RankDeficient { rank, directions } => {
                assert_eq!(rank, 1);
                assert_eq!(directions.matches('[').count(), 5);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn too_few_rows_rejected() {
        let k = StiffnessMatrix::default_wrist();
        assert!(matches!(
            estimate_stiffness(&noiseless_dataset(&k, 35, 2)),
            Err(Error::InsufficientRows { rows: 35, .. })
        ));
    }

    #[test]
    fn ridge_accepts_deficient_design() {
        let k = StiffnessMatrix::identity();
        let rows = (0..60)
            .map(|i| {
                let s = Vector6::new(i as f64, 0.0, 0.0, 0.0, 0.0, 0.0);
                (DeformationSignal::from_vector6(&s), Wrench::from_vector6(&(k.matrix() * s)).unwrap())
            })
            .collect();
        let data = PairedDataset::new(rows, DataSource::Simulated);
        assert!(estimate_stiffness(&data).is_err());
        // zero directions get zero gain, so K̂ is singular and rejected downstream
        assert!(estimate_stiffness_ridge(&data, 1e-3).is_err());
    }

    #[test]
    fn scale_equivariance() {
        let sim = WristSimulator::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (data, _) = generate_dataset(&sim, 400, &WrenchRanges::default(), &mut rng).unwrap();
        let alpha = 3.7;
        let scaled = PairedDataset::new(
            data.rows
                .iter()
                .map(|(s, w)| (*s, Wrench::from_vector6(&(w.as_vector6() * alpha)).unwrap()))
                .collect(),
            DataSource::Simulated,
        );
        let a = estimate_stiffness(&data).unwrap();
        let b = estimate_stiffness(&scaled).unwrap();
        let diff = (b.k_hat.matrix() - a.k_hat.matrix() * alpha).amax();
        assert!(diff < 1e-9 * b.k_hat.matrix().amax());
        for j in 0..6 {
            assert!((a.r_squared[j] - b.r_squared[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn wrench_noise_does_not_raise_r_squared() {
        let sim = WristSimulator::default();
        let mut clean_sum = [0.0; 6];
        let mut noisy_sum = [0.0; 6];
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let (data, _) = generate_dataset(&sim, 300, &WrenchRanges::default(), &mut rng).unwrap();
            let noisy = PairedDataset::new(
                data.rows
                    .iter()
                    .map(|(s, w)| {
                        let n = Vector6::from_fn(|i, _| {
                            let scale = if i < 3 { 0.5 } else { 0.02 };
                            rng.random_range(-1.0..1.0) * scale
                        });
                        (*s, Wrench::from_vector6(&(w.as_vector6() + n)).unwrap())
                    })
                    .collect(),
                DataSource::Simulated,
            );
            let a = estimate_stiffness(&data).unwrap();
            let b = estimate_stiffness(&noisy).unwrap();
            for j in 0..6 {
                clean_sum[j] += a.r_squared[j];
                noisy_sum[j] += b.r_squared[j];
            }
        }
        for j in 0..6 {
            assert!(noisy_sum[j] <= clean_sum[j], "component {j}");
        }
    }

    #[test]
    fn reconstruct_examples() {
        let k = StiffnessMatrix::default_wrist();
        assert_eq!(
            reconstruct_wrench(&k, &DeformationSignal::zero()).as_vector6(),
            Vector6::zeros()
        );
        let w = Wrench::new(Vector3::new(1.0, -2.0, 3.0), Vector3::new(0.1, 0.2, -0.05)).unwrap();
        let s = DeformationSignal::from_vector6(&(k.compliance() * w.as_vector6()));
        let back = reconstruct_wrench(&k, &s);
        assert!((back.as_vector6() - w.as_vector6()).amax() < 1e-9);
    }

    #[test]
    fn sensitivity_hand_values() {
        let cam = CameraModel::default();
        let s = sensitivity(&cam).0;
        // 20 mm / 80 px * 0.25
        assert!((s[0] - 0.0625).abs() < 1e-15);
        assert!((s[2] - 0.0625).abs() < 1e-15);
        // 0.0625 / sin 45°
        assert!((s[1] - 0.088_388_347_648_318_4).abs() < 1e-12);
        // atan(0.0625 / 10)
        assert!((s[3] - 0.006_249_918_621_055_8).abs() < 1e-12);
        // (π/4) * 0.25 / (2 * 40√2 * sin(π/8))
        assert!((s[4] - 0.004_535_083_050_217_9).abs() < 1e-15);
    }

    #[test]
    fn sensitivity_proportionality_and_limits() {
        let cam = CameraModel::default();
        let base = sensitivity(&cam).0;
        let wide = sensitivity(&CameraModel {
            tag_image_width_px: cam.tag_image_width_px * 2.0,
            ..cam
        })
        .0;
        for i in 0..3 {
            assert!((wide[i] - base[i] / 2.0).abs() < 1e-15);
        }
        let tiny = sensitivity(&CameraModel {
            pixel_resolution: 1e-12,
            ..cam
        })
        .0;
        assert!(tiny.amax() < 1e-12);
    }

    #[test]
    fn min_detectable_examples() {
        let s = sensitivity(&CameraModel::default());
        let f = min_detectable_wrench(&StiffnessMatrix::identity(), &s);
        assert_eq!(f.as_vector6(), s.0);
        let two = StiffnessMatrix::from_diagonal(&Vector6::repeat(2.0)).unwrap();
        assert_eq!(min_detectable_wrench(&two, &s).as_vector6(), s.0 * 2.0);
    }

    #[test]
    fn default_min_detectable_ordering() {
        let f = min_detectable_wrench(
            &StiffnessMatrix::default_wrist(),
            &sensitivity(&CameraModel::default()),
        )
        .as_vector6();
        assert!(f.iter().all(|v| *v > 0.0));
        // same ranking as [0.41, 0.45, 0.87, 0.13, 0.12, 0.03]
        assert!(f[5] < f[4] && f[4] < f[3] && f[3] < f[0] && f[0] < f[1] && f[1] < f[2]);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let k = StiffnessMatrix::default_wrist();
        let data = noiseless_dataset(&k, 40, 9);
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&DATASET_HEADER.join(",")));
        let back = PairedDataset::read_csv(buf.as_slice(), DataSource::Recorded).unwrap();
        assert_eq!(back.rows, data.rows);

        let mut lines: Vec<&str> = text.lines().collect();
        lines[3] = "1,2,3,4,5,6,7,8,9,10,11,abc";
        let bad = lines.join("\n");
        match PairedDataset::read_csv(bad.as_bytes(), DataSource::Recorded) {
            Err(Error::MalformedRow { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let mut buf = Vec::new();
        PairedDataset::default().write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), DATASET_HEADER.join(",") + "\n");
    }
}
