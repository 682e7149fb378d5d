//! Streaming pipeline from tag poses to the filtered force-like signal.

use std::collections::VecDeque;
use std::io::{BufRead, Write};
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::{decompose, deformation, DeformationSignal, Pose, Wrench};
use crate::wrist::WristSimulator;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Camera frame expressed in the flange frame.
    pub extrinsic: Pose,
    /// Lower-connector center expressed in the tag frame.
    pub alignment: Pose,
    #[serde(default = "default_window")]
    pub filter_window: usize,
    #[serde(default = "default_degree")]
    pub filter_degree: usize,
    #[serde(default = "default_history")]
    pub history_length: usize,
    #[serde(default = "default_true")]
    pub filter_enabled: bool,
}

fn default_window() -> usize {
    9
}
fn default_degree() -> usize {
    2
}
fn default_history() -> usize {
    15
}
fn default_true() -> bool {
    true
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::for_simulator(&WristSimulator::default())
    }
}

impl PipelineConfig {
    pub fn for_simulator(sim: &WristSimulator) -> Self {
        Self {
            extrinsic: sim.camera.extrinsic,
            alignment: sim.connector_in_tag,
            filter_window: default_window(),
            filter_degree: default_degree(),
            history_length: default_history(),
            filter_enabled: true,
        }
    }

    pub fn unfiltered_for(sim: &WristSimulator) -> Self {
        Self {
            filter_enabled: false,
            ..Self::for_simulator(sim)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.filter_window == 0 || self.filter_window % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "filter_window must be odd and positive, got {}",
                self.filter_window
            )));
        }
        if self.filter_degree >= self.filter_window {
            return Err(Error::InvalidConfig(format!(
                "filter_degree {} must be below filter_window {}",
                self.filter_degree, self.filter_window
            )));
        }
        if self.history_length == 0 {
            return Err(Error::InvalidConfig("history_length must be at least 1".into()));
        }
        Ok(())
    }
}

/// Causal least-squares polynomial smoother evaluated at the newest sample.
///
/// With fewer samples than the window the fit uses what is available and the
/// degree drops to at most `len - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialSmoother {
    window: usize,
    // weights[m - 1] applies to the last m samples, oldest first
    weights: Vec<Vec<f64>>,
}

impl PolynomialSmoother {
    pub fn new(window: usize, degree: usize) -> Self {
        let weights = (1..=window)
            .map(|m| trailing_edge_weights(m, degree.min(m - 1)))
            .collect();
        Self { window, weights }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn weights(&self, available: usize) -> &[f64] {
        &self.weights[available.clamp(1, self.window) - 1]
    }

    /// Smoothed value at the last element of `samples` (oldest first).
    pub fn apply(&self, samples: &[f64]) -> f64 {
        let m = samples.len().min(self.window);
        let tail = &samples[samples.len() - m..];
        self.weights(m).iter().zip(tail).map(|(w, x)| w * x).sum()
    }
}

fn trailing_edge_weights(m: usize, degree: usize) -> Vec<f64> {
    // abscissae -(m-1)..=0 so the evaluation point is x = 0
    let cols = degree + 1;
    let x = DMatrix::from_fn(m, cols, |r, c| (r as f64 - (m - 1) as f64).powi(c as i32));
    let xtx = x.transpose() * &x;
    let inv = xtx
        .try_inverse()
        .expect("distinct abscissae give a full-rank Vandermonde system");
    // value at 0 is the constant coefficient: e0^T (X^T X)^-1 X^T
    let row = inv.row(0) * x.transpose();
    row.iter().copied().collect()
}

/// Latest `history_length` filtered signals, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalWindow {
    pub signals: Vec<DeformationSignal>,
    pub timestamps: Vec<f64>,
}

impl SignalWindow {
    pub fn shape(&self) -> (usize, usize) {
        (self.signals.len(), 6)
    }

    pub fn as_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.signals.len(), 6, |r, c| self.signals[r].component(c))
    }

    /// Writes the window as a headerless row-major CSV matrix.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for s in &self.signals {
            w.write_record(s.as_vector6().iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One line of a trace file. A record flagged `reference` carries the
/// zeroing pose; other records are ingests, with `tag_in_cam` absent for a
/// missed detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub tag_in_cam: Option<Pose>,
    pub raw_signal: DeformationSignal,
    pub filtered_signal: DeformationSignal,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_wrench: Option<Wrench>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub reference: bool,
}

pub fn write_trace<W: Write>(records: &[TraceRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<TraceRecord>> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
            line: i + 1,
            reason: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}

/// Handle for readers of the most recent window. Writers replace the whole
/// window under the lock, so a read never observes a partial update.
#[derive(Debug, Clone, Default)]
pub struct SharedWindow(Arc<RwLock<Option<SignalWindow>>>);

impl SharedWindow {
    pub fn latest(&self) -> Option<SignalWindow> {
        self.0.read().expect("window lock poisoned").clone()
    }

    fn publish(&self, w: SignalWindow) {
        *self.0.write().expect("window lock poisoned") = Some(w);
    }
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    config: PipelineConfig,
    smoother: PolynomialSmoother,
    reference: Option<Pose>,
    raw: VecDeque<Vector6<f64>>,
    history: VecDeque<(f64, DeformationSignal)>,
    last_t: Option<f64>,
    last_raw: Option<DeformationSignal>,
    last_filtered: Option<DeformationSignal>,
    gaps: usize,
    ingested: usize,
    trace: Vec<TraceRecord>,
    shared: SharedWindow,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            smoother: PolynomialSmoother::new(config.filter_window, config.filter_degree),
            config,
            reference: None,
            raw: VecDeque::with_capacity(config.filter_window),
            history: VecDeque::with_capacity(config.history_length),
            last_t: None,
            last_raw: None,
            last_filtered: None,
            gaps: 0,
            ingested: 0,
            trace: Vec::new(),
            shared: SharedWindow::default(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn connector_in_flange(&self, tag_in_cam: &Pose) -> Pose {
        self.config
            .extrinsic
            .compose(tag_in_cam)
            .compose(&self.config.alignment)
    }

    /// Stores the unloaded connector pose; later signals are relative to it.
    /// Calling it mid-stream re-zeroes and clears the smoother state.
    pub fn set_reference(&mut self, tag_in_cam: &Pose) {
        if self.reference.is_some() {
            log::info!("pipeline re-zeroed after {} samples", self.ingested);
        }
        self.reference = Some(self.connector_in_flange(tag_in_cam));
        self.raw.clear();
        self.trace.push(TraceRecord {
            t: self.last_t.unwrap_or(0.0),
            tag_in_cam: Some(*tag_in_cam),
            raw_signal: DeformationSignal::zero(),
            filtered_signal: DeformationSignal::zero(),
            true_wrench: None,
            reference: true,
        });
    }

    /// Unfiltered signal of a pose against the current reference.
    pub fn raw_signal(&self, tag_in_cam: &Pose) -> Result<DeformationSignal> {
        let reference = self.reference.as_ref().ok_or(Error::NoReference)?;
        Ok(decompose(&deformation(
            reference,
            &self.connector_in_flange(tag_in_cam),
        )))
    }

    pub fn ingest(&mut self, t: f64, tag_in_cam: &Pose) -> Result<DeformationSignal> {
        self.ingest_with_truth(t, Some(*tag_in_cam), None)
    }

    /// Ingest a sample; `None` marks a missed detection, which repeats the
    /// last filtered value and counts a gap.
    pub fn ingest_with_truth(
        &mut self,
        t: f64,
        tag_in_cam: Option<Pose>,
        true_wrench: Option<Wrench>,
    ) -> Result<DeformationSignal> {
        if self.reference.is_none() {
            return Err(Error::NoReference);
        }
        if !t.is_finite() {
            return Err(Error::InvalidConfig(format!("timestamp {t} is not finite")));
        }
        if let Some(last) = self.last_t {
            if t <= last {
                return Err(Error::NonMonotoneTimestamp { t, last });
            }
        }
        let (raw, filtered) = match tag_in_cam {
            Some(pose) => {
                let raw = self.raw_signal(&pose)?;
                let filtered = if self.config.filter_enabled {
                    self.push_raw(raw.as_vector6());
                    self.smooth()
                } else {
                    raw
                };
                (raw, filtered)
            }
            None => {
                self.gaps += 1;
                let held = self.last_filtered.unwrap_or_else(DeformationSignal::zero);
                (self.last_raw.unwrap_or(held), held)
            }
        };
        self.last_t = Some(t);
        self.last_raw = Some(raw);
        self.last_filtered = Some(filtered);
        self.ingested += 1;
        if self.history.len() == self.config.history_length {
            self.history.pop_front();
        }
        self.history.push_back((t, filtered));
        self.trace.push(TraceRecord {
            t,
            tag_in_cam,
            raw_signal: raw,
            filtered_signal: filtered,
            true_wrench,
            reference: false,
        });
        if let Ok(w) = self.window() {
            self.shared.publish(w);
        }
        Ok(filtered)
    }

    pub fn ingest_gap(&mut self, t: f64) -> Result<DeformationSignal> {
        self.ingest_with_truth(t, None, None)
    }

    fn push_raw(&mut self, v: Vector6<f64>) {
        if self.raw.len() == self.config.filter_window {
            self.raw.pop_front();
        }
        self.raw.push_back(v);
    }

    fn smooth(&self) -> DeformationSignal {
        let w = self.smoother.weights(self.raw.len());
        let v = self
            .raw
            .iter()
            .zip(w)
            .fold(Vector6::zeros(), |acc, (x, wi)| acc + x * *wi);
        DeformationSignal::from_vector6(&v)
    }

    pub fn window(&self) -> Result<SignalWindow> {
        let need = self.config.history_length;
        if self.history.len() < need {
            return Err(Error::NotReady {
                have: self.history.len(),
                need,
            });
        }
        Ok(SignalWindow {
            timestamps: self.history.iter().map(|(t, _)| *t).collect(),
            signals: self.history.iter().map(|(_, s)| *s).collect(),
        })
    }

    pub fn shared_window(&self) -> SharedWindow {
        self.shared.clone()
    }

    pub fn last_raw(&self) -> Option<DeformationSignal> {
        self.last_raw
    }

    pub fn last_filtered(&self) -> Option<DeformationSignal> {
        self.last_filtered
    }

    pub fn last_timestamp(&self) -> Option<f64> {
        self.last_t
    }

    pub fn gap_count(&self) -> usize {
        self.gaps
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        std::mem::take(&mut self.trace)
    }
}

/// Feeds a recorded trace through a fresh pipeline and returns the new trace.
pub fn replay(config: PipelineConfig, records: &[TraceRecord]) -> Result<Vec<TraceRecord>> {
    let mut p = Pipeline::new(config)?;
    for r in records {
        if r.reference {
            let pose = r.tag_in_cam.ok_or_else(|| {
                Error::InvalidConfig(format!("reference record at t={} has no pose", r.t))
            })?;
            p.set_reference(&pose);
        } else {
            p.ingest_with_truth(r.t, r.tag_in_cam, r.true_wrench)?;
        }
    }
    Ok(p.take_trace())
}
