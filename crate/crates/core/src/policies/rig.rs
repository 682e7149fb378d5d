use nalgebra::{Matrix6, Vector3};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::se3::{DeformationSignal, Wrench};
use crate::sensing::{Pipeline, PipelineConfig, TraceRecord};
use crate::world::{Command, ContactScene, EffectorState};
use crate::wrist::{StiffnessMatrix, WristSimulator};

use super::{ThresholdTrigger, TriggerState};

/// Source of the signal the policies act on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Sensing {
    /// Camera-observed wrist deformation through the sensing pipeline.
    #[default]
    Wrist,
    /// Ideal force/torque sensor: the true wrench mapped through the nominal
    /// compliance, so signal-unit thresholds apply unchanged.
    Ft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub step: usize,
    pub skill: String,
    pub trigger: String,
    pub value: f64,
    /// Ground-truth wrench at the firing sample.
    pub true_wrench: Wrench,
}

/// Closed sense-act loop around one scene.
#[derive(Debug, Clone)]
pub struct Rig {
    scene: ContactScene,
    state: EffectorState,
    sim: WristSimulator,
    pipeline: Pipeline,
    sensing: Sensing,
    ft_compliance: Matrix6<f64>,
    ft_trace: Vec<TraceRecord>,
    rng: ChaCha8Rng,
    dt: f64,
    t: f64,
    steps: usize,
    wrench: Wrench,
    signal: DeformationSignal,
    log: Vec<TriggerEvent>,
    /// Sum of lateral corrections commanded by insertion (mm).
    pub lateral_correction_mm: f64,
    /// Largest lateral signal magnitude seen during insertion.
    pub peak_lateral_signal: f64,
}

impl Rig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        scene: ContactScene,
        state: EffectorState,
        sim: WristSimulator,
        pipeline: PipelineConfig,
        sensing: Sensing,
        nominal: &StiffnessMatrix,
        dt: f64,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        scene.validate()?;
        state.validate()?;
        let wrench = scene.contact_wrench(&state);
        let mut rig = Self {
            scene,
            state,
            sim,
            pipeline: Pipeline::new(pipeline)?,
            sensing,
            ft_compliance: *nominal.compliance(),
            ft_trace: Vec::new(),
            rng,
            dt,
            t: 0.0,
            steps: 0,
            wrench,
            signal: DeformationSignal::zero(),
            log: Vec::new(),
            lateral_correction_mm: 0.0,
            peak_lateral_signal: 0.0,
        };
        rig.zero();
        Ok(rig)
    }

    /// Re-zeroes the signal on the current (assumed unloaded) wrist.
    pub fn zero(&mut self) {
        if self.sensing == Sensing::Wrist {
            let reference = self.sim.reference_observation(&mut self.rng);
            self.pipeline.set_reference(&reference);
        }
        self.signal = DeformationSignal::zero();
    }

    /// Moves to another scene and re-zeroes.
    pub fn switch_scene(&mut self, scene: ContactScene, state: EffectorState) -> Result<()> {
        scene.validate()?;
        state.validate()?;
        self.wrench = scene.contact_wrench(&state);
        self.scene = scene;
        self.state = state;
        self.zero();
        Ok(())
    }

    fn sense(&mut self) -> Result<()> {
        self.t += self.dt;
        let w = self.wrench;
        self.signal = match self.sensing {
            Sensing::Wrist => {
                let pose = self.sim.observe(&w, &mut self.rng);
                self.pipeline.ingest_with_truth(self.t, Some(pose), Some(w))?
            }
            Sensing::Ft => {
                let s = DeformationSignal::from_vector6(&(self.ft_compliance * w.as_vector6()));
                self.ft_trace.push(TraceRecord {
                    t: self.t,
                    tag_in_cam: None,
                    raw_signal: s,
                    filtered_signal: s,
                    true_wrench: Some(w),
                    reference: false,
                });
                s
            }
        };
        Ok(())
    }

    pub fn act(&mut self, cmd: &Command) -> Result<DeformationSignal> {
        let (state, wrench) = self.scene.step(&self.state, cmd, self.dt)?;
        self.state = state;
        self.wrench = wrench;
        self.steps += 1;
        self.sense()?;
        Ok(self.signal)
    }

    pub fn dwell(&mut self) -> Result<DeformationSignal> {
        self.act(&Command::default())
    }

    /// Feeds the current signal to a trigger, logging a fire.
    pub fn watch(&mut self, skill: &str, trigger: &ThresholdTrigger, state: &mut TriggerState) -> bool {
        let v = self.signal.component(trigger.component);
        let fired = state.update(trigger, v);
        if fired {
            self.log.push(TriggerEvent {
                step: self.steps,
                skill: skill.to_string(),
                trigger: trigger.id.clone(),
                value: v,
                true_wrench: self.wrench,
            });
        }
        fired
    }

    pub fn note(&mut self, skill: &str, event: &str, value: f64) {
        self.log.push(TriggerEvent {
            step: self.steps,
            skill: skill.to_string(),
            trigger: event.to_string(),
            value,
            true_wrench: self.wrench,
        });
    }

    pub fn signal(&self) -> &DeformationSignal {
        &self.signal
    }

    pub fn value(&self, component: usize) -> f64 {
        self.signal.component(component)
    }

    pub fn wrench(&self) -> &Wrench {
        &self.wrench
    }

    pub fn state(&self) -> &EffectorState {
        &self.state
    }

    pub fn scene(&self) -> &ContactScene {
        &self.scene
    }

    pub fn position_mm(&self) -> Vector3<f64> {
        self.state.position_mm()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn log(&self) -> &[TriggerEvent] {
        &self.log
    }

    pub fn is_success(&self) -> bool {
        self.scene.is_success(&self.state)
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        match self.sensing {
            Sensing::Wrist => self.pipeline.take_trace(),
            Sensing::Ft => std::mem::take(&mut self.ft_trace),
        }
    }

    pub fn into_log(self) -> Vec<TriggerEvent> {
        self.log
    }
}
