use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::DeformationSignal;

use super::{SkillOutcome, SkillStatus};

pub const DEFAULT_DEBOUNCE: usize = 3;
pub const DEFAULT_HYSTERESIS_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Crossing {
    Rising,
    Falling,
}

/// Threshold on one component of the force-like signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTrigger {
    pub id: String,
    pub component: usize,
    pub level: f64,
    pub direction: Crossing,
    pub hysteresis: f64,
    pub debounce: usize,
}

impl ThresholdTrigger {
    /// Trigger with the default debounce and a hysteresis of 10% of |level|.
    pub fn new(id: impl Into<String>, component: usize, level: f64, direction: Crossing) -> Self {
        Self {
            id: id.into(),
            component,
            level,
            direction,
            hysteresis: DEFAULT_HYSTERESIS_FRACTION * level.abs(),
            debounce: DEFAULT_DEBOUNCE,
        }
    }

    pub fn with_debounce(mut self, debounce: usize) -> Self {
        self.debounce = debounce;
        self
    }

    pub fn with_hysteresis(mut self, hysteresis: f64) -> Self {
        self.hysteresis = hysteresis;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.component >= 6 {
            return Err(Error::InvalidConfig(format!(
                "trigger {} component {} out of range",
                self.id, self.component
            )));
        }
        if !(self.hysteresis >= 0.0) || self.debounce == 0 || !self.level.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "trigger {} needs finite level, hysteresis >= 0 and debounce >= 1",
                self.id
            )));
        }
        Ok(())
    }

    pub fn past_level(&self, v: f64) -> bool {
        match self.direction {
            Crossing::Rising => v >= self.level,
            Crossing::Falling => v <= self.level,
        }
    }

    fn retreated(&self, v: f64) -> bool {
        match self.direction {
            Crossing::Rising => v < self.level - self.hysteresis,
            Crossing::Falling => v > self.level + self.hysteresis,
        }
    }

    pub fn arm(&self) -> TriggerState {
        TriggerState {
            armed: true,
            count: 0,
            fires: 0,
        }
    }
}

/// Runtime state of one trigger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TriggerState {
    armed: bool,
    count: usize,
    fires: usize,
}

impl TriggerState {
    /// Feeds one sample; true when the trigger fires on it.
    pub fn update(&mut self, trigger: &ThresholdTrigger, v: f64) -> bool {
        if !self.armed {
            if trigger.retreated(v) {
                self.armed = true;
                self.count = 0;
            }
            return false;
        }
        if trigger.past_level(v) {
            self.count += 1;
            if self.count >= trigger.debounce {
                self.armed = false;
                self.count = 0;
                self.fires += 1;
                return true;
            }
        } else {
            self.count = 0;
        }
        false
    }

    /// Past the level but still inside the debounce window.
    pub fn pending(&self) -> bool {
        self.armed && self.count > 0
    }

    pub fn fires(&self) -> usize {
        self.fires
    }
}

/// Runs an armed trigger over a signal stream until it fires.
pub fn run_trigger<I>(trigger: &ThresholdTrigger, stream: I) -> SkillOutcome
where
    I: IntoIterator<Item = DeformationSignal>,
{
    run_trigger_values(trigger, stream.into_iter().map(|s| s.component(trigger.component)))
}

pub fn run_trigger_values<I>(trigger: &ThresholdTrigger, values: I) -> SkillOutcome
where
    I: IntoIterator<Item = f64>,
{
    let mut state = trigger.arm();
    let mut n = 0;
    for v in values {
        n += 1;
        if state.update(trigger, v) {
            return SkillOutcome {
                status: SkillStatus::Triggered,
                fired_trigger: Some(trigger.id.clone()),
                steps_used: n,
                retry: false,
            };
        }
    }
    SkillOutcome {
        status: SkillStatus::Running,
        fired_trigger: None,
        steps_used: n,
        retry: false,
    }
}

/// Every index at which the trigger fires over the whole stream.
pub fn fire_indices<I>(trigger: &ThresholdTrigger, values: I) -> Vec<usize>
where
    I: IntoIterator<Item = f64>,
{
    let mut state = trigger.arm();
    values
        .into_iter()
        .enumerate()
        .filter_map(|(i, v)| state.update(trigger, v).then_some(i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rising(level: f64) -> ThresholdTrigger {
        ThresholdTrigger::new("t", 2, level, Crossing::Rising)
    }

    #[test]
    fn flat_below_never_fires() {
        let out = run_trigger_values(&rising(1.0), std::iter::repeat_n(0.5, 1000));
        assert_eq!(out.status, SkillStatus::Running);
        assert_eq!(out.steps_used, 1000);
    }

    #[test]
    fn ramp_fires_once_after_debounce() {
        let t = rising(1.0);
        let ramp: Vec<f64> = (0..100).map(|i| i as f64 * 0.05).collect();
        // first sample at or above 1.0 is index 20; debounce 3 fires at 22
        assert_eq!(fire_indices(&t, ramp.iter().copied()), vec![22]);
        let out = run_trigger_values(&t, ramp);
        assert_eq!(out.status, SkillStatus::Triggered);
        assert_eq!(out.steps_used, 23);
        assert_eq!(out.fired_trigger.as_deref(), Some("t"));
    }

    #[test]
    fn chatter_within_hysteresis_fires_at_most_once() {
        let t = rising(1.0);
        let h = t.hysteresis;
        let seq: Vec<f64> = (0..500)
            .map(|i| 1.0 + if (i / 3) % 2 == 0 { h / 2.0 } else { -h / 2.0 })
            .collect();
        assert!(fire_indices(&t, seq).len() <= 1);
    }

    #[test]
    fn rearms_after_retreat() {
        let t = rising(1.0).with_debounce(1);
        let seq = [2.0, 2.0, 0.95, 2.0, 0.5, 2.0];
        // 0.95 is inside the hysteresis band, 0.5 is outside it
        assert_eq!(fire_indices(&t, seq), vec![0, 5]);
    }

    #[test]
    fn falling_direction() {
        let t = ThresholdTrigger::new("f", 2, 0.2, Crossing::Falling).with_debounce(2);
        assert_eq!(fire_indices(&t, [0.5, 0.3, 0.2, 0.1, 0.0]), vec![3]);
    }

    #[test]
    fn pending_reflects_debounce_window() {
        let t = rising(1.0);
        let mut s = t.arm();
        assert!(!s.pending());
        s.update(&t, 1.5);
        assert!(s.pending());
        s.update(&t, 0.0);
        assert!(!s.pending());
    }

    #[test]
    fn invalid_triggers() {
        assert!(rising(1.0).with_debounce(0).validate().is_err());
        assert!(rising(1.0).with_hysteresis(-1.0).validate().is_err());
        assert!(ThresholdTrigger::new("x", 6, 1.0, Crossing::Rising).validate().is_err());
    }
}
