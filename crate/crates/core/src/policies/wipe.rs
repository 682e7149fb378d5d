use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::world::Command;

use super::{PolicyConfig, Rig, SkillOutcome, SkillStatus, WipeParams, Z};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WipeResult {
    pub outcome: SkillOutcome,
    /// Fraction of strip bins wiped.
    pub coverage: f64,
    /// Largest |block-mean Fz − reference| / reference after settling.
    pub max_block_error: f64,
    /// Largest axial signal over the reference level.
    pub max_signal_ratio: f64,
    pub blocks: usize,
}

/// Strokes along +x to `x_end` while a PID on the axial signal holds the
/// wiping reference. `reference_n` is the force the reference stands for and
/// is only used for the steady-state metric.
pub fn pid_wipe(
    rig: &mut Rig,
    cfg: &PolicyConfig,
    params: &WipeParams,
    x_end: f64,
    reference_n: f64,
) -> Result<WipeResult> {
    let r = cfg.thresholds.wipe_reference;
    let max_dz = rig.scene().limits.translation_mm * 0.25;
    let mut integral = 0.0;
    let mut prev = r - rig.value(Z);
    let mut forces = Vec::new();
    let mut max_ratio: f64 = rig.value(Z) / r;
    let mut lost = 0;
    let mut used = 0;
    let mut failed = false;
    while rig.position_mm().x < x_end {
        let e = r - rig.value(Z);
        integral += e;
        let u = params.kp * e + params.ki * integral + params.kd * (e - prev);
        prev = e;
        let dx = params.stroke_step_mm.min(x_end - rig.position_mm().x);
        rig.act(&Command::translate(dx, 0.0, (-u).clamp(-max_dz, max_dz)))?;
        used += 1;
        let s = rig.value(Z);
        max_ratio = max_ratio.max(s / r);
        forces.push(rig.wrench().force().z);
        if s < params.loss_fraction * r {
            lost += 1;
            if lost > params.dwell_limit {
                rig.note("wipe", "contact_lost", s);
                failed = true;
                break;
            }
        } else {
            lost = 0;
        }
    }
    let steady = forces.get(params.settle_steps..).unwrap_or(&[]);
    let block = params.block.max(1);
    let means: Vec<f64> = steady
        .chunks(block)
        .filter(|c| c.len() == block)
        .map(|c| c.iter().sum::<f64>() / block as f64)
        .collect();
    let max_block_error = means
        .iter()
        .map(|m| (m - reference_n).abs() / reference_n)
        .fold(0.0, f64::max);
    let wiped = &rig.state().wiped;
    let coverage = if wiped.is_empty() {
        0.0
    } else {
        wiped.iter().filter(|w| **w).count() as f64 / wiped.len() as f64
    };
    let ok = !failed && !means.is_empty() && rig.is_success() && max_block_error <= params.band_fraction;
    let status = if ok { SkillStatus::Succeeded } else { SkillStatus::Failed };
    Ok(WipeResult {
        outcome: SkillOutcome::new(status, used),
        coverage,
        max_block_error,
        max_signal_ratio: max_ratio,
        blocks: means.len(),
    })
}
