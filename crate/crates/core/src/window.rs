//! Fixed-length feature windows cut from sampled trajectories.

use serde::{Deserialize, Serialize};

use crate::quadsim::{FaultVector, Output, Trajectory, Wrench, OUTPUT_DIM, INPUT_DIM};
use crate::{Error, Result};

/// Length-`T` slice of outputs, commanded wrenches and optional residuals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryWindow {
    pub y_seq: Vec<Output>,
    pub u_seq: Vec<Wrench>,
    pub resid_seq: Option<Vec<Output>>,
    pub label: FaultVector,
    /// Number of trailing samples taken after the fault became active.
    pub onset_offset: usize,
}

impl TrajectoryWindow {
    pub fn len(&self) -> usize {
        self.y_seq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_seq.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.y_seq.len();
        if t == 0 || self.u_seq.len() != t {
            return Err(Error::Shape(format!("window has {} outputs and {} inputs", t, self.u_seq.len())));
        }
        if let Some(r) = &self.resid_seq {
            if r.len() != t {
                return Err(Error::Shape(format!("window has {} residuals for {} samples", r.len(), t)));
            }
        }
        if self.onset_offset > t {
            return Err(Error::Shape(format!("onset offset {} exceeds window length {t}", self.onset_offset)));
        }
        Ok(())
    }

    /// Per-step feature rows `[y, u]` or `[y, u, resid]`, concatenated.
    pub fn per_step_width(&self) -> usize {
        OUTPUT_DIM + INPUT_DIM + if self.resid_seq.is_some() { OUTPUT_DIM } else { 0 }
    }
}

/// Sliding windows ending at samples `k = onset ..= last`, each covering
/// `[k − T + 1, k]`. The window ending at `k` has `min(k − onset, T)` faulty
/// samples.
///
/// Only windows lying entirely inside the recorded (finite) prefix are
/// returned, so a truncated trajectory yields the windows it can support.
pub fn slice_windows(
    traj: &Trajectory,
    resid: Option<&[Output]>,
    label: FaultVector,
    onset_step: usize,
    window_len: usize,
    last_end: usize,
) -> Result<Vec<TrajectoryWindow>> {
    if window_len == 0 || onset_step + 1 < window_len {
        return Err(Error::Config(format!(
            "window length {window_len} does not fit before onset step {onset_step}"
        )));
    }
    if let Some(r) = resid {
        if r.len() != traj.len() {
            return Err(Error::Shape(format!("{} residuals for {} samples", r.len(), traj.len())));
        }
    }
    let outputs = traj.outputs();
    let mut out = Vec::new();
    for k in onset_step..=last_end {
        if k >= traj.len() {
            break;
        }
        let lo = k + 1 - window_len;
        out.push(TrajectoryWindow {
            y_seq: outputs[lo..=k].to_vec(),
            u_seq: traj.inputs[lo..=k].to_vec(),
            resid_seq: resid.map(|r| r[lo..=k].to_vec()),
            label,
            onset_offset: (k - onset_step).min(window_len),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadsim::State;

    fn ramp(n: usize) -> Trajectory {
        let states = (0..n)
            .map(|t| {
                let mut x = State::hover();
                x.0[0] = t as f64;
                x
            })
            .collect();
        let inputs = (0..n).map(|t| Wrench([t as f64, 0.0, 0.0, 0.0])).collect();
        Trajectory { states, inputs, diverged_at: None }
    }

    #[test]
    fn windows_cover_trailing_samples() {
        let traj = ramp(201);
        let w = slice_windows(&traj, None, FaultVector::healthy(), 100, 100, 200).unwrap();
        assert_eq!(w.len(), 101);
        assert_eq!(w[0].onset_offset, 0);
        assert_eq!(w[0].y_seq[0].0[0], 1.0);
        assert_eq!(w[0].y_seq[99].0[0], 100.0);
        assert_eq!(w[100].onset_offset, 100);
        assert_eq!(w[100].u_seq[99].0[0], 200.0);
        assert!(w.iter().all(|w| w.len() == 100 && w.validate().is_ok()));
    }

    #[test]
    fn truncated_trajectory_yields_prefix_windows() {
        let mut traj = ramp(130);
        traj.diverged_at = Some(130);
        let w = slice_windows(&traj, None, FaultVector::healthy(), 100, 100, 200).unwrap();
        assert_eq!(w.len(), 30);
        assert_eq!(w.last().unwrap().onset_offset, 29);
    }

    #[test]
    fn overlap_saturates_at_window_length() {
        let traj = ramp(201);
        let w = slice_windows(&traj, None, FaultVector::healthy(), 100, 10, 200).unwrap();
        assert_eq!(w.len(), 101);
        assert_eq!(w[10].onset_offset, 10);
        assert_eq!(w[100].onset_offset, 10);
        assert!(w.iter().all(|w| w.validate().is_ok()));
    }

    #[test]
    fn window_must_fit_before_onset() {
        let traj = ramp(201);
        assert!(slice_windows(&traj, None, FaultVector::healthy(), 50, 100, 200).is_err());
    }

    #[test]
    fn residuals_follow_the_same_slice() {
        let traj = ramp(201);
        let resid: Vec<Output> = traj.outputs();
        let w = slice_windows(&traj, Some(&resid), FaultVector::healthy(), 100, 100, 101).unwrap();
        assert_eq!(w[1].resid_seq.as_ref().unwrap(), &w[1].y_seq);
        assert_eq!(w[1].per_step_width(), 16);
    }
}
