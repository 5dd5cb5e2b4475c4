//! Flattening windows into network inputs, and fitting the input scaling.

use tensornet::{FeatureMode, FeatureSpec, Normalizer};

use crate::quadsim::{INPUT_DIM, OUTPUT_DIM};
use crate::window::TrajectoryWindow;
use crate::{Error, Result};

pub fn feature_spec(mode: FeatureMode, window_len: usize) -> Result<FeatureSpec> {
    Ok(FeatureSpec::new(mode, OUTPUT_DIM, INPUT_DIM, window_len)?)
}

/// Row-major `[T × width]` features: `[y, u]`, `[y, u, ỹ]` or `[ỹ]` per step.
pub fn window_features(win: &TrajectoryWindow, mode: FeatureMode) -> Result<Vec<f64>> {
    let resid = match (mode.uses_residuals(), &win.resid_seq) {
        (true, Some(r)) => Some(r),
        (true, None) => return Err(Error::Shape(format!("{mode:?} features need residuals"))),
        (false, _) => None,
    };
    let t = win.len();
    let mut out = Vec::with_capacity(t * (2 * OUTPUT_DIM + INPUT_DIM));
    for k in 0..t {
        if mode != FeatureMode::ResidualOnly {
            out.extend_from_slice(&win.y_seq[k].0);
            out.extend_from_slice(&win.u_seq[k].0);
        }
        if let Some(r) = resid {
            out.extend_from_slice(&r[k].0);
        }
    }
    Ok(out)
}

/// Channel groups sharing one scale. Groups exchanged by a yaw rotation
/// (horizontal position, roll/pitch, roll/pitch moments) are pooled so that
/// scaling commutes with the rotation cases.
fn channel_groups(mode: FeatureMode) -> Vec<Vec<usize>> {
    let output_groups = |base: usize| vec![vec![base, base + 1], vec![base + 2], vec![base + 3, base + 4], vec![base + 5]];
    match mode {
        FeatureMode::ResidualOnly => output_groups(0),
        FeatureMode::ModelFree | FeatureMode::ModelBased => {
            let mut g = output_groups(0);
            g.extend([vec![6], vec![7, 8], vec![9]]);
            if mode == FeatureMode::ModelBased {
                g.extend(output_groups(10));
            }
            g
        }
    }
}

/// Channel whose mean is removed (collective thrust), if present.
fn offset_channel(mode: FeatureMode) -> Option<usize> {
    (mode != FeatureMode::ResidualOnly).then_some(OUTPUT_DIM)
}

/// Per-group RMS scaling fitted on healthy windows. Groups that are identically
/// zero on healthy data (residuals under a matching model) fall back to all
/// windows.
pub fn fit_normalizer<'a, I>(samples: I, spec: &FeatureSpec) -> Normalizer
where
    I: IntoIterator<Item = (&'a [f64], bool)> + Clone,
{
    let w = spec.per_step_width();
    let mut norm = Normalizer::identity(w);
    let stats = |healthy_only: bool| {
        let mut sum = vec![0.0; w];
        let mut sq = vec![0.0; w];
        let mut rows = 0usize;
        for (feat, healthy) in samples.clone() {
            if healthy_only && !healthy {
                continue;
            }
            for row in feat.chunks_exact(w) {
                for c in 0..w {
                    sum[c] += row[c];
                    sq[c] += row[c] * row[c];
                }
                rows += 1;
            }
        }
        (sum, sq, rows)
    };
    let healthy = stats(true);
    let all = stats(false);
    let offset_c = offset_channel(spec.mode);
    if let Some(c) = offset_c {
        let (sum, _, rows) = if healthy.2 > 0 { &healthy } else { &all };
        if *rows > 0 {
            norm.offset[c] = sum[c] / *rows as f64;
        }
    }
    for group in channel_groups(spec.mode) {
        let rms = |(sum, sq, rows): &(Vec<f64>, Vec<f64>, usize)| {
            if *rows == 0 {
                return 0.0;
            }
            let n = (*rows * group.len()) as f64;
            let mut acc = 0.0;
            for &c in &group {
                acc += if Some(c) == offset_c {
                    let mean = sum[c] / *rows as f64;
                    sq[c] - *rows as f64 * mean * mean
                } else {
                    sq[c]
                };
            }
            (acc.max(0.0) / n).sqrt()
        };
        let mut r = rms(&healthy);
        if !(r > 1e-12) {
            r = rms(&all);
        }
        let scale = if r > 1e-12 && r.is_finite() { 1.0 / r } else { 1.0 };
        for &c in &group {
            norm.scale[c] = scale;
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadsim::{FaultVector, Output, Wrench};

    fn window(resid: bool) -> TrajectoryWindow {
        TrajectoryWindow {
            y_seq: (0..3).map(|k| Output([k as f64, 1.0, 2.0, 3.0, 4.0, 5.0])).collect(),
            u_seq: (0..3).map(|k| Wrench([10.0 + k as f64, 11.0, 12.0, 13.0])).collect(),
            resid_seq: resid.then(|| (0..3).map(|k| Output([-(k as f64); 6])).collect()),
            label: FaultVector::healthy(),
            onset_offset: 0,
        }
    }

    #[test]
    fn layouts_per_mode() {
        let w = window(true);
        let mf = window_features(&w, FeatureMode::ModelFree).unwrap();
        let mb = window_features(&w, FeatureMode::ModelBased).unwrap();
        let ro = window_features(&w, FeatureMode::ResidualOnly).unwrap();
        assert_eq!((mf.len(), mb.len(), ro.len()), (30, 48, 18));
        assert_eq!(&mf[10..16], &[1.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(mb[16 + 10], -1.0);
        assert!(window_features(&window(false), FeatureMode::ModelBased).is_err());
    }

    #[test]
    fn pooled_groups_share_scale_and_thrust_is_centered() {
        let spec = feature_spec(FeatureMode::ModelFree, 2).unwrap();
        let a = vec![1.0, 3.0, 2.0, 0.1, 0.3, 0.5, 0.30, 1e-5, -1e-5, 2e-6, -1.0, -3.0, -2.0, -0.1, -0.3, -0.5, 0.28, -1e-5, 1e-5, -2e-6];
        let norm = fit_normalizer([(a.as_slice(), true)], &spec);
        assert_eq!(norm.scale[0], norm.scale[1]);
        assert_eq!(norm.scale[3], norm.scale[4]);
        assert_eq!(norm.scale[7], norm.scale[8]);
        assert!((norm.offset[6] - 0.29).abs() < 1e-12);
        assert!((norm.scale[6] - 100.0).abs() < 1e-9);
        assert!(norm.offset.iter().enumerate().all(|(i, o)| i == 6 || *o == 0.0));
    }

    #[test]
    fn zero_healthy_residuals_fall_back_to_all_windows() {
        let spec = feature_spec(FeatureMode::ResidualOnly, 1).unwrap();
        let healthy = vec![0.0; 6];
        let faulty = vec![2.0; 6];
        let norm = fit_normalizer([(healthy.as_slice(), true), (faulty.as_slice(), false)], &spec);
        assert!(norm.scale.iter().all(|s| (*s - 1.0 / 2f64.sqrt()).abs() < 1e-12));
    }
}
