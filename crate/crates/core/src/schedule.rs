//! Time schedules driving sequence generation: a single transformation axis,
//! or disentangled content/style axes over the unit square.

use rand::Rng;

use crate::error::{Error, Result};

/// Ordered sample times on [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub enum TimeSchedule {
    /// Ascending times with exact endpoints 0 and 1.
    Single(Vec<f64>),
    /// Per-frame (content, style) coordinates; both axes ascending with
    /// exact endpoints (0,0) and (1,1).
    Dual(Vec<(f64, f64)>),
}

impl TimeSchedule {
    /// Evenly spaced times `t_i = (i−1)/(k−1)`.
    pub fn uniform(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::arg("uniform_schedule", format!("k = {k} < 2")));
        }
        let times = (0..k).map(|i| i as f64 / (k - 1) as f64).collect();
        Ok(TimeSchedule::Single(times))
    }

    /// Content/style schedule: k−2 interior points sampled i.i.d. uniform
    /// per axis, sorted, endpoints pinned to exactly 0 and 1.
    pub fn content_style(k: usize, rng: &mut impl Rng) -> Result<Self> {
        if k < 2 {
            return Err(Error::arg("cs_schedule", format!("k = {k} < 2")));
        }
        let axis = |rng: &mut dyn FnMut() -> f64| {
            let mut interior: Vec<f64> = (0..k - 2).map(|_| rng()).collect();
            interior.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
            let mut ts = Vec::with_capacity(k);
            ts.push(0.0);
            ts.extend(interior);
            ts.push(1.0);
            ts
        };
        let content = axis(&mut || rng.random::<f64>());
        let style = axis(&mut || rng.random::<f64>());
        Ok(TimeSchedule::Dual(content.into_iter().zip(style).collect()))
    }

    pub fn from_single(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::arg("schedule", "needs at least 2 samples"));
        }
        if times[0] != 0.0 || *times.last().expect("nonempty") != 1.0 {
            return Err(Error::arg("schedule", "endpoints must be exactly 0 and 1"));
        }
        if times.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::arg("schedule", "times must ascend"));
        }
        Ok(TimeSchedule::Single(times))
    }

    pub fn len(&self) -> usize {
        match self {
            TimeSchedule::Single(v) => v.len(),
            TimeSchedule::Dual(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_dual(&self) -> bool {
        matches!(self, TimeSchedule::Dual(_))
    }

    /// Times governing geometry: the warp axis and frame pacing.
    pub fn content_times(&self) -> Vec<f64> {
        match self {
            TimeSchedule::Single(v) => v.clone(),
            TimeSchedule::Dual(v) => v.iter().map(|(c, _)| *c).collect(),
        }
    }

    /// Times governing appearance: the statistics blend and warped-input
    /// similarity weighting.
    pub fn style_times(&self) -> Vec<f64> {
        match self {
            TimeSchedule::Single(v) => v.clone(),
            TimeSchedule::Dual(v) => v.iter().map(|(_, s)| *s).collect(),
        }
    }
}
