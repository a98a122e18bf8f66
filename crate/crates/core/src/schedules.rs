//! Training couplings of (t, τ) and inference trajectories τ = t^(2^p).

use std::fmt;
use std::str::FromStr;

use rand::Rng;

/// Exponents of the joint trajectory sweep.
pub const P_GRID: [f64; 5] = [-5.0, -2.5, 0.0, 2.5, 5.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimePair {
    pub t: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// One modality clean per sample.
    AlternatingClean,
    /// Uniform over the unit square.
    Independent,
    /// Independent before `switch_step`, alternating-clean from then on.
    Switched,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub switch_step: u64,
}

impl ScheduleSpec {
    pub fn alternating_clean() -> Self {
        Self {
            kind: ScheduleKind::AlternatingClean,
            switch_step: 0,
        }
    }

    pub fn independent() -> Self {
        Self {
            kind: ScheduleKind::Independent,
            switch_step: 0,
        }
    }

    pub fn switched(switch_step: u64) -> Self {
        Self {
            kind: ScheduleKind::Switched,
            switch_step,
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::AlternatingClean => "alternating_clean",
            ScheduleKind::Independent => "independent",
            ScheduleKind::Switched => "switched",
        })
    }
}

impl FromStr for ScheduleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "alternating_clean" | "ac" => Ok(ScheduleKind::AlternatingClean),
            "independent" | "ind" => Ok(ScheduleKind::Independent),
            "switched" => Ok(ScheduleKind::Switched),
            _ => Err(format!("unknown schedule {s:?}")),
        }
    }
}

pub fn sample_times<R: Rng + ?Sized>(spec: &ScheduleSpec, step: u64, rng: &mut R) -> TimePair {
    let kind = match spec.kind {
        ScheduleKind::Switched if step < spec.switch_step => ScheduleKind::Independent,
        ScheduleKind::Switched => ScheduleKind::AlternatingClean,
        k => k,
    };
    match kind {
        ScheduleKind::Independent => TimePair {
            t: rng.random(),
            tau: rng.random(),
        },
        _ => {
            let image_side: bool = rng.random();
            let u: f64 = rng.random();
            if image_side {
                TimePair { t: u, tau: 1.0 }
            } else {
                TimePair { t: 1.0, tau: u }
            }
        }
    }
}

/// `t^(2^p)`, pinned to 0 and 1 at the endpoints.
pub fn trajectory_tau(t: f64, p: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        t.powf(2f64.powf(p))
    }
}
