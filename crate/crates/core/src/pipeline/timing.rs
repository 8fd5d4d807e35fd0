use std::time::Instant;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Project,
    Fill,
    Label,
    Crf,
    Backproject,
    Lookup,
    Transform,
    Insert,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Project,
        Stage::Fill,
        Stage::Label,
        Stage::Crf,
        Stage::Backproject,
        Stage::Lookup,
        Stage::Transform,
        Stage::Insert,
    ];
}

/// Seconds spent per stage on one frame.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    pub stages: [f64; 8],
    /// End-to-end wall time when measured separately; 0 otherwise.
    pub wall: f64,
}

impl StageTimes {
    pub fn measure<R>(&mut self, stage: Stage, f: impl FnOnce() -> R) -> R {
        let start = Instant::now();
        let r = f();
        self.stages[stage as usize] += start.elapsed().as_secs_f64();
        r
    }

    pub fn get(&self, stage: Stage) -> f64 {
        self.stages[stage as usize]
    }

    pub fn total(&self) -> f64 {
        if self.wall > 0.0 {
            self.wall
        } else {
            self.stages.iter().sum()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageSummary {
    pub median_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
}

impl StageSummary {
    /// Nearest-rank percentiles over `seconds`.
    pub fn from_seconds(seconds: &[f64]) -> Self {
        if seconds.is_empty() {
            return Self { median_ms: 0.0, p95_ms: 0.0, mean_ms: 0.0 };
        }
        let mut v: Vec<f64> = seconds.iter().map(|s| s * 1e3).collect();
        v.sort_by(f64::total_cmp);
        let rank = |p: f64| v[((p * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        Self { median_ms: rank(0.5), p95_ms: rank(0.95), mean_ms: v.iter().sum::<f64>() / v.len() as f64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingReport {
    pub samples: usize,
    pub total: StageSummary,
    pub stages: Vec<(Stage, StageSummary)>,
}

impl TimingReport {
    pub fn from_samples(samples: &[StageTimes]) -> Self {
        let column = |f: &dyn Fn(&StageTimes) -> f64| samples.iter().map(f).collect::<Vec<f64>>();
        Self {
            samples: samples.len(),
            total: StageSummary::from_seconds(&column(&|t| t.total())),
            stages: Stage::ALL.iter().map(|&s| (s, StageSummary::from_seconds(&column(&|t| t.get(s))))).collect(),
        }
    }

    pub fn stage(&self, stage: Stage) -> StageSummary {
        self.stages.iter().find(|(s, _)| *s == stage).map(|(_, v)| *v).expect("every stage is reported")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let s: Vec<f64> = (1..=100).map(|i| i as f64 / 1e3).collect();
        let r = StageSummary::from_seconds(&s);
        assert!((r.median_ms - 50.0).abs() < 1e-9);
        assert!((r.p95_ms - 95.0).abs() < 1e-9);
        assert_eq!(StageSummary::from_seconds(&[]).p95_ms, 0.0);
    }
}
