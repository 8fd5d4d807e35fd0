//! Per-pixel label distributions and their refinement.

mod crf;
mod lab;
mod labelmap;

use serde::{Deserialize, Serialize};

use crate::material_db::{SemanticLabel, LABEL_COUNT};
use crate::{Error, Result};

pub use crf::{densecrf_refine, mean_field_step, pairwise_messages, MessageEvaluator};
pub use lab::rgb_to_lab;
pub use labelmap::{
    load_label_map, read_prob_tensor, save_label_map, write_prob_tensor, LabelMapFormat, LabelRemap,
};

/// Row-major per-pixel probability vectors over `num_labels` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelField {
    pub width: u32,
    pub height: u32,
    pub num_labels: usize,
    /// `width * height * num_labels` values, label index fastest.
    pub probs: Vec<f64>,
}

impl LabelField {
    pub fn uniform(width: u32, height: u32, num_labels: usize) -> Self {
        let n = width as usize * height as usize;
        Self { width, height, num_labels, probs: vec![1.0 / num_labels as f64; n * num_labels] }
    }

    /// One-hot field from hard label ids.
    pub fn from_hard_labels(width: u32, height: u32, ids: &[u8], num_labels: usize) -> Result<Self> {
        let n = width as usize * height as usize;
        if ids.len() != n {
            return Err(Error::Dimension(format!("{} label ids for a {width}x{height} field", ids.len())));
        }
        let mut probs = vec![0.0; n * num_labels];
        for (i, &id) in ids.iter().enumerate() {
            if id as usize >= num_labels {
                return Err(Error::validation("label id", format!("{id} at pixel {i} is not below {num_labels}")));
            }
            probs[i * num_labels + id as usize] = 1.0;
        }
        Ok(Self { width, height, num_labels, probs })
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.probs[i * self.num_labels..(i + 1) * self.num_labels]
    }

    /// Most probable label; ties go to the lowest index.
    pub fn argmax(&self, i: usize) -> usize {
        let mut best = 0;
        for (l, &p) in self.pixel(i).iter().enumerate().skip(1) {
            if p > self.pixel(i)[best] {
                best = l;
            }
        }
        best
    }

    pub fn argmax_labels(&self) -> Vec<u8> {
        (0..self.pixel_count()).map(|i| self.argmax(i) as u8).collect()
    }

    /// Largest deviation of a pixel's probability sum from 1.
    pub fn max_normalization_error(&self) -> f64 {
        self.probs
            .chunks(self.num_labels)
            .map(|p| (p.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Soft unary distribution from a hard (one-hot) field.
///
/// A labeled pixel gets `confidence` on its label and the remainder spread
/// evenly over the others; a pixel whose label is `Unknown` (in a 9-label
/// field) becomes uniform.
pub fn unary_from_labels(hard: &LabelField, confidence: f64) -> Result<LabelField> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::validation("unary confidence", format!("{confidence} must lie in (0, 1)")));
    }
    let l = hard.num_labels;
    if l < 2 {
        return Err(Error::validation("label count", "need at least two labels"));
    }
    let unknown = (l == LABEL_COUNT).then_some(SemanticLabel::Unknown.code() as usize);
    let rest = (1.0 - confidence) / (l - 1) as f64;
    let mut probs = Vec::with_capacity(hard.probs.len());
    for i in 0..hard.pixel_count() {
        let label = hard.argmax(i);
        if Some(label) == unknown {
            probs.extend(std::iter::repeat_n(1.0 / l as f64, l));
        } else {
            probs.extend((0..l).map(|k| if k == label { confidence } else { rest }));
        }
    }
    Ok(LabelField { width: hard.width, height: hard.height, num_labels: l, probs })
}

/// Fully-connected CRF parameters.
///
/// Pairwise kernel between pixels `i`, `j`:
/// `w_app * exp(-|p_i-p_j|²/2θ_pos² - |I_i-I_j|²/2θ_lab²) + w_smooth * exp(-|p_i-p_j|²/2θ_smooth²)`
/// with positions in full-resolution pixels and colors in CIELAB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrfParams {
    pub w_app: f64,
    pub theta_pos: f64,
    pub theta_lab: f64,
    pub w_smooth: f64,
    pub theta_smooth: f64,
    pub iterations: u32,
    /// Unary confidence for hard labels, in (0, 1).
    pub unary_confidence: f64,
    /// Refine on a grid downsampled by 1, 2 or 4.
    pub downsample: u32,
    pub evaluator: MessageEvaluator,
}

impl Default for CrfParams {
    fn default() -> Self {
        Self {
            w_app: 4.0,
            theta_pos: 40.0,
            theta_lab: 10.0,
            w_smooth: 2.0,
            theta_smooth: 3.0,
            iterations: 10,
            unary_confidence: 0.8,
            downsample: 4,
            evaluator: MessageEvaluator::Windowed,
        }
    }
}

impl CrfParams {
    pub const MAX_ITERATIONS: u32 = 100;

    pub fn validate(&self) -> Result<()> {
        let positive = [("theta_pos", self.theta_pos), ("theta_lab", self.theta_lab), ("theta_smooth", self.theta_smooth)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(format!("crf.{name}"), format!("{v} must be positive")));
            }
        }
        for (name, v) in [("w_app", self.w_app), ("w_smooth", self.w_smooth)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::validation(format!("crf.{name}"), format!("{v} must be non-negative")));
            }
        }
        if self.iterations > Self::MAX_ITERATIONS {
            return Err(Error::validation("crf.iterations", format!("{} exceeds {}", self.iterations, Self::MAX_ITERATIONS)));
        }
        if !(self.unary_confidence > 0.0 && self.unary_confidence < 1.0) {
            return Err(Error::validation("crf.unary_confidence", "must lie in (0, 1)"));
        }
        if !matches!(self.downsample, 1 | 2 | 4) {
            return Err(Error::validation("crf.downsample", format!("{} is not 1, 2 or 4", self.downsample)));
        }
        Ok(())
    }
}
