//! Mean-field inference for a fully-connected CRF with Gaussian kernels and
//! Potts compatibility.
//!
//! With Potts compatibility the update
//! `Q_i(l) ∝ exp(-U_i(l) - Σ_{l'≠l} Σ_{j≠i} k(i,j) Q_j(l'))`
//! reduces to `Q_i(l) ∝ P_i(l) · exp(m_i(l))` where `P` is the unary
//! distribution and `m_i(l) = Σ_{j≠i} k(i,j) Q_j(l)`, because
//! `Σ_{l'} Q_j(l') = 1` makes the remaining term constant in `l`.
//! Updates are simultaneous (Jacobi) across pixels.

use serde::{Deserialize, Serialize};

use super::{rgb_to_lab, CrfParams, LabelField};
use crate::exec::{self, Exec};
use crate::{Error, Result, Rgb};

/// How pairwise messages are summed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageEvaluator {
    /// Every pixel pair, kernels evaluated directly.
    Naive,
    /// Separable spatial tables with windows cut where a kernel falls below
    /// [`KERNEL_CUTOFF`] of its peak.
    #[default]
    Windowed,
}

/// Relative kernel value below which the windowed evaluator ignores pairs.
pub const KERNEL_CUTOFF: f64 = 1e-12;

struct Kernel<'a> {
    width: usize,
    height: usize,
    lab: &'a [[f64; 3]],
    w_app: f64,
    w_smooth: f64,
    inv2_pos: f64,
    inv2_lab: f64,
    inv2_smooth: f64,
}

impl<'a> Kernel<'a> {
    fn new(width: usize, height: usize, lab: &'a [[f64; 3]], p: &CrfParams) -> Self {
        Self {
            width,
            height,
            lab,
            w_app: p.w_app,
            w_smooth: p.w_smooth,
            inv2_pos: 1.0 / (2.0 * p.theta_pos * p.theta_pos),
            inv2_lab: 1.0 / (2.0 * p.theta_lab * p.theta_lab),
            inv2_smooth: 1.0 / (2.0 * p.theta_smooth * p.theta_smooth),
        }
    }

    fn color_dist2(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.lab[i], self.lab[j]);
        (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
    }
}

fn naive_messages(k: &Kernel, q: &[f64], labels: usize, exec: Exec) -> Vec<f64> {
    let n = k.width * k.height;
    let rows = exec::map_range(exec, k.height, |y| {
        let mut out = vec![0.0; k.width * labels];
        for x in 0..k.width {
            let i = y * k.width + x;
            let acc = &mut out[x * labels..(x + 1) * labels];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let (dx, dy) = ((j % k.width) as f64 - x as f64, (j / k.width) as f64 - y as f64);
                let d2 = dx * dx + dy * dy;
                let w = k.w_app * (-d2 * k.inv2_pos - k.color_dist2(i, j) * k.inv2_lab).exp()
                    + k.w_smooth * (-d2 * k.inv2_smooth).exp();
                for (a, qj) in acc.iter_mut().zip(&q[j * labels..(j + 1) * labels]) {
                    *a += w * qj;
                }
            }
        }
        out
    });
    rows.concat()
}

fn gaussian_table(inv2: f64, weight: f64, limit: usize) -> Vec<f64> {
    if weight == 0.0 {
        return Vec::new();
    }
    // exp(-r²·inv2) < cutoff  ⇔  r > sqrt(ln(1/cutoff)/inv2)
    let radius = ((1.0 / KERNEL_CUTOFF).ln() / inv2).sqrt().ceil() as usize;
    (0..=radius.min(limit)).map(|d| (-((d * d) as f64) * inv2).exp()).collect()
}

fn windowed_messages(k: &Kernel, q: &[f64], labels: usize, exec: Exec) -> Vec<f64> {
    let limit = k.width.max(k.height);
    let app = gaussian_table(k.inv2_pos, k.w_app, limit);
    let smooth = gaussian_table(k.inv2_smooth, k.w_smooth, limit);
    let ra = app.len() as isize - 1;
    let rs = smooth.len() as isize - 1;
    let r = ra.max(rs);
    let rows = exec::map_range(exec, k.height, |y| {
        let mut out = vec![0.0; k.width * labels];
        let y = y as isize;
        for x in 0..k.width as isize {
            let i = (y as usize) * k.width + x as usize;
            let acc = &mut out[x as usize * labels..(x as usize + 1) * labels];
            for yy in (y - r).max(0)..=(y + r).min(k.height as isize - 1) {
                let dy = (yy - y).unsigned_abs();
                for xx in (x - r).max(0)..=(x + r).min(k.width as isize - 1) {
                    let j = yy as usize * k.width + xx as usize;
                    if j == i {
                        continue;
                    }
                    let dx = (xx - x).unsigned_abs();
                    let mut w = 0.0;
                    if let (Some(gx), Some(gy)) = (app.get(dx), app.get(dy)) {
                        w += k.w_app * gx * gy * (-k.color_dist2(i, j) * k.inv2_lab).exp();
                    }
                    if let (Some(gx), Some(gy)) = (smooth.get(dx), smooth.get(dy)) {
                        w += k.w_smooth * gx * gy;
                    }
                    if w == 0.0 {
                        continue;
                    }
                    for (a, qj) in acc.iter_mut().zip(&q[j * labels..(j + 1) * labels]) {
                        *a += w * qj;
                    }
                }
            }
        }
        out
    });
    rows.concat()
}

/// `m_i(l) = Σ_{j≠i} k(i,j) Q_j(l)` for every pixel and label.
pub fn pairwise_messages(
    q: &LabelField,
    lab: &[[f64; 3]],
    params: &CrfParams,
    evaluator: MessageEvaluator,
    exec: Exec,
) -> Vec<f64> {
    let k = Kernel::new(q.width as usize, q.height as usize, lab, params);
    match evaluator {
        MessageEvaluator::Naive => naive_messages(&k, &q.probs, q.num_labels, exec),
        MessageEvaluator::Windowed => windowed_messages(&k, &q.probs, q.num_labels, exec),
    }
}

/// `Q_i(l) ∝ P_i(l) · exp(m_i(l))`, normalized per pixel.
fn combine(unary: &LabelField, messages: &[f64]) -> LabelField {
    let l = unary.num_labels;
    let mut probs = vec![0.0; unary.probs.len()];
    for ((out, p), m) in probs.chunks_mut(l).zip(unary.probs.chunks(l)).zip(messages.chunks(l)) {
        let mut max = f64::NEG_INFINITY;
        for ((o, &pi), &mi) in out.iter_mut().zip(p).zip(m) {
            *o = pi.ln() + mi;
            max = max.max(*o);
        }
        let mut sum = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            sum += *o;
        }
        out.iter_mut().for_each(|o| *o /= sum);
    }
    LabelField { probs, ..*unary }
}

/// One simultaneous mean-field update of `q` given the unary distribution.
pub fn mean_field_step(
    unary: &LabelField,
    q: &LabelField,
    lab: &[[f64; 3]],
    params: &CrfParams,
    exec: Exec,
) -> LabelField {
    combine(unary, &pairwise_messages(q, lab, params, params.evaluator, exec))
}

fn check_dims(unary: &LabelField, colors: &[Rgb]) -> Result<()> {
    if colors.len() != unary.pixel_count() || unary.probs.len() != unary.pixel_count() * unary.num_labels {
        return Err(Error::Dimension(format!(
            "unary {}x{}x{} with {} probabilities vs {} colors",
            unary.width,
            unary.height,
            unary.num_labels,
            unary.probs.len(),
            colors.len()
        )));
    }
    Ok(())
}

/// Runs `params.iterations` mean-field updates starting from the unary.
///
/// With `downsample > 1` inference runs on block-averaged unaries and colors
/// (positional stddevs scaled accordingly); the final pairwise messages are
/// upsampled nearest-neighbor and combined with the full-resolution unary.
pub fn densecrf_refine(unary: &LabelField, colors: &[Rgb], params: &CrfParams, exec: Exec) -> Result<LabelField> {
    params.validate()?;
    check_dims(unary, colors)?;
    if params.iterations == 0 || unary.pixel_count() == 0 {
        return Ok(unary.clone());
    }
    if params.downsample == 1 {
        let lab: Vec<[f64; 3]> = exec::map_slice(exec, colors, |c| rgb_to_lab(*c));
        let mut q = unary.clone();
        for _ in 0..params.iterations {
            q = mean_field_step(unary, &q, &lab, params, exec);
        }
        return Ok(q);
    }

    let f = params.downsample as usize;
    let (small_unary, small_colors) = downsample(unary, colors, f);
    let small_params = CrfParams {
        theta_pos: params.theta_pos / f as f64,
        theta_smooth: params.theta_smooth / f as f64,
        ..*params
    };
    let lab: Vec<[f64; 3]> = exec::map_slice(exec, &small_colors, |c| rgb_to_lab(*c));
    let mut q = small_unary.clone();
    for _ in 0..params.iterations - 1 {
        q = mean_field_step(&small_unary, &q, &lab, &small_params, exec);
    }
    let small_msgs = pairwise_messages(&q, &lab, &small_params, params.evaluator, exec);

    let (w, l, sw) = (unary.width as usize, unary.num_labels, small_unary.width as usize);
    let mut msgs = vec![0.0; unary.probs.len()];
    for (i, m) in msgs.chunks_mut(l).enumerate() {
        let b = (i / w / f) * sw + (i % w) / f;
        m.copy_from_slice(&small_msgs[b * l..(b + 1) * l]);
    }
    Ok(combine(unary, &msgs))
}

fn downsample(unary: &LabelField, colors: &[Rgb], f: usize) -> (LabelField, Vec<Rgb>) {
    let (w, h, l) = (unary.width as usize, unary.height as usize, unary.num_labels);
    let (sw, sh) = (w.div_ceil(f), h.div_ceil(f));
    let mut probs = vec![0.0; sw * sh * l];
    let mut color_sum = vec![[0u32; 3]; sw * sh];
    let mut count = vec![0u32; sw * sh];
    for y in 0..h {
        for x in 0..w {
            let (i, b) = (y * w + x, (y / f) * sw + x / f);
            for (dst, src) in probs[b * l..(b + 1) * l].iter_mut().zip(unary.pixel(i)) {
                *dst += src;
            }
            for (s, c) in color_sum[b].iter_mut().zip(colors[i]) {
                *s += c as u32;
            }
            count[b] += 1;
        }
    }
    for (b, &n) in count.iter().enumerate() {
        probs[b * l..(b + 1) * l].iter_mut().for_each(|p| *p /= n as f64);
    }
    let small_colors = color_sum.iter().zip(&count).map(|(s, &n)| s.map(|v| ((v + n / 2) / n) as u8)).collect();
    (LabelField { width: sw as u32, height: sh as u32, num_labels: l, probs }, small_colors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> CrfParams {
        CrfParams { downsample: 1, iterations: 3, ..Default::default() }
    }

    #[test]
    fn zero_iterations_returns_unary() {
        let u = LabelField { width: 2, height: 1, num_labels: 2, probs: vec![0.7, 0.3, 0.4, 0.6] };
        let out = densecrf_refine(&u, &[[0; 3]; 2], &CrfParams { iterations: 0, ..params() }, Exec::Sequential).unwrap();
        assert_eq!(out, u);
    }

    #[test]
    fn symmetric_pair_stays_symmetric() {
        let u = LabelField { width: 2, height: 1, num_labels: 2, probs: vec![0.6, 0.4, 0.6, 0.4] };
        let out = densecrf_refine(&u, &[[10, 20, 30]; 2], &params(), Exec::Sequential).unwrap();
        assert_eq!(out.pixel(0), out.pixel(1));
        assert!(out.max_normalization_error() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let u = LabelField::uniform(2, 2, 3);
        assert!(matches!(densecrf_refine(&u, &[[0; 3]; 3], &params(), Exec::Sequential), Err(Error::Dimension(_))));
    }

    #[test]
    fn evaluators_agree_on_small_image() {
        let (w, h, l) = (9u32, 7u32, 3usize);
        let n = (w * h) as usize;
        let probs: Vec<f64> = (0..n)
            .flat_map(|i| {
                let a = 1.0 + (i % 5) as f64;
                let b = 1.0 + (i % 3) as f64;
                let c = 1.0 + (i % 7) as f64;
                let s = a + b + c;
                [a / s, b / s, c / s]
            })
            .collect();
        let q = LabelField { width: w, height: h, num_labels: l, probs };
        let colors: Vec<Rgb> = (0..n).map(|i| [(i * 37 % 256) as u8, (i * 11 % 256) as u8, 90]).collect();
        let lab: Vec<[f64; 3]> = colors.iter().map(|c| rgb_to_lab(*c)).collect();
        let p = CrfParams { theta_pos: 3.0, theta_smooth: 1.5, ..params() };
        let a = pairwise_messages(&q, &lab, &p, MessageEvaluator::Naive, Exec::Sequential);
        let b = pairwise_messages(&q, &lab, &p, MessageEvaluator::Windowed, Exec::Parallel);
        let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn downsampled_refine_keeps_dims_and_normalization() {
        let (w, h) = (8u32, 6u32);
        let ids: Vec<u8> = (0..w * h).map(|i| if i % w < 4 { 0 } else { 1 }).collect();
        let hard = LabelField::from_hard_labels(w, h, &ids, 2).unwrap();
        let u = super::super::unary_from_labels(&hard, 0.8).unwrap();
        let colors: Vec<Rgb> = ids.iter().map(|&i| if i == 0 { [200, 0, 0] } else { [0, 0, 200] }).collect();
        for f in [2, 4] {
            let out = densecrf_refine(&u, &colors, &CrfParams { downsample: f, ..params() }, Exec::Sequential).unwrap();
            assert_eq!((out.width, out.height), (w, h));
            assert!(out.max_normalization_error() < 1e-9);
            assert_eq!(out.argmax_labels(), ids);
        }
    }
}
