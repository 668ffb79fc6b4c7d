//! Training losses with analytic gradients.
//!
//! Every loss returns a [`LossValueGrad`] whose gradient is taken with
//! respect to the prediction inputs only; targets and teacher outputs are
//! constants.

use crate::error::{Error, Result};
use crate::geometry::{
    bhattacharyya_with_grad, box_covariance_jacobian, gwd_squared, normalize_angle, rbox_to_gaussian, Gaussian2D,
    OrientedBox, Sym2,
};

pub const DEFAULT_SMOOTH_L1_BETA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValueGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Parameters of the sparse-aware focal loss.
///
/// `omega` scales negatives whose confidence exceeds `thr`: under sparse
/// labels those are often unannotated objects rather than background.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
    pub omega: f64,
    pub thr: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
            omega: 0.2,
            thr: 0.5,
        }
    }
}

impl FocalParams {
    pub fn new(alpha: f64, gamma: f64, omega: f64, thr: f64) -> Result<Self> {
        let p = Self {
            alpha,
            gamma,
            omega,
            thr,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && self.alpha < 1.0
            && self.gamma >= 0.0
            && self.gamma.is_finite()
            && self.omega > 0.0
            && self.omega <= 1.0
            && self.thr > 0.0
            && self.thr < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "focal parameters out of range: {self:?} (need alpha, thr in (0,1), gamma >= 0, omega in (0,1])"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    Positive,
    Negative,
}

/// Sparse-aware focal classification loss for one prediction.
///
/// The gradient is `d value / d p_t`. On the negative branch the loss jumps
/// at `p_t = thr` by `(1 − omega)` times the unscaled value; the threshold
/// itself belongs to the unscaled side.
pub fn sparse_cls_loss(p_t: f64, kind: SampleKind, params: &FocalParams) -> Result<LossValueGrad> {
    params.validate()?;
    if !(p_t > 0.0 && p_t < 1.0) {
        return Err(Error::invalid(format!("confidence p_t = {p_t} outside (0, 1)")));
    }
    let FocalParams {
        alpha,
        gamma,
        omega,
        thr,
    } = *params;
    let (value, grad) = match kind {
        SampleKind::Positive => {
            let q = 1.0 - p_t;
            let modulator = q.powf(gamma);
            let log_p = p_t.ln();
            let value = -alpha * modulator * log_p;
            // d/dp [-(1-p)^γ ln p] = γ(1-p)^(γ-1) ln p - (1-p)^γ / p
            let d_mod = if gamma == 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) };
            let grad = alpha * (d_mod * log_p - modulator / p_t);
            (value, grad)
        }
        SampleKind::Negative => {
            let modulator = p_t.powf(gamma);
            let log_q = (-p_t).ln_1p();
            let value = -(1.0 - alpha) * modulator * log_q;
            let d_mod = if gamma == 0.0 {
                0.0
            } else {
                gamma * p_t.powf(gamma - 1.0)
            };
            let grad = -(1.0 - alpha) * (d_mod * log_q - modulator / (1.0 - p_t));
            if p_t > thr {
                (value * omega, grad * omega)
            } else {
                (value, grad)
            }
        }
    };
    Ok(LossValueGrad {
        value,
        grad: vec![grad],
    })
}

/// Smooth-L1 of a residual: `0.5 x²/β` inside `|x| < β`, `|x| − β/2`
/// outside. Returns the value and its derivative.
pub fn smooth_l1(x: f64, beta: f64) -> (f64, f64) {
    if x.abs() < beta {
        (0.5 * x * x / beta, x / beta)
    } else {
        (x.abs() - 0.5 * beta, x.signum())
    }
}

/// How the augmented view was produced from the original image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Augmentation {
    /// Vertical flip.
    Flip,
    /// Rotation by the given angle in radians.
    Rotate(f64),
}

/// Angle consistency between predictions on an augmented and an original
/// view.
///
/// The residual is `θ_aug + θ` for a flip and `θ_aug − θ − r` for a rotation,
/// reduced modulo π into `[-π/2, π/2)` before the Smooth-L1. The gradient is
/// `[d/dθ_aug, d/dθ]`.
pub fn angle_loss(theta_aug: f64, theta_orig: f64, aug: Augmentation, beta: f64) -> Result<LossValueGrad> {
    if !(theta_aug.is_finite() && theta_orig.is_finite()) {
        return Err(Error::invalid("predicted angles must be finite"));
    }
    if beta.is_nan() || beta <= 0.0 {
        return Err(Error::invalid(format!("smooth-L1 beta must be positive, got {beta}")));
    }
    let (raw, d_orig_sign) = match aug {
        Augmentation::Flip => (theta_aug + theta_orig, 1.0),
        Augmentation::Rotate(r) => {
            if !r.is_finite() {
                return Err(Error::invalid("rotation angle must be finite"));
            }
            (theta_aug - theta_orig - normalize_angle(r), -1.0)
        }
    };
    let residual = normalize_angle(raw);
    let (value, d) = smooth_l1(residual, beta);
    Ok(LossValueGrad {
        value,
        grad: vec![d, d_orig_sign * d],
    })
}

/// Gaussian overlap loss `(1/N) Σ_{i≠j} B(𝒩ᵢ, 𝒩ⱼ)` over ordered pairs.
///
/// The gradient is laid out box by box as `(cx, cy, w, h, θ)`.
pub fn gaussian_overlap_loss(boxes: &[OrientedBox]) -> Result<LossValueGrad> {
    if boxes.is_empty() {
        return Err(Error::invalid("overlap loss needs at least one box"));
    }
    let gaussians = boxes.iter().map(rbox_to_gaussian).collect::<Result<Vec<_>>>()?;
    let n = boxes.len();
    let mut value = 0.0;
    let mut d_mean = vec![[0.0; 2]; n];
    let mut d_cov = vec![Sym2::diag(0.0, 0.0); n];

    // B is symmetric, so each unordered pair counts twice.
    let scale = 2.0 / n as f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let g = bhattacharyya_with_grad(&gaussians[i], &gaussians[j])?;
            value += scale * g.value;
            for (k, (a, b)) in g.d_mean_a.iter().zip(&g.d_mean_b).enumerate() {
                d_mean[i][k] += scale * a;
                d_mean[j][k] += scale * b;
            }
            d_cov[i] = d_cov[i].add(&g.d_cov_a.scale(scale));
            d_cov[j] = d_cov[j].add(&g.d_cov_b.scale(scale));
        }
    }

    let mut grad = Vec::with_capacity(5 * n);
    for (i, b) in boxes.iter().enumerate() {
        let [dw, dh, dt] = box_covariance_jacobian(b.w, b.h, b.theta);
        grad.extend_from_slice(&[
            d_mean[i][0],
            d_mean[i][1],
            d_cov[i].inner(&dw),
            d_cov[i].inner(&dh),
            d_cov[i].inner(&dt),
        ]);
    }
    Ok(LossValueGrad { value, grad })
}

/// Mapping from a squared Wasserstein distance to a bounded loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GwdTransform {
    /// `1 − 1/(τ + ln(1 + W²))`.
    Reciprocal { tau: f64 },
    /// `W²` unchanged.
    Raw,
}

impl Default for GwdTransform {
    fn default() -> Self {
        GwdTransform::Reciprocal { tau: 1.0 }
    }
}

impl GwdTransform {
    /// Value and derivative with respect to `W²`.
    pub fn apply(&self, w2: f64) -> (f64, f64) {
        match *self {
            GwdTransform::Raw => (w2, 1.0),
            GwdTransform::Reciprocal { tau } => {
                let denom = tau + w2.ln_1p();
                (1.0 - 1.0 / denom, 1.0 / (denom * denom * (1.0 + w2)))
            }
        }
    }
}

/// Voronoi-watershed scale loss with the default transform.
pub fn watershed_loss(pred: &OrientedBox, target_w: f64, target_h: f64) -> Result<LossValueGrad> {
    watershed_loss_with(pred, target_w, target_h, GwdTransform::default())
}

/// Compares the zero-mean Gaussians `diag(w/2, h/2)²` and
/// `diag(w_t/2, h_t/2)²`. The gradient is `[d/dw, d/dh]`.
pub fn watershed_loss_with(
    pred: &OrientedBox,
    target_w: f64,
    target_h: f64,
    transform: GwdTransform,
) -> Result<LossValueGrad> {
    pred.validate()?;
    if !(target_w > 0.0 && target_h > 0.0 && target_w.is_finite() && target_h.is_finite()) {
        return Err(Error::invalid(format!(
            "scale targets must be positive, got ({target_w}, {target_h})"
        )));
    }
    if let GwdTransform::Reciprocal { tau } = transform {
        if tau.is_nan() || tau < 1.0 {
            return Err(Error::invalid(format!("GWD transform needs tau >= 1, got {tau}")));
        }
    }
    let half = |v: f64| 0.5 * v;
    let pred_g = Gaussian2D::new([0.0, 0.0], Sym2::diag(half(pred.w).powi(2), half(pred.h).powi(2)))?;
    let target_g = Gaussian2D::new([0.0, 0.0], Sym2::diag(half(target_w).powi(2), half(target_h).powi(2)))?;
    let w2 = gwd_squared(&pred_g, &target_g)?;
    let (value, d_w2) = transform.apply(w2);
    // Commuting diagonal covariances: W² = (w/2 − w_t/2)² + (h/2 − h_t/2)².
    let d_w = d_w2 * (half(pred.w) - half(target_w));
    let d_h = d_w2 * (half(pred.h) - half(target_h));
    Ok(LossValueGrad {
        value,
        grad: vec![d_w, d_h],
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupervisedWeights {
    pub cls: f64,
    pub cen: f64,
    pub bbox: f64,
    pub angle: f64,
    pub overlap: f64,
    pub watershed: f64,
}

impl Default for SupervisedWeights {
    fn default() -> Self {
        Self {
            cls: 1.0,
            cen: 1.0,
            bbox: 1.0,
            angle: 0.2,
            overlap: 10.0,
            watershed: 5.0,
        }
    }
}

/// The six supervised loss terms. `bbox` is the IoU term, computed outside
/// this crate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SupervisedParts {
    pub cls: f64,
    pub cen: f64,
    pub bbox: f64,
    pub angle: f64,
    pub overlap: f64,
    pub watershed: f64,
}

impl SupervisedParts {
    pub fn from_array(p: [f64; 6]) -> Self {
        Self {
            cls: p[0],
            cen: p[1],
            bbox: p[2],
            angle: p[3],
            overlap: p[4],
            watershed: p[5],
        }
    }
}

pub fn total_supervised_loss(parts: &SupervisedParts, weights: &SupervisedWeights) -> f64 {
    weights.cls * parts.cls
        + weights.cen * parts.cen
        + weights.bbox * parts.bbox
        + weights.angle * parts.angle
        + weights.overlap * parts.overlap
        + weights.watershed * parts.watershed
}

/// Matched teacher or student outputs: classification confidence,
/// centerness, and distances from each location to the left, top, right
/// and bottom box edges.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTriple {
    pub conf: Vec<f64>,
    pub centerness: Vec<f64>,
    pub box_margins: Vec<[f64; 4]>,
}

impl PredictionTriple {
    pub fn new(conf: Vec<f64>, centerness: Vec<f64>, box_margins: Vec<[f64; 4]>) -> Result<Self> {
        let t = Self {
            conf,
            centerness,
            box_margins,
        };
        if t.conf.len() != t.centerness.len() || t.conf.len() != t.box_margins.len() {
            return Err(Error::invalid(format!(
                "prediction lists differ in length: conf {}, centerness {}, margins {}",
                t.conf.len(),
                t.centerness.len(),
                t.box_margins.len()
            )));
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.conf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conf.is_empty()
    }
}

/// Binary cross-entropy of prediction `s` against soft target `t`, with
/// `d/ds`.
pub fn soft_bce(t: f64, s: f64) -> (f64, f64) {
    let value = -(t * s.ln() + (1.0 - t) * (-s).ln_1p());
    (value, (s - t) / (s * (1.0 - s)))
}

/// Teacher-to-student consistency loss: BCE on confidences, BCE on
/// centerness and Smooth-L1 on box margins, each averaged over matched
/// locations.
///
/// Teacher outputs are soft targets used as given. The gradient is with
/// respect to the student only, laid out as all confidences, then all
/// centerness values, then the margins location by location.
pub fn unsupervised_loss(teacher: &PredictionTriple, student: &PredictionTriple, beta: f64) -> Result<LossValueGrad> {
    for (name, t) in [("teacher", teacher), ("student", student)] {
        if t.conf.len() != t.centerness.len() || t.conf.len() != t.box_margins.len() {
            return Err(Error::invalid(format!("{name} prediction lists differ in length")));
        }
    }
    if teacher.len() != student.len() {
        return Err(Error::invalid(format!(
            "teacher has {} matched locations, student has {}",
            teacher.len(),
            student.len()
        )));
    }
    if beta.is_nan() || beta <= 0.0 {
        return Err(Error::invalid(format!("smooth-L1 beta must be positive, got {beta}")));
    }
    let n = teacher.len();
    if n == 0 {
        return Ok(LossValueGrad {
            value: 0.0,
            grad: Vec::new(),
        });
    }
    let in_unit_closed = |v: f64| (0.0..=1.0).contains(&v);
    let in_unit_open = |v: f64| v > 0.0 && v < 1.0;
    if !teacher
        .conf
        .iter()
        .chain(&teacher.centerness)
        .all(|&v| in_unit_closed(v))
    {
        return Err(Error::invalid("teacher confidences must lie in [0, 1]"));
    }
    if !student.conf.iter().chain(&student.centerness).all(|&v| in_unit_open(v)) {
        return Err(Error::invalid("student confidences must lie in (0, 1)"));
    }

    let inv_n = 1.0 / n as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; 6 * n];
    for i in 0..n {
        let (v, d) = soft_bce(teacher.conf[i], student.conf[i]);
        value += v * inv_n;
        grad[i] = d * inv_n;
        let (v, d) = soft_bce(teacher.centerness[i], student.centerness[i]);
        value += v * inv_n;
        grad[n + i] = d * inv_n;
        for k in 0..4 {
            let (v, d) = smooth_l1(student.box_margins[i][k] - teacher.box_margins[i][k], beta);
            value += v * inv_n;
            grad[2 * n + 4 * i + k] = d * inv_n;
        }
    }
    Ok(LossValueGrad { value, grad })
}

pub fn total_loss(supervised: f64, unsupervised: f64) -> f64 {
    supervised + unsupervised
}

/// Central finite differences used to audit analytic gradients.
pub mod gradcheck {
    pub const DEFAULT_STEP: f64 = 1e-5;

    /// Denominator floor for [`relative_error`]; below it the comparison is
    /// effectively absolute.
    pub const RELATIVE_FLOOR: f64 = 1e-3;

    pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
        let mut probe = x.to_vec();
        (0..x.len())
            .map(|i| {
                probe[i] = x[i] + step;
                let up = f(&probe);
                probe[i] = x[i] - step;
                let down = f(&probe);
                probe[i] = x[i];
                (up - down) / (2.0 * step)
            })
            .collect()
    }

    /// `|a − n| / max(|a|, |n|, RELATIVE_FLOOR)`.
    pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
    }

    pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
        analytic
            .iter()
            .zip(numeric)
            .map(|(&a, &n)| relative_error(a, n))
            .fold(0.0, f64::max)
    }
}
