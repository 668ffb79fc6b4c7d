//! Oriented boxes, their Gaussian model and the distances between Gaussians.
//!
//! Angles are radians in the half-open range `[-π/2, π/2)`. A box is
//! symmetric under a half turn, so any angle is reduced modulo π on output.
//! Coordinates are continuous pixel units with `y` growing downwards.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};

/// Lower bound applied to covariance eigenvalues before inversion,
/// logarithms and square roots.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Reduces an angle modulo π into `[-π/2, π/2)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut t = theta - PI * ((theta + FRAC_PI_2) / PI).floor();
    if t >= FRAC_PI_2 {
        t -= PI;
    }
    if t < -FRAC_PI_2 {
        t += PI;
    }
    t
}

/// Rotated rectangle: center, full width along the box's own x axis, full
/// height along its y axis, and the angle of the x axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl OrientedBox {
    /// Validates extents and normalizes the angle.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Result<Self> {
        let b = Self {
            cx,
            cy,
            w,
            h,
            theta: normalize_angle(theta),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.cx, self.cy, self.w, self.h, self.theta]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid(format!("non-finite box {self:?}")));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::invalid(format!(
                "box extents must be positive, got w={} h={}",
                self.w, self.h
            )));
        }
        Ok(())
    }

    /// Parameters in the order `(cx, cy, w, h, theta)`.
    pub fn to_array(&self) -> [f64; 5] {
        [self.cx, self.cy, self.w, self.h, self.theta]
    }

    /// Builds a box from `(cx, cy, w, h, theta)` without normalizing the
    /// angle, so finite-difference perturbations stay differentiable.
    pub fn from_array(p: [f64; 5]) -> Self {
        Self {
            cx: p[0],
            cy: p[1],
            w: p[2],
            h: p[3],
            theta: p[4],
        }
    }

    /// Corners in traversal order; the first edge runs along the box width.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.theta.sin_cos();
        let (a, b) = (self.w / 2.0, self.h / 2.0);
        let u = [a * c, a * s];
        let v = [-b * s, b * c];
        let at = |su: f64, sv: f64| [self.cx + su * u[0] + sv * v[0], self.cy + su * u[1] + sv * v[1]];
        [at(-1.0, -1.0), at(1.0, -1.0), at(1.0, 1.0), at(-1.0, 1.0)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizontalBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl HorizontalBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        if !(xmin < xmax && ymin < ymax) {
            return Err(Error::invalid(format!(
                "horizontal box needs min < max, got ({xmin}, {ymin}, {xmax}, {ymax})"
            )));
        }
        Ok(Self { xmin, ymin, xmax, ymax })
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }
}

/// A single labeled location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointAnnotation {
    pub x: f64,
    pub y: f64,
    pub category: u32,
}

impl PointAnnotation {
    pub fn new(x: f64, y: f64, category: u32) -> Self {
        Self { x, y, category }
    }

    /// Checks the point lies inside a `width × height` image.
    pub fn check_bounds(&self, width: usize, height: usize) -> Result<()> {
        let inside = self.x >= 0.0 && self.y >= 0.0 && self.x < width as f64 && self.y < height as f64;
        if !inside {
            return Err(Error::invalid(format!(
                "point ({}, {}) outside {width}x{height} image",
                self.x, self.y
            )));
        }
        Ok(())
    }
}

/// Symmetric 2×2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

/// Eigendecomposition of a [`Sym2`]: `major ≥ minor`, and `angle` is the
/// direction of the major eigenvector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigen2 {
    pub major: f64,
    pub minor: f64,
    pub angle: f64,
}

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2 {
        xx: 1.0,
        xy: 0.0,
        yy: 1.0,
    };

    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub fn diag(xx: f64, yy: f64) -> Self {
        Self { xx, xy: 0.0, yy }
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn add(&self, o: &Sym2) -> Sym2 {
        Sym2::new(self.xx + o.xx, self.xy + o.xy, self.yy + o.yy)
    }

    pub fn sub(&self, o: &Sym2) -> Sym2 {
        Sym2::new(self.xx - o.xx, self.xy - o.xy, self.yy - o.yy)
    }

    pub fn scale(&self, k: f64) -> Sym2 {
        Sym2::new(self.xx * k, self.xy * k, self.yy * k)
    }

    /// `vᵀ M v`.
    pub fn quad(&self, v: [f64; 2]) -> f64 {
        self.xx * v[0] * v[0] + 2.0 * self.xy * v[0] * v[1] + self.yy * v[1] * v[1]
    }

    pub fn mul_vec(&self, v: [f64; 2]) -> [f64; 2] {
        [self.xx * v[0] + self.xy * v[1], self.xy * v[0] + self.yy * v[1]]
    }

    /// Frobenius inner product `Σᵢⱼ Aᵢⱼ Bᵢⱼ`.
    pub fn inner(&self, o: &Sym2) -> f64 {
        self.xx * o.xx + 2.0 * self.xy * o.xy + self.yy * o.yy
    }

    /// `A · B · A`, symmetrized to absorb rounding.
    pub fn sandwich(&self, b: &Sym2) -> Sym2 {
        let a = self;
        // A·B
        let m00 = a.xx * b.xx + a.xy * b.xy;
        let m01 = a.xx * b.xy + a.xy * b.yy;
        let m10 = a.xy * b.xx + a.yy * b.xy;
        let m11 = a.xy * b.xy + a.yy * b.yy;
        // (A·B)·A
        let r00 = m00 * a.xx + m01 * a.xy;
        let r01 = m00 * a.xy + m01 * a.yy;
        let r10 = m10 * a.xx + m11 * a.xy;
        let r11 = m10 * a.xy + m11 * a.yy;
        Sym2::new(r00, 0.5 * (r01 + r10), r11)
    }

    pub fn is_finite(&self) -> bool {
        self.xx.is_finite() && self.xy.is_finite() && self.yy.is_finite()
    }

    pub fn eigen(&self) -> Eigen2 {
        let mean = 0.5 * (self.xx + self.yy);
        let half_diff = 0.5 * (self.xx - self.yy);
        let radius = half_diff.hypot(self.xy);
        let major = mean + radius;
        // det / major avoids cancellation when the matrix is near singular.
        let minor = if major > 0.0 { self.det() / major } else { mean - radius };
        let angle = 0.5 * (2.0 * self.xy).atan2(self.xx - self.yy);
        Eigen2 { major, minor, angle }
    }

    /// `R(angle) · diag(major, minor) · R(angle)ᵀ`.
    pub fn from_eigen(e: Eigen2) -> Sym2 {
        let (s, c) = e.angle.sin_cos();
        Sym2::new(
            e.major * c * c + e.minor * s * s,
            (e.major - e.minor) * c * s,
            e.major * s * s + e.minor * c * c,
        )
    }

    /// Applies `f` to both eigenvalues, keeping the eigenvectors.
    pub fn map_eigen(&self, f: impl Fn(f64) -> f64) -> Sym2 {
        let e = self.eigen();
        Sym2::from_eigen(Eigen2 {
            major: f(e.major),
            minor: f(e.minor),
            angle: e.angle,
        })
    }

    /// Conjugation `R(r) · M · R(r)ᵀ`.
    pub fn rotated(&self, r: f64) -> Sym2 {
        let (s, c) = r.sin_cos();
        // R·M
        let m00 = c * self.xx - s * self.xy;
        let m01 = c * self.xy - s * self.yy;
        let m10 = s * self.xx + c * self.xy;
        let m11 = s * self.xy + c * self.yy;
        Sym2::new(
            m00 * c - m01 * s,
            0.5 * ((m00 * s + m01 * c) + (m10 * c - m11 * s)),
            m10 * s + m11 * c,
        )
    }
}

/// Eigenvalues of a covariance after the degeneracy floor. Fails when the
/// matrix is not positive definite to begin with.
fn floored_spectrum(cov: &Sym2, what: &str) -> Result<Eigen2> {
    if !cov.is_finite() {
        return Err(Error::numerical(format!("{what} covariance is not finite")));
    }
    let e = cov.eigen();
    if e.minor.is_nan() || e.minor <= 0.0 {
        return Err(Error::numerical(format!(
            "{what} covariance is singular or indefinite (eigenvalues {}, {})",
            e.major, e.minor
        )));
    }
    Ok(Eigen2 {
        major: e.major.max(EIGEN_FLOOR),
        minor: e.minor.max(EIGEN_FLOOR),
        angle: e.angle,
    })
}

fn inverse_of(e: Eigen2) -> Sym2 {
    Sym2::from_eigen(Eigen2 {
        major: 1.0 / e.major,
        minor: 1.0 / e.minor,
        angle: e.angle,
    })
}

fn log_det_of(e: Eigen2) -> f64 {
    e.major.ln() + e.minor.ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2D {
    pub mean: [f64; 2],
    pub cov: Sym2,
}

impl Gaussian2D {
    /// Validates that `cov` is finite and positive definite.
    pub fn new(mean: [f64; 2], cov: Sym2) -> Result<Self> {
        if !(mean[0].is_finite() && mean[1].is_finite() && cov.is_finite()) {
            return Err(Error::invalid("non-finite Gaussian parameters"));
        }
        if cov.eigen().minor <= 0.0 {
            return Err(Error::invalid(format!("covariance {cov:?} is not positive definite")));
        }
        Ok(Self { mean, cov })
    }
}

/// Covariance of a box: `R(θ) · diag((w/2)², (h/2)²) · R(θ)ᵀ`.
pub fn box_covariance(w: f64, h: f64, theta: f64) -> Sym2 {
    let (s, c) = theta.sin_cos();
    let a2 = 0.25 * w * w;
    let b2 = 0.25 * h * h;
    Sym2::new(a2 * c * c + b2 * s * s, (a2 - b2) * c * s, a2 * s * s + b2 * c * c)
}

/// Partial derivatives of [`box_covariance`] with respect to `(w, h, θ)`.
pub fn box_covariance_jacobian(w: f64, h: f64, theta: f64) -> [Sym2; 3] {
    let (s, c) = theta.sin_cos();
    let a = 0.5 * w;
    let b = 0.5 * h;
    let (a2, b2) = (a * a, b * b);
    // d(a²)/dw = a, d(b²)/dh = b
    let d_w = Sym2::new(a * c * c, a * c * s, a * s * s);
    let d_h = Sym2::new(b * s * s, -b * c * s, b * c * c);
    let d_theta = Sym2::new(
        2.0 * c * s * (b2 - a2),
        (a2 - b2) * (c * c - s * s),
        2.0 * c * s * (a2 - b2),
    );
    [d_w, d_h, d_theta]
}

pub fn rbox_to_gaussian(b: &OrientedBox) -> Result<Gaussian2D> {
    b.validate()?;
    Ok(Gaussian2D {
        mean: [b.cx, b.cy],
        cov: box_covariance(b.w, b.h, b.theta),
    })
}

/// Bhattacharyya distance together with its partial derivatives.
///
/// `d_cov_*` are the symmetric matrices `G` with `dB = ⟨G, dΣ⟩` under the
/// Frobenius inner product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BhattacharyyaGrad {
    pub value: f64,
    pub d_mean_a: [f64; 2],
    pub d_mean_b: [f64; 2],
    pub d_cov_a: Sym2,
    pub d_cov_b: Sym2,
}

/// `B = ⅛ Δμᵀ Σ⁻¹ Δμ + ½ ln(det Σ / √(det Σₐ det Σ_b))` with `Σ = (Σₐ + Σ_b)/2`.
pub fn bhattacharyya(a: &Gaussian2D, b: &Gaussian2D) -> Result<f64> {
    bhattacharyya_with_grad(a, b).map(|g| g.value)
}

pub fn bhattacharyya_with_grad(a: &Gaussian2D, b: &Gaussian2D) -> Result<BhattacharyyaGrad> {
    let ea = floored_spectrum(&a.cov, "first")?;
    let eb = floored_spectrum(&b.cov, "second")?;
    let avg = a.cov.add(&b.cov).scale(0.5);
    let e = floored_spectrum(&avg, "averaged")?;

    let p = inverse_of(e);
    let d = [a.mean[0] - b.mean[0], a.mean[1] - b.mean[1]];
    let mahalanobis = p.quad(d);
    let log_term = log_det_of(e) - 0.5 * (log_det_of(ea) + log_det_of(eb));
    let value = (0.125 * mahalanobis + 0.5 * log_term).max(0.0);
    if !value.is_finite() {
        return Err(Error::numerical("Bhattacharyya distance is not finite"));
    }

    let pd = p.mul_vec(d);
    let d_mean_a = [0.25 * pd[0], 0.25 * pd[1]];
    let d_mean_b = [-d_mean_a[0], -d_mean_a[1]];
    // -1/16 P d dᵀ P + 1/4 P shared by both covariances
    let outer = Sym2::new(pd[0] * pd[0], pd[0] * pd[1], pd[1] * pd[1]);
    let shared = outer.scale(-1.0 / 16.0).add(&p.scale(0.25));
    let d_cov_a = shared.sub(&inverse_of(ea).scale(0.25));
    let d_cov_b = shared.sub(&inverse_of(eb).scale(0.25));

    Ok(BhattacharyyaGrad {
        value,
        d_mean_a,
        d_mean_b,
        d_cov_a,
        d_cov_b,
    })
}

/// Squared 2-Wasserstein distance between Gaussians:
/// `‖μₐ−μ_b‖² + Tr(Σₐ + Σ_b − 2(Σ_b^½ Σₐ Σ_b^½)^½)`.
pub fn gwd_squared(a: &Gaussian2D, b: &Gaussian2D) -> Result<f64> {
    let ea = floored_spectrum(&a.cov, "first")?;
    let eb = floored_spectrum(&b.cov, "second")?;
    let cov_a = Sym2::from_eigen(ea);
    let cov_b = Sym2::from_eigen(eb);
    let root_b = Sym2::from_eigen(Eigen2 {
        major: eb.major.sqrt(),
        minor: eb.minor.sqrt(),
        angle: eb.angle,
    });
    let cross = root_b.sandwich(&cov_a);
    if !cross.is_finite() {
        return Err(Error::numerical("GWD cross term is not finite"));
    }
    let ec = cross.eigen();
    let tol = 1e-9 * ec.major.abs().max(1.0);
    if ec.minor < -tol {
        return Err(Error::numerical(format!(
            "GWD cross term is not positive semidefinite (eigenvalue {})",
            ec.minor
        )));
    }
    let trace_root = ec.major.max(0.0).sqrt() + ec.minor.max(0.0).sqrt();
    let dx = a.mean[0] - b.mean[0];
    let dy = a.mean[1] - b.mean[1];
    let w2 = dx * dx + dy * dy + cov_a.trace() + cov_b.trace() - 2.0 * trace_root;
    Ok(w2.max(0.0))
}

/// Vertical flip of a box inside an image of the given height.
pub fn flip_box(b: &OrientedBox, image_height: f64) -> OrientedBox {
    OrientedBox {
        cx: b.cx,
        cy: image_height - b.cy,
        w: b.w,
        h: b.h,
        theta: normalize_angle(-b.theta),
    }
}

/// Rotates a box by `r` radians about `center`.
pub fn rotate_box(b: &OrientedBox, r: f64, center: [f64; 2]) -> OrientedBox {
    let (s, c) = r.sin_cos();
    let dx = b.cx - center[0];
    let dy = b.cy - center[1];
    OrientedBox {
        cx: center[0] + c * dx - s * dy,
        cy: center[1] + s * dx + c * dy,
        w: b.w,
        h: b.h,
        theta: normalize_angle(b.theta + r),
    }
}

/// Tightest axis-aligned box around the rotated corners.
pub fn hbox_of(b: &OrientedBox) -> HorizontalBox {
    let (s, c) = b.theta.sin_cos();
    let (a, h) = (b.w / 2.0, b.h / 2.0);
    let half_x = a * c.abs() + h * s.abs();
    let half_y = a * s.abs() + h * c.abs();
    HorizontalBox {
        xmin: b.cx - half_x,
        ymin: b.cy - half_y,
        xmax: b.cx + half_x,
        ymax: b.cy + half_y,
    }
}
