use std::f64::consts::{FRAC_PI_2, PI};

use proptest::prelude::*;
use spwood::geometry::*;

fn arb_box() -> impl Strategy<Value = OrientedBox> {
    (
        -100.0..100.0f64,
        -100.0..100.0f64,
        0.5..50.0f64,
        0.5..50.0f64,
        -FRAC_PI_2..FRAC_PI_2,
    )
        .prop_map(|(cx, cy, w, h, t)| OrientedBox::new(cx, cy, w, h, t).unwrap())
}

fn gaussian(b: &OrientedBox) -> Gaussian2D {
    rbox_to_gaussian(b).unwrap()
}

fn rotation(r: f64) -> [[f64; 2]; 2] {
    let (s, c) = r.sin_cos();
    [[c, -s], [s, c]]
}

/// `R Σ Rᵀ` with plain arrays, independent of `Sym2`.
fn conjugate(r: [[f64; 2]; 2], m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut rm = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            rm[i][j] = (0..2).map(|k| r[i][k] * m[k][j]).sum();
        }
    }
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = (0..2).map(|k| rm[i][k] * r[j][k]).sum();
        }
    }
    out
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

proptest! {
    #[test]
    fn covariance_is_spd(b in arb_box()) {
        let cov = gaussian(&b).cov;
        let e = cov.eigen();
        prop_assert!(e.minor > 1e-9 * e.major.max(1.0) || e.minor > 0.0);
        prop_assert!(cov.det() > 0.0);
        // Eigenvalues are the squared half-extents.
        let (big, small) = if b.w >= b.h { (b.w, b.h) } else { (b.h, b.w) };
        prop_assert!((e.major - (big / 2.0).powi(2)).abs() < 1e-9 * e.major.max(1.0));
        prop_assert!((e.minor - (small / 2.0).powi(2)).abs() < 1e-9 * e.major.max(1.0));
    }

    #[test]
    fn bhattacharyya_symmetric_and_zero_on_self(a in arb_box(), b in arb_box()) {
        let (ga, gb) = (gaussian(&a), gaussian(&b));
        let ab = bhattacharyya(&ga, &gb).unwrap();
        let ba = bhattacharyya(&gb, &ga).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.abs().max(1.0));
        prop_assert!(bhattacharyya(&ga, &ga).unwrap().abs() < 1e-12);
        prop_assert!(ab >= -1e-12);
    }

    #[test]
    fn gwd_symmetric_and_zero_on_self(a in arb_box(), b in arb_box()) {
        let (ga, gb) = (gaussian(&a), gaussian(&b));
        let ab = gwd_squared(&ga, &gb).unwrap();
        let ba = gwd_squared(&gb, &ga).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1.0));
        prop_assert!(gwd_squared(&ga, &ga).unwrap() < 1e-9);
    }

    #[test]
    fn gwd_positive_for_distinct_boxes(a in arb_box(), dx in 0.01..5.0f64) {
        let moved = OrientedBox { cx: a.cx + dx, ..a };
        let d = gwd_squared(&gaussian(&a), &gaussian(&moved)).unwrap();
        // Equal covariances: W² is the squared mean offset.
        prop_assert!((d - dx * dx).abs() < 1e-6 * d.max(1.0));
    }

    #[test]
    fn flip_is_involution(b in arb_box(), height in 1.0..500.0f64) {
        let back = flip_box(&flip_box(&b, height), height);
        prop_assert!((back.cx - b.cx).abs() < 1e-9);
        prop_assert!((back.cy - b.cy).abs() < 1e-9);
        prop_assert!(angle_gap(back.theta, b.theta) < 1e-12);
    }

    #[test]
    fn rotation_round_trip(b in arb_box(), r in -PI..PI, cx in -50.0..50.0f64, cy in -50.0..50.0f64) {
        let back = rotate_box(&rotate_box(&b, r, [cx, cy]), -r, [cx, cy]);
        prop_assert!((back.cx - b.cx).abs() < 1e-9);
        prop_assert!((back.cy - b.cy).abs() < 1e-9);
        prop_assert!(angle_gap(back.theta, b.theta) < 1e-9);
        prop_assert_eq!((back.w, back.h), (b.w, b.h));
    }

    #[test]
    fn covariance_rotates_with_box(b in arb_box(), r in -PI..PI) {
        let rotated = gaussian(&rotate_box(&b, r, [3.0, -2.0])).cov;
        let c = gaussian(&b).cov;
        let expect = conjugate(rotation(r), [[c.xx, c.xy], [c.xy, c.yy]]);
        let scale = c.trace().max(1.0);
        prop_assert!((rotated.xx - expect[0][0]).abs() < 1e-9 * scale);
        prop_assert!((rotated.xy - expect[0][1]).abs() < 1e-9 * scale);
        prop_assert!((rotated.yy - expect[1][1]).abs() < 1e-9 * scale);
    }

    #[test]
    fn angles_normalize_into_range(t in -1e3..1e3f64) {
        let n = normalize_angle(t);
        prop_assert!((-FRAC_PI_2..FRAC_PI_2).contains(&n));
        prop_assert!(angle_gap(n, t) < 1e-9);
    }

    #[test]
    fn hbox_contains_corners(b in arb_box()) {
        let hb = hbox_of(&b);
        for [x, y] in b.corners() {
            prop_assert!(x >= hb.xmin - 1e-9 && x <= hb.xmax + 1e-9);
            prop_assert!(y >= hb.ymin - 1e-9 && y <= hb.ymax + 1e-9);
        }
    }
}

#[test]
fn bhattacharyya_of_shifted_unit_gaussians() {
    // Equal covariances: B = ⅛ Δμᵀ Σ⁻¹ Δμ.
    let a = Gaussian2D::new([0.0, 0.0], Sym2::IDENTITY).unwrap();
    let b = Gaussian2D::new([2.0, 0.0], Sym2::IDENTITY).unwrap();
    assert!((bhattacharyya(&a, &b).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn gwd_of_scaled_identity() {
    // W² between 𝒩(0, I) and 𝒩(0, 4I) in 2-D is tr(I + 4I − 2·2I) = 2.
    let a = Gaussian2D::new([0.0, 0.0], Sym2::IDENTITY).unwrap();
    let b = Gaussian2D::new([0.0, 0.0], Sym2::diag(4.0, 4.0)).unwrap();
    assert!((gwd_squared(&a, &b).unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn invalid_boxes_rejected() {
    assert!(OrientedBox::new(0.0, 0.0, 0.0, 1.0, 0.0).is_err());
    assert!(OrientedBox::new(0.0, 0.0, 1.0, -1.0, 0.0).is_err());
    assert!(OrientedBox::new(f64::NAN, 0.0, 1.0, 1.0, 0.0).is_err());
    assert!(Gaussian2D::new([0.0, 0.0], Sym2::diag(1.0, -1.0)).is_err());
}
