use std::path::PathBuf;

use proptest::prelude::*;
use spwood::geometry::{rotate_box, OrientedBox, PointAnnotation};
use spwood::layout::*;

/// Nearest seed pixel by exhaustive search, lowest index on ties.
fn brute_force(seeds: &[PointAnnotation], w: usize, h: usize) -> Vec<usize> {
    let mut out = vec![0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut best = (f64::INFINITY, 0);
            for (k, s) in seeds.iter().enumerate() {
                let dx = x as f64 - s.x.floor();
                let dy = y as f64 - s.y.floor();
                let d = dx * dx + dy * dy;
                if d < best.0 {
                    best = (d, k);
                }
            }
            out[y * w + x] = best.1;
        }
    }
    out
}

/// Up to `n` seeds in distinct pixels of a `w × h` image.
fn arb_scene() -> impl Strategy<Value = (usize, usize, Vec<PointAnnotation>)> {
    (1usize..40, 1usize..40).prop_flat_map(|(w, h)| {
        prop::collection::btree_set((0..w, 0..h), 1..8).prop_flat_map(move |pixels| {
            let n = pixels.len();
            prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), n).prop_map(move |frac| {
                let seeds = pixels
                    .iter()
                    .zip(&frac)
                    .enumerate()
                    .map(|(k, (&(x, y), &(fx, fy)))| {
                        PointAnnotation::new(x as f64 + fx * 0.999, y as f64 + fy * 0.999, k as u32)
                    })
                    .collect();
                (w, h, seeds)
            })
        })
    })
}

fn arb_image(w: usize, h: usize) -> impl Strategy<Value = RasterImage> {
    prop::collection::vec(0.0..=1.0f64, w * h).prop_map(move |d| RasterImage::new(w, h, d).unwrap())
}

proptest! {
    #[test]
    fn voronoi_matches_brute_force((w, h, seeds) in arb_scene()) {
        let map = voronoi_partition(&seeds, w, h).unwrap();
        prop_assert_eq!(&map.cell_id, &brute_force(&seeds, w, h));
        prop_assert!(map.cell_id.iter().all(|&c| c < seeds.len()));
        prop_assert_eq!(map.cell_id.len(), w * h);
    }

    #[test]
    fn watershed_masks_disjoint_and_confined(
        (image, seeds) in arb_scene().prop_flat_map(|(w, h, seeds)| (arb_image(w, h), Just(seeds)))
    ) {
        let (w, h) = (image.width(), image.height());
        let cells = voronoi_partition(&seeds, w, h).unwrap();
        let masks = watershed_segment(&image, &cells).unwrap();
        prop_assert_eq!(masks.len(), seeds.len());
        let mut owner = vec![usize::MAX; w * h];
        for (k, m) in masks.iter().enumerate() {
            let (sx, sy) = seed_pixel(&seeds[k]);
            prop_assert!(m.get(sx, sy));
            for (x, y) in m.pixels() {
                prop_assert_eq!(cells.get(x, y), k);
                prop_assert_eq!(owner[y * w + x], usize::MAX);
                owner[y * w + x] = k;
            }
        }
    }

    #[test]
    fn scale_target_rotation_equivariant(
        w in 8.0..40.0f64,
        h in 8.0..40.0f64,
        theta in -1.5..1.5f64,
        r in -1.5..1.5f64,
    ) {
        let size = 100;
        let b = OrientedBox::new(50.0, 50.0, w, h, theta).unwrap();
        let turned = rotate_box(&b, r, [50.0, 50.0]);
        let t0 = scale_target_from_mask(&rasterize_box(size, size, &b), theta);
        let t1 = scale_target_from_mask(&rasterize_box(size, size, &turned), theta + r);
        prop_assert!(t0.valid && t1.valid);
        prop_assert!((t0.w_t - t1.w_t).abs() <= 2.0, "{:?} vs {:?}", t0, t1);
        prop_assert!((t0.h_t - t1.h_t).abs() <= 2.0, "{:?} vs {:?}", t0, t1);
    }

    #[test]
    fn pgm_round_trip(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        let data: Vec<f64> = (0..w * h)
            .map(|i| ((seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) >> 33) % 256) as f64 / 255.0)
            .collect();
        let img = RasterImage::new(w, h, data).unwrap();
        let mut buf = Vec::new();
        pgm::write_image(&mut buf, &img).unwrap();
        let back = pgm::read(buf.as_slice()).unwrap();
        prop_assert_eq!(back, img);
    }
}

fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

/// One character per pixel: the index of the mask holding it, `.` if none.
fn render(masks: &[BinaryMask], w: usize, h: usize) -> String {
    let mut s = String::new();
    for y in 0..h {
        for x in 0..w {
            let c = masks
                .iter()
                .position(|m| m.get(x, y))
                .map_or('.', |k| char::from_digit(k as u32, 36).unwrap());
            s.push(c);
        }
        s.push('\n');
    }
    s
}

#[test]
fn uniform_image_matches_golden() {
    let (w, h) = (24, 16);
    let image = RasterImage::filled(w, h, 0.5).unwrap();
    let seeds = [
        PointAnnotation::new(4.5, 4.5, 0),
        PointAnnotation::new(18.2, 3.7, 0),
        PointAnnotation::new(11.0, 12.0, 1),
    ];
    let cells = voronoi_partition(&seeds, w, h).unwrap();
    let got = render(&watershed_segment(&image, &cells).unwrap(), w, h);
    let path = golden_path("watershed_uniform.txt");
    if std::env::var_os("SPWOOD_UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &got).unwrap();
    }
    let want = std::fs::read_to_string(&path).expect("golden file present");
    assert_eq!(got, want);
}

#[test]
fn bright_blobs_are_segmented_in_full() {
    // Two separated rectangles on a dark background, one seed each.
    let (w, h) = (60, 30);
    let a = OrientedBox::new(15.0, 15.0, 16.0, 8.0, 0.0).unwrap();
    let b = OrientedBox::new(45.0, 15.0, 10.0, 14.0, 0.0).unwrap();
    let mut image = RasterImage::filled(w, h, 0.05).unwrap();
    image.paint(&rasterize_box(w, h, &a), 0.95).unwrap();
    image.paint(&rasterize_box(w, h, &b), 0.95).unwrap();
    let seeds = [PointAnnotation::new(15.0, 15.0, 0), PointAnnotation::new(45.0, 15.0, 0)];
    let cells = voronoi_partition(&seeds, w, h).unwrap();
    let masks = watershed_segment(&image, &cells).unwrap();
    let ta = scale_target_from_mask(&masks[0], 0.0);
    let tb = scale_target_from_mask(&masks[1], 0.0);
    assert_eq!((ta.w_t, ta.h_t), (16.0, 8.0));
    assert_eq!((tb.w_t, tb.h_t), (10.0, 14.0));
}
