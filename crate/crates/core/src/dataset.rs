//! DOTA-format annotations, weak-label derivation and the two sparse
//! labeling protocols.
//!
//! A DOTA annotation file holds one object per line:
//! `x1 y1 x2 y2 x3 y3 x4 y4 category difficulty`. Leading lines whose first
//! token is not a number (`imagesource:...`, `gsd:...`) are metadata; they
//! are kept and written back unchanged.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, HorizontalBox, OrientedBox};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub corners: [[f64; 2]; 4],
    pub category: String,
    pub difficulty: u32,
}

impl AnnotationRecord {
    pub fn to_line(&self) -> String {
        let mut s = String::new();
        for [x, y] in self.corners {
            let _ = write!(s, "{x} {y} ");
        }
        let _ = write!(s, "{} {}", self.category, self.difficulty);
        s
    }

    /// Signed shoelace area; positive for clockwise corners in image
    /// coordinates (y down).
    pub fn signed_area(&self) -> f64 {
        let c = &self.corners;
        (0..4)
            .map(|i| {
                let (a, b) = (c[i], c[(i + 1) % 4]);
                a[0] * b[1] - b[0] * a[1]
            })
            .sum::<f64>()
            / 2.0
    }

    pub fn centroid(&self) -> [f64; 2] {
        let sx: f64 = self.corners.iter().map(|p| p[0]).sum();
        let sy: f64 = self.corners.iter().map(|p| p[1]).sum();
        [sx / 4.0, sy / 4.0]
    }
}

/// All annotations of one image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageAnnotations {
    pub image_id: String,
    /// Metadata lines preceding the first record.
    pub header: Vec<String>,
    pub records: Vec<AnnotationRecord>,
}

impl ImageAnnotations {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for h in &self.header {
            s.push_str(h);
            s.push('\n');
        }
        for r in &self.records {
            s.push_str(&r.to_line());
            s.push('\n');
        }
        s
    }
}

fn starts_numeric(line: &str) -> bool {
    line.split_whitespace().next().is_some_and(|t| t.parse::<f64>().is_ok())
}

fn parse_record(image_id: &str, line: &str, line_no: usize) -> Result<AnnotationRecord> {
    let parse_err = |message: String| Error::Parse { line: line_no, message };
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() != 10 {
        return Err(parse_err(format!(
            "expected 8 coordinates, category and difficulty (10 fields), found {}",
            tokens.len()
        )));
    }
    let mut coords = [0.0; 8];
    for (slot, tok) in coords.iter_mut().zip(&tokens[..8]) {
        *slot = tok
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| parse_err(format!("bad coordinate '{tok}'")))?;
    }
    let difficulty = tokens[9]
        .parse::<u32>()
        .map_err(|_| parse_err(format!("bad difficulty '{}'", tokens[9])))?;
    Ok(AnnotationRecord {
        image_id: image_id.to_string(),
        corners: [
            [coords[0], coords[1]],
            [coords[2], coords[3]],
            [coords[4], coords[5]],
            [coords[6], coords[7]],
        ],
        category: tokens[8].to_string(),
        difficulty,
    })
}

/// Parses one DOTA annotation file. Line numbers in errors are 1-based.
pub fn parse_dota(image_id: &str, text: &str) -> Result<ImageAnnotations> {
    let mut out = ImageAnnotations {
        image_id: image_id.to_string(),
        ..Default::default()
    };
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if out.records.is_empty() && !starts_numeric(trimmed) {
            out.header.push(trimmed.to_string());
            continue;
        }
        out.records.push(parse_record(image_id, trimmed, i + 1)?);
    }
    Ok(out)
}

/// Annotations keyed by image id. Iteration is in id order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationSet {
    images: BTreeMap<String, ImageAnnotations>,
}

impl AnnotationSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, image: ImageAnnotations) {
        self.images.insert(image.image_id.clone(), image);
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageAnnotations> {
        self.images.get(image_id)
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageAnnotations> {
        self.images.values()
    }

    pub fn image_ids(&self) -> impl Iterator<Item = &str> {
        self.images.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn record_count(&self) -> usize {
        self.images.values().map(|i| i.records.len()).sum()
    }

    pub fn records(&self) -> impl Iterator<Item = &AnnotationRecord> {
        self.images.values().flat_map(|i| i.records.iter())
    }

    /// Keeps only the listed images.
    pub fn restrict(&self, ids: &[String]) -> AnnotationSet {
        AnnotationSet {
            images: ids
                .iter()
                .filter_map(|id| self.images.get(id).map(|img| (id.clone(), img.clone())))
                .collect(),
        }
    }

    /// Instances per category.
    pub fn category_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for r in self.records() {
            *counts.entry(r.category.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// Reads every `*.txt` file in `dir`; the file stem is the image id.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        paths.retain(|p| p.is_file() && p.extension().is_some_and(|e| e == "txt"));
        paths.sort();
        let mut set = AnnotationSet::new();
        for path in paths {
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::invalid(format!("non UTF-8 file name {}", path.display())))?
                .to_string();
            let text = fs::read_to_string(&path)?;
            let image = parse_dota(&id, &text).map_err(|e| match e {
                Error::Parse { line, message } => Error::Parse {
                    line,
                    message: format!("{}: {message}", path.display()),
                },
                other => other,
            })?;
            set.insert(image);
        }
        Ok(set)
    }

    /// Writes one `<image_id>.txt` per image, creating `dir` if needed.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for img in self.images.values() {
            fs::write(dir.join(format!("{}.txt", img.image_id)), img.to_text())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeakTarget {
    RBox,
    HBox,
    Point,
}

impl FromStr for WeakTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rbox" => Ok(WeakTarget::RBox),
            "hbox" => Ok(WeakTarget::HBox),
            "point" => Ok(WeakTarget::Point),
            other => Err(Error::invalid(format!("unknown weak label kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeakLabel {
    RBox(OrientedBox),
    HBox(HorizontalBox),
    Point { x: f64, y: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakAnnotation {
    pub label: WeakLabel,
    pub category: String,
}

impl WeakAnnotation {
    /// `cx cy w h theta category`, `xmin ymin xmax ymax category` or
    /// `x y category`.
    pub fn to_line(&self) -> String {
        match &self.label {
            WeakLabel::RBox(b) => {
                format!("{} {} {} {} {} {}", b.cx, b.cy, b.w, b.h, b.theta, self.category)
            }
            WeakLabel::HBox(b) => {
                format!("{} {} {} {} {}", b.xmin, b.ymin, b.xmax, b.ymax, self.category)
            }
            WeakLabel::Point { x, y } => format!("{x} {y} {}", self.category),
        }
    }
}

fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

fn edge(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [b[0] - a[0], b[1] - a[1]]
}

/// Oriented box of a (near-)rectangular quadrilateral: center at the corner
/// centroid, sides from the mean opposite-edge lengths, angle along the
/// longer side.
pub fn rbox_from_corners(corners: &[[f64; 2]; 4]) -> Result<OrientedBox> {
    let c = corners;
    let e: Vec<[f64; 2]> = (0..4).map(|i| edge(c[i], c[(i + 1) % 4])).collect();
    let len_a = (norm(e[0]) + norm(e[2])) / 2.0;
    let len_b = (norm(e[1]) + norm(e[3])) / 2.0;
    // Opposite edges point in opposite directions; subtracting averages them.
    let (w, h, dir) = if len_a >= len_b {
        (len_a, len_b, [e[0][0] - e[2][0], e[0][1] - e[2][1]])
    } else {
        (len_b, len_a, [e[1][0] - e[3][0], e[1][1] - e[3][1]])
    };
    let cx = c.iter().map(|p| p[0]).sum::<f64>() / 4.0;
    let cy = c.iter().map(|p| p[1]).sum::<f64>() / 4.0;
    OrientedBox::new(cx, cy, w, h, normalize_angle(dir[1].atan2(dir[0])))
}

const MIN_AREA: f64 = 1e-12;

/// Drops orientation, or orientation and scale, from a full annotation.
pub fn weaken(record: &AnnotationRecord, target: WeakTarget) -> Result<WeakAnnotation> {
    if record.signed_area().abs() < MIN_AREA {
        return Err(Error::degenerate(format!(
            "zero-area quadrilateral in image {}",
            record.image_id
        )));
    }
    let label = match target {
        WeakTarget::RBox => WeakLabel::RBox(rbox_from_corners(&record.corners)?),
        WeakTarget::HBox => {
            let xs = record.corners.map(|p| p[0]);
            let ys = record.corners.map(|p| p[1]);
            let min = |v: [f64; 4]| v.into_iter().fold(f64::INFINITY, f64::min);
            let max = |v: [f64; 4]| v.into_iter().fold(f64::NEG_INFINITY, f64::max);
            WeakLabel::HBox(HorizontalBox::new(min(xs), min(ys), max(xs), max(ys))?)
        }
        WeakTarget::Point => {
            let [x, y] = record.centroid();
            WeakLabel::Point { x, y }
        }
    };
    Ok(WeakAnnotation {
        label,
        category: record.category.clone(),
    })
}

/// Round half up, with a little slack so that products like `0.15 · 10`
/// land on the intended side.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

fn check_ratio(name: &str, r: f64) -> Result<()> {
    if r > 0.0 && r <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} ratio {r} outside (0, 1]")))
    }
}

/// Splits image ids into (labeled, unlabeled). Both lists are sorted.
pub fn select_partial(set: &AnnotationSet, partial_ratio: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    select_partial_with(set, partial_ratio, &mut SeededRng::new(seed))
}

fn select_partial_with(
    set: &AnnotationSet,
    partial_ratio: f64,
    rng: &mut SeededRng,
) -> Result<(Vec<String>, Vec<String>)> {
    check_ratio("partial", partial_ratio)?;
    if set.is_empty() {
        return Err(Error::invalid("cannot split an empty annotation set"));
    }
    let mut ids: Vec<String> = set.image_ids().map(str::to_string).collect();
    let k = round_half_up(partial_ratio * ids.len() as f64).min(ids.len());
    rng.shuffle(&mut ids);
    let mut unlabeled = ids.split_off(k);
    ids.sort();
    unlabeled.sort();
    Ok((ids, unlabeled))
}

/// Copies `set`, keeping only records whose `(image, index)` is in `keep`.
fn retain(set: &AnnotationSet, keep: &BTreeMap<&str, Vec<bool>>) -> AnnotationSet {
    let mut out = AnnotationSet::new();
    for img in set.images() {
        let flags = &keep[img.image_id.as_str()];
        out.insert(ImageAnnotations {
            image_id: img.image_id.clone(),
            header: img.header.clone(),
            records: img
                .records
                .iter()
                .zip(flags)
                .filter(|(_, &k)| k)
                .map(|(r, _)| r.clone())
                .collect(),
        });
    }
    out
}

fn indices_by_category(records: &[AnnotationRecord]) -> BTreeMap<&str, Vec<usize>> {
    let mut by_cat: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_cat.entry(r.category.as_str()).or_default().push(i);
    }
    by_cat
}

/// Per image and category, keeps `max(1, ⌊ratio · n⌉)` instances.
pub fn sparsify_single(labeled: &AnnotationSet, sparse_ratio: f64, seed: u64) -> Result<AnnotationSet> {
    sparsify_single_with(labeled, sparse_ratio, &mut SeededRng::new(seed))
}

fn sparsify_single_with(labeled: &AnnotationSet, sparse_ratio: f64, rng: &mut SeededRng) -> Result<AnnotationSet> {
    check_ratio("sparse", sparse_ratio)?;
    let mut keep: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
    for img in labeled.images() {
        let mut flags = vec![false; img.records.len()];
        for (_, mut idx) in indices_by_category(&img.records) {
            let k = round_half_up(sparse_ratio * idx.len() as f64).clamp(1, idx.len());
            rng.shuffle(&mut idx);
            for &i in &idx[..k] {
                flags[i] = true;
            }
        }
        keep.insert(&img.image_id, flags);
    }
    Ok(retain(labeled, &keep))
}

/// Per category over the whole set, keeps `⌊ratio · n⌉` instances.
pub fn sparsify_overall(labeled: &AnnotationSet, sparse_ratio: f64, seed: u64) -> Result<AnnotationSet> {
    sparsify_overall_with(labeled, sparse_ratio, &mut SeededRng::new(seed))
}

fn sparsify_overall_with(labeled: &AnnotationSet, sparse_ratio: f64, rng: &mut SeededRng) -> Result<AnnotationSet> {
    check_ratio("sparse", sparse_ratio)?;
    let mut keep: BTreeMap<&str, Vec<bool>> = labeled
        .images()
        .map(|img| (img.image_id.as_str(), vec![false; img.records.len()]))
        .collect();
    let mut by_cat: BTreeMap<&str, Vec<(&str, usize)>> = BTreeMap::new();
    for img in labeled.images() {
        for (i, r) in img.records.iter().enumerate() {
            by_cat
                .entry(r.category.as_str())
                .or_default()
                .push((img.image_id.as_str(), i));
        }
    }
    for (_, mut refs) in by_cat {
        let k = round_half_up(sparse_ratio * refs.len() as f64).min(refs.len());
        rng.shuffle(&mut refs);
        for &(id, i) in &refs[..k] {
            keep.get_mut(id).expect("id from set")[i] = true;
        }
    }
    Ok(retain(labeled, &keep))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SparseMethod {
    Single,
    Overall,
}

impl FromStr for SparseMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "single" => Ok(SparseMethod::Single),
            "overall" => Ok(SparseMethod::Overall),
            other => Err(Error::invalid(format!("unknown sparse method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsifyConfig {
    pub method: SparseMethod,
    pub partial_ratio: f64,
    pub sparse_ratio: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsifyOutput {
    pub labeled: AnnotationSet,
    pub unlabeled_ids: Vec<String>,
}

/// Image split followed by instance sparsification, all drawn from one
/// generator seeded with `config.seed`.
pub fn sparsify(set: &AnnotationSet, config: &SparsifyConfig) -> Result<SparsifyOutput> {
    check_ratio("sparse", config.sparse_ratio)?;
    let mut rng = SeededRng::new(config.seed);
    let (labeled_ids, unlabeled_ids) = select_partial_with(set, config.partial_ratio, &mut rng)?;
    let labeled = set.restrict(&labeled_ids);
    let labeled = match config.method {
        SparseMethod::Single => sparsify_single_with(&labeled, config.sparse_ratio, &mut rng)?,
        SparseMethod::Overall => sparsify_overall_with(&labeled, config.sparse_ratio, &mut rng)?,
    };
    Ok(SparsifyOutput { labeled, unlabeled_ids })
}

/// DOTA-v1.0 categories in reporting order, full name and abbreviation.
pub const DOTA_CATEGORIES: [(&str, &str); 15] = [
    ("plane", "PL"),
    ("baseball-diamond", "BD"),
    ("bridge", "BR"),
    ("ground-track-field", "GTF"),
    ("small-vehicle", "SV"),
    ("large-vehicle", "LV"),
    ("ship", "SH"),
    ("tennis-court", "TC"),
    ("basketball-court", "BC"),
    ("storage-tank", "ST"),
    ("soccer-ball-field", "SBF"),
    ("roundabout", "RA"),
    ("harbor", "HA"),
    ("swimming-pool", "SP"),
    ("helicopter", "HC"),
];

fn category_rank(name: &str) -> Option<usize> {
    DOTA_CATEGORIES
        .iter()
        .position(|(full, abbr)| name.eq_ignore_ascii_case(full) || name.eq_ignore_ascii_case(abbr))
}

/// Sort key placing DOTA categories first in their canonical order.
pub fn category_order(a: &str, b: &str) -> std::cmp::Ordering {
    match (category_rank(a), category_rank(b)) {
        (Some(x), Some(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.cmp(b),
    }
}

/// `(single − overall) / overall × 100`, undefined when `overall` is zero.
pub fn relative_difference_percent(single: usize, overall: usize) -> Option<f64> {
    (overall > 0).then(|| (single as f64 - overall as f64) / overall as f64 * 100.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryRow {
    pub category: String,
    pub count_single: usize,
    pub count_overall: usize,
    pub relative_difference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CategoryStats {
    pub rows: Vec<CategoryRow>,
}

impl CategoryStats {
    pub const CSV_HEADER: &'static str = "category,count_single,count_overall,relative_difference_percent";

    pub fn from_counts(single: &BTreeMap<String, usize>, overall: &BTreeMap<String, usize>) -> Self {
        let mut names: Vec<&String> = single.keys().chain(overall.keys()).collect();
        names.sort_by(|a, b| category_order(a, b));
        names.dedup();
        let rows = names
            .into_iter()
            .map(|name| {
                let s = single.get(name).copied().unwrap_or(0);
                let o = overall.get(name).copied().unwrap_or(0);
                CategoryRow {
                    category: name.clone(),
                    count_single: s,
                    count_overall: o,
                    relative_difference: relative_difference_percent(s, o),
                }
            })
            .collect();
        Self { rows }
    }

    /// CSV body lines; undefined differences are written as `NA`.
    pub fn csv_lines(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| {
                let diff = r.relative_difference.map_or("NA".to_string(), |d| format!("{d:.3}"));
                format!("{},{},{},{diff}", r.category, r.count_single, r.count_overall)
            })
            .collect()
    }
}

pub fn compare_stats(single: &AnnotationSet, overall: &AnnotationSet) -> CategoryStats {
    CategoryStats::from_counts(&single.category_counts(), &overall.category_counts())
}

/// Synthetic corpus of axis-aligned and rotated rectangles for tests and
/// demos. Roughly a third of the categories appear as per-image singletons,
/// the rest in dense clusters.
pub fn synthetic_corpus(n_images: usize, n_records: usize, seed: u64) -> AnnotationSet {
    let mut rng = SeededRng::new(seed);
    let mut images: Vec<ImageAnnotations> = (0..n_images.max(1))
        .map(|i| ImageAnnotations {
            image_id: format!("P{i:05}"),
            header: vec!["imagesource:synthetic".to_string(), "gsd:null".to_string()],
            records: Vec::new(),
        })
        .collect();
    for _ in 0..n_records {
        let img = rng.below(images.len() as u64) as usize;
        let cat = if rng.next_f64() < 0.3 {
            // Sparse categories: rarely more than one per image.
            DOTA_CATEGORIES[1 + rng.below(3) as usize].0
        } else {
            DOTA_CATEGORIES[4 + rng.below(3) as usize].0
        };
        let b = OrientedBox {
            cx: rng.uniform(50.0, 950.0),
            cy: rng.uniform(50.0, 950.0),
            w: rng.uniform(10.0, 80.0),
            h: rng.uniform(5.0, 40.0),
            theta: normalize_angle(rng.uniform(-1.5, 1.5)),
        };
        let corners = b
            .corners()
            .map(|[x, y]| [(x * 10.0).round() / 10.0, (y * 10.0).round() / 10.0]);
        let id = images[img].image_id.clone();
        images[img].records.push(AnnotationRecord {
            image_id: id,
            corners,
            category: cat.to_string(),
            difficulty: u32::from(rng.next_f64() < 0.1),
        });
    }
    let mut set = AnnotationSet::new();
    for img in images {
        set.insert(img);
    }
    set
}
