//! Procedural multi-view benchmark.
//!
//! Each view is a noisy gray background with up to four colored shapes, one
//! per image quadrant. Single-view labels fire on a view iff their shape is
//! drawn there. Conjunction labels need shape A and shape B in two
//! *different* views of the study, so no single view can resolve them.

use std::fmt;
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::Rng;

use super::image::RgbImage;
use super::manifest::{Manifest, Study};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shape {
    Disc,
    Square,
    Cross,
    Ring,
    Bar,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 6] = [Shape::Disc, Shape::Square, Shape::Cross, Shape::Ring, Shape::Bar, Shape::Triangle];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Disc => "disc",
            Shape::Square => "square",
            Shape::Cross => "cross",
            Shape::Ring => "ring",
            Shape::Bar => "bar",
            Shape::Triangle => "triangle",
        }
    }

    pub fn color(self) -> [f64; 3] {
        match self {
            Shape::Disc => [0.95, 0.2, 0.2],
            Shape::Square => [0.2, 0.9, 0.2],
            Shape::Cross => [0.25, 0.35, 1.0],
            Shape::Ring => [0.95, 0.9, 0.15],
            Shape::Bar => [0.9, 0.2, 0.9],
            Shape::Triangle => [0.15, 0.9, 0.9],
        }
    }

    /// Whether offset `(dx, dy)` from the center lies inside a shape of radius `r`.
    pub fn contains(self, dx: f64, dy: f64, r: f64) -> bool {
        let (ax, ay) = (dx.abs(), dy.abs());
        match self {
            Shape::Disc => dx * dx + dy * dy <= r * r,
            Shape::Square => ax <= 0.8 * r && ay <= 0.8 * r,
            Shape::Cross => (ax <= 0.3 * r && ay <= r) || (ay <= 0.3 * r && ax <= r),
            Shape::Ring => {
                let d2 = dx * dx + dy * dy;
                d2 <= r * r && d2 >= (0.55 * r).powi(2)
            }
            Shape::Bar => ax <= r && ay <= 0.3 * r,
            Shape::Triangle => dy >= -r && dy <= 0.8 * r && ax <= 0.55 * (dy + r),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelRule {
    /// Visible in a single view.
    Single(Shape),
    /// `A` in one view and `B` in a different view of the same study.
    Conjunction(Shape, Shape),
}

impl LabelRule {
    pub fn is_conjunction(self) -> bool {
        matches!(self, LabelRule::Conjunction(..))
    }
}

impl fmt::Display for LabelRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelRule::Single(s) => f.write_str(s.name()),
            LabelRule::Conjunction(a, b) => write!(f, "{}+{}", a.name(), b.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub image_size: usize,
    pub n_studies: usize,
    pub min_views: usize,
    pub max_views: usize,
    pub labels: Vec<LabelRule>,
    /// Independent probability of each shape appearing in a view.
    pub shape_prob: f64,
    /// Half-width of the uniform per-pixel noise.
    pub noise: f64,
    pub seed: u64,
    /// Study `i` is dated `start_date + i` days.
    pub start_date: NaiveDate,
}

impl SyntheticSpec {
    /// 64×64 views, 1–6 per study, six single-view labels and two conjunctions.
    pub fn benchmark(seed: u64, n_studies: usize) -> Self {
        let mut labels: Vec<LabelRule> = Shape::ALL.iter().map(|&s| LabelRule::Single(s)).collect();
        labels.push(LabelRule::Conjunction(Shape::Disc, Shape::Square));
        labels.push(LabelRule::Conjunction(Shape::Cross, Shape::Ring));
        SyntheticSpec {
            image_size: 64,
            n_studies,
            min_views: 1,
            max_views: 6,
            labels,
            shape_prob: 0.2,
            noise: 0.05,
            seed,
            start_date: NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid date"),
        }
    }

    pub fn label_names(&self) -> Vec<String> {
        self.labels.iter().map(|l| l.to_string()).collect()
    }

    /// Shapes referenced by any label, in first-use order.
    pub fn shapes(&self) -> Vec<Shape> {
        let mut out = Vec::new();
        for l in &self.labels {
            let refs = match *l {
                LabelRule::Single(s) => vec![s],
                LabelRule::Conjunction(a, b) => vec![a, b],
            };
            for s in refs {
                if !out.contains(&s) {
                    out.push(s);
                }
            }
        }
        out
    }

    pub fn date_of(&self, index: usize) -> NaiveDate {
        self.start_date + chrono::Days::new(index as u64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::contract("synthetic spec has zero labels"));
        }
        if self.image_size < 16 {
            return Err(Error::config(format!("synthetic image_size {} < 16", self.image_size)));
        }
        if self.min_views == 0 || self.min_views > self.max_views || self.max_views > 16 {
            return Err(Error::config(format!(
                "synthetic views range [{}, {}] must lie in [1, 16]",
                self.min_views, self.max_views
            )));
        }
        if !(0.0..=1.0).contains(&self.shape_prob) || !(0.0..0.2).contains(&self.noise) {
            return Err(Error::config("synthetic shape_prob must be in [0,1] and noise in [0,0.2)"));
        }
        if self.n_studies == 0 {
            return Err(Error::config("synthetic n_studies must be >= 1"));
        }
        Ok(())
    }
}

/// One generated study before it is written to disk.
#[derive(Debug, Clone)]
pub struct SyntheticStudy {
    pub id: String,
    pub date: NaiveDate,
    pub views: Vec<RgbImage>,
    /// Shapes drawn in each view.
    pub shapes: Vec<Vec<Shape>>,
    pub view_labels: Vec<Vec<u8>>,
}

pub fn study_id(index: usize) -> String {
    format!("s{index:05}")
}

/// Renders study `index` of `spec`; depends only on `(spec, index)`.
pub fn render_study(spec: &SyntheticSpec, index: usize) -> Result<SyntheticStudy> {
    spec.validate()?;
    let mut r = rng::stream(spec.seed, "data", index as u64);
    let n_views = r.gen_range(spec.min_views..=spec.max_views);
    let vocab = spec.shapes();
    let s = spec.image_size;
    let half = s / 2;
    let mut views = Vec::with_capacity(n_views);
    let mut shapes = Vec::with_capacity(n_views);
    for _ in 0..n_views {
        let mut drawn: Vec<Shape> = vocab.iter().copied().filter(|_| r.gen_bool(spec.shape_prob)).collect();
        drawn.shuffle(&mut r);
        drawn.truncate(4);
        let mut slots = [0usize, 1, 2, 3];
        slots.shuffle(&mut r);

        let mut img = RgbImage::new(s, s);
        let base = r.gen_range(0.15..0.35);
        for v in img.data.iter_mut() {
            *v = base + r.gen_range(-spec.noise..=spec.noise);
        }
        for (&shape, &slot) in drawn.iter().zip(&slots) {
            let radius = r.gen_range(s as f64 / 10.0..=s as f64 / 5.5);
            let (ox, oy) = ((slot % 2) * half, (slot / 2) * half);
            let cx = ox as f64 + r.gen_range(radius..=half as f64 - radius);
            let cy = oy as f64 + r.gen_range(radius..=half as f64 - radius);
            let color = shape.color();
            for y in oy..oy + half {
                for x in ox..ox + half {
                    if shape.contains(x as f64 + 0.5 - cx, y as f64 + 0.5 - cy, radius) {
                        for (c, &col) in color.iter().enumerate() {
                            img.set(c, y, x, col + r.gen_range(-spec.noise..=spec.noise));
                        }
                    }
                }
            }
        }
        img.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        views.push(img);
        shapes.push(drawn);
    }

    let mut view_labels = vec![vec![0u8; spec.labels.len()]; n_views];
    for (j, rule) in spec.labels.iter().enumerate() {
        match *rule {
            LabelRule::Single(shape) => {
                for (row, drawn) in view_labels.iter_mut().zip(&shapes) {
                    row[j] = drawn.contains(&shape) as u8;
                }
            }
            LabelRule::Conjunction(a, b) => {
                let positive = (0..n_views)
                    .any(|i| shapes[i].contains(&a) && (0..n_views).any(|k| k != i && shapes[k].contains(&b)));
                for row in view_labels.iter_mut() {
                    row[j] = positive as u8;
                }
            }
        }
    }
    Ok(SyntheticStudy { id: study_id(index), date: spec.date_of(index), views, shapes, view_labels })
}

/// Writes `views/<id>_<k>.ppm` and `manifest.tsv` under `out_dir`.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    let views_dir = out_dir.join("views");
    std::fs::create_dir_all(&views_dir)?;
    let mut studies = Vec::with_capacity(spec.n_studies);
    for i in 0..spec.n_studies {
        let st = render_study(spec, i)?;
        let mut paths = Vec::with_capacity(st.views.len());
        for (k, img) in st.views.iter().enumerate() {
            let rel = format!("views/{}_{k}.ppm", st.id);
            img.save_ppm(&out_dir.join(&rel))?;
            paths.push(rel.into());
        }
        studies.push(Study::new(st.id, st.date, paths, st.view_labels)?);
    }
    let manifest = Manifest { labels: spec.label_names(), studies, root: out_dir.to_path_buf() };
    manifest.save(&out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticSpec {
        let mut s = SyntheticSpec::benchmark(seed, 30);
        s.image_size = 32;
        s
    }

    #[test]
    fn labels_follow_rules() {
        let spec = small(3);
        for i in 0..spec.n_studies {
            let st = render_study(&spec, i).unwrap();
            assert!((1..=6).contains(&st.views.len()));
            for (row, drawn) in st.view_labels.iter().zip(&st.shapes) {
                assert!(drawn.len() <= 4);
                for (j, s) in Shape::ALL.iter().enumerate() {
                    assert_eq!(row[j] == 1, drawn.contains(s));
                }
            }
            let has = |s: Shape| st.shapes.iter().map(|d| d.contains(&s)).collect::<Vec<_>>();
            let (d, q) = (has(Shape::Disc), has(Shape::Square));
            let mut want = false;
            for i in 0..d.len() {
                for k in 0..q.len() {
                    want |= i != k && d[i] && q[k];
                }
            }
            assert_eq!(st.view_labels[0][6] == 1, want);
        }
    }

    #[test]
    fn conjunction_requires_distinct_views() {
        // both shapes in the same single view is not enough
        let mut spec = small(0);
        spec.min_views = 1;
        spec.max_views = 1;
        spec.shape_prob = 1.0;
        let st = render_study(&spec, 0).unwrap();
        assert_eq!(st.view_labels[0][6], 0);
        assert_eq!(st.view_labels[0][7], 0);
    }

    #[test]
    fn zero_labels_rejected() {
        let mut spec = small(0);
        spec.labels.clear();
        assert!(matches!(render_study(&spec, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let spec = small(9);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate_synthetic_dataset(&spec, a.path()).unwrap();
        generate_synthetic_dataset(&spec, b.path()).unwrap();
        let m = std::fs::read(a.path().join("manifest.tsv")).unwrap();
        assert_eq!(m, std::fs::read(b.path().join("manifest.tsv")).unwrap());
        let mut n = 0;
        for e in std::fs::read_dir(a.path().join("views")).unwrap() {
            let e = e.unwrap();
            let other = b.path().join("views").join(e.file_name());
            assert_eq!(std::fs::read(e.path()).unwrap(), std::fs::read(other).unwrap());
            n += 1;
        }
        assert!(n >= 30);
    }
}
