//! Studies, the line-oriented manifest format and study-level labels.
//!
//! ```text
//! #labels<TAB>disc<TAB>square<TAB>...
//! s0001<TAB>2021-03-04<TAB>views/s0001_0.ppm;views/s0001_1.ppm<TAB>1,0,...;0,0,...
//! ```
//!
//! View paths are stored relative to the manifest's directory.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::error::{Error, Result};

const HEADER_TAG: &str = "#labels";

#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub id: String,
    pub date: NaiveDate,
    pub views: Vec<PathBuf>,
    /// `n_views × L`, entries in {0, 1}.
    pub view_labels: Vec<Vec<u8>>,
    pub study_labels: Vec<u8>,
}

impl Study {
    pub fn new(id: impl Into<String>, date: NaiveDate, views: Vec<PathBuf>, view_labels: Vec<Vec<u8>>) -> Result<Self> {
        let study_labels = aggregate_study_labels(&view_labels)?;
        Ok(Study { id: id.into(), date, views, view_labels, study_labels })
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub labels: Vec<String>,
    pub studies: Vec<Study>,
    /// Directory relative view paths are resolved against.
    pub root: PathBuf,
}

impl Manifest {
    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn view_path(&self, study: &Study, k: usize) -> PathBuf {
        self.root.join(&study.views[k])
    }

    /// Same vocabulary and root, a different study list.
    pub fn with_studies(&self, studies: Vec<Study>) -> Manifest {
        Manifest { labels: self.labels.clone(), studies, root: self.root.clone() }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from(HEADER_TAG);
        for l in &self.labels {
            s.push('\t');
            s.push_str(l);
        }
        s.push('\n');
        for st in &self.studies {
            let views: Vec<String> = st.views.iter().map(|p| p.to_string_lossy().replace('\\', "/")).collect();
            let labels: Vec<String> = st
                .view_labels
                .iter()
                .map(|row| row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))
                .collect();
            let _ = writeln!(s, "{}\t{}\t{}\t{}", st.id, st.date, views.join(";"), labels.join(";"));
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Column-wise maximum over views.
pub fn aggregate_study_labels(view_labels: &[Vec<u8>]) -> Result<Vec<u8>> {
    let first = view_labels
        .first()
        .ok_or_else(|| Error::contract("aggregate_study_labels: no views"))?;
    let mut out = first.clone();
    for row in &view_labels[1..] {
        if row.len() != out.len() {
            return Err(Error::dim(format!(
                "aggregate_study_labels: label rows of length {} and {}",
                out.len(),
                row.len()
            )));
        }
        for (o, &v) in out.iter_mut().zip(row) {
            *o = (*o).max(v);
        }
    }
    Ok(out)
}

/// Parses manifest text without touching the filesystem.
pub fn parse_manifest(text: &str, root: &Path) -> Result<Manifest> {
    let invalid = |line: usize, msg: String| Error::Validation(format!("manifest line {line}: {msg}"));
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Validation("manifest is empty".into()))?;
    let mut fields = header.split('\t');
    if fields.next() != Some(HEADER_TAG) {
        return Err(invalid(1, format!("expected header starting with `{HEADER_TAG}`")));
    }
    let labels: Vec<String> = fields.map(str::to_string).collect();
    if labels.is_empty() {
        return Err(invalid(1, "no label names".into()));
    }
    let l = labels.len();
    let mut studies = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in lines {
        let n = i + 1;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(invalid(n, format!("expected 4 tab-separated fields, got {}", cols.len())));
        }
        let id = cols[0].to_string();
        if id.is_empty() {
            return Err(invalid(n, "empty study id".into()));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::Validation(format!("duplicate study id \"{id}\" (line {n})")));
        }
        let date = NaiveDate::parse_from_str(cols[1], "%Y-%m-%d")
            .map_err(|e| invalid(n, format!("bad date {:?}: {e}", cols[1])))?;
        let views: Vec<PathBuf> = cols[2].split(';').map(PathBuf::from).collect();
        let groups: Vec<&str> = cols[3].split(';').collect();
        if groups.len() != views.len() {
            return Err(invalid(n, format!("{} views but {} label groups", views.len(), groups.len())));
        }
        let mut view_labels = Vec::with_capacity(groups.len());
        for g in groups {
            let row = g
                .split(',')
                .map(|v| match v {
                    "0" => Ok(0u8),
                    "1" => Ok(1u8),
                    other => Err(invalid(n, format!("label value {other:?} is not 0 or 1"))),
                })
                .collect::<Result<Vec<u8>>>()?;
            if row.len() != l {
                return Err(Error::Validation(format!(
                    "study \"{id}\": label vector of length {} but {l} labels declared",
                    row.len()
                )));
            }
            view_labels.push(row);
        }
        studies.push(Study::new(id, date, views, view_labels)?);
    }
    if studies.is_empty() {
        return Err(Error::Validation("manifest has no studies".into()));
    }
    Ok(Manifest { labels, studies, root: root.to_path_buf() })
}

/// Reads and validates a manifest, including that every view file exists.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Input { path: path.to_path_buf(), msg: e.to_string() })?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let m = parse_manifest(&text, &root)?;
    let missing: Vec<String> = m
        .studies
        .iter()
        .flat_map(|s| (0..s.n_views()).map(move |k| (s, k)))
        .map(|(s, k)| m.view_path(s, k))
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!("missing view files: {}", missing.join(", "))));
    }
    Ok(m)
}
