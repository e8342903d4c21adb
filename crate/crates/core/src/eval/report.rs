//! Table-1-style model comparison.

use std::fmt::Write as _;
use std::path::Path;

use super::metrics::{roc_auc, roc_curve_points};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::train::ModelBundle;

/// Study-level scores of one model on one dataset.
#[derive(Debug, Clone)]
pub struct ModelScores {
    pub model: String,
    /// Dataset label index of each score column.
    pub label_indices: Vec<usize>,
    /// `[study][column]`.
    pub scores: Vec<Vec<f64>>,
}

pub fn score_model(name: &str, bundle: &ModelBundle, ds: &Dataset, exec: Exec) -> Result<ModelScores> {
    bundle.check_dataset(ds)?;
    let scores = exec.map(ds.len(), |i| bundle.study_scores(ds, i)).into_iter().collect::<Result<_>>()?;
    Ok(ModelScores { model: name.to_string(), label_indices: bundle.label_indices.clone(), scores })
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub labels: Vec<String>,
    pub models: Vec<String>,
    /// `[label][model]`; `None` when undefined or the model does not emit the label.
    pub auc: Vec<Vec<Option<f64>>>,
    pub curves: Vec<Vec<Option<Vec<(f64, f64)>>>>,
    pub study_ids: Vec<String>,
    pub raw: Vec<ModelScores>,
    pub seed: u64,
}

/// Scores every model on `ds` and computes per-label AUCs and curves.
pub fn evaluate_models(models: &[(String, &ModelBundle)], ds: &Dataset, seed: u64, exec: Exec) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::contract("evaluate_models: empty dataset"));
    }
    let raw = models
        .iter()
        .map(|(name, b)| score_model(name, b, ds, exec))
        .collect::<Result<Vec<_>>>()?;
    let l = ds.n_labels();
    let mut auc = vec![vec![None; raw.len()]; l];
    let mut curves = vec![vec![None; raw.len()]; l];
    for (m, ms) in raw.iter().enumerate() {
        for (col, &j) in ms.label_indices.iter().enumerate() {
            let scores: Vec<f64> = ms.scores.iter().map(|s| s[col]).collect();
            let labels: Vec<u8> = ds.studies.iter().map(|s| s.targets[j] as u8).collect();
            match roc_auc(&scores, &labels) {
                Ok(a) => {
                    auc[j][m] = Some(a);
                    curves[j][m] = Some(roc_curve_points(&scores, &labels)?);
                }
                Err(Error::UndefinedMetric(msg)) => log::warn!("label {}: {msg}", ds.labels[j]),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(EvalReport {
        labels: ds.labels.clone(),
        models: raw.iter().map(|r| r.model.clone()).collect(),
        auc,
        curves,
        study_ids: ds.studies.iter().map(|s| s.id.clone()).collect(),
        raw,
        seed,
    })
}

impl EvalReport {
    pub fn auc_of(&self, label: usize, model: &str) -> Option<f64> {
        let m = self.models.iter().position(|n| n == model)?;
        self.auc[label][m]
    }

    /// Mean AUC over `labels`, skipping absent entries.
    pub fn macro_auc(&self, labels: &[usize], model: &str) -> Option<f64> {
        let vals: Vec<f64> = labels.iter().filter_map(|&j| self.auc_of(j, model)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Aligned text table; the best AUC per label carries a `*`, absent
    /// entries show `—`.
    pub fn render_table(&self) -> String {
        let lw = self.labels.iter().map(|l| l.chars().count()).max().unwrap_or(5).max(5);
        let cw: Vec<usize> = self.models.iter().map(|m| m.chars().count().max(7)).collect();
        let mut s = format!("{:<lw$}", "label");
        for (m, w) in self.models.iter().zip(&cw) {
            let _ = write!(s, "  {m:>w$}");
        }
        s.push('\n');
        for (j, label) in self.labels.iter().enumerate() {
            let best = self.auc[j].iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
            let _ = write!(s, "{label:<lw$}");
            for (a, w) in self.auc[j].iter().zip(&cw) {
                let cell = match a {
                    Some(v) if *v == best => format!("{v:.3}*"),
                    Some(v) => format!("{v:.3} "),
                    None => "— ".to_string(),
                };
                let _ = write!(s, "  {cell:>w$}", w = w + 1);
            }
            s.push('\n');
        }
        s
    }

    /// `label<TAB>model<TAB>auc` lines; absent values are written as `NA`.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("label\tmodel\tauc\n");
        for (j, label) in self.labels.iter().enumerate() {
            for (m, model) in self.models.iter().enumerate() {
                match self.auc[j][m] {
                    Some(v) => {
                        let _ = writeln!(s, "{label}\t{model}\t{v}");
                    }
                    None => {
                        let _ = writeln!(s, "{label}\t{model}\tNA");
                    }
                }
            }
        }
        s
    }

    /// `study<TAB>model<TAB>label<TAB>score` lines.
    pub fn scores_tsv(&self) -> String {
        let mut s = String::from("study\tmodel\tlabel\tscore\n");
        for ms in &self.raw {
            for (i, row) in ms.scores.iter().enumerate() {
                for (col, &j) in ms.label_indices.iter().enumerate() {
                    let _ = writeln!(s, "{}\t{}\t{}\t{}", self.study_ids[i], ms.model, self.labels[j], row[col]);
                }
            }
        }
        s
    }

    /// Writes `report.txt`, `report.tsv`, `scores.tsv` and `roc/<model>/<label>.tsv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.txt"), self.render_table())?;
        std::fs::write(dir.join("report.tsv"), self.to_tsv())?;
        std::fs::write(dir.join("scores.tsv"), self.scores_tsv())?;
        for (m, model) in self.models.iter().enumerate() {
            let mdir = dir.join("roc").join(sanitize(model));
            std::fs::create_dir_all(&mdir)?;
            for (j, label) in self.labels.iter().enumerate() {
                if let Some(pts) = &self.curves[j][m] {
                    let body: String = pts.iter().map(|(f, t)| format!("{f}\t{t}\n")).collect();
                    std::fs::write(mdir.join(format!("{}.tsv", sanitize(label))), format!("fpr\ttpr\n{body}"))?;
                }
            }
        }
        Ok(())
    }
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::ModelKind;

    #[test]
    fn report_columns_and_recomputation() {
        let (ds, spec) = crate::train::tests_support::tiny(12, 3);
        let mut bundles = Vec::new();
        for kind in [ModelKind::SingleView, ModelKind::Mvcnn, ModelKind::StudyFormer] {
            let mut s = spec.clone();
            s.kind = kind;
            bundles.push((kind.name().to_string(), crate::train::ModelBundle::init(&s, &ds.labels, None, 2).unwrap()));
        }
        let mut subset = spec.clone();
        subset.kind = ModelKind::StudyFormer;
        let sub = crate::train::ModelBundle::init(&subset, &ds.labels, Some(&[0, 1, 2]), 2).unwrap();
        let mut refs: Vec<(String, &ModelBundle)> = bundles.iter().map(|(n, b)| (n.clone(), b)).collect();
        refs.push(("studyformer-subset".into(), &sub));
        let r = evaluate_models(&refs, &ds, 0, Exec::Parallel).unwrap();
        assert_eq!(r.models.len(), 4);
        let table = r.render_table();
        for m in &r.models {
            assert!(table.contains(m.as_str()));
        }
        assert!(table.contains('—'));
        for j in 0..ds.n_labels() {
            for (m, ms) in r.raw.iter().enumerate() {
                let Some(col) = ms.label_indices.iter().position(|&x| x == j) else {
                    assert!(r.auc[j][m].is_none());
                    continue;
                };
                let scores: Vec<f64> = ms.scores.iter().map(|s| s[col]).collect();
                let labels: Vec<u8> = ds.studies.iter().map(|s| s.targets[j] as u8).collect();
                assert_eq!(r.auc[j][m], roc_auc(&scores, &labels).ok());
                if let Some(a) = r.auc[j][m] {
                    assert!((0.0..=1.0).contains(&a));
                }
            }
        }
        let dir = tempfile::tempdir().unwrap();
        r.write(dir.path()).unwrap();
        let tsv = std::fs::read_to_string(dir.path().join("report.tsv")).unwrap();
        assert_eq!(tsv.lines().count(), 1 + 8 * 4);
    }
}
