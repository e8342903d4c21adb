//! Date-cutoff train/val/test partition at study granularity.

use chrono::NaiveDate;
use rand::seq::SliceRandom;

use super::manifest::Manifest;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Manifest,
    pub val: Manifest,
    pub test: Manifest,
    /// Non-fatal oddities, e.g. every study on one side of the cutoff.
    pub warnings: Vec<String>,
}

/// Studies dated before `cutoff` train; the rest are shuffled (seeded by the
/// manifest contents) and divided into validation and test.
pub fn split_by_study(manifest: &Manifest, cutoff: NaiveDate, val_fraction: f64) -> Result<Split> {
    if manifest.studies.is_empty() {
        return Err(Error::contract("split_by_study: empty manifest"));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::config(format!("val_fraction {val_fraction} outside (0, 1)")));
    }
    let (train, mut post): (Vec<_>, Vec<_>) =
        manifest.studies.iter().cloned().partition(|s| s.date < cutoff);
    let mut warnings = Vec::new();
    if post.is_empty() {
        warnings.push(format!("no studies on or after {cutoff}: validation and test are empty"));
    }
    if train.is_empty() {
        warnings.push(format!("no studies before {cutoff}: training split is empty"));
    }
    let seed = rng::hash_str(&manifest.to_text());
    post.shuffle(&mut rng::stream(seed, "split", 0));
    let n_val = (post.len() as f64 * val_fraction).round() as usize;
    let test = post.split_off(n_val);
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Split {
        train: manifest.with_studies(train),
        val: manifest.with_studies(post),
        test: manifest.with_studies(test),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::Study;
    use std::collections::HashSet;

    fn manifest(n: usize, views: usize) -> Manifest {
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let studies = (0..n)
            .map(|i| {
                Study::new(
                    format!("s{i:03}"),
                    start + chrono::Days::new(i as u64),
                    (0..views).map(|k| format!("v/{i}_{k}.ppm").into()).collect(),
                    vec![vec![(i % 2) as u8]; views],
                )
                .unwrap()
            })
            .collect();
        Manifest { labels: vec!["disc".into()], studies, root: ".".into() }
    }

    #[test]
    fn counting_oracle_100_studies() {
        let m = manifest(100, 4);
        let cutoff = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Days::new(60);
        let s = split_by_study(&m, cutoff, 0.5).unwrap();
        assert_eq!((s.train.studies.len(), s.val.studies.len(), s.test.studies.len()), (60, 20, 20));
        assert!(s.warnings.is_empty());
        let ids = |m: &Manifest| m.studies.iter().map(|s| s.id.clone()).collect::<HashSet<_>>();
        let (a, b, c) = (ids(&s.train), ids(&s.val), ids(&s.test));
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        assert_eq!(a.len() + b.len() + c.len(), 100);
        // whole studies move together
        for st in s.val.studies.iter().chain(&s.test.studies) {
            assert_eq!(st.n_views(), 4);
        }
        // deterministic
        let again = split_by_study(&m, cutoff, 0.5).unwrap();
        assert_eq!(ids(&again.val), b);
    }

    #[test]
    fn late_cutoff_warns() {
        let m = manifest(10, 1);
        let s = split_by_study(&m, NaiveDate::from_ymd_opt(2030, 1, 1).unwrap(), 0.5).unwrap();
        assert_eq!(s.train.studies.len(), 10);
        assert!(s.val.studies.is_empty() && s.test.studies.is_empty());
        assert_eq!(s.warnings.len(), 1);
    }
}
