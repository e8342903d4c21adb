use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;

use super::{AttnArgs, Command, EvalArgs, PredictArgs, RunConfig, SynthArgs, TrainArgs};
use crate::data::{generate_synthetic_dataset, load_manifest, split_by_study, Dataset, Manifest, Split, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate_models, export_attention_map};
use crate::kv::join_list;
use crate::par::Exec;
use crate::train::{load_checkpoint, save_checkpoint, train_staged, ModelBundle, ModelKind, ModelSpec, TrainConfig};

pub(super) fn run(command: Command) -> Result<()> {
    match command {
        Command::SynthData(a) => synth_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::AttnMap(a) => attn_map(a),
    }
}

fn synth_data(a: SynthArgs) -> Result<()> {
    let mut run = RunConfig::new("synth-data", &a.common)?;
    let seed = run.seed()?;
    let paper = run.paper()?;
    let kv = &mut run.kv;
    let mut spec = SyntheticSpec::benchmark(seed, kv.get_or("synth.n_studies", 2600)?);
    if let Some(n) = a.studies {
        spec.n_studies = n;
    }
    spec.image_size = kv.get_or("synth.image_size", if paper { 320 } else { spec.image_size })?;
    spec.min_views = kv.get_or("synth.min_views", spec.min_views)?;
    spec.max_views = kv.get_or("synth.max_views", spec.max_views)?;
    spec.shape_prob = kv.get_or("synth.shape_prob", spec.shape_prob)?;
    spec.noise = kv.get_or("synth.noise", spec.noise)?;
    spec.start_date = kv.get_or("synth.start_date", spec.start_date)?;
    spec.validate()?;
    let e = &mut run.effective;
    e.set("synth.n_studies", spec.n_studies);
    e.set("synth.image_size", spec.image_size);
    e.set("synth.min_views", spec.min_views);
    e.set("synth.max_views", spec.max_views);
    e.set("synth.shape_prob", spec.shape_prob);
    e.set("synth.noise", spec.noise);
    e.set("synth.start_date", spec.start_date);
    run.finish()?;
    generate_synthetic_dataset(&spec, &run.out)?;
    run.write_log()
}

/// `split.cutoff` (a date) wins; otherwise the cutoff is the date of the
/// study at `split.train_fraction` of the date-sorted manifest.
fn split(run: &mut RunConfig, manifest: &Manifest) -> Result<Split> {
    let val_fraction = run.kv.get_or("split.val_fraction", 0.5)?;
    let cutoff = match run.kv.get::<NaiveDate>("split.cutoff")? {
        Some(d) => d,
        None => {
            let fraction: f64 = run.kv.get_or("split.train_fraction", 0.8)?;
            if !(0.0..=1.0).contains(&fraction) {
                return Err(Error::config(format!("split.train_fraction {fraction} outside [0, 1]")));
            }
            let mut dates: Vec<NaiveDate> = manifest.studies.iter().map(|s| s.date).collect();
            dates.sort();
            let k = (dates.len() as f64 * fraction).round() as usize;
            match dates.get(k) {
                Some(&d) => d,
                None => *dates.last().ok_or_else(|| Error::Validation("manifest has no studies".into()))? + chrono::Days::new(1),
            }
        }
    };
    run.effective.set("split.cutoff", cutoff);
    run.effective.set("split.val_fraction", val_fraction);
    split_by_study(manifest, cutoff, val_fraction)
}

fn resolve_labels(csv: &str, vocabulary: &[String]) -> Result<Vec<usize>> {
    csv.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|name| {
            vocabulary
                .iter()
                .position(|l| l == name)
                .ok_or_else(|| Error::config(format!("unknown label {name:?} in --labels (known: {})", vocabulary.join(","))))
        })
        .collect()
}

fn train(a: TrainArgs) -> Result<()> {
    let mut run = RunConfig::new("train", &a.common)?;
    run.input("manifest", &a.manifest);
    let seed = run.seed()?;
    let paper = run.paper()?;
    let exec = run.exec()?;
    let manifest = load_manifest(&a.manifest)?;

    let base = if paper { ModelSpec::paper(ModelKind::StudyFormer) } else { ModelSpec::desk(ModelKind::StudyFormer) };
    let spec = base.overlay_kv(&mut run.kv)?;
    let mut cfg = TrainConfig { seed, exec, ..TrainConfig::default() }.overlay_kv(&mut run.kv)?;
    if let Some(csv) = &a.labels {
        cfg.label_subset = Some(resolve_labels(csv, &manifest.labels)?);
    }
    let parts = split(&mut run, &manifest)?;

    let mut bundle = match (&a.checkpoint, &a.init_backbone) {
        (Some(ck), _) => {
            run.input("checkpoint", ck);
            let b = load_checkpoint(ck)?;
            if b.spec.kind != spec.kind {
                log::warn!("resuming a {} checkpoint; model.kind {} ignored", b.kind(), spec.kind);
            }
            b
        }
        (None, init) => {
            let mut b = ModelBundle::init(&spec, &manifest.labels, cfg.label_subset.as_deref(), seed)?;
            if let Some(path) = init {
                run.input("init_backbone", path);
                let donor = load_checkpoint(path)?;
                b.load_backbone(&donor.backbone)?;
            }
            b
        }
    };
    if cfg.label_subset.is_none() && bundle.label_indices.len() != manifest.labels.len() {
        cfg.label_subset = Some(bundle.label_indices.clone());
    }
    bundle.spec.write_kv(&mut run.effective);
    cfg.write_kv(&mut run.effective);
    run.finish()?;

    let size = bundle.spec.backbone.input_size;
    let train_ds = Dataset::load(&parts.train, size, exec)?;
    let val_ds = Dataset::load(&parts.val, size, exec)?;
    let logs = train_staged(&mut bundle, &train_ds, Some(&val_ds), &cfg)?;
    save_checkpoint(&bundle, &run.out.join("model.ckpt"))?;

    let mut history = String::from("stage\tepoch\ttrain_loss\tval_loss\n");
    for l in &bundle.progress.history {
        let val = l.val_loss.map(|v| v.to_string()).unwrap_or_else(|| "NA".into());
        let _ = writeln!(history, "{}\t{}\t{}\t{val}", l.stage, l.epoch, l.train_loss);
    }
    std::fs::write(run.out.join("history.tsv"), history)?;
    log::info!("trained {} epochs", logs.len());
    run.write_log()
}

/// Loads checkpoints, overriding each bundle's augmentation seed when `--seed` is given.
fn load_bundles(run: &mut RunConfig, paths: &[&Path], seed_flag: bool) -> Result<Vec<(String, ModelBundle)>> {
    let seed = run.seed()?;
    let mut out: Vec<(String, ModelBundle)> = Vec::new();
    for (k, path) in paths.iter().enumerate() {
        run.input(&format!("checkpoint{k}"), path);
        let mut b = load_checkpoint(path)?;
        if seed_flag {
            b.seed = seed;
        }
        let stem = model_name(path).unwrap_or_else(|| format!("model{k}"));
        let name = if out.iter().any(|(n, _)| *n == stem) { format!("{stem}-{k}") } else { stem };
        out.push((name, b));
    }
    let size = out[0].1.spec.backbone.input_size;
    if let Some((n, b)) = out.iter().find(|(_, b)| b.spec.backbone.input_size != size) {
        return Err(Error::config(format!(
            "checkpoint {n} expects {}px inputs, others {size}px",
            b.spec.backbone.input_size
        )));
    }
    Ok(out)
}

/// Report column name: the file stem, or the directory for `train`'s default `model.ckpt`.
fn model_name(path: &Path) -> Option<String> {
    let stem = path.file_stem()?.to_string_lossy().into_owned();
    if stem != "model" {
        return Some(stem);
    }
    let parent = path.parent()?.file_name()?;
    Some(parent.to_string_lossy().into_owned())
}

fn load_dataset(run: &mut RunConfig, manifest: &Manifest, size: usize, exec: Exec) -> Result<Dataset> {
    run.finish()?;
    Dataset::load(manifest, size, exec)
}

fn eval(a: EvalArgs) -> Result<()> {
    let mut run = RunConfig::new("eval", &a.common)?;
    run.input("manifest", &a.manifest);
    let exec = run.exec()?;
    let manifest = load_manifest(&a.manifest)?;
    let paths: Vec<&Path> = a.checkpoint.iter().map(|p| p.as_path()).collect();
    let bundles = load_bundles(&mut run, &paths, a.common.seed.is_some())?;
    let which = run.kv.raw("eval.split").unwrap_or_else(|| "test".into());
    let subset = match which.as_str() {
        "all" => manifest.clone(),
        "train" | "val" | "test" => {
            let parts = split(&mut run, &manifest)?;
            match which.as_str() {
                "train" => parts.train,
                "val" => parts.val,
                _ => parts.test,
            }
        }
        other => return Err(Error::config(format!("invalid value {other:?} for key eval.split"))),
    };
    run.effective.set("eval.split", &which);
    let ds = load_dataset(&mut run, &subset, bundles[0].1.spec.backbone.input_size, exec)?;
    let seed = a.common.seed.unwrap_or(0);
    let refs: Vec<(String, &ModelBundle)> = bundles.iter().map(|(n, b)| (n.clone(), b)).collect();
    let report = evaluate_models(&refs, &ds, seed, exec)?;
    report.write(&run.out)?;
    print!("{}", report.render_table());
    run.write_log()
}

fn predict(a: PredictArgs) -> Result<()> {
    let mut run = RunConfig::new("predict", &a.common)?;
    run.input("manifest", &a.manifest);
    let exec = run.exec()?;
    let manifest = load_manifest(&a.manifest)?;
    let (_, bundle) = load_bundles(&mut run, &[a.checkpoint.as_path()], a.common.seed.is_some())?.remove(0);
    let ds = load_dataset(&mut run, &manifest, bundle.spec.backbone.input_size, exec)?;
    bundle.check_dataset(&ds)?;
    let scores = exec.map(ds.len(), |i| bundle.study_scores(&ds, i)).into_iter().collect::<Result<Vec<_>>>()?;
    let mut text = String::from("study\tlabel\tprobability\n");
    for (s, row) in ds.studies.iter().zip(&scores) {
        for (name, p) in bundle.labels.iter().zip(row) {
            let _ = writeln!(text, "{}\t{name}\t{p}", s.id);
        }
    }
    std::fs::write(run.out.join("predictions.tsv"), text)?;
    run.write_log()
}

fn attn_map(a: AttnArgs) -> Result<()> {
    let mut run = RunConfig::new("attn-map", &a.common)?;
    run.input("manifest", &a.manifest);
    let exec = run.exec()?;
    let manifest = load_manifest(&a.manifest)?;
    let (_, bundle) = load_bundles(&mut run, &[a.checkpoint.as_path()], a.common.seed.is_some())?.remove(0);
    if bundle.kind() != ModelKind::StudyFormer {
        return Err(Error::contract(format!("attention maps need a studyformer checkpoint, got {}", bundle.kind())));
    }
    let chosen = if a.study.is_empty() {
        manifest.clone()
    } else {
        let mut studies = Vec::new();
        for id in &a.study {
            let s = manifest
                .studies
                .iter()
                .find(|s| &s.id == id)
                .ok_or_else(|| Error::Validation(format!("study {id:?} not in manifest")))?;
            studies.push(s.clone());
        }
        run.effective.set("attn.studies", join_list(&a.study));
        manifest.with_studies(studies)
    };
    let ds = load_dataset(&mut run, &chosen, bundle.spec.backbone.input_size, exec)?;
    for i in 0..ds.len() {
        let e = export_attention_map(&bundle, &ds, i, &run.out)?;
        log::info!("{}: {}", ds.studies[i].id, e.heatmap_path.display());
    }
    run.write_log()
}
