//! The desk-scale synthetic benchmark: generate, split, train the three
//! model families plus a label-subset StudyFormer, evaluate on the test split.

use std::path::Path;
use std::time::{Duration, Instant};

use studyformer::data::{generate_synthetic_dataset, split_by_study, Dataset, Split, SyntheticSpec};
use studyformer::eval::{evaluate_models, EvalReport};
use studyformer::par::Exec;
use studyformer::train::{train_staged, ModelBundle, ModelKind, ModelSpec, TrainConfig};

pub const N_TRAIN: usize = 2000;
pub const N_HELD_OUT: usize = 600;
/// Labels of the label-subset model.
pub const SUBSET: [&str; 3] = ["disc", "ring", "disc+square"];

#[derive(Debug, Clone)]
pub struct Protocol {
    pub seed: u64,
    pub n_train: usize,
    pub n_held_out: usize,
    /// Single-view CNN epochs; its backbone seeds the other models.
    pub pretrain_epochs: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub batch_size: usize,
    pub lr_pretrain: f64,
    pub lr_stage1: f64,
    pub lr_stage2: f64,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            seed: 11,
            n_train: N_TRAIN,
            n_held_out: N_HELD_OUT,
            pretrain_epochs: 3,
            stage1_epochs: 8,
            stage2_epochs: 1,
            batch_size: 16,
            lr_pretrain: 2e-3,
            lr_stage1: 1e-3,
            lr_stage2: 2e-4,
        }
    }
}

pub struct Outcome {
    pub synth: SyntheticSpec,
    pub split: Split,
    pub test: Dataset,
    pub models: Vec<(String, ModelBundle)>,
    pub report: EvalReport,
    pub timings: Vec<(String, Duration)>,
    pub total: Duration,
}

fn log(msg: &str) {
    eprintln!("[benchmark] {msg}");
}

pub fn run(p: &Protocol, dir: &Path) -> Outcome {
    let start = Instant::now();
    let mut timings = Vec::new();
    let mut lap = Instant::now();
    let mut mark = |name: &str, timings: &mut Vec<(String, Duration)>| {
        let d = lap.elapsed();
        log(&format!("{name}: {:.1}s", d.as_secs_f64()));
        timings.push((name.to_string(), d));
        lap = Instant::now();
    };

    let synth = SyntheticSpec::benchmark(p.seed, p.n_train + p.n_held_out);
    let manifest = generate_synthetic_dataset(&synth, dir).expect("generate benchmark");
    let split = split_by_study(&manifest, synth.date_of(p.n_train), 0.5).expect("split");
    let exec = Exec::Parallel;
    let size = synth.image_size;
    let train = Dataset::load(&split.train, size, exec).unwrap();
    let val = Dataset::load(&split.val, size, exec).unwrap();
    let test = Dataset::load(&split.test, size, exec).unwrap();
    mark("generate+load", &mut timings);
    log(&format!("train {} / val {} / test {}", train.len(), val.len(), test.len()));

    let cfg = |stage1, stage2, lr1, subset: Option<Vec<usize>>| TrainConfig {
        stage1_epochs: stage1,
        stage2_epochs: stage2,
        batch_size: p.batch_size,
        lr_stage1: lr1,
        lr_stage2: p.lr_stage2,
        seed: p.seed,
        label_subset: subset,
        exec,
        ..TrainConfig::default()
    };
    let report_losses = |name: &str, b: &ModelBundle| {
        for l in &b.progress.history {
            log(&format!(
                "{name} stage {} epoch {}: train {:.4} val {:.4}",
                l.stage,
                l.epoch,
                l.train_loss,
                l.val_loss.unwrap_or(f64::NAN)
            ));
        }
    };

    let mut single = ModelBundle::init(&ModelSpec::desk(ModelKind::SingleView), &train.labels, None, p.seed).unwrap();
    train_staged(&mut single, &train, Some(&val), &cfg(p.pretrain_epochs, 0, p.lr_pretrain, None)).unwrap();
    report_losses("single-view", &single);
    mark("single-view", &mut timings);

    let mut trained = |kind: ModelKind, subset: Option<Vec<usize>>, timings: &mut Vec<(String, Duration)>| {
        let mut b = ModelBundle::init(&ModelSpec::desk(kind), &train.labels, subset.as_deref(), p.seed).unwrap();
        b.load_backbone(&single.backbone).unwrap();
        train_staged(&mut b, &train, Some(&val), &cfg(p.stage1_epochs, p.stage2_epochs, p.lr_stage1, subset)).unwrap();
        let name = format!("{kind}{}", if b.n_labels() < train.n_labels() { "-subset" } else { "" });
        report_losses(&name, &b);
        mark(&name, timings);
        (name, b)
    };
    let studyformer = trained(ModelKind::StudyFormer, None, &mut timings);
    let mvcnn = trained(ModelKind::Mvcnn, None, &mut timings);
    let subset: Vec<usize> = SUBSET.iter().map(|n| train.labels.iter().position(|l| l == n).unwrap()).collect();
    let sub = trained(ModelKind::StudyFormer, Some(subset), &mut timings);

    let models = vec![("single-view-max".to_string(), single), mvcnn, studyformer, sub];
    let refs: Vec<(String, &ModelBundle)> = models.iter().map(|(n, b)| (n.clone(), b)).collect();
    let report = evaluate_models(&refs, &test, p.seed, exec).unwrap();
    mark("evaluate", &mut timings);
    Outcome { synth, split, test, models, report, timings, total: start.elapsed() }
}
