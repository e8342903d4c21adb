//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Runs as a plain binary (`harness = false`) so the lines are always shown.

mod common;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use studyformer::assembly::assemble_square;
use studyformer::backbone::{init_backbone, BackboneConfig};
use studyformer::data::{aggregate_study_labels, render_study, LabelRule};
use studyformer::eval::{
    export_attention_map, init_mvcnn_head, mvcnn_forward, roc_auc, roc_curve_points, trapezoid_area, MvcnnConfig,
};
use studyformer::tensor::gradcheck::{check_gradients, random_tensor, STEP};
use studyformer::tensor::{no_grad, Conv2dSpec, Parameters, Pool, Tensor};
use studyformer::train::{
    read_checkpoint, train_staged, write_checkpoint, ModelBundle, ModelKind, TrainConfig,
};
use studyformer::vit::{init_vit, ViTConfig};

use common::benchmark::{self, Outcome, Protocol};
use common::{small_dataset, small_spec};

struct Verdict {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(name: &'static str, pass: bool, detail: String) -> Verdict {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    Verdict { name, pass, detail }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

// ---------------------------------------------------------------------------
// gradient suite

fn away_from_zero(t: Tensor) -> Tensor {
    let d = t.data().iter().map(|&v| if v.abs() < 0.1 { v.signum() * 0.1 + v } else { v }).collect();
    Tensor::new(t.shape(), d).unwrap()
}

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(101);
    let mut rt = |shape: &[usize]| random_tensor(&mut r, shape, 1.0);
    let probs = Tensor::from_fn(&[3, 4], |i| 0.1 + 0.8 * ((i * 7) % 11) as f64 / 11.0);
    let targets = Tensor::from_fn(&[3, 4], |i| ((i * 5) % 3 == 0) as u8 as f64);

    type Case = (&'static str, Vec<Tensor>, Box<dyn Fn(&[Tensor]) -> studyformer::Result<Tensor>>);
    let w = rt(&[4, 5]);
    let cases: Vec<Case> = vec![
        ("add", vec![rt(&[3, 4]), rt(&[3, 4])], Box::new(|t| Ok(t[0].add(&t[1])?.mul(&t[0])?.sum()))),
        ("sub", vec![rt(&[3, 4]), rt(&[3, 4])], Box::new(|t| Ok(t[0].sub(&t[1])?.mul(&t[1])?.sum()))),
        ("mul", vec![rt(&[3, 4]), rt(&[3, 4])], Box::new(|t| Ok(t[0].mul(&t[1])?.sum()))),
        ("scale/add_scalar", vec![rt(&[5])], Box::new(|t| t[0].scale(-1.7).add_scalar(0.3).mul(&t[0]).map(|x| x.sum()))),
        ("mean", vec![rt(&[2, 3])], Box::new(|t| Ok(t[0].mul(&t[0])?.mean()))),
        ("reshape", vec![rt(&[2, 6])], Box::new({
            let w = w.clone();
            move |t| Ok(t[0].reshape(&[3, 4])?.matmul(&w.slice_rows(0, 4)?)?.sum())
        })),
        ("matmul", vec![rt(&[3, 4]), rt(&[4, 5])], Box::new(|t| Ok(t[0].matmul(&t[1])?.gelu().sum()))),
        ("transpose", vec![rt(&[3, 4])], Box::new(|t| Ok(t[0].transpose()?.matmul(&t[0])?.sum()))),
        ("slice_cols/slice_rows", vec![rt(&[4, 6])], Box::new(|t| {
            let a = t[0].slice_cols(1, 3)?;
            Ok(a.slice_rows(1, 2)?.mul(&a.slice_rows(2, 2)?)?.sum())
        })),
        ("select0/stack0", vec![rt(&[3, 2, 2])], Box::new(|t| {
            let s = Tensor::stack0(&[t[0].select0(2)?, t[0].select0(0)?])?;
            Ok(s.mul(&s)?.sum())
        })),
        ("concat_cols/concat_rows", vec![rt(&[2, 3]), rt(&[2, 2])], Box::new(|t| {
            let c = Tensor::concat_cols(&[t[0].clone(), t[1].clone()])?;
            let r = Tensor::concat_rows(&[c.clone(), c.scale(2.0)])?;
            Ok(r.mul(&r)?.sum())
        })),
        ("add_row_bias", vec![rt(&[3, 4]), rt(&[4])], Box::new(|t| Ok(t[0].add_row_bias(&t[1])?.gelu().sum()))),
        ("relu", vec![away_from_zero(rt(&[3, 5]))], Box::new(|t| Ok(t[0].relu().mul(&t[0])?.sum()))),
        ("gelu", vec![rt(&[3, 5])], Box::new(|t| Ok(t[0].gelu().sum()))),
        ("sigmoid", vec![rt(&[3, 5])], Box::new(|t| Ok(t[0].sigmoid().mul(&t[0])?.sum()))),
        ("max_stack", vec![rt(&[2, 3, 3]), rt(&[2, 3, 3]), rt(&[2, 3, 3])], Box::new(|t| {
            Ok(Tensor::max_stack(t)?.gelu().sum())
        })),
        ("conv2d", vec![rt(&[2, 3, 6, 6]), rt(&[4, 3, 3, 3])], Box::new(|t| {
            Ok(t[0].conv2d(&t[1], Conv2dSpec { stride: 2, padding: 1 })?.gelu().sum())
        })),
        ("add_channel_bias", vec![rt(&[2, 3, 2, 2]), rt(&[3])], Box::new(|t| {
            Ok(t[0].add_channel_bias(&t[1])?.gelu().sum())
        })),
        ("pool2d max", vec![rt(&[1, 2, 4, 4])], Box::new(|t| Ok(t[0].pool2d(2, Pool::Max)?.gelu().sum()))),
        ("pool2d avg", vec![rt(&[1, 2, 4, 4])], Box::new(|t| Ok(t[0].pool2d(2, Pool::Avg)?.gelu().sum()))),
        ("global_avg_pool", vec![rt(&[2, 3, 3, 3])], Box::new(|t| Ok(t[0].global_avg_pool()?.gelu().sum()))),
        ("softmax", vec![rt(&[3, 5]), rt(&[3, 5])], Box::new(|t| Ok(t[0].softmax().mul(&t[1])?.sum()))),
        ("layer_norm", vec![rt(&[3, 6]), rt(&[6]), rt(&[6]), rt(&[3, 6])], Box::new(|t| {
            Ok(t[0].layer_norm(&t[1], &t[2], 1e-6)?.mul(&t[3])?.sum())
        })),
        ("group_norm", vec![rt(&[2, 4, 3, 3]), rt(&[4]), rt(&[4]), rt(&[2, 4, 3, 3])], Box::new(|t| {
            Ok(t[0].group_norm(2, &t[1], &t[2], 1e-5)?.mul(&t[3])?.sum())
        })),
        ("bce", vec![probs.clone()], Box::new({
            let y = targets.clone();
            move |t| t[0].bce(&y)
        })),
        ("focal", vec![probs], Box::new(move |t| t[0].focal(&targets, 0.75, 2.0))),
    ];

    let mut worst = (0.0f64, "");
    let mut failures = Vec::new();
    for (name, inputs, f) in &cases {
        let rep = check_gradients(inputs, f, STEP).expect(name);
        if rep.max_rel_err >= 1e-4 {
            failures.push(format!("{name} {:.2e}", rep.max_rel_err));
        }
        if rep.max_rel_err >= worst.0 {
            worst = (rep.max_rel_err, name);
        }
    }

    // end-to-end desk ViT: depth 2, heads 2, embed 16, W = 2, G = 4
    let cfg = ViTConfig {
        depth: 2,
        heads: 2,
        embed_dim: 16,
        mlp_dim: 32,
        in_channels: 4,
        grid_size: 4,
        n_labels: 3,
        ..ViTConfig::desk()
    };
    let vit = init_vit(&cfg, 5).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(6);
    let maps: Vec<Tensor> = (0..4).map(|_| random_tensor(&mut r, &[4, 4, 4], 1.0)).collect();
    let target = Tensor::new(&[3], vec![1.0, 0.0, 1.0]).unwrap();
    let mut inputs: Vec<Tensor> = vit.named("").into_iter().map(|(_, t)| t).collect();
    let n_params = inputs.len();
    inputs.extend(maps);
    let rep = check_gradients(
        &inputs,
        |ts| {
            let mut q = vit.clone();
            let mut it = ts[..n_params].iter();
            q.visit_mut("", &mut |_, t| *t = it.next().unwrap().clone());
            let grid = assemble_square(&ts[n_params..], 2)?;
            q.forward(&grid, false)?.0.bce(&target)
        },
        STEP,
    )
    .unwrap();
    if rep.max_rel_err >= 1e-4 {
        failures.push(format!("end-to-end vit {:.2e}", rep.max_rel_err));
    }
    if rep.max_rel_err >= worst.0 {
        worst = (rep.max_rel_err, "end-to-end vit");
    }
    let vit_checked = rep.checked;

    // backbone and view-pooling head, end to end
    let bcfg = BackboneConfig {
        input_size: 8,
        stage_channels: vec![4],
        downsample: vec![2],
        kernel_size: 3,
        norm_groups: 2,
        pool: Pool::Avg,
        out_channels: 3,
        out_grid: 4,
    };
    let backbone = init_backbone(&bcfg, 3).unwrap();
    let head = init_mvcnn_head(&MvcnnConfig { in_channels: 3, hidden: 4, n_labels: 2 }, 4).unwrap();
    let mut inputs: Vec<Tensor> = backbone.named("").into_iter().map(|(_, t)| t).collect();
    let nb = inputs.len();
    inputs.extend(head.named("").into_iter().map(|(_, t)| t));
    let nh = inputs.len();
    inputs.push(random_tensor(&mut r, &[2, 3, 8, 8], 1.0));
    let y = Tensor::new(&[2], vec![1.0, 0.0]).unwrap();
    let rep = check_gradients(
        &inputs,
        |ts| {
            let (mut b, mut h) = (backbone.clone(), head.clone());
            let mut it = ts[..nb].iter();
            b.visit_mut("", &mut |_, t| *t = it.next().unwrap().clone());
            let mut it = ts[nb..nh].iter();
            h.visit_mut("", &mut |_, t| *t = it.next().unwrap().clone());
            let f = b.extract_features(&ts[nh])?;
            let views = vec![f.select0(0)?, f.select0(1)?];
            mvcnn_forward(&views, &h)?.bce(&y)
        },
        STEP,
    )
    .unwrap();
    if rep.max_rel_err >= 1e-4 {
        failures.push(format!("backbone+mvcnn {:.2e}", rep.max_rel_err));
    }
    if rep.max_rel_err >= worst.0 {
        worst = (rep.max_rel_err, "backbone+mvcnn");
    }

    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(120);
    verdict(
        "gradient suite",
        pass,
        format!(
            "{} ops + end-to-end ViT ({vit_checked} elements) + backbone/MVCNN; worst rel err {:.2e} ({}); {}{} (limit 120s)",
            cases.len(),
            worst.0,
            worst.1,
            secs(elapsed),
            if failures.is_empty() { String::new() } else { format!("; failing: {}", failures.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------------------
// oracle suite

fn matmul_oracle(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
            }
        }
    }
    out
}

fn conv_oracle(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
    let (b, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, k) = (w.shape()[0], w.shape()[2]);
    let (ho, wo) = ((h + 2 * pad - k) / stride + 1, (wd + 2 * pad - k) / stride + 1);
    let mut out = vec![0.0; b * o * ho * wo];
    for bi in 0..b {
        for oc in 0..o {
            for y in 0..ho {
                for xx in 0..wo {
                    let mut s = 0.0;
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                s += x.data()[((bi * c + ic) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((oc * c + ic) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[((bi * o + oc) * ho + y) * wo + xx] = s;
                }
            }
        }
    }
    out
}

fn pair_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
    }
    wins / pairs
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn oracle_suite() -> Verdict {
    let start = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(202);
    let mut notes = Vec::new();
    let mut ok = true;

    let mut mm = 0.0f64;
    for &(m, k, n) in &[(1, 1, 1), (3, 7, 2), (17, 33, 9), (64, 48, 80), (5, 1, 6)] {
        let a = random_tensor(&mut r, &[m, k], 1.0);
        let b = random_tensor(&mut r, &[k, n], 1.0);
        mm = mm.max(max_abs_diff(a.matmul(&b).unwrap().data(), &matmul_oracle(&a, &b)));
    }
    ok &= mm <= 1e-10;
    notes.push(format!("matmul {mm:.1e}"));

    let mut cv = 0.0f64;
    for &(b, c, h, o, k, stride, pad) in
        &[(1, 1, 5, 1, 3, 1, 0), (2, 3, 8, 4, 3, 1, 1), (2, 3, 9, 5, 3, 2, 1), (1, 4, 7, 2, 1, 1, 0), (1, 2, 6, 3, 5, 1, 2)]
    {
        let x = random_tensor(&mut r, &[b, c, h, h], 1.0);
        let w = random_tensor(&mut r, &[o, c, k, k], 1.0);
        let got = x.conv2d(&w, Conv2dSpec { stride, padding: pad }).unwrap();
        cv = cv.max(max_abs_diff(got.data(), &conv_oracle(&x, &w, stride, pad)));
    }
    ok &= cv <= 1e-10;
    notes.push(format!("conv2d {cv:.1e}"));

    let (mut auc_err, mut trap_err) = (0.0f64, 0.0f64);
    for trial in 0..10_000 {
        let n = r.gen_range(2..80);
        let levels = if trial % 2 == 0 { 10 } else { 1_000_000 };
        let scores: Vec<f64> = (0..n).map(|_| r.gen_range(0..levels) as f64 / levels as f64).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| r.gen_range(0..2)).collect();
        labels[0] = 1;
        labels[1] = 0;
        let auc = roc_auc(&scores, &labels).unwrap();
        auc_err = auc_err.max((auc - pair_auc(&scores, &labels)).abs());
        trap_err = trap_err.max((trapezoid_area(&roc_curve_points(&scores, &labels).unwrap()) - auc).abs());
    }
    ok &= auc_err <= 1e-9 && trap_err <= 1e-9;
    notes.push(format!("roc_auc vs pairs (10000 trials) {auc_err:.1e}"));
    notes.push(format!("trapezoid vs rank {trap_err:.1e}"));

    let mut agg_ok = true;
    for _ in 0..1000 {
        let (n, l) = (r.gen_range(1..12), r.gen_range(1..45));
        let m: Vec<Vec<u8>> = (0..n).map(|_| (0..l).map(|_| r.gen_range(0..2)).collect()).collect();
        let oracle: Vec<u8> = (0..l).map(|j| m.iter().map(|row| row[j]).max().unwrap()).collect();
        agg_ok &= aggregate_study_labels(&m).unwrap() == oracle;
    }
    ok &= agg_ok;
    notes.push(format!("label aggregation {}", if agg_ok { "exact" } else { "MISMATCH" }));

    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(300);
    verdict("oracle suite", ok, format!("{}; {} (limit 300s)", notes.join(", "), secs(elapsed)))
}

// ---------------------------------------------------------------------------
// paper-scale shapes

fn shape_contracts() -> Verdict {
    let start = Instant::now();
    let spec = studyformer::train::ModelSpec::paper(ModelKind::StudyFormer);
    let mut notes = Vec::new();
    let mut ok = true;
    no_grad(|| {
        let backbone = init_backbone(&spec.backbone, 1).unwrap();
        let view = random_tensor(&mut ChaCha8Rng::seed_from_u64(3), &[1, 3, 320, 320], 1.0);
        let f = backbone.extract_features(&view).unwrap();
        ok &= f.shape() == [1, 1024, 10, 10];
        notes.push(format!("features {:?}", f.shape()));
        let map = f.select0(0).unwrap();

        let w2 = assemble_square(&vec![map.clone(); 4], 2).unwrap();
        ok &= w2.side() == 20 && w2.channels == 1024 && w2.data.numel() == 20 * 20 * 1024;
        notes.push(format!("W=2 grid {}x{}x{}", w2.side(), w2.side(), w2.channels));

        let mut vcfg = spec.vit.clone();
        vcfg.in_channels = 1024;
        vcfg.grid_size = 10;
        vcfg.n_labels = 41;
        let vit = init_vit(&vcfg, 2).unwrap();
        let w4 = assemble_square(&vec![map; 16], 4).unwrap();
        let tokens = vit.tokenize(&w4).unwrap();
        ok &= tokens.shape() == [1601, 1024];
        notes.push(format!("W=4 tokens {:?}", tokens.shape()));

        let (probs, _) = vit.forward(&w2, false).unwrap();
        let in_range = probs.data().iter().all(|p| (0.0..=1.0).contains(p));
        ok &= probs.shape() == [41] && in_range;
        notes.push(format!("W=2 forward -> {:?} probabilities", probs.shape()));
    });
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(60);
    verdict("paper-scale shape contracts", ok, format!("{}; {} (limit 60s)", notes.join(", "), secs(elapsed)))
}

// ---------------------------------------------------------------------------
// staged training

fn param_bits(p: &dyn Parameters) -> Vec<u64> {
    p.named("").iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
}

fn staged_training() -> Verdict {
    let ds = small_dataset(10, 31);
    let cfg = |s1, s2| TrainConfig { stage1_epochs: s1, stage2_epochs: s2, batch_size: 4, seed: 8, ..TrainConfig::default() };
    let mut notes = Vec::new();
    let mut ok = true;
    for kind in [ModelKind::StudyFormer, ModelKind::Mvcnn] {
        let spec = small_spec(kind);
        let mut b = ModelBundle::init(&spec, &ds.labels, None, 4).unwrap();
        let before = param_bits(&b.backbone);
        let head_before = param_bits(&b);
        train_staged(&mut b, &ds, None, &cfg(3, 0)).unwrap();
        let frozen = param_bits(&b.backbone) == before && param_bits(&b) != head_before;
        ok &= frozen;
        notes.push(format!("{kind} stage 1 backbone {}", if frozen { "unchanged" } else { "CHANGED" }));

        let mut whole = ModelBundle::init(&spec, &ds.labels, None, 4).unwrap();
        let full = train_staged(&mut whole, &ds, None, &cfg(3, 2)).unwrap();
        let mut first = ModelBundle::init(&spec, &ds.labels, None, 4).unwrap();
        let mut logs = train_staged(&mut first, &ds, None, &cfg(2, 0)).unwrap();
        let mut resumed = read_checkpoint(&write_checkpoint(&first).unwrap()).unwrap();
        logs.extend(train_staged(&mut resumed, &ds, None, &cfg(3, 2)).unwrap());
        let bits = |l: &[studyformer::train::EpochLog]| l.iter().map(|e| e.train_loss.to_bits()).collect::<Vec<_>>();
        let same = bits(&full) == bits(&logs) && param_bits(&whole) == param_bits(&resumed);
        ok &= same;
        notes.push(format!("{kind} resume {}", if same { "bitwise identical" } else { "DIVERGED" }));

        let mut again = ModelBundle::init(&spec, &ds.labels, None, 4).unwrap();
        let rerun = train_staged(&mut again, &ds, None, &cfg(3, 2)).unwrap();
        let rep = bits(&rerun) == bits(&full) && param_bits(&again) == param_bits(&whole);
        ok &= rep;
        notes.push(format!("{kind} fixed-seed rerun {}", if rep { "bitwise identical" } else { "DIFFERS" }));
    }
    verdict("staged-training contract", ok, notes.join(", "))
}

// ---------------------------------------------------------------------------
// synthetic benchmark

fn benchmark_criteria(out: &Outcome) -> Verdict {
    let r = &out.report;
    let singles: Vec<usize> = out.synth.labels.iter().enumerate().filter(|(_, l)| !l.is_conjunction()).map(|(j, _)| j).collect();
    let conj: Vec<usize> = out.synth.labels.iter().enumerate().filter(|(_, l)| l.is_conjunction()).map(|(j, _)| j).collect();
    let mut ok = true;

    let macro_auc = r.macro_auc(&singles, "studyformer").unwrap_or(f64::NAN);
    let a = macro_auc >= 0.90;
    ok &= a;
    let mut notes = vec![format!("(a) studyformer single-view-label macro-AUC {macro_auc:.3} (need >= 0.90)")];

    let mut b = true;
    for &j in &conj {
        let sf = r.auc_of(j, "studyformer").unwrap_or(f64::NAN);
        let sv = r.auc_of(j, "single-view-max").unwrap_or(f64::NAN);
        b &= sf - sv >= 0.05;
        notes.push(format!("(b) {}: studyformer {sf:.3} vs single-view-max {sv:.3}, margin {:+.3}", r.labels[j], sf - sv));
    }
    ok &= b;

    let table = r.render_table();
    let columns = r.models.len() == 4 && r.models.iter().all(|m| table.lines().next().unwrap().contains(m.as_str()));
    let in_range = r.auc.iter().flatten().flatten().all(|v| (0.0..=1.0).contains(v));
    ok &= columns && in_range;
    notes.push(format!("(c) {} columns rendered, all defined AUCs in [0,1]: {in_range}", r.models.len()));

    let budget = Duration::from_secs(45 * 60);
    ok &= out.total < budget;
    notes.push(format!("runtime {} on {} core(s) (limit 2700s)", secs(out.total), std::thread::available_parallelism().map_or(1, |n| n.get())));
    verdict("synthetic benchmark", ok, notes.join("; "))
}

fn label_subset(out: &Outcome) -> Verdict {
    let r = &out.report;
    let col = r.models.iter().position(|m| m == "studyformer-subset");
    let (ok, detail) = match col {
        None => (false, "no label-subset column".to_string()),
        Some(m) => {
            let defined: Vec<String> = r
                .labels
                .iter()
                .enumerate()
                .filter_map(|(j, l)| r.auc[j][m].map(|a| format!("{l} {a:.3}")))
                .collect();
            let expected = benchmark::SUBSET.len();
            let absent = r.labels.len() - defined.len();
            (
                defined.len() == expected && absent == r.labels.len() - expected,
                format!("trained and evaluated on {expected} labels: {}; other {absent} labels absent", defined.join(", ")),
            )
        }
    };
    verdict("label-subset mode", ok, detail)
}

/// Splits a binary PNM into header tokens and raster.
fn pnm(bytes: &[u8]) -> Option<(Vec<String>, &[u8])> {
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while bytes.get(i)?.is_ascii_whitespace() {
            i += 1;
        }
        let s = i;
        while !bytes.get(i)?.is_ascii_whitespace() {
            i += 1;
        }
        fields.push(String::from_utf8_lossy(&bytes[s..i]).into_owned());
    }
    Some((fields, bytes.get(i + 1..)?))
}

fn attention_check(out: &Outcome) -> Verdict {
    let (_, bundle) = out.models.iter().find(|(n, _)| n == "studyformer").expect("studyformer trained");
    let dir = tempfile::tempdir().unwrap();
    let g = bundle.spec.backbone.out_grid;
    let (mut rel_sum, mut irr_sum, mut wins, mut used) = (0.0, 0.0, 0, 0);
    let mut malformed = 0;
    for (i, s) in out.test.studies.iter().enumerate() {
        if used == 40 {
            break;
        }
        let index: usize = s.id[1..].parse().unwrap();
        let st = render_study(&out.synth, index).unwrap();
        let e = export_attention_map(bundle, &out.test, i, dir.path()).unwrap();
        let view_of_tile: Vec<usize> = e.provenance.iter().map(|p| p.source_view).collect();
        // first single-shape label this study is positive for that leaves some tile shape-free
        let chosen = out.synth.labels.iter().enumerate().find_map(|(j, rule)| match *rule {
            LabelRule::Single(shape) if s.targets[j] == 1.0 => {
                let rel: Vec<usize> = (0..view_of_tile.len()).filter(|&k| st.shapes[view_of_tile[k]].contains(&shape)).collect();
                let irr: Vec<usize> = (0..view_of_tile.len()).filter(|&k| st.shapes[view_of_tile[k]].is_empty()).collect();
                (!rel.is_empty() && !irr.is_empty()).then_some((rel, irr))
            }
            _ => None,
        });
        let Some((rel, irr)) = chosen else { continue };
        let mean = |ks: &[usize]| ks.iter().map(|&k| e.tile_means[k]).sum::<f64>() / ks.len() as f64;
        let (a, b) = (mean(&rel), mean(&irr));
        rel_sum += a;
        irr_sum += b;
        wins += (a > b) as usize;
        used += 1;

        let bytes = std::fs::read(&e.heatmap_path).unwrap();
        let side = e.width * g;
        let well_formed = match pnm(&bytes) {
            Some((f, body)) => {
                f == ["P5".to_string(), side.to_string(), side.to_string(), "255".to_string()]
                    && body.len() == side * side
                    && body.iter().min() == Some(&0)
                    && body.iter().max() == Some(&255)
            }
            None => false,
        };
        malformed += (!well_formed) as usize;
    }
    let (rel, irr) = (rel_sum / used.max(1) as f64, irr_sum / used.max(1) as f64);
    let ok = used >= 20 && rel > irr && malformed == 0;
    verdict(
        "attention-map check",
        ok,
        format!(
            "{used} positive test studies: mean attention relevant tiles {rel:.3} vs shape-free tiles {irr:.3} (relevant higher in {wins}/{used}); {malformed} malformed P5 heatmaps"
        ),
    )
}

fn main() {
    let mut verdicts = vec![gradient_suite(), oracle_suite(), shape_contracts(), staged_training()];

    let dir = tempfile::tempdir().unwrap();
    let out = benchmark::run(&Protocol::default(), dir.path());
    println!("{}", out.report.render_table());
    for (name, d) in &out.timings {
        println!("  {name}: {}", secs(*d));
    }
    verdicts.push(benchmark_criteria(&out));
    verdicts.push(attention_check(&out));
    verdicts.push(label_subset(&out));

    let failed: Vec<&Verdict> = verdicts.iter().filter(|v| !v.pass).collect();
    println!("acceptance: {}/{} criteria passed", verdicts.len() - failed.len(), verdicts.len());
    if !failed.is_empty() {
        for v in &failed {
            eprintln!("failed: {} ({})", v.name, v.detail);
        }
        std::process::exit(1);
    }
}
