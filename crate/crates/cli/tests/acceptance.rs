//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Pass criterion numbers to run a subset:
//! `cargo test -p hfn-cli --test acceptance -- 1 4 9`.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hfn::cohort::{
    build_cohort, build_samples, generate_phantom_cohort, preprocess, read_clinical_csv, split_by_patient,
    CohortManifest, Diagnosis, Label, Modality, MriMode, PetGrid, PhantomConfig, PreprocessConfig, Split,
    SubjectRecord, Task, Texture,
};
use hfn::models::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, ArchId, BuildOptions, CheckpointMeta, Model,
};
use hfn::nn::{
    conv3d_forward, dropout_mask, grad_check, grad_check_loss, maxpool3d_forward, one_hot, BatchNormLayer, Conv3dLayer,
    DenseLayer, DropoutLayer, LayerKind, MaxPool3dLayer, ParamStore, ReluLayer, Tensor,
};
use hfn::train::{
    adam_step, evaluate, roc_auc, select_best_checkpoint, train, train_model, train_step, Adam, AdamConfig, AdamState,
    CheckpointScore, Dataset, Score, TrainConfig, TrainOutcome,
};
use hfn::volume::{compose, diagonal_affine, read_volume, translation, write_volume, Volume};

/// Failures collected while a criterion runs, plus the measured values.
#[derive(Default)]
struct Check {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Check {
    fn ensure(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }
}

type Criterion = fn(&mut Check, &Path);

fn main() {
    let wanted: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, Criterion); 10] = [
        (1, "gradient correctness", c1_gradients),
        (2, "oracle equivalence", c2_oracles),
        (3, "ADAM trajectory", c3_adam),
        (4, "architecture fidelity", c4_architecture),
        (5, "protocol fidelity", c5_protocol),
        (6, "cohort logic", c6_cohort),
        (7, "end-to-end learnability", c7_learnability),
        (8, "degraded-information ordering", c8_ordering),
        (9, "serialization", c9_serialization),
        (10, "CLI protocol reproduction", c10_cli),
    ];
    let mut failed = Vec::new();
    let mut lines = Vec::new();
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let dir = tempfile::tempdir().expect("tempdir");
        let mut check = Check::default();
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| run(&mut check, dir.path())));
        if let Err(e) = outcome {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            check.failures.push(format!("panicked: {msg}"));
        }
        let status = if check.failures.is_empty() { "PASS" } else { "FAIL" };
        let mut line = format!("criterion {id:>2} {status} {name} [{:.1}s]", t.elapsed().as_secs_f64());
        if !check.notes.is_empty() {
            line += &format!(" :: {}", check.notes.join("; "));
        }
        if !check.failures.is_empty() {
            line += &format!(" :: FAILED: {}", check.failures.join("; "));
            failed.push(id);
        }
        println!("{line}");
        lines.push(line);
    }
    println!("\nacceptance summary");
    for l in &lines {
        println!("  {}", l.split(" :: ").next().unwrap_or(l));
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- 1

fn c1_gradients(c: &mut Check, _: &Path) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let run = |c: &mut Check, what: &str, rep: hfn::nn::GradCheckReport| {
        c.note(format!("{what} {:.1e}", rep.max_rel_error));
        c.ensure(
            rep.passed,
            format!("{what} error {:.3e} >= {:.0e}", rep.max_rel_error, rep.tolerance),
        );
    };

    let mut s = ParamStore::<f64>::new();
    let k = s
        .add_param("k", Tensor::randn(&[4, 3, 3, 3, 3], 0.3, &mut rng))
        .unwrap();
    let b = s.add_param("b", Tensor::randn(&[4], 0.3, &mut rng)).unwrap();
    let x = Tensor::randn(&[2, 3, 5, 5, 4], 1.0, &mut rng);
    run(
        c,
        "conv3d",
        grad_check(&mut Conv3dLayer::new(k, b), &mut s, &x, 1e-4, 1).unwrap(),
    );

    let mut s = ParamStore::<f64>::new();
    let x = Tensor::randn(&[2, 2, 5, 4, 3], 1.0, &mut rng);
    run(
        c,
        "maxpool3d",
        grad_check(&mut MaxPool3dLayer::new(), &mut s, &x, 1e-6, 2).unwrap(),
    );

    let mut s = ParamStore::<f64>::new();
    let mut bn = BatchNormLayer::register(&mut s, "bn", 3).unwrap();
    *s.value_mut(bn.gamma) = Tensor::uniform(&[3], 0.5, 2.0, &mut rng);
    *s.value_mut(bn.beta) = Tensor::randn(&[3], 1.0, &mut rng);
    let x = Tensor::randn(&[4, 3, 2, 2, 2], 2.0, &mut rng);
    run(c, "batchnorm", grad_check(&mut bn, &mut s, &x, 1e-6, 3).unwrap());

    // ReLU is checked away from its kink.
    let mut s = ParamStore::<f64>::new();
    let mags = Tensor::<f64>::uniform(&[3, 20], 0.1, 1.0, &mut rng);
    let signs: Vec<bool> = (0..mags.len()).map(|_| rng.random_bool(0.5)).collect();
    let x = Tensor::from_vec(
        mags.shape(),
        mags.data()
            .iter()
            .zip(&signs)
            .map(|(&v, &s)| if s { v } else { -v })
            .collect(),
    )
    .unwrap();
    run(
        c,
        "relu",
        grad_check(&mut ReluLayer::new(), &mut s, &x, 1e-6, 4).unwrap(),
    );

    let mut s = ParamStore::<f64>::new();
    let mut drop = DropoutLayer::<f64>::new(0.5).unwrap();
    drop.freeze_mask(dropout_mask(&[4, 10], 0.5, &mut rng).unwrap());
    let x = Tensor::randn(&[4, 10], 1.0, &mut rng);
    run(c, "dropout", grad_check(&mut drop, &mut s, &x, 1e-6, 5).unwrap());

    let mut s = ParamStore::<f64>::new();
    let w = s.add_param("w", Tensor::randn(&[3, 5], 1.0, &mut rng)).unwrap();
    let b = s.add_param("b", Tensor::randn(&[3], 1.0, &mut rng)).unwrap();
    let x = Tensor::randn(&[2, 5], 1.0, &mut rng);
    run(
        c,
        "dense",
        grad_check(&mut DenseLayer::new(w, b), &mut s, &x, 1e-6, 6).unwrap(),
    );

    let logits = Tensor::randn(&[6, 2], 2.0, &mut rng);
    let labels = one_hot(&[0, 1, 1, 0, 1, 0], 2).unwrap();
    run(c, "softmax-CE", grad_check_loss(&logits, &labels, 1e-6).unwrap());

    let el = t.elapsed();
    c.ensure(el < Duration::from_secs(60), format!("took {el:?}"));
}

// ---------------------------------------------------------------- 2

fn conv_oracle(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let [n, ci, d, h, w] = <[usize; 5]>::try_from(x.shape()).unwrap();
    let co = k.shape()[0];
    let xi = |a: usize, c: usize, z: i64, y: i64, xx: i64| -> f64 {
        if z < 0 || y < 0 || xx < 0 || z >= d as i64 || y >= h as i64 || xx >= w as i64 {
            0.0
        } else {
            x.data()[(((a * ci + c) * d + z as usize) * h + y as usize) * w + xx as usize]
        }
    };
    let mut out = Vec::with_capacity(n * co * d * h * w);
    for a in 0..n {
        for o in 0..co {
            for z in 0..d {
                for y in 0..h {
                    for xx in 0..w {
                        let mut acc = b.data()[o];
                        for c in 0..ci {
                            for dz in 0..3 {
                                for dy in 0..3 {
                                    for dx in 0..3 {
                                        let kv = k.data()[(((o * ci + c) * 3 + dz) * 3 + dy) * 3 + dx];
                                        acc += kv
                                            * xi(
                                                a,
                                                c,
                                                z as i64 + dz as i64 - 1,
                                                y as i64 + dy as i64 - 1,
                                                xx as i64 + dx as i64 - 1,
                                            );
                                    }
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
    }
    out
}

fn pool_oracle(x: &Tensor<f32>) -> Vec<f32> {
    let [n, c, d, h, w] = <[usize; 5]>::try_from(x.shape()).unwrap();
    let (od, oh, ow) = (d.div_ceil(2), h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::new();
    for a in 0..n * c {
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut m = f32::NEG_INFINITY;
                    for zz in 2 * z..(2 * z + 2).min(d) {
                        for yy in 2 * y..(2 * y + 2).min(h) {
                            for x3 in 2 * xx..(2 * xx + 2).min(w) {
                                m = m.max(x.data()[((a * d + zz) * h + yy) * w + x3]);
                            }
                        }
                    }
                    out.push(m);
                }
            }
        }
    }
    out
}

fn mann_whitney(s: &[Score]) -> f64 {
    let pos: Vec<f64> = s.iter().filter(|v| v.1).map(|v| v.0).collect();
    let neg: Vec<f64> = s.iter().filter(|v| !v.1).map(|v| v.0).collect();
    let mut u = 0.0;
    for p in &pos {
        for q in &neg {
            u += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    u / (pos.len() * neg.len()) as f64
}

fn c2_oracles(c: &mut Check, _: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut conv_err, mut pool_bad) = (0.0f64, 0);
    for _ in 0..24 {
        let shape = [
            rng.random_range(1..3),
            rng.random_range(1..4),
            rng.random_range(1..7),
            rng.random_range(1..7),
            rng.random_range(1..7),
        ];
        let co = rng.random_range(1..5);
        let x = Tensor::<f64>::randn(&shape, 1.0, &mut rng);
        let k = Tensor::<f64>::randn(&[co, shape[1], 3, 3, 3], 0.4, &mut rng);
        let b = Tensor::<f64>::randn(&[co], 0.4, &mut rng);
        let got = conv3d_forward(&x.cast::<f32>(), &k.cast(), &b.cast()).unwrap();
        let want = conv_oracle(
            &x.cast::<f32>().cast(),
            &k.cast::<f32>().cast(),
            &b.cast::<f32>().cast(),
        );
        for (g, w) in got.data().iter().zip(&want) {
            conv_err = conv_err.max((*g as f64 - w).abs());
        }
        let xp = x.cast::<f32>();
        let (y, _) = maxpool3d_forward(&xp).unwrap();
        if y.data() != pool_oracle(&xp).as_slice() {
            pool_bad += 1;
        }
    }
    c.note(format!(
        "conv max |diff| {conv_err:.2e} over 24 shapes, pool mismatches {pool_bad}"
    ));
    c.ensure(conv_err < 1e-5, format!("conv differs by {conv_err:.3e}"));
    c.ensure(pool_bad == 0, format!("{pool_bad} pool shapes differ"));

    let mut auc_err = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..80);
        let levels = rng.random_range(2..15);
        let mut s: Vec<Score> = (0..n)
            .map(|_| (rng.random_range(0..levels) as f64 / levels as f64, rng.random_bool(0.5)))
            .collect();
        s[0].1 = true;
        s[1].1 = false;
        auc_err = auc_err.max((roc_auc(&s).unwrap().auc - mann_whitney(&s)).abs());
    }
    c.note(format!(
        "AUC vs Mann-Whitney max |diff| {auc_err:.1e} over 100 tied sets"
    ));
    c.ensure(auc_err < 1e-12, format!("AUC differs by {auc_err:.3e}"));
}

// ---------------------------------------------------------------- 3

fn c3_adam(c: &mut Check, _: &Path) {
    let cfg = AdamConfig {
        lr: 1e-3,
        ..AdamConfig::default()
    };
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    let mut theta = [2.0f64];
    let mut state = AdamState::<f64>::new(1);
    let (mut x, mut m, mut v) = (2.0f64, 0.0f64, 0.0f64);
    let mut worst = 0.0f64;
    let mut first = 0.0;
    for t in 1..=10 {
        let before = theta[0];
        let g = [2.0 * theta[0]];
        adam_step(&mut theta, &g, &mut state, &cfg).unwrap();
        if t == 1 {
            first = (theta[0] - before).abs();
        }
        let g = 2.0 * x;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        x -= cfg.lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        worst = worst.max((theta[0] - x).abs());
    }
    c.note(format!("10-step max |diff| {worst:.1e}, first step {first:.10e}"));
    c.ensure(worst < 1e-12, format!("trajectory differs by {worst:.3e}"));
    c.ensure(
        (first - cfg.lr).abs() < 1e-8 * cfg.lr,
        format!("first step {first} is not lr"),
    );
}

// ---------------------------------------------------------------- 4

fn c4_architecture(c: &mut Check, _: &Path) {
    let big = [96, 96, 48];
    let single = Model::build(ArchId::Single, 1.0, big, BuildOptions::default()).unwrap();
    let counts = [LayerKind::Conv3d, LayerKind::MaxPool3d, LayerKind::Dense].map(|k| single.count_layers(k));
    c.note(format!("single conv/pool/fc {counts:?}"));
    c.ensure(counts == [8, 5, 3], format!("layer counts {counts:?}"));
    let pre = single.pre_flatten_shape();
    c.note(format!("pre-flatten [C,z,y,x] {pre:?}"));
    c.ensure(pre[1..] == [2, 3, 3], format!("pre-flatten grid {pre:?}"));

    let a = Model::build(ArchId::FusionA, 1.0, big, BuildOptions::default()).unwrap();
    c.ensure(a.input().channels == 2, "fusion A is not 2-channel");
    let first = &a.store().value(a.store().id("body.conv1.kernel").unwrap()).shape()[1];
    c.ensure(*first == 2, format!("fusion A first kernel takes {first} channels"));

    let b1 = Model::build(ArchId::FusionB1, 1.0, big, BuildOptions::default()).unwrap();
    let b2 = Model::build(ArchId::FusionB2, 1.0, big, BuildOptions::default()).unwrap();
    let (p1, p2) = (b1.count_params(), b2.count_params());
    c.note(format!(
        "conv params B1 {} B2 {}, fc {} / {}",
        p1.conv, p2.conv, p1.fc, p2.fc
    ));
    c.ensure(p2.conv == 2 * p1.conv, "B2 conv count is not twice B1's");
    c.ensure(p1.fc == p2.fc, "B1 and B2 FC counts differ");

    let grid = [8, 8, 4];
    let mut m = Model::build(ArchId::FusionB1, 0.25, grid, BuildOptions::default()).unwrap();
    let init: Vec<Vec<f32>> = kernel_values(&m);
    let mut adam = Adam::new(AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let x = Tensor::randn(&[4, 2, 4, 8, 8], 1.0, &mut rng);
        train_step(&mut m, &mut adam, &x, &[0, 1, 1, 0], &mut rng).unwrap();
    }
    // Each branch's conv layer reads the kernel stored under `shared.`; the
    // branches cannot drift because there is only one copy per layer.
    let names: Vec<String> = m
        .store()
        .iter()
        .map(|(_, p)| p.name.clone())
        .filter(|n| n.ends_with(".kernel"))
        .collect();
    c.ensure(
        names.len() == 8 && names.iter().all(|n| n.starts_with("shared.")),
        format!("B1 kernels {names:?}"),
    );
    let moved = kernel_values(&m).iter().zip(&init).filter(|(a, b)| a != b).count();
    c.ensure(moved == 8, format!("only {moved} shared kernels trained"));
    c.note("B1 shared kernels bit-identical after 5 ADAM steps");
}

fn kernel_values(m: &Model) -> Vec<Vec<f32>> {
    m.store()
        .iter()
        .filter(|(_, p)| p.name.ends_with(".kernel"))
        .map(|(_, p)| p.value.data().to_vec())
        .collect()
}

// ---------------------------------------------------------------- 5

fn toy(channels: usize, n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = [8, 8, 4];
    let plane = 8 * 8 * 4 * channels;
    let classes: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let data = classes
        .iter()
        .map(|&k| (0..plane).map(|_| rng.random::<f32>() + 0.5 * k as f32).collect())
        .collect();
    Dataset::from_parts(grid, channels, data, classes).unwrap()
}

fn c5_protocol(c: &mut Check, dir: &Path) {
    let d = TrainConfig::default();
    let fusion = TrainConfig {
        arch: ArchId::FusionB2,
        ..d.clone()
    };
    c.note(format!(
        "defaults epochs {} batch {}/{} interval {}",
        d.epochs,
        d.batch_size(),
        fusion.batch_size(),
        d.checkpoint_interval
    ));
    c.ensure(
        d.epochs == 150 && d.batch_size() == 16 && fusion.batch_size() == 8,
        "default schedule",
    );

    let cfg = TrainConfig {
        epochs: 30,
        width: 0.25,
        batch_size: Some(4),
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    let mut m = Model::build(ArchId::Single, 0.25, [8, 8, 4], BuildOptions::default()).unwrap();
    let out = train_model(&cfg, &mut m, &toy(1, 8, 1), &toy(1, 6, 2), Some(dir), &mut |_| {}).unwrap();
    let mut ckpts: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".hfn"))
        .collect();
    ckpts.sort();
    c.note(format!("checkpoints {ckpts:?}"));
    c.ensure(
        ckpts == ["ckpt_epoch_0010.hfn", "ckpt_epoch_0020.hfn", "ckpt_epoch_0030.hfn"],
        format!("checkpoint files {ckpts:?}"),
    );
    let best_sum = out
        .checkpoints
        .iter()
        .map(|s| s.acc + if s.auc.is_finite() { s.auc } else { 0.0 })
        .fold(f64::MIN, f64::max);
    c.ensure(
        out.best.acc + out.best.auc == best_sum,
        "best checkpoint does not maximize ACC+AUC",
    );
    let stored: CheckpointScore =
        serde_json::from_str(&std::fs::read_to_string(dir.join("best.json")).unwrap()).unwrap();
    c.ensure(stored.epoch == out.best.epoch, "best.json disagrees with the selection");

    let cands = [(10, 0.9, 0.80), (20, 0.8, 0.95), (30, 0.85, 0.80)].map(|(e, a, u)| CheckpointScore {
        epoch: e,
        path: PathBuf::from(format!("{e}")),
        acc: a,
        auc: u,
    });
    let pick = select_best_checkpoint(&cands).unwrap().epoch;
    c.ensure(
        pick == 20,
        format!("selection picked epoch {pick}, expected 20 (ACC+AUC 1.75)"),
    );
}

// ---------------------------------------------------------------- 6

fn day(d: i64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2005, 6, 1).unwrap() + chrono::Duration::days(d)
}

fn calendar_label(records: &[SubjectRecord], mri: &SubjectRecord) -> Option<Label> {
    match mri.diagnosis {
        Diagnosis::NL => Some(Label::NL),
        Diagnosis::AD => Some(Label::AD),
        Diagnosis::MCI => {
            let later: Vec<(i64, Diagnosis)> = records
                .iter()
                .filter(|r| r.patient_id == mri.patient_id && r.visit_date > mri.visit_date)
                .map(|r| ((r.visit_date - mri.visit_date).num_days(), r.diagnosis))
                .collect();
            if later.iter().any(|&(d, x)| x == Diagnosis::AD && d <= 1095) {
                Some(Label::PMci)
            } else if later.iter().any(|&(d, _)| d >= 1095) {
                Some(Label::SMci)
            } else {
                None
            }
        }
    }
}

fn c6_cohort(c: &mut Check, _: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let dxs = [Diagnosis::NL, Diagnosis::MCI, Diagnosis::AD];
    let (mut sets, mut samples, mut boundary, mut splits) = (0, 0, 0, 0);
    for case in 0..1200 {
        let patients = rng.random_range(3..16);
        let mut records = Vec::new();
        for p in 0..patients {
            let base = rng.random_range(0..400);
            let first_dx = dxs[rng.random_range(0..3)];
            for k in 0..rng.random_range(2..10) {
                // Visit 0 is an MRI and visit 1 a PET of the same diagnosis, so
                // most patients contribute a pair.
                let kind = [0, 1].get(k).copied().unwrap_or_else(|| rng.random_range(0..3));
                // Offsets cluster near the 365 and 1095 day boundaries.
                let off = match (k, rng.random_range(0..4)) {
                    (0, _) => 0,
                    (1, _) => rng.random_range(0..400),
                    (_, 0) => rng.random_range(360..371),
                    (_, 1) => rng.random_range(1090..1101),
                    _ => rng.random_range(0..1500),
                };
                records.push(SubjectRecord {
                    patient_id: format!("S{p:03}"),
                    visit_date: day(base + off),
                    diagnosis: if k < 2 { first_dx } else { dxs[rng.random_range(0..3)] },
                    modality: if kind == 1 { Modality::PET } else { Modality::MRI },
                    image_path: if kind == 2 {
                        String::new()
                    } else {
                        format!("c{case}_{p}_{k}.nii")
                    },
                });
            }
        }
        let build = build_samples(&records);
        sets += 1;
        for s in &build.samples {
            samples += 1;
            c.ensure(
                s.date_gap_days <= 365,
                format!("gap {} in case {case}", s.date_gap_days),
            );
            let mri = records.iter().find(|r| r.image_path == s.mri_path).unwrap();
            let pet = records.iter().find(|r| r.image_path == s.pet_path).unwrap();
            c.ensure(
                (mri.visit_date - pet.visit_date).num_days().abs() <= 365,
                "true gap above 365",
            );
            let want = calendar_label(&records, mri);
            if mri.diagnosis == Diagnosis::MCI {
                boundary += 1;
            }
            c.ensure(
                want == Some(s.label),
                format!("case {case}: label {:?}, expected {want:?}", s.label),
            );
        }
        for e in &build.excluded {
            c.ensure(
                calendar_label(&records, &e.mri).is_none(),
                format!("case {case}: wrongly excluded"),
            );
        }
        if let Ok(split) = split_by_patient(&build.samples, [0.7, 0.1, 0.2], case) {
            splits += 1;
            let mut seen: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
            for s in &build.samples {
                seen.entry(&s.patient_id).or_default().insert(split[&s.patient_id]);
            }
            c.ensure(
                seen.values().all(|v| v.len() == 1),
                format!("case {case}: patient in two splits"),
            );
        }
        if c.failures.len() > 5 {
            break;
        }
    }
    c.note(format!(
        "{sets} record sets, {samples} samples, {boundary} MCI labels, {splits} splits checked"
    ));
    c.ensure(sets >= 1000, "fewer than 1000 record sets");
}

// ---------------------------------------------------------------- 7

const FRACTIONS_275: [f64; 3] = [8.0 / 11.0, 1.0 / 11.0, 2.0 / 11.0];

/// Phantom → cohort manifest → preprocessed manifest under `dir`.
fn phantom_pipeline(dir: &Path, cfg: &PhantomConfig, fractions: [f64; 3], modes: &[MriMode]) -> Vec<PathBuf> {
    let ph = dir.join("phantom");
    generate_phantom_cohort(cfg, &ph).unwrap();
    let records = read_clinical_csv(ph.join("clinical.csv")).unwrap();
    let (manifest, _) = build_cohort(&records, &ph.join("images"), fractions, cfg.seed).unwrap();
    let cohort = dir.join("cohort.json");
    manifest.write(&cohort).unwrap();
    modes
        .iter()
        .map(|&mode| {
            let out = dir.join(format!("pre_{mode}"));
            let pcfg = PreprocessConfig {
                mri_mode: mode,
                pet_grid: PetGrid::Origin,
                roi_size: cfg.dims,
                ..PreprocessConfig::default()
            };
            preprocess(&manifest, dir, &pcfg, &out).unwrap();
            out.join("manifest.json")
        })
        .collect()
}

fn run_training(cfg: &TrainConfig, manifest: &Path, out: &Path) -> (TrainOutcome, hfn::train::MetricsReport) {
    let m = CohortManifest::read(manifest).unwrap();
    let base = manifest.parent().unwrap();
    let (_, outcome) = train(cfg, &m, base, out, &mut |_| {}).unwrap();
    let mut ck = load_checkpoint(&outcome.best.path).unwrap();
    let report = evaluate(&mut ck, &m, base, Split::Test, cfg.task).unwrap();
    (outcome, report)
}

fn c7_learnability(c: &mut Check, dir: &Path) {
    let pcfg = PhantomConfig {
        n_subjects: 275,
        class_mix: [0.5, 0.0, 0.0, 0.5],
        dims: [32, 32, 16],
        atrophy_delta: 0.3,
        seed: 7,
        ..PhantomConfig::default()
    };
    let manifest = phantom_pipeline(dir, &pcfg, FRACTIONS_275, &[MriMode::Raw]).remove(0);
    let m = CohortManifest::read(&manifest).unwrap();
    let sizes = Split::ALL.map(|s| m.samples_in(s).count());
    c.note(format!("train/val/test {sizes:?}"));
    c.ensure(sizes == [200, 25, 50], format!("split sizes {sizes:?}"));

    for arch in [ArchId::Single, ArchId::FusionB1, ArchId::FusionB2] {
        let cfg = TrainConfig {
            arch,
            width: 0.25,
            epochs: 30,
            seed: 7,
            ..TrainConfig::default()
        };
        let t = Instant::now();
        let (outcome, report) = run_training(&cfg, &manifest, &dir.join(format!("run_{arch}")));
        let el = t.elapsed();
        let best_val = outcome.log.iter().map(|e| e.val_acc).fold(0.0, f64::max);
        let first_95 = outcome.log.iter().find(|e| e.val_acc >= 0.95).map(|e| e.epoch);
        c.ensure(
            outcome.log.iter().all(|e| e.train_loss.is_finite()),
            format!("{arch}: non-finite loss"),
        );
        c.note(format!(
            "{arch}: val ACC>=0.95 at epoch {first_95:?}, best ckpt epoch {}, test ACC {:.3} AUC {:.3}, {:.0}s",
            outcome.best.epoch,
            report.confusion.acc,
            report.auc(),
            el.as_secs_f64()
        ));
        if arch == ArchId::Single {
            c.ensure(best_val >= 0.95, format!("single val ACC peaked at {best_val:.3}"));
            c.ensure(report.auc() >= 0.97, format!("single test AUC {:.3}", report.auc()));
            c.ensure(el < Duration::from_secs(15 * 60), format!("single took {el:?}"));
        } else {
            c.ensure(
                report.confusion.acc >= 0.95,
                format!("{arch} test ACC {:.3}", report.confusion.acc),
            );
        }
    }
}

// ---------------------------------------------------------------- 8

fn c8_ordering(c: &mut Check, dir: &Path) {
    let modes = [MriMode::Raw, MriMode::WithSeg, MriMode::Bin];
    let mut aucs = [[0.0; 3]; 3];
    for seed in 0..3u64 {
        let pcfg = PhantomConfig {
            n_subjects: 175,
            class_mix: [0.5, 0.0, 0.0, 0.5],
            seed,
            max_shift: 0,
            atrophy_delta: 0.1,
            radius_jitter: 0.1,
            texture: Some(Texture {
                amplitude: 0.3,
                delta: 0.5,
            }),
            ..PhantomConfig::default()
        };
        let sub = dir.join(format!("seed{seed}"));
        let manifests = phantom_pipeline(&sub, &pcfg, FRACTIONS_275, &modes);
        for (k, man) in manifests.iter().enumerate() {
            let cfg = TrainConfig {
                width: 0.25,
                epochs: 15,
                seed,
                ..TrainConfig::default()
            };
            let (_, report) = run_training(&cfg, man, &sub.join(format!("run_{}", modes[k])));
            aucs[seed as usize][k] = report.auc();
        }
        let [r, w, b] = aucs[seed as usize];
        c.note(format!("seed {seed}: raw {r:.3} with_seg {w:.3} bin {b:.3}"));
        c.ensure(
            r >= w && w >= b - 0.02,
            format!("seed {seed} breaks raw >= with_seg >= bin - 0.02"),
        );
    }
    let mean = |k: usize| aucs.iter().map(|a| a[k]).sum::<f64>() / 3.0;
    c.note(format!(
        "mean raw {:.3} with_seg {:.3} bin {:.3}",
        mean(0),
        mean(1),
        mean(2)
    ));
    c.ensure(mean(0) >= mean(1) && mean(1) >= mean(2) - 0.02, "mean ordering");
}

// ---------------------------------------------------------------- 9

fn c9_serialization(c: &mut Check, dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut ck_bad, mut nii_bad) = (0, 0);
    for i in 0..100 {
        let arch = ArchId::ALL[i % 4];
        let grid = [rng.random_range(1..10), rng.random_range(1..10), rng.random_range(1..6)];
        let mut m = Model::build(
            arch,
            [0.125, 0.25][i % 2],
            grid,
            BuildOptions {
                dropout_p: 0.3,
                seed: i as u64,
            },
        )
        .unwrap();
        for p in m.store_mut().iter_mut() {
            for v in p.value.data_mut() {
                *v = rng.random_range(-3.0..3.0);
            }
        }
        let meta = CheckpointMeta {
            epoch: i,
            seed: rng.random(),
            task: Some(Task::NlPmci),
            modality: None,
        };
        let bytes = checkpoint_bytes(&m, &meta).unwrap();
        let back = checkpoint_from_bytes(&bytes).unwrap();
        let same = back.meta == meta
            && back.model.arch() == arch
            && m.store().iter().zip(back.model.store().iter()).all(|((_, a), (_, b))| {
                a.name == b.name
                    && a.value.shape() == b.value.shape()
                    && a.value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            });
        if !same || checkpoint_bytes(&back.model, &back.meta).unwrap() != bytes {
            ck_bad += 1;
        }

        let dims = [
            rng.random_range(1..16),
            rng.random_range(1..16),
            rng.random_range(1..10),
        ];
        let spacing = [
            rng.random_range(0.5..2.5),
            rng.random_range(0.5..2.5),
            rng.random_range(0.5..2.5),
        ];
        let aff = compose(
            &translation([rng.random_range(-50.0..50.0), 3.0, -7.5]),
            &diagonal_affine(spacing),
        );
        let vox = (0..dims.iter().product::<usize>())
            .map(|_| rng.random::<f32>() * 1e3 - 500.0)
            .collect();
        let v = Volume::new(dims, spacing, aff, vox).unwrap();
        let p = dir.join(format!("{i}.nii"));
        write_volume(&v, &p).unwrap();
        let w = read_volume(&p).unwrap();
        let bits_equal = w
            .voxels()
            .iter()
            .zip(v.voxels())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if w.dims() != v.dims() || !bits_equal {
            nii_bad += 1;
        }
    }
    c.note(format!(
        "100 checkpoints ({ck_bad} mismatched), 100 NIfTI volumes ({nii_bad} mismatched)"
    ));
    c.ensure(ck_bad == 0 && nii_bad == 0, "round-trip mismatch");
}

// ---------------------------------------------------------------- 10

fn hfn_cmd(c: &mut Check, log: &mut String, args: &[&str]) -> bool {
    let out = Command::new(env!("CARGO_BIN_EXE_hfn"))
        .args(args)
        .output()
        .expect("spawn hfn");
    log.push_str(&String::from_utf8_lossy(&out.stdout));
    let ok = out.status.success();
    c.ensure(
        ok,
        format!(
            "`hfn {}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ),
    );
    ok
}

fn read_metrics(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap_or_default()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn c10_cli(c: &mut Check, dir: &Path) {
    let p = |s: &str| dir.join(s).to_string_lossy().into_owned();
    let mut log = String::new();
    let mut run = |c: &mut Check, args: Vec<String>| {
        let a: Vec<&str> = args.iter().map(String::as_str).collect();
        hfn_cmd(c, &mut log, &a)
    };
    let sv = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();

    if !run(
        c,
        sv(&[
            "phantom",
            "--subjects",
            "240",
            "--dims",
            "32x32x16",
            "--delta",
            "0.3",
            "--seed",
            "5",
            "--out",
            &p("phantom"),
        ]),
    ) {
        return;
    }
    run(
        c,
        sv(&[
            "cohort",
            "--clinical",
            &p("phantom/clinical.csv"),
            "--images",
            &p("phantom/images"),
            "--out",
            &p("cohort/manifest.json"),
        ]),
    );
    for (mri, pet) in [
        ("raw", "origin"),
        ("withseg", "origin"),
        ("bin", "origin"),
        ("raw", "dilated"),
    ] {
        run(
            c,
            sv(&[
                "preprocess",
                "--manifest",
                &p("cohort/manifest.json"),
                "--mri-mode",
                mri,
                "--pet-grid",
                pet,
                "--roi",
                "32x32x16",
                "--out",
                &p(&format!("pre/{mri}_{pet}")),
            ]),
        );
    }
    let config = dir.join("train.toml");
    std::fs::write(&config, "width = 0.25\nepochs = 15\nseed = 5\n").unwrap();
    let cfg = config.to_string_lossy().into_owned();

    // (table, run name, manifest, arch, task, modality)
    let mut jobs: Vec<(&str, &str, &str, &str, &str, &str)> = vec![
        ("mri_modes", "Raw", "raw_origin", "single", "nl-ad", "mri"),
        ("mri_modes", "WithSeg", "withseg_origin", "single", "nl-ad", "mri"),
        ("mri_modes", "Bin", "bin_origin", "single", "nl-ad", "mri"),
        ("pet_grids", "Origin", "raw_origin", "single", "nl-ad", "pet"),
        ("pet_grids", "Dilated", "raw_dilated", "single", "nl-ad", "pet"),
        ("archs", "MRI", "raw_origin", "single", "nl-ad", "mri"),
        ("archs", "PET", "raw_origin", "single", "nl-ad", "pet"),
    ];
    for arch in ["fusionA", "fusionB1", "fusionB2"] {
        jobs.push(("archs", arch, "raw_origin", arch, "nl-ad", "mri"));
        for task in ["nl-pmci", "smci-pmci"] {
            jobs.push(("tasks", arch, "raw_origin", arch, task, "mri"));
        }
    }
    let mut trained: BTreeMap<(String, String), String> = BTreeMap::new();
    for (table, name, pre, arch, task, modality) in jobs {
        let key = (format!("{pre}/{arch}/{modality}"), task.to_string());
        let run_dir = match trained.get(&key) {
            Some(d) => d.clone(),
            None => {
                let d = p(&format!("runs/{}_{arch}_{modality}_{task}", pre));
                let ok = run(
                    c,
                    sv(&[
                        "train",
                        "--config",
                        &cfg,
                        "--manifest",
                        &p(&format!("pre/{pre}/manifest.json")),
                        "--arch",
                        arch,
                        "--task",
                        task,
                        "--modality",
                        modality,
                        "--out",
                        &d,
                    ]),
                );
                if !ok {
                    continue;
                }
                trained.insert(key, d.clone());
                d
            }
        };
        let manifest = p(&format!("pre/{pre}/manifest.json"));
        run(
            c,
            sv(&[
                "eval",
                "--checkpoint",
                &run_dir,
                "--manifest",
                &manifest,
                "--split",
                "test",
                "--name",
                name,
                "--out",
                &p(&format!("reports/{table}/{task}_{name}.json")),
            ]),
        );
        if table == "archs" && ["fusionA", "fusionB1", "fusionB2", "MRI"].contains(&name) {
            for cross in ["nl-pmci", "smci-pmci"] {
                run(
                    c,
                    sv(&[
                        "eval",
                        "--checkpoint",
                        &run_dir,
                        "--manifest",
                        &manifest,
                        "--cross-task",
                        cross,
                        "--name",
                        &format!("{name} (NL/AD model)"),
                        "--out",
                        &p(&format!("reports/cross_task/{cross}_{name}_nlad.json")),
                    ]),
                );
            }
        }
    }
    // The cross-task table also lists the tasks' own models next to the NL/AD models.
    for arch in ["fusionA", "fusionB1", "fusionB2"] {
        for task in ["nl-pmci", "smci-pmci"] {
            let src = dir.join(format!("reports/tasks/{task}_{arch}.json"));
            let _ = std::fs::copy(&src, dir.join(format!("reports/cross_task/{task}_{arch}_own.json")));
        }
    }
    for table in ["mri_modes", "pet_grids", "archs", "tasks", "cross_task"] {
        run(
            c,
            sv(&[
                "report",
                "--in",
                &p(&format!("reports/{table}")),
                "--out",
                &p(&format!("tables/{table}")),
            ]),
        );
    }

    let mut shapes = Vec::new();
    for table in ["mri_modes", "pet_grids", "archs", "tasks", "cross_task"] {
        let rows = read_metrics(&dir.join(format!("tables/{table}/metrics.csv")));
        let rocs = std::fs::read_dir(dir.join(format!("tables/{table}")))
            .map(|d| {
                d.filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("roc_"))
                    .count()
            })
            .unwrap_or(0);
        c.ensure(
            rows.first().map(|h| h.join(",")) == Some("task,arch,ACC,SEN,SPE,AUC".into()),
            format!("{table} header"),
        );
        shapes.push(format!("{table} {} rows/{rocs} ROC", rows.len().saturating_sub(1)));
        c.ensure(
            rows.len() > 1 && rocs == rows.len() - 1,
            format!("{table}: {} rows, {rocs} ROC files", rows.len()),
        );
    }
    c.note(shapes.join(", "));
    let archs = read_metrics(&dir.join("tables/archs/metrics.csv"));
    let mri_acc = archs
        .iter()
        .find(|r| r.get(1).map(String::as_str) == Some("MRI"))
        .and_then(|r| r[2].parse::<f64>().ok());
    c.note(format!("archs MRI ACC {mri_acc:?}"));
    c.ensure(
        mri_acc.is_some_and(|a| a >= 0.95),
        format!("MRI NL/AD test ACC {mri_acc:?} < 0.95"),
    );
    c.ensure(
        log.contains("[train] effective configuration"),
        "train did not print its configuration",
    );
}
