//! End-to-end acceptance run. Prints one PASS/FAIL line per check and fails
//! if any check fails. The full pipeline (corpus synthesis, augmentation,
//! ten epochs of the Diff-feature encoder) runs inside this test, so expect
//! it to take a long time on a single core.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fallsense::audio_io::{
    build_manifest, pad_to_length, read_wav_mono, synth_corpus, write_wav, AudioClip,
    DatasetManifest, Label, ManifestEntry, Split, SynthSpec,
};
use fallsense::augmentation::{default_fall_plan, default_nofall_plan, expand_corpus};
use fallsense::experiments::{
    ablation_cells, baseline_dnn, evaluate, pairwise_analysis, train_on_manifest, AblationAxis,
    ClipPrediction, Evaluation,
};
use fallsense::features::{
    segment_raw, FeatureKind, FeatureMatrix, FeatureMeta, FeatureSpec, MelParams,
};
use fallsense::sentinel::{
    run_daemon, stream_classify, CaptureMode, DaemonConfig, Endpoint, SampleSource, WindowConfig,
};
use fallsense::transformer::{
    check_gradients, load_checkpoint, save_checkpoint, train, ConfigId, Layout, Mode, Model,
    ModelConfig, TrainHyper,
};
use fallsense::Result;

const CLIP_LEN: usize = 139_760;
const SEED: u64 = 0;

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Result<Check> {
    Ok(Check {
        pass,
        detail: detail.into(),
    })
}

struct Report {
    lines: Vec<String>,
    failed: Vec<u8>,
}

impl Report {
    fn run(&mut self, id: u8, name: &str, f: impl FnOnce() -> Result<Check>) {
        let t = Instant::now();
        let (pass, detail) = match f() {
            Ok(c) => (c.pass, c.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let line = format!(
            "[{id}] {name}: {} ({detail}; {:.1} s)",
            if pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
        println!("{line}");
        self.lines.push(line);
        if !pass {
            self.failed.push(id);
        }
    }
}

fn tone_clip(len: usize) -> AudioClip {
    let samples = (0..len)
        .map(|i| (0.3 * (i as f64 * 0.05).sin()) as f32)
        .collect();
    AudioClip::new(samples, 1, "tone").unwrap()
}

fn shapes() -> Result<Check> {
    let clip = tone_clip(CLIP_LEN);
    let mut bad = Vec::new();
    let mut expect = |what: &str, spec: FeatureSpec, want: (usize, usize)| -> Result<()> {
        let got = spec.extractor()?.extract(&clip)?.shape();
        let law = spec.shape(CLIP_LEN);
        if got != want || law != want {
            bad.push(format!(
                "{what}: extracted {got:?}, shape law {law:?}, want {want:?}"
            ));
        }
        Ok(())
    };
    let mel = |n_mels, hop| {
        FeatureSpec::LogMel(MelParams {
            n_fft: 2048,
            hop,
            n_mels,
        })
    };
    expect("raw", FeatureSpec::raw(), (87, 1600))?;
    expect("diff", FeatureSpec::diff(), (86, 1600))?;
    expect("log mel", FeatureSpec::log_mel(), (88, 64))?;
    expect("combined", FeatureSpec::combined(), (87, 1664))?;
    for (ms, rows, cols) in [
        (50, 173, 800),
        (100, 86, 1600),
        (300, 28, 4800),
        (500, 16, 8000),
    ] {
        expect(
            &format!("diff {ms} ms"),
            FeatureSpec::Diff { t_seg_ms: ms },
            (rows, cols),
        )?;
    }
    for (hop, rows) in [(1600, 88), (1000, 140), (500, 280)] {
        expect(&format!("hop {hop}"), mel(64, hop), (rows, 64))?;
    }
    for n in [32, 64, 128] {
        expect(&format!("{n} mels"), mel(n, 1600), (88, n))?;
    }

    let seg = segment_raw(&clip, 100)?;
    let dropped = CLIP_LEN - seg.data.len();
    if dropped != 560 {
        bad.push(format!("segmentation dropped {dropped} samples, want 560"));
    }
    let grid = |axis, base| -> Vec<(usize, usize)> {
        ablation_cells(axis, base, CLIP_LEN)
            .iter()
            .map(|c| (c.config.max_frames, c.config.input_dim))
            .collect()
    };
    let tseg = grid(AblationAxis::TSeg, FeatureSpec::diff());
    if tseg != [(173, 800), (86, 1600), (28, 4800), (16, 8000)] {
        bad.push(format!("segment-length grid models {tseg:?}"));
    }
    let hop = grid(AblationAxis::Hop, FeatureSpec::log_mel());
    if hop != [(88, 64), (140, 64), (280, 64)] {
        bad.push(format!("hop grid models {hop:?}"));
    }
    let mels = grid(AblationAxis::Mels, FeatureSpec::log_mel());
    if mels != [(88, 32), (88, 64), (88, 128)] {
        bad.push(format!("mel grid models {mels:?}"));
    }
    check(
        bad.is_empty(),
        if bad.is_empty() {
            "14 feature shapes, 560 dropped samples and 3 model grids exact".into()
        } else {
            bad.join("; ")
        },
    )
}

struct Corpus {
    _dir: tempfile::TempDir,
    original: DatasetManifest,
    expanded: DatasetManifest,
}

fn build_corpus() -> Result<Corpus> {
    let dir = tempfile::tempdir()?;
    let raw_dir = dir.path().join("corpus");
    synth_corpus(&SynthSpec::standard(SEED), &raw_dir)?;
    let original = build_manifest(&raw_dir, SEED)?;
    let exp_dir = dir.path().join("expanded");
    expand_corpus(
        &original,
        &default_fall_plan(SEED),
        &default_nofall_plan(SEED),
        &exp_dir,
    )?;
    let expanded = build_manifest(&exp_dir, SEED)?;
    Ok(Corpus {
        _dir: dir,
        original,
        expanded,
    })
}

fn augmentation_counts(c: &Corpus) -> Result<Check> {
    let m = &c.expanded;
    let splits = |label| [Split::Train, Split::Val, Split::Test].map(|s| m.count(s, label));
    let got = (
        c.original.count_label(Label::Fall),
        c.original.count_label(Label::NoFall),
        m.count_label(Label::Fall),
        m.count_label(Label::NoFall),
        m.entries.len(),
        splits(Label::Fall),
        splits(Label::NoFall),
    );
    let want = (57, 35, 855, 3535, 4390, [684, 84, 87], [2826, 353, 356]);
    check(
        got == want,
        format!(
            "originals {}/{}, expanded {}/{} = {}, fall splits {:?}, no-fall splits {:?}",
            got.0, got.1, got.2, got.3, got.4, got.5, got.6
        ),
    )
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        config_id: ConfigId::Custom,
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        ff_dim: 16,
        mlp_head: vec![6],
        ..ModelConfig::a(12, 5)
    }
}

fn random_features(rng: &mut ChaCha8Rng, rows: usize, cols: usize, valid: usize) -> FeatureMatrix {
    FeatureMatrix {
        data: (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
        rows,
        cols,
        mask: (0..rows).map(|i| i < valid).collect(),
        kind: FeatureKind::Diff,
        meta: FeatureMeta::default(),
    }
}

fn gradient_check() -> Result<Check> {
    let model = Model::<f64>::init(tiny_config(), 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let xs: Vec<FeatureMatrix> = [5, 3, 1]
        .iter()
        .map(|&v| random_features(&mut rng, 5, 12, v))
        .collect();
    let batch: Vec<(&FeatureMatrix, usize)> = xs.iter().zip([0, 1, 0]).collect();
    let mut worst = 0.0f64;
    let mut details = Vec::new();
    let mut ok = true;
    for layout in [Layout::Packed, Layout::Full] {
        let r = check_gradients(&model, &batch, [2.5, 1.0], layout, 1e-3, 1e-5, 1e-4)?;
        worst = worst.max(r.max_rel_error);
        ok &= r.max_rel_error < 1e-4 && r.refined * 20 < r.checked;
        details.push(format!(
            "{layout:?}: {} scalars, {} refined, worst {}",
            r.checked, r.refined, r.worst
        ));
    }
    check(
        ok,
        format!(
            "max relative error {worst:.2e} (tol 1e-4); {}",
            details.join("; ")
        ),
    )
}

fn mask_invariance() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut problems = Vec::new();

    let tiny = Model::<f32>::init(tiny_config(), 4)?;
    let x = random_features(&mut rng, 5, 12, 3);
    let mut y = x.clone();
    y.data[3 * 12..]
        .iter_mut()
        .for_each(|v| *v = rng.random_range(-50.0..50.0));
    let mut pairs = vec![(tiny, x, y)];

    // a log mel encoder on a real, zero-padded clip
    let spec = FeatureSpec::log_mel();
    let cfg = ModelConfig {
        n_layers: 2,
        ..ModelConfig::for_features(spec, CLIP_LEN)
    };
    let clip = pad_to_length(tone_clip(50_000), CLIP_LEN)?;
    let x = spec.extractor()?.extract(&clip)?;
    let valid = x.valid_rows();
    let mut y = x.clone();
    y.data[valid * x.cols..]
        .iter_mut()
        .for_each(|v| *v = rng.random_range(-30.0..30.0));
    pairs.push((Model::<f32>::init(cfg, 5)?, x, y));

    for (model, x, y) in &pairs {
        for layout in [Layout::Packed, Layout::Full] {
            let a = model.predict_with(&[x], Mode::Eval, 0, layout)?[0];
            let b = model.predict_with(&[y], Mode::Eval, 0, layout)?[0];
            if a.map(f32::to_bits) != b.map(f32::to_bits) {
                problems.push(format!("{}x{} {layout:?}: {a:?} vs {b:?}", x.rows, x.cols));
            }
        }
        let n = x.rows + 1;
        let v = x.valid_rows();
        for (l, maps) in model.attention_maps(y)?.iter().enumerate() {
            let leaked = maps
                .chunks(n)
                .flat_map(|row| &row[v + 1..])
                .filter(|&&p| p != 0.0)
                .count();
            if leaked > 0 {
                problems.push(format!(
                    "layer {l}: {leaked} nonzero weights on masked keys"
                ));
            }
        }
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            "eval outputs bitwise equal, masked-key attention exactly 0, both input layouts".into()
        } else {
            problems.join("; ")
        },
    )
}

fn overfit(c: &Corpus) -> Result<Check> {
    let spec = FeatureSpec::diff();
    let target = c.expanded.max_len_samples;
    let ex = spec.extractor()?;
    let mut set: Vec<(FeatureMatrix, Label)> = Vec::new();
    for label in [Label::Fall, Label::NoFall] {
        for e in c
            .original
            .entries
            .iter()
            .filter(|e| e.label == label)
            .take(10)
        {
            let clip = pad_to_length(c.original.load(e)?, target)?;
            set.push((ex.extract(&clip)?, label));
        }
    }
    let cfg = ModelConfig {
        config_id: ConfigId::Custom,
        d_model: 64,
        n_layers: 2,
        n_heads: 4,
        ff_dim: 128,
        mlp_head: vec![32],
        ..ModelConfig::for_features(spec, target)
    };
    let hyper = TrainHyper {
        epochs: 200,
        lr: 1e-3,
        ..TrainHyper::default()
    };
    let out = train(Model::init(cfg, 6)?, &set, Some(&set), &hyper, 7, None)?;
    let first = out
        .metrics
        .iter()
        .find(|m| m.val_accuracy.is_some_and(|a| a >= 0.95))
        .map(|m| m.epoch);
    let best = out
        .metrics
        .iter()
        .filter_map(|m| m.val_accuracy)
        .fold(0.0, f64::max);
    check(
        first.is_some(),
        format!("20 clips, lr 1e-3: eval-mode train accuracy {best:.3} at best, first >= 0.95 at epoch {first:?}"),
    )
}

fn metric_oracle() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..200);
        let preds: Vec<ClipPrediction> = (0..n)
            .map(|i| {
                let category_id = [1, 2, 3, 4, 5, 6, 8, 9][rng.random_range(0..8)];
                ClipPrediction {
                    path: format!("{i}.wav"),
                    category_id,
                    label: if [1, 3, 6, 8, 9].contains(&category_id) {
                        Label::Fall
                    } else {
                        Label::NoFall
                    },
                    p_fall: rng.random_range(0.0..1.0),
                }
            })
            .collect();
        let (mut tp, mut tn, mut fp, mut fn_) = (0usize, 0usize, 0usize, 0usize);
        for p in &preds {
            let said_fall = p.p_fall >= 0.5;
            match (said_fall, p.label == Label::Fall) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
            }
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let r = Evaluation::from_predictions(preds).report;
        let same = (r.counts.tp, r.counts.tn, r.counts.fp, r.counts.fn_) == (tp, tn, fp, fn_)
            && r.accuracy == ratio(tp + tn, n)
            && r.precision == precision
            && r.recall == recall
            && r.f1 == f1;
        mismatches += usize::from(!same);
    }
    check(
        mismatches == 0,
        format!("{mismatches} of 1000 random sets disagree with brute-force counts"),
    )
}

struct Trained {
    model: Model<f32>,
    eval: Evaluation,
}

fn end_to_end(c: &Corpus, trained: &mut Option<Trained>) -> Result<Check> {
    let cfg = ModelConfig::for_features(FeatureSpec::diff(), c.expanded.max_len_samples);
    let shape = (
        cfg.max_frames,
        cfg.input_dim,
        cfg.d_model,
        cfg.n_layers,
        cfg.n_heads,
    );
    let hyper = TrainHyper::default();
    let out = train_on_manifest(&c.expanded, cfg, &hyper, SEED, None)?;
    let eval = evaluate(&out.model, &c.expanded, Split::Test)?;
    let r = &eval.report;
    let pass = r.accuracy >= 0.80 && r.recall >= 0.70;
    let detail = format!(
        "encoder {shape:?}, {} epochs at lr {:e}, best val epoch {:?}: test accuracy {:.4} (>= 0.80), fall recall {:.4} (>= 0.70), precision {:.4}, F1 {:.4} on {} clips",
        hyper.epochs,
        hyper.lr,
        out.best_epoch,
        r.accuracy,
        r.recall,
        r.precision,
        r.f1,
        r.counts.total()
    );
    *trained = Some(Trained {
        model: out.model,
        eval,
    });
    check(pass, detail)
}

fn pairwise(c: &Corpus, trained: &Option<Trained>) -> Result<Check> {
    let Some(t) = trained else {
        return check(false, "no trained model");
    };
    let pairs: BTreeMap<(u8, u8), f64> = pairwise_analysis(&t.model, &c.expanded)?;
    let easy = pairs[&(6, 5)];
    let hard = (pairs[&(1, 2)] + pairs[&(3, 4)]) / 2.0;
    check(
        easy > hard,
        format!(
            "recall (6,5) {easy:.4} vs mean of (1,2) {:.4} and (3,4) {:.4} = {hard:.4}",
            pairs[&(1, 2)],
            pairs[&(3, 4)]
        ),
    )
}

fn round_trip_and_parity(c: &Corpus, trained: &Option<Trained>) -> Result<Check> {
    let Some(t) = trained else {
        return check(false, "no trained model");
    };
    let dir = tempfile::tempdir()?;
    let ckpt = dir.path().join("b.fsck");
    save_checkpoint(&t.model, &ckpt)?;
    let loaded = load_checkpoint(&ckpt)?;
    let target = loaded.cfg.target_len.unwrap_or(CLIP_LEN);
    let spec = FeatureSpec::diff();
    let ex = spec.extractor()?;
    let mut problems = Vec::new();

    // offline evaluation of the reloaded model against the trained one
    let reloaded_eval = evaluate(&loaded, &c.expanded, Split::Test)?;
    let differing = t
        .eval
        .predictions
        .iter()
        .zip(&reloaded_eval.predictions)
        .filter(|(a, b)| a.p_fall.to_bits() != b.p_fall.to_bits())
        .count();
    if differing > 0 {
        problems.push(format!(
            "{differing} test clips score differently after reload"
        ));
    }

    // ten test clips, each padded to the window length and stored as WAV,
    // then scored both as a manifest and as one continuous stream
    let picks: Vec<&ManifestEntry> = c.expanded.split(Split::Test).step_by(40).take(10).collect();
    let clip_dir = dir.path().join("clips");
    let mut entries = Vec::new();
    let mut stream = Vec::new();
    for (i, e) in picks.iter().enumerate() {
        let padded = pad_to_length(c.expanded.load(e)?, target)?;
        let rel = format!("{}/w{i:02}.wav", e.category_id);
        std::fs::create_dir_all(clip_dir.join(e.category_id.to_string()))?;
        write_wav(&clip_dir.join(&rel), &padded.samples)?;
        stream.extend(read_wav_mono(&clip_dir.join(&rel))?);
        let x = ex.extract(&padded)?;
        let (a, b) = (
            t.model.forward(&x, Mode::Eval, 0)?,
            loaded.forward(&x, Mode::Eval, 0)?,
        );
        if a.map(f32::to_bits) != b.map(f32::to_bits) {
            problems.push(format!("{}: forward differs after reload", e.path));
        }
        entries.push(ManifestEntry {
            path: rel,
            split: Split::Test,
            augment_tag: None,
            ..(*e).clone()
        });
    }
    let window_manifest = DatasetManifest {
        root: clip_dir.clone(),
        entries,
        max_len_samples: target,
        seed: SEED,
    };
    let offline = evaluate(&loaded, &window_manifest, Split::Test)?;
    let secs = target as f64 / 16_000.0;
    let windows = WindowConfig {
        window_s: secs,
        stride_s: secs,
    };
    let streamed = stream_classify(&loaded, &stream, windows)?;
    let mut cfg = DaemonConfig::new(windows, Endpoint::LogOnly);
    cfg.capture = CaptureMode::Replay;
    cfg.threshold = 2.0;
    let daemon = run_daemon(
        &loaded,
        Box::new(SampleSource::new(stream.clone())),
        &cfg,
        None,
    )?;
    if streamed.len() != 10 || daemon.windows.len() != 10 || offline.predictions.len() != 10 {
        problems.push(format!(
            "window counts: stream {}, daemon {}, offline {}",
            streamed.len(),
            daemon.windows.len(),
            offline.predictions.len()
        ));
    }
    let mut matched = 0;
    for ((p, s), d) in offline
        .predictions
        .iter()
        .zip(&streamed)
        .zip(&daemon.windows)
    {
        let bits = [p.p_fall, s.fall_probability, d.fall_probability].map(f64::to_bits);
        if bits[0] == bits[1] && bits[1] == bits[2] {
            matched += 1;
        } else {
            problems.push(format!(
                "{}: offline {} stream {} daemon {}",
                p.path, p.p_fall, s.fall_probability, d.fall_probability
            ));
        }
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("reload bitwise on {} test clips; {matched}/10 windows bitwise equal offline, streamed and daemon", t.eval.predictions.len())
        } else {
            problems.join("; ")
        },
    )
}

#[test]
fn acceptance() {
    let mut report = Report {
        lines: Vec::new(),
        failed: Vec::new(),
    };
    report.run(1, "feature shapes", shapes);
    let t = Instant::now();
    let corpus = build_corpus();
    println!(
        "corpus synthesized and expanded in {:.1} s",
        t.elapsed().as_secs_f64()
    );
    match &corpus {
        Ok(c) => report.run(2, "augmentation counts", || augmentation_counts(c)),
        Err(e) => report.run(2, "augmentation counts", || {
            check(false, format!("corpus build failed: {e}"))
        }),
    }
    report.run(3, "gradient check", gradient_check);
    report.run(4, "mask invariance", mask_invariance);
    let mut trained = None;
    match &corpus {
        Ok(c) => {
            report.run(5, "overfit capacity", || overfit(c));
            report.run(6, "end-to-end training", || end_to_end(c, &mut trained));
            match baseline_dnn(&c.expanded, FeatureSpec::diff(), &TrainHyper::default(), SEED) {
                Ok(ev) => println!(
                    "    reference: 256-64 DNN on the same features, test accuracy {:.4}, fall recall {:.4}",
                    ev.report.accuracy, ev.report.recall
                ),
                Err(e) => println!("    reference DNN failed: {e}"),
            }
        }
        Err(_) => {
            for (id, name) in [(5, "overfit capacity"), (6, "end-to-end training")] {
                report.run(id, name, || check(false, "no corpus"));
            }
        }
    }
    report.run(7, "metric oracle", metric_oracle);
    match &corpus {
        Ok(c) => {
            report.run(8, "pairwise direction", || pairwise(c, &trained));
            report.run(9, "checkpoint and sentinel parity", || {
                round_trip_and_parity(c, &trained)
            });
        }
        Err(_) => {
            for (id, name) in [
                (8, "pairwise direction"),
                (9, "checkpoint and sentinel parity"),
            ] {
                report.run(id, name, || check(false, "no corpus"));
            }
        }
    }
    println!("\nsummary:");
    for l in &report.lines {
        println!("{l}");
    }
    assert!(
        report.failed.is_empty(),
        "failed checks: {:?}",
        report.failed
    );
}
