//! Acceptance suite. Prints one line per criterion and exits non-zero if any
//! fails.
//!
//! `PVAD_ACCEPTANCE=1,3,4` runs a subset.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use pvad::lora::{self, FinetuneMode};
use pvad::memory::{address, boost, map_phase, normalize, retrieve, PeriodicMemoryBank, SoftmaxAxis};
use pvad::model::{ModelConfig, ModelProbe, PhaseOverride, VadModel, CHECKPOINT_FILE, TRAIN_LOG_FILE};
use pvad::nn::{
    grad_check, grad_check_input, Activation, ActivationKind, Attention, Conv2d, ConvTranspose2d, Dense, Embedding,
    Layer, LayerNorm, LayerProbe, Projection,
};
use pvad::perioddet::{period_error, phase_distance, reference};
use pvad::scoring::{auc, report_from_components, test_components, EvalConfig, TestComponents};
use pvad::synth::{presets, AnomalyFamily, Dataset};
use pvad::{Result, Tensor};
use pvad_cli::commands::{cmd_eval, cmd_gen, cmd_train, REPORT_FILE, SCORES_FILE};
use pvad_cli::experiments::{finetune_run, train_model};
use pvad_cli::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [0, 1, 2];

/// Schedule sized for a single desktop core.
fn desk_config(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        lr: 2e-3,
        epochs: 30,
        clips_per_epoch: 400,
        ..RunConfig::default()
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

struct Suite {
    only: Option<Vec<usize>>,
    failed: usize,
}

impl Suite {
    fn wants(&self, n: usize) -> bool {
        self.only.as_ref().is_none_or(|o| o.contains(&n))
    }

    fn run(&mut self, n: usize, name: &str, limit_secs: f64, f: impl FnOnce() -> Result<Outcome>) {
        if !self.wants(n) {
            return;
        }
        let t = Instant::now();
        let r = f();
        let secs = t.elapsed().as_secs_f64();
        let (pass, detail) = match r {
            Ok(o) => (o.pass && secs < limit_secs, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            self.failed += 1;
        }
        println!(
            "criterion {n} {} {name}: {detail} ({secs:.1}s / {limit_secs:.0}s)",
            if pass { "PASS" } else { "FAIL" }
        );
    }
}

fn close(a: &Tensor<f64>, b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.data().iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn bank(rows: &[&[f64]], t_max: usize, axis: SoftmaxAxis) -> Result<PeriodicMemoryBank<f64>> {
    PeriodicMemoryBank::from_items(Tensor::from_rows(rows), t_max, axis)
}

fn memory_examples() -> Result<Outcome> {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    let col = SoftmaxAxis::Column;

    let eye = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
    let w = address(&eye, &bank(&[&[1.0, 0.0], &[0.0, 1.0]], 20, col)?)?;
    check("address identity", close(&w, &[1.0, 0.0, 0.0, 1.0], 0.0));
    let w = address(&Tensor::from_rows(&[&[1.0, 2.0]]), &bank(&[&[3.0, 4.0], &[5.0, 6.0]], 20, col)?)?;
    check("address product", close(&w, &[11.0, 17.0], 0.0));
    let w = address(&Tensor::from_rows(&[&[0.0, 0.0]]), &bank(&[&[3.0, 4.0], &[5.0, 6.0]], 20, col)?)?;
    check("address zero input", close(&w, &[0.0, 0.0], 0.0));

    check("map_phase 0", map_phase(0, 20, 2000)? == 0);
    check("map_phase 199", map_phase(199, 200, 2000)? == 1990);
    check("map_phase M = t_max", map_phase(7, 20, 20)? == 7);

    let w = Tensor::from_rows(&[&[0.2, 0.3]]);
    check("boost unit factor", boost(&w, 1, 1.0)? == w);
    check("boost slot 1", close(&boost(&w, 1, 1.5)?, &[0.2, 0.45], 1e-15));
    let neg = boost(&Tensor::from_rows(&[&[-0.4, 0.3]]), 0, 1.5)?;
    check("boost keeps sign", close(&neg, &[-0.6, 0.3], 1e-15));

    let flat = Tensor::from_rows(&[&[2.0], &[2.0], &[2.0], &[2.0]]);
    check("normalize constant column", close(&normalize(&flat, col), &[0.25; 4], 1e-12));
    let two = Tensor::from_rows(&[&[0.0], &[3f64.ln()]]);
    check("normalize [0, ln 3]", close(&normalize(&two, col), &[0.25, 0.75], 1e-12));

    let items = bank(&[&[1.0, 1.0], &[3.0, 3.0]], 20, col)?;
    check(
        "retrieve one-hot",
        close(&retrieve(&Tensor::from_rows(&[&[0.0, 1.0]]), &items)?, &[3.0, 3.0], 0.0),
    );
    check(
        "retrieve mixture",
        close(&retrieve(&Tensor::from_rows(&[&[0.5, 0.5]]), &items)?, &[2.0, 2.0], 1e-15),
    );
    check(
        "retrieve zero weights",
        close(&retrieve(&Tensor::from_rows(&[&[0.0, 0.0]]), &items)?, &[0.0, 0.0], 0.0),
    );

    // One row and one slot: the column softmax is identically 1.
    let single = bank(&[&[0.7, -1.2, 3.0]], 20, col)?;
    let x = Tensor::from_rows(&[&[5.0, 2.0, -1.0]]);
    let mut scores = vec![0.0; 20];
    scores[3] = 1.0;
    let (out, _) = pvad::memory::memory_forward(&x, &single, 3, &scores)?;
    check("T = M = 1 returns the item", close(&out, &[0.7, -1.2, 3.0], 1e-15));

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let t = rng.random_range(1..12);
        let m = rng.random_range(1..40);
        let scale = rng.random_range(0.1..30.0);
        let n = t * m;
        let w = Tensor::from_vec(&[t, m], (0..n).map(|_| rng.random_range(-scale..scale)).collect())?;
        let slot = rng.random_range(0..m);
        let p: f64 = rng.random_range(0.0..1.0);
        let s = normalize(&boost(&w, slot, 1.0 + p)?, col);
        for j in 0..m {
            let sum: f64 = (0..t).map(|i| s.data()[i * m + j]).sum();
            worst = worst.max((sum - 1.0).abs());
        }
    }
    check("column sums", worst <= 1e-6);

    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("all examples exact, worst column-sum deviation {worst:.1e}")
        } else {
            format!("failed: {}", failures.join(", "))
        },
    )
}

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn layer_error<L: Layer<f64>>(make: impl Fn(&mut ChaCha8Rng) -> (L, Vec<usize>)) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (mut layer, in_shape) = make(&mut rng);
        for p in layer.params_mut() {
            for v in p.value.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        let x = random(&in_shape, &mut rng);
        let target = random(layer.infer(&x)?.shape(), &mut rng);
        let mut probe = LayerProbe { layer, target };
        let p = grad_check(&mut probe, &x, EPS)?;
        let i = grad_check_input(&probe, &x, EPS)?;
        worst = worst.max(p.max_relative_error).max(i.max_relative_error);
    }
    Ok(worst)
}

fn model_error(seed: u64, use_memory: bool, axis: SoftmaxAxis) -> Result<f64> {
    let cfg = ModelConfig {
        clip_len: 4,
        frame_size: 16,
        conv_channels: 4,
        dim: 8,
        slots: 16,
        t_max: 8,
        use_memory,
        softmax_axis: axis,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = VadModel::<f64>::new(cfg, &mut rng)?;
    let n = cfg.clip_shape().iter().product();
    let clip = Tensor::from_vec(&cfg.clip_shape(), (0..n).map(|_| rng.random_range(0.0..1.0)).collect())?;
    let (_, phase, _) = model.reconstruct(&clip)?;
    let mut probe = ModelProbe {
        fixed: PhaseOverride {
            phase: phase.phase,
            boost_factor: 1.0 + phase.confidence(),
        },
        model,
        label: rng.random_range(0..cfg.t_max),
        lambda_period: 1.0,
    };
    let p = grad_check(&mut probe, &clip, EPS)?;
    let i = grad_check_input(&probe, &clip, EPS)?;
    Ok(p.max_relative_error.max(i.max_relative_error))
}

fn gradient_fidelity() -> Result<Outcome> {
    let mut errors: Vec<(&str, f64)> = vec![
        ("dense", layer_error(|r| (Dense::new("d", 5, 4, r), vec![3, 5]))?),
        ("conv2d", layer_error(|r| (Conv2d::new("c", 2, 3, 3, 2, r), vec![2, 2, 7, 7]))?),
        (
            "conv_transpose2d",
            layer_error(|r| (ConvTranspose2d::new("t", 2, 3, 3, 2, r), vec![2, 2, 3, 3]))?,
        ),
        ("attention", layer_error(|r| (Attention::new("a", 6, r), vec![5, 6]))?),
        (
            "lora_attention",
            layer_error(|r| {
                let mut a = Attention::new("a", 6, r);
                for p in [&mut a.q, &mut a.v] {
                    let Projection::Plain(d) = p else { unreachable!() };
                    let l = lora::LoraDense::wrap(d.clone(), 2, 4.0, r).unwrap();
                    *p = Projection::Adapted(l);
                }
                (a, vec![4, 6])
            })?,
        ),
        ("layernorm", layer_error(|_| (LayerNorm::new("n", 7), vec![4, 7]))?),
        ("embedding", layer_error(|r| (Embedding::new("p", 4, 5, r), vec![4, 5]))?),
        ("tanh", layer_error(|_| (Activation(ActivationKind::Tanh), vec![3, 4]))?),
        ("sigmoid", layer_error(|_| (Activation(ActivationKind::Sigmoid), vec![3, 4]))?),
    ];
    let mut full: f64 = 0.0;
    for seed in 0..3 {
        full = full.max(model_error(seed, true, SoftmaxAxis::Column)?);
    }
    errors.push(("model", full));
    errors.push(("model_row_softmax", model_error(3, true, SoftmaxAxis::Row)?));
    errors.push(("model_no_memory", model_error(4, false, SoftmaxAxis::Column)?));
    let bad: Vec<String> = errors
        .iter()
        .filter(|(_, e)| !(*e < TOL))
        .map(|(n, e)| format!("{n}={e:.2e}"))
        .collect();
    let worst = errors.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} checks, worst relative error {worst:.2e}", errors.len())
        } else {
            format!("over tolerance: {}", bad.join(", "))
        },
    )
}

/// Counts ordered (positive, negative) pairs in half units.
fn brute_force_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut half_units, mut pairs) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li != 1 {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj != 0 {
                continue;
            }
            pairs += 1;
            half_units += match scores[i].partial_cmp(&scores[j]) {
                Some(std::cmp::Ordering::Greater) => 2,
                Some(std::cmp::Ordering::Equal) => 1,
                _ => 0,
            };
        }
    }
    half_units as f64 / (2 * pairs) as f64
}

fn auc_oracle() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    let mut tied = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..300);
        let levels = rng.random_range(2..12);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.1).collect();
        if scores.len() > levels {
            tied += 1;
        }
        if auc(&scores, &labels)? != brute_force_auc(&scores, &labels) {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("{mismatches} mismatches over 100 instances, {tied} with forced ties"),
    )
}

fn sliding_window() -> Result<Outcome> {
    let n = 5;
    let t_max = 20;
    let mut failures = Vec::new();
    let mut worst_corrupt = f64::INFINITY;
    for center in 0..t_max {
        for rate in [1.0, 0.5, 2.0, 1.25] {
            let b = reference(center, n, t_max, rate)?;
            if period_error(&b, &b, t_max, true)? != 0.0 {
                failures.push(format!("exact reference c={center} rate={rate}"));
            }
            for i in 0..n {
                for delta in 1..t_max {
                    let mut p = b.clone();
                    p[i] = (p[i] + delta) % t_max;
                    let e = period_error(&p, &b, t_max, true)?;
                    worst_corrupt = worst_corrupt.min(e);
                }
            }
        }
    }
    if worst_corrupt < 1.0 / n as f64 {
        failures.push(format!("corrupted phase gave {worst_corrupt}"));
    }
    if phase_distance(19, 0, 20, true) != 1 {
        failures.push("wraparound distance".into());
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("smallest single-corruption error {worst_corrupt} (1/n = {})", 1.0 / n as f64)
        } else {
            failures.join(", ")
        },
    )
}

struct OscillatorRun {
    components: TestComponents,
    dataset: Dataset,
    recon_ratio: f64,
}

fn with_fuse(cfg: &RunConfig, weight: f64) -> EvalConfig {
    EvalConfig {
        fuse_weight: weight,
        ..cfg.eval_config()
    }
}

fn oscillator_runs() -> Result<Vec<OscillatorRun>> {
    let mut runs = Vec::new();
    for seed in SEEDS {
        let cfg = desk_config(seed);
        let dataset = presets::oscillator_64(seed)?;
        let (model, log) = train_model(&cfg, &dataset)?;
        let first = log.epochs.first().map_or(f64::NAN, |e| e.recon_term);
        let last = log.final_epoch().map_or(f64::NAN, |e| e.recon_term);
        runs.push(OscillatorRun {
            components: test_components(&model, &dataset)?,
            dataset,
            recon_ratio: last / first,
        });
    }
    Ok(runs)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
}

fn end_to_end(runs: &[OscillatorRun]) -> Result<Outcome> {
    let mut aucs = Vec::new();
    let mut ratios = Vec::new();
    for (seed, run) in SEEDS.iter().zip(runs) {
        let cfg = desk_config(*seed);
        let r = report_from_components(&run.components, &run.dataset, &cfg.eval_config(), true)?;
        aucs.push(r.auc);
        ratios.push(run.recon_ratio);
    }
    let m = mean(&aucs);
    outcome(
        m >= 0.85,
        format!(
            "mean AUC {m:.4} (seeds {}), final/first recon loss {}",
            fmt_list(&aucs),
            fmt_list(&ratios)
        ),
    )
}

fn nuisance_robustness(runs: &[OscillatorRun]) -> Result<Outcome> {
    let mut full = Vec::new();
    let mut recon_only = Vec::new();
    for (seed, run) in SEEDS.iter().zip(runs) {
        let cfg = desk_config(*seed);
        let m = &run.dataset.manifest;
        let offsets: Vec<usize> = m.nuisance_only_test_frames().iter().map(|f| f - m.num_train).collect();
        if offsets.is_empty() {
            return outcome(false, "test split has no nuisance-only frames".into());
        }
        for (weight, out) in [(cfg.fuse_weight, &mut full), (0.0, &mut recon_only)] {
            let r = report_from_components(&run.components, &run.dataset, &with_fuse(&cfg, weight), true)?;
            out.push(r.mean_norm_score(offsets.iter().copied()));
        }
    }
    let (a, b) = (mean(&full), mean(&recon_only));
    outcome(
        a < b,
        format!(
            "mean normalized score on nuisance frames: full {a:.4} ({}), reconstruction only {b:.4} ({}); models shared with criterion 5",
            fmt_list(&full),
            fmt_list(&recon_only)
        ),
    )
}

fn ablation_direction() -> Result<Outcome> {
    // Keys: (memory, window).
    let mut logic: BTreeMap<(bool, bool), Vec<f64>> = BTreeMap::new();
    for seed in SEEDS {
        let dataset = presets::sorter_64(seed)?;
        for memory in [true, false] {
            let cfg = RunConfig {
                use_memory: memory,
                ..desk_config(seed)
            };
            let (model, _) = train_model(&cfg, &dataset)?;
            let components = test_components(&model, &dataset)?;
            for window in [true, false] {
                let weight = if window { cfg.fuse_weight } else { 0.0 };
                let r = report_from_components(&components, &dataset, &with_fuse(&cfg, weight), memory)?;
                let a = r.auc_per_family.get(&AnomalyFamily::Logic).copied().unwrap_or(f64::NAN);
                logic.entry((memory, window)).or_default().push(a);
            }
        }
    }
    let m = |k: (bool, bool)| mean(&logic[&k]);
    let full = m((true, true));
    let no_window = m((true, false));
    let no_memory = m((false, true));
    let no_period = m((false, false));
    let pass = full >= no_memory && full >= no_window && full - no_period >= 0.03;
    outcome(
        pass,
        format!(
            "logic AUC full {full:.4}, no-memory {no_memory:.4}, no-window {no_window:.4}, no-period {no_period:.4}, gap {:.4}",
            full - no_period
        ),
    )
}

fn bits<S: pvad::Scalar>(t: &Tensor<S>) -> Vec<u64> {
    t.data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN).to_bits()).collect()
}

fn finetune_transfer() -> Result<Outcome> {
    let seed = SEEDS[0];
    let (source, target) = presets::shift_pair(seed)?;
    let pre_cfg = desk_config(seed);
    let (pretrained, _) = train_model(&pre_cfg, &source)?;
    let ft_cfg = RunConfig {
        epochs: 10,
        few_shot_fraction: 0.2,
        ..pre_cfg.clone()
    };
    let full = finetune_run(&ft_cfg, &pretrained, &target, FinetuneMode::Full)?;
    let peft = finetune_run(&ft_cfg, &pretrained, &target, FinetuneMode::Peft)?;
    let ratio = peft.log.trainable_params as f64 / full.log.trainable_params as f64;
    let gap = (peft.report.auc - full.report.auc).abs();
    let equal_steps = peft.log.steps == full.log.steps;
    let faster = peft.log.wall_seconds < full.log.wall_seconds;

    // An adapter that has not been trained must leave every output unchanged.
    let zero = lora::prepare(&pretrained, &ft_cfg.finetune_config(FinetuneMode::Peft, pretrained.config))?;
    let frames = pvad::model::dataset_tensor::<f32>(target.test_frames(), pretrained.config.contrast_norm)?;
    let clip_len = pretrained.config.clip_len;
    let mut identical = zero.is_adapted();
    for start in (0..target.manifest.num_test - clip_len).step_by(37) {
        let clip = pvad::model::clip_at(&frames, start, clip_len)?;
        let (a, pa, _) = pretrained.reconstruct(&clip)?;
        let (b, pb, _) = zero.reconstruct(&clip)?;
        identical &= bits(&a) == bits(&b) && pa.logits == pb.logits;
    }
    let eval = ft_cfg.eval_config();
    identical &= pvad::scoring::evaluate(&pretrained, &target, &eval)? == pvad::scoring::evaluate(&zero, &target, &eval)?;

    outcome(
        ratio <= 0.30 && gap <= 0.05 && equal_steps && faster && identical,
        format!(
            "trainable {}/{} = {ratio:.3}, AUC full {:.4} peft {:.4} (gap {gap:.4}), {} steps each: {}, wall full {:.1}s peft {:.1}s, 0-step identical {identical}",
            peft.log.trainable_params,
            full.log.trainable_params,
            full.report.auc,
            peft.report.auc,
            full.log.steps,
            equal_steps,
            full.log.wall_seconds,
            peft.log.wall_seconds
        ),
    )
}

fn io_err(path: &Path, e: std::io::Error) -> pvad::Error {
    pvad::Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn tree(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| io_err(&d, e))? {
            let path = entry.map_err(|e| io_err(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, fs::read(&path).map_err(|e| io_err(&path, e))?);
            }
        }
    }
    Ok(out)
}

fn determinism() -> Result<Outcome> {
    let tmp = tempfile::tempdir().map_err(|e| io_err(Path::new("tempdir"), e))?;
    let mut cfg = RunConfig {
        seed: 42,
        epochs: 2,
        clips_per_epoch: 64,
        lr: 2e-3,
        ..RunConfig::default()
    };
    cfg.set("preset", "oscillator-64")?;
    let mut trees = Vec::new();
    for run in ["a", "b"] {
        let root = tmp.path().join(run);
        let data = cmd_gen(&cfg, &root.join("data"))?.remove(0);
        cmd_train(&cfg, &data, &root.join("train"))?;
        cmd_eval(&cfg, &data, &root.join("train").join(CHECKPOINT_FILE), None, &root.join("eval"), true)?;
        trees.push(tree(&root)?);
    }
    let differing: Vec<&String> = trees[0]
        .iter()
        .filter(|(k, v)| trees[1].get(*k) != Some(v))
        .map(|(k, _)| k)
        .collect();
    let same_keys = trees[0].keys().eq(trees[1].keys());
    let has = |name: &str| trees[0].keys().any(|k| k.ends_with(name));
    let complete = has(TRAIN_LOG_FILE) && has(REPORT_FILE) && has(SCORES_FILE) && has("manifest.json");
    outcome(
        differing.is_empty() && same_keys && complete,
        if differing.is_empty() {
            format!("{} files byte-identical across two runs", trees[0].len())
        } else {
            format!("differing: {differing:?}")
        },
    )
}

fn main() -> ExitCode {
    let only = std::env::var("PVAD_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut suite = Suite { only, failed: 0 };

    suite.run(1, "memory addressing examples", 5.0, memory_examples);
    suite.run(2, "gradient fidelity", 60.0, gradient_fidelity);
    suite.run(3, "AUC oracle equivalence", 5.0, auc_oracle);
    suite.run(4, "sliding-window properties", 1.0, sliding_window);

    let mut oscillator: Option<Vec<OscillatorRun>> = None;
    suite.run(5, "end-to-end detection on oscillator-64", 600.0, || {
        let runs = oscillator_runs()?;
        let o = end_to_end(&runs);
        oscillator = Some(runs);
        o
    });
    suite.run(7, "nuisance robustness", 300.0, || {
        if oscillator.is_none() {
            oscillator = Some(oscillator_runs()?);
        }
        nuisance_robustness(oscillator.as_deref().unwrap_or_default())
    });
    suite.run(6, "ablation direction on sorter-64", 1200.0, ablation_direction);
    suite.run(8, "adapter accounting and transfer on shift-pair", 900.0, finetune_transfer);
    suite.run(9, "determinism of gen, train and eval", 600.0, determinism);

    if suite.failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{} criteria failed", suite.failed);
        ExitCode::FAILURE
    }
}
