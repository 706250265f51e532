//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vafnet::data::{load_csv, synth_regression, CsvSchema, Dataset, SynthRegression};
use vafnet::eval::{kfold, CvReport, CvSetup, HyperGrid, HyperValue};
use vafnet::linalg::Matrix;
use vafnet::network::{Layer, LayerGrad, Network};
use vafnet::optim::{Optimizer, OptimizerConfig};
use vafnet::train::TrainConfig;
use vafnet::vaf::{VafGrad, VafParams};
use vafnet::{parameter_count, ActivationKind, Architecture, VafInit};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn shrink(hidden: &[usize], w: usize) -> Vec<usize> {
    hidden.iter().map(|&m| (m * w).div_ceil(hidden[0])).collect()
}

// ---- 1: finite differences ----

const H: f64 = 1e-6;
const FD_TOL: f64 = 1e-5;

fn relu_pattern(net: &Network<f64>, x: &Matrix<f64>) -> Vec<bool> {
    let (_, tape) = net.forward(x).unwrap();
    let mut out = Vec::new();
    for (i, layer) in net.layers().iter().enumerate() {
        let input = tape.layer_input(i);
        match layer {
            Layer::Fixed {
                activation: ActivationKind::Relu,
            } => out.extend(input.as_slice().iter().map(|&v| v > 0.0)),
            Layer::Vaf { shared, params } if params[0].g() == ActivationKind::Relu => {
                for r in 0..input.rows() {
                    for c in 0..input.cols() {
                        let p = if *shared { &params[0] } else { &params[c] };
                        let a = input.get(r, c);
                        out.extend(p.alpha().iter().zip(p.alpha0()).map(|(al, a0)| al * a + a0 > 0.0));
                    }
                }
            }
            _ => {}
        }
    }
    out
}

fn half_sse(net: &Network<f64>, theta: &[f64], x: &Matrix<f64>, t: &Matrix<f64>) -> (f64, Vec<bool>) {
    let mut probe = net.clone();
    probe.set_params(theta).unwrap();
    let y = probe.predict(x).unwrap();
    let loss = y.as_slice().iter().zip(t.as_slice()).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum();
    (loss, relu_pattern(&probe, x))
}

/// Worst relative error, parameters checked, parameters skipped because a
/// perturbation crossed a ReLU kink.
fn fd_check(net: &Network<f64>, x: &Matrix<f64>, t: &Matrix<f64>) -> (f64, usize, usize) {
    let analytic = net.loss_and_gradient(x, t).unwrap().1.flatten();
    let theta = net.flatten_params();
    let base = relu_pattern(net, x);
    let (mut worst, mut checked, mut kinks) = (0.0f64, 0, 0);
    for i in 0..theta.len() {
        let mut plus = theta.clone();
        plus[i] += H;
        let mut minus = theta.clone();
        minus[i] -= H;
        let (lp, pp) = half_sse(net, &plus, x, t);
        let (lm, pm) = half_sse(net, &minus, x, t);
        let fd = (lp - lm) / (2.0 * H);
        let rel = (fd - analytic[i]).abs() / 1f64.max(fd.abs()).max(analytic[i].abs());
        if rel > FD_TOL && (pp != base || pm != base) {
            kinks += 1;
            continue;
        }
        checked += 1;
        worst = worst.max(rel);
    }
    (worst, checked, kinks)
}

fn gradient_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst, mut checked, mut kinks, mut nets) = (0.0f64, 0, 0, 0);
    for w in [5, 10] {
        for arch in Architecture::reference(Some(3)) {
            let arch = Architecture::vaf(&shrink(&arch.hidden, w), 3);
            for g in [ActivationKind::Tanh, ActivationKind::Relu] {
                let specs = arch.layer_specs(4, 3, ActivationKind::Relu, g, true);
                let net = Network::build(&specs, VafInit::Random, rng.random()).unwrap();
                let x = random_matrix(6, 4, &mut rng);
                let t = random_matrix(6, 3, &mut rng);
                let (wst, c, k) = fd_check(&net, &x, &t);
                worst = worst.max(wst);
                checked += c;
                kinks += k;
                nets += 1;
            }
        }
    }
    outcome(
        worst <= FD_TOL && kinks * 100 <= checked,
        format!("{nets} networks, {checked} parameters, worst relative error {worst:.1e}, {kinks} kink-crossing skipped"),
    )
}

// ---- 2: substitution ----

fn substitute_relu(net: &Network<f64>, k: usize) -> Network<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let layers = net
        .layers()
        .iter()
        .map(|l| match l {
            Layer::Fixed {
                activation: ActivationKind::Relu,
            } => Layer::Vaf {
                shared: true,
                params: vec![VafParams::init_specific_with_noise(k, ActivationKind::Relu, ActivationKind::Relu, 0.0, &mut rng).unwrap()],
            },
            other => other.clone(),
        })
        .collect();
    Network::from_layers(net.input_dim(), layers).unwrap()
}

fn substitution_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut counts_ok = parameter_count(true, &[(10, 3), (5, 3)]) == 20;
    for arch in Architecture::reference(None) {
        let arch = Architecture::standard(&shrink(&arch.hidden, 10));
        let specs = arch.layer_specs(4, 3, ActivationKind::Relu, ActivationKind::Relu, true);
        let plain: Network<f64> = Network::build(&specs, VafInit::Random, rng.random()).unwrap();
        let vaf = substitute_relu(&plain, 3);
        counts_ok &= vaf.param_count() - plain.param_count() == arch.hidden.len() * (3 * 3 + 1);
        for _ in 0..100 {
            let x = random_matrix(8, 4, &mut rng).scale(3.0);
            let a = plain.predict(&x).unwrap();
            let b = vaf.predict(&x).unwrap();
            for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
                worst = worst.max((u - v).abs());
            }
        }
    }
    outcome(
        worst <= 1e-12 && counts_ok,
        format!("10 architectures x 100 batches, max output difference {worst:.1e}, extra parameters L*(3k+1): {counts_ok}"),
    )
}

// ---- 3: shared gradient ----

fn random_vaf(k: usize, g: ActivationKind, rng: &mut ChaCha8Rng) -> VafParams<f64> {
    let mut v = || (0..k).map(|_| rng.random_range(-1.5..1.5)).collect::<Vec<f64>>();
    let (a, a0, b) = (v(), v(), v());
    VafParams::new(g, a, a0, b, rng.random_range(-1.0..1.0)).unwrap()
}

fn dense(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Layer<f64> {
    Layer::Dense {
        weight: random_matrix(rows, cols, rng),
        bias: (0..rows).map(|_| rng.random_range(-0.5..0.5)).collect(),
    }
}

fn shared_gradient_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let d = rng.random_range(1..5);
        let m = rng.random_range(1..7);
        let c = rng.random_range(1..4);
        let k = rng.random_range(1..6);
        let batch = rng.random_range(1..7);
        let g = ActivationKind::ALL[rng.random_range(0..4)];
        let p = random_vaf(k, g, &mut rng);
        let first = dense(m, d, &mut rng);
        let last = dense(c, m, &mut rng);
        let build = |shared: bool, params: Vec<VafParams<f64>>| {
            Network::from_layers(d, vec![first.clone(), Layer::Vaf { shared, params }, last.clone()]).unwrap()
        };
        let shared = build(true, vec![p.clone()]);
        let replicated = build(false, vec![p; m]);
        let x = random_matrix(batch, d, &mut rng);
        let t = random_matrix(batch, c, &mut rng);
        let (_, gs) = shared.loss_and_gradient(&x, &t).unwrap();
        let (_, gr) = replicated.loss_and_gradient(&x, &t).unwrap();
        let (LayerGrad::Vaf(sg), LayerGrad::Vaf(rg)) = (&gs.layers[1], &gr.layers[1]) else {
            return outcome(false, "VAF gradient missing");
        };
        let mut summed = VafGrad::zeros(k);
        for r in rg {
            summed.add_assign(r);
        }
        let (mut a, mut b) = (Vec::new(), Vec::new());
        sg[0].flatten_into(&mut a);
        summed.flatten_into(&mut b);
        for (u, v) in a.iter().zip(&b) {
            worst = worst.max((u - v).abs() / 1f64.max(v.abs()));
        }
    }
    outcome(worst <= 1e-10, format!("50 configurations, worst relative difference {worst:.1e}"))
}

// ---- 4: universality ----

/// Full-batch gradient descent on the MSE of one VAF against |x|.
/// Returns the final MSE and the iterations used.
fn fit_abs(start: VafParams<f64>, lr: f64, max_iter: usize) -> (f64, usize) {
    let xs: Vec<f64> = (0..201).map(|i| -2.0 + 4.0 * i as f64 / 200.0).collect();
    let (k, g) = (start.k(), start.g());
    let mut flat = Vec::new();
    start.flatten_into(&mut flat);
    let mut mse = f64::INFINITY;
    for it in 0..=max_iter {
        let p = VafParams::new(
            g,
            flat[..k].to_vec(),
            flat[k..2 * k].to_vec(),
            flat[2 * k..3 * k].to_vec(),
            flat[3 * k],
        )
        .unwrap();
        let mut grad = VafGrad::zeros(k);
        mse = 0.0;
        for &x in &xs {
            let r = p.eval(x) - x.abs();
            mse += r * r / xs.len() as f64;
            p.accumulate_backward(x, 2.0 * r / xs.len() as f64, &mut grad);
        }
        if mse < 1e-3 || it == max_iter {
            return (mse, it);
        }
        let mut gv = Vec::new();
        grad.flatten_into(&mut gv);
        for (a, b) in flat.iter_mut().zip(&gv) {
            *a -= lr * b;
        }
    }
    (mse, max_iter)
}

fn universality() -> (Outcome, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let start = VafParams::init_specific(15, ActivationKind::Tanh, ActivationKind::Relu, &mut rng).unwrap();
    let (mse, iters) = fit_abs(start, 0.1, 5000);
    let random = VafParams::init_random(15, ActivationKind::Tanh, &mut rng).unwrap();
    let (rmse, riters) = fit_abs(random, 0.1, 5000);
    (
        outcome(mse < 1e-3, format!("k=15 tanh from the ReLU-shaped start: MSE {mse:.2e} after {iters} iterations")),
        format!("same fit from a random start: MSE {rmse:.2e} after {riters} iterations"),
    )
}

// ---- 5 and 6: cross-validation ----

fn cv(ds: &Dataset<f64>, name: &str, models: &[&str], init: VafInit, seed: u64) -> CvReport {
    let k = 10;
    let n_train = (ds.len() - ds.len() / k) * 3 / 4;
    let mut setup = CvSetup::new(TrainConfig::auto(n_train, 1e-3), models[0].parse().unwrap());
    setup.vaf_init = init;
    let grid = HyperGrid::new()
        .axis("model", models.iter().map(|m| HyperValue::Text(m.to_string())).collect())
        .unwrap();
    kfold(ds, name, &setup, &grid, k, seed).unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

const SEEDS: [u64; 3] = [1, 2, 3];

fn wine() -> (Outcome, Vec<String>) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/wine.csv");
    let ds: Dataset<f64> = load_csv(path, &CsvSchema::classification(0)).unwrap();
    let mut info = Vec::new();
    let (mut std_acc, mut vaf_acc) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let a = cv(&ds, "wine", &["net_10", "net_25"], VafInit::Random, seed);
        let b = cv(&ds, "wine", &["vnet3_10", "vnet3_25"], VafInit::Random, seed);
        info.push(format!(
            "seed {seed}: standard {} / VAF random {}",
            a.summary_cell(),
            b.summary_cell()
        ));
        std_acc.push(a.mean);
        vaf_acc.push(b.mean);
    }
    let (s, v) = (mean(&std_acc), mean(&vaf_acc));
    (
        outcome(
            v >= s && v >= 0.90,
            format!("mean accuracy over seeds 1-3: standard {s:.4}, VAF random {v:.4} (need VAF >= standard and >= 0.90)"),
        ),
        info,
    )
}

fn sin_direction() -> (Outcome, Vec<String>) {
    let mut info = Vec::new();
    let (mut relu, mut vaf, mut vaf_relu_init) = (Vec::new(), Vec::new(), Vec::new());
    for seed in SEEDS {
        let ds: Dataset<f64> = synth_regression(SynthRegression::Sin, 500, 0.05, seed).unwrap();
        let a = cv(&ds, "sin", &["net_10"], VafInit::Random, seed);
        let b = cv(&ds, "sin", &["vnet3_10"], VafInit::Random, seed);
        let c = cv(&ds, "sin", &["vnet3_10"], VafInit::Specific(ActivationKind::Relu), seed);
        info.push(format!(
            "seed {seed}: ReLU {:.4} / VAF random {:.4} / VAF ReLU-init {:.4}",
            a.mean, b.mean, c.mean
        ));
        relu.push(a.mean);
        vaf.push(b.mean);
        vaf_relu_init.push(c.mean);
    }
    let (r, v, vr) = (mean(&relu), mean(&vaf), mean(&vaf_relu_init));
    let per_seed = relu.iter().zip(&vaf).filter(|(a, b)| b <= a).count();
    info.push(format!("VAF with ReLU init, mean over seeds: {vr:.4}"));
    (
        outcome(
            v <= r,
            format!("mean RMSE over seeds 1-3: ReLU {r:.4}, VAF random {v:.4}; VAF <= ReLU on {per_seed}/3 seeds"),
        ),
        info,
    )
}

// ---- 7: optimizers ----

fn quadratic_steps(cfg: OptimizerConfig, seed: u64) -> Option<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut opt = Optimizer::new(cfg).unwrap();
    for it in 0..=10_000 {
        if p.iter().map(|v| v * v).sum::<f64>() < 1e-6 {
            return Some(it);
        }
        let g: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
        opt.step(&mut p, &g).unwrap();
    }
    None
}

/// Scalar iRprop- on f(p) = p^2, written independently of the library.
fn rprop_oracle(p0: f64, step0: f64, iters: usize) -> Vec<(f64, f64)> {
    let (mut p, mut step, mut prev) = (p0, step0, 0.0f64);
    let mut out = Vec::new();
    for _ in 0..iters {
        let g = 2.0 * p;
        if prev * g > 0.0 {
            step = (step * 1.01).min(50.0);
            p -= g.signum() * step;
            prev = g;
        } else if prev * g < 0.0 {
            step = (step * 0.5).max(1e-6);
            prev = 0.0;
        } else {
            p -= if g == 0.0 { 0.0 } else { g.signum() * step };
            prev = g;
        }
        out.push((p, step));
    }
    out
}

fn optimizers() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for name in ["sgd", "adam", "rmsprop", "rprop"] {
        let steps: Vec<Option<usize>> = (0..5).map(|s| quadratic_steps(OptimizerConfig::defaults(name).unwrap(), s)).collect();
        let worst = steps.iter().map(|s| s.unwrap_or(usize::MAX)).max().unwrap();
        pass &= worst <= 10_000;
        parts.push(if worst <= 10_000 { format!("{name} {worst}") } else { format!("{name} >10000") });
    }
    let cfg = OptimizerConfig::Rprop {
        eta_plus: 1.01,
        eta_minus: 0.5,
        step_init: 0.1,
        step_min: 1e-6,
        step_max: 50.0,
    };
    let mut opt = Optimizer::new(cfg).unwrap();
    let mut p = [3.0f64];
    let oracle = rprop_oracle(3.0, 0.1, 60);
    let mut trace_ok = true;
    for &(want_p, want_step) in &oracle {
        let g = 2.0 * p[0];
        opt.step(&mut p, &[g]).unwrap();
        trace_ok &= p[0] == want_p && opt.rprop_steps().unwrap()[0] == want_step;
    }
    let flips = oracle.windows(2).filter(|w| w[1].1 < w[0].1).count();
    pass &= trace_ok && flips >= 2;
    outcome(
        pass,
        format!(
            "worst steps to 1e-6 over 5 starts: {}; Rprop trace matches oracle over {} steps with {flips} sign flips: {trace_ok}",
            parts.join(", "),
            oracle.len()
        ),
    )
}

// ---- 8: determinism ----

fn run_cli(args: &[String]) -> (bool, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_vafnet")).args(args).output().unwrap();
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    (out.status.success(), out.stdout)
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let wine = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/wine.csv");
    let mut compared = 0;
    let mut same = true;
    for rep in ["a", "b"] {
        let root = dir.path().join(rep);
        let arg = |s: &str| s.to_string();
        let p = |name: &str| root.join(name).display().to_string();
        let runs: Vec<Vec<String>> = vec![
            ["train", "--dataset", "synth:sin", "--model", "vnet3_10", "--epochs", "60", "--seed", "3", "--out"]
                .map(arg)
                .into_iter()
                .chain([p("train")])
                .collect(),
            [
                "kfold", "--dataset", &wine.display().to_string(), "--target", "0", "--folds", "5", "--epochs", "30", "--model",
                "net_10,vnet3_10", "--seed", "3", "--jobs", "2", "--out",
            ]
            .map(arg)
            .into_iter()
            .chain([p("kfold")])
            .collect(),
            [
                "kfold", "--dataset", "synth:abs", "--samples", "200", "--folds", "4", "--epochs", "20", "--optimizer",
                "adam", "--lr-grid", "0.001:0.01:3", "--batch-size", "32", "--seed", "3", "--out",
            ]
            .map(arg)
            .into_iter()
            .chain([p("grid")])
            .collect(),
        ];
        for args in &runs {
            if !run_cli(args).0 {
                return outcome(false, format!("command failed: {}", args.join(" ")));
            }
        }
        let curve = [
            "vaf-curve".to_string(),
            "--model".into(),
            p("train/model.json"),
            "--layer".into(),
            "1".into(),
            "--out".into(),
            p("curve.csv"),
        ];
        if !run_cli(&curve).0 {
            return outcome(false, "vaf-curve failed");
        }
    }
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let mut files = Vec::new();
    for sub in ["", "train", "kfold", "grid"] {
        for entry in fs::read_dir(a.join(sub)).unwrap() {
            let path = entry.unwrap().path();
            if path.is_file() {
                files.push(path.strip_prefix(&a).unwrap().to_path_buf());
            }
        }
    }
    files.sort();
    for f in &files {
        compared += 1;
        if fs::read(a.join(f)).unwrap() != fs::read(b.join(f)).unwrap() {
            same = false;
            eprintln!("differs: {}", f.display());
        }
    }
    outcome(same && compared >= 10, format!("{compared} output files byte-identical across reruns: {same}"))
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, f: &dyn Fn() -> (Outcome, Vec<String>)| {
        let start = Instant::now();
        let (o, info) = f();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n} {name}: {verdict} ({}) [{:.1}s]", o.detail, start.elapsed().as_secs_f64());
        for line in info {
            println!("    {line}");
        }
        if !o.pass {
            failed += 1;
        }
    };
    report(1, "gradient exactness", &|| (gradient_exactness(), vec![]));
    report(2, "substitution equivalence", &|| (substitution_equivalence(), vec![]));
    report(3, "shared-gradient oracle", &|| (shared_gradient_oracle(), vec![]));
    report(4, "universality", &|| {
        let (o, i) = universality();
        (o, vec![i])
    });
    report(5, "wine accuracy", &wine);
    report(6, "sin direction", &sin_direction);
    report(7, "optimizer suite", &|| (optimizers(), vec![]));
    report(8, "CLI determinism", &|| (cli_determinism(), vec![]));
    println!("{} of 8 criteria pass", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
