use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use vafnet::eval::{format_table, kfold, CvReport, CvSetup, HyperGrid, HyperValue, MetricKind};
use vafnet::network::{Layer, Network};
use vafnet::train::{train, Batching, TrainConfig};
use vafnet::{parameter_count, Architecture, VafInit};

use crate::config::Experiment;

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn describe_training(cfg: &TrainConfig) -> String {
    let batching = match cfg.batching {
        Batching::Full => "full batch".to_string(),
        Batching::MiniBatch { size, .. } => format!("mini-batches of {size}"),
    };
    format!("{}, {batching}", cfg.optimizer)
}

fn describe_vaf(exp: &Experiment, arch: &Architecture, init: VafInit) -> String {
    match arch.vaf_k {
        Some(_) => format!(
            "{arch} ({}, g={}, init={init})",
            if exp.shared { "shared" } else { "per neuron" },
            exp.g
        ),
        None => format!("{arch} (hidden {})", exp.hidden_activation),
    }
}

/// 60/20/20 split, normalized with training statistics, then one run of
/// the early-stopping loop. Returns the one-line summary.
pub fn cmd_train(exp: &Experiment) -> Result<String> {
    let ds = exp.load_dataset()?;
    let parts = ds.split(&[0.6, 0.2, 0.2], exp.seed, ds.task().is_classification())?;
    let stats = parts[0].fit_normalization();
    let train_set = parts[0].normalize_with(&stats)?;
    let val_set = parts[1].normalize_with(&stats)?;
    let test_set = parts[2].normalize_with(&stats)?;

    let arch = &exp.models[0];
    let init = exp.inits[0];
    let specs = arch.layer_specs(ds.n_features(), ds.n_outputs(), exp.hidden_activation, exp.g, exp.shared);
    let net: Network<f64> = Network::build(&specs, init, exp.seed)?;
    let cfg = exp.train_config(train_set.len(), exp.lrs[0])?;
    let (best, trace) = train(&net, &train_set, &val_set, &cfg)?;
    let metric = MetricKind::for_dataset(&ds);
    let score = metric.score(&best, &test_set)?;

    create_out(&exp.out)?;
    best.save(exp.out.join("model.json"))?;
    write(&exp.out.join("trace.csv"), &trace.to_csv())?;
    write(
        &exp.out.join("normalization.json"),
        &serde_json::to_string_pretty(&stats).context("cannot encode normalization")?,
    )?;

    let final_t = trace.error_t.last().copied().unwrap_or(f64::NAN);
    let line = format!(
        "{}: {} epochs, best epoch {}, best validation loss {:.6}, final training loss {:.6}, test {} {:.4}",
        exp.label,
        trace.epochs(),
        trace.best_epoch,
        trace.best_val_error,
        final_t,
        metric.name(),
        score
    );
    let mut summary = String::new();
    writeln!(summary, "dataset: {} ({} rows, {} features, {} outputs)", exp.label, ds.len(), ds.n_features(), ds.n_outputs())?;
    writeln!(summary, "model: {}, {} parameters", describe_vaf(exp, arch, init), best.param_count())?;
    writeln!(summary, "training: {}", describe_training(&cfg))?;
    writeln!(summary, "split: {} train / {} validation / {} test", train_set.len(), val_set.len(), test_set.len())?;
    writeln!(
        summary,
        "epochs: {} of {}{}",
        trace.epochs(),
        cfg.max_epochs,
        if trace.stopped_early { " (early stop)" } else { "" }
    )?;
    writeln!(summary, "best epoch: {}", trace.best_epoch)?;
    writeln!(summary, "best validation loss: {}", trace.best_val_error)?;
    writeln!(summary, "final training loss: {final_t}")?;
    writeln!(summary, "test {}: {score}", metric.name())?;
    write(&exp.out.join("summary.txt"), &summary)?;
    Ok(line)
}

fn column_label(exp: &Experiment) -> String {
    let all_vaf = exp.models.iter().all(|m| m.vaf_k.is_some());
    let none_vaf = exp.models.iter().all(|m| m.vaf_k.is_none());
    match (none_vaf, all_vaf, exp.inits.as_slice()) {
        (true, _, _) => format!("standard {}", exp.hidden_activation),
        (_, true, [init]) => format!("VAF init {init}"),
        _ => "mixed".to_string(),
    }
}

/// Builds the grid and setup for `kfold` from resolved settings.
pub fn cv_plan(exp: &Experiment, n_rows: usize) -> Result<(CvSetup, HyperGrid)> {
    let k = exp.folds.max(1);
    let n_train = (n_rows - n_rows / k) * 3 / 4;
    let base = exp.train_config(n_train, exp.lrs[0])?;
    let uses_lr = base.optimizer.lr().is_some();
    let mut setup = CvSetup::new(base, exp.models[0].clone());
    setup.hidden_activation = exp.hidden_activation;
    setup.vaf_g = exp.g;
    setup.shared = exp.shared;
    setup.vaf_init = exp.inits[0];
    setup.selection = exp.select;
    setup.jobs = exp.jobs;

    let mut grid = HyperGrid::new().axis(
        "model",
        exp.models.iter().map(|m| HyperValue::Text(m.to_string())).collect(),
    )?;
    let any_vaf = exp.models.iter().any(|m| m.vaf_k.is_some());
    if any_vaf && exp.inits.len() > 1 {
        grid = grid.axis("init", exp.inits.iter().map(|i| HyperValue::Text(i.to_string())).collect())?;
    }
    if uses_lr && exp.lrs.len() > 1 {
        grid = grid.axis("lr", exp.lrs.iter().map(|&l| HyperValue::Num(l)).collect())?;
    }
    Ok((setup, grid))
}

pub fn report_text(exp: &Experiment, report: &CvReport) -> String {
    let label = column_label(exp);
    let mut out = format_table(&[(label.as_str(), report)]);
    out.push('\n');
    for f in &report.folds {
        let _ = writeln!(out, "fold {:>2}: {:.4}  {}", f.fold + 1, f.best_metric, f.best_params);
    }
    let _ = writeln!(out, "mean: {:.4}  std: {:.4}", report.mean, report.std);
    out
}

pub fn cmd_kfold(exp: &Experiment) -> Result<String> {
    let ds = exp.load_dataset()?;
    let (setup, grid) = cv_plan(exp, ds.len())?;
    let report = kfold(&ds, &exp.label, &setup, &grid, exp.folds, exp.seed)?;
    create_out(&exp.out)?;
    write(&exp.out.join("cv_report.csv"), &report.to_csv())?;
    write(&exp.out.join("cv_scores.csv"), &report.scores_csv())?;
    write(&exp.out.join("cv_report.txt"), &report_text(exp, &report))?;
    Ok(format!("{} {}: {}", exp.label, report.metric.name(), report.summary_cell()))
}

/// `(a, z)` rows of the VAF at `layer`, one `z` column per parameter set.
pub fn vaf_curve(net: &Network<f64>, layer: usize, lo: f64, hi: f64, samples: usize) -> Result<String> {
    let Some(found) = net.layers().get(layer) else {
        bail!("the model has {} layers; there is no layer {layer}", net.layers().len());
    };
    let Layer::Vaf { shared, params } = found else {
        let vafs: Vec<String> = net
            .layers()
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Vaf { .. }))
            .map(|(i, _)| i.to_string())
            .collect();
        bail!(
            "layer {layer} is not a VAF layer (VAF layers: {})",
            if vafs.is_empty() { "none".to_string() } else { vafs.join(", ") }
        );
    };
    if samples == 0 {
        bail!("samples must be at least 1");
    }
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        bail!("range must satisfy from <= to");
    }
    let mut out = String::from("a");
    if *shared {
        out.push_str(",z");
    } else {
        for j in 0..params.len() {
            let _ = write!(out, ",z{j}");
        }
    }
    out.push('\n');
    for i in 0..samples {
        let a = if samples == 1 {
            lo
        } else {
            lo + (hi - lo) * i as f64 / (samples - 1) as f64
        };
        let _ = write!(out, "{a}");
        for p in params {
            let _ = write!(out, ",{}", p.eval(a));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn cmd_vaf_curve(model: &Path, layer: usize, lo: f64, hi: f64, samples: usize, out: Option<&PathBuf>) -> Result<String> {
    let net: Network<f64> = Network::load(model)?;
    let csv = vaf_curve(&net, layer, lo, hi, samples)?;
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_out(dir)?;
            }
            write(path, &csv)?;
            Ok(format!("wrote {samples} rows to {}", path.display()))
        }
        None => Ok(csv.trim_end().to_string()),
    }
}

/// Per-layer parameter table of a network.
pub fn inspect_network(net: &Network<f64>) -> String {
    let mut out = String::new();
    let mut dim = net.input_dim();
    let mut vaf_layers = Vec::new();
    let mut shared_all = true;
    for (i, layer) in net.layers().iter().enumerate() {
        let desc = match layer {
            Layer::Dense { weight, .. } => {
                dim = weight.rows();
                format!("dense {} -> {}", weight.cols(), weight.rows())
            }
            Layer::Fixed { activation } => format!("{activation}"),
            Layer::Vaf { shared, params } => {
                vaf_layers.push((dim, params[0].k()));
                shared_all &= *shared;
                format!(
                    "vaf k={} g={} {}",
                    params[0].k(),
                    params[0].g(),
                    if *shared { "shared" } else { "per neuron" }
                )
            }
        };
        let _ = writeln!(out, "layer {i:>2}  {desc:<28} {:>8}", layer.param_count());
    }
    let _ = writeln!(out, "{:<38} {:>8}", "total", net.param_count());
    if !vaf_layers.is_empty() {
        let count = parameter_count(shared_all, &vaf_layers);
        let terms: Vec<String> = vaf_layers
            .iter()
            .map(|&(n, k)| if shared_all { format!("(3*{k}+1)") } else { format!("{n}*(3*{k}+1)") })
            .collect();
        let _ = writeln!(out, "vaf parameters: {count} = {}", terms.join(" + "));
    }
    out
}

pub fn cmd_inspect_arch(arch: &Architecture, inputs: usize, outputs: usize, shared: bool) -> Result<String> {
    let specs = arch.layer_specs(inputs, outputs, vafnet::ActivationKind::Relu, vafnet::ActivationKind::Relu, shared);
    let net: Network<f64> = Network::build(&specs, VafInit::Random, 0)?;
    Ok(format!("{arch} ({inputs} -> {outputs})\n{}", inspect_network(&net).trim_end()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use vafnet::vaf::VafParams;
    use vafnet::ActivationKind;

    fn relu_vaf_net() -> Network<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let p = VafParams::init_specific(3, ActivationKind::Relu, ActivationKind::Relu, &mut rng).unwrap();
        Network::from_layers(
            1,
            vec![
                Layer::Dense {
                    weight: vafnet::linalg::Matrix::from_rows(&[[1.0]]).unwrap(),
                    bias: vec![0.0],
                },
                Layer::Vaf {
                    shared: true,
                    params: vec![p],
                },
            ],
        )
        .unwrap()
    }

    use rand::SeedableRng;

    #[test]
    fn relu_curve_on_five_points() {
        let csv = vaf_curve(&relu_vaf_net(), 1, -2.0, 2.0, 5).unwrap();
        let rows: Vec<Vec<f64>> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect();
        assert_eq!(csv.lines().next(), Some("a,z"));
        let want = [0.0, 0.0, 0.0, 1.0, 2.0];
        for (row, w) in rows.iter().zip(want) {
            assert_eq!(row.len(), 2);
            assert!((row[1] - w).abs() < 1e-3);
        }
        assert!(vaf_curve(&relu_vaf_net(), 0, -2.0, 2.0, 5).is_err());
        assert!(vaf_curve(&relu_vaf_net(), 7, -2.0, 2.0, 5).is_err());
    }

    #[test]
    fn inspect_reports_shared_formula() {
        let text = cmd_inspect_arch(&"vnet3_50_25".parse().unwrap(), 13, 3, true).unwrap();
        assert!(text.contains("vaf parameters: 20 = (3*3+1) + (3*3+1)"), "{text}");
        let text = cmd_inspect_arch(&"vnet3_50".parse().unwrap(), 4, 1, false).unwrap();
        assert!(text.contains("vaf parameters: 500 = 50*(3*3+1)"), "{text}");
    }
}
