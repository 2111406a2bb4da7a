//! Experiment runners. Each writes its artifacts (history, metrics, model,
//! plot data) into an output directory.

use std::fs;
use std::path::Path;

use super::config::{Experiment, ExperimentConfig};
use super::data::{gen_flowmap_pairs, gen_planar_classification, gen_regression, reference_flow, Dataset, System};
use super::nets::{planar_network, regression_network, sir_network, splitting_network, Family};
use crate::blocks::{write_model, Layer, Network};
use crate::error::{Error, Result};
use crate::linalg;
use crate::robust::{certify, robust_accuracy, CertReport};
use crate::train::{accuracy, argmax, evaluate, train, History, LossSpec, Targets};

/// Named scalar results, written as `metric,value`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metrics(pub Vec<(String, f64)>);

impl Metrics {
    pub fn push(&mut self, name: impl Into<String>, value: f64) {
        self.0.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self.0.iter().map(|(n, v)| vec![n.clone(), v.to_string()]).collect();
        write_table(path, &["metric", "value"], rows)
    }
}

pub fn write_table(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn nums(v: &[f64]) -> Vec<String> {
    v.iter().map(f64::to_string).collect()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    match s.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => s[n / 2],
        n => 0.5 * (s[n / 2 - 1] + s[n / 2]),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Train, saving the partial history when training diverges.
fn fit(net: &mut Network, x: &[Vec<f64>], t: &Targets, loss: &LossSpec, cfg: &ExperimentConfig, seed: u64, history: Option<&Path>) -> Result<History> {
    match train(net, x, t, loss, &cfg.optim_config(seed)) {
        Ok(h) => {
            if let Some(p) = history {
                h.save(p)?;
            }
            Ok(h)
        }
        Err(Error::Diverged { epoch, loss, history: h }) => {
            if let Some(p) = history {
                h.save(p)?;
            }
            Err(Error::Diverged { epoch, loss, history: h })
        }
        Err(e) => Err(e),
    }
}

fn save_model(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, write_model(net))?;
    Ok(())
}

pub fn planar_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    gen_planar_classification(cfg.dataset.n_per_class, cfg.dataset.test_fraction, seed)
}

/// One trained planar classifier.
#[derive(Clone, Debug)]
pub struct PlanarRun {
    pub family: Family,
    pub seed: u64,
    pub net: Network,
    pub history: History,
    pub data: Dataset,
    pub test_acc: f64,
    pub train_acc: f64,
    pub total_time: f64,
    /// `(contractive, other)` integration time.
    pub regime_time: (f64, f64),
}

pub fn train_planar(cfg: &ExperimentConfig, family: Family, constrained: bool, seed: u64, history: Option<&Path>) -> Result<PlanarRun> {
    let data = planar_dataset(cfg, seed)?;
    let (x, t) = data.train_set();
    let (xt, tt) = data.test_set();
    let mut net = planar_network(&cfg.planar_spec(family, constrained), &mut linalg::rng(seed.wrapping_add(1000)))?;
    let hist = fit(&mut net, &x, &t, &LossSpec::Hinge { margin: cfg.optim.margin }, cfg, seed, history)?;
    let test_acc = accuracy(&net, &xt, tt.labels().expect("labels"))?;
    let train_acc = accuracy(&net, &x, t.labels().expect("labels"))?;
    let total_time = net.total_time();
    let regime_time = net.time_by_regime();
    Ok(PlanarRun { family, seed, net, history: hist, data, test_acc, train_acc, total_time, regime_time })
}

/// Half-width of the square plotted around the planar data.
const PLANAR_EXTENT: f64 = 3.0;

fn grid_axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn write_boundary(net: &Network, n: usize, path: &Path) -> Result<()> {
    let ax = grid_axis(-PLANAR_EXTENT, PLANAR_EXTENT, n);
    let pts: Vec<Vec<f64>> = ax.iter().flat_map(|&y| ax.iter().map(move |&x| vec![x, y])).collect();
    let out = net.forward_all(&pts)?;
    let rows = pts.iter().zip(&out).map(|(p, z)| nums(&[p[0], p[1], z[0], z[1], argmax(z) as f64, z[1] - z[0]])).collect();
    write_table(path, &["x", "y", "logit0", "logit1", "pred", "logit_gap"], rows)
}

fn write_points(net: &Network, data: &Dataset, path: &Path) -> Result<()> {
    let Targets::Labels(l) = &data.targets else { unreachable!() };
    let mut split = vec!["train"; data.inputs.len()];
    for &i in &data.test {
        split[i] = "test";
    }
    let mut rows = Vec::new();
    for (i, x) in data.inputs.iter().enumerate() {
        let pred = argmax(&net.forward(x)?);
        rows.push(vec![x[0].to_string(), x[1].to_string(), l[i].to_string(), split[i].to_string(), pred.to_string()]);
    }
    write_table(path, &["x", "y", "label", "split", "pred"], rows)
}

fn planar_metrics(run: &PlanarRun) -> Metrics {
    let mut m = Metrics::default();
    m.push("seed", run.seed as f64);
    m.push("test_acc", run.test_acc);
    m.push("train_acc", run.train_acc);
    m.push("total_time", run.total_time);
    m.push("time_contractive", run.regime_time.0);
    m.push("time_expansive", run.regime_time.1);
    m.push("lipschitz_bound", run.net.lipschitz_bound());
    m.push("final_loss", run.history.last_loss().unwrap_or(f64::NAN));
    m
}

fn run_classify(cfg: &ExperimentConfig, out: &Path) -> Result<Metrics> {
    let run = train_planar(cfg, cfg.network.family, cfg.network.constrained, cfg.seed, Some(&out.join("history.csv")))?;
    save_model(&run.net, &out.join("model.txt"))?;
    write_boundary(&run.net, cfg.dataset.grid, &out.join("boundary.csv"))?;
    write_points(&run.net, &run.data, &out.join("points.csv"))?;
    Ok(planar_metrics(&run))
}

/// Certify the test split of `run` with the configured attack.
pub fn certify_planar(cfg: &ExperimentConfig, net: &Network, data: &Dataset) -> Result<CertReport> {
    let (xt, tt) = data.test_set();
    certify(net, &xt, tt.labels().expect("labels"), cfg.robust.cert_fraction, &cfg.cert_attack(data.seed))
}

/// Accuracy under attack at each budget (budget 0 is clean accuracy).
pub fn accuracy_curve(cfg: &ExperimentConfig, net: &Network, data: &Dataset) -> Result<Vec<(f64, f64)>> {
    let (xt, tt) = data.test_set();
    let labels = tt.labels().expect("labels");
    let mut out = vec![(0.0, accuracy(net, &xt, labels)?)];
    for &eps in &cfg.robust.eps {
        out.push((eps, robust_accuracy(net, &xt, labels, &cfg.attack(eps, data.seed))?));
    }
    Ok(out)
}

/// Robust accuracy of the constrained network and the baseline, per budget.
#[derive(Clone, Debug, PartialEq)]
pub struct RobustRow {
    pub eps: f64,
    pub constrained: f64,
    pub baseline: f64,
}

fn robust_pair(cfg: &ExperimentConfig, seed: u64, out: Option<&Path>) -> Result<(Vec<RobustRow>, PlanarRun, PlanarRun)> {
    let hist = |name: &str| out.map(|o| o.join(format!("history_{name}.csv")));
    let c = train_planar(cfg, cfg.network.family, true, seed, hist("constrained").as_deref())?;
    let b = train_planar(cfg, cfg.network.family, false, seed, hist("baseline").as_deref())?;
    let cc = accuracy_curve(cfg, &c.net, &c.data)?;
    let bc = accuracy_curve(cfg, &b.net, &b.data)?;
    let rows = cc.iter().zip(&bc).map(|(&(eps, a), &(_, b))| RobustRow { eps, constrained: a, baseline: b }).collect();
    Ok((rows, c, b))
}

fn write_curve(rows: &[RobustRow], path: &Path) -> Result<()> {
    let rows = rows.iter().map(|r| nums(&[r.eps, r.constrained, r.baseline])).collect();
    write_table(path, &["eps", "constrained", "baseline"], rows)
}

/// Mean robust accuracy over seeds `cfg.seed .. cfg.seed + seeds`.
pub fn robust_curve(cfg: &ExperimentConfig, seeds: usize) -> Result<Vec<RobustRow>> {
    let per_seed = crate::par::map_range(seeds, |i| robust_pair(cfg, cfg.seed + i as u64, None).map(|r| r.0));
    let per_seed: Vec<Vec<RobustRow>> = per_seed.into_iter().collect::<Result<_>>()?;
    let mut rows = per_seed[0].clone();
    for (j, r) in rows.iter_mut().enumerate() {
        r.constrained = mean(&per_seed.iter().map(|s| s[j].constrained).collect::<Vec<_>>());
        r.baseline = mean(&per_seed.iter().map(|s| s[j].baseline).collect::<Vec<_>>());
    }
    Ok(rows)
}

fn run_robust(cfg: &ExperimentConfig, out: &Path) -> Result<Metrics> {
    let (rows, c, b) = robust_pair(cfg, cfg.seed, Some(out))?;
    save_model(&c.net, &out.join("model_constrained.txt"))?;
    save_model(&b.net, &out.join("model_baseline.txt"))?;
    write_curve(&rows, &out.join("accuracy_eps.csv"))?;
    let report = certify_planar(cfg, &c.net, &c.data)?;
    report.save(&out.join("certification.csv"))?;
    let mut m = Metrics::default();
    m.push("seed", cfg.seed as f64);
    m.push("lipschitz_constrained", c.net.lipschitz_bound());
    m.push("lipschitz_baseline", b.net.lipschitz_bound());
    m.push("certified_fraction", report.certified() as f64 / report.rows.len().max(1) as f64);
    for r in &rows {
        m.push(format!("acc_constrained@{}", r.eps), r.constrained);
        m.push(format!("acc_baseline@{}", r.eps), r.baseline);
    }
    Ok(m)
}

/// Trained regression network with its test error and grid maximum error.
#[derive(Clone, Debug)]
pub struct RegressionRun {
    pub net: Network,
    pub history: History,
    pub test_mse: f64,
    pub max_error: f64,
}

fn regression_grid(cfg: &ExperimentConfig) -> Vec<Vec<f64>> {
    let ax = grid_axis(-2.0, 2.0, cfg.dataset.grid);
    match cfg.dataset.target.dim() {
        1 => ax.iter().map(|&x| vec![x]).collect(),
        _ => ax.iter().flat_map(|&y| ax.iter().map(move |&x| vec![x, y])).collect(),
    }
}

pub fn train_regression(cfg: &ExperimentConfig, seed: u64, history: Option<&Path>) -> Result<RegressionRun> {
    let target = cfg.dataset.target;
    let data = gen_regression(target, cfg.dataset.n, cfg.dataset.test_fraction, seed)?;
    let (x, t) = data.train_set();
    let (xt, tt) = data.test_set();
    let n = &cfg.network;
    let mut net = regression_network(target.dim(), n.width, n.stages, &cfg.presnov_options(), &mut linalg::rng(seed.wrapping_add(7)))?;
    let hist = fit(&mut net, &x, &t, &LossSpec::Mse, cfg, seed, history)?;
    let test_mse = evaluate(&net, &LossSpec::Mse, &xt, &tt)?;
    let grid = regression_grid(cfg);
    let pred = net.forward_all(&grid)?;
    let max_error = grid.iter().zip(&pred).map(|(g, p)| (p[0] - target.eval(g)).abs()).fold(0.0, f64::max);
    Ok(RegressionRun { net, history: hist, test_mse, max_error })
}

fn run_regression(cfg: &ExperimentConfig, out: &Path) -> Result<Metrics> {
    let run = train_regression(cfg, cfg.seed, Some(&out.join("history.csv")))?;
    save_model(&run.net, &out.join("model.txt"))?;
    let grid = regression_grid(cfg);
    let pred = run.net.forward_all(&grid)?;
    let target = cfg.dataset.target;
    let rows = grid
        .iter()
        .zip(&pred)
        .map(|(g, p)| {
            let mut r = g.clone();
            r.extend([target.eval(g), p[0]]);
            nums(&r)
        })
        .collect();
    let header: &[&str] = if target.dim() == 1 { &["x", "true", "pred"] } else { &["x", "y", "true", "pred"] };
    write_table(&out.join("curve.csv"), header, rows)?;
    let mut m = Metrics::default();
    m.push("seed", cfg.seed as f64);
    m.push("test_mse", run.test_mse);
    m.push("max_abs_error", run.max_error);
    m.push("total_time", run.net.total_time());
    m.push("final_loss", run.history.last_loss().unwrap_or(f64::NAN));
    Ok(m)
}

/// Trained flow-map network and its test errors.
#[derive(Clone, Debug)]
pub struct FlowmapRun {
    pub net: Network,
    pub history: History,
    pub data: Dataset,
    pub test_mse: f64,
    /// Largest `|𝟏ᵀN(x) − 𝟏ᵀx|` over the test inputs.
    pub max_mass_error: f64,
}

pub fn train_sir(cfg: &ExperimentConfig, seed: u64, history: Option<&Path>) -> Result<FlowmapRun> {
    let data = gen_flowmap_pairs(System::Sir, cfg.dataset.h, cfg.dataset.n, &[], cfg.dataset.test_fraction, seed)?;
    let (x, t) = data.train_set();
    let (xt, tt) = data.test_set();
    let n = &cfg.network;
    let s = n.lift_dim.unwrap_or(System::Sir.dim());
    let mut net = sir_network(s, n.depth, n.hidden, n.slope, &mut linalg::rng(seed.wrapping_add(11)))?;
    let hist = fit(&mut net, &x, &t, &LossSpec::FlowmapMse, cfg, seed, history)?;
    let test_mse = evaluate(&net, &LossSpec::FlowmapMse, &xt, &tt)?;
    let mut max_mass_error: f64 = 0.0;
    for (xi, yi) in xt.iter().zip(net.forward_all(&xt)?) {
        max_mass_error = max_mass_error.max((yi.iter().sum::<f64>() - xi.iter().sum::<f64>()).abs());
    }
    Ok(FlowmapRun { net, history: hist, data, test_mse, max_mass_error })
}

/// Initial state of the plotted SIR trajectory.
const SIR_START: [f64; 3] = [0.9, 0.1, 0.0];

fn run_sir(cfg: &ExperimentConfig, out: &Path) -> Result<Metrics> {
    let run = train_sir(cfg, cfg.seed, Some(&out.join("history.csv")))?;
    save_model(&run.net, &out.join("model.txt"))?;
    // Repeated application of the learned flow map next to the reference.
    let (mut r, mut p) = (SIR_START.to_vec(), SIR_START.to_vec());
    let mut rows = Vec::new();
    for k in 0..=cfg.dataset.grid {
        let mut row = vec![k as f64 * cfg.dataset.h];
        row.extend(&r);
        row.extend(&p);
        row.push(p.iter().sum());
        rows.push(nums(&row));
        r = reference_flow(System::Sir, cfg.dataset.h, &r);
        p = run.net.forward(&p)?;
    }
    write_table(&out.join("trajectory.csv"), &["t", "s_ref", "i_ref", "r_ref", "s_net", "i_net", "r_net", "mass_net"], rows)?;
    let mut m = Metrics::default();
    m.push("seed", cfg.seed as f64);
    m.push("test_mse", run.test_mse);
    m.push("max_mass_error", run.max_mass_error);
    m.push("final_loss", run.history.last_loss().unwrap_or(f64::NAN));
    Ok(m)
}

/// Sum of the fields of the splitting step: the learned vector field.
pub fn learned_field(net: &Network, x: &[f64]) -> Result<Vec<f64>> {
    let mut f = vec![0.0; x.len()];
    for layer in net.layers() {
        let Layer::Flow(b) = layer else {
            return Err(Error::Incompatible("learned field needs a network of flow layers".into()));
        };
        for s in b.steps() {
            linalg::axpy(&mut f, 1.0, &s.field().eval(x)?);
        }
    }
    Ok(f)
}

/// Trained splitting network for `x1`/`x2` with its errors.
#[derive(Clone, Debug)]
pub struct SplittingRun {
    pub net: Network,
    pub history: History,
    pub test_residual: f64,
    pub test_mse: f64,
    /// `‖X − X_θ‖ / ‖X‖` over the test inputs.
    pub field_error: f64,
}

pub fn train_splitting(cfg: &ExperimentConfig, seed: u64, history: Option<&Path>) -> Result<SplittingRun> {
    let sys = cfg.dataset.system;
    let data = gen_flowmap_pairs(sys, cfg.dataset.h, cfg.dataset.n, &cfg.domain(), cfg.dataset.test_fraction, seed)?;
    let (x, t) = data.train_set();
    let (xt, tt) = data.test_set();
    let n = &cfg.network;
    let mut net = splitting_network(sys.dim(), cfg.dataset.h, n.grad_width, n.sphere_hidden, n.slope, &mut linalg::rng(seed.wrapping_add(11)))?;
    let hist = fit(&mut net, &x, &t, &LossSpec::DiscreteGradResidual, cfg, seed, history)?;
    let test_residual = evaluate(&net, &LossSpec::DiscreteGradResidual, &xt, &tt)?;
    let test_mse = evaluate(&net, &LossSpec::FlowmapMse, &xt, &tt)?;
    let (mut num, mut den) = (0.0, 0.0);
    for p in &xt {
        let f = learned_field(&net, p)?;
        let g = sys.field(p);
        num += linalg::norm(&linalg::sub(&f, &g)).powi(2);
        den += linalg::norm(&g).powi(2);
    }
    Ok(SplittingRun { net, history: hist, test_residual, test_mse, field_error: (num / den).sqrt() })
}

fn run_flowmap(cfg: &ExperimentConfig, out: &Path) -> Result<Metrics> {
    let run = train_splitting(cfg, cfg.seed, Some(&out.join("history.csv")))?;
    save_model(&run.net, &out.join("model.txt"))?;
    // Phase portrait over the first two coordinates, the rest at the box centre.
    let dom = cfg.domain();
    let centre: Vec<f64> = dom.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
    let (a0, a1) = (grid_axis(dom[0].0, dom[0].1, cfg.dataset.grid), grid_axis(dom[1].0, dom[1].1, cfg.dataset.grid));
    let mut rows = Vec::new();
    for &v in &a1 {
        for &u in &a0 {
            let mut p = centre.clone();
            p[0] = u;
            p[1] = v;
            let t = cfg.dataset.system.field(&p);
            let f = learned_field(&run.net, &p)?;
            rows.push(nums(&[u, v, t[0], t[1], f[0], f[1]]));
        }
    }
    write_table(&out.join("phase.csv"), &["x1", "x2", "true_1", "true_2", "pred_1", "pred_2"], rows)?;
    let mut m = Metrics::default();
    m.push("seed", cfg.seed as f64);
    m.push("test_residual", run.test_residual);
    m.push("test_mse", run.test_mse);
    m.push("field_rel_error", run.field_error);
    m.push("final_loss", run.history.last_loss().unwrap_or(f64::NAN));
    Ok(m)
}

fn prepare(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;
    Ok(())
}

/// Train once at `cfg.seed` and write all artifacts into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Metrics> {
    prepare(cfg, out)?;
    let m = match cfg.experiment {
        Experiment::ClassifyPlanar => run_classify(cfg, out)?,
        Experiment::RobustPlanar => run_robust(cfg, out)?,
        Experiment::Regression => run_regression(cfg, out)?,
        Experiment::SirFlowmap => run_sir(cfg, out)?,
        Experiment::Flowmap => run_flowmap(cfg, out)?,
    };
    m.save(&out.join("metrics.csv"))?;
    Ok(m)
}

/// Summary of a planar family over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct FamilySummary {
    pub family: Family,
    pub median_test_acc: f64,
    pub median_total_time: f64,
    pub mean_time_contractive: f64,
    pub mean_time_expansive: f64,
}

/// Train `family` at seeds `cfg.seed .. cfg.seed + seeds` in parallel.
pub fn planar_sweep(cfg: &ExperimentConfig, family: Family, seeds: usize) -> Result<Vec<PlanarRun>> {
    crate::par::map_range(seeds, |i| train_planar(cfg, family, cfg.network.constrained, cfg.seed + i as u64, None))
        .into_iter()
        .collect()
}

pub fn summarize(family: Family, runs: &[PlanarRun]) -> FamilySummary {
    let col = |f: &dyn Fn(&PlanarRun) -> f64| runs.iter().map(f).collect::<Vec<_>>();
    FamilySummary {
        family,
        median_test_acc: median(&col(&|r| r.test_acc)),
        median_total_time: median(&col(&|r| r.total_time)),
        mean_time_contractive: mean(&col(&|r| r.regime_time.0)),
        mean_time_expansive: mean(&col(&|r| r.regime_time.1)),
    }
}

/// Metrics of every seed, one row per seed.
fn seed_table(cfg: &ExperimentConfig, out: &Path, f: impl Fn(&ExperimentConfig) -> Result<Metrics> + Sync + Send) -> Result<Metrics> {
    let runs: Vec<Metrics> = crate::par::map_range(cfg.seeds, |i| {
        let c = ExperimentConfig { seed: cfg.seed + i as u64, ..cfg.clone() };
        f(&c)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let header: Vec<&str> = runs[0].0.iter().map(|(n, _)| n.as_str()).collect();
    let rows = runs.iter().map(|m| nums(&m.0.iter().map(|&(_, v)| v).collect::<Vec<_>>())).collect();
    write_table(&out.join("sweep.csv"), &header, rows)?;
    let mut summary = Metrics::default();
    for (j, name) in header.iter().enumerate().filter(|(_, n)| **n != "seed") {
        summary.push(format!("median_{name}"), median(&runs.iter().map(|m| m.0[j].1).collect::<Vec<_>>()));
    }
    Ok(summary)
}

/// Run `cfg.seeds` seeds and write per-seed and aggregate tables into `out`.
pub fn sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Metrics> {
    prepare(cfg, out)?;
    let mut m = Metrics::default();
    match cfg.experiment {
        Experiment::ClassifyPlanar => {
            let mut rows = Vec::new();
            let mut summary = Vec::new();
            for &family in &cfg.network.families {
                let runs = planar_sweep(cfg, family, cfg.seeds)?;
                for r in &runs {
                    let mut row = vec![family.name().to_string()];
                    row.extend(nums(&[r.seed as f64, r.test_acc, r.train_acc, r.total_time, r.regime_time.0, r.regime_time.1]));
                    rows.push(row);
                }
                let s = summarize(family, &runs);
                m.push(format!("{}_median_test_acc", family.name()), s.median_test_acc);
                m.push(format!("{}_median_total_time", family.name()), s.median_total_time);
                let mut row = vec![family.name().to_string()];
                row.extend(nums(&[s.median_test_acc, s.median_total_time, s.mean_time_contractive, s.mean_time_expansive]));
                summary.push(row);
            }
            write_table(
                &out.join("sweep.csv"),
                &["family", "seed", "test_acc", "train_acc", "total_time", "time_contractive", "time_expansive"],
                rows,
            )?;
            write_table(
                &out.join("summary.csv"),
                &["family", "median_test_acc", "median_total_time", "mean_time_contractive", "mean_time_expansive"],
                summary,
            )?;
        }
        Experiment::RobustPlanar => {
            let rows = robust_curve(cfg, cfg.seeds)?;
            write_curve(&rows, &out.join("accuracy_eps.csv"))?;
            for r in &rows {
                m.push(format!("acc_constrained@{}", r.eps), r.constrained);
                m.push(format!("acc_baseline@{}", r.eps), r.baseline);
            }
        }
        Experiment::Regression => {
            m = seed_table(cfg, out, |c| {
                let r = train_regression(c, c.seed, None)?;
                Ok(Metrics(vec![("seed".into(), c.seed as f64), ("test_mse".into(), r.test_mse), ("max_abs_error".into(), r.max_error)]))
            })?
        }
        Experiment::SirFlowmap => {
            m = seed_table(cfg, out, |c| {
                let r = train_sir(c, c.seed, None)?;
                Ok(Metrics(vec![("seed".into(), c.seed as f64), ("test_mse".into(), r.test_mse), ("max_mass_error".into(), r.max_mass_error)]))
            })?
        }
        Experiment::Flowmap => {
            m = seed_table(cfg, out, |c| {
                let r = train_splitting(c, c.seed, None)?;
                Ok(Metrics(vec![
                    ("seed".into(), c.seed as f64),
                    ("test_residual".into(), r.test_residual),
                    ("test_mse".into(), r.test_mse),
                    ("field_rel_error".into(), r.field_error),
                ]))
            })?
        }
    }
    m.save(&out.join("metrics.csv"))?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn metrics_lookup() {
        let mut m = Metrics::default();
        m.push("a", 1.0);
        assert_eq!(m.get("a"), Some(1.0));
        assert_eq!(m.get("b"), None);
    }
}
