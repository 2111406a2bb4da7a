//! Experiment configuration files.
//!
//! A config is TOML with top-level `experiment`, `seed`, `seeds`, `out`
//! and the sections `[network]`, `[optim]`, `[dataset]`, `[robust]`. Keys
//! left out take the preset value of the chosen experiment; unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::data::{RegressionTarget, System};
use super::nets::{Family, PlanarSpec};
use crate::blocks::{BlockPattern, GradScheme, PresnovOptions};
use crate::error::{Error, Result};
use crate::fields::Activation;
use crate::robust::AttackConfig;
use crate::train::OptimConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    /// Two-class planar classification with a Lipschitz residual network.
    ClassifyPlanar,
    /// Accuracy under PGD of a constrained network and an unconstrained baseline.
    RobustPlanar,
    /// Scalar regression with a Presnov-block network.
    Regression,
    /// Time-`h` flow map of the SIR model with a mass-preserving network.
    SirFlowmap,
    /// Flow map of `x1` or `x2` with a sphere/discrete-gradient splitting step.
    Flowmap,
}

impl Experiment {
    pub const ALL: [Experiment; 5] =
        [Experiment::ClassifyPlanar, Experiment::RobustPlanar, Experiment::Regression, Experiment::SirFlowmap, Experiment::Flowmap];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::ClassifyPlanar => "classify-planar",
            Experiment::RobustPlanar => "robust-planar",
            Experiment::Regression => "regression",
            Experiment::SirFlowmap => "sir-flowmap",
            Experiment::Flowmap => "flowmap",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment `{s}` (expected one of {})", names())))
    }
}

fn names() -> String {
    Experiment::ALL.iter().map(|e| e.name()).collect::<Vec<_>>().join(", ")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub family: Family,
    /// Families run by `sweep` on the planar task.
    pub families: Vec<Family>,
    pub width: usize,
    pub layers: usize,
    pub substeps: usize,
    /// Slope `a` of the leaky activation `max(ax, x)`.
    pub slope: f64,
    pub constrained: bool,
    pub constrain_lift: bool,
    pub pattern: BlockPattern,
    /// Presnov stages of the regression net.
    pub stages: usize,
    pub grad_width: usize,
    pub sphere_hidden: usize,
    pub grad_scheme: GradScheme,
    /// Padding size of the mass lift; defaults to the state dimension.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lift_dim: Option<usize>,
    /// Flow layers of the mass network.
    pub depth: usize,
    /// Hidden width of the skew-entry nets.
    pub hidden: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSection {
    pub lr: f64,
    /// `(epoch, factor)`: divide the learning rate by `factor` from that epoch on.
    pub schedule: Vec<(usize, f64)>,
    pub epochs: usize,
    pub batch: usize,
    pub momentum: f64,
    /// Hinge margin for the classifiers.
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_per_class: usize,
    pub n: usize,
    pub test_fraction: f64,
    pub target: RegressionTarget,
    pub system: System,
    /// Flow time of the training pairs.
    pub h: f64,
    /// Sampling box `[[lo, hi], ...]`; defaults to the system's box.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<Vec<(f64, f64)>>,
    /// Points per axis of the plot grids.
    pub grid: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustConfig {
    pub eps: Vec<f64>,
    pub steps: usize,
    /// Defaults to `eps / 4`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
    pub restarts: usize,
    pub random_start: bool,
    /// Certification attacks run at this fraction of the certified radius.
    pub cert_fraction: f64,
    pub cert_restarts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    /// Number of seeds, starting at `seed`, used by `sweep`.
    pub seeds: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub network: NetworkConfig,
    pub optim: OptimSection,
    pub dataset: DatasetConfig,
    pub robust: RobustConfig,
}

impl ExperimentConfig {
    /// Defaults tuned for each experiment.
    pub fn preset(experiment: Experiment, system: System) -> Self {
        let mut cfg = ExperimentConfig {
            experiment,
            seed: 0,
            seeds: 20,
            out: None,
            network: NetworkConfig {
                family: Family::Mixed,
                families: vec![Family::Mixed, Family::Expansive, Family::Contractive],
                width: 4,
                layers: 10,
                substeps: 1,
                slope: 0.5,
                constrained: true,
                constrain_lift: true,
                pattern: BlockPattern::GradFree,
                stages: 4,
                grad_width: 16,
                sphere_hidden: 16,
                grad_scheme: GradScheme::Euler,
                lift_dim: None,
                depth: 4,
                hidden: 16,
            },
            optim: OptimSection { lr: 0.05, schedule: vec![(66, 10.0)], epochs: 100, batch: 16, momentum: 0.0, margin: 0.2 },
            dataset: DatasetConfig {
                n_per_class: 150,
                n: 400,
                test_fraction: 1.0 / 3.0,
                target: RegressionTarget::F,
                system,
                h: 1.0,
                domain: None,
                grid: 41,
            },
            robust: RobustConfig {
                eps: vec![0.05, 0.1, 0.2],
                steps: 10,
                step_size: None,
                restarts: 1,
                random_start: false,
                cert_fraction: 0.99,
                cert_restarts: 5,
            },
        };
        match experiment {
            Experiment::ClassifyPlanar => {}
            Experiment::RobustPlanar => {
                // The lift stays free; the dynamical blocks and the head carry the constraint.
                cfg.seeds = 10;
                cfg.network.constrain_lift = false;
                cfg.optim = OptimSection { lr: 0.05, schedule: vec![(100, 10.0)], epochs: 150, batch: 16, momentum: 0.0, margin: 0.5 };
                cfg.dataset.n_per_class = 300;
            }
            Experiment::Regression => {
                cfg.seeds = 5;
                cfg.network.slope = 0.2;
                cfg.optim = OptimSection {
                    lr: 0.003,
                    schedule: vec![(200, 10.0), (300, 10.0)],
                    epochs: 400,
                    batch: 16,
                    momentum: 0.9,
                    margin: 0.2,
                };
                cfg.dataset.test_fraction = 0.25;
                cfg.dataset.grid = 401;
            }
            Experiment::SirFlowmap => {
                cfg.seeds = 5;
                cfg.dataset.system = System::Sir;
                cfg.optim = OptimSection { lr: 0.05, schedule: vec![(50, 10.0)], epochs: 100, batch: 16, momentum: 0.9, margin: 0.2 };
                cfg.dataset.test_fraction = 0.25;
                cfg.dataset.grid = 20;
            }
            Experiment::Flowmap => {
                cfg.seeds = 5;
                cfg.dataset.h = 0.1;
                cfg.dataset.test_fraction = 0.25;
                cfg.dataset.grid = 21;
                let lr = if system == System::X1 { 2.0 } else { 0.05 };
                cfg.network.sphere_hidden = if system == System::X1 { 16 } else { 32 };
                cfg.optim = OptimSection { lr, schedule: vec![(150, 10.0)], epochs: 300, batch: 16, momentum: 0.9, margin: 0.2 };
            }
        }
        cfg
    }

    /// Parse a config file body. `experiment` must be given, here or as `default`.
    pub fn parse(text: &str, default: Option<Experiment>) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let experiment = match user.get("experiment") {
            Some(toml::Value::String(s)) => Experiment::parse(s)?,
            Some(v) => return Err(Error::Config(format!("`experiment` must be a string, got {v}"))),
            None => default.ok_or_else(|| Error::Config(format!("missing `experiment` (one of {})", names())))?,
        };
        let system = match user.get("dataset").and_then(|d| d.get("system")) {
            Some(v) => System::deserialize(v.clone()).map_err(|e| Error::Config(format!("dataset.system: {e}")))?,
            None if experiment == Experiment::SirFlowmap => System::Sir,
            None => System::X2,
        };
        let base = toml::Table::try_from(ExperimentConfig::preset(experiment, system)).map_err(|e| Error::Config(e.to_string()))?;
        let mut merged = base;
        merge(&mut merged, user);
        merged.insert("experiment".into(), toml::Value::String(experiment.name().into()));
        let cfg = ExperimentConfig::deserialize(merged).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, default: Option<Experiment>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        ExperimentConfig::parse(&text, default)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let n = &self.network;
        let d = &self.dataset;
        let r = &self.robust;
        self.optim_config(self.seed).validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.optim.margin > 0.0) {
            return bad(format!("optim.margin must be > 0, got {}", self.optim.margin));
        }
        if self.seeds == 0 {
            return bad("seeds must be ≥ 1".into());
        }
        if n.width < 2 || n.layers == 0 || n.substeps == 0 || n.stages == 0 || n.depth == 0 {
            return bad("network sizes must be positive (width ≥ 2)".into());
        }
        if n.grad_width == 0 || n.sphere_hidden == 0 || n.hidden == 0 || n.lift_dim == Some(0) {
            return bad("network widths must be positive".into());
        }
        if n.families.is_empty() {
            return bad("network.families is empty".into());
        }
        Activation::leaky_max(n.slope).map_err(|e| Error::Config(format!("network.slope: {e}")))?;
        if n.family == Family::Mixed && !n.layers.is_multiple_of(2) {
            return bad(format!("the mixed family needs an even layer count, got {}", n.layers));
        }
        if !(0.0..1.0).contains(&d.test_fraction) {
            return bad(format!("dataset.test_fraction {} not in [0, 1)", d.test_fraction));
        }
        if d.n_per_class == 0 || d.n == 0 || d.grid < 2 {
            return bad("dataset sizes must be positive (grid ≥ 2)".into());
        }
        let n_test = match self.experiment {
            Experiment::ClassifyPlanar | Experiment::RobustPlanar => (2 * d.n_per_class) as f64 * d.test_fraction,
            _ => d.n as f64 * d.test_fraction,
        };
        if n_test < 1.0 {
            return bad("test split is empty".into());
        }
        if !(d.h > 0.0 && d.h.is_finite()) {
            return bad(format!("dataset.h must be positive, got {}", d.h));
        }
        match self.experiment {
            Experiment::SirFlowmap if d.system != System::Sir => return bad("sir-flowmap requires dataset.system = \"sir\"".into()),
            Experiment::Flowmap if d.system == System::Sir => return bad("use the sir-flowmap experiment for the SIR system".into()),
            _ => {}
        }
        if let Some(dom) = &d.domain {
            if dom.len() != d.system.dim() {
                return bad(format!("dataset.domain has {} intervals, system needs {}", dom.len(), d.system.dim()));
            }
            if dom.iter().any(|&(lo, hi)| !(lo < hi && lo.is_finite() && hi.is_finite())) {
                return bad("dataset.domain intervals must satisfy lo < hi".into());
            }
        }
        if r.eps.iter().any(|&e| !(e >= 0.0 && e.is_finite())) {
            return bad("robust.eps must be non-negative".into());
        }
        if r.steps == 0 || r.restarts == 0 || r.cert_restarts == 0 {
            return bad("robust steps and restarts must be ≥ 1".into());
        }
        if r.step_size.is_some_and(|s| !(s > 0.0)) {
            return bad("robust.step_size must be positive".into());
        }
        if !(r.cert_fraction > 0.0 && r.cert_fraction < 1.0) {
            return bad(format!("robust.cert_fraction must lie in (0, 1), got {}", r.cert_fraction));
        }
        Ok(())
    }

    pub fn optim_config(&self, seed: u64) -> OptimConfig {
        let o = &self.optim;
        OptimConfig { lr: o.lr, schedule: o.schedule.clone(), epochs: o.epochs, batch: o.batch, seed, momentum: o.momentum }
    }

    pub fn planar_spec(&self, family: Family, constrained: bool) -> PlanarSpec {
        let n = &self.network;
        PlanarSpec {
            family,
            width: n.width,
            layers: n.layers,
            substeps: n.substeps,
            slope: n.slope,
            constrained,
            constrain_lift: n.constrain_lift,
            pattern: n.pattern,
        }
    }

    pub fn presnov_options(&self) -> PresnovOptions {
        let n = &self.network;
        PresnovOptions {
            sphere_hidden: n.sphere_hidden,
            grad_width: n.grad_width,
            grad_scheme: n.grad_scheme,
            act: Activation::leaky_max(n.slope).expect("validated"),
        }
    }

    pub fn attack(&self, eps: f64, seed: u64) -> AttackConfig {
        let r = &self.robust;
        AttackConfig { eps, steps: r.steps, step_size: r.step_size, restarts: r.restarts, random_start: r.random_start, seed }
    }

    /// Attack used against certified points.
    pub fn cert_attack(&self, seed: u64) -> AttackConfig {
        AttackConfig { restarts: self.robust.cert_restarts, ..self.attack(0.0, seed) }
    }

    pub fn domain(&self) -> Vec<(f64, f64)> {
        self.dataset.domain.clone().unwrap_or_else(|| self.dataset.system.default_box())
    }
}

/// Overlay `user` onto `base`, recursing into sub-tables.
fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for e in Experiment::ALL {
            let cfg = ExperimentConfig::preset(e, if e == Experiment::SirFlowmap { System::Sir } else { System::X2 });
            cfg.validate().unwrap();
            let back = ExperimentConfig::parse(&cfg.to_toml(), None).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            "experiment = \"regression\"\nfoo = 1\n",
            "experiment = \"regression\"\n[network]\nwdth = 3\n",
            "experiment = \"regression\"\n[optimizer]\nlr = 1\n",
            "experiment = \"regression\"\n[robust]\neps = [0.1]\nstep = 3\n",
        ] {
            assert!(matches!(ExperimentConfig::parse(text, None), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn overrides_apply_over_preset() {
        let text = "experiment = \"classify-planar\"\nseed = 7\n[network]\nfamily = \"contractive\"\n[optim]\nlr = 0.01\nschedule = [[10, 2.0]]\n";
        let cfg = ExperimentConfig::parse(text, None).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.network.family, Family::Contractive);
        assert_eq!(cfg.optim.lr, 0.01);
        assert_eq!(cfg.optim.schedule, vec![(10, 2.0)]);
        assert_eq!(cfg.network.width, 4);
    }

    #[test]
    fn flowmap_system_picks_preset() {
        let cfg = ExperimentConfig::parse("[dataset]\nsystem = \"x1\"\n", Some(Experiment::Flowmap)).unwrap();
        assert_eq!(cfg.dataset.system, System::X1);
        assert_eq!(cfg.optim.lr, 2.0);
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            "experiment = \"regression\"\n[optim]\nlr = -1\n",
            "experiment = \"regression\"\n[optim]\nschedule = [[3, 1.0]]\n",
            "experiment = \"classify-planar\"\n[network]\nlayers = 3\n",
            "experiment = \"sir-flowmap\"\n[dataset]\nsystem = \"x2\"\n",
            "experiment = \"flowmap\"\n[dataset]\ndomain = [[0.0, 1.0]]\n",
            "experiment = \"nope\"\n",
            "seed = 1\n",
        ] {
            assert!(ExperimentConfig::parse(text, None).is_err(), "{text}");
        }
    }
}
