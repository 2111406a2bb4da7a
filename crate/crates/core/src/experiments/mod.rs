//! Dataset generators, reference integrators and the experiment runners
//! behind the command-line tool.

mod config;
mod data;
mod gronwall;
mod nets;
mod run;
mod selftest;

pub use config::{DatasetConfig, Experiment, ExperimentConfig, NetworkConfig, OptimSection, RobustConfig};
pub use data::{
    gen_flowmap_pairs, gen_planar_classification, gen_regression, pendulum_energy, reference_flow, Dataset,
    RegressionTarget, System, ANNULUS, INNER_RADIUS, REFERENCE_REFINEMENT,
};
pub use gronwall::{gronwall_check, GronwallSample};
pub use nets::{planar_network, regression_network, sir_network, splitting_network, Family, PlanarSpec};
pub use run::{
    accuracy_curve, certify_planar, learned_field, median, planar_dataset, planar_sweep, robust_curve, run_experiment,
    summarize, sweep, train_planar, train_regression, train_sir, train_splitting, write_table, FamilySummary,
    FlowmapRun, Metrics, PlanarRun, RegressionRun, RobustRow, SplittingRun,
};
pub use selftest::{selftest, Check};
