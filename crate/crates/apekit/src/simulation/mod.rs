//! Synthetic designs, the true-APE oracle, the replication engine and the
//! table-shaped reports.

mod dgp;
mod figure1;
mod grid;
mod iv;
mod presets;

pub use dgp::{
    derivative_part, draw, systematic_part, true_ape, DgpSpec, Family, SyntheticDraw, TrueApe,
};
pub use figure1::{
    figure1_experiment, figure1_experiment_with, slope_fit, Figure1Options, Figure1Record,
    Figure1Result, SlopeFit,
};
pub use grid::{
    grid_sweep, parse_grid_config, run_grid, run_grid_with, GridConfig, GridOptions, SimCell,
    SimReport,
};
pub use iv::{draw_iv, IvDgpSpec, IvDraw, IvOutcome, IvTreatment};
pub use presets::{preset, preset_estimators, preset_gbt, PRESETS};
