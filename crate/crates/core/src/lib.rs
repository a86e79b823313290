//! Spin-resolved electron diffraction through a nanograting, with the
//! packet's own magnetostatic field fed back into its evolution.
//!
//! The two-component Pauli wavefunction lives on a uniform periodic grid and
//! is advanced by a Strang-split spectral propagator. Far-field profiles,
//! spin-flip probabilities and Husimi phase-space maps are computed from the
//! transmitted part of the packet.

pub mod analysis;
pub mod constants;
pub mod error;
pub mod fft;
pub mod grid;
pub mod potentials;
pub mod propagator;
pub mod scenario;
pub mod selffield;
pub mod spinor;

pub use analysis::{
    analytic_deflection, b_pi, chi, far_field, flip_probability, fringe_width, husimi, mean_ky, sigma_y_projection,
    transmission, zeeman_alpha, FarFieldProfile, HusimiMap, KyAxis, TransverseSlice,
};
pub use constants::{PhysicalConstants, CONSTANTS};
pub use error::{Error, Result};
pub use fft::Fft2;
pub use grid::{make_grid, Grid2D, ScalarField};
pub use potentials::{AbsorberSpec, GratingSpec, ScatteringScene};
pub use propagator::{
    apply_b1_rotation, apply_b2_phase, kinetic_half_spectrum, zeeman_kick, ActiveField, EvolveReport, FieldStage, Flow, H2Terms,
    Propagator, SelfFieldCoupling, StageKind, StageMode, StepPlan, StepRecord, StepView,
};
pub use scenario::{
    load_config, parse_config, run_scenario, ConfigSources, RunManifest, RunOptions, RunOutcome, ScenarioConfig,
    ScenarioKind, Variant,
};
pub use selffield::{
    current_density, current_total, spin_density, CurlMethod, CurrentField, CurrentTerms, SelfFieldSolution, SelfFieldSolver,
    SpinDensityField, VectorField,
};
pub use spinor::{init_gaussian_spinor, populations, PacketSpec, Spin, SpinorField};
