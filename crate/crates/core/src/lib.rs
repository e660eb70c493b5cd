//! Crater-function moment analysis for ion-irradiated binary targets.
//!
//! This library turns per-ion-impact atomic displacement data (initial and
//! final positions of every atom affected by one ion strike) into the
//! quantities that drive continuum models of surface nanopatterning:
//!
//! 1. [`impact`] / [`cfi`] — data model and interchange formats for impact
//!    ensembles, plus a synthetic generator ([`synthetic`]) with closed-form
//!    expected moments for testing.
//! 2. [`filter`] / [`moments`] — removal of background drift and coherent
//!    cell shear from the displacement field, and the per-impact
//!    erosive/redistributive moment sums aggregated per incidence angle.
//! 3. [`fit`] — parity-constrained trigonometric fits of each moment
//!    channel versus incidence angle.
//! 4. [`coefficients`] — height-equation coefficients per unit flux, the
//!    steady-state film concentration under a linear concentration model,
//!    and the mapping onto the coupled height/concentration equations of
//!    Bradley and Shipman [PRL 105, 145501 (2010)].
//! 5. [`stability`] — dispersion relation, long-wave coefficient, and
//!    stable / long-wave / finite-wavelength classification, with a
//!    time-integration cross-check.
//!
//! All crater-derived rates are stored per unit flux; a physical flux value
//! is applied only when assembling a [`stability::LinearModel`].

pub mod cfi;
pub mod coefficients;
pub mod filter;
pub mod fit;
pub mod geometry;
pub mod impact;
pub mod moments;
pub mod stability;
pub mod synthetic;

pub use cfi::{parse_impact_set, write_impact_set, Format};
pub use coefficients::{
    compute_height_coefficients, map_to_bs_parameters, steady_concentration, BsParameters,
    CoefficientSet, ConcentrationEval, ConcentrationModel,
};
pub use filter::{filter_noise, FilterConfig};
pub use fit::{fit_moment_curves, FitBasis, FitOptions, FourierFit, MomentFits, Parity};
pub use impact::{AtomEvent, ImpactRecord, ImpactSet, SpeciesId};
pub use moments::{aggregate_moments, impact_moments, MomentSample, MomentTable, MomentVector};
pub use stability::{
    classify_stability, dispersion_sigma_plus, evolve_mode, longwave_coefficient, Classification,
    DispersionSample, KRange, LinearModel, StabilityReport,
};
pub use synthetic::{generate_synthetic_impacts, SyntheticCraterSpec};
