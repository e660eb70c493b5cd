//! Data model for per-ion-impact displacement ensembles.
//!
//! An [`ImpactSet`] holds exactly two species and any number of impacts.
//! Each impact records the beam geometry, the periodic cell, and the
//! initial/final position of every atom that the cascade touched, with an
//! explicit sputtered/retained flag. Values are immutable after validation
//! and safe to share read-only across workers.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::fmt;

use crate::geometry::{Vec2, Vec3};

/// Default atomic volume in nm³/atom, shipped for GaSb.
///
/// Zinc-blende GaSb has lattice constant a = 0.60959 nm with 8 atoms per
/// cell, so a³/8 = 0.0283 nm³/atom (equivalently ρ = 5.61 g/cm³). The same
/// value is used for both species; datasets may override per species.
pub const DEFAULT_ATOMIC_VOLUME_NM3: f64 = 0.0283;

/// Default height above the reference surface beyond which an atom's final
/// position marks it as sputtered, for data that lacks explicit flags.
pub const DEFAULT_SPUTTER_CUTOFF_NM: f64 = 0.5;

/// One of the two target species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesId {
    pub label: String,
    /// Atomic volume Ω in nm³/atom.
    pub atomic_volume_nm3: f64,
}

impl SpeciesId {
    pub fn new(label: impl Into<String>, atomic_volume_nm3: f64) -> Self {
        SpeciesId {
            label: label.into(),
            atomic_volume_nm3,
        }
    }
}

/// Initial/final state of one atom in one impact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomEvent {
    pub atom_id: i64,
    /// Label of one of the set's two species.
    pub species: String,
    pub pos_initial_nm: Vec3,
    pub pos_final_nm: Vec3,
    pub sputtered: bool,
}

impl AtomEvent {
    /// Lab-frame displacement; in-plane components are not yet wrapped.
    pub fn displacement_nm(&self) -> Vec3 {
        [
            self.pos_final_nm[0] - self.pos_initial_nm[0],
            self.pos_final_nm[1] - self.pos_initial_nm[1],
            self.pos_final_nm[2] - self.pos_initial_nm[2],
        ]
    }
}

/// One ion impact on a laterally periodic cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactRecord {
    pub impact_id: i64,
    /// Polar incidence angle in degrees, 0 = normal incidence.
    pub theta_deg: f64,
    /// Azimuthal beam angle in degrees (lab frame).
    pub azimuth_deg: f64,
    /// Point where the ion crossed the reference surface, nm.
    pub impact_point_nm: Vec2,
    /// Periodic cell extents (Lx, Ly), nm.
    pub cell_nm: Vec2,
    /// Reference surface height, nm.
    pub surface_z_nm: f64,
    pub atoms: Vec<AtomEvent>,
}

impl ImpactRecord {
    pub fn theta_rad(&self) -> f64 {
        self.theta_deg.to_radians()
    }

    pub fn azimuth_rad(&self) -> f64 {
        self.azimuth_deg.to_radians()
    }
}

/// A validated collection of impacts over exactly two species.
///
/// Impacts sharing an identical `theta_deg` form the per-angle ensembles
/// used by the moment pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactSet {
    pub species: [SpeciesId; 2],
    /// Free-form provenance (ion, energy, source code, ...).
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    pub impacts: Vec<ImpactRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValidationError {
    NonPositiveAtomicVolume { label: String },
    DuplicateSpeciesLabel { label: String },
    BadSpeciesLabel { label: String },
    ThetaOutOfRange { impact_id: i64, theta_deg: f64 },
    NonFiniteField { impact_id: i64, field: &'static str },
    BadCell { impact_id: i64 },
    EmptyAtoms { impact_id: i64 },
    DuplicateImpactId { impact_id: i64 },
    DuplicateAtomId { impact_id: i64, atom_id: i64 },
    UnknownSpecies { impact_id: i64, atom_id: i64, label: String },
    NonFinitePosition { impact_id: i64, atom_id: i64 },
    BadMetadataKey { key: String },
    BadMetadataValue { key: String },
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ValidationError::*;
        match self {
            NonPositiveAtomicVolume { label } => {
                write!(f, "species {label}: atomic volume must be > 0")
            }
            DuplicateSpeciesLabel { label } => write!(f, "duplicate species label {label}"),
            BadSpeciesLabel { label } => {
                write!(f, "species label {label:?} must be non-empty without whitespace")
            }
            ThetaOutOfRange { impact_id, theta_deg } => {
                write!(f, "impact {impact_id}: theta {theta_deg} outside [0, 90] degrees")
            }
            NonFiniteField { impact_id, field } => {
                write!(f, "impact {impact_id}: non-finite {field}")
            }
            BadCell { impact_id } => write!(f, "impact {impact_id}: cell extents must be > 0"),
            EmptyAtoms { impact_id } => write!(f, "impact {impact_id}: no atom events"),
            DuplicateImpactId { impact_id } => write!(f, "duplicate impact id {impact_id}"),
            DuplicateAtomId { impact_id, atom_id } => {
                write!(f, "impact {impact_id}: duplicate atom id {atom_id}")
            }
            UnknownSpecies { impact_id, atom_id, label } => {
                write!(f, "impact {impact_id}, atom {atom_id}: unknown species {label}")
            }
            NonFinitePosition { impact_id, atom_id } => {
                write!(f, "impact {impact_id}, atom {atom_id}: non-finite position")
            }
            BadMetadataKey { key } => {
                write!(f, "metadata key {key:?} must be non-empty without whitespace")
            }
            BadMetadataValue { key } => {
                write!(f, "metadata value for {key:?} must be a single trimmed line")
            }
        }
    }
}

impl std::error::Error for ValidationError {}

fn finite3(v: Vec3) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl ImpactSet {
    /// Index (0 or 1) of a species label within the declared pair.
    pub fn species_index(&self, label: &str) -> Option<usize> {
        self.species.iter().position(|s| s.label == label)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        for sp in &self.species {
            if sp.label.is_empty() || sp.label.chars().any(char::is_whitespace) {
                return Err(ValidationError::BadSpeciesLabel {
                    label: sp.label.clone(),
                });
            }
            if !sp.atomic_volume_nm3.is_finite() || sp.atomic_volume_nm3 <= 0.0 {
                return Err(ValidationError::NonPositiveAtomicVolume {
                    label: sp.label.clone(),
                });
            }
        }
        if self.species[0].label == self.species[1].label {
            return Err(ValidationError::DuplicateSpeciesLabel {
                label: self.species[0].label.clone(),
            });
        }
        for (key, value) in &self.metadata {
            if key.is_empty() || key.chars().any(char::is_whitespace) {
                return Err(ValidationError::BadMetadataKey { key: key.clone() });
            }
            if value.trim() != value || value.contains(['\n', '\r']) {
                return Err(ValidationError::BadMetadataValue { key: key.clone() });
            }
        }

        let mut impact_ids = HashSet::new();
        for imp in &self.impacts {
            let id = imp.impact_id;
            if !impact_ids.insert(id) {
                return Err(ValidationError::DuplicateImpactId { impact_id: id });
            }
            if !imp.theta_deg.is_finite() || imp.theta_deg < 0.0 || imp.theta_deg > 90.0 {
                return Err(ValidationError::ThetaOutOfRange {
                    impact_id: id,
                    theta_deg: imp.theta_deg,
                });
            }
            if !imp.azimuth_deg.is_finite() {
                return Err(ValidationError::NonFiniteField {
                    impact_id: id,
                    field: "azimuth",
                });
            }
            if !imp.impact_point_nm.iter().all(|x| x.is_finite()) {
                return Err(ValidationError::NonFiniteField {
                    impact_id: id,
                    field: "impact point",
                });
            }
            if !imp.surface_z_nm.is_finite() {
                return Err(ValidationError::NonFiniteField {
                    impact_id: id,
                    field: "surface height",
                });
            }
            if !imp.cell_nm.iter().all(|x| x.is_finite() && *x > 0.0) {
                return Err(ValidationError::BadCell { impact_id: id });
            }
            if imp.atoms.is_empty() {
                return Err(ValidationError::EmptyAtoms { impact_id: id });
            }
            let mut atom_ids = HashSet::new();
            for atom in &imp.atoms {
                if !atom_ids.insert(atom.atom_id) {
                    return Err(ValidationError::DuplicateAtomId {
                        impact_id: id,
                        atom_id: atom.atom_id,
                    });
                }
                if self.species_index(&atom.species).is_none() {
                    return Err(ValidationError::UnknownSpecies {
                        impact_id: id,
                        atom_id: atom.atom_id,
                        label: atom.species.clone(),
                    });
                }
                if !finite3(atom.pos_initial_nm) || !finite3(atom.pos_final_nm) {
                    return Err(ValidationError::NonFinitePosition {
                        impact_id: id,
                        atom_id: atom.atom_id,
                    });
                }
            }
        }
        Ok(())
    }

    /// Distinct incidence angles, ascending. Grouping is by exact value.
    pub fn angles_deg(&self) -> Vec<f64> {
        let mut angles: Vec<f64> = Vec::new();
        for imp in &self.impacts {
            if !angles.iter().any(|a| a.to_bits() == imp.theta_deg.to_bits()) {
                angles.push(imp.theta_deg);
            }
        }
        angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
        angles
    }
}

/// Set the sputtered flag from the final height, for datasets whose source
/// did not record one: an atom ending more than `cutoff_nm` above the
/// reference surface is marked sputtered, all others retained.
pub fn tag_sputtered_by_height(set: &mut ImpactSet, cutoff_nm: f64) {
    for imp in &mut set.impacts {
        let threshold = imp.surface_z_nm + cutoff_nm;
        for atom in &mut imp.atoms {
            atom.sputtered = atom.pos_final_nm[2] > threshold;
        }
    }
}
