//! Synthetic impact ensembles with closed-form expected moments.
//!
//! The generator builds [`ImpactSet`]s whose per-impact moment expectations
//! are known exactly, so the whole moment pipeline can be checked against
//! an independent analytic result. Per species it plants
//!
//! * sputtered atoms: a per-angle mean count (even angle law, Poisson in
//!   randomized mode) placed around a mean beam-frame offset (odd law),
//! * redistributed atoms: a fixed count, each displaced by a mean
//!   beam-frame vector (odd law in x plus a constant depth shift),
//! * bystanders: retained atoms with zero displacement spread over a
//!   far-field band at staggered depths, giving the noise filter its
//!   annulus sample.
//!
//! Deterministic mode removes all spread: counts round to integers and
//! every atom sits exactly at its mean, so pipeline moments must equal the
//! analytic values to rounding. Contamination (uniform drift plus a
//! depth-linear shear) is applied as a final pass that draws no random
//! numbers, so the same seed yields bitwise-identical craters with and
//! without it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

use crate::geometry::{to_lab_frame, Vec2, Vec3};
use crate::impact::{AtomEvent, ImpactRecord, ImpactSet, SpeciesId};
use crate::moments::{MomentVector, SpeciesMoments};

const GOLDEN_ANGLE: f64 = 2.399963229728653;

/// Σ aₙ cos((2n-1)θ): even in θ, zero at grazing incidence.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvenAngleLaw {
    pub coeffs: Vec<f64>,
}

impl EvenAngleLaw {
    pub fn new(coeffs: Vec<f64>) -> Self {
        EvenAngleLaw { coeffs }
    }

    pub fn eval(&self, theta_rad: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(n, a)| a * ((2 * n + 1) as f64 * theta_rad).cos())
            .sum()
    }
}

/// Σ bₙ sin(2nθ): odd in θ, zero at normal and grazing incidence.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OddAngleLaw {
    pub coeffs: Vec<f64>,
}

impl OddAngleLaw {
    pub fn new(coeffs: Vec<f64>) -> Self {
        OddAngleLaw { coeffs }
    }

    pub fn eval(&self, theta_rad: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(n, b)| b * ((2 * (n + 1)) as f64 * theta_rad).sin())
            .sum()
    }
}

/// Crater recipe for one species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesCraterSpec {
    /// Mean sputtered atoms per impact versus angle; must be non-negative
    /// at every requested angle. Rounded to the nearest integer in
    /// deterministic mode, Poisson-sampled otherwise.
    pub eros_count: EvenAngleLaw,
    /// Mean beam-frame x position of sputtered-atom origins relative to
    /// the impact point, nm.
    pub eros_offset_x_nm: OddAngleLaw,
    /// Isotropic lateral jitter of sputtered-atom origins (randomized
    /// mode only), nm.
    pub eros_jitter_nm: f64,
    /// Retained displaced atoms per impact.
    pub redist_count: u32,
    /// Mean beam-frame x displacement of redistributed atoms, nm.
    pub redist_dx_nm: OddAngleLaw,
    /// Mean depth change of redistributed atoms, nm.
    pub redist_dz_nm: f64,
    /// Isotropic displacement spread (randomized mode only), nm.
    pub redist_spread_nm: f64,
    /// Retained zero-displacement atoms in the far-field band.
    pub bystander_count: u32,
}

/// Affine noise applied to every retained atom, lab frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contamination {
    /// Uniform displacement added to all retained atoms, nm.
    pub drift_nm: Vec3,
    /// In-plane displacement per nm of depth below the surface.
    pub shear_per_nm: Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCraterSpec {
    pub species: [SpeciesId; 2],
    pub crater: [SpeciesCraterSpec; 2],
    /// Periodic cell extents, nm.
    pub cell_nm: Vec2,
    pub surface_z_nm: f64,
    /// Lateral placement radius for crater atoms, nm; keep it well inside
    /// the filter annulus.
    pub crater_radius_nm: f64,
    /// Bystander band as fractions of min(Lx, Ly); should bracket the
    /// filter annulus.
    pub bystander_band: [f64; 2],
    pub contamination: Option<Contamination>,
    /// Noiseless mode: every quantity sits exactly at its mean.
    pub deterministic: bool,
    pub seed: u64,
}

/// Expected per-impact mean moments at one angle (beam frame), exact in
/// deterministic mode and the ensemble expectation otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleExpectation {
    pub theta_deg: f64,
    pub mean: MomentVector,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticError {
    BadSpec { detail: String },
}

impl fmt::Display for SyntheticError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SyntheticError::BadSpec { detail } => write!(f, "bad synthetic spec: {detail}"),
        }
    }
}

impl std::error::Error for SyntheticError {}

fn bad(detail: impl Into<String>) -> SyntheticError {
    SyntheticError::BadSpec {
        detail: detail.into(),
    }
}

impl SyntheticCraterSpec {
    fn validate(&self, angles_deg: &[f64]) -> Result<(), SyntheticError> {
        if angles_deg.is_empty() {
            return Err(bad("no angles requested"));
        }
        for a in angles_deg {
            if !a.is_finite() || !(0.0..=90.0).contains(a) {
                return Err(bad(format!("angle {a} outside [0, 90] degrees")));
            }
        }
        if !(self.cell_nm[0] > 0.0 && self.cell_nm[1] > 0.0) {
            return Err(bad("cell extents must be positive"));
        }
        let min_extent = self.cell_nm[0].min(self.cell_nm[1]);
        if !(self.crater_radius_nm > 0.0 && self.crater_radius_nm < 0.5 * min_extent) {
            return Err(bad("crater radius must be positive and below half the cell"));
        }
        let [lo, hi] = self.bystander_band;
        if !(lo > 0.0 && lo < hi && hi <= 0.5) {
            return Err(bad("bystander band must satisfy 0 < lo < hi <= 0.5"));
        }
        for (s, crater) in self.crater.iter().enumerate() {
            let label = &self.species[s].label;
            if crater.eros_jitter_nm < 0.0 || crater.redist_spread_nm < 0.0 {
                return Err(bad(format!("{label}: spreads must be non-negative")));
            }
            for a in angles_deg {
                let lambda = crater.eros_count.eval(a.to_radians());
                if lambda < 0.0 {
                    return Err(bad(format!(
                        "{label}: mean sputter count {lambda:.4} negative at theta={a}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn eros_count_at(&self, s: usize, theta_rad: f64) -> f64 {
        let lambda = self.crater[s].eros_count.eval(theta_rad);
        if self.deterministic {
            lambda.round()
        } else {
            lambda
        }
    }
}

/// Expected per-impact moments implied by a spec, per angle.
pub fn analytic_moments(spec: &SyntheticCraterSpec, angles_deg: &[f64]) -> Vec<AngleExpectation> {
    angles_deg
        .iter()
        .map(|&theta_deg| {
            let t = theta_deg.to_radians();
            let mut mean = MomentVector::default();
            for s in 0..2 {
                let omega = spec.species[s].atomic_volume_nm3;
                let crater = &spec.crater[s];
                let count = spec.eros_count_at(s, t);
                let offset = crater.eros_offset_x_nm.eval(t);
                let dx = crater.redist_dx_nm.eval(t);
                mean.species[s] = SpeciesMoments {
                    m0_nm3: -omega * count,
                    m1_eros_nm4: [-omega * count * offset, 0.0],
                    m1_redist_nm4: [omega * crater.redist_count as f64 * dx, 0.0],
                };
            }
            AngleExpectation { theta_deg, mean }
        })
        .collect()
}

/// Generate an impact ensemble and its analytic per-angle expectations.
///
/// The same seed always produces the same set, with or without
/// contamination.
pub fn generate_synthetic_impacts(
    spec: &SyntheticCraterSpec,
    angles_deg: &[f64],
    impacts_per_angle: usize,
) -> Result<(ImpactSet, Vec<AngleExpectation>), SyntheticError> {
    if impacts_per_angle < 1 {
        return Err(bad("impacts_per_angle must be >= 1"));
    }
    spec.validate(angles_deg)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let min_extent = spec.cell_nm[0].min(spec.cell_nm[1]);
    let band = [
        spec.bystander_band[0] * min_extent,
        spec.bystander_band[1] * min_extent,
    ];

    let mut impacts = Vec::with_capacity(angles_deg.len() * impacts_per_angle);
    let mut impact_id: i64 = 0;
    for &theta_deg in angles_deg {
        let theta_rad = theta_deg.to_radians();
        for _ in 0..impacts_per_angle {
            let (azimuth_deg, impact_point): (f64, Vec2) = if spec.deterministic {
                (0.0, [spec.cell_nm[0] / 2.0, spec.cell_nm[1] / 2.0])
            } else {
                (
                    rng.random_range(0.0..360.0),
                    [
                        rng.random_range(0.0..spec.cell_nm[0]),
                        rng.random_range(0.0..spec.cell_nm[1]),
                    ],
                )
            };
            let azimuth_rad = azimuth_deg.to_radians();
            let mut atoms = Vec::new();
            let mut atom_id: i64 = 0;

            for s in 0..2 {
                let crater = &spec.crater[s];
                let label = spec.species[s].label.clone();

                // sputtered atoms
                let n_eros = if spec.deterministic {
                    spec.eros_count_at(s, theta_rad) as u64
                } else {
                    let lambda = crater.eros_count.eval(theta_rad);
                    if lambda > 0.0 {
                        Poisson::new(lambda).map_err(|e| bad(e.to_string()))?.sample(&mut rng)
                            as u64
                    } else {
                        0
                    }
                };
                let offset = crater.eros_offset_x_nm.eval(theta_rad);
                for j in 0..n_eros {
                    let beam = if spec.deterministic {
                        [offset, 0.0]
                    } else {
                        let jitter = Normal::new(0.0, crater.eros_jitter_nm.max(1e-300))
                            .map_err(|e| bad(e.to_string()))?;
                        [offset + jitter.sample(&mut rng), jitter.sample(&mut rng)]
                    };
                    let lab = to_lab_frame(beam, azimuth_rad);
                    let depth = spec.surface_z_nm - 0.1 - 0.05 * (j % 5) as f64;
                    let pos = [
                        (impact_point[0] + lab[0]).rem_euclid(spec.cell_nm[0]),
                        (impact_point[1] + lab[1]).rem_euclid(spec.cell_nm[1]),
                        depth,
                    ];
                    atoms.push(AtomEvent {
                        atom_id,
                        species: label.clone(),
                        pos_initial_nm: pos,
                        // ejected well above the surface; ignored by the
                        // erosive moment sums
                        pos_final_nm: [pos[0], pos[1], spec.surface_z_nm + 2.0],
                        sputtered: true,
                    });
                    atom_id += 1;
                }

                // redistributed atoms
                let dx = crater.redist_dx_nm.eval(theta_rad);
                for j in 0..crater.redist_count {
                    let (r, phi) = if spec.deterministic {
                        (
                            spec.crater_radius_nm * (0.25 + 0.5 * j as f64 / crater.redist_count.max(1) as f64),
                            GOLDEN_ANGLE * j as f64,
                        )
                    } else {
                        (
                            spec.crater_radius_nm * rng.random_range(0.0f64..1.0).sqrt(),
                            rng.random_range(0.0..std::f64::consts::TAU),
                        )
                    };
                    let depth = if spec.deterministic {
                        spec.surface_z_nm - 0.2 - 0.1 * (j % 7) as f64
                    } else {
                        spec.surface_z_nm - rng.random_range(0.1..1.2)
                    };
                    let pos = [
                        (impact_point[0] + r * phi.cos()).rem_euclid(spec.cell_nm[0]),
                        (impact_point[1] + r * phi.sin()).rem_euclid(spec.cell_nm[1]),
                        depth,
                    ];
                    let disp_beam = if spec.deterministic {
                        [dx, 0.0, crater.redist_dz_nm]
                    } else {
                        let spread = Normal::new(0.0, crater.redist_spread_nm.max(1e-300))
                            .map_err(|e| bad(e.to_string()))?;
                        [
                            dx + spread.sample(&mut rng),
                            spread.sample(&mut rng),
                            crater.redist_dz_nm + spread.sample(&mut rng),
                        ]
                    };
                    let disp_lab = to_lab_frame([disp_beam[0], disp_beam[1]], azimuth_rad);
                    atoms.push(AtomEvent {
                        atom_id,
                        species: label.clone(),
                        pos_initial_nm: pos,
                        pos_final_nm: [pos[0] + disp_lab[0], pos[1] + disp_lab[1], pos[2] + disp_beam[2]],
                        sputtered: false,
                    });
                    atom_id += 1;
                }

                // bystanders: zero displacement, staggered depths
                for j in 0..crater.bystander_count {
                    let (r, phi, depth) = if spec.deterministic {
                        (
                            band[0] + (band[1] - band[0]) * (j as f64 + 0.5) / crater.bystander_count as f64,
                            GOLDEN_ANGLE * j as f64,
                            spec.surface_z_nm - 0.1 - 1.0 * (j as f64 + 0.5) / crater.bystander_count as f64,
                        )
                    } else {
                        let r2 = rng.random_range((band[0] * band[0])..(band[1] * band[1]));
                        (
                            r2.sqrt(),
                            rng.random_range(0.0..std::f64::consts::TAU),
                            spec.surface_z_nm - rng.random_range(0.1..1.1),
                        )
                    };
                    let pos = [
                        (impact_point[0] + r * phi.cos()).rem_euclid(spec.cell_nm[0]),
                        (impact_point[1] + r * phi.sin()).rem_euclid(spec.cell_nm[1]),
                        depth,
                    ];
                    atoms.push(AtomEvent {
                        atom_id,
                        species: label.clone(),
                        pos_initial_nm: pos,
                        pos_final_nm: pos,
                        sputtered: false,
                    });
                    atom_id += 1;
                }
            }

            // contamination draws no randomness: craters are twin-identical
            // with and without it
            if let Some(cont) = &spec.contamination {
                for atom in atoms.iter_mut().filter(|a| !a.sputtered) {
                    let depth = atom.pos_initial_nm[2] - spec.surface_z_nm;
                    atom.pos_final_nm[0] += cont.drift_nm[0] + cont.shear_per_nm[0] * depth;
                    atom.pos_final_nm[1] += cont.drift_nm[1] + cont.shear_per_nm[1] * depth;
                    atom.pos_final_nm[2] += cont.drift_nm[2];
                }
            }

            impacts.push(ImpactRecord {
                impact_id,
                theta_deg,
                azimuth_deg,
                impact_point_nm: impact_point,
                cell_nm: spec.cell_nm,
                surface_z_nm: spec.surface_z_nm,
                atoms,
            });
            impact_id += 1;
        }
    }

    let mut metadata = BTreeMap::new();
    metadata.insert("source".to_string(), "synthetic".to_string());
    metadata.insert("seed".to_string(), spec.seed.to_string());
    let set = ImpactSet {
        species: spec.species.clone(),
        metadata,
        impacts,
    };
    debug_assert!(set.validate().is_ok());
    Ok((set, analytic_moments(spec, angles_deg)))
}
