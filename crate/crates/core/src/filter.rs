//! Removal of simulation-cell noise from retained-atom displacements.
//!
//! Two artifacts contaminate raw displacement fields from periodic-cell
//! cascade simulations: a uniform background drift (pre-existing stress
//! relaxing during the run) and a coherent shear of the whole cell. Both
//! are estimated from a far-field annulus around the impact point, where
//! the cascade itself moved nothing, and subtracted from every retained
//! atom. Sputtered atoms are untouched.
//!
//! The shear model is a displacement linear in depth, `d(z) = s (z - z̄)`,
//! fitted by least squares over the annulus atoms with both in-plane
//! components expressed in the beam-aligned frame.

use std::fmt;

use crate::geometry::{norm2, to_beam_frame, to_lab_frame, wrap_component, wrap_in_plane, Vec2};
use crate::impact::ImpactRecord;

/// Annulus geometry and shear switch for [`filter_noise`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FilterConfig {
    /// Inner annulus radius as a fraction of min(Lx, Ly).
    pub annulus_inner: f64,
    /// Outer annulus radius as a fraction of min(Lx, Ly), at most 0.5.
    pub annulus_outer: f64,
    /// Also fit and subtract the depth-linear shear profile.
    pub shear_correction: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        // far field next to the thermostated cell walls
        FilterConfig {
            annulus_inner: 0.35,
            annulus_outer: 0.5,
            shear_correction: true,
        }
    }
}

/// Minimum number of retained annulus atoms required for a fit.
pub const MIN_ANNULUS_ATOMS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub enum FilterError {
    BadConfig { detail: String },
    TooFewAnnulusAtoms { impact_id: i64, found: usize },
    DegenerateDepths { impact_id: i64 },
}

impl fmt::Display for FilterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterError::BadConfig { detail } => write!(f, "bad filter config: {detail}"),
            FilterError::TooFewAnnulusAtoms { impact_id, found } => write!(
                f,
                "impact {impact_id}: {found} retained annulus atoms, need {MIN_ANNULUS_ATOMS}"
            ),
            FilterError::DegenerateDepths { impact_id } => write!(
                f,
                "impact {impact_id}: annulus atoms share one depth, cannot fit shear"
            ),
        }
    }
}

impl std::error::Error for FilterError {}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        if !(self.annulus_inner > 0.0
            && self.annulus_inner < self.annulus_outer
            && self.annulus_outer <= 0.5)
        {
            return Err(FilterError::BadConfig {
                detail: format!(
                    "need 0 < inner < outer <= 0.5, got inner={} outer={}",
                    self.annulus_inner, self.annulus_outer
                ),
            });
        }
        Ok(())
    }
}

/// Wrapped lab-frame displacement of an atom (in-plane minimal image).
fn wrapped_displacement(atom: &crate::impact::AtomEvent, cell: Vec2) -> [f64; 3] {
    let d = atom.displacement_nm();
    let xy = wrap_in_plane([d[0], d[1]], cell);
    [xy[0], xy[1], d[2]]
}

/// Subtract annulus-mean drift and, optionally, the depth-linear shear from
/// every retained atom of an impact. Returns the corrected copy; atom order
/// is unchanged. Sums run in atom-id order so the result does not depend on
/// the order atoms were stored in.
pub fn filter_noise(impact: &ImpactRecord, cfg: &FilterConfig) -> Result<ImpactRecord, FilterError> {
    cfg.validate()?;
    let min_extent = impact.cell_nm[0].min(impact.cell_nm[1]);
    let r_inner = cfg.annulus_inner * min_extent;
    let r_outer = cfg.annulus_outer * min_extent;
    let azimuth = impact.azimuth_rad();

    let mut order: Vec<usize> = (0..impact.atoms.len()).collect();
    order.sort_by_key(|&i| impact.atoms[i].atom_id);

    // retained atoms whose initial position lies in the annulus
    let annulus: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| {
            let atom = &impact.atoms[i];
            if atom.sputtered {
                return false;
            }
            let rel = wrap_in_plane(
                [
                    atom.pos_initial_nm[0] - impact.impact_point_nm[0],
                    atom.pos_initial_nm[1] - impact.impact_point_nm[1],
                ],
                impact.cell_nm,
            );
            let r = norm2(rel);
            r >= r_inner && r <= r_outer
        })
        .collect();

    if annulus.len() < MIN_ANNULUS_ATOMS {
        return Err(FilterError::TooFewAnnulusAtoms {
            impact_id: impact.impact_id,
            found: annulus.len(),
        });
    }

    let n = annulus.len() as f64;
    let mut drift = [0.0; 3];
    for &i in &annulus {
        let d = wrapped_displacement(&impact.atoms[i], impact.cell_nm);
        for (acc, component) in drift.iter_mut().zip(d) {
            *acc += component;
        }
    }
    for c in drift.iter_mut() {
        *c /= n;
    }

    let mut out = impact.clone();
    for atom in out.atoms.iter_mut().filter(|a| !a.sputtered) {
        for (pos, component) in atom.pos_final_nm.iter_mut().zip(drift) {
            *pos -= component;
        }
    }

    if cfg.shear_correction {
        // fit d(z) = s (z - z̄) over annulus atoms, in the beam frame,
        // using the drift-corrected displacements
        let depth_mean: f64 = annulus
            .iter()
            .map(|&i| impact.atoms[i].pos_initial_nm[2])
            .sum::<f64>()
            / n;
        let mut denom = 0.0;
        let mut cross = [0.0; 2];
        for &i in &annulus {
            let atom = &out.atoms[i];
            let dz = atom.pos_initial_nm[2] - depth_mean;
            denom += dz * dz;
            let d = wrapped_displacement(atom, impact.cell_nm);
            let beam = to_beam_frame([d[0], d[1]], azimuth);
            cross[0] += dz * beam[0];
            cross[1] += dz * beam[1];
        }
        if denom <= 1e-12 {
            return Err(FilterError::DegenerateDepths {
                impact_id: impact.impact_id,
            });
        }
        let slope = [cross[0] / denom, cross[1] / denom];
        for atom in out.atoms.iter_mut().filter(|a| !a.sputtered) {
            let dz = atom.pos_initial_nm[2] - depth_mean;
            let shear_lab = to_lab_frame([slope[0] * dz, slope[1] * dz], azimuth);
            atom.pos_final_nm[0] -= shear_lab[0];
            atom.pos_final_nm[1] -= shear_lab[1];
        }
    }

    // keep corrected displacements away from the wrap boundary
    for atom in out.atoms.iter_mut().filter(|a| !a.sputtered) {
        for c in 0..2 {
            let d = atom.pos_final_nm[c] - atom.pos_initial_nm[c];
            let wrapped = wrap_component(d, impact.cell_nm[c]);
            atom.pos_final_nm[c] = atom.pos_initial_nm[c] + wrapped;
        }
    }

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impact::AtomEvent;

    /// One impact with a crater atom near the center and `n` zero-displacement
    /// annulus atoms at staggered depths.
    fn impact_with_annulus(n: usize) -> ImpactRecord {
        let mut atoms = vec![AtomEvent {
            atom_id: 0,
            species: "Ga".into(),
            pos_initial_nm: [5.0, 5.0, -0.3],
            pos_final_nm: [6.0, 5.0, -0.3],
            sputtered: false,
        }];
        for j in 0..n {
            let phi = 2.0 * std::f64::consts::PI * (j as f64) / (n as f64);
            let r = 4.2;
            atoms.push(AtomEvent {
                atom_id: (j + 1) as i64,
                species: "Sb".into(),
                pos_initial_nm: [
                    5.0 + r * phi.cos(),
                    5.0 + r * phi.sin(),
                    -0.2 - 0.1 * (j as f64),
                ],
                pos_final_nm: [
                    5.0 + r * phi.cos(),
                    5.0 + r * phi.sin(),
                    -0.2 - 0.1 * (j as f64),
                ],
                sputtered: false,
            });
        }
        ImpactRecord {
            impact_id: 0,
            theta_deg: 0.0,
            azimuth_deg: 0.0,
            impact_point_nm: [5.0, 5.0],
            cell_nm: [10.0, 10.0],
            surface_z_nm: 0.0,
            atoms,
        }
    }

    fn add_drift(imp: &mut ImpactRecord, drift: [f64; 3]) {
        for atom in imp.atoms.iter_mut().filter(|a| !a.sputtered) {
            for (pos, component) in atom.pos_final_nm.iter_mut().zip(drift) {
                *pos += component;
            }
        }
    }

    fn add_shear(imp: &mut ImpactRecord, sx: f64) {
        for atom in imp.atoms.iter_mut().filter(|a| !a.sputtered) {
            atom.pos_final_nm[0] += sx * atom.pos_initial_nm[2];
        }
    }

    #[test]
    fn drift_is_removed_exactly() {
        let clean = impact_with_annulus(16);
        let mut dirty = clean.clone();
        add_drift(&mut dirty, [0.1, 0.0, -0.05]);
        let filtered = filter_noise(&dirty, &FilterConfig::default()).unwrap();
        for (a, b) in filtered.atoms.iter().zip(clean.atoms.iter()) {
            for c in 0..3 {
                assert!((a.pos_final_nm[c] - b.pos_final_nm[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pure_shear_is_removed() {
        let clean = impact_with_annulus(16);
        let mut dirty = clean.clone();
        add_shear(&mut dirty, 0.01);
        let filtered = filter_noise(&dirty, &FilterConfig::default()).unwrap();
        for (a, b) in filtered.atoms.iter().zip(clean.atoms.iter()) {
            for c in 0..3 {
                assert!((a.pos_final_nm[c] - b.pos_final_nm[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn too_few_annulus_atoms_is_an_error() {
        let imp = impact_with_annulus(5);
        assert_eq!(
            filter_noise(&imp, &FilterConfig::default()),
            Err(FilterError::TooFewAnnulusAtoms {
                impact_id: 0,
                found: 5
            })
        );
    }

    #[test]
    fn flat_annulus_depths_fail_shear_fit() {
        let mut imp = impact_with_annulus(12);
        for atom in imp.atoms.iter_mut().skip(1) {
            atom.pos_initial_nm[2] = -0.4;
            atom.pos_final_nm[2] = -0.4;
        }
        assert_eq!(
            filter_noise(&imp, &FilterConfig::default()),
            Err(FilterError::DegenerateDepths { impact_id: 0 })
        );
        // without shear correction the same impact filters fine
        let cfg = FilterConfig {
            shear_correction: false,
            ..FilterConfig::default()
        };
        assert!(filter_noise(&imp, &cfg).is_ok());
    }

    #[test]
    fn filter_is_idempotent() {
        let mut dirty = impact_with_annulus(16);
        add_drift(&mut dirty, [0.07, -0.02, 0.01]);
        add_shear(&mut dirty, 0.004);
        let cfg = FilterConfig::default();
        let once = filter_noise(&dirty, &cfg).unwrap();
        let twice = filter_noise(&once, &cfg).unwrap();
        for (a, b) in twice.atoms.iter().zip(once.atoms.iter()) {
            for c in 0..3 {
                assert!((a.pos_final_nm[c] - b.pos_final_nm[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sputtered_atoms_are_untouched() {
        let mut imp = impact_with_annulus(12);
        imp.atoms[0].sputtered = true;
        imp.atoms[0].pos_final_nm = [5.0, 5.0, 4.0];
        let mut dirty = imp.clone();
        add_drift(&mut dirty, [0.1, 0.1, 0.0]);
        let filtered = filter_noise(&dirty, &FilterConfig::default()).unwrap();
        assert_eq!(filtered.atoms[0].pos_final_nm, [5.0, 5.0, 4.0]);
    }

    #[test]
    fn bad_config_rejected() {
        let imp = impact_with_annulus(12);
        let cfg = FilterConfig {
            annulus_inner: 0.5,
            annulus_outer: 0.4,
            shear_correction: false,
        };
        assert!(matches!(
            filter_noise(&imp, &cfg),
            Err(FilterError::BadConfig { .. })
        ));
    }
}
