//! Crater-function moments of single impacts and their per-angle statistics.
//!
//! For each species Z with atomic volume Ω the per-impact moments are
//!
//! ```text
//! M⁽⁰⁾_Z          = -Ω · (number of sputtered Z atoms)            [nm³]
//! M⁽¹⁾_{Z,eros}   = -Ω · Σ x_iᴵ   over sputtered Z atoms          [nm⁴]
//! M⁽¹⁾_{Z,redist} = +Ω · Σ (xᶠ - xᴵ) over retained Z atoms        [nm⁴]
//! ```
//!
//! First moments are in-plane 2-vectors in the beam-aligned frame (x along
//! the projected beam azimuth). Positions are taken relative to the impact
//! point and displacements as minimal images under the periodic cell. The
//! zeroth moment has no redistributive part, and the y-components of the
//! first moments serve only as a symmetry diagnostic.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::filter::{filter_noise, FilterConfig, FilterError};
use crate::geometry::{to_beam_frame, wrap_in_plane, Vec2};
use crate::impact::{ImpactRecord, ImpactSet, SpeciesId};

/// Moments of one species within one impact (or statistics thereof).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpeciesMoments {
    /// Zeroth (erosive volume) moment, nm³. Never positive.
    pub m0_nm3: f64,
    /// First erosive moment, nm⁴, beam frame.
    pub m1_eros_nm4: Vec2,
    /// First redistributive moment, nm⁴, beam frame.
    pub m1_redist_nm4: Vec2,
}

/// Moments of both species, ordered as in the owning set.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MomentVector {
    pub species: [SpeciesMoments; 2],
}

impl MomentVector {
    /// The ten scalar channels in canonical order:
    /// m0(A), m0(B), then eros x,y and redist x,y per species.
    pub fn channels(&self) -> [f64; 10] {
        let [a, b] = &self.species;
        [
            a.m0_nm3,
            b.m0_nm3,
            a.m1_eros_nm4[0],
            a.m1_eros_nm4[1],
            b.m1_eros_nm4[0],
            b.m1_eros_nm4[1],
            a.m1_redist_nm4[0],
            a.m1_redist_nm4[1],
            b.m1_redist_nm4[0],
            b.m1_redist_nm4[1],
        ]
    }

    pub fn from_channels(c: [f64; 10]) -> Self {
        MomentVector {
            species: [
                SpeciesMoments {
                    m0_nm3: c[0],
                    m1_eros_nm4: [c[2], c[3]],
                    m1_redist_nm4: [c[6], c[7]],
                },
                SpeciesMoments {
                    m0_nm3: c[1],
                    m1_eros_nm4: [c[4], c[5]],
                    m1_redist_nm4: [c[8], c[9]],
                },
            ],
        }
    }
}

/// Channel column names for the canonical order of [`MomentVector::channels`].
pub fn channel_names(labels: [&str; 2]) -> [String; 10] {
    let [a, b] = labels;
    [
        format!("m0_{a}"),
        format!("m0_{b}"),
        format!("m1_eros_x_{a}"),
        format!("m1_eros_y_{a}"),
        format!("m1_eros_x_{b}"),
        format!("m1_eros_y_{b}"),
        format!("m1_redist_x_{a}"),
        format!("m1_redist_y_{a}"),
        format!("m1_redist_x_{b}"),
        format!("m1_redist_y_{b}"),
    ]
}

/// Per-angle mean and standard error over an impact ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSample {
    pub theta_deg: f64,
    pub n_impacts: usize,
    pub mean: MomentVector,
    /// Component-wise standard error of the mean; zero when n = 1.
    pub stderr: MomentVector,
}

/// Angle-resolved moment statistics with the species they refer to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub species: [SpeciesId; 2],
    pub samples: Vec<MomentSample>,
}

/// Moments of a single (normally pre-filtered) impact.
///
/// Atoms are summed in atom-id order, so the result is independent of
/// storage order.
pub fn impact_moments(impact: &ImpactRecord, species: &[SpeciesId; 2]) -> MomentVector {
    let azimuth = impact.azimuth_rad();
    let mut order: Vec<usize> = (0..impact.atoms.len()).collect();
    order.sort_by_key(|&i| impact.atoms[i].atom_id);

    let mut out = MomentVector::default();
    for &i in &order {
        let atom = &impact.atoms[i];
        let s = match species.iter().position(|sp| sp.label == atom.species) {
            Some(s) => s,
            None => continue,
        };
        let omega = species[s].atomic_volume_nm3;
        let acc = &mut out.species[s];
        if atom.sputtered {
            let rel = wrap_in_plane(
                [
                    atom.pos_initial_nm[0] - impact.impact_point_nm[0],
                    atom.pos_initial_nm[1] - impact.impact_point_nm[1],
                ],
                impact.cell_nm,
            );
            let beam = to_beam_frame(rel, azimuth);
            acc.m0_nm3 -= omega;
            acc.m1_eros_nm4[0] -= omega * beam[0];
            acc.m1_eros_nm4[1] -= omega * beam[1];
        } else {
            let disp = wrap_in_plane(
                [
                    atom.pos_final_nm[0] - atom.pos_initial_nm[0],
                    atom.pos_final_nm[1] - atom.pos_initial_nm[1],
                ],
                impact.cell_nm,
            );
            let beam = to_beam_frame(disp, azimuth);
            acc.m1_redist_nm4[0] += omega * beam[0];
            acc.m1_redist_nm4[1] += omega * beam[1];
        }
    }
    out
}

/// Filter every impact, compute its moments, and aggregate per angle.
///
/// Output is sorted by angle; impacts within an angle group are processed
/// in impact-id order, making the sums independent of input order.
pub fn aggregate_moments(set: &ImpactSet, cfg: &FilterConfig) -> Result<MomentTable, FilterError> {
    cfg.validate()?;
    let mut groups: Vec<(f64, Vec<&ImpactRecord>)> = Vec::new();
    for imp in &set.impacts {
        match groups
            .iter_mut()
            .find(|(t, _)| t.to_bits() == imp.theta_deg.to_bits())
        {
            Some((_, v)) => v.push(imp),
            None => groups.push((imp.theta_deg, vec![imp])),
        }
    }
    groups.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut samples = Vec::with_capacity(groups.len());
    for (theta_deg, mut group) in groups {
        group.sort_by_key(|imp| imp.impact_id);
        let mut per_impact: Vec<[f64; 10]> = Vec::with_capacity(group.len());
        for imp in &group {
            let filtered = filter_noise(imp, cfg)?;
            per_impact.push(impact_moments(&filtered, &set.species).channels());
        }
        let n = per_impact.len();
        let nf = n as f64;
        let mut mean = [0.0; 10];
        for ch in &per_impact {
            for c in 0..10 {
                mean[c] += ch[c];
            }
        }
        for m in mean.iter_mut() {
            *m /= nf;
        }
        let mut stderr = [0.0; 10];
        if n > 1 {
            for ch in &per_impact {
                for c in 0..10 {
                    let d = ch[c] - mean[c];
                    stderr[c] += d * d;
                }
            }
            for s in stderr.iter_mut() {
                *s = (*s / (nf - 1.0) / nf).sqrt();
            }
        }
        samples.push(MomentSample {
            theta_deg,
            n_impacts: n,
            mean: MomentVector::from_channels(mean),
            stderr: MomentVector::from_channels(stderr),
        });
    }
    Ok(MomentTable {
        species: set.species.clone(),
        samples,
    })
}

#[derive(Debug)]
pub enum MomentCsvError {
    MissingSpeciesComment,
    MalformedLine { line: usize, detail: String },
}

impl fmt::Display for MomentCsvError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MomentCsvError::MissingSpeciesComment => {
                write!(f, "moment CSV lacks the `# species:` comment line")
            }
            MomentCsvError::MalformedLine { line, detail } => {
                write!(f, "moment CSV line {line}: {detail}")
            }
        }
    }
}

impl std::error::Error for MomentCsvError {}

/// CSV with one row per angle: theta, impact count, then mean and standard
/// error for each of the ten channels. Units ride in header comments.
pub fn write_moment_csv(table: &MomentTable) -> String {
    let mut out = String::new();
    out.push_str("# crater-function moments per impact, averaged per angle\n");
    out.push_str("# units: theta_deg in degrees; m0 in nm^3; m1 in nm^4; stderr in channel units\n");
    out.push_str(&format!(
        "# species: {} {} {} {}\n",
        table.species[0].label,
        table.species[0].atomic_volume_nm3,
        table.species[1].label,
        table.species[1].atomic_volume_nm3,
    ));
    let names = channel_names([&table.species[0].label, &table.species[1].label]);
    out.push_str("theta_deg,n_impacts");
    for name in &names {
        out.push_str(&format!(",{name}_mean,{name}_stderr"));
    }
    out.push('\n');
    for s in &table.samples {
        out.push_str(&format!("{},{}", s.theta_deg, s.n_impacts));
        let mean = s.mean.channels();
        let err = s.stderr.channels();
        for c in 0..10 {
            out.push_str(&format!(",{},{}", mean[c], err[c]));
        }
        out.push('\n');
    }
    out
}

/// Parse a table previously written by [`write_moment_csv`].
pub fn parse_moment_csv(text: &str) -> Result<MomentTable, MomentCsvError> {
    let mut species: Option<[SpeciesId; 2]> = None;
    let mut samples = Vec::new();
    let mut saw_header = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some(rest) = comment.trim().strip_prefix("species:") {
                let tok: Vec<&str> = rest.split_whitespace().collect();
                if tok.len() == 4 {
                    let va = tok[1].parse().map_err(|_| MomentCsvError::MalformedLine {
                        line,
                        detail: "bad atomic volume".into(),
                    })?;
                    let vb = tok[3].parse().map_err(|_| MomentCsvError::MalformedLine {
                        line,
                        detail: "bad atomic volume".into(),
                    })?;
                    species = Some([SpeciesId::new(tok[0], va), SpeciesId::new(tok[2], vb)]);
                }
            }
            continue;
        }
        if !saw_header {
            // column header row
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 22 {
            return Err(MomentCsvError::MalformedLine {
                line,
                detail: format!("expected 22 columns, found {}", fields.len()),
            });
        }
        let parse = |s: &str, what: &str| -> Result<f64, MomentCsvError> {
            s.parse().map_err(|_| MomentCsvError::MalformedLine {
                line,
                detail: format!("cannot parse {what}"),
            })
        };
        let theta_deg = parse(fields[0], "theta")?;
        let n_impacts: usize = fields[1].parse().map_err(|_| MomentCsvError::MalformedLine {
            line,
            detail: "cannot parse impact count".into(),
        })?;
        let mut mean = [0.0; 10];
        let mut err = [0.0; 10];
        for c in 0..10 {
            mean[c] = parse(fields[2 + 2 * c], "mean")?;
            err[c] = parse(fields[3 + 2 * c], "stderr")?;
        }
        samples.push(MomentSample {
            theta_deg,
            n_impacts,
            mean: MomentVector::from_channels(mean),
            stderr: MomentVector::from_channels(err),
        });
    }
    Ok(MomentTable {
        species: species.ok_or(MomentCsvError::MissingSpeciesComment)?,
        samples,
    })
}
