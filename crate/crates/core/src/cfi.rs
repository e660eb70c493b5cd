//! CFI, a line-oriented interchange format for impact ensembles, plus the
//! equivalent JSON mapping.
//!
//! Grammar (UTF-8, `#` starts a comment, fields whitespace-separated):
//!
//! ```text
//! CFI 1
//! SPECIES <labelA> <omegaA_nm3> <labelB> <omegaB_nm3>
//! IMPACT <id> theta=<deg> azimuth=<deg> impact=<x> <y> cell=<Lx> <Ly> zsurf=<z>
//! ATOM <id> <species_label> <xI> <yI> <zI> <xF> <yF> <zF> <S|R>
//! ```
//!
//! `S` marks a sputtered atom, `R` a retained one. Every `ATOM` line belongs
//! to the most recent `IMPACT` line. Set-level metadata rides in comment
//! lines of the form `# META <key> <value...>` so that a plain CFI reader
//! can skip it; the writer emits those lines and the parser restores them,
//! making the JSON ↔ CFI conversion lossless.
//!
//! The writer prints floats with 17 significant digits, which round-trips
//! every f64 bit-exactly.

use std::collections::BTreeMap;
use std::fmt;

use crate::impact::{AtomEvent, ImpactRecord, ImpactSet, SpeciesId, ValidationError};

/// Supported interchange encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    CfiText,
    Json,
}

#[derive(Debug)]
pub enum CfiError {
    NotUtf8,
    MalformedHeader { line: usize, detail: String },
    MalformedRecord { line: usize, detail: String },
    BadNumber { line: usize, field: String },
    UnknownSpecies { line: usize, label: String },
    DuplicateAtomId { line: usize, impact_id: i64, atom_id: i64 },
    NonFiniteValue { line: usize, field: String },
    ThetaOutOfRange { line: usize, value: f64 },
    AtomBeforeImpact { line: usize },
    Validation(ValidationError),
    Json(serde_json::Error),
}

impl fmt::Display for CfiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use CfiError::*;
        match self {
            NotUtf8 => write!(f, "input is not valid UTF-8"),
            MalformedHeader { line, detail } => write!(f, "line {line}: malformed header: {detail}"),
            MalformedRecord { line, detail } => write!(f, "line {line}: malformed record: {detail}"),
            BadNumber { line, field } => write!(f, "line {line}: cannot parse number in {field}"),
            UnknownSpecies { line, label } => write!(f, "line {line}: unknown species label {label}"),
            DuplicateAtomId { line, impact_id, atom_id } => write!(
                f,
                "line {line}: duplicate atom id {atom_id} within impact {impact_id}"
            ),
            NonFiniteValue { line, field } => write!(f, "line {line}: non-finite value in {field}"),
            ThetaOutOfRange { line, value } => {
                write!(f, "line {line}: theta {value} outside [0, 90] degrees")
            }
            AtomBeforeImpact { line } => write!(f, "line {line}: ATOM before any IMPACT"),
            Validation(e) => write!(f, "validation: {e}"),
            Json(e) => write!(f, "json: {e}"),
        }
    }
}

impl std::error::Error for CfiError {}

impl From<ValidationError> for CfiError {
    fn from(e: ValidationError) -> Self {
        CfiError::Validation(e)
    }
}

/// Parse an impact set from bytes in the declared format and validate it.
pub fn parse_impact_set(source: &[u8], format: Format) -> Result<ImpactSet, CfiError> {
    let text = std::str::from_utf8(source).map_err(|_| CfiError::NotUtf8)?;
    let set = match format {
        Format::CfiText => parse_cfi(text)?,
        Format::Json => serde_json::from_str::<ImpactSet>(text).map_err(CfiError::Json)?,
    };
    set.validate()?;
    Ok(set)
}

/// Serialize a valid impact set; refuses invalid sets.
pub fn write_impact_set(set: &ImpactSet, format: Format) -> Result<Vec<u8>, CfiError> {
    set.validate()?;
    let text = match format {
        Format::CfiText => write_cfi(set),
        Format::Json => {
            let mut s = serde_json::to_string_pretty(set).map_err(CfiError::Json)?;
            s.push('\n');
            s
        }
    };
    Ok(text.into_bytes())
}

fn parse_f64(token: &str, line: usize, field: &str) -> Result<f64, CfiError> {
    let value: f64 = token.parse().map_err(|_| CfiError::BadNumber {
        line,
        field: field.to_string(),
    })?;
    if !value.is_finite() {
        return Err(CfiError::NonFiniteValue {
            line,
            field: field.to_string(),
        });
    }
    Ok(value)
}

fn parse_i64(token: &str, line: usize, field: &str) -> Result<i64, CfiError> {
    token.parse().map_err(|_| CfiError::BadNumber {
        line,
        field: field.to_string(),
    })
}

/// Split a `key=value` token, checking the key.
fn keyed<'a>(token: &'a str, key: &str, line: usize) -> Result<&'a str, CfiError> {
    match token.split_once('=') {
        Some((k, v)) if k == key => Ok(v),
        _ => Err(CfiError::MalformedRecord {
            line,
            detail: format!("expected {key}=<value>, found {token:?}"),
        }),
    }
}

pub fn parse_cfi(text: &str) -> Result<ImpactSet, CfiError> {
    let mut species: Option<[SpeciesId; 2]> = None;
    let mut metadata = BTreeMap::new();
    let mut impacts: Vec<ImpactRecord> = Vec::new();
    let mut saw_magic = false;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            // metadata travels in comments: "# META <key> <value...>"
            let comment = comment.trim_start();
            if let Some(rest) = comment.strip_prefix("META ") {
                let mut parts = rest.trim().splitn(2, char::is_whitespace);
                if let Some(key) = parts.next() {
                    let value = parts.next().unwrap_or("").trim().to_string();
                    metadata.insert(key.to_string(), value);
                }
            }
            continue;
        }
        // trailing comments on data lines
        let content = trimmed.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = content.split_whitespace().collect();

        if !saw_magic {
            if tokens.len() != 2 || tokens[0] != "CFI" || tokens[1] != "1" {
                return Err(CfiError::MalformedHeader {
                    line,
                    detail: "expected `CFI 1`".into(),
                });
            }
            saw_magic = true;
            continue;
        }

        match tokens[0] {
            "SPECIES" => {
                if species.is_some() {
                    return Err(CfiError::MalformedHeader {
                        line,
                        detail: "duplicate SPECIES line".into(),
                    });
                }
                if tokens.len() != 5 {
                    return Err(CfiError::MalformedHeader {
                        line,
                        detail: "SPECIES needs two labels and two volumes".into(),
                    });
                }
                species = Some([
                    SpeciesId::new(tokens[1], parse_f64(tokens[2], line, "atomic volume")?),
                    SpeciesId::new(tokens[3], parse_f64(tokens[4], line, "atomic volume")?),
                ]);
            }
            "IMPACT" => {
                if species.is_none() {
                    return Err(CfiError::MalformedHeader {
                        line,
                        detail: "IMPACT before SPECIES".into(),
                    });
                }
                if tokens.len() != 9 {
                    return Err(CfiError::MalformedRecord {
                        line,
                        detail: format!("IMPACT needs 9 fields, found {}", tokens.len()),
                    });
                }
                let theta_deg = parse_f64(keyed(tokens[2], "theta", line)?, line, "theta")?;
                if !(0.0..=90.0).contains(&theta_deg) {
                    return Err(CfiError::ThetaOutOfRange {
                        line,
                        value: theta_deg,
                    });
                }
                impacts.push(ImpactRecord {
                    impact_id: parse_i64(tokens[1], line, "impact id")?,
                    theta_deg,
                    azimuth_deg: parse_f64(keyed(tokens[3], "azimuth", line)?, line, "azimuth")?,
                    impact_point_nm: [
                        parse_f64(keyed(tokens[4], "impact", line)?, line, "impact point x")?,
                        parse_f64(tokens[5], line, "impact point y")?,
                    ],
                    cell_nm: [
                        parse_f64(keyed(tokens[6], "cell", line)?, line, "cell Lx")?,
                        parse_f64(tokens[7], line, "cell Ly")?,
                    ],
                    surface_z_nm: parse_f64(keyed(tokens[8], "zsurf", line)?, line, "zsurf")?,
                    atoms: Vec::new(),
                });
            }
            "ATOM" => {
                let imp = impacts
                    .last_mut()
                    .ok_or(CfiError::AtomBeforeImpact { line })?;
                if tokens.len() != 10 {
                    return Err(CfiError::MalformedRecord {
                        line,
                        detail: format!("ATOM needs 10 fields, found {}", tokens.len()),
                    });
                }
                let atom_id = parse_i64(tokens[1], line, "atom id")?;
                if imp.atoms.iter().any(|a| a.atom_id == atom_id) {
                    return Err(CfiError::DuplicateAtomId {
                        line,
                        impact_id: imp.impact_id,
                        atom_id,
                    });
                }
                let label = tokens[2];
                let pair = species.as_ref().unwrap();
                if !pair.iter().any(|s| s.label == label) {
                    return Err(CfiError::UnknownSpecies {
                        line,
                        label: label.to_string(),
                    });
                }
                let mut coords = [0.0; 6];
                for (i, c) in coords.iter_mut().enumerate() {
                    *c = parse_f64(tokens[3 + i], line, "coordinate")?;
                }
                let sputtered = match tokens[9] {
                    "S" => true,
                    "R" => false,
                    other => {
                        return Err(CfiError::MalformedRecord {
                            line,
                            detail: format!("expected S or R flag, found {other:?}"),
                        })
                    }
                };
                imp.atoms.push(AtomEvent {
                    atom_id,
                    species: label.to_string(),
                    pos_initial_nm: [coords[0], coords[1], coords[2]],
                    pos_final_nm: [coords[3], coords[4], coords[5]],
                    sputtered,
                });
            }
            other => {
                return Err(CfiError::MalformedRecord {
                    line,
                    detail: format!("unknown record type {other:?}"),
                })
            }
        }
    }

    if !saw_magic {
        return Err(CfiError::MalformedHeader {
            line: 1,
            detail: "missing `CFI 1` header".into(),
        });
    }
    let species = species.ok_or(CfiError::MalformedHeader {
        line: 1,
        detail: "missing SPECIES line".into(),
    })?;
    Ok(ImpactSet {
        species,
        metadata,
        impacts,
    })
}

/// 17 significant digits: enough to reproduce any f64 exactly on re-parse.
fn full(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_cfi(set: &ImpactSet) -> String {
    let mut out = String::new();
    out.push_str("CFI 1\n");
    for (key, value) in &set.metadata {
        if value.is_empty() {
            out.push_str(&format!("# META {key}\n"));
        } else {
            out.push_str(&format!("# META {key} {value}\n"));
        }
    }
    out.push_str(&format!(
        "SPECIES {} {} {} {}\n",
        set.species[0].label,
        full(set.species[0].atomic_volume_nm3),
        set.species[1].label,
        full(set.species[1].atomic_volume_nm3),
    ));
    for imp in &set.impacts {
        out.push_str(&format!(
            "IMPACT {} theta={} azimuth={} impact={} {} cell={} {} zsurf={}\n",
            imp.impact_id,
            full(imp.theta_deg),
            full(imp.azimuth_deg),
            full(imp.impact_point_nm[0]),
            full(imp.impact_point_nm[1]),
            full(imp.cell_nm[0]),
            full(imp.cell_nm[1]),
            full(imp.surface_z_nm),
        ));
        for atom in &imp.atoms {
            out.push_str(&format!(
                "ATOM {} {} {} {} {} {} {} {} {}\n",
                atom.atom_id,
                atom.species,
                full(atom.pos_initial_nm[0]),
                full(atom.pos_initial_nm[1]),
                full(atom.pos_initial_nm[2]),
                full(atom.pos_final_nm[0]),
                full(atom.pos_final_nm[1]),
                full(atom.pos_final_nm[2]),
                if atom.sputtered { "S" } else { "R" },
            ));
        }
    }
    out
}

/// The 6-line example from the format documentation, used by tests.
pub const FIXTURE: &str = "CFI 1\n\
SPECIES Ga 0.0339 Sb 0.0339\n\
IMPACT 0 theta=0 azimuth=0 impact=0 0 cell=10 10 zsurf=0\n\
ATOM 1 Ga 0 0 0 0 0 5 S\n\
ATOM 2 Sb 0 0 -0.3 1 0 -0.3 R\n";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_parses() {
        let set = parse_impact_set(FIXTURE.as_bytes(), Format::CfiText).unwrap();
        assert_eq!(set.species[0], SpeciesId::new("Ga", 0.0339));
        assert_eq!(set.species[1], SpeciesId::new("Sb", 0.0339));
        assert_eq!(set.impacts.len(), 1);
        assert_eq!(set.impacts[0].atoms.len(), 2);
        assert!(set.impacts[0].atoms[0].sputtered);
        // sputtered atoms keep their final position even though the moment
        // formulas ignore it
        assert_eq!(set.impacts[0].atoms[0].pos_final_nm, [0.0, 0.0, 5.0]);
        assert!(!set.impacts[0].atoms[1].sputtered);
    }

    #[test]
    fn fixture_roundtrips() {
        let set = parse_impact_set(FIXTURE.as_bytes(), Format::CfiText).unwrap();
        let bytes = write_impact_set(&set, Format::CfiText).unwrap();
        let back = parse_impact_set(&bytes, Format::CfiText).unwrap();
        assert_eq!(set, back);
    }

    #[test]
    fn duplicate_atom_id_names_line_and_impact() {
        let text = "CFI 1\nSPECIES Ga 0.03 Sb 0.03\n\
IMPACT 4 theta=0 azimuth=0 impact=0 0 cell=10 10 zsurf=0\n\
ATOM 7 Ga 0 0 0 0 0 0 R\nATOM 7 Sb 0 0 0 0 0 0 R\n";
        match parse_impact_set(text.as_bytes(), Format::CfiText) {
            Err(CfiError::DuplicateAtomId {
                line,
                impact_id,
                atom_id,
            }) => {
                assert_eq!(line, 5);
                assert_eq!(impact_id, 4);
                assert_eq!(atom_id, 7);
            }
            other => panic!("expected duplicate-id error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_species_label_is_located() {
        let text = "CFI 1\nSPECIES Ga 0.03 Sb 0.03\n\
IMPACT 0 theta=0 azimuth=0 impact=0 0 cell=10 10 zsurf=0\n\
ATOM 1 Si 0 0 0 0 0 0 R\n";
        match parse_impact_set(text.as_bytes(), Format::CfiText) {
            Err(CfiError::UnknownSpecies { line, label }) => {
                assert_eq!(line, 4);
                assert_eq!(label, "Si");
            }
            other => panic!("expected unknown-species error, got {other:?}"),
        }
    }

    #[test]
    fn theta_out_of_range_is_located() {
        let text = "CFI 1\nSPECIES Ga 0.03 Sb 0.03\n\
IMPACT 0 theta=95 azimuth=0 impact=0 0 cell=10 10 zsurf=0\nATOM 1 Ga 0 0 0 0 0 0 R\n";
        match parse_impact_set(text.as_bytes(), Format::CfiText) {
            Err(CfiError::ThetaOutOfRange { line, value }) => {
                assert_eq!(line, 3);
                assert_eq!(value, 95.0);
            }
            other => panic!("expected theta error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_coordinate_rejected() {
        let text = "CFI 1\nSPECIES Ga 0.03 Sb 0.03\n\
IMPACT 0 theta=0 azimuth=0 impact=0 0 cell=10 10 zsurf=0\nATOM 1 Ga 0 0 0 inf 0 0 R\n";
        assert!(matches!(
            parse_impact_set(text.as_bytes(), Format::CfiText),
            Err(CfiError::NonFiniteValue { line: 4, .. })
        ));
    }

    #[test]
    fn malformed_header_rejected() {
        assert!(matches!(
            parse_impact_set(b"CFI 2\n", Format::CfiText),
            Err(CfiError::MalformedHeader { line: 1, .. })
        ));
        assert!(matches!(
            parse_impact_set(b"# only comments\n", Format::CfiText),
            Err(CfiError::MalformedHeader { .. })
        ));
    }

    #[test]
    fn empty_impact_refused_on_write() {
        let mut set = parse_impact_set(FIXTURE.as_bytes(), Format::CfiText).unwrap();
        set.impacts[0].atoms.clear();
        assert!(matches!(
            write_impact_set(&set, Format::CfiText),
            Err(CfiError::Validation(ValidationError::EmptyAtoms { .. }))
        ));
    }

    #[test]
    fn metadata_survives_cfi() {
        let mut set = parse_impact_set(FIXTURE.as_bytes(), Format::CfiText).unwrap();
        set.metadata.insert("ion".into(), "Ar 250 eV".into());
        set.metadata.insert("source".into(), "demo".into());
        let bytes = write_impact_set(&set, Format::CfiText).unwrap();
        let back = parse_impact_set(&bytes, Format::CfiText).unwrap();
        assert_eq!(back.metadata["ion"], "Ar 250 eV");
        assert_eq!(set, back);
    }

    #[test]
    fn json_roundtrip_matches() {
        let set = parse_impact_set(FIXTURE.as_bytes(), Format::CfiText).unwrap();
        let bytes = write_impact_set(&set, Format::Json).unwrap();
        let back = parse_impact_set(&bytes, Format::Json).unwrap();
        assert_eq!(set, back);
    }
}
