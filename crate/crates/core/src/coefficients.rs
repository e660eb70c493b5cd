//! From fitted moments to height-equation coefficients and the parameters
//! of the coupled height/concentration equations.
//!
//! With I₀ the ion flux through a plane perpendicular to the beam, the
//! height equation picks up, per species Z and per unit flux,
//!
//! ```text
//! Y_Z(θ)  = cos θ · M⁽⁰⁾_Z(θ)                      [nm/s per I₀]
//! S_X(θ)  = d/dθ [ cos θ · M⁽¹⁾(θ) ]               [nm²/s per I₀]
//! S_Y(θ)  = cos θ · cot θ · M⁽¹⁾(θ)                [nm²/s per I₀]
//! ```
//!
//! At normal incidence the cot θ singularity resolves to the derivative of
//! the (odd) first-moment fit, and S_X(0) = S_Y(0) exactly.
//!
//! Concentration dependence is modelled as linear: each species sputters
//! and redistributes at a rate proportional to its film concentration,
//! equal to the measured rate at c = ½. The steady film composition is
//! then the one whose sputtered flux matches the bulk composition, and the
//! measured coefficients map onto the parameters {A, C, A′, C′} of the
//! Bradley–Shipman equations [PRL 105, 145501 (2010); PRB 83, 245409
//! (2011)]. B and D′ vanish there by assumption; D (surface relaxation)
//! and B′ (Fickian diffusion) are not crater-function observables and must
//! be supplied by the user.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::fit::{ChannelKind, FourierFit, MomentFits, Parity};

/// Height-equation coefficients for one species, per unit flux.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesCoefficients {
    pub label: String,
    /// Y_Z: flat-surface erosion rate, nm/s per I₀. Negative for net erosion.
    pub yield_rate: f64,
    pub s_x_eros: f64,
    pub s_x_redist: f64,
    pub s_y_eros: f64,
    pub s_y_redist: f64,
}

/// Height-equation coefficients of both species at one angle and reference
/// concentration, per unit flux.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub theta_rad: f64,
    /// Film concentration the measurements were taken at.
    pub reference_concentration: [f64; 2],
    /// v₀ = -(Y_A + Y_B): steady recession speed, nm/s per I₀.
    pub recession_speed: f64,
    pub species: [SpeciesCoefficients; 2],
}

/// Bulk and steady film composition under the linear concentration model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationModel {
    pub bulk: [f64; 2],
    pub steady: [f64; 2],
    /// Amorphous film thickness Δf, nm.
    pub film_thickness_nm: f64,
    /// Marker that the linear concentration extrapolation was used.
    pub linear_model: bool,
}

/// Parameters of the linearized coupled equations, per unit flux where
/// crater-derived. D and B′ are absolute, user-supplied rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsParameters {
    pub species: [String; 2],
    /// Concentration dependence of the erosion rate, nm/s per I₀.
    pub a: f64,
    /// Net mass flux along concentration gradients; zero here, nm³/s per I₀.
    pub b: f64,
    /// Curvature coefficient (erosive + redistributive), nm²/s per I₀.
    pub c: f64,
    /// Surface relaxation, nm⁴/s; user-supplied, required for stability.
    pub d: Option<f64>,
    /// Film resupply damping, 1/s per I₀; positive by definition.
    pub a_prime: f64,
    /// Fickian diffusion, nm²/s; user-supplied, required for stability.
    pub b_prime: Option<f64>,
    /// Preferential-redistribution coupling, nm/s per I₀.
    pub c_prime: f64,
    /// Curvature-driven preferential migration; zero here, nm³/s per I₀.
    pub d_prime: f64,
    pub concentration: ConcentrationModel,
}

impl BsParameters {
    /// G = A′C - C′A, the long-wave group; positive G means stable
    /// long waves. Per I₀².
    pub fn longwave_group(&self) -> f64 {
        self.a_prime * self.c - self.c_prime * self.a
    }
}

/// Unit strings for the serialized parameter report, keyed by field.
pub const PARAMETER_UNITS: [(&str, &str); 9] = [
    ("a", "nm/s per I0"),
    ("b", "nm^3/s per I0"),
    ("c", "nm^2/s per I0"),
    ("d", "nm^4/s"),
    ("a_prime", "1/s per I0"),
    ("b_prime", "nm^2/s"),
    ("c_prime", "nm/s per I0"),
    ("d_prime", "nm^3/s per I0"),
    ("longwave_group", "nm^2/s^2 per I0^2"),
];

fn unit_of(field: &str) -> &'static str {
    PARAMETER_UNITS
        .iter()
        .find(|(k, _)| *k == field)
        .map(|(_, u)| *u)
        .expect("known field")
}

/// How concentration-evaluated coefficients enter the parameter mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConcentrationEval {
    /// Evaluate through the linear model: S(c₀) = 2 c₀ S(½). Reproduces
    /// the published GaSb estimates. Default.
    Linear,
    /// Keep the measured c = ½ values: terms become c₀ · S(½). Retained
    /// for comparison.
    AtMeasured,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CoeffError {
    MissingChannel { key: String },
    WrongParity { key: String },
    SpeciesCount { found: usize },
    YieldNotNegative { label: String, value: f64 },
    ZeroTotalYield,
    BadFractions { detail: String },
    BadFilmThickness { value: f64 },
    APrimeNotPositive { value: f64 },
    ThetaNotZero { theta_rad: f64 },
    BadUserParameter { name: &'static str, value: f64 },
}

impl fmt::Display for CoeffError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use CoeffError::*;
        match self {
            MissingChannel { key } => write!(f, "missing fit for channel {key}"),
            WrongParity { key } => {
                write!(f, "channel {key}: first-moment fits must use the odd basis")
            }
            SpeciesCount { found } => write!(f, "expected 2 species in fits, found {found}"),
            YieldNotNegative { label, value } => {
                write!(f, "yield of {label} must be negative (eroding), got {value}")
            }
            ZeroTotalYield => write!(f, "total sputter yield is zero"),
            BadFractions { detail } => write!(f, "bad concentrations: {detail}"),
            BadFilmThickness { value } => write!(f, "film thickness must be > 0, got {value}"),
            APrimeNotPositive { value } => {
                write!(f, "A' = {value} violates A' > 0; check yields and bulk composition")
            }
            ThetaNotZero { theta_rad } => write!(
                f,
                "parameter mapping is defined at normal incidence, got theta = {theta_rad} rad"
            ),
            BadUserParameter { name, value } => {
                write!(f, "{name} must be >= 0, got {value}")
            }
        }
    }
}

impl std::error::Error for CoeffError {}

/// Linear concentration model: rate at concentration `c` given the
/// measured rate at c = ½.
pub fn linear_rate(value_at_half: f64, c: f64) -> f64 {
    value_at_half * 2.0 * c
}

/// Evaluate the six fitted channels into a coefficient set at `theta_rad`,
/// per unit flux.
pub fn compute_height_coefficients(
    fits: &MomentFits,
    theta_rad: f64,
) -> Result<CoefficientSet, CoeffError> {
    let labels = fits.species_labels();
    if labels.len() != 2 {
        return Err(CoeffError::SpeciesCount {
            found: labels.len(),
        });
    }

    let get = |label: &str, kind: ChannelKind| -> Result<&FourierFit, CoeffError> {
        fits.get(label, kind).ok_or(CoeffError::MissingChannel {
            key: kind.key(label),
        })
    };

    let (sin_t, cos_t) = theta_rad.sin_cos();
    let mut species = Vec::with_capacity(2);
    for label in &labels {
        let m0 = get(label, ChannelKind::M0)?;
        let eros = get(label, ChannelKind::ErosX)?;
        let redist = get(label, ChannelKind::RedistX)?;
        for fit in [eros, redist] {
            if fit.basis.parity != Parity::Odd {
                return Err(CoeffError::WrongParity {
                    key: fit.channel.clone(),
                });
            }
        }

        // S_X = d/dθ [cos θ M¹] by the product rule; S_Y = cos θ cot θ M¹,
        // resolved at θ = 0 by its limit, the derivative of the odd fit
        let s_x = |m1: &FourierFit| cos_t * m1.eval_derivative(theta_rad) - sin_t * m1.eval(theta_rad);
        let s_y = |m1: &FourierFit| {
            if theta_rad == 0.0 {
                m1.eval_derivative(0.0)
            } else {
                cos_t * (cos_t / sin_t) * m1.eval(theta_rad)
            }
        };

        species.push(SpeciesCoefficients {
            label: label.clone(),
            yield_rate: cos_t * m0.eval(theta_rad),
            s_x_eros: s_x(eros),
            s_x_redist: s_x(redist),
            s_y_eros: s_y(eros),
            s_y_redist: s_y(redist),
        });
    }
    let species: [SpeciesCoefficients; 2] = [species.remove(0), species.remove(0)];
    Ok(CoefficientSet {
        theta_rad,
        reference_concentration: [0.5, 0.5],
        recession_speed: -(species[0].yield_rate + species[1].yield_rate),
        species,
    })
}

fn check_fractions(pair: [f64; 2], what: &str) -> Result<(), CoeffError> {
    if pair.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(CoeffError::BadFractions {
            detail: format!("{what} fractions must lie in [0, 1], got {pair:?}"),
        });
    }
    if (pair[0] + pair[1] - 1.0).abs() > 1e-12 {
        return Err(CoeffError::BadFractions {
            detail: format!("{what} fractions must sum to 1, got {pair:?}"),
        });
    }
    Ok(())
}

/// Steady film composition: the concentration at which the sputtered flux
/// has the bulk composition, under the linear yield model.
///
/// Closed form: c_{A,0} = c_{A,b} |Y_B| / (c_{A,b} |Y_B| + c_{B,b} |Y_A|).
pub fn steady_concentration(
    coeffs: &CoefficientSet,
    bulk: [f64; 2],
    film_thickness_nm: f64,
) -> Result<ConcentrationModel, CoeffError> {
    check_fractions(bulk, "bulk")?;
    if film_thickness_nm.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(CoeffError::BadFilmThickness {
            value: film_thickness_nm,
        });
    }
    for sp in &coeffs.species {
        if sp.yield_rate >= 0.0 || sp.yield_rate.is_nan() {
            return Err(CoeffError::YieldNotNegative {
                label: sp.label.clone(),
                value: sp.yield_rate,
            });
        }
    }
    let ya = coeffs.species[0].yield_rate.abs();
    let yb = coeffs.species[1].yield_rate.abs();
    let denom = bulk[0] * yb + bulk[1] * ya;
    if denom == 0.0 {
        return Err(CoeffError::ZeroTotalYield);
    }
    let ca0 = bulk[0] * yb / denom;
    Ok(ConcentrationModel {
        bulk,
        steady: [ca0, 1.0 - ca0],
        film_thickness_nm,
        linear_model: true,
    })
}

/// Fraction of species A in the sputtered flux at film composition `c`,
/// under the linear yield model. The steady concentration is the fixed
/// point where this equals the bulk fraction of A.
pub fn sputtered_fraction_a(coeffs: &CoefficientSet, c: [f64; 2]) -> f64 {
    let fa = linear_rate(coeffs.species[0].yield_rate.abs(), c[0]);
    let fb = linear_rate(coeffs.species[1].yield_rate.abs(), c[1]);
    fa / (fa + fb)
}

/// Map a normal-incidence coefficient set and a concentration model onto
/// the coupled-equation parameters. `relaxation_d` and `diffusion_b_prime`
/// (D, B′) pass through from user configuration; they stay `None` until
/// supplied.
pub fn map_to_bs_parameters(
    coeffs: &CoefficientSet,
    conc: &ConcentrationModel,
    relaxation_d: Option<f64>,
    diffusion_b_prime: Option<f64>,
    eval: ConcentrationEval,
) -> Result<BsParameters, CoeffError> {
    if coeffs.theta_rad != 0.0 {
        return Err(CoeffError::ThetaNotZero {
            theta_rad: coeffs.theta_rad,
        });
    }
    check_fractions(conc.bulk, "bulk")?;
    check_fractions(conc.steady, "steady")?;
    if conc.film_thickness_nm.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(CoeffError::BadFilmThickness {
            value: conc.film_thickness_nm,
        });
    }
    if let Some(d) = relaxation_d {
        if d < 0.0 || d.is_nan() {
            return Err(CoeffError::BadUserParameter {
                name: "D",
                value: d,
            });
        }
    }
    if let Some(bp) = diffusion_b_prime {
        if bp < 0.0 || bp.is_nan() {
            return Err(CoeffError::BadUserParameter {
                name: "B'",
                value: bp,
            });
        }
    }

    let [sa, sb] = &coeffs.species;
    let delta_f = conc.film_thickness_nm;
    // concentration derivative of the linear yield model: [Y]' = 2 Y(½)
    let ya_slope = 2.0 * sa.yield_rate;
    let yb_slope = 2.0 * sb.yield_rate;
    // concentration evaluation of the curvature coefficients
    let at_conc = |value_at_half: f64, c: f64| match eval {
        ConcentrationEval::Linear => linear_rate(value_at_half, c),
        ConcentrationEval::AtMeasured => c * value_at_half,
    };
    let [ca0, cb0] = conc.steady;
    let [cab, cbb] = conc.bulk;

    let a = -(ya_slope - yb_slope);
    let c = at_conc(sa.s_x_eros + sa.s_x_redist, ca0) + at_conc(sb.s_x_eros + sb.s_x_redist, cb0);
    let a_prime = -(cab * yb_slope + cbb * ya_slope) / delta_f;
    let c_prime = (cbb * at_conc(sa.s_x_redist, ca0) - cab * at_conc(sb.s_x_redist, cb0)) / delta_f;

    if a_prime.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(CoeffError::APrimeNotPositive { value: a_prime });
    }

    Ok(BsParameters {
        species: [sa.label.clone(), sb.label.clone()],
        a,
        b: 0.0,
        c,
        d: relaxation_d,
        a_prime,
        b_prime: diffusion_b_prime,
        c_prime,
        d_prime: 0.0,
        concentration: conc.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AnnotatedValue {
    value: Option<f64>,
    unit: String,
    provenance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BsReport {
    species: [String; 2],
    concentration: ConcentrationModel,
    parameters: std::collections::BTreeMap<String, AnnotatedValue>,
    longwave_group: AnnotatedValue,
}

impl BsParameters {
    /// JSON report with explicit unit strings and per-field provenance.
    pub fn to_json(&self) -> String {
        let mut parameters = std::collections::BTreeMap::new();
        let mut put = |name: &str, value: Option<f64>, provenance: &str| {
            parameters.insert(
                name.to_string(),
                AnnotatedValue {
                    value,
                    unit: unit_of(name).to_string(),
                    provenance: provenance.to_string(),
                },
            );
        };
        put("a", Some(self.a), "extrapolated");
        put("b", Some(self.b), "model-assumption");
        put("c", Some(self.c), "extrapolated");
        put("d", self.d, "user-supplied");
        put("a_prime", Some(self.a_prime), "extrapolated");
        put("b_prime", self.b_prime, "user-supplied");
        put("c_prime", Some(self.c_prime), "extrapolated");
        put("d_prime", Some(self.d_prime), "model-assumption");
        let report = BsReport {
            species: self.species.clone(),
            concentration: self.concentration.clone(),
            parameters,
            longwave_group: AnnotatedValue {
                value: Some(self.longwave_group()),
                unit: unit_of("longwave_group").to_string(),
                provenance: "derived".to_string(),
            },
        };
        let mut s = serde_json::to_string_pretty(&report).expect("report serialization");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let report: BsReport = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let required = |name: &str| -> Result<f64, String> {
            report
                .parameters
                .get(name)
                .and_then(|a| a.value)
                .ok_or_else(|| format!("missing parameter {name}"))
        };
        let optional = |name: &str| report.parameters.get(name).and_then(|a| a.value);
        Ok(BsParameters {
            species: report.species,
            a: required("a")?,
            b: required("b")?,
            c: required("c")?,
            d: optional("d"),
            a_prime: required("a_prime")?,
            b_prime: optional("b_prime"),
            c_prime: required("c_prime")?,
            d_prime: required("d_prime")?,
            concentration: report.concentration,
        })
    }
}

/// The published normal-incidence GaSb coefficient values (Ar at 250 eV,
/// measured at 50/50 concentration), per unit flux. Shipped as the
/// canonical demonstration fixture.
pub fn gasb_reference_coefficients() -> CoefficientSet {
    CoefficientSet {
        theta_rad: 0.0,
        reference_concentration: [0.5, 0.5],
        recession_speed: 0.0274,
        species: [
            SpeciesCoefficients {
                label: "Ga".into(),
                yield_rate: -0.0172,
                s_x_eros: -0.269,
                s_x_redist: 1.11,
                s_y_eros: -0.269,
                s_y_redist: 1.11,
            },
            SpeciesCoefficients {
                label: "Sb".into(),
                yield_rate: -0.0102,
                s_x_eros: -0.176,
                s_x_redist: 1.22,
                s_y_eros: -0.176,
                s_y_redist: 1.22,
            },
        ],
    }
}

impl CoefficientSet {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("coefficient serialization");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
