//! Parity-constrained trigonometric fits of moment channels versus angle.
//!
//! Yields are even in the incidence angle and vanish at grazing incidence;
//! first moments are odd and vanish at normal incidence. The two bases
//! encode exactly that:
//!
//! * even: cos((2n-1)θ), n = 1..N  — zero at θ = 90°
//! * odd:  sin(2nθ),     n = 1..N  — zero at θ = 0 and θ = 90°
//!
//! Fits are ordinary least squares on the per-angle channel means
//! (optionally weighted by 1/stderr²), with analytic evaluation and
//! differentiation of the fitted series.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

use crate::moments::MomentTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitBasis {
    pub parity: Parity,
    pub n_terms: usize,
}

impl FitBasis {
    pub fn even(n_terms: usize) -> Self {
        FitBasis {
            parity: Parity::Even,
            n_terms,
        }
    }

    pub fn odd(n_terms: usize) -> Self {
        FitBasis {
            parity: Parity::Odd,
            n_terms,
        }
    }

    /// Value of basis function `j` (0-based) at `theta_rad`.
    pub fn term(&self, j: usize, theta_rad: f64) -> f64 {
        match self.parity {
            Parity::Even => ((2 * j + 1) as f64 * theta_rad).cos(),
            Parity::Odd => ((2 * (j + 1)) as f64 * theta_rad).sin(),
        }
    }

    /// d/dθ of basis function `j` at `theta_rad`.
    pub fn term_derivative(&self, j: usize, theta_rad: f64) -> f64 {
        match self.parity {
            Parity::Even => {
                let m = (2 * j + 1) as f64;
                -m * (m * theta_rad).sin()
            }
            Parity::Odd => {
                let m = (2 * (j + 1)) as f64;
                m * (m * theta_rad).cos()
            }
        }
    }
}

/// A fitted series for one moment channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierFit {
    /// Channel identifier, e.g. `Ga.m1_redist_x`. Not serialized: in the
    /// fit document it is the map key.
    #[serde(skip)]
    pub channel: String,
    pub basis: FitBasis,
    pub coefficients: Vec<f64>,
    /// Root-mean-square residual over the fitted points, channel units.
    pub residual_rms: f64,
    pub n_points: usize,
}

impl FourierFit {
    /// Exact series evaluation at `theta_rad`.
    pub fn eval(&self, theta_rad: f64) -> f64 {
        self.coefficients
            .iter()
            .enumerate()
            .map(|(j, c)| c * self.basis.term(j, theta_rad))
            .sum()
    }

    /// Analytic derivative of the series at `theta_rad`.
    pub fn eval_derivative(&self, theta_rad: f64) -> f64 {
        self.coefficients
            .iter()
            .enumerate()
            .map(|(j, c)| c * self.basis.term_derivative(j, theta_rad))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitError {
    TooFewAngles { distinct: usize, needed: usize },
    RankDeficient { channel: String },
    ZeroWeight { channel: String },
    BadOptions { detail: String },
}

impl fmt::Display for FitError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitError::TooFewAngles { distinct, needed } => {
                write!(f, "{distinct} distinct angles, need at least {needed}")
            }
            FitError::RankDeficient { channel } => {
                write!(f, "channel {channel}: design matrix is rank deficient")
            }
            FitError::ZeroWeight { channel } => write!(
                f,
                "channel {channel}: weighted fit requires positive stderr at every angle"
            ),
            FitError::BadOptions { detail } => write!(f, "bad fit options: {detail}"),
        }
    }
}

impl std::error::Error for FitError {}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub n_terms: usize,
    /// Weight each angle by 1/stderr². Off by default.
    pub weighted: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            n_terms: 3,
            weighted: false,
        }
    }
}

/// Fits for all six theory channels, keyed by channel identifier.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MomentFits {
    pub fits: BTreeMap<String, FourierFit>,
}

/// The three channels fitted per species.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    M0,
    ErosX,
    RedistX,
}

impl ChannelKind {
    pub fn key(&self, label: &str) -> String {
        match self {
            ChannelKind::M0 => format!("{label}.m0"),
            ChannelKind::ErosX => format!("{label}.m1_eros_x"),
            ChannelKind::RedistX => format!("{label}.m1_redist_x"),
        }
    }
}

impl MomentFits {
    pub fn get(&self, label: &str, kind: ChannelKind) -> Option<&FourierFit> {
        self.fits.get(&kind.key(label))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("fit serialization");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let mut fits: MomentFits = serde_json::from_str(text)?;
        for (key, fit) in fits.fits.iter_mut() {
            fit.channel = key.clone();
        }
        Ok(fits)
    }

    /// Species labels appearing in the channel keys, sorted.
    pub fn species_labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self
            .fits
            .keys()
            .filter_map(|k| k.split_once('.').map(|(l, _)| l.to_string()))
            .collect();
        labels.sort();
        labels.dedup();
        labels
    }
}

/// Least-squares fit of one value series over a parity basis.
pub fn fit_series(
    channel: &str,
    theta_rad: &[f64],
    values: &[f64],
    weights: Option<&[f64]>,
    basis: FitBasis,
) -> Result<FourierFit, FitError> {
    let p = basis.n_terms;
    let n = theta_rad.len();
    assert_eq!(n, values.len());
    let mut distinct = 0usize;
    for (i, t) in theta_rad.iter().enumerate() {
        if !theta_rad[..i].iter().any(|u| u.to_bits() == t.to_bits()) {
            distinct += 1;
        }
    }
    if distinct < p {
        return Err(FitError::TooFewAngles {
            distinct,
            needed: p,
        });
    }

    // normal equations G c = b with G = XᵀWX, b = XᵀWy
    let mut g = vec![0.0; p * p];
    let mut b = vec![0.0; p];
    for i in 0..n {
        let w = weights.map_or(1.0, |w| w[i]);
        let row: Vec<f64> = (0..p).map(|j| basis.term(j, theta_rad[i])).collect();
        for j in 0..p {
            b[j] += w * row[j] * values[i];
            for k in 0..p {
                g[j * p + k] += w * row[j] * row[k];
            }
        }
    }
    let coefficients = solve_symmetric(&mut g, &mut b, p).ok_or(FitError::RankDeficient {
        channel: channel.to_string(),
    })?;

    let mut ss = 0.0;
    for i in 0..n {
        let fitted: f64 = (0..p)
            .map(|j| coefficients[j] * basis.term(j, theta_rad[i]))
            .sum();
        let r = values[i] - fitted;
        ss += r * r;
    }
    Ok(FourierFit {
        channel: channel.to_string(),
        basis,
        coefficients,
        residual_rms: (ss / n as f64).sqrt(),
        n_points: n,
    })
}

/// Gaussian elimination with partial pivoting; None when singular.
fn solve_symmetric(g: &mut [f64], b: &mut [f64], p: usize) -> Option<Vec<f64>> {
    let scale = g
        .iter()
        .fold(0.0f64, |acc, x| acc.max(x.abs()))
        .max(f64::MIN_POSITIVE);
    for col in 0..p {
        let (pivot_row, pivot) = (col..p)
            .map(|r| (r, g[r * p + col]))
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())?;
        if pivot.abs() < 1e-12 * scale {
            return None;
        }
        if pivot_row != col {
            for k in 0..p {
                g.swap(col * p + k, pivot_row * p + k);
            }
            b.swap(col, pivot_row);
        }
        for r in (col + 1)..p {
            let f = g[r * p + col] / g[col * p + col];
            for k in col..p {
                g[r * p + k] -= f * g[col * p + k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; p];
    for col in (0..p).rev() {
        let mut acc = b[col];
        for k in (col + 1)..p {
            acc -= g[col * p + k] * x[k];
        }
        x[col] = acc / g[col * p + col];
    }
    Some(x)
}

/// Fit every theory channel of a moment table: the zeroth moments on the
/// even basis, the first-moment x-components on the odd basis.
pub fn fit_moment_curves(table: &MomentTable, opts: &FitOptions) -> Result<MomentFits, FitError> {
    if opts.n_terms < 1 {
        return Err(FitError::BadOptions {
            detail: "n_terms must be >= 1".into(),
        });
    }
    let theta: Vec<f64> = table.samples.iter().map(|s| s.theta_deg.to_radians()).collect();
    let mut fits = BTreeMap::new();
    for (s, sp) in table.species.iter().enumerate() {
        let channels: [(ChannelKind, FitBasis, Vec<f64>, Vec<f64>); 3] = [
            (
                ChannelKind::M0,
                FitBasis::even(opts.n_terms),
                table.samples.iter().map(|x| x.mean.species[s].m0_nm3).collect(),
                table.samples.iter().map(|x| x.stderr.species[s].m0_nm3).collect(),
            ),
            (
                ChannelKind::ErosX,
                FitBasis::odd(opts.n_terms),
                table
                    .samples
                    .iter()
                    .map(|x| x.mean.species[s].m1_eros_nm4[0])
                    .collect(),
                table
                    .samples
                    .iter()
                    .map(|x| x.stderr.species[s].m1_eros_nm4[0])
                    .collect(),
            ),
            (
                ChannelKind::RedistX,
                FitBasis::odd(opts.n_terms),
                table
                    .samples
                    .iter()
                    .map(|x| x.mean.species[s].m1_redist_nm4[0])
                    .collect(),
                table
                    .samples
                    .iter()
                    .map(|x| x.stderr.species[s].m1_redist_nm4[0])
                    .collect(),
            ),
        ];
        for (kind, basis, values, stderr) in channels {
            let key = kind.key(&sp.label);
            let weights = if opts.weighted {
                if stderr.iter().any(|e| e.is_nan() || *e <= 0.0) {
                    return Err(FitError::ZeroWeight { channel: key });
                }
                Some(stderr.iter().map(|e| 1.0 / (e * e)).collect::<Vec<f64>>())
            } else {
                None
            };
            let fit = fit_series(&key, &theta, &values, weights.as_deref(), basis)?;
            fits.insert(key, fit);
        }
    }
    Ok(MomentFits { fits })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nine_angles() -> Vec<f64> {
        (0..9).map(|i| (10.0 * i as f64).to_radians()).collect()
    }

    #[test]
    fn exact_even_model_is_recovered() {
        let theta = nine_angles();
        let values: Vec<f64> = theta
            .iter()
            .map(|t| 2.0 * t.cos() - 0.5 * (3.0 * t).cos())
            .collect();
        let fit = fit_series("m0", &theta, &values, None, FitBasis::even(3)).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-10);
        assert!((fit.coefficients[1] + 0.5).abs() < 1e-10);
        assert!(fit.coefficients[2].abs() < 1e-10);
        assert!(fit.residual_rms < 1e-12);
    }

    #[test]
    fn odd_basis_vanishes_at_endpoints_regardless_of_data() {
        let theta = nine_angles();
        let values: Vec<f64> = theta.iter().map(|t| 0.3 + t).collect(); // not odd at all
        let fit = fit_series("m1", &theta, &values, None, FitBasis::odd(3)).unwrap();
        assert_eq!(fit.eval(0.0), 0.0);
        assert!(fit.eval(std::f64::consts::FRAC_PI_2).abs() < 1e-14);
    }

    #[test]
    fn even_basis_vanishes_at_grazing() {
        let theta = nine_angles();
        let values: Vec<f64> = theta.iter().map(|t| t.cos()).collect();
        let fit = fit_series("m0", &theta, &values, None, FitBasis::even(3)).unwrap();
        assert!(fit.eval(std::f64::consts::FRAC_PI_2).abs() < 1e-14);
    }

    #[test]
    fn eval_matches_term_by_term_sum() {
        let fit = FourierFit {
            channel: "x".into(),
            basis: FitBasis::odd(4),
            coefficients: vec![0.7, -1.3, 0.21, 0.05],
            residual_rms: 0.0,
            n_points: 0,
        };
        for i in 0..50 {
            let t = 0.031 * i as f64;
            let direct: f64 = (0..4)
                .map(|j| fit.coefficients[j] * ((2 * (j + 1)) as f64 * t).sin())
                .sum();
            assert!((fit.eval(t) - direct).abs() <= 1e-15 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn derivative_at_zero() {
        // d/dθ [b sin 2θ] at 0 is 2b
        let fit = FourierFit {
            channel: "x".into(),
            basis: FitBasis::odd(1),
            coefficients: vec![1.7],
            residual_rms: 0.0,
            n_points: 0,
        };
        assert_eq!(fit.eval_derivative(0.0), 3.4);
        // even series have zero slope at normal incidence
        let even = FourierFit {
            channel: "y".into(),
            basis: FitBasis::even(3),
            coefficients: vec![2.0, -0.5, 0.25],
            residual_rms: 0.0,
            n_points: 0,
        };
        assert_eq!(even.eval_derivative(0.0), 0.0);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let fit = FourierFit {
            channel: "x".into(),
            basis: FitBasis::even(3),
            coefficients: vec![1.1, -0.4, 0.09],
            residual_rms: 0.0,
            n_points: 0,
        };
        let h = 1e-6;
        for i in 1..20 {
            let t = 0.07 * i as f64;
            let fd = (fit.eval(t + h) - fit.eval(t - h)) / (2.0 * h);
            let an = fit.eval_derivative(t);
            assert!(
                (fd - an).abs() <= 1e-8 * an.abs().max(1e-3),
                "t={t}: fd={fd} analytic={an}"
            );
        }
    }

    #[test]
    fn residuals_are_orthogonal_to_design() {
        let theta = nine_angles();
        // values outside the basis span
        let values: Vec<f64> = theta.iter().map(|t| (1.3 * t).sin() + 0.2).collect();
        let basis = FitBasis::odd(3);
        let fit = fit_series("m1", &theta, &values, None, basis).unwrap();
        for j in 0..3 {
            let dot: f64 = theta
                .iter()
                .zip(values.iter())
                .map(|(t, v)| (v - fit.eval(*t)) * basis.term(j, *t))
                .sum();
            let norm: f64 = theta.iter().map(|t| basis.term(j, *t).powi(2)).sum();
            assert!(dot.abs() <= 1e-10 * norm.max(1.0));
        }
    }

    #[test]
    fn weighted_fit_with_equal_errors_matches_unweighted() {
        let theta = nine_angles();
        let values: Vec<f64> = theta.iter().map(|t| (1.1 * t).sin()).collect();
        let weights = vec![4.0; theta.len()];
        let basis = FitBasis::odd(3);
        let plain = fit_series("m1", &theta, &values, None, basis).unwrap();
        let weighted = fit_series("m1", &theta, &values, Some(&weights), basis).unwrap();
        for (a, b) in plain.coefficients.iter().zip(weighted.coefficients.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_mode_requires_positive_stderr() {
        use crate::impact::SpeciesId;
        use crate::moments::{MomentSample, MomentTable, MomentVector};
        let samples = (0..5)
            .map(|i| MomentSample {
                theta_deg: 15.0 * i as f64,
                n_impacts: 1,
                mean: MomentVector::default(),
                stderr: MomentVector::default(), // all zero
            })
            .collect();
        let table = MomentTable {
            species: [SpeciesId::new("A", 0.02), SpeciesId::new("B", 0.02)],
            samples,
        };
        let opts = FitOptions {
            n_terms: 3,
            weighted: true,
        };
        assert!(matches!(
            fit_moment_curves(&table, &opts),
            Err(FitError::ZeroWeight { .. })
        ));
    }

    #[test]
    fn fit_document_roundtrips_and_restores_channels() {
        let theta = nine_angles();
        let values: Vec<f64> = theta.iter().map(|t| t.cos()).collect();
        let fit = fit_series("A.m0", &theta, &values, None, FitBasis::even(3)).unwrap();
        let mut fits = MomentFits::default();
        fits.fits.insert("A.m0".into(), fit);
        let json = fits.to_json();
        // the per-channel object carries exactly the documented keys
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        let obj = value["A.m0"].as_object().unwrap();
        let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(keys, ["basis", "coefficients", "n_points", "residual_rms"]);
        let back = MomentFits::from_json(&json).unwrap();
        assert_eq!(back.fits["A.m0"].channel, "A.m0");
        assert_eq!(back, fits);
    }

    #[test]
    fn duplicated_angles_are_rank_deficient() {
        let theta = vec![0.2, 0.2, 0.2, 0.2];
        let values = vec![1.0, 1.0, 1.0, 1.0];
        match fit_series("m0", &theta, &values, None, FitBasis::even(3)) {
            Err(FitError::TooFewAngles { distinct: 1, needed: 3 }) => {}
            other => panic!("expected too-few-angles, got {other:?}"),
        }
    }
}
