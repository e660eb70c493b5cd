//! Linear stability of the coupled height/concentration equations.
//!
//! A perturbation ∝ exp(ikx + σt) of the steady state obeys
//!
//! ```text
//! d/dt [u₁, φ₁] = -[[C k² + D k⁴,  A + B k²  ],
//!                   [C′k² + D′k⁴,  A′ + B′k² ]] · [u₁, φ₁]
//! ```
//!
//! whose growth rates solve σ² + τσ + Δ = 0 with τ and Δ the trace and
//! determinant of the bracketed matrix:
//!
//! ```text
//! τ(k) = A′ + (C + B′) k² + D k⁴
//! Δ(k) = (CA′ - AC′) k² + (CB′ - C′B + DA′ - D′A) k⁴ + (DB′ - D′B) k⁶
//! ```
//!
//! The faster-growing root σ₊ = ½(-τ + √(τ² - 4Δ)) decides stability: a
//! mode grows iff τ < 0 or Δ < 0. For small k, σ₊ ≈ -(G/A′) k² with
//! G = A′C - C′A, so the sign of G separates stable long waves (ordered
//! patterns possible) from long-wave instability (roughening). σ₊ is
//! evaluated with a cancellation-safe quadratic: the larger-magnitude root
//! first, the other as Δ over it.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::coefficients::BsParameters;

/// The eight coefficients with flux applied (absolute rates).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Surface relaxation, nm⁴/s; non-negative.
    pub d: f64,
    /// Resupply damping, 1/s; positive.
    pub a_prime: f64,
    /// Fickian diffusion, nm²/s; non-negative.
    pub b_prime: f64,
    pub c_prime: f64,
    pub d_prime: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StabilityError {
    BadModel { detail: String },
    MissingParameter { name: &'static str },
    BadKRange { detail: String },
    BandTruncated { boundary: &'static str, k: f64 },
    TimestepTooLarge { dt: f64, rate_bound: f64 },
    IndeterminateRate { residual: f64 },
    BadEvolveArgs { detail: String },
}

impl fmt::Display for StabilityError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use StabilityError::*;
        match self {
            BadModel { detail } => write!(f, "bad linear model: {detail}"),
            MissingParameter { name } => {
                write!(f, "parameter {name} is required for stability analysis but was not supplied")
            }
            BadKRange { detail } => write!(f, "bad k range: {detail}"),
            BandTruncated { boundary, k } => write!(
                f,
                "unstable band reaches the {boundary} end of the sampled range at k = {k}; widen the range"
            ),
            TimestepTooLarge { dt, rate_bound } => write!(
                f,
                "dt = {dt} does not resolve the fastest rate bound {rate_bound}; need dt*rate < 0.1"
            ),
            IndeterminateRate { residual } => write!(
                f,
                "growth-rate fit did not converge (log-amplitude residual {residual:.3})"
            ),
            BadEvolveArgs { detail } => write!(f, "bad evolve arguments: {detail}"),
        }
    }
}

impl std::error::Error for StabilityError {}

impl LinearModel {
    pub fn validate(&self) -> Result<(), StabilityError> {
        let vals = [
            self.a,
            self.b,
            self.c,
            self.d,
            self.a_prime,
            self.b_prime,
            self.c_prime,
            self.d_prime,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(StabilityError::BadModel {
                detail: "all coefficients must be finite".into(),
            });
        }
        if self.a_prime.is_nan() || self.a_prime <= 0.0 {
            return Err(StabilityError::BadModel {
                detail: format!("A' must be > 0, got {}", self.a_prime),
            });
        }
        if self.d < 0.0 || self.b_prime < 0.0 {
            return Err(StabilityError::BadModel {
                detail: "D and B' must be >= 0".into(),
            });
        }
        Ok(())
    }

    /// Apply a flux to per-flux parameters; D and B′ are already absolute
    /// and must have been supplied.
    pub fn from_bs(bs: &BsParameters, flux: f64) -> Result<Self, StabilityError> {
        if !flux.is_finite() || flux <= 0.0 {
            return Err(StabilityError::BadModel {
                detail: format!("flux must be positive, got {flux}"),
            });
        }
        let d = bs.d.ok_or(StabilityError::MissingParameter { name: "D" })?;
        let b_prime = bs
            .b_prime
            .ok_or(StabilityError::MissingParameter { name: "B'" })?;
        let model = LinearModel {
            a: bs.a * flux,
            b: bs.b * flux,
            c: bs.c * flux,
            d,
            a_prime: bs.a_prime * flux,
            b_prime,
            c_prime: bs.c_prime * flux,
            d_prime: bs.d_prime * flux,
        };
        model.validate()?;
        Ok(model)
    }

    /// Trace of the stability matrix at σ = 0.
    pub fn tau(&self, k: f64) -> f64 {
        let x = k * k;
        self.d.mul_add(x, self.c + self.b_prime).mul_add(x, self.a_prime)
    }

    /// Determinant of the stability matrix at σ = 0.
    pub fn delta(&self, k: f64) -> f64 {
        let x = k * k;
        let g1 = self.c.mul_add(self.a_prime, -(self.a * self.c_prime));
        let g2 = self.c.mul_add(self.b_prime, -(self.c_prime * self.b))
            + self.d.mul_add(self.a_prime, -(self.d_prime * self.a));
        let g3 = self.d.mul_add(self.b_prime, -(self.d_prime * self.b));
        x * g3.mul_add(x, g2).mul_add(x, g1)
    }

    /// The evolution matrix J with d/dt [u₁, φ₁] = J [u₁, φ₁].
    pub fn evolution_matrix(&self, k: f64) -> [[f64; 2]; 2] {
        let x = k * k;
        [
            [-self.d.mul_add(x, self.c) * x, -self.b.mul_add(x, self.a)],
            [
                -self.d_prime.mul_add(x, self.c_prime) * x,
                -self.b_prime.mul_add(x, self.a_prime),
            ],
        ]
    }
}

/// One point of the dispersion relation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionSample {
    pub k: f64,
    /// Re σ₊; the larger real part of the two roots.
    pub sigma_real: f64,
    /// Im σ₊; zero when the discriminant is non-negative, otherwise the
    /// positive-imaginary member of the pair is reported.
    pub sigma_imag: f64,
    pub tau: f64,
    pub delta: f64,
    /// Null vector (u₁, φ₁) of the stability matrix at σ₊, each component
    /// as (re, im), scaled to unit maximum modulus.
    pub eigvec: [[f64; 2]; 2],
}

impl DispersionSample {
    pub fn oscillatory(&self) -> bool {
        self.sigma_imag != 0.0
    }

    /// u₁ : φ₁ as a complex number (re, im); infinite when φ₁ = 0.
    pub fn eigvec_ratio(&self) -> [f64; 2] {
        let [u, p] = self.eigvec;
        let den = p[0] * p[0] + p[1] * p[1];
        if den == 0.0 {
            return [f64::INFINITY, 0.0];
        }
        [
            (u[0] * p[0] + u[1] * p[1]) / den,
            (u[1] * p[0] - u[0] * p[1]) / den,
        ]
    }
}

/// σ₊(k) by the cancellation-safe quadratic formula, with the eigenvector
/// from the better-conditioned row of the stability matrix.
pub fn dispersion_sigma_plus(model: &LinearModel, k: f64) -> DispersionSample {
    let x = k * k;
    let tau = model.tau(k);
    let delta = model.delta(k);
    let disc = tau.mul_add(tau, -4.0 * delta);

    let (sigma_real, sigma_imag) = if disc >= 0.0 {
        let r = disc.sqrt();
        if tau >= 0.0 {
            // larger-magnitude root is negative; recover σ₊ from the product
            let q = -0.5 * (tau + r);
            if q == 0.0 {
                (0.0, 0.0)
            } else {
                (delta / q, 0.0)
            }
        } else {
            (0.5 * (-tau + r), 0.0)
        }
    } else {
        (-0.5 * tau, 0.5 * (-disc).sqrt())
    };

    // null vector of [[σ+m11, m12], [m21, σ+m22]] from the larger row
    let m11 = model.d.mul_add(x, model.c) * x;
    let m12 = model.b.mul_add(x, model.a);
    let m21 = model.d_prime.mul_add(x, model.c_prime) * x;
    let m22 = model.b_prime.mul_add(x, model.a_prime);
    let d1 = [sigma_real + m11, sigma_imag];
    let d2 = [sigma_real + m22, sigma_imag];
    let row1 = d1[0] * d1[0] + d1[1] * d1[1] + m12 * m12;
    let row2 = d2[0] * d2[0] + d2[1] * d2[1] + m21 * m21;
    let (u, p) = if row1 >= row2 {
        ([m12, 0.0], [-d1[0], -d1[1]])
    } else {
        (d2, [-m21, 0.0])
    };
    let mu = (u[0] * u[0] + u[1] * u[1]).sqrt();
    let mp = (p[0] * p[0] + p[1] * p[1]).sqrt();
    let scale = mu.max(mp);
    let eigvec = if scale > 0.0 {
        [
            [u[0] / scale, u[1] / scale],
            [p[0] / scale, p[1] / scale],
        ]
    } else {
        [[1.0, 0.0], [0.0, 0.0]]
    };

    DispersionSample {
        k,
        sigma_real,
        sigma_imag,
        tau,
        delta,
        eigvec,
    }
}

/// The long-wave group G = A′C - C′A and the small-k curvature -G/A′,
/// which equals lim σ₊(k)/k² as k → 0.
pub fn longwave_coefficient(model: &LinearModel) -> (f64, f64) {
    let group = model.a_prime.mul_add(model.c, -(model.c_prime * model.a));
    (group, -group / model.a_prime)
}

/// Logarithmic wavenumber grid for classification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KRange {
    pub k_min: f64,
    pub k_max: f64,
    pub n_samples: usize,
}

impl Default for KRange {
    fn default() -> Self {
        // spans pattern scales well past the published parameter magnitudes
        KRange {
            k_min: 1e-4,
            k_max: 10.0,
            n_samples: 400,
        }
    }
}

impl KRange {
    fn validate(&self) -> Result<(), StabilityError> {
        if !(self.k_min > 0.0 && self.k_min < self.k_max) || !self.k_max.is_finite() {
            return Err(StabilityError::BadKRange {
                detail: format!("need 0 < k_min < k_max, got [{}, {}]", self.k_min, self.k_max),
            });
        }
        if self.n_samples < 8 {
            return Err(StabilityError::BadKRange {
                detail: "need at least 8 samples".into(),
            });
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        let n = self.n_samples;
        let ratio = self.k_max / self.k_min;
        (0..n)
            .map(|i| self.k_min * ratio.powf(i as f64 / (n - 1) as f64))
            .collect()
    }
}

/// Dispersion samples over the grid of a [`KRange`].
pub fn sample_dispersion(model: &LinearModel, range: &KRange) -> Vec<DispersionSample> {
    range
        .grid()
        .iter()
        .map(|&k| dispersion_sigma_plus(model, k))
        .collect()
}

/// CSV with columns k, Re σ₊, Im σ₊, τ, Δ.
pub fn write_dispersion_csv(samples: &[DispersionSample]) -> String {
    let mut out = String::new();
    out.push_str("# dispersion relation; k in 1/nm, rates in 1/s, delta in 1/s^2\n");
    out.push_str("k,sigma_plus_real,sigma_plus_imag,tau,delta\n");
    for s in samples {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.k, s.sigma_real, s.sigma_imag, s.tau, s.delta
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    Stable,
    LongWaveUnstable,
    FiniteWavelengthBand,
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Classification::Stable => write!(f, "Stable"),
            Classification::LongWaveUnstable => write!(f, "LongWaveUnstable"),
            Classification::FiniteWavelengthBand => write!(f, "FiniteWavelengthBand"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FastestMode {
    pub k: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub classification: Classification,
    /// Unstable band (k_low, k_high); k_low = 0 for a long-wave
    /// instability, absent when stable.
    pub band: Option<[f64; 2]>,
    pub fastest: Option<FastestMode>,
    /// G = A′C - C′A.
    pub longwave_group: f64,
    /// -G/A′ = lim σ₊/k².
    pub small_k_curvature: f64,
    /// True when any sampled σ₊ was complex.
    pub oscillatory: bool,
    pub n_unstable_bands: usize,
}

impl StabilityReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Bisect a sign change of Re σ₊ between two wavenumbers to relative 1e-8.
fn refine_edge(model: &LinearModel, mut lo: f64, mut hi: f64) -> f64 {
    let lo_positive = dispersion_sigma_plus(model, lo).sigma_real > 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo) <= 1e-8 * mid {
            return mid;
        }
        if (dispersion_sigma_plus(model, mid).sigma_real > 0.0) == lo_positive {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Golden-section maximum of Re σ₊ on [lo, hi].
fn refine_max(model: &LinearModel, mut lo: f64, mut hi: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = dispersion_sigma_plus(model, x1).sigma_real;
    let mut f2 = dispersion_sigma_plus(model, x2).sigma_real;
    for _ in 0..120 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = dispersion_sigma_plus(model, x2).sigma_real;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = dispersion_sigma_plus(model, x1).sigma_real;
        }
    }
    let k = 0.5 * (lo + hi);
    (k, dispersion_sigma_plus(model, k).sigma_real)
}

/// Sample σ₊ over the range, locate unstable bands, and classify.
///
/// A band edge on the range boundary is an error (the range was too
/// narrow), not a classification.
pub fn classify_stability(
    model: &LinearModel,
    range: &KRange,
) -> Result<StabilityReport, StabilityError> {
    model.validate()?;
    range.validate()?;
    let samples = sample_dispersion(model, range);
    let (group, curvature) = longwave_coefficient(model);
    let oscillatory = samples.iter().any(|s| s.oscillatory());

    let positive: Vec<bool> = samples.iter().map(|s| s.sigma_real > 0.0).collect();
    if *positive.last().unwrap() {
        return Err(StabilityError::BandTruncated {
            boundary: "upper",
            k: range.k_max,
        });
    }

    // contiguous runs of unstable samples
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = None;
    for (i, &p) in positive.iter().enumerate() {
        match (p, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }

    if group < 0.0 {
        // long waves grow; the grid must show it, else the cutoff sits
        // below the sampled range
        if runs.is_empty() || runs[0].0 != 0 {
            return Err(StabilityError::BandTruncated {
                boundary: "lower",
                k: range.k_min,
            });
        }
        let e = runs[0].1;
        let k_high = refine_edge(model, samples[e].k, samples[e + 1].k);
        let (mut k_star, mut sigma_star) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(rs, re) in &runs {
            let lo = if rs == 0 { range.k_min } else { samples[rs - 1].k };
            let hi = if re + 1 < samples.len() { samples[re + 1].k } else { range.k_max };
            let (k, sig) = refine_max(model, lo, hi);
            if sig > sigma_star {
                k_star = k;
                sigma_star = sig;
            }
        }
        return Ok(StabilityReport {
            classification: Classification::LongWaveUnstable,
            band: Some([0.0, k_high]),
            fastest: Some(FastestMode {
                k: k_star,
                sigma: sigma_star,
            }),
            longwave_group: group,
            small_k_curvature: curvature,
            oscillatory,
            n_unstable_bands: runs.len(),
        });
    }

    if runs.is_empty() {
        return Ok(StabilityReport {
            classification: Classification::Stable,
            band: None,
            fastest: None,
            longwave_group: group,
            small_k_curvature: curvature,
            oscillatory,
            n_unstable_bands: 0,
        });
    }

    // finite band(s) with G >= 0: every band must be interior
    if runs[0].0 == 0 {
        return Err(StabilityError::BandTruncated {
            boundary: "lower",
            k: range.k_min,
        });
    }
    let mut best: Option<(usize, FastestMode)> = None;
    for (idx, &(rs, re)) in runs.iter().enumerate() {
        let (k, sig) = refine_max(model, samples[rs - 1].k, samples[re + 1].k);
        if best.is_none() || sig > best.as_ref().unwrap().1.sigma {
            best = Some((idx, FastestMode { k, sigma: sig }));
        }
    }
    let (idx, fastest) = best.unwrap();
    let (rs, re) = runs[idx];
    let k_low = refine_edge(model, samples[rs - 1].k, samples[rs].k);
    let k_high = refine_edge(model, samples[re].k, samples[re + 1].k);
    Ok(StabilityReport {
        classification: Classification::FiniteWavelengthBand,
        band: Some([k_low, k_high]),
        fastest: Some(fastest),
        longwave_group: group,
        small_k_curvature: curvature,
        oscillatory,
        n_unstable_bands: runs.len(),
    })
}

/// Result of integrating one mode in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeEvolution {
    /// Log-amplitude slope over the final half of the run, 1/s.
    pub growth_rate: f64,
    /// |Im σ| from zero crossings, when the mode oscillates.
    pub frequency: Option<f64>,
    /// RMS residual of the log-amplitude line fit.
    pub residual_rms: f64,
    pub n_steps: usize,
}

fn mat_vec(m: &[[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

/// Integrate d/dt [u₁, φ₁] = J v with classic fourth-order Runge-Kutta
/// from a generic initial state and measure the asymptotic growth rate
/// (and oscillation frequency) directly, independent of the quadratic
/// formula.
pub fn evolve_mode(
    model: &LinearModel,
    k: f64,
    t_final: f64,
    dt: f64,
) -> Result<ModeEvolution, StabilityError> {
    model.validate()?;
    if k.is_nan() || k < 0.0 || t_final.is_nan() || t_final <= 0.0 || dt.is_nan() || dt <= 0.0 {
        return Err(StabilityError::BadEvolveArgs {
            detail: "need k >= 0, t_final > 0, dt > 0".into(),
        });
    }
    let j = model.evolution_matrix(k);
    // Frobenius norm bounds the spectral radius
    let rate_bound = j
        .iter()
        .flatten()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if dt * rate_bound >= 0.1 {
        return Err(StabilityError::TimestepTooLarge { dt, rate_bound });
    }
    let n_steps = ((t_final / dt).ceil() as usize).max(8);
    let h = t_final / n_steps as f64;

    let mut v: [f64; 2] = [1.0, 0.7];
    let norm0 = (v[0] * v[0] + v[1] * v[1]).sqrt();
    let mut log_amp = norm0.ln();
    v = [v[0] / norm0, v[1] / norm0];
    let mut trace: Vec<(f64, f64, f64)> = Vec::with_capacity(n_steps + 1);
    trace.push((0.0, log_amp, v[0]));

    for step in 0..n_steps {
        let k1 = mat_vec(&j, v);
        let k2 = mat_vec(&j, [v[0] + 0.5 * h * k1[0], v[1] + 0.5 * h * k1[1]]);
        let k3 = mat_vec(&j, [v[0] + 0.5 * h * k2[0], v[1] + 0.5 * h * k2[1]]);
        let k4 = mat_vec(&j, [v[0] + h * k3[0], v[1] + h * k3[1]]);
        v = [
            v[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            v[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ];
        // renormalize so long runs cannot overflow; growth accumulates in
        // log_amp
        let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
        log_amp += norm.ln();
        v = [v[0] / norm, v[1] / norm];
        trace.push(((step + 1) as f64 * h, log_amp, v[0]));
    }

    // slope of log amplitude over the final half
    let window: Vec<&(f64, f64, f64)> = trace
        .iter()
        .filter(|(t, _, _)| *t >= 0.5 * t_final)
        .collect();
    let n = window.len() as f64;
    let t_mean = window.iter().map(|(t, _, _)| t).sum::<f64>() / n;
    let y_mean = window.iter().map(|(_, y, _)| y).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (t, y, _) in &window {
        sxx += (t - t_mean) * (t - t_mean);
        sxy += (t - t_mean) * (y - y_mean);
    }
    let slope = sxy / sxx;
    let mut ss = 0.0;
    for (t, y, _) in &window {
        let r = y - (y_mean + slope * (t - t_mean));
        ss += r * r;
    }
    let residual_rms = (ss / n).sqrt();
    if residual_rms > 1.0 {
        return Err(StabilityError::IndeterminateRate {
            residual: residual_rms,
        });
    }

    // frequency from interpolated zero crossings of the (normalized) u
    // component; growth rescaling does not move the zeros
    let mut crossings: Vec<f64> = Vec::new();
    for pair in window.windows(2) {
        let (t0, _, u0) = *pair[0];
        let (t1, _, u1) = *pair[1];
        if u0 == 0.0 {
            crossings.push(t0);
        } else if (u0 < 0.0) != (u1 < 0.0) && u1 != 0.0 {
            crossings.push(t0 + (t1 - t0) * u0 / (u0 - u1));
        }
    }
    let frequency = if crossings.len() >= 2 {
        let span = crossings.last().unwrap() - crossings.first().unwrap();
        Some(std::f64::consts::PI * (crossings.len() - 1) as f64 / span)
    } else {
        None
    };

    Ok(ModeEvolution {
        growth_rate: slope,
        frequency,
        residual_rms,
        n_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn banded_model() -> LinearModel {
        LinearModel {
            a: 1.0,
            b: 0.0,
            c: -3.0,
            d: 1.0,
            a_prime: 1.0,
            b_prime: 1.0,
            c_prime: -3.5,
            d_prime: 0.0,
        }
    }

    fn decoupled_model() -> LinearModel {
        LinearModel {
            a: 0.0,
            b: 0.0,
            c: 1.0,
            d: 1.0,
            a_prime: 1.0,
            b_prime: 1.0,
            c_prime: 0.0,
            d_prime: 0.0,
        }
    }

    #[test]
    fn k_zero_is_the_neutral_translation_mode() {
        let s = dispersion_sigma_plus(&banded_model(), 0.0);
        assert_eq!(s.tau, 1.0);
        assert_eq!(s.delta, 0.0);
        assert_eq!(s.sigma_real, 0.0);
        assert_eq!(s.sigma_imag, 0.0);
    }

    #[test]
    fn decoupled_blocks_give_known_roots() {
        // both blocks decay at rate 2 at k = 1
        let s = dispersion_sigma_plus(&decoupled_model(), 1.0);
        assert_eq!(s.sigma_real, -2.0);
        assert_eq!(s.sigma_imag, 0.0);
    }

    #[test]
    fn banded_model_is_positive_exactly_on_the_delta_band() {
        let model = banded_model();
        // Δ/k² = 0.5 - 2k² + k⁴ with roots k² = 1 ± √½
        let k_low = (1.0 - 0.5f64.sqrt()).sqrt();
        let k_high = (1.0 + 0.5f64.sqrt()).sqrt();
        for &(k, unstable) in &[
            (0.9 * k_low, false),
            (1.01 * k_low, true),
            (1.0, true),
            (0.99 * k_high, true),
            (1.1 * k_high, false),
        ] {
            let s = dispersion_sigma_plus(&model, k);
            assert_eq!(s.sigma_real > 0.0, unstable, "k = {k}");
        }
    }

    #[test]
    fn quadratic_identity_holds_on_a_grid() {
        let model = banded_model();
        for s in sample_dispersion(&model, &KRange::default()) {
            if s.sigma_imag == 0.0 {
                let res = (s.sigma_real * s.sigma_real + s.tau * s.sigma_real + s.delta).abs();
                let scale = (s.sigma_real * s.sigma_real)
                    .abs()
                    .max((s.tau * s.sigma_real).abs())
                    .max(s.delta.abs())
                    .max(1e-300);
                assert!(res <= 1e-10 * scale, "k = {}", s.k);
            }
        }
    }

    #[test]
    fn eigvec_is_a_null_vector() {
        let model = banded_model();
        for k in [1e-3, 0.3, 1.0, 2.5] {
            let s = dispersion_sigma_plus(&model, k);
            let x = k * k;
            let m11 = model.c * x + model.d * x * x;
            let m12 = model.a + model.b * x;
            let m21 = model.c_prime * x + model.d_prime * x * x;
            let m22 = model.a_prime + model.b_prime * x;
            let [u, p] = s.eigvec;
            // complex matrix-vector product of [[σ+m11, m12],[m21, σ+m22]]
            let r1 = [
                (s.sigma_real + m11) * u[0] - s.sigma_imag * u[1] + m12 * p[0],
                (s.sigma_real + m11) * u[1] + s.sigma_imag * u[0] + m12 * p[1],
            ];
            let r2 = [
                m21 * u[0] + (s.sigma_real + m22) * p[0] - s.sigma_imag * p[1],
                m21 * u[1] + (s.sigma_real + m22) * p[1] + s.sigma_imag * p[0],
            ];
            let scale = (m11.abs() + m12.abs() + m21.abs() + m22.abs() + s.sigma_real.abs()).max(1.0);
            for r in [r1, r2] {
                assert!(r[0].hypot(r[1]) <= 1e-10 * scale, "k = {k}, res = {r:?}");
            }
        }
    }

    #[test]
    fn longwave_group_of_uncoupled_model_is_a_prime_c() {
        let model = decoupled_model();
        let (g, curv) = longwave_coefficient(&model);
        assert_eq!(g, model.a_prime * model.c);
        assert_eq!(curv, -model.c);
    }

    #[test]
    fn small_k_limit_matches_curvature() {
        let model = banded_model();
        let (_, curv) = longwave_coefficient(&model);
        let k = 1e-4;
        let s = dispersion_sigma_plus(&model, k);
        let ratio = s.sigma_real / (k * k);
        assert!((ratio - curv).abs() <= 1e-4 * curv.abs());
    }

    #[test]
    fn small_k_residual_is_fourth_order() {
        // Richardson check: the residual σ₊(k) + (G/A')k² must scale as k⁴,
        // so doubling k multiplies it by ~16
        for model in [
            banded_model(),
            decoupled_model(),
            LinearModel {
                a: 0.7,
                b: 0.2,
                c: 1.3,
                d: 0.4,
                a_prime: 0.9,
                b_prime: 0.6,
                c_prime: -1.1,
                d_prime: 0.1,
            },
        ] {
            let (group, _) = longwave_coefficient(&model);
            let residual = |k: f64| {
                dispersion_sigma_plus(&model, k).sigma_real + (group / model.a_prime) * k * k
            };
            let r1 = residual(1e-3);
            let r2 = residual(2e-3);
            let r4 = residual(4e-3);
            for ratio in [r2 / r1, r4 / r2] {
                assert!(
                    (14.0..=18.0).contains(&ratio),
                    "fourth-order ratio {ratio} out of range"
                );
            }
        }
    }

    #[test]
    fn banded_classification_and_edges() {
        let model = banded_model();
        let report = classify_stability(&model, &KRange::default()).unwrap();
        assert_eq!(report.classification, Classification::FiniteWavelengthBand);
        let [lo, hi] = report.band.unwrap();
        let k_low = (1.0 - 0.5f64.sqrt()).sqrt();
        let k_high = (1.0 + 0.5f64.sqrt()).sqrt();
        assert!((lo - k_low).abs() < 1e-6, "lo = {lo}");
        assert!((hi - k_high).abs() < 1e-6, "hi = {hi}");
        let fastest = report.fastest.unwrap();
        assert!(fastest.k > lo && fastest.k < hi);
        assert!(fastest.sigma > 0.0);
        assert_eq!(report.n_unstable_bands, 1);
    }

    #[test]
    fn longwave_model_classification() {
        // diagonal coupling: σ₊ = k² - k⁴, unstable for all 0 < k < 1
        let model = LinearModel {
            a: 0.0,
            b: 0.0,
            c: -1.0,
            d: 1.0,
            a_prime: 1.0,
            b_prime: 1.0,
            c_prime: 0.0,
            d_prime: 0.0,
        };
        let report = classify_stability(&model, &KRange::default()).unwrap();
        assert_eq!(report.classification, Classification::LongWaveUnstable);
        let [lo, hi] = report.band.unwrap();
        assert_eq!(lo, 0.0);
        assert!((hi - 1.0).abs() < 1e-6);
        assert!(report.longwave_group < 0.0);
    }

    #[test]
    fn stable_model_classification() {
        let model = decoupled_model();
        let report = classify_stability(&model, &KRange::default()).unwrap();
        assert_eq!(report.classification, Classification::Stable);
        assert!(report.band.is_none());
        assert!(report.fastest.is_none());
    }

    #[test]
    fn truncated_band_is_an_error_not_a_classification() {
        // unstable beyond the top of a deliberately narrow range
        let model = banded_model();
        let range = KRange {
            k_min: 1e-3,
            k_max: 1.0,
            n_samples: 100,
        };
        assert!(matches!(
            classify_stability(&model, &range),
            Err(StabilityError::BandTruncated { boundary: "upper", .. })
        ));
    }

    #[test]
    fn flux_rescaling_preserves_classification_and_edges() {
        // a power-of-two factor scales every coefficient exactly, so the
        // sampled signs and hence the refined edges are bitwise identical
        let model = banded_model();
        let scaled = LinearModel {
            a: model.a * 4.0,
            b: model.b * 4.0,
            c: model.c * 4.0,
            d: model.d * 4.0,
            a_prime: model.a_prime * 4.0,
            b_prime: model.b_prime * 4.0,
            c_prime: model.c_prime * 4.0,
            d_prime: model.d_prime * 4.0,
        };
        let r1 = classify_stability(&model, &KRange::default()).unwrap();
        let r2 = classify_stability(&scaled, &KRange::default()).unwrap();
        assert_eq!(r1.classification, r2.classification);
        assert_eq!(r1.band, r2.band);
        let k = 0.9;
        let s1 = dispersion_sigma_plus(&model, k);
        let s2 = dispersion_sigma_plus(&scaled, k);
        assert_eq!(s2.sigma_real, 4.0 * s1.sigma_real);
    }

    #[test]
    fn instability_iff_negative_tau_or_delta() {
        for model in [banded_model(), decoupled_model()] {
            for s in sample_dispersion(&model, &KRange::default()) {
                let scale = s.tau.abs().max(s.delta.abs().sqrt()).max(1e-12);
                if s.sigma_real.abs() > 1e-12 * scale {
                    assert_eq!(
                        s.sigma_real > 0.0,
                        s.tau < 0.0 || s.delta < 0.0,
                        "k = {}",
                        s.k
                    );
                }
            }
        }
    }

    #[test]
    fn evolve_matches_dispersion_rate() {
        // k values where the pair is real and well separated, so the
        // asymptotic slope is clean over the fit window
        let model = banded_model();
        for k in [0.3, 1.0, 1.25] {
            let sigma = dispersion_sigma_plus(&model, k);
            assert_eq!(sigma.sigma_imag, 0.0);
            let bound = model
                .evolution_matrix(k)
                .iter()
                .flatten()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt();
            let dt = 0.02 / bound;
            let t_final = 200.0 / bound;
            let result = evolve_mode(&model, k, t_final, dt).unwrap();
            let tol = (1e-6 * sigma.sigma_real.abs()).max(1e-9);
            assert!(
                (result.growth_rate - sigma.sigma_real).abs() <= tol,
                "k = {k}: measured {} vs {}",
                result.growth_rate,
                sigma.sigma_real
            );
        }
    }

    #[test]
    fn neutral_mode_measures_zero_rate() {
        let model = decoupled_model();
        let result = evolve_mode(&model, 0.0, 40.0, 0.01).unwrap();
        assert!(result.growth_rate.abs() < 1e-8);
        assert!(result.frequency.is_none());
    }

    #[test]
    fn oscillatory_mode_frequency_matches_imaginary_part() {
        // strong off-diagonal coupling of opposite signs makes the pair
        // complex
        let model = LinearModel {
            a: -2.0,
            b: 0.0,
            c: 0.5,
            d: 0.1,
            a_prime: 0.5,
            b_prime: 0.1,
            c_prime: 3.0,
            d_prime: 0.0,
        };
        let k = 1.0;
        let s = dispersion_sigma_plus(&model, k);
        assert!(s.sigma_imag > 0.0);
        let bound = model
            .evolution_matrix(k)
            .iter()
            .flatten()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        let dt = 0.01 / bound;
        let t_final = 200.0 / s.sigma_imag.max(1e-9);
        let result = evolve_mode(&model, k, t_final, dt).unwrap();
        let freq = result.frequency.expect("oscillation detected");
        assert!(
            (freq - s.sigma_imag).abs() <= 1e-4 * s.sigma_imag,
            "measured {freq} vs {}",
            s.sigma_imag
        );
    }

    #[test]
    fn too_large_timestep_is_rejected() {
        let model = banded_model();
        assert!(matches!(
            evolve_mode(&model, 2.0, 10.0, 0.5),
            Err(StabilityError::TimestepTooLarge { .. })
        ));
    }

    #[test]
    fn report_roundtrips_as_json() {
        let report = classify_stability(&banded_model(), &KRange::default()).unwrap();
        let back = StabilityReport::from_json(&report.to_json()).unwrap();
        assert_eq!(report, back);
    }

    #[test]
    fn invalid_models_are_rejected() {
        let mut model = banded_model();
        model.a_prime = 0.0;
        assert!(model.validate().is_err());
        model.a_prime = 1.0;
        model.d = -0.5;
        assert!(model.validate().is_err());
    }
}
