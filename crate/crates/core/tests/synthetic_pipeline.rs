//! End-to-end pipeline checks against the synthetic generator's closed-form
//! expectations, plus ordering and determinism guarantees.

use crater_moments::coefficients::{
    map_to_bs_parameters, steady_concentration, ConcentrationEval,
};
use crater_moments::filter::FilterConfig;
use crater_moments::fit::{fit_moment_curves, ChannelKind, FitOptions};
use crater_moments::moments::{
    aggregate_moments, write_moment_csv, MomentSample, MomentTable,
};
use crater_moments::synthetic::{
    analytic_moments, generate_synthetic_impacts, EvenAngleLaw, OddAngleLaw, SpeciesCraterSpec,
    SyntheticCraterSpec,
};
use crater_moments::{compute_height_coefficients, SpeciesId};

fn demo_spec(deterministic: bool, seed: u64) -> SyntheticCraterSpec {
    SyntheticCraterSpec {
        species: [SpeciesId::new("Ga", 0.0283), SpeciesId::new("Sb", 0.0283)],
        crater: [
            SpeciesCraterSpec {
                eros_count: EvenAngleLaw::new(vec![5.0, 0.5]),
                eros_offset_x_nm: OddAngleLaw::new(vec![0.4, -0.1]),
                eros_jitter_nm: 0.2,
                redist_count: 15,
                redist_dx_nm: OddAngleLaw::new(vec![0.85, 0.15]),
                redist_dz_nm: -0.05,
                redist_spread_nm: 0.3,
                bystander_count: 22,
            },
            SpeciesCraterSpec {
                eros_count: EvenAngleLaw::new(vec![3.0, 0.3]),
                eros_offset_x_nm: OddAngleLaw::new(vec![0.3, 0.05]),
                eros_jitter_nm: 0.2,
                redist_count: 11,
                redist_dx_nm: OddAngleLaw::new(vec![1.05, -0.2]),
                redist_dz_nm: -0.04,
                redist_spread_nm: 0.3,
                bystander_count: 22,
            },
        ],
        cell_nm: [18.0, 18.0],
        surface_z_nm: 0.0,
        crater_radius_nm: 2.0,
        bystander_band: [0.36, 0.49],
        contamination: None,
        deterministic,
        seed,
    }
}

fn nine_angles() -> Vec<f64> {
    (0..9).map(|i| 10.0 * i as f64).collect()
}

/// Run moments → fits → coefficients → steady state → parameters on a table.
fn table_to_bs(table: &MomentTable) -> crater_moments::coefficients::BsParameters {
    let fits = fit_moment_curves(table, &FitOptions::default()).unwrap();
    let coeffs = compute_height_coefficients(&fits, 0.0).unwrap();
    let conc = steady_concentration(&coeffs, [0.5, 0.5], 3.0).unwrap();
    map_to_bs_parameters(&coeffs, &conc, Some(1.0), Some(1.0), ConcentrationEval::Linear).unwrap()
}

#[test]
fn deterministic_pipeline_reproduces_analytic_parameters() {
    let spec = demo_spec(true, 40);
    let angles = nine_angles();
    let (set, expected) = generate_synthetic_impacts(&spec, &angles, 3).unwrap();

    let table = aggregate_moments(&set, &FilterConfig::default()).unwrap();
    let bs = table_to_bs(&table);

    // analytic route: the closed-form expectations through the same
    // downstream chain
    let analytic_table = MomentTable {
        species: spec.species.clone(),
        samples: expected
            .iter()
            .map(|e| MomentSample {
                theta_deg: e.theta_deg,
                n_impacts: 3,
                mean: e.mean,
                stderr: Default::default(),
            })
            .collect(),
    };
    let bs_analytic = table_to_bs(&analytic_table);

    for (got, want, name) in [
        (bs.a, bs_analytic.a, "A"),
        (bs.c, bs_analytic.c, "C"),
        (bs.a_prime, bs_analytic.a_prime, "A'"),
        (bs.c_prime, bs_analytic.c_prime, "C'"),
    ] {
        assert!(
            (got - want).abs() <= 1e-9,
            "{name}: pipeline {got} vs analytic {want}"
        );
    }
    assert!(bs.longwave_group().is_finite());
}

#[test]
fn aggregation_is_invariant_under_input_order() {
    let spec = demo_spec(false, 41);
    let (set, _) = generate_synthetic_impacts(&spec, &[0.0, 20.0, 40.0], 30).unwrap();
    let mut shuffled = set.clone();
    shuffled.impacts.reverse();
    for imp in shuffled.impacts.iter_mut() {
        imp.atoms.reverse();
    }
    let cfg = FilterConfig::default();
    let a = aggregate_moments(&set, &cfg).unwrap();
    let b = aggregate_moments(&shuffled, &cfg).unwrap();
    assert_eq!(a, b); // bitwise: summation order is fixed by ids
    assert_eq!(write_moment_csv(&a), write_moment_csv(&b));
}

#[test]
fn normal_incidence_symmetric_spec_has_vanishing_first_moments() {
    let mut spec = demo_spec(false, 42);
    for crater in spec.crater.iter_mut() {
        crater.eros_offset_x_nm = OddAngleLaw::default();
        crater.redist_dx_nm = OddAngleLaw::default();
        crater.redist_dz_nm = -0.05;
    }
    let (set, _) = generate_synthetic_impacts(&spec, &[0.0], 400).unwrap();
    let table = aggregate_moments(&set, &FilterConfig::default()).unwrap();
    let sample = &table.samples[0];
    for s in 0..2 {
        for c in 0..2 {
            let mean = sample.mean.species[s].m1_redist_nm4[c];
            let err = sample.stderr.species[s].m1_redist_nm4[c];
            assert!(
                mean.abs() <= 3.0 * err + 1e-12,
                "species {s} component {c}: {mean} vs 3se {err}"
            );
            let mean = sample.mean.species[s].m1_eros_nm4[c];
            let err = sample.stderr.species[s].m1_eros_nm4[c];
            assert!(mean.abs() <= 3.0 * err + 1e-12);
        }
    }
}

#[test]
fn randomized_fit_recovers_generator_coefficients() {
    let spec = demo_spec(false, 43);
    let angles = nine_angles();
    let (set, _) = generate_synthetic_impacts(&spec, &angles, 400).unwrap();
    let table = aggregate_moments(&set, &FilterConfig::default()).unwrap();
    let fits = fit_moment_curves(&table, &FitOptions::default()).unwrap();

    // true series: M¹_redist(θ) = Ω n_r Σ bₙ sin(2nθ), so the fitted
    // coefficients should recover Ω n_r bₙ within the fit uncertainty
    let fit = fits.get("Ga", ChannelKind::RedistX).unwrap();
    let omega = 0.0283;
    let scale = omega * spec.crater[0].redist_count as f64;
    let truth = [
        scale * spec.crater[0].redist_dx_nm.coeffs[0],
        scale * spec.crater[0].redist_dx_nm.coeffs[1],
        0.0,
    ];

    // test-side coefficient covariance: sigma² (XᵀX)⁻¹ with the residual
    // variance estimated from the fit itself
    let theta: Vec<f64> = table.samples.iter().map(|s| s.theta_deg.to_radians()).collect();
    let p = 3;
    let mut xtx = [[0.0f64; 3]; 3];
    for t in &theta {
        let row: Vec<f64> = (0..p).map(|j| ((2 * (j + 1)) as f64 * t).sin()).collect();
        for j in 0..p {
            for k in 0..p {
                xtx[j][k] += row[j] * row[k];
            }
        }
    }
    // 3x3 inverse by adjugate
    let m = &xtx;
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let inv_diag = [
        (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det,
        (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det,
        (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det,
    ];
    let dof = (theta.len() - p) as f64;
    let sigma2 = fit.residual_rms.powi(2) * theta.len() as f64 / dof;
    for j in 0..p {
        let stderr = (sigma2 * inv_diag[j]).sqrt();
        assert!(
            (fit.coefficients[j] - truth[j]).abs() <= 3.0 * stderr,
            "coefficient {j}: {} vs {} (3se = {})",
            fit.coefficients[j],
            truth[j],
            3.0 * stderr
        );
    }
}

#[test]
fn same_config_and_seed_yield_identical_artifacts() {
    let spec = demo_spec(false, 44);
    let angles = [0.0, 30.0, 60.0];
    let (set1, _) = generate_synthetic_impacts(&spec, &angles, 50).unwrap();
    let (set2, _) = generate_synthetic_impacts(&spec, &angles, 50).unwrap();
    let cfg = FilterConfig::default();
    let csv1 = write_moment_csv(&aggregate_moments(&set1, &cfg).unwrap());
    let csv2 = write_moment_csv(&aggregate_moments(&set2, &cfg).unwrap());
    assert_eq!(csv1, csv2);
}

#[test]
fn analytic_moments_respect_basis_parity() {
    let spec = demo_spec(true, 45);
    let expected = analytic_moments(&spec, &[0.0, 90.0]);
    // odd laws vanish at normal incidence exactly (sin 0 = 0) and at
    // grazing incidence to rounding (sin π is one ulp off zero)
    for e in &expected {
        for s in 0..2 {
            let m1r = e.mean.species[s].m1_redist_nm4[0];
            let m1e = e.mean.species[s].m1_eros_nm4[0];
            if e.theta_deg == 0.0 {
                assert_eq!(m1r, 0.0);
                assert_eq!(m1e, 0.0);
            } else {
                assert!(m1r.abs() < 1e-14, "{m1r}");
                assert!(m1e.abs() < 1e-14, "{m1e}");
            }
        }
    }
}
