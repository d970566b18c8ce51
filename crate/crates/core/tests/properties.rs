use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use viscostar::diagnostics::{self, ExponentTarget, Sample};
use viscostar::functionals::{self, RadialField};
use viscostar::polytrope;
use viscostar::simulator::{self, InitialData, SimConfig, VelocitySpec, ViscosityModel};

const TOL: f64 = 1e-10;

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mass_and_radius_follow_the_scaling_law(gamma in 1.21f64..1.9, log_mu in -2.0f64..2.0) {
        let mu = log_mu.exp();
        let base = polytrope::solve_profile(gamma, 1.0, TOL).unwrap();
        let p = polytrope::solve_profile(gamma, mu, TOL).unwrap();
        prop_assert!(rel(p.mass / base.mass, mu.powf((3.0 * gamma - 4.0) / 2.0)) < 1e-6);
        prop_assert!(rel(p.radius.unwrap() / base.radius.unwrap(), mu.powf((gamma - 2.0) / 2.0)) < 1e-6);
    }

    #[test]
    fn steady_density_decreases_outwards(gamma in 1.21f64..1.9, log_mu in -1.0f64..1.0) {
        let p = polytrope::solve_profile(gamma, log_mu.exp(), TOL).unwrap();
        prop_assert!(p.rho_samples.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(*p.rho_samples.last().unwrap(), 0.0);
    }

    #[test]
    fn gravitational_identity_on_random_densities(seed in any::<u64>(), gamma in 1.21f64..1.6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = functionals::random_trial_density(&mut rng, gamma, 2001);
        let w = functionals::gravitational_energy(&f);
        prop_assert!(rel(w.identity, w.direct) < 1e-6, "{} vs {}", w.identity, w.direct);
    }

    #[test]
    fn hls_ratio_is_scale_and_dilation_invariant(seed in any::<u64>(), c in 0.1f64..10.0, lambda in 0.3f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = functionals::random_trial_density(&mut rng, 4.0 / 3.0, 2001);
        let base = functionals::hls_ratio(&f).unwrap();
        prop_assert!(rel(functionals::hls_ratio(&f.scale_density(c)).unwrap(), base) < 1e-9);
        prop_assert!(rel(functionals::hls_ratio(&f.dilate(lambda)).unwrap(), base) < 1e-6);
    }

    #[test]
    fn dilated_steady_states_have_positive_q(gamma in 1.22f64..1.32, lambda in 0.5f64..0.98) {
        let p = polytrope::solve_profile(gamma, 1.0, TOL).unwrap();
        let f = functionals::mass_preserving_scaling(&p, lambda).unwrap();
        let e = functionals::energy(&f);
        prop_assert!(e.q > 0.0);
        let undilated = functionals::mass(&RadialField::from_profile(&p).unwrap());
        prop_assert!(rel(e.mass, undilated) < 1e-12);
    }

    #[test]
    fn power_laws_are_fitted_exactly(p in 0.05f64..1.5, c in 0.1f64..10.0) {
        let t: Vec<f64> = (0..120).map(|i| 0.05 * 1.06f64.powi(i)).collect();
        let a: Vec<f64> = t.iter().map(|t| c * t.powf(p)).collect();
        let target = ExponentTarget { target: p, band: (p - 0.01, p + 0.01), lower_rate: None };
        let fit = diagnostics::fit_exponent_series(&t, &a, 0.5, target).unwrap();
        prop_assert!((fit.slope - p).abs() < 1e-10);
        prop_assert!((fit.intercept - c.ln()).abs() < 1e-9);
    }

    #[test]
    fn csv_rows_round_trip(values in proptest::array::uniform15(-1e300f64..1e300)) {
        let s = Sample::from_values(values);
        let mut buf = Vec::new();
        diagnostics::write_csv(&[s, s], &mut buf).unwrap();
        prop_assert_eq!(diagnostics::read_csv(buf.as_slice()).unwrap(), vec![s, s]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn steps_keep_mass_geometry_and_the_particle_path_bound(
        lambda in 0.85f64..1.0,
        c in -0.05f64..0.2,
        alpha in 0.0f64..1.2,
        steps in 1usize..40,
    ) {
        let visc = ViscosityModel::new(0.1, 1.0, alpha).unwrap();
        let mut cfg = SimConfig::new(1.25, visc, 48, 1.0, InitialData::scaled_lane_emden(1.0, lambda));
        cfg.velocity = VelocitySpec::Linear { c };
        let mut s = simulator::init(&cfg).unwrap();
        let m0 = s.total_mass();
        for _ in 0..steps {
            let dt = simulator::stable_dt(&s);
            s.advance(dt).unwrap();
        }
        prop_assert!(rel(s.total_mass(), m0) < 1e-12);
        prop_assert!(s.geometric_consistency_error() < 1e-10);
        prop_assert_eq!(s.u[0], 0.0);
        prop_assert!(s.min_interior_rho() > 0.0);
        prop_assert!(s.dissipation >= 0.0);
        prop_assert_eq!(diagnostics::holder_chain(&s).violations, 0);
    }

    #[test]
    fn energy_plus_dissipation_is_nearly_conserved(lambda in 0.85f64..0.99, eta in 0.2f64..2.0) {
        let visc = ViscosityModel::constant(0.0, eta).unwrap();
        let mut cfg = SimConfig::new(1.3, visc, 64, 2.0, InitialData::scaled_lane_emden(1.0, lambda));
        cfg.output_dt = Some(0.5);
        let rec = simulator::run(&cfg).unwrap();
        let res = diagnostics::energy_residual(&rec);
        prop_assert!(res.iter().all(|r| r.abs() < 1e-3), "{res:?}");
    }
}

#[test]
fn velocity_free_state_has_zero_virial_rate() {
    let cfg = SimConfig::new(1.3, ViscosityModel::constant(0.0, 1.0).unwrap(), 64, 1.0, InitialData::lane_emden(1.0));
    let s = simulator::init(&cfg).unwrap();
    let (_, hp, hpp) = diagnostics::virial_h(&s);
    assert_eq!(hp, 0.0);
    let cutoff = 4.0 * std::f64::consts::PI * s.xi.powi(3) * s.pressure(0);
    assert!((hpp - s.q() - cutoff).abs() < 1e-12 * s.internal(), "{hpp} vs {}", s.q());
    assert!(hpp.abs() < 1e-2 * s.internal());
}
