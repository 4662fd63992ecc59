use mln_ood::norm::{fit_diagnostics, fit_distribution, Family, ScoreDistribution, DEFAULT_BINS};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gev_quantile(u: f64, loc: f64, scale: f64, shape: f64) -> f64 {
    let e = -u.ln();
    if shape == 0.0 {
        loc - scale * e.ln()
    } else {
        loc + scale * (e.powf(-shape) - 1.0) / shape
    }
}

fn gev_sample(n: usize, seed: u64, loc: f64, scale: f64, shape: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::EPSILON..1.0);
            gev_quantile(u, loc, scale, shape)
        })
        .collect()
}

#[test]
fn gev_parameters_are_recovered() {
    let xs = gev_sample(100_000, 11, 0.0, 1.0, 0.1);
    let ScoreDistribution::Gev { location, scale, shape } = fit_distribution(&xs, Family::Gev).unwrap() else {
        panic!("wrong family")
    };
    assert!(location.abs() < 0.05, "location {location}");
    assert!((scale - 1.0).abs() < 0.05, "scale {scale}");
    assert!((shape - 0.1).abs() < 0.05, "shape {shape}");
}

#[test]
fn gev_fit_is_deterministic() {
    let xs = gev_sample(2_000, 3, 2.0, 0.5, -0.2);
    assert_eq!(fit_distribution(&xs, Family::Gev).unwrap(), fit_distribution(&xs, Family::Gev).unwrap());
}

#[test]
fn ks_shrinks_for_correct_family() {
    let xs = gev_sample(100_000, 5, 1.0, 2.0, 0.2);
    let d = fit_distribution(&xs, Family::Gev).unwrap();
    let report = fit_diagnostics(&d, &xs, DEFAULT_BINS).unwrap();
    assert!(report.ks_statistic.unwrap() < 0.02, "{report:?}");
    assert_eq!(report.histogram.len(), DEFAULT_BINS);
    assert_eq!(report.histogram.iter().map(|b| b.count).sum::<u64>(), 100_000);
}

#[test]
fn wrong_family_fits_worse() {
    let xs = gev_sample(20_000, 8, 0.0, 1.0, 0.3);
    let ks = |fam| {
        let d = fit_distribution(&xs, fam).unwrap();
        fit_diagnostics(&d, &xs, DEFAULT_BINS).unwrap().ks_statistic.unwrap()
    };
    assert!(ks(Family::Normal) > ks(Family::Gev));
}

#[test]
fn fitted_tails() {
    let xs = gev_sample(5_000, 21, 3.0, 0.7, 0.05);
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    for fam in [Family::Gev, Family::Normal, Family::GeneralizedNormal, Family::Lognormal] {
        let d = fit_distribution(&xs, fam).unwrap();
        assert!(d.survival(lo - 10.0 * range) >= 0.99, "{fam}");
        assert!(d.survival(hi + 10.0 * range) <= 0.01, "{fam}");
    }
}

#[test]
fn generalized_normal_recovers_laplace_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let xs: Vec<f64> = (0..20_000)
        .map(|_| {
            let u: f64 = rng.gen_range(-0.5..0.5);
            1.0 - 0.8 * u.signum() * (1.0 - 2.0 * u.abs()).ln()
        })
        .collect();
    let ScoreDistribution::GeneralizedNormal { location, scale, shape } =
        fit_distribution(&xs, Family::GeneralizedNormal).unwrap()
    else {
        panic!("wrong family")
    };
    assert!((shape - 1.0).abs() < 0.1, "shape {shape}");
    assert!((location - 1.0).abs() < 0.05, "location {location}");
    assert!((scale - 0.8).abs() < 0.05, "scale {scale}");
}

fn any_distribution() -> impl Strategy<Value = ScoreDistribution> {
    prop_oneof![
        (-5.0..5.0f64, 0.05..5.0f64, -0.5..0.5f64)
            .prop_map(|(location, scale, shape)| ScoreDistribution::Gev { location, scale, shape }),
        (-5.0..5.0f64, 0.01..5.0f64).prop_map(|(a, w)| ScoreDistribution::Uniform { a, b: a + w }),
        (-5.0..5.0f64, 0.05..5.0f64).prop_map(|(mean, sd)| ScoreDistribution::Normal { mean, sd }),
        (-5.0..5.0f64, 0.05..5.0f64, 0.2..20.0f64).prop_map(|(location, scale, shape)| {
            ScoreDistribution::GeneralizedNormal { location, scale, shape }
        }),
        (-2.0..2.0f64, 0.05..2.0f64).prop_map(|(log_mean, log_sd)| ScoreDistribution::Lognormal { log_mean, log_sd }),
        Just(ScoreDistribution::None),
    ]
}

proptest! {
    #[test]
    fn survival_is_monotone_and_bounded(d in any_distribution(), a in -50.0..50.0f64, b in -50.0..50.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (sl, sh) = (d.survival(lo), d.survival(hi));
        prop_assert!((0.0..=1.0).contains(&sl) && (0.0..=1.0).contains(&sh));
        prop_assert!(sl >= sh, "{d:?}: S({lo}) = {sl} < S({hi}) = {sh}");
    }

    #[test]
    fn survival_handles_infinities(d in any_distribution()) {
        prop_assert!(d.survival(f64::NEG_INFINITY) >= d.survival(f64::INFINITY));
        prop_assert!((0.0..=1.0).contains(&d.survival(f64::INFINITY)));
    }

    #[test]
    fn near_zero_shape_is_gumbel(loc in -3.0..3.0f64, scale in 0.1..3.0f64, s in -10.0..10.0f64) {
        let gumbel = 1.0 - (-(-(s - loc) / scale).exp()).exp();
        let d = ScoreDistribution::Gev { location: loc, scale, shape: 1e-9 };
        prop_assert!((d.survival(s) - gumbel).abs() < 1e-6);
    }

    #[test]
    fn json_round_trip(d in any_distribution()) {
        prop_assert_eq!(ScoreDistribution::from_json(&d.to_json()).unwrap(), d);
    }
}
