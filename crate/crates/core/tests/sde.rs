//! Exit-time simulation on the tilted double well: step-size stability and
//! sample invariants.

use proptest::prelude::*;
use std::path::Path;
use witten_core::config::Fixture;
use witten_core::sde::{exit_region, simulate_exit, ExitRegion, ExitSample, LangevinConfig};
use witten_core::sublevel::GridSampling;

struct Setup {
    fixture: Fixture,
    grid: GridSampling,
    region: ExitRegion,
    minimum: usize,
}

fn setup() -> Setup {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs/tilted_double_well.toml");
    let fixture = Fixture::load(&path).unwrap();
    let grid = fixture.sample(&fixture.spec.grid).unwrap();
    let l = fixture.label(&grid).unwrap();
    let minimum = l.minima.iter().position(|m| m.barrier.is_finite()).unwrap();
    let region = exit_region(&fixture.minima[minimum], &l, minimum, &grid, 0.1).unwrap();
    Setup { fixture, grid, region, minimum }
}

fn run(s: &Setup, h: f64, horizon: f64, paths: usize, seed: u64, dt_scale: f64) -> ExitSample {
    let f = &s.fixture;
    let mut cfg = LangevinConfig::new(&f.potential, &s.grid, s.region.clone(), h, horizon, paths, seed).unwrap();
    cfg.dt *= dt_scale;
    cfg.validate(&f.potential, &s.grid).unwrap();
    simulate_exit(&f.potential, &f.minima[s.minimum], &s.grid, &cfg).unwrap()
}

/// Standard error of the exponential MLE mean.
fn std_error(x: &ExitSample) -> f64 {
    x.mean_exit_time() / (x.exits() as f64).sqrt()
}

#[test]
fn halving_the_step_stays_within_sampling_error() {
    let s = setup();
    let a = run(&s, 0.2, 300.0, 2000, 17, 1.0);
    let b = run(&s, 0.2, 300.0, 2000, 17, 0.5);
    let diff = (a.mean_exit_time() - b.mean_exit_time()).abs();
    let bound = 3.0 * std_error(&a).hypot(std_error(&b));
    assert!(diff <= bound, "means {} and {}: difference {diff} exceeds {bound}", a.mean_exit_time(), b.mean_exit_time());
}

#[test]
fn step_above_the_stability_bound_is_rejected() {
    let s = setup();
    let f = &s.fixture;
    let mut cfg = LangevinConfig::new(&f.potential, &s.grid, s.region.clone(), 0.2, 10.0, 10, 0).unwrap();
    cfg.dt *= 2.0;
    assert!(cfg.validate(&f.potential, &s.grid).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn samples_are_reproducible_and_censored_at_the_horizon(seed in any::<u64>(), h in 0.2f64..0.35) {
        let s = setup();
        let horizon = 40.0;
        let a = run(&s, h, horizon, 24, seed, 1.0);
        let b = run(&s, h, horizon, 24, seed, 1.0);
        prop_assert_eq!(&a.times, &b.times);
        prop_assert_eq!(a.times.len(), 24);
        for (&t, &c) in a.times.iter().zip(&a.censored) {
            prop_assert!(t > 0.0 && t <= horizon);
            if c {
                prop_assert!(t > horizon - a.dt);
            }
        }
    }
}
