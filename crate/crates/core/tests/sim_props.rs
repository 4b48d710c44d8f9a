mod common;

use common::{example, example_file, max_abs_diff, random_scenario, RandomSpec};
use minerr::metrics::{dominance_margins, framer_violation};
use minerr::sim::{simulate, simulate_error_oracle, SimError, SimParams, SimStatus};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn zero_gap_and_exact_initial_frames_stay_exact() {
    let mut file = example_file();
    for list in [
        &mut file.delta.truth,
        &mut file.delta.upper,
        &mut file.delta.lower,
    ] {
        list.iter_mut().for_each(|e| *e = "0".into());
    }
    file.init.xbar0 = file.init.x0.clone();
    file.init.xlower0 = file.init.x0.clone();
    file.sim.t_end = 5.0;
    let s = file.to_scenario("exact").unwrap();
    let traj = simulate(&s).unwrap();
    for k in 0..traj.len() {
        assert_eq!(traj.xbar[k], traj.x[k]);
        assert_eq!(traj.xlower[k], traj.x[k]);
    }
}

#[test]
fn finite_escape_is_reported_near_one() {
    let text = r#"{
        "dims": { "n": 1, "p": 1, "q": 0 },
        "C": [[1]],
        "A": { "const": [[0]] },
        "beta": ["y1^2"],
        "delta": { "true": ["0"], "upper": ["0"], "lower": ["0"] },
        "gains": { "upper": [[[0]]], "lower": [[[0]]] },
        "init": { "x0": [1], "xbar0": [1], "xlower0": [1] },
        "sim": { "dt": 0.001, "t_end": 2, "record_stride": 100 }
    }"#;
    let s = minerr::cli::ScenarioFile::from_json(text, "escape")
        .unwrap()
        .to_scenario("escape")
        .unwrap();
    let traj = simulate(&s).unwrap();
    match traj.status {
        SimStatus::Diverged { t_escape } => {
            assert!((1.0..1.01).contains(&t_escape), "t_escape = {t_escape}")
        }
        other => panic!("expected divergence, got {other:?}"),
    }
    assert_eq!(
        traj.times.last().copied(),
        match traj.status {
            SimStatus::Diverged { t_escape } => Some(t_escape),
            _ => None,
        }
    );
}

#[test]
fn runs_are_deterministic() {
    let s = example();
    let a = simulate(&s).unwrap();
    let b = simulate(&s).unwrap();
    assert_eq!(a, b);
}

#[test]
fn halving_the_step_changes_little() {
    let s = example().with_sim(SimParams::new(1e-3, 10.0, 10).unwrap());
    let fine = example().with_sim(SimParams::new(5e-4, 10.0, 20).unwrap());
    let a = simulate(&s).unwrap();
    let b = simulate(&fine).unwrap();
    assert_eq!(a.len(), b.len());
    let mut worst = 0.0_f64;
    for k in 0..a.len() {
        assert!((a.times[k] - b.times[k]).abs() < 1e-12);
        worst = worst
            .max(max_abs_diff(&a.x[k], &b.x[k]))
            .max(max_abs_diff(&a.xbar[k], &b.xbar[k]))
            .max(max_abs_diff(&a.xlower[k], &b.xlower[k]));
    }
    assert!(
        worst <= 1e-6,
        "step halving moved the solution by {worst:e}"
    );
}

#[test]
fn envelope_violation_is_an_error() {
    let mut file = example_file();
    file.delta.truth[0] = "3".into();
    let s = file.to_scenario("bad").unwrap();
    assert!(matches!(simulate(&s), Err(SimError::Envelope(_))));
}

#[test]
fn evaluation_errors_propagate() {
    let mut file = example_file();
    file.beta[0] = "1/(y1 - y1)".into();
    let s = file.to_scenario("div0").unwrap();
    assert!(matches!(simulate(&s), Err(SimError::Eval { t, .. }) if t == 0.0));
}

#[test]
fn oracle_errors_stay_nonnegative_on_the_example() {
    let err = simulate_error_oracle(&example()).unwrap();
    for k in 0..err.times.len() {
        assert!(err.ebar[k]
            .iter()
            .chain(err.elower[k].iter())
            .all(|e| *e >= -1e-9));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_scenarios_keep_the_state_framed(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut file = random_scenario(&mut rng, RandomSpec { phi: 3, ..RandomSpec::default() });
        file.sim.t_end = 15.0;
        let s = file.to_scenario("random").unwrap();
        let traj = simulate(&s).unwrap();
        prop_assert_eq!(traj.status, SimStatus::Completed);
        prop_assert!(framer_violation(&traj) <= 1e-6);
        for k in 0..traj.len() {
            for i in 0..traj.n() {
                prop_assert!(traj.xlower[k][i] <= traj.xbar[k][i] + 1e-9);
            }
        }
    }

    #[test]
    fn extra_gains_never_loosen_the_frames(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut file = random_scenario(&mut rng, RandomSpec { phi: 2, ..RandomSpec::default() });
        file.sim.t_end = 10.0;
        let s = file.to_scenario("random").unwrap();
        let multi = simulate(&s).unwrap();
        let first = simulate(&s.with_gains(s.gains.single(1)).unwrap()).unwrap();
        let margin = dominance_margins(&multi, &[first]).unwrap()[0];
        prop_assert!(margin >= -1e-6, "margin {}", margin);
    }

    #[test]
    fn repeating_a_gain_changes_nothing(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut file = random_scenario(&mut rng, RandomSpec { phi: 1, ..RandomSpec::default() });
        file.sim.t_end = 5.0;
        let s = file.to_scenario("random").unwrap();
        let once = simulate(&s).unwrap();
        file.gains.upper.push(file.gains.upper[0].clone());
        file.gains.lower.push(file.gains.lower[0].clone());
        let twice = simulate(&file.to_scenario("random").unwrap()).unwrap();
        prop_assert_eq!(once, twice);
    }
}
