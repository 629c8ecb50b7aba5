use apstream::harness::{aggregate_median, run_experiment, Algorithm, ExperimentConfig};
use apstream::{load_csv, ApConfig, DatasetSchema, FeatureVector, IapnaState, MessageState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fv(v: &[f64]) -> FeatureVector {
    FeatureVector::new(v.to_vec()).unwrap()
}

fn nearest(x: &FeatureVector, old: &[FeatureVector]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, o) in old.iter().enumerate() {
        let d: f64 = x.iter().zip(o.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Entry (i, k) of the extended matrix written out case by case.
fn oracle_entry(old: &[f64], n: usize, q: &[usize], i: usize, k: usize) -> f64 {
    let at = |a: usize, b: usize| old[a * n + b];
    match (i < n, k < n) {
        (true, true) => at(i, k),
        (false, true) => at(q[i - n], k),
        (true, false) => at(i, q[k - n]),
        (false, false) if i == k => at(q[i - n], q[i - n]),
        (false, false) if q[i - n] == q[k - n] => 0.0,
        (false, false) => at(q[i - n], q[k - n]),
    }
}

fn check_copy_rule(old_pts: Vec<FeatureVector>, new_pts: Vec<FeatureVector>) {
    let cfg = ApConfig::default();
    let mut st = IapnaState::new();
    st.step(old_pts.clone(), &cfg).unwrap();
    let before: MessageState = st.messages().unwrap().clone();
    let n = old_pts.len();
    let q: Vec<usize> = new_pts.iter().map(|x| nearest(x, &old_pts)).collect();

    st.extend_messages(new_pts.clone(), &cfg).unwrap();
    let after = st.messages().unwrap();
    let total = n + new_pts.len();
    assert_eq!(after.n(), total);
    assert_eq!(st.similarity().unwrap().n(), total);
    for i in 0..total {
        for k in 0..total {
            assert_eq!(
                after.r(i, k),
                oracle_entry(before.responsibilities(), n, &q, i, k),
                "r({i},{k})"
            );
            assert_eq!(
                after.a(i, k),
                oracle_entry(before.availabilities(), n, &q, i, k),
                "a({i},{k})"
            );
        }
    }
}

#[test]
fn three_old_two_new_match_copy_rule() {
    let old = vec![fv(&[0.0, 0.0]), fv(&[0.0, 1.0]), fv(&[4.0, 4.0])];
    let new = vec![fv(&[0.1, 0.9]), fv(&[3.8, 4.1])];
    check_copy_rule(old, new);
}

#[test]
fn new_objects_sharing_a_neighbor() {
    let old = vec![fv(&[0.0, 0.0]), fv(&[0.0, 1.0]), fv(&[4.0, 4.0])];
    let new = vec![fv(&[3.9, 4.0]), fv(&[4.1, 4.0]), fv(&[0.0, 0.1])];
    check_copy_rule(old, new);
}

#[test]
fn random_instances_match_copy_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..40 {
        let n = rng.gen_range(2..9);
        let m = rng.gen_range(1..6);
        let mut pt = || fv(&[rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]);
        let old: Vec<_> = (0..n).map(|_| pt()).collect();
        let new: Vec<_> = (0..m).map(|_| pt()).collect();
        check_copy_rule(old, new);
    }
}

#[test]
fn iris_two_steps_purity_band() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/iris.csv");
    let iris = load_csv(path, &DatasetSchema::default()).unwrap();
    let config = ExperimentConfig {
        algorithms: vec![Algorithm::Iapna],
        first_n: Some(100),
        step_n: 50,
        steps: 2,
        seeds: (0..25).collect(),
        ..ExperimentConfig::default()
    };
    let out = run_experiment(&config, &iris).unwrap();
    let last = aggregate_median(&out.records).into_iter().find(|m| m.step == 1).unwrap();
    assert!((0.85..=0.96).contains(&last.purity), "median purity {}", last.purity);
}
