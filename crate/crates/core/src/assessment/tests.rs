use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::Dataset;
use crate::model::{Layer, LayerKind, LocalModel};
use crate::protocol::{Coordinator, Head, ModelSpec, Participant, ProtocolKind, TrainConfig};
use crate::synthesis::Mode;

fn linear(w: &[f64], b: f64) -> LocalModel {
    LocalModel::new(vec![Layer::linear(
        Matrix::new(1, w.len(), w.to_vec()).unwrap(),
        vec![b],
    )
    .unwrap()])
    .unwrap()
}

fn lr_system(wa: &[f64], wb: &[f64], b: f64) -> VFLSystem {
    let a = Participant::new(0, (0..wa.len()).collect(), linear(wa, b)).unwrap();
    let bp = Participant::new(
        1,
        (wa.len()..wa.len() + wb.len()).collect(),
        linear(wb, 0.0),
    )
    .unwrap();
    VFLSystem::new(
        ProtocolKind::HeteroLR,
        vec![a, bp],
        Coordinator::Aggregate(Head::Sigmoid),
        2,
    )
    .unwrap()
}

fn split_system(seed: u64) -> VFLSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Participant::new(
        0,
        vec![0, 1, 2],
        LocalModel::mlp(&[3, 6, 4], None, &mut rng).unwrap(),
    )
    .unwrap();
    let b = Participant::new(
        1,
        vec![3, 4],
        LocalModel::mlp(&[2, 6, 4], None, &mut rng).unwrap(),
    )
    .unwrap();
    let top = LocalModel::mlp(&[8, 6, 3], Some(LayerKind::Softmax), &mut rng).unwrap();
    VFLSystem::new(ProtocolKind::SplitNN, vec![a, b], Coordinator::Top(top), 3).unwrap()
}

fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::new(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-scale..scale))
            .collect(),
    )
    .unwrap()
}

#[test]
fn constant_system_dominates_everywhere() {
    let sys = lr_system(&[0.0], &[0.0], -1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = random_matrix(10, 1, 3.0, &mut rng);
    let b = random_matrix(15, 1, 3.0, &mut rng);
    assert_eq!(dominating_rate(&sys, 0, &[&a, &b], 0.95, 1).unwrap(), 1.0);
    assert_eq!(dominating_rate(&sys, 1, &[&a, &b], 0.99, 1).unwrap(), 1.0);
}

#[test]
fn dominating_rate_matches_brute_force() {
    let sys = split_system(3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 30;
    let a = random_matrix(n, 3, 4.0, &mut rng);
    let b = random_matrix(n, 2, 1.0, &mut rng);
    for attacker in 0..2 {
        let own = if attacker == 0 { &a } else { &b };
        let mut expected = Vec::new();
        for i in 0..n {
            let mut counts = [0usize; 3];
            for j in 0..n {
                let xa =
                    Matrix::row_vector(if attacker == 0 { a.row(i) } else { a.row(j) }).unwrap();
                let xb =
                    Matrix::row_vector(if attacker == 0 { b.row(j) } else { b.row(i) }).unwrap();
                counts[sys.predict(&[&xa, &xb]).unwrap()[0]] += 1;
            }
            expected.push(*counts.iter().max().unwrap() as f64 / n as f64);
        }
        let got = majority_fractions(&sys, attacker, &[&a, &b], 3).unwrap();
        assert_eq!(got, expected);
        assert_eq!(own.rows(), got.len());
        for t in [0.5, 0.95] {
            let want = expected.iter().filter(|&&f| f >= t).count() as f64 / n as f64;
            assert_eq!(
                dominating_rate(&sys, attacker, &[&a, &b], t, 2).unwrap(),
                want
            );
        }
    }
}

#[test]
fn zero_rounds_success_equals_dominating_rate() {
    let sys = split_system(5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random_matrix(25, 3, 5.0, &mut rng);
    let b = random_matrix(40, 2, 1.0, &mut rng);
    let s = b.select_rows(&[0, 1, 2, 3]);
    let cache = sys.benign_cache(0, &[&b]).unwrap();
    let cfg = SynthesisConfig {
        rounds: 0,
        ..SynthesisConfig::default()
    };
    let thresholds = [0.5, 0.8, 0.95];
    let summary = success_rate(&sys, &a, &[&s], &cache, &cfg, &thresholds, 2).unwrap();
    // Dominating rate of the sample against the same benign view.
    let fr: Vec<f64> = (0..a.rows())
        .map(|i| majority_label(&sys, &cache, a.row(i)).unwrap().1)
        .collect();
    for (t, r) in &summary.rates {
        let want = fr.iter().filter(|&&f| f >= *t).count() as f64 / fr.len() as f64;
        assert_eq!(*r, want);
    }
    assert!(summary
        .candidates
        .iter()
        .all(|c| c.perturbation.iter().all(|v| *v == 0.0)));
}

#[test]
fn parallel_success_matches_serial() {
    let sys = split_system(7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = random_matrix(6, 3, 1.0, &mut rng);
    let b = random_matrix(20, 2, 1.0, &mut rng);
    let s = b.select_rows(&[0, 1, 2]);
    let cache = sys.benign_cache(0, &[&b]).unwrap();
    let cfg = SynthesisConfig {
        rounds: 6,
        mode: Mode::Blackbox,
        ..SynthesisConfig::default()
    };
    let one = success_rate(&sys, &a, &[&s], &cache, &cfg, &[0.95], 1).unwrap();
    let four = success_rate(&sys, &a, &[&s], &cache, &cfg, &[0.95], 4).unwrap();
    assert_eq!(one, four);
}

#[test]
fn reward_share_examples() {
    let sys = lr_system(&[0.5, -1.0], &[0.0, 0.0], 0.1);
    let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![-0.3, 0.4]]).unwrap();
    let b = Matrix::from_rows(&[vec![3.0, 1.0], vec![0.2, -0.7]]).unwrap();
    let r = reward_shares(&sys, &[&a, &b]).unwrap();
    assert_eq!(r.shares, vec![1.0, 0.0]);
    assert!(!r.uniform_fallback);

    let zero = lr_system(&[0.0], &[0.0], 0.0);
    let x = Matrix::from_rows(&[vec![1.0]]).unwrap();
    let r = reward_shares(&zero, &[&x, &x]).unwrap();
    assert_eq!(r.shares, vec![0.5, 0.5]);
    assert!(r.uniform_fallback);
}

#[test]
fn reward_shares_match_linear_attribution() {
    let wa = [0.5, -1.0];
    let wb = [2.0];
    let sys = lr_system(&wa, &wb, 0.1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_matrix(8, 2, 1.0, &mut rng);
    let b = random_matrix(8, 1, 1.0, &mut rng);
    let mut ta = 0.0;
    let mut tb = 0.0;
    for i in 0..8 {
        let z = 0.1 + wa[0] * a.get(i, 0) + wa[1] * a.get(i, 1) + wb[0] * b.get(i, 0);
        let p = 1.0 / (1.0 + (-z).exp());
        let g = p * (1.0 - p);
        ta += g * (wa[0] * a.get(i, 0)).abs() + g * (wa[1] * a.get(i, 1)).abs();
        tb += g * (wb[0] * b.get(i, 0)).abs();
    }
    let r = reward_shares(&sys, &[&a, &b]).unwrap();
    assert!((r.shares[0] - ta / (ta + tb)).abs() < 1e-12);
    assert!((r.shares.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn spectrum_examples() {
    let u = [1.0, 2.0, -1.0];
    let v = [0.5, -0.5, 2.0, 1.0];
    let mut r1 = Matrix::zeros(3, 4);
    for i in 0..3 {
        for j in 0..4 {
            r1.set(i, j, u[i] * v[j]);
        }
    }
    let s = singular_spectrum(&r1);
    assert!(s[0] > 1.0);
    assert!(s[1..].iter().all(|x| x.abs() < 1e-12));

    let s = singular_spectrum(&Matrix::identity(5));
    assert!(s.iter().all(|x| (x - 1.0).abs() < 1e-12));
}

#[test]
fn spectrum_matches_gram_eigenvalues() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (r, c) in [(6, 4), (4, 9), (12, 12)] {
        let m = random_matrix(r, c, 1.0, &mut rng);
        let s = singular_spectrum(&m);
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
        assert!(s.iter().all(|x| *x >= 0.0));
        let gram = m.t_matmul(&m).unwrap();
        let g = DMatrix::from_row_slice(c, c, gram.as_slice());
        let mut eig: Vec<f64> = g
            .symmetric_eigenvalues()
            .iter()
            .map(|e| e.max(0.0).sqrt())
            .collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in s.iter().zip(&eig) {
            assert!((a - b).abs() < 1e-8, "{a} {b}");
        }
        let energy: f64 = s.iter().map(|x| x * x).sum();
        assert!((energy - m.frobenius_norm().powi(2)).abs() < 1e-8);
    }
}

#[test]
fn unit_sphere_columns_are_unit() {
    let m = random_unit_sphere(7, 20, 3);
    for j in 0..20 {
        let n: f64 = (0..7).map(|i| m.get(i, j).powi(2)).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }
    assert_eq!(m, random_unit_sphere(7, 20, 3));
}

#[test]
fn identical_benign_rows_give_rank_one_matrix() {
    let sys = lr_system(&[1.0, 0.5], &[1.0], 0.0);
    let rows = Matrix::from_rows(&vec![vec![2.0]; 4]).unwrap();
    let check_view = Matrix::from_rows(&[vec![-1.0], vec![0.0], vec![2.0], vec![3.0]]).unwrap();
    let check = sys.benign_cache(0, &[&check_view]).unwrap();
    let cfg = SynthesisConfig {
        rounds: 20,
        ..SynthesisConfig::default()
    };
    let pm = build_perturbation_matrix(&sys, &[&rows], &[0.2, 0.1], 0, &check, &cfg, 2).unwrap();
    assert_eq!(pm.columns.cols(), 4);
    assert!(pm.dropped.is_empty());
    for j in 0..4 {
        let n: f64 = (0..2).map(|i| pm.columns.get(i, j).powi(2)).sum();
        assert!((n - 1.0).abs() < 1e-9);
        for i in 0..2 {
            assert_eq!(pm.columns.get(i, j), pm.columns.get(i, 0));
        }
    }
    let s = singular_spectrum(&pm.columns);
    assert!(s[1] < 1e-9);
    // Rank one: the reconstruction at k = 1 is the mean perturbation itself.
    let x = svd::reconstruct(&pm, 1).unwrap();
    let mean = pm.mean_perturbation();
    for ((xi, b), m) in x.iter().zip(&pm.base).zip(&mean) {
        assert!((xi - b - m).abs() < 1e-9);
    }
    assert!(svd::reconstruct(&pm, 2).is_err());
    let rate = reconstruct_and_rate(&pm, 1, &sys, &check).unwrap();
    assert_eq!(rate, sys.hit_rate(&check, &x, 0).unwrap());
}

#[test]
fn dominating_inputs_leave_zero_columns() {
    let sys = lr_system(&[1.0], &[1.0], 0.0);
    let rows = Matrix::from_rows(&[vec![-1.0], vec![1.0]]).unwrap();
    let check = sys.benign_cache(0, &[&rows]).unwrap();
    // x_A = -5 already dominates toward class 0.
    let r = build_perturbation_matrix(
        &sys,
        &[&rows],
        &[-5.0],
        0,
        &check,
        &SynthesisConfig::default(),
        1,
    );
    assert!(r.is_err());
    assert!(build_perturbation_matrix(
        &sys,
        &[&rows.select_rows(&[0])],
        &[0.0],
        0,
        &check,
        &SynthesisConfig::default(),
        1
    )
    .is_err());
}

#[test]
fn report_roundtrip_and_naming() {
    let mut r =
        ExperimentReport::new("demo", &serde_json::json!({"k": 1}), 7, &["a", "b"]).unwrap();
    r.push_row("x", vec![1.0, 0.25]).unwrap();
    assert!(r.push_row("y", vec![1.0]).is_err());
    assert!(r.push_row("y", vec![1.0, f64::NAN]).is_err());
    r.push_row("y", vec![0.1, 1.0 / 3.0]).unwrap();
    r.finish(1.5);
    assert_eq!(r.artifact_hash.len(), 64);
    assert_eq!(r.get("y", "b"), Some(1.0 / 3.0));
    assert_eq!(r.column("a"), Some(vec![1.0, 0.1]));
    let dir = tempfile::tempdir().unwrap();
    let (json, csv) = r.write(dir.path()).unwrap();
    assert_eq!(
        json.file_name().unwrap().to_str().unwrap(),
        format!("demo-7-{}.json", r.timestamp)
    );
    assert_eq!(ExperimentReport::read(&json).unwrap(), r);
    let text = std::fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "label,a,b");
    assert_eq!(text.lines().count(), 3);

    // The hash ignores wallclock and creation time.
    let mut again = r.clone();
    again.timestamp += 10;
    again.finish(99.0);
    assert_eq!(again.artifact_hash, r.artifact_hash);
    again.rows[0].values[0] = 2.0;
    assert_ne!(again.content_hash(), r.artifact_hash);
}

/// Two-class tabular data separable on the first features.
fn tabular(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        labels.push(usize::from(x[0] + 0.5 * x[1] - 0.3 * x[4] > 0.0));
        rows.push(x);
    }
    Dataset::new(Matrix::from_rows(&rows).unwrap(), labels, 2).unwrap()
}

fn small_sweep() -> SweepConfig {
    SweepConfig {
        model: ModelSpec::Heterolr,
        train: TrainConfig {
            epochs: 5,
            ..TrainConfig::heterolr()
        },
        synthesis: SynthesisConfig {
            rounds: 10,
            ..SynthesisConfig::default()
        },
        sample: 10,
        tiny: 5,
        workers: 2,
        ..SweepConfig::default()
    }
}

#[test]
fn ratio_sweep_replays_exactly() {
    let train = tabular(200, 1);
    let test = tabular(80, 2);
    let cfg = small_sweep();
    let a = partition_ratio_sweep(&train, &test, &[0.5, 2.0], &cfg).unwrap();
    let b = partition_ratio_sweep(&train, &test, &[0.5, 2.0], &cfg).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.artifact_hash, b.artifact_hash);
    assert_eq!(
        a.columns,
        vec![
            "ratio",
            "accuracy",
            "dominating_a",
            "dominating_b",
            "success"
        ]
    );
    assert_eq!(a.column("ratio"), Some(vec![0.5, 2.0]));
    // The stored snapshot is enough to rebuild the configuration.
    let snap: SweepConfig = serde_json::from_value(a.config["sweep"].clone()).unwrap();
    assert_eq!(snap, cfg);
}

#[test]
fn participant_sweep_on_image_columns() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let make = |n: usize, rng: &mut ChaCha8Rng| {
        let x = random_matrix(n, 28, 1.0, rng);
        let labels = (0..n)
            .map(|i| usize::from(x.get(i, 0) + x.get(i, 27) > 0.0))
            .collect();
        let mut d = Dataset::new(x, labels, 2).unwrap();
        d.image_shape = Some((1, 28));
        d
    };
    let train = make(150, &mut rng);
    let test = make(60, &mut rng);
    let cfg = SweepConfig {
        fuzz: Some(crate::fuzz::CampaignConfig {
            max_iter: 2,
            energy: 2,
            ..Default::default()
        }),
        fuzz_corpus: 2,
        ..small_sweep()
    };
    let r = participants_sweep(&train, &test, &[2, 3, 5], &cfg).unwrap();
    assert_eq!(r.rows.len(), 3);
    assert_eq!(r.columns.last().unwrap(), "fuzz_adis");
    assert!(r
        .rows
        .iter()
        .all(|row| row.values.iter().all(|v| v.is_finite())));
    assert!(participants_sweep(&train, &test, &[4], &cfg).is_err());
}
