use drivenorm_core::cluster::*;
use drivenorm_core::features::FeatureMatrix;
use drivenorm_core::ingest::DriverId;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn opts(seed: u64) -> KMeansOptions {
    KMeansOptions {
        seed,
        ..Default::default()
    }
}

/// `per` unit-variance points around each centre.
fn blobs(centres: &[Vec<f64>], per: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::new();
    let mut truth = Vec::new();
    for (c, centre) in centres.iter().enumerate() {
        for _ in 0..per {
            x.push(
                centre
                    .iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + z
                    })
                    .collect(),
            );
            truth.push(c);
        }
    }
    (x, truth)
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn partition_wss(x: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    (0..k)
        .map(|c| {
            let members: Vec<&Vec<f64>> = x.iter().zip(labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                return 0.0;
            }
            let mean: Vec<f64> = (0..x[0].len())
                .map(|j| members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64)
                .collect();
            members.iter().map(|p| sq(p, &mean)).sum::<f64>()
        })
        .sum()
}

/// Lowest WSS over every partition of `x` into exactly `k` non-empty groups,
/// enumerated as restricted growth strings.
fn exhaustive(x: &[Vec<f64>], k: usize) -> (f64, Vec<usize>) {
    fn go(x: &[Vec<f64>], k: usize, labels: &mut Vec<usize>, used: usize, best: &mut (f64, Vec<usize>)) {
        let i = labels.len();
        if i == x.len() {
            if used == k {
                let w = partition_wss(x, labels, k);
                if w < best.0 {
                    *best = (w, labels.clone());
                }
            }
            return;
        }
        if k - used > x.len() - i {
            return;
        }
        for l in 0..(used + 1).min(k) {
            labels.push(l);
            go(x, k, labels, used.max(l + 1), best);
            labels.pop();
        }
    }
    let mut best = (f64::INFINITY, Vec::new());
    go(x, k, &mut Vec::new(), 0, &mut best);
    best
}

/// True when both labelings induce the same partition.
fn same_partition(a: &[usize], b: &[usize]) -> bool {
    (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

#[test]
fn one_cluster_per_distinct_row_has_zero_wss() {
    let x = vec![vec![0.0, 1.0], vec![5.0, 1.0], vec![5.0, 1.0], vec![-3.0, 2.0], vec![0.0, 1.0]];
    let m = kmeans(&x, 3, &opts(1)).unwrap();
    assert_eq!(m.wss, 0.0);
    let c = wss_curve(&x, [3], &opts(1)).unwrap();
    assert_eq!(c.points, vec![(3, 0.0)]);
}

#[test]
fn single_cluster_is_the_column_means() {
    let (x, _) = blobs(&[vec![1.0, -2.0, 3.0], vec![4.0, 0.0, -1.0]], 20, 4);
    let m = kmeans(&x, 1, &opts(3)).unwrap();
    let n = x.len() as f64;
    for j in 0..3 {
        let mean = x.iter().map(|p| p[j]).sum::<f64>() / n;
        assert!((m.centroids[0][j] - mean).abs() < 1e-12);
    }
    // n times the summed population variances
    let total: f64 = (0..3)
        .map(|j| {
            let mean = x.iter().map(|p| p[j]).sum::<f64>() / n;
            x.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / n
        })
        .sum::<f64>()
        * n;
    assert!((m.wss - total).abs() <= 1e-9 * total);
    let c = wss_curve(&x, [1], &opts(3)).unwrap();
    assert_eq!(c.points, vec![(1, m.wss)]);
}

#[test]
fn separated_blobs_are_recovered() {
    let centres = vec![vec![0.0, 0.0], vec![10.0, 0.0], vec![5.0, 10.0]];
    for seed in 0..5 {
        let (x, truth) = blobs(&centres, 30, seed);
        let m = kmeans(&x, 3, &opts(seed)).unwrap();
        assert!(same_partition(&m.assignments, &truth), "seed {seed}");
        assert_eq!(adjusted_rand_index(&m.assignments, &truth), 1.0);
    }
}

#[test]
fn small_instances_match_the_exhaustive_optimum() {
    let centres = vec![vec![0.0, 0.0], vec![10.0, 0.0], vec![5.0, 10.0]];
    for seed in 0..6 {
        let (x, _) = blobs(&centres, 4, 100 + seed);
        for k in 1..=3 {
            let (best, labels) = exhaustive(&x, k);
            let m = kmeans(&x, k, &opts(seed)).unwrap();
            assert!(same_partition(&m.assignments, &labels), "seed {seed} k {k}");
            assert!((m.wss - best).abs() <= 1e-12 * best.max(1.0), "seed {seed} k {k}: {} vs {best}", m.wss);
        }
    }
    // unstructured points too
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..4 {
        let x: Vec<Vec<f64>> = (0..9).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
        let (best, _) = exhaustive(&x, 3);
        let m = kmeans(&x, 3, &opts(2)).unwrap();
        assert!((m.wss - best).abs() <= 1e-12 * best.max(1.0), "{} vs {best}", m.wss);
    }
}

#[test]
fn five_blob_elbow() {
    // simplex corners 12 apart on each axis
    let centres: Vec<Vec<f64>> = (0..5).map(|c| (0..5).map(|j| if j == c { 12.0 } else { 0.0 }).collect()).collect();
    let (x, truth) = blobs(&centres, 25, 5);
    let curve = wss_curve(&x, 1..=10, &opts(7)).unwrap();
    let w: Vec<f64> = curve.points.iter().map(|p| p.1).collect();
    assert!(w.windows(2).all(|p| p[1] <= p[0]), "{w:?}");
    let drops: Vec<f64> = w.windows(2).map(|p| p[0] - p[1]).collect();
    let largest = (0..drops.len()).max_by(|&a, &b| drops[a].total_cmp(&drops[b])).unwrap() + 2;
    assert!(largest <= 5, "largest drop into k = {largest}");
    // past five the curve is nearly flat
    assert!(w[4] - w[9] < 0.02 * (w[0] - w[4]), "{w:?}");
    assert!(select_k(&curve).unwrap() <= 5);
    let m = kmeans(&x, 5, &opts(7)).unwrap();
    assert_eq!(adjusted_rand_index(&m.assignments, &truth), 1.0);
}

#[test]
fn select_k_examples() {
    let c = WssCurve {
        points: vec![(1, 100.0), (2, 40.0), (3, 35.0), (4, 33.0)],
    };
    assert_eq!(select_k(&c).unwrap(), 2);
    let linear = WssCurve {
        points: (1..=6).map(|k| (k, 100.0 - 10.0 * k as f64)).collect(),
    };
    assert_eq!(select_k(&linear).unwrap(), 2);
    let short = WssCurve {
        points: vec![(1, 3.0), (2, 1.0)],
    };
    assert_eq!(select_k(&short), Err(ClusterError::CurveTooShort(2)));
}

#[test]
fn errors() {
    let x = vec![vec![0.0], vec![1.0]];
    assert_eq!(kmeans(&x, 3, &opts(0)).unwrap_err(), ClusterError::TooFewRows { rows: 2, k: 3 });
    assert_eq!(kmeans(&x, 0, &opts(0)).unwrap_err(), ClusterError::ZeroK);
    assert!(matches!(wss_curve(&x, 1..=3, &opts(0)), Err(ClusterError::TooFewRows { .. })));
    assert_eq!(kmeans(&[vec![0.0], vec![1.0, 2.0]], 1, &opts(0)).unwrap_err(), ClusterError::Ragged);
}

#[test]
fn result_does_not_depend_on_thread_count() {
    let centres: Vec<Vec<f64>> = (0..4).map(|c| vec![c as f64 * 3.0, (c % 2) as f64 * 3.0, 0.0]).collect();
    let (x, _) = blobs(&centres, 40, 11);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| serde_json::to_string(&kmeans(&x, 4, &opts(21)).unwrap()).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(7));
}

fn feature_matrix(x: &[Vec<f64>]) -> FeatureMatrix {
    FeatureMatrix::from_raw(
        (0..x.len()).map(|i| DriverId::new(&format!("d{i:03}")).unwrap()).collect(),
        vec![
            "mean_speed_ratio".into(),
            "hard_accel_rate".into(),
            "hard_brake_rate".into(),
            "sharp_turn_rate".into(),
        ],
        x.to_vec(),
    )
    .unwrap()
}

#[test]
fn characterization_of_planted_groups() {
    // conformers at the origin, a large offset per group on its signature column
    let centres = vec![
        vec![0.0, 0.0, 0.0, 0.0],
        vec![0.0, 8.0, 8.0, 0.0],
        vec![0.0, 0.0, 0.0, 8.0],
        vec![-8.0, 0.0, 0.0, 0.0],
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut x = Vec::new();
    for (c, centre) in centres.iter().enumerate() {
        let n = if c == 0 { 40 } else { 12 };
        for _ in 0..n {
            x.push(centre.iter().map(|m| m + 0.5 * rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
        }
    }
    let fm = feature_matrix(&x);
    let m = kmeans(&fm.rows, 4, &opts(1)).unwrap();
    let rep = characterize_clusters(&m, &fm);
    assert_eq!(rep.clusters.iter().map(|c| c.size).sum::<usize>(), x.len());
    let label_of = |i: usize| rep.clusters[m.assignments[i]].label;
    assert_eq!(label_of(0), ClusterLabel::Conformer);
    assert_eq!(label_of(40), ClusterLabel::AggressiveLongitudinal);
    assert_eq!(label_of(52), ClusterLabel::SharpTurner);
    assert_eq!(label_of(64), ClusterLabel::SlowCautious);
    // raw means are in input units
    let slow = &rep.clusters[m.assignments[64]];
    assert!((slow.means[0] + 8.0).abs() < 0.5);

    let one = kmeans(&fm.rows, 1, &opts(1)).unwrap();
    let rep = characterize_clusters(&one, &fm);
    assert_eq!(rep.clusters.len(), 1);
    assert_eq!(rep.clusters[0].size, x.len());
    assert!(rep.clusters[0].z_offsets.iter().all(|z| z.abs() < 1e-12));
    assert_eq!(rep.clusters[0].label, ClusterLabel::Conformer);
}

#[test]
fn report_csv_has_a_row_per_cluster_and_feature() {
    let (x, _) = blobs(&[vec![0.0; 4], vec![9.0; 4]], 10, 2);
    let fm = feature_matrix(&x);
    let m = kmeans(&fm.rows, 2, &opts(0)).unwrap();
    let mut buf = Vec::new();
    characterize_clusters(&m, &fm).write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "cluster,label,size,feature,mean,z_offset");
    assert_eq!(lines.len(), 1 + 2 * 4);
}

#[test]
fn adjusted_rand_index_reference_values() {
    assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
    // contingency [[2,0],[1,1]]: index 1, expected 0.5, max 1.5
    assert!((adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 0, 1]) - 0.0).abs() < 1e-12);
    // contingency [[2,1],[0,3]]: index 1 + 3 = 4, a-pairs 3 + 3, b-pairs 1 + 6, 15 pairs
    let expected = (4.0 - 6.0 * 7.0 / 15.0) / (0.5 * (6.0 + 7.0) - 6.0 * 7.0 / 15.0);
    assert!((adjusted_rand_index(&[0, 0, 0, 1, 1, 1], &[0, 0, 1, 1, 1, 1]) - expected).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lloyd_never_raises_wss(seed in 0u64..10_000, n in 5usize..60, k in 1usize..6, d in 1usize..5) {
        prop_assume!(k <= n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-10.0..10.0)).collect()).collect();
        let init = kmeanspp_init(&x, k, &mut rng);
        let run = lloyd(&x, init, 300, 1e-6);
        for w in run.history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{:?}", run.history);
        }
        prop_assert!((run.wss - wss_of(&x, &run.centroids, &run.assignments)).abs() <= 1e-9 * run.wss.max(1.0));
        // every point sits with its nearest centroid, ties to the lowest index
        for (p, &a) in x.iter().zip(&run.assignments) {
            prop_assert_eq!(nearest(p, &run.centroids).0, a);
        }
    }

    #[test]
    fn permuting_rows_permutes_assignments(seed in 0u64..1000, shift in 1usize..40) {
        let centres = vec![vec![0.0, 0.0], vec![8.0, 0.0], vec![0.0, 8.0]];
        let (mut x, _) = blobs(&centres, 12, seed);
        // uneven sizes keep the canonical numbering unambiguous
        x.truncate(30);
        let a = kmeans(&x, 3, &opts(5)).unwrap();
        let n = x.len();
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + shift) % n).collect();
        prop_assume!({
            let mut s = perm.clone();
            s.sort_unstable();
            s.dedup();
            s.len() == n
        });
        let y: Vec<Vec<f64>> = perm.iter().map(|&i| x[i].clone()).collect();
        let b = kmeans(&y, 3, &opts(5)).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            prop_assert_eq!(b.assignments[j], a.assignments[i]);
        }
        prop_assert!((a.wss - b.wss).abs() <= 1e-9 * a.wss);
    }
}
