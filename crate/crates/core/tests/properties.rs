use fedfg::baselines::{self, coordinate_median, coordinate_trimmed_mean, geometric_objective, trim_count, weiszfeld};
use fedfg::client::Upload;
use fedfg::model::PublicModel;
use fedfg::nn::{softmax_cross_entropy, Layout, ParamVector, Segment};
use fedfg::server::{hellinger, outlier_scores_from_dists};
use proptest::prelude::*;

fn points(max_n: usize, max_dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1..=max_n, 1..=max_dim).prop_flat_map(|(n, d)| {
        prop::collection::vec(prop::collection::vec(-1e3..1e3f64, d), n)
    })
}

fn uploads(pts: &[Vec<f64>]) -> Vec<Upload> {
    let d = pts[0].len();
    pts.iter()
        .enumerate()
        .map(|(i, p)| {
            let g = Layout::new(vec![Segment::new("generator.x", vec![1])]);
            let c = Layout::new(vec![Segment::new("classifier.x", vec![d])]);
            Upload::new(
                i,
                PublicModel {
                    generator: ParamVector::new(g, vec![p[0] * 0.5]).unwrap(),
                    classifier: ParamVector::new(c, p.clone()).unwrap(),
                },
            )
        })
        .collect()
}

fn sorted_column(pts: &[Vec<f64>], c: usize) -> Vec<f64> {
    let mut col: Vec<f64> = pts.iter().map(|p| p[c]).collect();
    col.sort_by(|a, b| a.partial_cmp(b).unwrap());
    col
}

fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, k).prop_map(|v| {
        let t: f64 = v.iter().sum::<f64>() + 1e-9;
        v.iter().map(|x| (x + 1e-9 / v.len() as f64) / t).collect()
    })
}

proptest! {
    #[test]
    fn coordinate_median_matches_sort_oracle(pts in points(7, 5)) {
        let got = coordinate_median(&pts);
        for (c, g) in got.iter().enumerate() {
            let col = sorted_column(&pts, c);
            let n = col.len();
            let want = if n % 2 == 1 { col[n / 2] } else { 0.5 * (col[n / 2 - 1] + col[n / 2]) };
            prop_assert_eq!(*g, want);
        }
    }

    #[test]
    fn trimmed_mean_matches_sort_oracle(pts in points(7, 5), b in 0.0..0.5f64) {
        let n = pts.len();
        let Ok(k) = trim_count(n, b) else { return Ok(()); };
        let got = coordinate_trimmed_mean(&pts, b).unwrap();
        for (c, g) in got.iter().enumerate() {
            let col = sorted_column(&pts, c);
            let mut acc = 0.0;
            for v in &col[k..n - k] {
                acc += v;
            }
            prop_assert_eq!(*g, acc / (n - 2 * k) as f64);
        }
    }

    #[test]
    fn geometric_median_beats_every_input(pts in points(9, 4)) {
        let tol = 1e-6;
        let y = weiszfeld(&pts, tol, 10_000).unwrap();
        let at_y = geometric_objective(&pts, &y);
        for p in &pts {
            prop_assert!(at_y <= geometric_objective(&pts, p) + tol * (1.0 + at_y));
        }
    }

    #[test]
    fn aggregators_ignore_client_order(pts in points(7, 4), sizes in prop::collection::vec(1usize..50, 7), rot in 0usize..7) {
        let n = pts.len();
        let sizes = &sizes[..n];
        let ups = uploads(&pts);
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let pts_p: Vec<Vec<f64>> = perm.iter().map(|&i| pts[i].clone()).collect();
        let ups_p = uploads(&pts_p);
        let sizes_p: Vec<usize> = perm.iter().map(|&i| sizes[i]).collect();

        prop_assert_eq!(baselines::fedavg(&ups, sizes).unwrap(), baselines::fedavg(&ups_p, &sizes_p).unwrap());
        prop_assert_eq!(baselines::coord_median(&ups).unwrap(), baselines::coord_median(&ups_p).unwrap());
        if n >= 3 {
            prop_assert_eq!(baselines::trimmed_mean(&ups, 0.2).unwrap(), baselines::trimmed_mean(&ups_p, 0.2).unwrap());
        }
        prop_assert_eq!(
            baselines::geometric_median(&ups, 1e-8, 500).unwrap(),
            baselines::geometric_median(&ups_p, 1e-8, 500).unwrap()
        );
    }

    #[test]
    fn cross_entropy_is_non_negative(logits in prop::collection::vec(-50.0..50.0f64, 2..12), pick in any::<prop::sample::Index>()) {
        let y = pick.index(logits.len());
        let (loss, grad) = softmax_cross_entropy(&logits, y).unwrap();
        prop_assert!(loss >= 0.0);
        prop_assert!(grad.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_cost_ln_k(k in 2usize..64, c in -100.0..100.0f64) {
        let (loss, _) = softmax_cross_entropy(&vec![c; k], k - 1).unwrap();
        prop_assert!((loss - (k as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn hellinger_is_symmetric_and_bounded(p in simplex(6), q in simplex(6)) {
        let a = hellinger(&p, &q).unwrap();
        prop_assert_eq!(a, hellinger(&q, &p).unwrap());
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(hellinger(&p, &p).unwrap() < 1e-7);
    }

    #[test]
    fn outlier_scores_stay_in_unit_interval(dists in prop::collection::vec(prop::collection::vec(simplex(3), 4), 2..6)) {
        let o = outlier_scores_from_dists(&dists).unwrap();
        prop_assert_eq!(o.len(), dists.len());
        prop_assert!(o.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
