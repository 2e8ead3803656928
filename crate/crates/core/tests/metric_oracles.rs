mod support;

use certainnet_core::geometry::BBox;
use certainnet_core::metrics::{
    aupr_in, aupr_out, auroc, average_precision, average_precision_from_hits, ece, match_detections,
    uncertainty_error, GroundTruth,
};
use certainnet_core::Detection;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::oracles;

const EXACT: f64 = 1e-9;

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= EXACT,
        (None, None) => true,
        _ => false,
    }
}

/// Scores on a coarse grid so ties occur often.
fn sample(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(1..=10);
    let s = (0..n).map(|_| rng.random_range(0..=10) as f64 / 10.0).collect();
    let c = (0..n).map(|_| rng.random_bool(0.5)).collect();
    (s, c)
}

#[test]
fn ranking_metrics_match_threshold_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..2000 {
        let (s, c) = sample(&mut rng);
        assert!(close(aupr_in(&s, &c), oracles::aupr_in(&s, &c)), "{s:?} {c:?}");
        assert!(close(aupr_out(&s, &c), oracles::aupr_out(&s, &c)), "{s:?} {c:?}");
        assert!(close(auroc(&s, &c), oracles::auroc(&s, &c)), "{s:?} {c:?}");
        let extra = rng.random_range(0..3);
        let n_gt = c.iter().filter(|x| **x).count() + extra;
        let lib = average_precision_from_hits(&s, &c, n_gt, false);
        assert!(close(lib, oracles::ap(&s, &c, n_gt)), "{s:?} {c:?} {n_gt}");
    }
}

#[test]
fn ece_and_ue_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..2000 {
        let (s, c) = sample(&mut rng);
        let bins = rng.random_range(1..=12);
        assert!((ece(&s, &c, bins).unwrap() - oracles::ece(&s, &c, bins)).abs() <= EXACT, "{s:?} {c:?} {bins}");
        assert!((uncertainty_error(&s, &c).unwrap() - oracles::ue(&s, &c)).abs() <= EXACT, "{s:?} {c:?}");
    }
}

#[test]
fn ece_bins_on_exact_edges() {
    // 0.3 * 10 and 0.7 * 10 both round above the integer
    for s in [0.1, 0.3, 0.6, 0.7, 0.9, 1.0, 0.0] {
        for bins in 1..=20 {
            let got = ece(&[s], &[true], bins).unwrap();
            assert!((got - oracles::ece(&[s], &[true], bins)).abs() <= EXACT, "{s} {bins}");
        }
    }
}

#[test]
fn continuous_scores_match_too() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..500 {
        let n = rng.random_range(2..=10);
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let c: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        assert!(close(auroc(&s, &c), oracles::auroc(&s, &c)));
        assert!((ece(&s, &c, 10).unwrap() - oracles::ece(&s, &c, 10)).abs() <= EXACT);
        assert!((uncertainty_error(&s, &c).unwrap() - oracles::ue(&s, &c)).abs() <= EXACT);
    }
}

fn det(image_id: u64, class: usize, score: f64, b: BBox) -> Detection {
    Detection {
        image_id,
        class,
        score,
        bbox: b,
        u_obj: 1.0 - score,
        u_x: 0.0,
        u_y: 0.0,
        u_w: 0.0,
        u_h: 0.0,
        u_cls: 0.0,
        inner_box: b,
        outer_box: b,
    }
}

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    BBox::new(rng.random_range(0.0..20.0), rng.random_range(0.0..20.0), rng.random_range(2.0..12.0), rng.random_range(2.0..12.0))
}

#[test]
fn matching_agrees_with_brute_force_greedy() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..3000 {
        let gts: Vec<GroundTruth> = (0..rng.random_range(0..=5))
            .map(|_| GroundTruth { image_id: rng.random_range(0..2), class: rng.random_range(0..2), bbox: random_box(&mut rng) })
            .collect();
        let dets: Vec<Detection> = (0..rng.random_range(0..=5))
            .map(|_| {
                let b = match gts.get(rng.random_range(0..6)) {
                    // jitter a ground-truth box so matches are common
                    Some(g) => BBox::new(g.bbox.x + rng.random_range(-2.0..2.0), g.bbox.y, g.bbox.w, g.bbox.h + rng.random_range(-1.0..1.0)),
                    None => random_box(&mut rng),
                };
                det(rng.random_range(0..2), rng.random_range(0..2), rng.random_range(0.0..1.0), b)
            })
            .collect();
        let thr = [0.3, 0.5, 0.7][rng.random_range(0..3)];
        let m = match_detections(&dets, &gts, thr);
        let oracle = oracles::greedy_match(&dets, &gts, thr);
        assert_eq!(m.true_positives(), oracle.iter().flatten().count());
        for p in &m.pairs {
            assert_eq!(oracle[p.detection], Some(p.ground_truth));
            assert!(p.iou >= thr);
        }
        assert_eq!(m.pairs.len() + m.false_positives.len(), dets.len());
        assert_eq!(m.pairs.len() + m.false_negatives.len(), gts.len());

        // AP through the public entry point equals the per-class oracle mean
        let mut per_class = Vec::new();
        for class in 0..2 {
            let n_gt = gts.iter().filter(|g| g.class == class).count();
            let idx: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].class == class).collect();
            let s: Vec<f64> = idx.iter().map(|&i| dets[i].score).collect();
            let h: Vec<bool> = idx.iter().map(|&i| oracle[i].is_some()).collect();
            per_class.extend(oracles::ap(&s, &h, n_gt));
        }
        let expect = (!per_class.is_empty()).then(|| per_class.iter().sum::<f64>() / per_class.len() as f64);
        assert!(close(average_precision(&dets, &gts, thr, false), expect));
    }
}

#[test]
fn monotone_transforms_leave_rankings_alone() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let transforms: [fn(f64) -> f64; 3] = [|s| s * s * s, |s| (3.0 * s).exp(), |s| 0.2 + 0.5 * s];
    for _ in 0..1000 {
        let (s, c) = sample(&mut rng);
        let n_gt = c.iter().filter(|x| **x).count() + 1;
        for f in transforms {
            let t: Vec<f64> = s.iter().map(|&x| f(x)).collect();
            assert!(close(aupr_in(&s, &c), aupr_in(&t, &c)));
            assert!(close(aupr_out(&s, &c), aupr_out(&t, &c)));
            assert!(close(auroc(&s, &c), auroc(&t, &c)));
            assert!(close(
                average_precision_from_hits(&s, &c, n_gt, false),
                average_precision_from_hits(&t, &c, n_gt, false)
            ));
        }
    }
}
