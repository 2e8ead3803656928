use certainnet_core::decode::{class_uncertainty, decode_maps, DecodeConfig};
use certainnet_core::geometry::BBox;
use certainnet_core::grid::{ScalarGrid, VectorGrid};
use certainnet_core::metrics::{
    aupr_in, auroc, average_precision_from_hits, ece, iou, match_detections, ubq, uncertainty_error, GroundTruth,
};
use certainnet_core::model::{rbf_score, CentroidSet};
use certainnet_core::training::{anneal_length_scale, schedule_momentum, update_centroids};
use certainnet_core::Detection;
use proptest::prelude::*;

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0..50.0f64, 0.0..50.0f64, 0.0..30.0f64, 0.0..30.0f64).prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
}

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    prop::collection::vec((0u8..=20, any::<bool>()), 1..30)
        .prop_map(|v| v.into_iter().map(|(s, c)| (f64::from(s) / 20.0, c)).unzip())
}

proptest! {
    #[test]
    fn rbf_symmetric_bounded_and_monotone(
        z in prop::collection::vec(-2.0..2.0f64, 1..8),
        dir in prop::collection::vec(-1.0..1.0f64, 8),
        sigma in 0.05..2.0f64,
        t in 0.0..1.0f64,
    ) {
        let e: Vec<f64> = z.iter().zip(&dir).map(|(a, d)| a + d).collect();
        let s = rbf_score(&z, &e, sigma).unwrap();
        prop_assert_eq!(s, rbf_score(&e, &z, sigma).unwrap());
        prop_assert!(s > 0.0 && s <= 1.0);
        prop_assert_eq!(rbf_score(&z, &z, sigma).unwrap(), 1.0);
        // moving toward the centroid never lowers the score
        let closer: Vec<f64> = z.iter().zip(&e).map(|(a, b)| b + (a - b) * t).collect();
        prop_assert!(rbf_score(&closer, &e, sigma).unwrap() >= s);
        // a wider kernel never lowers the score
        prop_assert!(rbf_score(&z, &e, sigma * 1.5).unwrap() >= s);
    }

    #[test]
    fn iou_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let v = iou(&a, &b);
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&v));
        if a.area() > 0.0 {
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ubq_bounded_by_boundary_ratio(
        gt in bbox(),
        o in bbox(),
        shrink in (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64),
    ) {
        // an inner box nested inside the outer one
        let w = o.w * shrink.0;
        let h = o.h * shrink.1;
        let inner = BBox::new(o.x + (o.w - w) * shrink.2, o.y + (o.h - h) * shrink.3, w, h);
        let q = ubq(&gt, &inner, &o).unwrap();
        prop_assert!(q.ubq <= q.br + 1e-12);
        for v in [q.ubq, q.br, q.ibq, q.obq] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if gt.area() > 0.0 {
            let p = ubq(&gt, &gt, &gt).unwrap();
            prop_assert!((p.ubq - 1.0).abs() < 1e-12 && (p.br - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ranking_metrics_permutation_invariant((s, c) in scored(), rot in 0usize..30) {
        let k = rot % s.len();
        let mut s2 = s.clone();
        let mut c2 = c.clone();
        s2.rotate_left(k);
        c2.rotate_left(k);
        s2.reverse();
        c2.reverse();
        let n = c.iter().filter(|x| **x).count() + 1;
        prop_assert_eq!(aupr_in(&s, &c), aupr_in(&s2, &c2));
        prop_assert_eq!(auroc(&s, &c), auroc(&s2, &c2));
        prop_assert_eq!(
            average_precision_from_hits(&s, &c, n, false),
            average_precision_from_hits(&s2, &c2, n, false)
        );
        let e = ece(&s, &c, 10).unwrap();
        prop_assert!((e - ece(&s2, &c2, 10).unwrap()).abs() < 1e-9);
        prop_assert_eq!(uncertainty_error(&s, &c).unwrap(), uncertainty_error(&s2, &c2).unwrap());
    }

    #[test]
    fn ece_and_ue_are_percentages((s, c) in scored(), bins in 1usize..25) {
        let e = ece(&s, &c, bins).unwrap();
        prop_assert!((0.0..=100.0).contains(&e));
        let u = uncertainty_error(&s, &c).unwrap();
        prop_assert!((0.0..=100.0).contains(&u));
        // never worse than accepting everything or rejecting everything
        let nc = c.iter().filter(|x| **x).count();
        let nw = c.len() - nc;
        let (accept_all, reject_all) = match (nc, nw) {
            (0, _) => (100.0, 0.0),
            (_, 0) => (0.0, 100.0),
            _ => (50.0, 50.0),
        };
        prop_assert!(u <= f64::min(accept_all, reject_all) + 1e-12);
    }

    #[test]
    fn matching_invariants(
        boxes in prop::collection::vec((bbox(), 0usize..2, 0.0..1.0f64), 0..8),
        gts in prop::collection::vec((bbox(), 0usize..2), 0..8),
        thr in 0.1..0.9f64,
    ) {
        let gts: Vec<GroundTruth> = gts.into_iter().map(|(b, c)| GroundTruth { image_id: 0, class: c, bbox: b }).collect();
        let dets: Vec<Detection> = boxes
            .into_iter()
            .map(|(b, class, score)| Detection {
                image_id: 0, class, score, bbox: b, u_obj: 1.0 - score,
                u_x: 0.0, u_y: 0.0, u_w: 0.0, u_h: 0.0, u_cls: 0.0, inner_box: b, outer_box: b,
            })
            .collect();
        let m = match_detections(&dets, &gts, thr);
        let mut seen_g = std::collections::HashSet::new();
        let mut seen_d = std::collections::HashSet::new();
        for p in &m.pairs {
            prop_assert!(seen_g.insert(p.ground_truth));
            prop_assert!(seen_d.insert(p.detection));
            prop_assert!(p.iou >= thr);
            prop_assert_eq!(dets[p.detection].class, gts[p.ground_truth].class);
        }
        prop_assert_eq!(m.pairs.len() + m.false_negatives.len(), gts.len());
        prop_assert_eq!(m.pairs.len() + m.false_positives.len(), dets.len());
    }

    #[test]
    fn class_uncertainty_in_unit_interval(scores in prop::collection::vec(0.001..1.0f64, 1..6)) {
        let u = class_uncertainty(&scores).unwrap();
        prop_assert!((0.0..=1.0).contains(&u));
    }

    #[test]
    fn decode_output_is_well_formed(
        h in 3usize..10,
        w in 3usize..10,
        classes in 1usize..4,
        seed in any::<u64>(),
        eta in 1.0..8.0f64,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let heatmaps: Vec<ScalarGrid> = (0..classes)
            .map(|_| ScalarGrid::from_vec(h, w, (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap())
            .collect();
        let dims = VectorGrid::from_vec(2, h, w, (0..2 * h * w).map(|_| rng.random_range(1.0..30.0)).collect()).unwrap();
        let cfg = DecodeConfig { eta, ..DecodeConfig::default() };
        let dets = decode_maps(3, &heatmaps, &dims, 4, &cfg).unwrap();
        prop_assert_eq!(&dets, &decode_maps(3, &heatmaps, &dims, 4, &cfg).unwrap());
        for pair in dets.windows(2) {
            prop_assert!(pair[0].score >= pair[1].score);
        }
        for d in &dets {
            prop_assert!(d.score >= cfg.peak_threshold);
            prop_assert!((d.u_obj - (1.0 - d.score)).abs() < 1e-15);
            for u in [d.u_x, d.u_y, d.u_w, d.u_h] {
                prop_assert!(u >= 0.0 && u.is_finite());
            }
            prop_assert!((0.0..=1.0).contains(&d.u_cls));
            let (i, b, o) = (d.inner_box, d.bbox, d.outer_box);
            prop_assert!(o.x <= i.x + 1e-9 && o.y <= i.y + 1e-9);
            prop_assert!(i.right() <= o.right() + 1e-9 && i.bottom() <= o.bottom() + 1e-9);
            prop_assert!(o.w >= b.w - 1e-9 && i.w <= b.w + 1e-9);
        }
    }

    #[test]
    fn ema_stays_between_old_centroid_and_batch_mean(
        old in prop::collection::vec(-1.0..1.0f64, 3),
        emb in prop::collection::vec(-1.0..1.0f64, 3),
        gamma in 0.01..0.99f64,
    ) {
        let set = CentroidSet::new(vec![old.clone()], 10.0, gamma).unwrap();
        let e = VectorGrid::from_vec(3, 1, 1, emb.clone()).unwrap();
        let y = ScalarGrid::filled(1, 1, 1.0);
        let next = update_centroids(&set, &[e], &[y], 2.0, gamma, 10.0, true);
        for d in 0..3 {
            let expect = gamma * old[d] + (1.0 - gamma) * emb[d];
            prop_assert!((next.centroids[0][d] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn schedules_are_monotone(step in 0u64..20_000, epoch in 0usize..100) {
        let s0 = anneal_length_scale(step, 0.25, 0.999, 0.05);
        let s1 = anneal_length_scale(step + 1, 0.25, 0.999, 0.05);
        prop_assert!(s1 <= s0 && s1 >= 0.05);
        let table = [(0, 0.9), (5, 0.99), (20, 0.999), (60, 0.9999)];
        prop_assert!(schedule_momentum(epoch + 1, &table) >= schedule_momentum(epoch, &table));
    }
}
