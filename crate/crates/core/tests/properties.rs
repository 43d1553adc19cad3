use fundus_reg::crop::{compute_crop, extract, lift_to_full, lower_to_crop, OdEdgeRule, RoiBox, RoiLabel};
use fundus_reg::evaluation::{aggregate, auc, soft_dice, Classification, PairEvaluation, Thresholds};
use fundus_reg::fitting::{
    fit_homography_dlt, fit_polynomial, ransac_homography, Homography, Polynomial2D, RansacConfig, Transform,
};
use fundus_reg::keypoints::{
    detect_junctions, match_bruteforce, CorrespondenceSet, Descriptor, JunctionKind, Keypoint, PointPair,
};
use fundus_reg::raster::{dilate, erode, opening, ImageGrid, StructuringElement};
use fundus_reg::synth::{make_point_problem, make_problem, SynthConfig};
use fundus_reg::vessel::{skeletonize, Skeleton, VesselMap};
use fundus_reg::warp::{render_overlay, warp};
use nalgebra::Matrix3;
use proptest::prelude::*;

fn binary_image(w: usize, h: usize) -> impl Strategy<Value = ImageGrid> {
    prop::collection::vec(prop::bool::weighted(0.4), w * h).prop_map(move |bits| {
        ImageGrid::new(w, h, bits.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect()).unwrap()
    })
}

fn kp(x: f64, y: f64) -> Keypoint {
    Keypoint { x, y, kind: JunctionKind::Bifurcation, strength: 3.0 }
}

fn unit(v: Vec<f64>) -> Descriptor {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    Descriptor { vector: v.into_iter().map(|x| x / n).collect() }
}

fn features(n: usize) -> impl Strategy<Value = Vec<(Keypoint, Descriptor)>> {
    prop::collection::vec(prop::collection::vec(0.0f64..1.0, 8), 1..n).prop_map(|vs| {
        vs.into_iter().enumerate().map(|(i, v)| (kp(i as f64, 0.0), unit(v))).collect()
    })
}

fn pair_key(p: &PointPair) -> (i64, i64, i64, i64) {
    (p.src[0] as i64, p.src[1] as i64, p.tgt[0] as i64, p.tgt[1] as i64)
}

fn grid_points(n: usize, lo: f64, hi: f64) -> Vec<[f64; 2]> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).flat_map(|j| (0..n).map(move |i| [lo + i as f64 * step, lo + j as f64 * step])).collect()
}

fn evaluation(class: Classification, mee: f64) -> PairEvaluation {
    let failed = class == Classification::Failed;
    PairEvaluation {
        id: String::new(),
        mee: (!failed).then_some(mee),
        mae: (!failed).then_some(mee),
        classification: class,
        n_matches: 10,
        n_acceptable_matches: Some(5),
        dice_s: (!failed).then_some(0.5),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn opening_is_idempotent_and_between_erosion_and_input(img in binary_image(24, 24), r in 1usize..3) {
        let se = StructuringElement::square(r);
        let once = opening(&img, &se).unwrap();
        prop_assert_eq!(opening(&once, &se).unwrap(), once.clone());
        prop_assert!(once.le(&img));
        prop_assert!(erode(&img, &se).unwrap().le(&once));
        prop_assert!(img.le(&dilate(&img, &se).unwrap()));
    }

    #[test]
    fn skeleton_is_thin_subset_and_stable(img in binary_image(24, 24)) {
        let sk = skeletonize(&img).unwrap();
        prop_assert!(sk.grid.le(&img));
        prop_assert!(sk.grid.is_binary());
        prop_assert_eq!(skeletonize(&sk.grid).unwrap(), sk);
    }

    #[test]
    fn junctions_follow_translation(img in binary_image(20, 20), dx in 0usize..15, dy in 0usize..15) {
        let sk = skeletonize(&img).unwrap();
        let place = |ox: usize, oy: usize| {
            let mut g = ImageGrid::zeros(40, 40);
            g.paste(&sk.grid, ox + 2, oy + 2);
            detect_junctions(&Skeleton { grid: g }, 5.0)
        };
        let base = place(0, 0);
        let moved = place(dx, dy);
        prop_assert_eq!(base.len(), moved.len());
        for (a, b) in base.iter().zip(&moved) {
            prop_assert!((b.x - a.x - dx as f64).abs() < 1e-9 && (b.y - a.y - dy as f64).abs() < 1e-9);
            prop_assert_eq!(a.kind, b.kind);
        }
    }

    #[test]
    fn cross_checked_matching_is_symmetric(src in features(12), tgt in features(12), ratio in 0.5f64..1.0) {
        let tgt: Vec<_> = tgt.into_iter().map(|(k, d)| (kp(k.x, 100.0), d)).collect();
        let fwd = match_bruteforce(&src, &tgt, ratio, true).unwrap();
        let back = match_bruteforce(&tgt, &src, ratio, true).unwrap().swapped();
        let mut a: Vec<_> = fwd.pairs.iter().map(pair_key).collect();
        let mut b: Vec<_> = back.pairs.iter().map(pair_key).collect();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
        // every accepted match is the nearest target descriptor
        for p in &fwd.pairs {
            let d = &src[p.src[0] as usize].1;
            let chosen = tgt[p.tgt[0] as usize].1.distance(d);
            prop_assert!(tgt.iter().all(|(_, t)| t.distance(d) >= chosen));
        }
    }

    #[test]
    fn crop_window_lies_inside_the_image(
        mx in 50.0f64..950.0, my in 50.0f64..950.0,
        ox in 0.0f64..1000.0, oy in 0.0f64..1000.0, half in 0.0f64..60.0,
        w in 200usize..1200, h in 200usize..1200, along in any::<bool>(),
    ) {
        prop_assume!(mx < w as f64 && my < h as f64);
        let macula = RoiBox::new(RoiLabel::Macula, [mx - 10.0, my - 10.0, mx + 10.0, my + 10.0]);
        let od = RoiBox::new(RoiLabel::OpticDisc, [ox - half, oy - half, ox + half, oy + half]);
        let rule = if along { OdEdgeRule::AlongAxis } else { OdEdgeRule::FarthestCorner };
        let frame = compute_crop(&macula, &od, w, h, rule).unwrap();
        prop_assert!(frame.side >= 1 && frame.side <= w.min(h));
        prop_assert!(frame.origin[0] + frame.side <= w && frame.origin[1] + frame.side <= h);
        let img = ImageGrid::zeros(w, h);
        let sub = extract(&img, &frame).unwrap();
        prop_assert_eq!((sub.width(), sub.height()), (frame.side, frame.side));
        let p = [mx, my];
        prop_assert_eq!(lift_to_full(lower_to_crop(p, &frame), &frame), p);
    }

    #[test]
    fn auc_rises_when_an_error_shrinks(
        mees in prop::collection::vec(prop::option::weighted(0.8, 0.0f64..40.0), 1..30),
        idx in any::<prop::sample::Index>(), shrink in 0.0f64..1.0,
    ) {
        let before = auc(&mees, 25).unwrap();
        prop_assert!((0.0..=1.0).contains(&before));
        let mut better = mees.clone();
        let i = idx.index(better.len());
        better[i] = Some(better[i].map_or(0.0, |e| e * shrink));
        prop_assert!(auc(&better, 25).unwrap() >= before);
    }

    #[test]
    fn dice_is_symmetric_and_bounded(a in prop::collection::vec(0.0f64..1.0, 64), b in prop::collection::vec(0.0f64..1.0, 64)) {
        let a = VesselMap::unknown(ImageGrid::new(8, 8, a).unwrap());
        let b = VesselMap::unknown(ImageGrid::new(8, 8, b).unwrap());
        let ab = soft_dice(&a, &b).unwrap();
        prop_assert_eq!(ab, soft_dice(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn class_rates_sum_to_one(classes in prop::collection::vec(0u8..3, 1..40), mee in 0.0f64..60.0) {
        let pairs: Vec<_> = classes
            .iter()
            .map(|c| evaluation([Classification::Failed, Classification::Inaccurate, Classification::Acceptable][*c as usize], mee))
            .collect();
        let r = aggregate(&pairs, &Thresholds::default()).unwrap();
        prop_assert!((r.failed_rate + r.inaccurate_rate + r.acceptable_rate - 1.0).abs() < 1e-12);
        prop_assert_eq!(r.dice_excluded, classes.iter().filter(|&&c| c == 0).count());
    }

    #[test]
    fn polynomial_fit_reproduces_its_generator(n in 1usize..5, coeffs in prop::collection::vec(-1.0f64..1.0, 30)) {
        let k = (n + 1) * (n + 2) / 2;
        let mut poly = Polynomial2D::identity(n);
        let mut c = coeffs.iter();
        for t in 0..=n {
            for j in 0..=t {
                let i = t - j;
                // scale so each term moves at most a few pixels across 0..200
                let s = 4.0 * 200f64.powi(1 - (i + j) as i32);
                poly.set_a(i, j, poly.a_ij(i, j) + s * c.next().unwrap_or(&0.0));
                poly.set_b(i, j, poly.b_ij(i, j) + s * c.next().unwrap_or(&0.0));
            }
        }
        let src = grid_points(n + 4, 0.0, 200.0);
        prop_assert!(src.len() >= k);
        let tgt: Vec<_> = src.iter().map(|&p| poly.apply(p)).collect();
        let fit = fit_polynomial(&CorrespondenceSet::from_points(&src, &tgt).unwrap(), n).unwrap();
        for p in grid_points(7, 10.0, 190.0) {
            let (a, b) = (fit.apply(p), poly.apply(p));
            prop_assert!((a[0] - b[0]).abs() < 1e-6 && (a[1] - b[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn higher_degree_never_fits_worse(noise in prop::collection::vec(-3.0f64..3.0, 72)) {
        let src = grid_points(6, 0.0, 300.0);
        let tgt: Vec<_> = src.iter().enumerate().map(|(i, p)| [p[0] + noise[2 * i], p[1] + noise[2 * i + 1]]).collect();
        let set = CorrespondenceSet::from_points(&src, &tgt).unwrap();
        let residual = |n: usize| {
            let f = fit_polynomial(&set, n).unwrap();
            set.pairs.iter().map(|p| {
                let q = f.apply(p.src);
                (q[0] - p.tgt[0]).powi(2) + (q[1] - p.tgt[1]).powi(2)
            }).sum::<f64>()
        };
        let r: Vec<f64> = (1..=4).map(residual).collect();
        for w in r.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-6);
        }
    }

    #[test]
    fn dlt_recovers_a_planted_homography(
        a in 0.8f64..1.2, b in -0.2f64..0.2, c in -50.0f64..50.0,
        d in -0.2f64..0.2, e in 0.8f64..1.2, f in -50.0f64..50.0,
        g in -2e-4f64..2e-4, h in -2e-4f64..2e-4,
    ) {
        let truth = Homography::from_matrix(Matrix3::new(a, b, c, d, e, f, g, h, 1.0)).unwrap();
        let src = grid_points(4, 0.0, 400.0);
        let tgt: Vec<_> = src.iter().map(|&p| truth.apply(p).unwrap()).collect();
        let est = fit_homography_dlt(&CorrespondenceSet::from_points(&src, &tgt).unwrap()).unwrap();
        for p in grid_points(5, 0.0, 400.0) {
            let (u, v) = (est.apply(p).unwrap(), truth.apply(p).unwrap());
            prop_assert!((u[0] - v[0]).hypot(u[1] - v[1]) < 1e-6);
        }
    }

    #[test]
    fn warp_by_integer_shift_moves_pixels(img in binary_image(16, 16), dx in -4i32..5, dy in -4i32..5) {
        let inv = Transform::homography(Homography::translation(-dx as f64, -dy as f64));
        let out = warp(&img, &inv, 16, 16).unwrap().image;
        for y in 0..16i32 {
            for x in 0..16i32 {
                let expect = img.get_checked((x - dx) as isize, (y - dy) as isize).unwrap_or(0.0);
                prop_assert_eq!(out.get(x as usize, y as usize), expect);
            }
        }
    }

    #[test]
    fn overlay_swaps_channels_with_inputs(a in binary_image(8, 8), b in binary_image(8, 8)) {
        let ab = render_overlay(&a, &b).unwrap();
        let ba = render_overlay(&b, &a).unwrap();
        for (p, q) in ab.rgb.iter().zip(&ba.rgb) {
            prop_assert_eq!([p[1], p[0], p[2]], *q);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn ransac_is_deterministic_per_seed(seed in any::<u64>(), cfg_seed in any::<u64>()) {
        let problem = make_point_problem(&SynthConfig {
            seed,
            transform_kind: fundus_reg::synth::TransformKind::Homography,
            outlier_fraction: 0.3,
            ..SynthConfig::default()
        }).unwrap();
        let cfg = RansacConfig { seed: cfg_seed, ..RansacConfig::default() };
        let a = ransac_homography(&problem.correspondences, &cfg).unwrap();
        let b = ransac_homography(&problem.correspondences, &cfg).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn synthetic_noise_stays_within_three_sigma() {
    let sigma = 2.0;
    for seed in 0..100 {
        let p = make_point_problem(&SynthConfig { seed, noise_sigma: sigma, outlier_fraction: 0.1, ..SynthConfig::default() })
            .unwrap();
        for (pair, &outlier) in p.correspondences.pairs.iter().zip(&p.outlier_mask) {
            if outlier {
                continue;
            }
            let q = p.gt_transform.eval(pair.src).unwrap();
            assert!((q[0] - pair.tgt[0]).hypot(q[1] - pair.tgt[1]) <= 3.0 * sigma + 1e-9, "seed {seed}");
        }
    }
}

#[test]
fn default_synthetic_sources_have_enough_junctions() {
    for seed in 0..3 {
        let p = make_problem(&SynthConfig { seed, ..SynthConfig::default() }).unwrap();
        let sk = skeletonize(&fundus_reg::raster::binarize(&p.source_img, 0.5)).unwrap();
        let n = detect_junctions(&sk, 5.0).len();
        assert!(n >= 20, "seed {seed}: {n} junctions");
    }
}
