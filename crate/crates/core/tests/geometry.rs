use dbdh_core::distortion::{sample_perspective, sample_rng};
use dbdh_core::geometry::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Point = [f64; 2];

fn convex_quad(rng: &mut ChaCha8Rng, frame: f64) -> Quadrilateral {
    loop {
        let c = [rng.random_range(60.0..frame - 60.0), rng.random_range(60.0..frame - 60.0)];
        let base: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let points: [Point; 4] = std::array::from_fn(|k| {
            let t = base + k as f64 * std::f64::consts::FRAC_PI_2 + rng.random_range(-0.5..0.5);
            let r = rng.random_range(30.0..55.0);
            [c[0] + r * t.cos(), c[1] + r * t.sin()]
        });
        let q = Quadrilateral::new(points);
        if q.is_convex() {
            return q;
        }
    }
}

fn max_residual(h: &Homography, src: &[Point; 4], dst: &[Point; 4]) -> f64 {
    src.iter()
        .zip(dst)
        .map(|(s, d)| {
            let p = h.apply(*s);
            (p[0] - d[0]).abs().max((p[1] - d[1]).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn analytic_iou_matches_supersampled_raster() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut overlapping = 0;
    for _ in 0..1000 {
        let a = convex_quad(&mut rng, 256.0);
        let b = convex_quad(&mut rng, 256.0);
        let exact = quad_iou(&a, &b);
        assert_eq!(exact.method, IouMethod::Exact);
        let raster = rasterized_iou(&a.points, &b.points, 4);
        assert!((exact.iou - raster).abs() < 1e-3, "{} vs {raster}", exact.iou);
        overlapping += (exact.iou > 0.0) as usize;
    }
    assert!(overlapping > 300);
}

#[test]
fn shifted_square_is_one_third() {
    let a = Quadrilateral::new([[10.0, 10.0], [30.0, 10.0], [30.0, 30.0], [10.0, 30.0]]);
    let b = Quadrilateral::new([[20.0, 10.0], [40.0, 10.0], [40.0, 30.0], [20.0, 30.0]]);
    assert!((quad_iou(&a, &b).iou - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn homography_four_point_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..1000 {
        let src = convex_quad(&mut rng, 256.0).points;
        let dst = convex_quad(&mut rng, 256.0).points;
        let h = estimate_homography(&src, &dst).unwrap();
        assert_eq!(h.matrix[2][2], 1.0);
        assert!(max_residual(&h, &src, &dst) < 1e-9);
        let inv = h.inverse().unwrap();
        assert!(max_residual(&inv, &dst, &src) < 1e-9);
    }
}

#[test]
fn homography_group_property() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..500 {
        let [a, b, c] = std::array::from_fn(|_| convex_quad(&mut rng, 256.0).points);
        let ab = estimate_homography(&a, &b).unwrap();
        let bc = estimate_homography(&b, &c).unwrap();
        let ac = estimate_homography(&a, &c).unwrap();
        let chained = bc.compose(&ab).unwrap();
        for r in 0..3 {
            for k in 0..3 {
                assert!((chained.matrix[r][k] - ac.matrix[r][k]).abs() < 1e-7 * (1.0 + ac.matrix[r][k].abs()));
            }
        }
        assert!(max_residual(&chained, &a, &c) < 1e-7);
    }
}

#[test]
fn warp_unwarp_round_trip() {
    for i in 0..1000 {
        let mut rng = sample_rng(3, 0, i);
        let hs = sample_perspective((256, 256), 0.3, &mut rng).unwrap();
        let inv = hs.matrix.inverse().unwrap();
        for _ in 0..4 {
            let p = [rng.random_range(0.0..256.0), rng.random_range(0.0..256.0)];
            let q = inv.apply(hs.matrix.apply(p));
            assert!((p[0] - q[0]).abs() < 1e-6 && (p[1] - q[1]).abs() < 1e-6);
        }
        let corners = rect_corners(256, 256);
        for (k, c) in corners.iter().enumerate() {
            let m = hs.matrix.apply(*c);
            assert!((m[0] - c[0] - hs.corner_offsets[k][0]).abs() < 1e-9);
            assert!((m[1] - c[1] - hs.corner_offsets[k][1]).abs() < 1e-9);
        }
    }
}

#[test]
fn zero_scale_is_identity() {
    let hs = sample_perspective((64, 80), 0.0, &mut sample_rng(0, 0, 0)).unwrap();
    let id = Homography::identity();
    for r in 0..3 {
        for c in 0..3 {
            assert!((hs.matrix.matrix[r][c] - id.matrix[r][c]).abs() < 1e-12);
        }
    }
}

#[test]
fn vertex_distances() {
    let a = VertexSet::rect(0.0, 0.0, 10.0, 10.0, (20, 20)).unwrap();
    let b = VertexSet::rect(3.0, 4.0, 13.0, 14.0, (20, 20)).unwrap();
    assert_eq!(a.max_distance(&b), 5.0);
    assert_eq!(a.mean_distance(&b), 5.0);
    assert!(VertexSet::rect(0.0, 0.0, 20.0, 5.0, (20, 20)).is_err());
    assert_eq!(CORNER_ORDER, "TL,TR,BR,BL");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn iou_symmetric_and_bounded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = convex_quad(&mut rng, 256.0);
        let b = convex_quad(&mut rng, 256.0);
        let (ab, ba) = (quad_iou(&a, &b).iou, quad_iou(&b, &a).iou);
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((quad_iou(&a, &a).iou - 1.0).abs() < 1e-12);
    }

    #[test]
    fn iou_invariant_under_translation(seed in any::<u64>(), dx in -20.0f64..20.0, dy in -20.0f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = convex_quad(&mut rng, 256.0);
        let b = convex_quad(&mut rng, 256.0);
        let t = Homography::translation(dx, dy);
        let (ta, tb) = (Quadrilateral::new(a.points.map(|p| t.apply(p))), Quadrilateral::new(b.points.map(|p| t.apply(p))));
        prop_assert!((quad_iou(&a, &b).iou - quad_iou(&ta, &tb).iou).abs() < 1e-9);
    }
}
