use dbdh_core::geometry::{decode_vertices, VertexSet};
use dbdh_core::supervision::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn naive_focal(pred: &[f64], gt: &[f64], alpha: f64, beta: f64) -> f64 {
    let mut loss = 0.0;
    for c in 0..4 {
        for i in 0..8 {
            for j in 0..8 {
                let k = (c * 8 + i) * 8 + j;
                let p = pred[k].clamp(1e-6, 1.0 - 1e-6);
                let y = gt[k];
                if y == 1.0 {
                    loss += -(1.0 - p).powf(alpha) * p.ln();
                } else {
                    loss += -(1.0 - y).powf(beta) * p.powf(alpha) * (1.0 - p).ln();
                }
            }
        }
    }
    loss
}

fn naive_bce(pred: &[f64], gt: &[f64]) -> f64 {
    let mut loss = 0.0;
    for i in 0..8 {
        for j in 0..8 {
            let p = pred[i * 8 + j].clamp(1e-6, 1.0 - 1e-6);
            let m = gt[i * 8 + j];
            loss += -(m * p.ln() + (1.0 - m) * (1.0 - p).ln());
        }
    }
    loss / 64.0
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn random_heatmap(rng: &mut ChaCha8Rng) -> Heatmap {
    let points = std::array::from_fn(|_| [rng.random_range(0.0..7.99), rng.random_range(0.0..7.99)]);
    let v = VertexSet::new(points, (8, 8)).unwrap();
    render_heatmaps(&v, (8, 8), rng.random_range(0.5..3.0)).unwrap()
}

#[test]
fn focal_matches_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let gt = random_heatmap(&mut rng);
        let pred: Vec<f64> = (0..256).map(|_| rng.random::<f64>()).collect();
        let got = focal_heatmap_loss(&pred, &gt, 2.0, 4.0).unwrap();
        let want = naive_focal(&pred, &gt.data, 2.0, 4.0);
        assert!(rel(got, want) < 1e-6, "{got} vs {want}");
        let pred32: Vec<f32> = pred.iter().map(|&p| p as f32).collect();
        let want32 = naive_focal(&pred32.iter().map(|&p| p as f64).collect::<Vec<_>>(), &gt.data, 2.0, 4.0);
        assert!(rel(focal_heatmap_loss(&pred32, &gt, 2.0, 4.0).unwrap(), want32) < 1e-6);
    }
}

#[test]
fn bce_matches_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let data: Vec<f64> = (0..64).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
        let gt = RegionMask {
            height: 8,
            width: 8,
            data,
        };
        let pred: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
        let got = bce_mask_loss(&pred, &gt).unwrap();
        let want = naive_bce(&pred, &gt.data);
        assert!(rel(got, want) < 1e-6, "{got} vs {want}");
    }
}

fn one_pixel(g: f64) -> Heatmap {
    Heatmap {
        height: 1,
        width: 1,
        sigma: 1.0,
        data: vec![g],
    }
}

fn sig5(a: f64, b: f64) -> bool {
    format!("{a:.4e}") == format!("{b:.4e}")
}

#[test]
fn scalar_examples() {
    let a = focal_heatmap_loss(&[0.9f64], &one_pixel(1.0), 2.0, 4.0).unwrap();
    assert!(sig5(a, 1.0536e-3), "{a}");
    let b = focal_heatmap_loss(&[0.2f64], &one_pixel(0.5), 2.0, 4.0).unwrap();
    assert!(sig5(b, 5.5786e-4), "{b}");
    let mask = RegionMask {
        height: 2,
        width: 2,
        data: vec![1.0, 0.0, 0.0, 1.0],
    };
    let c = bce_mask_loss(&[0.5f64; 4], &mask).unwrap();
    assert!(sig5(c, std::f64::consts::LN_2), "{c}");
    let ones = RegionMask {
        height: 1,
        width: 2,
        data: vec![1.0, 1.0],
    };
    assert!((bce_mask_loss(&[0.25f64; 2], &ones).unwrap() - 1.386294).abs() < 1e-6);
    assert!(bce_mask_loss(&ones.data, &ones).unwrap() <= 1e-5);
}

#[test]
fn total_loss_examples() {
    let w = LossWeights::default();
    assert_eq!((w.lambda_det, w.lambda_seg), (1.0, 10.0));
    assert!((total_loss(0.5, 0.03, &w) - 0.8).abs() < 1e-12);
    assert_eq!(total_loss(0.7, 0.0, &w), 0.7);
}

#[test]
fn saturated_predictions_stay_finite() {
    let gt = one_pixel(0.0);
    assert!(focal_heatmap_loss(&[1.0f64], &gt, 2.0, 4.0).unwrap().is_finite());
    assert!(focal_heatmap_loss(&[0.0f64], &one_pixel(1.0), 2.0, 4.0).unwrap().is_finite());
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let gt = random_heatmap(&mut rng);
    let logits: Vec<f64> = (0..256).map(|_| rng.random_range(-3.0..3.0)).collect();
    let pred: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let mut grad = vec![0.0; 256];
    focal_heatmap_loss_grad(&pred, &gt.data, 2.0, 4.0, 1.0, &mut grad);
    let mask: Vec<f64> = (0..64).map(|i| (i % 3 == 0) as u8 as f64).collect();
    let mut mgrad = vec![0.0; 64];
    bce_mask_loss_grad(&pred[..64], &mask, 1.0, &mut mgrad);
    let eps = 1e-5;
    for k in (0..256).step_by(17) {
        let f = |d: f64| {
            let mut p = pred.clone();
            p[k] = sigmoid(logits[k] + d);
            focal_heatmap_loss(&p, &gt, 2.0, 4.0).unwrap()
        };
        let fd = (f(eps) - f(-eps)) / (2.0 * eps);
        assert!((fd - grad[k]).abs() < 1e-5 * (1.0 + fd.abs()), "focal {k}: {fd} vs {}", grad[k]);
    }
    let m = RegionMask {
        height: 8,
        width: 8,
        data: mask,
    };
    for k in (0..64).step_by(7) {
        let f = |d: f64| {
            let mut p = pred[..64].to_vec();
            p[k] = sigmoid(logits[k] + d);
            bce_mask_loss(&p, &m).unwrap()
        };
        let fd = (f(eps) - f(-eps)) / (2.0 * eps);
        assert!((fd - mgrad[k]).abs() < 1e-7, "bce {k}: {fd} vs {}", mgrad[k]);
    }
}

fn spread_vertices(rng: &mut ChaCha8Rng, frame: (usize, usize)) -> VertexSet {
    loop {
        let points: [[f64; 2]; 4] = std::array::from_fn(|_| {
            [rng.random_range(0.0..frame.1 as f64 - 0.5), rng.random_range(0.0..frame.0 as f64 - 0.5)]
        });
        let apart = (0..4).all(|i| {
            (i + 1..4).all(|j| ((points[i][0] - points[j][0]).powi(2) + (points[i][1] - points[j][1]).powi(2)).sqrt() >= 20.0)
        });
        if apart {
            return VertexSet::new(points, frame).unwrap();
        }
    }
}

#[test]
fn render_then_decode_is_nearest_integer() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let frame = (96, 128);
    for _ in 0..1000 {
        let v = spread_vertices(&mut rng, frame);
        let hm = render_heatmaps(&v, frame, DEFAULT_SIGMA).unwrap();
        let planes: Vec<f32> = hm.data.iter().map(|&x| x as f32).collect();
        let got = decode_vertices(&planes, frame.0, frame.1).unwrap();
        for (g, r) in got.points.iter().zip(v.rounded()) {
            assert_eq!([g[0] as i64, g[1] as i64], r);
        }
    }
}

#[test]
fn value_at_radius_sigma() {
    let v = VertexSet::rect(10.0, 20.0, 40.0, 50.0, (64, 64)).unwrap();
    let hm = render_heatmaps(&v, (64, 64), 5.0).unwrap();
    let e = (-0.5f64).exp();
    assert!((hm.at(0, 20, 15) - e).abs() < 1e-9);
    assert!((hm.at(0, 25, 10) - e).abs() < 1e-9);
    assert!((hm.at(2, 45, 40) - e).abs() < 1e-9);
    assert!((hm.at(3, 50, 15) - e).abs() < 1e-9);
    for c in 0..4 {
        assert_eq!(hm.channel(c).iter().filter(|&&x| x == 1.0).count(), 1);
    }
}

#[test]
fn mask_rule_and_errors() {
    let v = VertexSet::rect(2.0, 2.0, 6.0, 5.0, (8, 8)).unwrap();
    let m = render_mask(&v, (8, 8)).unwrap();
    assert!(m.sum() >= 12.0 && m.sum() <= 20.0);
    assert_eq!(m.at(3, 3), 1.0);
    assert_eq!(m.at(0, 0), 0.0);
    assert!(render_heatmaps(&v, (4, 4), 5.0).is_err());
    assert!(render_heatmaps(&v, (8, 8), 0.0).is_err());
    assert!(focal_heatmap_loss(&[0.5f64; 3], &one_pixel(1.0), 2.0, 4.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_non_negative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = random_heatmap(&mut rng);
        let pred: Vec<f64> = (0..256).map(|_| rng.random::<f64>()).collect();
        prop_assert!(focal_heatmap_loss(&pred, &gt, 2.0, 4.0).unwrap() >= 0.0);
        let mask = RegionMask { height: 8, width: 8, data: (0..64).map(|i| (i % 2) as f64).collect() };
        prop_assert!(bce_mask_loss(&pred[..64], &mask).unwrap() >= 0.0);
    }

    #[test]
    fn heatmaps_bounded(x in 0.0f64..31.0, y in 0.0f64..31.0, sigma in 0.5f64..8.0) {
        let v = VertexSet::new([[x, y]; 4], (32, 32)).unwrap();
        let hm = render_heatmaps(&v, (32, 32), sigma).unwrap();
        prop_assert!(hm.data.iter().all(|&h| (0.0..=1.0).contains(&h)));
    }
}
