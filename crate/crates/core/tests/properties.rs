use std::path::Path;

use proptest::prelude::*;
use sainet::config::RunConfig;
use sainet::dataio::{read_pfm_bytes, write_pfm_bytes};
use sainet::imageproc::{psnr, ssim, warp_by_disparity, WarpDirection};
use sainet::losses::{disparity_loss, ncc, DisparityLossConfig};
use sainet::metrics::{disp_e, DispEConfig, Scope};
use sainet::{BinaryMask, DisparityMap, ImageBuffer, Tensor};

fn image(h: usize, w: usize, c: usize) -> impl Strategy<Value = ImageBuffer> {
    prop::collection::vec(0.0f64..=1.0, h * w * c).prop_map(move |v| ImageBuffer::new(h, w, c, v).unwrap())
}

fn mask(h: usize, w: usize) -> impl Strategy<Value = BinaryMask> {
    prop::collection::vec(any::<bool>(), h * w).prop_map(move |b| BinaryMask::from_fn(h, w, |x, y| b[y * w + x]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ncc_lies_in_unit_interval(
        pair in (1usize..40).prop_flat_map(|n| (
            prop::collection::vec(-1e3f64..1e3, n),
            prop::collection::vec(-1e3f64..1e3, n),
        )),
        zero_x in any::<bool>(),
    ) {
        let (mut a, b) = pair;
        if zero_x {
            a.iter_mut().for_each(|v| *v = 0.0);
        }
        let n = a.len();
        let phi = ncc(&Tensor::new(a, &[n]).unwrap(), &Tensor::new(b, &[n]).unwrap()).unwrap().item();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&phi), "phi = {phi}");
    }

    #[test]
    fn disparity_loss_lies_in_unit_interval(
        left in image(12, 16, 3),
        right in image(12, 16, 3),
        s in mask(12, 16),
        d in prop::collection::vec(0.0f64..6.0, 12 * 16),
    ) {
        let disp = DisparityMap::new(12, 16, d).unwrap();
        let (l, stats) =
            disparity_loss(&left.to_tensor(), 0, &right, &s, &disp, &DisparityLossConfig::default()).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&l.item()), "loss = {}", l.item());
        prop_assert!(stats.used + stats.skipped <= s.count());
    }

    #[test]
    fn pfm_round_trips_bitwise(
        dims in (1usize..9, 1usize..9),
        seed in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 64),
    ) {
        let (h, w) = dims;
        let values: Vec<f64> = seed.iter().cycle().take(h * w).map(|&v| v as f64).collect();
        let map = DisparityMap::new(h, w, values).unwrap();
        let back = read_pfm_bytes(&write_pfm_bytes(&map).unwrap()).unwrap();
        prop_assert_eq!((back.height, back.width), (h, w));
        for (a, b) in map.values.iter().zip(&back.values) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn disp_e_is_a_percentage_and_partitions_pixels(
        est in prop::collection::vec(-5.0f64..50.0, 48),
        gt in prop::collection::vec(prop_oneof![Just(f64::NAN), -5.0f64..50.0], 48),
    ) {
        let est = DisparityMap::new(6, 8, est).unwrap();
        let gt = DisparityMap::new(6, 8, gt).unwrap();
        let r = disp_e(&est, &gt, &DispEConfig::default()).unwrap();
        prop_assert_eq!(r.evaluated + r.excluded, 48);
        prop_assert!((0.0..=100.0).contains(&r.percent));
        let own = disp_e(&gt, &gt, &DispEConfig::default()).unwrap();
        prop_assert_eq!(own.percent, 0.0);
    }

    #[test]
    fn quality_metrics_are_symmetric_and_bounded(a in image(12, 12, 3), b in image(12, 12, 3)) {
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        let s = ssim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        prop_assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn zero_disparity_warp_is_identity(img in image(5, 7, 3)) {
        let warped = warp_by_disparity(&img, &DisparityMap::constant(5, 7, 0.0), WarpDirection::RightToLeft).unwrap();
        prop_assert_eq!(warped.image, img);
        prop_assert_eq!(warped.valid.count(), 35);
    }

    #[test]
    fn mask_set_algebra(a in mask(6, 9), b in mask(6, 9)) {
        prop_assert_eq!(a.union(&b).count() + a.intersection(&b).count(), a.count() + b.count());
        prop_assert!(a.is_disjoint(&a.invert()));
        prop_assert_eq!(a.invert().invert(), a.clone());
        prop_assert_eq!(a.is_disjoint(&b), a.intersection(&b).is_empty());
    }

    #[test]
    fn config_round_trips(
        seed in any::<u64>(),
        lr in 0.0f64..1.0,
        depth in 1usize..5,
        mult in 1usize..8,
        synthesis_only in any::<bool>(),
    ) {
        let mut cfg = RunConfig { seed, learning_rate: lr, ..Default::default() };
        cfg.network.depth = depth;
        cfg.crop_size = mult << depth;
        cfg.eval.scope = if synthesis_only { Scope::Synthesis } else { Scope::Full };
        let text = cfg.to_toml_string().unwrap();
        prop_assert_eq!(RunConfig::from_toml_str(&text, Path::new("p.toml")).unwrap(), cfg);
    }
}
