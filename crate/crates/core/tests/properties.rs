use approx::assert_relative_eq;
use facegen_core::data::{decode_ppm, encode_ppm};
use facegen_core::generate::{blur, jitter};
use facegen_core::nn::softmax;
use facegen_core::tensor::axpy_norms;
use facegen_core::Tensor;
use proptest::prelude::*;

fn image(max_side: usize) -> impl Strategy<Value = Tensor> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(h, w)| {
        prop::collection::vec(0.0..=1.0f64, 3 * h * w)
            .prop_map(move |data| Tensor::from_vec(&[3, h, w], data).unwrap())
    })
}

fn pair(max_len: usize) -> impl Strategy<Value = (Tensor, Tensor)> {
    (1..=max_len).prop_flat_map(|n| {
        (
            prop::collection::vec(-10.0..10.0f64, n),
            prop::collection::vec(-10.0..10.0f64, n),
        )
            .prop_map(|(a, b)| (Tensor::vector(a).unwrap(), Tensor::vector(b).unwrap()))
    })
}

fn channel_means(x: &Tensor) -> Vec<f64> {
    let plane = x.shape()[1] * x.shape()[2];
    x.data().chunks(plane).map(|c| c.iter().sum::<f64>() / plane as f64).collect()
}

proptest! {
    #[test]
    fn add_then_sub_restores((a, b) in pair(64)) {
        let back = a.add(&b).unwrap().sub(&b).unwrap();
        for (x, y) in back.data().iter().zip(a.data()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn mismatched_shapes_are_rejected((a, _) in pair(16), extra in 1usize..4) {
        let b = Tensor::zeros(&[a.len() + extra]).unwrap();
        prop_assert!(a.add(&b).is_err());
        prop_assert!(axpy_norms(&a, &b).is_err());
    }

    #[test]
    fn norms_agree_with_direct_sums((a, b) in pair(200)) {
        let n = axpy_norms(&a, &b).unwrap();
        let swapped = axpy_norms(&b, &a).unwrap();
        prop_assert_eq!(n.diff_l2_sq, swapped.diff_l2_sq);
        prop_assert!(n.diff_l2_sq >= 0.0);
        let d = a.sub(&b).unwrap();
        assert_relative_eq!(n.diff_l2_sq, d.norm_sq(), max_relative = 1e-12, epsilon = 1e-12);
        assert_relative_eq!(n.dot, a.dot(&b).unwrap(), max_relative = 1e-12, epsilon = 1e-9);
        assert_relative_eq!(n.sum, a.sum() + b.sum(), max_relative = 1e-12, epsilon = 1e-9);
    }

    #[test]
    fn ppm_round_trip_stays_within_half_a_level(x in image(6)) {
        let decoded = decode_ppm(&encode_ppm(&x).unwrap()).unwrap();
        prop_assert_eq!(decoded.shape(), x.shape());
        for (a, b) in decoded.data().iter().zip(x.data()) {
            prop_assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        // quantized images are fixpoints
        prop_assert_eq!(encode_ppm(&decoded).unwrap(), encode_ppm(&x).unwrap());
    }

    #[test]
    fn jitter_is_undone_by_the_opposite_shift(x in image(7), dx in -3i64..=3, dy in -3i64..=3) {
        let there = jitter(&x, dx, dy).unwrap();
        prop_assert_eq!(jitter(&there, -dx, -dy).unwrap(), x.clone());
        let mut sorted_a = there.data().to_vec();
        let mut sorted_b = x.data().to_vec();
        sorted_a.sort_by(f64::total_cmp);
        sorted_b.sort_by(f64::total_cmp);
        prop_assert_eq!(sorted_a, sorted_b);
    }

    #[test]
    fn blur_keeps_channel_means(x in image(8), sigma in 0.1f64..2.0) {
        let y = blur(&x, sigma).unwrap();
        for (a, b) in channel_means(&y).iter().zip(channel_means(&x)) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-300.0..300.0f64, 1..10)) {
        let p = softmax(&logits);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let best = p.iter().cloned().fold(0.0, f64::max);
        let i = logits.iter().position(|&l| l == top).unwrap();
        prop_assert_eq!(p[i], best);
    }
}
