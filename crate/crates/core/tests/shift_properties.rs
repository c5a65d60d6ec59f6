use proptest::prelude::*;
use tsm_core::shift::{
    bytes_moved, shift_adjoint, shift_groups, shift_offline, shift_offline_into, shift_offline_naive,
    shift_online_step, Padding, ShiftCache, ShiftMode, ShiftSpec,
};
use tsm_core::tensor::{reverse_time, slice_frame, stack_frames};
use tsm_core::{Activation, ClipShape, FrameShape, FrameTensor};

fn shape() -> impl Strategy<Value = ClipShape> {
    (1usize..=3, 1usize..=6, 1usize..=10, 1usize..=4, 1usize..=4).prop_map(|(n, t, c, h, w)| ClipShape::new(n, t, c, h, w))
}

fn padding() -> impl Strategy<Value = Padding> {
    prop_oneof![Just(Padding::Zero), Just(Padding::Circular)]
}

/// A clip plus any valid bi-directional spec for it.
fn clip_and_spec() -> impl Strategy<Value = (Activation<f64>, ShiftSpec)> {
    shape().prop_flat_map(|s| {
        let data = prop::collection::vec(-1.0f64..1.0, s.len());
        let counts = (0..=s.c).prop_flat_map(move |f| (Just(f), 0..=s.c - f));
        (data, counts, padding()).prop_map(move |(d, (f, b), p)| {
            (Activation::from_vec(s, d).unwrap(), ShiftSpec::offline(f, b).with_padding(p))
        })
    })
}

fn dot(a: &Activation<f64>, b: &Activation<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn fast_path_matches_reference((x, spec) in clip_and_spec()) {
        prop_assert_eq!(shift_offline(&x, &spec).unwrap(), shift_offline_naive(&x, &spec).unwrap());
        let mut out = Activation::zeros(x.shape()).unwrap();
        shift_offline_into(&x, &spec, &mut out).unwrap();
        prop_assert_eq!(out, shift_offline_naive(&x, &spec).unwrap());
    }

    #[test]
    fn adjoint_identity((x, spec) in clip_and_spec(), seed in any::<u64>()) {
        let y = x.map(|v| (v * 7.3 + seed as f64 * 1e-3).sin());
        let lhs = dot(&shift_offline(&x, &spec).unwrap(), &y);
        let rhs = dot(&x, &shift_adjoint(&y, &spec).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-10, "{} vs {}", lhs, rhs);
    }

    #[test]
    fn zero_channels_is_identity((x, spec) in clip_and_spec()) {
        let none = ShiftSpec { n_fwd: 0, n_bwd: 0, ..spec };
        prop_assert_eq!(shift_offline(&x, &none).unwrap(), x);
    }

    #[test]
    fn reversal_swaps_directions((x, spec) in clip_and_spec()) {
        let m = spec.n_fwd.min(x.shape().c / 2);
        let eq = ShiftSpec { n_fwd: m, n_bwd: m, ..spec };
        let lhs = reverse_time(&shift_offline(&reverse_time(&x), &eq).unwrap());
        let rhs = shift_groups(&x, &eq.swapped_groups(), eq.padding).unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn shift_is_a_partial_permutation((x, spec) in clip_and_spec()) {
        // every output value is an input value or a zero fill
        let y = shift_offline(&x, &spec).unwrap();
        let mut src: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
        src.sort_unstable();
        for v in y.data() {
            prop_assert!(*v == 0.0 || src.binary_search(&v.to_bits()).is_ok());
        }
        if spec.padding == Padding::Circular {
            let mut out: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
            out.sort_unstable();
            prop_assert_eq!(out, src);
        }
    }

    #[test]
    fn streaming_equals_offline_unidirectional((x, spec) in clip_and_spec()) {
        let s = x.shape();
        let online = ShiftSpec::online(spec.n_fwd);
        let mut cache = ShiftCache::new(s.n, online.n_fwd, s.h, s.w);
        let frames: Vec<_> = (0..s.t)
            .map(|t| {
                let f = FrameTensor::from_vec(
                    FrameShape::new(s.n, s.c, s.h, s.w),
                    (0..s.n).flat_map(|n| slice_frame(&x, n, t).unwrap().data().to_vec()).collect(),
                )
                .unwrap();
                shift_online_step(&f, &online, &mut cache).unwrap()
            })
            .collect();
        prop_assert_eq!(stack_frames(&frames).unwrap(), shift_offline(&x, &online).unwrap());
        prop_assert_eq!(cache.frame_counter(), s.t as u64);
    }

    #[test]
    fn bytes_moved_is_linear_in_shifted_channels(s in shape(), f in 0usize..5, b in 0usize..5) {
        let c = s.c.max(f + b);
        let s = ClipShape::new(s.n, s.t, c, s.h, s.w);
        let got = bytes_moved(&ShiftSpec::offline(f, b), s).unwrap();
        let per_channel = bytes_moved(&ShiftSpec::offline(1, 0), ClipShape::new(s.n, s.t, c.max(1), s.h, s.w)).unwrap();
        prop_assert_eq!(got, (f + b) as u64 * per_channel);
        prop_assert_eq!(got, 2 * (f + b) as u64 * (s.n * s.t * s.h * s.w) as u64 * 4);
    }
}

#[test]
fn unidirectional_rejects_backward_group() {
    let spec = ShiftSpec {
        n_fwd: 1,
        n_bwd: 1,
        padding: Padding::Zero,
        mode: ShiftMode::Unidirectional,
    };
    let x = Activation::<f32>::zeros(ClipShape::new(1, 2, 4, 1, 1)).unwrap();
    assert!(shift_offline(&x, &spec).is_err());
}
