use deconv_core::hqs::soft_threshold;
use deconv_core::nonuniform::DICTIONARY_SIZE;
use deconv_core::spectral::{dft2, idft2};
use deconv_core::*;
use proptest::prelude::*;

fn image(h: usize, w: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(-1.0f64..1.0, h * w).prop_map(move |d| Image::new(h, w, 1, d).unwrap())
}

fn sized_image() -> impl Strategy<Value = Image> {
    (6usize..20, 6usize..20).prop_flat_map(|(h, w)| image(h, w))
}

fn kernel() -> impl Strategy<Value = Kernel> {
    prop_oneof![Just(1usize), Just(3), Just(5)]
        .prop_flat_map(|s| prop::collection::vec(-1.0f64..1.0, s * s).prop_map(move |t| Kernel::new(s, s, t).unwrap()))
}

fn boundary() -> impl Strategy<Value = Boundary> {
    prop_oneof![Just(Boundary::Zero), Just(Boundary::Replicate), Just(Boundary::Periodic)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_is_linear(x in image(9, 11), y in image(9, 11), k in kernel(), b in boundary(), a in -3.0f64..3.0, c in -3.0f64..3.0) {
        let lhs = conv2d(&x.scale(a).add(&y.scale(c)).unwrap(), &k, b).unwrap();
        let rhs = conv2d(&x, &k, b).unwrap().scale(a).add(&conv2d(&y, &k, b).unwrap().scale(c)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
    }

    #[test]
    fn correlation_is_the_zero_boundary_adjoint(x in image(10, 8), r in image(10, 8), k in kernel()) {
        let lhs = conv2d(&x, &k, Boundary::Zero).unwrap().dot(&r).unwrap();
        let rhs = x.dot(&correlate2d(&r, &k, Boundary::Zero).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn composition_matches_cascade_in_the_interior(x in image(16, 16), a in kernel(), b in kernel()) {
        let cascade = conv2d(&conv2d(&x, &a, Boundary::Zero).unwrap(), &b, Boundary::Zero).unwrap();
        let direct = conv2d(&x, &a.compose(&b), Boundary::Zero).unwrap();
        let m = (a.height() + b.height()) / 2;
        for i in m..16 - m {
            for j in m..16 - m {
                prop_assert!((cascade.get(0, i, j) - direct.get(0, i, j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dft_round_trip(x in sized_image()) {
        let back = idft2(&dft2(&x).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&x).unwrap() < 1e-12);
    }

    #[test]
    fn soft_threshold_is_a_minimizer(v in -5.0f64..5.0, tau in 0.0f64..2.0, d in -0.5f64..0.5) {
        let obj = |z: f64| 0.5 * (z - v).powi(2) + tau * z.abs();
        let z = soft_threshold(&Image::constant(1, 1, v), tau).unwrap().data()[0];
        prop_assert!(obj(z) <= obj(z + d) + 1e-14);
        prop_assert!(z.abs() <= v.abs());
    }

    #[test]
    fn delta_inverse_residual_follows_flat_spectrum(rho in 0.001f64..2.0) {
        let op = StackedOperator::new(Kernel::delta(), None, 0.0).unwrap();
        let bank = compute_inverse_bank(&op, rho, 2.0).unwrap();
        prop_assert!((bank.dirac_residual() - rho / (1.0 + rho)).abs() < 1e-9);
    }

    #[test]
    fn constant_field_is_uniform_blur(x in image(20, 20), e in 0usize..DICTIONARY_SIZE) {
        let dict = KernelDictionary::kernels_only();
        let field = MotionField::constant(20, 20, e).unwrap();
        let a = varying_conv(&x, &field, &dict).unwrap();
        let b = conv2d(&x, dict.kernel(e), Boundary::Replicate).unwrap();
        prop_assert!(a.max_abs_diff(&b).unwrap() < 1e-10);
    }

    #[test]
    fn nearest_kernel_recovers_members(e in 0usize..DICTIONARY_SIZE) {
        let dict = KernelDictionary::kernels_only();
        prop_assert_eq!(nearest_kernel(dict.kernel(e), &dict).unwrap(), e);
    }

    #[test]
    fn noise_is_seed_deterministic(x in image(8, 8), seed in any::<u64>(), sigma in 0.0f64..5.0) {
        let a = add_gaussian_noise(&x, sigma, seed).unwrap();
        prop_assert_eq!(a, add_gaussian_noise(&x, sigma, seed).unwrap());
    }
}
