//! The 2-D transforms against a direct DFT, their own inverse and Parseval.

mod common;

use common::{fft_errors, naive_dft, random, rel_err};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rartrack::math::{fft2d, ifft2d, Tensor3};

#[test]
fn every_power_of_two_shape_matches_the_direct_sum() {
    let (round, naive, parseval) = fft_errors(3, 2);
    assert!(round < 1e-6, "round trip {round:e}");
    assert!(naive < 1e-6, "direct DFT {naive:e}");
    assert!(parseval < 1e-5, "Parseval {parseval:e}");
}

#[test]
fn impulse_has_a_flat_spectrum() {
    let mut t = Tensor3::zeros(8, 4, 1);
    t.set(0, 0, 0, 1.0);
    let s = fft2d(&t).unwrap();
    for z in s.data() {
        assert!((z.re - 1.0).abs() < 1e-12 && z.im.abs() < 1e-12);
    }
}

#[test]
fn non_power_of_two_is_rejected() {
    assert!(fft2d(&Tensor3::zeros(6, 8, 1)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn round_trip_and_direct_sum(seed in any::<u64>(), lw in 2u32..5, lh in 2u32..5, c in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random(&mut rng, 1 << lw, 1 << lh, c);
        let s = fft2d(&t).unwrap();
        prop_assert!(rel_err(ifft2d(&s).unwrap().data(), t.data()) < 1e-6);
        let got: Vec<f64> = s.data().iter().flat_map(|z| [z.re, z.im]).collect();
        let want: Vec<f64> = naive_dft(&t).iter().flat_map(|&(re, im)| [re, im]).collect();
        prop_assert!(rel_err(&got, &want) < 1e-6);
    }
}
