//! Branch-free sine/cosine used by the characteristic-function kernels.
//!
//! Arguments are reduced by `k·π/2` with a three-part Cody-Waite split and
//! evaluated with the fdlibm minimax polynomials on `[-π/4, π/4]`. The loop
//! body contains no data-dependent branches so it vectorizes; an AVX2 build
//! of the same loop is selected at runtime when available. Both builds perform
//! the same IEEE operations, so results are bitwise identical across them.
//! Arguments beyond `REDUCTION_LIMIT` fall back to `f64::sin_cos`.

use std::f64::consts::FRAC_2_PI;

const PIO2_1: f64 = 1.570_796_326_734_125_614_17e+00;
const PIO2_2: f64 = 6.077_100_506_303_965_976_60e-11;
const PIO2_3: f64 = 2.022_266_248_711_166_455_80e-21;

const S1: f64 = -1.666_666_666_666_663_243_48e-01;
const S2: f64 = 8.333_333_333_322_489_461_24e-03;
const S3: f64 = -1.984_126_982_985_794_931_34e-04;
const S4: f64 = 2.755_731_370_707_006_767_89e-06;
const S5: f64 = -2.505_076_025_340_686_341_95e-08;
const S6: f64 = 1.589_690_995_211_550_102_21e-10;

const C1: f64 = 4.166_666_666_666_660_190_37e-02;
const C2: f64 = -1.388_888_888_887_410_957_49e-03;
const C3: f64 = 2.480_158_728_947_672_941_78e-05;
const C4: f64 = -2.755_731_435_139_066_330_35e-07;
const C5: f64 = 2.087_572_321_298_174_827_90e-09;
const C6: f64 = -1.135_964_755_778_819_482_65e-11;

// 1.5 * 2^52: adding and subtracting rounds to the nearest integer, and the
// low mantissa bits of the sum hold that integer.
const ROUND_SHIFT: f64 = 6_755_399_441_055_744.0;

/// Largest |x| for which the split reduction keeps `k·PIO2_i` exact.
pub const REDUCTION_LIMIT: f64 = 524_288.0;

#[inline(always)]
fn kernel(x: f64) -> (f64, f64) {
    let shifted = x * FRAC_2_PI + ROUND_SHIFT;
    let quadrant = shifted.to_bits();
    let k = shifted - ROUND_SHIFT;
    let r = ((x - k * PIO2_1) - k * PIO2_2) - k * PIO2_3;
    let z = r * r;
    let s = r + r * z * (S1 + z * (S2 + z * (S3 + z * (S4 + z * (S5 + z * S6)))));
    let c = 1.0 - 0.5 * z + z * z * (C1 + z * (C2 + z * (C3 + z * (C4 + z * (C5 + z * C6)))));

    let swap = 0u64.wrapping_sub(quadrant & 1);
    let (sb, cb) = (s.to_bits(), c.to_bits());
    let sin_bits = (sb & !swap) | (cb & swap);
    let cos_bits = (cb & !swap) | (sb & swap);
    let sin_sign = (quadrant & 2) << 62;
    let cos_sign = (quadrant.wrapping_add(1) & 2) << 62;
    (f64::from_bits(sin_bits ^ sin_sign), f64::from_bits(cos_bits ^ cos_sign))
}

/// `(sin x, cos x)` for a single argument.
pub fn sin_cos(x: f64) -> (f64, f64) {
    if x.abs() <= REDUCTION_LIMIT {
        kernel(x)
    } else {
        x.sin_cos()
    }
}

#[inline(always)]
fn fill(input: &[f64], sin: &mut [f64], cos: &mut [f64]) {
    for ((&x, s), c) in input.iter().zip(sin.iter_mut()).zip(cos.iter_mut()) {
        let (sv, cv) = kernel(x);
        *s = sv;
        *c = cv;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn fill_avx2(input: &[f64], sin: &mut [f64], cos: &mut [f64]) {
    fill(input, sin, cos)
}

/// Elementwise `sin` and `cos` of `input` written into the output slices.
pub fn sin_cos_slice(input: &[f64], sin: &mut [f64], cos: &mut [f64]) {
    assert!(input.len() == sin.len() && input.len() == cos.len());
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            unsafe { fill_avx2(input, sin, cos) };
        } else {
            fill(input, sin, cos);
        }
    }
    #[cfg(not(target_arch = "x86_64"))]
    fill(input, sin, cos);

    for (i, &x) in input.iter().enumerate() {
        if !(x.abs() <= REDUCTION_LIMIT) {
            let (s, c) = x.sin_cos();
            sin[i] = s;
            cos[i] = c;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_std_to_a_few_ulp() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..200_000)
            .map(|i| {
                let scale = [1.0, 10.0, 1e3, 1e5][i % 4];
                rng.random_range(-scale..scale)
            })
            .collect();
        let mut s = vec![0.0; xs.len()];
        let mut c = vec![0.0; xs.len()];
        sin_cos_slice(&xs, &mut s, &mut c);
        for (i, &x) in xs.iter().enumerate() {
            assert!((s[i] - x.sin()).abs() < 4e-16, "sin({x})");
            assert!((c[i] - x.cos()).abs() < 4e-16, "cos({x})");
        }
    }

    #[test]
    fn exact_at_zero_and_quadrant_edges() {
        assert_eq!(sin_cos(0.0), (0.0, 1.0));
        let (s, c) = sin_cos(std::f64::consts::FRAC_PI_2);
        assert!((s - 1.0).abs() < 1e-16 && c.abs() < 1e-16);
        let (s, c) = sin_cos(-std::f64::consts::PI);
        assert!(s.abs() < 1e-15 && (c + 1.0).abs() < 1e-16);
    }

    #[test]
    fn large_and_non_finite_arguments_fall_back() {
        let xs = [1e9, -3e7, f64::NAN];
        let mut s = [0.0; 3];
        let mut c = [0.0; 3];
        sin_cos_slice(&xs, &mut s, &mut c);
        assert_eq!(s[0], 1e9f64.sin());
        assert_eq!(c[1], (-3e7f64).cos());
        assert!(s[2].is_nan());
    }

    #[test]
    fn scalar_and_slice_paths_agree_bitwise() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64 * 0.37 - 150.0).collect();
        let mut s = vec![0.0; xs.len()];
        let mut c = vec![0.0; xs.len()];
        sin_cos_slice(&xs, &mut s, &mut c);
        for (i, &x) in xs.iter().enumerate() {
            let (ss, cc) = sin_cos(x);
            assert_eq!(s[i].to_bits(), ss.to_bits());
            assert_eq!(c[i].to_bits(), cc.to_bits());
        }
    }
}
