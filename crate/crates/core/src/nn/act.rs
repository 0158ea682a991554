use super::Real;

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    x.logistic()
}

/// Branch-free rational tanh for f32: odd degree-13 numerator over an even
/// degree-6 denominator on the clamped input; a few ulp from `f32::tanh`.
/// Saturates exactly to +-1 beyond |x| = 7.9053.
#[inline]
pub(crate) fn tanh_f32(x: f32) -> f32 {
    const CLAMP: f32 = 7.905_311;
    const A: [f32; 7] = [
        4.893_524_6e-3,
        6.372_619_3e-4,
        1.485_722_4e-5,
        5.122_297e-8,
        -8.604_672e-11,
        2.000_188e-13,
        -2.760_768_5e-16,
    ];
    const B: [f32; 4] = [4.893_525e-3, 2.268_434_6e-3, 1.185_347e-4, 1.198_258_4e-6];
    let x = x.clamp(-CLAMP, CLAMP);
    let x2 = x * x;
    let p = ((((((A[6] * x2 + A[5]) * x2 + A[4]) * x2 + A[3]) * x2 + A[2]) * x2 + A[1]) * x2 + A[0]) * x;
    let q = ((B[3] * x2 + B[2]) * x2 + B[1]) * x2 + B[0];
    p / q
}

/// Exact (erf-based) GELU.
pub fn gelu<T: Real>(x: T) -> T {
    let half = T::of(0.5);
    half * x * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub fn gelu_grad<T: Real>(x: T) -> T {
    let cdf = T::of(0.5) * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * T::of(0.5)).exp() * T::of(0.398_942_280_401_432_7);
    cdf + x * pdf
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testing::{central_diff, rel_err};

    #[test]
    fn gelu_reference_values() {
        assert_eq!(gelu(0.0f64), 0.0);
        assert!((gelu(1.0f64) - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert!((gelu(-1.0f64) + 0.158_655_253_931_457_05).abs() < 1e-12);
    }

    #[test]
    fn gelu_derivative_matches_fd() {
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            let fd = central_diff(&mut |v| gelu(v), x, 1e-6);
            assert!(rel_err(gelu_grad(x), fd) < 1e-7, "x={x}");
        }
    }

    #[test]
    fn fast_tanh_tracks_libm() {
        let mut worst = 0.0f32;
        for i in -20_000..=20_000 {
            let x = i as f32 * 1e-3;
            worst = worst.max((tanh_f32(x) - x.tanh()).abs());
        }
        assert!(worst < 5e-7, "{worst}");
        assert_eq!(tanh_f32(50.0), 1.0);
        assert_eq!(tanh_f32(-50.0), -1.0);
        assert_eq!(tanh_f32(0.0), 0.0);
        assert!((sigmoid(3.0f32) - sigmoid(3.0f64) as f32).abs() < 2e-7);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert_eq!(sigmoid(800.0f64), 1.0);
        assert_eq!(sigmoid(0.0f32), 0.5);
    }
}
