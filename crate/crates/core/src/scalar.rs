//! Scalar abstraction and the polynomial smoothstep used for every blend and cutoff.

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar accepted by the closed-form layers of the crate.
pub trait Real: Float + FromPrimitive + std::fmt::Debug + Send + Sync + 'static {}

impl<T> Real for T where T: Float + FromPrimitive + std::fmt::Debug + Send + Sync + 'static {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal representable in the scalar type")
}

/// The order-2 smoothstep `S(t) = 6t^5 - 15t^4 + 10t^3`, clamped to 0 below 0 and 1 above 1.
///
/// `S` is C^2, non-decreasing, and has vanishing first and second derivatives at both ends.
#[inline]
pub fn smoothstep<T: Real>(t: T) -> T {
    if t <= T::zero() {
        T::zero()
    } else if t >= T::one() {
        T::one()
    } else {
        t * t * t * (t * (t * lit(6.0) - lit(15.0)) + lit(10.0))
    }
}

/// First derivative of [`smoothstep`].
#[inline]
pub fn smoothstep_d1<T: Real>(t: T) -> T {
    if t <= T::zero() || t >= T::one() {
        T::zero()
    } else {
        let u = t * (T::one() - t);
        lit::<T>(30.0) * u * u
    }
}

/// Second derivative of [`smoothstep`].
#[inline]
pub fn smoothstep_d2<T: Real>(t: T) -> T {
    if t <= T::zero() || t >= T::one() {
        T::zero()
    } else {
        lit::<T>(60.0) * t * (T::one() - t) * (T::one() - lit::<T>(2.0) * t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothstep_endpoints_and_symmetry() {
        assert_eq!(smoothstep(0.0_f64), 0.0);
        assert_eq!(smoothstep(1.0_f64), 1.0);
        assert!((smoothstep(0.5_f64) - 0.5).abs() < 1e-15);
        for k in 0..=20 {
            let t = k as f64 / 20.0;
            assert!((smoothstep(t) + smoothstep(1.0 - t) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for k in 1..20 {
            let t = k as f64 / 20.0;
            let d1 = (smoothstep(t + h) - smoothstep(t - h)) / (2.0 * h);
            let d2 = (smoothstep_d1(t + h) - smoothstep_d1(t - h)) / (2.0 * h);
            assert!((d1 - smoothstep_d1(t)).abs() < 1e-8);
            assert!((d2 - smoothstep_d2(t)).abs() < 1e-7);
        }
    }

    #[test]
    fn single_precision_agrees() {
        for k in 0..=10 {
            let t = k as f64 / 10.0;
            assert!((smoothstep(t as f32) as f64 - smoothstep(t)).abs() < 1e-6);
        }
    }
}
