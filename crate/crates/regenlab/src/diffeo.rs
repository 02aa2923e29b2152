//! Diffeomorphisms phi: [0, inf) -> [0, 1) used to transform the additive
//! range of a subordinator into a subset of the unit interval.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Diffeomorphism {
    /// phi(y) = 1 - e^{-y}.
    Exponential,
    /// phi(y) = 1 - (y+1)^{-beta}, beta > 0.
    PowerTail(f64),
}

impl Diffeomorphism {
    pub fn power_tail(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::domain(format!("power tail exponent must be > 0, got {beta}")));
        }
        Ok(Diffeomorphism::PowerTail(beta))
    }

    /// phi(y); accepts y = +inf (limit 1).
    pub fn value(&self, y: f64) -> f64 {
        debug_assert!(y >= 0.0);
        match *self {
            Diffeomorphism::Exponential => -f64::exp_m1(-y),
            Diffeomorphism::PowerTail(beta) => {
                if y.is_infinite() {
                    1.0
                } else {
                    -f64::exp_m1(-beta * y.ln_1p())
                }
            }
        }
    }

    /// phi'(y); accepts y = +inf (limit 0).
    pub fn deriv(&self, y: f64) -> f64 {
        debug_assert!(y >= 0.0);
        match *self {
            Diffeomorphism::Exponential => (-y).exp(),
            Diffeomorphism::PowerTail(beta) => {
                if y.is_infinite() {
                    0.0
                } else {
                    beta * (-(beta + 1.0) * y.ln_1p()).exp()
                }
            }
        }
    }

    /// phi^{-1}(x) for x in [0, 1).
    pub fn inverse(&self, x: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&x) {
            return Err(Error::domain(format!("inverse argument {x} outside [0,1)")));
        }
        Ok(match *self {
            Diffeomorphism::Exponential => -(-x).ln_1p(),
            Diffeomorphism::PowerTail(beta) => f64::exp_m1(-(-x).ln_1p() / beta),
        })
    }

    /// Whether integral_0^inf (phi'(y))^alpha dy converges; the screening test
    /// for functionals over an unbounded horizon.
    pub fn prime_power_integrable(&self, alpha: f64) -> bool {
        match *self {
            Diffeomorphism::Exponential => alpha > 0.0,
            Diffeomorphism::PowerTail(beta) => alpha * (beta + 1.0) > 1.0,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Diffeomorphism::Exponential => "exp".to_string(),
            Diffeomorphism::PowerTail(beta) => format!("power:{beta}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_roundtrip() {
        for phi in [Diffeomorphism::Exponential, Diffeomorphism::power_tail(3.0).unwrap()] {
            assert_eq!(phi.value(0.0), 0.0);
            let mut prev_v = 0.0;
            let mut prev_d = f64::INFINITY;
            for i in 1..=200 {
                let y = i as f64 * 0.1;
                let v = phi.value(y);
                let d = phi.deriv(y);
                assert!(v > prev_v && v < 1.0);
                assert!(d > 0.0 && d <= prev_d);
                prev_v = v;
                prev_d = d;
            }
            assert!((phi.value(1e300) - 1.0).abs() < 1e-12);
            for i in 0..100 {
                let x = i as f64 / 100.0;
                let y = phi.inverse(x).unwrap();
                assert!((phi.value(y) - x).abs() < 1e-12, "{phi:?} x={x}");
            }
            assert!(phi.inverse(1.0).is_err());
            assert!(phi.inverse(-0.1).is_err());
        }
    }

    #[test]
    fn integrability_screen() {
        assert!(Diffeomorphism::Exponential.prime_power_integrable(0.1));
        let p3 = Diffeomorphism::power_tail(3.0).unwrap();
        assert!(p3.prime_power_integrable(0.5)); // 0.5 * 4 = 2 > 1
        assert!(!p3.prime_power_integrable(0.2)); // 0.2 * 4 = 0.8 < 1
        let p1 = Diffeomorphism::power_tail(1.0).unwrap();
        assert!(!p1.prime_power_integrable(0.5)); // boundary: 0.5 * 2 is not > 1
        assert!(Diffeomorphism::power_tail(0.0).is_err());
        assert!(Diffeomorphism::power_tail(-1.0).is_err());
    }
}
