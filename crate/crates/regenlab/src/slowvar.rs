use crate::error::{Error, Result};

/// Slowly varying factor of a regularly varying tail.
///
/// `LogPow(rho)` evaluates as `max(log t, 1)^rho`; the floor keeps the value
/// defined and positive for every `t > 0`, and only the large-`t` behaviour is
/// meaningful for the asymptotics this crate checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SlowlyVarying {
    Const(f64),
    LogPow(f64),
}

impl SlowlyVarying {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SlowlyVarying::Const(c) if !(c > 0.0 && c.is_finite()) => {
                Err(Error::domain(format!("Const slowly varying factor must be positive, got {c}")))
            }
            SlowlyVarying::LogPow(rho) if !rho.is_finite() => {
                Err(Error::domain(format!("LogPow exponent must be finite, got {rho}")))
            }
            _ => Ok(()),
        }
    }

    /// Evaluate at `t > 0`.
    pub fn eval(&self, t: f64) -> f64 {
        debug_assert!(t > 0.0);
        match *self {
            SlowlyVarying::Const(c) => c,
            SlowlyVarying::LogPow(rho) => t.ln().max(1.0).powf(rho),
        }
    }

    /// Whether `integral^inf l(y)/y dy` converges, the condition for the
    /// exponentially weighted average `ell_star` to exist.
    pub fn ell_star_convergent(&self) -> bool {
        matches!(*self, SlowlyVarying::LogPow(rho) if rho < -1.0)
    }
}

/// Exponentially weighted average of a slowly varying function:
/// `integral_0^inf e^{-1/y} y^{-1} l(t y) dy`.
///
/// Splits at `y = 1`. On `(0, 1]` the integrand is smooth (the `e^{-1/y}`
/// factor vanishes to all orders at 0). On `[1, inf)` the substitution
/// `y = e^u` gives `integral_0^inf e^{-e^{-u}} l(t e^u) du`, computed on
/// `[0, U]` by quadrature plus the exact tail `integral_U^inf (log t + u)^rho du`,
/// valid because `e^{-e^{-u}}` is 1 to machine precision beyond `u = 40`.
pub fn ell_star(l: SlowlyVarying, t: f64) -> Result<f64> {
    l.validate()?;
    if !(t > 1.0) {
        return Err(Error::domain(format!("ell_star needs t > 1, got {t}")));
    }
    let rho = match l {
        SlowlyVarying::LogPow(rho) if rho < -1.0 => rho,
        _ => {
            return Err(Error::precondition(
                "ell_star diverges unless the slowly varying factor is LogPow with exponent < -1"
                    .to_string(),
            ))
        }
    };

    let rel = 1e-9;
    let low = crate::quad::gk_adaptive(
        |y: f64| (-1.0 / y).exp() / y * l.eval(t * y),
        0.0,
        1.0,
        rel,
        0.0,
        8,
        2000,
    );

    let u_cut = 40.0;
    let mid = crate::quad::gk_adaptive(
        |u: f64| (-(-u).exp()).exp() * l.eval(t * u.exp()),
        0.0,
        u_cut,
        rel,
        0.0,
        16,
        2000,
    );

    // Beyond u_cut the weight is 1 to machine precision and log(t e^u) > 1,
    // so the integrand is exactly (log t + u)^rho.
    let base = t.ln() + u_cut;
    let tail = base.powf(rho + 1.0) / (-rho - 1.0);

    if !(low.converged && mid.converged) {
        let achieved = (low.err_est + mid.err_est) / (low.value + mid.value + tail).abs();
        return Err(Error::Numeric { op: "ell_star", achieved, required: 1e-8 });
    }
    Ok(low.value + mid.value + tail)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_divergent_classes() {
        assert!(matches!(ell_star(SlowlyVarying::Const(1.0), 10.0), Err(Error::Precondition(_))));
        assert!(matches!(ell_star(SlowlyVarying::LogPow(-1.0), 10.0), Err(Error::Precondition(_))));
        assert!(matches!(ell_star(SlowlyVarying::LogPow(0.5), 10.0), Err(Error::Precondition(_))));
    }

    #[test]
    fn matches_asymptotic_inverse_log() {
        // For LogPow(-2) the average behaves like 1/log t for large t.
        let t = 40.0f64.exp();
        let v = ell_star(SlowlyVarying::LogPow(-2.0), t).unwrap();
        let ratio = v * 40.0;
        assert!((0.85..=1.15).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn floor_rule() {
        let l = SlowlyVarying::LogPow(2.0);
        assert_eq!(l.eval(1.0), 1.0);
        assert_eq!(l.eval(std::f64::consts::E), 1.0);
        let t = 100.0f64;
        assert!((l.eval(t) - t.ln().powi(2)).abs() < 1e-12);
    }
}
