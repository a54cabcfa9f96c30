//! Modified Bessel function of the second kind, `K_nu(x)`, for real order.
//!
//! The order is reduced to `mu = nu - round(nu)` with `|mu| <= 1/2`. For
//! `x < 2` the pair `K_mu, K_{mu+1}` comes from Temme's series, otherwise from
//! Steed's continued fraction (CF2); forward recurrence then reaches `nu`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Below this argument Temme's series is used, above it Steed's CF2.
const SERIES_CUTOFF: f64 = 2.0;
const MAX_ITER: usize = 15_000;

/// Chebyshev coefficients for `g1(mu) = (1/Gamma(1-mu) - 1/Gamma(1+mu)) / (2 mu)`
/// on `x = 4|mu| - 1`.
const G1_CHEB: [f64; 16] = [
    -1.145164083662683,
    0.006360853113470843,
    0.0018624519300720684,
    0.0001528330858734535,
    1.7017464011802038e-05,
    -6.459750292334725e-07,
    -5.181984843251938e-08,
    4.518909289485818e-10,
    3.243322737102087e-11,
    6.830943402494752e-13,
    2.8353502755172103e-14,
    -7.98839057693236e-16,
    -3.372667730077195e-17,
    -3.658633480921052e-20,
    1.3276141541334475e-21,
    2.6184519696812156e-22,
];

/// Chebyshev coefficients for `g2(mu) = (1/Gamma(1-mu) + 1/Gamma(1+mu)) / 2`.
const G2_CHEB: [f64; 16] = [
    1.8826455249496719,
    -0.07749065839616752,
    -0.01825671484732493,
    0.0006338030209074896,
    7.62290543508729e-05,
    -9.550164756172044e-07,
    -8.892726810788635e-08,
    -1.9521334772319614e-09,
    -9.400305273588516e-11,
    4.687513384953239e-12,
    2.265853574692576e-13,
    -1.1725509698488015e-15,
    -7.044133820024522e-17,
    -2.4377878310107696e-18,
    -7.52252432182539e-20,
    1.2157969482974713e-21,
];

fn chebyshev(coeffs: &[f64], x: f64) -> f64 {
    let x2 = 2.0 * x;
    let (mut d, mut dd) = (0.0, 0.0);
    for &c in coeffs[1..].iter().rev() {
        let tmp = d;
        d = x2 * d - dd + c;
        dd = tmp;
    }
    x * d - dd + 0.5 * coeffs[0]
}

struct TemmeGamma {
    g1: f64,
    g2: f64,
    /// 1 / Gamma(1 + mu)
    rgamma_1p: f64,
    /// 1 / Gamma(1 - mu)
    rgamma_1m: f64,
}

fn temme_gamma(mu: f64) -> TemmeGamma {
    let x = 4.0 * mu.abs() - 1.0;
    let g1 = chebyshev(&G1_CHEB, x);
    let g2 = chebyshev(&G2_CHEB, x);
    TemmeGamma {
        g1,
        g2,
        rgamma_1p: g2 - mu * g1,
        rgamma_1m: g2 + mu * g1,
    }
}

/// `(K_mu(x), K_{mu+1}(x))`, unscaled, for `|mu| <= 1/2` and `0 < x < 2`.
fn temme_series(mu: f64, x: f64) -> (f64, f64) {
    let half_x = 0.5 * x;
    let ln_half_x = half_x.ln();
    let half_x_mu = (mu * ln_half_x).exp();
    let pi_mu = PI * mu;
    let sigma = -mu * ln_half_x;
    let sinrat = if pi_mu.abs() < f64::EPSILON {
        1.0
    } else {
        pi_mu / pi_mu.sin()
    };
    let sinhrat = if sigma.abs() < f64::EPSILON {
        1.0
    } else {
        sigma.sinh() / sigma
    };
    let tg = temme_gamma(mu);

    let mut fk = sinrat * (sigma.cosh() * tg.g1 - sinhrat * ln_half_x * tg.g2);
    let mut pk = 0.5 / half_x_mu / tg.rgamma_1p;
    let mut qk = 0.5 * half_x_mu / tg.rgamma_1m;
    let mut ck = 1.0;
    let mut sum0 = fk;
    let mut sum1 = pk;
    for k in 1..MAX_ITER {
        let kf = k as f64;
        fk = (kf * fk + pk + qk) / (kf * kf - mu * mu);
        ck *= half_x * half_x / kf;
        pk /= kf - mu;
        qk /= kf + mu;
        let hk = -kf * fk + pk;
        let del0 = ck * fk;
        sum0 += del0;
        sum1 += ck * hk;
        if del0.abs() < 0.5 * sum0.abs() * f64::EPSILON {
            break;
        }
    }
    (sum0, sum1 * 2.0 / x)
}

/// `(e^x K_mu(x), e^x K_{mu+1}(x))` for `|mu| <= 1/2` and `x >= 2`.
fn steed_cf2_scaled(mu: f64, x: f64) -> (f64, f64) {
    let mut bi = 2.0 * (1.0 + x);
    let mut di = 1.0 / bi;
    let mut delhi = di;
    let mut hi = di;
    let mut qi = 0.0;
    let mut qip1 = 1.0;
    let mut ai = -(0.25 - mu * mu);
    let a1 = ai;
    let mut ci = -ai;
    let mut big_q = -ai;
    let mut s = 1.0 + big_q * delhi;
    for i in 2..MAX_ITER {
        ai -= 2.0 * (i as f64 - 1.0);
        ci = -ai * ci / i as f64;
        let tmp = (qi - bi * qip1) / ai;
        qi = qip1;
        qip1 = tmp;
        big_q += ci * qip1;
        bi += 2.0;
        di = 1.0 / (bi + ai * di);
        delhi = (bi * di - 1.0) * delhi;
        hi += delhi;
        let dels = big_q * delhi;
        s += dels;
        if (dels / s).abs() < f64::EPSILON {
            break;
        }
    }
    hi *= -a1;
    let k_mu = (PI / (2.0 * x)).sqrt() / s;
    let k_mup1 = k_mu * (mu + x + 0.5 - hi) / x;
    (k_mu, k_mup1)
}

fn split_order(nu: f64) -> (usize, f64) {
    let n = (nu + 0.5).floor();
    (n as usize, nu - n)
}

fn check_args(nu: f64, x: f64) -> Result<f64> {
    if !nu.is_finite() {
        return Err(Error::Domain(format!("Bessel order must be finite, got {nu}")));
    }
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!(
            "K_nu(x) requires finite x > 0, got x = {x}"
        )));
    }
    Ok(nu.abs())
}

/// `K_nu(x)` for real `nu` and `x > 0`. `K` is even in the order.
pub fn bessel_k(nu: f64, x: f64) -> Result<f64> {
    let nu = check_args(nu, x)?;
    let (n, mu) = split_order(nu);
    if x < SERIES_CUTOFF {
        let (mut k0, mut k1) = temme_series(mu, x);
        for i in 0..n {
            let k2 = 2.0 * (mu + i as f64 + 1.0) / x * k1 + k0;
            k0 = k1;
            k1 = k2;
        }
        Ok(k0)
    } else {
        Ok(bessel_k_scaled_large(mu, n, x) * (-x).exp())
    }
}

/// `e^x K_nu(x)`.
pub fn bessel_k_scaled(nu: f64, x: f64) -> Result<f64> {
    let nu = check_args(nu, x)?;
    let (n, mu) = split_order(nu);
    if x < SERIES_CUTOFF {
        Ok(bessel_k(nu, x)? * x.exp())
    } else {
        Ok(bessel_k_scaled_large(mu, n, x))
    }
}

fn bessel_k_scaled_large(mu: f64, n: usize, x: f64) -> f64 {
    let (mut k0, mut k1) = steed_cf2_scaled(mu, x);
    for i in 0..n {
        let k2 = 2.0 * (mu + i as f64 + 1.0) / x * k1 + k0;
        k0 = k1;
        k1 = k2;
    }
    k0
}

/// `x^nu K_nu(x)` for `nu >= 0`, `x > 0`, without the overflow that the
/// separate factors suffer for small `x`.
pub(crate) fn x_pow_bessel_k(nu: f64, x: f64) -> f64 {
    let (n, mu) = split_order(nu);
    if x < SERIES_CUTOFF {
        // G_v = x^v K_v obeys G_{v+1} = 2 v G_v + x^2 G_{v-1}
        let (k0, k1) = temme_series(mu, x);
        let mut g0 = x.powf(mu) * k0;
        let mut g1 = x.powf(mu + 1.0) * k1;
        for i in 0..n {
            let v = mu + i as f64 + 1.0;
            let g2 = 2.0 * v * g1 + x * x * g0;
            g0 = g1;
            g1 = g2;
        }
        g0
    } else {
        let ks = bessel_k_scaled_large(mu, n, x);
        (nu * x.ln() - x).exp() * ks
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn half_integer_closed_forms() {
        for &x in &[1e-3, 0.2, 1.0, 1.99, 2.0, 3.7, 10.0, 40.0] {
            let k_half = (PI / (2.0 * x)).sqrt() * (-x).exp();
            assert!(rel(bessel_k(0.5, x).unwrap(), k_half) < 1e-13, "x={x}");
            let k_3half = k_half * (1.0 + 1.0 / x);
            assert!(rel(bessel_k(1.5, x).unwrap(), k_3half) < 1e-13, "x={x}");
            let k_5half = k_half * (1.0 + 3.0 / x + 3.0 / (x * x));
            assert!(rel(bessel_k(2.5, x).unwrap(), k_5half) < 1e-13, "x={x}");
        }
    }

    #[test]
    fn spec_points() {
        let v = bessel_k(0.5, 1.0).unwrap();
        assert!(rel(v, (PI / 2.0).sqrt() * (-1.0f64).exp()) < 1e-14);
        assert!((v - 0.461_068_50).abs() < 1e-8);
        let v = bessel_k(1.5, 2.0).unwrap();
        assert!(rel(v, (PI / 4.0).sqrt() * (-2.0f64).exp() * 1.5) < 1e-14);
        // 40-digit reference
        assert!(rel(bessel_k(1.0 / 16.0, 0.5).unwrap(), 0.926_629_501_046_490_154_863_111_3) < 1e-13);
    }

    #[test]
    fn nonpositive_argument_is_domain_error() {
        assert!(matches!(bessel_k(1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(bessel_k(1.0, -1.0), Err(Error::Domain(_))));
        assert!(matches!(bessel_k(1.0, f64::NAN), Err(Error::Domain(_))));
    }

    #[test]
    fn order_symmetry() {
        for &x in &[0.3, 2.5] {
            assert_eq!(bessel_k(-0.7, x).unwrap(), bessel_k(0.7, x).unwrap());
        }
    }

    #[test]
    fn scaled_product_matches_factors() {
        for &nu in &[0.0625, 1.0625, 2.7] {
            for &x in &[0.01_f64, 0.5, 1.9, 2.1, 8.0, 30.0] {
                let direct = x.powf(nu) * bessel_k(nu, x).unwrap();
                assert!(rel(x_pow_bessel_k(nu, x), direct) < 1e-13, "nu={nu} x={x}");
            }
        }
    }

    #[test]
    fn continuity_at_regime_switch() {
        for &nu in &[0.0625, 0.3, 1.0625, 5.25] {
            let below = bessel_k(nu, SERIES_CUTOFF * (1.0 - 1e-12)).unwrap();
            let above = bessel_k(nu, SERIES_CUTOFF).unwrap();
            assert!(rel(below, above) < 1e-11, "nu={nu}");
        }
    }
}
