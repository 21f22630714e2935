//! Modified Bessel functions and closed-form Euclidean resolvent kernels.
//!
//! `K_nu` and `I_nu` are computed with Temme's method: a power series for
//! the fractional order `mu in [-1/2, 1/2]` when `x < 2`, Steed's continued
//! fraction otherwise, and upward recurrence to reach `nu`. Kernels of
//! `(Delta + k^2)^{-m}` on `R^n` follow from the Bessel potential formula
//!
//! ```text
//! G_{n,m}(k, r) = (2 pi)^{-n/2} 2^{1-m} / (m-1)! * (r/k)^{m-n/2} K_{n/2-m}(k r)
//! ```
//!
//! which agrees with `(-1)^{m-1}/(m-1)! d^{m-1}/d(k^2)^{m-1}` of the `m = 1` kernel.

use std::f64::consts::PI;

use crate::error::{domain, Error, Result};

const EPS: f64 = 1.0e-16;
const FPMIN: f64 = 1.0e-300;
const MAXIT: usize = 100_000;
const SERIES_CUTOFF: f64 = 2.0;

const GAM1_CHEB: [f64; 7] = [
    -1.142022680371168e0,
    6.5165112670737e-3,
    3.087090173086e-4,
    -3.4706269649e-6,
    6.9437664e-9,
    3.67795e-11,
    -1.356e-13,
];

const GAM2_CHEB: [f64; 8] = [
    1.843740587300905e0,
    -7.68528408447867e-2,
    1.2719271366546e-3,
    -4.9717367042e-6,
    -3.31261198e-8,
    2.423096e-10,
    -1.702e-13,
    -1.49e-15,
];

fn chebev(c: &[f64], x: f64) -> f64 {
    let (mut d, mut dd) = (0.0, 0.0);
    let y2 = 2.0 * x;
    for &cj in c[1..].iter().rev() {
        let sv = d;
        d = y2 * d - dd + cj;
        dd = sv;
    }
    x * d - dd + 0.5 * c[0]
}

/// Returns `(gam1, gam2, 1/Gamma(1+mu), 1/Gamma(1-mu))` for `|mu| <= 1/2`.
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    let xx = 8.0 * mu * mu - 1.0;
    let gam1 = chebev(&GAM1_CHEB, xx);
    let gam2 = chebev(&GAM2_CHEB, xx);
    (gam1, gam2, gam2 - mu * gam1, gam2 + mu * gam1)
}

/// `K_mu(x)` and `K_{mu+1}(x)` multiplied by `e^x`, for `|mu| <= 1/2`.
fn k_pair_scaled(mu: f64, x: f64) -> (f64, f64) {
    let xi = 1.0 / x;
    let mu2 = mu * mu;
    if x < SERIES_CUTOFF {
        let x2 = 0.5 * x;
        let pimu = PI * mu;
        let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
        let d = -x2.ln();
        let e = mu * d;
        let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
        let (gam1, gam2, gampl, gammi) = temme_gammas(mu);
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dsq = x2 * x2;
        let mut sum1 = p;
        for i in 1..MAXIT {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu2);
            c *= dsq / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        let scale = x.exp();
        (sum * scale, sum1 * 2.0 * xi * scale)
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut delh = d;
        let mut h = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - mu2;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 2..MAXIT {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh = (b * d - 1.0) * delh;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                break;
            }
        }
        h *= a1;
        let kmu = (PI / (2.0 * x)).sqrt() / s;
        let k1 = kmu * (mu + x + 0.5 - h) * xi;
        (kmu, k1)
    }
}

fn check_args(nu: f64, x: f64) -> Result<()> {
    if !nu.is_finite() || nu < 0.0 {
        return domain(format!("Bessel order must be finite and >= 0, got {nu}"));
    }
    if !x.is_finite() || x <= 0.0 {
        return domain(format!("Bessel argument must be finite and > 0, got {x}"));
    }
    Ok(())
}

/// `e^x K_nu(x)` together with `e^x K_{nu+1}(x)`.
fn k_scaled_pair(nu: f64, x: f64) -> (f64, f64) {
    let nl = (nu + 0.5).floor() as usize;
    let mu = nu - nl as f64;
    let (mut kmu, mut k1) = k_pair_scaled(mu, x);
    let xi2 = 2.0 / x;
    for i in 1..=nl {
        let next = (mu + i as f64) * xi2 * k1 + kmu;
        kmu = k1;
        k1 = next;
    }
    (kmu, k1)
}

/// Modified Bessel function of the second kind `K_nu(x)`.
pub fn bessel_k(nu: f64, x: f64) -> Result<f64> {
    check_args(nu, x)?;
    let (ks, _) = k_scaled_pair(nu, x);
    if !ks.is_finite() {
        return Err(Error::Range(format!("K_{nu}({x}) overflows")));
    }
    // e^{-x} underflows to zero past ~745, which is the intended behaviour.
    Ok(ks * (-x).exp())
}

/// Exponentially scaled pair `(e^{-x} I_nu(x), e^x K_nu(x))`.
pub fn bessel_ik_scaled(nu: f64, x: f64) -> Result<(f64, f64)> {
    check_args(nu, x)?;
    let nl = (nu + 0.5).floor() as usize;
    let mu = nu - nl as f64;
    let xi = 1.0 / x;
    let xi2 = 2.0 * xi;

    // CF1 for I'_nu / I_nu.
    let mut h = (nu * xi).max(FPMIN);
    let mut b = xi2 * nu;
    let mut d = 0.0;
    let mut c = h;
    let mut converged = false;
    for _ in 0..MAXIT {
        b += xi2;
        d = 1.0 / (b + d);
        c = b + 1.0 / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() < EPS {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Range(format!("I_{nu}({x}) continued fraction did not converge")));
    }
    let mut ril = FPMIN;
    let mut ripl = h * ril;
    let ril1 = ril;
    let mut fact = nu * xi;
    for _ in 0..nl {
        let ritemp = fact * ril + ripl;
        fact -= xi;
        ripl = fact * ritemp + ril;
        ril = ritemp;
    }
    let f = ripl / ril;
    let (kmu, k1) = k_pair_scaled(mu, x);
    let kmup = mu * xi * kmu - k1;
    let imu = xi / (f * kmu - kmup);
    let inu = imu * ril1 / ril;
    let (knu, _) = k_scaled_pair(nu, x);
    if !inu.is_finite() || !knu.is_finite() {
        return Err(Error::Range(format!("I/K_{nu}({x}) out of range")));
    }
    Ok((inu, knu))
}

/// Surface area of the unit sphere in `R^n`.
pub fn sphere_area(n: u32) -> f64 {
    let h = n as f64 / 2.0;
    2.0 * PI.powf(h) / gamma(h)
}

/// Gamma function for positive half-integers and integers (Lanczos elsewhere).
pub fn gamma(x: f64) -> f64 {
    if x == x.floor() && x > 0.0 && x < 171.0 {
        return (1..x as u64).fold(1.0, |acc, i| acc * i as f64);
    }
    if (2.0 * x) == (2.0 * x).floor() && x > 0.0 {
        // Gamma(j + 1/2) = (2j)! sqrt(pi) / (4^j j!)
        let mut g = PI.sqrt();
        let mut a = 0.5;
        while a < x {
            g *= a;
            a += 1.0;
        }
        return g;
    }
    lanczos_gamma(x)
}

fn lanczos_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return PI / ((PI * x).sin() * lanczos_gamma(1.0 - x));
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
}

/// A point query for the Euclidean resolvent kernel `(Delta + k^2)^{-m}(r)` on `R^n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelQuery {
    pub n: u32,
    pub m: u32,
    pub k: f64,
    pub r: f64,
}

impl KernelQuery {
    pub fn new(n: u32, m: u32, k: f64, r: f64) -> Result<Self> {
        let q = KernelQuery { n, m, k, r };
        q.validate()?;
        Ok(q)
    }

    fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return domain(format!("dimension n must be >= 3, got {}", self.n));
        }
        if self.m < 1 {
            return domain("resolvent order m must be >= 1");
        }
        if !(self.r.is_finite() && self.r > 0.0) {
            return domain(format!("radius must be > 0, got {}", self.r));
        }
        if !self.k.is_finite() || self.k < 0.0 {
            return domain(format!("spectral parameter must be >= 0, got {}", self.k));
        }
        if self.k == 0.0 && self.m != 1 {
            return domain("k = 0 is only defined for m = 1 (Green function)");
        }
        Ok(())
    }

    fn prefactor(&self) -> f64 {
        let n = self.n as f64;
        (2.0 * PI).powf(-n / 2.0) * 2f64.powi(1 - self.m as i32) / gamma(self.m as f64)
    }
}

fn finite_or_range(v: f64, what: &str, q: &KernelQuery) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Range(format!("{what} not representable for {q:?}")))
    }
}

/// Kernel of `(Delta + k^2)^{-m}` on `R^n` at distance `r`.
pub fn euclid_resolvent_kernel(q: &KernelQuery) -> Result<f64> {
    q.validate()?;
    let n = q.n as f64;
    if q.k == 0.0 {
        let g = gamma(n / 2.0 - 1.0) / (4.0 * PI.powf(n / 2.0)) * q.r.powf(2.0 - n);
        return finite_or_range(g, "Green function", q);
    }
    let nu = n / 2.0 - q.m as f64;
    let kv = bessel_k(nu.abs(), q.k * q.r)?;
    let v = q.prefactor() * (q.r / q.k).powf(-nu) * kv;
    finite_or_range(v, "resolvent kernel", q)
}

/// `|d/dr|` of [`euclid_resolvent_kernel`].
pub fn euclid_resolvent_gradient(q: &KernelQuery) -> Result<f64> {
    q.validate()?;
    let n = q.n as f64;
    if q.k == 0.0 {
        let g = (n - 2.0) * gamma(n / 2.0 - 1.0) / (4.0 * PI.powf(n / 2.0)) * q.r.powf(1.0 - n);
        return finite_or_range(g, "Green function gradient", q);
    }
    let nu = n / 2.0 - q.m as f64;
    let kv = bessel_k((nu + 1.0).abs(), q.k * q.r)?;
    let v = q.prefactor() * q.k.powf(nu + 1.0) * q.r.powf(-nu) * kv;
    finite_or_range(v, "resolvent gradient", q)
}

/// Spherical mean over the shell `|y| = s` of the `m = 1` kernel centred at a
/// point with `|x| = r`. This is the s-wave (radial) resolvent kernel:
/// `(r s)^{-nu} I_nu(k r_<) K_nu(k r_>) / |S^{n-1}|` with `nu = n/2 - 1`.
fn shell_kernel_m1(n: u32, k: f64, r: f64, s: f64) -> Result<f64> {
    let (lo, hi) = if r <= s { (r, s) } else { (s, r) };
    if lo == 0.0 {
        return euclid_resolvent_kernel(&KernelQuery::new(n, 1, k, hi)?);
    }
    let nu = n as f64 / 2.0 - 1.0;
    let (is, _) = bessel_ik_scaled(nu, k * lo)?;
    let (_, ks) = bessel_ik_scaled(nu, k * hi)?;
    let v = (lo * hi).powf(-nu) * is * ks * (k * (lo - hi)).exp() / sphere_area(n);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Range(format!("shell kernel n={n} k={k} r={r} s={s}")))
    }
}

/// Radially averaged kernel of `(Delta + k^2)^{-m}` between shells of radius
/// `r` and `s` in `R^n`. A zero radius gives the point kernel.
///
/// For `m > 1` the `k^2`-derivatives are taken by Richardson-extrapolated
/// central differences.
pub fn radial_resolvent_kernel(n: u32, m: u32, k: f64, r: f64, s: f64) -> Result<f64> {
    if n < 3 {
        return domain(format!("dimension n must be >= 3, got {n}"));
    }
    if m < 1 {
        return domain("resolvent order m must be >= 1");
    }
    if !(k > 0.0 && k.is_finite()) {
        return domain(format!("spectral parameter must be > 0, got {k}"));
    }
    if !(r >= 0.0 && s >= 0.0) || (r == 0.0 && s == 0.0) {
        return domain("shell radii must be >= 0 and not both zero");
    }
    if m == 1 {
        return shell_kernel_m1(n, k, r, s);
    }
    let order = (m - 1) as usize;
    let kappa = k * k;
    let f = |kap: f64| shell_kernel_m1(n, kap.sqrt(), r, s);
    let d = richardson_derivative(f, kappa, order, 0.08 * kappa)?;
    let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
    Ok(sign * d / gamma(m as f64))
}

/// `order`-th derivative of `f` at `x` by a central binomial stencil with
/// step `h`, improved by one Richardson step.
pub fn richardson_derivative<F>(f: F, x: f64, order: usize, h: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let stencil = |h: f64| -> Result<f64> {
        let mut acc = 0.0;
        let mut binom = 1.0;
        for i in 0..=order {
            let offset = (order as f64 / 2.0 - i as f64) * h;
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * binom * f(x + offset)?;
            binom = binom * (order - i) as f64 / (i + 1) as f64;
        }
        Ok(acc / h.powi(order as i32))
    };
    let coarse = stencil(h)?;
    let fine = stencil(h / 2.0)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn half_integer_closed_forms() {
        let v = bessel_k(0.5, 1.0).unwrap();
        assert!(rel(v, (PI / 2.0).sqrt() * (-1.0f64).exp()) < 1e-14);
        for &x in &[1e-6, 0.01, 0.3, 1.9, 2.0, 2.1, 5.0, 40.0, 300.0, 690.0] {
            let base = (PI / (2.0 * x)).sqrt() * (-x).exp();
            let k15 = bessel_k(1.5, x).unwrap();
            assert!(rel(k15, base * (1.0 + 1.0 / x)) < 1e-12, "x={x}");
            let k25 = bessel_k(2.5, x).unwrap();
            assert!(rel(k25, base * (1.0 + 3.0 / x + 3.0 / (x * x))) < 1e-12, "x={x}");
        }
    }

    #[test]
    fn small_argument_asymptotic() {
        let v = bessel_k(1.0, 1e-3).unwrap();
        assert!(rel(v, 1000.0) < 1e-3);
    }

    #[test]
    fn domain_errors() {
        assert!(bessel_k(1.0, 0.0).is_err());
        assert!(bessel_k(1.0, -1.0).is_err());
        assert!(bessel_k(1.0, f64::NAN).is_err());
        assert!(bessel_k(-0.5, 1.0).is_err());
        assert_eq!(bessel_k(0.0, 800.0).unwrap(), 0.0);
    }

    #[test]
    fn scaled_i_half_order() {
        for &x in &[1e-3, 0.5, 1.5, 3.0, 25.0, 400.0] {
            let (is, ks) = bessel_ik_scaled(0.5, x).unwrap();
            // I_{1/2}(x) = sqrt(2/(pi x)) sinh x
            let expect = (2.0 / (PI * x)).sqrt() * 0.5 * (1.0 - (-2.0 * x).exp());
            assert!(rel(is, expect) < 1e-12, "x={x}");
            assert!(rel(ks, (PI / (2.0 * x)).sqrt()) < 1e-12);
        }
    }

    #[test]
    fn gamma_values() {
        assert!(rel(gamma(0.5), PI.sqrt()) < 1e-15);
        assert!(rel(gamma(5.0), 24.0) < 1e-15);
        assert!(rel(gamma(2.5), 0.75 * PI.sqrt()) < 1e-15);
        assert!(rel(gamma(1.0 / 3.0), 2.678_938_534_707_747_6) < 1e-13);
        assert!(rel(sphere_area(3), 4.0 * PI) < 1e-15);
        assert!(rel(sphere_area(4), 2.0 * PI * PI) < 1e-15);
    }

    #[test]
    fn kernel_examples() {
        let q = KernelQuery::new(3, 1, 0.5, 2.0).unwrap();
        let expect = (-1.0f64).exp() / (8.0 * PI);
        assert!(rel(euclid_resolvent_kernel(&q).unwrap(), expect) < 1e-12);

        let q = KernelQuery::new(4, 1, 1e-4, 1.0).unwrap();
        assert!(rel(euclid_resolvent_kernel(&q).unwrap(), 1.0 / (4.0 * PI * PI)) < 1e-3);

        let q = KernelQuery::new(3, 2, 0.5, 2.0).unwrap();
        let expect = (-1.0f64).exp() / (8.0 * PI * 0.5);
        assert!(rel(euclid_resolvent_kernel(&q).unwrap(), expect) < 1e-12);
    }

    #[test]
    fn gradient_examples() {
        let q = KernelQuery::new(3, 1, 0.0, 1.0).unwrap();
        assert!(rel(euclid_resolvent_gradient(&q).unwrap(), 1.0 / (4.0 * PI)) < 1e-14);
        let q = KernelQuery::new(3, 1, 1.0, 1.0).unwrap();
        let expect = 2.0 * (-1.0f64).exp() / (4.0 * PI);
        assert!(rel(euclid_resolvent_gradient(&q).unwrap(), expect) < 1e-12);
    }

    #[test]
    fn query_validation() {
        assert!(KernelQuery::new(2, 1, 1.0, 1.0).is_err());
        assert!(KernelQuery::new(3, 0, 1.0, 1.0).is_err());
        assert!(KernelQuery::new(3, 1, 1.0, 0.0).is_err());
        assert!(KernelQuery::new(3, 2, 0.0, 1.0).is_err());
        assert!(KernelQuery::new(3, 1, 0.0, 1.0).is_ok());
    }

    #[test]
    fn shell_kernel_n3_closed_form() {
        let (k, r, s): (f64, f64, f64) = (0.3, 2.0, 5.0);
        let expect = ((-k * (s - r)).exp() - (-k * (s + r)).exp()) / (8.0 * PI * k * r * s);
        let v = radial_resolvent_kernel(3, 1, k, r, s).unwrap();
        assert!(rel(v, expect) < 1e-12);
        let sym = radial_resolvent_kernel(3, 1, k, s, r).unwrap();
        assert_eq!(v, sym);
        let point = radial_resolvent_kernel(3, 1, k, 0.0, s).unwrap();
        assert!(rel(point, (-k * s).exp() / (4.0 * PI * s)) < 1e-12);
    }
}
