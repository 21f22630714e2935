use std::f64::consts::PI;

use endcalc::specfun::{
    bessel_k, euclid_resolvent_gradient, euclid_resolvent_kernel, gamma, radial_resolvent_kernel, sphere_area, KernelQuery,
};

/// `K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt` by the trapezoid rule,
/// which converges geometrically for this integrand.
fn bessel_k_quadrature(nu: f64, x: f64) -> f64 {
    let h: f64 = 1e-3;
    let mut sum = 0.5 * (-x).exp();
    let mut t = h;
    loop {
        let v = (-x * t.cosh()).exp() * (nu * t).cosh();
        sum += v;
        if v < 1e-300 || t > 50.0 {
            break;
        }
        t += h;
    }
    sum * h
}

#[test]
fn bessel_k_reference_values() {
    assert!((bessel_k(0.0, 1.0).unwrap() - 0.42102443824070834).abs() < 1e-14);
    assert!((bessel_k(1.0, 1.0).unwrap() - 0.6019072301972346).abs() < 1e-14);
    assert!((bessel_k(0.0, 0.1).unwrap() - 2.4270690247020164).abs() < 1e-13);
    for x in [0.05, 0.7, 3.0, 20.0] {
        let exact = (PI / (2.0 * x)).sqrt() * (-x).exp();
        assert!((bessel_k(0.5, x).unwrap() / exact - 1.0).abs() < 1e-13);
    }
}

#[test]
fn bessel_k_matches_integral_representation() {
    for &nu in &[0.0, 0.3, 1.0, 1.5, 2.0, 3.7] {
        for &x in &[0.2, 1.0, 2.5, 9.0, 40.0] {
            let q = bessel_k_quadrature(nu, x);
            let v = bessel_k(nu, x).unwrap();
            assert!((v / q - 1.0).abs() < 1e-11, "nu={nu} x={x}: {v} vs {q}");
        }
    }
}

#[test]
fn gamma_and_sphere_areas() {
    assert!((gamma(5.0) - 24.0).abs() < 1e-12);
    assert!((gamma(0.5) - PI.sqrt()).abs() < 1e-14);
    assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-13);
    assert!((sphere_area(4) - 2.0 * PI * PI).abs() < 1e-13);
}

#[test]
fn euclidean_kernels_in_closed_form() {
    for &k in &[0.05, 0.5, 2.0] {
        for &r in &[0.1, 1.0, 7.0] {
            let g3 = euclid_resolvent_kernel(&KernelQuery::new(3, 1, k, r).unwrap()).unwrap();
            assert!((g3 / ((-k * r).exp() / (4.0 * PI * r)) - 1.0).abs() < 1e-12);
            let g4 = euclid_resolvent_kernel(&KernelQuery::new(4, 1, k, r).unwrap()).unwrap();
            let oracle = k * bessel_k_quadrature(1.0, k * r) / (4.0 * PI * PI * r);
            assert!((g4 / oracle - 1.0).abs() < 1e-10);
            // (L + k^2)^{-2} = -d/d(k^2) (L + k^2)^{-1}; for n = 3 this is e^{-kr} / (8 pi k).
            let g3m2 = euclid_resolvent_kernel(&KernelQuery::new(3, 2, k, r).unwrap()).unwrap();
            assert!((g3m2 / ((-k * r).exp() / (8.0 * PI * k)) - 1.0).abs() < 1e-12);
        }
    }
    let newton = euclid_resolvent_kernel(&KernelQuery::new(3, 1, 0.0, 2.0).unwrap()).unwrap();
    assert!((newton - 1.0 / (8.0 * PI)).abs() < 1e-15);
}

#[test]
fn kernel_gradient_matches_finite_differences() {
    for &(n, m) in &[(3u32, 1u32), (4, 1), (5, 2), (6, 3)] {
        for &k in &[0.1, 1.0] {
            for &r in &[0.5, 2.0, 6.0] {
                let h = 1e-5 * r;
                let f = |r: f64| euclid_resolvent_kernel(&KernelQuery::new(n, m, k, r).unwrap()).unwrap();
                let fd = -(f(r + h) - f(r - h)) / (2.0 * h);
                let g = euclid_resolvent_gradient(&KernelQuery::new(n, m, k, r).unwrap()).unwrap();
                assert!((g / fd - 1.0).abs() < 1e-7, "n={n} m={m} k={k} r={r}: {g} vs {fd}");
            }
        }
    }
}

#[test]
fn shell_kernel_is_the_spherical_average() {
    // Average of e^{-k|x-y|}/(4 pi |x-y|) over |y| = s, for |x| = r < s:
    // e^{-ks} sinh(kr) / (4 pi k r s).
    for &(k, r, s) in &[(0.3, 1.0, 2.0), (1.0, 0.5, 4.0), (0.05, 3.0, 30.0)] {
        let v = radial_resolvent_kernel(3, 1, k, r, s).unwrap();
        let exact = (-k * s).exp() * (k * r).sinh() / (4.0 * PI * k * r * s);
        assert!((v / exact - 1.0).abs() < 1e-12, "k={k} r={r} s={s}");
        assert!((radial_resolvent_kernel(3, 1, k, s, r).unwrap() - v).abs() < 1e-15 * v.abs().max(1e-300));
    }
}
