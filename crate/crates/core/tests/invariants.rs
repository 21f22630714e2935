use endcalc::fit::loglog_fit;
use endcalc::mesh::{lp_norm, EndSpec, ManifoldMesh, Region};
use endcalc::norms::{mixed_norm, MixedMode};
use endcalc::resolvent::{resolvent_matrix, semigroup_representation_check, ResolventOperator};
use endcalc::specfun::{euclid_resolvent_kernel, KernelQuery};
use proptest::prelude::*;

fn mesh() -> ManifoldMesh {
    ManifoldMesh::build(&[EndSpec::new(3, 400.0, 90), EndSpec::new(5, 400.0, 90)], 1).unwrap()
}

#[test]
fn kernel_order_recursion_matches_k2_differences() {
    for &(n, m) in &[(3u32, 1u32), (4, 1), (4, 2), (5, 3), (7, 2)] {
        for &k in &[0.2, 1.0, 2.5] {
            for &r in &[0.3, 1.0, 4.0] {
                let s = k * k;
                let h = 1e-4 * s;
                let g = |s: f64| euclid_resolvent_kernel(&KernelQuery::new(n, m, s.sqrt(), r).unwrap()).unwrap();
                let d = (g(s + h) - g(s - h)) / (2.0 * h);
                let next = euclid_resolvent_kernel(&KernelQuery::new(n, m + 1, k, r).unwrap()).unwrap();
                let expect = -d / m as f64;
                assert!((next / expect - 1.0).abs() < 1e-5, "n={n} m={m} k={k} r={r}: {next} vs {expect}");
            }
        }
    }
}

#[test]
fn end_balls_grow_like_their_dimension() {
    let mesh = mesh();
    for (i, end) in mesh.ends().iter().enumerate() {
        let anchor = mesh.anchors()[i];
        let dist: Vec<f64> = mesh.distances_from(anchor).iter().map(|d| d + end.r_min).collect();
        let radii: Vec<f64> = (0..12).map(|j| 4.0 * (25.0f64).powf(j as f64 / 11.0)).collect();
        let vols: Vec<f64> = radii
            .iter()
            .map(|&r| {
                (0..mesh.len())
                    .filter(|&x| mesh.vertex(x).region == Region::End(i) && dist[x] <= r)
                    .map(|x| mesh.vertex(x).measure)
                    .sum()
            })
            .collect();
        let fit = loglog_fit(&radii, &vols).unwrap();
        assert!((fit.slope - end.n as f64).abs() < 0.1, "end {i}: slope {}", fit.slope);
    }
}

#[test]
fn semigroup_error_shrinks_as_points_double() {
    let mesh = ManifoldMesh::build(&[EndSpec::new(3, 60.0, 24), EndSpec::new(4, 60.0, 24)], 1).unwrap();
    for &(t, m) in &[(1.0, 1u32), (50.0, 2)] {
        let errs: Vec<f64> = [32usize, 64, 128].iter().map(|&q| semigroup_representation_check(&mesh, t, m, q).unwrap()).collect();
        for w in errs.windows(2) {
            assert!(w[1] <= w[0] || w[1] < 1e-13, "t={t} m={m}: {errs:?}");
        }
    }
}

#[test]
fn mixed_norms_equal_coordinate_oracles() {
    let mesh = ManifoldMesh::build(&[EndSpec::new(3, 40.0, 16), EndSpec::new(4, 40.0, 16)], 2).unwrap();
    let mu = mesh.measures();
    let n = mesh.len();
    assert!(n <= 60);
    for &(t, m) in &[(0.5, 1u32), (20.0, 2)] {
        let r = resolvent_matrix(&mesh, t, m).unwrap();
        let mut one = 0.0f64;
        let mut inf = 0.0f64;
        for y in 0..n {
            let mut e = vec![0.0; n];
            e[y] = 1.0 / mu[y];
            one = one.max(lp_norm(&mu, &r.apply(&e), 1.0).unwrap());
        }
        for x in 0..n {
            let s: Vec<f64> = r.row(x).iter().map(|v| v.signum()).collect();
            inf = inf.max(r.apply(&s)[x]);
        }
        assert!((mixed_norm(&r, MixedMode::L1xLinfY) - one).abs() < 1e-12 * one);
        assert!((mixed_norm(&r, MixedMode::LinfxL1y) - inf).abs() < 1e-12 * inf);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn resolvent_contracts_lp(seed in 0u64..1000, t in 1e-2f64..1e3, m in 1u32..4) {
        let mesh = ManifoldMesh::build(&[EndSpec::new(3, 60.0, 24), EndSpec::new(4, 60.0, 24)], 1).unwrap();
        let mu = mesh.measures();
        let f: Vec<f64> = (0..mesh.len()).map(|i| ((i as f64 + 1.0) * (seed as f64 + 0.5)).sin()).collect();
        let g = ResolventOperator::new(&mesh, t, m).unwrap().apply(&f);
        for p in [1.0, 2.0, f64::INFINITY] {
            prop_assert!(lp_norm(&mu, &g, p).unwrap() <= lp_norm(&mu, &f, p).unwrap() * (1.0 + 1e-12));
        }
    }
}
