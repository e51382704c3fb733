mod common;

use common::{c, fixture_params, rel, surface};
use nalgebra::{DMatrix, DVector};
use schottky_vir::differentials::LimitPoint;
use schottky_vir::schottky::{derive_handle_data, generator, mobius_transform};
use schottky_vir::{
    Complex64 as C, Error, Handle, LimitPointConfig, MobiusMap, SchottkyParams, Surface,
    TruncationMode, TruncationPolicy,
};

const X: C = C::new(0.3, 2.0);
const Y: C = C::new(-0.7, 1.5);

// identity term of the Ψ_N series
fn pi_n(n: usize, x: C, y: C, a: &[C]) -> C {
    let mut v = 1.0 / (x - y);
    for &al in a {
        v *= (y - al) / (x - al);
    }
    assert_eq!(a.len(), 2 * n - 1);
    v
}

fn numerical_rank(m: &DMatrix<C>, rtol: f64) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.max();
    sv.iter().filter(|&&v| v > rtol * top).count()
}

fn sigma() -> MobiusMap {
    let (a, b, cc, d) = (c(1.1, 0.2), c(0.3, -0.1), c(0.02, 0.01), c(0.9, 0.0));
    let s = (a * d - b * cc).sqrt();
    MobiusMap::new(a / s, b / s, cc / s, d / s).unwrap()
}

#[test]
fn identity_term_is_the_kernel() {
    let s = surface(0);
    assert_eq!(s.group_len(), 1);
    for n in 1..=3 {
        let cfg = LimitPointConfig::default_for(&s, n);
        let a = cfg.resolve(&s).unwrap();
        let got = s.psi_n(&cfg, n, X, Y).unwrap();
        assert_eq!(got.weights, vec![n as i32, 1 - n as i32]);
        assert!(rel(got.value, pi_n(n, X, Y, &a)) < 1e-14);
    }
}

#[test]
fn psi_residue_at_diagonal() {
    let s = surface(8);
    let cfg = LimitPointConfig::default_for(&s, 2);
    for h in [1e-4, 1e-5] {
        let y = X + c(h, 0.0);
        let r = (y - X) * s.psi_n(&cfg, 2, X, y).unwrap().value;
        assert!((r + 1.0).norm() < 20.0 * h, "h {h}: {r}");
    }
}

#[test]
fn kernel_mobius_covariance() {
    let sg = sigma();
    for len in [0, 6] {
        let s = surface(len);
        let moved = Surface::new(mobius_transform(s.params(), &sg).unwrap(), TruncationPolicy::fixed(len)).unwrap();
        for n in 1..=2 {
            let cfg = LimitPointConfig::default_for(&s, n);
            let a = cfg.resolve(&s).unwrap();
            let cfg_moved = LimitPointConfig::new(a.iter().map(|&z| LimitPoint::Point(sg.apply(z))).collect());
            let base = s.psi_n(&cfg, n, X, Y).unwrap().value;
            let image = moved.psi_n(&cfg_moved, n, sg.apply(X), sg.apply(Y)).unwrap().value
                * sg.deriv(X).powi(n as i32)
                * sg.deriv(Y).powi(1 - n as i32);
            let tol = if len == 0 { 1e-12 } else { 1e-9 };
            assert!(rel(image, base) < tol, "L {len} N {n}: {:e}", rel(image, base));
        }
    }
}

#[test]
fn psi_automorphic_in_x() {
    let s = surface(12);
    let p = s.params();
    for n in 1..=2 {
        let cfg = LimitPointConfig::default_for(&s, n);
        let base = s.psi_n(&cfg, n, X, Y).unwrap().value;
        for a in p.signed_indices() {
            let m = generator(p, a).unwrap().matrix;
            let v = s.psi_n(&cfg, n, m.apply(X), Y).unwrap().value * m.deriv(X).powi(n as i32);
            assert!(rel(v, base) < 1e-9, "a {a} N {n}: {:e}", rel(v, base));
        }
    }
}

#[test]
fn omega_n_family() {
    let s = surface(8);
    assert_eq!(s.omega_n(1, X, Y).unwrap().value, s.omega(X, Y).unwrap().value);
    let w2 = s.omega_n(2, X, Y).unwrap();
    assert_eq!(w2.weights, vec![2, 2]);
    assert!(rel(s.omega_n(2, Y, X).unwrap().value, w2.value) < 1e-9);
    let y = X + c(0.0, 1e-3);
    let lead = (X - y).powi(4) * s.omega_n(2, X, y).unwrap().value;
    assert!((lead - 1.0).norm() < 1e-9);
    assert!(s.omega_n(0, X, Y).is_err());
}

#[test]
fn nu_base_point_independence() {
    let s = surface(8);
    for a in 1..=2 {
        let inf = s.nu(a, X).unwrap().value;
        for y0 in [c(0.0, 3.0), c(-2.0, -1.5), c(5.0, 0.5)] {
            let v = s.nu_based(a, X, y0).unwrap().value;
            assert!(rel(v, inf) < 1e-9, "a {a} y0 {y0}: {:e}", rel(v, inf));
        }
        assert!(s.nu_based(a, X, c(-3.0, 0.01)).is_err());
    }
}

#[test]
fn nu_regular_at_base_point() {
    let s = surface(8);
    let y0 = c(0.0, 3.0);
    let centre = s.nu(1, y0).unwrap().value;
    for r in [1e-1, 3e-2, 1e-2] {
        for k in 0..6 {
            let x = y0 + C::from_polar(r, k as f64);
            let v = s.nu_based(1, x, y0).unwrap().value;
            assert!((v - centre).norm() < 10.0 * r * centre.norm());
        }
    }
}

#[test]
fn projective_connection_limit() {
    let s = surface(8);
    let f = |h: f64| {
        let y = X + c(h, 0.0);
        6.0 * (s.omega(X, y).unwrap().value - 1.0 / (h * h))
    };
    // the remainder is linear in h
    let extrapolated = (10.0 * f(1e-3) - f(1e-2)) / 9.0;
    let direct = s.projective_connection(X).unwrap().value;
    assert!(rel(extrapolated, direct) < 1e-6, "{:e}", rel(extrapolated, direct));
    assert_eq!(surface(0).projective_connection(X).unwrap().value, C::new(0.0, 0.0));
}

#[test]
fn genus_one_projective_connection() {
    let p = SchottkyParams::new(vec![Handle::new(c(1.0, 0.0), c(-1.0, 0.0), c(0.1, 0.05))]);
    let hd = derive_handle_data(&p).unwrap()[0];
    let s = Surface::new(p, TruncationPolicy::fixed(3)).unwrap();
    // in u = (z - W)/(z - W') the group is u -> q^n u
    for x in [c(0.2, 1.3), c(-2.0, 0.7)] {
        let u = (x - hd.big_w) / (x - hd.big_w_neg);
        let du = (hd.big_w - hd.big_w_neg) / ((x - hd.big_w_neg) * (x - hd.big_w_neg));
        let mut sum = C::new(0.0, 0.0);
        for n in (-3i32..=3).filter(|&n| n != 0) {
            let l = hd.q.powi(n);
            sum += l / ((l - 1.0) * (l - 1.0));
        }
        let want = 6.0 * du * du / (u * u) * sum;
        let got = s.projective_connection(x).unwrap().value;
        assert!(rel(got, want) < 1e-12, "{:e}", rel(got, want));
    }
}

#[test]
fn theta_fit_and_holomorphy() {
    let s = surface(8);
    let cfg = LimitPointConfig::default_for(&s, 2);
    for a in 1..=2 {
        assert!(s.theta_span(&cfg, a, X).unwrap().residual < 1e-8);
    }
    // approach the disc around w_1 from outside
    let p = s.params();
    let r = p.radius(1);
    let far = s.theta_all(&cfg, p.w(1) + c(0.0, 3.0 * r)).unwrap();
    let scale = far.iter().map(|z| z.norm()).fold(0.0, f64::max);
    for t in [1.5, 1.1, 1.02] {
        let v = s.theta_all(&cfg, p.w(1) + c(0.0, t * r)).unwrap();
        assert!(v.iter().all(|z| z.is_finite() && z.norm() < 100.0 * scale));
    }
}

#[test]
fn theta_span_is_config_independent() {
    let s = surface(8);
    let c1 = LimitPointConfig::default_for(&s, 2);
    let c2 = LimitPointConfig::new(vec![LimitPoint::Fixed(-1), LimitPoint::Fixed(2), LimitPoint::Fixed(-2)]);
    let xs: Vec<C> = (0..12).map(|k| C::from_polar(6.0, 0.5 * k as f64 + 0.2)).collect();
    let mut m = DMatrix::zeros(12, 12);
    for (i, &x) in xs.iter().enumerate() {
        let t1 = s.theta_all(&c1, x).unwrap();
        let t2 = s.theta_all(&c2, x).unwrap();
        for j in 0..6 {
            m[(i, j)] = t1[j];
            m[(i, 6 + j)] = t2[j];
        }
    }
    let (a, b) = (m.columns(0, 6).into_owned(), m.columns(6, 6).into_owned());
    assert_eq!(numerical_rank(&a, 1e-8), 3);
    assert_eq!(numerical_rank(&b, 1e-8), 3);
    assert_eq!(numerical_rank(&m, 1e-8), 3);
}

#[test]
fn psi2_config_change_is_quadratic() {
    let s = surface(8);
    let c1 = LimitPointConfig::default_for(&s, 2);
    let c2 = LimitPointConfig::new(vec![LimitPoint::Fixed(-1), LimitPoint::Fixed(2), LimitPoint::Fixed(-2)]);
    let ys: Vec<C> = (0..10).map(|k| C::from_polar(5.0, 0.6 * k as f64)).collect();
    let diff = DVector::from_iterator(
        ys.len(),
        ys.iter().map(|&y| s.psi_n(&c2, 2, X, y).unwrap().value - s.psi_n(&c1, 2, X, y).unwrap().value),
    );
    let v = DMatrix::from_fn(ys.len(), 3, |i, l| (ys[i] / 5.0).powi(l as i32));
    let sol = v.clone().svd(true, true).solve(&diff, 1e-14).unwrap();
    let resid = (&v * sol - &diff).norm() / diff.norm();
    assert!(resid < 1e-8, "{resid:e}");
    // a cubic term is not absorbed
    assert!(diff.norm() > 1e-6);
}

#[test]
fn values_stable_under_longer_words() {
    let (a, b) = (surface(8), surface(10));
    let cfg = LimitPointConfig::default_for(&a, 2);
    let pairs = |s: &Surface| {
        let mut v = vec![
            s.omega(X, Y).unwrap().value,
            s.projective_connection(X).unwrap().value,
            s.omega_n(2, X, Y).unwrap().value,
            s.psi_n(&cfg, 2, X, Y).unwrap().value,
        ];
        v.extend(s.nu_all(X).unwrap());
        v.extend(s.theta_all(&cfg, X).unwrap());
        v
    };
    for (u, w) in pairs(&a).into_iter().zip(pairs(&b)) {
        assert!(rel(u, w) < 1e-8, "{:e}", rel(u, w));
    }
}

#[test]
fn period_matrix_riemann_relations() {
    let s = surface(8);
    let pm = s.period_matrix().unwrap();
    assert!(pm.im_omega_min_eig() > 1e-9);
    let t = &pm.tau;
    assert!((t[(0, 1)] - t[(1, 0)]).norm() < 1e-9);
}

#[test]
fn degeneration_of_diagonal_periods() {
    let offsets: Vec<(Vec<C>, f64)> = [1.0, 0.1, 0.01]
        .iter()
        .map(|&k| {
            let mut p = fixture_params();
            for h in &mut p.handles {
                h.rho *= k;
            }
            let hd = derive_handle_data(&p).unwrap();
            let qmax = hd.iter().map(|h| h.q.norm()).fold(0.0, f64::max);
            let s = Surface::new(p, TruncationPolicy::fixed(8)).unwrap();
            let tau = s.period_matrix().unwrap().tau.clone();
            ((0..2).map(|a| tau[(a, a)] - hd[a].q.ln()).collect(), qmax)
        })
        .collect();
    for a in 0..2 {
        let d1 = (offsets[0].0[a] - offsets[1].0[a]).norm();
        let d2 = (offsets[1].0[a] - offsets[2].0[a]).norm();
        assert!(d1 < 10.0 * offsets[0].1);
        let ratio = d1 / d2;
        assert!((5.0..20.0).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn adaptive_truncation() {
    let p = fixture_params();
    let policy = |l| TruncationPolicy {
        max_word_length: l,
        tail_tol: 1e-10,
        mode: TruncationMode::Adaptive,
    };
    let s = Surface::new(p.clone(), policy(12)).unwrap();
    let want = surface(12).omega(X, Y).unwrap().value;
    assert!(rel(s.omega(X, Y).unwrap().value, want) < 1e-9);
    let short = Surface::new(p, policy(1)).unwrap();
    assert!(matches!(short.omega(X, Y), Err(Error::TailNotConverged { .. })));
}
