//! `Sp(2g, ℤ)` changes of homology basis: transformation of `Ω`, `ν`, `ω`, `s`
//! and the automorphy of `𝒟_n`.

use nalgebra::DMatrix;
use num_complex::Complex64 as C;
use rand::Rng;
use serde::Serialize;

use crate::differentials::{index_set, Surface};
use crate::error::{Error, Result};
use crate::moduli::{check_request, ModuliFunction};
use crate::quadrature::{circle_integral, integrate_polyline};
use crate::virgraphs::{apply_dn, GraphContext};
use crate::TWO_PI_I;

type IMat = DMatrix<i64>;
type CMat = DMatrix<C>;

/// `[A B; C D]` with integer `g × g` blocks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SpElement {
    pub a: IMat,
    pub b: IMat,
    pub c: IMat,
    pub d: IMat,
}

fn cmat(m: &IMat) -> CMat {
    m.map(|v| C::new(v as f64, 0.0))
}

impl SpElement {
    pub fn new(a: IMat, b: IMat, c: IMat, d: IMat) -> Result<Self> {
        let g = a.nrows();
        for m in [&a, &b, &c, &d] {
            if m.nrows() != g || m.ncols() != g {
                return Err(Error::InvalidParams("blocks must be g x g".into()));
            }
        }
        let s = SpElement { a, b, c, d };
        if !s.is_symplectic() {
            return Err(Error::InvalidParams("blocks violate the symplectic relations".into()));
        }
        Ok(s)
    }

    pub fn genus(&self) -> usize {
        self.a.nrows()
    }

    pub fn identity(g: usize) -> Self {
        SpElement {
            a: IMat::identity(g, g),
            b: IMat::zeros(g, g),
            c: IMat::zeros(g, g),
            d: IMat::identity(g, g),
        }
    }

    /// `Ω -> Ω + B` for symmetric `B`.
    pub fn shear(b: IMat) -> Result<Self> {
        let g = b.nrows();
        if b != b.transpose() {
            return Err(Error::InvalidParams("shear matrix must be symmetric".into()));
        }
        Ok(SpElement {
            a: IMat::identity(g, g),
            b,
            c: IMat::zeros(g, g),
            d: IMat::identity(g, g),
        })
    }

    /// `[0 -I; I 0]`.
    pub fn j(g: usize) -> Self {
        SpElement {
            a: IMat::zeros(g, g),
            b: -IMat::identity(g, g),
            c: IMat::identity(g, g),
            d: IMat::zeros(g, g),
        }
    }

    /// Block product `self · other`.
    pub fn compose(&self, o: &SpElement) -> SpElement {
        SpElement {
            a: &self.a * &o.a + &self.b * &o.c,
            b: &self.a * &o.b + &self.b * &o.d,
            c: &self.c * &o.a + &self.d * &o.c,
            d: &self.c * &o.b + &self.d * &o.d,
        }
    }

    /// `[D^T -B^T; -C^T A^T]`.
    pub fn inverse(&self) -> SpElement {
        SpElement {
            a: self.d.transpose(),
            b: -self.b.transpose(),
            c: -self.c.transpose(),
            d: self.a.transpose(),
        }
    }

    /// Exact integer check of all block relations.
    pub fn is_symplectic(&self) -> bool {
        let g = self.genus();
        let id = IMat::identity(g, g);
        let sym = |m: IMat| m == m.transpose();
        &self.a * self.d.transpose() - &self.b * self.c.transpose() == id
            && self.a.transpose() * &self.d - self.c.transpose() * &self.b == id
            && sym(&self.a * self.b.transpose())
            && sym(self.a.transpose() * &self.c)
            && sym(&self.d * self.c.transpose())
            && sym(self.d.transpose() * &self.b)
    }

    pub fn is_identity(&self) -> bool {
        *self == SpElement::identity(self.genus())
    }

    /// `Ω -> (AΩ + B)(CΩ + D)^{-1}` with `M = CΩ + D`.
    pub fn act(&self, omega: &CMat) -> Result<(CMat, CMat)> {
        let m = cmat(&self.c) * omega + cmat(&self.d);
        let n = m
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("C Ω + D".into()))?;
        Ok(((cmat(&self.a) * omega + cmat(&self.b)) * &n, m))
    }
}

/// Random symmetric matrix with entries in `{-1, 0, 1}`.
pub fn random_symmetric<R: Rng>(g: usize, rng: &mut R) -> IMat {
    let mut b = IMat::zeros(g, g);
    for i in 0..g {
        for j in i..g {
            let v = rng.gen_range(-1..=1);
            b[(i, j)] = v;
            b[(j, i)] = v;
        }
    }
    b
}

/// Product of `word_len` random shears and `J^{±1}`.
pub fn random_sp<R: Rng>(g: usize, word_len: usize, rng: &mut R) -> SpElement {
    let mut s = SpElement::identity(g);
    for _ in 0..word_len {
        let gen = match rng.gen_range(0..4) {
            0 | 1 => SpElement::shear(random_symmetric(g, rng)).unwrap(),
            2 => SpElement::j(g),
            _ => SpElement::j(g).inverse(),
        };
        s = s.compose(&gen);
    }
    debug_assert!(s.is_symplectic());
    s
}

/// `Ω`, `M = CΩ + D`, `N = M^{-1}` and `Ω̃ = (AΩ + B)N`.
#[derive(Clone, Debug)]
pub struct ModularFrame {
    pub sp: SpElement,
    pub omega: CMat,
    pub m: CMat,
    pub n: CMat,
    pub omega_tilde: CMat,
}

impl ModularFrame {
    /// `τ̃ = 2πi Ω̃`.
    pub fn tau_tilde(&self) -> CMat {
        &self.omega_tilde * TWO_PI_I
    }

    pub fn nc(&self) -> CMat {
        &self.n * cmat(&self.sp.c)
    }

    /// `det M`.
    pub fn det_m(&self) -> C {
        self.m.determinant()
    }
}

pub fn transform_frame(omega: &CMat, sp: &SpElement) -> Result<ModularFrame> {
    if omega.nrows() != sp.genus() {
        return Err(Error::InvalidParams("genus mismatch".into()));
    }
    let (omega_tilde, m) = sp.act(omega)?;
    let n = m.clone().try_inverse().unwrap();
    Ok(ModularFrame {
        sp: sp.clone(),
        omega: omega.clone(),
        m,
        n,
        omega_tilde,
    })
}

fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `ν̃ = νN`, `ω̃` and `s̃` at two points.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransformedForms {
    pub nu_x: Vec<C>,
    pub nu_y: Vec<C>,
    pub omega: C,
    pub s_x: C,
}

fn bilinear(u: &[C], m: &CMat, v: &[C]) -> C {
    let g = u.len();
    let mut s = C::new(0.0, 0.0);
    for i in 0..g {
        for j in 0..g {
            s += u[i] * m[(i, j)] * v[j];
        }
    }
    s
}

fn row_times(u: &[C], m: &CMat) -> Vec<C> {
    (0..m.ncols())
        .map(|j| (0..u.len()).map(|i| u[i] * m[(i, j)]).sum())
        .collect()
}

/// `ν̃(x) = ν(x)N`.
pub fn nu_tilde(frame: &ModularFrame, nu: &[C]) -> Vec<C> {
    row_times(nu, &frame.n)
}

/// `ω̃(x, y) = ω(x, y) - (1/2πi) ν(x) N C ν(y)^T`.
pub fn omega_tilde(frame: &ModularFrame, omega: C, nu_x: &[C], nu_y: &[C]) -> C {
    omega - bilinear(nu_x, &frame.nc(), nu_y) / TWO_PI_I
}

/// `s̃(x) = s(x) - (3/πi) ν(x) N C ν(x)^T`.
pub fn s_tilde(frame: &ModularFrame, s: C, nu_x: &[C]) -> C {
    s - 6.0 * bilinear(nu_x, &frame.nc(), nu_x) / TWO_PI_I
}

pub fn transformed_differentials(surface: &Surface, sp: &SpElement, x: C, y: C) -> Result<TransformedForms> {
    let frame = transform_frame(&surface.period_matrix()?.omega(), sp)?;
    let nx = surface.nu_all(x)?;
    let ny = surface.nu_all(y)?;
    Ok(TransformedForms {
        nu_x: nu_tilde(&frame, &nx),
        nu_y: nu_tilde(&frame, &ny),
        omega: omega_tilde(&frame, surface.omega(x, y)?.value, &nx, &ny),
        s_x: s_tilde(&frame, surface.projective_connection(x)?.value, &nx),
    })
}

/// `E_ab` for the single variable `τ_ab`, `a <= b`.
fn unit(g: usize, a: usize, b: usize) -> CMat {
    let mut e = CMat::zeros(g, g);
    e[(a, b)] = C::new(1.0, 0.0);
    e[(b, a)] = C::new(1.0, 0.0);
    e
}

fn ordered(p: (usize, usize)) -> (usize, usize) {
    (p.0.min(p.1), p.0.max(p.1))
}

/// `log det(CΩ + D)` as a function of `τ = 2πiΩ`, derivatives to second order.
/// The value uses the principal logarithm.
#[derive(Clone, Debug)]
pub struct LogDetM {
    pub sp: SpElement,
}

impl ModuliFunction for LogDetM {
    fn genus(&self) -> usize {
        self.sp.genus()
    }

    fn max_order(&self) -> usize {
        2
    }

    fn derivative(&self, tau: &CMat, pairs: &[(usize, usize)]) -> Result<C> {
        check_request(self, tau, pairs)?;
        let g = self.genus();
        let frame = transform_frame(&(tau / TWO_PI_I), &self.sp)?;
        let nc = frame.nc();
        let e: Vec<CMat> = pairs.iter().map(|&p| {
            let (a, b) = ordered(p);
            unit(g, a, b)
        }).collect();
        Ok(match pairs.len() {
            0 => frame.det_m().ln(),
            1 => (&nc * &e[0]).trace() / TWO_PI_I,
            _ => -(&nc * &e[0] * &nc * &e[1]).trace() / (TWO_PI_I * TWO_PI_I),
        })
    }
}

/// `∂_{τ_ab} log det M` (`a <= b`, single variable) by central differences with
/// Richardson, using ratios of determinants to stay off the branch cut.
pub fn logdet_gradient_fd(omega: &CMat, sp: &SpElement, h: f64) -> Result<CMat> {
    let g = omega.nrows();
    let det = |o: &CMat| -> Result<C> { Ok(sp.act(o)?.1.determinant()) };
    let mut out = CMat::zeros(g, g);
    for (a, b) in index_set(g) {
        // step in τ_ab is 2πi times the step in Ω_ab
        let e = unit(g, a, b);
        let d = |t: f64| -> Result<C> {
            let dp = det(&(omega + &e * C::new(t, 0.0)))?;
            let dm = det(&(omega - &e * C::new(t, 0.0)))?;
            Ok((dp / dm).ln() / (2.0 * t))
        };
        let v = (4.0 * d(0.5 * h)? - d(h)?) / 3.0 / TWO_PI_I;
        out[(a, b)] = v;
        out[(b, a)] = v;
    }
    Ok(out)
}

/// Residuals of the frame identities for one element.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrameResiduals {
    /// `|N - (A^T - C^T Ω̃)|`.
    pub n_formula: f64,
    /// `|NC - (NC)^T|`.
    pub nc_symmetry: f64,
    /// `|Ω̃ - Ω̃^T|`.
    pub omega_tilde_symmetry: f64,
    /// `|NM - I|`.
    pub nm_identity: f64,
    /// Smallest eigenvalue of `Im Ω̃`.
    pub im_omega_tilde_min_eig: f64,
    /// Largest gap between `(NC)_ab` and the finite-difference derivative of `log det M`.
    pub logdet_derivative: f64,
}

pub fn frame_residuals(omega: &CMat, sp: &SpElement) -> Result<FrameResiduals> {
    let f = transform_frame(omega, sp)?;
    let g = omega.nrows();
    let ct = cmat(&sp.c).transpose();
    let nc = f.nc();
    Ok(FrameResiduals {
        n_formula: max_abs(&(&f.n - (cmat(&sp.a).transpose() - ct * &f.omega_tilde))),
        nc_symmetry: max_abs(&(&nc - nc.transpose())),
        omega_tilde_symmetry: max_abs(&(&f.omega_tilde - f.omega_tilde.transpose())),
        nm_identity: max_abs(&(&f.n * &f.m - CMat::identity(g, g))),
        im_omega_tilde_min_eig: crate::differentials::min_eig_im(&f.omega_tilde),
        logdet_derivative: logdet_derivative_check(omega, sp)?,
    })
}

/// `max |(NC)_ab - c_ab ∂_{Ω_ab} log det M|` with `c = 1` on the diagonal and `1/2` off it.
pub fn logdet_derivative_check(omega: &CMat, sp: &SpElement) -> Result<f64> {
    let f = transform_frame(omega, sp)?;
    let nc = f.nc();
    let grad = logdet_gradient_fd(omega, sp, 1e-3)?;
    let mut worst: f64 = 0.0;
    for (a, b) in index_set(omega.nrows()) {
        let k = if a == b { 1.0 } else { 0.5 };
        // back from τ to Ω units
        let d = grad[(a, b)] * TWO_PI_I * k;
        worst = worst.max((nc[(a, b)] - d).norm());
    }
    Ok(worst)
}

/// Gaps in the forms' transformation laws written through `∂_ab log det M`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FormLawResiduals {
    /// `ω̃ = ω - (1/2) Σ_{a<=b} (ν_a(x)ν_b(y) + ν_b(x)ν_a(y)) ∂_ab log det M`.
    pub omega_law: f64,
    /// `s̃ = s - 6 Σ_{a<=b} ν_a(x)ν_b(x) ∂_ab log det M`.
    pub s_law: f64,
    /// `|ω̃(x, y) - ω̃(y, x)|`.
    pub omega_tilde_symmetry: f64,
}

pub fn form_law_residuals(surface: &Surface, sp: &SpElement, x: C, y: C) -> Result<FormLawResiduals> {
    let omega = surface.period_matrix()?.omega();
    let grad = logdet_gradient_fd(&omega, sp, 1e-3)?;
    let t = transformed_differentials(surface, sp, x, y)?;
    let back = transformed_differentials(surface, sp, y, x)?;
    let nx = surface.nu_all(x)?;
    let ny = surface.nu_all(y)?;
    let mut dw = C::new(0.0, 0.0);
    let mut ds = C::new(0.0, 0.0);
    for (a, b) in index_set(omega.nrows()) {
        dw += 0.5 * (nx[a] * ny[b] + nx[b] * ny[a]) * grad[(a, b)];
        ds += nx[a] * nx[b] * grad[(a, b)];
    }
    let w = surface.omega(x, y)?.value;
    let s = surface.projective_connection(x)?.value;
    Ok(FormLawResiduals {
        omega_law: (t.omega - (w - dw)).norm() / w.norm(),
        s_law: (t.s_x - (s - 6.0 * ds)).norm() / s.norm(),
        omega_tilde_symmetry: (t.omega - back.omega).norm() / t.omega.norm(),
    })
}

/// `(1/2πi) ∮_{α̃_a} ν̃_b` by quadrature, with `α̃ = Cβ + Dα` assembled from
/// β-path integrals and circle integrals of the old `ν`.
pub fn alpha_tilde_periods(surface: &Surface, sp: &SpElement, tol: f64) -> Result<CMat> {
    let g = surface.genus();
    let p = surface.params();
    let mut beta = CMat::zeros(g, g);
    let mut alpha = CMat::zeros(g, g);
    let f = |z: C| surface.nu_all(z);
    for d in 1..=g {
        let path = surface.beta_path(d)?;
        let row = integrate_polyline(&f, &path, g, tol)?;
        let s = d as i32;
        let circ = circle_integral(&f, p.w(-s), 1.5 * p.radius(s), g, tol)?;
        for c in 0..g {
            beta[(d - 1, c)] = row[c];
            alpha[(d - 1, c)] = circ[c];
        }
    }
    let frame = transform_frame(&surface.period_matrix()?.omega(), sp)?;
    let old = cmat(&sp.c) * beta + cmat(&sp.d) * alpha;
    Ok(old * &frame.n / TWO_PI_I)
}

/// `H(τ̃) = det(M)^{c/2} F(τ)` as a function of `τ̃`, where `τ` is recovered through the
/// inverse element. Derivatives to second order.
pub struct Pullback<'a> {
    pub sp: SpElement,
    pub c: C,
    pub f: &'a dyn ModuliFunction,
}

impl ModuliFunction for Pullback<'_> {
    fn genus(&self) -> usize {
        self.sp.genus()
    }

    fn max_order(&self) -> usize {
        2.min(self.f.max_order())
    }

    fn derivative(&self, tau_tilde: &CMat, pairs: &[(usize, usize)]) -> Result<C> {
        check_request(self, tau_tilde, pairs)?;
        let g = self.genus();
        let inv = self.sp.inverse();
        let back = transform_frame(&(tau_tilde / TWO_PI_I), &inv)?;
        let tau = &back.omega_tilde * TWO_PI_I;
        // det M(Ω) = 1 / det M'(Ω̃); principal branch taken on det M itself
        let h0 = (self.c / 2.0 * (1.0 / back.det_m()).ln()).exp();
        let np = &back.n;
        let ncp = &back.n * cmat(&inv.c);
        let ks = index_set(g);
        let e: Vec<CMat> = pairs.iter().map(|&p| {
            let (a, b) = ordered(p);
            unit(g, a, b)
        }).collect();
        // dτ = N'^T dτ̃ N'
        let jac = |ev: &CMat| -> Vec<C> {
            let m = np.transpose() * ev * np;
            ks.iter().map(|&(a, b)| m[(a, b)]).collect()
        };
        let grad_f = |u: usize| self.f.derivative(&tau, &[ks[u]]);
        let lv = |ev: &CMat| -(&ncp * ev).trace() / TWO_PI_I;
        let half_c = self.c / 2.0;
        match pairs.len() {
            0 => Ok(h0 * self.f.value(&tau)?),
            1 => {
                let j = jac(&e[0]);
                let mut gv = C::new(0.0, 0.0);
                for u in 0..ks.len() {
                    gv += j[u] * grad_f(u)?;
                }
                Ok(h0 * (half_c * lv(&e[0]) * self.f.value(&tau)? + gv))
            }
            _ => {
                let (ev, ew) = (&e[0], &e[1]);
                let (jv, jw) = (jac(ev), jac(ew));
                let fu: Vec<C> = (0..ks.len()).map(grad_f).collect::<Result<_>>()?;
                let mut gvw = C::new(0.0, 0.0);
                for u in 0..ks.len() {
                    for w in 0..ks.len() {
                        gvw += jv[u] * jw[w] * self.f.derivative(&tau, &[ks[u], ks[w]])?;
                    }
                }
                let mw = np * cmat(&inv.c) * ew * np;
                let s = -(mw.transpose() * ev * np + np.transpose() * ev * &mw) / TWO_PI_I;
                for (u, &(a, b)) in ks.iter().enumerate() {
                    gvw += s[(a, b)] * fu[u];
                }
                let gv: C = jv.iter().zip(&fu).map(|(j, f)| j * f).sum();
                let gw: C = jw.iter().zip(&fu).map(|(j, f)| j * f).sum();
                let (l1, l2) = (lv(ev), lv(ew));
                let l12 = (&ncp * ev * &ncp * ew).trace() / (TWO_PI_I * TWO_PI_I);
                let g0 = self.f.value(&tau)?;
                Ok(h0 * ((half_c * l12 + half_c * half_c * l1 * l2) * g0 + half_c * (l1 * gw + l2 * gv) + gvw))
            }
        }
    }
}

/// Graph context built from the transformed forms `ν̃`, `ω̃`, `s̃` and `τ̃`.
pub fn tilde_context(surface: &Surface, frame: &ModularFrame, points: &[C]) -> Result<GraphContext> {
    let n = points.len();
    let nus = points
        .iter()
        .map(|&z| surface.nu_all(z))
        .collect::<Result<Vec<_>>>()?;
    let mut edge = CMat::zeros(n, n);
    for i in 0..n {
        let s = surface.projective_connection(points[i])?.value;
        edge[(i, i)] = s_tilde(frame, s, &nus[i]) / 6.0;
        for j in 0..i {
            let w = omega_tilde(frame, surface.omega(points[i], points[j])?.value, &nus[i], &nus[j]);
            edge[(i, j)] = w;
            edge[(j, i)] = w;
        }
    }
    Ok(GraphContext::from_parts(
        nus.iter().map(|v| nu_tilde(frame, v)).collect(),
        edge,
        frame.tau_tilde(),
    ))
}

/// Both sides of `𝒟̃_n (det(M)^{c/2} F) = det(M)^{c/2} 𝒟_n F`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AutomorphyReport {
    pub lhs: C,
    pub rhs: C,
    pub det_m: C,
    pub residual: f64,
}

pub fn verify_automorphy(
    surface: &Surface,
    sp: &SpElement,
    c: C,
    f: &dyn ModuliFunction,
    points: &[C],
) -> Result<AutomorphyReport> {
    if points.len() > 2 {
        return Err(Error::Unsupported("automorphy check implemented for n <= 2".into()));
    }
    let frame = transform_frame(&surface.period_matrix()?.omega(), sp)?;
    let pull = Pullback { sp: sp.clone(), c, f };
    let lhs = apply_dn(&tilde_context(surface, &frame, points)?, c, &pull)?.total;
    let det = frame.det_m();
    let rhs = (c / 2.0 * det.ln()).exp() * apply_dn(&GraphContext::new(surface, points)?, c, f)?.total;
    Ok(AutomorphyReport {
        lhs,
        rhs,
        det_m: det,
        residual: (lhs - rhs).norm() / rhs.norm().max(f64::MIN_POSITIVE),
    })
}
