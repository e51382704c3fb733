//! Parameter-space derivatives, the Möbius generators `𝒟^p` and the operators `∇(x)`,
//! `∇^{(m)}_y(x)` acting on families of forms.

use num_complex::Complex64 as C;
use rayon::prelude::*;
use serde::Serialize;

use crate::differentials::{LimitPoint, LimitPointConfig, Surface};
use crate::error::{Error, Result};
use crate::schottky::SchottkyParams;

/// Finite-difference settings. Steps are relative: `rel_step × min disc separation`
/// for shifts of centres, `rel_step` for the relative change of `rho`.
/// `order` is the accuracy order of the central stencil: 2 (plain), 4 (one Richardson
/// step) or 6 (two); the outermost node sits at the full step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FdConfig {
    pub rel_step: f64,
    pub y_rel_step: f64,
    pub order: usize,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            rel_step: 3e-2,
            y_rel_step: 1e-3,
            order: 6,
        }
    }
}

impl FdConfig {
    /// `(fraction of the step, weight)` with `f' ≈ Σ w (f(+s h) - f(-s h)) / h`.
    pub fn stencil(&self) -> Result<&'static [(f64, f64)]> {
        match self.order {
            2 => Ok(&[(1.0, 0.5)]),
            4 => Ok(&[(1.0, -1.0 / 6.0), (0.5, 4.0 / 3.0)]),
            6 => Ok(&[(1.0, 1.0 / 90.0), (0.5, -4.0 / 9.0), (0.25, 128.0 / 45.0)]),
            o => Err(Error::Unsupported(format!("finite-difference order {o}"))),
        }
    }
}

// Σ w (f(+s h) - f(-s h)) / h over a stencil
fn central<F: FnMut(f64) -> Result<C>>(fd: &FdConfig, h: f64, mut at: F) -> Result<C> {
    let mut d = C::new(0.0, 0.0);
    for &(s, w) in fd.stencil()? {
        d += w * (at(s * h)? - at(-s * h)?);
    }
    Ok(d / h)
}

/// Tangent direction `∂^ℓ_a`: `ℓ = 0` moves `w_a`, `ℓ = 1` is `rho_a ∂_{rho_a}`,
/// `ℓ = 2` is `rho_a ∂_{w_{-a}}`. Handles are numbered from 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ParameterDirection {
    pub a: usize,
    pub l: u8,
}

impl ParameterDirection {
    pub fn new(a: usize, l: u8) -> Self {
        assert!(a >= 1 && l <= 2);
        ParameterDirection { a, l }
    }

    /// Position in the flattened `3(a-1) + ℓ` layout.
    pub fn index(&self) -> usize {
        3 * (self.a - 1) + self.l as usize
    }

    pub fn all(g: usize) -> Vec<ParameterDirection> {
        (1..=g)
            .flat_map(|a| (0..3).map(move |l| ParameterDirection::new(a, l)))
            .collect()
    }

    /// Parameters moved by `t` along the curve whose velocity is this direction.
    pub fn perturb(&self, params: &SchottkyParams, t: f64) -> SchottkyParams {
        let mut p = params.clone();
        let h = &mut p.handles[self.a - 1];
        match self.l {
            0 => h.w += t,
            1 => h.rho *= 1.0 + t,
            _ => h.w_neg += h.rho * t,
        }
        p
    }

    fn step(&self, params: &SchottkyParams, fd: &FdConfig) -> f64 {
        let len = fd.rel_step * params.min_separation();
        match self.l {
            0 => len,
            1 => fd.rel_step,
            _ => len / params.handles[self.a - 1].rho.norm(),
        }
    }
}

/// Central differences of a vector-valued function of the parameters along every
/// direction; returns `[direction][component]`.
pub fn param_gradient<F>(surface: &Surface, fd: &FdConfig, f: F) -> Result<Vec<Vec<C>>>
where
    F: Fn(&Surface) -> Result<Vec<C>> + Sync,
{
    let params = surface.params();
    let dirs = ParameterDirection::all(surface.genus());
    let st = fd.stencil()?;
    let fracs: Vec<f64> = st.iter().flat_map(|&(s, _)| [s, -s]).collect();
    let jobs: Vec<(usize, f64)> = dirs
        .iter()
        .enumerate()
        .flat_map(|(i, d)| {
            let h = d.step(params, fd);
            fracs.iter().map(move |s| (i, s * h)).collect::<Vec<_>>()
        })
        .collect();
    let vals: Vec<Result<Vec<C>>> = jobs
        .par_iter()
        .map(|&(i, t)| {
            let s = surface
                .with_params(dirs[i].perturb(params, t))
                .map_err(|_| Error::StencilInvalid)?;
            f(&s)
        })
        .collect();
    let vals: Vec<Vec<C>> = vals.into_iter().collect::<Result<_>>()?;
    let per = fracs.len();
    Ok(dirs
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let h = d.step(params, fd);
            let v = &vals[i * per..(i + 1) * per];
            (0..v[0].len())
                .map(|k| {
                    st.iter()
                        .enumerate()
                        .map(|(j, &(_, w))| w * (v[2 * j][k] - v[2 * j + 1][k]))
                        .sum::<C>()
                        / h
                })
                .collect()
        })
        .collect())
}

/// A form-valued function of the parameters and of `n` points, differentials stripped.
pub trait Family: Sync {
    fn weights(&self) -> Vec<i32>;
    fn eval(&self, surface: &Surface, points: &[C]) -> Result<C>;
}

/// Family from a closure.
pub struct FnFamily<F> {
    weights: Vec<i32>,
    f: F,
}

impl<F> FnFamily<F>
where
    F: Fn(&Surface, &[C]) -> Result<C> + Sync,
{
    pub fn new(weights: Vec<i32>, f: F) -> Self {
        FnFamily { weights, f }
    }
}

impl<F> Family for FnFamily<F>
where
    F: Fn(&Surface, &[C]) -> Result<C> + Sync,
{
    fn weights(&self) -> Vec<i32> {
        self.weights.clone()
    }

    fn eval(&self, surface: &Surface, points: &[C]) -> Result<C> {
        (self.f)(surface, points)
    }
}

/// `ν_a(y)`.
pub struct NuFamily(pub usize);

impl Family for NuFamily {
    fn weights(&self) -> Vec<i32> {
        vec![1]
    }
    fn eval(&self, s: &Surface, y: &[C]) -> Result<C> {
        Ok(s.nu(self.0, y[0])?.value)
    }
}

/// `ω(y_1, y_2)`.
pub struct OmegaFamily;

impl Family for OmegaFamily {
    fn weights(&self) -> Vec<i32> {
        vec![1, 1]
    }
    fn eval(&self, s: &Surface, y: &[C]) -> Result<C> {
        Ok(s.omega(y[0], y[1])?.value)
    }
}

/// `s(y)`.
pub struct ProjConnFamily;

impl Family for ProjConnFamily {
    fn weights(&self) -> Vec<i32> {
        vec![2]
    }
    fn eval(&self, s: &Surface, y: &[C]) -> Result<C> {
        Ok(s.projective_connection(y[0])?.value)
    }
}

/// Period matrix entry `τ_ab` (0-based), no point arguments.
pub struct TauFamily(pub usize, pub usize);

impl Family for TauFamily {
    fn weights(&self) -> Vec<i32> {
        Vec::new()
    }
    fn eval(&self, s: &Surface, _: &[C]) -> Result<C> {
        Ok(s.period_matrix()?.tau[(self.0, self.1)])
    }
}

/// Derivative of a family in point `k`, central differences at the base parameters.
pub fn d_point(
    family: &dyn Family,
    surface: &Surface,
    points: &[C],
    k: usize,
    fd: &FdConfig,
) -> Result<C> {
    let h = fd.y_rel_step * surface.params().min_separation();
    let at = |t: f64| {
        let mut p = points.to_vec();
        p[k] += t;
        family.eval(surface, &p)
    };
    central(fd, h, at)
}

/// Single directional derivative `∂^ℓ_a` of a family.
pub fn fd_derivative(
    surface: &Surface,
    family: &dyn Family,
    dir: ParameterDirection,
    points: &[C],
    fd: &FdConfig,
) -> Result<C> {
    let params = surface.params();
    if dir.a == 0 || dir.a > params.genus {
        return Err(Error::InvalidParams(format!("no handle {}", dir.a)));
    }
    let h = dir.step(params, fd);
    let at = |t: f64| {
        let s = surface
            .with_params(dir.perturb(params, t))
            .map_err(|_| Error::StencilInvalid)?;
        family.eval(&s, points)
    };
    central(fd, h, at)
}

/// `p(z) = c0 + c1 z + c2 z^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QuadraticPolynomial {
    pub c0: C,
    pub c1: C,
    pub c2: C,
}

impl QuadraticPolynomial {
    pub fn new(c0: C, c1: C, c2: C) -> Self {
        QuadraticPolynomial { c0, c1, c2 }
    }

    pub fn eval(&self, z: C) -> C {
        self.c0 + z * (self.c1 + z * self.c2)
    }

    pub fn deriv(&self, z: C) -> C {
        self.c1 + 2.0 * self.c2 * z
    }

    /// The quadratic through three points.
    pub fn interpolate(z: [C; 3], v: [C; 3]) -> Result<Self> {
        let d01 = z[0] - z[1];
        let d02 = z[0] - z[2];
        let d12 = z[1] - z[2];
        if d01.norm() == 0.0 || d02.norm() == 0.0 || d12.norm() == 0.0 {
            return Err(Error::Singular("interpolation nodes coincide".into()));
        }
        // Newton divided differences
        let f01 = (v[0] - v[1]) / d01;
        let f12 = (v[1] - v[2]) / d12;
        let f012 = (f01 - f12) / d02;
        let c2 = f012;
        let c1 = f01 - f012 * (z[0] + z[1]);
        let c0 = v[0] - c1 * z[0] - c2 * z[0] * z[0];
        Ok(QuadraticPolynomial { c0, c1, c2 })
    }

    /// Coefficients `p^ℓ_a = p^{(ℓ)}(w_a) + rho_a^{1-ℓ} p^{(2-ℓ)}(w_{-a})` in the `3(a-1) + ℓ` layout.
    pub fn mobius_coefficients(&self, params: &SchottkyParams) -> Vec<C> {
        let mut out = Vec::with_capacity(3 * params.genus);
        for h in &params.handles {
            out.push(self.eval(h.w) + h.rho * self.c2);
            out.push(self.deriv(h.w) + self.deriv(h.w_neg));
            out.push(self.c2 + self.eval(h.w_neg) / h.rho);
        }
        out
    }
}

fn contract(coeffs: &[C], grad: &[Vec<C>], k: usize) -> C {
    coeffs.iter().zip(grad).map(|(c, g)| c * g[k]).sum()
}

/// `𝒟^p H` on the parameter dependence only.
pub fn mobius_generator_apply(
    surface: &Surface,
    p: &QuadraticPolynomial,
    family: &dyn Family,
    points: &[C],
    fd: &FdConfig,
) -> Result<C> {
    let coeffs = p.mobius_coefficients(surface.params());
    let grad = param_gradient(surface, fd, |s| Ok(vec![family.eval(s, points)?]))?;
    Ok(contract(&coeffs, &grad, 0))
}

/// `𝒟^{p,(m)}_y H = 𝒟^p H + Σ_k (p(y_k) ∂_{y_k} + m_k p'(y_k)) H`.
pub fn mobius_generator_form(
    surface: &Surface,
    p: &QuadraticPolynomial,
    family: &dyn Family,
    points: &[C],
    fd: &FdConfig,
) -> Result<C> {
    let mut v = mobius_generator_apply(surface, p, family, points, fd)?;
    let h = family.eval(surface, points)?;
    for (k, &m) in family.weights().iter().enumerate() {
        let y = points[k];
        v += p.eval(y) * d_point(family, surface, points, k, fd)? + m as f64 * p.deriv(y) * h;
    }
    Ok(v)
}

/// Which `Ψ` kernel accompanies a `∇`.
#[derive(Clone, Debug, PartialEq)]
pub enum Frame {
    /// `∇` from the quasiperiods of `Ψ_2` with the given limit points, paired with `Ψ_2`.
    Bers(LimitPointConfig),
    /// The limit-point-free `∇_𝔐`, paired with `Ψ_𝔐` from the Wronskian formula.
    Moduli,
}

/// `∇(x)` frozen at a point `x`: its coefficients on the tangent basis.
#[derive(Clone, Debug)]
pub struct Nabla {
    pub x: C,
    pub frame: Frame,
    coeffs: Vec<C>,
}

/// The frame fixing `∇_𝔐`: the limit points `(W_1, W_{-1}, W_2)`.
pub fn moduli_frame() -> LimitPointConfig {
    LimitPointConfig::new(vec![
        LimitPoint::Fixed(1),
        LimitPoint::Fixed(-1),
        LimitPoint::Fixed(2),
    ])
}

impl Nabla {
    pub fn bers(surface: &Surface, config: &LimitPointConfig, x: C) -> Result<Nabla> {
        Ok(Nabla {
            x,
            frame: Frame::Bers(config.clone()),
            coeffs: surface.theta_all(config, x)?,
        })
    }

    /// `∇_𝔐(x) = ∇_A(x) - 𝒟^{p_x}`, with `p_x` the quadratic through `∇_A(x) W_c`
    /// at the three frame points; the result does not depend on `A`.
    pub fn moduli(surface: &Surface, x: C, fd: &FdConfig) -> Result<Nabla> {
        Nabla::moduli_from(surface, &moduli_frame(), x, fd)
    }

    /// As [`Nabla::moduli`], starting from the quasiperiods of `Ψ_2` for `config`.
    pub fn moduli_from(
        surface: &Surface,
        config: &LimitPointConfig,
        x: C,
        fd: &FdConfig,
    ) -> Result<Nabla> {
        if surface.genus() < 2 {
            return Err(Error::Unsupported("moduli variations need g >= 2".into()));
        }
        let theta = surface.theta_all(config, x)?;
        let frame = moduli_frame();
        let grad = param_gradient(surface, fd, |s| frame.resolve(s))?;
        let z = frame.resolve(surface)?;
        let v = [0, 1, 2].map(|c| contract(&theta, &grad, c));
        let px = QuadraticPolynomial::interpolate([z[0], z[1], z[2]], v)?;
        let shift = px.mobius_coefficients(surface.params());
        Ok(Nabla {
            x,
            frame: Frame::Moduli,
            coeffs: theta.iter().zip(shift).map(|(t, s)| t - s).collect(),
        })
    }

    /// Coefficients on `∂^ℓ_a`, layout `3(a-1) + ℓ`.
    pub fn coefficients(&self) -> &[C] {
        &self.coeffs
    }

    /// Contracts a precomputed parameter gradient, component `k`.
    pub fn contract(&self, grad: &[Vec<C>], k: usize) -> C {
        contract(&self.coeffs, grad, k)
    }

    /// `∇(x) H` on the parameter dependence of `H` at fixed points.
    pub fn apply(
        &self,
        surface: &Surface,
        family: &dyn Family,
        points: &[C],
        fd: &FdConfig,
    ) -> Result<crate::FormValue> {
        let grad = param_gradient(surface, fd, |s| Ok(vec![family.eval(s, points)?]))?;
        let mut w = vec![2];
        w.extend(family.weights());
        Ok(crate::FormValue::new(self.contract(&grad, 0), w))
    }

    /// `Ψ(x, y)` and `∂_y Ψ(x, y)` for the kernel paired with this frame.
    pub fn kernel(&self, surface: &Surface, y: C, fd: &FdConfig) -> Result<(C, C)> {
        match &self.frame {
            Frame::Bers(cfg) => surface.psi2_with_dy(cfg, self.x, y),
            Frame::Moduli => {
                let p = psi_moduli_jet(surface, self, y, (1, 2), fd)?;
                Ok((p.value, p.dy))
            }
        }
    }

    /// `∇^{(m)}_y(x) H = ∇(x) H + Σ_k (Ψ(x, y_k) ∂_{y_k} H + m_k ∂_{y_k}Ψ(x, y_k) H)`.
    pub fn apply_form(
        &self,
        surface: &Surface,
        family: &dyn Family,
        points: &[C],
        fd: &FdConfig,
    ) -> Result<crate::FormValue> {
        let base = self.apply(surface, family, points, fd)?;
        let h = family.eval(surface, points)?;
        let mut v = base.value;
        for (k, &m) in family.weights().iter().enumerate() {
            let (psi, dpsi) = self.kernel(surface, points[k], fd)?;
            v += psi * d_point(family, surface, points, k, fd)? + m as f64 * dpsi * h;
        }
        Ok(crate::FormValue::new(v, base.weights))
    }
}

/// `Ψ_𝔐(x, y)` with its `y` derivative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PsiModuli {
    pub value: C,
    pub dy: C,
}

/// `Ψ_𝔐(x, y)` from the two-row Wronskian formula with handle rows `(a, b)`.
pub fn psi_moduli(
    surface: &Surface,
    x: C,
    y: C,
    rows: (usize, usize),
    fd: &FdConfig,
) -> Result<crate::FormValue> {
    let nab = Nabla::moduli(surface, x, fd)?;
    let p = psi_moduli_jet(surface, &nab, y, rows, fd)?;
    Ok(crate::FormValue::new(p.value, vec![2, -1]))
}

pub fn psi_moduli_jet(
    surface: &Surface,
    nab: &Nabla,
    y: C,
    rows: (usize, usize),
    fd: &FdConfig,
) -> Result<PsiModuli> {
    let g = surface.genus();
    let (a, b) = rows;
    if g < 2 {
        return Err(Error::Unsupported("Psi_M needs g >= 2".into()));
    }
    if a == b || a == 0 || b == 0 || a > g || b > g {
        return Err(Error::InvalidParams(format!("rows ({a}, {b})")));
    }
    let pick = |jet: Vec<C>| -> Vec<C> {
        let (ia, ib) = (3 * (a - 1), 3 * (b - 1));
        jet[ia..ia + 3].iter().chain(&jet[ib..ib + 3]).copied().collect()
    };
    let grad = param_gradient(surface, fd, |s| Ok(pick(s.nu_jet(y)?)))?;
    let nj: Vec<C> = (0..6).map(|k| nab.contract(&grad, k)).collect();
    let j = pick(surface.nu_jet(y)?);
    let nux = surface.nu_all(nab.x)?;
    let (nxa, nxb) = (nux[a - 1], nux[b - 1]);
    let w = surface.omega(nab.x, y)?.value;
    let wy = surface.d_omega_dy(nab.x, y)?;
    // ν_a(y) = j[0], ν_a' = j[1], ν_a'' = j[2]; same for b at 3..6
    let num = w * (j[0] * nxb - j[3] * nxa) - (j[0] * nj[3] - j[3] * nj[0]);
    let den = j[0] * j[4] - j[3] * j[1];
    let dnum = wy * (j[0] * nxb - j[3] * nxa) + w * (j[1] * nxb - j[4] * nxa)
        - (j[1] * nj[3] + j[0] * nj[4] - j[4] * nj[0] - j[3] * nj[1]);
    let dden = j[0] * j[5] - j[3] * j[2];
    let scale = (j[0].norm() * j[4].norm()).max(j[3].norm() * j[1].norm());
    if den.norm() <= 1e-12 * scale {
        return Err(Error::Singular(format!("Wronskian vanishes at y = {y}")));
    }
    Ok(PsiModuli {
        value: num / den,
        dy: (dnum * den - num * dden) / (den * den),
    })
}

/// Worst relative residuals of the four variational identities at one point set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IdentityResiduals {
    pub rauch: f64,
    pub nabla_nu: f64,
    pub nabla_omega: f64,
    pub nabla_s: f64,
}

impl IdentityResiduals {
    pub fn max(&self) -> f64 {
        self.rauch
            .max(self.nabla_nu)
            .max(self.nabla_omega)
            .max(self.nabla_s)
    }
}

/// Values of both sides of the four identities, for cross-frame comparisons.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityValues {
    pub rauch: Vec<(C, C)>,
    pub nabla_nu: Vec<(C, C)>,
    pub nabla_omega: (C, C),
    pub nabla_s: (C, C),
}

fn rel(pair: &(C, C)) -> f64 {
    (pair.0 - pair.1).norm() / pair.1.norm().max(f64::MIN_POSITIVE)
}

impl IdentityValues {
    pub fn residuals(&self) -> IdentityResiduals {
        IdentityResiduals {
            rauch: self.rauch.iter().map(rel).fold(0.0, f64::max),
            nabla_nu: self.nabla_nu.iter().map(rel).fold(0.0, f64::max),
            nabla_omega: rel(&self.nabla_omega),
            nabla_s: rel(&self.nabla_s),
        }
    }
}

/// Evaluates `∇τ_ab = ν_aν_b`, `∇^{(1)}ν_a(y) = ω(x,y)ν_a(x)`,
/// `∇^{(1,1)}ω(y_1,y_2) = ω(x,y_1)ω(x,y_2)` and `(1/6)∇^{(2)}s(y) = ω(x,y)^2 - ω_2(x,y)`.
/// Each pair holds (operator side, closed side).
pub fn identity_values(
    surface: &Surface,
    nab: &Nabla,
    y: C,
    y1: C,
    y2: C,
    fd: &FdConfig,
) -> Result<IdentityValues> {
    let g = surface.genus();
    let x = nab.x;
    // one stencil pass for every parameter derivative
    let grad = param_gradient(surface, fd, |s| {
        let tau = &s.period_matrix()?.tau;
        let mut v: Vec<C> = tau.iter().copied().collect();
        v.extend(s.nu_all(y)?);
        v.push(s.omega(y1, y2)?.value);
        v.push(s.projective_connection(y)?.value);
        Ok(v)
    })?;
    let gg = g * g;
    let nux = surface.nu_all(x)?;
    let mut rauch = Vec::new();
    for a in 0..g {
        for b in a..g {
            // column-major storage
            rauch.push((nab.contract(&grad, a + g * b), nux[a] * nux[b]));
        }
    }
    let (psi, dpsi) = nab.kernel(surface, y, fd)?;
    let (psi1, dpsi1) = nab.kernel(surface, y1, fd)?;
    let (psi2, dpsi2) = nab.kernel(surface, y2, fd)?;
    let jet = surface.nu_jet(y)?;
    let wxy = surface.omega(x, y)?.value;
    let mut nabla_nu = Vec::new();
    for a in 0..g {
        let lhs = nab.contract(&grad, gg + a) + psi * jet[3 * a + 1] + dpsi * jet[3 * a];
        nabla_nu.push((lhs, wxy * nux[a]));
    }
    let w12 = surface.omega(y1, y2)?.value;
    let d1 = surface.d_omega_dy(y2, y1)?;
    let d2 = surface.d_omega_dy(y1, y2)?;
    let lhs_w = nab.contract(&grad, gg + g) + psi1 * d1 + dpsi1 * w12 + psi2 * d2 + dpsi2 * w12;
    let rhs_w = surface.omega(x, y1)?.value * surface.omega(x, y2)?.value;
    let s = surface.projective_connection(y)?.value;
    let ds = d_point(&ProjConnFamily, surface, &[y], 0, fd)?;
    let lhs_s = (nab.contract(&grad, gg + g + 1) + psi * ds + 2.0 * dpsi * s) / 6.0;
    let rhs_s = wxy * wxy - surface.omega_n(2, x, y)?.value;
    Ok(IdentityValues {
        rauch,
        nabla_nu,
        nabla_omega: (lhs_w, rhs_w),
        nabla_s: (lhs_s, rhs_s),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schottky::Handle;
    use crate::TruncationPolicy;

    fn re(x: f64) -> C {
        C::new(x, 0.0)
    }

    fn fixture() -> Surface {
        let p = SchottkyParams::new(vec![
            Handle::new(re(-3.0), re(-1.0), re(0.02)),
            Handle::new(re(1.0), re(3.0), re(0.02)),
        ]);
        Surface::new(p, TruncationPolicy::default()).unwrap()
    }

    #[test]
    fn coordinate_derivatives() {
        let s = fixture();
        let fd = FdConfig::default();
        for b in 1..=2 {
            let wb = FnFamily::new(vec![], move |s: &Surface, _: &[C]| {
                Ok(s.params().handles[b - 1].w)
            });
            let rb = FnFamily::new(vec![], move |s: &Surface, _: &[C]| {
                Ok(s.params().handles[b - 1].rho)
            });
            for a in 1..=2 {
                let d = fd_derivative(&s, &wb, ParameterDirection::new(a, 0), &[], &fd).unwrap();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((d - want).norm() < 1e-12);
                let d = fd_derivative(&s, &rb, ParameterDirection::new(a, 1), &[], &fd).unwrap();
                let want = if a == b { s.params().handles[a - 1].rho } else { re(0.0) };
                assert!((d - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn interpolation_reproduces() {
        let p = QuadraticPolynomial::new(C::new(0.3, 1.0), C::new(-2.0, 0.5), C::new(0.7, -0.1));
        let z = [C::new(1.0, 2.0), C::new(-1.0, 0.0), C::new(3.0, -1.0)];
        let q = QuadraticPolynomial::interpolate(z, z.map(|z| p.eval(z))).unwrap();
        assert!((q.c0 - p.c0).norm() < 1e-12);
        assert!((q.c1 - p.c1).norm() < 1e-12);
        assert!((q.c2 - p.c2).norm() < 1e-12);
    }

    #[test]
    fn stencil_error_ratios() {
        let s = fixture();
        let f = FnFamily::new(vec![], |s: &Surface, _: &[C]| Ok(s.params().handles[0].w.exp()));
        let exact = s.params().handles[0].w.exp();
        let dir = ParameterDirection::new(1, 0);
        let e = |rel: f64, order: usize| {
            let fd = FdConfig {
                rel_step: rel,
                y_rel_step: 1e-3,
                order,
            };
            (fd_derivative(&s, &f, dir, &[], &fd).unwrap() - exact).norm()
        };
        for (order, lo, want) in [(2, 1e-2, 4.0), (4, 5e-2, 16.0), (6, 1e-1, 64.0)] {
            let ratio = e(lo, order) / e(lo / 2.0, order);
            assert!((ratio / want - 1.0).abs() < 0.05, "order {order}: ratio {ratio}");
        }
        let bad = FdConfig {
            order: 3,
            ..FdConfig::default()
        };
        assert!(bad.stencil().is_err());
    }
}
