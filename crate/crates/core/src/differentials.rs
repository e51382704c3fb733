//! Poincaré-series differentials on a Schottky surface.
//!
//! All forms are returned with their differentials stripped. Series run over the
//! cached matrix table of reduced words, summed shell by shell.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kahan::Kahan;
use crate::schottky::{
    derive_handle_data, generator_matrix, group_table, letter_slot, HandleData, MobiusMap,
    SchottkyParams,
};
use crate::TWO_PI_I;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TruncationMode {
    #[default]
    Fixed,
    Adaptive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TruncationPolicy {
    pub max_word_length: usize,
    pub tail_tol: f64,
    pub mode: TruncationMode,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        TruncationPolicy {
            max_word_length: 8,
            tail_tol: 1e-10,
            mode: TruncationMode::Fixed,
        }
    }
}

impl TruncationPolicy {
    pub fn fixed(max_word_length: usize) -> Self {
        TruncationPolicy {
            max_word_length,
            ..Default::default()
        }
    }
}

/// A scalar coefficient together with the form weight in each point argument.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FormValue {
    pub value: C,
    pub weights: Vec<i32>,
}

impl FormValue {
    pub fn new(value: C, weights: Vec<i32>) -> Self {
        FormValue { value, weights }
    }

    pub fn try_add(&self, other: &FormValue) -> Result<FormValue> {
        if self.weights != other.weights {
            return Err(Error::WeightMismatch(
                self.weights.clone(),
                other.weights.clone(),
            ));
        }
        Ok(FormValue::new(self.value + other.value, self.weights.clone()))
    }

    pub fn scale(&self, k: C) -> FormValue {
        FormValue::new(self.value * k, self.weights.clone())
    }
}

/// A limit point (or, for `N = 1`, an ordinary point) given symbolically so it
/// follows the group when the parameters move.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LimitPoint {
    /// Fixed point `W_a` of the generator with signed index `a`.
    Fixed(i32),
    /// `γ W_a` for the reduced word `γ`.
    Image(Vec<i32>, i32),
    /// An explicit point.
    Point(C),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitPointConfig {
    pub points: Vec<LimitPoint>,
}

impl LimitPointConfig {
    pub fn new(points: Vec<LimitPoint>) -> Self {
        LimitPointConfig { points }
    }

    /// `(W_1, W_{-1}, W_2, ...)` then images `γ_1 W_b`, as many as `2N - 1` needs.
    /// For `N = 1` a single ordinary point far above the discs.
    pub fn default_for(surface: &Surface, n: usize) -> Self {
        if n <= 1 {
            let p = surface.params();
            let centre = p
                .signed_indices()
                .iter()
                .map(|&a| p.w(a))
                .sum::<C>()
                / (2 * p.genus) as f64;
            return LimitPointConfig::new(vec![LimitPoint::Point(
                centre + C::new(0.0, p.diameter()),
            )]);
        }
        let need = 2 * n - 1;
        let g = surface.genus() as i32;
        let mut pts: Vec<LimitPoint> = (1..=g)
            .flat_map(|a| [LimitPoint::Fixed(a), LimitPoint::Fixed(-a)])
            .collect();
        'outer: for a in (1..=g).flat_map(|a| [a, -a]) {
            for b in (1..=g).flat_map(|b| [b, -b]) {
                if b != a && b != -a {
                    pts.push(LimitPoint::Image(vec![a], b));
                    if pts.len() >= need {
                        break 'outer;
                    }
                }
            }
        }
        pts.truncate(need);
        LimitPointConfig::new(pts)
    }

    pub fn resolve(&self, surface: &Surface) -> Result<Vec<C>> {
        let p = surface.params();
        let mut out = Vec::with_capacity(self.points.len());
        for lp in &self.points {
            let z = match lp {
                LimitPoint::Fixed(a) => surface.fixed_point(*a)?,
                LimitPoint::Image(word, a) => {
                    let mut z = surface.fixed_point(*a)?;
                    for &l in word.iter().rev() {
                        if l == 0 || l.unsigned_abs() as usize > p.genus {
                            return Err(Error::LimitPoints(format!("bad letter {l}")));
                        }
                        z = generator_matrix(p, l).apply(z);
                    }
                    z
                }
                LimitPoint::Point(z) => *z,
            };
            out.push(z);
        }
        for i in 0..out.len() {
            for j in 0..i {
                if (out[i] - out[j]).norm() < 1e-12 * surface.scale() {
                    return Err(Error::LimitPoints(format!(
                        "points {} and {} coincide",
                        j, i
                    )));
                }
            }
        }
        Ok(out)
    }
}

/// Period matrix with its label set of coordinate entries (0-based pairs `a <= b`).
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodMatrix {
    pub tau: DMatrix<C>,
    pub index_set_k: Vec<(usize, usize)>,
    /// `max |τ_ab - τ_ba|` before symmetrisation.
    pub asymmetry: f64,
}

impl PeriodMatrix {
    /// `Ω = τ / 2πi`.
    pub fn omega(&self) -> DMatrix<C> {
        self.tau.map(|t| t / TWO_PI_I)
    }

    /// Smallest eigenvalue of `Im Ω`.
    pub fn im_omega_min_eig(&self) -> f64 {
        min_eig_im(&self.omega())
    }
}

pub(crate) fn min_eig_im(omega: &DMatrix<C>) -> f64 {
    let im = omega.map(|z| z.im);
    let sym = 0.5 * (&im + im.transpose());
    sym.symmetric_eigenvalues().min()
}

/// Least-squares quasiperiod fit for one handle.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThetaFit {
    /// Coefficients `Θ^ℓ` for `ℓ = 0..2N-2`.
    pub coeffs: Vec<C>,
    /// `|A c - b| / |b|`.
    pub residual: f64,
}

/// Schottky surface with a cached group table.
pub struct Surface {
    params: SchottkyParams,
    handles: Vec<HandleData>,
    policy: TruncationPolicy,
    mats: Vec<MobiusMap>,
    offsets: Vec<usize>,
    first: Vec<u8>,
    suffix: Vec<u32>,
    scale: f64,
    period: OnceLock<Result<PeriodMatrix>>,
}

impl std::fmt::Debug for Surface {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Surface")
            .field("params", &self.params)
            .field("policy", &self.policy)
            .field("elements", &self.mats.len())
            .finish()
    }
}

const POLE_GUARD: f64 = 1e-6;

#[inline]
fn pq(m: &MobiusMap, x: C) -> (C, C) {
    (m.a * x + m.b, m.c * x + m.d)
}

impl Surface {
    pub fn new(params: SchottkyParams, policy: TruncationPolicy) -> Result<Self> {
        if !(policy.tail_tol > 0.0) {
            return Err(Error::InvalidParams("tail_tol must be positive".into()));
        }
        let handles = derive_handle_data(&params)?;
        let table = group_table(&params, policy.max_word_length);
        let scale = params.diameter();
        Ok(Surface {
            params,
            handles,
            policy,
            mats: table.mats,
            offsets: table.offsets,
            first: table.first,
            suffix: table.suffix,
            scale,
            period: OnceLock::new(),
        })
    }

    pub fn params(&self) -> &SchottkyParams {
        &self.params
    }

    pub fn handle_data(&self) -> &[HandleData] {
        &self.handles
    }

    pub fn policy(&self) -> TruncationPolicy {
        self.policy
    }

    pub fn genus(&self) -> usize {
        self.params.genus
    }

    /// Configuration diameter.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn group_len(&self) -> usize {
        self.mats.len()
    }

    pub fn with_params(&self, params: SchottkyParams) -> Result<Surface> {
        Surface::new(params, self.policy)
    }

    pub fn with_policy(&self, policy: TruncationPolicy) -> Result<Surface> {
        Surface::new(self.params.clone(), policy)
    }

    /// `W_a` for signed `a` (repelling fixed point of `γ_a`).
    pub fn fixed_point(&self, a: i32) -> Result<C> {
        if a == 0 || a.unsigned_abs() as usize > self.genus() {
            return Err(Error::LimitPoints(format!("no fixed point W_{a}")));
        }
        let h = &self.handles[a.unsigned_abs() as usize - 1];
        Ok(if a > 0 { h.big_w } else { h.big_w_neg })
    }

    /// Sums `f` over the group table. `f` receives the table index and matrix and
    /// must fill every slot of its output buffer.
    pub(crate) fn series<F>(&self, dim: usize, skip_identity: bool, mut f: F) -> Result<Vec<C>>
    where
        F: FnMut(usize, &MobiusMap, &mut [C]) -> Result<()>,
    {
        let mut total = vec![Kahan::default(); dim];
        let mut term = vec![C::new(0.0, 0.0); dim];
        let adaptive = self.policy.mode == TruncationMode::Adaptive;
        let nshell = self.offsets.len() - 1;
        let mut ratio = 0.0;
        for k in 0..nshell {
            let mut shell = vec![Kahan::default(); dim];
            for idx in self.offsets[k]..self.offsets[k + 1] {
                if skip_identity && idx == 0 {
                    continue;
                }
                f(idx, &self.mats[idx], &mut term)?;
                for i in 0..dim {
                    shell[i].add(term[i]);
                }
            }
            let mut smag: f64 = 0.0;
            for i in 0..dim {
                let s = shell[i].total();
                smag = smag.max(s.norm());
                total[i].add(s);
            }
            if adaptive && k >= 1 {
                let tmag = total.iter().map(|t| t.total().norm()).fold(0.0, f64::max);
                ratio = if tmag > 0.0 { smag / tmag } else { 0.0 };
                if ratio <= self.policy.tail_tol {
                    return Ok(total.iter().map(Kahan::total).collect());
                }
            }
        }
        if adaptive && nshell > 1 {
            return Err(Error::TailNotConverged {
                max_len: self.policy.max_word_length,
                ratio,
            });
        }
        let out: Vec<C> = total.iter().map(Kahan::total).collect();
        if out.iter().any(|z| !z.is_finite()) {
            return Err(Error::IllConditioned("non-finite Poincaré series".into()));
        }
        Ok(out)
    }

    #[inline]
    fn guarded(&self, p: C, q: C, y: C) -> Result<C> {
        let d = p - y * q;
        if d.norm() < POLE_GUARD * self.scale * q.norm() {
            return Err(Error::PoleProximity {
                point: y,
                distance: (d / q).norm(),
            });
        }
        Ok(d)
    }

    /// Shell magnitudes of the `ω(x, y)` series, for truncation diagnostics.
    pub fn shell_profile(&self, x: C, y: C) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for k in 0..self.offsets.len() - 1 {
            let mut s = Kahan::default();
            for m in &self.mats[self.offsets[k]..self.offsets[k + 1]] {
                let (p, q) = pq(m, x);
                let d = self.guarded(p, q, y)?;
                s.add(1.0 / (d * d));
            }
            out.push(s.total().norm());
        }
        Ok(out)
    }

    /// `ω(x, y) = Σ γ'(x) / (γx - y)^2`.
    pub fn omega(&self, x: C, y: C) -> Result<FormValue> {
        Ok(FormValue::new(self.omega_n_raw(1, x, y)?, vec![1, 1]))
    }

    /// `Σ γ'(x)^N / (γx - y)^{2N}`.
    pub fn omega_n(&self, n: usize, x: C, y: C) -> Result<FormValue> {
        if n == 0 {
            return Err(Error::Unsupported("omega_N needs N >= 1".into()));
        }
        let w = n as i32;
        Ok(FormValue::new(self.omega_n_raw(n, x, y)?, vec![w, w]))
    }

    fn omega_n_raw(&self, n: usize, x: C, y: C) -> Result<C> {
        let e = 2 * n as i32;
        Ok(self.series(1, false, |_, m, out| {
            let (p, q) = pq(m, x);
            let d = self.guarded(p, q, y)?;
            out[0] = d.powi(-e);
            Ok(())
        })?[0])
    }

    /// `∂_y ω(x, y)`.
    pub fn d_omega_dy(&self, x: C, y: C) -> Result<C> {
        Ok(self.series(1, false, |_, m, out| {
            let (p, q) = pq(m, x);
            let d = self.guarded(p, q, y)?;
            out[0] = 2.0 * q / (d * d * d);
            Ok(())
        })?[0])
    }

    /// `s(x) = 6 Σ_{γ ≠ 1} γ'(x) / (γx - x)^2`.
    pub fn projective_connection(&self, x: C) -> Result<FormValue> {
        let v = self.series(1, true, |_, m, out| {
            let (p, q) = pq(m, x);
            let d = self.guarded(p, q, x)?;
            out[0] = 1.0 / (d * d);
            Ok(())
        })?[0];
        Ok(FormValue::new(6.0 * v, vec![2]))
    }

    fn check_handle(&self, a: usize) -> Result<()> {
        if a == 0 || a > self.genus() {
            return Err(Error::InvalidParams(format!("no handle {a}")));
        }
        Ok(())
    }

    /// Holomorphic 1-form `ν_a(x)` (handles numbered from 1), with base point at infinity:
    /// `Σ γ'(x) / (γx - w_{-a})`.
    pub fn nu(&self, a: usize, x: C) -> Result<FormValue> {
        self.check_handle(a)?;
        let c = self.params.w(-(a as i32));
        let v = self.series(1, false, |_, m, out| {
            let (p, q) = pq(m, x);
            out[0] = 1.0 / (q * (p - c * q));
            Ok(())
        })?[0];
        Ok(FormValue::new(v, vec![1]))
    }

    /// `Ψ_1(x, γ_a y_0) - Ψ_1(x, y_0)` for a finite base point outside the discs.
    pub fn nu_based(&self, a: usize, x: C, y0: C) -> Result<FormValue> {
        self.check_handle(a)?;
        if !self.params.outside_discs(y0) {
            return Err(Error::InsideDisc(y0));
        }
        let y1 = generator_matrix(&self.params, a as i32).apply(y0);
        let v = self.series(1, false, |_, m, out| {
            let (p, q) = pq(m, x);
            let d1 = self.guarded(p, q, y1)?;
            let d0 = self.guarded(p, q, y0)?;
            out[0] = (1.0 / d1 - 1.0 / d0) / q;
            Ok(())
        })?[0];
        Ok(FormValue::new(v, vec![1]))
    }

    /// All `ν_a(x)`, `a = 1..g`, in one pass.
    pub fn nu_all(&self, x: C) -> Result<Vec<C>> {
        let cs: Vec<C> = (1..=self.genus() as i32).map(|a| self.params.w(-a)).collect();
        self.series(cs.len(), false, |_, m, out| {
            let (p, q) = pq(m, x);
            for (o, c) in out.iter_mut().zip(&cs) {
                *o = 1.0 / (q * (p - c * q));
            }
            Ok(())
        })
    }

    /// `(ν_a, ∂ν_a, ∂²ν_a)` at `x` for every handle, flattened as `3(a-1) + k`.
    pub fn nu_jet(&self, x: C) -> Result<Vec<C>> {
        let cs: Vec<C> = (1..=self.genus() as i32).map(|a| self.params.w(-a)).collect();
        self.series(3 * cs.len(), false, |_, m, out| {
            let (p, q) = pq(m, x);
            for (i, c) in cs.iter().enumerate() {
                // term = 1/G with G = Q R, R = P - c Q, both linear in x
                let r = p - c * q;
                let g = q * r;
                let dq = m.c;
                let dr = m.a - c * m.c;
                let g1 = dq * r + q * dr;
                let g2 = 2.0 * dq * dr;
                let inv = 1.0 / g;
                out[3 * i] = inv;
                out[3 * i + 1] = -g1 * inv * inv;
                out[3 * i + 2] = (2.0 * g1 * g1 - g * g2) * inv * inv * inv;
            }
            Ok(())
        })
    }

    /// Bers quasiform `Ψ_N(x, y)` of weight `(N, 1 - N)`.
    pub fn psi_n(&self, config: &LimitPointConfig, n: usize, x: C, y: C) -> Result<FormValue> {
        let a = self.limit_points(config, n)?;
        let v = self.psi_raw(&a, x, &[y])?[0];
        Ok(FormValue::new(v, vec![n as i32, 1 - n as i32]))
    }

    fn limit_points(&self, config: &LimitPointConfig, n: usize) -> Result<Vec<C>> {
        if n == 0 {
            return Err(Error::Unsupported("Psi_N needs N >= 1".into()));
        }
        if config.points.len() != 2 * n - 1 {
            return Err(Error::LimitPoints(format!(
                "Psi_{n} needs {} points, got {}",
                2 * n - 1,
                config.points.len()
            )));
        }
        config.resolve(self)
    }

    // For a limit point equal to some W_s, the words led by γ_{-s} pull x onto W_s and
    // P - W_s Q cancels. Record the leading slot and the multiplier μ = c W_s + d.
    fn limit_info(&self, a: &[C]) -> Vec<Option<(u8, C)>> {
        a.iter()
            .map(|&al| {
                self.params.signed_indices().into_iter().find_map(|s| {
                    (self.fixed_point(s).ok() == Some(al)).then(|| {
                        let g = generator_matrix(&self.params, -s);
                        (letter_slot(-s) as u8, g.c * al + g.d)
                    })
                })
            })
            .collect()
    }

    // P - A Q, stripping a leading run of the letter attracted to A:
    // for γ = g^k γ'' it equals (P'' - A Q'') / μ^k.
    #[inline]
    fn limit_factor(&self, idx: usize, m: &MobiusMap, x: C, al: C, info: Option<(u8, C)>) -> C {
        if let Some((slot, mu)) = info {
            if idx != 0 && self.first[idx] == slot {
                let mut j = idx;
                let mut k = 0;
                while j != 0 && self.first[j] == slot {
                    j = self.suffix[j] as usize;
                    k += 1;
                }
                let (p, q) = pq(&self.mats[j], x);
                return (p - al * q) / mu.powi(k);
            }
        }
        let (p, q) = pq(m, x);
        p - al * q
    }

    // Ψ at several y from one pass. Each term is 1/((P - yQ) Π(P - A_l Q)).
    fn psi_raw(&self, a: &[C], x: C, ys: &[C]) -> Result<Vec<C>> {
        let info = self.limit_info(a);
        let sums = self.series(ys.len(), false, |idx, m, out| {
            let (p, q) = pq(m, x);
            let mut den = C::new(1.0, 0.0);
            for (al, inf) in a.iter().zip(&info) {
                den *= self.limit_factor(idx, m, x, *al, *inf);
            }
            let t = 1.0 / den;
            for (o, &y) in out.iter_mut().zip(ys) {
                *o = t / self.guarded(p, q, y)?;
            }
            Ok(())
        })?;
        Ok(sums
            .iter()
            .zip(ys)
            .map(|(s, &y)| s * a.iter().map(|al| y - al).product::<C>())
            .collect())
    }

    /// `Ψ_2(x, y)` and `∂_y Ψ_2(x, y)`.
    pub fn psi2_with_dy(&self, config: &LimitPointConfig, x: C, y: C) -> Result<(C, C)> {
        let a = self.limit_points(config, 2)?;
        let info = self.limit_info(&a);
        let sums = self.series(2, false, |idx, m, out| {
            let (p, q) = pq(m, x);
            let mut den = C::new(1.0, 0.0);
            for (al, inf) in a.iter().zip(&info) {
                den *= self.limit_factor(idx, m, x, *al, *inf);
            }
            let d = self.guarded(p, q, y)?;
            let t = 1.0 / (den * d);
            out[0] = t;
            out[1] = t * q / d;
            Ok(())
        })?;
        let pi: C = a.iter().map(|al| y - al).product();
        let dlog: C = a.iter().map(|al| 1.0 / (y - al)).sum();
        Ok((pi * sums[0], pi * (dlog * sums[0] + sums[1])))
    }

    /// Quasiperiod coefficients `Θ^ℓ_{2,a}(x)` for handle `a` (from 1).
    pub fn theta_span(&self, config: &LimitPointConfig, a: usize, x: C) -> Result<ThetaFit> {
        self.theta_span_n(config, 2, a, x)
    }

    pub fn theta_span_n(
        &self,
        config: &LimitPointConfig,
        n: usize,
        a: usize,
        x: C,
    ) -> Result<ThetaFit> {
        self.check_handle(a)?;
        if n < 2 {
            return Err(Error::Unsupported("quasiperiod fit needs N >= 2".into()));
        }
        let lp = self.limit_points(config, n)?;
        let sa = a as i32;
        let wa = self.params.w(sa);
        let r = self.params.radius(sa);
        let gap = self
            .params
            .signed_indices()
            .iter()
            .filter(|&&b| b != sa)
            .map(|&b| (self.params.w(b) - wa).norm() - self.params.radius(b))
            .fold(f64::INFINITY, f64::min);
        let rs = (2.0 * r).min(0.5 * (r + gap));
        let ncoef = 2 * n - 1;
        let m = ncoef + 2;
        let gen = generator_matrix(&self.params, sa);
        let ys: Vec<C> = (0..m)
            .map(|j| wa + C::from_polar(rs, 2.0 * PI * j as f64 / m as f64 + 0.1))
            .collect();
        let mut args = ys.clone();
        args.extend(ys.iter().map(|&y| gen.apply(y)));
        let vals = self.psi_raw(&lp, x, &args)?;
        let wexp = 1 - n as i32;
        let b = DVector::from_iterator(
            m,
            (0..m).map(|j| -(vals[m + j] * gen.deriv(ys[j]).powi(wexp) - vals[j])),
        );
        let amat = DMatrix::from_fn(m, ncoef, |j, l| ((ys[j] - wa) / rs).powi(l as i32));
        let svd = amat.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > 0.0) || smax / smin > 1e8 {
            return Err(Error::IllConditioned(format!(
                "sample matrix condition {:.3e}",
                smax / smin
            )));
        }
        let sol = svd
            .solve(&b, 1e-14)
            .map_err(|e| Error::IllConditioned(e.to_string()))?;
        let resid = (&amat * &sol - &b).norm();
        let bn = b.norm();
        let residual = if bn > 0.0 { resid / bn } else { resid };
        let coeffs = (0..ncoef).map(|l| sol[l] / rs.powi(l as i32)).collect();
        Ok(ThetaFit { coeffs, residual })
    }

    /// All `Θ^ℓ_{2,a}(x)` flattened as `3(a-1) + ℓ`; fails when a fit residual exceeds 1e-7.
    pub fn theta_all(&self, config: &LimitPointConfig, x: C) -> Result<Vec<C>> {
        let mut out = Vec::with_capacity(3 * self.genus());
        for a in 1..=self.genus() {
            let fit = self.theta_span(config, a, x)?;
            if fit.residual > 1e-7 {
                return Err(Error::FitResidual(fit.residual));
            }
            out.extend(fit.coeffs);
        }
        Ok(out)
    }

    /// Polyline from `y_0` on the circle of `w_a` to `γ_a y_0` on the circle of `w_{-a}`.
    pub fn beta_path(&self, a: usize) -> Result<Vec<C>> {
        self.check_handle(a)?;
        let p = &self.params;
        let sa = a as i32;
        let (wa, wn, r) = (p.w(sa), p.w(-sa), p.radius(sa));
        let dir = (wn - wa) / (wn - wa).norm();
        let p0 = wa + r * dir;
        let p1 = wa + 1.5 * r * dir;
        let p2 = wn - 1.5 * r * dir;
        let end = generator_matrix(p, sa).apply(p0);
        let others: Vec<i32> = p
            .signed_indices()
            .into_iter()
            .filter(|&b| b != sa && b != -sa)
            .collect();
        let clear = |s: C, e: C, skip_own: bool| {
            p.signed_indices().iter().all(|&b| {
                if skip_own && (b == sa || b == -sa) {
                    return true;
                }
                seg_dist(p.w(b), s, e) > 1.1 * p.radius(b)
            })
        };
        if !clear(p0, p1, true) {
            return Err(Error::NoPath(a));
        }
        let mut path = vec![p0, p1];
        if clear(p1, p2, false) {
            path.push(p2);
        } else {
            let mid = 0.5 * (p1 + p2);
            let perp = C::new(0.0, 1.0) * (p2 - p1);
            let detour = [0.25, -0.25, 0.5, -0.5, 1.0, -1.0]
                .iter()
                .map(|s| mid + s * perp)
                .find(|&m| clear(p1, m, false) && clear(m, p2, false))
                .ok_or(Error::NoPath(a))?;
            path.push(detour);
            path.push(p2);
        }
        // arc at radius 1.5 r around w_{-a}, in chords of at most 60 degrees
        let th0 = (p2 - wn).arg();
        let th1 = (end - wn).arg();
        let mut dth = th1 - th0;
        while dth > PI {
            dth -= 2.0 * PI;
        }
        while dth <= -PI {
            dth += 2.0 * PI;
        }
        let steps = (dth.abs() / (PI / 3.0)).ceil() as usize;
        for k in 1..=steps {
            let th = th0 + dth * k as f64 / steps as f64;
            path.push(wn + C::from_polar(1.5 * r, th));
        }
        path.push(end);
        for w in path[2..].windows(2) {
            let ok = others
                .iter()
                .all(|&b| seg_dist(p.w(b), w[0], w[1]) > 1.1 * p.radius(b));
            if !ok {
                return Err(Error::NoPath(a));
            }
        }
        Ok(path)
    }

    /// Period matrix, computed once and cached.
    pub fn period_matrix(&self) -> Result<&PeriodMatrix> {
        self.period
            .get_or_init(|| self.compute_period_matrix())
            .as_ref()
            .map_err(Clone::clone)
    }

    // Each term of ν_b integrates to a logarithm. For words other than 1 and γ_b the
    // image of the path lies in a disc missing w_{-b}, so the principal branch is exact;
    // the two remaining terms are followed segment by segment.
    fn compute_period_matrix(&self) -> Result<PeriodMatrix> {
        let g = self.genus();
        let p = &self.params;
        let mut tau = DMatrix::from_element(g, g, C::new(0.0, 0.0));
        for a in 1..=g {
            let path = self.beta_path(a)?;
            let y0 = path[0];
            let e = *path.last().unwrap();
            let cs: Vec<C> = (1..=g as i32).map(|b| p.w(-b)).collect();
            let ws: Vec<C> = (1..=g as i32).map(|b| p.w(b)).collect();
            let slots: Vec<usize> = (1..=g as i32).map(letter_slot).collect();
            let step = e - y0;
            let sums = self.series(g, true, |idx, m, out| {
                let (_, qe) = pq(m, e);
                let (p0, q0) = pq(m, y0);
                for b in 0..g {
                    out[b] = if idx == 1 + slots[b] {
                        C::new(0.0, 0.0)
                    } else if self.first[idx] as usize == slots[b] {
                        // γ = γ_b γ' sends both ends next to w_{-b}; use γ' to avoid cancellation
                        let ms = &self.mats[self.suffix[idx] as usize];
                        let (se, sq) = pq(ms, e);
                        let (_, s0) = pq(ms, y0);
                        (1.0 - step / (s0 * (se - ws[b] * sq))).ln()
                    } else {
                        (1.0 + step / (qe * (p0 - cs[b] * q0))).ln()
                    };
                }
                Ok(())
            })?;
            for b in 0..g {
                let sb = b as i32 + 1;
                let (wn, wp) = (p.w(-sb), p.w(sb));
                let mut geo = C::new(0.0, 0.0);
                for s in path.windows(2) {
                    geo += ((s[1] - wn) / (s[0] - wn)).ln() - ((s[1] - wp) / (s[0] - wp)).ln();
                }
                tau[(a - 1, b)] = geo + sums[b];
            }
        }
        let mut asym: f64 = 0.0;
        for i in 0..g {
            for j in 0..i {
                asym = asym.max((tau[(i, j)] - tau[(j, i)]).norm());
            }
        }
        if asym > 1e-6 {
            return Err(Error::Asymmetric(asym));
        }
        let tau = (&tau + tau.transpose()) * C::new(0.5, 0.0);
        let pm = PeriodMatrix {
            tau,
            index_set_k: index_set(g),
            asymmetry: asym,
        };
        if !(pm.im_omega_min_eig() > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(pm)
    }

    /// `τ_ab` by adaptive Gauss–Kronrod quadrature of `ν_b` along the β path
    /// (independent of the closed-form evaluation; slower).
    pub fn period_matrix_quadrature(&self, tol: f64) -> Result<DMatrix<C>> {
        let g = self.genus();
        let mut tau = DMatrix::from_element(g, g, C::new(0.0, 0.0));
        for a in 1..=g {
            let path = self.beta_path(a)?;
            let f = |z: C| self.nu_all(z);
            let row = crate::quadrature::integrate_polyline(&f, &path, g, tol)?;
            for b in 0..g {
                tau[(a - 1, b)] = row[b];
            }
        }
        Ok(tau)
    }
}

/// All pairs `a <= b` (0-based).
pub fn index_set(g: usize) -> Vec<(usize, usize)> {
    let mut k = Vec::with_capacity(g * (g + 1) / 2);
    for a in 0..g {
        for b in a..g {
            k.push((a, b));
        }
    }
    k
}

fn seg_dist(c: C, s: C, e: C) -> f64 {
    let d = e - s;
    let len2 = d.norm_sqr();
    if len2 == 0.0 {
        return (c - s).norm();
    }
    let t = ((c - s) * d.conj()).re / len2;
    let t = t.clamp(0.0, 1.0);
    (c - (s + t * d)).norm()
}
