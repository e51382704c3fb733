//! Functions of the period matrix with analytic derivatives in the independent
//! entries `τ_ab`, `a <= b`.

use nalgebra::DMatrix;
use num_complex::Complex64 as C;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kahan::Kahan;

/// A function `F(τ)` of the period matrix. Off-diagonal entries count once: `∂_ab`
/// with `a < b` differentiates in the single variable `τ_ab = τ_ba`.
pub trait ModuliFunction: Sync {
    fn genus(&self) -> usize;

    /// Highest supported total derivative order.
    fn max_order(&self) -> usize;

    /// `∂_{a_1 b_1} ... ∂_{a_k b_k} F(τ)`, pairs 0-based in either order.
    fn derivative(&self, tau: &DMatrix<C>, pairs: &[(usize, usize)]) -> Result<C>;

    fn value(&self, tau: &DMatrix<C>) -> Result<C> {
        self.derivative(tau, &[])
    }
}

pub(crate) fn check_request(f: &dyn ModuliFunction, tau: &DMatrix<C>, pairs: &[(usize, usize)]) -> Result<()> {
    let g = f.genus();
    if tau.nrows() != g || tau.ncols() != g {
        return Err(Error::InvalidParams(format!(
            "expected {g}x{g} period matrix, got {}x{}",
            tau.nrows(),
            tau.ncols()
        )));
    }
    if pairs.len() > f.max_order() {
        return Err(Error::DerivativeOrder {
            requested: pairs.len(),
            supported: f.max_order(),
        });
    }
    if pairs.iter().any(|&(a, b)| a >= g || b >= g) {
        return Err(Error::InvalidParams("derivative index out of range".into()));
    }
    Ok(())
}

fn ordered(p: (usize, usize)) -> (usize, usize) {
    (p.0.min(p.1), p.0.max(p.1))
}

/// Even integral lattice given by its Gram matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EvenLattice {
    gram: DMatrix<i64>,
}

impl EvenLattice {
    pub fn new(gram: DMatrix<i64>) -> Result<Self> {
        let n = gram.nrows();
        if n == 0 || gram.ncols() != n {
            return Err(Error::Lattice("Gram matrix must be square and nonempty".into()));
        }
        if gram != gram.transpose() {
            return Err(Error::Lattice("Gram matrix not symmetric".into()));
        }
        if (0..n).any(|i| gram[(i, i)] % 2 != 0) {
            return Err(Error::Lattice("odd diagonal entry".into()));
        }
        if gram.map(|v| v as f64).cholesky().is_none() {
            return Err(Error::Lattice("Gram matrix not positive definite".into()));
        }
        Ok(EvenLattice { gram })
    }

    /// `√2 ℤ`.
    pub fn sqrt2() -> Self {
        EvenLattice {
            gram: DMatrix::from_element(1, 1, 2),
        }
    }

    /// The `E_8` root lattice (Cartan matrix).
    pub fn e8() -> Self {
        let mut g = DMatrix::from_element(8, 8, 0i64);
        for i in 0..8 {
            g[(i, i)] = 2;
        }
        // Bourbaki labelling: chain 1-3-4-5-6-7-8 with 2 attached to 4
        let edges = [(0, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (1, 3)];
        for (i, j) in edges {
            g[(i, j)] = -1;
            g[(j, i)] = -1;
        }
        EvenLattice { gram: g }
    }

    /// Gram matrix from JSON rows, e.g. `[[2, -1], [-1, 2]]`.
    pub fn from_json(s: &str) -> Result<Self> {
        let rows: Vec<Vec<i64>> =
            serde_json::from_str(s).map_err(|e| Error::Lattice(format!("bad Gram JSON: {e}")))?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Lattice("Gram rows have unequal length".into()));
        }
        EvenLattice::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn rank(&self) -> usize {
        self.gram.nrows()
    }

    pub fn gram(&self) -> &DMatrix<i64> {
        &self.gram
    }
}

/// Siegel theta series `Σ_{λ ∈ L^g} exp(iπ λ·Ω·λ)` with `τ = 2πi Ω`.
#[derive(Clone, Debug)]
pub struct SiegelTheta {
    lattice: EvenLattice,
    genus: usize,
    /// Target for the discarded tail, relative to the leading term.
    pub tail_target: f64,
    /// Refuse enumerations larger than this.
    pub max_vectors: usize,
}

/// Truncated lattice sum together with its tail estimate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThetaSum {
    pub value: C,
    pub vectors: usize,
    pub tail_bound: f64,
}

impl SiegelTheta {
    pub fn new(lattice: EvenLattice, genus: usize) -> Self {
        SiegelTheta {
            lattice,
            genus,
            tail_target: 1e-14,
            max_vectors: 20_000_000,
        }
    }

    pub fn lattice(&self) -> &EvenLattice {
        &self.lattice
    }

    // n^T (Im Ω ⊗ G) n with Im Ω = -Re τ / 2π
    fn quadratic_form(&self, tau: &DMatrix<C>) -> DMatrix<f64> {
        let r = self.lattice.rank();
        let g = self.genus;
        DMatrix::from_fn(g * r, g * r, |i, j| {
            let (a, k) = (i / r, i % r);
            let (b, l) = (j / r, j % r);
            -tau[(a, b)].re / (2.0 * std::f64::consts::PI) * self.lattice.gram[(k, l)] as f64
        })
    }

    /// Coefficient vectors `n` (g blocks of lattice coordinates) with
    /// `n^T K n <= bound`, by Fincke–Pohst.
    fn enumerate(&self, k: &DMatrix<f64>, bound: f64) -> Result<Vec<Vec<i64>>> {
        let d = k.nrows();
        let chol = k
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite)?;
        // K = R^T R with R upper triangular; Q(n) = Σ_i r_ii^2 (n_i + Σ_{j>i} r_ij/r_ii n_j)^2
        let r = chol.l().transpose();
        let diag: Vec<f64> = (0..d).map(|i| r[(i, i)] * r[(i, i)]).collect();
        let mu = DMatrix::from_fn(d, d, |i, j| if j > i { r[(i, j)] / r[(i, i)] } else { 0.0 });
        let mut out = Vec::new();
        let mut n = vec![0i64; d];
        self.descend(d, &diag, &mu, bound, &mut n, &mut out)?;
        Ok(out)
    }

    fn descend(
        &self,
        i: usize,
        diag: &[f64],
        mu: &DMatrix<f64>,
        left: f64,
        n: &mut Vec<i64>,
        out: &mut Vec<Vec<i64>>,
    ) -> Result<()> {
        if i == 0 {
            out.push(n.clone());
            if out.len() > self.max_vectors {
                return Err(Error::Lattice(format!(
                    "more than {} lattice vectors; tighten the target or use a smaller lattice",
                    self.max_vectors
                )));
            }
            return Ok(());
        }
        let k = i - 1;
        let centre: f64 = -((k + 1)..n.len()).map(|j| mu[(k, j)] * n[j] as f64).sum::<f64>();
        let half = (left.max(0.0) / diag[k]).sqrt();
        let lo = (centre - half).ceil() as i64;
        let hi = (centre + half).floor() as i64;
        for v in lo..=hi {
            let t = v as f64 - centre;
            let rest = left - diag[k] * t * t;
            if rest < 0.0 {
                continue;
            }
            n[k] = v;
            self.descend(k, diag, mu, rest, n, out)?;
        }
        n[k] = 0;
        Ok(())
    }

    fn bound(&self) -> f64 {
        // polynomial prefactors from derivatives are absorbed by the margin
        (-self.tail_target.ln() + 12.0) / std::f64::consts::PI
    }

    /// Crude bound on the discarded part of `Σ e^{-πQ(n)}`: shell counts from the volume of
    /// the ellipsoid times the Gaussian weight.
    fn tail_bound(&self, k: &DMatrix<f64>, bound: f64) -> f64 {
        let d = k.nrows() as f64;
        let lam = k.symmetric_eigenvalues().min();
        let mut tail = 0.0;
        for s in 0..400 {
            let t = bound + s as f64 * 0.25;
            let count = (1.0 + 2.0 * ((t + 0.25) / lam).sqrt()).powf(d);
            tail += count * (-std::f64::consts::PI * t).exp();
        }
        tail
    }

    /// Value with the number of terms kept and the tail estimate.
    pub fn evaluate(&self, tau: &DMatrix<C>) -> Result<ThetaSum> {
        check_request(self, tau, &[])?;
        let k = self.quadratic_form(tau);
        let bound = self.bound();
        let vecs = self.enumerate(&k, bound)?;
        let value = self.sum(tau, &vecs, &[]);
        Ok(ThetaSum {
            value,
            vectors: vecs.len(),
            tail_bound: self.tail_bound(&k, bound),
        })
    }

    /// As [`SiegelTheta::evaluate`] with an explicit bound on `n^T K n`.
    pub fn evaluate_with_bound(&self, tau: &DMatrix<C>, bound: f64) -> Result<ThetaSum> {
        check_request(self, tau, &[])?;
        let k = self.quadratic_form(tau);
        let vecs = self.enumerate(&k, bound)?;
        Ok(ThetaSum {
            value: self.sum(tau, &vecs, &[]),
            vectors: vecs.len(),
            tail_bound: self.tail_bound(&k, bound),
        })
    }

    fn sum(&self, tau: &DMatrix<C>, vecs: &[Vec<i64>], pairs: &[(usize, usize)]) -> C {
        let r = self.lattice.rank();
        let g = self.genus;
        let gram = &self.lattice.gram;
        let pairs: Vec<(usize, usize)> = pairs.iter().map(|&p| ordered(p)).collect();
        let term = |n: &Vec<i64>| {
            let ip = |a: usize, b: usize| -> i64 {
                let mut s = 0;
                for k in 0..r {
                    for l in 0..r {
                        s += n[a * r + k] * gram[(k, l)] * n[b * r + l];
                    }
                }
                s
            };
            let mut expo = C::new(0.0, 0.0);
            let mut ips = vec![0i64; g * g];
            for a in 0..g {
                for b in 0..g {
                    ips[a * g + b] = ip(a, b);
                    expo += 0.5 * ips[a * g + b] as f64 * tau[(a, b)];
                }
            }
            let mut pre = C::new(1.0, 0.0);
            for &(a, b) in &pairs {
                let f = if a == b { 0.5 } else { 1.0 };
                pre *= f * ips[a * g + b] as f64;
            }
            pre * expo.exp()
        };
        let parts: Vec<C> = vecs
            .par_chunks(4096)
            .map(|chunk| {
                let mut k = Kahan::default();
                for n in chunk {
                    k.add(term(n));
                }
                k.total()
            })
            .collect();
        let mut k = Kahan::default();
        for p in parts {
            k.add(p);
        }
        k.total()
    }
}

impl ModuliFunction for SiegelTheta {
    fn genus(&self) -> usize {
        self.genus
    }

    fn max_order(&self) -> usize {
        usize::MAX
    }

    fn derivative(&self, tau: &DMatrix<C>, pairs: &[(usize, usize)]) -> Result<C> {
        check_request(self, tau, pairs)?;
        let k = self.quadratic_form(tau);
        let vecs = self.enumerate(&k, self.bound())?;
        Ok(self.sum(tau, &vecs, pairs))
    }
}

/// `coeff · Π τ_{a_i b_i}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: C,
    /// 0-based pairs, repeated for powers.
    pub vars: Vec<(usize, usize)>,
}

#[derive(Deserialize)]
struct MonomialJson {
    coeff: [f64; 2],
    #[serde(default)]
    vars: Vec<[usize; 2]>,
}

/// Polynomial in the entries of `τ`, exact to all orders.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    genus: usize,
    terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn new(genus: usize, terms: Vec<Monomial>) -> Result<Self> {
        let mut terms = terms;
        for t in &mut terms {
            for v in &mut t.vars {
                if v.0 >= genus || v.1 >= genus {
                    return Err(Error::InvalidParams(format!("variable {v:?} outside genus {genus}")));
                }
                *v = ordered(*v);
            }
        }
        Ok(Polynomial { genus, terms })
    }

    /// Table `[{"coeff": [re, im], "vars": [[1, 1], [2, 2]]}, ...]` with 1-based indices.
    pub fn from_json(genus: usize, s: &str) -> Result<Self> {
        let raw: Vec<MonomialJson> = serde_json::from_str(s)
            .map_err(|e| Error::InvalidParams(format!("bad polynomial JSON: {e}")))?;
        let mut terms = Vec::with_capacity(raw.len());
        for m in raw {
            let mut vars = Vec::with_capacity(m.vars.len());
            for [a, b] in m.vars {
                if a == 0 || b == 0 {
                    return Err(Error::InvalidParams("polynomial indices start at 1".into()));
                }
                vars.push((a - 1, b - 1));
            }
            terms.push(Monomial {
                coeff: C::new(m.coeff[0], m.coeff[1]),
                vars,
            });
        }
        Polynomial::new(genus, terms)
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }
}

impl ModuliFunction for Polynomial {
    fn genus(&self) -> usize {
        self.genus
    }

    fn max_order(&self) -> usize {
        usize::MAX
    }

    fn derivative(&self, tau: &DMatrix<C>, pairs: &[(usize, usize)]) -> Result<C> {
        check_request(self, tau, pairs)?;
        let want: Vec<(usize, usize)> = pairs.iter().map(|&p| ordered(p)).collect();
        let mut total = C::new(0.0, 0.0);
        'terms: for t in &self.terms {
            let mut left = t.vars.clone();
            let mut c = t.coeff;
            for p in &want {
                // d/dv v^e = e v^{e-1}: multiply by the current multiplicity, drop one copy
                let e = left.iter().filter(|v| *v == p).count();
                if e == 0 {
                    continue 'terms;
                }
                c *= e as f64;
                let pos = left.iter().position(|v| v == p).unwrap();
                left.swap_remove(pos);
            }
            total += left.iter().fold(c, |acc, &(a, b)| acc * tau[(a, b)]);
        }
        Ok(total)
    }
}

/// `exp(Σ_{a<=b} k_ab τ_ab)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpLinear {
    /// Upper triangle used; `k[(a, b)]` with `a <= b`.
    pub k: DMatrix<C>,
}

impl ModuliFunction for ExpLinear {
    fn genus(&self) -> usize {
        self.k.nrows()
    }

    fn max_order(&self) -> usize {
        usize::MAX
    }

    fn derivative(&self, tau: &DMatrix<C>, pairs: &[(usize, usize)]) -> Result<C> {
        check_request(self, tau, pairs)?;
        let g = self.genus();
        let mut e = C::new(0.0, 0.0);
        for a in 0..g {
            for b in a..g {
                e += self.k[(a, b)] * tau[(a, b)];
            }
        }
        let pre: C = pairs
            .iter()
            .map(|&p| {
                let (a, b) = ordered(p);
                self.k[(a, b)]
            })
            .product();
        Ok(pre * e.exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tau2() -> DMatrix<C> {
        DMatrix::from_row_slice(
            2,
            2,
            &[
                C::new(-5.3, 0.4),
                C::new(0.29, 0.1),
                C::new(0.29, 0.1),
                C::new(-4.8, -0.2),
            ],
        )
    }

    #[test]
    fn lattice_checks() {
        assert!(EvenLattice::from_json("[[2, 1], [1, 2]]").is_ok());
        assert!(EvenLattice::from_json("[[1]]").is_err());
        assert!(EvenLattice::from_json("[[2, 3], [3, 2]]").is_err());
        assert!(EvenLattice::from_json("[[2, 1], [0, 2]]").is_err());
        assert_eq!(EvenLattice::e8().gram().determinant_i64(), 1);
    }

    trait DetI64 {
        fn determinant_i64(&self) -> i64;
    }

    impl DetI64 for DMatrix<i64> {
        fn determinant_i64(&self) -> i64 {
            self.map(|v| v as f64).determinant().round() as i64
        }
    }

    #[test]
    fn genus_one_matches_scalar_series() {
        let th = SiegelTheta::new(EvenLattice::sqrt2(), 1);
        let tau = DMatrix::from_element(1, 1, C::new(-1.3, 0.7));
        let got = th.value(&tau).unwrap();
        // Σ_m exp(m^2 τ)
        let mut want = C::new(0.0, 0.0);
        for m in -40i64..=40 {
            want += ((m * m) as f64 * tau[(0, 0)]).exp();
        }
        assert!((got - want).norm() < 1e-12);
    }

    #[test]
    fn first_derivatives_match_fd() {
        let th = SiegelTheta::new(EvenLattice::sqrt2(), 2);
        let tau = tau2();
        let h = 1e-4;
        for (a, b) in [(0, 0), (0, 1), (1, 1)] {
            let mut e = DMatrix::from_element(2, 2, C::new(0.0, 0.0));
            e[(a, b)] = C::new(h, 0.0);
            e[(b, a)] = C::new(h, 0.0);
            let fd = (th.value(&(&tau + &e)).unwrap() - th.value(&(&tau - &e)).unwrap()) / (2.0 * h);
            let an = th.derivative(&tau, &[(a, b)]).unwrap();
            assert!((fd - an).norm() < 1e-8 * an.norm().max(1e-3), "{a}{b}: {fd} {an}");
            assert_eq!(an, th.derivative(&tau, &[(b, a)]).unwrap());
        }
    }

    #[test]
    fn polynomial_derivatives() {
        let t = tau2();
        let p = Polynomial::from_json(2, r#"[{"coeff":[1,0],"vars":[[1,1]]}]"#).unwrap();
        assert_eq!(p.derivative(&t, &[(0, 0)]).unwrap(), C::new(1.0, 0.0));
        assert_eq!(p.derivative(&t, &[(0, 1)]).unwrap(), C::new(0.0, 0.0));
        let p = Polynomial::from_json(2, r#"[{"coeff":[1,0],"vars":[[1,2],[2,1]]}]"#).unwrap();
        assert_eq!(p.derivative(&t, &[(0, 1), (1, 0)]).unwrap(), C::new(2.0, 0.0));
        let p = Polynomial::from_json(2, r#"[{"coeff":[1,0],"vars":[[1,1],[2,2]]}]"#).unwrap();
        assert_eq!(p.derivative(&t, &[(0, 0), (1, 1)]).unwrap(), C::new(1.0, 0.0));
        assert_eq!(p.value(&t).unwrap(), t[(0, 0)] * t[(1, 1)]);
    }

    #[test]
    fn deep_cusp_limit() {
        let th = SiegelTheta::new(EvenLattice::sqrt2(), 2);
        let tau = DMatrix::from_row_slice(
            2,
            2,
            &[C::new(-60.0, 0.0), C::new(0.0, 0.0), C::new(0.0, 0.0), C::new(-60.0, 0.0)],
        );
        assert!((th.value(&tau).unwrap() - 1.0).norm() < 1e-15);
    }

    #[test]
    fn order_guard() {
        let p = ExpLinear {
            k: DMatrix::from_element(2, 2, C::new(1.0, 0.0)),
        };
        assert!(matches!(
            check_request(&p, &tau2(), &[(0, 2)]),
            Err(Error::InvalidParams(_))
        ));
        assert!(p.derivative(&tau2(), &[(0, 1), (1, 1)]).is_ok());
    }
}
