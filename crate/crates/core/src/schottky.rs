//! Schottky parameters, derived handle data, group words and global Möbius maps.

use num_complex::Complex64 as C;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One handle: the paired isometric circles centred at `w` and `w_neg`, coupled by `rho`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Handle {
    pub w: C,
    pub w_neg: C,
    pub rho: C,
}

impl Handle {
    pub fn new(w: C, w_neg: C, rho: C) -> Self {
        Handle { w, w_neg, rho }
    }

    /// Radius `|rho|^{1/2}` of both circles of the handle.
    pub fn radius(&self) -> f64 {
        self.rho.norm().sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchottkyParams {
    pub genus: usize,
    pub handles: Vec<Handle>,
}

impl SchottkyParams {
    pub fn new(handles: Vec<Handle>) -> Self {
        SchottkyParams {
            genus: handles.len(),
            handles,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: SchottkyParams =
            serde_json::from_str(s).map_err(|e| Error::InvalidParams(e.to_string()))?;
        p.check_shape()?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("params serialise")
    }

    /// Centre `w_a` for a signed index `a`.
    pub fn w(&self, a: i32) -> C {
        let h = &self.handles[handle_index(a)];
        if a > 0 {
            h.w
        } else {
            h.w_neg
        }
    }

    pub fn rho(&self, a: i32) -> C {
        self.handles[handle_index(a)].rho
    }

    pub fn radius(&self, a: i32) -> f64 {
        self.handles[handle_index(a)].radius()
    }

    /// All signed indices `1, -1, 2, -2, ...`.
    pub fn signed_indices(&self) -> Vec<i32> {
        signed_indices(self.genus)
    }

    /// Largest distance between any two disc centres, padded by the radii.
    pub fn diameter(&self) -> f64 {
        let idx = self.signed_indices();
        let mut d: f64 = 0.0;
        for &a in &idx {
            for &b in &idx {
                d = d.max((self.w(a) - self.w(b)).norm() + self.radius(a) + self.radius(b));
            }
        }
        d
    }

    /// Smallest distance between two distinct disc centres.
    pub fn min_separation(&self) -> f64 {
        let idx = self.signed_indices();
        let mut d = f64::INFINITY;
        for (i, &a) in idx.iter().enumerate() {
            for &b in &idx[i + 1..] {
                d = d.min((self.w(a) - self.w(b)).norm());
            }
        }
        d
    }

    /// Is `z` strictly outside every closed disc?
    pub fn outside_discs(&self, z: C) -> bool {
        self.signed_indices()
            .iter()
            .all(|&a| (z - self.w(a)).norm() > self.radius(a))
    }

    fn check_shape(&self) -> Result<()> {
        if self.genus == 0 {
            return Err(Error::InvalidParams("genus must be at least 1".into()));
        }
        if self.handles.len() != self.genus {
            return Err(Error::InvalidParams(format!(
                "genus {} but {} handles",
                self.genus,
                self.handles.len()
            )));
        }
        for (i, h) in self.handles.iter().enumerate() {
            for z in [h.w, h.w_neg, h.rho] {
                if !(z.re.is_finite() && z.im.is_finite()) {
                    return Err(Error::InvalidParams(format!("handle {} not finite", i + 1)));
                }
            }
            if h.rho == C::new(0.0, 0.0) {
                return Err(Error::InvalidParams(format!("rho_{} is zero", i + 1)));
            }
        }
        Ok(())
    }
}

pub(crate) fn signed_indices(g: usize) -> Vec<i32> {
    (1..=g as i32).flat_map(|a| [a, -a]).collect()
}

pub(crate) fn handle_index(a: i32) -> usize {
    assert!(a != 0, "signed index must be nonzero");
    a.unsigned_abs() as usize - 1
}

// position of a signed letter in the generator table
pub(crate) fn letter_slot(a: i32) -> usize {
    2 * handle_index(a) + usize::from(a < 0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiscViolation {
    pub a: i32,
    pub b: i32,
    /// `|w_a - w_b| - |rho_a|^{1/2} - |rho_b|^{1/2}` (nonpositive for a violation).
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<DiscViolation>,
    pub min_margin: f64,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks disc separation over every unordered pair of distinct signed indices.
pub fn validate(params: &SchottkyParams) -> Result<ValidationReport> {
    params.check_shape()?;
    let idx = params.signed_indices();
    let mut violations = Vec::new();
    let mut min_margin = f64::INFINITY;
    for (i, &a) in idx.iter().enumerate() {
        for &b in &idx[i + 1..] {
            let margin = (params.w(a) - params.w(b)).norm() - params.radius(a) - params.radius(b);
            min_margin = min_margin.min(margin);
            if margin <= 0.0 {
                violations.push(DiscViolation { a, b, margin });
            }
        }
    }
    Ok(ValidationReport {
        violations,
        min_margin,
    })
}

pub(crate) fn ensure_valid(params: &SchottkyParams) -> Result<()> {
    let rep = validate(params)?;
    match rep.violations.first() {
        None => Ok(()),
        Some(v) => Err(Error::DiscsIntersect {
            a: v.a,
            b: v.b,
            margin: v.margin,
        }),
    }
}

/// Multiplier and fixed points of one generator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HandleData {
    pub q: C,
    /// Repelling fixed point `W_a`.
    pub big_w: C,
    /// Attracting fixed point `W_{-a}`.
    pub big_w_neg: C,
}

/// Solves `rho q^2 + (2 rho + d^2) q + rho = 0` for the small root, then the fixed points.
pub fn derive_handle_data(params: &SchottkyParams) -> Result<Vec<HandleData>> {
    ensure_valid(params)?;
    params
        .handles
        .iter()
        .enumerate()
        .map(|(i, h)| handle_data(i, h))
        .collect()
}

fn handle_data(i: usize, h: &Handle) -> Result<HandleData> {
    let d = h.w_neg - h.w;
    if d.norm() == 0.0 {
        return Err(Error::DegenerateHandle(i + 1));
    }
    let rho = h.rho;
    let b = 2.0 * rho + d * d;
    let disc = (d * d * (d * d + 4.0 * rho)).sqrt();
    // pick the sign that avoids cancellation; that denominator gives the small root
    let den = if (b + disc).norm() >= (b - disc).norm() {
        -(b + disc)
    } else {
        -(b - disc)
    };
    let q = 2.0 * rho / den;
    let m = q.norm();
    if (m - 1.0).abs() < 1e-10 || m >= 1.0 {
        return Err(Error::OutsideSewingDomain {
            handle: i + 1,
            modulus: m,
        });
    }
    let one = C::new(1.0, 0.0);
    Ok(HandleData {
        q,
        big_w: (h.w + q * h.w_neg) / (one + q),
        big_w_neg: (h.w_neg + q * h.w) / (one + q),
    })
}

impl HandleData {
    /// `(w_a, w_{-a}, rho_a)` recovered from `(W_a, W_{-a}, q_a)`.
    pub fn to_handle(&self) -> Handle {
        let one = C::new(1.0, 0.0);
        let q = self.q;
        let w = (self.big_w - q * self.big_w_neg) / (one - q);
        let w_neg = (self.big_w_neg - q * self.big_w) / (one - q);
        let dw = self.big_w_neg - self.big_w;
        let rho = -q * dw * dw / ((one - q) * (one - q));
        Handle { w, w_neg, rho }
    }
}

/// A Möbius map stored as an `SL(2, C)` matrix `[[a, b], [c, d]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MobiusMap {
    pub a: C,
    pub b: C,
    pub c: C,
    pub d: C,
}

impl MobiusMap {
    /// Normalises to determinant one.
    pub fn new(a: C, b: C, c: C, d: C) -> Result<Self> {
        let det = a * d - b * c;
        if det.norm() == 0.0 || !det.re.is_finite() || !det.im.is_finite() {
            return Err(Error::Singular("Möbius determinant vanishes".into()));
        }
        let s = det.sqrt();
        Ok(MobiusMap {
            a: a / s,
            b: b / s,
            c: c / s,
            d: d / s,
        })
    }

    pub fn identity() -> Self {
        let one = C::new(1.0, 0.0);
        let zero = C::new(0.0, 0.0);
        MobiusMap {
            a: one,
            b: zero,
            c: zero,
            d: one,
        }
    }

    pub fn det(&self) -> C {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> C {
        self.a + self.d
    }

    /// `self ∘ other`.
    #[inline]
    pub fn compose(&self, o: &MobiusMap) -> MobiusMap {
        MobiusMap {
            a: self.a * o.a + self.b * o.c,
            b: self.a * o.b + self.b * o.d,
            c: self.c * o.a + self.d * o.c,
            d: self.c * o.b + self.d * o.d,
        }
    }

    pub fn inverse(&self) -> MobiusMap {
        MobiusMap {
            a: self.d,
            b: -self.b,
            c: -self.c,
            d: self.a,
        }
    }

    /// Image of a finite point; infinite when `z` is the pole.
    #[inline]
    pub fn apply(&self, z: C) -> C {
        (self.a * z + self.b) / (self.c * z + self.d)
    }

    /// `dσ/dz = (cz + d)^{-2}`.
    #[inline]
    pub fn deriv(&self, z: C) -> C {
        let q = self.c * z + self.d;
        1.0 / (q * q)
    }

    pub fn image_of_infinity(&self) -> Option<C> {
        if self.c.norm() == 0.0 {
            None
        } else {
            Some(self.a / self.c)
        }
    }

    /// Preimage of infinity, `-d/c`.
    pub fn pole(&self) -> Option<C> {
        if self.c.norm() == 0.0 {
            None
        } else {
            Some(-self.d / self.c)
        }
    }

    /// Fixed points; for a loxodromic element ordered (repelling, attracting).
    pub fn fixed_points(&self) -> Option<(C, C)> {
        if self.c.norm() == 0.0 {
            return None;
        }
        let disc = ((self.a - self.d) * (self.a - self.d) + 4.0 * self.b * self.c).sqrt();
        let z1 = (self.a - self.d + disc) / (2.0 * self.c);
        let z2 = (self.a - self.d - disc) / (2.0 * self.c);
        // attracting fixed point has |σ'(z)| < 1
        if self.deriv(z1).norm() < self.deriv(z2).norm() {
            Some((z2, z1))
        } else {
            Some((z1, z2))
        }
    }
}

/// A reduced word `γ_{a_1} ... γ_{a_k}` and its matrix.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupElement {
    pub word: Vec<i32>,
    pub matrix: MobiusMap,
}

/// `γ_a z = w_{-a} + rho_a / (z - w_a)`; negative `a` gives the inverse.
pub fn generator(params: &SchottkyParams, a: i32) -> Result<GroupElement> {
    if a == 0 || a.unsigned_abs() as usize > params.genus {
        return Err(Error::InvalidParams(format!("no generator {a}")));
    }
    ensure_valid(params)?;
    Ok(GroupElement {
        word: vec![a],
        matrix: generator_matrix(params, a),
    })
}

pub(crate) fn generator_matrix(params: &SchottkyParams, a: i32) -> MobiusMap {
    let h = &params.handles[handle_index(a)];
    let one = C::new(1.0, 0.0);
    let m = MobiusMap::new(h.w_neg, h.rho - h.w * h.w_neg, one, -h.w)
        .expect("rho is nonzero for validated params");
    if a > 0 {
        m
    } else {
        m.inverse()
    }
}

/// Number of reduced words of length at most `max_len` in the free group on `g` generators.
pub fn group_size(g: usize, max_len: usize) -> usize {
    let mut total = 1;
    let mut shell = 2 * g;
    for _ in 0..max_len {
        total += shell;
        shell *= 2 * g - 1;
    }
    total
}

/// Lazily yields reduced words by increasing length, identity first.
pub struct GroupIter {
    gens: Vec<MobiusMap>,
    letters: Vec<i32>,
    prev: Vec<GroupElement>,
    current: Vec<GroupElement>,
    pos: usize,
    len: usize,
    max_len: usize,
}

pub fn enumerate_group(params: &SchottkyParams, max_len: usize) -> Result<GroupIter> {
    ensure_valid(params)?;
    let letters = params.signed_indices();
    let gens = letters.iter().map(|&a| generator_matrix(params, a)).collect();
    Ok(GroupIter {
        gens,
        letters,
        prev: Vec::new(),
        current: vec![GroupElement {
            word: Vec::new(),
            matrix: MobiusMap::identity(),
        }],
        pos: 0,
        len: 0,
        max_len,
    })
}

impl GroupIter {
    fn next_shell(&mut self) {
        let mut next = Vec::with_capacity(self.current.len() * (self.letters.len() - 1).max(1));
        for el in &self.current {
            let last = el.word.last().copied();
            for (slot, &b) in self.letters.iter().enumerate() {
                if Some(-b) == last {
                    continue;
                }
                let mut word = el.word.clone();
                word.push(b);
                next.push(GroupElement {
                    word,
                    matrix: el.matrix.compose(&self.gens[slot]),
                });
            }
        }
        self.prev = std::mem::replace(&mut self.current, next);
        self.pos = 0;
        self.len += 1;
    }
}

impl Iterator for GroupIter {
    type Item = GroupElement;

    fn next(&mut self) -> Option<GroupElement> {
        if self.pos == self.current.len() {
            if self.len >= self.max_len {
                return None;
            }
            self.next_shell();
            self.prev.clear();
        }
        let el = self.current.get(self.pos).cloned();
        self.pos += 1;
        el
    }
}

/// Flat matrix table by shells: `mats[offsets[k]..offsets[k + 1]]` holds the words of length `k`.
/// `first[i]` is the slot of the leading letter and `suffix[i]` the index of the word with
/// that letter removed (both unused for the identity).
pub(crate) struct GroupTable {
    pub mats: Vec<MobiusMap>,
    pub offsets: Vec<usize>,
    pub first: Vec<u8>,
    pub suffix: Vec<u32>,
}

pub(crate) fn group_table(params: &SchottkyParams, max_len: usize) -> GroupTable {
    let g = params.genus;
    let n = 2 * g;
    let letters = params.signed_indices();
    let gens: Vec<MobiusMap> = letters.iter().map(|&a| generator_matrix(params, a)).collect();
    let total = group_size(g, max_len);
    let mut mats = Vec::with_capacity(total);
    let mut last: Vec<usize> = Vec::with_capacity(total);
    let mut first: Vec<u8> = Vec::with_capacity(total);
    let mut suffix: Vec<u32> = Vec::with_capacity(total);
    // children of the previous shell, for the suffix lookup
    let mut child = vec![u32::MAX; n];
    let mut offsets = vec![0, 1];
    mats.push(MobiusMap::identity());
    last.push(usize::MAX);
    first.push(u8::MAX);
    suffix.push(0);
    for _ in 0..max_len {
        let lo = offsets[offsets.len() - 2];
        let hi = offsets[offsets.len() - 1];
        let mut next_child = vec![u32::MAX; (hi - lo) * n];
        for i in lo..hi {
            let m = mats[i];
            let l = last[i];
            for (slot, gen) in gens.iter().enumerate() {
                // slot ^ 1 is the inverse letter
                if l != usize::MAX && slot == (l ^ 1) {
                    continue;
                }
                let idx = mats.len();
                next_child[(i - lo) * n + slot] = idx as u32;
                mats.push(m.compose(gen));
                last.push(slot);
                if i == 0 {
                    first.push(slot as u8);
                    suffix.push(0);
                } else {
                    first.push(first[i]);
                    // suffix(w x) = suffix(w) x, one shell down
                    let s = suffix[i] as usize;
                    suffix.push(if s == 0 {
                        slot as u32 + 1
                    } else {
                        child[(s - offsets[offsets.len() - 3]) * n + slot]
                    });
                }
            }
        }
        child = next_child;
        offsets.push(mats.len());
    }
    GroupTable {
        mats,
        offsets,
        first,
        suffix,
    }
}

/// Image parameters under a global Möbius map.
pub fn mobius_transform(params: &SchottkyParams, sigma: &MobiusMap) -> Result<SchottkyParams> {
    params.check_shape()?;
    let MobiusMap { a, b, c, d } = *sigma;
    let mut handles = Vec::with_capacity(params.genus);
    for (i, h) in params.handles.iter().enumerate() {
        let ep = c * h.w + d;
        let em = c * h.w_neg + d;
        let den = ep * em - h.rho * c * c;
        let scale = (a.norm() + b.norm() + c.norm() + d.norm()).powi(2)
            * (1.0 + h.w.norm() + h.w_neg.norm()).powi(2);
        if den.norm() <= 1e-14 * scale {
            return Err(Error::ImageAtInfinity(i + 1));
        }
        let w = ((a * h.w + b) * em - h.rho * a * c) / den;
        let w_neg = ((a * h.w_neg + b) * ep - h.rho * a * c) / den;
        handles.push(Handle {
            w,
            w_neg,
            rho: h.rho / (den * den),
        });
    }
    Ok(SchottkyParams {
        genus: params.genus,
        handles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C {
        C::new(re, 0.0)
    }

    fn fixture() -> SchottkyParams {
        SchottkyParams::new(vec![
            Handle::new(c(-3.0), c(-1.0), c(0.02)),
            Handle::new(c(1.0), c(3.0), c(0.02)),
        ])
    }

    #[test]
    fn fixture_passes() {
        let rep = validate(&fixture()).unwrap();
        assert!(rep.is_ok());
        assert!((rep.min_margin - (2.0 - 2.0 * 0.02f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn overlapping_discs_fail() {
        let p = SchottkyParams::new(vec![Handle::new(c(0.0), c(1.0), c(0.5))]);
        let rep = validate(&p).unwrap();
        assert_eq!(rep.violations.len(), 1);
        let v = &rep.violations[0];
        assert_eq!((v.a, v.b), (1, -1));
        assert!((v.margin - (1.0 - 2.0 * 0.5f64.sqrt())).abs() < 1e-12);
        let p = SchottkyParams::new(vec![Handle::new(c(0.0), c(10.0), c(1.0))]);
        assert!(validate(&p).unwrap().is_ok());
    }

    #[test]
    fn zero_rho_rejected() {
        let p = SchottkyParams::new(vec![Handle::new(c(0.0), c(10.0), c(0.0))]);
        assert!(matches!(validate(&p), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn small_rho_limit() {
        for rho in [1e-3, 1e-4, 1e-5] {
            let p = SchottkyParams::new(vec![Handle::new(c(0.0), c(4.0), c(rho))]);
            let h = derive_handle_data(&p).unwrap()[0];
            let lead = -rho / 16.0;
            assert!((h.q - lead).norm() < 0.01 * rho * rho);
            assert!(h.big_w.norm() < 2.0 * rho);
            assert!((h.big_w_neg - 4.0).norm() < 2.0 * rho);
        }
    }

    #[test]
    fn trace_and_fixed_points() {
        let p = fixture();
        let hd = derive_handle_data(&p).unwrap();
        for a in 1..=2 {
            let g = generator(&p, a).unwrap().matrix;
            let q = hd[a as usize - 1].q;
            let t2 = g.trace() * g.trace();
            let want = (1.0 + q) * (1.0 + q) / q;
            assert!((t2 - want).norm() < 1e-10 * want.norm());
            let (rep, att) = g.fixed_points().unwrap();
            assert!((rep - hd[a as usize - 1].big_w).norm() < 1e-10);
            assert!((att - hd[a as usize - 1].big_w_neg).norm() < 1e-10);
        }
    }

    #[test]
    fn generator_limits() {
        let p = fixture();
        for a in [1, 2] {
            let g = generator(&p, a).unwrap().matrix;
            assert!((g.c * p.w(a) + g.d).norm() < 1e-14);
            assert!((g.image_of_infinity().unwrap() - p.w(-a)).norm() < 1e-12);
            let gi = generator(&p, -a).unwrap().matrix;
            assert!((gi.image_of_infinity().unwrap() - p.w(a)).norm() < 1e-12);
            assert!((g.det() - 1.0).norm() < 1e-13);
        }
    }

    #[test]
    fn shell_counts() {
        let p = fixture();
        assert_eq!(enumerate_group(&p, 2).unwrap().count(), 17);
        let p1 = SchottkyParams::new(vec![Handle::new(c(0.0), c(10.0), c(1.0))]);
        assert_eq!(enumerate_group(&p1, 3).unwrap().count(), 7);
        let t = group_table(&p, 5);
        let off = &t.offsets;
        assert_eq!(t.mats.len(), group_size(2, 5));
        for k in 1..=5 {
            assert_eq!(off[k + 1] - off[k], 4 * 3usize.pow(k as u32 - 1));
        }
    }

    #[test]
    fn table_matches_iterator() {
        let p = fixture();
        let t = group_table(&p, 4);
        let words: Vec<Vec<i32>> = enumerate_group(&p, 4).unwrap().map(|e| e.word).collect();
        for (i, (el, m)) in enumerate_group(&p, 4).unwrap().zip(t.mats.iter()).enumerate() {
            assert!((el.matrix.a - m.a).norm() < 1e-12);
            assert!((el.matrix.c - m.c).norm() < 1e-12);
            if i > 0 {
                assert_eq!(letter_slot(el.word[0]), t.first[i] as usize);
                assert_eq!(words[t.suffix[i] as usize], el.word[1..]);
            }
        }
    }

    #[test]
    fn identity_transform() {
        let p = fixture();
        let q = mobius_transform(&p, &MobiusMap::identity()).unwrap();
        assert_eq!(p, q);
    }
}
