//! Virasoro graphs (partial permutations), their weights and the operators `𝒟_n`.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64 as C;
use rayon::prelude::*;
use serde::Serialize;

use crate::differentials::{index_set, FormValue, LimitPointConfig, Surface};
use crate::error::{Error, Result};
use crate::kahan::Kahan;
use crate::moduli::ModuliFunction;
use crate::variations::{FdConfig, Family, Nabla};

/// Largest supported graph order.
pub const MAX_ORDER: usize = 8;

/// An injective partial map on `{0, .., n-1}`; edge `i -> mapping[i]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VirasoroGraph {
    n: usize,
    mapping: Vec<Option<usize>>,
    cycles: Vec<Vec<usize>>,
    chains: Vec<Vec<usize>>,
}

/// The data entering a graph weight: cycle count, edges and chain ends.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GraphWeightTerm {
    pub cycle_factor_exponent: usize,
    pub edge_list: Vec<(usize, usize)>,
    /// `(x_m, y_m)`: chain start (no preimage) and end (no image).
    pub chain_endpoints: Vec<(usize, usize)>,
}

impl VirasoroGraph {
    pub fn new(mapping: Vec<Option<usize>>) -> Result<Self> {
        let n = mapping.len();
        if n > MAX_ORDER {
            return Err(Error::TooManyVertices(n));
        }
        let mut pre = vec![None; n];
        for (i, m) in mapping.iter().enumerate() {
            if let Some(j) = *m {
                if j >= n {
                    return Err(Error::InvalidParams(format!("edge {i} -> {j} leaves the graph")));
                }
                if pre[j].is_some() {
                    return Err(Error::InvalidParams(format!("vertex {j} has two preimages")));
                }
                pre[j] = Some(i);
            }
        }
        let mut seen = vec![false; n];
        let mut chains = Vec::new();
        for start in 0..n {
            if pre[start].is_some() {
                continue;
            }
            let mut chain = vec![start];
            seen[start] = true;
            let mut v = start;
            while let Some(w) = mapping[v] {
                chain.push(w);
                seen[w] = true;
                v = w;
            }
            chains.push(chain);
        }
        // everything left lies on a cycle
        let mut cycles = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut cyc = vec![start];
            seen[start] = true;
            let mut v = mapping[start].unwrap();
            while v != start {
                cyc.push(v);
                seen[v] = true;
                v = mapping[v].unwrap();
            }
            cycles.push(cyc);
        }
        Ok(VirasoroGraph {
            n,
            mapping,
            cycles,
            chains,
        })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn mapping(&self) -> &[Option<usize>] {
        &self.mapping
    }

    pub fn cycles(&self) -> &[Vec<usize>] {
        &self.cycles
    }

    /// Chains in edge order; a singleton is a degenerate chain.
    pub fn chains(&self) -> &[Vec<usize>] {
        &self.chains
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.mapping
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.map(|j| (i, j)))
            .collect()
    }

    pub fn weight_term(&self) -> GraphWeightTerm {
        GraphWeightTerm {
            cycle_factor_exponent: self.cycles.len(),
            edge_list: self.edges(),
            chain_endpoints: self
                .chains
                .iter()
                .map(|c| (c[0], *c.last().unwrap()))
                .collect(),
        }
    }
}

/// `Σ_i i! C(n, i)^2`.
pub fn graph_count(n: usize) -> u64 {
    let mut binom = 1u64;
    let mut fact = 1u64;
    let mut total = 0u64;
    for i in 0..=n as u64 {
        if i > 0 {
            binom = binom * (n as u64 - i + 1) / i;
            fact *= i;
        }
        total += fact * binom * binom;
    }
    total
}

/// All partial permutations of order `n`, in lexicographic order of the mapping
/// (`None` first).
pub fn enumerate_graphs(n: usize) -> Result<Vec<VirasoroGraph>> {
    if n > MAX_ORDER {
        return Err(Error::TooManyVertices(n));
    }
    fn rec(i: usize, map: &mut Vec<Option<usize>>, used: &mut Vec<bool>, out: &mut Vec<Vec<Option<usize>>>) {
        let n = map.len();
        if i == n {
            out.push(map.clone());
            return;
        }
        map[i] = None;
        rec(i + 1, map, used, out);
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                map[i] = Some(j);
                rec(i + 1, map, used, out);
                used[j] = false;
            }
        }
        map[i] = None;
    }
    let mut maps = Vec::with_capacity(graph_count(n) as usize);
    rec(0, &mut vec![None; n], &mut vec![false; n], &mut maps);
    maps.into_iter().map(VirasoroGraph::new).collect()
}

/// `ℰ(z_i, z_j)`: `s(z_i)/6` when the points coincide, `ω(z_i, z_j)` otherwise.
pub fn edge_weight(surface: &Surface, zi: C, zj: C) -> Result<FormValue> {
    if zi == zj {
        Ok(surface.projective_connection(zi)?.scale(C::new(1.0 / 6.0, 0.0)))
    } else {
        surface.omega(zi, zj)
    }
}

/// Forms at the vertices: `ν_a(z_i)`, the edge matrix and `τ`.
#[derive(Clone, Debug)]
pub struct GraphContext {
    /// `nu[i][a]`.
    pub nu: Vec<Vec<C>>,
    /// `edge[(i, j)] = ℰ(z_i, z_j)`.
    pub edge: DMatrix<C>,
    pub tau: DMatrix<C>,
}

impl GraphContext {
    pub fn new(surface: &Surface, points: &[C]) -> Result<Self> {
        let n = points.len();
        let nu = points
            .iter()
            .map(|&z| surface.nu_all(z))
            .collect::<Result<Vec<_>>>()?;
        let mut edge = DMatrix::from_element(n, n, C::new(0.0, 0.0));
        for i in 0..n {
            edge[(i, i)] = surface.projective_connection(points[i])?.value / 6.0;
            for j in 0..i {
                let w = surface.omega(points[i], points[j])?.value;
                edge[(i, j)] = w;
                edge[(j, i)] = w;
            }
        }
        Ok(GraphContext {
            nu,
            edge,
            tau: surface.period_matrix()?.tau.clone(),
        })
    }

    pub fn from_parts(nu: Vec<Vec<C>>, edge: DMatrix<C>, tau: DMatrix<C>) -> Self {
        GraphContext { nu, edge, tau }
    }

    pub fn order(&self) -> usize {
        self.nu.len()
    }

    /// Context on a subset of the vertices.
    pub fn restrict(&self, keep: &[usize]) -> GraphContext {
        GraphContext {
            nu: keep.iter().map(|&i| self.nu[i].clone()).collect(),
            edge: DMatrix::from_fn(keep.len(), keep.len(), |i, j| self.edge[(keep[i], keep[j])]),
            tau: self.tau.clone(),
        }
    }
}

/// Derivatives of `F` at `τ` for every multiset of index pairs up to a given size.
pub struct DerivativeTable {
    pairs: Vec<(usize, usize)>,
    values: HashMap<Vec<usize>, C>,
}

impl DerivativeTable {
    pub fn new(f: &dyn ModuliFunction, tau: &DMatrix<C>, max_order: usize) -> Result<Self> {
        let pairs = index_set(tau.nrows());
        let k = pairs.len();
        let mut keys: Vec<Vec<usize>> = vec![Vec::new()];
        let mut layer: Vec<Vec<usize>> = vec![Vec::new()];
        for _ in 0..max_order {
            let mut next = Vec::new();
            for key in &layer {
                let lo = key.last().copied().unwrap_or(0);
                for p in lo..k {
                    let mut nk = key.clone();
                    nk.push(p);
                    next.push(nk);
                }
            }
            keys.extend(next.iter().cloned());
            layer = next;
        }
        let vals = keys
            .par_iter()
            .map(|key| {
                let ps: Vec<(usize, usize)> = key.iter().map(|&i| pairs[i]).collect();
                f.derivative(tau, &ps)
            })
            .collect::<Result<Vec<C>>>()?;
        Ok(DerivativeTable {
            pairs,
            values: keys.into_iter().zip(vals).collect(),
        })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Derivative for a list of pair indices into [`DerivativeTable::pairs`], any order.
    pub fn get(&self, idx: &[usize]) -> Result<C> {
        let mut key = idx.to_vec();
        key.sort_unstable();
        self.values
            .get(&key)
            .copied()
            .ok_or(Error::DerivativeOrder {
                requested: idx.len(),
                supported: self.values.keys().map(Vec::len).max().unwrap_or(0),
            })
    }
}

/// `Δ_M(x|y) F` given `ν` at the chain starts and ends.
pub fn chain_operator(nu_x: &[Vec<C>], nu_y: &[Vec<C>], table: &DerivativeTable) -> Result<C> {
    let m = nu_x.len();
    let k = table.pairs().len();
    let mut idx = vec![0usize; m];
    let mut total = Kahan::default();
    loop {
        let mut coeff = C::new(1.0, 0.0);
        for (s, &i) in idx.iter().enumerate() {
            let (a, b) = table.pairs()[i];
            coeff *= nu_x[s][a] * nu_y[s][b];
        }
        total.add(coeff * table.get(&idx)?);
        // odometer over K^M
        let mut pos = 0;
        loop {
            if pos == m {
                return Ok(total.total());
            }
            idx[pos] += 1;
            if idx[pos] < k {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// `𝒟_{g_n}(z) F`.
pub fn apply_graph(ctx: &GraphContext, graph: &VirasoroGraph, c: C, table: &DerivativeTable) -> Result<C> {
    if graph.order() != ctx.order() {
        return Err(Error::InvalidParams(format!(
            "graph of order {} on {} points",
            graph.order(),
            ctx.order()
        )));
    }
    let term = graph.weight_term();
    let mut pre = (c / 2.0).powi(term.cycle_factor_exponent as i32);
    for &(i, j) in &term.edge_list {
        pre *= ctx.edge[(i, j)];
    }
    let nu_x: Vec<Vec<C>> = term.chain_endpoints.iter().map(|&(x, _)| ctx.nu[x].clone()).collect();
    let nu_y: Vec<Vec<C>> = term.chain_endpoints.iter().map(|&(_, y)| ctx.nu[y].clone()).collect();
    Ok(pre * chain_operator(&nu_x, &nu_y, table)?)
}

/// `𝒟_n(z) F` with the contribution of each graph, graphs in [`enumerate_graphs`] order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DnValue {
    pub total: C,
    pub per_graph: Vec<C>,
}

pub fn apply_dn(ctx: &GraphContext, c: C, f: &dyn ModuliFunction) -> Result<DnValue> {
    let n = ctx.order();
    let table = DerivativeTable::new(f, &ctx.tau, n)?;
    apply_dn_with(ctx, c, &table)
}

pub fn apply_dn_with(ctx: &GraphContext, c: C, table: &DerivativeTable) -> Result<DnValue> {
    let graphs = enumerate_graphs(ctx.order())?;
    let per_graph = graphs
        .par_iter()
        .map(|g| apply_graph(ctx, g, c, table))
        .collect::<Result<Vec<C>>>()?;
    let mut k = Kahan::default();
    for v in &per_graph {
        k.add(*v);
    }
    Ok(DnValue {
        total: k.total(),
        per_graph,
    })
}

/// `𝒟_n(z) F` on a surface at the given points.
pub fn apply_dn_at(surface: &Surface, points: &[C], c: C, f: &dyn ModuliFunction) -> Result<DnValue> {
    apply_dn(&GraphContext::new(surface, points)?, c, f)
}

/// Both sides of the recursion for `𝒟_{n+1}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecursionReport {
    pub lhs: C,
    pub rhs: C,
    pub residual: f64,
}

struct DnFamily<'a> {
    n: usize,
    c: C,
    f: &'a dyn ModuliFunction,
}

impl Family for DnFamily<'_> {
    fn weights(&self) -> Vec<i32> {
        vec![2; self.n]
    }

    fn eval(&self, surface: &Surface, points: &[C]) -> Result<C> {
        Ok(apply_dn_at(surface, points, self.c, self.f)?.total)
    }
}

/// Compares `𝒟_{n+1}(z, z_{n+1}) F` with the right side of the recursion, where `∇` is
/// applied by finite differences to the family `params -> 𝒟_n(z) F`.
pub fn verify_recursion(
    surface: &Surface,
    c: C,
    f: &dyn ModuliFunction,
    points: &[C],
    fd: &FdConfig,
) -> Result<RecursionReport> {
    if points.is_empty() {
        return Err(Error::InvalidParams("need n + 1 >= 1 points".into()));
    }
    let n = points.len() - 1;
    let z = &points[..n];
    let zn = points[n];
    let lhs = apply_dn_at(surface, points, c, f)?.total;
    let cfg = LimitPointConfig::default_for(surface, 2);
    let nab = Nabla::bers(surface, &cfg, zn)?;
    let fam = DnFamily { n, c, f };
    let mut rhs = nab.apply_form(surface, &fam, z, fd)?.value;
    let dn = apply_dn_at(surface, z, c, f)?.total;
    rhs += c / 12.0 * surface.projective_connection(zn)?.value * dn;
    for k in 0..n {
        let rest: Vec<C> = (0..n).filter(|&i| i != k).map(|i| z[i]).collect();
        let dm = apply_dn_at(surface, &rest, c, f)?.total;
        rhs += c / 2.0 * surface.omega_n(2, z[k], zn)?.value * dm;
    }
    Ok(RecursionReport {
        lhs,
        rhs,
        residual: (lhs - rhs).norm() / lhs.norm().max(f64::MIN_POSITIVE),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn census() {
        for n in 0..=6 {
            assert_eq!(enumerate_graphs(n).unwrap().len() as u64, graph_count(n));
        }
        assert_eq!(
            (1..=5).map(graph_count).collect::<Vec<_>>(),
            vec![2, 7, 34, 209, 1546]
        );
        assert!(enumerate_graphs(9).is_err());
    }

    #[test]
    fn decomposition_partitions_vertices() {
        for g in enumerate_graphs(4).unwrap() {
            let mut seen = vec![0; 4];
            for v in g.cycles().iter().chain(g.chains()).flatten() {
                seen[*v] += 1;
            }
            assert!(seen.iter().all(|&k| k == 1));
            let t = g.weight_term();
            assert_eq!(t.edge_list.len(), 4 - g.chains().len());
        }
    }

    #[test]
    fn rejects_non_injective() {
        assert!(VirasoroGraph::new(vec![Some(1), Some(1)]).is_err());
        assert!(VirasoroGraph::new(vec![Some(2), None]).is_err());
    }

    #[test]
    fn two_cycle_and_chain() {
        let g = VirasoroGraph::new(vec![Some(1), Some(0), None, Some(2)]).unwrap();
        assert_eq!(g.cycles(), &[vec![0, 1]]);
        assert_eq!(g.chains(), &[vec![3, 2]]);
        assert_eq!(g.weight_term().chain_endpoints, vec![(3, 2)]);
    }
}
