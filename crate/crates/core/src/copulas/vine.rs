//! Regular vines: greedy maximum-spanning-tree structure selection, forward
//! h-function recursion, inverse-Rosenblatt sampling and Monte Carlo CDF.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::copulas::pair::{select_pair, BivariatePairCopula, PairSelection};
use crate::error::{Error, Result};
use crate::marginals::PseudoObservations;
use crate::par;
use crate::stats::kendall_tau;

pub const MIN_VINE_N: usize = 20;
pub const DEFAULT_MC_SAMPLES: usize = 20_000;
pub const DEFAULT_MC_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VineEdge {
    /// Conditioned variables `(a, b)`, 0-based.
    pub conditioned: (usize, usize),
    /// Conditioning set, sorted.
    pub conditioning: Vec<usize>,
    /// Indices of the joined nodes: variables in the first tree, edges of the
    /// previous tree afterwards. The first node carries `a`, the second `b`.
    pub nodes: (usize, usize),
    /// Copula of `(U_a | D, U_b | D)` in that argument order.
    pub pair: BivariatePairCopula,
}

impl VineEdge {
    fn vars(&self) -> BTreeSet<usize> {
        let mut s: BTreeSet<usize> = self.conditioning.iter().copied().collect();
        s.insert(self.conditioned.0);
        s.insert(self.conditioned.1);
        s
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VineStructure {
    pub dim: usize,
    pub trees: Vec<Vec<VineEdge>>,
}

/// A sampling step: the variable drawn and, per tree from the first upward,
/// the edge holding it in its conditioned set.
#[derive(Debug, Clone)]
struct PeelStep {
    var: usize,
    chain: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct VineCopula {
    structure: VineStructure,
    first: usize,
    plan: Vec<PeelStep>,
    mc_samples: usize,
    mc_seed: u64,
    /// Row-major cache of `mc_samples` draws; empty when the CDF is exact.
    cache: Vec<f64>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// Maximum spanning tree by Kruskal; ties broken by candidate order.
fn max_spanning_tree(nodes: usize, candidates: &[(f64, usize, usize)]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&x, &y| candidates[y].0.total_cmp(&candidates[x].0).then(x.cmp(&y)));
    let mut uf = UnionFind::new(nodes);
    let mut tree = Vec::with_capacity(nodes.saturating_sub(1));
    for k in order {
        let (_, i, j) = candidates[k];
        if uf.union(i, j) {
            tree.push((i, j));
        }
    }
    tree.sort_unstable();
    tree
}

/// Fitted data of a tree level: for each edge, the transformed columns for
/// its two conditioned variables.
struct LevelData {
    out_a: Vec<Vec<f64>>,
    out_b: Vec<Vec<f64>>,
}

fn output_for(edge: &VineEdge, var: usize, level: &LevelData, idx: usize) -> Vec<f64> {
    if edge.conditioned.0 == var {
        level.out_a[idx].clone()
    } else {
        level.out_b[idx].clone()
    }
}

fn is_constant(col: &[f64]) -> bool {
    col.windows(2).all(|w| w[0] == w[1])
}

/// Conditioned pair, conditioning set and the two conditional samples.
type Candidate = ((usize, usize), Vec<usize>, Vec<f64>, Vec<f64>);

pub fn fit_vine_structure(pseudo: &PseudoObservations, selection: &PairSelection) -> Result<VineStructure> {
    let d = pseudo.dim();
    let n = pseudo.n();
    if d < 2 {
        return Err(Error::VineDimension);
    }
    if n < MIN_VINE_N {
        return Err(Error::InsufficientData {
            what: "vine fit",
            needed: MIN_VINE_N,
            got: n,
        });
    }
    let columns: Vec<Vec<f64>> = (0..d).map(|j| pseudo.column(j)).collect();
    let degenerate: Vec<bool> = columns.iter().map(|c| is_constant(c)).collect();
    for (j, _) in degenerate.iter().enumerate().filter(|(_, &dg)| dg) {
        log::warn!("column {j} is constant; its pair copulas are set to independence");
    }
    let touches_degenerate = |vars: &BTreeSet<usize>| vars.iter().any(|&v| degenerate[v]);

    let mut trees: Vec<Vec<VineEdge>> = Vec::with_capacity(d - 1);
    let mut prev: Option<LevelData> = None;

    for t in 0..d - 1 {
        // Candidate edges with their conditioned/conditioning sets and data.
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        let mut cand_info: Vec<Candidate> = Vec::new();
        let node_count = if t == 0 { d } else { trees[t - 1].len() };
        for i in 0..node_count {
            for j in i + 1..node_count {
                let info = if t == 0 {
                    ((i, j), Vec::new(), columns[i].clone(), columns[j].clone())
                } else {
                    let (e1, e2) = (&trees[t - 1][i], &trees[t - 1][j]);
                    let shared = [e1.nodes.0, e1.nodes.1]
                        .iter()
                        .filter(|x| [e2.nodes.0, e2.nodes.1].contains(x))
                        .count();
                    if shared != 1 {
                        continue;
                    }
                    let (s1, s2) = (e1.vars(), e2.vars());
                    let cond: Vec<usize> = s1.intersection(&s2).copied().collect();
                    let a: Vec<usize> = s1.difference(&s2).copied().collect();
                    let b: Vec<usize> = s2.difference(&s1).copied().collect();
                    if a.len() != 1 || b.len() != 1 {
                        continue;
                    }
                    let level = prev.as_ref().expect("previous level");
                    let xa = output_for(e1, a[0], level, i);
                    let xb = output_for(e2, b[0], level, j);
                    ((a[0], b[0]), cond, xa, xb)
                };
                let tau = kendall_tau(&info.2, &info.3);
                cands.push((tau.abs(), i, j));
                cand_info.push(info);
            }
        }
        let chosen = max_spanning_tree(node_count, &cands);
        if chosen.len() != node_count - 1 {
            return Err(Error::InvalidStructure(format!(
                "tree {} has {} edges, expected {}",
                t + 1,
                chosen.len(),
                node_count - 1
            )));
        }
        let mut edges = Vec::with_capacity(chosen.len());
        let mut level = LevelData {
            out_a: Vec::with_capacity(chosen.len()),
            out_b: Vec::with_capacity(chosen.len()),
        };
        for (i, j) in chosen {
            let k = cands
                .iter()
                .position(|&(_, ci, cj)| ci == i && cj == j)
                .expect("chosen edge is a candidate");
            let (conditioned, conditioning, xa, xb) = cand_info[k].clone();
            let mut vars: BTreeSet<usize> = conditioning.iter().copied().collect();
            vars.insert(conditioned.0);
            vars.insert(conditioned.1);
            let pair = if touches_degenerate(&vars) {
                BivariatePairCopula::independence()
            } else {
                select_pair(&xa, &xb, selection)?
            };
            let out_a: Vec<f64> = xa.iter().zip(&xb).map(|(&p, &q)| pair.cond_second(p, q)).collect();
            let out_b: Vec<f64> = xa.iter().zip(&xb).map(|(&p, &q)| pair.cond_first(p, q)).collect();
            level.out_a.push(out_a);
            level.out_b.push(out_b);
            edges.push(VineEdge {
                conditioned,
                conditioning,
                nodes: (i, j),
                pair,
            });
        }
        trees.push(edges);
        prev = Some(level);
    }
    let structure = VineStructure { dim: d, trees };
    structure.validate()?;
    Ok(structure)
}

impl VineStructure {
    pub fn pair_count(&self) -> usize {
        self.trees.iter().map(Vec::len).sum()
    }

    /// First-tree edges as sorted variable pairs.
    pub fn first_tree_edges(&self) -> BTreeSet<(usize, usize)> {
        self.trees
            .first()
            .map(|t| {
                t.iter()
                    .map(|e| (e.conditioned.0.min(e.conditioned.1), e.conditioned.0.max(e.conditioned.1)))
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Checks tree sizes, spanning-tree shape, the proximity condition and
    /// the conditioned/conditioning sets of every edge.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        let bad = |msg: String| Err(Error::InvalidStructure(msg));
        if d < 2 {
            return Err(Error::VineDimension);
        }
        if self.trees.len() != d - 1 {
            return bad(format!("expected {} trees, found {}", d - 1, self.trees.len()));
        }
        for (t, tree) in self.trees.iter().enumerate() {
            let node_count = d - t;
            if tree.len() != node_count - 1 {
                return bad(format!("tree {} has {} edges", t + 1, tree.len()));
            }
            let mut uf = UnionFind::new(node_count);
            for edge in tree {
                let (i, j) = edge.nodes;
                if i >= node_count || j >= node_count || i == j {
                    return bad(format!("tree {} edge joins invalid nodes", t + 1));
                }
                if !uf.union(i, j) {
                    return bad(format!("tree {} contains a cycle", t + 1));
                }
                if edge.conditioning.len() != t {
                    return bad(format!("tree {} edge has conditioning set of size {}", t + 1, edge.conditioning.len()));
                }
                if t == 0 {
                    if edge.conditioned != edge.nodes {
                        return bad("first-tree edge nodes must equal its variables".into());
                    }
                    continue;
                }
                let (e1, e2) = (&self.trees[t - 1][i], &self.trees[t - 1][j]);
                let shared = [e1.nodes.0, e1.nodes.1]
                    .iter()
                    .filter(|x| [e2.nodes.0, e2.nodes.1].contains(x))
                    .count();
                if shared != 1 {
                    return bad(format!("tree {} edge violates the proximity condition", t + 1));
                }
                let (s1, s2) = (e1.vars(), e2.vars());
                let cond: Vec<usize> = s1.intersection(&s2).copied().collect();
                let a: Vec<usize> = s1.difference(&s2).copied().collect();
                let b: Vec<usize> = s2.difference(&s1).copied().collect();
                if cond != edge.conditioning || a != [edge.conditioned.0] || b != [edge.conditioned.1] {
                    return bad(format!("tree {} edge has inconsistent variable sets", t + 1));
                }
                let in_cond = |e: &VineEdge, v: usize| e.conditioned.0 == v || e.conditioned.1 == v;
                if !in_cond(e1, edge.conditioned.0) || !in_cond(e2, edge.conditioned.1) {
                    return bad(format!("tree {} edge is not reachable by h-functions", t + 1));
                }
            }
        }
        if self.pair_count() != d * (d - 1) / 2 {
            return bad(format!("expected {} pair copulas", d * (d - 1) / 2));
        }
        Ok(())
    }

    fn peel(&self) -> Result<(usize, Vec<PeelStep>)> {
        let d = self.dim;
        let mut removed: Vec<Vec<bool>> = self.trees.iter().map(|t| vec![false; t.len()]).collect();
        let mut remaining: BTreeSet<usize> = (0..d).collect();
        let mut steps = Vec::with_capacity(d - 1);
        for k in (2..=d).rev() {
            let top = k - 2;
            let live = |t: usize, removed: &Vec<Vec<bool>>| {
                (0..self.trees[t].len()).filter(|&e| !removed[t][e]).collect::<Vec<_>>()
            };
            let top_edges = live(top, &removed);
            if top_edges.len() != 1 {
                return Err(Error::InvalidStructure("cannot peel vine".into()));
            }
            let var = self.trees[top][top_edges[0]].conditioned.0;
            let mut chain = Vec::with_capacity(k - 1);
            for t in 0..=top {
                let hits: Vec<usize> = live(t, &removed)
                    .into_iter()
                    .filter(|&e| {
                        let c = self.trees[t][e].conditioned;
                        c.0 == var || c.1 == var
                    })
                    .collect();
                if hits.len() != 1 {
                    return Err(Error::InvalidStructure("cannot peel vine".into()));
                }
                chain.push(hits[0]);
            }
            for (t, &e) in chain.iter().enumerate() {
                removed[t][e] = true;
            }
            remaining.remove(&var);
            steps.push(PeelStep { var, chain });
        }
        steps.reverse();
        let first = *remaining.iter().next().expect("one variable left");
        Ok((first, steps))
    }
}

impl VineCopula {
    pub fn new(structure: VineStructure, mc_samples: usize, mc_seed: u64) -> Result<Self> {
        structure.validate()?;
        let (first, plan) = structure.peel()?;
        let mut vine = Self {
            structure,
            first,
            plan,
            mc_samples,
            mc_seed,
            cache: Vec::new(),
        };
        if !vine.has_exact_cdf() {
            vine.cache = vine.sample_flat(mc_samples, mc_seed);
        }
        Ok(vine)
    }

    pub fn structure(&self) -> &VineStructure {
        &self.structure
    }

    pub fn dim(&self) -> usize {
        self.structure.dim
    }

    pub fn mc_samples(&self) -> usize {
        self.mc_samples
    }

    pub fn mc_seed(&self) -> u64 {
        self.mc_seed
    }

    fn all_independence(&self) -> bool {
        self.structure.trees.iter().flatten().all(|e| e.pair.is_independence())
    }

    /// Whether the CDF is evaluated in closed form rather than by Monte Carlo.
    pub fn has_exact_cdf(&self) -> bool {
        self.dim() == 2 || self.all_independence()
    }

    /// Same vine with its CDF cache redrawn from another seed.
    pub fn with_mc_seed(&self, mc_seed: u64) -> Self {
        let mut vine = self.clone();
        vine.mc_seed = mc_seed;
        if !vine.has_exact_cdf() {
            vine.cache = vine.sample_flat(vine.mc_samples, mc_seed);
        }
        vine
    }

    pub fn with_mc_samples(&self, mc_samples: usize) -> Self {
        let mut vine = self.clone();
        vine.mc_samples = mc_samples;
        if !vine.has_exact_cdf() {
            vine.cache = vine.sample_flat(mc_samples, vine.mc_seed);
        }
        vine
    }

    pub fn cdf(&self, u: &[f64]) -> f64 {
        if u.iter().any(|&x| x <= 0.0) {
            return 0.0;
        }
        if self.dim() == 2 {
            return self.structure.trees[0][0].pair.cdf(u[0], u[1]);
        }
        if self.all_independence() {
            return u.iter().map(|x| x.min(1.0)).product();
        }
        let d = self.dim();
        let count = par::count_chunks(&self.cache, d, |row| row.iter().zip(u).all(|(a, b)| a <= b));
        count as f64 / self.mc_samples as f64
    }

    fn input(&self, t: usize, e: usize, side_a: bool, u: &[f64], out: &[Vec<(f64, f64)>]) -> f64 {
        let edge = &self.structure.trees[t][e];
        let var = if side_a { edge.conditioned.0 } else { edge.conditioned.1 };
        if t == 0 {
            return u[var];
        }
        let node = if side_a { edge.nodes.0 } else { edge.nodes.1 };
        let prev = &self.structure.trees[t - 1][node];
        let o = out[t - 1][node];
        if prev.conditioned.0 == var {
            o.0
        } else {
            o.1
        }
    }

    fn scratch(&self) -> Vec<Vec<(f64, f64)>> {
        self.structure.trees.iter().map(|t| vec![(f64::NAN, f64::NAN); t.len()]).collect()
    }

    pub fn log_density(&self, u: &[f64]) -> f64 {
        let mut out = self.scratch();
        let mut acc = 0.0;
        for (t, tree) in self.structure.trees.iter().enumerate() {
            for (e, edge) in tree.iter().enumerate() {
                let a = self.input(t, e, true, u, &out);
                let b = self.input(t, e, false, u, &out);
                acc += edge.pair.pdf(a, b).max(f64::MIN_POSITIVE).ln();
                out[t][e] = (edge.pair.cond_second(a, b), edge.pair.cond_first(a, b));
            }
        }
        acc
    }

    /// Inverse Rosenblatt transform of one row of independent uniforms.
    fn transform(&self, w: &[f64], u: &mut [f64]) {
        let mut out = self.scratch();
        u[self.first] = w[0];
        let mut vals = Vec::with_capacity(self.dim());
        for (k, step) in self.plan.iter().enumerate() {
            let top = step.chain.len() - 1;
            vals.clear();
            vals.resize(step.chain.len(), 0.0);
            let mut x = w[k + 1];
            for t in (0..=top).rev() {
                let e = step.chain[t];
                let edge = &self.structure.trees[t][e];
                let var_is_a = edge.conditioned.0 == step.var;
                let other = self.input(t, e, !var_is_a, u, &out);
                x = if var_is_a {
                    edge.pair.inv_cond_second(x, other)
                } else {
                    edge.pair.inv_cond_first(x, other)
                };
                vals[t] = x;
            }
            u[step.var] = vals[0];
            for t in 0..=top {
                let e = step.chain[t];
                let edge = &self.structure.trees[t][e];
                let var_is_a = edge.conditioned.0 == step.var;
                let other = self.input(t, e, !var_is_a, u, &out);
                let (a, b) = if var_is_a { (vals[t], other) } else { (other, vals[t]) };
                out[t][e] = (edge.pair.cond_second(a, b), edge.pair.cond_first(a, b));
            }
        }
    }

    fn sample_flat(&self, count: usize, seed: u64) -> Vec<f64> {
        let d = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..count * d)
            .map(|_| rng.sample::<f64, _>(rand::distr::Open01))
            .collect();
        let rows = par::map_range(count, |i| {
            let mut u = vec![0.0; d];
            self.transform(&w[i * d..(i + 1) * d], &mut u);
            u
        });
        rows.into_iter().flatten().collect()
    }

    /// Deterministic given `seed`.
    pub fn sample(&self, count: usize, seed: u64) -> Array2<f64> {
        Array2::from_shape_vec((count, self.dim()), self.sample_flat(count, seed))
            .expect("shape matches sample length")
    }
}
