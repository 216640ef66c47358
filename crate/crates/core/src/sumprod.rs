//! Exact sum-product evaluation over ±1 variables by variable elimination.
//!
//! A [`Plan`] fixes the factor scopes and an elimination order; a
//! [`Workspace`] holds the numeric tables for one evaluation. The forward pass
//! yields `log Z`; the backward pass (reverse-mode differentiation of the
//! forward pass) yields the normalized marginal of every factor scope.
//!
//! Tables are indexed by bit masks over their sorted scope, bit `k` set meaning
//! spin −1 on `scope[k]`. Every intermediate table is divided by its maximum
//! and the logarithm of that maximum is carried separately, so no value
//! overflows at large couplings.

use crate::error::{check_cap, Result, RgError};

const CHUNK: usize = 8;

/// Maps a joint index onto an input-table index via per-byte lookup tables.
#[derive(Clone, Debug)]
struct Gather {
    luts: Vec<[u32; 1 << CHUNK]>,
}

impl Gather {
    fn new(positions: &[usize], joint_bits: usize) -> Gather {
        let chunks = joint_bits.div_ceil(CHUNK).max(1);
        let mut luts = vec![[0u32; 1 << CHUNK]; chunks];
        for (c, lut) in luts.iter_mut().enumerate() {
            for (byte, slot) in lut.iter_mut().enumerate() {
                let mut idx = 0u32;
                for (k, &p) in positions.iter().enumerate() {
                    if p / CHUNK == c && (byte >> (p % CHUNK)) & 1 == 1 {
                        idx |= 1 << k;
                    }
                }
                *slot = idx;
            }
        }
        Gather { luts }
    }

    #[inline]
    fn index(&self, joint: usize) -> usize {
        let mut idx = 0u32;
        for (c, lut) in self.luts.iter().enumerate() {
            idx |= lut[(joint >> (c * CHUNK)) & ((1 << CHUNK) - 1)];
        }
        idx as usize
    }
}

#[derive(Clone, Debug)]
struct Step {
    inputs: Vec<usize>,
    out: usize,
    out_bits: usize,
    gathers: Vec<Gather>,
}

/// Structure of an elimination: scopes, order and index maps.
#[derive(Clone, Debug)]
pub struct Plan {
    n_vars: usize,
    n_factors: usize,
    scopes: Vec<Vec<usize>>,
    steps: Vec<Step>,
    roots: Vec<usize>,
    width: usize,
}

impl Plan {
    /// Build a plan for `n_vars` variables and the given factor scopes
    /// (each strictly increasing).
    /// `width_cap` bounds the number of variables of any joint table.
    pub fn new(n_vars: usize, factor_scopes: &[Vec<usize>], width_cap: usize) -> Result<Plan> {
        let mut scopes: Vec<Vec<usize>> = Vec::with_capacity(factor_scopes.len() * 2);
        for s in factor_scopes {
            if s.windows(2).any(|w| w[0] >= w[1]) {
                return Err(RgError::invalid("factor scopes must be strictly increasing"));
            }
            if s.iter().any(|&v| v >= n_vars) {
                return Err(RgError::invalid("factor scope refers to an unknown variable"));
            }
            scopes.push(s.clone());
        }
        let n_factors = scopes.len();
        let order = min_fill_order(n_vars, &scopes);

        let mut active: Vec<usize> = (0..n_factors).collect();
        let mut steps = Vec::with_capacity(n_vars);
        let mut width = 0;
        for &v in &order {
            let (inputs, rest): (Vec<usize>, Vec<usize>) =
                active.iter().partition(|&&t| scopes[t].binary_search(&v).is_ok());
            let mut out_scope: Vec<usize> = inputs
                .iter()
                .flat_map(|&t| scopes[t].iter().copied())
                .filter(|&u| u != v)
                .collect();
            out_scope.sort_unstable();
            out_scope.dedup();
            let joint_bits = out_scope.len() + 1;
            width = width.max(joint_bits);
            check_cap("elimination table width", joint_bits, width_cap.min(30))?;
            let gathers = inputs
                .iter()
                .map(|&t| {
                    let pos: Vec<usize> = scopes[t]
                        .iter()
                        .map(|u| {
                            if *u == v {
                                out_scope.len()
                            } else {
                                out_scope.binary_search(u).unwrap()
                            }
                        })
                        .collect();
                    Gather::new(&pos, joint_bits)
                })
                .collect();
            let out = scopes.len();
            steps.push(Step {
                inputs,
                out,
                out_bits: out_scope.len(),
                gathers,
            });
            scopes.push(out_scope);
            active = rest;
            active.push(out);
        }
        Ok(Plan {
            n_vars,
            n_factors,
            scopes,
            steps,
            roots: active,
            width,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_factors(&self) -> usize {
        self.n_factors
    }

    /// Largest joint table (in variables) the elimination visits.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn scope(&self, f: usize) -> &[usize] {
        &self.scopes[f]
    }

    pub fn workspace(&self) -> Workspace {
        let tables: Vec<Vec<f64>> = self.scopes.iter().map(|s| vec![0.0; 1 << s.len()]).collect();
        Workspace {
            log_factors: tables[..self.n_factors].to_vec(),
            adj: tables.clone(),
            tables,
            scales: vec![0.0; self.scopes.len()],
            norms: vec![1.0; self.steps.len()],
            log_z: f64::NAN,
        }
    }
}

/// Greedy min-fill order, ties broken by degree, then by variable id.
fn min_fill_order(n: usize, scopes: &[Vec<usize>]) -> Vec<usize> {
    let mut adj = vec![std::collections::BTreeSet::new(); n];
    for s in scopes {
        for &a in s {
            for &b in s {
                if a != b {
                    adj[a].insert(b);
                }
            }
        }
    }
    let mut alive = vec![true; n];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let mut best: Option<(usize, usize, usize)> = None;
        for v in (0..n).filter(|&v| alive[v]) {
            let nb: Vec<usize> = adj[v].iter().copied().collect();
            let mut fill = 0;
            for i in 0..nb.len() {
                for j in i + 1..nb.len() {
                    if !adj[nb[i]].contains(&nb[j]) {
                        fill += 1;
                    }
                }
            }
            let key = (fill, nb.len(), v);
            if best.is_none_or(|b| key < b) {
                best = Some(key);
            }
        }
        let v = best.unwrap().2;
        let nb: Vec<usize> = adj[v].iter().copied().collect();
        for &a in &nb {
            adj[a].remove(&v);
            for &b in &nb {
                if a != b {
                    adj[a].insert(b);
                }
            }
        }
        adj[v].clear();
        alive[v] = false;
        order.push(v);
    }
    order
}

/// Numeric state for one plan.
#[derive(Clone, Debug)]
pub struct Workspace {
    log_factors: Vec<Vec<f64>>,
    tables: Vec<Vec<f64>>,
    adj: Vec<Vec<f64>>,
    scales: Vec<f64>,
    norms: Vec<f64>,
    log_z: f64,
}

impl Workspace {
    /// Log-values of factor `f`, to be filled by the caller before
    /// [`Workspace::forward`]. `-inf` encodes a zero weight.
    pub fn log_factor_mut(&mut self, f: usize) -> &mut [f64] {
        &mut self.log_factors[f]
    }

    /// Run the elimination and return `log Z`.
    pub fn forward(&mut self, plan: &Plan) -> Result<f64> {
        for f in 0..plan.n_factors {
            let lf = &self.log_factors[f];
            let m = lf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if m == f64::INFINITY || m.is_nan() {
                return Err(RgError::numerical("non-finite factor value"));
            }
            if m == f64::NEG_INFINITY {
                return Err(RgError::numerical("a factor vanishes identically"));
            }
            let t = &mut self.tables[f];
            for (dst, &l) in t.iter_mut().zip(lf) {
                *dst = (l - m).exp();
            }
            self.scales[f] = m;
        }
        for (si, step) in plan.steps.iter().enumerate() {
            let size = 1usize << step.out_bits;
            let (before, after) = self.tables.split_at_mut(step.out);
            let out = &mut after[0];
            let mut max = 0.0f64;
            for (a, slot) in out.iter_mut().enumerate().take(size) {
                let mut s = 0.0;
                for v in 0..2 {
                    let j = a | (v << step.out_bits);
                    let mut prod = 1.0;
                    for (k, &t) in step.inputs.iter().enumerate() {
                        prod *= before[t][step.gathers[k].index(j)];
                    }
                    s += prod;
                }
                *slot = s;
                max = max.max(s);
            }
            if max == 0.0 || !max.is_finite() {
                return Err(RgError::numerical("zero or non-finite partial sum"));
            }
            let inv = 1.0 / max;
            for x in out.iter_mut() {
                *x *= inv;
            }
            self.norms[si] = max;
            self.scales[step.out] =
                step.inputs.iter().map(|&t| self.scales[t]).sum::<f64>() + max.ln();
        }
        let mut log_z = 0.0;
        for &r in &plan.roots {
            let v = self.tables[r][0];
            if v <= 0.0 {
                return Err(RgError::numerical("partition function vanishes"));
            }
            log_z += self.scales[r] + v.ln();
        }
        self.log_z = log_z;
        Ok(log_z)
    }

    /// Reverse pass; afterwards [`Workspace::marginal`] is available for
    /// every factor.
    pub fn backward(&mut self, plan: &Plan) {
        for a in self.adj.iter_mut() {
            a.fill(0.0);
        }
        for &r in &plan.roots {
            self.adj[r][0] = 1.0 / self.tables[r][0];
        }
        let mut pre = Vec::new();
        for (si, step) in plan.steps.iter().enumerate().rev() {
            let inv = 1.0 / self.norms[si];
            let k = step.inputs.len();
            pre.resize(k + 1, 0.0);
            let size = 1usize << step.out_bits;
            for a in 0..size {
                let g = self.adj[step.out][a] * inv;
                if g == 0.0 {
                    continue;
                }
                for v in 0..2 {
                    let j = a | (v << step.out_bits);
                    pre[0] = 1.0;
                    for i in 0..k {
                        let t = step.inputs[i];
                        pre[i + 1] = pre[i] * self.tables[t][step.gathers[i].index(j)];
                    }
                    let mut suf = 1.0;
                    for i in (0..k).rev() {
                        let t = step.inputs[i];
                        let idx = step.gathers[i].index(j);
                        self.adj[t][idx] += g * pre[i] * suf;
                        suf *= self.tables[t][idx];
                    }
                }
            }
        }
    }

    /// Probability table over the scope of factor `f` (needs `backward`).
    pub fn marginal(&self, f: usize) -> Vec<f64> {
        self.tables[f]
            .iter()
            .zip(&self.adj[f])
            .map(|(t, a)| t * a)
            .collect()
    }

    /// `E[Π_{k ∈ mask} s_k]` over the scope of factor `f`, where `mask`
    /// selects scope positions.
    pub fn character_moment(&self, f: usize, mask: usize) -> f64 {
        let mut e = 0.0;
        for (x, (t, a)) in self.tables[f].iter().zip(&self.adj[f]).enumerate() {
            let p = t * a;
            if (x & mask).count_ones() % 2 == 1 {
                e -= p;
            } else {
                e += p;
            }
        }
        e
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(n: usize, scopes: &[Vec<usize>], logs: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
        let mut z = 0.0;
        let mut margs: Vec<Vec<f64>> = scopes.iter().map(|s| vec![0.0; 1 << s.len()]).collect();
        for c in 0..1usize << n {
            let mut lw = 0.0;
            let idx: Vec<usize> = scopes
                .iter()
                .map(|s| s.iter().enumerate().map(|(k, &v)| ((c >> v) & 1) << k).sum())
                .collect();
            for (f, &i) in idx.iter().enumerate() {
                lw += logs[f][i];
            }
            let w = lw.exp();
            z += w;
            for (f, &i) in idx.iter().enumerate() {
                margs[f][i] += w;
            }
        }
        for m in &mut margs {
            for x in m.iter_mut() {
                *x /= z;
            }
        }
        (z.ln(), margs)
    }

    #[test]
    fn matches_enumeration_on_a_small_loopy_graph() {
        let scopes = vec![
            vec![0, 1],
            vec![1, 2],
            vec![2, 3],
            vec![0, 3],
            vec![0, 2],
            vec![4],
            vec![1, 3, 4],
            vec![],
        ];
        let logs: Vec<Vec<f64>> = scopes
            .iter()
            .enumerate()
            .map(|(f, s)| (0..1 << s.len()).map(|x| ((f * 7 + x * 3) % 5) as f64 * 0.3 - 0.4).collect())
            .collect();
        let plan = Plan::new(5, &scopes, 20).unwrap();
        let mut ws = plan.workspace();
        for (f, l) in logs.iter().enumerate() {
            ws.log_factor_mut(f).copy_from_slice(l);
        }
        let lz = ws.forward(&plan).unwrap();
        ws.backward(&plan);
        let (blz, bm) = brute(5, &scopes, &logs);
        assert!((lz - blz).abs() < 1e-12, "{lz} vs {blz}");
        for (f, m) in bm.iter().enumerate() {
            for (a, b) in ws.marginal(f).iter().zip(m) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_entries_and_isolated_variables() {
        // variable 2 appears nowhere; factor 0 forbids (0,0)
        let scopes = vec![vec![0, 1]];
        let plan = Plan::new(3, &scopes, 10).unwrap();
        let mut ws = plan.workspace();
        ws.log_factor_mut(0).copy_from_slice(&[f64::NEG_INFINITY, 0.0, 0.0, 0.0]);
        let lz = ws.forward(&plan).unwrap();
        assert!((lz - 6f64.ln()).abs() < 1e-14);
        ws.backward(&plan);
        let m = ws.marginal(0);
        assert_eq!(m[0], 0.0);
        assert!((m[3] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn width_cap_is_enforced() {
        let scopes: Vec<Vec<usize>> = (0..6).flat_map(|i| (i + 1..6).map(move |j| vec![i, j])).collect();
        assert!(Plan::new(6, &scopes, 4).is_err());
        assert_eq!(Plan::new(6, &scopes, 6).unwrap().width(), 6);
    }

    #[test]
    fn large_couplings_do_not_overflow() {
        let scopes: Vec<Vec<usize>> = (0..20)
            .map(|i| {
                let j = (i + 1) % 20;
                vec![i.min(j), i.max(j)]
            })
            .collect();
        let plan = Plan::new(20, &scopes, 10).unwrap();
        let mut ws = plan.workspace();
        for f in 0..20 {
            ws.log_factor_mut(f).copy_from_slice(&[500.0, -500.0, -500.0, 500.0]);
        }
        let lz = ws.forward(&plan).unwrap();
        // ring: Z = (2cosh K)^n + (2sinh K)^n, dominated by 2·e^{nK}
        assert!((lz - (20.0 * 500.0 + 2f64.ln())).abs() < 1e-9);
    }
}
