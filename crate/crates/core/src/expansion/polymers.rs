//! Activities `K(B)`, polymer weights `w_N` and the numerator decomposition.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::caps::Caps;
use crate::error::{check_cap, Result, RgError};
use crate::lattice::{BlockGeometry, BlockSet, Lattice, SiteSet};
use crate::spin::SpinFunction;

use super::kp::hard_core_sum;
use super::stages::IteratedSumResult;

#[derive(Clone, Debug, Serialize)]
pub struct PolymerActivity {
    pub b: SiteSet,
    pub bar: BlockSet,
    pub k: SpinFunction,
    pub sup_norm: f64,
    pub allowable: bool,
}

impl PolymerActivity {
    /// `K = e^{−c σ_B} − 1 = (cosh c − 1) − sinh(c) σ_B`.
    pub fn from_coefficient(b: SiteSet, bar: BlockSet, c: f64, allowable: bool) -> Self {
        let mut k = SpinFunction::zero();
        k.add(SiteSet::empty(), c.cosh() - 1.0);
        k.add(b.clone(), -c.sinh());
        PolymerActivity {
            b,
            bar,
            k,
            sup_norm: c.abs().exp() - 1.0,
            allowable,
        }
    }

    /// An activity given directly as a spin function; the sup-norm is taken
    /// by enumeration over its support.
    pub fn from_function(b: SiteSet, bar: BlockSet, k: SpinFunction, allowable: bool, caps: &Caps) -> Result<Self> {
        let support = k.support();
        check_cap("activity support", support.len(), caps.max_brute_sites)?;
        let n = support.len();
        let mut sup = 0.0f64;
        for mask in 0u64..1 << n {
            let v = k.eval(|s| {
                let i = support.sites().binary_search(s).unwrap();
                if mask >> i & 1 == 1 {
                    -1
                } else {
                    1
                }
            });
            sup = sup.max(v.abs());
        }
        Ok(PolymerActivity {
            b,
            bar,
            k,
            sup_norm: sup,
            allowable,
        })
    }
}

/// `K(B)` for one long-range support of an expansion.
pub fn polymer_activity(b: &SiteSet, result: &IteratedSumResult) -> Result<PolymerActivity> {
    let geom = result.geometry();
    let bar = geom.bar_map(result.lattice(), b)?;
    if !geom.allowable(&bar) {
        return Err(RgError::invalid(format!(
            "B = {} is not allowable",
            b.encode(result.lattice().dim())
        )));
    }
    let c = result.long_range().get(b).copied().unwrap_or(0.0);
    Ok(PolymerActivity::from_coefficient(b.clone(), bar, c, true))
}

/// Activities of every long-range support, allowable or not.
pub fn all_activities(result: &IteratedSumResult) -> Result<Vec<PolymerActivity>> {
    let geom = result.geometry();
    result
        .long_range()
        .into_iter()
        .map(|(b, c)| {
            let bar = geom.bar_map(result.lattice(), &b)?;
            let ok = geom.allowable(&bar);
            Ok(PolymerActivity::from_coefficient(b, bar, c, ok))
        })
        .collect()
}

/// `ε(L)`: the largest sup-norm over allowable activities.
pub fn epsilon_l(activities: &[PolymerActivity]) -> f64 {
    activities
        .iter()
        .filter(|a| a.allowable)
        .map(|a| a.sup_norm)
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, Serialize)]
pub struct Polymer {
    pub n: BlockSet,
    pub w: f64,
    pub v: f64,
    /// Hypergraphs contributing to `w`.
    pub hypergraphs: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct PolymerWeights {
    pub polymers: Vec<Polymer>,
    pub n_max: usize,
    /// `Σ Π ‖K‖` over every set of more than `n_max` activities; bounds the
    /// hypergraphs left out.
    pub truncation_tail: f64,
}

impl PolymerWeights {
    pub fn from_polymers(polymers: Vec<Polymer>) -> Self {
        PolymerWeights {
            polymers,
            n_max: 0,
            truncation_tail: 0.0,
        }
    }

    pub fn pairs(&self) -> Vec<(BlockSet, f64)> {
        self.polymers.iter().map(|p| (p.n.clone(), p.w)).collect()
    }

    /// `c(N_i, N_j)`.
    pub fn adjacency(&self, geom: &BlockGeometry) -> Vec<Vec<bool>> {
        let n = self.polymers.len();
        (0..n)
            .map(|i| (0..n).map(|j| geom.adjacent(&self.polymers[i].n, &self.polymers[j].n)).collect())
            .collect()
    }
}

/// `Σ_{|S| > n} Π_{i∈S} x_i` via elementary symmetric sums.
fn symmetric_tail(x: &[f64], n: usize) -> f64 {
    let mut e = vec![0.0; x.len() + 1];
    e[0] = 1.0;
    for (k, &xi) in x.iter().enumerate() {
        for j in (1..=k + 1).rev() {
            e[j] += e[j - 1] * xi;
        }
    }
    e.iter().skip(n + 1).fold(0.0, |a, x| a + x)
}

fn subsets_up_to(n: usize, k_max: usize, mut f: impl FnMut(&[usize]) -> Result<()>) -> Result<()> {
    fn rec(
        start: usize,
        n: usize,
        k_max: usize,
        cur: &mut Vec<usize>,
        f: &mut dyn FnMut(&[usize]) -> Result<()>,
    ) -> Result<()> {
        if !cur.is_empty() {
            f(cur)?;
        }
        if cur.len() == k_max {
            return Ok(());
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k_max, cur, f)?;
            cur.pop();
        }
        Ok(())
    }
    rec(0, n, k_max, &mut Vec::new(), &mut f)
}

fn product(acts: &[PolymerActivity], idx: &[usize], seed: SpinFunction) -> SpinFunction {
    idx.iter().fold(seed, |acc, &i| acc.mul(&acts[i].k))
}

fn union_bars(acts: &[PolymerActivity], idx: &[usize]) -> BlockSet {
    idx.iter().fold(BlockSet::empty(), |acc, &i| acc.union(&acts[i].bar))
}

/// Expectation of every set in a batch.
pub type Moments<'a> = dyn Fn(&[SiteSet]) -> Result<Vec<f64>> + 'a;

fn expect_all(fs: &[SpinFunction], moments: &Moments) -> Result<Vec<f64>> {
    let mut index: BTreeMap<SiteSet, usize> = BTreeMap::new();
    for f in fs {
        for a in f.terms().keys() {
            let k = index.len();
            index.entry(a.clone()).or_insert(k);
        }
    }
    let mut sets = vec![SiteSet::empty(); index.len()];
    for (a, &k) in &index {
        sets[k] = a.clone();
    }
    let m = moments(&sets)?;
    Ok(fs
        .iter()
        .map(|f| f.terms().iter().map(|(a, c)| c * m[index[a]]).sum())
        .collect())
}

/// `w_N = Σ_{Γ*=N} E(Π_{B∈Γ} K(B))` and `v_N = Σ_{Γ*=N} Π ‖K(B)‖` over
/// L-connected sets `Γ` of at most `n_max` activities.
pub fn polymer_weights(
    activities: &[PolymerActivity],
    moments: &Moments,
    geom: &BlockGeometry,
    n_max: usize,
    caps: &Caps,
) -> Result<PolymerWeights> {
    check_cap("activities", activities.len(), caps.max_polymers)?;
    let mut gammas: Vec<Vec<usize>> = Vec::new();
    subsets_up_to(activities.len(), n_max, |idx| {
        let bars: Vec<BlockSet> = idx.iter().map(|&i| activities[i].bar.clone()).collect();
        if geom.components_of_bars(&bars).len() == 1 {
            gammas.push(idx.to_vec());
        }
        Ok(())
    })?;
    let prods: Vec<SpinFunction> = gammas
        .iter()
        .map(|g| product(activities, g, SpinFunction::constant(1.0)))
        .collect();
    let values = expect_all(&prods, moments)?;
    let mut by_n: BTreeMap<BlockSet, Polymer> = BTreeMap::new();
    for (g, val) in gammas.iter().zip(values) {
        let n = union_bars(activities, g);
        let v: f64 = g.iter().map(|&i| activities[i].sup_norm).product();
        let p = by_n.entry(n.clone()).or_insert(Polymer {
            n,
            w: 0.0,
            v: 0.0,
            hypergraphs: 0,
        });
        p.w += val;
        p.v += v;
        p.hypergraphs += 1;
    }
    let norms: Vec<f64> = activities.iter().map(|a| a.sup_norm).collect();
    Ok(PolymerWeights {
        polymers: by_n.into_values().collect(),
        n_max,
        truncation_tail: symmetric_tail(&norms, n_max),
    })
}

/// `Σ_Δ Π_{N∈Δ} w_N`.
pub fn cluster_sum(weights: &PolymerWeights, geom: &BlockGeometry, caps: &Caps) -> Result<f64> {
    hard_core_sum(&weights.pairs(), geom, None, caps)
}

#[derive(Clone, Debug, Serialize)]
pub struct NumeratorTerm {
    pub r: BlockSet,
    pub w_tilde: f64,
    pub hypergraphs: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct NumeratorDecomposition {
    pub terms: Vec<NumeratorTerm>,
    /// `Σ_{R,Δ′} w̃_R Π_{N∈Δ′} w_N`.
    pub numerator: f64,
    /// `Σ_Δ Π w_N`.
    pub denominator: f64,
}

impl NumeratorDecomposition {
    /// `μ_{σ′}(σ_W)` from the two cluster sums.
    pub fn ratio(&self) -> f64 {
        self.numerator / self.denominator
    }
}

/// `w̃_R = Σ_{Δ_R} E(σ_W Π_{B∈Δ_R} K(B))` over sets of at most `n_max`
/// activities whose bar union is `R` and each of whose L-connected
/// components lies within `a` of `W̄`; `R = ∅` gives `E(σ_W)`.
#[allow(clippy::too_many_arguments)]
pub fn numerator_decomposition(
    activities: &[PolymerActivity],
    moments: &Moments,
    weights: &PolymerWeights,
    lattice: &Lattice,
    geom: &BlockGeometry,
    w: &SiteSet,
    n_max: usize,
    caps: &Caps,
) -> Result<NumeratorDecomposition> {
    check_cap("activities", activities.len(), caps.max_polymers)?;
    let w_bar = geom.bar_map(lattice, w)?;
    let mut sigma_w = SpinFunction::zero();
    sigma_w.add(w.clone(), 1.0);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new()];
    subsets_up_to(activities.len(), n_max, |idx| {
        let bars: Vec<BlockSet> = idx.iter().map(|&i| activities[i].bar.clone()).collect();
        let ok = geom.components_of_bars(&bars).iter().all(|comp| {
            let u = comp.iter().fold(BlockSet::empty(), |acc, &k| acc.union(&bars[k]));
            !w_bar.is_empty() && geom.adjacent(&u, &w_bar)
        });
        if ok {
            groups.push(idx.to_vec());
        }
        Ok(())
    })?;
    let prods: Vec<SpinFunction> = groups
        .iter()
        .map(|g| product(activities, g, sigma_w.clone()))
        .collect();
    let values = expect_all(&prods, moments)?;
    let mut by_r: BTreeMap<BlockSet, NumeratorTerm> = BTreeMap::new();
    for (g, val) in groups.iter().zip(values) {
        let r = union_bars(activities, g);
        let t = by_r.entry(r.clone()).or_insert(NumeratorTerm {
            r,
            w_tilde: 0.0,
            hypergraphs: 0,
        });
        t.w_tilde += val;
        t.hypergraphs += 1;
    }
    let pairs = weights.pairs();
    let mut numerator = 0.0;
    for t in by_r.values() {
        let avoid = t.r.union(&w_bar);
        numerator += t.w_tilde * hard_core_sum(&pairs, geom, Some(&avoid), caps)?;
    }
    let denominator = hard_core_sum(&pairs, geom, None, caps)?;
    Ok(NumeratorDecomposition {
        terms: by_r.into_values().collect(),
        numerator,
        denominator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_tail_matches_enumeration() {
        let x = [0.1, 0.2, 0.3, 0.4];
        let mut want = 0.0;
        for m in 0u32..16 {
            if m.count_ones() > 2 {
                want += (0..4).filter(|i| m >> i & 1 == 1).map(|i| x[i]).product::<f64>();
            }
        }
        assert!((symmetric_tail(&x, 2) - want).abs() < 1e-15);
        assert_eq!(symmetric_tail(&x, 4), 0.0);
    }

    #[test]
    fn activity_forms() {
        let a = PolymerActivity::from_coefficient(SiteSet::from_1d(&[0, 3]), BlockSet::from_1d(&[0, 1]), 0.0, true);
        assert_eq!(a.sup_norm, 0.0);
        assert!(a.k.terms().values().all(|c| *c == 0.0));
        let c = 0.3f64;
        let a = PolymerActivity::from_coefficient(SiteSet::from_1d(&[0, 3]), BlockSet::from_1d(&[0, 1]), c, true);
        // K(σ_B = 1) = e^{−c} − 1, K(σ_B = −1) = e^{c} − 1
        assert!((a.k.eval(|_| 1) - ((-c).exp() - 1.0)).abs() < 1e-15);
        assert!((a.sup_norm - (c.exp() - 1.0)).abs() < 1e-15);
    }
}
