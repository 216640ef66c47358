//! Hard-core polymer sums, Ursell coefficients and the Kotecký–Preiss check.

use serde::Serialize;

use crate::caps::Caps;
use crate::error::{check_cap, Result, RgError};
use crate::lattice::{BlockGeometry, BlockSet, BlockSite};

/// `Σ_Δ Π_{N∈Δ} w_N` over sets of polymers pairwise more than `a` apart,
/// optionally restricted to polymers more than `a` from `avoid`.
pub fn hard_core_sum(
    polymers: &[(BlockSet, f64)],
    geom: &BlockGeometry,
    avoid: Option<&BlockSet>,
    caps: &Caps,
) -> Result<f64> {
    let live: Vec<usize> = (0..polymers.len())
        .filter(|&i| match avoid {
            Some(y) if !y.is_empty() => !geom.adjacent(&polymers[i].0, y),
            _ => true,
        })
        .collect();
    check_cap("hard-core polymers", live.len(), caps.max_polymers)?;
    let n = live.len();
    let compat: Vec<Vec<bool>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| !geom.adjacent(&polymers[live[i]].0, &polymers[live[j]].0))
                .collect()
        })
        .collect();
    fn rec(k: usize, chosen: &mut Vec<usize>, live: &[usize], compat: &[Vec<bool>], w: &[(BlockSet, f64)]) -> f64 {
        if k == live.len() {
            return chosen.iter().map(|&i| w[live[i]].1).product();
        }
        let mut s = rec(k + 1, chosen, live, compat, w);
        if chosen.iter().all(|&i| compat[i][k]) {
            chosen.push(k);
            s += rec(k + 1, chosen, live, compat, w);
            chosen.pop();
        }
        s
    }
    Ok(rec(0, &mut Vec::new(), &live, &compat, polymers))
}

const MAX_URSELL: usize = 16;

/// `C(N_1..N_n) = Σ_{G connected} Π_{ij∈G} (−c_ij)` for a 0/1 adjacency,
/// from `g(S) = Π_{i<j∈S}(1 − c_ij)` and
/// `C(S) = g(S) − Σ_{T∋min S, T⊊S} C(T) g(S∖T)`.
pub fn ursell(adj: &[Vec<bool>]) -> Result<i64> {
    let n = adj.len();
    if n == 0 {
        return Err(RgError::invalid("Ursell coefficient needs at least one polymer"));
    }
    check_cap("Ursell polymers", n, MAX_URSELL)?;
    if adj.iter().any(|r| r.len() != n) {
        return Err(RgError::invalid("adjacency must be square"));
    }
    let full = (1usize << n) - 1;
    let mut g = vec![0i64; 1 << n];
    for s in 0..=full {
        let mut ok = true;
        'outer: for i in 0..n {
            if s >> i & 1 == 0 {
                continue;
            }
            for j in i + 1..n {
                if s >> j & 1 == 1 && (adj[i][j] || adj[j][i]) {
                    ok = false;
                    break 'outer;
                }
            }
        }
        g[s] = ok as i64;
    }
    let mut c = vec![0i64; 1 << n];
    for s in 1..=full {
        let low = s & s.wrapping_neg();
        let rest = s ^ low;
        let mut v = g[s];
        // proper subsets T of S containing the lowest element
        let mut t = rest;
        loop {
            let tt = t | low;
            if tt != s {
                v -= c[tt] * g[s ^ tt];
            }
            if t == 0 {
                break;
            }
            t = (t - 1) & rest;
        }
        c[s] = v;
    }
    Ok(c[full])
}

#[derive(Clone, Debug, Serialize)]
pub struct KpSite {
    pub y: BlockSite,
    pub sum: f64,
    /// `ln M − sum`; negative values are the deficit.
    pub margin: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct KpReport {
    pub m: f64,
    pub sites: Vec<KpSite>,
    pub pass: bool,
    pub min_margin: f64,
}

/// `Σ_{N: dist(y,N) ≤ a} v_N M^{|N|} ≤ ln M` at every bar site `y`.
pub fn kp_condition_check(polymers: &[(BlockSet, f64)], m: f64, geom: &BlockGeometry) -> Result<KpReport> {
    if !(m > 1.0) {
        return Err(RgError::invalid("M must exceed 1"));
    }
    let lm = m.ln();
    let sites: Vec<KpSite> = geom
        .bar()
        .sites()
        .iter()
        .map(|&y| {
            let ys = BlockSet::singleton(y);
            let sum: f64 = polymers
                .iter()
                .filter(|(n, _)| geom.adjacent(n, &ys))
                .map(|(n, v)| v.abs() * m.powi(n.len() as i32))
                .sum();
            let margin = lm - sum;
            KpSite {
                y,
                sum,
                margin,
                pass: margin >= -1e-12 * lm,
            }
        })
        .collect();
    let min_margin = sites.iter().map(|s| s.margin).fold(f64::INFINITY, f64::min);
    Ok(KpReport {
        m,
        pass: sites.iter().all(|s| s.pass),
        min_margin,
        sites,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct AvoidanceResult {
    pub ratio: f64,
    pub bound: f64,
    pub pass: bool,
}

/// `Σ_{Δ′} Π w_N / Σ_Δ Π w_N` by enumeration, against `M^{|Y|}`.
pub fn avoidance_oracle(
    polymers: &[(BlockSet, f64)],
    y: &BlockSet,
    m: f64,
    geom: &BlockGeometry,
    caps: &Caps,
) -> Result<AvoidanceResult> {
    let den = hard_core_sum(polymers, geom, None, caps)?;
    if den == 0.0 {
        return Err(RgError::numerical("polymer partition function vanishes"));
    }
    let num = hard_core_sum(polymers, geom, Some(y), caps)?;
    let ratio = num / den;
    let bound = m.powi(y.len() as i32);
    Ok(AvoidanceResult {
        ratio,
        bound,
        pass: ratio.abs() <= bound,
    })
}

/// A seeded polymer system on the bar lattice: `count` polymers grown from
/// random seeds by up to `max_size − 1` neighbour steps, weights uniform in
/// `[−1, 1]`, then scaled so the most loaded site sits at `fill · ln M` of
/// the Kotecký–Preiss condition.
pub fn random_polymer_system(
    geom: &BlockGeometry,
    rng: &mut crate::rng::Stream,
    count: usize,
    max_size: usize,
    m: f64,
    fill: f64,
) -> Result<Vec<(BlockSet, f64)>> {
    let bar = geom.bar();
    if bar.is_empty() || count == 0 || max_size == 0 {
        return Err(RgError::invalid("random polymer system needs sites, polymers and a size"));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let size = 1 + rng.below(max_size);
        let mut sites = vec![bar.site(rng.below(bar.len()))];
        for _ in 1..size {
            let from = sites[rng.below(sites.len())];
            let nb: Vec<BlockSite> = bar
                .neighbors(from)
                .into_iter()
                .filter(|s| !sites.contains(s))
                .collect();
            if nb.is_empty() {
                break;
            }
            sites.push(nb[rng.below(nb.len())]);
        }
        out.push((BlockSet::new(sites), 2.0 * rng.uniform() - 1.0));
    }
    let load = kp_condition_check(&out, m, geom)?
        .sites
        .iter()
        .map(|s| s.sum)
        .fold(0.0, f64::max);
    if load > 0.0 {
        let scale = fill * m.ln() / load;
        for p in out.iter_mut() {
            p.1 *= scale;
        }
    }
    Ok(out)
}
