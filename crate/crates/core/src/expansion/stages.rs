//! Type-ordered summation over L-blocks with long-range terms set aside.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::caps::Caps;
use crate::error::{check_cap, Result, RgError};
use crate::kernel::{Kernel, KernelBlocks};
use crate::lattice::{BlockGeometry, BlockScheme, BlockSite, Lattice, Site, SiteSet};
use crate::model::GibbsModel;
use crate::spin::{characters_of_table, Interaction, SpinFunction};

/// Coefficients at or below this are dropped after each block sum; their
/// total is kept in [`IteratedSumResult::pruned_mass`].
pub const PRUNE_TOL: f64 = 1e-14;

/// `F^i` split by support diameter.
#[derive(Clone, Debug, Serialize)]
pub struct StageTerms {
    pub stage: usize,
    pub f: SpinFunction,
    pub lr: SpinFunction,
    pub sr: SpinFunction,
}

/// `F^0 … F^{2^d}` for one block-spin configuration.
#[derive(Clone, Debug)]
pub struct IteratedSumResult {
    pub stages: Vec<StageTerms>,
    /// `F^{2^d}`, a constant once every free spin has been summed.
    pub f_final: f64,
    /// Sum of the magnitudes of all dropped coefficients.
    pub pruned_mass: f64,
    lattice: Lattice,
    interaction: Interaction,
    blocks: KernelBlocks,
    geom: BlockGeometry,
    sigma_prime: u64,
    caps: Caps,
}

fn free_part(
    lattice: &Lattice,
    blocks: &KernelBlocks,
    sp: u64,
    x: &SiteSet,
) -> Result<(SiteSet, i8)> {
    let decimation = matches!(blocks.kernel(), Kernel::Decimation { .. });
    let mut kept: BTreeMap<usize, usize> = BTreeMap::new();
    if decimation {
        for j in 0..blocks.n_blocks() {
            kept.insert(blocks.kept_site(j), j);
        }
    }
    let mut sign = 1i8;
    let mut free = Vec::new();
    for s in x.iter() {
        let i = lattice
            .index_of(*s)
            .ok_or_else(|| RgError::invalid(format!("site {} outside volume", s.encode(lattice.dim()))))?;
        match kept.get(&i) {
            Some(&j) => {
                if sp >> j & 1 == 1 {
                    sign = -sign;
                }
            }
            None => free.push(*s),
        }
    }
    Ok((SiteSet::new(free), sign))
}

fn split(lattice: &Lattice, l: i64, f: &SpinFunction) -> (SpinFunction, SpinFunction) {
    let mut lr = SpinFunction::zero();
    let mut sr = SpinFunction::zero();
    for (a, &c) in f.terms() {
        if lattice.sup_diameter(a) > l {
            lr.add(a.clone(), c);
        } else {
            sr.add(a.clone(), c);
        }
    }
    (lr, sr)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `G(σ_U) = −ln Σ_{σ_β} exp(−Σ terms)` expanded over `U`.
fn block_sum(
    inner: &[Site],
    terms: &[(SiteSet, f64)],
    caps: &Caps,
) -> Result<SpinFunction> {
    let inner_set = SiteSet::new(inner.iter().copied());
    let outer = SiteSet::new(
        terms
            .iter()
            .flat_map(|(a, _)| a.iter().copied())
            .filter(|s| !inner_set.contains(s)),
    );
    let (k, u) = (inner_set.len(), outer.len());
    check_cap("block sum sites", k + u, caps.max_expand_sites)?;
    // each term as masks over (inner, outer)
    let masks: Vec<(usize, usize, f64)> = terms
        .iter()
        .map(|(a, c)| {
            let mut mi = 0;
            let mut mo = 0;
            for s in a.iter() {
                if let Ok(p) = inner_set.sites().binary_search(s) {
                    mi |= 1 << p;
                } else {
                    mo |= 1 << outer.sites().binary_search(s).unwrap();
                }
            }
            (mi, mo, *c)
        })
        .collect();
    let mut values = vec![0.0; 1 << u];
    let mut buf = vec![0.0; 1 << k];
    for (xo, v) in values.iter_mut().enumerate() {
        for (xi, slot) in buf.iter_mut().enumerate() {
            let mut e = 0.0;
            for &(mi, mo, c) in &masks {
                if ((xi & mi).count_ones() + (xo & mo).count_ones()) % 2 == 1 {
                    e -= c;
                } else {
                    e += c;
                }
            }
            *slot = -e;
        }
        *v = -log_sum_exp(&buf);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(RgError::numerical("block sum has zero weight"));
    }
    let coeffs = characters_of_table(&values);
    let mut out = SpinFunction::zero();
    for (a, c) in coeffs.into_iter().enumerate() {
        let set = SiteSet::new((0..u).filter(|i| a >> i & 1 == 1).map(|i| outer.sites()[i]));
        out.add(set, c);
    }
    Ok(out)
}

fn prune(f: SpinFunction, mass: &mut f64) -> SpinFunction {
    let mut out = SpinFunction::zero();
    for (a, c) in f.into_terms() {
        if c.abs() > PRUNE_TOL || a.is_empty() {
            out.add(a, c);
        } else {
            *mass += c.abs();
        }
    }
    out
}

/// `F^0 = H − ln T` over the free spins, then `e^{−F^i} = Σ_i e^{−F^{i−1}_SR}`
/// for block types `i = 1..2^d`.
pub fn iterated_block_sum(
    lattice: &Lattice,
    interaction: &Interaction,
    kernel: &Kernel,
    sigma_prime: u64,
    scheme: &BlockScheme,
    caps: &Caps,
) -> Result<IteratedSumResult> {
    if let Kernel::Majority { .. } = kernel {
        return Err(RgError::invalid(
            "the block expansion needs ln T finite; majority kernels vanish on some configurations",
        ));
    }
    if let Some(b) = kernel.b() {
        if b != scheme.b || !scheme.l.is_multiple_of(b) {
            return Err(RgError::invalid(format!(
                "kernel spacing {b} must equal the scheme's b = {} and divide l = {}",
                scheme.b, scheme.l
            )));
        }
    }
    let fin = interaction.on_lattice(lattice)?;
    let blocks = KernelBlocks::new(lattice, kernel)?;
    let geom = BlockGeometry::new(lattice, scheme)?;
    let n_img = blocks.n_blocks();
    if n_img < 64 && sigma_prime >> n_img != 0 {
        return Err(RgError::invalid("block-spin mask exceeds the image volume"));
    }
    let dim = lattice.dim();
    let l = geom.l();

    let mut f0 = SpinFunction::zero();
    for (x, &j) in fin.iter() {
        let (free, sign) = free_part(lattice, &blocks, sigma_prime, x)?;
        f0.add(free, -j * sign as f64);
    }
    if let Kernel::Kadanoff { .. } = kernel {
        for j in 0..n_img {
            let spj: i8 = if sigma_prime >> j & 1 == 1 { -1 } else { 1 };
            let sites: Vec<Site> = blocks.block(j).iter().map(|&i| lattice.site(i)).collect();
            let lt = crate::spin::character_expand(&sites, caps.max_expand_sites, |spin| {
                let s: i64 = sites.iter().map(|x| spin(x) as i64).sum();
                -kernel.log_block_factor(s, spj)
            })?;
            f0.add_function(&lt, 1.0);
        }
    }
    let mut pruned_mass = 0.0;
    let f0 = prune(f0, &mut pruned_mass);

    // free sites of every L-block
    let pinned: Vec<bool> = (0..lattice.len())
        .map(|i| {
            matches!(kernel, Kernel::Decimation { .. })
                && (0..n_img).any(|j| blocks.kept_site(j) == i)
        })
        .collect();
    let mut by_type: BTreeMap<usize, Vec<(BlockSite, Vec<Site>)>> = BTreeMap::new();
    for y in geom.bar().sites() {
        let inner: Vec<Site> = geom
            .interior(*y)
            .into_iter()
            .filter(|s| !pinned[lattice.index_of(*s).unwrap()])
            .collect();
        by_type
            .entry(BlockGeometry::block_type(*y, dim))
            .or_default()
            .push((*y, inner));
    }

    let (lr, sr) = split(lattice, l, &f0);
    let mut stages = vec![StageTerms {
        stage: 0,
        f: f0,
        lr,
        sr,
    }];
    for t in 1..=(1usize << dim) {
        let prev = &stages[t - 1];
        let blocks_t = by_type.get(&t).cloned().unwrap_or_default();
        let mut assigned: Vec<Vec<(SiteSet, f64)>> = vec![Vec::new(); blocks_t.len()];
        let mut next = SpinFunction::zero();
        for (a, &c) in prev.sr.terms() {
            let mut hit: Option<usize> = None;
            for s in a.iter() {
                let y = geom.block_of(*s);
                if BlockGeometry::block_type(y, dim) != t {
                    continue;
                }
                let k = blocks_t.iter().position(|(z, _)| *z == y).unwrap();
                match hit {
                    None => hit = Some(k),
                    Some(h) if h != k => {
                        return Err(RgError::invalid(
                            "a short-range term touches two blocks of one type; use even bar extents on periodic volumes",
                        ))
                    }
                    _ => {}
                }
            }
            match hit {
                Some(k) => assigned[k].push((a.clone(), c)),
                None => next.add(a.clone(), c),
            }
        }
        for ((_, inner), terms) in blocks_t.iter().zip(&assigned) {
            let g = block_sum(inner, terms, caps)?;
            next.add_function(&g, 1.0);
        }
        let next = prune(next, &mut pruned_mass);
        let (lr, sr) = split(lattice, l, &next);
        stages.push(StageTerms {
            stage: t,
            f: next,
            lr,
            sr,
        });
    }
    let last = stages.last().unwrap();
    if last.f.terms().keys().any(|a| !a.is_empty()) {
        return Err(RgError::numerical("spins left after the final block sum"));
    }
    let f_final = last.f.coefficient(&SiteSet::empty());
    Ok(IteratedSumResult {
        stages,
        f_final,
        pruned_mass,
        lattice: lattice.clone(),
        interaction: fin,
        blocks,
        geom,
        sigma_prime,
        caps: *caps,
    })
}

impl IteratedSumResult {
    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn geometry(&self) -> &BlockGeometry {
        &self.geom
    }

    pub fn sigma_prime(&self) -> u64 {
        self.sigma_prime
    }

    /// Number of summation stages, `2^d`.
    pub fn n_stages(&self) -> usize {
        self.stages.len() - 1
    }

    /// Every long-range support with its coefficient summed over the
    /// stages `0..2^d`.
    pub fn long_range(&self) -> BTreeMap<SiteSet, f64> {
        let mut out: BTreeMap<SiteSet, f64> = BTreeMap::new();
        for st in &self.stages[..self.stages.len() - 1] {
            for (a, &c) in st.lr.terms() {
                *out.entry(a.clone()).or_insert(0.0) += c;
            }
        }
        out
    }

    /// The modified expectation `E` of this expansion.
    pub fn expectation(&self) -> Result<ModifiedExpectation> {
        let mut j = self.interaction.clone();
        for (a, c) in self.long_range() {
            j.add(a, c);
        }
        Ok(ModifiedExpectation {
            lattice: self.lattice.clone(),
            interaction: j,
            blocks: self.blocks.clone(),
            sigma_prime: self.sigma_prime,
            f_final: self.f_final,
            caps: self.caps,
        })
    }

    /// `ln Σ_σ T e^{−H}` computed directly, for comparison.
    pub fn direct_log_partition(&self) -> Result<f64> {
        let model = GibbsModel::new(&self.lattice, &self.interaction, &self.blocks, &[], &[], &self.caps)?;
        let mut ws = model.workspace();
        model.solve(&mut ws, self.sigma_prime, false)
    }

    /// `e^{F^{2^d}} Σ_σ T e^{−H} σ_W`, the numerator in units of `e^{−F^{2^d}}`.
    pub fn direct_numerator(&self, w: &SiteSet) -> Result<f64> {
        let model = GibbsModel::new(
            &self.lattice,
            &self.interaction,
            &self.blocks,
            &[],
            std::slice::from_ref(w),
            &self.caps,
        )?;
        let mut ws = model.workspace();
        let lz = model.solve(&mut ws, self.sigma_prime, true)?;
        Ok((lz + self.f_final).exp() * model.probe_mean(&ws, 0, self.sigma_prime))
    }
}

/// `E f = e^{F^{2^d}} Σ_σ T e^{−H + Σ_i F^i_LR} f`.
#[derive(Clone, Debug)]
pub struct ModifiedExpectation {
    lattice: Lattice,
    interaction: Interaction,
    blocks: KernelBlocks,
    sigma_prime: u64,
    f_final: f64,
    caps: Caps,
}

impl ModifiedExpectation {
    /// `E(1)`; equal to one up to rounding when the stages are consistent.
    pub fn normalization(&self) -> Result<f64> {
        let model = GibbsModel::new(&self.lattice, &self.interaction, &self.blocks, &[], &[], &self.caps)?;
        let mut ws = model.workspace();
        Ok((model.solve(&mut ws, self.sigma_prime, false)? + self.f_final).exp())
    }

    /// `E(σ_A)` for each set, normalized by the exact weight (so `E(1) = 1`).
    pub fn moments(&self, sets: &[SiteSet]) -> Result<Vec<f64>> {
        if sets.is_empty() {
            return Ok(Vec::new());
        }
        let model = GibbsModel::new(&self.lattice, &self.interaction, &self.blocks, &[], sets, &self.caps)?;
        let mut ws = model.workspace();
        model.solve(&mut ws, self.sigma_prime, true)?;
        Ok((0..sets.len())
            .map(|k| model.probe_mean(&ws, k, self.sigma_prime))
            .collect())
    }

    pub fn expect(&self, f: &SpinFunction) -> Result<f64> {
        let sets: Vec<SiteSet> = f.terms().keys().cloned().collect();
        let m = self.moments(&sets)?;
        Ok(f.terms().values().zip(m).map(|(c, x)| c * x).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Geometry, LatticeSpec};

    #[test]
    fn ring_trivial_kernel_long_range_pair() {
        let lat = Lattice::new(&LatticeSpec::ring(8)).unwrap();
        let j = Interaction::nearest_neighbor(Geometry::Square1d, 0.3, 0.0);
        let r = iterated_block_sum(&lat, &j, &Kernel::Trivial, 0, &BlockScheme::new(1, 2, 3), &Caps::default())
            .unwrap();
        let lr: Vec<SiteSet> = r.long_range().into_keys().collect();
        assert_eq!(lr, vec![SiteSet::from_1d(&[2, 7]), SiteSet::from_1d(&[3, 6])]);
        let c = r.long_range()[&SiteSet::from_1d(&[2, 7])];
        // three bonds through the summed block: −atanh(tanh³ β)
        assert!((c + (0.3f64.tanh().powi(3)).atanh()).abs() < 1e-12);
        for st in &r.stages {
            let mut sum = st.lr.clone();
            sum.add_function(&st.sr, 1.0);
            assert_eq!(sum.clone().pruned(0.0), st.f.clone().pruned(0.0));
        }
        let e = r.expectation().unwrap();
        assert!((e.normalization().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infinite_temperature_decimation() {
        let lat = Lattice::new(&LatticeSpec::torus(4, 4)).unwrap();
        let r = iterated_block_sum(
            &lat,
            &Interaction::finite(2),
            &Kernel::Decimation { b: 2 },
            5,
            &BlockScheme::new(2, 2, 3),
            &Caps::default(),
        )
        .unwrap();
        assert!(r.long_range().is_empty());
        assert!((-r.f_final - r.direct_log_partition().unwrap()).abs() < 1e-12);
        assert!((-r.f_final - 12.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn majority_is_rejected() {
        let lat = Lattice::new(&LatticeSpec::ring(8)).unwrap();
        let r = iterated_block_sum(
            &lat,
            &Interaction::finite(1),
            &Kernel::Majority { b: 2 },
            0,
            &BlockScheme::new(2, 2, 3),
            &Caps::default(),
        );
        assert!(r.is_err());
    }
}
