//! Factor-graph form of `T(σ,σ′) e^{−H(σ)}` for fixed structure and varying
//! block spins.
//!
//! Decimation kept sites and explicitly clamped sites are removed from the
//! variable set; their spins enter the factor tables. The structure (and so
//! the elimination plan) is shared by every `σ′`.

use std::collections::BTreeMap;

use crate::caps::Caps;
use crate::error::{Result, RgError};
use crate::kernel::{Kernel, KernelBlocks};
use crate::lattice::{Lattice, SiteSet};
use crate::spin::Interaction;
use crate::sumprod::{Plan, Workspace};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Pin {
    Free(usize),
    Image(usize),
    Value(i8),
}

#[derive(Clone, Debug)]
struct Term {
    j: f64,
    mask: usize,
    pinned: Vec<usize>,
}

#[derive(Clone, Debug)]
struct BlockTerm {
    image: usize,
    positions: Vec<usize>,
    pinned: Vec<usize>,
}

#[derive(Clone, Debug, Default)]
struct Factor {
    terms: Vec<Term>,
    blocks: Vec<BlockTerm>,
    dynamic: bool,
}

#[derive(Clone, Debug)]
struct Probe {
    factor: Option<usize>,
    mask: usize,
    pinned: Vec<usize>,
}

/// Constrained Boltzmann weight as a factor graph.
#[derive(Clone, Debug)]
pub struct GibbsModel {
    pins: Vec<Pin>,
    factors: Vec<Factor>,
    const_terms: Vec<Term>,
    const_blocks: Vec<BlockTerm>,
    kernel: Kernel,
    plan: Plan,
    probes: Vec<Probe>,
    site_factor: Vec<Option<(usize, usize)>>,
    n_image: usize,
}

/// Per-thread buffers for a [`GibbsModel`].
#[derive(Clone, Debug)]
pub struct ModelWorkspace {
    ws: Workspace,
    filled: bool,
}

impl GibbsModel {
    /// `interaction` must be in finite form on `lattice`. `clamps` fixes
    /// additional free sites; `probes` are sets whose expectations will be
    /// queried.
    pub fn new(
        lattice: &Lattice,
        interaction: &Interaction,
        blocks: &KernelBlocks,
        clamps: &[(usize, i8)],
        probes: &[SiteSet],
        caps: &Caps,
    ) -> Result<GibbsModel> {
        if interaction.is_translation_invariant() {
            return Err(RgError::invalid("model needs a finite-volume interaction"));
        }
        let n = lattice.len();
        let mut pin: Vec<Option<Pin>> = vec![None; n];
        if let Kernel::Decimation { .. } = blocks.kernel() {
            for j in 0..blocks.n_blocks() {
                pin[blocks.kept_site(j)] = Some(Pin::Image(j));
            }
        }
        for &(i, v) in clamps {
            if i >= n || (v != 1 && v != -1) {
                return Err(RgError::invalid("bad clamp"));
            }
            if pin[i].is_some() {
                return Err(RgError::invalid("clamped site is already fixed"));
            }
            pin[i] = Some(Pin::Value(v));
        }
        let mut n_vars = 0;
        let pins: Vec<Pin> = pin
            .into_iter()
            .map(|p| {
                p.unwrap_or_else(|| {
                    n_vars += 1;
                    Pin::Free(n_vars - 1)
                })
            })
            .collect();

        let split = |idx: &[usize]| -> (Vec<usize>, Vec<usize>) {
            let mut vars = Vec::new();
            let mut pinned = Vec::new();
            for &i in idx {
                match pins[i] {
                    Pin::Free(v) => vars.push(v),
                    _ => pinned.push(i),
                }
            }
            vars.sort_unstable();
            (vars, pinned)
        };
        let mask_of = |vars: &[usize], scope: &[usize]| -> usize {
            vars.iter()
                .map(|v| 1usize << scope.binary_search(v).unwrap())
                .sum()
        };

        let mut by_scope: BTreeMap<Vec<usize>, Factor> = BTreeMap::new();
        let mut const_terms = Vec::new();
        for (x, &j) in interaction.iter() {
            let idx: Vec<usize> = x
                .iter()
                .map(|s| {
                    lattice
                        .index_of(*s)
                        .ok_or_else(|| RgError::invalid(format!("site {} outside volume", s.encode(lattice.dim()))))
                })
                .collect::<Result<_>>()?;
            let (vars, pinned) = split(&idx);
            let term = Term {
                j,
                mask: if vars.is_empty() { 0 } else { (1 << vars.len()) - 1 },
                pinned,
            };
            if vars.is_empty() {
                const_terms.push(term);
            } else {
                by_scope.entry(vars).or_default().terms.push(term);
            }
        }
        let mut const_blocks = Vec::new();
        if matches!(blocks.kernel(), Kernel::Kadanoff { .. } | Kernel::Majority { .. }) {
            for j in 0..blocks.n_blocks() {
                let (vars, pinned) = split(blocks.block(j));
                if vars.is_empty() {
                    const_blocks.push(BlockTerm {
                        image: j,
                        positions: Vec::new(),
                        pinned,
                    });
                    continue;
                }
                let f = by_scope.entry(vars.clone()).or_default();
                let mut positions = Vec::new();
                for &i in blocks.block(j) {
                    if let Pin::Free(v) = pins[i] {
                        positions.push(vars.binary_search(&v).unwrap());
                    }
                }
                f.blocks.push(BlockTerm {
                    image: j,
                    positions,
                    pinned,
                });
            }
        }
        // every variable and every probe needs a covering factor
        for v in 0..n_vars {
            if !by_scope.keys().any(|s| s.binary_search(&v).is_ok()) {
                by_scope.entry(vec![v]).or_default();
            }
        }
        let mut probe_parts = Vec::with_capacity(probes.len());
        for p in probes {
            let idx: Vec<usize> = p
                .iter()
                .map(|s| {
                    lattice
                        .index_of(*s)
                        .ok_or_else(|| RgError::invalid(format!("site {} outside volume", s.encode(lattice.dim()))))
                })
                .collect::<Result<_>>()?;
            let (vars, pinned) = split(&idx);
            if !vars.is_empty() && !by_scope.keys().any(|s| vars.iter().all(|v| s.binary_search(v).is_ok())) {
                by_scope.entry(vars.clone()).or_default();
            }
            probe_parts.push((vars, pinned));
        }

        let scopes: Vec<Vec<usize>> = by_scope.keys().cloned().collect();
        let mut factors: Vec<Factor> = by_scope.into_values().collect();
        for f in factors.iter_mut() {
            f.dynamic = !f.blocks.is_empty() || f.terms.iter().any(|t| !t.pinned.is_empty());
        }
        let plan = Plan::new(n_vars, &scopes, caps.max_table_width)?;

        let cover = |vars: &[usize]| -> Option<usize> {
            scopes
                .iter()
                .enumerate()
                .filter(|(_, s)| vars.iter().all(|v| s.binary_search(v).is_ok()))
                .min_by_key(|(_, s)| s.len())
                .map(|(f, _)| f)
        };
        let probes = probe_parts
            .into_iter()
            .map(|(vars, pinned)| {
                if vars.is_empty() {
                    Probe {
                        factor: None,
                        mask: 0,
                        pinned,
                    }
                } else {
                    let f = cover(&vars).expect("probe factor exists");
                    Probe {
                        factor: Some(f),
                        mask: mask_of(&vars, &scopes[f]),
                        pinned,
                    }
                }
            })
            .collect();
        let site_factor = pins
            .iter()
            .map(|p| match p {
                Pin::Free(v) => {
                    let f = cover(&[*v]).unwrap();
                    Some((f, mask_of(&[*v], &scopes[f])))
                }
                _ => None,
            })
            .collect();
        Ok(GibbsModel {
            pins,
            factors,
            const_terms,
            const_blocks,
            kernel: *blocks.kernel(),
            plan,
            probes,
            site_factor,
            n_image: blocks.n_blocks(),
        })
    }

    pub fn n_vars(&self) -> usize {
        self.plan.n_vars()
    }

    pub fn width(&self) -> usize {
        self.plan.width()
    }

    pub fn n_probes(&self) -> usize {
        self.probes.len()
    }

    pub fn workspace(&self) -> ModelWorkspace {
        ModelWorkspace {
            ws: self.plan.workspace(),
            filled: false,
        }
    }

    #[inline]
    fn spin(&self, site: usize, sp: u64) -> i8 {
        match self.pins[site] {
            Pin::Image(j) => {
                if sp >> j & 1 == 1 {
                    -1
                } else {
                    1
                }
            }
            Pin::Value(v) => v,
            Pin::Free(_) => unreachable!("free site has no fixed spin"),
        }
    }

    fn pinned_product(&self, sites: &[usize], sp: u64) -> i8 {
        sites.iter().fold(1, |a, &i| a * self.spin(i, sp))
    }

    fn block_log(&self, b: &BlockTerm, x: usize, sp: u64) -> f64 {
        let mut s: i64 = b.pinned.iter().map(|&i| self.spin(i, sp) as i64).sum();
        for &p in &b.positions {
            s += if x >> p & 1 == 1 { -1 } else { 1 };
        }
        let spj = if sp >> b.image & 1 == 1 { -1 } else { 1 };
        self.kernel.log_block_factor(s, spj)
    }

    fn fill(&self, mws: &mut ModelWorkspace, sp: u64) {
        for (f, fac) in self.factors.iter().enumerate() {
            if mws.filled && !fac.dynamic {
                continue;
            }
            let signs: Vec<f64> = fac
                .terms
                .iter()
                .map(|t| t.j * self.pinned_product(&t.pinned, sp) as f64)
                .collect();
            let table = mws.ws.log_factor_mut(f);
            for (x, slot) in table.iter_mut().enumerate() {
                let mut l = 0.0;
                for (t, c) in fac.terms.iter().zip(&signs) {
                    if (x & t.mask).count_ones() % 2 == 1 {
                        l -= c;
                    } else {
                        l += c;
                    }
                }
                for b in &fac.blocks {
                    l += self.block_log(b, x, sp);
                }
                *slot = l;
            }
        }
        mws.filled = true;
    }

    fn constant(&self, sp: u64) -> f64 {
        let mut c: f64 = self
            .const_terms
            .iter()
            .map(|t| t.j * self.pinned_product(&t.pinned, sp) as f64)
            .sum();
        for b in &self.const_blocks {
            c += self.block_log(b, 0, sp);
        }
        c
    }

    /// `log Σ_σ T(σ,σ′) e^{−H(σ)}` for the block-spin mask `sp` (bit set =
    /// spin −1); with `marginals` the backward pass is run as well.
    pub fn solve(&self, mws: &mut ModelWorkspace, sp: u64, marginals: bool) -> Result<f64> {
        if self.n_image < 64 && sp >> self.n_image != 0 {
            return Err(RgError::invalid("block-spin mask exceeds the image volume"));
        }
        let c = self.constant(sp);
        if c == f64::NEG_INFINITY {
            return Err(RgError::numerical("zero total weight"));
        }
        self.fill(mws, sp);
        let lz = mws.ws.forward(&self.plan)?;
        if marginals {
            mws.ws.backward(&self.plan);
        }
        Ok(lz + c)
    }

    /// Expectation of probe `k` (after `solve` with marginals at `sp`).
    pub fn probe_mean(&self, mws: &ModelWorkspace, k: usize, sp: u64) -> f64 {
        let p = &self.probes[k];
        let sign = self.pinned_product(&p.pinned, sp) as f64;
        match p.factor {
            None => sign,
            Some(f) => sign * mws.ws.character_moment(f, p.mask),
        }
    }

    /// `μ(σ_i)` for a site index (after `solve` with marginals at `sp`).
    pub fn site_mean(&self, mws: &ModelWorkspace, site: usize, sp: u64) -> f64 {
        match self.site_factor[site] {
            None => self.spin(site, sp) as f64,
            Some((f, m)) => mws.ws.character_moment(f, m),
        }
    }

    pub fn is_pinned(&self, site: usize) -> bool {
        !matches!(self.pins[site], Pin::Free(_))
    }
}

