//! Constrained measures `μ_{σ′,V,τ}` and the correlation-decay check.

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::caps::Caps;
use crate::error::{Result, RgError};
use crate::kernel::{Kernel, KernelBlocks};
use crate::lattice::{Boundary, BoundarySpins, Geometry, Lattice, LatticeSpec, Site, SiteSet};
use crate::model::GibbsModel;
use crate::rng::Stream;
use crate::spin::{Interaction, SpinFunction};

/// `μ_{σ′}(F) = Σ_σ F T e^{−H} / Σ_σ T e^{−H}` on one volume.
#[derive(Clone, Debug)]
pub struct ConstrainedMeasure {
    lattice: Lattice,
    interaction: Interaction,
    blocks: KernelBlocks,
    sigma_prime: u64,
}

impl ConstrainedMeasure {
    pub fn new(lattice: &Lattice, interaction: &Interaction, kernel: &Kernel, sigma_prime: u64) -> Result<Self> {
        let blocks = KernelBlocks::new(lattice, kernel)?;
        let n = blocks.image().len();
        if n < 64 && sigma_prime >> n != 0 {
            return Err(RgError::invalid("block-spin mask exceeds the image volume"));
        }
        Ok(ConstrainedMeasure {
            lattice: lattice.clone(),
            interaction: interaction.on_lattice(lattice)?,
            blocks,
            sigma_prime,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn blocks(&self) -> &KernelBlocks {
        &self.blocks
    }

    /// `μ(F)` for a spin function on the volume.
    pub fn expectation(&self, f: &SpinFunction, caps: &Caps) -> Result<f64> {
        let probes: Vec<SiteSet> = f.terms().keys().cloned().collect();
        let model = GibbsModel::new(&self.lattice, &self.interaction, &self.blocks, &[], &probes, caps)?;
        let mut ws = model.workspace();
        model.solve(&mut ws, self.sigma_prime, true)?;
        Ok(f
            .terms()
            .values()
            .enumerate()
            .map(|(k, c)| c * model.probe_mean(&ws, k, self.sigma_prime))
            .sum())
    }

    /// `μ(σ_i σ_j) − μ(σ_i) μ(σ_j)`.
    pub fn truncated_correlation(&self, i: Site, j: Site, caps: &Caps) -> Result<f64> {
        let solver = CorrelationSolver::new(&self.lattice, &self.interaction, &self.blocks, caps)?;
        let a = self.index(i)?;
        let b = self.index(j)?;
        solver.pair(self.sigma_prime, a, b)
    }

    fn index(&self, s: Site) -> Result<usize> {
        self.lattice
            .index_of(s)
            .ok_or_else(|| RgError::invalid(format!("site {} outside volume", s.encode(self.lattice.dim()))))
    }
}

/// Truncated two-point functions by conditioning: `μ(σ_iσ_j) =
/// Σ_s μ(σ_i = s) · s · μ(σ_j | σ_i = s)`, one clamped solve per `(i, s)`
/// giving every `j` at once.
pub struct CorrelationSolver {
    n: usize,
    base: GibbsModel,
    clamped: Vec<Option<[GibbsModel; 2]>>,
}

impl CorrelationSolver {
    pub fn new(lattice: &Lattice, interaction: &Interaction, blocks: &KernelBlocks, caps: &Caps) -> Result<Self> {
        let base = GibbsModel::new(lattice, interaction, blocks, &[], &[], caps)?;
        let mut clamped = Vec::with_capacity(lattice.len());
        for i in 0..lattice.len() {
            if base.is_pinned(i) {
                clamped.push(None);
            } else {
                let up = GibbsModel::new(lattice, interaction, blocks, &[(i, 1)], &[], caps)?;
                let down = GibbsModel::new(lattice, interaction, blocks, &[(i, -1)], &[], caps)?;
                clamped.push(Some([up, down]));
            }
        }
        Ok(CorrelationSolver {
            n: lattice.len(),
            base,
            clamped,
        })
    }

    pub fn is_pinned(&self, i: usize) -> bool {
        self.base.is_pinned(i)
    }

    fn means(&self, model: &GibbsModel, sp: u64) -> Result<Vec<f64>> {
        let mut ws = model.workspace();
        model.solve(&mut ws, sp, true)?;
        Ok((0..self.n).map(|j| model.site_mean(&ws, j, sp)).collect())
    }

    /// Row `i` of the truncated correlation matrix, for the sites `js`.
    fn row(&self, sp: u64, i: usize, base_means: &[f64], js: &[usize]) -> Result<Vec<f64>> {
        let Some(models) = &self.clamped[i] else {
            return Ok(vec![0.0; js.len()]);
        };
        let mi = base_means[i];
        let mut second = vec![0.0; js.len()];
        for (k, s) in [1.0f64, -1.0].into_iter().enumerate() {
            let p = 0.5 * (1.0 + s * mi);
            if p <= 0.0 {
                continue;
            }
            let cond = self.means(&models[k], sp)?;
            for (slot, &j) in second.iter_mut().zip(js) {
                *slot += p * s * cond[j];
            }
        }
        Ok(js
            .iter()
            .zip(second)
            .map(|(&j, m2)| if self.base.is_pinned(j) { 0.0 } else { m2 - mi * base_means[j] })
            .collect())
    }

    /// Truncated correlation of one pair; symmetric by construction since
    /// the pair is put in index order first.
    pub fn pair(&self, sp: u64, a: usize, b: usize) -> Result<f64> {
        let base_means = self.means(&self.base, sp)?;
        if a == b {
            return Ok(1.0 - base_means[a] * base_means[a]);
        }
        let (i, j) = (a.min(b), a.max(b));
        Ok(self.row(sp, i, &base_means, &[j])?[0])
    }

    /// Truncated correlations for a list of pairs `(i, j)` with `i < j`.
    pub fn pairs(&self, sp: u64, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        let base_means = self.means(&self.base, sp)?;
        let mut out = vec![0.0; pairs.len()];
        let mut k = 0;
        while k < pairs.len() {
            let i = pairs[k].0;
            let mut end = k;
            while end < pairs.len() && pairs[end].0 == i {
                end += 1;
            }
            let js: Vec<usize> = pairs[k..end].iter().map(|p| p.1).collect();
            let row = self.row(sp, i, &base_means, &js)?;
            out[k..end].copy_from_slice(&row);
            k = end;
        }
        Ok(out)
    }
}

/// Boundary conditions to scan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauPolicy {
    Free,
    Periodic,
    AllPlus,
    AllMinus,
    RandomFixed,
}

/// Which block-spin configurations to visit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaPolicy {
    /// Exhaustive when the image has at most 12 sites, else `samples` draws.
    Auto { samples: usize },
    Exhaustive,
    Sample { count: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeSpec {
    pub geometry: Geometry,
    pub extent: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisSpec {
    pub interaction: Interaction,
    pub kernel: Kernel,
    pub volumes: Vec<VolumeSpec>,
    pub boundaries: Vec<TauPolicy>,
    pub sigma_prime: SigmaPolicy,
    /// Largest number of pairs per `(V, τ, σ′)`; `None` takes all pairs.
    #[serde(default)]
    pub pair_budget: Option<usize>,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct CorrelationSample {
    pub volume: usize,
    pub tau_id: usize,
    pub sigma_prime_id: u64,
    pub i: Site,
    pub j: Site,
    pub dist: f64,
    pub corr: f64,
}

fn ser_extended<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else if *x > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HypothesisReport {
    pub samples: Vec<CorrelationSample>,
    /// Decay rate; `+inf` when every correlation is numerically zero.
    #[serde(serialize_with = "ser_extended")]
    pub m_hyp: f64,
    pub c_hyp: f64,
    pub holds: bool,
    /// Index into `samples` of the pair that fixes `c_hyp`.
    pub worst_pair: Option<usize>,
    pub fitted_points: usize,
    /// True when every correlation fell below the fit threshold.
    pub all_zero: bool,
}

/// Correlations at or below this are treated as zero.
pub const CORR_FLOOR: f64 = 1e-14;

/// Least-squares fit of `ln|corr|` against distance, then the smallest
/// constant making the exponential bound hold for every sample.
pub fn fit_decay(samples: &[(f64, f64)]) -> (f64, f64, Option<usize>, usize) {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(_, c)| c.abs() > CORR_FLOOR)
        .map(|&(d, c)| (d, c.abs().ln()))
        .collect();
    if pts.is_empty() {
        return (f64::INFINITY, 0.0, None, 0);
    }
    let n = pts.len() as f64;
    let md = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sdd: f64 = pts.iter().map(|p| (p.0 - md) * (p.0 - md)).sum();
    let m = if sdd > 1e-12 * n {
        -pts.iter().map(|p| (p.0 - md) * (p.1 - ml)).sum::<f64>() / sdd
    } else {
        // a single distance: the line through the largest value and (0, 0)
        let (d0, lmax) = pts.iter().fold((0.0, f64::NEG_INFINITY), |acc, p| if p.1 > acc.1 { *p } else { acc });
        if d0 > 0.0 { -lmax / d0 } else { 0.0 }
    };
    let mut c = 0.0;
    let mut worst = None;
    for (k, &(d, corr)) in samples.iter().enumerate() {
        let v = corr.abs() * (m * d).exp();
        if corr.abs() > CORR_FLOOR && v > c {
            c = v;
            worst = Some(k);
        }
    }
    (m, c, worst, pts.len())
}

fn boundary_for(
    policy: TauPolicy,
    geometry: Geometry,
    extent: &[usize],
    range: i64,
    seed: u64,
    volume: usize,
) -> Result<Boundary> {
    Ok(match policy {
        TauPolicy::Free => Boundary::Free,
        TauPolicy::Periodic => Boundary::Periodic,
        TauPolicy::AllPlus => Boundary::Fixed {
            spins: BoundarySpins::uniform(1),
        },
        TauPolicy::AllMinus => Boundary::Fixed {
            spins: BoundarySpins::uniform(-1),
        },
        TauPolicy::RandomFixed => {
            let probe = Lattice::new(&LatticeSpec::new(geometry, extent, Boundary::Free))?;
            let mut rng = Stream::new(seed, &format!("tau/{volume}"));
            let sites = probe
                .outer_layer(range.max(1))
                .into_iter()
                .map(|s| (s, rng.spin()))
                .collect();
            Boundary::Fixed {
                spins: BoundarySpins { default: None, sites },
            }
        }
    })
}

fn sigma_primes(policy: SigmaPolicy, n: usize, seed: u64, tag: &str) -> Result<Vec<u64>> {
    let exhaustive = |n: usize| -> Result<Vec<u64>> {
        if n > 24 {
            return Err(RgError::CapExceeded {
                what: "exhaustive block-spin enumeration",
                needed: n,
                cap: 24,
            });
        }
        Ok((0..1u64 << n).collect())
    };
    let sample = |count: usize| -> Vec<u64> {
        let mut rng = Stream::new(seed, tag);
        let mask = if n >= 64 { u64::MAX } else { (1u64 << n) - 1 };
        (0..count).map(|_| rng.next_u64() & mask).collect()
    };
    match policy {
        SigmaPolicy::Exhaustive => exhaustive(n),
        SigmaPolicy::Auto { samples } => {
            if n <= 12 {
                exhaustive(n)
            } else {
                Ok(sample(samples))
            }
        }
        SigmaPolicy::Sample { count } => {
            if n > 64 {
                return Err(RgError::invalid("block-spin masks support at most 64 image sites"));
            }
            Ok(sample(count))
        }
    }
}

/// Sample truncated correlations over volumes, boundaries and block spins,
/// and fit `|corr| ≤ c e^{−m dist}`.
pub fn hypothesis_check(spec: &HypothesisSpec, seed: u64, caps: &Caps) -> Result<HypothesisReport> {
    if spec.volumes.is_empty() || spec.boundaries.is_empty() {
        return Err(RgError::invalid("hypothesis check needs volumes and boundary policies"));
    }
    struct Job {
        volume: usize,
        tau: usize,
        solver: std::sync::Arc<CorrelationSolver>,
        lattice: std::sync::Arc<Lattice>,
        pairs: std::sync::Arc<Vec<(usize, usize)>>,
        sp: u64,
    }
    let mut jobs = Vec::new();
    for (v, vol) in spec.volumes.iter().enumerate() {
        for (t, &policy) in spec.boundaries.iter().enumerate() {
            let boundary = boundary_for(policy, vol.geometry, &vol.extent, spec.interaction.range(), seed, v)?;
            let lattice = Lattice::new(&LatticeSpec::new(vol.geometry, &vol.extent, boundary))?;
            let fin = spec.interaction.on_lattice(&lattice)?;
            let blocks = KernelBlocks::new(&lattice, &spec.kernel)?;
            let solver = CorrelationSolver::new(&lattice, &fin, &blocks, caps)?;
            let free: Vec<usize> = (0..lattice.len()).filter(|&i| !solver.is_pinned(i)).collect();
            let mut pairs: Vec<(usize, usize)> = Vec::new();
            for a in 0..free.len() {
                for b in a + 1..free.len() {
                    pairs.push((free[a], free[b]));
                }
            }
            if let Some(budget) = spec.pair_budget {
                if pairs.len() > budget {
                    let mut rng = Stream::new(seed, &format!("pairs/{v}/{t}"));
                    let mut pick = rng.choose(pairs.len(), budget);
                    pick.sort_unstable();
                    pairs = pick.into_iter().map(|k| pairs[k]).collect();
                }
            }
            let sps = sigma_primes(spec.sigma_prime, blocks.image().len(), seed, &format!("sigma/{v}/{t}"))?;
            let solver = std::sync::Arc::new(solver);
            let lattice = std::sync::Arc::new(lattice);
            let pairs = std::sync::Arc::new(pairs);
            for sp in sps {
                jobs.push(Job {
                    volume: v,
                    tau: t,
                    solver: solver.clone(),
                    lattice: lattice.clone(),
                    pairs: pairs.clone(),
                    sp,
                });
            }
        }
    }
    let chunks: Vec<Vec<CorrelationSample>> = jobs
        .par_iter()
        .map(|job| {
            let corr = job.solver.pairs(job.sp, &job.pairs)?;
            Ok(job
                .pairs
                .iter()
                .zip(corr)
                .map(|(&(i, j), c)| {
                    let (si, sj) = (job.lattice.site(i), job.lattice.site(j));
                    CorrelationSample {
                        volume: job.volume,
                        tau_id: job.tau,
                        sigma_prime_id: job.sp,
                        i: si,
                        j: sj,
                        dist: job.lattice.dist(si, sj),
                        corr: c,
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let samples: Vec<CorrelationSample> = chunks.into_iter().flatten().collect();
    let pts: Vec<(f64, f64)> = samples.iter().map(|s| (s.dist, s.corr)).collect();
    let (m, c, worst, fitted) = fit_decay(&pts);
    Ok(HypothesisReport {
        samples,
        m_hyp: m,
        c_hyp: c,
        holds: m > 0.0,
        worst_pair: worst,
        fitted_points: fitted,
        all_zero: fitted == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_and_decimated_spins() {
        let lat = Lattice::new(&LatticeSpec::ring(8)).unwrap();
        let caps = Caps::default();
        let mu = ConstrainedMeasure::new(&lat, &Interaction::finite(1), &Kernel::Decimation { b: 2 }, 0b0010).unwrap();
        assert!((mu.expectation(&SpinFunction::constant(1.0), &caps).unwrap() - 1.0).abs() < 1e-15);
        let mut f = SpinFunction::zero();
        f.add(SiteSet::from_1d(&[2]), 1.0);
        assert_eq!(mu.expectation(&f, &caps).unwrap(), -1.0);
        let mut g = SpinFunction::zero();
        g.add(SiteSet::from_1d(&[3]), 1.0);
        assert!(mu.expectation(&g, &caps).unwrap().abs() < 1e-15);
        assert!(mu.truncated_correlation(Site::d1(1), Site::d1(3), &caps).unwrap().abs() < 1e-15);
    }

    #[test]
    fn same_site_correlation() {
        let lat = Lattice::new(&LatticeSpec::chain(4)).unwrap();
        let j = Interaction::nearest_neighbor(Geometry::Square1d, 0.4, 0.3);
        let mu = ConstrainedMeasure::new(&lat, &j, &Kernel::Trivial, 0).unwrap();
        let caps = Caps::default();
        let mut f = SpinFunction::zero();
        f.add(SiteSet::from_1d(&[1]), 1.0);
        let m = mu.expectation(&f, &caps).unwrap();
        let c = mu.truncated_correlation(Site::d1(1), Site::d1(1), &caps).unwrap();
        assert!((c - (1.0 - m * m)).abs() < 1e-14);
    }

    #[test]
    fn free_chain_correlation_is_tanh_power() {
        let lat = Lattice::new(&LatticeSpec::chain(8)).unwrap();
        let j = Interaction::nearest_neighbor(Geometry::Square1d, 0.4, 0.0);
        let mu = ConstrainedMeasure::new(&lat, &j, &Kernel::Trivial, 0).unwrap();
        let c = mu.truncated_correlation(Site::d1(2), Site::d1(5), &Caps::default()).unwrap();
        assert!((c - 0.4f64.tanh().powi(3)).abs() < 1e-14);
        assert!((c - 0.054849).abs() < 1e-6);
    }

    #[test]
    fn fit_sentinel_and_single_distance() {
        let (m, c, w, _) = fit_decay(&[(1.0, 0.0), (2.0, 1e-16)]);
        assert!(m.is_infinite() && c == 0.0 && w.is_none());
        let (m, c, _, _) = fit_decay(&[(2.0, 0.25)]);
        assert!((m - 2f64.ln()).abs() < 1e-15);
        assert!((c - 1.0).abs() < 1e-15);
    }
}
