//! Derivatives `∂J′(Z)/∂J(W)` of the RG map, their band structure and the
//! bounds built on it.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::caps::Caps;
use crate::combinatorics::delta_from_ratio;
use crate::error::{Result, RgError};
use crate::kernel::{Kernel, KernelBlocks};
use crate::lattice::{BlockGeometry, Lattice, SiteSet};
use crate::model::GibbsModel;
use crate::rg::{renormalize, sigma_prime_count};
use crate::spin::Interaction;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JacobianEntry {
    /// Image set.
    pub z: SiteSet,
    /// `z` carried to the kept sites of its blocks on the original volume.
    pub z_lift: SiteSet,
    pub w: SiteSet,
    pub value: f64,
}

/// Requested entries in row-major order (`Z` outer, `W` inner).
#[derive(Clone, Debug, Serialize)]
pub struct JacobianMatrix {
    pub dim: usize,
    pub entries: Vec<JacobianEntry>,
}

impl JacobianMatrix {
    pub fn get(&self, z: &SiteSet, w: &SiteSet) -> Option<f64> {
        self.entries.iter().find(|e| &e.z == z && &e.w == w).map(|e| e.value)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// CSV with columns `Z,W,l_distance,value`; the distance column is empty
    /// when either set is empty or no block geometry is given.
    pub fn to_csv(&self, lattice: &Lattice, geom: Option<&BlockGeometry>) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| RgError::invalid(e.to_string());
        w.write_record(["Z", "W", "l_distance", "value"]).map_err(io)?;
        for e in &self.entries {
            let l = match geom {
                Some(g) if !e.w.is_empty() && !e.z_lift.is_empty() => {
                    format!("{}", g.l_distance(lattice, &e.w, &e.z_lift)?)
                }
                _ => String::new(),
            };
            w.write_record([e.z.encode(self.dim), e.w.encode(self.dim), l, format!("{:e}", e.value)])
                .map_err(io)?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| RgError::invalid(e.to_string()))?).unwrap())
    }
}

const CHUNK: u64 = 512;

/// `2^{−|Λ′|} Σ_{σ′} σ′_Z μ_{σ′}(σ_W)` for every `Z` in `zs` and `W` in `ws`.
/// Partial sums are formed over fixed chunks of `σ′` and added in order, so
/// the result does not depend on the thread count.
pub fn jacobian_matrix(
    lattice: &Lattice,
    interaction: &Interaction,
    kernel: &Kernel,
    zs: &[SiteSet],
    ws: &[SiteSet],
    caps: &Caps,
) -> Result<JacobianMatrix> {
    let fin = interaction.on_lattice(lattice)?;
    let blocks = KernelBlocks::new(lattice, kernel)?;
    let image = blocks.image();
    let ws: Vec<SiteSet> = ws
        .iter()
        .map(|w| {
            lattice
                .canonical_set(w)
                .ok_or_else(|| RgError::invalid(format!("W = {} outside volume", w.encode(lattice.dim()))))
        })
        .collect::<Result<_>>()?;
    let zs: Vec<SiteSet> = zs
        .iter()
        .map(|z| {
            image
                .canonical_set(z)
                .ok_or_else(|| RgError::invalid(format!("Z = {} outside image volume", z.encode(image.dim()))))
        })
        .collect::<Result<_>>()?;
    let z_masks: Vec<u64> = zs.iter().map(|z| image.mask(z)).collect::<Result<_>>()?;
    let lifts: Vec<SiteSet> = zs.iter().map(|z| blocks.lift(lattice, z)).collect::<Result<_>>()?;
    if zs.is_empty() || ws.is_empty() {
        return Ok(JacobianMatrix {
            dim: lattice.dim(),
            entries: Vec::new(),
        });
    }
    let count = sigma_prime_count(image, caps)? as u64;
    let model = GibbsModel::new(lattice, &fin, &blocks, &[], &ws, caps)?;
    let (nz, nw) = (zs.len(), ws.len());
    let n_chunks = count.div_ceil(CHUNK);
    let partials: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut mws = model.workspace();
            let mut acc = vec![0.0; nz * nw];
            let mut means = vec![0.0; nw];
            for sp in c * CHUNK..((c + 1) * CHUNK).min(count) {
                model.solve(&mut mws, sp, true)?;
                for (k, m) in means.iter_mut().enumerate() {
                    *m = model.probe_mean(&mws, k, sp);
                }
                for (zi, zm) in z_masks.iter().enumerate() {
                    let row = &mut acc[zi * nw..(zi + 1) * nw];
                    if (sp & zm).count_ones() % 2 == 1 {
                        row.iter_mut().zip(&means).for_each(|(a, m)| *a -= m);
                    } else {
                        row.iter_mut().zip(&means).for_each(|(a, m)| *a += m);
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0.0; nz * nw];
    for p in &partials {
        total.iter_mut().zip(p).for_each(|(t, x)| *t += x);
    }
    let scale = 1.0 / count as f64;
    let mut entries = Vec::with_capacity(nz * nw);
    for zi in 0..nz {
        for wi in 0..nw {
            entries.push(JacobianEntry {
                z: zs[zi].clone(),
                z_lift: lifts[zi].clone(),
                w: ws[wi].clone(),
                value: total[zi * nw + wi] * scale,
            });
        }
    }
    Ok(JacobianMatrix {
        dim: lattice.dim(),
        entries,
    })
}

/// A single derivative `∂J′(Z)/∂J(W)`.
pub fn partial_derivative(
    lattice: &Lattice,
    interaction: &Interaction,
    kernel: &Kernel,
    z: &SiteSet,
    w: &SiteSet,
    caps: &Caps,
) -> Result<f64> {
    let m = jacobian_matrix(lattice, interaction, kernel, std::slice::from_ref(z), std::slice::from_ref(w), caps)?;
    Ok(m.entries[0].value)
}

/// Central difference `[J′_{+h}(Z) − J′_{−h}(Z)] / 2h` with `J ± h 1_W`.
pub fn finite_difference_oracle(
    lattice: &Lattice,
    interaction: &Interaction,
    kernel: &Kernel,
    z: &SiteSet,
    w: &SiteSet,
    h: f64,
    caps: &Caps,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(RgError::invalid("step h must be positive"));
    }
    let fin = interaction.on_lattice(lattice)?;
    let w = lattice
        .canonical_set(w)
        .ok_or_else(|| RgError::invalid("W outside volume"))?;
    let shifted = |t: f64| -> Result<f64> {
        let mut j = fin.clone();
        j.add(w.clone(), t);
        renormalize(lattice, &j, kernel, caps)?.coupling(z)
    };
    Ok((shifted(h)? - shifted(-h)?) / (2.0 * h))
}

/// Largest |entry| per unit-width bin of the l-distance, with a fit of
/// `ln max_n ≈ ln C − n^α` over the non-empty bins.
#[derive(Clone, Debug, Serialize)]
pub struct BandProfile {
    /// `bins[n] = max{|entry| : n ≤ l < n+1}`.
    pub bins: Vec<f64>,
    /// Largest number of `W` in bin `n` for a single `Z`.
    pub row_counts: Vec<usize>,
    pub alpha: Option<f64>,
    /// RMS residual of the fit in log space.
    pub residual: Option<f64>,
    /// `max_n bins[n] e^{n^α}`.
    pub constant: Option<f64>,
    pub nonzero_bins: usize,
    /// Fewer than three non-zero bins.
    pub unreliable: bool,
    /// The fit sits on the lower end of the search interval.
    pub degenerate: bool,
    /// Entries skipped because `W` or `Z` is empty.
    pub skipped: usize,
}

const ALPHA_RANGE: (f64, f64) = (1e-3, 8.0);

fn fit_residual(pts: &[(f64, f64)], alpha: f64) -> (f64, f64) {
    let n = pts.len() as f64;
    let ln_c = pts.iter().map(|(x, y)| y + x.powf(alpha)).sum::<f64>() / n;
    let ss = pts.iter().map(|(x, y)| (y + x.powf(alpha) - ln_c).powi(2)).sum::<f64>();
    (ss, ln_c)
}

/// Least-squares `α` for `y ≈ ln C − x^α` with `ln C` profiled out.
pub fn fit_alpha(pts: &[(f64, f64)]) -> (f64, f64) {
    let (lo, hi) = (ALPHA_RANGE.0.ln(), ALPHA_RANGE.1.ln());
    let grid = 400;
    let mut best = (f64::INFINITY, lo);
    for k in 0..=grid {
        let t = lo + (hi - lo) * k as f64 / grid as f64;
        let (ss, _) = fit_residual(pts, t.exp());
        if ss < best.0 {
            best = (ss, t);
        }
    }
    let step = (hi - lo) / grid as f64;
    let (mut a, mut b) = ((best.1 - step).max(lo), (best.1 + step).min(hi));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if fit_residual(pts, c.exp()).0 <= fit_residual(pts, d.exp()).0 {
            b = d;
        } else {
            a = c;
        }
    }
    let alpha = (0.5 * (a + b)).exp();
    let (ss, _) = fit_residual(pts, alpha);
    (alpha, (ss / pts.len() as f64).sqrt())
}

impl BandProfile {
    pub fn from_bins(bins: Vec<f64>, row_counts: Vec<usize>, skipped: usize) -> BandProfile {
        let pts: Vec<(f64, f64)> = bins
            .iter()
            .enumerate()
            .filter(|(_, m)| **m > 0.0)
            .map(|(n, m)| (n as f64, m.ln()))
            .collect();
        let nonzero = pts.len();
        let (alpha, residual, constant) = if nonzero >= 2 && pts.iter().any(|p| p.0 > 0.0) {
            let (alpha, res) = fit_alpha(&pts);
            let c = bins
                .iter()
                .enumerate()
                .map(|(n, m)| m * (n as f64).powf(alpha).exp())
                .fold(0.0, f64::max);
            (Some(alpha), Some(res), Some(c))
        } else {
            (None, None, None)
        };
        BandProfile {
            degenerate: alpha.is_some_and(|a| a <= ALPHA_RANGE.0 * 1.01),
            bins,
            row_counts,
            alpha,
            residual,
            constant,
            nonzero_bins: nonzero,
            unreliable: nonzero < 3,
            skipped,
        }
    }

    /// Inversions `bins[n+1] > bins[n]` for `n ≥ from`, with the largest
    /// relative excess `bins[n+1]/bins[n] − 1`.
    pub fn inversions_from(&self, from: usize) -> (usize, f64) {
        let mut count = 0;
        let mut worst = 0.0f64;
        for n in from..self.bins.len().saturating_sub(1) {
            let (a, b) = (self.bins[n], self.bins[n + 1]);
            if b > a {
                count += 1;
                worst = worst.max(if a > 0.0 { b / a - 1.0 } else { f64::INFINITY });
            }
        }
        (count, worst)
    }
}

/// Bin the matrix by `l(W, Z)` on the L-block lattice.
pub fn band_profile(matrix: &JacobianMatrix, lattice: &Lattice, geom: &BlockGeometry) -> Result<BandProfile> {
    if matrix.is_empty() {
        return Err(RgError::invalid("band profile of an empty matrix"));
    }
    let mut bins: Vec<f64> = Vec::new();
    let mut per_row: BTreeMap<&SiteSet, Vec<usize>> = BTreeMap::new();
    let mut skipped = 0;
    for e in &matrix.entries {
        if e.w.is_empty() || e.z_lift.is_empty() {
            skipped += 1;
            continue;
        }
        let l = geom.l_distance(lattice, &e.w, &e.z_lift)?;
        let n = (l + 1e-9).floor() as usize;
        if bins.len() <= n {
            bins.resize(n + 1, 0.0);
        }
        bins[n] = bins[n].max(e.value.abs());
        let row = per_row.entry(&e.z).or_default();
        if row.len() <= n {
            row.resize(n + 1, 0);
        }
        row[n] += 1;
    }
    let mut row_counts = vec![0; bins.len()];
    for row in per_row.values() {
        for (n, c) in row.iter().enumerate() {
            row_counts[n] = row_counts[n].max(*c);
        }
    }
    Ok(BandProfile::from_bins(bins, row_counts, skipped))
}

/// All translates of the given shapes inside the volume, without repeats.
pub fn translate_family(lattice: &Lattice, shapes: &[SiteSet]) -> Vec<SiteSet> {
    let mut out = BTreeSet::new();
    for shape in shapes {
        if shape.is_empty() {
            continue;
        }
        let base = shape.normalized();
        for s in lattice.sites() {
            if let Some(w) = lattice.canonical_set(&base.translate(s.0)) {
                if w.len() == base.len() {
                    out.insert(w);
                }
            }
        }
    }
    out.into_iter().collect()
}

/// `n(E) = #{W : l(W, Z) ≤ E}` over the translates of `shapes`; `z` is a set
/// on the original volume.
pub fn neighborhood_count(
    lattice: &Lattice,
    geom: &BlockGeometry,
    z: &SiteSet,
    e: f64,
    shapes: &[SiteSet],
) -> Result<usize> {
    let mut n = 0;
    for w in translate_family(lattice, shapes) {
        if geom.l_distance(lattice, &w, z)? <= e + 1e-9 {
            n += 1;
        }
    }
    Ok(n)
}

/// `Σ_W ∂J′(Z)/∂J(W) · K(W)` over the `W` in the support of `k` with
/// `l(W, Z) ≤ cutoff`.
#[allow(clippy::too_many_arguments)]
pub fn linearize_apply(
    lattice: &Lattice,
    critical: &Interaction,
    kernel: &Kernel,
    geom: &BlockGeometry,
    k: &Interaction,
    z: &SiteSet,
    cutoff: f64,
    caps: &Caps,
) -> Result<f64> {
    if !cutoff.is_finite() {
        return Err(RgError::invalid("cutoff must be finite"));
    }
    let kf = k.on_lattice(lattice)?;
    let blocks = KernelBlocks::new(lattice, kernel)?;
    let z_lift = blocks.lift(lattice, z)?;
    let mut ws = Vec::new();
    let mut coeff = Vec::new();
    for (w, &c) in kf.iter() {
        if c == 0.0 {
            continue;
        }
        let keep = if w.is_empty() || z_lift.is_empty() {
            // ∂J′(Z)/∂J(∅) vanishes unless Z is empty as well
            w.is_empty() && z_lift.is_empty()
        } else {
            geom.l_distance(lattice, w, &z_lift)? <= cutoff + 1e-9
        };
        if keep {
            ws.push(w.clone());
            coeff.push(c);
        }
    }
    if ws.is_empty() {
        return Ok(0.0);
    }
    let m = jacobian_matrix(lattice, critical, kernel, std::slice::from_ref(z), &ws, caps)?;
    Ok(m.entries.iter().zip(&coeff).map(|(e, c)| e.value * c).sum())
}

/// `Σ_{n≥0} e^{−n^α}(n+1)^d`, summed until the term drops below `1e−16`
/// of the partial sum, plus a rigorous bound on the remainder.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SeriesValue {
    pub partial: f64,
    pub tail: f64,
    pub terms: usize,
}

impl SeriesValue {
    pub fn total(&self) -> f64 {
        self.partial + self.tail
    }
}

const MAX_SERIES_TERMS: usize = 50_000_000;

pub fn decay_series(alpha: f64, d: usize) -> Result<SeriesValue> {
    if !(alpha > 0.0) {
        return Err(RgError::invalid(format!("decay exponent {alpha} must be positive")));
    }
    let df = d as f64;
    let term = |n: f64| (-(n.powf(alpha)) + df * (n + 1.0).ln()).exp();
    let mut partial = 0.0;
    let mut n = 0usize;
    loop {
        let x = n as f64;
        let t = term(x);
        partial += t;
        // past the peak of the summand and small against the sum
        let decreasing = x >= 1.0 && alpha * x.powf(alpha - 1.0) * (x + 1.0) > df;
        if decreasing && t < 1e-16 * partial {
            break;
        }
        n += 1;
        if n > MAX_SERIES_TERMS {
            return Err(RgError::numerical(format!(
                "decay series for alpha = {alpha} did not settle within {MAX_SERIES_TERMS} terms"
            )));
        }
    }
    // Σ_{k>n} t_k ≤ ∫_n^∞ e^{−x^α}(x+1)^d dx ≤ 2^d/α · Γ((d+1)/α, n^α)
    let s = (df + 1.0) / alpha;
    let xn = (n as f64).powf(alpha);
    let q = statrs::function::gamma::gamma_ur(s, xn);
    let tail = if q > 0.0 {
        (df * 2f64.ln() - alpha.ln() + statrs::function::gamma::ln_gamma(s) + q.ln()).exp()
    } else {
        0.0
    };
    Ok(SeriesValue {
        partial,
        tail,
        terms: n + 1,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LinearizationBound {
    pub value: f64,
    /// Majorant constant `C` with `bins[n] ≤ C e^{−n^α}`.
    pub constant: f64,
    /// Growth constant `g` with `row_counts[n] ≤ g (n+1)^d`.
    pub growth: f64,
    pub series: SeriesValue,
}

/// `‖K‖_∞ · C · g · Σ_n e^{−n^α}(n+1)^d`, which dominates
/// `‖K‖_∞ Σ_n row_counts[n] · bins[n]`.
pub fn linearization_bound(profile: &BandProfile, k_sup: f64, d: usize) -> Result<LinearizationBound> {
    let alpha = profile
        .alpha
        .ok_or_else(|| RgError::invalid("band profile has no fitted exponent; bound undefined"))?;
    let series = decay_series(alpha, d)?;
    let constant = profile.constant.unwrap_or(0.0);
    let growth = profile
        .row_counts
        .iter()
        .enumerate()
        .map(|(n, &c)| c as f64 / ((n + 1) as f64).powi(d as i32))
        .fold(0.0, f64::max);
    Ok(LinearizationBound {
        value: k_sup.abs() * constant * growth * series.total(),
        constant,
        growth,
        series,
    })
}

/// `S`, `Q`, `K_cut`, `M`, `p` and the majorant ratio `x` of the band bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandBoundParams {
    pub s: f64,
    pub q: f64,
    pub k_cut: f64,
    pub m: f64,
    pub p: u32,
    pub x: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BandBoundRhs {
    /// Large-support branch `M^p(1+ln M)^p δ(S)/ln M`.
    pub case1: f64,
    /// Small-support branch with the `Q` and `K_cut` tails.
    pub case2: f64,
    pub total: f64,
}

/// `M^p(1+ln M)^p (δ(S)/ln M + (δ(Q)+δ(K_cut)) p(1+S) M^{p(1+S)})`.
pub fn band_bound_rhs(params: &BandBoundParams) -> Result<BandBoundRhs> {
    let BandBoundParams { s, q, k_cut, m, p, x } = *params;
    if !(m > 1.0) {
        return Err(RgError::invalid("M must exceed 1"));
    }
    if !(s > 0.0 && q > 0.0 && k_cut > 0.0) {
        return Err(RgError::invalid("S, Q and K_cut must be positive"));
    }
    let pf = p as f64;
    let lm = m.ln();
    let pre = m.powf(pf) * (1.0 + lm).powf(pf);
    let case1 = pre * delta_from_ratio(p, x, s)? / lm;
    let case2 = pre
        * (delta_from_ratio(p, x, q)? + delta_from_ratio(p, x, k_cut)?)
        * pf
        * (1.0 + s)
        * m.powf(pf * (1.0 + s));
    Ok(BandBoundRhs {
        case1,
        case2,
        total: case1 + case2,
    })
}

/// Parameters at distance `l`: `S = (l/(2(3+a)))^α / p` and
/// `Q = K_cut = (l/(2(3+a)))^β`.
pub fn pen_schedule(l: f64, alpha: f64, beta: f64, a: f64, m: f64, p: u32, x: f64) -> BandBoundParams {
    let r = l / (2.0 * (3.0 + a));
    let q = r.powf(beta);
    BandBoundParams {
        s: r.powf(alpha) / p as f64,
        q,
        k_cut: q,
        m,
        p,
        x,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{BlockScheme, Geometry, LatticeSpec, Site};

    #[test]
    fn band_bound_hand_value() {
        let r = band_bound_rhs(&BandBoundParams {
            s: 4.0,
            q: 4.0,
            k_cut: 4.0,
            m: 2.0,
            p: 2,
            x: 0.25,
        })
        .unwrap();
        let l2 = 2f64.ln();
        let want = 4.0 * (1.0 + l2).powi(2) * (1.0 / (12.0 * l2) + (2.0 / 12.0) * 2.0 * 5.0 * 1024.0);
        assert!((r.total - want).abs() <= 1e-12 * want);
        let zero = band_bound_rhs(&BandBoundParams { x: 0.0, ..pen_schedule(20.0, 0.25, 0.5, 3.0, 2.0, 2, 0.25) }).unwrap();
        assert_eq!(zero.total, 0.0);
    }

    #[test]
    fn band_bound_monotonicity() {
        let base = BandBoundParams {
            s: 4.0,
            q: 4.0,
            k_cut: 4.0,
            m: 2.0,
            p: 2,
            x: 0.25,
        };
        let r = |bp: BandBoundParams| band_bound_rhs(&bp).unwrap();
        assert!(r(BandBoundParams { q: 8.0, ..base }).total < r(base).total);
        assert!(r(BandBoundParams { k_cut: 8.0, ..base }).total < r(base).total);
        // the second branch carries M^{p(1+S)}, so only the first falls with S
        assert!(r(BandBoundParams { s: 8.0, ..base }).case1 < r(base).case1);
        assert!(r(BandBoundParams { s: 8.0, ..base }).case2 > r(base).case2);
    }

    #[test]
    fn series_against_closed_form() {
        let q = (-1f64).exp();
        let want = (1.0 + q) / (1.0 - q).powi(3);
        let s = decay_series(1.0, 2).unwrap();
        assert!((s.partial - want).abs() < 1e-14 * want);
        assert!(s.tail < 1e-14 * want);
        assert!(decay_series(0.0, 2).is_err());
        assert!(decay_series(0.5, 2).unwrap().total().is_finite());
    }

    #[test]
    fn alpha_fit_on_synthetic_bins() {
        let bins: Vec<f64> = (0..8).map(|n| (-(n as f64)).exp()).collect();
        let p = BandProfile::from_bins(bins, vec![1; 8], 0);
        assert!((p.alpha.unwrap() - 1.0).abs() < 1e-6);
        assert!(!p.unreliable && !p.degenerate);
        let p = BandProfile::from_bins(vec![1.0, 0.0, 0.0], vec![1; 3], 0);
        assert!(p.alpha.is_none() && p.unreliable);
    }

    #[test]
    fn translate_family_counts() {
        let lat = Lattice::new(&LatticeSpec::torus(4, 4)).unwrap();
        let fam = translate_family(&lat, &[SiteSet::from_2d(&[[0, 0], [1, 0]]), SiteSet::from_2d(&[[0, 0], [0, 1]])]);
        assert_eq!(fam.len(), 32);
        let geom = BlockGeometry::new(&lat, &BlockScheme::new(1, 1, 1)).unwrap();
        let z = SiteSet::singleton(Site::new(0, 0));
        let shapes = [SiteSet::from_2d(&[[0, 0], [1, 0]])];
        assert_eq!(neighborhood_count(&lat, &geom, &z, 0.0, &shapes).unwrap(), 2);
        assert_eq!(neighborhood_count(&lat, &geom, &z, 10.0, &shapes).unwrap(), 16);
    }

    #[test]
    fn small_ring_oracle() {
        let lat = Lattice::new(&LatticeSpec::ring(8)).unwrap();
        let j = Interaction::nearest_neighbor(Geometry::Square1d, 0.4, 0.1);
        let k = Kernel::Kadanoff { b: 2, kappa: 0.8 };
        let caps = Caps::default();
        let z = SiteSet::from_1d(&[0, 1]);
        for w in [SiteSet::from_1d(&[1, 2]), SiteSet::from_1d(&[5]), SiteSet::from_1d(&[0, 1, 2])] {
            let a = partial_derivative(&lat, &j, &k, &z, &w, &caps).unwrap();
            let b = finite_difference_oracle(&lat, &j, &k, &z, &w, 1e-5, &caps).unwrap();
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }
}
