//! The exact finite-volume RG map `J ↦ J′`.

use rayon::prelude::*;
use serde::Serialize;

use crate::caps::Caps;
use crate::error::{check_cap, Result, RgError};
use crate::kernel::{Kernel, KernelBlocks};
use crate::lattice::{Lattice, LatticeInfo, SiteSet};
use crate::model::GibbsModel;
use crate::spin::{characters_of_table, Interaction};

/// `log Σ_σ T(σ,σ′) e^{−H(σ)}` for every block-spin configuration, indexed
/// by image mask (bit set = spin −1).
#[derive(Clone, Debug)]
pub struct LogPartition {
    pub image: Lattice,
    pub values: Vec<f64>,
}

/// Output of one RG step.
#[derive(Clone, Debug)]
pub struct RenormalizedResult {
    pub image: Lattice,
    pub log_z: Vec<f64>,
    /// Dense character coefficients `J′(Z)`, indexed by image mask.
    pub coefficients: Vec<f64>,
}

impl RenormalizedResult {
    pub fn coupling(&self, z: &SiteSet) -> Result<f64> {
        let m = self.image.mask(z)?;
        Ok(self.coefficients[m as usize])
    }

    /// `J′` as a finite interaction on the image, dropping `|J′(Z)| <= tol`.
    /// Returns the interaction and the largest dropped magnitude.
    pub fn interaction(&self, tol: f64) -> (Interaction, f64) {
        let mut j = Interaction::finite(self.image.dim());
        let mut dropped = 0.0f64;
        for (m, &c) in self.coefficients.iter().enumerate() {
            if c.abs() > tol || m == 0 {
                j.add(self.image.set_from_mask(m as u64), c);
            } else {
                dropped = dropped.max(c.abs());
            }
        }
        (j, dropped)
    }

    /// `−H′(σ′) = Σ_Z J′(Z) σ′_Z` rebuilt from the coefficients.
    pub fn rebuild(&self) -> Vec<f64> {
        let mut v = self.coefficients.clone();
        crate::spin::walsh_hadamard(&mut v);
        v
    }
}

pub(crate) fn sigma_prime_count(image: &Lattice, caps: &Caps) -> Result<usize> {
    check_cap("image sites", image.len(), caps.max_image_sites.min(40))?;
    Ok(1usize << image.len())
}

/// Evaluate the renormalized Hamiltonian at every `σ′`.
pub fn renormalized_hamiltonian(
    lattice: &Lattice,
    interaction: &Interaction,
    kernel: &Kernel,
    caps: &Caps,
) -> Result<LogPartition> {
    let fin = interaction.on_lattice(lattice)?;
    let blocks = KernelBlocks::new(lattice, kernel)?;
    let count = sigma_prime_count(blocks.image(), caps)?;
    let model = GibbsModel::new(lattice, &fin, &blocks, &[], &[], caps)?;
    let values: Vec<f64> = (0..count as u64)
        .into_par_iter()
        .map_init(|| model.workspace(), |ws, sp| model.solve(ws, sp, false))
        .collect::<Result<_>>()?;
    Ok(LogPartition {
        image: blocks.image().clone(),
        values,
    })
}

/// `J′(Z) = 2^{−|Λ′|} Σ_{σ′} σ′_Z log Z(σ′)` for every `Z ⊆ Λ′`.
pub fn extract_couplings(log_z: &LogPartition) -> Result<Vec<f64>> {
    if log_z.values.len() != 1usize << log_z.image.len() {
        return Err(RgError::invalid("log-partition table does not cover the image volume"));
    }
    Ok(characters_of_table(&log_z.values))
}

pub fn renormalize(
    lattice: &Lattice,
    interaction: &Interaction,
    kernel: &Kernel,
    caps: &Caps,
) -> Result<RenormalizedResult> {
    let lz = renormalized_hamiltonian(lattice, interaction, kernel, caps)?;
    let coefficients = extract_couplings(&lz)?;
    Ok(RenormalizedResult {
        image: lz.image,
        log_z: lz.values,
        coefficients,
    })
}

/// `Σ_{X ∋ site} |J(X)|` of a finite interaction.
pub fn site_norm(interaction: &Interaction, lattice: &Lattice, site_index: usize) -> f64 {
    let s = lattice.site(site_index);
    interaction
        .iter()
        .filter(|(x, _)| x.contains(&s))
        .map(|(_, j)| j.abs())
        .sum()
}

#[derive(Clone, Debug, Serialize)]
pub struct FlowStep {
    pub step: usize,
    pub lattice: LatticeInfo,
    /// Interaction on `lattice` at this step (the input of the next RG step).
    pub interaction: Interaction,
    /// `Σ_{X ∋ 0} |J(X)|` at the first site, constant term excluded.
    pub norm: f64,
    /// Largest coupling dropped when truncating the previous step's output.
    pub truncation_error: f64,
}

/// Iterate the RG map; step 0 is the (instantiated) input.
pub fn rg_flow(
    lattice: &Lattice,
    interaction: &Interaction,
    kernel: &Kernel,
    steps: usize,
    drop_tol: f64,
    caps: &Caps,
) -> Result<Vec<FlowStep>> {
    let mut lat = lattice.clone();
    let mut j = interaction.on_lattice(lattice)?;
    let mut out = vec![FlowStep {
        step: 0,
        lattice: lat.info(),
        norm: if lat.is_empty() { 0.0 } else { site_norm(&j, &lat, 0) },
        interaction: j.clone(),
        truncation_error: 0.0,
    }];
    for k in 1..=steps {
        let r = renormalize(&lat, &j, kernel, caps)?;
        let (jn, dropped) = r.interaction(drop_tol);
        lat = r.image;
        j = jn;
        out.push(FlowStep {
            step: k,
            lattice: lat.info(),
            norm: if lat.is_empty() { 0.0 } else { site_norm(&j, &lat, 0) },
            interaction: j.clone(),
            truncation_error: dropped,
        });
    }
    Ok(out)
}
