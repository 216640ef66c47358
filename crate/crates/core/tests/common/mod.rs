//! Brute-force oracles: plain enumeration over every spin configuration,
//! with the kernel written out from its definition.

#![allow(dead_code)]

use blockrg::kernel::{Kernel, KernelBlocks};
use blockrg::lattice::{BlockGeometry, BlockSet, Lattice, Site, SiteSet};
use blockrg::spin::{Interaction, SpinConfig};
use num_rational::BigRational;
use num_traits::{One, Zero};

pub fn spin(mask: u64, i: usize) -> f64 {
    if mask >> i & 1 == 1 {
        -1.0
    } else {
        1.0
    }
}

/// `T(σ, σ′)` from the kernel definitions.
pub fn kernel_weight(blocks: &KernelBlocks, sigma: u64, sigma_p: u64) -> f64 {
    let mut t = 1.0;
    for j in 0..blocks.n_blocks() {
        let sp = spin(sigma_p, j);
        let blk = blocks.block(j);
        let s: f64 = blk.iter().map(|&i| spin(sigma, i)).sum();
        t *= match *blocks.kernel() {
            Kernel::Decimation { .. } => (spin(sigma, blocks.kept_site(j)) == sp) as i32 as f64,
            Kernel::Kadanoff { kappa, .. } => (kappa * sp * s).exp() / (2.0 * (kappa * s).cosh()),
            Kernel::Majority { .. } => {
                if s == 0.0 {
                    0.5
                } else {
                    (s.signum() == sp) as i32 as f64
                }
            }
            Kernel::Trivial => 1.0,
        };
    }
    t
}

/// `−H(σ)` by summing every coupling.
pub fn minus_h(lat: &Lattice, fin: &Interaction, sigma: u64) -> f64 {
    fin.iter()
        .map(|(x, j)| {
            j * x
                .iter()
                .map(|s| spin(sigma, lat.index_of(*s).unwrap()))
                .product::<f64>()
        })
        .sum()
}

pub fn character(lat: &Lattice, x: &SiteSet, sigma: u64) -> f64 {
    x.iter().map(|s| spin(sigma, lat.index_of(*s).unwrap())).product()
}

pub struct Brute {
    pub lat: Lattice,
    pub fin: Interaction,
    pub blocks: KernelBlocks,
}

impl Brute {
    pub fn new(lat: &Lattice, j: &Interaction, kernel: &Kernel) -> Brute {
        assert!(lat.len() <= 20, "brute force is for tiny volumes");
        Brute {
            lat: lat.clone(),
            fin: j.on_lattice(lat).unwrap(),
            blocks: KernelBlocks::new(lat, kernel).unwrap(),
        }
    }

    pub fn image(&self) -> &Lattice {
        self.blocks.image()
    }

    fn weights(&self) -> Vec<f64> {
        (0..1u64 << self.lat.len()).map(|s| minus_h(&self.lat, &self.fin, s).exp()).collect()
    }

    /// `log Σ_σ T e^{−H}` for every `σ′`.
    pub fn log_z(&self) -> Vec<f64> {
        let w = self.weights();
        (0..1u64 << self.image().len())
            .map(|sp| {
                w.iter()
                    .enumerate()
                    .map(|(s, x)| kernel_weight(&self.blocks, s as u64, sp) * x)
                    .sum::<f64>()
                    .ln()
            })
            .collect()
    }

    /// `J′(Z) = 2^{−n} Σ_{σ′} σ′_Z log Z(σ′)`, one set at a time.
    pub fn coupling(&self, z: &SiteSet) -> f64 {
        let lz = self.log_z();
        let img = self.image();
        lz.iter()
            .enumerate()
            .map(|(sp, v)| character(img, z, sp as u64) * v)
            .sum::<f64>()
            / lz.len() as f64
    }

    /// `μ_{σ′}(f)` for a function given on configurations.
    pub fn expect(&self, sp: u64, f: impl Fn(u64) -> f64) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for s in 0..1u64 << self.lat.len() {
            let w = kernel_weight(&self.blocks, s, sp) * minus_h(&self.lat, &self.fin, s).exp();
            num += w * f(s);
            den += w;
        }
        num / den
    }

    pub fn moment(&self, sp: u64, w: &SiteSet) -> f64 {
        self.expect(sp, |s| character(&self.lat, w, s))
    }

    pub fn truncated(&self, sp: u64, a: Site, b: Site) -> f64 {
        let (ia, ib) = (self.lat.index_of(a).unwrap(), self.lat.index_of(b).unwrap());
        let ab = self.expect(sp, |s| spin(s, ia) * spin(s, ib));
        ab - self.expect(sp, |s| spin(s, ia)) * self.expect(sp, |s| spin(s, ib))
    }

    /// `∂J′(Z)/∂J(W) = 2^{−n} Σ_{σ′} σ′_Z μ_{σ′}(σ_W)`.
    pub fn derivative(&self, z: &SiteSet, w: &SiteSet) -> f64 {
        let img = self.image();
        let n = 1u64 << img.len();
        (0..n).map(|sp| character(img, z, sp) * self.moment(sp, w)).sum::<f64>() / n as f64
    }

    /// Every `∂J′(Z)/∂J(W)` in one sweep over `(σ′, σ)`; rows follow `zs`.
    pub fn jacobian(&self, zs: &[SiteSet], ws: &[SiteSet]) -> Vec<Vec<f64>> {
        let img = self.image();
        let n = 1u64 << img.len();
        let weights = self.weights();
        let mut out = vec![vec![0.0; ws.len()]; zs.len()];
        for sp in 0..n {
            let mut num = vec![0.0; ws.len()];
            let mut den = 0.0;
            for (s, x) in weights.iter().enumerate() {
                let t = kernel_weight(&self.blocks, s as u64, sp) * x;
                if t == 0.0 {
                    continue;
                }
                den += t;
                for (k, w) in ws.iter().enumerate() {
                    num[k] += t * character(&self.lat, w, s as u64);
                }
            }
            for (zi, z) in zs.iter().enumerate() {
                let c = character(img, z, sp);
                for k in 0..ws.len() {
                    out[zi][k] += c * num[k] / den / n as f64;
                }
            }
        }
        out
    }
}

/// Coefficients of `a(z) = rc z (1 + a(z))^p` by fixed-point iteration on
/// truncated power series.
pub fn fixed_point_series(p: u32, rc: u32, n_max: usize) -> Vec<BigRational> {
    let mul = |a: &[BigRational], b: &[BigRational]| {
        let mut out = vec![BigRational::zero(); n_max + 1];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                if i + j <= n_max {
                    out[i + j] += x * y;
                }
            }
        }
        out
    };
    let mut a = vec![BigRational::zero(); n_max + 1];
    for _ in 0..=n_max {
        let mut one_plus = a.clone();
        one_plus[0] += BigRational::one();
        let mut pw = vec![BigRational::zero(); n_max + 1];
        pw[0] = BigRational::one();
        for _ in 0..p {
            pw = mul(&pw, &one_plus);
        }
        let mut next = vec![BigRational::zero(); n_max + 1];
        for k in 0..n_max {
            next[k + 1] = &pw[k] * BigRational::from_integer(rc.into());
        }
        a = next;
    }
    a[1..].to_vec()
}

/// `Σ_Δ Π w_N` over every subset of pairwise non-adjacent polymers.
pub fn brute_hard_core(polys: &[(BlockSet, f64)], geom: &BlockGeometry, avoid: Option<&BlockSet>) -> f64 {
    let n = polys.len();
    let mut total = 0.0;
    'subsets: for m in 0u64..1 << n {
        let idx: Vec<usize> = (0..n).filter(|i| m >> i & 1 == 1).collect();
        for (a, &i) in idx.iter().enumerate() {
            if let Some(y) = avoid {
                if geom.adjacent(&polys[i].0, y) {
                    continue 'subsets;
                }
            }
            for &j in &idx[a + 1..] {
                if geom.adjacent(&polys[i].0, &polys[j].0) {
                    continue 'subsets;
                }
            }
        }
        total += idx.iter().map(|&i| polys[i].1).product::<f64>();
    }
    total
}

pub fn config_mask(c: &SpinConfig) -> u64 {
    (0..c.len()).filter(|&i| c.get(i) == -1).fold(0, |m, i| m | 1 << i)
}
