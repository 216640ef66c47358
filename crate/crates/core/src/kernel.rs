//! RG probability kernels and the block structure they induce.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RgError};
use crate::lattice::{Boundary, Geometry, Lattice, Site, SiteSet, Wrap};
use crate::spin::SpinConfig;

/// Block-factorized kernel `T(σ, σ′)`.
///
/// On the triangular lattice every kind uses upward three-site triangles and
/// `b` must be 3. `Trivial` has an empty image and `T ≡ 1`; it turns the
/// constrained measure into the plain Gibbs measure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Kernel {
    Decimation { b: usize },
    Kadanoff { b: usize, kappa: f64 },
    Majority { b: usize },
    Trivial,
}

impl Kernel {
    pub fn b(&self) -> Option<usize> {
        match *self {
            Kernel::Decimation { b } | Kernel::Kadanoff { b, .. } | Kernel::Majority { b } => Some(b),
            Kernel::Trivial => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Kernel::Decimation { .. } => "decimation",
            Kernel::Kadanoff { .. } => "kadanoff",
            Kernel::Majority { .. } => "majority",
            Kernel::Trivial => "trivial",
        }
    }

    /// `ln T_j` for one block with spin sum `s` and block spin `sp`.
    pub fn log_block_factor(&self, s: i64, sp: i8) -> f64 {
        match *self {
            Kernel::Kadanoff { kappa, .. } => {
                let x = kappa * s as f64;
                sp as f64 * x - log_2cosh(x)
            }
            Kernel::Majority { .. } => match s.signum() {
                0 => -std::f64::consts::LN_2,
                sign if sign == sp as i64 => 0.0,
                _ => f64::NEG_INFINITY,
            },
            Kernel::Decimation { .. } | Kernel::Trivial => 0.0,
        }
    }
}

pub(crate) fn log_2cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p()
}

/// The RG blocks of a kernel over a concrete volume, and its image volume.
#[derive(Clone, Debug)]
pub struct KernelBlocks {
    kernel: Kernel,
    image: Lattice,
    blocks: Vec<Vec<usize>>,
}

impl KernelBlocks {
    pub fn new(lattice: &Lattice, kernel: &Kernel) -> Result<KernelBlocks> {
        if let Kernel::Kadanoff { kappa, .. } = kernel {
            if !(kappa.is_finite() && *kappa > 0.0) {
                return Err(RgError::invalid("kadanoff kappa must be positive and finite"));
            }
        }
        let Some(b) = kernel.b() else {
            return Ok(KernelBlocks {
                kernel: *kernel,
                image: Lattice::empty(lattice.geometry()),
                blocks: Vec::new(),
            });
        };
        if b == 0 {
            return Err(RgError::invalid("block spacing b must be positive"));
        }
        match lattice.geometry() {
            Geometry::Triangular2d => Self::triangular(lattice, kernel, b),
            _ => Self::square(lattice, kernel, b as i64),
        }
    }

    fn square(lattice: &Lattice, kernel: &Kernel, b: i64) -> Result<KernelBlocks> {
        let dim = lattice.dim();
        let ext = lattice.extent();
        for (k, &e) in ext.iter().enumerate().take(dim) {
            if e % b != 0 {
                return Err(RgError::invalid(format!(
                    "incommensurate volume: b = {b} does not divide extent[{k}] = {e}"
                )));
            }
        }
        let img_ext = [ext[0] / b, if dim == 2 { ext[1] / b } else { 1 }];
        let wrap = lattice.wrap().map(|_| Wrap {
            h11: img_ext[0],
            h21: 0,
            h22: img_ext[1],
        });
        let boundary = if wrap.is_some() {
            Boundary::Periodic
        } else {
            Boundary::Free
        };
        let image = Lattice::from_parts(lattice.geometry(), img_ext, wrap, boundary, lattice.embedding());
        let b1 = if dim == 2 { b } else { 1 };
        let blocks = image
            .sites()
            .iter()
            .map(|j| {
                let mut v = Vec::new();
                for i0 in 0..b {
                    for i1 in 0..b1 {
                        let s = Site([j.0[0] * b + i0, j.0[1] * b + i1]);
                        v.push(lattice.index_of(s).expect("block site in volume"));
                    }
                }
                v
            })
            .collect();
        Ok(KernelBlocks {
            kernel: *kernel,
            image,
            blocks,
        })
    }

    fn triangular(lattice: &Lattice, kernel: &Kernel, b: usize) -> Result<KernelBlocks> {
        if b != 3 {
            return Err(RgError::invalid("triangular blocks have 3 sites; set b = 3"));
        }
        let w = lattice
            .wrap()
            .ok_or_else(|| RgError::invalid("triangular RG blocks need a periodic volume"))?;
        let periods = [[w.h11, 0], [w.h21, w.h22]];
        for p in &periods {
            if (p[0] - p[1]).rem_euclid(3) != 0 {
                return Err(RgError::invalid(
                    "incommensurate volume: the torus periods must respect the 3-site block pattern",
                ));
            }
        }
        // anchor = p·(1,1) + q·(−1,2)
        let to_image = |x: [i64; 2]| [(2 * x[0] + x[1]) / 3, (x[1] - x[0]) / 3];
        let img_wrap = Wrap::from_periods(to_image(periods[0]), to_image(periods[1]))?;
        let image = Lattice::from_parts(
            Geometry::Triangular2d,
            [img_wrap.h11, img_wrap.h22],
            Some(img_wrap),
            Boundary::Periodic,
            lattice.embedding(),
        );
        let blocks = image
            .sites()
            .iter()
            .map(|j| {
                let (p, q) = (j.0[0], j.0[1]);
                let a = Site([p - q, p + 2 * q]);
                [a, a.offset([1, 0]), a.offset([0, 1])]
                    .iter()
                    .map(|s| lattice.index_of(*s).expect("block site in volume"))
                    .collect()
            })
            .collect();
        Ok(KernelBlocks {
            kernel: *kernel,
            image,
            blocks,
        })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn image(&self) -> &Lattice {
        &self.image
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Original site indices of block `j`; the first one is the kept site.
    pub fn block(&self, j: usize) -> &[usize] {
        &self.blocks[j]
    }

    pub fn kept_site(&self, j: usize) -> usize {
        self.blocks[j][0]
    }

    /// Image sites replaced by the kept sites of their blocks.
    pub fn lift(&self, lattice: &Lattice, z: &SiteSet) -> Result<SiteSet> {
        let mut out = Vec::with_capacity(z.len());
        for s in z.iter() {
            let j = self
                .image
                .index_of(*s)
                .ok_or_else(|| RgError::invalid(format!("image site {} outside volume", s.encode(lattice.dim()))))?;
            out.push(lattice.site(self.kept_site(j)));
        }
        Ok(SiteSet::new(out))
    }

    /// `T(σ, σ′)` evaluated directly.
    pub fn eval(&self, sigma: &SpinConfig, sigma_p: &SpinConfig) -> Result<f64> {
        if sigma_p.len() != self.blocks.len() {
            return Err(RgError::invalid("block-spin configuration does not match the image volume"));
        }
        let mut t = 1.0;
        for (j, blk) in self.blocks.iter().enumerate() {
            let sp = sigma_p.get(j);
            t *= match self.kernel {
                Kernel::Decimation { .. } => {
                    if sigma.get(blk[0]) == sp {
                        1.0
                    } else {
                        0.0
                    }
                }
                _ => {
                    let s: i64 = blk.iter().map(|&i| sigma.get(i) as i64).sum();
                    self.kernel.log_block_factor(s, sp).exp()
                }
            };
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeSpec;

    #[test]
    fn decimation_indicator() {
        let lat = Lattice::new(&LatticeSpec::ring(4)).unwrap();
        let kb = KernelBlocks::new(&lat, &Kernel::Decimation { b: 2 }).unwrap();
        let s = SpinConfig::from_spins(&[1, -1, -1, 1]);
        assert_eq!(kb.eval(&s, &SpinConfig::from_spins(&[1, -1])).unwrap(), 1.0);
        assert_eq!(kb.eval(&s, &SpinConfig::from_spins(&[1, 1])).unwrap(), 0.0);
    }

    #[test]
    fn kadanoff_three_site_factor() {
        let lat = Lattice::new(&LatticeSpec::ring(3)).unwrap();
        let kb = KernelBlocks::new(&lat, &Kernel::Kadanoff { b: 3, kappa: 0.5 }).unwrap();
        let t = kb.eval(&SpinConfig::all_plus(3), &SpinConfig::all_plus(1)).unwrap();
        assert!((t - 1.5f64.exp() / (2.0 * 1.5f64.cosh())).abs() < 1e-15);
        assert!((t - 0.95257413).abs() < 1e-8);
    }

    #[test]
    fn majority_rule() {
        let lat = Lattice::new(&LatticeSpec::ring(3)).unwrap();
        let kb = KernelBlocks::new(&lat, &Kernel::Majority { b: 3 }).unwrap();
        let s = SpinConfig::from_spins(&[1, 1, -1]);
        assert_eq!(kb.eval(&s, &SpinConfig::from_spins(&[1])).unwrap(), 1.0);
        assert_eq!(kb.eval(&s, &SpinConfig::from_spins(&[-1])).unwrap(), 0.0);
        let lat = Lattice::new(&LatticeSpec::ring(2)).unwrap();
        let kb = KernelBlocks::new(&lat, &Kernel::Majority { b: 2 }).unwrap();
        let tie = SpinConfig::from_spins(&[1, -1]);
        assert_eq!(kb.eval(&tie, &SpinConfig::from_spins(&[1])).unwrap(), 0.5);
    }

    #[test]
    fn incommensurate_rejected() {
        let lat = Lattice::new(&LatticeSpec::ring(5)).unwrap();
        assert!(KernelBlocks::new(&lat, &Kernel::Decimation { b: 2 }).is_err());
        let tri = Lattice::new(&LatticeSpec::new(Geometry::Triangular2d, &[4, 3], Boundary::Periodic)).unwrap();
        assert!(KernelBlocks::new(&tri, &Kernel::Majority { b: 3 }).is_err());
    }

    #[test]
    fn triangular_blocks_partition_the_torus() {
        let tri = Lattice::new(&LatticeSpec::new(Geometry::Triangular2d, &[6, 6], Boundary::Periodic)).unwrap();
        let kb = KernelBlocks::new(&tri, &Kernel::Majority { b: 3 }).unwrap();
        assert_eq!(kb.image().len(), 12);
        let mut seen = vec![0; tri.len()];
        for j in 0..kb.n_blocks() {
            for &i in kb.block(j) {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        // image of a 6x6 triangular torus is again a triangular torus
        for s in kb.image().sites() {
            assert_eq!(kb.image().neighbors(*s).len(), 6);
        }
    }
}
