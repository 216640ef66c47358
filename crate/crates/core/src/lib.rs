//! Exact finite-volume renormalization-group machinery for Ising-type spin
//! systems.
//!
//! Every sum over spin configurations is carried out exactly, by variable
//! elimination over the factor graph of the Boltzmann weight and the RG
//! kernel (see [`sumprod`]). Brute-force enumeration is used only in tests.

pub mod caps;
pub mod cli;
pub mod combinatorics;
pub mod error;
pub mod expansion;
pub mod gibbs;
pub mod jacobian;
pub mod kernel;
pub mod lattice;
pub mod model;
pub mod rg;
pub mod rng;
pub mod spin;
pub mod sumprod;

pub use caps::Caps;
pub use error::{Result, RgError};
pub use lattice::{
    BlockGeometry, BlockScheme, BlockSet, BlockSite, Boundary, BoundarySpins, Geometry, Lattice,
    LatticeSpec, Site, SiteSet,
};
pub use spin::{character_expand, Interaction, SpinConfig, SpinFunction};
