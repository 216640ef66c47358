//! Finite lattice geometry.
//!
//! Sites carry integer coordinates on a square grid (one- or two-dimensional).
//! The triangular lattice reuses the same grid with three bond directions and
//! a skewed real-space embedding. Periodic volumes are tori described by a
//! period lattice in Hermite normal form, which also covers the twisted tori
//! that appear as images of triangular block transformations.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, RgError};

/// A lattice site. One-dimensional sites keep their second coordinate at 0.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Default)]
pub struct Site(pub [i64; 2]);

impl Site {
    pub fn new(x0: i64, x1: i64) -> Self {
        Site([x0, x1])
    }

    pub fn d1(x: i64) -> Self {
        Site([x, 0])
    }

    pub fn offset(self, t: [i64; 2]) -> Self {
        Site([self.0[0] + t[0], self.0[1] + t[1]])
    }

    pub fn encode(&self, dim: usize) -> String {
        if dim == 1 {
            format!("[{}]", self.0[0])
        } else {
            format!("[{},{}]", self.0[0], self.0[1])
        }
    }

    fn from_coords(c: &[i64]) -> std::result::Result<Self, String> {
        match c {
            [x] => Ok(Site([*x, 0])),
            [x, y] => Ok(Site([*x, *y])),
            _ => Err(format!("site needs 1 or 2 coordinates, got {}", c.len())),
        }
    }
}

impl Serialize for Site {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Site {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<i64>::deserialize(d)?;
        Site::from_coords(&v).map_err(D::Error::custom)
    }
}

/// Duplicate-free, canonically ordered set of sites.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Default)]
pub struct SiteSet(Vec<Site>);

pub type BlockSite = Site;
pub type BlockSet = SiteSet;

impl SiteSet {
    pub fn new(sites: impl IntoIterator<Item = Site>) -> Self {
        let mut v: Vec<Site> = sites.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        SiteSet(v)
    }

    pub fn empty() -> Self {
        SiteSet(Vec::new())
    }

    pub fn singleton(s: Site) -> Self {
        SiteSet(vec![s])
    }

    pub fn from_1d(xs: &[i64]) -> Self {
        SiteSet::new(xs.iter().map(|&x| Site::d1(x)))
    }

    pub fn from_2d(xs: &[[i64; 2]]) -> Self {
        SiteSet::new(xs.iter().map(|&c| Site(c)))
    }

    pub fn sites(&self) -> &[Site] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, s: &Site) -> bool {
        self.0.binary_search(s).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Site> {
        self.0.iter()
    }

    pub fn union(&self, other: &SiteSet) -> SiteSet {
        SiteSet::new(self.0.iter().chain(other.0.iter()).copied())
    }

    /// Symmetric difference, the support of the product of two characters.
    pub fn sym_diff(&self, other: &SiteSet) -> SiteSet {
        let a: BTreeSet<Site> = self.0.iter().copied().collect();
        let b: BTreeSet<Site> = other.0.iter().copied().collect();
        SiteSet(a.symmetric_difference(&b).copied().collect())
    }

    pub fn translate(&self, t: [i64; 2]) -> SiteSet {
        SiteSet::new(self.0.iter().map(|s| s.offset(t)))
    }

    /// Translation representative: the least site moved to the origin.
    pub fn normalized(&self) -> SiteSet {
        match self.0.first() {
            None => SiteSet::empty(),
            Some(first) => self.translate([-first.0[0], -first.0[1]]),
        }
    }

    /// `"[[0,0],[0,1]]"`-style encoding used as JSON object keys.
    pub fn encode(&self, dim: usize) -> String {
        let inner: Vec<String> = self.0.iter().map(|s| s.encode(dim)).collect();
        format!("[{}]", inner.join(","))
    }

    pub fn decode(text: &str) -> Result<SiteSet> {
        let raw: Vec<Vec<i64>> = serde_json::from_str(text)
            .map_err(|e| RgError::invalid(format!("bad site-set encoding {text:?}: {e}")))?;
        let mut sites = Vec::with_capacity(raw.len());
        for c in &raw {
            sites.push(Site::from_coords(c).map_err(RgError::invalid)?);
        }
        let set = SiteSet::new(sites);
        if set.len() != raw.len() {
            return Err(RgError::invalid(format!("duplicate site in {text:?}")));
        }
        Ok(set)
    }
}

impl FromIterator<Site> for SiteSet {
    fn from_iter<I: IntoIterator<Item = Site>>(iter: I) -> Self {
        SiteSet::new(iter)
    }
}

impl Serialize for SiteSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SiteSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<Site>::deserialize(d)?;
        Ok(SiteSet::new(v))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Geometry {
    #[serde(rename = "square_1d")]
    Square1d,
    #[serde(rename = "square_2d")]
    Square2d,
    #[serde(rename = "triangular_2d")]
    Triangular2d,
}

impl Geometry {
    pub fn dim(self) -> usize {
        match self {
            Geometry::Square1d => 1,
            Geometry::Square2d | Geometry::Triangular2d => 2,
        }
    }

    /// Nearest-neighbour bond vectors, one per undirected direction.
    pub fn bond_vectors(self) -> &'static [[i64; 2]] {
        match self {
            Geometry::Square1d => &[[1, 0]],
            Geometry::Square2d => &[[1, 0], [0, 1]],
            Geometry::Triangular2d => &[[1, 0], [0, 1], [1, -1]],
        }
    }

    fn embedding(self) -> [[f64; 2]; 2] {
        match self {
            Geometry::Triangular2d => [[1.0, 0.0], [0.5, 3f64.sqrt() / 2.0]],
            _ => [[1.0, 0.0], [0.0, 1.0]],
        }
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Geometry::Square1d => "square_1d",
            Geometry::Square2d => "square_2d",
            Geometry::Triangular2d => "triangular_2d",
        };
        f.write_str(s)
    }
}

/// Spins outside the volume for a fixed boundary condition.
///
/// Explicit entries take precedence; `default` (when set) covers every other
/// outside site.
#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
pub struct BoundarySpins {
    #[serde(default)]
    pub default: Option<i8>,
    #[serde(default)]
    pub sites: Vec<(Site, i8)>,
}

impl BoundarySpins {
    pub fn uniform(spin: i8) -> Self {
        BoundarySpins {
            default: Some(spin),
            sites: Vec::new(),
        }
    }

    pub fn spin_at(&self, site: &Site) -> Option<i8> {
        self.sites
            .iter()
            .find(|(s, _)| s == site)
            .map(|&(_, v)| v)
            .or(self.default)
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Boundary {
    Free,
    Periodic,
    Fixed { spins: BoundarySpins },
}

impl Boundary {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Boundary::Free => "free",
            Boundary::Periodic => "periodic",
            Boundary::Fixed { .. } => "fixed",
        }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub geometry: Geometry,
    pub extent: Vec<usize>,
    pub boundary: Boundary,
}

impl LatticeSpec {
    pub fn new(geometry: Geometry, extent: &[usize], boundary: Boundary) -> Self {
        LatticeSpec {
            geometry,
            extent: extent.to_vec(),
            boundary,
        }
    }

    pub fn ring(n: usize) -> Self {
        Self::new(Geometry::Square1d, &[n], Boundary::Periodic)
    }

    pub fn chain(n: usize) -> Self {
        Self::new(Geometry::Square1d, &[n], Boundary::Free)
    }

    pub fn torus(nx: usize, ny: usize) -> Self {
        Self::new(Geometry::Square2d, &[nx, ny], Boundary::Periodic)
    }
}

/// Periods `(h11, 0)` and `(h21, h22)` of a torus.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Wrap {
    pub h11: i64,
    pub h21: i64,
    pub h22: i64,
}

impl Wrap {
    fn reduce(&self, c: [i64; 2]) -> [i64; 2] {
        let k = c[1].div_euclid(self.h22);
        let x0 = c[0] - k * self.h21;
        let x1 = c[1] - k * self.h22;
        [x0.rem_euclid(self.h11), x1]
    }

    /// Hermite normal form of the lattice spanned by two integer vectors.
    pub(crate) fn from_periods(u: [i64; 2], v: [i64; 2]) -> Result<Wrap> {
        let det = u[0] * v[1] - u[1] * v[0];
        if det == 0 {
            return Err(RgError::invalid("degenerate period vectors"));
        }
        // gcd of second coordinates with Bezout coefficients
        let (g, s, t) = ext_gcd(u[1], v[1]);
        let h22 = g.abs();
        let sign = if g < 0 { -1 } else { 1 };
        // vector with second coordinate h22
        let w = [sign * (s * u[0] + t * v[0]), h22];
        let h11 = det.abs() / h22;
        let h21 = w[0].rem_euclid(h11);
        Ok(Wrap { h11, h21, h22 })
    }
}

fn ext_gcd(a: i64, b: i64) -> (i64, i64, i64) {
    if b == 0 {
        if a == 0 {
            (0, 0, 0)
        } else {
            (a, 1, 0)
        }
    } else {
        let (g, x, y) = ext_gcd(b, a.rem_euclid(b));
        (g, y, x - a.div_euclid(b) * y)
    }
}

/// Human-readable summary of a built lattice, for reports.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LatticeInfo {
    pub geometry: Geometry,
    pub dim: usize,
    pub sites: usize,
    pub extent: [i64; 2],
    pub boundary: String,
    pub wrap: Option<Wrap>,
}

/// A finite volume with canonical site order and distance functions.
#[derive(Clone, Debug)]
pub struct Lattice {
    geometry: Geometry,
    dim: usize,
    extent: [i64; 2],
    wrap: Option<Wrap>,
    boundary: Boundary,
    embedding: [[f64; 2]; 2],
    sites: Vec<Site>,
    index: HashMap<Site, usize>,
}

impl Lattice {
    pub fn new(spec: &LatticeSpec) -> Result<Lattice> {
        let dim = spec.geometry.dim();
        if spec.extent.len() != dim {
            return Err(RgError::invalid(format!(
                "{} needs {} extents, got {}",
                spec.geometry,
                dim,
                spec.extent.len()
            )));
        }
        if spec.extent.contains(&0) {
            return Err(RgError::invalid("lattice extent must be at least 1"));
        }
        let extent = [spec.extent[0] as i64, if dim == 2 { spec.extent[1] as i64 } else { 1 }];
        let wrap = match spec.boundary {
            Boundary::Periodic => Some(Wrap {
                h11: extent[0],
                h21: 0,
                h22: extent[1],
            }),
            _ => None,
        };
        let lat = Lattice::from_parts(
            spec.geometry,
            extent,
            wrap,
            spec.boundary.clone(),
            spec.geometry.embedding(),
        );
        if let Boundary::Fixed { spins } = &spec.boundary {
            for s in lat.outer_layer(1) {
                if spins.spin_at(&s).is_none() {
                    return Err(RgError::invalid(format!(
                        "fixed boundary has no spin for site {}",
                        s.encode(dim)
                    )));
                }
            }
            for (s, v) in &spins.sites {
                if *v != 1 && *v != -1 {
                    return Err(RgError::invalid(format!(
                        "boundary spin at {} must be +1 or -1",
                        s.encode(dim)
                    )));
                }
            }
        }
        Ok(lat)
    }

    pub(crate) fn from_parts(
        geometry: Geometry,
        extent: [i64; 2],
        wrap: Option<Wrap>,
        boundary: Boundary,
        embedding: [[f64; 2]; 2],
    ) -> Lattice {
        let mut sites = Vec::with_capacity((extent[0] * extent[1]) as usize);
        for x0 in 0..extent[0] {
            for x1 in 0..extent[1] {
                sites.push(Site([x0, x1]));
            }
        }
        let index = sites.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        Lattice {
            geometry,
            dim: geometry.dim(),
            extent,
            wrap,
            boundary,
            embedding,
            sites,
            index,
        }
    }

    /// The zero-site volume (image of the trivial kernel).
    pub(crate) fn empty(geometry: Geometry) -> Lattice {
        Lattice {
            geometry,
            dim: geometry.dim(),
            extent: [0, 0],
            wrap: None,
            boundary: Boundary::Free,
            embedding: geometry.embedding(),
            sites: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extent(&self) -> [i64; 2] {
        self.extent
    }

    pub fn wrap(&self) -> Option<Wrap> {
        self.wrap
    }

    pub fn boundary(&self) -> &Boundary {
        &self.boundary
    }

    pub fn is_periodic(&self) -> bool {
        self.wrap.is_some()
    }

    pub fn embedding(&self) -> [[f64; 2]; 2] {
        self.embedding
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn site(&self, i: usize) -> Site {
        self.sites[i]
    }

    pub fn info(&self) -> LatticeInfo {
        LatticeInfo {
            geometry: self.geometry,
            dim: self.dim,
            sites: self.len(),
            extent: self.extent,
            boundary: self.boundary.kind_name().to_string(),
            wrap: self.wrap,
        }
    }

    /// Canonical representative of `s` inside the volume, if there is one.
    pub fn canonical(&self, s: Site) -> Option<Site> {
        let c = match self.wrap {
            Some(w) => w.reduce(s.0),
            None => s.0,
        };
        let site = Site(c);
        if self.index.contains_key(&site) {
            Some(site)
        } else {
            None
        }
    }

    pub fn index_of(&self, s: Site) -> Option<usize> {
        self.canonical(s).and_then(|c| self.index.get(&c).copied())
    }

    pub fn contains(&self, s: Site) -> bool {
        self.index_of(s).is_some()
    }

    fn images(&self, d: [i64; 2]) -> Vec<[i64; 2]> {
        match self.wrap {
            None => vec![d],
            Some(w) => {
                let r = w.reduce(d);
                let mut out = Vec::with_capacity(16);
                for i in -2..=1 {
                    for j in -2..=1 {
                        out.push([r[0] + i * w.h11 + j * w.h21, r[1] + j * w.h22]);
                    }
                }
                out
            }
        }
    }

    fn euclid(&self, d: [i64; 2]) -> f64 {
        let e = &self.embedding;
        let x = d[0] as f64 * e[0][0] + d[1] as f64 * e[1][0];
        let y = d[0] as f64 * e[0][1] + d[1] as f64 * e[1][1];
        (x * x + y * y).sqrt()
    }

    /// Minimum-image displacement from `a` to `b` in grid coordinates.
    pub fn displacement(&self, a: Site, b: Site) -> [i64; 2] {
        let d = [b.0[0] - a.0[0], b.0[1] - a.0[1]];
        self.images(d)
            .into_iter()
            .min_by(|p, q| {
                self.euclid(*p)
                    .partial_cmp(&self.euclid(*q))
                    .unwrap()
                    .then(p.cmp(q))
            })
            .unwrap()
    }

    /// Euclidean distance, minimized over periodic images.
    pub fn dist(&self, a: Site, b: Site) -> f64 {
        self.euclid(self.displacement(a, b))
    }

    /// Sup-norm distance in grid coordinates, minimized over periodic images.
    pub fn sup_dist(&self, a: Site, b: Site) -> i64 {
        let d = [b.0[0] - a.0[0], b.0[1] - a.0[1]];
        self.images(d)
            .into_iter()
            .map(|p| p[0].abs().max(p[1].abs()))
            .min()
            .unwrap()
    }

    /// Sup-norm diameter of a set (0 for empty and single-site sets).
    pub fn sup_diameter(&self, x: &SiteSet) -> i64 {
        let s = x.sites();
        let mut best = 0;
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                best = best.max(self.sup_dist(s[i], s[j]));
            }
        }
        best
    }

    /// Nearest neighbours of a site that lie in the volume.
    pub fn neighbors(&self, s: Site) -> Vec<Site> {
        let mut out = Vec::new();
        for v in self.geometry.bond_vectors() {
            for sign in [1, -1] {
                let t = s.offset([sign * v[0], sign * v[1]]);
                if let Some(c) = self.canonical(t) {
                    if c != s && !out.contains(&c) {
                        out.push(c);
                    }
                }
            }
        }
        out.sort();
        out
    }

    /// Sites outside a non-periodic volume within `width` bond steps.
    pub fn outer_layer(&self, width: i64) -> Vec<Site> {
        if self.wrap.is_some() {
            return Vec::new();
        }
        let mut out = BTreeSet::new();
        let lo1 = if self.dim == 1 { 0 } else { -width };
        let hi1 = if self.dim == 1 { 0 } else { self.extent[1] - 1 + width };
        for x0 in -width..self.extent[0] + width {
            for x1 in lo1..=hi1 {
                let s = Site([x0, x1]);
                if !self.index.contains_key(&s) {
                    out.insert(s);
                }
            }
        }
        out.into_iter().collect()
    }

    /// Canonicalize every site of `x`; `None` when a site falls outside.
    pub fn canonical_set(&self, x: &SiteSet) -> Option<SiteSet> {
        let mut v = Vec::with_capacity(x.len());
        for s in x.iter() {
            v.push(self.canonical(*s)?);
        }
        let set = SiteSet::new(v);
        if set.len() == x.len() {
            Some(set)
        } else {
            None
        }
    }

    /// Bitmask of a set over site indices (volumes of at most 64 sites).
    pub fn mask(&self, x: &SiteSet) -> Result<u64> {
        if self.len() > 64 {
            return Err(RgError::invalid("bitmask views need at most 64 sites"));
        }
        let mut m = 0u64;
        for s in x.iter() {
            let i = self
                .index_of(*s)
                .ok_or_else(|| RgError::invalid(format!("site {} outside volume", s.encode(self.dim))))?;
            m |= 1 << i;
        }
        Ok(m)
    }

    pub fn set_from_mask(&self, m: u64) -> SiteSet {
        SiteSet::new((0..self.len()).filter(|i| m >> i & 1 == 1).map(|i| self.sites[i]))
    }
}

/// RG block spacing `b`, L-block side `l` and bar-lattice connectivity `a`.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct BlockScheme {
    pub b: usize,
    pub l: usize,
    #[serde(default = "default_a")]
    pub a: u32,
}

fn default_a() -> u32 {
    3
}

impl BlockScheme {
    pub fn new(b: usize, l: usize, a: u32) -> Self {
        BlockScheme { b, l, a }
    }

    /// Maximal number of L-blocks in an allowable set, `3^d`.
    pub fn p(dim: usize) -> usize {
        3usize.pow(dim as u32)
    }

    /// Every violated constraint against the given volume.
    pub fn diagnostics(&self, spec: &LatticeSpec) -> Vec<String> {
        let mut out = Vec::new();
        if self.b == 0 || self.l == 0 {
            out.push("b and l must be positive".to_string());
            return out;
        }
        if self.a == 0 {
            out.push("a must be at least 1".to_string());
        }
        if !self.l.is_multiple_of(self.b) {
            out.push(format!(
                "RG blocks must be commensurate with L-blocks: b = {} does not divide l = {}",
                self.b, self.l
            ));
        }
        if spec.geometry == Geometry::Triangular2d {
            out.push("L-blocks are only defined on square geometries".to_string());
        }
        for (k, &e) in spec.extent.iter().enumerate() {
            if e % self.l != 0 {
                out.push(format!("l = {} does not divide extent[{k}] = {e}", self.l));
            }
        }
        out
    }
}

/// L-block geometry over a square volume: the bar lattice, bar map and
/// connectivity predicates.
#[derive(Clone, Debug)]
pub struct BlockGeometry {
    l: i64,
    a: f64,
    dim: usize,
    bar: Lattice,
}

const DIST_EPS: f64 = 1e-9;

impl BlockGeometry {
    pub fn new(lattice: &Lattice, scheme: &BlockScheme) -> Result<BlockGeometry> {
        if lattice.geometry() == Geometry::Triangular2d {
            return Err(RgError::invalid("L-blocks are only defined on square geometries"));
        }
        if scheme.l == 0 || scheme.b == 0 {
            return Err(RgError::invalid("b and l must be positive"));
        }
        if !scheme.l.is_multiple_of(scheme.b) {
            return Err(RgError::invalid(format!(
                "b = {} does not divide l = {}",
                scheme.b, scheme.l
            )));
        }
        if scheme.a == 0 {
            return Err(RgError::invalid("a must be at least 1"));
        }
        let l = scheme.l as i64;
        let dim = lattice.dim();
        let ext = lattice.extent();
        for k in 0..dim {
            if ext[k] % l != 0 {
                return Err(RgError::invalid(format!(
                    "l = {l} does not divide extent[{k}] = {}",
                    ext[k]
                )));
            }
        }
        let bar_ext = [ext[0] / l, if dim == 2 { ext[1] / l } else { 1 }];
        let wrap = lattice.wrap().map(|_| Wrap {
            h11: bar_ext[0],
            h21: 0,
            h22: bar_ext[1],
        });
        let boundary = if wrap.is_some() {
            Boundary::Periodic
        } else {
            Boundary::Free
        };
        let bar = Lattice::from_parts(lattice.geometry(), bar_ext, wrap, boundary, lattice.embedding());
        Ok(BlockGeometry {
            l,
            a: scheme.a as f64,
            dim,
            bar,
        })
    }

    /// Geometry directly on a bar lattice, for synthetic polymer systems.
    pub fn from_bar(bar: Lattice, a: u32) -> BlockGeometry {
        BlockGeometry {
            l: 1,
            a: a as f64,
            dim: bar.dim(),
            bar,
        }
    }

    pub fn bar(&self) -> &Lattice {
        &self.bar
    }

    pub fn l(&self) -> i64 {
        self.l
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block_of(&self, s: Site) -> BlockSite {
        let mut c = [s.0[0].div_euclid(self.l), 0];
        if self.dim == 2 {
            c[1] = s.0[1].div_euclid(self.l);
        }
        Site(c)
    }

    /// Blocks with non-empty intersection with `x`. Sites must be canonical
    /// members of `lattice`.
    pub fn bar_map(&self, lattice: &Lattice, x: &SiteSet) -> Result<BlockSet> {
        let mut out = Vec::with_capacity(x.len());
        for s in x.iter() {
            let c = lattice.canonical(*s).ok_or_else(|| {
                RgError::invalid(format!("site {} outside volume", s.encode(self.dim)))
            })?;
            out.push(self.block_of(c));
        }
        Ok(SiteSet::new(out))
    }

    /// The `L^d` sites of block `y`.
    pub fn interior(&self, y: BlockSite) -> Vec<Site> {
        let mut out = Vec::new();
        let l1 = if self.dim == 2 { self.l } else { 1 };
        for i in 0..self.l {
            for j in 0..l1 {
                out.push(Site([y.0[0] * self.l + i, y.0[1] * self.l + j]));
            }
        }
        out
    }

    /// `1 + sum_k (y_k mod 2) 2^k`, in `1..=2^d`.
    pub fn block_type(y: BlockSite, dim: usize) -> usize {
        let mut t = 1;
        for k in 0..dim {
            t += (y.0[k].rem_euclid(2) as usize) << k;
        }
        t
    }

    pub fn block_dist(&self, y: BlockSite, z: BlockSite) -> f64 {
        self.bar.dist(y, z)
    }

    /// Distance between two block sets (infimum over pairs).
    pub fn set_dist(&self, n1: &BlockSet, n2: &BlockSet) -> f64 {
        let mut best = f64::INFINITY;
        for y in n1.iter() {
            for z in n2.iter() {
                best = best.min(self.bar.dist(*y, *z));
            }
        }
        best
    }

    /// `c(N1, N2)`: within a-distance.
    pub fn adjacent(&self, n1: &BlockSet, n2: &BlockSet) -> bool {
        self.set_dist(n1, n2) <= self.a + DIST_EPS
    }

    pub fn within_a(&self, d: f64) -> bool {
        d <= self.a + DIST_EPS
    }

    /// `l(W, Z)` between two original-lattice sets.
    pub fn l_distance(&self, lattice: &Lattice, w: &SiteSet, z: &SiteSet) -> Result<f64> {
        if w.is_empty() || z.is_empty() {
            return Err(RgError::invalid("l-distance needs non-empty sets"));
        }
        let wb = self.bar_map(lattice, w)?;
        let zb = self.bar_map(lattice, z)?;
        Ok(self.set_dist(&wb, &zb))
    }

    /// Whether the bar set fits in an axis-aligned box of 3 blocks per side.
    pub fn allowable(&self, n: &BlockSet) -> bool {
        if n.is_empty() {
            return false;
        }
        (0..self.dim).all(|k| {
            let coords: BTreeSet<i64> = n.iter().map(|y| y.0[k]).collect();
            let period = self.bar.wrap().map(|w| if k == 0 { w.h11 } else { w.h22 });
            fits_in_window(&coords, 3, period)
        })
    }

    /// L-connected components of a list of links, each component sorted and
    /// the components in canonical order.
    pub fn l_connected(&self, lattice: &Lattice, links: &[SiteSet]) -> Result<Vec<Vec<SiteSet>>> {
        let bars: Vec<BlockSet> = links
            .iter()
            .map(|x| self.bar_map(lattice, x))
            .collect::<Result<_>>()?;
        let comps = self.components_of_bars(&bars);
        let mut out: Vec<Vec<SiteSet>> = comps
            .into_iter()
            .map(|c| {
                let mut v: Vec<SiteSet> = c.into_iter().map(|i| links[i].clone()).collect();
                v.sort();
                v
            })
            .collect();
        out.sort();
        Ok(out)
    }

    /// Components (as index lists) of the within-a relation on bar sets.
    pub fn components_of_bars(&self, bars: &[BlockSet]) -> Vec<Vec<usize>> {
        let n = bars.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for i in 0..n {
            for j in i + 1..n {
                if self.adjacent(&bars[i], &bars[j]) {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    if ri != rj {
                        parent[ri.max(rj)] = ri.min(rj);
                    }
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(i);
        }
        groups.into_values().collect()
    }
}

fn fits_in_window(coords: &BTreeSet<i64>, width: i64, period: Option<i64>) -> bool {
    let v: Vec<i64> = coords.iter().copied().collect();
    match period {
        None => v.last().unwrap() - v.first().unwrap() < width,
        Some(n) => {
            if n <= width {
                return true;
            }
            v.iter().any(|&start| v.iter().all(|&c| (c - start).rem_euclid(n) < width))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sq2(n: usize, m: usize, b: Boundary) -> Lattice {
        Lattice::new(&LatticeSpec::new(Geometry::Square2d, &[n, m], b)).unwrap()
    }

    #[test]
    fn chain_enumeration() {
        let lat = Lattice::new(&LatticeSpec::chain(4)).unwrap();
        let xs: Vec<i64> = lat.sites().iter().map(|s| s.0[0]).collect();
        assert_eq!(xs, vec![0, 1, 2, 3]);
    }

    #[test]
    fn periodic_diagonal_distance() {
        let lat = sq2(2, 2, Boundary::Periodic);
        let d = lat.dist(Site::new(0, 0), Site::new(1, 1));
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn triangular_torus_has_six_neighbours() {
        let lat = Lattice::new(&LatticeSpec::new(Geometry::Triangular2d, &[3, 3], Boundary::Periodic)).unwrap();
        assert_eq!(lat.len(), 9);
        for s in lat.sites() {
            assert_eq!(lat.neighbors(*s).len(), 6);
            for n in lat.neighbors(*s) {
                assert!((lat.dist(*s, n) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(Lattice::new(&LatticeSpec::chain(0)).is_err());
    }

    #[test]
    fn fixed_boundary_needs_every_outside_neighbour() {
        let spins = BoundarySpins {
            default: None,
            sites: vec![(Site::d1(-1), 1)],
        };
        let spec = LatticeSpec::new(Geometry::Square1d, &[3], Boundary::Fixed { spins });
        assert!(Lattice::new(&spec).is_err());
        let spec = LatticeSpec::new(
            Geometry::Square1d,
            &[3],
            Boundary::Fixed {
                spins: BoundarySpins::uniform(1),
            },
        );
        assert!(Lattice::new(&spec).is_ok());
    }

    #[test]
    fn bar_map_examples() {
        let lat = sq2(4, 4, Boundary::Periodic);
        let g = BlockGeometry::new(&lat, &BlockScheme::new(2, 2, 3)).unwrap();
        assert!(g.bar_map(&lat, &SiteSet::empty()).unwrap().is_empty());
        let x = SiteSet::from_2d(&[[0, 0], [0, 1]]);
        assert_eq!(g.bar_map(&lat, &x).unwrap(), SiteSet::from_2d(&[[0, 0]]));
        let x = SiteSet::from_2d(&[[1, 1], [2, 2]]);
        assert_eq!(g.bar_map(&lat, &x).unwrap(), SiteSet::from_2d(&[[0, 0], [1, 1]]));
        let bad = SiteSet::from_2d(&[[7, 0]]);
        let free = sq2(4, 4, Boundary::Free);
        let gf = BlockGeometry::new(&free, &BlockScheme::new(2, 2, 3)).unwrap();
        assert!(gf.bar_map(&free, &bad).is_err());
    }

    #[test]
    fn block_types() {
        assert_eq!(BlockGeometry::block_type(Site::new(0, 0), 2), 1);
        assert_eq!(BlockGeometry::block_type(Site::new(1, 0), 2), 2);
        assert_eq!(BlockGeometry::block_type(Site::new(0, 1), 2), 3);
        assert_eq!(BlockGeometry::block_type(Site::new(1, 1), 2), 4);
    }

    #[test]
    fn l_distance_examples() {
        let chain = Lattice::new(&LatticeSpec::chain(8)).unwrap();
        let g = BlockGeometry::new(&chain, &BlockScheme::new(2, 2, 3)).unwrap();
        let w = SiteSet::from_1d(&[0]);
        let z = SiteSet::from_1d(&[6]);
        assert_eq!(g.l_distance(&chain, &w, &z).unwrap(), 3.0);
        assert_eq!(g.l_distance(&chain, &w, &SiteSet::from_1d(&[1])).unwrap(), 0.0);
        assert!(g.l_distance(&chain, &w, &SiteSet::empty()).is_err());

        let ring = Lattice::new(&LatticeSpec::ring(16)).unwrap();
        let g = BlockGeometry::new(&ring, &BlockScheme::new(2, 2, 3)).unwrap();
        let d = g.l_distance(&ring, &SiteSet::from_1d(&[0]), &SiteSet::from_1d(&[14])).unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn l_connected_boundary_of_predicate() {
        let chain = Lattice::new(&LatticeSpec::chain(32)).unwrap();
        let g = BlockGeometry::new(&chain, &BlockScheme::new(1, 2, 2)).unwrap();
        // blocks 0 and 2: distance 2 = a
        let l1 = SiteSet::from_1d(&[0]);
        let l2 = SiteSet::from_1d(&[4]);
        let l3 = SiteSet::from_1d(&[6]);
        assert_eq!(g.l_connected(&chain, std::slice::from_ref(&l1)).unwrap().len(), 1);
        assert_eq!(g.l_connected(&chain, &[l1.clone(), l2.clone()]).unwrap().len(), 1);
        assert_eq!(g.l_connected(&chain, &[l1.clone(), l3.clone()]).unwrap().len(), 2);
        // chain 0 - 4 - 8 with dist(0, 8) = 4 > a
        let l4 = SiteSet::from_1d(&[8]);
        assert_eq!(g.l_connected(&chain, &[l1, l2, l4]).unwrap().len(), 1);
    }

    #[test]
    fn allowable_boxes() {
        let lat = sq2(12, 12, Boundary::Free);
        let g = BlockGeometry::new(&lat, &BlockScheme::new(2, 2, 3)).unwrap();
        assert!(g.allowable(&SiteSet::from_2d(&[[0, 0], [2, 2]])));
        assert!(!g.allowable(&SiteSet::from_2d(&[[0, 0], [3, 0]])));
        let per = sq2(12, 12, Boundary::Periodic);
        let g = BlockGeometry::new(&per, &BlockScheme::new(2, 2, 3)).unwrap();
        assert!(g.allowable(&SiteSet::from_2d(&[[0, 0], [5, 1]])));
    }

    #[test]
    fn hnf_of_triangular_image_periods() {
        // periods of the sqrt(3) image of a 6x6 triangular torus
        let w = Wrap::from_periods([4, -2], [2, 2]).unwrap();
        assert_eq!(w.h11 * w.h22, 12);
        assert_eq!(w.reduce([4, -2]), [0, 0]);
        assert_eq!(w.reduce([2, 2]), [0, 0]);
    }

    #[test]
    fn site_set_encoding() {
        let x = SiteSet::from_2d(&[[0, 1], [0, 0]]);
        assert_eq!(x.encode(2), "[[0,0],[0,1]]");
        assert_eq!(SiteSet::decode("[[0,1],[0,0]]").unwrap(), x);
        assert_eq!(SiteSet::decode("[]").unwrap(), SiteSet::empty());
        assert_eq!(SiteSet::from_1d(&[3, 1]).encode(1), "[[1],[3]]");
        assert!(SiteSet::decode("[[0],[0]]").is_err());
    }
}
