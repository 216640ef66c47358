//! Spin configurations, interactions and the character (Walsh) basis.

use std::collections::BTreeMap;

use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{check_cap, Result, RgError};
use crate::lattice::{Boundary, Geometry, Lattice, Site, SiteSet};

/// Packed ±1 assignment over the sites of a volume, in canonical site order.
/// A set bit stands for spin −1.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct SpinConfig {
    n: usize,
    words: Vec<u64>,
}

impl SpinConfig {
    pub fn all_plus(n: usize) -> Self {
        SpinConfig {
            n,
            words: vec![0; n.div_ceil(64)],
        }
    }

    pub fn from_mask(n: usize, mask: u64) -> Self {
        let mut c = SpinConfig::all_plus(n);
        if n > 0 {
            c.words[0] = if n >= 64 { mask } else { mask & ((1u64 << n) - 1) };
        }
        c
    }

    pub fn from_spins(spins: &[i8]) -> Self {
        let mut c = SpinConfig::all_plus(spins.len());
        for (i, &s) in spins.iter().enumerate() {
            c.set(i, s);
        }
        c
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize) -> i8 {
        debug_assert!(i < self.n);
        if self.words[i / 64] >> (i % 64) & 1 == 1 {
            -1
        } else {
            1
        }
    }

    pub fn set(&mut self, i: usize, s: i8) {
        let bit = 1u64 << (i % 64);
        if s < 0 {
            self.words[i / 64] |= bit;
        } else {
            self.words[i / 64] &= !bit;
        }
    }

    pub fn flipped(&self) -> SpinConfig {
        let mut c = self.clone();
        for i in 0..self.n {
            c.set(i, -self.get(i));
        }
        c
    }

    /// `σ_X` for a set given by site indices.
    pub fn character(&self, idx: &[usize]) -> i8 {
        idx.iter().fold(1, |acc, &i| acc * self.get(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = i8> + '_ {
        (0..self.n).map(|i| self.get(i))
    }
}

/// Couplings `J(X)` of `H(σ) = −Σ_X J(X) σ_X`.
///
/// In generator form (`translation_invariant`) the keys are translation
/// representatives with their least site at the origin; otherwise keys are
/// canonical sites of a concrete volume.
#[derive(Clone, Debug, PartialEq)]
pub struct Interaction {
    dim: usize,
    translation_invariant: bool,
    couplings: BTreeMap<SiteSet, f64>,
}

impl Interaction {
    pub fn new(dim: usize, translation_invariant: bool) -> Self {
        Interaction {
            dim,
            translation_invariant,
            couplings: BTreeMap::new(),
        }
    }

    pub fn generator(dim: usize) -> Self {
        Self::new(dim, true)
    }

    pub fn finite(dim: usize) -> Self {
        Self::new(dim, false)
    }

    /// Nearest-neighbour coupling `beta` on every bond, plus a uniform field.
    pub fn nearest_neighbor(geometry: Geometry, beta: f64, field: f64) -> Self {
        let mut j = Interaction::generator(geometry.dim());
        for v in geometry.bond_vectors() {
            j.add(SiteSet::new([Site([0, 0]), Site(*v)]), beta);
        }
        if field != 0.0 {
            j.add(SiteSet::singleton(Site([0, 0])), field);
        }
        j
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_translation_invariant(&self) -> bool {
        self.translation_invariant
    }

    fn key(&self, x: &SiteSet) -> SiteSet {
        if self.translation_invariant {
            x.normalized()
        } else {
            x.clone()
        }
    }

    /// Accumulate `value` onto `J(X)`.
    pub fn add(&mut self, x: SiteSet, value: f64) {
        let k = self.key(&x);
        *self.couplings.entry(k).or_insert(0.0) += value;
    }

    pub fn set(&mut self, x: SiteSet, value: f64) {
        let k = self.key(&x);
        self.couplings.insert(k, value);
    }

    pub fn get(&self, x: &SiteSet) -> f64 {
        self.couplings.get(&self.key(x)).copied().unwrap_or(0.0)
    }

    pub fn remove(&mut self, x: &SiteSet) -> Option<f64> {
        let k = self.key(x);
        self.couplings.remove(&k)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SiteSet, &f64)> {
        self.couplings.iter()
    }

    pub fn len(&self) -> usize {
        self.couplings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.couplings.is_empty()
    }

    /// Largest sup-norm diameter (raw grid coordinates) of a supported set.
    pub fn range(&self) -> i64 {
        self.couplings
            .keys()
            .map(|x| {
                let s = x.sites();
                let mut best = 0;
                for a in s {
                    for b in s {
                        best = best.max((a.0[0] - b.0[0]).abs().max((a.0[1] - b.0[1]).abs()));
                    }
                }
                best
            })
            .max()
            .unwrap_or(0)
    }

    /// `Σ_{X ∋ 0} |J(X)|`, i.e. `Σ_gen |X|·|J(X)|` over generators.
    pub fn norm(&self) -> Result<f64> {
        if !self.translation_invariant {
            return Err(RgError::invalid("norm needs a translation-invariant interaction"));
        }
        Ok(self
            .couplings
            .iter()
            .map(|(x, j)| x.len() as f64 * j.abs())
            .sum())
    }

    /// Whether every supported set has even cardinality (the constant counts
    /// as even).
    pub fn is_even(&self, tol: f64) -> bool {
        self.couplings
            .iter()
            .all(|(x, j)| x.len() % 2 == 0 || j.abs() <= tol)
    }

    pub fn scaled(&self, c: f64) -> Interaction {
        let mut out = self.clone();
        for v in out.couplings.values_mut() {
            *v *= c;
        }
        out
    }

    pub fn plus(&self, other: &Interaction) -> Result<Interaction> {
        if self.dim != other.dim || self.translation_invariant != other.translation_invariant {
            return Err(RgError::invalid("cannot add interactions of different kinds"));
        }
        let mut out = self.clone();
        for (x, j) in other.iter() {
            out.add(x.clone(), *j);
        }
        Ok(out)
    }

    /// Finite-volume couplings from a generator.
    ///
    /// Periodic volumes take every translate, free volumes the translates
    /// inside, and fixed volumes substitute the boundary spins, which turns
    /// straddling terms into lower-order couplings on the interior part.
    pub fn instantiate(&self, lattice: &Lattice) -> Result<Interaction> {
        if !self.translation_invariant {
            return Err(RgError::invalid("instantiate needs a generator interaction"));
        }
        if self.dim != lattice.dim() {
            return Err(RgError::invalid("interaction and lattice dimensions differ"));
        }
        let mut out = Interaction::finite(self.dim);
        for (x, &j) in &self.couplings {
            if x.is_empty() {
                // a constant per site keeps the constant extensive
                out.add(SiteSet::empty(), j * lattice.len() as f64);
                continue;
            }
            match lattice.boundary() {
                Boundary::Periodic => {
                    for s in lattice.sites() {
                        let t = x.translate(s.0);
                        let c = lattice.canonical_set(&t).ok_or_else(|| {
                            RgError::invalid(format!(
                                "coupling {} wraps onto itself; range too large for the volume",
                                x.encode(self.dim)
                            ))
                        })?;
                        out.add(c, j);
                    }
                }
                Boundary::Free => {
                    for t in translates_touching(x, lattice) {
                        let y = x.translate(t);
                        if y.iter().all(|s| lattice.contains(*s)) {
                            out.add(y, j);
                        }
                    }
                }
                Boundary::Fixed { spins } => {
                    for t in translates_touching(x, lattice) {
                        let y = x.translate(t);
                        let mut inside = Vec::new();
                        let mut sign = 1i8;
                        for s in y.iter() {
                            if lattice.contains(*s) {
                                inside.push(*s);
                            } else {
                                let v = spins.spin_at(s).ok_or_else(|| {
                                    RgError::invalid(format!(
                                        "fixed boundary has no spin for site {}",
                                        s.encode(self.dim)
                                    ))
                                })?;
                                sign *= v;
                            }
                        }
                        out.add(SiteSet::new(inside), j * sign as f64);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Finite-volume view: generators are instantiated, finite interactions
    /// are checked against the volume and canonicalized.
    pub fn on_lattice(&self, lattice: &Lattice) -> Result<Interaction> {
        if self.translation_invariant {
            return self.instantiate(lattice);
        }
        if self.dim != lattice.dim() {
            return Err(RgError::invalid("interaction and lattice dimensions differ"));
        }
        let mut out = Interaction::finite(self.dim);
        for (x, &j) in &self.couplings {
            let c = lattice.canonical_set(x).ok_or_else(|| {
                RgError::invalid(format!("coupling set {} lies outside the volume", x.encode(self.dim)))
            })?;
            out.add(c, j);
        }
        Ok(out)
    }

    /// `H(σ)` for a finite interaction whose sets lie in `lattice`.
    pub fn energy(&self, lattice: &Lattice, sigma: &SpinConfig) -> Result<f64> {
        if sigma.len() != lattice.len() {
            return Err(RgError::invalid("configuration size does not match the volume"));
        }
        let fin = if self.translation_invariant {
            self.instantiate(lattice)?
        } else {
            self.clone()
        };
        let mut h = 0.0;
        for (x, &j) in &fin.couplings {
            let mut s = 1i8;
            for site in x.iter() {
                let i = lattice.index_of(*site).ok_or_else(|| {
                    RgError::invalid(format!("site {} outside volume", site.encode(self.dim)))
                })?;
                s *= sigma.get(i);
            }
            h -= j * s as f64;
        }
        Ok(h)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("interaction serializes")
    }

    pub fn from_json(text: &str) -> Result<Interaction> {
        serde_json::from_str(text).map_err(|e| RgError::invalid(format!("bad interaction JSON: {e}")))
    }
}

fn translates_touching(x: &SiteSet, lattice: &Lattice) -> Vec<[i64; 2]> {
    let mut out = std::collections::BTreeSet::new();
    for s in lattice.sites() {
        for a in x.iter() {
            out.insert([s.0[0] - a.0[0], s.0[1] - a.0[1]]);
        }
    }
    out.into_iter().collect()
}

impl Serialize for Interaction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        struct Couplings<'a>(&'a Interaction);
        impl Serialize for Couplings<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                let mut m = s.serialize_map(Some(self.0.couplings.len()))?;
                for (x, j) in &self.0.couplings {
                    m.serialize_entry(&x.encode(self.0.dim), j)?;
                }
                m.end()
            }
        }
        let mut m = s.serialize_map(Some(3))?;
        m.serialize_entry("dim", &self.dim)?;
        m.serialize_entry("translation_invariant", &self.translation_invariant)?;
        m.serialize_entry("couplings", &Couplings(self))?;
        m.end()
    }
}

impl<'de> Deserialize<'de> for Interaction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            dim: usize,
            #[serde(default)]
            translation_invariant: bool,
            couplings: BTreeMap<String, f64>,
        }
        let raw = Raw::deserialize(d)?;
        if raw.dim != 1 && raw.dim != 2 {
            return Err(D::Error::custom("dim must be 1 or 2"));
        }
        let mut j = Interaction::new(raw.dim, raw.translation_invariant);
        for (k, v) in raw.couplings {
            let x = SiteSet::decode(&k).map_err(D::Error::custom)?;
            if raw.dim == 1 && x.iter().any(|s| s.0[1] != 0) {
                return Err(D::Error::custom(format!("1D set {k} has two coordinates")));
            }
            j.add(x, v);
        }
        Ok(j)
    }
}

/// In-place unnormalized Walsh–Hadamard transform: `out[A] = Σ_c v[c] (−1)^{|A∩c|}`.
pub fn walsh_hadamard(v: &mut [f64]) {
    let n = v.len();
    assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for start in (0..n).step_by(2 * h) {
            for i in start..start + h {
                let (a, b) = (v[i], v[i + h]);
                v[i] = a + b;
                v[i + h] = a - b;
            }
        }
        h *= 2;
    }
}

/// Character coefficients of a table of function values indexed by
/// configuration mask (bit set = spin −1).
pub fn characters_of_table(values: &[f64]) -> Vec<f64> {
    let mut c = values.to_vec();
    walsh_hadamard(&mut c);
    let norm = 1.0 / values.len() as f64;
    for x in &mut c {
        *x *= norm;
    }
    c
}

/// `f(σ) = Σ_A f̂(A) σ_A` over a finite support.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpinFunction {
    terms: BTreeMap<SiteSet, f64>,
}

impl SpinFunction {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        let mut f = Self::zero();
        f.add(SiteSet::empty(), c);
        f
    }

    pub fn add(&mut self, a: SiteSet, c: f64) {
        *self.terms.entry(a).or_insert(0.0) += c;
    }

    pub fn add_function(&mut self, other: &SpinFunction, scale: f64) {
        for (a, c) in &other.terms {
            self.add(a.clone(), scale * c);
        }
    }

    pub fn coefficient(&self, a: &SiteSet) -> f64 {
        self.terms.get(a).copied().unwrap_or(0.0)
    }

    pub fn terms(&self) -> &BTreeMap<SiteSet, f64> {
        &self.terms
    }

    pub fn into_terms(self) -> BTreeMap<SiteSet, f64> {
        self.terms
    }

    pub fn support(&self) -> SiteSet {
        SiteSet::new(self.terms.keys().flat_map(|a| a.iter().copied()))
    }

    pub fn eval(&self, spin: impl Fn(&Site) -> i8) -> f64 {
        self.terms
            .iter()
            .map(|(a, c)| c * a.iter().fold(1i8, |acc, s| acc * spin(s)) as f64)
            .sum()
    }

    /// Pointwise product; characters multiply by symmetric difference.
    pub fn mul(&self, other: &SpinFunction) -> SpinFunction {
        let mut out = SpinFunction::zero();
        for (a, x) in &self.terms {
            for (b, y) in &other.terms {
                out.add(a.sym_diff(b), x * y);
            }
        }
        out
    }

    /// Drop coefficients with `|c| <= tol`.
    pub fn pruned(mut self, tol: f64) -> Self {
        self.terms.retain(|_, c| c.abs() > tol);
        self
    }
}

/// Character expansion of `f` over `support`, by enumeration of all
/// `2^{|S|}` configurations. `f` receives a spin lookup for the support.
pub fn character_expand(
    support: &[Site],
    cap: usize,
    f: impl Fn(&dyn Fn(&Site) -> i8) -> f64,
) -> Result<SpinFunction> {
    let sites = SiteSet::new(support.iter().copied());
    let n = sites.len();
    check_cap("character expansion support", n, cap)?;
    let mut values = vec![0.0; 1 << n];
    for (mask, v) in values.iter_mut().enumerate() {
        let lookup = |s: &Site| -> i8 {
            let i = sites.sites().binary_search(s).expect("site in support");
            if mask >> i & 1 == 1 {
                -1
            } else {
                1
            }
        };
        *v = f(&lookup);
    }
    let coeffs = characters_of_table(&values);
    let mut out = SpinFunction::zero();
    for (a, c) in coeffs.into_iter().enumerate() {
        if c != 0.0 {
            let set = SiteSet::new((0..n).filter(|i| a >> i & 1 == 1).map(|i| sites.sites()[i]));
            out.add(set, c);
        }
    }
    Ok(out)
}
