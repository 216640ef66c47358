//! Exact counting of rooted L-connected hypergraphs and the series bounds
//! built on them.

use num_bigint::BigInt;
use num_integer::binomial;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{check_cap, Result, RgError};
use crate::lattice::{BlockGeometry, BlockSite, Lattice, SiteSet};

/// `p`, `r`, `c_link` and `M` of the counting bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountingParams {
    pub p: u32,
    pub r: u32,
    pub c_link: u32,
    /// `M` as a decimal or `"num/den"` string.
    #[serde(with = "rational_text")]
    pub m: BigRational,
}

mod rational_text {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &BigRational, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&x.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BigRational, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Float(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(i) => Ok(BigRational::from_integer(i.into())),
            Raw::Float(f) => BigRational::from_float(f).ok_or_else(|| serde::de::Error::custom("M must be finite")),
            Raw::Text(t) => parse_rational(&t).map_err(serde::de::Error::custom),
        }
    }
}

/// Parse `"a/b"`, `"a"` or a decimal like `"1.5"` exactly.
pub fn parse_rational(text: &str) -> std::result::Result<BigRational, String> {
    let t = text.trim();
    if let Some((a, b)) = t.split_once('/') {
        let a: BigInt = a.trim().parse().map_err(|_| format!("bad rational '{t}'"))?;
        let b: BigInt = b.trim().parse().map_err(|_| format!("bad rational '{t}'"))?;
        if b.is_zero() {
            return Err("zero denominator".into());
        }
        return Ok(BigRational::new(a, b));
    }
    if let Some((ip, fp)) = t.split_once('.') {
        let digits = format!("{ip}{fp}");
        let n: BigInt = digits.parse().map_err(|_| format!("bad rational '{t}'"))?;
        return Ok(BigRational::new(n, BigInt::from(10u32).pow(fp.len() as u32)));
    }
    t.parse::<BigInt>()
        .map(BigRational::from_integer)
        .map_err(|_| format!("bad rational '{t}'"))
}

impl CountingParams {
    pub fn new(p: u32, r: u32, c_link: u32, m: BigRational) -> Self {
        CountingParams { p, r, c_link, m }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(RgError::invalid("p must be at least 2"));
        }
        if self.r == 0 || self.c_link == 0 {
            return Err(RgError::invalid("r and c_link must be positive"));
        }
        if self.m <= BigRational::one() {
            return Err(RgError::invalid("M must exceed 1"));
        }
        Ok(())
    }

    fn rc(&self) -> BigRational {
        BigRational::from_integer(BigInt::from(self.r) * BigInt::from(self.c_link))
    }

    fn m_f64(&self) -> f64 {
        self.m.to_f64().unwrap_or(f64::NAN)
    }
}

/// Exact series coefficients `ā_1, …, ā_n`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesCoeffs(pub Vec<BigRational>);

impl SeriesCoeffs {
    /// `ā_n` for `n ≥ 1`.
    pub fn get(&self, n: usize) -> &BigRational {
        &self.0[n - 1]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// CSV rows `n,numerator,denominator,value`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["n", "numerator", "denominator", "value"]).unwrap();
        for (k, c) in self.0.iter().enumerate() {
            w.write_record([
                (k + 1).to_string(),
                c.numer().to_string(),
                c.denom().to_string(),
                format!("{:e}", c.to_f64().unwrap_or(f64::NAN)),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

const MAX_SERIES: usize = 64;

/// `ā_n = rc Σ_k C(p,k) Σ_{n_1+…+n_k+1=n} Π ā_{n_i}`.
pub fn recursion_coeffs(params: &CountingParams, n_max: usize) -> Result<SeriesCoeffs> {
    params.validate()?;
    check_cap("series length", n_max, MAX_SERIES)?;
    let p = params.p as usize;
    let rc = params.rc();
    let mut a: Vec<BigRational> = Vec::with_capacity(n_max);
    // pow[k][m] = Σ over compositions of m into k positive parts of Π ā
    for n in 1..=n_max {
        let m = n - 1;
        // compositions into k parts of m, using the known prefix ā_1..ā_{n-1}
        let mut conv = vec![BigRational::zero(); m + 1];
        conv[0] = BigRational::one();
        let mut total = BigRational::zero();
        for k in 0..=p {
            if k > 0 {
                let mut next = vec![BigRational::zero(); m + 1];
                for (s, c) in conv.iter().enumerate() {
                    if c.is_zero() {
                        continue;
                    }
                    for t in 1..=m - s {
                        next[s + t] += c * &a[t - 1];
                    }
                }
                conv = next;
            }
            if !conv[m].is_zero() {
                total += BigRational::from_integer(binomial(BigInt::from(p), BigInt::from(k))) * &conv[m];
            }
        }
        a.push(&rc * total);
    }
    Ok(SeriesCoeffs(a))
}

/// Coefficients of `w` in `w = rc z (1+w)^p`: `(1/n) C(pn, n−1) (rc)^n`.
pub fn lagrange_coeffs(params: &CountingParams, n_max: usize) -> Result<SeriesCoeffs> {
    params.validate()?;
    check_cap("series length", n_max, MAX_SERIES)?;
    let p = params.p as u64;
    let rc = params.rc();
    let mut out = Vec::with_capacity(n_max);
    let mut rc_n = BigRational::one();
    for n in 1..=n_max as u64 {
        rc_n *= &rc;
        let c = binomial(BigInt::from(p * n), BigInt::from(n - 1));
        out.push(BigRational::new(c, BigInt::from(n)) * &rc_n);
    }
    Ok(SeriesCoeffs(out))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RadiusBound {
    pub radius: BigRational,
    pub bound_n: BigRational,
}

/// Radius `(p−1)^{p−1}/(rc p^p)` and `ā_n ≤ (rc p^p)^n (p−1)^{−(1+(p−1)n)}`.
pub fn radius_and_bound(params: &CountingParams, n: usize) -> Result<RadiusBound> {
    params.validate()?;
    let p = params.p as i32;
    let rc = params.rc();
    let pm1 = BigRational::from_integer(BigInt::from(p - 1));
    let pp = BigRational::from_integer(BigInt::from(p)).pow(p);
    let radius = pm1.pow(p - 1) / (&rc * &pp);
    let bound_n = (&rc * &pp).pow(n as i32) / pm1.pow(1 + (p - 1) * n as i32);
    Ok(RadiusBound { radius, bound_n })
}

/// Rational functions in a formal `λ = ln M`, kept as numerator and
/// denominator polynomials (coefficient `k` multiplies `λ^k`).
#[derive(Clone, Debug)]
pub struct LambdaRational {
    pub num: Vec<BigRational>,
    pub den: Vec<BigRational>,
}

fn poly_mul(a: &[BigRational], b: &[BigRational]) -> Vec<BigRational> {
    let mut out = vec![BigRational::zero(); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_sub(a: &[BigRational], b: &[BigRational]) -> Vec<BigRational> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|k| {
            let x = a.get(k).cloned().unwrap_or_else(BigRational::zero);
            let y = b.get(k).cloned().unwrap_or_else(BigRational::zero);
            x - y
        })
        .collect()
}

impl LambdaRational {
    pub fn lambda() -> Self {
        LambdaRational {
            num: vec![BigRational::zero(), BigRational::one()],
            den: vec![BigRational::one()],
        }
    }

    pub fn constant(c: BigRational) -> Self {
        LambdaRational {
            num: vec![c],
            den: vec![BigRational::one()],
        }
    }

    pub fn mul(&self, o: &Self) -> Self {
        LambdaRational {
            num: poly_mul(&self.num, &o.num),
            den: poly_mul(&self.den, &o.den),
        }
    }

    pub fn div(&self, o: &Self) -> Self {
        LambdaRational {
            num: poly_mul(&self.num, &o.den),
            den: poly_mul(&self.den, &o.num),
        }
    }

    pub fn sub(&self, o: &Self) -> Self {
        LambdaRational {
            num: poly_sub(&poly_mul(&self.num, &o.den), &poly_mul(&o.num, &self.den)),
            den: poly_mul(&self.den, &o.den),
        }
    }

    /// Identity as rational functions, by clearing denominators.
    pub fn identical(&self, o: &Self) -> bool {
        poly_sub(&poly_mul(&self.num, &o.den), &poly_mul(&o.num, &self.den))
            .iter()
            .all(Zero::is_zero)
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        let ev = |p: &[BigRational]| p.iter().rev().fold(0.0, |acc, c| acc * lambda + c.to_f64().unwrap());
        ev(&self.num) / ev(&self.den)
    }
}

fn poly_text(p: &[BigRational]) -> String {
    let terms: Vec<String> = p
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.is_zero())
        .map(|(k, c)| match k {
            0 => format!("{c}"),
            1 => format!("{c}*L"),
            _ => format!("{c}*L^{k}"),
        })
        .collect();
    if terms.is_empty() {
        "0".to_string()
    } else {
        terms.join(" + ")
    }
}

/// `(num)/(den)` with `L` standing for `λ = ln M`.
impl std::fmt::Display for LambdaRational {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({})/({})", poly_text(&self.num), poly_text(&self.den))
    }
}

/// `(Mp)^p`, `(p−1)^p`, `(p−1)^{p−1}` as exact rationals.
fn scale_parts(params: &CountingParams) -> (BigRational, BigRational, BigRational) {
    let p = params.p as i32;
    let pm1 = BigRational::from_integer(BigInt::from(p - 1));
    let mp = (&params.m * BigRational::from_integer(BigInt::from(p))).pow(p);
    (mp, pm1.pow(p), pm1.pow(p - 1))
}

/// `ε = λ (p−1)^p / (rc (Mp)^p (1 + (p−1)λ))` with `λ` symbolic.
pub fn epsilon_threshold_symbolic(params: &CountingParams) -> Result<LambdaRational> {
    params.validate()?;
    let (mp, pm1p, _) = scale_parts(params);
    let pm1 = BigRational::from_integer(BigInt::from(params.p - 1));
    Ok(LambdaRational {
        num: vec![BigRational::zero(), pm1p],
        den: vec![params.rc() * &mp, params.rc() * &mp * pm1],
    })
}

/// `tail(ε) = u/(1 − v)` with `u = rc(Mp)^pε/(p−1)^p`, `v = rc(Mp)^pε/(p−1)^{p−1}`,
/// evaluated on a symbolic `ε`.
pub fn tail_sum_symbolic(params: &CountingParams, eps: &LambdaRational) -> Result<LambdaRational> {
    params.validate()?;
    let (mp, pm1p, pm1pm1) = scale_parts(params);
    let k = params.rc() * mp;
    let u = eps.mul(&LambdaRational::constant(&k / pm1p));
    let v = eps.mul(&LambdaRational::constant(&k / pm1pm1));
    Ok(u.div(&LambdaRational::constant(BigRational::one()).sub(&v)))
}

/// The threshold `ε(L)` at which the rooted sum equals `ln M`.
pub fn epsilon_threshold(params: &CountingParams) -> Result<f64> {
    Ok(epsilon_threshold_symbolic(params)?.eval(params.m_f64().ln()))
}

/// `x = rc (Mp)^p ε / (p−1)^{p−1}`, the ratio of the majorant series.
pub fn series_ratio(params: &CountingParams, eps: f64) -> Result<f64> {
    params.validate()?;
    if !(eps >= 0.0) {
        return Err(RgError::invalid("epsilon must be non-negative"));
    }
    let (mp, _, pm1pm1) = scale_parts(params);
    Ok((params.rc() * mp / pm1pm1).to_f64().unwrap() * eps)
}

/// Closed form of `Σ_n ā_n (M^p ε)^n` under the explicit majorant.
pub fn tail_sum(params: &CountingParams, eps: f64) -> Result<f64> {
    let x = series_ratio(params, eps)?;
    if x >= 1.0 {
        return Err(RgError::Divergent(format!(
            "series ratio {x} is not below 1 (epsilon {eps})"
        )));
    }
    Ok(x / (params.p - 1) as f64 / (1.0 - x))
}

/// `δ(P) = x^{P/p} / ((p−1)(1−x))`.
pub fn delta_tail(params: &CountingParams, eps: f64, big_p: f64) -> Result<f64> {
    let x = series_ratio(params, eps)?;
    delta_from_ratio(params.p, x, big_p)
}

/// `δ(P)` from the ratio `x` directly.
pub fn delta_from_ratio(p: u32, x: f64, big_p: f64) -> Result<f64> {
    if p < 2 {
        return Err(RgError::invalid("p must be at least 2"));
    }
    if !(0.0..1.0).contains(&x) {
        return Err(RgError::Divergent(format!("series ratio {x} is not in [0, 1)")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    Ok(x.powf(big_p / p as f64) / ((p - 1) as f64 * (1.0 - x)))
}

/// `r = sup_y #{z : dist(y, z) ≤ a}` over the bar lattice.
pub fn root_count(geom: &BlockGeometry) -> u32 {
    let bar = geom.bar();
    bar.sites()
        .iter()
        .map(|y| bar.sites().iter().filter(|z| geom.within_a(bar.dist(*y, **z))).count() as u32)
        .max()
        .unwrap_or(0)
}

const MAX_FAMILY: usize = 12;

/// `a_n(y)`: L-connected `n`-subsets of `family` whose bar-set union is
/// within `a` of `y`, for `n = 1..=n_max`.
pub fn rooted_count_exact(
    lattice: &Lattice,
    geom: &BlockGeometry,
    family: &[SiteSet],
    root: BlockSite,
    n_max: usize,
) -> Result<Vec<u64>> {
    check_cap("link family size", family.len(), MAX_FAMILY)?;
    check_cap("hypergraph size", n_max, 4)?;
    if geom.bar().index_of(root).is_none() {
        return Err(RgError::invalid("root block outside the bar lattice"));
    }
    let bars: Vec<_> = family
        .iter()
        .map(|x| geom.bar_map(lattice, x))
        .collect::<Result<_>>()?;
    let rooted: Vec<bool> = bars
        .iter()
        .map(|b| geom.adjacent(b, &SiteSet::singleton(root)))
        .collect();
    let mut counts = vec![0u64; n_max];
    let n = family.len();
    for mask in 1u32..(1u32 << n) {
        let k = mask.count_ones() as usize;
        if k > n_max {
            continue;
        }
        let idx: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        if !idx.iter().any(|&i| rooted[i]) {
            continue;
        }
        let sub: Vec<_> = idx.iter().map(|&i| bars[i].clone()).collect();
        if geom.components_of_bars(&sub).len() == 1 {
            counts[k - 1] += 1;
        }
    }
    Ok(counts)
}

/// Check `a ≤ b` termwise for exact rationals.
pub fn dominated(a: &[BigRational], b: &[BigRational]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y)
}

/// Lossy float view of an exact rational.
pub fn to_f64(x: &BigRational) -> f64 {
    if x.is_negative() {
        -(-x).to_f64().unwrap_or(f64::INFINITY)
    } else {
        x.to_f64().unwrap_or(f64::INFINITY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{BlockScheme, LatticeSpec};

    fn params(p: u32, rc: u32) -> CountingParams {
        CountingParams::new(p, rc, 1, BigRational::from_integer(2.into()))
    }

    fn ints(v: &[i64]) -> Vec<BigRational> {
        v.iter().map(|&x| BigRational::from_integer(x.into())).collect()
    }

    #[test]
    fn catalan_and_ternary() {
        assert_eq!(recursion_coeffs(&params(2, 1), 5).unwrap().0, ints(&[1, 2, 5, 14, 42]));
        assert_eq!(recursion_coeffs(&params(3, 1), 4).unwrap().0, ints(&[1, 3, 12, 55]));
        assert_eq!(lagrange_coeffs(&params(3, 1), 3).unwrap().get(3), &BigRational::from_integer(12.into()));
    }

    #[test]
    fn recursion_matches_inversion() {
        for p in [2, 3, 9] {
            for rc in [1, 3] {
                let a = recursion_coeffs(&params(p, rc), 10).unwrap();
                let b = lagrange_coeffs(&params(p, rc), 10).unwrap();
                assert_eq!(a, b, "p={p} rc={rc}");
                assert_eq!(a.get(1), &BigRational::from_integer(rc.into()));
            }
        }
    }

    #[test]
    fn radius_and_explicit_bound() {
        let r = radius_and_bound(&params(2, 1), 2).unwrap();
        assert_eq!(r.radius, BigRational::new(1.into(), 4.into()));
        assert_eq!(r.bound_n, BigRational::from_integer(16.into()));
        assert_eq!(radius_and_bound(&params(3, 1), 1).unwrap().radius, BigRational::new(4.into(), 27.into()));
        let a = recursion_coeffs(&params(3, 2), 12).unwrap();
        for n in 1..=12 {
            assert!(radius_and_bound(&params(3, 2), n).unwrap().bound_n >= *a.get(n));
        }
        assert!(CountingParams::new(1, 1, 1, BigRational::from_integer(2.into())).validate().is_err());
    }

    #[test]
    fn threshold_closes_the_tail_sum() {
        let p = params(2, 1);
        let eps = epsilon_threshold(&p).unwrap();
        let l2 = 2f64.ln();
        assert!((eps - l2 / (16.0 * (1.0 + l2))).abs() < 1e-15);
        assert!((tail_sum(&p, eps).unwrap() - l2).abs() < 1e-12);
        assert_eq!(tail_sum(&p, 0.0).unwrap(), 0.0);
        for q in [params(2, 1), params(3, 2), params(9, 5)] {
            let t = epsilon_threshold_symbolic(&q).unwrap();
            assert!(tail_sum_symbolic(&q, &t).unwrap().identical(&LambdaRational::lambda()));
        }
    }

    #[test]
    fn delta_examples() {
        let p = params(2, 1);
        assert!((series_ratio(&p, 1.0 / 64.0).unwrap() - 0.25).abs() < 1e-15);
        assert!((delta_tail(&p, 1.0 / 64.0, 4.0).unwrap() - 1.0 / 12.0).abs() < 1e-15);
        assert_eq!(delta_tail(&p, 0.0, 4.0).unwrap(), 0.0);
        let r = delta_tail(&p, 1.0 / 64.0, 3.0).unwrap() / delta_tail(&p, 1.0 / 64.0, 5.0).unwrap();
        assert!((r - 4.0).abs() < 1e-12);
        assert!(delta_tail(&p, 1.0 / 16.0, 4.0).is_err());
    }

    #[test]
    fn rooted_counts_by_hand() {
        let lat = Lattice::new(&LatticeSpec::chain(24)).unwrap();
        let geom = BlockGeometry::new(&lat, &BlockScheme::new(1, 2, 1)).unwrap();
        let near = vec![SiteSet::from_1d(&[0, 1]), SiteSet::from_1d(&[2, 3])];
        assert_eq!(rooted_count_exact(&lat, &geom, &near, crate::lattice::Site::d1(0), 3).unwrap(), vec![2, 1, 0]);
        let far = vec![SiteSet::from_1d(&[20, 21])];
        assert_eq!(rooted_count_exact(&lat, &geom, &far, crate::lattice::Site::d1(0), 2).unwrap(), vec![0, 0]);
    }
}
