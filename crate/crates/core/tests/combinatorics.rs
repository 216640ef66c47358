mod common;

use blockrg::combinatorics::{
    delta_from_ratio, delta_tail, epsilon_threshold, epsilon_threshold_symbolic, lagrange_coeffs, parse_rational,
    radius_and_bound, recursion_coeffs, root_count, rooted_count_exact, series_ratio, tail_sum, tail_sum_symbolic,
    to_f64, CountingParams, LambdaRational,
};
use blockrg::error::RgError;
use blockrg::lattice::{BlockGeometry, BlockScheme, Lattice, LatticeSpec, Site, SiteSet};
use common::fixed_point_series;
use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;

fn params(p: u32, r: u32, c: u32, m: &str) -> CountingParams {
    CountingParams::new(p, r, c, parse_rational(m).unwrap())
}

fn ints(xs: &[i64]) -> Vec<BigRational> {
    xs.iter().map(|&x| BigRational::from_integer(BigInt::from(x))).collect()
}

#[test]
fn catalan_and_ternary_sequences() {
    assert_eq!(recursion_coeffs(&params(2, 1, 1, "2"), 5).unwrap().0, ints(&[1, 2, 5, 14, 42]));
    assert_eq!(recursion_coeffs(&params(3, 1, 1, "2"), 4).unwrap().0, ints(&[1, 3, 12, 55]));
    assert_eq!(lagrange_coeffs(&params(3, 1, 1, "2"), 3).unwrap().get(3), &ints(&[12])[0]);
}

#[test]
fn recursion_lagrange_and_fixed_point_agree() {
    for p in [2u32, 3, 9] {
        for rc in [1u32, 2, 6] {
            let pr = params(p, rc, 1, "3/2");
            let a = recursion_coeffs(&pr, 10).unwrap();
            let b = lagrange_coeffs(&pr, 10).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.0, fixed_point_series(p, rc, 10));
            assert_eq!(a.get(1), &ints(&[rc as i64])[0]);
        }
    }
}

#[test]
fn radius_and_explicit_bound() {
    let rb = radius_and_bound(&params(2, 1, 1, "2"), 2).unwrap();
    assert_eq!(rb.radius, BigRational::new(1.into(), 4.into()));
    assert_eq!(rb.bound_n, ints(&[16])[0]);
    let rb = radius_and_bound(&params(3, 1, 1, "2"), 1).unwrap();
    assert_eq!(rb.radius, BigRational::new(4.into(), 27.into()));
    for p in [2u32, 3, 9] {
        let pr = params(p, 2, 3, "2");
        let a = recursion_coeffs(&pr, 12).unwrap();
        for n in 1..=12 {
            assert!(radius_and_bound(&pr, n).unwrap().bound_n >= *a.get(n));
        }
    }
}

#[test]
fn partial_sums_below_radius_stay_under_the_w_range() {
    for p in [2u32, 3] {
        let pr = params(p, 1, 1, "2");
        let a = recursion_coeffs(&pr, 60).unwrap();
        let x = to_f64(&radius_and_bound(&pr, 1).unwrap().radius) * (1.0 - 1e-3);
        let mut s = 0.0;
        for n in 1..=60 {
            let next = s + to_f64(a.get(n)) * x.powi(n as i32);
            assert!(next >= s);
            s = next;
        }
        assert!(s <= 1.0 / (p - 1) as f64 + 1e-9, "{s}");
    }
}

#[test]
fn threshold_and_tail_identity() {
    let pr = params(2, 1, 1, "2");
    let l2 = 2f64.ln();
    let eps = epsilon_threshold(&pr).unwrap();
    assert!((eps - l2 / (16.0 * (1.0 + l2))).abs() < 1e-15);
    assert!((eps - 0.0255865).abs() < 1e-7);
    assert!((tail_sum(&pr, eps).unwrap() - l2).abs() < 1e-12);
    assert_eq!(tail_sum(&pr, 0.0).unwrap(), 0.0);
    for pr in [params(2, 1, 1, "2"), params(3, 2, 5, "7/3"), params(9, 4, 1, "11/10")] {
        let sym = epsilon_threshold_symbolic(&pr).unwrap();
        assert!(tail_sum_symbolic(&pr, &sym).unwrap().identical(&LambdaRational::lambda()));
    }
}

#[test]
fn divergent_tail_is_flagged() {
    let pr = params(2, 1, 1, "2");
    assert!(matches!(tail_sum(&pr, 1.0 / 16.0), Err(RgError::Divergent(_))));
    assert!(matches!(delta_tail(&pr, 1.0, 4.0), Err(RgError::Divergent(_))));
}

#[test]
fn delta_tail_hand_values() {
    let pr = params(2, 1, 1, "2");
    assert_eq!(series_ratio(&pr, 1.0 / 64.0).unwrap(), 0.25);
    assert!((delta_tail(&pr, 1.0 / 64.0, 4.0).unwrap() - 1.0 / 12.0).abs() < 1e-15);
    assert_eq!(delta_tail(&pr, 0.0, 4.0).unwrap(), 0.0);
    let x = 0.3;
    let r = delta_from_ratio(3, x, 5.0).unwrap() / delta_from_ratio(3, x, 8.0).unwrap();
    assert!((r - 1.0 / x).abs() < 1e-12);
    let mut last = f64::INFINITY;
    for k in 0..10 {
        let d = delta_from_ratio(2, x, 2f64.powi(k)).unwrap();
        assert!(d < last);
        last = d;
    }
    assert!(last < 1e-100);
}

#[test]
fn degenerate_p_is_rejected() {
    assert!(recursion_coeffs(&params(1, 1, 1, "2"), 3).is_err());
    assert!(recursion_coeffs(&params(2, 1, 1, "1"), 3).is_err());
}

fn chain_geom(n: usize, l: usize, a: u32) -> (Lattice, BlockGeometry) {
    let lat = Lattice::new(&LatticeSpec::chain(n)).unwrap();
    let g = BlockGeometry::new(&lat, &BlockScheme::new(1, l, a)).unwrap();
    (lat, g)
}

#[test]
fn rooted_count_hand_cases() {
    let (lat, g) = chain_geom(16, 2, 1);
    let root = Site([0, 0]);
    let one = [SiteSet::from_1d(&[0, 1])];
    assert_eq!(rooted_count_exact(&lat, &g, &one, root, 3).unwrap(), vec![1, 0, 0]);
    let two = [SiteSet::from_1d(&[0, 1]), SiteSet::from_1d(&[1, 2])];
    assert_eq!(rooted_count_exact(&lat, &g, &two, root, 2).unwrap(), vec![2, 1]);
    let far = [SiteSet::from_1d(&[12, 13])];
    assert_eq!(rooted_count_exact(&lat, &g, &far, root, 4).unwrap(), vec![0, 0, 0, 0]);
}

#[test]
fn rooted_counts_respect_the_recursion_bound() {
    let (lat, g) = chain_geom(24, 2, 1);
    let family: Vec<SiteSet> = (0..12).map(|x| SiteSet::from_1d(&[x, x + 1])).collect();
    let bars: Vec<_> = family.iter().map(|f| g.bar_map(&lat, f).unwrap()).collect();
    let p = bars.iter().map(|b| b.len()).max().unwrap() as u32;
    let c_link = g
        .bar()
        .sites()
        .iter()
        .map(|z| bars.iter().filter(|b| b.contains(z)).count())
        .max()
        .unwrap() as u32;
    let pr = CountingParams::new(p.max(2), root_count(&g), c_link, parse_rational("2").unwrap());
    let bound = recursion_coeffs(&pr, 4).unwrap();
    for y in g.bar().sites() {
        let counts = rooted_count_exact(&lat, &g, &family, *y, 4).unwrap();
        for (n, c) in counts.iter().enumerate() {
            assert!(BigRational::from_integer((*c).into()) <= *bound.get(n + 1), "y={y:?} n={}", n + 1);
        }
    }
}

#[test]
fn csv_has_exact_columns() {
    let csv = recursion_coeffs(&params(2, 1, 1, "2"), 3).unwrap().to_csv();
    assert_eq!(csv.lines().next().unwrap(), "n,numerator,denominator,value");
    assert!(csv.lines().nth(3).unwrap().starts_with("3,5,1,"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn recursion_equals_lagrange(p in 2u32..6, r in 1u32..4, c in 1u32..4, n in 1usize..12) {
        let pr = params(p, r, c, "2");
        prop_assert_eq!(recursion_coeffs(&pr, n).unwrap(), lagrange_coeffs(&pr, n).unwrap());
    }

    #[test]
    fn delta_decreases_in_p(p in 2u32..10, x in 0.01f64..0.99, big_p in 1.0f64..50.0) {
        let a = delta_from_ratio(p, x, big_p).unwrap();
        let b = delta_from_ratio(p, x, big_p + 1.0).unwrap();
        prop_assert!(b < a);
    }

    #[test]
    fn symbolic_threshold_matches_float(p in 2u32..6, r in 1u32..4, num in 11i64..40) {
        let pr = CountingParams::new(p, r, 1, BigRational::new(num.into(), 10.into()));
        let f = epsilon_threshold(&pr).unwrap();
        let t = tail_sum(&pr, f).unwrap();
        prop_assert!((t - (num as f64 / 10.0).ln()).abs() < 1e-12);
    }
}
