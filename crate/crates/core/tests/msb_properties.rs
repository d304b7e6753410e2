use msbprune::{
    approx_dot, msb_pos, product_magnitude, MsbMagnitude, ProductMagnitude, PruneThreshold,
};
use proptest::prelude::*;

fn operand() -> impl Strategy<Value = i32> {
    prop_oneof![
        1 => Just(0),
        6 => -(1 << 20)..=(1 << 20),
        1 => any::<i32>().prop_map(|v| v >> 8),
    ]
}

fn window() -> impl Strategy<Value = Vec<(i32, i32)>> {
    prop::collection::vec((operand(), operand()), 1..=150)
}

fn exact(pairs: &[(i32, i32)]) -> i64 {
    pairs
        .iter()
        .map(|&(a, b)| i64::from(a) * i64::from(b))
        .sum()
}

fn magnitude_sum(m: ProductMagnitude) -> i64 {
    m.sum().map_or(i64::MIN, i64::from)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn msb_brackets_magnitude(x in any::<i32>().prop_filter("nonzero", |&x| x != 0)) {
        let p = msb_pos(x).position().unwrap();
        let m = u64::from(x.unsigned_abs());
        prop_assert!(1u64 << p <= m && m < 1u64 << (p + 1));
    }

    #[test]
    fn product_magnitude_brackets_product(a in operand(), b in operand()) {
        let p = i64::from(a) * i64::from(b);
        match product_magnitude(a, b) {
            ProductMagnitude::Zero => prop_assert_eq!(p, 0),
            ProductMagnitude::Sum(m) => {
                let p = p.unsigned_abs();
                prop_assert!(1u64 << m <= p && p < 1u64 << (m + 2));
            }
        }
    }

    #[test]
    fn skipped_products_are_bounded(pairs in window(), t in 1u32..=62) {
        let out = approx_dot(&pairs, PruneThreshold::new(t).unwrap()).unwrap();
        let max = magnitude_sum(out.msb_max);
        let mut skipped = 0i64;
        for (&(a, b), &kept) in pairs.iter().zip(&out.kept_mask) {
            let p = i64::from(a) * i64::from(b);
            if !kept {
                skipped += p.abs();
                if p != 0 {
                    // |P| < 2^(MSB_max - T + 2); compared in i128 since the exponent may be negative
                    let e = max - i64::from(t) + 2;
                    prop_assert!(e > 0 && i128::from(p.abs()) < 1i128 << e);
                }
            } else {
                prop_assert_ne!(p, 0);
            }
        }
        prop_assert!((out.sum - exact(&pairs)).abs() <= skipped);
        prop_assert_eq!(out.mults_performed as usize, out.kept_mask.iter().filter(|&&k| k).count());
    }

    #[test]
    fn dominant_products_survive(pairs in window(), t in 1u32..=62) {
        let out = approx_dot(&pairs, PruneThreshold::new(t).unwrap()).unwrap();
        for (&(a, b), &kept) in pairs.iter().zip(&out.kept_mask) {
            let m = product_magnitude(a, b);
            if m != ProductMagnitude::Zero && m == out.msb_max {
                prop_assert!(kept);
            }
        }
    }

    #[test]
    fn large_threshold_is_exact(pairs in window(), t in 62u32..200) {
        let out = approx_dot(&pairs, PruneThreshold::new(t).unwrap()).unwrap();
        prop_assert_eq!(out.sum, exact(&pairs));
        let nonzero = pairs.iter().filter(|&&(a, b)| a != 0 && b != 0).count();
        prop_assert_eq!(out.mults_performed as usize, nonzero);
    }

    #[test]
    fn kept_set_grows_with_threshold(pairs in window(), t in 1u32..40) {
        let lo = approx_dot(&pairs, PruneThreshold::new(t).unwrap()).unwrap();
        let hi = approx_dot(&pairs, PruneThreshold::new(t + 1).unwrap()).unwrap();
        for (l, h) in lo.kept_mask.iter().zip(&hi.kept_mask) {
            prop_assert!(!l || *h);
        }
    }

    #[test]
    fn doubling_an_operand_keeps_the_mask(pairs in window(), t in 1u32..=62) {
        let base = approx_dot(&pairs, PruneThreshold::new(t).unwrap()).unwrap();
        let doubled: Vec<(i32, i32)> = pairs.iter().map(|&(a, b)| (a * 2, b)).collect();
        let d = approx_dot(&doubled, PruneThreshold::new(t).unwrap()).unwrap();
        prop_assert_eq!(&base.kept_mask, &d.kept_mask);
        prop_assert_eq!(d.sum, base.sum * 2);
    }

    #[test]
    fn permutation_commutes_with_mask(pairs in window(), t in 1u32..=62, rot in 0usize..150) {
        let th = PruneThreshold::new(t).unwrap();
        let base = approx_dot(&pairs, th).unwrap();
        let k = rot % pairs.len();
        let mut rotated = pairs.clone();
        rotated.rotate_left(k);
        let r = approx_dot(&rotated, th).unwrap();
        let mut mask = base.kept_mask.clone();
        mask.rotate_left(k);
        prop_assert_eq!(r.kept_mask, mask);
        prop_assert_eq!(r.sum, base.sum);
    }

    #[test]
    fn fraction_mapping_is_ceiling_log(f in 1e-6f64..1.0) {
        let t = PruneThreshold::from_fraction(f).unwrap().t_int();
        // least t with f * 2^t >= 1
        prop_assert!(f * 2f64.powi(t as i32) >= 1.0);
        prop_assert!(t == 1 || f * 2f64.powi(t as i32 - 1) < 1.0);
    }
}

#[test]
fn zero_sentinel() {
    assert_eq!(msb_pos(0), MsbMagnitude::Zero);
    assert_eq!(product_magnitude(0, 12345), ProductMagnitude::Zero);
    assert_eq!(msb_pos(i32::MIN), MsbMagnitude::Pos(31));
}
