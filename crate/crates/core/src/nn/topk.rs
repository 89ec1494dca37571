use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How TopK ranks entries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopKSelection {
    /// Keep the k largest signed values.
    #[default]
    Value,
    /// Keep the k entries of largest absolute value.
    Magnitude,
}

/// Keeps the `k` largest entries of `v` by signed value and zeroes the
/// rest. Ties go to the lowest index. Returns the sparse vector and the
/// mask of kept positions.
pub fn topk_forward(v: &[f64], k: usize) -> Result<(Vec<f64>, Vec<bool>)> {
    topk_forward_by(v, k, TopKSelection::Value)
}

pub fn topk_forward_by(v: &[f64], k: usize, selection: TopKSelection) -> Result<(Vec<f64>, Vec<bool>)> {
    let mask = topk_mask(v, k, selection)?;
    let out = v
        .iter()
        .zip(&mask)
        .map(|(&x, &keep)| if keep { x } else { 0.0 })
        .collect();
    Ok((out, mask))
}

/// Mask of the `k` positions TopK keeps.
pub fn topk_mask(v: &[f64], k: usize, selection: TopKSelection) -> Result<Vec<bool>> {
    let d = v.len();
    if k == 0 || k > d {
        return Err(Error::KOutOfRange { k, dim: d });
    }
    let mut mask = vec![false; d];
    if k == d {
        mask.fill(true);
        return Ok(mask);
    }
    let key = |i: usize| match selection {
        TopKSelection::Value => v[i],
        TopKSelection::Magnitude => v[i].abs(),
    };
    // Strict total order: larger key first, then lower index.
    let rank = |a: &usize, b: &usize| -> Ordering { key(*b).total_cmp(&key(*a)).then(a.cmp(b)) };
    let mut order: Vec<usize> = (0..d).collect();
    order.select_nth_unstable_by(k - 1, rank);
    for &i in &order[..k] {
        mask[i] = true;
    }
    Ok(mask)
}

/// Subgradient of TopK: `grad_out` passes through kept positions only.
pub fn topk_backward(grad_out: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if grad_out.len() != mask.len() {
        return Err(Error::DimensionMismatch(format!(
            "gradient has {} entries, mask has {}",
            grad_out.len(),
            mask.len()
        )));
    }
    Ok(grad_out
        .iter()
        .zip(mask)
        .map(|(&g, &keep)| if keep { g } else { 0.0 })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn k_equal_d_is_identity() {
        let (out, mask) = topk_forward(&[0.5, -1.0, 2.0], 3).unwrap();
        assert_eq!(out, [0.5, -1.0, 2.0]);
        assert_eq!(mask, [true, true, true]);
    }

    #[test]
    fn keeps_top_two_by_value() {
        let (out, mask) = topk_forward(&[3.0, 1.0, 2.0, 5.0], 2).unwrap();
        assert_eq!(out, [3.0, 0.0, 0.0, 5.0]);
        assert_eq!(mask, [true, false, false, true]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let (out, mask) = topk_forward(&[2.0, 2.0, 1.0], 1).unwrap();
        assert_eq!(out, [2.0, 0.0, 0.0]);
        assert_eq!(mask, [true, false, false]);
        let (_, mask) = topk_forward(&[1.0, 7.0, 7.0, 7.0], 2).unwrap();
        assert_eq!(mask, [false, true, true, false]);
    }

    #[test]
    fn signed_versus_magnitude() {
        let v = [-5.0, 1.0, 2.0];
        assert_eq!(topk_forward(&v, 1).unwrap().0, [0.0, 0.0, 2.0]);
        assert_eq!(
            topk_forward_by(&v, 1, TopKSelection::Magnitude).unwrap().0,
            [-5.0, 0.0, 0.0]
        );
    }

    #[test]
    fn k_out_of_range() {
        assert!(matches!(
            topk_forward(&[1.0, 2.0], 0),
            Err(Error::KOutOfRange { k: 0, dim: 2 })
        ));
        assert!(matches!(
            topk_forward(&[1.0, 2.0], 3),
            Err(Error::KOutOfRange { k: 3, dim: 2 })
        ));
    }

    #[test]
    fn backward_masks_gradient() {
        assert_eq!(
            topk_backward(&[1.0, 1.0, 1.0], &[true, false, true]).unwrap(),
            [1.0, 0.0, 1.0]
        );
        let g = [0.3, -2.0];
        assert_eq!(topk_backward(&g, &[true, true]).unwrap(), g);
        assert!(topk_backward(&[1.0], &[true, false]).is_err());
    }

    #[test]
    fn jvp_matches_central_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let eps = 1e-5;
        for _ in 0..200 {
            let d = rng.random_range(2..12);
            let k = rng.random_range(1..=d);
            // Distinct, well-separated values keep the selection fixed under ±eps.
            let mut v: Vec<f64> = (0..d).map(|i| i as f64 * 0.1 + rng.random::<f64>() * 0.01).collect();
            for i in (1..d).rev() {
                v.swap(i, rng.random_range(0..=i));
            }
            let u: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let (_, mask) = topk_forward(&v, k).unwrap();
            let analytic = topk_backward(&u, &mask).unwrap();
            let plus: Vec<f64> = v.iter().zip(&u).map(|(a, b)| a + eps * b).collect();
            let minus: Vec<f64> = v.iter().zip(&u).map(|(a, b)| a - eps * b).collect();
            let (fp, _) = topk_forward(&plus, k).unwrap();
            let (fm, _) = topk_forward(&minus, k).unwrap();
            for i in 0..d {
                let numeric = (fp[i] - fm[i]) / (2.0 * eps);
                let rel = (numeric - analytic[i]).abs() / (numeric.abs() + analytic[i].abs()).max(1e-8);
                assert!(rel < 1e-6, "entry {i}: numeric {numeric}, analytic {}", analytic[i]);
            }
        }
    }

    proptest! {
        #[test]
        fn exactly_k_selected_at_most_k_nonzero(
            v in prop::collection::vec(-10.0f64..10.0, 1..24),
            k_frac in 0.0f64..1.0,
        ) {
            let k = 1 + ((v.len() - 1) as f64 * k_frac) as usize;
            let (out, mask) = topk_forward(&v, k).unwrap();
            prop_assert_eq!(mask.iter().filter(|&&m| m).count(), k);
            prop_assert!(out.iter().filter(|&&x| x != 0.0).count() <= k);
        }

        // Only holds for nonnegative input (the post-ReLU case): a zeroed
        // entry can outrank a kept negative one.
        #[test]
        fn idempotent_on_nonnegative_input(
            v in prop::collection::vec(0.0f64..10.0, 1..24),
            k_frac in 0.0f64..1.0,
        ) {
            let k = 1 + ((v.len() - 1) as f64 * k_frac) as usize;
            let (out, _) = topk_forward(&v, k).unwrap();
            let (again, _) = topk_forward(&out, k).unwrap();
            prop_assert_eq!(again, out);
        }

        #[test]
        fn permutation_equivariant_without_ties(
            v in prop::collection::hash_set(-1000i32..1000, 2..16),
            seed in any::<u64>(),
        ) {
            let v: Vec<f64> = v.into_iter().map(f64::from).collect();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut perm: Vec<usize> = (0..v.len()).collect();
            for i in (1..perm.len()).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let k = 1 + (seed as usize % v.len());
            let permuted: Vec<f64> = perm.iter().map(|&i| v[i]).collect();
            let (out, _) = topk_forward(&v, k).unwrap();
            let (out_perm, _) = topk_forward(&permuted, k).unwrap();
            let expected: Vec<f64> = perm.iter().map(|&i| out[i]).collect();
            prop_assert_eq!(out_perm, expected);
        }
    }
}
