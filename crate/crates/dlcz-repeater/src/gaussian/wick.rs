//! Wick/Isserlis moments of quadratic forms under a complex Gaussian measure.
//!
//! For a centered circular complex Gaussian with covariance
//! `C_ij = E[zeta_i conj(zeta_j)]`, products of Hermitian quadratic forms
//! integrate to a sum over permutations that factorizes into cycles:
//!
//! ```text
//! E[prod_{k=1..m} zeta' A_k zeta]
//!   = sum_{sigma in S_m} prod_{cycles (k1..kr) of sigma}
//!         tr(A_{k1} C A_{k2} C ... A_{kr} C)
//! ```
//!
//! Repeated forms are common here (a polynomial `(zeta' P zeta)^k` is stored
//! as `k` copies of the same matrix), so the implementation first groups
//! bitwise-identical forms into types with multiplicities.  It then recurses
//! on "the cycle containing one instance of the first type still available",
//! counting labeled assignments with falling factorials and memoizing the
//! expectation of every residual count vector.  This keeps the cost
//! polynomial in the multiplicities; only the number of *distinct* forms
//! contributes factorially, and totals are capped at [`MAX_FORMS`] anyway.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::gaussian::{MAX_DISTINCT_FORMS, MAX_FORMS};
use crate::mat::trace;

/// Groups bitwise-identical matrices, returning the distinct representatives
/// and their multiplicities (in first-appearance order, which keeps every
/// downstream enumeration deterministic).
pub(crate) fn group_identical<'a>(forms: &[&'a Array2<C64>]) -> (Vec<&'a Array2<C64>>, Vec<u8>) {
    let mut types: Vec<&Array2<C64>> = Vec::new();
    let mut counts: Vec<u8> = Vec::new();
    for f in forms {
        match types.iter().position(|t| *t == *f) {
            Some(i) => counts[i] += 1,
            None => {
                types.push(f);
                counts.push(1);
            }
        }
    }
    (types, counts)
}

/// Packs a count vector (entries <= 31, at most 12 entries) into a
/// memoization key.
pub(crate) fn pack_counts(r: &[u8]) -> u64 {
    r.iter().enumerate().fold(0u64, |acc, (i, &v)| acc | (v as u64) << (5 * i))
}

/// `E[prod_k zeta' A_k zeta]` for covariance `c` and forms `a`.
pub fn wick_expectation(c: &Array2<C64>, a: &[&Array2<C64>]) -> Result<C64> {
    let m = a.len();
    if m > MAX_FORMS {
        return Err(Error::TooManyForms { count: m, max: MAX_FORMS });
    }
    let n = c.nrows();
    for f in a {
        if f.dim() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "form is {}x{} but covariance is {}x{}",
                f.nrows(),
                f.ncols(),
                n,
                n
            )));
        }
    }
    if m == 0 {
        return Ok(C64::new(1.0, 0.0));
    }
    let (types, mut counts) = group_identical(a);
    if types.len() > MAX_DISTINCT_FORMS {
        return Err(Error::TooManyForms { count: types.len(), max: MAX_DISTINCT_FORMS });
    }
    // D_t = A_t C; a cycle (t1..tr) contributes tr(D_t1 ... D_tr).
    let d: Vec<Array2<C64>> = types.iter().map(|f| f.dot(c)).collect();
    let mut memo: HashMap<u64, C64> = HashMap::new();
    Ok(count_expectation(&mut counts, &d, &mut memo))
}

fn count_expectation(r: &mut [u8], d: &[Array2<C64>], memo: &mut HashMap<u64, C64>) -> C64 {
    let key = pack_counts(r);
    if key == 0 {
        return C64::new(1.0, 0.0);
    }
    if let Some(v) = memo.get(&key) {
        return *v;
    }
    let anchor = r.iter().position(|&v| v > 0).expect("nonzero count");
    r[anchor] -= 1;
    let total = cycle_sum(&d[anchor], r, 1.0, d, memo);
    r[anchor] += 1;
    memo.insert(key, total);
    total
}

/// Sums over every ordered continuation of the cycle that currently has the
/// running product `prod`: either close the cycle now (take its trace and
/// recurse on what is left) or append one more available form instance.
/// `count` carries the number of labeled instance assignments realizing the
/// type sequence built so far.
fn cycle_sum(
    prod: &Array2<C64>,
    avail: &mut [u8],
    count: f64,
    d: &[Array2<C64>],
    memo: &mut HashMap<u64, C64>,
) -> C64 {
    let mut total = trace(prod) * count * count_expectation(avail, d, memo);
    for g in 0..d.len() {
        if avail[g] == 0 {
            continue;
        }
        let c2 = count * avail[g] as f64;
        avail[g] -= 1;
        let next = prod.dot(&d[g]);
        total += cycle_sum(&next, avail, c2, d, memo);
        avail[g] += 1;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::{dagger, hermitize};
    use crate::testutil::{c, rand_hermitian, rand_hpd, rng, C};

    /// Brute-force oracle: expand every quadratic form into monomials and
    /// apply complex Wick pairing term by term
    /// (`E[prod_l zeta_{i_l} conj(zeta_{j_l})] = sum over bijections`).
    fn naive_moment(cov: &Array2<C64>, forms: &[&Array2<C64>]) -> C64 {
        let n = cov.nrows();
        let m = forms.len();
        if m == 0 {
            return C(1.0);
        }
        // Index tuples: for each form, a pair (i, j) meaning conj(zeta_i) * A_ij * zeta_j.
        let mut total = C(0.0);
        let mut idx = vec![(0usize, 0usize); m];
        loop {
            // coefficient product for this monomial
            let mut coeff = C(1.0);
            for (k, f) in forms.iter().enumerate() {
                coeff *= f[(idx[k].0, idx[k].1)];
            }
            if coeff.norm() > 0.0 {
                // E[prod_k zeta_{j_k} conj(zeta_{i_k})]: sum over bijections
                // sigma with value prod_k Cov[j_k, i_{sigma(k)}].
                let mut perm: Vec<usize> = (0..m).collect();
                let mut pair_sum = C(0.0);
                permute(&mut perm, 0, &mut |p| {
                    let mut v = C(1.0);
                    for k in 0..m {
                        v *= cov[(idx[k].1, idx[p[k]].0)];
                    }
                    pair_sum += v;
                });
                total += coeff * pair_sum;
            }
            // advance the mixed-radix counter over (i, j) pairs
            let mut k = 0;
            loop {
                if k == m {
                    return total;
                }
                idx[k].1 += 1;
                if idx[k].1 == n {
                    idx[k].1 = 0;
                    idx[k].0 += 1;
                    if idx[k].0 == n {
                        idx[k] = (0, 0);
                        k += 1;
                        continue;
                    }
                }
                break;
            }
        }
    }

    fn permute(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, f);
            v.swap(k, i);
        }
    }

    #[test]
    fn zero_forms_give_one() {
        let c2 = Array2::eye(2);
        assert_eq!(wick_expectation(&c2, &[]).unwrap(), C(1.0));
    }

    #[test]
    fn single_form_is_trace() {
        let mut r = rng(42);
        let cov = rand_hpd(&mut r, 3);
        let a = rand_hermitian(&mut r, 3);
        let got = wick_expectation(&cov, &[&a]).unwrap();
        let want = trace(&a.dot(&cov));
        assert!((got - want).norm() < 1e-13);
    }

    #[test]
    fn two_forms_match_closed_formula() {
        let mut r = rng(43);
        for _ in 0..5 {
            let cov = rand_hpd(&mut r, 3);
            let a = rand_hermitian(&mut r, 3);
            let b = rand_hermitian(&mut r, 3);
            let got = wick_expectation(&cov, &[&a, &b]).unwrap();
            let want = trace(&a.dot(&cov)) * trace(&b.dot(&cov))
                + trace(&a.dot(&cov).dot(&b).dot(&cov));
            assert!((got - want).norm() < 1e-12 * (1.0 + want.norm()));
        }
    }

    #[test]
    fn scalar_mode_powers_are_factorial_moments() {
        // One mode, covariance 1/q, A = [[1]]: E[|zeta|^(2m)] = m! / q^m.
        let q = 1.7;
        let cov = Array2::from_elem((1, 1), C(1.0 / q));
        let a = Array2::from_elem((1, 1), C(1.0));
        let mut factorial = 1.0;
        for m in 1..=4usize {
            factorial *= m as f64;
            let forms: Vec<&Array2<C64>> = (0..m).map(|_| &a).collect();
            let got = wick_expectation(&cov, &forms).unwrap();
            let want = factorial / q.powi(m as i32);
            assert!((got - C(want)).norm() < 1e-12 * want, "m = {m}");
        }
    }

    #[test]
    fn matches_monomial_expansion_up_to_four_forms() {
        let mut r = rng(1234);
        for m in 1..=4usize {
            for _ in 0..4 {
                let cov = rand_hpd(&mut r, 2);
                let forms: Vec<Array2<C64>> = (0..m).map(|_| rand_hermitian(&mut r, 2)).collect();
                let refs: Vec<&Array2<C64>> = forms.iter().collect();
                let fast = wick_expectation(&cov, &refs).unwrap();
                let slow = naive_moment(&cov, &refs);
                assert!(
                    (fast - slow).norm() < 1e-9 * (1.0 + slow.norm()),
                    "m = {m}: {fast} vs {slow}"
                );
            }
        }
    }

    #[test]
    fn repeated_forms_match_monomial_expansion() {
        // Multiplicities exercise the grouped count-vector recursion; the
        // naive oracle treats every copy as a distinct labeled form.
        let mut r = rng(4321);
        for _ in 0..3 {
            let cov = rand_hpd(&mut r, 2);
            let a = rand_hermitian(&mut r, 2);
            let b = rand_hermitian(&mut r, 2);
            for pattern in [vec![&a, &a], vec![&a, &a, &b], vec![&a, &b, &a, &a]] {
                let fast = wick_expectation(&cov, &pattern).unwrap();
                let slow = naive_moment(&cov, &pattern);
                assert!(
                    (fast - slow).norm() < 1e-9 * (1.0 + slow.norm()),
                    "pattern len {}: {fast} vs {slow}",
                    pattern.len()
                );
            }
        }
    }

    #[test]
    fn hermitian_forms_give_real_expectations() {
        let mut r = rng(99);
        let cov = rand_hpd(&mut r, 4);
        let a = rand_hermitian(&mut r, 4);
        let b = rand_hermitian(&mut r, 4);
        let v = wick_expectation(&cov, &[&a, &b, &a]).unwrap();
        assert!(v.im.abs() < 1e-12 * (1.0 + v.re.abs()));
    }

    #[test]
    fn too_many_forms_rejected() {
        let cov = Array2::eye(1);
        let a = Array2::from_elem((1, 1), C(1.0));
        let forms: Vec<&Array2<C64>> = (0..MAX_FORMS + 1).map(|_| &a).collect();
        assert!(matches!(
            wick_expectation(&cov, &forms),
            Err(Error::TooManyForms { .. })
        ));
    }

    #[test]
    fn non_hermitian_covariance_still_uses_given_matrix() {
        // The cycle formula is linear in C; feeding C built as B B† (always
        // valid) vs its explicit hermitization must agree bitwise-ish.
        let mut r = rng(7);
        let b = rand_hermitian(&mut r, 2);
        let cov = b.dot(&dagger(&b));
        let covh = hermitize(&cov);
        let a = rand_hermitian(&mut r, 2);
        let v1 = wick_expectation(&cov, &[&a, &a]).unwrap();
        let v2 = wick_expectation(&covh, &[&a, &a]).unwrap();
        assert!((v1 - v2).norm() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_form_size() {
        let cov = Array2::eye(2);
        let a = Array2::from_elem((1, 1), c(1.0, 0.0));
        assert!(wick_expectation(&cov, &[&a]).is_err());
    }
}
