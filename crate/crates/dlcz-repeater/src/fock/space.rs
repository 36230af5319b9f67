//! Dense tensor-product machinery over truncated number bases.
//!
//! Pure states are flat complex vectors and mixed states square matrices
//! over the product of per-mode number bases, row-major with the first
//! mode slowest.  Everything is sized for a handful of modes with
//! single-digit cutoffs, so plain index loops are both the simplest and
//! the fastest option; operators may be rectangular (changing a mode's
//! dimension) so that embeddings into a larger basis and truncations are
//! ordinary operator applications.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

pub(crate) fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Total dimension of a mode list.
pub fn total_dim(dims: &[usize]) -> usize {
    dims.iter().product()
}

/// Kronecker product, first factor slowest.
pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let w = a[[i, j]];
            if w == real(0.0) {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[[i * br + k, j * bc + l]] = w * b[[k, l]];
                }
            }
        }
    }
    out
}

/// Applies a (possibly rectangular) one-mode operator to `mode` of a pure
/// state, returning the new amplitudes and per-mode dimensions.
pub fn apply_one_mode(
    op: &Array2<C64>,
    state: &Array1<C64>,
    dims: &[usize],
    mode: usize,
) -> (Array1<C64>, Vec<usize>) {
    let (d_new, d_old) = op.dim();
    assert_eq!(d_old, dims[mode], "operator does not fit mode {mode}");
    assert_eq!(state.len(), total_dim(dims), "state does not fit mode list");
    let before: usize = dims[..mode].iter().product();
    let after: usize = dims[mode + 1..].iter().product();
    let mut new_dims = dims.to_vec();
    new_dims[mode] = d_new;
    let mut out = Array1::zeros(total_dim(&new_dims));
    for b in 0..before {
        for n in 0..d_old {
            for a in 0..after {
                let amp = state[(b * d_old + n) * after + a];
                if amp == real(0.0) {
                    continue;
                }
                for p in 0..d_new {
                    let w = op[[p, n]];
                    if w != real(0.0) {
                        out[(b * d_new + p) * after + a] += w * amp;
                    }
                }
            }
        }
    }
    (out, new_dims)
}

/// Applies a (possibly rectangular) two-mode operator to modes `i < j` of
/// a pure state.  The operator acts on the ordered pair (mode `i` slow,
/// mode `j` fast) and maps them to dimensions `out_dims`.
pub fn apply_two_mode(
    op: &Array2<C64>,
    out_dims: (usize, usize),
    state: &Array1<C64>,
    dims: &[usize],
    i: usize,
    j: usize,
) -> (Array1<C64>, Vec<usize>) {
    assert!(i < j, "modes must be given in order");
    let (dx, dy) = (dims[i], dims[j]);
    let (dx2, dy2) = out_dims;
    assert_eq!(op.dim(), (dx2 * dy2, dx * dy), "operator does not fit modes {i}, {j}");
    assert_eq!(state.len(), total_dim(dims), "state does not fit mode list");
    let pre: usize = dims[..i].iter().product();
    let mid: usize = dims[i + 1..j].iter().product();
    let post: usize = dims[j + 1..].iter().product();
    let mut new_dims = dims.to_vec();
    new_dims[i] = dx2;
    new_dims[j] = dy2;
    let mut out = Array1::zeros(total_dim(&new_dims));
    for b in 0..pre {
        for n in 0..dx {
            for c in 0..mid {
                for m in 0..dy {
                    for a in 0..post {
                        let amp = state[(((b * dx + n) * mid + c) * dy + m) * post + a];
                        if amp == real(0.0) {
                            continue;
                        }
                        let col = n * dy + m;
                        for p in 0..dx2 {
                            for q in 0..dy2 {
                                let w = op[[p * dy2 + q, col]];
                                if w != real(0.0) {
                                    out[(((b * dx2 + p) * mid + c) * dy2 + q) * post + a] +=
                                        w * amp;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (out, new_dims)
}

/// Amplitudes of a pure state at fixed occupations `ni`, `nj` of modes
/// `i < j`, over the remaining modes (in their original order).
pub fn project_two_modes(
    state: &Array1<C64>,
    dims: &[usize],
    i: usize,
    j: usize,
    ni: usize,
    nj: usize,
) -> (Array1<C64>, Vec<usize>) {
    assert!(i < j, "modes must be given in order");
    assert!(ni < dims[i] && nj < dims[j], "occupation outside the basis");
    let (dx, dy) = (dims[i], dims[j]);
    let pre: usize = dims[..i].iter().product();
    let mid: usize = dims[i + 1..j].iter().product();
    let post: usize = dims[j + 1..].iter().product();
    let mut rest_dims: Vec<usize> = Vec::with_capacity(dims.len() - 2);
    rest_dims.extend_from_slice(&dims[..i]);
    rest_dims.extend_from_slice(&dims[i + 1..j]);
    rest_dims.extend_from_slice(&dims[j + 1..]);
    let mut out = Array1::zeros(pre * mid * post);
    for b in 0..pre {
        for c in 0..mid {
            for a in 0..post {
                out[(b * mid + c) * post + a] =
                    state[(((b * dx + ni) * mid + c) * dy + nj) * post + a];
            }
        }
    }
    (out, rest_dims)
}

/// Adds `|v⟩⟨v|` to an accumulating (unnormalized) density matrix.
pub fn accumulate_outer(rho: &mut Array2<C64>, v: &Array1<C64>) {
    let n = v.len();
    assert_eq!(rho.dim(), (n, n));
    for i in 0..n {
        let vi = v[i];
        if vi == real(0.0) {
            continue;
        }
        for j in 0..n {
            rho[[i, j]] += vi * v[j].conj();
        }
    }
}

/// `tr(op · rho)` for same-shape square matrices.
pub fn op_expectation(op: &Array2<C64>, rho: &Array2<C64>) -> C64 {
    let n = op.nrows();
    assert_eq!(op.dim(), rho.dim());
    let mut acc = real(0.0);
    for i in 0..n {
        for j in 0..n {
            acc += op[[i, j]] * rho[[j, i]];
        }
    }
    acc
}

/// `⟨v|rho|v⟩` for a square matrix.
pub fn vector_expectation(v: &Array1<C64>, rho: &Array2<C64>) -> C64 {
    let n = v.len();
    assert_eq!(rho.dim(), (n, n));
    let mut acc = real(0.0);
    for i in 0..n {
        if v[i] == real(0.0) {
            continue;
        }
        for j in 0..n {
            acc += v[i].conj() * rho[[i, j]] * v[j];
        }
    }
    acc
}

/// Restriction of a two-mode density matrix (dimension `dim` per mode) to
/// occupations below `new_dim`, renormalized to unit trace.
pub fn truncate_pair_state(rho: &Array2<C64>, dim: usize, new_dim: usize) -> Array2<C64> {
    assert!(new_dim <= dim);
    assert_eq!(rho.dim(), (dim * dim, dim * dim));
    let mut out = Array2::zeros((new_dim * new_dim, new_dim * new_dim));
    for a in 0..new_dim {
        for b in 0..new_dim {
            for a2 in 0..new_dim {
                for b2 in 0..new_dim {
                    out[[a * new_dim + b, a2 * new_dim + b2]] =
                        rho[[a * dim + b, a2 * dim + b2]];
                }
            }
        }
    }
    let mut tr = 0.0;
    for k in 0..new_dim * new_dim {
        tr += out[[k, k]].re;
    }
    out.mapv_inplace(|z| z / real(tr));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{c, rng};
    use rand::Rng;

    fn rand_state(r: &mut rand_chacha::ChaCha8Rng, dims: &[usize]) -> Array1<C64> {
        let mut v: Array1<C64> = Array1::zeros(total_dim(dims));
        for z in v.iter_mut() {
            *z = c(r.gen::<f64>() - 0.5, r.gen::<f64>() - 0.5);
        }
        v
    }

    fn rand_op(r: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize) -> Array2<C64> {
        let mut m: Array2<C64> = Array2::zeros((rows, cols));
        for z in m.iter_mut() {
            *z = c(r.gen::<f64>() - 0.5, r.gen::<f64>() - 0.5);
        }
        m
    }

    /// Dense reference: act with op on the listed modes via explicit
    /// identity Kroneckers.
    fn dense_apply(
        op: &Array2<C64>,
        state: &Array1<C64>,
        dims: &[usize],
        modes: &[usize],
        out_mode_dims: &[usize],
    ) -> Array1<C64> {
        // Build the full operator by looping over all (row, col) pairs of
        // the total space and multiplying per-mode entries.
        let mut new_dims = dims.to_vec();
        for (&m, &d) in modes.iter().zip(out_mode_dims) {
            new_dims[m] = d;
        }
        let (rows, cols) = (total_dim(&new_dims), total_dim(dims));
        let decompose = |mut idx: usize, ds: &[usize]| -> Vec<usize> {
            let mut occ = vec![0; ds.len()];
            for k in (0..ds.len()).rev() {
                occ[k] = idx % ds[k];
                idx /= ds[k];
            }
            occ
        };
        let mut out = Array1::zeros(rows);
        for row in 0..rows {
            let ro = decompose(row, &new_dims);
            let mut acc = c(0.0, 0.0);
            for col in 0..cols {
                let co = decompose(col, dims);
                // identity on all untouched modes
                if (0..dims.len())
                    .filter(|k| !modes.contains(k))
                    .any(|k| ro[k] != co[k])
                {
                    continue;
                }
                let (orow, ocol) = match modes {
                    [a] => (ro[*a], co[*a]),
                    [a, b] => (ro[*a] * new_dims[*b] + ro[*b], co[*a] * dims[*b] + co[*b]),
                    _ => unreachable!(),
                };
                acc += op[[orow, ocol]] * state[col];
            }
            out[row] = acc;
        }
        out
    }

    #[test]
    fn one_mode_apply_matches_dense_reference() {
        let mut r = rng(11);
        let dims = [2usize, 3, 2];
        let state = rand_state(&mut r, &dims);
        for mode in 0..3 {
            let op = rand_op(&mut r, 4, dims[mode]);
            let (fast, new_dims) = apply_one_mode(&op, &state, &dims, mode);
            let slow = dense_apply(&op, &state, &dims, &[mode], &[4]);
            assert_eq!(new_dims[mode], 4);
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn two_mode_apply_matches_dense_reference_and_kron_factorization() {
        let mut r = rng(12);
        let dims = [2usize, 3, 2, 2];
        let state = rand_state(&mut r, &dims);
        for (i, j) in [(0usize, 2usize), (1, 3), (2, 3)] {
            let op = rand_op(&mut r, 3 * 4, dims[i] * dims[j]);
            let (fast, new_dims) = apply_two_mode(&op, (3, 4), &state, &dims, i, j);
            let slow = dense_apply(&op, &state, &dims, &[i, j], &[3, 4]);
            assert_eq!((new_dims[i], new_dims[j]), (3, 4));
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!((a - b).norm() < 1e-12);
            }
        }
        // A product operator factors into two one-mode applications.
        let a = rand_op(&mut r, 2, dims[1]);
        let b = rand_op(&mut r, 3, dims[3]);
        let (viak, _) = apply_two_mode(&kron(&a, &b), (2, 3), &state, &dims, 1, 3);
        let (step1, d1) = apply_one_mode(&a, &state, &dims, 1);
        let (via1, _) = apply_one_mode(&b, &step1, &d1, 3);
        for (x, y) in viak.iter().zip(via1.iter()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn projection_reads_the_expected_slice() {
        let dims = [2usize, 2, 3];
        let mut state: Array1<C64> = Array1::zeros(total_dim(&dims));
        // |1, 0, 2> plus |0, 1, 1>
        state[(1 * 2 + 0) * 3 + 2] = c(0.7, 0.0);
        state[(0 * 2 + 1) * 3 + 1] = c(0.0, 0.3);
        let (v, rest) = project_two_modes(&state, &dims, 1, 2, 0, 2);
        assert_eq!(rest, vec![2]);
        assert!((v[1] - c(0.7, 0.0)).norm() < 1e-15);
        assert!(v[0].norm() < 1e-15);
        let (v, _) = project_two_modes(&state, &dims, 1, 2, 1, 1);
        assert!((v[0] - c(0.0, 0.3)).norm() < 1e-15);
    }

    #[test]
    fn outer_product_and_expectations_agree() {
        let mut r = rng(13);
        let v = rand_state(&mut r, &[4]);
        let w = rand_state(&mut r, &[4]);
        let mut rho: Array2<C64> = Array2::zeros((4, 4));
        accumulate_outer(&mut rho, &v);
        accumulate_outer(&mut rho, &w);
        // ⟨u|rho|u⟩ = |⟨u|v⟩|² + |⟨u|w⟩|²
        let u = rand_state(&mut r, &[4]);
        let dot = |a: &Array1<C64>, b: &Array1<C64>| -> C64 {
            a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
        };
        let expect = dot(&u, &v).norm_sqr() + dot(&u, &w).norm_sqr();
        let got = vector_expectation(&u, &rho);
        assert!((got.re - expect).abs() < 1e-12 && got.im.abs() < 1e-12);
        // tr(|u⟩⟨u| rho) is the same number.
        let mut proj: Array2<C64> = Array2::zeros((4, 4));
        accumulate_outer(&mut proj, &u);
        let tr = op_expectation(&proj, &rho);
        assert!((tr.re - expect).abs() < 1e-12 && tr.im.abs() < 1e-12);
    }

    #[test]
    fn pair_truncation_keeps_low_occupations_and_renormalizes() {
        let dim = 3;
        let mut rho: Array2<C64> = Array2::zeros((dim * dim, dim * dim));
        // Diagonal weights on |00>, |11>, |22>.
        rho[[0, 0]] = c(0.5, 0.0);
        rho[[1 * dim + 1, 1 * dim + 1]] = c(0.3, 0.0);
        rho[[2 * dim + 2, 2 * dim + 2]] = c(0.2, 0.0);
        let cut = truncate_pair_state(&rho, dim, 2);
        assert_eq!(cut.dim(), (4, 4));
        assert!((cut[[0, 0]].re - 0.5 / 0.8).abs() < 1e-14);
        assert!((cut[[3, 3]].re - 0.3 / 0.8).abs() < 1e-14);
    }
}
