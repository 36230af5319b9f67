//! Loss channels, the balanced beam splitter, and detector POVMs on
//! truncated number bases.
//!
//! These are the physical building blocks of the brute-force route: pure
//! linear algebra on photon-number amplitudes, with no characteristic
//! functions anywhere.  The beam-splitter convention matches the
//! analytic engine: the first input mode maps to `(-d1 + d2)/sqrt(2)`
//! and the second to `(d1 + d2)/sqrt(2)` in terms of the two detector
//! modes, i.e. the relative minus sign sits on the first detector.

use ndarray::Array2;
use num_complex::Complex64 as C64;

use super::space::{kron, real};
use crate::link::Detector;

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    // Multiplicative form keeps everything well inside f64 range for the
    // small n used here.
    let mut acc = 1.0;
    for i in 0..k {
        acc *= (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Kraus operators of the pure-loss channel with transmissivity `eta` on
/// a single mode of dimension `dim`.  Element `j` removes `j` photons:
/// `K_j |n> = sqrt(C(n,j) eta^(n-j) (1-eta)^j) |n-j>`.
pub fn loss_kraus(dim: usize, eta: f64) -> Vec<Array2<C64>> {
    assert!((0.0..=1.0).contains(&eta), "transmissivity outside [0, 1]");
    (0..dim)
        .map(|j| {
            let mut k: Array2<C64> = Array2::zeros((dim, dim));
            for n in j..dim {
                let w = binomial(n, j) * eta.powi((n - j) as i32) * (1.0 - eta).powi(j as i32);
                k[[n - j, n]] = real(w.sqrt());
            }
            k
        })
        .collect()
}

/// Balanced beam-splitter isometry from two modes of dimension `dim_in`
/// to two detector modes of dimension `dim_out`, column index
/// `n * dim_in + m` (first input slow), row index `p * dim_out + q`.
///
/// The map is exact (an isometry on the whole input space) whenever
/// `dim_out >= 2 * dim_in - 1`, since `n + m` photons never spread
/// beyond occupation `n + m` of either output.
pub fn beam_splitter(dim_in: usize, dim_out: usize) -> Array2<C64> {
    let mut u: Array2<C64> = Array2::zeros((dim_out * dim_out, dim_in * dim_in));
    for n in 0..dim_in {
        for m in 0..dim_in {
            // (-u + v)^n (u + v)^m as a polynomial in u, v counting the
            // two detector creation operators.
            let mut f = vec![0.0f64; n + m + 1];
            for i in 0..=n {
                let a = binomial(n, i) * if i % 2 == 0 { 1.0 } else { -1.0 };
                for j in 0..=m {
                    f[i + j] += a * binomial(m, j);
                }
            }
            let norm = (factorial(n) * factorial(m)).sqrt() * 2f64.powf((n + m) as f64 / 2.0);
            for (p, &coeff) in f.iter().enumerate() {
                let q = n + m - p;
                if coeff == 0.0 || p >= dim_out || q >= dim_out {
                    continue;
                }
                let amp = coeff * (factorial(p) * factorial(q)).sqrt() / norm;
                u[[p * dim_out + q, n * dim_in + m]] = real(amp);
            }
        }
    }
    u
}

/// Single-detector POVM element for a fired / silent outcome.
///
/// A photon-number-resolving detector heralds on exactly one photon, so
/// its fired element is `|1><1|` and its silent element `|0><0|` (other
/// photon numbers are discarded outcomes, not part of this pair).  A
/// non-resolving detector fires on any light: `I - |0><0|` against
/// `|0><0|`, which is a complete pair.
pub fn click_povm(detector: Detector, fired: bool, dim: usize) -> Array2<C64> {
    let mut e: Array2<C64> = Array2::zeros((dim, dim));
    match (detector, fired) {
        (Detector::Pnrd, true) => e[[1, 1]] = real(1.0),
        (Detector::Nrpd, true) => {
            for n in 1..dim {
                e[[n, n]] = real(1.0);
            }
        }
        (_, false) => e[[0, 0]] = real(1.0),
    }
    e
}

/// Pulls a two-mode POVM element back through equal loss `eta` on both
/// modes: `sum_ij (K_i x K_j)^dag E (K_i x K_j)`.
pub fn pull_back_loss_two(e: &Array2<C64>, eta: f64, dim: usize) -> Array2<C64> {
    assert_eq!(e.dim(), (dim * dim, dim * dim));
    let ks = loss_kraus(dim, eta);
    let mut out: Array2<C64> = Array2::zeros((dim * dim, dim * dim));
    for ki in &ks {
        for kj in &ks {
            let k = kron(ki, kj);
            // out += K† E K
            let n = dim * dim;
            for r in 0..n {
                for c in 0..n {
                    let mut acc = real(0.0);
                    for a in 0..n {
                        if k[[a, r]] == real(0.0) {
                            continue;
                        }
                        for b in 0..n {
                            acc += k[[a, r]].conj() * e[[a, b]] * k[[b, c]];
                        }
                    }
                    out[[r, c]] += acc;
                }
            }
        }
    }
    out
}

/// POVM element, on two memory modes of dimension `dim`, for the joint
/// detection event `(fired1, fired2)` after loss `eta_m` on each mode
/// and a balanced beam splitter in front of the detector pair.
pub fn measurement_povm(
    detector: Detector,
    fired: (bool, bool),
    eta_m: f64,
    dim: usize,
) -> Array2<C64> {
    // The beam splitter can scatter up to 2 (dim - 1) photons into one
    // detector; sizing the detector space to hold them keeps the
    // isometry exact.
    let dim_bs = 2 * (dim - 1) + 1;
    let u = beam_splitter(dim, dim_bs);
    let p = kron(
        &click_povm(detector, fired.0, dim_bs),
        &click_povm(detector, fired.1, dim_bs),
    );
    // E = U† P U on the memory pair, then loss pulled back underneath.
    let (rows, cols) = (dim * dim, dim_bs * dim_bs);
    let mut e: Array2<C64> = Array2::zeros((rows, rows));
    for r in 0..rows {
        for c in 0..rows {
            let mut acc = real(0.0);
            for a in 0..cols {
                if u[[a, r]] == real(0.0) {
                    continue;
                }
                for b in 0..cols {
                    if p[[a, b]] == real(0.0) {
                        continue;
                    }
                    acc += u[[a, r]].conj() * p[[a, b]] * u[[b, c]];
                }
            }
            e[[r, c]] = acc;
        }
    }
    pull_back_loss_two(&e, eta_m, dim)
}
