//! Exact algebra of anti-normally ordered characteristic functions.
//!
//! Every state in this crate is represented as a finite sum of Gaussian terms
//! over a list of named optical/atomic modes,
//!
//! ```text
//! chi(zeta) = sum_t  c_t * exp(-zeta' Q_t zeta) * prod_k (zeta' P_tk zeta)
//! ```
//!
//! with `zeta` the column vector of phase-space variables (one complex
//! variable per mode), `Q_t` a Hermitian positive-definite exponent matrix,
//! and each `P_tk` a Hermitian quadratic-form factor.  Complex coefficients
//! are kept internally (intermediate algebra produces them); anything
//! reported as a probability is checked to be real before its imaginary part
//! is discarded.
//!
//! The class is closed under the operations a heralded-repeater calculation
//! needs: tensor products, linear substitutions of the arguments (lossy
//! interferometers act this way on characteristic functions), multiplication
//! by Gaussian envelopes, Gaussian moment integrals against detector factors,
//! and partial conditioning (integrating out measured modes while the
//! surviving modes stay as free arguments).

mod integrate;
mod wick;

pub use integrate::{expand_factors, FactorBranch};
pub use wick::wick_expectation;

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::mat;

/// Hardcap on total quadratic forms per moment integral.  Repeated forms
/// (powers) are grouped and cost only polynomially, so the total may exceed
/// the distinct-form cap; anything beyond this is a logic error.
pub const MAX_FORMS: usize = 24;

/// Hardcap on *distinct* quadratic forms per moment integral; the Wick sum
/// over cycle partitions grows factorially in this number.
pub const MAX_DISTINCT_FORMS: usize = 12;

/// Relative tolerance used by internal structural checks (Hermiticity,
/// merge comparisons).
pub const STRUCT_TOL: f64 = 1e-10;

/// A Hermitian quadratic form `zeta' P zeta`.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    matrix: Array2<C64>,
}

impl QuadraticForm {
    /// Wraps a Hermitian matrix; rejects non-Hermitian input.
    pub fn new(matrix: Array2<C64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "quadratic form must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        mat::require_hermitian(&matrix, STRUCT_TOL)?;
        Ok(Self { matrix: mat::hermitize(&matrix) })
    }

    /// Rank-one form `|u' zeta|^2` from a row of coefficients `u`.
    pub fn rank_one(u: &[C64]) -> Self {
        let n = u.len();
        let mut m = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = u[i] * u[j].conj();
            }
        }
        Self { matrix: m }
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    /// Value `zeta' P zeta` at a phase-space point.
    pub fn value(&self, zeta: &[C64]) -> C64 {
        mat::quad(zeta, &self.matrix)
    }
}

/// One Gaussian term of a characteristic function.
#[derive(Debug, Clone)]
pub struct GaussianTerm {
    pub coeff: C64,
    pub exponent: Array2<C64>,
    pub forms: Vec<QuadraticForm>,
}

impl GaussianTerm {
    pub fn new(coeff: C64, exponent: Array2<C64>, forms: Vec<QuadraticForm>) -> Result<Self> {
        if exponent.nrows() != exponent.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "exponent must be square, got {}x{}",
                exponent.nrows(),
                exponent.ncols()
            )));
        }
        mat::require_hermitian(&exponent, STRUCT_TOL)?;
        let n = exponent.nrows();
        for f in &forms {
            if f.matrix().nrows() != n {
                return Err(Error::DimensionMismatch(format!(
                    "form is {}x{} but exponent is {}x{}",
                    f.matrix().nrows(),
                    f.matrix().ncols(),
                    n,
                    n
                )));
            }
        }
        Ok(Self { coeff, exponent: mat::hermitize(&exponent), forms })
    }

    fn value(&self, zeta: &[C64]) -> C64 {
        let q = mat::quad(zeta, &self.exponent);
        let mut v = self.coeff * (-q).exp();
        for f in &self.forms {
            v *= f.value(zeta);
        }
        v
    }
}

/// How one measured mode (or Bell pair of modes) enters a moment integral.
///
/// These are exactly the scalar kernels that arise when a number-basis
/// measurement operator is traced against the displacement-operator
/// resolution of the state:
///
/// * `Unit(m)` — vacuum projection of mode `m`; kernel 1.
/// * `OneMinusAbsSq(m)` — single-photon projection; kernel `1 - |zeta_m|^2`.
/// * `Delta(m)` — trace over mode `m` (no measurement); kernel `pi
///   delta^2(zeta_m)`, i.e. the mode is pinned to zero and dropped from the
///   integral.
/// * `DeltaMinusOne(m)` — click of a non-photon-number-resolving detector
///   (`I - |0><0|`); kernel `pi delta^2(zeta_m) - 1`.
/// * `BellProjector { a, b, sign }` — projection of the mode pair onto the
///   single-excitation Bell state with relative phase `sign`; kernel
///   `1 - |zeta_a + sign * zeta_b|^2 / 2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MeasurementFactor {
    Unit(String),
    OneMinusAbsSq(String),
    Delta(String),
    DeltaMinusOne(String),
    BellProjector { a: String, b: String, sign: i8 },
}

impl MeasurementFactor {
    pub fn unit(m: &str) -> Self {
        Self::Unit(m.to_string())
    }
    pub fn one_minus_abs_sq(m: &str) -> Self {
        Self::OneMinusAbsSq(m.to_string())
    }
    pub fn delta(m: &str) -> Self {
        Self::Delta(m.to_string())
    }
    pub fn delta_minus_one(m: &str) -> Self {
        Self::DeltaMinusOne(m.to_string())
    }
    pub fn bell(a: &str, b: &str, sign: i8) -> Self {
        assert!(sign == 1 || sign == -1, "Bell sign must be +1 or -1");
        Self::BellProjector { a: a.to_string(), b: b.to_string(), sign }
    }

    /// Modes this factor covers.
    pub fn modes(&self) -> Vec<&str> {
        match self {
            Self::Unit(m) | Self::OneMinusAbsSq(m) | Self::Delta(m) | Self::DeltaMinusOne(m) => {
                vec![m]
            }
            Self::BellProjector { a, b, .. } => vec![a, b],
        }
    }
}

/// A characteristic function: named modes plus Gaussian terms.
#[derive(Debug, Clone)]
pub struct CharFun {
    modes: Vec<String>,
    terms: Vec<GaussianTerm>,
}

impl CharFun {
    pub fn new(modes: Vec<String>, terms: Vec<GaussianTerm>) -> Result<Self> {
        for (i, m) in modes.iter().enumerate() {
            if modes[..i].contains(m) {
                return Err(Error::DuplicateMode(m.clone()));
            }
        }
        let n = modes.len();
        for t in &terms {
            if t.exponent.nrows() != n {
                return Err(Error::DimensionMismatch(format!(
                    "term exponent is {}x{} but there are {} modes",
                    t.exponent.nrows(),
                    t.exponent.ncols(),
                    n
                )));
            }
        }
        Ok(Self { modes, terms })
    }

    /// Vacuum state of the given modes: `exp(-|zeta|^2)` per mode.
    pub fn vacuum(modes: &[&str]) -> Self {
        let n = modes.len();
        let term = GaussianTerm {
            coeff: C64::new(1.0, 0.0),
            exponent: Array2::eye(n),
            forms: Vec::new(),
        };
        Self { modes: modes.iter().map(|s| s.to_string()).collect(), terms: vec![term] }
    }

    pub fn modes(&self) -> &[String] {
        &self.modes
    }

    pub fn terms(&self) -> &[GaussianTerm] {
        &self.terms
    }

    pub fn mode_index(&self, label: &str) -> Result<usize> {
        self.modes
            .iter()
            .position(|m| m == label)
            .ok_or_else(|| Error::UnknownMode(label.to_string()))
    }

    /// Pointwise value `chi(zeta)`.
    pub fn evaluate(&self, zeta: &[C64]) -> C64 {
        assert_eq!(zeta.len(), self.modes.len(), "evaluation point has wrong arity");
        self.terms.iter().map(|t| t.value(zeta)).sum()
    }

    /// `chi(0)`, which is 1 for a normalized state.
    pub fn value_at_zero(&self) -> C64 {
        self.terms.iter().filter(|t| t.forms.is_empty()).map(|t| t.coeff).sum()
    }

    /// Errors unless `chi(0) = 1` within `tol`.
    pub fn require_normalized(&self, tol: f64) -> Result<()> {
        let v = self.value_at_zero();
        if (v - C64::new(1.0, 0.0)).norm() > tol {
            return Err(Error::BadWeight { value: format!("chi(0) = {v}") });
        }
        Ok(())
    }

    /// Tensor product; mode lists are concatenated and must stay disjoint.
    pub fn tensor(&self, other: &CharFun) -> Result<CharFun> {
        let mut modes = self.modes.clone();
        for m in &other.modes {
            if modes.contains(m) {
                return Err(Error::DuplicateMode(m.clone()));
            }
            modes.push(m.clone());
        }
        let (na, nb) = (self.modes.len(), other.modes.len());
        let n = na + nb;
        let pad_a = |m: &Array2<C64>| {
            let mut out = Array2::zeros((n, n));
            for i in 0..na {
                for j in 0..na {
                    out[(i, j)] = m[(i, j)];
                }
            }
            out
        };
        let pad_b = |m: &Array2<C64>| {
            let mut out = Array2::zeros((n, n));
            for i in 0..nb {
                for j in 0..nb {
                    out[(na + i, na + j)] = m[(i, j)];
                }
            }
            out
        };
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for ta in &self.terms {
            for tb in &other.terms {
                let mut exponent = pad_a(&ta.exponent);
                exponent += &pad_b(&tb.exponent);
                let mut forms: Vec<QuadraticForm> = Vec::new();
                forms.extend(ta.forms.iter().map(|f| QuadraticForm { matrix: pad_a(f.matrix()) }));
                forms.extend(tb.forms.iter().map(|f| QuadraticForm { matrix: pad_b(f.matrix()) }));
                terms.push(GaussianTerm { coeff: ta.coeff * tb.coeff, exponent, forms });
            }
        }
        CharFun::new(modes, terms)
    }

    /// Replaces the arguments by a linear map of fresh variables:
    /// `chi_new(zeta_new) = chi_old(L zeta_new)`, where `L` is
    /// `(old modes) x (new modes)`.
    ///
    /// Exponents and forms transform by congruence `M -> L† M L`, which keeps
    /// them Hermitian for any complex `L`.
    pub fn substitute_linear(&self, l: &Array2<C64>, new_modes: &[&str]) -> Result<CharFun> {
        let n_old = self.modes.len();
        let n_new = new_modes.len();
        if l.dim() != (n_old, n_new) {
            return Err(Error::DimensionMismatch(format!(
                "substitution matrix is {}x{}, expected {}x{}",
                l.nrows(),
                l.ncols(),
                n_old,
                n_new
            )));
        }
        let ldag = mat::dagger(l);
        let map = |m: &Array2<C64>| ldag.dot(m).dot(l);
        let terms = self
            .terms
            .iter()
            .map(|t| GaussianTerm {
                coeff: t.coeff,
                exponent: mat::hermitize(&map(&t.exponent)),
                forms: t
                    .forms
                    .iter()
                    .map(|f| QuadraticForm { matrix: mat::hermitize(&map(f.matrix())) })
                    .collect(),
            })
            .collect();
        CharFun::new(new_modes.iter().map(|s| s.to_string()).collect(), terms)
    }

    /// Multiplies by a Gaussian envelope `exp(-zeta' G zeta)`; `G` must be
    /// Hermitian positive semidefinite (loss envelopes always are).
    pub fn multiply_gaussian_factor(&self, g: &Array2<C64>) -> Result<CharFun> {
        if g.dim() != (self.modes.len(), self.modes.len()) {
            return Err(Error::DimensionMismatch(format!(
                "envelope is {}x{}, expected {} modes",
                g.nrows(),
                g.ncols(),
                self.modes.len()
            )));
        }
        mat::require_psd(g, STRUCT_TOL)?;
        let terms = self
            .terms
            .iter()
            .map(|t| GaussianTerm {
                coeff: t.coeff,
                exponent: mat::hermitize(&(&t.exponent + g)),
                forms: t.forms.clone(),
            })
            .collect();
        CharFun::new(self.modes.clone(), terms)
    }

    /// Renames modes (same order, fresh labels).
    pub fn relabel(&self, new_modes: &[&str]) -> Result<CharFun> {
        if new_modes.len() != self.modes.len() {
            return Err(Error::DimensionMismatch(format!(
                "relabel got {} labels for {} modes",
                new_modes.len(),
                self.modes.len()
            )));
        }
        CharFun::new(
            new_modes.iter().map(|s| s.to_string()).collect(),
            self.terms.clone(),
        )
    }

    /// Merges terms with identical exponents and (canonicalized) form lists,
    /// drops exact zeros.  Keeps the representation small after conditioning.
    pub fn consolidate(&mut self) {
        let mut canon: Vec<CanonTerm> = Vec::new();
        'outer: for t in &self.terms {
            let Some(ct) = CanonTerm::from_term(t) else {
                continue; // a form is identically zero -> term vanishes
            };
            for existing in canon.iter_mut() {
                if existing.matches(&ct) {
                    existing.coeff += ct.coeff;
                    continue 'outer;
                }
            }
            canon.push(ct);
        }
        let scale = canon.iter().map(|c| c.coeff.norm()).fold(0.0, f64::max);
        let cutoff = scale * 1e-18;
        self.terms = canon
            .into_iter()
            .filter(|c| c.coeff.norm() > cutoff)
            .map(|c| GaussianTerm {
                coeff: c.coeff,
                exponent: c.exponent,
                forms: c.forms.into_iter().map(|m| QuadraticForm { matrix: m }).collect(),
            })
            .collect();
    }

    /// Drops terms with coefficients below `tol` in magnitude.
    ///
    /// Meant for normalized states written in the series representation,
    /// where coefficients shrink geometrically with the number of attached
    /// forms: pruning keeps tensor products of several such states from
    /// accumulating high-degree terms that cost Wick time (and would
    /// eventually exceed [`MAX_FORMS`]) while contributing nothing at
    /// working precision.
    pub fn prune_negligible(&mut self, tol: f64) {
        if self.terms.len() > 1 {
            self.terms.retain(|t| t.coeff.norm() >= tol);
        }
    }
}

/// Term with unit-Frobenius, sign-fixed, sorted forms, for merging.
struct CanonTerm {
    coeff: C64,
    exponent: Array2<C64>,
    forms: Vec<Array2<C64>>,
}

impl CanonTerm {
    fn from_term(t: &GaussianTerm) -> Option<Self> {
        let mut coeff = t.coeff;
        if coeff == C64::new(0.0, 0.0) {
            return None;
        }
        let mut forms = Vec::with_capacity(t.forms.len());
        for f in &t.forms {
            let mut m = f.matrix().clone();
            let norm = mat::frobenius(&m);
            if norm == 0.0 {
                return None;
            }
            coeff *= C64::new(norm, 0.0);
            m.mapv_inplace(|z| z / norm);
            // Fix the overall +-1 ambiguity of a real rescaling: make the
            // largest-magnitude entry point into the right half plane.
            let mut pivot = C64::new(0.0, 0.0);
            for z in m.iter() {
                if z.norm() > pivot.norm() {
                    pivot = *z;
                }
            }
            let flip = pivot.re < -1e-14 || (pivot.re.abs() <= 1e-14 && pivot.im < 0.0);
            if flip {
                m.mapv_inplace(|z| -z);
                coeff = -coeff;
            }
            forms.push(m);
        }
        forms.sort_by(|a, b| {
            for (x, y) in a.iter().zip(b.iter()) {
                match x.re.partial_cmp(&y.re).unwrap().then(x.im.partial_cmp(&y.im).unwrap()) {
                    std::cmp::Ordering::Equal => continue,
                    other => return other,
                }
            }
            std::cmp::Ordering::Equal
        });
        Some(Self { coeff, exponent: t.exponent.clone(), forms })
    }

    fn matches(&self, other: &CanonTerm) -> bool {
        if self.forms.len() != other.forms.len() {
            return false;
        }
        let close = |a: &Array2<C64>, b: &Array2<C64>| {
            a.iter().zip(b.iter()).all(|(x, y)| (x - y).norm() <= 1e-12)
        };
        if !close(&self.exponent, &other.exponent) {
            return false;
        }
        self.forms.iter().zip(other.forms.iter()).all(|(a, b)| close(a, b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{c, rand_point, rng, C};

    /// Scalar re-implementation of `evaluate` with explicit loops, used as an
    /// independent check of the vectorized path.
    fn evaluate_by_hand(cf: &CharFun, zeta: &[C64]) -> C64 {
        let n = zeta.len();
        let mut total = C(0.0);
        for t in cf.terms() {
            let mut q = c(0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    q += zeta[i].conj() * t.exponent[(i, j)] * zeta[j];
                }
            }
            let mut v = t.coeff * (-q).exp();
            for f in &t.forms {
                let mut p = c(0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        p += zeta[i].conj() * f.matrix()[(i, j)] * zeta[j];
                    }
                }
                v *= p;
            }
            total += v;
        }
        total
    }

    fn sample_state() -> CharFun {
        // Two modes, two terms, one with a Bell-type rank-one form.
        let bell = QuadraticForm::rank_one(&[C(1.0), C(-1.0)]);
        let q1 = Array2::eye(2) * C(1.3);
        let mut q2 = Array2::eye(2) * C(0.8);
        q2[(0, 1)] = c(0.1, 0.2);
        q2[(1, 0)] = c(0.1, -0.2);
        CharFun::new(
            vec!["A".into(), "B".into()],
            vec![
                GaussianTerm::new(C(0.75), q1, vec![]).unwrap(),
                GaussianTerm::new(c(0.25, 0.0), q2, vec![bell]).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn evaluate_matches_scalar_reimplementation() {
        let cf = sample_state();
        let mut r = rng(13);
        for _ in 0..40 {
            let z = rand_point(&mut r, 2);
            let a = cf.evaluate(&z);
            let b = evaluate_by_hand(&cf, &z);
            assert!((a - b).norm() < 1e-14, "evaluate mismatch: {a} vs {b}");
        }
    }

    #[test]
    fn value_at_zero_ignores_form_terms() {
        let cf = sample_state();
        assert!((cf.value_at_zero() - C(0.75)).norm() < 1e-15);
        let z = vec![C(0.0); 2];
        assert!((cf.evaluate(&z) - C(0.75)).norm() < 1e-15);
    }

    #[test]
    fn tensor_multiplies_pointwise() {
        let a = sample_state();
        let b = CharFun::vacuum(&["C"]);
        let ab = a.tensor(&b).unwrap();
        assert_eq!(ab.modes(), &["A", "B", "C"]);
        assert_eq!(ab.terms().len(), a.terms().len() * b.terms().len());
        let mut r = rng(7);
        for _ in 0..20 {
            let z = rand_point(&mut r, 3);
            let va = a.evaluate(&z[..2]);
            let vb = b.evaluate(&z[2..]);
            assert!((ab.evaluate(&z) - va * vb).norm() < 1e-13);
        }
    }

    #[test]
    fn tensor_rejects_mode_collision() {
        let a = sample_state();
        let b = CharFun::vacuum(&["B"]);
        assert!(matches!(a.tensor(&b), Err(Error::DuplicateMode(_))));
    }

    #[test]
    fn substitute_identity_is_identity() {
        let cf = sample_state();
        let l = Array2::eye(2);
        let out = cf.substitute_linear(&l, &["X", "Y"]).unwrap();
        let mut r = rng(5);
        for _ in 0..10 {
            let z = rand_point(&mut r, 2);
            assert!((out.evaluate(&z) - cf.evaluate(&z)).norm() < 1e-14);
        }
    }

    #[test]
    fn substitute_evaluates_at_mapped_point() {
        let cf = sample_state();
        // A lossy 50/50-style mixing of two fresh variables.
        let s = (0.35_f64 / 2.0).sqrt();
        let mut l = Array2::zeros((2, 2));
        l[(0, 0)] = C(-s);
        l[(0, 1)] = C(s);
        l[(1, 0)] = C(s);
        l[(1, 1)] = C(s);
        let out = cf.substitute_linear(&l, &["X", "Y"]).unwrap();
        let mut r = rng(29);
        for _ in 0..20 {
            let z = rand_point(&mut r, 2);
            let mapped = vec![
                l[(0, 0)] * z[0] + l[(0, 1)] * z[1],
                l[(1, 0)] * z[0] + l[(1, 1)] * z[1],
            ];
            assert!((out.evaluate(&z) - cf.evaluate(&mapped)).norm() < 1e-13);
        }
    }

    #[test]
    fn gaussian_envelope_adds_to_exponent() {
        let cf = sample_state();
        let mut g = Array2::zeros((2, 2));
        g[(0, 0)] = C(0.65);
        g[(1, 1)] = C(0.65);
        let out = cf.multiply_gaussian_factor(&g).unwrap();
        let mut r = rng(11);
        for _ in 0..20 {
            let z = rand_point(&mut r, 2);
            let envelope = (-(z[0].norm_sqr() + z[1].norm_sqr()) * 0.65).exp();
            assert!((out.evaluate(&z) - cf.evaluate(&z) * envelope).norm() < 1e-13);
        }
    }

    #[test]
    fn envelope_must_be_psd() {
        let cf = sample_state();
        let mut g = Array2::zeros((2, 2));
        g[(0, 0)] = C(-0.1);
        assert!(cf.multiply_gaussian_factor(&g).is_err());
    }

    #[test]
    fn consolidate_merges_duplicate_terms() {
        let q = Array2::eye(2) * C(1.5);
        let f = QuadraticForm::rank_one(&[C(1.0), C(1.0)]);
        // Same exponent & form, with the second form scaled by -2 (so its
        // canonical representative matches after sign/scale normalization).
        let f_scaled = QuadraticForm::new(f.matrix() * C(-2.0)).unwrap();
        let mut cf = CharFun::new(
            vec!["A".into(), "B".into()],
            vec![
                GaussianTerm::new(C(0.5), q.clone(), vec![f.clone()]).unwrap(),
                GaussianTerm::new(C(0.25), q.clone(), vec![f_scaled]).unwrap(),
                GaussianTerm::new(C(0.1), q.clone(), vec![]).unwrap(),
            ],
        )
        .unwrap();
        cf.consolidate();
        // 0.5 * f and 0.25 * (-2 f) cancel exactly after canonicalization,
        // so only the formless term survives.
        assert_eq!(cf.terms().len(), 1);
        let mut r = rng(3);
        for _ in 0..10 {
            let z = rand_point(&mut r, 2);
            let expect = C(0.1) * (-mat::quad(&z, &q)).exp();
            assert!((cf.evaluate(&z) - expect).norm() < 1e-14);
        }
    }

    #[test]
    fn quadratic_form_rejects_non_hermitian() {
        let mut m = Array2::<C64>::zeros((2, 2));
        m[(0, 1)] = C(1.0);
        assert!(QuadraticForm::new(m).is_err());
    }
}
