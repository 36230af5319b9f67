//! Moment integrals and partial conditioning of characteristic functions.
//!
//! A moment integral is `int prod_m d^2 zeta_m / pi * chi(zeta) * K(zeta)`
//! where the kernel `K` is a product of [`MeasurementFactor`]s.  Factors are
//! first expanded distributively into polynomial branches (each branch: a
//! scalar multiplier, a set of modes pinned to zero by delta kernels, and a
//! list of extra quadratic forms); each Gaussian term is then integrated in
//! closed form with the Wick cycle sum over the covariance `C = Q^{-1}`.
//!
//! Partial conditioning integrates only a measured subset of modes while the
//! remaining modes stay symbolic.  Completing the square in the measured
//! block gives a Gaussian with mean linear in the surviving variables; the
//! polynomial factors then integrate by a non-central Wick sum organized by
//! set partitions into closed cycles (scalars) and open chains (fresh
//! quadratic forms in the surviving variables).  Non-Hermitian chain matrices
//! are split as `G = H+ + i H-` with Hermitian `H+`, `H-` so the result stays
//! inside the representation; the imaginary pieces cancel pairwise when terms
//! are consolidated.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::gaussian::{wick_expectation, CharFun, GaussianTerm, MeasurementFactor, QuadraticForm};
use crate::mat;

/// Upper bound on quadratic forms entering one conditioning call.
/// Bitwise-identical forms are grouped, so the factorial cycle/chain growth
/// only applies to *distinct* forms, which get their own tighter bound.
pub const MAX_CONDITION_FORMS: usize = 18;

/// Upper bound on *distinct* quadratic forms in one conditioning call; the
/// cycle/chain partition count grows factorially in this number.
pub const MAX_CONDITION_DISTINCT: usize = 8;

/// One distributive branch of an expanded measurement kernel.
#[derive(Debug, Clone)]
pub struct FactorBranch {
    /// Scalar multiplier collected from the expansion.
    pub mult: C64,
    /// Mode indices pinned to zero and removed (delta kernels).
    pub delta: Vec<usize>,
    /// Extra quadratic forms, in the full mode space of the state.
    pub forms: Vec<Array2<C64>>,
}

/// Expands measurement factors into branches and reports which modes they
/// cover.  Every covered mode must be covered exactly once; with
/// `require_full` the factors must cover every mode of the state.
pub fn expand_factors(
    cf: &CharFun,
    factors: &[MeasurementFactor],
    require_full: bool,
) -> Result<(Vec<usize>, Vec<FactorBranch>)> {
    let n = cf.modes().len();
    let mut coverage = vec![0usize; n];
    let mut covered: Vec<usize> = Vec::new();
    for f in factors {
        for m in f.modes() {
            let idx = cf.mode_index(m)?;
            coverage[idx] += 1;
            covered.push(idx);
        }
    }
    for (idx, &count) in coverage.iter().enumerate() {
        if count > 1 || (require_full && count == 0) {
            return Err(Error::BadFactorCoverage(cf.modes()[idx].clone(), count));
        }
    }
    covered.sort_unstable();

    let mut branches = vec![FactorBranch { mult: C64::new(1.0, 0.0), delta: vec![], forms: vec![] }];
    for f in factors {
        branches = match f {
            MeasurementFactor::Unit(_) => branches,
            MeasurementFactor::OneMinusAbsSq(m) => {
                let idx = cf.mode_index(m)?;
                let mut e = Array2::zeros((n, n));
                e[(idx, idx)] = C64::new(1.0, 0.0);
                split(branches, None, Some((C64::new(-1.0, 0.0), e)))
            }
            MeasurementFactor::Delta(m) => {
                let idx = cf.mode_index(m)?;
                for b in branches.iter_mut() {
                    b.delta.push(idx);
                }
                branches
            }
            MeasurementFactor::DeltaMinusOne(m) => {
                let idx = cf.mode_index(m)?;
                let mut out = Vec::with_capacity(branches.len() * 2);
                for b in branches {
                    let mut with_delta = b.clone();
                    with_delta.delta.push(idx);
                    out.push(with_delta);
                    let mut minus_one = b;
                    minus_one.mult = -minus_one.mult;
                    out.push(minus_one);
                }
                out
            }
            MeasurementFactor::BellProjector { a, b: bm, sign } => {
                let ia = cf.mode_index(a)?;
                let ib = cf.mode_index(bm)?;
                let mut u = vec![C64::new(0.0, 0.0); n];
                u[ia] = C64::new(1.0, 0.0);
                u[ib] = C64::new(*sign as f64, 0.0);
                let bell = QuadraticForm::rank_one(&u);
                split(branches, None, Some((C64::new(-0.5, 0.0), bell.matrix().clone())))
            }
        };
    }
    Ok((covered, branches))
}

/// `branches * (1 + extra)`: duplicates each branch, one copy unchanged and
/// one with the extra (coefficient, form) appended.
fn split(
    branches: Vec<FactorBranch>,
    _unused: Option<()>,
    extra: Option<(C64, Array2<C64>)>,
) -> Vec<FactorBranch> {
    let Some((coeff, form)) = extra else {
        return branches;
    };
    let mut out = Vec::with_capacity(branches.len() * 2);
    for b in branches {
        out.push(b.clone());
        let mut with_form = b;
        with_form.mult *= coeff;
        with_form.forms.push(form.clone());
        out.push(with_form);
    }
    out
}

fn restrict(m: &Array2<C64>, keep: &[usize]) -> Array2<C64> {
    let k = keep.len();
    let mut out = Array2::zeros((k, k));
    for (i, &a) in keep.iter().enumerate() {
        for (j, &b) in keep.iter().enumerate() {
            out[(i, j)] = m[(a, b)];
        }
    }
    out
}

fn is_exactly_zero(m: &Array2<C64>) -> bool {
    m.iter().all(|z| z.re == 0.0 && z.im == 0.0)
}

impl CharFun {
    /// Full moment integral of the state against a measurement kernel; the
    /// factors must cover every mode exactly once.
    pub fn moment_integral(&self, factors: &[MeasurementFactor]) -> Result<C64> {
        let (_, branches) = expand_factors(self, factors, true)?;
        let n = self.modes().len();
        let mut total = C64::new(0.0, 0.0);
        for term in self.terms() {
            for branch in &branches {
                total += integrate_term(term, branch, n)?;
            }
        }
        Ok(total)
    }

    /// Moment integral that must be real: checks the imaginary part against
    /// `1e-10` (relative to scale) and returns the real part.
    pub fn moment_integral_real(&self, factors: &[MeasurementFactor]) -> Result<f64> {
        let v = self.moment_integral(factors)?;
        let scale = v.re.abs().max(1.0);
        if v.im.abs() > 1e-10 * scale {
            return Err(Error::NotReal { re: v.re, im: v.im });
        }
        Ok(v.re)
    }

    /// Low-level integral: every mode integrated, the listed modes pinned by
    /// delta kernels first, and arbitrary (not necessarily Hermitian)
    /// quadratic forms inserted under the integral.  Used by matrix-element
    /// reconstructions and tests; the measurement-factor API wraps this.
    pub fn integrate_with_forms(
        &self,
        delta_modes: &[&str],
        forms: &[Array2<C64>],
    ) -> Result<C64> {
        let n = self.modes().len();
        let mut delta = Vec::with_capacity(delta_modes.len());
        for m in delta_modes {
            delta.push(self.mode_index(m)?);
        }
        for f in forms {
            if f.dim() != (n, n) {
                return Err(Error::DimensionMismatch(format!(
                    "inserted form is {}x{}, state has {} modes",
                    f.nrows(),
                    f.ncols(),
                    n
                )));
            }
        }
        let branch = FactorBranch { mult: C64::new(1.0, 0.0), delta, forms: forms.to_vec() };
        let mut total = C64::new(0.0, 0.0);
        for term in self.terms() {
            total += integrate_term(term, &branch, n)?;
        }
        Ok(total)
    }

    /// Integrates the measured modes (those covered by `factors`) against the
    /// kernel, leaving the uncovered modes free.  Returns the conditioned,
    /// normalized state over the remaining modes together with the
    /// normalization weight (the kernel's full moment, i.e. the same number
    /// `moment_integral` gives when the remaining modes carry delta factors).
    pub fn partial_condition(
        &self,
        factors: &[MeasurementFactor],
    ) -> Result<(CharFun, f64)> {
        let (covered, branches) = expand_factors(self, factors, false)?;
        let n = self.modes().len();
        let remaining: Vec<usize> = (0..n).filter(|i| !covered.contains(i)).collect();
        let rem_labels: Vec<String> =
            remaining.iter().map(|&i| self.modes()[i].clone()).collect();

        let mut out_terms: Vec<GaussianTerm> = Vec::new();
        for term in self.terms() {
            for branch in &branches {
                condition_term(term, branch, &covered, &remaining, n, &mut out_terms)?;
            }
        }
        let mut cf = CharFun::new(rem_labels, out_terms)?;
        cf.consolidate();
        let w = cf.value_at_zero();
        if w.im.abs() > 1e-10 * w.re.abs().max(1e-30) || !(w.re > 0.0) {
            return Err(Error::BadWeight { value: format!("{w}") });
        }
        let weight = w.re;
        let inv = C64::new(1.0 / weight, 0.0);
        let terms = cf
            .terms()
            .iter()
            .map(|t| GaussianTerm {
                coeff: t.coeff * inv,
                exponent: t.exponent.clone(),
                forms: t.forms.clone(),
            })
            .collect();
        Ok((CharFun::new(cf.modes().to_vec(), terms)?, weight))
    }
}

/// Closed-form integral of a single Gaussian term against one branch.
fn integrate_term(term: &GaussianTerm, branch: &FactorBranch, n: usize) -> Result<C64> {
    let keep: Vec<usize> = (0..n).filter(|i| !branch.delta.contains(i)).collect();
    let q = restrict(&term.exponent, &keep);
    let mut forms: Vec<Array2<C64>> = Vec::with_capacity(term.forms.len() + branch.forms.len());
    for f in term.forms.iter().map(|f| f.matrix()).chain(branch.forms.iter()) {
        let r = restrict(f, &keep);
        if is_exactly_zero(&r) {
            return Ok(C64::new(0.0, 0.0));
        }
        forms.push(r);
    }
    let (det, cov) = mat::hpd_det_inverse(&q)?;
    let refs: Vec<&Array2<C64>> = forms.iter().collect();
    let wick = wick_expectation(&cov, &refs)?;
    Ok(term.coeff * branch.mult * wick / det)
}

/// Conditions one Gaussian term on one branch, pushing the resulting terms
/// over the remaining modes into `out`.
fn condition_term(
    term: &GaussianTerm,
    branch: &FactorBranch,
    covered: &[usize],
    remaining: &[usize],
    n: usize,
    out: &mut Vec<GaussianTerm>,
) -> Result<()> {
    let keep: Vec<usize> = (0..n).filter(|i| !branch.delta.contains(i)).collect();
    let q = restrict(&term.exponent, &keep);
    let mut forms: Vec<Array2<C64>> = Vec::with_capacity(term.forms.len() + branch.forms.len());
    for f in term.forms.iter().map(|f| f.matrix()).chain(branch.forms.iter()) {
        let r = restrict(f, &keep);
        if is_exactly_zero(&r) {
            return Ok(());
        }
        forms.push(r);
    }
    if forms.len() > MAX_CONDITION_FORMS {
        return Err(Error::TooManyForms { count: forms.len(), max: MAX_CONDITION_FORMS });
    }
    let form_refs: Vec<&Array2<C64>> = forms.iter().collect();
    let (form_types, form_counts) = crate::gaussian::wick::group_identical(&form_refs);
    if form_types.len() > MAX_CONDITION_DISTINCT {
        return Err(Error::TooManyForms { count: form_types.len(), max: MAX_CONDITION_DISTINCT });
    }
    // Positions, inside `keep`, of measured and remaining modes.
    let meas_pos: Vec<usize> = keep
        .iter()
        .enumerate()
        .filter(|(_, &g)| covered.contains(&g))
        .map(|(p, _)| p)
        .collect();
    let rem_pos: Vec<usize> = keep
        .iter()
        .enumerate()
        .filter(|(_, &g)| remaining.contains(&g))
        .map(|(p, _)| p)
        .collect();
    let r = rem_pos.len();
    let coeff = term.coeff * branch.mult;

    if meas_pos.is_empty() {
        // Every measured mode was pinned by a delta: nothing left to
        // integrate, the restricted term already lives on the remaining modes.
        let hs: Result<Vec<QuadraticForm>> =
            forms.into_iter().map(QuadraticForm::new).collect();
        out.push(GaussianTerm::new(coeff, q, hs?)?);
        return Ok(());
    }

    let sub = |rows: &[usize], cols: &[usize]| {
        let mut m = Array2::zeros((rows.len(), cols.len()));
        for (i, &a) in rows.iter().enumerate() {
            for (j, &b) in cols.iter().enumerate() {
                m[(i, j)] = q[(a, b)];
            }
        }
        m
    };
    let q_mm = sub(&meas_pos, &meas_pos);
    let q_mr = sub(&meas_pos, &rem_pos);
    let q_rm = sub(&rem_pos, &meas_pos);
    let q_rr = sub(&rem_pos, &rem_pos);
    let (det_mm, c_mm) = mat::hpd_det_inverse(&q_mm)?;
    let w = c_mm.dot(&q_mr).mapv(|z| -z); // measured-mode mean = W * zeta_r
    let schur = mat::hermitize(&(&q_rr - &q_rm.dot(&c_mm).dot(&q_mr)));

    // Embed the conditioning geometry in the kept space:
    //   T: remaining -> kept (identity on remaining slots, W on measured),
    //   Sigma: covariance of the fluctuation (C_mm on the measured block).
    let nk = keep.len();
    let mut t: Array2<C64> = Array2::zeros((nk, r));
    for (i, &p) in rem_pos.iter().enumerate() {
        t[(p, i)] = C64::new(1.0, 0.0);
    }
    for (a, &p) in meas_pos.iter().enumerate() {
        for i in 0..r {
            t[(p, i)] = w[(a, i)];
        }
    }
    let mut sigma: Array2<C64> = Array2::zeros((nk, nk));
    for (a, &pa) in meas_pos.iter().enumerate() {
        for (b, &pb) in meas_pos.iter().enumerate() {
            sigma[(pa, pb)] = c_mm[(a, b)];
        }
    }

    let base = coeff / det_mm;
    let structures = noncentral_structures(&form_types, &form_counts, &t, &sigma);
    for (scalar, chains) in structures {
        // Split each chain matrix into Hermitian components and distribute.
        let mut partial: Vec<(C64, Vec<Array2<C64>>)> = vec![(base * scalar, Vec::new())];
        for g in &chains {
            let gd = mat::dagger(g);
            let h_plus = (g + &gd).mapv(|z| 0.5 * z);
            let h_minus = (g - &gd).mapv(|z| z / C64::new(0.0, 2.0));
            let scale = mat::frobenius(g).max(1e-300);
            let mut options: Vec<(C64, &Array2<C64>)> = Vec::new();
            if mat::frobenius(&h_plus) > 1e-15 * scale {
                options.push((C64::new(1.0, 0.0), &h_plus));
            }
            if mat::frobenius(&h_minus) > 1e-15 * scale {
                options.push((C64::new(0.0, 1.0), &h_minus));
            }
            let mut next = Vec::with_capacity(partial.len() * options.len());
            for (pc, pf) in &partial {
                for (oc, of) in &options {
                    let mut fs = pf.clone();
                    fs.push((*of).clone());
                    next.push((pc * oc, fs));
                }
            }
            partial = next;
            if partial.is_empty() {
                break;
            }
        }
        for (pc, pf) in partial {
            let hs: Result<Vec<QuadraticForm>> = pf.into_iter().map(QuadraticForm::new).collect();
            out.push(GaussianTerm::new(pc, schur.clone(), hs?)?);
        }
    }
    Ok(())
}

/// Working set for the non-central structure enumeration over *grouped*
/// forms: per distinct form type `t` the precomputed step matrices, plus an
/// interner for chain matrices (keyed by type sequence) and a memo table
/// keyed by residual count vectors.
struct NoncentralCtx {
    /// `A_t Sigma` (cycle steps).
    d: Vec<Array2<C64>>,
    /// `Sigma A_t` (chain interior steps).
    sd: Vec<Array2<C64>>,
    /// `T† A_t` (chain heads).
    td: Vec<Array2<C64>>,
    t: Array2<C64>,
    chain_mats: Vec<Array2<C64>>,
    chain_ids: HashMap<Vec<u8>, u32>,
    memo: HashMap<u64, Rc<Vec<(C64, Vec<u32>)>>>,
}

/// Enumerates the non-central Wick structures of a multiset of forms (given
/// as distinct types with multiplicities): every partition into cyclically
/// ordered blocks ("cycles", contributing a scalar trace) and linearly
/// ordered blocks ("chains", contributing a quadratic form
/// `T† A_{c1} Sigma A_{c2} ... Sigma A_{ct} T` in the surviving variables).
/// Labeled assignments of identical forms are folded into the scalar
/// multiplicities, and structures sharing the same chain multiset are merged,
/// which keeps the output polynomial in the multiplicities.
fn noncentral_structures(
    form_types: &[&Array2<C64>],
    form_counts: &[u8],
    t: &Array2<C64>,
    sigma: &Array2<C64>,
) -> Vec<(C64, Vec<Array2<C64>>)> {
    if form_types.is_empty() {
        return vec![(C64::new(1.0, 0.0), Vec::new())];
    }
    let tdag = mat::dagger(t);
    let mut ctx = NoncentralCtx {
        d: form_types.iter().map(|a| a.dot(sigma)).collect(),
        sd: form_types.iter().map(|a| sigma.dot(*a)).collect(),
        td: form_types.iter().map(|a| tdag.dot(*a)).collect(),
        t: t.clone(),
        chain_mats: Vec::new(),
        chain_ids: HashMap::new(),
        memo: HashMap::new(),
    };
    let mut counts = form_counts.to_vec();
    let top = structures_for(&mut ctx, &mut counts);
    top.iter()
        .map(|(s, ch)| {
            (*s, ch.iter().map(|&id| ctx.chain_mats[id as usize].clone()).collect())
        })
        .collect()
}

/// All structures on the residual multiset `r`, memoized.  Entries pair the
/// accumulated scalar (cycle traces times labeled multiplicities) with a
/// sorted multiset of interned chain ids; merging happens through a `BTreeMap`
/// so both the grouping and the output order are deterministic.
fn structures_for(ctx: &mut NoncentralCtx, r: &mut [u8]) -> Rc<Vec<(C64, Vec<u32>)>> {
    let key = crate::gaussian::wick::pack_counts(r);
    if key == 0 {
        return Rc::new(vec![(C64::new(1.0, 0.0), Vec::new())]);
    }
    if let Some(v) = ctx.memo.get(&key) {
        return Rc::clone(v);
    }
    let anchor = r.iter().position(|&v| v > 0).expect("nonzero count");
    r[anchor] -= 1;
    let mut acc: BTreeMap<Vec<u32>, C64> = BTreeMap::new();
    let first_step = ctx.d[anchor].clone();
    cycle_structures(ctx, &first_step, r, 1.0, &mut acc);
    let mut seq: Vec<u8> = Vec::new();
    chain_prefix(ctx, None, &mut seq, anchor, r, 1.0, &mut acc);
    r[anchor] += 1;
    let out: Vec<(C64, Vec<u32>)> = acc.into_iter().map(|(ch, s)| (s, ch)).collect();
    let rc = Rc::new(out);
    ctx.memo.insert(key, Rc::clone(&rc));
    rc
}

/// Cycles through the anchor instance: either close the running product with
/// a trace (combining with all structures of what remains) or append one more
/// available instance.  `count` tracks labeled assignments realized so far.
fn cycle_structures(
    ctx: &mut NoncentralCtx,
    prod: &Array2<C64>,
    avail: &mut [u8],
    count: f64,
    acc: &mut BTreeMap<Vec<u32>, C64>,
) {
    let tr = mat::trace(prod) * count;
    let rest = structures_for(ctx, avail);
    for (s, ch) in rest.iter() {
        *acc.entry(ch.clone()).or_insert_with(|| C64::new(0.0, 0.0)) += tr * s;
    }
    for g in 0..ctx.d.len() {
        if avail[g] == 0 {
            continue;
        }
        let c2 = count * avail[g] as f64;
        avail[g] -= 1;
        let next = prod.dot(&ctx.d[g]);
        cycle_structures(ctx, &next, avail, c2, acc);
        avail[g] += 1;
    }
}

/// Chain segment before the anchor: keep prepending available instances, or
/// place the anchor and switch to the suffix phase.  `left` is the product
/// `T† A_{s1} (Sigma A_{s2}) ...` accumulated so far (absent while empty).
fn chain_prefix(
    ctx: &mut NoncentralCtx,
    left: Option<&Array2<C64>>,
    seq: &mut Vec<u8>,
    anchor: usize,
    avail: &mut [u8],
    count: f64,
    acc: &mut BTreeMap<Vec<u32>, C64>,
) {
    let with_anchor = match left {
        None => ctx.td[anchor].clone(),
        Some(l) => l.dot(&ctx.sd[anchor]),
    };
    seq.push(anchor as u8);
    chain_suffix(ctx, &with_anchor, seq, avail, count, acc);
    seq.pop();
    for g in 0..ctx.d.len() {
        if avail[g] == 0 {
            continue;
        }
        let c2 = count * avail[g] as f64;
        avail[g] -= 1;
        let l2 = match left {
            None => ctx.td[g].clone(),
            Some(l) => l.dot(&ctx.sd[g]),
        };
        seq.push(g as u8);
        chain_prefix(ctx, Some(&l2), seq, anchor, avail, c2, acc);
        seq.pop();
        avail[g] += 1;
    }
}

/// Chain segment after the anchor: close the chain (interning its matrix and
/// combining with the structures of what remains) or keep appending.
fn chain_suffix(
    ctx: &mut NoncentralCtx,
    left: &Array2<C64>,
    seq: &mut Vec<u8>,
    avail: &mut [u8],
    count: f64,
    acc: &mut BTreeMap<Vec<u32>, C64>,
) {
    let id = match ctx.chain_ids.get(seq.as_slice()) {
        Some(&id) => id,
        None => {
            let id = ctx.chain_mats.len() as u32;
            ctx.chain_mats.push(left.dot(&ctx.t));
            ctx.chain_ids.insert(seq.clone(), id);
            id
        }
    };
    let rest = structures_for(ctx, avail);
    for (s, ch) in rest.iter() {
        let mut with = ch.clone();
        let pos = with.binary_search(&id).unwrap_or_else(|e| e);
        with.insert(pos, id);
        *acc.entry(with).or_insert_with(|| C64::new(0.0, 0.0)) += count * s;
    }
    for g in 0..ctx.d.len() {
        if avail[g] == 0 {
            continue;
        }
        let c2 = count * avail[g] as f64;
        avail[g] -= 1;
        let l2 = left.dot(&ctx.sd[g]);
        seq.push(g as u8);
        chain_suffix(ctx, &l2, seq, avail, c2, acc);
        seq.pop();
        avail[g] += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{rand_point, rng, C};

    #[test]
    fn vacuum_moments_match_hand_values() {
        // int d^2z/pi exp(-|z|^2) = 1 (Unit on a vacuum mode).
        let vac = CharFun::vacuum(&["A"]);
        let v = vac.moment_integral_real(&[MeasurementFactor::unit("A")]).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
        // Delta pins the mode: chi(0) = 1.
        let v = vac.moment_integral_real(&[MeasurementFactor::delta("A")]).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
        // DeltaMinusOne on vacuum: 1 - 1 = 0 (a non-resolving detector never
        // clicks on vacuum).
        let v = vac.moment_integral_real(&[MeasurementFactor::delta_minus_one("A")]).unwrap();
        assert!(v.abs() < 1e-14);
    }

    #[test]
    fn single_mode_click_moment() {
        // chi = exp(-2|z|^2): int (1 - |z|^2) exp(-2|z|^2) d^2z/pi
        //     = 1/2 - 1/4 = 0.25.
        let term = GaussianTerm::new(C(1.0), Array2::eye(1) * C(2.0), vec![]).unwrap();
        let cf = CharFun::new(vec!["A".into()], vec![term]).unwrap();
        let v = cf.moment_integral_real(&[MeasurementFactor::one_minus_abs_sq("A")]).unwrap();
        assert!((v - 0.25).abs() < 1e-14, "got {v}");
    }

    #[test]
    fn factor_coverage_is_enforced() {
        let vac = CharFun::vacuum(&["A", "B"]);
        // Missing B.
        assert!(matches!(
            vac.moment_integral(&[MeasurementFactor::unit("A")]),
            Err(Error::BadFactorCoverage(_, 0))
        ));
        // A covered twice.
        assert!(matches!(
            vac.moment_integral(&[
                MeasurementFactor::unit("A"),
                MeasurementFactor::delta("A"),
                MeasurementFactor::unit("B")
            ]),
            Err(Error::BadFactorCoverage(_, 2))
        ));
    }

    #[test]
    fn bell_projector_moment_on_vacuum() {
        // <psi_s| rho_vac |psi_s> = 0 for the single-excitation Bell state:
        // integral of (1 - |z_a + s z_b|^2 / 2) over the standard Gaussian
        // gives 1 - (1/2)(1 + 1) = 0.
        let vac = CharFun::vacuum(&["A", "B"]);
        for sign in [1, -1] {
            let v = vac.moment_integral_real(&[MeasurementFactor::bell("A", "B", sign)]).unwrap();
            assert!(v.abs() < 1e-14, "sign {sign}: got {v}");
        }
    }

    #[test]
    fn moment_is_linear_in_terms() {
        let mut r = rng(21);
        let q1 = crate::testutil::rand_hpd(&mut r, 2);
        let q2 = crate::testutil::rand_hpd(&mut r, 2);
        let f = crate::testutil::rand_hermitian(&mut r, 2);
        let t1 = GaussianTerm::new(C(0.7), q1.clone(), vec![QuadraticForm::new(f.clone()).unwrap()]).unwrap();
        let t2 = GaussianTerm::new(C(0.3), q2.clone(), vec![]).unwrap();
        let both = CharFun::new(vec!["A".into(), "B".into()], vec![t1.clone(), t2.clone()]).unwrap();
        let only1 = CharFun::new(vec!["A".into(), "B".into()], vec![t1]).unwrap();
        let only2 = CharFun::new(vec!["A".into(), "B".into()], vec![t2]).unwrap();
        let factors = [MeasurementFactor::one_minus_abs_sq("A"), MeasurementFactor::unit("B")];
        let v = both.moment_integral(&factors).unwrap();
        let v1 = only1.moment_integral(&factors).unwrap();
        let v2 = only2.moment_integral(&factors).unwrap();
        assert!((v - (v1 + v2)).norm() < 1e-13);
    }

    #[test]
    fn factor_order_does_not_matter() {
        let mut r = rng(31);
        let q = crate::testutil::rand_hpd(&mut r, 3);
        let t = GaussianTerm::new(C(1.0), q, vec![]).unwrap();
        let cf = CharFun::new(vec!["A".into(), "B".into(), "C".into()], vec![t]).unwrap();
        let f1 = [
            MeasurementFactor::one_minus_abs_sq("A"),
            MeasurementFactor::delta_minus_one("B"),
            MeasurementFactor::unit("C"),
        ];
        let f2 = [
            MeasurementFactor::unit("C"),
            MeasurementFactor::one_minus_abs_sq("A"),
            MeasurementFactor::delta_minus_one("B"),
        ];
        let v1 = cf.moment_integral(&f1).unwrap();
        let v2 = cf.moment_integral(&f2).unwrap();
        assert!((v1 - v2).norm() < 1e-13);
    }

    #[test]
    fn conditioning_a_product_state_returns_the_marginal() {
        // chi(a, b) = chi_1(a) * chi_2(b); conditioning mode B on a click
        // kernel must leave chi_1 untouched.
        let q1 = Array2::eye(1) * C(1.8);
        let f1 = QuadraticForm::rank_one(&[C(1.0)]);
        let part1 = CharFun::new(
            vec!["A".into()],
            vec![
                GaussianTerm::new(C(1.0), q1.clone(), vec![]).unwrap(),
                GaussianTerm::new(C(-0.3), q1, vec![f1]).unwrap(),
            ],
        )
        .unwrap();
        let part2 = CharFun::new(
            vec!["B".into()],
            vec![GaussianTerm::new(C(1.0), Array2::eye(1) * C(2.5), vec![]).unwrap()],
        )
        .unwrap();
        let joint = part1.tensor(&part2).unwrap();
        let (cond, weight) = joint
            .partial_condition(&[MeasurementFactor::one_minus_abs_sq("B")])
            .unwrap();
        // weight = int (1-|b|^2) exp(-2.5|b|^2) = 1/2.5 - 1/6.25 = 0.24.
        assert!((weight - 0.24).abs() < 1e-12, "weight {weight}");
        assert_eq!(cond.modes(), &["A"]);
        let mut r = rng(17);
        for _ in 0..20 {
            let z = rand_point(&mut r, 1);
            let got = cond.evaluate(&z);
            let want = part1.evaluate(&z);
            assert!((got - want).norm() < 1e-12);
        }
    }

    #[test]
    fn conditioning_then_integrating_matches_direct_moment() {
        // Split evaluation of a 3-mode moment: integrate B, C first with the
        // kernel, then finish with the remaining factor on A.  Must equal the
        // one-shot moment integral.  Exercises means, chains and cycles.
        let mut r = rng(77);
        let q = crate::testutil::rand_hpd(&mut r, 3);
        let u = [C(1.0), C(0.4), C(-0.8)];
        let form = QuadraticForm::rank_one(&u);
        let cf = CharFun::new(
            vec!["A".into(), "B".into(), "C".into()],
            vec![
                GaussianTerm::new(C(0.9), q.clone(), vec![form.clone()]).unwrap(),
                GaussianTerm::new(C(0.1), q, vec![]).unwrap(),
            ],
        )
        .unwrap();
        let direct = cf
            .moment_integral(&[
                MeasurementFactor::one_minus_abs_sq("A"),
                MeasurementFactor::one_minus_abs_sq("B"),
                MeasurementFactor::unit("C"),
            ])
            .unwrap();
        let (cond, weight) = cf
            .partial_condition(&[
                MeasurementFactor::one_minus_abs_sq("B"),
                MeasurementFactor::unit("C"),
            ])
            .unwrap();
        let after = cond
            .moment_integral(&[MeasurementFactor::one_minus_abs_sq("A")])
            .unwrap();
        let recomposed = after * C(weight);
        assert!(
            (direct - recomposed).norm() < 1e-12 * (1.0 + direct.norm()),
            "direct {direct} vs recomposed {recomposed}"
        );
    }

    #[test]
    fn conditioning_with_delta_branches_matches_direct_moment() {
        // Same consistency check but with a non-resolving-detector factor
        // (delta branch) on a measured mode.  The state is a vacuum-like
        // Gaussian with weak correlations plus a small form term so the
        // click weight stays positive.
        let mut r = rng(78);
        let mut q = crate::testutil::rand_hpd(&mut r, 3);
        q.mapv_inplace(|z| 0.25 * z);
        q += &(Array2::eye(3) * C(1.0));
        let u = [C(0.3), C(1.0), C(0.5)];
        let cf = CharFun::new(
            vec!["A".into(), "B".into(), "C".into()],
            vec![
                GaussianTerm::new(C(1.0), q.clone(), vec![]).unwrap(),
                GaussianTerm::new(C(0.05), q, vec![QuadraticForm::rank_one(&u)]).unwrap(),
            ],
        )
        .unwrap();
        let direct = cf
            .moment_integral(&[
                MeasurementFactor::unit("A"),
                MeasurementFactor::delta_minus_one("B"),
                MeasurementFactor::unit("C"),
            ])
            .unwrap();
        let (cond, weight) = cf
            .partial_condition(&[
                MeasurementFactor::delta_minus_one("B"),
                MeasurementFactor::unit("C"),
            ])
            .unwrap();
        let after = cond.moment_integral(&[MeasurementFactor::unit("A")]).unwrap();
        assert!(
            (direct - after * C(weight)).norm() < 1e-12 * (1.0 + direct.norm()),
            "direct {direct} vs {}",
            after * C(weight)
        );
    }

    #[test]
    fn conditioning_with_repeated_forms_matches_direct_moment() {
        // Powers of a rank-one form ride through the grouped cycle/chain
        // recursion with multiplicity counting; validate against the one-shot
        // moment integral, which only uses the (independently tested)
        // central sum.
        let mut r = rng(79);
        let q = crate::testutil::rand_hpd(&mut r, 3);
        let u = [C(1.0), C(-0.6), C(0.3)];
        let bell = QuadraticForm::rank_one(&u);
        let cf = CharFun::new(
            vec!["A".into(), "B".into(), "C".into()],
            vec![
                GaussianTerm::new(C(1.0), q.clone(), vec![]).unwrap(),
                GaussianTerm::new(
                    C(0.02),
                    q,
                    vec![bell.clone(), bell.clone(), bell.clone()],
                )
                .unwrap(),
            ],
        )
        .unwrap();
        let direct = cf
            .moment_integral(&[
                MeasurementFactor::one_minus_abs_sq("A"),
                MeasurementFactor::one_minus_abs_sq("B"),
                MeasurementFactor::unit("C"),
            ])
            .unwrap();
        let (cond, weight) = cf
            .partial_condition(&[
                MeasurementFactor::one_minus_abs_sq("B"),
                MeasurementFactor::unit("C"),
            ])
            .unwrap();
        let after = cond
            .moment_integral(&[MeasurementFactor::one_minus_abs_sq("A")])
            .unwrap();
        let recomposed = after * C(weight);
        assert!(
            (direct - recomposed).norm() < 1e-12 * (1.0 + direct.norm()),
            "direct {direct} vs recomposed {recomposed}"
        );
    }

    #[test]
    fn conditioned_state_is_normalized() {
        let mut r = rng(5);
        let q = crate::testutil::rand_hpd(&mut r, 4);
        let u = [C(1.0), C(-1.0), C(0.2), C(0.0)];
        let cf = CharFun::new(
            vec!["A".into(), "B".into(), "X".into(), "Y".into()],
            vec![
                GaussianTerm::new(C(1.0), q.clone(), vec![]).unwrap(),
                GaussianTerm::new(C(-0.4), q, vec![QuadraticForm::rank_one(&u)]).unwrap(),
            ],
        )
        .unwrap();
        let (cond, _w) = cf
            .partial_condition(&[
                MeasurementFactor::one_minus_abs_sq("X"),
                MeasurementFactor::unit("Y"),
            ])
            .unwrap();
        cond.require_normalized(1e-12).unwrap();
        assert_eq!(cond.modes(), &["A", "B"]);
    }

    #[test]
    fn example_quarter_moment_splits_through_conditioning() {
        // exp(-2|z|^2) with a click factor gave 0.25 above; route it through
        // partial_condition with no remaining modes' factors involved.
        let term = GaussianTerm::new(C(1.0), Array2::eye(2) * C(2.0), vec![]).unwrap();
        let cf = CharFun::new(vec!["A".into(), "B".into()], vec![term]).unwrap();
        let (cond, weight) = cf
            .partial_condition(&[MeasurementFactor::one_minus_abs_sq("B")])
            .unwrap();
        assert!((weight - 0.25).abs() < 1e-13);
        // The remaining mode is untouched: chi(a) = exp(-2|a|^2).
        let z = [C(0.3)];
        let want = (-2.0 * 0.09f64).exp();
        assert!((cond.evaluate(&z) - C(want)).norm() < 1e-12);
    }
}
