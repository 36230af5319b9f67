//! Hand-derived closed forms for the post-swap two-memory state.
//!
//! The conditioning engine produces the swapped state numerically; these
//! expressions were derived by hand for the same state and serve as an
//! independent cross-check.  The PNRD state is one Gaussian envelope times
//! a quartic polynomial; the NRPD state is a sum of seven pure Gaussians.
//!
//! A few of the hand-derived NRPD constants reached this module through a
//! worksheet with transcription defects (a dropped factor, a missing
//! operator, a stray duplicated fragment, and one mistyped coefficient in a
//! shared denominator).  Each ambiguous spot admits two readings; the
//! resolved readings used here match the engine to machine precision, and
//! [`nrpd_reading_report`] quantifies both readings against the engine so
//! the resolution stays auditable.
//!
//! Conventions: the PNRD form is normalized (`chi(0) = 1`).  The NRPD form
//! is naturally *unnormalized* — its value at zero is the probability of
//! the specific detector pattern — so the builder returns the normalized
//! state together with that predicted weight.

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::gaussian::{CharFun, GaussianTerm, QuadraticForm};
use crate::link::{derived_params, Detector, SystemParams};

fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Shared polynomial pieces of the closed-form constants, evaluated at one
/// parameter point (`es` = path-plus-detector transmissivity of one
/// half-segment photon, `em` = measurement-module efficiency).
struct Pieces {
    a0: f64,
    n: f64,
    d1: f64,
    d2: f64,
    e1: f64,
    e3: f64,
}

fn pieces(pc: f64, es: f64, em: f64) -> Pieces {
    let pc2 = pc * pc;
    Pieces {
        a0: 1.0 + es * pc - pc,
        n: -1.0 - em * pc + pc - es * pc + em * es * pc,
        d1: 2.0 * es * em * pc - 2.0 * em * pc + em - 2.0 + 2.0 * pc - 2.0 * es * pc,
        d2: 2.0 * es * es * em * pc2 - 4.0 * es * em * pc2 + 2.0 * em * pc2 + es * em * pc
            - em * pc
            - 2.0 * es * es * pc2
            + 4.0 * es * pc2
            - es * pc
            - 2.0 * pc2
            + pc
            + 1.0,
        e1: 2.0 * em * pc - es * em * pc + 2.0 - 4.0 * pc + 2.0 * es * pc - 2.0 * es * pc2
            + 2.0 * pc2
            + 2.0 * es * em * pc2
            - 2.0 * em * pc2,
        e3: -3.0 * es * em * pc + 4.0 * em * pc + 4.0 - 8.0 * pc + 4.0 * es * pc
            - 4.0 * es * pc2
            + 4.0 * pc2
            + 4.0 * es * em * pc2
            - 4.0 * em * pc2,
    }
}

/// Constants of the PNRD closed form
/// `exp[-alpha(|za|^2+|zb|^2)] [1 + c1 |za|^2 |zb|^2 + c2 (|za|^2+|zb|^2)
///  + c3 |za + sign*zb|^2]` (normalized).
#[derive(Debug, Clone, Copy)]
pub struct PnrdConstants {
    pub alpha: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

/// PNRD closed-form constants for a swap over the configured distance.
pub fn pnrd_constants(p: &SystemParams) -> PnrdConstants {
    let d = derived_params(p, p.distance_km / 2.0);
    let (pc, es, em) = (p.pc, d.eta_s, d.eta_m);
    let k = pieces(pc, es, em);
    PnrdConstants {
        alpha: d.alpha,
        c1: pc * (es - 1.0) * k.n * k.n / (k.d1 * k.a0 * k.a0 * k.d2),
        c2: -pc * (es - 1.0) * k.n / (k.a0 * k.d2),
        c3: -k.n / (2.0 * k.d1 * k.d2),
    }
}

/// Constants of the NRPD closed form: seven pure Gaussian terms
///
/// ```text
/// c1 exp(p1(|za|^2+|zb|^2) + p2 |za + sign*zb|^2) + c2 exp(p1(|za|^2+|zb|^2))
/// + c3 exp(p3|za|^2 + p4|zb|^2) + c4 exp(p1|za|^2 + p4|zb|^2)
/// + c3 exp(p4|za|^2 + p3|zb|^2) + c4 exp(p4|za|^2 + p1|zb|^2)
/// + c5 exp(p4(|za|^2+|zb|^2))
/// ```
///
/// in the unnormalized convention (the sum at zero is the probability of
/// the specific detector pattern).
#[derive(Debug, Clone, Copy)]
pub struct NrpdConstants {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
}

impl NrpdConstants {
    /// Predicted probability of one detector pattern: the unnormalized
    /// form evaluated at zero.
    pub fn pattern_weight(&self) -> f64 {
        self.c1 + self.c2 + 2.0 * self.c3 + 2.0 * self.c4 + self.c5
    }
}

/// NRPD closed-form constants (resolved readings) for a swap over the
/// configured distance.
pub fn nrpd_constants(p: &SystemParams) -> NrpdConstants {
    let d = derived_params(p, p.distance_km / 2.0);
    let (pc, es, em) = (p.pc, d.eta_s, d.eta_m);
    let k = pieces(pc, es, em);
    let pc2 = pc * pc;
    let es2 = es * es;
    NrpdConstants {
        p1: (-es * pc + es * em * pc - 2.0 * em * pc + 2.0 * pc - 2.0) / k.e1,
        p2: es2 * em * pc2 / (4.0 * (pc - 1.0) * k.a0 * k.e1),
        p3: (6.0 * pc2 * es + 3.0 * pc * es * em - 6.0 * es * em * pc2 - 4.0 - 2.0 * es2 * pc2
            - 6.0 * es * pc
            + 4.0 * em * pc2
            - 4.0 * em * pc
            + 2.0 * es2 * em * pc2
            - 4.0 * pc2
            + 8.0 * pc)
            / (k.a0 * k.e3),
        p4: -1.0 / k.a0,
        c1: -2.0 * (pc - 1.0) * k.a0.powi(3) / (es2 * pc2 * k.e1),
        c2: -4.0 * (pc - 1.0) * k.a0.powi(3) * (-1.0 - es * pc + 2.0 * pc + es * pc2 - pc2)
            / (es2 * pc2 * k.e1 * k.e1),
        c3: -4.0 * k.a0 * k.a0 * (pc - 1.0) * (pc - 1.0) / (es2 * pc2 * k.e3),
        c4: -2.0 * k.a0.powi(3) * (pc - 1.0) * (pc - 1.0) / (k.e1 * k.n * es2 * pc2),
        c5: -k.a0 * (pc - 1.0) * (pc - 1.0) * em * (es - 1.0) / (es2 * pc * k.n * k.n),
    }
}

fn two_mode(q00: f64, q11: f64) -> Array2<C64> {
    let mut q = Array2::zeros((2, 2));
    q[[0, 0]] = real(q00);
    q[[1, 1]] = real(q11);
    q
}

fn check_sign(sign: i8) -> Result<()> {
    if sign == 1 || sign == -1 {
        Ok(())
    } else {
        Err(Error::InvalidParameter("Bell sign must be +1 or -1".into()))
    }
}

/// Normalized PNRD swapped state from the closed form, over modes `A`, `D`.
pub fn pnrd_swapped(p: &SystemParams, sign: i8) -> Result<CharFun> {
    check_sign(sign)?;
    let k = pnrd_constants(p);
    let gauss = Array2::eye(2) * real(k.alpha);
    let e_aa = QuadraticForm::new(two_mode(1.0, 0.0))?;
    let e_dd = QuadraticForm::new(two_mode(0.0, 1.0))?;
    let bell = QuadraticForm::rank_one(&[real(1.0), real(sign as f64)]);
    let terms = vec![
        GaussianTerm::new(real(1.0), gauss.clone(), vec![])?,
        GaussianTerm::new(real(k.c1), gauss.clone(), vec![e_aa.clone(), e_dd.clone()])?,
        GaussianTerm::new(real(k.c2), gauss.clone(), vec![e_aa])?,
        GaussianTerm::new(real(k.c2), gauss.clone(), vec![e_dd])?,
        GaussianTerm::new(real(k.c3), gauss, vec![bell])?,
    ];
    CharFun::new(vec!["A".into(), "D".into()], terms)
}

/// Normalized NRPD swapped state from the closed form, over modes `A`, `D`,
/// together with its predicted single-pattern heralding probability.
pub fn nrpd_swapped(p: &SystemParams, sign: i8) -> Result<(CharFun, f64)> {
    check_sign(sign)?;
    let k = nrpd_constants(p);
    let w = k.pattern_weight();
    if !(w > 0.0) {
        return Err(Error::BadWeight { value: format!("closed-form pattern weight {w}") });
    }
    let s = sign as f64;
    let mut g1 = two_mode(-k.p1 - k.p2, -k.p1 - k.p2);
    g1[[0, 1]] = real(-k.p2 * s);
    g1[[1, 0]] = real(-k.p2 * s);
    let specs: [(f64, Array2<C64>); 7] = [
        (k.c1, g1),
        (k.c2, two_mode(-k.p1, -k.p1)),
        (k.c3, two_mode(-k.p3, -k.p4)),
        (k.c4, two_mode(-k.p1, -k.p4)),
        (k.c3, two_mode(-k.p4, -k.p3)),
        (k.c4, two_mode(-k.p4, -k.p1)),
        (k.c5, two_mode(-k.p4, -k.p4)),
    ];
    let terms = specs
        .into_iter()
        .map(|(c, q)| GaussianTerm::new(real(c / w), q, vec![]))
        .collect::<Result<Vec<_>>>()?;
    let cf = CharFun::new(vec!["A".into(), "D".into()], terms)?;
    Ok((cf, w))
}

/// Normalized closed-form swapped state for either detector, with the
/// predicted pattern weight where the form provides one (NRPD only).
pub fn swapped(p: &SystemParams, sign: i8) -> Result<(CharFun, Option<f64>)> {
    match p.detector {
        Detector::Pnrd => Ok((pnrd_swapped(p, sign)?, None)),
        Detector::Nrpd => {
            let (cf, w) = nrpd_swapped(p, sign)?;
            Ok((cf, Some(w)))
        }
    }
}

/// Deterministic two-mode sample points for pointwise comparisons.
pub fn sample_points() -> Vec<[C64; 2]> {
    let c = C64::new;
    vec![
        [c(0.0, 0.0), c(0.0, 0.0)],
        [c(0.3, 0.0), c(0.0, 0.0)],
        [c(0.0, 0.0), c(0.0, 0.3)],
        [c(0.5, 0.2), c(-0.4, 0.0)],
        [c(-0.7, 0.0), c(0.0, 0.6)],
        [c(0.8, 0.8), c(0.8, -0.8)],
        [c(1.2, 0.0), c(-1.2, 0.0)],
        [c(0.1, -0.9), c(1.1, 0.3)],
        [c(-0.5, -0.5), c(-0.5, 0.5)],
        [c(0.0, 1.5), c(1.5, 0.0)],
    ]
}

/// Largest absolute difference between two two-mode characteristic
/// functions over the sample grid.
pub fn max_pointwise_deviation(a: &CharFun, b: &CharFun) -> Result<f64> {
    if a.modes().len() != 2 || b.modes().len() != 2 {
        return Err(Error::DimensionMismatch(
            "pointwise comparison expects two-mode states".into(),
        ));
    }
    let mut max = 0.0f64;
    for pt in sample_points() {
        let d = (a.evaluate(&pt) - b.evaluate(&pt)).norm();
        max = max.max(d);
    }
    Ok(max)
}

/// NRPD constants extracted from an engine-conditioned swapped state by
/// classifying its seven consolidated Gaussian terms, in the unnormalized
/// convention (`weight` is the pattern probability the engine reported).
pub fn extract_nrpd_constants(state: &CharFun, weight: f64, sign: i8) -> Result<NrpdConstants> {
    check_sign(sign)?;
    let terms = state.terms();
    if terms.len() != 7 {
        return Err(Error::SymmetryBroken(format!(
            "expected 7 consolidated Gaussian terms, found {}",
            terms.len()
        )));
    }
    let mut rows = Vec::with_capacity(7);
    for t in terms {
        if !t.forms.is_empty() {
            return Err(Error::SymmetryBroken("unexpected polynomial factor".into()));
        }
        if t.coeff.im.abs() > 1e-9 * t.coeff.re.abs().max(1.0) {
            return Err(Error::NotReal { re: t.coeff.re, im: t.coeff.im });
        }
        let q = &t.exponent;
        rows.push((t.coeff.re * weight, q[[0, 0]].re, q[[1, 1]].re, q[[0, 1]].re));
    }
    // The coupled term is the only one with an off-diagonal entry.
    let couple = rows
        .iter()
        .position(|r| r.3.abs() > 1e-12)
        .ok_or_else(|| Error::SymmetryBroken("no coupled Gaussian term found".into()))?;
    let (c1, g1_diag, _, g1_off) = rows[couple];
    let p2 = -(sign as f64) * g1_off;
    let p1 = -(g1_diag + p2);
    let close = |a: f64, b: f64| (a - b).abs() < 1e-10 * a.abs().max(1.0);
    // Uncoupled isotropic terms: one shares p1 with the coupled term (c2),
    // the other defines p4 (c5).
    let mut c2 = None;
    let mut c5p4 = None;
    for (i, &(c, q00, q11, _)) in rows.iter().enumerate() {
        if i == couple || !close(q00, q11) {
            continue;
        }
        if close(q00, -p1) {
            if c2.replace(c).is_some() {
                return Err(Error::SymmetryBroken("duplicate uncoupled p1 term".into()));
            }
        } else if c5p4.replace((c, q00)).is_some() {
            return Err(Error::SymmetryBroken("duplicate isotropic term".into()));
        }
    }
    let (c5, p4_diag) =
        c5p4.ok_or_else(|| Error::SymmetryBroken("isotropic term missing".into()))?;
    let p4 = -p4_diag;
    // Mixed terms: each pairs a p4 leg with either p1 (the c4 pair) or a
    // third exponent p3 (the c3 pair).
    let mut c3s = Vec::new();
    let mut c4s = Vec::new();
    let mut p3s = Vec::new();
    for (i, &(c, q00, q11, _)) in rows.iter().enumerate() {
        if i == couple || close(q00, q11) {
            continue;
        }
        let a = if close(q11, -p4) {
            q00
        } else if close(q00, -p4) {
            q11
        } else {
            return Err(Error::SymmetryBroken("mixed term without a p4 leg".into()));
        };
        if close(a, -p1) {
            c4s.push(c);
        } else {
            p3s.push(-a);
            c3s.push(c);
        }
    }
    if c3s.len() != 2 || c4s.len() != 2 || p3s.len() != 2 {
        return Err(Error::SymmetryBroken(format!(
            "mixed-term classification found {} p3-legs and {} p1-legs (expected 2 each)",
            c3s.len(),
            c4s.len()
        )));
    }
    let pair_tol = |v: &[f64]| (v[0] - v[1]).abs() < 1e-8 * v[0].abs().max(1.0);
    if !pair_tol(&c3s) || !pair_tol(&c4s) || !pair_tol(&p3s) {
        return Err(Error::SymmetryBroken("mirror term pair disagrees".into()));
    }
    Ok(NrpdConstants {
        p1,
        p2,
        p3: 0.5 * (p3s[0] + p3s[1]),
        p4,
        c1,
        c2: c2.ok_or_else(|| Error::SymmetryBroken("uncoupled p1 term missing".into()))?,
        c3: 0.5 * (c3s[0] + c3s[1]),
        c4: 0.5 * (c4s[0] + c4s[1]),
        c5,
    })
}

/// One ambiguous constant of the NRPD closed form, with both readings
/// measured against the engine.
#[derive(Debug, Clone)]
pub struct ReadingComparison {
    pub constant: &'static str,
    pub description: &'static str,
    pub engine_value: f64,
    pub resolved_value: f64,
    pub alternate_value: f64,
    /// |resolved - engine| / |engine|
    pub resolved_rel_dev: f64,
    /// |alternate - engine| / |engine|
    pub alternate_rel_dev: f64,
}

/// Measures the resolved and alternate readings of every ambiguous NRPD
/// constant against the engine-conditioned state at the given parameters.
pub fn nrpd_reading_report(p: &SystemParams) -> Result<Vec<ReadingComparison>> {
    if p.detector != Detector::Nrpd {
        return Err(Error::InvalidParameter(
            "reading report applies to the nrpd closed form".into(),
        ));
    }
    let sw = crate::swap::swapped_state(p, 1, 1, true)?;
    let eng = extract_nrpd_constants(&sw.state, sw.weight, sw.sign)?;
    let res = nrpd_constants(p);

    let d = derived_params(p, p.distance_km / 2.0);
    let (pc, es, em) = (p.pc, d.eta_s, d.eta_m);
    let k = pieces(pc, es, em);
    let pc2 = pc * pc;
    let es2 = es * es;
    // Alternate readings of the four ambiguous spots.
    let e2_alt = k.e1 - pc2; // shared factor with its trailing 2pc^2 typed as pc^2
    let p2_alt = es2 * em * pc2 / (4.0 * (pc - 1.0) * k.a0 * e2_alt);
    let c2_alt = res.c2 * k.e1; // single power of the shared factor
    let c3_alt = res.c3 / k.e1; // stray duplicated fragment kept as a real factor
    let n_alt = -1.0 - es * pc + pc + es * em * em * pc2; // missing operator as product
    let c4_alt = -2.0 * k.a0.powi(3) * (pc - 1.0) * (pc - 1.0) / (k.e1 * n_alt * es2 * pc2);

    let row = |constant: &'static str,
               description: &'static str,
               engine: f64,
               resolved: f64,
               alternate: f64| ReadingComparison {
        constant,
        description,
        engine_value: engine,
        resolved_value: resolved,
        alternate_value: alternate,
        resolved_rel_dev: (resolved - engine).abs() / engine.abs().max(f64::MIN_POSITIVE),
        alternate_rel_dev: (alternate - engine).abs() / engine.abs().max(f64::MIN_POSITIVE),
    };
    Ok(vec![
        row(
            "p2",
            "trailing term of the shared denominator factor: 2pc^2 (as in every other \
             occurrence of that factor) versus the transcribed pc^2",
            eng.p2,
            res.p2,
            p2_alt,
        ),
        row(
            "c2",
            "denominator carries the shared factor squared; the transcription dropped \
             one power",
            eng.c2,
            res.c2,
            c2_alt,
        ),
        row(
            "c3",
            "a stray duplicated copy of the shared factor's tail is ignored rather \
             than multiplied in",
            eng.c3,
            res.c3,
            c3_alt,
        ),
        row(
            "c4",
            "a missing operator is read as subtraction, giving the same factor that \
             appears squared in c5, rather than as a product",
            eng.c4,
            res.c4,
            c4_alt,
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::swap::swapped_state;

    fn params(detector: Detector, pc: f64) -> SystemParams {
        SystemParams::new(pc, 0.5, 0.7, 100.0, detector).unwrap()
    }

    #[test]
    fn pnrd_closed_form_matches_engine_pointwise() {
        for pc in [0.005, 0.01, 0.02, 0.05] {
            for dist in [50.0, 100.0, 300.0] {
                let p = params(Detector::Pnrd, pc).with_distance_km(dist).unwrap();
                let sw = swapped_state(&p, 1, 1, true).unwrap();
                let cf = pnrd_swapped(&p, sw.sign).unwrap();
                let dev = max_pointwise_deviation(&sw.state, &cf).unwrap();
                assert!(dev < 1e-9, "pc={pc} dist={dist}: {dev}");
            }
        }
    }

    #[test]
    fn pnrd_closed_form_matches_both_parities() {
        let p = params(Detector::Pnrd, 0.02);
        for (j, k, first) in [(1i8, 1i8, false), (1, -1, true), (-1, 1, false)] {
            let sw = swapped_state(&p, j, k, first).unwrap();
            let cf = pnrd_swapped(&p, sw.sign).unwrap();
            let dev = max_pointwise_deviation(&sw.state, &cf).unwrap();
            assert!(dev < 1e-9, "j={j} k={k} first={first}: {dev}");
        }
    }

    #[test]
    fn nrpd_closed_form_matches_engine_pointwise_and_in_weight() {
        for pc in [0.01, 0.02, 0.05] {
            for dist in [50.0, 100.0, 300.0] {
                let p = params(Detector::Nrpd, pc).with_distance_km(dist).unwrap();
                let sw = swapped_state(&p, 1, 1, true).unwrap();
                let (cf, w) = nrpd_swapped(&p, sw.sign).unwrap();
                let dev = max_pointwise_deviation(&sw.state, &cf).unwrap();
                assert!(dev < 1e-7, "pc={pc} dist={dist}: {dev}");
                assert!(
                    (w - sw.weight).abs() < 1e-7 * sw.weight,
                    "pc={pc} dist={dist}: weight {w} vs engine {}",
                    sw.weight
                );
            }
        }
    }

    #[test]
    fn extraction_recovers_the_resolved_constants() {
        for pc in [0.02, 0.05] {
            let p = params(Detector::Nrpd, pc);
            let sw = swapped_state(&p, 1, 1, true).unwrap();
            let eng = extract_nrpd_constants(&sw.state, sw.weight, sw.sign).unwrap();
            let res = nrpd_constants(&p);
            let pairs = [
                ("p1", eng.p1, res.p1),
                ("p2", eng.p2, res.p2),
                ("p3", eng.p3, res.p3),
                ("p4", eng.p4, res.p4),
                ("c1", eng.c1, res.c1),
                ("c2", eng.c2, res.c2),
                ("c3", eng.c3, res.c3),
                ("c4", eng.c4, res.c4),
                ("c5", eng.c5, res.c5),
            ];
            for (name, e, r) in pairs {
                assert!(
                    (e - r).abs() < 1e-9 * e.abs().max(1e-12),
                    "pc={pc} {name}: engine {e} vs resolved {r}"
                );
            }
            assert!(
                (res.pattern_weight() - sw.weight).abs() < 1e-9 * sw.weight,
                "pattern weight"
            );
        }
    }

    #[test]
    fn alternate_readings_are_measurably_wrong() {
        for pc in [0.02, 0.05] {
            let p = params(Detector::Nrpd, pc);
            let report = nrpd_reading_report(&p).unwrap();
            assert_eq!(report.len(), 4);
            for r in &report {
                assert!(
                    r.resolved_rel_dev < 1e-9,
                    "{}: resolved reading deviates by {}",
                    r.constant,
                    r.resolved_rel_dev
                );
                assert!(
                    r.alternate_rel_dev > 1e3 * r.resolved_rel_dev.max(1e-15),
                    "{}: alternate reading not distinguishable ({} vs {})",
                    r.constant,
                    r.alternate_rel_dev,
                    r.resolved_rel_dev
                );
            }
        }
    }

    #[test]
    fn closed_form_states_are_normalized() {
        let p = params(Detector::Pnrd, 0.02);
        pnrd_swapped(&p, 1).unwrap().require_normalized(1e-12).unwrap();
        let p = params(Detector::Nrpd, 0.02);
        let (cf, _) = nrpd_swapped(&p, -1).unwrap();
        cf.require_normalized(1e-9).unwrap();
    }

    #[test]
    fn dispatch_returns_weight_only_for_nrpd() {
        let (_, w) = swapped(&params(Detector::Pnrd, 0.02), 1).unwrap();
        assert!(w.is_none());
        let (_, w) = swapped(&params(Detector::Nrpd, 0.02), 1).unwrap();
        assert!(w.is_some());
    }
}
