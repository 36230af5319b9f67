//! Entanglement swapping at a middle station.
//!
//! Two heralded links, each spanning half the total distance, meet at a
//! station holding the two inner memories.  The station retrieves both
//! memories into photons (efficiency `eta_c`), interferes them on a 50-50
//! beam splitter, and watches two detectors (efficiency `eta_d`); exactly
//! one detector firing heralds a successful swap, leaving the two outer
//! memories entangled.  Only the product `eta_m = eta_c * eta_d` enters the
//! measurement.
//!
//! Because a lone detector click cannot distinguish "one excitation,
//! partner lost" from "the excitation that should have stayed", the
//! heralded state carries a vacuum component.  The `purified` metrics
//! report the conditional state with that component removed, which is the
//! relevant figure once later post-selection (as in the key protocol)
//! discards vacuum events.

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::gaussian::{CharFun, MeasurementFactor};
use crate::link::{
    post_herald_charfun_labeled, post_herald_charfun_stable_labeled, Detector, SystemParams,
};

fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Tolerance for checks on values assembled from near-cancelling terms:
/// scales with the summed coefficient magnitude of the representation.
pub(crate) fn cancel_tol(cf: &CharFun) -> f64 {
    let s: f64 = cf.terms().iter().map(|t| t.coeff.norm()).sum();
    1e-13 * s.max(10.0)
}

/// Joint state of two half-distance links before the swap measurement,
/// over modes `A, B, C, D`: link (A, B) heralded with Bell sign `j`, link
/// (C, D) with sign `k`.  `B` and `C` sit at the middle station.
pub fn pre_bsm_state(p: &SystemParams, j: i8, k: i8) -> Result<CharFun> {
    let seg = p.distance_km / 2.0;
    let left = post_herald_charfun_labeled(p, seg, j, "A", "B")?;
    let right = post_herald_charfun_labeled(p, seg, k, "C", "D")?;
    left.tensor(&right)
}

/// Sends modes `x` and `y` through the swap-measurement optics and leaves
/// the two (lossy) detector modes named `out_x`, `out_y` in their slots.
///
/// The channel is retrieval loss on each memory, a 50-50 beam splitter,
/// and detector loss; folding the losses together, the characteristic
/// function transforms by the substitution
///
/// ```text
/// zeta_x = sqrt(eta_m/2) (zeta_out_y - zeta_out_x)
/// zeta_y = sqrt(eta_m/2) (zeta_out_y + zeta_out_x)
/// ```
///
/// times an `exp[-(1 - eta_m)(|zeta_out_x|^2 + |zeta_out_y|^2)]` envelope
/// for the photons the measurement failed to collect.
pub fn apply_bsm_channel(
    cf: &CharFun,
    x: &str,
    y: &str,
    eta_m: f64,
    out_x: &str,
    out_y: &str,
) -> Result<CharFun> {
    if !(eta_m > 0.0 && eta_m <= 1.0) {
        return Err(Error::InvalidParameter(
            "measurement efficiency must lie in (0, 1]".into(),
        ));
    }
    let n = cf.modes().len();
    let ix = cf.mode_index(x)?;
    let iy = cf.mode_index(y)?;
    let s = real((eta_m / 2.0).sqrt());
    let mut l: Array2<C64> = Array2::zeros((n, n));
    for i in 0..n {
        if i != ix && i != iy {
            l[[i, i]] = real(1.0);
        }
    }
    l[[ix, ix]] = -s;
    l[[ix, iy]] = s;
    l[[iy, ix]] = s;
    l[[iy, iy]] = s;
    let new_modes: Vec<&str> = cf
        .modes()
        .iter()
        .enumerate()
        .map(|(i, m)| {
            if i == ix {
                out_x
            } else if i == iy {
                out_y
            } else {
                m.as_str()
            }
        })
        .collect();
    let out = cf.substitute_linear(&l, &new_modes)?;
    let mut g: Array2<C64> = Array2::zeros((n, n));
    g[[ix, ix]] = real(1.0 - eta_m);
    g[[iy, iy]] = real(1.0 - eta_m);
    out.multiply_gaussian_factor(&g)
}

/// Detector factors for "`clicked` fired, `silent` stayed dark".
pub(crate) fn click_factors(
    detector: Detector,
    clicked: &str,
    silent: &str,
) -> Vec<MeasurementFactor> {
    let click = match detector {
        Detector::Pnrd => MeasurementFactor::one_minus_abs_sq(clicked),
        Detector::Nrpd => MeasurementFactor::delta_minus_one(clicked),
    };
    vec![click, MeasurementFactor::unit(silent)]
}

/// Bell sign of the dominant entangled component after a swap of links
/// with signs `j` and `k`, heralded by the stated detector.  The beam
/// splitter orientation puts the relative minus sign on the first detector.
pub fn swap_output_sign(j: i8, k: i8, first_clicked: bool) -> i8 {
    j * k * if first_clicked { -1 } else { 1 }
}

/// One conditioned swap outcome.
#[derive(Debug, Clone)]
pub struct SwappedState {
    /// Normalized post-swap state over the outer modes `A`, `D`.
    pub state: CharFun,
    /// Probability of this specific detector pattern.
    pub weight: f64,
    /// Bell sign of the dominant entangled component.
    pub sign: i8,
}

/// Post-swap state for links with signs `j`, `k` and the given detector
/// pattern, with the sign bookkeeping verified against the state itself.
pub fn swapped_state(p: &SystemParams, j: i8, k: i8, first_clicked: bool) -> Result<SwappedState> {
    let pre = pre_bsm_state(p, j, k)?;
    let sw = conditioned_swap(&pre, p, j, k, first_clicked)?;
    verify_parity(&sw, j, k, first_clicked)?;
    Ok(sw)
}

/// Same conditioning as [`swapped_state`] but built on the
/// cancellation-free link representation, consolidated and pruned.
///
/// Needed whenever the result feeds further tensor products (as in the
/// key-rate analysis): the two-Gaussian NRPD form has coefficients of
/// order `1/(eta_s pc)^2` after the swap, and tensoring two such states
/// squares that scale, pushing the floating-point cancellation floor far
/// above the quantities of interest.
pub fn swapped_state_stable(
    p: &SystemParams,
    j: i8,
    k: i8,
    first_clicked: bool,
) -> Result<SwappedState> {
    let seg = p.distance_km / 2.0;
    let left = post_herald_charfun_stable_labeled(p, seg, j, "A", "B")?;
    let right = post_herald_charfun_stable_labeled(p, seg, k, "C", "D")?;
    let mut pre = left.tensor(&right)?;
    // The tensor product multiplies the links' series coefficients, so the
    // high-order cross terms (the ones carrying the most quadratic forms)
    // fall far below anything a bounded measurement kernel can see.
    pre.prune_negligible(1e-17);
    let mut sw = conditioned_swap(&pre, p, j, k, first_clicked)?;
    sw.state.consolidate();
    sw.state.prune_negligible(1e-16);
    verify_parity(&sw, j, k, first_clicked)?;
    Ok(sw)
}

fn conditioned_swap(
    pre: &CharFun,
    p: &SystemParams,
    j: i8,
    k: i8,
    first_clicked: bool,
) -> Result<SwappedState> {
    let channel = apply_bsm_channel(pre, "B", "C", p.eta_m(), "D1", "D2")?;
    let (clicked, silent) = if first_clicked { ("D1", "D2") } else { ("D2", "D1") };
    let (state, weight) = channel.partial_condition(&click_factors(p.detector, clicked, silent))?;
    Ok(SwappedState { state, weight, sign: swap_output_sign(j, k, first_clicked) })
}

fn verify_parity(sw: &SwappedState, j: i8, k: i8, first_clicked: bool) -> Result<()> {
    let f_kept = sw.state.moment_integral_real(&[MeasurementFactor::bell("A", "D", sw.sign)])?;
    let f_flip = sw.state.moment_integral_real(&[MeasurementFactor::bell("A", "D", -sw.sign)])?;
    if f_kept <= f_flip {
        return Err(Error::SymmetryBroken(format!(
            "swap parity bookkeeping failed for j={j} k={k} first_clicked={first_clicked}: \
             fidelity {f_kept} with claimed sign {} vs {f_flip} with its opposite",
            sw.sign
        )));
    }
    Ok(())
}

/// Scalar figures of one swap attempt (conditioned on success).
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct SwapMetrics {
    /// Probability that the swap measurement heralds success (either
    /// single-detector pattern).
    pub p_m: f64,
    /// Fidelity of the heralded state with the matching Bell state.
    pub fidelity: f64,
    /// Weight of the joint-vacuum component of the heralded state.
    pub vacuum_weight: f64,
    /// Success probability with vacuum outcomes removed.
    pub p_m_purified: f64,
    /// Fidelity of the heralded state with its vacuum component removed.
    pub fidelity_purified: f64,
}

/// Ideal-input limits of the swap metrics, reached as `pc -> 0` where both
/// links become perfect single-excitation Bell pairs; derived by tracking
/// one or two photons through the lossy beam splitter by hand.
pub fn ideal_input_limits(detector: Detector, eta_m: f64) -> SwapMetrics {
    match detector {
        Detector::Pnrd => SwapMetrics {
            p_m: eta_m * (2.0 - eta_m) / 2.0,
            fidelity: 1.0 / (2.0 - eta_m),
            vacuum_weight: (1.0 - eta_m) / (2.0 - eta_m),
            p_m_purified: eta_m / 2.0,
            fidelity_purified: 1.0,
        },
        Detector::Nrpd => SwapMetrics {
            p_m: eta_m * (4.0 - eta_m) / 4.0,
            fidelity: 2.0 / (4.0 - eta_m),
            vacuum_weight: (2.0 - eta_m) / (4.0 - eta_m),
            p_m_purified: eta_m / 2.0,
            fidelity_purified: 1.0,
        },
    }
}

/// Swap metrics, computed for every link-parity and detector-pattern
/// combination, checked for agreement across all of them and for the
/// factorization of the joint success-and-vacuum probability, then
/// averaged.
pub fn swap_metrics(p: &SystemParams) -> Result<SwapMetrics> {
    p.validate()?;
    let mut weights = Vec::new();
    let mut fids = Vec::new();
    let mut vacs = Vec::new();
    let mut tol: f64 = 0.0;
    for j in [1i8, -1] {
        for k in [1i8, -1] {
            let pre = pre_bsm_state(p, j, k)?;
            let channel = apply_bsm_channel(&pre, "B", "C", p.eta_m(), "D1", "D2")?;
            tol = tol.max(cancel_tol(&channel));
            for first_clicked in [true, false] {
                let (clicked, silent) =
                    if first_clicked { ("D1", "D2") } else { ("D2", "D1") };
                let factors = click_factors(p.detector, clicked, silent);
                let (state, weight) = channel.partial_condition(&factors)?;
                let sign = swap_output_sign(j, k, first_clicked);
                let fid =
                    state.moment_integral_real(&[MeasurementFactor::bell("A", "D", sign)])?;
                let f_flip =
                    state.moment_integral_real(&[MeasurementFactor::bell("A", "D", -sign)])?;
                if fid <= f_flip {
                    return Err(Error::SymmetryBroken(format!(
                        "swap parity bookkeeping failed for j={j} k={k} \
                         first_clicked={first_clicked}"
                    )));
                }
                let vac = state.moment_integral_real(&[
                    MeasurementFactor::unit("A"),
                    MeasurementFactor::unit("D"),
                ])?;
                // Dual route for the joint success-and-vacuum probability:
                // one four-mode integral must equal pattern weight times the
                // conditional vacuum weight.
                let mut joint_factors = factors.clone();
                joint_factors.push(MeasurementFactor::unit("A"));
                joint_factors.push(MeasurementFactor::unit("D"));
                let joint = channel.moment_integral_real(&joint_factors)?;
                let jtol = tol.max(cancel_tol(&state) * weight);
                if (joint - weight * vac).abs() > jtol {
                    return Err(Error::SymmetryBroken(format!(
                        "joint success-and-vacuum probability {joint} does not factor into \
                         weight {weight} times conditional vacuum weight {vac}"
                    )));
                }
                weights.push(weight);
                fids.push(fid);
                vacs.push(vac);
            }
        }
    }
    for series in [&weights, &fids, &vacs] {
        let lo = series.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo > tol.max(1e-10) {
            return Err(Error::SymmetryBroken(format!(
                "swap metrics differ across parity/pattern combinations: \
                 spread {} exceeds tolerance",
                hi - lo
            )));
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (w, fidelity, vacuum_weight) = (mean(&weights), mean(&fids), mean(&vacs));
    let p_m = 2.0 * w;
    let p_m_purified = p_m * (1.0 - vacuum_weight);
    let fidelity_purified = fidelity / (1.0 - vacuum_weight);
    Ok(SwapMetrics { p_m, fidelity, vacuum_weight, p_m_purified, fidelity_purified })
}
