//! Key-rate analysis for the entanglement-based protocol.
//!
//! Two entangled pairs connect Alice and Bob: (A, B) and (C, D), with Alice
//! holding A, C and Bob holding B, D.  Each party interferes their two
//! memories on a 50-50 beam splitter and watches two detectors; Alice's
//! detectors are `A'`, `C'` and Bob's are `B'`, `D'`.  A round is sifted
//! when each side registers exactly one click, the raw bit is which
//! detector fired, and the quantum bit error rate follows from the click
//! pattern statistics.
//!
//! The pairs are produced either directly over the full distance or by one
//! entanglement swap of two half-distance links; the asymptotic rates for
//! the two setups differ only in the heralding factors and are combined
//! here into bits per second per memory pair.

use crate::error::{Error, Result};
use crate::gaussian::{CharFun, MeasurementFactor};
use crate::link::{
    herald_probability, post_herald_charfun_stable_labeled, Detector, SystemParams,
};
use crate::swap::{
    apply_bsm_channel, cancel_tol, click_factors, pre_bsm_state, swap_metrics, swapped_state,
    swapped_state_stable,
};

/// How the long-distance pairs are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Each pair spans the full distance in a single heralded attempt.
    Direct,
    /// Each pair is built from two half-distance links joined by one swap.
    Repeater,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Direct => "direct",
            Scenario::Repeater => "repeater",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(Scenario::Direct),
            "repeater" => Ok(Scenario::Repeater),
            other => Err(Error::InvalidParameter(format!(
                "unknown scenario '{other}' (expected 'direct' or 'repeater')"
            ))),
        }
    }
}

/// Detector labels in pattern order: Alice's `A'`, Bob's `B'`, Alice's
/// `C'`, Bob's `D'`.
pub const DETECTOR_MODES: [&str; 4] = ["A'", "B'", "C'", "D'"];

/// A four-detector click pattern in the order `(A', B', C', D')`.
pub type ClickPattern = [bool; 4];

/// The two patterns where both photons land on the same side: both of
/// Alice's detectors fire (and neither of Bob's), or vice versa.  These
/// never yield a sifted bit.
pub const SAME_SIDE_PATTERNS: [ClickPattern; 2] =
    [[true, false, true, false], [false, true, false, true]];

/// One-click-per-side patterns announcing matching raw bits, for pairs
/// whose Bell signs multiply to `relative_parity`.
pub fn correct_patterns(relative_parity: i8) -> [ClickPattern; 2] {
    match relative_parity {
        1 => [[true, true, false, false], [false, false, true, true]],
        -1 => [[true, false, false, true], [false, true, true, false]],
        _ => panic!("relative parity must be +1 or -1"),
    }
}

/// One-click-per-side patterns announcing opposite raw bits.
pub fn error_patterns(relative_parity: i8) -> [ClickPattern; 2] {
    correct_patterns(-relative_parity)
}

/// Joint state of the four detector modes `A', B', C', D'` after both
/// parties' measurement optics, for pairs heralded with Bell signs
/// `sigma1` (pair A, B) and `sigma2` (pair C, D).
pub fn measured_state(
    p: &SystemParams,
    scenario: Scenario,
    sigma1: i8,
    sigma2: i8,
) -> Result<CharFun> {
    p.validate()?;
    let four = match scenario {
        Scenario::Direct => {
            let ab = post_herald_charfun_stable_labeled(p, p.distance_km, sigma1, "A", "B")?;
            let cd = post_herald_charfun_stable_labeled(p, p.distance_km, sigma2, "C", "D")?;
            ab.tensor(&cd)?
        }
        Scenario::Repeater => {
            // swap_output_sign(1, 1, first) = -1 when the first detector
            // clicked, so pick the detector pattern that yields the
            // requested sign; the swap module verifies the bookkeeping.
            let s1 = swapped_state_stable(p, 1, 1, sigma1 == -1)?;
            let s2 = swapped_state_stable(p, 1, 1, sigma2 == -1)?;
            let ab = s1.state.relabel(&["A", "B"])?;
            let cd = s2.state.relabel(&["C", "D"])?;
            ab.tensor(&cd)?
        }
    };
    let eta_m = p.eta_m();
    let half = apply_bsm_channel(&four, "A", "C", eta_m, "A'", "C'")?;
    let mut out = apply_bsm_channel(&half, "B", "D", eta_m, "B'", "D'")?;
    out = out.relabel(&DETECTOR_MODES)?;
    out.consolidate();
    out.prune_negligible(1e-17);
    Ok(out)
}

/// Probability of one exact click pattern on the measured state.
///
/// For photon-number-resolving detectors a "click" is exactly one photon;
/// for non-resolving detectors it is one-or-more photons.  Unfired
/// detectors see vacuum in both cases.
pub fn pattern_probability(
    state: &CharFun,
    detector: Detector,
    pattern: ClickPattern,
) -> Result<f64> {
    let mut factors = Vec::with_capacity(4);
    for (mode, &fired) in DETECTOR_MODES.iter().zip(pattern.iter()) {
        factors.push(if fired {
            match detector {
                Detector::Pnrd => MeasurementFactor::one_minus_abs_sq(mode),
                Detector::Nrpd => MeasurementFactor::delta_minus_one(mode),
            }
        } else {
            MeasurementFactor::unit(mode)
        });
    }
    state.moment_integral_real(&factors)
}

/// Sifting and error statistics of one measurement round.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ClickStats {
    /// Probability that the round yields a sifted bit.
    pub p_click: f64,
    /// Probability that the round yields a sifted bit and the bits differ.
    pub p_error: f64,
    /// Quantum bit error rate `p_error / p_click`.
    pub qber: f64,
}

/// Click statistics for a measured four-detector state whose pairs carry
/// the given relative Bell parity.
///
/// With photon-number-resolving detectors the sifted events are the four
/// exact one-click-per-side patterns.  With non-resolving detectors the
/// bookkept sifted probability is everything except the no-click and
/// single-click patterns; multi-click rounds where one side fired both
/// detectors are assigned a random bit and contribute half an error.
/// `exact_click` additionally discards the two rounds where only one
/// side's detectors fired, which can never be sifted; leaving it off
/// keeps the slightly optimistic bookkeeping that treats them as sifted.
pub fn click_statistics(
    state: &CharFun,
    detector: Detector,
    relative_parity: i8,
    exact_click: bool,
) -> Result<ClickStats> {
    click_statistics_from(
        |pat| pattern_probability(state, detector, pat),
        detector,
        relative_parity,
        exact_click,
    )
}

/// The same sifting and error bookkeeping as [`click_statistics`], driven
/// by an arbitrary source of exact-pattern probabilities; the truncated
/// Fock-space oracle feeds its POVM table through this so both routes
/// score click patterns identically.
pub fn click_statistics_from<F>(
    mut prob: F,
    detector: Detector,
    relative_parity: i8,
    exact_click: bool,
) -> Result<ClickStats>
where
    F: FnMut(ClickPattern) -> Result<f64>,
{
    let correct = correct_patterns(relative_parity);
    let errors = error_patterns(relative_parity);
    let (p_click, p_error) = match detector {
        Detector::Pnrd => {
            let mut click = 0.0;
            let mut err = 0.0;
            for pat in correct {
                click += prob(pat)?;
            }
            for pat in errors {
                let v = prob(pat)?;
                click += v;
                err += v;
            }
            (click, err)
        }
        Detector::Nrpd => {
            // Complement of the five patterns with at most one click.
            let mut click = 1.0;
            click -= prob([false; 4])?;
            for i in 0..4 {
                let mut pat = [false; 4];
                pat[i] = true;
                click -= prob(pat)?;
            }
            if exact_click {
                for pat in SAME_SIDE_PATTERNS {
                    click -= prob(pat)?;
                }
            }
            let mut err = 0.0;
            for pat in errors {
                err += prob(pat)?;
            }
            // Three- and four-click rounds: one side double-fired, its raw
            // bit is a coin flip.
            for i in 0..4 {
                let mut pat = [true; 4];
                pat[i] = false;
                err += 0.5 * prob(pat)?;
            }
            err += 0.5 * prob([true; 4])?;
            (click, err)
        }
    };
    if !(p_click > 0.0) {
        return Err(Error::BadWeight { value: format!("p_click = {p_click}") });
    }
    Ok(ClickStats { p_click, p_error, qber: p_error / p_click })
}

/// Click statistics for the given setup, averaged over the two equal-parity
/// heralding outcomes, which are verified to agree.
pub fn qkd_click_statistics(
    p: &SystemParams,
    scenario: Scenario,
    exact_click: bool,
) -> Result<ClickStats> {
    let mut acc: Option<ClickStats> = None;
    for sigma in [1i8, -1] {
        let state = measured_state(p, scenario, sigma, sigma)?;
        let tol = cancel_tol(&state);
        let stats = click_statistics(&state, p.detector, 1, exact_click)?;
        match &mut acc {
            None => acc = Some(stats),
            Some(prev) => {
                if (prev.p_click - stats.p_click).abs() > tol
                    || (prev.p_error - stats.p_error).abs() > tol
                {
                    return Err(Error::SymmetryBroken(format!(
                        "equal-parity click statistics disagree: \
                         p_click {} vs {}, p_error {} vs {}",
                        prev.p_click, stats.p_click, prev.p_error, stats.p_error
                    )));
                }
                prev.p_click = 0.5 * (prev.p_click + stats.p_click);
                prev.p_error = 0.5 * (prev.p_error + stats.p_error);
                prev.qber = prev.p_error / prev.p_click;
            }
        }
    }
    Ok(acc.expect("parity loop is non-empty"))
}

/// Binary entropy in bits, continuously extended by 0 at the endpoints.
pub fn binary_entropy(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    -(x * x.log2()) - (1.0 - x) * (1.0 - x).log2()
}

/// Asymptotic secret fraction `max(0, 1 - 2 H(qber))` of an
/// entanglement-based prepare-less protocol with one-way post-processing.
pub fn secret_fraction(qber: f64) -> f64 {
    (1.0 - 2.0 * binary_entropy(qber)).max(0.0)
}

/// Everything that goes into a key rate, with the rate itself in bits per
/// second per memory pair.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct RateReport {
    pub rate: f64,
    pub qber: f64,
    pub secret_fraction: f64,
    /// Probability that one round yields a sifted bit.
    pub p_click: f64,
    /// Heralding probability of one generation attempt (full span for the
    /// direct setup, half span for the repeater).
    pub herald_probability: f64,
    /// Swap success probability (repeater setup only).
    pub swap_probability: Option<f64>,
    /// Duration of one generation attempt, set by the round-trip signalling
    /// time over the full span.
    pub cycle_seconds: f64,
}

/// Key rate of the chosen setup at the given parameters.
///
/// Each generation attempt takes one round trip of classical signalling
/// over the span, entanglement generation succeeds with the heralding
/// probability (squared across the two pairs being implicit in the
/// per-memory normalization), and a successful round is sifted with
/// probability `p_click / 2` after basis reconciliation.
pub fn qkd_rate(p: &SystemParams, scenario: Scenario, exact_click: bool) -> Result<RateReport> {
    p.validate()?;
    let stats = qkd_click_statistics(p, scenario, exact_click)?;
    let sf = secret_fraction(stats.qber);
    let distance_m = p.distance_km * 1000.0;
    let cycle_seconds = 2.0 * distance_m / p.light_speed_mps;
    let (herald, swap) = match scenario {
        Scenario::Direct => (herald_probability(p, p.distance_km), None),
        Scenario::Repeater => {
            let m = swap_metrics(p)?;
            (herald_probability(p, p.distance_km / 2.0), Some(m.p_m))
        }
    };
    let rate = sf / cycle_seconds * herald * swap.unwrap_or(1.0) * stats.p_click / 2.0;
    Ok(RateReport {
        rate,
        qber: stats.qber,
        secret_fraction: sf,
        p_click: stats.p_click,
        herald_probability: herald,
        swap_probability: swap,
        cycle_seconds,
    })
}

/// Click-pattern probability for the repeater setup computed along the
/// unconditioned route: both swaps and both parties' measurements are
/// applied to the full eight-mode state, the joint probability of the two
/// swap heralds and the click pattern is integrated in one step, and the
/// result is divided by the swap-herald probability.  Agreement with
/// [`pattern_probability`] on the conditioned state checks that sequential
/// conditioning composes correctly.
pub fn joint_route_pattern_probability(
    p: &SystemParams,
    pattern: ClickPattern,
    first1: bool,
    first2: bool,
) -> Result<f64> {
    p.validate()?;
    let eta_m = p.eta_m();

    let pre1 = pre_bsm_state(p, 1, 1)?.relabel(&["A", "u1", "u2", "B"])?;
    let pre2 = pre_bsm_state(p, 1, 1)?.relabel(&["C", "v1", "v2", "D"])?;
    let mut joint = pre1.tensor(&pre2)?;
    joint = apply_bsm_channel(&joint, "u1", "u2", eta_m, "e1", "e2")?;
    joint = apply_bsm_channel(&joint, "v1", "v2", eta_m, "f1", "f2")?;
    joint = apply_bsm_channel(&joint, "A", "C", eta_m, "A'", "C'")?;
    joint = apply_bsm_channel(&joint, "B", "D", eta_m, "B'", "D'")?;

    let (c1, s1) = if first1 { ("e1", "e2") } else { ("e2", "e1") };
    let (c2, s2) = if first2 { ("f1", "f2") } else { ("f2", "f1") };
    let mut factors = click_factors(p.detector, c1, s1);
    factors.extend(click_factors(p.detector, c2, s2));
    for (mode, &fired) in DETECTOR_MODES.iter().zip(pattern.iter()) {
        factors.push(if fired {
            match p.detector {
                Detector::Pnrd => MeasurementFactor::one_minus_abs_sq(mode),
                Detector::Nrpd => MeasurementFactor::delta_minus_one(mode),
            }
        } else {
            MeasurementFactor::unit(mode)
        });
    }
    let joint_prob = joint.moment_integral_real(&factors)?;

    let w1 = swapped_state(p, 1, 1, first1)?.weight;
    let w2 = swapped_state(p, 1, 1, first2)?.weight;
    Ok(joint_prob / (w1 * w2))
}
