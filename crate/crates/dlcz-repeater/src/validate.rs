//! Self-validation: one command that exercises every independent route to
//! the same numbers and reports each comparison.
//!
//! The suite covers four kinds of evidence:
//!
//! 1. the truncated Fock-space oracle against the Gaussian engine at every
//!    calibration point (the two share no numerical machinery);
//! 2. Gaussian moment integrals against hand-derived Wick expansions, plus
//!    normalization and detector-pattern symmetries of conditioned states;
//! 3. the published closed-form constants against constants extracted from
//!    the engine states, including deliberately perturbed readings that
//!    prove the comparisons have the power to catch a mis-set constant
//!    (each tabulated constant also carries an alternate, typographically
//!    plausible reading whose disagreement is reported);
//! 4. informational notes on rate magnitudes that are frequently quoted
//!    alongside this protocol but are inconsistent with its own formulas.
//!
//! Checks marked informational never affect the overall verdict.

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::array;
use num_complex::Complex64 as C64;

use crate::closed_form::{
    max_pointwise_deviation, nrpd_reading_report, pnrd_swapped,
};
use crate::error::Result;
use crate::fock;
use crate::gaussian::{CharFun, GaussianTerm, MeasurementFactor};
use crate::link::{post_herald_charfun, Detector, SystemParams};
use crate::qkd::Scenario;
use crate::study::{optimize_pc, OptimizeOptions};
use crate::swap::{swapped_state, SwappedState};

/// One executed comparison.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ValidationCheck {
    pub label: String,
    pub passed: bool,
    /// Informational notes report context (alternate readings, magnitude
    /// discrepancies in commonly quoted figures) and never fail the run.
    pub informational: bool,
    pub detail: String,
}

/// A group of related checks.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ValidationSection {
    pub name: String,
    pub checks: Vec<ValidationCheck>,
}

/// Everything the validation run produced.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ValidationReport {
    pub sections: Vec<ValidationSection>,
    pub seconds: f64,
}

impl ValidationReport {
    /// True when every non-informational check passed.
    pub fn passed(&self) -> bool {
        self.sections
            .iter()
            .flat_map(|s| &s.checks)
            .all(|c| c.passed || c.informational)
    }

    /// Human-readable rendering, one line per check.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut failed = 0usize;
        let mut notes = 0usize;
        let mut total = 0usize;
        for section in &self.sections {
            let _ = writeln!(out, "{}", section.name);
            for check in &section.checks {
                let tag = if check.informational {
                    notes += 1;
                    "note"
                } else if check.passed {
                    "PASS"
                } else {
                    failed += 1;
                    "FAIL"
                };
                total += 1;
                let _ = writeln!(out, "  [{tag}] {} — {}", check.label, check.detail);
            }
        }
        let _ = writeln!(
            out,
            "{total} checks: {} passed, {failed} failed, {notes} notes ({:.1} s)",
            total - failed - notes,
            self.seconds
        );
        out
    }
}

struct SectionBuilder {
    section: ValidationSection,
}

impl SectionBuilder {
    fn new(name: &str) -> Self {
        SectionBuilder {
            section: ValidationSection {
                name: name.to_string(),
                checks: Vec::new(),
            },
        }
    }

    fn check(&mut self, label: &str, passed: bool, detail: String) {
        self.section.checks.push(ValidationCheck {
            label: label.to_string(),
            passed,
            informational: false,
            detail,
        });
    }

    fn note(&mut self, label: &str, detail: String) {
        self.section.checks.push(ValidationCheck {
            label: label.to_string(),
            passed: true,
            informational: true,
            detail,
        });
    }

    fn done(self) -> ValidationSection {
        self.section
    }
}

/// Runs the whole suite.  `base` supplies the efficiencies and fiber
/// constants; each check picks its own excitation probabilities, distances
/// and detector models.
pub fn run_validation(base: &SystemParams) -> Result<ValidationReport> {
    let started = Instant::now();
    let sections = vec![
        oracle_section(base)?,
        wick_section()?,
        symmetry_section(base)?,
        reading_section(base)?,
        magnitude_section(base)?,
    ];
    Ok(ValidationReport {
        sections,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Fock-space oracle against the Gaussian engine, aggregated per quantity
/// over the full calibration grid.
fn oracle_section(base: &SystemParams) -> Result<ValidationSection> {
    let mut b = SectionBuilder::new("fock-oracle calibration");
    let rows = fock::calibration_rows(base.eta_d, base.eta_c)?;
    let mut order: Vec<&'static str> = Vec::new();
    for row in &rows {
        if !order.contains(&row.quantity) {
            order.push(row.quantity);
        }
    }
    for quantity in order {
        let group: Vec<_> = rows.iter().filter(|r| r.quantity == quantity).collect();
        let worst = group
            .iter()
            .max_by(|a, b| a.rel_dev.partial_cmp(&b.rel_dev).expect("finite devs"))
            .expect("non-empty group");
        b.check(
            quantity,
            group.iter().all(|r| r.pass()),
            format!(
                "{} points, worst rel dev {:.2e} (tol {:.0e}) at pc={}, {} km, {}",
                group.len(),
                worst.rel_dev,
                worst.tol,
                worst.pc,
                worst.distance_km,
                worst.detector.name()
            ),
        );
    }
    Ok(b.done())
}

/// Gaussian moment integrals against hand-derived Wick expansions on states
/// simple enough to integrate on paper.
fn wick_section() -> Result<ValidationSection> {
    let mut b = SectionBuilder::new("moment integrals vs. Wick expansions");
    let c = |x: f64| C64::new(x, 0.0);

    // Single mode, chi(zeta) = exp(-s |zeta|^2): the anti-normal picture of
    // a thermal state with mean occupation s - 1.
    let s = 1.9;
    let nbar = s - 1.0;
    let thermal = CharFun::new(
        vec!["m".into()],
        vec![GaussianTerm::new(c(1.0), array![[c(s)]], vec![])?],
    )?;
    let cases = [
        (
            "vacuum projection",
            MeasurementFactor::unit("m"),
            1.0 / (nbar + 1.0),
        ),
        (
            "one-photon projection",
            MeasurementFactor::one_minus_abs_sq("m"),
            nbar / ((nbar + 1.0) * (nbar + 1.0)),
        ),
        ("trace", MeasurementFactor::delta("m"), 1.0),
        (
            "threshold click",
            MeasurementFactor::delta_minus_one("m"),
            nbar / (nbar + 1.0),
        ),
    ];
    let mut worst = 0.0f64;
    for (_, factor, expected) in &cases {
        let got = thermal.moment_integral_real(std::slice::from_ref(factor))?;
        worst = worst.max((got - expected).abs());
    }
    b.check(
        "single-mode kernels on a thermal state",
        worst < 1e-12,
        format!("4 kernels, worst abs dev {worst:.2e} (tol 1e-12)"),
    );

    // Two correlated modes, chi = exp(-zeta^dag E zeta) with E = [[s, g],
    // [g, s]]: fourth-moment kernels need the full Wick pairing
    //   <|za|^2 |zb|^2> = inv_aa inv_bb + inv_ab inv_ba.
    let (s2, g) = (1.7, 0.4);
    let det = s2 * s2 - g * g;
    let (inv_d, inv_o) = (s2 / det, -g / det);
    let pair = CharFun::new(
        vec!["a".into(), "b".into()],
        vec![GaussianTerm::new(
            c(1.0),
            array![[c(s2), c(g)], [c(g), c(s2)]],
            vec![],
        )?],
    )?;
    let both_vacuum = pair.moment_integral_real(&[
        MeasurementFactor::unit("a"),
        MeasurementFactor::unit("b"),
    ])?;
    let both_single = pair.moment_integral_real(&[
        MeasurementFactor::one_minus_abs_sq("a"),
        MeasurementFactor::one_minus_abs_sq("b"),
    ])?;
    let expected_single =
        (1.0 - 2.0 * inv_d + inv_d * inv_d + inv_o * inv_o) / det;
    let mut worst2 = (both_vacuum - 1.0 / det).abs().max((both_single - expected_single).abs());
    for sign in [1i8, -1] {
        let bell = pair.moment_integral_real(&[MeasurementFactor::bell("a", "b", sign)])?;
        let expected_bell = (1.0 - (inv_d + f64::from(sign) * inv_o)) / det;
        worst2 = worst2.max((bell - expected_bell).abs());
    }
    b.check(
        "two-mode kernels on a correlated Gaussian",
        worst2 < 1e-12,
        format!("4 kernels, worst abs dev {worst2:.2e} (tol 1e-12)"),
    );
    Ok(b.done())
}

/// Normalization of conditioned states and the symmetries of the swap:
/// which detector clicked may flip the heralded Bell sign but must not
/// change the success probability.
fn symmetry_section(base: &SystemParams) -> Result<ValidationSection> {
    let mut b = SectionBuilder::new("normalization and detector-pattern symmetry");
    for detector in [Detector::Pnrd, Detector::Nrpd] {
        let mut p = *base;
        p.detector = detector;
        p = p.with_pc(0.01)?.with_distance_km(350.0)?;

        let mut worst_norm = 0.0f64;
        for sign in [1i8, -1] {
            let link = post_herald_charfun(&p, p.distance_km, sign)?;
            worst_norm = worst_norm.max((link.value_at_zero() - C64::new(1.0, 0.0)).norm());
        }
        let mut weights = Vec::new();
        let mut signs_ok = true;
        for j in [1i8, -1] {
            for k in [1i8, -1] {
                for first in [true, false] {
                    let SwappedState { state, weight, sign } = swapped_state(&p, j, k, first)?;
                    worst_norm =
                        worst_norm.max((state.value_at_zero() - C64::new(1.0, 0.0)).norm());
                    weights.push(weight);
                    signs_ok &= sign == j * k * if first { -1 } else { 1 };
                }
            }
        }
        let w_mean = weights.iter().sum::<f64>() / weights.len() as f64;
        let w_spread = weights
            .iter()
            .map(|w| (w - w_mean).abs())
            .fold(0.0, f64::max)
            / w_mean;
        b.check(
            &format!("{} conditioned states are normalized", detector.name()),
            worst_norm < 1e-9,
            format!("10 states, worst |chi(0) - 1| = {worst_norm:.2e} (tol 1e-9)"),
        );
        b.check(
            &format!("{} swap pattern independence", detector.name()),
            w_spread < 1e-9 && signs_ok,
            format!(
                "8 input/pattern combinations: weight spread {w_spread:.2e} (tol 1e-9), sign table {}",
                if signs_ok { "consistent" } else { "BROKEN" }
            ),
        );
    }
    Ok(b.done())
}

/// Closed-form constants against the engine, plus perturbation self-tests
/// proving the comparisons can catch a wrong constant, plus the alternate
/// readings of the threshold-detector table.
fn reading_section(base: &SystemParams) -> Result<ValidationSection> {
    let mut b = SectionBuilder::new("closed-form constants vs. engine");

    // Exact-counting closed form: pointwise agreement of the conditioned
    // swapped state over a parameter grid.
    let mut worst = (0.0f64, 0.0, 0.0);
    for &pc in &[0.005, 0.01, 0.02] {
        for &km in &[50.0, 200.0, 350.0] {
            let mut p = *base;
            p.detector = Detector::Pnrd;
            let p = p.with_pc(pc)?.with_distance_km(km)?;
            let sw = swapped_state(&p, 1, 1, true)?;
            let dev = max_pointwise_deviation(&sw.state, &pnrd_swapped(&p, sw.sign)?)?;
            if dev > worst.0 {
                worst = (dev, pc, km);
            }
        }
    }
    b.check(
        "pnrd closed form, pointwise",
        worst.0 < 1e-9,
        format!(
            "9 parameter points, worst |engine - closed| = {:.2e} (tol 1e-9) at pc={}, {} km",
            worst.0, worst.1, worst.2
        ),
    );

    // Sensitivity: the same comparison must light up when the state it is
    // fed drifts by ten parts per million in the excitation probability.
    {
        let mut p = *base;
        p.detector = Detector::Pnrd;
        let p = p.with_pc(0.01)?.with_distance_km(350.0)?;
        let sw = swapped_state(&p, 1, 1, true)?;
        let drifted = p.with_pc(0.01 * (1.0 + 1e-5))?;
        let dev = max_pointwise_deviation(&sw.state, &pnrd_swapped(&drifted, sw.sign)?)?;
        b.check(
            "pnrd pointwise check detects a 1e-5 drift",
            dev > 1e-9,
            format!("deliberate drift shows as {dev:.2e} > 1e-9"),
        );
    }

    // Threshold-detector constants: the resolved reading of each tabulated
    // constant must match the engine; the alternate reading of each
    // ambiguous constant is reported for the record.
    let mut p = *base;
    p.detector = Detector::Nrpd;
    let p = p.with_pc(0.01)?.with_distance_km(350.0)?;
    let readings = nrpd_reading_report(&p)?;
    let tol = 1e-6;
    let worst_row = readings
        .iter()
        .max_by(|a, b| {
            a.resolved_rel_dev
                .partial_cmp(&b.resolved_rel_dev)
                .expect("finite devs")
        })
        .expect("non-empty report");
    b.check(
        "nrpd resolved constants match the engine",
        readings.iter().all(|r| r.resolved_rel_dev < tol),
        format!(
            "{} constants, worst rel dev {:.2e} (tol {:.0e}) on `{}`",
            readings.len(),
            worst_row.resolved_rel_dev,
            tol,
            worst_row.constant
        ),
    );
    let perturbed_detectable = readings.iter().all(|r| {
        let perturbed = r.resolved_value * (1.0 + 5e-5);
        (perturbed - r.engine_value).abs() / r.engine_value.abs().max(f64::MIN_POSITIVE) > tol
    });
    b.check(
        "nrpd constant check detects a 5e-5 mis-set",
        perturbed_detectable,
        "every constant, perturbed by 5e-5, exceeds the 1e-6 tolerance".to_string(),
    );
    for r in &readings {
        if r.alternate_rel_dev > tol {
            b.note(
                &format!("alternate reading of `{}`", r.constant),
                format!(
                    "{}: alternate value {:.6e} differs from the engine by {:.2e}; \
                     resolved value {:.6e} differs by {:.2e} and is the one implemented",
                    r.description,
                    r.alternate_value,
                    r.alternate_rel_dev,
                    r.resolved_value,
                    r.resolved_rel_dev
                ),
            );
        }
    }
    Ok(b.done())
}

/// Rate-magnitude notes: the repeater rate at 400 km, maximized over the
/// excitation probability, against the memory-count figures often quoted
/// for this protocol.  Informational only — the model is self-consistent;
/// the quoted figures are not consistent with the rate formula they
/// accompany.
fn magnitude_section(base: &SystemParams) -> Result<ValidationSection> {
    let mut b = SectionBuilder::new("rate-magnitude notes");
    let mut p = *base;
    p.detector = Detector::Nrpd;
    let p = p.with_distance_km(400.0)?;
    let best = optimize_pc(&p, Scenario::Repeater, false, &OptimizeOptions::default())?;
    let pairs_for_1kbps = 1000.0 / best.report.rate;
    b.note(
        "repeater rate at 400 km (nrpd, optimal pc)",
        format!(
            "R2 = {:.3e} bit/s per memory pair at pc = {:.4}; 1 kbit/s therefore needs \
             ~{:.1e} memory pairs, about three orders of magnitude more than the \
             commonly quoted 3e4 — that figure is inconsistent with the rate \
             formula it accompanies",
            best.report.rate, best.pc, pairs_for_1kbps
        ),
    );
    Ok(b.done())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The cheap sections (everything except the oracle grid and the rate
    /// note, which the calibration integration test and the acceptance
    /// suite cover) must pass and render one line per check.
    #[test]
    fn cheap_sections_pass_and_render() {
        let base = SystemParams::new(0.01, 0.5, 0.7, 350.0, Detector::Pnrd).unwrap();
        let report = ValidationReport {
            sections: vec![
                wick_section().unwrap(),
                symmetry_section(&base).unwrap(),
                reading_section(&base).unwrap(),
            ],
            seconds: 0.0,
        };
        let rendered = report.render();
        assert!(report.passed(), "failures:\n{rendered}");
        let checks: usize = report.sections.iter().map(|s| s.checks.len()).sum();
        assert!(checks >= 8, "unexpectedly few checks:\n{rendered}");
        assert!(rendered.contains("[PASS]"));
        assert!(
            rendered.contains("alternate reading"),
            "the alternate readings of the threshold table must be reported:\n{rendered}"
        );
    }

    /// A failing check must flip the overall verdict; informational notes
    /// must not.
    #[test]
    fn verdict_logic_distinguishes_failures_from_notes() {
        let mut b = SectionBuilder::new("synthetic");
        b.check("good", true, "ok".into());
        b.note("context", "ignored".into());
        let mut report = ValidationReport {
            sections: vec![b.done()],
            seconds: 0.0,
        };
        assert!(report.passed());
        report.sections[0].checks.push(ValidationCheck {
            label: "bad".into(),
            passed: false,
            informational: false,
            detail: "boom".into(),
        });
        assert!(!report.passed());
        assert!(report.render().contains("[FAIL] bad"));
    }
}
