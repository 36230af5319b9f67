//! Independent brute-force route: everything recomputed in a truncated
//! photon-number basis.
//!
//! The main engine never leaves characteristic-function space; this
//! module never enters it.  Sources become explicit state vectors, loss
//! becomes a Kraus sum, beam splitters become isometries between number
//! bases, detectors become POVM elements, and metrics become traces of
//! dense matrices.  [`oracle::calibration_rows`] runs both routes over a
//! fixed parameter grid and reports every deviation, which is the
//! backbone of the crate's self-validation.
//!
//! The basis cutoff is chosen per excitation probability by
//! [`oracle::cutoff_for`] so the neglected source tail is far below the
//! comparison tolerances, and a dedicated test checks that enlarging the
//! cutoff does not move any reported quantity.

pub mod channels;
pub mod oracle;
pub mod space;

pub use oracle::{
    calibration_rows, cutoff_for, ideal_bell_pair, link_oracle, pattern_probabilities,
    qkd_oracle, qkd_stats_from_pair_states, source_pair, swap_oracle, CalibrationRow,
    HeraldOutcome, LinkOracle, OracleSwapped, CALIBRATION_DISTANCES_KM, CALIBRATION_PCS,
    MAX_CUTOFF, QKD_DIRECT_MAX_CUTOFF, QKD_REPEATER_CUTOFF, TAIL_THRESHOLD,
};
