//! Temporary development probe; not part of the public example set.

use std::time::Instant;

use dlcz_repeater::link::{Detector, SystemParams};
use dlcz_repeater::qkd::{qkd_rate, Scenario};

fn main() {
    for detector in [Detector::Pnrd, Detector::Nrpd] {
        for scenario in [Scenario::Direct, Scenario::Repeater] {
            for distance in [100.0, 350.0, 600.0] {
                for pc in [0.001, 0.005, 0.02, 0.1] {
                    let p = SystemParams::new(pc, 0.5, 0.7, distance, detector).unwrap();
                    let t = Instant::now();
                    let r = qkd_rate(&p, scenario, false);
                    let ms = t.elapsed().as_secs_f64() * 1e3;
                    match r {
                        Ok(rep) => println!(
                            "{detector:?} {scenario:?} L={distance} pc={pc}: {ms:6.1} ms  rate {:.3e} qber {:.4}",
                            rep.rate, rep.qber
                        ),
                        Err(e) => println!(
                            "{detector:?} {scenario:?} L={distance} pc={pc}: {ms:6.1} ms  ERR {e}"
                        ),
                    }
                }
            }
        }
    }
}
