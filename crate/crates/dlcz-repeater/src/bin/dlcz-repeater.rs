//! Thin command-line front end over the library: one subcommand per
//! capability, shared parameter flags, and config-file support.
//!
//! Exit codes: 0 on success, 1 on usage or parameter errors, 2 on numerical
//! failures inside the models, 3 when the validation suite finds a failing
//! comparison.

use std::path::PathBuf;
use std::str::FromStr;

use clap::{ArgAction, Args, Parser, Subcommand};

use dlcz_repeater::link::{
    derived_params, herald_probability, link_fidelity, link_fidelity_closed_form,
    werner_swap_fidelity, Detector,
};
use dlcz_repeater::qkd::{qkd_rate, Scenario};
use dlcz_repeater::study::{
    emit_figures, fmt12, heralding_crossover, optimize_pc, qkd_crossover, run_sweep, sweep_csv,
    sweep_json, OutputFormat, StudyConfig,
};
use dlcz_repeater::swap::swap_metrics;
use dlcz_repeater::validate::run_validation;
use dlcz_repeater::{Error, Result};

#[derive(Parser)]
#[command(
    name = "dlcz-repeater",
    version,
    about = "Exact rate and fidelity models for DLCZ-style probabilistic quantum repeaters"
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Parameter flags shared by every subcommand.  Flags override the config
/// file, which overrides the built-in defaults.
#[derive(Args)]
struct Overrides {
    /// Excitation probability per generation attempt
    #[arg(long, global = true)]
    pc: Option<f64>,
    /// Detector efficiency
    #[arg(long = "eta-d", global = true)]
    eta_d: Option<f64>,
    /// Memory retrieval efficiency
    #[arg(long = "eta-c", global = true)]
    eta_c: Option<f64>,
    /// End-to-end distance in km
    #[arg(long = "distance-km", global = true)]
    distance_km: Option<f64>,
    /// Fiber attenuation length in km [default: 25]
    #[arg(long = "l-att-km", global = true)]
    l_att_km: Option<f64>,
    /// Signalling speed in fiber, m/s [default: 2e8]
    #[arg(long = "c-mps", global = true)]
    c_mps: Option<f64>,
    /// Detector model: pnrd or nrpd
    #[arg(long, global = true, value_parser = parse_arg::<Detector>)]
    detector: Option<Detector>,
    /// Setup: direct or repeater
    #[arg(long, global = true, value_parser = parse_arg::<Scenario>)]
    scenario: Option<Scenario>,
    /// Discard rounds where only one side's detectors fired
    #[arg(long = "exact-click", global = true, action = ArgAction::SetTrue)]
    exact_click: bool,
    /// TOML config file (flags still win)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for commands that write files
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output format: csv or json
    #[arg(long, global = true, value_parser = parse_arg::<OutputFormat>)]
    format: Option<OutputFormat>,
}

fn parse_arg<T: FromStr<Err = Error>>(s: &str) -> std::result::Result<T, String> {
    T::from_str(s).map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Heralding probability and fidelity of one elementary link spanning
    /// the configured distance
    LinkMetrics,
    /// Success probability and fidelity of the swap joining two
    /// half-distance links
    RepeaterMetrics,
    /// Secret-key rate of the configured setup
    QkdRate,
    /// Excitation probability that maximizes the key rate
    OptimalPc,
    /// Distance beyond which the repeater beats direct generation
    Crossover {
        /// Compare heralding throughput at fixed pc instead of optimized
        /// key rates
        #[arg(long)]
        heralding: bool,
    },
    /// Rate metrics over the sweep axes in the config file
    Sweep,
    /// Write the bundled figure datasets plus a JSON manifest
    Figures,
    /// Run every cross-check suite and report each comparison
    Validate,
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests arrive here too; only real parse
            // problems are usage errors.
            let code = i32::from(e.use_stderr());
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidParameter(_)
                | Error::Config(_)
                | Error::Io(_)
                | Error::UnknownMode(_)
                | Error::DuplicateMode(_) => 1,
                _ => 2,
            }
        }
    }
}

fn merged_config(overrides: &Overrides) -> Result<StudyConfig> {
    let mut config = match &overrides.config {
        Some(path) => StudyConfig::load(path)?,
        None => StudyConfig::default(),
    };
    if let Some(v) = overrides.pc {
        config.pc = v;
    }
    if let Some(v) = overrides.eta_d {
        config.eta_d = v;
    }
    if let Some(v) = overrides.eta_c {
        config.eta_c = v;
    }
    if let Some(v) = overrides.distance_km {
        config.distance_km = v;
    }
    if let Some(v) = overrides.l_att_km {
        config.l_att_km = v;
    }
    if let Some(v) = overrides.c_mps {
        config.c_mps = v;
    }
    if let Some(v) = overrides.detector {
        config.detector = v;
    }
    if let Some(v) = overrides.scenario {
        config.scenario = v;
    }
    if overrides.exact_click {
        config.exact_click = true;
    }
    if let Some(v) = &overrides.out {
        config.out = Some(v.clone());
    }
    if let Some(v) = overrides.format {
        config.format = v;
    }
    Ok(config)
}

/// Prints one scalar record as `quantity,value` CSV rows or a JSON object.
fn print_record(format: OutputFormat, pairs: &[(&str, serde_json::Value)]) {
    match format {
        OutputFormat::Csv => {
            println!("quantity,value");
            for (key, value) in pairs {
                let cell = match value {
                    serde_json::Value::Number(n) => {
                        n.as_f64().map(fmt12).unwrap_or_else(|| n.to_string())
                    }
                    serde_json::Value::String(s) => s.clone(),
                    serde_json::Value::Bool(v) => v.to_string(),
                    serde_json::Value::Null => String::new(),
                    other => other.to_string(),
                };
                println!("{key},{cell}");
            }
        }
        OutputFormat::Json => {
            let map: serde_json::Map<String, serde_json::Value> = pairs
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect();
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::Value::Object(map))
                    .expect("plain scalars always serialize")
            );
        }
    }
}

fn num(x: f64) -> serde_json::Value {
    serde_json::Number::from_f64(x)
        .map(serde_json::Value::Number)
        .unwrap_or(serde_json::Value::Null)
}

fn execute(cli: Cli) -> Result<i32> {
    let config = merged_config(&cli.overrides)?;
    let params = config.params()?;
    let format = config.format;

    match cli.command {
        Command::LinkMetrics => {
            let span = params.distance_km;
            let d = derived_params(&params, span);
            print_record(
                format,
                &[
                    ("detector", params.detector.name().into()),
                    ("segment_km", num(span)),
                    ("herald_probability", num(herald_probability(&params, span))),
                    ("fidelity", num(link_fidelity(&params, span)?)),
                    (
                        "fidelity_closed_form",
                        num(link_fidelity_closed_form(&params, span)),
                    ),
                    ("eta_fiber_half_segment", num(d.eta)),
                    ("eta_s", num(d.eta_s)),
                    ("eta_m", num(d.eta_m)),
                    ("alpha", num(d.alpha)),
                ],
            );
        }
        Command::RepeaterMetrics => {
            let m = swap_metrics(&params)?;
            let half = params.distance_km / 2.0;
            print_record(
                format,
                &[
                    ("detector", params.detector.name().into()),
                    ("distance_km", num(params.distance_km)),
                    ("link_herald_probability", num(herald_probability(&params, half))),
                    ("link_fidelity", num(link_fidelity(&params, half)?)),
                    ("p_m", num(m.p_m)),
                    ("fidelity", num(m.fidelity)),
                    ("vacuum_weight", num(m.vacuum_weight)),
                    ("p_m_purified", num(m.p_m_purified)),
                    ("fidelity_purified", num(m.fidelity_purified)),
                    (
                        "fidelity_werner_model",
                        num(werner_swap_fidelity(link_fidelity(&params, half)?)),
                    ),
                ],
            );
        }
        Command::QkdRate => {
            let r = qkd_rate(&params, config.scenario, config.exact_click)?;
            print_record(
                format,
                &[
                    ("scenario", config.scenario.name().into()),
                    ("detector", params.detector.name().into()),
                    ("rate_bps", num(r.rate)),
                    ("qber", num(r.qber)),
                    ("secret_fraction", num(r.secret_fraction)),
                    ("p_click", num(r.p_click)),
                    ("herald_probability", num(r.herald_probability)),
                    (
                        "swap_probability",
                        r.swap_probability.map_or(serde_json::Value::Null, num),
                    ),
                    ("cycle_seconds", num(r.cycle_seconds)),
                ],
            );
        }
        Command::OptimalPc => match optimize_pc(
            &params,
            config.scenario,
            config.exact_click,
            &config.optimizer,
        ) {
            Ok(best) => print_record(
                format,
                &[
                    ("scenario", config.scenario.name().into()),
                    ("detector", params.detector.name().into()),
                    ("pc_opt", num(best.pc)),
                    ("rate_bps", num(best.report.rate)),
                    ("qber", num(best.report.qber)),
                    ("secret_fraction", num(best.report.secret_fraction)),
                    ("evaluations", best.evaluations.into()),
                    ("refined_by_grid", best.refined_by_grid.into()),
                    ("searched_pc_min", num(config.optimizer.pc_min)),
                    ("searched_pc_max", num(config.optimizer.pc_max)),
                ],
            ),
            Err(Error::NoPositiveRate { lo, hi }) => print_record(
                format,
                &[
                    ("scenario", config.scenario.name().into()),
                    ("detector", params.detector.name().into()),
                    ("pc_opt", serde_json::Value::Null),
                    ("rate_bps", num(0.0)),
                    ("searched_pc_min", num(lo)),
                    ("searched_pc_max", num(hi)),
                    (
                        "note",
                        "no positive key rate anywhere in the searched range".into(),
                    ),
                ],
            ),
            Err(e) => return Err(e),
        },
        Command::Crossover { heralding } => {
            if heralding {
                let cross = heralding_crossover(&params, &config.crossover)?;
                print_record(
                    format,
                    &[
                        ("detector", params.detector.name().into()),
                        ("comparison", "heralding throughput at fixed pc".into()),
                        ("pc", num(params.pc)),
                        (
                            "crossover_km",
                            cross.crossing_km.map_or(serde_json::Value::Null, num),
                        ),
                        ("searched_lo_km", num(cross.searched_lo_km)),
                        ("searched_hi_km", num(cross.searched_hi_km)),
                    ],
                );
            } else {
                let cross = qkd_crossover(
                    &params,
                    config.exact_click,
                    &config.crossover,
                    &config.optimizer,
                )?;
                print_record(
                    format,
                    &[
                        ("detector", params.detector.name().into()),
                        ("comparison", "key rates, each at its optimal pc".into()),
                        (
                            "crossover_km",
                            cross.crossing_km.map_or(serde_json::Value::Null, num),
                        ),
                        ("searched_lo_km", num(cross.searched_lo_km)),
                        ("searched_hi_km", num(cross.searched_hi_km)),
                        (
                            "pc_direct",
                            cross.direct.map_or(serde_json::Value::Null, |o| num(o.pc)),
                        ),
                        (
                            "rate_direct_bps",
                            num(cross.direct.map_or(0.0, |o| o.report.rate)),
                        ),
                        (
                            "pc_repeater",
                            cross
                                .repeater
                                .map_or(serde_json::Value::Null, |o| num(o.pc)),
                        ),
                        (
                            "rate_repeater_bps",
                            num(cross.repeater.map_or(0.0, |o| o.report.rate)),
                        ),
                    ],
                );
            }
        }
        Command::Sweep => {
            let axes = config.axes()?;
            if axes.is_empty() {
                return Err(Error::Config(
                    "sweep needs at least one [[sweep]] axis in the config file".into(),
                ));
            }
            let rows = run_sweep(&params, &[config.scenario], config.exact_click, &axes)?;
            let rendered = match format {
                OutputFormat::Csv => sweep_csv(&axes, &rows),
                OutputFormat::Json => sweep_json(&rows)?,
            };
            match &config.out {
                Some(dir) => {
                    std::fs::create_dir_all(dir)?;
                    let name = match format {
                        OutputFormat::Csv => "sweep.csv",
                        OutputFormat::Json => "sweep.json",
                    };
                    let path = dir.join(name);
                    std::fs::write(&path, rendered)?;
                    eprintln!("wrote {} rows to {}", rows.len(), path.display());
                }
                None => print!("{rendered}"),
            }
        }
        Command::Figures => {
            let out_dir = config
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("figures"));
            let manifest = emit_figures(&params, config.exact_click, &out_dir)?;
            for file in &manifest.files {
                eprintln!(
                    "wrote {} ({} rows, {:.1} s)",
                    out_dir.join(&file.name).display(),
                    file.rows,
                    file.seconds
                );
            }
            eprintln!(
                "wrote {} (total {:.1} s)",
                out_dir.join("manifest.json").display(),
                manifest.total_seconds
            );
        }
        Command::Validate => {
            let report = run_validation(&params)?;
            match format {
                OutputFormat::Csv => print!("{}", report.render()),
                OutputFormat::Json => println!(
                    "{}",
                    serde_json::to_string_pretty(&report)
                        .map_err(|e| Error::Config(format!("could not serialize report: {e}")))?
                ),
            }
            if !report.passed() {
                return Ok(3);
            }
        }
    }
    Ok(0)
}
