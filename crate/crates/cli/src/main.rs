use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use lpwan_energy::energy::{
    energy_per_bit, state_energy, Load, PowerProfile, PowerState, RxWindowCalibration, Table1Row,
    TotalColumn,
};
use lpwan_energy::phy::{time_on_air, DataRate, LoRaParams};
use lpwan_energy::sim::{self, Scenario, SimReport};
use lpwan_energy::Error;

const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (scenario schema ",
    "1",
    ", calibration schema ",
    "1",
    ")"
);

#[derive(Parser)]
#[command(name = "lpwan-energy", version, long_version = LONG_VERSION)]
#[command(about = "Energy and lifetime model of a LoRaWAN Class A sensor node")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time on air and per-bit transmit energy of one frame.
    Airtime {
        #[arg(long)]
        sf: u8,
        #[arg(long, default_value_t = 125_000)]
        bw: u32,
        /// Coding rate index, 1..=4 for 4/5..4/8.
        #[arg(long, default_value_t = 1)]
        cr: u8,
        #[arg(long)]
        payload: usize,
        #[arg(long, default_value_t = 8)]
        preamble: u16,
        #[arg(long, default_value_t = 14)]
        tx_power: i8,
    },
    /// Per-bit transmit energy over payload sizes and data rates, as CSV.
    PerBit {
        #[arg(long, default_value_t = 14)]
        tx_power: i8,
        #[arg(long, default_value_t = 51)]
        max_payload: usize,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario and write its report and event log.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Seed range N..M (end exclusive), run in parallel.
        #[arg(long, conflicts_with = "seed")]
        seeds: Option<String>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, value_enum)]
        format: Vec<Format>,
    },
    /// Rebuild the receive-window table totals from their components.
    Table1 {
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Check that a calibration file loads and its printed totals add up.
    CalibrateCheck {
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Run two scenarios and compare lifetime and energy breakdown.
    Compare {
        #[arg(long, num_args = 1, required = true)]
        scenario: Vec<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Validation(issues) = &e {
                for issue in issues {
                    eprintln!("  {issue}");
                }
            }
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(command: Command) -> lpwan_energy::Result<ExitCode> {
    let mut out = io::stdout().lock();
    match command {
        Command::Airtime {
            sf,
            bw,
            cr,
            payload,
            preamble,
            tx_power,
        } => {
            let params = LoRaParams::new(sf, bw)?
                .with_coding_rate(cr)
                .with_preamble(preamble);
            params.validate()?;
            let toa = time_on_air(&params, payload)?;
            writeln!(out, "time on air: {:.3} ms", toa * 1e3)?;
            let profile = PowerProfile::default();
            let tx = state_energy(
                &profile,
                Load::Tx {
                    power_dbm: tx_power,
                },
                toa,
            )?;
            writeln!(out, "tx energy: {:.3} mJ at {tx_power} dBm", tx * 1e3)?;
            if payload > 0 {
                let per_bit = energy_per_bit(&profile, &params, tx_power, payload)?;
                writeln!(out, "tx energy per bit: {:.3} uJ/bit", per_bit * 1e6)?;
            }
        }
        Command::PerBit {
            tx_power,
            max_payload,
            out: path,
        } => {
            let text = per_bit_csv(tx_power, max_payload)?;
            match path {
                Some(p) => fs::write(p, text)?,
                None => out.write_all(text.as_bytes())?,
            }
        }
        Command::Simulate {
            scenario,
            seed,
            seeds,
            out: dir,
            format,
        } => {
            let sc = Scenario::from_path(&scenario)?;
            let formats = if format.is_empty() {
                vec![Format::Json, Format::Csv]
            } else {
                format
            };
            fs::create_dir_all(&dir)?;
            match seeds {
                None => {
                    let report = match seed {
                        Some(s) => sim::run_with_seed(&sc, s)?,
                        None => sim::run(&sc)?,
                    };
                    write_outputs(&report, &dir, &formats)?;
                    writeln!(out, "{}", report.one_line_summary())?;
                }
                Some(range) => {
                    let (lo, hi) = parse_seed_range(&range)?;
                    let reports = run_seeds(&sc, lo..hi);
                    for (s, report) in (lo..hi).zip(reports) {
                        let report = report?;
                        let sub = dir.join(format!("seed-{s}"));
                        fs::create_dir_all(&sub)?;
                        write_outputs(&report, &sub, &formats)?;
                        writeln!(out, "seed {s}: {}", report.one_line_summary())?;
                    }
                }
            }
        }
        Command::Table1 { calibration } => {
            let cal = load_calibration(calibration.as_deref())?;
            out.write_all(format_table1(&cal.reconstruct()).as_bytes())?;
        }
        Command::CalibrateCheck { calibration } => {
            let cal = load_calibration(calibration.as_deref())?;
            let rows = cal.reconstruct();
            let bad: Vec<&Table1Row> = rows.iter().filter(|r| !r.is_consistent()).collect();
            let model = &cal.model;
            writeln!(
                out,
                "rx model: ack frame {} B, timeout {} symbols + {:.1} ms wake-up",
                model.ack_frame_bytes,
                model.timeout_symbols,
                model.wakeup_s * 1e3
            )?;
            if bad.is_empty() {
                writeln!(
                    out,
                    "calibration ok: {} rows, totals consistent",
                    rows.len()
                )?;
            } else {
                for r in &bad {
                    writeln!(
                        out,
                        "{}: printed totals disagree in {}",
                        r.dr,
                        columns(&r.mismatches)
                    )?;
                }
                return Ok(ExitCode::from(1));
            }
        }
        Command::Compare { scenario, seed } => {
            if scenario.len() != 2 {
                return Err(Error::Validation(vec![
                    lpwan_energy::error::ConfigIssue::new("--scenario", "give exactly two"),
                ]));
            }
            let mut reports = Vec::new();
            for path in &scenario {
                let sc = Scenario::from_path(path)?;
                reports.push(match seed {
                    Some(s) => sim::run_with_seed(&sc, s)?,
                    None => sim::run(&sc)?,
                });
            }
            let labels: Vec<String> = scenario
                .iter()
                .zip(&reports)
                .map(|(p, r)| label(p, r))
                .collect();
            out.write_all(format_compare(&labels, &reports).as_bytes())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn load_calibration(path: Option<&Path>) -> lpwan_energy::Result<RxWindowCalibration> {
    match path {
        Some(p) => RxWindowCalibration::from_path(p),
        None => RxWindowCalibration::from_env_or_shipped(),
    }
}

fn parse_seed_range(text: &str) -> lpwan_energy::Result<(u64, u64)> {
    let bad = || {
        Error::Validation(vec![lpwan_energy::error::ConfigIssue::new(
            "--seeds",
            format!("expected N..M with N < M, got `{text}`"),
        )])
    };
    let (a, b) = text.split_once("..").ok_or_else(bad)?;
    let lo: u64 = a.trim().parse().map_err(|_| bad())?;
    let hi: u64 = b.trim().parse().map_err(|_| bad())?;
    if lo >= hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

/// One isolated run per seed, spread over the available cores.
fn run_seeds(sc: &Scenario, seeds: std::ops::Range<u64>) -> Vec<lpwan_energy::Result<SimReport>> {
    let seeds: Vec<u64> = seeds.collect();
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(seeds.len());
    let chunk = seeds.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|&s| sim::run_with_seed(sc, s))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

fn write_outputs(report: &SimReport, dir: &Path, formats: &[Format]) -> lpwan_energy::Result<()> {
    if formats.contains(&Format::Json) {
        fs::write(dir.join("report.json"), report.to_json() + "\n")?;
    }
    if formats.contains(&Format::Csv) {
        let file = fs::File::create(dir.join("events.csv"))?;
        report.event_log.write_csv(io::BufWriter::new(file))?;
    }
    Ok(())
}

fn per_bit_csv(tx_power: i8, max_payload: usize) -> lpwan_energy::Result<String> {
    let profile = PowerProfile::default();
    let mut s = String::from("dr,sf,payload_bytes,time_on_air_ms,energy_per_bit_uJ\n");
    for dr in DataRate::ALL {
        let params = lpwan_energy::phy::datarate_params(dr);
        for len in 1..=max_payload.min(dr.max_payload()) {
            let toa = time_on_air(&params, len)?;
            let e = energy_per_bit(&profile, &params, tx_power, len)?;
            s.push_str(&format!(
                "{},{},{len},{:.3},{:.6}\n",
                dr.index(),
                dr.spreading_factor(),
                toa * 1e3,
                e * 1e6
            ));
        }
    }
    Ok(s)
}

fn columns(cols: &[TotalColumn]) -> String {
    cols.iter()
        .map(|c| match c {
            TotalColumn::AckWorst => "ACK worst",
            TotalColumn::AckBest => "ACK best",
            TotalColumn::NoAck => "NO ACK",
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.1}"))
}

fn format_table1(rows: &[Table1Row]) -> String {
    let mut s = format!(
        "{:<4}{:>9}{:>12}{:>9}{:>12}{:>11}{:>10}{:>8}\n",
        "DR", "RX1 ACK", "RX1 NO ACK", "RX2 ACK", "RX2 NO ACK", "ACK worst", "ACK best", "NO ACK"
    );
    for r in rows {
        let mark = |c: TotalColumn| if r.mismatches.contains(&c) { "*" } else { " " };
        s.push_str(&format!(
            "{:<4}{:>9}{:>12}{:>9}{:>12}{:>10}{}{:>9}{}{:>7}{}\n",
            r.dr.index(),
            cell(r.rx1_ack),
            cell(Some(r.rx1_no_ack)),
            cell(Some(r.rx2_ack)),
            cell(Some(r.rx2_no_ack)),
            cell(Some(r.ack_worst)),
            mark(TotalColumn::AckWorst),
            cell(r.ack_best),
            mark(TotalColumn::AckBest),
            cell(Some(r.no_ack)),
            mark(TotalColumn::NoAck),
        ));
    }
    let flagged: Vec<String> = rows
        .iter()
        .filter(|r| !r.is_consistent())
        .map(|r| format!("DR{} ({})", r.dr.index(), columns(&r.mismatches)))
        .collect();
    if flagged.is_empty() {
        s.push_str("all totals match the printed values\n");
    } else {
        s.push_str(&format!(
            "* mismatch with printed total: {}\n",
            flagged.join("; ")
        ));
    }
    s
}

fn label(path: &Path, r: &SimReport) -> String {
    if r.scenario.is_empty() {
        path.file_stem()
            .map_or_else(String::new, |s| s.to_string_lossy().into_owned())
    } else {
        r.scenario.clone()
    }
}

fn format_compare(labels: &[String], reports: &[SimReport]) -> String {
    let mut s = format!("{:<22}{:>20}{:>20}\n", "", labels[0], labels[1]);
    let row = |s: &mut String, name: &str, f: &dyn Fn(&SimReport) -> String| {
        s.push_str(&format!(
            "{:<22}{:>20}{:>20}\n",
            name,
            f(&reports[0]),
            f(&reports[1])
        ));
    };
    row(&mut s, "lifetime [days]", &|r| {
        format!("{:.2}", r.lifetime_or_projection_s() / 86_400.0)
    });
    row(&mut s, "average current [uA]", &|r| {
        format!("{:.3}", r.average_current_a * 1e6)
    });
    row(&mut s, "total energy [J]", &|r| {
        format!("{:.6}", r.ledger.total())
    });
    row(&mut s, "uplinks delivered", &|r| r.delivered.to_string());
    for state in PowerState::ALL {
        row(&mut s, &format!("{state} energy [J]"), &|r| {
            format!("{:.6}", r.ledger.get(state))
        });
    }
    for state in PowerState::ALL {
        row(&mut s, &format!("{state} share [%]"), &|r| {
            format!("{:.2}", 100.0 * r.ledger.share(state))
        });
    }
    let ratio = reports[1].lifetime_or_projection_s() / reports[0].lifetime_or_projection_s();
    s.push_str(&format!(
        "lifetime ratio ({} / {}): {ratio:.3}\n",
        labels[1], labels[0]
    ));
    s
}
