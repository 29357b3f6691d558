//! Measured Rx window energies per uplink data rate and the arithmetic that
//! rebuilds the transaction totals from them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PowerProfile;
use crate::error::{from_json_str, ConfigIssue, Error, Result};
use crate::phy::{datarate_params, time_on_air, DataRate};

pub const CALIBRATION_SCHEMA_VERSION: u32 = 1;

/// Environment variable naming a calibration file that replaces the shipped one.
pub const CALIBRATION_ENV: &str = "LPWAN_ENERGY_CALIBRATION";

/// Printed totals may differ from the component sums by rounding only.
pub const TOTAL_TOLERANCE_MJ: f64 = 0.05 + 1e-9;

const SHIPPED: &str = include_str!("../../data/table1_calibration.json");

/// Which receive window, if any, carried the downlink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RxOutcome {
    AckRx1,
    AckRx2,
    NoAck,
}

/// On-disk calibration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationFile {
    pub version: u32,
    #[serde(default = "default_unit")]
    pub unit: String,
    #[serde(default)]
    pub source: String,
    pub rows: Vec<CalibrationRow>,
    #[serde(default)]
    pub rx_model: RxWindowModel,
}

fn default_unit() -> String {
    "mJ".to_owned()
}

/// One table row, transcribed as printed. Totals are optional cross-checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationRow {
    pub dr: DataRate,
    pub rx1_ack: Option<f64>,
    pub rx1_no_ack: f64,
    pub rx2_ack: f64,
    pub rx2_no_ack: f64,
    #[serde(default)]
    pub total_ack_worst: Option<f64>,
    #[serde(default)]
    pub total_ack_best: Option<f64>,
    #[serde(default)]
    pub total_no_ack: Option<f64>,
}

/// Duration model of a receive window, used for the simulated timeline and
/// for profile-derived energies where the table has no measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RxWindowModel {
    /// PHY length of a bare ACK downlink (MHDR + FHDR + MIC).
    pub ack_frame_bytes: usize,
    /// Symbols the radio listens for a preamble before timing out.
    pub timeout_symbols: f64,
    /// Fixed radio wake-up and settling time per window.
    pub wakeup_s: f64,
}

impl Default for RxWindowModel {
    fn default() -> Self {
        RxWindowModel {
            ack_frame_bytes: 12,
            timeout_symbols: 4.5,
            wakeup_s: 9.5e-3,
        }
    }
}

impl RxWindowModel {
    pub fn ack_duration(&self, dr: DataRate) -> Result<f64> {
        time_on_air(&datarate_params(dr).downlink(), self.ack_frame_bytes)
    }

    pub fn timeout_duration(&self, dr: DataRate) -> f64 {
        self.wakeup_s + self.timeout_symbols * datarate_params(dr).symbol_duration()
    }

    pub fn window_duration(&self, dr: DataRate, ack: bool) -> Result<f64> {
        if ack {
            self.ack_duration(dr)
        } else {
            Ok(self.timeout_duration(dr))
        }
    }

    /// Energy in mJ of one window computed from the profile's Rx current.
    pub fn profile_energy_mj(
        &self,
        profile: &PowerProfile,
        dr: DataRate,
        ack: bool,
    ) -> Result<f64> {
        let seconds = self.window_duration(dr, ack)?;
        Ok(profile.supply_voltage * profile.rx_current * seconds * 1e3)
    }
}

/// Validated per-DR Rx window energies (mJ).
#[derive(Debug, Clone, PartialEq)]
pub struct RxWindowCalibration {
    rows: Vec<CalibrationRow>,
    rx2_ack: f64,
    rx2_no_ack: f64,
    pub model: RxWindowModel,
}

/// Energy of the receive windows of one transaction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RxEnergy {
    pub rx1_mj: f64,
    pub rx2_mj: Option<f64>,
    /// True when the RX1 ACK value came from the profile instead of the table.
    pub profile_derived: bool,
}

impl RxEnergy {
    pub fn total_mj(&self) -> f64 {
        self.rx1_mj + self.rx2_mj.unwrap_or(0.0)
    }
}

impl RxWindowCalibration {
    pub fn shipped() -> Self {
        Self::from_json(SHIPPED).expect("shipped calibration is valid")
    }

    pub fn shipped_json() -> &'static str {
        SHIPPED
    }

    /// The file named by [`CALIBRATION_ENV`] when set, otherwise the shipped table.
    pub fn from_env_or_shipped() -> Result<Self> {
        match std::env::var_os(CALIBRATION_ENV) {
            Some(path) => Self::from_path(Path::new(&path)),
            None => Ok(Self::shipped()),
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CalibrationFile = from_json_str(text)?;
        Self::from_file(file)
    }

    pub fn from_file(file: CalibrationFile) -> Result<Self> {
        let issues = file_issues(&file);
        if !issues.is_empty() {
            return Err(Error::Validation(issues));
        }
        let mut rows = file.rows;
        rows.sort_by_key(|r| r.dr);
        let rx2_ack = rows[0].rx2_ack;
        let rx2_no_ack = rows[0].rx2_no_ack;
        Ok(RxWindowCalibration {
            rows,
            rx2_ack,
            rx2_no_ack,
            model: file.rx_model,
        })
    }

    pub fn to_file(&self) -> CalibrationFile {
        CalibrationFile {
            version: CALIBRATION_SCHEMA_VERSION,
            unit: default_unit(),
            source: String::new(),
            rows: self.rows.clone(),
            rx_model: self.model,
        }
    }

    pub fn row(&self, dr: DataRate) -> &CalibrationRow {
        &self.rows[usize::from(dr.index())]
    }

    pub fn rows(&self) -> &[CalibrationRow] {
        &self.rows
    }

    pub fn rx1_ack(&self, dr: DataRate) -> Option<f64> {
        self.row(dr).rx1_ack
    }

    pub fn rx1_no_ack(&self, dr: DataRate) -> f64 {
        self.row(dr).rx1_no_ack
    }

    pub fn rx2_ack(&self) -> f64 {
        self.rx2_ack
    }

    pub fn rx2_no_ack(&self) -> f64 {
        self.rx2_no_ack
    }

    /// Table reconstruction with every computed total checked against the
    /// printed one.
    pub fn reconstruct(&self) -> Vec<Table1Row> {
        self.rows.iter().map(Table1Row::from_row).collect()
    }
}

fn file_issues(file: &CalibrationFile) -> Vec<ConfigIssue> {
    let mut issues = Vec::new();
    if file.version != CALIBRATION_SCHEMA_VERSION {
        issues.push(ConfigIssue::new(
            "version",
            format!(
                "expected {CALIBRATION_SCHEMA_VERSION}, got {}",
                file.version
            ),
        ));
    }
    if file.unit != "mJ" {
        issues.push(ConfigIssue::new("unit", "only mJ is supported"));
    }
    let mut seen = [false; 6];
    for (i, row) in file.rows.iter().enumerate() {
        let key = |field: &str| format!("rows[{i}].{field}");
        let idx = usize::from(row.dr.index());
        if seen[idx] {
            issues.push(ConfigIssue::new(
                key("dr"),
                format!("duplicate row for {}", row.dr),
            ));
        }
        seen[idx] = true;
        let values = [
            ("rx1_ack", row.rx1_ack),
            ("rx1_no_ack", Some(row.rx1_no_ack)),
            ("rx2_ack", Some(row.rx2_ack)),
            ("rx2_no_ack", Some(row.rx2_no_ack)),
        ];
        for (field, value) in values {
            if let Some(v) = value {
                if !(v.is_finite() && v > 0.0) {
                    issues.push(ConfigIssue::new(key(field), "must be positive"));
                }
            }
        }
        if let Some(ack) = row.rx1_ack {
            if ack < row.rx1_no_ack {
                issues.push(ConfigIssue::new(
                    key("rx1_ack"),
                    "ACK energy below NO ACK energy",
                ));
            }
        }
        if row.rx2_ack < row.rx2_no_ack {
            issues.push(ConfigIssue::new(
                key("rx2_ack"),
                "ACK energy below NO ACK energy",
            ));
        }
        if let Some(first) = file.rows.first() {
            if row.rx2_ack != first.rx2_ack || row.rx2_no_ack != first.rx2_no_ack {
                issues.push(ConfigIssue::new(
                    key("rx2_ack"),
                    "RX2 energies must be identical for every data rate",
                ));
            }
        }
    }
    for (idx, present) in seen.iter().enumerate() {
        if !present {
            issues.push(ConfigIssue::new("rows", format!("missing row for DR{idx}")));
        }
    }
    let m = &file.rx_model;
    if m.ack_frame_bytes == 0 || m.ack_frame_bytes > 51 {
        issues.push(ConfigIssue::new(
            "rx_model.ack_frame_bytes",
            "must be in 1..=51",
        ));
    }
    if !(m.timeout_symbols.is_finite() && m.timeout_symbols > 0.0) {
        issues.push(ConfigIssue::new(
            "rx_model.timeout_symbols",
            "must be positive",
        ));
    }
    if !(m.wakeup_s.is_finite() && m.wakeup_s >= 0.0) {
        issues.push(ConfigIssue::new(
            "rx_model.wakeup_s",
            "must be non-negative",
        ));
    }
    issues
}

/// The three total columns of the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TotalColumn {
    AckWorst,
    AckBest,
    NoAck,
}

/// One reconstructed row: components as loaded plus recomputed totals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Row {
    pub dr: DataRate,
    pub rx1_ack: Option<f64>,
    pub rx1_no_ack: f64,
    pub rx2_ack: f64,
    pub rx2_no_ack: f64,
    /// rx1_no_ack + rx2_ack: ACK arrives in the second window.
    pub ack_worst: f64,
    /// rx1_ack: ACK arrives in the first window, RX2 is never opened.
    pub ack_best: Option<f64>,
    /// rx1_no_ack + rx2_no_ack.
    pub no_ack: f64,
    pub mismatches: Vec<TotalColumn>,
}

impl Table1Row {
    fn from_row(row: &CalibrationRow) -> Self {
        let ack_worst = row.rx1_no_ack + row.rx2_ack;
        let ack_best = row.rx1_ack;
        let no_ack = row.rx1_no_ack + row.rx2_no_ack;
        let mut mismatches = Vec::new();
        let differs = |computed: Option<f64>, printed: Option<f64>| match (computed, printed) {
            (Some(c), Some(p)) => (c - p).abs() > TOTAL_TOLERANCE_MJ,
            (None, Some(_)) => true,
            _ => false,
        };
        if differs(Some(ack_worst), row.total_ack_worst) {
            mismatches.push(TotalColumn::AckWorst);
        }
        if differs(ack_best, row.total_ack_best) {
            mismatches.push(TotalColumn::AckBest);
        }
        if differs(Some(no_ack), row.total_no_ack) {
            mismatches.push(TotalColumn::NoAck);
        }
        Table1Row {
            dr: row.dr,
            rx1_ack: row.rx1_ack,
            rx1_no_ack: row.rx1_no_ack,
            rx2_ack: row.rx2_ack,
            rx2_no_ack: row.rx2_no_ack,
            ack_worst,
            ack_best,
            no_ack,
            mismatches,
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Receive-window energy (mJ) of one transaction sent at `tx_dr`.
///
/// With `ack_rx1` at a data rate the table has no RX1 ACK value for, the
/// energy is derived from `fallback` (Rx current times the ACK frame's
/// airtime) and flagged as profile-derived.
pub fn transaction_rx_energy(
    cal: &RxWindowCalibration,
    tx_dr: DataRate,
    outcome: RxOutcome,
    fallback: Option<&PowerProfile>,
) -> Result<RxEnergy> {
    match outcome {
        RxOutcome::AckRx1 => match (cal.rx1_ack(tx_dr), fallback) {
            (Some(mj), _) => Ok(RxEnergy {
                rx1_mj: mj,
                rx2_mj: None,
                profile_derived: false,
            }),
            (None, Some(profile)) => Ok(RxEnergy {
                rx1_mj: cal.model.profile_energy_mj(profile, tx_dr, true)?,
                rx2_mj: None,
                profile_derived: true,
            }),
            (None, None) => Err(Error::CalibrationMissing(format!(
                "no RX1 ACK energy for {tx_dr} and no profile fallback"
            ))),
        },
        RxOutcome::AckRx2 => Ok(RxEnergy {
            rx1_mj: cal.rx1_no_ack(tx_dr),
            rx2_mj: Some(cal.rx2_ack()),
            profile_derived: false,
        }),
        RxOutcome::NoAck => Ok(RxEnergy {
            rx1_mj: cal.rx1_no_ack(tx_dr),
            rx2_mj: Some(cal.rx2_no_ack()),
            profile_derived: false,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn table_examples() {
        let cal = RxWindowCalibration::shipped();
        let e = transaction_rx_energy(&cal, DataRate::DR0, RxOutcome::NoAck, None).unwrap();
        assert!(close(e.total_mj(), 7.7));
        let e = transaction_rx_energy(&cal, DataRate::DR5, RxOutcome::AckRx1, None).unwrap();
        assert!(close(e.total_mj(), 1.7));
        assert_eq!(e.rx2_mj, None);
        let e = transaction_rx_energy(&cal, DataRate::DR2, RxOutcome::AckRx2, None).unwrap();
        assert!(close(e.total_mj(), 7.2));
    }

    #[test]
    fn rx1_ack_gap_needs_fallback() {
        let cal = RxWindowCalibration::shipped();
        for dr in [DataRate::DR0, DataRate::DR1, DataRate::DR2, DataRate::DR3] {
            let err = transaction_rx_energy(&cal, dr, RxOutcome::AckRx1, None).unwrap_err();
            assert!(matches!(err, Error::CalibrationMissing(_)));
            let profile = PowerProfile::default();
            let e = transaction_rx_energy(&cal, dr, RxOutcome::AckRx1, Some(&profile)).unwrap();
            assert!(e.profile_derived);
            let expected = profile.supply_voltage
                * profile.rx_current
                * cal.model.ack_duration(dr).unwrap()
                * 1e3;
            assert!(close(e.rx1_mj, expected));
        }
    }

    #[test]
    fn shipped_table_is_self_consistent() {
        let rows = RxWindowCalibration::shipped().reconstruct();
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(Table1Row::is_consistent));
    }

    #[test]
    fn perturbed_rx2_ack_flags_every_worst_case() {
        let mut file: CalibrationFile = serde_json::from_str(SHIPPED).unwrap();
        for row in &mut file.rows {
            row.rx2_ack = 5.7;
        }
        let rows = RxWindowCalibration::from_file(file).unwrap().reconstruct();
        for row in rows {
            assert_eq!(row.mismatches, vec![TotalColumn::AckWorst], "{}", row.dr);
        }
    }

    #[test]
    fn rx2_must_be_dr_independent() {
        let mut file: CalibrationFile = serde_json::from_str(SHIPPED).unwrap();
        file.rows[3].rx2_no_ack = 1.4;
        let err = RxWindowCalibration::from_file(file).unwrap_err();
        let Error::Validation(issues) = err else {
            panic!()
        };
        assert_eq!(issues[0].key, "rows[3].rx2_ack");
    }

    #[test]
    fn missing_and_duplicate_rows() {
        let mut file: CalibrationFile = serde_json::from_str(SHIPPED).unwrap();
        file.rows[5].dr = DataRate::DR4;
        let Error::Validation(issues) = RxWindowCalibration::from_file(file).unwrap_err() else {
            panic!()
        };
        let keys: Vec<_> = issues.iter().map(|i| i.to_string()).collect();
        assert!(keys.iter().any(|k| k.contains("duplicate row for DR4")));
        assert!(keys.iter().any(|k| k.contains("missing row for DR5")));
    }

    #[test]
    fn unknown_key_reports_location() {
        let text = SHIPPED.replacen("\"rx1_no_ack\"", "\"rx1_noack\"", 1);
        match RxWindowCalibration::from_json(&text).unwrap_err() {
            Error::Schema { path, .. } => assert_eq!(path, "rows[0].rx1_noack"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn ack_costs_at_least_timeout() {
        let m = RxWindowModel::default();
        for dr in DataRate::ALL {
            assert!(m.ack_duration(dr).unwrap() > m.timeout_duration(dr));
        }
    }
}
