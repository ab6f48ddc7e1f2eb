//! Controller operating modes, per-unit static currents with power gating,
//! and charge/energy accounting.
//!
//! Current drawn in any interval is the MCU current of the active mode plus
//! the static current of every unit switched on in the gating snapshot.

use std::fmt;
use std::io::{Read, Write};
use std::ops::{BitAnd, BitOr, Not};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SUPPLY_V: f64 = 3.7;

/// Tolerance on duty-cycle fractions summing to one.
pub const FRACTION_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PowerError {
    #[error("duty fractions sum to {0}, expected 1")]
    FractionSumInvalid(f64),
    #[error("negative {0}")]
    Negative(&'static str),
    #[error("unknown power mode {0:?}")]
    UnknownMode(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PowerMode {
    #[serde(rename = "RUN")]
    Run,
    #[serde(rename = "LPRUN")]
    LpRun,
    #[serde(rename = "SLEEP")]
    Sleep,
    #[serde(rename = "STOP1")]
    Stop1,
    #[serde(rename = "SHUTDOWN")]
    Shutdown,
}

impl PowerMode {
    pub const ALL: [PowerMode; 5] = [
        PowerMode::Run,
        PowerMode::LpRun,
        PowerMode::Sleep,
        PowerMode::Stop1,
        PowerMode::Shutdown,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PowerMode::Run => "RUN",
            PowerMode::LpRun => "LPRUN",
            PowerMode::Sleep => "SLEEP",
            PowerMode::Stop1 => "STOP1",
            PowerMode::Shutdown => "SHUTDOWN",
        }
    }

    pub fn is_low_power(self) -> bool {
        self != PowerMode::Run
    }
}

impl fmt::Display for PowerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PowerMode {
    type Err = PowerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PowerMode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| PowerError::UnknownMode(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub mcu_current_ua: f64,
    /// Time to get back to RUN.
    pub wakeup_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeTable {
    pub run: ModeSpec,
    pub lprun: ModeSpec,
    pub sleep: ModeSpec,
    pub stop1: ModeSpec,
    pub shutdown: ModeSpec,
}

/// Sleep wakes in 6 cycles of the 80 MHz core clock.
const SLEEP_WAKEUP_S: f64 = 6.0 / 80.0e6;

impl Default for ModeTable {
    /// Controller datasheet-style figures for the STM32L476 modes.
    fn default() -> Self {
        let entry = |mcu_current_ua, wakeup_time_s| ModeSpec {
            mcu_current_ua,
            wakeup_time_s,
        };
        ModeTable {
            run: entry(12_000.0, 0.0),
            lprun: entry(3_350.0, 64e-6),
            sleep: entry(1_200.0, SLEEP_WAKEUP_S),
            stop1: entry(566.0, 7.8e-6),
            shutdown: entry(0.23, 306e-6),
        }
    }
}

impl ModeTable {
    pub fn get(&self, mode: PowerMode) -> &ModeSpec {
        match mode {
            PowerMode::Run => &self.run,
            PowerMode::LpRun => &self.lprun,
            PowerMode::Sleep => &self.sleep,
            PowerMode::Stop1 => &self.stop1,
            PowerMode::Shutdown => &self.shutdown,
        }
    }

    pub fn get_mut(&mut self, mode: PowerMode) -> &mut ModeSpec {
        match mode {
            PowerMode::Run => &mut self.run,
            PowerMode::LpRun => &mut self.lprun,
            PowerMode::Sleep => &mut self.sleep,
            PowerMode::Stop1 => &mut self.stop1,
            PowerMode::Shutdown => &mut self.shutdown,
        }
    }

    /// Table for node simulation: the controller's STOP1 draw is carried by
    /// the master-unit line of the unit budget, so STOP1 contributes nothing
    /// on its own. Keeps the default standby total at the unit-budget sum.
    pub fn budgeted_standby() -> Self {
        let mut t = ModeTable::default();
        t.stop1.mcu_current_ua = 0.0;
        t
    }

    pub fn validate(&self) -> Result<(), PowerError> {
        for m in PowerMode::ALL {
            let s = self.get(m);
            if s.mcu_current_ua.is_nan() || s.mcu_current_ua < 0.0 {
                return Err(PowerError::Negative("mode current"));
            }
            if s.wakeup_time_s.is_nan() || s.wakeup_time_s < 0.0 {
                return Err(PowerError::Negative("wakeup time"));
            }
        }
        Ok(())
    }
}

/// On/off flags for the switchable units. `CARRIER_TX` stands for the
/// carrier amplifier's 12 V transmit burst, drawn only while sending.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Gating(pub u8);

impl Gating {
    pub const NONE: Gating = Gating(0);
    pub const CARRIER: Gating = Gating(1);
    pub const SIGNAL_PROCESSING: Gating = Gating(1 << 1);
    pub const POWER_CONVERSION: Gating = Gating(1 << 2);
    pub const MASTER_UNIT: Gating = Gating(1 << 3);
    pub const CARRIER_TX: Gating = Gating(1 << 4);
    /// The four static units.
    pub const ALL_UNITS: Gating = Gating(0b1111);

    pub fn contains(self, other: Gating) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn bits(self) -> u8 {
        self.0
    }
}

impl BitOr for Gating {
    type Output = Gating;
    fn bitor(self, rhs: Gating) -> Gating {
        Gating(self.0 | rhs.0)
    }
}

impl BitAnd for Gating {
    type Output = Gating;
    fn bitand(self, rhs: Gating) -> Gating {
        Gating(self.0 & rhs.0)
    }
}

impl Not for Gating {
    type Output = Gating;
    fn not(self) -> Gating {
        Gating(!self.0 & 0b1_1111)
    }
}

/// Default transmit burst: 0.045 W carrier unit at 3.3 V.
pub const DEFAULT_CARRIER_TX_UA: f64 = 0.045 / 3.3 * 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnitBudget {
    pub carrier_ua: f64,
    pub signal_processing_ua: f64,
    pub power_conversion_ua: f64,
    pub master_unit_ua: f64,
    pub carrier_tx_ua: f64,
    /// Units left on in standby.
    pub gating: Gating,
}

impl Default for UnitBudget {
    fn default() -> Self {
        UnitBudget {
            carrier_ua: 130.0,
            signal_processing_ua: 300.0,
            power_conversion_ua: 180.0,
            master_unit_ua: 50.0,
            carrier_tx_ua: DEFAULT_CARRIER_TX_UA,
            gating: Gating::ALL_UNITS,
        }
    }
}

impl UnitBudget {
    pub fn with_gating(mut self, gating: Gating) -> Self {
        self.gating = gating;
        self
    }

    /// Sum of the currents of every unit flagged in `gating`.
    pub fn current_ua(&self, gating: Gating) -> f64 {
        [
            (Gating::CARRIER, self.carrier_ua),
            (Gating::SIGNAL_PROCESSING, self.signal_processing_ua),
            (Gating::POWER_CONVERSION, self.power_conversion_ua),
            (Gating::MASTER_UNIT, self.master_unit_ua),
            (Gating::CARRIER_TX, self.carrier_tx_ua),
        ]
        .iter()
        .filter(|(g, _)| gating.contains(*g))
        .map(|(_, ua)| ua)
        .sum()
    }

    pub fn validate(&self) -> Result<(), PowerError> {
        let all = [
            self.carrier_ua,
            self.signal_processing_ua,
            self.power_conversion_ua,
            self.master_unit_ua,
            self.carrier_tx_ua,
        ];
        if all.iter().all(|v| *v >= 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(PowerError::Negative("unit current"))
        }
    }
}

/// Static current of the units enabled in `budget.gating`.
pub fn standby_current(budget: &UnitBudget) -> f64 {
    budget.current_ua(budget.gating & Gating::ALL_UNITS)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub latency_s: f64,
    pub allowed: bool,
}

/// Low-power modes are entered from and left to RUN only. Entering is
/// instantaneous; leaving costs the mode's wake-up time. Staying in the same
/// mode is a no-op.
pub fn transition(current: PowerMode, target: PowerMode, modes: &ModeTable) -> Transition {
    match (current, target) {
        (c, t) if c == t => Transition {
            latency_s: 0.0,
            allowed: true,
        },
        (PowerMode::Run, _) => Transition {
            latency_s: 0.0,
            allowed: true,
        },
        (c, PowerMode::Run) => Transition {
            latency_s: modes.get(c).wakeup_time_s,
            allowed: true,
        },
        _ => Transition {
            latency_s: 0.0,
            allowed: false,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub mode: PowerMode,
    pub gating: Gating,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyTrace {
    pub records: Vec<EnergyRecord>,
    pub supply_v: f64,
}

impl Default for EnergyTrace {
    fn default() -> Self {
        EnergyTrace {
            records: Vec::new(),
            supply_v: DEFAULT_SUPPLY_V,
        }
    }
}

impl EnergyTrace {
    pub fn new(supply_v: f64) -> Self {
        EnergyTrace {
            records: Vec::new(),
            supply_v,
        }
    }

    /// Appends a record, merging with the previous one when mode and gating
    /// are unchanged. Zero-length records are dropped.
    pub fn push(&mut self, mode: PowerMode, gating: Gating, duration_s: f64) {
        if duration_s <= 0.0 {
            return;
        }
        if let Some(last) = self.records.last_mut() {
            if last.mode == mode && last.gating == gating {
                last.duration_s += duration_s;
                return;
            }
        }
        self.records.push(EnergyRecord {
            mode,
            gating,
            duration_s,
        });
    }

    pub fn total_duration_s(&self) -> f64 {
        self.records.iter().map(|r| r.duration_s).sum()
    }

    /// CSV with header `mode,gating,duration_s`; gating is the bitmask as an
    /// integer.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), PowerError> {
        let mut wtr = csv::Writer::from_writer(w);
        for r in &self.records {
            wtr.serialize(r)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, supply_v: f64) -> Result<Self, PowerError> {
        let mut rdr = csv::Reader::from_reader(r);
        let records = rdr
            .deserialize()
            .collect::<Result<Vec<EnergyRecord>, _>>()?;
        if records
            .iter()
            .any(|r| r.duration_s.is_nan() || r.duration_s < 0.0)
        {
            return Err(PowerError::Negative("duration"));
        }
        Ok(EnergyTrace { records, supply_v })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Charge {
    pub microamp_hours: f64,
    pub joules: f64,
}

pub fn record_current_ua(record: &EnergyRecord, budget: &UnitBudget, modes: &ModeTable) -> f64 {
    modes.get(record.mode).mcu_current_ua + budget.current_ua(record.gating)
}

pub fn charge_consumed(trace: &EnergyTrace, budget: &UnitBudget, modes: &ModeTable) -> Charge {
    let microamp_hours: f64 = trace
        .records
        .iter()
        .map(|r| record_current_ua(r, budget, modes) * r.duration_s / 3600.0)
        .sum();
    Charge {
        microamp_hours,
        joules: microamp_hours * 3600.0 * trace.supply_v * 1e-6,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DutyShare {
    pub mode: PowerMode,
    pub gating: Gating,
    pub fraction: f64,
}

/// Hours until `capacity_mah` is exhausted at the duty cycle's time-weighted
/// average current. Infinite when that current is zero.
pub fn battery_life(
    capacity_mah: f64,
    duty: &[DutyShare],
    budget: &UnitBudget,
    modes: &ModeTable,
) -> Result<f64, PowerError> {
    let total: f64 = duty.iter().map(|d| d.fraction).sum();
    if (total - 1.0).abs() > FRACTION_SUM_TOLERANCE || duty.iter().any(|d| d.fraction < 0.0) {
        return Err(PowerError::FractionSumInvalid(total));
    }
    let avg_ua: f64 = duty
        .iter()
        .map(|d| d.fraction * (modes.get(d.mode).mcu_current_ua + budget.current_ua(d.gating)))
        .sum();
    Ok(capacity_mah * 1000.0 / avg_ua)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standby_budget() {
        let b = UnitBudget::default();
        assert_eq!(standby_current(&b), 660.0);
        let no_carrier = b.clone().with_gating(Gating::ALL_UNITS & !Gating::CARRIER);
        assert_eq!(standby_current(&no_carrier), 530.0);
        assert_eq!(standby_current(&b.with_gating(Gating::NONE)), 0.0);
    }

    #[test]
    fn tx_burst_excluded_from_standby() {
        let b = UnitBudget::default().with_gating(Gating::ALL_UNITS | Gating::CARRIER_TX);
        assert_eq!(standby_current(&b), 660.0);
        assert!((b.current_ua(Gating::CARRIER_TX) - 13_636.363_636).abs() < 1e-3);
    }

    #[test]
    fn transitions() {
        let t = ModeTable::default();
        assert_eq!(
            transition(PowerMode::Stop1, PowerMode::Run, &t),
            Transition {
                latency_s: 7.8e-6,
                allowed: true
            }
        );
        assert_eq!(
            transition(PowerMode::Run, PowerMode::Run, &t).latency_s,
            0.0
        );
        assert!(!transition(PowerMode::Stop1, PowerMode::Shutdown, &t).allowed);
        assert!(!transition(PowerMode::Sleep, PowerMode::LpRun, &t).allowed);
        assert_eq!(
            transition(PowerMode::Shutdown, PowerMode::Run, &t).latency_s,
            306e-6
        );
        assert_eq!(
            transition(PowerMode::LpRun, PowerMode::Run, &t).latency_s,
            64e-6
        );
        assert_eq!(
            transition(PowerMode::Sleep, PowerMode::Run, &t).latency_s,
            7.5e-8
        );
        for m in PowerMode::ALL {
            assert!(transition(m, PowerMode::Run, &t).allowed);
            assert!(transition(PowerMode::Run, m, &t).allowed);
        }
    }

    #[test]
    fn charge_examples() {
        let modes = ModeTable::default();
        let budget = UnitBudget::default();
        let mut tr = EnergyTrace::default();
        tr.push(PowerMode::Stop1, Gating::NONE, 3600.0);
        let c = charge_consumed(&tr, &budget, &modes);
        assert!((c.microamp_hours - 566.0).abs() < 1e-9);
        assert!((c.joules - 566.0 * 3600.0 * 3.7e-6).abs() < 1e-12);

        let empty = charge_consumed(&EnergyTrace::default(), &budget, &modes);
        assert_eq!((empty.microamp_hours, empty.joules), (0.0, 0.0));

        let split = EnergyTrace {
            records: vec![
                EnergyRecord {
                    mode: PowerMode::Run,
                    gating: Gating::NONE,
                    duration_s: 3600.0,
                };
                2
            ],
            supply_v: 3.7,
        };
        let mut joined = EnergyTrace::default();
        joined.push(PowerMode::Run, Gating::NONE, 7200.0);
        assert_eq!(
            charge_consumed(&split, &budget, &modes).microamp_hours,
            24_000.0
        );
        assert_eq!(
            charge_consumed(&joined, &budget, &modes).microamp_hours,
            24_000.0
        );
    }

    #[test]
    fn battery_life_examples() {
        let modes = ModeTable::budgeted_standby();
        let budget = UnitBudget::default();
        let standby = [DutyShare {
            mode: PowerMode::Stop1,
            gating: Gating::ALL_UNITS,
            fraction: 1.0,
        }];
        let h = battery_life(1000.0, &standby, &budget, &modes).unwrap();
        assert!((h - 1000.0 / 0.66).abs() < 1e-9);

        let run = [DutyShare {
            mode: PowerMode::Run,
            gating: Gating::NONE,
            fraction: 1.0,
        }];
        let h = battery_life(1000.0, &run, &budget, &modes).unwrap();
        assert!((h - 1000.0 / 12.0).abs() < 1e-9);

        let short = [DutyShare {
            mode: PowerMode::Run,
            gating: Gating::NONE,
            fraction: 0.9,
        }];
        assert!(matches!(
            battery_life(1000.0, &short, &budget, &modes),
            Err(PowerError::FractionSumInvalid(_))
        ));
    }

    #[test]
    fn trace_push_merges_and_skips_empty() {
        let mut tr = EnergyTrace::default();
        tr.push(PowerMode::Run, Gating::NONE, 1.0);
        tr.push(PowerMode::Run, Gating::NONE, 2.0);
        tr.push(PowerMode::Stop1, Gating::NONE, 0.0);
        assert_eq!(tr.records.len(), 1);
        assert_eq!(tr.total_duration_s(), 3.0);
    }

    #[test]
    fn trace_csv_round_trip() {
        let mut tr = EnergyTrace::default();
        tr.push(PowerMode::Stop1, Gating::ALL_UNITS, 0.25);
        tr.push(PowerMode::Run, Gating::ALL_UNITS | Gating::CARRIER_TX, 1e-4);
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("mode,gating,duration_s\nSTOP1,15,0.25\n"));
        assert_eq!(EnergyTrace::read_csv(&buf[..], 3.7).unwrap(), tr);
    }

    #[test]
    fn mode_names_parse() {
        assert_eq!("stop1".parse::<PowerMode>().unwrap(), PowerMode::Stop1);
        assert!("HIBERNATE".parse::<PowerMode>().is_err());
    }
}
