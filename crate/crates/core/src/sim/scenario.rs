use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelConfig, FrontEndConfig};
use crate::frame::Address;
use crate::modem::ModemConfig;
use crate::nodes::{encode_temperature, SlaveMode};
use crate::power::{ModeTable, UnitBudget, DEFAULT_SUPPLY_V};
use crate::sim::SimError;

/// Surface device address shown on the host serial display.
pub const DEFAULT_MASTER_ADDRESS: Address = Address([0x02, 0x49, 0x46, 0x68, 0x00, 0x53]);

/// Node 0 is the master; slave `i` in the scenario list is node `i + 1`.
pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MasterSpec {
    pub address: Address,
    pub budget: UnitBudget,
    /// Reply timeout; derived from the modem timing when absent.
    pub timeout_s: Option<f64>,
    pub max_retries: u32,
}

impl Default for MasterSpec {
    fn default() -> Self {
        MasterSpec {
            address: DEFAULT_MASTER_ADDRESS,
            budget: UnitBudget::default(),
            timeout_s: None,
            max_retries: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlaveSpec {
    pub address: Address,
    #[serde(default = "default_slave_mode")]
    pub mode: SlaveMode,
    #[serde(default)]
    pub temperature_c: f64,
    #[serde(default)]
    pub budget: UnitBudget,
}

fn default_slave_mode() -> SlaveMode {
    SlaveMode::FunctionTest
}

impl SlaveSpec {
    pub fn new(address: Address, mode: SlaveMode, temperature_c: f64) -> Self {
        SlaveSpec {
            address,
            mode,
            temperature_c,
            budget: UnitBudget::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Poll {
    pub time_s: f64,
    pub target: Address,
}

/// Round-robin polling of every slave: round `r` polls slave `i` at
/// `start_s + (r * n_slaves + i) * interval_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PollRounds {
    pub start_s: f64,
    pub interval_s: f64,
    pub rounds: u32,
}

/// Forces node `node` to transmit a filler frame at `time_s` regardless of
/// its protocol state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Injection {
    pub time_s: f64,
    pub node: NodeId,
}

/// Declarative simulation input. Every field has a default, so a scenario
/// file only needs what differs:
///
/// - `seed` 0, `duration_s` 1.0
/// - `modem`: 1.67 MHz carrier, 16 samples/cycle, 115200 bps, 12 V
/// - `channel`: 4 turns, 700 m, lossless, noiseless, 2e8 m/s
/// - `front_end`: 1.67 MHz center, gain 3, Q 1
/// - `link_ebn0_db`: unset; when set it replaces `channel.noise_sigma_v`
///   with the noise level giving that Eb/N0 at the channel output
/// - `modes`: controller mode table with STOP1 folded into the unit budget
/// - `supply_v` 3.7
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub duration_s: f64,
    pub modem: ModemConfig,
    pub channel: ChannelConfig,
    pub front_end: FrontEndConfig,
    pub link_ebn0_db: Option<f64>,
    pub modes: ModeTable,
    pub supply_v: f64,
    pub master: MasterSpec,
    pub slaves: Vec<SlaveSpec>,
    pub poll_schedule: Vec<Poll>,
    pub poll_rounds: Option<PollRounds>,
    pub collision_injections: Vec<Injection>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            seed: 0,
            duration_s: 1.0,
            modem: ModemConfig::default(),
            channel: ChannelConfig::default(),
            front_end: FrontEndConfig::default(),
            link_ebn0_db: None,
            modes: ModeTable::budgeted_standby(),
            supply_v: DEFAULT_SUPPLY_V,
            master: MasterSpec::default(),
            slaves: Vec::new(),
            poll_schedule: Vec::new(),
            poll_rounds: None,
            collision_injections: Vec::new(),
        }
    }
}

fn invalid(path: impl Into<String>, message: impl ToString) -> SimError {
    SimError::ConfigInvalid {
        path: path.into(),
        message: message.to_string(),
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| invalid("<root>", e))
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| invalid(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn node_count(&self) -> usize {
        1 + self.slaves.len()
    }

    /// Explicit schedule plus expanded rounds, ordered by time (stable).
    pub fn expanded_polls(&self) -> Vec<Poll> {
        let mut polls = self.poll_schedule.clone();
        if let Some(r) = self.poll_rounds {
            let n = self.slaves.len();
            for round in 0..r.rounds as usize {
                for (i, s) in self.slaves.iter().enumerate() {
                    polls.push(Poll {
                        time_s: r.start_s + (round * n + i) as f64 * r.interval_s,
                        target: s.address,
                    });
                }
            }
        }
        polls.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
        polls
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return Err(invalid("duration_s", "must be finite and >= 0"));
        }
        self.modem.validate().map_err(|e| invalid("modem", e))?;
        self.channel.validate().map_err(|e| invalid("channel", e))?;
        self.front_end
            .validate()
            .map_err(|e| invalid("front_end", e))?;
        if self.modem.sample_rate_hz() <= 2.0 * self.front_end.center_hz {
            return Err(invalid(
                "front_end.center_hz",
                "must be below half the modem sample rate",
            ));
        }
        if let Some(db) = self.link_ebn0_db {
            if !db.is_finite() {
                return Err(invalid("link_ebn0_db", "must be finite"));
            }
        }
        self.modes.validate().map_err(|e| invalid("modes", e))?;
        if !(self.supply_v.is_finite() && self.supply_v > 0.0) {
            return Err(invalid("supply_v", "must be positive"));
        }
        self.master
            .budget
            .validate()
            .map_err(|e| invalid("master.budget", e))?;
        if let Some(t) = self.master.timeout_s {
            if !(t.is_finite() && t > 0.0) {
                return Err(invalid("master.timeout_s", "must be positive"));
            }
        }

        let mut seen = BTreeSet::new();
        seen.insert(self.master.address);
        for (i, s) in self.slaves.iter().enumerate() {
            if !seen.insert(s.address) {
                return Err(invalid(format!("slaves[{i}].address"), "duplicate address"));
            }
            s.budget
                .validate()
                .map_err(|e| invalid(format!("slaves[{i}].budget"), e))?;
            if s.mode == SlaveMode::Sensor {
                encode_temperature(s.temperature_c)
                    .map_err(|e| invalid(format!("slaves[{i}].temperature_c"), e))?;
            }
        }

        let in_range = |t: f64| t.is_finite() && (0.0..=self.duration_s).contains(&t);
        for (i, p) in self.poll_schedule.iter().enumerate() {
            if !in_range(p.time_s) {
                return Err(invalid(
                    format!("poll_schedule[{i}].time_s"),
                    "outside duration",
                ));
            }
        }
        if let Some(r) = self.poll_rounds {
            if !(r.interval_s.is_finite() && r.interval_s > 0.0) {
                return Err(invalid("poll_rounds.interval_s", "must be positive"));
            }
            if let Some(last) = self.expanded_polls().last() {
                if !in_range(r.start_s) || !in_range(last.time_s) {
                    return Err(invalid("poll_rounds", "schedule extends outside duration"));
                }
            }
        }
        for (i, inj) in self.collision_injections.iter().enumerate() {
            if !in_range(inj.time_s) {
                return Err(invalid(
                    format!("collision_injections[{i}].time_s"),
                    "outside duration",
                ));
            }
            if inj.node >= self.node_count() {
                return Err(invalid(
                    format!("collision_injections[{i}].node"),
                    format!("no node {}", inj.node),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(a: u8) -> Address {
        Address([a, 0x49, 0x46, 0x68, 0x00, 0x53])
    }

    #[test]
    fn minimal_json_uses_defaults() {
        let sc = Scenario::from_json(r#"{"slaves":[{"address":"64 49 46 68 00 53"}]}"#).unwrap();
        assert_eq!(sc.modem, ModemConfig::default());
        assert_eq!(sc.slaves[0].mode, SlaveMode::FunctionTest);
        assert!(sc.validate().is_ok());
        assert_eq!(Scenario::from_json(&sc.to_json()).unwrap(), sc);
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(Scenario::from_json(r#"{"sead": 1}"#).is_err());
    }

    #[test]
    fn duplicate_addresses_rejected() {
        let sc = Scenario {
            slaves: vec![
                SlaveSpec::new(addr(1), SlaveMode::FunctionTest, 0.0),
                SlaveSpec::new(addr(1), SlaveMode::FunctionTest, 0.0),
            ],
            ..Default::default()
        };
        match sc.validate() {
            Err(SimError::ConfigInvalid { path, .. }) => assert_eq!(path, "slaves[1].address"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schedule_outside_duration_rejected() {
        let sc = Scenario {
            duration_s: 0.1,
            poll_schedule: vec![Poll {
                time_s: 0.2,
                target: addr(1),
            }],
            ..Default::default()
        };
        assert!(
            matches!(sc.validate(), Err(SimError::ConfigInvalid { path, .. }) if path == "poll_schedule[0].time_s")
        );
    }

    #[test]
    fn bad_turns_reported_under_channel() {
        let mut sc = Scenario::default();
        sc.channel.turns = 12;
        assert!(
            matches!(sc.validate(), Err(SimError::ConfigInvalid { path, .. }) if path == "channel")
        );
    }

    #[test]
    fn rounds_expand_round_robin() {
        let sc = Scenario {
            slaves: vec![
                SlaveSpec::new(addr(1), SlaveMode::FunctionTest, 0.0),
                SlaveSpec::new(addr(2), SlaveMode::FunctionTest, 0.0),
            ],
            poll_rounds: Some(PollRounds {
                start_s: 0.01,
                interval_s: 0.01,
                rounds: 2,
            }),
            ..Default::default()
        };
        let p = sc.expanded_polls();
        assert_eq!(p.len(), 4);
        assert_eq!(p[0].target, addr(1));
        assert_eq!(p[1].target, addr(2));
        assert_eq!(p[2].target, addr(1));
        assert!((p[3].time_s - 0.04).abs() < 1e-12);
    }
}
