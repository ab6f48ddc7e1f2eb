//! Polling protocol state machines.
//!
//! The surface master polls one underwater slave at a time by address. A
//! slave sleeps in STOP1, wakes only for frames carrying its own address,
//! answers with a two-byte payload and goes back to sleep.
//!
//! Both machines are pure: `(state, event) -> (state, actions)`. The caller
//! owns timing, transmission and energy bookkeeping.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{address_matches, Address, Frame};
use crate::modem::ModemConfig;
use crate::power::{transition, Gating, ModeTable, PowerMode};

/// Data-acquisition command sent by the master.
pub const COMMAND_PAYLOAD: [u8; 2] = [0x12, 0x34];
/// Fixed reply of a slave in function-test mode.
pub const FUNCTION_TEST_PAYLOAD: [u8; 2] = [0x00, 0xFF];
/// Direct surface-to-underwater link.
pub const DIRECT_RELAY_DEPTH: u8 = 1;
/// Reply sent when the configured temperature cannot be encoded.
pub const SENSOR_FAULT_PAYLOAD: [u8; 2] = [0xFF, 0xFF];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NodeError {
    #[error("temperature {0} C outside 0 to 99.9")]
    OutOfRange(String),
    #[error("decimal digit {0} is not 0-9")]
    InvalidDecimalDigit(u8),
}

/// Temperature as an integer byte and a tenths byte, e.g. 19.7 C -> 0x13 0x07.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorReading {
    pub integer_c: u8,
    pub decimal_c: u8,
}

impl SensorReading {
    pub fn to_bytes(self) -> [u8; 2] {
        [self.integer_c, self.decimal_c]
    }
}

/// Rounds to one decimal place.
pub fn encode_temperature(celsius: f64) -> Result<SensorReading, NodeError> {
    let tenths = (celsius * 10.0).round();
    if !(0.0..1000.0).contains(&tenths) || !celsius.is_finite() || celsius < 0.0 {
        return Err(NodeError::OutOfRange(celsius.to_string()));
    }
    let tenths = tenths as u16;
    Ok(SensorReading {
        integer_c: (tenths / 10) as u8,
        decimal_c: (tenths % 10) as u8,
    })
}

pub fn decode_temperature(reading: SensorReading) -> Result<f64, NodeError> {
    if reading.decimal_c > 9 {
        return Err(NodeError::InvalidDecimalDigit(reading.decimal_c));
    }
    Ok((reading.integer_c as u16 * 10 + reading.decimal_c as u16) as f64 / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlaveMode {
    /// Replies `00 FF`.
    FunctionTest,
    /// Replies with the encoded temperature.
    Sensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SlavePhase {
    Standby,
    WakeCheck,
    Acquire,
    Transmit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlaveState {
    pub phase: SlavePhase,
    pub address: Address,
    pub mode: SlaveMode,
    pub temperature_c: f64,
    pub power_mode: PowerMode,
    pub gating: Gating,
    /// Units left powered while in standby.
    pub standby_gating: Gating,
    pub wake_latency_s: f64,
}

impl SlaveState {
    pub fn new(
        address: Address,
        mode: SlaveMode,
        temperature_c: f64,
        standby_gating: Gating,
        modes: &ModeTable,
    ) -> Result<Self, NodeError> {
        if mode == SlaveMode::Sensor {
            encode_temperature(temperature_c)?;
        }
        Ok(SlaveState {
            phase: SlavePhase::Standby,
            address,
            mode,
            temperature_c,
            power_mode: PowerMode::Stop1,
            gating: standby_gating & Gating::ALL_UNITS,
            standby_gating: standby_gating & Gating::ALL_UNITS,
            wake_latency_s: transition(PowerMode::Stop1, PowerMode::Run, modes).latency_s,
        })
    }

    pub fn reply_payload(&self) -> Vec<u8> {
        match self.mode {
            SlaveMode::FunctionTest => FUNCTION_TEST_PAYLOAD.to_vec(),
            SlaveMode::Sensor => encode_temperature(self.temperature_c)
                .map(|r| r.to_bytes())
                .unwrap_or(SENSOR_FAULT_PAYLOAD)
                .to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SlaveEvent {
    FrameReceived(Frame),
    /// Wake-up latency elapsed.
    Tick,
    TxDone,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SlaveAction {
    /// Schedule a `Tick` after `latency_s` when waking.
    PowerTransition {
        from: PowerMode,
        to: PowerMode,
        latency_s: f64,
    },
    SetGating(Gating),
    Acquire {
        payload: Vec<u8>,
    },
    SendFrame(Frame),
    Ignored {
        reason: &'static str,
    },
}

pub fn slave_step(state: &SlaveState, event: &SlaveEvent) -> (SlaveState, Vec<SlaveAction>) {
    let mut next = state.clone();
    let actions = match (state.phase, event) {
        (SlavePhase::Standby, SlaveEvent::FrameReceived(frame)) => {
            if !address_matches(&frame.address(), &state.address) {
                return (next, Vec::new());
            }
            next.phase = SlavePhase::WakeCheck;
            vec![SlaveAction::PowerTransition {
                from: PowerMode::Stop1,
                to: PowerMode::Run,
                latency_s: state.wake_latency_s,
            }]
        }
        (SlavePhase::WakeCheck, SlaveEvent::Tick) => {
            next.power_mode = PowerMode::Run;
            next.gating = Gating::ALL_UNITS;
            next.phase = SlavePhase::Acquire;
            let payload = next.reply_payload();
            let reply = Frame::new(DIRECT_RELAY_DEPTH, state.address, payload.clone())
                .expect("two-byte payload");
            next.phase = SlavePhase::Transmit;
            next.gating = Gating::ALL_UNITS | Gating::CARRIER_TX;
            vec![
                SlaveAction::SetGating(Gating::ALL_UNITS),
                SlaveAction::Acquire { payload },
                SlaveAction::SendFrame(reply),
            ]
        }
        (SlavePhase::Transmit, SlaveEvent::TxDone) => {
            next.phase = SlavePhase::Standby;
            next.power_mode = PowerMode::Stop1;
            next.gating = state.standby_gating;
            vec![
                SlaveAction::SetGating(state.standby_gating),
                SlaveAction::PowerTransition {
                    from: PowerMode::Run,
                    to: PowerMode::Stop1,
                    latency_s: 0.0,
                },
            ]
        }
        (_, SlaveEvent::FrameReceived(_)) => vec![SlaveAction::Ignored { reason: "busy" }],
        _ => vec![SlaveAction::Ignored {
            reason: "unexpected event",
        }],
    };
    (next, actions)
}

/// A decoded frame counts as accepted when the slave acted on it.
pub fn slave_accepted(actions: &[SlaveAction]) -> bool {
    actions
        .iter()
        .any(|a| !matches!(a, SlaveAction::Ignored { .. }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MasterPhase {
    Idle,
    SendCmd,
    AwaitReply,
    Receive,
    Report,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MasterState {
    /// `SendCmd`, `Receive` and `Report` are passed through within a single
    /// step; between steps the master is `Idle` or `AwaitReply`.
    pub phase: MasterPhase,
    pub address: Address,
    pub pending_target: Option<Address>,
    /// Polls requested while busy, served in order.
    pub queue: VecDeque<Address>,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub retries_left: u32,
    /// Id of the live reply timer; older timers are stale.
    pub timer_id: u64,
}

impl MasterState {
    pub fn new(address: Address, timeout_s: f64, max_retries: u32) -> Self {
        MasterState {
            phase: MasterPhase::Idle,
            address,
            pending_target: None,
            queue: VecDeque::new(),
            timeout_s,
            max_retries,
            retries_left: 0,
            timer_id: 0,
        }
    }
}

/// Twice the time for command airtime, slave wake-up and reply airtime.
pub fn default_timeout_s(modem: &ModemConfig, modes: &ModeTable) -> f64 {
    let frame_bits = 8 * (crate::frame::FRAME_OVERHEAD + COMMAND_PAYLOAD.len());
    let reply_bits = 8 * (crate::frame::FRAME_OVERHEAD + FUNCTION_TEST_PAYLOAD.len());
    let wake = transition(PowerMode::Stop1, PowerMode::Run, modes).latency_s;
    2.0 * (modem.airtime_s(frame_bits) + wake + modem.airtime_s(reply_bits))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PollOutcome {
    Reply(Vec<u8>),
    Timeout,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MasterEvent {
    PollRequest(Address),
    FrameReceived(Frame),
    Timeout { timer_id: u64 },
    TxDone,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MasterAction {
    SendFrame(Frame),
    StartTimer {
        timer_id: u64,
        after_s: f64,
    },
    CancelTimer {
        timer_id: u64,
    },
    Report {
        target: Address,
        outcome: PollOutcome,
    },
    Queued(Address),
    Ignored {
        reason: &'static str,
    },
}

pub fn command_frame(target: Address) -> Frame {
    Frame::new(DIRECT_RELAY_DEPTH, target, COMMAND_PAYLOAD.to_vec()).expect("two-byte payload")
}

fn send_command(next: &mut MasterState, target: Address, actions: &mut Vec<MasterAction>) {
    next.phase = MasterPhase::SendCmd;
    next.timer_id += 1;
    next.pending_target = Some(target);
    actions.push(MasterAction::SendFrame(command_frame(target)));
    actions.push(MasterAction::StartTimer {
        timer_id: next.timer_id,
        after_s: next.timeout_s,
    });
    next.phase = MasterPhase::AwaitReply;
}

fn finish_poll(next: &mut MasterState, outcome: PollOutcome, actions: &mut Vec<MasterAction>) {
    let target = next.pending_target.take().expect("awaiting a reply");
    next.phase = MasterPhase::Report;
    actions.push(MasterAction::Report { target, outcome });
    next.phase = MasterPhase::Idle;
    if let Some(t) = next.queue.pop_front() {
        next.retries_left = next.max_retries;
        send_command(next, t, actions);
    }
}

pub fn master_step(state: &MasterState, event: &MasterEvent) -> (MasterState, Vec<MasterAction>) {
    let mut next = state.clone();
    let mut actions = Vec::new();
    match event {
        MasterEvent::PollRequest(target) => {
            if state.phase == MasterPhase::Idle {
                next.retries_left = next.max_retries;
                send_command(&mut next, *target, &mut actions);
            } else {
                next.queue.push_back(*target);
                actions.push(MasterAction::Queued(*target));
            }
        }
        MasterEvent::FrameReceived(frame) => match state.pending_target {
            Some(target)
                if state.phase == MasterPhase::AwaitReply
                    && address_matches(&frame.address(), &target) =>
            {
                next.phase = MasterPhase::Receive;
                actions.push(MasterAction::CancelTimer {
                    timer_id: state.timer_id,
                });
                finish_poll(
                    &mut next,
                    PollOutcome::Reply(frame.payload().to_vec()),
                    &mut actions,
                );
            }
            _ => actions.push(MasterAction::Ignored {
                reason: "address filter",
            }),
        },
        MasterEvent::Timeout { timer_id } => {
            if state.phase != MasterPhase::AwaitReply || *timer_id != state.timer_id {
                actions.push(MasterAction::Ignored {
                    reason: "stale timer",
                });
            } else if state.retries_left > 0 {
                next.retries_left -= 1;
                let target = state.pending_target.expect("awaiting a reply");
                send_command(&mut next, target, &mut actions);
            } else {
                finish_poll(&mut next, PollOutcome::Timeout, &mut actions);
            }
        }
        MasterEvent::TxDone => {}
    }
    (next, actions)
}

pub fn master_accepted(actions: &[MasterAction]) -> bool {
    actions.iter().any(|a| {
        matches!(
            a,
            MasterAction::Report {
                outcome: PollOutcome::Reply(_),
                ..
            }
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const ADDR: Address = Address([0x64, 0x49, 0x46, 0x68, 0x00, 0x53]);
    const OTHER: Address = Address([0x89, 0x47, 0x46, 0x68, 0x00, 0x53]);
    const MASTER: Address = Address([0x02, 0x49, 0x46, 0x68, 0x00, 0x53]);

    fn slave(mode: SlaveMode, t: f64) -> SlaveState {
        SlaveState::new(ADDR, mode, t, Gating::ALL_UNITS, &ModeTable::default()).unwrap()
    }

    fn wake_and_reply(s: &SlaveState) -> (SlaveState, Frame) {
        let (s, a) = slave_step(s, &SlaveEvent::FrameReceived(command_frame(s.address)));
        assert_eq!(s.phase, SlavePhase::WakeCheck);
        assert_eq!(
            a,
            vec![SlaveAction::PowerTransition {
                from: PowerMode::Stop1,
                to: PowerMode::Run,
                latency_s: 7.8e-6
            }]
        );
        let (s, a) = slave_step(&s, &SlaveEvent::Tick);
        assert_eq!(s.phase, SlavePhase::Transmit);
        assert!(s.gating.contains(Gating::CARRIER));
        let reply = a
            .iter()
            .find_map(|x| match x {
                SlaveAction::SendFrame(f) => Some(f.clone()),
                _ => None,
            })
            .unwrap();
        (s, reply)
    }

    #[test]
    fn temperature_encoding() {
        assert_eq!(encode_temperature(19.7).unwrap().to_bytes(), [0x13, 0x07]);
        assert_eq!(encode_temperature(24.8).unwrap().to_bytes(), [0x18, 0x08]);
        assert_eq!(encode_temperature(0.0).unwrap().to_bytes(), [0, 0]);
        assert!(encode_temperature(-0.5).is_err());
        assert!(encode_temperature(100.0).is_err());
        assert!(encode_temperature(99.96).is_err());
        assert!(encode_temperature(f64::NAN).is_err());
    }

    #[test]
    fn temperature_decoding() {
        let r = SensorReading {
            integer_c: 0x13,
            decimal_c: 0x07,
        };
        assert_eq!(decode_temperature(r).unwrap(), 19.7);
        let bad = SensorReading {
            integer_c: 0,
            decimal_c: 0x0A,
        };
        assert_eq!(
            decode_temperature(bad),
            Err(NodeError::InvalidDecimalDigit(10))
        );
    }

    #[test]
    fn function_test_reply() {
        let (_, reply) = wake_and_reply(&slave(SlaveMode::FunctionTest, 0.0));
        assert_eq!(reply.payload(), &FUNCTION_TEST_PAYLOAD);
        assert_eq!(reply.relay_depth(), 1);
        assert_eq!(reply.address(), ADDR);
    }

    #[test]
    fn sensor_reply() {
        let (_, reply) = wake_and_reply(&slave(SlaveMode::Sensor, 19.7));
        assert_eq!(reply.payload(), &[0x13, 0x07]);
    }

    #[test]
    fn mismatch_stays_in_standby() {
        let s = slave(SlaveMode::FunctionTest, 0.0);
        let (n, a) = slave_step(&s, &SlaveEvent::FrameReceived(command_frame(OTHER)));
        assert_eq!(n, s);
        assert!(a.is_empty());
        assert!(!slave_accepted(&a));
    }

    #[test]
    fn cycle_returns_to_initial_state() {
        let s = slave(SlaveMode::Sensor, 24.8);
        let (t, _) = wake_and_reply(&s);
        let (back, a) = slave_step(&t, &SlaveEvent::TxDone);
        assert_eq!(back, s);
        assert!(a.contains(&SlaveAction::PowerTransition {
            from: PowerMode::Run,
            to: PowerMode::Stop1,
            latency_s: 0.0
        }));
    }

    #[test]
    fn unexpected_events_are_logged_and_ignored() {
        let s = slave(SlaveMode::FunctionTest, 0.0);
        let (n, a) = slave_step(&s, &SlaveEvent::TxDone);
        assert_eq!(n, s);
        assert!(matches!(a[..], [SlaveAction::Ignored { .. }]));
        let (w, _) = slave_step(&s, &SlaveEvent::FrameReceived(command_frame(ADDR)));
        let (w2, a) = slave_step(&w, &SlaveEvent::FrameReceived(command_frame(ADDR)));
        assert_eq!(w2, w);
        assert!(!slave_accepted(&a));
    }

    #[test]
    fn sensor_slave_rejects_bad_temperature() {
        assert!(SlaveState::new(
            ADDR,
            SlaveMode::Sensor,
            120.0,
            Gating::NONE,
            &ModeTable::default()
        )
        .is_err());
        // function-test slaves never read the sensor
        assert!(SlaveState::new(
            ADDR,
            SlaveMode::FunctionTest,
            120.0,
            Gating::NONE,
            &ModeTable::default()
        )
        .is_ok());
    }

    #[test]
    fn poll_emits_command_and_timer() {
        let m = MasterState::new(MASTER, 1e-3, 0);
        let (m, a) = master_step(&m, &MasterEvent::PollRequest(ADDR));
        assert_eq!(m.phase, MasterPhase::AwaitReply);
        assert_eq!(m.pending_target, Some(ADDR));
        match &a[0] {
            MasterAction::SendFrame(f) => assert_eq!(
                f.encode(),
                vec![0x01, 0x64, 0x49, 0x46, 0x68, 0x00, 0x53, 0x02, 0x12, 0x34, 0xF7, 0x75]
            ),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            a[1],
            MasterAction::StartTimer {
                timer_id: 1,
                after_s: 1e-3
            }
        );
    }

    #[test]
    fn reply_from_wrong_address_ignored() {
        let m = MasterState::new(MASTER, 1e-3, 0);
        let (m, _) = master_step(&m, &MasterEvent::PollRequest(ADDR));
        let stray = Frame::new(1, OTHER, vec![0, 0xFF]).unwrap();
        let (m2, a) = master_step(&m, &MasterEvent::FrameReceived(stray));
        assert_eq!(m2, m);
        assert!(!master_accepted(&a));
    }

    #[test]
    fn matching_reply_reported() {
        let m = MasterState::new(MASTER, 1e-3, 0);
        let (m, _) = master_step(&m, &MasterEvent::PollRequest(ADDR));
        let reply = Frame::new(1, ADDR, vec![0, 0xFF]).unwrap();
        let (m, a) = master_step(&m, &MasterEvent::FrameReceived(reply));
        assert_eq!(m.phase, MasterPhase::Idle);
        assert!(master_accepted(&a));
        assert!(a.contains(&MasterAction::Report {
            target: ADDR,
            outcome: PollOutcome::Reply(vec![0, 0xFF])
        }));
    }

    #[test]
    fn timeout_reports_and_idles() {
        let m = MasterState::new(MASTER, 1e-3, 0);
        let (m, _) = master_step(&m, &MasterEvent::PollRequest(ADDR));
        let (stale, a) = master_step(&m, &MasterEvent::Timeout { timer_id: 99 });
        assert_eq!(stale, m);
        assert!(matches!(a[..], [MasterAction::Ignored { .. }]));
        let (m, a) = master_step(&m, &MasterEvent::Timeout { timer_id: 1 });
        assert_eq!(m.phase, MasterPhase::Idle);
        assert_eq!(
            a,
            vec![MasterAction::Report {
                target: ADDR,
                outcome: PollOutcome::Timeout
            }]
        );
    }

    #[test]
    fn retries_resend_before_timing_out() {
        let m = MasterState::new(MASTER, 1e-3, 1);
        let (m, _) = master_step(&m, &MasterEvent::PollRequest(ADDR));
        let (m, a) = master_step(&m, &MasterEvent::Timeout { timer_id: 1 });
        assert!(matches!(a[0], MasterAction::SendFrame(_)));
        assert_eq!(m.timer_id, 2);
        let (m, a) = master_step(&m, &MasterEvent::Timeout { timer_id: 2 });
        assert_eq!(m.phase, MasterPhase::Idle);
        assert!(matches!(a[0], MasterAction::Report { .. }));
    }

    #[test]
    fn polls_while_busy_are_queued() {
        let m = MasterState::new(MASTER, 1e-3, 0);
        let (m, _) = master_step(&m, &MasterEvent::PollRequest(ADDR));
        let (m, a) = master_step(&m, &MasterEvent::PollRequest(OTHER));
        assert_eq!(a, vec![MasterAction::Queued(OTHER)]);
        assert_eq!(m.pending_target, Some(ADDR));
        let (m, a) = master_step(&m, &MasterEvent::Timeout { timer_id: 1 });
        assert_eq!(m.pending_target, Some(OTHER));
        assert_eq!(m.phase, MasterPhase::AwaitReply);
        assert!(a
            .iter()
            .any(|x| matches!(x, MasterAction::SendFrame(f) if f.address() == OTHER)));
    }

    #[test]
    fn default_timeout_from_airtime() {
        let modem = ModemConfig::with_rate(115_200);
        let t = default_timeout_s(&modem, &ModeTable::default());
        let air = 97.0 * 14.0 / 1.67e6;
        assert!((t - 2.0 * (2.0 * air + 7.8e-6)).abs() < 1e-12);
    }
}
