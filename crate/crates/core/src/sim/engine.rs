//! Event loop.
//!
//! Events run in `(time, seq)` order, `seq` being the insertion counter.
//! Samples are generated only for transmissions: each one is laid on an
//! absolute sample grid, and when it ends every other node receives the
//! superposition of all transmissions overlapping it, passed through the
//! channel, its own noise realization and the front end, then demodulated
//! and decoded.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{add_interference, condition};
use crate::frame::{decode_frame, to_hex_line, Address, CodecError, Frame};
use crate::modem::{
    add_gaussian_noise, bits_to_bytes, bytes_to_bits, db_to_linear, demodulate, modulate,
    noise_sigma_for,
};
use crate::nodes::{
    default_timeout_s, master_accepted, master_step, slave_accepted, slave_step, MasterAction,
    MasterEvent, MasterState, PollOutcome, SlaveAction, SlaveEvent, SlaveState, DIRECT_RELAY_DEPTH,
};
use crate::power::{charge_consumed, EnergyTrace, Gating, PowerMode, UnitBudget};
use crate::rng::derive_seed;
use crate::sim::report::{LinkReport, NodeReport, PollRecord, Report, Role, TimelineRecord};
use crate::sim::scenario::{NodeId, Scenario};
use crate::sim::SimError;
use crate::waveform::Waveform;

/// Payload of frames sent by collision injections.
const INJECTED_PAYLOAD: [u8; 2] = [0xA5, 0x5A];

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Keep up to this many conditioned receive waveforms.
    pub dump_waveforms: usize,
}

#[derive(Debug, Clone)]
pub struct DumpedWaveform {
    pub label: String,
    pub wave: Waveform,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: Report,
    /// Per-node energy traces, indexed by node id, closed at `duration_s`.
    pub energy_traces: Vec<EnergyTrace>,
    pub waveforms: Vec<DumpedWaveform>,
}

pub fn run_scenario(sc: &Scenario) -> Result<Report, SimError> {
    run_scenario_with(sc, &RunOptions::default()).map(|o| o.report)
}

pub fn run_scenario_with(sc: &Scenario, opts: &RunOptions) -> Result<RunOutput, SimError> {
    sc.validate()?;
    let mut engine = Engine::new(sc, opts);
    engine.run();
    Ok(engine.finish())
}

#[derive(Debug)]
enum EventKind {
    Poll(Address),
    Inject(NodeId),
    TxEnd(usize),
    Rx {
        node: NodeId,
        result: Result<Frame, CodecError>,
    },
    Wake(NodeId),
    Timer(u64),
}

#[derive(Debug)]
struct Queued {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Transmission {
    node: NodeId,
    bits: Vec<u8>,
    samples: Vec<f64>,
    start: u64,
    end: u64,
    forced: bool,
}

struct NodeRuntime {
    address: Address,
    budget: UnitBudget,
    frames_sent: u64,
    frames_received: u64,
    frames_filtered: u64,
    decode_errors: u64,
    timeouts: u64,
    trace: EnergyTrace,
    mode: PowerMode,
    gating: Gating,
    since: f64,
}

impl NodeRuntime {
    fn new(
        address: Address,
        budget: UnitBudget,
        mode: PowerMode,
        gating: Gating,
        supply_v: f64,
    ) -> Self {
        NodeRuntime {
            address,
            budget,
            frames_sent: 0,
            frames_received: 0,
            frames_filtered: 0,
            decode_errors: 0,
            timeouts: 0,
            trace: EnergyTrace::new(supply_v),
            mode,
            gating,
            since: 0.0,
        }
    }

    fn set_power(&mut self, now: f64, mode: PowerMode, gating: Gating) {
        if mode != self.mode || gating != self.gating {
            self.trace.push(self.mode, self.gating, now - self.since);
            self.mode = mode;
            self.gating = gating;
            self.since = now;
        }
    }
}

struct Engine<'a> {
    sc: &'a Scenario,
    opts: &'a RunOptions,
    now: f64,
    seq: u64,
    queue: BinaryHeap<Queued>,
    master: MasterState,
    /// Indexed by node id - 1.
    slaves: Vec<SlaveState>,
    nodes: Vec<NodeRuntime>,
    master_tx_active: u32,
    cancelled_timers: BTreeSet<u64>,
    txs: Vec<Transmission>,
    timeline: Vec<TimelineRecord>,
    polls: Vec<PollRecord>,
    physical_bits: u64,
    bit_errors: u64,
    fs: f64,
    delay_samples: u64,
    gain: f64,
    noise_sigma: f64,
    waveforms: Vec<DumpedWaveform>,
}

impl<'a> Engine<'a> {
    fn new(sc: &'a Scenario, opts: &'a RunOptions) -> Self {
        let fs = sc.modem.sample_rate_hz();
        let gain = sc.channel.amplitude_gain().expect("validated");
        let noise_sigma = match sc.link_ebn0_db {
            Some(db) => noise_sigma_for(db_to_linear(db), sc.modem.amplitude_v * gain, &sc.modem),
            None => sc.channel.noise_sigma_v,
        };
        let timeout = sc
            .master
            .timeout_s
            .unwrap_or_else(|| default_timeout_s(&sc.modem, &sc.modes));
        let master = MasterState::new(sc.master.address, timeout, sc.master.max_retries);

        let mut nodes = vec![NodeRuntime::new(
            sc.master.address,
            sc.master.budget.clone(),
            PowerMode::Run,
            sc.master.budget.gating & Gating::ALL_UNITS,
            sc.supply_v,
        )];
        let mut slaves = Vec::with_capacity(sc.slaves.len());
        for s in &sc.slaves {
            let state = SlaveState::new(
                s.address,
                s.mode,
                s.temperature_c,
                s.budget.gating,
                &sc.modes,
            )
            .expect("validated");
            nodes.push(NodeRuntime::new(
                s.address,
                s.budget.clone(),
                state.power_mode,
                state.gating,
                sc.supply_v,
            ));
            slaves.push(state);
        }

        let mut engine = Engine {
            sc,
            opts,
            now: 0.0,
            seq: 0,
            queue: BinaryHeap::new(),
            master,
            slaves,
            nodes,
            master_tx_active: 0,
            cancelled_timers: BTreeSet::new(),
            txs: Vec::new(),
            timeline: Vec::new(),
            polls: Vec::new(),
            physical_bits: 0,
            bit_errors: 0,
            fs,
            delay_samples: sc.channel.delay_samples(fs) as u64,
            gain,
            noise_sigma,
            waveforms: Vec::new(),
        };
        for p in sc.expanded_polls() {
            engine.schedule(p.time_s, EventKind::Poll(p.target));
        }
        for inj in &sc.collision_injections {
            engine.schedule(inj.time_s, EventKind::Inject(inj.node));
        }
        engine
    }

    fn schedule(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Queued {
            time,
            seq: self.seq,
            kind,
        });
    }

    fn log(
        &mut self,
        node: NodeId,
        action: &str,
        detail: Option<String>,
        frame_hex: Option<String>,
    ) {
        let seq = self.timeline.len() as u64;
        self.timeline.push(TimelineRecord {
            time_s: self.now,
            seq,
            node,
            action: action.to_string(),
            detail,
            frame_hex,
        });
    }

    fn run(&mut self) {
        while let Some(ev) = self.queue.peek() {
            if ev.time > self.sc.duration_s {
                break;
            }
            let ev = self.queue.pop().expect("peeked");
            self.now = ev.time;
            match ev.kind {
                EventKind::Poll(target) => {
                    self.log(0, "poll_request", Some(target.to_string()), None);
                    self.step_master(MasterEvent::PollRequest(target));
                }
                EventKind::Inject(node) => {
                    let frame = Frame::new(
                        DIRECT_RELAY_DEPTH,
                        self.nodes[node].address,
                        INJECTED_PAYLOAD.to_vec(),
                    )
                    .expect("short payload");
                    self.log(node, "inject", None, None);
                    self.start_tx(node, &frame, true);
                }
                EventKind::TxEnd(tx) => self.end_tx(tx),
                EventKind::Rx { node, result } => self.deliver(node, result),
                EventKind::Wake(node) => {
                    self.step_slave(node, SlaveEvent::Tick);
                }
                EventKind::Timer(id) => {
                    if !self.cancelled_timers.remove(&id) {
                        self.step_master(MasterEvent::Timeout { timer_id: id });
                    }
                }
            }
        }
    }

    fn start_tx(&mut self, node: NodeId, frame: &Frame, forced: bool) {
        let bytes = frame.encode();
        let bits = bytes_to_bits(&bytes);
        let samples = modulate(&bits, &self.sc.modem).into_samples();
        let start = (self.now * self.fs).round() as u64;
        let end = start + samples.len() as u64;
        let id = self.txs.len();
        self.txs.push(Transmission {
            node,
            bits,
            samples,
            start,
            end,
            forced,
        });
        self.nodes[node].frames_sent += 1;
        self.log(node, "tx_start", None, Some(to_hex_line(&bytes)));
        if node == 0 && !forced {
            self.master_tx_active += 1;
            self.refresh_master_power();
        }
        self.schedule(end as f64 / self.fs, EventKind::TxEnd(id));
    }

    fn end_tx(&mut self, id: usize) {
        let (node, forced, end) = {
            let t = &self.txs[id];
            (t.node, t.forced, t.end)
        };
        self.log(node, "tx_end", None, None);
        let arrival = (end + self.delay_samples) as f64 / self.fs;
        for (rx_node, result) in self.receive(id) {
            self.schedule(
                arrival,
                EventKind::Rx {
                    node: rx_node,
                    result,
                },
            );
        }
        if forced {
            return;
        }
        if node == 0 {
            self.master_tx_active -= 1;
            self.refresh_master_power();
            self.step_master(MasterEvent::TxDone);
        } else {
            self.step_slave(node, SlaveEvent::TxDone);
        }
    }

    /// Channel output over transmission `id`'s span before receiver noise.
    fn channel_window(&self, id: usize) -> Vec<f64> {
        let t = &self.txs[id];
        let mut window = vec![0.0; (t.end - t.start) as usize];
        for u in self
            .txs
            .iter()
            .filter(|u| u.start < t.end && u.end > t.start)
        {
            let from = u.start.max(t.start);
            let to = u.end.min(t.end);
            let dst = &mut window[(from - t.start) as usize..(to - t.start) as usize];
            let src = &u.samples[(from - u.start) as usize..(to - u.start) as usize];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        for s in &mut window {
            *s *= self.gain;
        }
        add_interference(
            &mut window,
            &self.sc.channel.interference,
            self.fs,
            t.start + self.delay_samples,
        );
        window
    }

    fn receive(&mut self, id: usize) -> Vec<(NodeId, Result<Frame, CodecError>)> {
        let base = self.channel_window(id);
        let sender = self.txs[id].node;
        let mut shared: Option<(Vec<u8>, Waveform)> = None;
        let mut out = Vec::new();
        for node in (0..self.nodes.len()).filter(|&n| n != sender) {
            let (bits, conditioned) = match (&shared, self.noise_sigma) {
                (Some(r), 0.0) => r.clone(),
                _ => {
                    let mut samples = base.clone();
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                        self.sc.seed,
                        &[id as u64, node as u64],
                    ));
                    add_gaussian_noise(&mut samples, self.noise_sigma, &mut rng);
                    let wave =
                        condition(&Waveform::from_parts(samples, self.fs), &self.sc.front_end)
                            .expect("validated");
                    let bits = demodulate(&wave, &self.sc.modem, self.txs[id].bits.len())
                        .expect("window sized to tx");
                    if self.noise_sigma == 0.0 {
                        shared = Some((bits.clone(), wave.clone()));
                    }
                    (bits, wave)
                }
            };
            let tx_bits = &self.txs[id].bits;
            self.physical_bits += tx_bits.len() as u64;
            self.bit_errors += tx_bits.iter().zip(&bits).filter(|(a, b)| a != b).count() as u64;
            if self.waveforms.len() < self.opts.dump_waveforms {
                self.waveforms.push(DumpedWaveform {
                    label: format!("tx{id}_node{node}"),
                    wave: conditioned,
                });
            }
            out.push((node, decode_frame(&bits_to_bytes(&bits))));
        }
        out
    }

    fn deliver(&mut self, node: NodeId, result: Result<Frame, CodecError>) {
        let frame = match result {
            Ok(f) => f,
            Err(e) => {
                self.nodes[node].decode_errors += 1;
                self.log(
                    node,
                    "rx_error",
                    Some(format!("{:?}@{}", e.kind, e.offset)),
                    None,
                );
                return;
            }
        };
        self.log(node, "rx_decoded", None, Some(to_hex_line(&frame.encode())));
        let accepted = if node == 0 {
            master_accepted(&self.step_master(MasterEvent::FrameReceived(frame)))
        } else {
            slave_accepted(&self.step_slave(node, SlaveEvent::FrameReceived(frame)))
        };
        if accepted {
            self.nodes[node].frames_received += 1;
        } else {
            self.nodes[node].frames_filtered += 1;
        }
    }

    fn refresh_master_power(&mut self) {
        let mut gating = self.nodes[0].budget.gating & Gating::ALL_UNITS;
        if self.master_tx_active > 0 {
            gating = gating | Gating::CARRIER_TX;
        }
        let now = self.now;
        self.nodes[0].set_power(now, PowerMode::Run, gating);
    }

    fn step_master(&mut self, event: MasterEvent) -> Vec<MasterAction> {
        let (next, actions) = master_step(&self.master, &event);
        self.master = next;
        for a in &actions {
            match a {
                MasterAction::SendFrame(f) => self.start_tx(0, f, false),
                MasterAction::StartTimer { timer_id, after_s } => {
                    self.log(0, "timer_start", Some(format!("{timer_id}")), None);
                    self.schedule(self.now + after_s, EventKind::Timer(*timer_id));
                }
                MasterAction::CancelTimer { timer_id } => {
                    self.cancelled_timers.insert(*timer_id);
                }
                MasterAction::Report { target, outcome } => {
                    let reply = match outcome {
                        PollOutcome::Reply(p) => Some(to_hex_line(p)),
                        PollOutcome::Timeout => {
                            self.nodes[0].timeouts += 1;
                            None
                        }
                    };
                    let detail = reply.clone().unwrap_or_else(|| "timeout".into());
                    self.log(0, "report", Some(format!("{target}: {detail}")), None);
                    self.polls.push(PollRecord {
                        time_s: self.now,
                        target: *target,
                        reply,
                    });
                }
                MasterAction::Queued(t) => self.log(0, "queued", Some(t.to_string()), None),
                MasterAction::Ignored { reason } => {
                    self.log(0, "ignored", Some(reason.to_string()), None)
                }
            }
        }
        actions
    }

    fn step_slave(&mut self, node: NodeId, event: SlaveEvent) -> Vec<SlaveAction> {
        let (next, actions) = slave_step(&self.slaves[node - 1], &event);
        self.slaves[node - 1] = next;
        for a in &actions {
            match a {
                SlaveAction::PowerTransition {
                    from,
                    to,
                    latency_s,
                } => {
                    let name = if *to == PowerMode::Run {
                        "wake_start"
                    } else {
                        "sleep"
                    };
                    self.log(
                        node,
                        name,
                        Some(format!("{from}->{to} {latency_s:e}s")),
                        None,
                    );
                    if *to == PowerMode::Run {
                        self.schedule(self.now + latency_s, EventKind::Wake(node));
                    }
                }
                SlaveAction::SetGating(g) => {
                    self.log(node, "gate", Some(format!("{:#07b}", g.bits())), None)
                }
                SlaveAction::Acquire { payload } => {
                    self.log(node, "acquire", Some(to_hex_line(payload)), None)
                }
                SlaveAction::SendFrame(f) => self.start_tx(node, f, false),
                SlaveAction::Ignored { reason } => {
                    self.log(node, "ignored", Some(reason.to_string()), None)
                }
            }
        }
        let (mode, gating) = {
            let s = &self.slaves[node - 1];
            (s.power_mode, s.gating)
        };
        let now = self.now;
        self.nodes[node].set_power(now, mode, gating);
        actions
    }

    fn finish(mut self) -> RunOutput {
        let end = self.sc.duration_s;
        let mut energy_traces = Vec::with_capacity(self.nodes.len());
        let mut node_reports = Vec::with_capacity(self.nodes.len());
        for (i, n) in self.nodes.iter_mut().enumerate() {
            n.trace.push(n.mode, n.gating, end - n.since);
            n.since = end;
            let charge = charge_consumed(&n.trace, &n.budget, &self.sc.modes);
            node_reports.push(NodeReport {
                node: i,
                role: if i == 0 { Role::Master } else { Role::Slave },
                address: n.address,
                frames_sent: n.frames_sent,
                frames_received: n.frames_received,
                frames_filtered: n.frames_filtered,
                decode_errors: n.decode_errors,
                timeouts: n.timeouts,
                energy_uah: charge.microamp_hours,
            });
            energy_traces.push(n.trace.clone());
        }
        let link = LinkReport {
            physical_bits: self.physical_bits,
            bit_errors: self.bit_errors,
            measured_ber: if self.physical_bits > 0 {
                self.bit_errors as f64 / self.physical_bits as f64
            } else {
                0.0
            },
            nominal_bps: self.sc.modem.bit_rate_bps,
            effective_bps: self.sc.modem.effective_bit_rate(),
        };
        RunOutput {
            report: Report {
                nodes: node_reports,
                link,
                polls: self.polls,
                timeline: self.timeline,
            },
            energy_traces,
            waveforms: self.waveforms,
        }
    }
}
