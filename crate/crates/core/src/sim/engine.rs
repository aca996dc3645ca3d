use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::phy::{
    account_energy, adapt_power, adjudicate_reception, reroute_check, PowerChoice, PowerTarget, RerouteDecision,
    Transmission, REROUTE_WINDOW,
};
use super::queue::EventQueue;
use super::trace::{
    FrameKind, LossReason, SimulationTrace, TraceEvent, TraceHeader, TraceRecord, TRACE_FORMAT_VERSION,
};
use crate::config::{ConfigError, FlowSpec, ScenarioConfig};
use crate::info::{handle_icp_request, IcpMessage, InformationTable};
use crate::radio::{neighbor_graph, ActiveTransmitter, ChannelModel, NodeId, Placement, RadioError, MIN_SEPARATION};
use crate::routing::{MetricPolicy, RouteAgent, RouteReply, RouteRequest, RrepAction, RreqAction};

/// Discovery attempts per route search before giving up.
pub const DISCOVERY_ATTEMPTS: u32 = 3;
/// Rediscoveries allowed per flow within [`REROUTE_BUDGET_WINDOW`] seconds.
pub const REROUTE_BUDGET: usize = 3;
pub const REROUTE_BUDGET_WINDOW: f64 = 10.0;
/// Routing entries unused for this long are ignored.
pub const ROUTE_EXPIRY: f64 = 2.0;
/// Interference reported in ICP replies is averaged over this many seconds.
pub const INTERFERENCE_WINDOW: f64 = 1.0;

const PLACEMENT_STREAM: u64 = 0;
const FLOW_STREAM: u64 = 1;
const JITTER_STREAM: u64 = 2;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Radio(#[from] RadioError),
    #[error("placement has {got} nodes but the config asks for {expected}")]
    PlacementSize { expected: usize, got: usize },
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Node positions for `config`, drawn from its seed alone so every protocol
/// and threshold sees the same network.
pub fn sample_placement(config: &ScenarioConfig) -> Result<Placement, RadioError> {
    let mut rng = rng_stream(config.seed, PLACEMENT_STREAM);
    Placement::sample(config.n_nodes, config.area_side, MIN_SEPARATION, &mut rng)
}

/// Configured flows followed by `random_flows` extra flows between distinct
/// pairs that share a connected component.
pub fn resolve_flows(config: &ScenarioConfig, neighbors: &[BTreeSet<NodeId>]) -> Vec<FlowSpec> {
    let mut flows = config.flows.clone();
    if config.random_flows == 0 {
        return flows;
    }
    let component = components(neighbors);
    let pairs: Vec<(usize, usize)> = (0..neighbors.len())
        .flat_map(|s| (0..neighbors.len()).map(move |d| (s, d)))
        .filter(|&(s, d)| s != d && component[s] == component[d])
        .collect();
    let mut rng = rng_stream(config.seed, FLOW_STREAM);
    let count = config.random_flows.min(pairs.len());
    let mut picked = index::sample(&mut rng, pairs.len(), count).into_vec();
    picked.sort_unstable();
    for k in picked {
        let (s, d) = pairs[k];
        let offset = if config.flow_start_spread > 0.0 {
            rng.gen_range(0.0..config.flow_start_spread)
        } else {
            0.0
        };
        flows.push(FlowSpec {
            source: NodeId::from(s),
            destination: NodeId::from(d),
            start: config.establishment_time + offset,
        });
    }
    flows
}

fn components(neighbors: &[BTreeSet<NodeId>]) -> Vec<usize> {
    let mut label = vec![usize::MAX; neighbors.len()];
    for root in 0..neighbors.len() {
        if label[root] != usize::MAX {
            continue;
        }
        label[root] = root;
        let mut stack = vec![root];
        while let Some(at) = stack.pop() {
            for n in &neighbors[at] {
                if label[n.index()] == usize::MAX {
                    label[n.index()] = root;
                    stack.push(n.index());
                }
            }
        }
    }
    label
}

/// Runs `config` on a placement sampled from its seed.
pub fn run(config: &ScenarioConfig) -> Result<SimulationTrace, SimError> {
    config.validate()?;
    let placement = sample_placement(config)?;
    run_on(config, placement)
}

/// Runs `config` on an explicit placement.
pub fn run_on(config: &ScenarioConfig, placement: Placement) -> Result<SimulationTrace, SimError> {
    let mut sim = Simulator::new(config, placement)?;
    sim.run_until(config.sim_duration)?;
    Ok(sim.finish())
}

#[derive(Debug, Clone)]
enum Payload {
    /// Piggybacked ICP requests and replies.
    Hello {
        requests: Vec<IcpMessage>,
        replies: Vec<IcpMessage>,
    },
    IcpReply(IcpMessage),
    Rreq(RouteRequest),
    Rrep(RouteReply),
    Data {
        packet: u64,
        to: NodeId,
    },
}

impl Payload {
    fn kind(&self) -> FrameKind {
        match self {
            Payload::Hello { .. } => FrameKind::Hello,
            Payload::IcpReply(_) => FrameKind::IcpReply,
            Payload::Rreq(_) => FrameKind::Rreq,
            Payload::Rrep(_) => FrameKind::Rrep,
            Payload::Data { .. } => FrameKind::Data,
        }
    }

    /// Addressee of a unicast frame; `None` for broadcasts.
    fn addressee(&self) -> Option<NodeId> {
        match self {
            Payload::Hello { .. } | Payload::Rreq(_) => None,
            Payload::IcpReply(msg) => Some(msg.destination()),
            Payload::Rrep(rrep) => Some(rrep.next_hop),
            Payload::Data { to, .. } => Some(*to),
        }
    }
}

#[derive(Debug, Clone)]
struct Frame {
    air: Transmission,
    payload: Payload,
    /// Sent during network establishment, delivered regardless of SINR.
    protected: bool,
}

#[derive(Debug)]
enum Event {
    Hello {
        node: NodeId,
        epoch: u64,
    },
    FrameEnd(u64),
    Send {
        node: NodeId,
        payload: Payload,
    },
    FlowStart(usize),
    DataSend(usize),
    DiscoveryTimeout {
        flow: usize,
        sequence: u64,
    },
    ReplyWindow {
        node: NodeId,
        source: NodeId,
        sequence: u64,
    },
    SimEnd,
}

#[derive(Debug, Clone, Copy)]
struct Discovery {
    sequence: u64,
    attempt: u32,
}

#[derive(Debug, Clone)]
struct FlowState {
    spec: FlowSpec,
    route: Option<Vec<NodeId>>,
    discovery: Option<Discovery>,
    failed: bool,
    sending: bool,
    samples: VecDeque<f64>,
    reroutes: VecDeque<f64>,
    sent: u64,
    delivered: u64,
    lost: u64,
}

#[derive(Debug, Clone, Copy)]
struct Packet {
    flow: usize,
    hops: u32,
    route_sinr: f64,
}

/// Discrete-event simulation of one scenario.
pub struct Simulator {
    config: ScenarioConfig,
    channel: ChannelModel,
    policy: MetricPolicy,
    threshold: f64,
    power_target: PowerTarget,
    placement: Placement,
    neighbors: Vec<BTreeSet<NodeId>>,
    queue: EventQueue<Event>,
    info: Vec<InformationTable>,
    agents: Vec<RouteAgent>,
    /// ICP replies waiting for the owner's next HELLO, keyed by requester.
    pending_replies: Vec<BTreeMap<NodeId, IcpMessage>>,
    /// Recently radiated energy, (start time, transmitter, joules).
    activity: VecDeque<(f64, NodeId, f64)>,
    average_power: Option<(f64, Vec<ActiveTransmitter>)>,
    frames: BTreeMap<u64, Frame>,
    next_frame: u64,
    longest_frame: f64,
    energy: Vec<f64>,
    flows: Vec<FlowState>,
    discoveries: BTreeMap<(NodeId, u64), usize>,
    packets: BTreeMap<u64, Packet>,
    next_packet: u64,
    records: Vec<TraceRecord>,
    jitter: ChaCha8Rng,
    header: TraceHeader,
    ended: bool,
}

impl Simulator {
    pub fn new(config: &ScenarioConfig, placement: Placement) -> Result<Self, SimError> {
        config.validate()?;
        if placement.len() != config.n_nodes {
            return Err(SimError::PlacementSize {
                expected: config.n_nodes,
                got: placement.len(),
            });
        }
        let channel = config.channel()?;
        let neighbors = neighbor_graph(&placement, &channel, config.p_max);
        let flow_specs = resolve_flows(config, &neighbors);
        let n = config.n_nodes;
        let info = neighbors
            .iter()
            .enumerate()
            .map(|(i, nb)| InformationTable::with_neighbors(NodeId::from(i), nb.clone()))
            .collect();
        let header = TraceHeader {
            kind: "header".into(),
            format: TRACE_FORMAT_VERSION,
            config: config.clone(),
            positions: placement.positions().to_vec(),
            flows: flow_specs.clone(),
        };
        let longest_frame = [FrameKind::Hello, FrameKind::IcpReply, FrameKind::Rreq, FrameKind::Data]
            .iter()
            .map(|k| config.airtime(k.bits(config.packet_size)))
            .fold(0.0, f64::max);

        let mut sim = Simulator {
            channel,
            policy: config.policy(),
            threshold: config.sinr_threshold(),
            power_target: PowerTarget {
                p_max: config.p_max,
                threshold: config.sinr_threshold(),
                margin: config.power_margin(),
                noise_variance: config.noise_variance,
                alpha: config.alpha,
            },
            queue: EventQueue::default(),
            info,
            agents: (0..n).map(|i| RouteAgent::new(NodeId::from(i))).collect(),
            pending_replies: vec![BTreeMap::new(); n],
            activity: VecDeque::new(),
            average_power: None,
            frames: BTreeMap::new(),
            next_frame: 0,
            longest_frame,
            energy: vec![0.0; n],
            flows: flow_specs
                .iter()
                .map(|&spec| FlowState {
                    spec,
                    route: None,
                    discovery: None,
                    failed: false,
                    sending: false,
                    samples: VecDeque::new(),
                    reroutes: VecDeque::new(),
                    sent: 0,
                    delivered: 0,
                    lost: 0,
                })
                .collect(),
            discoveries: BTreeMap::new(),
            packets: BTreeMap::new(),
            next_packet: 0,
            records: Vec::new(),
            jitter: rng_stream(config.seed, JITTER_STREAM),
            header,
            ended: false,
            neighbors,
            placement,
            config: config.clone(),
        };

        sim.queue.schedule(sim.config.sim_duration, Event::SimEnd);
        for i in 0..n {
            let first = sim.hello_offset();
            sim.queue.schedule(
                first,
                Event::Hello {
                    node: NodeId::from(i),
                    epoch: 0,
                },
            );
        }
        for (k, flow) in sim.flows.iter().enumerate() {
            if flow.spec.start < sim.config.sim_duration {
                sim.queue.schedule(flow.spec.start, Event::FlowStart(k));
            }
        }
        Ok(sim)
    }

    pub fn now(&self) -> f64 {
        self.queue.now()
    }

    pub fn placement(&self) -> &Placement {
        &self.placement
    }

    pub fn neighbors(&self) -> &[BTreeSet<NodeId>] {
        &self.neighbors
    }

    pub fn info_tables(&self) -> &[InformationTable] {
        &self.info
    }

    pub fn flows(&self) -> &[FlowSpec] {
        &self.header.flows
    }

    /// Processes every event strictly before `until`.
    pub fn run_until(&mut self, until: f64) -> Result<(), SimError> {
        while !self.ended {
            match self.queue.peek_time() {
                Some(t) if t < until => {}
                _ => break,
            }
            let (_, event) = self.queue.pop().expect("peeked");
            self.handle(event)?;
        }
        Ok(())
    }

    /// Runs to the configured end and returns the trace.
    pub fn finish(mut self) -> SimulationTrace {
        let end = self.config.sim_duration;
        while !self.ended {
            let Some((_, event)) = self.queue.pop() else { break };
            if let Event::SimEnd = event {
                self.end();
            } else if self.queue.now() < end {
                // Errors here come only from co-located nodes, which the
                // placement constructors already rule out.
                self.handle(event).expect("validated scenario");
            }
        }
        if !self.ended {
            self.end();
        }
        SimulationTrace {
            header: self.header,
            records: self.records,
        }
    }

    /// Each HELLO lands at a fresh uniform offset inside its epoch so that
    /// neighbours never lock into colliding phases.
    fn hello_offset(&mut self) -> f64 {
        self.jitter.gen_range(0.0..self.config.hello_interval)
    }

    fn record(&mut self, subject: NodeId, event: TraceEvent) {
        self.records.push(TraceRecord {
            time: self.now(),
            subject,
            event,
        });
    }

    fn bootstrapping(&self) -> bool {
        self.now() < self.config.establishment_time
    }

    fn jitter_delay(&mut self) -> f64 {
        if self.config.forward_jitter > 0.0 {
            self.jitter.gen_range(0.0..self.config.forward_jitter)
        } else {
            0.0
        }
    }

    fn handle(&mut self, event: Event) -> Result<(), SimError> {
        match event {
            Event::Hello { node, epoch } => self.on_hello(node, epoch),
            Event::FrameEnd(id) => self.on_frame_end(id)?,
            Event::Send { node, payload } => {
                self.transmit(node, self.config.p_max, payload, false);
            }
            Event::FlowStart(flow) => self.start_discovery(flow, 1),
            Event::DataSend(flow) => self.on_data_send(flow),
            Event::DiscoveryTimeout { flow, sequence } => self.on_discovery_timeout(flow, sequence),
            Event::ReplyWindow { node, source, sequence } => {
                if let Some(rrep) = self.agents[node.index()].reply(source, sequence) {
                    self.transmit(node, self.config.p_max, Payload::Rrep(rrep), false);
                }
            }
            Event::SimEnd => self.end(),
        }
        Ok(())
    }

    fn end(&mut self) {
        if self.ended {
            return;
        }
        let mut in_flight = vec![0u64; self.flows.len()];
        for p in self.packets.values() {
            in_flight[p.flow] += 1;
        }
        let summaries: Vec<_> = self
            .flows
            .iter()
            .zip(in_flight)
            .enumerate()
            .map(|(k, (f, in_flight))| {
                let event = TraceEvent::FlowSummary {
                    flow: k,
                    sent: f.sent,
                    delivered: f.delivered,
                    lost: f.lost,
                    in_flight,
                };
                (f.spec.source, event)
            })
            .collect();
        for (source, event) in summaries {
            self.record(source, event);
        }
        for i in 0..self.energy.len() {
            let energy = self.energy[i];
            self.record(NodeId::from(i), TraceEvent::NodeEnergy { energy });
        }
        self.record(NodeId(0), TraceEvent::SimEnd);
        self.ended = true;
    }

    fn transmit(&mut self, node: NodeId, power: f64, payload: Payload, marginal: bool) -> u64 {
        let kind = payload.kind();
        let bits = kind.bits(self.config.packet_size);
        let now = self.now();
        let id = self.next_frame;
        self.next_frame += 1;
        let energy = account_energy(power, bits, self.config.data_rate);
        self.energy[node.index()] += energy;
        self.activity.push_back((now, node, energy));
        self.average_power = None;
        let receiver = payload.addressee();
        self.record(
            node,
            TraceEvent::FrameTx {
                frame: id,
                frame_kind: kind,
                bits,
                power,
                energy,
                receiver,
                marginal,
            },
        );
        let end = now + self.config.airtime(bits);
        self.frames.insert(
            id,
            Frame {
                air: Transmission {
                    transmitter: node,
                    power,
                    start: now,
                    end,
                },
                payload,
                protected: self.bootstrapping(),
            },
        );
        self.queue.schedule(end, Event::FrameEnd(id));
        id
    }

    /// Average transmit power of every node over the recent window.
    fn recent_activity(&mut self) -> &[ActiveTransmitter] {
        let now = self.now();
        if self.average_power.as_ref().is_none_or(|(t, _)| *t != now) {
            while self
                .activity
                .front()
                .is_some_and(|&(t, _, _)| t <= now - INTERFERENCE_WINDOW)
            {
                self.activity.pop_front();
            }
            let span = now.clamp(f64::MIN_POSITIVE, INTERFERENCE_WINDOW);
            let mut joules = vec![0.0; self.config.n_nodes];
            for &(_, node, e) in &self.activity {
                joules[node.index()] += e;
            }
            let active = joules
                .iter()
                .enumerate()
                .filter(|(_, &e)| e > 0.0)
                .map(|(i, &e)| ActiveTransmitter {
                    node: NodeId::from(i),
                    power: e / span,
                })
                .collect();
            self.average_power = Some((now, active));
        }
        &self.average_power.as_ref().expect("just filled").1
    }

    fn on_hello(&mut self, node: NodeId, epoch: u64) {
        let i = node.index();
        let now = self.now();
        let requests = self.info[i].refresh(now, self.config.hello_interval, self.config.p_max);
        let replies = std::mem::take(&mut self.pending_replies[i]).into_values().collect();
        self.transmit(node, self.config.p_max, Payload::Hello { requests, replies }, false);
        let next = (epoch + 1) as f64 * self.config.hello_interval + self.hello_offset();
        if next < self.config.sim_duration {
            self.queue.schedule(next, Event::Hello { node, epoch: epoch + 1 });
        }
    }

    fn on_frame_end(&mut self, id: u64) -> Result<(), SimError> {
        let now = self.now();
        let horizon = now - 2.0 * self.longest_frame;
        self.frames.retain(|_, f| f.air.end >= horizon);
        let frame = self.frames.get(&id).expect("frame still on record").clone();
        let concurrent: Vec<Transmission> = self
            .frames
            .iter()
            .filter(|(&other, f)| other != id && f.air.overlaps(&frame.air))
            .map(|(_, f)| f.air)
            .collect();
        let tx = frame.air.transmitter;
        let receivers: Vec<NodeId> = match frame.payload.addressee() {
            Some(to) => vec![to],
            None => self.neighbors[tx.index()].iter().copied().collect(),
        };
        for rx in receivers {
            let reception = adjudicate_reception(
                &frame.air,
                rx,
                &self.placement,
                &self.channel,
                &concurrent,
                self.threshold,
            )?;
            if let Payload::Data { packet, to } = frame.payload {
                self.on_data_hop(
                    packet,
                    id,
                    tx,
                    to,
                    reception.signal,
                    reception.interference,
                    reception.sinr,
                    reception.delivered,
                );
                continue;
            }
            if frame.protected || reception.delivered {
                self.deliver_control(tx, rx, &frame.payload)?;
            }
        }
        Ok(())
    }

    fn deliver_control(&mut self, tx: NodeId, rx: NodeId, payload: &Payload) -> Result<(), SimError> {
        let r = rx.index();
        let now = self.now();
        match payload {
            Payload::Hello { requests, replies } => {
                for reply in replies {
                    self.info[r].ingest_reply(reply);
                }
                for request in requests {
                    if request.destination() != rx {
                        continue;
                    }
                    let alpha = self.channel.alpha;
                    let active = self.recent_activity().to_vec();
                    let Some(reply) = handle_icp_request(rx, request, &self.placement, alpha, &active)? else {
                        continue;
                    };
                    if self.bootstrapping() {
                        let at = self.now() + self.jitter_delay();
                        self.queue.schedule(
                            at,
                            Event::Send {
                                node: rx,
                                payload: Payload::IcpReply(reply),
                            },
                        );
                    } else {
                        self.pending_replies[r].insert(tx, reply);
                    }
                }
            }
            Payload::IcpReply(reply) => {
                self.info[r].ingest_reply(reply);
            }
            Payload::Rreq(rreq) => match self.agents[r].handle_rreq(rreq, &self.info[r], &self.policy) {
                RreqAction::Forward(next) => {
                    let at = self.now() + self.jitter_delay();
                    self.queue.schedule(
                        at,
                        Event::Send {
                            node: rx,
                            payload: Payload::Rreq(next),
                        },
                    );
                }
                RreqAction::DestinationReached { first: true } => {
                    self.queue.schedule(
                        self.now() + self.config.reply_window,
                        Event::ReplyWindow {
                            node: rx,
                            source: rreq.source,
                            sequence: rreq.sequence,
                        },
                    );
                }
                RreqAction::DestinationReached { first: false } | RreqAction::Drop(_) => {}
            },
            Payload::Rrep(rrep) => match self.agents[r].handle_rrep(rrep, now) {
                RrepAction::Forward(next) => {
                    self.transmit(rx, self.config.p_max, Payload::Rrep(next), false);
                }
                RrepAction::Established(entry) => {
                    if let Some(&flow) = self.discoveries.get(&(rrep.source, rrep.sequence)) {
                        self.on_route_established(flow, rrep, entry.metric);
                    }
                }
                RrepAction::Drop(_) => {}
            },
            Payload::Data { .. } => unreachable!("data frames are handled per hop"),
        }
        Ok(())
    }

    fn start_discovery(&mut self, flow: usize, attempt: u32) {
        let FlowSpec {
            source, destination, ..
        } = self.flows[flow].spec;
        let s = source.index();
        let rreq = self.agents[s].originate(destination, &self.info[s], &self.policy);
        let sequence = rreq.sequence;
        self.discoveries.insert((source, sequence), flow);
        self.flows[flow].discovery = Some(Discovery { sequence, attempt });
        self.record(
            source,
            TraceEvent::DiscoveryStarted {
                flow,
                sequence,
                attempt,
            },
        );
        // Jittered like every other broadcast, so that sources starting
        // together do not collide on each retry.
        let now = self.now();
        let at = now + self.jitter_delay();
        self.queue.schedule(
            at,
            Event::Send {
                node: source,
                payload: Payload::Rreq(rreq),
            },
        );
        self.queue.schedule(
            now + self.config.discovery_timeout,
            Event::DiscoveryTimeout { flow, sequence },
        );
    }

    fn on_discovery_timeout(&mut self, flow: usize, sequence: u64) {
        let Some(pending) = self.flows[flow].discovery else {
            return;
        };
        if pending.sequence != sequence {
            return;
        }
        if pending.attempt < DISCOVERY_ATTEMPTS {
            self.start_discovery(flow, pending.attempt + 1);
            return;
        }
        let f = &mut self.flows[flow];
        f.discovery = None;
        if f.route.is_none() {
            // Never had a route: keep generating packets so the loss is counted.
            f.failed = true;
            let source = f.spec.source;
            let start_sending = !f.sending;
            f.sending = true;
            self.record(source, TraceEvent::DiscoveryFailed { flow });
            if start_sending {
                self.queue.schedule(self.now(), Event::DataSend(flow));
            }
        }
    }

    fn on_route_established(&mut self, flow: usize, rrep: &RouteReply, metric: f64) {
        let f = &mut self.flows[flow];
        if f.discovery.is_some_and(|d| d.sequence <= rrep.sequence) {
            f.discovery = None;
        }
        f.route = Some(rrep.path.clone());
        f.failed = false;
        f.samples.clear();
        let source = f.spec.source;
        let start_sending = !f.sending;
        f.sending = true;
        self.record(
            source,
            TraceEvent::RouteEstablished {
                flow,
                sequence: rrep.sequence,
                path: rrep.path.clone(),
                metric,
            },
        );
        if start_sending {
            self.queue.schedule(self.now(), Event::DataSend(flow));
        }
    }

    fn on_data_send(&mut self, flow: usize) {
        let now = self.now();
        let next = now + self.config.send_interval;
        if next < self.config.sim_duration {
            self.queue.schedule(next, Event::DataSend(flow));
        }
        let packet = self.next_packet;
        self.next_packet += 1;
        let source = self.flows[flow].spec.source;
        self.flows[flow].sent += 1;
        self.record(source, TraceEvent::PacketSent { flow, packet });
        self.packets.insert(
            packet,
            Packet {
                flow,
                hops: 0,
                route_sinr: f64::INFINITY,
            },
        );
        self.forward(packet, source);
    }

    /// Sends `packet` one hop onwards from `at`, or drops it if `at` has no
    /// usable route.
    fn forward(&mut self, packet: u64, at: NodeId) {
        let p = self.packets[&packet];
        let destination = self.flows[p.flow].spec.destination;
        if p.hops as usize >= self.config.n_nodes {
            self.lose(packet, at, LossReason::HopLimit);
            return;
        }
        let now = self.now();
        let table = &mut self.agents[at.index()].table;
        let Some(next) = table.lookup(destination, now, ROUTE_EXPIRY).map(|e| e.next_hop) else {
            self.lose(packet, at, LossReason::NoRoute);
            return;
        };
        table.touch(destination, now);
        let choice = self.hop_power(at, next);
        self.transmit(at, choice.power, Payload::Data { packet, to: next }, choice.marginal);
    }

    fn hop_power(&self, from: NodeId, to: NodeId) -> PowerChoice {
        let full = PowerChoice {
            power: self.config.p_max,
            marginal: false,
        };
        if !self.config.power_adaptation {
            return full;
        }
        match self.info[from.index()].fresh_row(to) {
            Some(row) => adapt_power(
                &self.power_target,
                row.received_at_neighbor,
                self.placement.distance(from, to),
            ),
            None => full,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn on_data_hop(
        &mut self,
        packet: u64,
        frame: u64,
        tx: NodeId,
        rx: NodeId,
        signal: f64,
        interference: f64,
        sinr: f64,
        delivered: bool,
    ) {
        let Some(p) = self.packets.get_mut(&packet) else { return };
        p.hops += 1;
        p.route_sinr = p.route_sinr.min(sinr);
        let flow = p.flow;
        self.record(
            tx,
            TraceEvent::DataHop {
                flow,
                packet,
                frame,
                receiver: rx,
                signal,
                interference,
                sinr,
                delivered,
            },
        );
        if !delivered {
            self.lose(packet, rx, LossReason::Sinr);
        } else if rx == self.flows[flow].spec.destination {
            let p = self.packets.remove(&packet).expect("present");
            self.flows[flow].delivered += 1;
            self.record(
                rx,
                TraceEvent::PacketDelivered {
                    flow,
                    packet,
                    hops: p.hops,
                    route_sinr: p.route_sinr,
                },
            );
            self.after_outcome(flow, p.route_sinr);
        } else {
            self.forward(packet, rx);
        }
    }

    fn lose(&mut self, packet: u64, at: NodeId, reason: LossReason) {
        let p = self.packets.remove(&packet).expect("packet in flight");
        // Routing failures count as a zero-SINR route.
        let route_sinr = match reason {
            LossReason::Sinr => p.route_sinr,
            LossReason::NoRoute | LossReason::HopLimit => 0.0,
        };
        self.flows[p.flow].lost += 1;
        self.record(
            at,
            TraceEvent::PacketLost {
                flow: p.flow,
                packet,
                reason,
                route_sinr,
            },
        );
        self.after_outcome(p.flow, route_sinr);
    }

    fn after_outcome(&mut self, flow: usize, route_sinr: f64) {
        let now = self.now();
        let threshold = self.threshold;
        let f = &mut self.flows[flow];
        if !self.config.rerouting || f.failed || f.route.is_none() || f.discovery.is_some() {
            return;
        }
        f.samples.push_back(route_sinr);
        while f.samples.len() > REROUTE_WINDOW {
            f.samples.pop_front();
        }
        let samples: Vec<f64> = f.samples.iter().copied().collect();
        if reroute_check(&samples, threshold) == RerouteDecision::Keep {
            return;
        }
        while f.reroutes.front().is_some_and(|&t| t <= now - REROUTE_BUDGET_WINDOW) {
            f.reroutes.pop_front();
        }
        if f.reroutes.len() >= REROUTE_BUDGET {
            return;
        }
        f.reroutes.push_back(now);
        let failures = samples.iter().filter(|&&s| s < threshold).count();
        f.samples.clear();
        let source = f.spec.source;
        self.record(source, TraceEvent::Reroute { flow, failures });
        self.start_discovery(flow, 1);
    }
}
