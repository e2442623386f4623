//! Gateway router with deep packet inspection.
//!
//! Every packet crossing between the phone LAN and the cloud is attributed
//! to a flow, inspected until the flow is classified (or given up on after
//! `max_inspect` packets), run through the app's policy and accounted
//! against its subscriber.

mod bucket;
mod flow;
mod policy;
mod signature;
mod stats;

pub use bucket::TokenBucket;
pub use flow::{ClassState, Flow, FlowKey};
pub use policy::{Action, Policy, PolicyTable, DEFAULT_APP};
pub use signature::{PayloadMatch, RuleTransport, SignatureRule, SignatureSet, INSPECT_BYTES};
pub use stats::{AnomalyConfig, AnomalyFlag, AppCounters, SubscriberStats};

use std::collections::{BTreeMap, HashMap};
use std::net::Ipv4Addr;

use crate::netfabric::Ipv4Packet;

pub const DEFAULT_MAX_INSPECT: u32 = 8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DpiConfigError {
    #[error("signature file line {line}: {reason}")]
    Signature { line: usize, reason: String },
    #[error("policy file line {line}: {reason}")]
    Policy { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Lan,
    Cloud,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Lan => Side::Cloud,
            Side::Cloud => Side::Lan,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    TtlExpired,
    Blocked,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Routed {
    /// Forward now, out of the side opposite the ingress.
    Forward(Ipv4Packet),
    Drop(DropReason),
    /// Hand the ticket back to [`Router::release`] at `until`.
    Delay { until: u64, ticket: u64 },
}

#[derive(Debug, Clone)]
pub struct RouterConfig {
    pub signatures: SignatureSet,
    pub policies: PolicyTable,
    pub max_inspect: u32,
    pub anomaly: AnomalyConfig,
}

impl Default for RouterConfig {
    fn default() -> Self {
        RouterConfig {
            signatures: SignatureSet::default(),
            policies: PolicyTable::default(),
            max_inspect: DEFAULT_MAX_INSPECT,
            anomaly: AnomalyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RouterCounters {
    pub ttl_expired: u64,
    pub blocked_packets: u64,
    pub delayed_packets: u64,
}

struct Parked {
    flow: usize,
    egress: Side,
    packet: Ipv4Packet,
    after_classification: bool,
}

pub struct Router {
    cfg: RouterConfig,
    flows: Vec<Flow>,
    index: HashMap<FlowKey, usize>,
    subscribers: BTreeMap<Ipv4Addr, SubscriberStats>,
    parked: HashMap<u64, Parked>,
    next_ticket: u64,
    counters: RouterCounters,
}

impl Router {
    pub fn new(cfg: RouterConfig) -> Self {
        Router {
            cfg,
            flows: Vec::new(),
            index: HashMap::new(),
            subscribers: BTreeMap::new(),
            parked: HashMap::new(),
            next_ticket: 0,
            counters: RouterCounters::default(),
        }
    }

    pub fn config(&self) -> &RouterConfig {
        &self.cfg
    }

    /// Flows in creation order.
    pub fn flows(&self) -> &[Flow] {
        &self.flows
    }

    pub fn flow(&self, key: &FlowKey) -> Option<&Flow> {
        self.lookup(key).map(|i| &self.flows[i])
    }

    pub fn subscribers(&self) -> impl Iterator<Item = &SubscriberStats> {
        self.subscribers.values()
    }

    pub fn subscriber(&self, ip: Ipv4Addr) -> Option<&SubscriberStats> {
        self.subscribers.get(&ip)
    }

    pub fn counters(&self) -> RouterCounters {
        self.counters
    }

    pub fn parked_packets(&self) -> usize {
        self.parked.len()
    }

    fn lookup(&self, key: &FlowKey) -> Option<usize> {
        self.index.get(key).or_else(|| self.index.get(&key.reversed())).copied()
    }

    /// Routes one packet arriving on `ingress`.
    pub fn route(&mut self, ingress: Side, mut packet: Ipv4Packet, now: u64) -> Routed {
        if packet.ttl <= 1 {
            self.counters.ttl_expired += 1;
            return Routed::Drop(DropReason::TtlExpired);
        }
        packet.ttl -= 1;

        let subscriber = match ingress {
            Side::Lan => packet.src,
            Side::Cloud => packet.dst,
        };
        let key = FlowKey::of(&packet);
        let (id, new_flow) = match self.lookup(&key) {
            Some(i) => (i, false),
            None => {
                let id = self.flows.len();
                let verdict = self.cfg.policies.default_action();
                self.flows.push(Flow::new(key, subscriber, now, verdict));
                self.index.insert(key, id);
                (id, true)
            }
        };

        let bytes = packet.total_len() as u64;
        let flow = &mut self.flows[id];
        flow.last_seen = now;
        match ingress {
            Side::Lan => {
                flow.pkts_up += 1;
                flow.bytes_up += bytes;
            }
            Side::Cloud => {
                flow.pkts_down += 1;
                flow.bytes_down += bytes;
            }
        }
        let stats = self.subscribers.entry(flow.subscriber).or_insert_with(|| SubscriberStats::new(flow.subscriber));
        stats.update(flow.class_state.label(), bytes, new_flow, now, &self.cfg.anomaly);

        if flow.class_state.is_pending() {
            let before = flow.class_state.label().to_string();
            classify(flow, &packet, &self.cfg.signatures, self.cfg.max_inspect);
            if !flow.class_state.is_pending() {
                flow.classified_at = Some(now);
                let verdict = self.cfg.policies.action_for(flow.class_state.label());
                flow.set_verdict(verdict, now);
                stats.relabel(&before, flow.class_state.label(), flow.total_bytes(), flow.total_packets());
                log::trace!("{} classified as {} ({})", flow.key, flow.class_state.label(), flow.verdict);
            }
        }

        let after_classification = !flow.class_state.is_pending();
        let outcome = enforce(flow, &packet, now);
        if matches!(flow.verdict, Action::Prioritize) && !matches!(outcome, Enforcement::Drop(_)) {
            flow.prioritized_packets += 1;
            stats.prioritized_packets += 1;
        }
        match outcome {
            Enforcement::Forward => {
                flow.forwarded_bytes += bytes;
                if after_classification {
                    flow.forwarded_after_classification += bytes;
                }
                Routed::Forward(packet)
            }
            Enforcement::Drop(reason) => {
                flow.dropped_bytes += bytes;
                self.counters.blocked_packets += 1;
                Routed::Drop(reason)
            }
            Enforcement::Delay(until) => {
                let ticket = self.next_ticket;
                self.next_ticket += 1;
                self.counters.delayed_packets += 1;
                self.parked.insert(ticket, Parked { flow: id, egress: ingress.opposite(), packet, after_classification });
                Routed::Delay { until, ticket }
            }
        }
    }

    /// Releases a delayed packet; returns it with its egress side.
    pub fn release(&mut self, ticket: u64) -> Option<(Side, Ipv4Packet)> {
        let parked = self.parked.remove(&ticket)?;
        let flow = &mut self.flows[parked.flow];
        let bytes = parked.packet.total_len() as u64;
        flow.delayed_outstanding -= 1;
        flow.forwarded_bytes += bytes;
        if parked.after_classification {
            flow.forwarded_after_classification += bytes;
        }
        Some((parked.egress, parked.packet))
    }

    /// Re-evaluates every subscriber's flags at `now`.
    pub fn scan_anomalies(&mut self, now: u64) -> Vec<(Ipv4Addr, AnomalyFlag)> {
        let cfg = self.cfg.anomaly.clone();
        let mut out = Vec::new();
        for s in self.subscribers.values_mut() {
            for f in s.scan(now, &cfg) {
                out.push((s.ip, f));
            }
        }
        out
    }
}

/// Inspects one packet of a pending flow. First matching rule wins; after
/// `max_inspect` unmatched packets the flow is `Unknown`.
pub fn classify(flow: &mut Flow, packet: &Ipv4Packet, rules: &SignatureSet, max_inspect: u32) -> ClassState {
    if let ClassState::Pending(seen) = flow.class_state {
        let seen = seen + 1;
        flow.class_state = match rules.first_match(packet) {
            Some(app) => ClassState::Classified(app.to_string()),
            None if seen >= max_inspect => ClassState::Unknown,
            None => ClassState::Pending(seen),
        };
        if !flow.class_state.is_pending() {
            flow.decided_after = Some(seen);
        }
    }
    flow.class_state.clone()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Enforcement {
    Forward,
    Drop(DropReason),
    Delay(u64),
}

/// Applies the flow's verdict. Packets of a flow with delayed packets still
/// outstanding queue behind them.
pub fn enforce(flow: &mut Flow, packet: &Ipv4Packet, now: u64) -> Enforcement {
    let bytes = packet.total_len();
    let mut release = match flow.verdict {
        Action::Block => return Enforcement::Drop(DropReason::Blocked),
        Action::Allow | Action::Prioritize => now,
        Action::Throttle { .. } => flow.bucket.as_mut().map_or(now, |b| b.admit(bytes, now)),
    };
    if flow.delayed_outstanding > 0 {
        release = release.max(flow.last_release);
    }
    if release == now && flow.delayed_outstanding == 0 {
        return Enforcement::Forward;
    }
    flow.delayed_outstanding += 1;
    flow.last_release = release;
    Enforcement::Delay(release)
}


/// Signature rules matching the shipped app models.
pub const DEFAULT_SIGNATURES: &str = include_str!("../../corpus/signatures.txt");

impl SignatureSet {
    pub fn builtin() -> Self {
        SignatureSet::parse(DEFAULT_SIGNATURES).expect("shipped signatures parse")
    }
}
