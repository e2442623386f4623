use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::netfabric::Ipv4Addr;
use crate::router_dpi::{AnomalyFlag, AppCounters, ClassState};

use super::world::World;
use super::{Launch, LogLine};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioEcho {
    pub seed: u64,
    pub device_count: u32,
    pub apps: Vec<String>,
    pub duration_ms: u64,
    pub intent_delay_ms: u64,
    pub poll_interval_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceRow {
    pub index: u32,
    pub mac: String,
    pub ip: Option<Ipv4Addr>,
    pub online_at_ms: Option<u64>,
    pub connected_at_ms: Option<u64>,
    pub tx_bytes: u64,
    pub rx_bytes: u64,
    pub launches: Vec<Launch>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRow {
    pub subscriber: Ipv4Addr,
    pub key: String,
    pub proto: String,
    pub app: String,
    /// `classified`, `unknown` or `pending`.
    pub state: String,
    pub verdict: String,
    pub packets_up: u64,
    pub packets_down: u64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub forwarded_bytes: u64,
    /// Forwarded once the flow had its label and verdict.
    pub forwarded_after_classification: u64,
    pub dropped_bytes: u64,
    pub first_seen_ms: u64,
    pub last_seen_ms: u64,
    /// Packets inspected before the flow was decided.
    pub decided_after: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubscriberRow {
    pub ip: Ipv4Addr,
    pub apps: BTreeMap<String, AppCounters>,
    pub total_bytes: u64,
    pub prioritized_packets: u64,
    pub flags: Vec<AnomalyFlag>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyRow {
    pub subscriber: Ipv4Addr,
    pub flag: AnomalyFlag,
    pub at_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub ttl_expired: u64,
    pub blocked_packets: u64,
    pub delayed_packets: u64,
    pub boot_failures: u64,
    pub pool_exhausted: u64,
    pub lease_write_failures: u64,
    pub corrupt_lease_polls: u64,
    pub refused_connects: u64,
    pub cloud_rx_bytes: u64,
    pub undeliverable_packets: u64,
    pub events_dispatched: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub flows: u64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub forwarded_bytes: u64,
    pub dropped_bytes: u64,
    /// Flow count per verdict.
    pub verdicts: BTreeMap<String, u64>,
    /// Flow count per app label.
    pub apps: BTreeMap<String, u64>,
}

impl Totals {
    pub fn of(flows: &[FlowRow]) -> Self {
        let mut t = Totals::default();
        for f in flows {
            t.flows += 1;
            t.bytes_up += f.bytes_up;
            t.bytes_down += f.bytes_down;
            t.forwarded_bytes += f.forwarded_bytes;
            t.dropped_bytes += f.dropped_bytes;
            *t.verdicts.entry(f.verdict.clone()).or_default() += 1;
            *t.apps.entry(f.app.clone()).or_default() += 1;
        }
        t
    }
}

/// Everything a run produced. Rows are sorted so that equal runs
/// serialize to equal bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: ScenarioEcho,
    pub devices: Vec<DeviceRow>,
    pub flows: Vec<FlowRow>,
    pub subscribers: Vec<SubscriberRow>,
    pub anomalies: Vec<AnomalyRow>,
    pub counters: Counters,
    pub totals: Totals,
    pub log: Vec<LogLine>,
}

impl RunReport {
    pub(crate) fn build(world: &World) -> Self {
        let s = &world.plan.scenario;
        let scenario = ScenarioEcho {
            seed: s.seed,
            device_count: s.device_count,
            apps: s.apps.clone(),
            duration_ms: s.duration_ms,
            intent_delay_ms: s.intent_delay_ms,
            poll_interval_ms: s.poll_interval_ms,
        };

        let devices = world
            .devices
            .iter()
            .map(|d| {
                let session = d.ip().and_then(|ip| world.driver.session(ip));
                DeviceRow {
                    index: d.index(),
                    mac: d.mac().to_string(),
                    ip: d.ip(),
                    online_at_ms: d.online_at(),
                    connected_at_ms: session.map(|s| s.connected_at),
                    tx_bytes: d.counters().tx_bytes,
                    rx_bytes: d.counters().rx_bytes,
                    launches: session.map(|s| s.launches.clone()).unwrap_or_default(),
                }
            })
            .collect();

        let mut flows: Vec<FlowRow> = world
            .router
            .flows()
            .iter()
            .map(|f| FlowRow {
                subscriber: f.subscriber,
                key: f.key.to_string(),
                proto: f.key.proto_name().to_string(),
                app: f.class_state.label().to_string(),
                state: match f.class_state {
                    ClassState::Pending(_) => "pending",
                    ClassState::Classified(_) => "classified",
                    ClassState::Unknown => "unknown",
                }
                .to_string(),
                verdict: f.verdict.to_string(),
                packets_up: f.pkts_up,
                packets_down: f.pkts_down,
                bytes_up: f.bytes_up,
                bytes_down: f.bytes_down,
                forwarded_bytes: f.forwarded_bytes,
                forwarded_after_classification: f.forwarded_after_classification,
                dropped_bytes: f.dropped_bytes,
                first_seen_ms: f.first_seen,
                last_seen_ms: f.last_seen,
                decided_after: f.decided_after,
            })
            .collect();
        flows.sort_by(|a, b| (a.subscriber, a.first_seen_ms, &a.key).cmp(&(b.subscriber, b.first_seen_ms, &b.key)));

        let mut subscribers: Vec<SubscriberRow> = world
            .router
            .subscribers()
            .map(|st| SubscriberRow {
                ip: st.ip,
                apps: st.apps.clone(),
                total_bytes: st.total_bytes(),
                prioritized_packets: st.prioritized_packets,
                flags: st.flags(),
            })
            .collect();
        subscribers.sort_by_key(|r| r.ip);

        let mut anomalies = Vec::new();
        for st in world.router.subscribers() {
            if let Some(at_ms) = st.heavy_user {
                anomalies.push(AnomalyRow { subscriber: st.ip, flag: AnomalyFlag::HeavyUser, at_ms });
            }
            if let Some(at_ms) = st.signaling_overload {
                anomalies.push(AnomalyRow { subscriber: st.ip, flag: AnomalyFlag::SignalingOverload, at_ms });
            }
        }
        anomalies.sort_by_key(|a| (a.subscriber, a.flag));

        let rc = world.router.counters();
        let wc = &world.counters;
        let counters = Counters {
            ttl_expired: rc.ttl_expired,
            blocked_packets: rc.blocked_packets,
            delayed_packets: rc.delayed_packets,
            boot_failures: wc.boot_failures,
            pool_exhausted: wc.pool_exhausted,
            lease_write_failures: wc.lease_write_failures,
            corrupt_lease_polls: world.driver.corrupt_polls,
            refused_connects: world.driver.refused_connects,
            cloud_rx_bytes: wc.cloud_rx_bytes,
            undeliverable_packets: wc.undeliverable,
            events_dispatched: wc.events,
        };

        RunReport {
            scenario,
            devices,
            totals: Totals::of(&flows),
            flows,
            subscribers,
            anomalies,
            counters,
            log: world.driver.log().to_vec(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn has_anomalies(&self) -> bool {
        !self.anomalies.is_empty()
    }

    /// Distinct subscriber addresses seen by the gateway.
    pub fn subscriber_ips(&self) -> Vec<Ipv4Addr> {
        self.subscribers.iter().map(|s| s.ip).collect()
    }

    pub fn flows_of(&self, subscriber: Ipv4Addr) -> impl Iterator<Item = &FlowRow> {
        self.flows.iter().filter(move |f| f.subscriber == subscriber)
    }
}
