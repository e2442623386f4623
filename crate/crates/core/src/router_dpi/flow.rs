use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::bucket::TokenBucket;
use super::policy::Action;
use crate::netfabric::{Ipv4Packet, PROTO_TCP};

/// 5-tuple in initiator-first orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowKey {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: u8,
}

impl FlowKey {
    pub fn of(packet: &Ipv4Packet) -> Self {
        let (src_port, dst_port) = packet.transport.ports();
        FlowKey { src_ip: packet.src, dst_ip: packet.dst, src_port, dst_port, proto: packet.proto() }
    }

    pub fn reversed(&self) -> Self {
        FlowKey {
            src_ip: self.dst_ip,
            dst_ip: self.src_ip,
            src_port: self.dst_port,
            dst_port: self.src_port,
            proto: self.proto,
        }
    }

    pub fn proto_name(&self) -> &'static str {
        if self.proto == PROTO_TCP {
            "tcp"
        } else {
            "udp"
        }
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}:{} -> {}:{}",
            self.proto_name(),
            self.src_ip,
            self.src_port,
            self.dst_ip,
            self.dst_port
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClassState {
    /// Packets inspected so far.
    Pending(u32),
    Classified(String),
    Unknown,
}

impl ClassState {
    /// Label used for per-app accounting.
    pub fn label(&self) -> &str {
        match self {
            ClassState::Pending(_) => "pending",
            ClassState::Classified(app) => app,
            ClassState::Unknown => "unknown",
        }
    }

    pub fn is_pending(&self) -> bool {
        matches!(self, ClassState::Pending(_))
    }
}

#[derive(Debug, Clone)]
pub struct Flow {
    pub key: FlowKey,
    /// LAN-side address.
    pub subscriber: Ipv4Addr,
    pub pkts_up: u64,
    pub pkts_down: u64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub forwarded_bytes: u64,
    pub forwarded_after_classification: u64,
    pub dropped_bytes: u64,
    pub prioritized_packets: u64,
    pub first_seen: u64,
    pub last_seen: u64,
    pub class_state: ClassState,
    /// Inspected packet count at which the flow left `Pending`.
    pub decided_after: Option<u32>,
    pub classified_at: Option<u64>,
    pub verdict: Action,
    pub bucket: Option<TokenBucket>,
    pub(crate) delayed_outstanding: u32,
    pub(crate) last_release: u64,
}

impl Flow {
    pub(crate) fn new(key: FlowKey, subscriber: Ipv4Addr, now: u64, verdict: Action) -> Self {
        Flow {
            key,
            subscriber,
            pkts_up: 0,
            pkts_down: 0,
            bytes_up: 0,
            bytes_down: 0,
            forwarded_bytes: 0,
            forwarded_after_classification: 0,
            dropped_bytes: 0,
            prioritized_packets: 0,
            first_seen: now,
            last_seen: now,
            class_state: ClassState::Pending(0),
            decided_after: None,
            classified_at: None,
            verdict,
            bucket: bucket_for(verdict, now),
            delayed_outstanding: 0,
            last_release: now,
        }
    }

    pub fn total_bytes(&self) -> u64 {
        self.bytes_up + self.bytes_down
    }

    pub fn total_packets(&self) -> u64 {
        self.pkts_up + self.pkts_down
    }

    pub(crate) fn set_verdict(&mut self, verdict: Action, now: u64) {
        if verdict != self.verdict {
            self.verdict = verdict;
            self.bucket = bucket_for(verdict, now);
        }
    }
}

fn bucket_for(action: Action, now: u64) -> Option<TokenBucket> {
    match action {
        Action::Throttle { rate, burst } => Some(TokenBucket::new(rate, burst, now)),
        _ => None,
    }
}
