//! Virtual Ethernet fabric: addresses, frame and packet codecs, a learning
//! bridge and the simulation clock.

mod addr;
mod bridge;
mod clock;
mod packet;

pub use addr::{MacAddr, ParseMacError};
pub use bridge::{Bridge, PortId};
pub use clock::{EventId, Fired, SimClock};
pub use packet::{
    Frame, Ipv4Packet, TcpFlags, TcpSegment, Transport, UdpDatagram, ETHERTYPE_IPV4,
    ETH_HEADER_LEN, IPV4_HEADER_LEN, MTU, PROTO_TCP, PROTO_UDP, TCP_HEADER_LEN, UDP_HEADER_LEN,
};

use std::fmt::Write as _;

pub use std::net::Ipv4Addr;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FabricError {
    #[error("endpoint {0} is already attached")]
    DuplicateEndpoint(MacAddr),
    #[error("port {0} is not attached")]
    UnknownPort(PortId),
    #[error("cannot schedule at {at_ms} ms, clock is already at {now_ms} ms")]
    SchedulingInPast { at_ms: u64, now_ms: u64 },
    #[error("malformed packet: {0}")]
    MalformedPacket(&'static str),
    #[error("unsupported protocol {0}")]
    UnsupportedProtocol(u8),
    #[error("payload of {0} bytes exceeds the 1500 byte MTU")]
    FrameTooLarge(usize),
}

/// Stands in for ARP: who owns which IPv4 address on the LAN.
#[derive(Debug, Clone, Default)]
pub struct MacDirectory {
    entries: std::collections::BTreeMap<Ipv4Addr, MacAddr>,
}

impl MacDirectory {
    pub fn publish(&mut self, ip: Ipv4Addr, mac: MacAddr) {
        self.entries.insert(ip, mac);
    }

    pub fn withdraw(&mut self, ip: Ipv4Addr) {
        self.entries.remove(&ip);
    }

    pub fn lookup(&self, ip: Ipv4Addr) -> Option<MacAddr> {
        self.entries.get(&ip).copied()
    }
}

/// One delivered frame, as written to the optional frame log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameRecord {
    pub time_ms: u64,
    pub src: MacAddr,
    pub dst: MacAddr,
    pub ethertype: u16,
    pub length: usize,
}

impl FrameRecord {
    pub fn new(time_ms: u64, frame: &Frame) -> Self {
        FrameRecord {
            time_ms,
            src: frame.src,
            dst: frame.dst,
            ethertype: frame.ethertype,
            length: frame.wire_len(),
        }
    }
}

/// Renders records as tab separated `time_ms src dst ethertype length` lines.
pub fn format_frame_log(records: &[FrameRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t0x{:04x}\t{}",
            r.time_ms, r.src, r.dst, r.ethertype, r.length
        );
    }
    out
}
