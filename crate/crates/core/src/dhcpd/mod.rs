//! DHCP server for the virtual phones: DORA handling, address pool and the
//! `dhcpd.leases` file the driver polls.

mod leases;
pub mod message;

pub use leases::{parse_leases, parse_leases_str, render_leases, write_leases};
pub use message::{
    DhcpMessage, MessageError, MessageType, CLIENT_PORT, HEADER_LEN, OPT_END, OPT_LEASE_SECONDS,
    OPT_MESSAGE_TYPE, OPT_REQUESTED_IP, OPT_ROUTER, OPT_SERVER_ID, OPT_SUBNET_MASK, OP_REPLY,
    OP_REQUEST, SERVER_PORT,
};

use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::netfabric::MacAddr;

/// How long an unanswered OFFER keeps its address reserved.
pub const OFFER_HOLD_MS: u64 = 10_000;

#[derive(Debug, thiserror::Error)]
pub enum DhcpError {
    #[error("leases file corrupt at line {line}: {reason}")]
    LeaseFileCorrupt { line: usize, reason: String },
    #[error("invalid address pool: {0}")]
    InvalidPool(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The dynamic range handed out to phones, as in `/etc/dhcpd.conf`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AddressPool {
    pub first: Ipv4Addr,
    pub last: Ipv4Addr,
    #[serde(default = "default_mask")]
    pub subnet_mask: Ipv4Addr,
    #[serde(default = "default_router")]
    pub router: Ipv4Addr,
    #[serde(default = "default_lease_seconds")]
    pub lease_seconds: u32,
}

fn default_mask() -> Ipv4Addr {
    Ipv4Addr::new(255, 255, 255, 0)
}
fn default_router() -> Ipv4Addr {
    Ipv4Addr::new(10, 0, 2, 1)
}
fn default_lease_seconds() -> u32 {
    86_400
}

impl Default for AddressPool {
    fn default() -> Self {
        AddressPool {
            first: Ipv4Addr::new(10, 0, 2, 100),
            last: Ipv4Addr::new(10, 0, 2, 199),
            subnet_mask: default_mask(),
            router: default_router(),
            lease_seconds: default_lease_seconds(),
        }
    }
}

impl AddressPool {
    pub fn validate(&self) -> Result<(), DhcpError> {
        if u32::from(self.first) > u32::from(self.last) {
            return Err(DhcpError::InvalidPool(format!("first {} is above last {}", self.first, self.last)));
        }
        if self.contains(self.router) {
            return Err(DhcpError::InvalidPool(format!("router {} lies inside the pool", self.router)));
        }
        if self.lease_seconds == 0 {
            return Err(DhcpError::InvalidPool("lease_seconds must be positive".into()));
        }
        Ok(())
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        (u32::from(self.first)..=u32::from(self.last)).contains(&u32::from(ip))
    }

    pub fn size(&self) -> usize {
        (u32::from(self.last) - u32::from(self.first)) as usize + 1
    }

    pub fn addresses(&self) -> impl Iterator<Item = Ipv4Addr> {
        (u32::from(self.first)..=u32::from(self.last)).map(Ipv4Addr::from)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeaseState {
    Active,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lease {
    pub ip: Ipv4Addr,
    pub mac: MacAddr,
    pub starts_ms: u64,
    pub ends_ms: u64,
    pub state: LeaseState,
}

impl Lease {
    pub fn is_active(&self) -> bool {
        self.state == LeaseState::Active
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServerEvent {
    PoolExhausted { mac: MacAddr, at_ms: u64 },
    LeaseFileWriteFailed { at_ms: u64, reason: String },
}

#[derive(Debug)]
pub struct DhcpServer {
    server_ip: Ipv4Addr,
    pool: AddressPool,
    /// One record per address, in first-assignment order.
    leases: Vec<Lease>,
    offers: BTreeMap<MacAddr, (Ipv4Addr, u64)>,
    leases_path: Option<PathBuf>,
    events: Vec<ServerEvent>,
}

impl DhcpServer {
    pub fn new(server_ip: Ipv4Addr, pool: AddressPool) -> Result<Self, DhcpError> {
        pool.validate()?;
        Ok(DhcpServer {
            server_ip,
            pool,
            leases: Vec::new(),
            offers: BTreeMap::new(),
            leases_path: None,
            events: Vec::new(),
        })
    }

    /// Persists the lease table to `path` after every change.
    pub fn with_leases_file(mut self, path: impl Into<PathBuf>) -> Result<Self, DhcpError> {
        let path = path.into();
        write_leases(&self.leases, &path)?;
        self.leases_path = Some(path);
        Ok(self)
    }

    pub fn server_ip(&self) -> Ipv4Addr {
        self.server_ip
    }

    pub fn pool(&self) -> &AddressPool {
        &self.pool
    }

    pub fn leases(&self) -> &[Lease] {
        &self.leases
    }

    pub fn active_leases(&self) -> impl Iterator<Item = &Lease> {
        self.leases.iter().filter(|l| l.is_active())
    }

    pub fn events(&self) -> &[ServerEvent] {
        &self.events
    }

    /// Decodes a UDP payload sent to port 67 and handles it. Anything that is
    /// not a well-formed client message yields no reply.
    pub fn handle_datagram(&mut self, payload: &[u8], now_ms: u64) -> Option<DhcpMessage> {
        let msg = DhcpMessage::decode(payload).ok()?;
        self.handle_message(&msg, now_ms)
    }

    pub fn handle_message(&mut self, msg: &DhcpMessage, now_ms: u64) -> Option<DhcpMessage> {
        if msg.op != OP_REQUEST {
            return None;
        }
        self.drop_stale_offers(now_ms);
        match msg.message_type()? {
            MessageType::Discover => self.on_discover(msg, now_ms),
            MessageType::Request => self.on_request(msg, now_ms),
            _ => None,
        }
    }

    /// Expires every active lease with `ends_ms <= now_ms` and returns them.
    pub fn expire_leases(&mut self, now_ms: u64) -> Vec<Lease> {
        let mut expired = Vec::new();
        for lease in self.leases.iter_mut() {
            if lease.is_active() && lease.ends_ms <= now_ms {
                lease.state = LeaseState::Expired;
                expired.push(lease.clone());
            }
        }
        if !expired.is_empty() {
            self.persist(now_ms);
        }
        expired
    }

    /// Earliest end time among active leases.
    pub fn next_expiry(&self) -> Option<u64> {
        self.active_leases().map(|l| l.ends_ms).min()
    }

    fn drop_stale_offers(&mut self, now_ms: u64) {
        self.offers.retain(|_, (_, at)| now_ms < at.saturating_add(OFFER_HOLD_MS));
    }

    fn available_to(&self, ip: Ipv4Addr, mac: MacAddr) -> bool {
        if !self.pool.contains(ip) {
            return false;
        }
        let leased_elsewhere = self.leases.iter().any(|l| l.ip == ip && l.is_active() && l.mac != mac);
        let offered_elsewhere = self.offers.iter().any(|(m, (o, _))| *o == ip && *m != mac);
        !leased_elsewhere && !offered_elsewhere
    }

    /// Previous binding for `mac`: active lease, outstanding offer, then the
    /// most recent expired record.
    fn previous_binding(&self, mac: MacAddr) -> Option<Ipv4Addr> {
        if let Some(l) = self.leases.iter().find(|l| l.mac == mac && l.is_active()) {
            return Some(l.ip);
        }
        if let Some((ip, _)) = self.offers.get(&mac) {
            return Some(*ip);
        }
        self.leases
            .iter()
            .filter(|l| l.mac == mac)
            .max_by_key(|l| l.ends_ms)
            .map(|l| l.ip)
    }

    fn on_discover(&mut self, msg: &DhcpMessage, now_ms: u64) -> Option<DhcpMessage> {
        let mac = msg.chaddr;
        let ip = self
            .previous_binding(mac)
            .filter(|ip| self.available_to(*ip, mac))
            .or_else(|| self.pool.addresses().find(|ip| self.available_to(*ip, mac)));
        let Some(ip) = ip else {
            log::warn!("dhcpd: pool exhausted, no offer for {mac}");
            self.events.push(ServerEvent::PoolExhausted { mac, at_ms: now_ms });
            return None;
        };
        self.offers.insert(mac, (ip, now_ms));
        Some(self.reply(msg, MessageType::Offer, ip))
    }

    fn on_request(&mut self, msg: &DhcpMessage, now_ms: u64) -> Option<DhcpMessage> {
        let mac = msg.chaddr;
        if let Some(server) = msg.addr_option(OPT_SERVER_ID) {
            if server != self.server_ip {
                // The client picked another server.
                self.offers.remove(&mac);
                return None;
            }
        }
        let requested = msg
            .addr_option(OPT_REQUESTED_IP)
            .or_else(|| (!msg.ciaddr.is_unspecified()).then_some(msg.ciaddr));
        let Some(ip) = requested else {
            return Some(self.nak(msg));
        };
        let offered = self.offers.get(&mac).is_some_and(|(o, _)| *o == ip);
        let bound = self.leases.iter().any(|l| l.ip == ip && l.mac == mac);
        if !(offered || bound) || !self.available_to(ip, mac) {
            return Some(self.nak(msg));
        }
        self.offers.remove(&mac);
        let ends_ms = now_ms + u64::from(self.pool.lease_seconds) * 1000;
        for other in self.leases.iter_mut() {
            if other.mac == mac && other.ip != ip && other.is_active() {
                other.state = LeaseState::Expired;
            }
        }
        let lease = Lease { ip, mac, starts_ms: now_ms, ends_ms, state: LeaseState::Active };
        match self.leases.iter_mut().find(|l| l.ip == ip) {
            Some(slot) => *slot = lease,
            None => self.leases.push(lease),
        }
        self.persist(now_ms);
        Some(self.reply(msg, MessageType::Ack, ip))
    }

    fn reply(&self, req: &DhcpMessage, kind: MessageType, yiaddr: Ipv4Addr) -> DhcpMessage {
        let mut m = DhcpMessage::new(OP_REPLY, kind, req.xid, req.chaddr)
            .with_addr_option(OPT_SERVER_ID, self.server_ip)
            .with_option(OPT_LEASE_SECONDS, self.pool.lease_seconds.to_be_bytes().to_vec())
            .with_addr_option(OPT_SUBNET_MASK, self.pool.subnet_mask)
            .with_addr_option(OPT_ROUTER, self.pool.router);
        m.yiaddr = yiaddr;
        m.siaddr = self.server_ip;
        m
    }

    fn nak(&self, req: &DhcpMessage) -> DhcpMessage {
        DhcpMessage::new(OP_REPLY, MessageType::Nak, req.xid, req.chaddr)
            .with_addr_option(OPT_SERVER_ID, self.server_ip)
    }

    fn persist(&mut self, now_ms: u64) {
        let Some(path) = &self.leases_path else { return };
        if let Err(e) = write_leases(&self.leases, path) {
            log::warn!("dhcpd: failed to write {}: {e}", path.display());
            self.events.push(ServerEvent::LeaseFileWriteFailed { at_ms: now_ms, reason: e.to_string() });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    const SERVER: Ipv4Addr = Ipv4Addr::new(10, 0, 2, 2);

    fn server() -> DhcpServer {
        DhcpServer::new(SERVER, AddressPool::default()).unwrap()
    }

    fn discover(mac: MacAddr) -> DhcpMessage {
        DhcpMessage::new(OP_REQUEST, MessageType::Discover, 1, mac)
    }

    fn request(mac: MacAddr, ip: Ipv4Addr) -> DhcpMessage {
        DhcpMessage::new(OP_REQUEST, MessageType::Request, 2, mac)
            .with_addr_option(OPT_REQUESTED_IP, ip)
            .with_addr_option(OPT_SERVER_ID, SERVER)
    }

    fn dora(s: &mut DhcpServer, mac: MacAddr, now: u64) -> Option<Ipv4Addr> {
        let offer = s.handle_message(&discover(mac), now)?;
        let ack = s.handle_message(&request(mac, offer.yiaddr), now)?;
        (ack.message_type() == Some(MessageType::Ack)).then_some(ack.yiaddr)
    }

    #[test]
    fn discover_offers_lowest_free() {
        let mut s = server();
        let offer = s.handle_message(&discover(MacAddr::for_device(1)), 0).unwrap();
        assert_eq!(offer.message_type(), Some(MessageType::Offer));
        assert_eq!(offer.yiaddr, Ipv4Addr::new(10, 0, 2, 100));
        assert_eq!(offer.addr_option(OPT_ROUTER), Some(Ipv4Addr::new(10, 0, 2, 1)));
        assert_eq!(offer.lease_seconds(), Some(86_400));
    }

    #[test]
    fn request_after_offer_is_acked() {
        let mut s = server();
        let mac = MacAddr::for_device(1);
        s.handle_message(&discover(mac), 0).unwrap();
        let ack = s.handle_message(&request(mac, Ipv4Addr::new(10, 0, 2, 100)), 5).unwrap();
        assert_eq!(ack.message_type(), Some(MessageType::Ack));
        let leases: Vec<_> = s.active_leases().collect();
        assert_eq!(leases.len(), 1);
        assert_eq!(leases[0].starts_ms, 5);
        assert_eq!(leases[0].ends_ms, 5 + 86_400_000);
    }

    #[test]
    fn out_of_pool_request_is_naked() {
        let mut s = server();
        let mac = MacAddr::for_device(1);
        let nak = s.handle_message(&request(mac, Ipv4Addr::new(192, 168, 9, 9)), 0).unwrap();
        assert_eq!(nak.message_type(), Some(MessageType::Nak));
    }

    #[test]
    fn request_for_someone_elses_address_is_naked() {
        let mut s = server();
        let ip = dora(&mut s, MacAddr::for_device(1), 0).unwrap();
        let nak = s.handle_message(&request(MacAddr::for_device(2), ip), 1).unwrap();
        assert_eq!(nak.message_type(), Some(MessageType::Nak));
    }

    #[test]
    fn replies_and_foreign_servers_are_ignored() {
        let mut s = server();
        let mac = MacAddr::for_device(1);
        let mut reply = discover(mac);
        reply.op = OP_REPLY;
        assert!(s.handle_message(&reply, 0).is_none());
        s.handle_message(&discover(mac), 0).unwrap();
        let mut other = DhcpMessage::new(OP_REQUEST, MessageType::Request, 2, mac)
            .with_addr_option(OPT_REQUESTED_IP, Ipv4Addr::new(10, 0, 2, 100));
        other.options.push((OPT_SERVER_ID, vec![10, 0, 2, 3]));
        assert!(s.handle_message(&other, 0).is_none());
        assert!(s.handle_datagram(b"definitely not dhcp", 0).is_none());
    }

    #[test]
    fn re_request_is_idempotent() {
        let mut s = server();
        let mac = MacAddr::for_device(1);
        let ip = dora(&mut s, mac, 0).unwrap();
        let again = s.handle_message(&request(mac, ip), 1000).unwrap();
        assert_eq!(again.message_type(), Some(MessageType::Ack));
        assert_eq!(again.yiaddr, ip);
        assert_eq!(s.active_leases().count(), 1);
    }

    #[test]
    fn expiry_boundary_is_inclusive() {
        let mut s = server();
        assert!(s.expire_leases(0).is_empty());
        let mac = MacAddr::for_device(1);
        dora(&mut s, mac, 0).unwrap();
        assert!(s.expire_leases(86_399_999).is_empty());
        let expired = s.expire_leases(86_400_000);
        assert_eq!(expired.len(), 1);
        assert_eq!(s.active_leases().count(), 0);
        // Lowest free address goes back to the same MAC.
        let offer = s.handle_message(&discover(mac), 86_400_001).unwrap();
        assert_eq!(offer.yiaddr, Ipv4Addr::new(10, 0, 2, 100));
    }

    #[test]
    fn exhaustion_logs_an_event() {
        let pool = AddressPool {
            first: Ipv4Addr::new(10, 0, 2, 100),
            last: Ipv4Addr::new(10, 0, 2, 101),
            ..AddressPool::default()
        };
        let mut s = DhcpServer::new(SERVER, pool).unwrap();
        assert!(dora(&mut s, MacAddr::for_device(1), 0).is_some());
        assert!(dora(&mut s, MacAddr::for_device(2), 0).is_some());
        assert!(s.handle_message(&discover(MacAddr::for_device(3)), 0).is_none());
        assert!(matches!(s.events(), [ServerEvent::PoolExhausted { .. }]));
    }

    #[test]
    fn hundred_distinct_clients_get_distinct_addresses() {
        let mut s = server();
        // Brute force: all DISCOVERs first, then all REQUESTs.
        let macs: Vec<_> = (1..=100).map(MacAddr::for_device).collect();
        let offers: Vec<_> = macs.iter().map(|m| s.handle_message(&discover(*m), 0).unwrap().yiaddr).collect();
        let distinct: HashSet<_> = offers.iter().collect();
        assert_eq!(distinct.len(), 100);
        for (m, ip) in macs.iter().zip(&offers) {
            let ack = s.handle_message(&request(*m, *ip), 1).unwrap();
            assert_eq!(ack.message_type(), Some(MessageType::Ack));
        }
        assert!(offers.iter().all(|ip| s.pool().contains(*ip)));
    }

    #[test]
    fn pool_validation() {
        let bad = AddressPool { router: Ipv4Addr::new(10, 0, 2, 150), ..AddressPool::default() };
        assert!(DhcpServer::new(SERVER, bad).is_err());
        let inverted = AddressPool {
            first: Ipv4Addr::new(10, 0, 2, 200),
            last: Ipv4Addr::new(10, 0, 2, 100),
            ..AddressPool::default()
        };
        assert!(inverted.validate().is_err());
    }

    #[derive(Debug, Clone)]
    enum Op {
        Discover(u16),
        RequestOffered(u16),
        RequestAny(u16, u8),
        Advance(u64),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (1u16..12).prop_map(Op::Discover),
            (1u16..12).prop_map(Op::RequestOffered),
            (1u16..12, 95u8..110).prop_map(|(m, o)| Op::RequestAny(m, o)),
            (0u64..40_000).prop_map(Op::Advance),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]
        #[test]
        fn active_leases_stay_injective_and_in_pool(ops in prop::collection::vec(op(), 1..80)) {
            let pool = AddressPool {
                first: Ipv4Addr::new(10, 0, 2, 100),
                last: Ipv4Addr::new(10, 0, 2, 107),
                lease_seconds: 30,
                ..AddressPool::default()
            };
            let mut s = DhcpServer::new(SERVER, pool.clone()).unwrap();
            let mut now = 0;
            let mut last_offer: std::collections::HashMap<u16, Ipv4Addr> = Default::default();
            for op in ops {
                match op {
                    Op::Discover(m) => {
                        if let Some(o) = s.handle_message(&discover(MacAddr::for_device(m)), now) {
                            prop_assert!(pool.contains(o.yiaddr));
                            last_offer.insert(m, o.yiaddr);
                        }
                    }
                    Op::RequestOffered(m) => {
                        if let Some(ip) = last_offer.get(&m) {
                            s.handle_message(&request(MacAddr::for_device(m), *ip), now);
                        }
                    }
                    Op::RequestAny(m, o) => {
                        s.handle_message(&request(MacAddr::for_device(m), Ipv4Addr::new(10, 0, 2, o)), now);
                    }
                    Op::Advance(dt) => {
                        now += dt;
                        s.expire_leases(now);
                    }
                }
                let active: Vec<_> = s.active_leases().collect();
                let ips: HashSet<_> = active.iter().map(|l| l.ip).collect();
                let macs: HashSet<_> = active.iter().map(|l| l.mac).collect();
                prop_assert_eq!(ips.len(), active.len());
                prop_assert_eq!(macs.len(), active.len());
                prop_assert!(active.iter().all(|l| pool.contains(l.ip)));
            }
        }
    }
}
