//! Compact BOOTP-style DHCP message.
//!
//! Layout: `op(1) xid(4) ciaddr(4) yiaddr(4) siaddr(4) chaddr(6)` followed by
//! `tag len value` options and a single `255` end tag.

use std::net::Ipv4Addr;

use crate::netfabric::MacAddr;

pub const HEADER_LEN: usize = 23;
pub const OP_REQUEST: u8 = 1;
pub const OP_REPLY: u8 = 2;

pub const OPT_SUBNET_MASK: u8 = 1;
pub const OPT_ROUTER: u8 = 3;
pub const OPT_REQUESTED_IP: u8 = 50;
pub const OPT_LEASE_SECONDS: u8 = 51;
pub const OPT_MESSAGE_TYPE: u8 = 53;
pub const OPT_SERVER_ID: u8 = 54;
pub const OPT_END: u8 = 255;

pub const SERVER_PORT: u16 = 67;
pub const CLIENT_PORT: u16 = 68;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageType {
    Discover = 1,
    Offer = 2,
    Request = 3,
    Ack = 5,
    Nak = 6,
}

impl MessageType {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => MessageType::Discover,
            2 => MessageType::Offer,
            3 => MessageType::Request,
            5 => MessageType::Ack,
            6 => MessageType::Nak,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MessageError {
    #[error("truncated dhcp message")]
    Truncated,
    #[error("option list is not terminated by tag 255")]
    Unterminated,
    #[error("message type option must appear exactly once")]
    MessageType,
    #[error("option {0} has an invalid value")]
    BadOption(u8),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DhcpMessage {
    pub op: u8,
    pub xid: u32,
    pub ciaddr: Ipv4Addr,
    pub yiaddr: Ipv4Addr,
    pub siaddr: Ipv4Addr,
    pub chaddr: MacAddr,
    /// Options in wire order, without the end tag.
    pub options: Vec<(u8, Vec<u8>)>,
}

impl DhcpMessage {
    pub fn new(op: u8, kind: MessageType, xid: u32, chaddr: MacAddr) -> Self {
        DhcpMessage {
            op,
            xid,
            ciaddr: Ipv4Addr::UNSPECIFIED,
            yiaddr: Ipv4Addr::UNSPECIFIED,
            siaddr: Ipv4Addr::UNSPECIFIED,
            chaddr,
            options: vec![(OPT_MESSAGE_TYPE, vec![kind as u8])],
        }
    }

    pub fn with_option(mut self, tag: u8, value: Vec<u8>) -> Self {
        self.options.push((tag, value));
        self
    }

    pub fn with_addr_option(self, tag: u8, addr: Ipv4Addr) -> Self {
        self.with_option(tag, addr.octets().to_vec())
    }

    pub fn option(&self, tag: u8) -> Option<&[u8]> {
        self.options.iter().find(|(t, _)| *t == tag).map(|(_, v)| v.as_slice())
    }

    pub fn addr_option(&self, tag: u8) -> Option<Ipv4Addr> {
        let v = self.option(tag)?;
        let o: [u8; 4] = v.try_into().ok()?;
        Some(Ipv4Addr::from(o))
    }

    pub fn lease_seconds(&self) -> Option<u32> {
        let v: [u8; 4] = self.option(OPT_LEASE_SECONDS)?.try_into().ok()?;
        Some(u32::from_be_bytes(v))
    }

    pub fn message_type(&self) -> Option<MessageType> {
        let v = self.option(OPT_MESSAGE_TYPE)?;
        if v.len() != 1 {
            return None;
        }
        MessageType::from_u8(v[0])
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 32);
        out.push(self.op);
        out.extend_from_slice(&self.xid.to_be_bytes());
        out.extend_from_slice(&self.ciaddr.octets());
        out.extend_from_slice(&self.yiaddr.octets());
        out.extend_from_slice(&self.siaddr.octets());
        out.extend_from_slice(&self.chaddr.0);
        for (tag, value) in &self.options {
            debug_assert!(value.len() <= 255 && *tag != OPT_END);
            out.push(*tag);
            out.push(value.len() as u8);
            out.extend_from_slice(value);
        }
        out.push(OPT_END);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, MessageError> {
        if bytes.len() < HEADER_LEN {
            return Err(MessageError::Truncated);
        }
        let addr = |at: usize| Ipv4Addr::new(bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]);
        let mut options = Vec::new();
        let mut at = HEADER_LEN;
        loop {
            let tag = *bytes.get(at).ok_or(MessageError::Unterminated)?;
            if tag == OPT_END {
                if at + 1 != bytes.len() {
                    return Err(MessageError::BadOption(OPT_END));
                }
                break;
            }
            let len = usize::from(*bytes.get(at + 1).ok_or(MessageError::Truncated)?);
            let value = bytes.get(at + 2..at + 2 + len).ok_or(MessageError::Truncated)?;
            options.push((tag, value.to_vec()));
            at += 2 + len;
        }
        let msg = DhcpMessage {
            op: bytes[0],
            xid: u32::from_be_bytes([bytes[1], bytes[2], bytes[3], bytes[4]]),
            ciaddr: addr(5),
            yiaddr: addr(9),
            siaddr: addr(13),
            chaddr: MacAddr(bytes[17..23].try_into().unwrap()),
            options,
        };
        let type_count = msg.options.iter().filter(|(t, _)| *t == OPT_MESSAGE_TYPE).count();
        if type_count != 1 || msg.message_type().is_none() {
            return Err(MessageError::MessageType);
        }
        Ok(msg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_23_bytes() {
        let m = DhcpMessage::new(OP_REQUEST, MessageType::Discover, 7, MacAddr::for_device(1));
        let b = m.encode();
        assert_eq!(b.len(), HEADER_LEN + 3 + 1);
        assert_eq!(&b[HEADER_LEN..], &[53, 1, 1, 255]);
        assert_eq!(DhcpMessage::decode(&b).unwrap(), m);
    }

    #[test]
    fn missing_end_or_type_is_rejected() {
        let m = DhcpMessage::new(OP_REQUEST, MessageType::Discover, 7, MacAddr::for_device(1));
        let b = m.encode();
        assert_eq!(DhcpMessage::decode(&b[..b.len() - 1]), Err(MessageError::Unterminated));
        let mut no_type = b[..HEADER_LEN].to_vec();
        no_type.push(255);
        assert_eq!(DhcpMessage::decode(&no_type), Err(MessageError::MessageType));
        let twice = m.clone().with_option(OPT_MESSAGE_TYPE, vec![3]).encode();
        assert_eq!(DhcpMessage::decode(&twice), Err(MessageError::MessageType));
    }

    proptest! {
        #[test]
        fn round_trip(
            xid in any::<u32>(),
            addrs in any::<[u8; 12]>(),
            mac in any::<[u8; 6]>(),
            kind in prop::sample::select(vec![1u8, 2, 3, 5, 6]),
            extra in prop::collection::vec((1u8..255, prop::collection::vec(any::<u8>(), 0..8)), 0..5),
        ) {
            let mut m = DhcpMessage::new(OP_REPLY, MessageType::from_u8(kind).unwrap(), xid, MacAddr(mac));
            m.ciaddr = Ipv4Addr::new(addrs[0], addrs[1], addrs[2], addrs[3]);
            m.yiaddr = Ipv4Addr::new(addrs[4], addrs[5], addrs[6], addrs[7]);
            m.siaddr = Ipv4Addr::new(addrs[8], addrs[9], addrs[10], addrs[11]);
            for (tag, value) in extra {
                if tag != OPT_MESSAGE_TYPE {
                    m.options.push((tag, value));
                }
            }
            prop_assert_eq!(DhcpMessage::decode(&m.encode()).unwrap(), m);
        }

        #[test]
        fn decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
            let _ = DhcpMessage::decode(&bytes);
        }
    }
}
