//! Byte-exact Ethernet, IPv4, UDP and TCP codecs.
//!
//! Multi-octet fields are big-endian. Checksums are carried as zero and never
//! verified. IPv4 and TCP options are skipped on decode and never emitted.

use std::net::Ipv4Addr;

use bitflags::bitflags;

use super::{FabricError, MacAddr};

pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const MTU: usize = 1500;
pub const ETH_HEADER_LEN: usize = 14;
pub const IPV4_HEADER_LEN: usize = 20;
pub const UDP_HEADER_LEN: usize = 8;
pub const TCP_HEADER_LEN: usize = 20;
pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub dst: MacAddr,
    pub src: MacAddr,
    pub ethertype: u16,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(dst: MacAddr, src: MacAddr, ethertype: u16, payload: Vec<u8>) -> Result<Self, FabricError> {
        if payload.len() > MTU {
            return Err(FabricError::FrameTooLarge(payload.len()));
        }
        Ok(Frame { dst, src, ethertype, payload })
    }

    /// Wraps an IPv4 packet. Fails if the encoded packet exceeds the MTU.
    pub fn ipv4(dst: MacAddr, src: MacAddr, packet: &Ipv4Packet) -> Result<Self, FabricError> {
        Frame::new(dst, src, ETHERTYPE_IPV4, packet.encode())
    }

    pub fn wire_len(&self) -> usize {
        ETH_HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&self.dst.0);
        out.extend_from_slice(&self.src.0);
        out.extend_from_slice(&self.ethertype.to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FabricError> {
        if bytes.len() < ETH_HEADER_LEN {
            return Err(FabricError::MalformedPacket("truncated ethernet header"));
        }
        let payload = &bytes[ETH_HEADER_LEN..];
        if payload.len() > MTU {
            return Err(FabricError::FrameTooLarge(payload.len()));
        }
        Ok(Frame {
            dst: MacAddr(bytes[0..6].try_into().unwrap()),
            src: MacAddr(bytes[6..12].try_into().unwrap()),
            ethertype: u16::from_be_bytes([bytes[12], bytes[13]]),
            payload: payload.to_vec(),
        })
    }

    /// Decodes the payload as IPv4; only valid for ethertype 0x0800.
    pub fn ipv4_packet(&self) -> Result<Ipv4Packet, FabricError> {
        if self.ethertype != ETHERTYPE_IPV4 {
            return Err(FabricError::MalformedPacket("not an ipv4 frame"));
        }
        Ipv4Packet::decode(&self.payload)
    }
}

bitflags! {
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
    pub struct TcpFlags: u8 {
        const FIN = 0x01;
        const SYN = 0x02;
        const RST = 0x04;
        const ACK = 0x10;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UdpDatagram {
    pub src_port: u16,
    pub dst_port: u16,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TcpSegment {
    pub src_port: u16,
    pub dst_port: u16,
    pub flags: TcpFlags,
    pub seq: u32,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transport {
    Udp(UdpDatagram),
    Tcp(TcpSegment),
}

impl Transport {
    pub fn proto(&self) -> u8 {
        match self {
            Transport::Udp(_) => PROTO_UDP,
            Transport::Tcp(_) => PROTO_TCP,
        }
    }

    pub fn ports(&self) -> (u16, u16) {
        match self {
            Transport::Udp(u) => (u.src_port, u.dst_port),
            Transport::Tcp(t) => (t.src_port, t.dst_port),
        }
    }

    pub fn payload(&self) -> &[u8] {
        match self {
            Transport::Udp(u) => &u.payload,
            Transport::Tcp(t) => &t.payload,
        }
    }

    fn header_len(&self) -> usize {
        match self {
            Transport::Udp(_) => UDP_HEADER_LEN,
            Transport::Tcp(_) => TCP_HEADER_LEN,
        }
    }
}

/// An IPv4 datagram carrying UDP or TCP. `total_len` is derived, never stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ipv4Packet {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub ttl: u8,
    pub transport: Transport,
}

impl Ipv4Packet {
    pub fn udp(src: Ipv4Addr, dst: Ipv4Addr, src_port: u16, dst_port: u16, payload: Vec<u8>) -> Self {
        Ipv4Packet {
            src,
            dst,
            ttl: 64,
            transport: Transport::Udp(UdpDatagram { src_port, dst_port, payload }),
        }
    }

    pub fn tcp(
        src: Ipv4Addr,
        dst: Ipv4Addr,
        src_port: u16,
        dst_port: u16,
        flags: TcpFlags,
        seq: u32,
        payload: Vec<u8>,
    ) -> Self {
        Ipv4Packet {
            src,
            dst,
            ttl: 64,
            transport: Transport::Tcp(TcpSegment { src_port, dst_port, flags, seq, payload }),
        }
    }

    pub fn proto(&self) -> u8 {
        self.transport.proto()
    }

    pub fn payload(&self) -> &[u8] {
        self.transport.payload()
    }

    /// Encoded byte count, i.e. the IPv4 total length field.
    pub fn total_len(&self) -> usize {
        IPV4_HEADER_LEN + self.transport.header_len() + self.transport.payload().len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let total = self.total_len();
        debug_assert!(total <= u16::MAX as usize);
        let mut out = Vec::with_capacity(total);
        out.push(0x45);
        out.push(0);
        out.extend_from_slice(&(total as u16).to_be_bytes());
        out.extend_from_slice(&[0, 0, 0, 0]); // id, flags, fragment offset
        out.push(self.ttl);
        out.push(self.proto());
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&self.src.octets());
        out.extend_from_slice(&self.dst.octets());
        match &self.transport {
            Transport::Udp(u) => {
                out.extend_from_slice(&u.src_port.to_be_bytes());
                out.extend_from_slice(&u.dst_port.to_be_bytes());
                out.extend_from_slice(&((UDP_HEADER_LEN + u.payload.len()) as u16).to_be_bytes());
                out.extend_from_slice(&[0, 0]);
                out.extend_from_slice(&u.payload);
            }
            Transport::Tcp(t) => {
                out.extend_from_slice(&t.src_port.to_be_bytes());
                out.extend_from_slice(&t.dst_port.to_be_bytes());
                out.extend_from_slice(&t.seq.to_be_bytes());
                out.extend_from_slice(&[0, 0, 0, 0]); // ack number
                out.push(0x50);
                out.push(t.flags.bits());
                out.extend_from_slice(&0xffffu16.to_be_bytes());
                out.extend_from_slice(&[0, 0, 0, 0]); // checksum, urgent pointer
                out.extend_from_slice(&t.payload);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FabricError> {
        if bytes.len() < IPV4_HEADER_LEN {
            return Err(FabricError::MalformedPacket("truncated ipv4 header"));
        }
        if bytes[0] >> 4 != 4 {
            return Err(FabricError::MalformedPacket("not ipv4"));
        }
        let ihl = usize::from(bytes[0] & 0x0f) * 4;
        if ihl < IPV4_HEADER_LEN {
            return Err(FabricError::MalformedPacket("ipv4 header length below 20"));
        }
        let total = usize::from(u16::from_be_bytes([bytes[2], bytes[3]]));
        if total < ihl || total > bytes.len() {
            return Err(FabricError::MalformedPacket("ipv4 total length out of range"));
        }
        let ttl = bytes[8];
        let proto = bytes[9];
        let src = Ipv4Addr::new(bytes[12], bytes[13], bytes[14], bytes[15]);
        let dst = Ipv4Addr::new(bytes[16], bytes[17], bytes[18], bytes[19]);
        let body = &bytes[ihl..total];
        let transport = match proto {
            PROTO_UDP => {
                if body.len() < UDP_HEADER_LEN {
                    return Err(FabricError::MalformedPacket("truncated udp header"));
                }
                let len = usize::from(u16::from_be_bytes([body[4], body[5]]));
                if len != body.len() {
                    return Err(FabricError::MalformedPacket("udp length mismatch"));
                }
                Transport::Udp(UdpDatagram {
                    src_port: u16::from_be_bytes([body[0], body[1]]),
                    dst_port: u16::from_be_bytes([body[2], body[3]]),
                    payload: body[UDP_HEADER_LEN..].to_vec(),
                })
            }
            PROTO_TCP => {
                if body.len() < TCP_HEADER_LEN {
                    return Err(FabricError::MalformedPacket("truncated tcp header"));
                }
                let offset = usize::from(body[12] >> 4) * 4;
                if offset < TCP_HEADER_LEN || offset > body.len() {
                    return Err(FabricError::MalformedPacket("tcp data offset out of range"));
                }
                Transport::Tcp(TcpSegment {
                    src_port: u16::from_be_bytes([body[0], body[1]]),
                    dst_port: u16::from_be_bytes([body[2], body[3]]),
                    seq: u32::from_be_bytes([body[4], body[5], body[6], body[7]]),
                    flags: TcpFlags::from_bits_truncate(body[13]),
                    payload: body[offset..].to_vec(),
                })
            }
            other => return Err(FabricError::UnsupportedProtocol(other)),
        };
        Ok(Ipv4Packet { src, dst, ttl, transport })
    }
}
