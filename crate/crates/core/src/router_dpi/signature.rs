//! Payload signature rules.
//!
//! One rule per line:
//!
//! ```text
//! app=<name> proto=<tcp|udp> [port=<n>] [min_len=<n>] match=prefix@<offset>:<hex>
//! app=<name> proto=tcp [port=<n>] match=host~<literal>
//! ```
//!
//! `#` starts a comment. Rules are tried in file order and the first match
//! wins.

use crate::netfabric::{Ipv4Packet, Transport};

use super::DpiConfigError;

/// Bytes of each payload the classifier looks at.
pub const INSPECT_BYTES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleTransport {
    Tcp,
    Udp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PayloadMatch {
    PayloadPrefix { offset: usize, bytes: Vec<u8> },
    HostContains(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureRule {
    pub app: String,
    pub transport: RuleTransport,
    pub port: Option<u16>,
    pub matcher: PayloadMatch,
    pub min_len: Option<usize>,
}

impl SignatureRule {
    pub fn matches(&self, packet: &Ipv4Packet) -> bool {
        let (src_port, dst_port) = packet.transport.ports();
        let transport_ok = matches!(
            (&packet.transport, self.transport),
            (Transport::Tcp(_), RuleTransport::Tcp) | (Transport::Udp(_), RuleTransport::Udp)
        );
        if !transport_ok {
            return false;
        }
        if let Some(port) = self.port {
            if src_port != port && dst_port != port {
                return false;
            }
        }
        let payload = packet.payload();
        if let Some(min) = self.min_len {
            if payload.len() < min {
                return false;
            }
        }
        let inspected = &payload[..payload.len().min(INSPECT_BYTES)];
        match &self.matcher {
            PayloadMatch::PayloadPrefix { offset, bytes } => {
                inspected.get(*offset..offset + bytes.len()) == Some(bytes.as_slice())
            }
            PayloadMatch::HostContains(literal) => host_header(inspected).is_some_and(|h| h.contains(literal.as_str())),
        }
    }
}

/// Value of the first `Host:` header line, if the payload carries one.
fn host_header(payload: &[u8]) -> Option<&str> {
    let text = match std::str::from_utf8(payload) {
        Ok(t) => t,
        Err(e) => std::str::from_utf8(&payload[..e.valid_up_to()]).ok()?,
    };
    text.split("\r\n").flat_map(|l| l.split('\n')).find_map(|line| {
        let (name, value) = line.split_once(':')?;
        name.trim().eq_ignore_ascii_case("host").then(|| value.trim())
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SignatureSet {
    rules: Vec<SignatureRule>,
}

impl SignatureSet {
    pub fn new(rules: Vec<SignatureRule>) -> Self {
        SignatureSet { rules }
    }

    pub fn rules(&self) -> &[SignatureRule] {
        &self.rules
    }

    /// First matching rule's app.
    pub fn first_match(&self, packet: &Ipv4Packet) -> Option<&str> {
        self.rules.iter().find(|r| r.matches(packet)).map(|r| r.app.as_str())
    }

    pub fn parse(text: &str) -> Result<Self, DpiConfigError> {
        let mut rules = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            rules.push(parse_rule(line).map_err(|reason| DpiConfigError::Signature { line: i + 1, reason })?);
        }
        Ok(SignatureSet { rules })
    }
}

fn parse_rule(line: &str) -> Result<SignatureRule, String> {
    let (mut app, mut transport, mut port, mut matcher, mut min_len) = (None, None, None, None, None);
    for token in line.split_whitespace() {
        let (key, value) = token.split_once('=').ok_or_else(|| format!("expected key=value, got `{token}`"))?;
        match key {
            "app" if !value.is_empty() => app = Some(value.to_string()),
            "proto" => {
                transport = Some(match value {
                    "tcp" => RuleTransport::Tcp,
                    "udp" => RuleTransport::Udp,
                    other => return Err(format!("unknown proto `{other}`")),
                })
            }
            "port" => port = Some(value.parse::<u16>().map_err(|_| format!("bad port `{value}`"))?),
            "min_len" => min_len = Some(value.parse::<usize>().map_err(|_| format!("bad min_len `{value}`"))?),
            "match" => matcher = Some(parse_match(value)?),
            _ => return Err(format!("unknown or empty key `{key}`")),
        }
    }
    let app = app.ok_or("missing app")?;
    let transport = transport.ok_or("missing proto")?;
    let matcher = matcher.ok_or("missing match")?;
    if let PayloadMatch::HostContains(_) = matcher {
        if transport != RuleTransport::Tcp {
            return Err("host~ matches require proto=tcp".into());
        }
    }
    Ok(SignatureRule { app, transport, port, matcher, min_len })
}

fn parse_match(value: &str) -> Result<PayloadMatch, String> {
    if let Some(literal) = value.strip_prefix("host~") {
        if literal.is_empty() {
            return Err("empty host literal".into());
        }
        return Ok(PayloadMatch::HostContains(literal.to_string()));
    }
    let spec = value.strip_prefix("prefix@").ok_or_else(|| format!("unknown match `{value}`"))?;
    let (offset, hex) = spec.split_once(':').ok_or("prefix match needs <offset>:<hex>")?;
    let offset: usize = offset.parse().map_err(|_| format!("bad offset `{offset}`"))?;
    if hex.is_empty() || hex.len() % 2 != 0 {
        return Err(format!("bad hex `{hex}`"));
    }
    let bytes = (0..hex.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&hex[i..i + 2], 16))
        .collect::<Result<Vec<u8>, _>>()
        .map_err(|_| format!("bad hex `{hex}`"))?;
    if offset + bytes.len() > INSPECT_BYTES {
        return Err(format!("pattern ends past the {INSPECT_BYTES} inspected bytes"));
    }
    Ok(PayloadMatch::PayloadPrefix { offset, bytes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::Ipv4Addr;

    fn udp(dport: u16, payload: &[u8]) -> Ipv4Packet {
        Ipv4Packet::udp(Ipv4Addr::new(10, 0, 2, 100), Ipv4Addr::new(198, 51, 100, 10), 50000, dport, payload.to_vec())
    }

    fn tcp(dport: u16, payload: &[u8]) -> Ipv4Packet {
        Ipv4Packet::tcp(
            Ipv4Addr::new(10, 0, 2, 100),
            Ipv4Addr::new(198, 51, 100, 20),
            50000,
            dport,
            crate::netfabric::TcpFlags::ACK,
            0,
            payload.to_vec(),
        )
    }

    #[test]
    fn parses_both_match_kinds() {
        let set = SignatureSet::parse(
            "# comment\n\napp=a proto=udp match=prefix@2:02 min_len=4 # trailing\napp=b proto=tcp port=443 match=host~social.test\n",
        )
        .unwrap();
        assert_eq!(set.rules().len(), 2);
        assert_eq!(set.rules()[0].matcher, PayloadMatch::PayloadPrefix { offset: 2, bytes: vec![2] });
        assert_eq!(set.rules()[1].port, Some(443));
    }

    #[test]
    fn rejects_bad_rules_with_line_numbers() {
        for (text, line) in [
            ("app=a proto=udp match=host~x", 1),
            ("\napp=a proto=icmp match=prefix@0:00", 2),
            ("app=a proto=udp match=prefix@255:0000", 1),
            ("app=a proto=udp match=prefix@0:0", 1),
            ("app=a proto=udp", 1),
            ("app=a proto=udp colour=red match=prefix@0:00", 1),
        ] {
            match SignatureSet::parse(text) {
                Err(DpiConfigError::Signature { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn prefix_honours_offset_port_and_min_len() {
        let set = SignatureSet::parse("app=a proto=udp port=3478 min_len=8 match=prefix@2:0201").unwrap();
        assert_eq!(set.first_match(&udp(3478, &[0, 0, 2, 1, 0, 0, 0, 0])), Some("a"));
        assert_eq!(set.first_match(&udp(3479, &[0, 0, 2, 1, 0, 0, 0, 0])), None);
        assert_eq!(set.first_match(&udp(3478, &[0, 0, 2, 1])), None);
        assert_eq!(set.first_match(&tcp(3478, &[0, 0, 2, 1, 0, 0, 0, 0])), None);
    }

    #[test]
    fn host_header_lookup() {
        let set = SignatureSet::parse("app=s proto=tcp match=host~social.test").unwrap();
        assert_eq!(set.first_match(&tcp(443, b"GET / HTTP/1.1\r\nhost:  m.social.test\r\n\r\n")), Some("s"));
        assert_eq!(set.first_match(&tcp(443, b"GET /social.test HTTP/1.1\r\nHost: other\r\n")), None);
        assert_eq!(set.first_match(&tcp(443, b"")), None);
    }

    #[test]
    fn only_the_first_256_bytes_are_inspected() {
        let set = SignatureSet::parse("app=s proto=tcp match=host~late.test").unwrap();
        let mut payload = vec![b'x'; 300];
        payload.extend_from_slice(b"\r\nHost: late.test\r\n");
        assert_eq!(set.first_match(&tcp(80, &payload)), None);
    }
}
