//! `dhcpd.leases` persistence.
//!
//! ```text
//! lease 10.0.2.100 {
//!   starts 5;
//!   ends 86400005;
//!   hardware ethernet 02:00:00:00:00:01;
//!   binding state active;
//! }
//!
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::net::Ipv4Addr;
use std::path::Path;

use super::{DhcpError, Lease, LeaseState};
use crate::netfabric::MacAddr;

pub fn render_leases(leases: &[Lease]) -> String {
    let mut out = String::new();
    for l in leases {
        let state = match l.state {
            LeaseState::Active => "active",
            LeaseState::Expired => "expired",
        };
        let _ = write!(
            out,
            "lease {} {{\n  starts {};\n  ends {};\n  hardware ethernet {};\n  binding state {};\n}}\n\n",
            l.ip, l.starts_ms, l.ends_ms, l.mac, state
        );
    }
    out
}

/// Replaces `path` atomically: writes a sibling temp file, then renames it.
pub fn write_leases(leases: &[Lease], path: &Path) -> Result<(), DhcpError> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(render_leases(leases).as_bytes())?;
        f.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn parse_leases(path: &Path) -> Result<Vec<Lease>, DhcpError> {
    let text = fs::read_to_string(path)?;
    parse_leases_str(&text)
}

fn corrupt(line: usize, reason: impl Into<String>) -> DhcpError {
    DhcpError::LeaseFileCorrupt { line, reason: reason.into() }
}

/// Returns the value between `prefix` and the trailing `;`.
fn field<'a>(line: &'a str, prefix: &str, lineno: usize) -> Result<&'a str, DhcpError> {
    line.strip_prefix(prefix)
        .and_then(|rest| rest.strip_suffix(';'))
        .map(str::trim)
        .ok_or_else(|| corrupt(lineno, format!("expected `{prefix}<value>;`")))
}

pub fn parse_leases_str(text: &str) -> Result<Vec<Lease>, DhcpError> {
    let mut leases = Vec::new();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    while let Some((no, line)) = lines.next() {
        if line.is_empty() {
            continue;
        }
        let ip_text = line
            .strip_prefix("lease ")
            .and_then(|r| r.strip_suffix('{'))
            .map(str::trim)
            .ok_or_else(|| corrupt(no, "expected `lease <ip> {`"))?;
        let ip: Ipv4Addr = ip_text.parse().map_err(|_| corrupt(no, format!("bad address `{ip_text}`")))?;

        let mut next = |what: &str| lines.next().ok_or_else(|| corrupt(no, format!("unterminated lease, missing {what}")));
        let (n, l) = next("starts")?;
        let starts_ms = field(l, "starts ", n)?.parse().map_err(|_| corrupt(n, "bad starts"))?;
        let (n, l) = next("ends")?;
        let ends_ms = field(l, "ends ", n)?.parse().map_err(|_| corrupt(n, "bad ends"))?;
        let (n, l) = next("hardware ethernet")?;
        let mac: MacAddr = field(l, "hardware ethernet ", n)?.parse().map_err(|_| corrupt(n, "bad mac"))?;
        let (n, l) = next("binding state")?;
        let state = match field(l, "binding state ", n)? {
            "active" => LeaseState::Active,
            "expired" => LeaseState::Expired,
            other => return Err(corrupt(n, format!("unknown binding state `{other}`"))),
        };
        let (n, l) = next("}")?;
        if l != "}" {
            return Err(corrupt(n, "expected `}`"));
        }
        leases.push(Lease { ip, mac, starts_ms, ends_ms, state });
    }
    Ok(leases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lease(ip: u8, mac: u16, state: LeaseState) -> Lease {
        Lease {
            ip: Ipv4Addr::new(10, 0, 2, ip),
            mac: MacAddr::for_device(mac),
            starts_ms: 5,
            ends_ms: 86_400_005,
            state,
        }
    }

    #[test]
    fn empty_set_is_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dhcpd.leases");
        write_leases(&[], &path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 0);
        assert!(parse_leases(&path).unwrap().is_empty());
    }

    #[test]
    fn one_lease_block_is_bit_exact() {
        let text = render_leases(&[lease(100, 1, LeaseState::Active)]);
        assert_eq!(
            text,
            "lease 10.0.2.100 {\n  starts 5;\n  ends 86400005;\n  hardware ethernet 02:00:00:00:00:01;\n  binding state active;\n}\n\n"
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dhcpd.leases");
        write_leases(&[lease(100, 1, LeaseState::Active)], &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), text);
        assert!(!dir.path().join("dhcpd.leases.tmp").exists());
        assert_eq!(parse_leases(&path).unwrap(), vec![lease(100, 1, LeaseState::Active)]);
    }

    #[test]
    fn banana_is_corrupt_at_line_one() {
        match parse_leases_str("lease banana {\n") {
            Err(DhcpError::LeaseFileCorrupt { line: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_block_reports_its_line() {
        let text = "lease 10.0.2.100 {\n  starts 5;\n  ends x;\n";
        match parse_leases_str(text) {
            Err(DhcpError::LeaseFileCorrupt { line: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn write_parse_write_is_stable(
            raw in prop::collection::vec((any::<[u8; 4]>(), any::<[u8; 6]>(), any::<u64>(), any::<u64>(), any::<bool>()), 0..20)
        ) {
            let leases: Vec<Lease> = raw.into_iter().map(|(ip, mac, s, e, active)| Lease {
                ip: Ipv4Addr::from(ip),
                mac: MacAddr(mac),
                starts_ms: s,
                ends_ms: e,
                state: if active { LeaseState::Active } else { LeaseState::Expired },
            }).collect();
            let text = render_leases(&leases);
            let parsed = parse_leases_str(&text).unwrap();
            prop_assert_eq!(&parsed, &leases);
            prop_assert_eq!(render_leases(&parsed), text);
        }

        #[test]
        fn parse_never_panics(text in ".{0,200}") {
            let _ = parse_leases_str(&text);
        }
    }
}
