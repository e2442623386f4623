//! The test driver: discovers phones through the leases file, connects to
//! their control agents, installs the scenario's apps and cycles through
//! them. [`run_scenario`] wires it into a complete simulated test bed.

pub mod report;
pub mod scenario;
mod world;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::device::{ControlStream, CONTROL_PORT};
use crate::dhcpd::{parse_leases, DhcpError, LeaseState};
use crate::netfabric::Ipv4Addr;

pub use report::RunReport;
pub use scenario::{ConfigError, DeviceOverride, Plan, Scenario};
pub use world::World;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DriverError {
    #[error("connection to {0}:5555 refused")]
    ConnectRefused(Ipv4Addr),
    #[error("no session for {0}")]
    NoSession(Ipv4Addr),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogLine {
    pub at_ms: u64,
    pub text: String,
}

/// One `am start` issued by the Appmanager.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Launch {
    pub at_ms: u64,
    pub package: String,
    pub ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Connected,
    Closed,
}

#[derive(Debug)]
pub struct ControlSession {
    pub ip: Ipv4Addr,
    /// Position of the device in the world.
    pub device: usize,
    pub state: SessionState,
    pub connected_at: u64,
    pub launches: Vec<Launch>,
    /// Device-side framing of this session's byte stream.
    pub(crate) stream: ControlStream,
}

/// Host-side driver state.
#[derive(Debug)]
pub struct Driver {
    leases_path: PathBuf,
    known: BTreeSet<Ipv4Addr>,
    /// Known but not yet connected, in discovery order.
    waiting: Vec<Ipv4Addr>,
    sessions: Vec<ControlSession>,
    by_ip: BTreeMap<Ipv4Addr, usize>,
    log: Vec<LogLine>,
    pub(crate) corrupt_polls: u64,
    pub(crate) refused_connects: u64,
}

impl Driver {
    pub fn new(leases_path: impl Into<PathBuf>) -> Self {
        Driver {
            leases_path: leases_path.into(),
            known: BTreeSet::new(),
            waiting: Vec::new(),
            sessions: Vec::new(),
            by_ip: BTreeMap::new(),
            log: Vec::new(),
            corrupt_polls: 0,
            refused_connects: 0,
        }
    }

    pub fn leases_path(&self) -> &Path {
        &self.leases_path
    }

    /// Reads the leases file and returns active-lease addresses not seen
    /// before, in file order. A missing file reads as empty. On a corrupt
    /// file nothing changes and the next poll tries again.
    pub fn poll_leases(&mut self, now: u64) -> Result<Vec<Ipv4Addr>, DhcpError> {
        let leases = match parse_leases(&self.leases_path) {
            Ok(l) => l,
            Err(DhcpError::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => {
                self.corrupt_polls += 1;
                self.note(now, format!("lease poll skipped: {e}"));
                return Err(e);
            }
        };
        let mut fresh = Vec::new();
        for lease in leases {
            if lease.state == LeaseState::Active && self.known.insert(lease.ip) {
                fresh.push(lease.ip);
                self.waiting.push(lease.ip);
            }
        }
        Ok(fresh)
    }

    pub fn known(&self) -> &BTreeSet<Ipv4Addr> {
        &self.known
    }

    /// Known addresses still waiting for a session.
    pub fn waiting(&self) -> &[Ipv4Addr] {
        &self.waiting
    }

    /// `adb devices`: one line per connected session, in connection order.
    pub fn list_devices(&self) -> Vec<String> {
        self.sessions
            .iter()
            .filter(|s| s.state == SessionState::Connected)
            .map(|s| format!("{}:{CONTROL_PORT}\tdevice", s.ip))
            .collect()
    }

    pub fn sessions(&self) -> &[ControlSession] {
        &self.sessions
    }

    pub fn session(&self, ip: Ipv4Addr) -> Option<&ControlSession> {
        self.by_ip.get(&ip).map(|&i| &self.sessions[i])
    }

    pub fn session_index(&self, ip: Ipv4Addr) -> Option<usize> {
        self.by_ip.get(&ip).copied()
    }

    pub fn log(&self) -> &[LogLine] {
        &self.log
    }

    pub(crate) fn note(&mut self, at_ms: u64, text: String) {
        log::info!("[{at_ms} ms] {text}");
        self.log.push(LogLine { at_ms, text });
    }

    pub(crate) fn register(&mut self, ip: Ipv4Addr, device: usize, now: u64) -> usize {
        let id = self.sessions.len();
        self.sessions.push(ControlSession {
            ip,
            device,
            state: SessionState::Connected,
            connected_at: now,
            launches: Vec::new(),
            stream: ControlStream::new(),
        });
        self.by_ip.insert(ip, id);
        self.waiting.retain(|w| *w != ip);
        self.note(now, format!("connected to {ip}:{CONTROL_PORT}"));
        id
    }

    pub(crate) fn session_mut(&mut self, id: usize) -> &mut ControlSession {
        &mut self.sessions[id]
    }
}

/// Builds the test bed for `scenario`, runs it for `duration_ms` of
/// simulated time and reports what the gateway saw.
pub fn run_scenario(scenario: &Scenario) -> Result<RunReport, ConfigError> {
    let plan = scenario.resolve()?;
    let world = World::new(plan)?;
    Ok(world.run())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dhcpd::{write_leases, Lease};
    use crate::netfabric::MacAddr;

    fn lease(last: u8, state: LeaseState) -> Lease {
        Lease {
            ip: Ipv4Addr::new(10, 0, 2, last),
            mac: MacAddr::for_device(u16::from(last)),
            starts_ms: 0,
            ends_ms: 1000,
            state,
        }
    }

    #[test]
    fn poll_sees_only_new_active_leases() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dhcpd.leases");
        let mut d = Driver::new(&path);
        assert!(d.poll_leases(0).unwrap().is_empty());
        std::fs::write(&path, "").unwrap();
        assert!(d.poll_leases(0).unwrap().is_empty());

        let leases = [lease(100, LeaseState::Active), lease(101, LeaseState::Expired), lease(102, LeaseState::Active)];
        write_leases(&leases, &path).unwrap();
        let oracle: Vec<Ipv4Addr> = leases.iter().filter(|l| l.state == LeaseState::Active).map(|l| l.ip).collect();
        assert_eq!(d.poll_leases(1000).unwrap(), oracle);
        assert!(d.poll_leases(2000).unwrap().is_empty());
        assert_eq!(d.known().len(), 2);
    }

    #[test]
    fn corrupt_file_skips_the_poll() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dhcpd.leases");
        std::fs::write(&path, "lease banana {\n").unwrap();
        let mut d = Driver::new(&path);
        assert!(matches!(d.poll_leases(0), Err(DhcpError::LeaseFileCorrupt { line: 1, .. })));
        assert_eq!(d.corrupt_polls, 1);
        write_leases(&[lease(100, LeaseState::Active)], &path).unwrap();
        assert_eq!(d.poll_leases(1000).unwrap(), vec![Ipv4Addr::new(10, 0, 2, 100)]);
    }

    #[test]
    fn list_devices_in_connect_order() {
        let mut d = Driver::new("/nonexistent");
        assert!(d.list_devices().is_empty());
        for (i, last) in [7u8, 3, 5].into_iter().enumerate() {
            d.register(Ipv4Addr::new(10, 0, 2, last), i, i as u64);
        }
        assert_eq!(d.list_devices(), ["10.0.2.7:5555\tdevice", "10.0.2.3:5555\tdevice", "10.0.2.5:5555\tdevice"]);
        assert_eq!(d.log()[0].text, "connected to 10.0.2.7:5555");
    }
}
