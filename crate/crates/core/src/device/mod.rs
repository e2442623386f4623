//! A virtual phone: DHCP client, control agent on tcp/5555, package
//! registry and the single foreground activity whose traffic model runs.

pub mod agent;
pub mod manifest;

use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde::Serialize;

use crate::appmodels::{self, Direction, ModelError, TrafficModel, Wake};
use crate::dhcpd::message::{
    DhcpMessage, MessageType, CLIENT_PORT, OPT_REQUESTED_IP, OPT_ROUTER, OPT_SERVER_ID,
    OP_REQUEST, SERVER_PORT,
};
use crate::netfabric::{Frame, Ipv4Addr, Ipv4Packet, MacAddr, MacDirectory, Transport};

pub use agent::{failure, is_terminator, parse_command, Command, ControlStream, Request, CONTROL_PORT, SUCCESS};
pub use manifest::{builtin_manifest, builtin_names, ActivitySpec, AppManifest, ManifestError, TrafficModelSpec};

pub const DISCOVER_ATTEMPTS: u32 = 3;
pub const DISCOVER_INTERVAL_MS: u64 = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BootState {
    PoweredOff,
    Discovering,
    Requesting,
    Online,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Intent {
    pub action: Option<String>,
    pub component: Option<(String, String)>,
    pub extras: BTreeMap<String, String>,
}

impl Intent {
    pub fn action(action: &str) -> Self {
        Intent { action: Some(action.to_string()), ..Self::default() }
    }

    pub fn component(package: &str, activity: &str) -> Self {
        Intent { component: Some((package.to_string(), activity.to_string())), ..Self::default() }
    }

    fn describe(&self) -> String {
        let mut parts = Vec::new();
        if let Some(a) = &self.action {
            parts.push(format!("act={a}"));
        }
        if let Some((p, a)) = &self.component {
            parts.push(format!("cmp={p}/{a}"));
        }
        format!("Intent {{ {} }}", parts.join(" "))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DeviceError {
    #[error("precondition violated: {0}")]
    PreconditionViolated(&'static str),
    #[error("no activity resolves the intent")]
    NoActivityForIntent,
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Timers a device asks the simulation loop to fire back at it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceTimer {
    DhcpRetry { attempt: u32 },
    Renew { epoch: u32 },
    ModelWake { generation: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeviceEvent {
    Online { ip: Ipv4Addr, at_ms: u64 },
    BootFailed { at_ms: u64 },
    LeaseLost { ip: Ipv4Addr, at_ms: u64 },
    Started { package: String, activity: String, at_ms: u64 },
    Stopped { package: String, at_ms: u64 },
}

/// Everything a handler call wants the world to do.
#[derive(Debug, Default)]
pub struct Outbox {
    /// Frames onto the bridge from this device's port.
    pub frames: Vec<Frame>,
    /// Remote-side packets of the running conversation, entering at the
    /// router's cloud side.
    pub cloud: Vec<Ipv4Packet>,
    pub timers: Vec<(u64, DeviceTimer)>,
    pub events: Vec<DeviceEvent>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DeviceCounters {
    pub tx_packets: u64,
    pub tx_bytes: u64,
    pub rx_packets: u64,
    pub rx_bytes: u64,
    /// Up packets that found no gateway MAC.
    pub unroutable: u64,
}

/// `[start, stop)` of one activity run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ActivityWindow {
    pub package: String,
    pub activity: String,
    pub start_ms: u64,
    pub stop_ms: Option<u64>,
}

#[derive(Debug)]
struct Running {
    package: String,
    activity: String,
    model: TrafficModel,
    generation: u64,
}

#[derive(Debug)]
pub struct Device {
    index: u32,
    mac: MacAddr,
    scenario_seed: u64,
    boot_state: BootState,
    ip: Option<Ipv4Addr>,
    gateway: Option<Ipv4Addr>,
    server_id: Option<Ipv4Addr>,
    offered: Option<Ipv4Addr>,
    attempt: u32,
    lease_epoch: u32,
    online_at: Option<u64>,
    packages: IndexMap<String, AppManifest>,
    running: Option<Running>,
    generation: u64,
    windows: Vec<ActivityWindow>,
    counters: DeviceCounters,
}

impl Device {
    pub fn new(index: u32, mac: MacAddr, scenario_seed: u64) -> Self {
        Device {
            index,
            mac,
            scenario_seed,
            boot_state: BootState::PoweredOff,
            ip: None,
            gateway: None,
            server_id: None,
            offered: None,
            attempt: 0,
            lease_epoch: 0,
            online_at: None,
            packages: IndexMap::new(),
            running: None,
            generation: 0,
            windows: Vec::new(),
            counters: DeviceCounters::default(),
        }
    }

    pub fn index(&self) -> u32 {
        self.index
    }

    pub fn mac(&self) -> MacAddr {
        self.mac
    }

    pub fn ip(&self) -> Option<Ipv4Addr> {
        self.ip
    }

    pub fn gateway(&self) -> Option<Ipv4Addr> {
        self.gateway
    }

    pub fn boot_state(&self) -> BootState {
        self.boot_state
    }

    pub fn online_at(&self) -> Option<u64> {
        self.online_at
    }

    /// Whether a connect to tcp/5555 would be accepted.
    pub fn is_listening(&self) -> bool {
        self.boot_state == BootState::Online
    }

    pub fn packages(&self) -> impl Iterator<Item = &AppManifest> {
        self.packages.values()
    }

    pub fn running(&self) -> Option<(&str, &str)> {
        self.running.as_ref().map(|r| (r.package.as_str(), r.activity.as_str()))
    }

    pub fn activity_windows(&self) -> &[ActivityWindow] {
        &self.windows
    }

    pub fn counters(&self) -> &DeviceCounters {
        &self.counters
    }

    pub fn boot(&mut self, now: u64, out: &mut Outbox) -> Result<(), DeviceError> {
        if self.boot_state != BootState::PoweredOff {
            return Err(DeviceError::PreconditionViolated("device already booted"));
        }
        self.attempt = 0;
        self.send_discover(now, out);
        Ok(())
    }

    fn xid(&self) -> u32 {
        (self.index << 8) | (self.attempt & 0xff)
    }

    fn send_discover(&mut self, now: u64, out: &mut Outbox) {
        self.attempt += 1;
        self.boot_state = BootState::Discovering;
        self.offered = None;
        let msg = DhcpMessage::new(OP_REQUEST, MessageType::Discover, self.xid(), self.mac);
        self.send_dhcp(&msg, out);
        out.timers.push((now + DISCOVER_INTERVAL_MS, DeviceTimer::DhcpRetry { attempt: self.attempt }));
    }

    fn send_dhcp(&self, msg: &DhcpMessage, out: &mut Outbox) {
        let src = self.ip.unwrap_or(Ipv4Addr::UNSPECIFIED);
        let pkt = Ipv4Packet::udp(src, Ipv4Addr::BROADCAST, CLIENT_PORT, SERVER_PORT, msg.encode());
        out.frames.push(Frame::ipv4(MacAddr::BROADCAST, self.mac, &pkt).expect("dhcp fits the MTU"));
    }

    pub fn on_timer(&mut self, timer: DeviceTimer, now: u64, lan: &MacDirectory, out: &mut Outbox) {
        match timer {
            DeviceTimer::DhcpRetry { attempt } => {
                let waiting = matches!(self.boot_state, BootState::Discovering | BootState::Requesting);
                if !waiting || attempt != self.attempt {
                    return;
                }
                if self.attempt < DISCOVER_ATTEMPTS {
                    self.send_discover(now, out);
                } else {
                    self.boot_state = BootState::PoweredOff;
                    out.events.push(DeviceEvent::BootFailed { at_ms: now });
                }
            }
            DeviceTimer::Renew { epoch } => {
                let (Some(ip), true) = (self.ip, epoch == self.lease_epoch) else { return };
                let mut msg = DhcpMessage::new(OP_REQUEST, MessageType::Request, self.xid(), self.mac)
                    .with_addr_option(OPT_REQUESTED_IP, ip);
                if let Some(server) = self.server_id {
                    msg = msg.with_addr_option(OPT_SERVER_ID, server);
                }
                msg.ciaddr = ip;
                self.send_dhcp(&msg, out);
            }
            DeviceTimer::ModelWake { generation } => self.wake_model(generation, now, lan, out),
        }
    }

    /// Delivers a frame arriving on this device's bridge port.
    pub fn on_frame(&mut self, frame: &Frame, now: u64, out: &mut Outbox) {
        if frame.dst != self.mac && !frame.dst.is_broadcast() {
            return;
        }
        let Ok(pkt) = frame.ipv4_packet() else { return };
        if let Transport::Udp(udp) = &pkt.transport {
            if udp.src_port == SERVER_PORT && udp.dst_port == CLIENT_PORT {
                if let Ok(msg) = DhcpMessage::decode(&udp.payload) {
                    self.on_dhcp(&msg, now, out);
                }
                return;
            }
        }
        if self.boot_state == BootState::Online && Some(pkt.dst) == self.ip {
            self.counters.rx_packets += 1;
            self.counters.rx_bytes += pkt.total_len() as u64;
        }
    }

    fn on_dhcp(&mut self, msg: &DhcpMessage, now: u64, out: &mut Outbox) {
        if msg.chaddr != self.mac || msg.xid != self.xid() {
            return;
        }
        match (self.boot_state, msg.message_type()) {
            (BootState::Discovering, Some(MessageType::Offer)) => {
                let Some(server) = msg.addr_option(OPT_SERVER_ID) else { return };
                self.offered = Some(msg.yiaddr);
                self.server_id = Some(server);
                self.boot_state = BootState::Requesting;
                let req = DhcpMessage::new(OP_REQUEST, MessageType::Request, self.xid(), self.mac)
                    .with_addr_option(OPT_REQUESTED_IP, msg.yiaddr)
                    .with_addr_option(OPT_SERVER_ID, server);
                self.send_dhcp(&req, out);
            }
            (BootState::Requesting, Some(MessageType::Ack)) if Some(msg.yiaddr) == self.offered => {
                self.ip = Some(msg.yiaddr);
                self.gateway = msg.addr_option(OPT_ROUTER);
                self.boot_state = BootState::Online;
                self.online_at = Some(now);
                out.events.push(DeviceEvent::Online { ip: msg.yiaddr, at_ms: now });
                self.arm_renewal(msg, now, out);
            }
            (BootState::Online, Some(MessageType::Ack)) if Some(msg.yiaddr) == self.ip => {
                self.arm_renewal(msg, now, out);
            }
            (BootState::Requesting, Some(MessageType::Nak)) => self.send_discover(now, out),
            (BootState::Online, Some(MessageType::Nak)) => {
                let ip = self.ip.take().expect("online implies ip");
                self.stop_running(now, out);
                self.lease_epoch += 1;
                out.events.push(DeviceEvent::LeaseLost { ip, at_ms: now });
                self.attempt = 0;
                self.send_discover(now, out);
            }
            _ => {}
        }
    }

    /// Renewal at half the lease time.
    fn arm_renewal(&mut self, msg: &DhcpMessage, now: u64, out: &mut Outbox) {
        self.lease_epoch += 1;
        if let Some(secs) = msg.lease_seconds() {
            let t1 = u64::from(secs) * 1000 / 2;
            out.timers.push((now + t1.max(1), DeviceTimer::Renew { epoch: self.lease_epoch }));
        }
    }

    fn require_online(&self) -> Result<Ipv4Addr, DeviceError> {
        self.ip.ok_or(DeviceError::PreconditionViolated("device is not online"))
    }

    /// Adds or replaces a package; replacing keeps its install position.
    pub fn install(&mut self, manifest: AppManifest) -> Result<(), DeviceError> {
        self.require_online()?;
        manifest.validate()?;
        self.packages.insert(manifest.package.clone(), manifest);
        Ok(())
    }

    /// Removes a package, stopping it first if it is running. Returns
    /// whether it was installed.
    pub fn uninstall(&mut self, package: &str, now: u64, out: &mut Outbox) -> Result<bool, DeviceError> {
        self.require_online()?;
        self.force_stop(package, now, out)?;
        Ok(self.packages.shift_remove(package).is_some())
    }

    pub fn force_stop(&mut self, package: &str, now: u64, out: &mut Outbox) -> Result<(), DeviceError> {
        self.require_online()?;
        if self.running.as_ref().is_some_and(|r| r.package == package) {
            self.stop_running(now, out);
        }
        Ok(())
    }

    fn stop_running(&mut self, now: u64, out: &mut Outbox) {
        if let Some(r) = self.running.take() {
            // Pending wakes carry the old generation and become no-ops.
            self.generation += 1;
            if let Some(w) = self.windows.last_mut() {
                w.stop_ms = Some(now);
            }
            out.events.push(DeviceEvent::Stopped { package: r.package, at_ms: now });
        }
    }

    fn resolve(&self, intent: &Intent) -> Result<(String, String), DeviceError> {
        if let Some((pkg, act)) = &intent.component {
            let m = self.packages.get(pkg).ok_or(DeviceError::NoActivityForIntent)?;
            m.activity(act).ok_or(DeviceError::NoActivityForIntent)?;
            return Ok((pkg.clone(), act.clone()));
        }
        let action = intent
            .action
            .as_deref()
            .ok_or(DeviceError::PreconditionViolated("intent needs an action or a component"))?;
        self.packages
            .values()
            .find_map(|m| m.activity_for_action(action).map(|a| (m.package.clone(), a.name.clone())))
            .ok_or(DeviceError::NoActivityForIntent)
    }

    pub fn start_intent(&mut self, intent: &Intent, now: u64, out: &mut Outbox) -> Result<(String, String), DeviceError> {
        self.require_online()?;
        let (package, activity) = self.resolve(intent)?;
        let manifest = &self.packages[&package];
        let seed = appmodels::derive_seed(self.scenario_seed, self.index, &package);
        let model = TrafficModel::new(manifest.model_params()?, seed);
        self.stop_running(now, out);
        self.generation += 1;
        self.running = Some(Running {
            package: package.clone(),
            activity: activity.clone(),
            model,
            generation: self.generation,
        });
        self.windows.push(ActivityWindow {
            package: package.clone(),
            activity: activity.clone(),
            start_ms: now,
            stop_ms: None,
        });
        out.events.push(DeviceEvent::Started { package: package.clone(), activity: activity.clone(), at_ms: now });
        out.timers.push((now, DeviceTimer::ModelWake { generation: self.generation }));
        Ok((package, activity))
    }

    fn wake_model(&mut self, generation: u64, now: u64, lan: &MacDirectory, out: &mut Outbox) {
        let Some(ip) = self.ip else { return };
        let Some(run) = self.running.as_mut().filter(|r| r.generation == generation) else { return };
        let Ok((packets, wake)) = run.model.next_events(now) else { return };
        let gateway_mac = self.gateway.and_then(|g| lan.lookup(g));
        for p in packets {
            let pkt = p.to_ipv4(ip);
            match (p.dir, gateway_mac) {
                (Direction::Down, _) => out.cloud.push(pkt),
                (Direction::Up, Some(gw)) => match Frame::ipv4(gw, self.mac, &pkt) {
                    Ok(frame) => {
                        self.counters.tx_packets += 1;
                        self.counters.tx_bytes += pkt.total_len() as u64;
                        out.frames.push(frame);
                    }
                    Err(_) => self.counters.unroutable += 1,
                },
                (Direction::Up, None) => self.counters.unroutable += 1,
            }
        }
        if let Wake::At(t) = wake {
            out.timers.push((t.max(now), DeviceTimer::ModelWake { generation }));
        }
    }

    /// Runs one complete line of the control protocol.
    pub fn handle_control_line(&mut self, line: &str, now: u64, out: &mut Outbox) -> Vec<String> {
        if self.require_online().is_err() {
            return vec![failure("device offline")];
        }
        let cmd = match parse_command(line) {
            Ok(cmd) => cmd,
            Err(reason) => return vec![failure(reason)],
        };
        match cmd {
            Command::AmStart { action, component, extras } => {
                let intent = Intent { action, component, extras };
                match self.start_intent(&intent, now, out) {
                    Ok(_) => vec![format!("Starting: {}", intent.describe()), SUCCESS.into()],
                    Err(DeviceError::NoActivityForIntent) if intent.component.is_some() => {
                        vec![failure("no activity for component")]
                    }
                    Err(DeviceError::NoActivityForIntent) => vec![failure("no activity for action")],
                    Err(DeviceError::PreconditionViolated(_)) => vec![failure("invalid intent")],
                    Err(e) => vec![failure(&e.to_string())],
                }
            }
            Command::AmForceStop(pkg) => {
                let _ = self.force_stop(&pkg, now, out);
                vec![SUCCESS.into()]
            }
            Command::PmListPackages { paths } => {
                let mut lines: Vec<String> = self
                    .packages
                    .values()
                    .map(|m| match paths {
                        true => format!("package:/data/app/{}={}", m.apk_name, m.package),
                        false => format!("package:{}", m.package),
                    })
                    .collect();
                lines.push(SUCCESS.into());
                lines
            }
            Command::PmUninstall(pkg) => match self.uninstall(&pkg, now, out) {
                Ok(true) => vec![SUCCESS.into()],
                _ => vec![failure("not installed")],
            },
            Command::Install { len: 0, apk_name } => self.install_bytes(&apk_name, b""),
            // The body belongs to the stream; a bare header has none.
            Command::Install { .. } => vec![failure("missing manifest body")],
        }
    }

    /// `install <apk_name> <n>` with its body already collected.
    pub fn install_bytes(&mut self, apk_name: &str, body: &[u8]) -> Vec<String> {
        if self.require_online().is_err() {
            return vec![failure("device offline")];
        }
        let manifest = std::str::from_utf8(body)
            .map_err(|_| ())
            .and_then(|text| AppManifest::from_json(text).map_err(|_| ()));
        match manifest {
            Ok(mut m) => {
                m.apk_name = apk_name.to_string();
                match self.install(m) {
                    Ok(()) => vec![SUCCESS.into()],
                    Err(_) => vec![failure("invalid manifest")],
                }
            }
            Err(()) => vec![failure("invalid manifest")],
        }
    }

    /// Answers one framed request from the control stream.
    pub fn handle_request(&mut self, request: &Request, now: u64, out: &mut Outbox) -> Vec<String> {
        match request {
            Request::Line(line) => self.handle_control_line(line, now, out),
            Request::Install { apk_name, body } => self.install_bytes(apk_name, body),
            Request::Garbage(reason) => vec![failure(reason)],
        }
    }
}
