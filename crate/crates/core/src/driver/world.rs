use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::device::{AppManifest, Device, DeviceEvent, DeviceTimer, Outbox, Request};
use crate::dhcpd::{DhcpServer, ServerEvent, CLIENT_PORT, SERVER_PORT};
use crate::netfabric::{Bridge, Frame, Ipv4Addr, Ipv4Packet, MacAddr, MacDirectory, PortId, SimClock, Transport};
use crate::router_dpi::{Routed, Router, Side};

use super::report::RunReport;
use super::scenario::{ConfigError, Plan};
use super::{Driver, DriverError, Launch, SessionState};

pub const HOST_MAC: MacAddr = MacAddr([0x02, 0, 0, 0x01, 0, 0x01]);
pub const ROUTER_MAC: MacAddr = MacAddr([0x02, 0, 0, 0x01, 0, 0x02]);
pub const HOST_IP: Ipv4Addr = Ipv4Addr::new(10, 0, 2, 2);
pub const SCAN_INTERVAL_MS: u64 = 1000;
/// Port of the gateway's one-off presence announcement.
const ANNOUNCE_PORT: u16 = 520;

#[derive(Debug, Clone)]
enum Event {
    Boot(usize),
    Device(usize, DeviceTimer),
    Deliver { port: PortId, frame: Frame },
    FromCloud(Ipv4Packet),
    Release(u64),
    Poll,
    Appmanager { session: usize, tick: u64 },
    LeaseExpiry,
    Scan,
}

#[derive(Debug, Clone, Copy)]
enum Endpoint {
    Host,
    Router,
    Device(usize),
}

/// Totals outside the router's own accounting.
#[derive(Debug, Clone, Default)]
pub(crate) struct WorldCounters {
    pub boot_failures: u64,
    pub pool_exhausted: u64,
    pub lease_write_failures: u64,
    pub cloud_rx_packets: u64,
    pub cloud_rx_bytes: u64,
    pub undeliverable: u64,
    pub events: u64,
}

/// The whole simulated test bed: fabric, DHCP host, gateway, phones and
/// the driver, sharing one clock.
pub struct World {
    pub(crate) plan: Plan,
    clock: SimClock<Event>,
    bridge: Bridge,
    endpoints: Vec<Endpoint>,
    host_port: PortId,
    router_port: PortId,
    device_ports: Vec<PortId>,
    pub(crate) devices: Vec<Device>,
    device_by_ip: BTreeMap<Ipv4Addr, usize>,
    lan: MacDirectory,
    pub(crate) server: DhcpServer,
    seen_server_events: usize,
    expiry_at: Option<u64>,
    pub(crate) router: Router,
    pub(crate) driver: Driver,
    pub(crate) counters: WorldCounters,
    temp_leases: Option<PathBuf>,
}

fn private_leases_path() -> PathBuf {
    static NEXT: AtomicU64 = AtomicU64::new(0);
    let n = NEXT.fetch_add(1, Ordering::Relaxed);
    std::env::temp_dir().join(format!("fleet-{}-{n}.leases", std::process::id()))
}

impl World {
    pub fn new(plan: Plan) -> Result<Self, ConfigError> {
        let s = &plan.scenario;
        let gateway = plan.scenario.pool.router;
        let (leases_path, temp_leases) = match &plan.leases_path {
            Some(p) => (p.clone(), None),
            None => {
                let p = private_leases_path();
                (p.clone(), Some(p))
            }
        };
        let io = |e: crate::dhcpd::DhcpError| ConfigError::Io { path: leases_path.clone(), message: e.to_string() };
        let server = DhcpServer::new(HOST_IP, s.pool.clone())
            .and_then(|srv| srv.with_leases_file(&leases_path))
            .map_err(io)?;

        let mut bridge = Bridge::new();
        let mut endpoints = Vec::new();
        let mut attach = |mac, ep| {
            let port = bridge.attach_port(mac).expect("unique endpoint mac");
            endpoints.push(ep);
            port
        };
        let host_port = attach(HOST_MAC, Endpoint::Host);
        let router_port = attach(ROUTER_MAC, Endpoint::Router);
        let mut devices = Vec::new();
        let mut device_ports = Vec::new();
        for i in 0..s.device_count {
            let index = i + 1;
            let mac = MacAddr::for_device(index as u16);
            device_ports.push(attach(mac, Endpoint::Device(devices.len())));
            devices.push(Device::new(index, mac, s.seed));
        }

        let mut lan = MacDirectory::default();
        lan.publish(gateway, ROUTER_MAC);
        lan.publish(HOST_IP, HOST_MAC);

        let mut world = World {
            router: Router::new(plan.router.clone()),
            driver: Driver::new(leases_path),
            plan,
            clock: SimClock::new(),
            bridge,
            endpoints,
            host_port,
            router_port,
            device_ports,
            devices,
            device_by_ip: BTreeMap::new(),
            lan,
            server,
            seen_server_events: 0,
            expiry_at: None,
            counters: WorldCounters::default(),
            temp_leases,
        };

        // Lets the bridge learn the gateway before any phone talks to it.
        let hello = Ipv4Packet::udp(gateway, Ipv4Addr::BROADCAST, ANNOUNCE_PORT, ANNOUNCE_PORT, Vec::new());
        let frame = Frame::ipv4(MacAddr::BROADCAST, ROUTER_MAC, &hello).expect("empty announcement");
        world.transmit(world.router_port, frame, 0);

        let stagger = world.plan.scenario.boot_stagger_ms;
        for i in 0..world.devices.len() {
            world.schedule(i as u64 * stagger, Event::Boot(i));
        }
        world.schedule(0, Event::Poll);
        world.schedule(SCAN_INTERVAL_MS, Event::Scan);
        Ok(world)
    }

    fn schedule(&mut self, at: u64, event: Event) {
        self.clock.schedule(at, event).expect("events are never scheduled in the past");
    }

    fn duration(&self) -> u64 {
        self.plan.scenario.duration_ms
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    pub fn driver(&self) -> &Driver {
        &self.driver
    }

    pub fn devices(&self) -> &[Device] {
        &self.devices
    }

    pub fn router(&self) -> &Router {
        &self.router
    }

    pub fn dhcp_server(&self) -> &DhcpServer {
        &self.server
    }

    /// Dispatches one event before the scenario end; false when there is
    /// nothing left to do.
    pub fn step(&mut self) -> bool {
        match self.clock.peek_time() {
            Some(t) if t < self.duration() => {}
            _ => return false,
        }
        let fired = self.clock.step().expect("peeked");
        self.counters.events += 1;
        self.dispatch(fired.event, fired.at_ms);
        true
    }

    /// Runs to the scenario end and produces the report.
    pub fn run(mut self) -> RunReport {
        while self.step() {}
        let end = self.duration();
        self.router.scan_anomalies(end);
        RunReport::build(&self)
    }

    fn dispatch(&mut self, event: Event, now: u64) {
        match event {
            Event::Boot(i) => {
                let mut out = Outbox::default();
                if self.devices[i].boot(now, &mut out).is_ok() {
                    self.apply(i, out, now);
                }
            }
            Event::Device(i, timer) => {
                let mut out = Outbox::default();
                self.devices[i].on_timer(timer, now, &self.lan, &mut out);
                self.apply(i, out, now);
            }
            Event::Deliver { port, frame } => match self.endpoints[port] {
                Endpoint::Host => self.host_receive(&frame, now),
                Endpoint::Router => self.router_receive(&frame, now),
                Endpoint::Device(i) => {
                    let mut out = Outbox::default();
                    self.devices[i].on_frame(&frame, now, &mut out);
                    self.apply(i, out, now);
                }
            },
            Event::FromCloud(pkt) => {
                let routed = self.router.route(Side::Cloud, pkt, now);
                self.routed(routed, Side::Lan, now);
            }
            Event::Release(ticket) => match self.router.release(ticket) {
                Some((Side::Lan, pkt)) => self.deliver_to_lan(pkt, now),
                Some((Side::Cloud, pkt)) => self.deliver_to_cloud(&pkt),
                None => {}
            },
            Event::Poll => self.poll(now),
            Event::Appmanager { session, tick } => self.appmanager_tick(session, tick, now),
            Event::LeaseExpiry => {
                self.expiry_at = None;
                for lease in self.server.expire_leases(now) {
                    self.driver.note(now, format!("lease {} expired", lease.ip));
                }
                self.after_server(now);
            }
            Event::Scan => {
                for (ip, flag) in self.router.scan_anomalies(now) {
                    log::info!("[{now} ms] {ip} flagged {flag:?}");
                }
                if now + SCAN_INTERVAL_MS < self.duration() {
                    self.schedule(now + SCAN_INTERVAL_MS, Event::Scan);
                }
            }
        }
    }

    fn transmit(&mut self, ingress: PortId, frame: Frame, now: u64) {
        let at = now + self.plan.scenario.link_latency_ms;
        let egress = self.bridge.forward(ingress, &frame).expect("ingress port is attached");
        for port in egress {
            self.schedule(at, Event::Deliver { port, frame: frame.clone() });
        }
    }

    fn apply(&mut self, i: usize, out: Outbox, now: u64) {
        let port = self.device_ports[i];
        for frame in out.frames {
            self.transmit(port, frame, now);
        }
        let latency = self.plan.scenario.link_latency_ms;
        for pkt in out.cloud {
            self.schedule(now + latency, Event::FromCloud(pkt));
        }
        for (at, timer) in out.timers {
            self.schedule(at.max(now), Event::Device(i, timer));
        }
        for ev in out.events {
            match ev {
                DeviceEvent::Online { ip, at_ms } => {
                    self.lan.publish(ip, self.devices[i].mac());
                    self.device_by_ip.insert(ip, i);
                    log::debug!("[{at_ms} ms] device {} online as {ip}", self.devices[i].index());
                }
                DeviceEvent::BootFailed { at_ms } => {
                    self.counters.boot_failures += 1;
                    self.driver.note(at_ms, format!("device {} failed to boot", self.devices[i].index()));
                }
                DeviceEvent::LeaseLost { ip, at_ms } => {
                    self.lan.withdraw(ip);
                    self.device_by_ip.remove(&ip);
                    if let Some(s) = self.driver.session_index(ip) {
                        self.driver.session_mut(s).state = SessionState::Closed;
                    }
                    self.driver.note(at_ms, format!("{ip} lost its lease"));
                }
                DeviceEvent::Started { package, at_ms, .. } => log::trace!("[{at_ms} ms] {package} started"),
                DeviceEvent::Stopped { package, at_ms } => log::trace!("[{at_ms} ms] {package} stopped"),
            }
        }
    }

    fn host_receive(&mut self, frame: &Frame, now: u64) {
        let Ok(pkt) = frame.ipv4_packet() else { return };
        let Transport::Udp(udp) = &pkt.transport else { return };
        if udp.dst_port != SERVER_PORT {
            return;
        }
        if let Some(reply) = self.server.handle_datagram(&udp.payload, now) {
            let ip = Ipv4Packet::udp(HOST_IP, Ipv4Addr::BROADCAST, SERVER_PORT, CLIENT_PORT, reply.encode());
            let frame = Frame::ipv4(reply.chaddr, HOST_MAC, &ip).expect("dhcp reply fits the MTU");
            self.transmit(self.host_port, frame, now);
        }
        self.after_server(now);
    }

    fn after_server(&mut self, now: u64) {
        let fresh: Vec<ServerEvent> = self.server.events()[self.seen_server_events..].to_vec();
        self.seen_server_events = self.server.events().len();
        for ev in fresh {
            match ev {
                ServerEvent::PoolExhausted { mac, at_ms } => {
                    self.counters.pool_exhausted += 1;
                    self.driver.note(at_ms, format!("address pool exhausted, {mac} left without a lease"));
                }
                ServerEvent::LeaseFileWriteFailed { at_ms, reason } => {
                    self.counters.lease_write_failures += 1;
                    self.driver.note(at_ms, format!("leases file write failed: {reason}"));
                }
            }
        }
        if let Some(t) = self.server.next_expiry() {
            if self.expiry_at.is_none_or(|at| t < at) {
                self.expiry_at = Some(t);
                self.schedule(t.max(now), Event::LeaseExpiry);
            }
        }
    }

    fn router_receive(&mut self, frame: &Frame, now: u64) {
        if frame.dst != ROUTER_MAC {
            return;
        }
        let Ok(pkt) = frame.ipv4_packet() else { return };
        let routed = self.router.route(Side::Lan, pkt, now);
        self.routed(routed, Side::Cloud, now);
    }

    fn routed(&mut self, routed: Routed, egress: Side, now: u64) {
        match routed {
            Routed::Forward(pkt) => match egress {
                Side::Lan => self.deliver_to_lan(pkt, now),
                Side::Cloud => self.deliver_to_cloud(&pkt),
            },
            Routed::Drop(_) => {}
            Routed::Delay { until, ticket } => self.schedule(until.max(now), Event::Release(ticket)),
        }
    }

    fn deliver_to_cloud(&mut self, pkt: &Ipv4Packet) {
        self.counters.cloud_rx_packets += 1;
        self.counters.cloud_rx_bytes += pkt.total_len() as u64;
    }

    fn deliver_to_lan(&mut self, pkt: Ipv4Packet, now: u64) {
        let Some(mac) = self.lan.lookup(pkt.dst) else {
            self.counters.undeliverable += 1;
            return;
        };
        match Frame::ipv4(mac, ROUTER_MAC, &pkt) {
            Ok(frame) => self.transmit(self.router_port, frame, now),
            Err(_) => self.counters.undeliverable += 1,
        }
    }

    fn poll(&mut self, now: u64) {
        // A corrupt file is already logged by the driver; retry next tick.
        let _ = self.driver.poll_leases(now);
        for ip in self.driver.waiting().to_vec() {
            if let Err(e) = self.connect(ip, now) {
                self.driver.refused_connects += 1;
                log::debug!("[{now} ms] {e}");
            }
        }
        let next = now + self.plan.scenario.poll_interval_ms;
        if next < self.duration() {
            self.schedule(next, Event::Poll);
        }
    }

    /// `adb connect ip:5555`. Idempotent; refused while nothing listens.
    pub fn connect(&mut self, ip: Ipv4Addr, now: u64) -> Result<usize, DriverError> {
        if let Some(s) = self.driver.session_index(ip) {
            return Ok(s);
        }
        let device = *self.device_by_ip.get(&ip).ok_or(DriverError::ConnectRefused(ip))?;
        if !self.devices[device].is_listening() {
            return Err(DriverError::ConnectRefused(ip));
        }
        let session = self.driver.register(ip, device, now);
        self.prepare_device(session, now);
        Ok(session)
    }

    /// Writes `bytes` into a session and collects the agent's reply lines.
    pub fn send(&mut self, session: usize, bytes: &[u8], now: u64) -> Vec<String> {
        let s = self.driver.session_mut(session);
        let device = s.device;
        let requests: Vec<Request> = s.stream.push(bytes);
        let mut replies = Vec::new();
        for req in requests {
            let mut out = Outbox::default();
            replies.extend(self.devices[device].handle_request(&req, now, &mut out));
            self.apply(device, out, now);
        }
        replies
    }

    fn command(&mut self, session: usize, line: &str, now: u64) -> Vec<String> {
        self.send(session, format!("{line}\n").as_bytes(), now)
    }

    fn apps_for_session(&self, session: usize) -> Vec<AppManifest> {
        let device = self.driver.sessions()[session].device;
        self.plan.apps_for(self.devices[device].index()).to_vec()
    }

    /// Installs whatever the scenario needs and starts the Appmanager.
    fn prepare_device(&mut self, session: usize, now: u64) {
        let listing = self.command(session, "shell pm list packages -f", now);
        let installed: Vec<&str> = listing
            .iter()
            .filter_map(|l| l.strip_prefix("package:"))
            .filter_map(|l| l.rsplit_once('=').map(|(_, pkg)| pkg))
            .collect();
        let missing: Vec<AppManifest> = self
            .apps_for_session(session)
            .into_iter()
            .filter(|m| !installed.contains(&m.package.as_str()))
            .collect();
        let ip = self.driver.sessions()[session].ip;
        for m in missing {
            let body = m.to_json();
            let mut bytes = format!("install {} {}\n", m.apk_name, body.len()).into_bytes();
            bytes.extend_from_slice(body.as_bytes());
            let reply = self.send(session, &bytes, now);
            let status = reply.last().map(String::as_str).unwrap_or("no reply");
            self.driver.note(now, format!("install {} on {ip}: {status}", m.apk_name));
        }
        if !self.plan.apps.is_empty() {
            self.schedule(now, Event::Appmanager { session, tick: 0 });
        }
    }

    /// Tick `k`: close app `k-1`, start app `k`, come back after the delay.
    fn appmanager_tick(&mut self, session: usize, tick: u64, now: u64) {
        if self.driver.sessions()[session].state != SessionState::Connected {
            return;
        }
        let apps = self.apps_for_session(session);
        let n = apps.len() as u64;
        if tick > 0 {
            let prev = &apps[((tick - 1) % n) as usize];
            self.command(session, &format!("shell am force-stop {}", prev.package), now);
        }
        let app = &apps[(tick % n) as usize];
        let reply = self.command(session, &format!("shell am start -n {}/{}", app.package, app.launch_activity), now);
        let ok = reply.last().is_some_and(|l| l == crate::device::SUCCESS);
        let ip = self.driver.sessions()[session].ip;
        let status = reply.last().cloned().unwrap_or_default();
        match ok {
            true => self.driver.note(now, format!("{ip}: launched {}", app.package)),
            false => self.driver.note(now, format!("{ip}: skipped {} ({status})", app.package)),
        }
        self.driver.session_mut(session).launches.push(Launch { at_ms: now, package: app.package.clone(), ok });
        let next = now + self.plan.scenario.intent_delay_ms;
        if next < self.duration() {
            self.schedule(next, Event::Appmanager { session, tick: tick + 1 });
        }
    }
}

impl Drop for World {
    fn drop(&mut self) {
        if let Some(p) = &self.temp_leases {
            let _ = std::fs::remove_file(p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::BootState;
    use crate::driver::{run_scenario, Scenario};

    fn world(s: &Scenario) -> World {
        World::new(s.resolve().unwrap()).unwrap()
    }

    #[test]
    fn one_phone_one_call_is_classified() {
        let report = run_scenario(&Scenario::new(1, &["skype"], 10_000)).unwrap();
        assert!(report.flows.iter().any(|f| f.app == "skype_like" && f.state == "classified"));
        assert_eq!(report.devices[0].launches.len(), 2);
        assert_eq!(report.log[0].text, format!("connected to {}:5555", report.devices[0].ip.unwrap()));
    }

    #[test]
    fn connect_is_refused_until_the_phone_is_online() {
        let mut w = world(&Scenario::new(1, &[], 5_000));
        while w.dhcp_server().active_leases().next().is_none() {
            assert!(w.step());
        }
        assert_ne!(w.devices()[0].boot_state(), BootState::Online);
        let ip = w.dhcp_server().active_leases().next().unwrap().ip;
        let now = w.now();
        assert_eq!(w.connect(ip, now), Err(DriverError::ConnectRefused(ip)));
        while w.devices()[0].boot_state() != BootState::Online {
            assert!(w.step());
        }
        let now = w.now();
        let s = w.connect(ip, now).unwrap();
        assert_eq!(w.connect(ip, now), Ok(s));
        assert_eq!(w.driver().list_devices(), [format!("{ip}:5555\tdevice")]);
    }

    #[test]
    fn appmanager_launches_on_schedule() {
        let report = run_scenario(&Scenario::new(1, &["skype", "facebook", "twitter"], 15_000)).unwrap();
        let launches = &report.devices[0].launches;
        let t0 = launches[0].at_ms;
        let got: Vec<(u64, &str)> = launches.iter().map(|l| (l.at_ms - t0, l.package.as_str())).collect();
        assert_eq!(got, [(0, "com.skype.test"), (5000, "com.facebook.katana"), (10_000, "com.twitter.android")]);
    }

    #[test]
    fn failed_launch_is_skipped_on_schedule() {
        let s = Scenario::new(1, &["skype", "facebook", "twitter"], 15_000);
        let mut w = world(&s);
        while w.driver().sessions().is_empty() {
            assert!(w.step());
        }
        let now = w.now();
        let reply = w.send(0, b"shell pm uninstall com.facebook.katana\n", now);
        assert_eq!(reply, ["Success"]);
        let report = w.run();
        let l = &report.devices[0].launches;
        assert_eq!(l.iter().map(|l| l.ok).collect::<Vec<_>>(), [true, false, true]);
        assert_eq!(l[2].at_ms - l[1].at_ms, 5000);
        assert!(report.log.iter().any(|x| x.text.contains("skipped com.facebook.katana")));
    }

    #[test]
    fn no_apps_means_no_commands() {
        let report = run_scenario(&Scenario::new(2, &[], 3_000)).unwrap();
        assert!(report.devices.iter().all(|d| d.launches.is_empty() && d.connected_at_ms.is_some()));
        assert!(report.flows.is_empty());
    }
}
