//! Seeded traffic generators standing in for real apps.
//!
//! A model is a phase machine. Each call to [`TrafficModel::next_events`]
//! returns the packets due at that instant and the next wake time. A model
//! describes the whole conversation, so it emits both the phone's upstream
//! packets and the cloud's downstream replies.
//!
//! Signature-bearing constants (probe header, Host values, ports, game
//! trigger) are shared with the default signature file in `corpus/`.

use std::net::{Ipv4Addr, SocketAddrV4};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::netfabric::{Ipv4Packet, TcpFlags, TCP_HEADER_LEN, UDP_HEADER_LEN, IPV4_HEADER_LEN, MTU};

/// First four bytes of every VoIP probe; byte 2 is the 0x02 marker.
pub const VOIP_PROBE_HEADER: [u8; 4] = [0x53, 0x4b, 0x02, 0x01];
/// First four bytes of the game download trigger.
pub const GAME_TRIGGER_HEADER: [u8; 4] = [0x47, 0x42, 0x01, 0x00];

const EPHEMERAL_PORTS: std::ops::RangeInclusive<u16> = 49152..=65535;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("unknown traffic model `{0}`")]
    UnknownModel(String),
    #[error("invalid parameters for {model}: {reason}")]
    InvalidParams { model: &'static str, reason: String },
    #[error("traffic model already finished")]
    ModelExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    VoipCall,
    SocialFeed,
    GameBurst,
    UnknownApp,
}

impl ModelKind {
    pub fn parse(id: &str) -> Result<Self, ModelError> {
        Ok(match id {
            "voip_call" => ModelKind::VoipCall,
            "social_feed" => ModelKind::SocialFeed,
            "game_burst" => ModelKind::GameBurst,
            "unknown_app" => ModelKind::UnknownApp,
            other => return Err(ModelError::UnknownModel(other.to_string())),
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::VoipCall => "voip_call",
            ModelKind::SocialFeed => "social_feed",
            ModelKind::GameBurst => "game_burst",
            ModelKind::UnknownApp => "unknown_app",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Phone to cloud.
    Up,
    /// Cloud to phone.
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    Udp(Vec<u8>),
    Tcp { flags: TcpFlags, seq: u32, payload: Vec<u8> },
}

/// A packet in model terms: the phone side is only a port until the device
/// fills in its leased address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelPacket {
    pub dir: Direction,
    pub local_port: u16,
    pub remote: SocketAddrV4,
    pub body: Body,
}

impl ModelPacket {
    pub fn payload(&self) -> &[u8] {
        match &self.body {
            Body::Udp(p) => p,
            Body::Tcp { payload, .. } => payload,
        }
    }

    pub fn to_ipv4(&self, device_ip: Ipv4Addr) -> Ipv4Packet {
        let (src, sport, dst, dport) = match self.dir {
            Direction::Up => (device_ip, self.local_port, *self.remote.ip(), self.remote.port()),
            Direction::Down => (*self.remote.ip(), self.remote.port(), device_ip, self.local_port),
        };
        match &self.body {
            Body::Udp(p) => Ipv4Packet::udp(src, dst, sport, dport, p.clone()),
            Body::Tcp { flags, seq, payload } => Ipv4Packet::tcp(src, dst, sport, dport, *flags, *seq, payload.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wake {
    At(u64),
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VoipParams {
    pub relay: Ipv4Addr,
    pub relay_port: u16,
    pub probes: u32,
    pub probe_interval_ms: u64,
    pub probe_len: usize,
    pub call_duration_ms: u64,
    pub packets_per_second: u64,
    pub media_len: usize,
}

impl Default for VoipParams {
    fn default() -> Self {
        VoipParams {
            relay: Ipv4Addr::new(198, 51, 100, 10),
            relay_port: 3478,
            probes: 3,
            probe_interval_ms: 100,
            probe_len: 64,
            call_duration_ms: 30_000,
            packets_per_second: 50,
            media_len: 160,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SocialParams {
    pub server: Ipv4Addr,
    pub port: u16,
    pub host: String,
    pub path: String,
    pub think_time_ms: u64,
    pub think_jitter_ms: u64,
    pub min_responses: u32,
    pub max_responses: u32,
    pub response_len: usize,
    pub step_ms: u64,
}

impl Default for SocialParams {
    fn default() -> Self {
        SocialParams {
            server: Ipv4Addr::new(198, 51, 100, 20),
            port: 443,
            host: "m.social.test".into(),
            path: "/feed".into(),
            think_time_ms: 5_000,
            think_jitter_ms: 1_000,
            min_responses: 2,
            max_responses: 6,
            response_len: 1200,
            step_ms: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameParams {
    pub server: Ipv4Addr,
    pub port: u16,
    pub segments: u32,
    pub segment_len: usize,
    pub segment_interval_ms: u64,
    pub step_ms: u64,
}

impl Default for GameParams {
    fn default() -> Self {
        GameParams {
            server: Ipv4Addr::new(198, 51, 100, 30),
            port: 7777,
            segments: 200,
            segment_len: 1200,
            segment_interval_ms: 5,
            step_ms: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnknownParams {
    pub server: Ipv4Addr,
    pub port: u16,
    pub interval_ms: u64,
    pub payload_len: usize,
}

impl Default for UnknownParams {
    fn default() -> Self {
        UnknownParams {
            server: Ipv4Addr::new(198, 51, 100, 40),
            port: 9999,
            interval_ms: 200,
            payload_len: 96,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Voip(VoipParams),
    Social(SocialParams),
    Game(GameParams),
    Unknown(UnknownParams),
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Voip(_) => ModelKind::VoipCall,
            ModelParams::Social(_) => ModelKind::SocialFeed,
            ModelParams::Game(_) => ModelKind::GameBurst,
            ModelParams::Unknown(_) => ModelKind::UnknownApp,
        }
    }

    /// Parses `params` (a JSON object, or null for defaults) for `model_id`.
    pub fn from_json(model_id: &str, params: &serde_json::Value) -> Result<Self, ModelError> {
        let kind = ModelKind::parse(model_id)?;
        let parsed = match kind {
            ModelKind::VoipCall => ModelParams::Voip(typed(kind, params)?),
            ModelKind::SocialFeed => ModelParams::Social(typed(kind, params)?),
            ModelKind::GameBurst => ModelParams::Game(typed(kind, params)?),
            ModelKind::UnknownApp => ModelParams::Unknown(typed(kind, params)?),
        };
        parsed.validate()?;
        Ok(parsed)
    }

    fn validate(&self) -> Result<(), ModelError> {
        let model = self.kind().as_str();
        let bad = |reason: String| Err(ModelError::InvalidParams { model, reason });
        let udp_max = MTU - IPV4_HEADER_LEN - UDP_HEADER_LEN;
        let tcp_max = MTU - IPV4_HEADER_LEN - TCP_HEADER_LEN;
        match self {
            ModelParams::Voip(p) => {
                if p.packets_per_second == 0 || 1000 % p.packets_per_second != 0 {
                    return bad("packets_per_second must divide 1000".into());
                }
                if p.probe_len < VOIP_PROBE_HEADER.len() || p.probe_len > udp_max || p.media_len > udp_max {
                    return bad(format!("payload lengths must lie in [4, {udp_max}]"));
                }
                if p.probe_interval_ms == 0 {
                    return bad("probe_interval_ms must be positive".into());
                }
            }
            ModelParams::Social(p) => {
                if p.min_responses > p.max_responses {
                    return bad("min_responses exceeds max_responses".into());
                }
                if p.response_len > tcp_max || p.step_ms == 0 {
                    return bad(format!("response_len must be at most {tcp_max} and step_ms positive"));
                }
                let cycle = p.step_ms * (6 + u64::from(p.max_responses));
                if p.think_time_ms <= cycle {
                    return bad(format!("think_time_ms must exceed one exchange ({cycle} ms)"));
                }
                if p.host.contains(['\r', '\n']) || p.path.contains(['\r', '\n', ' ']) {
                    return bad("host and path must be single tokens".into());
                }
            }
            ModelParams::Game(p) => {
                if p.segment_len > tcp_max || p.step_ms == 0 {
                    return bad(format!("segment_len must be at most {tcp_max} and step_ms positive"));
                }
            }
            ModelParams::Unknown(p) => {
                if p.payload_len > udp_max || p.interval_ms == 0 {
                    return bad(format!("payload_len must be at most {udp_max} and interval_ms positive"));
                }
            }
        }
        Ok(())
    }
}

fn typed<T: DeserializeOwned + Default>(kind: ModelKind, params: &serde_json::Value) -> Result<T, ModelError> {
    if params.is_null() {
        return Ok(T::default());
    }
    serde_json::from_value(params.clone()).map_err(|e| ModelError::InvalidParams {
        model: kind.as_str(),
        reason: e.to_string(),
    })
}

/// Per-(scenario, device, package) seed so device streams are independent
/// yet reproducible.
pub fn derive_seed(scenario_seed: u64, device_index: u32, package: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(scenario_seed.to_le_bytes());
    h.update(device_index.to_le_bytes());
    h.update(package.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

#[derive(Debug, Clone)]
enum Phase {
    Start,
    VoipProbe { sent: u32 },
    VoipMedia { sent: u64 },
    /// One TCP exchange; `step` indexes into the exchange script.
    Exchange { step: u32 },
    UnknownSend,
    Done,
}

#[derive(Debug, Clone)]
pub struct TrafficModel {
    params: ModelParams,
    seed: u64,
    rng: ChaCha8Rng,
    phase: Phase,
    origin: u64,
    next_at: u64,
    local_port: u16,
    seq: u32,
    responses: u32,
    media_start: u64,
}

pub fn spawn(model_id: &str, params: &serde_json::Value, seed: u64) -> Result<TrafficModel, ModelError> {
    Ok(TrafficModel::new(ModelParams::from_json(model_id, params)?, seed))
}

impl TrafficModel {
    pub fn new(params: ModelParams, seed: u64) -> Self {
        TrafficModel {
            params,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            phase: Phase::Start,
            origin: 0,
            next_at: 0,
            local_port: 0,
            seq: 0,
            responses: 0,
            media_start: 0,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.params.kind()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_done(&self) -> bool {
        matches!(self.phase, Phase::Done)
    }

    /// Emits the packets due at `now` and reports when to call again. The
    /// first call fixes the model's time origin.
    pub fn next_events(&mut self, now: u64) -> Result<(Vec<ModelPacket>, Wake), ModelError> {
        if self.is_done() {
            return Err(ModelError::ModelExhausted);
        }
        if matches!(self.phase, Phase::Start) {
            self.origin = now;
            self.next_at = now;
            self.begin();
        }
        let mut out = Vec::new();
        let params = self.params.clone();
        match params {
            ModelParams::Voip(p) => self.step_voip(&p, &mut out),
            ModelParams::Social(p) => self.step_social(&p, &mut out),
            ModelParams::Game(p) => self.step_game(&p, &mut out),
            ModelParams::Unknown(p) => self.step_unknown(&p, &mut out),
        }
        let wake = if self.is_done() { Wake::Done } else { Wake::At(self.next_at) };
        Ok((out, wake))
    }

    fn begin(&mut self) {
        self.local_port = self.rng.gen_range(EPHEMERAL_PORTS);
        self.seq = self.rng.next_u32();
        self.phase = match self.params {
            ModelParams::Voip(_) => Phase::VoipProbe { sent: 0 },
            ModelParams::Social(_) | ModelParams::Game(_) => Phase::Exchange { step: 0 },
            ModelParams::Unknown(_) => Phase::UnknownSend,
        };
    }

    fn random_bytes(&mut self, len: usize) -> Vec<u8> {
        let mut v = vec![0u8; len];
        self.rng.fill_bytes(&mut v);
        v
    }

    fn tcp(&mut self, dir: Direction, remote: SocketAddrV4, flags: TcpFlags, payload: Vec<u8>) -> ModelPacket {
        let seq = self.seq;
        self.seq = self.seq.wrapping_add(payload.len().max(1) as u32);
        ModelPacket { dir, local_port: self.local_port, remote, body: Body::Tcp { flags, seq, payload } }
    }

    fn step_voip(&mut self, p: &VoipParams, out: &mut Vec<ModelPacket>) {
        let remote = SocketAddrV4::new(p.relay, p.relay_port);
        match self.phase {
            Phase::VoipProbe { sent } => {
                let mut payload = self.random_bytes(p.probe_len);
                payload[..4].copy_from_slice(&VOIP_PROBE_HEADER);
                out.push(ModelPacket { dir: Direction::Up, local_port: self.local_port, remote, body: Body::Udp(payload) });
                let sent = sent + 1;
                if sent < p.probes {
                    self.phase = Phase::VoipProbe { sent };
                    self.next_at += p.probe_interval_ms;
                } else {
                    self.media_start = self.origin + u64::from(p.probes) * p.probe_interval_ms;
                    self.next_at = self.media_start;
                    self.phase = Phase::VoipMedia { sent: 0 };
                    if p.call_duration_ms * p.packets_per_second / 1000 == 0 {
                        self.phase = Phase::Done;
                    }
                }
            }
            Phase::VoipMedia { sent } => {
                let total = p.call_duration_ms * p.packets_per_second / 1000;
                let gap = 1000 / p.packets_per_second;
                for dir in [Direction::Up, Direction::Down] {
                    let mut payload = self.random_bytes(p.media_len);
                    let header = rtp_header(sent as u16, (sent as u32).wrapping_mul(160), dir);
                    let n = header.len().min(payload.len());
                    payload[..n].copy_from_slice(&header[..n]);
                    out.push(ModelPacket { dir, local_port: self.local_port, remote, body: Body::Udp(payload) });
                }
                let sent = sent + 1;
                if sent < total {
                    self.phase = Phase::VoipMedia { sent };
                    self.next_at = self.media_start + sent * gap;
                } else {
                    self.phase = Phase::Done;
                }
            }
            _ => unreachable!("voip phase"),
        }
    }

    fn step_social(&mut self, p: &SocialParams, out: &mut Vec<ModelPacket>) {
        let remote = SocketAddrV4::new(p.server, p.port);
        let Phase::Exchange { step } = self.phase else { unreachable!("social phase") };
        let ack = TcpFlags::ACK;
        // Script: SYN, SYN-ACK, ACK, request, k responses, FIN up, FIN down.
        match step {
            0 => {
                self.responses = self.rng.gen_range(p.min_responses..=p.max_responses);
                out.push(self.tcp(Direction::Up, remote, TcpFlags::SYN, vec![]));
            }
            1 => out.push(self.tcp(Direction::Down, remote, TcpFlags::SYN | ack, vec![])),
            2 => out.push(self.tcp(Direction::Up, remote, ack, vec![])),
            3 => {
                let req = format!(
                    "GET {} HTTP/1.1\r\nHost: {}\r\nUser-Agent: fleet-sim/1.0\r\nAccept: */*\r\n\r\n",
                    p.path, p.host
                );
                out.push(self.tcp(Direction::Up, remote, ack, req.into_bytes()));
            }
            s if s < 4 + self.responses => {
                let body = self.random_bytes(p.response_len);
                out.push(self.tcp(Direction::Down, remote, ack, body));
            }
            s if s == 4 + self.responses => out.push(self.tcp(Direction::Up, remote, TcpFlags::FIN | ack, vec![])),
            _ => {
                out.push(self.tcp(Direction::Down, remote, TcpFlags::FIN | ack, vec![]));
                let jitter = self.rng.gen_range(0..=p.think_jitter_ms);
                self.origin += p.think_time_ms + jitter;
                self.next_at = self.origin;
                self.local_port = self.rng.gen_range(EPHEMERAL_PORTS);
                self.seq = self.rng.next_u32();
                self.phase = Phase::Exchange { step: 0 };
                return;
            }
        }
        self.phase = Phase::Exchange { step: step + 1 };
        self.next_at += p.step_ms;
    }

    fn step_game(&mut self, p: &GameParams, out: &mut Vec<ModelPacket>) {
        let remote = SocketAddrV4::new(p.server, p.port);
        let Phase::Exchange { step } = self.phase else { unreachable!("game phase") };
        let ack = TcpFlags::ACK;
        let mut next_gap = p.step_ms;
        match step {
            0 => out.push(self.tcp(Direction::Up, remote, TcpFlags::SYN, vec![])),
            1 => out.push(self.tcp(Direction::Down, remote, TcpFlags::SYN | ack, vec![])),
            2 => out.push(self.tcp(Direction::Up, remote, ack, vec![])),
            3 => {
                let mut trigger = GAME_TRIGGER_HEADER.to_vec();
                trigger.extend_from_slice(b"GET level-pack 1\n");
                out.push(self.tcp(Direction::Up, remote, ack, trigger));
            }
            s if s < 4 + p.segments => {
                let body = self.random_bytes(p.segment_len);
                out.push(self.tcp(Direction::Down, remote, ack, body));
                next_gap = p.segment_interval_ms;
            }
            s if s == 4 + p.segments => out.push(self.tcp(Direction::Up, remote, TcpFlags::FIN | ack, vec![])),
            _ => {
                out.push(self.tcp(Direction::Down, remote, TcpFlags::FIN | ack, vec![]));
                self.phase = Phase::Done;
                return;
            }
        }
        self.phase = Phase::Exchange { step: step + 1 };
        self.next_at += next_gap;
    }

    fn step_unknown(&mut self, p: &UnknownParams, out: &mut Vec<ModelPacket>) {
        let remote = SocketAddrV4::new(p.server, p.port);
        let payload = self.random_bytes(p.payload_len);
        out.push(ModelPacket { dir: Direction::Up, local_port: self.local_port, remote, body: Body::Udp(payload) });
        self.next_at += p.interval_ms;
    }
}

fn rtp_header(seq: u16, timestamp: u32, dir: Direction) -> [u8; 12] {
    let mut h = [0u8; 12];
    h[0] = 0x80;
    h[1] = 0x00;
    h[2..4].copy_from_slice(&seq.to_be_bytes());
    h[4..8].copy_from_slice(&timestamp.to_be_bytes());
    let ssrc: u32 = match dir {
        Direction::Up => 0x5eed_0001,
        Direction::Down => 0x5eed_0002,
    };
    h[8..12].copy_from_slice(&ssrc.to_be_bytes());
    h
}

/// Runs a model from `start` and collects every packet emitted before
/// `until`, with its emission time.
pub fn trace(model: &mut TrafficModel, start: u64, until: u64) -> Vec<(u64, ModelPacket)> {
    let mut out = Vec::new();
    let mut at = start;
    while at < until && !model.is_done() {
        let (pkts, wake) = model.next_events(at).expect("model not done");
        out.extend(pkts.into_iter().map(|p| (at, p)));
        match wake {
            Wake::At(t) => at = t,
            Wake::Done => break,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn full(id: &str, seed: u64, until: u64) -> Vec<(u64, ModelPacket)> {
        trace(&mut spawn(id, &serde_json::Value::Null, seed).unwrap(), 0, until)
    }

    #[test]
    fn same_seed_same_trace() {
        for id in ["voip_call", "social_feed", "game_burst", "unknown_app"] {
            assert_eq!(full(id, 42, 40_000), full(id, 42, 40_000), "{id}");
            assert_ne!(full(id, 42, 40_000), full(id, 43, 40_000), "{id}");
        }
    }

    #[test]
    fn unknown_model_is_rejected() {
        assert_eq!(
            spawn("tiktok", &serde_json::Value::Null, 1).unwrap_err(),
            ModelError::UnknownModel("tiktok".into())
        );
    }

    #[test]
    fn bad_params_are_rejected() {
        assert!(matches!(
            spawn("voip_call", &json!({"packets_per_second": 7}), 1),
            Err(ModelError::InvalidParams { .. })
        ));
        assert!(matches!(
            spawn("social_feed", &json!({"colour": "red"}), 1),
            Err(ModelError::InvalidParams { .. })
        ));
        assert!(matches!(
            spawn("game_burst", &json!({"segment_len": 1461}), 1),
            Err(ModelError::InvalidParams { .. })
        ));
    }

    #[test]
    fn voip_probes_then_exact_media_rate() {
        let t = full("voip_call", 7, u64::MAX);
        let probes: Vec<_> = t.iter().take(3).collect();
        for (i, (at, p)) in probes.iter().enumerate() {
            assert_eq!(*at, 100 * i as u64);
            assert_eq!(p.dir, Direction::Up);
            assert_eq!(p.payload().len(), 64);
            assert_eq!(p.payload()[2], 0x02);
        }
        let media = &t[3..];
        assert!(media.iter().all(|(at, _)| *at >= 300));
        let up: Vec<u64> = media.iter().filter(|(_, p)| p.dir == Direction::Up).map(|(at, _)| *at).collect();
        let down = media.iter().filter(|(_, p)| p.dir == Direction::Down).count();
        assert_eq!(up.len(), 1500);
        assert_eq!(down, 1500);
        assert!(up.windows(2).all(|w| w[1] - w[0] == 20));
        // 50 packets per direction in every whole second of the call.
        for sec in 0..30u64 {
            let lo = 300 + sec * 1000;
            assert_eq!(up.iter().filter(|t| (lo..lo + 1000).contains(*t)).count(), 50);
        }
        let bits_per_second: usize = media
            .iter()
            .filter(|(at, p)| p.dir == Direction::Up && *at < 1300)
            .map(|(_, p)| p.payload().len() * 8)
            .sum();
        assert_eq!(bits_per_second, 64_000);
        assert!(media.iter().all(|(_, p)| p.payload().len() == 160));
        assert_eq!(t.last().unwrap().0, 300 + 1499 * 20);
    }

    #[test]
    fn exhausted_model_errors() {
        let mut m = spawn("game_burst", &serde_json::Value::Null, 1).unwrap();
        trace(&mut m, 0, u64::MAX);
        assert!(m.is_done());
        assert_eq!(m.next_events(10_000).unwrap_err(), ModelError::ModelExhausted);
    }

    #[test]
    fn social_starts_with_syn_and_requests_after_handshake() {
        let t = full("social_feed", 3, 20_000);
        let (_, first) = &t[0];
        assert_eq!(first.remote.port(), 443);
        assert!(matches!(first.body, Body::Tcp { flags, .. } if flags == TcpFlags::SYN));
        let (_, req) = &t[3];
        let text = String::from_utf8_lossy(req.payload());
        assert!(text.contains("Host: m.social.test"), "{text}");
        // Responses per exchange stay in [2, 6] and each exchange uses a new port.
        let mut ports: Vec<u16> = t.iter().map(|(_, p)| p.local_port).collect();
        ports.dedup();
        assert!(ports.len() >= 3);
        for port in &ports {
            let k = t
                .iter()
                .filter(|(_, p)| p.local_port == *port && p.dir == Direction::Down && p.payload().len() == 1200)
                .count();
            assert!((2..=6).contains(&k), "k = {k}");
        }
    }

    #[test]
    fn social_think_time_has_jitter_within_bounds() {
        let t = full("social_feed", 11, 60_000);
        let starts: Vec<u64> = t
            .iter()
            .filter(|(_, p)| matches!(p.body, Body::Tcp { flags, .. } if flags == TcpFlags::SYN))
            .map(|(at, _)| *at)
            .collect();
        assert!(starts.len() >= 9);
        for w in starts.windows(2) {
            assert!((5_000..=6_000).contains(&(w[1] - w[0])), "{w:?}");
        }
    }

    #[test]
    fn game_burst_shape() {
        let t = full("game_burst", 5, u64::MAX);
        let trigger = t.iter().find(|(_, p)| p.dir == Direction::Up && !p.payload().is_empty()).unwrap();
        assert_eq!(&trigger.1.payload()[..4], &GAME_TRIGGER_HEADER);
        let bulk = t.iter().filter(|(_, p)| p.dir == Direction::Down && p.payload().len() == 1200).count();
        assert_eq!(bulk, 200);
        assert!(t.iter().all(|(_, p)| p.remote.port() == 7777));
    }

    #[test]
    fn unknown_app_sends_to_9999() {
        let t = full("unknown_app", 5, 2_000);
        assert_eq!(t.len(), 10);
        assert!(t.iter().all(|(_, p)| p.remote.port() == 9999 && p.dir == Direction::Up));
    }

    #[test]
    fn packets_fit_the_mtu() {
        for id in ["voip_call", "social_feed", "game_burst", "unknown_app"] {
            for (_, p) in full(id, 9, 10_000) {
                assert!(p.to_ipv4(Ipv4Addr::new(10, 0, 2, 100)).total_len() <= MTU);
            }
        }
    }

    #[test]
    fn seed_derivation_separates_devices_and_packages() {
        let a = derive_seed(1, 1, "com.skype.test");
        assert_eq!(a, derive_seed(1, 1, "com.skype.test"));
        assert_ne!(a, derive_seed(1, 2, "com.skype.test"));
        assert_ne!(a, derive_seed(1, 1, "com.twitter.android"));
        assert_ne!(a, derive_seed(2, 1, "com.skype.test"));
    }
}
