//! Per-subscriber accounting and the two anomaly flags.

use std::collections::{BTreeMap, VecDeque};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnomalyConfig {
    /// Trailing window W.
    pub window_ms: u64,
    /// Heavy-user threshold H: bytes within the window.
    pub heavy_bytes: u64,
    /// Signaling threshold F: new flows within the window.
    pub flow_limit: u64,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        AnomalyConfig { window_ms: 60_000, heavy_bytes: 10_000_000, flow_limit: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyFlag {
    HeavyUser,
    SignalingOverload,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppCounters {
    pub bytes: u64,
    pub packets: u64,
    pub flows: u64,
}

#[derive(Debug, Clone)]
pub struct SubscriberStats {
    pub ip: Ipv4Addr,
    pub apps: BTreeMap<String, AppCounters>,
    pub prioritized_packets: u64,
    /// Time each flag was first raised. Flags never clear.
    pub heavy_user: Option<u64>,
    pub signaling_overload: Option<u64>,
    recent_bytes: VecDeque<(u64, u64)>,
    recent_bytes_sum: u64,
    recent_flows: VecDeque<u64>,
}

impl SubscriberStats {
    pub fn new(ip: Ipv4Addr) -> Self {
        SubscriberStats {
            ip,
            apps: BTreeMap::new(),
            prioritized_packets: 0,
            heavy_user: None,
            signaling_overload: None,
            recent_bytes: VecDeque::new(),
            recent_bytes_sum: 0,
            recent_flows: VecDeque::new(),
        }
    }

    pub fn total_bytes(&self) -> u64 {
        self.apps.values().map(|c| c.bytes).sum()
    }

    pub fn flags(&self) -> Vec<AnomalyFlag> {
        let mut f = Vec::new();
        if self.heavy_user.is_some() {
            f.push(AnomalyFlag::HeavyUser);
        }
        if self.signaling_overload.is_some() {
            f.push(AnomalyFlag::SignalingOverload);
        }
        f
    }

    /// Bytes seen within the window ending at the last update or scan.
    pub fn window_bytes(&self) -> u64 {
        self.recent_bytes_sum
    }

    pub fn window_flows(&self) -> usize {
        self.recent_flows.len()
    }

    /// Accounts one packet against `app` and re-checks the flags.
    pub fn update(&mut self, app: &str, bytes: u64, new_flow: bool, now_ms: u64, cfg: &AnomalyConfig) {
        let c = self.apps.entry(app.to_string()).or_default();
        c.bytes += bytes;
        c.packets += 1;
        if new_flow {
            c.flows += 1;
            self.recent_flows.push_back(now_ms);
        }
        match self.recent_bytes.back_mut() {
            Some((t, b)) if *t == now_ms => *b += bytes,
            _ => self.recent_bytes.push_back((now_ms, bytes)),
        }
        self.recent_bytes_sum += bytes;
        self.scan(now_ms, cfg);
    }

    /// Moves a flow's counters from one label to another.
    pub fn relabel(&mut self, from: &str, to: &str, bytes: u64, packets: u64) {
        if from == to {
            return;
        }
        let mut moved = AppCounters { bytes, packets, flows: 1 };
        if let Some(src) = self.apps.get_mut(from) {
            src.bytes -= bytes;
            src.packets -= packets;
            src.flows -= 1;
            if *src == AppCounters::default() {
                self.apps.remove(from);
            }
        } else {
            moved = AppCounters::default();
        }
        let dst = self.apps.entry(to.to_string()).or_default();
        dst.bytes += moved.bytes;
        dst.packets += moved.packets;
        dst.flows += moved.flows;
    }

    /// Drops samples older than the window and raises any flag whose
    /// threshold is exceeded.
    pub fn scan(&mut self, now_ms: u64, cfg: &AnomalyConfig) -> Vec<AnomalyFlag> {
        let horizon = now_ms.saturating_sub(cfg.window_ms);
        while let Some(&(t, b)) = self.recent_bytes.front() {
            if t > horizon || now_ms < cfg.window_ms {
                break;
            }
            self.recent_bytes_sum -= b;
            self.recent_bytes.pop_front();
        }
        while let Some(&t) = self.recent_flows.front() {
            if t > horizon || now_ms < cfg.window_ms {
                break;
            }
            self.recent_flows.pop_front();
        }
        if self.heavy_user.is_none() && self.recent_bytes_sum > cfg.heavy_bytes {
            self.heavy_user = Some(now_ms);
        }
        if self.signaling_overload.is_none() && self.recent_flows.len() as u64 > cfg.flow_limit {
            self.signaling_overload = Some(now_ms);
        }
        self.flags()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idle_subscriber_has_no_flags() {
        let mut s = SubscriberStats::new(Ipv4Addr::new(10, 0, 2, 100));
        assert!(s.scan(120_000, &AnomalyConfig::default()).is_empty());
    }

    #[test]
    fn window_is_trailing() {
        let cfg = AnomalyConfig { window_ms: 1000, heavy_bytes: 1000, flow_limit: 2 };
        let mut s = SubscriberStats::new(Ipv4Addr::new(10, 0, 2, 100));
        s.update("a", 600, true, 0, &cfg);
        s.update("a", 300, true, 500, &cfg);
        assert_eq!(s.window_bytes(), 900);
        // The sample at t=0 falls out of (1000, 2000].
        s.update("a", 600, false, 1000, &cfg);
        assert_eq!(s.window_bytes(), 900);
        assert!(s.heavy_user.is_none());
        s.update("a", 200, true, 1400, &cfg);
        assert_eq!(s.window_bytes(), 1100);
        assert_eq!(s.heavy_user, Some(1400));
        assert!(s.signaling_overload.is_none());
        // Sticky after the window drains.
        s.scan(100_000, &cfg);
        assert_eq!(s.window_bytes(), 0);
        assert_eq!(s.flags(), vec![AnomalyFlag::HeavyUser]);
    }

    #[test]
    fn relabel_moves_counters() {
        let cfg = AnomalyConfig::default();
        let mut s = SubscriberStats::new(Ipv4Addr::new(10, 0, 2, 100));
        s.update("pending", 100, true, 0, &cfg);
        s.update("pending", 50, false, 1, &cfg);
        s.relabel("pending", "skype_like", 150, 2);
        assert!(!s.apps.contains_key("pending"));
        assert_eq!(s.apps["skype_like"], AppCounters { bytes: 150, packets: 2, flows: 1 });
        assert_eq!(s.total_bytes(), 150);
    }
}
