use std::collections::HashMap;

use super::{FabricError, Frame, MacAddr};

pub type PortId = usize;

/// Learning bridge with dense port ids assigned in attachment order.
#[derive(Debug, Default, Clone)]
pub struct Bridge {
    ports: Vec<MacAddr>,
    attached: HashMap<MacAddr, PortId>,
    learned: HashMap<MacAddr, PortId>,
}

impl Bridge {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn attach_port(&mut self, mac: MacAddr) -> Result<PortId, FabricError> {
        if self.attached.contains_key(&mac) {
            return Err(FabricError::DuplicateEndpoint(mac));
        }
        let id = self.ports.len();
        self.ports.push(mac);
        self.attached.insert(mac, id);
        Ok(id)
    }

    pub fn port_count(&self) -> usize {
        self.ports.len()
    }

    /// The endpoint MAC attached at `port`.
    pub fn endpoint(&self, port: PortId) -> Option<MacAddr> {
        self.ports.get(port).copied()
    }

    pub fn learned_port(&self, mac: &MacAddr) -> Option<PortId> {
        self.learned.get(mac).copied()
    }

    /// Learns the source, then returns the ports the frame is delivered to:
    /// the learned port for a known unicast destination, every other port
    /// otherwise. Broadcast always floods.
    pub fn forward(&mut self, ingress: PortId, frame: &Frame) -> Result<Vec<PortId>, FabricError> {
        if ingress >= self.ports.len() {
            return Err(FabricError::UnknownPort(ingress));
        }
        if !frame.src.is_broadcast() {
            self.learned.insert(frame.src, ingress);
        }
        if !frame.dst.is_broadcast() {
            if let Some(&port) = self.learned.get(&frame.dst) {
                return Ok(vec![port]);
            }
        }
        Ok((0..self.ports.len()).filter(|&p| p != ingress).collect())
    }
}
