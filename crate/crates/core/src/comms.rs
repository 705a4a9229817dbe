//! Link latency and byte accounting between robots, the edge and the cloud.
//!
//! Every link is a FIFO server: a packet starts transmitting when it exists
//! and the link is free, occupies the link for `size / bandwidth`, and is
//! delivered after the processing and backhaul delays on top of that.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{serialized_len, LayerShape};
use crate::policy::{ACTION_DIM, OBS_DIM};
use crate::world::RobotId;

/// Header bytes on raw data packets (observation batches, action schedules).
pub const DATA_HEADER: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    Robot(RobotId),
    Edge(u32),
    Cloud,
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Robot(r) => write!(f, "robot{r}"),
            NodeId::Edge(e) => write!(f, "edge{e}"),
            NodeId::Cloud => write!(f, "cloud"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    /// Bytes per second.
    pub bandwidth: f64,
    pub processing_delay: f64,
    pub backhaul_delay: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self { bandwidth: 1_000_000.0, processing_delay: 0.05, backhaul_delay: 0.0 }
    }
}

impl LinkConfig {
    pub fn validate(&self, key: &str) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::config(format!("{key}.bandwidth"), "must be > 0"));
        }
        if !(self.processing_delay >= 0.0 && self.processing_delay.is_finite()) {
            return Err(Error::config(format!("{key}.processing_delay"), "must be >= 0"));
        }
        if !(self.backhaul_delay >= 0.0 && self.backhaul_delay.is_finite()) {
            return Err(Error::config(format!("{key}.backhaul_delay"), "must be >= 0"));
        }
        Ok(())
    }

    pub fn transmission_time(&self, size: usize) -> f64 {
        size as f64 / self.bandwidth
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Packet {
    pub src: NodeId,
    pub dst: NodeId,
    pub size: usize,
    pub created_at: f64,
    pub delivered_at: Option<f64>,
}

impl Packet {
    pub fn new(src: NodeId, dst: NodeId, size: usize, created_at: f64) -> Self {
        Self { src, dst, size, created_at, delivered_at: None }
    }
}

/// FIFO transmission of `packet` on a link busy until `busy_until`.
/// Returns `(delivered_at, new_busy_until)`.
pub fn transmit(link: &LinkConfig, packet: &Packet, busy_until: f64) -> (f64, f64) {
    let start = packet.created_at.max(busy_until);
    let done = start + link.transmission_time(packet.size);
    (done + link.processing_delay + link.backhaul_delay, done)
}

/// A link together with its FIFO state.
#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub link: LinkConfig,
    pub busy_until: f64,
}

impl Channel {
    pub fn new(link: LinkConfig) -> Self {
        Self { link, busy_until: f64::NEG_INFINITY }
    }

    /// Schedules `packet`, stamping its delivery time.
    pub fn send(&mut self, packet: &mut Packet) -> f64 {
        let (delivered, busy) = transmit(&self.link, packet, self.busy_until);
        self.busy_until = busy;
        packet.delivered_at = Some(delivered);
        delivered
    }
}

/// Link parameters for every topology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommsConfig {
    pub edge: LinkConfig,
    pub cloud: LinkConfig,
    /// Robot-to-robot radio used by the distributed baseline.
    pub peer: LinkConfig,
    /// Radio range for robot-to-robot exchange, meters.
    pub peer_range: f64,
    /// Robots farther than this from the edge node cannot reach it.
    pub edge_range: f64,
}

impl Default for CommsConfig {
    fn default() -> Self {
        Self {
            edge: LinkConfig::default(),
            cloud: LinkConfig { backhaul_delay: 2.0, ..LinkConfig::default() },
            peer: LinkConfig::default(),
            peer_range: 60.0,
            edge_range: f64::INFINITY,
        }
    }
}

impl CommsConfig {
    pub fn validate(&self) -> Result<()> {
        self.edge.validate("comms.edge")?;
        self.cloud.validate("comms.cloud")?;
        self.peer.validate("comms.peer")?;
        if !(self.peer_range > 0.0) {
            return Err(Error::config("comms.peer_range", "must be > 0"));
        }
        if !(self.edge_range > 0.0) {
            return Err(Error::config("comms.edge_range", "must be > 0"));
        }
        Ok(())
    }
}

/// What travels over a link.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Payload<'a> {
    /// A small model's parameters.
    Model(&'a [LayerShape]),
    /// A split sub-model (parameters plus mask bitmap) and a fusion branch
    /// transform.
    SubModelWithBranch { model: &'a [LayerShape], branch: LayerShape },
    /// A batch of raw observations.
    Observations(usize),
    /// A schedule of actions.
    ActionSchedule(usize),
}

/// Wire size in bytes; matches the corresponding `to_bytes` encodings.
pub fn payload_size(payload: Payload<'_>) -> usize {
    match payload {
        Payload::Model(shapes) => serialized_len(shapes),
        Payload::SubModelWithBranch { model, branch } => {
            let n: usize = model.iter().map(|s| s.param_count()).sum();
            4 + serialized_len(model) + n.div_ceil(8) + 2 + serialized_len(&[branch])
        }
        Payload::Observations(n) => DATA_HEADER + n * OBS_DIM * 8,
        Payload::ActionSchedule(n) => DATA_HEADER + n * ACTION_DIM * 8,
    }
}

/// Who talks to whom in a round.
#[derive(Clone, Debug, PartialEq)]
pub enum Topology {
    /// Robots upload to one edge node over a shared channel and receive
    /// downlinks on a shared channel.
    EdgeLsai { edge: u32 },
    /// As the edge case, but through the cloud link with its backhaul delay.
    Centralized,
    /// Each robot sends its model to each neighbour over its own radio.
    Distributed { neighbors: BTreeMap<RobotId, Vec<RobotId>> },
}

/// One robot's part in an exchange.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transfer {
    pub robot: RobotId,
    pub up_bytes: usize,
    pub down_bytes: usize,
    pub ready_at: f64,
    pub reachable: bool,
}

/// Outcome of one round of exchanges.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Exchange {
    pub packets: Vec<Packet>,
    /// Time each robot has everything it will receive this round.
    pub completion: BTreeMap<RobotId, f64>,
    pub unreachable: Vec<RobotId>,
    pub total_bytes: u64,
    /// When the hub has every upload (edge/cloud topologies).
    pub uploads_done: f64,
}

/// Schedules all uploads, then (after `hub_compute` seconds at the hub) all
/// downlinks. Unreachable participants are excluded and listed.
pub fn round_trip_model_exchange(
    topology: &Topology,
    comms: &CommsConfig,
    transfers: &[Transfer],
    hub_compute: f64,
) -> Result<Exchange> {
    if transfers.is_empty() {
        return Err(Error::invalid("a round needs at least one participant"));
    }
    let mut ex = Exchange::default();
    let (active, unreachable): (Vec<&Transfer>, Vec<&Transfer>) = transfers.iter().partition(|t| t.reachable);
    ex.unreachable = unreachable.iter().map(|t| t.robot).collect();
    match topology {
        Topology::EdgeLsai { .. } | Topology::Centralized => {
            let (hub, link) = match topology {
                Topology::EdgeLsai { edge } => (NodeId::Edge(*edge), comms.edge),
                _ => (NodeId::Cloud, comms.cloud),
            };
            let mut up = Channel::new(link);
            let mut ordered = active.clone();
            ordered.sort_by(|a, b| a.ready_at.total_cmp(&b.ready_at).then(a.robot.cmp(&b.robot)));
            let mut last = f64::NEG_INFINITY;
            for t in &ordered {
                let mut p = Packet::new(NodeId::Robot(t.robot), hub, t.up_bytes, t.ready_at);
                last = last.max(up.send(&mut p));
                ex.packets.push(p);
            }
            ex.uploads_done = last;
            let mut down = Channel::new(link);
            let created = last + hub_compute;
            for t in &ordered {
                let mut p = Packet::new(hub, NodeId::Robot(t.robot), t.down_bytes, created);
                ex.completion.insert(t.robot, down.send(&mut p));
                ex.packets.push(p);
            }
        }
        Topology::Distributed { neighbors } => {
            let mut ordered = active.clone();
            ordered.sort_by_key(|t| t.robot);
            let ids: Vec<RobotId> = ordered.iter().map(|t| t.robot).collect();
            for t in &ordered {
                ex.completion.insert(t.robot, t.ready_at);
            }
            for t in &ordered {
                let mut radio = Channel::new(comms.peer);
                for &n in neighbors.get(&t.robot).map(Vec::as_slice).unwrap_or(&[]) {
                    if !ids.contains(&n) {
                        continue;
                    }
                    let mut p = Packet::new(NodeId::Robot(t.robot), NodeId::Robot(n), t.up_bytes, t.ready_at);
                    let at = radio.send(&mut p);
                    let c = ex.completion.get_mut(&n).expect("active robot");
                    *c = c.max(at);
                    ex.packets.push(p);
                }
            }
            ex.uploads_done = ex.completion.values().copied().fold(f64::NEG_INFINITY, f64::max);
        }
    }
    ex.total_bytes = ex.packets.iter().map(|p| p.size as u64).sum();
    Ok(ex)
}

/// One row of the packet log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PacketRecord {
    pub round: usize,
    pub packet: Packet,
}

/// Writes `round,src,dst,bytes,created_at_s,delivered_at_s` rows.
pub fn write_packet_log<W: Write>(out: W, records: &[PacketRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["round", "src", "dst", "bytes", "created_at_s", "delivered_at_s"])?;
    for r in records {
        let p = &r.packet;
        w.write_record([
            r.round.to_string(),
            p.src.to_string(),
            p.dst.to_string(),
            p.size.to_string(),
            format!("{:.6}", p.created_at),
            p.delivered_at.map(|d| format!("{d:.6}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
