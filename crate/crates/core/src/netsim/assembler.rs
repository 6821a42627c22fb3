//! Time alignment of packets from many nodes into per-second frames.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::packet::{encode_packet, FeatureKind, FeaturePacket};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeFeatures {
    pub soundmap: Option<FeaturePacket>,
    pub gtgram: Option<FeaturePacket>,
    pub position: Option<FeaturePacket>,
}

impl NodeFeatures {
    fn slot(&mut self, kind: FeatureKind) -> &mut Option<FeaturePacket> {
        match kind {
            FeatureKind::Soundmap => &mut self.soundmap,
            FeatureKind::Gtgram => &mut self.gtgram,
            FeatureKind::Position => &mut self.position,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.soundmap.is_some() && self.gtgram.is_some() && self.position.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFrame {
    pub timestamp: u64,
    pub nodes: BTreeMap<u8, NodeFeatures>,
    pub complete: bool,
}

#[derive(Debug)]
struct Pending {
    first_seen: Duration,
    nodes: BTreeMap<u8, NodeFeatures>,
    /// Encoded bytes per filled slot, for the duplicate rule.
    encoded: BTreeMap<(u8, FeatureKind), Vec<u8>>,
}

/// Groups packets by timestamp.
///
/// A frame is emitted as soon as every expected node has delivered all
/// three feature kinds, or as incomplete once `timeout` has passed since
/// its first packet. The assembler is a pure state machine driven by the
/// caller's clock, so identical packet multisets and arrival times give
/// identical frames regardless of interleaving. When a slot receives two
/// different packets, the one whose encoding sorts first is kept. Packets
/// for an already emitted timestamp, or from nodes outside the expected
/// set, are dropped.
#[derive(Debug)]
pub struct FrameAssembler {
    expected: BTreeSet<u8>,
    timeout: Duration,
    pending: BTreeMap<u64, Pending>,
    emitted: BTreeSet<u64>,
    dropped: usize,
}

impl FrameAssembler {
    pub fn new(expected: BTreeSet<u8>, timeout: Duration) -> Self {
        Self {
            expected,
            timeout,
            pending: BTreeMap::new(),
            emitted: BTreeSet::new(),
            dropped: 0,
        }
    }

    pub fn expected_nodes(&self) -> &BTreeSet<u8> {
        &self.expected
    }

    /// Packets ignored so far (late, unexpected node, or unencodable).
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn pending_timestamps(&self) -> impl Iterator<Item = u64> + '_ {
        self.pending.keys().copied()
    }

    /// Adds a packet received at `now`; returns the frame it completes, if any.
    pub fn ingest(&mut self, packet: FeaturePacket, now: Duration) -> Option<FeatureFrame> {
        let ts = packet.timestamp;
        if self.emitted.contains(&ts) || !self.expected.contains(&packet.node_id) {
            log::debug!("dropping packet node={} t={ts}", packet.node_id);
            self.dropped += 1;
            return None;
        }
        let Ok(bytes) = encode_packet(&packet) else {
            self.dropped += 1;
            return None;
        };
        let pending = self.pending.entry(ts).or_insert_with(|| Pending {
            first_seen: now,
            nodes: BTreeMap::new(),
            encoded: BTreeMap::new(),
        });
        let key = (packet.node_id, packet.kind);
        let replace = match pending.encoded.get(&key) {
            Some(existing) => bytes < *existing,
            None => true,
        };
        if replace {
            pending.encoded.insert(key, bytes);
            let (node, kind) = key;
            *pending.nodes.entry(node).or_default().slot(kind) = Some(packet);
        }
        if pending.encoded.len() == self.expected.len() * FeatureKind::ALL.len() {
            return Some(self.emit(ts, true));
        }
        None
    }

    /// Emits every pending frame whose timeout has elapsed at `now`, oldest first.
    pub fn poll(&mut self, now: Duration) -> Vec<FeatureFrame> {
        let due: Vec<u64> = self
            .pending
            .iter()
            .filter(|(_, p)| now.saturating_sub(p.first_seen) >= self.timeout)
            .map(|(&ts, _)| ts)
            .collect();
        due.into_iter().map(|ts| self.emit(ts, false)).collect()
    }

    /// Emits everything still pending as incomplete, oldest first.
    pub fn flush(&mut self) -> Vec<FeatureFrame> {
        let all: Vec<u64> = self.pending.keys().copied().collect();
        all.into_iter().map(|ts| self.emit(ts, false)).collect()
    }

    /// Time until the oldest pending frame times out, if any is pending.
    pub fn next_deadline(&self, now: Duration) -> Option<Duration> {
        self.pending
            .values()
            .map(|p| (p.first_seen + self.timeout).saturating_sub(now))
            .min()
    }

    fn emit(&mut self, ts: u64, complete: bool) -> FeatureFrame {
        let pending = self.pending.remove(&ts).expect("pending frame");
        self.emitted.insert(ts);
        let complete = complete
            || (self
                .expected
                .iter()
                .all(|n| pending.nodes.get(n).is_some_and(NodeFeatures::is_complete)));
        FeatureFrame {
            timestamp: ts,
            nodes: pending.nodes,
            complete,
        }
    }
}
