//! Bulk-synchronous simulated message passing.
//!
//! Every algorithm stage runs to completion on all ranks before the fabric
//! delivers the messages posted during that stage. Messages carry a stage
//! label and are never delivered across a stage boundary.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Mutex;

use thiserror::Error;

pub type Rank = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FabricError {
    #[error("participation mismatch: expected contributions from {expected} ranks, got {got}")]
    ParticipationMismatch { expected: usize, got: usize },
    #[error("unmatched exchange in stage `{stage}`: rank {from} sends to {to} but not vice versa")]
    UnmatchedExchange { stage: String, from: Rank, to: Rank },
    #[error("message from stage `{found}` pending while delivering stage `{expected}`")]
    StageMismatch { expected: String, found: String },
    #[error("rank {0} is not part of this fabric")]
    InvalidRank(Rank),
    #[error("rank {0} cannot send to itself")]
    SelfSend(Rank),
}

/// Per-stage traffic record.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StageTraffic {
    pub stage: String,
    pub messages: usize,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

/// One entry of the delivery history.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Delivery {
    pub stage: String,
    pub from: Rank,
    pub to: Rank,
    pub bytes: usize,
}

/// Messages delivered to one rank: `(sender, payload)` in sender order, FIFO
/// per sender.
pub type Inbox = Vec<(Rank, Vec<u8>)>;

/// Communication contract used by every distributed algorithm in this crate.
///
/// All collective calls take one contribution per rank and return one result
/// per rank, which keeps rank programs bulk-synchronous.
pub trait Communicator {
    fn size(&self) -> usize;

    /// Rank `p` receives the sum of the values of ranks `q < p`.
    fn exscan_sum(&self, values: &[u64]) -> Result<Vec<u64>, FabricError>;

    /// Every rank receives every rank's contribution.
    fn all_gather(&self, stage: &str, contributions: Vec<Vec<u8>>) -> Result<Vec<Vec<u8>>, FabricError>;

    /// Enqueues a point-to-point message for the current stage.
    fn post(&self, stage: &str, from: Rank, to: Rank, payload: Vec<u8>) -> Result<(), FabricError>;

    /// Completes a stage and hands each rank its inbox.
    fn deliver(&self, stage: &str) -> Result<Vec<Inbox>, FabricError>;

    /// Symmetric point-to-point round: `p` must send to `q` iff `q` sends to
    /// `p` (possibly with empty payloads).
    fn neighbor_exchange(
        &self,
        stage: &str,
        outboxes: Vec<BTreeMap<Rank, Vec<u8>>>,
    ) -> Result<Vec<BTreeMap<Rank, Vec<u8>>>, FabricError> {
        if outboxes.len() != self.size() {
            return Err(FabricError::ParticipationMismatch { expected: self.size(), got: outboxes.len() });
        }
        let pairs: BTreeSet<(Rank, Rank)> =
            outboxes.iter().enumerate().flat_map(|(p, out)| out.keys().map(move |&q| (p, q))).collect();
        for &(p, q) in &pairs {
            if !pairs.contains(&(q, p)) {
                return Err(FabricError::UnmatchedExchange { stage: stage.to_string(), from: p, to: q });
            }
        }
        for (p, out) in outboxes.into_iter().enumerate() {
            for (q, payload) in out {
                self.post(stage, p, q, payload)?;
            }
        }
        Ok(self.deliver(stage)?.into_iter().map(|inbox| inbox.into_iter().collect()).collect())
    }
}

/// Messages in flight on one ordered rank pair, each tagged with its stage.
type Channel = VecDeque<(String, Vec<u8>)>;

#[derive(Debug, Default)]
struct Mailboxes {
    channels: BTreeMap<(Rank, Rank), Channel>,
    traffic: Vec<StageTraffic>,
    history: Vec<Delivery>,
}

/// In-process fabric. Safe for concurrent posting; delivery order depends
/// only on `(sender, receiver)` and posting order per channel.
#[derive(Debug)]
pub struct SimFabric {
    size: usize,
    inner: Mutex<Mailboxes>,
}

impl SimFabric {
    pub fn new(size: usize) -> Self {
        assert!(size >= 1, "a fabric needs at least one rank");
        SimFabric { size, inner: Mutex::new(Mailboxes::default()) }
    }

    /// Traffic of every completed stage, in completion order.
    pub fn traffic(&self) -> Vec<StageTraffic> {
        self.inner.lock().unwrap().traffic.clone()
    }

    /// Bytes sent in all completed stages with the given label.
    pub fn bytes_in_stage(&self, stage: &str) -> u64 {
        self.inner.lock().unwrap().traffic.iter().filter(|t| t.stage == stage).map(|t| t.bytes_sent).sum()
    }

    pub fn history(&self) -> Vec<Delivery> {
        self.inner.lock().unwrap().history.clone()
    }

    pub fn reset_stats(&self) {
        let mut inner = self.inner.lock().unwrap();
        inner.traffic.clear();
        inner.history.clear();
    }

    fn check_rank(&self, r: Rank) -> Result<(), FabricError> {
        if r >= self.size {
            Err(FabricError::InvalidRank(r))
        } else {
            Ok(())
        }
    }
}

impl Communicator for SimFabric {
    fn size(&self) -> usize {
        self.size
    }

    fn exscan_sum(&self, values: &[u64]) -> Result<Vec<u64>, FabricError> {
        if values.len() != self.size {
            return Err(FabricError::ParticipationMismatch { expected: self.size, got: values.len() });
        }
        let mut acc = 0u64;
        Ok(values
            .iter()
            .map(|v| {
                let before = acc;
                acc += v;
                before
            })
            .collect())
    }

    fn all_gather(&self, stage: &str, contributions: Vec<Vec<u8>>) -> Result<Vec<Vec<u8>>, FabricError> {
        if contributions.len() != self.size {
            return Err(FabricError::ParticipationMismatch { expected: self.size, got: contributions.len() });
        }
        let bytes: u64 = contributions.iter().map(|c| c.len() as u64).sum();
        let mut inner = self.inner.lock().unwrap();
        inner.traffic.push(StageTraffic {
            stage: stage.to_string(),
            messages: self.size * self.size.saturating_sub(1),
            bytes_sent: bytes * self.size.saturating_sub(1) as u64,
            bytes_received: bytes * self.size.saturating_sub(1) as u64,
        });
        Ok(contributions)
    }

    fn post(&self, stage: &str, from: Rank, to: Rank, payload: Vec<u8>) -> Result<(), FabricError> {
        self.check_rank(from)?;
        self.check_rank(to)?;
        if from == to {
            return Err(FabricError::SelfSend(from));
        }
        let mut inner = self.inner.lock().unwrap();
        inner.channels.entry((from, to)).or_default().push_back((stage.to_string(), payload));
        Ok(())
    }

    fn deliver(&self, stage: &str) -> Result<Vec<Inbox>, FabricError> {
        let mut inner = self.inner.lock().unwrap();
        let mut inboxes: Vec<Inbox> = vec![Vec::new(); self.size];
        let mut record = StageTraffic { stage: stage.to_string(), ..Default::default() };
        let mut deliveries = Vec::new();
        for (&(from, to), queue) in inner.channels.iter_mut() {
            if let Some((s, _)) = queue.iter().find(|(s, _)| s != stage) {
                return Err(FabricError::StageMismatch { expected: stage.to_string(), found: s.clone() });
            }
            for (_, payload) in queue.drain(..) {
                record.messages += 1;
                record.bytes_sent += payload.len() as u64;
                record.bytes_received += payload.len() as u64;
                deliveries.push(Delivery { stage: stage.to_string(), from, to, bytes: payload.len() });
                inboxes[to].push((from, payload));
            }
        }
        inner.channels.retain(|_, q| !q.is_empty());
        inner.traffic.push(record);
        inner.history.extend(deliveries);
        Ok(inboxes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exscan_examples() {
        assert_eq!(SimFabric::new(2).exscan_sum(&[29, 28]).unwrap(), vec![0, 29]);
        assert_eq!(SimFabric::new(1).exscan_sum(&[5]).unwrap(), vec![0]);
        assert_eq!(SimFabric::new(4).exscan_sum(&[3, 0, 7, 2]).unwrap(), vec![0, 3, 3, 10]);
    }

    #[test]
    fn exscan_participation_mismatch() {
        let f = SimFabric::new(3);
        assert_eq!(f.exscan_sum(&[1, 2]), Err(FabricError::ParticipationMismatch { expected: 3, got: 2 }));
    }

    #[test]
    fn empty_payload_exchange() {
        let f = SimFabric::new(2);
        let out = vec![BTreeMap::from([(1, vec![])]), BTreeMap::from([(0, vec![])])];
        let got = f.neighbor_exchange("s", out).unwrap();
        assert_eq!(got[0], BTreeMap::from([(1, vec![])]));
        assert_eq!(got[1], BTreeMap::from([(0, vec![])]));
    }

    #[test]
    fn ring_exchange() {
        let f = SimFabric::new(4);
        let out: Vec<BTreeMap<Rank, Vec<u8>>> =
            (0..4).map(|p| BTreeMap::from([((p + 1) % 4, vec![p as u8]), ((p + 3) % 4, vec![p as u8])])).collect();
        let got = f.neighbor_exchange("ring", out).unwrap();
        for (p, inbox) in got.iter().enumerate() {
            let expect =
                BTreeMap::from([((p + 1) % 4, vec![((p + 1) % 4) as u8]), ((p + 3) % 4, vec![((p + 3) % 4) as u8])]);
            assert_eq!(inbox, &expect);
        }
        let t = f.traffic();
        assert_eq!(t[0].bytes_sent, t[0].bytes_received);
        assert_eq!(t[0].messages, 8);
    }

    #[test]
    fn asymmetric_exchange_rejected() {
        let f = SimFabric::new(3);
        let out = vec![BTreeMap::from([(1, vec![1])]), BTreeMap::new(), BTreeMap::new()];
        assert!(matches!(f.neighbor_exchange("x", out), Err(FabricError::UnmatchedExchange { from: 0, to: 1, .. })));
    }

    #[test]
    fn stage_boundary_enforced() {
        let f = SimFabric::new(2);
        f.post("a", 0, 1, vec![1]).unwrap();
        assert!(matches!(f.deliver("b"), Err(FabricError::StageMismatch { .. })));
        let inbox = f.deliver("a").unwrap();
        assert_eq!(inbox[1], vec![(0, vec![1])]);
        assert!(f.deliver("a").unwrap().iter().all(Vec::is_empty));
    }

    #[test]
    fn fifo_per_channel_and_concurrent_posting() {
        let f = SimFabric::new(4);
        std::thread::scope(|s| {
            for p in 1..4 {
                let f = &f;
                s.spawn(move || {
                    for i in 0..50u8 {
                        f.post("c", p, 0, vec![p as u8, i]).unwrap();
                    }
                });
            }
        });
        let inbox = f.deliver("c").unwrap();
        assert_eq!(inbox[0].len(), 150);
        for p in 1..4 {
            let seq: Vec<u8> = inbox[0].iter().filter(|(s, _)| *s == p).map(|(_, m)| m[1]).collect();
            assert_eq!(seq, (0..50).collect::<Vec<u8>>());
        }
        // Senders delivered in rank order regardless of thread scheduling.
        let senders: Vec<Rank> = inbox[0].iter().map(|(s, _)| *s).collect();
        let mut sorted = senders.clone();
        sorted.sort();
        assert_eq!(senders, sorted);
    }
}
