//! The detection agency's off-chain engine.
//!
//! [`LocalIndex`] mirrors the on-chain registry by replaying the contract's
//! `registered` / `status_changed` messages; [`detect`] classifies a medium
//! against it: exact digest match first, then the nearest fingerprint within
//! θ (ties to the smallest serial), otherwise legitimate.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::content_store::AddressHash;
use crate::escrow_contract::{RecordStatus, RegistryEntry, ResultRecord, Serial, Verdict};
use crate::fingerprint::{
    hamming_distance, FingerprintError, HammingDistance, HashId, MediaFingerprint, SimHashParams, SimHashValue,
    Threshold,
};
use crate::ledger::{ChainViolation, Ledger, Payload};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("ledger failed validation: {0}")]
    CorruptChain(ChainViolation),
    #[error("registry message for unknown serial {0}")]
    UnknownSerial(Serial),
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    #[default]
    Linear,
    /// Four 16-bit bit-slice tables; probes every slice value within
    /// `θ / 4` bits, which by pigeonhole covers every match within θ.
    MultiIndex,
}

/// Slices above this probe radius fall back to the linear scan.
const MAX_PROBE_RADIUS: u32 = 4;

#[derive(Clone, Debug, Default)]
struct MultiIndex {
    tables: [HashMap<u16, Vec<usize>>; 4],
}

impl MultiIndex {
    fn build(items: &[(SimHashValue, Serial)]) -> Self {
        let mut index = Self::default();
        for (pos, (lshv, _)) in items.iter().enumerate() {
            for (t, table) in index.tables.iter_mut().enumerate() {
                table.entry(slice(*lshv, t)).or_default().push(pos);
            }
        }
        index
    }

    fn candidates(&self, query: SimHashValue, radius: u32, out: &mut Vec<usize>) {
        for (t, table) in self.tables.iter().enumerate() {
            let key = slice(query, t);
            probe(key, radius, 0, &mut |k| {
                if let Some(hits) = table.get(&k) {
                    out.extend_from_slice(hits);
                }
            });
        }
        out.sort_unstable();
        out.dedup();
    }
}

fn slice(v: SimHashValue, t: usize) -> u16 {
    (v.0 >> (16 * t)) as u16
}

/// Calls `f` on every 16-bit value within `radius` flips of `key`, flipping
/// only bits at or above `from` so each value is visited once.
fn probe(key: u16, radius: u32, from: u32, f: &mut dyn FnMut(u16)) {
    f(key);
    if radius == 0 {
        return;
    }
    for bit in from..16 {
        probe(key ^ (1 << bit), radius - 1, bit + 1, f);
    }
}

#[derive(Clone, Debug)]
pub struct LocalIndex {
    contract: String,
    mode: SearchMode,
    entries: BTreeMap<Serial, RegistryEntry>,
    exact: HashMap<HashId, Serial>,
    /// Live (non-revoked) fingerprints in serial order.
    near: Vec<(SimHashValue, Serial)>,
    multi: Option<MultiIndex>,
    synced_height: u64,
}

impl LocalIndex {
    /// An empty index that trusts registry messages sent by `contract`.
    pub fn new(contract: impl Into<String>, mode: SearchMode) -> Self {
        Self {
            contract: contract.into(),
            mode,
            entries: BTreeMap::new(),
            exact: HashMap::new(),
            near: Vec::new(),
            multi: None,
            synced_height: 0,
        }
    }

    /// Fresh index built from every block.
    pub fn rebuild(ledger: &Ledger, contract: impl Into<String>, mode: SearchMode) -> Result<Self, DetectorError> {
        let mut index = Self::new(contract, mode);
        index.sync(ledger)?;
        Ok(index)
    }

    pub fn synced_height(&self) -> u64 {
        self.synced_height
    }

    pub fn len(&self) -> usize {
        self.near.len()
    }

    pub fn is_empty(&self) -> bool {
        self.near.is_empty()
    }

    /// Registry as this index sees it, in serial order (revoked included).
    pub fn entries(&self) -> impl Iterator<Item = &RegistryEntry> {
        self.entries.values()
    }

    pub fn next_serial(&self) -> Serial {
        Serial(self.entries.keys().next_back().map_or(0, |s| s.0) + 1)
    }

    pub fn lookup_exact(&self, hash_id: &HashId) -> Option<Serial> {
        self.exact.get(hash_id).copied()
    }

    /// Applies registry messages from blocks above `synced_height`. The chain
    /// is validated first; returns how many registry messages were applied.
    pub fn sync(&mut self, ledger: &Ledger) -> Result<usize, DetectorError> {
        ledger.validate().map_err(DetectorError::CorruptChain)?;
        let mut applied = 0;
        let mut dirty = false;
        for block in &ledger.blocks()[(self.synced_height as usize + 1).min(ledger.blocks().len())..] {
            for tx in block.transactions.iter().filter(|tx| tx.sender == self.contract) {
                match &tx.payload {
                    Payload::Registered { record, status } => {
                        self.entries.insert(
                            record.serial,
                            RegistryEntry {
                                record: record.clone(),
                                status: *status,
                            },
                        );
                        if *status != RecordStatus::Revoked {
                            self.exact.insert(record.hash_id, record.serial);
                            self.near.push((record.lshv, record.serial));
                        }
                        applied += 1;
                        dirty = true;
                    }
                    Payload::StatusChanged { serial, status } => {
                        let entry = self
                            .entries
                            .get_mut(serial)
                            .ok_or(DetectorError::UnknownSerial(*serial))?;
                        entry.status = *status;
                        if *status == RecordStatus::Revoked {
                            self.exact.remove(&entry.record.hash_id);
                            self.near.retain(|(_, s)| s != serial);
                        }
                        applied += 1;
                        dirty = true;
                    }
                    _ => {}
                }
            }
            self.synced_height = block.height;
        }
        if dirty {
            // serials arrive in order, so `near` stays sorted
            debug_assert!(self.near.windows(2).all(|w| w[0].1 < w[1].1));
            self.multi = match self.mode {
                SearchMode::Linear => None,
                SearchMode::MultiIndex => Some(MultiIndex::build(&self.near)),
            };
        }
        Ok(applied)
    }

    /// Adds a record directly, bypassing the ledger. For benchmarks and
    /// tests that need large registries without building a chain.
    pub fn insert(&mut self, serial: Serial, hash_id: HashId, lshv: SimHashValue) {
        assert!(
            self.entries.keys().next_back().is_none_or(|&s| s < serial),
            "serials must increase"
        );
        self.entries.insert(
            serial,
            RegistryEntry {
                record: crate::escrow_contract::LegalMediaRecord {
                    serial,
                    hash_id,
                    lshv,
                    qm: HashId::default(),
                },
                status: RecordStatus::Confirmed,
            },
        );
        self.exact.insert(hash_id, serial);
        self.near.push((lshv, serial));
        self.multi = None;
    }

    /// Rebuilds the bit-slice tables after direct inserts.
    pub fn finish(&mut self) {
        if self.mode == SearchMode::MultiIndex {
            self.multi = Some(MultiIndex::build(&self.near));
        }
    }

    /// Closest live fingerprint within θ: minimal distance, then minimal serial.
    pub fn nearest_within(&self, query: SimHashValue, theta: Threshold) -> Option<(Serial, HammingDistance)> {
        let radius = theta.value() / 4;
        match &self.multi {
            Some(multi) if radius <= MAX_PROBE_RADIUS => {
                let mut cand = Vec::new();
                multi.candidates(query, radius, &mut cand);
                best_of(cand.into_iter().map(|i| self.near[i]), query, theta)
            }
            _ => best_of(self.near.iter().copied(), query, theta),
        }
    }

    /// Evidence that `fp` copies a live record registered before `before`:
    /// an exact digest match if there is one, else the nearest within θ.
    /// Used by verifiers checking a posted Legitimate result.
    pub fn prior_match(&self, fp: &MediaFingerprint, before: Serial, theta: Threshold) -> Option<Serial> {
        let live = self
            .entries
            .values()
            .filter(|e| e.record.serial < before && e.status != RecordStatus::Revoked);
        if let Some(e) = live.clone().find(|e| e.record.hash_id == fp.hash_id) {
            return Some(e.record.serial);
        }
        best_of(live.map(|e| (e.record.lshv, e.record.serial)), fp.lshv, theta).map(|(s, _)| s)
    }

    /// Comparable snapshot of the mirrored registry.
    pub fn snapshot(&self) -> Vec<RegistryEntry> {
        self.entries.values().cloned().collect()
    }
}

fn best_of(
    items: impl Iterator<Item = (SimHashValue, Serial)>,
    query: SimHashValue,
    theta: Threshold,
) -> Option<(Serial, HammingDistance)> {
    let mut best: Option<(HammingDistance, Serial)> = None;
    for (lshv, serial) in items {
        let d = hamming_distance(query, lshv);
        if theta.admits(d) && best.is_none_or(|b| (d, serial) < b) {
            best = Some((d, serial));
        }
    }
    best.map(|(d, s)| (s, d))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VerdictKind {
    CompletePiracy { serial: Serial },
    PartialPiracy { serial: Serial, distance: HammingDistance },
    Legitimate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    pub kind: VerdictKind,
    pub fingerprint: MediaFingerprint,
}

pub fn classify(fingerprint: MediaFingerprint, index: &LocalIndex, theta: Threshold) -> DetectionVerdict {
    let kind = if let Some(serial) = index.lookup_exact(&fingerprint.hash_id) {
        VerdictKind::CompletePiracy { serial }
    } else if let Some((serial, distance)) = index.nearest_within(fingerprint.lshv, theta) {
        VerdictKind::PartialPiracy { serial, distance }
    } else {
        VerdictKind::Legitimate
    };
    DetectionVerdict { kind, fingerprint }
}

pub fn detect(
    media: &[u8],
    index: &LocalIndex,
    params: &SimHashParams,
    theta: Threshold,
) -> Result<DetectionVerdict, FingerprintError> {
    Ok(classify(MediaFingerprint::of(media, params)?, index, theta))
}

pub fn build_result_record(verdict: &DetectionVerdict, qm: AddressHash, next_serial: Serial) -> ResultRecord {
    let fp = verdict.fingerprint;
    match verdict.kind {
        VerdictKind::CompletePiracy { serial } => ResultRecord {
            verdict: Verdict::CompletePiracy,
            serial,
            hash_id: Some(fp.hash_id),
            lshv: None,
            qm,
        },
        VerdictKind::PartialPiracy { serial, .. } => ResultRecord {
            verdict: Verdict::PartialPiracy,
            serial,
            hash_id: None,
            lshv: Some(fp.lshv),
            qm,
        },
        VerdictKind::Legitimate => ResultRecord {
            verdict: Verdict::Legitimate,
            serial: next_serial,
            hash_id: Some(fp.hash_id),
            lshv: Some(fp.lshv),
            qm,
        },
    }
}
