//! Append-only chain of signed protocol messages.
//!
//! A single deterministic sequencer stands in for consensus: transactions are
//! validated on submission, queued in FIFO order and sealed into one block per
//! logical tick. Blocks are hash-linked, and the genesis block's `prev_hash`
//! commits to the certificate authority, so [`validate_chain`] needs nothing
//! but the [`AuthorityRecord`] to check a whole exported chain.
//!
//! Senders must enroll (post their CA-issued certificate) before anything else
//! they sign is accepted.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::content_store::AddressHash;
use crate::crypto::{verify_sig, AuthorityRecord, Certificate, KeyPair, PublicKey, Signature};
use crate::escrow_contract::{
    ChallengeEvidence, LegalMediaRecord, RecordStatus, ResultRecord, Serial, TaskId, TaskState, Transfer,
};
use crate::fingerprint::{compute_hash_id, HashId, SimHashValue, Threshold};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub identity: String,
    pub amount: u64,
}

/// Every message the protocol puts on chain.
///
/// The first group is signed by participants; the second is emitted by the
/// escrow contract as the record of what executing the first group did.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    Enroll {
        certificate: Certificate,
    },
    Deploy {
        contract: String,
        operator: String,
        theta: Threshold,
        timeout_ticks: u64,
        allocations: Vec<Allocation>,
    },
    RegisterMedia {
        hash_id: HashId,
        lshv: SimHashValue,
        qm: AddressHash,
    },
    DetectionRequest {
        qm: AddressHash,
        fee: u64,
    },
    PostResult {
        task: TaskId,
        record: ResultRecord,
        deposit: u64,
    },
    Challenge {
        task: TaskId,
        evidence: ChallengeEvidence,
    },

    Registered {
        record: LegalMediaRecord,
        status: RecordStatus,
    },
    StatusChanged {
        serial: Serial,
        status: RecordStatus,
    },
    TaskOpened {
        task: TaskId,
        requester: String,
        qm: AddressHash,
        fee: u64,
        deadline: u64,
    },
    ResultAccepted {
        task: TaskId,
        deadline: u64,
    },
    ChallengeResolved {
        task: TaskId,
        challenger: String,
        upheld: bool,
    },
    Settlement {
        task: TaskId,
        state: TaskState,
        transfers: Vec<Transfer>,
    },
    Rejected {
        height: u64,
        index: u32,
        reason: String,
    },
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Enroll { .. } => "enroll",
            Payload::Deploy { .. } => "deploy",
            Payload::RegisterMedia { .. } => "register_media",
            Payload::DetectionRequest { .. } => "detection_request",
            Payload::PostResult { .. } => "post_result",
            Payload::Challenge { .. } => "challenge",
            Payload::Registered { .. } => "registered",
            Payload::StatusChanged { .. } => "status_changed",
            Payload::TaskOpened { .. } => "task_opened",
            Payload::ResultAccepted { .. } => "result_accepted",
            Payload::ChallengeResolved { .. } => "challenge_resolved",
            Payload::Settlement { .. } => "settlement",
            Payload::Rejected { .. } => "rejected",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub sender: String,
    pub nonce: u64,
    pub payload: Payload,
    pub signature: Signature,
}

#[derive(Serialize)]
struct SignedView<'a> {
    sender: &'a str,
    nonce: u64,
    payload: &'a Payload,
}

impl Transaction {
    pub fn signing_bytes(sender: &str, nonce: u64, payload: &Payload) -> Vec<u8> {
        serde_json::to_vec(&SignedView { sender, nonce, payload }).expect("payload serializes")
    }

    pub fn new_signed(keys: &KeyPair, sender: impl Into<String>, nonce: u64, payload: Payload) -> Self {
        let sender = sender.into();
        let signature = keys.sign(&Self::signing_bytes(&sender, nonce, &payload));
        Self {
            sender,
            nonce,
            payload,
            signature,
        }
    }

    pub fn verify(&self, key: &PublicKey) -> bool {
        verify_sig(
            key,
            &Self::signing_bytes(&self.sender, self.nonce, &self.payload),
            &self.signature,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Receipt {
    pub height: u64,
    pub index: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub prev_hash: HashId,
    pub timestamp: u64,
    pub transactions: Vec<Transaction>,
    pub block_hash: HashId,
}

#[derive(Serialize)]
struct BlockHeaderView<'a> {
    height: u64,
    prev_hash: &'a HashId,
    timestamp: u64,
    transactions: &'a [Transaction],
}

impl Block {
    pub fn compute_hash(height: u64, prev_hash: &HashId, timestamp: u64, transactions: &[Transaction]) -> HashId {
        let bytes = serde_json::to_vec(&BlockHeaderView {
            height,
            prev_hash,
            timestamp,
            transactions,
        })
        .expect("block serializes");
        compute_hash_id(&bytes)
    }

    fn seal(height: u64, prev_hash: HashId, timestamp: u64, transactions: Vec<Transaction>) -> Self {
        let block_hash = Self::compute_hash(height, &prev_hash, timestamp, &transactions);
        Self {
            height,
            prev_hash,
            timestamp,
            transactions,
            block_hash,
        }
    }

    pub fn genesis(authority: &AuthorityRecord) -> Self {
        Self::seal(0, anchor_hash(authority), 0, Vec::new())
    }
}

/// Digest the genesis block links to.
pub fn anchor_hash(authority: &AuthorityRecord) -> HashId {
    compute_hash_id(&serde_json::to_vec(authority).expect("authority serializes"))
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("signature of {sender} does not verify")]
    BadSignature { sender: String },
    #[error("nonce {nonce} from {sender} does not exceed last nonce {last}")]
    NonceReplay { sender: String, nonce: u64, last: u64 },
    #[error("{0} has not enrolled")]
    UnknownSender(String),
    #[error("enrollment rejected: {0}")]
    BadEnrollment(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViolationKind {
    GenesisAnchor,
    HeightGap { expected: u64, found: u64 },
    BrokenLink,
    HashMismatch,
    Transaction { index: u32, reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainViolation {
    pub height: u64,
    #[serde(flatten)]
    pub kind: ViolationKind,
}

impl fmt::Display for ChainViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ViolationKind::GenesisAnchor => {
                write!(f, "block {}: genesis does not commit to the authority", self.height)
            }
            ViolationKind::HeightGap { expected, found } => {
                write!(
                    f,
                    "block at position {}: height {found}, expected {expected}",
                    self.height
                )
            }
            ViolationKind::BrokenLink => write!(
                f,
                "block {}: prev_hash does not match block {}",
                self.height,
                self.height.wrapping_sub(1)
            ),
            ViolationKind::HashMismatch => {
                write!(f, "block {}: stored block_hash does not match contents", self.height)
            }
            ViolationKind::Transaction { index, reason } => write!(f, "block {} tx {index}: {reason}", self.height),
        }
    }
}

/// Signature and nonce bookkeeping shared by live submission and replay.
#[derive(Clone, Debug, Default)]
struct Registry {
    keys: HashMap<String, PublicKey>,
    nonces: HashMap<String, u64>,
}

impl Registry {
    fn admit(&mut self, tx: &Transaction, authority: &AuthorityRecord) -> Result<(), LedgerError> {
        let key = match &tx.payload {
            Payload::Enroll { certificate } => {
                if certificate.identity != tx.sender {
                    return Err(LedgerError::BadEnrollment(
                        "certificate subject differs from sender".into(),
                    ));
                }
                if !certificate.verify(authority) {
                    return Err(LedgerError::BadEnrollment(
                        "certificate does not verify under the CA".into(),
                    ));
                }
                if self.keys.contains_key(&tx.sender) {
                    return Err(LedgerError::BadEnrollment(format!("{} already enrolled", tx.sender)));
                }
                certificate.public_key
            }
            _ => *self
                .keys
                .get(&tx.sender)
                .ok_or_else(|| LedgerError::UnknownSender(tx.sender.clone()))?,
        };
        if !tx.verify(&key) {
            return Err(LedgerError::BadSignature {
                sender: tx.sender.clone(),
            });
        }
        if let Some(&last) = self.nonces.get(&tx.sender) {
            if tx.nonce <= last {
                return Err(LedgerError::NonceReplay {
                    sender: tx.sender.clone(),
                    nonce: tx.nonce,
                    last,
                });
            }
        }
        self.keys.insert(tx.sender.clone(), key);
        self.nonces.insert(tx.sender.clone(), tx.nonce);
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Ledger {
    authority: AuthorityRecord,
    blocks: Vec<Block>,
    pending: Vec<Transaction>,
    registry: Registry,
}

impl Ledger {
    pub fn new(authority: AuthorityRecord) -> Self {
        let genesis = Block::genesis(&authority);
        Self {
            authority,
            blocks: vec![genesis],
            pending: Vec::new(),
            registry: Registry::default(),
        }
    }

    /// Rebuilds a ledger from exported blocks, rejecting any chain that does
    /// not validate.
    pub fn from_blocks(authority: AuthorityRecord, blocks: Vec<Block>) -> Result<Self, ChainViolation> {
        let registry = check_blocks(&blocks, &authority)?;
        Ok(Self {
            authority,
            blocks,
            pending: Vec::new(),
            registry,
        })
    }

    pub fn authority(&self) -> &AuthorityRecord {
        &self.authority
    }

    pub fn submit_transaction(&mut self, tx: Transaction) -> Result<Receipt, LedgerError> {
        self.registry.admit(&tx, &self.authority)?;
        let receipt = Receipt {
            height: self.head().height + 1,
            index: self.pending.len() as u32,
        };
        self.pending.push(tx);
        Ok(receipt)
    }

    pub fn seal_block(&mut self, now: u64) -> &Block {
        let head = self.head();
        let block = Block::seal(head.height + 1, head.block_hash, now, std::mem::take(&mut self.pending));
        self.blocks.push(block);
        self.head()
    }

    pub fn head(&self) -> &Block {
        self.blocks.last().expect("genesis always present")
    }

    pub fn height(&self) -> u64 {
        self.head().height
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn pending(&self) -> &[Transaction] {
        &self.pending
    }

    pub fn public_key(&self, identity: &str) -> Option<&PublicKey> {
        self.registry.keys.get(identity)
    }

    pub fn last_nonce(&self, identity: &str) -> Option<u64> {
        self.registry.nonces.get(identity).copied()
    }

    pub fn validate(&self) -> Result<(), ChainViolation> {
        validate_chain(&self.blocks, &self.authority)
    }

    /// Sealed transactions matching `predicate`, in chain order.
    pub fn trace<F>(&self, mut predicate: F) -> Vec<(Receipt, &Transaction)>
    where
        F: FnMut(&Payload) -> bool,
    {
        self.blocks
            .iter()
            .flat_map(|b| {
                b.transactions.iter().enumerate().map(move |(i, tx)| {
                    (
                        Receipt {
                            height: b.height,
                            index: i as u32,
                        },
                        tx,
                    )
                })
            })
            .filter(|(_, tx)| predicate(&tx.payload))
            .collect()
    }

    pub fn export_jsonl<W: Write>(&self, out: W) -> io::Result<()> {
        export_jsonl(&self.blocks, out)
    }
}

fn check_blocks(blocks: &[Block], authority: &AuthorityRecord) -> Result<Registry, ChainViolation> {
    let mut registry = Registry::default();
    let Some(genesis) = blocks.first() else {
        return Err(ChainViolation {
            height: 0,
            kind: ViolationKind::GenesisAnchor,
        });
    };
    if genesis.height != 0 || genesis.prev_hash != anchor_hash(authority) || !genesis.transactions.is_empty() {
        return Err(ChainViolation {
            height: genesis.height,
            kind: ViolationKind::GenesisAnchor,
        });
    }
    let mut prev: Option<&Block> = None;
    for (position, block) in blocks.iter().enumerate() {
        let expected = position as u64;
        if block.height != expected {
            return Err(ChainViolation {
                height: expected,
                kind: ViolationKind::HeightGap {
                    expected,
                    found: block.height,
                },
            });
        }
        if let Some(p) = prev {
            if block.prev_hash != p.block_hash {
                return Err(ChainViolation {
                    height: block.height,
                    kind: ViolationKind::BrokenLink,
                });
            }
        }
        if Block::compute_hash(block.height, &block.prev_hash, block.timestamp, &block.transactions) != block.block_hash
        {
            return Err(ChainViolation {
                height: block.height,
                kind: ViolationKind::HashMismatch,
            });
        }
        for (i, tx) in block.transactions.iter().enumerate() {
            registry.admit(tx, authority).map_err(|e| ChainViolation {
                height: block.height,
                kind: ViolationKind::Transaction {
                    index: i as u32,
                    reason: e.to_string(),
                },
            })?;
        }
        prev = Some(block);
    }
    Ok(registry)
}

/// Checks genesis anchoring, heights, hash links, block hashes and every
/// transaction signature and nonce; reports the first violation.
pub fn validate_chain(blocks: &[Block], authority: &AuthorityRecord) -> Result<(), ChainViolation> {
    check_blocks(blocks, authority).map(|_| ())
}

pub fn export_jsonl<W: Write>(blocks: &[Block], mut out: W) -> io::Result<()> {
    for block in blocks {
        serde_json::to_writer(&mut out, block)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum ImportError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: block is not in canonical form")]
    NonCanonical { line: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reads a JSON-lines chain. Every line must re-serialize to exactly the
/// bytes it was read from, so encodings that parse to the same value but
/// differ on disk are rejected rather than silently normalized.
pub fn import_jsonl<R: BufRead>(input: R) -> Result<Vec<Block>, ImportError> {
    let mut blocks = Vec::new();
    for (i, line) in input.split(b'\n').enumerate() {
        let line = line?;
        let number = i + 1;
        let block: Block = serde_json::from_slice(&line).map_err(|e| ImportError::Parse {
            line: number,
            message: e.to_string(),
        })?;
        if serde_json::to_vec(&block).expect("block serializes") != line {
            return Err(ImportError::NonCanonical { line: number });
        }
        blocks.push(block);
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::CertificateAuthority;

    struct Fixture {
        ca: CertificateAuthority,
        ledger: Ledger,
        mp: KeyPair,
    }

    fn fixture() -> Fixture {
        let ca = CertificateAuthority::new("ca", KeyPair::from_seed(1));
        let mut ledger = Ledger::new(ca.record());
        let mp = KeyPair::from_seed(2);
        let cert = ca.issue("mp", mp.public_key());
        ledger
            .submit_transaction(Transaction::new_signed(
                &mp,
                "mp",
                0,
                Payload::Enroll { certificate: cert },
            ))
            .unwrap();
        ledger.seal_block(1);
        Fixture { ca, ledger, mp }
    }

    fn request(keys: &KeyPair, nonce: u64, fee: u64) -> Transaction {
        Transaction::new_signed(
            keys,
            "mp",
            nonce,
            Payload::DetectionRequest {
                qm: compute_hash_id(b"q"),
                fee,
            },
        )
    }

    #[test]
    fn receipts_point_at_next_block() {
        let mut f = fixture();
        let r = f.ledger.submit_transaction(request(&f.mp, 1, 10)).unwrap();
        assert_eq!(r, Receipt { height: 2, index: 0 });
        let r = f.ledger.submit_transaction(request(&f.mp, 2, 11)).unwrap();
        assert_eq!(r, Receipt { height: 2, index: 1 });
        let block = f.ledger.seal_block(2).clone();
        assert_eq!(block.height, 2);
        assert_eq!(block.transactions.len(), 2);
    }

    #[test]
    fn nonce_replay_and_bad_signature() {
        let mut f = fixture();
        f.ledger.submit_transaction(request(&f.mp, 5, 10)).unwrap();
        assert!(matches!(
            f.ledger.submit_transaction(request(&f.mp, 5, 10)),
            Err(LedgerError::NonceReplay { nonce: 5, last: 5, .. })
        ));
        let mut tx = request(&f.mp, 6, 10);
        tx.payload = Payload::DetectionRequest {
            qm: compute_hash_id(b"q"),
            fee: 1000,
        };
        assert!(matches!(
            f.ledger.submit_transaction(tx),
            Err(LedgerError::BadSignature { .. })
        ));
        let stranger = KeyPair::from_seed(9);
        let tx = Transaction::new_signed(
            &stranger,
            "nobody",
            1,
            Payload::DetectionRequest {
                qm: HashId::default(),
                fee: 1,
            },
        );
        assert_eq!(
            f.ledger.submit_transaction(tx),
            Err(LedgerError::UnknownSender("nobody".into()))
        );
    }

    #[test]
    fn enrollment_requires_ca_certificate() {
        let mut f = fixture();
        let keys = KeyPair::from_seed(3);
        let rogue = CertificateAuthority::new("ca", KeyPair::from_seed(4)).issue("da", keys.public_key());
        let tx = Transaction::new_signed(&keys, "da", 0, Payload::Enroll { certificate: rogue });
        assert!(matches!(
            f.ledger.submit_transaction(tx),
            Err(LedgerError::BadEnrollment(_))
        ));
        let cert = f.ca.issue("da", keys.public_key());
        let tx = Transaction::new_signed(&keys, "someone-else", 0, Payload::Enroll { certificate: cert });
        assert!(matches!(
            f.ledger.submit_transaction(tx),
            Err(LedgerError::BadEnrollment(_))
        ));
    }

    #[test]
    fn empty_blocks_and_fifo() {
        let mut f = fixture();
        let h = f.ledger.height();
        f.ledger.seal_block(5);
        f.ledger.seal_block(6);
        assert_eq!(f.ledger.height(), h + 2);
        for (nonce, fee) in [3, 1, 2].into_iter().enumerate() {
            f.ledger
                .submit_transaction(request(&f.mp, 10 + nonce as u64, fee))
                .unwrap();
        }
        let fees: Vec<u64> = f
            .ledger
            .seal_block(7)
            .transactions
            .iter()
            .map(|tx| match tx.payload {
                Payload::DetectionRequest { fee, .. } => fee,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(fees, vec![3, 1, 2]);
        assert!(f.ledger.validate().is_ok());
    }

    #[test]
    fn block_hash_matches_independent_encoding() {
        let mut f = fixture();
        f.ledger.submit_transaction(request(&f.mp, 1, 10)).unwrap();
        let block = f.ledger.seal_block(3).clone();
        let manual = format!(
            "{{\"height\":{},\"prev_hash\":\"{}\",\"timestamp\":{},\"transactions\":{}}}",
            block.height,
            block.prev_hash.to_hex(),
            block.timestamp,
            serde_json::to_string(&block.transactions).unwrap()
        );
        assert_eq!(compute_hash_id(manual.as_bytes()), block.block_hash);
    }

    #[test]
    fn tampering_is_located() {
        let mut f = fixture();
        for n in 1..=3 {
            f.ledger.submit_transaction(request(&f.mp, n, n)).unwrap();
            f.ledger.seal_block(n + 1);
        }
        let auth = f.ca.record();
        let mut blocks = f.ledger.blocks().to_vec();
        assert!(validate_chain(&blocks, &auth).is_ok());

        // payload edit inside block 2
        if let Payload::DetectionRequest { fee, .. } = &mut blocks[2].transactions[0].payload {
            *fee = 99;
        }
        let v = validate_chain(&blocks, &auth).unwrap_err();
        assert_eq!((v.height, v.kind), (2, ViolationKind::HashMismatch));

        // rewrite block 2 consistently (re-signed, re-hashed) but leave block 3
        let mut blocks = f.ledger.blocks().to_vec();
        let forged = request(&f.mp, 2, 99);
        blocks[2] = Block::seal(2, blocks[1].block_hash, blocks[2].timestamp, vec![forged]);
        let v = validate_chain(&blocks, &auth).unwrap_err();
        assert_eq!((v.height, v.kind), (3, ViolationKind::BrokenLink));

        let other = CertificateAuthority::new("ca", KeyPair::from_seed(50)).record();
        assert_eq!(
            validate_chain(f.ledger.blocks(), &other).unwrap_err().kind,
            ViolationKind::GenesisAnchor
        );
    }

    #[test]
    fn trace_filters_in_order() {
        let mut f = fixture();
        assert_eq!(
            f.ledger.trace(|p| matches!(p, Payload::DetectionRequest { .. })).len(),
            0
        );
        f.ledger.submit_transaction(request(&f.mp, 1, 10)).unwrap();
        // pending transactions are not visible
        assert!(f
            .ledger
            .trace(|p| matches!(p, Payload::DetectionRequest { .. }))
            .is_empty());
        f.ledger.seal_block(2);
        let hits = f.ledger.trace(|p| matches!(p, Payload::DetectionRequest { .. }));
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0, Receipt { height: 2, index: 0 });
        assert_eq!(f.ledger.trace(|p| p.kind() == "enroll").len(), 1);
    }

    #[test]
    fn genesis_only_chain_round_trips() {
        let ca = CertificateAuthority::new("ca", KeyPair::from_seed(1));
        let ledger = Ledger::new(ca.record());
        let mut buf = Vec::new();
        ledger.export_jsonl(&mut buf).unwrap();
        let blocks = import_jsonl(buf.as_slice()).unwrap();
        assert_eq!(blocks.len(), 1);
        assert!(blocks[0].transactions.is_empty());
        assert!(validate_chain(&blocks, &ca.record()).is_ok());
    }

    #[test]
    fn import_requires_canonical_lines() {
        let f = fixture();
        let mut buf = Vec::new();
        f.ledger.export_jsonl(&mut buf).unwrap();
        let blocks = import_jsonl(buf.as_slice()).unwrap();
        assert_eq!(blocks, f.ledger.blocks());
        let text = String::from_utf8(buf)
            .unwrap()
            .replacen("{\"height\"", "{ \"height\"", 1);
        assert!(matches!(
            import_jsonl(text.as_bytes()),
            Err(ImportError::NonCanonical { line: 1 })
        ));
        let rebuilt = Ledger::from_blocks(f.ca.record(), blocks).unwrap();
        assert!(rebuilt.public_key("mp").is_some());
        assert_eq!(rebuilt.last_nonce("mp"), Some(0));
    }
}
