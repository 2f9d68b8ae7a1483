//! Actor harness: CA, ledger, escrow contract, content store, one detection
//! agency and any number of media providers, driven by a logical clock.
//!
//! Every protocol message is a signed ledger transaction. The contract runs
//! the participant messages of each sealed block (with the block timestamp
//! as `now`), then settles due tasks; its effect messages are signed by the
//! contract identity and land in the following block. [`replay`] re-derives
//! contract state from a chain and checks those effect messages match.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::content_store::{AddressHash, ContentStore, StoreError};
use crate::crypto::{
    hybrid_decrypt, hybrid_encrypt, mutual_authenticate, AuthorityRecord, CertificateAuthority, CryptoError,
    HybridCiphertext, KeyPair, SecretKey,
};
use crate::detector::{
    build_result_record, detect, DetectionVerdict, DetectorError, LocalIndex, SearchMode, VerdictKind,
};
use crate::escrow_contract::{
    ChallengeEvidence, ContractConfig, EscrowContract, RecordStatus, ResultRecord, Serial, TaskId, TaskState, Verdict,
    DEFAULT_TIMEOUT_TICKS,
};
use crate::fingerprint::{FingerprintError, MediaFingerprint, SimHashParams, Threshold};
use crate::ledger::{import_jsonl, Allocation, Block, ImportError, Ledger, LedgerError, Payload, Receipt, Transaction};

pub const CA_IDENTITY: &str = "ca";
pub const CONTRACT_IDENTITY: &str = "escrow";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown identity {0}")]
    UnknownIdentity(String),
    #[error("contract rejected the message: {0}")]
    Rejected(String),
    #[error("replay diverged at block {height}: {message}")]
    Replay { height: u64, message: String },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Import(#[from] ImportError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Mp,
    Da,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Behavior {
    #[default]
    Honest,
    /// DA: claims every medium partially pirates `target`.
    MisreportPiracy { target: Serial },
    /// DA: reports pirated media as legitimate.
    MisreportLegitimate,
    /// MP: never checks posted results.
    NegligentVerifier,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorSpec {
    pub identity: String,
    pub role: Role,
    #[serde(default)]
    pub behavior: Behavior,
    pub initial_balance: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MediaSource {
    Path { path: PathBuf },
    Text { text: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaSpec {
    pub owner: String,
    #[serde(flatten)]
    pub source: MediaSource,
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_TICKS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub actors: Vec<ActorSpec>,
    #[serde(default)]
    pub preregistered_legal: Vec<MediaSpec>,
    pub media_files: Vec<MediaSpec>,
    #[serde(default)]
    pub theta: Threshold,
    #[serde(default = "default_timeout", rename = "T", alias = "timeout_ticks")]
    pub timeout_ticks: u64,
    #[serde(alias = "fee_f_i")]
    pub fee: u64,
    #[serde(alias = "deposit_f_DA")]
    pub deposit: u64,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub params: SimHashParams,
    /// Relative media paths resolve against this directory.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = fs::read_to_string(path).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        let mut config: Self =
            serde_json::from_str(&text).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        config.base_dir = path.parent().map(Path::to_path_buf);
        Ok(config)
    }

    fn da(&self) -> &ActorSpec {
        self.actors.iter().find(|a| a.role == Role::Da).expect("validated")
    }

    fn validate(&self) -> Result<(), SimError> {
        let err = |m: String| Err(SimError::Config(m));
        let das = self.actors.iter().filter(|a| a.role == Role::Da).count();
        if das != 1 {
            return err(format!("exactly one DA required, found {das}"));
        }
        let mut seen = BTreeSet::new();
        for a in &self.actors {
            if a.identity.is_empty() || a.identity == CA_IDENTITY || a.identity == CONTRACT_IDENTITY {
                return err(format!("identity {:?} is reserved or empty", a.identity));
            }
            if !seen.insert(a.identity.as_str()) {
                return err(format!("duplicate identity {}", a.identity));
            }
            let ok = matches!(
                (a.role, a.behavior),
                (_, Behavior::Honest)
                    | (
                        Role::Da,
                        Behavior::MisreportPiracy { .. } | Behavior::MisreportLegitimate
                    )
                    | (Role::Mp, Behavior::NegligentVerifier)
            );
            if !ok {
                return err(format!("behavior {:?} does not apply to a {:?}", a.behavior, a.role));
            }
        }
        for m in self.preregistered_legal.iter().chain(&self.media_files) {
            match self.actors.iter().find(|a| a.identity == m.owner) {
                Some(a) if a.role == Role::Mp => {}
                _ => return err(format!("media owner {} is not an MP", m.owner)),
            }
        }
        if self.fee == 0 || self.deposit == 0 {
            return err("fee and deposit must be positive".into());
        }
        if self.timeout_ticks == 0 {
            return err("T must be at least one tick".into());
        }
        Ok(())
    }

    fn read_media(&self, spec: &MediaSpec) -> Result<Vec<u8>, SimError> {
        match &spec.source {
            MediaSource::Text { text } => Ok(text.clone().into_bytes()),
            MediaSource::Path { path } => {
                let full = match &self.base_dir {
                    Some(base) if path.is_relative() => base.join(path),
                    _ => path.clone(),
                };
                fs::read(&full).map_err(|e| SimError::Config(format!("media file {}: {e}", full.display())))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSettings {
    pub contract: String,
    pub da: String,
    pub theta: Threshold,
    pub timeout_ticks: u64,
    pub fee: u64,
    pub deposit: u64,
    pub params: SimHashParams,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u64,
    pub actor: String,
    pub action: String,
    pub detail: String,
}

/// Runs contract messages from sealed blocks and tracks fund conservation.
#[derive(Clone, Debug)]
pub struct ContractHost {
    identity: String,
    contract: Option<EscrowContract>,
    initial_total: u128,
    conservation_failures: Vec<u64>,
}

impl ContractHost {
    pub fn new(identity: impl Into<String>) -> Self {
        Self {
            identity: identity.into(),
            contract: None,
            initial_total: 0,
            conservation_failures: Vec::new(),
        }
    }

    pub fn contract(&self) -> Option<&EscrowContract> {
        self.contract.as_ref()
    }

    /// Heights of blocks after which balances plus escrow changed total.
    pub fn conservation_failures(&self) -> &[u64] {
        &self.conservation_failures
    }

    pub fn apply_block(&mut self, block: &Block, store: &ContentStore) -> Vec<Payload> {
        let now = block.timestamp;
        let mut effects = Vec::new();
        for (i, tx) in block.transactions.iter().enumerate() {
            if tx.sender == self.identity {
                if let Payload::Deploy {
                    contract,
                    operator,
                    theta,
                    timeout_ticks,
                    allocations,
                } = &tx.payload
                {
                    if self.contract.is_none() && *contract == self.identity {
                        let config = ContractConfig {
                            theta: *theta,
                            timeout_ticks: *timeout_ticks,
                        };
                        let sc = EscrowContract::new(contract.clone(), operator.clone(), config, allocations);
                        self.initial_total = sc.accounts().total();
                        self.contract = Some(sc);
                    }
                }
                continue;
            }
            if matches!(tx.payload, Payload::Enroll { .. }) {
                continue;
            }
            let result = match self.contract.as_mut() {
                Some(sc) => sc
                    .execute(&tx.sender, &tx.payload, now, store)
                    .map_err(|e| e.to_string()),
                None => Err("contract not deployed".to_owned()),
            };
            match result {
                Ok(e) => effects.extend(e),
                Err(reason) => effects.push(Payload::Rejected {
                    height: block.height,
                    index: i as u32,
                    reason,
                }),
            }
        }
        if let Some(sc) = self.contract.as_mut() {
            effects.extend(sc.settle_due(now));
            if sc.accounts().total() != self.initial_total {
                self.conservation_failures.push(block.height);
            }
        }
        effects
    }
}

fn is_effect(tx: &Transaction, contract: &str) -> bool {
    tx.sender == contract && !matches!(tx.payload, Payload::Enroll { .. } | Payload::Deploy { .. })
}

/// Re-executes a chain and checks that the contract messages in each block
/// are exactly what executing the previous block produced.
pub fn replay(blocks: &[Block], store: &ContentStore, contract: &str) -> Result<ContractHost, SimError> {
    let mut host = ContractHost::new(contract);
    let mut expected: Vec<Payload> = Vec::new();
    for block in blocks.iter().skip(1) {
        let found: Vec<&Payload> = block
            .transactions
            .iter()
            .filter(|tx| is_effect(tx, contract))
            .map(|tx| &tx.payload)
            .collect();
        if found != expected.iter().collect::<Vec<_>>() {
            return Err(SimError::Replay {
                height: block.height,
                message: format!(
                    "expected {} contract messages, chain holds {}",
                    expected.len(),
                    found.len()
                ),
            });
        }
        expected = host.apply_block(block, store);
    }
    if !expected.is_empty() {
        return Err(SimError::Replay {
            height: blocks.last().map_or(0, |b| b.height),
            message: "chain ends with unrecorded contract messages".into(),
        });
    }
    Ok(host)
}

fn derive_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_be_bytes());
        h.update(p);
    }
    u64::from_be_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ChallengeStatus {
    Upheld,
    Dismissed,
    Rejected { reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengeReport {
    pub task: TaskId,
    pub challenger: String,
    pub evidence: ChallengeEvidence,
    #[serde(flatten)]
    pub status: ChallengeStatus,
}

/// Result of the DA's work on one task.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Processing {
    pub honest: DetectionVerdict,
    pub posted: ResultRecord,
    pub receipt: Receipt,
}

pub struct World {
    settings: WorldSettings,
    ca: CertificateAuthority,
    ledger: Ledger,
    host: ContractHost,
    store: ContentStore,
    keys: BTreeMap<String, KeyPair>,
    da_index: LocalIndex,
    events: Vec<Event>,
    emitted: BTreeMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct KeyFile {
    identity: String,
    secret_key: SecretKey,
}

impl World {
    /// Enrolls the contract and every actor, deploys the contract with the
    /// actors' starting balances and seals the setup block.
    pub fn create(settings: WorldSettings, actors: &[(String, u64)], store: ContentStore) -> Result<Self, SimError> {
        let mut rng = ChaCha20Rng::seed_from_u64(settings.seed);
        let ca = CertificateAuthority::new(CA_IDENTITY, KeyPair::generate(&mut rng));
        let mut keys = BTreeMap::new();
        keys.insert(settings.contract.clone(), KeyPair::generate(&mut rng));
        for (identity, _) in actors {
            keys.insert(identity.clone(), KeyPair::generate(&mut rng));
        }
        let da_index = LocalIndex::new(settings.contract.clone(), SearchMode::Linear);
        let mut world = Self {
            ledger: Ledger::new(ca.record()),
            host: ContractHost::new(settings.contract.clone()),
            ca,
            store,
            keys,
            da_index,
            events: Vec::new(),
            emitted: BTreeMap::new(),
            settings,
        };
        let contract = world.settings.contract.clone();
        let mut order = vec![contract.clone()];
        order.extend(actors.iter().map(|(id, _)| id.clone()));
        for identity in &order {
            let certificate = world.ca.issue(identity, world.keys[identity].public_key());
            world.submit(identity, Payload::Enroll { certificate })?;
            world.log(identity, "enroll", "posted CA certificate");
        }
        let deploy = Payload::Deploy {
            contract: contract.clone(),
            operator: world.settings.da.clone(),
            theta: world.settings.theta,
            timeout_ticks: world.settings.timeout_ticks,
            allocations: actors
                .iter()
                .map(|(identity, amount)| Allocation {
                    identity: identity.clone(),
                    amount: *amount,
                })
                .collect(),
        };
        world.submit(&contract, deploy)?;
        world.log(
            &contract,
            "deploy",
            &format!(
                "theta {} T {}",
                world.settings.theta.value(),
                world.settings.timeout_ticks
            ),
        );
        world.advance_clock(1);
        Ok(world)
    }

    pub fn settings(&self) -> &WorldSettings {
        &self.settings
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn store(&self) -> &ContentStore {
        &self.store
    }

    pub fn host(&self) -> &ContractHost {
        &self.host
    }

    pub fn contract(&self) -> &EscrowContract {
        self.host.contract().expect("deployed at creation")
    }

    pub fn authority(&self) -> AuthorityRecord {
        self.ca.record()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Messages this world submitted, by payload kind.
    pub fn emitted(&self) -> &BTreeMap<String, usize> {
        &self.emitted
    }

    pub fn identities(&self) -> impl Iterator<Item = &str> {
        self.keys.keys().map(String::as_str)
    }

    pub fn clock(&self) -> u64 {
        self.ledger.head().timestamp
    }

    fn log(&mut self, actor: &str, action: &str, detail: &str) {
        self.events.push(Event {
            tick: self.clock(),
            actor: actor.to_owned(),
            action: action.to_owned(),
            detail: detail.to_owned(),
        });
    }

    fn keys_of(&self, identity: &str) -> Result<&KeyPair, SimError> {
        self.keys
            .get(identity)
            .ok_or_else(|| SimError::UnknownIdentity(identity.to_owned()))
    }

    pub fn submit(&mut self, identity: &str, payload: Payload) -> Result<Receipt, SimError> {
        let nonce = self.ledger.last_nonce(identity).map_or(0, |n| n + 1);
        let kind = payload.kind();
        let tx = Transaction::new_signed(self.keys_of(identity)?, identity, nonce, payload);
        let receipt = self.ledger.submit_transaction(tx)?;
        *self.emitted.entry(kind.to_owned()).or_insert(0) += 1;
        Ok(receipt)
    }

    fn seed_for(&self, label: &str) -> u64 {
        derive_seed(&[
            &self.settings.seed.to_be_bytes(),
            &self.ledger.height().to_be_bytes(),
            &(self.ledger.pending().len() as u64).to_be_bytes(),
            label.as_bytes(),
        ])
    }

    /// Seals one block per tick, runs it through the contract and queues the
    /// contract's effect messages for the next block.
    pub fn advance_clock(&mut self, ticks: u64) {
        for _ in 0..ticks {
            let now = self.clock() + 1;
            let block = self.ledger.seal_block(now).clone();
            let effects = self.host.apply_block(&block, &self.store);
            let contract = self.settings.contract.clone();
            for effect in effects {
                let detail = describe(&effect);
                let action = effect.kind();
                self.submit(&contract, effect).expect("contract is enrolled");
                self.log(&contract, action, &detail);
            }
        }
    }

    /// Advances until a sealed block leaves nothing pending.
    pub fn flush(&mut self) {
        loop {
            self.advance_clock(1);
            if self.ledger.pending().is_empty() {
                break;
            }
        }
    }

    fn rejection(&self, receipt: Receipt) -> Option<String> {
        self.ledger
            .trace(|p| matches!(p, Payload::Rejected { height, index, .. } if *height == receipt.height && *index == receipt.index))
            .first()
            .and_then(|(_, tx)| match &tx.payload {
                Payload::Rejected { reason, .. } => Some(reason.clone()),
                _ => None,
            })
    }

    fn check(&self, receipt: Receipt) -> Result<(), SimError> {
        match self.rejection(receipt) {
            Some(reason) => Err(SimError::Rejected(reason)),
            None => Ok(()),
        }
    }

    /// Step 1: both sides check each other's certificate.
    pub fn authenticate(&mut self, a: &str, b: &str) -> Result<(), SimError> {
        let ca = self.ca.record();
        let cert_a = self.ca.issue(a, self.keys_of(a)?.public_key());
        let cert_b = self.ca.issue(b, self.keys_of(b)?.public_key());
        mutual_authenticate(&cert_a, &cert_b, &ca)?;
        self.log(a, "authenticate", &format!("mutual certificate check with {b} passed"));
        Ok(())
    }

    /// Encrypts `media` for `recipient` and stores the ciphertext.
    fn encrypt_and_store(&mut self, actor: &str, recipient: &str, media: &[u8]) -> Result<AddressHash, SimError> {
        let pk = self.keys_of(recipient)?.public_key();
        let ct = hybrid_encrypt(&pk, media, self.seed_for(actor))?;
        let bytes = ct.to_bytes();
        let q = self.store.put(&bytes)?;
        self.log(
            actor,
            "store",
            &format!("{} ciphertext bytes for {recipient} at {q}", bytes.len()),
        );
        Ok(q)
    }

    pub fn register_media(&mut self, owner: &str, media: &[u8]) -> Result<Serial, SimError> {
        let fp = MediaFingerprint::of(media, &self.settings.params)?;
        let qm = self.encrypt_and_store(owner, owner, media)?;
        let receipt = self.submit(
            owner,
            Payload::RegisterMedia {
                hash_id: fp.hash_id,
                lshv: fp.lshv,
                qm,
            },
        )?;
        self.log(
            owner,
            "register_media",
            &format!("hashID {} lshv {}", fp.hash_id, fp.lshv),
        );
        self.flush();
        self.check(receipt)?;
        let serial = self
            .contract()
            .registry()
            .iter()
            .rev()
            .find(|e| e.record.hash_id == fp.hash_id)
            .map(|e| e.record.serial)
            .expect("registered");
        Ok(serial)
    }

    /// Steps 2 and 3: encrypt for the DA, store, pay the fee.
    pub fn request_detection(&mut self, requester: &str, media: &[u8], fee: u64) -> Result<TaskId, SimError> {
        let da = self.settings.da.clone();
        let q = self.encrypt_and_store(requester, &da, media)?;
        let receipt = self.submit(requester, Payload::DetectionRequest { qm: q, fee })?;
        self.log(requester, "detection_request", &format!("Q {q} fee {fee}"));
        self.flush();
        self.check(receipt)?;
        let task = self
            .contract()
            .tasks()
            .filter(|t| t.requester == requester && t.qm == q)
            .map(|t| t.id)
            .max()
            .expect("task opened");
        Ok(task)
    }

    /// The DA decrypts the medium, runs detection, applies its behavior and
    /// posts the record with its deposit.
    pub fn process_task(&mut self, task: TaskId, behavior: Behavior, deposit: u64) -> Result<Processing, SimError> {
        let da = self.settings.da.clone();
        self.da_index.sync(&self.ledger)?;
        let qm = self
            .contract()
            .task(task)
            .ok_or_else(|| SimError::Rejected(format!("{task} does not exist")))?
            .qm;
        let ct = HybridCiphertext::from_bytes(&self.store.get(&qm)?)?;
        let plain = hybrid_decrypt(&self.keys_of(&da)?.secret_key(), &ct)?;
        self.log(
            &da,
            "decrypt",
            &format!("{task}: recovered {} media bytes from {qm}", plain.len()),
        );
        let honest = detect(&plain, &self.da_index, &self.settings.params, self.settings.theta)?;
        let next = self.da_index.next_serial();
        let posted = match (behavior, honest.kind) {
            (Behavior::MisreportPiracy { target }, _) => ResultRecord {
                verdict: Verdict::PartialPiracy,
                serial: target,
                hash_id: None,
                lshv: Some(honest.fingerprint.lshv),
                qm,
            },
            (Behavior::MisreportLegitimate, VerdictKind::CompletePiracy { .. } | VerdictKind::PartialPiracy { .. }) => {
                let fake = DetectionVerdict {
                    kind: VerdictKind::Legitimate,
                    fingerprint: honest.fingerprint,
                };
                build_result_record(&fake, qm, next)
            }
            _ => build_result_record(&honest, qm, next),
        };
        self.log(&da, "detect", &format!("{task}: {}", describe_kind(&honest.kind)));
        let receipt = self.submit(
            &da,
            Payload::PostResult {
                task,
                record: posted.clone(),
                deposit,
            },
        )?;
        self.log(
            &da,
            "post_result",
            &format!("{task}: {:?} {} deposit {deposit}", posted.verdict, posted.serial),
        );
        self.flush();
        self.check(receipt)?;
        Ok(Processing {
            honest,
            posted,
            receipt,
        })
    }

    /// A verifier checks a posted Legitimate result using only chain data.
    pub fn verify_task(&mut self, verifier: &str, task: TaskId) -> Result<Option<ChallengeEvidence>, SimError> {
        let posted = self
            .ledger
            .trace(|p| matches!(p, Payload::PostResult { task: t, .. } if *t == task))
            .into_iter()
            .filter(|(r, _)| self.rejection(*r).is_none())
            .find_map(|(_, tx)| match &tx.payload {
                Payload::PostResult { record, .. } => Some(record.clone()),
                _ => None,
            });
        let Some(record) = posted else {
            return Ok(None);
        };
        if record.verdict != Verdict::Legitimate {
            return Ok(None);
        }
        let (Some(hash_id), Some(lshv)) = (record.hash_id, record.lshv) else {
            return Ok(None);
        };
        let index = LocalIndex::rebuild(&self.ledger, self.settings.contract.clone(), SearchMode::Linear)?;
        let found = index
            .prior_match(&MediaFingerprint { hash_id, lshv }, record.serial, self.settings.theta)
            .map(|n| ChallengeEvidence {
                n_prime: record.serial,
                n,
            });
        let detail = match found {
            Some(ev) => format!("{task}: {} matches earlier {}", ev.n_prime, ev.n),
            None => format!("{task}: no earlier match for {}", record.serial),
        };
        self.log(verifier, "verify", &detail);
        Ok(found)
    }

    pub fn submit_challenge(
        &mut self,
        challenger: &str,
        task: TaskId,
        evidence: ChallengeEvidence,
    ) -> Result<Receipt, SimError> {
        let receipt = self.submit(challenger, Payload::Challenge { task, evidence })?;
        self.log(
            challenger,
            "challenge",
            &format!("{task}: evidence {{{}, {}}}", evidence.n_prime, evidence.n),
        );
        Ok(receipt)
    }

    /// Outcome of a sealed and executed challenge.
    pub fn challenge_status(&self, receipt: Receipt, task: TaskId, challenger: &str) -> ChallengeStatus {
        if let Some(reason) = self.rejection(receipt) {
            return ChallengeStatus::Rejected { reason };
        }
        let upheld = self.ledger.trace(|p| {
            matches!(p, Payload::ChallengeResolved { task: t, challenger: c, upheld: true } if *t == task && c == challenger)
        });
        if upheld.is_empty() {
            ChallengeStatus::Dismissed
        } else {
            ChallengeStatus::Upheld
        }
    }

    /// Advances until `task` is settled (bounded by its deadline).
    pub fn run_until_settled(&mut self, task: TaskId) {
        while let Some(t) = self.contract().task(task) {
            if t.state.is_terminal() || (t.state == TaskState::Requested) {
                break;
            }
            let remaining = t.deadline.saturating_sub(self.clock()) + 1;
            self.advance_clock(remaining);
        }
        self.flush();
    }

    pub fn save(&self, dir: &Path) -> Result<(), SimError> {
        fs::create_dir_all(dir.join("keys"))?;
        fs::write(dir.join("world.json"), serde_json::to_vec_pretty(&self.settings)?)?;
        fs::write(dir.join("ca.json"), serde_json::to_vec_pretty(&self.ca.record())?)?;
        let mut all: Vec<(&str, &KeyPair)> = vec![(CA_IDENTITY, self.ca.keys())];
        all.extend(self.keys.iter().map(|(k, v)| (k.as_str(), v)));
        for (identity, keys) in all {
            let file = KeyFile {
                identity: identity.to_owned(),
                secret_key: keys.secret_key(),
            };
            fs::write(
                dir.join("keys").join(format!("{identity}.json")),
                serde_json::to_vec_pretty(&file)?,
            )?;
        }
        let disk = ContentStore::open(dir.join("store"))?;
        let mut entries = self.store.entries();
        entries.sort_by_key(|e| e.stored_at);
        for e in entries {
            disk.put(&self.store.get(&e.address)?)?;
        }
        let mut out = io::BufWriter::new(fs::File::create(dir.join("chain.jsonl"))?);
        self.ledger.export_jsonl(&mut out)?;
        io::Write::flush(&mut out)?;
        Ok(())
    }

    /// Reloads a saved world, replaying its chain through the contract.
    pub fn open(dir: &Path) -> Result<Self, SimError> {
        let settings: WorldSettings = serde_json::from_slice(&fs::read(dir.join("world.json"))?)?;
        let mut keys = BTreeMap::new();
        let mut ca_keys = None;
        let mut names: Vec<PathBuf> = fs::read_dir(dir.join("keys"))?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        names.sort();
        for path in names {
            let file: KeyFile = serde_json::from_slice(&fs::read(&path)?)?;
            let pair = KeyPair::from_secret(&file.secret_key);
            if file.identity == CA_IDENTITY {
                ca_keys = Some(pair);
            } else {
                keys.insert(file.identity, pair);
            }
        }
        let ca = CertificateAuthority::new(
            CA_IDENTITY,
            ca_keys.ok_or_else(|| SimError::Config("missing CA key".into()))?,
        );
        let recorded: AuthorityRecord = serde_json::from_slice(&fs::read(dir.join("ca.json"))?)?;
        if recorded != ca.record() {
            return Err(SimError::Config("ca.json does not match the CA key".into()));
        }
        let blocks = import_jsonl(BufReader::new(fs::File::open(dir.join("chain.jsonl"))?))?;
        let ledger = Ledger::from_blocks(ca.record(), blocks).map_err(DetectorError::CorruptChain)?;
        let store = ContentStore::open(dir.join("store"))?;
        let host = replay(ledger.blocks(), &store, &settings.contract)?;
        if host.contract().is_none() {
            return Err(SimError::Config("chain has no contract deployment".into()));
        }
        let da_index = LocalIndex::new(settings.contract.clone(), SearchMode::Linear);
        Ok(Self {
            settings,
            ca,
            ledger,
            host,
            store,
            keys,
            da_index,
            events: Vec::new(),
            emitted: BTreeMap::new(),
        })
    }
}

fn describe_kind(kind: &VerdictKind) -> String {
    match kind {
        VerdictKind::CompletePiracy { serial } => format!("complete piracy of {serial}"),
        VerdictKind::PartialPiracy { serial, distance } => {
            format!("partial piracy of {serial} at L={}", distance.value())
        }
        VerdictKind::Legitimate => "legitimate".into(),
    }
}

fn describe(p: &Payload) -> String {
    match p {
        Payload::Registered { record, status } => format!("{} {:?} hashID {}", record.serial, status, record.hash_id),
        Payload::StatusChanged { serial, status } => format!("{serial} -> {status:?}"),
        Payload::TaskOpened {
            task,
            requester,
            fee,
            deadline,
            ..
        } => {
            format!("{task} for {requester}, fee {fee}, deadline {deadline}")
        }
        Payload::ResultAccepted { task, deadline } => format!("{task} result accepted, deadline {deadline}"),
        Payload::ChallengeResolved {
            task,
            challenger,
            upheld,
        } => {
            format!(
                "{task} challenge by {challenger} {}",
                if *upheld { "upheld" } else { "dismissed" }
            )
        }
        Payload::Settlement { task, state, transfers } => {
            let paid: Vec<String> = transfers.iter().map(|t| format!("{} +{}", t.to, t.amount)).collect();
            format!("{task} {state:?}: {}", paid.join(", "))
        }
        Payload::Rejected { height, index, reason } => format!("tx {height}/{index}: {reason}"),
        other => other.kind().to_owned(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: TaskId,
    pub requester: String,
    pub medium: usize,
    pub honest: VerdictKind,
    pub posted: Verdict,
    pub posted_serial: Serial,
    pub final_state: TaskState,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub initial_balances: BTreeMap<String, u64>,
    pub final_balances: BTreeMap<String, u64>,
    pub escrow: u64,
    pub verdicts: Vec<TaskReport>,
    pub challenge_outcomes: Vec<ChallengeReport>,
    pub registry: Vec<(Serial, RecordStatus)>,
    pub chain_height: u64,
    pub message_counts: BTreeMap<String, usize>,
    pub invariants: Vec<InvariantResult>,
    pub failures: Vec<String>,
    pub event_log: Vec<Event>,
}

impl ScenarioReport {
    pub fn all_invariants_hold(&self) -> bool {
        self.invariants.iter().all(|i| i.passed)
    }

    pub fn event_log_text(&self) -> String {
        render_events(&self.event_log)
    }
}

pub fn render_events(events: &[Event]) -> String {
    events
        .iter()
        .map(|e| format!("[t={:>3}] {:<10} {:<18} {}\n", e.tick, e.actor, e.action, e.detail))
        .collect()
}

pub struct ScenarioRun {
    pub report: ScenarioReport,
    pub world: World,
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioRun, SimError> {
    config.validate()?;
    let legal: Vec<(String, Vec<u8>)> = config
        .preregistered_legal
        .iter()
        .map(|m| Ok((m.owner.clone(), config.read_media(m)?)))
        .collect::<Result<_, SimError>>()?;
    let media: Vec<(String, Vec<u8>)> = config
        .media_files
        .iter()
        .map(|m| Ok((m.owner.clone(), config.read_media(m)?)))
        .collect::<Result<_, SimError>>()?;

    let da = config.da().clone();
    let settings = WorldSettings {
        contract: CONTRACT_IDENTITY.to_owned(),
        da: da.identity.clone(),
        theta: config.theta,
        timeout_ticks: config.timeout_ticks,
        fee: config.fee,
        deposit: config.deposit,
        params: config.params,
        seed: config.rng_seed,
    };
    let actors: Vec<(String, u64)> = config
        .actors
        .iter()
        .map(|a| (a.identity.clone(), a.initial_balance))
        .collect();
    let mut world = World::create(settings, &actors, ContentStore::in_memory())?;
    let initial_balances = world.contract().accounts().balances.clone();
    let mut failures = Vec::new();

    let mps: Vec<&ActorSpec> = config.actors.iter().filter(|a| a.role == Role::Mp).collect();
    for mp in &mps {
        world.authenticate(&mp.identity, &da.identity)?;
    }
    for (owner, bytes) in &legal {
        if let Err(e) = world.register_media(owner, bytes) {
            failures.push(format!("registration by {owner}: {e}"));
            world.log(owner, "error", &e.to_string());
        }
    }

    let mut verdicts = Vec::new();
    let mut challenges = Vec::new();
    for (i, (owner, bytes)) in media.iter().enumerate() {
        let task = match world.request_detection(owner, bytes, config.fee) {
            Ok(t) => t,
            Err(e) => {
                failures.push(format!("medium {i}: {e}"));
                world.log(owner, "error", &e.to_string());
                continue;
            }
        };
        let processing = match world.process_task(task, da.behavior, config.deposit) {
            Ok(p) => p,
            Err(e) => {
                failures.push(format!("{task}: {e}"));
                world.log(&da.identity, "error", &e.to_string());
                continue;
            }
        };
        if world
            .contract()
            .task(task)
            .is_some_and(|t| t.state == TaskState::ResultPosted)
        {
            let mut submitted = Vec::new();
            for mp in mps.iter().filter(|m| m.behavior != Behavior::NegligentVerifier) {
                if let Some(evidence) = world.verify_task(&mp.identity, task)? {
                    let receipt = world.submit_challenge(&mp.identity, task, evidence)?;
                    submitted.push((mp.identity.clone(), evidence, receipt));
                }
            }
            if !submitted.is_empty() {
                world.flush();
            }
            for (challenger, evidence, receipt) in submitted {
                let status = world.challenge_status(receipt, task, &challenger);
                challenges.push(ChallengeReport {
                    task,
                    challenger,
                    evidence,
                    status,
                });
            }
        }
        world.run_until_settled(task);
        let t = world.contract().task(task).expect("task exists");
        verdicts.push(TaskReport {
            task,
            requester: owner.clone(),
            medium: i,
            honest: processing.honest.kind,
            posted: processing.posted.verdict,
            posted_serial: processing.posted.serial,
            final_state: t.state,
        });
    }
    world.flush();

    let texts: Vec<&[u8]> = legal.iter().chain(&media).map(|(_, b)| b.as_slice()).collect();
    let mut report = ScenarioReport {
        initial_balances,
        final_balances: world.contract().accounts().balances.clone(),
        escrow: world.contract().accounts().escrow,
        verdicts,
        challenge_outcomes: challenges,
        registry: world
            .contract()
            .registry()
            .iter()
            .map(|e| (e.record.serial, e.status))
            .collect(),
        chain_height: world.ledger().height(),
        message_counts: world.emitted().clone(),
        invariants: Vec::new(),
        failures,
        event_log: world.events().to_vec(),
    };
    report.invariants = check_invariants(&world, &report, &texts);
    Ok(ScenarioRun { report, world })
}

/// Shortest medium length checked for leaks into the report.
const LEAK_CHECK_MIN_LEN: usize = 16;

fn check_invariants(world: &World, report: &ScenarioReport, texts: &[&[u8]]) -> Vec<InvariantResult> {
    let mut out = Vec::new();
    let mut push = |name: &str, failures: Vec<String>| {
        out.push(InvariantResult {
            name: name.to_owned(),
            passed: failures.is_empty(),
            detail: if failures.is_empty() {
                "ok".into()
            } else {
                failures.join("; ")
            },
        })
    };
    let da = &world.settings.da;
    let sc = world.contract();

    let fails = world
        .host
        .conservation_failures()
        .iter()
        .map(|h| format!("block {h}"))
        .collect();
    push("fund_conservation", fails);

    let mut fails: Vec<String> = report
        .event_log
        .iter()
        .filter(|e| e.action == "decrypt" && &e.actor != da)
        .map(|e| format!("{} decrypted media", e.actor))
        .collect();
    let serialized = serde_json::to_vec(report).expect("report serializes");
    for (i, t) in texts.iter().enumerate() {
        if t.len() >= LEAK_CHECK_MIN_LEN && serialized.windows(t.len()).any(|w| w == *t) {
            fails.push(format!("medium {i} appears in the report"));
        }
    }
    push("plaintext_only_at_da", fails);

    // a delivered verdict never leaves the requester holding its fee unless
    // the verdict was wrong
    let mut fails = Vec::new();
    for v in &report.verdicts {
        let task = sc.task(v.task).expect("task exists");
        let honest_record = matches!(
            (v.honest, v.posted),
            (VerdictKind::CompletePiracy { .. }, Verdict::CompletePiracy)
                | (VerdictKind::PartialPiracy { .. }, Verdict::PartialPiracy)
                | (VerdictKind::Legitimate, Verdict::Legitimate)
        ) && match v.honest {
            VerdictKind::CompletePiracy { serial } | VerdictKind::PartialPiracy { serial, .. } => {
                serial == v.posted_serial
            }
            VerdictKind::Legitimate => true,
        };
        if task.state == TaskState::SettledToMp && honest_record {
            fails.push(format!("{}: correct verdict refunded to MP side", v.task));
        }
        if task.state == TaskState::SettledToDa && task.paid_to.as_deref() != Some(da.as_str()) {
            fails.push(format!("{}: settled to DA but paid elsewhere", v.task));
        }
    }
    push("mp_pays_for_correct_verdicts", fails);

    let mut fails = Vec::new();
    let upheld: BTreeSet<TaskId> = report
        .challenge_outcomes
        .iter()
        .filter(|c| c.status == ChallengeStatus::Upheld)
        .map(|c| c.task)
        .collect();
    for (_, tx) in world.ledger.trace(|p| matches!(p, Payload::Settlement { .. })) {
        if let Payload::Settlement { task, state, transfers } = &tx.payload {
            let da_paid = transfers.iter().any(|t| &t.to == da);
            if *state == TaskState::SettledToMp && da_paid {
                fails.push(format!("{task}: DA paid on a refuted result"));
            }
            if *state == TaskState::SettledToDa && upheld.contains(task) {
                fails.push(format!("{task}: DA paid despite upheld challenge"));
            }
        }
    }
    push("da_unpaid_for_refuted_results", fails);

    let mut fails = Vec::new();
    if let Err(v) = world.ledger.validate() {
        fails.push(v.to_string());
    }
    match replay(world.ledger.blocks(), &world.store, &world.settings.contract) {
        Ok(host) => {
            if host.contract().map(|c| c.state()) != Some(sc.state()) {
                fails.push("replayed contract state differs".into());
            }
        }
        Err(e) => fails.push(e.to_string()),
    }
    push("chain_valid_and_replayable", fails);

    let mut fails = Vec::new();
    let mut kinds: BTreeSet<&str> = world.emitted.keys().map(String::as_str).collect();
    for b in world.ledger.blocks() {
        kinds.extend(b.transactions.iter().map(|t| t.payload.kind()));
    }
    for kind in kinds {
        let traced = world.ledger.trace(|p| p.kind() == kind).len();
        let emitted = world.emitted.get(kind).copied().unwrap_or(0);
        if traced != emitted {
            fails.push(format!("{kind}: traced {traced}, emitted {emitted}"));
        }
    }
    push("trace_matches_emitted", fails);
    out
}
