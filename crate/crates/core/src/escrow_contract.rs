//! The escrow contract: legal-media registry, fee/deposit escrow, result
//! verification, challenge arbitration and settlement.
//!
//! State only changes through [`EscrowContract::execute`] (ledger-ordered
//! messages) or the direct operation methods it dispatches to. Each call
//! returns the effect messages the contract publishes back to the ledger.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::content_store::{AddressHash, ContentStore};
use crate::fingerprint::{hamming_distance, HashId, SimHashValue, Threshold};
use crate::ledger::{Allocation, Payload};

pub const DEFAULT_TIMEOUT_TICKS: u64 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Serial(pub u64);

impl fmt::Display for Serial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub u64);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "task-{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegalMediaRecord {
    pub serial: Serial,
    pub hash_id: HashId,
    pub lshv: SimHashValue,
    pub qm: AddressHash,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Confirmed,
    /// Registered from a Legitimate verdict whose challenge window is open.
    Provisional,
    /// A provisional record that lost a challenge.
    Revoked,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub record: LegalMediaRecord,
    pub status: RecordStatus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    CompletePiracy,
    PartialPiracy,
    Legitimate,
}

/// What the DA posts. Piracy verdicts name the matched legal medium in
/// `serial`; a Legitimate verdict names the serial it expects the medium to
/// be registered under.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub verdict: Verdict,
    pub serial: Serial,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hash_id: Option<HashId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lshv: Option<SimHashValue>,
    pub qm: AddressHash,
}

impl ResultRecord {
    pub fn is_well_formed(&self) -> bool {
        match self.verdict {
            Verdict::CompletePiracy => self.hash_id.is_some() && self.lshv.is_none(),
            Verdict::PartialPiracy => self.hash_id.is_none() && self.lshv.is_some(),
            Verdict::Legitimate => self.hash_id.is_some() && self.lshv.is_some(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengeEvidence {
    pub n_prime: Serial,
    pub n: Serial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Requested,
    ResultPosted,
    SettledToDa,
    SettledToMp,
}

impl TaskState {
    pub fn is_terminal(self) -> bool {
        matches!(self, TaskState::SettledToDa | TaskState::SettledToMp)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionTask {
    pub id: TaskId,
    pub requester: String,
    pub qm: AddressHash,
    pub fee: u64,
    pub deposit: u64,
    pub state: TaskState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ResultRecord>,
    pub deadline: u64,
    /// Who received the escrowed funds, once settled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paid_to: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub to: String,
    pub amount: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountLedger {
    pub balances: BTreeMap<String, u64>,
    pub escrow: u64,
}

impl AccountLedger {
    pub fn balance(&self, identity: &str) -> u64 {
        self.balances.get(identity).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u128 {
        self.balances.values().map(|&b| b as u128).sum::<u128>() + self.escrow as u128
    }

    fn lock(&mut self, identity: &str, amount: u64) -> Result<(), ContractError> {
        let available = self.balance(identity);
        if available < amount {
            return Err(ContractError::InsufficientFunds {
                identity: identity.to_owned(),
                needed: amount,
                available,
            });
        }
        self.balances.insert(identity.to_owned(), available - amount);
        self.escrow += amount;
        Ok(())
    }

    fn release(&mut self, to: &str, amount: u64) -> Transfer {
        assert!(self.escrow >= amount, "escrow underflow");
        self.escrow -= amount;
        *self.balances.entry(to.to_owned()).or_insert(0) += amount;
        Transfer {
            to: to.to_owned(),
            amount,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContractError {
    #[error("{identity} needs {needed} units but holds {available}")]
    InsufficientFunds {
        identity: String,
        needed: u64,
        available: u64,
    },
    #[error("amount must be positive")]
    ZeroAmount,
    #[error("address {0} is not in the content store")]
    UnknownAddress(AddressHash),
    #[error("hashID {0} is already registered")]
    DuplicateHashId(HashId),
    #[error("serial {0} is not registered")]
    UnknownSerial(Serial),
    #[error("{0} does not exist")]
    UnknownTask(TaskId),
    #[error("{task} is {state:?}, operation not allowed")]
    WrongState { task: TaskId, state: TaskState },
    #[error("result record fields do not match its verdict")]
    MalformedRecord,
    #[error("legitimate result names serial {found}, next serial is {expected}")]
    SerialMismatch { expected: Serial, found: Serial },
    #[error("evidence does not match the challenged result")]
    EvidenceMismatch,
    #[error("serial {0} has been revoked")]
    RevokedSerial(Serial),
    #[error("{task} deadline {deadline} has passed (now {now})")]
    PastDeadline { task: TaskId, deadline: u64, now: u64 },
    #[error("{task} cannot settle before tick {deadline} has passed (now {now})")]
    NotYetDue { task: TaskId, deadline: u64, now: u64 },
    #[error("{challenger} already challenged {task}")]
    DuplicateChallenge { challenger: String, task: TaskId },
    #[error("{0} is not allowed to perform this operation")]
    Unauthorized(String),
    #[error("message is not handled by the contract")]
    Unsupported,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractConfig {
    pub theta: Threshold,
    pub timeout_ticks: u64,
}

impl Default for ContractConfig {
    fn default() -> Self {
        Self {
            theta: Threshold::DEFAULT,
            timeout_ticks: DEFAULT_TIMEOUT_TICKS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengeOutcome {
    pub upheld: bool,
    pub transfers: Vec<Transfer>,
}

/// JSON view of the whole contract.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractState {
    pub registry: Vec<RegistryEntry>,
    pub tasks: Vec<DetectionTask>,
    pub balances: BTreeMap<String, u64>,
    pub escrow: u64,
    pub theta: Threshold,
    #[serde(rename = "T")]
    pub timeout_ticks: u64,
}

#[derive(Clone, Debug)]
pub struct EscrowContract {
    identity: String,
    operator: String,
    config: ContractConfig,
    registry: Vec<RegistryEntry>,
    by_hash: HashMap<HashId, Serial>,
    tasks: BTreeMap<TaskId, DetectionTask>,
    accounts: AccountLedger,
    challenged: BTreeSet<(String, TaskId)>,
}

impl EscrowContract {
    /// `operator` is the detection agency allowed to post results.
    pub fn new(
        identity: impl Into<String>,
        operator: impl Into<String>,
        config: ContractConfig,
        allocations: &[Allocation],
    ) -> Self {
        let mut accounts = AccountLedger::default();
        for a in allocations {
            *accounts.balances.entry(a.identity.clone()).or_insert(0) += a.amount;
        }
        Self {
            identity: identity.into(),
            operator: operator.into(),
            config,
            registry: Vec::new(),
            by_hash: HashMap::new(),
            tasks: BTreeMap::new(),
            accounts,
            challenged: BTreeSet::new(),
        }
    }

    pub fn identity(&self) -> &str {
        &self.identity
    }

    pub fn operator(&self) -> &str {
        &self.operator
    }

    pub fn config(&self) -> ContractConfig {
        self.config
    }

    pub fn accounts(&self) -> &AccountLedger {
        &self.accounts
    }

    pub fn registry(&self) -> &[RegistryEntry] {
        &self.registry
    }

    pub fn entry(&self, serial: Serial) -> Option<&RegistryEntry> {
        let idx = serial.0.checked_sub(1)? as usize;
        self.registry.get(idx)
    }

    pub fn next_serial(&self) -> Serial {
        Serial(self.registry.len() as u64 + 1)
    }

    pub fn task(&self, id: TaskId) -> Option<&DetectionTask> {
        self.tasks.get(&id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &DetectionTask> {
        self.tasks.values()
    }

    pub fn state(&self) -> ContractState {
        ContractState {
            registry: self.registry.clone(),
            tasks: self.tasks.values().cloned().collect(),
            balances: self.accounts.balances.clone(),
            escrow: self.accounts.escrow,
            theta: self.config.theta,
            timeout_ticks: self.config.timeout_ticks,
        }
    }

    fn push_record(
        &mut self,
        hash_id: HashId,
        lshv: SimHashValue,
        qm: AddressHash,
        status: RecordStatus,
    ) -> LegalMediaRecord {
        let record = LegalMediaRecord {
            serial: self.next_serial(),
            hash_id,
            lshv,
            qm,
        };
        self.by_hash.insert(hash_id, record.serial);
        self.registry.push(RegistryEntry {
            record: record.clone(),
            status,
        });
        record
    }

    fn live_serial_for(&self, hash_id: &HashId) -> Option<Serial> {
        self.by_hash
            .get(hash_id)
            .copied()
            .filter(|&s| self.entry(s).is_some_and(|e| e.status != RecordStatus::Revoked))
    }

    pub fn register_legal_media(
        &mut self,
        hash_id: HashId,
        lshv: SimHashValue,
        qm: AddressHash,
    ) -> Result<Serial, ContractError> {
        if self.live_serial_for(&hash_id).is_some() {
            return Err(ContractError::DuplicateHashId(hash_id));
        }
        Ok(self.push_record(hash_id, lshv, qm, RecordStatus::Confirmed).serial)
    }

    pub fn hash_id_judge(&self, posted: &HashId, serial: Serial) -> Result<bool, ContractError> {
        let entry = self.entry(serial).ok_or(ContractError::UnknownSerial(serial))?;
        Ok(entry.record.hash_id == *posted)
    }

    pub fn lshv_judge(&self, posted: SimHashValue, serial: Serial, theta: Threshold) -> Result<bool, ContractError> {
        let entry = self.entry(serial).ok_or(ContractError::UnknownSerial(serial))?;
        Ok(theta.admits(hamming_distance(posted, entry.record.lshv)))
    }

    pub fn request_detection(
        &mut self,
        requester: &str,
        qm: AddressHash,
        fee: u64,
        now: u64,
        store: &ContentStore,
    ) -> Result<TaskId, ContractError> {
        if fee == 0 {
            return Err(ContractError::ZeroAmount);
        }
        if !store.contains(&qm) {
            return Err(ContractError::UnknownAddress(qm));
        }
        self.accounts.lock(requester, fee)?;
        let id = TaskId(self.tasks.len() as u64 + 1);
        self.tasks.insert(
            id,
            DetectionTask {
                id,
                requester: requester.to_owned(),
                qm,
                fee,
                deposit: 0,
                state: TaskState::Requested,
                result: None,
                deadline: now + self.config.timeout_ticks,
                paid_to: None,
            },
        );
        Ok(id)
    }

    fn task_mut(&mut self, id: TaskId) -> Result<&mut DetectionTask, ContractError> {
        self.tasks.get_mut(&id).ok_or(ContractError::UnknownTask(id))
    }

    fn pay_out(&mut self, id: TaskId, to_da: bool) -> Vec<Transfer> {
        let task = self.tasks.get_mut(&id).expect("task exists");
        let recipient = if to_da {
            self.operator.clone()
        } else {
            task.requester.clone()
        };
        task.state = if to_da {
            TaskState::SettledToDa
        } else {
            TaskState::SettledToMp
        };
        task.paid_to = Some(recipient.clone());
        let amount = task.fee + task.deposit;
        vec![self.accounts.release(&recipient, amount)]
    }

    fn pay_challenger(&mut self, id: TaskId, challenger: &str) -> Vec<Transfer> {
        let task = self.tasks.get_mut(&id).expect("task exists");
        task.state = TaskState::SettledToMp;
        task.paid_to = Some(challenger.to_owned());
        let amount = task.fee + task.deposit;
        vec![self.accounts.release(challenger, amount)]
    }

    fn verify_piracy(&self, record: &ResultRecord) -> bool {
        let live = self
            .entry(record.serial)
            .is_some_and(|e| e.status != RecordStatus::Revoked);
        if !live {
            return false;
        }
        match record.verdict {
            Verdict::CompletePiracy => record
                .hash_id
                .is_some_and(|h| self.hash_id_judge(&h, record.serial).unwrap_or(false)),
            Verdict::PartialPiracy => record
                .lshv
                .is_some_and(|l| self.lshv_judge(l, record.serial, self.config.theta).unwrap_or(false)),
            Verdict::Legitimate => false,
        }
    }

    /// Escrows the deposit and records the result. Piracy verdicts are judged
    /// and settled on the spot; a Legitimate verdict registers its medium
    /// provisionally and opens a fresh challenge window of `T` ticks.
    pub fn post_result(
        &mut self,
        da: &str,
        id: TaskId,
        record: ResultRecord,
        deposit: u64,
        now: u64,
    ) -> Result<Vec<Payload>, ContractError> {
        if da != self.operator {
            return Err(ContractError::Unauthorized(da.to_owned()));
        }
        let task = self.tasks.get(&id).ok_or(ContractError::UnknownTask(id))?;
        if task.state != TaskState::Requested {
            return Err(ContractError::WrongState {
                task: id,
                state: task.state,
            });
        }
        if deposit == 0 {
            return Err(ContractError::ZeroAmount);
        }
        if !record.is_well_formed() || record.qm != task.qm {
            return Err(ContractError::MalformedRecord);
        }
        if record.verdict == Verdict::Legitimate && record.serial != self.next_serial() {
            return Err(ContractError::SerialMismatch {
                expected: self.next_serial(),
                found: record.serial,
            });
        }
        self.accounts.lock(da, deposit)?;

        let deadline = now + self.config.timeout_ticks;
        let task = self.task_mut(id)?;
        task.deposit = deposit;
        task.result = Some(record.clone());
        task.state = TaskState::ResultPosted;
        task.deadline = deadline;
        let mut effects = vec![Payload::ResultAccepted { task: id, deadline }];

        match record.verdict {
            Verdict::CompletePiracy | Verdict::PartialPiracy => {
                let verified = self.verify_piracy(&record);
                let transfers = self.pay_out(id, verified);
                effects.push(self.settlement(id, transfers));
            }
            Verdict::Legitimate => {
                let hash_id = record.hash_id.expect("checked shape");
                if self.live_serial_for(&hash_id).is_some() {
                    // an exact copy of a registered medium cannot be legitimate
                    let transfers = self.pay_out(id, false);
                    effects.push(self.settlement(id, transfers));
                } else {
                    let lshv = record.lshv.expect("checked shape");
                    let rec = self.push_record(hash_id, lshv, record.qm, RecordStatus::Provisional);
                    effects.push(Payload::Registered {
                        record: rec,
                        status: RecordStatus::Provisional,
                    });
                }
            }
        }
        Ok(effects)
    }

    fn settlement(&self, id: TaskId, transfers: Vec<Transfer>) -> Payload {
        Payload::Settlement {
            task: id,
            state: self.tasks[&id].state,
            transfers,
        }
    }

    pub fn challenge(
        &mut self,
        challenger: &str,
        id: TaskId,
        evidence: ChallengeEvidence,
        now: u64,
    ) -> Result<ChallengeOutcome, ContractError> {
        let task = self.tasks.get(&id).ok_or(ContractError::UnknownTask(id))?;
        let posted = match (&task.state, &task.result) {
            (TaskState::ResultPosted, Some(r)) if r.verdict == Verdict::Legitimate => r.clone(),
            _ => {
                return Err(ContractError::WrongState {
                    task: id,
                    state: task.state,
                })
            }
        };
        if now > task.deadline {
            return Err(ContractError::PastDeadline {
                task: id,
                deadline: task.deadline,
                now,
            });
        }
        let pirated = self
            .entry(evidence.n_prime)
            .ok_or(ContractError::UnknownSerial(evidence.n_prime))?;
        let original = self.entry(evidence.n).ok_or(ContractError::UnknownSerial(evidence.n))?;
        // the original must predate the challenged registration
        if evidence.n_prime != posted.serial || evidence.n >= evidence.n_prime {
            return Err(ContractError::EvidenceMismatch);
        }
        if original.status == RecordStatus::Revoked {
            return Err(ContractError::RevokedSerial(evidence.n));
        }
        let (hash_prime, lshv_prime) = (pirated.record.hash_id, pirated.record.lshv);
        if !self.challenged.insert((challenger.to_owned(), id)) {
            return Err(ContractError::DuplicateChallenge {
                challenger: challenger.to_owned(),
                task: id,
            });
        }
        let upheld = self.hash_id_judge(&hash_prime, evidence.n)?
            || self.lshv_judge(lshv_prime, evidence.n, self.config.theta)?;
        if !upheld {
            return Ok(ChallengeOutcome {
                upheld: false,
                transfers: Vec::new(),
            });
        }
        self.registry[(evidence.n_prime.0 - 1) as usize].status = RecordStatus::Revoked;
        let transfers = self.pay_challenger(id, challenger);
        Ok(ChallengeOutcome {
            upheld: true,
            transfers,
        })
    }

    /// Timeout settlement of an unchallenged Legitimate result.
    pub fn settle(&mut self, id: TaskId, now: u64) -> Result<Vec<Transfer>, ContractError> {
        let task = self.tasks.get(&id).ok_or(ContractError::UnknownTask(id))?;
        if task.state != TaskState::ResultPosted {
            return Err(ContractError::WrongState {
                task: id,
                state: task.state,
            });
        }
        if now <= task.deadline {
            return Err(ContractError::NotYetDue {
                task: id,
                deadline: task.deadline,
                now,
            });
        }
        let serial = task.result.as_ref().expect("posted").serial;
        self.registry[(serial.0 - 1) as usize].status = RecordStatus::Confirmed;
        Ok(self.pay_out(id, true))
    }

    /// Tasks whose challenge window has closed, in id order.
    pub fn due_tasks(&self, now: u64) -> Vec<TaskId> {
        self.tasks
            .values()
            .filter(|t| t.state == TaskState::ResultPosted && now > t.deadline)
            .map(|t| t.id)
            .collect()
    }

    /// Runs one ledger message from `sender`, returning the effect messages.
    pub fn execute(
        &mut self,
        sender: &str,
        payload: &Payload,
        now: u64,
        store: &ContentStore,
    ) -> Result<Vec<Payload>, ContractError> {
        match payload {
            Payload::RegisterMedia { hash_id, lshv, qm } => {
                let serial = self.register_legal_media(*hash_id, *lshv, *qm)?;
                Ok(vec![Payload::Registered {
                    record: self.entry(serial).expect("just pushed").record.clone(),
                    status: RecordStatus::Confirmed,
                }])
            }
            Payload::DetectionRequest { qm, fee } => {
                let id = self.request_detection(sender, *qm, *fee, now, store)?;
                let t = &self.tasks[&id];
                Ok(vec![Payload::TaskOpened {
                    task: id,
                    requester: t.requester.clone(),
                    qm: t.qm,
                    fee: t.fee,
                    deadline: t.deadline,
                }])
            }
            Payload::PostResult { task, record, deposit } => {
                self.post_result(sender, *task, record.clone(), *deposit, now)
            }
            Payload::Challenge { task, evidence } => {
                let outcome = self.challenge(sender, *task, *evidence, now)?;
                let mut effects = vec![Payload::ChallengeResolved {
                    task: *task,
                    challenger: sender.to_owned(),
                    upheld: outcome.upheld,
                }];
                if outcome.upheld {
                    effects.push(Payload::StatusChanged {
                        serial: evidence.n_prime,
                        status: RecordStatus::Revoked,
                    });
                    effects.push(self.settlement(*task, outcome.transfers));
                }
                Ok(effects)
            }
            _ => Err(ContractError::Unsupported),
        }
    }

    /// Settles every due task and returns the resulting effect messages.
    pub fn settle_due(&mut self, now: u64) -> Vec<Payload> {
        let mut effects = Vec::new();
        for id in self.due_tasks(now) {
            let transfers = self.settle(id, now).expect("due task settles");
            let serial = self.tasks[&id].result.as_ref().expect("posted").serial;
            effects.push(Payload::StatusChanged {
                serial,
                status: RecordStatus::Confirmed,
            });
            effects.push(self.settlement(id, transfers));
        }
        effects
    }
}
