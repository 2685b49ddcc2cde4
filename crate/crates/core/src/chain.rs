//! The user-registration block chain.
//!
//! Each block notarizes a batch of username -> public key registrations. The
//! chain gives every node the same public dictionary without a central
//! authority: usernames are unique, later key replacements must be signed by
//! the previously registered key, and the whole history is sealed by partial
//! hash-collision proof of work with periodic difficulty retargeting.
//!
//! Thin clients keep only the chain of header hashes; the header commits to a
//! Merkle root over the block's registrations so individual registrations can
//! be proven by inclusion path (see [`RegistrationProof`]).

use std::collections::BTreeMap;
use std::sync::OnceLock;

use crate::crypto::{
    self, hash_value, pow_check, pow_digest, pow_search, Digest, PublicKey,
};
use crate::encode::{canonical_encode, DecodeError, Reader, Value};
use crate::merkle::{self, MerkleProof};
use crate::rng::uniform;

/// Difficulty of the per-registration anti-flood proof of work, in leading
/// zero bits. Hardcoded: much smaller than block difficulty.
pub const USERREG_DIFFICULTY: u32 = 12;

/// Difficulty of the fixed genesis block.
pub const GENESIS_DIFFICULTY: u32 = 8;

/// Maximum promoted-message length, same bound as user posts.
pub const MAX_PROMOTED_CHARS: usize = 140;

/// Tunables for chain behavior. Defaults are desk-scale: one tick is one
/// simulated second and the block target matches six blocks per hour.
#[derive(Debug, Clone)]
pub struct ChainParams {
    pub userreg_difficulty: u32,
    pub initial_block_difficulty: u32,
    pub block_target_ticks: u64,
    pub retarget_interval: u64,
    pub confirm_depth: u64,
    /// Probability of showing a promoted message, as num/den.
    pub display_probability: (u64, u64),
    /// Sampling weight multiplier for promoted messages matching the local
    /// language tag.
    pub locale_weight: u64,
}

impl Default for ChainParams {
    fn default() -> ChainParams {
        ChainParams {
            userreg_difficulty: USERREG_DIFFICULTY,
            initial_block_difficulty: 16,
            block_target_ticks: 600,
            retarget_interval: 36,
            confirm_depth: 6,
            display_probability: (1, 6),
            locale_weight: 3,
        }
    }
}

// ---------------------------------------------------------------------------
// Usernames

/// A registered (or registrable) login name. Valid names are 1 to 16
/// characters of `[a-z0-9_]` starting with a letter; the restricted grammar
/// keeps the identity space far from arbitrary digest preimages.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Username(String);

pub fn username_valid(name: &str) -> bool {
    let bytes = name.as_bytes();
    if bytes.is_empty() || bytes.len() > 16 {
        return false;
    }
    if !bytes[0].is_ascii_lowercase() {
        return false;
    }
    bytes
        .iter()
        .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || *b == b'_')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("invalid username")]
pub struct InvalidUsername;

impl Username {
    pub fn parse(name: &str) -> Result<Username, InvalidUsername> {
        if username_valid(name) {
            Ok(Username(name.to_owned()))
        } else {
            Err(InvalidUsername)
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for Username {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// The user's address in hash space: the digest of the canonical encoding of
/// the username.
pub fn user_id(name: &Username) -> Digest {
    hash_value(&Value::str(name.as_str()))
}

// ---------------------------------------------------------------------------
// Registration records

/// A username registration, carrying its own anti-flood proof of work. For a
/// key replacement, `prev_key_signature` authorizes the new key with a
/// signature by the previously registered key over the registration payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserReg {
    pub username: Username,
    pub pubkey: PublicKey,
    pub nonce: u64,
    pub prev_key_signature: Option<Vec<u8>>,
}

/// The byte string both the registration POW and the replacement signature
/// cover: `[username, pubkey]`.
pub fn reg_payload(username: &Username, pubkey: &PublicKey) -> Vec<u8> {
    canonical_encode(&Value::list(vec![
        Value::str(username.as_str()),
        pubkey.encode_value(),
    ]))
}

impl UserReg {
    /// Build a fresh registration by searching the POW nonce space.
    pub fn create(
        username: Username,
        pubkey: PublicKey,
        difficulty: u32,
        start_nonce: u64,
    ) -> UserReg {
        let payload = reg_payload(&username, &pubkey);
        let nonce = pow_search(&payload, difficulty, start_nonce);
        UserReg {
            username,
            pubkey,
            nonce,
            prev_key_signature: None,
        }
    }

    /// Build a key replacement: same as a fresh registration plus the
    /// authorization signature from the old key.
    pub fn create_replacement(
        username: Username,
        new_pubkey: PublicKey,
        old_key: &crypto::PrivateKey,
        difficulty: u32,
        start_nonce: u64,
    ) -> UserReg {
        let payload = reg_payload(&username, &new_pubkey);
        let nonce = pow_search(&payload, difficulty, start_nonce);
        UserReg {
            username,
            pubkey: new_pubkey,
            nonce,
            prev_key_signature: Some(crypto::sign_detached(old_key, &payload)),
        }
    }

    pub fn encode_value(&self) -> Value {
        Value::list(vec![
            Value::str(self.username.as_str()),
            self.pubkey.encode_value(),
            Value::U64(self.nonce),
            Value::option(
                self.prev_key_signature
                    .as_ref()
                    .map(|sig| Value::Bytes(sig.clone())),
            ),
        ])
    }

    pub fn encode(&self) -> Vec<u8> {
        canonical_encode(&self.encode_value())
    }

    pub fn digest(&self) -> Digest {
        crypto::hash(&self.encode())
    }

    pub fn decode(r: &mut Reader) -> Result<UserReg, DecodeError> {
        let arity = r.list_len()?;
        if arity != 4 {
            return Err(DecodeError::BadField("userreg arity"));
        }
        let name = r.string()?;
        let username = Username::parse(&name).map_err(|_| DecodeError::BadField("username"))?;
        let key_bytes = r.bytes()?;
        let pubkey =
            PublicKey::from_bytes(&key_bytes).ok_or(DecodeError::BadField("pubkey length"))?;
        let nonce = r.u64()?;
        let opt = r.list_len()?;
        let prev_key_signature = match opt {
            0 => None,
            1 => Some(r.bytes()?),
            _ => return Err(DecodeError::BadField("option arity")),
        };
        Ok(UserReg {
            username,
            pubkey,
            nonce,
            prev_key_signature,
        })
    }
}

// ---------------------------------------------------------------------------
// Blocks

/// The unsolicited ("promoted") message a miner may embed in a block: the
/// network's incentive for contributing work. The sponsor name is carried
/// unauthenticated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromotedMessage {
    pub sponsor: Username,
    pub text: String,
    pub language_tag: String,
}

impl PromotedMessage {
    pub fn none(sponsor: Username) -> PromotedMessage {
        PromotedMessage {
            sponsor,
            text: String::new(),
            language_tag: String::new(),
        }
    }

    pub fn encode_value(&self) -> Value {
        Value::list(vec![
            Value::str(self.sponsor.as_str()),
            Value::str(&self.text),
            Value::str(&self.language_tag),
        ])
    }

    pub fn decode(r: &mut Reader) -> Result<PromotedMessage, DecodeError> {
        let arity = r.list_len()?;
        if arity != 3 {
            return Err(DecodeError::BadField("promoted arity"));
        }
        let sponsor = Username::parse(&r.string()?).map_err(|_| DecodeError::BadField("sponsor"))?;
        let text = r.string()?;
        let language_tag = r.string()?;
        Ok(PromotedMessage {
            sponsor,
            text,
            language_tag,
        })
    }
}

/// One chain unit. The header (everything except the registration list, whose
/// content is pinned by `reg_merkle_root`) is what the proof of work seals.
///
/// `timestamp` is the miner-declared tick. It is consensus data because
/// difficulty retargeting must compute identically on every node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub timestamp: u64,
    pub nonce: u64,
    pub spam: PromotedMessage,
    pub registrations: Vec<UserReg>,
    pub reg_merkle_root: Digest,
    pub difficulty_bits: u32,
}

/// Header preimage: the POW payload. The block hash is
/// `hash([header_payload, nonce])`, matching the `pow_*` primitives.
pub fn header_payload(
    height: u64,
    prev_hash: Digest,
    timestamp: u64,
    spam: &PromotedMessage,
    reg_merkle_root: Digest,
    difficulty_bits: u32,
) -> Vec<u8> {
    canonical_encode(&Value::list(vec![
        Value::U64(height),
        Value::Digest(prev_hash),
        Value::U64(timestamp),
        spam.encode_value(),
        Value::Digest(reg_merkle_root),
        Value::U64(difficulty_bits as u64),
    ]))
}

pub fn reg_merkle_leaves(registrations: &[UserReg]) -> Vec<Digest> {
    registrations
        .iter()
        .map(|reg| merkle::leaf_hash(&reg.encode()))
        .collect()
}

impl Block {
    pub fn header_payload(&self) -> Vec<u8> {
        header_payload(
            self.height,
            self.prev_hash,
            self.timestamp,
            &self.spam,
            self.reg_merkle_root,
            self.difficulty_bits,
        )
    }

    pub fn hash(&self) -> Digest {
        pow_digest(&self.header_payload(), self.nonce)
    }

    pub fn encode_value(&self) -> Value {
        Value::list(vec![
            Value::U64(self.height),
            Value::Digest(self.prev_hash),
            Value::U64(self.timestamp),
            Value::U64(self.nonce),
            self.spam.encode_value(),
            Value::List(self.registrations.iter().map(|r| r.encode_value()).collect()),
            Value::Digest(self.reg_merkle_root),
            Value::U64(self.difficulty_bits as u64),
        ])
    }

    pub fn encode(&self) -> Vec<u8> {
        canonical_encode(&self.encode_value())
    }

    pub fn decode(r: &mut Reader) -> Result<Block, DecodeError> {
        let arity = r.list_len()?;
        if arity != 8 {
            return Err(DecodeError::BadField("block arity"));
        }
        let height = r.u64()?;
        let prev_hash = r.digest()?;
        let timestamp = r.u64()?;
        let nonce = r.u64()?;
        let spam = PromotedMessage::decode(r)?;
        let count = r.list_len()?;
        let mut registrations = Vec::new();
        for _ in 0..count {
            registrations.push(UserReg::decode(r)?);
        }
        let reg_merkle_root = r.digest()?;
        let difficulty_bits = r.u64()?;
        if difficulty_bits > 256 {
            return Err(DecodeError::BadField("difficulty"));
        }
        Ok(Block {
            height,
            prev_hash,
            timestamp,
            nonce,
            spam,
            registrations,
            reg_merkle_root,
            difficulty_bits: difficulty_bits as u32,
        })
    }
}

/// The fixed genesis block shared by every node: empty registrations,
/// difficulty 8, height 0, mined from nonce 0.
pub fn genesis_block() -> &'static Block {
    static GENESIS: OnceLock<Block> = OnceLock::new();
    GENESIS.get_or_init(|| {
        let spam = PromotedMessage::none(Username::parse("genesis").unwrap());
        let root = merkle::merkle_root(&[]);
        let payload = header_payload(0, Digest::ZERO, 0, &spam, root, GENESIS_DIFFICULTY);
        let nonce = pow_search(&payload, GENESIS_DIFFICULTY, 0);
        Block {
            height: 0,
            prev_hash: Digest::ZERO,
            timestamp: 0,
            nonce,
            spam,
            registrations: Vec::new(),
            reg_merkle_root: root,
            difficulty_bits: GENESIS_DIFFICULTY,
        }
    })
}

// ---------------------------------------------------------------------------
// Chain state

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectoryEntry {
    pub pubkey: PublicKey,
    pub height: u64,
}

#[derive(Debug, Clone)]
struct BlockMeta {
    block: Block,
    cumulative_work: u128,
    arrival: u64,
    /// Difficulty required of a direct child, fixed when this block is
    /// accepted (accounts for retarget boundaries).
    next_difficulty: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegReject {
    BadPow,
    BadUsername,
    Duplicate,
    BadReplacementSignature,
}

impl RegReject {
    pub fn code(&self) -> &'static str {
        match self {
            RegReject::BadPow => "bad-pow",
            RegReject::BadUsername => "bad-username",
            RegReject::Duplicate => "duplicate",
            RegReject::BadReplacementSignature => "bad-replacement-signature",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockReject {
    Orphan,
    BadPow,
    BadReg(RegReject),
    BadMerkle,
    BadSpam,
}

impl BlockReject {
    pub fn code(&self) -> &'static str {
        match self {
            BlockReject::Orphan => "orphan",
            BlockReject::BadPow => "bad-pow",
            BlockReject::BadReg(_) => "bad-reg",
            BlockReject::BadMerkle => "bad-merkle",
            BlockReject::BadSpam => "bad-spam",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ApplyOutcome {
    /// Block (and possibly queued orphans) connected. `displaced` holds
    /// registrations that were on the old active path but not the new one,
    /// which callers usually return to their pending pool.
    Accepted {
        new_tip: Digest,
        reorged: bool,
        displaced: Vec<UserReg>,
    },
    /// Parent unknown; stored for retry once the parent connects.
    Orphaned,
    /// Already known.
    Duplicate,
}

/// Validate a registration against a directory view.
pub fn validate_userreg(
    reg: &UserReg,
    directory: &BTreeMap<Username, DirectoryEntry>,
    userreg_difficulty: u32,
) -> Result<(), RegReject> {
    if !username_valid(reg.username.as_str()) {
        return Err(RegReject::BadUsername);
    }
    let payload = reg_payload(&reg.username, &reg.pubkey);
    if !pow_check(&payload, reg.nonce, userreg_difficulty) {
        return Err(RegReject::BadPow);
    }
    if let Some(existing) = directory.get(&reg.username) {
        let Some(sig) = &reg.prev_key_signature else {
            return Err(RegReject::Duplicate);
        };
        if !crypto::verify_detached(&existing.pubkey, &payload, sig) {
            return Err(RegReject::BadReplacementSignature);
        }
    }
    Ok(())
}

/// Per-node view of the registry chain. Owned by a single node state machine;
/// snapshots may be cloned and shipped across threads freely.
#[derive(Debug, Clone)]
pub struct ChainState {
    params: ChainParams,
    blocks: BTreeMap<Digest, BlockMeta>,
    orphans: BTreeMap<Digest, Vec<Block>>,
    tip: Digest,
    genesis: Digest,
    directory: BTreeMap<Username, DirectoryEntry>,
    arrival_counter: u64,
}

impl ChainState {
    pub fn new(params: ChainParams) -> ChainState {
        let genesis = genesis_block().clone();
        let genesis_hash = genesis.hash();
        let next_difficulty = params.initial_block_difficulty;
        let mut blocks = BTreeMap::new();
        blocks.insert(
            genesis_hash,
            BlockMeta {
                cumulative_work: 1u128 << genesis.difficulty_bits,
                block: genesis,
                arrival: 0,
                next_difficulty,
            },
        );
        ChainState {
            params,
            blocks,
            orphans: BTreeMap::new(),
            tip: genesis_hash,
            genesis: genesis_hash,
            directory: BTreeMap::new(),
            arrival_counter: 1,
        }
    }

    pub fn params(&self) -> &ChainParams {
        &self.params
    }

    pub fn tip(&self) -> Digest {
        self.tip
    }

    pub fn tip_height(&self) -> u64 {
        self.blocks[&self.tip].block.height
    }

    pub fn tip_work(&self) -> u128 {
        self.blocks[&self.tip].cumulative_work
    }

    pub fn block(&self, hash: &Digest) -> Option<&Block> {
        self.blocks.get(hash).map(|m| &m.block)
    }

    pub fn directory(&self) -> &BTreeMap<Username, DirectoryEntry> {
        &self.directory
    }

    /// Difficulty the next block on the active chain must meet.
    pub fn next_difficulty(&self) -> u32 {
        self.blocks[&self.tip].next_difficulty
    }

    pub fn lookup_pubkey(&self, username: &Username) -> Option<&DirectoryEntry> {
        self.directory.get(username)
    }

    /// True iff the registration is buried at least `depth` blocks deep.
    pub fn is_confirmed(&self, username: &Username, depth: u64) -> bool {
        match self.directory.get(username) {
            Some(entry) => entry.height <= self.tip_height().saturating_sub(depth),
            None => false,
        }
    }

    /// The active path from genesis to tip.
    fn active_path(&self) -> Vec<Digest> {
        self.path_to_genesis(self.tip)
    }

    fn path_to_genesis(&self, from: Digest) -> Vec<Digest> {
        let mut path = Vec::new();
        let mut cursor = from;
        loop {
            path.push(cursor);
            if cursor == self.genesis {
                break;
            }
            cursor = self.blocks[&cursor].block.prev_hash;
        }
        path.reverse();
        path
    }

    /// Directory obtained by folding every registration along a path; later
    /// entries (key replacements) overwrite.
    fn fold_directory(&self, path: &[Digest]) -> BTreeMap<Username, DirectoryEntry> {
        let mut dir = BTreeMap::new();
        for hash in path {
            let block = &self.blocks[hash].block;
            for reg in &block.registrations {
                dir.insert(
                    reg.username.clone(),
                    DirectoryEntry {
                        pubkey: reg.pubkey,
                        height: block.height,
                    },
                );
            }
        }
        dir
    }

    /// Recompute the directory from scratch; used by audits.
    pub fn recomputed_directory(&self) -> BTreeMap<Username, DirectoryEntry> {
        self.fold_directory(&self.active_path())
    }

    /// Header-hash chain for thin clients: (height, block hash) along the
    /// active path.
    pub fn header_chain(&self) -> Vec<(u64, Digest)> {
        self.active_path()
            .iter()
            .map(|h| {
                let b = &self.blocks[h].block;
                (b.height, *h)
            })
            .collect()
    }

    /// Assemble and mine a block on the current tip. Conflicting pending
    /// registrations are dropped, first-wins; the block always validates
    /// against the state it was mined on.
    pub fn mine_block(
        &self,
        pending: &[UserReg],
        spam: PromotedMessage,
        timestamp: u64,
        start_nonce: u64,
    ) -> Block {
        let mut directory = self.directory.clone();
        let height = self.tip_height() + 1;
        let mut registrations = Vec::new();
        for reg in pending {
            if validate_userreg(reg, &directory, self.params.userreg_difficulty).is_ok() {
                directory.insert(
                    reg.username.clone(),
                    DirectoryEntry {
                        pubkey: reg.pubkey,
                        height,
                    },
                );
                registrations.push(reg.clone());
            }
        }
        let reg_merkle_root = merkle::merkle_root(&reg_merkle_leaves(&registrations));
        let difficulty_bits = self.next_difficulty();
        let payload = header_payload(
            height,
            self.tip,
            timestamp,
            &spam,
            reg_merkle_root,
            difficulty_bits,
        );
        let nonce = pow_search(&payload, difficulty_bits, start_nonce);
        Block {
            height,
            prev_hash: self.tip,
            timestamp,
            nonce,
            spam,
            registrations,
            reg_merkle_root,
            difficulty_bits,
        }
    }

    /// Full block validation against this state. `Err(Orphan)` means the
    /// parent is unknown and the block may be retried later.
    pub fn validate_block(&self, block: &Block) -> Result<(), BlockReject> {
        let Some(parent) = self.blocks.get(&block.prev_hash) else {
            return Err(BlockReject::Orphan);
        };
        // Header shape: height, declared difficulty and the POW itself. A
        // block lying about any of these is a POW failure.
        if block.height != parent.block.height + 1 {
            return Err(BlockReject::BadPow);
        }
        if block.difficulty_bits != parent.next_difficulty {
            return Err(BlockReject::BadPow);
        }
        if !pow_check(&block.header_payload(), block.nonce, block.difficulty_bits) {
            return Err(BlockReject::BadPow);
        }
        if block.spam.text.chars().count() > MAX_PROMOTED_CHARS {
            return Err(BlockReject::BadSpam);
        }
        let root = merkle::merkle_root(&reg_merkle_leaves(&block.registrations));
        if root != block.reg_merkle_root {
            return Err(BlockReject::BadMerkle);
        }
        let parent_path = self.path_to_genesis(block.prev_hash);
        let mut directory = self.fold_directory(&parent_path);
        for reg in &block.registrations {
            validate_userreg(reg, &directory, self.params.userreg_difficulty)
                .map_err(BlockReject::BadReg)?;
            directory.insert(
                reg.username.clone(),
                DirectoryEntry {
                    pubkey: reg.pubkey,
                    height: block.height,
                },
            );
        }
        Ok(())
    }

    /// Validate and connect a block, re-running chain selection. Orphans of
    /// the connected block are drained recursively.
    pub fn apply_block(&mut self, block: Block) -> Result<ApplyOutcome, BlockReject> {
        let hash = block.hash();
        if self.blocks.contains_key(&hash) {
            return Ok(ApplyOutcome::Duplicate);
        }
        match self.validate_block(&block) {
            Ok(()) => {}
            Err(BlockReject::Orphan) => {
                let queue = self.orphans.entry(block.prev_hash).or_default();
                if !queue.iter().any(|b| b.hash() == hash) {
                    queue.push(block);
                }
                return Ok(ApplyOutcome::Orphaned);
            }
            Err(reject) => return Err(reject),
        }
        let old_tip = self.tip;
        let old_path = self.active_path();
        self.connect(block);
        // Drain any orphans now connectable, depth-first.
        let mut frontier = vec![hash];
        while let Some(parent) = frontier.pop() {
            let Some(children) = self.orphans.remove(&parent) else {
                continue;
            };
            for child in children {
                if self.validate_block(&child).is_ok() {
                    let child_hash = child.hash();
                    self.connect(child);
                    frontier.push(child_hash);
                }
            }
        }
        let new_tip = self.select_chain();
        let reorged = new_tip != old_tip && !self.is_ancestor(old_tip, new_tip);
        let displaced = if reorged {
            self.displaced_registrations(&old_path)
        } else {
            Vec::new()
        };
        Ok(ApplyOutcome::Accepted {
            new_tip,
            reorged,
            displaced,
        })
    }

    fn connect(&mut self, block: Block) {
        let hash = block.hash();
        let parent = &self.blocks[&block.prev_hash];
        let cumulative_work = parent.cumulative_work + (1u128 << block.difficulty_bits);
        let next_difficulty = self.compute_next_difficulty(&block);
        let arrival = self.arrival_counter;
        self.arrival_counter += 1;
        self.blocks.insert(
            hash,
            BlockMeta {
                block,
                cumulative_work,
                arrival,
                next_difficulty,
            },
        );
    }

    /// Choose the active chain: greatest cumulative work, ties broken by
    /// earlier arrival. Rebuilds the directory when the tip moves.
    pub fn select_chain(&mut self) -> Digest {
        let mut best = self.tip;
        let mut best_meta = (
            self.blocks[&self.tip].cumulative_work,
            u64::MAX - self.blocks[&self.tip].arrival,
        );
        for (hash, meta) in &self.blocks {
            let key = (meta.cumulative_work, u64::MAX - meta.arrival);
            if key > best_meta {
                best = *hash;
                best_meta = key;
            }
        }
        if best != self.tip {
            self.tip = best;
            self.directory = self.fold_directory(&self.active_path());
        }
        self.tip
    }

    fn is_ancestor(&self, ancestor: Digest, descendant: Digest) -> bool {
        let mut cursor = descendant;
        loop {
            if cursor == ancestor {
                return true;
            }
            if cursor == self.genesis {
                return false;
            }
            cursor = self.blocks[&cursor].block.prev_hash;
        }
    }

    /// Registrations present on `old_path` but absent from the new active
    /// path, in old-chain order.
    fn displaced_registrations(&self, old_path: &[Digest]) -> Vec<UserReg> {
        let new_path: std::collections::BTreeSet<Digest> =
            self.active_path().into_iter().collect();
        let mut on_new: std::collections::BTreeSet<Digest> = std::collections::BTreeSet::new();
        for hash in self.active_path() {
            for reg in &self.blocks[&hash].block.registrations {
                on_new.insert(reg.digest());
            }
        }
        let mut displaced = Vec::new();
        for hash in old_path {
            if new_path.contains(hash) {
                continue;
            }
            for reg in &self.blocks[hash].block.registrations {
                if !on_new.contains(&reg.digest()) {
                    displaced.push(reg.clone());
                }
            }
        }
        displaced
    }

    fn compute_next_difficulty(&self, block: &Block) -> u32 {
        let next_height = block.height + 1;
        if next_height == 1 {
            return self.params.initial_block_difficulty;
        }
        if self.params.retarget_interval == 0 || next_height % self.params.retarget_interval != 0 {
            return block.difficulty_bits;
        }
        // Window: the last retarget_interval blocks ending at `block`,
        // gathered along its own branch.
        let mut window = Vec::new();
        let mut cursor = block.clone();
        for _ in 0..self.params.retarget_interval {
            window.push((cursor.height, cursor.timestamp));
            if cursor.height == 0 {
                break;
            }
            match self.blocks.get(&cursor.prev_hash) {
                Some(meta) => cursor = meta.block.clone(),
                None => break,
            }
        }
        window.reverse();
        retarget_difficulty(
            &window,
            block.difficulty_bits,
            self.params.block_target_ticks,
        )
    }

    /// Audit: every registration on the active path must re-validate at its
    /// in-chain position. Returns the first violation if any.
    pub fn revalidation_audit(&self) -> Result<(), (u64, RegReject)> {
        let mut directory: BTreeMap<Username, DirectoryEntry> = BTreeMap::new();
        for hash in self.active_path() {
            let block = &self.blocks[&hash].block;
            for reg in &block.registrations {
                if let Err(reject) =
                    validate_userreg(reg, &directory, self.params.userreg_difficulty)
                {
                    return Err((block.height, reject));
                }
                directory.insert(
                    reg.username.clone(),
                    DirectoryEntry {
                        pubkey: reg.pubkey,
                        height: block.height,
                    },
                );
            }
        }
        Ok(())
    }

    /// Sample a promoted message from the last `recent_window` active blocks.
    /// Returns none with probability `1 - display_probability`; candidates in
    /// the local language are weighted `locale_weight`-fold. Blocks carrying
    /// an empty promoted text are not candidates.
    pub fn select_promoted(
        &self,
        recent_window: u64,
        locale: &str,
        rng: &mut impl rand_core::RngCore,
    ) -> Option<PromotedMessage> {
        let (num, den) = self.params.display_probability;
        if num == 0 {
            return None;
        }
        if num < den && uniform(rng, den) >= num {
            return None;
        }
        let path = self.active_path();
        let start = path.len().saturating_sub(recent_window as usize);
        let candidates: Vec<&PromotedMessage> = path[start..]
            .iter()
            .map(|h| &self.blocks[h].block.spam)
            .filter(|s| !s.text.is_empty())
            .collect();
        if candidates.is_empty() {
            return None;
        }
        let weights: Vec<u64> = candidates
            .iter()
            .map(|c| {
                if !locale.is_empty() && c.language_tag == locale {
                    self.params.locale_weight
                } else {
                    1
                }
            })
            .collect();
        let total: u64 = weights.iter().sum();
        let mut pick = uniform(rng, total);
        for (candidate, weight) in candidates.iter().zip(&weights) {
            if pick < *weight {
                return Some((*candidate).clone());
            }
            pick -= weight;
        }
        unreachable!("weighted pick within total")
    }

    /// Merkle inclusion proof for a username registered in `block_hash`.
    pub fn merkle_prove(
        &self,
        block_hash: &Digest,
        username: &Username,
    ) -> Option<RegistrationProof> {
        let block = self.block(block_hash)?;
        let index = block
            .registrations
            .iter()
            .position(|r| &r.username == username)?;
        let leaves = reg_merkle_leaves(&block.registrations);
        let path = merkle::prove(&leaves, index).ok()?;
        Some(RegistrationProof {
            height: block.height,
            prev_hash: block.prev_hash,
            timestamp: block.timestamp,
            spam: block.spam.clone(),
            reg_merkle_root: block.reg_merkle_root,
            difficulty_bits: block.difficulty_bits,
            nonce: block.nonce,
            registration: block.registrations[index].clone(),
            path,
        })
    }
}

/// Difficulty retargeting: choose bits so the expected inter-block interval
/// returns to target, clamped to +/-2 bits per retarget. Fewer than two
/// observations leave the difficulty unchanged.
pub fn retarget_difficulty(recent: &[(u64, u64)], current_bits: u32, target_ticks: u64) -> u32 {
    if recent.len() < 2 {
        return current_bits;
    }
    let (h_first, t_first) = recent[0];
    let (h_last, t_last) = recent[recent.len() - 1];
    if h_last <= h_first {
        return current_bits;
    }
    let span_blocks = h_last - h_first;
    let span_ticks = t_last.saturating_sub(t_first).max(1);
    // factor = target / observed_interval = target * span_blocks / span_ticks
    let delta = round_log2(
        (target_ticks as u128) * (span_blocks as u128),
        span_ticks as u128,
    )
    .clamp(-2, 2);
    let new_bits = current_bits as i64 + delta as i64;
    new_bits.clamp(1, 60) as u32
}

/// round(log2(num/den)) for positive rationals, half rounded toward +inf.
/// Integer-only so retargeting is bit-identical across platforms.
fn round_log2(num: u128, den: u128) -> i32 {
    debug_assert!(num > 0 && den > 0);
    let num2 = num.checked_mul(num).expect("ratio operand too large");
    let den2 = den.checked_mul(den).expect("ratio operand too large");
    // d is the integer with 2^(2d-1) * den2 <= num2 < 2^(2d+1) * den2.
    for d in -63..=63i32 {
        if shifted_le(den2, 2 * d - 1, num2) && !shifted_le(den2, 2 * d + 1, num2) {
            return d;
        }
    }
    if num >= den {
        63
    } else {
        -63
    }
}

/// a * 2^shift <= b, exact in integers.
fn shifted_le(a: u128, shift: i32, b: u128) -> bool {
    if a == 0 {
        return true;
    }
    if shift >= 0 {
        let s = shift as u32;
        if s >= 128 || a.leading_zeros() < s {
            return false; // a * 2^s overflows 128 bits, so it exceeds b
        }
        (a << s) <= b
    } else {
        let s = (-shift) as u32;
        if b == 0 {
            return false;
        }
        if s >= 128 || b.leading_zeros() < s {
            return true; // b * 2^s overflows, so a (< 2^128) is below it
        }
        a <= (b << s)
    }
}

// ---------------------------------------------------------------------------
// Thin-client registration proofs

/// Everything a hash-chain-only client needs to check one registration: the
/// header preimage fields, the POW nonce, the registration and its Merkle
/// path. Any single-bit mutation breaks either the header hash match or the
/// Merkle fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistrationProof {
    pub height: u64,
    pub prev_hash: Digest,
    pub timestamp: u64,
    pub spam: PromotedMessage,
    pub reg_merkle_root: Digest,
    pub difficulty_bits: u32,
    pub nonce: u64,
    pub registration: UserReg,
    pub path: MerkleProof,
}

impl RegistrationProof {
    pub fn encode_value(&self) -> Value {
        Value::list(vec![
            Value::U64(self.height),
            Value::Digest(self.prev_hash),
            Value::U64(self.timestamp),
            self.spam.encode_value(),
            Value::Digest(self.reg_merkle_root),
            Value::U64(self.difficulty_bits as u64),
            Value::U64(self.nonce),
            self.registration.encode_value(),
            self.path.encode_value(),
        ])
    }

    pub fn encode(&self) -> Vec<u8> {
        canonical_encode(&self.encode_value())
    }

    pub fn decode_bytes(bytes: &[u8]) -> Result<RegistrationProof, DecodeError> {
        let mut r = Reader::new(bytes);
        let arity = r.list_len()?;
        if arity != 9 {
            return Err(DecodeError::BadField("proof arity"));
        }
        let height = r.u64()?;
        let prev_hash = r.digest()?;
        let timestamp = r.u64()?;
        let spam = PromotedMessage::decode(&mut r)?;
        let reg_merkle_root = r.digest()?;
        let difficulty_bits = r.u64()?;
        if difficulty_bits > 256 {
            return Err(DecodeError::BadField("difficulty"));
        }
        let nonce = r.u64()?;
        let registration = UserReg::decode(&mut r)?;
        let path = MerkleProof::decode(&mut r)?;
        r.finish()?;
        Ok(RegistrationProof {
            height,
            prev_hash,
            timestamp,
            spam,
            reg_merkle_root,
            difficulty_bits: difficulty_bits as u32,
            nonce,
            registration,
            path,
        })
    }
}

/// Verify an inclusion proof against a chain of (height, header hash) pairs.
pub fn verify_registration_proof(
    header_chain: &[(u64, Digest)],
    proof: &RegistrationProof,
) -> bool {
    let Some((_, expected_hash)) = header_chain.iter().find(|(h, _)| *h == proof.height) else {
        return false;
    };
    let payload = header_payload(
        proof.height,
        proof.prev_hash,
        proof.timestamp,
        &proof.spam,
        proof.reg_merkle_root,
        proof.difficulty_bits,
    );
    if pow_digest(&payload, proof.nonce) != *expected_hash {
        return false;
    }
    let leaf = merkle::leaf_hash(&proof.registration.encode());
    merkle::verify(&proof.reg_merkle_root, &leaf, &proof.path)
}
