//! Kademlia-style routed overlay: endpoint-derived node identities, XOR
//! metric routing tables, iterative lookup, and the single/multi key-value
//! store with its acceptance rules.
//!
//! Node identifiers are the hash of `[ip, port]`, not of the user identity:
//! addressing the overlay by user id would let anyone map usernames to IP
//! addresses just by running a node. A per-IP contact cap keeps identifier
//! minting from one address cheaply bounded.

use std::collections::{BTreeMap, BTreeSet};

use crate::chain::Username;
use crate::crypto::{hash_value, Digest, SignedContent};
use crate::encode::{canonical_encode, DecodeError, Reader, Value};

/// Overlay tuning knobs. Defaults are desk-scale.
#[derive(Debug, Clone)]
pub struct DhtParams {
    /// Bucket capacity.
    pub k: usize,
    /// Lookup/forward parallelism.
    pub alpha: usize,
    /// Replication factor: the "neighbors of a key" are its R closest nodes.
    pub r: usize,
    pub max_hops: u32,
    pub multi_cap: usize,
    pub store_cap: usize,
    pub ttl: u64,
    pub clock_skew: u64,
    pub max_ids_per_ip: usize,
}

impl Default for DhtParams {
    fn default() -> DhtParams {
        DhtParams {
            k: 8,
            alpha: 3,
            r: 3,
            max_hops: 16,
            multi_cap: 32,
            store_cap: 4096,
            ttl: 86_400,
            clock_skew: 120,
            max_ids_per_ip: 8,
        }
    }
}

// ---------------------------------------------------------------------------
// Identities

/// A transport address in the simulated network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Endpoint {
    pub ip: u32,
    pub port: u16,
}

impl Endpoint {
    pub fn new(ip: u32, port: u16) -> Endpoint {
        Endpoint { ip, port }
    }

    pub fn encode_value(&self) -> Value {
        Value::list(vec![Value::U64(self.ip as u64), Value::U64(self.port as u64)])
    }

    pub fn decode(r: &mut Reader) -> Result<Endpoint, DecodeError> {
        let arity = r.list_len()?;
        if arity != 2 {
            return Err(DecodeError::BadField("endpoint arity"));
        }
        let ip = r.u64()?;
        let port = r.u64()?;
        if ip > u32::MAX as u64 || port > u16::MAX as u64 {
            return Err(DecodeError::BadField("endpoint range"));
        }
        Ok(Endpoint {
            ip: ip as u32,
            port: port as u16,
        })
    }
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let [a, b, c, d] = self.ip.to_be_bytes();
        write!(f, "{a}.{b}.{c}.{d}:{}", self.port)
    }
}

/// Overlay identity: the digest of the endpoint, plus the endpoint itself so
/// peers can be dialed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct NodeId {
    pub id: Digest,
    pub endpoint: Endpoint,
}

/// `hash([ip, port])` — the standard endpoint-derived overlay identifier.
pub fn node_id(endpoint: Endpoint) -> NodeId {
    NodeId {
        id: hash_value(&endpoint.encode_value()),
        endpoint,
    }
}

/// Bytewise XOR of two digests, interpreted big-endian.
pub fn xor_distance(a: &Digest, b: &Digest) -> [u8; 32] {
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = a.as_bytes()[i] ^ b.as_bytes()[i];
    }
    out
}

fn leading_zero_bits(bytes: &[u8; 32]) -> u32 {
    let mut count = 0;
    for b in bytes {
        if *b == 0 {
            count += 8;
        } else {
            count += b.leading_zeros();
            break;
        }
    }
    count
}

// ---------------------------------------------------------------------------
// Routing table

/// Outcome of recording a contact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecordOutcome {
    /// New contact inserted.
    Inserted,
    /// Known contact moved to the front of its bucket.
    Refreshed,
    /// Contact is this node itself; ignored.
    IsSelf,
    /// The target bucket is full of live-looking contacts; the caller should
    /// probe the returned least-recently-seen contact and call
    /// [`RoutingTable::resolve_probe`] with the result.
    BucketFull { lru: NodeId },
    /// Accepting the contact would exceed the per-IP identifier cap.
    PerIpLimit,
}

/// 256 buckets of contacts; bucket `b` holds identifiers sharing exactly `b`
/// leading bits with this node. Most recently seen contacts sit at the front.
#[derive(Debug, Clone)]
pub struct RoutingTable {
    self_id: NodeId,
    buckets: Vec<Vec<NodeId>>,
    ip_counts: BTreeMap<u32, usize>,
    k: usize,
    max_ids_per_ip: usize,
}

impl RoutingTable {
    pub fn new(self_id: NodeId, params: &DhtParams) -> RoutingTable {
        RoutingTable {
            self_id,
            buckets: vec![Vec::new(); 256],
            ip_counts: BTreeMap::new(),
            k: params.k,
            max_ids_per_ip: params.max_ids_per_ip,
        }
    }

    pub fn self_id(&self) -> &NodeId {
        &self.self_id
    }

    fn bucket_index(&self, id: &Digest) -> usize {
        (leading_zero_bits(&xor_distance(&self.self_id.id, id)) as usize).min(255)
    }

    pub fn contains(&self, id: &Digest) -> bool {
        self.buckets[self.bucket_index(id)]
            .iter()
            .any(|c| &c.id == id)
    }

    pub fn len(&self) -> usize {
        self.buckets.iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contacts(&self) -> impl Iterator<Item = &NodeId> {
        self.buckets.iter().flatten()
    }

    pub fn ip_count(&self, ip: u32) -> usize {
        self.ip_counts.get(&ip).copied().unwrap_or(0)
    }

    pub fn record(&mut self, contact: NodeId) -> RecordOutcome {
        if contact.id == self.self_id.id {
            return RecordOutcome::IsSelf;
        }
        let idx = self.bucket_index(&contact.id);
        if let Some(pos) = self.buckets[idx].iter().position(|c| c.id == contact.id) {
            let c = self.buckets[idx].remove(pos);
            self.buckets[idx].insert(0, c);
            return RecordOutcome::Refreshed;
        }
        if self.ip_count(contact.endpoint.ip) >= self.max_ids_per_ip {
            return RecordOutcome::PerIpLimit;
        }
        if self.buckets[idx].len() >= self.k {
            let lru = *self.buckets[idx].last().expect("bucket is full");
            return RecordOutcome::BucketFull { lru };
        }
        *self.ip_counts.entry(contact.endpoint.ip).or_insert(0) += 1;
        self.buckets[idx].insert(0, contact);
        RecordOutcome::Inserted
    }

    /// Settle a pending bucket-full probe. When the probed contact answered,
    /// it is refreshed and the candidate is dropped; when it stayed silent,
    /// it is evicted and the candidate takes its place (subject to the per-IP
    /// cap). Returns true iff the candidate ended up in the table.
    pub fn resolve_probe(&mut self, lru: &NodeId, candidate: NodeId, lru_alive: bool) -> bool {
        if lru_alive {
            self.record(*lru);
            return false;
        }
        self.remove(&lru.id);
        matches!(self.record(candidate), RecordOutcome::Inserted)
    }

    pub fn remove(&mut self, id: &Digest) {
        let idx = self.bucket_index(id);
        if let Some(pos) = self.buckets[idx].iter().position(|c| &c.id == id) {
            let removed = self.buckets[idx].remove(pos);
            let count = self
                .ip_counts
                .get_mut(&removed.endpoint.ip)
                .expect("ip count tracked");
            *count -= 1;
            if *count == 0 {
                self.ip_counts.remove(&removed.endpoint.ip);
            }
        }
    }

    /// The `n` known contacts closest to `target`, ascending by XOR distance.
    /// The node itself is never listed.
    pub fn closest(&self, target: &Digest, n: usize) -> Vec<NodeId> {
        let mut all: Vec<(NodeId, [u8; 32])> = self
            .contacts()
            .map(|c| (*c, xor_distance(&c.id, target)))
            .collect();
        all.sort_by(|a, b| a.1.cmp(&b.1));
        all.truncate(n);
        all.into_iter().map(|(c, _)| c).collect()
    }

    /// True iff this node is among the `r` closest identifiers it knows of
    /// for `key` (itself included as a candidate) — the overlay's notion of
    /// being a neighbor of a key, shared by storage rule 2, gateway duty and
    /// local packet delivery.
    pub fn is_neighbor_of(&self, key: &Digest, r: usize) -> bool {
        let own = xor_distance(&self.self_id.id, key);
        let closer = self
            .contacts()
            .filter(|c| xor_distance(&c.id, key) < own)
            .count();
        closer < r
    }
}

// ---------------------------------------------------------------------------
// Storage targets and payloads

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ResType {
    Single,
    Multi,
}

impl ResType {
    pub fn as_str(&self) -> &'static str {
        match self {
            ResType::Single => "single",
            ResType::Multi => "multi",
        }
    }

    pub fn parse(s: &str) -> Option<ResType> {
        match s {
            "single" => Some(ResType::Single),
            "multi" => Some(ResType::Multi),
            _ => None,
        }
    }
}

/// A storage address: `[owner, resource, restype]`. The owner of user-scoped
/// resources is the username; hashtag and word collections use the tag/word
/// itself as owner.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct StorageTarget {
    pub owner: String,
    pub resource: String,
    pub restype: ResType,
}

impl StorageTarget {
    pub fn new(owner: impl Into<String>, resource: impl Into<String>, restype: ResType) -> Self {
        StorageTarget {
            owner: owner.into(),
            resource: resource.into(),
            restype,
        }
    }

    pub fn encode_value(&self) -> Value {
        Value::list(vec![
            Value::str(&self.owner),
            Value::str(&self.resource),
            Value::str(self.restype.as_str()),
        ])
    }

    pub fn decode(r: &mut Reader) -> Result<StorageTarget, DecodeError> {
        let arity = r.list_len()?;
        if arity != 3 {
            return Err(DecodeError::BadField("target arity"));
        }
        let owner = r.string()?;
        let resource = r.string()?;
        let restype =
            ResType::parse(&r.string()?).ok_or(DecodeError::BadField("restype literal"))?;
        Ok(StorageTarget {
            owner,
            resource,
            restype,
        })
    }

    pub fn is_tracker(&self) -> bool {
        self.resource == "tracker"
    }
}

/// `H(target)` — where a PUT must be addressed.
pub fn storage_key(target: &StorageTarget) -> Digest {
    hash_value(&target.encode_value())
}

/// The PUT payload: `[target, value, time, seq]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PutPayload {
    pub target: StorageTarget,
    pub value: Vec<u8>,
    pub time: u64,
    pub seq: u64,
}

impl PutPayload {
    pub fn encode_value(&self) -> Value {
        Value::list(vec![
            self.target.encode_value(),
            Value::Bytes(self.value.clone()),
            Value::U64(self.time),
            Value::U64(self.seq),
        ])
    }

    pub fn decode(r: &mut Reader) -> Result<PutPayload, DecodeError> {
        let arity = r.list_len()?;
        if arity != 4 {
            return Err(DecodeError::BadField("put arity"));
        }
        let target = StorageTarget::decode(r)?;
        let value = r.bytes()?;
        let time = r.u64()?;
        let seq = r.u64()?;
        Ok(PutPayload {
            target,
            value,
            time,
            seq,
        })
    }
}

// ---------------------------------------------------------------------------
// Store

/// PUT rejection reasons, one per acceptance rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutReject {
    /// Rule 1: destination key is not the hash of the target.
    BadKey,
    /// Rule 2: this node is not a neighbor of the key.
    NotNeighbor,
    /// Tracker resources are never writable from the network.
    ReadOnly,
    /// Rule 3 (single only): signer is not the owner.
    NotOwner,
    /// Rule 4 (single only): sequence number not greater than stored.
    StaleSeq,
    /// Rule 5: timestamp in the future beyond allowed skew.
    FutureTime,
}

impl PutReject {
    pub fn code(&self) -> &'static str {
        match self {
            PutReject::BadKey => "bad-key",
            PutReject::NotNeighbor => "not-neighbor",
            PutReject::ReadOnly => "read-only",
            PutReject::NotOwner => "not-owner",
            PutReject::StaleSeq => "stale-seq",
            PutReject::FutureTime => "future-time",
        }
    }
}

/// Facts about the arriving packet that the rules consult.
#[derive(Debug, Clone)]
pub struct PutContext {
    pub dst: Digest,
    pub signer: Username,
    pub now: u64,
    /// Whether the receiving node is among the R closest it knows for `dst`.
    pub is_neighbor: bool,
}

#[derive(Debug, Clone)]
pub struct SingleEntry {
    pub value: Vec<u8>,
    pub time: u64,
    pub seq: u64,
    last_access: u64,
}

#[derive(Debug, Clone)]
pub struct MultiEntry {
    pub value: Vec<u8>,
    pub time: u64,
    pub signer: Username,
    digest: Digest,
    last_access: u64,
}

#[derive(Debug, Clone, Default)]
struct ResourceSlot {
    single: Option<SingleEntry>,
    multi: Vec<MultiEntry>,
}

/// What a GET returns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GetResult {
    /// The owner-maintained value.
    Single { value: Vec<u8>, time: u64, seq: u64 },
    /// Collected values, newest first.
    Multi(Vec<(Vec<u8>, u64, Username)>),
    NotFound,
}

/// Per-node resource store. Keys map to `(owner, resource)` slots; a slot may
/// hold an authenticated single value, a multi collection, or both, in which
/// case the single value shadows the collection on reads.
#[derive(Debug, Clone, Default)]
pub struct NodeStore {
    slots: BTreeMap<(String, String), ResourceSlot>,
    key_index: BTreeMap<Digest, (String, String)>,
    access_clock: u64,
}

impl NodeStore {
    pub fn new() -> NodeStore {
        NodeStore::default()
    }

    fn tick_access(&mut self) -> u64 {
        self.access_clock += 1;
        self.access_clock
    }

    /// Total stored values (singles plus multi entries).
    pub fn value_count(&self) -> usize {
        self.slots
            .values()
            .map(|s| s.multi.len() + usize::from(s.single.is_some()))
            .sum()
    }

    /// Apply the storage acceptance rules and mutate the store on success.
    /// The rules run in a fixed documented order: bad-key, not-neighbor,
    /// read-only, not-owner, stale-seq, future-time.
    pub fn handle_put(
        &mut self,
        ctx: &PutContext,
        put: &PutPayload,
        params: &DhtParams,
    ) -> Result<(), PutReject> {
        if ctx.dst != storage_key(&put.target) {
            return Err(PutReject::BadKey);
        }
        if !ctx.is_neighbor {
            return Err(PutReject::NotNeighbor);
        }
        if put.target.is_tracker() {
            return Err(PutReject::ReadOnly);
        }
        let slot_key = (put.target.owner.clone(), put.target.resource.clone());
        if put.target.restype == ResType::Single {
            if ctx.signer.as_str() != put.target.owner {
                return Err(PutReject::NotOwner);
            }
            if let Some(existing) = self.slots.get(&slot_key).and_then(|s| s.single.as_ref()) {
                if put.seq <= existing.seq {
                    return Err(PutReject::StaleSeq);
                }
            }
        }
        if put.time > ctx.now + params.clock_skew {
            return Err(PutReject::FutureTime);
        }

        let access = self.tick_access();
        let slot = self.slots.entry(slot_key.clone()).or_default();
        match put.target.restype {
            ResType::Single => {
                slot.single = Some(SingleEntry {
                    value: put.value.clone(),
                    time: put.time,
                    seq: put.seq,
                    last_access: access,
                });
            }
            ResType::Multi => {
                let digest = crate::crypto::hash(&put.value);
                if let Some(pos) = slot.multi.iter().position(|e| e.digest == digest) {
                    let mut entry = slot.multi.remove(pos);
                    entry.time = put.time;
                    entry.last_access = access;
                    slot.multi.insert(0, entry);
                } else {
                    slot.multi.insert(
                        0,
                        MultiEntry {
                            value: put.value.clone(),
                            time: put.time,
                            signer: ctx.signer.clone(),
                            digest,
                            last_access: access,
                        },
                    );
                    if slot.multi.len() > params.multi_cap {
                        // Drop the least recently used entry.
                        let victim = slot
                            .multi
                            .iter()
                            .enumerate()
                            .min_by_key(|(_, e)| e.last_access)
                            .map(|(i, _)| i)
                            .expect("nonempty");
                        slot.multi.remove(victim);
                    }
                }
            }
        }
        self.key_index.insert(ctx.dst, slot_key);
        Ok(())
    }

    /// Serve a GET. An authenticated single value takes precedence over any
    /// multi values stored for the same `(owner, resource)`.
    pub fn handle_get(&mut self, key: &Digest) -> GetResult {
        let access = self.tick_access();
        let Some(slot_key) = self.key_index.get(key).cloned() else {
            return GetResult::NotFound;
        };
        let Some(slot) = self.slots.get_mut(&slot_key) else {
            return GetResult::NotFound;
        };
        if let Some(single) = &mut slot.single {
            single.last_access = access;
            return GetResult::Single {
                value: single.value.clone(),
                time: single.time,
                seq: single.seq,
            };
        }
        if slot.multi.is_empty() {
            return GetResult::NotFound;
        }
        for e in &mut slot.multi {
            e.last_access = access;
        }
        GetResult::Multi(
            slot.multi
                .iter()
                .map(|e| (e.value.clone(), e.time, e.signer.clone()))
                .collect(),
        )
    }

    /// Stored sequence number for a key, if a single entry exists.
    pub fn stored_seq(&self, key: &Digest) -> Option<u64> {
        let slot_key = self.key_index.get(key)?;
        self.slots.get(slot_key)?.single.as_ref().map(|s| s.seq)
    }

    /// Drop entries past their TTL, then enforce the store cap by evicting
    /// least-recently-accessed multi entries first, singles second. Returns
    /// the number of values removed.
    pub fn evict_expired(&mut self, now: u64, params: &DhtParams) -> usize {
        let mut removed = 0;
        for slot in self.slots.values_mut() {
            if let Some(single) = &slot.single {
                if single.time + params.ttl < now {
                    slot.single = None;
                    removed += 1;
                }
            }
            let before = slot.multi.len();
            slot.multi.retain(|e| e.time + params.ttl >= now);
            removed += before - slot.multi.len();
        }

        while self.value_count() > params.store_cap {
            // LRU among multi entries first.
            let victim = self
                .slots
                .iter()
                .flat_map(|(k, s)| s.multi.iter().map(move |e| (e.last_access, k.clone())))
                .min();
            if let Some((access, key)) = victim {
                let slot = self.slots.get_mut(&key).expect("slot exists");
                let pos = slot
                    .multi
                    .iter()
                    .position(|e| e.last_access == access)
                    .expect("entry exists");
                slot.multi.remove(pos);
                removed += 1;
                continue;
            }
            let victim = self
                .slots
                .iter()
                .filter_map(|(k, s)| s.single.as_ref().map(|e| (e.last_access, k.clone())))
                .min();
            match victim {
                Some((_, key)) => {
                    self.slots.get_mut(&key).expect("slot exists").single = None;
                    removed += 1;
                }
                None => break,
            }
        }

        self.slots
            .retain(|_, s| s.single.is_some() || !s.multi.is_empty());
        let live: BTreeSet<(String, String)> = self.slots.keys().cloned().collect();
        self.key_index.retain(|_, v| live.contains(v));
        removed
    }
}

// ---------------------------------------------------------------------------
// Routed packets

/// A signed overlay packet. `src` is the originating node and never changes
/// in flight; `signer` is the user whose registered key must verify the
/// payload, and may well sit on a different node than the one retransmitting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DhtPacket {
    pub dst: Digest,
    pub src: Digest,
    pub signed_payload: SignedContent,
    pub signer: Username,
    pub hop_count: u32,
}

impl DhtPacket {
    pub fn encode_value(&self) -> Value {
        Value::list(vec![
            Value::Digest(self.dst),
            Value::Digest(self.src),
            self.signed_payload.encode_value(),
            Value::str(self.signer.as_str()),
            Value::U64(self.hop_count as u64),
        ])
    }

    pub fn encode(&self) -> Vec<u8> {
        canonical_encode(&self.encode_value())
    }

    pub fn decode(r: &mut Reader) -> Result<DhtPacket, DecodeError> {
        let arity = r.list_len()?;
        if arity != 5 {
            return Err(DecodeError::BadField("packet arity"));
        }
        let dst = r.digest()?;
        let src = r.digest()?;
        let sp_arity = r.list_len()?;
        if sp_arity != 3 {
            return Err(DecodeError::BadField("signed content arity"));
        }
        let signature = r.bytes()?;
        let payload = r.bytes()?;
        let hint =
            Username::parse(&r.string()?).map_err(|_| DecodeError::BadField("signer hint"))?;
        let signer = Username::parse(&r.string()?).map_err(|_| DecodeError::BadField("signer"))?;
        let hop_count = r.u64()?;
        if hop_count > u32::MAX as u64 {
            return Err(DecodeError::BadField("hop count"));
        }
        Ok(DhtPacket {
            dst,
            src,
            signed_payload: SignedContent {
                signature,
                payload,
                signer_hint: hint,
            },
            signer,
            hop_count: hop_count as u32,
        })
    }

    /// Dedup identity: stable across hops (hop_count excluded).
    pub fn dedup_digest(&self) -> Digest {
        hash_value(&Value::list(vec![
            Value::Digest(self.dst),
            Value::Digest(self.src),
            self.signed_payload.encode_value(),
            Value::str(self.signer.as_str()),
        ]))
    }
}

/// Where a routed packet goes next from this node's point of view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RouteAction {
    /// This node is a neighbor of the destination: handle the payload locally
    /// and still fan out so the other neighbors converge.
    DeliverLocal { forward: Vec<NodeId> },
    /// Not a neighbor: pass the packet toward the key.
    Forward { next: Vec<NodeId> },
}

/// Decide local delivery vs forwarding. Signature and hop checks happen
/// before this; here only the distance relation matters.
pub fn route_decision(table: &RoutingTable, dst: &Digest, params: &DhtParams) -> RouteAction {
    let next = table.closest(dst, params.alpha);
    if table.is_neighbor_of(dst, params.r) {
        RouteAction::DeliverLocal { forward: next }
    } else {
        RouteAction::Forward { next }
    }
}

// ---------------------------------------------------------------------------
// Iterative lookup

/// Driver state for one iterative FIND_NODE toward a target key. The caller
/// owns messaging: it sends queries to every node returned in
/// [`LookupStep::Query`] and feeds responses (or failures) back in.
#[derive(Debug, Clone)]
pub struct LookupState {
    target: Digest,
    alpha: usize,
    r: usize,
    discovered: BTreeMap<[u8; 32], NodeId>,
    queried: BTreeSet<Digest>,
    inflight: BTreeSet<Digest>,
    prefix_before_round: Option<Vec<[u8; 32]>>,
    done: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LookupStep {
    /// Send FIND_NODE to these contacts.
    Query(Vec<NodeId>),
    /// Converged; the R closest discovered contacts.
    Done(Vec<NodeId>),
    /// Responses still outstanding; nothing to do yet.
    Wait,
}

impl LookupState {
    /// `local` is the looking node itself: part of the network-wide result
    /// set, but never queried (its own table provided the seeds).
    pub fn new(
        target: Digest,
        local: Option<NodeId>,
        seeds: Vec<NodeId>,
        params: &DhtParams,
    ) -> (LookupState, LookupStep) {
        let mut state = LookupState {
            target,
            alpha: params.alpha,
            r: params.r,
            discovered: BTreeMap::new(),
            queried: BTreeSet::new(),
            inflight: BTreeSet::new(),
            prefix_before_round: None,
            done: false,
        };
        if let Some(me) = local {
            state.discovered.insert(xor_distance(&me.id, &target), me);
            state.queried.insert(me.id);
        }
        for seed in seeds {
            state
                .discovered
                .insert(xor_distance(&seed.id, &target), seed);
        }
        let step = state.start_round();
        (state, step)
    }

    pub fn target(&self) -> &Digest {
        &self.target
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// The R closest contacts discovered so far.
    pub fn result(&self) -> Vec<NodeId> {
        self.discovered.values().take(self.r).copied().collect()
    }

    /// Distances of the R closest discovered contacts. Discovery only adds
    /// entries, so this prefix improves monotonically.
    fn result_prefix(&self) -> Vec<[u8; 32]> {
        self.discovered.keys().take(self.r).copied().collect()
    }

    fn start_round(&mut self) -> LookupStep {
        let batch: Vec<NodeId> = self
            .discovered
            .values()
            .filter(|c| !self.queried.contains(&c.id))
            .take(self.alpha)
            .copied()
            .collect();
        if batch.is_empty() {
            self.done = true;
            return LookupStep::Done(self.result());
        }
        self.prefix_before_round = Some(self.result_prefix());
        for c in &batch {
            self.queried.insert(c.id);
            self.inflight.insert(c.id);
        }
        LookupStep::Query(batch)
    }

    fn round_settled(&mut self) -> LookupStep {
        if !self.inflight.is_empty() {
            return LookupStep::Wait;
        }
        // Keep going while rounds improve the replica set; once a round
        // brings nothing closer, finish by querying any of the R closest
        // that were never asked (their answers could still displace the
        // set), then conclude.
        let improved = Some(self.result_prefix()) != self.prefix_before_round;
        let unqueried_in_result = self
            .discovered
            .values()
            .take(self.r)
            .any(|c| !self.queried.contains(&c.id));
        if improved || unqueried_in_result {
            return self.start_round();
        }
        self.done = true;
        LookupStep::Done(self.result())
    }

    pub fn on_response(&mut self, from: &Digest, contacts: Vec<NodeId>) -> LookupStep {
        if self.done {
            return LookupStep::Done(self.result());
        }
        self.inflight.remove(from);
        for c in contacts {
            self.discovered.insert(xor_distance(&c.id, &self.target), c);
        }
        self.round_settled()
    }

    pub fn on_failure(&mut self, from: &Digest) -> LookupStep {
        if self.done {
            return LookupStep::Done(self.result());
        }
        self.inflight.remove(from);
        self.round_settled()
    }
}
