//! The full protocol node: chain registry, DHT overlay, swarms and microblog
//! semantics wired into one [`Actor`] for the simulator.
//!
//! All node state lives in ordered containers and every random draw comes
//! from the node's seeded stream, so a simulation run is a pure function of
//! (seed, scenario).

use std::collections::{BTreeMap, BTreeSet};

use rand_core::RngCore;

use crate::chain::{
    self, user_id, ApplyOutcome, Block, ChainParams, ChainState, PromotedMessage, UserReg,
    Username,
};
use crate::crypto::{self, Digest};
use crate::dht::{
    self, node_id, DhtPacket, DhtParams, Endpoint, GetResult, LookupState, LookupStep, NodeId,
    NodeStore, PutContext, PutPayload, RecordOutcome, RouteAction, RoutingTable, StorageTarget,
};
use crate::encode::Value;
use crate::microblog::{
    self, MicroblogParams, PlanAction, PostError, PostKind, SideEffectPlan, UserAccount, UserPost,
};
use crate::rng::uniform;
use crate::simnet::{Actor, Ctx, TimerId};
use crate::swarm::{self, Role, SwarmFrame, SwarmId, SwarmKind, SwarmMembership, SwarmParams};
use crate::wire::{get_resp_sign_payload, GetRespBody, Message, RoutedPayload};

/// Everything tunable about a node, bundled.
#[derive(Debug, Clone, Default)]
pub struct ProtocolParams {
    pub chain: ChainParams,
    pub dht: DhtParams,
    pub swarm: SwarmParams,
    pub blog: MicroblogParams,
}

const PROBE_TIMEOUT: u64 = 8;
const QUERY_TIMEOUT: u64 = 30;

#[derive(Debug, Clone)]
enum TimerPurpose {
    MinerPoll,
    Probe { nonce: u64 },
    LookupQuery { lookup: u64, queried: Digest },
    GetDeadline { get: u64 },
    SwarmRetry { swarm_key: Digest },
}

#[derive(Debug, Clone)]
enum LookupPurpose {
    Bootstrap,
    Api,
    TrackerNotify { user: Username, swarm_key: Digest },
    GetFanout { get: u64 },
    Listener { user: Username },
}

struct LookupTask {
    state: LookupState,
    purpose: LookupPurpose,
}

#[derive(Debug, Clone)]
enum GetPurpose {
    FetchPost { user: Username, k: u64 },
    FetchReplies { user: Username, k: u64 },
    FetchHashtag { tag: String },
    FetchWord { word: String },
    FetchMentions { user: Username },
    TrackerJoin { swarm_key: Digest, user: Username },
}

struct GetTask {
    key: Digest,
    purpose: GetPurpose,
    outstanding: BTreeSet<Endpoint>,
    lookup_pending: bool,
    collected: Vec<(Vec<u8>, u64, Username)>,
    tracker_peers: Vec<Endpoint>,
}

/// Results of explicit fetches, for inspection by the harness.
#[derive(Debug, Clone, Default)]
pub struct FetchResults {
    pub posts: BTreeMap<(Username, u64), Option<UserPost>>,
    pub replies: BTreeMap<(Username, u64), Vec<UserPost>>,
    pub hashtags: BTreeMap<String, Vec<UserPost>>,
    pub words: BTreeMap<String, Vec<UserPost>>,
    pub mentions: BTreeMap<Username, Vec<UserPost>>,
}

/// A decrypted direct message, recorded by the recipient's node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DmRecord {
    pub sender: Username,
    pub k: u64,
    pub plaintext: Vec<u8>,
}

#[derive(Debug, Clone, Default)]
pub struct NodeMetrics {
    pub blocks_mined: u64,
    pub blocks_accepted: u64,
    pub blocks_rejected: BTreeMap<&'static str, u64>,
    pub regs_pending: u64,
    pub regs_rejected: BTreeMap<&'static str, u64>,
    pub puts_accepted: u64,
    pub puts_rejected: BTreeMap<&'static str, u64>,
    pub packets_dropped_signature: u64,
    pub packets_dropped_hops: u64,
    pub packets_duplicate: u64,
    pub haves_accepted: u64,
    pub haves_duplicate: u64,
    pub haves_rejected: BTreeMap<&'static str, u64>,
    pub pieces_rejected: u64,
    pub malformed: u64,
}

fn bump(map: &mut BTreeMap<&'static str, u64>, code: &'static str) {
    *map.entry(code).or_insert(0) += 1;
}

/// A simulated protocol node.
pub struct ProtocolNode {
    endpoint: Endpoint,
    id: NodeId,
    params: ProtocolParams,
    bootstrap: Vec<Endpoint>,
    /// Mean ticks between blocks when auto-mining (seeded geometric trials).
    auto_mine_interval: Option<u64>,

    chain: ChainState,
    pending_regs: Vec<UserReg>,
    seen_regs: BTreeSet<Digest>,
    seen_blocks: BTreeSet<Digest>,
    requested_blocks: BTreeSet<Digest>,
    pending_promo: Option<PromotedMessage>,

    table: RoutingTable,
    store: NodeStore,
    seen_packets: BTreeSet<Digest>,
    pending_probes: BTreeMap<u64, (NodeId, NodeId)>,
    timers: BTreeMap<TimerId, TimerPurpose>,
    lookups: BTreeMap<u64, LookupTask>,
    gets: BTreeMap<u64, GetTask>,
    lookup_results: BTreeMap<u64, Vec<NodeId>>,
    next_req: u64,

    swarms: BTreeMap<Digest, SwarmMembership>,
    tracker_index: BTreeMap<Digest, Digest>,
    tracker_notified: BTreeSet<Digest>,
    seen_haves: BTreeSet<Digest>,

    accounts: BTreeMap<Username, UserAccount>,
    outboxes: BTreeMap<Username, BTreeMap<u64, Vec<u8>>>,
    mentions: BTreeMap<Username, Vec<UserPost>>,
    mention_digests: BTreeSet<Digest>,
    dms: BTreeMap<Username, Vec<DmRecord>>,
    /// Listener duty this node performs for others: user -> forward targets.
    forwards: BTreeMap<Username, BTreeSet<Endpoint>>,
    pending_challenges: BTreeMap<(Endpoint, Username), Vec<u8>>,
    /// Listeners this node has acquired for its own users.
    listeners_acquired: BTreeMap<Username, BTreeSet<Endpoint>>,
    listener_started: BTreeSet<Username>,

    fetched: FetchResults,
    metrics: NodeMetrics,
}

impl ProtocolNode {
    pub fn new(
        endpoint: Endpoint,
        params: ProtocolParams,
        bootstrap: Vec<Endpoint>,
        auto_mine_interval: Option<u64>,
    ) -> ProtocolNode {
        let id = node_id(endpoint);
        let table = RoutingTable::new(id, &params.dht);
        let chain = ChainState::new(params.chain.clone());
        ProtocolNode {
            endpoint,
            id,
            params,
            bootstrap,
            auto_mine_interval,
            chain,
            pending_regs: Vec::new(),
            seen_regs: BTreeSet::new(),
            seen_blocks: BTreeSet::new(),
            requested_blocks: BTreeSet::new(),
            pending_promo: None,
            table,
            store: NodeStore::new(),
            seen_packets: BTreeSet::new(),
            pending_probes: BTreeMap::new(),
            timers: BTreeMap::new(),
            lookups: BTreeMap::new(),
            gets: BTreeMap::new(),
            lookup_results: BTreeMap::new(),
            next_req: 0,
            swarms: BTreeMap::new(),
            tracker_index: BTreeMap::new(),
            tracker_notified: BTreeSet::new(),
            seen_haves: BTreeSet::new(),
            accounts: BTreeMap::new(),
            outboxes: BTreeMap::new(),
            mentions: BTreeMap::new(),
            mention_digests: BTreeSet::new(),
            dms: BTreeMap::new(),
            forwards: BTreeMap::new(),
            pending_challenges: BTreeMap::new(),
            listeners_acquired: BTreeMap::new(),
            listener_started: BTreeSet::new(),
            fetched: FetchResults::default(),
            metrics: NodeMetrics::default(),
        }
    }

    // -- inspection --------------------------------------------------------

    pub fn endpoint(&self) -> Endpoint {
        self.endpoint
    }

    pub fn node_id(&self) -> &NodeId {
        &self.id
    }

    pub fn chain(&self) -> &ChainState {
        &self.chain
    }

    pub fn table(&self) -> &RoutingTable {
        &self.table
    }

    pub fn metrics(&self) -> &NodeMetrics {
        &self.metrics
    }

    pub fn fetched(&self) -> &FetchResults {
        &self.fetched
    }

    pub fn account(&self, user: &Username) -> Option<&UserAccount> {
        self.accounts.get(user)
    }

    pub fn accounts(&self) -> impl Iterator<Item = &UserAccount> {
        self.accounts.values()
    }

    pub fn dms_for(&self, user: &Username) -> &[DmRecord] {
        self.dms.get(user).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn mentions_for(&self, user: &Username) -> &[UserPost] {
        self.mentions.get(user).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn listeners_for(&self, user: &Username) -> usize {
        self.listeners_acquired.get(user).map(BTreeSet::len).unwrap_or(0)
    }

    pub fn forwards_for(&self, user: &Username) -> usize {
        self.forwards.get(user).map(BTreeSet::len).unwrap_or(0)
    }

    pub fn swarm_membership(&self, swarm_key: &Digest) -> Option<&SwarmMembership> {
        self.swarms.get(swarm_key)
    }

    pub fn has_piece(&self, user: &Username, k: u64) -> bool {
        self.swarms
            .get(&SwarmId::user(user).id)
            .is_some_and(|m| m.has_piece(k))
    }

    pub fn piece_bytes(&self, user: &Username, k: u64) -> Option<&Vec<u8>> {
        self.swarms.get(&SwarmId::user(user).id)?.piece(k)
    }

    pub fn outbox_bytes(&self, user: &Username, k: u64) -> Option<&Vec<u8>> {
        self.outboxes.get(user)?.get(&k)
    }

    pub fn lookup_result(&self, req: u64) -> Option<&Vec<NodeId>> {
        self.lookup_results.get(&req)
    }

    pub fn store_lookup(&mut self, key: &Digest) -> GetResult {
        self.store.handle_get(key)
    }

    pub fn store_value_count(&self) -> usize {
        self.store.value_count()
    }

    pub fn pending_reg_count(&self) -> usize {
        self.pending_regs.len()
    }

    /// Gateway obligation: neighbor of the swarm key or its tracker key.
    pub fn gateway_duty_check(&self, user: &Username) -> bool {
        let r = self.params.dht.r;
        self.table.is_neighbor_of(&SwarmId::user(user).id, r)
            || self.table.is_neighbor_of(&swarm::tracker_key(user), r)
    }

    pub fn evict_expired(&mut self, now: u64) -> usize {
        self.store.evict_expired(now, &self.params.dht)
    }

    // -- small helpers ------------------------------------------------------

    fn next_req(&mut self) -> u64 {
        self.next_req += 1;
        self.next_req
    }

    fn send_msg(&self, ctx: &mut Ctx, dst: Endpoint, msg: &Message) {
        ctx.send(dst, msg.encode());
    }

    fn sponsor_name(&self) -> Username {
        self.accounts
            .keys()
            .next()
            .cloned()
            .unwrap_or_else(|| Username::parse("miner").expect("static name"))
    }

    /// Record a peer contact, driving the bucket-probe protocol when full.
    fn note_contact(&mut self, ctx: &mut Ctx, endpoint: Endpoint) {
        if endpoint == self.endpoint {
            return;
        }
        let contact = node_id(endpoint);
        match self.table.record(contact) {
            RecordOutcome::BucketFull { lru } => {
                let already_probing = self.pending_probes.values().any(|(l, _)| l.id == lru.id);
                if !already_probing {
                    let nonce = self.next_req();
                    self.pending_probes.insert(nonce, (lru, contact));
                    self.send_msg(ctx, lru.endpoint, &Message::Ping { nonce });
                    let timer = ctx.set_timer(PROBE_TIMEOUT);
                    self.timers.insert(timer, TimerPurpose::Probe { nonce });
                }
            }
            RecordOutcome::PerIpLimit => {}
            _ => {}
        }
    }

    // -- lookups ------------------------------------------------------------

    fn start_lookup(&mut self, ctx: &mut Ctx, target: Digest, purpose: LookupPurpose) -> u64 {
        let req = self.next_req();
        let seeds = self.table.closest(&target, self.params.dht.alpha);
        let (state, step) = LookupState::new(target, Some(self.id), seeds, &self.params.dht);
        self.lookups.insert(req, LookupTask { state, purpose });
        self.drive_lookup(ctx, req, step);
        req
    }

    fn drive_lookup(&mut self, ctx: &mut Ctx, req: u64, step: LookupStep) {
        match step {
            LookupStep::Wait => {}
            LookupStep::Query(batch) => {
                let Some(task) = self.lookups.get(&req) else {
                    return;
                };
                let target = *task.state.target();
                for contact in batch {
                    self.send_msg(ctx, contact.endpoint, &Message::FindNode { req, target });
                    let timer = ctx.set_timer(QUERY_TIMEOUT);
                    self.timers.insert(
                        timer,
                        TimerPurpose::LookupQuery {
                            lookup: req,
                            queried: contact.id,
                        },
                    );
                }
            }
            LookupStep::Done(result) => self.finish_lookup(ctx, req, result),
        }
    }

    fn finish_lookup(&mut self, ctx: &mut Ctx, req: u64, result: Vec<NodeId>) {
        let Some(task) = self.lookups.remove(&req) else {
            return;
        };
        match task.purpose {
            LookupPurpose::Bootstrap => {
                for contact in result.iter().take(self.params.dht.alpha) {
                    if contact.endpoint != self.endpoint {
                        self.send_msg(ctx, contact.endpoint, &Message::TipRequest);
                    }
                }
            }
            LookupPurpose::Api => {
                self.lookup_results.insert(req, result);
            }
            LookupPurpose::TrackerNotify { user, swarm_key } => {
                for contact in result {
                    if contact.endpoint != self.endpoint {
                        self.send_msg(
                            ctx,
                            contact.endpoint,
                            &Message::TrackerNotify {
                                user: user.clone(),
                                swarm_key,
                            },
                        );
                    }
                }
            }
            LookupPurpose::GetFanout { get } => {
                let Some(task) = self.gets.get_mut(&get) else {
                    return;
                };
                task.lookup_pending = false;
                let key = task.key;
                let targets: Vec<Endpoint> = result
                    .iter()
                    .map(|c| c.endpoint)
                    .filter(|e| *e != self.endpoint)
                    .collect();
                for t in &targets {
                    task.outstanding.insert(*t);
                }
                if targets.is_empty() {
                    self.settle_get(ctx, get);
                    return;
                }
                for t in targets {
                    self.send_msg(ctx, t, &Message::GetReq { req: get, key });
                }
                let timer = ctx.set_timer(QUERY_TIMEOUT);
                self.timers.insert(timer, TimerPurpose::GetDeadline { get });
            }
            LookupPurpose::Listener { user } => {
                for contact in result {
                    if contact.endpoint != self.endpoint {
                        self.send_msg(
                            ctx,
                            contact.endpoint,
                            &Message::ListenerReq {
                                target: user.clone(),
                            },
                        );
                    }
                }
            }
        }
    }

    /// Start an API-level iterative lookup; the result lands in
    /// [`Self::lookup_result`] once converged.
    pub fn iterative_find(&mut self, ctx: &mut Ctx, target: Digest) -> u64 {
        self.start_lookup(ctx, target, LookupPurpose::Api)
    }

    // -- GETs -----------------------------------------------------------------

    fn start_get(&mut self, ctx: &mut Ctx, key: Digest, purpose: GetPurpose) -> u64 {
        let get = self.next_req();
        self.gets.insert(
            get,
            GetTask {
                key,
                purpose,
                outstanding: BTreeSet::new(),
                lookup_pending: true,
                collected: Vec::new(),
                tracker_peers: Vec::new(),
            },
        );
        // Local view first: this node may itself be a neighbor of the key.
        let local = self.local_get_body(&key);
        self.absorb_get_body(ctx, get, local);
        if self.gets.contains_key(&get) {
            self.start_lookup(ctx, key, LookupPurpose::GetFanout { get });
        }
        get
    }

    fn local_get_body(&mut self, key: &Digest) -> GetRespBody {
        if let Some(swarm_key) = self.tracker_index.get(key) {
            if let Some(membership) = self.swarms.get(swarm_key) {
                return GetRespBody::Tracker {
                    peers: membership.tracker_peers(),
                };
            }
        }
        match self.store.handle_get(key) {
            GetResult::Single { value, time, seq } => GetRespBody::Single { value, time, seq },
            GetResult::Multi(values) => GetRespBody::Multi { values },
            GetResult::NotFound => GetRespBody::NotFound,
        }
    }

    /// Feed one GET response body into the task; settles the task when done.
    fn absorb_get_body(&mut self, ctx: &mut Ctx, get: u64, body: GetRespBody) {
        let Some(task) = self.gets.get_mut(&get) else {
            return;
        };
        match (&task.purpose, body) {
            (GetPurpose::FetchPost { user, k }, GetRespBody::Single { value, .. }) => {
                let user = user.clone();
                let k = *k;
                if let Some(post) = microblog::verify_fetched_post(&value, &user, k, &self.chain) {
                    self.fetched.posts.insert((user.clone(), k), Some(post));
                    ctx.trace("fetch-done", format!("post {user} {k}"));
                    self.gets.remove(&get);
                }
            }
            (_, GetRespBody::Multi { values }) => {
                task.collected.extend(values);
            }
            (GetPurpose::TrackerJoin { .. }, GetRespBody::Tracker { peers }) => {
                for p in peers {
                    if !task.tracker_peers.contains(&p) {
                        task.tracker_peers.push(p);
                    }
                }
            }
            _ => {}
        }
        if let Some(task) = self.gets.get(&get) {
            if !task.lookup_pending && task.outstanding.is_empty() {
                self.settle_get(ctx, get);
            }
        }
    }

    /// Finalize a GET with whatever arrived.
    fn settle_get(&mut self, ctx: &mut Ctx, get: u64) {
        let Some(task) = self.gets.remove(&get) else {
            return;
        };
        let verified: Vec<UserPost> = {
            let mut seen = BTreeSet::new();
            task.collected
                .iter()
                .filter_map(|(bytes, _, _)| microblog::verify_collected_post(bytes, &self.chain))
                .filter(|p| seen.insert(p.digest()))
                .collect()
        };
        match task.purpose {
            GetPurpose::FetchPost { user, k } => {
                ctx.trace("fetch-done", format!("post {user} {k} missing"));
                self.fetched.posts.entry((user, k)).or_insert(None);
            }
            GetPurpose::FetchReplies { user, k } => {
                let replies: Vec<UserPost> = verified
                    .into_iter()
                    .filter(|p| p.reply_ref == Some((user.clone(), k)))
                    .collect();
                ctx.trace("fetch-done", format!("replies {user} {k} n {}", replies.len()));
                self.fetched.replies.insert((user, k), replies);
            }
            GetPurpose::FetchHashtag { tag } => {
                ctx.trace("fetch-done", format!("hashtag {tag} n {}", verified.len()));
                self.fetched.hashtags.insert(tag, verified);
            }
            GetPurpose::FetchWord { word } => {
                ctx.trace("fetch-done", format!("word {word} n {}", verified.len()));
                self.fetched.words.insert(word, verified);
            }
            GetPurpose::FetchMentions { user } => {
                ctx.trace("fetch-done", format!("mentions {user} n {}", verified.len()));
                self.fetched.mentions.insert(user, verified);
            }
            GetPurpose::TrackerJoin { swarm_key, user } => {
                if task.tracker_peers.is_empty() {
                    let timer = ctx.set_timer(self.params.swarm.retry_ticks);
                    self.timers.insert(timer, TimerPurpose::SwarmRetry { swarm_key });
                    ctx.trace("swarm-retry", format!("scheduled {user}"));
                } else {
                    let peers = task.tracker_peers.clone();
                    self.dial_swarm_peers(ctx, swarm_key, &peers);
                }
            }
        }
    }

    // -- swarms ---------------------------------------------------------------

    fn ensure_membership(&mut self, swarm: SwarmId, role: Role) -> &mut SwarmMembership {
        self.swarms
            .entry(swarm.id)
            .or_insert_with(|| SwarmMembership::new(swarm, role))
    }

    /// Subscribe to a user's swarm: query the tracker for initial peers and
    /// handshake with up to `fanout` of them.
    pub fn join_user_swarm(&mut self, ctx: &mut Ctx, user: &Username, role: Role) {
        let swarm = SwarmId::user(user);
        let swarm_key = swarm.id;
        if !self.swarms.contains_key(&swarm_key) {
            self.ensure_membership(swarm, role);
        } else if role == Role::Seeder {
            self.swarms.get_mut(&swarm_key).expect("present").role = Role::Seeder;
        }
        // Tracker-key neighbors maintain the tracker for this swarm.
        if self.table.is_neighbor_of(&swarm::tracker_key(user), self.params.dht.r) {
            self.tracker_index.insert(swarm::tracker_key(user), swarm_key);
        }
        if self.swarms[&swarm_key].peers.is_empty() {
            self.start_get(
                ctx,
                swarm::tracker_key(user),
                GetPurpose::TrackerJoin {
                    swarm_key,
                    user: user.clone(),
                },
            );
        }
    }

    pub fn join_hashtag_swarm(&mut self, ctx: &mut Ctx, tag: &str) {
        let swarm = SwarmId::hashtag(tag);
        let swarm_key = swarm.id;
        self.ensure_membership(swarm, Role::Follower);
        // Hashtag swarms have no tracker; members find each other through
        // the gateway neighbors of the hashtag key.
        let closest = self.table.closest(&swarm_key, self.params.swarm.fanout);
        let (k_max, bitmap) = self.swarms[&swarm_key].bitlist();
        for c in closest {
            self.send_msg(
                ctx,
                c.endpoint,
                &Message::Swarm(
                    SwarmFrame::Bitlist {
                        swarm: swarm_key,
                        k_max,
                        bitmap: bitmap.clone(),
                    }
                    .encode(),
                ),
            );
        }
    }

    pub fn make_seeder(&mut self, user: &Username) {
        if let Some(m) = self.swarms.get_mut(&SwarmId::user(user).id) {
            m.role = Role::Seeder;
        }
    }

    fn dial_swarm_peers(&mut self, ctx: &mut Ctx, swarm_key: Digest, peers: &[Endpoint]) {
        let fanout = self.params.swarm.fanout;
        let Some(membership) = self.swarms.get(&swarm_key) else {
            return;
        };
        let (k_max, bitmap) = membership.bitlist();
        let targets: Vec<Endpoint> = peers
            .iter()
            .copied()
            .filter(|p| *p != self.endpoint && !membership.peers.contains(p))
            .take(fanout)
            .collect();
        for peer in targets {
            self.send_msg(
                ctx,
                peer,
                &Message::Swarm(
                    SwarmFrame::Bitlist {
                        swarm: swarm_key,
                        k_max,
                        bitmap: bitmap.clone(),
                    }
                    .encode(),
                ),
            );
        }
    }

    /// Upper bound on believable piece counts for a user swarm, from the
    /// chain-coupled rate limit.
    fn k_max_bound(&self, membership: &SwarmMembership) -> u64 {
        if membership.swarm.kind != SwarmKind::User {
            return u64::MAX;
        }
        let Ok(user) = Username::parse(&membership.swarm.subject) else {
            return 0;
        };
        match self.chain.lookup_pubkey(&user) {
            Some(entry) => {
                let delta = self.chain.tip_height().saturating_sub(entry.height);
                2 * delta + 19
            }
            None => 0,
        }
    }

    fn handle_swarm_frame(&mut self, ctx: &mut Ctx, src: Endpoint, frame: SwarmFrame) {
        let swarm_key = *frame.swarm();
        if !self.swarms.contains_key(&swarm_key) {
            return;
        }
        match frame {
            SwarmFrame::Bitlist { k_max, bitmap, .. } => {
                let bound = self.k_max_bound(&self.swarms[&swarm_key]);
                let membership = self.swarms.get_mut(&swarm_key).expect("member");
                let newly_connected = !membership.peers.contains(&src);
                if newly_connected {
                    if membership.peers.len() >= self.params.swarm.max_peers {
                        return;
                    }
                    membership.peers.insert(src);
                    ctx.trace("swarm-peer", format!("{} {}", membership.swarm.subject, src));
                }
                membership.observe_k_max(k_max.min(bound));
                let wanted = membership.wanted_from(k_max.min(bound), &bitmap, &self.params.swarm);
                for k in &wanted {
                    membership.requested.insert(*k);
                }
                let (own_k_max, own_bitmap) = membership.bitlist();
                if newly_connected {
                    self.send_msg(
                        ctx,
                        src,
                        &Message::Swarm(
                            SwarmFrame::Bitlist {
                                swarm: swarm_key,
                                k_max: own_k_max,
                                bitmap: own_bitmap,
                            }
                            .encode(),
                        ),
                    );
                }
                for k in wanted {
                    self.send_msg(
                        ctx,
                        src,
                        &Message::Swarm(SwarmFrame::Request { swarm: swarm_key, k }.encode()),
                    );
                }
            }
            SwarmFrame::Have { new_k, post, .. } => {
                self.accept_post_into_swarm(ctx, swarm_key, Some(src), new_k, post);
            }
            SwarmFrame::Request { k, .. } => {
                let membership = &self.swarms[&swarm_key];
                if membership.peers.contains(&src) {
                    if let Some(data) = membership.piece(k) {
                        let data = data.clone();
                        self.send_msg(
                            ctx,
                            src,
                            &Message::Swarm(
                                SwarmFrame::Piece {
                                    swarm: swarm_key,
                                    k,
                                    data,
                                }
                                .encode(),
                            ),
                        );
                    }
                }
            }
            SwarmFrame::Piece { k, data, .. } => {
                let membership = &self.swarms[&swarm_key];
                if membership.has_piece(k) {
                    return;
                }
                let Ok(post) = UserPost::decode_bytes(&data) else {
                    self.metrics.pieces_rejected += 1;
                    return;
                };
                if post.k != k || swarm::validate_have(&post, &self.chain).is_err() {
                    self.metrics.pieces_rejected += 1;
                    ctx.trace("piece-reject", format!("k {k} from {src}"));
                    return;
                }
                let membership = self.swarms.get_mut(&swarm_key).expect("member");
                membership.store_piece(k, data.clone());
                let subject = membership.swarm.subject.clone();
                ctx.trace("piece-store", format!("{subject} {k}"));
                self.absorb_post(ctx, &post);
            }
        }
    }

    /// Common path for a post entering swarm circulation, whether through a
    /// gateway ingest (from the DHT) or a flooded "have". Stores, floods
    /// onward, and surfaces the post to local accounts.
    fn accept_post_into_swarm(
        &mut self,
        ctx: &mut Ctx,
        swarm_key: Digest,
        from: Option<Endpoint>,
        new_k: u64,
        post_bytes: Vec<u8>,
    ) {
        let Some(membership) = self.swarms.get(&swarm_key) else {
            return;
        };
        let kind = membership.swarm.kind;
        let Ok(post) = UserPost::decode_bytes(&post_bytes) else {
            self.metrics.malformed += 1;
            return;
        };
        if post.k != new_k {
            self.metrics.malformed += 1;
            return;
        }
        let have_digest = crypto::hash_value(&Value::list(vec![
            Value::Digest(swarm_key),
            Value::Digest(post.digest()),
        ]));
        if self.seen_haves.contains(&have_digest) {
            self.metrics.haves_duplicate += 1;
            return;
        }
        if let Err(reject) = swarm::validate_have(&post, &self.chain) {
            bump(&mut self.metrics.haves_rejected, reject.code());
            ctx.trace("have-reject", format!("{} k {new_k} {}", post.username, reject.code()));
            return;
        }
        self.seen_haves.insert(have_digest);
        self.metrics.haves_accepted += 1;

        let membership = self.swarms.get_mut(&swarm_key).expect("member");
        membership.observe_k_max(new_k);
        match kind {
            SwarmKind::User => {
                let floor = membership.retention_floor(&self.params.swarm);
                if new_k >= floor && !membership.has_piece(new_k) {
                    membership.store_piece(new_k, post_bytes.clone());
                    let subject = membership.swarm.subject.clone();
                    ctx.trace("have-store", format!("{subject} {new_k}"));
                }
            }
            SwarmKind::Hashtag => {
                membership.collected.insert(post.digest(), post_bytes.clone());
                let subject = membership.swarm.subject.clone();
                ctx.trace("have-store", format!("#{subject} {new_k}"));
            }
        }
        let targets = self.swarms[&swarm_key].flood_targets(from);
        for peer in targets {
            self.send_msg(
                ctx,
                peer,
                &Message::Swarm(
                    SwarmFrame::Have {
                        swarm: swarm_key,
                        new_k,
                        post: post_bytes.clone(),
                    }
                    .encode(),
                ),
            );
        }
        self.absorb_post(ctx, &post);
    }

    /// Surface a swarm-delivered post to the accounts this node operates:
    /// attempt DM decryption under every account key.
    fn absorb_post(&mut self, ctx: &mut Ctx, post: &UserPost) {
        if post.kind != PostKind::Dm {
            return;
        }
        for (user, account) in &self.accounts {
            if let Some(plaintext) = microblog::try_open_dm(&account.keys, post) {
                let records = self.dms.entry(user.clone()).or_default();
                let record = DmRecord {
                    sender: post.username.clone(),
                    k: post.k,
                    plaintext,
                };
                if !records.contains(&record) {
                    ctx.trace("dm-open", format!("{user} from {} k {}", post.username, post.k));
                    records.push(record);
                }
            }
        }
    }

    // -- routed packets ---------------------------------------------------------

    fn route_onward(&mut self, ctx: &mut Ctx, packet: &DhtPacket, targets: &[NodeId], skip: Option<Endpoint>) {
        if packet.hop_count + 1 >= self.params.dht.max_hops {
            return;
        }
        let mut forwarded = packet.clone();
        forwarded.hop_count += 1;
        for t in targets {
            if Some(t.endpoint) == skip || t.endpoint == self.endpoint {
                continue;
            }
            self.send_msg(ctx, t.endpoint, &Message::Routed(forwarded.clone()));
        }
    }

    fn handle_routed(&mut self, ctx: &mut Ctx, from: Option<Endpoint>, packet: DhtPacket) {
        if packet.hop_count >= self.params.dht.max_hops {
            self.metrics.packets_dropped_hops += 1;
            ctx.trace("route-drop", "hop-limit".to_owned());
            return;
        }
        // Every hop checks the signer's registered key before touching the
        // payload. Unknown signers cannot be verified, so their packets stop.
        let Some(entry) = self.chain.lookup_pubkey(&packet.signer) else {
            self.metrics.packets_dropped_signature += 1;
            ctx.trace("route-drop", format!("unknown-signer {}", packet.signer));
            return;
        };
        if !crypto::verify(&entry.pubkey, &packet.signed_payload) {
            self.metrics.packets_dropped_signature += 1;
            ctx.trace("route-drop", format!("bad-signature {}", packet.signer));
            return;
        }
        let Ok(payload) = RoutedPayload::decode_bytes(&packet.signed_payload.payload) else {
            self.metrics.malformed += 1;
            return;
        };

        // Mention delivery to operated accounts happens before dedup so a
        // listener-forwarded copy still lands after we routed the original.
        if let RoutedPayload::Mention(post_bytes) = &payload {
            self.deliver_mention_if_operator(ctx, &packet.dst, post_bytes);
        }

        let dedup = packet.dedup_digest();
        if !self.seen_packets.insert(dedup) {
            self.metrics.packets_duplicate += 1;
            return;
        }

        match dht::route_decision(&self.table, &packet.dst, &self.params.dht) {
            RouteAction::DeliverLocal { forward } => {
                ctx.trace("routed-deliver", format!("dst {}", packet.dst));
                match payload {
                    RoutedPayload::Put(put) => self.handle_put_local(ctx, &packet, put),
                    RoutedPayload::Mention(_) => self.forward_to_listeners(ctx, &packet),
                }
                self.route_onward(ctx, &packet, &forward, from);
            }
            RouteAction::Forward { next } => {
                self.route_onward(ctx, &packet, &next, from);
            }
        }
    }

    fn deliver_mention_if_operator(&mut self, ctx: &mut Ctx, dst: &Digest, post_bytes: &[u8]) {
        let operated: Vec<Username> = self
            .accounts
            .keys()
            .filter(|u| &user_id(u) == dst)
            .cloned()
            .collect();
        if operated.is_empty() {
            return;
        }
        let Ok(post) = UserPost::decode_bytes(post_bytes) else {
            return;
        };
        let Some(entry) = self.chain.lookup_pubkey(&post.username) else {
            return;
        };
        if !post.verify(&entry.pubkey) {
            return;
        }
        if !self.mention_digests.insert(post.digest()) {
            return;
        }
        for user in operated {
            ctx.trace(
                "mention-recv",
                format!("{user} from {} k {}", post.username, post.k),
            );
            self.mentions.entry(user).or_default().push(post.clone());
        }
    }

    /// Listener duty: relay identity-addressed traffic to the endpoints that
    /// proved ownership of the identity.
    fn forward_to_listeners(&mut self, ctx: &mut Ctx, packet: &DhtPacket) {
        let targets: Vec<Endpoint> = self
            .forwards
            .iter()
            .filter(|(user, _)| user_id(user) == packet.dst)
            .flat_map(|(_, eps)| eps.iter().copied())
            .collect();
        let mut forwarded = packet.clone();
        forwarded.hop_count += 1;
        for t in targets {
            ctx.trace("mention-forward", format!("to {t}"));
            self.send_msg(ctx, t, &Message::Routed(forwarded.clone()));
        }
    }

    fn handle_put_local(&mut self, ctx: &mut Ctx, packet: &DhtPacket, put: PutPayload) {
        let put_ctx = PutContext {
            dst: packet.dst,
            signer: packet.signer.clone(),
            now: ctx.now(),
            is_neighbor: self.table.is_neighbor_of(&packet.dst, self.params.dht.r),
        };
        match self.store.handle_put(&put_ctx, &put, &self.params.dht) {
            Ok(()) => {
                self.metrics.puts_accepted += 1;
                ctx.trace(
                    "put-accept",
                    format!("{}/{}", put.target.owner, put.target.resource),
                );
                self.after_put_accept(ctx, &put);
                self.store.evict_expired(ctx.now(), &self.params.dht);
            }
            Err(reject) => {
                bump(&mut self.metrics.puts_rejected, reject.code());
                ctx.trace(
                    "put-reject",
                    format!("{}/{} {}", put.target.owner, put.target.resource, reject.code()),
                );
            }
        }
    }

    /// Gateway duties triggered by accepted PUTs: swarm-address PUTs feed the
    /// user's swarm, hashtag-address PUTs feed the hashtag swarm.
    fn after_put_accept(&mut self, ctx: &mut Ctx, put: &PutPayload) {
        if put.target.resource == "swarm" {
            if let Ok(user) = Username::parse(&put.target.owner) {
                let swarm = SwarmId::user(&user);
                let swarm_key = swarm.id;
                if !self.swarms.contains_key(&swarm_key) {
                    self.ensure_membership(swarm, Role::Gateway);
                    ctx.trace("gateway-join", user.as_str().to_owned());
                }
                let tracker = swarm::tracker_key(&user);
                if self.table.is_neighbor_of(&tracker, self.params.dht.r) {
                    self.tracker_index.insert(tracker, swarm_key);
                }
                // Oblige the tracker-key neighbors to join as well, once.
                if self.tracker_notified.insert(swarm_key) {
                    self.start_lookup(
                        ctx,
                        tracker,
                        LookupPurpose::TrackerNotify {
                            user: user.clone(),
                            swarm_key,
                        },
                    );
                }
                ctx.trace("swarm-ingest", format!("{} {}", user, put.seq));
                self.accept_post_into_swarm(ctx, swarm_key, None, put.seq, put.value.clone());
            }
        } else if put.target.resource == "hashtag" {
            let tag = put.target.owner.clone();
            let swarm = SwarmId::hashtag(&tag);
            let swarm_key = swarm.id;
            if !self.swarms.contains_key(&swarm_key) {
                self.ensure_membership(swarm, Role::Gateway);
                ctx.trace("gateway-join", format!("#{tag}"));
            }
            if let Ok(post) = UserPost::decode_bytes(&put.value) {
                ctx.trace("hashtag-ingest", format!("#{tag} {} {}", post.username, post.k));
                self.accept_post_into_swarm(ctx, swarm_key, None, post.k, put.value.clone());
            }
        }
    }

    // -- chain ------------------------------------------------------------------

    fn flood_to_contacts(&mut self, ctx: &mut Ctx, msg: &Message, except: Option<Endpoint>) {
        let targets: Vec<Endpoint> = self
            .table
            .contacts()
            .map(|c| c.endpoint)
            .filter(|e| Some(*e) != except)
            .collect();
        for t in targets {
            self.send_msg(ctx, t, msg);
        }
    }

    fn handle_reg_gossip(&mut self, ctx: &mut Ctx, from: Option<Endpoint>, bytes: Vec<u8>) {
        let mut reader = crate::encode::Reader::new(&bytes);
        let Ok(reg) = UserReg::decode(&mut reader) else {
            self.metrics.malformed += 1;
            return;
        };
        if reader.finish().is_err() {
            self.metrics.malformed += 1;
            return;
        }
        let digest = reg.digest();
        if !self.seen_regs.insert(digest) {
            return;
        }
        match chain::validate_userreg(
            &reg,
            self.chain.directory(),
            self.chain.params().userreg_difficulty,
        ) {
            Ok(()) => {
                ctx.trace("reg-pending", reg.username.as_str().to_owned());
                self.pending_regs.push(reg);
                self.metrics.regs_pending += 1;
                self.flood_to_contacts(ctx, &Message::RegGossip(bytes), from);
            }
            Err(reject) => {
                bump(&mut self.metrics.regs_rejected, reject.code());
                ctx.trace("reg-reject", format!("{} {}", reg.username, reject.code()));
            }
        }
    }

    fn handle_block(&mut self, ctx: &mut Ctx, from: Option<Endpoint>, bytes: Vec<u8>) {
        let mut reader = crate::encode::Reader::new(&bytes);
        let Ok(block) = Block::decode(&mut reader) else {
            self.metrics.malformed += 1;
            return;
        };
        if reader.finish().is_err() {
            self.metrics.malformed += 1;
            return;
        }
        let block_hash = block.hash();
        if !self.seen_blocks.insert(block_hash) {
            return;
        }
        self.requested_blocks.remove(&block_hash);
        let height = block.height;
        let prev_hash = block.prev_hash;
        match self.chain.apply_block(block) {
            Ok(ApplyOutcome::Accepted {
                new_tip,
                reorged,
                displaced,
            }) => {
                self.metrics.blocks_accepted += 1;
                ctx.trace(
                    "block-accept",
                    format!("h {height} tip {} reorg {}", new_tip.hex_prefix8(), reorged),
                );
                // Mined and displaced registrations: keep pending exactly
                // those that still validate against the new directory.
                for reg in displaced {
                    if !self.pending_regs.iter().any(|r| r.digest() == reg.digest()) {
                        self.pending_regs.push(reg);
                    }
                }
                let directory = self.chain.directory().clone();
                let difficulty = self.chain.params().userreg_difficulty;
                self.pending_regs
                    .retain(|r| chain::validate_userreg(r, &directory, difficulty).is_ok());
                self.flood_to_contacts(ctx, &Message::Block(bytes), from);
                self.maybe_start_listeners(ctx);
            }
            Ok(ApplyOutcome::Orphaned) => {
                ctx.trace("block-orphan", format!("h {height}"));
                // Backfill the gap from the node that forwarded the child.
                if let Some(src) = from {
                    if self.requested_blocks.insert(prev_hash) {
                        self.send_msg(ctx, src, &Message::BlockRequest { hash: prev_hash });
                    }
                }
                self.flood_to_contacts(ctx, &Message::Block(bytes), from);
            }
            Ok(ApplyOutcome::Duplicate) => {}
            Err(reject) => {
                bump(&mut self.metrics.blocks_rejected, reject.code());
                ctx.trace("block-reject", format!("h {height} {}", reject.code()));
            }
        }
    }

    /// Assemble and mine a block on the local tip, apply it, and flood it.
    pub fn mine_now(&mut self, ctx: &mut Ctx) {
        let spam = self
            .pending_promo
            .take()
            .unwrap_or_else(|| PromotedMessage::none(self.sponsor_name()));
        let start_nonce = ctx.rng().next_u64();
        let block = self
            .chain
            .mine_block(&self.pending_regs, spam, ctx.now(), start_nonce);
        self.metrics.blocks_mined += 1;
        ctx.trace("mine", format!("h {} regs {}", block.height, block.registrations.len()));
        let bytes = block.encode();
        self.seen_blocks.insert(block.hash());
        match self.chain.apply_block(block) {
            Ok(ApplyOutcome::Accepted { .. }) => {
                self.metrics.blocks_accepted += 1;
                let directory = self.chain.directory().clone();
                let difficulty = self.chain.params().userreg_difficulty;
                self.pending_regs
                    .retain(|r| chain::validate_userreg(r, &directory, difficulty).is_ok());
                self.flood_to_contacts(ctx, &Message::Block(bytes), None);
                self.maybe_start_listeners(ctx);
            }
            other => unreachable!("own block must connect: {other:?}"),
        }
    }

    /// Queue the promoted message the next mined block will carry.
    pub fn set_promoted(&mut self, promo: PromotedMessage) {
        self.pending_promo = Some(promo);
    }

    /// Queue a promoted message sponsored by this node's operator identity.
    pub fn promote(&mut self, text: String, language_tag: String) {
        let sponsor = self.sponsor_name();
        self.set_promoted(PromotedMessage {
            sponsor,
            text,
            language_tag,
        });
    }

    pub fn select_promoted(
        &self,
        ctx: &mut Ctx,
        recent_window: u64,
        locale: &str,
    ) -> Option<PromotedMessage> {
        self.chain.select_promoted(recent_window, locale, ctx.rng())
    }

    // -- listeners ----------------------------------------------------------------

    fn maybe_start_listeners(&mut self, ctx: &mut Ctx) {
        let ready: Vec<Username> = self
            .accounts
            .iter()
            .filter(|(user, account)| {
                !self.listener_started.contains(*user)
                    && self
                        .chain
                        .lookup_pubkey(user)
                        .is_some_and(|e| e.pubkey == account.keys.public)
            })
            .map(|(user, _)| user.clone())
            .collect();
        for user in ready {
            self.listener_started.insert(user.clone());
            self.start_lookup(ctx, user_id(&user), LookupPurpose::Listener { user });
        }
    }

    /// Re-run listener election (used after key replacement).
    pub fn refresh_listeners(&mut self, ctx: &mut Ctx, user: &Username) {
        self.listener_started.remove(user);
        self.listeners_acquired.remove(user);
        self.maybe_start_listeners(ctx);
    }

    // -- user operations -----------------------------------------------------------

    /// Create an identity on this node and broadcast its registration.
    pub fn register_user(&mut self, ctx: &mut Ctx, user: Username) {
        let mut seed = [0u8; 32];
        ctx.rng().fill_bytes(&mut seed);
        let keys = crypto::generate_keypair(&seed);
        let start_nonce = ctx.rng().next_u64();
        let reg = UserReg::create(
            user.clone(),
            keys.public,
            self.chain.params().userreg_difficulty,
            start_nonce,
        );
        ctx.trace("register", user.as_str().to_owned());
        self.accounts
            .insert(user.clone(), UserAccount::new(user.clone(), keys));
        let bytes = reg.encode();
        self.seen_regs.insert(reg.digest());
        self.pending_regs.push(reg);
        self.flood_to_contacts(ctx, &Message::RegGossip(bytes), None);
    }

    /// Rotate an account's keys: broadcast a replacement registration signed
    /// by the old key and switch local signing to the new pair.
    pub fn replace_user_key(&mut self, ctx: &mut Ctx, user: &Username) -> bool {
        let mut seed = [0u8; 32];
        ctx.rng().fill_bytes(&mut seed);
        let start_nonce = ctx.rng().next_u64();
        let Some(account) = self.accounts.get_mut(user) else {
            return false;
        };
        let new_keys = crypto::generate_keypair(&seed);
        let reg = UserReg::create_replacement(
            user.clone(),
            new_keys.public,
            &account.keys.private,
            self.chain.params().userreg_difficulty,
            start_nonce,
        );
        account.keys = new_keys;
        ctx.trace("replace-key", user.as_str().to_owned());
        let bytes = reg.encode();
        self.seen_regs.insert(reg.digest());
        self.pending_regs.push(reg);
        self.flood_to_contacts(ctx, &Message::RegGossip(bytes), None);
        self.refresh_listeners(ctx, user);
        true
    }

    /// Record (out of band) that `follower` follows `of_user`, enabling DMs
    /// from `of_user` to `follower`.
    pub fn note_follower(&mut self, of_user: &Username, follower: Username) {
        if let Some(account) = self.accounts.get_mut(of_user) {
            account.followers.insert(follower);
        }
    }

    pub fn create_post(
        &mut self,
        ctx: &mut Ctx,
        user: &Username,
        text: &str,
        kind: PostKind,
        reply_ref: Option<(Username, u64)>,
    ) -> Result<u64, PostError> {
        let account = self.accounts.get_mut(user).ok_or(PostError::NotRegistered)?;
        let plan = microblog::create_post(
            account,
            &self.chain,
            text,
            kind,
            reply_ref,
            microblog::default_stopwords(),
            &self.params.blog,
        )?;
        let k = plan.post.k;
        ctx.trace("post", format!("{user} k {k} {}", kind.as_str()));
        self.execute_plan(ctx, plan);
        Ok(k)
    }

    pub fn create_dm(
        &mut self,
        ctx: &mut Ctx,
        from: &Username,
        to: &Username,
        text: &str,
    ) -> Result<u64, PostError> {
        // Split borrow: the account mutates, the chain is read.
        let chain = self.chain.clone();
        let account = self.accounts.get_mut(from).ok_or(PostError::NotRegistered)?;
        let plan = microblog::create_dm(account, &chain, to, text, ctx.rng())?;
        let k = plan.post.k;
        ctx.trace("dm", format!("{from} k {k}"));
        self.execute_plan(ctx, plan);
        Ok(k)
    }

    fn execute_plan(&mut self, ctx: &mut Ctx, plan: SideEffectPlan) {
        let SideEffectPlan { post, actions } = plan;
        let author = post.username.clone();
        let post_bytes = post.encode();
        self.outboxes
            .entry(author.clone())
            .or_default()
            .insert(post.k, post_bytes.clone());
        for action in actions {
            match action {
                PlanAction::StorePost(p)
                | PlanAction::SwarmGateway(p)
                | PlanAction::ReplyCopy(p) => {
                    self.send_put(ctx, &author, p.target, p.dst, post_bytes.clone(), post.k);
                }
                PlanAction::Hashtag { store, .. } => {
                    self.send_put(ctx, &author, store.target, store.dst, post_bytes.clone(), post.k);
                }
                PlanAction::WordIndex { store, .. } => {
                    self.send_put(ctx, &author, store.target, store.dst, post_bytes.clone(), post.k);
                }
                PlanAction::Mention {
                    user,
                    route_dst,
                    store,
                } => {
                    // Mentions of unregistered users are skipped silently.
                    if self.chain.lookup_pubkey(&user).is_none() {
                        continue;
                    }
                    self.send_put(ctx, &author, store.target, store.dst, post_bytes.clone(), post.k);
                    let payload = RoutedPayload::Mention(post_bytes.clone()).encode();
                    let account = self.accounts.get(&author).expect("author exists");
                    let signed = crypto::sign(&account.keys.private, &author, &payload);
                    let packet = DhtPacket {
                        dst: route_dst,
                        src: self.id.id,
                        signed_payload: signed,
                        signer: author.clone(),
                        hop_count: 0,
                    };
                    self.handle_routed(ctx, None, packet);
                }
            }
        }
    }

    fn send_put(
        &mut self,
        ctx: &mut Ctx,
        author: &Username,
        target: StorageTarget,
        dst: Digest,
        value: Vec<u8>,
        seq: u64,
    ) {
        let put = PutPayload {
            target,
            value,
            time: ctx.now(),
            seq,
        };
        let payload = RoutedPayload::Put(put).encode();
        let account = self.accounts.get(author).expect("author exists");
        let signed = crypto::sign(&account.keys.private, author, &payload);
        let packet = DhtPacket {
            dst,
            src: self.id.id,
            signed_payload: signed,
            signer: author.clone(),
            hop_count: 0,
        };
        self.handle_routed(ctx, None, packet);
    }

    // -- fetches ---------------------------------------------------------------------

    /// Inject a pre-built routed packet at this node, as if a remote signer
    /// had handed it over for retransmission.
    pub fn inject_packet(&mut self, ctx: &mut Ctx, packet: DhtPacket) {
        self.handle_routed(ctx, None, packet);
    }

    pub fn fetch_post(&mut self, ctx: &mut Ctx, user: Username, k: u64) {
        let key = dht::storage_key(&microblog::post_target(&user, k));
        self.start_get(ctx, key, GetPurpose::FetchPost { user, k });
    }

    pub fn fetch_replies(&mut self, ctx: &mut Ctx, user: Username, k: u64) {
        let key = dht::storage_key(&microblog::replies_target(&user, k));
        self.start_get(ctx, key, GetPurpose::FetchReplies { user, k });
    }

    pub fn fetch_hashtag(&mut self, ctx: &mut Ctx, tag: String) {
        let key = dht::storage_key(&microblog::hashtag_target(&tag));
        self.start_get(ctx, key, GetPurpose::FetchHashtag { tag });
    }

    pub fn fetch_word(&mut self, ctx: &mut Ctx, word: String) {
        let key = dht::storage_key(&microblog::word_target(&word));
        self.start_get(ctx, key, GetPurpose::FetchWord { word });
    }

    pub fn fetch_mentions(&mut self, ctx: &mut Ctx, user: Username) {
        let key = dht::storage_key(&microblog::mention_target(&user));
        self.start_get(ctx, key, GetPurpose::FetchMentions { user });
    }
}

impl Actor for ProtocolNode {
    fn on_start(&mut self, ctx: &mut Ctx) {
        let bootstrap = self.bootstrap.clone();
        for peer in bootstrap {
            if peer == self.endpoint {
                continue;
            }
            self.note_contact(ctx, peer);
            let nonce = self.next_req();
            self.send_msg(ctx, peer, &Message::Ping { nonce });
            self.send_msg(ctx, peer, &Message::TipRequest);
        }
        if !self.table.is_empty() {
            let own = self.id.id;
            self.start_lookup(ctx, own, LookupPurpose::Bootstrap);
        }
        if self.auto_mine_interval.is_some() {
            let timer = ctx.set_timer(1);
            self.timers.insert(timer, TimerPurpose::MinerPoll);
        }
    }

    fn on_message(&mut self, ctx: &mut Ctx, src: Endpoint, payload: Vec<u8>) {
        self.note_contact(ctx, src);
        let Ok(msg) = Message::decode_bytes(&payload) else {
            self.metrics.malformed += 1;
            return;
        };
        match msg {
            Message::Ping { nonce } => {
                self.send_msg(ctx, src, &Message::Pong { nonce });
            }
            Message::Pong { nonce } => {
                if let Some((lru, candidate)) = self.pending_probes.remove(&nonce) {
                    self.table.resolve_probe(&lru, candidate, true);
                }
            }
            Message::FindNode { req, target } => {
                let contacts: Vec<Endpoint> = self
                    .table
                    .closest(&target, self.params.dht.k)
                    .into_iter()
                    .map(|c| c.endpoint)
                    .filter(|e| *e != src)
                    .collect();
                self.send_msg(ctx, src, &Message::FindNodeResp { req, contacts });
            }
            Message::FindNodeResp { req, contacts } => {
                for c in &contacts {
                    self.note_contact(ctx, *c);
                }
                if let Some(task) = self.lookups.get_mut(&req) {
                    let from = node_id(src).id;
                    let nodes: Vec<NodeId> = contacts.into_iter().map(node_id).collect();
                    let step = task.state.on_response(&from, nodes);
                    self.drive_lookup(ctx, req, step);
                }
            }
            Message::GetReq { req, key } => {
                let body = self.local_get_body(&key);
                let operator = self.accounts.iter().next().map(|(user, account)| {
                    let sig = crypto::sign_detached(
                        &account.keys.private,
                        &get_resp_sign_payload(req, &body),
                    );
                    (user.clone(), sig)
                });
                self.send_msg(
                    ctx,
                    src,
                    &Message::GetResp {
                        req,
                        body,
                        operator,
                    },
                );
            }
            Message::GetResp {
                req,
                body,
                operator,
            } => {
                // An operator signature, when present and resolvable, must
                // verify; responses failing it are discarded.
                if let Some((user, sig)) = &operator {
                    if let Some(entry) = self.chain.lookup_pubkey(user) {
                        let payload = get_resp_sign_payload(req, &body);
                        if !crypto::verify_detached(&entry.pubkey, &payload, sig) {
                            self.metrics.malformed += 1;
                            return;
                        }
                    }
                }
                if let Some(task) = self.gets.get_mut(&req) {
                    task.outstanding.remove(&src);
                    self.absorb_get_body(ctx, req, body);
                }
            }
            Message::Routed(packet) => {
                self.handle_routed(ctx, Some(src), packet);
            }
            Message::Block(bytes) => {
                self.handle_block(ctx, Some(src), bytes);
            }
            Message::BlockRequest { hash } => {
                if let Some(block) = self.chain.block(&hash) {
                    let bytes = block.encode();
                    self.send_msg(ctx, src, &Message::Block(bytes));
                }
            }
            Message::TipRequest => {
                let tip = self.chain.tip();
                if self.chain.tip_height() > 0 {
                    let bytes = self.chain.block(&tip).expect("tip exists").encode();
                    self.send_msg(ctx, src, &Message::Block(bytes));
                }
            }
            Message::RegGossip(bytes) => {
                self.handle_reg_gossip(ctx, Some(src), bytes);
            }
            Message::Swarm(frame_bytes) => match SwarmFrame::decode(&frame_bytes) {
                Ok(frame) => self.handle_swarm_frame(ctx, src, frame),
                Err(_) => self.metrics.malformed += 1,
            },
            Message::TrackerNotify { user, swarm_key } => {
                let swarm = SwarmId::user(&user);
                if swarm.id != swarm_key {
                    return;
                }
                let tracker = swarm::tracker_key(&user);
                if self.table.is_neighbor_of(&tracker, self.params.dht.r) {
                    self.tracker_index.insert(tracker, swarm_key);
                    if !self.swarms.contains_key(&swarm_key) {
                        self.ensure_membership(swarm, Role::Gateway);
                        ctx.trace("gateway-join", format!("{user} (tracker duty)"));
                    }
                    // Handshake with the announcing gateway.
                    let (k_max, bitmap) = self.swarms[&swarm_key].bitlist();
                    self.send_msg(
                        ctx,
                        src,
                        &Message::Swarm(
                            SwarmFrame::Bitlist {
                                swarm: swarm_key,
                                k_max,
                                bitmap,
                            }
                            .encode(),
                        ),
                    );
                }
            }
            Message::ListenerReq { target } => {
                let mut challenge = vec![0u8; 32];
                ctx.rng().fill_bytes(&mut challenge);
                self.pending_challenges
                    .insert((src, target.clone()), challenge.clone());
                self.send_msg(ctx, src, &Message::ListenerChallenge { target, challenge });
            }
            Message::ListenerChallenge { target, challenge } => {
                if let Some(account) = self.accounts.get(&target) {
                    let response = microblog::challenge_response(&account.keys, &challenge);
                    self.send_msg(ctx, src, &Message::ListenerResp { target, response });
                }
            }
            Message::ListenerResp { target, response } => {
                let Some(challenge) = self.pending_challenges.remove(&(src, target.clone()))
                else {
                    return;
                };
                let accepted = self
                    .chain
                    .lookup_pubkey(&target)
                    .is_some_and(|e| microblog::verify_challenge(&e.pubkey, &challenge, &response));
                if accepted {
                    self.forwards.entry(target.clone()).or_default().insert(src);
                    ctx.trace("listener-active", format!("{target} -> {src}"));
                }
                self.send_msg(ctx, src, &Message::ListenerAck { target, accepted });
            }
            Message::ListenerAck { target, accepted } => {
                if accepted {
                    self.listeners_acquired.entry(target).or_default().insert(src);
                }
            }
        }
    }

    fn on_timer(&mut self, ctx: &mut Ctx, timer: TimerId) {
        let Some(purpose) = self.timers.remove(&timer) else {
            return;
        };
        match purpose {
            TimerPurpose::MinerPoll => {
                if let Some(interval) = self.auto_mine_interval {
                    if uniform(ctx.rng(), interval.max(1)) == 0 {
                        self.mine_now(ctx);
                    }
                    let next = ctx.set_timer(1);
                    self.timers.insert(next, TimerPurpose::MinerPoll);
                }
            }
            TimerPurpose::Probe { nonce } => {
                if let Some((lru, candidate)) = self.pending_probes.remove(&nonce) {
                    self.table.resolve_probe(&lru, candidate, false);
                }
            }
            TimerPurpose::LookupQuery { lookup, queried } => {
                if let Some(task) = self.lookups.get_mut(&lookup) {
                    let step = task.state.on_failure(&queried);
                    self.drive_lookup(ctx, lookup, step);
                }
            }
            TimerPurpose::GetDeadline { get } => {
                if self.gets.contains_key(&get) {
                    self.settle_get(ctx, get);
                }
            }
            TimerPurpose::SwarmRetry { swarm_key } => {
                let Some(membership) = self.swarms.get(&swarm_key) else {
                    return;
                };
                if membership.peers.is_empty() && membership.swarm.kind == SwarmKind::User {
                    if let Ok(user) = Username::parse(&membership.swarm.subject) {
                        self.start_get(
                            ctx,
                            swarm::tracker_key(&user),
                            GetPurpose::TrackerJoin {
                                swarm_key,
                                user,
                            },
                        );
                    }
                }
            }
        }
    }
}
