//! Per-user (and per-hashtag) follower swarms.
//!
//! A user's posts form a file-like sequence of pieces numbered by `k`. Swarm
//! members exchange bitlists of held pieces, request what they miss, and
//! learn about new pieces through unsolicited "have" announcements flooded
//! across the swarm's connection graph. The piece count a "have" announces is
//! bounded by the chain-coupled rate limit, so a member can never be tricked
//! into allocating unbounded piece space.
//!
//! Members know each other only by endpoint; nothing in the swarm wire
//! carries usernames of members. There is no per-piece checksum table: every
//! piece is a signed post and verifies on its own.
//!
//! Hashtag swarms share the tracker/flooding machinery but have no sequential
//! content, so pieces and bitlists do not apply there; posts flood as an
//! unordered, digest-deduplicated collection.

use std::collections::{BTreeMap, BTreeSet};

use crate::chain::{ChainState, Username};
use crate::crypto::Digest;
use crate::dht::{storage_key, Endpoint};
use crate::encode::{canonical_encode, DecodeError, Reader, Value};
use crate::microblog::{self, UserPost};

/// Swarm tuning knobs.
#[derive(Debug, Clone)]
pub struct SwarmParams {
    /// Connections a joining member dials.
    pub fanout: usize,
    /// How many of the newest pieces a non-seeder keeps and requests.
    pub recent_window: u64,
    /// Delay before retrying a join that found no live peers.
    pub retry_ticks: u64,
    /// Upper bound on accepted connections per swarm.
    pub max_peers: usize,
}

impl Default for SwarmParams {
    fn default() -> SwarmParams {
        SwarmParams {
            fanout: 8,
            recent_window: 64,
            retry_ticks: 30,
            max_peers: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SwarmKind {
    User,
    Hashtag,
}

/// A swarm's identity in hash space. User swarms live at the user's swarm
/// gateway address, hashtag swarms at the hashtag collection address.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct SwarmId {
    pub id: Digest,
    pub kind: SwarmKind,
    pub subject: String,
}

impl SwarmId {
    pub fn user(username: &Username) -> SwarmId {
        SwarmId {
            id: storage_key(&microblog::swarm_target(username)),
            kind: SwarmKind::User,
            subject: username.as_str().to_owned(),
        }
    }

    pub fn hashtag(tag: &str) -> SwarmId {
        SwarmId {
            id: storage_key(&microblog::hashtag_target(tag)),
            kind: SwarmKind::Hashtag,
            subject: tag.to_owned(),
        }
    }
}

/// The tracker address paired with a user swarm.
pub fn tracker_key(username: &Username) -> Digest {
    storage_key(&microblog::tracker_target(username))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Follower,
    Gateway,
    Seeder,
    Producer,
}

// ---------------------------------------------------------------------------
// Wire frames

/// Swarm wire messages. Encoding is a type byte prefix followed by the
/// canonical body: 0x01 have, 0x02 bitlist, 0x03 request, 0x04 piece.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SwarmFrame {
    /// Unsolicited announcement of a new piece, carrying the post itself.
    Have {
        swarm: Digest,
        new_k: u64,
        post: Vec<u8>,
    },
    /// Piece inventory; also serves as the connection handshake.
    Bitlist {
        swarm: Digest,
        k_max: u64,
        bitmap: Vec<u8>,
    },
    Request {
        swarm: Digest,
        k: u64,
    },
    Piece {
        swarm: Digest,
        k: u64,
        data: Vec<u8>,
    },
}

const FRAME_HAVE: u8 = 0x01;
const FRAME_BITLIST: u8 = 0x02;
const FRAME_REQUEST: u8 = 0x03;
const FRAME_PIECE: u8 = 0x04;

impl SwarmFrame {
    pub fn swarm(&self) -> &Digest {
        match self {
            SwarmFrame::Have { swarm, .. }
            | SwarmFrame::Bitlist { swarm, .. }
            | SwarmFrame::Request { swarm, .. }
            | SwarmFrame::Piece { swarm, .. } => swarm,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let (tag, body) = match self {
            SwarmFrame::Have { swarm, new_k, post } => (
                FRAME_HAVE,
                Value::list(vec![
                    Value::Digest(*swarm),
                    Value::U64(*new_k),
                    Value::Bytes(post.clone()),
                ]),
            ),
            SwarmFrame::Bitlist {
                swarm,
                k_max,
                bitmap,
            } => (
                FRAME_BITLIST,
                Value::list(vec![
                    Value::Digest(*swarm),
                    Value::U64(*k_max),
                    Value::Bytes(bitmap.clone()),
                ]),
            ),
            SwarmFrame::Request { swarm, k } => (
                FRAME_REQUEST,
                Value::list(vec![Value::Digest(*swarm), Value::U64(*k)]),
            ),
            SwarmFrame::Piece { swarm, k, data } => (
                FRAME_PIECE,
                Value::list(vec![
                    Value::Digest(*swarm),
                    Value::U64(*k),
                    Value::Bytes(data.clone()),
                ]),
            ),
        };
        let mut out = vec![tag];
        out.extend(canonical_encode(&body));
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<SwarmFrame, DecodeError> {
        let (&tag, body) = bytes.split_first().ok_or(DecodeError::UnexpectedEof)?;
        let mut r = Reader::new(body);
        let frame = match tag {
            FRAME_HAVE => {
                expect_arity(&mut r, 3)?;
                SwarmFrame::Have {
                    swarm: r.digest()?,
                    new_k: r.u64()?,
                    post: r.bytes()?,
                }
            }
            FRAME_BITLIST => {
                expect_arity(&mut r, 3)?;
                SwarmFrame::Bitlist {
                    swarm: r.digest()?,
                    k_max: r.u64()?,
                    bitmap: r.bytes()?,
                }
            }
            FRAME_REQUEST => {
                expect_arity(&mut r, 2)?;
                SwarmFrame::Request {
                    swarm: r.digest()?,
                    k: r.u64()?,
                }
            }
            FRAME_PIECE => {
                expect_arity(&mut r, 3)?;
                SwarmFrame::Piece {
                    swarm: r.digest()?,
                    k: r.u64()?,
                    data: r.bytes()?,
                }
            }
            _ => return Err(DecodeError::BadField("swarm frame tag")),
        };
        r.finish()?;
        Ok(frame)
    }
}

fn expect_arity(r: &mut Reader, want: u64) -> Result<(), DecodeError> {
    if r.list_len()? != want {
        return Err(DecodeError::BadField("frame arity"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Have validation

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HaveReject {
    Unregistered,
    BadSignature,
    RateExceeded,
}

impl HaveReject {
    pub fn code(&self) -> &'static str {
        match self {
            HaveReject::Unregistered => "unregistered",
            HaveReject::BadSignature => "bad-signature",
            HaveReject::RateExceeded => "rate-exceeded",
        }
    }
}

/// Accept a post into swarm circulation only if its author is registered,
/// the signature verifies under the directory key, and the sequence number
/// respects `k < 2 * (tip - registration) + 20`.
pub fn validate_have(post: &UserPost, chain: &ChainState) -> Result<(), HaveReject> {
    let entry = chain
        .lookup_pubkey(&post.username)
        .ok_or(HaveReject::Unregistered)?;
    if !post.verify(&entry.pubkey) {
        return Err(HaveReject::BadSignature);
    }
    if !microblog::post_rate_allows(post.k, entry.height, chain.tip_height()) {
        return Err(HaveReject::RateExceeded);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Membership

/// Per-node view of one swarm: connected peers, held pieces, and the known
/// piece count. Bits in the advertised bitlist are derived from the actual
/// piece map, so a set bit always corresponds to a locally stored,
/// signature-valid piece.
#[derive(Debug, Clone)]
pub struct SwarmMembership {
    pub swarm: SwarmId,
    pub role: Role,
    pub peers: BTreeSet<Endpoint>,
    pub k_max: u64,
    pieces: BTreeMap<u64, Vec<u8>>,
    /// Hashtag swarms: collected posts, deduplicated by digest.
    pub collected: BTreeMap<Digest, Vec<u8>>,
    /// Piece indices requested and not yet received.
    pub requested: BTreeSet<u64>,
}

impl SwarmMembership {
    pub fn new(swarm: SwarmId, role: Role) -> SwarmMembership {
        SwarmMembership {
            swarm,
            role,
            peers: BTreeSet::new(),
            k_max: 0,
            pieces: BTreeMap::new(),
            collected: BTreeMap::new(),
            requested: BTreeSet::new(),
        }
    }

    pub fn has_piece(&self, k: u64) -> bool {
        self.pieces.contains_key(&k)
    }

    pub fn piece(&self, k: u64) -> Option<&Vec<u8>> {
        self.pieces.get(&k)
    }

    pub fn piece_count(&self) -> usize {
        self.pieces.len()
    }

    pub fn pieces(&self) -> impl Iterator<Item = (&u64, &Vec<u8>)> {
        self.pieces.iter()
    }

    /// Store a verified piece; the known piece count grows to cover it.
    pub fn store_piece(&mut self, k: u64, data: Vec<u8>) -> bool {
        self.requested.remove(&k);
        if self.pieces.contains_key(&k) {
            return false;
        }
        self.k_max = self.k_max.max(k);
        self.pieces.insert(k, data);
        true
    }

    /// Record a higher piece count announced by a "have". Bits for the gap
    /// stay zero until the pieces arrive.
    pub fn observe_k_max(&mut self, new_k: u64) {
        self.k_max = self.k_max.max(new_k);
    }

    /// The lowest piece index this member wants, given its retention policy.
    /// Seeders are archivists and want everything.
    pub fn retention_floor(&self, params: &SwarmParams) -> u64 {
        if self.role == Role::Seeder {
            1
        } else {
            (self.k_max.saturating_sub(params.recent_window)) + 1
        }
    }

    /// Current bitlist: `(k_max, bitmap)` with bit `k-1` (LSB-first within
    /// each byte) set iff piece `k` is held.
    pub fn bitlist(&self) -> (u64, Vec<u8>) {
        let mut bitmap = vec![0u8; (self.k_max as usize).div_ceil(8)];
        for k in self.pieces.keys() {
            if *k >= 1 && *k <= self.k_max {
                let idx = (*k - 1) as usize;
                bitmap[idx / 8] |= 1 << (idx % 8);
            }
        }
        (self.k_max, bitmap)
    }

    /// Piece indices a peer's bitlist offers that this member still wants:
    /// missing, within retention, and not already requested.
    pub fn wanted_from(&self, peer_k_max: u64, peer_bitmap: &[u8], params: &SwarmParams) -> Vec<u64> {
        let floor = self.retention_floor(params);
        let mut wanted = Vec::new();
        for k in 1..=peer_k_max {
            let idx = (k - 1) as usize;
            let Some(byte) = peer_bitmap.get(idx / 8) else {
                break;
            };
            if byte & (1 << (idx % 8)) == 0 {
                continue;
            }
            if k >= floor && !self.pieces.contains_key(&k) && !self.requested.contains(&k) {
                wanted.push(k);
            }
        }
        wanted
    }

    /// Flooding fan-out: every connected peer except the message source.
    pub fn flood_targets(&self, except: Option<Endpoint>) -> Vec<Endpoint> {
        self.peers
            .iter()
            .copied()
            .filter(|p| Some(*p) != except)
            .collect()
    }

    /// Tracker view: the endpoints of currently connected members, and
    /// nothing else. Never fed by PUT data.
    pub fn tracker_peers(&self) -> Vec<Endpoint> {
        self.peers.iter().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{ChainParams, PromotedMessage, UserReg};
    use crate::crypto::generate_keypair;
    use crate::dht::storage_key;
    use crate::microblog::{post_target, PostBody, PostKind};

    fn name(s: &str) -> Username {
        Username::parse(s).unwrap()
    }

    fn params() -> SwarmParams {
        SwarmParams::default()
    }

    #[test]
    fn swarm_ids_match_storage_key_derivation() {
        let alice = name("alice");
        let s = SwarmId::user(&alice);
        assert_eq!(s.id, storage_key(&microblog::swarm_target(&alice)));
        assert_eq!(s.kind, SwarmKind::User);

        let h = SwarmId::hashtag("p2p");
        assert_eq!(h.id, storage_key(&microblog::hashtag_target("p2p")));
        assert_ne!(h.id, s.id);

        assert_eq!(
            tracker_key(&alice),
            storage_key(&microblog::tracker_target(&alice))
        );
        // Post storage and swarm gateway addresses differ.
        assert_ne!(s.id, storage_key(&post_target(&alice, 1)));
    }

    #[test]
    fn frame_roundtrips_and_type_bytes() {
        let swarm = SwarmId::user(&name("alice")).id;
        let frames = vec![
            SwarmFrame::Have {
                swarm,
                new_k: 7,
                post: b"postbytes".to_vec(),
            },
            SwarmFrame::Bitlist {
                swarm,
                k_max: 9,
                bitmap: vec![0xFF, 0x01],
            },
            SwarmFrame::Request { swarm, k: 3 },
            SwarmFrame::Piece {
                swarm,
                k: 3,
                data: b"data".to_vec(),
            },
        ];
        for (frame, tag) in frames.iter().zip([0x01u8, 0x02, 0x03, 0x04]) {
            let bytes = frame.encode();
            assert_eq!(bytes[0], tag, "type byte prefix");
            assert_eq!(&SwarmFrame::decode(&bytes).unwrap(), frame);
        }
        assert!(SwarmFrame::decode(&[0x09, 0, 0]).is_err());
        assert!(SwarmFrame::decode(&[]).is_err());
    }

    /// Chain with alice registered at height 1, then extended so the tip sits
    /// `delta` blocks above the registration.
    fn chain_with_delta(alice_kp: &crate::crypto::KeyPair, delta: u64) -> ChainState {
        let mut state = ChainState::new(ChainParams {
            userreg_difficulty: 8,
            initial_block_difficulty: 8,
            ..ChainParams::default()
        });
        let reg = UserReg::create(name("alice"), alice_kp.public, 8, 0);
        let block = state.mine_block(&[reg], PromotedMessage::none(name("miner")), 10, 0);
        state.apply_block(block).unwrap();
        for i in 0..delta {
            let block =
                state.mine_block(&[], PromotedMessage::none(name("miner")), 20 + i * 10, 0);
            state.apply_block(block).unwrap();
        }
        state
    }

    fn signed_post(kp: &crate::crypto::KeyPair, k: u64) -> UserPost {
        UserPost::create(
            kp,
            name("alice"),
            k,
            PostKind::Post,
            PostBody::Text(format!("post {k}")),
            None,
        )
    }

    #[test]
    fn have_rate_bound_boundaries() {
        let kp = generate_keypair(&[1; 32]);
        // Registered at block 100, tip 110 scaled down: delta 10 means the
        // bound is 2*10+20 = 40, strict.
        for (delta, accept_k, reject_k) in [(0u64, 19u64, 20u64), (1, 21, 22), (10, 39, 40), (100, 219, 220)]
        {
            let chain = chain_with_delta(&kp, delta);
            assert!(
                validate_have(&signed_post(&kp, accept_k), &chain).is_ok(),
                "delta {delta} k {accept_k}"
            );
            assert_eq!(
                validate_have(&signed_post(&kp, reject_k), &chain),
                Err(HaveReject::RateExceeded),
                "delta {delta} k {reject_k}"
            );
        }
    }

    #[test]
    fn have_rejects_unregistered_and_bad_signature() {
        let kp = generate_keypair(&[1; 32]);
        let imposter = generate_keypair(&[2; 32]);
        let chain = chain_with_delta(&kp, 0);

        let mut foreign = signed_post(&imposter, 1);
        foreign.username = name("nobody");
        assert_eq!(
            validate_have(&foreign, &chain),
            Err(HaveReject::Unregistered)
        );

        // Claimed author alice, signed by someone else.
        let forged = signed_post(&imposter, 1);
        assert_eq!(
            validate_have(&forged, &chain),
            Err(HaveReject::BadSignature)
        );
    }

    #[test]
    fn daily_allowance_is_288_at_ten_minute_blocks() {
        assert_eq!(microblog::daily_post_allowance(600), 288);
    }

    #[test]
    fn bitlist_reflects_pieces_and_pads_gaps() {
        let mut m = SwarmMembership::new(SwarmId::user(&name("alice")), Role::Follower);
        m.store_piece(1, b"p1".to_vec());
        m.store_piece(2, b"p2".to_vec());
        m.store_piece(3, b"p3".to_vec());
        assert_eq!(m.k_max, 3);

        // A have for k=7 raises the count; bits for 4..6 stay zero.
        m.observe_k_max(7);
        let (k_max, bitmap) = m.bitlist();
        assert_eq!(k_max, 7);
        assert_eq!(bitmap.len(), 1);
        assert_eq!(bitmap[0], 0b0000_0111);

        m.store_piece(7, b"p7".to_vec());
        let (_, bitmap) = m.bitlist();
        assert_eq!(bitmap[0], 0b0100_0111);
    }

    #[test]
    fn wanted_respects_retention_window_and_seeders() {
        let p = SwarmParams {
            recent_window: 4,
            ..params()
        };
        let mut follower = SwarmMembership::new(SwarmId::user(&name("alice")), Role::Follower);
        follower.observe_k_max(10);
        // Peer has everything up to 10.
        let peer_bitmap = vec![0xFF, 0x03];
        let wanted = follower.wanted_from(10, &peer_bitmap, &p);
        // Retention floor is 10 - 4 + 1 = 7.
        assert_eq!(wanted, vec![7, 8, 9, 10]);

        let mut seeder = SwarmMembership::new(SwarmId::user(&name("alice")), Role::Seeder);
        seeder.observe_k_max(10);
        let wanted = seeder.wanted_from(10, &peer_bitmap, &p);
        assert_eq!(wanted, (1..=10).collect::<Vec<_>>());

        // Already-held and already-requested pieces are not re-requested.
        follower.store_piece(8, b"p8".to_vec());
        follower.requested.insert(9);
        let wanted = follower.wanted_from(10, &peer_bitmap, &p);
        assert_eq!(wanted, vec![7, 10]);
    }

    #[test]
    fn flood_targets_exclude_source() {
        let mut m = SwarmMembership::new(SwarmId::user(&name("alice")), Role::Follower);
        let peers: Vec<Endpoint> = (0..5).map(|i| Endpoint::new(10 + i, 70)).collect();
        for p in &peers {
            m.peers.insert(*p);
        }
        let targets = m.flood_targets(Some(peers[2]));
        assert_eq!(targets.len(), 4);
        assert!(!targets.contains(&peers[2]));
        assert_eq!(m.tracker_peers().len(), 5);
    }

    #[test]
    fn store_piece_is_idempotent() {
        let mut m = SwarmMembership::new(SwarmId::user(&name("alice")), Role::Follower);
        assert!(m.store_piece(2, b"x".to_vec()));
        assert!(!m.store_piece(2, b"x".to_vec()));
        assert_eq!(m.piece_count(), 1);
    }
}
