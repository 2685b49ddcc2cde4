//! Application semantics on top of the overlays: signed user posts, replies
//! and retransmissions, sealed direct messages, mention/hashtag/word entity
//! extraction, and the side-effect plan a client must execute when posting.
//!
//! Posts are at most 140 characters and carry a per-user strictly increasing
//! sequence number `k`. A direct message is an ordinary post whose public
//! text is replaced by a sealed box; recipients discover DMs addressed to
//! them purely by attempting decryption, so the wire reveals no recipient.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use rand_core::RngCore;

use crate::chain::{user_id, ChainState, Username};
use crate::crypto::{self, Digest, KeyPair, PublicKey, SealedBox};
use crate::dht::{storage_key, ResType, StorageTarget};
use crate::encode::{canonical_encode, DecodeError, Reader, Value};

pub const MAX_POST_CHARS: usize = 140;

/// Entity extraction limits. The stopword list ships as a config file
/// (`data/stopwords.txt`), embedded as the default.
#[derive(Debug, Clone)]
pub struct MicroblogParams {
    pub min_word_len: usize,
    pub words_per_post: usize,
}

impl Default for MicroblogParams {
    fn default() -> MicroblogParams {
        MicroblogParams {
            min_word_len: 4,
            words_per_post: 16,
        }
    }
}

// ---------------------------------------------------------------------------
// Posts

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PostKind {
    Post,
    Reply,
    Rt,
    Dm,
}

impl PostKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PostKind::Post => "post",
            PostKind::Reply => "reply",
            PostKind::Rt => "rt",
            PostKind::Dm => "dm",
        }
    }

    pub fn parse(s: &str) -> Option<PostKind> {
        match s {
            "post" => Some(PostKind::Post),
            "reply" => Some(PostKind::Reply),
            "rt" => Some(PostKind::Rt),
            "dm" => Some(PostKind::Dm),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PostBody {
    Text(String),
    Sealed(SealedBox),
}

/// The k-th message of a user: `SIG([username, k, type, msg, reply])`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserPost {
    pub username: Username,
    pub k: u64,
    pub kind: PostKind,
    pub body: PostBody,
    pub reply_ref: Option<(Username, u64)>,
    pub signature: Vec<u8>,
}

fn body_value(body: &PostBody) -> Value {
    match body {
        PostBody::Text(t) => Value::str(t),
        PostBody::Sealed(sealed) => sealed.encode_value(),
    }
}

fn reply_value(reply: &Option<(Username, u64)>) -> Value {
    Value::option(reply.as_ref().map(|(user, k)| {
        Value::list(vec![Value::str(user.as_str()), Value::U64(*k)])
    }))
}

/// The byte string the post signature covers.
pub fn post_payload(
    username: &Username,
    k: u64,
    kind: PostKind,
    body: &PostBody,
    reply_ref: &Option<(Username, u64)>,
) -> Vec<u8> {
    canonical_encode(&Value::list(vec![
        Value::str(username.as_str()),
        Value::U64(k),
        Value::str(kind.as_str()),
        body_value(body),
        reply_value(reply_ref),
    ]))
}

impl UserPost {
    pub fn create(
        keys: &KeyPair,
        username: Username,
        k: u64,
        kind: PostKind,
        body: PostBody,
        reply_ref: Option<(Username, u64)>,
    ) -> UserPost {
        let payload = post_payload(&username, k, kind, &body, &reply_ref);
        let signature = crypto::sign_detached(&keys.private, &payload);
        UserPost {
            username,
            k,
            kind,
            body,
            reply_ref,
            signature,
        }
    }

    pub fn payload(&self) -> Vec<u8> {
        post_payload(&self.username, self.k, self.kind, &self.body, &self.reply_ref)
    }

    pub fn verify(&self, pubkey: &PublicKey) -> bool {
        crypto::verify_detached(pubkey, &self.payload(), &self.signature)
    }

    /// Wire form: `[signature, payload]`, the signed-content tuple.
    pub fn encode(&self) -> Vec<u8> {
        canonical_encode(&Value::list(vec![
            Value::Bytes(self.signature.clone()),
            Value::Bytes(self.payload()),
        ]))
    }

    pub fn digest(&self) -> Digest {
        crypto::hash(&self.encode())
    }

    pub fn decode_bytes(bytes: &[u8]) -> Result<UserPost, DecodeError> {
        let mut outer = Reader::new(bytes);
        let arity = outer.list_len()?;
        if arity != 2 {
            return Err(DecodeError::BadField("post arity"));
        }
        let signature = outer.bytes()?;
        let payload = outer.bytes()?;
        outer.finish()?;

        let mut r = Reader::new(&payload);
        let arity = r.list_len()?;
        if arity != 5 {
            return Err(DecodeError::BadField("post payload arity"));
        }
        let username =
            Username::parse(&r.string()?).map_err(|_| DecodeError::BadField("post username"))?;
        let k = r.u64()?;
        let kind =
            PostKind::parse(&r.string()?).ok_or(DecodeError::BadField("post kind literal"))?;
        let body = if kind == PostKind::Dm {
            let arity = r.list_len()?;
            if arity != 2 {
                return Err(DecodeError::BadField("sealed body arity"));
            }
            let ciphertext = r.bytes()?;
            let payload_digest = r.digest()?;
            PostBody::Sealed(SealedBox {
                ciphertext,
                payload_digest,
            })
        } else {
            let text = r.string()?;
            if text.chars().count() > MAX_POST_CHARS {
                return Err(DecodeError::BadField("post over length"));
            }
            PostBody::Text(text)
        };
        let opt = r.list_len()?;
        let reply_ref = match opt {
            0 => None,
            1 => {
                let arity = r.list_len()?;
                if arity != 2 {
                    return Err(DecodeError::BadField("reply ref arity"));
                }
                let user = Username::parse(&r.string()?)
                    .map_err(|_| DecodeError::BadField("reply username"))?;
                let k = r.u64()?;
                Some((user, k))
            }
            _ => return Err(DecodeError::BadField("reply option arity")),
        };
        r.finish()?;
        let needs_ref = matches!(kind, PostKind::Reply | PostKind::Rt);
        if needs_ref != reply_ref.is_some() {
            return Err(DecodeError::BadField("reply ref presence"));
        }
        let post = UserPost {
            username,
            k,
            kind,
            body,
            reply_ref,
            signature,
        };
        // The payload must be the canonical encoding of the parsed fields.
        if post.payload() != payload {
            return Err(DecodeError::BadField("non-canonical payload"));
        }
        Ok(post)
    }
}

// ---------------------------------------------------------------------------
// Storage target derivations

pub fn post_target(user: &Username, k: u64) -> StorageTarget {
    StorageTarget::new(user.as_str(), format!("post{k}"), ResType::Single)
}

pub fn swarm_target(user: &Username) -> StorageTarget {
    StorageTarget::new(user.as_str(), "swarm", ResType::Single)
}

pub fn tracker_target(user: &Username) -> StorageTarget {
    StorageTarget::new(user.as_str(), "tracker", ResType::Multi)
}

pub fn replies_target(user: &Username, k: u64) -> StorageTarget {
    StorageTarget::new(user.as_str(), format!("replies{k}"), ResType::Multi)
}

pub fn mention_target(user: &Username) -> StorageTarget {
    StorageTarget::new(user.as_str(), "mention", ResType::Multi)
}

pub fn hashtag_target(tag: &str) -> StorageTarget {
    StorageTarget::new(tag, "hashtag", ResType::Multi)
}

pub fn word_target(word: &str) -> StorageTarget {
    StorageTarget::new(word, "word", ResType::Multi)
}

// ---------------------------------------------------------------------------
// Entity extraction

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EntitySet {
    pub mentions: Vec<Username>,
    pub hashtags: Vec<String>,
    pub words: Vec<String>,
}

/// Default English stopword list, shipped as a config file.
pub fn default_stopwords() -> &'static BTreeSet<String> {
    static STOPWORDS: OnceLock<BTreeSet<String>> = OnceLock::new();
    STOPWORDS.get_or_init(|| parse_stopwords(include_str!("../data/stopwords.txt")))
}

pub fn parse_stopwords(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.to_lowercase())
        .collect()
}

/// Scan a post body for @mentions, #hashtags and indexable words.
///
/// Tokens are runs of `[A-Za-z0-9_]`; a token introduced by `@` or `#` at a
/// word boundary is an entity, everything else is word material. Mentions
/// must pass the username grammar as written; hashtags are lowercased. Words
/// are lowercased, filtered by minimum length and the stopword list, and
/// capped per post. All three lists are deduplicated in first-seen order.
pub fn extract_entities(
    text: &str,
    stopwords: &BTreeSet<String>,
    params: &MicroblogParams,
) -> EntitySet {
    let mut out = EntitySet::default();
    let mut seen_mentions = BTreeSet::new();
    let mut seen_tags = BTreeSet::new();
    let mut seen_words = BTreeSet::new();

    let bytes = text.as_bytes();
    let mut i = 0;
    let mut prev_is_word = false;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if (c == '@' || c == '#') && !prev_is_word {
            let start = i + 1;
            let mut end = start;
            while end < bytes.len() && is_token_byte(bytes[end]) {
                end += 1;
            }
            let token = &text[start..end];
            if !token.is_empty() {
                if c == '@' {
                    if let Ok(user) = Username::parse(token) {
                        if seen_mentions.insert(user.clone()) {
                            out.mentions.push(user);
                        }
                    }
                } else {
                    let tag = token.to_lowercase();
                    if seen_tags.insert(tag.clone()) {
                        out.hashtags.push(tag);
                    }
                }
            }
            prev_is_word = true;
            i = end.max(i + 1);
            continue;
        }
        if is_token_byte(bytes[i]) {
            let start = i;
            let mut end = i;
            while end < bytes.len() && is_token_byte(bytes[end]) {
                end += 1;
            }
            let word = text[start..end].to_lowercase();
            if word.chars().count() >= params.min_word_len
                && !stopwords.contains(&word)
                && out.words.len() < params.words_per_post
                && seen_words.insert(word.clone())
            {
                out.words.push(word);
            }
            prev_is_word = true;
            i = end;
            continue;
        }
        prev_is_word = false;
        // Skip over a full UTF-8 scalar, not just one byte.
        i += text[i..].chars().next().map(char::len_utf8).unwrap_or(1);
    }
    out
}

fn is_token_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

// ---------------------------------------------------------------------------
// Side-effect plans

/// A storage write the client owes the network for this post.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedPut {
    pub target: StorageTarget,
    pub dst: Digest,
}

fn planned(target: StorageTarget) -> PlannedPut {
    let dst = storage_key(&target);
    PlannedPut { target, dst }
}

/// One action per base PUT and per extracted entity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanAction {
    /// PUT of the post to its own single-value address.
    StorePost(PlannedPut),
    /// PUT to the user's swarm gateway address.
    SwarmGateway(PlannedPut),
    /// Mention notification: routed to the user's identity digest and
    /// accumulated at the mention collection address.
    Mention {
        user: Username,
        route_dst: Digest,
        store: PlannedPut,
    },
    /// Copy of a reply/RT to the original post's reply collection.
    ReplyCopy(PlannedPut),
    /// Hashtag collection PUT; the tag also names a swarm the routed PUT's
    /// gateway will flood into.
    Hashtag { tag: String, store: PlannedPut },
    /// Word-index collection PUT.
    WordIndex { word: String, store: PlannedPut },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SideEffectPlan {
    pub post: UserPost,
    pub actions: Vec<PlanAction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum PostError {
    #[error("post exceeds {MAX_POST_CHARS} characters")]
    OverLength,
    #[error("author is not registered in the chain directory")]
    NotRegistered,
    #[error("sequence number exceeds the chain-coupled rate bound")]
    RateLimited,
    #[error("reply reference required for this post kind")]
    MissingReplyRef,
    #[error("recipient is not a known follower")]
    NotAFollower,
    #[error("recipient key not found in the directory")]
    RecipientUnknown,
    #[error("direct message could not be sealed")]
    SealFailed,
}

/// A user identity operated by a node: keys, the post counter, and the
/// node-local social state. `followers` is who this user believes follows
/// them — populated out of band; nothing on the wire proves followership.
#[derive(Debug, Clone)]
pub struct UserAccount {
    pub username: Username,
    pub keys: KeyPair,
    pub next_k: u64,
    pub followers: BTreeSet<Username>,
    pub following: BTreeSet<Username>,
}

impl UserAccount {
    pub fn new(username: Username, keys: KeyPair) -> UserAccount {
        UserAccount {
            username,
            keys,
            next_k: 1,
            followers: BTreeSet::new(),
            following: BTreeSet::new(),
        }
    }
}

/// The chain-coupled post-rate bound: `k < 2 * delta + 20` where `delta` is
/// the block distance since the author registered.
pub fn post_rate_allows(k: u64, registration_height: u64, tip_height: u64) -> bool {
    let delta = tip_height.saturating_sub(registration_height);
    k < 2 * delta + 20
}

/// Steady-state posts per day the bound admits, given the block target.
pub fn daily_post_allowance(block_target_ticks: u64) -> u64 {
    2 * (86_400 / block_target_ticks)
}

fn check_rate(account: &UserAccount, chain: &ChainState, k: u64) -> Result<(), PostError> {
    let entry = chain
        .lookup_pubkey(&account.username)
        .ok_or(PostError::NotRegistered)?;
    if !post_rate_allows(k, entry.height, chain.tip_height()) {
        return Err(PostError::RateLimited);
    }
    Ok(())
}

/// Build a signed post plus the complete side-effect plan: the two base PUTs,
/// one mention notification per extracted mention, the reply copy when
/// replying, and the hashtag/word collection PUTs. Bumps the account's post
/// counter.
pub fn create_post(
    account: &mut UserAccount,
    chain: &ChainState,
    text: &str,
    kind: PostKind,
    reply_ref: Option<(Username, u64)>,
    stopwords: &BTreeSet<String>,
    params: &MicroblogParams,
) -> Result<SideEffectPlan, PostError> {
    assert!(kind != PostKind::Dm, "direct messages go through create_dm");
    if text.chars().count() > MAX_POST_CHARS {
        return Err(PostError::OverLength);
    }
    let needs_ref = matches!(kind, PostKind::Reply | PostKind::Rt);
    if needs_ref != reply_ref.is_some() {
        return Err(PostError::MissingReplyRef);
    }
    let k = account.next_k;
    check_rate(account, chain, k)?;

    let post = UserPost::create(
        &account.keys,
        account.username.clone(),
        k,
        kind,
        PostBody::Text(text.to_owned()),
        reply_ref.clone(),
    );
    let mut actions = vec![
        PlanAction::StorePost(planned(post_target(&account.username, k))),
        PlanAction::SwarmGateway(planned(swarm_target(&account.username))),
    ];
    if let Some((orig_user, orig_k)) = &reply_ref {
        actions.push(PlanAction::ReplyCopy(planned(replies_target(
            orig_user, *orig_k,
        ))));
    }
    let entities = extract_entities(text, stopwords, params);
    for user in entities.mentions {
        // Unregistered mentions are skipped silently at execution time; the
        // plan still names them so the executor can decide against the
        // directory it sees then.
        let route_dst = user_id(&user);
        let store = planned(mention_target(&user));
        actions.push(PlanAction::Mention {
            user,
            route_dst,
            store,
        });
    }
    for tag in entities.hashtags {
        let store = planned(hashtag_target(&tag));
        actions.push(PlanAction::Hashtag { tag, store });
    }
    for word in entities.words {
        let store = planned(word_target(&word));
        actions.push(PlanAction::WordIndex { word, store });
    }
    account.next_k += 1;
    Ok(SideEffectPlan { post, actions })
}

/// Build a sealed direct message. The plan is the two base PUTs only: the
/// sealed body yields no entities, and the message travels exactly like any
/// other post.
pub fn create_dm(
    account: &mut UserAccount,
    chain: &ChainState,
    recipient: &Username,
    text: &str,
    rng: &mut impl RngCore,
) -> Result<SideEffectPlan, PostError> {
    if !account.followers.contains(recipient) {
        return Err(PostError::NotAFollower);
    }
    let recipient_key = chain
        .lookup_pubkey(recipient)
        .ok_or(PostError::RecipientUnknown)?
        .pubkey;
    if text.chars().count() > MAX_POST_CHARS {
        return Err(PostError::OverLength);
    }
    let k = account.next_k;
    check_rate(account, chain, k)?;
    let sealed = crypto::seal_for(&recipient_key, text.as_bytes(), rng)
        .map_err(|_| PostError::SealFailed)?;
    let post = UserPost::create(
        &account.keys,
        account.username.clone(),
        k,
        PostKind::Dm,
        PostBody::Sealed(sealed),
        None,
    );
    let actions = vec![
        PlanAction::StorePost(planned(post_target(&account.username, k))),
        PlanAction::SwarmGateway(planned(swarm_target(&account.username))),
    ];
    account.next_k += 1;
    Ok(SideEffectPlan { post, actions })
}

/// Attempt to open a DM with this keypair. `None` means "not addressed to
/// us" — failure is the protocol's addressing mechanism, so it is silent.
pub fn try_open_dm(keys: &KeyPair, post: &UserPost) -> Option<Vec<u8>> {
    if post.kind != PostKind::Dm {
        return None;
    }
    let PostBody::Sealed(sealed) = &post.body else {
        return None;
    };
    crypto::open_with(&keys.private, sealed).ok()
}

/// Decode and authenticate a fetched post against the chain directory.
/// Returns `None` for anything that does not verify: wrong author, wrong
/// sequence number, unknown signer, bad signature or malformed bytes.
pub fn verify_fetched_post(
    bytes: &[u8],
    expected_user: &Username,
    expected_k: u64,
    chain: &ChainState,
) -> Option<UserPost> {
    let post = UserPost::decode_bytes(bytes).ok()?;
    if &post.username != expected_user || post.k != expected_k {
        return None;
    }
    let entry = chain.lookup_pubkey(&post.username)?;
    if !post.verify(&entry.pubkey) {
        return None;
    }
    Some(post)
}

/// Decode and authenticate a post from a multi collection (replies, hashtag
/// and word results), where author and sequence are the post's own claim.
pub fn verify_collected_post(bytes: &[u8], chain: &ChainState) -> Option<UserPost> {
    let post = UserPost::decode_bytes(bytes).ok()?;
    let entry = chain.lookup_pubkey(&post.username)?;
    if !post.verify(&entry.pubkey) {
        return None;
    }
    Some(post)
}

// ---------------------------------------------------------------------------
// Listeners

/// A forwarding arrangement near a user's identity digest: the listener
/// relays `ID_j` traffic to the user's real node once the user has proven key
/// ownership by signing a random challenge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ListenerRegistration {
    pub target_user: Username,
    pub forward_to: crate::dht::Endpoint,
    pub challenge_passed: bool,
}

pub fn challenge_response(keys: &KeyPair, challenge: &[u8]) -> Vec<u8> {
    crypto::sign_detached(&keys.private, challenge)
}

pub fn verify_challenge(pubkey: &PublicKey, challenge: &[u8], response: &[u8]) -> bool {
    crypto::verify_detached(pubkey, challenge, response)
}
