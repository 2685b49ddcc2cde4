//! Three-overlay peer-to-peer microblogging protocol, built for deterministic
//! simulation testing.
//!
//! The stack has three mostly independent overlays plus the harness that runs
//! them:
//!
//! * [`chain`] — a proof-of-work block chain acting as the decentralized
//!   username -> public key registry (mining, validation, longest-chain
//!   selection, key replacement, thin-client Merkle proofs).
//! * [`dht`] — a Kademlia-style routed overlay with signed packets and the
//!   single/multi key-value storage rules.
//! * [`swarm`] — per-user follower swarms exchanging posts Bittorrent-style:
//!   gateways, "have" flooding, bitlists and piece transfer.
//! * [`microblog`] — application semantics on top: posts, replies, direct
//!   messages, mentions, hashtags and word indexing.
//! * [`simnet`] — a seeded discrete-event network simulator; same seed, same
//!   trace, byte for byte.
//! * [`node`] — the full protocol node run inside the simulator.
//!
//! [`crypto`] and [`encode`] hold the primitives everything else consumes.

pub mod chain;
pub mod crypto;
pub mod dht;
pub mod encode;
pub mod merkle;
pub mod microblog;
pub mod node;
pub mod rng;
pub mod simnet;
pub mod swarm;
pub mod wire;

pub use chain::{ChainParams, ChainState, Username};
pub use crypto::{Digest, KeyPair, PublicKey};
pub use dht::{Endpoint, NodeId, StorageTarget};
pub use microblog::UserPost;
pub use node::ProtocolNode;
pub use simnet::{SimConfig, Simulation, Trace};
