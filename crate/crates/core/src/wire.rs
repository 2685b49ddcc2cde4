//! Transport-level messages exchanged between simulated nodes.
//!
//! Everything on the wire is canonical-encoded: a u64 message tag followed by
//! the body fields. Routed packets and swarm frames nest their own encodings
//! unchanged, so their byte forms are identical whether carried or stored.

use crate::chain::Username;
use crate::crypto::Digest;
use crate::dht::{DhtPacket, Endpoint, PutPayload};
use crate::encode::{canonical_encode, DecodeError, Reader, Value};
use crate::swarm::SwarmFrame;

/// Payload of a routed [`DhtPacket`], the "application layer" above routing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RoutedPayload {
    /// Store request.
    Put(PutPayload),
    /// Mention notification: the full post, routed to the mentioned user's
    /// identity digest.
    Mention(Vec<u8>),
}

impl RoutedPayload {
    pub fn encode(&self) -> Vec<u8> {
        let v = match self {
            RoutedPayload::Put(p) => Value::list(vec![Value::U64(0), p.encode_value()]),
            RoutedPayload::Mention(post) => {
                Value::list(vec![Value::U64(1), Value::Bytes(post.clone())])
            }
        };
        canonical_encode(&v)
    }

    pub fn decode_bytes(bytes: &[u8]) -> Result<RoutedPayload, DecodeError> {
        let mut r = Reader::new(bytes);
        let arity = r.list_len()?;
        if arity != 2 {
            return Err(DecodeError::BadField("routed payload arity"));
        }
        let tag = r.u64()?;
        let payload = match tag {
            0 => RoutedPayload::Put(PutPayload::decode(&mut r)?),
            1 => RoutedPayload::Mention(r.bytes()?),
            _ => return Err(DecodeError::BadField("routed payload tag")),
        };
        r.finish()?;
        Ok(payload)
    }
}

/// GET response body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GetRespBody {
    NotFound,
    Single {
        value: Vec<u8>,
        time: u64,
        seq: u64,
    },
    Multi {
        values: Vec<(Vec<u8>, u64, Username)>,
    },
    /// Live peer endpoints, as observed by a tracker maintainer.
    Tracker { peers: Vec<Endpoint> },
}

impl GetRespBody {
    fn encode_value(&self) -> Value {
        match self {
            GetRespBody::NotFound => Value::list(vec![Value::U64(0)]),
            GetRespBody::Single { value, time, seq } => Value::list(vec![
                Value::U64(1),
                Value::Bytes(value.clone()),
                Value::U64(*time),
                Value::U64(*seq),
            ]),
            GetRespBody::Multi { values } => Value::list(vec![
                Value::U64(2),
                Value::List(
                    values
                        .iter()
                        .map(|(v, t, s)| {
                            Value::list(vec![
                                Value::Bytes(v.clone()),
                                Value::U64(*t),
                                Value::str(s.as_str()),
                            ])
                        })
                        .collect(),
                ),
            ]),
            GetRespBody::Tracker { peers } => Value::list(vec![
                Value::U64(3),
                Value::List(peers.iter().map(|p| p.encode_value()).collect()),
            ]),
        }
    }

    fn decode(r: &mut Reader) -> Result<GetRespBody, DecodeError> {
        let arity = r.list_len()?;
        let tag = r.u64()?;
        match (tag, arity) {
            (0, 1) => Ok(GetRespBody::NotFound),
            (1, 4) => Ok(GetRespBody::Single {
                value: r.bytes()?,
                time: r.u64()?,
                seq: r.u64()?,
            }),
            (2, 2) => {
                let count = r.list_len()?;
                let mut values = Vec::new();
                for _ in 0..count {
                    if r.list_len()? != 3 {
                        return Err(DecodeError::BadField("multi value arity"));
                    }
                    let v = r.bytes()?;
                    let t = r.u64()?;
                    let signer = Username::parse(&r.string()?)
                        .map_err(|_| DecodeError::BadField("multi signer"))?;
                    values.push((v, t, signer));
                }
                Ok(GetRespBody::Multi { values })
            }
            (3, 2) => {
                let count = r.list_len()?;
                let mut peers = Vec::new();
                for _ in 0..count {
                    peers.push(Endpoint::decode(r)?);
                }
                Ok(GetRespBody::Tracker { peers })
            }
            _ => Err(DecodeError::BadField("get response tag")),
        }
    }
}

/// Node-to-node messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    /// Liveness probe, also used to settle bucket evictions.
    Ping { nonce: u64 },
    Pong { nonce: u64 },
    FindNode {
        req: u64,
        target: Digest,
    },
    /// Contacts are plain endpoints; the receiver re-derives their ids.
    FindNodeResp {
        req: u64,
        contacts: Vec<Endpoint>,
    },
    GetReq {
        req: u64,
        key: Digest,
    },
    GetResp {
        req: u64,
        body: GetRespBody,
        /// Optional operator signature over `[req, body]`.
        operator: Option<(Username, Vec<u8>)>,
    },
    /// A routed overlay packet (PUTs, mention notifications).
    Routed(DhtPacket),
    /// Chain gossip: an encoded block.
    Block(Vec<u8>),
    /// Backfill request for a block this node is missing (orphan repair).
    BlockRequest { hash: Digest },
    /// Ask a peer for its current tip block (join-time chain sync).
    TipRequest,
    /// Chain gossip: an encoded registration.
    RegGossip(Vec<u8>),
    /// A swarm frame (its own type-byte framing nested verbatim).
    Swarm(Vec<u8>),
    /// Gateway announcement to the tracker-key neighbors of a user swarm,
    /// obliging them to join as well.
    TrackerNotify {
        user: Username,
        swarm_key: Digest,
    },
    /// Listener election: ask a node near the user's identity digest to
    /// forward identity traffic to the sender.
    ListenerReq { target: Username },
    ListenerChallenge {
        target: Username,
        challenge: Vec<u8>,
    },
    ListenerResp {
        target: Username,
        response: Vec<u8>,
    },
    ListenerAck {
        target: Username,
        accepted: bool,
    },
}

/// Signing input for an operator-signed GET response.
pub fn get_resp_sign_payload(req: u64, body: &GetRespBody) -> Vec<u8> {
    canonical_encode(&Value::list(vec![Value::U64(req), body.encode_value()]))
}

impl Message {
    pub fn encode(&self) -> Vec<u8> {
        let v = match self {
            Message::Ping { nonce } => Value::list(vec![Value::U64(1), Value::U64(*nonce)]),
            Message::Pong { nonce } => Value::list(vec![Value::U64(2), Value::U64(*nonce)]),
            Message::FindNode { req, target } => {
                Value::list(vec![Value::U64(3), Value::U64(*req), Value::Digest(*target)])
            }
            Message::FindNodeResp { req, contacts } => Value::list(vec![
                Value::U64(4),
                Value::U64(*req),
                Value::List(contacts.iter().map(|c| c.encode_value()).collect()),
            ]),
            Message::GetReq { req, key } => {
                Value::list(vec![Value::U64(5), Value::U64(*req), Value::Digest(*key)])
            }
            Message::GetResp {
                req,
                body,
                operator,
            } => Value::list(vec![
                Value::U64(6),
                Value::U64(*req),
                body.encode_value(),
                Value::option(operator.as_ref().map(|(user, sig)| {
                    Value::list(vec![Value::str(user.as_str()), Value::Bytes(sig.clone())])
                })),
            ]),
            Message::Routed(packet) => {
                Value::list(vec![Value::U64(7), packet.encode_value()])
            }
            Message::Block(bytes) => Value::list(vec![Value::U64(8), Value::Bytes(bytes.clone())]),
            Message::BlockRequest { hash } => {
                Value::list(vec![Value::U64(16), Value::Digest(*hash)])
            }
            Message::TipRequest => Value::list(vec![Value::U64(17)]),
            Message::RegGossip(bytes) => {
                Value::list(vec![Value::U64(9), Value::Bytes(bytes.clone())])
            }
            Message::Swarm(frame) => Value::list(vec![Value::U64(10), Value::Bytes(frame.clone())]),
            Message::TrackerNotify { user, swarm_key } => Value::list(vec![
                Value::U64(11),
                Value::str(user.as_str()),
                Value::Digest(*swarm_key),
            ]),
            Message::ListenerReq { target } => {
                Value::list(vec![Value::U64(12), Value::str(target.as_str())])
            }
            Message::ListenerChallenge { target, challenge } => Value::list(vec![
                Value::U64(13),
                Value::str(target.as_str()),
                Value::Bytes(challenge.clone()),
            ]),
            Message::ListenerResp { target, response } => Value::list(vec![
                Value::U64(14),
                Value::str(target.as_str()),
                Value::Bytes(response.clone()),
            ]),
            Message::ListenerAck { target, accepted } => Value::list(vec![
                Value::U64(15),
                Value::str(target.as_str()),
                Value::U64(u64::from(*accepted)),
            ]),
        };
        canonical_encode(&v)
    }

    pub fn decode_bytes(bytes: &[u8]) -> Result<Message, DecodeError> {
        let mut r = Reader::new(bytes);
        let arity = r.list_len()?;
        let tag = r.u64()?;
        let msg = match (tag, arity) {
            (1, 2) => Message::Ping { nonce: r.u64()? },
            (2, 2) => Message::Pong { nonce: r.u64()? },
            (3, 3) => Message::FindNode {
                req: r.u64()?,
                target: r.digest()?,
            },
            (4, 3) => {
                let req = r.u64()?;
                let count = r.list_len()?;
                let mut contacts = Vec::new();
                for _ in 0..count {
                    contacts.push(Endpoint::decode(&mut r)?);
                }
                Message::FindNodeResp { req, contacts }
            }
            (5, 3) => Message::GetReq {
                req: r.u64()?,
                key: r.digest()?,
            },
            (6, 4) => {
                let req = r.u64()?;
                let body = GetRespBody::decode(&mut r)?;
                let opt = r.list_len()?;
                let operator = match opt {
                    0 => None,
                    1 => {
                        if r.list_len()? != 2 {
                            return Err(DecodeError::BadField("operator arity"));
                        }
                        let user = Username::parse(&r.string()?)
                            .map_err(|_| DecodeError::BadField("operator name"))?;
                        Some((user, r.bytes()?))
                    }
                    _ => return Err(DecodeError::BadField("operator option")),
                };
                Message::GetResp {
                    req,
                    body,
                    operator,
                }
            }
            (7, 2) => Message::Routed(DhtPacket::decode(&mut r)?),
            (8, 2) => Message::Block(r.bytes()?),
            (16, 2) => Message::BlockRequest { hash: r.digest()? },
            (17, 1) => Message::TipRequest,
            (9, 2) => Message::RegGossip(r.bytes()?),
            (10, 2) => Message::Swarm(r.bytes()?),
            (11, 3) => Message::TrackerNotify {
                user: Username::parse(&r.string()?)
                    .map_err(|_| DecodeError::BadField("notify user"))?,
                swarm_key: r.digest()?,
            },
            (12, 2) => Message::ListenerReq {
                target: Username::parse(&r.string()?)
                    .map_err(|_| DecodeError::BadField("listener target"))?,
            },
            (13, 3) => Message::ListenerChallenge {
                target: Username::parse(&r.string()?)
                    .map_err(|_| DecodeError::BadField("listener target"))?,
                challenge: r.bytes()?,
            },
            (14, 3) => Message::ListenerResp {
                target: Username::parse(&r.string()?)
                    .map_err(|_| DecodeError::BadField("listener target"))?,
                response: r.bytes()?,
            },
            (15, 3) => Message::ListenerAck {
                target: Username::parse(&r.string()?)
                    .map_err(|_| DecodeError::BadField("listener target"))?,
                accepted: match r.u64()? {
                    0 => false,
                    1 => true,
                    _ => return Err(DecodeError::BadField("ack flag")),
                },
            },
            _ => return Err(DecodeError::BadField("message tag")),
        };
        r.finish()?;
        Ok(msg)
    }

    /// Decode a swarm message's inner frame.
    pub fn swarm_frame(&self) -> Option<Result<SwarmFrame, DecodeError>> {
        match self {
            Message::Swarm(bytes) => Some(SwarmFrame::decode(bytes)),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{generate_keypair, sign};
    use crate::dht::{node_id, ResType, StorageTarget};

    fn name(s: &str) -> Username {
        Username::parse(s).unwrap()
    }

    #[test]
    fn message_roundtrips() {
        let kp = generate_keypair(&[3; 32]);
        let packet = DhtPacket {
            dst: node_id(Endpoint::new(1, 1)).id,
            src: node_id(Endpoint::new(2, 2)).id,
            signed_payload: sign(&kp.private, &name("alice"), b"data"),
            signer: name("alice"),
            hop_count: 0,
        };
        let put = PutPayload {
            target: StorageTarget::new("alice", "post1", ResType::Single),
            value: b"post".to_vec(),
            time: 99,
            seq: 1,
        };
        let messages = vec![
            Message::Ping { nonce: 7 },
            Message::Pong { nonce: 7 },
            Message::FindNode {
                req: 1,
                target: packet.dst,
            },
            Message::FindNodeResp {
                req: 1,
                contacts: vec![Endpoint::new(1, 1), Endpoint::new(2, 2)],
            },
            Message::GetReq {
                req: 2,
                key: packet.dst,
            },
            Message::GetResp {
                req: 2,
                body: GetRespBody::Single {
                    value: b"v".to_vec(),
                    time: 1,
                    seq: 1,
                },
                operator: Some((name("alice"), vec![0u8; 64])),
            },
            Message::GetResp {
                req: 3,
                body: GetRespBody::Multi {
                    values: vec![(b"a".to_vec(), 5, name("bob"))],
                },
                operator: None,
            },
            Message::GetResp {
                req: 4,
                body: GetRespBody::Tracker {
                    peers: vec![Endpoint::new(9, 9)],
                },
                operator: None,
            },
            Message::Routed(packet),
            Message::Block(b"blockbytes".to_vec()),
            Message::RegGossip(b"regbytes".to_vec()),
            Message::Swarm(vec![0x01, 0, 0, 0, 0, 0, 0, 0, 0]),
            Message::TrackerNotify {
                user: name("alice"),
                swarm_key: node_id(Endpoint::new(3, 3)).id,
            },
            Message::ListenerReq {
                target: name("alice"),
            },
            Message::ListenerChallenge {
                target: name("alice"),
                challenge: vec![1, 2, 3],
            },
            Message::ListenerResp {
                target: name("alice"),
                response: vec![4, 5, 6],
            },
            Message::ListenerAck {
                target: name("alice"),
                accepted: true,
            },
            Message::BlockRequest {
                hash: node_id(Endpoint::new(4, 4)).id,
            },
            Message::TipRequest,
        ];
        for msg in messages {
            let bytes = msg.encode();
            assert_eq!(Message::decode_bytes(&bytes).unwrap(), msg, "{msg:?}");
        }
    }

    #[test]
    fn routed_payload_roundtrip() {
        let put = RoutedPayload::Put(PutPayload {
            target: StorageTarget::new("p2p", "hashtag", ResType::Multi),
            value: b"postbytes".to_vec(),
            time: 10,
            seq: 0,
        });
        assert_eq!(
            RoutedPayload::decode_bytes(&put.encode()).unwrap(),
            put
        );
        let mention = RoutedPayload::Mention(b"postbytes".to_vec());
        assert_eq!(
            RoutedPayload::decode_bytes(&mention.encode()).unwrap(),
            mention
        );
    }

    #[test]
    fn garbage_rejected() {
        assert!(Message::decode_bytes(b"").is_err());
        assert!(Message::decode_bytes(&[0xFF; 40]).is_err());
        let valid = Message::Ping { nonce: 1 }.encode();
        let mut trailing = valid.clone();
        trailing.push(0);
        assert!(Message::decode_bytes(&trailing).is_err());
    }
}
