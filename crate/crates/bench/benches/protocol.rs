//! Benchmarks for the hot paths: hashing and proof-of-work, signatures,
//! sealed boxes, canonical encoding, Merkle proofs, storage decisions, and a
//! whole scenario run through the simulator.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;

use quill_cli::runner::{run_scenario, Overrides};
use quill_cli::scenario::parse_scenario;
use quill_core::chain::{ChainParams, ChainState, PromotedMessage, UserReg, Username};
use quill_core::crypto::{self, generate_keypair};
use quill_core::dht::{storage_key, DhtParams, NodeStore, PutContext, PutPayload, ResType, StorageTarget};
use quill_core::encode::{canonical_encode, Value};
use quill_core::merkle;
use quill_core::microblog::{PostBody, PostKind, UserPost};

fn name(s: &str) -> Username {
    Username::parse(s).unwrap()
}

fn bench_crypto(c: &mut Criterion) {
    let kp = generate_keypair(&[7; 32]);
    let payload = b"the quick brown fox posts 140 characters of overlay traffic";

    c.bench_function("sha256_hash", |b| {
        b.iter(|| crypto::hash(black_box(payload)))
    });

    c.bench_function("sign", |b| {
        b.iter(|| crypto::sign_detached(&kp.private, black_box(payload)))
    });

    let sig = crypto::sign_detached(&kp.private, payload);
    c.bench_function("verify", |b| {
        b.iter(|| crypto::verify_detached(&kp.public, black_box(payload), &sig))
    });

    c.bench_function("seal_and_open", |b| {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        b.iter(|| {
            let sealed = crypto::seal_for(&kp.public, black_box(payload), &mut rng).unwrap();
            crypto::open_with(&kp.private, &sealed).unwrap()
        })
    });

    c.bench_function("pow_search_8bits", |b| {
        let mut salt = 0u64;
        b.iter(|| {
            salt += 1;
            crypto::pow_search(&salt.to_be_bytes(), 8, 0)
        })
    });
}

fn bench_encoding(c: &mut Criterion) {
    let kp = generate_keypair(&[8; 32]);
    let post = UserPost::create(
        &kp,
        name("alice"),
        42,
        PostKind::Post,
        PostBody::Text("a message with #tags and @mentions and indexable words".into()),
        None,
    );
    c.bench_function("post_encode", |b| b.iter(|| black_box(&post).encode()));
    let bytes = post.encode();
    c.bench_function("post_decode", |b| {
        b.iter(|| UserPost::decode_bytes(black_box(&bytes)).unwrap())
    });
    let value = Value::list(vec![
        Value::U64(7),
        Value::str("canonical"),
        Value::bytes(vec![0xAB; 64]),
        Value::List((0..16u64).map(Value::U64).collect()),
    ]);
    c.bench_function("canonical_encode", |b| {
        b.iter(|| canonical_encode(black_box(&value)))
    });
}

fn bench_merkle(c: &mut Criterion) {
    let leaves: Vec<_> = (0..64u64)
        .map(|i| merkle::leaf_hash(&i.to_be_bytes()))
        .collect();
    c.bench_function("merkle_root_64", |b| {
        b.iter(|| merkle::merkle_root(black_box(&leaves)))
    });
    let root = merkle::merkle_root(&leaves);
    let proof = merkle::prove(&leaves, 17).unwrap();
    c.bench_function("merkle_verify", |b| {
        b.iter(|| merkle::verify(black_box(&root), &leaves[17], &proof))
    });
}

fn bench_chain(c: &mut Criterion) {
    let params = ChainParams {
        userreg_difficulty: 8,
        initial_block_difficulty: 8,
        ..ChainParams::default()
    };
    c.bench_function("mine_and_validate_block", |b| {
        let state = ChainState::new(params.clone());
        let reg = UserReg::create(name("alice"), generate_keypair(&[3; 32]).public, 8, 0);
        let mut nonce = 0u64;
        b.iter(|| {
            nonce += 1;
            let block = state.mine_block(
                &[reg.clone()],
                PromotedMessage::none(name("miner")),
                nonce,
                0,
            );
            state.validate_block(black_box(&block)).unwrap();
        })
    });
}

fn bench_storage(c: &mut Criterion) {
    let params = DhtParams::default();
    c.bench_function("handle_put_single", |b| {
        let mut store = NodeStore::new();
        let mut seq = 0u64;
        b.iter(|| {
            seq += 1;
            let target = StorageTarget::new("alice", "post1", ResType::Single);
            let put = PutPayload {
                target,
                value: vec![0xCD; 200],
                time: 100,
                seq,
            };
            let ctx = PutContext {
                dst: storage_key(&put.target),
                signer: name("alice"),
                now: 100,
                is_neighbor: true,
            };
            store.handle_put(&ctx, black_box(&put), &params).unwrap();
        })
    });
}

fn bench_scenario(c: &mut Criterion) {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/basic_post.scn");
    let text = std::fs::read_to_string(path).expect("scenario file");
    let scenario = parse_scenario(&text).expect("scenario parses");
    c.bench_function("run_basic_post_scenario", |b| {
        b.iter(|| {
            let report = run_scenario(black_box(&scenario), "basic_post", &Overrides::default());
            assert_eq!(report.failed_assertions(), 0);
        })
    });
}

criterion_group!(
    benches,
    bench_crypto,
    bench_encoding,
    bench_merkle,
    bench_chain,
    bench_storage,
    bench_scenario
);
criterion_main!(benches);
