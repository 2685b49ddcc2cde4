//! Acceptance suite: one test per release criterion, each printing a
//! `acceptance NN <name>: PASS` line on success. Run with
//! `cargo test -p quill-cli --test acceptance` (add `-- --nocapture` to see
//! the lines as they pass).

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use quill_cli::runner::{run_scenario, Overrides, RunStatus};
use quill_cli::scenario::parse_scenario;
use quill_core::chain::{
    verify_registration_proof, ChainParams, ChainState, PromotedMessage, UserReg, Username,
};
use quill_core::crypto::{self, generate_keypair, pow_check, pow_search, KeyPair};
use quill_core::dht::{
    node_id, storage_key, xor_distance, DhtPacket, DhtParams, Endpoint, NodeStore, PutContext,
    PutPayload, ResType, StorageTarget,
};
use quill_core::microblog::{self, PostBody, PostKind, UserAccount, UserPost};
use quill_core::node::{ProtocolNode, ProtocolParams};
use quill_core::rng::Ratio;
use quill_core::simnet::{SimConfig, Simulation};
use quill_core::swarm::{validate_have, Role, SwarmId};
use quill_core::wire::RoutedPayload;

fn name(s: &str) -> Username {
    Username::parse(s).unwrap()
}

fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn fast_chain_params() -> ChainParams {
    ChainParams {
        userreg_difficulty: 8,
        initial_block_difficulty: 8,
        ..ChainParams::default()
    }
}

fn fast_params() -> ProtocolParams {
    ProtocolParams {
        chain: fast_chain_params(),
        ..ProtocolParams::default()
    }
}

/// A simulated network of protocol nodes with converged routing tables.
struct Cluster {
    sim: Simulation<ProtocolNode>,
    endpoints: Vec<Endpoint>,
}

impl Cluster {
    fn new(seed: u64, n: usize, latency: (u64, u64)) -> Cluster {
        let config = SimConfig {
            seed,
            latency,
            drop_probability: Ratio::ZERO,
            ..SimConfig::default()
        };
        let mut sim = Simulation::new(config);
        let mut endpoints = Vec::new();
        for i in 0..n {
            let endpoint = Endpoint::new(0x0A00_0001 + i as u32, 7000);
            let bootstrap = endpoints.first().copied().into_iter().collect();
            sim.spawn_node(
                endpoint,
                ProtocolNode::new(endpoint, fast_params(), bootstrap, None),
            )
            .unwrap();
            endpoints.push(endpoint);
            sim.run_for(3).unwrap();
        }
        sim.run_for(120).unwrap();
        // A second self-lookup round settles the tables.
        for e in endpoints.clone() {
            sim.invoke(e, |node, ctx| {
                let own = node.node_id().id;
                node.iterative_find(ctx, own);
            })
            .unwrap();
        }
        sim.run_for(120).unwrap();
        Cluster { sim, endpoints }
    }

    fn register_and_mine(&mut self, node: usize, user: &str) {
        let e = self.endpoints[node];
        self.sim
            .invoke(e, |n, ctx| n.register_user(ctx, name(user)))
            .unwrap();
        self.sim.run_for(30).unwrap();
        self.sim.invoke(e, |n, ctx| n.mine_now(ctx)).unwrap();
        self.sim.run_for(30).unwrap();
    }
}

// ---------------------------------------------------------------------------

/// Criterion 1: the chain-coupled rate limit has exact boundaries
/// (k < 2*delta + 20) and the steady-state daily allowance at the default
/// ten-minute block target is exactly 288 posts.
#[test]
fn acceptance_01_rate_limit_boundary() {
    let keys = generate_keypair(&[1; 32]);
    let mut chain = ChainState::new(fast_chain_params());
    let reg = UserReg::create(name("alice"), keys.public, 8, 0);
    let block = chain.mine_block(
        &[reg],
        PromotedMessage::none(name("miner")),
        10,
        0,
    );
    chain.apply_block(block).unwrap();

    let signed = |k: u64| {
        UserPost::create(
            &keys,
            name("alice"),
            k,
            PostKind::Post,
            PostBody::Text(format!("post {k}")),
            None,
        )
    };

    let mut delta = 0u64;
    for target_delta in [0u64, 1, 10, 100] {
        while delta < target_delta {
            let block = chain.mine_block(
                &[],
                PromotedMessage::none(name("miner")),
                20 + delta * 10,
                0,
            );
            chain.apply_block(block).unwrap();
            delta += 1;
        }
        let accept_k = 2 * target_delta + 19;
        let reject_k = 2 * target_delta + 20;
        assert!(
            validate_have(&signed(accept_k), &chain).is_ok(),
            "delta {target_delta}: k={accept_k} must be accepted"
        );
        assert!(
            validate_have(&signed(reject_k), &chain).is_err(),
            "delta {target_delta}: k={reject_k} must be rejected"
        );
    }

    assert_eq!(ChainParams::default().block_target_ticks, 600);
    assert_eq!(microblog::daily_post_allowance(600), 288);
    println!("acceptance 01 rate-limit-boundary: PASS");
}

/// Criterion 2: two partitions mining conflicting claims on one username
/// converge to exactly one key on every node, on every one of 20 seeds.
#[test]
fn acceptance_02_username_uniqueness_under_partition() {
    let path = scenario_dir().join("uniqueness_fork.scn");
    let text = std::fs::read_to_string(&path).expect("scenario file");
    let scenario = parse_scenario(&text).expect("scenario parses");
    for seed in 1..=20u64 {
        let overrides = Overrides {
            seed: Some(seed),
            difficulty_bits: None,
        };
        let report = run_scenario(&scenario, "uniqueness_fork", &overrides);
        assert_eq!(
            report.status,
            RunStatus::Pass,
            "seed {seed} failed: {:?}",
            report
                .assertions
                .iter()
                .filter(|a| !a.passed)
                .collect::<Vec<_>>()
        );
    }
    println!("acceptance 02 username-uniqueness-under-partition: PASS");
}

/// Independent reference evaluator for the five storage acceptance rules,
/// written directly from the rule list against its own shadow state.
struct ReferenceStore {
    singles: BTreeMap<(String, String), u64>,
}

impl ReferenceStore {
    fn evaluate(
        &mut self,
        dst: &quill_core::crypto::Digest,
        signer: &str,
        now: u64,
        is_neighbor: bool,
        put: &PutPayload,
        clock_skew: u64,
    ) -> Result<(), &'static str> {
        // Rule 1: the destination must equal H(target).
        if *dst != storage_key(&put.target) {
            return Err("bad-key");
        }
        // Rule 2: the receiving node must be a neighbor of the key.
        if !is_neighbor {
            return Err("not-neighbor");
        }
        // Trackers are read-only from the network.
        if put.target.resource == "tracker" {
            return Err("read-only");
        }
        let slot = (put.target.owner.clone(), put.target.resource.clone());
        if put.target.restype == ResType::Single {
            // Rule 3: only the owner writes single resources.
            if signer != put.target.owner {
                return Err("not-owner");
            }
            // Rule 4: sequence numbers must strictly increase.
            if let Some(stored) = self.singles.get(&slot) {
                if put.seq <= *stored {
                    return Err("stale-seq");
                }
            }
        }
        // Rule 5: no timestamps from the future.
        if put.time > now + clock_skew {
            return Err("future-time");
        }
        if put.target.restype == ResType::Single {
            self.singles.insert(slot, put.seq);
        }
        Ok(())
    }
}

/// Criterion 3: random PUT decisions agree with the reference evaluator on
/// 10^4 cases, including the reject reason.
#[test]
fn acceptance_03_storage_rule_matrix() {
    let params = DhtParams::default();
    let mut store = NodeStore::new();
    let mut reference = ReferenceStore {
        singles: BTreeMap::new(),
    };
    let mut rng = ChaCha20Rng::seed_from_u64(0x5707_A6E);
    let owners = ["alice", "bob", "carol"];
    let resources = ["post1", "post2", "avatar", "tracker", "replies3"];

    for case in 0..10_000u32 {
        let owner = owners[rng.gen_range(0..owners.len())];
        let resource = resources[rng.gen_range(0..resources.len())];
        let restype = if rng.gen_bool(0.5) {
            ResType::Single
        } else {
            ResType::Multi
        };
        let target = StorageTarget::new(owner, resource, restype);
        let correct_key = rng.gen_bool(0.9);
        let dst = if correct_key {
            storage_key(&target)
        } else {
            node_id(Endpoint::new(rng.gen(), rng.gen())).id
        };
        let signer = owners[rng.gen_range(0..owners.len())];
        let is_neighbor = rng.gen_bool(0.85);
        let now: u64 = 10_000;
        let time = if rng.gen_bool(0.85) {
            now.saturating_sub(rng.gen_range(0..5_000))
        } else {
            now + rng.gen_range(0..(params.clock_skew * 3))
        };
        let put = PutPayload {
            target,
            value: vec![rng.gen(); 8],
            time,
            seq: rng.gen_range(0..12),
        };
        let ctx = PutContext {
            dst,
            signer: name(signer),
            now,
            is_neighbor,
        };
        let got = store.handle_put(&ctx, &put, &params);
        let want = reference.evaluate(&dst, signer, now, is_neighbor, &put, params.clock_skew);
        let got_code = got.map_err(|e| e.code());
        assert_eq!(got_code, want, "case {case}: put {put:?}");
    }
    println!("acceptance 03 storage-rule-matrix: PASS (10000 cases, 100% agreement)");
}

/// Criterion 4: on a converged 30-node network, iterative lookup returns the
/// globally closest replica set in at least 95 of 100 trials, and routed
/// packets reach a replica-set node in at least 99% of trials.
#[test]
fn acceptance_04_lookup_and_routing_correctness() {
    let params = DhtParams::default();
    let mut cluster = Cluster::new(0xD177, 30, (1, 2));
    cluster.register_and_mine(0, "alice");
    cluster.sim.run_for(100).unwrap();

    let all_ids: Vec<(quill_core::crypto::Digest, Endpoint)> = cluster
        .endpoints
        .iter()
        .map(|e| (node_id(*e).id, *e))
        .collect();
    let global_closest = |target: &quill_core::crypto::Digest, r: usize| -> Vec<Endpoint> {
        let mut sorted = all_ids.clone();
        sorted.sort_by_key(|(id, _)| xor_distance(id, target));
        sorted.into_iter().take(r).map(|(_, e)| e).collect()
    };

    let mut rng = ChaCha20Rng::seed_from_u64(0x100C_07);
    let mut lookup_hits = 0;
    for _ in 0..100 {
        let target = node_id(Endpoint::new(rng.gen(), rng.gen())).id;
        let origin = cluster.endpoints[rng.gen_range(0..cluster.endpoints.len())];
        let mut req = 0;
        cluster
            .sim
            .invoke(origin, |n, ctx| req = n.iterative_find(ctx, target))
            .unwrap();
        cluster.sim.run_for(80).unwrap();
        let got: BTreeSet<Endpoint> = cluster
            .sim
            .node(origin)
            .unwrap()
            .lookup_result(req)
            .expect("lookup finished")
            .iter()
            .map(|c| c.endpoint)
            .collect();
        let want: BTreeSet<Endpoint> = global_closest(&target, params.r).into_iter().collect();
        if got == want {
            lookup_hits += 1;
        }
    }
    assert!(
        lookup_hits >= 95,
        "iterative_find matched the omniscient oracle in only {lookup_hits}/100 trials"
    );

    // Routed delivery: packets signed by a registered user, injected at a
    // random node, must reach one of the replica-set nodes for the key.
    let alice_keys = cluster
        .sim
        .node(cluster.endpoints[0])
        .unwrap()
        .account(&name("alice"))
        .unwrap()
        .keys
        .clone();
    let post = UserPost::create(
        &alice_keys,
        name("alice"),
        1,
        PostKind::Post,
        PostBody::Text("probe".into()),
        None,
    );
    let mut route_hits = 0;
    for _ in 0..100 {
        let dst = node_id(Endpoint::new(rng.gen(), rng.gen())).id;
        let origin = cluster.endpoints[rng.gen_range(0..cluster.endpoints.len())];
        let payload = RoutedPayload::Mention(post.encode()).encode();
        let packet = DhtPacket {
            dst,
            src: node_id(origin).id,
            signed_payload: crypto::sign(&alice_keys.private, &name("alice"), &payload),
            signer: name("alice"),
            hop_count: 0,
        };
        let trace_before = cluster.sim.trace().len();
        cluster
            .sim
            .invoke(origin, |n, ctx| n.inject_packet(ctx, packet))
            .unwrap();
        cluster.sim.run_for(60).unwrap();

        let want: BTreeSet<String> = global_closest(&dst, params.r)
            .into_iter()
            .map(|e| node_id(e).id.hex_prefix8())
            .collect();
        let detail = format!("dst {dst}");
        let delivered = cluster.sim.trace().entries()[trace_before..]
            .iter()
            .any(|row| row.kind == "routed-deliver" && row.detail == detail && want.contains(&row.node));
        if delivered {
            route_hits += 1;
        }
    }
    assert!(
        route_hits >= 99,
        "route_packet reached a replica-set node in only {route_hits}/100 trials"
    );
    println!(
        "acceptance 04 lookup-and-routing: PASS (lookup {lookup_hits}/100, route {route_hits}/100)"
    );
}

/// Criterion 5: in a 32-follower swarm with fanout 8, a new post reaches
/// every member within 5 flooding rounds and the duplicate-forward count
/// stays within N*F, over 20 seeds.
#[test]
fn acceptance_05_swarm_delivery() {
    for seed in 1..=20u64 {
        // Fixed latency of 1 tick makes flooding rounds equal tick deltas.
        let mut cluster = Cluster::new(seed, 36, (1, 1));
        cluster.register_and_mine(0, "alice");

        let followers: Vec<Endpoint> = cluster.endpoints[3..35].to_vec();
        assert_eq!(followers.len(), 32);
        for f in &followers {
            cluster
                .sim
                .invoke(*f, |n, ctx| {
                    n.join_user_swarm(ctx, &name("alice"), Role::Follower)
                })
                .unwrap();
            cluster.sim.run_for(2).unwrap();
        }
        cluster.sim.run_for(120).unwrap();

        let origin = cluster.endpoints[0];
        cluster
            .sim
            .invoke(origin, |n, ctx| {
                n.create_post(ctx, &name("alice"), "flood test", PostKind::Post, None)
                    .expect("post accepted");
            })
            .unwrap();
        cluster.sim.run_for(200).unwrap();

        // Every follower holds the piece.
        for f in &followers {
            assert!(
                cluster.sim.node(*f).unwrap().has_piece(&name("alice"), 1),
                "seed {seed}: follower {f} missed the post"
            );
        }

        // Flooding depth: ticks from gateway ingest to the last have-store.
        let trace = cluster.sim.trace();
        let ingest = trace
            .entries()
            .iter()
            .find(|e| e.kind == "swarm-ingest" && e.detail == "alice 1")
            .expect("gateway ingest")
            .tick;
        let mut last_store = ingest;
        for e in trace.entries() {
            if e.kind == "have-store" && e.detail == "alice 1" {
                last_store = last_store.max(e.tick);
            }
        }
        let rounds = last_store - ingest;
        assert!(
            rounds <= 5,
            "seed {seed}: flooding took {rounds} rounds"
        );

        // Dedup bound on duplicate forwards.
        let members = cluster
            .endpoints
            .iter()
            .filter(|e| {
                cluster
                    .sim
                    .node(**e)
                    .unwrap()
                    .swarm_membership(&SwarmId::user(&name("alice")).id)
                    .is_some()
            })
            .count() as u64;
        let duplicates: u64 = cluster
            .endpoints
            .iter()
            .map(|e| cluster.sim.node(*e).unwrap().metrics().haves_duplicate)
            .sum();
        let bound = members * 8;
        assert!(
            duplicates <= bound,
            "seed {seed}: {duplicates} duplicate forwards exceeds N*F = {bound}"
        );
    }
    println!("acceptance 05 swarm-delivery: PASS (20 seeds)");
}

/// Criterion 6: posts fetched from DHT storage are byte-identical to the
/// pieces delivered through the swarm, for every (user, k) in a mixed
/// scenario.
#[test]
fn acceptance_06_dual_channel_equivalence() {
    let mut cluster = Cluster::new(0xDCE, 10, (1, 3));
    cluster.register_and_mine(0, "alice");
    cluster.register_and_mine(1, "bob");

    // bob follows alice and vice versa; both will hold each other's pieces.
    for (home, user) in [(1usize, "alice"), (0usize, "bob")] {
        let e = cluster.endpoints[home];
        cluster
            .sim
            .invoke(e, |n, ctx| n.join_user_swarm(ctx, &name(user), Role::Follower))
            .unwrap();
    }
    // Out-of-band follower knowledge for the DM.
    cluster
        .sim
        .invoke(cluster.endpoints[0], |n, _| {
            n.note_follower(&name("alice"), name("bob"))
        })
        .unwrap();
    cluster.sim.run_for(80).unwrap();

    let posts: &[(usize, &str, &str)] = &[
        (0, "alice", "first dispatch #mesh"),
        (0, "alice", "second with a mention of @bob"),
        (1, "bob", "bob says plain things"),
    ];
    for (node, user, text) in posts {
        let e = cluster.endpoints[*node];
        let user = name(user);
        let text = text.to_string();
        cluster
            .sim
            .invoke(e, |n, ctx| {
                n.create_post(ctx, &user, &text, PostKind::Post, None)
                    .expect("post accepted");
            })
            .unwrap();
        cluster.sim.run_for(60).unwrap();
    }
    // A reply and a DM join the mix.
    cluster
        .sim
        .invoke(cluster.endpoints[1], |n, ctx| {
            n.create_post(
                ctx,
                &name("bob"),
                "replying to alice",
                PostKind::Reply,
                Some((name("alice"), 1)),
            )
            .expect("reply accepted");
        })
        .unwrap();
    cluster.sim.run_for(60).unwrap();
    cluster
        .sim
        .invoke(cluster.endpoints[0], |n, ctx| {
            n.create_dm(ctx, &name("alice"), &name("bob"), "sealed note")
                .expect("dm accepted");
        })
        .unwrap();
    cluster.sim.run_for(200).unwrap();

    let fetcher = cluster.endpoints[7];
    let cases: &[(&str, u64, usize)] = &[
        ("alice", 1, 1),
        ("alice", 2, 1),
        ("alice", 3, 1), // the DM
        ("bob", 1, 0),
        ("bob", 2, 0),
    ];
    for (user, k, follower_node) in cases {
        let user = name(user);
        let piece = cluster
            .sim
            .node(cluster.endpoints[*follower_node])
            .unwrap()
            .piece_bytes(&user, *k)
            .unwrap_or_else(|| panic!("piece ({user}, {k}) not delivered"))
            .clone();
        let u = user.clone();
        let kk = *k;
        cluster
            .sim
            .invoke(fetcher, |n, ctx| n.fetch_post(ctx, u, kk))
            .unwrap();
        cluster.sim.run_for(100).unwrap();
        let fetched = cluster
            .sim
            .node(fetcher)
            .unwrap()
            .fetched()
            .posts
            .get(&(user.clone(), *k))
            .cloned()
            .flatten()
            .unwrap_or_else(|| panic!("fetch ({user}, {k}) failed"));
        assert_eq!(
            fetched.encode(),
            piece,
            "byte mismatch between channels for ({user}, {k})"
        );
    }
    println!("acceptance 06 dual-channel-equivalence: PASS (5 posts byte-equal)");
}

/// Criterion 7: in a ten-user universe every DM opens under exactly one of
/// the ten keys.
#[test]
fn acceptance_07_dm_confidentiality() {
    let keypairs: Vec<KeyPair> = (0..10u8).map(|i| generate_keypair(&[i + 10; 32])).collect();
    let mut chain = ChainState::new(fast_chain_params());
    let regs: Vec<UserReg> = keypairs
        .iter()
        .enumerate()
        .map(|(i, kp)| UserReg::create(name(&format!("user{i}")), kp.public, 8, 0))
        .collect();
    let block = chain.mine_block(&regs, PromotedMessage::none(name("miner")), 10, 0);
    chain.apply_block(block).unwrap();

    let mut rng = ChaCha20Rng::seed_from_u64(0xD3);
    for sender in 0..10usize {
        for recipient in 0..10usize {
            let mut account =
                UserAccount::new(name(&format!("user{sender}")), keypairs[sender].clone());
            account.followers.insert(name(&format!("user{recipient}")));
            let plan = microblog::create_dm(
                &mut account,
                &chain,
                &name(&format!("user{recipient}")),
                "between two of ten",
                &mut rng,
            )
            .unwrap();
            let openers: Vec<usize> = (0..10)
                .filter(|i| {
                    let probe =
                        UserAccount::new(name(&format!("user{i}")), keypairs[*i].clone());
                    microblog::try_open_dm(&probe.keys, &plan.post).is_some()
                })
                .collect();
            assert_eq!(
                openers,
                vec![recipient],
                "dm {sender}->{recipient} opened under the wrong key set"
            );
        }
    }
    println!("acceptance 07 dm-confidentiality: PASS (100 sender/recipient pairs)");
}

/// Criterion 8: proof-of-work statistics and block tamper-resistance. Mean
/// search effort at difficulty 10 sits within [2^9, 2^11]; mined blocks pass
/// the check; any byte tamper invalidates a block.
#[test]
fn acceptance_08_pow_statistics_and_tampering() {
    // Mean attempts across 100 independent payloads.
    let mut total_attempts: u64 = 0;
    for trial in 0..100u64 {
        let payload = format!("pow trial {trial}").into_bytes();
        let nonce = pow_search(&payload, 10, 0);
        total_attempts += nonce + 1; // nonces 0..=n were tested
    }
    let mean = total_attempts / 100;
    assert!(
        (512..=2048).contains(&mean),
        "mean search effort {mean} outside [2^9, 2^11]"
    );

    // Every mined block passes the check.
    let params = ChainParams {
        userreg_difficulty: 12,
        initial_block_difficulty: 12,
        ..ChainParams::default()
    };
    let mut chain = ChainState::new(params);
    let keys = generate_keypair(&[2; 32]);
    let reg = UserReg::create(name("alice"), keys.public, 12, 0);
    let mut blocks = Vec::new();
    for (i, regs) in [vec![reg], vec![], vec![]].into_iter().enumerate() {
        let block = chain.mine_block(
            &regs,
            PromotedMessage::none(name("miner")),
            10 + i as u64 * 10,
            0,
        );
        assert!(
            pow_check(&block.header_payload(), block.nonce, block.difficulty_bits),
            "mined block fails its own proof of work"
        );
        blocks.push(block.clone());
        chain.apply_block(block).unwrap();
    }

    // Tampering: every single-byte mutation of the second block fails
    // validation against the state it was mined on.
    let mut base = ChainState::new(ChainParams {
        userreg_difficulty: 12,
        initial_block_difficulty: 12,
        ..ChainParams::default()
    });
    base.apply_block(blocks[0].clone()).unwrap();
    let target = &blocks[1];
    let bytes = target.encode();
    let mut tampers_rejected = 0usize;
    for i in 0..bytes.len() {
        let mut mutated = bytes.clone();
        mutated[i] = mutated[i].wrapping_add(1);
        let mut reader = quill_core::encode::Reader::new(&mutated);
        let verdict = match quill_core::chain::Block::decode(&mut reader) {
            Ok(block) => {
                if reader.finish().is_err() {
                    Err(())
                } else {
                    base.validate_block(&block).map_err(|_| ())
                }
            }
            Err(_) => Err(()),
        };
        assert!(
            verdict.is_err(),
            "byte {i} tamper produced a block that still validates"
        );
        tampers_rejected += 1;
    }
    println!(
        "acceptance 08 pow-statistics: PASS (mean {mean} attempts, {tampers_rejected} tampers rejected)"
    );
}

/// Criterion 9: thin-client registration proofs verify against the header
/// hash chain, and 100 single-bit mutations all fail.
#[test]
fn acceptance_09_thin_client_proofs() {
    let mut chain = ChainState::new(fast_chain_params());
    let regs: Vec<UserReg> = (0..7u8)
        .map(|i| {
            UserReg::create(
                name(&format!("user{i}")),
                generate_keypair(&[i + 30; 32]).public,
                8,
                0,
            )
        })
        .collect();
    let block = chain.mine_block(&regs, PromotedMessage::none(name("miner")), 10, 0);
    let block_hash = block.hash();
    chain.apply_block(block).unwrap();
    for i in 0..3 {
        let b = chain.mine_block(&[], PromotedMessage::none(name("miner")), 20 + i * 10, 0);
        chain.apply_block(b).unwrap();
    }

    // The thin client holds only (height, header hash) pairs.
    let header_chain = chain.header_chain();
    let proof = chain.merkle_prove(&block_hash, &name("user4")).unwrap();
    assert!(verify_registration_proof(&header_chain, &proof));

    let bytes = proof.encode();
    let mut rng = ChaCha20Rng::seed_from_u64(0x9);
    let mut failed = 0;
    for trial in 0..100 {
        let bit = rng.gen_range(0..bytes.len() * 8);
        let mut mutated = bytes.clone();
        mutated[bit / 8] ^= 1 << (bit % 8);
        let ok = match quill_core::chain::RegistrationProof::decode_bytes(&mutated) {
            Ok(p) => verify_registration_proof(&header_chain, &p),
            Err(_) => false,
        };
        assert!(!ok, "trial {trial}: bit {bit} mutation still verifies");
        failed += 1;
    }
    println!("acceptance 09 thin-client-proofs: PASS ({failed}/100 mutations rejected)");
}

/// Criterion 10: every shipped scenario is deterministic (two runs, same
/// digest) and matches its committed golden digest.
#[test]
fn acceptance_10_determinism_and_golden_digests() {
    let dir = scenario_dir();
    let golden_text = std::fs::read_to_string(dir.join("golden_digests.txt"))
        .expect("golden digest file (regenerate with tools/update_goldens.sh)");
    let goldens: BTreeMap<String, String> = golden_text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let mut parts = l.split_whitespace();
            let name = parts.next().expect("scenario name").to_owned();
            let digest = parts.next().expect("digest").to_owned();
            (name, digest)
        })
        .collect();
    assert!(goldens.len() >= 8, "need at least 8 golden scenarios");

    let mut checked = 0;
    for (scenario_name, want_digest) in &goldens {
        let path = dir.join(format!("{scenario_name}.scn"));
        let text = std::fs::read_to_string(&path).expect("scenario exists");
        let scenario = parse_scenario(&text).expect("scenario parses");
        let overrides = Overrides::default();
        let first = run_scenario(&scenario, scenario_name, &overrides);
        let second = run_scenario(&scenario, scenario_name, &overrides);
        assert_eq!(
            first.trace_digest, second.trace_digest,
            "{scenario_name}: same seed produced different traces"
        );
        assert_eq!(
            &first.trace_digest, want_digest,
            "{scenario_name}: digest drifted from committed golden"
        );
        assert_eq!(first.status, RunStatus::Pass, "{scenario_name} must pass");
        checked += 1;
    }
    println!("acceptance 10 determinism-and-goldens: PASS ({checked} scenarios, two runs each)");
}

/// Criterion 11: after a confirmed key replacement, old-key posts are
/// rejected by every verifier and listener challenges succeed only under the
/// new key.
#[test]
fn acceptance_11_key_replacement_end_to_end() {
    let mut cluster = Cluster::new(0x11, 8, (1, 3));
    cluster.register_and_mine(0, "alice");
    cluster.sim.run_for(100).unwrap();

    let home = cluster.endpoints[0];
    let old_keys = cluster
        .sim
        .node(home)
        .unwrap()
        .account(&name("alice"))
        .unwrap()
        .keys
        .clone();

    cluster
        .sim
        .invoke(home, |n, ctx| {
            assert!(n.replace_user_key(ctx, &name("alice")));
        })
        .unwrap();
    cluster.sim.run_for(30).unwrap();
    // Confirm the replacement to the default depth.
    for i in 0..7 {
        let miner = cluster.endpoints[i % 3];
        cluster.sim.invoke(miner, |n, ctx| n.mine_now(ctx)).unwrap();
        cluster.sim.run_for(20).unwrap();
    }
    cluster.sim.run_for(150).unwrap();

    let new_keys = cluster
        .sim
        .node(home)
        .unwrap()
        .account(&name("alice"))
        .unwrap()
        .keys
        .clone();
    for e in &cluster.endpoints {
        let chain = cluster.sim.node(*e).unwrap().chain();
        assert!(
            chain.is_confirmed(&name("alice"), chain.params().confirm_depth),
            "replacement not confirmed at {e}"
        );
        let entry = chain.lookup_pubkey(&name("alice")).unwrap();
        assert_eq!(entry.pubkey, new_keys.public, "stale key at {e}");
    }

    // Old-key posts are rejected by every verifier.
    let forged = UserPost::create(
        &old_keys,
        name("alice"),
        1,
        PostKind::Post,
        PostBody::Text("from the revoked key".into()),
        None,
    );
    for e in &cluster.endpoints {
        let chain = cluster.sim.node(*e).unwrap().chain();
        assert!(
            validate_have(&forged, chain).is_err(),
            "old-key post accepted at {e}"
        );
        assert!(
            microblog::verify_fetched_post(&forged.encode(), &name("alice"), 1, chain).is_none(),
            "old-key post fetch-verified at {e}"
        );
    }

    // Listener challenges: the directory key decides, so old-key responses
    // are refused and new-key responses accepted, at every node.
    let challenge = [0x42u8; 32];
    let old_response = microblog::challenge_response(&old_keys, &challenge);
    let new_response = microblog::challenge_response(&new_keys, &challenge);
    for e in &cluster.endpoints {
        let entry = cluster
            .sim
            .node(*e)
            .unwrap()
            .chain()
            .lookup_pubkey(&name("alice"))
            .unwrap();
        assert!(!microblog::verify_challenge(
            &entry.pubkey,
            &challenge,
            &old_response
        ));
        assert!(microblog::verify_challenge(
            &entry.pubkey,
            &challenge,
            &new_response
        ));
    }

    // And the node did re-acquire live listeners under the new key.
    let acquired = cluster
        .sim
        .node(home)
        .unwrap()
        .listeners_for(&name("alice"));
    assert!(acquired > 0, "no listeners re-acquired after replacement");
    println!("acceptance 11 key-replacement-end-to-end: PASS");
}
