//! Scenario execution: build a simulated network from the directives, run
//! it, evaluate assertions in place, and assemble the run report.

use std::collections::{BTreeMap, BTreeSet};

use quill_core::chain::{ChainParams, Username};
use quill_core::dht::Endpoint;
use quill_core::microblog::PostKind;
use quill_core::node::{ProtocolNode, ProtocolParams};
use quill_core::simnet::{SimConfig, Simulation, Trace};
use quill_core::swarm::Role;

use crate::scenario::{Directive, Scenario};

/// Flag-level overrides applied on top of the scenario header.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub difficulty_bits: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssertionResult {
    pub line: usize,
    pub text: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Pass,
    AssertionsFailed,
    RuntimeCap,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub name: String,
    pub seed: u64,
    pub status: RunStatus,
    pub assertions: Vec<AssertionResult>,
    pub trace_digest: String,
    pub trace_events: usize,
    pub ticks: u64,
    pub metrics: Vec<(String, u64)>,
}

impl RunReport {
    pub fn failed_assertions(&self) -> usize {
        self.assertions.iter().filter(|a| !a.passed).count()
    }

    /// Structured text form: `key: value` lines, machine-diffable, byte
    /// stable for a fixed (scenario, seed, flags).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let status = match self.status {
            RunStatus::Pass => "pass",
            RunStatus::AssertionsFailed => "fail",
            RunStatus::RuntimeCap => "aborted",
        };
        out.push_str(&format!("scenario: {}\n", self.name));
        out.push_str(&format!("seed: {}\n", self.seed));
        out.push_str(&format!("status: {status}\n"));
        out.push_str(&format!("ticks: {}\n", self.ticks));
        out.push_str(&format!("assertions_total: {}\n", self.assertions.len()));
        out.push_str(&format!(
            "assertions_failed: {}\n",
            self.failed_assertions()
        ));
        out.push_str(&format!("trace_events: {}\n", self.trace_events));
        out.push_str(&format!("trace_digest: {}\n", self.trace_digest));
        for (key, value) in &self.metrics {
            out.push_str(&format!("{key}: {value}\n"));
        }
        for (i, a) in self.assertions.iter().enumerate() {
            let verdict = if a.passed { "pass" } else { "fail" };
            if a.detail.is_empty() {
                out.push_str(&format!("assert.{}: {verdict} line {} `{}`\n", i + 1, a.line, a.text));
            } else {
                out.push_str(&format!(
                    "assert.{}: {verdict} line {} `{}` ({})\n",
                    i + 1,
                    a.line,
                    a.text,
                    a.detail
                ));
            }
        }
        out
    }
}

struct Runner {
    sim: Simulation<ProtocolNode>,
    spawn_order: Vec<Endpoint>,
    node_names: BTreeMap<String, Endpoint>,
    user_homes: BTreeMap<String, String>,
    params: ProtocolParams,
    max_ticks: u64,
    assertions: Vec<AssertionResult>,
    runtime_capped: bool,
}

pub fn run_scenario(scenario: &Scenario, name: &str, overrides: &Overrides) -> RunReport {
    run_scenario_with_trace(scenario, name, overrides).0
}

/// Run and also hand back the trace, for `--trace` output.
pub fn run_scenario_with_trace(
    scenario: &Scenario,
    name: &str,
    overrides: &Overrides,
) -> (RunReport, Trace) {
    let header = &scenario.header;
    let seed = overrides.seed.unwrap_or(header.seed);
    let difficulty = overrides.difficulty_bits.unwrap_or(header.difficulty_bits);
    let config = SimConfig {
        seed,
        latency: header.latency,
        drop_probability: header.drop_probability,
        max_ticks: header.max_ticks,
        ..SimConfig::default()
    };
    let params = ProtocolParams {
        chain: ChainParams {
            initial_block_difficulty: difficulty,
            userreg_difficulty: header.userreg_difficulty,
            ..ChainParams::default()
        },
        ..ProtocolParams::default()
    };
    let mut runner = Runner {
        sim: Simulation::new(config),
        spawn_order: Vec::new(),
        node_names: BTreeMap::new(),
        user_homes: BTreeMap::new(),
        params,
        max_ticks: header.max_ticks,
        assertions: Vec::new(),
        runtime_capped: false,
    };
    for (line, text, directive) in &scenario.directives {
        if runner.runtime_capped {
            break;
        }
        runner.execute(*line, text, directive);
    }
    let status = if runner.runtime_capped {
        RunStatus::RuntimeCap
    } else if runner.assertions.iter().any(|a| !a.passed) {
        RunStatus::AssertionsFailed
    } else {
        RunStatus::Pass
    };
    let metrics = runner.collect_metrics();
    let report = RunReport {
        name: name.to_owned(),
        seed,
        status,
        assertions: runner.assertions,
        trace_digest: runner.sim.trace_digest().to_hex(),
        trace_events: runner.sim.trace().len(),
        ticks: runner.sim.now(),
        metrics,
    };
    (report, runner.sim.trace().clone())
}

impl Runner {
    fn endpoint(&self, node: &str) -> Endpoint {
        self.node_names[node]
    }

    fn home_endpoint(&self, user: &str) -> Endpoint {
        self.endpoint(&self.user_homes[user].clone())
    }

    fn username(&self, user: &str) -> Username {
        Username::parse(user).expect("validated at parse time")
    }

    fn assert_result(&mut self, line: usize, text: &str, passed: bool, detail: String) {
        self.assertions.push(AssertionResult {
            line,
            text: text.to_owned(),
            passed,
            detail,
        });
    }

    fn execute(&mut self, line: usize, text: &str, directive: &Directive) {
        match directive {
            Directive::Node {
                name,
                ip,
                port,
                miner_interval,
            } => {
                let endpoint = Endpoint::new(*ip, *port);
                // New nodes bootstrap off the first node brought up.
                let bootstrap: Vec<Endpoint> = self.spawn_order.first().copied().into_iter().collect();
                let node = ProtocolNode::new(
                    endpoint,
                    self.params.clone(),
                    bootstrap,
                    *miner_interval,
                );
                if self.sim.spawn_node(endpoint, node).is_err() {
                    // Duplicate endpoints are caught at parse level for
                    // names; colliding ip:port pairs surface here.
                    self.assert_result(
                        line,
                        text,
                        false,
                        format!("endpoint {endpoint} already in use"),
                    );
                    return;
                }
                self.spawn_order.push(endpoint);
                self.node_names.insert(name.clone(), endpoint);
            }
            Directive::Register { node, user } => {
                let endpoint = self.endpoint(node);
                let username = self.username(user);
                self.sim
                    .invoke(endpoint, |n, ctx| n.register_user(ctx, username))
                    .expect("node exists");
                self.user_homes.insert(user.clone(), node.clone());
            }
            Directive::Mine { node, count } => {
                let endpoint = self.endpoint(node);
                for _ in 0..*count {
                    self.sim
                        .invoke(endpoint, |n, ctx| n.mine_now(ctx))
                        .expect("node exists");
                }
            }
            Directive::Advance { ticks } => {
                let target = (self.sim.now() + ticks).min(self.max_ticks);
                if self.sim.run_until(target).is_err() {
                    self.runtime_capped = true;
                }
                if self.sim.now() >= self.max_ticks {
                    self.runtime_capped = true;
                }
            }
            Directive::Post { user, text: body } => {
                let endpoint = self.home_endpoint(user);
                let username = self.username(user);
                let body = body.clone();
                let mut failed = None;
                self.sim
                    .invoke(endpoint, |n, ctx| {
                        if let Err(e) = n.create_post(ctx, &username, &body, PostKind::Post, None) {
                            failed = Some(e.to_string());
                        }
                    })
                    .expect("node exists");
                if let Some(reason) = failed {
                    self.assert_result(line, text, false, format!("post rejected: {reason}"));
                }
            }
            Directive::Reply {
                user,
                to_user,
                to_k,
                text: body,
            } => {
                let endpoint = self.home_endpoint(user);
                let username = self.username(user);
                let reply_ref = Some((self.username(to_user), *to_k));
                let body = body.clone();
                let mut failed = None;
                self.sim
                    .invoke(endpoint, |n, ctx| {
                        if let Err(e) =
                            n.create_post(ctx, &username, &body, PostKind::Reply, reply_ref)
                        {
                            failed = Some(e.to_string());
                        }
                    })
                    .expect("node exists");
                if let Some(reason) = failed {
                    self.assert_result(line, text, false, format!("reply rejected: {reason}"));
                }
            }
            Directive::Rt { user, to_user, to_k } => {
                let endpoint = self.home_endpoint(user);
                let username = self.username(user);
                let reply_ref = Some((self.username(to_user), *to_k));
                self.sim
                    .invoke(endpoint, |n, ctx| {
                        let _ = n.create_post(ctx, &username, "", PostKind::Rt, reply_ref);
                    })
                    .expect("node exists");
            }
            Directive::Dm { from, to, text: body } => {
                let endpoint = self.home_endpoint(from);
                let from_name = self.username(from);
                let to_name = self.username(to);
                let body = body.clone();
                let mut failed = None;
                self.sim
                    .invoke(endpoint, |n, ctx| {
                        if let Err(e) = n.create_dm(ctx, &from_name, &to_name, &body) {
                            failed = Some(e.to_string());
                        }
                    })
                    .expect("node exists");
                if let Some(reason) = failed {
                    self.assert_result(line, text, false, format!("dm rejected: {reason}"));
                }
            }
            Directive::Follow { node, user } => {
                let endpoint = self.endpoint(node);
                let username = self.username(user);
                // The follower node subscribes to the swarm...
                let followed = username.clone();
                self.sim
                    .invoke(endpoint, |n, ctx| {
                        n.join_user_swarm(ctx, &followed, Role::Follower)
                    })
                    .expect("node exists");
                // ...and the followed user's client learns out of band which
                // of the follower node's identities follow them (the DM
                // precondition is sender-local knowledge).
                let follower_users: Vec<Username> = self
                    .sim
                    .node(endpoint)
                    .expect("node exists")
                    .accounts()
                    .map(|a| a.username.clone())
                    .collect();
                if let Some(home) = self.user_homes.get(user).cloned() {
                    let home_endpoint = self.endpoint(&home);
                    let followed = username.clone();
                    self.sim
                        .invoke(home_endpoint, |n, _| {
                            for follower in follower_users {
                                n.note_follower(&followed, follower);
                            }
                        })
                        .expect("node exists");
                }
            }
            Directive::SeedSwarm { node, user } => {
                let endpoint = self.endpoint(node);
                let username = self.username(user);
                self.sim
                    .invoke(endpoint, |n, ctx| {
                        n.join_user_swarm(ctx, &username, Role::Seeder);
                        n.make_seeder(&username);
                    })
                    .expect("node exists");
            }
            Directive::FollowHashtag { node, tag } => {
                let endpoint = self.endpoint(node);
                let tag = tag.to_lowercase();
                self.sim
                    .invoke(endpoint, |n, ctx| n.join_hashtag_swarm(ctx, &tag))
                    .expect("node exists");
            }
            Directive::ReplaceKey { user } => {
                let endpoint = self.home_endpoint(user);
                let username = self.username(user);
                self.sim
                    .invoke(endpoint, |n, ctx| {
                        n.replace_user_key(ctx, &username);
                    })
                    .expect("node exists");
            }
            Directive::Promote { node, lang, text: body } => {
                let endpoint = self.endpoint(node);
                let lang = lang.clone();
                let body = body.clone();
                self.sim
                    .invoke(endpoint, |n, _| n.promote(body, lang))
                    .expect("node exists");
            }
            Directive::Fetch { node, user, k } => {
                let endpoint = self.endpoint(node);
                let username = self.username(user);
                let k = *k;
                self.sim
                    .invoke(endpoint, |n, ctx| n.fetch_post(ctx, username, k))
                    .expect("node exists");
            }
            Directive::FetchReplies { node, user, k } => {
                let endpoint = self.endpoint(node);
                let username = self.username(user);
                let k = *k;
                self.sim
                    .invoke(endpoint, |n, ctx| n.fetch_replies(ctx, username, k))
                    .expect("node exists");
            }
            Directive::FetchHashtag { node, tag } => {
                let endpoint = self.endpoint(node);
                let tag = tag.to_lowercase();
                self.sim
                    .invoke(endpoint, |n, ctx| n.fetch_hashtag(ctx, tag))
                    .expect("node exists");
            }
            Directive::FetchWord { node, word } => {
                let endpoint = self.endpoint(node);
                let word = word.to_lowercase();
                self.sim
                    .invoke(endpoint, |n, ctx| n.fetch_word(ctx, word))
                    .expect("node exists");
            }
            Directive::FetchMentions { node, user } => {
                let endpoint = self.endpoint(node);
                let username = self.username(user);
                self.sim
                    .invoke(endpoint, |n, ctx| n.fetch_mentions(ctx, username))
                    .expect("node exists");
            }
            Directive::Partition { cells } => {
                let cells: Vec<BTreeSet<Endpoint>> = cells
                    .iter()
                    .map(|cell| cell.iter().map(|n| self.endpoint(n)).collect())
                    .collect();
                if let Err(e) = self.sim.partition(cells) {
                    self.assert_result(line, text, false, format!("partition invalid: {e}"));
                }
            }
            Directive::Heal => self.sim.heal(),
            // -- assertions ------------------------------------------------
            Directive::ExpectDirectory { node, user } => {
                let endpoint = self.endpoint(node);
                let username = self.username(user);
                let present = self
                    .sim
                    .node(endpoint)
                    .expect("node exists")
                    .chain()
                    .lookup_pubkey(&username)
                    .is_some();
                self.assert_result(line, text, present, String::new());
            }
            Directive::ExpectUnique { user } => {
                let username = self.username(user);
                let mut keys = BTreeSet::new();
                let mut missing = Vec::new();
                for (name, endpoint) in &self.node_names {
                    match self
                        .sim
                        .node(*endpoint)
                        .expect("node exists")
                        .chain()
                        .lookup_pubkey(&username)
                    {
                        Some(entry) => {
                            keys.insert(entry.pubkey.to_bytes().to_vec());
                        }
                        None => missing.push(name.clone()),
                    }
                }
                let passed = keys.len() == 1 && missing.is_empty();
                let detail = format!("distinct keys {} missing {}", keys.len(), missing.len());
                self.assert_result(line, text, passed, detail);
            }
            Directive::ExpectTipAgree => {
                let tips: BTreeSet<String> = self
                    .node_names
                    .values()
                    .map(|e| {
                        self.sim
                            .node(*e)
                            .expect("node exists")
                            .chain()
                            .tip()
                            .to_hex()
                    })
                    .collect();
                self.assert_result(
                    line,
                    text,
                    tips.len() == 1,
                    format!("distinct tips {}", tips.len()),
                );
            }
            Directive::ExpectFetched { node, user, k, text: want } => {
                let endpoint = self.endpoint(node);
                let username = self.username(user);
                let fetched = self
                    .sim
                    .node(endpoint)
                    .expect("node exists")
                    .fetched()
                    .posts
                    .get(&(username, *k))
                    .cloned()
                    .flatten();
                let (passed, detail) = match (&fetched, want) {
                    (Some(post), Some(expected)) => {
                        match &post.body {
                            quill_core::microblog::PostBody::Text(t) => {
                                (t == expected, format!("got \"{t}\""))
                            }
                            _ => (false, "sealed body".to_owned()),
                        }
                    }
                    (Some(_), None) => (true, String::new()),
                    (None, _) => (false, "not fetched".to_owned()),
                };
                self.assert_result(line, text, passed, detail);
            }
            Directive::ExpectFetchMissing { node, user, k } => {
                let endpoint = self.endpoint(node);
                let username = self.username(user);
                let entry = self
                    .sim
                    .node(endpoint)
                    .expect("node exists")
                    .fetched()
                    .posts
                    .get(&(username, *k))
                    .cloned();
                let passed = matches!(entry, Some(None));
                self.assert_result(line, text, passed, String::new());
            }
            Directive::ExpectPiece { node, user, k } => {
                let endpoint = self.endpoint(node);
                let username = self.username(user);
                let has = self
                    .sim
                    .node(endpoint)
                    .expect("node exists")
                    .has_piece(&username, *k);
                self.assert_result(line, text, has, String::new());
            }
            Directive::ExpectNoPiece { node, user, k } => {
                let endpoint = self.endpoint(node);
                let username = self.username(user);
                let has = self
                    .sim
                    .node(endpoint)
                    .expect("node exists")
                    .has_piece(&username, *k);
                self.assert_result(line, text, !has, String::new());
            }
            Directive::ExpectDm { to, from, k, text: want } => {
                let endpoint = self.home_endpoint(to);
                let to_name = self.username(to);
                let from_name = self.username(from);
                let found = self
                    .sim
                    .node(endpoint)
                    .expect("node exists")
                    .dms_for(&to_name)
                    .iter()
                    .any(|d| {
                        d.sender == from_name && d.k == *k && d.plaintext == want.as_bytes()
                    });
                self.assert_result(line, text, found, String::new());
            }
            Directive::ExpectNoDm { user, from, k } => {
                let endpoint = self.home_endpoint(user);
                let user_name = self.username(user);
                let from_name = self.username(from);
                let found = self
                    .sim
                    .node(endpoint)
                    .expect("node exists")
                    .dms_for(&user_name)
                    .iter()
                    .any(|d| d.sender == from_name && d.k == *k);
                self.assert_result(line, text, !found, String::new());
            }
            Directive::MentionExpect { user, from, k } => {
                let endpoint = self.home_endpoint(user);
                let user_name = self.username(user);
                let from_name = self.username(from);
                let found = self
                    .sim
                    .node(endpoint)
                    .expect("node exists")
                    .mentions_for(&user_name)
                    .iter()
                    .any(|p| p.username == from_name && p.k == *k);
                self.assert_result(line, text, found, String::new());
            }
            Directive::ExpectReplies { node, user, k, count } => {
                let endpoint = self.endpoint(node);
                let username = self.username(user);
                let got = self
                    .sim
                    .node(endpoint)
                    .expect("node exists")
                    .fetched()
                    .replies
                    .get(&(username, *k))
                    .map(Vec::len)
                    .unwrap_or(0) as u64;
                self.assert_result(line, text, got == *count, format!("got {got}"));
            }
            Directive::ExpectHashtagCount { node, tag, min } => {
                let endpoint = self.endpoint(node);
                let got = self
                    .sim
                    .node(endpoint)
                    .expect("node exists")
                    .fetched()
                    .hashtags
                    .get(&tag.to_lowercase())
                    .map(Vec::len)
                    .unwrap_or(0) as u64;
                self.assert_result(line, text, got >= *min, format!("got {got}"));
            }
            Directive::ExpectWordCount { node, word, min } => {
                let endpoint = self.endpoint(node);
                let got = self
                    .sim
                    .node(endpoint)
                    .expect("node exists")
                    .fetched()
                    .words
                    .get(&word.to_lowercase())
                    .map(Vec::len)
                    .unwrap_or(0) as u64;
                self.assert_result(line, text, got >= *min, format!("got {got}"));
            }
            Directive::ExpectListeners { user, min } => {
                let endpoint = self.home_endpoint(user);
                let username = self.username(user);
                let got = self
                    .sim
                    .node(endpoint)
                    .expect("node exists")
                    .listeners_for(&username) as u64;
                self.assert_result(line, text, got >= *min, format!("got {got}"));
            }
        }
    }

    /// Aggregate metrics across nodes plus the network counters, in a fixed
    /// key order. Every rejection bucket uses the protocol's own reason code.
    fn collect_metrics(&self) -> Vec<(String, u64)> {
        let mut out: Vec<(String, u64)> = Vec::new();
        let c = &self.sim.counters;
        out.push(("messages_sent".into(), c.sent));
        out.push(("messages_delivered".into(), c.delivered));
        out.push(("messages_dropped_random".into(), c.dropped_random));
        out.push(("messages_dropped_partition".into(), c.dropped_partition));
        out.push(("messages_in_flight".into(), self.sim.in_flight()));

        let mut blocks_mined = 0;
        let mut blocks_accepted = 0;
        let mut blocks_rejected: BTreeMap<&'static str, u64> = BTreeMap::new();
        let mut puts_accepted = 0;
        let mut puts_rejected: BTreeMap<&'static str, u64> = BTreeMap::new();
        let mut regs_pending = 0;
        let mut regs_rejected: BTreeMap<&'static str, u64> = BTreeMap::new();
        let mut haves_accepted = 0;
        let mut haves_rejected: BTreeMap<&'static str, u64> = BTreeMap::new();
        let mut dropped_sig = 0;
        let mut dropped_hops = 0;
        let mut duplicates = 0;
        let mut pieces_rejected = 0;
        for endpoint in self.node_names.values() {
            let m = self.sim.node(*endpoint).expect("node exists").metrics();
            blocks_mined += m.blocks_mined;
            blocks_accepted += m.blocks_accepted;
            for (k, v) in &m.blocks_rejected {
                *blocks_rejected.entry(k).or_insert(0) += v;
            }
            puts_accepted += m.puts_accepted;
            for (k, v) in &m.puts_rejected {
                *puts_rejected.entry(k).or_insert(0) += v;
            }
            regs_pending += m.regs_pending;
            for (k, v) in &m.regs_rejected {
                *regs_rejected.entry(k).or_insert(0) += v;
            }
            haves_accepted += m.haves_accepted;
            for (k, v) in &m.haves_rejected {
                *haves_rejected.entry(k).or_insert(0) += v;
            }
            dropped_sig += m.packets_dropped_signature;
            dropped_hops += m.packets_dropped_hops;
            duplicates += m.packets_duplicate;
            pieces_rejected += m.pieces_rejected;
        }
        out.push(("blocks_mined".into(), blocks_mined));
        out.push(("blocks_accepted".into(), blocks_accepted));
        for (k, v) in blocks_rejected {
            out.push((format!("blocks_rejected.{k}"), v));
        }
        out.push(("registrations_gossiped".into(), regs_pending));
        for (k, v) in regs_rejected {
            out.push((format!("registrations_rejected.{k}"), v));
        }
        out.push(("puts_accepted".into(), puts_accepted));
        for (k, v) in puts_rejected {
            out.push((format!("puts_rejected.{k}"), v));
        }
        out.push(("haves_accepted".into(), haves_accepted));
        for (k, v) in haves_rejected {
            out.push((format!("haves_rejected.{k}"), v));
        }
        out.push(("packets_dropped_signature".into(), dropped_sig));
        out.push(("packets_dropped_hops".into(), dropped_hops));
        out.push(("packets_duplicate".into(), duplicates));
        out.push(("pieces_rejected".into(), pieces_rejected));

        // Swarm delivery latency histogram, from the trace: ticks between a
        // gateway ingest and each member's store of the same (subject, k).
        let trace = self.sim.trace();
        let mut ingest_at: BTreeMap<String, u64> = BTreeMap::new();
        for e in trace.entries() {
            if e.kind == "swarm-ingest" {
                ingest_at.entry(e.detail.clone()).or_insert(e.tick);
            }
        }
        let mut hist = [0u64; 7];
        let mut deliveries = 0u64;
        for e in trace.entries() {
            if e.kind == "have-store" || e.kind == "piece-store" {
                if let Some(start) = ingest_at.get(&e.detail) {
                    deliveries += 1;
                    let lat = e.tick.saturating_sub(*start);
                    let bucket = (lat as usize).min(6);
                    hist[bucket] += 1;
                }
            }
        }
        out.push(("swarm_deliveries".into(), deliveries));
        for (i, count) in hist.iter().enumerate() {
            let key = if i == 6 {
                "swarm_delivery_latency.6plus".to_owned()
            } else {
                format!("swarm_delivery_latency.{i}")
            };
            out.push((key, *count));
        }
        out
    }
}
