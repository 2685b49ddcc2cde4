//! Line-oriented scenario files.
//!
//! One directive per line; `#` starts a comment and blank lines are skipped.
//! The header (seed, latency, drop, difficulty, max-ticks) may appear before
//! the first node declaration. Every directive is validated against what the
//! lines above it declared: unknown directives, undeclared nodes and
//! unregistered users are rejected with the offending line and column.

use std::collections::BTreeMap;

use quill_core::rng::Ratio;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl std::fmt::Display for ParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.column, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioHeader {
    pub seed: u64,
    pub latency: (u64, u64),
    pub drop_probability: Ratio,
    pub difficulty_bits: u32,
    pub userreg_difficulty: u32,
    pub max_ticks: u64,
}

impl Default for ScenarioHeader {
    fn default() -> ScenarioHeader {
        ScenarioHeader {
            seed: 0,
            latency: (1, 3),
            drop_probability: Ratio::ZERO,
            difficulty_bits: 8,
            userreg_difficulty: 8,
            max_ticks: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Directive {
    Node {
        name: String,
        ip: u32,
        port: u16,
        miner_interval: Option<u64>,
    },
    Register { node: String, user: String },
    Mine { node: String, count: u64 },
    Advance { ticks: u64 },
    Post { user: String, text: String },
    Reply {
        user: String,
        to_user: String,
        to_k: u64,
        text: String,
    },
    Rt { user: String, to_user: String, to_k: u64 },
    Dm { from: String, to: String, text: String },
    Follow { node: String, user: String },
    SeedSwarm { node: String, user: String },
    FollowHashtag { node: String, tag: String },
    ReplaceKey { user: String },
    Promote { node: String, lang: String, text: String },
    Fetch { node: String, user: String, k: u64 },
    FetchReplies { node: String, user: String, k: u64 },
    FetchHashtag { node: String, tag: String },
    FetchWord { node: String, word: String },
    FetchMentions { node: String, user: String },
    Partition { cells: Vec<Vec<String>> },
    Heal,
    ExpectDirectory { node: String, user: String },
    ExpectUnique { user: String },
    ExpectTipAgree,
    ExpectFetched {
        node: String,
        user: String,
        k: u64,
        text: Option<String>,
    },
    ExpectFetchMissing { node: String, user: String, k: u64 },
    ExpectPiece { node: String, user: String, k: u64 },
    ExpectNoPiece { node: String, user: String, k: u64 },
    ExpectDm {
        to: String,
        from: String,
        k: u64,
        text: String,
    },
    ExpectNoDm { user: String, from: String, k: u64 },
    MentionExpect { user: String, from: String, k: u64 },
    ExpectReplies {
        node: String,
        user: String,
        k: u64,
        count: u64,
    },
    ExpectHashtagCount { node: String, tag: String, min: u64 },
    ExpectWordCount { node: String, word: String, min: u64 },
    ExpectListeners { user: String, min: u64 },
}

impl Directive {
    pub fn is_assertion(&self) -> bool {
        matches!(
            self,
            Directive::ExpectDirectory { .. }
                | Directive::ExpectUnique { .. }
                | Directive::ExpectTipAgree
                | Directive::ExpectFetched { .. }
                | Directive::ExpectFetchMissing { .. }
                | Directive::ExpectPiece { .. }
                | Directive::ExpectNoPiece { .. }
                | Directive::ExpectDm { .. }
                | Directive::ExpectNoDm { .. }
                | Directive::MentionExpect { .. }
                | Directive::ExpectReplies { .. }
                | Directive::ExpectHashtagCount { .. }
                | Directive::ExpectWordCount { .. }
                | Directive::ExpectListeners { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub header: ScenarioHeader,
    /// (source line, source text, directive), in file order.
    pub directives: Vec<(usize, String, Directive)>,
}

#[derive(Clone, Copy)]
struct Token<'a> {
    text: &'a str,
    column: usize,
    quoted: bool,
}

fn tokenize(line: &str, line_no: usize) -> Result<Vec<Token<'_>>, ParseError> {
    let mut tokens = Vec::new();
    let bytes = line.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if bytes[i] == b'#' {
            break;
        }
        let start = i;
        if bytes[i] == b'"' {
            i += 1;
            while i < bytes.len() && bytes[i] != b'"' {
                i += 1;
            }
            if i >= bytes.len() {
                return Err(ParseError {
                    line: line_no,
                    column: start + 1,
                    message: "unterminated string literal".to_owned(),
                });
            }
            tokens.push(Token {
                text: &line[start + 1..i],
                column: start + 1,
                quoted: true,
            });
            i += 1;
        } else {
            while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'#' {
                i += 1;
            }
            tokens.push(Token {
                text: &line[start..i],
                column: start + 1,
                quoted: false,
            });
        }
    }
    Ok(tokens)
}

struct LineParser<'a> {
    tokens: Vec<Token<'a>>,
    line: usize,
    pos: usize,
}

impl<'a> LineParser<'a> {
    fn err(&self, column: usize, message: impl Into<String>) -> ParseError {
        ParseError {
            line: self.line,
            column,
            message: message.into(),
        }
    }

    fn end_column(&self) -> usize {
        self.tokens
            .last()
            .map(|t| t.column + t.text.len())
            .unwrap_or(1)
    }

    fn next(&mut self, what: &str) -> Result<Token<'a>, ParseError> {
        let Some(token) = self.tokens.get(self.pos).copied() else {
            return Err(ParseError {
                line: self.line,
                column: self.end_column(),
                message: format!("expected {what}, found end of line"),
            });
        };
        self.pos += 1;
        Ok(token)
    }

    fn peek(&self) -> Option<&Token<'a>> {
        self.tokens.get(self.pos)
    }

    fn word(&mut self, what: &str) -> Result<String, ParseError> {
        let token = self.next(what)?;
        if token.quoted {
            return Err(ParseError {
                line: self.line,
                column: token.column,
                message: format!("expected {what}, found quoted string"),
            });
        }
        Ok(token.text.to_owned())
    }

    fn quoted(&mut self, what: &str) -> Result<String, ParseError> {
        let token = self.next(what)?;
        if !token.quoted {
            return Err(ParseError {
                line: self.line,
                column: token.column,
                message: format!("expected quoted {what}"),
            });
        }
        Ok(token.text.to_owned())
    }

    fn integer(&mut self, what: &str) -> Result<u64, ParseError> {
        let token = self.next(what)?;
        token.text.parse().map_err(|_| ParseError {
            line: self.line,
            column: token.column,
            message: format!("expected {what} (integer), found '{}'", token.text),
        })
    }

    fn finish(&self) -> Result<(), ParseError> {
        if let Some(extra) = self.peek() {
            return Err(ParseError {
                line: self.line,
                column: extra.column,
                message: format!("unexpected trailing token '{}'", extra.text),
            });
        }
        Ok(())
    }
}

fn parse_ip(parser: &mut LineParser) -> Result<u32, ParseError> {
    let token_column = parser.peek().map(|t| t.column).unwrap_or(1);
    let text = parser.word("ip address")?;
    let parts: Vec<&str> = text.split('.').collect();
    if parts.len() != 4 {
        return Err(ParseError {
            line: parser.line,
            column: token_column,
            message: format!("expected dotted-quad ip, found '{text}'"),
        });
    }
    let mut ip = 0u32;
    for p in parts {
        let octet: u32 = p.parse().map_err(|_| ParseError {
            line: parser.line,
            column: token_column,
            message: format!("bad ip octet '{p}'"),
        })?;
        if octet > 255 {
            return Err(ParseError {
                line: parser.line,
                column: token_column,
                message: format!("ip octet out of range: {octet}"),
            });
        }
        ip = (ip << 8) | octet;
    }
    Ok(ip)
}

/// Validation state threaded through the parse: what earlier lines declared.
#[derive(Default)]
struct Declared {
    nodes: BTreeMap<String, ()>,
    users: BTreeMap<String, ()>,
}

impl Declared {
    fn need_node(&self, parser: &LineParser, name: &str, col: usize) -> Result<(), ParseError> {
        if !self.nodes.contains_key(name) {
            return Err(ParseError {
                line: parser.line,
                column: col,
                message: format!("undeclared node '{name}'"),
            });
        }
        Ok(())
    }

    fn need_user(&self, parser: &LineParser, name: &str, col: usize) -> Result<(), ParseError> {
        if !self.users.contains_key(name) {
            return Err(ParseError {
                line: parser.line,
                column: col,
                message: format!("unregistered user '{name}'"),
            });
        }
        Ok(())
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ParseError> {
    let mut header = ScenarioHeader::default();
    let mut directives = Vec::new();
    let mut declared = Declared::default();
    let mut saw_node = false;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let tokens = tokenize(raw_line, line_no)?;
        if tokens.is_empty() {
            continue;
        }
        let mut p = LineParser {
            tokens,
            line: line_no,
            pos: 0,
        };
        let keyword_col = p.peek().map(|t| t.column).unwrap_or(1);
        let keyword = p.word("directive")?;

        // Header lines, only before the first node.
        let is_header = matches!(
            keyword.as_str(),
            "seed" | "latency" | "drop" | "difficulty" | "userreg-difficulty" | "max-ticks"
        );
        if is_header {
            if saw_node {
                return Err(p.err(keyword_col, format!("header '{keyword}' after first node")));
            }
            match keyword.as_str() {
                "seed" => header.seed = p.integer("seed")?,
                "latency" => {
                    let min = p.integer("min latency")?;
                    let max = p.integer("max latency")?;
                    if min > max {
                        return Err(p.err(keyword_col, "latency min exceeds max"));
                    }
                    header.latency = (min, max);
                }
                "drop" => {
                    let col = p.peek().map(|t| t.column).unwrap_or(1);
                    let text = p.word("drop probability")?;
                    header.drop_probability =
                        Ratio::parse_decimal(&text).ok_or_else(||

                            p.err(col, format!("expected decimal in [0,1), found '{text}'")))?;
                    if header.drop_probability.num >= header.drop_probability.den {
                        return Err(p.err(col, "drop probability must be below 1"));
                    }
                }
                "difficulty" => {
                    let bits = p.integer("difficulty bits")?;
                    if !(1..=24).contains(&bits) {
                        return Err(p.err(keyword_col, "difficulty bits must be in 1..=24"));
                    }
                    header.difficulty_bits = bits as u32;
                }
                "userreg-difficulty" => {
                    let bits = p.integer("difficulty bits")?;
                    if !(1..=24).contains(&bits) {
                        return Err(p.err(keyword_col, "difficulty bits must be in 1..=24"));
                    }
                    header.userreg_difficulty = bits as u32;
                }
                "max-ticks" => header.max_ticks = p.integer("tick limit")?,
                _ => unreachable!(),
            }
            p.finish()?;
            continue;
        }

        let directive = match keyword.as_str() {
            "node" => {
                let name = p.word("node name")?;
                if declared.nodes.contains_key(&name) {
                    return Err(p.err(keyword_col, format!("duplicate node '{name}'")));
                }
                let ip = parse_ip(&mut p)?;
                let port = p.integer("port")?;
                if port > u16::MAX as u64 {
                    return Err(p.err(keyword_col, "port out of range"));
                }
                let miner_interval = if p.peek().is_some() {
                    let kw_col = p.peek().map(|t| t.column).unwrap_or(1);
                    let kw = p.word("miner flag")?;
                    if kw != "miner" {
                        return Err(p.err(kw_col, format!("expected 'miner', found '{kw}'")));
                    }
                    Some(p.integer("mean block interval")?)
                } else {
                    None
                };
                declared.nodes.insert(name.clone(), ());
                saw_node = true;
                Directive::Node {
                    name,
                    ip,
                    port: port as u16,
                    miner_interval,
                }
            }
            "register" => {
                let node_col = p.peek().map(|t| t.column).unwrap_or(1);
                let node = p.word("node name")?;
                declared.need_node(&p, &node, node_col)?;
                let user_col = p.peek().map(|t| t.column).unwrap_or(1);
                let user = p.word("username")?;
                if !quill_core::chain::username_valid(&user) {
                    return Err(p.err(user_col, format!("invalid username '{user}'")));
                }
                // Re-registering a name is legal: conflicting claims are
                // exactly what fork scenarios exercise.
                declared.users.insert(user.clone(), ());
                Directive::Register { node, user }
            }
            "mine" => {
                let node_col = p.peek().map(|t| t.column).unwrap_or(1);
                let node = p.word("node name")?;
                declared.need_node(&p, &node, node_col)?;
                let count = if p.peek().is_some() {
                    p.integer("block count")?
                } else {
                    1
                };
                Directive::Mine { node, count }
            }
            "advance" => Directive::Advance {
                ticks: p.integer("tick count")?,
            },
            "post" => {
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let user = p.word("username")?;
                declared.need_user(&p, &user, col)?;
                let text = p.quoted("post text")?;
                Directive::Post { user, text }
            }
            "reply" => {
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let user = p.word("username")?;
                declared.need_user(&p, &user, col)?;
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let to_user = p.word("original author")?;
                declared.need_user(&p, &to_user, col)?;
                let to_k = p.integer("original k")?;
                let text = p.quoted("reply text")?;
                Directive::Reply {
                    user,
                    to_user,
                    to_k,
                    text,
                }
            }
            "rt" => {
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let user = p.word("username")?;
                declared.need_user(&p, &user, col)?;
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let to_user = p.word("original author")?;
                declared.need_user(&p, &to_user, col)?;
                let to_k = p.integer("original k")?;
                Directive::Rt { user, to_user, to_k }
            }
            "dm" => {
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let from = p.word("sender")?;
                declared.need_user(&p, &from, col)?;
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let to = p.word("recipient")?;
                declared.need_user(&p, &to, col)?;
                let text = p.quoted("message text")?;
                Directive::Dm { from, to, text }
            }
            "follow" => {
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let node = p.word("node name")?;
                declared.need_node(&p, &node, col)?;
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let user = p.word("username")?;
                declared.need_user(&p, &user, col)?;
                Directive::Follow { node, user }
            }
            "seed-swarm" => {
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let node = p.word("node name")?;
                declared.need_node(&p, &node, col)?;
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let user = p.word("username")?;
                declared.need_user(&p, &user, col)?;
                Directive::SeedSwarm { node, user }
            }
            "follow-hashtag" => {
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let node = p.word("node name")?;
                declared.need_node(&p, &node, col)?;
                let tag = p.word("hashtag")?;
                Directive::FollowHashtag { node, tag }
            }
            "replace-key" => {
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let user = p.word("username")?;
                declared.need_user(&p, &user, col)?;
                Directive::ReplaceKey { user }
            }
            "promote" => {
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let node = p.word("node name")?;
                declared.need_node(&p, &node, col)?;
                let lang = p.word("language tag")?;
                let text = p.quoted("promoted text")?;
                Directive::Promote { node, lang, text }
            }
            "fetch" => {
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let node = p.word("node name")?;
                declared.need_node(&p, &node, col)?;
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let user = p.word("username")?;
                declared.need_user(&p, &user, col)?;
                let k = p.integer("sequence number")?;
                Directive::Fetch { node, user, k }
            }
            "fetch-replies" => {
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let node = p.word("node name")?;
                declared.need_node(&p, &node, col)?;
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let user = p.word("username")?;
                declared.need_user(&p, &user, col)?;
                let k = p.integer("sequence number")?;
                Directive::FetchReplies { node, user, k }
            }
            "fetch-hashtag" => {
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let node = p.word("node name")?;
                declared.need_node(&p, &node, col)?;
                let tag = p.word("hashtag")?;
                Directive::FetchHashtag { node, tag }
            }
            "fetch-word" => {
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let node = p.word("node name")?;
                declared.need_node(&p, &node, col)?;
                let word = p.word("word")?;
                Directive::FetchWord { node, word }
            }
            "fetch-mentions" => {
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let node = p.word("node name")?;
                declared.need_node(&p, &node, col)?;
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let user = p.word("username")?;
                declared.need_user(&p, &user, col)?;
                Directive::FetchMentions { node, user }
            }
            "partition" => {
                // Cells are '|'-separated lists of comma-separated names:
                //   partition n1,n2 | n3,n4
                let first_col = p.peek().map(|t| t.column).unwrap_or(keyword_col);
                let mut joined = String::new();
                while p.peek().is_some() {
                    if !joined.is_empty() {
                        joined.push(' ');
                    }
                    joined.push_str(&p.word("cell member")?);
                }
                let mut cells = Vec::new();
                for cell_text in joined.split('|') {
                    let names: Vec<String> = cell_text
                        .split(|c: char| c == ',' || c.is_whitespace())
                        .filter(|s| !s.is_empty())
                        .map(str::to_owned)
                        .collect();
                    for name in &names {
                        declared.need_node(&p, name, first_col)?;
                    }
                    if !names.is_empty() {
                        cells.push(names);
                    }
                }
                if cells.len() < 2 {
                    return Err(p.err(keyword_col, "partition needs at least two cells"));
                }
                Directive::Partition { cells }
            }
            "heal" => Directive::Heal,
            "expect-directory" => {
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let node = p.word("node name")?;
                declared.need_node(&p, &node, col)?;
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let user = p.word("username")?;
                declared.need_user(&p, &user, col)?;
                Directive::ExpectDirectory { node, user }
            }
            "expect-unique" => {
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let user = p.word("username")?;
                declared.need_user(&p, &user, col)?;
                Directive::ExpectUnique { user }
            }
            "expect-tip-agree" => Directive::ExpectTipAgree,
            "expect-fetched" => {
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let node = p.word("node name")?;
                declared.need_node(&p, &node, col)?;
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let user = p.word("username")?;
                declared.need_user(&p, &user, col)?;
                let k = p.integer("sequence number")?;
                let text = if p.peek().is_some() {
                    Some(p.quoted("expected text")?)
                } else {
                    None
                };
                Directive::ExpectFetched { node, user, k, text }
            }
            "expect-fetch-missing" => {
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let node = p.word("node name")?;
                declared.need_node(&p, &node, col)?;
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let user = p.word("username")?;
                declared.need_user(&p, &user, col)?;
                let k = p.integer("sequence number")?;
                Directive::ExpectFetchMissing { node, user, k }
            }
            "expect-piece" | "expect-no-piece" => {
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let node = p.word("node name")?;
                declared.need_node(&p, &node, col)?;
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let user = p.word("username")?;
                declared.need_user(&p, &user, col)?;
                let k = p.integer("sequence number")?;
                if keyword == "expect-piece" {
                    Directive::ExpectPiece { node, user, k }
                } else {
                    Directive::ExpectNoPiece { node, user, k }
                }
            }
            "expect-dm" => {
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let to = p.word("recipient")?;
                declared.need_user(&p, &to, col)?;
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let from = p.word("sender")?;
                declared.need_user(&p, &from, col)?;
                let k = p.integer("sequence number")?;
                let text = p.quoted("expected text")?;
                Directive::ExpectDm { to, from, k, text }
            }
            "expect-no-dm" => {
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let user = p.word("recipient")?;
                declared.need_user(&p, &user, col)?;
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let from = p.word("sender")?;
                declared.need_user(&p, &from, col)?;
                let k = p.integer("sequence number")?;
                Directive::ExpectNoDm { user, from, k }
            }
            "mention-expect" => {
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let user = p.word("mentioned user")?;
                declared.need_user(&p, &user, col)?;
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let from = p.word("author")?;
                declared.need_user(&p, &from, col)?;
                let k = p.integer("sequence number")?;
                Directive::MentionExpect { user, from, k }
            }
            "expect-replies" => {
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let node = p.word("node name")?;
                declared.need_node(&p, &node, col)?;
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let user = p.word("username")?;
                declared.need_user(&p, &user, col)?;
                let k = p.integer("sequence number")?;
                let count = p.integer("expected count")?;
                Directive::ExpectReplies { node, user, k, count }
            }
            "expect-hashtag-count" => {
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let node = p.word("node name")?;
                declared.need_node(&p, &node, col)?;
                let tag = p.word("hashtag")?;
                let min = p.integer("minimum count")?;
                Directive::ExpectHashtagCount { node, tag, min }
            }
            "expect-word-count" => {
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let node = p.word("node name")?;
                declared.need_node(&p, &node, col)?;
                let word = p.word("word")?;
                let min = p.integer("minimum count")?;
                Directive::ExpectWordCount { node, word, min }
            }
            "expect-listeners" => {
                let col = p.peek().map(|t| t.column).unwrap_or(1);
                let user = p.word("username")?;
                declared.need_user(&p, &user, col)?;
                let min = p.integer("minimum count")?;
                Directive::ExpectListeners { user, min }
            }
            other => {
                return Err(p.err(keyword_col, format!("unknown directive '{other}'")));
            }
        };
        p.finish()?;
        directives.push((line_no, raw_line.trim().to_owned(), directive));
    }

    Ok(Scenario { header, directives })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_scenario_parses() {
        let s = parse_scenario("seed 1\nnode n1 10.0.0.1 7000\n").unwrap();
        assert_eq!(s.header.seed, 1);
        assert_eq!(s.directives.len(), 1);
        match &s.directives[0].2 {
            Directive::Node { name, ip, port, .. } => {
                assert_eq!(name, "n1");
                assert_eq!(*ip, 0x0A000001);
                assert_eq!(*port, 7000);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_directive_names_the_line() {
        let err = parse_scenario("seed 1\nnode n1 10.0.0.1 7000\nfrobnicate n1\n").unwrap_err();
        assert_eq!(err.line, 3);
        assert!(err.message.contains("frobnicate"));
    }

    #[test]
    fn undefined_node_reference_rejected() {
        let err = parse_scenario("node n1 10.0.0.1 7000\nexpect-directory n2 alice\n").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.message.contains("undeclared node 'n2'"), "{}", err.message);
    }

    #[test]
    fn unregistered_user_rejected() {
        let err =
            parse_scenario("node n1 10.0.0.1 7000\npost alice \"hi\"\n").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.message.contains("unregistered user"));
    }

    #[test]
    fn quoted_text_and_comments() {
        let text = "seed 7\n# a comment\nnode n1 10.0.0.1 7000\nregister n1 alice\npost alice \"hello #world with spaces\" # trailing\n";
        let s = parse_scenario(text).unwrap();
        match &s.directives.last().unwrap().2 {
            Directive::Post { text, .. } => assert_eq!(text, "hello #world with spaces"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn partition_cells() {
        let text = "node n1 10.0.0.1 7000\nnode n2 10.0.0.2 7000\nnode n3 10.0.0.3 7000\npartition n1,n2 | n3\n";
        let s = parse_scenario(text).unwrap();
        match &s.directives.last().unwrap().2 {
            Directive::Partition { cells } => {
                assert_eq!(cells.len(), 2);
                assert_eq!(cells[0], vec!["n1".to_owned(), "n2".to_owned()]);
                assert_eq!(cells[1], vec!["n3".to_owned()]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_after_node_rejected() {
        let err = parse_scenario("node n1 10.0.0.1 7000\nseed 3\n").unwrap_err();
        assert_eq!(err.line, 2);
    }

    #[test]
    fn bad_drop_probability() {
        assert!(parse_scenario("drop 1.5\n").is_err());
        assert!(parse_scenario("drop nope\n").is_err());
        let s = parse_scenario("drop 0.25\n").unwrap();
        assert_eq!(s.header.drop_probability, Ratio::new(25, 100));
    }

    #[test]
    fn column_positions_reported() {
        let err = parse_scenario("node n1 10.0.0.1 notaport\n").unwrap_err();
        assert_eq!(err.line, 1);
        assert_eq!(err.column, 18);
    }
}
