//! Behavior-log loading and deterministic synthetic workloads.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::attention::BehaviorSequence;
use crate::error::{Error, Result};
use crate::rng;
use crate::vector::ItemVector;

/// Fraction of malformed rows above which loading aborts.
pub const MAX_MALFORMED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BehaviorType {
    PageView,
    Buy,
    Cart,
    Favorite,
    Other(u8),
}

impl FromStr for BehaviorType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "pv" | "click" => BehaviorType::PageView,
            "buy" => BehaviorType::Buy,
            "cart" => BehaviorType::Cart,
            "fav" => BehaviorType::Favorite,
            other => BehaviorType::Other(
                other
                    .parse()
                    .map_err(|_| format!("unknown behavior type {other:?}"))?,
            ),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorEvent {
    pub user_id: u64,
    pub item_id: u64,
    pub category_id: u32,
    pub behavior: BehaviorType,
    pub timestamp: i64,
}

/// One user's retained events, most recent first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserHistory {
    pub user_id: u64,
    pub events: Vec<BehaviorEvent>,
}

impl UserHistory {
    pub fn to_sequence(&self, embedder: &Embedder) -> BehaviorSequence {
        let mut seq = BehaviorSequence::empty(embedder.dim());
        for e in &self.events {
            seq.push(&embedder.embed(e.item_id, e.category_id), e.category_id)
                .expect("embedder dimension is fixed");
        }
        seq
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehaviorLog {
    /// Users in ascending id order.
    pub users: Vec<UserHistory>,
    pub rows: usize,
    pub malformed: usize,
}

fn parse_row(record: &csv::StringRecord) -> Result<BehaviorEvent, String> {
    if record.len() != 5 {
        return Err(format!("expected 5 fields, found {}", record.len()));
    }
    let field = |i: usize| record.get(i).unwrap_or("").trim();
    let num = |i: usize, what: &str| -> Result<u64, String> {
        field(i).parse().map_err(|_| format!("bad {what} {:?}", field(i)))
    };
    let category_id = field(2)
        .parse()
        .map_err(|_| format!("bad category {:?}", field(2)))?;
    let timestamp: i64 = field(4)
        .parse()
        .map_err(|_| format!("bad timestamp {:?}", field(4)))?;
    if timestamp < 0 {
        return Err(format!("negative timestamp {timestamp}"));
    }
    Ok(BehaviorEvent {
        user_id: num(0, "user")?,
        item_id: num(1, "item")?,
        category_id,
        behavior: field(3).parse()?,
        timestamp,
    })
}

/// Reads `user,item,category,behavior_type,timestamp` rows and keeps each
/// user's `max_len` most recent events, newest first. Equal timestamps keep
/// their input order.
pub fn load_behavior_log(path: impl AsRef<Path>, max_len: usize) -> Result<BehaviorLog> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_behavior_log(text.as_bytes(), max_len)
}

pub fn parse_behavior_log(input: &[u8], max_len: usize) -> Result<BehaviorLog> {
    if max_len == 0 {
        return Err(Error::invalid("max_len must be >= 1"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);

    let mut per_user: BTreeMap<u64, Vec<BehaviorEvent>> = BTreeMap::new();
    let (mut rows, mut malformed) = (0usize, 0usize);
    let mut first_bad: Option<(usize, String)> = None;

    for (i, record) in reader.records().enumerate() {
        let line = i + 1;
        let parsed = match record {
            Ok(r) => {
                let is_header = i == 0 && r.get(0).is_some_and(|f| f.parse::<u64>().is_err());
                if is_header {
                    continue;
                }
                parse_row(&r)
            }
            Err(e) => Err(e.to_string()),
        };
        rows += 1;
        match parsed {
            Ok(ev) => per_user.entry(ev.user_id).or_default().push(ev),
            Err(reason) => {
                malformed += 1;
                first_bad.get_or_insert((line, reason));
            }
        }
    }

    if rows > 0 && malformed as f64 > MAX_MALFORMED_FRACTION * rows as f64 {
        let (first_line, first_reason) = first_bad.unwrap_or_default();
        return Err(Error::TooManyMalformed {
            malformed,
            total: rows,
            first_line,
            first_reason,
        });
    }

    let users = per_user
        .into_iter()
        .map(|(user_id, mut events)| {
            // stable: ties stay in input order
            events.sort_by_key(|e| std::cmp::Reverse(e.timestamp));
            events.truncate(max_len);
            UserHistory { user_id, events }
        })
        .collect();
    Ok(BehaviorLog { users, rows, malformed })
}

/// Synthesizes unit item embeddings from ids: a per-category anchor blended
/// with per-item noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Embedder {
    d: usize,
    seed: u64,
    blend: f64,
}

impl Embedder {
    pub const DEFAULT_BLEND: f64 = 0.7;

    /// `blend` is the share of variance given to the category anchor; for
    /// near-orthogonal noise it is also the expected within-category cosine.
    pub fn new(d: usize, seed: u64, blend: f64) -> Result<Self> {
        if d < 2 {
            return Err(Error::invalid("embedding dimension must be >= 2"));
        }
        if !(0.0..=1.0).contains(&blend) {
            return Err(Error::invalid(format!("blend {blend} outside [0, 1]")));
        }
        Ok(Self { d, seed, blend })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    fn gaussian_unit(&self, domain: u64, id: u64) -> Vec<f64> {
        let mut stream = rng::stream(self.seed, domain, id);
        loop {
            let v: Vec<f64> = (0..self.d).map(|_| StandardNormal.sample(&mut stream)).collect();
            let n = crate::vector::norm(&v);
            if n > 1e-12 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }

    pub fn embed(&self, item_id: u64, category_id: u32) -> ItemVector {
        let anchor = self.gaussian_unit(rng::domain::CATEGORY, u64::from(category_id));
        if self.blend >= 1.0 {
            return ItemVector::normalized(anchor).expect("anchor is unit");
        }
        let noise = self.gaussian_unit(rng::domain::ITEM, item_id);
        let (a, b) = (self.blend.sqrt(), (1.0 - self.blend).sqrt());
        let mixed: Vec<f64> = anchor.iter().zip(&noise).map(|(x, y)| a * x + b * y).collect();
        ItemVector::normalized(mixed).unwrap_or_else(|_| ItemVector::normalized(anchor).expect("anchor is unit"))
    }
}

/// Embeds with the default blend.
pub fn embed_item(item_id: u64, category_id: u32, d: usize, seed: u64) -> Result<ItemVector> {
    Ok(Embedder::new(d, seed, Embedder::DEFAULT_BLEND)?.embed(item_id, category_id))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceConfig {
    /// Behavior items per user.
    pub seq_len: usize,
    /// Candidates per request.
    pub candidates: usize,
    pub dim: usize,
    pub users: usize,
    /// Interest clusters per user; each is one category.
    pub clusters: usize,
    /// Expected cosine between items of one cluster.
    pub intra_cosine: f64,
    /// Size of the global category pool.
    pub categories: usize,
    /// Share of candidates drawn from the user's own clusters.
    pub relevant_fraction: f64,
    pub seed: u64,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self {
            seq_len: 256,
            candidates: 64,
            dim: 64,
            users: 8,
            clusters: 4,
            intra_cosine: 0.6,
            categories: 64,
            relevant_fraction: 0.5,
            seed: 0,
        }
    }
}

impl InstanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 || self.candidates == 0 || self.users == 0 || self.clusters == 0 {
            return Err(Error::invalid("sequence length, candidates, users and clusters must be positive"));
        }
        if self.dim < 2 {
            return Err(Error::invalid("dim must be >= 2"));
        }
        if !(0.0..1.0).contains(&self.intra_cosine) {
            return Err(Error::invalid("intra-cluster cosine must lie in [0, 1)"));
        }
        if self.categories < self.clusters {
            return Err(Error::invalid("category pool smaller than clusters per user"));
        }
        if !(0.0..=1.0).contains(&self.relevant_fraction) {
            return Err(Error::invalid("relevant fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    fn embedder(&self) -> Embedder {
        Embedder::new(self.dim, self.seed, self.intra_cosine).expect("validated config")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticUser {
    pub user_id: u64,
    pub sequence: BehaviorSequence,
    pub interest_categories: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub user_id: u64,
    pub items: Vec<ItemVector>,
    pub categories: Vec<u32>,
    /// Whether each candidate came from one of the user's clusters.
    pub relevant: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub users: Vec<SyntheticUser>,
    /// One candidate set per user, in user order.
    pub requests: Vec<CandidateSet>,
}

fn user_stream(cfg: &InstanceConfig, user: usize, request: u64) -> rand_chacha::ChaCha8Rng {
    rng::stream(cfg.seed, rng::domain::INSTANCE, ((user as u64) << 32) | request)
}

pub fn generate_user(cfg: &InstanceConfig, user: usize) -> Result<SyntheticUser> {
    cfg.validate()?;
    let embedder = cfg.embedder();
    let mut r = user_stream(cfg, user, 0);
    let interest_categories: Vec<u32> = sample(&mut r, cfg.categories, cfg.clusters)
        .into_iter()
        .map(|c| c as u32)
        .collect();
    let mut sequence = BehaviorSequence::empty(cfg.dim);
    for _ in 0..cfg.seq_len {
        let cat = interest_categories[r.random_range(0..cfg.clusters)];
        let item: u64 = r.random();
        sequence.push(&embedder.embed(item, cat), cat)?;
    }
    Ok(SyntheticUser {
        user_id: user as u64 + 1,
        sequence,
        interest_categories,
    })
}

/// Candidate set number `request` for `user`; deterministic in both.
pub fn generate_request(cfg: &InstanceConfig, user: &SyntheticUser, request: u64) -> Result<CandidateSet> {
    cfg.validate()?;
    let embedder = cfg.embedder();
    let index = (user.user_id - 1) as usize;
    let mut r = user_stream(cfg, index, request + 1);
    let outside: Vec<u32> = (0..cfg.categories as u32)
        .filter(|c| !user.interest_categories.contains(c))
        .collect();
    let mut set = CandidateSet {
        user_id: user.user_id,
        items: Vec::with_capacity(cfg.candidates),
        categories: Vec::with_capacity(cfg.candidates),
        relevant: Vec::with_capacity(cfg.candidates),
    };
    for _ in 0..cfg.candidates {
        let relevant = outside.is_empty() || r.random_bool(cfg.relevant_fraction);
        let cat = if relevant {
            user.interest_categories[r.random_range(0..cfg.clusters)]
        } else {
            outside[r.random_range(0..outside.len())]
        };
        let item: u64 = r.random();
        set.items.push(embedder.embed(item, cat));
        set.categories.push(cat);
        set.relevant.push(relevant);
    }
    Ok(set)
}

pub fn generate_instance(cfg: &InstanceConfig) -> Result<Instance> {
    cfg.validate()?;
    let users = (0..cfg.users)
        .map(|u| generate_user(cfg, u))
        .collect::<Result<Vec<_>>>()?;
    let requests = users
        .iter()
        .map(|u| generate_request(cfg, u, 0))
        .collect::<Result<Vec<_>>>()?;
    Ok(Instance { users, requests })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::dot;

    #[test]
    fn keeps_most_recent_per_user() {
        let log = parse_behavior_log(b"1,10,3,pv,100\n1,11,3,buy,300\n1,12,4,cart,200\n", 2).unwrap();
        assert_eq!(log.users.len(), 1);
        let ids: Vec<u64> = log.users[0].events.iter().map(|e| e.item_id).collect();
        assert_eq!(ids, vec![11, 12]);
    }

    #[test]
    fn empty_input_has_no_users() {
        let log = parse_behavior_log(b"", 256).unwrap();
        assert!(log.users.is_empty());
        assert_eq!(log.rows, 0);
    }

    #[test]
    fn header_is_detected_and_skipped() {
        let log = parse_behavior_log(b"user,item,category,behavior,ts\n7,1,1,fav,5\n", 4).unwrap();
        assert_eq!(log.rows, 1);
        assert_eq!(log.users[0].events[0].behavior, BehaviorType::Favorite);
    }

    #[test]
    fn ties_preserve_input_order() {
        let log = parse_behavior_log(b"2,1,1,pv,50\n2,2,1,pv,50\n2,3,1,pv,50\n2,4,1,pv,10\n", 3).unwrap();
        let ids: Vec<u64> = log.users[0].events.iter().map(|e| e.item_id).collect();
        assert_eq!(ids, vec![1, 2, 3]);
    }

    #[test]
    fn malformed_rows_are_skipped_or_abort() {
        let mut text = String::new();
        for i in 0..200 {
            text.push_str(&format!("1,{i},2,pv,{i}\n"));
        }
        text.push_str("1,x,2,pv,3\n");
        let log = parse_behavior_log(text.as_bytes(), 1000).unwrap();
        assert_eq!((log.rows, log.malformed), (201, 1));
        assert_eq!(log.users[0].events.len(), 200);

        let err = parse_behavior_log(b"1,1,1,pv,1\n1,2,1,pv\n", 10).unwrap_err();
        assert!(matches!(err, Error::TooManyMalformed { malformed: 1, total: 2, first_line: 2, .. }));
        assert!(parse_behavior_log(b"1,1,1,pv,-5\n", 10).is_err());
    }

    #[test]
    fn unreadable_file_is_an_error() {
        assert!(matches!(load_behavior_log("/nonexistent/log.csv", 3), Err(Error::Io(_))));
    }

    #[test]
    fn embedding_is_deterministic_and_unit() {
        let a = embed_item(5, 9, 16, 1).unwrap();
        let b = embed_item(5, 9, 16, 1).unwrap();
        assert_eq!(a, b);
        assert!((crate::vector::norm(&a) - 1.0).abs() < 1e-12);
        assert_ne!(a, embed_item(6, 9, 16, 1).unwrap());
        assert!(embed_item(5, 9, 1, 1).is_err());
    }

    #[test]
    fn full_blend_collapses_category() {
        let e = Embedder::new(8, 3, 1.0).unwrap();
        assert_eq!(e.embed(1, 4), e.embed(999, 4));
        assert_ne!(e.embed(1, 4), e.embed(1, 5));
    }

    #[test]
    fn within_category_cosine_exceeds_cross_category() {
        let e = Embedder::new(32, 11, 0.7).unwrap();
        let mut r = rng::stream(1, 99, 0);
        let (mut within, mut cross) = (0.0, 0.0);
        let n = 10_000;
        for _ in 0..n {
            let (c1, c2): (u32, u32) = (r.random_range(0..20), r.random_range(0..20));
            let c2 = if c2 == c1 { (c1 + 1) % 20 } else { c2 };
            let a = e.embed(r.random(), c1);
            within += dot(&a, &e.embed(r.random(), c1));
            cross += dot(&a, &e.embed(r.random(), c2));
        }
        let (within, cross) = (within / n as f64, cross / n as f64);
        assert!(within > cross + 0.3, "within {within} cross {cross}");
    }

    #[test]
    fn instance_shapes_and_determinism() {
        let cfg = InstanceConfig {
            seq_len: 1,
            candidates: 1,
            users: 1,
            clusters: 1,
            dim: 4,
            ..Default::default()
        };
        let inst = generate_instance(&cfg).unwrap();
        assert_eq!(inst.users.len(), 1);
        assert_eq!(inst.users[0].sequence.len(), 1);
        assert_eq!(inst.requests[0].items.len(), 1);

        let cfg = InstanceConfig::default();
        let a = generate_instance(&cfg).unwrap();
        assert_eq!(a, generate_instance(&cfg).unwrap());
        assert!(a.users.iter().all(|u| u.sequence.len() == 256));
        for u in &a.users {
            for s in u.sequence.items() {
                assert!((crate::vector::norm(s) - 1.0).abs() < 1e-9);
            }
        }
        assert!(a.requests.iter().flat_map(|r| &r.relevant).any(|&x| x));
        assert!(a.requests.iter().flat_map(|r| &r.relevant).any(|&x| !x));
    }

    #[test]
    fn config_validation() {
        let bad = InstanceConfig {
            intra_cosine: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = InstanceConfig {
            seq_len: 0,
            ..Default::default()
        };
        assert!(generate_instance(&bad).is_err());
    }
}
