//! Binary encoding of bucket tables and the framed request/response protocol.
//!
//! All integers are little-endian. Bucket-table payload:
//!
//! ```text
//! "SDIM" u16 version u16 d u16 m u16 tau u64 user_id u64 family_seed
//! u64 sequence_version u32 item_count                          (40 bytes)
//! per round:  u16 bucket_count
//!   per bucket: u16 signature  u32 count  vector[d]
//! ```
//!
//! Version 1 stores vectors as `f32`, version 2 as IEEE half precision.
//! Frames are `u32 length | u8 type | payload`, with `length` covering the
//! type byte and payload.

use std::io::{self, Read, Write};

use half::f16;

use super::table::{Bucket, BucketTable};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SDIM";
pub const VERSION_F32: u16 = 1;
pub const VERSION_F16: u16 = 2;
pub const HEADER_LEN: usize = 40;
/// Frames above this size are rejected before allocation.
pub const MAX_FRAME_LEN: usize = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F16,
}

impl Precision {
    fn version(self) -> u16 {
        match self {
            Precision::F32 => VERSION_F32,
            Precision::F16 => VERSION_F16,
        }
    }

    fn bytes(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F16 => 2,
        }
    }
}

/// Exact payload size, `40 + Σ_rounds (2 + buckets · (2 + 4 + 4d))` for f32.
pub fn encoded_len(table: &BucketTable, precision: Precision) -> usize {
    let per_bucket = 2 + 4 + precision.bytes() * table.d;
    HEADER_LEN + table.rounds.iter().map(|r| 2 + r.len() * per_bucket).sum::<usize>()
}

fn to_u16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::invalid(format!("{what} = {v} does not fit in u16")))
}

pub fn serialize_bucket_table(table: &BucketTable) -> Result<Vec<u8>> {
    serialize_bucket_table_with(table, Precision::F32)
}

pub fn serialize_bucket_table_with(table: &BucketTable, precision: Precision) -> Result<Vec<u8>> {
    if table.rounds.len() * table.tau != table.m {
        return Err(Error::invalid("round count disagrees with m / tau"));
    }
    let mut out = Vec::with_capacity(encoded_len(table, precision));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&precision.version().to_le_bytes());
    out.extend_from_slice(&to_u16(table.d, "d")?.to_le_bytes());
    out.extend_from_slice(&to_u16(table.m, "m")?.to_le_bytes());
    out.extend_from_slice(&to_u16(table.tau, "tau")?.to_le_bytes());
    out.extend_from_slice(&table.user_id.to_le_bytes());
    out.extend_from_slice(&table.family_seed.to_le_bytes());
    out.extend_from_slice(&table.sequence_version.to_le_bytes());
    out.extend_from_slice(&table.item_count.to_le_bytes());
    for round in &table.rounds {
        out.extend_from_slice(&to_u16(round.len(), "bucket_count")?.to_le_bytes());
        for b in round {
            if b.vector.len() != table.d {
                return Err(Error::DimensionMismatch {
                    expected: table.d,
                    found: b.vector.len(),
                });
            }
            out.extend_from_slice(&b.signature.to_le_bytes());
            out.extend_from_slice(&b.count.to_le_bytes());
            match precision {
                Precision::F32 => b.vector.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Precision::F16 => b
                    .vector
                    .iter()
                    .for_each(|x| out.extend_from_slice(&f16::from_f32(*x).to_le_bytes())),
            }
        }
    }
    Ok(out)
}

/// Little-endian cursor that reports the offset of whatever it fails on.
pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::malformed(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        self.array(what).map(u16::from_le_bytes)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        self.array(what).map(u32::from_le_bytes)
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        self.array(what).map(u64::from_le_bytes)
    }

    pub(crate) fn f32(&mut self, what: &str) -> Result<f32> {
        self.array(what).map(f32::from_le_bytes)
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::malformed(self.pos, format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

pub fn deserialize_bucket_table(bytes: &[u8]) -> Result<BucketTable> {
    let mut c = Cursor::new(bytes);
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::malformed(0, "bad magic"));
    }
    let version = c.u16("version")?;
    let precision = match version {
        VERSION_F32 => Precision::F32,
        VERSION_F16 => Precision::F16,
        found => return Err(Error::VersionMismatch { found }),
    };
    let at = c.offset();
    let d = usize::from(c.u16("d")?);
    let m = usize::from(c.u16("m")?);
    let tau = usize::from(c.u16("tau")?);
    if d == 0 || tau == 0 || tau > crate::simhash::MAX_TAU || m == 0 || m % tau != 0 {
        return Err(Error::malformed(at, format!("invalid shape d={d} m={m} tau={tau}")));
    }
    let user_id = c.u64("user_id")?;
    let family_seed = c.u64("family_seed")?;
    let sequence_version = c.u64("sequence_version")?;
    let item_count = c.u32("item_count")?;

    let limit = 1u32 << tau;
    let mut rounds = Vec::with_capacity(m / tau);
    for i in 0..m / tau {
        let n = usize::from(c.u16("bucket_count")?);
        if n > limit as usize {
            return Err(Error::malformed(c.offset() - 2, format!("round {i}: {n} buckets exceed 2^tau")));
        }
        let mut round: Vec<Bucket> = Vec::with_capacity(n);
        let mut total = 0u64;
        for _ in 0..n {
            let at = c.offset();
            let signature = c.u16("signature")?;
            if u32::from(signature) >= limit {
                return Err(Error::malformed(at, format!("signature {signature} >= 2^{tau}")));
            }
            if round.last().is_some_and(|b| b.signature >= signature) {
                return Err(Error::malformed(at, "signatures not strictly ascending"));
            }
            let count = c.u32("count")?;
            if count == 0 {
                return Err(Error::malformed(at + 2, "zero-count bucket"));
            }
            total += u64::from(count);
            let raw = c.take(precision.bytes() * d, "bucket vector")?;
            let vector = match precision {
                Precision::F32 => raw
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("chunk of 4")))
                    .collect(),
                Precision::F16 => raw
                    .chunks_exact(2)
                    .map(|b| f16::from_le_bytes(b.try_into().expect("chunk of 2")).to_f32())
                    .collect(),
            };
            round.push(Bucket {
                signature,
                count,
                vector,
            });
        }
        if total != u64::from(item_count) {
            return Err(Error::malformed(
                c.offset(),
                format!("round {i}: counts sum to {total}, header says {item_count}"),
            ));
        }
        rounds.push(round);
    }
    c.finish()?;
    Ok(BucketTable {
        d,
        m,
        tau,
        user_id,
        family_seed,
        sequence_version,
        item_count,
        rounds,
    })
}

/// Frame type byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    EncodeRequest = 1,
    BucketTable = 2,
    ScoreRequest = 3,
    ScoreResponse = 4,
    Error = 5,
    UpdateSequence = 6,
    Ack = 7,
}

impl TryFrom<u8> for MessageType {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        Ok(match v {
            1 => Self::EncodeRequest,
            2 => Self::BucketTable,
            3 => Self::ScoreRequest,
            4 => Self::ScoreResponse,
            5 => Self::Error,
            6 => Self::UpdateSequence,
            7 => Self::Ack,
            other => return Err(Error::malformed(4, format!("unknown message type {other}"))),
        })
    }
}

/// Error-frame codes.
pub mod error_code {
    pub const UNKNOWN_USER: u16 = 1;
    pub const MALFORMED: u16 = 2;
    pub const FAMILY_MISMATCH: u16 = 3;
    pub const VERSION_MISMATCH: u16 = 4;
    pub const INVALID_ARGUMENT: u16 = 5;
    pub const DIMENSION_MISMATCH: u16 = 6;
    pub const INTERNAL: u16 = 7;
}

pub fn error_code_of(e: &Error) -> u16 {
    use error_code::*;
    match e {
        Error::UnknownUser(_) => UNKNOWN_USER,
        Error::Malformed { .. } => MALFORMED,
        Error::FamilyMismatch(_) => FAMILY_MISMATCH,
        Error::VersionMismatch { .. } => VERSION_MISMATCH,
        Error::InvalidArgument(_) | Error::EmptySequence => INVALID_ARGUMENT,
        Error::DimensionMismatch { .. } => DIMENSION_MISMATCH,
        Error::Remote { code, .. } => *code,
        _ => INTERNAL,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRequest {
    pub user_id: u64,
    /// `B` candidate vectors of dimension `d`.
    pub candidates: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub hit_rounds: u16,
    pub interest: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreResponse {
    pub results: Vec<ScoredCandidate>,
}

/// Full replacement of a user's sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateSequence {
    pub user_id: u64,
    pub d: usize,
    pub categories: Vec<u32>,
    /// Row-major `L × d`.
    pub items: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    EncodeRequest { user_id: u64 },
    /// A serialized [`BucketTable`].
    BucketTable(Vec<u8>),
    ScoreRequest(ScoreRequest),
    ScoreResponse(ScoreResponse),
    Error { code: u16, message: String },
    UpdateSequence(UpdateSequence),
    Ack { user_id: u64, sequence_version: u64 },
}

fn push_f32s(out: &mut Vec<u8>, xs: &[f32]) {
    xs.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
}

/// Infers a uniform row width from `remaining = rows · (fixed + 4d)`.
fn row_dim(remaining: usize, rows: usize, fixed: usize, at: usize) -> Result<usize> {
    if rows == 0 {
        return if remaining == 0 {
            Ok(0)
        } else {
            Err(Error::malformed(at, "trailing bytes after empty batch"))
        };
    }
    if !remaining.is_multiple_of(rows) || (remaining / rows) < fixed || !(remaining / rows - fixed).is_multiple_of(4) {
        return Err(Error::malformed(at, format!("{remaining} bytes do not split into {rows} rows")));
    }
    Ok((remaining / rows - fixed) / 4)
}

impl Message {
    pub fn message_type(&self) -> MessageType {
        match self {
            Message::EncodeRequest { .. } => MessageType::EncodeRequest,
            Message::BucketTable(_) => MessageType::BucketTable,
            Message::ScoreRequest(_) => MessageType::ScoreRequest,
            Message::ScoreResponse(_) => MessageType::ScoreResponse,
            Message::Error { .. } => MessageType::Error,
            Message::UpdateSequence(_) => MessageType::UpdateSequence,
            Message::Ack { .. } => MessageType::Ack,
        }
    }

    pub fn error(e: &Error) -> Self {
        let mut message = e.to_string();
        // u16 length prefix
        while message.len() > usize::from(u16::MAX) {
            message.pop();
        }
        Message::Error {
            code: error_code_of(e),
            message,
        }
    }

    pub fn encode_payload(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        match self {
            Message::EncodeRequest { user_id } => out.extend_from_slice(&user_id.to_le_bytes()),
            Message::BucketTable(bytes) => out.extend_from_slice(bytes),
            Message::ScoreRequest(req) => {
                out.extend_from_slice(&req.user_id.to_le_bytes());
                out.extend_from_slice(&to_u16(req.candidates.len(), "B")?.to_le_bytes());
                let d = req.candidates.first().map_or(0, Vec::len);
                for c in &req.candidates {
                    if c.len() != d {
                        return Err(Error::DimensionMismatch { expected: d, found: c.len() });
                    }
                    push_f32s(&mut out, c);
                }
            }
            Message::ScoreResponse(resp) => {
                out.extend_from_slice(&to_u16(resp.results.len(), "B")?.to_le_bytes());
                let d = resp.results.first().map_or(0, |r| r.interest.len());
                for r in &resp.results {
                    if r.interest.len() != d {
                        return Err(Error::DimensionMismatch { expected: d, found: r.interest.len() });
                    }
                    out.extend_from_slice(&r.hit_rounds.to_le_bytes());
                    push_f32s(&mut out, &r.interest);
                }
            }
            Message::Error { code, message } => {
                out.extend_from_slice(&code.to_le_bytes());
                out.extend_from_slice(&to_u16(message.len(), "message length")?.to_le_bytes());
                out.extend_from_slice(message.as_bytes());
            }
            Message::UpdateSequence(u) => {
                let l = u.categories.len();
                if u.items.len() != l * u.d {
                    return Err(Error::invalid("update items do not match L x d"));
                }
                out.extend_from_slice(&u.user_id.to_le_bytes());
                out.extend_from_slice(&to_u16(u.d, "d")?.to_le_bytes());
                let l32 = u32::try_from(l).map_err(|_| Error::invalid("sequence too long"))?;
                out.extend_from_slice(&l32.to_le_bytes());
                for (cat, row) in u.categories.iter().zip(u.items.chunks_exact(u.d.max(1))) {
                    out.extend_from_slice(&cat.to_le_bytes());
                    push_f32s(&mut out, row);
                }
            }
            Message::Ack { user_id, sequence_version } => {
                out.extend_from_slice(&user_id.to_le_bytes());
                out.extend_from_slice(&sequence_version.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(kind: MessageType, payload: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(payload);
        let msg = match kind {
            MessageType::EncodeRequest => Message::EncodeRequest {
                user_id: c.u64("user_id")?,
            },
            MessageType::BucketTable => {
                let bytes = c.take(c.remaining(), "table")?.to_vec();
                Message::BucketTable(bytes)
            }
            MessageType::ScoreRequest => {
                let user_id = c.u64("user_id")?;
                let b = usize::from(c.u16("B")?);
                let d = row_dim(c.remaining(), b, 0, c.offset())?;
                let mut candidates = Vec::with_capacity(b);
                for _ in 0..b {
                    candidates.push((0..d).map(|_| c.f32("candidate")).collect::<Result<_>>()?);
                }
                Message::ScoreRequest(ScoreRequest { user_id, candidates })
            }
            MessageType::ScoreResponse => {
                let b = usize::from(c.u16("B")?);
                let d = row_dim(c.remaining(), b, 2, c.offset())?;
                let mut results = Vec::with_capacity(b);
                for _ in 0..b {
                    let hit_rounds = c.u16("hit_rounds")?;
                    let interest = (0..d).map(|_| c.f32("interest")).collect::<Result<_>>()?;
                    results.push(ScoredCandidate { hit_rounds, interest });
                }
                Message::ScoreResponse(ScoreResponse { results })
            }
            MessageType::Error => {
                let code = c.u16("code")?;
                let len = usize::from(c.u16("message length")?);
                let at = c.offset();
                let message = std::str::from_utf8(c.take(len, "message")?)
                    .map_err(|_| Error::malformed(at, "message is not UTF-8"))?
                    .to_string();
                Message::Error { code, message }
            }
            MessageType::UpdateSequence => {
                let user_id = c.u64("user_id")?;
                let d = usize::from(c.u16("d")?);
                let l = c.u32("L")? as usize;
                let need = l.checked_mul(4 + 4 * d);
                if need != Some(c.remaining()) {
                    return Err(Error::malformed(c.offset(), "update length disagrees with L and d"));
                }
                let mut categories = Vec::with_capacity(l);
                let mut items = Vec::with_capacity(l * d);
                for _ in 0..l {
                    categories.push(c.u32("category")?);
                    for _ in 0..d {
                        items.push(c.f32("item")?);
                    }
                }
                Message::UpdateSequence(UpdateSequence {
                    user_id,
                    d,
                    categories,
                    items,
                })
            }
            MessageType::Ack => Message::Ack {
                user_id: c.u64("user_id")?,
                sequence_version: c.u64("sequence_version")?,
            },
        };
        c.finish()?;
        Ok(msg)
    }
}

pub fn write_frame<W: Write>(w: &mut W, msg: &Message) -> Result<()> {
    let payload = msg.encode_payload()?;
    let len = u32::try_from(payload.len() + 1).map_err(|_| Error::invalid("frame too large"))?;
    let mut frame = Vec::with_capacity(payload.len() + 5);
    frame.extend_from_slice(&len.to_le_bytes());
    frame.push(msg.message_type() as u8);
    frame.extend_from_slice(&payload);
    w.write_all(&frame)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame; `Ok(None)` on a clean end of stream before the first byte.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Message>> {
    let mut len = [0u8; 4];
    match r.read(&mut len[..1]) {
        Ok(0) => return Ok(None),
        Ok(_) => r.read_exact(&mut len[1..])?,
        Err(e) if e.kind() == io::ErrorKind::Interrupted => return read_frame(r),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_le_bytes(len) as usize;
    if len == 0 || len > MAX_FRAME_LEN {
        return Err(Error::malformed(0, format!("frame length {len} out of range")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    let kind = MessageType::try_from(body[0])?;
    Message::decode(kind, &body[1..]).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::serving::table::encode_sequence;
    use crate::simhash::sample_hash_family;
    use crate::{BehaviorSequence, ItemVector};

    fn table(d: usize, buckets: &[(u16, u32, Vec<f32>)]) -> BucketTable {
        BucketTable {
            d,
            m: 2,
            tau: 2,
            user_id: 42,
            family_seed: 7,
            sequence_version: 3,
            item_count: buckets.iter().map(|b| b.1).sum(),
            rounds: vec![buckets
                .iter()
                .map(|(s, c, v)| Bucket {
                    signature: *s,
                    count: *c,
                    vector: v.clone(),
                })
                .collect()],
        }
    }

    #[test]
    fn empty_table_is_header_plus_round_counts() {
        let fam = sample_hash_family(7, 48, 3, 128).unwrap();
        let t = BucketTable::empty(&fam, 9);
        let bytes = serialize_bucket_table(&t).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 2 * 16);
        assert_eq!(bytes.len(), encoded_len(&t, Precision::F32));
        assert_eq!(&bytes[..4], b"SDIM");
        assert_eq!(deserialize_bucket_table(&bytes).unwrap(), t);
    }

    #[test]
    fn single_bucket_round_trips_exactly() {
        let t = table(2, &[(1, 1, vec![0.6, 0.8])]);
        let bytes = serialize_bucket_table(&t).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 2 + 2 + 4 + 8);
        let back = deserialize_bucket_table(&bytes).unwrap();
        assert_eq!(back.rounds[0][0].vector, vec![0.6f32, 0.8f32]);
        assert_eq!(back, t);
    }

    #[test]
    fn header_layout() {
        let t = table(2, &[(1, 1, vec![0.6, 0.8])]);
        let b = serialize_bucket_table(&t).unwrap();
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), 1);
        assert_eq!(u16::from_le_bytes([b[6], b[7]]), 2);
        assert_eq!(u64::from_le_bytes(b[12..20].try_into().unwrap()), 42);
        assert_eq!(u64::from_le_bytes(b[20..28].try_into().unwrap()), 7);
        assert_eq!(u64::from_le_bytes(b[28..36].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(b[36..40].try_into().unwrap()), 1);
        assert_eq!(u16::from_le_bytes([b[40], b[41]]), 1);
    }

    #[test]
    fn malformed_inputs_report_offsets() {
        let t = table(2, &[(1, 1, vec![0.6, 0.8])]);
        let good = serialize_bucket_table(&t).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(deserialize_bucket_table(&bad), Err(Error::Malformed { offset: 0, .. })));

        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(deserialize_bucket_table(&bad), Err(Error::VersionMismatch { found: 9 })));

        let truncated = &good[..good.len() - 3];
        assert!(matches!(deserialize_bucket_table(truncated), Err(Error::Malformed { .. })));

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(matches!(
            deserialize_bucket_table(&trailing),
            Err(Error::Malformed { offset, .. }) if offset == good.len()
        ));

        let mut bad = good.clone();
        bad[42] = 4; // signature 4 >= 2^2
        assert!(matches!(deserialize_bucket_table(&bad), Err(Error::Malformed { offset: 42, .. })));

        let mut bad = good;
        bad[36] = 5; // item_count disagrees with bucket counts
        assert!(deserialize_bucket_table(&bad).is_err());
    }

    #[test]
    fn half_precision_is_smaller_and_close() {
        let fam = sample_hash_family(3, 12, 3, 8).unwrap();
        let items: Vec<ItemVector> = (0..20)
            .map(|i| ItemVector::normalized((0..8).map(|k| ((i * 8 + k) as f64 * 0.37).sin()).collect()).unwrap())
            .collect();
        let t = encode_sequence(&BehaviorSequence::from_items(items).unwrap(), &fam, 1).unwrap();
        let full = serialize_bucket_table(&t).unwrap();
        let half = serialize_bucket_table_with(&t, Precision::F16).unwrap();
        assert_eq!(half.len(), encoded_len(&t, Precision::F16));
        assert!(half.len() < full.len());
        let back = deserialize_bucket_table(&half).unwrap();
        for (ra, rb) in t.rounds.iter().zip(&back.rounds) {
            for (a, b) in ra.iter().zip(rb) {
                assert_eq!((a.signature, a.count), (b.signature, b.count));
                assert!(a.vector.iter().zip(&b.vector).all(|(x, y)| (x - y).abs() < 1e-3));
            }
        }
    }

    #[test]
    fn frames_round_trip() {
        let msgs = vec![
            Message::EncodeRequest { user_id: 5 },
            Message::BucketTable(vec![1, 2, 3]),
            Message::ScoreRequest(ScoreRequest {
                user_id: 9,
                candidates: vec![vec![0.6, 0.8], vec![1.0, 0.0]],
            }),
            Message::ScoreRequest(ScoreRequest {
                user_id: 9,
                candidates: vec![],
            }),
            Message::ScoreResponse(ScoreResponse {
                results: vec![ScoredCandidate {
                    hit_rounds: 3,
                    interest: vec![0.1, 0.2, 0.3],
                }],
            }),
            Message::Error {
                code: error_code::UNKNOWN_USER,
                message: "unknown user 4".into(),
            },
            Message::UpdateSequence(UpdateSequence {
                user_id: 2,
                d: 2,
                categories: vec![1, 2],
                items: vec![1.0, 0.0, 0.0, 1.0],
            }),
            Message::Ack {
                user_id: 2,
                sequence_version: 4,
            },
        ];
        let mut buf = Vec::new();
        for m in &msgs {
            write_frame(&mut buf, m).unwrap();
        }
        let mut r = buf.as_slice();
        for m in &msgs {
            assert_eq!(read_frame(&mut r).unwrap().as_ref(), Some(m));
        }
        assert_eq!(read_frame(&mut r).unwrap(), None);
    }

    #[test]
    fn frame_layout_is_length_type_payload() {
        let mut buf = Vec::new();
        write_frame(&mut buf, &Message::EncodeRequest { user_id: 1 }).unwrap();
        assert_eq!(buf, [9, 0, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn bad_frames_are_errors() {
        assert!(read_frame(&mut [0u8, 0, 0, 0].as_slice()).is_err());
        assert!(read_frame(&mut [2u8, 0, 0, 0, 99, 0].as_slice()).is_err());
        // ScoreRequest whose body does not split into B rows
        let mut bad = vec![];
        let payload = [1u8, 0, 0, 0, 0, 0, 0, 0, 2, 0, 1, 2, 3];
        bad.extend_from_slice(&((payload.len() + 1) as u32).to_le_bytes());
        bad.push(MessageType::ScoreRequest as u8);
        bad.extend_from_slice(&payload);
        assert!(matches!(read_frame(&mut bad.as_slice()), Err(Error::Malformed { .. })));
    }
}
