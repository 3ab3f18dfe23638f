//! Binary dataset codec.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! header : magic "HOMERDS\0" | version u16 | tag_len u16 | tag bytes
//!          | field_count u16 | { field_id u16 | domain u8 | vocab u32 } * field_count
//!          | record_count u64
//! record : payload_len u32 | payload
//! payload: request_id u64 | user ids u32* | ctx ids u32*
//!          | n_behaviors u32 | { user u32* | item u32* | cross u32* | ctx u32* | position u32 | action u8 }*
//!          | n_items u32 | { item u32* | cross u32* | flags u8 (bit0 exposed, bit1 clicked) }*
//! ```
//!
//! Per-domain id counts come from the schema table.

use std::io::{Read, Write};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{validate_request, Action, Behavior, Domain, FieldSpec, ItemEntry, Limits, RequestSample, Schema};

pub const DATASET_MAGIC: &[u8; 8] = b"HOMERDS\0";
pub const DATASET_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("record {index} is truncated")]
    TruncatedRecord { index: u64 },
    #[error("record {index} is corrupt: {reason}")]
    CorruptRecord { index: u64, reason: String },
    #[error("sample {index} is invalid: {reason}")]
    InvalidSample { index: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A schema, its samples, and a free-form tag (typically a config hash).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub schema: Schema,
    pub tag: String,
    pub samples: Vec<RequestSample>,
}

struct Counts {
    user: usize,
    item: usize,
    cross: usize,
    ctx: usize,
}

impl Counts {
    fn of(schema: &Schema) -> Self {
        Self {
            user: schema.count(Domain::User),
            item: schema.count(Domain::Item),
            cross: schema.count(Domain::Cross),
            ctx: schema.count(Domain::Context),
        }
    }
}

fn put_ids(buf: &mut Vec<u8>, ids: &[u32]) {
    for id in ids {
        buf.extend_from_slice(&id.to_le_bytes());
    }
}

/// Payload bytes of one sample (without the length prefix).
pub fn encode_record(sample: &RequestSample) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&sample.request_id.to_le_bytes());
    put_ids(&mut buf, &sample.user_fields);
    put_ids(&mut buf, &sample.ctx_fields);
    buf.extend_from_slice(&(sample.behaviors.len() as u32).to_le_bytes());
    for b in &sample.behaviors {
        put_ids(&mut buf, &b.user_fields);
        put_ids(&mut buf, &b.item_fields);
        put_ids(&mut buf, &b.cross_fields);
        put_ids(&mut buf, &b.ctx_fields);
        buf.extend_from_slice(&b.position.to_le_bytes());
        buf.push(b.action.code());
    }
    buf.extend_from_slice(&(sample.items.len() as u32).to_le_bytes());
    for it in &sample.items {
        put_ids(&mut buf, &it.item_fields);
        put_ids(&mut buf, &it.cross_fields);
        buf.push(u8::from(it.exposed) | (u8::from(it.clicked) << 1));
    }
    buf
}

/// Serialized size of one sample including its length prefix.
pub fn record_size(sample: &RequestSample) -> usize {
    4 + encode_record(sample).len()
}

fn encode_header(schema: &Schema, tag: &str, records: u64) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tag.len() as u16).to_le_bytes());
    buf.extend_from_slice(tag.as_bytes());
    buf.extend_from_slice(&(schema.fields().len() as u16).to_le_bytes());
    for f in schema.fields() {
        buf.extend_from_slice(&f.field_id.to_le_bytes());
        buf.push(f.domain.code());
        buf.extend_from_slice(&f.vocab_size.to_le_bytes());
    }
    buf.extend_from_slice(&records.to_le_bytes());
    buf
}

/// Validates and writes a dataset.
pub fn write_dataset<W: Write>(dataset: &Dataset, mut w: W) -> Result<(), DatasetError> {
    for (index, s) in dataset.samples.iter().enumerate() {
        if let Some(v) = validate_request(s, &dataset.schema, Limits::default()).first() {
            return Err(DatasetError::InvalidSample { index, reason: v.to_string() });
        }
    }
    w.write_all(&encode_header(&dataset.schema, &dataset.tag, dataset.samples.len() as u64))?;
    for s in &dataset.samples {
        let payload = encode_record(s);
        w.write_all(&(payload.len() as u32).to_le_bytes())?;
        w.write_all(&payload)?;
    }
    w.flush()?;
    Ok(())
}

pub fn encode_dataset(dataset: &Dataset) -> Result<Vec<u8>, DatasetError> {
    let mut buf = Vec::new();
    write_dataset(dataset, &mut buf)?;
    Ok(buf)
}

/// Hex SHA-256 of a byte stream; equal datasets always encode to equal bytes.
pub fn checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn header_bytes<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N], DatasetError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| DatasetError::CorruptHeader(format!("truncated header: {e}")))?;
    Ok(b)
}

/// Reads a dataset. When `expected` is given, the embedded schema must equal it.
pub fn read_dataset<R: Read>(mut r: R, expected: Option<&Schema>) -> Result<Dataset, DatasetError> {
    let magic: [u8; 8] = header_bytes(&mut r)?;
    if &magic != DATASET_MAGIC {
        return Err(DatasetError::SchemaMismatch("bad magic bytes; not a dataset of this format".into()));
    }
    let version = u16::from_le_bytes(header_bytes(&mut r)?);
    if version != DATASET_VERSION {
        return Err(DatasetError::CorruptHeader(format!("unsupported version {version}")));
    }
    let tag_len = u16::from_le_bytes(header_bytes(&mut r)?) as usize;
    let mut tag = vec![0u8; tag_len];
    r.read_exact(&mut tag).map_err(|e| DatasetError::CorruptHeader(format!("truncated tag: {e}")))?;
    let tag = String::from_utf8(tag).map_err(|_| DatasetError::CorruptHeader("tag is not utf-8".into()))?;
    let n_fields = u16::from_le_bytes(header_bytes(&mut r)?) as usize;
    let mut fields = Vec::with_capacity(n_fields);
    for _ in 0..n_fields {
        let field_id = u16::from_le_bytes(header_bytes(&mut r)?);
        let [code] = header_bytes::<_, 1>(&mut r)?;
        let domain =
            Domain::from_code(code).ok_or_else(|| DatasetError::CorruptHeader(format!("unknown domain code {code}")))?;
        let vocab_size = u32::from_le_bytes(header_bytes(&mut r)?);
        fields.push(FieldSpec { field_id, domain, vocab_size });
    }
    let schema = Schema::new(fields).map_err(DatasetError::CorruptHeader)?;
    if let Some(exp) = expected {
        if exp != &schema {
            return Err(DatasetError::SchemaMismatch("file schema differs from the expected schema".into()));
        }
    }
    let count = u64::from_le_bytes(header_bytes(&mut r)?);
    let counts = Counts::of(&schema);
    let mut samples = Vec::with_capacity(count.min(1 << 20) as usize);
    for index in 0..count {
        let mut len = [0u8; 4];
        r.read_exact(&mut len).map_err(|_| DatasetError::TruncatedRecord { index })?;
        let mut payload = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut payload).map_err(|_| DatasetError::TruncatedRecord { index })?;
        let sample = decode_record(&payload, &counts).map_err(|reason| DatasetError::CorruptRecord { index, reason })?;
        samples.push(sample);
    }
    Ok(Dataset { schema, tag, samples })
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or("payload ends early")?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn ids(&mut self, n: usize) -> Result<Vec<u32>, String> {
        (0..n).map(|_| self.u32()).collect()
    }
}

fn decode_record(payload: &[u8], c: &Counts) -> Result<RequestSample, String> {
    let mut cur = Cursor { buf: payload, pos: 0 };
    let request_id = cur.u64()?;
    let user_fields = cur.ids(c.user)?;
    let ctx_fields = cur.ids(c.ctx)?;
    let n = cur.u32()? as usize;
    let mut behaviors = Vec::with_capacity(n.min(4096));
    for _ in 0..n {
        let user_fields = cur.ids(c.user)?;
        let item_fields = cur.ids(c.item)?;
        let cross_fields = cur.ids(c.cross)?;
        let ctx_fields = cur.ids(c.ctx)?;
        let position = cur.u32()?;
        let code = cur.u8()?;
        let action = Action::from_code(code).ok_or_else(|| format!("unknown action code {code}"))?;
        behaviors.push(Behavior { user_fields, item_fields, cross_fields, ctx_fields, position, action });
    }
    let k = cur.u32()? as usize;
    let mut items = Vec::with_capacity(k.min(4096));
    for _ in 0..k {
        let item_fields = cur.ids(c.item)?;
        let cross_fields = cur.ids(c.cross)?;
        let flags = cur.u8()?;
        if flags > 3 {
            return Err(format!("bad label flags {flags}"));
        }
        items.push(ItemEntry { item_fields, cross_fields, exposed: flags & 1 != 0, clicked: flags & 2 != 0 });
    }
    if cur.pos != payload.len() {
        return Err(format!("{} trailing bytes", payload.len() - cur.pos));
    }
    Ok(RequestSample { request_id, user_fields, ctx_fields, behaviors, items })
}
