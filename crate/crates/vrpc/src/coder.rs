//! Lossless entropy coding of quantized latent symbols and the compressed
//! container format.
//!
//! The coder is a 32-bit integer range coder (carry propagation through a
//! byte cache, 2^16 frequency totals, renormalization at 2^24). Integer-only
//! arithmetic keeps payloads bit-identical across platforms. Symbols outside
//! the table alphabet escape to a fixed-width 16-bit raw encoding.

use crate::autodiff::ByteReader;
use crate::entropy::FactorizedDensity;
use crate::pointset::NormalizationRecord;
use crate::{Error, Result};

/// Frequency total for every coding distribution.
pub const FREQ_TOTAL: u32 = 1 << 16;

/// Default alphabet bound: symbols in [-A, A] are coded directly.
pub const DEFAULT_ALPHABET_BOUND: i32 = 127;

const TOP: u32 = 1 << 24;

/// Per-latent-index cumulative frequency tables over [-A, A] plus a trailing
/// escape symbol. Row i has 2A + 3 cumulative values ending at `FREQ_TOTAL`;
/// every symbol keeps frequency >= 1 so any value stays codable.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfTable {
    pub bound: i32,
    pub cum: Vec<Vec<u32>>,
}

impl CdfTable {
    pub fn rows(&self) -> usize {
        self.cum.len()
    }

    fn alphabet_size(&self) -> usize {
        2 * self.bound as usize + 2 // direct symbols + escape
    }

    fn escape_index(&self) -> usize {
        self.alphabet_size() - 1
    }

    fn symbol_index(&self, v: i32) -> Option<usize> {
        if v.abs() <= self.bound {
            Some((v + self.bound) as usize)
        } else {
            None
        }
    }

    fn span(&self, row: usize, idx: usize) -> (u32, u32) {
        let c = &self.cum[row];
        (c[idx], c[idx + 1] - c[idx])
    }

    /// Frequency charged when coding value `v` in this row: the direct
    /// symbol's span, or the escape span for out-of-alphabet values.
    pub fn value_freq(&self, row: usize, v: i32) -> u32 {
        let idx = self.symbol_index(v).unwrap_or_else(|| self.escape_index());
        self.span(row, idx).1
    }

    /// Index whose cumulative span contains `dart`.
    fn locate(&self, row: usize, dart: u32) -> usize {
        self.cum[row].partition_point(|&c| c <= dart) - 1
    }
}

/// Deterministic fixed-point quantization of the density into coder tables.
/// Each symbol's probability is floored into an integer frequency of at
/// least 1; the total is balanced on the most probable symbol.
pub fn build_cdf(model: &FactorizedDensity, bound: i32) -> Result<CdfTable> {
    if bound < 1 {
        return Err(Error::InvalidArgument(format!(
            "alphabet bound must be >= 1, got {bound}"
        )));
    }
    let n_sym = 2 * bound as usize + 2;
    let mut cum = Vec::with_capacity(model.len());
    for i in 0..model.len() {
        let mut freqs = vec![0u32; n_sym];
        let mut direct_mass = 0.0;
        for v in -bound..=bound {
            let p = model.likelihood(i, v as f64);
            direct_mass += p;
            freqs[(v + bound) as usize] = ((p * FREQ_TOTAL as f64).floor() as u32).max(1);
        }
        let escape_mass = (1.0 - direct_mass).max(0.0);
        freqs[n_sym - 1] = ((escape_mass * FREQ_TOTAL as f64).floor() as u32).max(1);

        let sum: u64 = freqs.iter().map(|&f| f as u64).sum();
        let diff = FREQ_TOTAL as i64 - sum as i64;
        let peak = freqs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(idx, _)| idx)
            .unwrap();
        let adjusted = freqs[peak] as i64 + diff;
        debug_assert!(adjusted >= 1, "peak frequency exhausted by balancing");
        freqs[peak] = adjusted as u32;

        let mut row = Vec::with_capacity(n_sym + 1);
        let mut acc = 0u32;
        row.push(0);
        for &f in &freqs {
            acc += f;
            row.push(acc);
        }
        debug_assert_eq!(acc, FREQ_TOTAL);
        cum.push(row);
    }
    Ok(CdfTable { bound, cum })
}

struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl RangeEncoder {
    fn new() -> RangeEncoder {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    fn encode(&mut self, cum_freq: u32, freq: u32, total: u32) {
        let r = self.range / total;
        self.low += cum_freq as u64 * r as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || self.low > u32::MAX as u64 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = ((self.low as u32) << 8) as u64;
    }

    fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    input: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    fn new(input: &'a [u8]) -> Result<RangeDecoder<'a>> {
        let mut d = RangeDecoder {
            code: 0,
            range: u32::MAX,
            input,
            pos: 0,
        };
        for _ in 0..5 {
            let b = d.next_byte()?;
            d.code = (d.code << 8) | b as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self
            .input
            .get(self.pos)
            .ok_or_else(|| Error::Bitstream("truncated payload".into()))?;
        self.pos += 1;
        Ok(b)
    }

    fn decode_dart(&self, total: u32) -> u32 {
        let r = self.range / total;
        (self.code / r).min(total - 1)
    }

    fn consume(&mut self, cum_freq: u32, freq: u32, total: u32) -> Result<()> {
        let r = self.range / total;
        self.code -= cum_freq * r;
        self.range = r * freq;
        while self.range < TOP {
            let b = self.next_byte()?;
            self.code = (self.code << 8) | b as u32;
            self.range <<= 8;
        }
        Ok(())
    }
}

fn raw_spans(byte: u8) -> (u32, u32) {
    // uniform 256-symbol distribution for escape payload bytes
    (byte as u32 * 256, 256)
}

/// Encode symbols ŷ[0..k) against per-index tables. Symbol j uses table
/// row j; out-of-alphabet values emit escape followed by the value as a
/// raw little-endian i16.
pub fn encode_symbols(symbols: &[i32], table: &CdfTable) -> Result<Vec<u8>> {
    if symbols.is_empty() {
        return Ok(Vec::new());
    }
    if symbols.len() > table.rows() {
        return Err(Error::ShapeMismatch {
            op: "encode_symbols",
            details: format!("{} symbols vs {} table rows", symbols.len(), table.rows()),
        });
    }
    let mut enc = RangeEncoder::new();
    for (row, &v) in symbols.iter().enumerate() {
        match table.symbol_index(v) {
            Some(idx) => {
                let (cum, freq) = table.span(row, idx);
                enc.encode(cum, freq, FREQ_TOTAL);
            }
            None => {
                let raw = i16::try_from(v).map_err(|_| {
                    Error::InvalidArgument(format!("symbol {v} exceeds 16-bit escape range"))
                })?;
                let (cum, freq) = table.span(row, table.escape_index());
                enc.encode(cum, freq, FREQ_TOTAL);
                for byte in raw.to_le_bytes() {
                    let (c, f) = raw_spans(byte);
                    enc.encode(c, f, FREQ_TOTAL);
                }
            }
        }
    }
    Ok(enc.finish())
}

/// Decode k symbols; exact inverse of [`encode_symbols`].
pub fn decode_symbols(payload: &[u8], k: usize, table: &CdfTable) -> Result<Vec<i32>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    if k > table.rows() {
        return Err(Error::ShapeMismatch {
            op: "decode_symbols",
            details: format!("{k} symbols vs {} table rows", table.rows()),
        });
    }
    let mut dec = RangeDecoder::new(payload)?;
    let mut out = Vec::with_capacity(k);
    for row in 0..k {
        let idx = table.locate(row, dec.decode_dart(FREQ_TOTAL));
        let (cum, freq) = table.span(row, idx);
        dec.consume(cum, freq, FREQ_TOTAL)?;
        if idx == table.escape_index() {
            let mut raw = [0u8; 2];
            for b in &mut raw {
                let byte = (dec.decode_dart(FREQ_TOTAL) / 256) as u8;
                let (c, f) = raw_spans(byte);
                dec.consume(c, f, FREQ_TOTAL)?;
                *b = byte;
            }
            out.push(i16::from_le_bytes(raw) as i32);
        } else {
            out.push(idx as i32 - table.bound);
        }
    }
    Ok(out)
}

/// CRC-32 (IEEE, reflected, polynomial 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    const fn table() -> [u32; 256] {
        let mut t = [0u32; 256];
        let mut i = 0;
        while i < 256 {
            let mut c = i as u32;
            let mut k = 0;
            while k < 8 {
                c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
                k += 1;
            }
            t[i] = c;
            i += 1;
        }
        t
    }
    const TABLE: [u32; 256] = table();
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = TABLE[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    !crc
}

pub const BITSTREAM_MAGIC: [u8; 4] = *b"VRPC";
pub const BITSTREAM_VERSION: u8 = 1;

/// Self-describing compressed cloud: header with geometry bookkeeping and a
/// model fingerprint, then the range-coded latent payload. The header is
/// CRC-guarded; a decoder whose checkpoint hash differs must refuse it.
#[derive(Debug, Clone, PartialEq)]
pub struct Bitstream {
    pub n: u32,
    pub l: u16,
    pub k: u16,
    pub normalization: NormalizationRecord,
    pub model_hash: [u8; 8],
    pub payload: Vec<u8>,
}

impl Bitstream {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = Vec::with_capacity(64);
        header.extend_from_slice(&BITSTREAM_MAGIC);
        header.push(BITSTREAM_VERSION);
        header.extend_from_slice(&self.n.to_le_bytes());
        header.extend_from_slice(&self.l.to_le_bytes());
        header.extend_from_slice(&self.k.to_le_bytes());
        for c in self.normalization.offset {
            header.extend_from_slice(&c.to_le_bytes());
        }
        header.extend_from_slice(&self.normalization.scale.to_le_bytes());
        header.extend_from_slice(&self.model_hash);
        header.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        let crc = crc32(&header);
        header.extend_from_slice(&crc.to_le_bytes());
        header.extend_from_slice(&self.payload);
        header
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Bitstream> {
        let mut r = ByteReader::new(bytes);
        let err = |msg: &str| Error::Bitstream(msg.into());
        let trunc = |_| Error::Bitstream("truncated header".into());
        let magic = r.take(4).map_err(trunc)?;
        if magic != BITSTREAM_MAGIC {
            return Err(err("bad magic"));
        }
        let version = r.u8().map_err(trunc)?;
        if version != BITSTREAM_VERSION {
            return Err(Error::Bitstream(format!("unsupported version {version}")));
        }
        let n = r.u32().map_err(trunc)?;
        let l = r.u16().map_err(trunc)?;
        let k = r.u16().map_err(trunc)?;
        let mut offset = [0.0; 3];
        for c in &mut offset {
            *c = r.f64().map_err(trunc)?;
        }
        let scale = r.f64().map_err(trunc)?;
        let model_hash: [u8; 8] = r.take(8).map_err(trunc)?.try_into().unwrap();
        let payload_len = r.u32().map_err(trunc)? as usize;
        let header_end = r.position();
        let stored_crc = r.u32().map_err(trunc)?;
        if crc32(&bytes[..header_end]) != stored_crc {
            return Err(err("header CRC mismatch"));
        }
        let payload = r
            .take(payload_len)
            .map_err(|_| Error::Bitstream("truncated payload".into()))?
            .to_vec();
        if r.remaining() != 0 {
            return Err(err("trailing bytes after payload"));
        }
        Ok(Bitstream {
            n,
            l,
            k,
            normalization: NormalizationRecord { offset, scale },
            model_hash,
            payload,
        })
    }
}
