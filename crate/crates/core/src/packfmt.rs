//! On-disk formats.
//!
//! Layer tensor file (`BAQT`), all integers little-endian:
//!
//! ```text
//! offset  size        field
//! 0       4           magic "BAQT"
//! 4       4           version (u32) = 1
//! 8       4           rows (u32)
//! 12      4           cols (u32)
//! 16      4·rows·cols f32 values, row-major
//! ```
//!
//! Packed layer file (`BAQP`):
//!
//! ```text
//! 0       4           magic "BAQP"
//! 4       4           version (u32) = 1
//! 8       4           M (u32)
//! 12      4           N (u32)
//! 16      8·M         per-row (min, max) as f32 pairs
//! ..      ceil(N/2)   widths: column j in the low nibble of byte j/2 when j is
//!                     even, in the high nibble when j is odd
//! ..                  codes, column-major: column j holds M codes of R_j bits
//!                     each, most significant bit first, zero-padded to a byte
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::allocator::MAX_BITS;
use crate::error::{BaqError, Result};
use crate::linalg::DenseMatrix;
use crate::quantizer::QuantizedLayer;
use crate::scalar::Real;

pub const LAYER_MAGIC: [u8; 4] = *b"BAQT";
pub const PACKED_MAGIC: [u8; 4] = *b"BAQP";
pub const FORMAT_VERSION: u32 = 1;
/// Magic, version and the two dimensions.
pub const FIXED_HEADER_BYTES: usize = 16;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(BaqError::TruncatedPayload {
            needed: self.pos.saturating_add(n),
            available: self.bytes.len(),
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: [u8; 4]) -> Result<(usize, usize)> {
        let found: [u8; 4] = self.take(4)?.try_into().unwrap();
        if found != magic {
            return Err(BaqError::BadMagic { expected: magic, found });
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(BaqError::BadVersion(version));
        }
        Ok((self.u32()? as usize, self.u32()? as usize))
    }

    fn finish(&self) -> Result<()> {
        match self.bytes.len() - self.pos {
            0 => Ok(()),
            extra => Err(BaqError::TrailingBytes(extra)),
        }
    }
}

fn dim_u32(d: usize) -> Result<u32> {
    u32::try_from(d).map_err(|_| BaqError::InvalidArgument(format!("dimension {d} exceeds u32")))
}

fn put_header(out: &mut Vec<u8>, magic: [u8; 4], rows: usize, cols: usize) -> Result<()> {
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&dim_u32(rows)?.to_le_bytes());
    out.extend_from_slice(&dim_u32(cols)?.to_le_bytes());
    Ok(())
}

pub fn encode_layer_tensor(m: &DenseMatrix<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(FIXED_HEADER_BYTES + 4 * m.as_slice().len());
    put_header(&mut out, LAYER_MAGIC, m.rows(), m.cols())?;
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_layer_tensor(bytes: &[u8]) -> Result<DenseMatrix<f32>> {
    let mut r = Reader::new(bytes);
    let (rows, cols) = r.header(LAYER_MAGIC)?;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| BaqError::InvalidArgument(format!("{rows}x{cols} overflows")))?;
    let payload = r.take(count.saturating_mul(4))?;
    r.finish()?;
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    DenseMatrix::new(rows, cols, data)
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| BaqError::Io(e.error.to_string()))?;
    Ok(())
}

pub fn write_layer(path: impl AsRef<Path>, m: &DenseMatrix<f32>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_layer_tensor(m)?)
}

pub fn read_layer(path: impl AsRef<Path>) -> Result<DenseMatrix<f32>> {
    decode_layer_tensor(&fs::read(path)?)
}

/// Byte budget of a packed layer file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackedLayout {
    pub rows: usize,
    pub cols: usize,
    pub fixed_header: usize,
    pub bounds: usize,
    pub width_header: usize,
    pub codes: usize,
}

impl PackedLayout {
    pub fn new(rows: usize, bits: &[u8]) -> Self {
        Self {
            rows,
            cols: bits.len(),
            fixed_header: FIXED_HEADER_BYTES,
            bounds: 8 * rows,
            width_header: bits.len().div_ceil(2),
            codes: bits.iter().map(|&b| (rows * b as usize).div_ceil(8)).sum(),
        }
    }

    pub fn total(&self) -> usize {
        self.fixed_header + self.bounds + self.width_header + self.codes
    }

    fn weights(&self) -> f64 {
        (self.rows * self.cols).max(1) as f64
    }

    /// Code payload (including per-column padding) per weight.
    pub fn code_bits_per_weight(&self) -> f64 {
        8.0 * self.codes as f64 / self.weights()
    }

    /// Width-header bits per weight.
    pub fn width_header_bits_per_weight(&self) -> f64 {
        8.0 * self.width_header as f64 / self.weights()
    }

    /// Every byte of the file per weight.
    pub fn total_bits_per_weight(&self) -> f64 {
        8.0 * self.total() as f64 / self.weights()
    }
}

struct BitWriter<'a> {
    out: &'a mut Vec<u8>,
    acc: u32,
    filled: u32,
}

impl<'a> BitWriter<'a> {
    fn new(out: &'a mut Vec<u8>) -> Self {
        Self { out, acc: 0, filled: 0 }
    }

    fn push(&mut self, value: u32, bits: u32) {
        self.acc = (self.acc << bits) | value;
        self.filled += bits;
        while self.filled >= 8 {
            self.filled -= 8;
            self.out.push((self.acc >> self.filled) as u8);
        }
        self.acc &= (1 << self.filled) - 1;
    }

    fn flush(self) {
        if self.filled > 0 {
            self.out.push((self.acc << (8 - self.filled)) as u8);
        }
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    bit: usize,
}

impl BitReader<'_> {
    fn pull(&mut self, bits: u32) -> u32 {
        let mut v = 0u32;
        for _ in 0..bits {
            let byte = self.bytes[self.bit / 8];
            v = (v << 1) | ((byte >> (7 - self.bit % 8)) & 1) as u32;
            self.bit += 1;
        }
        v
    }
}

fn bound_f32<T: Real>(v: T) -> Result<f32> {
    let f = v.as_f64() as f32;
    if f as f64 != v.as_f64() {
        return Err(BaqError::InvalidArgument(format!("row bound {v} is not representable as f32")));
    }
    Ok(f)
}

/// Serializes a quantized layer. Bounds must be exactly representable as `f32`.
pub fn pack_quantized<T: Real>(q: &QuantizedLayer<T>) -> Result<Vec<u8>> {
    let (m, n) = (q.rows(), q.cols());
    let bits = q.per_column_bits();
    let layout = PackedLayout::new(m, bits);
    let mut out = Vec::with_capacity(layout.total());
    put_header(&mut out, PACKED_MAGIC, m, n)?;
    for i in 0..m {
        out.extend_from_slice(&bound_f32(q.row_min()[i])?.to_le_bytes());
        out.extend_from_slice(&bound_f32(q.row_max()[i])?.to_le_bytes());
    }
    for pair in bits.chunks(2) {
        if let Some(&b) = pair.iter().find(|&&b| b > MAX_BITS) {
            return Err(BaqError::InvalidArgument(format!("bitwidth {b} exceeds {MAX_BITS}")));
        }
        out.push(pair[0] | pair.get(1).map_or(0, |&hi| hi << 4));
    }
    for (j, &b) in bits.iter().enumerate() {
        let mut writer = BitWriter::new(&mut out);
        for i in 0..m {
            let code = q.code(i, j) as u32;
            if code >> b != 0 {
                return Err(BaqError::CodeOverflow { row: i, col: j, code, bits: b });
            }
            writer.push(code, b as u32);
        }
        writer.flush();
    }
    debug_assert_eq!(out.len(), layout.total());
    Ok(out)
}

/// Parses a packed layer file and rebuilds its dequantized matrix.
pub fn unpack_quantized<T: Real>(bytes: &[u8]) -> Result<QuantizedLayer<T>> {
    let mut r = Reader::new(bytes);
    let (m, n) = r.header(PACKED_MAGIC)?;
    let bound_bytes = m.saturating_mul(8);
    if bytes.len().saturating_sub(r.pos) < bound_bytes {
        return Err(BaqError::TruncatedPayload { needed: r.pos.saturating_add(bound_bytes), available: bytes.len() });
    }
    let mut row_min = Vec::with_capacity(m);
    let mut row_max = Vec::with_capacity(m);
    for _ in 0..m {
        let (lo, hi) = (r.f32()?, r.f32()?);
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(BaqError::InvalidRange { lo: lo as f64, hi: hi as f64 });
        }
        row_min.push(T::lit(lo as f64));
        row_max.push(T::lit(hi as f64));
    }
    let nibbles = r.take(n.div_ceil(2))?;
    let bits: Vec<u8> = (0..n).map(|j| (nibbles[j / 2] >> (4 * (j % 2))) & 0x0f).collect();
    let mut codes = vec![0u16; m * n];
    for (j, &b) in bits.iter().enumerate() {
        let column = r.take((m * b as usize).div_ceil(8))?;
        let mut reader = BitReader { bytes: column, bit: 0 };
        for i in 0..m {
            codes[i * n + j] = reader.pull(b as u32) as u16;
        }
    }
    r.finish()?;
    QuantizedLayer::from_codes(m, n, codes, bits, row_min, row_max)
}

pub fn write_packed<T: Real>(path: impl AsRef<Path>, q: &QuantizedLayer<T>) -> Result<()> {
    write_atomic(path.as_ref(), &pack_quantized(q)?)
}

pub fn read_packed<T: Real>(path: impl AsRef<Path>) -> Result<QuantizedLayer<T>> {
    unpack_quantized(&fs::read(path)?)
}
