//! Binary file formats. All integers and floats are little-endian.
//!
//! Every file starts with a 4-byte magic and a `u32` version. Parameter
//! vectors and masks use a 16-byte header `magic | version | u64 count`:
//!
//! - `PAWV`: header, then `count` × `f64`.
//! - `PAWM`: header, then `f64` rate, `u32` scope (0 whole model,
//!   1 decoder only), `u32` reserved, then `count` sorted `u32` indices.
//! - `FRAE`: magic, version, six `u32` fields (input_dim, latent_dim,
//!   encoder_hidden, decoder_hidden, codebook_bits, reserved), then an
//!   embedded `PAWV` block.
//! - `STIM`: magic, version, `u32` channels (M), `u32` max active (N),
//!   `f64` frame rate, `u64` sequence count, then per sequence a `u64` frame
//!   count followed by the frames as dense `f32`.

use std::fs;
use std::path::Path;

use frae_prune_core::data::{PatternSequence, CHANNELS, FRAME_RATE, MAX_ACTIVE};
use frae_prune_core::frae::{FraeConfig, FraeModel};
use frae_prune_core::params::{ParamVector, PruningMask, Scope};

pub const PARAMS_MAGIC: [u8; 4] = *b"PAWV";
pub const MASK_MAGIC: [u8; 4] = *b"PAWM";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FRAE";
pub const PATTERNS_MAGIC: [u8; 4] = *b"STIM";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic at byte {offset}: expected {expected:?}, found {found:?}")]
    BadMagic {
        offset: usize,
        expected: String,
        found: String,
    },
    #[error("unsupported version {version} at byte {offset}")]
    Version { offset: usize, version: u32 },
    #[error("truncated file at byte {offset}: {needed} more bytes expected")]
    Truncated { offset: usize, needed: usize },
    #[error("invalid data at byte {offset}: {reason}")]
    Invalid { offset: usize, reason: String },
    #[error("{count} trailing bytes at byte {offset}")]
    Trailing { offset: usize, count: usize },
    #[error("CSV import, line {line}: {reason}")]
    Csv { line: u64, reason: String },
}

pub type Result<T, E = FormatError> = std::result::Result<T, E>;

fn invalid(offset: usize, reason: impl Into<String>) -> FormatError {
    FormatError::Invalid {
        offset,
        reason: reason.into(),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.buf.len() - self.pos;
        if available < n {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n - available,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    /// A `u64` count whose elements of `elem_size` bytes must fit in the rest
    /// of the buffer.
    fn count(&mut self, elem_size: usize) -> Result<usize> {
        let at = self.pos;
        let n = self.u64()?;
        let remaining = (self.buf.len() - self.pos) as u64;
        if n.saturating_mul(elem_size as u64) > remaining {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: (n.saturating_mul(elem_size as u64) - remaining) as usize,
            });
        }
        usize::try_from(n).map_err(|_| invalid(at, "count does not fit in memory"))
    }

    fn header(&mut self, magic: [u8; 4]) -> Result<()> {
        let offset = self.pos;
        let found: [u8; 4] = self.array()?;
        if found != magic {
            return Err(FormatError::BadMagic {
                offset,
                expected: String::from_utf8_lossy(&magic).into_owned(),
                found: String::from_utf8_lossy(&found).into_owned(),
            });
        }
        let offset = self.pos;
        let version = self.u32()?;
        if version != VERSION {
            return Err(FormatError::Version { offset, version });
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(FormatError::Trailing {
                offset: self.pos,
                count: self.buf.len() - self.pos,
            })
        }
    }
}

fn put_header(out: &mut Vec<u8>, magic: [u8; 4]) {
    out.extend_from_slice(&magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
}

fn put_params(out: &mut Vec<u8>, w: &ParamVector) {
    put_header(out, PARAMS_MAGIC);
    out.extend_from_slice(&(w.len() as u64).to_le_bytes());
    for v in w.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_params(r: &mut Reader<'_>) -> Result<ParamVector> {
    r.header(PARAMS_MAGIC)?;
    let n = r.count(8)?;
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let at = r.pos;
        let v = r.f64()?;
        if !v.is_finite() {
            return Err(invalid(at, "non-finite parameter"));
        }
        values.push(v);
    }
    Ok(ParamVector::new(values).expect("entries checked finite"))
}

pub fn encode_params(w: &ParamVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * w.len());
    put_params(&mut out, w);
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<ParamVector> {
    let mut r = Reader::new(bytes);
    let w = read_params(&mut r)?;
    r.finish()?;
    Ok(w)
}

fn scope_code(scope: Scope) -> u32 {
    match scope {
        Scope::WholeModel => 0,
        Scope::DecoderOnly => 1,
    }
}

pub fn encode_mask(mask: &PruningMask) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 4 * mask.len());
    put_header(&mut out, MASK_MAGIC);
    out.extend_from_slice(&(mask.len() as u64).to_le_bytes());
    out.extend_from_slice(&mask.rate().to_le_bytes());
    out.extend_from_slice(&scope_code(mask.scope()).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for &i in mask.indices() {
        let i = u32::try_from(i).expect("parameter index exceeds u32");
        out.extend_from_slice(&i.to_le_bytes());
    }
    out
}

pub fn decode_mask(bytes: &[u8]) -> Result<PruningMask> {
    let mut r = Reader::new(bytes);
    r.header(MASK_MAGIC)?;
    let count_at = r.pos;
    let n = r.u64()?;
    let rate_at = r.pos;
    let rate = r.f64()?;
    let scope_at = r.pos;
    let scope = match r.u32()? {
        0 => Scope::WholeModel,
        1 => Scope::DecoderOnly,
        other => return Err(invalid(scope_at, format!("unknown scope code {other}"))),
    };
    r.u32()?;
    let remaining = (bytes.len() - r.pos) as u64;
    if n.saturating_mul(4) > remaining {
        return Err(FormatError::Truncated {
            offset: r.pos,
            needed: (n.saturating_mul(4) - remaining) as usize,
        });
    }
    let n = usize::try_from(n).map_err(|_| invalid(count_at, "count does not fit in memory"))?;
    let mut indices = Vec::with_capacity(n);
    for _ in 0..n {
        let at = r.pos;
        let i = r.u32()? as usize;
        if indices.last().is_some_and(|&prev| prev >= i) {
            return Err(invalid(at, "mask indices are not strictly increasing"));
        }
        indices.push(i);
    }
    r.finish()?;
    PruningMask::from_parts(indices, rate, scope).map_err(|e| invalid(rate_at, e.to_string()))
}

pub fn encode_checkpoint(model: &FraeModel) -> Vec<u8> {
    let c = model.config();
    let mut out = Vec::with_capacity(48 + 8 * model.params().len());
    put_header(&mut out, CHECKPOINT_MAGIC);
    let fields = [
        c.input_dim as u32,
        c.latent_dim as u32,
        c.encoder_hidden as u32,
        c.decoder_hidden as u32,
        c.codebook_bits,
        0,
    ];
    for f in fields {
        out.extend_from_slice(&f.to_le_bytes());
    }
    put_params(&mut out, model.params());
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<FraeModel> {
    let mut r = Reader::new(bytes);
    r.header(CHECKPOINT_MAGIC)?;
    let config_at = r.pos;
    let config = FraeConfig {
        input_dim: r.u32()? as usize,
        latent_dim: r.u32()? as usize,
        encoder_hidden: r.u32()? as usize,
        decoder_hidden: r.u32()? as usize,
        codebook_bits: r.u32()?,
    };
    r.u32()?;
    let params_at = r.pos;
    let params = read_params(&mut r)?;
    r.finish()?;
    config
        .validate()
        .map_err(|e| invalid(config_at, e.to_string()))?;
    FraeModel::from_params(config, params).map_err(|e| invalid(params_at, e.to_string()))
}

/// Limits a pattern file is validated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatternLimits {
    pub channels: usize,
    pub max_active: usize,
}

impl Default for PatternLimits {
    fn default() -> Self {
        PatternLimits {
            channels: CHANNELS,
            max_active: MAX_ACTIVE,
        }
    }
}

/// Encodes a dataset. All sequences must share channel count and frame rate.
pub fn encode_patterns(dataset: &[PatternSequence], limits: PatternLimits) -> Result<Vec<u8>> {
    let frame_rate = dataset
        .first()
        .map_or(FRAME_RATE, PatternSequence::frame_rate);
    for (i, seq) in dataset.iter().enumerate() {
        if seq.channels() != limits.channels || seq.frame_rate() != frame_rate {
            return Err(invalid(
                0,
                format!("sequence {i} has a different channel count or frame rate"),
            ));
        }
    }
    let frames: usize = dataset.iter().map(|s| s.as_flat().len()).sum();
    let mut out = Vec::with_capacity(32 + 8 * dataset.len() + 4 * frames);
    put_header(&mut out, PATTERNS_MAGIC);
    out.extend_from_slice(&(limits.channels as u32).to_le_bytes());
    out.extend_from_slice(&(limits.max_active as u32).to_le_bytes());
    out.extend_from_slice(&frame_rate.to_le_bytes());
    out.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    for seq in dataset {
        out.extend_from_slice(&(seq.len() as u64).to_le_bytes());
        for v in seq.as_flat() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes a dataset, rejecting any frame that breaks the limits.
pub fn decode_patterns(bytes: &[u8], limits: PatternLimits) -> Result<Vec<PatternSequence>> {
    let mut r = Reader::new(bytes);
    r.header(PATTERNS_MAGIC)?;
    let at = r.pos;
    let channels = r.u32()? as usize;
    if channels != limits.channels {
        return Err(invalid(
            at,
            format!(
                "{channels} channels per frame, expected {}",
                limits.channels
            ),
        ));
    }
    let at = r.pos;
    let max_active = r.u32()? as usize;
    if max_active > limits.max_active || max_active > channels {
        return Err(invalid(
            at,
            format!(
                "{max_active} active channels allowed, limit is {}",
                limits.max_active
            ),
        ));
    }
    let at = r.pos;
    let frame_rate = r.f64()?;
    if !(frame_rate.is_finite() && frame_rate > 0.0) {
        return Err(invalid(at, "frame rate must be positive"));
    }
    let sequences = r.count(8)?;
    let mut out = Vec::with_capacity(sequences);
    for _ in 0..sequences {
        let frames = r.count(4 * channels)?;
        let start = r.pos;
        let raw = r.take(frames * channels * 4)?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
            .collect();
        let seq = PatternSequence::new(channels, max_active, frame_rate, values).map_err(|e| {
            match e {
                frae_prune_core::Error::InvalidFrame { frame } => invalid(
                    start + frame * channels * 4,
                    format!("frame {frame} is out of range or has more than {max_active} active channels"),
                ),
                other => invalid(start, other.to_string()),
            }
        })?;
        out.push(seq);
    }
    r.finish()?;
    Ok(out)
}

pub fn save_params(path: &Path, w: &ParamVector) -> Result<()> {
    Ok(fs::write(path, encode_params(w))?)
}

pub fn load_params(path: &Path) -> Result<ParamVector> {
    decode_params(&fs::read(path)?)
}

pub fn save_mask(path: &Path, mask: &PruningMask) -> Result<()> {
    Ok(fs::write(path, encode_mask(mask))?)
}

pub fn load_mask(path: &Path) -> Result<PruningMask> {
    decode_mask(&fs::read(path)?)
}

pub fn save_checkpoint(path: &Path, model: &FraeModel) -> Result<()> {
    Ok(fs::write(path, encode_checkpoint(model))?)
}

pub fn load_checkpoint(path: &Path) -> Result<FraeModel> {
    decode_checkpoint(&fs::read(path)?)
}

pub fn save_patterns(path: &Path, dataset: &[PatternSequence]) -> Result<()> {
    Ok(fs::write(
        path,
        encode_patterns(dataset, PatternLimits::default())?,
    )?)
}

pub fn load_patterns(path: &Path) -> Result<Vec<PatternSequence>> {
    decode_patterns(&fs::read(path)?, PatternLimits::default())
}

/// Reads one sequence from a CSV file with one row per frame and one column
/// per channel. A non-numeric first row is treated as a header.
pub fn import_csv(path: &Path, frame_rate: f64, limits: PatternLimits) -> Result<PatternSequence> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| FormatError::Csv {
            line: 0,
            reason: e.to_string(),
        })?;
    let mut values = Vec::new();
    for (row_index, row) in reader.records().enumerate() {
        let row = row.map_err(|e| FormatError::Csv {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = row.position().map_or(row_index as u64 + 1, |p| p.line());
        let parsed: std::result::Result<Vec<f32>, _> = row.iter().map(str::parse::<f32>).collect();
        let frame = match parsed {
            Ok(frame) => frame,
            Err(_) if row_index == 0 => continue,
            Err(e) => {
                return Err(FormatError::Csv {
                    line,
                    reason: e.to_string(),
                })
            }
        };
        if frame.len() != limits.channels {
            return Err(FormatError::Csv {
                line,
                reason: format!("{} columns, expected {}", frame.len(), limits.channels),
            });
        }
        values.extend(frame);
    }
    PatternSequence::new(limits.channels, limits.max_active, frame_rate, values).map_err(|e| {
        let line = match e {
            frae_prune_core::Error::InvalidFrame { frame } => frame as u64 + 1,
            _ => 0,
        };
        FormatError::Csv {
            line,
            reason: e.to_string(),
        }
    })
}
