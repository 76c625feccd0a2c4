//! Byte-oriented rANS with 16-bit probability precision.
//!
//! State lives in [2^16, 2^24); renormalization emits single bytes and
//! the final state flushes as three bytes, so per-stream overhead is
//! 8..24 bits. Decoding verifies that the stream is fully consumed and
//! the state returns to its initial value, which traps corruption.

use crate::error::{CodecError, CodecResult};

const RANS_L: u32 = 1 << 16;

/// Integer CDF over a contiguous symbol range starting at `offset`.
///
/// `cdf` holds S+1 cumulative counts with cdf[0] = 0 and
/// cdf[S] = 2^precision. Bins with nonzero modeled mass are strictly
/// increasing; zero-mass bins (outside the trimmed support) may repeat.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedCdf {
    pub precision: u8,
    pub offset: i32,
    pub cdf: Vec<u32>,
}

impl QuantizedCdf {
    pub fn symbols(&self) -> usize {
        self.cdf.len() - 1
    }

    pub fn total(&self) -> u32 {
        1u32 << self.precision
    }

    pub fn freq(&self, slot: usize) -> u32 {
        self.cdf[slot + 1] - self.cdf[slot]
    }

    /// Slot for an integer value, saturating into the support and then
    /// onto the nearest slot with nonzero mass. The bool reports whether
    /// any clamping happened.
    pub fn slot_for(&self, value: i32) -> (usize, bool) {
        let s = self.symbols() as i64;
        let raw = value as i64 - self.offset as i64;
        let mut clamped = false;
        let mut slot = raw;
        if slot < 0 {
            slot = 0;
            clamped = true;
        } else if slot >= s {
            slot = s - 1;
            clamped = true;
        }
        let mut slot = slot as usize;
        if self.freq(slot) == 0 {
            clamped = true;
            // Nearest nonzero-mass slot; ties prefer the smaller index.
            let mut best: Option<usize> = None;
            for d in 1..self.symbols() {
                if slot >= d && self.freq(slot - d) > 0 {
                    best = Some(slot - d);
                    break;
                }
                if slot + d < self.symbols() && self.freq(slot + d) > 0 {
                    best = Some(slot + d);
                    break;
                }
            }
            slot = best.expect("quantized CDF has no mass");
        }
        (slot, clamped)
    }

    pub fn value_of(&self, slot: usize) -> i32 {
        self.offset + slot as i32
    }

    /// Information content of a slot in bits under the quantized model.
    pub fn bits_of(&self, slot: usize) -> f64 {
        let f = self.freq(slot) as f64;
        -(f / self.total() as f64).log2()
    }

    fn find_slot(&self, cum: u32) -> usize {
        // Binary search for the slot with cdf[s] <= cum < cdf[s+1].
        let mut lo = 0usize;
        let mut hi = self.symbols();
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.cdf[mid] <= cum {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

/// Quantize a probability vector to integer counts summing to 2^precision.
///
/// Every entry with nonzero probability receives at least one count; the
/// difference left by rounding is borrowed from (or granted to) the
/// largest bins, earliest first.
pub fn quantize_cdf(pmf: &[f64], precision: u8) -> CodecResult<QuantizedCdf> {
    quantize_cdf_offset(pmf, precision, 0)
}

pub fn quantize_cdf_offset(pmf: &[f64], precision: u8, offset: i32) -> CodecResult<QuantizedCdf> {
    if pmf.len() < 2 {
        return Err(CodecError::PmfTooShort(pmf.len()));
    }
    if precision == 0 || precision > 16 {
        return Err(CodecError::Invalid(format!(
            "precision {precision} outside 1..=16"
        )));
    }
    let mut sum = 0.0f64;
    for (i, &p) in pmf.iter().enumerate() {
        if !p.is_finite() || p < 0.0 {
            return Err(CodecError::PmfEntry { index: i, value: p });
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(CodecError::PmfSum(sum));
    }
    let total = 1u64 << precision;
    let mut counts: Vec<u64> = pmf
        .iter()
        .map(|&p| {
            if p == 0.0 {
                0
            } else {
                ((p * total as f64).round() as u64).max(1)
            }
        })
        .collect();
    let mut assigned: i64 = counts.iter().sum::<u64>() as i64;
    while assigned != total as i64 {
        let diff = total as i64 - assigned;
        if diff > 0 {
            // Grant the whole surplus to the largest bin.
            let (idx, _) = counts
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .unwrap();
            counts[idx] += diff as u64;
            assigned += diff;
        } else {
            // Borrow from the largest bin, keeping it at >= 1.
            let (idx, &c) = counts
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .unwrap();
            let take = ((-diff) as u64).min(c - 1);
            if take == 0 {
                return Err(CodecError::Invalid(
                    "cannot satisfy minimum bin counts at this precision".into(),
                ));
            }
            counts[idx] -= take;
            assigned -= take as i64;
        }
    }
    let mut cdf = Vec::with_capacity(pmf.len() + 1);
    let mut acc = 0u64;
    cdf.push(0u32);
    for c in counts {
        acc += c;
        cdf.push(acc as u32);
    }
    Ok(QuantizedCdf {
        precision,
        offset,
        cdf,
    })
}

/// Encode symbol slots, one CDF per symbol (CDFs repeat by reference).
pub fn rc_encode(slots: &[usize], cdfs: &[&QuantizedCdf]) -> CodecResult<Vec<u8>> {
    if slots.len() != cdfs.len() {
        return Err(CodecError::CdfCount {
            symbols: slots.len(),
            cdfs: cdfs.len(),
        });
    }
    let mut out: Vec<u8> = Vec::with_capacity(slots.len() + 8);
    let mut state = RANS_L;
    for (&slot, cdf) in slots.iter().zip(cdfs).rev() {
        if slot >= cdf.symbols() {
            return Err(CodecError::SymbolOutOfRange {
                symbol: cdf.value_of(slot.min(i32::MAX as usize)) as i64,
                lo: cdf.offset as i64,
                hi: cdf.offset as i64 + cdf.symbols() as i64 - 1,
            });
        }
        let freq = cdf.freq(slot);
        if freq == 0 {
            return Err(CodecError::ZeroMassSymbol {
                symbol: cdf.value_of(slot) as i64,
            });
        }
        let x_max = (RANS_L >> cdf.precision) * 256 * freq;
        while state >= x_max {
            out.push((state & 0xff) as u8);
            state >>= 8;
        }
        state = (state / freq) << cdf.precision | (state % freq + cdf.cdf[slot]);
    }
    out.push((state & 0xff) as u8);
    out.push(((state >> 8) & 0xff) as u8);
    out.push(((state >> 16) & 0xff) as u8);
    out.reverse();
    Ok(out)
}

/// Decode `cdfs.len()` symbol slots; the per-symbol CDFs must match the
/// encoder's. Verifies full stream consumption and the terminal state.
pub fn rc_decode(bytes: &[u8], cdfs: &[&QuantizedCdf]) -> CodecResult<Vec<usize>> {
    let mut decoder = RansDecoder::new(bytes)?;
    let mut slots = Vec::with_capacity(cdfs.len());
    for cdf in cdfs {
        slots.push(decoder.decode(cdf)?);
    }
    decoder.finish()?;
    Ok(slots)
}

/// Streaming decoder for callers that compute each symbol's CDF from
/// previously decoded output (the autoregressive path).
pub struct RansDecoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    state: u32,
}

impl<'a> RansDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> CodecResult<Self> {
        if bytes.len() < 3 {
            return Err(CodecError::Truncated);
        }
        let state = ((bytes[0] as u32) << 16) | ((bytes[1] as u32) << 8) | bytes[2] as u32;
        Ok(RansDecoder {
            bytes,
            pos: 3,
            state,
        })
    }

    pub fn decode(&mut self, cdf: &QuantizedCdf) -> CodecResult<usize> {
        let mask = (1u32 << cdf.precision) - 1;
        let cum = self.state & mask;
        let slot = cdf.find_slot(cum);
        let freq = cdf.freq(slot);
        if freq == 0 {
            return Err(CodecError::CorruptPayload);
        }
        self.state = freq * (self.state >> cdf.precision) + cum - cdf.cdf[slot];
        while self.state < RANS_L {
            if self.pos >= self.bytes.len() {
                return Err(CodecError::Truncated);
            }
            self.state = (self.state << 8) | self.bytes[self.pos] as u32;
            self.pos += 1;
        }
        Ok(slot)
    }

    /// Verify the stream ends exactly where encoding began.
    pub fn finish(self) -> CodecResult<()> {
        if self.pos != self.bytes.len() {
            return Err(CodecError::TrailingBytes(self.bytes.len() - self.pos));
        }
        if self.state != RANS_L {
            return Err(CodecError::CorruptPayload);
        }
        Ok(())
    }
}
