//! The `.cca` bitstream container.
//!
//! Layout (all multi-byte integers big-endian):
//!   magic "CCA1" (4) | version u8=1 | profile u8 | lambda index u8 |
//!   reserved u8=0 | height u32 | width u32 | model checksum u64 |
//!   z payload length u32 + bytes | slice count u8 |
//!   per slice: payload length u32 + bytes.

use crate::error::{CodecError, CodecResult};

pub const MAGIC: [u8; 4] = *b"CCA1";
pub const VERSION: u8 = 1;

/// 64-bit FNV-1a, used for the model checksum.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct BitstreamContainer {
    pub profile_id: u8,
    pub lambda_index: u8,
    pub height: u32,
    pub width: u32,
    pub model_checksum: u64,
    pub z_payload: Vec<u8>,
    pub slice_payloads: Vec<Vec<u8>>,
}

impl BitstreamContainer {
    /// Header bytes for a given slice count (excludes payload bytes).
    pub fn header_len(slices: usize) -> usize {
        4 + 1 + 1 + 1 + 1 + 4 + 4 + 8 + 4 + 1 + 4 * slices
    }

    pub fn payload_len(&self) -> usize {
        self.z_payload.len() + self.slice_payloads.iter().map(Vec::len).sum::<usize>()
    }

    pub fn serialized_len(&self) -> usize {
        Self::header_len(self.slice_payloads.len()) + self.payload_len()
    }

    pub fn serialize(&self) -> CodecResult<Vec<u8>> {
        if self.slice_payloads.len() > u8::MAX as usize {
            return Err(CodecError::Invalid(format!(
                "{} slices exceed the u8 slice count",
                self.slice_payloads.len()
            )));
        }
        if self.z_payload.len() > u32::MAX as usize
            || self.slice_payloads.iter().any(|p| p.len() > u32::MAX as usize)
        {
            return Err(CodecError::Invalid("payload exceeds u32 length".into()));
        }
        let mut out = Vec::with_capacity(self.serialized_len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.profile_id);
        out.push(self.lambda_index);
        out.push(0u8);
        out.extend_from_slice(&self.height.to_be_bytes());
        out.extend_from_slice(&self.width.to_be_bytes());
        out.extend_from_slice(&self.model_checksum.to_be_bytes());
        out.extend_from_slice(&(self.z_payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.z_payload);
        out.push(self.slice_payloads.len() as u8);
        for p in &self.slice_payloads {
            out.extend_from_slice(&(p.len() as u32).to_be_bytes());
            out.extend_from_slice(p);
        }
        Ok(out)
    }

    pub fn parse(bytes: &[u8]) -> CodecResult<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take4()?;
        if magic != MAGIC {
            return Err(CodecError::BadMagic(magic));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(CodecError::BadVersion(version));
        }
        let profile_id = r.u8()?;
        let lambda_index = r.u8()?;
        let reserved = r.u8()?;
        if reserved != 0 {
            return Err(CodecError::BadLength(format!(
                "reserved byte is {reserved}, want 0"
            )));
        }
        let height = r.u32()?;
        let width = r.u32()?;
        let model_checksum = r.u64()?;
        let z_len = r.u32()? as usize;
        let z_payload = r.take(z_len)?.to_vec();
        let slice_count = r.u8()? as usize;
        let mut slice_payloads = Vec::with_capacity(slice_count);
        for _ in 0..slice_count {
            let len = r.u32()? as usize;
            slice_payloads.push(r.take(len)?.to_vec());
        }
        if r.pos != bytes.len() {
            return Err(CodecError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(BitstreamContainer {
            profile_id,
            lambda_index,
            height,
            width,
            model_checksum,
            z_payload,
            slice_payloads,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> CodecResult<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CodecError::BadLength(format!(
                "need {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn take4(&mut self) -> CodecResult<[u8; 4]> {
        Ok(self.take(4)?.try_into().unwrap())
    }

    fn u8(&mut self) -> CodecResult<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> CodecResult<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> CodecResult<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
}
