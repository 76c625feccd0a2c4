use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("pmf must hold at least 2 entries, got {0}")]
    PmfTooShort(usize),
    #[error("pmf sums to {0}, outside 1 +/- 1e-6")]
    PmfSum(f64),
    #[error("pmf entry {index} is {value}, not a finite non-negative probability")]
    PmfEntry { index: usize, value: f64 },
    #[error("symbol {symbol} outside the CDF support [{lo}, {hi}]")]
    SymbolOutOfRange { symbol: i64, lo: i64, hi: i64 },
    #[error("symbol {symbol} has zero coded mass")]
    ZeroMassSymbol { symbol: i64 },
    #[error("encoder needs one CDF per symbol: {symbols} symbols, {cdfs} CDFs")]
    CdfCount { symbols: usize, cdfs: usize },
    #[error("compressed stream truncated")]
    Truncated,
    #[error("compressed stream corrupt (final coder state mismatch)")]
    CorruptPayload,
    #[error("bad container magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    BadVersion(u8),
    #[error("container length field inconsistent: {0}")]
    BadLength(String),
    #[error("container has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("model checksum mismatch: container {container:016x}, model {model:016x}")]
    ChecksumMismatch { container: u64, model: u64 },
    #[error("{0}")]
    Invalid(String),
}

pub type CodecResult<T> = Result<T, CodecError>;
