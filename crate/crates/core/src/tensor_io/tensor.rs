//! TST1 tensor interchange format.
//!
//! Little-endian layout:
//!
//! | offset | size | field                                    |
//! |--------|------|------------------------------------------|
//! | 0      | 4    | magic `54 53 54 31` ("TST1")             |
//! | 4      | 1    | version = 1                              |
//! | 5      | 1    | kind: 0 = logits, 1 = probabilities      |
//! | 6      | 2    | reserved = 0                             |
//! | 8      | 4    | C                                        |
//! | 12     | 4    | H                                        |
//! | 16     | 4    | W                                        |
//! | 20     | 4·CHW| f32 values, class-major, row-major plane |

use super::{IoError, ProbTensor, TensorKind};

pub const TENSOR_MAGIC: [u8; 4] = *b"TST1";
pub const TENSOR_VERSION: u8 = 1;
const HEADER_LEN: usize = 20;

pub fn write_tensor(t: &ProbTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + t.data().len() * 4);
    out.extend_from_slice(&TENSOR_MAGIC);
    out.push(TENSOR_VERSION);
    out.push(match t.kind() {
        TensorKind::Logits => 0,
        TensorKind::Probabilities => 1,
    });
    out.extend_from_slice(&0u16.to_le_bytes());
    for dim in [t.channels(), t.height(), t.width()] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_tensor(bytes: &[u8]) -> Result<ProbTensor, IoError> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != TENSOR_MAGIC {
            return Err(IoError::BadMagic(bytes[..4].try_into().unwrap()));
        }
        return Err(IoError::TruncatedPayload {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != TENSOR_MAGIC {
        return Err(IoError::BadMagic(magic));
    }
    if bytes[4] != TENSOR_VERSION {
        return Err(IoError::VersionUnsupported(bytes[4]));
    }
    let kind = match bytes[5] {
        0 => TensorKind::Logits,
        1 => TensorKind::Probabilities,
        k => return Err(IoError::UnknownKind(k)),
    };
    let reserved = u16::from_le_bytes([bytes[6], bytes[7]]);
    if reserved != 0 {
        return Err(IoError::ReservedNonZero(reserved));
    }
    let dim = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let (c, h, w) = (dim(8), dim(12), dim(16));
    let count = (c as usize)
        .checked_mul(h as usize)
        .and_then(|v| v.checked_mul(w as usize))
        .filter(|&n| n > 0 && n <= (usize::MAX - HEADER_LEN) / 4)
        .ok_or(IoError::ShapeOverflow(c, h, w))?;
    let expected = HEADER_LEN + count * 4;
    if bytes.len() < expected {
        return Err(IoError::TruncatedPayload {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(IoError::TrailingBytes(bytes.len() - expected));
    }
    let data: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    ProbTensor::new(kind, c as usize, h as usize, w as usize, data)
}
