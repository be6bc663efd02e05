//! Binary framing.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "DSLT" | u32 header_len | JSON header | u64 payload_len | payload | u64 checksum
//! ```
//!
//! The payload is the concatenation of the arrays listed in `header.dims`,
//! each stored row-major as f64. The checksum is FNV-1a-64 over the header
//! bytes followed by the payload bytes.

use std::hash::Hasher;

use fnv::FnvHasher;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::messages::{
    BroadcastCoefficients, MessageEnvelope, OneShotSummary, Payload, Round, Round1Summary, Round2Summary,
    PROTOCOL_VERSION,
};
use crate::error::ProtocolError;

pub const MAGIC: [u8; 4] = *b"DSLT";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameHeader {
    pub version: u32,
    pub round: Round,
    pub study_id: Option<usize>,
    pub fold_id: Option<usize>,
    pub n_used: Option<usize>,
    /// (rows, cols) of each array in payload order.
    pub dims: Vec<(usize, usize)>,
}

pub fn checksum(header: &[u8], payload: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(header);
    h.write(payload);
    h.finish()
}

fn push_vector(buf: &mut Vec<u8>, dims: &mut Vec<(usize, usize)>, v: &DVector<f64>) {
    dims.push((v.len(), 1));
    for x in v.iter() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn push_matrix(buf: &mut Vec<u8>, dims: &mut Vec<(usize, usize)>, m: &DMatrix<f64>) {
    dims.push((m.nrows(), m.ncols()));
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            buf.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
}

pub fn serialize(msg: &MessageEnvelope) -> Vec<u8> {
    let mut payload = Vec::new();
    let mut dims = Vec::new();
    let (study_id, fold_id, n_used) = match &msg.payload {
        Payload::Probe => (None, None, None),
        Payload::Round1(s) => {
            push_vector(&mut payload, &mut dims, &s.xi_hat);
            push_matrix(&mut payload, &mut dims, &s.h_hat);
            (Some(s.study_id), Some(s.fold_id), Some(s.n_used))
        }
        Payload::Broadcast(b) => {
            for blk in &b.beta_blocks {
                push_vector(&mut payload, &mut dims, blk);
            }
            (None, Some(b.fold_id), None)
        }
        Payload::Round2(s) => {
            push_vector(&mut payload, &mut dims, &s.xi_tilde);
            push_matrix(&mut payload, &mut dims, &s.h_tilde);
            push_matrix(&mut payload, &mut dims, &s.j_tilde);
            (Some(s.study_id), Some(s.fold_id), Some(s.n_used))
        }
        Payload::OneShot(s) => {
            push_vector(&mut payload, &mut dims, &s.beta_breve);
            push_vector(&mut payload, &mut dims, &s.sigma_sq);
            (Some(s.study_id), None, Some(s.n_used))
        }
    };
    let header = FrameHeader {
        version: msg.protocol_version,
        round: msg.round(),
        study_id,
        fold_id,
        n_used,
        dims,
    };
    let header = serde_json::to_vec(&header).expect("header serializes");

    let mut out = Vec::with_capacity(4 + 4 + header.len() + 8 + payload.len() + 8);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&checksum(&header, &payload).to_le_bytes());
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], ProtocolError> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(ProtocolError::Truncated {
                needed: self.pos.saturating_add(len),
                available: self.buf.len(),
            }),
        }
    }

    fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ProtocolError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Split a frame into its parsed header and raw payload, checking magic,
/// lengths, checksum and version in that order.
pub fn open_frame(bytes: &[u8]) -> Result<(FrameHeader, &[u8]), ProtocolError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic = cur.take(4)?;
    if magic != MAGIC {
        return Err(ProtocolError::BadMagic { found: magic.try_into().unwrap() });
    }
    let header_len = cur.u32()? as usize;
    let header = cur.take(header_len)?;
    let payload_len = usize::try_from(cur.u64()?).unwrap_or(usize::MAX);
    let payload = cur.take(payload_len)?;
    let expected = cur.u64()?;
    if cur.pos != bytes.len() {
        return Err(ProtocolError::Header(format!(
            "{} trailing bytes after checksum",
            bytes.len() - cur.pos
        )));
    }
    let computed = checksum(header, payload);
    if computed != expected {
        return Err(ProtocolError::ChecksumMismatch { expected, computed });
    }
    let header: FrameHeader =
        serde_json::from_slice(header).map_err(|e| ProtocolError::Header(e.to_string()))?;
    if header.version != PROTOCOL_VERSION {
        return Err(ProtocolError::VersionMismatch { found: header.version, expected: PROTOCOL_VERSION });
    }
    Ok((header, payload))
}

fn read_arrays(header: &FrameHeader, payload: &[u8]) -> Result<Vec<DMatrix<f64>>, ProtocolError> {
    let total: usize = header
        .dims
        .iter()
        .try_fold(0usize, |acc, &(r, c)| r.checked_mul(c).and_then(|rc| acc.checked_add(rc)))
        .ok_or_else(|| ProtocolError::Dimension("dimension overflow".into()))?;
    if total.checked_mul(8) != Some(payload.len()) {
        return Err(ProtocolError::Dimension(format!(
            "header describes {total} values but payload holds {} bytes",
            payload.len()
        )));
    }
    let mut vals = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    Ok(header
        .dims
        .iter()
        .map(|&(r, c)| DMatrix::from_row_iterator(r, c, vals.by_ref().take(r * c)))
        .collect())
}

fn field(v: Option<usize>, name: &str) -> Result<usize, ProtocolError> {
    v.ok_or_else(|| ProtocolError::Header(format!("missing {name}")))
}

fn as_vector(m: DMatrix<f64>) -> Result<DVector<f64>, ProtocolError> {
    if m.ncols() != 1 {
        return Err(ProtocolError::Dimension(format!("expected a column vector, got {}x{}", m.nrows(), m.ncols())));
    }
    Ok(DVector::from_column_slice(m.as_slice()))
}

fn expect_shapes(dims: &[(usize, usize)], shapes: &[(usize, usize)]) -> Result<(), ProtocolError> {
    if dims != shapes {
        return Err(ProtocolError::Dimension(format!("expected arrays {shapes:?}, got {dims:?}")));
    }
    Ok(())
}

pub fn deserialize(bytes: &[u8]) -> Result<MessageEnvelope, ProtocolError> {
    let (header, payload) = open_frame(bytes)?;
    let mut arrays = read_arrays(&header, payload)?.into_iter();
    let p = header.dims.first().map_or(0, |d| d.0);
    let payload = match header.round {
        Round::Probe => {
            expect_shapes(&header.dims, &[])?;
            Payload::Probe
        }
        Round::R1 => {
            expect_shapes(&header.dims, &[(p, 1), (p, p)])?;
            Payload::Round1(Round1Summary {
                study_id: field(header.study_id, "study_id")?,
                fold_id: field(header.fold_id, "fold_id")?,
                n_used: field(header.n_used, "n_used")?,
                xi_hat: as_vector(arrays.next().unwrap())?,
                h_hat: arrays.next().unwrap(),
            })
        }
        Round::Broadcast => {
            if header.dims.is_empty() || header.dims.iter().any(|&d| d != (p, 1)) {
                return Err(ProtocolError::Dimension(format!("bad broadcast blocks {:?}", header.dims)));
            }
            Payload::Broadcast(BroadcastCoefficients {
                fold_id: field(header.fold_id, "fold_id")?,
                beta_blocks: arrays.map(as_vector).collect::<Result<_, _>>()?,
            })
        }
        Round::R2 => {
            expect_shapes(&header.dims, &[(p, 1), (p, p), (p, p)])?;
            Payload::Round2(Round2Summary {
                study_id: field(header.study_id, "study_id")?,
                fold_id: field(header.fold_id, "fold_id")?,
                n_used: field(header.n_used, "n_used")?,
                xi_tilde: as_vector(arrays.next().unwrap())?,
                h_tilde: arrays.next().unwrap(),
                j_tilde: arrays.next().unwrap(),
            })
        }
        Round::OneShot => {
            expect_shapes(&header.dims, &[(p, 1), (p, 1)])?;
            Payload::OneShot(OneShotSummary {
                study_id: field(header.study_id, "study_id")?,
                n_used: field(header.n_used, "n_used")?,
                beta_breve: as_vector(arrays.next().unwrap())?,
                sigma_sq: as_vector(arrays.next().unwrap())?,
            })
        }
    };
    Ok(MessageEnvelope { protocol_version: header.version, payload })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_round_trips() {
        let env = MessageEnvelope::new(Payload::Probe);
        assert_eq!(deserialize(&serialize(&env)).unwrap(), env);
    }

    #[test]
    fn short_buffer_is_truncated() {
        let bytes = serialize(&MessageEnvelope::new(Payload::Probe));
        for cut in 0..bytes.len() {
            let err = deserialize(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, ProtocolError::Truncated { .. }), "cut {cut}: {err}");
        }
    }
}
