//! Information dispersal over GF(256).
//!
//! Each chunk of `K` payload bytes is read as the values of a degree-`(K-1)`
//! polynomial at the points `0..K`; piece `i` carries its value at point `i`.
//! Pieces `0..K` are therefore the plain chunk bytes, and any `K` pieces
//! determine the polynomial by Lagrange interpolation.

use thiserror::Error;

use crate::ids::ItemId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ErasureError {
    #[error("invalid code parameters: {0}")]
    InvalidParams(String),
    #[error("{have} distinct pieces, {need} needed")]
    NotEnoughPieces { have: usize, need: usize },
    #[error("reconstructed payload does not match the item id")]
    HashMismatch,
    #[error("pieces disagree on item or parameters")]
    Inconsistent,
    #[error("malformed piece encoding: {0}")]
    Malformed(String),
}

mod gf {
    const POLY: u16 = 0x11d;

    const fn tables() -> ([u8; 512], [u8; 256]) {
        let mut exp = [0u8; 512];
        let mut log = [0u8; 256];
        let mut x: u16 = 1;
        let mut i = 0;
        while i < 255 {
            exp[i] = x as u8;
            log[x as usize] = i as u8;
            x <<= 1;
            if x & 0x100 != 0 {
                x ^= POLY;
            }
            i += 1;
        }
        while i < 512 {
            exp[i] = exp[i - 255];
            i += 1;
        }
        (exp, log)
    }

    const TABLES: ([u8; 512], [u8; 256]) = tables();
    const EXP: [u8; 512] = TABLES.0;
    const LOG: [u8; 256] = TABLES.1;

    #[inline]
    pub fn mul(a: u8, b: u8) -> u8 {
        if a == 0 || b == 0 {
            0
        } else {
            EXP[LOG[a as usize] as usize + LOG[b as usize] as usize]
        }
    }

    pub fn inv(a: u8) -> u8 {
        assert!(a != 0, "zero has no inverse");
        EXP[255 - LOG[a as usize] as usize]
    }

    /// Row `c` of the multiplication table: `x -> c * x`.
    pub fn mul_row(c: u8) -> [u8; 256] {
        let mut row = [0u8; 256];
        for (x, r) in row.iter_mut().enumerate() {
            *r = mul(c, x as u8);
        }
        row
    }

    /// Lagrange basis weights: value at `target` from values at `points`.
    pub fn lagrange_weights(points: &[u8], target: u8) -> Vec<u8> {
        points
            .iter()
            .enumerate()
            .map(|(m, &xm)| {
                let mut num = 1u8;
                let mut den = 1u8;
                for (j, &xj) in points.iter().enumerate() {
                    if j != m {
                        num = mul(num, target ^ xj);
                        den = mul(den, xm ^ xj);
                    }
                }
                mul(num, inv(den))
            })
            .collect()
    }
}

/// `L` pieces, any `K` of which reconstruct.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CodeParams {
    pub l: u16,
    pub k: u16,
}

impl CodeParams {
    pub fn new(l: usize, k: usize) -> Result<Self, ErasureError> {
        if k == 0 || k > l || l > 255 {
            return Err(ErasureError::InvalidParams(format!("need 1 <= K <= L <= 255, got L={l} K={k}")));
        }
        Ok(CodeParams { l: l as u16, k: k as u16 })
    }

    /// `L = h⌈ln n⌉`, `K = (h-2)⌈ln n⌉`.
    pub fn for_committee(h: usize, log_n: usize) -> Result<Self, ErasureError> {
        if h < 3 {
            return Err(ErasureError::InvalidParams(format!("erasure mode needs h >= 3, got {h}")));
        }
        Self::new(h * log_n, (h - 2) * log_n)
    }

    pub fn piece_len(&self, payload_len: usize) -> usize {
        payload_len.div_ceil(self.k as usize)
    }
}

/// Bytes of the wire header: item id, index, L, K, payload length.
pub const HEADER_LEN: usize = 32 + 2 + 2 + 2 + 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Piece {
    pub item_id: ItemId,
    pub index: u16,
    pub params: CodeParams,
    pub payload_len: u64,
    pub data: Vec<u8>,
}

impl Piece {
    /// Header followed by data; integers little-endian.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len());
        out.extend_from_slice(&self.item_id.0);
        out.extend_from_slice(&self.index.to_le_bytes());
        out.extend_from_slice(&self.params.l.to_le_bytes());
        out.extend_from_slice(&self.params.k.to_le_bytes());
        out.extend_from_slice(&self.payload_len.to_le_bytes());
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ErasureError> {
        if bytes.len() < HEADER_LEN {
            return Err(ErasureError::Malformed("short header".into()));
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let mut id = [0u8; 32];
        id.copy_from_slice(&bytes[..32]);
        let index = u16_at(32);
        let params = CodeParams::new(u16_at(34) as usize, u16_at(36) as usize)
            .map_err(|e| ErasureError::Malformed(e.to_string()))?;
        let payload_len = u64::from_le_bytes(bytes[38..46].try_into().unwrap());
        let data = bytes[HEADER_LEN..].to_vec();
        if index >= params.l || data.len() != params.piece_len(payload_len as usize) {
            return Err(ErasureError::Malformed("index or length out of range".into()));
        }
        Ok(Piece { item_id: ItemId(id), index, params, payload_len, data })
    }

    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.data.len()
    }
}

/// Splits `payload` into `L` pieces of `⌈|payload|/K⌉` bytes each.
pub fn disperse(payload: &[u8], params: CodeParams) -> Result<Vec<Piece>, ErasureError> {
    if payload.is_empty() {
        return Err(ErasureError::InvalidParams("empty payload".into()));
    }
    CodeParams::new(params.l as usize, params.k as usize)?;
    let k = params.k as usize;
    let l = params.l as usize;
    let len = params.piece_len(payload.len());
    let item_id = ItemId::of_payload(payload);
    // Systematic part: piece i < K holds bytes i, i+K, i+2K, ... (zero padded).
    let mut data: Vec<Vec<u8>> = vec![vec![0u8; len]; l];
    for (pos, &b) in payload.iter().enumerate() {
        data[pos % k][pos / k] = b;
    }
    let points: Vec<u8> = (0..k as u8).collect();
    let (systematic, parity) = data.split_at_mut(k);
    for (i, out) in parity.iter_mut().enumerate().map(|(i, o)| (i + k, o)) {
        let weights = gf::lagrange_weights(&points, i as u8);
        for (m, &w) in weights.iter().enumerate() {
            let row = gf::mul_row(w);
            for (o, &s) in out.iter_mut().zip(&systematic[m]) {
                *o ^= row[s as usize];
            }
        }
    }
    Ok(data
        .into_iter()
        .enumerate()
        .map(|(i, d)| Piece { item_id, index: i as u16, params, payload_len: payload.len() as u64, data: d })
        .collect())
}

/// Rebuilds the payload from any `K` distinct pieces and checks its hash.
pub fn reconstruct<'a>(pieces: impl IntoIterator<Item = &'a Piece>) -> Result<Vec<u8>, ErasureError> {
    let mut chosen: Vec<&Piece> = Vec::new();
    let mut first: Option<&Piece> = None;
    for p in pieces {
        match first {
            None => first = Some(p),
            Some(f) => {
                if f.item_id != p.item_id || f.params != p.params || f.payload_len != p.payload_len {
                    return Err(ErasureError::Inconsistent);
                }
            }
        }
        if !chosen.iter().any(|c| c.index == p.index) {
            chosen.push(p);
        }
    }
    let Some(first) = first else {
        return Err(ErasureError::NotEnoughPieces { have: 0, need: 1 });
    };
    let k = first.params.k as usize;
    if chosen.len() < k {
        return Err(ErasureError::NotEnoughPieces { have: chosen.len(), need: k });
    }
    chosen.truncate(k);
    let len = first.params.piece_len(first.payload_len as usize);
    if chosen.iter().any(|p| p.data.len() != len) {
        return Err(ErasureError::Inconsistent);
    }
    let points: Vec<u8> = chosen.iter().map(|p| p.index as u8).collect();
    let total = first.payload_len as usize;
    let mut payload = vec![0u8; len * k];
    for j in 0..k {
        let column: Vec<u8> = if let Some(p) = chosen.iter().find(|p| p.index as usize == j) {
            p.data.clone()
        } else {
            let mut acc = vec![0u8; len];
            for (m, w) in gf::lagrange_weights(&points, j as u8).into_iter().enumerate() {
                let row = gf::mul_row(w);
                for (o, &s) in acc.iter_mut().zip(&chosen[m].data) {
                    *o ^= row[s as usize];
                }
            }
            acc
        };
        for (c, &b) in column.iter().enumerate() {
            payload[c * k + j] = b;
        }
    }
    payload.truncate(total);
    if !first.item_id.matches(&payload) {
        return Err(ErasureError::HashMismatch);
    }
    Ok(payload)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes(n: usize, seed: u32) -> Vec<u8> {
        (0..n as u32).map(|i| (i.wrapping_mul(2654435761).wrapping_add(seed) >> 13) as u8).collect()
    }

    #[test]
    fn field_inverse() {
        for a in 1..=255u8 {
            assert_eq!(gf::mul(a, gf::inv(a)), 1);
        }
    }

    #[test]
    fn k_one_repeats_payload() {
        let p = bytes(37, 1);
        let pieces = disperse(&p, CodeParams::new(5, 1).unwrap()).unwrap();
        for piece in &pieces {
            assert_eq!(piece.data, p);
            assert_eq!(reconstruct([piece]).unwrap(), p);
        }
    }

    #[test]
    fn k_equal_l_is_a_partition() {
        let p = bytes(40, 2);
        let pieces = disperse(&p, CodeParams::new(4, 4).unwrap()).unwrap();
        let mut all: Vec<u8> = Vec::new();
        for c in 0..10 {
            for piece in &pieces {
                all.push(piece.data[c]);
            }
        }
        assert_eq!(all, p);
        assert!(matches!(
            reconstruct(&pieces[..3]),
            Err(ErasureError::NotEnoughPieces { have: 3, need: 4 })
        ));
    }

    #[test]
    fn flipped_byte_is_detected() {
        let p = bytes(100, 3);
        let mut pieces = disperse(&p, CodeParams::new(6, 3).unwrap()).unwrap();
        pieces[4].data[0] ^= 1;
        assert_eq!(reconstruct(&pieces[2..5]), Err(ErasureError::HashMismatch));
    }

    #[test]
    fn wire_round_trip() {
        let p = bytes(21, 4);
        let pieces = disperse(&p, CodeParams::new(7, 3).unwrap()).unwrap();
        let enc = pieces[5].encode();
        assert_eq!(enc.len(), HEADER_LEN + 7);
        assert_eq!(Piece::decode(&enc).unwrap(), pieces[5]);
        assert!(Piece::decode(&enc[..10]).is_err());
    }

    #[test]
    fn params() {
        assert!(CodeParams::new(3, 4).is_err());
        assert!(CodeParams::new(256, 4).is_err());
        assert!(CodeParams::for_committee(2, 7).is_err());
        assert_eq!(CodeParams::for_committee(4, 7).unwrap(), CodeParams { l: 28, k: 14 });
        assert!(disperse(&[], CodeParams::new(2, 1).unwrap()).is_err());
    }
}
