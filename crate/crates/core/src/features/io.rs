//! FMAP files: `"FMAP"`, then version, H, W, C as u32 LE, then H*W*C f32 LE
//! values in pixel-major, channel-minor order.

use std::path::Path;

use super::FeatureMap;
use crate::error::{Error, Result};

pub const FMAP_MAGIC: &[u8; 4] = b"FMAP";
pub const FMAP_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

fn fail(position: usize, message: impl Into<String>) -> Error {
    Error::Format {
        kind: "fmap",
        position: position as u64,
        message: message.into(),
    }
}

pub fn encode_fmap(fmap: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + fmap.data.len() * 4);
    out.extend_from_slice(FMAP_MAGIC);
    for v in [FMAP_VERSION, fmap.height as u32, fmap.width as u32, fmap.channels as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &fmap.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_fmap(bytes: &[u8]) -> Result<FeatureMap> {
    if bytes.len() < 4 || &bytes[..4] != FMAP_MAGIC {
        return Err(fail(0, "bad magic"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), "truncated header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != FMAP_VERSION {
        return Err(fail(4, format!("unsupported version {version}")));
    }
    let (h, w, c) = (word(1) as usize, word(2) as usize, word(3) as usize);
    if h == 0 || w == 0 || c == 0 {
        return Err(fail(8, "zero dims"));
    }
    let need = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| fail(8, "dimensions overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < need {
        return Err(fail(bytes.len(), "truncated payload"));
    }
    if payload.len() > need {
        return Err(fail(HEADER_LEN + need, "trailing bytes after payload"));
    }
    let mut data = Vec::with_capacity(need / 4);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(fail(HEADER_LEN + 4 * i, "non-finite value"));
        }
        data.push(v);
    }
    FeatureMap::new(h, w, c, data)
}

pub fn save_fmap(path: &Path, fmap: &FeatureMap) -> Result<()> {
    std::fs::write(path, encode_fmap(fmap)).map_err(|e| Error::io(path, e))
}

pub fn load_fmap(path: &Path) -> Result<FeatureMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_fmap(&bytes).map_err(|e| match e {
        Error::Format { kind, position, message } => Error::Format {
            kind,
            position,
            message: format!("{message} in {}", path.display()),
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> FeatureMap {
        FeatureMap::new(2, 3, 4, (0..24).map(|i| i as f32 * 0.25 - 1.0).collect()).unwrap()
    }

    fn position(e: Error) -> (u64, String) {
        match e {
            Error::Format { position, message, .. } => (position, message),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn crafted_corruptions_rejected() {
        let good = encode_fmap(&sample());

        let mut bad_magic = good.clone();
        bad_magic[1] = b'X';
        assert_eq!(position(decode_fmap(&bad_magic).unwrap_err()), (0, "bad magic".into()));

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert_eq!(position(decode_fmap(&bad_version).unwrap_err()).0, 4);

        assert_eq!(position(decode_fmap(&good[..10]).unwrap_err()).1, "truncated header");

        let short = &good[..good.len() - 3];
        assert_eq!(position(decode_fmap(short).unwrap_err()).1, "truncated payload");

        let mut zero = good.clone();
        zero[16..20].copy_from_slice(&0u32.to_le_bytes());
        assert_eq!(position(decode_fmap(&zero).unwrap_err()).1, "zero dims");

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(decode_fmap(&trailing).is_err());

        let mut nan = good;
        nan[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(position(decode_fmap(&nan).unwrap_err()).0, 24);
    }

    #[test]
    fn file_round_trip_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.fmap");
        save_fmap(&p, &sample()).unwrap();
        assert_eq!(load_fmap(&p).unwrap(), sample());
        let e = load_fmap(&dir.path().join("nope.fmap")).unwrap_err();
        assert!(e.to_string().contains("nope.fmap"));
    }

    proptest! {
        #[test]
        fn round_trip_is_byte_exact(h in 1usize..6, w in 1usize..6, c in 1usize..5, seed in any::<u32>()) {
            let data: Vec<f32> = (0..h * w * c)
                .map(|i| f32::from_bits((seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 40503)) & 0x3fff_ffff))
                .collect();
            let m = FeatureMap::new(h, w, c, data).unwrap();
            let bytes = encode_fmap(&m);
            let back = decode_fmap(&bytes).unwrap();
            prop_assert_eq!(encode_fmap(&back), bytes);
            prop_assert_eq!(back, m);
        }
    }
}
