//! Purchaser-identity watermarks in the least-significant bit plane.
//!
//! Layout, each byte most-significant bit first into successive sample
//! LSBs in row-major, channel-interleaved order:
//!
//! ```text
//! "WM01" | identity length (u16, big-endian) | identity (UTF-8) | CRC-32 of identity (u32, big-endian)
//! ```

use thiserror::Error;

use crate::imaging::{GrayImage, Raster};

pub const MAGIC: [u8; 4] = *b"WM01";

/// Bits used by the payload framing around the identity bytes.
pub const OVERHEAD_BITS: usize = (4 + 2 + 4) * 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WatermarkError {
    #[error("payload needs {needed} bits but the image holds {available}")]
    Capacity { needed: usize, available: usize },
    #[error("identity is {0} bytes; at most 65535 fit the length field")]
    IdentityTooLong(usize),
}

/// Bits needed to carry `identity`.
pub fn payload_bits(identity: &str) -> usize {
    OVERHEAD_BITS + identity.len() * 8
}

fn payload(identity: &str) -> Result<Vec<u8>, WatermarkError> {
    let id = identity.as_bytes();
    let len = u16::try_from(id.len()).map_err(|_| WatermarkError::IdentityTooLong(id.len()))?;
    let mut out = Vec::with_capacity(10 + id.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(id);
    out.extend_from_slice(&crc32fast::hash(id).to_be_bytes());
    Ok(out)
}

/// Writes the payload into the LSBs of `samples`. Nothing is written when
/// capacity is insufficient.
pub fn embed_samples(samples: &mut [u8], identity: &str) -> Result<(), WatermarkError> {
    let bytes = payload(identity)?;
    let needed = bytes.len() * 8;
    if needed > samples.len() {
        return Err(WatermarkError::Capacity {
            needed,
            available: samples.len(),
        });
    }
    let bits = bytes.iter().flat_map(|&b| (0..8).rev().map(move |i| (b >> i) & 1));
    for (s, bit) in samples.iter_mut().zip(bits) {
        *s = (*s & !1) | bit;
    }
    Ok(())
}

fn read_bytes(samples: &[u8], bit_offset: usize, count: usize) -> Option<Vec<u8>> {
    let end = bit_offset.checked_add(count.checked_mul(8)?)?;
    let bits = samples.get(bit_offset..end)?;
    Some(
        bits.chunks_exact(8)
            .map(|byte| byte.iter().fold(0u8, |acc, s| (acc << 1) | (s & 1)))
            .collect(),
    )
}

/// Recovers the identity, or `None` when no valid payload is present.
pub fn extract_samples(samples: &[u8]) -> Option<String> {
    let head = read_bytes(samples, 0, 6)?;
    if head[..4] != MAGIC {
        return None;
    }
    let len = u16::from_be_bytes([head[4], head[5]]) as usize;
    let body = read_bytes(samples, 48, len + 4)?;
    let (id, crc) = body.split_at(len);
    if crc32fast::hash(id).to_be_bytes() != crc {
        return None;
    }
    String::from_utf8(id.to_vec()).ok()
}

/// Watermarked copy of a raster.
pub fn embed(raster: &Raster, identity: &str) -> Result<Raster, WatermarkError> {
    let mut out = raster.clone();
    embed_samples(&mut out.samples, identity)?;
    Ok(out)
}

pub fn embed_gray(image: &GrayImage, identity: &str) -> Result<GrayImage, WatermarkError> {
    let mut pixels = image.pixels().to_vec();
    embed_samples(&mut pixels, identity)?;
    Ok(GrayImage::new(image.width(), image.height(), pixels).expect("same dimensions"))
}

pub fn extract(raster: &Raster) -> Option<String> {
    extract_samples(&raster.samples)
}

pub fn extract_gray(image: &GrayImage) -> Option<String> {
    extract_samples(image.pixels())
}

/// Decodes PGM/PNG bytes and extracts; undecodable input yields `None`.
pub fn extract_from_bytes(bytes: &[u8]) -> Option<String> {
    crate::imaging::decode(bytes).ok().and_then(|(r, _)| extract(&r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| rng.random())
    }

    #[test]
    fn round_trip_alice() {
        let img = noise(16, 16, 1);
        let marked = embed_gray(&img, "alice").unwrap();
        assert_eq!(extract_gray(&marked).as_deref(), Some("alice"));
        for (a, b) in img.pixels().iter().zip(marked.pixels()) {
            assert!(a.abs_diff(*b) <= 1);
            assert_eq!(a & !1, b & !1);
        }
    }

    #[test]
    fn exact_bit_layout() {
        let mut samples = vec![0u8; 80];
        embed_samples(&mut samples, "").unwrap();
        let bits: String = samples.iter().map(|s| if s & 1 == 1 { '1' } else { '0' }).collect();
        // 'W' = 0x57
        assert_eq!(&bits[..8], "01010111");
        // 'M' '0' '1'
        assert_eq!(&bits[8..32], "010011010011000000110001");
        // zero length, then the CRC of the empty string (0)
        assert!(bits[32..80].chars().all(|c| c == '0'));
        assert_eq!(extract_samples(&samples).as_deref(), Some(""));
    }

    #[test]
    fn tiny_image_has_no_capacity() {
        let img = GrayImage::zeros(2, 2);
        assert_eq!(
            embed_gray(&img, "a").unwrap_err(),
            WatermarkError::Capacity { needed: 88, available: 4 }
        );
        // no partial write
        let mut samples = vec![0u8; 87];
        assert!(embed_samples(&mut samples, "a").is_err());
        assert!(samples.iter().all(|&s| s == 0));
        embed_samples(&mut [0u8; 88], "a").unwrap();
    }

    #[test]
    fn unmarked_image_reads_absent() {
        assert_eq!(extract_gray(&GrayImage::zeros(32, 32)), None);
        assert_eq!(extract_samples(&[]), None);
        assert_eq!(extract_from_bytes(b"not an image"), None);
    }

    #[test]
    fn every_single_bit_flip_is_detected() {
        let img = noise(16, 16, 7);
        let id = "bob@example";
        let marked = embed_gray(&img, id).unwrap();
        for bit in 0..payload_bits(id) {
            let mut px = marked.pixels().to_vec();
            px[bit] ^= 1;
            let got = extract_samples(&px);
            assert_ne!(got.as_deref(), Some(id), "flip at bit {bit} went unnoticed");
        }
    }

    #[test]
    fn colour_raster_uses_every_channel_sample() {
        let raster = Raster::new(8, 4, 3, vec![200; 96]).unwrap();
        let marked = embed(&raster, "x").unwrap();
        assert_eq!(extract(&marked).as_deref(), Some("x"));
        assert_eq!(marked.samples[..8], [200, 201, 200, 201, 200, 201, 201, 201]);
    }

    proptest! {
        #[test]
        fn round_trip_random(seed: u64, id in "\\PC{0,24}", extra in 0usize..64) {
            let needed = payload_bits(&id) + extra;
            let w = 16;
            let h = needed.div_ceil(w).max(1);
            let img = noise(w, h, seed);
            let marked = embed_gray(&img, &id).unwrap();
            prop_assert_eq!(extract_gray(&marked), Some(id));
            for (a, b) in img.pixels().iter().zip(marked.pixels()) {
                prop_assert_eq!(a >> 1, b >> 1);
            }
        }

        #[test]
        fn extract_is_total(samples in proptest::collection::vec(any::<u8>(), 0..512)) {
            let _ = extract_samples(&samples);
        }
    }

    #[test]
    fn random_images_are_nearly_never_marked() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let px: Vec<u8> = (0..256).map(|_| rng.random()).collect();
            assert_eq!(extract_samples(&px), None);
        }
    }
}
