//! Binary raster formats: PPM (P6) for RGB frames, PGM (P5) for class-id
//! rasters. Dependency-free and bit-exact.

use std::path::Path;

use thiserror::Error;

const MAX_DIM: usize = 4096;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected}, found {found:?}")]
    BadMagic { expected: &'static str, found: String },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("dimensions {0}x{1} out of range")]
    Dims(usize, usize),
    #[error("payload truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
}

pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), 3 * width * height);
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

pub fn encode_pgm(width: usize, height: usize, gray: &[u8]) -> Vec<u8> {
    assert_eq!(gray.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    out
}

/// Netpbm header scanner: skips whitespace and `#` comments, reads
/// ASCII integers.
struct HeaderScanner<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderScanner<'a> {
    fn new(bytes: &'a [u8], pos: usize) -> Self {
        HeaderScanner { bytes, pos }
    }

    fn skip_space(&mut self) -> Result<(), ImageError> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => return Ok(()),
                None => return Err(ImageError::Header("unexpected end of header".into())),
            }
        }
    }

    fn read_int(&mut self) -> Result<usize, ImageError> {
        self.skip_space()?;
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| b.is_ascii_digit())
        {
            self.pos += 1;
        }
        if self.pos == start || self.pos - start > 7 {
            return Err(ImageError::Header("expected integer".into()));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        text.parse()
            .map_err(|_| ImageError::Header("integer out of range".into()))
    }
}

fn decode_netpbm(
    bytes: &[u8],
    magic: &'static str,
    channels: usize,
) -> Result<(usize, usize, Vec<u8>), ImageError> {
    if bytes.len() < 2 || &bytes[..2] != magic.as_bytes() {
        return Err(ImageError::BadMagic {
            expected: magic,
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned(),
        });
    }
    let mut scan = HeaderScanner::new(bytes, 2);
    let width = scan.read_int()?;
    let height = scan.read_int()?;
    let maxval = scan.read_int()?;
    if maxval != 255 {
        return Err(ImageError::Header(format!("unsupported maxval {maxval}")));
    }
    if width == 0 || height == 0 || width > MAX_DIM || height > MAX_DIM {
        return Err(ImageError::Dims(width, height));
    }
    // exactly one whitespace byte separates header and payload
    match bytes.get(scan.pos) {
        Some(b) if b.is_ascii_whitespace() => scan.pos += 1,
        _ => return Err(ImageError::Header("missing payload separator".into())),
    }
    let need = channels * width * height;
    let have = bytes.len() - scan.pos;
    if have < need {
        return Err(ImageError::Truncated { need, have });
    }
    Ok((width, height, bytes[scan.pos..scan.pos + need].to_vec()))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), ImageError> {
    decode_netpbm(bytes, "P6", 3)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), ImageError> {
    decode_netpbm(bytes, "P5", 1)
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<(), ImageError> {
    std::fs::write(path, encode_ppm(width, height, rgb))?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>), ImageError> {
    decode_ppm(&std::fs::read(path)?)
}

pub fn write_pgm(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<(), ImageError> {
    std::fs::write(path, encode_pgm(width, height, gray))?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>), ImageError> {
    decode_pgm(&std::fs::read(path)?)
}

/// Channel-major [3,H,W] floats in [0,1] → interleaved RGB bytes.
pub fn chw_to_rgb8(chw: &[f32], width: usize, height: usize) -> Vec<u8> {
    let n = width * height;
    assert_eq!(chw.len(), 3 * n);
    let mut out = vec![0u8; 3 * n];
    for i in 0..n {
        for c in 0..3 {
            out[3 * i + c] = (chw[c * n + i].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    out
}

/// Interleaved RGB bytes → channel-major [3,H,W] floats in [0,1].
pub fn rgb8_to_chw(rgb: &[u8], width: usize, height: usize) -> Vec<f32> {
    let n = width * height;
    assert_eq!(rgb.len(), 3 * n);
    let mut out = vec![0.0f32; 3 * n];
    for i in 0..n {
        for c in 0..3 {
            out[c * n + i] = rgb[3 * i + c] as f32 / 255.0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ppm_roundtrip() {
        let rgb: Vec<u8> = (0..3 * 4 * 2).map(|i| (i * 7) as u8).collect();
        let bytes = encode_ppm(4, 2, &rgb);
        let (w, h, data) = decode_ppm(&bytes).unwrap();
        assert_eq!((w, h), (4, 2));
        assert_eq!(data, rgb);
    }

    #[test]
    fn pgm_roundtrip_with_comment() {
        let gray: Vec<u8> = (0..6).map(|i| i as u8 * 40).collect();
        let mut bytes = b"P5\n# synthetic raster\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&gray);
        let (w, h, data) = decode_pgm(&bytes).unwrap();
        assert_eq!((w, h), (3, 2));
        assert_eq!(data, gray);
    }

    #[test]
    fn bad_magic_reported() {
        assert!(matches!(
            decode_ppm(b"P5\n1 1\n255\nx"),
            Err(ImageError::BadMagic { .. })
        ));
    }

    #[test]
    fn truncated_payload_reported() {
        let bytes = b"P6\n2 2\n255\nabc".to_vec();
        assert!(matches!(
            decode_ppm(&bytes),
            Err(ImageError::Truncated { .. })
        ));
    }

    #[test]
    fn oversized_dims_rejected() {
        let bytes = format!("P5\n{} 1\n255\n", MAX_DIM + 1).into_bytes();
        assert!(matches!(decode_pgm(&bytes), Err(ImageError::Dims(..))));
    }

    #[test]
    fn chw_conversion_roundtrip() {
        let rgb: Vec<u8> = (0..3 * 5 * 3).map(|i| (i * 11) as u8).collect();
        let chw = rgb8_to_chw(&rgb, 5, 3);
        let back = chw_to_rgb8(&chw, 5, 3);
        assert_eq!(back, rgb);
    }

    proptest! {
        #[test]
        fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = decode_ppm(&bytes);
            let _ = decode_pgm(&bytes);
        }

        #[test]
        fn encode_decode_is_identity(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
            let n = 3 * w * h;
            let rgb: Vec<u8> = (0..n).map(|i| ((i as u64).wrapping_mul(seed >> 1 | 1) >> 3) as u8).collect();
            let (dw, dh, data) = decode_ppm(&encode_ppm(w, h, &rgb)).unwrap();
            prop_assert_eq!((dw, dh), (w, h));
            prop_assert_eq!(data, rgb);
        }
    }
}
