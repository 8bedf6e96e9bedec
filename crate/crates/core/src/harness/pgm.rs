//! Binary PGM (P5, 8-bit) reader/writer for grayscale image I/O. Pixels map
//! to unit range by v/255; writing quantizes with round-half-up and the byte
//! payload round-trips exactly.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub fn encode_pgm(img: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match img.shape() {
        [h, w] => (*h, *w),
        other => {
            return Err(Error::InvalidShape(format!(
                "PGM wants a 2-d image, got {other:?}"
            )))
        }
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for &v in img.data() {
        out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    Ok(out)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor> {
    let mut cursor = 0usize;
    let magic = take_token(bytes, &mut cursor)?;
    if magic != b"P5" {
        return Err(Error::Format(format!(
            "unsupported PGM magic {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let w: usize = parse_token(bytes, &mut cursor)?;
    let h: usize = parse_token(bytes, &mut cursor)?;
    let maxval: usize = parse_token(bytes, &mut cursor)?;
    if maxval != 255 {
        return Err(Error::Format(format!(
            "only 8-bit PGM supported, maxval {maxval}"
        )));
    }
    if w == 0 || h == 0 {
        return Err(Error::Format("zero-sized PGM".to_string()));
    }
    // Exactly one whitespace byte separates the header from the payload.
    cursor += 1;
    let need = w * h;
    let payload = bytes
        .get(cursor..cursor + need)
        .ok_or_else(|| Error::Format(format!("PGM payload truncated: need {need} bytes")))?;
    let data: Vec<f64> = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    Tensor::from_vec(&[h, w], data)
}

fn skip_ws_and_comments(bytes: &[u8], cursor: &mut usize) {
    loop {
        while *cursor < bytes.len() && bytes[*cursor].is_ascii_whitespace() {
            *cursor += 1;
        }
        if *cursor < bytes.len() && bytes[*cursor] == b'#' {
            while *cursor < bytes.len() && bytes[*cursor] != b'\n' {
                *cursor += 1;
            }
        } else {
            return;
        }
    }
}

fn take_token<'a>(bytes: &'a [u8], cursor: &mut usize) -> Result<&'a [u8]> {
    skip_ws_and_comments(bytes, cursor);
    let start = *cursor;
    while *cursor < bytes.len() && !bytes[*cursor].is_ascii_whitespace() {
        *cursor += 1;
    }
    if start == *cursor {
        return Err(Error::Format("unexpected end of PGM header".to_string()));
    }
    Ok(&bytes[start..*cursor])
}

fn parse_token(bytes: &[u8], cursor: &mut usize) -> Result<usize> {
    let tok = take_token(bytes, cursor)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| {
            Error::Format(format!(
                "bad PGM header token {:?}",
                String::from_utf8_lossy(tok)
            ))
        })
}

pub fn write_pgm_file(path: &Path, img: &Tensor) -> Result<()> {
    std::fs::write(path, encode_pgm(img)?)?;
    Ok(())
}

pub fn read_pgm_file(path: &Path) -> Result<Tensor> {
    decode_pgm(&std::fs::read(path)?)
}
