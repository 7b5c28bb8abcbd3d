use std::path::Path;

use ndarray::Array2;

use crate::error::Result;

/// Binary PGM (P5, maxval 255), row-major.
pub fn encode_pgm(pixels: &Array2<u8>) -> Vec<u8> {
    let (rows, cols) = pixels.dim();
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.reserve(rows * cols);
    out.extend(pixels.iter().copied());
    out
}

pub fn write_pgm(pixels: &Array2<u8>, path: impl AsRef<Path>) -> Result<()> {
    super::manifest::write_file(path.as_ref(), &encode_pgm(pixels))
}
