use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Shape;

pub const CIFAR_SIDE: usize = 32;
const PLANE: usize = CIFAR_SIDE * CIFAR_SIDE;
/// Coarse label, fine label, then R, G and B planes.
pub const CIFAR_RECORD_BYTES: usize = 2 + 3 * PLANE;
const FINE_CLASSES: usize = 100;

/// Reads a CIFAR-100 binary file (`train.bin` or `test.bin`).
pub fn load_cifar100(path: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    read_cifar100(&bytes, split)
}

/// Parses CIFAR-100 records from memory. Fine labels become the labels.
pub fn read_cifar100(bytes: &[u8], split: Split) -> Result<Dataset> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD_BYTES) {
        let n = (bytes.len() / CIFAR_RECORD_BYTES).max(1);
        return Err(Error::Format(format!(
            "CIFAR-100 file has {} bytes, expected a positive multiple of {CIFAR_RECORD_BYTES} (e.g. {})",
            bytes.len(),
            n * CIFAR_RECORD_BYTES
        )));
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut pixels = Vec::with_capacity(n * 3 * PLANE);
    let mut labels = Vec::with_capacity(n);
    let mut coarse = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let fine = usize::from(rec[1]);
        if fine >= FINE_CLASSES {
            return Err(Error::Format(format!(
                "record {i}: fine label {fine} is not below {FINE_CLASSES}"
            )));
        }
        coarse.push(rec[0]);
        labels.push(fine);
        pixels.extend_from_slice(&rec[2..]);
    }
    let shape = Shape::new(n, 3, CIFAR_SIDE, CIFAR_SIDE);
    Ok(Dataset::new(pixels, shape, labels, FINE_CLASSES, split)?.with_coarse(coarse))
}

/// Writes `data` in CIFAR-100 binary layout. Images must be 3x32x32 and
/// labels below 100; missing coarse labels are written as 0.
pub fn write_cifar100<W: Write>(data: &Dataset, mut out: W) -> Result<()> {
    if data.image_shape() != Shape::new(1, 3, CIFAR_SIDE, CIFAR_SIDE) {
        return Err(Error::Format(format!(
            "CIFAR-100 images are (3, 32, 32), dataset has {}",
            data.image_shape()
        )));
    }
    if let Some(bad) = data.labels().iter().find(|&&l| l >= FINE_CLASSES) {
        return Err(Error::Format(format!("label {bad} does not fit CIFAR-100")));
    }
    let per = 3 * PLANE;
    let mut rec = vec![0u8; CIFAR_RECORD_BYTES];
    for (i, img) in data.pixels().chunks_exact(per).enumerate() {
        rec[0] = data.coarse_labels().map_or(0, |c| c[i]);
        rec[1] = data.labels()[i] as u8;
        rec[2..].copy_from_slice(img);
        out.write_all(&rec)?;
    }
    Ok(())
}
