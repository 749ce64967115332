//! Big-endian IDX image/label files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Images flattened to rows of `rows * cols` pixels in [0, 1], with aligned
/// class labels.
#[derive(Clone, Debug)]
pub struct ImageDataset {
    pub images: Tensor2,
    pub labels: Vec<usize>,
    pub image_rows: usize,
    pub image_cols: usize,
}

impl ImageDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The first `n` samples.
    pub fn take(&self, n: usize) -> ImageDataset {
        let n = n.min(self.len());
        let indices: Vec<usize> = (0..n).collect();
        ImageDataset {
            images: self.images.gather_rows(&indices),
            labels: self.labels[..n].to_vec(),
            image_rows: self.image_rows,
            image_cols: self.image_cols,
        }
    }
}

fn idx_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Idx {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn read_pixels(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let file = File::open(path)?;
    let mut reader = BufReader::new(file);
    let magic = reader
        .read_u32::<BigEndian>()
        .map_err(|_| idx_error(path, "truncated header"))?;
    if magic != IMAGE_MAGIC {
        return Err(idx_error(
            path,
            format!("unexpected magic {magic:#010x}, want {IMAGE_MAGIC:#010x}"),
        ));
    }
    let n = reader
        .read_u32::<BigEndian>()
        .map_err(|_| idx_error(path, "truncated header"))? as usize;
    let rows = reader
        .read_u32::<BigEndian>()
        .map_err(|_| idx_error(path, "truncated header"))? as usize;
    let cols = reader
        .read_u32::<BigEndian>()
        .map_err(|_| idx_error(path, "truncated header"))? as usize;
    let mut pixels = vec![0u8; n * rows * cols];
    reader
        .read_exact(&mut pixels)
        .map_err(|_| idx_error(path, format!("truncated pixel data, want {} bytes", n * rows * cols)))?;
    Ok((n, rows, cols, pixels))
}

fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path)?;
    let mut reader = BufReader::new(file);
    let magic = reader
        .read_u32::<BigEndian>()
        .map_err(|_| idx_error(path, "truncated header"))?;
    if magic != LABEL_MAGIC {
        return Err(idx_error(
            path,
            format!("unexpected magic {magic:#010x}, want {LABEL_MAGIC:#010x}"),
        ));
    }
    let n = reader
        .read_u32::<BigEndian>()
        .map_err(|_| idx_error(path, "truncated header"))? as usize;
    let mut labels = vec![0u8; n];
    reader
        .read_exact(&mut labels)
        .map_err(|_| idx_error(path, format!("truncated label data, want {n} bytes")))?;
    Ok(labels)
}

/// Load an aligned image/label pair of IDX files. Pixels are scaled to
/// [0, 1] by dividing by 255.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<ImageDataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let (n, rows, cols, pixels) = read_pixels(images_path)?;
    let labels = read_labels(labels_path)?;
    if labels.len() != n {
        return Err(idx_error(
            labels_path,
            format!("label count {} does not match image count {n}", labels.len()),
        ));
    }
    let data: Vec<f64> = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    Ok(ImageDataset {
        images: Tensor2::from_vec(n, rows * cols, data)?,
        labels: labels.into_iter().map(usize::from).collect(),
        image_rows: rows,
        image_cols: cols,
    })
}

/// Write images (bytes) and labels as a pair of IDX files.
pub fn write_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    pixels: &[u8],
    labels: &[u8],
    rows: usize,
    cols: usize,
) -> Result<()> {
    let n = labels.len();
    if pixels.len() != n * rows * cols {
        return Err(Error::shape(
            "write_idx",
            format!("{} pixel bytes", n * rows * cols),
            format!("{}", pixels.len()),
        ));
    }
    let mut w = BufWriter::new(File::create(images_path)?);
    w.write_u32::<BigEndian>(IMAGE_MAGIC)?;
    w.write_u32::<BigEndian>(n as u32)?;
    w.write_u32::<BigEndian>(rows as u32)?;
    w.write_u32::<BigEndian>(cols as u32)?;
    w.write_all(pixels)?;
    w.flush()?;

    let mut w = BufWriter::new(File::create(labels_path)?);
    w.write_u32::<BigEndian>(LABEL_MAGIC)?;
    w.write_u32::<BigEndian>(n as u32)?;
    w.write_all(labels)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lbl = dir.path().join("lbl");
        let pixels: Vec<u8> = (0..2 * 4).map(|i| (i * 37 % 256) as u8).collect();
        let labels = vec![3u8, 9];
        write_idx(&img, &lbl, &pixels, &labels, 2, 2).unwrap();
        let ds = load_idx(&img, &lbl).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels, vec![3, 9]);
        let back: Vec<u8> = ds
            .images
            .data()
            .iter()
            .map(|&v| (v * 255.0).round() as u8)
            .collect();
        assert_eq!(back, pixels);
        // and the files themselves match a rewrite exactly
        let img2 = dir.path().join("img2");
        let lbl2 = dir.path().join("lbl2");
        write_idx(&img2, &lbl2, &back, &labels, 2, 2).unwrap();
        assert_eq!(std::fs::read(&img).unwrap(), std::fs::read(&img2).unwrap());
        assert_eq!(std::fs::read(&lbl).unwrap(), std::fs::read(&lbl2).unwrap());
    }

    #[test]
    fn all_255_loads_as_ones() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lbl = dir.path().join("lbl");
        write_idx(&img, &lbl, &[255u8; 4], &[0u8], 2, 2).unwrap();
        let ds = load_idx(&img, &lbl).unwrap();
        assert!(ds.images.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn wrong_magic_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lbl = dir.path().join("lbl");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&0x0000_0802u32.to_be_bytes());
        bytes.extend_from_slice(&1u32.to_be_bytes());
        std::fs::write(&img, &bytes).unwrap();
        write_idx(dir.path().join("ok"), &lbl, &[0u8; 4], &[0u8], 2, 2).unwrap();
        let err = load_idx(&img, &lbl).unwrap_err();
        assert!(err.to_string().contains("unexpected magic"), "{err}");
    }

    #[test]
    fn count_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lbl = dir.path().join("lbl");
        let lbl_other = dir.path().join("lbl_other");
        write_idx(&img, &lbl, &[0u8; 8], &[0u8, 1], 2, 2).unwrap();
        write_idx(dir.path().join("img_other"), &lbl_other, &[0u8; 4], &[0u8], 2, 2).unwrap();
        let err = load_idx(&img, &lbl_other).unwrap_err();
        assert!(err.to_string().contains("does not match"), "{err}");
    }

    #[test]
    fn truncated_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lbl = dir.path().join("lbl");
        write_idx(&img, &lbl, &[7u8; 8], &[0u8, 1], 2, 2).unwrap();
        let mut bytes = std::fs::read(&img).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&img, &bytes).unwrap();
        let err = load_idx(&img, &lbl).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }
}
