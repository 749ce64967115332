//! Binary PGM (P5) export of decoded map tiles.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use somvae::Tensor2;

use crate::checkpoint::Checkpoint;
use crate::error::{CliError, Result};

/// Clamp to [0, 1], scale to [0, 255], round half up.
fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_pgm(path: impl AsRef<Path>, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    if bytes.len() != width * height {
        return Err(CliError::Run(format!(
            "PGM payload is {} bytes, expected {}",
            bytes.len(),
            width * height
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

/// Decode every map node of a checkpoint to an image tile named
/// `r{row}_c{col}.pgm`, plus a single `montage.pgm` laid out in grid order.
pub fn export_map_images(ckpt: &Checkpoint, out_dir: impl AsRef<Path>) -> Result<Vec<String>> {
    let (ir, ic) = (ckpt.image_rows, ckpt.image_cols);
    let decoded = ckpt.model.export_map_reconstructions().map_err(CliError::Core)?;
    if ir * ic == 0 || decoded.cols() != ir * ic {
        return Err(CliError::Run(format!(
            "decoder output dim {} is not the stored image shape {}x{}",
            decoded.cols(),
            ir,
            ic
        )));
    }
    std::fs::create_dir_all(out_dir.as_ref())?;
    let grid = &ckpt.model.grid;
    let mut written = Vec::new();
    for node in 0..grid.node_count() {
        let coord = grid.coord(node);
        let bytes: Vec<u8> = decoded.row(node).iter().map(|&v| to_byte(v)).collect();
        let name = format!("r{}_c{}.pgm", coord.row, coord.col);
        write_pgm(out_dir.as_ref().join(&name), ic, ir, &bytes)?;
        written.push(name);
    }

    let montage_w = grid.width() * ic;
    let montage_h = grid.height() * ir;
    let mut montage = vec![0u8; montage_w * montage_h];
    for node in 0..grid.node_count() {
        let coord = grid.coord(node);
        for py in 0..ir {
            for px in 0..ic {
                let v = to_byte(decoded.get(node, py * ic + px));
                let y = coord.row * ir + py;
                let x = coord.col * ic + px;
                montage[y * montage_w + x] = v;
            }
        }
    }
    write_pgm(out_dir.as_ref().join("montage.pgm"), montage_w, montage_h, &montage)?;
    written.push("montage.pgm".to_string());
    Ok(written)
}

/// Decode helper used by tests: raw tile matrix in grid order.
pub fn decoded_tiles(ckpt: &Checkpoint) -> Result<Tensor2> {
    ckpt.model.export_map_reconstructions().map_err(CliError::Core)
}
