//! Model checkpoints (binary) and the text export formats for grids and
//! transition matrices.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use somvae::{
    Activation, LossWeights, Mlp, ModelVariant, OutputActivation, SomGrid, SomVae, Tensor2,
    TransitionModel,
};

use crate::error::{CliError, Result};

const MAGIC: &[u8; 4] = b"SVAE";
const VERSION: u32 = 1;

/// A trained model plus the context needed to reuse it.
pub struct Checkpoint {
    pub model: SomVae,
    pub seed: u64,
    /// Image shape of the decoder output when the model was trained on
    /// images, (0, 0) otherwise.
    pub image_rows: usize,
    pub image_cols: usize,
}

fn write_tensor(w: &mut impl Write, t: &Tensor2) -> Result<()> {
    w.write_u32::<LittleEndian>(t.rows() as u32)?;
    w.write_u32::<LittleEndian>(t.cols() as u32)?;
    for &v in t.data() {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_tensor(r: &mut impl Read) -> Result<Tensor2> {
    let rows = r.read_u32::<LittleEndian>()? as usize;
    let cols = r.read_u32::<LittleEndian>()? as usize;
    let mut data = vec![0.0; rows * cols];
    for v in &mut data {
        *v = r.read_f64::<LittleEndian>()?;
    }
    Tensor2::from_vec(rows, cols, data).map_err(CliError::Core)
}

fn write_mlp(w: &mut impl Write, net: &Mlp) -> Result<()> {
    let dims = net.layer_dims();
    w.write_u32::<LittleEndian>(dims.len() as u32)?;
    for &d in dims {
        w.write_u32::<LittleEndian>(d as u32)?;
    }
    w.write_u8(match net.activation() {
        Activation::Relu => 0,
        Activation::Tanh => 1,
        Activation::Identity => 2,
    })?;
    w.write_u8(match net.output_activation() {
        OutputActivation::Identity => 0,
        OutputActivation::Sigmoid => 1,
    })?;
    for t in net.weights() {
        write_tensor(w, t)?;
    }
    for t in net.biases() {
        write_tensor(w, t)?;
    }
    Ok(())
}

fn read_mlp(r: &mut impl Read) -> Result<Mlp> {
    let n_dims = r.read_u32::<LittleEndian>()? as usize;
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        dims.push(r.read_u32::<LittleEndian>()? as usize);
    }
    let activation = match r.read_u8()? {
        0 => Activation::Relu,
        1 => Activation::Tanh,
        2 => Activation::Identity,
        other => return Err(CliError::Checkpoint(format!("bad activation tag {other}"))),
    };
    let output_activation = match r.read_u8()? {
        0 => OutputActivation::Identity,
        1 => OutputActivation::Sigmoid,
        other => return Err(CliError::Checkpoint(format!("bad output activation tag {other}"))),
    };
    if dims.len() == 1 {
        return Ok(Mlp::identity(dims[0]));
    }
    let n_layers = dims.len() - 1;
    let mut weights = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        weights.push(read_tensor(r)?);
    }
    let mut biases = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        biases.push(read_tensor(r)?);
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    use rand::SeedableRng;
    let mut net = Mlp::new(dims, activation, output_activation, &mut rng).map_err(CliError::Core)?;
    net.set_params(weights, biases).map_err(CliError::Core)?;
    Ok(net)
}

pub fn save(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u64::<LittleEndian>(ckpt.seed)?;
    w.write_u32::<LittleEndian>(ckpt.image_rows as u32)?;
    w.write_u32::<LittleEndian>(ckpt.image_cols as u32)?;

    let m = &ckpt.model;
    let v = &m.variant;
    for flag in [
        v.ze_reconstruction,
        v.grad_copy,
        v.use_som,
        v.identity_nets,
        v.use_prob_model,
    ] {
        w.write_u8(flag as u8)?;
    }
    for value in [m.weights.alpha, m.weights.beta, m.weights.gamma, m.weights.tau] {
        w.write_f64::<LittleEndian>(value)?;
    }
    write_mlp(&mut w, &m.encoder)?;
    write_mlp(&mut w, &m.decoder)?;
    // Grid: the 4-integer header then the embedding matrix.
    w.write_u32::<LittleEndian>(m.grid.height() as u32)?;
    w.write_u32::<LittleEndian>(m.grid.width() as u32)?;
    w.write_u32::<LittleEndian>(m.grid.dim() as u32)?;
    w.write_u32::<LittleEndian>(m.grid.node_count() as u32)?;
    for &v in m.grid.embeddings().data() {
        w.write_f64::<LittleEndian>(v)?;
    }
    match &m.transitions {
        Some(t) => {
            w.write_u8(1)?;
            write_tensor(&mut w, t.logits())?;
        }
        None => w.write_u8(0)?,
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path.as_ref())?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CliError::Checkpoint(format!(
            "{}: not a model checkpoint (bad magic)",
            path.as_ref().display()
        )));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(CliError::Checkpoint(format!("unsupported version {version}")));
    }
    let seed = r.read_u64::<LittleEndian>()?;
    let image_rows = r.read_u32::<LittleEndian>()? as usize;
    let image_cols = r.read_u32::<LittleEndian>()? as usize;

    let mut flags = [0u8; 5];
    r.read_exact(&mut flags)?;
    let variant = ModelVariant {
        ze_reconstruction: flags[0] != 0,
        grad_copy: flags[1] != 0,
        use_som: flags[2] != 0,
        identity_nets: flags[3] != 0,
        use_prob_model: flags[4] != 0,
    };
    let weights = LossWeights {
        alpha: r.read_f64::<LittleEndian>()?,
        beta: r.read_f64::<LittleEndian>()?,
        gamma: r.read_f64::<LittleEndian>()?,
        tau: r.read_f64::<LittleEndian>()?,
    };
    let encoder = read_mlp(&mut r)?;
    let decoder = read_mlp(&mut r)?;
    let height = r.read_u32::<LittleEndian>()? as usize;
    let width = r.read_u32::<LittleEndian>()? as usize;
    let dim = r.read_u32::<LittleEndian>()? as usize;
    let k = r.read_u32::<LittleEndian>()? as usize;
    if k != height * width {
        return Err(CliError::Checkpoint(format!(
            "grid header inconsistent: {height}x{width} vs k = {k}"
        )));
    }
    let mut data = vec![0.0; k * dim];
    for v in &mut data {
        *v = r.read_f64::<LittleEndian>()?;
    }
    let grid = SomGrid::from_embeddings(height, width, Tensor2::from_vec(k, dim, data).map_err(CliError::Core)?)
        .map_err(CliError::Core)?;

    let mut model = SomVae::new(encoder, decoder, grid, variant, weights).map_err(CliError::Core)?;
    if r.read_u8()? == 1 {
        let logits = read_tensor(&mut r)?;
        model.transitions = Some(TransitionModel::from_logits(logits).map_err(CliError::Core)?);
    } else {
        model.transitions = None;
    }
    Ok(Checkpoint {
        model,
        seed,
        image_rows,
        image_cols,
    })
}

/// Text grid export: a `height width dim k` header line, then k lines of m
/// values. Numbers use the shortest round-trip formatting.
pub fn save_grid_text(path: impl AsRef<Path>, grid: &SomGrid) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "{} {} {} {}",
        grid.height(),
        grid.width(),
        grid.dim(),
        grid.node_count()
    )?;
    for i in 0..grid.node_count() {
        let row: Vec<String> = grid.embeddings().row(i).iter().map(f64::to_string).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_grid_text(path: impl AsRef<Path>) -> Result<SomGrid> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Checkpoint("empty grid file".into()))?;
    let parts: Vec<usize> = header
        .split_whitespace()
        .map(|s| s.parse().map_err(|e| CliError::Checkpoint(format!("bad grid header: {e}"))))
        .collect::<Result<_>>()?;
    let [height, width, dim, k] = parts.as_slice() else {
        return Err(CliError::Checkpoint("grid header must have 4 integers".into()));
    };
    if *k != height * width {
        return Err(CliError::Checkpoint("grid header inconsistent".into()));
    }
    let mut data = Vec::with_capacity(k * dim);
    for line in lines.take(*k) {
        for v in line.split_whitespace() {
            data.push(
                v.parse::<f64>()
                    .map_err(|e| CliError::Checkpoint(format!("bad grid value: {e}")))?,
            );
        }
    }
    if data.len() != k * dim {
        return Err(CliError::Checkpoint(format!(
            "grid file has {} values, expected {}",
            data.len(),
            k * dim
        )));
    }
    SomGrid::from_embeddings(*height, *width, Tensor2::from_vec(*k, *dim, data).map_err(CliError::Core)?)
        .map_err(CliError::Core)
}

/// Transition matrix export: k rows of k probabilities, row-major.
pub fn save_transition_text(path: impl AsRef<Path>, probabilities: &Tensor2) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..probabilities.rows() {
        let row: Vec<String> = probabilities.row(i).iter().map(f64::to_string).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_model() -> SomVae {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let encoder = Mlp::new(vec![6, 5, 3], Activation::Relu, OutputActivation::Identity, &mut rng).unwrap();
        let decoder = Mlp::new(vec![3, 5, 6], Activation::Relu, OutputActivation::Sigmoid, &mut rng).unwrap();
        let grid = SomGrid::new(2, 3, 3, &mut rng).unwrap();
        SomVae::new(
            encoder,
            decoder,
            grid,
            ModelVariant::som_vae_prob(),
            LossWeights::default(),
        )
        .unwrap()
    }

    #[test]
    fn checkpoint_roundtrip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = sample_model();
        save(
            &path,
            &Checkpoint {
                model: model.clone(),
                seed: 42,
                image_rows: 0,
                image_cols: 0,
            },
        )
        .unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.seed, 42);
        assert_eq!(loaded.model.variant, model.variant);
        assert_eq!(loaded.model.encoder.weights(), model.encoder.weights());
        assert_eq!(loaded.model.decoder.biases(), model.decoder.biases());
        assert_eq!(loaded.model.grid.embeddings(), model.grid.embeddings());
        assert_eq!(
            loaded.model.transitions.as_ref().unwrap().logits(),
            model.transitions.as_ref().unwrap().logits()
        );
        // identical behavior
        let x = Tensor2::from_vec(2, 6, (0..12).map(|i| i as f64 / 12.0).collect()).unwrap();
        assert_eq!(model.assign(&x).unwrap(), loaded.model.assign(&x).unwrap());
    }

    #[test]
    fn grid_text_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.txt");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let grid = SomGrid::new(3, 4, 5, &mut rng).unwrap();
        save_grid_text(&path, &grid).unwrap();
        let loaded = load_grid_text(&path).unwrap();
        assert_eq!(loaded.embeddings(), grid.embeddings());
        assert_eq!((loaded.height(), loaded.width()), (3, 4));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(load(&path).is_err());
    }
}
