//! Self-organizing map: an embedding dictionary on a 2-D lattice.
//!
//! The grid supports three uses: winner assignment for encodings, the
//! classical iterative training algorithm, and a differentiable loss term
//! that pulls the winner's lattice neighbors toward an encoding while the
//! encoding itself is held fixed by a gradient stop.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tape::{GradTape, NodeId};
use crate::tensor::Tensor2;

/// Position of a node on the lattice.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct GridCoord {
    pub row: usize,
    pub col: usize,
}

/// Neighborhood function for classical training.
#[derive(Copy, Clone, Debug, PartialEq)]
pub enum Neighborhood {
    /// Weight 1 for the four lattice-adjacent nodes, 0 elsewhere.
    FourAdjacent,
    /// exp(-d² / 2σ²) on lattice distance; σ is the starting width and decays
    /// linearly to 0.5 over the configured epochs.
    Gaussian { sigma: f64 },
}

#[derive(Copy, Clone, Debug)]
pub struct SomTrainConfig {
    pub eta: f64,
    pub neighborhood: Neighborhood,
    pub epochs: usize,
}

impl SomTrainConfig {
    fn validate(&self) -> Result<()> {
        if self.eta < 0.0 {
            return Err(Error::usage("SomTrainConfig: eta must be >= 0"));
        }
        if self.epochs == 0 {
            return Err(Error::usage("SomTrainConfig: epochs must be positive"));
        }
        if let Neighborhood::Gaussian { sigma } = self.neighborhood {
            if sigma <= 0.0 {
                return Err(Error::usage("SomTrainConfig: gaussian sigma must be > 0"));
            }
        }
        Ok(())
    }
}

/// The embedding dictionary, one m-dimensional vector per lattice node.
/// Flat index i maps to coordinate (i / width, i % width).
#[derive(Clone, Debug)]
pub struct SomGrid {
    height: usize,
    width: usize,
    dim: usize,
    embeddings: Tensor2,
}

/// A continuous encoding paired with its discrete assignment.
#[derive(Clone, Debug)]
pub struct LatentCode {
    pub z_e: Vec<f64>,
    pub winner: usize,
}

impl SomGrid {
    /// Seeded N(0, 0.05²) initialization.
    pub fn new(height: usize, width: usize, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        if height * width == 0 || dim == 0 {
            return Err(Error::usage("SomGrid: height, width and dim must be positive"));
        }
        let normal = Normal::new(0.0, 0.05).expect("valid stddev");
        let data = (0..height * width * dim).map(|_| normal.sample(rng)).collect();
        Ok(SomGrid {
            height,
            width,
            dim,
            embeddings: Tensor2::from_vec(height * width, dim, data)?,
        })
    }

    pub fn from_embeddings(height: usize, width: usize, embeddings: Tensor2) -> Result<Self> {
        if embeddings.rows() != height * width {
            return Err(Error::shape(
                "SomGrid::from_embeddings",
                format!("{} rows", height * width),
                format!("{}", embeddings.rows()),
            ));
        }
        Ok(SomGrid {
            height,
            width,
            dim: embeddings.cols(),
            embeddings,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of nodes, k = height * width.
    pub fn node_count(&self) -> usize {
        self.height * self.width
    }

    pub fn embeddings(&self) -> &Tensor2 {
        &self.embeddings
    }

    pub fn embeddings_mut(&mut self) -> &mut Tensor2 {
        &mut self.embeddings
    }

    pub fn coord(&self, index: usize) -> GridCoord {
        GridCoord {
            row: index / self.width,
            col: index % self.width,
        }
    }

    pub fn flat_index(&self, coord: GridCoord) -> usize {
        coord.row * self.width + coord.col
    }

    /// Nearest embedding by squared Euclidean distance; ties break toward the
    /// lowest flat index.
    pub fn assign(&self, z_e: &[f64]) -> Result<usize> {
        if z_e.len() != self.dim {
            return Err(Error::shape(
                "SomGrid::assign",
                format!("encoding of dim {}", self.dim),
                format!("{}", z_e.len()),
            ));
        }
        let mut best = 0usize;
        let mut best_dist = f64::INFINITY;
        for i in 0..self.node_count() {
            let d: f64 = self
                .embeddings
                .row(i)
                .iter()
                .zip(z_e)
                .map(|(&e, &z)| (e - z) * (e - z))
                .sum();
            if d < best_dist {
                best = i;
                best_dist = d;
            }
        }
        Ok(best)
    }

    /// Winner per row of a batch of encodings.
    pub fn assign_batch(&self, z_e: &Tensor2) -> Result<Vec<usize>> {
        (0..z_e.rows()).map(|r| self.assign(z_e.row(r))).collect()
    }

    /// Existing lattice neighbors (up, down, left, right), no wraparound,
    /// in ascending flat order.
    pub fn neighbors(&self, index: usize) -> Vec<usize> {
        let GridCoord { row, col } = self.coord(index);
        let mut out = Vec::with_capacity(4);
        if row > 0 {
            out.push(index - self.width);
        }
        if col > 0 {
            out.push(index - 1);
        }
        if col + 1 < self.width {
            out.push(index + 1);
        }
        if row + 1 < self.height {
            out.push(index + self.width);
        }
        out
    }

    /// Nodes the self-organizing loss pulls for a given winner. The winner is
    /// excluded by default; `include_winner` adds it for the variant reading.
    pub fn loss_neighborhood(&self, winner: usize, include_winner: bool) -> Vec<usize> {
        let mut nodes = self.neighbors(winner);
        if include_winner {
            nodes.insert(0, winner);
        }
        nodes
    }

    /// Lattice distance between node coordinates.
    fn grid_dist_sq(&self, a: usize, b: usize) -> f64 {
        let ca = self.coord(a);
        let cb = self.coord(b);
        let dr = ca.row as f64 - cb.row as f64;
        let dc = ca.col as f64 - cb.col as f64;
        dr * dr + dc * dc
    }

    /// Classical iterative training: per point, the winner moves straight
    /// toward the point with step eta, every other node moves with step
    /// eta * N(winner, node). Points are visited in a seeded shuffled order,
    /// one full pass per epoch.
    pub fn classical_som_fit(
        &mut self,
        data: &Tensor2,
        cfg: &SomTrainConfig,
        rng: &mut impl Rng,
    ) -> Result<()> {
        cfg.validate()?;
        if data.cols() != self.dim {
            return Err(Error::shape(
                "classical_som_fit",
                format!("data of dim {}", self.dim),
                format!("{}", data.cols()),
            ));
        }
        if data.rows() == 0 {
            return Err(Error::usage("classical_som_fit: empty data"));
        }
        let k = self.node_count();
        let mut order: Vec<usize> = (0..data.rows()).collect();
        for epoch in 0..cfg.epochs {
            order.shuffle(rng);
            let sigma = match cfg.neighborhood {
                Neighborhood::FourAdjacent => 0.0,
                Neighborhood::Gaussian { sigma } => {
                    if cfg.epochs == 1 {
                        sigma
                    } else {
                        let frac = epoch as f64 / (cfg.epochs - 1) as f64;
                        sigma + (0.5 - sigma) * frac
                    }
                }
            };
            for &p in &order {
                let x = data.row(p).to_vec();
                let winner = self.assign(&x)?;
                for u in 0..k {
                    let weight = if u == winner {
                        1.0
                    } else {
                        match cfg.neighborhood {
                            Neighborhood::FourAdjacent => {
                                if self.grid_dist_sq(winner, u) == 1.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Neighborhood::Gaussian { .. } => {
                                (-self.grid_dist_sq(winner, u) / (2.0 * sigma * sigma)).exp()
                            }
                        }
                    };
                    if weight == 0.0 {
                        continue;
                    }
                    let step = cfg.eta * weight;
                    for (e, &xv) in self.embeddings.row_mut(u).iter_mut().zip(&x) {
                        *e += step * (xv - *e);
                    }
                }
            }
        }
        Ok(())
    }

    /// The topology term: sum over the winner's lattice neighbors of the
    /// squared distance to the (gradient-stopped) encoding, averaged over the
    /// batch. Gradients reach only the neighbor embeddings.
    ///
    /// `embeddings` must be this grid's embedding matrix registered on the
    /// tape; `winners` holds one node index per row of `z_e`.
    pub fn som_loss(
        &self,
        tape: &mut GradTape,
        embeddings: NodeId,
        z_e: NodeId,
        winners: &[usize],
        include_winner: bool,
    ) -> Result<NodeId> {
        let batch = tape.value(z_e).rows();
        if winners.len() != batch {
            return Err(Error::shape(
                "som_loss",
                format!("{batch} winners"),
                format!("{}", winners.len()),
            ));
        }
        if let Some(&bad) = winners.iter().find(|&&w| w >= self.node_count()) {
            return Err(Error::usage(format!(
                "som_loss: winner {bad} out of range for {} nodes",
                self.node_count()
            )));
        }
        let mut sample_rows = Vec::new();
        let mut neighbor_rows = Vec::new();
        for (r, &w) in winners.iter().enumerate() {
            for n in self.loss_neighborhood(w, include_winner) {
                sample_rows.push(r);
                neighbor_rows.push(n);
            }
        }
        let stopped = tape.stop_gradient(z_e);
        if neighbor_rows.is_empty() {
            return Ok(tape.leaf(Tensor2::scalar(0.0)));
        }
        let targets = tape.gather_rows(stopped, &sample_rows)?;
        let pulled = tape.gather_rows(embeddings, &neighbor_rows)?;
        let diff = tape.sub(pulled, targets)?;
        let sq = tape.mul(diff, diff)?;
        let total = tape.sum_all(sq);
        Ok(tape.scale(total, 1.0 / batch as f64))
    }
}
