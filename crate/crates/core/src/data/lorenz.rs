//! Lorenz system simulation with attractor-basin labels.
//!
//!   dX/dt = a (Y - X)
//!   dY/dt = X (b - Z) - Y
//!   dZ/dt = X Y - c Z
//!
//! Integrated with classic fourth-order Runge-Kutta. The two fixed points
//! p1/p2 = (±sqrt(c(b-1)), ±sqrt(c(b-1)), b-1) define the macro-states; each
//! state is labeled with the nearer one.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug)]
pub struct LorenzParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub dt: f64,
}

impl Default for LorenzParams {
    fn default() -> Self {
        LorenzParams {
            a: 10.0,
            b: 28.0,
            c: 8.0 / 3.0,
            dt: 0.01,
        }
    }
}

impl LorenzParams {
    /// The attractor points, index 0 carrying the positive root.
    pub fn attractors(&self) -> Result<[[f64; 3]; 2]> {
        let s = self.c * (self.b - 1.0);
        if s <= 0.0 {
            return Err(Error::usage(format!(
                "LorenzParams: c(b-1) = {s} must be positive for attractors to exist"
            )));
        }
        let r = s.sqrt();
        Ok([[r, r, self.b - 1.0], [-r, -r, self.b - 1.0]])
    }

    pub fn derivative(&self, state: &[f64; 3]) -> [f64; 3] {
        let [x, y, z] = *state;
        [
            self.a * (y - x),
            x * (self.b - z) - y,
            x * y - self.c * z,
        ]
    }
}

/// Index of the nearer attractor; exact ties go to 0.
pub fn attractor_assignment(point: &[f64; 3], params: &LorenzParams) -> Result<u8> {
    let [p1, p2] = params.attractors()?;
    let d = |p: &[f64; 3]| -> f64 {
        point
            .iter()
            .zip(p)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum()
    };
    Ok(if d(&p2) < d(&p1) { 1 } else { 0 })
}

/// A simulated path with per-step basin labels.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<[f64; 3]>,
    pub basins: Vec<u8>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

fn rk4_step(params: &LorenzParams, state: &[f64; 3]) -> [f64; 3] {
    let dt = params.dt;
    let k1 = params.derivative(state);
    let k2 = params.derivative(&advance(state, &k1, dt / 2.0));
    let k3 = params.derivative(&advance(state, &k2, dt / 2.0));
    let k4 = params.derivative(&advance(state, &k3, dt));
    let mut out = *state;
    for i in 0..3 {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

fn advance(state: &[f64; 3], deriv: &[f64; 3], h: f64) -> [f64; 3] {
    [
        state[0] + h * deriv[0],
        state[1] + h * deriv[1],
        state[2] + h * deriv[2],
    ]
}

/// Integrate `steps` states starting from (and including) `x0`.
pub fn lorenz_simulate(params: &LorenzParams, x0: [f64; 3], steps: usize) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::usage("lorenz_simulate: steps must be >= 1"));
    }
    if params.dt <= 0.0 {
        return Err(Error::usage("lorenz_simulate: dt must be positive"));
    }
    let mut states = Vec::with_capacity(steps);
    let mut basins = Vec::with_capacity(steps);
    let mut state = x0;
    for step in 0..steps {
        if !state.iter().all(|v| v.is_finite()) {
            return Err(Error::usage(format!(
                "lorenz_simulate: state blew up at step {step}"
            )));
        }
        states.push(state);
        basins.push(attractor_assignment(&state, params)?);
        state = rk4_step(params, &state);
    }
    Ok(Trajectory { states, basins })
}

/// Simulated corpus split 80/20 by trajectory.
#[derive(Clone, Debug)]
pub struct LorenzCorpus {
    pub train: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

/// Simulate `n_traj` seeded trajectories of `steps` recorded states each.
/// Initial conditions are uniform in [-15, 15] x [-15, 15] x [0, 40]; a
/// 1000-step burn-in is discarded so recorded states lie on the attractor.
/// The first 80% of trajectories (by index) form the training split.
pub fn make_lorenz_corpus(
    params: &LorenzParams,
    n_traj: usize,
    steps: usize,
    burn_in: usize,
    seed: u64,
) -> Result<LorenzCorpus> {
    if n_traj == 0 {
        return Err(Error::usage("make_lorenz_corpus: n_traj must be >= 1"));
    }
    let mut trajectories = Vec::with_capacity(n_traj);
    for t in 0..n_traj {
        // Independent stream per trajectory, derived from the master seed.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x51ab_5eed_0000_0000 | t as u64));
        let x0 = [
            rng.random_range(-15.0..15.0),
            rng.random_range(-15.0..15.0),
            rng.random_range(0.0..40.0),
        ];
        let full = lorenz_simulate(params, x0, burn_in + steps)?;
        let states = full.states[burn_in..].to_vec();
        let basins = full.basins[burn_in..].to_vec();
        trajectories.push(Trajectory { states, basins });
    }
    let split = (n_traj as f64 * 0.8).ceil() as usize;
    let test = trajectories.split_off(split.min(n_traj));
    Ok(LorenzCorpus {
        train: trajectories,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_vanishes_at_fixed_point() {
        let params = LorenzParams::default();
        let [p1, p2] = params.attractors().unwrap();
        assert!((p1[0] - 72f64.sqrt()).abs() < 1e-12);
        assert_eq!(p1[2], 27.0);
        for p in [p1, p2] {
            for d in params.derivative(&p) {
                assert!(d.abs() < 1e-12, "derivative {d} at {p:?}");
            }
        }
        // RK4 from the exact fixed point stays there.
        let traj = lorenz_simulate(&params, p1, 50).unwrap();
        for s in &traj.states {
            for (a, b) in s.iter().zip(&p1) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn chaotic_run_flips_basin() {
        let params = LorenzParams::default();
        let traj = lorenz_simulate(&params, [1.0, 1.0, 1.0], 10_000).unwrap();
        let first = traj.basins[0];
        assert!(traj.basins.iter().any(|&b| b != first));
    }

    #[test]
    fn rk4_order_check() {
        // Richardson comparison: halving dt should shrink the error against a
        // fine reference by roughly 2^4.
        let coarse = LorenzParams {
            dt: 0.01,
            ..LorenzParams::default()
        };
        let half = LorenzParams {
            dt: 0.005,
            ..LorenzParams::default()
        };
        let fine = LorenzParams {
            dt: 0.00125,
            ..LorenzParams::default()
        };
        let x0 = [1.0, 1.0, 1.0];
        let t_end = 100; // coarse steps
        let a = lorenz_simulate(&coarse, x0, t_end + 1).unwrap();
        let b = lorenz_simulate(&half, x0, 2 * t_end + 1).unwrap();
        let r = lorenz_simulate(&fine, x0, 8 * t_end + 1).unwrap();
        let err = |s: &[f64; 3], t: &[f64; 3]| -> f64 {
            s.iter().zip(t).map(|(&x, &y)| (x - y) * (x - y)).sum::<f64>().sqrt()
        };
        let e_coarse = err(&a.states[t_end], &r.states[8 * t_end]);
        let e_half = err(&b.states[2 * t_end], &r.states[8 * t_end]);
        let ratio = e_coarse / e_half;
        assert!(
            (8.0..40.0).contains(&ratio),
            "expected ~16x error reduction, got {ratio} ({e_coarse} vs {e_half})"
        );
    }

    #[test]
    fn attractor_assignment_examples() {
        let params = LorenzParams::default();
        let [p1, p2] = params.attractors().unwrap();
        assert_eq!(attractor_assignment(&p1, &params).unwrap(), 0);
        assert_eq!(attractor_assignment(&p2, &params).unwrap(), 1);
        // Equidistant point on the symmetry plane: tie goes to 0.
        let mid = [0.0, 0.0, 27.0];
        assert_eq!(attractor_assignment(&mid, &params).unwrap(), 0);
    }

    #[test]
    fn corpus_shapes_and_determinism() {
        let params = LorenzParams::default();
        let corpus = make_lorenz_corpus(&params, 2, 100, 50, 9).unwrap();
        assert_eq!(corpus.train.len(), 2);
        assert_eq!(corpus.test.len(), 0);
        assert!(corpus.train.iter().all(|t| t.len() == 100));
        let again = make_lorenz_corpus(&params, 2, 100, 50, 9).unwrap();
        assert_eq!(corpus.train[0].states, again.train[0].states);

        let split = make_lorenz_corpus(&params, 10, 50, 10, 1).unwrap();
        assert_eq!(split.train.len(), 8);
        assert_eq!(split.test.len(), 2);
    }

    #[test]
    fn recorded_states_stay_near_attractor() {
        let params = LorenzParams::default();
        let corpus = make_lorenz_corpus(&params, 5, 1000, 1000, 3).unwrap();
        for traj in corpus.train.iter().chain(&corpus.test) {
            for s in &traj.states {
                assert!(s[0].abs() < 25.0 && s[1].abs() < 30.0, "{s:?}");
                assert!(s[2] > 0.0 && s[2] < 55.0, "{s:?}");
            }
        }
    }

    #[test]
    fn mirror_symmetry_of_the_flow() {
        // The ODE is equivariant under (X, Y) -> (-X, -Y); integrating the
        // mirrored start yields the mirrored trajectory.
        let params = LorenzParams::default();
        let a = lorenz_simulate(&params, [2.0, -1.0, 20.0], 500).unwrap();
        let b = lorenz_simulate(&params, [-2.0, 1.0, 20.0], 500).unwrap();
        for (s, t) in a.states.iter().zip(&b.states) {
            assert!((s[0] + t[0]).abs() < 1e-9);
            assert!((s[1] + t[1]).abs() < 1e-9);
            assert!((s[2] - t[2]).abs() < 1e-9);
        }
    }

    #[test]
    fn basins_recompute_idempotently() {
        let params = LorenzParams::default();
        let traj = lorenz_simulate(&params, [0.5, 0.5, 10.0], 200).unwrap();
        let recomputed: Vec<u8> = traj
            .states
            .iter()
            .map(|s| attractor_assignment(s, &params).unwrap())
            .collect();
        assert_eq!(traj.basins, recomputed);
    }
}
