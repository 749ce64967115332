//! Synthetic time series: pixel-wise linear interpolation through anchor
//! images.

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

pub const DEFAULT_FRAMES: usize = 64;
pub const ANCHOR_COUNT: usize = 5;

/// One interpolated series of `frames.rows()` frames passing exactly through
/// five anchor images.
#[derive(Clone, Debug)]
pub struct InterpSeries {
    pub frames: Tensor2,
    pub anchor_labels: [usize; ANCHOR_COUNT],
    pub anchor_indices: [usize; ANCHOR_COUNT],
}

/// Anchor j sits at frame round(j * (T - 1) / 4).
pub fn anchor_positions(frames: usize) -> [usize; ANCHOR_COUNT] {
    let mut out = [0usize; ANCHOR_COUNT];
    for (j, slot) in out.iter_mut().enumerate() {
        *slot = (j as f64 * (frames - 1) as f64 / (ANCHOR_COUNT - 1) as f64).round() as usize;
    }
    out
}

/// Build a series from five equally-sized anchor images. Between consecutive
/// anchors every pixel moves linearly; anchor frames equal the anchors
/// exactly.
pub fn interpolation_series(
    anchors: &[Vec<f64>; ANCHOR_COUNT],
    anchor_labels: [usize; ANCHOR_COUNT],
    frames: usize,
) -> Result<InterpSeries> {
    if frames < ANCHOR_COUNT {
        return Err(Error::usage(format!(
            "interpolation_series: need at least {ANCHOR_COUNT} frames, got {frames}"
        )));
    }
    let dim = anchors[0].len();
    if let Some(bad) = anchors.iter().position(|a| a.len() != dim) {
        return Err(Error::shape(
            "interpolation_series",
            format!("anchor of size {dim}"),
            format!("anchor {bad} of size {}", anchors[bad].len()),
        ));
    }
    let positions = anchor_positions(frames);
    let mut data = Vec::with_capacity(frames * dim);
    for t in 0..frames {
        // Segment containing t; the last anchor closes the final segment.
        let seg = positions
            .windows(2)
            .position(|w| t >= w[0] && t <= w[1])
            .unwrap_or(ANCHOR_COUNT - 2);
        let (lo, hi) = (positions[seg], positions[seg + 1]);
        let lambda = if hi == lo {
            0.0
        } else {
            (t - lo) as f64 / (hi - lo) as f64
        };
        let a = &anchors[seg];
        let b = &anchors[seg + 1];
        data.extend(a.iter().zip(b).map(|(&av, &bv)| (1.0 - lambda) * av + lambda * bv));
    }
    Ok(InterpSeries {
        frames: Tensor2::from_vec(frames, dim, data)?,
        anchor_labels,
        anchor_indices: positions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anchors_from(values: [f64; ANCHOR_COUNT]) -> [Vec<f64>; ANCHOR_COUNT] {
        values.map(|v| vec![v; 4])
    }

    #[test]
    fn endpoints_equal_anchors() {
        let anchors = anchors_from([0.1, 0.3, 0.5, 0.7, 0.9]);
        let s = interpolation_series(&anchors, [0, 1, 2, 3, 4], 64).unwrap();
        assert_eq!(s.frames.row(0), anchors[0].as_slice());
        assert_eq!(s.frames.row(63), anchors[4].as_slice());
        assert_eq!(s.anchor_indices, [0, 16, 32, 47, 63]);
        for (j, &p) in s.anchor_indices.iter().enumerate() {
            assert_eq!(s.frames.row(p), anchors[j].as_slice(), "anchor {j}");
        }
    }

    #[test]
    fn identical_anchors_give_constant_series() {
        let anchors = anchors_from([0.4; 5]);
        let s = interpolation_series(&anchors, [7; 5], 16).unwrap();
        assert!(s.frames.data().iter().all(|&v| v == 0.4));
    }

    #[test]
    fn midpoint_is_half() {
        // Anchors all-0 and all-1; midpoint frame of the first segment is 0.5.
        let mut anchors = anchors_from([0.0; 5]);
        anchors[1] = vec![1.0; 4];
        let s = interpolation_series(&anchors, [0; 5], 65).unwrap();
        // positions: [0, 16, 32, 48, 64]; first segment midpoint t = 8.
        assert!(s.frames.row(8).iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn frames_stay_inside_anchor_range() {
        let anchors = anchors_from([0.2, 0.9, 0.1, 0.6, 0.4]);
        let s = interpolation_series(&anchors, [0; 5], 64).unwrap();
        for &v in s.frames.data() {
            assert!((0.1..=0.9).contains(&v));
        }
    }

    #[test]
    fn anchor_size_mismatch_is_rejected() {
        let mut anchors = anchors_from([0.0; 5]);
        anchors[2] = vec![0.0; 3];
        assert!(interpolation_series(&anchors, [0; 5], 64).is_err());
    }
}
