//! Tube index arithmetic, random tube masking, motion saliency, and the
//! top-K soft weighting over masked tubes.
//!
//! A tube is one spatial patch location tracked across every frame of a
//! clip. Motion scores are computed on raw pixels (rescaled to [0,1]) and
//! never enter the gradient tape.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::video::clip::VideoClip;

/// Spatial patch grid of a clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TubeGrid {
    pub patch: u32,
    pub grid_h: u32,
    pub grid_w: u32,
}

impl TubeGrid {
    pub fn new(grid_h: u32, grid_w: u32, patch: u32) -> Self {
        TubeGrid {
            patch,
            grid_h,
            grid_w,
        }
    }

    pub fn for_clip(clip: &VideoClip, patch: u32) -> Result<Self> {
        if patch == 0 || clip.height() % patch != 0 || clip.width() % patch != 0 {
            return Err(Error::Contract(format!(
                "patch size {patch} must divide clip {}x{}",
                clip.height(),
                clip.width()
            )));
        }
        Ok(TubeGrid {
            patch,
            grid_h: clip.height() / patch,
            grid_w: clip.width() / patch,
        })
    }

    pub fn num_tubes(&self) -> usize {
        self.grid_h as usize * self.grid_w as usize
    }

    pub fn index(&self, row: u32, col: u32) -> Result<usize> {
        if row >= self.grid_h || col >= self.grid_w {
            return Err(Error::Contract(format!(
                "tube ({row},{col}) out of range for {}x{} grid",
                self.grid_h, self.grid_w
            )));
        }
        Ok((row * self.grid_w + col) as usize)
    }

    pub fn position(&self, index: usize) -> Result<(u32, u32)> {
        if index >= self.num_tubes() {
            return Err(Error::Contract(format!(
                "tube index {index} out of range for {} tubes",
                self.num_tubes()
            )));
        }
        Ok((index as u32 / self.grid_w, index as u32 % self.grid_w))
    }

    /// In-grid 4-neighborhood; corners get 2 neighbors, edges 3, interior 4.
    pub fn neighbors4(&self, index: usize) -> Result<Vec<usize>> {
        let (r, c) = self.position(index)?;
        let mut out = Vec::with_capacity(4);
        if r > 0 {
            out.push(index - self.grid_w as usize);
        }
        if c > 0 {
            out.push(index - 1);
        }
        if c + 1 < self.grid_w {
            out.push(index + 1);
        }
        if r + 1 < self.grid_h {
            out.push(index + self.grid_w as usize);
        }
        Ok(out)
    }
}

/// Visible/masked split plus motion statistics for one clip.
#[derive(Clone, Debug)]
pub struct TubePartition {
    /// Visible tube indices, ascending.
    pub visible: Vec<usize>,
    /// Masked tube indices, ascending.
    pub masked: Vec<usize>,
    /// High-motion subset of `masked`, at most K entries.
    pub high_motion: Vec<usize>,
    /// Motion score per tube, length N.
    pub motion_scores: Vec<f64>,
    /// Soft weights aligned with `high_motion`; sum to 1.
    pub soft_weights: Vec<f64>,
    /// Realized mask ratio.
    pub rho: f64,
}

impl TubePartition {
    /// Position of tube `i` within the ascending masked list.
    pub fn masked_position(&self, tube: usize) -> Option<usize> {
        self.masked.binary_search(&tube).ok()
    }
}

/// Number of masked tubes for a draw of rho, clamped so that both sides of
/// the split stay non-empty.
pub fn masked_count(rho: f64, n: usize) -> usize {
    ((rho * n as f64).round() as usize).clamp(1, n - 1)
}

/// Draws rho ~ U(0.75, 0.95) and a uniform without-replacement masked set.
/// Returns (visible, masked, rho), both index lists ascending.
pub fn sample_mask<R: Rng>(grid: &TubeGrid, rng: &mut R) -> Result<(Vec<usize>, Vec<usize>, f64)> {
    let n = grid.num_tubes();
    if n < 2 {
        return Err(Error::contract("mask sampling needs at least 2 tubes"));
    }
    let rho = 0.75 + 0.2 * rng.random::<f64>();
    let m = masked_count(rho, n);
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..m {
        let j = i + rng.random_range(0..n - i);
        indices.swap(i, j);
    }
    let mut masked: Vec<usize> = indices[..m].to_vec();
    let mut visible: Vec<usize> = indices[m..].to_vec();
    masked.sort_unstable();
    visible.sort_unstable();
    Ok((visible, masked, rho))
}

/// Motion score per tube over pixel values already scaled to [0,1],
/// laid out frame-major, row-major, channel-interleaved.
pub fn motion_scores_values(
    values: &[f64],
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    grid: &TubeGrid,
) -> Result<Vec<f64>> {
    if frames < 2 {
        return Err(Error::contract("motion scores need at least 2 frames"));
    }
    if values.len() != frames * height * width * channels {
        return Err(Error::contract("value buffer does not match geometry"));
    }
    let p = grid.patch as usize;
    let n = grid.num_tubes();

    // ℓ1 distance between the pixel patches of two tubes at two times
    let patch_l1 = |ta: usize, tube_a: usize, tb: usize, tube_b: usize| -> f64 {
        let (ra, ca) = (tube_a / grid.grid_w as usize, tube_a % grid.grid_w as usize);
        let (rb, cb) = (tube_b / grid.grid_w as usize, tube_b % grid.grid_w as usize);
        let mut acc = 0.0;
        for dy in 0..p {
            for dx in 0..p {
                for ch in 0..channels {
                    let ia = ((ta * height + ra * p + dy) * width + ca * p + dx) * channels + ch;
                    let ib = ((tb * height + rb * p + dy) * width + cb * p + dx) * channels + ch;
                    acc += (values[ia] - values[ib]).abs();
                }
            }
        }
        acc
    };

    let mut scores = vec![0.0; n];
    for tube in 0..n {
        let mut temporal = 0.0;
        for t in 0..frames - 1 {
            temporal += patch_l1(t + 1, tube, t, tube);
        }
        temporal /= (frames - 1) as f64;

        let neighbors = grid.neighbors4(tube)?;
        let mut spatial = 0.0;
        if !neighbors.is_empty() {
            for t in 0..frames {
                let mut around = 0.0;
                for &j in &neighbors {
                    around += patch_l1(t, tube, t, j);
                }
                spatial += around / neighbors.len() as f64;
            }
            spatial /= frames as f64;
        }
        scores[tube] = temporal + spatial;
    }
    Ok(scores)
}

/// Motion score per tube of a clip; pixels are rescaled to [0,1] first.
pub fn motion_scores(clip: &VideoClip, grid: &TubeGrid) -> Result<Vec<f64>> {
    let values: Vec<f64> = clip.pixels().iter().map(|&p| p as f64 / 255.0).collect();
    motion_scores_values(
        &values,
        clip.frames() as usize,
        clip.height() as usize,
        clip.width() as usize,
        clip.channels() as usize,
        grid,
    )
}

/// Selects the top `k` masked tubes by motion score (ties broken by smaller
/// index) and assigns soft weights `exp(gamma·g_i)` normalized over the
/// selection, computed with max-subtraction.
pub fn select_topk_weights(
    scores: &[f64],
    masked: &[usize],
    k: usize,
    gamma: f64,
) -> Result<(Vec<usize>, Vec<f64>)> {
    if masked.is_empty() {
        return Err(Error::contract("top-K selection over an empty masked set"));
    }
    if masked
        .iter()
        .any(|&i| !scores.get(i).is_some_and(|g| g.is_finite()))
    {
        return Err(Error::contract("non-finite or missing motion score"));
    }
    let mut top: Vec<usize> = masked.to_vec();
    top.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores compare")
            .then(a.cmp(&b))
    });
    top.truncate(k.min(masked.len()));
    let max = top
        .iter()
        .map(|&i| gamma * scores[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = top
        .iter()
        .map(|&i| (gamma * scores[i] - max).exp())
        .collect();
    let sum: f64 = exps.iter().sum();
    let weights = exps.into_iter().map(|e| e / sum).collect();
    Ok((top, weights))
}

/// Assembles a full partition for one clip: mask draw, motion scores,
/// top-K selection.
pub fn sample_partition<R: Rng>(
    clip: &VideoClip,
    grid: &TubeGrid,
    rng: &mut R,
    k: usize,
    gamma: f64,
) -> Result<TubePartition> {
    let (visible, masked, rho) = sample_mask(grid, rng)?;
    let scores = motion_scores(clip, grid)?;
    let (high_motion, soft_weights) = select_topk_weights(&scores, &masked, k, gamma)?;
    Ok(TubePartition {
        visible,
        masked,
        high_motion,
        motion_scores: scores,
        soft_weights,
        rho,
    })
}

/// Linear rescale of motion scores to one 8-bit pixel per tube cell.
/// All-equal scores map to an all-zero image.
pub fn saliency_heatmap(scores: &[f64], grid: &TubeGrid) -> Result<Vec<u8>> {
    if scores.len() != grid.num_tubes() {
        return Err(Error::contract("score length does not match grid"));
    }
    if scores.iter().any(|g| !g.is_finite()) {
        return Err(Error::contract("non-finite motion score"));
    }
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    Ok(scores
        .iter()
        .map(|&g| {
            if span <= 0.0 {
                0
            } else {
                ((g - min) / span * 255.0).round() as u8
            }
        })
        .collect())
}

/// Binary PGM (P5) export, one byte per tube cell.
pub fn write_pgm(path: &Path, grid: &TubeGrid, bytes: &[u8]) -> Result<()> {
    if bytes.len() != grid.num_tubes() {
        return Err(Error::contract("pixel count does not match grid"));
    }
    let mut out = format!("P5\n{} {}\n255\n", grid.grid_w, grid.grid_h).into_bytes();
    out.extend_from_slice(bytes);
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn neighbor_enumeration() {
        let g1 = TubeGrid::new(1, 1, 4);
        assert!(g1.neighbors4(0).unwrap().is_empty());

        let g3 = TubeGrid::new(3, 3, 4);
        assert_eq!(g3.neighbors4(4).unwrap(), vec![1, 3, 5, 7]);
        assert_eq!(g3.neighbors4(0).unwrap(), vec![1, 3]);
        assert_eq!(g3.neighbors4(1).unwrap(), vec![0, 2, 4]);
        assert!(g3.neighbors4(9).is_err());
    }

    #[test]
    fn masked_count_examples() {
        assert_eq!(masked_count(0.85, 196), 167);
        // N=2 near the top of the range: clamp leaves one tube per side
        assert_eq!(masked_count(0.95, 2), 1);
    }

    #[test]
    fn sample_mask_partition_invariants() {
        let grid = TubeGrid::new(4, 5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let (vis, masked, rho) = sample_mask(&grid, &mut rng).unwrap();
            assert!((0.75..=0.95).contains(&rho));
            assert!(!vis.is_empty() && !masked.is_empty());
            assert_eq!(vis.len() + masked.len(), grid.num_tubes());
            let mut all: Vec<usize> = vis.iter().chain(masked.iter()).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..grid.num_tubes()).collect::<Vec<_>>());
            assert_eq!(masked.len(), masked_count(rho, grid.num_tubes()));
        }
    }

    #[test]
    fn sample_mask_is_deterministic_and_mean_ratio_centered() {
        let grid = TubeGrid::new(14, 14, 16);
        let a: Vec<_> = {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            (0..10)
                .map(|_| sample_mask(&grid, &mut rng).unwrap())
                .collect()
        };
        let b: Vec<_> = {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            (0..10)
                .map(|_| sample_mask(&grid, &mut rng).unwrap())
                .collect()
        };
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.1, y.1);
            assert_eq!(x.2.to_bits(), y.2.to_bits());
        }

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = grid.num_tubes();
        let mean: f64 = (0..10_000)
            .map(|_| sample_mask(&grid, &mut rng).unwrap().1.len() as f64 / n as f64)
            .sum::<f64>()
            / 10_000.0;
        assert!((0.84..=0.86).contains(&mean), "mean ratio {mean}");
    }

    #[test]
    fn motion_scores_hand_case() {
        // 1x2 grid of 1x1 patches, T=2, values already scaled:
        // frame 0 = [0, 4], frame 1 = [2, 4]
        let grid = TubeGrid::new(1, 2, 1);
        let values = vec![0.0, 4.0, 2.0, 4.0];
        let g = motion_scores_values(&values, 2, 1, 2, 1, &grid).unwrap();
        assert!((g[0] - 5.0).abs() < 1e-12, "g = {g:?}");
        assert!((g[1] - 3.0).abs() < 1e-12, "g = {g:?}");
    }

    #[test]
    fn motion_scores_constant_clip_is_zero() {
        let clip = VideoClip::new(3, 4, 4, 1, 1.0, vec![77; 48]).unwrap();
        let grid = TubeGrid::for_clip(&clip, 2).unwrap();
        let g = motion_scores(&clip, &grid).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn motion_scores_invariant_to_constant_offset_and_linear_in_scale() {
        let grid = TubeGrid::new(2, 2, 2);
        let base: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let g0 = motion_scores_values(&base, 2, 4, 4, 1, &grid).unwrap();

        let shifted: Vec<f64> = base.iter().map(|v| v + 0.25).collect();
        let g1 = motion_scores_values(&shifted, 2, 4, 4, 1, &grid).unwrap();
        for (a, b) in g0.iter().zip(&g1) {
            assert!((a - b).abs() < 1e-12);
        }

        let lambda = 3.5;
        let scaled: Vec<f64> = base.iter().map(|v| v * lambda).collect();
        let g2 = motion_scores_values(&scaled, 2, 4, 4, 1, &grid).unwrap();
        for (a, b) in g0.iter().zip(&g2) {
            assert!((a * lambda - b).abs() < 1e-9);
        }
    }

    #[test]
    fn motion_scores_need_two_frames() {
        let clip = VideoClip::zeros(1, 4, 4, 1, 1.0);
        let grid = TubeGrid::for_clip(&clip, 2).unwrap();
        assert!(motion_scores(&clip, &grid).is_err());
    }

    #[test]
    fn topk_weights_examples() {
        // equal scores -> uniform weights
        let scores = vec![0.5; 6];
        let masked = vec![0, 2, 4, 5];
        let (top, w) = select_topk_weights(&scores, &masked, 3, 2.0).unwrap();
        assert_eq!(top, vec![0, 2, 4]); // ties by ascending index
        for &wi in &w {
            assert!((wi - 1.0 / 3.0).abs() < 1e-12);
        }

        // masked smaller than K clamps
        let (top, _) = select_topk_weights(&scores, &[1, 3], 3, 2.0).unwrap();
        assert_eq!(top.len(), 2);

        // softmax([2,1,1]) on scores {1.0, 0.5, 0.5, 0.0}
        let scores = vec![1.0, 0.5, 0.5, 0.0];
        let masked = vec![0, 1, 2, 3];
        let (top, w) = select_topk_weights(&scores, &masked, 3, 2.0).unwrap();
        assert_eq!(top, vec![0, 1, 2]);
        let e2 = 2.0f64.exp();
        let e1 = 1.0f64.exp();
        let z = e2 + 2.0 * e1;
        assert!((w[0] - e2 / z).abs() < 1e-12 && (w[0] - 0.5761).abs() < 1e-4);
        assert!((w[1] - e1 / z).abs() < 1e-12 && (w[1] - 0.2119).abs() < 1e-4);
        assert!((w[2] - e1 / z).abs() < 1e-12);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn topk_set_stable_under_positive_affine_rescale() {
        let scores = vec![0.9, 0.1, 0.4, 0.7, 0.2, 0.55];
        let masked = vec![0, 1, 3, 4, 5];
        let (top_a, _) = select_topk_weights(&scores, &masked, 3, 2.0).unwrap();
        let rescaled: Vec<f64> = scores.iter().map(|g| 4.2 * g + 1.3).collect();
        let (top_b, _) = select_topk_weights(&rescaled, &masked, 3, 2.0).unwrap();
        assert_eq!(top_a, top_b);
    }

    #[test]
    fn heatmap_rescale_endpoints() {
        let grid = TubeGrid::new(1, 3, 1);
        let flat = saliency_heatmap(&[0.4, 0.4, 0.4], &grid).unwrap();
        assert_eq!(flat, vec![0, 0, 0]);
        let img = saliency_heatmap(&[0.0, 0.5, 1.0], &grid).unwrap();
        assert_eq!(img[0], 0);
        assert_eq!(img[2], 255);
    }
}
