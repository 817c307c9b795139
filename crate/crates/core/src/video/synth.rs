//! Synthetic corpus generation.
//!
//! Four generators cover the regimes the trainer and its verification
//! experiments need: `moving_square` (localized motion with ground-truth
//! tube occupancy), `static_texture` (spatial contrast, no motion),
//! `homogeneous` (nothing at all; the collapse regime), and `noise_field`
//! (unpredictable everything). Generation is bitwise deterministic given
//! the seed. Moving-square clips get a sidecar `<clip>.occ.json` listing
//! the occupied tube indices per frame.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::clip::{write_clip, VideoClip};
use crate::video::manifest::{write_manifest, ManifestRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    MovingSquare,
    StaticTexture,
    Homogeneous,
    NoiseField,
}

fn default_channels() -> u32 {
    1
}
fn default_background() -> u8 {
    20
}
fn default_foreground() -> u8 {
    230
}
fn default_one() -> u32 {
    1
}

/// One block of clips sharing a generator and geometry.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusEntry {
    pub generator: GeneratorKind,
    pub count: usize,
    pub frames: u32,
    pub height: u32,
    pub width: u32,
    #[serde(default = "default_channels")]
    pub channels: u32,
    pub dataset_id: String,
    pub specialty_id: String,
    #[serde(default = "default_background")]
    pub background: u8,
    #[serde(default = "default_foreground")]
    pub foreground: u8,
    /// Square side in patches (moving_square only).
    #[serde(default = "default_one")]
    pub square_patches: u32,
    /// Patch-aligned movement per frame (moving_square only).
    #[serde(default = "default_one")]
    pub speed_patches: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub patch_size: u32,
    pub entries: Vec<CorpusEntry>,
}

impl CorpusSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: CorpusSpec =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("corpus spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::config("patch_size must be positive"));
        }
        if self.entries.is_empty() {
            return Err(Error::config("corpus spec has no entries"));
        }
        for e in &self.entries {
            if e.count == 0 {
                return Err(Error::config("entry count must be >= 1"));
            }
            if e.frames == 0 || e.channels == 0 {
                return Err(Error::config("frames and channels must be >= 1"));
            }
            if e.height % self.patch_size != 0 || e.width % self.patch_size != 0 {
                return Err(Error::Config(format!(
                    "clip {}x{} not divisible by patch {}",
                    e.height, e.width, self.patch_size
                )));
            }
            if e.generator == GeneratorKind::MovingSquare {
                let gh = e.height / self.patch_size;
                let gw = e.width / self.patch_size;
                if e.square_patches == 0 || e.square_patches > gh.min(gw) {
                    return Err(Error::config("square_patches must fit the patch grid"));
                }
                if e.speed_patches == 0 {
                    return Err(Error::config("speed_patches must be >= 1"));
                }
            }
        }
        Ok(())
    }
}

pub struct GeneratedCorpus {
    pub manifest_path: PathBuf,
    pub clip_count: usize,
    pub sidecar_count: usize,
}

/// Writes the corpus under `out_dir`: UVC1 clips, a `manifest.jsonl`, and
/// `.occ.json` sidecars for moving-square clips.
pub fn gen_synthetic_corpus(out_dir: &Path, spec: &CorpusSpec, seed: u64) -> Result<GeneratedCorpus> {
    spec.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut sidecars = 0usize;
    for entry in &spec.entries {
        for i in 0..entry.count {
            let name = format!("{}_{i:05}.uvc1", entry.dataset_id);
            let path = out_dir.join(&name);
            let (clip, occupancy) = generate_clip(entry, spec.patch_size, &mut rng)?;
            write_clip(&clip, &path)?;
            if let Some(frames) = occupancy {
                let sidecar = out_dir.join(format!("{name}.occ.json"));
                let text = serde_json::to_string(&frames)
                    .map_err(|e| Error::Config(format!("sidecar encode: {e}")))?;
                fs::write(&sidecar, text)
                    .map_err(|e| Error::io(sidecar.display().to_string(), e))?;
                sidecars += 1;
            }
            records.push(ManifestRecord {
                clip_path: name,
                dataset_id: entry.dataset_id.clone(),
                specialty_id: entry.specialty_id.clone(),
                num_frames: entry.frames,
            });
        }
    }
    let manifest_path = out_dir.join("manifest.jsonl");
    write_manifest(&manifest_path, &records)?;
    Ok(GeneratedCorpus {
        manifest_path,
        clip_count: records.len(),
        sidecar_count: sidecars,
    })
}

/// Reads a sidecar: one array of occupied tube indices per frame.
pub fn read_sidecar(clip_path: &Path) -> Result<Vec<Vec<usize>>> {
    let path = PathBuf::from(format!("{}.occ.json", clip_path.display()));
    let text = fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.display().to_string(),
        offset: 0,
        reason: e.to_string(),
    })
}

type Occupancy = Option<Vec<Vec<usize>>>;

fn generate_clip<R: Rng>(
    entry: &CorpusEntry,
    patch: u32,
    rng: &mut R,
) -> Result<(VideoClip, Occupancy)> {
    match entry.generator {
        GeneratorKind::Homogeneous => {
            let value: u8 = rng.random();
            let n = (entry.frames * entry.height * entry.width * entry.channels) as usize;
            let clip = VideoClip::new(
                entry.frames,
                entry.height,
                entry.width,
                entry.channels,
                1.0,
                vec![value; n],
            )?;
            Ok((clip, None))
        }
        GeneratorKind::NoiseField => {
            let n = (entry.frames * entry.height * entry.width * entry.channels) as usize;
            let pixels: Vec<u8> = (0..n).map(|_| rng.random()).collect();
            let clip = VideoClip::new(
                entry.frames,
                entry.height,
                entry.width,
                entry.channels,
                1.0,
                pixels,
            )?;
            Ok((clip, None))
        }
        GeneratorKind::StaticTexture => {
            let frame_len = (entry.height * entry.width * entry.channels) as usize;
            let frame: Vec<u8> = (0..frame_len).map(|_| rng.random()).collect();
            let mut pixels = Vec::with_capacity(frame_len * entry.frames as usize);
            for _ in 0..entry.frames {
                pixels.extend_from_slice(&frame);
            }
            let clip = VideoClip::new(
                entry.frames,
                entry.height,
                entry.width,
                entry.channels,
                1.0,
                pixels,
            )?;
            Ok((clip, None))
        }
        GeneratorKind::MovingSquare => generate_moving_square(entry, patch, rng),
    }
}

fn generate_moving_square<R: Rng>(
    entry: &CorpusEntry,
    patch: u32,
    rng: &mut R,
) -> Result<(VideoClip, Occupancy)> {
    let grid_h = (entry.height / patch) as i64;
    let grid_w = (entry.width / patch) as i64;
    let sq = entry.square_patches as i64;
    let speed = entry.speed_patches as i64;

    let mut r = rng.random_range(0..=(grid_h - sq)) as i64;
    let mut c = rng.random_range(0..=(grid_w - sq)) as i64;
    let mut dir = loop {
        let dr = rng.random_range(-1..=1i64);
        let dc = rng.random_range(-1..=1i64);
        if dr != 0 || dc != 0 {
            break (dr, dc);
        }
    };

    let n = (entry.frames * entry.height * entry.width * entry.channels) as usize;
    let mut clip = VideoClip::new(
        entry.frames,
        entry.height,
        entry.width,
        entry.channels,
        1.0,
        vec![entry.background; n],
    )?;
    let mut occupancy = Vec::with_capacity(entry.frames as usize);

    for t in 0..entry.frames {
        let mut occupied = Vec::new();
        for pr in r..r + sq {
            for pc in c..c + sq {
                occupied.push((pr * grid_w + pc) as usize);
                for dy in 0..patch {
                    for dx in 0..patch {
                        for ch in 0..entry.channels {
                            clip.set_pixel(
                                t,
                                pr as u32 * patch + dy,
                                pc as u32 * patch + dx,
                                ch,
                                entry.foreground,
                            );
                        }
                    }
                }
            }
        }
        occupancy.push(occupied);

        // advance with reflection at the grid border
        let (mut dr, mut dc) = dir;
        if r + dr * speed < 0 || r + dr * speed + sq > grid_h {
            dr = -dr;
        }
        if c + dc * speed < 0 || c + dc * speed + sq > grid_w {
            dc = -dc;
        }
        dir = (dr, dc);
        r = (r + dr * speed).clamp(0, grid_h - sq);
        c = (c + dc * speed).clamp(0, grid_w - sq);
    }
    Ok((clip, Some(occupancy)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tubes::{motion_scores, TubeGrid};
    use crate::video::clip::read_clip;

    fn square_spec(count: usize) -> CorpusSpec {
        CorpusSpec {
            patch_size: 8,
            entries: vec![CorpusEntry {
                generator: GeneratorKind::MovingSquare,
                count,
                frames: 6,
                height: 32,
                width: 32,
                channels: 1,
                dataset_id: "sq".into(),
                specialty_id: "synthetic".into(),
                background: 20,
                foreground: 230,
                square_patches: 1,
                speed_patches: 1,
            }],
        }
    }

    #[test]
    fn corpus_is_bitwise_deterministic() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        gen_synthetic_corpus(d1.path(), &square_spec(3), 42).unwrap();
        gen_synthetic_corpus(d2.path(), &square_spec(3), 42).unwrap();
        let mut names: Vec<_> = fs::read_dir(d1.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert!(!names.is_empty());
        for name in names {
            let a = fs::read(d1.path().join(&name)).unwrap();
            let b = fs::read(d2.path().join(&name)).unwrap();
            assert_eq!(a, b, "mismatch in {name:?}");
        }
    }

    #[test]
    fn moving_square_saliency_argmax_is_occupied() {
        let dir = tempfile::tempdir().unwrap();
        let out = gen_synthetic_corpus(dir.path(), &square_spec(5), 9).unwrap();
        assert_eq!(out.clip_count, 5);
        assert_eq!(out.sidecar_count, 5);
        for i in 0..5 {
            let path = dir.path().join(format!("sq_{i:05}.uvc1"));
            let clip = read_clip(&path).unwrap();
            let grid = TubeGrid::for_clip(&clip, 8).unwrap();
            let occ = read_sidecar(&path).unwrap();
            assert_eq!(occ.len(), clip.frames() as usize);
            let union: std::collections::BTreeSet<usize> =
                occ.iter().flatten().copied().collect();
            let g = motion_scores(&clip, &grid).unwrap();
            let argmax = g
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert!(union.contains(&argmax), "argmax {argmax} not in {union:?}");
        }
    }

    #[test]
    fn homogeneous_clips_have_zero_motion() {
        let spec = CorpusSpec {
            patch_size: 8,
            entries: vec![CorpusEntry {
                generator: GeneratorKind::Homogeneous,
                count: 2,
                frames: 4,
                height: 16,
                width: 16,
                channels: 1,
                dataset_id: "flat".into(),
                specialty_id: "synthetic".into(),
                background: 20,
                foreground: 230,
                square_patches: 1,
                speed_patches: 1,
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        gen_synthetic_corpus(dir.path(), &spec, 1).unwrap();
        let clip = read_clip(&dir.path().join("flat_00000.uvc1")).unwrap();
        let grid = TubeGrid::for_clip(&clip, 8).unwrap();
        let g = motion_scores(&clip, &grid).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_count_rejected_before_any_io() {
        let mut spec = square_spec(1);
        spec.entries[0].count = 0;
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("nonexistent");
        assert!(gen_synthetic_corpus(&target, &spec, 1).is_err());
        assert!(!target.exists());
    }

    #[test]
    fn unknown_generator_name_rejected() {
        let text = r#"{"patch_size":8,"entries":[{"generator":"optical_flow","count":1,
            "frames":4,"height":16,"width":16,"dataset_id":"x","specialty_id":"y"}]}"#;
        assert!(CorpusSpec::from_json(text).is_err());
    }
}
