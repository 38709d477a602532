use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_pfm, read_png};
use crate::error::{Error, Result};
use crate::image::{DisparityMap, ImageBuffer};
use crate::synthetic::{SyntheticSceneParams, SyntheticScenes};

/// Rectified stereo pair with optional left-referenced ground-truth disparity.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoSample {
    pub id: String,
    pub left: ImageBuffer,
    pub right: ImageBuffer,
    pub gt_disparity: Option<DisparityMap>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetLayout {
    /// `frames_*pass/**/left/*.png` with `right/` siblings and
    /// `disparity/**/left/*.pfm` mirrors, as in SceneFlow.
    SceneflowLike,
    /// `left/*.png`, `right/*.png`, optional `disparity/*.pfm`.
    FlatPairs,
    /// Procedurally generated layered scenes; `root` is unused.
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetDescriptor {
    pub root: PathBuf,
    pub layout: DatasetLayout,
    /// Restrict to these ids (empty = everything).
    pub split: Vec<String>,
    pub synthetic: SyntheticSceneParams,
}

impl Default for DatasetDescriptor {
    fn default() -> Self {
        Self {
            root: PathBuf::from("data"),
            layout: DatasetLayout::Synthetic,
            split: Vec::new(),
            synthetic: SyntheticSceneParams::default(),
        }
    }
}

/// A sample that failed to load; iteration continues past it.
#[derive(Debug)]
pub struct SampleError {
    pub id: String,
    pub error: Error,
}

impl std::fmt::Display for SampleError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "sample {}: {}", self.id, self.error)
    }
}

struct PairPaths {
    id: String,
    left: PathBuf,
    right: PathBuf,
    disparity: Option<PathBuf>,
}

/// Lazily load every pair of the dataset in lexicographic id order.
pub fn load_dataset(
    descriptor: &DatasetDescriptor,
) -> Result<Box<dyn Iterator<Item = std::result::Result<StereoSample, SampleError>>>> {
    if descriptor.layout == DatasetLayout::Synthetic {
        let split = descriptor.split.clone();
        let scenes = SyntheticScenes::new(descriptor.synthetic.clone());
        return Ok(Box::new(scenes.filter(move |s| split.is_empty() || split.contains(&s.id)).map(Ok)));
    }

    let root = &descriptor.root;
    if !root.is_dir() {
        return Err(Error::data(format!("dataset root {} is not a directory", root.display())));
    }
    let mut pairs = match descriptor.layout {
        DatasetLayout::FlatPairs => flat_pairs(root)?,
        DatasetLayout::SceneflowLike => sceneflow_pairs(root)?,
        DatasetLayout::Synthetic => unreachable!(),
    };
    if !descriptor.split.is_empty() {
        pairs.retain(|p| descriptor.split.contains(&p.id));
    }
    pairs.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(Box::new(pairs.into_iter().map(load_pair)))
}

fn load_pair(p: PairPaths) -> std::result::Result<StereoSample, SampleError> {
    let wrap = |error| SampleError { id: p.id.clone(), error };
    if !p.right.is_file() {
        return Err(wrap(Error::data(format!("missing right image {}", p.right.display()))));
    }
    let left = read_png(&p.left).map_err(wrap)?;
    let right = read_png(&p.right).map_err(wrap)?;
    if (left.width, left.height) != (right.width, right.height) {
        return Err(wrap(Error::data(format!(
            "left {}x{} and right {}x{} differ",
            left.width, left.height, right.width, right.height
        ))));
    }
    let gt_disparity = match &p.disparity {
        Some(d) if d.is_file() => {
            // some datasets store disparities as negatives
            let mut map = read_pfm(d).map_err(wrap)?;
            map.values.iter_mut().for_each(|v| *v = v.abs());
            Some(map)
        }
        _ => None,
    };
    Ok(StereoSample { id: p.id, left, right, gt_disparity })
}

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn is_png(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn flat_pairs(root: &Path) -> Result<Vec<PairPaths>> {
    let left_dir = root.join("left");
    if !left_dir.is_dir() {
        return Err(Error::data(format!("{} has no left/ directory", root.display())));
    }
    Ok(list_dir(&left_dir)?
        .into_iter()
        .filter(|p| is_png(p))
        .map(|left| {
            let name = left.file_name().unwrap().to_owned();
            let stem = left.file_stem().unwrap().to_string_lossy().into_owned();
            PairPaths {
                id: stem.clone(),
                right: root.join("right").join(&name),
                disparity: Some(root.join("disparity").join(format!("{stem}.pfm"))),
                left,
            }
        })
        .collect())
}

fn sceneflow_pairs(root: &Path) -> Result<Vec<PairPaths>> {
    let mut lefts = Vec::new();
    collect_left_pngs(root, root, &mut lefts)?;
    Ok(lefts
        .into_iter()
        .map(|left| {
            let rel = left.strip_prefix(root).unwrap().to_path_buf();
            let comps: Vec<String> = rel.iter().map(|c| c.to_string_lossy().into_owned()).collect();
            let right = swap_component(&rel, "left", "right");
            // frames_cleanpass/A/0000/left/0006.png -> disparity/A/0000/left/0006.pfm
            let tail: PathBuf = if comps.first().is_some_and(|c| c.starts_with("frames_")) {
                rel.iter().skip(1).collect()
            } else {
                rel.clone()
            };
            let id = comps.iter().filter(|c| c.as_str() != "left").cloned().collect::<Vec<_>>().join("/");
            PairPaths {
                id: id.trim_end_matches(".png").to_string(),
                right: root.join(right),
                disparity: Some(root.join("disparity").join(tail).with_extension("pfm")),
                left,
            }
        })
        .collect())
}

fn swap_component(rel: &Path, from: &str, to: &str) -> PathBuf {
    rel.iter().map(|c| if c == from { to.as_ref() } else { c }).collect()
}

fn collect_left_pngs(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for p in list_dir(dir)? {
        if p.is_dir() {
            if dir == root && p.file_name().is_some_and(|n| n == "disparity") {
                continue;
            }
            collect_left_pngs(root, &p, out)?;
        } else if is_png(&p) && p.parent().and_then(Path::file_name).is_some_and(|n| n == "left") {
            out.push(p);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{write_pfm, write_png};

    fn img(seed: usize) -> ImageBuffer {
        ImageBuffer::from_fn(4, 6, 3, |x, y, c| ((x + y * 3 + c + seed) % 7) as f64 / 7.0)
    }

    #[test]
    fn flat_pairs_in_path_order_with_optional_disparity() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        for (i, name) in ["b", "a", "c"].iter().enumerate() {
            write_png(&img(i), &root.join("left").join(format!("{name}.png"))).unwrap();
            write_png(&img(i + 1), &root.join("right").join(format!("{name}.png"))).unwrap();
        }
        write_pfm(&DisparityMap::constant(4, 6, 2.0), &root.join("disparity/a.pfm")).unwrap();
        let desc = DatasetDescriptor {
            root: root.to_path_buf(),
            layout: DatasetLayout::FlatPairs,
            split: vec![],
            synthetic: Default::default(),
        };
        let samples: Vec<_> = load_dataset(&desc).unwrap().map(|s| s.unwrap()).collect();
        let ids: Vec<_> = samples.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert!(samples[0].gt_disparity.is_some());
        assert!(samples[1].gt_disparity.is_none());
    }

    #[test]
    fn missing_right_and_corrupt_png_are_per_sample_errors() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        write_png(&img(0), &root.join("left/a.png")).unwrap();
        write_png(&img(0), &root.join("left/b.png")).unwrap();
        write_png(&img(0), &root.join("right/b.png")).unwrap();
        write_png(&img(0), &root.join("left/c.png")).unwrap();
        std::fs::write(root.join("right/c.png"), b"garbage").unwrap();
        let desc = DatasetDescriptor {
            root: root.to_path_buf(),
            layout: DatasetLayout::FlatPairs,
            split: vec![],
            synthetic: Default::default(),
        };
        let results: Vec<_> = load_dataset(&desc).unwrap().collect();
        assert_eq!(results.len(), 3);
        assert!(results[0].as_ref().unwrap_err().to_string().contains("missing right"));
        assert!(results[1].is_ok());
        assert!(results[2].as_ref().unwrap_err().to_string().contains("c.png"));
    }

    #[test]
    fn sceneflow_layout_resolves_mirrored_disparity() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let base = root.join("frames_cleanpass/A/0000");
        write_png(&img(0), &base.join("left/0006.png")).unwrap();
        write_png(&img(1), &base.join("right/0006.png")).unwrap();
        write_pfm(&DisparityMap::constant(4, 6, 1.5), &root.join("disparity/A/0000/left/0006.pfm")).unwrap();
        let desc = DatasetDescriptor {
            root: root.to_path_buf(),
            layout: DatasetLayout::SceneflowLike,
            split: vec![],
            synthetic: Default::default(),
        };
        let s: Vec<_> = load_dataset(&desc).unwrap().map(|s| s.unwrap()).collect();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].id, "frames_cleanpass/A/0000/0006");
        assert_eq!(s[0].gt_disparity.as_ref().unwrap().get(0, 0), 1.5);
    }

    #[test]
    fn missing_root_is_an_error() {
        let desc = DatasetDescriptor {
            root: "/definitely/not/here".into(),
            layout: DatasetLayout::FlatPairs,
            split: vec![],
            synthetic: Default::default(),
        };
        assert!(load_dataset(&desc).is_err());
    }
}
