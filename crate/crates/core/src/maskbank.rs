//! Geometrically valid context/synthesis mask pairs harvested from depth
//! discontinuities (or object outlines).

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::estimate_disparity_blockmatch;
use crate::dataio::{load_dataset, read_json, read_mask_png, write_json, write_mask_png, DatasetDescriptor};
use crate::error::{ensure, Error, Result};
use crate::image::{BinaryMask, DisparityMap};
use crate::par::prelude::*;

const N4: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
const N8: [(isize, isize); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Connected foreground-side pixels of a depth discontinuity.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    /// Raster-ordered pixels on the nearer side of the jump.
    pub pixels: Vec<(usize, usize)>,
    pub threshold: f64,
}

impl Chain {
    /// Topmost-leftmost pixel.
    pub fn anchor(&self) -> (usize, usize) {
        self.pixels[0]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPair {
    pub context: BinaryMask,
    pub synthesis: BinaryMask,
    pub anchor: (usize, usize),
    pub source_id: String,
}

impl MaskPair {
    /// Checks the pair invariants: both regions non-empty and disjoint.
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.context.height == self.synthesis.height && self.context.width == self.synthesis.width,
            "mask pair sizes differ"
        );
        ensure!(!self.synthesis.is_empty(), "synthesis mask is empty");
        ensure!(!self.context.is_empty(), "context mask is empty");
        ensure!(self.context.is_disjoint(&self.synthesis), "context and synthesis overlap");
        Ok(())
    }

    /// Crop both masks to the bounding box of their union.
    pub fn tight(&self) -> MaskPair {
        let (x0, y0, x1, y1) = self.context.union(&self.synthesis).bbox().expect("non-empty pair");
        let (w, h) = (x1 - x0 + 1, y1 - y0 + 1);
        MaskPair {
            context: self.context.crop(x0 as isize, y0 as isize, w, h),
            synthesis: self.synthesis.crop(x0 as isize, y0 as isize, w, h),
            anchor: (self.anchor.0 - x0, self.anchor.1 - y0),
            source_id: self.source_id.clone(),
        }
    }
}

/// Why a chain produced no mask pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skipped(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskBankParams {
    /// Disparity jump (px) that counts as a discontinuity.
    pub threshold: f64,
    /// `None` scales 20 px at 256 linearly with `crop_size`.
    pub context_width: Option<usize>,
    pub synthesis_width: Option<usize>,
    pub crop_size: usize,
    /// Chains shorter than this are treated as noise.
    pub min_chain_pixels: usize,
    /// Block-matching settings used when a sample has no ground truth.
    pub block: usize,
}

impl Default for MaskBankParams {
    fn default() -> Self {
        Self {
            threshold: 3.0,
            context_width: None,
            synthesis_width: None,
            crop_size: 256,
            min_chain_pixels: 8,
            block: 9,
        }
    }
}

impl MaskBankParams {
    pub fn widths(&self) -> (usize, usize) {
        let scaled = ((20.0 * self.crop_size as f64 / 256.0).round() as usize).max(1);
        (self.context_width.unwrap_or(scaled), self.synthesis_width.unwrap_or(scaled))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub source_id: String,
    pub anchor: (usize, usize),
    pub width: usize,
    pub height: usize,
    pub context_file: String,
    pub synthesis_file: String,
    pub context_pixels: usize,
    pub synthesis_pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankManifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskBank {
    pub entries: Vec<MaskPair>,
    pub manifest: BankManifest,
}

fn neighbour(x: usize, y: usize, (dx, dy): (isize, isize), w: usize, h: usize) -> Option<(usize, usize)> {
    let (nx, ny) = (x as isize + dx, y as isize + dy);
    (nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h).then_some((nx as usize, ny as usize))
}

/// Pixels whose 4-neighbour is farther by more than `threshold`, grouped into
/// 8-connected chains ordered by anchor.
pub fn find_discontinuities(depth: &DisparityMap, threshold: f64) -> Result<Vec<Chain>> {
    ensure!(threshold > 0.0, "discontinuity threshold must be positive, got {threshold}");
    let (w, h) = (depth.width, depth.height);
    let on = BinaryMask::from_fn(h, w, |x, y| {
        depth.is_valid(x, y)
            && N4.iter().any(|&o| {
                neighbour(x, y, o, w, h)
                    .is_some_and(|(nx, ny)| depth.is_valid(nx, ny) && depth.get(x, y) - depth.get(nx, ny) > threshold)
            })
    });

    let mut seen = BinaryMask::empty(h, w);
    let mut chains = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !on.get(x, y) || seen.get(x, y) {
                continue;
            }
            let mut pixels = Vec::new();
            let mut queue = VecDeque::from([(x, y)]);
            seen.set(x, y, true);
            while let Some((px, py)) = queue.pop_front() {
                pixels.push((px, py));
                for &o in &N8 {
                    if let Some((nx, ny)) = neighbour(px, py, o, w, h) {
                        if on.get(nx, ny) && !seen.get(nx, ny) {
                            seen.set(nx, ny, true);
                            queue.push_back((nx, ny));
                        }
                    }
                }
            }
            pixels.sort_by_key(|&(px, py)| (py, px));
            chains.push(Chain { pixels, threshold });
        }
    }
    Ok(chains)
}

/// Grow `seed` by `iterations` 8-neighbour steps. A step from p to q is taken
/// only when `allow(p, q)` holds and q is not in `forbidden`.
fn dilate(
    seed: &BinaryMask,
    iterations: usize,
    forbidden: Option<&BinaryMask>,
    allow: impl Fn((usize, usize), (usize, usize)) -> bool,
) -> BinaryMask {
    let (w, h) = (seed.width, seed.height);
    let mut region = seed.clone();
    let mut frontier: Vec<(usize, usize)> =
        (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).filter(|&(x, y)| seed.get(x, y)).collect();
    for _ in 0..iterations {
        let mut next = Vec::new();
        for &(x, y) in &frontier {
            for &o in &N8 {
                if let Some(q) = neighbour(x, y, o, w, h) {
                    if region.get(q.0, q.1) || forbidden.is_some_and(|f| f.get(q.0, q.1)) || !allow((x, y), q) {
                        continue;
                    }
                    region.set(q.0, q.1, true);
                    next.push(q);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    region
}

/// Context band on the far side and synthesis band on the near side of a
/// chain. Neither band crosses another discontinuity.
pub fn propagate_regions(
    chain: &Chain,
    depth: &DisparityMap,
    context_width: usize,
    synthesis_width: usize,
) -> Result<std::result::Result<MaskPair, Skipped>> {
    ensure!(context_width >= 1 && synthesis_width >= 1, "region widths must be >= 1");
    ensure!(!chain.pixels.is_empty(), "empty chain");
    let (w, h) = (depth.width, depth.height);
    let thr = chain.threshold;
    let continuous = |p: (usize, usize), q: (usize, usize)| {
        depth.is_valid(q.0, q.1) && (depth.get(p.0, p.1) - depth.get(q.0, q.1)).abs() <= thr
    };

    let mut seed = BinaryMask::empty(h, w);
    for &(x, y) in &chain.pixels {
        seed.set(x, y, true);
    }
    let synthesis = dilate(&seed, synthesis_width - 1, None, continuous);

    let mut context_seed = BinaryMask::empty(h, w);
    for &(x, y) in &chain.pixels {
        for &o in &N8 {
            if let Some((nx, ny)) = neighbour(x, y, o, w, h) {
                if depth.is_valid(nx, ny) && depth.get(x, y) - depth.get(nx, ny) > thr && !synthesis.get(nx, ny) {
                    context_seed.set(nx, ny, true);
                }
            }
        }
    }
    if context_seed.is_empty() {
        return Ok(Err(Skipped(format!("chain at {:?} has no background side", chain.anchor()))));
    }
    let context = dilate(&context_seed, context_width - 1, Some(&synthesis), continuous);
    Ok(Ok(MaskPair { context, synthesis, anchor: chain.anchor(), source_id: String::new() }))
}

/// Mask pairs for every chain of one depth map, tightly cropped.
pub fn pairs_from_depth(depth: &DisparityMap, source_id: &str, params: &MaskBankParams) -> Result<Vec<MaskPair>> {
    let (cw, sw) = params.widths();
    let mut out = Vec::new();
    for chain in find_discontinuities(depth, params.threshold)? {
        if chain.pixels.len() < params.min_chain_pixels {
            continue;
        }
        match propagate_regions(&chain, depth, cw, sw)? {
            Ok(mut pair) => {
                pair.source_id = source_id.to_string();
                out.push(pair.tight());
            }
            Err(Skipped(why)) => log::warn!("{source_id}: skipped {why}"),
        }
    }
    Ok(out)
}

/// Segmentation route: the object outline is the chain and its interior the
/// near side, via a two-level pseudo-depth map.
pub fn pairs_from_instance(mask: &BinaryMask, source_id: &str, params: &MaskBankParams) -> Result<Vec<MaskPair>> {
    let depth = DisparityMap::from_fn(mask.height, mask.width, |x, y| if mask.get(x, y) { 1.0 } else { 0.0 });
    let p = MaskBankParams { threshold: 0.5, ..params.clone() };
    pairs_from_depth(&depth, source_id, &p)
}

impl MaskBank {
    pub fn from_entries(entries: Vec<MaskPair>) -> Result<Self> {
        ensure!(!entries.is_empty(), "mask bank must not be empty");
        for e in &entries {
            e.validate()?;
        }
        let manifest = BankManifest {
            entries: entries
                .iter()
                .enumerate()
                .map(|(index, e)| ManifestEntry {
                    index,
                    source_id: e.source_id.clone(),
                    anchor: e.anchor,
                    width: e.context.width,
                    height: e.context.height,
                    context_file: format!("masks/{index:05}_context.png"),
                    synthesis_file: format!("masks/{index:05}_synthesis.png"),
                    context_pixels: e.context.count(),
                    synthesis_pixels: e.synthesis.count(),
                })
                .collect(),
        };
        Ok(Self { entries, manifest })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Writes `masks/*.png` and `manifest.json` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        for (e, m) in self.entries.iter().zip(&self.manifest.entries) {
            write_mask_png(&e.context, &dir.join(&m.context_file))?;
            write_mask_png(&e.synthesis, &dir.join(&m.synthesis_file))?;
        }
        write_json(&dir.join("manifest.json"), &self.manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: BankManifest = read_json(&dir.join("manifest.json"))?;
        let entries = manifest
            .entries
            .iter()
            .map(|m| {
                Ok(MaskPair {
                    context: read_mask_png(&dir.join(&m.context_file))?,
                    synthesis: read_mask_png(&dir.join(&m.synthesis_file))?,
                    anchor: m.anchor,
                    source_id: m.source_id.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let bank = Self::from_entries(entries)?;
        ensure!(bank.manifest == manifest, "mask bank manifest in {} is inconsistent", dir.display());
        Ok(bank)
    }
}

/// Harvest mask pairs from every image of a dataset. Samples without ground
/// truth fall back to block-matched disparity.
pub fn build_bank(descriptor: &DatasetDescriptor, params: &MaskBankParams) -> Result<MaskBank> {
    let mut samples = Vec::new();
    for s in load_dataset(descriptor)? {
        match s {
            Ok(s) => samples.push(s),
            Err(e) => log::warn!("{e}"),
        }
    }
    if samples.is_empty() {
        return Err(Error::data("no input images"));
    }
    let per_image: Vec<Result<Vec<MaskPair>>> = samples
        .par_iter()
        .map(|s| {
            let depth = match &s.gt_disparity {
                Some(d) => d.clone(),
                None => {
                    let max_d = (s.left.width / 4).max(1);
                    estimate_disparity_blockmatch(s, max_d, params.block)?.disparity
                }
            };
            pairs_from_depth(&depth, &s.id, params)
        })
        .collect();
    let mut entries = Vec::new();
    for (s, r) in samples.iter().zip(per_image) {
        let pairs = r?;
        if pairs.is_empty() {
            log::info!("{}: no objects found", s.id);
        }
        entries.extend(pairs);
    }
    // stable: chain order within an image is kept
    entries.sort_by(|a, b| a.source_id.cmp(&b.source_id));
    if entries.is_empty() {
        return Err(Error::data("no discontinuities found in any input image"));
    }
    MaskBank::from_entries(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::DatasetLayout;
    use crate::synthetic::SyntheticSceneParams;

    fn square_map() -> DisparityMap {
        DisparityMap::from_fn(32, 32, |x, y| if (11..21).contains(&x) && (11..21).contains(&y) { 20.0 } else { 2.0 })
    }

    /// Chebyshev-distance band around a rectangle, independent of `dilate`.
    fn ring(x0: isize, y0: isize, x1: isize, y1: isize, inner: isize, outer: isize) -> BinaryMask {
        BinaryMask::from_fn(32, 32, |x, y| {
            let (x, y) = (x as isize, y as isize);
            let dx = (x0 - x).max(x - x1).max(0);
            let dy = (y0 - y).max(y - y1).max(0);
            let inside = x >= x0 && x <= x1 && y >= y0 && y <= y1;
            let d = if inside { -((x - x0).min(x1 - x).min(y - y0).min(y1 - y)) - 1 } else { dx.max(dy) };
            d >= inner && d <= outer && d != 0
        })
    }

    #[test]
    fn constant_map_has_no_discontinuities() {
        assert!(find_discontinuities(&DisparityMap::constant(8, 8, 4.0), 3.0).unwrap().is_empty());
    }

    #[test]
    fn square_gives_one_closed_chain_on_its_boundary() {
        let d = square_map();
        let chains = find_discontinuities(&d, 3.0).unwrap();
        assert_eq!(chains.len(), 1);
        // brute-force scan: inside pixels with an outside 4-neighbour
        let mut expect = Vec::new();
        for y in 0..32usize {
            for x in 0..32usize {
                let inside = |x: isize, y: isize| (11..21).contains(&x) && (11..21).contains(&y);
                let (xi, yi) = (x as isize, y as isize);
                if inside(xi, yi) && N4.iter().any(|&(dx, dy)| !inside(xi + dx, yi + dy)) {
                    expect.push((x, y));
                }
            }
        }
        assert_eq!(chains[0].pixels, expect);
        assert_eq!(expect.len(), 36);
    }

    #[test]
    fn two_squares_give_two_chains() {
        let d = DisparityMap::from_fn(32, 32, |x, y| {
            if (2..8).contains(&x) && (2..8).contains(&y) || (20..28).contains(&x) && (18..26).contains(&y) {
                10.0
            } else {
                0.0
            }
        });
        assert_eq!(find_discontinuities(&d, 3.0).unwrap().len(), 2);
    }

    #[test]
    fn square_bands_match_morphological_oracle() {
        let d = square_map();
        let chain = &find_discontinuities(&d, 3.0).unwrap()[0];
        for width in [1, 5] {
            let pair = propagate_regions(chain, &d, width, width).unwrap().unwrap();
            let w = width as isize;
            assert_eq!(pair.context, ring(11, 11, 20, 20, 1, w), "context width {width}");
            assert_eq!(pair.synthesis, ring(11, 11, 20, 20, -w, -1), "synthesis width {width}");
            pair.validate().unwrap();
        }
    }

    #[test]
    fn random_fixtures_keep_pairs_disjoint() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let (x0, y0) = (rng.random_range(0..20), rng.random_range(0..20));
            let (w, h) = (rng.random_range(2..12), rng.random_range(2..12));
            let fg = rng.random_range(5.0..30.0);
            let d = DisparityMap::from_fn(24, 24, |x, y| {
                if (x0..x0 + w).contains(&x) && (y0..y0 + h).contains(&y) {
                    fg
                } else {
                    (x as f64) * 0.1
                }
            });
            for chain in find_discontinuities(&d, 3.0).unwrap() {
                if let Ok(pair) = propagate_regions(&chain, &d, rng.random_range(1..6), rng.random_range(1..6)).unwrap()
                {
                    pair.validate().unwrap();
                }
            }
        }
    }

    #[test]
    fn border_only_chain_is_skipped() {
        // near side fills everything reachable: the far side is absent
        let d = DisparityMap::constant(6, 6, 9.0);
        let chain = Chain { pixels: vec![(0, 0)], threshold: 3.0 };
        assert!(propagate_regions(&chain, &d, 2, 2).unwrap().is_err());
    }

    #[test]
    fn translation_equivariance() {
        let a = square_map();
        let b = DisparityMap::from_fn(32, 32, |x, y| a.get((x + 29) % 32, (y + 30) % 32));
        let pa = pairs_from_depth(&a, "a", &MaskBankParams { crop_size: 64, ..Default::default() }).unwrap();
        let pb = pairs_from_depth(&b, "a", &MaskBankParams { crop_size: 64, ..Default::default() }).unwrap();
        assert_eq!(pa.len(), 1);
        assert_eq!(pa[0].context, pb[0].context);
        assert_eq!(pa[0].synthesis, pb[0].synthesis);
    }

    #[test]
    fn instance_outline_acts_as_chain() {
        let m = BinaryMask::from_fn(20, 20, |x, y| (5..12).contains(&x) && (6..14).contains(&y));
        let pairs = pairs_from_instance(
            &m,
            "obj",
            &MaskBankParams { context_width: Some(2), synthesis_width: Some(2), ..Default::default() },
        )
        .unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].synthesis.count(), 7 * 8 - 3 * 4);
    }

    fn synthetic_descriptor(count: usize) -> DatasetDescriptor {
        DatasetDescriptor {
            root: ".".into(),
            layout: DatasetLayout::Synthetic,
            split: vec![],
            synthetic: SyntheticSceneParams { count, ..Default::default() },
        }
    }

    #[test]
    fn bank_has_one_entry_per_square_object_and_is_deterministic() {
        let params = MaskBankParams { crop_size: 64, ..Default::default() };
        let bank = build_bank(&synthetic_descriptor(10), &params).unwrap();
        assert_eq!(bank.len(), 10);
        let again = build_bank(&synthetic_descriptor(10), &params).unwrap();
        assert_eq!(bank, again);

        let dir = tempfile::tempdir().unwrap();
        bank.save(dir.path()).unwrap();
        let first = std::fs::read(dir.path().join("manifest.json")).unwrap();
        again.save(dir.path()).unwrap();
        assert_eq!(first, std::fs::read(dir.path().join("manifest.json")).unwrap());
        assert_eq!(MaskBank::load(dir.path()).unwrap(), bank);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let err = build_bank(&synthetic_descriptor(0), &MaskBankParams::default()).unwrap_err();
        assert!(err.to_string().contains("no input images"));
    }
}
