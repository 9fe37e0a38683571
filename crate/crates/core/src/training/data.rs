use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Result, TrainError};
use crate::geometry::{Homography, Intrinsics, RelativePose};
use crate::hsidata::{
    generate_epipolar_pair, generate_planar_pair, load_cube, synthetic_cube, DatasetManifest,
    HsiCube, PairMode, SyntheticPairSpec, ValidityMask,
};
use crate::metrics::{PlanarSample, PoseSample};

/// A real second view of the base image's scene.
#[derive(Clone, Debug)]
pub struct SecondView {
    pub image: HsiCube,
    pub k0: Intrinsics,
    pub k2: Intrinsics,
    /// Camera 0 to camera 2.
    pub pose: RelativePose,
}

/// Base image, its homographic warp, and optionally a second posed view.
#[derive(Clone, Debug)]
pub struct TrainingTriplet {
    pub base: HsiCube,
    pub warped: HsiCube,
    pub h01: Homography,
    /// Pixels of `warped` with content.
    pub valid: ValidityMask,
    pub second: Option<SecondView>,
}

impl TrainingTriplet {
    /// Base and warped view as a homography-benchmark sample.
    pub fn planar_sample(&self, id: impl Into<String>) -> PlanarSample {
        PlanarSample {
            id: id.into(),
            image0: self.base.clone(),
            image1: self.warped.clone(),
            h01: self.h01,
            mask1: Some(self.valid.clone()),
        }
    }

    /// Base and second view as a pose-benchmark sample.
    pub fn pose_sample(&self, id: impl Into<String>) -> Option<PoseSample> {
        let s = self.second.as_ref()?;
        Some(PoseSample {
            id: id.into(),
            image0: self.base.clone(),
            image2: s.image.clone(),
            k0: s.k0,
            k2: s.k2,
            pose: s.pose,
        })
    }
}

/// Indexable collection of triplets.
pub trait TripletSource {
    fn name(&self) -> &str;
    fn len(&self) -> usize;
    fn get(&self, index: usize) -> Result<TrainingTriplet>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, Default)]
pub struct InMemoryDataset {
    pub name: String,
    pub items: Vec<TrainingTriplet>,
}

impl TripletSource for InMemoryDataset {
    fn name(&self) -> &str {
        &self.name
    }

    fn len(&self) -> usize {
        self.items.len()
    }

    fn get(&self, index: usize) -> Result<TrainingTriplet> {
        Ok(self.items[index].clone())
    }
}

/// Triplets listed in a manifest, loaded from disk on demand.
#[derive(Clone, Debug)]
pub struct ManifestDataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    name: String,
}

impl ManifestDataset {
    /// Reads `<dir>/manifest.json`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let root = dir.as_ref().to_path_buf();
        let manifest = DatasetManifest::load(root.join("manifest.json"))?;
        Ok(Self {
            name: root.display().to_string(),
            root,
            manifest,
        })
    }
}

impl TripletSource for ManifestDataset {
    fn name(&self) -> &str {
        &self.name
    }

    fn len(&self) -> usize {
        self.manifest.triplets.len()
    }

    fn get(&self, index: usize) -> Result<TrainingTriplet> {
        let m = &self.manifest;
        let t = &m.triplets[index];
        let base = load_cube(m.cube_path(&self.root, t.base))?;
        let warped = load_cube(m.cube_path(&self.root, t.warped))?;
        let valid = ValidityMask::from_homography(&t.h01, warped.height(), warped.width());
        let second = match t.second {
            Some(s) => Some(SecondView {
                image: load_cube(m.cube_path(&self.root, s))?,
                k0: m.frames[t.base].intrinsics,
                k2: m.frames[s].intrinsics,
                pose: m.relative_pose(t.base, s)?,
            }),
            None => None,
        };
        Ok(TrainingTriplet {
            base,
            warped,
            h01: t.h01,
            valid,
            second,
        })
    }
}

/// A synthetic triplet. Planar mode renders a flat texture and warps it;
/// epipolar mode renders a two-camera scene and warps its first view.
pub fn synthetic_triplet(
    mode: PairMode,
    seed: u64,
    bands: usize,
    height: usize,
    width: usize,
) -> Result<TrainingTriplet> {
    let warp_spec =
        SyntheticPairSpec::new(PairMode::Planar, seed ^ 0x5eed_0001, bands, height, width);
    match mode {
        PairMode::Planar => {
            let base = synthetic_cube(bands, height, width, seed);
            let pair = generate_planar_pair(&base, &warp_spec)?;
            Ok(TrainingTriplet {
                base,
                warped: pair.image,
                h01: pair.h01,
                valid: pair.valid,
                second: None,
            })
        }
        PairMode::Epipolar => {
            let ep = generate_epipolar_pair(&SyntheticPairSpec::new(
                PairMode::Epipolar,
                seed,
                bands,
                height,
                width,
            ))?;
            let pair = generate_planar_pair(&ep.i0, &warp_spec)?;
            Ok(TrainingTriplet {
                base: ep.i0,
                warped: pair.image,
                h01: pair.h01,
                valid: pair.valid,
                second: Some(SecondView {
                    image: ep.i2,
                    k0: ep.k0,
                    k2: ep.k2,
                    pose: ep.pose,
                }),
            })
        }
    }
}

/// Batches of `(dataset, index)` for one epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochPlan {
    pub batches: Vec<Vec<(usize, usize)>>,
    /// Datasets that ran out mid-epoch and were reshuffled, in order.
    pub resampled: Vec<usize>,
}

impl EpochPlan {
    pub fn frames(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }
}

/// Plans an epoch of `min(cap, total)` frames in batches of `batch_size`.
/// Slot `s` of every batch draws from dataset `s mod k`, so with two
/// datasets each contributes half of each batch. Each dataset is visited in
/// a random order; one that runs out is reshuffled and reused.
pub fn epoch_plan<R: Rng>(
    lens: &[usize],
    cap: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<EpochPlan> {
    if lens.is_empty() || lens.contains(&0) {
        return Err(TrainError::Config(format!(
            "every dataset needs frames, sizes {lens:?}"
        )));
    }
    if batch_size == 0 {
        return Err(TrainError::Config("batch_size must be at least 1".into()));
    }
    let total = cap.min(lens.iter().sum());
    let mut orders: Vec<Vec<usize>> = lens
        .iter()
        .map(|&n| {
            let mut o: Vec<usize> = (0..n).collect();
            o.shuffle(rng);
            o
        })
        .collect();
    let mut cursor = vec![0usize; lens.len()];
    let mut plan = EpochPlan::default();
    let mut drawn = 0;
    while drawn < total {
        let size = batch_size.min(total - drawn);
        let mut batch = Vec::with_capacity(size);
        for slot in 0..size {
            let d = slot % lens.len();
            if cursor[d] == lens[d] {
                orders[d].shuffle(rng);
                cursor[d] = 0;
                plan.resampled.push(d);
            }
            batch.push((d, orders[d][cursor[d]]));
            cursor[d] += 1;
        }
        drawn += size;
        plan.batches.push(batch);
    }
    Ok(plan)
}
