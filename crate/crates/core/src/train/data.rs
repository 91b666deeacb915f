use std::path::Path;

use rayon::prelude::*;

use crate::cohort::{resolve, CohortManifest, Modality, PairedSample, Split, Task};
use crate::error::{Error, Result};
use crate::models::ArchId;
use crate::nn::Tensor;
use crate::volume::read_volume;

/// Which volumes feed the network: one modality, or MRI then PET channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Inputs {
    One(Modality),
    Both,
}

impl Inputs {
    pub fn for_arch(arch: ArchId, modality: Modality) -> Self {
        if arch.is_fusion() {
            Inputs::Both
        } else {
            Inputs::One(modality)
        }
    }

    pub fn channels(self) -> usize {
        match self {
            Inputs::One(_) => 1,
            Inputs::Both => 2,
        }
    }
}

/// In-memory samples of one split, each stored as `[C, z, y, x]`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub grid: [usize; 3],
    pub channels: usize,
    pub samples: Vec<PairedSample>,
    pub classes: Vec<usize>,
    data: Vec<Vec<f32>>,
}

impl Dataset {
    pub fn from_parts(grid: [usize; 3], channels: usize, data: Vec<Vec<f32>>, classes: Vec<usize>) -> Result<Self> {
        let plane = grid.iter().product::<usize>() * channels;
        if data.len() != classes.len() || data.iter().any(|d| d.len() != plane) {
            return Err(Error::shape("dataset parts disagree in length".to_string()));
        }
        Ok(Self {
            grid,
            channels,
            samples: Vec::new(),
            classes,
            data,
        })
    }

    /// Loads the samples of `split` whose label belongs to `task`.
    pub fn load(manifest: &CohortManifest, base: &Path, split: Split, task: Task, inputs: Inputs) -> Result<Self> {
        let chosen: Vec<(PairedSample, usize)> = manifest
            .samples_in(split)
            .filter_map(|s| task.class_of(s.label).map(|c| (s.clone(), c)))
            .collect();
        let vols: Vec<(Vec<f32>, [usize; 3])> = chosen
            .par_iter()
            .map(|(s, _)| {
                let paths: Vec<&str> = match inputs {
                    Inputs::One(Modality::MRI) => vec![&s.mri_path],
                    Inputs::One(Modality::PET) => vec![&s.pet_path],
                    Inputs::Both => vec![&s.mri_path, &s.pet_path],
                };
                let mut data = Vec::new();
                let mut dims = None;
                for p in paths {
                    let v = read_volume(resolve(base, p))?;
                    if dims.is_some_and(|d| d != v.dims()) {
                        return Err(Error::shape(format!(
                            "{}: MRI and PET grids differ; two-channel input needs matching grids",
                            s.patient_id
                        )));
                    }
                    dims = Some(v.dims());
                    data.extend(v.into_voxels());
                }
                Ok((data, dims.unwrap()))
            })
            .collect::<Result<_>>()?;
        let grid = vols.first().map(|v| v.1).unwrap_or([0; 3]);
        if let Some((_, d)) = vols.iter().find(|v| v.1 != grid) {
            return Err(Error::shape(format!("sample grids differ: {grid:?} vs {d:?}")));
        }
        let (samples, classes) = chosen.into_iter().unzip();
        Ok(Self {
            grid,
            channels: inputs.channels(),
            samples,
            classes,
            data: vols.into_iter().map(|v| v.0).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let pos = self.classes.iter().filter(|&&c| c == 1).count();
        [self.len() - pos, pos]
    }

    /// `[n, C, z, y, x]` batch of the given sample indices.
    pub fn batch(&self, idx: &[usize]) -> Result<Tensor<f32>> {
        let mut data = Vec::with_capacity(idx.len() * self.data.first().map_or(0, Vec::len));
        for &i in idx {
            data.extend_from_slice(&self.data[i]);
        }
        let [x, y, z] = self.grid;
        Tensor::from_vec(&[idx.len(), self.channels, z, y, x], data)
    }
}
