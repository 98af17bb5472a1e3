//! Whole synthetic datasets and their on-disk layout.
//!
//! Train and test splits use disjoint classes. Rotation is drawn for the
//! training split only; test images stay unrotated so that evaluation
//! regimes control the angle between pair members exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::io::{from_bytes, save_normalized, to_bytes, DatasetManifest, ManifestRecord, Split};
use super::synth::{mix, ClassTexture, Degradation, SampleDraw};
use super::{intensity_stats, NormalizedIris};
use crate::error::{Error, Result};
use crate::train::LabeledSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub train_classes: usize,
    pub train_samples: usize,
    pub test_classes: usize,
    pub test_samples: usize,
    pub seed: u64,
    pub degradation: Degradation,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            train_classes: 40,
            train_samples: 15,
            test_classes: 20,
            test_samples: 4,
            seed: 0,
            degradation: Degradation {
                rotation_range_deg: (0.0, 45.0),
                dilation_range: (-0.1, 0.1),
                noise_std: 0.03,
                shading_amp: 0.15,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub label: usize,
    pub split: Split,
    pub class_seed: u64,
    pub index: u64,
    pub draw: SampleDraw,
    /// Quantized to 8 bits, exactly as stored on disk.
    pub image: NormalizedIris,
}

impl SynthSample {
    pub fn file_name(&self) -> PathBuf {
        PathBuf::from(format!(
            "{}/c{:03}_s{:02}.pgm",
            self.split.as_str(),
            self.label,
            self.index
        ))
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train_classes < 2 || self.test_classes == 1 {
            return Err(Error::invalid(
                "synthetic dataset",
                "need at least 2 training classes and 0 or at least 2 test classes",
            ));
        }
        if self.train_samples < 2 || (self.test_classes > 0 && self.test_samples < 2) {
            return Err(Error::invalid(
                "synthetic dataset",
                "each class needs at least 2 samples",
            ));
        }
        self.degradation.validate()
    }

    /// Train classes take labels `0..train_classes`, test classes follow.
    /// With `test_classes = 0` there is no test split.
    pub fn generate(&self) -> Result<Vec<SynthSample>> {
        self.validate()?;
        let test_degradation = Degradation {
            rotation_range_deg: (0.0, 0.0),
            ..self.degradation.clone()
        };
        let mut out = Vec::new();
        let splits = [
            (
                Split::Train,
                0,
                self.train_classes,
                self.train_samples,
                &self.degradation,
            ),
            (
                Split::Test,
                self.train_classes,
                self.test_classes,
                self.test_samples,
                &test_degradation,
            ),
        ];
        for (split, first, classes, samples, degradation) in splits {
            for label in first..first + classes {
                let class_seed = mix(self.seed ^ mix(label as u64 + 1));
                let texture = ClassTexture::new(class_seed);
                for index in 0..samples as u64 {
                    let (img, draw) = texture.sample(index, degradation)?;
                    let image =
                        from_bytes(img.width, img.height, &to_bytes(&img))?.with_class(label);
                    out.push(SynthSample {
                        label,
                        split,
                        class_seed,
                        index,
                        draw,
                        image,
                    });
                }
            }
        }
        Ok(out)
    }
}

/// Manifest of generated samples, with training-split intensity statistics.
pub fn synth_manifest(root: &Path, samples: &[SynthSample]) -> Result<DatasetManifest> {
    let (mean, std) = intensity_stats(
        samples
            .iter()
            .filter(|s| s.split == Split::Train)
            .map(|s| &s.image),
    )?;
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        records: samples
            .iter()
            .map(|s| ManifestRecord {
                path: s.file_name(),
                label: s.label,
                split: s.split,
            })
            .collect(),
        mean: Some(mean),
        std: Some(std),
    })
}

/// Per-sample generator draws as CSV.
pub fn sidecar_csv(samples: &[SynthSample]) -> String {
    let mut out =
        String::from("path,label,split,class_seed,index,rotation_deg,gamma,shading_phase\n");
    for s in samples {
        out.push_str(&format!(
            "{},{},{},{},{},{:?},{:?},{:?}\n",
            s.file_name().display(),
            s.label,
            s.split.as_str(),
            s.class_seed,
            s.index,
            s.draw.rotation_deg,
            s.draw.gamma,
            s.draw.shading_phase
        ));
    }
    out
}

/// Writes images, `manifest.csv` and `samples.csv` under `dir`.
pub fn write_synth(dir: &Path, samples: &[SynthSample]) -> Result<DatasetManifest> {
    for split in [Split::Train, Split::Test] {
        let sub = dir.join(split.as_str());
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    }
    for s in samples {
        save_normalized(&dir.join(s.file_name()), &s.image)?;
    }
    let manifest = synth_manifest(dir, samples)?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("manifest.csv", manifest.to_csv())?;
    write("samples.csv", sidecar_csv(samples))?;
    Ok(manifest)
}

/// Images of one split with labels renumbered densely in label order.
pub fn labeled_split(
    records: impl IntoIterator<Item = (usize, NormalizedIris)>,
) -> Result<LabeledSet> {
    let records: Vec<_> = records.into_iter().collect();
    let dense: BTreeMap<usize, usize> = records
        .iter()
        .map(|(l, _)| *l)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, l)| (l, i))
        .collect();
    let (labels, images) = records.into_iter().map(|(l, img)| (dense[&l], img)).unzip();
    LabeledSet::new(images, labels)
}

/// Loads one split of a manifest.
pub fn load_split(manifest: &DatasetManifest, split: Split) -> Result<LabeledSet> {
    let images = manifest.load_split(split)?;
    let labels: Vec<usize> = manifest.split(split).map(|r| r.label).collect();
    labeled_split(labels.into_iter().zip(images))
}

/// Digest over labels and 8-bit pixel values of a labeled set.
pub fn dataset_digest(set: &LabeledSet) -> String {
    let mut h = Sha256::new();
    for (img, label) in set.images.iter().zip(&set.labels) {
        h.update((*label as u64).to_le_bytes());
        h.update(to_bytes(img));
    }
    h.finalize()
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}
