//! Dataset plumbing: IDX archives, the resize/replicate/center preprocessing
//! rules, semi-supervised label splits, batching and the synthetic two-domain
//! pair used for desk-scale runs.

pub mod idx;
pub mod preprocess;
pub mod synth;

use crate::error::{Error, Result};
use crate::nets::{Domain, IMAGE_PIXELS};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// A minibatch of images in [-1, 1] with optional labels and a domain tag.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBatch {
    pub images: Vec<f32>,
    pub n: usize,
    pub labels: Option<Vec<u8>>,
    pub domain: Domain,
}

impl DomainBatch {
    pub fn new(images: Vec<f32>, n: usize, labels: Option<Vec<u8>>, domain: Domain) -> Result<Self> {
        if images.len() != n * IMAGE_PIXELS {
            return Err(Error::shape(
                "domain_batch",
                format!("want {} values for {} images, got {}", n * IMAGE_PIXELS, n, images.len()),
            ));
        }
        if images.iter().any(|v| !v.is_finite() || *v < -1.0 || *v > 1.0) {
            return Err(Error::arg("domain_batch", "image values must lie in [-1, 1]"));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::shape("domain_batch", format!("{} labels for {} images", l.len(), n)));
            }
        }
        Ok(DomainBatch { images, n, labels, domain })
    }
}

/// A full split of one domain. `labels` is empty for unlabeled sets.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSet {
    pub images: Vec<f32>,
    pub n: usize,
    pub labels: Vec<u8>,
    pub domain: Domain,
}

impl DomainSet {
    pub fn new(images: Vec<f32>, n: usize, labels: Vec<u8>, domain: Domain) -> Result<Self> {
        if images.len() != n * IMAGE_PIXELS {
            return Err(Error::shape(
                "domain_set",
                format!("want {} values for {} images, got {}", n * IMAGE_PIXELS, n, images.len()),
            ));
        }
        if !labels.is_empty() && labels.len() != n {
            return Err(Error::shape("domain_set", format!("{} labels for {} images", labels.len(), n)));
        }
        Ok(DomainSet { images, n, labels, domain })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_labeled(&self) -> bool {
        !self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.images[i * IMAGE_PIXELS..(i + 1) * IMAGE_PIXELS]
    }

    /// Copy the indexed rows into a batch, carrying labels when present.
    pub fn batch(&self, idxs: &[usize]) -> Result<DomainBatch> {
        let mut images = Vec::with_capacity(idxs.len() * IMAGE_PIXELS);
        for &i in idxs {
            if i >= self.n {
                return Err(Error::arg("batch", format!("index {i} out of range ({})", self.n)));
            }
            images.extend_from_slice(self.image(i));
        }
        let labels = if self.is_labeled() { Some(idxs.iter().map(|i| self.labels[*i]).collect()) } else { None };
        DomainBatch::new(images, idxs.len(), labels, self.domain)
    }

    pub fn subset(&self, idxs: &[usize]) -> Result<DomainSet> {
        let b = self.batch(idxs)?;
        DomainSet::new(b.images, b.n, b.labels.unwrap_or_default(), self.domain)
    }

    /// Same images with the labels stripped.
    pub fn without_labels(&self) -> DomainSet {
        DomainSet { images: self.images.clone(), n: self.n, labels: Vec::new(), domain: self.domain }
    }
}

/// Train/test splits for both domains.
#[derive(Debug, Clone)]
pub struct DatasetPair {
    pub train_a: DomainSet,
    pub test_a: DomainSet,
    pub train_b: DomainSet,
    pub test_b: DomainSet,
    pub k: usize,
}

/// Result of a semi-supervised split: a small labeled subset and the
/// remainder with labels stripped. The ground-truth labels of the remainder
/// are kept aside for oracle evaluation only.
#[derive(Debug, Clone)]
pub struct SemisupSplit {
    pub labeled: DomainSet,
    pub unlabeled: DomainSet,
    pub labeled_idx: Vec<usize>,
    pub unlabeled_idx: Vec<usize>,
    pub unlabeled_true_labels: Vec<u8>,
}

/// Draw `per_class` samples of every category into the labeled subset,
/// deterministically for a given seed.
pub fn semisup_split(set: &DomainSet, per_class: usize, k: usize, seed: u64) -> Result<SemisupSplit> {
    if !set.is_labeled() {
        return Err(Error::arg("semisup_split", "source set carries no labels"));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, l) in set.labels.iter().enumerate() {
        if (*l as usize) >= k {
            return Err(Error::arg("semisup_split", format!("label {l} out of range for {k} categories")));
        }
        by_class[*l as usize].push(i);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut labeled_idx = Vec::with_capacity(per_class * k);
    let mut unlabeled_idx = Vec::new();
    for idxs in &mut by_class {
        if idxs.len() < per_class {
            return Err(Error::arg(
                "semisup_split",
                format!("a class has only {} samples, want {per_class} labeled", idxs.len()),
            ));
        }
        idxs.shuffle(&mut rng);
        labeled_idx.extend_from_slice(&idxs[..per_class]);
        unlabeled_idx.extend_from_slice(&idxs[per_class..]);
    }
    labeled_idx.sort_unstable();
    unlabeled_idx.sort_unstable();
    let labeled = set.subset(&labeled_idx)?;
    let unlabeled_full = set.subset(&unlabeled_idx)?;
    let unlabeled_true_labels = unlabeled_full.labels.clone();
    Ok(SemisupSplit {
        labeled,
        unlabeled: unlabeled_full.without_labels(),
        labeled_idx,
        unlabeled_idx,
        unlabeled_true_labels,
    })
}

#[cfg(test)]
mod tests;
