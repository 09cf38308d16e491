//! Hamming-distance k-nearest-neighbor classification of binary images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::patterns::{hamming_words, BinaryImage, LabeledDataset};

pub const DEFAULT_K: usize = 5;
pub const NUM_CLASSES: usize = 10;

/// Hamming distance on the packed representation.
pub fn hamming(a: &BinaryImage, b: &BinaryImage) -> Result<u32> {
    a.hamming(b)
}

/// Training images stored contiguously for the exhaustive scan.
#[derive(Debug, Clone)]
pub struct KnnModel {
    k: usize,
    d: usize,
    stride: usize,
    words: Vec<u64>,
    labels: Vec<u8>,
}

impl KnnModel {
    pub fn new(training: &LabeledDataset, k: usize) -> Result<Self> {
        training.validate()?;
        if k == 0 || k > training.len() {
            return Err(Error::domain(format!(
                "k must lie in 1..={}, got {k}",
                training.len()
            )));
        }
        let d = training.side().expect("nonempty");
        let stride = training.images[0].words().len();
        let mut words = Vec::with_capacity(stride * training.len());
        for img in &training.images {
            words.extend_from_slice(img.words());
        }
        Ok(KnnModel {
            k,
            d,
            stride,
            words,
            labels: training.labels.clone(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The `k` nearest training records as `(distance, index)`, closest first. Among
    /// equidistant records the smaller index wins.
    pub fn neighbors(&self, img: &BinaryImage) -> Result<Vec<(u32, usize)>> {
        if img.side() != self.d {
            return Err(Error::domain(format!(
                "image side {} does not match the model side {}",
                img.side(),
                self.d
            )));
        }
        let q = img.words();
        let mut best: Vec<(u32, usize)> = Vec::with_capacity(self.k + 1);
        let mut worst = u32::MAX;
        for (idx, row) in self.words.chunks_exact(self.stride).enumerate() {
            let dist = hamming_words(q, row);
            if best.len() == self.k && dist >= worst {
                continue;
            }
            // insert after every entry with distance ≤ dist, keeping index order on ties
            let pos = best.partition_point(|&(bd, _)| bd <= dist);
            best.insert(pos, (dist, idx));
            if best.len() > self.k {
                best.pop();
            }
            if best.len() == self.k {
                worst = best[self.k - 1].0;
            }
        }
        Ok(best)
    }

    /// Majority class of the `k` nearest neighbors. Vote ties go to the class with the
    /// smallest summed distance, then to the smallest class id.
    pub fn classify(&self, img: &BinaryImage) -> Result<u8> {
        let nb = self.neighbors(img)?;
        let mut votes = [0usize; NUM_CLASSES];
        let mut dist = [0u64; NUM_CLASSES];
        for &(d, idx) in &nb {
            let c = self.labels[idx] as usize;
            votes[c] += 1;
            dist[c] += d as u64;
        }
        let best = (0..NUM_CLASSES)
            .filter(|&c| votes[c] > 0)
            .min_by_key(|&c| (std::cmp::Reverse(votes[c]), dist[c], c))
            .expect("k ≥ 1");
        Ok(best as u8)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub error: f64,
    pub stderr: f64,
    pub n: usize,
    /// `confusion[true][predicted]`.
    pub confusion: [[u64; NUM_CLASSES]; NUM_CLASSES],
    pub predictions: Vec<u8>,
}

/// Misclassification rate over `testset`, with its binomial standard error.
pub fn evaluate(model: &KnnModel, testset: &LabeledDataset) -> Result<Evaluation> {
    if testset.is_empty() {
        return Err(Error::domain("cannot evaluate on an empty test set"));
    }
    testset.validate()?;
    let predictions = par::map_slice(&testset.images, |img| model.classify(img))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut confusion = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    let mut wrong = 0usize;
    for (&p, &t) in predictions.iter().zip(&testset.labels) {
        confusion[t as usize][p as usize] += 1;
        if p != t {
            wrong += 1;
        }
    }
    let n = testset.len();
    let error = wrong as f64 / n as f64;
    Ok(Evaluation {
        error,
        stderr: (error * (1.0 - error) / n as f64).sqrt(),
        n,
        confusion,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::Provenance;

    fn img_with(d: usize, ones: &[usize]) -> BinaryImage {
        let mut im = BinaryImage::zeros(d);
        for &k in ones {
            im.set_index(k, 1);
        }
        im
    }

    #[test]
    fn hamming_basics() {
        let a = img_with(28, &[0, 100, 783]);
        assert_eq!(hamming(&a, &a).unwrap(), 0);
        assert_eq!(hamming(&a, &a.complement()).unwrap(), 784);
        assert_eq!(hamming(&a, &BinaryImage::zeros(28)).unwrap(), 3);
    }

    #[test]
    fn majority_beats_proximity() {
        let q = BinaryImage::zeros(4);
        let train = LabeledDataset::new(
            vec![img_with(4, &[0, 1, 2, 3, 4]), img_with(4, &[5, 6, 7, 8, 9]), img_with(4, &[0])],
            vec![7, 7, 1],
            Provenance::Train,
        )
        .unwrap();
        let m = KnnModel::new(&train, 3).unwrap();
        assert_eq!(m.classify(&q).unwrap(), 7);
    }

    #[test]
    fn vote_tie_goes_to_smaller_distance_sum() {
        let q = BinaryImage::zeros(4);
        let train = LabeledDataset::new(
            vec![img_with(4, &[0, 1, 2, 3, 4, 5]), img_with(4, &[0, 1, 2, 3])],
            vec![2, 1],
            Provenance::Train,
        )
        .unwrap();
        let m = KnnModel::new(&train, 2).unwrap();
        assert_eq!(m.classify(&q).unwrap(), 1);
        // equal sums fall through to the class id
        let train = LabeledDataset::new(vec![img_with(4, &[1]), img_with(4, &[2])], vec![6, 3], Provenance::Train).unwrap();
        assert_eq!(KnnModel::new(&train, 2).unwrap().classify(&q).unwrap(), 3);
    }

    #[test]
    fn boundary_ties_keep_smallest_index() {
        let q = BinaryImage::zeros(3);
        let train = LabeledDataset::new(
            vec![img_with(3, &[0]), img_with(3, &[1]), img_with(3, &[2])],
            vec![4, 5, 6],
            Provenance::Train,
        )
        .unwrap();
        let m = KnnModel::new(&train, 1).unwrap();
        assert_eq!(m.neighbors(&q).unwrap(), vec![(1, 0)]);
        assert_eq!(m.classify(&q).unwrap(), 4);
    }

    #[test]
    fn evaluation_on_training_subset() {
        let imgs: Vec<_> = (0..20).map(|i| img_with(5, &[i, (i * 3) % 25])).collect();
        let labels: Vec<u8> = (0..20).map(|i| (i % 10) as u8).collect();
        let train = LabeledDataset::new(imgs, labels, Provenance::Train).unwrap();
        let m = KnnModel::new(&train, 1).unwrap();
        let e = evaluate(&m, &train.head(10)).unwrap();
        assert_eq!(e.error, 0.0);
        assert_eq!(e.confusion.iter().flatten().sum::<u64>(), 10);
        let empty = LabeledDataset::new(vec![], vec![], Provenance::Test).unwrap();
        assert!(evaluate(&m, &empty).is_err());
        assert!(KnnModel::new(&train, 21).is_err());
    }
}
