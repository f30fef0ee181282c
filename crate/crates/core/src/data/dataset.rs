use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::ensure;
use crate::numcore::Tensor;
use crate::protocol::align_ids;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Unpartitioned labeled samples `[n × d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub ids: Vec<u64>,
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(ids: Vec<u64>, features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let features = features.flatten_rows();
        ensure!(
            ids.len() == features.rows() && labels.len() == features.rows(),
            Shape,
            "{} ids, {} labels, {} feature rows",
            ids.len(),
            labels.len(),
            features.rows()
        );
        ensure!(
            labels.iter().all(|&y| y < num_classes),
            Contract,
            "labels must lie in [0, {})",
            num_classes
        );
        Ok(Self {
            ids,
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// First `n` rows (or all of them).
    pub fn head(&self, n: usize) -> Result<Self> {
        let rows: Vec<usize> = (0..n.min(self.len())).collect();
        Self::new(
            rows.iter().map(|&r| self.ids[r]).collect(),
            self.features.select_rows(&rows)?,
            rows.iter().map(|&r| self.labels[r]).collect(),
            self.num_classes,
        )
    }
}

/// Splits `[n × d]` into `parties` contiguous column stripes of width
/// `⌊d / K⌋`; the last stripe absorbs the remainder.
pub fn vertical_partition(features: &Tensor, parties: usize) -> Result<Vec<Tensor>> {
    let d = features.cols();
    ensure!(parties >= 1, Contract, "need at least one party");
    ensure!(parties <= d, Contract, "{} parties for {} feature columns", parties, d);
    let base = d / parties;
    let mut widths = vec![base; parties];
    widths[parties - 1] += d - base * parties;
    features.split_cols(&widths)
}

/// Feature shards of `K` parties over a shared, aligned id space. Labels are
/// kept alongside for the active party; shards and labels are immutable and
/// cheaply shared.
#[derive(Clone, Debug)]
pub struct VerticalDataset {
    ids: Arc<Vec<u64>>,
    shards: Vec<Arc<Tensor>>,
    labels: Arc<Vec<usize>>,
    num_classes: usize,
    split: Split,
}

impl VerticalDataset {
    pub fn new(
        ids: Vec<u64>,
        shards: Vec<Tensor>,
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        ensure!(!shards.is_empty(), Shape, "no party shards");
        let n = ids.len();
        for (k, s) in shards.iter().enumerate() {
            ensure!(s.rows() == n, Shape, "party {} shard has {} rows, expected {}", k + 1, s.rows(), n);
        }
        ensure!(labels.len() == n, Shape, "{} labels for {} samples", labels.len(), n);
        ensure!(
            labels.iter().all(|&y| y < num_classes),
            Contract,
            "labels must lie in [0, {})",
            num_classes
        );
        Ok(Self {
            ids: Arc::new(ids),
            shards: shards.into_iter().map(Arc::new).collect(),
            labels: Arc::new(labels),
            num_classes,
            split,
        })
    }

    pub fn from_dataset(ds: &Dataset, parties: usize, split: Split) -> Result<Self> {
        let shards = vertical_partition(&ds.features, parties)?;
        Self::new(ds.ids.clone(), shards, ds.labels.clone(), ds.num_classes, split)
    }

    /// Builds a dataset from per-party tables keyed by sample id, keeping
    /// only ids present everywhere, in ascending id order.
    pub fn from_party_tables(
        party_ids: &[Vec<u64>],
        shards: &[Tensor],
        label_ids: &[u64],
        labels: &[usize],
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        ensure!(party_ids.len() == shards.len(), Shape, "{} id lists for {} shards", party_ids.len(), shards.len());
        let mut lists = party_ids.to_vec();
        lists.push(label_ids.to_vec());
        let maps = align_ids(&lists)?;
        let aligned_shards = shards
            .iter()
            .zip(&maps)
            .map(|(s, m)| s.select_rows(m))
            .collect::<Result<Vec<_>>>()?;
        let label_map = &maps[maps.len() - 1];
        let ids = label_map.iter().map(|&i| label_ids[i]).collect();
        let labels = label_map.iter().map(|&i| labels[i]).collect();
        Self::new(ids, aligned_shards, labels, num_classes, split)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_parties(&self) -> usize {
        self.shards.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn shard(&self, k: usize) -> &Arc<Tensor> {
        &self.shards[k]
    }

    pub fn shards(&self) -> &[Arc<Tensor>] {
        &self.shards
    }

    pub(crate) fn labels_arc(&self) -> &Arc<Vec<usize>> {
        &self.labels
    }

    pub fn widths(&self) -> Vec<usize> {
        self.shards.iter().map(|s| s.cols()).collect()
    }

    /// Rows whose label is (or is not) in `classes`.
    pub fn rows_in(&self, classes: &BTreeSet<usize>, inside: bool) -> Vec<usize> {
        (0..self.len()).filter(|&i| classes.contains(&self.labels[i]) == inside).collect()
    }

    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let shards = self
            .shards
            .iter()
            .map(|s| s.select_rows(rows))
            .collect::<Result<Vec<_>>>()?;
        let ids = rows.iter().map(|&r| self.ids[r]).collect();
        let labels = rows.iter().map(|&r| self.labels[r]).collect();
        Self::new(ids, shards, labels, self.num_classes, self.split)
    }

    /// Same features with replaced labels.
    pub fn relabeled(&self, labels: Vec<usize>) -> Result<Self> {
        ensure!(labels.len() == self.len(), Shape, "{} labels for {} samples", labels.len(), self.len());
        ensure!(labels.iter().all(|&y| y < self.num_classes), Contract, "label out of range");
        Ok(Self {
            labels: Arc::new(labels),
            ..self.clone()
        })
    }

    /// Re-concatenates the shards in party order.
    pub fn concat_features(&self) -> Result<Tensor> {
        let parts: Vec<&Tensor> = self.shards.iter().map(|s| s.as_ref()).collect();
        Tensor::hcat(&parts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn widths(d: usize, k: usize) -> Vec<usize> {
        let t = Tensor::zeros(vec![1, d]);
        vertical_partition(&t, k).unwrap().iter().map(|s| s.cols()).collect()
    }

    #[test]
    fn partition_widths() {
        assert_eq!(widths(784, 2), vec![392, 392]);
        assert_eq!(widths(784, 4), vec![196; 4]);
        assert_eq!(widths(5, 2), vec![2, 3]);
        assert!(vertical_partition(&Tensor::zeros(vec![1, 3]), 4).is_err());
    }

    #[test]
    fn party_tables_align_by_id() {
        // party 1 holds ids 1,3,5; party 2 holds 5,3,7; labels for 3,5,9
        let s1 = Tensor::matrix(3, 1, vec![10., 30., 50.]).unwrap();
        let s2 = Tensor::matrix(3, 1, vec![50., 30., 70.]).unwrap();
        let vd = VerticalDataset::from_party_tables(
            &[vec![1, 3, 5], vec![5, 3, 7]],
            &[s1, s2],
            &[9, 5, 3],
            &[0, 1, 0],
            2,
            Split::Train,
        )
        .unwrap();
        assert_eq!(vd.ids(), &[3, 5]);
        assert_eq!(vd.shard(0).data(), &[30., 50.]);
        assert_eq!(vd.shard(1).data(), &[30., 50.]);
        assert_eq!(vd.labels(), &[0, 1]);
    }
}
