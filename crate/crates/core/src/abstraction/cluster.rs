use serde::{Deserialize, Serialize};

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub count: u64,
    sum: Vec<f64>,
    mean: Vec<f64>,
}

impl Cluster {
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }
}

/// Online threshold clustering of embeddings. Ids are dense and never
/// reused; a cluster's centre is the exact mean of its members.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    tau: f64,
    clusters: Vec<Cluster>,
}

impl ClusterSet {
    pub fn new(tau: f64) -> Self {
        assert!(tau > 0.0, "cluster threshold must be positive");
        Self {
            tau,
            clusters: Vec::new(),
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    /// Nearest cluster within `tau` (ties to the lower id), without
    /// modifying the set.
    pub fn nearest(&self, v: &[f64]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (id, c) in self.clusters.iter().enumerate() {
            let d = distance(&c.mean, v);
            if d <= self.tau && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((id, d));
            }
        }
        best.map(|(id, _)| id)
    }

    pub fn assign(&mut self, v: &[f64]) -> usize {
        match self.nearest(v) {
            Some(id) => {
                let c = &mut self.clusters[id];
                c.count += 1;
                let n = c.count as f64;
                for ((s, m), x) in c.sum.iter_mut().zip(c.mean.iter_mut()).zip(v) {
                    *s += x;
                    *m = *s / n;
                }
                id
            }
            None => {
                self.clusters.push(Cluster {
                    count: 1,
                    sum: v.to_vec(),
                    mean: v.to_vec(),
                });
                self.clusters.len() - 1
            }
        }
    }
}

/// Distances used to pick a clustering threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TauCalibration {
    pub max_within: f64,
    pub min_across: f64,
    pub tau: f64,
}

/// Threshold at the midpoint between the largest same-label distance and
/// the smallest cross-label distance.
pub fn calibrate_tau(embeddings: &[Vec<f64>], labels: &[usize]) -> Option<TauCalibration> {
    let mut max_within: f64 = 0.0;
    let mut min_across = f64::INFINITY;
    for i in 0..embeddings.len() {
        for j in i + 1..embeddings.len() {
            let d = distance(&embeddings[i], &embeddings[j]);
            if labels[i] == labels[j] {
                max_within = max_within.max(d);
            } else {
                min_across = min_across.min(d);
            }
        }
    }
    if !min_across.is_finite() {
        return None;
    }
    let tau = 0.5 * (max_within + min_across);
    (tau > 0.0).then_some(TauCalibration {
        max_within,
        min_across,
        tau,
    })
}
