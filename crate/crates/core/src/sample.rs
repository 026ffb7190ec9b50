//! Estimation sample: the eligible units of a population together with
//! their exposure levels and the covariate columns available to designs.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::exposure::ExposureAssignment;
use crate::population::{Adjacency, Population};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    /// Index of each sample unit in the source population.
    pub pop_index: Vec<usize>,
    pub ids: Vec<String>,
    pub w: Vec<bool>,
    pub g: Vec<i64>,
    /// Sorted distinct exposure levels among sample units.
    pub levels: Vec<i64>,
    pub y_pre: Vec<T>,
    pub y_post: Vec<T>,
    pub y_base: Option<Vec<T>>,
    pub coords: Vec<Vec<T>>,
    pub clusters: Option<Vec<usize>>,
    /// Covariate columns: attributes `x`, neighbor means `A.x` and
    /// cluster leave-one-out means `C.x` when the geometry allows.
    pub columns: BTreeMap<String, Vec<T>>,
}

impl<T: Real> Sample<T> {
    /// Restricts to eligible units. Neighbor means use the full population.
    pub fn new(pop: &Population<T>, exposure: &ExposureAssignment, adjacency: Option<&Adjacency<T>>) -> Result<Self> {
        if exposure.levels.len() != pop.len() {
            return Err(Error::Config("exposure assignment does not match population".into()));
        }
        let keep: Vec<usize> = (0..pop.len()).filter(|&i| exposure.eligible[i]).collect();
        let units = pop.units();
        let mut full: BTreeMap<String, Vec<T>> = BTreeMap::new();
        for (k, name) in pop.attribute_names().iter().enumerate() {
            let col: Vec<T> = units.iter().map(|u| u.z[k]).collect();
            if let Some(adj) = adjacency {
                full.insert(format!("A.{name}"), adj.neighbor_mean(&col));
            }
            if pop.has_clusters() {
                let (cl, labels) = pop.cluster_indices()?;
                let mut sum = vec![T::zero(); labels.len()];
                let mut cnt = vec![0usize; labels.len()];
                for (i, &c) in cl.iter().enumerate() {
                    sum[c] += col[i];
                    cnt[c] += 1;
                }
                let loo = cl
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| if cnt[c] > 1 { (sum[c] - col[i]) / T::lit((cnt[c] - 1) as f64) } else { T::zero() })
                    .collect();
                full.insert(format!("C.{name}"), loo);
            }
            full.insert(name.clone(), col);
        }
        let columns = full.into_iter().map(|(k, v)| (k, keep.iter().map(|&i| v[i]).collect())).collect();
        let clusters = if pop.has_clusters() {
            let (cl, _) = pop.cluster_indices()?;
            Some(keep.iter().map(|&i| cl[i]).collect())
        } else {
            None
        };
        let g: Vec<i64> = keep.iter().map(|&i| exposure.levels[i]).collect();
        let mut levels = g.clone();
        levels.sort_unstable();
        levels.dedup();
        Ok(Sample {
            ids: keep.iter().map(|&i| units[i].id.clone()).collect(),
            w: keep.iter().map(|&i| units[i].w).collect(),
            levels,
            g,
            y_pre: keep.iter().map(|&i| units[i].y1).collect(),
            y_post: keep.iter().map(|&i| units[i].y2).collect(),
            y_base: if pop.has_pre_period() { Some(keep.iter().map(|&i| units[i].y0.unwrap()).collect()) } else { None },
            coords: keep.iter().map(|&i| units[i].coords.clone()).collect(),
            clusters,
            columns,
            pop_index: keep,
        })
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn dy(&self) -> Vec<T> {
        self.y_post.iter().zip(&self.y_pre).map(|(&b, &a)| b - a).collect()
    }

    pub fn column(&self, name: &str) -> Result<&[T]> {
        self.columns.get(name).map(Vec::as_slice).ok_or_else(|| Error::Schema(name.to_string()))
    }

    /// Sample whose (pre, post) outcomes are the two pre-treatment periods.
    pub fn placebo(&self) -> Result<Self> {
        let base = self.y_base.clone().ok_or_else(|| Error::Schema("pre-period outcome (y0)".into()))?;
        let mut s = self.clone();
        s.y_post = std::mem::replace(&mut s.y_pre, base);
        s.y_base = None;
        Ok(s)
    }

    /// Number of units in cell `(w, g)`.
    pub fn cell_count(&self, w: bool, g: i64) -> usize {
        self.w.iter().zip(&self.g).filter(|&(&wi, &gi)| wi == w && gi == g).count()
    }

    pub fn level_index(&self, g: i64) -> Result<usize> {
        self.levels.binary_search(&g).map_err(|_| Error::Config(format!("exposure level {g} not present among eligible units")))
    }

    /// Applies a unit permutation (`perm[k]` is the old index of new unit `k`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let pick = |v: &Vec<T>| perm.iter().map(|&k| v[k]).collect::<Vec<T>>();
        Sample {
            pop_index: perm.iter().map(|&k| self.pop_index[k]).collect(),
            ids: perm.iter().map(|&k| self.ids[k].clone()).collect(),
            w: perm.iter().map(|&k| self.w[k]).collect(),
            g: perm.iter().map(|&k| self.g[k]).collect(),
            levels: self.levels.clone(),
            y_pre: pick(&self.y_pre),
            y_post: pick(&self.y_post),
            y_base: self.y_base.as_ref().map(pick),
            coords: perm.iter().map(|&k| self.coords[k].clone()).collect(),
            clusters: self.clusters.as_ref().map(|c| perm.iter().map(|&k| c[k]).collect()),
            columns: self.columns.iter().map(|(k, v)| (k.clone(), pick(v))).collect(),
        }
    }
}
