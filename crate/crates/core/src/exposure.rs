//! Exposure mappings `G_i = G(i, W_{-i})`.

use std::collections::BTreeSet;
use std::io::Write;

use crate::error::{Error, Result};
use crate::population::{Adjacency, Population};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RatioWeighting {
    /// Threshold is the mean over clusters of the cluster treated share.
    #[default]
    Cluster,
    /// Threshold is the mean over units of the leave-one-out ratio.
    Unit,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExposureKind {
    AnyTreatedNeighbor,
    /// Bin edges `0 = e_0 < e_1 < ... < e_k = 1`; bin `b` is `[e_b, e_{b+1})`
    /// and the last bin is closed at 1.
    FractionTreatedBinned { edges: Vec<f64> },
    LeaveOneOutClusterRatio { weighting: RatioWeighting },
}

#[derive(Clone, Debug)]
pub struct ExposureSpec<'a, T> {
    pub kind: ExposureKind,
    pub adjacency: Option<&'a Adjacency<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExposureAssignment {
    pub levels: Vec<i64>,
    pub level_set: Vec<i64>,
    pub eligible: Vec<bool>,
}

impl ExposureAssignment {
    pub fn eligible_count(&self) -> usize {
        self.eligible.iter().filter(|&&e| e).count()
    }

    pub fn write_levels<T: Real, W: Write>(&self, pop: &Population<T>, mut out: W) -> Result<()> {
        writeln!(out, "id,g")?;
        for (u, g) in pop.units().iter().zip(&self.levels) {
            writeln!(out, "{},{g}", u.id)?;
        }
        Ok(())
    }
}

/// Anything that maps a full treatment vector to per-unit exposure levels.
pub trait ExposureMapping<T> {
    fn levels(&self, pop: &Population<T>, w: &[bool]) -> Result<Vec<i64>>;
}

impl<T: Real> ExposureSpec<'_, T> {
    fn adjacency_for(&self, pop: &Population<T>) -> Result<&Adjacency<T>> {
        let adj = self.adjacency.ok_or_else(|| Error::Config("neighbor-based exposure requires an adjacency".into()))?;
        if adj.len() != pop.len() {
            return Err(Error::Config("adjacency was built on a different population".into()));
        }
        Ok(adj)
    }

    fn validate(&self) -> Result<()> {
        if let ExposureKind::FractionTreatedBinned { edges } = &self.kind {
            let ok = edges.len() >= 2 && edges[0] == 0.0 && *edges.last().unwrap() == 1.0 && edges.windows(2).all(|w| w[0] < w[1]);
            if !ok {
                return Err(Error::Config("fraction bins must be increasing edges from 0 to 1".into()));
            }
        }
        Ok(())
    }
}

impl<T: Real> ExposureMapping<T> for ExposureSpec<'_, T> {
    fn levels(&self, pop: &Population<T>, w: &[bool]) -> Result<Vec<i64>> {
        self.validate()?;
        match &self.kind {
            ExposureKind::AnyTreatedNeighbor => {
                let adj = self.adjacency_for(pop)?;
                Ok((0..pop.len()).map(|i| adj.neighbors(i).iter().any(|&j| w[j]) as i64).collect())
            }
            ExposureKind::FractionTreatedBinned { edges } => {
                let adj = self.adjacency_for(pop)?;
                Ok((0..pop.len())
                    .map(|i| {
                        let nb = adj.neighbors(i);
                        if nb.is_empty() {
                            return 0;
                        }
                        let frac = nb.iter().filter(|&&j| w[j]).count() as f64 / nb.len() as f64;
                        let last = edges.len() - 2;
                        (0..=last).find(|&b| frac < edges[b + 1]).unwrap_or(last) as i64
                    })
                    .collect())
            }
            ExposureKind::LeaveOneOutClusterRatio { weighting } => cluster_ratio_levels(pop, w, *weighting),
        }
    }
}

/// Leave-one-out cluster ratio exposure. The threshold seen by unit `i` is
/// computed with `W_i` held at 0, so `G_i` depends on `W_{-i}` only.
fn cluster_ratio_levels<T: Real>(pop: &Population<T>, w: &[bool], weighting: RatioWeighting) -> Result<Vec<i64>> {
    let (cl, labels) = pop.cluster_indices()?;
    let k = labels.len();
    let mut size = vec![0usize; k];
    let mut treated = vec![0usize; k];
    for (i, &c) in cl.iter().enumerate() {
        size[c] += 1;
        treated[c] += w[i] as usize;
    }
    if let Some(c) = (0..k).find(|&c| size[c] < 2) {
        return Err(Error::Config(format!("cluster `{}` has fewer than 2 units", labels[c])));
    }
    let ratio = |c: usize, t: usize, wi: bool| (t - wi as usize) as f64 / (size[c] - 1) as f64;
    // Threshold with per-cluster treated counts `t`.
    let threshold = |t: &[usize]| -> f64 {
        match weighting {
            RatioWeighting::Cluster => (0..k).map(|c| t[c] as f64 / size[c] as f64).sum::<f64>() / k as f64,
            // Sum over units of LOO ratios: in cluster c, sum_i (t_c - w_i)/(m_c - 1) = t_c.
            RatioWeighting::Unit => (0..k).map(|c| t[c] as f64).sum::<f64>() / pop.len() as f64,
        }
    };
    let base = threshold(&treated);
    let mut out = Vec::with_capacity(pop.len());
    for (i, &c) in cl.iter().enumerate() {
        let r = ratio(c, treated[c], w[i]);
        let thr = if w[i] {
            let mut t = treated.clone();
            t[c] -= 1;
            threshold(&t)
        } else {
            base
        };
        out.push((r > thr) as i64);
    }
    Ok(out)
}

pub fn compute_exposure<T: Real>(pop: &Population<T>, spec: &ExposureSpec<'_, T>) -> Result<ExposureAssignment> {
    let w = pop.treatments();
    let levels = spec.levels(pop, &w)?;
    let eligible = match spec.kind {
        ExposureKind::AnyTreatedNeighbor | ExposureKind::FractionTreatedBinned { .. } => {
            let adj = spec.adjacency_for(pop)?;
            (0..pop.len()).map(|i| !adj.is_isolated(i)).collect()
        }
        ExposureKind::LeaveOneOutClusterRatio { .. } => vec![true; pop.len()],
    };
    let level_set: Vec<i64> = levels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    Ok(ExposureAssignment { levels, level_set, eligible })
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ToggleReport {
    pub checked: usize,
    /// `(unit index, level before, level after own flip)`.
    pub violations: Vec<(usize, i64, i64)>,
}

/// Flips each unit's own treatment and reports units whose exposure moves.
pub fn toggle_invariance_check<T: Real, M: ExposureMapping<T>>(pop: &Population<T>, mapping: &M) -> Result<ToggleReport> {
    let mut w = pop.treatments();
    let base = mapping.levels(pop, &w)?;
    let mut report = ToggleReport { checked: pop.len(), violations: Vec::new() };
    for i in 0..pop.len() {
        w[i] = !w[i];
        let flipped = mapping.levels(pop, &w)?;
        w[i] = !w[i];
        if flipped[i] != base[i] {
            report.violations.push((i, base[i], flipped[i]));
        }
    }
    Ok(report)
}
