//! Sandwich variances for GMM solutions: spatial HAC, EHW and
//! cluster-robust middle matrices.
//!
//! `V̂ = (R'ΨR)⁻¹ R'Ψ Ω̃ ΨR (R'ΨR)⁻¹` and `se_j = sqrt(V̂_jj / n)`, with
//! `Ω̃ = n⁻¹ Σ_i Σ_j k_ij q_i q_j'`. The SHAC weight `k_ij` is `ω(s/b)` for
//! the integer distance bin `s = ⌊ρ_ij⌋`, or `ω(ρ_ij/b)` in pairwise mode.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::gmm::GmmSolution;
use crate::linalg::{symmetric_eigen, Matrix};
use crate::population::{pairs_within, Metric};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum KernelFamily {
    #[default]
    Bartlett,
    Parzen,
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Binning {
    /// Kernel evaluated at the integer bin index `⌊ρ⌋`.
    IntegerBins,
    /// Kernel evaluated at each pair's distance.
    #[default]
    Pairwise,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: f64,
    pub binning: Binning,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: f64, binning: Binning) -> Self {
        KernelSpec { family, bandwidth, binning }
    }

    pub fn bartlett(bandwidth: f64) -> Self {
        KernelSpec::new(KernelFamily::Bartlett, bandwidth, Binning::Pairwise)
    }

    /// `ω(x)`, supported on `|x| ≤ 1`.
    pub fn omega(&self, x: f64) -> f64 {
        let a = x.abs();
        if a > 1.0 {
            return 0.0;
        }
        match self.family {
            KernelFamily::Bartlett => 1.0 - a,
            KernelFamily::Parzen => {
                if a <= 0.5 {
                    1.0 - 6.0 * a * a + 6.0 * a * a * a
                } else {
                    2.0 * (1.0 - a).powi(3)
                }
            }
            KernelFamily::Uniform => 1.0,
        }
    }

    /// Weight for a pair at distance `d`.
    pub fn weight(&self, d: f64) -> f64 {
        match self.binning {
            Binning::Pairwise => self.omega(d / self.bandwidth),
            Binning::IntegerBins => self.omega(d.floor() / self.bandwidth),
        }
    }

    /// Largest distance that can receive a nonzero weight.
    pub fn search_radius(&self) -> f64 {
        match self.binning {
            Binning::Pairwise => self.bandwidth,
            Binning::IntegerBins => self.bandwidth.floor() + 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0) || !self.bandwidth.is_finite() {
            return Err(Error::Config(format!("kernel bandwidth must be positive, got {}", self.bandwidth)));
        }
        Ok(())
    }
}

/// Unit pairs within a radius, reusable across solutions that share the
/// same units (e.g. replications on a fixed design).
#[derive(Clone, Debug, PartialEq)]
pub struct PairList {
    pub radius: f64,
    pub pairs: Vec<(usize, usize, f64)>,
}

impl PairList {
    pub fn new<T: Real>(coords: &[Vec<T>], radius: f64) -> Self {
        let pairs = pairs_within(coords, T::lit(radius), Metric::Chebyshev).into_iter().map(|(i, j, d)| (i, j, d.value())).collect();
        PairList { radius, pairs }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EigenPolicy {
    #[default]
    Error,
    Clamp,
}

#[derive(Clone, Debug, PartialEq)]
pub enum VarianceMethod {
    Ehw,
    Shac(KernelSpec),
    Cluster,
}

impl VarianceMethod {
    pub fn label(&self) -> String {
        match self {
            VarianceMethod::Ehw => "ehw".into(),
            VarianceMethod::Shac(k) => format!("shac(b={})", k.bandwidth),
            VarianceMethod::Cluster => "cluster".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceEstimate<T> {
    pub omega: Matrix<T>,
    pub v: Matrix<T>,
    pub se: Vec<T>,
    pub method: String,
    pub psd: bool,
    pub min_eigenvalue: f64,
    pub warnings: Vec<String>,
}

/// Kernel-weighted middle matrix; self pairs have weight one.
pub fn middle_matrix<T: Real>(q: &Matrix<T>, weighted_pairs: &[(usize, usize, T)]) -> Matrix<T> {
    let (n, k) = (q.rows(), q.cols());
    let mut omega = Matrix::zeros(k, k);
    for i in 0..n {
        let r = q.row(i);
        for a in 0..k {
            for b in 0..k {
                omega[(a, b)] += r[a] * r[b];
            }
        }
    }
    for &(i, j, w) in weighted_pairs {
        let (ri, rj) = (q.row(i), q.row(j));
        for a in 0..k {
            for b in 0..k {
                omega[(a, b)] += w * (ri[a] * rj[b] + rj[a] * ri[b]);
            }
        }
    }
    omega.scale(T::one() / T::lit(n as f64))
}

/// Sandwich from a middle matrix.
pub fn sandwich<T: Real>(sol: &GmmSolution<T>, mut omega: Matrix<T>, method: String, policy: EigenPolicy) -> Result<VarianceEstimate<T>> {
    let n = sol.n_units();
    let mut warnings = Vec::new();
    let (eig, vecs) = symmetric_eigen(&omega);
    let min_eig = eig.first().map_or(0.0, |e| e.value());
    let trace = omega.trace().value().abs();
    let psd = min_eig >= -1e-8 * trace.max(f64::MIN_POSITIVE);
    if !psd {
        match policy {
            EigenPolicy::Error => {
                return Err(Error::Variance(format!("{method} middle matrix is not positive semi-definite (smallest eigenvalue {min_eig:e})")));
            }
            EigenPolicy::Clamp => {
                warnings.push(format!("{method}: negative eigenvalues clamped at 0 (smallest {min_eig:e})"));
                let clamped: Vec<T> = eig.iter().map(|&e| e.max(T::zero())).collect();
                omega = vecs.matmul(&Matrix::diag(&clamped)).matmul(&vecs.transpose());
            }
        }
    }
    for j in 0..omega.rows() {
        if omega[(j, j)].value().abs() <= 1e-14 * trace.max(f64::MIN_POSITIVE) {
            warnings.push(format!("{method}: middle matrix is degenerate for `{}`", sol.param_names.get(j).map_or("", String::as_str)));
        }
    }
    let r = &sol.jacobian;
    let psi = &sol.weighting;
    let rt_psi = r.transpose().matmul(psi);
    let bread = rt_psi.matmul(r).inverse().map_err(|e| Error::Conditioning(format!("R'ΨR is singular: {e}")))?;
    let meat = rt_psi.matmul(&omega).matmul(&rt_psi.transpose());
    let mut v = bread.matmul(&meat).matmul(&bread.transpose());
    v.symmetrize();
    let mut se = Vec::with_capacity(v.rows());
    for j in 0..v.rows() {
        let d = v[(j, j)];
        if d < T::zero() {
            return Err(Error::Variance(format!("{method}: negative variance for `{}`", sol.param_names[j])));
        }
        se.push((d / T::lit(n as f64)).sqrt());
    }
    Ok(VarianceEstimate { omega, v, se, method, psd, min_eigenvalue: min_eig, warnings })
}

pub fn ehw_variance<T: Real>(sol: &GmmSolution<T>) -> Result<VarianceEstimate<T>> {
    let omega = middle_matrix(&sol.unit_moments, &[]);
    sandwich(sol, omega, "ehw".into(), EigenPolicy::Error)
}

pub fn shac_variance<T: Real>(sol: &GmmSolution<T>, kernel: &KernelSpec) -> Result<VarianceEstimate<T>> {
    kernel.validate()?;
    let pairs = PairList::new(&sol.coords, kernel.search_radius());
    shac_variance_with(sol, kernel, &pairs, EigenPolicy::Error)
}

/// SHAC using a precomputed pair list whose radius covers the kernel.
pub fn shac_variance_with<T: Real>(sol: &GmmSolution<T>, kernel: &KernelSpec, pairs: &PairList, policy: EigenPolicy) -> Result<VarianceEstimate<T>> {
    kernel.validate()?;
    if pairs.radius < kernel.search_radius() {
        return Err(Error::Config("pair list radius is smaller than the kernel support".into()));
    }
    let weighted: Vec<(usize, usize, T)> = pairs
        .pairs
        .iter()
        .filter_map(|&(i, j, d)| {
            let w = kernel.weight(d);
            (w != 0.0).then(|| (i, j, T::lit(w)))
        })
        .collect();
    let omega = middle_matrix(&sol.unit_moments, &weighted);
    let mut est = sandwich(sol, omega, VarianceMethod::Shac(*kernel).label(), policy)?;
    let n = sol.n_units() as f64;
    let d = sol.coords.first().map_or(1, Vec::len).max(1) as f64;
    let limit = n.powf(1.0 / (2.0 * d));
    if kernel.bandwidth > limit {
        est.warnings.push(format!("bandwidth {} exceeds n^(1/2d) = {limit:.3}", kernel.bandwidth));
    }
    Ok(est)
}

pub fn cluster_variance<T: Real>(sol: &GmmSolution<T>) -> Result<VarianceEstimate<T>> {
    let cl = sol.clusters.as_ref().ok_or_else(|| Error::Config("cluster-robust variance requires cluster labels".into()))?;
    let q = &sol.unit_moments;
    let k = q.cols();
    let n_cl = cl.iter().copied().max().map_or(0, |m| m + 1);
    let mut sums = vec![vec![T::zero(); k]; n_cl];
    for (i, &c) in cl.iter().enumerate() {
        for a in 0..k {
            sums[c][a] += q[(i, a)];
        }
    }
    let mut omega = Matrix::zeros(k, k);
    for s in sums.iter() {
        for a in 0..k {
            for b in 0..k {
                omega[(a, b)] += s[a] * s[b];
            }
        }
    }
    let omega = omega.scale(T::one() / T::lit(q.rows() as f64));
    let mut est = sandwich(sol, omega, "cluster".into(), EigenPolicy::Error)?;
    let used = cl.iter().collect::<std::collections::BTreeSet<_>>().len();
    if used < 2 {
        est.warnings.push("cluster: a single cluster makes the middle matrix degenerate".into());
    }
    Ok(est)
}

pub fn variance<T: Real>(sol: &GmmSolution<T>, method: &VarianceMethod) -> Result<VarianceEstimate<T>> {
    match method {
        VarianceMethod::Ehw => ehw_variance(sol),
        VarianceMethod::Shac(k) => shac_variance(sol, k),
        VarianceMethod::Cluster => cluster_variance(sol),
    }
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

/// Two-sided normal interval `θ̂ ± z_{(1+level)/2} · se`.
pub fn confidence_interval(estimate: f64, se: f64, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("confidence level must lie in (0, 1), got {level}")));
    }
    if !se.is_finite() || se < 0.0 {
        return Err(Error::Variance(format!("standard error {se} is not a nonnegative finite number")));
    }
    let z = normal_quantile((1.0 + level) / 2.0);
    Ok((estimate - z * se, estimate + z * se))
}
