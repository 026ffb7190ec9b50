//! Simulation designs: located units on a square, spatially correlated
//! covariates, treatment assignment, any-treated-neighbor exposure and the
//! outcome equations. Locations and `z` are fixed per seed; everything else
//! is redrawn per replication.

use std::fmt;
use std::str::FromStr;

use nbrdid::exposure::{compute_exposure, ExposureAssignment, ExposureKind, ExposureSpec};
use nbrdid::linalg::cholesky;
use nbrdid::population::{build_adjacency, Metric};
use nbrdid::scalar::logistic;
use nbrdid::{Adjacency, Error, Matrix, Population, Result, Sample, UnitRecord};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::rng::{fingerprint, stream, Tag, FIXED};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DesignId {
    D1,
    D2,
    D3,
    D4,
    D5,
    D6,
    AppendixE,
    AppendixFNoSpill,
    AppendixFSpill,
    Placebo,
}

impl DesignId {
    pub const TABLE3: [DesignId; 6] = [DesignId::D1, DesignId::D2, DesignId::D3, DesignId::D4, DesignId::D5, DesignId::D6];

    pub fn name(self) -> &'static str {
        match self {
            DesignId::D1 => "1",
            DesignId::D2 => "2",
            DesignId::D3 => "3",
            DesignId::D4 => "4",
            DesignId::D5 => "5",
            DesignId::D6 => "6",
            DesignId::AppendixE => "appendixE",
            DesignId::AppendixFNoSpill => "appendixF-noSpill",
            DesignId::AppendixFSpill => "appendixF-spill",
            DesignId::Placebo => "placebo",
        }
    }
}

impl fmt::Display for DesignId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DesignId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let all = [
            DesignId::D1,
            DesignId::D2,
            DesignId::D3,
            DesignId::D4,
            DesignId::D5,
            DesignId::D6,
            DesignId::AppendixE,
            DesignId::AppendixFNoSpill,
            DesignId::AppendixFSpill,
            DesignId::Placebo,
        ];
        all.into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown design `{s}`; expected 1-6, appendixE, appendixF-noSpill, appendixF-spill or placebo")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Assignment {
    /// `P(W=1) = logistic(0.3 z)`.
    Logit,
    /// `P(W=1) = logistic(0.3 z + 0.8 z_u)`.
    LogitSpatial,
    /// `W = 1{ξ > mean(ξ)}` with spatially correlated `ξ`.
    Threshold,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Outcome {
    /// `Y2 = 2 + W + G + c z + e2`.
    Additive { z_coef: f64 },
    /// `Y2 = (I − λA)⁻¹(2 + W + 2 f(z) + e2)` with `f(z) = z` or `z²`.
    LinearInMeans { squared: bool },
    /// `Y2 = (I − λA)⁻¹(2 + 3 z W + 2 z² + e2)`.
    HeterogeneousLinearInMeans,
    /// `Y2 = 2 + W G + c z + e2`.
    Interaction { z_coef: f64 },
    /// `Y2 = 2 + (1 − W) G + z + e2`.
    Spillover,
}

impl Outcome {
    fn is_linear_in_means(self) -> bool {
        matches!(self, Outcome::LinearInMeans { .. } | Outcome::HeterogeneousLinearInMeans)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DesignSpec {
    pub id: DesignId,
    pub n: usize,
    pub side: f64,
    pub cutoff: f64,
    pub seed: u64,
    pub assignment: Assignment,
    pub outcome: Outcome,
    /// Decay `c` of the `c^distance` covariance of `z_u`.
    pub covariate_decay: f64,
    /// Decay of the covariance of the assignment index `ξ`.
    pub index_decay: f64,
    pub lim_weight: f64,
    /// Adds an earlier period `y0 = z + e0` and a differential trend of
    /// this size to `Y1` in the `(W=1, G=1)` cell.
    pub placebo_trend: Option<f64>,
}

impl DesignSpec {
    pub fn standard(id: DesignId, seed: u64) -> Self {
        let base = DesignSpec {
            id,
            n: 400,
            side: 20.0,
            cutoff: 0.3,
            seed,
            assignment: Assignment::Logit,
            outcome: Outcome::Additive { z_coef: 1.0 },
            covariate_decay: 0.5,
            index_decay: 0.3,
            lim_weight: 0.2,
            placebo_trend: None,
        };
        match id {
            DesignId::D1 => base,
            DesignId::D2 => DesignSpec { outcome: Outcome::Additive { z_coef: 2.0 }, ..base },
            DesignId::D3 => DesignSpec { assignment: Assignment::LogitSpatial, outcome: Outcome::Additive { z_coef: 2.0 }, ..base },
            DesignId::D4 => DesignSpec { assignment: Assignment::LogitSpatial, outcome: Outcome::LinearInMeans { squared: false }, ..base },
            DesignId::D5 => DesignSpec { assignment: Assignment::LogitSpatial, outcome: Outcome::LinearInMeans { squared: true }, ..base },
            DesignId::D6 => DesignSpec { assignment: Assignment::LogitSpatial, outcome: Outcome::Interaction { z_coef: 2.0 }, ..base },
            DesignId::AppendixE => DesignSpec { n: 900, assignment: Assignment::LogitSpatial, outcome: Outcome::HeterogeneousLinearInMeans, ..base },
            DesignId::AppendixFNoSpill => DesignSpec { assignment: Assignment::Threshold, outcome: Outcome::Interaction { z_coef: 1.0 }, ..base },
            DesignId::AppendixFSpill => DesignSpec { assignment: Assignment::Threshold, outcome: Outcome::Spillover, ..base },
            DesignId::Placebo => DesignSpec { side: 8.5, placebo_trend: Some(0.0), ..base },
        }
    }

    pub fn label(&self) -> String {
        format!("design {} (n={}, seed={})", self.id, self.n, self.seed)
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config("a design needs at least two units".into()));
        }
        if !(self.side > 0.0 && self.cutoff > 0.0) {
            return Err(Error::Config("side and cutoff must be positive".into()));
        }
        if !(self.lim_weight.abs() < 1.0) {
            return Err(Error::Config("linear-in-means weight must lie in (-1, 1)".into()));
        }
        Ok(())
    }
}

/// Per-replication estimands.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Truth {
    pub tau1: f64,
    pub tau0: f64,
    /// Overall effect on the treated: exposure-share weighted `τ(g)`.
    pub tau: f64,
    /// `P(G=1 | W=1)` among eligible units.
    pub share_treated: f64,
    /// `P(G=1 | W=0)` among eligible units.
    pub share_control: f64,
}

impl Truth {
    pub fn at(&self, g: i64) -> f64 {
        if g == 1 {
            self.tau1
        } else {
            self.tau0
        }
    }

    /// Exposure imbalance between arms; the bias of the canonical
    /// estimator when spillovers are present.
    pub fn p_gap(&self) -> f64 {
        self.share_treated - self.share_control
    }
}

/// One replication's data.
#[derive(Clone, Debug)]
pub struct Draw {
    pub population: Population,
    pub exposure: ExposureAssignment,
    pub sample: Sample,
    pub truth: Truth,
    /// Fingerprint of locations and `z` as realized in this draw.
    pub fingerprint: u64,
    /// `max |(I − λA) Y2 − r|` for linear-in-means outcomes.
    pub lim_residual: Option<f64>,
    /// Right-hand side `r` of the linear-in-means system.
    pub lim_rhs: Option<Vec<f64>>,
}

/// Source of replications for the replication engine.
pub trait Generator: Sync {
    fn label(&self) -> String;
    fn seed(&self) -> u64;
    fn units(&self) -> usize;
    fn fingerprint(&self) -> u64;
    fn draw(&self, rep: u64) -> Result<Draw>;
}

/// Design quantities that do not change across replications of a seed.
#[derive(Clone, Debug)]
pub struct FixedDesign {
    pub spec: DesignSpec,
    pub coords: Vec<Vec<f64>>,
    pub z: Vec<f64>,
    pub adjacency: Adjacency,
    pub eligible: Vec<bool>,
    ids: Vec<String>,
    covariate_chol: Matrix,
    index_chol: Option<Matrix>,
    /// Diagonal of `(I − λA)⁻¹` for linear-in-means outcomes.
    pub lim_diag: Option<Vec<f64>>,
    fingerprint: u64,
}

const LIM_TOL: f64 = 1e-14;
const LIM_MAX_ITER: usize = 500;

/// Solves `(I − λA) y = r` by fixed-point iteration; converges since
/// `|λ| < 1` and `A` is row-stochastic on non-isolated rows.
pub fn lim_solve(adj: &Adjacency, lambda: f64, rhs: &[f64]) -> Result<Vec<f64>> {
    let scale = rhs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut y = rhs.to_vec();
    for _ in 0..LIM_MAX_ITER {
        let ay = adj.apply(&y);
        let next: Vec<f64> = rhs.iter().zip(&ay).map(|(r, a)| r + lambda * a).collect();
        let change = next.iter().zip(&y).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        y = next;
        if change <= LIM_TOL * scale {
            return Ok(y);
        }
    }
    Err(Error::NonConvergence { what: "linear-in-means solve".into(), iterations: LIM_MAX_ITER, residual: lim_residual(adj, lambda, &y, rhs), hint: String::new() })
}

/// `max |(I − λA) y − r|`.
pub fn lim_residual(adj: &Adjacency, lambda: f64, y: &[f64], rhs: &[f64]) -> f64 {
    let ay = adj.apply(y);
    y.iter().zip(&ay).zip(rhs).fold(0.0f64, |m, ((yi, ai), ri)| m.max((yi - lambda * ai - ri).abs()))
}

fn spatial_cholesky(coords: &[Vec<f64>], decay: f64) -> Result<Matrix> {
    let n = coords.len();
    let cov = Matrix::from_fn(n, n, |i, j| decay.powf(Metric::Euclidean.eval(&coords[i], &coords[j])));
    match cholesky(&cov) {
        Ok(l) => Ok(l),
        Err(_) => {
            let jitter = Matrix::from_fn(n, n, |i, j| if i == j { 1e-10 } else { 0.0 });
            cholesky(&cov.add(&jitter))
        }
    }
}

fn correlated_normals(chol: &Matrix, rng: &mut impl Rng) -> Vec<f64> {
    let n = chol.rows();
    let eps: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    (0..n).map(|i| chol.row(i)[..=i].iter().zip(&eps).map(|(l, e)| l * e).sum()).collect()
}

fn normals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

impl FixedDesign {
    pub fn new(spec: DesignSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.n;
        let mut loc = stream(spec.seed, FIXED, Tag::Locations);
        let coords: Vec<Vec<f64>> = (0..n).map(|_| vec![loc.gen::<f64>() * spec.side, loc.gen::<f64>() * spec.side]).collect();
        let z = normals(&mut stream(spec.seed, FIXED, Tag::Covariate), n);
        let ids: Vec<String> = (0..n).map(|i| format!("u{i}")).collect();
        let skeleton: Vec<UnitRecord> = (0..n)
            .map(|i| UnitRecord { id: ids[i].clone(), coords: coords[i].clone(), z: vec![z[i]], w: false, y1: 0.0, y2: 0.0, y0: None, cluster: None })
            .collect();
        let pop = Population::new(skeleton, vec!["z".into()], spec.label())?;
        let adjacency = build_adjacency(&pop, spec.cutoff, true)?;
        let eligible: Vec<bool> = (0..n).map(|i| !adjacency.is_isolated(i)).collect();
        let covariate_chol = spatial_cholesky(&coords, spec.covariate_decay)?;
        let index_chol = match spec.assignment {
            Assignment::Threshold => Some(spatial_cholesky(&coords, spec.index_decay)?),
            _ => None,
        };
        let lim_diag = if spec.outcome.is_linear_in_means() {
            let mut diag = Vec::with_capacity(n);
            let mut e = vec![0.0; n];
            for i in 0..n {
                e[i] = 1.0;
                diag.push(lim_solve(&adjacency, spec.lim_weight, &e)?[i]);
                e[i] = 0.0;
            }
            Some(diag)
        } else {
            None
        };
        let fingerprint = fingerprint(coords.iter().flatten().chain(z.iter()));
        Ok(FixedDesign { spec, coords, z, adjacency, eligible, ids, covariate_chol, index_chol, lim_diag, fingerprint })
    }

    pub fn eligible_count(&self) -> usize {
        self.eligible.iter().filter(|&&e| e).count()
    }

    fn treatments(&self, rep: u64, zu: &[f64]) -> Vec<bool> {
        let s = &self.spec;
        let n = s.n;
        match s.assignment {
            Assignment::Logit | Assignment::LogitSpatial => {
                let mut u = stream(s.seed, rep, Tag::Uniform);
                (0..n)
                    .map(|i| {
                        let index = if s.assignment == Assignment::Logit { 0.3 * self.z[i] } else { 0.3 * self.z[i] + 0.8 * zu[i] };
                        u.gen::<f64>() < logistic(index)
                    })
                    .collect()
            }
            Assignment::Threshold => {
                let chol = self.index_chol.as_ref().expect("index covariance present for threshold assignment");
                let xi = correlated_normals(chol, &mut stream(s.seed, rep, Tag::SpatialIndex));
                let mean = xi.iter().sum::<f64>() / n as f64;
                xi.iter().map(|&x| x > mean).collect()
            }
        }
    }

    fn truth(&self, w: &[bool], g: &[i64]) -> Truth {
        let mut counts = [[0usize; 2]; 2];
        for i in (0..self.spec.n).filter(|&i| self.eligible[i]) {
            counts[w[i] as usize][(g[i] == 1) as usize] += 1;
        }
        let share = |arm: usize| counts[arm][1] as f64 / (counts[arm][0] + counts[arm][1]) as f64;
        let (share_treated, share_control) = (share(1), share(0));
        let mix = |t1: f64, t0: f64| share_treated * t1 + (1.0 - share_treated) * t0;
        let (tau1, tau0) = match self.spec.outcome {
            Outcome::Additive { .. } | Outcome::LinearInMeans { .. } => (1.0, 1.0),
            Outcome::Interaction { .. } => (1.0, 0.0),
            Outcome::Spillover => (-1.0, 0.0),
            Outcome::HeterogeneousLinearInMeans => {
                let d = self.lim_diag.as_ref().expect("diagonal present for linear-in-means outcomes");
                let elig: Vec<usize> = (0..self.spec.n).filter(|&i| self.eligible[i]).collect();
                let t = elig.iter().map(|&i| 3.0 * self.z[i] * d[i]).sum::<f64>() / elig.len() as f64;
                (t, t)
            }
        };
        Truth { tau1, tau0, tau: mix(tau1, tau0), share_treated, share_control }
    }

    pub fn draw(&self, rep: u64) -> Result<Draw> {
        let s = &self.spec;
        let n = s.n;
        let z = &self.z;
        let zu = correlated_normals(&self.covariate_chol, &mut stream(s.seed, rep, Tag::SpatialCovariate));
        let w = self.treatments(rep, &zu);
        let mut units: Vec<UnitRecord> = (0..n)
            .map(|i| UnitRecord { id: self.ids[i].clone(), coords: self.coords[i].clone(), z: vec![z[i], zu[i]], w: w[i], y1: 0.0, y2: 0.0, y0: None, cluster: None })
            .collect();
        let attrs = vec!["z".to_string(), "zu".to_string()];
        let pop = Population::new(units.clone(), attrs.clone(), s.label())?;
        let exposure = compute_exposure(&pop, &ExposureSpec { kind: ExposureKind::AnyTreatedNeighbor, adjacency: Some(&self.adjacency) })?;
        let g = &exposure.levels;

        let mean = |i: usize| if w[i] { z[i] } else { 0.0 };
        let e1: Vec<f64> = normals(&mut stream(s.seed, rep, Tag::Error1), n).iter().enumerate().map(|(i, e)| e + mean(i)).collect();
        let e2: Vec<f64> = normals(&mut stream(s.seed, rep, Tag::Error2), n).iter().enumerate().map(|(i, e)| e + mean(i)).collect();
        let wf = |i: usize| w[i] as u8 as f64;
        let gf = |i: usize| g[i] as f64;

        let trend = s.placebo_trend.unwrap_or(0.0);
        let y1: Vec<f64> = (0..n).map(|i| 1.0 + z[i] + e1[i] + if w[i] && g[i] == 1 { trend } else { 0.0 }).collect();
        let (y2, lim_rhs, lim_res) = match s.outcome {
            Outcome::Additive { z_coef } => ((0..n).map(|i| 2.0 + wf(i) + gf(i) + z_coef * z[i] + e2[i]).collect(), None, None),
            Outcome::Interaction { z_coef } => ((0..n).map(|i| 2.0 + wf(i) * gf(i) + z_coef * z[i] + e2[i]).collect(), None, None),
            Outcome::Spillover => ((0..n).map(|i| 2.0 + (1.0 - wf(i)) * gf(i) + z[i] + e2[i]).collect(), None, None),
            Outcome::LinearInMeans { .. } | Outcome::HeterogeneousLinearInMeans => {
                let rhs: Vec<f64> = (0..n)
                    .map(|i| match s.outcome {
                        Outcome::LinearInMeans { squared: false } => 2.0 + wf(i) + 2.0 * z[i] + e2[i],
                        Outcome::LinearInMeans { squared: true } => 2.0 + wf(i) + 2.0 * z[i] * z[i] + e2[i],
                        _ => 2.0 + 3.0 * z[i] * wf(i) + 2.0 * z[i] * z[i] + e2[i],
                    })
                    .collect();
                let y = lim_solve(&self.adjacency, s.lim_weight, &rhs)?;
                let res = lim_residual(&self.adjacency, s.lim_weight, &y, &rhs);
                (y, Some(rhs), Some(res))
            }
        };
        let y0: Option<Vec<f64>> = s.placebo_trend.map(|_| {
            let e0 = normals(&mut stream(s.seed, rep, Tag::Error0), n);
            (0..n).map(|i| z[i] + e0[i] + mean(i)).collect()
        });
        for (i, u) in units.iter_mut().enumerate() {
            u.y1 = y1[i];
            u.y2 = y2[i];
            u.y0 = y0.as_ref().map(|v| v[i]);
        }
        let population = Population::new(units, attrs, s.label())?;
        let sample = Sample::new(&population, &exposure, Some(&self.adjacency))?;
        let truth = self.truth(&w, g);
        let fp = fingerprint(population.units().iter().flat_map(|u| u.coords.iter()).chain(population.units().iter().map(|u| &u.z[0])));
        Ok(Draw { population, exposure, sample, truth, fingerprint: fp, lim_residual: lim_res, lim_rhs })
    }
}

impl Generator for FixedDesign {
    fn label(&self) -> String {
        self.spec.label()
    }

    fn seed(&self) -> u64 {
        self.spec.seed
    }

    fn units(&self) -> usize {
        self.spec.n
    }

    fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    fn draw(&self, rep: u64) -> Result<Draw> {
        FixedDesign::draw(self, rep)
    }
}
