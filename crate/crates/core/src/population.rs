//! Finite population of located units, the Chebyshev geometry and
//! distance-threshold adjacency.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct UnitRecord<T> {
    pub id: String,
    pub coords: Vec<T>,
    pub z: Vec<T>,
    pub w: bool,
    pub y1: T,
    pub y2: T,
    /// Optional earlier pre-period outcome, used by the placebo test.
    pub y0: Option<T>,
    pub cluster: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Population<T> {
    units: Vec<UnitRecord<T>>,
    dim: usize,
    attribute_names: Vec<String>,
    source: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Metric {
    #[default]
    Chebyshev,
    Euclidean,
}

impl Metric {
    pub fn eval<T: Real>(self, a: &[T], b: &[T]) -> T {
        match self {
            Metric::Chebyshev => a.iter().zip(b).fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs())),
            Metric::Euclidean => a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>().sqrt(),
        }
    }
}

impl<T: Real> Population<T> {
    pub fn new(units: Vec<UnitRecord<T>>, attribute_names: Vec<String>, source: impl Into<String>) -> Result<Self> {
        let dim = units.first().map_or(0, |u| u.coords.len());
        let mut seen = HashSet::new();
        for (row, u) in units.iter().enumerate() {
            let row = row + 1;
            if !seen.insert(u.id.as_str()) {
                return Err(Error::Validation { row, message: format!("duplicate unit id `{}`", u.id) });
            }
            if u.coords.len() != dim {
                return Err(Error::Validation { row, message: "coordinate dimension differs from first unit".into() });
            }
            if u.z.len() != attribute_names.len() {
                return Err(Error::Validation { row, message: "attribute vector length differs from schema".into() });
            }
            if u.coords.iter().any(|c| !c.is_finite()) {
                return Err(Error::Validation { row, message: "non-finite coordinate".into() });
            }
            if !u.y1.is_finite() || !u.y2.is_finite() || u.y0.is_some_and(|v| !v.is_finite()) {
                return Err(Error::Validation { row, message: "non-finite outcome".into() });
            }
        }
        if units.iter().any(|u| u.y0.is_some()) && units.iter().any(|u| u.y0.is_none()) {
            return Err(Error::Validation { row: 0, message: "pre-period outcome present for some units only".into() });
        }
        Ok(Population { units, dim, attribute_names, source: source.into() })
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn units(&self) -> &[UnitRecord<T>] {
        &self.units
    }

    pub fn unit(&self, i: usize) -> Result<&UnitRecord<T>> {
        self.units.get(i).ok_or(Error::Bounds { index: i, len: self.units.len() })
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attribute_names.iter().position(|n| n == name)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn treatments(&self) -> Vec<bool> {
        self.units.iter().map(|u| u.w).collect()
    }

    pub fn treated_count(&self) -> usize {
        self.units.iter().filter(|u| u.w).count()
    }

    pub fn has_clusters(&self) -> bool {
        !self.units.is_empty() && self.units.iter().all(|u| u.cluster.is_some())
    }

    pub fn has_pre_period(&self) -> bool {
        !self.units.is_empty() && self.units.iter().all(|u| u.y0.is_some())
    }

    /// Chebyshev distance between units `a` and `b`.
    pub fn distance(&self, a: usize, b: usize) -> Result<T> {
        self.distance_with(a, b, Metric::Chebyshev)
    }

    pub fn distance_with(&self, a: usize, b: usize, metric: Metric) -> Result<T> {
        let ua = self.unit(a)?;
        let ub = self.unit(b)?;
        Ok(metric.eval(&ua.coords, &ub.coords))
    }

    /// Smallest distance between distinct units (diagnostic only).
    pub fn min_distance(&self) -> Option<T> {
        let mut best: Option<T> = None;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                let d = Metric::Chebyshev.eval(&self.units[i].coords, &self.units[j].coords);
                best = Some(best.map_or(d, |b| b.min(d)));
            }
        }
        best
    }

    /// Cluster index per unit (first-appearance order) and cluster labels.
    pub fn cluster_indices(&self) -> Result<(Vec<usize>, Vec<String>)> {
        if !self.has_clusters() {
            return Err(Error::Config("cluster labels are required but absent".into()));
        }
        let mut map: HashMap<&str, usize> = HashMap::new();
        let mut labels = Vec::new();
        let idx = self
            .units
            .iter()
            .map(|u| {
                let c = u.cluster.as_deref().unwrap();
                *map.entry(c).or_insert_with(|| {
                    labels.push(c.to_string());
                    labels.len() - 1
                })
            })
            .collect();
        Ok((idx, labels))
    }

    /// Replaces treatments (used by simulation and toggle checks).
    pub fn with_treatments(&self, w: &[bool]) -> Self {
        let mut p = self.clone();
        for (u, &wi) in p.units.iter_mut().zip(w) {
            u.w = wi;
        }
        p
    }
}

/// Pairs of units within a distance radius, found by grid bucketing.
/// Each unordered pair appears once as `(i, j, distance)` with `i < j`.
pub fn pairs_within<T: Real>(coords: &[Vec<T>], radius: T, metric: Metric) -> Vec<(usize, usize, T)> {
    let n = coords.len();
    if n < 2 {
        return Vec::new();
    }
    let dim = coords[0].len();
    let cell = if radius > T::zero() { radius } else { T::one() };
    let key = |c: &[T]| -> Vec<i64> { c.iter().map(|&x| (x / cell).floor().to_i64().unwrap_or(0)).collect() };
    let mut grid: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for (i, c) in coords.iter().enumerate() {
        grid.entry(key(c)).or_default().push(i);
    }
    let offsets: Vec<Vec<i64>> = (0..3usize.pow(dim as u32))
        .map(|mut code| {
            (0..dim)
                .map(|_| {
                    let o = (code % 3) as i64 - 1;
                    code /= 3;
                    o
                })
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for (i, c) in coords.iter().enumerate() {
        let k = key(c);
        for off in &offsets {
            let nk: Vec<i64> = k.iter().zip(off).map(|(a, b)| a + b).collect();
            if let Some(members) = grid.get(&nk) {
                for &j in members {
                    if j <= i {
                        continue;
                    }
                    let d = metric.eval(c, &coords[j]);
                    if d <= radius {
                        out.push((i, j, d));
                    }
                }
            }
        }
    }
    out.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    out
}

/// Symmetric distance-threshold neighbor relation.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjacency<T> {
    cutoff: T,
    metric: Metric,
    neighbors: Vec<Vec<usize>>,
    row_normalized: bool,
}

impl<T: Real> Adjacency<T> {
    pub fn cutoff(&self) -> T {
        self.cutoff
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.iter().all(Vec::is_empty)
    }

    pub fn row_normalized(&self) -> bool {
        self.row_normalized
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn is_isolated(&self, i: usize) -> bool {
        self.neighbors[i].is_empty()
    }

    pub fn pair(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Weight `A_ij`: 1 for neighbors, or `1/degree(i)` when row-normalized.
    pub fn weight(&self, i: usize, j: usize) -> T {
        if !self.pair(i, j) {
            return T::zero();
        }
        if self.row_normalized {
            T::one() / T::lit(self.degree(i) as f64)
        } else {
            T::one()
        }
    }

    /// `(A v)_i` using the adjacency's weights.
    pub fn apply(&self, v: &[T]) -> Vec<T> {
        (0..self.len())
            .map(|i| {
                let s: T = self.neighbors[i].iter().map(|&j| v[j]).sum();
                if self.row_normalized && !self.neighbors[i].is_empty() {
                    s / T::lit(self.degree(i) as f64)
                } else {
                    s
                }
            })
            .collect()
    }

    /// Mean of `v` over each unit's neighbors (zero for isolated units).
    pub fn neighbor_mean(&self, v: &[T]) -> Vec<T> {
        (0..self.len())
            .map(|i| {
                let nb = &self.neighbors[i];
                if nb.is_empty() {
                    T::zero()
                } else {
                    nb.iter().map(|&j| v[j]).sum::<T>() / T::lit(nb.len() as f64)
                }
            })
            .collect()
    }

    /// Edge list `(i, j, weight)` over ordered pairs, for export.
    pub fn edge_list(&self) -> Vec<(usize, usize, T)> {
        let mut out = Vec::new();
        for i in 0..self.len() {
            for &j in &self.neighbors[i] {
                out.push((i, j, self.weight(i, j)));
            }
        }
        out
    }

    pub fn write_edge_list<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "i,j,weight")?;
        for (i, j, w) in self.edge_list() {
            writeln!(out, "{i},{j},{w}")?;
        }
        Ok(())
    }
}

pub fn build_adjacency<T: Real>(pop: &Population<T>, cutoff: T, row_normalize: bool) -> Result<Adjacency<T>> {
    build_adjacency_with_metric(pop, cutoff, row_normalize, Metric::Chebyshev)
}

pub fn build_adjacency_with_metric<T: Real>(pop: &Population<T>, cutoff: T, row_normalize: bool, metric: Metric) -> Result<Adjacency<T>> {
    if !(cutoff >= T::zero()) || !cutoff.is_finite() {
        return Err(Error::Config(format!("adjacency cutoff must be a finite nonnegative number, got {cutoff}")));
    }
    let coords: Vec<Vec<T>> = pop.units().iter().map(|u| u.coords.clone()).collect();
    let mut neighbors = vec![Vec::new(); pop.len()];
    for (i, j, _) in pairs_within(&coords, cutoff, metric) {
        neighbors[i].push(j);
        neighbors[j].push(i);
    }
    for nb in &mut neighbors {
        nb.sort_unstable();
    }
    Ok(Adjacency { cutoff, metric, neighbors, row_normalized: row_normalize })
}

/// Column mapping for delimited-text ingestion.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnMapping {
    pub id: String,
    pub coords: Vec<String>,
    pub attributes: Vec<String>,
    pub treatment: String,
    pub pre: String,
    pub post: String,
    pub baseline: Option<String>,
    pub cluster: Option<String>,
    pub delimiter: u8,
}

impl ColumnMapping {
    pub fn new(coords: &[&str], attributes: &[&str]) -> Self {
        ColumnMapping {
            id: "id".into(),
            coords: coords.iter().map(|s| s.to_string()).collect(),
            attributes: attributes.iter().map(|s| s.to_string()).collect(),
            treatment: "w".into(),
            pre: "y1".into(),
            post: "y2".into(),
            baseline: None,
            cluster: None,
            delimiter: b',',
        }
    }

    fn all_columns(&self) -> Vec<&str> {
        let mut cols = vec![self.id.as_str()];
        cols.extend(self.coords.iter().map(String::as_str));
        cols.extend(self.attributes.iter().map(String::as_str));
        cols.push(&self.treatment);
        if let Some(b) = &self.baseline {
            cols.push(b);
        }
        cols.push(&self.pre);
        cols.push(&self.post);
        if let Some(c) = &self.cluster {
            cols.push(c);
        }
        cols
    }
}

pub fn load_population<T: Real>(path: impl AsRef<Path>, schema: &ColumnMapping) -> Result<Population<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_population(file, schema, &path.display().to_string())
}

pub fn read_population<T: Real, R: Read>(reader: R, schema: &ColumnMapping, source: &str) -> Result<Population<T>> {
    let mut rdr = csv::ReaderBuilder::new().delimiter(schema.delimiter).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> { headers.iter().position(|h| h == name).ok_or_else(|| Error::Schema(name.to_string())) };
    let id_col = col(&schema.id)?;
    let coord_cols = schema.coords.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
    let attr_cols = schema.attributes.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
    let w_col = col(&schema.treatment)?;
    let pre_col = col(&schema.pre)?;
    let post_col = col(&schema.post)?;
    let base_col = schema.baseline.as_deref().map(col).transpose()?;
    let cluster_col = schema.cluster.as_deref().map(col).transpose()?;
    if coord_cols.is_empty() {
        return Err(Error::Config("at least one coordinate column is required".into()));
    }

    let mut units = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        let num = |c: usize| -> Result<T> {
            let raw = rec.get(c).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .and_then(T::from_f64)
                .ok_or_else(|| Error::Parse { row, column: headers[c].to_string(), value: raw.to_string() })
        };
        let w_raw = num(w_col)?;
        let w = if w_raw == T::one() {
            true
        } else if w_raw == T::zero() {
            false
        } else {
            return Err(Error::Validation { row, message: format!("treatment `{}` is not binary: {}", schema.treatment, &rec[w_col]) });
        };
        units.push(UnitRecord {
            id: rec.get(id_col).unwrap_or("").to_string(),
            coords: coord_cols.iter().map(|&c| num(c)).collect::<Result<_>>()?,
            z: attr_cols.iter().map(|&c| num(c)).collect::<Result<_>>()?,
            w,
            y1: num(pre_col)?,
            y2: num(post_col)?,
            y0: base_col.map(num).transpose()?,
            cluster: cluster_col.map(|c| rec.get(c).unwrap_or("").to_string()),
        });
    }
    Population::new(units, schema.attributes.clone(), source)
}

/// Writes a population with the given mapping; reading it back with the
/// same mapping reproduces the population exactly.
pub fn write_population<T: Real, W: Write>(pop: &Population<T>, schema: &ColumnMapping, out: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().delimiter(schema.delimiter).from_writer(out);
    wtr.write_record(schema.all_columns())?;
    for u in pop.units() {
        let mut rec = vec![u.id.clone()];
        rec.extend(u.coords.iter().map(|v| v.to_string()));
        rec.extend(u.z.iter().map(|v| v.to_string()));
        rec.push(if u.w { "1".into() } else { "0".into() });
        if schema.baseline.is_some() {
            rec.push(u.y0.map(|v| v.to_string()).unwrap_or_default());
        }
        rec.push(u.y1.to_string());
        rec.push(u.y2.to_string());
        if schema.cluster.is_some() {
            rec.push(u.cluster.clone().unwrap_or_default());
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}
