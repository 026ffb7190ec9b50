//! Design diagnostics: expected eligible count and the parallel-trends gap
//! of the linear-in-means designs.

use nbrdid::{Error, Result};

use crate::design::FixedDesign;

/// Expected number of units with at least one Chebyshev neighbor within
/// `cutoff` when `n` units are uniform on `[0, side]²`.
pub fn expected_eligible(n: usize, side: f64, cutoff: f64) -> f64 {
    const GRID: usize = 2000;
    let h = side / GRID as f64;
    let reach = |t: f64| (t + cutoff).min(side) - (t - cutoff).max(0.0);
    let lens: Vec<f64> = (0..GRID).map(|k| reach((k as f64 + 0.5) * h) / side).collect();
    let mut isolated = 0.0;
    for a in &lens {
        for b in &lens {
            isolated += (1.0 - a * b).powi(n as i32 - 1);
        }
    }
    n as f64 * (1.0 - isolated / (GRID * GRID) as f64)
}

/// Average over replications of the treated-minus-control difference in
/// the neighbor-driven part of `Y2`, `Y2 − r − W(d_ii − 1)`, within each
/// exposure cell `g = 0, 1` among eligible units.
pub fn parallel_trend_gaps(design: &FixedDesign, reps: usize) -> Result<[f64; 2]> {
    let diag = design.lim_diag.as_ref().ok_or_else(|| Error::Config("parallel-trends gap requires a linear-in-means design".into()))?;
    let mut sums = [0.0; 2];
    let mut used = [0usize; 2];
    for rep in 0..reps {
        let draw = design.draw(rep as u64)?;
        let rhs = draw.lim_rhs.as_ref().expect("linear-in-means draw carries its right-hand side");
        let mut cell = [[(0.0, 0usize); 2]; 2];
        for (i, u) in draw.population.units().iter().enumerate() {
            if !design.eligible[i] {
                continue;
            }
            let w = u.w as usize;
            let s = u.y2 - rhs[i] - w as f64 * (diag[i] - 1.0);
            let c = &mut cell[w][draw.exposure.levels[i] as usize];
            c.0 += s;
            c.1 += 1;
        }
        for g in 0..2 {
            if cell[1][g].1 > 0 && cell[0][g].1 > 0 {
                sums[g] += cell[1][g].0 / cell[1][g].1 as f64 - cell[0][g].0 / cell[0][g].1 as f64;
                used[g] += 1;
            }
        }
    }
    Ok([sums[0] / used[0].max(1) as f64, sums[1] / used[1].max(1) as f64])
}
