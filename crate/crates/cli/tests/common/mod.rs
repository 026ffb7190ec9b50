#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const SEZ_EFFECT: f64 = 2.0;

/// Villages grouped in counties on a 6 x 5 grid, four baseline covariates,
/// county-level treatment propensity and county-level trend shocks.
pub fn sez_csv(seed: u64, per_county: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from("village,county,lon,lat,pop_density,literacy,irrigation,road_km,sez,y_2001,y_2011\n");
    let mut id = 0;
    for county in 0..30 {
        let (cx, cy) = ((county % 6) as f64, (county / 6) as f64);
        let pull: f64 = rng.sample(StandardNormal);
        let level: f64 = rng.sample(StandardNormal);
        let trend: f64 = 0.5 * rng.sample::<f64, _>(StandardNormal);
        for _ in 0..per_county {
            let lon = cx + rng.gen_range(-0.4..0.4);
            let lat = cy + rng.gen_range(-0.4..0.4);
            let x: Vec<f64> = (0..4).map(|k| 0.3 * pull * (k == 0) as u8 as f64 + rng.sample::<f64, _>(StandardNormal)).collect();
            let index = -0.8 + 0.6 * x[0] - 0.3 * x[1] + 0.8 * pull;
            let w = rng.gen::<f64>() < 1.0 / (1.0 + (-index).exp());
            let y1 = 1.0 + x.iter().zip([0.5, 0.3, -0.2, 0.1]).map(|(a, b)| a * b).sum::<f64>() + level + rng.sample::<f64, _>(StandardNormal);
            let y2 = y1 + 1.0 + 0.4 * x[0] + SEZ_EFFECT * w as u8 as f64 + trend + rng.sample::<f64, _>(StandardNormal);
            let _ = writeln!(out, "v{id:04},c{county:02},{lon:.6},{lat:.6},{:.6},{:.6},{:.6},{:.6},{},{y1:.6},{y2:.6}", x[0], x[1], x[2], x[3], w as u8);
            id += 1;
        }
    }
    out
}

pub const SEZ_CONFIG: &str = r#"
[data]
id = "village"
coords = ["lon", "lat"]
attributes = ["pop_density", "literacy", "irrigation", "road_km"]
treatment = "sez"
pre = "y_2001"
post = "y_2011"
cluster = "county"

[exposure]
kind = "cluster_ratio"

[models]
ps_method = "cbps"

[[estimands]]
target = "dr_datt"
g = 1

[[estimands]]
target = "dr_datt"
g = 0

[[estimands]]
target = "canonical_twfe"

[inference]
methods = ["ehw", "cluster", "shac"]
bandwidth = 1.0
"#;

pub fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

pub fn nbrdid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nbrdid")).args(args).output().unwrap()
}

pub fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}
