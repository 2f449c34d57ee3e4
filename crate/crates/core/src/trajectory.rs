//! Sampled generator measurements and their CSV/JSON file format.
//!
//! The CSV header is `t,theta_<id>...,omega_<id>...` in canonical generator
//! order; provenance goes to a `<path>.meta.json` sidecar.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::BusId;
use crate::simulator::{DynParams, ForcingSpec};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub case: Option<String>,
    /// `reduced` or `full_dae`.
    #[serde(default)]
    pub method: Option<String>,
    #[serde(default)]
    pub forcing: Option<ForcingSpec>,
    #[serde(default)]
    pub params: Option<DynParams>,
    #[serde(default)]
    pub burn_in: f64,
    #[serde(default)]
    pub initial_state: Option<String>,
    #[serde(default)]
    pub version: Option<String>,
    #[serde(default)]
    pub scenario_hash: Option<String>,
}

/// Uniformly sampled angle and frequency deviations at the generators.
/// Row `i` of `theta`/`omega` is the state at `t = i * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub gen_ids: Vec<BusId>,
    pub theta: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub meta: TrajectoryMeta,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    dt: f64,
    n_samples: usize,
    gen_ids: Vec<BusId>,
    #[serde(flatten)]
    meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn n_samples(&self) -> usize {
        self.theta.nrows()
    }

    pub fn n_gen(&self) -> usize {
        self.gen_ids.len()
    }

    /// Total duration `N * dt` in seconds.
    pub fn duration(&self) -> f64 {
        self.n_samples() as f64 * self.dt
    }

    /// Stacked state `[theta; omega]` at sample `i`.
    pub fn state(&self, i: usize) -> nalgebra::DVector<f64> {
        let g = self.n_gen();
        nalgebra::DVector::from_fn(2 * g, |r, _| {
            if r < g {
                self.theta[(i, r)]
            } else {
                self.omega[(i, r - g)]
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.n_gen();
        if self.n_samples() < 2 {
            return Err(Error::Schema("trajectory needs at least two samples".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Schema("dt must be positive".into()));
        }
        if self.theta.ncols() != g || self.omega.ncols() != g || self.omega.nrows() != self.n_samples() {
            return Err(Error::Schema("theta/omega shape does not match generator count".into()));
        }
        if self.theta.iter().chain(self.omega.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Schema("trajectory contains non-finite values".into()));
        }
        Ok(())
    }

    /// Keeps samples `start..start + len`.
    pub fn window(&self, start: usize, len: usize) -> Trajectory {
        Trajectory {
            dt: self.dt,
            gen_ids: self.gen_ids.clone(),
            theta: self.theta.rows(start, len).into_owned(),
            omega: self.omega.rows(start, len).into_owned(),
            meta: self.meta.clone(),
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_trajectory(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    traj.validate()?;
    let mut out = String::with_capacity(traj.n_samples() * (1 + 2 * traj.n_gen()) * 24);
    out.push('t');
    for prefix in ["theta", "omega"] {
        for id in &traj.gen_ids {
            let _ = write!(out, ",{prefix}_{id}");
        }
    }
    out.push('\n');
    for i in 0..traj.n_samples() {
        out.push_str(&num(i as f64 * traj.dt));
        for v in traj.theta.row(i).iter().chain(traj.omega.row(i).iter()) {
            out.push(',');
            out.push_str(&num(*v));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))?;

    let sidecar = Sidecar {
        dt: traj.dt,
        n_samples: traj.n_samples(),
        gen_ids: traj.gen_ids.clone(),
        meta: traj.meta.clone(),
    };
    let meta_path = sidecar_path(path);
    let text = serde_json::to_string_pretty(&sidecar).expect("metadata serializes");
    std::fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))
}

fn parse_header(header: &str) -> Result<Vec<BusId>> {
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    if columns.first() != Some(&"t") {
        return Err(Error::Schema("first column must be t".into()));
    }
    let rest = &columns[1..];
    if rest.is_empty() || !rest.len().is_multiple_of(2) {
        return Err(Error::Schema(format!(
            "expected matching theta_/omega_ columns, found {} data columns",
            rest.len()
        )));
    }
    let g = rest.len() / 2;
    let ids = |prefix: &str, cols: &[&str]| -> Result<Vec<BusId>> {
        cols.iter()
            .map(|c| {
                c.strip_prefix(prefix)
                    .and_then(|id| id.parse().ok())
                    .ok_or_else(|| Error::Schema(format!("unexpected column {c:?}, wanted {prefix}<id>")))
            })
            .collect()
    };
    let theta_ids = ids("theta_", &rest[..g])?;
    let omega_ids = ids("omega_", &rest[g..])?;
    if theta_ids != omega_ids {
        return Err(Error::Schema("theta and omega columns list different generators".into()));
    }
    Ok(theta_ids)
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let (_, header) = lines.next().ok_or_else(|| Error::Schema("empty trajectory file".into()))?;
    let gen_ids = parse_header(header)?;
    let g = gen_ids.len();

    let mut times = Vec::new();
    let mut values = Vec::new();
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 1 + 2 * g {
            return Err(Error::Schema(format!(
                "line {}: expected {} columns, found {}",
                lineno + 1,
                1 + 2 * g,
                fields.len()
            )));
        }
        for (col, field) in fields.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                context: path.display().to_string(),
                line: lineno + 1,
                column: col + 1,
                message: format!("not a number: {field:?}"),
            })?;
            if col == 0 {
                times.push(v);
            } else {
                values.push(v);
            }
        }
    }
    let n = times.len();
    let row_major = DMatrix::from_row_slice(n, 2 * g, &values);
    let theta = row_major.columns(0, g).into_owned();
    let omega = row_major.columns(g, g).into_owned();

    let meta_path = sidecar_path(path);
    let (dt, meta) = if meta_path.exists() {
        let meta_text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let sidecar: Sidecar = serde_json::from_str(&meta_text)
            .map_err(|e| Error::json(meta_path.display().to_string(), &e))?;
        if sidecar.gen_ids != gen_ids || sidecar.n_samples != n {
            return Err(Error::Schema("sidecar metadata disagrees with the CSV".into()));
        }
        (sidecar.dt, sidecar.meta)
    } else if n >= 2 {
        (times[1] - times[0], TrajectoryMeta::default())
    } else {
        return Err(Error::Schema("trajectory needs at least two samples".into()));
    };

    let traj = Trajectory { dt, gen_ids, theta, omega, meta };
    traj.validate()?;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trajectory {
        Trajectory {
            dt: 0.02,
            gen_ids: vec![1, 5],
            theta: DMatrix::from_fn(4, 2, |i, j| (i as f64 + 1.0) * 0.1 + j as f64 / 3.0),
            omega: DMatrix::from_fn(4, 2, |i, j| -(i as f64) * 1e-7 + j as f64 * std::f64::consts::PI),
            meta: TrajectoryMeta { seed: Some(4), case: Some("line5".into()), ..Default::default() },
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        let traj = sample();
        write_trajectory(&traj, &path).unwrap();
        assert_eq!(read_trajectory(&path).unwrap(), traj);
        let header = std::fs::read_to_string(&path).unwrap().lines().next().unwrap().to_string();
        assert_eq!(header, "t,theta_1,theta_5,omega_1,omega_5");
    }

    #[test]
    fn missing_omega_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,theta_1,theta_5\n0,0,0\n0.02,0,0\n").unwrap();
        assert!(matches!(read_trajectory(&path), Err(Error::Schema(_))));
        std::fs::write(&path, "t,theta_1,omega_1\n0,0,0\n0.02,0\n").unwrap();
        assert!(matches!(read_trajectory(&path), Err(Error::Schema(_))));
        std::fs::write(&path, "t,theta_1,omega_2\n0,0,0\n0.02,0,0\n").unwrap();
        assert!(matches!(read_trajectory(&path), Err(Error::Schema(_))));
    }

    #[test]
    fn dt_from_time_column_without_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plain.csv");
        std::fs::write(&path, "# produced elsewhere\nt,theta_3,omega_3\n0,1,2\n0.1,3,4\n0.2,5,6\n").unwrap();
        let traj = read_trajectory(&path).unwrap();
        assert!((traj.dt - 0.1).abs() < 1e-15);
        assert_eq!(traj.gen_ids, vec![3]);
        assert_eq!(traj.omega[(2, 0)], 6.0);
    }
}
