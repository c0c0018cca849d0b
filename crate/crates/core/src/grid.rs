//! Densities on uniform periodic 3D grids, their binary/CSV forms, and reductions.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HelidiffError, Result};
use crate::sampling::pairwise_sum;

/// Cells of a periodic box `[c − L/2, c + L/2)³`, stored row-major with `z` fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub shape: [usize; 3],
    pub center: [f64; 3],
    pub side: f64,
}

impl GridGeometry {
    pub fn new(shape: [usize; 3], center: [f64; 3], side: f64) -> Result<Self> {
        if shape.contains(&0) {
            return Err(HelidiffError::Config(format!("grid shape {shape:?} has an empty axis")));
        }
        if !(side > 0.0 && side.is_finite()) {
            return Err(HelidiffError::Config(format!("grid side must be positive, got {side}")));
        }
        Ok(GridGeometry {
            shape,
            center,
            side,
        })
    }

    /// `n³` cells on a cube of the given side centered at the origin.
    pub fn cube(n: usize, side: f64) -> Self {
        GridGeometry::new([n, n, n], [0.0; 3], side).expect("valid cube")
    }

    pub fn len(&self) -> usize {
        self.shape[0] * self.shape[1] * self.shape[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn spacing(&self, axis: usize) -> f64 {
        self.side / self.shape[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing(0) * self.spacing(1) * self.spacing(2)
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(3)
    }

    #[inline]
    pub fn lower(&self, axis: usize) -> f64 {
        self.center[axis] - 0.5 * self.side
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.shape[1] + j) * self.shape[2] + k
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.shape[2];
        let j = (idx / self.shape[2]) % self.shape[1];
        let i = idx / (self.shape[1] * self.shape[2]);
        [i, j, k]
    }

    /// Index of the neighbor `offset` cells away along `axis`, wrapping periodically.
    #[inline]
    pub fn shift(&self, cell: [usize; 3], axis: usize, offset: isize) -> usize {
        let mut c = cell;
        let n = self.shape[axis] as isize;
        c[axis] = (c[axis] as isize + offset).rem_euclid(n) as usize;
        self.index(c[0], c[1], c[2])
    }

    #[inline]
    pub fn cell_center(&self, cell: [usize; 3]) -> [f64; 3] {
        let mut x = [0.0; 3];
        for a in 0..3 {
            x[a] = self.lower(a) + (cell[a] as f64 + 0.5) * self.spacing(a);
        }
        x
    }

    /// Center of the face between `cell` and its `+axis` neighbor.
    #[inline]
    pub fn face_center(&self, cell: [usize; 3], axis: usize) -> [f64; 3] {
        let mut x = self.cell_center(cell);
        x[axis] += 0.5 * self.spacing(axis);
        x
    }
}

/// Probability density sampled at cell centers.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid {
    pub geometry: GridGeometry,
    pub values: Vec<f64>,
    pub time: f64,
}

/// JSON sidecar written next to a binary grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub shape: [usize; 3],
    #[serde(rename = "box")]
    pub bounds: BoxMeta,
    pub time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxMeta {
    pub center: [f64; 3],
    pub side: f64,
}

impl DensityGrid {
    pub fn zeros(geometry: GridGeometry) -> Self {
        let n = geometry.len();
        DensityGrid {
            geometry,
            values: vec![0.0; n],
            time: 0.0,
        }
    }

    /// Samples `f` at every cell center.
    pub fn from_fn<F>(geometry: GridGeometry, f: F) -> Self
    where
        F: Fn(&[f64; 3]) -> f64 + Sync,
    {
        let values = (0..geometry.len())
            .into_par_iter()
            .map(|idx| f(&geometry.cell_center(geometry.unravel(idx))))
            .collect();
        DensityGrid {
            geometry,
            values,
            time: 0.0,
        }
    }

    pub fn uniform(geometry: GridGeometry) -> Self {
        let v = 1.0 / geometry.volume();
        let n = geometry.len();
        DensityGrid {
            geometry,
            values: vec![v; n],
            time: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `Σ f ΔV`.
    pub fn mass(&self) -> f64 {
        pairwise_sum(&self.values) * self.geometry.cell_volume()
    }

    pub fn mean(&self) -> f64 {
        pairwise_sum(&self.values) / self.values.len() as f64
    }

    /// `Σ f q ΔV` for a cell-wise weight `q`.
    pub fn integrate(&self, weight: &[f64]) -> f64 {
        let prod: Vec<f64> = self.values.iter().zip(weight).map(|(a, b)| a * b).collect();
        pairwise_sum(&prod) * self.geometry.cell_volume()
    }

    /// Rescales to unit mass.
    pub fn normalize(&mut self) -> Result<()> {
        let m = self.mass();
        if !(m > 0.0 && m.is_finite()) {
            return Err(HelidiffError::Numerical(format!("cannot normalize a grid of mass {m}")));
        }
        let s = 1.0 / m;
        self.values.par_iter_mut().for_each(|v| *v *= s);
        Ok(())
    }

    pub fn normalized(mut self) -> Result<Self> {
        self.normalize()?;
        Ok(self)
    }

    /// `max |f − f̄| / f̄`.
    pub fn max_rel_deviation_from_mean(&self) -> f64 {
        let m = self.mean();
        self.values
            .iter()
            .map(|v| (v - m).abs() / m)
            .fold(0.0, f64::max)
    }

    /// Average over `z`, giving a single-layer grid with the same mass.
    pub fn marginalize_z(&self) -> DensityGrid {
        let g = &self.geometry;
        let [nx, ny, nz] = g.shape;
        let mut out = DensityGrid::zeros(GridGeometry {
            shape: [nx, ny, 1],
            center: g.center,
            side: g.side,
        });
        out.time = self.time;
        for i in 0..nx {
            for j in 0..ny {
                let col: Vec<f64> = (0..nz).map(|k| self.values[g.index(i, j, k)]).collect();
                out.values[i * ny + j] = pairwise_sum(&col) / nz as f64;
            }
        }
        out
    }

    /// Averages blocks of `factor[a]` cells along each axis.
    pub fn coarsen(&self, factor: [usize; 3]) -> Result<DensityGrid> {
        let g = &self.geometry;
        for a in 0..3 {
            if factor[a] == 0 || !g.shape[a].is_multiple_of(factor[a]) {
                return Err(HelidiffError::Contract(format!(
                    "cannot coarsen axis of {} cells by {}",
                    g.shape[a], factor[a]
                )));
            }
        }
        let shape = [
            g.shape[0] / factor[0],
            g.shape[1] / factor[1],
            g.shape[2] / factor[2],
        ];
        let geom = GridGeometry::new(shape, g.center, g.side)?;
        let per = (factor[0] * factor[1] * factor[2]) as f64;
        let values = (0..geom.len())
            .into_par_iter()
            .map(|idx| {
                let [ci, cj, ck] = geom.unravel(idx);
                let mut s = 0.0;
                for di in 0..factor[0] {
                    for dj in 0..factor[1] {
                        for dk in 0..factor[2] {
                            s += self.values[g.index(
                                ci * factor[0] + di,
                                cj * factor[1] + dj,
                                ck * factor[2] + dk,
                            )];
                        }
                    }
                }
                s / per
            })
            .collect();
        Ok(DensityGrid {
            geometry: geom,
            values,
            time: self.time,
        })
    }

    pub fn sidecar(&self) -> GridSidecar {
        GridSidecar {
            shape: self.geometry.shape,
            bounds: BoxMeta {
                center: self.geometry.center,
                side: self.geometry.side,
            },
            time: self.time,
        }
    }

    /// Path of the sidecar that accompanies a binary grid file.
    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    /// Row-major little-endian `f64` values plus `<path>.json`. Returns both paths.
    pub fn write_binary(&self, path: &Path) -> Result<(PathBuf, PathBuf)> {
        let mut bytes = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, bytes)?;
        let side = DensityGrid::sidecar_path(path);
        fs::write(&side, serde_json::to_string_pretty(&self.sidecar())?)?;
        Ok((path.to_path_buf(), side))
    }

    pub fn read_binary(path: &Path) -> Result<DensityGrid> {
        let meta: GridSidecar =
            serde_json::from_str(&fs::read_to_string(DensityGrid::sidecar_path(path))?)?;
        let geometry = GridGeometry::new(meta.shape, meta.bounds.center, meta.bounds.side)?;
        let bytes = fs::read(path)?;
        if bytes.len() != geometry.len() * 8 {
            return Err(HelidiffError::Config(format!(
                "{} holds {} bytes, shape {:?} needs {}",
                path.display(),
                bytes.len(),
                meta.shape,
                geometry.len() * 8
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(DensityGrid {
            geometry,
            values,
            time: meta.time,
        })
    }

    /// Plane `k` as CSV: a `# helidiff-slice` header line, then one row per `x` index.
    pub fn slice_csv(&self, k: usize) -> Result<String> {
        let g = &self.geometry;
        if k >= g.shape[2] {
            return Err(HelidiffError::Contract(format!(
                "slice {k} outside {} z-layers",
                g.shape[2]
            )));
        }
        let z = g.cell_center([0, 0, k])[2];
        let mut s = format!(
            "# helidiff-slice nx={} ny={} side={:e} cx={:e} cy={:e} z={:e} time={:e}\n",
            g.shape[0], g.shape[1], g.side, g.center[0], g.center[1], z, self.time
        );
        for i in 0..g.shape[0] {
            let row: Vec<String> = (0..g.shape[1])
                .map(|j| format!("{:e}", self.values[g.index(i, j, k)]))
                .collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        Ok(s)
    }

    pub fn write_slice_csv(&self, path: &Path, k: usize) -> Result<()> {
        let mut file = fs::File::create(path)?;
        file.write_all(self.slice_csv(k)?.as_bytes())?;
        Ok(())
    }

    /// Reads a CSV slice as a single-layer grid.
    pub fn read_slice_csv(path: &Path) -> Result<DensityGrid> {
        let text = fs::read_to_string(path)?;
        DensityGrid::parse_slice_csv(&text)
    }

    pub fn parse_slice_csv(text: &str) -> Result<DensityGrid> {
        let bad = |m: &str| HelidiffError::Config(format!("malformed slice file: {m}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty"))?;
        let rest = header
            .strip_prefix("# helidiff-slice")
            .ok_or_else(|| bad("missing header"))?;
        let field = |key: &str| -> Result<f64> {
            rest.split_whitespace()
                .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
                .ok_or_else(|| bad(&format!("missing {key}")))?
                .parse::<f64>()
                .map_err(|_| bad(&format!("bad {key}")))
        };
        let nx = field("nx")? as usize;
        let ny = field("ny")? as usize;
        let side = field("side")?;
        let cx = field("cx")?;
        let cy = field("cy")?;
        let z = field("z")?;
        let time = field("time")?;
        let geometry = GridGeometry::new([nx, ny, 1], [cx, cy, z], side)?;
        let mut values = Vec::with_capacity(nx * ny);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            for tok in line.split(',') {
                values.push(tok.trim().parse::<f64>().map_err(|_| bad("bad value"))?);
            }
        }
        if values.len() != nx * ny {
            return Err(bad(&format!("expected {} values, found {}", nx * ny, values.len())));
        }
        Ok(DensityGrid {
            geometry,
            values,
            time,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_round_trips() {
        let g = GridGeometry::new([3, 4, 5], [0.0; 3], 1.0).unwrap();
        for idx in 0..g.len() {
            let c = g.unravel(idx);
            assert_eq!(g.index(c[0], c[1], c[2]), idx);
        }
        assert_eq!(g.shift([0, 0, 0], 0, -1), g.index(2, 0, 0));
        assert_eq!(g.shift([2, 3, 4], 2, 1), g.index(2, 3, 0));
    }

    #[test]
    fn uniform_grid_has_unit_mass() {
        let f = DensityGrid::uniform(GridGeometry::cube(8, 6.0));
        assert!((f.mass() - 1.0).abs() < 1e-14);
        assert!(f.max_rel_deviation_from_mean() < 1e-14);
    }

    #[test]
    fn marginal_and_coarsen_preserve_mass() {
        let g = GridGeometry::cube(8, 2.0);
        let f = DensityGrid::from_fn(g, |x| 1.0 + 0.5 * (x[0] + 2.0 * x[2]).sin())
            .normalized()
            .unwrap();
        assert!((f.marginalize_z().mass() - 1.0).abs() < 1e-12);
        assert!((f.coarsen([2, 4, 1]).unwrap().mass() - 1.0).abs() < 1e-12);
        assert!(f.coarsen([3, 1, 1]).is_err());
    }

    #[test]
    fn slice_text_round_trip() {
        let g = GridGeometry::new([3, 2, 2], [0.5, 0.0, 0.0], 2.0).unwrap();
        let f = DensityGrid::from_fn(g, |x| x[0] + 10.0 * x[1]);
        let back = DensityGrid::parse_slice_csv(&f.slice_csv(1).unwrap()).unwrap();
        assert_eq!(back.geometry.shape, [3, 2, 1]);
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(back.values[i * 2 + j], f.values[f.geometry.index(i, j, 1)]);
            }
        }
    }
}
