//! Cell-centred finite volumes on an interval or rectangle with homogeneous
//! Neumann boundaries.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::age_discretization::RegularizedModel;
use crate::error::{Result, SimError};

pub type Field = Vec<f64>;

/// An interior face between cells `left` and `right` (right is the neighbour
/// in the positive direction of `axis`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Face {
    pub left: usize,
    pub right: usize,
    pub axis: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Domain lengths, one per axis.
    pub extents: Vec<f64>,
    /// Cells per axis.
    pub cells: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SpatialGrid {
    pub dim: usize,
    pub nx: usize,
    pub ny: usize,
    pub lengths: [f64; 2],
    pub h: [f64; 2],
    pub faces: Vec<Face>,
}

/// Face diffusivities and drift velocities for one (Λ, v) pair; shared by
/// every age bin within a step.
#[derive(Debug, Clone, Default)]
pub struct FaceCoefficients {
    pub diffusivity: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl SpatialGrid {
    pub fn new_1d(length: f64, n: usize) -> Self {
        Self::build(1, [length, 1.0], [n, 1])
    }

    pub fn new_2d(lx: f64, ly: f64, nx: usize, ny: usize) -> Self {
        Self::build(2, [lx, ly], [nx, ny])
    }

    pub fn from_spec(spec: &GridSpec) -> Result<Self> {
        match (spec.extents.as_slice(), spec.cells.as_slice()) {
            ([l], [n]) => Ok(Self::new_1d(*l, *n)),
            ([lx, ly], [nx, ny]) => Ok(Self::new_2d(*lx, *ly, *nx, *ny)),
            _ => Err(SimError::ConfigInvalid(vec![
                "grid: extents and cells must both have length 1 or 2".into(),
            ])),
        }
    }

    fn build(dim: usize, lengths: [f64; 2], n: [usize; 2]) -> Self {
        assert!(n[0] >= 1 && n[1] >= 1);
        assert!(lengths[0] > 0.0 && lengths[1] > 0.0);
        let (nx, ny) = (n[0], n[1]);
        let mut faces = Vec::with_capacity((nx - 1) * ny + nx * ny.saturating_sub(1));
        for j in 0..ny {
            for i in 0..nx - 1 {
                faces.push(Face { left: i + nx * j, right: i + 1 + nx * j, axis: 0 });
            }
        }
        if dim == 2 {
            for j in 0..ny - 1 {
                for i in 0..nx {
                    faces.push(Face { left: i + nx * j, right: i + nx * (j + 1), axis: 1 });
                }
            }
        }
        let h = [lengths[0] / nx as f64, if dim == 2 { lengths[1] / ny as f64 } else { 1.0 }];
        Self { dim, nx, ny, lengths, h, faces }
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_volume(&self) -> f64 {
        if self.dim == 1 {
            self.h[0]
        } else {
            self.h[0] * self.h[1]
        }
    }

    pub fn domain_volume(&self) -> f64 {
        self.cell_volume() * self.n_cells() as f64
    }

    /// Smallest spacing over the active axes.
    pub fn h_min(&self) -> f64 {
        if self.dim == 1 {
            self.h[0]
        } else {
            self.h[0].min(self.h[1])
        }
    }

    /// Σ_axis 2/h², the diagonal weight of the discrete Laplacian.
    pub fn laplacian_weight(&self) -> f64 {
        (0..self.dim).map(|k| 2.0 / (self.h[k] * self.h[k])).sum()
    }

    pub fn cell_center(&self, c: usize) -> [f64; 2] {
        let (i, j) = (c % self.nx, c / self.nx);
        let x = (i as f64 + 0.5) * self.h[0];
        let y = if self.dim == 2 { (j as f64 + 0.5) * self.h[1] } else { 0.0 };
        [x, y]
    }

    pub fn face_center(&self, f: &Face) -> [f64; 2] {
        let mut p = self.cell_center(f.left);
        p[f.axis] += 0.5 * self.h[f.axis];
        p
    }

    pub fn check(&self, field: &[f64]) -> Result<()> {
        if field.len() != self.n_cells() {
            return Err(SimError::GridMismatch { expected: self.n_cells(), got: field.len() });
        }
        Ok(())
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().sum::<f64>() * self.cell_volume()
    }

    pub fn norm_l2(&self, f: &[f64]) -> f64 {
        (f.iter().map(|x| x * x).sum::<f64>() * self.cell_volume()).sqrt()
    }

    pub fn sample(&self, f: impl Fn([f64; 2]) -> f64) -> Field {
        (0..self.n_cells()).map(|c| f(self.cell_center(c))).collect()
    }

    /// Face coefficients with arbitrary diffusivity and drift closures:
    /// arithmetic face means of D(Λ) and E(Λ, v), and w = E_f·(Λ_R − Λ_L)/h.
    pub fn face_coefficients_with(
        &self,
        lambda: &[f64],
        v: &[f64],
        d: impl Fn(f64) -> f64,
        e: impl Fn(f64, f64) -> f64,
    ) -> FaceCoefficients {
        let dc: Vec<f64> = lambda.iter().map(|&l| d(l)).collect();
        let ec: Vec<f64> = lambda.iter().zip(v).map(|(&l, &s)| e(l, s)).collect();
        let mut out = FaceCoefficients {
            diffusivity: Vec::with_capacity(self.faces.len()),
            velocity: Vec::with_capacity(self.faces.len()),
        };
        for f in &self.faces {
            out.diffusivity.push(0.5 * (dc[f.left] + dc[f.right]));
            let ef = 0.5 * (ec[f.left] + ec[f.right]);
            out.velocity.push(ef * (lambda[f.right] - lambda[f.left]) / self.h[f.axis]);
        }
        out
    }

    pub fn face_coefficients(&self, lambda: &[f64], v: &[f64], reg: &RegularizedModel) -> FaceCoefficients {
        self.face_coefficients_with(lambda, v, |l| reg.d_alpha(l), |l, s| reg.e_alpha(l, s))
    }

    /// Adds div(D∇u + q(u)·E∇Λ) to `out`, where the drift transports `q(u)`
    /// upwind with respect to the motion −E∇Λ.
    pub fn accumulate_div_flux(
        &self,
        coeffs: &FaceCoefficients,
        u: &[f64],
        q: impl Fn(f64) -> f64,
        out: &mut [f64],
    ) {
        for (k, f) in self.faces.iter().enumerate() {
            let inv_h = 1.0 / self.h[f.axis];
            let (ul, ur) = (u[f.left], u[f.right]);
            let w = coeffs.velocity[k];
            let transported = if w > 0.0 { q(ur) } else { q(ul) };
            let flux = coeffs.diffusivity[k] * (ur - ul) * inv_h + w * transported;
            out[f.left] += flux * inv_h;
            out[f.right] -= flux * inv_h;
        }
    }

    /// div(D_α(Λ)∇u + uΘ(α²u)E_α(Λ,v)∇Λ).
    pub fn div_flux(&self, u: &[f64], lambda: &[f64], v: &[f64], reg: &RegularizedModel) -> Result<Field> {
        self.check(u)?;
        self.check(lambda)?;
        self.check(v)?;
        let coeffs = self.face_coefficients(lambda, v, reg);
        let mut out = vec![0.0; self.n_cells()];
        self.accumulate_div_flux(&coeffs, u, |x| reg.transported(x), &mut out);
        Ok(out)
    }

    pub fn accumulate_laplacian(&self, f: &[f64], scale: f64, out: &mut [f64]) {
        for face in &self.faces {
            let inv_h2 = 1.0 / (self.h[face.axis] * self.h[face.axis]);
            let flux = scale * (f[face.right] - f[face.left]) * inv_h2;
            out[face.left] += flux;
            out[face.right] -= flux;
        }
    }

    pub fn laplacian(&self, f: &[f64]) -> Result<Field> {
        self.check(f)?;
        let mut out = vec![0.0; self.n_cells()];
        self.accumulate_laplacian(f, 1.0, &mut out);
        Ok(out)
    }

    /// Centred face gradients (f_R − f_L)/h, one per interior face.
    pub fn grad(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check(f)?;
        Ok(self
            .faces
            .iter()
            .map(|face| (f[face.right] - f[face.left]) / self.h[face.axis])
            .collect())
    }

    /// |∇√u|² from face differences of cell square roots, averaged back to
    /// cells; boundary faces contribute zero.
    pub fn grad_sq_root(&self, u: &[f64]) -> Result<Field> {
        self.check(u)?;
        if let Some((cell, &value)) = u.iter().enumerate().find(|(_, &x)| x < 0.0) {
            return Err(SimError::NegativeField { cell, value });
        }
        let roots: Vec<f64> = u.iter().map(|x| x.sqrt()).collect();
        let g = self.grad(&roots)?;
        let mut out = vec![0.0; self.n_cells()];
        for (face, gk) in self.faces.iter().zip(&g) {
            let half = 0.5 * gk * gk;
            out[face.left] += half;
            out[face.right] += half;
        }
        Ok(out)
    }

    /// ∫ weight_f·|∇f|_f² as a sum over interior faces (each face owns one
    /// cell volume).
    pub fn face_energy(&self, f: &[f64], weight: &[f64]) -> f64 {
        let vol = self.cell_volume();
        self.faces
            .iter()
            .zip(weight)
            .map(|(face, w)| {
                let g = (f[face.right] - f[face.left]) / self.h[face.axis];
                w * g * g
            })
            .sum::<f64>()
            * vol
    }

    /// Piecewise-constant injection of a field from a coarser grid whose cell
    /// counts divide this grid's.
    pub fn prolong_from(&self, coarse: &SpatialGrid, f: &[f64]) -> Result<Field> {
        coarse.check(f)?;
        if coarse.dim != self.dim || self.nx % coarse.nx != 0 || self.ny % coarse.ny != 0 {
            return Err(SimError::GridMismatch { expected: self.n_cells(), got: coarse.n_cells() });
        }
        let (rx, ry) = (self.nx / coarse.nx, self.ny / coarse.ny);
        Ok((0..self.n_cells())
            .map(|c| {
                let (i, j) = (c % self.nx, c / self.nx);
                f[i / rx + coarse.nx * (j / ry)]
            })
            .collect())
    }

    /// One row per cell: index, coordinates, then each named column.
    pub fn write_csv<W: Write>(&self, w: W, columns: &[(&str, &[f64])]) -> Result<()> {
        for (_, col) in columns {
            self.check(col)?;
        }
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["cell".to_string(), "x".to_string()];
        if self.dim == 2 {
            header.push("y".into());
        }
        header.extend(columns.iter().map(|(n, _)| n.to_string()));
        wr.write_record(&header)?;
        for c in 0..self.n_cells() {
            let p = self.cell_center(c);
            let mut row = vec![c.to_string(), p[0].to_string()];
            if self.dim == 2 {
                row.push(p[1].to_string());
            }
            row.extend(columns.iter().map(|(_, col)| col[c].to_string()));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Columnar binary dump: magic, u32 dim/nx/ny/ncols, f64 time, column
    /// names (u32 length + UTF-8), then each column as little-endian f64.
    pub fn write_binary<W: Write>(&self, mut w: W, t: f64, columns: &[(&str, &[f64])]) -> Result<()> {
        for (_, col) in columns {
            self.check(col)?;
        }
        w.write_all(BINARY_MAGIC)?;
        for n in [self.dim, self.nx, self.ny, columns.len()] {
            w.write_all(&(n as u32).to_le_bytes())?;
        }
        w.write_all(&t.to_le_bytes())?;
        for (name, _) in columns {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
        }
        for (_, col) in columns {
            for x in col.iter() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

pub const BINARY_MAGIC: &[u8; 8] = b"SWRMFD01";

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDump {
    pub dim: usize,
    pub nx: usize,
    pub ny: usize,
    pub t: f64,
    pub columns: Vec<(String, Vec<f64>)>,
}

fn bad(msg: &str) -> SimError {
    SimError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string()))
}

pub fn read_binary<R: Read>(mut r: R) -> Result<BinaryDump> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(bad("not a field dump"));
    }
    let mut u32s = [0usize; 4];
    for slot in &mut u32s {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *slot = u32::from_le_bytes(b) as usize;
    }
    let [dim, nx, ny, ncols] = u32s;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let t = f64::from_le_bytes(b8);
    let mut names = Vec::with_capacity(ncols);
    for _ in 0..ncols {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        let mut name = vec![0u8; u32::from_le_bytes(b) as usize];
        r.read_exact(&mut name)?;
        names.push(String::from_utf8(name).map_err(|_| bad("column name is not UTF-8"))?);
    }
    let mut columns = Vec::with_capacity(ncols);
    for name in names {
        let mut col = Vec::with_capacity(nx * ny);
        for _ in 0..nx * ny {
            r.read_exact(&mut b8)?;
            col.push(f64::from_le_bytes(b8));
        }
        columns.push((name, col));
    }
    Ok(BinaryDump { dim, nx, ny, t, columns })
}
