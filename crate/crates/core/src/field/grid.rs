//! Structured-grid vector fields: trilinear evaluation, the analytic
//! Jacobian of the interpolant, and the VFGRID file formats.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::field::{BoxDomain, FieldError};
use crate::{Mat3, Vec3};

/// Vertex-sampled vector field on a regular grid.
///
/// Samples are stored as `f32` triples in x-fastest row-major order, which is
/// also the on-disk order of both VFGRID variants.
#[derive(Debug, Clone)]
pub struct GridField {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub bounds: BoxDomain,
    samples: Vec<[f32; 3]>,
}

const BINARY_MAGIC: &[u8; 4] = b"VFGB";

fn open_grid(path: &Path) -> Result<std::fs::File, FieldError> {
    std::fs::File::open(path)
        .map_err(|e| FieldError::Grid(format!("cannot open {}: {e}", path.display())))
}

impl GridField {
    pub fn new(
        nx: usize,
        ny: usize,
        nz: usize,
        bounds: BoxDomain,
        samples: Vec<[f32; 3]>,
    ) -> Result<Self, FieldError> {
        if nx < 2 || ny < 2 || nz < 2 {
            return Err(FieldError::Grid(format!(
                "grid dimensions must be at least 2, got {nx}x{ny}x{nz}"
            )));
        }
        if samples.len() != nx * ny * nz {
            return Err(FieldError::Grid(format!(
                "expected {} samples, got {}",
                nx * ny * nz,
                samples.len()
            )));
        }
        Ok(GridField { nx, ny, nz, bounds, samples })
    }

    /// Sample a field closure at the grid vertices (test and tooling helper).
    pub fn from_fn(
        nx: usize,
        ny: usize,
        nz: usize,
        bounds: BoxDomain,
        mut f: impl FnMut(&Vec3) -> Vec3,
    ) -> Result<Self, FieldError> {
        let mut samples = Vec::with_capacity(nx * ny * nz);
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    let p = bounds.min
                        + Vec3::new(
                            ix as f64 * (bounds.max.x - bounds.min.x) / (nx - 1) as f64,
                            iy as f64 * (bounds.max.y - bounds.min.y) / (ny - 1) as f64,
                            iz as f64 * (bounds.max.z - bounds.min.z) / (nz - 1) as f64,
                        );
                    let v = f(&p);
                    samples.push([v.x as f32, v.y as f32, v.z as f32]);
                }
            }
        }
        Self::new(nx, ny, nz, bounds, samples)
    }

    pub fn sample(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        let s = self.samples[ix + self.nx * (iy + self.ny * iz)];
        Vec3::new(s[0] as f64, s[1] as f64, s[2] as f64)
    }

    pub fn samples(&self) -> &[[f32; 3]] {
        &self.samples
    }

    fn spacing(&self) -> Vec3 {
        Vec3::new(
            (self.bounds.max.x - self.bounds.min.x) / (self.nx - 1) as f64,
            (self.bounds.max.y - self.bounds.min.y) / (self.ny - 1) as f64,
            (self.bounds.max.z - self.bounds.min.z) / (self.nz - 1) as f64,
        )
    }

    /// Cell index and in-cell fraction per axis, with queries clamped into the
    /// grid so evaluation inside the bounds never fails. Fractions within one
    /// part in 1e12 of a vertex snap to it, which keeps evaluation at grid
    /// vertices bit-exact.
    fn locate(&self, p: &Vec3) -> ([usize; 3], [f64; 3]) {
        let d = self.spacing();
        let dims = [self.nx, self.ny, self.nz];
        let mut idx = [0usize; 3];
        let mut frac = [0f64; 3];
        for axis in 0..3 {
            let c = ((p[axis] - self.bounds.min[axis]) / d[axis])
                .clamp(0.0, (dims[axis] - 1) as f64);
            let mut i = c.floor() as usize;
            if i >= dims[axis] - 1 {
                i = dims[axis] - 2;
            }
            let mut t = c - i as f64;
            if t < 1e-12 {
                t = 0.0;
            } else if t > 1.0 - 1e-12 {
                i += 1;
                t = 0.0;
                if i >= dims[axis] - 1 {
                    i = dims[axis] - 2;
                    t = 1.0;
                }
            }
            idx[axis] = i;
            frac[axis] = t;
        }
        (idx, frac)
    }

    fn corner(&self, idx: [usize; 3], jx: usize, jy: usize, jz: usize) -> Vec3 {
        self.sample(idx[0] + jx, idx[1] + jy, idx[2] + jz)
    }

    /// Trilinear interpolation of the vertex samples.
    pub fn eval(&self, p: &Vec3) -> Vec3 {
        let (idx, t) = self.locate(p);
        let lerp = |a: Vec3, b: Vec3, t: f64| a + (b - a) * t;
        let mut face = [Vec3::zeros(); 2];
        for (jz, f) in face.iter_mut().enumerate() {
            let c00 = lerp(self.corner(idx, 0, 0, jz), self.corner(idx, 1, 0, jz), t[0]);
            let c10 = lerp(self.corner(idx, 0, 1, jz), self.corner(idx, 1, 1, jz), t[0]);
            *f = lerp(c00, c10, t[1]);
        }
        lerp(face[0], face[1], t[2])
    }

    /// Analytic Jacobian of the trilinear interpolant: per derivative axis a
    /// bilinear blend of vertex differences, piecewise constant across cells
    /// in that axis.
    pub fn jacobian(&self, p: &Vec3) -> Mat3 {
        let (idx, t) = self.locate(p);
        let d = self.spacing();
        let lerp = |a: Vec3, b: Vec3, t: f64| a + (b - a) * t;
        let mut cols = [Vec3::zeros(); 3];

        // d/dx: differences along x, bilinear in (y, z).
        let dx = |jy: usize, jz: usize| self.corner(idx, 1, jy, jz) - self.corner(idx, 0, jy, jz);
        cols[0] = lerp(lerp(dx(0, 0), dx(1, 0), t[1]), lerp(dx(0, 1), dx(1, 1), t[1]), t[2])
            / d.x;

        let dy = |jx: usize, jz: usize| self.corner(idx, jx, 1, jz) - self.corner(idx, jx, 0, jz);
        cols[1] = lerp(lerp(dy(0, 0), dy(1, 0), t[0]), lerp(dy(0, 1), dy(1, 1), t[0]), t[2])
            / d.y;

        let dz = |jx: usize, jy: usize| self.corner(idx, jx, jy, 1) - self.corner(idx, jx, jy, 0);
        cols[2] = lerp(lerp(dz(0, 0), dz(1, 0), t[0]), lerp(dz(0, 1), dz(1, 1), t[0]), t[1])
            / d.z;

        Mat3::from_columns(&cols)
    }

    pub fn load(path: &Path) -> Result<Self, FieldError> {
        let mut file = open_grid(path)?;
        let mut magic = [0u8; 4];
        let n = file.read(&mut magic)?;
        drop(file);
        if n == 4 && &magic == BINARY_MAGIC {
            Self::load_binary(path)
        } else {
            Self::load_ascii(path)
        }
    }

    /// ASCII format: `VFGRID 1 nx ny nz xmin ymin zmin xmax ymax zmax`
    /// followed by `nx*ny*nz` whitespace-separated `vx vy vz` lines in
    /// x-fastest order.
    pub fn load_ascii(path: &Path) -> Result<Self, FieldError> {
        let reader = BufReader::new(open_grid(path)?);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| FieldError::Grid("empty VFGRID file".into()))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 11 || fields[0] != "VFGRID" || fields[1] != "1" {
            return Err(FieldError::Grid(format!("bad VFGRID header `{header}`")));
        }
        let dim = |i: usize| -> Result<usize, FieldError> {
            fields[i]
                .parse()
                .map_err(|_| FieldError::Grid(format!("bad dimension `{}`", fields[i])))
        };
        let num = |i: usize| -> Result<f64, FieldError> {
            fields[i]
                .parse()
                .map_err(|_| FieldError::Grid(format!("bad bound `{}`", fields[i])))
        };
        let (nx, ny, nz) = (dim(2)?, dim(3)?, dim(4)?);
        let bounds = BoxDomain::new(
            Vec3::new(num(5)?, num(6)?, num(7)?),
            Vec3::new(num(8)?, num(9)?, num(10)?),
        )?;
        let mut samples = Vec::with_capacity(nx * ny * nz);
        for line in lines {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let mut parts = trimmed.split_whitespace();
            let mut triple = [0f32; 3];
            for slot in &mut triple {
                let tok = parts
                    .next()
                    .ok_or_else(|| FieldError::Grid(format!("short sample line `{line}`")))?;
                *slot = tok
                    .parse::<f32>()
                    .map_err(|_| FieldError::Grid(format!("bad sample `{tok}`")))?;
            }
            samples.push(triple);
        }
        Self::new(nx, ny, nz, bounds, samples)
    }

    /// Binary format: magic `VFGB`, little-endian, 3×int32 dims, 6×float64
    /// bounds, then `nx*ny*nz*3` float32 samples in x-fastest order.
    pub fn load_binary(path: &Path) -> Result<Self, FieldError> {
        let mut reader = BufReader::new(open_grid(path)?);
        let mut magic = [0u8; 4];
        reader.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(FieldError::Grid("missing VFGB magic".into()));
        }
        let mut i32buf = [0u8; 4];
        let mut dims = [0usize; 3];
        for d in &mut dims {
            reader.read_exact(&mut i32buf)?;
            let v = i32::from_le_bytes(i32buf);
            if v < 2 {
                return Err(FieldError::Grid(format!("bad dimension {v}")));
            }
            *d = v as usize;
        }
        let mut f64buf = [0u8; 8];
        let mut bounds = [0f64; 6];
        for b in &mut bounds {
            reader.read_exact(&mut f64buf)?;
            *b = f64::from_le_bytes(f64buf);
        }
        let bounds = BoxDomain::new(
            Vec3::new(bounds[0], bounds[1], bounds[2]),
            Vec3::new(bounds[3], bounds[4], bounds[5]),
        )?;
        let count = dims[0] * dims[1] * dims[2];
        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            let mut triple = [0f32; 3];
            for slot in &mut triple {
                reader.read_exact(&mut i32buf)?;
                *slot = f32::from_le_bytes(i32buf);
            }
            samples.push(triple);
        }
        Self::new(dims[0], dims[1], dims[2], bounds, samples)
    }

    pub fn write_ascii(&self, path: &Path) -> Result<(), FieldError> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            w,
            "VFGRID 1 {} {} {} {} {} {} {} {} {}",
            self.nx,
            self.ny,
            self.nz,
            self.bounds.min.x,
            self.bounds.min.y,
            self.bounds.min.z,
            self.bounds.max.x,
            self.bounds.max.y,
            self.bounds.max.z
        )?;
        for s in &self.samples {
            writeln!(w, "{} {} {}", s[0], s[1], s[2])?;
        }
        Ok(())
    }

    pub fn write_binary(&self, path: &Path) -> Result<(), FieldError> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(BINARY_MAGIC)?;
        for d in [self.nx, self.ny, self.nz] {
            w.write_all(&(d as i32).to_le_bytes())?;
        }
        for b in [
            self.bounds.min.x,
            self.bounds.min.y,
            self.bounds.min.z,
            self.bounds.max.x,
            self.bounds.max.y,
            self.bounds.max.z,
        ] {
            w.write_all(&b.to_le_bytes())?;
        }
        for s in &self.samples {
            for c in s {
                w.write_all(&c.to_le_bytes())?;
            }
        }
        Ok(())
    }
}
