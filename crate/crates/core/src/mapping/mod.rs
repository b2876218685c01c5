//! Rasterization of point predictions, natural-breaks classification and
//! ESRI ASCII grid I/O.

mod jenks;
mod kriging;
mod variogram;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use jenks::{class_area_report, classify, jenks_breaks, ClassAreas, ClassBreaks, Classified, CLASS_NAMES};
pub use kriging::{krige_at, ordinary_krige, KrigeOptions, KrigeOutput, KrigeSolution};
pub use variogram::{empirical_variogram, fit_variogram, EmpiricalBin, VariogramFamily, VariogramModel};

pub const NODATA: f64 = -9999.0;

/// Georeferencing of a regular grid. Row 0 is the northernmost row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_ll: f64,
    pub y_ll: f64,
    pub cell_size: f64,
    pub ncols: usize,
    pub nrows: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0) || !self.cell_size.is_finite() {
            return Err(Error::Raster(format!("cell size must be positive, got {}", self.cell_size)));
        }
        if self.ncols == 0 || self.nrows == 0 {
            return Err(Error::Raster("grid has no cells".into()));
        }
        if !self.x_ll.is_finite() || !self.y_ll.is_finite() {
            return Err(Error::Raster("non-finite grid origin".into()));
        }
        Ok(())
    }

    /// Smallest grid of `cell_size` cells covering every point.
    pub fn covering(points: &[(f64, f64)], cell_size: f64) -> Result<GridSpec> {
        if points.is_empty() {
            return Err(Error::NoData);
        }
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(x, y) in points {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        let spec = GridSpec {
            x_ll: (x0 / cell_size).floor() * cell_size,
            y_ll: (y0 / cell_size).floor() * cell_size,
            cell_size,
            ncols: 0,
            nrows: 0,
        };
        let ncols = (((x1 - spec.x_ll) / cell_size).floor() as usize + 1).max(1);
        let nrows = (((y1 - spec.y_ll) / cell_size).floor() as usize + 1).max(1);
        let spec = GridSpec { ncols, nrows, ..spec };
        spec.validate()?;
        Ok(spec)
    }

    pub fn len(&self) -> usize {
        self.ncols * self.nrows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x_max(&self) -> f64 {
        self.x_ll + self.ncols as f64 * self.cell_size
    }

    pub fn y_max(&self) -> f64 {
        self.y_ll + self.nrows as f64 * self.cell_size
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.x_ll + (col as f64 + 0.5) * self.cell_size,
            self.y_ll + ((self.nrows - row) as f64 - 0.5) * self.cell_size,
        )
    }

    /// `(row, col)` of the cell containing `(x, y)`; points on the east or
    /// north outer edge belong to the last cell.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if x < self.x_ll || y < self.y_ll || x > self.x_max() || y > self.y_max() {
            return None;
        }
        let col = (((x - self.x_ll) / self.cell_size).floor() as usize).min(self.ncols - 1);
        let from_south = (((y - self.y_ll) / self.cell_size).floor() as usize).min(self.nrows - 1);
        Some((self.nrows - 1 - from_south, col))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterGrid {
    pub spec: GridSpec,
    pub nodata: f64,
    /// Row-major, row 0 north.
    pub values: Vec<f64>,
}

impl RasterGrid {
    pub fn filled(spec: GridSpec, value: f64) -> Result<Self> {
        spec.validate()?;
        Ok(RasterGrid {
            spec,
            nodata: NODATA,
            values: vec![value; spec.len()],
        })
    }

    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.len() {
            return Err(Error::Raster(format!("{} values for {} cells", values.len(), spec.len())));
        }
        let r = RasterGrid {
            spec,
            nodata: NODATA,
            values,
        };
        if let Some(v) = r.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Raster(format!("non-finite cell value {v}")));
        }
        Ok(r)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.spec.ncols + col]
    }

    pub fn is_nodata(&self, v: f64) -> bool {
        v == self.nodata
    }

    /// `(x, y, value)` of every cell that carries data.
    pub fn valid_cells(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for r in 0..self.spec.nrows {
            for c in 0..self.spec.ncols {
                let v = self.get(r, c);
                if !self.is_nodata(v) {
                    let (x, y) = self.spec.cell_center(r, c);
                    out.push((x, y, v));
                }
            }
        }
        out
    }

    pub fn n_nodata(&self) -> usize {
        self.values.iter().filter(|&&v| self.is_nodata(v)).count()
    }

    /// Writes an ESRI ASCII grid with values rounded to 6 significant digits.
    pub fn write_ascii<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let s = &self.spec;
        writeln!(w, "ncols {}", s.ncols)?;
        writeln!(w, "nrows {}", s.nrows)?;
        writeln!(w, "xllcorner {}", s.x_ll)?;
        writeln!(w, "yllcorner {}", s.y_ll)?;
        writeln!(w, "cellsize {}", s.cell_size)?;
        writeln!(w, "NODATA_value {}", format_cell(self.nodata))?;
        let mut line = String::new();
        for r in 0..s.nrows {
            line.clear();
            for c in 0..s.ncols {
                if c > 0 {
                    line.push(' ');
                }
                line.push_str(&format_cell(self.get(r, c)));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_ascii<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut header = |key: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Raster(format!("missing header '{key}'")))?
                .map_err(|e| Error::Raster(e.to_string()))?;
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next()) {
                (Some(k), Some(v)) if k.eq_ignore_ascii_case(key) => Ok(v.to_string()),
                _ => Err(Error::Raster(format!("expected header '{key}', got '{line}'"))),
            }
        };
        let num = |s: String| -> Result<f64> { s.parse::<f64>().map_err(|e| Error::Raster(format!("'{s}': {e}"))) };
        let ncols = header("ncols")?.parse::<usize>().map_err(|e| Error::Raster(e.to_string()))?;
        let nrows = header("nrows")?.parse::<usize>().map_err(|e| Error::Raster(e.to_string()))?;
        let x_ll = num(header("xllcorner")?)?;
        let y_ll = num(header("yllcorner")?)?;
        let cell_size = num(header("cellsize")?)?;
        let nodata = num(header("NODATA_value")?)?;
        let spec = GridSpec {
            x_ll,
            y_ll,
            cell_size,
            ncols,
            nrows,
        };
        spec.validate()?;
        let mut values = Vec::with_capacity(spec.len());
        for line in lines {
            let line = line.map_err(|e| Error::Raster(e.to_string()))?;
            for tok in line.split_whitespace() {
                values.push(num(tok.to_string())?);
            }
        }
        let mut grid = RasterGrid::from_values(spec, values)?;
        grid.nodata = nodata;
        Ok(grid)
    }
}

/// Rounds to 6 significant digits; integers print without a fraction.
pub fn round_sig6(v: f64) -> f64 {
    format!("{v:.5e}").parse().expect("formatted float parses")
}

fn format_cell(v: f64) -> String {
    format!("{}", round_sig6(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GridSpec {
        GridSpec {
            x_ll: 1000.0,
            y_ll: 2000.0,
            cell_size: 100.0,
            ncols: 3,
            nrows: 2,
        }
    }

    #[test]
    fn centers_and_lookup() {
        let s = spec();
        assert_eq!(s.cell_center(0, 0), (1050.0, 2150.0));
        assert_eq!(s.cell_center(1, 2), (1250.0, 2050.0));
        assert_eq!(s.cell_of(1050.0, 2150.0), Some((0, 0)));
        assert_eq!(s.cell_of(1300.0, 2200.0), Some((0, 2)));
        assert_eq!(s.cell_of(999.0, 2100.0), None);
    }

    #[test]
    fn ascii_round_trip() {
        let vals = vec![0.123456789, NODATA, 1.0, 3.3333333e-7, 0.5, 12345.678];
        let g = RasterGrid::from_values(spec(), vals.clone()).unwrap();
        let mut buf = Vec::new();
        g.write_ascii(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("ncols 3\nnrows 2\nxllcorner 1000\nyllcorner 2000\ncellsize 100\nNODATA_value -9999\n"));
        let back = RasterGrid::read_ascii(buf.as_slice()).unwrap();
        for (a, b) in back.values.iter().zip(&vals) {
            assert_eq!(*a, round_sig6(*b));
        }
        let mut again = Vec::new();
        back.write_ascii(&mut again).unwrap();
        assert_eq!(buf, again);
        assert_eq!(back.n_nodata(), 1);
    }

    #[test]
    fn covering_grid_contains_points() {
        let pts = [(10.0, 20.0), (950.0, 420.0), (500.0, 500.0)];
        let s = GridSpec::covering(&pts, 100.0).unwrap();
        for &(x, y) in &pts {
            assert!(s.cell_of(x, y).is_some());
        }
        assert_eq!((s.ncols, s.nrows), (10, 6));
    }
}
