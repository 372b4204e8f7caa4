//! Grid sweeps and field serialization: deterministic parallel per-cell
//! evaluation, CSV round-tripping, and raster (PPM) heatmap rendering.
//!
//! Cells that could not be computed carry a NaN sentinel; the sentinel is
//! written to CSV as the literal token `NaN` and rendered mid-gray in
//! heatmaps. All writers produce byte-identical output for identical
//! inputs, independent of the worker count used to fill the field.

use crate::error::{Error, Result};
use num_complex::Complex64;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::io::{BufWriter, Write};
use std::path::Path;

/// A rectangular node grid: `nx` by `ny` points spanning the closed box
/// `[x_min, x_max] x [y_min, y_max]` with spacings
/// `hx = (x_max - x_min)/(nx - 1)` and likewise `hy`.
///
/// Cells are stored row-major with the y-index outermost:
/// `index = j * nx + i` for node `(x_i, y_j)`, `y_0 = y_min`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(x_min < x_max) || !(y_min < y_max) {
            return Err(Error::Config(format!(
                "degenerate grid bounds [{x_min}, {x_max}] x [{y_min}, {y_max}]"
            )));
        }
        if nx < 2 || ny < 2 {
            return Err(Error::Config(format!(
                "grid needs at least 2 nodes per axis, got {nx} x {ny}"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
            nx,
            ny,
        })
    }

    /// Default extent used for the eigenfunction figures.
    pub fn default_plane() -> Self {
        Self::new(-4.0, 4.0, -2.0, 2.0, 201, 101).unwrap()
    }

    pub fn hx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        (self.y_max - self.y_min) / (self.ny - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn x_at(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.hx()
    }

    pub fn y_at(&self, j: usize) -> f64 {
        self.y_min + j as f64 * self.hy()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }
}

/// Descriptive metadata carried by a field and echoed into every output.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FieldMeta {
    pub epsilon: Option<f64>,
    pub eigenvalue: Option<Complex64>,
    pub method: String,
    pub observable: String,
    /// Additional `key = value` pairs (effective run configuration).
    pub extra: Vec<(String, String)>,
}

/// Complex-valued grid field (NaN-sentinel cells excluded from statistics).
#[derive(Debug, Clone)]
pub struct ComplexField {
    pub grid: GridSpec,
    pub values: Vec<Complex64>,
    pub meta: FieldMeta,
}

/// Real-valued grid field (NaN-sentinel cells excluded from statistics).
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
    pub meta: FieldMeta,
}

pub const SENTINEL: f64 = f64::NAN;

pub fn complex_sentinel() -> Complex64 {
    Complex64::new(f64::NAN, f64::NAN)
}

#[inline]
pub fn is_sentinel(v: f64) -> bool {
    v.is_nan()
}

#[inline]
pub fn is_sentinel_complex(v: Complex64) -> bool {
    v.re.is_nan() || v.im.is_nan()
}

impl ScalarField {
    /// Iterator over computed (non-sentinel) cells.
    pub fn computed(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| !is_sentinel(**v))
            .map(|(i, v)| (i, *v))
    }
}

impl ComplexField {
    pub fn computed(&self) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| !is_sentinel_complex(**v))
            .map(|(i, v)| (i, *v))
    }
}

/// A field of either value kind, as produced by grid evaluations.
#[derive(Debug, Clone)]
pub enum Field {
    Complex(ComplexField),
    Scalar(ScalarField),
}

impl Field {
    pub fn grid(&self) -> &GridSpec {
        match self {
            Field::Complex(f) => &f.grid,
            Field::Scalar(f) => &f.grid,
        }
    }

    pub fn meta(&self) -> &FieldMeta {
        match self {
            Field::Complex(f) => &f.meta,
            Field::Scalar(f) => &f.meta,
        }
    }

    pub fn meta_mut(&mut self) -> &mut FieldMeta {
        match self {
            Field::Complex(f) => &mut f.meta,
            Field::Scalar(f) => &mut f.meta,
        }
    }
}

/// Pointwise view transform applied when rendering or differencing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    /// Argument of a complex value, in `(-pi, pi]`.
    Angle,
    /// Natural log of the absolute value.
    LogAbs,
    /// Real part (identity on real fields).
    Re,
}

impl Transform {
    pub fn name(self) -> &'static str {
        match self {
            Transform::Angle => "angle",
            Transform::LogAbs => "log_abs",
            Transform::Re => "re",
        }
    }

    /// Apply to one cell of a field; sentinel maps to sentinel.
    pub fn apply(self, field: &Field, idx: usize) -> Result<f64> {
        match (self, field) {
            (Transform::Angle, Field::Complex(f)) => {
                let v = f.values[idx];
                Ok(if is_sentinel_complex(v) { SENTINEL } else { v.arg() })
            }
            (Transform::Angle, Field::Scalar(_)) => Err(Error::Transform(
                "angle requires a complex field".into(),
            )),
            (Transform::LogAbs, Field::Complex(f)) => {
                let v = f.values[idx];
                Ok(if is_sentinel_complex(v) {
                    SENTINEL
                } else {
                    v.norm().ln()
                })
            }
            (Transform::LogAbs, Field::Scalar(f)) => {
                let v = f.values[idx];
                Ok(if is_sentinel(v) { SENTINEL } else { v.abs().ln() })
            }
            (Transform::Re, Field::Complex(f)) => {
                let v = f.values[idx];
                Ok(if is_sentinel_complex(v) { SENTINEL } else { v.re })
            }
            (Transform::Re, Field::Scalar(f)) => Ok(f.values[idx]),
        }
    }
}

/// Evaluate `cell_fn` on every grid node with the given worker count.
/// Failures (`None`) become sentinels and are tallied. The result is
/// identical for any degree of parallelism: cells are written by index.
pub fn sweep<T: Send>(
    grid: &GridSpec,
    workers: usize,
    cell_fn: impl Fn(f64, f64) -> Option<T> + Sync,
) -> (Vec<Option<T>>, usize) {
    let n = grid.len();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    let values: Vec<Option<T>> = pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|idx| {
                let i = idx % grid.nx;
                let j = idx / grid.nx;
                cell_fn(grid.x_at(i), grid.y_at(j))
            })
            .collect()
    });
    let failures = values.iter().filter(|v| v.is_none()).count();
    (values, failures)
}

fn write_meta_lines(out: &mut impl Write, grid: &GridSpec, meta: &FieldMeta) -> Result<()> {
    if let Some(eps) = meta.epsilon {
        writeln!(out, "# epsilon = {eps}")?;
    }
    if let Some(ev) = meta.eigenvalue {
        writeln!(out, "# eigenvalue_re = {}", ev.re)?;
        writeln!(out, "# eigenvalue_im = {}", ev.im)?;
    }
    if !meta.method.is_empty() {
        writeln!(out, "# method = {}", meta.method)?;
    }
    if !meta.observable.is_empty() {
        writeln!(out, "# observable = {}", meta.observable)?;
    }
    writeln!(
        out,
        "# grid = {} {} {} {} {} {}",
        grid.x_min, grid.x_max, grid.y_min, grid.y_max, grid.nx, grid.ny
    )?;
    for (k, v) in &meta.extra {
        writeln!(out, "# {k} = {v}")?;
    }
    Ok(())
}

/// Write a field as CSV: metadata comment lines, one header row, then one
/// row per cell in storage order. Columns are exactly `x,y,re,im` for
/// complex fields and `x,y,value` for real ones. Values are printed with
/// shortest round-trip formatting; sentinels as the token `NaN`.
pub fn write_csv(field: &Field, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    let grid = field.grid();
    write_meta_lines(&mut out, grid, field.meta())?;
    match field {
        Field::Complex(f) => {
            writeln!(out, "x,y,re,im")?;
            let mut line = String::new();
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    let v = f.values[grid.index(i, j)];
                    line.clear();
                    if is_sentinel_complex(v) {
                        write!(line, "{},{},NaN,NaN", grid.x_at(i), grid.y_at(j)).unwrap();
                    } else {
                        write!(line, "{},{},{},{}", grid.x_at(i), grid.y_at(j), v.re, v.im)
                            .unwrap();
                    }
                    writeln!(out, "{line}")?;
                }
            }
        }
        Field::Scalar(f) => {
            writeln!(out, "x,y,value")?;
            let mut line = String::new();
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    let v = f.values[grid.index(i, j)];
                    line.clear();
                    write!(line, "{},{},{}", grid.x_at(i), grid.y_at(j), v).unwrap();
                    writeln!(out, "{line}")?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn parse_f64(tok: &str, line_no: usize) -> Result<f64> {
    tok.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("bad number {tok:?} on line {line_no}")))
}

/// Read a field previously written by [`write_csv`]. The header row
/// selects the value kind; metadata lines are restored into the meta.
pub fn read_csv(path: impl AsRef<Path>) -> Result<Field> {
    let text = std::fs::read_to_string(path)?;
    let mut meta = FieldMeta::default();
    let mut grid: Option<GridSpec> = None;
    let mut header: Option<&str> = None;
    let mut rows: Vec<&str> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let (k, v) = rest
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad metadata line {}", ln + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "epsilon" => meta.epsilon = Some(parse_f64(v, ln + 1)?),
                "eigenvalue_re" => {
                    let re = parse_f64(v, ln + 1)?;
                    let im = meta.eigenvalue.map_or(0.0, |c| c.im);
                    meta.eigenvalue = Some(Complex64::new(re, im));
                }
                "eigenvalue_im" => {
                    let im = parse_f64(v, ln + 1)?;
                    let re = meta.eigenvalue.map_or(0.0, |c| c.re);
                    meta.eigenvalue = Some(Complex64::new(re, im));
                }
                "method" => meta.method = v.to_string(),
                "observable" => meta.observable = v.to_string(),
                "grid" => {
                    let parts: Vec<&str> = v.split_whitespace().collect();
                    if parts.len() != 6 {
                        return Err(Error::Parse(format!("bad grid line {}", ln + 1)));
                    }
                    grid = Some(GridSpec::new(
                        parse_f64(parts[0], ln + 1)?,
                        parse_f64(parts[1], ln + 1)?,
                        parse_f64(parts[2], ln + 1)?,
                        parse_f64(parts[3], ln + 1)?,
                        parts[4]
                            .parse()
                            .map_err(|_| Error::Parse(format!("bad nx on line {}", ln + 1)))?,
                        parts[5]
                            .parse()
                            .map_err(|_| Error::Parse(format!("bad ny on line {}", ln + 1)))?,
                    )?);
                }
                _ => meta.extra.push((k.to_string(), v.to_string())),
            }
        } else if header.is_none() {
            header = Some(line);
        } else {
            rows.push(line);
        }
    }
    let grid = grid.ok_or_else(|| Error::Parse("missing grid metadata".into()))?;
    let header = header.ok_or_else(|| Error::Parse("missing header row".into()))?;
    if rows.len() != grid.len() {
        return Err(Error::Parse(format!(
            "expected {} data rows, found {}",
            grid.len(),
            rows.len()
        )));
    }
    match header {
        "x,y,re,im" => {
            let mut values = vec![complex_sentinel(); grid.len()];
            for (r, row) in rows.iter().enumerate() {
                let cols: Vec<&str> = row.split(',').collect();
                if cols.len() != 4 {
                    return Err(Error::Parse(format!("bad complex row {r}")));
                }
                values[r] = Complex64::new(parse_f64(cols[2], r)?, parse_f64(cols[3], r)?);
            }
            Ok(Field::Complex(ComplexField { grid, values, meta }))
        }
        "x,y,value" => {
            let mut values = vec![SENTINEL; grid.len()];
            for (r, row) in rows.iter().enumerate() {
                let cols: Vec<&str> = row.split(',').collect();
                if cols.len() != 3 {
                    return Err(Error::Parse(format!("bad scalar row {r}")));
                }
                values[r] = parse_f64(cols[2], r)?;
            }
            Ok(Field::Scalar(ScalarField { grid, values, meta }))
        }
        other => Err(Error::Parse(format!("unknown header {other:?}"))),
    }
}

/// Colormap selector: cyclic for angles, sequential for magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Colormap {
    Cyclic,
    Sequential,
}

/// Color of the reserved not-computed cells.
const SENTINEL_RGB: [u8; 3] = [128, 128, 128];

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = (h.fract() + 1.0).fract() * 6.0;
    let i = h.floor() as i32 % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    let (r, g, b) = match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [
        (r * 255.0).round() as u8,
        (g * 255.0).round() as u8,
        (b * 255.0).round() as u8,
    ]
}

// Anchor colors of the sequential ramp (dark violet to bright yellow).
const SEQ_ANCHORS: [[f64; 3]; 8] = [
    [0.0, 0.0, 4.0],
    [40.0, 11.0, 84.0],
    [101.0, 21.0, 110.0],
    [159.0, 42.0, 99.0],
    [212.0, 72.0, 66.0],
    [245.0, 125.0, 21.0],
    [250.0, 193.0, 39.0],
    [252.0, 255.0, 164.0],
];

fn sequential_rgb(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0) * (SEQ_ANCHORS.len() - 1) as f64;
    let i = (t.floor() as usize).min(SEQ_ANCHORS.len() - 2);
    let f = t - i as f64;
    let mut rgb = [0u8; 3];
    for c in 0..3 {
        rgb[c] = (SEQ_ANCHORS[i][c] + f * (SEQ_ANCHORS[i + 1][c] - SEQ_ANCHORS[i][c])).round()
            as u8;
    }
    rgb
}

impl Colormap {
    /// Color at normalized position `t` in `[0, 1]`.
    pub fn rgb(self, t: f64) -> [u8; 3] {
        match self {
            // Hue wheel: t = 0 and t = 1 meet, angle 0 sits mid-table.
            Colormap::Cyclic => hsv_to_rgb(t, 0.85, 0.95),
            Colormap::Sequential => sequential_rgb(t),
        }
    }
}

/// Render a field as an 8-bit RGB binary PPM, one pixel per cell, top row
/// at `y_max`. Angles map cyclically over `(-pi, pi]`; other transforms
/// map linearly over `clip` (or the computed min/max when absent).
/// Sentinels render as the reserved mid-gray. Output bytes are a pure
/// function of the inputs.
pub fn write_heatmap(
    field: &Field,
    path: impl AsRef<Path>,
    transform: Transform,
    colormap: Colormap,
    clip: Option<(f64, f64)>,
) -> Result<()> {
    let grid = field.grid();
    let n = grid.len();
    let mut transformed = Vec::with_capacity(n);
    for idx in 0..n {
        transformed.push(transform.apply(field, idx)?);
    }

    let (lo, hi) = match (transform, clip) {
        (Transform::Angle, _) => (-std::f64::consts::PI, std::f64::consts::PI),
        (_, Some((lo, hi))) => {
            if !(lo < hi) {
                return Err(Error::Config(format!("bad clip range [{lo}, {hi}]")));
            }
            (lo, hi)
        }
        (_, None) => {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &v in &transformed {
                if v.is_finite() {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            if !(lo < hi) {
                // Constant or empty field: any span renders it flat.
                (0.0, 1.0)
            } else {
                (lo, hi)
            }
        }
    };

    let file = std::fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    write!(out, "P6\n")?;
    {
        // PPM comments carry the same metadata block as CSV outputs.
        let mut head = Vec::new();
        write_meta_lines(&mut head, grid, field.meta())?;
        writeln!(out, "# transform = {}", transform.name())?;
        writeln!(out, "# clip = {lo} {hi}")?;
        out.write_all(&head)?;
    }
    writeln!(out, "{} {}", grid.nx, grid.ny)?;
    writeln!(out, "255")?;
    let mut pixels = Vec::with_capacity(n * 3);
    for jj in 0..grid.ny {
        let j = grid.ny - 1 - jj; // image rows run top (y_max) to bottom
        for i in 0..grid.nx {
            let v = transformed[grid.index(i, j)];
            let rgb = if v.is_nan() {
                SENTINEL_RGB
            } else {
                let t = ((v.clamp(lo, hi)) - lo) / (hi - lo);
                colormap.rgb(t)
            };
            pixels.extend_from_slice(&rgb);
        }
    }
    out.write_all(&pixels)?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_grid() -> GridSpec {
        GridSpec::new(0.0, 1.0, 0.0, 1.0, 2, 2).unwrap()
    }

    #[test]
    fn grid_spacing_and_indexing() {
        let g = GridSpec::new(-4.0, 4.0, -2.0, 2.0, 201, 101).unwrap();
        assert!((g.hx() - 0.04).abs() < 1e-15);
        assert!((g.hy() - 0.04).abs() < 1e-15);
        assert_eq!(g.index(200, 100), g.len() - 1);
        assert_eq!(g.x_at(0), -4.0);
        assert_eq!(g.y_at(100), 2.0);
        assert!(GridSpec::new(0.0, 0.0, 0.0, 1.0, 4, 4).is_err());
        assert!(GridSpec::new(0.0, 1.0, 0.0, 1.0, 1, 4).is_err());
    }

    #[test]
    fn sweep_constant_and_linear() {
        let g = GridSpec::new(0.0, 1.0, 0.0, 1.0, 10, 10).unwrap();
        let (ones, failures) = sweep(&g, 1, |_x, _y| Some(1.0));
        assert_eq!(failures, 0);
        assert!(ones.iter().all(|v| *v == Some(1.0)));

        let g3 = GridSpec::new(0.0, 1.0, 0.0, 1.0, 3, 3).unwrap();
        let (vals, _) = sweep(&g3, 2, |x, y| Some(x + y));
        assert_eq!(vals[g3.index(2, 1)], Some(1.5));
        assert_eq!(vals[g3.index(0, 0)], Some(0.0));
    }

    #[test]
    fn sweep_worker_count_invariance() {
        let g = GridSpec::new(-1.0, 1.0, -1.0, 1.0, 17, 13).unwrap();
        let f = |x: f64, y: f64| {
            if x * y < -0.5 {
                None
            } else {
                Some((x.sin() * y.cos()).to_bits())
            }
        };
        let (a, fa) = sweep(&g, 1, f);
        let (b, fb) = sweep(&g, 4, f);
        assert_eq!(a, b);
        assert_eq!(fa, fb);
        assert!(fa > 0);
    }

    #[test]
    fn csv_round_trip_complex() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("field.csv");
        let grid = GridSpec::new(0.0, 1.0, 0.0, 1.0, 3, 2).unwrap();
        let mut values: Vec<Complex64> = (0..6)
            .map(|k| Complex64::new(k as f64 / 7.0, -(k as f64) * 0.3333333333333333))
            .collect();
        values[4] = complex_sentinel();
        let field = Field::Complex(ComplexField {
            grid,
            values: values.clone(),
            meta: FieldMeta {
                epsilon: Some(0.1),
                eigenvalue: Some(Complex64::new(0.0, 2.19)),
                method: "test".into(),
                observable: "phase".into(),
                extra: vec![("workers".into(), "4".into())],
            },
        });
        write_csv(&field, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("NaN,NaN"));
        assert!(text.lines().any(|l| l == "x,y,re,im"));

        match read_csv(&path).unwrap() {
            Field::Complex(f) => {
                assert_eq!(f.grid, grid);
                for (a, b) in f.values.iter().zip(values.iter()) {
                    if is_sentinel_complex(*b) {
                        assert!(is_sentinel_complex(*a));
                    } else {
                        assert_eq!(a.re.to_bits(), b.re.to_bits());
                        assert_eq!(a.im.to_bits(), b.im.to_bits());
                    }
                }
                assert_eq!(f.meta.epsilon, Some(0.1));
                assert_eq!(f.meta.extra, vec![("workers".into(), "4".into())]);
            }
            _ => panic!("expected complex field"),
        }
    }

    #[test]
    fn csv_round_trip_scalar_with_infinities() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let grid = small_grid();
        let values = vec![0.1, f64::NEG_INFINITY, SENTINEL, 2.0f64.sqrt()];
        let field = Field::Scalar(ScalarField {
            grid,
            values: values.clone(),
            meta: FieldMeta::default(),
        });
        write_csv(&field, &path).unwrap();
        match read_csv(&path).unwrap() {
            Field::Scalar(f) => {
                assert_eq!(f.values[0].to_bits(), values[0].to_bits());
                assert_eq!(f.values[1], f64::NEG_INFINITY);
                assert!(is_sentinel(f.values[2]));
                assert_eq!(f.values[3].to_bits(), values[3].to_bits());
            }
            _ => panic!("expected scalar field"),
        }
    }

    #[test]
    fn csv_row_count() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        let grid = small_grid();
        let field = Field::Scalar(ScalarField {
            grid,
            values: vec![0.0, 1.0, 2.0, 3.0],
            meta: FieldMeta::default(),
        });
        write_csv(&field, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let data_rows = text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.starts_with('x'))
            .count();
        assert_eq!(data_rows, 4);
    }

    #[test]
    fn heatmap_deterministic_bytes() {
        let dir = tempdir().unwrap();
        let grid = GridSpec::new(-1.0, 1.0, -1.0, 1.0, 21, 21).unwrap();
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = (grid.x_at(i), grid.y_at(j));
                values.push(Complex64::new(0.0, y.atan2(x)).exp());
            }
        }
        let field = Field::Complex(ComplexField {
            grid,
            values,
            meta: FieldMeta::default(),
        });
        let p1 = dir.path().join("a.ppm");
        let p2 = dir.path().join("b.ppm");
        write_heatmap(&field, &p1, Transform::Angle, Colormap::Cyclic, None).unwrap();
        write_heatmap(&field, &p2, Transform::Angle, Colormap::Cyclic, None).unwrap();
        let (b1, b2) = (std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(b1, b2);
        assert!(b1.starts_with(b"P6\n"));
        // One pixel per cell.
        let header_end = b1.windows(4).position(|w| w == b"255\n").unwrap() + 4;
        assert_eq!(b1.len() - header_end, grid.len() * 3);
    }

    #[test]
    fn heatmap_angle_midpoint_and_sentinel() {
        // Angle 0 maps to the middle of the cyclic table; sentinel cells
        // render mid-gray.
        let dir = tempdir().unwrap();
        let grid = small_grid();
        let values = vec![
            Complex64::new(1.0, 0.0), // angle 0
            complex_sentinel(),
            Complex64::new(1.0, 0.0),
            Complex64::new(1.0, 0.0),
        ];
        let field = Field::Complex(ComplexField {
            grid,
            values,
            meta: FieldMeta::default(),
        });
        let p = dir.path().join("mid.ppm");
        write_heatmap(&field, &p, Transform::Angle, Colormap::Cyclic, None).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let header_end = bytes.windows(4).position(|w| w == b"255\n").unwrap() + 4;
        let px = &bytes[header_end..];
        // Image rows run top-down: pixels 0-1 are the j = 1 cells, pixels
        // 2-3 the j = 0 cells; the sentinel sits at cell (1, 0).
        let expect_mid = Colormap::Cyclic.rgb(0.5);
        assert_eq!(&px[0..3], &expect_mid);
        assert_eq!(&px[3..6], &expect_mid);
        assert_eq!(&px[6..9], &expect_mid);
        assert_eq!(&px[9..12], &SENTINEL_RGB);
    }

    #[test]
    fn heatmap_rejects_angle_of_scalar() {
        let dir = tempdir().unwrap();
        let field = Field::Scalar(ScalarField {
            grid: small_grid(),
            values: vec![0.0; 4],
            meta: FieldMeta::default(),
        });
        let res = write_heatmap(
            &field,
            dir.path().join("x.ppm"),
            Transform::Angle,
            Colormap::Cyclic,
            None,
        );
        assert!(matches!(res, Err(Error::Transform(_))));
    }
}
