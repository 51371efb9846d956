//! Static SVG figures for projected data.
//!
//! All renderers are pure: the same inputs always produce the same bytes.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::MixtureClassifier;
use crate::data::format_value;
use crate::dimred::{project, DimRedBasis};
use crate::error::{Error, Result};
use crate::gmm::EmConfig;
use crate::linalg::sym_eigen;

pub const WIDTH: f64 = 640.0;
pub const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 48.0;
pub const DEFAULT_LEVELS: [f64; 4] = [0.25, 0.5, 0.75, 0.95];
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Projected coordinates with their labels.
#[derive(Debug, Clone)]
pub struct ProjectionFrame {
    /// `n × d`, columns in eigenvalue order.
    pub z: DMatrix<f64>,
    pub labels: Vec<String>,
    pub axis_names: Vec<String>,
    pub centered: bool,
}

impl ProjectionFrame {
    pub fn from_basis(basis: &DimRedBasis, data: &DMatrix<f64>, labels: &[String], centered: bool) -> Result<Self> {
        if data.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: data.nrows(),
                found: labels.len(),
            });
        }
        Ok(ProjectionFrame {
            z: project(basis, data, centered)?,
            labels: labels.to_vec(),
            axis_names: axis_names(basis),
            centered,
        })
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn d(&self) -> usize {
        self.z.ncols()
    }

    /// The first two coordinates.
    pub fn plane(&self) -> Result<DMatrix<f64>> {
        if self.d() < 2 {
            return Err(Error::InvalidInput("a two-dimensional projection is required".into()));
        }
        Ok(self.z.columns(0, 2).into_owned())
    }

    /// Header `Dir1,…,Dird,class`; values at 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for j in 0..self.d() {
            let _ = write!(out, "Dir{},", j + 1);
        }
        out.push_str("class\n");
        for i in 0..self.n() {
            for j in 0..self.d() {
                out.push_str(&format_value(self.z[(i, j)]));
                out.push(',');
            }
            out.push_str(&csv_field(&self.labels[i]));
            out.push('\n');
        }
        out
    }

    fn classes(&self) -> Vec<String> {
        crate::classifier::encode_labels(&self.labels).0
    }
}

/// `Dir1 (l_1)`, `Dir2 (l_2)`, …
pub fn axis_names(basis: &DimRedBasis) -> Vec<String> {
    basis
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(j, l)| format!("Dir{} ({l:.4})", j + 1))
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Refits the classifier's structure on the first two projected coordinates.
/// Used for drawing only.
pub fn refit_on_projection(c: &MixtureClassifier, frame: &ProjectionFrame, em: &EmConfig) -> Result<MixtureClassifier> {
    let plane = frame.plane()?;
    let idx = c.class_indices(&frame.labels)?;
    for (k, m) in c.class_models.iter().enumerate() {
        let count = idx.iter().filter(|&&i| i == k).count();
        if count < 2 * m.n_components() {
            return Err(Error::InvalidInput(format!(
                "class '{}' has {count} points, {} needed to refit {} components",
                c.classes[k],
                2 * m.n_components(),
                m.n_components()
            )));
        }
    }
    c.refit_structure(&plane, &idx, em)
}

/// Data-to-canvas mapping over a fixed box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlotBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl PlotBox {
    /// Bounding box of the points, each side pushed out by 5% of its range.
    pub fn around(points: &DMatrix<f64>) -> Result<PlotBox> {
        if points.nrows() == 0 {
            return Err(Error::InvalidInput("empty frame".into()));
        }
        let range = |j: usize| {
            let col = points.column(j);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
            (lo - pad, hi + pad)
        };
        let (x_min, x_max) = range(0);
        let (y_min, y_max) = if points.ncols() > 1 { range(1) } else { (-1.0, 1.0) };
        Ok(PlotBox {
            x_min,
            x_max,
            y_min,
            y_max,
        })
    }

    fn sx(&self, x: f64) -> f64 {
        MARGIN + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - 2.0 * MARGIN)
    }

    fn sy(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn svg_open(out: &mut String, title: &str) {
    let _ = write!(
        out,
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <title>{}</title>\n\
         <rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n",
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn axes(out: &mut String, pb: &PlotBox, x_name: &str, y_name: &str) {
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        out,
        "<rect x=\"{l}\" y=\"{t}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        r - l,
        b - t
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{}</text>",
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(x_name)
    );
    let _ = writeln!(
        out,
        "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 {})\">{}</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_name)
    );
    for (v, anchor) in [(pb.x_min, "start"), (pb.x_max, "end")] {
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"{anchor}\" font-size=\"10\">{v:.2}</text>",
            pb.sx(v),
            b + 14.0
        );
    }
    for v in [pb.y_min, pb.y_max] {
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\" font-size=\"10\">{v:.2}</text>",
            l - 4.0,
            pb.sy(v) + 3.0
        );
    }
}

fn points(out: &mut String, frame: &ProjectionFrame, pb: &PlotBox) {
    let classes = frame.classes();
    for i in 0..frame.n() {
        let k = classes.iter().position(|c| *c == frame.labels[i]).unwrap_or(0);
        let x = pb.sx(frame.z[(i, 0)]);
        let y = if frame.d() > 1 {
            pb.sy(frame.z[(i, 1)])
        } else {
            // one-dimensional frames are drawn as one strip per class
            pb.sy(-1.0 + 2.0 * (k as f64 + 0.5) / classes.len() as f64)
        };
        let _ = writeln!(
            out,
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2.5\" fill=\"{}\" fill-opacity=\"0.8\"/>",
            PALETTE[k % PALETTE.len()]
        );
    }
}

fn legend(out: &mut String, classes: &[String]) {
    for (k, c) in classes.iter().enumerate() {
        let y = MARGIN + 6.0 + 14.0 * k as f64;
        let _ = writeln!(
            out,
            "<circle cx=\"{}\" cy=\"{y:.2}\" r=\"4\" fill=\"{}\"/><text x=\"{}\" y=\"{:.2}\" font-size=\"11\">{}</text>",
            WIDTH - MARGIN - 60.0,
            PALETTE[k % PALETTE.len()],
            WIDTH - MARGIN - 52.0,
            y + 4.0,
            escape(c)
        );
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScatterOptions {
    pub title: Option<String>,
}

pub fn render_scatter(frame: &ProjectionFrame, opts: &ScatterOptions) -> Result<String> {
    if frame.n() == 0 || frame.d() == 0 {
        return Err(Error::InvalidInput("empty frame".into()));
    }
    let pb = PlotBox::around(&frame.z)?;
    let mut out = String::new();
    svg_open(&mut out, opts.title.as_deref().unwrap_or("Projection"));
    let y_name = frame.axis_names.get(1).map(String::as_str).unwrap_or("class");
    axes(&mut out, &pb, &frame.axis_names[0], y_name);
    points(&mut out, frame, &pb);
    legend(&mut out, &frame.classes());
    out.push_str("</svg>\n");
    Ok(out)
}

/// Mahalanobis radius enclosing probability `q` of a bivariate Gaussian.
pub fn hdr_radius(q: f64) -> f64 {
    (-2.0 * (1.0 - q).ln()).sqrt()
}

/// Polygon approximating `{x : (x − μ)ᵀ Σ⁻¹ (x − μ) = r²}` in data coordinates.
pub fn ellipse(mean: &[f64], cov: &crate::linalg::SymMatrix, r: f64, segments: usize) -> Result<Vec<(f64, f64)>> {
    let eig = sym_eigen(cov)?;
    let (a, b) = (eig.values[0].max(0.0).sqrt() * r, eig.values[1].max(0.0).sqrt() * r);
    let v = &eig.vectors;
    Ok((0..segments)
        .map(|s| {
            let t = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
            let (u, w) = (a * t.cos(), b * t.sin());
            (mean[0] + v[(0, 0)] * u + v[(0, 1)] * w, mean[1] + v[(1, 0)] * u + v[(1, 1)] * w)
        })
        .collect())
}

/// Points plus equal-density ellipses of every class component of a 2-D model.
pub fn render_contours(frame: &ProjectionFrame, c2d: &MixtureClassifier, levels: &[f64]) -> Result<String> {
    let plane = frame.plane()?;
    if frame.n() == 0 {
        return Err(Error::InvalidInput("empty frame".into()));
    }
    if c2d.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: c2d.dim(),
        });
    }
    if let Some(q) = levels.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
        return Err(Error::InvalidInput(format!("contour level {q} outside (0, 1)")));
    }
    let pb = PlotBox::around(&plane)?;
    let mut out = String::new();
    svg_open(&mut out, "Class density contours");
    axes(&mut out, &pb, &frame.axis_names[0], &frame.axis_names[1]);
    points(&mut out, frame, &pb);
    let _ = writeln!(out, "<g fill=\"none\" stroke-width=\"1\">");
    for (k, m) in c2d.class_models.iter().enumerate() {
        for comp in &m.components {
            for &q in levels {
                let poly = ellipse(&comp.mean, &comp.covariance, hdr_radius(q), 72)?;
                let pts: Vec<String> = poly
                    .iter()
                    .map(|(x, y)| format!("{:.2},{:.2}", pb.sx(*x), pb.sy(*y)))
                    .collect();
                let _ = writeln!(
                    out,
                    "<polygon points=\"{}\" stroke=\"{}\"/>",
                    pts.join(" "),
                    PALETTE[k % PALETTE.len()]
                );
            }
        }
    }
    out.push_str("</g>\n");
    legend(&mut out, &c2d.classes);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Classification and uncertainty on a regular lattice of cell centres.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryRaster {
    pub grid_size: usize,
    pub bounds: PlotBox,
    pub n_classes: usize,
    /// Row-major, `grid_size²` entries; row 0 is the lowest `y`.
    pub class_at_cell: Vec<usize>,
    pub uncertainty_at_cell: Vec<f64>,
}

impl BoundaryRaster {
    pub fn compute(frame: &ProjectionFrame, c2d: &MixtureClassifier, grid_size: usize) -> Result<BoundaryRaster> {
        if grid_size < 32 {
            return Err(Error::InvalidInput(format!("grid size must be at least 32, got {grid_size}")));
        }
        let plane = frame.plane()?;
        if c2d.dim() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: c2d.dim(),
            });
        }
        let bounds = PlotBox::around(&plane)?;
        let cells: Vec<_> = (0..grid_size * grid_size)
            .into_par_iter()
            .map(|cell| {
                let (x, y) = Self::centre_of(&bounds, grid_size, cell % grid_size, cell / grid_size);
                c2d.predict(&[x, y])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundaryRaster {
            grid_size,
            bounds,
            n_classes: c2d.n_classes(),
            class_at_cell: cells.iter().map(|p| p.label).collect(),
            uncertainty_at_cell: cells.iter().map(|p| p.uncertainty).collect(),
        })
    }

    fn centre_of(b: &PlotBox, g: usize, col: usize, row: usize) -> (f64, f64) {
        let dx = (b.x_max - b.x_min) / g as f64;
        let dy = (b.y_max - b.y_min) / g as f64;
        (b.x_min + (col as f64 + 0.5) * dx, b.y_min + (row as f64 + 0.5) * dy)
    }

    pub fn centre(&self, col: usize, row: usize) -> (f64, f64) {
        Self::centre_of(&self.bounds, self.grid_size, col, row)
    }

    pub fn cell_size(&self) -> (f64, f64) {
        let g = self.grid_size as f64;
        ((self.bounds.x_max - self.bounds.x_min) / g, (self.bounds.y_max - self.bounds.y_min) / g)
    }

    /// Largest possible uncertainty, `1 − 1/K`.
    pub fn max_uncertainty(&self) -> f64 {
        1.0 - 1.0 / self.n_classes as f64
    }

    /// Boundary segments in data coordinates, from marching squares run on
    /// each class-indicator field at level 1/2 and merged.
    pub fn boundary_segments(&self) -> Vec<((f64, f64), (f64, f64))> {
        let g = self.grid_size;
        let mut seen = BTreeSet::new();
        let mut segs = Vec::new();
        for k in 0..self.n_classes {
            let inside = |c: usize, r: usize| self.class_at_cell[r * g + c] == k;
            for r in 0..g - 1 {
                for c in 0..g - 1 {
                    // corners: bl, br, tr, tl
                    let corners = [(c, r), (c + 1, r), (c + 1, r + 1), (c, r + 1)];
                    let bits: Vec<bool> = corners.iter().map(|&(cc, rr)| inside(cc, rr)).collect();
                    // edge i joins corner i and corner i+1
                    let crossings: Vec<usize> = (0..4).filter(|&e| bits[e] != bits[(e + 1) % 4]).collect();
                    let mid = |e: usize| {
                        let (a, b) = (corners[e], corners[(e + 1) % 4]);
                        // half-integer lattice key, exact
                        (a.0 + b.0, a.1 + b.1)
                    };
                    let pairs: Vec<(usize, usize)> = match crossings.len() {
                        2 => vec![(crossings[0], crossings[1])],
                        // saddle: pair edges around each inside corner
                        4 if bits[0] => vec![(3, 0), (1, 2)],
                        4 => vec![(0, 1), (2, 3)],
                        _ => vec![],
                    };
                    for (e1, e2) in pairs {
                        let (a, b) = (mid(e1), mid(e2));
                        let key = if a <= b { (a, b) } else { (b, a) };
                        if seen.insert(key) {
                            segs.push(key);
                        }
                    }
                }
            }
        }
        segs.into_iter()
            .map(|(a, b)| (self.half_lattice_point(a), self.half_lattice_point(b)))
            .collect()
    }

    fn half_lattice_point(&self, p: (usize, usize)) -> (f64, f64) {
        let (dx, dy) = self.cell_size();
        (
            self.bounds.x_min + (p.0 as f64 / 2.0 + 0.5) * dx,
            self.bounds.y_min + (p.1 as f64 / 2.0 + 0.5) * dy,
        )
    }

    /// Grey level in `[0.6, 1]`: 1 is white at zero uncertainty, 0.6 at `1 − 1/K`.
    pub fn grey(&self, u: f64) -> f64 {
        let max = self.max_uncertainty();
        if max <= 0.0 {
            return 1.0;
        }
        1.0 - 0.4 * (u / max).clamp(0.0, 1.0)
    }

    /// `x,y,class,uncertainty` per cell.
    pub fn to_csv(&self, classes: &[String]) -> String {
        let mut out = String::from("x,y,class,uncertainty\n");
        for r in 0..self.grid_size {
            for c in 0..self.grid_size {
                let (x, y) = self.centre(c, r);
                let i = r * self.grid_size + c;
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    format_value(x),
                    format_value(y),
                    csv_field(&classes[self.class_at_cell[i]]),
                    format_value(self.uncertainty_at_cell[i])
                );
            }
        }
        out
    }
}

/// Uncertainty underlay in grey, class boundary, then the points.
pub fn render_boundary(frame: &ProjectionFrame, c2d: &MixtureClassifier, grid_size: usize) -> Result<String> {
    if frame.n() == 0 {
        return Err(Error::InvalidInput("empty frame".into()));
    }
    let raster = BoundaryRaster::compute(frame, c2d, grid_size)?;
    let pb = raster.bounds;
    let (dx, dy) = raster.cell_size();
    let mut out = String::new();
    svg_open(&mut out, "Decision boundary and uncertainty");
    let _ = writeln!(out, "<g shape-rendering=\"crispEdges\">");
    for r in 0..grid_size {
        for c in 0..grid_size {
            let (x, y) = raster.centre(c, r);
            let level = (255.0 * raster.grey(raster.uncertainty_at_cell[r * grid_size + c])).round() as u8;
            let (x0, x1) = (pb.sx(x - dx / 2.0), pb.sx(x + dx / 2.0));
            let (y0, y1) = (pb.sy(y + dy / 2.0), pb.sy(y - dy / 2.0));
            let _ = writeln!(
                out,
                "<rect x=\"{x0:.2}\" y=\"{y0:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"rgb({level},{level},{level})\"/>",
                x1 - x0,
                y1 - y0
            );
        }
    }
    out.push_str("</g>\n");
    axes(&mut out, &pb, &frame.axis_names[0], &frame.axis_names[1]);
    let segs = raster.boundary_segments();
    if !segs.is_empty() {
        let mut d = String::new();
        for ((x0, y0), (x1, y1)) in &segs {
            let _ = write!(
                d,
                "M{:.2} {:.2}L{:.2} {:.2}",
                pb.sx(*x0),
                pb.sy(*y0),
                pb.sx(*x1),
                pb.sy(*y1)
            );
        }
        let _ = writeln!(out, "<path d=\"{d}\" fill=\"none\" stroke=\"black\" stroke-width=\"1.5\"/>");
    }
    points(&mut out, frame, &pb);
    legend(&mut out, &c2d.classes);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Coefficients (unit-length columns), eigenvalues and cumulative shares.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenTable {
    pub feature_names: Vec<String>,
    /// `p` rows of `d` coefficients.
    pub coefficients: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Percentages truncated to two decimals.
    pub cumulative_percent: Vec<f64>,
}

/// `100 · Σ_{j≤m} l_j / Σ_j l_j`, truncated (not rounded) to two decimals.
pub fn cumulative_percent(eigenvalues: &[f64]) -> Vec<f64> {
    let total: f64 = eigenvalues.iter().sum();
    let mut acc = 0.0;
    eigenvalues
        .iter()
        .map(|l| {
            acc += l;
            let pct = 100.0 * acc / total;
            ((pct * 100.0) + 1e-7).floor() / 100.0
        })
        .collect()
}

impl EigenTable {
    pub fn new(basis: &DimRedBasis, feature_names: &[String]) -> Result<EigenTable> {
        if feature_names.len() != basis.dim() {
            return Err(Error::DimensionMismatch {
                expected: basis.dim(),
                found: feature_names.len(),
            });
        }
        let mut beta = basis.beta.clone();
        for mut col in beta.column_iter_mut() {
            let norm = col.norm();
            if norm > 0.0 {
                col /= norm;
            }
        }
        Ok(EigenTable {
            feature_names: feature_names.to_vec(),
            coefficients: beta.row_iter().map(|r| r.iter().copied().collect()).collect(),
            eigenvalues: basis.eigenvalues.clone(),
            cumulative_percent: cumulative_percent(&basis.eigenvalues),
        })
    }

    fn cells(&self) -> Vec<Vec<String>> {
        let d = self.eigenvalues.len();
        let mut rows = vec![std::iter::once(String::new())
            .chain((1..=d).map(|j| format!("Dir{j}")))
            .collect::<Vec<_>>()];
        for (name, coefs) in self.feature_names.iter().zip(&self.coefficients) {
            rows.push(
                std::iter::once(name.clone())
                    .chain(coefs.iter().map(|v| format!("{v:.3}")))
                    .collect(),
            );
        }
        rows.push(
            std::iter::once("Eigenvalues".to_string())
                .chain(self.eigenvalues.iter().map(|v| format!("{v:.4}")))
                .collect(),
        );
        rows.push(
            std::iter::once("Cum. %".to_string())
                .chain(self.cumulative_percent.iter().map(|v| format!("{v:.2}")))
                .collect(),
        );
        rows
    }

    pub fn to_text(&self) -> String {
        let rows = self.cells();
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in rows {
            let line: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(j, s)| {
                    if j == 0 {
                        format!("{s:<w$}", w = widths[j])
                    } else {
                        format!("{s:>w$}", w = widths[j])
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    pub fn to_svg(&self) -> String {
        let rows = self.cells();
        let mut out = String::new();
        svg_open(&mut out, "Basis coefficients");
        let row_h = ((HEIGHT - 2.0 * MARGIN) / rows.len() as f64).min(20.0);
        let col_w = ((WIDTH - 2.0 * MARGIN) / rows[0].len() as f64).min(110.0);
        for (i, r) in rows.iter().enumerate() {
            for (j, s) in r.iter().enumerate() {
                let anchor = if j == 0 { "start" } else { "end" };
                let x = MARGIN + col_w * j as f64 + if j == 0 { 0.0 } else { col_w - 6.0 };
                let weight = if i == 0 || j == 0 { " font-weight=\"bold\"" } else { "" };
                let _ = writeln!(
                    out,
                    "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"{anchor}\" font-size=\"12\" font-family=\"monospace\"{weight}>{}</text>",
                    MARGIN + row_h * (i as f64 + 1.0),
                    escape(s)
                );
            }
        }
        out.push_str("</svg>\n");
        out
    }
}

pub fn render_eigen_table(basis: &DimRedBasis, feature_names: &[String]) -> Result<EigenTable> {
    EigenTable::new(basis, feature_names)
}
