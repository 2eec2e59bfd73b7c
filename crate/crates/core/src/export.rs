//! CSV and SVG artifact writers.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use crate::drivetrain::WheelCommand;
use crate::geometry::{Pose2, VehicleParams};
use crate::sim::{SimTrace, TraceRow};
use crate::sweptfield::{Motion, SweptField};
use crate::worldmodel::GridMap;

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("malformed CSV: {0}")]
    Malformed(String),
}

/// Numeric table: header and rows of floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn write_table<W: io::Write>(out: W, header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<(), ExportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        // Debug formatting is the shortest string that parses back exactly
        w.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_table<R: io::Read>(input: R) -> Result<Table, ExportError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| ExportError::Malformed(format!("{s:?}: {e}"))))
            .collect::<Result<Vec<f64>, _>>()?;
        if row.len() != header.len() {
            return Err(ExportError::Malformed(format!("row has {} fields, header {}", row.len(), header.len())));
        }
        rows.push(row);
    }
    Ok(Table { header, rows })
}

pub fn read_table_file(path: &Path) -> Result<Table, ExportError> {
    read_table(std::fs::File::open(path)?)
}

/// Columns `x, y, f_star, t_star`, one row per cell in row-major order.
pub fn write_field_csv<W: io::Write>(out: W, field: &SweptField) -> Result<(), ExportError> {
    let header: Vec<String> = ["x", "y", "f_star", "t_star"].iter().map(|s| s.to_string()).collect();
    let rows = (0..field.height).flat_map(move |iy| {
        (0..field.width).map(move |ix| {
            let c = field.cell_center(ix, iy);
            let i = iy * field.width + ix;
            vec![c[0], c[1], field.f_star[i], field.t_star[i]]
        })
    });
    write_table(out, &header, rows)
}

pub fn write_trace_csv<W: io::Write>(out: W, trace: &SimTrace) -> Result<(), ExportError> {
    write_table(out, &trace.csv_header(), trace.rows.iter().map(SimTrace::csv_record))
}

/// Parses a trace written by [`write_trace_csv`].
pub fn read_trace_csv<R: io::Read>(input: R) -> Result<SimTrace, ExportError> {
    let table = read_table(input)?;
    let fixed = 12;
    let n = table.header.len();
    if n < fixed + 1 || (n - fixed - 1) % 2 != 0 || table.header[0] != "t" || table.header[n - 1] != "qp_iterations" {
        return Err(ExportError::Malformed("unexpected trace header".into()));
    }
    let wheels = (n - fixed - 1) / 2;
    let rows: Vec<TraceRow> = table
        .rows
        .iter()
        .map(|r| TraceRow {
            t: r[0],
            pose: Pose2 {
                x: r[1],
                y: r[2],
                phi: r[3],
            },
            reference: Pose2 {
                x: r[4],
                y: r[5],
                phi: r[6],
            },
            u: [r[7], r[8], r[9]],
            e_y: r[10],
            e_phi: r[11],
            wheels: (0..wheels)
                .map(|i| WheelCommand {
                    gamma: r[fixed + 2 * i],
                    speed: r[fixed + 2 * i + 1],
                })
                .collect(),
            qp_iterations: r[n - 1] as usize,
        })
        .collect();
    let dt = if rows.len() >= 2 { rows[1].t - rows[0].t } else { 0.0 };
    Ok(SimTrace { dt, rows, failure: None })
}

/// Segments of the zero level set of the field, by marching squares over
/// cell centres.
pub fn zero_contour(field: &SweptField) -> Vec<[[f64; 2]; 2]> {
    let mut segs = Vec::new();
    if field.width < 2 || field.height < 2 {
        return segs;
    }
    let f = |ix: usize, iy: usize| field.f_star[iy * field.width + ix];
    let lerp = |a: [f64; 2], b: [f64; 2], fa: f64, fb: f64| {
        let s = if fa == fb { 0.5 } else { fa / (fa - fb) };
        [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
    };
    for iy in 0..field.height - 1 {
        for ix in 0..field.width - 1 {
            let p = [
                field.cell_center(ix, iy),
                field.cell_center(ix + 1, iy),
                field.cell_center(ix + 1, iy + 1),
                field.cell_center(ix, iy + 1),
            ];
            let v = [f(ix, iy), f(ix + 1, iy), f(ix + 1, iy + 1), f(ix, iy + 1)];
            let inside: Vec<bool> = v.iter().map(|&x| x <= 0.0).collect();
            // crossing point on each edge that changes sign
            let mut pts: Vec<(usize, [f64; 2])> = Vec::new();
            for e in 0..4 {
                let (a, b) = (e, (e + 1) % 4);
                if inside[a] != inside[b] {
                    pts.push((e, lerp(p[a], p[b], v[a], v[b])));
                }
            }
            match pts.len() {
                2 => segs.push([pts[0].1, pts[1].1]),
                4 => {
                    let centre = v.iter().sum::<f64>() / 4.0;
                    // saddle: pair edges so the centre sign is respected
                    if (centre <= 0.0) == inside[0] {
                        segs.push([pts[0].1, pts[1].1]);
                        segs.push([pts[2].1, pts[3].1]);
                    } else {
                        segs.push([pts[0].1, pts[3].1]);
                        segs.push([pts[1].1, pts[2].1]);
                    }
                }
                _ => {}
            }
        }
    }
    segs
}

/// Layers of a rendered scene.
pub struct Scene<'a> {
    pub map: Option<&'a GridMap>,
    pub field: Option<&'a SweptField>,
    pub motion: &'a dyn Motion,
    pub vehicle: &'a VehicleParams,
    pub footprints: usize,
    pub title: &'a str,
}

fn push_cell_runs(svg: &mut String, origin: [f64; 2], res: f64, width: usize, height: usize, filled: impl Fn(usize, usize) -> bool, style: &str) {
    let _ = write!(svg, "<path {style} d=\"");
    for iy in 0..height {
        let mut ix = 0;
        while ix < width {
            if !filled(ix, iy) {
                ix += 1;
                continue;
            }
            let start = ix;
            while ix < width && filled(ix, iy) {
                ix += 1;
            }
            let x0 = origin[0] + start as f64 * res;
            let y0 = origin[1] + iy as f64 * res;
            let w = (ix - start) as f64 * res;
            let _ = write!(svg, "M{x0:.3} {y0:.3}h{w:.3}v{res:.3}h{:.3}z", -w);
        }
    }
    svg.push_str("\"/>\n");
}

/// Renders obstacles, the swept region and its zero contour, footprints at
/// evenly spaced times and the centre path.
pub fn render_svg(scene: &Scene) -> String {
    let (t0, t1) = scene.motion.time_span();
    let samples = 400;
    let path: Vec<Pose2> = (0..=samples)
        .map(|i| scene.motion.pose(t0 + (t1 - t0) * i as f64 / samples as f64))
        .collect();
    let (mut min, mut max) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    let mut grow = |p: [f64; 2]| {
        min = [min[0].min(p[0]), min[1].min(p[1])];
        max = [max[0].max(p[0]), max[1].max(p[1])];
    };
    let r = scene.vehicle.half_diagonal();
    for p in &path {
        grow([p.x - r, p.y - r]);
        grow([p.x + r, p.y + r]);
    }
    if let Some(m) = scene.map {
        let reg = m.region();
        grow(reg.min);
        grow(reg.max);
    }
    let (w, h) = (max[0] - min[0], max[1] - min[1]);
    let scale = 800.0 / w.max(h).max(1e-9);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0}\" height=\"{:.0}\" viewBox=\"{:.3} {:.3} {:.3} {:.3}\">",
        w * scale,
        h * scale,
        min[0],
        -max[1],
        w,
        h
    );
    let _ = writeln!(svg, "<title>{}</title>", scene.title);
    svg.push_str("<rect x=\"-1e6\" y=\"-1e6\" width=\"2e6\" height=\"2e6\" fill=\"white\"/>\n");
    svg.push_str("<g transform=\"scale(1,-1)\">\n");
    if let Some(m) = scene.map {
        push_cell_runs(&mut svg, m.origin, m.resolution, m.width, m.height, |ix, iy| m.is_occupied(ix, iy), "fill=\"#555\"");
    }
    if let Some(f) = scene.field {
        let o = f.origin;
        let cells = |ix: usize, iy: usize| f.f_star[iy * f.width + ix] <= 0.0;
        push_cell_runs(&mut svg, o, f.resolution, f.width, f.height, cells, "fill=\"#f4a261\" fill-opacity=\"0.35\"");
        svg.push_str("<path fill=\"none\" stroke=\"#e76f51\" stroke-width=\"0.06\" d=\"");
        for s in zero_contour(f) {
            let _ = write!(svg, "M{:.3} {:.3}L{:.3} {:.3}", s[0][0], s[0][1], s[1][0], s[1][1]);
        }
        svg.push_str("\"/>\n");
    }
    let n = scene.footprints;
    for k in 0..n {
        let t = if n == 1 { t0 } else { t0 + (t1 - t0) * k as f64 / (n - 1) as f64 };
        let pose = scene.motion.pose(t);
        let pts: Vec<String> = scene
            .vehicle
            .corners()
            .iter()
            .map(|&c| {
                let q = pose.transform_point(c);
                format!("{:.3},{:.3}", q[0], q[1])
            })
            .collect();
        let _ = writeln!(
            svg,
            "<polygon points=\"{}\" fill=\"none\" stroke=\"#264653\" stroke-width=\"0.05\"/>",
            pts.join(" ")
        );
    }
    let pts: Vec<String> = path.iter().map(|p| format!("{:.3},{:.3}", p.x, p.y)).collect();
    let _ = writeln!(
        svg,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#2a9d8f\" stroke-width=\"0.08\"/>",
        pts.join(" ")
    );
    svg.push_str("</g>\n</svg>\n");
    svg
}
