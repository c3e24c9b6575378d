//! SVG output. Offsets are accumulated from the origin; the segment into a
//! point is drawn only when the pen was down after the previous point, so
//! every lift starts a new polyline.

use std::fmt::Write;

use crate::stroke::{PenState, Sketch, StrokePoint5};
use crate::Real;

/// Fraction of the canvas kept free on each side.
pub const MARGIN_FRACTION: f64 = 0.05;

#[derive(Clone, Debug)]
pub struct RenderStyle {
    pub stroke_width: f64,
    pub canvas_size: f64,
    pub color: String,
    /// Color for points at or after `highlight_from` (completions).
    pub highlight_color: String,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            stroke_width: 2.0,
            canvas_size: 256.0,
            color: "#000000".into(),
            highlight_color: "#d03030".into(),
        }
    }
}

/// A maximal drawn run in absolute coordinates, tagged with the index of the
/// point that started it.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    pub vertices: Vec<(f64, f64)>,
    pub first_point: usize,
}

/// Splits a sketch into drawn polylines in absolute (unscaled) coordinates.
/// A point that is both reached and left with the pen up draws nothing.
pub fn polylines(points: &[StrokePoint5]) -> Vec<Polyline> {
    let mut out = Vec::new();
    let (mut x, mut y) = (0.0f64, 0.0f64);
    let mut pen_down = true; // S0 leaves the pen on the paper at the origin
    let mut current = Polyline { vertices: vec![(0.0, 0.0)], first_point: 0 };
    for (i, p) in points.iter().enumerate() {
        if p.pen == PenState::End {
            break;
        }
        x += p.dx as f64;
        y += p.dy as f64;
        if pen_down {
            current.vertices.push((x, y));
        } else {
            flush(&mut out, &mut current);
            current = Polyline { vertices: vec![(x, y)], first_point: i };
        }
        pen_down = p.pen == PenState::Down;
    }
    flush(&mut out, &mut current);
    out
}

fn flush(out: &mut Vec<Polyline>, current: &mut Polyline) {
    if current.vertices.len() >= 2 {
        out.push(std::mem::replace(current, Polyline { vertices: Vec::new(), first_point: 0 }));
    }
}

/// Maps absolute coordinates into a `size`-wide square cell, preserving aspect ratio.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitTransform {
    pub scale: f64,
    pub offset_x: f64,
    pub offset_y: f64,
}

impl FitTransform {
    pub fn fit(lines: &[Polyline], size: f64) -> Self {
        let mut min = (f64::INFINITY, f64::INFINITY);
        let mut max = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(x, y) in lines.iter().flat_map(|l| l.vertices.iter()) {
            min = (min.0.min(x), min.1.min(y));
            max = (max.0.max(x), max.1.max(y));
        }
        if !min.0.is_finite() {
            return Self { scale: 1.0, offset_x: 0.0, offset_y: 0.0 };
        }
        let margin = size * MARGIN_FRACTION;
        let inner = size - 2.0 * margin;
        let extent = (max.0 - min.0).max(max.1 - min.1);
        let scale = if extent > 0.0 { inner / extent } else { 1.0 };
        // center the drawing inside the inner box
        let offset_x = margin + (inner - (max.0 - min.0) * scale) / 2.0 - min.0 * scale;
        let offset_y = margin + (inner - (max.1 - min.1) * scale) / 2.0 - min.1 * scale;
        Self { scale, offset_x, offset_y }
    }

    pub fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        (x * self.scale + self.offset_x, y * self.scale + self.offset_y)
    }
}

fn header(out: &mut String, width: f64, height: f64) {
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = fmt_num(width),
        h = fmt_num(height)
    );
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".to_string() } else { s.to_string() }
}

fn write_polylines(out: &mut String, sketch_points: &[StrokePoint5], highlight_from: Option<usize>, size: f64, dx: f64, dy: f64, style: &RenderStyle) {
    let lines = polylines(sketch_points);
    let fit = FitTransform::fit(&lines, size);
    for line in &lines {
        let color = match highlight_from {
            Some(h) if line.first_point >= h => &style.highlight_color,
            _ => &style.color,
        };
        let pts: Vec<String> = line
            .vertices
            .iter()
            .map(|&v| {
                let (x, y) = fit.apply(v);
                format!("{},{}", fmt_num(x + dx), fmt_num(y + dy))
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="{}" stroke-linecap="round" stroke-linejoin="round"/>"#,
            pts.join(" "),
            color,
            fmt_num(style.stroke_width)
        );
    }
}

/// Renders one sketch onto a square canvas, auto-fit to its bounding box.
pub fn render_svg(sketch: &Sketch, stroke_width: f64, canvas_size: f64) -> String {
    let style = RenderStyle { stroke_width, canvas_size, ..RenderStyle::default() };
    render_svg_styled(sketch, None, &style)
}

/// Renders a sketch, drawing polylines that start at or after `highlight_from`
/// in the highlight color.
pub fn render_svg_styled(sketch: &Sketch, highlight_from: Option<usize>, style: &RenderStyle) -> String {
    let mut out = String::new();
    header(&mut out, style.canvas_size, style.canvas_size);
    write_polylines(&mut out, &sketch.points, highlight_from, style.canvas_size, 0.0, 0.0, style);
    out.push_str("</svg>\n");
    out
}

/// Renders rows of sketches as a grid of `cell`-sized squares, each fit independently.
pub fn render_grid(rows: &[Vec<Sketch>], cell: f64, stroke_width: f64) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let style = RenderStyle { stroke_width, canvas_size: cell, ..RenderStyle::default() };
    let mut out = String::new();
    header(&mut out, cols as f64 * cell, rows.len() as f64 * cell);
    for (r, row) in rows.iter().enumerate() {
        for (c, sketch) in row.iter().enumerate() {
            write_polylines(&mut out, &sketch.points, None, cell, c as f64 * cell, r as f64 * cell, &style);
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Absolute pen positions after each real point, starting from the origin.
pub fn absolute_positions(points: &[StrokePoint5]) -> Vec<(Real, Real)> {
    let mut acc = (0.0, 0.0);
    points
        .iter()
        .take_while(|p| p.pen != PenState::End)
        .map(|p| {
            acc = (acc.0 + p.dx, acc.1 + p.dy);
            acc
        })
        .collect()
}
