//! Deterministic rasterizer: filled, black-outlined figures on white.

use std::f64::consts::PI;

use super::grammar::Attribute;
use crate::error::{Error, Result};

/// Panel side length in pixels.
pub const PANEL_SIZE: usize = 80;
/// Bytes per stored panel.
pub const PANEL_BYTES: usize = PANEL_SIZE * PANEL_SIZE;

/// Darkness of each shade; the fill is `1 - darkness`.
const SHADE_DARKNESS: [f64; 6] = [0.0, 0.15, 0.3, 0.45, 0.6, 0.75];
/// Circumradius as a fraction of the cell half-width, per size.
const SIZE_FRACTION: [f64; 5] = [0.45, 0.575, 0.7, 0.825, 0.95];
/// Sides of each shape type; 0 is a circle.
const SHAPE_SIDES: [usize; 4] = [3, 4, 5, 0];

/// Attribute values of one panel, each an index into its domain. The count
/// index `k` places `k + 1` figures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Panel(pub [u8; 4]);

impl Panel {
    pub fn get(&self, a: Attribute) -> u8 {
        self.0[a.index()]
    }

    pub fn with(mut self, a: Attribute, value: u8) -> Panel {
        self.0[a.index()] = value;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for a in Attribute::ALL {
            if self.get(a) >= a.domain_len() {
                return Err(Error::invalid(
                    "render_panel",
                    format!("{a} value {} outside 0..{}", self.get(a), a.domain_len()),
                ));
            }
        }
        Ok(())
    }
}

/// Figure centres and cell half-width for each count.
fn layout(count: usize) -> (&'static [(f64, f64)], f64) {
    match count {
        1 => (&[(40.0, 40.0)], 36.0),
        2 => (&[(22.0, 40.0), (58.0, 40.0)], 17.0),
        3 => (&[(40.0, 22.0), (22.0, 58.0), (58.0, 58.0)], 17.0),
        _ => (&[(22.0, 22.0), (58.0, 22.0), (22.0, 58.0), (58.0, 58.0)], 17.0),
    }
}

/// Whether `(x, y)` lies in a regular polygon (or circle when `sides == 0`)
/// with circumradius `r` centred at `(cx, cy)`. Odd polygons point up; even
/// ones sit on a flat edge.
fn inside(sides: usize, r: f64, cx: f64, cy: f64, x: f64, y: f64) -> bool {
    let (dx, dy) = (x - cx, y - cy);
    if sides == 0 {
        return dx * dx + dy * dy <= r * r;
    }
    let n = sides as f64;
    let vertex0 = -PI / 2.0 + if sides % 2 == 0 { PI / n } else { 0.0 };
    let apothem = r * (PI / n).cos();
    (0..sides).all(|k| {
        let normal = vertex0 + PI / n + 2.0 * PI * k as f64 / n;
        dx * normal.cos() + dy * normal.sin() <= apothem
    })
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// An all-white panel.
pub fn render_empty() -> Vec<u8> {
    vec![255; PANEL_BYTES]
}

/// Rasterizes a panel to `PANEL_SIZE²` bytes, row-major; 255 is white.
pub fn render_panel(panel: &Panel) -> Result<Vec<u8>> {
    panel.validate()?;
    let sides = SHAPE_SIDES[panel.get(Attribute::ShapeType) as usize];
    let (centres, half) = layout(panel.get(Attribute::Count) as usize + 1);
    let r = SIZE_FRACTION[panel.get(Attribute::Size) as usize] * half;
    let fill = quantize(1.0 - SHADE_DARKNESS[panel.get(Attribute::Shade) as usize]);

    let s = PANEL_SIZE as i64;
    let mut img = render_empty();
    for &(cx, cy) in centres {
        let lo = |c: f64| ((c - r).floor() as i64 - 1).max(0);
        let hi = |c: f64| ((c + r).ceil() as i64 + 1).min(s - 1);
        let hit = |x: i64, y: i64| inside(sides, r, cx, cy, x as f64 + 0.5, y as f64 + 0.5);
        for y in lo(cy)..=hi(cy) {
            for x in lo(cx)..=hi(cx) {
                if !hit(x, y) {
                    continue;
                }
                let edge = !(hit(x - 1, y) && hit(x + 1, y) && hit(x, y - 1) && hit(x, y + 1));
                img[(y * s + x) as usize] = if edge { 0 } else { fill };
            }
        }
    }
    Ok(img)
}
