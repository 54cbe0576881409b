// SPDX-License-Identifier: Apache-2.0

//! Shape and color conventions shared by the synthetic dataset and the
//! oracle generator: a single filled shape on a flat dark background.
//!
//! Rendering works in bounding-box coordinates `(u, v) ∈ [0, 1]²`, so the
//! parser can recover the shape by template IoU against every known mask.

use image::{Rgb, RgbImage};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Cross,
    Diamond,
    Ring,
}

impl Shape {
    pub const ALL: [Shape; 6] = [
        Shape::Circle,
        Shape::Square,
        Shape::Triangle,
        Shape::Cross,
        Shape::Diamond,
        Shape::Ring,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Cross => "cross",
            Shape::Diamond => "diamond",
            Shape::Ring => "ring",
        }
    }

    pub fn from_name(name: &str) -> Option<Shape> {
        Shape::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Whether the bounding-box coordinate `(u, v)` lies inside the shape.
    pub fn contains(self, u: f64, v: f64) -> bool {
        let du = u - 0.5;
        let dv = v - 0.5;
        match self {
            Shape::Circle => du * du + dv * dv <= 0.25,
            Shape::Square => true,
            Shape::Triangle => du.abs() <= v / 2.0,
            Shape::Cross => du.abs() < 1.0 / 6.0 || dv.abs() < 1.0 / 6.0,
            Shape::Diamond => du.abs() + dv.abs() <= 0.5,
            Shape::Ring => {
                let r2 = du * du + dv * dv;
                (0.09..=0.25).contains(&r2)
            }
        }
    }
}

/// Named fill colors. Order is the default color vocabulary order.
pub const PALETTE: [(&str, [u8; 3]); 8] = [
    ("red", [220, 40, 40]),
    ("green", [40, 180, 60]),
    ("blue", [40, 80, 225]),
    ("yellow", [230, 215, 40]),
    ("magenta", [215, 50, 205]),
    ("cyan", [40, 205, 215]),
    ("orange", [240, 140, 30]),
    ("purple", [125, 55, 175]),
];

pub const BACKGROUND: [u8; 3] = [24, 24, 24];

const BACKGROUND_JITTER: i32 = 6;
const FILL_JITTER: i32 = 18;
const FOREGROUND_THRESHOLD: i32 = 90;

pub fn color_rgb(name: &str) -> Option<[u8; 3]> {
    PALETTE.iter().find(|(n, _)| *n == name).map(|(_, rgb)| *rgb)
}

pub fn is_color(name: &str) -> bool {
    color_rgb(name).is_some()
}

fn jitter(rng: &mut impl Rng, base: u8, amount: i32) -> u8 {
    (base as i32 + rng.random_range(-amount..=amount)).clamp(0, 255) as u8
}

/// Render one filled shape with seeded jitter in position, scale and tone.
pub fn render(size: u32, shape: Shape, rgb: [u8; 3], rng: &mut impl Rng) -> RgbImage {
    let bg = Rgb(BACKGROUND.map(|c| jitter(rng, c, BACKGROUND_JITTER)));
    let fill = Rgb(rgb.map(|c| jitter(rng, c, FILL_JITTER)));
    let size_f = size as f64;
    let side = size_f * rng.random_range(0.5..0.8);
    let margin = size_f * 0.05;
    let slack = (size_f - side - 2.0 * margin).max(0.0);
    let x0 = margin + rng.random_range(0.0..=slack);
    let y0 = margin + rng.random_range(0.0..=slack);

    let mut img = RgbImage::from_pixel(size, size, bg);
    for y in 0..size {
        let v = (y as f64 + 0.5 - y0) / side;
        if !(0.0..=1.0).contains(&v) {
            continue;
        }
        for x in 0..size {
            let u = (x as f64 + 0.5 - x0) / side;
            if (0.0..=1.0).contains(&u) && shape.contains(u, v) {
                img.put_pixel(x, y, fill);
            }
        }
    }
    img
}

/// Attributes recovered from a rendered image.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedAttributes {
    pub shape: Shape,
    pub color: &'static str,
    pub shape_iou: f64,
}

/// Recover `(shape, color)` from a single-shape raster.
pub fn parse(img: &RgbImage) -> Result<ParsedAttributes> {
    let (w, h) = img.dimensions();
    let bg = estimate_background(img);
    let is_fg = |p: &Rgb<u8>| {
        let d: i32 = (0..3).map(|c| (p[c] as i32 - bg[c] as i32).abs()).sum();
        d > FOREGROUND_THRESHOLD
    };

    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
    let mut sum = [0u64; 3];
    let mut count = 0u64;
    for (x, y, p) in img.enumerate_pixels() {
        if is_fg(p) {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for c in 0..3 {
                sum[c] += p[c] as u64;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Domain(format!("no foreground in {w}x{h} image")));
    }

    let mean = sum.map(|s| s as f64 / count as f64);
    let color = PALETTE
        .iter()
        .min_by(|a, b| {
            color_dist(&mean, &a.1)
                .partial_cmp(&color_dist(&mean, &b.1))
                .expect("finite")
        })
        .map(|(n, _)| *n)
        .expect("palette non-empty");

    let bw = (x1 - x0 + 1) as f64;
    let bh = (y1 - y0 + 1) as f64;
    let mut best = (Shape::Circle, -1.0);
    for shape in Shape::ALL {
        let (mut inter, mut union) = (0u32, 0u32);
        for y in y0..=y1 {
            let v = (y - y0) as f64 / bh + 0.5 / bh;
            for x in x0..=x1 {
                let u = (x - x0) as f64 / bw + 0.5 / bw;
                let observed = is_fg(img.get_pixel(x, y));
                let template = shape.contains(u, v);
                if observed && template {
                    inter += 1;
                }
                if observed || template {
                    union += 1;
                }
            }
        }
        let iou = inter as f64 / union.max(1) as f64;
        if iou > best.1 {
            best = (shape, iou);
        }
    }
    Ok(ParsedAttributes {
        shape: best.0,
        color,
        shape_iou: best.1,
    })
}

fn color_dist(a: &[f64; 3], b: &[u8; 3]) -> f64 {
    (0..3).map(|c| (a[c] - b[c] as f64).powi(2)).sum()
}

fn estimate_background(img: &RgbImage) -> [u8; 3] {
    let (w, h) = img.dimensions();
    let corners = [
        img.get_pixel(0, 0),
        img.get_pixel(w - 1, 0),
        img.get_pixel(0, h - 1),
        img.get_pixel(w - 1, h - 1),
    ];
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut vals: Vec<u8> = corners.iter().map(|p| p[c]).collect();
        vals.sort_unstable();
        *o = vals[1];
    }
    out
}
