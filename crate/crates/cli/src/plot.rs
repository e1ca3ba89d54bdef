//! Minimal line-chart renderer. Plots carry no text; the CSV next to each
//! image holds the numbers.

use image::{ImageFormat, Rgb, RgbImage};

const W: u32 = 640;
const H: u32 = 400;
const MARGIN: f64 = 40.0;
const COLORS: [[u8; 3]; 6] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [148, 103, 189],
    [255, 127, 14],
    [23, 190, 207],
];

#[derive(Clone, Copy, Debug, Default)]
pub struct Axes {
    pub log_x: bool,
    pub log_y: bool,
}

pub struct Line<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
}

fn transform(v: f64, log: bool) -> Option<f64> {
    let t = if log {
        if v > 0.0 {
            v.log10()
        } else {
            return None;
        }
    } else {
        v
    };
    t.is_finite().then_some(t)
}

fn range(vals: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return None;
    }
    if hi - lo <= 1e-300 {
        let pad = if lo == 0.0 { 1.0 } else { 0.05 * lo.abs() };
        return Some((lo - pad, hi + pad));
    }
    let pad = 0.04 * (hi - lo);
    Some((lo - pad, hi + pad))
}

fn segment(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), c: Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        for (dx, dy) in [(0, 0), (1, 0), (0, 1)] {
            let (px, py) = (x.round() as i64 + dx, y.round() as i64 + dy);
            if px >= 0 && py >= 0 && (px as u32) < W && (py as u32) < H {
                img.put_pixel(px as u32, py as u32, c);
            }
        }
    }
}

/// PNG bytes of the given lines. Non-finite points and, on log axes,
/// nonpositive ones are skipped.
pub fn render(lines: &[Line<'_>], axes: Axes) -> Vec<u8> {
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let pts: Vec<Vec<(f64, f64)>> = lines
        .iter()
        .map(|l| {
            l.x.iter()
                .zip(l.y)
                .filter_map(|(&x, &y)| Some((transform(x, axes.log_x)?, transform(y, axes.log_y)?)))
                .collect()
        })
        .collect();
    let xr = range(pts.iter().flatten().map(|p| p.0));
    let yr = range(pts.iter().flatten().map(|p| p.1));
    let (left, right, top, bottom) = (MARGIN, W as f64 - MARGIN / 2.0, MARGIN / 2.0, H as f64 - MARGIN);
    let grey = Rgb([200, 200, 200]);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let y = top + f * (bottom - top);
        let x = left + f * (right - left);
        segment(&mut img, (left, y), (right, y), grey);
        segment(&mut img, (x, top), (x, bottom), grey);
    }
    let black = Rgb([0, 0, 0]);
    segment(&mut img, (left, bottom), (right, bottom), black);
    segment(&mut img, (left, top), (left, bottom), black);
    if let (Some((x0, x1)), Some((y0, y1))) = (xr, yr) {
        let map = |(x, y): (f64, f64)| {
            (
                left + (x - x0) / (x1 - x0) * (right - left),
                bottom - (y - y0) / (y1 - y0) * (bottom - top),
            )
        };
        for (i, line) in pts.iter().enumerate() {
            let c = Rgb(COLORS[i % COLORS.len()]);
            for w in line.windows(2) {
                segment(&mut img, map(w[0]), map(w[1]), c);
            }
            if line.len() == 1 {
                let (x, y) = map(line[0]);
                segment(&mut img, (x - 2.0, y), (x + 2.0, y), c);
            }
        }
    }
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).expect("encoding to memory");
    buf.into_inner()
}
