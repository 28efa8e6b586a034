//! Visual output: skyline overlays and simple histogram plots.

use image::{Rgb, RgbImage};

use crate::skyline::SkylineVector;

pub const OVERLAY_COLOR: Rgb<u8> = Rgb([230, 40, 40]);

/// Draws the skyline polyline over a copy of the image. Defined columns get
/// their boundary pixel marked; vertical gaps between neighboring columns
/// are filled so steep horizons stay connected.
pub fn draw_skyline_overlay(image: &RgbImage, skyline: &SkylineVector) -> RgbImage {
    let mut out = image.clone();
    let (w, h) = out.dimensions();
    let cols = (w as usize).min(skyline.width());
    let mut prev: Option<u32> = None;
    for c in 0..cols {
        match skyline.get(c) {
            Some(r) => {
                let r = r.min(h.saturating_sub(1));
                let (lo, hi) = match prev {
                    Some(p) => (p.min(r), p.max(r)),
                    None => (r, r),
                };
                for y in lo..=hi {
                    out.put_pixel(c as u32, y, OVERLAY_COLOR);
                }
                prev = Some(r);
            }
            None => prev = None,
        }
    }
    out
}

const PLOT_W: u32 = 640;
const PLOT_H: u32 = 400;
const MARGIN: u32 = 40;

/// 3x5 bitmap glyphs for the characters a plot axis needs.
fn glyph(ch: char) -> Option<[u8; 15]> {
    let g = match ch {
        '0' => [1, 1, 1, 1, 0, 1, 1, 0, 1, 1, 0, 1, 1, 1, 1],
        '1' => [0, 1, 0, 1, 1, 0, 0, 1, 0, 0, 1, 0, 1, 1, 1],
        '2' => [1, 1, 1, 0, 0, 1, 1, 1, 1, 1, 0, 0, 1, 1, 1],
        '3' => [1, 1, 1, 0, 0, 1, 0, 1, 1, 0, 0, 1, 1, 1, 1],
        '4' => [1, 0, 1, 1, 0, 1, 1, 1, 1, 0, 0, 1, 0, 0, 1],
        '5' => [1, 1, 1, 1, 0, 0, 1, 1, 1, 0, 0, 1, 1, 1, 1],
        '6' => [1, 1, 1, 1, 0, 0, 1, 1, 1, 1, 0, 1, 1, 1, 1],
        '7' => [1, 1, 1, 0, 0, 1, 0, 1, 0, 0, 1, 0, 0, 1, 0],
        '8' => [1, 1, 1, 1, 0, 1, 1, 1, 1, 1, 0, 1, 1, 1, 1],
        '9' => [1, 1, 1, 1, 0, 1, 1, 1, 1, 0, 0, 1, 1, 1, 1],
        '.' => [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0],
        '-' => [0, 0, 0, 0, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0],
        _ => return None,
    };
    Some(g)
}

fn draw_text(img: &mut RgbImage, x: u32, y: u32, text: &str) {
    let mut cx = x;
    for ch in text.chars() {
        if let Some(g) = glyph(ch) {
            for (i, &on) in g.iter().enumerate() {
                if on == 1 {
                    let (gx, gy) = (cx + (i % 3) as u32, y + (i / 3) as u32);
                    if gx < img.width() && gy < img.height() {
                        img.put_pixel(gx, gy, Rgb([20, 20, 20]));
                    }
                }
            }
        }
        cx += 4;
    }
}

/// Renders a histogram of `values` into a PNG-ready image. Axis extremes are
/// labeled numerically; empty input yields an empty frame.
pub fn render_histogram(values: &[f64], bins: usize) -> RgbImage {
    let mut img = RgbImage::from_pixel(PLOT_W, PLOT_H, Rgb([255, 255, 255]));
    let axis = Rgb([30, 30, 30]);
    for x in MARGIN..PLOT_W - MARGIN / 2 {
        img.put_pixel(x, PLOT_H - MARGIN, axis);
    }
    for y in MARGIN / 2..=PLOT_H - MARGIN {
        img.put_pixel(MARGIN, y, axis);
    }
    if values.is_empty() || bins == 0 {
        return img;
    }

    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / span) * bins as f64) as usize;
        counts[b.min(bins - 1)] += 1;
    }
    let peak = counts.iter().copied().max().unwrap_or(1).max(1);

    let plot_w = PLOT_W - MARGIN - MARGIN / 2;
    let plot_h = PLOT_H - MARGIN - MARGIN / 2;
    let bar = Rgb([70, 110, 200]);
    for (b, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let x0 = MARGIN + 1 + (b as u32 * plot_w) / bins as u32;
        let x1 = MARGIN + ((b as u32 + 1) * plot_w) / bins as u32;
        let bh = ((count as f64 / peak as f64) * plot_h as f64).round() as u32;
        for x in x0..x1.max(x0 + 1) {
            for y in (PLOT_H - MARGIN - bh)..(PLOT_H - MARGIN) {
                img.put_pixel(x, y, bar);
            }
        }
    }
    draw_text(&mut img, MARGIN, PLOT_H - MARGIN + 6, &format!("{lo:.2}"));
    let hi_label = format!("{hi:.2}");
    let hi_x = PLOT_W - MARGIN / 2 - 4 * hi_label.len() as u32;
    draw_text(&mut img, hi_x, PLOT_H - MARGIN + 6, &hi_label);
    draw_text(&mut img, MARGIN / 4, MARGIN / 2, &format!("{peak}"));
    img
}
