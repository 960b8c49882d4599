//! Minimal line charts for report figures. Axes and a 10x10 grid are drawn;
//! the exact values live in the accompanying CSV files.

use image::{Rgb, RgbImage};
use imageproc::drawing::{draw_hollow_rect_mut, draw_line_segment_mut};
use imageproc::rect::Rect;

pub const WIDTH: u32 = 640;
pub const HEIGHT: u32 = 480;
const MARGIN: f32 = 40.0;

pub struct Series<'a> {
    pub points: &'a [(f64, f64)],
    pub color: Rgb<u8>,
}

/// Plots the series over `x_range` x `y_range` in data units.
pub fn line_chart(series: &[Series<'_>], x_range: (f64, f64), y_range: (f64, f64)) -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let (pw, ph) = (WIDTH as f32 - 2.0 * MARGIN, HEIGHT as f32 - 2.0 * MARGIN);
    let span = |(lo, hi): (f64, f64)| if hi > lo { hi - lo } else { 1.0 };
    let to_px = |x: f64, y: f64| -> (f32, f32) {
        let u = MARGIN + pw * ((x - x_range.0) / span(x_range)) as f32;
        let v = HEIGHT as f32 - MARGIN - ph * ((y - y_range.0) / span(y_range)) as f32;
        (u, v)
    };
    let grid = Rgb([225, 225, 225]);
    for i in 1..10 {
        let t = i as f32 / 10.0;
        let x = MARGIN + pw * t;
        let y = MARGIN + ph * t;
        draw_line_segment_mut(&mut img, (x, MARGIN), (x, MARGIN + ph), grid);
        draw_line_segment_mut(&mut img, (MARGIN, y), (MARGIN + pw, y), grid);
    }
    draw_hollow_rect_mut(
        &mut img,
        Rect::at(MARGIN as i32, MARGIN as i32).of_size(pw as u32 + 1, ph as u32 + 1),
        Rgb([0, 0, 0]),
    );
    for s in series {
        for w in s.points.windows(2) {
            let a = to_px(w[0].0, w[0].1);
            let b = to_px(w[1].0, w[1].1);
            draw_line_segment_mut(&mut img, a, b, s.color);
        }
    }
    img
}
