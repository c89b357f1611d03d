//! Synthetic camera frames: the current phase name drawn on a plain
//! background, colour-coded by the recognised shape.

use image::codecs::jpeg::JpegEncoder;
use image::{Rgb, RgbImage};

use super::sim::{CyclePhase, Shape};

const GLYPH_W: u32 = 5;
const GLYPH_H: u32 = 7;

/// Rows top to bottom, bit 4 is the leftmost column.
fn glyph(c: char) -> [u8; 7] {
    match c {
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'Y' => [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '_' => [0, 0, 0, 0, 0, 0, 0x1F],
        _ => [0; 7],
    }
}

fn draw_text(img: &mut RgbImage, text: &str, x0: u32, y0: u32, scale: u32, colour: Rgb<u8>) {
    for (i, c) in text.chars().enumerate() {
        let gx = x0 + i as u32 * (GLYPH_W + 1) * scale;
        for (row, bits) in glyph(c).iter().enumerate() {
            for col in 0..GLYPH_W {
                if bits & (1 << (GLYPH_W - 1 - col)) == 0 {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        let x = gx + col * scale + dx;
                        let y = y0 + row as u32 * scale + dy;
                        if x < img.width() && y < img.height() {
                            img.put_pixel(x, y, colour);
                        }
                    }
                }
            }
        }
    }
}

pub fn render_frame(phase: CyclePhase, shape: Option<Shape>, width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, Rgb([24, 26, 32]));
    let accent = match shape {
        Some(Shape::Square) => Rgb([220, 80, 60]),
        Some(Shape::Rectangle) => Rgb([70, 170, 90]),
        Some(Shape::Circle) => Rgb([70, 120, 220]),
        None => Rgb([140, 140, 140]),
    };
    let band = height / 8;
    for y in height - band..height {
        for x in 0..width {
            img.put_pixel(x, y, accent);
        }
    }
    let text = phase.as_str();
    let n = text.len() as u32;
    let scale = (width / (n * (GLYPH_W + 1) + 2)).clamp(1, height / (2 * GLYPH_H)).max(1);
    let text_w = n * (GLYPH_W + 1) * scale;
    let x0 = width.saturating_sub(text_w) / 2;
    let y0 = (height - band).saturating_sub(GLYPH_H * scale) / 2;
    draw_text(&mut img, text, x0, y0, scale, Rgb([235, 235, 235]));
    img
}

pub fn encode_jpeg(img: &RgbImage, quality: u8) -> Vec<u8> {
    let mut out = Vec::new();
    JpegEncoder::new_with_quality(&mut out, quality)
        .encode_image(img)
        .expect("in-memory JPEG encoding cannot fail");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_is_a_jpeg_with_text() {
        let img = render_frame(CyclePhase::Recognize, Some(Shape::Circle), 320, 240);
        let lit = img.pixels().filter(|p| p.0 == [235, 235, 235]).count();
        assert!(lit > 100);
        let jpg = encode_jpeg(&img, 80);
        assert_eq!(&jpg[..2], &[0xFF, 0xD8]);
    }

    #[test]
    fn every_phase_name_has_glyphs() {
        for p in CyclePhase::ALL {
            for c in p.as_str().chars() {
                assert_ne!(glyph(c), [0; 7], "{c} in {p}");
            }
        }
    }
}
