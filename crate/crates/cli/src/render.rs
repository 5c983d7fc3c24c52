//! Box-and-label overlays on grayscale images.

use font8x8::{UnicodeFonts, BASIC_FONTS};
use fracdet_core::config::RenderConfig;
use fracdet_core::{Detection, GrayImage};
use image::{Rgb, RgbImage};

pub const GLYPH: u32 = 8;

/// `"<class> <certainty to 2 decimals>"`.
pub fn label_text(d: &Detection) -> String {
    format!("{} {:.2}", d.class.as_str(), d.certainty)
}

/// Inclusive pixel rectangle covering `d.bbox`, clamped to the image.
pub fn pixel_rect(d: &Detection, width: u32, height: u32) -> (u32, u32, u32, u32) {
    let clamp = |v: f64, hi: u32| (v.max(0.0) as u32).min(hi - 1);
    let x0 = clamp(d.bbox.x1.floor(), width);
    let y0 = clamp(d.bbox.y1.floor(), height);
    let x1 = clamp(d.bbox.x2.ceil() - 1.0, width).max(x0);
    let y1 = clamp(d.bbox.y2.ceil() - 1.0, height).max(y0);
    (x0, y0, x1, y1)
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

/// Draws `text` with its top-left corner at `(x, y)`; pixels outside the image are dropped.
pub fn draw_text(img: &mut RgbImage, text: &str, x: i64, y: i64, scale: u32, c: Rgb<u8>) {
    let s = scale as i64;
    for (k, ch) in text.chars().enumerate() {
        let Some(rows) = BASIC_FONTS.get(ch) else { continue };
        let gx = x + k as i64 * GLYPH as i64 * s;
        for (r, bits) in rows.iter().enumerate() {
            for col in 0..8 {
                if bits & (1 << col) == 0 {
                    continue;
                }
                for dy in 0..s {
                    for dx in 0..s {
                        put(img, gx + col * s + dx, y + r as i64 * s + dy, c);
                    }
                }
            }
        }
    }
}

pub fn draw_rect(img: &mut RgbImage, (x0, y0, x1, y1): (u32, u32, u32, u32), thickness: u32, c: Rgb<u8>) {
    for t in 0..thickness {
        let (l, r) = (x0 + t, x1.saturating_sub(t));
        let (top, bot) = (y0 + t, y1.saturating_sub(t));
        if l > r || top > bot {
            break;
        }
        for x in l..=r {
            img.put_pixel(x, top, c);
            img.put_pixel(x, bot, c);
        }
        for y in top..=bot {
            img.put_pixel(l, y, c);
            img.put_pixel(r, y, c);
        }
    }
}

/// RGB copy of `img` with each detection's outline and label; the label sits
/// above the box, or just inside its top edge when there is no room.
pub fn render(img: &GrayImage, detections: &[Detection], style: &RenderConfig) -> RgbImage {
    let mut out = RgbImage::from_fn(img.width, img.height, |x, y| {
        let v = img.get(x, y);
        Rgb([v, v, v])
    });
    let c = Rgb(style.color);
    for d in detections {
        let rect = pixel_rect(d, img.width, img.height);
        draw_rect(&mut out, rect, style.thickness, c);
        let h = (GLYPH * style.text_scale) as i64;
        let (x0, y0) = (rect.0 as i64, rect.1 as i64);
        let ty = if y0 > h { y0 - h - 1 } else { y0 + style.thickness as i64 + 1 };
        draw_text(&mut out, &label_text(d), x0, ty, style.text_scale, c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use fracdet_core::{BBox, Label};

    fn det(c: f64, b: BBox) -> Detection {
        Detection { class: Label::Fracture, certainty: c, bbox: b }
    }

    #[test]
    fn label_rounds_to_two_decimals() {
        assert_eq!(label_text(&det(0.9876, BBox::new(0.0, 0.0, 1.0, 1.0))), "fracture 0.99");
        assert_eq!(label_text(&det(1.0, BBox::new(0.0, 0.0, 1.0, 1.0))), "fracture 1.00");
    }

    #[test]
    fn no_detections_is_a_gray_copy() {
        let mut g = GrayImage::new(20, 10);
        g.set(3, 4, 200);
        let out = render(&g, &[], &RenderConfig::default());
        for (x, y, p) in out.enumerate_pixels() {
            assert_eq!(p.0, [g.get(x, y); 3]);
        }
    }

    #[test]
    fn outline_is_drawn_at_the_box() {
        let g = GrayImage::new(64, 64);
        let d = det(0.5, BBox::new(20.0, 30.0, 40.0, 50.0));
        let out = render(&g, &[d], &RenderConfig::default());
        let blue = [0, 0, 255];
        for x in 20..40 {
            assert_eq!(out.get_pixel(x, 30).0, blue);
            assert_eq!(out.get_pixel(x, 49).0, blue);
        }
        for y in 30..50 {
            assert_eq!(out.get_pixel(20, y).0, blue);
            assert_eq!(out.get_pixel(39, y).0, blue);
        }
        assert_eq!(out.get_pixel(30, 40).0, [0, 0, 0]);
        assert_eq!(out.get_pixel(41, 40).0, [0, 0, 0]);
    }
}
