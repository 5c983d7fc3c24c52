use std::path::Path;

use super::DatasetError;

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, pixels: vec![0; (width * height) as usize] }
    }

    pub fn from_pixels(width: u32, height: u32, pixels: Vec<u8>) -> Option<Self> {
        (pixels.len() == (width * height) as usize).then_some(Self { width, height, pixels })
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        self.pixels[(y * self.width + x) as usize] = v;
    }

    pub fn mean(&self) -> f64 {
        if self.pixels.is_empty() {
            return 0.0;
        }
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }

    /// Copies into the top-left of a zero-filled `width x height` canvas.
    pub fn pad_to(&self, width: u32, height: u32) -> GrayImage {
        let mut out = GrayImage::new(width, height);
        for y in 0..self.height.min(height) {
            for x in 0..self.width.min(width) {
                out.set(x, y, self.get(x, y));
            }
        }
        out
    }

    /// Bilinear resampling with pixel-center alignment.
    pub fn resize_bilinear(&self, width: u32, height: u32) -> GrayImage {
        let mut out = GrayImage::new(width, height);
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
            let (y0, ty) = (fy.floor() as u32, fy - fy.floor());
            let y1 = (y0 + 1).min(self.height - 1);
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
                let (x0, tx) = (fx.floor() as u32, fx - fx.floor());
                let x1 = (x0 + 1).min(self.width - 1);
                let p = |xx, yy| self.get(xx, yy) as f64;
                let top = p(x0, y0) * (1.0 - tx) + p(x1, y0) * tx;
                let bottom = p(x0, y1) * (1.0 - tx) + p(x1, y1) * tx;
                let v = top * (1.0 - ty) + bottom * ty;
                out.set(x, y, v.round().clamp(0.0, 255.0) as u8);
            }
        }
        out
    }
}

/// Loads PNG or PGM (any channel layout) and converts to 8-bit luma.
pub fn load_gray(path: &Path) -> Result<GrayImage, DatasetError> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(source) => DatasetError::Io { path: path.into(), source },
        other => DatasetError::Image { path: path.into(), message: other.to_string() },
    })?;
    let luma = img.to_luma8();
    let (w, h) = luma.dimensions();
    Ok(GrayImage { width: w, height: h, pixels: luma.into_raw() })
}

pub fn save_gray_png(path: &Path, img: &GrayImage) -> Result<(), DatasetError> {
    let buf = image::GrayImage::from_raw(img.width, img.height, img.pixels.clone())
        .ok_or_else(|| DatasetError::Image { path: path.into(), message: "pixel buffer size mismatch".into() })?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| DatasetError::Image { path: path.into(), message: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_and_pgm_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_pixels(3, 2, vec![0, 10, 20, 200, 250, 255]).unwrap();
        let png = dir.path().join("a.png");
        save_gray_png(&png, &img).unwrap();
        assert_eq!(load_gray(&png).unwrap(), img);
        let pgm = dir.path().join("b.pgm");
        let mut bytes = b"P5\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&img.pixels);
        std::fs::write(&pgm, bytes).unwrap();
        assert_eq!(load_gray(&pgm).unwrap(), img);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_gray(Path::new("/nonexistent/x.png")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.png"));
    }

    #[test]
    fn constant_image_resizes_to_constant() {
        let img = GrayImage::from_pixels(5, 7, vec![77; 35]).unwrap();
        let r = img.resize_bilinear(9, 3);
        assert!(r.pixels.iter().all(|&p| p == 77));
    }
}
