use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Side length of the square model input.
pub const MODEL_INPUT_SIZE: u32 = 224;

/// Single-channel image with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

/// Axis-aligned region `(x, y, width, height)` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Roi {
    pub fn new(x: u32, y: u32, width: u32, height: u32) -> Self {
        Self { x, y, width, height }
    }
}

impl Raster {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), (width * height) as usize, "raster buffer size");
        Self { width, height, data }
    }

    pub fn filled(width: u32, height: u32, value: f32) -> Self {
        Self::new(width, height, vec![value; (width * height) as usize])
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> f32) -> Self {
        let mut data = Vec::with_capacity((width * height) as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[(y * self.width + x) as usize]
    }

    /// Reads any image the `image` crate decodes, converted to 8-bit luminance.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let img = image::open(path)
            .map_err(|source| CorpusError::Image {
                path: path.to_path_buf(),
                source,
            })?
            .into_luma8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
        Ok(Self::new(w, h, data))
    }

    /// Writes an 8-bit grayscale PNG.
    pub fn save_png(&self, path: &Path) -> Result<(), CorpusError> {
        let bytes: Vec<u8> = self.to_u8();
        let buf = image::GrayImage::from_raw(self.width, self.height, bytes).expect("buffer size");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| CorpusError::Image {
                path: path.to_path_buf(),
                source,
            })
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    fn crop(&self, roi: Roi) -> Raster {
        Raster::from_fn(roi.width, roi.height, |x, y| self.get(roi.x + x, roi.y + y))
    }

    /// Box-filter resampling: each output pixel averages the source area it covers.
    /// Exact block averaging for integer downscale factors.
    pub fn resize(&self, width: u32, height: u32) -> Raster {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let spans = |n_out: u32, scale: f64, n_in: u32| -> Vec<Vec<(u32, f64)>> {
            (0..n_out)
                .map(|o| {
                    let lo = o as f64 * scale;
                    let hi = ((o + 1) as f64 * scale).min(n_in as f64);
                    let mut taps = Vec::new();
                    let mut i = lo.floor() as u32;
                    while (i as f64) < hi && i < n_in {
                        let w = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                        if w > 0.0 {
                            taps.push((i, w));
                        }
                        i += 1;
                    }
                    let total: f64 = taps.iter().map(|t| t.1).sum();
                    taps.iter_mut().for_each(|t| t.1 /= total);
                    taps
                })
                .collect()
        };
        let xs = spans(width, sx, self.width);
        let ys = spans(height, sy, self.height);
        Raster::from_fn(width, height, |x, y| {
            let mut acc = 0.0f64;
            for &(iy, wy) in &ys[y as usize] {
                for &(ix, wx) in &xs[x as usize] {
                    acc += wx * wy * self.get(ix, iy) as f64;
                }
            }
            acc as f32
        })
    }

    /// Mirror around the vertical axis.
    pub fn flip_horizontal(&self) -> Raster {
        Raster::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }

    /// Rotation by `degrees` about the image centre followed by a shift of `(dx, dy)`
    /// pixels. Bilinear sampling; pixels mapped from outside the frame are zero.
    pub fn rotate_translate(&self, degrees: f64, dx: f64, dy: f64) -> Raster {
        if degrees == 0.0 && dx == 0.0 && dy == 0.0 {
            return self.clone();
        }
        let (sin, cos) = degrees.to_radians().sin_cos();
        let cx = (self.width as f64 - 1.0) / 2.0;
        let cy = (self.height as f64 - 1.0) / 2.0;
        Raster::from_fn(self.width, self.height, |x, y| {
            let ux = x as f64 - cx - dx;
            let uy = y as f64 - cy - dy;
            // inverse rotation
            let sx = cos * ux + sin * uy + cx;
            let sy = -sin * ux + cos * uy + cy;
            self.sample_bilinear(sx, sy)
        })
    }

    fn sample_bilinear(&self, x: f64, y: f64) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let at = |xi: f64, yi: f64| -> f64 {
            if xi < 0.0 || yi < 0.0 || xi >= self.width as f64 || yi >= self.height as f64 {
                0.0
            } else {
                self.get(xi as u32, yi as u32) as f64
            }
        };
        let v = at(x0, y0) * (1.0 - fx) * (1.0 - fy)
            + at(x0 + 1.0, y0) * fx * (1.0 - fy)
            + at(x0, y0 + 1.0) * (1.0 - fx) * fy
            + at(x0 + 1.0, y0 + 1.0) * fx * fy;
        v as f32
    }
}

/// Crops to `roi` (or keeps the full frame) and resamples to 224×224.
/// An ROI that leaves the frame is an error, never clamped.
pub fn crop_and_resize(image: &Raster, roi: Option<Roi>) -> Result<Raster, CorpusError> {
    let region = match roi {
        Some(r) => {
            let inside = r.width > 0
                && r.height > 0
                && r.x.checked_add(r.width).is_some_and(|e| e <= image.width)
                && r.y.checked_add(r.height).is_some_and(|e| e <= image.height);
            if !inside {
                return Err(CorpusError::RoiOutOfBounds {
                    roi: r,
                    width: image.width,
                    height: image.height,
                });
            }
            image.crop(r)
        }
        None => image.clone(),
    };
    Ok(region.resize(MODEL_INPUT_SIZE, MODEL_INPUT_SIZE))
}

/// Ranges for random translation, rotation and horizontal flip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Maximum shift as a fraction of the image side, per axis.
    pub max_translate_frac: f64,
    pub max_rotate_deg: f64,
    pub flip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_translate_frac: 0.1,
            max_rotate_deg: 15.0,
            flip_prob: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            max_translate_frac: 0.0,
            max_rotate_deg: 0.0,
            flip_prob: 0.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.max_translate_frac == 0.0 && self.max_rotate_deg == 0.0 && self.flip_prob == 0.0
    }
}

/// Random flip, rotation and translation drawn from `config`, deterministic in `seed`.
/// Output has the input's size.
pub fn augment(image: &Raster, config: &AugmentConfig, seed: u64) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // draw every variate unconditionally so the stream does not depend on the ranges
    let u_tx: f64 = rng.random_range(-1.0..=1.0);
    let u_ty: f64 = rng.random_range(-1.0..=1.0);
    let u_rot: f64 = rng.random_range(-1.0..=1.0);
    let u_flip: f64 = rng.random();

    let flipped = if u_flip < config.flip_prob {
        image.flip_horizontal()
    } else {
        image.clone()
    };
    flipped.rotate_translate(
        u_rot * config.max_rotate_deg,
        u_tx * config.max_translate_frac * image.width as f64,
        u_ty * config.max_translate_frac * image.height as f64,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(w: u32, h: u32) -> Raster {
        Raster::from_fn(w, h, |x, y| ((x * 7 + y * 13) % 23) as f32 / 22.0)
    }

    #[test]
    fn identity_when_already_model_size() {
        let img = fixture(224, 224);
        assert_eq!(crop_and_resize(&img, None).unwrap(), img);
    }

    #[test]
    fn full_frame_downscale_is_block_average() {
        let img = fixture(448, 448);
        let out = crop_and_resize(&img, Some(Roi::new(0, 0, 448, 448))).unwrap();
        assert_eq!((out.width(), out.height()), (224, 224));
        for (x, y) in [(0, 0), (17, 101), (223, 223)] {
            let expect = (img.get(2 * x, 2 * y)
                + img.get(2 * x + 1, 2 * y)
                + img.get(2 * x, 2 * y + 1)
                + img.get(2 * x + 1, 2 * y + 1))
                / 4.0;
            assert!((out.get(x, y) - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn roi_out_of_bounds_is_error() {
        let img = fixture(256, 256);
        assert!(matches!(
            crop_and_resize(&img, Some(Roi::new(10, 10, 300, 300))),
            Err(CorpusError::RoiOutOfBounds { .. })
        ));
        assert!(crop_and_resize(&img, Some(Roi::new(0, 0, 0, 5))).is_err());
        assert!(crop_and_resize(&img, Some(Roi::new(u32::MAX, 0, 2, 2))).is_err());
    }

    #[test]
    fn upscale_has_target_size() {
        let out = crop_and_resize(&fixture(100, 60), None).unwrap();
        assert_eq!((out.width(), out.height()), (224, 224));
    }

    #[test]
    fn zero_ranges_are_identity() {
        let img = fixture(224, 224);
        for seed in 0..5 {
            assert_eq!(augment(&img, &AugmentConfig::identity(), seed), img);
        }
    }

    #[test]
    fn same_seed_same_output() {
        let img = fixture(224, 224);
        let cfg = AugmentConfig::default();
        assert_eq!(augment(&img, &cfg, 42), augment(&img, &cfg, 42));
        assert_eq!(augment(&img, &cfg, 42).width(), 224);
    }

    #[test]
    fn double_flip_is_identity() {
        let img = fixture(224, 224);
        let flip_only = AugmentConfig {
            max_translate_frac: 0.0,
            max_rotate_deg: 0.0,
            flip_prob: 1.0,
        };
        let once = augment(&img, &flip_only, 3);
        assert_ne!(once, img);
        assert_eq!(augment(&once, &flip_only, 11), img);
    }

    #[test]
    fn png_round_trip_is_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = fixture(32, 16);
        img.save_png(&path).unwrap();
        let back = Raster::load(&path).unwrap();
        assert_eq!(back.to_u8(), img.to_u8());
    }
}
