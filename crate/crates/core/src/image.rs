//! Three-channel floating point images and raster file I/O.

use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RangeTag {
    /// Values in [0, 1] straight from decoding or augmentation.
    Raw01,
    /// Channel-standardized values.
    Normalized,
}

/// An H x W x 3 image stored in row-major HWC order.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub data: Array3<f64>,
    pub range: RangeTag,
}

impl ImageTensor {
    pub fn new(data: Array3<f64>, range: RangeTag) -> Result<Self> {
        if data.shape()[2] != 3 {
            return Err(Error::Shape {
                context: "image channels".into(),
                expected: vec![data.shape()[0], data.shape()[1], 3],
                actual: data.shape().to_vec(),
            });
        }
        if range == RangeTag::Raw01 && data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Range("raw image values must lie in [0, 1]".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image contains non-finite values".into()));
        }
        Ok(Self { data, range })
    }

    pub fn zeros(height: usize, width: usize, range: RangeTag) -> Self {
        Self {
            data: Array3::zeros((height, width, 3)),
            range,
        }
    }

    /// Uniform-color raw image.
    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let data = Array3::from_shape_fn((height, width, 3), |(_, _, c)| rgb[c]);
        Self {
            data,
            range: RangeTag::Raw01,
        }
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    /// Pixels as an (H*W) x 3 matrix.
    pub fn to_pixel_matrix(&self) -> Array2<f64> {
        let (h, w) = (self.height(), self.width());
        self.data
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((h * w, 3))
            .expect("standard layout image reshapes")
    }

    pub fn channel_means(&self) -> [f64; 3] {
        let n = (self.height() * self.width()) as f64;
        let mut m = [0.0; 3];
        for ((_, _, c), v) in self.data.indexed_iter() {
            m[c] += v;
        }
        m.map(|s| s / n)
    }

    /// Bilinearly samples the image at continuous pixel coordinates, clamping
    /// to the border.
    pub fn sample_bilinear(&self, y: f64, x: f64) -> [f64; 3] {
        let (h, w) = (self.height(), self.width());
        let y = y.clamp(0.0, (h - 1) as f64);
        let x = x.clamp(0.0, (w - 1) as f64);
        let y0 = y.floor() as usize;
        let x0 = x.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let fy = y - y0 as f64;
        let fx = x - x0 as f64;
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let top = self.data[[y0, x0, c]] * (1.0 - fx) + self.data[[y0, x1, c]] * fx;
            let bot = self.data[[y1, x0, c]] * (1.0 - fx) + self.data[[y1, x1, c]] * fx;
            *o = top * (1.0 - fy) + bot * fy;
        }
        out
    }

    /// Crops the window `(top, left, height, width)` and bilinearly resizes it
    /// to `out_h x out_w` using half-pixel centers.
    pub fn crop_resize(
        &self,
        window: (usize, usize, usize, usize),
        out_h: usize,
        out_w: usize,
    ) -> ImageTensor {
        let (top, left, ch, cw) = window;
        let sy = ch as f64 / out_h as f64;
        let sx = cw as f64 / out_w as f64;
        let mut data = Array3::zeros((out_h, out_w, 3));
        for i in 0..out_h {
            let y = top as f64 + ((i as f64 + 0.5) * sy - 0.5).clamp(0.0, (ch - 1) as f64);
            for j in 0..out_w {
                let x = left as f64 + ((j as f64 + 0.5) * sx - 0.5).clamp(0.0, (cw - 1) as f64);
                let px = self.sample_bilinear(y, x);
                for c in 0..3 {
                    data[[i, j, c]] = px[c];
                }
            }
        }
        ImageTensor {
            data,
            range: self.range,
        }
    }

    pub fn resize(&self, out_h: usize, out_w: usize) -> ImageTensor {
        if out_h == self.height() && out_w == self.width() {
            return self.clone();
        }
        self.crop_resize((0, 0, self.height(), self.width()), out_h, out_w)
    }

    pub fn flip_horizontal(&self) -> ImageTensor {
        let mut data = self.data.clone();
        data.invert_axis(ndarray::Axis(1));
        ImageTensor {
            data: data.as_standard_layout().into_owned(),
            range: self.range,
        }
    }

    /// Decodes PNG, JPEG or PNM files into a raw [0, 1] image.
    pub fn load(path: &Path) -> Result<ImageTensor> {
        let img = image::open(path).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::from_rgb8(h as usize, w as usize, rgb.as_raw())
    }

    /// Builds a raw image from interleaved row-major RGB bytes.
    pub fn from_rgb8(height: usize, width: usize, pixels: &[u8]) -> Result<ImageTensor> {
        if height == 0 || width == 0 || pixels.len() != height * width * 3 {
            return Err(Error::Shape {
                context: "rgb8 pixel buffer".into(),
                expected: vec![height, width, 3],
                actual: vec![pixels.len()],
            });
        }
        let data = Array3::from_shape_fn((height, width, 3), |(y, x, c)| pixels[(y * width + x) * 3 + c] as f64 / 255.0);
        Ok(ImageTensor {
            data,
            range: RangeTag::Raw01,
        })
    }

    /// Writes a raw image, quantized to 8 bits. The format follows the extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        if self.range != RangeTag::Raw01 {
            return Err(Error::Range("only raw images can be saved".into()));
        }
        let (h, w) = (self.height() as u32, self.width() as u32);
        let buf = image::RgbImage::from_fn(w, h, |x, y| {
            let px = |c| (self.data[[y as usize, x as usize, c]] * 255.0).round().clamp(0.0, 255.0) as u8;
            image::Rgb([px(0), px(1), px(2)])
        });
        buf.save(path).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}
