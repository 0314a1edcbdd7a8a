use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// Row-major, channel-interleaved RGB buffer with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Size(format!("raster must be non-empty, got {width}×{height}")));
        }
        if data.len() != width * height * CHANNELS {
            return Err(Error::Dimension(format!(
                "raster {width}×{height} needs {} values, got {}",
                width * height * CHANNELS,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Format(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Raster { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Raster { width, height, data }
    }

    /// Clamps every value into `[0, 1]`.
    pub fn from_unclamped(width: usize, height: usize, mut data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height * CHANNELS);
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Raster { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        for (c, v) in rgb.into_iter().enumerate() {
            self.data[i + c] = v.clamp(0.0, 1.0);
        }
    }

    /// Copies a `w×h` window whose top-left corner is `(x0, y0)`.
    pub fn window(&self, x0: usize, y0: usize, w: usize, h: usize) -> Raster {
        assert!(x0 + w <= self.width && y0 + h <= self.height);
        let mut data = Vec::with_capacity(w * h * CHANNELS);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * CHANNELS;
            data.extend_from_slice(&self.data[start..start + w * CHANNELS]);
        }
        Raster { width: w, height: h, data }
    }

    /// Writes `src` with its top-left corner at `(x0, y0)`.
    pub fn paste(&mut self, src: &Raster, x0: usize, y0: usize) {
        assert!(x0 + src.width <= self.width && y0 + src.height <= self.height);
        for y in 0..src.height {
            let dst = ((y0 + y) * self.width + x0) * CHANNELS;
            let s = y * src.width * CHANNELS;
            self.data[dst..dst + src.width * CHANNELS].copy_from_slice(&src.data[s..s + src.width * CHANNELS]);
        }
    }

    /// Bilinear resampling with pixel-centre alignment.
    pub fn resize_bilinear(&self, new_w: usize, new_h: usize) -> Raster {
        if new_w == self.width && new_h == self.height {
            return self.clone();
        }
        let sx = self.width as f32 / new_w as f32;
        let sy = self.height as f32 / new_h as f32;
        let mut data = vec![0.0f32; new_w * new_h * CHANNELS];
        for y in 0..new_h {
            let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f32);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f32;
            for x in 0..new_w {
                let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f32);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f32;
                for c in 0..CHANNELS {
                    let p = |xx: usize, yy: usize| self.data[(yy * self.width + xx) * CHANNELS + c];
                    let top = p(x0, y0) * (1.0 - wx) + p(x1, y0) * wx;
                    let bot = p(x0, y1) * (1.0 - wx) + p(x1, y1) * wx;
                    data[(y * new_w + x) * CHANNELS + c] = (top * (1.0 - wy) + bot * wy).clamp(0.0, 1.0);
                }
            }
        }
        Raster {
            width: new_w,
            height: new_h,
            data,
        }
    }

    /// Quantizes to 8-bit RGB.
    pub fn to_rgb8(&self) -> image::RgbImage {
        let bytes = self.data.iter().map(|v| (v * 255.0).round() as u8).collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes).expect("buffer length")
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Raster {
        Raster {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.as_raw().iter().map(|&b| b as f32 / 255.0).collect(),
        }
    }

    pub fn save_png(&self, path: &std::path::Path) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| image_error(path, e))
    }
}

/// Decodes an RGB image file; other channel layouts are rejected.
pub fn raster_from_image(path: &std::path::Path) -> Result<Raster> {
    let img = image::open(path).map_err(|e| image_error(path, e))?;
    let channels = img.color().channel_count();
    if channels != 3 {
        return Err(Error::Format(format!(
            "{}: expected 3 channels, found {channels}",
            path.display()
        )));
    }
    let rgb = img.to_rgb32f();
    Ok(Raster::from_unclamped(
        rgb.width() as usize,
        rgb.height() as usize,
        rgb.into_raw(),
    ))
}

pub(crate) fn image_error(path: &std::path::Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Position of a patch inside its frame grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPos {
    pub row: usize,
    pub col: usize,
}

/// The unit of reconstruction: an RGB block plus its optional grid position.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePatch {
    pub raster: Raster,
    pub grid: Option<GridPos>,
}

impl ImagePatch {
    pub fn new(raster: Raster) -> Self {
        ImagePatch { raster, grid: None }
    }

    pub fn at(raster: Raster, row: usize, col: usize) -> Self {
        ImagePatch {
            raster,
            grid: Some(GridPos { row, col }),
        }
    }

    pub fn width(&self) -> usize {
        self.raster.width()
    }

    pub fn height(&self) -> usize {
        self.raster.height()
    }

    pub fn load_png(path: &std::path::Path) -> Result<Self> {
        Ok(ImagePatch::new(raster_from_image(path)?))
    }
}
