//! Mip-mapped color textures sampled with trilinear filtering.

use std::path::Path;

use crate::colorsep::{linear_to_srgb, srgb_to_linear};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ColorSpace {
    #[default]
    Srgb,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MipLevel {
    pub width: usize,
    pub height: usize,
    /// Linear-light RGB, row 0 at the top of the image.
    pub texels: Vec<[f32; 3]>,
}

impl MipLevel {
    #[inline]
    fn texel(&self, x: i64, y: i64) -> [f32; 3] {
        let x = x.clamp(0, self.width as i64 - 1) as usize;
        let y = y.clamp(0, self.height as i64 - 1) as usize;
        self.texels[y * self.width + x]
    }

    /// Bilinear sample at continuous texel coordinates (texel centers at `i + 0.5`).
    fn bilinear(&self, u: f64, v: f64) -> [f64; 3] {
        let x = u * self.width as f64 - 0.5;
        let y = (1.0 - v) * self.height as f64 - 0.5;
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let mut out = [0.0; 3];
        for (dx, dy, w) in [(0, 0, (1.0 - fx) * (1.0 - fy)), (1, 0, fx * (1.0 - fy)), (0, 1, (1.0 - fx) * fy), (1, 1, fx * fy)] {
            if w == 0.0 {
                continue;
            }
            let t = self.texel(x0 + dx, y0 + dy);
            for c in 0..3 {
                out[c] += w * t[c] as f64;
            }
        }
        out
    }
}

/// Texture pyramid; level `k` has dimensions `ceil(level0 / 2^k)` down to 1x1.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureImage {
    levels: Vec<MipLevel>,
    color_space: ColorSpace,
}

impl TextureImage {
    /// Build from 8-bit RGB rows (top row first).
    pub fn from_rgb8(width: usize, height: usize, data: &[u8], color_space: ColorSpace) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::Image(format!("bad texture buffer for {width}x{height}")));
        }
        let decode = |b: u8| {
            let c = b as f64 / 255.0;
            (match color_space {
                ColorSpace::Srgb => srgb_to_linear(c),
                ColorSpace::Linear => c,
            }) as f32
        };
        let texels = data.chunks_exact(3).map(|p| [decode(p[0]), decode(p[1]), decode(p[2])]).collect();
        Ok(Self::from_linear(MipLevel { width, height, texels }, color_space))
    }

    pub fn from_linear(base: MipLevel, color_space: ColorSpace) -> Self {
        let mut levels = vec![base];
        while {
            let l = levels.last().unwrap();
            l.width > 1 || l.height > 1
        } {
            let next = downsample(levels.last().unwrap());
            levels.push(next);
        }
        Self { levels, color_space }
    }

    /// Load a PNG or binary PPM.
    pub fn load(path: &Path, color_space: ColorSpace) -> Result<Self> {
        let img = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image(format!("{}: {other}", path.display())),
        })?;
        let rgb = img.to_rgb8();
        Self::from_rgb8(rgb.width() as usize, rgb.height() as usize, rgb.as_raw(), color_space)
    }

    pub fn levels(&self) -> &[MipLevel] {
        &self.levels
    }

    pub fn max_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn width(&self) -> usize {
        self.levels[0].width
    }

    pub fn height(&self) -> usize {
        self.levels[0].height
    }

    pub fn color_space(&self) -> ColorSpace {
        self.color_space
    }

    /// Trilinear sample in linear light; `lod` is clamped to the pyramid.
    pub fn sample_linear(&self, u: f64, v: f64, lod: f64) -> [f64; 3] {
        let lod = lod.clamp(0.0, self.max_level() as f64);
        let l0 = lod.floor() as usize;
        let f = lod - l0 as f64;
        let a = self.levels[l0].bilinear(u, v);
        if f == 0.0 || l0 == self.max_level() {
            return a;
        }
        let b = self.levels[l0 + 1].bilinear(u, v);
        [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]), a[2] + f * (b[2] - a[2])]
    }

    /// Trilinear sample returned in the texture's own encoding.
    pub fn sample(&self, u: f64, v: f64, lod: f64) -> [f64; 3] {
        let lin = self.sample_linear(u, v, lod);
        match self.color_space {
            ColorSpace::Srgb => lin.map(|c| linear_to_srgb(c.clamp(0.0, 1.0))),
            ColorSpace::Linear => lin,
        }
    }
}

/// 2x2 box filter; odd edges average the texels that exist.
fn downsample(src: &MipLevel) -> MipLevel {
    let width = src.width.div_ceil(2);
    let height = src.height.div_ceil(2);
    let mut texels = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let mut acc = [0.0f64; 3];
            let mut n = 0.0;
            for (sx, sy) in [(2 * x, 2 * y), (2 * x + 1, 2 * y), (2 * x, 2 * y + 1), (2 * x + 1, 2 * y + 1)] {
                if sx < src.width && sy < src.height {
                    let t = src.texels[sy * src.width + sx];
                    for c in 0..3 {
                        acc[c] += t[c] as f64;
                    }
                    n += 1.0;
                }
            }
            texels.push([(acc[0] / n) as f32, (acc[1] / n) as f32, (acc[2] / n) as f32]);
        }
    }
    MipLevel { width, height, texels }
}
