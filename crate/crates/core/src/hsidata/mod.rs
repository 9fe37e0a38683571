//! Hyperspectral cubes, their on-disk format, mosaic demosaicing and
//! synthetic two-view scenes with known geometry.

mod io;
mod manifest;
mod mosaic;
mod synth;
mod texture;

pub use io::{load_cube, read_cube, save_cube, write_cube, CUBE_MAGIC};
pub use manifest::{DatasetManifest, FrameRecord, PoseRecord, TripletRecord};
pub use mosaic::{demosaic_4x4, remosaic_4x4, MosaicFrame, MosaicPattern};
pub use synth::{
    generate_epipolar_pair, generate_planar_pair, synthetic_cube, EpipolarPair, EpipolarRanges,
    PairMode, PhotometricRanges, PlanarPair, PlanarRanges, SyntheticPairSpec, ValidityMask,
};
pub use texture::{HeightField, SpectralTexture};

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum HsiError {
    #[error("bad magic: not a cube file")]
    BadMagic,
    #[error("unsupported cube format version {0}")]
    UnsupportedVersion(u8),
    #[error("malformed header: {0}")]
    HeaderSyntax(String),
    #[error("inconsistent header: {0}")]
    HeaderInconsistent(String),
    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    PayloadLength { expected: usize, found: usize },
    #[error("wavelengths must be strictly increasing")]
    NonMonotoneWavelengths,
    #[error("value {value} at index {index} outside [0, 1]")]
    ValueRange { index: usize, value: f32 },
    #[error("mosaic dimensions {height}x{width} not divisible by 4")]
    MosaicDimensions { height: usize, width: usize },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HsiError {
    /// Stable numeric code, distinct per variant.
    pub fn code(&self) -> i32 {
        match self {
            HsiError::BadMagic => 10,
            HsiError::UnsupportedVersion(_) => 11,
            HsiError::HeaderSyntax(_) => 12,
            HsiError::HeaderInconsistent(_) => 13,
            HsiError::PayloadLength { .. } => 14,
            HsiError::NonMonotoneWavelengths => 15,
            HsiError::ValueRange { .. } => 16,
            HsiError::MosaicDimensions { .. } => 17,
            HsiError::InvalidSpec(_) => 18,
            HsiError::Manifest(_) => 19,
            HsiError::Io(_) => 20,
        }
    }
}

pub type Result<T> = std::result::Result<T, HsiError>;

/// Evenly spaced band centres over the 460-600 nm range of the target sensor.
pub fn default_wavelengths(bands: usize) -> Vec<f64> {
    match bands {
        0 => vec![],
        1 => vec![530.0],
        n => (0..n)
            .map(|i| 460.0 + 140.0 * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Band-sequential radiance volume with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    bands: usize,
    height: usize,
    width: usize,
    wavelengths: Vec<f64>,
    data: Vec<f32>,
}

impl HsiCube {
    pub fn new(
        bands: usize,
        height: usize,
        width: usize,
        wavelengths: Vec<f64>,
        data: Vec<f32>,
    ) -> Result<Self> {
        check_header(bands, height, width, &wavelengths)?;
        if data.len() != bands * height * width {
            return Err(HsiError::PayloadLength {
                expected: 4 * bands * height * width,
                found: 4 * data.len(),
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(HsiError::ValueRange { index, value });
        }
        Ok(Self {
            bands,
            height,
            width,
            wavelengths,
            data,
        })
    }

    /// Min-max normalises raw radiance into [0, 1] over the whole cube.
    pub fn normalised(
        bands: usize,
        height: usize,
        width: usize,
        wavelengths: Vec<f64>,
        mut data: Vec<f32>,
    ) -> Result<Self> {
        let (lo, hi) = data
            .iter()
            .filter(|v| v.is_finite())
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let span = hi - lo;
        for v in &mut data {
            *v = if !v.is_finite() || !(span > 0.0) {
                0.0
            } else {
                ((*v - lo) / span).clamp(0.0, 1.0)
            };
        }
        Self::new(bands, height, width, wavelengths, data)
    }

    pub fn zeros(bands: usize, height: usize, width: usize) -> Self {
        Self {
            bands,
            height,
            width,
            wavelengths: default_wavelengths(bands),
            data: vec![0.0; bands * height * width],
        }
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelengths
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, band: usize, y: usize, x: usize) -> f32 {
        self.data[(band * self.height + y) * self.width + x]
    }

    pub fn band(&self, band: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[band * n..(band + 1) * n]
    }

    pub(crate) fn band_mut(&mut self, band: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[band * n..(band + 1) * n]
    }

    /// Bilinear sample of every band at a sub-pixel location. Returns false,
    /// leaving `out` untouched, outside `[0, w-1] x [0, h-1]`.
    pub fn sample(&self, x: f64, y: f64, out: &mut [f32]) -> bool {
        let (w, h) = (self.width as f64, self.height as f64);
        if !(x >= 0.0 && y >= 0.0 && x <= w - 1.0 && y <= h - 1.0) {
            return false;
        }
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (fx, fy) = ((x - x0 as f64) as f32, (y - y0 as f64) as f32);
        for (b, o) in out.iter_mut().enumerate().take(self.bands) {
            let p = self.band(b);
            let top = p[y0 * self.width + x0] * (1.0 - fx) + p[y0 * self.width + x1] * fx;
            let bot = p[y1 * self.width + x0] * (1.0 - fx) + p[y1 * self.width + x1] * fx;
            *o = top * (1.0 - fy) + bot * fy;
        }
        true
    }

    /// `[bands, height, width]` tensor view of the data.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.bands, self.height, self.width], self.data.clone())
            .expect("cube shape is consistent")
    }

    /// Band indices closest to 600/540/460 nm, for pseudo-RGB display.
    pub fn pseudo_rgb_bands(&self) -> [usize; 3] {
        [600.0, 540.0, 460.0].map(|target| {
            self.wavelengths
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()))
                .map_or(0, |(i, _)| i)
        })
    }

    /// Row-major 8-bit RGB rendering.
    pub fn pseudo_rgb(&self) -> Vec<[u8; 3]> {
        let idx = self.pseudo_rgb_bands();
        (0..self.height * self.width)
            .map(|i| idx.map(|b| (self.band(b)[i] * 255.0).round().clamp(0.0, 255.0) as u8))
            .collect()
    }

    /// Copy of a spatial window.
    pub fn crop(&self, y: usize, x: usize, height: usize, width: usize) -> Result<Self> {
        if y + height > self.height || x + width > self.width {
            return Err(HsiError::HeaderInconsistent(format!(
                "crop {height}x{width}+{y}+{x} exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.bands * height * width);
        for b in 0..self.bands {
            let p = self.band(b);
            for r in y..y + height {
                data.extend_from_slice(&p[r * self.width + x..r * self.width + x + width]);
            }
        }
        Ok(Self {
            bands: self.bands,
            height,
            width,
            wavelengths: self.wavelengths.clone(),
            data,
        })
    }
}

pub(crate) fn check_header(
    bands: usize,
    height: usize,
    width: usize,
    wavelengths: &[f64],
) -> Result<()> {
    if bands == 0 || height == 0 || width == 0 {
        return Err(HsiError::HeaderInconsistent(format!(
            "empty shape {bands}x{height}x{width}"
        )));
    }
    if wavelengths.len() != bands {
        return Err(HsiError::HeaderInconsistent(format!(
            "{} wavelengths for {bands} bands",
            wavelengths.len()
        )));
    }
    if wavelengths.windows(2).any(|w| !(w[1] > w[0])) || wavelengths.iter().any(|w| !w.is_finite())
    {
        return Err(HsiError::NonMonotoneWavelengths);
    }
    Ok(())
}
