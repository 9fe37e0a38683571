use super::{default_wavelengths, HsiCube, HsiError, Result};

/// Band index of each cell in a 4x4 super-pixel, row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MosaicPattern(pub [[u8; 4]; 4]);

impl Default for MosaicPattern {
    /// Band `4 * row + col`.
    fn default() -> Self {
        let mut p = [[0u8; 4]; 4];
        for (r, row) in p.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (4 * r + c) as u8;
            }
        }
        Self(p)
    }
}

impl MosaicPattern {
    /// Cell offset `(row, col)` holding `band`.
    fn cell_of(&self, band: usize) -> Option<(usize, usize)> {
        (0..16)
            .map(|i| (i / 4, i % 4))
            .find(|&(r, c)| self.0[r][c] as usize == band)
    }

    fn is_permutation(&self) -> bool {
        let mut seen = [false; 16];
        for row in &self.0 {
            for &b in row {
                if b as usize >= 16 || seen[b as usize] {
                    return false;
                }
                seen[b as usize] = true;
            }
        }
        true
    }
}

/// Raw single-plane frame from a 4x4 snapshot mosaic sensor.
#[derive(Clone, Debug, PartialEq)]
pub struct MosaicFrame {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
    pub pattern: MosaicPattern,
}

impl MosaicFrame {
    pub fn new(
        height: usize,
        width: usize,
        data: Vec<f32>,
        pattern: MosaicPattern,
    ) -> Result<Self> {
        if !height.is_multiple_of(4) || !width.is_multiple_of(4) || height == 0 || width == 0 {
            return Err(HsiError::MosaicDimensions { height, width });
        }
        if data.len() != height * width {
            return Err(HsiError::PayloadLength {
                expected: 4 * height * width,
                found: 4 * data.len(),
            });
        }
        if !pattern.is_permutation() {
            return Err(HsiError::InvalidSpec(
                "mosaic pattern must be a permutation of 0..16".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
            pattern,
        })
    }
}

/// Unstacks each 4x4 super-pixel into 16 bands at quarter resolution.
pub fn demosaic_4x4(frame: &MosaicFrame) -> Result<HsiCube> {
    let (h, w) = (frame.height, frame.width);
    if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
        return Err(HsiError::MosaicDimensions {
            height: h,
            width: w,
        });
    }
    let (ch, cw) = (h / 4, w / 4);
    let mut data = vec![0.0f32; 16 * ch * cw];
    for r in 0..h {
        for c in 0..w {
            let band = frame.pattern.0[r % 4][c % 4] as usize;
            data[(band * ch + r / 4) * cw + c / 4] = frame.data[r * w + c];
        }
    }
    HsiCube::new(16, ch, cw, default_wavelengths(16), data)
}

/// Writes a 16-band cube back into the mosaic layout.
pub fn remosaic_4x4(cube: &HsiCube, pattern: MosaicPattern) -> Result<MosaicFrame> {
    if cube.bands() != 16 {
        return Err(HsiError::HeaderInconsistent(format!(
            "{} bands, mosaic needs 16",
            cube.bands()
        )));
    }
    let (ch, cw) = (cube.height(), cube.width());
    let (h, w) = (4 * ch, 4 * cw);
    let mut data = vec![0.0f32; h * w];
    for b in 0..16 {
        let (dr, dc) = pattern
            .cell_of(b)
            .ok_or_else(|| HsiError::InvalidSpec(format!("band {b} missing from pattern")))?;
        let plane = cube.band(b);
        for i in 0..ch {
            for j in 0..cw {
                data[(4 * i + dr) * w + 4 * j + dc] = plane[i * cw + j];
            }
        }
    }
    MosaicFrame::new(h, w, data, pattern)
}
