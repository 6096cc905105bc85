//! Quick-look PNG heatmaps of 2D fields.

use std::path::{Path, PathBuf};

use crate::spectral::Field;

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("heatmaps need a 2D field (got {0}D)")]
    Dims(usize),
    #[error("field contains non-finite values")]
    NonFinite,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Png(#[from] png::EncodingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Colormap {
    #[default]
    Grayscale,
    Viridis,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub colormap: Colormap,
    /// Pixels per grid cell along each axis.
    pub scale: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            colormap: Colormap::Grayscale,
            scale: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: u32,
    pub height: u32,
    pub min: f64,
    pub max: f64,
    pub png: Vec<u8>,
}

// Nine evenly spaced samples of the viridis table.
const VIRIDIS: [[f64; 3]; 9] = [
    [68.0, 1.0, 84.0],
    [71.0, 44.0, 122.0],
    [59.0, 81.0, 139.0],
    [44.0, 113.0, 142.0],
    [33.0, 144.0, 141.0],
    [39.0, 173.0, 129.0],
    [92.0, 200.0, 99.0],
    [170.0, 220.0, 50.0],
    [253.0, 231.0, 37.0],
];

fn viridis(u: f64) -> [u8; 3] {
    let x = u.clamp(0.0, 1.0) * (VIRIDIS.len() - 1) as f64;
    let i = (x.floor() as usize).min(VIRIDIS.len() - 2);
    let w = x - i as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (VIRIDIS[i][c] * (1.0 - w) + VIRIDIS[i + 1][c] * w).round() as u8;
    }
    out
}

/// Axis 0 runs left to right, axis 1 bottom to top. A constant field maps
/// to the middle of the colour scale.
pub fn encode_heatmap(field: &Field, opts: &RenderOptions) -> Result<Heatmap, RenderError> {
    let g = field.grid();
    if g.dims() != 2 {
        return Err(RenderError::Dims(g.dims()));
    }
    if field.values().iter().any(|v| !v.is_finite()) {
        return Err(RenderError::NonFinite);
    }
    let (nx, ny) = (g.resolution()[0], g.resolution()[1]);
    let s = opts.scale.max(1);
    let (width, height) = (nx * s, ny * s);
    let (min, max) = (field.min(), field.max());
    let unit = |v: f64| if max > min { (v - min) / (max - min) } else { 0.5 };

    let channels = match opts.colormap {
        Colormap::Grayscale => 1,
        Colormap::Viridis => 3,
    };
    let mut pixels = Vec::with_capacity(width * height * channels);
    for row in 0..height {
        let j = ny - 1 - row / s;
        for col in 0..width {
            let i = col / s;
            let u = unit(field.values()[g.flat_index(&[i, j])]);
            match opts.colormap {
                Colormap::Grayscale => pixels.push((255.0 * u).round() as u8),
                Colormap::Viridis => pixels.extend_from_slice(&viridis(u)),
            }
        }
    }

    let mut png_bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut png_bytes, width as u32, height as u32);
        enc.set_color(if channels == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header()?;
        w.write_image_data(&pixels)?;
    }
    Ok(Heatmap {
        width: width as u32,
        height: height as u32,
        min,
        max,
        png: png_bytes,
    })
}

pub fn sidecar_path(png_path: &Path) -> PathBuf {
    png_path.with_extension("minmax.txt")
}

/// Writes the PNG and a `min`/`max` sidecar next to it.
pub fn render_heatmap(field: &Field, path: &Path, opts: &RenderOptions) -> Result<Heatmap, RenderError> {
    let map = encode_heatmap(field, opts)?;
    std::fs::write(path, &map.png)?;
    std::fs::write(sidecar_path(path), format!("min = {}\nmax = {}\n", map.min, map.max))?;
    Ok(map)
}
