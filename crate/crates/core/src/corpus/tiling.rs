use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Label};

/// Side length of a square tile in pixels.
pub const TILE_SIZE: u32 = 512;

/// One square region of an artwork, addressed by grid position and pixel
/// offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileRect {
    pub row: u32,
    pub col: u32,
    pub x: u32,
    pub y: u32,
    pub size: u32,
}

impl TileRect {
    pub fn contains(&self, px: u32, py: u32) -> bool {
        px >= self.x && px < self.x + self.size && py >= self.y && py < self.y + self.size
    }

    /// File stem used in the tile store, `r<row>_c<col>`.
    pub fn stem(&self) -> String {
        format!("r{}_c{}", self.row, self.col)
    }
}

#[derive(Debug, Clone)]
pub struct TileSample {
    pub artwork_id: String,
    pub label: Label,
    pub rect: TileRect,
    pub pixels: RgbImage,
}

fn offsets(extent: u32) -> Vec<u32> {
    let n = extent.div_ceil(TILE_SIZE);
    (0..n).map(|i| (i * TILE_SIZE).min(extent - TILE_SIZE)).collect()
}

/// Covers a `width × height` image with 512-px tiles.
///
/// Interior tiles sit on a stride-512 grid. When a side is not a multiple of
/// 512 the last column (row) is anchored flush with the right (bottom) edge,
/// so it overlaps its neighbour instead of being padded. Rects are returned
/// in row-major order.
pub fn tile_grid(width: u32, height: u32) -> Result<Vec<TileRect>, CorpusError> {
    if width < TILE_SIZE || height < TILE_SIZE {
        return Err(CorpusError::ImageTooSmall { width, height });
    }
    let xs = offsets(width);
    let ys = offsets(height);
    let mut rects = Vec::with_capacity(xs.len() * ys.len());
    for (row, &y) in ys.iter().enumerate() {
        for (col, &x) in xs.iter().enumerate() {
            rects.push(TileRect {
                row: row as u32,
                col: col as u32,
                x,
                y,
                size: TILE_SIZE,
            });
        }
    }
    Ok(rects)
}

/// Cuts the grid's rects out of `image`. Every sample inherits the
/// artwork's id and label.
pub fn extract_tiles(
    image: &RgbImage,
    grid: &[TileRect],
    artwork_id: &str,
    label: Label,
) -> Result<Vec<TileSample>, CorpusError> {
    let (width, height) = image.dimensions();
    grid.iter()
        .map(|rect| {
            if rect.x as u64 + rect.size as u64 > width as u64 || rect.y as u64 + rect.size as u64 > height as u64 {
                return Err(CorpusError::RectOutOfBounds {
                    x: rect.x,
                    y: rect.y,
                    width,
                    height,
                });
            }
            let pixels = image::imageops::crop_imm(image, rect.x, rect.y, rect.size, rect.size).to_image();
            Ok(TileSample {
                artwork_id: artwork_id.to_string(),
                label,
                rect: *rect,
                pixels,
            })
        })
        .collect()
}
