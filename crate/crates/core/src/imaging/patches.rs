use super::{ImagingError, RasterImage};

/// Square tiles covering an edge-replicated, right/bottom-padded image.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub patches: Vec<RasterImage>,
    pub pad_right: usize,
    pub pad_bottom: usize,
    pub source_width: usize,
    pub source_height: usize,
}

impl PatchGrid {
    /// Applies `f` to every patch, e.g. a super-resolution backend.
    pub fn map_patches<E>(
        self,
        mut f: impl FnMut(&RasterImage) -> Result<RasterImage, E>,
    ) -> Result<Self, E> {
        let patches = self.patches.iter().map(&mut f).collect::<Result<Vec<_>, E>>()?;
        Ok(Self { patches, ..self })
    }
}

pub fn tile_patches(img: &RasterImage, patch_size: usize) -> Result<PatchGrid, ImagingError> {
    if patch_size == 0 {
        return Err(ImagingError::InvalidPatchSize);
    }
    let (w, h) = img.dims();
    let cols = w.div_ceil(patch_size);
    let rows = h.div_ceil(patch_size);
    let mut patches = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut px = Vec::with_capacity(patch_size * patch_size);
            for dy in 0..patch_size {
                let y = (r * patch_size + dy).min(h - 1);
                for dx in 0..patch_size {
                    let x = (c * patch_size + dx).min(w - 1);
                    px.push(img.get(x, y));
                }
            }
            patches.push(RasterImage::from_clamped(patch_size, patch_size, px));
        }
    }
    Ok(PatchGrid {
        patch_size,
        rows,
        cols,
        patches,
        pad_right: cols * patch_size - w,
        pad_bottom: rows * patch_size - h,
        source_width: w,
        source_height: h,
    })
}

/// Concatenates patches of side `patch_size * scale` and crops the scaled
/// padding away.
pub fn assemble_patches(grid: &PatchGrid, scale: usize) -> Result<RasterImage, ImagingError> {
    if scale == 0 || grid.patch_size == 0 {
        return Err(ImagingError::InvalidPatchSize);
    }
    let side = grid.patch_size * scale;
    if grid.patches.len() != grid.rows * grid.cols {
        return Err(ImagingError::PatchShapeMismatch {
            index: grid.patches.len(),
            got_w: 0,
            got_h: 0,
            expected: side,
        });
    }
    for (index, p) in grid.patches.iter().enumerate() {
        if p.dims() != (side, side) {
            return Err(ImagingError::PatchShapeMismatch {
                index,
                got_w: p.width(),
                got_h: p.height(),
                expected: side,
            });
        }
    }
    let out_w = grid.source_width * scale;
    let out_h = grid.source_height * scale;
    let mut out = vec![0.0; out_w * out_h];
    for y in 0..out_h {
        let (r, py) = (y / side, y % side);
        for c in 0..grid.cols {
            let x0 = c * side;
            if x0 >= out_w {
                break;
            }
            let span = side.min(out_w - x0);
            let patch = &grid.patches[r * grid.cols + c];
            out[y * out_w + x0..y * out_w + x0 + span]
                .copy_from_slice(&patch.pixels()[py * side..py * side + span]);
        }
    }
    Ok(RasterImage::from_clamped(out_w, out_h, out))
}
