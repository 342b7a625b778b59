//! Image decoding, proposal cropping and annotation rendering.

use std::path::Path;
use std::sync::Arc;

use image::{ImageReader, Rgb, RgbImage};
use thiserror::Error;

use crate::geometry::{CornerBox, GeometryError, ImageExtent, PixelRect};
use crate::label::ClassLabel;

pub const FACE_COLOR: Rgb<u8> = Rgb([0, 0, 255]);
pub const HAND_COLOR: Rgb<u8> = Rgb([0, 255, 0]);
pub const DETECTION_COLOR: Rgb<u8> = Rgb([255, 0, 0]);
pub const SMOKER_BANNER: Rgb<u8> = Rgb([200, 30, 30]);
pub const NON_SMOKER_BANNER: Rgb<u8> = Rgb([40, 40, 40]);
pub const STROKE: u32 = 2;
pub const BANNER_HEIGHT: u32 = 8;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("cannot decode {path}: {detail}")]
    Decode { path: String, detail: String },
    #[error("cannot encode {path}: {detail}")]
    Encode { path: String, detail: String },
}

/// A decoded RGB image together with the identifier backends key on.
///
/// The pixel buffer is shared and never mutated after construction.
#[derive(Debug, Clone)]
pub struct ImageRef {
    id: String,
    extent: ImageExtent,
    pixels: Arc<RgbImage>,
}

impl ImageRef {
    pub fn new(id: impl Into<String>, pixels: RgbImage) -> Result<Self, GeometryError> {
        let extent = ImageExtent::new(pixels.width(), pixels.height())?;
        Ok(Self {
            id: id.into(),
            extent,
            pixels: Arc::new(pixels),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn extent(&self) -> ImageExtent {
        self.extent
    }

    pub fn pixels(&self) -> &RgbImage {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        self.pixels.get_pixel(x, y).0
    }
}

/// Identifier used for an image file: its file stem.
pub fn image_id_for_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string_lossy().into_owned())
}

/// Decodes a PNG or JPEG file into an [`ImageRef`] whose id is the file stem.
pub fn decode(path: &Path) -> Result<ImageRef, ImageError> {
    let err = |detail: String| ImageError::Decode {
        path: path.display().to_string(),
        detail,
    };
    let reader = ImageReader::open(path)
        .map_err(|e| err(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| err(e.to_string()))?;
    let img = reader.decode().map_err(|e| err(e.to_string()))?;
    ImageRef::new(image_id_for_path(path), img.to_rgb8()).map_err(|e| err(e.to_string()))
}

pub fn save_png(image: &ImageRef, path: &Path) -> Result<(), ImageError> {
    image
        .pixels()
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| ImageError::Encode {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
}

/// Owned pixels of a rasterized sub-rectangle of an image.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelRegion {
    source: String,
    rect: PixelRect,
    pixels: RgbImage,
}

impl PixelRegion {
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn rect(&self) -> PixelRect {
        self.rect
    }

    /// The rasterized rectangle as a box in image coordinates.
    pub fn bbox(&self) -> CornerBox {
        self.rect
            .to_corner_box()
            .expect("pixel regions are never empty")
    }

    pub fn extent(&self) -> ImageExtent {
        ImageExtent::new(self.rect.width, self.rect.height).expect("pixel regions are never empty")
    }

    pub fn pixels(&self) -> &RgbImage {
        &self.pixels
    }
}

/// Copies the pixels under `bbox` after clipping it to the image.
pub fn crop(image: &ImageRef, bbox: &CornerBox) -> Result<PixelRegion, GeometryError> {
    let clipped = bbox.clip_to(image.extent())?;
    let rect = clipped.rasterize();
    if rect.is_empty() {
        return Err(GeometryError::EmptyIntersection);
    }
    let pixels = image::imageops::crop_imm(image.pixels(), rect.x, rect.y, rect.width, rect.height)
        .to_image();
    Ok(PixelRegion {
        source: image.id().to_string(),
        rect,
        pixels,
    })
}

/// The whole image as a region.
pub fn full_region(image: &ImageRef) -> PixelRegion {
    crop(image, &image.extent().full_box()).expect("full box always intersects")
}

/// Box outline to draw, in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overlay {
    pub bbox: CornerBox,
    pub color: Rgb<u8>,
}

/// Draws a verdict banner, then proposal outlines, then detection outlines
/// onto a copy of `image`. The source image is left unchanged.
pub fn render_annotations(
    image: &ImageRef,
    proposals: &[Overlay],
    detections: &[CornerBox],
    verdict: ClassLabel,
) -> ImageRef {
    let mut canvas = image.pixels().clone();
    let banner = match verdict {
        ClassLabel::Smoker => SMOKER_BANNER,
        ClassLabel::NonSmoker => NON_SMOKER_BANNER,
    };
    let banner_h = BANNER_HEIGHT.min(canvas.height());
    for y in 0..banner_h {
        for x in 0..canvas.width() {
            canvas.put_pixel(x, y, banner);
        }
    }
    for p in proposals {
        draw_outline(&mut canvas, p.bbox, p.color);
    }
    for d in detections {
        draw_outline(&mut canvas, *d, DETECTION_COLOR);
    }
    ImageRef {
        id: image.id.clone(),
        extent: image.extent,
        pixels: Arc::new(canvas),
    }
}

/// Pixels covered by a [`STROKE`]-wide outline drawn just inside the
/// rasterized box. Returns nothing when the box misses the canvas.
pub fn outline_pixels(extent: ImageExtent, bbox: CornerBox) -> Vec<(u32, u32)> {
    let Ok(clipped) = bbox.clip_to(extent) else {
        return Vec::new();
    };
    let r = clipped.rasterize();
    let mut out = Vec::new();
    for y in r.y..r.y + r.height {
        for x in r.x..r.x + r.width {
            let dx = (x - r.x).min(r.x + r.width - 1 - x);
            let dy = (y - r.y).min(r.y + r.height - 1 - y);
            if dx < STROKE || dy < STROKE {
                out.push((x, y));
            }
        }
    }
    out
}

fn draw_outline(canvas: &mut RgbImage, bbox: CornerBox, color: Rgb<u8>) {
    let extent = match ImageExtent::new(canvas.width(), canvas.height()) {
        Ok(e) => e,
        Err(_) => return,
    };
    for (x, y) in outline_pixels(extent, bbox) {
        canvas.put_pixel(x, y, color);
    }
}
