//! Composite images of a registration: the photograph's teeth region
//! against the projected mesh silhouette.

use image::{Rgb, RgbImage};

use crate::camera::{CameraParams, IntrinsicConventions};
use crate::mesh::DentalMesh;
use crate::raster::{rasterize_silhouette, Bitmask};
use crate::regfit::SegmentationImage;

pub const OVERLAP: Rgb<u8> = Rgb([0, 200, 0]);
pub const PHOTO_CONTOUR: Rgb<u8> = Rgb([255, 0, 0]);
pub const MESH_CONTOUR: Rgb<u8> = Rgb([0, 0, 255]);

/// Draws the overlap of `photo_region` and `mesh_region` in green, the
/// photograph region's contour in red and the mesh silhouette's contour in
/// blue. Contour pixels inside the overlap stay green, so two identical
/// regions render as a solid green shape. Occluded pixels are darkened.
pub fn compose(
    photo_region: &Bitmask,
    mesh_region: &Bitmask,
    occlusion: Option<&Bitmask>,
    background: Option<&RgbImage>,
) -> RgbImage {
    let (w, h) = photo_region.dims();
    let mut img = match background {
        Some(bg) if bg.dimensions() == (w, h) => bg.clone(),
        _ => RgbImage::new(w, h),
    };
    if let Some(m) = occlusion {
        for (x, y, px) in img.enumerate_pixels_mut() {
            if m.get(x, y) {
                let Rgb([r, g, b]) = *px;
                *px = Rgb([r / 3 + 40, g / 3 + 40, b / 3 + 40]);
            }
        }
    }
    let overlap = photo_region.and(mesh_region);
    let red = photo_region.boundary().minus(mesh_region);
    let blue = mesh_region.boundary().minus(photo_region);
    for y in 0..h {
        for x in 0..w {
            if overlap.get(x, y) {
                img.put_pixel(x, y, OVERLAP);
            } else if red.get(x, y) {
                img.put_pixel(x, y, PHOTO_CONTOUR);
            } else if blue.get(x, y) {
                img.put_pixel(x, y, MESH_CONTOUR);
            }
        }
    }
    img
}

/// Overlay of a segmentation and a mesh projected with `params`.
pub fn render_overlay(
    seg: &SegmentationImage,
    mesh: &DentalMesh,
    params: &CameraParams,
    ic: &IntrinsicConventions,
    photo: Option<&RgbImage>,
) -> RgbImage {
    let ic = ic.with_image_size(seg.width(), seg.height());
    let silhouette = rasterize_silhouette(mesh, params, &ic);
    compose(&seg.roi, &silhouette, Some(&seg.occlusion), photo)
}

/// Number of pixels of `img` with exactly the color `c`.
pub fn count_color(img: &RgbImage, c: Rgb<u8>) -> usize {
    img.pixels().filter(|p| **p == c).count()
}
