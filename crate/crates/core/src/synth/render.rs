use rayon::prelude::*;

use crate::cloud::CloudPoint;
use crate::geometry::CameraView;
use crate::image::Image;

const BAND_ROWS: usize = 16;

/// Rendered intensities with the z-buffer they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub image: Image,
    /// Per-pixel depth of the winning point, row-major; infinite where uncovered.
    pub depth: Vec<f64>,
    /// Per-pixel index of the winning point.
    pub owner: Vec<Option<u32>>,
}

impl RenderedView {
    pub fn coverage(&self) -> f64 {
        let covered = self.owner.iter().filter(|o| o.is_some()).count();
        covered as f64 / self.owner.len().max(1) as f64
    }

    pub fn depth_at(&self, x: u32, y: u32) -> f64 {
        self.depth[y as usize * self.image.width() as usize + x as usize]
    }
}

/// Point splatting with a z-buffer: every point in front of the camera
/// covers the pixels whose centers lie within `splat_radius_px` of its
/// projection; the nearest point wins a pixel and the lower index wins ties.
pub fn render_depth(points: &[CloudPoint], view: &CameraView, splat_radius_px: f64) -> RenderedView {
    let (w, h) = (view.width as usize, view.height as usize);
    let r = splat_radius_px.max(0.0);
    let r2 = r * r;
    let projected: Vec<Option<(f64, f64, f64)>> = points
        .par_iter()
        .map(|p| {
            let pr = view.project(&p.position).ok()?;
            (pr.depth > 0.0 && pr.u.is_finite() && pr.v.is_finite()).then_some((pr.u, pr.v, pr.depth))
        })
        .collect();
    let mut depth = vec![f64::INFINITY; w * h];
    let mut owner: Vec<Option<u32>> = vec![None; w * h];
    depth
        .par_chunks_mut(BAND_ROWS * w)
        .zip(owner.par_chunks_mut(BAND_ROWS * w))
        .enumerate()
        .for_each(|(band, (dchunk, ochunk))| {
            let y0 = band * BAND_ROWS;
            let y1 = y0 + dchunk.len() / w;
            for (idx, pr) in projected.iter().enumerate() {
                let Some((u, v, z)) = *pr else { continue };
                let ylo = ((v - r - 0.5).ceil().max(y0 as f64)) as usize;
                let yhi_f = (v + r - 0.5).floor().min(y1 as f64 - 1.0);
                let xlo = (u - r - 0.5).ceil().max(0.0) as usize;
                let xhi_f = (u + r - 0.5).floor().min(w as f64 - 1.0);
                if yhi_f < ylo as f64 || xhi_f < xlo as f64 {
                    continue;
                }
                for y in ylo..=yhi_f as usize {
                    let dy = y as f64 + 0.5 - v;
                    for x in xlo..=xhi_f as usize {
                        let dx = x as f64 + 0.5 - u;
                        if dx * dx + dy * dy > r2 {
                            continue;
                        }
                        let k = (y - y0) * w + x;
                        if z < dchunk[k] {
                            dchunk[k] = z;
                            ochunk[k] = Some(idx as u32);
                        }
                    }
                }
            }
        });
    let pixels = owner
        .iter()
        .map(|o| o.map_or(0.0, |i| points[i as usize].intensity as f32))
        .collect();
    let image = Image::new(view.width, view.height, pixels).expect("pixel count matches view size");
    RenderedView { image, depth, owner }
}

pub fn render_view(points: &[CloudPoint], view: &CameraView, splat_radius_px: f64) -> Image {
    render_depth(points, view, splat_radius_px).image
}
