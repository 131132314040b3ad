use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Image, ImageError};

const SIGMA0: f64 = 1.6;
const INPUT_BLUR: f64 = 0.5;
const SCALES_PER_OCTAVE: usize = 3;
const GAUSS_LEVELS: usize = SCALES_PER_OCTAVE + 3;
const BORDER: usize = 5;
const MAX_REFINE_STEPS: usize = 5;
const ORIENTATION_BINS: usize = 36;
const ORIENTATION_SIGMA_FACTOR: f64 = 1.5;
pub(crate) const MIN_SIDE: u32 = 32;

/// Keypoint in continuous pixel coordinates: pixel `(i, j)` covers
/// `[i, i + 1) x [j, j + 1)`, so its center is `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint2D {
    pub u: f64,
    pub v: f64,
    pub scale: f64,
    /// Dominant gradient direction in `[-pi, pi)`, measured from +u towards +v.
    pub orientation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Detect2DConfig {
    pub contrast_threshold: f64,
    pub edge_ratio: f64,
    /// Keep only the strongest keypoints.
    pub max_keypoints: Option<usize>,
}

impl Detect2DConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.contrast_threshold >= 0.0) {
            return Err("contrast_threshold must be non-negative".into());
        }
        if !(self.edge_ratio >= 1.0) {
            return Err("edge_ratio must be at least 1".into());
        }
        Ok(())
    }
}

impl Default for Detect2DConfig {
    fn default() -> Self {
        Self {
            contrast_threshold: 0.03,
            edge_ratio: 10.0,
            max_keypoints: None,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Level {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Level {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Value at index `(x, y)` with mirrored borders.
    #[inline]
    pub fn at_reflect(&self, x: isize, y: isize) -> f64 {
        self.at(
            reflect(x, self.width as isize),
            reflect(y, self.height as isize),
        )
    }

    /// Bilinear sample at fractional index coordinates.
    pub fn bilinear(&self, x: f64, y: f64) -> f64 {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as isize, y0 as isize);
        let a = self.at_reflect(x0, y0);
        let b = self.at_reflect(x0 + 1, y0);
        let c = self.at_reflect(x0, y0 + 1);
        let d = self.at_reflect(x0 + 1, y0 + 1);
        (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy
    }
}

#[inline]
fn reflect(i: isize, n: isize) -> usize {
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

fn blur(src: &Level, sigma: f64) -> Level {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = (src.width, src.height);
    let mut tmp = vec![0.0; w * h];
    tmp.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            *out = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * src.at_reflect(x as isize + j as isize - r, y as isize))
                .sum();
        }
    });
    let tmp = Level {
        width: w,
        height: h,
        data: tmp,
    };
    let mut data = vec![0.0; w * h];
    data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            *out = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * tmp.at_reflect(x as isize, y as isize + j as isize - r))
                .sum();
        }
    });
    Level {
        width: w,
        height: h,
        data,
    }
}

fn downsample(src: &Level) -> Level {
    let (w, h) = (src.width.div_ceil(2), src.height.div_ceil(2));
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            data.push(src.at(2 * x, 2 * y));
        }
    }
    Level {
        width: w,
        height: h,
        data,
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Octave {
    pub gauss: Vec<Level>,
    pub dog: Vec<Level>,
}

/// Gaussian and difference-of-Gaussian pyramid of one image.
#[derive(Debug, Clone)]
pub struct ScaleSpace {
    width: u32,
    height: u32,
    pub(crate) octaves: Vec<Octave>,
}

impl ScaleSpace {
    pub fn build(img: &Image) -> Result<Self, ImageError> {
        let (w, h) = (img.width(), img.height());
        if w.min(h) < MIN_SIDE {
            return Err(ImageError::ImageTooSmall {
                width: w,
                height: h,
            });
        }
        let n_octaves = (w.min(h) as f64).log2().floor() as usize - 3;
        let k = 2f64.powf(1.0 / SCALES_PER_OCTAVE as f64);
        let increments: Vec<f64> = (1..GAUSS_LEVELS)
            .map(|i| {
                let prev = SIGMA0 * k.powi(i as i32 - 1);
                let cur = prev * k;
                (cur * cur - prev * prev).sqrt()
            })
            .collect();
        let input = Level {
            width: w as usize,
            height: h as usize,
            data: img.pixels().iter().map(|&p| p as f64).collect(),
        };
        let mut base = blur(&input, (SIGMA0 * SIGMA0 - INPUT_BLUR * INPUT_BLUR).sqrt());
        let mut octaves = Vec::with_capacity(n_octaves);
        for o in 0..n_octaves {
            if o > 0 {
                let prev: &Octave = &octaves[o - 1];
                base = downsample(&prev.gauss[SCALES_PER_OCTAVE]);
            }
            let mut gauss = vec![base.clone()];
            for inc in &increments {
                let next = blur(gauss.last().unwrap(), *inc);
                gauss.push(next);
            }
            let dog = gauss
                .windows(2)
                .map(|pair| Level {
                    width: pair[0].width,
                    height: pair[0].height,
                    data: pair[1].data.iter().zip(&pair[0].data).map(|(a, b)| a - b).collect(),
                })
                .collect();
            octaves.push(Octave { gauss, dog });
        }
        Ok(Self {
            width: w,
            height: h,
            octaves,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn n_octaves(&self) -> usize {
        self.octaves.len()
    }

    /// Octave and Gaussian level closest to a keypoint scale.
    pub(crate) fn level_for_scale(&self, scale: f64) -> (usize, usize) {
        let l = (SCALES_PER_OCTAVE as f64 * (scale / SIGMA0).log2()).round() as isize;
        let o = l
            .div_euclid(SCALES_PER_OCTAVE as isize)
            .clamp(0, self.octaves.len() as isize - 1);
        let s = (l - o * SCALES_PER_OCTAVE as isize).clamp(0, GAUSS_LEVELS as isize - 1);
        (o as usize, s as usize)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Detection {
    pub keypoint: Keypoint2D,
    pub response: f64,
}

pub fn detect_keypoints_2d(img: &Image, cfg: &Detect2DConfig) -> Result<Vec<Keypoint2D>, ImageError> {
    let ss = ScaleSpace::build(img)?;
    Ok(detect_in(&ss, cfg).into_iter().map(|d| d.keypoint).collect())
}

/// DoG extrema of a prebuilt scale space, strongest first.
pub(crate) fn detect_in(ss: &ScaleSpace, cfg: &Detect2DConfig) -> Vec<Detection> {
    let mut found: Vec<(usize, usize, usize, usize, Detection)> = ss
        .octaves
        .par_iter()
        .enumerate()
        .flat_map_iter(|(o, oct)| {
            let mut out = Vec::new();
            let (w, h) = (oct.dog[0].width, oct.dog[0].height);
            if w <= 2 * BORDER || h <= 2 * BORDER {
                return out.into_iter();
            }
            for s in 1..=SCALES_PER_OCTAVE {
                for y in BORDER..h - BORDER {
                    for x in BORDER..w - BORDER {
                        let v = oct.dog[s].at(x, y);
                        if v.abs() <= 0.5 * cfg.contrast_threshold || !is_extremum(oct, s, x, y) {
                            continue;
                        }
                        if let Some((fx, fy, fs, det)) = refine(ss, o, x, y, s, cfg) {
                            out.push((o, fs, fy, fx, det));
                        }
                    }
                }
            }
            out.into_iter()
        })
        .collect();
    found.sort_by(|a, b| (a.0, a.1, a.2, a.3).cmp(&(b.0, b.1, b.2, b.3)));
    found.dedup_by(|a, b| (a.0, a.1, a.2, a.3) == (b.0, b.1, b.2, b.3));
    let mut dets: Vec<Detection> = found.into_iter().map(|f| f.4).collect();
    dets.sort_by(|a, b| {
        b.response
            .abs()
            .total_cmp(&a.response.abs())
            .then(a.keypoint.v.total_cmp(&b.keypoint.v))
            .then(a.keypoint.u.total_cmp(&b.keypoint.u))
            .then(a.keypoint.scale.total_cmp(&b.keypoint.scale))
    });
    if let Some(max) = cfg.max_keypoints {
        dets.truncate(max);
    }
    dets
}

fn is_extremum(oct: &Octave, s: usize, x: usize, y: usize) -> bool {
    let v = oct.dog[s].at(x, y);
    let mut is_max = true;
    let mut is_min = true;
    for ds in s - 1..=s + 1 {
        let level = &oct.dog[ds];
        for ny in y - 1..=y + 1 {
            for nx in x - 1..=x + 1 {
                if ds == s && nx == x && ny == y {
                    continue;
                }
                let n = level.at(nx, ny);
                is_max &= v > n;
                is_min &= v < n;
                if !is_max && !is_min {
                    return false;
                }
            }
        }
    }
    true
}

fn derivatives(oct: &Octave, s: usize, x: usize, y: usize) -> (Vector3<f64>, Matrix3<f64>) {
    let d = |ds: isize, dx: isize, dy: isize| {
        oct.dog[(s as isize + ds) as usize].at((x as isize + dx) as usize, (y as isize + dy) as usize)
    };
    let c = d(0, 0, 0);
    let g = Vector3::new(
        (d(0, 1, 0) - d(0, -1, 0)) / 2.0,
        (d(0, 0, 1) - d(0, 0, -1)) / 2.0,
        (d(1, 0, 0) - d(-1, 0, 0)) / 2.0,
    );
    let dxx = d(0, 1, 0) + d(0, -1, 0) - 2.0 * c;
    let dyy = d(0, 0, 1) + d(0, 0, -1) - 2.0 * c;
    let dss = d(1, 0, 0) + d(-1, 0, 0) - 2.0 * c;
    let dxy = (d(0, 1, 1) - d(0, -1, 1) - d(0, 1, -1) + d(0, -1, -1)) / 4.0;
    let dxs = (d(1, 1, 0) - d(1, -1, 0) - d(-1, 1, 0) + d(-1, -1, 0)) / 4.0;
    let dys = (d(1, 0, 1) - d(1, 0, -1) - d(-1, 0, 1) + d(-1, 0, -1)) / 4.0;
    let hess = Matrix3::new(dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss);
    (g, hess)
}

/// Quadratic interpolation of the extremum, contrast and edge tests, then
/// orientation. Returns the final integer sample location with the detection.
fn refine(
    ss: &ScaleSpace,
    o: usize,
    mut x: usize,
    mut y: usize,
    mut s: usize,
    cfg: &Detect2DConfig,
) -> Option<(usize, usize, usize, Detection)> {
    let oct = &ss.octaves[o];
    let (w, h) = (oct.dog[0].width, oct.dog[0].height);
    let mut converged = None;
    for _ in 0..MAX_REFINE_STEPS {
        let (g, hess) = derivatives(oct, s, x, y);
        let offset = -(hess.try_inverse()? * g);
        if offset.iter().any(|v| !v.is_finite()) {
            return None;
        }
        if offset.iter().all(|v| v.abs() < 0.5) {
            converged = Some((g, offset));
            break;
        }
        let nx = x as f64 + offset.x.round();
        let ny = y as f64 + offset.y.round();
        let ns = s as f64 + offset.z.round();
        if ns < 1.0
            || ns > SCALES_PER_OCTAVE as f64
            || nx < BORDER as f64
            || nx >= (w - BORDER) as f64
            || ny < BORDER as f64
            || ny >= (h - BORDER) as f64
        {
            return None;
        }
        (x, y, s) = (nx as usize, ny as usize, ns as usize);
    }
    let (g, offset) = converged?;
    let response = oct.dog[s].at(x, y) + 0.5 * g.dot(&offset);
    if response.abs() < cfg.contrast_threshold {
        return None;
    }
    let (_, hess) = derivatives(oct, s, x, y);
    let tr = hess[(0, 0)] + hess[(1, 1)];
    let det = hess[(0, 0)] * hess[(1, 1)] - hess[(0, 1)] * hess[(0, 1)];
    let r = cfg.edge_ratio;
    if det <= 0.0 || tr * tr * r >= (r + 1.0) * (r + 1.0) * det {
        return None;
    }
    let step = (1u64 << o) as f64;
    let u = (x as f64 + offset.x) * step + 0.5;
    let v = (y as f64 + offset.y) * step + 0.5;
    if !(0.0..ss.width as f64).contains(&u) || !(0.0..ss.height as f64).contains(&v) {
        return None;
    }
    let octave_sigma = SIGMA0 * 2f64.powf((s as f64 + offset.z) / SCALES_PER_OCTAVE as f64);
    let level = ((s as f64 + offset.z).round() as usize).min(GAUSS_LEVELS - 1);
    let orientation = dominant_orientation(&oct.gauss[level], x, y, octave_sigma);
    Some((
        x,
        y,
        s,
        Detection {
            keypoint: Keypoint2D {
                u,
                v,
                scale: octave_sigma * step,
                orientation,
            },
            response,
        },
    ))
}

/// Peak of a smoothed, Gaussian-weighted 36-bin gradient-direction histogram
/// around integer sample `(x, y)`, refined by a parabola through the peak bin.
pub(crate) fn dominant_orientation(level: &Level, x: usize, y: usize, sigma: f64) -> f64 {
    let weight_sigma = ORIENTATION_SIGMA_FACTOR * sigma;
    let radius = (3.0 * weight_sigma).round() as isize;
    let mut hist = [0.0f64; ORIENTATION_BINS];
    for j in -radius..=radius {
        for i in -radius..=radius {
            let (px, py) = (x as isize + i, y as isize + j);
            let gx = level.at_reflect(px + 1, py) - level.at_reflect(px - 1, py);
            let gy = level.at_reflect(px, py + 1) - level.at_reflect(px, py - 1);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let w = (-((i * i + j * j) as f64) / (2.0 * weight_sigma * weight_sigma)).exp();
            let pos = gy.atan2(gx).rem_euclid(2.0 * PI) / (2.0 * PI) * ORIENTATION_BINS as f64;
            let lo = pos.floor();
            let frac = pos - lo;
            let lo = lo as usize % ORIENTATION_BINS;
            hist[lo] += w * mag * (1.0 - frac);
            hist[(lo + 1) % ORIENTATION_BINS] += w * mag * frac;
        }
    }
    let n = ORIENTATION_BINS;
    let smoothed: Vec<f64> = (0..n)
        .map(|b| {
            (hist[(b + n - 2) % n] + hist[(b + 2) % n]) / 16.0
                + (hist[(b + n - 1) % n] + hist[(b + 1) % n]) * 4.0 / 16.0
                + hist[b] * 6.0 / 16.0
        })
        .collect();
    let mut best = 0;
    for b in 1..n {
        if smoothed[b] > smoothed[best] {
            best = b;
        }
    }
    let l = smoothed[(best + n - 1) % n];
    let c = smoothed[best];
    let r = smoothed[(best + 1) % n];
    let denom = l - 2.0 * c + r;
    let offset = if denom < 0.0 { 0.5 * (l - r) / denom } else { 0.0 };
    let angle = (best as f64 + offset) / n as f64 * 2.0 * PI;
    wrap_angle(angle)
}

pub(crate) fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}
