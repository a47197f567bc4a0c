//! Procedural two-domain street scenes.
//!
//! Every scene id gets one label layout (background, a road band, buildings,
//! lane markings and vehicles). The source image renders that layout with a
//! fixed palette and class textures; the target image renders the *same*
//! layout and then shifts its photometry (hue rotation, contrast, blur,
//! sensor noise). Geometry is therefore shared between domains and only
//! appearance differs.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::rng::{self, Rng};
use crate::{Error, Result};

pub const BACKGROUND: u8 = 0;
pub const ROAD: u8 = 1;
pub const BUILDING: u8 = 2;
pub const VEHICLE: u8 = 3;
pub const MARKING: u8 = 4;

/// Largest class count the scene grammar can populate.
pub const MAX_CLASSES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct StyleShift {
    /// Hue rotation as a fraction of the colour wheel.
    pub hue_shift: f64,
    pub noise_sigma: f64,
    pub blur_sigma: f64,
    pub contrast_scale: f64,
}

impl Default for StyleShift {
    fn default() -> Self {
        StyleShift { hue_shift: 0.15, noise_sigma: 0.05, blur_sigma: 0.8, contrast_scale: 1.2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct DatasetSpec {
    pub num_classes: usize,
    /// `(height, width)`.
    pub resolution: (usize, usize),
    pub num_images_per_domain: usize,
    pub style_shift: StyleShift,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            num_classes: 5,
            resolution: (64, 64),
            num_images_per_domain: 200,
            style_shift: StyleShift::default(),
            seed: 7,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::InvalidSpec(m));
        if self.num_classes < 2 || self.num_classes > MAX_CLASSES {
            return bad(format!("num_classes must be in 2..={MAX_CLASSES}, got {}", self.num_classes));
        }
        let (h, w) = self.resolution;
        if h < 16 || w < 16 {
            return bad(format!("resolution {h}x{w} is below the 16x16 minimum"));
        }
        if self.num_images_per_domain == 0 {
            return bad("num_images_per_domain must be positive".into());
        }
        let s = &self.style_shift;
        if !(-0.5..=0.5).contains(&s.hue_shift) {
            return bad(format!("hue_shift {} outside [-0.5, 0.5]", s.hue_shift));
        }
        if !(s.noise_sigma >= 0.0) || !(s.blur_sigma >= 0.0) || !(s.contrast_scale > 0.0) {
            return bad("noise_sigma and blur_sigma must be >= 0 and contrast_scale > 0".into());
        }
        Ok(())
    }
}

/// One rendered layout in both domains. Images are `[3, H, W]` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub label: Vec<u8>,
    pub source: Vec<f32>,
    pub target: Vec<f32>,
}

const PALETTE: [[f64; 3]; MAX_CLASSES] = [
    [0.36, 0.62, 0.30], // background: vegetation
    [0.30, 0.30, 0.33], // road
    [0.66, 0.36, 0.30], // building
    [0.20, 0.30, 0.78], // vehicle
    [0.95, 0.93, 0.80], // marking
];

/// Renders scene `index` of `spec`. Pure in `(spec, index)`.
pub fn render_scene(spec: &DatasetSpec, index: usize) -> Result<Scene> {
    spec.validate()?;
    let (h, w) = spec.resolution;
    let mut layout_rng = rng::stream(spec.seed, (rng::streams::SCENE << 32) + 4 * index as u64);
    let label = layout(&mut layout_rng, h, w, spec.num_classes);
    let mut texture_rng = rng::stream(spec.seed, (rng::streams::SCENE << 32) + 4 * index as u64 + 1);
    let source = render_source(&mut texture_rng, &label, h, w);
    let mut noise_rng = rng::stream(spec.seed, (rng::streams::SCENE << 32) + 4 * index as u64 + 2);
    let target = shift_style(&mut noise_rng, &source, h, w, &spec.style_shift);
    Ok(Scene {
        label,
        source: source.iter().map(|v| *v as f32).collect(),
        target: target.iter().map(|v| *v as f32).collect(),
    })
}

fn layout(r: &mut Rng, h: usize, w: usize, num_classes: usize) -> Vec<u8> {
    let (hf, wf) = (h as f64, w as f64);
    let mut label = vec![BACKGROUND; h * w];
    let paint = |label: &mut [u8], y: usize, x: usize, class: u8| {
        // fold unused kinds into the available classes
        label[y * w + x] = if (class as usize) < num_classes { class } else { class % num_classes as u8 };
    };

    // road band with a slanted upper edge
    let top = rng::range(r, 0.45, 0.6) * hf;
    let slope = rng::range(r, -0.15, 0.15);
    let bottom = rng::range(r, 0.85, 1.0) * hf;
    let road_top = |x: usize| top + slope * (x as f64 - wf / 2.0);
    for y in 0..h {
        for x in 0..w {
            if (y as f64) >= road_top(x) && (y as f64) < bottom {
                paint(&mut label, y, x, ROAD);
            }
        }
    }

    // buildings standing on the road edge
    let n_buildings = rng::int_range(r, 2, 4);
    for _ in 0..n_buildings {
        let bw = rng::range(r, 0.12, 0.3) * wf;
        let bh = rng::range(r, 0.15, 0.4) * hf;
        let x0 = rng::range(r, 0.0, wf - bw);
        let base = road_top((x0 + bw / 2.0) as usize) + rng::range(r, -2.0, 1.0);
        let y0 = (base - bh).max(1.0);
        for y in y0 as usize..(base.max(0.0) as usize).min(h) {
            for x in x0 as usize..((x0 + bw) as usize).min(w) {
                paint(&mut label, y, x, BUILDING);
            }
        }
    }

    // dashed lane marking through the middle of the road
    let lane_y = (road_top(w / 2) + bottom) / 2.0;
    let thick = if h >= 48 { 2 } else { 1 };
    let dash = rng::range(r, 6.0, 10.0);
    let gap = rng::range(r, 4.0, 7.0);
    let phase = rng::range(r, 0.0, dash + gap);
    for x in 0..w {
        if ((x as f64 + phase) % (dash + gap)) < dash {
            let yc = lane_y + slope * 0.5 * (x as f64 - wf / 2.0);
            for t in 0..thick {
                let y = yc as isize + t;
                if y >= 0 && (y as usize) < h && label[y as usize * w + x] == ROAD {
                    paint(&mut label, y as usize, x, MARKING);
                }
            }
        }
    }

    // vehicles on the road
    let n_vehicles = rng::int_range(r, 1, 3);
    for _ in 0..n_vehicles {
        let rad = rng::range(r, 0.05, 0.11) * hf;
        let cx = rng::range(r, rad, wf - rad);
        let lo = road_top(cx as usize) + rad * 0.5;
        let hi = (bottom - rad * 0.5).max(lo + 1.0);
        let cy = rng::range(r, lo, hi);
        for y in 0..h {
            for x in 0..w {
                let dy = y as f64 + 0.5 - cy;
                let dx = x as f64 + 0.5 - cx;
                if dx * dx + dy * dy <= rad * rad {
                    paint(&mut label, y, x, VEHICLE);
                }
            }
        }
    }
    label
}

fn render_source(r: &mut Rng, label: &[u8], h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut jitter = [[0.0f64; 3]; MAX_CLASSES];
    for class in jitter.iter_mut() {
        let shade = rng::range(r, -0.06, 0.06);
        for v in class.iter_mut() {
            *v = shade + rng::range(r, -0.04, 0.04);
        }
    }
    let mut img = vec![0.0; 3 * hw];
    for y in 0..h {
        for x in 0..w {
            let class = label[y * w + x] as usize;
            let base = PALETTE[class.min(MAX_CLASSES - 1)];
            let texture = match class as u8 {
                BACKGROUND => 0.08 * (y as f64 / h as f64 - 0.5) + 0.03 * rng::normal(r),
                ROAD => 0.025 * rng::normal(r),
                // window grid
                BUILDING => {
                    if x % 4 != 0 && y % 5 != 0 && (x / 4 + y / 5) % 2 == 0 {
                        0.12
                    } else {
                        -0.02
                    }
                }
                VEHICLE => 0.01 * rng::normal(r),
                _ => 0.0,
            };
            for c in 0..3 {
                img[c * hw + y * w + x] = (base[c] + jitter[class.min(MAX_CLASSES - 1)][c] + texture).clamp(0.0, 1.0);
            }
        }
    }
    img
}

fn shift_style(r: &mut Rng, src: &[f64], h: usize, w: usize, s: &StyleShift) -> Vec<f64> {
    let hw = h * w;
    let mut img = src.to_vec();
    for p in 0..hw {
        let (hh, ss, vv) = rgb_to_hsv(img[p], img[hw + p], img[2 * hw + p]);
        let mut hue = hh + s.hue_shift;
        hue -= libm::floor(hue);
        let (rr, gg, bb) = hsv_to_rgb(hue, ss, vv);
        img[p] = rr;
        img[hw + p] = gg;
        img[2 * hw + p] = bb;
    }
    for v in &mut img {
        *v = ((*v - 0.5) * s.contrast_scale + 0.5).clamp(0.0, 1.0);
    }
    if s.blur_sigma > 0.0 {
        for c in 0..3 {
            let blurred = gaussian_blur(&img[c * hw..(c + 1) * hw], h, w, s.blur_sigma);
            img[c * hw..(c + 1) * hw].copy_from_slice(&blurred);
        }
    }
    if s.noise_sigma > 0.0 {
        for v in &mut img {
            *v = (*v + s.noise_sigma * rng::normal(r)).clamp(0.0, 1.0);
        }
    }
    img
}

fn gaussian_blur(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = libm::ceil(3.0 * sigma) as isize;
    let taps: Vec<f64> = (-radius..=radius).map(|d| libm::exp(-(d * d) as f64 / (2.0 * sigma * sigma))).collect();
    let norm: f64 = taps.iter().sum();
    let clampi = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, k) in taps.iter().enumerate() {
                acc += k * plane[y * w + clampi(x as isize + t as isize - radius, w)];
            }
            tmp[y * w + x] = acc / norm;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, k) in taps.iter().enumerate() {
                acc += k * tmp[clampi(y as isize + t as isize - radius, h) * w + x];
            }
            out[y * w + x] = acc / norm;
        }
    }
    out
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        let t = (g - b) / d;
        (if t < 0.0 { t + 6.0 } else { t }) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h * 6.0;
    let i = libm::floor(h6);
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match (i as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Binary boundary map of a label image: a pixel is on a boundary iff some
/// pixel within Chebyshev distance `thickness` carries a different class.
///
/// Computed as "window minimum differs from window maximum" with separable
/// running extrema, which is invariant to relabelling classes.
pub fn labels_to_boundary(label: &[u8], h: usize, w: usize, thickness: usize) -> Result<Vec<u8>> {
    if label.len() != h * w {
        return Err(Error::shape("labels_to_boundary", format!("{} labels for {h}x{w}", label.len())));
    }
    if thickness == 0 {
        return Err(Error::arg("labels_to_boundary", "thickness must be at least 1"));
    }
    let t = thickness as isize;
    let window = |src: &[u8], horizontal: bool, pick: fn(u8, u8) -> u8| -> Vec<u8> {
        let mut out = vec![0u8; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = src[y * w + x];
                for d in -t..=t {
                    let (yy, xx) = if horizontal { (y as isize, x as isize + d) } else { (y as isize + d, x as isize) };
                    if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                        acc = pick(acc, src[yy as usize * w + xx as usize]);
                    }
                }
                out[y * w + x] = acc;
            }
        }
        out
    };
    let lo = window(&window(label, true, u8::min), false, u8::min);
    let hi = window(&window(label, true, u8::max), false, u8::max);
    Ok(lo.iter().zip(&hi).map(|(a, b)| u8::from(a != b)).collect())
}
