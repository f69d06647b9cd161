//! Orthographic depth maps: bilinear splatting, median filtering,
//! normalization, resizing and 16-bit PGM export.
//!
//! A point `(x, y, z)` lands at the continuous pixel
//! `(u, v) = (s·x + W/2, −s·y + H/2)` with `s = size / r`; the image y-axis
//! points down so faces render upright. Pixels that receive no contribution
//! stay invalid (depth 0) rather than being hole-filled.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pointcloud::PointCloud;

#[derive(Debug, Error)]
pub enum DepthMapError {
    #[error("invalid render parameters: {0}")]
    InvalidParams(String),
    #[error("no point projects onto the {0}×{0} canvas")]
    EmptyRender(usize),
    #[error("median kernel must be odd and ≥ 3, got {0}")]
    InvalidKernel(usize),
    #[error("depth map has no valid pixels")]
    NoValidPixels,
    #[error("map is not normalized: pixel ({x}, {y}) holds {value}")]
    NotNormalized { x: usize, y: usize, value: f64 },
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("PGM: {0}")]
    Pgm(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Row-major grid of depths with a validity mask. Invalid pixels hold 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    depth: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    /// An all-invalid map.
    pub fn empty(width: usize, height: usize) -> Result<Self, DepthMapError> {
        if width == 0 || height == 0 {
            return Err(DepthMapError::InvalidMap("zero-sized map".into()));
        }
        Ok(Self {
            width,
            height,
            depth: vec![0.0; width * height],
            valid: vec![false; width * height],
        })
    }

    pub fn from_parts(
        width: usize,
        height: usize,
        depth: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self, DepthMapError> {
        if width == 0 || height == 0 {
            return Err(DepthMapError::InvalidMap("zero-sized map".into()));
        }
        if depth.len() != width * height || valid.len() != width * height {
            return Err(DepthMapError::InvalidMap(format!(
                "expected {} pixels, got {} depths and {} flags",
                width * height,
                depth.len(),
                valid.len()
            )));
        }
        for (i, (&d, &ok)) in depth.iter().zip(&valid).enumerate() {
            if (ok && !d.is_finite()) || (!ok && d != 0.0) {
                return Err(DepthMapError::InvalidMap(format!(
                    "pixel {i}: depth {d}, valid {ok}"
                )));
            }
        }
        Ok(Self {
            width,
            height,
            depth,
            valid,
        })
    }

    /// A fully valid map.
    pub fn from_values(
        width: usize,
        height: usize,
        depth: Vec<f64>,
    ) -> Result<Self, DepthMapError> {
        let n = depth.len();
        Self::from_parts(width, height, depth, vec![true; n])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.depth[y * self.width + x]
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Marks a pixel invalid and zeroes it.
    pub fn invalidate(&mut self, x: usize, y: usize) {
        let i = y * self.width + x;
        self.depth[i] = 0.0;
        self.valid[i] = false;
    }

    fn valid_range(&self) -> Option<(f64, f64)> {
        self.depth
            .iter()
            .zip(&self.valid)
            .filter(|(_, &ok)| ok)
            .fold(None, |acc, (&d, _)| match acc {
                None => Some((d, d)),
                Some((lo, hi)) => Some((lo.min(d), hi.max(d))),
            })
    }
}

/// Rendering and post-processing settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderParams {
    /// Crop radius r in millimeters; the projection scale is `output_size / r`.
    pub crop_radius: f64,
    /// Side of the rendered map in pixels.
    pub output_size: usize,
    /// Side of the map handed to the embedding backend.
    pub embed_size: usize,
    /// Median filter kernel side (odd).
    pub median_kernel: usize,
    /// Fixed `[near, far]` depth window in mm; per-image min-max when absent.
    pub depth_window: Option<[f64; 2]>,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            crop_radius: 100.0,
            output_size: 200,
            embed_size: 224,
            median_kernel: 3,
            depth_window: None,
        }
    }
}

impl RenderParams {
    pub fn validate(&self) -> Result<(), DepthMapError> {
        if !(self.crop_radius > 0.0) || !self.crop_radius.is_finite() {
            return Err(DepthMapError::InvalidParams(format!(
                "crop_radius must be positive, got {}",
                self.crop_radius
            )));
        }
        if self.output_size < 2 || self.embed_size < 2 {
            return Err(DepthMapError::InvalidParams("map sizes must be ≥ 2".into()));
        }
        if self.median_kernel < 3 || self.median_kernel % 2 == 0 {
            return Err(DepthMapError::InvalidKernel(self.median_kernel));
        }
        if let Some([lo, hi]) = self.depth_window {
            if !(lo < hi) {
                return Err(DepthMapError::InvalidParams(format!(
                    "depth window [{lo}, {hi}] is empty"
                )));
            }
        }
        Ok(())
    }

    pub fn scale(&self) -> f64 {
        self.output_size as f64 / self.crop_radius
    }
}

/// The four bilinear contributions `(px, py, weight)` of a continuous pixel
/// position `(u, v)` with `u, v ≥ 0`.
pub fn splat_weights(u: f64, v: f64) -> [(usize, usize, f64); 4] {
    let (u0, v0) = (u.floor(), v.floor());
    let (fu, fv) = (u - u0, v - v0);
    let (x, y) = (u0 as usize, v0 as usize);
    [
        (x, y, (1.0 - fu) * (1.0 - fv)),
        (x + 1, y, fu * (1.0 - fv)),
        (x, y + 1, (1.0 - fu) * fv),
        (x + 1, y + 1, fu * fv),
    ]
}

/// Weighted-mean bilinear splatting of `z` onto an `output_size²` canvas.
///
/// Points are accumulated in cloud order; points projecting outside
/// `[0, size−1]²` are dropped.
pub fn render_depth(cloud: &PointCloud, params: &RenderParams) -> Result<DepthMap, DepthMapError> {
    params.validate()?;
    let size = params.output_size;
    let s = params.scale();
    let half = size as f64 / 2.0;
    let limit = (size - 1) as f64;
    let mut wsum = vec![0.0f64; size * size];
    let mut zsum = vec![0.0f64; size * size];
    for p in cloud.points() {
        let u = s * p.x + half;
        let v = -s * p.y + half;
        if !(0.0..=limit).contains(&u) || !(0.0..=limit).contains(&v) {
            continue;
        }
        for (x, y, w) in splat_weights(u, v) {
            if w > 0.0 && x < size && y < size {
                let i = y * size + x;
                wsum[i] += w;
                zsum[i] += w * p.z;
            }
        }
    }
    let valid: Vec<bool> = wsum.iter().map(|&w| w > 0.0).collect();
    if !valid.iter().any(|&v| v) {
        return Err(DepthMapError::EmptyRender(size));
    }
    let depth = zsum
        .iter()
        .zip(&wsum)
        .map(|(&z, &w)| if w > 0.0 { z / w } else { 0.0 })
        .collect();
    Ok(DepthMap {
        width: size,
        height: size,
        depth,
        valid,
    })
}

/// Median of the valid pixels in each `kernel × kernel` window (clipped at
/// the border), applied to valid pixels only. With an even number of valid
/// neighbors the lower median is taken, so outputs are always input values.
pub fn median_filter(map: &DepthMap, kernel: usize) -> Result<DepthMap, DepthMapError> {
    if kernel < 3 || kernel % 2 == 0 {
        return Err(DepthMapError::InvalidKernel(kernel));
    }
    let r = kernel / 2;
    let (w, h) = (map.width, map.height);
    let mut out = map.clone();
    let mut window = Vec::with_capacity(kernel * kernel);
    for y in 0..h {
        for x in 0..w {
            if !map.is_valid(x, y) {
                continue;
            }
            window.clear();
            for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
                for xx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                    if map.is_valid(xx, yy) {
                        window.push(map.get(xx, yy));
                    }
                }
            }
            let mid = (window.len() - 1) / 2;
            let (_, m, _) = window.select_nth_unstable_by(mid, f64::total_cmp);
            out.depth[y * w + x] = *m;
        }
    }
    Ok(out)
}

/// Per-image min-max stretch of valid pixels to `[0, 255]`; a constant map
/// becomes 128.
pub fn normalize(map: &DepthMap) -> Result<DepthMap, DepthMapError> {
    let (lo, hi) = map.valid_range().ok_or(DepthMapError::NoValidPixels)?;
    Ok(stretch(map, lo, hi, false))
}

/// Stretch of a fixed `[lo, hi]` depth window to `[0, 255]`, clamping values
/// outside it. Comparable across images.
pub fn normalize_window(map: &DepthMap, lo: f64, hi: f64) -> Result<DepthMap, DepthMapError> {
    if !(lo < hi) {
        return Err(DepthMapError::InvalidParams(format!(
            "depth window [{lo}, {hi}] is empty"
        )));
    }
    if map.valid_count() == 0 {
        return Err(DepthMapError::NoValidPixels);
    }
    Ok(stretch(map, lo, hi, true))
}

fn stretch(map: &DepthMap, lo: f64, hi: f64, clamp: bool) -> DepthMap {
    let mut out = map.clone();
    if hi == lo {
        for (d, &ok) in out.depth.iter_mut().zip(&map.valid) {
            if ok {
                *d = 128.0;
            }
        }
        return out;
    }
    // the ends map to exactly 0 and 255, so `gain` is exactly 1 on a second pass
    let gain = 255.0 / (hi - lo);
    for (d, &ok) in out.depth.iter_mut().zip(&map.valid) {
        if ok {
            let v = if clamp { d.clamp(lo, hi) } else { *d };
            *d = if v == hi {
                255.0
            } else {
                ((v - lo) * gain).clamp(0.0, 255.0)
            };
        }
    }
    out
}

/// Square bilinear resize; see [`resize_to`].
pub fn resize(map: &DepthMap, target: usize) -> Result<DepthMap, DepthMapError> {
    resize_to(map, target, target)
}

/// Align-corners bilinear resize. Only valid source pixels contribute (their
/// weights renormalized); an output pixel is valid when any contributing
/// source pixel is.
pub fn resize_to(map: &DepthMap, width: usize, height: usize) -> Result<DepthMap, DepthMapError> {
    if width < 2 || height < 2 {
        return Err(DepthMapError::InvalidParams(format!(
            "resize target {width}×{height} is smaller than 2×2"
        )));
    }
    let ratio = |n_in: usize, n_out: usize| {
        if n_in == 1 {
            0.0
        } else {
            (n_in - 1) as f64 / (n_out - 1) as f64
        }
    };
    let (rx, ry) = (ratio(map.width, width), ratio(map.height, height));
    let mut depth = vec![0.0; width * height];
    let mut valid = vec![false; width * height];
    for oy in 0..height {
        let sy = oy as f64 * ry;
        let y0 = (sy.floor() as usize).min(map.height - 1);
        let fy = sy - y0 as f64;
        for ox in 0..width {
            let sx = ox as f64 * rx;
            let x0 = (sx.floor() as usize).min(map.width - 1);
            let fx = sx - x0 as f64;
            let taps = [
                (x0, y0, (1.0 - fx) * (1.0 - fy)),
                (x0 + 1, y0, fx * (1.0 - fy)),
                (x0, y0 + 1, (1.0 - fx) * fy),
                (x0 + 1, y0 + 1, fx * fy),
            ];
            let mut wsum = 0.0;
            let mut vsum = 0.0;
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for (x, y, w) in taps {
                if w > 0.0 && x < map.width && y < map.height && map.is_valid(x, y) {
                    let v = map.get(x, y);
                    wsum += w;
                    vsum += w * v;
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            if wsum > 0.0 {
                depth[oy * width + ox] = (vsum / wsum).clamp(lo, hi);
                valid[oy * width + ox] = true;
            }
        }
    }
    Ok(DepthMap {
        width,
        height,
        depth,
        valid,
    })
}

/// Full render chain: splat, median filter, normalize, resize to `embed_size`.
pub fn render_face(cloud: &PointCloud, params: &RenderParams) -> Result<DepthMap, DepthMapError> {
    let raw = render_depth(cloud, params)?;
    let filtered = median_filter(&raw, params.median_kernel)?;
    let normalized = match params.depth_window {
        Some([lo, hi]) => normalize_window(&filtered, lo, hi)?,
        None => normalize(&filtered)?,
    };
    resize(&normalized, params.embed_size)
}

/// 16-bit big-endian binary PGM (P5) with `value = round(depth · 257)`.
///
/// Fails unless every pixel lies in `[0, 255]`.
pub fn encode_pgm(map: &DepthMap) -> Result<Vec<u8>, DepthMapError> {
    let header = format!("P5\n{} {}\n65535\n", map.width, map.height);
    let mut out = Vec::with_capacity(header.len() + 2 * map.depth.len());
    out.extend_from_slice(header.as_bytes());
    for (i, &d) in map.depth.iter().enumerate() {
        if !(0.0..=255.0).contains(&d) {
            return Err(DepthMapError::NotNormalized {
                x: i % map.width,
                y: i / map.width,
                value: d,
            });
        }
        let q = (d * 257.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    Ok(out)
}

/// Inverse of [`encode_pgm`]. Nonzero pixels are marked valid.
pub fn decode_pgm(bytes: &[u8]) -> Result<DepthMap, DepthMapError> {
    let bad = |m: &str| DepthMapError::Pgm(m.to_owned());
    // header: magic, width, height, maxval separated by whitespace, then one whitespace byte
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("expected P5 magic"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 65535 {
        return Err(bad("expected 16-bit maxval 65535"));
    }
    let need = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(2))
        .ok_or_else(|| bad("dimensions overflow"))?;
    let body = bytes
        .get(pos..pos + need)
        .ok_or_else(|| bad("truncated pixel data"))?;
    let depth: Vec<f64> = body
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 257.0)
        .collect();
    let valid = depth.iter().map(|&d| d > 0.0).collect();
    DepthMap::from_parts(w, h, depth, valid)
}

pub fn export_pgm(map: &DepthMap, path: impl AsRef<Path>) -> Result<(), DepthMapError> {
    let path = path.as_ref();
    let bytes = encode_pgm(map)?;
    fs::write(path, bytes).map_err(|source| DepthMapError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn import_pgm(path: impl AsRef<Path>) -> Result<DepthMap, DepthMapError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| DepthMapError::Io {
        path: path.to_owned(),
        source,
    })?;
    decode_pgm(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(
            points
                .iter()
                .map(|p| Point3::new(p[0], p[1], p[2]))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_point_lands_on_integer_pixel() {
        let map = render_depth(&cloud(&[[10.0, 0.0, 30.0]]), &RenderParams::default()).unwrap();
        assert_eq!(map.valid_count(), 1);
        assert!(map.is_valid(120, 100));
        assert_eq!(map.get(120, 100), 30.0);
    }

    #[test]
    fn coincident_points_average() {
        let map = render_depth(
            &cloud(&[[0.0, 0.0, 10.0], [0.0, 0.0, 30.0]]),
            &RenderParams::default(),
        )
        .unwrap();
        assert_eq!(map.get(100, 100), 20.0);
    }

    #[test]
    fn half_integer_point_splits_evenly() {
        // x = 0.25 mm → u = 100.5; y = -0.25 → v = 100.5
        let pts = [[0.25, -0.25, 8.0], [0.0, 0.0, 4.0]];
        let map = render_depth(&cloud(&pts), &RenderParams::default()).unwrap();
        for (x, y, w) in splat_weights(100.5, 100.5) {
            assert_eq!(w, 0.25);
            assert!(map.is_valid(x, y));
        }
        // brute-force accumulation oracle
        let mut ws = std::collections::HashMap::new();
        for p in &pts {
            let (u, v) = (2.0 * p[0] + 100.0, -2.0 * p[1] + 100.0);
            for dx in 0..2usize {
                for dy in 0..2usize {
                    let (px, py) = (u.floor() as usize + dx, v.floor() as usize + dy);
                    let wx = 1.0 - (u - px as f64).abs();
                    let wy = 1.0 - (v - py as f64).abs();
                    let e = ws.entry((px, py)).or_insert((0.0, 0.0));
                    e.0 += wx * wy;
                    e.1 += wx * wy * p[2];
                }
            }
        }
        for ((x, y), (w, z)) in ws {
            if w > 0.0 {
                assert!((map.get(x, y) - z / w).abs() < 1e-12);
            }
        }
        assert_eq!(map.get(100, 100), (4.0 + 0.25 * 8.0) / 1.25);
    }

    #[test]
    fn outside_canvas_is_dropped() {
        let err = render_depth(&cloud(&[[500.0, 0.0, 1.0]]), &RenderParams::default()).unwrap_err();
        assert!(matches!(err, DepthMapError::EmptyRender(200)));
        // right edge exactly on the last pixel is kept
        let map = render_depth(&cloud(&[[49.5, 0.0, 1.0]]), &RenderParams::default()).unwrap();
        assert!(map.is_valid(199, 100));
    }

    #[test]
    fn weights_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let (u, v) = (rng.random_range(0.0..198.0), rng.random_range(0.0..198.0));
            let s: f64 = splat_weights(u, v).iter().map(|t| t.2).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shift_by_whole_pixels_shifts_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<[f64; 3]> = (0..400)
            .map(|_| {
                [
                    rng.random_range(-30.0..30.0),
                    rng.random_range(-30.0..30.0),
                    rng.random_range(-10.0..10.0),
                ]
            })
            .collect();
        let params = RenderParams::default();
        let k = 7;
        let shifted: Vec<[f64; 3]> = pts
            .iter()
            .map(|p| [p[0] + 0.5 * k as f64, p[1], p[2]])
            .collect();
        let a = render_depth(&cloud(&pts), &params).unwrap();
        let b = render_depth(&cloud(&shifted), &params).unwrap();
        for y in 0..200 {
            for x in 0..200 - k {
                assert_eq!(a.is_valid(x, y), b.is_valid(x + k, y));
                if a.is_valid(x, y) {
                    assert!((a.get(x, y) - b.get(x + k, y)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn render_is_bit_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<[f64; 3]> = (0..2000)
            .map(|_| {
                [
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                    rng.random(),
                ]
            })
            .collect();
        let c = cloud(&pts);
        let a = render_depth(&c, &RenderParams::default()).unwrap();
        let b = render_depth(&c, &RenderParams::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn median_removes_spike_and_keeps_constants() {
        let mut vals = vec![0.0; 25];
        vals[12] = 100.0;
        let map = DepthMap::from_values(5, 5, vals).unwrap();
        let out = median_filter(&map, 3).unwrap();
        assert!(out.depth().iter().all(|&d| d == 0.0));
        let flat = DepthMap::from_values(6, 4, vec![7.5; 24]).unwrap();
        assert_eq!(median_filter(&flat, 3).unwrap(), flat);
        assert!(matches!(
            median_filter(&flat, 4),
            Err(DepthMapError::InvalidKernel(4))
        ));
    }

    #[test]
    fn median_matches_sorting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 10;
        let valid: Vec<bool> = (0..n * n).map(|_| rng.random_bool(0.8)).collect();
        let depth: Vec<f64> = valid
            .iter()
            .map(|&ok| {
                if ok {
                    rng.random_range(0.0..100.0)
                } else {
                    0.0
                }
            })
            .collect();
        let map = DepthMap::from_parts(n, n, depth, valid).unwrap();
        for kernel in [3, 5] {
            let out = median_filter(&map, kernel).unwrap();
            let r = kernel as isize / 2;
            for y in 0..n as isize {
                for x in 0..n as isize {
                    let (ux, uy) = (x as usize, y as usize);
                    if !map.is_valid(ux, uy) {
                        assert_eq!(out.get(ux, uy), 0.0);
                        assert!(!out.is_valid(ux, uy));
                        continue;
                    }
                    let mut win = Vec::new();
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (xx, yy) = (x + dx, y + dy);
                            if (0..n as isize).contains(&xx)
                                && (0..n as isize).contains(&yy)
                                && map.is_valid(xx as usize, yy as usize)
                            {
                                win.push(map.get(xx as usize, yy as usize));
                            }
                        }
                    }
                    win.sort_by(f64::total_cmp);
                    assert_eq!(out.get(ux, uy), win[(win.len() - 1) / 2]);
                }
            }
        }
    }

    #[test]
    fn normalize_stretches_and_handles_constant() {
        let map = DepthMap::from_parts(
            4,
            1,
            vec![10.0, 20.0, 0.0, 30.0],
            vec![true, true, false, true],
        )
        .unwrap();
        let n = normalize(&map).unwrap();
        assert_eq!(n.depth(), &[0.0, 127.5, 0.0, 255.0]);
        assert_eq!(normalize(&n).unwrap(), n);
        let flat = DepthMap::from_values(2, 2, vec![-3.0; 4]).unwrap();
        assert!(normalize(&flat)
            .unwrap()
            .depth()
            .iter()
            .all(|&d| d == 128.0));
        let none = DepthMap::empty(3, 3).unwrap();
        assert!(matches!(
            normalize(&none),
            Err(DepthMapError::NoValidPixels)
        ));
    }

    #[test]
    fn normalize_preserves_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let vals: Vec<f64> = (0..64).map(|_| rng.random_range(-40.0..0.0)).collect();
        let map = DepthMap::from_values(8, 8, vals.clone()).unwrap();
        let n = normalize(&map).unwrap();
        for i in 0..64 {
            for j in 0..64 {
                if vals[i] < vals[j] {
                    assert!(n.depth()[i] <= n.depth()[j]);
                }
            }
        }
    }

    #[test]
    fn window_normalization_clamps() {
        let map = DepthMap::from_values(3, 1, vec![-80.0, -40.0, 10.0]).unwrap();
        let n = normalize_window(&map, -60.0, 0.0).unwrap();
        assert_eq!(n.depth(), &[0.0, 85.0, 255.0]);
    }

    #[test]
    fn resize_cases() {
        let map = DepthMap::from_values(2, 2, vec![0.0, 0.0, 100.0, 100.0]).unwrap();
        let r = resize(&map, 3).unwrap();
        assert_eq!(&r.depth()[3..6], &[50.0, 50.0, 50.0]);
        assert_eq!(&r.depth()[0..3], &[0.0, 0.0, 0.0]);
        assert_eq!(&r.depth()[6..9], &[100.0, 100.0, 100.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let valid: Vec<bool> = (0..49).map(|_| rng.random_bool(0.7)).collect();
        let depth = valid
            .iter()
            .map(|&ok| if ok { rng.random() } else { 0.0 })
            .collect();
        let m = DepthMap::from_parts(7, 7, depth, valid).unwrap();
        assert_eq!(resize(&m, 7).unwrap(), m);

        let c = DepthMap::from_values(5, 5, vec![42.0; 25]).unwrap();
        assert!(resize(&c, 11)
            .unwrap()
            .depth()
            .iter()
            .all(|&d| (d - 42.0).abs() < 1e-12));
        assert!(resize(&c, 1).is_err());
    }

    #[test]
    fn pgm_round_trip_and_contract() {
        let map = DepthMap::from_values(1, 1, vec![255.0]).unwrap();
        let bytes = encode_pgm(&map).unwrap();
        assert_eq!(&bytes[bytes.len() - 2..], &[0xff, 0xff]);
        assert!(bytes.starts_with(b"P5\n1 1\n65535\n"));

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let vals: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..255.0)).collect();
        let m = DepthMap::from_values(6, 5, vals).unwrap();
        let back = decode_pgm(&encode_pgm(&m).unwrap()).unwrap();
        for (a, b) in m.depth().iter().zip(back.depth()) {
            assert!((a - b).abs() <= 0.5 / 257.0 + 1e-12);
        }

        let raw = DepthMap::from_values(2, 1, vec![10.0, 300.0]).unwrap();
        assert!(matches!(
            encode_pgm(&raw),
            Err(DepthMapError::NotNormalized { x: 1, y: 0, .. })
        ));
    }

    proptest::proptest! {
        #[test]
        fn normalize_is_idempotent(vals in proptest::collection::vec(-1e3f64..1e3, 2..64)) {
            let map = DepthMap::from_values(vals.len(), 1, vals).unwrap();
            let once = normalize(&map).unwrap();
            proptest::prop_assert_eq!(normalize(&once).unwrap(), once);
        }
    }

    proptest::proptest! {
        #[test]
        fn normalized_renders_stay_exportable(
            vals in proptest::collection::vec(-1e3f64..1e3, 16..64),
            target in 2usize..40,
        ) {
            let w = 4;
            let h = vals.len() / w;
            let map = DepthMap::from_values(w, h, vals[..w * h].to_vec()).unwrap();
            let r = resize(&normalize(&map).unwrap(), target).unwrap();
            proptest::prop_assert!(r.depth().iter().all(|d| (0.0..=255.0).contains(d)));
            proptest::prop_assert!(encode_pgm(&r).is_ok());
        }
    }
}
