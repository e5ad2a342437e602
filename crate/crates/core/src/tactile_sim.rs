//! Depth-map model of an elongated tactile finger.
//!
//! The skin is parameterized by arclength `s` (0 at the base, `length` at the
//! tip) and circumferential offset `u`. One camera sees the whole skin through
//! three piecewise-affine views (proximal, middle, distal), which stand in for
//! the mirror optics. Frames are indentation depth in mm per pixel.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::hand_model::Finger;

/// Penetrations below this count as no contact, mm.
pub const MIN_DEPTH: f64 = 1e-6;
/// PGM depth quantum, mm per count.
pub const PGM_MM_PER_COUNT: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TactileError {
    #[error("surface point (s={s}, u={u}) is off the skin")]
    OutOfBounds { s: f64, u: f64 },
    #[error("invalid optics: {0}")]
    InvalidOptics(String),
    #[error("invalid indenter: {0}")]
    InvalidIndenter(String),
    #[error("pgm: {0}")]
    Pgm(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkinGeometry {
    pub length: f64,
    pub width: f64,
    pub gel_thickness: f64,
}

impl Default for SkinGeometry {
    fn default() -> Self {
        Self {
            length: 85.0,
            width: 22.0,
            gel_thickness: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceCoord {
    pub s: f64,
    pub u: f64,
}

impl SurfaceCoord {
    pub fn new(s: f64, u: f64) -> Self {
        Self { s, u }
    }

    pub fn distance(&self, other: &SurfaceCoord) -> f64 {
        (self.s - other.s).hypot(self.u - other.u)
    }
}

/// Continuous image position; pixel `(i, j)` covers `[i, i+1) × [j, j+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pixel {
    pub x: f64,
    pub y: f64,
}

/// One view: `[x, y] = matrix · [s, u] + offset` for `s` in `[s_min, s_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineRegion {
    pub s_min: f64,
    pub s_max: f64,
    pub matrix: [[f64; 2]; 2],
    pub offset: [f64; 2],
}

impl AffineRegion {
    pub fn det(&self) -> f64 {
        let m = self.matrix;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn forward(&self, c: SurfaceCoord) -> Pixel {
        let m = self.matrix;
        Pixel {
            x: m[0][0] * c.s + m[0][1] * c.u + self.offset[0],
            y: m[1][0] * c.s + m[1][1] * c.u + self.offset[1],
        }
    }

    pub fn inverse(&self, p: Pixel) -> SurfaceCoord {
        let m = self.matrix;
        let det = self.det();
        let (dx, dy) = (p.x - self.offset[0], p.y - self.offset[1]);
        SurfaceCoord {
            s: (m[1][1] * dx - m[0][1] * dy) / det,
            u: (-m[1][0] * dx + m[0][0] * dy) / det,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticsMap {
    pub skin: SkinGeometry,
    pub image_width: usize,
    pub image_height: usize,
    pub regions: [AffineRegion; 3],
}

impl Default for OpticsMap {
    fn default() -> Self {
        Self::for_skin(SkinGeometry::default(), 320, 240).expect("default optics are valid")
    }
}

/// Relative magnification of the proximal, middle and distal views.
const REGION_GAIN: [f64; 3] = [4.0, 3.4, 3.0];
/// Vertical drift of each view across its interval, as a fraction of height.
const REGION_DRIFT: [f64; 3] = [0.035, 0.0, -0.035];

impl OpticsMap {
    /// Three-view layout that fills most of a `width × height` image.
    pub fn for_skin(skin: SkinGeometry, width: usize, height: usize) -> Result<Self, TactileError> {
        if !(skin.length > 0.0 && skin.width > 0.0 && skin.gel_thickness > 0.0) {
            return Err(TactileError::InvalidOptics("skin dimensions must be positive".into()));
        }
        let (w, h) = (width as f64, height as f64);
        let span = skin.length / 3.0;
        let gain_sum: f64 = REGION_GAIN.iter().sum();
        let px_per_gain = 0.92 * w / (span * gain_sum);
        let c = 0.70 * h / skin.width;

        let mut x0 = 0.04 * w;
        let mut y0 = (h - REGION_DRIFT[0] * h) / 2.0;
        let mut regions = [AffineRegion {
            s_min: 0.0,
            s_max: 0.0,
            matrix: [[0.0; 2]; 2],
            offset: [0.0; 2],
        }; 3];
        for k in 0..3 {
            let s_min = span * k as f64;
            let s_max = if k == 2 { skin.length } else { span * (k + 1) as f64 };
            let a = REGION_GAIN[k] * px_per_gain;
            let e = REGION_DRIFT[k] * h / span;
            regions[k] = AffineRegion {
                s_min,
                s_max,
                matrix: [[a, 0.0], [e, c]],
                offset: [x0 - a * s_min, y0 - e * s_min],
            };
            x0 += a * (s_max - s_min);
            y0 += e * (s_max - s_min);
        }
        let map = Self {
            skin,
            image_width: width,
            image_height: height,
            regions,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn from_json_str(s: &str) -> Result<Self, TactileError> {
        let map: Self = serde_json::from_str(s).map_err(|e| TactileError::InvalidOptics(e.to_string()))?;
        map.validate()?;
        Ok(map)
    }

    /// Partition, invertibility, continuity (≤ 1 px at boundaries) and
    /// coverage (every skin point lands in the image).
    pub fn validate(&self) -> Result<(), TactileError> {
        let bad = |m: String| Err(TactileError::InvalidOptics(m));
        let r = &self.regions;
        if r[0].s_min != 0.0 || r[2].s_max != self.skin.length {
            return bad("regions must start at s = 0 and end at the skin length".into());
        }
        for k in 0..3 {
            if !(r[k].s_max > r[k].s_min) {
                return bad(format!("region {k} has an empty interval"));
            }
            if k > 0 && r[k].s_min != r[k - 1].s_max {
                return bad(format!("regions {} and {k} do not share a boundary", k - 1));
            }
            if !(r[k].det().abs() > 1e-9) {
                return bad(format!("region {k} map is singular"));
            }
        }
        let half = self.skin.width / 2.0;
        for k in 1..3 {
            let s = r[k].s_min;
            for u in [-half, 0.0, half] {
                let a = r[k - 1].forward(SurfaceCoord::new(s, u));
                let b = r[k].forward(SurfaceCoord::new(s, u));
                if (a.x - b.x).hypot(a.y - b.y) > 1.0 {
                    return bad(format!("views {} and {k} disagree by more than 1 px at s = {s}", k - 1));
                }
            }
        }
        for region in r {
            for s in [region.s_min, region.s_max] {
                for u in [-half, half] {
                    let p = region.forward(SurfaceCoord::new(s, u));
                    if !self.pixel_in_image(p) {
                        return bad(format!("skin corner (s={s}, u={u}) maps outside the image"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn pixel_in_image(&self, p: Pixel) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x < self.image_width as f64 && p.y < self.image_height as f64
    }

    pub fn in_bounds(&self, c: SurfaceCoord) -> bool {
        let eps = 1e-9;
        c.s >= -eps
            && c.s <= self.skin.length + eps
            && c.u.abs() <= self.skin.width / 2.0 + eps
            && c.s.is_finite()
            && c.u.is_finite()
    }

    fn region_index(&self, s: f64) -> usize {
        self.regions
            .iter()
            .position(|r| s < r.s_max)
            .unwrap_or(self.regions.len() - 1)
    }

    pub fn region_for(&self, s: f64) -> &AffineRegion {
        &self.regions[self.region_index(s)]
    }

    pub fn surface_to_pixel(&self, c: SurfaceCoord) -> Result<Pixel, TactileError> {
        if !self.in_bounds(c) {
            return Err(TactileError::OutOfBounds { s: c.s, u: c.u });
        }
        Ok(self.region_for(c.s).forward(c))
    }

    /// Skin point seen at `p`, or `None` if no view covers that pixel.
    pub fn pixel_to_surface(&self, p: Pixel) -> Option<SurfaceCoord> {
        self.pixel_to_surface_with_region(p).map(|(c, _)| c)
    }

    fn pixel_to_surface_with_region(&self, p: Pixel) -> Option<(SurfaceCoord, usize)> {
        let half = self.skin.width / 2.0;
        let eps = 1e-9;
        self.regions.iter().enumerate().find_map(|(k, r)| {
            let c = r.inverse(p);
            let inside = c.s >= r.s_min - eps && c.s <= r.s_max + eps && c.u.abs() <= half + eps;
            inside.then_some((c, k))
        })
    }

    /// Skin area imaged by one pixel at `p`, mm².
    pub fn pixel_area(&self, p: Pixel) -> Option<f64> {
        self.pixel_to_surface_with_region(p)
            .map(|(_, k)| 1.0 / self.regions[k].det().abs())
    }
}

/// Rigid shape pressed into the skin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Indenter {
    Sphere { radius: f64 },
    /// Flat hexagonal punch (e.g. a screw head), flats parallel to `u`.
    Hexagon { across_flats: f64 },
    /// Cylinder lying across the finger, axis along `u`.
    Cylinder { radius: f64 },
    /// Flat rectangular face.
    Rect { half_s: f64, half_u: f64 },
}

impl Indenter {
    pub fn validate(&self) -> Result<(), TactileError> {
        let dims: &[f64] = match self {
            Indenter::Sphere { radius } | Indenter::Cylinder { radius } => &[*radius],
            Indenter::Hexagon { across_flats } => &[*across_flats],
            Indenter::Rect { half_s, half_u } => &[*half_s, *half_u],
        };
        if dims.iter().all(|d| *d > 0.0 && d.is_finite()) {
            Ok(())
        } else {
            Err(TactileError::InvalidIndenter(format!("{self:?} needs positive dimensions")))
        }
    }

    /// Indentation at offset `(ds, du)` from the center when the indenter
    /// is pressed `depth` mm into the skin.
    pub fn penetration(&self, ds: f64, du: f64, depth: f64) -> f64 {
        let h = match *self {
            Indenter::Sphere { radius } => {
                let rho2 = ds * ds + du * du;
                if rho2 >= radius * radius {
                    return 0.0;
                }
                depth - (radius - (radius * radius - rho2).sqrt())
            }
            Indenter::Cylinder { radius } => {
                if ds.abs() >= radius {
                    return 0.0;
                }
                depth - (radius - (radius * radius - ds * ds).sqrt())
            }
            Indenter::Hexagon { across_flats } => {
                let apothem = across_flats / 2.0;
                // Flats at ±apothem along s and on the two rotated axes.
                let (c, s) = (60f64.to_radians().cos(), 60f64.to_radians().sin());
                let inside = ds.abs() <= apothem
                    && (ds * c + du * s).abs() <= apothem
                    && (ds * c - du * s).abs() <= apothem;
                if inside {
                    depth
                } else {
                    0.0
                }
            }
            Indenter::Rect { half_s, half_u } => {
                if ds.abs() <= half_s && du.abs() <= half_u {
                    depth
                } else {
                    0.0
                }
            }
        };
        h.max(0.0)
    }

    /// Distance from the center beyond which penetration is always zero.
    pub fn reach(&self) -> f64 {
        match *self {
            Indenter::Sphere { radius } => radius,
            Indenter::Cylinder { .. } => f64::INFINITY,
            Indenter::Hexagon { across_flats } => across_flats / 3f64.sqrt(),
            Indenter::Rect { half_s, half_u } => half_s.hypot(half_u),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TactileFrame {
    pub finger: Finger,
    pub tick: u64,
    pub width: usize,
    pub height: usize,
    /// Row-major depth, mm.
    pub depth: Vec<f32>,
    /// Requested depth exceeded the gel and was clamped.
    pub clamped: bool,
}

impl TactileFrame {
    pub fn zeros(finger: Finger, tick: u64, width: usize, height: usize) -> Self {
        Self {
            finger,
            tick,
            width,
            height,
            depth: vec![0.0; width * height],
            clamped: false,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.depth[y * self.width + x]
    }

    pub fn max_depth(&self) -> f64 {
        self.depth.iter().fold(0.0f32, |m, &d| m.max(d)) as f64
    }

    pub fn nonzero_pixels(&self) -> usize {
        self.depth.iter().filter(|&&d| d > 0.0).count()
    }

    /// Write as binary 16-bit PGM, big-endian, depth in
    /// [`PGM_MM_PER_COUNT`] units.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(
            out,
            "P5\n# mm_per_count {PGM_MM_PER_COUNT}\n# finger {} tick {}\n{} {}\n65535\n",
            self.finger, self.tick, self.width, self.height
        )?;
        let mut bytes = Vec::with_capacity(self.depth.len() * 2);
        for &d in &self.depth {
            let counts = (d as f64 / PGM_MM_PER_COUNT).round().clamp(0.0, 65535.0) as u16;
            bytes.extend_from_slice(&counts.to_be_bytes());
        }
        out.write_all(&bytes)
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_pgm(&mut v).expect("writing to a Vec cannot fail");
        v
    }

    /// Parse a frame written by [`write_pgm`](Self::write_pgm).
    pub fn read_pgm<R: Read>(mut input: R) -> Result<Self, TactileError> {
        let err = |m: &str| TactileError::Pgm(m.to_string());
        let mut data = Vec::new();
        input.read_to_end(&mut data).map_err(|e| TactileError::Pgm(e.to_string()))?;
        let mut pos = 0;
        let mut tokens = Vec::new();
        let (mut finger, mut tick, mut mm_per_count) = (Finger::F1, 0u64, PGM_MM_PER_COUNT);
        while tokens.len() < 4 {
            while pos < data.len() && data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos >= data.len() {
                return Err(err("truncated header"));
            }
            if data[pos] == b'#' {
                let end = data[pos..].iter().position(|&b| b == b'\n').map_or(data.len(), |e| pos + e);
                let line = String::from_utf8_lossy(&data[pos + 1..end]).to_string();
                let words: Vec<&str> = line.split_whitespace().collect();
                match words.as_slice() {
                    ["mm_per_count", v] => mm_per_count = v.parse().map_err(|_| err("bad mm_per_count"))?,
                    ["finger", f, "tick", t] => {
                        finger = serde_json::from_str(&format!("\"{f}\"")).map_err(|_| err("bad finger"))?;
                        tick = t.parse().map_err(|_| err("bad tick"))?;
                    }
                    _ => {}
                }
                pos = end;
                continue;
            }
            let end = data[pos..]
                .iter()
                .position(|b| b.is_ascii_whitespace())
                .map_or(data.len(), |e| pos + e);
            tokens.push(String::from_utf8_lossy(&data[pos..end]).to_string());
            pos = end;
        }
        if tokens[0] != "P5" || tokens[3] != "65535" {
            return Err(err("expected a 16-bit P5 image"));
        }
        let width: usize = tokens[1].parse().map_err(|_| err("bad width"))?;
        let height: usize = tokens[2].parse().map_err(|_| err("bad height"))?;
        pos += 1;
        let body = data.get(pos..).ok_or_else(|| err("missing pixel data"))?;
        if body.len() != width * height * 2 {
            return Err(err("pixel data size does not match the header"));
        }
        let depth = body
            .chunks_exact(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f64 * mm_per_count) as f32)
            .collect();
        Ok(Self {
            finger,
            tick,
            width,
            height,
            depth,
            clamped: false,
        })
    }
}

/// Render one indenter pressed `depth` mm into the skin at `center`.
/// Depths above the gel thickness are clamped and flagged.
pub fn render_contact(
    indenter: &Indenter,
    center: SurfaceCoord,
    depth: f64,
    optics: &OpticsMap,
    finger: Finger,
    tick: u64,
) -> Result<TactileFrame, TactileError> {
    let mut frame = TactileFrame::zeros(finger, tick, optics.image_width, optics.image_height);
    add_contact(&mut frame, indenter, center, depth, optics)?;
    Ok(frame)
}

/// Press an indenter into an existing frame; overlapping contacts keep the
/// deeper value.
pub fn add_contact(
    frame: &mut TactileFrame,
    indenter: &Indenter,
    center: SurfaceCoord,
    depth: f64,
    optics: &OpticsMap,
) -> Result<(), TactileError> {
    if !optics.in_bounds(center) {
        return Err(TactileError::OutOfBounds {
            s: center.s,
            u: center.u,
        });
    }
    indenter.validate()?;
    if !(depth > MIN_DEPTH) {
        return Ok(());
    }
    let gel = optics.skin.gel_thickness;
    let depth = if depth > gel {
        log::warn!("indentation {depth} mm exceeds the {gel} mm gel; clamped");
        frame.clamped = true;
        gel
    } else {
        depth
    };
    let reach = indenter.reach();
    for y in 0..frame.height {
        for x in 0..frame.width {
            let p = Pixel {
                x: x as f64 + 0.5,
                y: y as f64 + 0.5,
            };
            let Some(c) = optics.pixel_to_surface(p) else { continue };
            if c.distance(&center) > reach {
                continue;
            }
            let h = indenter.penetration(c.s - center.s, c.u - center.u, depth);
            if h > MIN_DEPTH {
                let cell = &mut frame.depth[y * frame.width + x];
                *cell = cell.max(h.min(gel) as f32);
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub contact_area: f64,
    /// `None` for an empty frame.
    pub centroid: Option<SurfaceCoord>,
    pub max_depth: f64,
}

pub fn frame_metrics(frame: &TactileFrame, optics: &OpticsMap) -> FrameMetrics {
    let (mut area, mut s_sum, mut u_sum) = (0.0, 0.0, 0.0);
    for y in 0..frame.height {
        for x in 0..frame.width {
            if frame.get(x, y) <= 0.0 {
                continue;
            }
            let p = Pixel {
                x: x as f64 + 0.5,
                y: y as f64 + 0.5,
            };
            let (Some(c), Some(a)) = (optics.pixel_to_surface(p), optics.pixel_area(p)) else {
                continue;
            };
            area += a;
            s_sum += a * c.s;
            u_sum += a * c.u;
        }
    }
    FrameMetrics {
        contact_area: area,
        centroid: (area > 0.0).then(|| SurfaceCoord::new(s_sum / area, u_sum / area)),
        max_depth: frame.max_depth(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_is_valid() {
        let m = OpticsMap::default();
        m.validate().unwrap();
        let p = m.surface_to_pixel(SurfaceCoord::new(0.0, 0.0)).unwrap();
        assert!(p.x > 0.0 && p.y > 0.0 && p.x < 320.0 && p.y < 240.0);
    }

    #[test]
    fn out_of_bounds_rejected() {
        let m = OpticsMap::default();
        assert!(m.surface_to_pixel(SurfaceCoord::new(-0.1, 0.0)).is_err());
        assert!(m.surface_to_pixel(SurfaceCoord::new(10.0, 11.5)).is_err());
        let hex = Indenter::Hexagon { across_flats: 13.0 };
        assert!(render_contact(&hex, SurfaceCoord::new(90.0, 0.0), 0.5, &m, Finger::F1, 0).is_err());
    }

    #[test]
    fn boundaries_are_continuous() {
        let m = OpticsMap::default();
        for k in 1..3 {
            let s = m.regions[k].s_min;
            for u in [-11.0, -3.0, 0.0, 7.0, 11.0] {
                let a = m.regions[k - 1].forward(SurfaceCoord::new(s, u));
                let b = m.regions[k].forward(SurfaceCoord::new(s, u));
                assert!((a.x - b.x).hypot(a.y - b.y) < 1.0);
            }
        }
    }

    #[test]
    fn singular_region_rejected() {
        let mut m = OpticsMap::default();
        m.regions[1].matrix = [[1.0, 2.0], [2.0, 4.0]];
        assert!(m.validate().is_err());
        let mut m = OpticsMap::default();
        m.regions[1].s_max += 1.0;
        assert!(m.validate().is_err());
        assert!(OpticsMap::for_skin(SkinGeometry::default(), 32, 24).is_ok());
    }

    #[test]
    fn vanishing_depth_gives_empty_frame() {
        let m = OpticsMap::default();
        let sphere = Indenter::Sphere { radius: 5.0 };
        for depth in [0.0, 1e-7, 1e-6] {
            let f = render_contact(&sphere, SurfaceCoord::new(40.0, 0.0), depth, &m, Finger::F2, 3).unwrap();
            assert_eq!(f.nonzero_pixels(), 0);
            let metrics = frame_metrics(&f, &m);
            assert_eq!(metrics.contact_area, 0.0);
            assert!(metrics.centroid.is_none());
        }
    }

    #[test]
    fn excessive_depth_is_clamped() {
        let m = OpticsMap::default();
        let f = render_contact(&Indenter::Sphere { radius: 10.0 }, SurfaceCoord::new(40.0, 0.0), 3.5, &m, Finger::F1, 0)
            .unwrap();
        assert!(f.clamped);
        assert!((f.max_depth() - 2.0).abs() < 0.01);
    }

    #[test]
    fn hexagon_lands_in_middle_view() {
        let m = OpticsMap::default();
        let center = SurfaceCoord::new(m.skin.length / 2.0, 0.0);
        let f = render_contact(&Indenter::Hexagon { across_flats: 13.0 }, center, 0.8, &m, Finger::F1, 0).unwrap();
        let mid = m.regions[1];
        let (lo, hi) = (mid.forward(SurfaceCoord::new(mid.s_min, 0.0)).x, mid.forward(SurfaceCoord::new(mid.s_max, 0.0)).x);
        for y in 0..f.height {
            for x in 0..f.width {
                if f.get(x, y) > 0.0 {
                    assert!((x as f64) >= lo - 1.0 && (x as f64) <= hi + 1.0);
                    assert!((f.get(x, y) - 0.8).abs() < 1e-6);
                }
            }
        }
        // Regular hexagon area: (sqrt(3)/2) * across_flats^2.
        let area = frame_metrics(&f, &m).contact_area;
        let expected = 3f64.sqrt() / 2.0 * 13.0 * 13.0;
        assert!((area - expected).abs() / expected < 0.05, "{area} vs {expected}");
    }

    #[test]
    fn single_pixel_max_depth() {
        let m = OpticsMap::default();
        let mut f = TactileFrame::zeros(Finger::F3, 0, m.image_width, m.image_height);
        let p = m.surface_to_pixel(SurfaceCoord::new(20.0, 1.0)).unwrap();
        f.depth[p.y as usize * f.width + p.x as usize] = 0.37;
        let metrics = frame_metrics(&f, &m);
        assert!((metrics.max_depth - 0.37).abs() < 1e-6);
        assert!(metrics.centroid.unwrap().distance(&SurfaceCoord::new(20.0, 1.0)) < 0.5);
    }

    #[test]
    fn pgm_round_trip() {
        let m = OpticsMap::default();
        let f = render_contact(&Indenter::Sphere { radius: 8.0 }, SurfaceCoord::new(30.0, -2.0), 1.2, &m, Finger::F2, 42)
            .unwrap();
        let bytes = f.to_pgm();
        assert!(bytes.starts_with(b"P5\n# mm_per_count 0.0001\n"));
        let back = TactileFrame::read_pgm(&bytes[..]).unwrap();
        assert_eq!((back.width, back.height, back.finger, back.tick), (320, 240, Finger::F2, 42));
        for (a, b) in f.depth.iter().zip(&back.depth) {
            assert!((a - b).abs() <= 0.5e-4 + 1e-6);
        }
    }
}
