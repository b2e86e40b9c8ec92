//! Vertex decoding, four-point homographies, perspective rectification and
//! quadrilateral IoU.
//!
//! Coordinates are `[x, y]` in pixels with `y` pointing down; integer
//! coordinates are pixel centres. Corner order is TL, TR, BR, BL, which has
//! positive shoelace area in this frame.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Image;

pub type Point = [f64; 2];

pub const CORNER_ORDER: &str = "TL,TR,BR,BL";

/// Four semantically ordered corners of the embedded region in a `H×W` frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VertexSet {
    pub points: [Point; 4],
    /// `(height, width)`.
    pub frame: (usize, usize),
}

impl VertexSet {
    /// Validates that every point lies in `[0,W)×[0,H)`.
    pub fn new(points: [Point; 4], frame: (usize, usize)) -> Result<Self> {
        let vs = Self { points, frame };
        vs.check_in_frame()?;
        Ok(vs)
    }

    pub fn check_in_frame(&self) -> Result<()> {
        let (h, w) = self.frame;
        for p in &self.points {
            if !(p[0] >= 0.0 && p[0] < w as f64 && p[1] >= 0.0 && p[1] < h as f64) {
                return Err(Error::OutOfFrame {
                    x: p[0],
                    y: p[1],
                    width: w,
                    height: h,
                });
            }
        }
        Ok(())
    }

    /// Axis-aligned rectangle `[x0, x1] × [y0, y1]` in TL,TR,BR,BL order.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64, frame: (usize, usize)) -> Result<Self> {
        Self::new([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], frame)
    }

    pub fn quad(&self) -> Quadrilateral {
        Quadrilateral { points: self.points }
    }

    /// Nearest-integer pixel of every vertex.
    pub fn rounded(&self) -> [[i64; 2]; 4] {
        self.points.map(|p| [p[0].round() as i64, p[1].round() as i64])
    }

    pub fn max_distance(&self, other: &Self) -> f64 {
        self.points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn mean_distance(&self, other: &Self) -> f64 {
        self.points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
            .sum::<f64>()
            / 4.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadrilateral {
    pub points: [Point; 4],
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area; positive for clockwise-on-screen (y-down) order.
pub fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        s += a[0] * b[1] - b[0] * a[1];
    }
    s / 2.0
}

fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |a: Point, b: Point, p: Point, d: f64| {
        d == 0.0 && p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
    };
    on(q1, q2, p1, d1) || on(q1, q2, p2, d2) || on(p1, p2, q1, d3) || on(p1, p2, q2, d4)
}

impl From<&VertexSet> for Quadrilateral {
    fn from(v: &VertexSet) -> Self {
        Self { points: v.points }
    }
}

impl Quadrilateral {
    pub fn new(points: [Point; 4]) -> Self {
        Self { points }
    }

    pub fn signed_area(&self) -> f64 {
        signed_area(&self.points)
    }

    /// Non-zero area and no crossing between opposite edges.
    pub fn is_simple(&self) -> bool {
        let p = &self.points;
        self.signed_area().abs() > 1e-12 && !segments_intersect(p[0], p[1], p[2], p[3]) && !segments_intersect(p[1], p[2], p[3], p[0])
    }

    /// Strictly convex: every turn has the same non-zero sign.
    pub fn is_convex(&self) -> bool {
        let p = &self.points;
        let turns: Vec<f64> = (0..4).map(|i| cross(p[i], p[(i + 1) % 4], p[(i + 2) % 4])).collect();
        turns.iter().all(|&t| t > 0.0) || turns.iter().all(|&t| t < 0.0)
    }

    /// Crossing-number test with a half-open rule: points on left/top edges
    /// are inside, points on right/bottom edges are outside.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        point_in_polygon(&self.points, x, y)
    }
}

pub(crate) fn point_in_polygon(poly: &[Point], x: f64, y: f64) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > y) != (b[1] > y) {
            let xi = a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if x < xi {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Per-channel argmax of a `4×H×W` stack; ties go to the smallest row-major
/// index. Channel `k` becomes semantic corner `k`.
pub fn decode_vertices(planes: &[f32], height: usize, width: usize) -> Result<VertexSet> {
    let hw = height * width;
    if hw == 0 || planes.len() != 4 * hw {
        return Err(Error::Shape(format!(
            "expected 4x{height}x{width} heatmaps, got {} values",
            planes.len()
        )));
    }
    let mut points = [[0.0; 2]; 4];
    for (c, plane) in planes.chunks_exact(hw).enumerate() {
        let mut best = 0;
        for (i, &v) in plane.iter().enumerate() {
            if v > plane[best] {
                best = i;
            }
        }
        points[c] = [(best % width) as f64, (best / width) as f64];
    }
    VertexSet::new(points, (height, width))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography {
    pub matrix: [[f64; 3]; 3],
}

impl Homography {
    pub fn identity() -> Self {
        Self {
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            matrix: [[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]],
        }
    }

    fn to_na(self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.matrix[r][c])
    }

    fn from_na(m: &Matrix3<f64>) -> Result<Self> {
        let s = m[(2, 2)];
        if s.abs() < 1e-300 || !s.is_finite() {
            return Err(Error::Numeric("homography has vanishing (3,3) element".into()));
        }
        Ok(Self {
            matrix: std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)] / s)),
        })
    }

    pub fn apply(&self, p: Point) -> Point {
        let m = &self.matrix;
        let x = m[0][0] * p[0] + m[0][1] * p[1] + m[0][2];
        let y = m[1][0] * p[0] + m[1][1] * p[1] + m[1][2];
        let w = m[2][0] * p[0] + m[2][1] * p[1] + m[2][2];
        [x / w, y / w]
    }

    pub fn determinant(&self) -> f64 {
        self.to_na().determinant()
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .to_na()
            .try_inverse()
            .ok_or_else(|| Error::Numeric("singular homography".into()))?;
        Self::from_na(&inv)
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn compose(&self, first: &Self) -> Result<Self> {
        Self::from_na(&(self.to_na() * first.to_na()))
    }
}

/// Similarity that moves the centroid to the origin and the mean distance to √2.
fn normalizer(pts: &[Point; 4]) -> Matrix3<f64> {
    let cx = pts.iter().map(|p| p[0]).sum::<f64>() / 4.0;
    let cy = pts.iter().map(|p| p[1]).sum::<f64>() / 4.0;
    let d = pts.iter().map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()).sum::<f64>() / 4.0;
    let s = if d > 0.0 { std::f64::consts::SQRT_2 / d } else { 1.0 };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

fn check_no_collinear(pts: &[Point; 4], which: &str) -> Result<()> {
    let extent = pts
        .iter()
        .flat_map(|a| pts.iter().map(move |b| (a[0] - b[0]).abs().max((a[1] - b[1]).abs())))
        .fold(0.0, f64::max);
    let tol = 1e-9 * extent * extent;
    for skip in 0..4 {
        let t: Vec<Point> = (0..4).filter(|&i| i != skip).map(|i| pts[i]).collect();
        if extent == 0.0 || cross(t[0], t[1], t[2]).abs() <= tol {
            return Err(Error::DegenerateConfiguration(format!("{which} points contain a collinear triple")));
        }
    }
    Ok(())
}

/// Exact four-point projective map `src[i] → dst[i]` (normalized DLT).
pub fn estimate_homography(src: &[Point; 4], dst: &[Point; 4]) -> Result<Homography> {
    check_no_collinear(src, "source")?;
    check_no_collinear(dst, "destination")?;
    let ts = normalizer(src);
    let td = normalizer(dst);
    let norm = |t: &Matrix3<f64>, p: Point| {
        let v = t * Vector3::new(p[0], p[1], 1.0);
        [v[0] / v[2], v[1] / v[2]]
    };
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let [x, y] = norm(&ts, src[i]);
        let [u, v] = norm(&td, dst[i]);
        let r = 2 * i;
        a[(r, 0)] = x;
        a[(r, 1)] = y;
        a[(r, 2)] = 1.0;
        a[(r, 6)] = -u * x;
        a[(r, 7)] = -u * y;
        b[r] = u;
        a[(r + 1, 3)] = x;
        a[(r + 1, 4)] = y;
        a[(r + 1, 5)] = 1.0;
        a[(r + 1, 6)] = -v * x;
        a[(r + 1, 7)] = -v * y;
        b[r + 1] = v;
    }
    let h = a
        .full_piv_lu()
        .solve(&b)
        .ok_or_else(|| Error::DegenerateConfiguration("singular DLT system".into()))?;
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0);
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| Error::DegenerateConfiguration("degenerate destination scale".into()))?;
    Homography::from_na(&(td_inv * hn * ts))
}

/// Destination rectangle corners for an `h×w` output, TL,TR,BR,BL.
pub fn rect_corners(h: usize, w: usize) -> [Point; 4] {
    let (x1, y1) = (w as f64 - 1.0, h as f64 - 1.0);
    [[0.0, 0.0], [x1, 0.0], [x1, y1], [0.0, y1]]
}

/// Warps `quad` onto an upright `h×w` image with bilinear sampling.
pub fn rectify(image: &Image, quad: &Quadrilateral, out_size: (usize, usize)) -> Result<Image> {
    let (h, w) = out_size;
    if h < 2 || w < 2 {
        return Err(Error::Config(format!("rectified size {h}x{w} too small")));
    }
    if !quad.is_simple() {
        return Err(Error::DegenerateRegion("quadrilateral is not simple".into()));
    }
    let to_image = estimate_homography(&rect_corners(h, w), &quad.points)?;
    let mut out = Image::new(h, w, image.channels);
    for y in 0..h {
        for x in 0..w {
            let [sx, sy] = to_image.apply([x as f64, y as f64]);
            for c in 0..image.channels {
                out.set(y, x, c, image.sample_bilinear(sx, sy, c));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouMethod {
    Exact,
    /// Used when a polygon is non-convex or self-intersecting.
    Rasterized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IouResult {
    pub iou: f64,
    pub method: IouMethod,
}

fn oriented(points: &[Point; 4]) -> Vec<Point> {
    let mut v = points.to_vec();
    if signed_area(&v) < 0.0 {
        v.reverse();
    }
    v
}

/// Clips `subject` against the convex, positively oriented `clip` polygon.
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut out = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % n]);
        let input = std::mem::take(&mut out);
        let inside = |p: Point| cross(a, b, p) >= 0.0;
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (ci, pi) = (inside(cur), inside(prev));
            if ci != pi {
                let (dp, dc) = (cross(a, b, prev), cross(a, b, cur));
                let t = dp / (dp - dc);
                out.push([prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])]);
            }
            if ci {
                out.push(cur);
            }
        }
    }
    out
}

/// Intersection over union of two quadrilaterals.
///
/// Convex inputs use exact polygon clipping. Anything else falls back to
/// counting samples on a 2×-supersampled grid with the even-odd rule.
pub fn quad_iou(a: &Quadrilateral, b: &Quadrilateral) -> IouResult {
    if a.is_convex() && b.is_convex() {
        let pa = oriented(&a.points);
        let pb = oriented(&b.points);
        let inter = signed_area(&clip_convex(&pa, &pb)).max(0.0);
        let union = signed_area(&pa) + signed_area(&pb) - inter;
        let iou = if union > 0.0 { (inter / union).clamp(0.0, 1.0) } else { 0.0 };
        return IouResult {
            iou,
            method: IouMethod::Exact,
        };
    }
    IouResult {
        iou: rasterized_iou(&a.points, &b.points, 2),
        method: IouMethod::Rasterized,
    }
}

/// Sample-counting IoU with `factor×factor` samples per unit square.
pub fn rasterized_iou(a: &[Point], b: &[Point], factor: usize) -> f64 {
    let all = a.iter().chain(b);
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in all {
        x0 = x0.min(p[0]);
        y0 = y0.min(p[1]);
        x1 = x1.max(p[0]);
        y1 = y1.max(p[1]);
    }
    let step = 1.0 / factor as f64;
    let (x0, y0) = (x0.floor(), y0.floor());
    let nx = ((x1.ceil() - x0) / step).ceil() as usize + 1;
    let ny = ((y1.ceil() - y0) / step).ceil() as usize + 1;
    let (mut inter, mut union) = (0u64, 0u64);
    for iy in 0..ny {
        let y = y0 + (iy as f64 + 0.5) * step;
        for ix in 0..nx {
            let x = x0 + (ix as f64 + 0.5) * step;
            let ia = point_in_polygon(a, x, y);
            let ib = point_in_polygon(b, x, y);
            inter += (ia && ib) as u64;
            union += (ia || ib) as u64;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}
