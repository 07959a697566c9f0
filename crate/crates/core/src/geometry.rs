//! Polygons, their derived quantities, centroid-fan sub-triangulations and
//! the badly-shaped element sequences used by the stability studies.

use nalgebra::{Point2, Rotation2, Vector2};

use crate::error::{Error, Result};

pub type Point = Point2<f64>;

/// One oriented boundary edge of a counterclockwise polygon.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub start: Point,
    pub end: Point,
    /// Unit outward normal.
    pub normal: Vector2<f64>,
    pub length: f64,
    pub midpoint: Point,
}

impl Edge {
    fn new(start: Point, end: Point) -> Self {
        let t = end - start;
        let length = t.norm();
        Edge {
            start,
            end,
            normal: Vector2::new(t.y, -t.x) / length,
            length,
            midpoint: Point::from((start.coords + end.coords) * 0.5),
        }
    }

    pub fn tangent(&self) -> Vector2<f64> {
        (self.end - self.start) / self.length
    }

    /// Point at the scaled edge coordinate `s` in [-1, 1] (0 is the midpoint).
    pub fn point_at(&self, s: f64) -> Point {
        self.midpoint + (self.end - self.start) * (0.5 * s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point>,
    edges: Vec<Edge>,
    centroid: Point,
    diameter: f64,
    area: f64,
}

impl Polygon {
    /// Builds a polygon from counterclockwise vertices.
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(Error::InvalidPolygon(format!(
                "need at least 3 vertices, got {n}"
            )));
        }
        if vertices.iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) {
            return Err(Error::InvalidPolygon("non-finite coordinate".into()));
        }

        let mut signed_area = 0.0;
        let mut cx = 0.0;
        let mut cy = 0.0;
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let cross = a.x * b.y - b.x * a.y;
            signed_area += cross;
            cx += (a.x + b.x) * cross;
            cy += (a.y + b.y) * cross;
        }
        signed_area *= 0.5;

        let mut diameter: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                diameter = diameter.max((vertices[i] - vertices[j]).norm());
            }
        }
        if !(signed_area > 1e-14 * diameter * diameter) {
            return Err(Error::InvalidPolygon(format!(
                "signed area {signed_area:e} is not positive (vertices must be counterclockwise)"
            )));
        }

        let edges: Vec<Edge> = (0..n)
            .map(|i| Edge::new(vertices[i], vertices[(i + 1) % n]))
            .collect();
        if edges.iter().any(|e| e.length <= 1e-14 * diameter) {
            return Err(Error::InvalidPolygon("repeated vertex".into()));
        }
        if !is_simple(&vertices) {
            return Err(Error::InvalidPolygon("edges intersect".into()));
        }

        let centroid = Point::new(cx / (6.0 * signed_area), cy / (6.0 * signed_area));
        Ok(Polygon {
            vertices,
            edges,
            centroid,
            diameter,
            area: signed_area,
        })
    }

    pub fn from_coords(coords: &[(f64, f64)]) -> Result<Self> {
        Self::new(coords.iter().map(|&(x, y)| Point::new(x, y)).collect())
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn centroid(&self) -> Point {
        self.centroid
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    pub fn is_convex(&self) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let c = self.vertices[(i + 2) % n];
            cross(b - a, c - b) >= 0.0
        })
    }

    /// Every centroid-fan triangle has positive area.
    pub fn is_star_shaped_wrt_centroid(&self) -> bool {
        let tol = 1e-14 * self.diameter * self.diameter;
        self.edges
            .iter()
            .all(|e| cross(e.start - self.centroid, e.end - self.centroid) > tol)
    }

    pub fn translated(&self, shift: Vector2<f64>) -> Self {
        self.map(|p| p + shift)
    }

    /// Uniform scaling about the origin.
    pub fn scaled(&self, factor: f64) -> Self {
        self.map(|p| Point::from(p.coords * factor))
    }

    /// Rotation about the origin.
    pub fn rotated(&self, angle: f64) -> Self {
        let r = Rotation2::new(angle);
        self.map(|p| r * p)
    }

    fn map(&self, f: impl Fn(Point) -> Point) -> Self {
        Polygon::new(self.vertices.iter().map(|&p| f(p)).collect())
            .expect("rigid and scaling maps keep a valid polygon valid")
    }

    /// Parses the text format: vertex count, then one `x y` line per vertex.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty polygon file".into()))?;
        let n: usize = header
            .parse()
            .map_err(|_| Error::Parse(format!("bad vertex count {header:?}")))?;
        let mut vertices = Vec::with_capacity(n);
        for i in 0..n {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("expected {n} vertices, found {i}")))?;
            let mut it = line.split_whitespace();
            let mut coord = || -> Result<f64> {
                it.next()
                    .ok_or_else(|| Error::Parse(format!("vertex line {line:?}")))?
                    .parse()
                    .map_err(|_| Error::Parse(format!("vertex line {line:?}")))
            };
            let x = coord()?;
            let y = coord()?;
            vertices.push(Point::new(x, y));
        }
        if lines.next().is_some() {
            return Err(Error::Parse(format!("more than {n} vertex lines")));
        }
        Polygon::new(vertices)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.vertices.len());
        for v in &self.vertices {
            s.push_str(&format!("{:e} {:e}\n", v.x, v.y));
        }
        s
    }
}

fn cross(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

fn is_simple(vertices: &[Point]) -> bool {
    let n = vertices.len();
    let seg = |i: usize| (vertices[i], vertices[(i + 1) % n]);
    for i in 0..n {
        for j in i + 1..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (a, b) = seg(i);
            let (c, d) = seg(j);
            let d1 = cross(b - a, c - a);
            let d2 = cross(b - a, d - a);
            let d3 = cross(d - c, a - c);
            let d4 = cross(d - c, b - c);
            if d1 * d2 < 0.0 && d3 * d4 < 0.0 {
                return false;
            }
        }
    }
    true
}

/// Centroid fan followed by uniform quadrisection.
#[derive(Debug, Clone)]
pub struct SubTriangulation {
    pub triangles: Vec<[Point; 3]>,
    /// Index of the polygon edge whose fan triangle contains each triangle.
    pub fan_index: Vec<usize>,
    pub level: usize,
}

impl SubTriangulation {
    pub fn total_area(&self) -> f64 {
        self.triangles.iter().map(triangle_area).sum()
    }
}

pub fn triangle_area(t: &[Point; 3]) -> f64 {
    0.5 * cross(t[1] - t[0], t[2] - t[0])
}

pub fn subtriangulate(polygon: &Polygon, nref: usize) -> Result<SubTriangulation> {
    if !polygon.is_star_shaped_wrt_centroid() {
        return Err(Error::NotStarShaped);
    }
    let c = polygon.centroid();
    let mut triangles = Vec::with_capacity(polygon.num_edges() << (2 * nref));
    let mut fan_index = Vec::with_capacity(triangles.capacity());
    for (i, e) in polygon.edges().iter().enumerate() {
        let mut level = vec![[c, e.start, e.end]];
        for _ in 0..nref {
            level = level.iter().flat_map(quadrisect).collect();
        }
        fan_index.extend(std::iter::repeat_n(i, level.len()));
        triangles.extend(level);
    }
    Ok(SubTriangulation {
        triangles,
        fan_index,
        level: nref,
    })
}

fn quadrisect(t: &[Point; 3]) -> [[Point; 3]; 4] {
    let mid = |a: Point, b: Point| Point::from((a.coords + b.coords) * 0.5);
    let m01 = mid(t[0], t[1]);
    let m12 = mid(t[1], t[2]);
    let m20 = mid(t[2], t[0]);
    [
        [t[0], m01, m20],
        [m01, t[1], m12],
        [m20, m12, t[2]],
        [m01, m12, m20],
    ]
}

pub const SEQUENCE_LEN: usize = 6;

fn check_step(k: usize) -> Result<()> {
    if k >= SEQUENCE_LEN {
        return Err(Error::OutOfRange {
            what: "sequence index",
            value: k as i64,
            allowed: format!("0..={}", SEQUENCE_LEN - 1),
        });
    }
    Ok(())
}

/// Hourglass hexagon: unit top and bottom edges, waist vertices at
/// `(±gap/2, 0)` with `gap = 0.5 * 2^-k`.
pub fn hourglass_sequence(k: usize) -> Result<Polygon> {
    check_step(k)?;
    let half_gap = 0.25 * 0.5f64.powi(k as i32);
    Polygon::from_coords(&[
        (-0.5, -0.5),
        (0.5, -0.5),
        (half_gap, 0.0),
        (0.5, 0.5),
        (-0.5, 0.5),
        (-half_gap, 0.0),
    ])
}

/// Isosceles trapezoid with bottom edge 1, top edge 1/2, height `0.5 * 2^-k`.
pub fn trapezoid_sequence(k: usize) -> Result<Polygon> {
    check_step(k)?;
    let height = 0.5 * 0.5f64.powi(k as i32);
    Polygon::from_coords(&[(-0.5, 0.0), (0.5, 0.0), (0.25, height), (-0.25, height)])
}

pub fn reference_triangle() -> Polygon {
    Polygon::from_coords(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]).expect("valid triangle")
}

pub fn unit_square() -> Polygon {
    Polygon::from_coords(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]).expect("valid square")
}
