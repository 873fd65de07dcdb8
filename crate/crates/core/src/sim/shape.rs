use std::f64::consts::PI;
use std::fmt;

/// Footprint geometry of a table object in its local frame (origin at the
/// object center, x to the right of the robot, y away from the robot).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Circle,
    /// Axis-aligned square whose half side equals the characteristic radius.
    Square,
    /// Regular polygon inscribed in the characteristic radius, one vertex on +y.
    Polygon { sides: u8 },
    /// Star with `points` outer vertices on the characteristic radius and
    /// inner vertices at [`STAR_INNER_RATIO`] of it, one tip on +y.
    Star { points: u8 },
}

pub const STAR_INNER_RATIO: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub shape: Shape,
    /// Characteristic radius in meters.
    pub radius: f64,
}

impl Footprint {
    pub fn new(shape: Shape, radius: f64) -> Self {
        assert!(radius > 0.0, "footprint radius must be positive");
        Footprint { shape, radius }
    }

    /// Polygon vertices in counter-clockwise order, or `None` for circles.
    pub fn vertices(&self) -> Option<Vec<[f64; 2]>> {
        let r = self.radius;
        match self.shape {
            Shape::Circle => None,
            Shape::Square => Some(vec![[r, r], [-r, r], [-r, -r], [r, -r]]),
            Shape::Polygon { sides } => Some(
                (0..sides)
                    .map(|i| {
                        let a = PI / 2.0 + 2.0 * PI * f64::from(i) / f64::from(sides);
                        [r * a.cos(), r * a.sin()]
                    })
                    .collect(),
            ),
            Shape::Star { points } => Some(
                (0..2 * points)
                    .map(|i| {
                        let a = PI / 2.0 + PI * f64::from(i) / f64::from(points);
                        let rr = if i % 2 == 0 { r } else { r * STAR_INNER_RATIO };
                        [rr * a.cos(), rr * a.sin()]
                    })
                    .collect(),
            ),
        }
    }

    /// Point-in-shape test in local coordinates. Boundary points count as inside
    /// for circles and squares; polygon edges follow the even-odd rule.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let r = self.radius;
        match self.shape {
            Shape::Circle => p[0] * p[0] + p[1] * p[1] <= r * r,
            Shape::Square => p[0].abs() <= r && p[1].abs() <= r,
            Shape::Polygon { .. } | Shape::Star { .. } => {
                if p[0] * p[0] + p[1] * p[1] > r * r {
                    return false;
                }
                let verts = self.vertices().expect("polygonal shape");
                point_in_polygon(p, &verts)
            }
        }
    }

    /// `n` points evenly spaced along the boundary (by angle for circles,
    /// by arc length for polygons).
    pub fn boundary_points(&self, n: usize) -> Vec<[f64; 2]> {
        match self.vertices() {
            None => (0..n)
                .map(|i| {
                    let a = 2.0 * PI * i as f64 / n as f64;
                    [self.radius * a.cos(), self.radius * a.sin()]
                })
                .collect(),
            Some(verts) => {
                let edges: Vec<([f64; 2], [f64; 2], f64)> = verts
                    .iter()
                    .zip(verts.iter().cycle().skip(1))
                    .map(|(&a, &b)| (a, b, ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()))
                    .collect();
                let perimeter: f64 = edges.iter().map(|e| e.2).sum();
                let mut out = Vec::with_capacity(n);
                for i in 0..n {
                    let mut s = perimeter * i as f64 / n as f64;
                    for &(a, b, len) in &edges {
                        if s <= len {
                            let t = s / len;
                            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
                            break;
                        }
                        s -= len;
                    }
                }
                out
            }
        }
    }

    pub fn name(&self) -> String {
        self.shape.to_string()
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Circle => write!(f, "circle"),
            Shape::Square => write!(f, "square"),
            Shape::Polygon { sides } => write!(f, "polygon{sides}"),
            Shape::Star { points } => write!(f, "star{points}"),
        }
    }
}

impl std::str::FromStr for Shape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let count = |rest: &str| rest.parse::<u8>().map_err(|_| format!("bad shape `{s}`"));
        match s {
            "circle" => Ok(Shape::Circle),
            "square" => Ok(Shape::Square),
            _ if s.starts_with("polygon") => Ok(Shape::Polygon { sides: count(&s[7..])? }),
            _ if s.starts_with("star") => Ok(Shape::Star { points: count(&s[4..])? }),
            _ => Err(format!("bad shape `{s}`")),
        }
    }
}

/// Even-odd crossing test.
pub fn point_in_polygon(p: [f64; 2], verts: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let n = verts.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (verts[i], verts[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}
