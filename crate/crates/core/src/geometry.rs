//! Planar and spatial helpers used for room assignment and validation.

pub type Point2 = [f64; 2];
pub type Point3 = [f64; 3];

/// Boundary tolerance for point-in-polygon tests, in meters.
pub const BOUNDARY_EPS: f64 = 1e-9;

pub fn distance3(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

pub fn distance2(a: &Point2, b: &Point2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn cross(o: &Point2, a: &Point2, b: &Point2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area; positive for counter-clockwise vertex order.
pub fn signed_area(poly: &[Point2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    acc / 2.0
}

pub fn area(poly: &[Point2]) -> f64 {
    signed_area(poly).abs()
}

fn on_segment(p: &Point2, a: &Point2, b: &Point2) -> bool {
    p[0] >= a[0].min(b[0]) - BOUNDARY_EPS
        && p[0] <= a[0].max(b[0]) + BOUNDARY_EPS
        && p[1] >= a[1].min(b[1]) - BOUNDARY_EPS
        && p[1] <= a[1].max(b[1]) + BOUNDARY_EPS
}

/// Closed-segment intersection test (touching counts).
pub fn segments_intersect(p1: &Point2, p2: &Point2, q1: &Point2, q2: &Point2) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(p1, q1, q2))
        || (d2 == 0.0 && on_segment(p2, q1, q2))
        || (d3 == 0.0 && on_segment(q1, p1, p2))
        || (d4 == 0.0 && on_segment(q2, p1, p2))
}

/// True when the closed polyline has at least three vertices, positive area,
/// and no two edges meet except consecutive edges at their shared vertex.
pub fn is_simple_polygon(poly: &[Point2]) -> bool {
    let n = poly.len();
    if n < 3 || !poly.iter().all(|p| p[0].is_finite() && p[1].is_finite()) {
        return false;
    }
    if area(poly) <= 0.0 {
        return false;
    }
    for i in 0..n {
        let a1 = poly[i];
        let a2 = poly[(i + 1) % n];
        if distance2(&a1, &a2) == 0.0 {
            return false;
        }
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            let b1 = poly[j];
            let b2 = poly[(j + 1) % n];
            if adjacent {
                // consecutive edges may only share their common vertex; a
                // collinear fold-back overlaps
                let (shared, x, y) = if j == i + 1 { (a2, a1, b2) } else { (a1, a2, b1) };
                if cross(&shared, &x, &y) == 0.0 {
                    let dot = (x[0] - shared[0]) * (y[0] - shared[0])
                        + (x[1] - shared[1]) * (y[1] - shared[1]);
                    if dot > 0.0 {
                        return false;
                    }
                }
                continue;
            }
            if segments_intersect(&a1, &a2, &b1, &b2) {
                return false;
            }
        }
    }
    true
}

fn point_segment_distance(p: &Point2, a: &Point2, b: &Point2) -> f64 {
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return distance2(p, a);
    }
    let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
    distance2(p, &[a[0] + t * dx, a[1] + t * dy])
}

/// Minimum distance from `p` to any edge of `poly`.
pub fn boundary_distance(p: &Point2, poly: &[Point2]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| point_segment_distance(p, &poly[i], &poly[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Containment {
    Inside,
    Boundary,
    Outside,
}

pub fn locate_point(p: &Point2, poly: &[Point2]) -> Containment {
    if poly.len() < 3 {
        return Containment::Outside;
    }
    if boundary_distance(p, poly) <= BOUNDARY_EPS {
        return Containment::Boundary;
    }
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = (poly[i][0], poly[i][1]);
        let (xj, yj) = (poly[j][0], poly[j][1]);
        if (yi > p[1]) != (yj > p[1]) && p[0] < (xj - xi) * (p[1] - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    if inside {
        Containment::Inside
    } else {
        Containment::Outside
    }
}

/// Andrew's monotone chain; returns the hull counter-clockwise.
pub fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts: Vec<Point2> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Point2> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<Point2> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Area of `subject ∩ hull(clip)` by Sutherland–Hodgman clipping.
///
/// `subject` may be any simple polygon; the clip region is convexified first,
/// which is exact for the rectangular footprints produced by layouts.
pub fn intersection_area(subject: &[Point2], clip: &[Point2]) -> f64 {
    let clip = convex_hull(clip);
    if clip.len() < 3 || subject.len() < 3 {
        return 0.0;
    }
    let mut output: Vec<Point2> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let input = std::mem::take(&mut output);
        let inside = |p: &Point2| cross(&a, &b, p) >= 0.0;
        let intersect = |p: &Point2, q: &Point2| -> Point2 {
            let dp = cross(&a, &b, p);
            let dq = cross(&a, &b, q);
            let t = dp / (dp - dq);
            [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
        };
        for k in 0..input.len() {
            let cur = input[k];
            let prev = input[(k + input.len() - 1) % input.len()];
            match (inside(&cur), inside(&prev)) {
                (true, true) => output.push(cur),
                (true, false) => {
                    output.push(intersect(&prev, &cur));
                    output.push(cur);
                }
                (false, true) => output.push(intersect(&prev, &cur)),
                (false, false) => {}
            }
        }
    }
    area(&output)
}
