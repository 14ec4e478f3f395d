//! Marching-squares contour extraction on a plane window.
//!
//! Serves two roles: seeding orbit traces from level sets of the slice
//! function, and acting as an independent geometric oracle for the ODE
//! tracer (the two paths share no numerics).
//!
//! Corner values that hit the level exactly are nudged by a tiny positive
//! amount so every cell has a clean sign pattern; if exact hits are present
//! the whole window is re-marched at doubled resolution first (up to twice)
//! to shrink the affected neighborhood.

use std::collections::HashMap;

use thiserror::Error;

use crate::geom::V2;
use crate::num::Real;

#[derive(Debug, Error)]
pub enum ContourError {
    #[error("level set is empty in the window")]
    EmptyLevelSet,
    #[error("window is degenerate: {0}")]
    BadWindow(String),
}

/// Rectangular window in plane coordinates.
#[derive(Clone, Copy, Debug)]
pub struct Window<T> {
    pub u0: T,
    pub u1: T,
    pub v0: T,
    pub v1: T,
}

impl<T: Real> Window<T> {
    pub fn centered(half_u: T, half_v: T) -> Self {
        Self {
            u0: -half_u,
            u1: half_u,
            v0: -half_v,
            v1: half_v,
        }
    }

    pub fn contains(&self, r: V2<T>) -> bool {
        r.x >= self.u0 && r.x <= self.u1 && r.y >= self.v0 && r.y <= self.v1
    }

    pub fn width(&self) -> T {
        self.u1 - self.u0
    }

    pub fn height(&self) -> T {
        self.v1 - self.v0
    }
}

/// Contour piece: open polylines end on the window boundary.
#[derive(Clone, Debug)]
pub struct Polyline2<T> {
    pub points: Vec<V2<T>>,
    pub closed: bool,
}

impl<T: Real> Polyline2<T> {
    pub fn arc_length(&self) -> T {
        let mut l = T::zero();
        for w in self.points.windows(2) {
            l += (w[1] - w[0]).norm();
        }
        if self.closed && self.points.len() > 2 {
            l += (self.points[0] - *self.points.last().unwrap()).norm();
        }
        l
    }
}

const MAX_REFINEMENTS: usize = 2;
const MAX_CORNERS: usize = 32_000_000;

/// Extracts the level set `f = level` in `window` on a `grid_n`-cell grid
/// (cells are kept square-ish; the v-count follows the aspect ratio).
pub fn contour_lines<T: Real>(
    f: impl Fn(V2<T>) -> T,
    window: Window<T>,
    grid_n: usize,
    level: T,
) -> Result<Vec<Polyline2<T>>, ContourError> {
    if !(window.width() > T::zero() && window.height() > T::zero()) {
        return Err(ContourError::BadWindow("non-positive extent".into()));
    }
    let aspect = (window.height() / window.width()).to_f64().unwrap_or(1.0);
    let mut nx = grid_n.max(4);
    let mut ny = ((nx as f64 * aspect).round() as usize).max(4);

    for refinement in 0..=MAX_REFINEMENTS {
        let mut values = Vec::with_capacity((nx + 1) * (ny + 1));
        let du = window.width() / T::of(nx as f64);
        let dv = window.height() / T::of(ny as f64);
        let mut scale = T::zero();
        for j in 0..=ny {
            for i in 0..=nx {
                let r = V2::new(
                    window.u0 + du * T::of(i as f64),
                    window.v0 + dv * T::of(j as f64),
                );
                let v = f(r) - level;
                scale = scale.max(v.abs());
                values.push(v);
            }
        }
        if scale == T::zero() {
            // The function is identically equal to the level on the grid;
            // no isolated contour exists.
            return Err(ContourError::EmptyLevelSet);
        }
        let nudge = scale * T::of(1e-12);
        let exact_hits = values.iter().any(|v| v.abs() < nudge);
        let can_refine = refinement < MAX_REFINEMENTS && (2 * nx + 1) * (2 * ny + 1) <= MAX_CORNERS;
        if exact_hits && can_refine {
            nx *= 2;
            ny *= 2;
            continue;
        }
        for v in &mut values {
            if v.abs() < nudge {
                *v = nudge;
            }
        }
        return march(&f, &values, window, nx, ny, level);
    }
    unreachable!("refinement loop always returns");
}

/// Edge identifiers: horizontal edge H(i,j) joins corners (i,j)-(i+1,j),
/// vertical edge V(i,j) joins (i,j)-(i,j+1).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
enum Edge {
    H(usize, usize),
    V(usize, usize),
}

fn march<T: Real>(
    f: &impl Fn(V2<T>) -> T,
    values: &[T],
    window: Window<T>,
    nx: usize,
    ny: usize,
    level: T,
) -> Result<Vec<Polyline2<T>>, ContourError> {
    let du = window.width() / T::of(nx as f64);
    let dv = window.height() / T::of(ny as f64);
    let at = |i: usize, j: usize| values[j * (nx + 1) + i];
    let corner = |i: usize, j: usize| {
        V2::new(
            window.u0 + du * T::of(i as f64),
            window.v0 + dv * T::of(j as f64),
        )
    };
    let crossing = |a: V2<T>, va: T, b: V2<T>, vb: T| {
        let t = va / (va - vb);
        a + (b - a) * t
    };

    let mut positions: HashMap<Edge, V2<T>> = HashMap::new();
    let mut segments: Vec<(Edge, Edge)> = Vec::new();

    for j in 0..ny {
        for i in 0..nx {
            // Corners counter-clockwise from bottom-left.
            let v00 = at(i, j);
            let v10 = at(i + 1, j);
            let v11 = at(i + 1, j + 1);
            let v01 = at(i, j + 1);
            let bits = (v00 > T::zero()) as u8
                | (((v10 > T::zero()) as u8) << 1)
                | (((v11 > T::zero()) as u8) << 2)
                | (((v01 > T::zero()) as u8) << 3);
            if bits == 0 || bits == 0b1111 {
                continue;
            }
            let bottom = Edge::H(i, j);
            let top = Edge::H(i, j + 1);
            let left = Edge::V(i, j);
            let right = Edge::V(i + 1, j);
            let mut put = |e: Edge| {
                positions.entry(e).or_insert_with(|| match e {
                    Edge::H(ei, ej) => {
                        crossing(corner(ei, ej), at(ei, ej), corner(ei + 1, ej), at(ei + 1, ej))
                    }
                    Edge::V(ei, ej) => {
                        crossing(corner(ei, ej), at(ei, ej), corner(ei, ej + 1), at(ei, ej + 1))
                    }
                });
            };
            let mut emit = |a: Edge, b: Edge, segs: &mut Vec<(Edge, Edge)>| {
                put(a);
                put(b);
                segs.push((a, b));
            };
            match bits {
                0b0001 | 0b1110 => emit(bottom, left, &mut segments),
                0b0010 | 0b1101 => emit(bottom, right, &mut segments),
                0b0100 | 0b1011 => emit(right, top, &mut segments),
                0b1000 | 0b0111 => emit(left, top, &mut segments),
                0b0011 | 0b1100 => emit(left, right, &mut segments),
                0b0110 | 0b1001 => emit(bottom, top, &mut segments),
                // Diagonal ambiguity: resolve with a center sample.
                0b0101 | 0b1010 => {
                    let center = V2::new(
                        window.u0 + du * (T::of(i as f64) + T::half()),
                        window.v0 + dv * (T::of(j as f64) + T::half()),
                    );
                    let vc = f(center) - level;
                    let center_pos = vc > T::zero();
                    let v00_pos = v00 > T::zero();
                    if center_pos == v00_pos {
                        // The v00 region runs diagonally through the center.
                        emit(bottom, right, &mut segments);
                        emit(left, top, &mut segments);
                    } else {
                        emit(bottom, left, &mut segments);
                        emit(right, top, &mut segments);
                    }
                }
                _ => unreachable!("all 4-bit patterns covered"),
            }
        }
    }

    if segments.is_empty() {
        return Err(ContourError::EmptyLevelSet);
    }

    // Stitch segments into polylines by shared edges.
    let mut adjacency: HashMap<Edge, Vec<usize>> = HashMap::new();
    for (id, (a, b)) in segments.iter().enumerate() {
        adjacency.entry(*a).or_default().push(id);
        adjacency.entry(*b).or_default().push(id);
    }
    let mut used = vec![false; segments.len()];
    let mut polylines = Vec::new();

    let walk = |start: Edge, used: &mut Vec<bool>| -> Vec<Edge> {
        let mut chain = vec![start];
        let mut current = start;
        loop {
            let Some(next_seg) = adjacency[&current].iter().copied().find(|s| !used[*s]) else {
                break;
            };
            used[next_seg] = true;
            let (a, b) = segments[next_seg];
            current = if a == current { b } else { a };
            chain.push(current);
            if current == start {
                break;
            }
        }
        chain
    };

    // Open chains first, started from odd-degree edges (window boundary).
    let mut endpoints: Vec<Edge> = adjacency
        .iter()
        .filter(|(_, segs)| segs.len() == 1)
        .map(|(e, _)| *e)
        .collect();
    endpoints.sort();
    for start in endpoints {
        if adjacency[&start].iter().all(|s| used[*s]) {
            continue;
        }
        let chain = walk(start, &mut used);
        polylines.push(Polyline2 {
            points: chain.iter().map(|e| positions[e]).collect(),
            closed: false,
        });
    }
    // Remaining segments form closed loops.
    let mut loop_starts: Vec<usize> = (0..segments.len()).filter(|s| !used[*s]).collect();
    loop_starts.sort();
    for seg in loop_starts {
        if used[seg] {
            continue;
        }
        let start = segments[seg].0;
        let mut chain = walk(start, &mut used);
        if chain.len() > 2 && *chain.last().unwrap() == start {
            chain.pop();
        }
        polylines.push(Polyline2 {
            points: chain.iter().map(|e| positions[e]).collect(),
            closed: true,
        });
    }
    Ok(polylines)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    type P = V2<f64>;

    #[test]
    fn circle_contour_is_closed_and_accurate() {
        let f = |r: P| r.x * r.x + r.y * r.y;
        let window = Window::centered(2.0, 2.0);
        let lines = contour_lines(f, window, 64, 1.0).unwrap();
        assert_eq!(lines.len(), 1);
        let line = &lines[0];
        assert!(line.closed);
        let max_dev = line
            .points
            .iter()
            .map(|p| (p.norm() - 1.0).abs())
            .fold(0.0f64, f64::max);
        assert!(max_dev < 4.0 / 64.0, "radial deviation {max_dev}");
        assert!(line.points.len() > 30);
    }

    #[test]
    fn two_cosines_level_half_is_one_loop_around_origin() {
        let f = |r: P| r.x.cos() + r.y.cos();
        let window = Window::centered(PI, PI);
        let lines = contour_lines(f, window, 128, 0.5).unwrap();
        let closed: Vec<_> = lines.iter().filter(|l| l.closed).collect();
        assert_eq!(closed.len(), 1, "expected a single closed loop");
        assert_eq!(lines.len(), 1);
        let mut winding = 0.0;
        let pts = &closed[0].points;
        for k in 0..pts.len() {
            let a = pts[k];
            let b = pts[(k + 1) % pts.len()];
            winding += a.perp_dot(b - a).atan2(a.dot(b - a) + a.norm2());
        }
        assert!(
            (winding.abs() - 2.0 * PI).abs() < 0.1,
            "loop does not wind around origin: {winding}"
        );
        for p in pts {
            assert!((f(*p) - 0.5).abs() < 2e-3);
        }
    }

    #[test]
    fn two_cosines_level_zero_follows_diagonal_lines() {
        let f = |r: P| r.x.cos() + r.y.cos();
        let window = Window::centered(3.0 * PI, 3.0 * PI);
        let lines = contour_lines(f, window, 512, 0.0).unwrap();
        assert!(!lines.is_empty());
        let wrap = |x: f64| {
            let m = (x - PI).rem_euclid(2.0 * PI);
            m.min(2.0 * PI - m)
        };
        for line in &lines {
            for p in &line.points {
                // Distance (up to sqrt 2) to the set {u +/- v = pi mod 2pi}.
                let d = wrap(p.x + p.y).min(wrap(p.x - p.y));
                assert!(d < 3e-3, "point {p:?} off the diagonal line set: {d}");
            }
        }
    }

    #[test]
    fn open_lines_end_on_window_boundary() {
        let f = |r: P| r.y.cos() + 0.3 * r.x.sin();
        let window = Window::centered(2.0 * PI, 2.0 * PI);
        let lines = contour_lines(f, window, 128, 0.4).unwrap();
        let open: Vec<_> = lines.iter().filter(|l| !l.closed).collect();
        assert!(!open.is_empty());
        for line in open {
            for end in [line.points.first().unwrap(), line.points.last().unwrap()] {
                let on_u = (end.x - window.u0).abs() < 1e-9 || (end.x - window.u1).abs() < 1e-9;
                let on_v = (end.y - window.v0).abs() < 1e-9 || (end.y - window.v1).abs() < 1e-9;
                assert!(on_u || on_v, "open endpoint {end:?} not on boundary");
            }
        }
    }

    #[test]
    fn exact_corner_hits_are_handled() {
        // Window aligned so that corners land exactly on zeros of the field.
        let f = |r: P| r.x.cos() + r.y.cos();
        let window = Window::centered(PI, PI);
        let lines = contour_lines(f, window, 8, 0.0).unwrap();
        for line in &lines {
            for p in &line.points {
                assert!(f(*p).abs() < 0.08, "residual too large at {p:?}");
            }
        }
    }

    #[test]
    fn ambiguous_saddle_cells_produce_both_branches() {
        let f = |r: P| r.x * r.y;
        let window = Window::centered(1.0, 1.0);
        let lines = contour_lines(f, window, 9, -0.01).unwrap();
        assert_eq!(lines.iter().filter(|l| !l.closed).count(), 2);
        for line in &lines {
            for p in &line.points {
                assert!((f(*p) + 0.01).abs() < 5e-3);
            }
        }
    }

    #[test]
    fn empty_level_set_is_an_error() {
        let f = |r: P| r.x.cos() + r.y.cos();
        let window = Window::centered(PI, PI);
        assert!(matches!(
            contour_lines(f, window, 32, 5.0),
            Err(ContourError::EmptyLevelSet)
        ));
    }
}
