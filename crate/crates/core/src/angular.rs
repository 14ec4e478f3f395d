//! Angular diagrams: orbit regimes over the sphere of field directions.
//!
//! A scan fixes the Fermi level, sweeps unit directions of B, classifies a
//! stratified sample of orbits per direction, and aggregates each direction
//! into a single regime label. Connected patches of directions sharing one
//! integral-plane label form stability zones.

use crate::classifier::{classify_trajectory, ClassifyThresholds, Kind};
use crate::contour::{contour_lines, Window};
use crate::dispersion::Dispersion;
use crate::field::{FieldSetup, PlaneSlice};
use crate::geom::V3;
use crate::lattice::ReciprocalLattice;
use crate::num::Real;
use crate::tracer::{StepControl, StopReason, Tracer};

/// Largest coordinate searched for a reciprocal vector in the plane
/// normal to the field direction.
pub const RATIONALITY_BOUND: i64 = 50;
/// Acceptance angle for that search, in radians.
pub const RATIONALITY_TOL: f64 = 1e-6;

/// Deterministic set of unit field directions.
#[derive(Clone, Debug)]
pub struct DirectionGrid<T> {
    /// Unit vectors, pairwise distinct, no antipodal duplicates.
    pub points: Vec<V3<T>>,
    /// Requested resolution (point count before deduplication).
    pub resolution: usize,
}

impl<T: Real> DirectionGrid<T> {
    /// Wraps an explicit direction list. Inputs are normalized; zero or
    /// duplicate directions are rejected.
    pub fn from_directions(points: Vec<V3<T>>) -> Self {
        let resolution = points.len();
        let points: Vec<V3<T>> = points
            .into_iter()
            .map(|p| {
                assert!(p.norm() > T::zero(), "zero direction");
                p.normalized()
            })
            .collect();
        for i in 0..points.len() {
            for j in 0..i {
                assert!(
                    (points[i] - points[j]).norm() > T::of(1e-12),
                    "duplicate directions at {j} and {i}"
                );
            }
        }
        Self { points, resolution }
    }

    /// Largest nearest-neighbor angle over the grid, radians.
    pub fn spacing(&self) -> T {
        let mut worst = T::zero();
        for (i, p) in self.points.iter().enumerate() {
            let mut near = T::of(f64::INFINITY);
            for (j, q) in self.points.iter().enumerate() {
                if i != j {
                    near = near.min(p.angle_to(*q));
                }
            }
            if near < T::of(f64::INFINITY) {
                worst = worst.max(near);
            }
        }
        worst
    }
}

/// Spherical Fibonacci layout with `resolution` points; any point antipodal
/// to an earlier one is dropped (B and -B classify identically).
pub fn direction_grid<T: Real>(resolution: usize) -> DirectionGrid<T> {
    assert!(resolution >= 12, "resolution {resolution} < 12");
    let golden_angle = T::of(std::f64::consts::PI * (3.0 - f64::sqrt(5.0)));
    let n = T::of(resolution as f64);
    let mut points: Vec<V3<T>> = Vec::with_capacity(resolution);
    for i in 0..resolution {
        let z = T::one() - (T::of(2.0 * i as f64) + T::one()) / n;
        let r = (T::one() - z * z).max(T::zero()).sqrt();
        let phi = golden_angle * T::of(i as f64);
        let p = V3::new(r * phi.cos(), r * phi.sin(), z).normalized();
        if points.iter().all(|q| (*q + p).norm() > T::of(1e-9)) {
            points.push(p);
        }
    }
    DirectionGrid { points, resolution }
}

/// Aggregated regime of one field direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    /// Every sampled orbit closed.
    ClosedOnly,
    /// Open orbits present, all periodic up to a lattice shift.
    PeriodicOpen,
    /// Open quasiperiodic orbits confined to strips; label is the primitive
    /// integral-plane triple shared by every such orbit found.
    TopologicallyRegular([i64; 3]),
    /// At least one orbit showed sustained strip-width growth within the
    /// budget. A flag, never a certificate.
    ChaoticCandidate,
    /// Sampling failed or the evidence conflicts.
    Undetermined,
}

impl Regime {
    pub fn label(&self) -> &'static str {
        match self {
            Regime::ClosedOnly => "closed_only",
            Regime::PeriodicOpen => "periodic_open",
            Regime::TopologicallyRegular(_) => "topologically_regular",
            Regime::ChaoticCandidate => "chaotic_candidate",
            Regime::Undetermined => "undetermined",
        }
    }

    pub fn m(&self) -> Option<[i64; 3]> {
        match self {
            Regime::TopologicallyRegular(m) => Some(*m),
            _ => None,
        }
    }
}

/// One scanned direction with its regime and diagnostics.
#[derive(Clone, Debug)]
pub struct DiagramCell<T> {
    pub direction: V3<T>,
    pub regime: Regime,
    /// Smallest max-coordinate of a reciprocal vector lying in the plane
    /// normal to the direction, if one exists within the search bound.
    pub rationality: Option<i64>,
    /// Arc-length cap each sampled orbit was traced under.
    pub arc_budget: T,
}

/// Per-direction sampling caps.
#[derive(Clone, Debug)]
pub struct ScanBudget<T> {
    /// Arc-length cap per orbit, in units of the reciprocal cell scale.
    pub arc_cells: T,
    /// Stratified plane offsets per direction.
    pub n_slices: usize,
    /// Level-set components traced per slice.
    pub branches_per_slice: usize,
    /// Slice span along the direction, in cells.
    pub span_cells: T,
    /// Seeding window edge, in cells.
    pub window_cells: T,
    /// Marching grid for seed extraction.
    pub grid_n: usize,
    /// Excursion cap along the claimed plane normal, in cells. An orbit
    /// whose label is genuine stays inside one slab of its carrier plane;
    /// a budget-starved accidental match meanders far past it.
    pub slab_cells: T,
    pub thresholds: ClassifyThresholds<T>,
    pub ctrl: StepControl<T>,
}

impl<T: Real> Default for ScanBudget<T> {
    fn default() -> Self {
        // Chaos flags stay advisory: a strip whose width still creeps
        // toward saturation at the budget's end fits exponents near 0.1,
        // while sustained chaotic growth fits 0.4 and above. The scan
        // default splits those regimes.
        let mut thresholds = ClassifyThresholds::default();
        thresholds.min_growth_exponent = T::of(0.25);
        Self {
            arc_cells: T::of(1e4),
            n_slices: 8,
            branches_per_slice: 4,
            span_cells: T::one(),
            window_cells: T::one(),
            grid_n: 96,
            slab_cells: T::one(),
            thresholds,
            ctrl: StepControl::default(),
        }
    }
}

/// Classifies one field direction by tracing up to
/// `n_slices * branches_per_slice` orbits and aggregating their kinds.
pub fn scan_direction<T: Real, D: Dispersion<T>>(
    disp: &D,
    lattice: &ReciprocalLattice<T>,
    fermi: T,
    direction: V3<T>,
    budget: &ScanBudget<T>,
) -> DiagramCell<T> {
    let direction = direction.normalized();
    let arc_budget = budget.arc_cells * lattice.cell_scale();
    let rationality = rationality(direction, lattice);
    let cell = |regime| DiagramCell {
        direction,
        regime,
        rationality,
        arc_budget,
    };

    let setup = FieldSetup::from_direction(direction);
    let d_b = lattice
        .basis()
        .iter()
        .map(|a| a.dot(direction).abs())
        .fold(T::zero(), T::max);
    if !(d_b > T::zero()) {
        return cell(Regime::Undetermined);
    }
    let span = budget.span_cells * d_b;
    let half = lattice.cell_scale() * budget.window_cells * T::half();
    let window = Window::centered(half, half);

    let mut kinds: Vec<(Kind, Option<[i64; 3]>)> = Vec::new();
    for i in 0..budget.n_slices.max(1) {
        let h = span
            * ((T::of(i as f64) + T::half()) / T::of(budget.n_slices.max(1) as f64) - T::half());
        let slice = PlaneSlice::new(setup, h);
        let g = |r| disp.energy(slice.lift(r)) - fermi;
        let Ok(mut pieces) = contour_lines(g, window, budget.grid_n, T::zero()) else {
            continue;
        };
        pieces.sort_by(|a, b| {
            b.arc_length()
                .partial_cmp(&a.arc_length())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let tracer = Tracer::new(disp, slice, fermi, Some(lattice), budget.ctrl);
        for piece in pieces.iter().take(budget.branches_per_slice.max(1)) {
            if piece.points.is_empty() {
                continue;
            }
            let seed2 = piece.points[piece.points.len() / 2];
            let Ok(seed) = tracer.project_seed(slice.lift(seed2)) else {
                kinds.push((Kind::Undetermined, None));
                continue;
            };
            let Ok(mut traj) = tracer.trace(seed, arc_budget) else {
                kinds.push((Kind::Undetermined, None));
                continue;
            };
            let mut extensions = 0usize;
            while traj.stop == StopReason::Budget
                && !traj.closure.is_periodic()
                && traj.total_arc() < arc_budget
                && extensions < 8
            {
                if tracer.extend(&mut traj, arc_budget).is_err() {
                    break;
                }
                extensions += 1;
            }
            let mut class = classify_trajectory(&traj, lattice, &slice, &budget.thresholds);
            if class.kind == Kind::TopologicallyRegular {
                let e = class
                    .m
                    .map(|m| slab_excursion(&traj.points, lattice, m))
                    .unwrap_or(T::of(f64::INFINITY));
                if !(e <= budget.slab_cells * lattice.cell_scale()) {
                    class.kind = Kind::Undetermined;
                    class.m = None;
                }
            }
            kinds.push((class.kind, class.m));
        }
    }
    cell(aggregate(&kinds))
}

/// Scans every grid direction; output order follows the grid.
pub fn scan_directions<T: Real, D: Dispersion<T>>(
    disp: &D,
    lattice: &ReciprocalLattice<T>,
    fermi: T,
    grid: &DirectionGrid<T>,
    budget: &ScanBudget<T>,
) -> Vec<DiagramCell<T>> {
    grid.points
        .iter()
        .map(|d| scan_direction(disp, lattice, fermi, *d, budget))
        .collect()
}

/// Precedence: chaos flags the cell, one shared integral plane labels it,
/// lattice-periodic open orbits come next, and a cell is ClosedOnly only
/// when every sampled orbit closed.
fn aggregate(kinds: &[(Kind, Option<[i64; 3]>)]) -> Regime {
    if kinds.is_empty() {
        return Regime::Undetermined;
    }
    if kinds.iter().any(|(k, _)| *k == Kind::Chaotic) {
        return Regime::ChaoticCandidate;
    }
    let labels: Vec<[i64; 3]> = kinds
        .iter()
        .filter_map(|(k, m)| (*k == Kind::TopologicallyRegular).then_some(*m).flatten())
        .collect();
    if let Some(first) = labels.first() {
        if labels.iter().all(|m| m == first) {
            return Regime::TopologicallyRegular(*first);
        }
        return Regime::Undetermined;
    }
    if kinds.iter().any(|(k, _)| *k == Kind::PeriodicOpen) {
        return Regime::PeriodicOpen;
    }
    if kinds.iter().any(|(k, _)| *k == Kind::Undetermined) {
        return Regime::Undetermined;
    }
    Regime::ClosedOnly
}

/// Largest excursion of the points along the unit normal of the claimed
/// carrier plane (an integer combination of direct-lattice vectors).
fn slab_excursion<T: Real>(
    points: &[V3<T>],
    lattice: &ReciprocalLattice<T>,
    m: [i64; 3],
) -> T {
    let dual = lattice.dual_basis();
    let n = dual[0] * T::of(m[0] as f64)
        + dual[1] * T::of(m[1] as f64)
        + dual[2] * T::of(m[2] as f64);
    if !(n.norm() > T::zero()) {
        return T::of(f64::INFINITY);
    }
    let n = n.normalized();
    let p0 = points[0];
    points
        .iter()
        .map(|p| (*p - p0).dot(n).abs())
        .fold(T::zero(), T::max)
}

/// Smallest q <= RATIONALITY_BOUND such that some reciprocal vector with
/// integer coordinates of magnitude <= q lies within RATIONALITY_TOL of the
/// plane normal to `direction`.
pub fn rationality<T: Real>(direction: V3<T>, lattice: &ReciprocalLattice<T>) -> Option<i64> {
    let b = direction.normalized();
    let tol = T::of(RATIONALITY_TOL.sin());
    let mut best: Option<i64> = None;
    for m1 in -RATIONALITY_BOUND..=RATIONALITY_BOUND {
        for m2 in -RATIONALITY_BOUND..=RATIONALITY_BOUND {
            for m3 in -RATIONALITY_BOUND..=RATIONALITY_BOUND {
                if m1 == 0 && m2 == 0 && m3 == 0 {
                    continue;
                }
                let q = m1.abs().max(m2.abs()).max(m3.abs());
                if best.is_some_and(|b| q >= b) {
                    continue;
                }
                let g = lattice.integer_vector([m1, m2, m3]);
                if g.normalized().dot(b).abs() <= tol {
                    best = Some(q);
                }
            }
        }
    }
    best
}

/// Connected patch of directions sharing one integral-plane label.
#[derive(Clone, Debug)]
pub struct Zone<T> {
    pub m: [i64; 3],
    /// Cell indices into the scanned list, ascending.
    pub members: Vec<usize>,
    /// Member directions on the adjacency frontier, ordered by azimuth
    /// around the zone mean. Falls back to all members when the zone has
    /// no exterior neighbor.
    pub boundary: Vec<V3<T>>,
}

/// Groups TopologicallyRegular cells into zones: connected components of
/// the direction adjacency graph restricted to one label. Adjacency is
/// symmetric 6-nearest-neighbor under the antipodal-identified angle, so a
/// zone and its mirror image on the far hemisphere count once.
pub fn extract_zones<T: Real>(cells: &[DiagramCell<T>]) -> Vec<Zone<T>> {
    let n = cells.len();
    let adj = adjacency(cells, 6);
    let mut zones = Vec::new();
    let mut used = vec![false; n];
    for start in 0..n {
        let Regime::TopologicallyRegular(m) = cells[start].regime else {
            continue;
        };
        if used[start] {
            continue;
        }
        let mut members = vec![start];
        used[start] = true;
        let mut queue = vec![start];
        while let Some(i) = queue.pop() {
            for &j in &adj[i] {
                if !used[j] && cells[j].regime == Regime::TopologicallyRegular(m) {
                    used[j] = true;
                    members.push(j);
                    queue.push(j);
                }
            }
        }
        members.sort_unstable();
        let inside = |j: usize| members.binary_search(&j).is_ok();
        let mut frontier: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&i| adj[i].iter().any(|&j| !inside(j)))
            .collect();
        if frontier.is_empty() {
            frontier = members.clone();
        }
        let boundary = order_by_azimuth(cells, &frontier);
        zones.push(Zone {
            m,
            members,
            boundary,
        });
    }
    zones
}

/// Symmetric k-nearest-neighbor lists under d(p,q) = min(|p-q|, |p+q|).
fn adjacency<T: Real>(cells: &[DiagramCell<T>], k: usize) -> Vec<Vec<usize>> {
    let n = cells.len();
    let k = k.min(n.saturating_sub(1));
    let dist = |i: usize, j: usize| {
        let p = cells[i].direction;
        let q = cells[j].direction;
        (p - q).norm().min((p + q).norm())
    };
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| {
            dist(i, a)
                .partial_cmp(&dist(i, b))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        for &j in order.iter().take(k) {
            if !adj[i].contains(&j) {
                adj[i].push(j);
            }
            if !adj[j].contains(&i) {
                adj[j].push(i);
            }
        }
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    adj
}

fn order_by_azimuth<T: Real>(cells: &[DiagramCell<T>], idx: &[usize]) -> Vec<V3<T>> {
    let mut mean = V3::zero();
    for &i in idx {
        mean = mean + cells[i].direction;
    }
    if mean.norm() < T::of(1e-12) {
        return idx.iter().map(|&i| cells[i].direction).collect();
    }
    let mean = mean.normalized();
    let pick = if mean.x.abs() < T::of(0.9) {
        V3::new(T::one(), T::zero(), T::zero())
    } else {
        V3::new(T::zero(), T::one(), T::zero())
    };
    let t1 = mean.cross(pick).normalized();
    let t2 = mean.cross(t1);
    let mut tagged: Vec<(T, usize)> = idx
        .iter()
        .map(|&i| {
            let d = cells[i].direction;
            (d.dot(t2).atan2(d.dot(t1)), i)
        })
        .collect();
    tagged.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
    });
    tagged.into_iter().map(|(_, i)| cells[i].direction).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::{FourierDispersion, Harmonic};
    use crate::lattice::{reciprocal_from_direct, DirectLattice};
    use std::f64::consts::PI;

    type V = V3<f64>;

    fn cubic_recip() -> ReciprocalLattice<f64> {
        reciprocal_from_direct(&DirectLattice::cubic()).unwrap()
    }

    /// Two corrugated planes pz ~ +-pi/2; open orbits carried by m=(0,0,1).
    fn corrugated() -> FourierDispersion<f64> {
        FourierDispersion::new(
            cubic_recip(),
            vec![
                Harmonic::new([0, 0, 1], 1.0, 0.0),
                Harmonic::new([1, 0, 0], 0.2, 0.0),
                Harmonic::new([0, 1, 0], 0.2, 0.0),
            ],
        )
    }

    fn tilted(theta: f64, phi: f64) -> V {
        V::new(
            theta.sin() * phi.cos(),
            theta.sin() * phi.sin(),
            theta.cos(),
        )
    }

    /// Fibonacci layout on the polar cap theta in [lo, hi].
    fn cap_grid(n: usize, lo: f64, hi: f64) -> DirectionGrid<f64> {
        let ga = PI * (3.0 - 5.0f64.sqrt());
        let (clo, chi) = (hi.cos(), lo.cos());
        let points = (0..n)
            .map(|i| {
                let z = chi - (chi - clo) * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).max(0.0).sqrt();
                let phi = ga * i as f64;
                V::new(r * phi.cos(), r * phi.sin(), z)
            })
            .collect();
        DirectionGrid::from_directions(points)
    }

    /// Corrugated-sheet band spans 0.82 units along z, so a 0.25-cell slab
    /// cap keeps genuine labels with 2x margin while cutting the wide
    /// meanders that ride accidental planes.
    fn scan_budget(arc_cells: f64, n_slices: usize, branches: usize) -> ScanBudget<f64> {
        ScanBudget {
            arc_cells,
            n_slices,
            branches_per_slice: branches,
            grid_n: 64,
            slab_cells: 0.25,
            ..ScanBudget::default()
        }
    }

    #[test]
    fn fibonacci_grid_is_unit_distinct_and_spread() {
        let g: DirectionGrid<f64> = direction_grid(12);
        assert_eq!(g.points.len(), 12);
        let mut min_angle = f64::INFINITY;
        for (i, p) in g.points.iter().enumerate() {
            assert!((p.norm() - 1.0).abs() < 1e-12);
            for q in &g.points[..i] {
                min_angle = min_angle.min(p.angle_to(*q));
            }
        }
        assert!(
            min_angle > 30.0 * PI / 180.0,
            "min pairwise angle {:.3} rad",
            min_angle
        );
    }

    #[test]
    fn fibonacci_grid_covers_evenly() {
        let n = 1000usize;
        let g: DirectionGrid<f64> = direction_grid(n);
        assert_eq!(g.points.len(), n);
        let mut by_z: Vec<usize> = (0..n).collect();
        by_z.sort_by(|&a, &b| g.points[a].z.partial_cmp(&g.points[b].z).unwrap());
        let zs: Vec<f64> = by_z.iter().map(|&i| g.points[i].z).collect();

        // Voronoi areas by a sin-weighted polar quadrature; uniform theta
        // rows stay fine near the poles where the cells are smallest. A z
        // window far above the covering radius bounds the nearest search.
        let (jn, kn) = (900usize, 700usize);
        let mut areas = vec![0.0f64; n];
        let mut total = 0.0;
        for j in 0..jn {
            let theta = PI * (j as f64 + 0.5) / jn as f64;
            let (z, r, w) = (theta.cos(), theta.sin(), theta.sin());
            let lo = zs.partition_point(|&v| v < z - 0.2);
            let hi = zs.partition_point(|&v| v < z + 0.2);
            for k in 0..kn {
                let phi = 2.0 * PI * (k as f64 + 0.5) / kn as f64;
                let p = V::new(r * phi.cos(), r * phi.sin(), z);
                let mut best = (f64::INFINITY, 0usize);
                for &idx in &by_z[lo..hi] {
                    let d = (g.points[idx] - p).norm();
                    if d < best.0 {
                        best = (d, idx);
                    }
                }
                areas[best.1] += w;
                total += w;
            }
        }
        let expected = total / n as f64;
        for (i, &a) in areas.iter().enumerate() {
            let rel = a / expected;
            assert!(
                (0.8..=1.2).contains(&rel),
                "cell {i} area ratio {rel:.3} off by more than 20%"
            );
        }
    }

    #[test]
    fn explicit_directions_pass_through() {
        let dirs = vec![
            V::new(0.0, 0.0, 1.0),
            V::new(1.0, 0.0, 0.0),
            V::new(0.6, 0.8, 0.0),
        ];
        let g = DirectionGrid::from_directions(dirs.clone());
        assert_eq!(g.points, dirs);
        assert_eq!(g.resolution, 3);
    }

    #[test]
    fn rationality_detects_rational_planes() {
        let lat = cubic_recip();
        assert_eq!(rationality(V::new(0.0, 0.0, 1.0), &lat), Some(1));
        assert_eq!(rationality(V::new(1.0, 1.0, 0.0).normalized(), &lat), Some(1));
        // 2 m1 + m2 + 4 m3 = 0 has no solution with coordinates in {-1,0,1}
        // besides zero; (1,2,-1) solves it.
        assert_eq!(rationality(V::new(2.0, 1.0, 4.0).normalized(), &lat), Some(2));
    }

    #[test]
    fn pockets_scan_is_closed_only() {
        let d: FourierDispersion<f64> = FourierDispersion::cubic();
        let lat = *d.lattice();
        let grid: DirectionGrid<f64> = direction_grid(12);
        let cells = scan_directions(&d, &lat, 2.5, &grid, &scan_budget(40.0, 4, 2));
        for c in &cells {
            assert_eq!(c.regime, Regime::ClosedOnly, "direction {:?}", c.direction);
        }
        assert!(extract_zones(&cells).is_empty());
    }

    #[test]
    fn corrugated_normal_field_gives_periodic_open() {
        let d = corrugated();
        let lat = cubic_recip();
        let grid = DirectionGrid::from_directions(vec![V::new(1.0, 0.0, 0.0)]);
        let cells = scan_directions(&d, &lat, 0.0, &grid, &scan_budget(60.0, 4, 2));
        assert_eq!(cells[0].regime, Regime::PeriodicOpen);
        assert_eq!(cells[0].rationality, Some(1));
    }

    #[test]
    fn corrugated_cap_scan_labels_z_zone() {
        let d = corrugated();
        let lat = cubic_recip();
        let grid = cap_grid(24, 0.28, 0.42);
        let budget = scan_budget(300.0, 8, 3);
        let cells = scan_directions(&d, &lat, 0.0, &grid, &budget);

        let mut regular = 0usize;
        for c in &cells {
            match c.regime {
                Regime::TopologicallyRegular(m) => {
                    assert_eq!(m, [0, 0, 1], "direction {:?}", c.direction);
                    regular += 1;
                }
                Regime::PeriodicOpen | Regime::Undetermined => {}
                other => panic!("unexpected regime {other:?} at {:?}", c.direction),
            }
            assert_eq!(c.arc_budget, budget.arc_cells * lat.cell_scale());
        }
        assert!(regular * 10 >= cells.len() * 7, "{regular}/{} regular", cells.len());

        let zones = extract_zones(&cells);
        assert_eq!(zones.len(), 1, "zones: {:?}", zones.len());
        assert_eq!(zones[0].m, [0, 0, 1]);
        assert_eq!(zones[0].members.len(), regular);
        assert!(!zones[0].boundary.is_empty());

        // An interior member keeps its label under a 1e-3 rad rotation.
        // Deepest candidate: all neighbors in the zone, nearest the zone
        // mean, so the probe sits far from both regime frontiers.
        let adj = adjacency(&cells, 6);
        let mut mean = V::zero();
        for &i in &zones[0].members {
            mean = mean + cells[i].direction;
        }
        let mean = mean.normalized();
        let interior = zones[0]
            .members
            .iter()
            .copied()
            .filter(|&i| adj[i].iter().all(|&j| zones[0].members.contains(&j)))
            .min_by(|&a, &b| {
                mean.angle_to(cells[a].direction)
                    .partial_cmp(&mean.angle_to(cells[b].direction))
                    .unwrap()
            })
            .expect("no interior cell in zone");
        let dir = cells[interior].direction;
        let t1 = dir.cross(V::new(1.0, 0.0, 0.0)).normalized();
        for tangent in [t1, dir.cross(t1)] {
            let rotated = dir * 1e-3f64.cos() + tangent * 1e-3f64.sin();
            let cell = scan_direction(&d, &lat, 0.0, rotated, &budget);
            assert_eq!(
                cell.regime,
                Regime::TopologicallyRegular([0, 0, 1]),
                "rotation toward {tangent:?}"
            );
        }
    }

    #[test]
    fn antipodal_directions_agree() {
        let d = corrugated();
        let lat = cubic_recip();
        let dir = tilted(0.3, 0.7);
        let budget = scan_budget(150.0, 8, 3);
        let plus = scan_direction(&d, &lat, 0.0, dir, &budget);
        let minus = scan_direction(&d, &lat, 0.0, -dir, &budget);
        assert_eq!(plus.regime, Regime::TopologicallyRegular([0, 0, 1]));
        assert_eq!(plus.regime, minus.regime);
        assert_eq!(plus.rationality, minus.rationality);

        let pockets: FourierDispersion<f64> = FourierDispersion::cubic();
        let p = scan_direction(&pockets, &lat, 2.5, dir, &scan_budget(40.0, 4, 2));
        let q = scan_direction(&pockets, &lat, 2.5, -dir, &scan_budget(40.0, 4, 2));
        assert_eq!(p.regime, Regime::ClosedOnly);
        assert_eq!(q.regime, Regime::ClosedOnly);
    }

    #[test]
    fn aggregate_follows_precedence() {
        use Kind::*;
        let m = Some([0, 0, 1]);
        assert_eq!(aggregate(&[]), Regime::Undetermined);
        assert_eq!(aggregate(&[(Closed, None), (Closed, None)]), Regime::ClosedOnly);
        assert_eq!(
            aggregate(&[(Closed, None), (Undetermined, None)]),
            Regime::Undetermined
        );
        assert_eq!(
            aggregate(&[(Closed, None), (PeriodicOpen, None), (Undetermined, None)]),
            Regime::PeriodicOpen
        );
        assert_eq!(
            aggregate(&[(PeriodicOpen, None), (TopologicallyRegular, m)]),
            Regime::TopologicallyRegular([0, 0, 1])
        );
        assert_eq!(
            aggregate(&[
                (TopologicallyRegular, m),
                (TopologicallyRegular, Some([1, 0, 0]))
            ]),
            Regime::Undetermined
        );
        assert_eq!(
            aggregate(&[(TopologicallyRegular, m), (Chaotic, None)]),
            Regime::ChaoticCandidate
        );
    }

    #[test]
    fn synthetic_two_label_cells_make_two_zones() {
        let mk = |dir: V, regime| DiagramCell {
            direction: dir.normalized(),
            regime,
            rationality: None,
            arc_budget: 1.0,
        };
        let mut cells = Vec::new();
        for i in 0..5 {
            let phi = 2.0 * PI * i as f64 / 5.0;
            cells.push(mk(tilted(0.1, phi), Regime::TopologicallyRegular([0, 0, 1])));
        }
        for i in 0..4 {
            let phi = 2.0 * PI * i as f64 / 4.0;
            let d = V::new(
                (0.1f64).cos(),
                (0.1f64).sin() * phi.cos(),
                (0.1f64).sin() * phi.sin(),
            );
            cells.push(mk(d, Regime::TopologicallyRegular([1, 0, 0])));
        }
        cells.push(mk(V::new(0.0, 1.0, 0.0), Regime::ClosedOnly));

        let zones = extract_zones(&cells);
        assert_eq!(zones.len(), 2);
        let z001 = zones.iter().find(|z| z.m == [0, 0, 1]).unwrap();
        let z100 = zones.iter().find(|z| z.m == [1, 0, 0]).unwrap();
        assert_eq!(z001.members, vec![0, 1, 2, 3, 4]);
        assert_eq!(z100.members, vec![5, 6, 7, 8]);
        for z in &zones {
            assert!(!z.boundary.is_empty());
        }
    }

    #[test]
    fn refinement_keeps_zone_interiors() {
        let d = corrugated();
        let lat = cubic_recip();
        let budget = scan_budget(150.0, 8, 2);
        let coarse = cap_grid(14, 0.26, 0.40);
        let fine = cap_grid(28, 0.26, 0.40);
        let cells_a = scan_directions(&d, &lat, 0.0, &coarse, &budget);
        let cells_b = scan_directions(&d, &lat, 0.0, &fine, &budget);
        let zones_a = extract_zones(&cells_a);
        assert!(!zones_a.is_empty());
        let spacing = coarse.spacing();
        let adj = adjacency(&cells_a, 6);

        let mut checked = 0usize;
        for z in &zones_a {
            // Interior = members two grid spacings inside the adjacency
            // frontier; a zone with no frontier in view is all interior.
            let frontier: Vec<usize> = z
                .members
                .iter()
                .copied()
                .filter(|&i| adj[i].iter().any(|j| !z.members.contains(j)))
                .collect();
            for &i in &z.members {
                let dir = cells_a[i].direction;
                let to_frontier = frontier
                    .iter()
                    .map(|&f| dir.angle_to(cells_a[f].direction))
                    .fold(f64::INFINITY, f64::min);
                if to_frontier <= 2.0 * spacing {
                    continue;
                }
                let nearest = cells_b
                    .iter()
                    .min_by(|a, b| {
                        dir.angle_to(a.direction)
                            .partial_cmp(&dir.angle_to(b.direction))
                            .unwrap()
                    })
                    .unwrap();
                assert_eq!(
                    nearest.regime,
                    Regime::TopologicallyRegular(z.m),
                    "interior {dir:?} relabeled at doubled resolution"
                );
                checked += 1;
            }
        }
        assert!(checked > 0, "no interior cells found");
    }
}
