//! Singular points of the magnetic flow: points on the energy surface where
//! the in-plane gradient vanishes. Centers and saddles are told apart by the
//! restricted Hessian, and the saddle/center tally gives the Euler
//! characteristic of the full energy surface.

use thiserror::Error;

use crate::dispersion::{Dispersion, FourierDispersion};
use crate::geom::{M33, V3};
use crate::lattice::ReciprocalLattice;
use crate::num::Real;

#[derive(Debug, Error)]
pub enum SingularError {
    #[error("center/saddle tally gives odd Euler characteristic {chi}")]
    OddEuler { chi: i64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SingularKind {
    /// Extremum of the plane height on the surface; orbits encircle it.
    Center,
    /// Separatrix crossing; the flow stalls here.
    Saddle,
}

#[derive(Clone, Copy, Debug)]
pub struct SingularPoint<T> {
    /// Torus-reduced position.
    pub p: V3<T>,
    pub kind: SingularKind,
    /// Plane height p.b_hat at the point.
    pub height: T,
}

/// Finds all singular points of the flow for direction `b_hat` on the level
/// `fermi`, one representative per unit cell. Multi-start Newton on the
/// system (e1.grad, e2.grad, eps - fermi) over a fractional grid.
pub fn find_singular_points<T: Real>(
    disp: &FourierDispersion<T>,
    b_hat: V3<T>,
    fermi: T,
    grid_n: usize,
) -> Result<Vec<SingularPoint<T>>, SingularError> {
    let lat: &ReciprocalLattice<T> = disp.lattice();
    let setup = crate::field::FieldSetup::from_direction(b_hat);
    let (e1, e2, b) = (setup.e1, setup.e2, setup.b_hat);
    let scale = lat.cell_scale();
    let tol_res = T::of(1e-11);
    let tol_dup = T::of(1e-6) * scale;

    let mut found: Vec<SingularPoint<T>> = Vec::new();
    let n = grid_n.max(2);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let f = V3::new(
                    T::of((i as f64 + 0.5) / n as f64),
                    T::of((j as f64 + 0.5) / n as f64),
                    T::of((k as f64 + 0.5) / n as f64),
                );
                let start = lat.a1 * f.x + lat.a2 * f.y + lat.a3 * f.z;
                let Some(p) = newton_root(disp, e1, e2, b, fermi, start, scale, tol_res) else {
                    continue;
                };
                let (reduced, _) = lat.reduce_to_torus(p);
                if found
                    .iter()
                    .any(|s| torus_distance(lat, s.p, reduced) < tol_dup)
                {
                    continue;
                }
                let hess = disp.hessian(reduced);
                let h11 = quad_form(&hess, e1, e1);
                let h12 = quad_form(&hess, e1, e2);
                let h22 = quad_form(&hess, e2, e2);
                let det = h11 * h22 - h12 * h12;
                if det.abs() < T::of(1e-9) {
                    // Degenerate critical point; outside the classification.
                    continue;
                }
                let kind = if det > T::zero() {
                    SingularKind::Center
                } else {
                    SingularKind::Saddle
                };
                found.push(SingularPoint {
                    p: reduced,
                    kind,
                    height: reduced.dot(b),
                });
            }
        }
    }
    found.sort_by(|a, b| {
        a.height
            .partial_cmp(&b.height)
            .unwrap()
            .then_with(|| a.p.x.partial_cmp(&b.p.x).unwrap())
            .then_with(|| a.p.y.partial_cmp(&b.p.y).unwrap())
    });
    Ok(found)
}

/// Euler characteristic and genus of the energy surface from the critical
/// points of the height function p.b_hat: chi = #centers - #saddles.
pub fn surface_euler_characteristic<T: Real>(
    points: &[SingularPoint<T>],
) -> Result<(i64, i64), SingularError> {
    let centers = points
        .iter()
        .filter(|p| p.kind == SingularKind::Center)
        .count() as i64;
    let saddles = points.len() as i64 - centers;
    let chi = centers - saddles;
    if (2 - chi) % 2 != 0 {
        return Err(SingularError::OddEuler { chi });
    }
    Ok((chi, (2 - chi) / 2))
}

fn quad_form<T: Real>(h: &M33<T>, u: V3<T>, v: V3<T>) -> T {
    u.dot(h.mul_vec(v))
}

fn torus_distance<T: Real>(lat: &ReciprocalLattice<T>, a: V3<T>, b: V3<T>) -> T {
    let (_, resid) = lat.nearest_lattice_vector(a - b);
    resid.norm()
}

/// Damped Newton on F = (e1.grad, e2.grad, eps - fermi) with the Jacobian
/// rows (e1^T H, e2^T H, grad^T).
#[allow(clippy::too_many_arguments)]
fn newton_root<T: Real>(
    disp: &FourierDispersion<T>,
    e1: V3<T>,
    e2: V3<T>,
    b: V3<T>,
    fermi: T,
    start: V3<T>,
    scale: T,
    tol: T,
) -> Option<V3<T>> {
    let _ = b;
    let mut p = start;
    let cap = scale * T::of(0.25);
    let mut res = residual(disp, e1, e2, fermi, p);
    for _ in 0..60 {
        if res < tol {
            return Some(p);
        }
        let g = disp.gradient(p);
        let h = disp.hessian(p);
        // The Hessian is symmetric, so e^T H = (H e)^T.
        let jac = M33::from_rows(h.mul_vec(e1), h.mul_vec(e2), g);
        let f = V3::new(e1.dot(g), e2.dot(g), disp.energy(p) - fermi);
        let mut step = jac.solve(-f)?;
        let n = step.norm();
        if n > cap {
            step = step * (cap / n);
        }
        // Backtracking keeps the iteration inside the basin.
        let mut lambda = T::one();
        let mut accepted = false;
        for _ in 0..5 {
            let q = p + step * lambda;
            let r = residual(disp, e1, e2, fermi, q);
            if r < res {
                p = q;
                res = r;
                accepted = true;
                break;
            }
            lambda *= T::half();
        }
        if !accepted {
            return None;
        }
    }
    (res < tol).then_some(p)
}

fn residual<T: Real>(
    disp: &FourierDispersion<T>,
    e1: V3<T>,
    e2: V3<T>,
    fermi: T,
    p: V3<T>,
) -> T {
    let g = disp.gradient(p);
    let fe = disp.energy(p) - fermi;
    (e1.dot(g).powi(2) + e2.dot(g).powi(2) + fe * fe).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    type V = V3<f64>;

    #[test]
    fn cubic_half_filling_has_four_saddles_genus_three() {
        let d: FourierDispersion<f64> = FourierDispersion::cubic();
        let pts = find_singular_points(&d, V::new(0.0, 0.0, 1.0), 0.0, 12).unwrap();
        assert_eq!(pts.len(), 4, "points: {pts:?}");
        assert!(pts.iter().all(|p| p.kind == SingularKind::Saddle));
        // Expected saddles: (0, pi, +-pi/2) and (pi, 0, +-pi/2) on the torus.
        let expected = [
            V::new(0.0, PI, PI / 2.0),
            V::new(PI, 0.0, PI / 2.0),
            V::new(0.0, PI, 3.0 * PI / 2.0),
            V::new(PI, 0.0, 3.0 * PI / 2.0),
        ];
        let lat = *d.lattice();
        for e in expected {
            assert!(
                pts.iter()
                    .any(|s| torus_distance(&lat, s.p, e) < 1e-8),
                "missing saddle near {e:?}"
            );
        }
        let (chi, genus) = surface_euler_characteristic(&pts).unwrap();
        assert_eq!(chi, -4);
        assert_eq!(genus, 3);
    }

    #[test]
    fn cubic_pocket_level_has_two_centers_genus_zero() {
        let d: FourierDispersion<f64> = FourierDispersion::cubic();
        let pts = find_singular_points(&d, V::new(0.0, 0.0, 1.0), 2.9, 12).unwrap();
        assert_eq!(pts.len(), 2, "points: {pts:?}");
        assert!(pts.iter().all(|p| p.kind == SingularKind::Center));
        let (chi, genus) = surface_euler_characteristic(&pts).unwrap();
        assert_eq!(chi, 2);
        assert_eq!(genus, 0);
    }

    #[test]
    fn saddle_heights_match_slice_planes() {
        let d: FourierDispersion<f64> = FourierDispersion::cubic();
        let pts = find_singular_points(&d, V::new(0.0, 0.0, 1.0), 0.0, 12).unwrap();
        for p in &pts {
            let r = (p.height - PI / 2.0)
                .abs()
                .min((p.height - 3.0 * PI / 2.0).abs());
            assert!(r < 1e-8, "height {} off the saddle planes", p.height);
        }
    }

    #[test]
    fn tilted_direction_still_tallies_even_euler() {
        let d: FourierDispersion<f64> = FourierDispersion::cubic();
        let b = V::new(0.3, 0.1, 1.0).normalized();
        let pts = find_singular_points(&d, b, 0.0, 12).unwrap();
        let (chi, _) = surface_euler_characteristic(&pts).unwrap();
        assert!(chi % 2 == 0);
        assert_eq!(chi, -4, "half-filling surface is genus 3 for generic b");
    }
}
