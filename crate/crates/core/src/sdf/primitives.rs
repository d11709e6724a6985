//! Closed-form signed distances and gradients for the analytic primitives.
//!
//! All primitives are centered at the origin with the symmetry axis on +z.
//! Gradient functions return `None` on degenerate loci (e.g. the rotation
//! axis while the radial direction is active); callers fall back to central
//! differences there.

use glam::{DVec2, DVec3};

#[inline]
fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Radial unit vector in the xy-plane, `None` on the z-axis.
#[inline]
fn radial_dir(p: DVec3) -> Option<DVec3> {
    let rho = p.x.hypot(p.y);
    if rho < 1e-12 {
        None
    } else {
        Some(DVec3::new(p.x / rho, p.y / rho, 0.0))
    }
}

/// Lifts a 2D gradient in (rho, z) profile coordinates back to 3D.
#[inline]
fn lift_profile_gradient(p: DVec3, g_rho: f64, g_z: f64) -> Option<DVec3> {
    if g_rho.abs() < 1e-15 {
        return Some(DVec3::new(0.0, 0.0, g_z));
    }
    radial_dir(p).map(|e_rho| e_rho * g_rho + DVec3::new(0.0, 0.0, g_z))
}

pub fn sphere_distance(radius: f64, p: DVec3) -> f64 {
    p.length() - radius
}

pub fn sphere_gradient(_radius: f64, p: DVec3) -> Option<DVec3> {
    let len = p.length();
    if len < 1e-12 {
        None
    } else {
        Some(p / len)
    }
}

pub fn box_distance(half: DVec3, p: DVec3) -> f64 {
    let q = p.abs() - half;
    let outside = q.max(DVec3::ZERO).length();
    let inside = q.max_element().min(0.0);
    outside + inside
}

pub fn box_gradient(half: DVec3, p: DVec3) -> Option<DVec3> {
    let q = p.abs() - half;
    let m = q.max(DVec3::ZERO);
    let outside = m.length();
    if outside > 1e-12 {
        let g = m / outside;
        return Some(DVec3::new(
            g.x * sign(p.x),
            g.y * sign(p.y),
            g.z * sign(p.z),
        ));
    }
    // Interior: nearest face along the largest (least negative) component.
    let mut axis = 0;
    let mut best = q.x;
    if q.y > best {
        axis = 1;
        best = q.y;
    }
    if q.z > best {
        axis = 2;
    }
    let mut g = DVec3::ZERO;
    g[axis] = sign(p[axis]);
    Some(g)
}

pub fn cylinder_distance(radius: f64, height: f64, p: DVec3) -> f64 {
    let hh = 0.5 * height;
    let d_rho = p.x.hypot(p.y) - radius;
    let d_z = p.z.abs() - hh;
    let outside = DVec2::new(d_rho.max(0.0), d_z.max(0.0)).length();
    let inside = d_rho.max(d_z).min(0.0);
    outside + inside
}

pub fn cylinder_gradient(radius: f64, height: f64, p: DVec3) -> Option<DVec3> {
    let hh = 0.5 * height;
    let d_rho = p.x.hypot(p.y) - radius;
    let d_z = p.z.abs() - hh;
    if d_rho > 0.0 || d_z > 0.0 {
        let v = DVec2::new(d_rho.max(0.0), d_z.max(0.0));
        let len = v.length();
        if len < 1e-12 {
            return None;
        }
        lift_profile_gradient(p, v.x / len, v.y / len * sign(p.z))
    } else if d_rho >= d_z {
        lift_profile_gradient(p, 1.0, 0.0)
    } else {
        Some(DVec3::new(0.0, 0.0, sign(p.z)))
    }
}

/// Signed distance/gradient helpers for a capped cone frustum with radius
/// `r_bottom` at z = -height/2 and `r_top` at z = +height/2.
///
/// Evaluated as the 2D distance in (rho, z) profile coordinates to the
/// revolved cross-section. This is exact for solids of revolution.
#[derive(Clone, Copy, Debug)]
pub struct Frustum {
    pub r_bottom: f64,
    pub r_top: f64,
    pub height: f64,
}

impl Frustum {
    fn profile_edges(&self) -> [(DVec2, DVec2); 3] {
        let hh = 0.5 * self.height;
        [
            // bottom cap (degenerates to the apex point when r_bottom = 0)
            (DVec2::new(0.0, -hh), DVec2::new(self.r_bottom, -hh)),
            // slant wall
            (DVec2::new(self.r_bottom, -hh), DVec2::new(self.r_top, hh)),
            // top cap
            (DVec2::new(0.0, hh), DVec2::new(self.r_top, hh)),
        ]
    }

    fn profile_contains(&self, q: DVec2) -> bool {
        let hh = 0.5 * self.height;
        if q.y.abs() > hh {
            return false;
        }
        let t = (q.y + hh) / self.height;
        q.x <= self.r_bottom + t * (self.r_top - self.r_bottom)
    }

    pub fn distance(&self, p: DVec3) -> f64 {
        let q = DVec2::new(p.x.hypot(p.y), p.z);
        let mut d2 = f64::INFINITY;
        for (a, b) in self.profile_edges() {
            d2 = d2.min(segment_dist2(q, a, b).0);
        }
        let d = d2.sqrt();
        if self.profile_contains(q) {
            -d
        } else {
            d
        }
    }

    pub fn gradient(&self, p: DVec3) -> Option<DVec3> {
        let q = DVec2::new(p.x.hypot(p.y), p.z);
        let mut best = (f64::INFINITY, DVec2::ZERO);
        let mut best_edge = 0usize;
        for (i, (a, b)) in self.profile_edges().into_iter().enumerate() {
            let (d2, cp) = segment_dist2(q, a, b);
            if d2 < best.0 {
                best = (d2, cp);
                best_edge = i;
            }
        }
        let d = best.0.sqrt();
        let inside = self.profile_contains(q);
        let g2 = if d > 1e-12 {
            let dir = (q - best.1) / d;
            if inside {
                -dir
            } else {
                dir
            }
        } else {
            // On the surface itself: use the outward edge normal.
            match best_edge {
                0 => DVec2::new(0.0, -1.0),
                2 => DVec2::new(0.0, 1.0),
                _ => {
                    let e = DVec2::new(self.r_top - self.r_bottom, self.height);
                    DVec2::new(e.y, -e.x).normalize()
                }
            }
        };
        lift_profile_gradient(p, g2.x, g2.y)
    }
}

pub fn cone_distance(radius: f64, height: f64, p: DVec3) -> f64 {
    Frustum {
        r_bottom: radius,
        r_top: 0.0,
        height,
    }
    .distance(p)
}

pub fn cone_gradient(radius: f64, height: f64, p: DVec3) -> Option<DVec3> {
    Frustum {
        r_bottom: radius,
        r_top: 0.0,
        height,
    }
    .gradient(p)
}

pub fn torus_distance(major: f64, minor: f64, p: DVec3) -> f64 {
    let q = DVec2::new(p.x.hypot(p.y) - major, p.z);
    q.length() - minor
}

pub fn torus_gradient(major: f64, _minor: f64, p: DVec3) -> Option<DVec3> {
    let q = DVec2::new(p.x.hypot(p.y) - major, p.z);
    let len = q.length();
    if len < 1e-12 {
        return None;
    }
    lift_profile_gradient(p, q.x / len, q.y / len)
}

pub fn half_space_distance(normal: DVec3, offset: f64, p: DVec3) -> f64 {
    p.dot(normal) - offset
}

pub fn half_space_gradient(normal: DVec3) -> DVec3 {
    normal
}

/// Squared distance from `q` to segment `ab` plus the closest point.
fn segment_dist2(q: DVec2, a: DVec2, b: DVec2) -> (f64, DVec2) {
    let ab = b - a;
    let len2 = ab.length_squared();
    let t = if len2 < 1e-30 {
        0.0
    } else {
        ((q - a).dot(ab) / len2).clamp(0.0, 1.0)
    };
    let cp = a + ab * t;
    ((q - cp).length_squared(), cp)
}
