//! Cubic spline smoothing kernel with support radius `h` (3D normalization).

pub struct CubicSpline {
    h: f64,
    sigma: f64,
}

impl CubicSpline {
    pub fn new(h: f64) -> CubicSpline {
        CubicSpline {
            h,
            sigma: 8.0 / (std::f64::consts::PI * h * h * h),
        }
    }

    /// Kernel value at separation `r`; zero for `r >= h`.
    pub fn w(&self, r: f64) -> f64 {
        let q = r / self.h;
        if q < 0.5 {
            self.sigma * (6.0 * q * q * (q - 1.0) + 1.0)
        } else if q < 1.0 {
            let t = 1.0 - q;
            self.sigma * 2.0 * t * t * t
        } else {
            0.0
        }
    }

    pub fn w0(&self) -> f64 {
        self.sigma
    }

    /// Radial derivative dW/dr.
    pub fn dw(&self, r: f64) -> f64 {
        let q = r / self.h;
        if q < 0.5 {
            self.sigma / self.h * (18.0 * q * q - 12.0 * q)
        } else if q < 1.0 {
            let t = 1.0 - q;
            -self.sigma / self.h * 6.0 * t * t
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_integrates_to_one() {
        // Midpoint quadrature over the support sphere.
        let h = 0.13;
        let k = CubicSpline::new(h);
        let n = 60;
        let cell = 2.0 * h / n as f64;
        let mut total = 0.0;
        for ix in 0..n {
            for iy in 0..n {
                for iz in 0..n {
                    let x = -h + (ix as f64 + 0.5) * cell;
                    let y = -h + (iy as f64 + 0.5) * cell;
                    let z = -h + (iz as f64 + 0.5) * cell;
                    total += k.w((x * x + y * y + z * z).sqrt()) * cell * cell * cell;
                }
            }
        }
        assert!((total - 1.0).abs() < 1e-3, "kernel integral {total}");
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let k = CubicSpline::new(0.1);
        for r in [0.01, 0.03, 0.049, 0.051, 0.07, 0.099] {
            let h = 1e-7;
            let fd = (k.w(r + h) - k.w(r - h)) / (2.0 * h);
            assert!((k.dw(r) - fd).abs() < 1e-4 * k.w0(), "r={r}");
        }
    }

    #[test]
    fn compact_support() {
        let k = CubicSpline::new(0.1);
        assert_eq!(k.w(0.1), 0.0);
        assert_eq!(k.dw(0.11), 0.0);
        assert!(k.w(0.0) > 0.0);
    }
}
