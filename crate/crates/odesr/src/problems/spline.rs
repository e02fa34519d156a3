//! Natural cubic spline interpolation on (possibly non-uniform) knots, used
//! to resample externally captured trajectories onto equidistant grids.

/// Second derivatives of the natural cubic spline through `(x, y)`.
/// Tridiagonal system solved with the Thomas algorithm; the free-end
/// conditions pin the curvature to zero at both boundaries.
fn second_derivatives(x: &[f64], y: &[f64]) -> Vec<f64> {
    let m = x.len();
    assert!(m >= 3);
    let n = m - 2; // interior unknowns
    let mut sub = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut sup = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for i in 1..m - 1 {
        let h0 = x[i] - x[i - 1];
        let h1 = x[i + 1] - x[i];
        sub[i - 1] = h0 / (h0 + h1);
        diag[i - 1] = 2.0;
        sup[i - 1] = h1 / (h0 + h1);
        rhs[i - 1] = 6.0 / (h0 + h1) * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
    }
    // Thomas sweep.
    for i in 1..n {
        let w = sub[i] / diag[i - 1];
        diag[i] -= w * sup[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    let mut interior = vec![0.0; n];
    interior[n - 1] = rhs[n - 1] / diag[n - 1];
    for i in (0..n - 1).rev() {
        interior[i] = (rhs[i] - sup[i] * interior[i + 1]) / diag[i];
    }
    let mut m2 = vec![0.0; m];
    m2[1..m - 1].copy_from_slice(&interior);
    m2
}

/// A fitted natural cubic spline for one variable.
pub struct NaturalSpline<'a> {
    x: &'a [f64],
    y: &'a [f64],
    m2: Vec<f64>,
}

impl<'a> NaturalSpline<'a> {
    /// Knot abscissae must be strictly increasing, at least 3 of them.
    pub fn fit(x: &'a [f64], y: &'a [f64]) -> Self {
        assert_eq!(x.len(), y.len());
        NaturalSpline { x, y, m2: second_derivatives(x, y) }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let x = self.x;
        let last = x.len() - 1;
        if t <= x[0] {
            return self.y[0];
        }
        if t >= x[last] {
            return self.y[last];
        }
        // Rightmost segment with x[i] <= t.
        let i = match x.partition_point(|&v| v <= t) {
            0 => 0,
            p => (p - 1).min(last - 1),
        };
        let h = x[i + 1] - x[i];
        let a = (x[i + 1] - t) / h;
        let b = (t - x[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m2[i] + (b * b * b - b) * self.m2[i + 1]) * h * h / 6.0
    }
}
