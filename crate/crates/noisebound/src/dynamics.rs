//! Planar map families and random-orbit sampling.
//!
//! The central example is the Hénon map `f(x, y) = (1 - a x^2 + y, b x)`
//! driven by additive noise drawn from the closed ball of radius `eps`.
//! Everything downstream (the box engine, the boundary map) is generic over
//! [`PlanarMap`], which also admits affine maps with closed-form invariant
//! sets that serve as end-to-end oracles.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Parameters of the noisy planar system: the Hénon coefficients `(a, b)`
/// and the noise radius `eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// Hénon quadratic coefficient.
    pub a: f64,
    /// Hénon shear coefficient; must be nonzero for the map to be invertible.
    pub b: f64,
    /// Noise radius (reach of the additive bounded noise).
    pub eps: f64,
}

impl Params {
    pub fn new(a: f64, b: f64, eps: f64) -> Result<Self, DynamicsError> {
        let p = Params { a, b, eps };
        p.validate()?;
        Ok(p)
    }

    /// Checks `b != 0` and `eps >= 0` (an `eps` of zero degenerates to the
    /// deterministic map, which several oracles rely on).
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.a.is_finite() && self.b.is_finite() && self.eps.is_finite()) {
            return Err(DynamicsError::DegenerateParameter(
                "parameters must be finite".into(),
            ));
        }
        if self.b == 0.0 {
            return Err(DynamicsError::DegenerateParameter("b must be nonzero".into()));
        }
        if self.eps < 0.0 {
            return Err(DynamicsError::DegenerateParameter(
                "eps must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Same parameters with `a` replaced; used by parameter continuation.
    pub fn with_a(&self, a: f64) -> Params {
        Params { a, ..*self }
    }
}

/// A point of the planar state space.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(&self, rhs: Point2) -> f64 {
        self.x * rhs.x + self.y * rhs.y
    }

    pub fn dist(&self, rhs: Point2) -> f64 {
        (*self - rhs).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Unit vector in the same direction; `None` for vectors shorter than `1e-300`.
    pub fn normalized(&self) -> Option<Point2> {
        let n = self.norm();
        (n > 1e-300).then(|| Point2::new(self.x / n, self.y / n))
    }

    /// Counterclockwise rotation by a quarter turn.
    pub fn rot90(&self) -> Point2 {
        Point2::new(-self.y, self.x)
    }
}

impl std::ops::Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

impl std::ops::Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        Point2::new(-self.x, -self.y)
    }
}

/// A 2x2 real matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat2 {
    pub m00: f64,
    pub m01: f64,
    pub m10: f64,
    pub m11: f64,
}

impl Mat2 {
    pub const fn new(m00: f64, m01: f64, m10: f64, m11: f64) -> Self {
        Mat2 { m00, m01, m10, m11 }
    }

    pub const ZERO: Mat2 = Mat2::new(0.0, 0.0, 0.0, 0.0);
    pub const IDENTITY: Mat2 = Mat2::new(1.0, 0.0, 0.0, 1.0);

    pub fn diag(d0: f64, d1: f64) -> Mat2 {
        Mat2::new(d0, 0.0, 0.0, d1)
    }

    pub fn det(&self) -> f64 {
        self.m00 * self.m11 - self.m01 * self.m10
    }

    pub fn transpose(&self) -> Mat2 {
        Mat2::new(self.m00, self.m10, self.m01, self.m11)
    }

    pub fn inverse(&self) -> Result<Mat2, DynamicsError> {
        let d = self.det();
        if d.abs() < 1e-14 {
            return Err(DynamicsError::SingularMatrix { det: d });
        }
        Ok(Mat2::new(self.m11 / d, -self.m01 / d, -self.m10 / d, self.m00 / d))
    }

    pub fn mul_vec(&self, v: Point2) -> Point2 {
        Point2::new(self.m00 * v.x + self.m01 * v.y, self.m10 * v.x + self.m11 * v.y)
    }

    pub fn mul_mat(&self, rhs: Mat2) -> Mat2 {
        Mat2::new(
            self.m00 * rhs.m00 + self.m01 * rhs.m10,
            self.m00 * rhs.m01 + self.m01 * rhs.m11,
            self.m10 * rhs.m00 + self.m11 * rhs.m10,
            self.m10 * rhs.m01 + self.m11 * rhs.m11,
        )
    }

    pub fn scale(&self, s: f64) -> Mat2 {
        Mat2::new(self.m00 * s, self.m01 * s, self.m10 * s, self.m11 * s)
    }
}

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("degenerate parameter: {0}")]
    DegenerateParameter(String),
    #[error("singular matrix (det = {det:e})")]
    SingularMatrix { det: f64 },
    #[error("orbit left the guard box at step {step} ({point:?})")]
    Divergence { step: usize, point: Point2 },
}

/// A planar diffeomorphism with enough derivative data for the boundary map:
/// forward and inverse evaluation, the Jacobian, and the two partial
/// derivatives of the Jacobian (needed for the analytic third-order chart
/// derivative of the boundary map).
pub trait PlanarMap: Sync {
    fn eval(&self, p: Point2, params: &Params) -> Point2;
    fn inverse(&self, p: Point2, params: &Params) -> Result<Point2, DynamicsError>;
    fn jacobian(&self, p: Point2, params: &Params) -> Mat2;
    /// `(d/dx, d/dy)` of the Jacobian matrix field.
    fn jacobian_partials(&self, p: Point2, params: &Params) -> (Mat2, Mat2);
    fn name(&self) -> &'static str;
}

/// The Hénon map `f(x, y) = (1 - a x^2 + y, b x)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct HenonMap;

impl PlanarMap for HenonMap {
    fn eval(&self, p: Point2, params: &Params) -> Point2 {
        Point2::new(1.0 - params.a * p.x * p.x + p.y, params.b * p.x)
    }

    /// Closed-form inverse: for `(u, v) = f(x, y)` we have `x = v/b` and
    /// `y = u - 1 + a v^2 / b^2`.
    fn inverse(&self, p: Point2, params: &Params) -> Result<Point2, DynamicsError> {
        if params.b == 0.0 {
            return Err(DynamicsError::DegenerateParameter("b must be nonzero".into()));
        }
        let x = p.y / params.b;
        Ok(Point2::new(x, p.x - 1.0 + params.a * x * x))
    }

    fn jacobian(&self, p: Point2, params: &Params) -> Mat2 {
        Mat2::new(-2.0 * params.a * p.x, 1.0, params.b, 0.0)
    }

    fn jacobian_partials(&self, _p: Point2, params: &Params) -> (Mat2, Mat2) {
        (Mat2::new(-2.0 * params.a, 0.0, 0.0, 0.0), Mat2::ZERO)
    }

    fn name(&self) -> &'static str {
        "henon"
    }
}

/// An affine map `f(z) = L z + t`. Linear contractions have a closed-form
/// minimal attractor (the disk of radius `eps / (1 - c)` for `L = c I`),
/// which makes them the standard oracle for the set-valued engine and the
/// boundary map alike.
#[derive(Debug, Clone, Copy)]
pub struct AffineMap {
    pub linear: Mat2,
    pub offset: Point2,
}

impl AffineMap {
    pub fn new(linear: Mat2, offset: Point2) -> Self {
        AffineMap { linear, offset }
    }

    /// Uniform scaling by `c` about the origin.
    pub fn scaling(c: f64) -> Self {
        AffineMap::new(Mat2::diag(c, c), Point2::default())
    }
}

impl PlanarMap for AffineMap {
    fn eval(&self, p: Point2, _params: &Params) -> Point2 {
        self.linear.mul_vec(p) + self.offset
    }

    fn inverse(&self, p: Point2, _params: &Params) -> Result<Point2, DynamicsError> {
        Ok(self.linear.inverse()?.mul_vec(p - self.offset))
    }

    fn jacobian(&self, _p: Point2, _params: &Params) -> Mat2 {
        self.linear
    }

    fn jacobian_partials(&self, _p: Point2, _params: &Params) -> (Mat2, Mat2) {
        (Mat2::ZERO, Mat2::ZERO)
    }

    fn name(&self) -> &'static str {
        "affine"
    }
}

/// Identity map; useful because the boundary map degenerates to the
/// translation `(x, theta) -> (x + eps n(theta), theta)` there.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityMap;

impl PlanarMap for IdentityMap {
    fn eval(&self, p: Point2, _params: &Params) -> Point2 {
        p
    }

    fn inverse(&self, p: Point2, _params: &Params) -> Result<Point2, DynamicsError> {
        Ok(p)
    }

    fn jacobian(&self, _p: Point2, _params: &Params) -> Mat2 {
        Mat2::IDENTITY
    }

    fn jacobian_partials(&self, _p: Point2, _params: &Params) -> (Mat2, Mat2) {
        (Mat2::ZERO, Mat2::ZERO)
    }

    fn name(&self) -> &'static str {
        "identity"
    }
}

/// Applies `(M^T)^{-1}` to a unit vector and splits the result into direction
/// and magnitude. The returned scale is `||(M^T)^{-1} n||`, whose reciprocal
/// is the transverse eigenvalue of the boundary map at a fixed point.
pub fn inv_transpose_action(m: Mat2, n: Point2) -> Result<(Point2, f64), DynamicsError> {
    let w = m.transpose().inverse()?.mul_vec(n);
    let scale = w.norm();
    let dir = w
        .normalized()
        .ok_or(DynamicsError::SingularMatrix { det: m.det() })?;
    Ok((dir, scale))
}

/// Axis-aligned rectangle; the orbit sampler treats leaving it as divergence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Point2,
    pub max: Point2,
}

impl Rect {
    pub fn new(min: Point2, max: Point2) -> Self {
        Rect { min, max }
    }

    /// Default guard box; all parameter regimes of interest live well inside.
    pub fn guard_default() -> Rect {
        Rect::new(Point2::new(-10.0, -10.0), Point2::new(10.0, 10.0))
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

/// Draws a point uniformly from the closed ball of radius `eps` by rejection
/// from the circumscribing square.
pub fn sample_noise<R: Rng>(rng: &mut R, eps: f64) -> Point2 {
    if eps == 0.0 {
        return Point2::default();
    }
    loop {
        let x = rng.gen_range(-eps..=eps);
        let y = rng.gen_range(-eps..=eps);
        if x * x + y * y <= eps * eps {
            return Point2::new(x, y);
        }
    }
}

/// Samples a noisy orbit `z_{i+1} = f(z_i) + xi_i` with `xi_i` uniform in the
/// closed `eps`-ball. Deterministic for a fixed `rng_seed`; the returned
/// vector starts with the seed point and has `steps + 1` entries.
pub fn sample_orbit(
    map: &dyn PlanarMap,
    seed: Point2,
    params: &Params,
    steps: usize,
    rng_seed: u64,
    guard: Rect,
) -> Result<Vec<Point2>, DynamicsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut orbit = Vec::with_capacity(steps + 1);
    let mut z = seed;
    orbit.push(z);
    for step in 1..=steps {
        z = map.eval(z, params) + sample_noise(&mut rng, params.eps);
        if !z.is_finite() || !guard.contains(z) {
            return Err(DynamicsError::Divergence { step, point: z });
        }
        orbit.push(z);
    }
    Ok(orbit)
}

/// Deterministic orbit (no noise term), with the same divergence guard.
pub fn deterministic_orbit(
    map: &dyn PlanarMap,
    seed: Point2,
    params: &Params,
    steps: usize,
    guard: Rect,
) -> Result<Vec<Point2>, DynamicsError> {
    let mut orbit = Vec::with_capacity(steps + 1);
    let mut z = seed;
    orbit.push(z);
    for step in 1..=steps {
        z = map.eval(z, params);
        if !z.is_finite() || !guard.contains(z) {
            return Err(DynamicsError::Divergence { step, point: z });
        }
        orbit.push(z);
    }
    Ok(orbit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn henon_params() -> Params {
        Params::new(0.6, 0.3, 0.0625).unwrap()
    }

    #[test]
    fn henon_eval_examples() {
        let map = HenonMap;
        let p = Params::new(0.6, 0.3, 0.1).unwrap();
        assert_eq!(map.eval(Point2::new(0.0, 0.0), &p), Point2::new(1.0, 0.0));
        let q = map.eval(Point2::new(1.0, 0.0), &p);
        assert_relative_eq!(q.x, 0.4, max_relative = 1e-15);
        assert_relative_eq!(q.y, 0.3, max_relative = 1e-15);
        // 1 - 0.6 * 0.4^2 + 0.3 = 1.204, 0.3 * 0.4 = 0.12
        let r = map.eval(Point2::new(0.4, 0.3), &p);
        assert_relative_eq!(r.x, 1.204, max_relative = 1e-15);
        assert_relative_eq!(r.y, 0.12, max_relative = 1e-15);
    }

    #[test]
    fn henon_inverse_examples() {
        let map = HenonMap;
        let p = Params::new(0.6, 0.3, 0.1).unwrap();
        let z = map.inverse(Point2::new(1.0, 0.0), &p).unwrap();
        assert_relative_eq!(z.x, 0.0, epsilon = 1e-15);
        assert_relative_eq!(z.y, 0.0, epsilon = 1e-15);
        let w = map.inverse(Point2::new(1.204, 0.12), &p).unwrap();
        assert_relative_eq!(w.x, 0.4, max_relative = 1e-12);
        assert_relative_eq!(w.y, 0.3, max_relative = 1e-12);
        let degenerate = Params { a: 0.6, b: 0.0, eps: 0.1 };
        assert!(map.inverse(Point2::new(1.0, 0.0), &degenerate).is_err());
    }

    #[test]
    fn henon_jacobian_matches_finite_differences() {
        let map = HenonMap;
        let p = Params::new(0.13, 0.3, 0.6).unwrap();
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let z = Point2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let j = map.jacobian(z, &p);
            let fx1 = map.eval(Point2::new(z.x + h, z.y), &p);
            let fx0 = map.eval(Point2::new(z.x - h, z.y), &p);
            let fy1 = map.eval(Point2::new(z.x, z.y + h), &p);
            let fy0 = map.eval(Point2::new(z.x, z.y - h), &p);
            assert_relative_eq!(j.m00, (fx1.x - fx0.x) / (2.0 * h), max_relative = 1e-6, epsilon = 1e-6);
            assert_relative_eq!(j.m10, (fx1.y - fx0.y) / (2.0 * h), max_relative = 1e-6, epsilon = 1e-6);
            assert_relative_eq!(j.m01, (fy1.x - fy0.x) / (2.0 * h), max_relative = 1e-6, epsilon = 1e-6);
            assert_relative_eq!(j.m11, (fy1.y - fy0.y) / (2.0 * h), max_relative = 1e-6, epsilon = 1e-6);
            // constant determinant -b, a Hénon signature
            assert_relative_eq!(j.det(), -p.b, max_relative = 1e-14);
        }
    }

    #[test]
    fn jacobian_at_origin() {
        let map = HenonMap;
        let p = Params::new(0.6, 0.3, 0.1).unwrap();
        let j = map.jacobian(Point2::new(0.0, 0.0), &p);
        assert_eq!(j, Mat2::new(0.0, 1.0, 0.3, 0.0));
    }

    #[test]
    fn inv_transpose_action_examples() {
        let (d, s) = inv_transpose_action(Mat2::IDENTITY, Point2::new(1.0, 0.0)).unwrap();
        assert_eq!(d, Point2::new(1.0, 0.0));
        assert_eq!(s, 1.0);

        // Hénon Jacobian at the origin, b = 0.3: (J^T)^{-1} = [[0, 1], [10/3, 0]]
        let j = Mat2::new(0.0, 1.0, 0.3, 0.0);
        let (d, s) = inv_transpose_action(j, Point2::new(1.0, 0.0)).unwrap();
        assert_relative_eq!(d.x, 0.0, epsilon = 1e-15);
        assert_relative_eq!(d.y, 1.0, epsilon = 1e-15);
        assert_relative_eq!(s, 10.0 / 3.0, max_relative = 1e-14);

        let (d, s) = inv_transpose_action(Mat2::diag(2.0, 0.5), Point2::new(0.0, 1.0)).unwrap();
        assert_relative_eq!(d.y, 1.0, epsilon = 1e-15);
        assert_relative_eq!(s, 2.0, max_relative = 1e-14);

        assert!(inv_transpose_action(Mat2::ZERO, Point2::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn orbit_increments_stay_in_ball() {
        let map = HenonMap;
        let p = Params::new(0.6, 0.3, 0.0625).unwrap();
        let orbit = sample_orbit(&map, Point2::new(0.0, 0.0), &p, 10_000, 42, Rect::guard_default())
            .unwrap();
        for w in orbit.windows(2) {
            let inc = w[1] - map.eval(w[0], &p);
            assert!(inc.norm() <= p.eps + 1e-15);
        }
    }

    #[test]
    fn orbit_deterministic_for_fixed_seed() {
        let map = HenonMap;
        let p = henon_params();
        let a = sample_orbit(&map, Point2::new(0.1, 0.0), &p, 500, 99, Rect::guard_default()).unwrap();
        let b = sample_orbit(&map, Point2::new(0.1, 0.0), &p, 500, 99, Rect::guard_default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_noise_is_deterministic_orbit() {
        let map = HenonMap;
        let p = Params::new(0.6, 0.3, 0.0).unwrap();
        let noisy = sample_orbit(&map, Point2::new(0.1, 0.0), &p, 200, 1, Rect::guard_default()).unwrap();
        let det = deterministic_orbit(&map, Point2::new(0.1, 0.0), &p, 200, Rect::guard_default()).unwrap();
        assert_eq!(noisy, det);
    }

    #[test]
    fn divergence_is_reported() {
        let map = HenonMap;
        let p = Params::new(2.5, 0.3, 0.0).unwrap();
        let r = sample_orbit(&map, Point2::new(2.0, 2.0), &p, 100, 0, Rect::guard_default());
        assert!(matches!(r, Err(DynamicsError::Divergence { .. })));
    }

    proptest! {
        #[test]
        fn henon_round_trip(x in -2.0f64..2.0, y in -2.0f64..2.0) {
            let map = HenonMap;
            let p = Params::new(0.6, 0.3, 0.1).unwrap();
            let z = Point2::new(x, y);
            let fwd = map.eval(z, &p);
            let back = map.inverse(fwd, &p).unwrap();
            prop_assert!((back - z).norm() <= 1e-12 * (1.0 + z.norm()));
            let pre = map.inverse(z, &p).unwrap();
            let again = map.eval(pre, &p);
            prop_assert!((again - z).norm() <= 1e-12 * (1.0 + z.norm()));
        }

        #[test]
        fn inv_transpose_returns_unit_vector(theta in -3.14f64..3.14, x in -2.0f64..2.0) {
            let map = HenonMap;
            let p = Params::new(0.6, 0.3, 0.1).unwrap();
            let n = Point2::new(theta.cos(), theta.sin());
            let j = map.jacobian(Point2::new(x, 0.0), &p);
            let (d, s) = inv_transpose_action(j, n).unwrap();
            prop_assert!((d.norm() - 1.0).abs() < 1e-14);
            prop_assert!(s > 0.0);
        }
    }
}
