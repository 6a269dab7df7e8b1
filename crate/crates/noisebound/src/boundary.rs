//! The boundary map on R^2 x S^1 and its local analysis.
//!
//! For a planar diffeomorphism `f` with additive noise of reach `eps`, the
//! boundary map advances a point `x` together with an outer unit normal `n`:
//!
//! ```text
//! beta(x, n) = ( f(x) + eps * m,  m ),    m = (f'(x)^T)^{-1} n / ||(f'(x)^T)^{-1} n||
//! ```
//!
//! It tracks unit normal bundles of boundaries of sets evolving under the
//! set-valued dynamics, turning questions about attractor boundaries into
//! finite-dimensional dynamics. This module provides the map, its inverse,
//! an analytic chart Jacobian, Newton solvers for fixed and periodic points,
//! closed-form eigenvalue classification of the 3x3 Jacobian, and the
//! spectral identities that hold at fixed points (`lambda_1` equals the
//! reciprocal normal stretch, `lambda_1 = lambda_2 lambda_3`, and the
//! two-dimensional invariant subspace projects to a line in the plane).
//!
//! The circle factor is represented by an angle `theta` in `(-pi, pi]`, with
//! `n = (cos theta, sin theta)`; all angle arithmetic is wrap-aware.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{inv_transpose_action, DynamicsError, Mat2, Params, PlanarMap, Point2};

/// 3x3 derivative of the boundary map in the `(x, y, theta)` chart.
pub type Jacobian3 = Matrix3<f64>;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(t: f64) -> f64 {
    use std::f64::consts::PI;
    let w = (t + PI).rem_euclid(2.0 * PI);
    if w == 0.0 {
        PI
    } else {
        w - PI
    }
}

/// Unit vector for an angle.
pub fn unit(theta: f64) -> Point2 {
    Point2::new(theta.cos(), theta.sin())
}

/// A point of R^2 x S^1: planar position plus the angle of a unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub pos: Point2,
    /// Normal angle in `(-pi, pi]`.
    pub theta: f64,
}

impl BoundaryPoint {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        BoundaryPoint { pos: Point2::new(x, y), theta: wrap_angle(theta) }
    }

    pub fn normal(&self) -> Point2 {
        unit(self.theta)
    }

    /// Chart displacement `self - other` with the angle difference wrapped.
    pub fn chart_diff(&self, other: &BoundaryPoint) -> Vector3<f64> {
        Vector3::new(
            self.pos.x - other.pos.x,
            self.pos.y - other.pos.y,
            wrap_angle(self.theta - other.theta),
        )
    }

    /// Chart distance with unit weight on the wrapped angle component.
    pub fn chart_dist(&self, other: &BoundaryPoint) -> f64 {
        self.chart_diff(other).norm()
    }

    /// Moves by a chart displacement, wrapping the angle.
    pub fn chart_add(&self, d: Vector3<f64>) -> BoundaryPoint {
        BoundaryPoint::new(self.pos.x + d.x, self.pos.y + d.y, self.theta + d.z)
    }
}

#[derive(Debug, Error)]
pub enum BoundaryError {
    #[error("singular map Jacobian at the evaluation point")]
    SingularJacobian,
    #[error("Newton did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("singular Newton matrix")]
    SingularNewtonMatrix,
    #[error("orbit points collapsed; true period is lower than requested")]
    CollapsedOrbit,
    #[error("point is not a fixed point (residual {residual:e})")]
    NotAFixedPoint { residual: f64 },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// One application of the boundary map.
pub fn beta_apply(
    map: &dyn PlanarMap,
    bp: BoundaryPoint,
    params: &Params,
) -> Result<BoundaryPoint, BoundaryError> {
    let j = map.jacobian(bp.pos, params);
    let (m, _) =
        inv_transpose_action(j, bp.normal()).map_err(|_| BoundaryError::SingularJacobian)?;
    let fx = map.eval(bp.pos, params);
    Ok(BoundaryPoint::new(
        fx.x + params.eps * m.x,
        fx.y + params.eps * m.y,
        m.y.atan2(m.x),
    ))
}

/// One application of the inverse boundary map. Retracting by `eps` along the
/// normal and pulling back through `f^{-1}` inverts the forward composition;
/// normals pull back with `f'(x)^T` because `((f^{-1})'(y)^T)^{-1} = f'(x)^T`
/// at `x = f^{-1}(y)`.
pub fn beta_inverse_apply(
    map: &dyn PlanarMap,
    bp: BoundaryPoint,
    params: &Params,
) -> Result<BoundaryPoint, BoundaryError> {
    let n = bp.normal();
    let p = bp.pos - n * params.eps;
    let x = map.inverse(p, params).map_err(BoundaryError::Dynamics)?;
    let jt = map.jacobian(x, params).transpose();
    let w = jt.mul_vec(n);
    let m = w.normalized().ok_or(BoundaryError::SingularJacobian)?;
    Ok(BoundaryPoint::new(x.x, x.y, m.y.atan2(m.x)))
}

/// Applies `beta` `k` times.
pub fn beta_iterate(
    map: &dyn PlanarMap,
    bp: BoundaryPoint,
    params: &Params,
    k: usize,
) -> Result<BoundaryPoint, BoundaryError> {
    let mut z = bp;
    for _ in 0..k {
        z = beta_apply(map, z, params)?;
    }
    Ok(z)
}

/// Applies `beta^{-1}` `k` times.
pub fn beta_inverse_iterate(
    map: &dyn PlanarMap,
    bp: BoundaryPoint,
    params: &Params,
    k: usize,
) -> Result<BoundaryPoint, BoundaryError> {
    let mut z = bp;
    for _ in 0..k {
        z = beta_inverse_apply(map, z, params)?;
    }
    Ok(z)
}

/// Analytic chart Jacobian of the boundary map.
///
/// Differentiates the embedded form `beta_hat(x, n) = (f(x) + eps m, m)` with
/// `m = (f'(x)^T)^{-1} n / ||.||` and reduces the resulting 4x4 derivative to
/// the `(x, y, theta)` chart by contracting the normal slots with the
/// counterclockwise orthogonals of the incoming and outgoing normals.
pub fn beta_jacobian(
    map: &dyn PlanarMap,
    bp: BoundaryPoint,
    params: &Params,
) -> Result<Jacobian3, BoundaryError> {
    let n = bp.normal();
    let j = map.jacobian(bp.pos, params);
    let jti = j
        .transpose()
        .inverse()
        .map_err(|_| BoundaryError::SingularJacobian)?;
    let v = jti.mul_vec(n);
    let len = v.norm();
    if len < 1e-300 {
        return Err(BoundaryError::SingularJacobian);
    }
    let m = v * (1.0 / len);

    // P = (I - m m^T) / ||v||, the derivative of normalization at v.
    let p = Mat2::new(
        (1.0 - m.x * m.x) / len,
        (-m.x * m.y) / len,
        (-m.y * m.x) / len,
        (1.0 - m.y * m.y) / len,
    );

    // d/dx of (f'(x)^T)^{-1} n, column i equal to -(J^T)^{-1} (d_i J)^T v.
    let (jx, jy) = map.jacobian_partials(bp.pos, params);
    let col_x = -jti.mul_vec(jx.transpose().mul_vec(v));
    let col_y = -jti.mul_vec(jy.transpose().mul_vec(v));
    let a = Mat2::new(col_x.x, col_y.x, col_x.y, col_y.y);

    let pa = p.mul_mat(a);
    let pjti = p.mul_mat(jti);

    let u_in = n.rot90();
    let u_out = m.rot90();

    let top_left = Mat2::new(
        j.m00 + params.eps * pa.m00,
        j.m01 + params.eps * pa.m01,
        j.m10 + params.eps * pa.m10,
        j.m11 + params.eps * pa.m11,
    );
    let top_right = pjti.mul_vec(u_in) * params.eps;
    let bottom_left = Point2::new(
        u_out.x * pa.m00 + u_out.y * pa.m10,
        u_out.x * pa.m01 + u_out.y * pa.m11,
    );
    let bottom_right = u_out.dot(pjti.mul_vec(u_in));

    Ok(Matrix3::new(
        top_left.m00,
        top_left.m01,
        top_right.x,
        top_left.m10,
        top_left.m11,
        top_right.y,
        bottom_left.x,
        bottom_left.y,
        bottom_right,
    ))
}

/// Central finite differences of `beta` in the chart; the independent check
/// for [`beta_jacobian`].
pub fn beta_jacobian_fd(
    map: &dyn PlanarMap,
    bp: BoundaryPoint,
    params: &Params,
    h: f64,
) -> Result<Jacobian3, BoundaryError> {
    let mut out = Matrix3::zeros();
    for col in 0..3 {
        let mut dp = Vector3::zeros();
        dp[col] = h;
        let zp = beta_apply(map, bp.chart_add(dp), params)?;
        let zm = beta_apply(map, bp.chart_add(-dp), params)?;
        let d = zp.chart_diff(&zm) * (0.5 / h);
        out.set_column(col, &d);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Eigenvalue classification of the 3x3 chart Jacobian
// ---------------------------------------------------------------------------

/// The two eigenvalues transverse to the distinguished real one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TransversePair {
    Real(f64, f64),
    /// One member of the conjugate pair; the other is its conjugate.
    Complex { re: f64, im: f64 },
}

impl TransversePair {
    /// Product of the two transverse eigenvalues (real in both cases).
    pub fn product(&self) -> f64 {
        match *self {
            TransversePair::Real(a, b) => a * b,
            TransversePair::Complex { re, im } => re * re + im * im,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EigenClass {
    AllReal,
    ComplexPair,
}

/// Residual diagnostics for the fixed-point spectral identities.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EigenResiduals {
    /// `|lambda1 - reference|` when a reference value was supplied.
    pub lambda1_match: Option<f64>,
    /// `|lambda1 - lambda2 * lambda3|`.
    pub product: f64,
}

/// Spectrum of a 3x3 chart Jacobian, split into the distinguished real
/// eigenvalue and the transverse pair.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EigenStructure {
    pub lambda1: f64,
    pub pair: TransversePair,
    pub classification: EigenClass,
    /// Set when the cubic discriminant sits inside the guard band, i.e. the
    /// real/complex decision is not numerically trustworthy.
    pub borderline: bool,
    pub residuals: EigenResiduals,
}

impl EigenStructure {
    /// All three eigenvalues as complex numbers.
    pub fn all(&self) -> [Complex64; 3] {
        match self.pair {
            TransversePair::Real(a, b) => [
                Complex64::new(self.lambda1, 0.0),
                Complex64::new(a, 0.0),
                Complex64::new(b, 0.0),
            ],
            TransversePair::Complex { re, im } => [
                Complex64::new(self.lambda1, 0.0),
                Complex64::new(re, im),
                Complex64::new(re, -im),
            ],
        }
    }

    /// Number of eigenvalues with modulus above one.
    pub fn unstable_count(&self) -> usize {
        self.all().iter().filter(|l| l.norm() > 1.0).count()
    }
}

fn char_coeffs(j: &Jacobian3) -> (f64, f64, f64) {
    let c2 = j.trace();
    let c1 = j[(0, 0)] * j[(1, 1)] - j[(0, 1)] * j[(1, 0)]
        + j[(0, 0)] * j[(2, 2)] - j[(0, 2)] * j[(2, 0)]
        + j[(1, 1)] * j[(2, 2)] - j[(1, 2)] * j[(2, 1)];
    let c0 = j.determinant();
    (c2, c1, c0)
}

fn char_poly(c: (f64, f64, f64), l: Complex64) -> Complex64 {
    ((l - c.0) * l + c.1) * l - c.2
}

fn char_poly_deriv(c: (f64, f64, f64), l: Complex64) -> Complex64 {
    (3.0 * l - 2.0 * c.0) * l + c.1
}

fn polish_root(c: (f64, f64, f64), mut l: Complex64) -> Complex64 {
    for _ in 0..4 {
        let d = char_poly_deriv(c, l);
        if d.norm() < 1e-300 {
            break;
        }
        let step = char_poly(c, l) / d;
        let next = l - step;
        if char_poly(c, next).norm() <= char_poly(c, l).norm() {
            l = next;
        } else {
            break;
        }
        if step.norm() < 1e-16 * (1.0 + l.norm()) {
            break;
        }
    }
    l
}

/// Classifies the spectrum of a 3x3 Jacobian by solving its characteristic
/// cubic in closed form (trigonometric for three real roots, Cardano for a
/// real root plus a conjugate pair), then polishing each root with a few
/// Newton steps on the cubic.
///
/// `reference` is the value `||(f'(x)^T)^{-1} n||^{-1}`; when supplied, the
/// distinguished eigenvalue is the real root nearest it. Otherwise it is the
/// unique real root in the complex case, and in the all-real case the root
/// that best satisfies `lambda1 = lambda2 * lambda3`.
pub fn eigen_classify(j: &Jacobian3, reference: Option<f64>) -> EigenStructure {
    let c = char_coeffs(j);
    let (c2, c1, c0) = c;
    // Depressed cubic t^3 + p t + q with lambda = t + c2/3.
    let shift = c2 / 3.0;
    let p = c1 - c2 * c2 / 3.0;
    let q = -2.0 * c2 * c2 * c2 / 27.0 + c1 * c2 / 3.0 - c0;
    let disc = -4.0 * p * p * p - 27.0 * q * q;
    let scale = (1.0 + c2.abs()).max(c1.abs().sqrt()).max(c0.abs().cbrt());
    let borderline = disc.abs() < 1e-12 * scale.powi(6);

    let (mut reals, mut pair): (Vec<f64>, Option<Complex64>) = if disc >= 0.0 {
        // Three real roots (counted with multiplicity on the boundary).
        if p.abs() < 1e-300 {
            let t = -q.cbrt();
            (vec![t, t, t], None)
        } else {
            let r = 2.0 * (-p / 3.0).max(0.0).sqrt();
            let arg = (3.0 * q / (p * r)).clamp(-1.0, 1.0);
            let phi = arg.acos();
            let roots = [
                r * (phi / 3.0).cos(),
                r * ((phi - 2.0 * std::f64::consts::PI) / 3.0).cos(),
                r * ((phi - 4.0 * std::f64::consts::PI) / 3.0).cos(),
            ];
            (roots.to_vec(), None)
        }
    } else {
        // One real root plus a conjugate pair (Cardano).
        let d = (q * q / 4.0 + p * p * p / 27.0).sqrt();
        let u = (-q / 2.0 + d).cbrt();
        let v = (-q / 2.0 - d).cbrt();
        let t_real = u + v;
        let re = -t_real / 2.0;
        let im = (3.0f64).sqrt() / 2.0 * (u - v);
        (vec![t_real], Some(Complex64::new(re, im.abs())))
    };

    for t in reals.iter_mut() {
        let polished = polish_root(c, Complex64::new(*t + shift, 0.0));
        *t = polished.re;
    }
    if let Some(z) = pair.as_mut() {
        let polished = polish_root(c, *z + shift);
        *z = Complex64::new(polished.re, polished.im.abs());
    }

    match pair {
        Some(z) => {
            let lambda1 = reals[0];
            let pair = TransversePair::Complex { re: z.re, im: z.im };
            EigenStructure {
                lambda1,
                pair,
                classification: EigenClass::ComplexPair,
                borderline,
                residuals: EigenResiduals {
                    lambda1_match: reference.map(|r| (lambda1 - r).abs()),
                    product: (lambda1 - pair.product()).abs(),
                },
            }
        }
        None => {
            let pick = |lambda1_idx: usize| -> (f64, f64, f64) {
                let l1 = reals[lambda1_idx];
                let others: Vec<f64> = (0..3).filter(|&i| i != lambda1_idx).map(|i| reals[i]).collect();
                (l1, others[0], others[1])
            };
            let idx = match reference {
                Some(r) => (0..3)
                    .min_by(|&i, &j| {
                        (reals[i] - r)
                            .abs()
                            .partial_cmp(&(reals[j] - r).abs())
                            .unwrap()
                    })
                    .unwrap(),
                None => (0..3)
                    .min_by(|&i, &j| {
                        let (a1, a2, a3) = pick(i);
                        let (b1, b2, b3) = pick(j);
                        ((a1 - a2 * a3).abs())
                            .partial_cmp(&(b1 - b2 * b3).abs())
                            .unwrap()
                    })
                    .unwrap(),
            };
            let (l1, l2, l3) = pick(idx);
            EigenStructure {
                lambda1: l1,
                pair: TransversePair::Real(l2, l3),
                classification: EigenClass::AllReal,
                borderline,
                residuals: EigenResiduals {
                    lambda1_match: reference.map(|r| (l1 - r).abs()),
                    product: (l1 - l2 * l3).abs(),
                },
            }
        }
    }
}

/// Real eigenvector for a real eigenvalue, via the largest cross product of
/// rows of `J - lambda I`.
pub fn real_eigenvector(j: &Jacobian3, lambda: f64) -> Vector3<f64> {
    let m = j - Matrix3::identity() * lambda;
    let rows: [Vector3<f64>; 3] = [
        m.row(0).transpose(),
        m.row(1).transpose(),
        m.row(2).transpose(),
    ];
    let mut best = Vector3::zeros();
    for (i, k) in [(0usize, 1usize), (0, 2), (1, 2)] {
        let c = rows[i].cross(&rows[k]);
        if c.norm() > best.norm() {
            best = c;
        }
    }
    if best.norm() < 1e-300 {
        // Defective or near-defective; fall back to an axis vector.
        return Vector3::x();
    }
    best.normalize()
}

/// Complex eigenvector for a complex eigenvalue (same cross-product scheme
/// over the complexified rows).
pub fn complex_eigenvector(j: &Jacobian3, lambda: Complex64) -> [Complex64; 3] {
    let m: Vec<Complex64> = (0..3)
        .flat_map(|r| {
            (0..3).map(move |cidx| {
                Complex64::new(j[(r, cidx)], 0.0)
                    - if r == cidx { lambda } else { Complex64::new(0.0, 0.0) }
            })
        })
        .collect();
    let row = |r: usize| [m[3 * r], m[3 * r + 1], m[3 * r + 2]];
    let cross = |a: [Complex64; 3], b: [Complex64; 3]| {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    };
    let mut best = [Complex64::new(0.0, 0.0); 3];
    let mut best_norm = 0.0;
    for (i, k) in [(0usize, 1usize), (0, 2), (1, 2)] {
        let c = cross(row(i), row(k));
        let n = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if n > best_norm {
            best_norm = n;
            best = c;
        }
    }
    if best_norm > 1e-300 {
        for z in best.iter_mut() {
            *z /= best_norm;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Newton solvers
// ---------------------------------------------------------------------------

/// Newton solver knobs. Defaults: tolerance `1e-10`, 50 iterations, at most
/// 8 step halvings in the backtracking line search.
#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: u32,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { tol: 1e-10, max_iter: 50, max_halvings: 8 }
    }
}

/// Stability type of a periodic orbit of the boundary map, by the number of
/// eigenvalues of the period-composed Jacobian outside the unit circle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stability {
    Stable,
    Saddle1u,
    Saddle2u,
    Unstable,
}

impl Stability {
    fn from_unstable_count(k: usize) -> Stability {
        match k {
            0 => Stability::Stable,
            1 => Stability::Saddle1u,
            2 => Stability::Saddle2u,
            _ => Stability::Unstable,
        }
    }
}

/// A converged periodic orbit of the boundary map together with the spectrum
/// of its period-composed Jacobian.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub points: Vec<BoundaryPoint>,
    pub period: usize,
    pub eigen: EigenStructure,
    pub stability: Stability,
}

impl PeriodicOrbit {
    /// Residual of the cyclic system `beta(z_i) = z_{i+1 mod p}`.
    pub fn residual(&self, map: &dyn PlanarMap, params: &Params) -> Result<f64, BoundaryError> {
        let p = self.period;
        let mut worst: f64 = 0.0;
        for i in 0..p {
            let img = beta_apply(map, self.points[i], params)?;
            worst = worst.max(img.chart_dist(&self.points[(i + 1) % p]));
        }
        Ok(worst)
    }
}

/// Monodromy matrix: product of chart Jacobians around the orbit, last point
/// applied last, so it maps the tangent space at `points[0]` to itself.
pub fn orbit_monodromy(
    map: &dyn PlanarMap,
    points: &[BoundaryPoint],
    params: &Params,
) -> Result<Jacobian3, BoundaryError> {
    let mut m = Matrix3::identity();
    for bp in points {
        m = beta_jacobian(map, *bp, params)? * m;
    }
    Ok(m)
}

/// Reference value for the distinguished eigenvalue of an orbit: the product
/// over orbit points of the reciprocal normal stretches.
pub fn orbit_lambda1_reference(
    map: &dyn PlanarMap,
    points: &[BoundaryPoint],
    params: &Params,
) -> Result<f64, BoundaryError> {
    let mut acc = 1.0;
    for bp in points {
        let j = map.jacobian(bp.pos, params);
        let (_, scale) =
            inv_transpose_action(j, bp.normal()).map_err(|_| BoundaryError::SingularJacobian)?;
        acc /= scale;
    }
    Ok(acc)
}

fn orbit_from_converged(
    map: &dyn PlanarMap,
    points: Vec<BoundaryPoint>,
    params: &Params,
) -> Result<PeriodicOrbit, BoundaryError> {
    let period = points.len();
    if period > 1 {
        for i in 0..period {
            for k in (i + 1)..period {
                if points[i].chart_dist(&points[k]) < 1e-8 {
                    return Err(BoundaryError::CollapsedOrbit);
                }
            }
        }
    }
    let mono = orbit_monodromy(map, &points, params)?;
    let reference = orbit_lambda1_reference(map, &points, params)?;
    let eigen = eigen_classify(&mono, Some(reference));
    let stability = Stability::from_unstable_count(eigen.unstable_count());
    Ok(PeriodicOrbit { points, period, eigen, stability })
}

/// Newton iteration for a period-`p` orbit of the boundary map, solving the
/// cyclic system `beta(z_i) - z_{i+1 mod p} = 0` with analytic Jacobian and a
/// backtracking line search.
pub fn find_periodic_orbit(
    map: &dyn PlanarMap,
    guess: &[BoundaryPoint],
    params: &Params,
    period: usize,
    tol: f64,
    opts: &NewtonOptions,
) -> Result<PeriodicOrbit, BoundaryError> {
    assert!(period >= 1 && guess.len() == period, "guess length must equal period");
    let n = 3 * period;
    let mut pts: Vec<BoundaryPoint> = guess.to_vec();

    let residual_vec = |pts: &[BoundaryPoint]| -> Result<DVector<f64>, BoundaryError> {
        let mut r = DVector::zeros(n);
        for i in 0..period {
            let img = beta_apply(map, pts[i], params)?;
            let d = img.chart_diff(&pts[(i + 1) % period]);
            r[3 * i] = d.x;
            r[3 * i + 1] = d.y;
            r[3 * i + 2] = d.z;
        }
        Ok(r)
    };

    let mut r = residual_vec(&pts)?;
    for iter in 0..opts.max_iter {
        let rn = r.norm();
        if rn < tol {
            return orbit_from_converged(map, pts, params);
        }
        // Assemble the cyclic Jacobian: D beta blocks on the diagonal, -I on
        // the superdiagonal (wrapping).
        let mut jm = DMatrix::<f64>::zeros(n, n);
        for i in 0..period {
            let block = beta_jacobian(map, pts[i], params)?;
            for rr in 0..3 {
                for cc in 0..3 {
                    jm[(3 * i + rr, 3 * i + cc)] = block[(rr, cc)];
                }
            }
            let jcol = 3 * ((i + 1) % period);
            for rr in 0..3 {
                jm[(3 * i + rr, jcol + rr)] -= 1.0;
            }
        }
        let lu = jm.lu();
        let step = lu.solve(&(-&r)).ok_or(BoundaryError::SingularNewtonMatrix)?;

        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<BoundaryPoint> = pts
                .iter()
                .enumerate()
                .map(|(i, bp)| {
                    bp.chart_add(Vector3::new(
                        alpha * step[3 * i],
                        alpha * step[3 * i + 1],
                        alpha * step[3 * i + 2],
                    ))
                })
                .collect();
            if trial.iter().all(|bp| bp.pos.is_finite() && bp.pos.norm() < 1e6) {
                if let Ok(rt) = residual_vec(&trial) {
                    if rt.norm() < rn {
                        pts = trial;
                        r = rt;
                        accepted = true;
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(BoundaryError::NoConvergence { iterations: iter + 1, residual: rn });
        }
    }
    let rn = r.norm();
    if rn < tol {
        return orbit_from_converged(map, pts, params);
    }
    Err(BoundaryError::NoConvergence { iterations: opts.max_iter, residual: rn })
}

/// Newton iteration for a fixed point of the boundary map.
pub fn find_fixed_point(
    map: &dyn PlanarMap,
    guess: BoundaryPoint,
    params: &Params,
    tol: f64,
) -> Result<BoundaryPoint, BoundaryError> {
    let orbit = find_periodic_orbit(map, &[guess], params, 1, tol, &NewtonOptions::default())?;
    Ok(orbit.points[0])
}

/// Fixed point plus its spectral data.
pub fn find_fixed_orbit(
    map: &dyn PlanarMap,
    guess: BoundaryPoint,
    params: &Params,
    tol: f64,
) -> Result<PeriodicOrbit, BoundaryError> {
    find_periodic_orbit(map, &[guess], params, 1, tol, &NewtonOptions::default())
}

// ---------------------------------------------------------------------------
// Fixed-point spectral identities
// ---------------------------------------------------------------------------

/// Residual report for the spectral identities at a fixed point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenRelationReport {
    /// Chart residual of the fixed-point equation.
    pub fixed_residual: f64,
    /// `lambda_1` from the formula `||(f'(x)^T)^{-1} n||^{-1}`.
    pub lambda1_formula: f64,
    pub eigen: EigenStructure,
    /// `min_mu |mu - lambda1_formula|` over the three eigenvalues.
    pub eigenvalue_match: f64,
    /// `|lambda1 - lambda2 lambda3|` from the classified spectrum.
    pub product_residual: f64,
    /// Ratio of smallest to largest singular value of the planar projection
    /// of the transverse invariant 2-plane (should vanish: the plane projects
    /// to a line).
    pub projection_sv_ratio: f64,
    /// Angle between that projected line and the tangent direction of the
    /// normal circle at the fixed point (should vanish).
    pub projection_angle: f64,
}

fn singular_values_2x2(m: [[f64; 2]; 2]) -> (f64, f64) {
    // Exact singular values of a 2x2 matrix.
    let a = m[0][0];
    let b = m[0][1];
    let c = m[1][0];
    let d = m[1][1];
    let q1 = a * a + b * b + c * c + d * d;
    let det = a * d - b * c;
    let q2 = ((q1 * q1 - 4.0 * det * det).max(0.0)).sqrt();
    let smax = ((q1 + q2) / 2.0).sqrt();
    let smin = ((q1 - q2).max(0.0) / 2.0).sqrt();
    (smax, smin)
}

/// Verifies the fixed-point spectral identities at `fp` and returns the
/// residuals; fails if `fp` is not a fixed point to `1e-9`.
pub fn check_eigen_relations(
    map: &dyn PlanarMap,
    fp: BoundaryPoint,
    params: &Params,
) -> Result<EigenRelationReport, BoundaryError> {
    let img = beta_apply(map, fp, params)?;
    let fixed_residual = img.chart_dist(&fp);
    if fixed_residual >= 1e-9 {
        return Err(BoundaryError::NotAFixedPoint { residual: fixed_residual });
    }

    let j2 = map.jacobian(fp.pos, params);
    let (_, scale) =
        inv_transpose_action(j2, fp.normal()).map_err(|_| BoundaryError::SingularJacobian)?;
    let lambda1_formula = 1.0 / scale;

    let j3 = beta_jacobian(map, fp, params)?;
    let eigen = eigen_classify(&j3, Some(lambda1_formula));
    let eigenvalue_match = eigen
        .all()
        .iter()
        .map(|mu| (mu - Complex64::new(lambda1_formula, 0.0)).norm())
        .fold(f64::INFINITY, f64::min);

    // Basis of the invariant 2-plane transverse to the lambda_1 eigenvector,
    // projected to the plane.
    let (b0, b1): (Point2, Point2) = match eigen.pair {
        TransversePair::Complex { re, im } => {
            let v = complex_eigenvector(&j3, Complex64::new(re, im));
            (
                Point2::new(v[0].re, v[1].re),
                Point2::new(v[0].im, v[1].im),
            )
        }
        TransversePair::Real(a, b) => {
            let va = real_eigenvector(&j3, a);
            let vb = real_eigenvector(&j3, b);
            (Point2::new(va.x, va.y), Point2::new(vb.x, vb.y))
        }
    };
    let (smax, smin) = singular_values_2x2([[b0.x, b1.x], [b0.y, b1.y]]);
    let projection_sv_ratio = if smax > 0.0 { smin / smax } else { 0.0 };

    // Dominant direction of the projected plane vs the circle tangent u_n.
    let dir = if b0.norm() >= b1.norm() { b0 } else { b1 };
    let u_n = fp.normal().rot90();
    let projection_angle = match dir.normalized() {
        Some(d) => d.dot(u_n).abs().clamp(0.0, 1.0).acos(),
        None => std::f64::consts::FRAC_PI_2,
    };

    Ok(EigenRelationReport {
        fixed_residual,
        lambda1_formula,
        eigen,
        eigenvalue_match,
        product_residual: eigen.residuals.product,
        projection_sv_ratio,
        projection_angle,
    })
}

// ---------------------------------------------------------------------------
// Orbit search over a region
// ---------------------------------------------------------------------------

/// Runs Newton from a lattice of guesses over `region x S^1` and returns the
/// distinct period-`p` orbits found (deduplicated modulo cyclic rotation).
/// Guesses for `p > 1` are built by iterating the seed forward.
pub fn find_orbits_in_region(
    map: &dyn PlanarMap,
    params: &Params,
    region: crate::dynamics::Rect,
    grid: (usize, usize, usize),
    period: usize,
    tol: f64,
) -> Vec<PeriodicOrbit> {
    let (nx, ny, ntheta) = grid;
    let mut found: Vec<PeriodicOrbit> = Vec::new();
    let opts = NewtonOptions::default();
    for ix in 0..nx {
        for iy in 0..ny {
            for it in 0..ntheta {
                let x = region.min.x
                    + (region.max.x - region.min.x) * (ix as f64 + 0.5) / nx as f64;
                let y = region.min.y
                    + (region.max.y - region.min.y) * (iy as f64 + 0.5) / ny as f64;
                let theta = -std::f64::consts::PI
                    + 2.0 * std::f64::consts::PI * (it as f64 + 0.5) / ntheta as f64;
                let seed = BoundaryPoint::new(x, y, theta);
                let mut guess = vec![seed];
                let mut ok = true;
                for _ in 1..period {
                    match beta_apply(map, *guess.last().unwrap(), params) {
                        Ok(z) if z.pos.is_finite() && z.pos.norm() < 1e3 => guess.push(z),
                        _ => {
                            ok = false;
                            break;
                        }
                    }
                }
                if !ok {
                    continue;
                }
                if let Ok(orbit) = find_periodic_orbit(map, &guess, params, period, tol, &opts) {
                    if !found.iter().any(|o| orbits_match(o, &orbit, 1e-6)) {
                        found.push(orbit);
                    }
                }
            }
        }
    }
    found
}

/// True when two orbits coincide modulo cyclic rotation of their points.
pub fn orbits_match(a: &PeriodicOrbit, b: &PeriodicOrbit, tol: f64) -> bool {
    if a.period != b.period {
        return false;
    }
    let p = a.period;
    (0..p).any(|shift| {
        (0..p).all(|i| a.points[i].chart_dist(&b.points[(i + shift) % p]) < tol)
    })
}
