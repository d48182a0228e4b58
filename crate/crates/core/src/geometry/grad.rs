//! Closed-form derivatives of the ball operations.
//!
//! Each `*_vjp` takes the cotangent of the operation's output (the gradient
//! of some scalar loss with respect to the output, in ambient coordinates)
//! and returns the cotangents of the inputs. Chaining these implements exact
//! backpropagation through any composition of ball operations without an
//! autodiff dependency; `nn::grad::numeric_gradient` is the independent
//! check.
//!
//! The final clip applied by the forward operations is treated as the
//! identity: callers are expected to evaluate gradients at points strictly
//! inside the ball (see the boundary handling in `c2f`).

use ndarray::{Array1, Array2};

use super::{atanh_clamped, conformal_factor, mobius_add_raw, BallPoint};

fn sech2(a: f64) -> f64 {
    let ch = a.cosh();
    1.0 / (ch * ch)
}

/// Gradients of `distance(x, y)` with respect to both points.
///
/// Returns zero vectors at `x == y`, where the distance is not
/// differentiable; the zero subgradient is the convention used throughout.
pub fn distance_grad(x: &BallPoint, y: &BallPoint) -> (Array1<f64>, Array1<f64>) {
    assert_eq!(x.config(), y.config(), "distance_grad requires one ball");
    let c = x.config().curvature();
    let xv = x.coords();
    let yv = y.coords();
    let diff = xv - yv;
    let a = diff.dot(&diff);
    let bx = 1.0 - c * xv.dot(xv);
    let by = 1.0 - c * yv.dot(yv);
    let u = 1.0 + 2.0 * c * a / (bx * by);
    if u <= 1.0 + 1e-14 {
        return (Array1::zeros(xv.len()), Array1::zeros(yv.len()));
    }
    let coef = 1.0 / (c.sqrt() * (u * u - 1.0).sqrt());
    // du/dx = 2c [ 2(x-y)/(Bx By) + 2cA x / (Bx^2 By) ]
    let gx = (&diff * (2.0 / (bx * by)) + xv * (2.0 * c * a / (bx * bx * by))) * (2.0 * c * coef);
    let gy = (&diff * (-2.0 / (bx * by)) + yv * (2.0 * c * a / (bx * by * by))) * (2.0 * c * coef);
    (gx, gy)
}

/// Cotangents of `mobius_add(x, y)` given the cotangent of its output.
pub fn mobius_add_vjp(
    x: &BallPoint,
    y: &BallPoint,
    cotangent: &Array1<f64>,
) -> (Array1<f64>, Array1<f64>) {
    assert_eq!(x.config(), y.config(), "mobius_add_vjp requires one ball");
    let c = x.config().curvature();
    mobius_add_vjp_raw(c, x.coords(), y.coords(), cotangent)
}

pub(crate) fn mobius_add_vjp_raw(
    c: f64,
    xv: &Array1<f64>,
    yv: &Array1<f64>,
    g: &Array1<f64>,
) -> (Array1<f64>, Array1<f64>) {
    let xy = xv.dot(yv);
    let nx2 = xv.dot(xv);
    let ny2 = yv.dot(yv);
    let alpha = 1.0 + 2.0 * c * xy + c * ny2;
    let beta = 1.0 - c * nx2;
    let den = 1.0 + 2.0 * c * xy + c * c * nx2 * ny2;
    let out = (xv * alpha + yv * beta) / den;

    let g_x = g.dot(xv);
    let g_y = g.dot(yv);
    let g_o = g.dot(&out);

    // d(out)/dx contracted against g: alpha g + 2c(g.x) y - 2c(g.y) x,
    // minus the quotient term (g.out) dD/dx, all over D.
    let grad_x = (g * alpha + yv * (2.0 * c * g_x)
        - xv * (2.0 * c * g_y)
        - (yv * (2.0 * c) + xv * (2.0 * c * c * ny2)) * g_o)
        / den;
    let grad_y = (g * beta + (xv + yv) * (2.0 * c * g_x)
        - (xv * (2.0 * c) + yv * (2.0 * c * c * nx2)) * g_o)
        / den;
    (grad_x, grad_y)
}

/// Cotangents of `exp_map` with respect to the base point and the tangent
/// coordinates.
pub fn exp_map_vjp(
    w: &BallPoint,
    v: &Array1<f64>,
    cotangent: &Array1<f64>,
) -> (Array1<f64>, Array1<f64>) {
    let c = w.config().curvature();
    let sc = c.sqrt();
    let nv = v.dot(v).sqrt();
    if nv == 0.0 {
        // exp_w(v) = w + v + O(|v|^2 + |v||w| c): both Jacobians are the
        // identity at v = 0.
        return (cotangent.clone(), cotangent.clone());
    }
    let lam = conformal_factor(w);
    let a = sc * lam * nv / 2.0;
    let u = a.tanh() / (sc * nv);
    let s = v * u;

    let (grad_w_add, grad_s) = mobius_add_vjp_raw(c, w.coords(), &s, cotangent);

    // u depends on ||v|| and on w through lambda_w.
    let du_dnv = ((c * lam * nv / 2.0) * sech2(a) - sc * a.tanh()) / (c * nv * nv);
    let du_dw_coeff = 0.5 * sech2(a) * c * lam * lam; // d(u)/dw = coeff * w
    let gs_v = grad_s.dot(v);

    let grad_v = &grad_s * u + v * (gs_v * du_dnv / nv);
    let grad_w = grad_w_add + w.coords() * (gs_v * du_dw_coeff);
    (grad_w, grad_v)
}

/// Cotangents of `mobius_matvec(m, x)`: returns `(grad_m, grad_x)`.
pub fn mobius_matvec_vjp(
    m: &Array2<f64>,
    x: &BallPoint,
    cotangent: &Array1<f64>,
) -> (Array2<f64>, Array1<f64>) {
    let c = x.config().curvature();
    let sc = c.sqrt();
    let xv = x.coords();
    let nx = xv.dot(xv).sqrt();
    let p = m.dot(xv);
    let np = p.dot(&p).sqrt();

    let outer = |col: &Array1<f64>, row: &Array1<f64>| -> Array2<f64> {
        let mut out = Array2::zeros((col.len(), row.len()));
        for (i, ci) in col.iter().enumerate() {
            for (j, rj) in row.iter().enumerate() {
                out[[i, j]] = ci * rj;
            }
        }
        out
    };

    if nx < 1e-300 {
        // Near the origin the map is M itself.
        let grad_x = m.t().dot(cotangent);
        let grad_m = outer(cotangent, xv);
        return (grad_m, grad_x);
    }
    let b = atanh_clamped(sc * nx);
    if np < 1e-300 {
        // tanh(r b)/(sqrt(c) np) -> b/(sqrt(c) nx) as ||Mx|| -> 0.
        let sigma = b / (sc * nx);
        let g_p = cotangent * sigma;
        let grad_x = m.t().dot(&g_p);
        let grad_m = outer(&g_p, xv);
        return (grad_m, grad_x);
    }

    let r = np / nx;
    let rb = r * b;
    let h = rb.tanh();
    let sigma = h / (sc * np);
    let sech = sech2(rb);

    let dsigma_dnp = (sech * (b / nx) * (sc * np) - h * sc) / (c * np * np);
    let db_dnx = sc / (1.0 - c * nx * nx);
    let dsigma_dnx = sech * (-(np / (nx * nx)) * b + r * db_dnx) / (sc * np);

    let g_dot_p = cotangent.dot(&p);
    let g_p = cotangent * sigma + &p * (g_dot_p * dsigma_dnp / np);
    let grad_x = m.t().dot(&g_p) + xv * (g_dot_p * dsigma_dnx / nx);
    let grad_m = outer(&g_p, xv);
    (grad_m, grad_x)
}

/// Cotangent of `log_map(w, y)` with respect to `y` only (enough for losses
/// that treat the base as fixed).
pub fn log_map_vjp_y(w: &BallPoint, y: &BallPoint, cotangent: &Array1<f64>) -> Array1<f64> {
    assert_eq!(w.config(), y.config(), "log_map_vjp_y requires one ball");
    let c = w.config().curvature();
    let sc = c.sqrt();
    let neg_w = w.negate();
    let mvec = mobius_add_raw(c, &neg_w.coords().view(), &y.coords().view());
    let nm = mvec.dot(&mvec).sqrt();
    let lam = conformal_factor(w);
    if nm < 1e-300 {
        // log_w(y) ~ (2 / lambda_w) ((-w) (+) y) near y = w.
        let g_m = cotangent * (2.0 / lam);
        let (_gw, gy) = mobius_add_vjp_raw(c, neg_w.coords(), y.coords(), &g_m);
        return gy;
    }
    let at = atanh_clamped(sc * nm);
    let scale = (2.0 / (sc * lam)) * at / nm;
    // d(scale)/d(nm) through both the atanh and the 1/nm factor.
    let datanh = 1.0 / (1.0 - c * nm * nm);
    let dscale_dnm = (2.0 / (sc * lam)) * (sc * datanh * nm - at) / (nm * nm);
    let g_dot_m = cotangent.dot(&mvec);
    let g_m = cotangent * scale + &mvec * (g_dot_m * dscale_dnm / nm);
    let (_gw, gy) = mobius_add_vjp_raw(c, neg_w.coords(), y.coords(), &g_m);
    gy
}
