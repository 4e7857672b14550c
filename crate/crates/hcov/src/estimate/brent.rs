//! Brent's derivative-free 1D minimization: golden-section steps guarded by
//! parabolic interpolation.

use crate::{Error, Result};

const GOLD: f64 = 0.381_966_011_250_105_1; // (3 - sqrt(5)) / 2
const MAX_ITER: usize = 200;

/// Minimizes a unimodal-ish `g` on [a, b] to absolute tolerance `tol` in the
/// argument.
pub fn brent_minimize_1d<G>(mut g: G, a: f64, b: f64, tol: f64) -> Result<f64>
where
    G: FnMut(f64) -> f64,
{
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidBracket { a, b });
    }
    let tol = tol.max(1e-14);
    let (mut lo, mut hi) = (a, b);
    let mut x = lo + GOLD * (hi - lo);
    let mut w = x;
    let mut v = x;
    let mut fx = g(x);
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;

    for _ in 0..MAX_ITER {
        let m = 0.5 * (lo + hi);
        let tol1 = tol * x.abs().max(1.0) * 1e-1 + 1e-15;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (hi - lo) || (hi - lo) < tol {
            return Ok(x);
        }
        let mut use_golden = true;
        if e.abs() > tol1 {
            // parabolic fit through (v, fv), (w, fw), (x, fx)
            let r = (x - w) * (fx - fv);
            let q = (x - v) * (fx - fw);
            let p = (x - v) * q - (x - w) * r;
            let mut q2 = 2.0 * (q - r);
            let p = if q2 > 0.0 { -p } else { p };
            q2 = q2.abs();
            let e_old = e;
            e = d;
            if p.abs() < (0.5 * q2 * e_old).abs() && p > q2 * (lo - x) && p < q2 * (hi - x) {
                d = p / q2;
                let u = x + d;
                if (u - lo) < tol2 || (hi - u) < tol2 {
                    d = if m > x { tol1 } else { -tol1 };
                }
                use_golden = false;
            }
        }
        if use_golden {
            e = if x < m { hi - x } else { lo - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else {
            x + if d > 0.0 { tol1 } else { -tol1 }
        };
        let fu = g(u);
        if fu <= fx {
            if u < x {
                hi = x;
            } else {
                lo = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                lo = u;
            } else {
                hi = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_minimum() {
        let x = brent_minimize_1d(|x| (x - 2.0) * (x - 2.0), 0.0, 5.0, 1e-10).unwrap();
        assert!((x - 2.0).abs() < 1e-8, "got {x}");
    }

    #[test]
    fn cosine_minimum_at_pi() {
        // cos has its one interior minimum on [2, 4] at pi
        let x = brent_minimize_1d(|x| x.cos(), 2.0, 4.0, 1e-10).unwrap();
        assert!((x - std::f64::consts::PI).abs() < 1e-8, "got {x}");
    }

    #[test]
    fn boundary_minimum_is_found() {
        // -cos decreases towards the left edge of [2, 4]
        let x = brent_minimize_1d(|x| -x.cos(), 2.0, 4.0, 1e-10).unwrap();
        assert!((x - 2.0).abs() < 1e-6, "got {x}");
    }

    #[test]
    fn rejects_bad_bracket() {
        assert!(brent_minimize_1d(|x| x, 1.0, 1.0, 1e-8).is_err());
        assert!(brent_minimize_1d(|x| x, 2.0, 1.0, 1e-8).is_err());
    }
}
