//! One-dimensional maximization: geometric bracketing followed by Brent's
//! golden-section / parabolic search.

use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy)]
pub(crate) struct SearchOptions<T> {
    pub rel_tol: T,
    pub abs_tol: T,
    pub max_expansions: usize,
    pub max_iter: usize,
}

impl<T: Scalar> SearchOptions<T> {
    pub fn with_expansions(max_expansions: usize) -> Self {
        Self { rel_tol: lit(1e-9), abs_tol: lit(1e-11), max_expansions, max_iter: 100 }
    }
}

/// Maximize `f` locally starting from `x0` (whose value `f0` is known), searching
/// within `[lower, upper]`. Returns the best point visited and its value, which is
/// never worse than `(x0, f0)`.
pub(crate) fn maximize<T, F>(mut f: F, x0: T, f0: T, step: T, lower: T, upper: T, opts: &SearchOptions<T>) -> (T, T)
where
    T: Scalar,
    F: FnMut(T) -> T,
{
    let clamp = |x: T| x.max(lower).min(upper);
    let golden: T = lit(1.618_033_988_749_895);

    let mut prev = x0;
    let mut cur = clamp(x0 + step);
    if cur == prev {
        cur = clamp(x0 - step);
        if cur == prev {
            return (x0, f0);
        }
    }
    let mut fcur = nan_to_neg_inf(f(cur));

    if fcur < f0 {
        // Downhill in the first direction: try the other side of x0.
        let other = clamp(x0 - (cur - x0));
        if other == x0 {
            return brent(&mut f, x0.min(cur), x0.max(cur), x0, f0, opts);
        }
        let fother = nan_to_neg_inf(f(other));
        if fother < f0 {
            return brent(&mut f, other.min(cur), other.max(cur), x0, f0, opts);
        }
        cur = other;
        fcur = fother;
    }

    // Invariant: f(cur) >= f(prev); walk further in the direction prev -> cur.
    for _ in 0..opts.max_expansions {
        let next = clamp(cur + golden * (cur - prev));
        if next == cur {
            return (cur, fcur);
        }
        let fnext = nan_to_neg_inf(f(next));
        if fnext < fcur {
            return brent(&mut f, prev.min(next), prev.max(next), cur, fcur, opts);
        }
        prev = cur;
        cur = next;
        fcur = fnext;
    }
    (cur, fcur)
}

#[inline]
fn nan_to_neg_inf<T: Scalar>(v: T) -> T {
    if v.is_nan() {
        T::neg_infinity()
    } else {
        v
    }
}

/// Brent's method on `[a, b]` for a maximum, starting from the interior point `x`.
fn brent<T, F>(f: &mut F, mut a: T, mut b: T, x: T, fx: T, opts: &SearchOptions<T>) -> (T, T)
where
    T: Scalar,
    F: FnMut(T) -> T,
{
    let cgold: T = lit(0.381_966_011_250_105);
    let half: T = lit(0.5);
    let two: T = lit(2.0);

    // Work on g = -f so the textbook minimization steps apply unchanged.
    let (mut x, mut w, mut v) = (x, x, x);
    let (mut gx, mut gw, mut gv) = (-fx, -fx, -fx);
    let mut d = T::zero();
    let mut e = T::zero();

    for _ in 0..opts.max_iter {
        let xm = half * (a + b);
        let tol1 = opts.rel_tol * x.abs() + opts.abs_tol;
        let tol2 = two * tol1;
        if (x - xm).abs() <= tol2 - half * (b - a) {
            break;
        }
        let mut golden_step = true;
        if e.abs() > tol1 {
            // Parabola through x, w, v.
            let r = (x - w) * (gx - gv);
            let mut q = (x - v) * (gx - gw);
            let mut p = (x - v) * q - (x - w) * r;
            q = two * (q - r);
            if q > T::zero() {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (half * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if xm >= x { tol1 } else { -tol1 };
                }
                golden_step = false;
            }
        }
        if golden_step {
            e = if x >= xm { a - x } else { b - x };
            d = cgold * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d >= T::zero() {
            x + tol1
        } else {
            x - tol1
        };
        let gu = -nan_to_neg_inf(f(u));
        if gu <= gx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            gv = gw;
            w = x;
            gw = gx;
            x = u;
            gx = gu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if gu <= gw || w == x {
                v = w;
                gv = gw;
                w = u;
                gw = gu;
            } else if gu <= gv || v == x || v == w {
                v = u;
                gv = gu;
            }
        }
    }
    (x, -gx)
}
