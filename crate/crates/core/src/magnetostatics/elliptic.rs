//! Complete elliptic integrals of the first and second kind by the arithmetic-geometric mean.
//!
//! Parameter convention: `m = k²`.

use std::f64::consts::FRAC_PI_2;

/// K(m) and E(m) together; both share one AGM iteration.
pub fn ellip_ke(m: f64) -> (f64, f64) {
    debug_assert!((0.0..1.0).contains(&m), "m = {m}");
    let mut a = 1.0;
    let mut b = (1.0 - m).sqrt();
    let mut c = m.sqrt();
    let mut pow2 = 0.5;
    let mut sum = pow2 * c * c;
    for _ in 0..40 {
        if (a - b).abs() <= f64::EPSILON * a {
            break;
        }
        let an = 0.5 * (a + b);
        let bn = (a * b).sqrt();
        c = 0.5 * (a - b);
        a = an;
        b = bn;
        pow2 *= 2.0;
        sum += pow2 * c * c;
    }
    let k = FRAC_PI_2 / a;
    (k, k * (1.0 - sum))
}

pub fn ellipk(m: f64) -> f64 {
    ellip_ke(m).0
}

pub fn ellipe(m: f64) -> f64 {
    ellip_ke(m).1
}

/// `(2 - m) K(m) - 2 E(m)`, which cancels catastrophically for small `m`; a power series
/// takes over there.
pub fn flux_combination(m: f64) -> f64 {
    if m < 1e-3 {
        // coefficients d_n = 4n c_n / (2n - 1) - c_{n-1}, c_n = ((2n)! / (4^n n!^2))^2
        let mut c_prev = 0.25; // c_1
        let mut mn = m; // m^1
        let mut acc = 0.0;
        for n in 2..14 {
            let nf = n as f64;
            let ratio = (2.0 * nf - 1.0) / (2.0 * nf);
            let c_n = c_prev * ratio * ratio;
            mn *= m;
            acc += (4.0 * nf * c_n / (2.0 * nf - 1.0) - c_prev) * mn;
            c_prev = c_n;
        }
        FRAC_PI_2 * acc
    } else {
        let (k, e) = ellip_ke(m);
        (2.0 - m) * k - 2.0 * e
    }
}
