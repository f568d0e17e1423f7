//! Oracles shared by the integration tests and the acceptance suite.

use treecode::expansion::MultiIndex;
use twofloat::TwoFloat;

/// `1/x` to double-double accuracy; `TwoFloat`'s own reciprocal and division
/// stop near f64 precision.
fn recip(x: TwoFloat) -> TwoFloat {
    let r = TwoFloat::from(1.0 / x.hi());
    r + r * (TwoFloat::from(1.0) - x * r)
}

fn kernel(x: [f64; 3], y: [TwoFloat; 3]) -> TwoFloat {
    let mut r2 = TwoFloat::from(0.0);
    for i in 0..3 {
        let d = TwoFloat::from(x[i]) - y[i];
        r2 += d * d;
    }
    recip(TwoFloat::from(4.0) * twofloat::consts::PI * r2.sqrt())
}

fn binomial(m: u32, j: u32) -> f64 {
    (0..j).fold(1.0, |acc, i| acc * f64::from(m - i) / f64::from(i + 1))
}

/// `∂^k_y G(x, y_c)` by tensor-product central differences of step `h`.
fn central_difference(x: [f64; 3], yc: [f64; 3], k: [u32; 3], h: f64) -> TwoFloat {
    let stencil = |m: u32| -> Vec<(f64, f64)> {
        (0..=m)
            .map(|j| {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                (sign * binomial(m, j), (f64::from(m) / 2.0 - f64::from(j)) * h)
            })
            .collect()
    };
    let (s1, s2, s3) = (stencil(k[0]), stencil(k[1]), stencil(k[2]));
    let mut sum = TwoFloat::from(0.0);
    for &(w1, o1) in &s1 {
        for &(w2, o2) in &s2 {
            for &(w3, o3) in &s3 {
                let y = [
                    TwoFloat::from(yc[0]) + TwoFloat::from(o1),
                    TwoFloat::from(yc[1]) + TwoFloat::from(o2),
                    TwoFloat::from(yc[2]) + TwoFloat::from(o3),
                ];
                sum += TwoFloat::from(w1 * w2 * w3) * kernel(x, y);
            }
        }
    }
    // h is a power of two, so h^-n is exact
    let n = k.iter().sum::<u32>() as i32;
    sum * TwoFloat::from(h.powi(-n))
}

/// Richardson-extrapolated derivative divided by `k!`.
pub fn fd_coefficient(x: [f64; 3], yc: [f64; 3], k: MultiIndex) -> f64 {
    let k = k.as_array();
    let h = 2f64.powi(-10);
    let coarse = central_difference(x, yc, k, h);
    let fine = central_difference(x, yc, k, h / 2.0);
    let d = (TwoFloat::from(4.0) * fine - coarse) * recip(TwoFloat::from(3.0));
    let fact: f64 = k.iter().map(|&c| (1..=c).map(f64::from).product::<f64>()).product();
    (d * recip(TwoFloat::from(fact))).hi()
}
