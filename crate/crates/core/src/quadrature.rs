//! Vector-valued line and contour integrals in the complex plane.

use num_complex::Complex64 as C;

use crate::error::{Error, Result};

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

// Gauss weights for XGK[1], XGK[3], ..., XGK[9]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

/// Gauss–Kronrod 10/21 on the segment `[a, b]`: returns (Kronrod estimate, error estimate).
fn gk21<F>(f: &F, a: C, b: C, dim: usize) -> Result<(Vec<C>, f64)>
where
    F: Fn(C) -> Result<Vec<C>>,
{
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut k = vec![C::new(0.0, 0.0); dim];
    let mut g = vec![C::new(0.0, 0.0); dim];
    let centre = f(mid)?;
    for i in 0..dim {
        k[i] += WGK[10] * centre[i];
    }
    for j in 0..10 {
        let lo = f(mid - half * XGK[j])?;
        let hi = f(mid + half * XGK[j])?;
        for i in 0..dim {
            let s = lo[i] + hi[i];
            k[i] += WGK[j] * s;
            if j % 2 == 1 {
                g[i] += WG[j / 2] * s;
            }
        }
    }
    let mut err: f64 = 0.0;
    for i in 0..dim {
        k[i] *= half;
        g[i] *= half;
        err = err.max((k[i] - g[i]).norm());
    }
    Ok((k, err))
}

/// Adaptive Gauss–Kronrod integral of a vector-valued `f(z) dz` along the straight segment.
pub fn integrate_segment<F>(f: &F, a: C, b: C, dim: usize, tol: f64) -> Result<Vec<C>>
where
    F: Fn(C) -> Result<Vec<C>>,
{
    let mut total = vec![C::new(0.0, 0.0); dim];
    let mut stack = vec![(a, b, tol, 0u32)];
    while let Some((lo, hi, t, depth)) = stack.pop() {
        let (val, err) = gk21(f, lo, hi, dim)?;
        if err <= t || depth >= 40 {
            if err > t && depth >= 40 {
                return Err(Error::Quadrature(format!(
                    "segment {lo}..{hi} error {err:.3e} above {t:.3e}"
                )));
            }
            for i in 0..dim {
                total[i] += val[i];
            }
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi, 0.5 * t, depth + 1));
            stack.push((lo, mid, 0.5 * t, depth + 1));
        }
    }
    Ok(total)
}

/// Integral along a polyline through `points`, splitting `tol` over the segments.
pub fn integrate_polyline<F>(f: &F, points: &[C], dim: usize, tol: f64) -> Result<Vec<C>>
where
    F: Fn(C) -> Result<Vec<C>>,
{
    let mut total = vec![C::new(0.0, 0.0); dim];
    let nseg = points.len().saturating_sub(1).max(1) as f64;
    for w in points.windows(2) {
        let part = integrate_segment(f, w[0], w[1], dim, tol / nseg)?;
        for i in 0..dim {
            total[i] += part[i];
        }
    }
    Ok(total)
}

/// Counter-clockwise `∮ f(z) dz` over a circle by the trapezoid rule, doubling the
/// node count until two successive estimates agree to `tol`.
pub fn circle_integral<F>(f: &F, centre: C, radius: f64, dim: usize, tol: f64) -> Result<Vec<C>>
where
    F: Fn(C) -> Result<Vec<C>>,
{
    let node = |k: usize, n: usize| {
        let th = 2.0 * std::f64::consts::PI * (k as f64 + 0.25) / n as f64;
        C::from_polar(radius, th)
    };
    let mut n = 16usize;
    let mut acc = vec![C::new(0.0, 0.0); dim];
    for k in 0..n {
        let e = node(k, n);
        let v = f(centre + e)?;
        for i in 0..dim {
            acc[i] += v[i] * e;
        }
    }
    let est = |acc: &[C], n: usize| -> Vec<C> {
        acc.iter()
            .map(|s| s * C::new(0.0, 2.0 * std::f64::consts::PI / n as f64))
            .collect()
    };
    let mut prev = est(&acc, n);
    while n < (1 << 18) {
        // the new nodes interleave the old ones
        let n2 = 2 * n;
        for k in (1..n2).step_by(2) {
            let e = node(k, n2);
            let v = f(centre + e)?;
            for i in 0..dim {
                acc[i] += v[i] * e;
            }
        }
        n = n2;
        let cur = est(&acc, n);
        let diff = cur
            .iter()
            .zip(&prev)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        prev = cur;
        if diff < tol {
            return Ok(prev);
        }
    }
    Err(Error::Quadrature(format!(
        "trapezoid on circle |z - {centre}| = {radius} did not settle"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_exact() {
        for k in 0..20 {
            let f = |z: C| Ok(vec![z.powi(k)]);
            let a = C::new(0.3, -0.2);
            let b = C::new(1.7, 0.9);
            let want = (b.powi(k + 1) - a.powi(k + 1)) / (k as f64 + 1.0);
            let got = integrate_segment(&f, a, b, 1, 1e-13 * want.norm().max(1.0)).unwrap()[0];
            assert!((got - want).norm() < 1e-12 * want.norm().max(1.0), "k = {k}");
        }
    }

    #[test]
    fn log_along_polyline() {
        let f = |z: C| Ok(vec![1.0 / z]);
        let pts = [C::new(1.0, 0.0), C::new(1.0, 1.0), C::new(-1.0, 1.0), C::new(-1.0, 0.1)];
        let got = integrate_polyline(&f, &pts, 1, 1e-12).unwrap()[0];
        let want = (pts[3]).ln() - pts[0].ln();
        assert!((got - want).norm() < 1e-11);
    }

    #[test]
    fn residue_on_circle() {
        let f = |z: C| Ok(vec![1.0 / (z - 0.2), (z - 0.2).powi(-2), z * z]);
        let got = circle_integral(&f, C::new(0.0, 0.0), 1.0, 3, 1e-12).unwrap();
        assert!((got[0] - C::new(0.0, 2.0 * std::f64::consts::PI)).norm() < 1e-12);
        assert!(got[1].norm() < 1e-12);
        assert!(got[2].norm() < 1e-12);
    }
}
