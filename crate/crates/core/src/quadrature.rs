//! Adaptive 7/15-point Gauss-Kronrod quadrature for vector-valued integrands.

// Kronrod abscissae on [0, 1) (symmetric about 0) and weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the odd-indexed Kronrod nodes (1, 3, 5, 7).
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_SEGMENTS: usize = 2000;

struct Segment {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: f64,
}

fn gauss_kronrod<F>(f: &F, a: f64, b: f64, dim: usize, buf: &mut [f64]) -> Segment
where
    F: Fn(f64, &mut [f64]),
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kronrod = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];

    f(center, buf);
    for i in 0..dim {
        kronrod[i] = WGK[7] * buf[i];
        gauss[i] = WG[3] * buf[i];
    }
    for (j, (&x, &w)) in XGK[..7].iter().zip(&WGK[..7]).enumerate() {
        for sign in [-1.0, 1.0] {
            f(center + sign * half * x, buf);
            for i in 0..dim {
                kronrod[i] += w * buf[i];
                if j % 2 == 1 {
                    gauss[i] += WG[j / 2] * buf[i];
                }
            }
        }
    }
    let mut error: f64 = 0.0;
    for i in 0..dim {
        kronrod[i] *= half;
        gauss[i] *= half;
        error = error.max((kronrod[i] - gauss[i]).abs());
    }
    Segment {
        a,
        b,
        value: kronrod,
        error,
    }
}

/// Integrate `f` over `[a, b]`, where `f(t, out)` writes `dim` components.
///
/// Bisects the segment with the largest error estimate until the summed
/// component-wise maximum error falls below `abs_tol`. Returns the integral
/// and the final error estimate.
pub fn integrate_vec<F>(f: F, a: f64, b: f64, dim: usize, abs_tol: f64) -> (Vec<f64>, f64)
where
    F: Fn(f64, &mut [f64]),
{
    let mut buf = vec![0.0; dim];
    if b <= a || dim == 0 {
        return (vec![0.0; dim], 0.0);
    }
    let mut segments = vec![gauss_kronrod(&f, a, b, dim, &mut buf)];
    loop {
        let total_error: f64 = segments.iter().map(|s| s.error).sum();
        if total_error <= abs_tol || segments.len() >= MAX_SEGMENTS {
            break;
        }
        let (worst, _) = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .expect("at least one segment");
        let seg = segments.swap_remove(worst);
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            segments.push(seg);
            break;
        }
        segments.push(gauss_kronrod(&f, seg.a, mid, dim, &mut buf));
        segments.push(gauss_kronrod(&f, mid, seg.b, dim, &mut buf));
    }
    // sum in interval order so the result does not depend on refinement history
    segments.sort_by(|x, y| x.a.total_cmp(&y.a));
    let mut value = vec![0.0; dim];
    for s in &segments {
        for (v, sv) in value.iter_mut().zip(&s.value) {
            *v += sv;
        }
    }
    (value, segments.iter().map(|s| s.error).sum())
}

/// Scalar convenience wrapper around [`integrate_vec`].
pub fn integrate<F>(f: F, a: f64, b: f64, abs_tol: f64) -> f64
where
    F: Fn(f64) -> f64,
{
    integrate_vec(|t, out| out[0] = f(t), a, b, 1, abs_tol).0[0]
}
