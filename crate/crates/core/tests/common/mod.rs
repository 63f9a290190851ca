//! Independent numerical oracles shared by integration tests: adaptive
//! quadrature, densities written out from their textbook formulas, and simple
//! statistical tests. Nothing here calls into the library under test.

#![allow(dead_code)]

/// Adaptive Simpson quadrature on `[a, b]` with absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, m, fm, whole, tol, 50)
}

/// Integral over the real line of a function with kinks at `breaks`, by
/// splitting at the kinks and truncating `span` beyond the outermost ones.
pub fn integrate_line<F: Fn(f64) -> f64>(f: &F, breaks: &[f64], span: f64, tol: f64) -> f64 {
    let mut pts: Vec<f64> = breaks.to_vec();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let lo = pts[0] - span;
    let hi = pts[pts.len() - 1] + span;
    let mut knots = vec![lo];
    knots.extend(pts);
    knots.push(hi);
    // Extra knots near each kink help the quadrature resolve the steep
    // exponential tails.
    let mut refined = Vec::new();
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let pieces = ((b - a) / 2.0).ceil().max(1.0) as usize;
        for i in 0..pieces {
            refined.push((
                a + (b - a) * i as f64 / pieces as f64,
                a + (b - a) * (i + 1) as f64 / pieces as f64,
            ));
        }
    }
    let per = tol / refined.len() as f64;
    refined.iter().map(|&(a, b)| integrate(f, a, b, per)).sum()
}

/// Check loss written directly from its definition.
pub fn rho(u: f64, tau: f64) -> f64 {
    u * (tau - if u < 0.0 { 1.0 } else { 0.0 })
}

/// Asymmetric Laplace density `tau(1-tau)/sigma exp(-rho((y-mu)/sigma))`.
pub fn ald_density(y: f64, mu: f64, sigma: f64, tau: f64) -> f64 {
    tau * (1.0 - tau) / sigma * (-rho((y - mu) / sigma, tau)).exp()
}

/// GIG(1/2, r1, r2) unnormalized density.
pub fn gig_kernel(x: f64, r1: f64, r2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    x.powf(-0.5) * (-0.5 * (r1 * r1 / x + r2 * r2 * x)).exp()
}

/// Numerical GIG(1/2) CDF evaluated at every sorted point in `xs`, computed by
/// accumulating quadrature in `t = sqrt(x)` (which removes the `x^{-1/2}`
/// singularity) and normalizing by the numerically integrated total mass.
pub fn gig_cdf_sorted(xs: &[f64], r1: f64, r2: f64) -> Vec<f64> {
    let g = |t: f64| {
        if t <= 0.0 {
            0.0
        } else {
            2.0 * t * gig_kernel(t * t, r1, r2)
        }
    };
    let upper = {
        // far enough that the remaining tail is negligible
        let mean = r1 / r2 + 1.0 / (r2 * r2);
        (mean * 50.0 + 50.0 / (r2 * r2)).sqrt()
    };
    let total = integrate(&g, 0.0, upper, 1e-12);
    let mut out = Vec::with_capacity(xs.len());
    let mut acc = 0.0;
    let mut prev = 0.0;
    for &x in xs {
        let t = x.sqrt();
        if t > prev {
            acc += integrate(&g, prev, t, 1e-13);
            prev = t;
        }
        out.push((acc / total).min(1.0));
    }
    out
}

/// Two-sided Kolmogorov-Smirnov statistic of sorted samples against CDF values
/// at those samples.
pub fn ks_statistic(cdf_at_sorted: &[f64]) -> f64 {
    let n = cdf_at_sorted.len() as f64;
    cdf_at_sorted
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let lo = (f - i as f64 / n).abs();
            let hi = ((i + 1) as f64 / n - f).abs();
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value at level 0.01.
pub fn ks_critical_001(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

/// Mean and standard error of the mean, with the standard error inflated for
/// autocorrelation by the batch-means method when `batches > 1`.
pub fn mean_se(xs: &[f64], batches: usize) -> (f64, f64) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    if batches <= 1 {
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        return (mean, (var / n as f64).sqrt());
    }
    let size = n / batches;
    let bm: Vec<f64> = (0..batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let var = bm.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (mean, (var / batches as f64).sqrt())
}

/// Mann-Kendall trend test; returns the two-sided normal-approximation p-value.
pub fn mann_kendall_p(xs: &[f64]) -> f64 {
    let n = xs.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += (xs[j] - xs[i]).signum();
        }
    }
    let nf = n as f64;
    let var = nf * (nf - 1.0) * (2.0 * nf + 5.0) / 18.0;
    let z = if s > 0.0 {
        (s - 1.0) / var.sqrt()
    } else if s < 0.0 {
        (s + 1.0) / var.sqrt()
    } else {
        0.0
    };
    2.0 * (1.0 - std_normal_cdf(z.abs()))
}

/// Standard normal CDF via the complementary error function.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn erfc(x: f64) -> f64 {
    // Numerical Recipes erfcc, relative error below 1.2e-7 everywhere.
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t
        * (-z * z - 1.265_512_23
            + t * (1.000_023_68
                + t * (0.374_091_96
                    + t * (0.096_784_18
                        + t * (-0.186_288_06
                            + t * (0.278_868_07
                                + t * (-1.135_203_98
                                    + t * (1.488_515_87 + t * (-0.822_152_23 + t * 0.170_872_77)))))))))
            .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

/// Logistic function from its definition.
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Total-variation distance between two discrete distributions given as
/// (possibly unnormalized) weights over the same bins.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let sp: f64 = p.iter().sum();
    let sq: f64 = q.iter().sum();
    0.5 * p.iter().zip(q).map(|(a, b)| (a / sp - b / sq).abs()).sum::<f64>()
}

/// Marginal bin masses of a 2-D density evaluated by midpoint quadrature.
pub struct GridOracle {
    pub lo: [f64; 2],
    pub width: [f64; 2],
    pub bins: usize,
    pub marginals: [Vec<f64>; 2],
    pub joint: Vec<f64>,
    pub joint_bins: usize,
}

impl GridOracle {
    pub fn new<F: Fn(f64, f64) -> f64>(log_kernel: F) -> Self {
        // Coarse pass to locate the mass, then a fine pass aligned with bins.
        let coarse = 400;
        let (clo, chi) = (-6.0, 6.0);
        let h = (chi - clo) / coarse as f64;
        let mut pts = Vec::new();
        for a in 0..coarse {
            for b in 0..coarse {
                let (g0, g1) = (clo + (a as f64 + 0.5) * h, clo + (b as f64 + 0.5) * h);
                pts.push((g0, g1, log_kernel(g0, g1)));
            }
        }
        let mx = pts.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = pts.iter().map(|p| (p.2 - mx).exp()).sum();
        let mut mean = [0.0; 2];
        let mut sq = [0.0; 2];
        for &(g0, g1, l) in &pts {
            let w = (l - mx).exp() / z;
            mean[0] += w * g0;
            mean[1] += w * g1;
            sq[0] += w * g0 * g0;
            sq[1] += w * g1 * g1;
        }
        let sd = [(sq[0] - mean[0].powi(2)).sqrt(), (sq[1] - mean[1].powi(2)).sqrt()];

        let bins = 40;
        let sub = 16;
        let lo = [mean[0] - 5.0 * sd[0], mean[1] - 5.0 * sd[1]];
        let width = [10.0 * sd[0] / bins as f64, 10.0 * sd[1] / bins as f64];
        // Extend two sd on each side for the overflow bins.
        let pad = 8 * sub;
        let cells = bins * sub + 2 * pad;
        let cell = [width[0] / sub as f64, width[1] / sub as f64];
        let joint_bins = 8;
        let mut marginals = [vec![0.0; bins + 2], vec![0.0; bins + 2]];
        let mut joint = vec![0.0; joint_bins * joint_bins];
        let bin_of = |c: usize| -> usize {
            if c < pad {
                0
            } else if c >= pad + bins * sub {
                bins + 1
            } else {
                1 + (c - pad) / sub
            }
        };
        let mut logs = vec![0.0; cells * cells];
        for a in 0..cells {
            for b in 0..cells {
                let g0 = lo[0] + (a as f64 - pad as f64 + 0.5) * cell[0];
                let g1 = lo[1] + (b as f64 - pad as f64 + 0.5) * cell[1];
                logs[a * cells + b] = log_kernel(g0, g1);
            }
        }
        let mx = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for a in 0..cells {
            for b in 0..cells {
                let w = (logs[a * cells + b] - mx).exp();
                marginals[0][bin_of(a)] += w;
                marginals[1][bin_of(b)] += w;
                let ja = (a * joint_bins / cells).min(joint_bins - 1);
                let jb = (b * joint_bins / cells).min(joint_bins - 1);
                joint[ja * joint_bins + jb] += w;
            }
        }
        Self {
            lo,
            width,
            bins,
            marginals,
            joint,
            joint_bins,
        }
    }

    pub fn bin(&self, coord: usize, g: f64) -> usize {
        let t = ((g - self.lo[coord]) / self.width[coord]).floor();
        if t < 0.0 {
            0
        } else if t >= self.bins as f64 {
            self.bins + 1
        } else {
            1 + t as usize
        }
    }

    pub fn joint_bin(&self, g0: f64, g1: f64) -> Option<usize> {
        // The joint grid spans bins plus two sd of padding on each side.
        let span = |c: usize, g: f64| {
            let start = self.lo[c] - 2.0 * self.bins as f64 * self.width[c] / 10.0;
            let total = self.width[c] * self.bins as f64 * 1.4;
            let t = ((g - start) / total * self.joint_bins as f64).floor();
            (t >= 0.0 && t < self.joint_bins as f64).then_some(t as usize)
        };
        Some(span(0, g0)? * self.joint_bins + span(1, g1)?)
    }
}
