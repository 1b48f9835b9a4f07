//! Order-invariant accumulation and small statistical helpers.

/// Kahan–Babuška (Neumaier) compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = KahanSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

pub fn sum(xs: &[f64]) -> f64 {
    xs.iter().copied().collect::<KahanSum>().value()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    sum(xs) / xs.len() as f64
}

/// Unbiased sample variance (n - 1 denominator).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).collect::<KahanSum>().value() / (n - 1) as f64
}

/// Mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    let v = sample_variance(xs);
    (m, (v / xs.len() as f64).sqrt())
}

/// Sample covariance of paired observations.
pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    let mx = mean(xs);
    let my = mean(ys);
    xs.iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .collect::<KahanSum>()
        .value()
        / (n - 1) as f64
}

/// Weighted least squares fit of `y = a + b x`. Returns `(a, b, stderr_b)`.
///
/// The slope stderr is residual-based, `sqrt(RSS_w/(n−2)/Sxx_w)`; NaN for
/// two points.
pub fn weighted_line_fit(xs: &[f64], ys: &[f64], ws: &[f64]) -> (f64, f64, f64) {
    assert!(xs.len() == ys.len() && ys.len() == ws.len());
    let sw: f64 = ws.iter().sum();
    let xm = xs.iter().zip(ws).map(|(x, w)| x * w).sum::<f64>() / sw;
    let ym = ys.iter().zip(ws).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxx: f64 = xs.iter().zip(ws).map(|(x, w)| w * (x - xm) * (x - xm)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(ys)
        .zip(ws)
        .map(|((x, y), w)| w * (x - xm) * (y - ym))
        .sum();
    let b = sxy / sxx;
    let a = ym - b * xm;
    let n = xs.len();
    let se = if n > 2 {
        let rss: f64 = xs
            .iter()
            .zip(ys)
            .zip(ws)
            .map(|((x, y), w)| w * (y - a - b * x).powi(2))
            .sum();
        (rss / (n - 2) as f64 / sxx).sqrt()
    } else {
        f64::NAN
    };
    (a, b, se)
}
