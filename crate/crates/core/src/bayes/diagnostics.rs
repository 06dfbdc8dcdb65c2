use super::{BayesError, Chain};

/// `R(τ) = Σ (x_n − x̄)(x_{n+τ} − x̄) / Σ (x_n − x̄)²`.
pub fn acf(x: &[f64], tau: usize) -> Result<f64, BayesError> {
    if tau >= x.len() {
        return Err(BayesError::Lag { tau, len: x.len() });
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let den: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    if den == 0.0 {
        return Err(BayesError::ZeroVariance);
    }
    if tau == 0 {
        return Ok(1.0);
    }
    let num: f64 = x.iter().zip(&x[tau..]).map(|(a, b)| (a - mean) * (b - mean)).sum();
    Ok(num / den)
}

/// `R(0), …, R(max_tau)`, truncated at the chain length.
pub fn acf_series(x: &[f64], max_tau: usize) -> Result<Vec<f64>, BayesError> {
    (0..=max_tau.min(x.len().saturating_sub(1))).map(|t| acf(x, t)).collect()
}

/// Slope of the least-squares line through `(k, y_k)`.
pub fn least_squares_slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    if y.len() < 2 {
        return 0.0;
    }
    let xm = (n - 1.0) / 2.0;
    let ym = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (k, v) in y.iter().enumerate() {
        let dx = k as f64 - xm;
        sxy += dx * (v - ym);
        sxx += dx * dx;
    }
    sxy / sxx
}

pub fn acceptance_rate(chain: &Chain) -> f64 {
    if chain.is_empty() {
        return 0.0;
    }
    chain.accepted.iter().filter(|a| **a).count() as f64 / chain.len() as f64
}

/// Equal-width histogram normalized to unit mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub mass: Vec<f64>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut mass = vec![0.0; bins];
        for v in values {
            mass[bin_of(*v, lo, hi, bins)] += 1.0 / values.len() as f64;
        }
        Self { lo, hi, mass }
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.mass.len() as f64
    }

    pub fn bin_center(&self, k: usize) -> f64 {
        self.lo + (k as f64 + 0.5) * self.bin_width()
    }

    pub fn mode_bin(&self) -> usize {
        let mut best = 0;
        for (k, m) in self.mass.iter().enumerate() {
            if *m > self.mass[best] {
                best = k;
            }
        }
        best
    }

    /// Rows `bin_lo,bin_hi,mass`.
    pub fn to_csv(&self) -> String {
        let w = self.bin_width();
        let mut s = String::from("bin_lo,bin_hi,mass\n");
        for (k, m) in self.mass.iter().enumerate() {
            let a = self.lo + k as f64 * w;
            s.push_str(&format!("{:e},{:e},{:e}\n", a, a + w, m));
        }
        s
    }
}

fn bin_of(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    (((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2D {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub bins: usize,
    /// Row-major by x bin.
    pub mass: Vec<f64>,
}

impl Histogram2D {
    pub fn new(xs: &[f64], ys: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let range = |v: &[f64]| {
            (v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        };
        let (x, y) = (range(xs), range(ys));
        let mut mass = vec![0.0; bins * bins];
        for (a, b) in xs.iter().zip(ys) {
            mass[bin_of(*a, x.0, x.1, bins) * bins + bin_of(*b, y.0, y.1, bins)] += 1.0 / xs.len() as f64;
        }
        Self { x, y, bins, mass }
    }

    pub fn to_csv(&self) -> String {
        let wx = (self.x.1 - self.x.0) / self.bins as f64;
        let wy = (self.y.1 - self.y.0) / self.bins as f64;
        let mut s = String::from("x_lo,x_hi,y_lo,y_hi,mass\n");
        for i in 0..self.bins {
            for j in 0..self.bins {
                let (a, b) = (self.x.0 + i as f64 * wx, self.y.0 + j as f64 * wy);
                s.push_str(&format!("{:e},{:e},{:e},{:e},{:e}\n", a, a + wx, b, b + wy, self.mass[i * self.bins + j]));
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub n_used: usize,
    pub mean_log: Vec<f64>,
    /// Mean of the exponentiated samples.
    pub mean_physical: Vec<f64>,
    /// `exp` of `mean_log`.
    pub exp_mean_log: Vec<f64>,
    /// Per-component histograms of the log-parameters.
    pub histograms: Vec<Histogram>,
    /// Joint histogram of the first two components.
    pub joint: Option<Histogram2D>,
    pub acceptance_rate: f64,
}

/// Statistics of the chain after dropping the leading `burn_in` fraction.
pub fn posterior_summary(chain: &Chain, burn_in: f64, bins: usize) -> Result<PosteriorSummary, BayesError> {
    if !(0.0..=0.9).contains(&burn_in) {
        return Err(BayesError::Invalid(format!("burn-in fraction must be in [0, 0.9], got {burn_in}")));
    }
    let skip = (burn_in * chain.len() as f64).floor() as usize;
    let used = &chain.samples[skip.min(chain.len())..];
    if used.is_empty() {
        return Err(BayesError::EmptyChain);
    }
    let dim = used[0].len();
    let n = used.len() as f64;
    let cols: Vec<Vec<f64>> = (0..dim).map(|k| used.iter().map(|s| s[k]).collect()).collect();
    let mean_log: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let mean_physical = cols.iter().map(|c| c.iter().map(|t| t.exp()).sum::<f64>() / n).collect();
    let exp_mean_log = mean_log.iter().map(|m| m.exp()).collect();
    let histograms = cols.iter().map(|c| Histogram::new(c, bins)).collect();
    let joint = (dim >= 2).then(|| Histogram2D::new(&cols[0], &cols[1], bins));
    Ok(PosteriorSummary {
        n_used: used.len(),
        mean_log,
        mean_physical,
        exp_mean_log,
        histograms,
        joint,
        acceptance_rate: acceptance_rate(chain),
    })
}
