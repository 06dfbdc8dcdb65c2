use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadStep {
    pub step: usize,
    pub u_bar: f64,
    #[serde(rename = "F")]
    pub force: f64,
}

impl LoadStep {
    /// One `step,u_bar,F` line including the newline.
    pub fn csv_row(&self) -> String {
        format!("{},{:e},{:e}\n", self.step, self.u_bar, self.force)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Broken node found and the reaction force dropped below tolerance.
    Failure,
    /// Step budget exhausted.
    MaxSteps,
    /// Curve loaded from a file; termination unknown.
    Unknown,
}

/// Imposed displacement against reaction force, one entry per load step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadDispCurve {
    pub steps: Vec<LoadStep>,
    /// Index into `steps` of the first local maximum.
    pub first_peak: Option<usize>,
    /// Index into `steps` of the failure step, when failure was detected.
    pub failure: Option<usize>,
    pub termination: Termination,
}

#[derive(Debug, Error)]
pub enum CurveParseError {
    #[error("curve CSV: expected header `step,u_bar,F`, found `{0}`")]
    Header(String),
    #[error("curve CSV line {line}: {message}")]
    Row { line: usize, message: String },
    #[error("curve CSV: u_bar must be strictly increasing (line {0})")]
    NotIncreasing(usize),
    #[error("curve CSV: no data rows")]
    Empty,
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl LoadDispCurve {
    pub fn new(steps: Vec<LoadStep>, termination: Termination) -> Self {
        let forces: Vec<f64> = steps.iter().map(|s| s.force).collect();
        let failure = (termination == Termination::Failure && !steps.is_empty()).then(|| steps.len() - 1);
        Self { first_peak: first_peak(&forces), steps, failure, termination }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn forces(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.force).collect()
    }

    pub fn peak_force(&self) -> Option<f64> {
        self.first_peak.map(|i| self.steps[i].force)
    }

    /// Prominent peaks, see [`find_peaks`], with the prominence threshold given
    /// as a fraction of the largest absolute force.
    pub fn peaks(&self, rel_prominence: f64) -> Vec<usize> {
        let f = self.forces();
        let scale = f.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        find_peaks(&f, rel_prominence * scale)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,u_bar,F\n");
        for s in &self.steps {
            out.push_str(&s.csv_row());
        }
        out
    }

    /// Parse `step,u_bar,F` rows. Rejects malformed numbers, non-finite
    /// values and non-increasing displacements.
    pub fn from_csv(text: &str) -> Result<Self, CurveParseError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
        let header = reader.headers()?.clone();
        let names: Vec<&str> = header.iter().collect();
        if names != ["step", "u_bar", "F"] {
            return Err(CurveParseError::Header(names.join(",")));
        }
        let mut steps: Vec<LoadStep> = Vec::new();
        for (k, record) in reader.records().enumerate() {
            let line = k + 2;
            let record = record?;
            if record.len() != 3 {
                return Err(CurveParseError::Row { line, message: format!("expected 3 fields, found {}", record.len()) });
            }
            let step: usize = record[0]
                .parse()
                .map_err(|e| CurveParseError::Row { line, message: format!("step: {e}") })?;
            let num = |s: &str, what: &str| -> Result<f64, CurveParseError> {
                let v: f64 = s.parse().map_err(|e| CurveParseError::Row { line, message: format!("{what}: {e}") })?;
                if !v.is_finite() {
                    return Err(CurveParseError::Row { line, message: format!("{what} is not finite") });
                }
                Ok(v)
            };
            let u_bar = num(&record[1], "u_bar")?;
            let force = num(&record[2], "F")?;
            if let Some(prev) = steps.last() {
                if !(u_bar > prev.u_bar) {
                    return Err(CurveParseError::NotIncreasing(line));
                }
            }
            steps.push(LoadStep { step, u_bar, force });
        }
        if steps.is_empty() {
            return Err(CurveParseError::Empty);
        }
        Ok(Self::new(steps, Termination::Unknown))
    }
}

/// First index `n` with `F[n-1] < F[n] >= F[n+1]` after at least three steps.
/// On a plateau the earliest index wins.
pub fn first_peak(forces: &[f64]) -> Option<usize> {
    (2..forces.len().saturating_sub(1)).find(|&n| forces[n - 1] < forces[n] && forces[n] > forces[n + 1] || {
        // plateau: rises into n, stays flat, then falls
        forces[n - 1] < forces[n] && forces[n] == forces[n + 1] && {
            let mut k = n + 1;
            while k + 1 < forces.len() && forces[k + 1] == forces[n] {
                k += 1;
            }
            k + 1 < forces.len() && forces[k + 1] < forces[n]
        }
    })
}

/// Local maxima whose topographic prominence is at least `min_prominence`.
///
/// The prominence of a peak is its height above the higher of the two lowest
/// points separating it from a taller peak on either side (or from the curve
/// end).
pub fn find_peaks(forces: &[f64], min_prominence: f64) -> Vec<usize> {
    let n = forces.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if forces[i - 1] < forces[i] {
            // walk across a plateau
            let mut k = i;
            while k + 1 < n && forces[k + 1] == forces[i] {
                k += 1;
            }
            if k + 1 < n && forces[k + 1] < forces[i] {
                let h = forces[i];
                let mut left_min = h;
                for j in (0..i).rev() {
                    if forces[j] > h {
                        break;
                    }
                    left_min = left_min.min(forces[j]);
                }
                let mut right_min = h;
                for &f in &forces[k + 1..] {
                    if f > h {
                        break;
                    }
                    right_min = right_min.min(f);
                }
                if h - left_min.max(right_min) >= min_prominence {
                    peaks.push(i);
                }
            }
            i = k + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

pub fn count_peaks(forces: &[f64], min_prominence: f64) -> usize {
    find_peaks(forces, min_prominence).len()
}
