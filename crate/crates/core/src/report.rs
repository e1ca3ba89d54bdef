//! Named residuals with tolerances and verdicts.

use std::fmt;

/// One named residual. A check passes iff `value` is finite and strictly
/// below `tolerance`, so a zero tolerance never passes.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            value,
            tolerance,
            passed: value.is_finite() && value < tolerance,
        }
    }

    /// `value` must lie in `[lo, hi]`; recorded as the distance to the center
    /// against the half-width.
    pub fn in_range(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        let center = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        let mut check = Check::at_most(name, (value - center).abs(), half);
        check.passed = value.is_finite() && value >= lo && value <= hi && half > 0.0;
        check
    }

    /// A boolean verdict: value `0` on success, `1` on failure.
    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        Check {
            name: name.into(),
            value: if ok { 0.0 } else { 1.0 },
            tolerance: 0.5,
            passed: ok,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{:e},{:e},{}",
            self.name, self.value, self.tolerance, self.passed
        )
    }
}

/// Per-step detail array attached to a report.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiagnosticsReport {
    pub title: String,
    pub checks: Vec<Check>,
    pub series: Vec<Series>,
}

impl DiagnosticsReport {
    pub fn new(title: impl Into<String>) -> Self {
        DiagnosticsReport {
            title: title.into(),
            ..Default::default()
        }
    }

    pub fn push(&mut self, check: Check) -> &mut Self {
        self.checks.push(check);
        self
    }

    pub fn push_series(&mut self, name: impl Into<String>, values: Vec<f64>) -> &mut Self {
        self.series.push(Series {
            name: name.into(),
            values,
        });
        self
    }

    pub fn extend(&mut self, other: DiagnosticsReport) -> &mut Self {
        let prefix = other.title;
        for mut c in other.checks {
            if !prefix.is_empty() {
                c.name = format!("{prefix}.{}", c.name);
            }
            self.checks.push(c);
        }
        self.series.extend(other.series);
        self
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn series(&self, name: &str) -> Option<&[f64]> {
        self.series
            .iter()
            .find(|s| s.name == name)
            .map(|s| s.values.as_slice())
    }

    /// `name,value,tolerance,pass` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,value,tolerance,pass\n");
        for c in &self.checks {
            out.push_str(&c.to_string());
            out.push('\n');
        }
        out
    }
}
