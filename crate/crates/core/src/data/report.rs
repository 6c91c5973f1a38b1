use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon: usize,
    pub mse: f64,
    pub mae: f64,
    pub amad: f64,
    pub amad_per_channel: Vec<f64>,
}

/// Test-split scores of one model on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub domain: String,
    pub windows: usize,
    pub horizons: Vec<HorizonMetrics>,
    /// Share of future tokens the predictor restores correctly.
    pub token_accuracy: Option<f64>,
    /// History-trend reconstruction error in raw units.
    pub reconstruction_mse: Option<f64>,
    /// Reconstruction MSE over the longest-horizon forecast MSE.
    pub reconstruction_rate: Option<f64>,
    /// Residual component rate of the test histories.
    pub rcr: f64,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        let mut all: Vec<f64> = vec![self.rcr];
        all.extend(self.token_accuracy);
        all.extend(self.reconstruction_mse);
        all.extend(self.reconstruction_rate);
        for h in &self.horizons {
            all.extend([h.mse, h.mae, h.amad]);
            all.extend(&h.amad_per_channel);
        }
        if all.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Numeric("report contains a negative or non-finite metric".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Dataset(format!("report serialization failed: {e}")))
    }

    /// One row per horizon; model-level metrics repeat on every row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Dataset(format!("CSV write failed: {e}"));
        w.write_record([
            "domain",
            "horizon",
            "mse",
            "mae",
            "amad",
            "token_accuracy",
            "reconstruction_mse",
            "reconstruction_rate",
            "rcr",
        ])
        .map_err(err)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for h in &self.horizons {
            w.write_record([
                self.domain.clone(),
                h.horizon.to_string(),
                h.mse.to_string(),
                h.mae.to_string(),
                h.amad.to_string(),
                opt(self.token_accuracy),
                opt(self.reconstruction_mse),
                opt(self.reconstruction_rate),
                self.rcr.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::Dataset(format!("CSV write failed: {e}")))
    }

    pub fn save(&self, json_path: &Path, csv_path: &Path) -> Result<()> {
        std::fs::write(json_path, self.to_json()?).map_err(|e| Error::io(json_path, e))?;
        let f = std::fs::File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
        self.write_csv(f)
    }
}

/// Minimal SVG line chart of a truth series (grey) and a forecast (blue).
pub fn line_plot_svg(title: &str, truth: &[f64], forecast: &[f64]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 320.0;
    const PAD: f64 = 32.0;
    let all = truth.iter().chain(forecast).copied().filter(|v| v.is_finite());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() && hi > lo {
        (lo, hi)
    } else if lo.is_finite() {
        (lo - 1.0, lo + 1.0)
    } else {
        (0.0, 1.0)
    };
    let n = truth.len().max(forecast.len()).max(2);
    let x = |i: usize| PAD + (W - 2.0 * PAD) * i as f64 / (n - 1) as f64;
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * (v - lo) / (hi - lo);
    let path = |vals: &[f64]| {
        let mut s = String::new();
        for (i, &v) in vals.iter().enumerate() {
            let _ = write!(s, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, x(i), y(v));
        }
        s
    };
    let escaped = title.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{PAD}" y="20" font-family="sans-serif" font-size="13">{escaped}</text>"#);
    let _ = writeln!(
        svg,
        r#"<line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{b}" stroke="black"/>"#,
        b = H - PAD,
        r = W - PAD
    );
    let _ = writeln!(svg, r##"<path d="{}" fill="none" stroke="#888" stroke-width="1.5"/>"##, path(truth));
    let _ = writeln!(svg, r##"<path d="{}" fill="none" stroke="#1f5fbf" stroke-width="1.5"/>"##, path(forecast));
    let _ = writeln!(svg, r#"<text x="{PAD}" y="{}" font-family="sans-serif" font-size="10">{lo:.3}</text>"#, H - 8.0);
    let _ = writeln!(svg, r#"<text x="{}" y="20" font-family="sans-serif" font-size="10">{hi:.3}</text>"#, W - 120.0);
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EvalReport {
        EvalReport {
            domain: "d".into(),
            windows: 3,
            horizons: [24, 48, 96, 192]
                .iter()
                .map(|&h| HorizonMetrics {
                    horizon: h,
                    mse: 0.5,
                    mae: 0.25,
                    amad: 0.1,
                    amad_per_channel: vec![0.1],
                })
                .collect(),
            token_accuracy: Some(0.9),
            reconstruction_mse: Some(0.01),
            reconstruction_rate: Some(0.02),
            rcr: 0.3,
        }
    }

    #[test]
    fn csv_has_one_row_per_horizon() {
        let mut buf = Vec::new();
        sample().write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }

    #[test]
    fn json_round_trip() {
        let r = sample();
        let back: EvalReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(r.validate().is_ok());
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let s = line_plot_svg("a < b", &[0.0, 1.0, 0.5], &[0.1, 0.9, 0.4]);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert_eq!(s.matches("<path").count(), 2);
        assert!(s.contains("a &lt; b"));
        let flat = line_plot_svg("flat", &[1.0; 4], &[]);
        assert!(!flat.contains("NaN"));
    }
}
