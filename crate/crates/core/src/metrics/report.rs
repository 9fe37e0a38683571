use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{auc_over, maa, PIXEL_THRESHOLDS, POSE_THRESHOLDS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Homography,
    Pose,
}

/// Metric values at increasing thresholds with their normalised area.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCurve {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
    pub auc: f64,
}

impl ThresholdCurve {
    pub fn new(thresholds: Vec<f64>, values: Vec<f64>) -> Self {
        let auc = auc_over(&thresholds, &values);
        Self {
            thresholds,
            values,
            auc,
        }
    }
}

/// Planar metrics of one pair; `None` entries are undefined (nothing
/// covisible, no matches) and excluded from the means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanarRecord {
    pub covisible: [usize; 2],
    pub repeatability: Vec<Option<f64>>,
    pub matching_score: Vec<Option<f64>>,
    pub mma: Vec<Option<f64>>,
    pub mha: Vec<f64>,
    /// Mean corner error of the estimated homography; `None` on failure.
    pub corner_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    /// Angular pose error in degrees; `None` when estimation failed.
    pub error_deg: Option<f64>,
    pub inliers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub keypoints: [usize; 2],
    pub matches: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planar: Option<PlanarRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<PoseRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaaSummary {
    pub thresholds_deg: Vec<f64>,
    pub values: Vec<f64>,
    pub failures: usize,
}

/// Per-pair records, aggregate curves and the configuration that produced
/// them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub config: serde_json::Value,
    pub pairs: Vec<PairRecord>,
    /// Planar curves keyed by metric name (`repeatability`, `matching_score`,
    /// `mma`, `mha`).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub curves: BTreeMap<String, ThresholdCurve>,
    /// Pairs left out of each metric's mean because it was undefined.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub excluded: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maa: Option<MaaSummary>,
}

const PLANAR_METRICS: [&str; 4] = ["repeatability", "matching_score", "mma", "mha"];

fn planar_column(r: &PlanarRecord, metric: &str) -> Vec<Option<f64>> {
    match metric {
        "repeatability" => r.repeatability.clone(),
        "matching_score" => r.matching_score.clone(),
        "mma" => r.mma.clone(),
        _ => r.mha.iter().map(|&v| Some(v)).collect(),
    }
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> (f64, usize, usize) {
    let (mut sum, mut n, mut missing) = (0.0, 0usize, 0usize);
    for v in values {
        match v {
            Some(v) => {
                sum += v;
                n += 1;
            }
            None => missing += 1,
        }
    }
    (if n > 0 { sum / n as f64 } else { 0.0 }, n, missing)
}

impl EvalReport {
    /// Aggregates per-pair records into curves (homography mode) or mAA
    /// (pose mode). Means run over pairs where a metric is defined.
    pub fn aggregate(mode: EvalMode, pairs: Vec<PairRecord>, config: serde_json::Value) -> Self {
        let mut curves = BTreeMap::new();
        let mut excluded = BTreeMap::new();
        let mut maa_summary = None;
        match mode {
            EvalMode::Homography => {
                let planar: Vec<&PlanarRecord> =
                    pairs.iter().filter_map(|p| p.planar.as_ref()).collect();
                for metric in PLANAR_METRICS {
                    let mut values = Vec::with_capacity(PIXEL_THRESHOLDS.len());
                    let mut missing = 0;
                    for k in 0..PIXEL_THRESHOLDS.len() {
                        let (m, _, miss) =
                            mean_defined(planar.iter().map(|r| planar_column(r, metric)[k]));
                        values.push(m);
                        missing = miss;
                    }
                    curves.insert(
                        metric.to_string(),
                        ThresholdCurve::new(PIXEL_THRESHOLDS.to_vec(), values),
                    );
                    excluded.insert(metric.to_string(), missing);
                }
            }
            EvalMode::Pose => {
                let errors: Vec<Option<f64>> = pairs
                    .iter()
                    .map(|p| p.pose.as_ref().and_then(|r| r.error_deg))
                    .collect();
                maa_summary = Some(MaaSummary {
                    thresholds_deg: POSE_THRESHOLDS.to_vec(),
                    values: maa(&errors, &POSE_THRESHOLDS),
                    failures: errors.iter().filter(|e| e.is_none()).count(),
                });
            }
        }
        Self {
            mode,
            config,
            pairs,
            curves,
            excluded,
            maa: maa_summary,
        }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["id", "keypoints0", "keypoints1", "matches"]
            .map(String::from)
            .to_vec();
        match self.mode {
            EvalMode::Homography => {
                h.extend(["covisible0", "covisible1"].map(String::from));
                for metric in PLANAR_METRICS {
                    h.extend(PIXEL_THRESHOLDS.iter().map(|t| format!("{metric}@{t}")));
                }
                h.push("corner_error".into());
            }
            EvalMode::Pose => h.extend(["pose_error_deg", "inliers"].map(String::from)),
        }
        h
    }

    /// One row per pair; undefined values are empty cells.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.csv_header())?;
        for p in &self.pairs {
            let mut row = vec![
                p.id.clone(),
                p.keypoints[0].to_string(),
                p.keypoints[1].to_string(),
                p.matches.to_string(),
            ];
            match self.mode {
                EvalMode::Homography => {
                    let r = p.planar.as_ref();
                    row.push(r.map(|r| r.covisible[0].to_string()).unwrap_or_default());
                    row.push(r.map(|r| r.covisible[1].to_string()).unwrap_or_default());
                    for metric in PLANAR_METRICS {
                        let col = r
                            .map(|r| planar_column(r, metric))
                            .unwrap_or_else(|| vec![None; PIXEL_THRESHOLDS.len()]);
                        row.extend(col.into_iter().map(cell));
                    }
                    row.push(cell(r.and_then(|r| r.corner_error)));
                }
                EvalMode::Pose => {
                    let r = p.pose.as_ref();
                    row.push(cell(r.and_then(|r| r.error_deg)));
                    row.push(r.map(|r| r.inliers.to_string()).unwrap_or_default());
                }
            }
            out.write_record(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing CSV to memory");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }
}

const COLOURS: [&str; 6] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Standalone SVG line plot of threshold curves, values on a fixed [0, 1]
/// axis.
pub fn curves_svg(title: &str, x_label: &str, curves: &[(&str, &ThresholdCurve)]) -> String {
    let (w, h) = (480.0, 320.0);
    let (left, right, top, bottom) = (56.0, 150.0, 36.0, 44.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let x_max = curves
        .iter()
        .flat_map(|(_, c)| c.thresholds.iter().copied())
        .fold(1.0f64, f64::max);
    let sx = |x: f64| left + pw * x / x_max;
    let sy = |y: f64| top + ph * (1.0 - y.clamp(0.0, 1.0));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-size="13">{}</text>"#,
        left,
        escape(title)
    );
    for k in 0..=4 {
        let y = k as f64 / 4.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="#ddd"/><text x="{2}" y="{3:.1}" text-anchor="end">{y:.2}</text>"##,
            sy(y),
            left + pw,
            left - 6.0,
            sy(y) + 4.0
        );
    }
    if let Some((_, c)) = curves.first() {
        for &t in &c.thresholds {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{t}</text>"#,
                sx(t),
                top + ph + 16.0
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 8.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    for (i, (name, c)) in curves.iter().enumerate() {
        let colour = COLOURS[i % COLOURS.len()];
        let pts: Vec<String> = c
            .thresholds
            .iter()
            .zip(&c.values)
            .map(|(&x, &y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        for p in &pts {
            let (x, y) = p.split_once(',').unwrap_or(("0", "0"));
            let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="3" fill="{colour}"/>"#);
        }
        let ly = top + 14.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{0:.1}" y1="{ly:.1}" x2="{1:.1}" y2="{ly:.1}" stroke="{colour}" stroke-width="2"/><text x="{2:.1}" y="{3:.1}">{4} (AUC {5:.3})</text>"#,
            left + pw + 10.0,
            left + pw + 28.0,
            left + pw + 32.0,
            ly + 4.0,
            escape(name),
            c.auc
        );
    }
    s.push_str("</svg>\n");
    s
}
