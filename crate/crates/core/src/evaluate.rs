//! Accuracy, exact empirical ROC, equal error rate and latency statistics.

use std::fmt::Write as _;
use std::time::Instant;

use crate::classify::TrainedModel;
use crate::dataset::{Dataset, Label};
use crate::error::{Error, Result};

pub fn accuracy(predictions: &[Label], labels: &[Label]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::dim_mismatch(labels.len(), predictions.len()));
    }
    if labels.is_empty() {
        return Err(Error::EmptyEval);
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fmr: f64,
    pub tmr: f64,
}

/// Operating points in descending threshold order. The first point has an
/// infinite threshold (nothing accepted); the last sits at the lowest score
/// (everything accepted).
#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub n_genuine: usize,
    pub n_impostor: usize,
}

pub fn roc_curve(scores: &[f64], labels: &[Label]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::dim_mismatch(labels.len(), scores.len()));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::InvalidParameter(format!("score {s} is not a number")));
    }
    let n_genuine = labels.iter().filter(|l| l.is_genuine()).count();
    let n_impostor = labels.len() - n_genuine;
    if n_genuine == 0 || n_impostor == 0 {
        return Err(Error::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fmr: 0.0,
        tmr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let t = scores[order[k]];
        while k < order.len() && scores[order[k]] == t {
            if labels[order[k]].is_genuine() {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fmr: fp as f64 / n_impostor as f64,
            tmr: tp as f64 / n_genuine as f64,
        });
    }
    Ok(RocCurve {
        points,
        n_genuine,
        n_impostor,
    })
}

/// Rate at which FMR equals 1 − TMR, interpolated linearly between the two
/// operating points that straddle the crossing.
pub fn eer(curve: &RocCurve) -> f64 {
    let gap = |p: &RocPoint| p.fmr - (1.0 - p.tmr);
    let pts = &curve.points;
    let Some(k) = pts.iter().position(|p| gap(p) >= 0.0) else {
        return pts.last().map_or(0.5, |p| p.fmr);
    };
    let dk = gap(&pts[k]);
    if dk == 0.0 || k == 0 {
        return pts[k].fmr;
    }
    let prev = &pts[k - 1];
    let dp = gap(prev);
    let lambda = -dp / (dk - dp);
    prev.fmr + lambda * (pts[k].fmr - prev.fmr)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingReport {
    pub measurements: usize,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
}

/// Per-sample prediction latency in seconds over `repetitions` passes, measured on the calling thread.
pub fn timing_report(model: &TrainedModel, test: &Dataset, repetitions: usize) -> Result<TimingReport> {
    if test.is_empty() {
        return Err(Error::EmptyEval);
    }
    let mut samples = Vec::with_capacity(test.len() * repetitions.max(1));
    for _ in 0..repetitions.max(1) {
        for x in test.rows() {
            let start = Instant::now();
            std::hint::black_box(model.predict(std::hint::black_box(x))?);
            samples.push(start.elapsed().as_secs_f64());
        }
    }
    samples.sort_by(f64::total_cmp);
    let pct = |q: f64| samples[((samples.len() - 1) as f64 * q).round() as usize];
    Ok(TimingReport {
        measurements: samples.len(),
        mean: samples.iter().sum::<f64>() / samples.len() as f64,
        p50: pct(0.5),
        p95: pct(0.95),
    })
}

impl TimingReport {
    pub fn to_text(&self) -> String {
        format!(
            "measurements={}\nmean_predict_latency={:.9}\np50_predict_latency={:.9}\np95_predict_latency={:.9}\n",
            self.measurements, self.mean, self.p50, self.p95
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub eer: f64,
    pub roc: RocCurve,
    /// Seconds per sample; absent when the report must stay reproducible.
    pub mean_predict_latency: Option<f64>,
    pub n_test: usize,
}

pub fn evaluate(model: &TrainedModel, test: &Dataset) -> Result<EvalReport> {
    let predictions = model.predict_all(test)?;
    let acc = accuracy(&predictions, test.labels())?;
    let scores = model.score_all(test)?;
    let roc = roc_curve(&scores, test.labels())?;
    Ok(EvalReport {
        accuracy: acc,
        eer: eer(&roc),
        roc,
        mean_predict_latency: None,
        n_test: test.len(),
    })
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "accuracy={:.6}", self.accuracy);
        let _ = writeln!(s, "eer={:.6}", self.eer);
        let _ = writeln!(s, "n_test={}", self.n_test);
        let _ = writeln!(s, "n_genuine={}", self.roc.n_genuine);
        let _ = writeln!(s, "n_impostor={}", self.roc.n_impostor);
        let _ = writeln!(s, "roc_points={}", self.roc.points.len());
        if let Some(l) = self.mean_predict_latency {
            let _ = writeln!(s, "mean_predict_latency={l:.9}");
        }
        s
    }
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,fmr,tmr\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{},{}", p.threshold, p.fmr, p.tmr);
        }
        s
    }

    /// Minimal SVG of TMR against FMR with the EER point marked.
    pub fn to_svg(&self) -> String {
        const SIZE: f64 = 400.0;
        const PAD: f64 = 40.0;
        let px = |fmr: f64| PAD + fmr * SIZE;
        let py = |tmr: f64| PAD + (1.0 - tmr) * SIZE;
        let mut s = String::new();
        let total = SIZE + 2.0 * PAD;
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}">"#
        );
        let _ = writeln!(
            s,
            r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="4"/>"#,
            px(0.0),
            py(1.0),
            px(1.0),
            py(0.0)
        );
        let pts: Vec<String> = self
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.fmr), py(p.tmr)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
            pts.join(" ")
        );
        let e = eer(self);
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="5" fill="crimson"><title>EER {e:.4}</title></circle>"#,
            px(e),
            py(1.0 - e)
        );
        let _ = writeln!(s, r#"<text x="{PAD}" y="{}" font-size="14">FMR</text>"#, total - 10.0);
        let _ = writeln!(s, r#"<text x="5" y="{PAD}" font-size="14">TMR</text>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12">EER={e:.4}</text>"#,
            px(e) + 8.0,
            py(1.0 - e)
        );
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Genuine as G, Impostor as I};

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[G, I, G, G], &[G, G, G, G]).unwrap(), 0.75);
        assert_eq!(accuracy(&[G, I], &[G, I]).unwrap(), 1.0);
        assert!(matches!(accuracy(&[], &[]), Err(Error::EmptyEval)));
        let labels = [G, I, I, G, G];
        let preds = [G, G, I, I, G];
        let flipped: Vec<Label> = preds.iter().map(|p| p.flipped()).collect();
        let a = accuracy(&preds, &labels).unwrap();
        assert!((accuracy(&flipped, &labels).unwrap() - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn separated_scores() {
        let roc = roc_curve(&[0.9, 0.9, 0.1, 0.1], &[G, G, I, I]).unwrap();
        assert!(roc.points.iter().any(|p| p.fmr == 0.0 && p.tmr == 1.0));
        assert_eq!(eer(&roc), 0.0);
    }

    #[test]
    fn equal_scores_give_two_points() {
        let roc = roc_curve(&[0.3; 4], &[G, I, G, I]).unwrap();
        assert_eq!(roc.points.len(), 2);
        assert_eq!((roc.points[1].fmr, roc.points[1].tmr), (1.0, 1.0));
        assert_eq!(eer(&roc), 0.5);
    }

    #[test]
    fn four_score_case() {
        // FNMR/FMR pairs along the sweep: (1,0) (0.5,0) (0.5,0.5) (0,0.5) (0,1);
        // the exact crossing is the point at threshold 0.4
        let roc = roc_curve(&[0.8, 0.35, 0.4, 0.1], &[G, G, I, I]).unwrap();
        assert_eq!(eer(&roc), 0.5);
    }

    #[test]
    fn single_class_rejected() {
        assert!(matches!(roc_curve(&[0.1, 0.2], &[G, G]), Err(Error::DegenerateLabels)));
    }

    #[test]
    fn csv_and_svg_render() {
        let roc = roc_curve(&[0.8, 0.35, 0.4, 0.1], &[G, G, I, I]).unwrap();
        let csv = roc.to_csv();
        assert_eq!(csv.lines().count(), 1 + roc.points.len());
        assert!(csv.lines().nth(1).unwrap().starts_with("inf,0,0"));
        assert!(roc.to_svg().contains("<circle"));
    }
}
