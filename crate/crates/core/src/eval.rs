//! Segmentation and flow metrics plus the CSV benchmark report.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{FlowField, Mask};

fn check_same(a: &Mask, b: &Mask) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::Argument(format!(
            "mask dimensions differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// `2|P & G| / (|P| + |G|)`; two empty masks agree perfectly and score 1.
pub fn dice(pred: &Mask, gt: &Mask) -> Result<f64> {
    check_same(pred, gt)?;
    let (mut inter, mut p, mut g) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.data().iter().zip(gt.data()) {
        p += a as usize;
        g += b as usize;
        inter += (a & b) as usize;
    }
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (p + g) as f64)
}

/// Mean absolute pixel difference, i.e. the fraction of disagreeing pixels.
pub fn mae(pred: &Mask, gt: &Mask) -> Result<f64> {
    check_same(pred, gt)?;
    let diff = pred
        .data()
        .iter()
        .zip(gt.data())
        .filter(|(a, b)| a != b)
        .count();
    Ok(diff as f64 / pred.data().len() as f64)
}

/// Mean endpoint error over pixels at least `margin` pixels from every border.
pub fn endpoint_error(flow: &FlowField, gt: &FlowField, margin: usize) -> Result<f64> {
    if flow.width() != gt.width() || flow.height() != gt.height() {
        return Err(Error::Argument(format!(
            "flow dimensions differ: {}x{} vs {}x{}",
            flow.width(),
            flow.height(),
            gt.width(),
            gt.height()
        )));
    }
    let (w, h) = (flow.width(), flow.height());
    if 2 * margin >= w || 2 * margin >= h {
        return Err(Error::Argument(format!(
            "margin {margin} leaves no pixels in a {w}x{h} field"
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for y in margin..h - margin {
        for x in margin..w - margin {
            let (u, v) = flow.at(x, y);
            let (gu, gv) = gt.at(x, y);
            let (du, dv) = (u as f64 - gu as f64, v as f64 - gv as f64);
            sum += (du * du + dv * dv).sqrt();
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalPolicy {
    /// Score every frame; a missing prediction counts as an empty mask.
    AllFrames,
    /// Score only frames whose ground truth contains a catheter.
    CatheterFramesOnly,
}

impl std::str::FromStr for EvalPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all_frames" | "all-frames" | "all" => Ok(EvalPolicy::AllFrames),
            "catheter_frames_only" | "catheter-frames-only" | "catheter" => {
                Ok(EvalPolicy::CatheterFramesOnly)
            }
            other => Err(Error::Argument(format!(
                "unknown evaluation policy '{other}'"
            ))),
        }
    }
}

/// One method's scores. Dice values are percentages (x100), MAE is a fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub dice_mean: f64,
    pub dice_std: f64,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub n_frames: usize,
}

/// Mean and population standard deviation, accumulated in input order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-frame Dice and MAE for the frames selected by `policy`.
pub fn per_frame_scores(
    preds: &[Option<Mask>],
    gt: &[Mask],
    policy: EvalPolicy,
) -> Result<Vec<(usize, f64, f64)>> {
    if preds.len() != gt.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} ground-truth masks",
            preds.len(),
            gt.len()
        )));
    }
    let mut out = Vec::new();
    for (i, (p, g)) in preds.iter().zip(gt).enumerate() {
        if policy == EvalPolicy::CatheterFramesOnly && g.is_empty() {
            continue;
        }
        let empty;
        let p = match p {
            Some(m) => m,
            None => {
                empty = Mask::zeros(g.width(), g.height());
                &empty
            }
        };
        out.push((i, dice(p, g)?, mae(p, g)?));
    }
    Ok(out)
}

pub fn evaluate_run(
    method: impl Into<String>,
    preds: &[Option<Mask>],
    gt: &[Mask],
    policy: EvalPolicy,
) -> Result<MetricReport> {
    let scores = per_frame_scores(preds, gt, policy)?;
    let dices: Vec<f64> = scores.iter().map(|s| s.1 * 100.0).collect();
    let maes: Vec<f64> = scores.iter().map(|s| s.2).collect();
    let (dice_mean, dice_std) = mean_std(&dices);
    let (mae_mean, mae_std) = mean_std(&maes);
    Ok(MetricReport {
        method: method.into(),
        dice_mean,
        dice_std,
        mae_mean,
        mae_std,
        n_frames: scores.len(),
    })
}

pub const REPORT_HEADER: &str = "method,dice_mean,dice_std,mae_mean,mae_std,n_frames";

/// Published reference rows, for context only. The source tables mix
/// percentage and fractional standard deviations, so the Dice spread is left
/// blank and the rows are marked approximate.
pub const PAPER_REFERENCE_ROWS: [&str; 2] = [
    "paper-reference-synthetic (approx),72.8,,0.0022,0.0020,",
    "paper-reference-phantom (approx),41.9,,0.0051,0.0007,",
];

pub fn render_report(reports: &[MetricReport], with_paper_refs: bool) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in reports {
        let _ = writeln!(
            out,
            "{},{:.4},{:.4},{:.6},{:.6},{}",
            csv_field(&r.method),
            r.dice_mean,
            r.dice_std,
            r.mae_mean,
            r.mae_std,
            r.n_frames
        );
    }
    if with_paper_refs {
        for row in PAPER_REFERENCE_ROWS {
            out.push_str(row);
            out.push('\n');
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_report(
    reports: &[MetricReport],
    path: impl AsRef<Path>,
    with_paper_refs: bool,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_report(reports, with_paper_refs)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(w: usize, h: usize, on: &[(usize, usize)]) -> Mask {
        Mask::from_fn(w, h, |x, y| on.contains(&(x, y)))
    }

    #[test]
    fn dice_examples() {
        let a = mask(4, 4, &[(1, 1), (2, 2)]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &mask(4, 4, &[(0, 0)])).unwrap(), 0.0);
        // pixels given as (row, col): {(0,0),(0,1)} vs {(0,1),(1,1)}
        let p = mask(2, 2, &[(0, 0), (1, 0)]);
        let g = mask(2, 2, &[(1, 0), (1, 1)]);
        assert_eq!(dice(&p, &g).unwrap(), 0.5);
        assert_eq!(dice(&Mask::zeros(3, 3), &Mask::zeros(3, 3)).unwrap(), 1.0);
        assert!(dice(&Mask::zeros(3, 3), &Mask::zeros(3, 4)).is_err());
    }

    #[test]
    fn mae_examples() {
        let a = mask(10, 10, &[(3, 3)]);
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        assert_eq!(mae(&a, &Mask::zeros(10, 10)).unwrap(), 0.01);
        let full = Mask::from_fn(10, 10, |_, _| true);
        assert_eq!(mae(&full, &Mask::zeros(10, 10)).unwrap(), 1.0);
        assert!(mae(&a, &Mask::zeros(9, 10)).is_err());
    }

    #[test]
    fn epe_examples() {
        let z = FlowField::zeros(8, 8);
        assert_eq!(endpoint_error(&z, &z, 0).unwrap(), 0.0);
        let off = FlowField::constant(8, 8, 3.0, 4.0).unwrap();
        assert_eq!(endpoint_error(&off, &z, 2).unwrap(), 5.0);
        assert!(endpoint_error(&off, &z, 4).is_err());
        assert!(endpoint_error(&off, &FlowField::zeros(8, 9), 0).is_err());
    }

    #[test]
    fn evaluate_policies() {
        let g_on = mask(4, 4, &[(1, 1)]);
        let g_off = Mask::zeros(4, 4);
        let gt = vec![g_on.clone(), g_off.clone(), g_on.clone(), g_off];
        let perfect: Vec<Option<Mask>> = gt.iter().cloned().map(Some).collect();
        let r = evaluate_run("p", &perfect, &gt, EvalPolicy::AllFrames).unwrap();
        assert_eq!((r.dice_mean, r.mae_mean, r.n_frames), (100.0, 0.0, 4));

        let none = vec![None; 4];
        let all = evaluate_run("n", &none, &gt, EvalPolicy::AllFrames).unwrap();
        assert_eq!(all.dice_mean, 50.0);
        assert_eq!(all.dice_std, 50.0);
        let cath = evaluate_run("n", &none, &gt, EvalPolicy::CatheterFramesOnly).unwrap();
        assert_eq!((cath.dice_mean, cath.n_frames), (0.0, 2));
        assert!(evaluate_run("x", &none[..3], &gt, EvalPolicy::AllFrames).is_err());
    }

    #[test]
    fn report_layout() {
        let r = MetricReport {
            method: "flow".into(),
            dice_mean: 50.0,
            dice_std: 1.0,
            mae_mean: 0.002,
            mae_std: 0.001,
            n_frames: 10,
        };
        let text = render_report(std::slice::from_ref(&r), false);
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap(), REPORT_HEADER);
        let with_refs = render_report(&[r], true);
        assert!(with_refs.contains("72.8"));
        assert!(with_refs.contains("41.9"));
        assert!(with_refs.contains("0.0051"));
    }
}
