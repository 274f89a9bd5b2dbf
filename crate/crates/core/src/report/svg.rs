//! Static SVG charts, written directly as text: a per-trial RMSE line chart
//! and grouped prediction-vs-actual bar panels. Output bytes are a pure
//! function of the results, so identical runs produce identical files.

use std::fmt::Write as _;
use std::path::Path;

use super::{valid_for_all, ReportError};
use crate::eval::RunResult;

const WIDTH: f64 = 880.0;
const HEIGHT: f64 = 460.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 180.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 56.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Axis label for a tick value; switches to exponent form outside a sane
/// fixed-point range (diverged baselines can push rmse to 1e60 and beyond).
fn tick_label(value: f64, decimals: usize) -> String {
    if value != 0.0 && (value.abs() >= 1e6 || value.abs() < 1e-4) {
        format!("{value:.2e}")
    } else {
        format!("{value:.decimals$}")
    }
}

/// Tick spacing of the form {1,2,5} * 10^e giving at most `max_ticks`
/// intervals over `range`. Returns (spacing, label decimals).
fn nice_spacing(range: f64, max_ticks: usize) -> (f64, usize) {
    assert!(range > 0.0);
    let raw = range / max_ticks as f64;
    let exp = raw.log10().floor() as i32;
    let base = 10f64.powi(exp);
    let mantissa = if raw / base <= 1.0 {
        1.0
    } else if raw / base <= 2.0 {
        2.0
    } else if raw / base <= 5.0 {
        5.0
    } else {
        10.0
    };
    let spacing = mantissa * base;
    let effective_exp = if mantissa >= 10.0 { exp + 1 } else { exp };
    (spacing, (-effective_exp).max(0) as usize)
}

struct Canvas {
    body: String,
}

impl Canvas {
    fn new() -> Self {
        let mut body = String::new();
        let _ = writeln!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        let _ = writeln!(
            body,
            r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
        );
        Self { body }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}" stroke-width="{width}"/>"#
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"/>"#
        );
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, size: f64, content: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}" font-family="sans-serif" font-size="{size}">{}</text>"#,
            xml_escape(content)
        );
    }

    fn text_rotated(&mut self, x: f64, y: f64, size: f64, content: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="middle" font-family="sans-serif" font-size="{size}" transform="rotate(-90 {x:.2} {y:.2})">{}</text>"#,
            xml_escape(content)
        );
    }

    fn polyline(&mut self, points: &[(f64, f64)], stroke: &str) {
        if points.len() < 2 {
            if let Some(&(x, y)) = points.first() {
                let _ = writeln!(
                    self.body,
                    r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{stroke}"/>"#
                );
            }
            return;
        }
        let coords: Vec<String> =
            points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.5"/>"#,
            coords.join(" ")
        );
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

/// Per-trial RMSE line chart: x is the number of prior examples, one labeled
/// series per predictor, invalid trials rendered as gaps.
pub fn rmse_plot_svg(result: &RunResult) -> Result<String, ReportError> {
    if result.series.is_empty() {
        return Err(ReportError::NothingToPlot);
    }
    let n_trials = result.n_examples.saturating_sub(1).max(1);
    let mut y_max = f64::NEG_INFINITY;
    for series in &result.series {
        for record in &series.records {
            if let Some(r) = record.rmse {
                y_max = y_max.max(r);
            }
        }
    }
    if !y_max.is_finite() {
        return Err(ReportError::NothingToPlot);
    }
    let y_max = if y_max <= 0.0 { 1.0 } else { y_max * 1.05 };

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let x_of = |i: usize| {
        MARGIN_LEFT
            + if n_trials > 1 { (i - 1) as f64 / (n_trials - 1) as f64 * plot_w } else { 0.0 }
    };
    let y_of = |v: f64| MARGIN_TOP + plot_h - v / y_max * plot_h;

    let mut canvas = Canvas::new();
    canvas.text(
        MARGIN_LEFT + plot_w / 2.0,
        MARGIN_TOP - 16.0,
        "middle",
        14.0,
        &format!("per-trial rmse — {} (window {})", result.task_label, result.window),
    );

    // Y grid and labels.
    let (y_spacing, y_decimals) = nice_spacing(y_max, 8);
    let mut tick = 0usize;
    loop {
        let value = tick as f64 * y_spacing;
        if value > y_max {
            break;
        }
        let y = y_of(value);
        canvas.line(MARGIN_LEFT, y, MARGIN_LEFT + plot_w, y, "#dddddd", 1.0);
        canvas.text(MARGIN_LEFT - 8.0, y + 4.0, "end", 11.0, &tick_label(value, y_decimals));
        tick += 1;
    }

    // X ticks on whole trial counts.
    let (x_spacing, _) = nice_spacing(n_trials as f64, 10);
    let x_step = (x_spacing.round() as usize).max(1);
    let mut i = x_step;
    canvas.text(x_of(1), MARGIN_TOP + plot_h + 18.0, "middle", 11.0, "1");
    while i <= n_trials {
        if i > 1 {
            canvas.text(
                x_of(i),
                MARGIN_TOP + plot_h + 18.0,
                "middle",
                11.0,
                &i.to_string(),
            );
            canvas.line(
                x_of(i),
                MARGIN_TOP + plot_h,
                x_of(i),
                MARGIN_TOP + plot_h + 5.0,
                "#000000",
                1.0,
            );
        }
        i += x_step;
    }

    // Axes.
    canvas.line(MARGIN_LEFT, MARGIN_TOP, MARGIN_LEFT, MARGIN_TOP + plot_h, "#000000", 1.0);
    canvas.line(
        MARGIN_LEFT,
        MARGIN_TOP + plot_h,
        MARGIN_LEFT + plot_w,
        MARGIN_TOP + plot_h,
        "#000000",
        1.0,
    );
    canvas.text(
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 14.0,
        "middle",
        12.0,
        "number of prior examples",
    );
    canvas.text_rotated(20.0, MARGIN_TOP + plot_h / 2.0, 12.0, "rmse");

    // Series: polyline segments split at invalid trials.
    for (series_idx, series) in result.series.iter().enumerate() {
        let stroke = color(series_idx);
        let mut segment: Vec<(f64, f64)> = Vec::new();
        for record in &series.records {
            match record.rmse {
                Some(r) if record.valid => segment.push((x_of(record.trial_index), y_of(r))),
                _ => {
                    canvas.polyline(&segment, stroke);
                    segment.clear();
                }
            }
        }
        canvas.polyline(&segment, stroke);

        // Legend entry.
        let ly = MARGIN_TOP + 16.0 * series_idx as f64 + 8.0;
        let lx = MARGIN_LEFT + plot_w + 14.0;
        canvas.line(lx, ly, lx + 22.0, ly, stroke, 2.0);
        canvas.text(lx + 28.0, ly + 4.0, "start", 11.0, &series.predictor_id);
    }

    Ok(canvas.finish())
}

pub fn emit_rmse_plot(result: &RunResult, path: &Path) -> Result<(), ReportError> {
    let svg = rmse_plot_svg(result)?;
    std::fs::write(path, svg)
        .map_err(|source| ReportError::Io { path: path.to_path_buf(), source })
}

/// Grouped bar panels comparing actual target values against every
/// predictor's prediction at the chosen trials. Top-k tasks show k bars per
/// group. Every chosen trial must be valid for every predictor.
pub fn prediction_bars_svg(
    result: &RunResult,
    trial_indices: &[usize],
) -> Result<String, ReportError> {
    if result.series.is_empty() || trial_indices.is_empty() {
        return Err(ReportError::NothingToPlot);
    }
    let alternatives = valid_for_all(result);
    for &index in trial_indices {
        if !alternatives.contains(&index) {
            return Err(ReportError::InvalidBarTrial { index, alternatives });
        }
    }

    // Panel data: truth plus one prediction list per predictor.
    struct Panel {
        trial_index: usize,
        truth: Vec<f64>,
        predictions: Vec<Vec<f64>>,
    }
    let mut panels = Vec::new();
    let mut v_min = 0.0f64;
    let mut v_max = 0.0f64;
    for &index in trial_indices {
        let truth = result.series[0]
            .records
            .iter()
            .find(|r| r.trial_index == index)
            .expect("validated above")
            .truth
            .clone();
        let predictions: Vec<Vec<f64>> = result
            .series
            .iter()
            .map(|s| {
                s.records
                    .iter()
                    .find(|r| r.trial_index == index)
                    .and_then(|r| r.prediction.clone())
                    .expect("validated above")
            })
            .collect();
        for v in truth.iter().chain(predictions.iter().flatten()) {
            v_min = v_min.min(*v);
            v_max = v_max.max(*v);
        }
        panels.push(Panel { trial_index: index, truth, predictions });
    }
    if v_max == v_min {
        v_max = v_min + 1.0;
    }
    let range = v_max - v_min;
    let (v_max, v_min) = (v_max + 0.05 * range, v_min - if v_min < 0.0 { 0.05 * range } else { 0.0 });

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let y_of = |v: f64| MARGIN_TOP + plot_h - (v - v_min) / (v_max - v_min) * plot_h;

    let mut canvas = Canvas::new();
    canvas.text(
        MARGIN_LEFT + plot_w / 2.0,
        MARGIN_TOP - 16.0,
        "middle",
        14.0,
        &format!("predictions vs actual — {}", result.task_label),
    );

    let (spacing, decimals) = nice_spacing(v_max - v_min, 8);
    let first_tick = (v_min / spacing).ceil() as i64;
    let last_tick = (v_max / spacing).floor() as i64;
    for t in first_tick..=last_tick {
        let value = t as f64 * spacing;
        let y = y_of(value);
        canvas.line(MARGIN_LEFT, y, MARGIN_LEFT + plot_w, y, "#dddddd", 1.0);
        canvas.text(MARGIN_LEFT - 8.0, y + 4.0, "end", 11.0, &tick_label(value, decimals));
    }

    let groups_per_panel = 1 + result.series.len();
    let panel_w = plot_w / panels.len() as f64;
    let group_w = panel_w / (groups_per_panel as f64 + 0.8);
    for (panel_idx, panel) in panels.iter().enumerate() {
        let panel_x = MARGIN_LEFT + panel_idx as f64 * panel_w;
        canvas.text(
            panel_x + panel_w / 2.0,
            MARGIN_TOP + plot_h + 34.0,
            "middle",
            12.0,
            &format!("trial {}", panel.trial_index),
        );
        if panel_idx > 0 {
            canvas.line(panel_x, MARGIN_TOP, panel_x, MARGIN_TOP + plot_h, "#eeeeee", 1.0);
        }
        let k = panel.truth.len() as f64;
        let bar_w = group_w / k * 0.85;
        let mut draw_group = |group_idx: usize, values: &[f64], fill: &str| {
            let gx = panel_x + group_w * 0.5 + group_idx as f64 * group_w;
            for (vi, &v) in values.iter().enumerate() {
                let x = gx + vi as f64 * (group_w / k);
                let y0 = y_of(0.0);
                let y1 = y_of(v);
                let (top, h) = if y1 <= y0 { (y1, y0 - y1) } else { (y0, y1 - y0) };
                canvas.rect(x, top, bar_w, h, fill);
            }
        };
        draw_group(0, &panel.truth, "#333333");
        for (series_idx, prediction) in panel.predictions.iter().enumerate() {
            draw_group(1 + series_idx, prediction, color(series_idx));
        }
    }

    // Zero baseline and axes.
    canvas.line(MARGIN_LEFT, y_of(0.0), MARGIN_LEFT + plot_w, y_of(0.0), "#000000", 1.0);
    canvas.line(MARGIN_LEFT, MARGIN_TOP, MARGIN_LEFT, MARGIN_TOP + plot_h, "#000000", 1.0);

    // Legend: actual first, then predictors.
    let lx = MARGIN_LEFT + plot_w + 14.0;
    canvas.rect(lx, MARGIN_TOP + 2.0, 12.0, 12.0, "#333333");
    canvas.text(lx + 18.0, MARGIN_TOP + 12.0, "start", 11.0, "actual");
    for (series_idx, series) in result.series.iter().enumerate() {
        let ly = MARGIN_TOP + 18.0 * (series_idx + 1) as f64 + 2.0;
        canvas.rect(lx, ly, 12.0, 12.0, color(series_idx));
        canvas.text(lx + 18.0, ly + 10.0, "start", 11.0, &series.predictor_id);
    }

    Ok(canvas.finish())
}

pub fn emit_prediction_bars(
    result: &RunResult,
    trial_indices: &[usize],
    path: &Path,
) -> Result<(), ReportError> {
    let svg = prediction_bars_svg(result, trial_indices)?;
    std::fs::write(path, svg)
        .map_err(|source| ReportError::Io { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{tail_average, PredictorSeries, TailWindow, TrialRecord};

    fn record(id: &str, i: usize, rmse: Option<f64>, pred: Option<Vec<f64>>) -> TrialRecord {
        TrialRecord {
            trial_index: i,
            predictor_id: id.into(),
            prediction: pred,
            truth: vec![2.0, 1.0],
            rmse,
            attempts: 1,
            valid: rmse.is_some(),
            failure_reason: None,
        }
    }

    fn series(id: &str, rmses: &[Option<f64>]) -> PredictorSeries {
        let records: Vec<TrialRecord> = rmses
            .iter()
            .enumerate()
            .map(|(idx, r)| record(id, idx + 1, *r, r.map(|v| vec![v, v / 2.0])))
            .collect();
        let aggregate = tail_average(&records, &TailWindow::LastK(25));
        PredictorSeries { predictor_id: id.into(), records, aggregate }
    }

    fn result(series_list: Vec<PredictorSeries>) -> RunResult {
        let n = series_list[0].records.len() + 1;
        RunResult {
            config_digest: "d".into(),
            task_label: "top2_singular_values@5x5".into(),
            n_examples: n,
            window: TailWindow::LastK(25),
            series: series_list,
        }
    }

    #[test]
    fn line_chart_has_one_polyline_per_gapless_series() {
        let r = result(vec![
            series("a", &[Some(1.0), Some(2.0), Some(3.0)]),
            series("b", &[Some(2.0), Some(1.0), Some(2.5)]),
        ]);
        let svg = rmse_plot_svg(&r).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(">a</text>"));
        assert!(svg.contains(">b</text>"));
    }

    #[test]
    fn invalid_trials_split_polylines() {
        let r = result(vec![series("a", &[Some(1.0), Some(2.0), None, Some(3.0), Some(1.0)])]);
        let svg = rmse_plot_svg(&r).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn plot_bytes_are_deterministic() {
        let r = result(vec![series("a", &[Some(1.0), Some(2.0)])]);
        assert_eq!(rmse_plot_svg(&r).unwrap(), rmse_plot_svg(&r).unwrap());
    }

    #[test]
    fn bar_chart_counts_bars() {
        // 2 predictors, output length 2, 2 panels: (1 actual + 2 predictors)
        // groups x 2 bars x 2 panels = 12 bars plus 3 legend swatches.
        let r = result(vec![
            series("a", &[Some(1.0), Some(2.0), Some(3.0)]),
            series("b", &[Some(2.0), Some(1.0), Some(2.5)]),
        ]);
        let svg = prediction_bars_svg(&r, &[1, 3]).unwrap();
        let bars = svg.matches("<rect").count() - 1 - 3; // background + legend
        assert_eq!(bars, 12);
    }

    #[test]
    fn invalid_bar_trial_lists_alternatives() {
        let r = result(vec![series("a", &[Some(1.0), None, Some(3.0)])]);
        match prediction_bars_svg(&r, &[2]) {
            Err(ReportError::InvalidBarTrial { index: 2, alternatives }) => {
                assert_eq!(alternatives, vec![1, 3]);
            }
            other => panic!("expected invalid bar trial, got {other:?}"),
        }
    }

    #[test]
    fn empty_series_is_a_diagnostic() {
        let r = RunResult {
            config_digest: "d".into(),
            task_label: "t".into(),
            n_examples: 2,
            window: TailWindow::LastK(25),
            series: vec![],
        };
        assert!(matches!(rmse_plot_svg(&r), Err(ReportError::NothingToPlot)));
    }
}
