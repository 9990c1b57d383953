//! Minimal SVG line and bar charts for the `report` command.

use std::collections::BTreeMap;
use std::fmt::Write as _;

const W: f64 = 720.0;
const H: f64 = 360.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
/// Points per series; longer series are decimated by striding.
const MAX_POINTS: usize = 2000;

struct Series {
    name: String,
    points: Vec<(f64, f64)>,
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn axes(s: &mut String, x: (f64, f64), y: (f64, f64), xlabel: &str, ylabel: &str) {
    let (x0, x1, y0, y1) = (MARGIN, W - MARGIN / 2.0, H - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" stroke="black" fill="none"/>"#);
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let ty = y0 + (y1 - y0) * f;
        let tx = x0 + (x1 - x0) * f;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{:.4}</text>"#, x0 - 4.0, ty + 4.0, y.0 + (y.1 - y.0) * f);
        let _ = writeln!(s, r#"<text x="{tx:.1}" y="{}" text-anchor="middle">{:.4}</text>"#, y0 + 14.0, x.0 + (x.1 - x.0) * f);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 12.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let mut s = header(title);
    let xr = bounds(series.iter().flat_map(|se| se.points.iter().map(|p| p.0)));
    let yr = bounds(series.iter().flat_map(|se| se.points.iter().map(|p| p.1)));
    axes(&mut s, xr, yr, xlabel, ylabel);
    let px = |x: f64| MARGIN + (x - xr.0) / (xr.1 - xr.0) * (W - 1.5 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - yr.0) / (yr.1 - yr.0) * (H - 2.0 * MARGIN);
    for (k, se) in series.iter().enumerate() {
        let step = se.points.len().div_ceil(MAX_POINTS).max(1);
        let mut d = String::new();
        for (j, &(x, y)) in se.points.iter().step_by(step).enumerate() {
            let _ = write!(d, "{}{:.2},{:.2} ", if j == 0 { "M" } else { "L" }, px(x), py(y));
        }
        let color = COLORS[k % COLORS.len()];
        let _ = writeln!(s, r#"<path d="{}" stroke="{color}" stroke-width="1.2" fill="none"/>"#, d.trim_end());
        let ly = MARGIN + 14.0 * k as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="10" height="3" fill="{color}"/>"#, W - 170.0, ly - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, W - 155.0, escape(&se.name));
    }
    s.push_str("</svg>\n");
    s
}

fn bar_chart(title: &str, ylabel: &str, groups: &[(String, Vec<(String, f64)>)]) -> String {
    let mut s = header(title);
    let ymax = groups.iter().flat_map(|g| g.1.iter().map(|b| b.1)).fold(0.0, f64::max).max(1e-12);
    axes(&mut s, (0.0, groups.len() as f64), (0.0, ymax), "", ylabel);
    let slot = (W - 1.5 * MARGIN) / groups.len().max(1) as f64;
    let mut legend: Vec<String> = Vec::new();
    for (gi, (gname, bars)) in groups.iter().enumerate() {
        let bw = slot * 0.8 / bars.len().max(1) as f64;
        for (bi, (bname, v)) in bars.iter().enumerate() {
            let ci = match legend.iter().position(|l| l == bname) {
                Some(i) => i,
                None => {
                    legend.push(bname.clone());
                    legend.len() - 1
                }
            };
            let h = v / ymax * (H - 2.0 * MARGIN);
            let x = MARGIN + gi as f64 * slot + slot * 0.1 + bi as f64 * bw;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="{}"/>"#,
                H - MARGIN - h,
                bw * 0.95,
                COLORS[ci % COLORS.len()]
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            MARGIN + (gi as f64 + 0.5) * slot,
            H - MARGIN + 28.0,
            escape(gname)
        );
    }
    for (k, name) in legend.iter().enumerate() {
        let ly = MARGIN + 14.0 * k as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="10" height="8" fill="{}"/>"#, W - 170.0, ly - 8.0, COLORS[k % COLORS.len()]);
        let _ = writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, W - 155.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

fn rows(text: &str) -> impl Iterator<Item = Vec<&str>> {
    text.lines().skip(1).filter(|l| !l.trim().is_empty()).map(|l| l.split(',').collect())
}

fn num(s: &str) -> Option<f64> {
    s.trim().parse().ok()
}

/// Chart for a CSV produced by `eval`, `train`, `adapt` or `quantize`,
/// chosen by its header; `None` for anything else.
pub(super) fn render(text: &str) -> Option<(&'static str, String)> {
    let head = text.lines().next()?.trim();
    match head {
        "index,unit,scenario,t_index,truth_mm,pred_mm" => {
            let (mut truth, mut pred) = (Vec::new(), Vec::new());
            for r in rows(text) {
                let x = num(r.first()?)?;
                truth.push((x, num(r.get(4)?)?));
                pred.push((x, num(r.get(5)?)?));
            }
            let series = [
                Series { name: "ground truth".into(), points: truth },
                Series { name: "prediction".into(), points: pred },
            ];
            Some(("predictions", line_chart("Predicted vs true DC excursion", "window", "mm", &series)))
        }
        "epoch,train_loss,val_mean_mm,val_max_mm" => {
            let (mut mean, mut max) = (Vec::new(), Vec::new());
            for r in rows(text) {
                let e = num(r.first()?)?;
                mean.push((e, num(r.get(2)?)?));
                max.push((e, num(r.get(3)?)?));
            }
            let series = [
                Series { name: "val mean L1".into(), points: mean },
                Series { name: "val max L1".into(), points: max },
            ];
            Some(("history", line_chart("Validation loss per epoch", "epoch", "mm", &series)))
        }
        "t,neuron_id,mu,sigma" => {
            let mut by: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
            for r in rows(text) {
                by.entry(r.get(1)?.to_string()).or_default().push((num(r.first()?)?, num(r.get(2)?)?));
            }
            let series: Vec<Series> = by
                .into_iter()
                .take(COLORS.len())
                .map(|(name, points)| Series { name: format!("mu {name}"), points })
                .collect();
            Some(("adaptation", line_chart("Batch-norm mean during adaptation", "inference", "mu", &series)))
        }
        "scenario,precision,metric,value_mm" => {
            let mut groups: Vec<(String, Vec<(String, f64)>)> = Vec::new();
            for r in rows(text) {
                let g = format!("{} {}", r.first()?, r.get(2)?);
                let bar = (r.get(1)?.to_string(), num(r.get(3)?)?);
                match groups.iter_mut().find(|(name, _)| *name == g) {
                    Some((_, bars)) => bars.push(bar),
                    None => groups.push((g, vec![bar])),
                }
            }
            Some(("quantization", bar_chart("FP32 vs INT8 L1 by scenario", "mm", &groups)))
        }
        _ => None,
    }
}
