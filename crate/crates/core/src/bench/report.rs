//! CSV and SVG writers. Every writer returns bytes; callers persist them.
//!
//! Wall time is never written to a file so reruns stay byte-identical.

use std::fmt::Write as _;

use super::experiment::{AblationTable, MetricsReport, SweepRow};
use crate::error::{Error, Result};
use crate::guidance::StepLoss;
use crate::prior::Exemplar;
use super::data::LabeledPoint;

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `index,seed,label,v0..v{dim-1}`.
pub fn samples_csv(dim: usize, rows: &[(usize, u64, usize, Vec<f64>)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["index".to_string(), "seed".into(), "label".into()];
    header.extend((0..dim).map(|d| format!("v{d}")));
    w.write_record(&header)?;
    for (index, seed, label, values) in rows {
        if values.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: values.len() });
        }
        let mut rec = vec![index.to_string(), seed.to_string(), label.to_string()];
        rec.extend(values.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    finish(w)
}

/// `index,step,loss_before,loss_after`.
pub fn step_losses_csv(rows: &[(usize, Vec<StepLoss>)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["index", "step", "loss_before", "loss_after"])?;
    for (index, losses) in rows {
        for l in losses {
            w.write_record([index.to_string(), l.step.to_string(), l.before.to_string(), l.after.to_string()])?;
        }
    }
    finish(w)
}

fn metric_header(groups: usize) -> Vec<String> {
    let mut h = vec!["group_distance".to_string()];
    h.extend((0..groups).map(|g| format!("accuracy_{g}")));
    h.extend((0..groups).map(|g| format!("diversity_{g}")));
    h.extend(["config_hash".to_string(), "seed".to_string()]);
    h
}

fn metric_fields(m: &MetricsReport) -> Vec<String> {
    let mut r = vec![m.group_distance.to_string()];
    r.extend(m.group_accuracy.iter().map(|a| opt(*a)));
    r.extend(m.intra_diversity.iter().map(f64::to_string));
    r.extend([m.config_hash.clone(), m.seed.to_string()]);
    r
}

/// `run,group_distance,accuracy_*,diversity_*,config_hash,seed`, one row
/// per named report. Empty accuracy cells mark groups without samples.
pub fn metrics_csv(reports: &[(&str, &MetricsReport)]) -> Result<Vec<u8>> {
    let groups = reports.first().map(|(_, m)| m.group_accuracy.len()).unwrap_or(0);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["run".to_string()];
    header.extend(metric_header(groups));
    w.write_record(&header)?;
    for (name, m) in reports {
        let mut rec = vec![name.to_string()];
        rec.extend(metric_fields(m));
        w.write_record(&rec)?;
    }
    finish(w)
}

/// `cell,lambda_tc,lambda_c,correction,group_distance,accuracy_*,diversity_*,config_hash,seed`;
/// the first row is the unguided baseline.
pub fn ablation_csv(table: &AblationTable) -> Result<Vec<u8>> {
    let groups = table.unguided.group_accuracy.len();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["cell", "lambda_tc", "lambda_c", "correction"].map(String::from).to_vec();
    header.extend(metric_header(groups));
    w.write_record(&header)?;
    let mut base = vec!["unguided".to_string(), "0".into(), "0".into(), "0".into()];
    base.extend(metric_fields(&table.unguided));
    w.write_record(&base)?;
    for row in &table.rows {
        let mut rec = vec![
            row.cell.name.clone(),
            row.cell.lambda_tc.to_string(),
            row.cell.lambda_c.to_string(),
            row.correction.to_string(),
        ];
        rec.extend(metric_fields(&row.report));
        w.write_record(&rec)?;
    }
    finish(w)
}

/// `window,displacement,group_distance` with windows written `start-end`.
pub fn window_sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["window", "displacement", "group_distance"])?;
    for r in rows {
        w.write_record([
            format!("{}-{}", r.window.0, r.window.1),
            r.displacement.to_string(),
            r.group_distance.to_string(),
        ])?;
    }
    finish(w)
}

/// `label,v0..v{dim-1}`.
pub fn exemplars_csv(dim: usize, pool: &[Exemplar]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["label".to_string()];
    header.extend((0..dim).map(|d| format!("v{d}")));
    w.write_record(&header)?;
    for e in pool {
        if e.values.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: e.values.len() });
        }
        let mut rec = vec![e.label.to_string()];
        rec.extend(e.values.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    finish(w)
}

/// Parses [`exemplars_csv`] output. `what` names the pool in errors.
pub fn read_exemplars(bytes: &[u8], what: &str) -> Result<Vec<Exemplar>> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers()?.clone();
    if header.get(0) != Some("label") || header.len() < 2 {
        return Err(Error::InvalidConfig(format!("{what}: expected header `label,v0,...`")));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |field: &str| Error::InvalidConfig(format!("{what}: row {}: cannot parse `{field}`", line + 1));
        let label = rec[0].parse::<usize>().map_err(|_| bad(&rec[0]))?;
        let values = rec.iter().skip(1).map(|f| f.parse::<f64>().map_err(|_| bad(f))).collect::<Result<Vec<_>>>()?;
        out.push(Exemplar { label, values });
    }
    if out.is_empty() {
        return Err(Error::Empty(what.to_string()));
    }
    Ok(out)
}

/// `group,attribute,v0..v{dim-1}`.
pub fn dataset_csv(dim: usize, data: &[LabeledPoint]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["group".to_string(), "attribute".into()];
    header.extend((0..dim).map(|d| format!("v{d}")));
    w.write_record(&header)?;
    for p in data {
        let mut rec = vec![p.group.to_string(), p.attribute.to_string()];
        rec.extend(p.values.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    finish(w)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Scatter plot of 2D points colored by group label.
pub fn scatter_svg(points: &[(usize, Vec<f64>)], title: &str) -> Result<String> {
    if let Some((_, p)) = points.iter().find(|(_, p)| p.len() != 2) {
        return Err(Error::DimensionMismatch { expected: 2, got: p.len() });
    }
    let (size, pad) = (480.0, 30.0);
    let bounds = points.iter().fold([f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY], |b, (_, p)| {
        [b[0].min(p[0]), b[1].max(p[0]), b[2].min(p[1]), b[3].max(p[1])]
    });
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let (sx, sy) = (span(bounds[0], bounds[1]), span(bounds[2], bounds[3]));
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{pad}" y="20" font-family="sans-serif" font-size="14">{}</text>"#, escape(title));
    for (label, p) in points {
        let x = pad + (p[0] - bounds[0]) / sx * (size - 2.0 * pad);
        let y = size - pad - (p[1] - bounds[2]) / sy * (size - 2.0 * pad);
        let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{}" fill-opacity="0.7"/>"#, PALETTE[label % PALETTE.len()]);
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_samples_have_header_only() {
        let bytes = samples_csv(2, &[]).unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap(), "index,seed,label,v0,v1\n");
    }

    #[test]
    fn floats_round_trip() {
        let x = 0.1 + 0.2;
        let bytes = samples_csv(1, &[(0, 7, 1, vec![x])]).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let last = text.lines().nth(1).unwrap().split(',').last().unwrap();
        assert_eq!(last.parse::<f64>().unwrap(), x);
    }

    #[test]
    fn exemplar_round_trip() {
        let pool = vec![Exemplar { label: 1, values: vec![0.1, -2.0] }, Exemplar { label: 0, values: vec![1e-300, 3.5] }];
        let bytes = exemplars_csv(2, &pool).unwrap();
        assert_eq!(read_exemplars(&bytes, "pool").unwrap(), pool);
        assert!(matches!(read_exemplars(b"label,v0\n", "pool"), Err(Error::Empty(_))));
        assert!(read_exemplars(b"label,v0\nx,1\n", "pool").is_err());
    }

    #[test]
    fn sweep_schema() {
        let rows: Vec<SweepRow> =
            (0..6).map(|i| SweepRow { window: (1 + 5 * i, 5 + 5 * i), displacement: i as f64, group_distance: 0.5 }).collect();
        let text = String::from_utf8(window_sweep_csv(&rows).unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "window,displacement,group_distance");
        assert_eq!(lines.len(), 7);
        assert!(lines[6].starts_with("26-30,5,"));
    }

    #[test]
    fn svg_counts_points() {
        let pts = vec![(0, vec![0.0, 0.0]), (1, vec![1.0, 2.0])];
        let svg = scatter_svg(&pts, "a<b").unwrap();
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains("a&lt;b"));
        assert!(scatter_svg(&[(0, vec![1.0])], "").is_err());
    }
}
