use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::netsim::MetricsRow;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Which metric a figure plots against sender count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    Latency,
}

impl Metric {
    fn value(self, r: &MetricsRow) -> f64 {
        match self {
            Metric::Accuracy => r.accuracy,
            Metric::Latency => r.latency_s,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Latency => "latency (s)",
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart of `metric` against sender count, one series per
/// protocol/privacy pair. Standalone rows appear as a point at zero
/// senders on every series.
pub fn render_svg(rows: &[MetricsRow], metric: Metric) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no rows to plot".into()));
    }
    let base = rows.iter().find(|r| r.protocol == "standalone");
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.protocol != "standalone") {
        let pts = series.entry(format!("{}/{}", r.protocol, r.privacy)).or_default();
        if pts.is_empty() {
            if let Some(b) = base {
                pts.push((0.0, metric.value(b)));
            }
        }
        pts.push((r.n_senders as f64, metric.value(r)));
    }
    if series.is_empty() {
        if let Some(b) = base {
            series.insert("standalone".into(), vec![(0.0, metric.value(b))]);
        }
    }
    let x_max = rows.iter().map(|r| r.n_senders).max().unwrap_or(0).max(1) as f64;
    let y_max = match metric {
        Metric::Accuracy => 1.0,
        Metric::Latency => rows.iter().map(|r| metric.value(r)).fold(0.0, f64::max).max(1e-9) * 1.1,
    };
    let px = |x: f64| MARGIN + x / x_max * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - y / y_max * (H - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{l},{t} L{l},{b} L{r},{b}" stroke="black" fill="none"/>"#,
        l = MARGIN,
        t = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    );
    for i in 0..=x_max as usize {
        let x = px(i as f64);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{i}</text>"#, H - MARGIN + 18.0);
    }
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"#, MARGIN - 6.0, py(v) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">senders</text>"#, W / 2.0, H - 15.0);
    let _ = writeln!(s, r#"<text x="15" y="{:.1}" transform="rotate(-90 15 {:.1})" text-anchor="middle">{}</text>"#, H / 2.0, H / 2.0, metric.label());
    for (i, (name, pts)) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let d: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" stroke="{c}" fill="none" stroke-width="2"/>"#, d.join(" "));
        for &(x, y) in pts {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{c}"/>"#, px(x), py(y));
        }
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{ly:.1}" fill="{c}">{}</text>"#, W - MARGIN - 120.0, escape(name));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(protocol: &str, k: usize, acc: f64) -> MetricsRow {
        MetricsRow {
            scenario: "s".into(),
            protocol: protocol.into(),
            privacy: "original".into(),
            n_senders: k,
            accuracy: acc,
            latency_s: 0.1 * k as f64,
            bytes_per_token: 0.0,
        }
    }

    #[test]
    fn renders_series() {
        let rows = vec![row("standalone", 0, 0.2), row("kv", 1, 0.4), row("kv", 2, 0.6), row("token", 1, 0.2)];
        let svg = render_svg(&rows, Metric::Accuracy).unwrap();
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 5);
        assert!(render_svg(&[], Metric::Latency).is_err());
    }
}
