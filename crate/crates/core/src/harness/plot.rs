use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::path::Path;

use super::{read_csv, HarnessError, Protocol, TrialRecord};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;
const TICKS: usize = 5;

fn color(p: Protocol) -> &'static str {
    match p {
        Protocol::CsIblt => "#d62728",
        Protocol::IbltGuess => "#1f77b4",
        Protocol::Naive => "#2ca02c",
        Protocol::Bloom => "#9467bd",
    }
}

/// Mean `scalars_sent` per `(protocol, d)`.
fn means(records: &[TrialRecord]) -> BTreeMap<Protocol, BTreeMap<u64, f64>> {
    let mut acc: BTreeMap<Protocol, BTreeMap<u64, (f64, u64)>> = BTreeMap::new();
    for r in records {
        let slot = acc.entry(r.protocol).or_default().entry(r.d).or_default();
        slot.0 += r.scalars_sent as f64;
        slot.1 += 1;
    }
    acc.into_iter()
        .map(|(p, pts)| (p, pts.into_iter().map(|(d, (s, c))| (d, s / c as f64)).collect()))
        .collect()
}

fn tick_label(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.1}")
    }
}

/// Line chart of mean scalars sent against `d`, one polyline per protocol.
pub fn render_svg(records: &[TrialRecord]) -> String {
    let series = means(records);
    let ds = series.values().flat_map(|s| s.keys().copied());
    let (mut x0, mut x1) = ds.fold((u64::MAX, 0), |(lo, hi), d| (lo.min(d), hi.max(d)));
    if x0 > x1 {
        (x0, x1) = (0, 1);
    } else if x0 == x1 {
        x1 = x0 + 1;
    }
    let y_max = series.values().flat_map(|s| s.values().copied()).fold(0.0, f64::max);
    let y1 = if y_max > 0.0 { y_max * 1.05 } else { 1.0 };

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |d: f64| LEFT + (d - x0 as f64) / (x1 - x0) as f64 * plot_w;
    let sy = |v: f64| TOP + plot_h - v / y1 * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let (bx, by) = (LEFT, TOP + plot_h);
    let _ = writeln!(
        s,
        r#"<path d="M{LEFT:.2},{TOP:.2} V{by:.2} H{:.2}" fill="none" stroke="black"/>"#,
        LEFT + plot_w
    );
    for i in 0..=TICKS {
        let t = i as f64 / TICKS as f64;
        let xv = x0 as f64 + t * (x1 - x0) as f64;
        let yv = t * y1;
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(s, r#"<line x1="{px:.2}" y1="{by:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#, by + 5.0);
        let _ = writeln!(
            s,
            r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            by + 20.0,
            tick_label(xv)
        );
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{py:.2}" x2="{bx:.2}" y2="{py:.2}" stroke="black"/>"#, bx - 5.0);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            bx - 8.0,
            py + 4.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">difference size d</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">mean scalars sent</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    for (row, (p, pts)) in series.iter().enumerate() {
        let points: Vec<String> = pts
            .iter()
            .map(|(&d, &v)| format!("{:.2},{:.2}", sx(d as f64), sy(v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="{p}" points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            points.join(" "),
            color(*p)
        );
        let ly = TOP + 10.0 + 20.0 * row as f64;
        let lx = WIDTH - RIGHT + 20.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{}" stroke-width="2"/>"#,
            lx + 25.0,
            color(*p)
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{p}</text>"#, lx + 32.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Reads a sweep CSV and writes the chart.
pub fn plot(csv_path: &Path, svg_path: &Path) -> Result<(), HarnessError> {
    let records = read_csv(File::open(csv_path)?)?;
    fs::write(svg_path, render_svg(&records))?;
    Ok(())
}
