use std::fmt::Write as _;
use std::path::Path;

use pingtrace::spin::{SpinCentroids, SpinCluster};

use crate::config::PipelineConfig;
use crate::{CliError, Outputs};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterPoint {
    pub delta_v_xy: f64,
    pub z_accel: f64,
    pub label: SpinCluster,
}

fn parse_label(s: &str) -> Option<SpinCluster> {
    [SpinCluster::NoSpin, SpinCluster::LightTopspin, SpinCluster::HeavyTopspin, SpinCluster::NoCluster]
        .into_iter()
        .find(|c| c.as_str() == s)
}

/// Parses the scatter CSV written by `spin`. Columns are found by header
/// name, so extra columns are ignored.
pub fn read_scatter(path: &Path) -> Result<Vec<ScatterPoint>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let bad = |line: usize, m: String| CliError::Schema(format!("{}:{line}: {m}", path.display()));
    let (_, header) = lines.next().ok_or_else(|| bad(1, "missing header".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let col = |name: &str| cols.iter().position(|c| *c == name).ok_or_else(|| bad(1, format!("missing column '{name}'")));
    let (dv, za, lb) = (col("delta_v_xy")?, col("z_accel")?, col("label")?);
    let mut points = Vec::new();
    for (idx, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(bad(idx + 1, format!("expected {} fields, found {}", cols.len(), fields.len())));
        }
        let num = |i: usize| -> Result<f64, CliError> {
            fields[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(idx + 1, format!("'{}' is not a finite number", fields[i])))
        };
        let label = parse_label(fields[lb]).ok_or_else(|| bad(idx + 1, format!("unknown label '{}'", fields[lb])))?;
        points.push(ScatterPoint { delta_v_xy: num(dv)?, z_accel: num(za)?, label });
    }
    Ok(points)
}

fn colour(label: SpinCluster) -> &'static str {
    match label {
        SpinCluster::NoSpin => "#1f77b4",
        SpinCluster::LightTopspin => "#2ca02c",
        SpinCluster::HeavyTopspin => "#d62728",
        SpinCluster::NoCluster => "#7f7f7f",
    }
}

/// Round tick spacing giving about five ticks over `span`.
fn tick_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0].into_iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag)
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let pad = ((hi - lo) * 0.08).max(0.5);
    (lo - pad, hi + pad)
}

/// Downward acceleration against horizontal speed change, coloured by
/// cluster, with the centroids drawn as black crosses.
pub fn render_svg(points: &[ScatterPoint], centroids: &SpinCentroids) -> String {
    let cs = centroids.iter();
    let (x0, x1) = padded_range(points.iter().map(|p| p.delta_v_xy).chain(cs.iter().map(|c| c.1[0])));
    let (y0, y1) = padded_range(points.iter().map(|p| p.z_accel).chain(cs.iter().map(|c| c.1[1])));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(s, r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#, r - l, b - t);

    let step = tick_step(x1 - x0);
    let mut v = (x0 / step).ceil() * step;
    while v <= x1 {
        let px = sx(v);
        let _ = writeln!(s, r#"<line x1="{px:.2}" y1="{b}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#, b + 5.0);
        let _ = writeln!(s, r#"<text x="{px:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#, b + 18.0, tick_label(v, step));
        v += step;
    }
    let step = tick_step(y1 - y0);
    let mut v = (y0 / step).ceil() * step;
    while v <= y1 {
        let py = sy(v);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{py:.2}" x2="{l}" y2="{py:.2}" stroke="black"/>"#, l - 5.0);
        let _ =
            writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"#, l - 8.0, py + 4.0, tick_label(v, step));
        v += step;
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">change in horizontal speed at bounce (m/s)</text>"#,
        WIDTH / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.2})">vertical acceleration (m/s²)</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );

    for p in points {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}" fill-opacity="0.7"/>"#,
            sx(p.delta_v_xy),
            sy(p.z_accel),
            colour(p.label)
        );
    }
    for (cluster, c) in cs {
        let (cx, cy) = (sx(c[0]), sy(c[1]));
        let _ = writeln!(
            s,
            r#"<path d="M{:.2} {:.2}L{:.2} {:.2}M{:.2} {:.2}L{:.2} {:.2}" stroke="black" stroke-width="2"/>"#,
            cx - 7.0,
            cy - 7.0,
            cx + 7.0,
            cy + 7.0,
            cx - 7.0,
            cy + 7.0,
            cx + 7.0,
            cy - 7.0
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#, cx + 9.0, cy - 6.0, cluster.as_str());
    }
    for (i, cluster) in
        [SpinCluster::NoSpin, SpinCluster::LightTopspin, SpinCluster::HeavyTopspin, SpinCluster::NoCluster].into_iter().enumerate()
    {
        let y = t + 14.0 + 16.0 * i as f64;
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{y:.2}" r="4" fill="{}"/>"#, r - 110.0, colour(cluster));
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#, r - 100.0, y + 4.0, cluster.as_str());
    }
    s.push_str("</svg>\n");
    s
}

fn tick_label(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10()).ceil() as usize };
    let text = format!("{v:.decimals$}");
    if text.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        "0".into()
    } else {
        text
    }
}

pub fn cmd_plot(input: &Path, cfg: &PipelineConfig) -> Result<Outputs, CliError> {
    let points = read_scatter(input)?;
    let mut out = Outputs::default();
    out.text("scatter.svg", render_svg(&points, &cfg.spin.centroids));
    out.summary = format!("plotted {} hits\n", points.len());
    Ok(out)
}
