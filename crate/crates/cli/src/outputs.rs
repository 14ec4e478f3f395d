//! Artifact writers: atomic file replacement, CSV and JSON emission with
//! stable formatting, and self-contained SVG renderings.

use std::fs;
use std::io;
use std::path::Path;

use magnetorbit_core::Vec2;

/// Writes via a sibling temp file and rename, so a crash never leaves a
/// half-written artifact behind.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// Shortest round-trip decimal; scientific notation only outside the range
/// where plain decimals stay compact. Identical input bits give identical
/// text, which the byte-determinism invariant relies on.
pub fn fmt_float(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let a = x.abs();
    if a >= 1e-4 && a < 1e15 {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn write_csv(
    path: &Path,
    header: &str,
    rows: impl IntoIterator<Item = Vec<String>>,
) -> io::Result<()> {
    let mut text = String::from(header);
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    atomic_write(path, text.as_bytes())
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("json value serializes");
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

pub fn palette(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn svg_open(side: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{side}\" height=\"{side}\" \
         viewBox=\"0 0 {side} {side}\">\n<rect width=\"{side}\" height=\"{side}\" fill=\"white\"/>\n"
    )
}

/// Polylines in plane coordinates, auto-scaled to the viewport with y up.
pub fn svg_plane_lines(lines: &[(String, Vec<Vec2>)]) -> String {
    let side = 840.0;
    let margin = 30.0;
    let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (_, pts) in lines {
        for p in pts {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
    }
    if !lo.x.is_finite() {
        lo = Vec2::new(-1.0, -1.0);
        hi = Vec2::new(1.0, 1.0);
    }
    let span = (hi.x - lo.x).max(hi.y - lo.y).max(1e-12);
    let scale = (side - 2.0 * margin) / span;
    let cx = 0.5 * (lo.x + hi.x);
    let cy = 0.5 * (lo.y + hi.y);
    let map = |p: &Vec2| {
        (
            0.5 * side + (p.x - cx) * scale,
            0.5 * side - (p.y - cy) * scale,
        )
    };
    let mut svg = svg_open(side);
    for (i, (label, pts)) in lines.iter().enumerate() {
        if pts.is_empty() {
            continue;
        }
        let mut d = String::new();
        for (j, p) in pts.iter().enumerate() {
            let (x, y) = map(p);
            d.push_str(if j == 0 { "M" } else { " L" });
            d.push_str(&format!("{x:.3} {y:.3}"));
        }
        svg.push_str(&format!(
            "<path d=\"{d}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.2\">\
             <title>{label}</title></path>\n",
            palette(i)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Stereographic zone map: every scanned direction as a dot colored by
/// regime, and one filled path group per zone keyed by its triple.
pub fn svg_zone_map(
    dirs: &[(f64, f64, f64)],
    regimes: &[&'static str],
    zones: &[([i64; 3], Vec<(f64, f64, f64)>)],
) -> String {
    let side = 840.0;
    let r = 0.5 * side - 30.0;
    let c = 0.5 * side;
    // Antipodal flip to the upper hemisphere, then stereographic from -z.
    let map = |d: (f64, f64, f64)| {
        let (x, y, z) = if d.2 < 0.0 { (-d.0, -d.1, -d.2) } else { d };
        (c + r * x / (1.0 + z), c - r * y / (1.0 + z))
    };
    let mut svg = svg_open(side);
    svg.push_str(&format!(
        "<circle cx=\"{c}\" cy=\"{c}\" r=\"{r}\" fill=\"none\" stroke=\"#999\"/>\n"
    ));
    // Stable color per distinct triple.
    let mut triples: Vec<[i64; 3]> = Vec::new();
    for (m, _) in zones {
        if !triples.contains(m) {
            triples.push(*m);
        }
    }
    for (m, boundary) in zones {
        if boundary.len() < 3 {
            continue;
        }
        let color = palette(triples.iter().position(|t| t == m).unwrap());
        let mut d = String::new();
        for (j, &p) in boundary.iter().enumerate() {
            let (x, y) = map(p);
            d.push_str(if j == 0 { "M" } else { " L" });
            d.push_str(&format!("{x:.3} {y:.3}"));
        }
        d.push_str(" Z");
        svg.push_str(&format!(
            "<g data-m=\"{} {} {}\"><path d=\"{d}\" fill=\"{color}\" fill-opacity=\"0.35\" \
             stroke=\"{color}\" stroke-width=\"1\"/></g>\n",
            m[0], m[1], m[2]
        ));
    }
    for (d, regime) in dirs.iter().zip(regimes) {
        let (x, y) = map(*d);
        let fill = match *regime {
            "closed_only" => "#bbbbbb",
            "periodic_open" => "#555555",
            "topologically_regular" => "#1f77b4",
            "chaotic_candidate" => "#d62728",
            _ => "#eeeeee",
        };
        svg.push_str(&format!(
            "<circle cx=\"{x:.3}\" cy=\"{y:.3}\" r=\"2.2\" fill=\"{fill}\"/>\n"
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Log-log plot of positive series against lambda, with a least-squares
/// trend line per series over the report window.
pub fn svg_loglog(
    lambdas: &[f64],
    series: &[(String, Vec<f64>)],
    window: (f64, f64),
) -> String {
    let side = 840.0;
    let margin = 60.0;
    let xs: Vec<f64> = lambdas.iter().map(|l| l.log10()).collect();
    let mut ylo = f64::INFINITY;
    let mut yhi = f64::NEG_INFINITY;
    for (_, vals) in series {
        for &v in vals {
            let a = v.abs();
            if a > 1e-300 {
                ylo = ylo.min(a.log10());
                yhi = yhi.max(a.log10());
            }
        }
    }
    if !ylo.is_finite() {
        ylo = -1.0;
        yhi = 1.0;
    }
    if yhi - ylo < 1e-9 {
        yhi = ylo + 1.0;
    }
    let (xlo, xhi) = (xs[0], xs[xs.len() - 1].max(xs[0] + 1e-9));
    let mx = |x: f64| margin + (x - xlo) / (xhi - xlo) * (side - 2.0 * margin);
    let my = |y: f64| side - margin - (y - ylo) / (yhi - ylo) * (side - 2.0 * margin);
    let mut svg = svg_open(side);
    svg.push_str(&format!(
        "<rect x=\"{margin}\" y=\"{margin}\" width=\"{w}\" height=\"{w}\" fill=\"none\" stroke=\"#999\"/>\n",
        w = side - 2.0 * margin
    ));
    for d in (xlo.ceil() as i64)..=(xhi.floor() as i64) {
        let x = mx(d as f64);
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{margin}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"#ddd\"/>\
             <text x=\"{x:.2}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">1e{d}</text>\n",
            side - margin,
            side - margin + 18.0
        ));
    }
    for d in (ylo.ceil() as i64)..=(yhi.floor() as i64) {
        let y = my(d as f64);
        svg.push_str(&format!(
            "<line x1=\"{margin}\" y1=\"{y:.2}\" x2=\"{}\" y2=\"{y:.2}\" stroke=\"#ddd\"/>\
             <text x=\"{}\" y=\"{y:.2}\" font-size=\"12\" text-anchor=\"end\">1e{d}</text>\n",
            side - margin,
            margin - 6.0
        ));
    }
    for (i, (label, vals)) in series.iter().enumerate() {
        let color = palette(i);
        let mut d = String::new();
        let mut fit_x = Vec::new();
        let mut fit_y = Vec::new();
        for (&x, (&l, &v)) in xs.iter().zip(lambdas.iter().zip(vals)) {
            let a = v.abs();
            if a <= 1e-300 {
                continue;
            }
            let y = a.log10();
            d.push_str(if d.is_empty() { "M" } else { " L" });
            d.push_str(&format!("{:.3} {:.3}", mx(x), my(y)));
            if l >= window.0 && l <= window.1 {
                fit_x.push(x);
                fit_y.push(y);
            }
        }
        if d.is_empty() {
            continue;
        }
        svg.push_str(&format!(
            "<path d=\"{d}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"13\" fill=\"{color}\">{label}</text>\n",
            side - margin + 6.0,
            margin + 16.0 * i as f64
        ));
        if fit_x.len() >= 2 {
            let n = fit_x.len() as f64;
            let sx: f64 = fit_x.iter().sum();
            let sy: f64 = fit_y.iter().sum();
            let sxx: f64 = fit_x.iter().map(|x| x * x).sum();
            let sxy: f64 = fit_x.iter().zip(&fit_y).map(|(x, y)| x * y).sum();
            let det = n * sxx - sx * sx;
            if det.abs() > 1e-12 {
                let slope = (n * sxy - sx * sy) / det;
                let icpt = (sy - slope * sx) / n;
                let (fx0, fx1) = (fit_x[0], fit_x[fit_x.len() - 1]);
                svg.push_str(&format!(
                    "<line x1=\"{:.3}\" y1=\"{:.3}\" x2=\"{:.3}\" y2=\"{:.3}\" \
                     stroke=\"{color}\" stroke-dasharray=\"6 4\" stroke-width=\"1\"/>\n",
                    mx(fx0),
                    my(slope * fx0 + icpt),
                    mx(fx1),
                    my(slope * fx1 + icpt)
                ));
            }
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_round_trips() {
        for x in [0.0, 1.0, -2.5, 1e-3, 3.25e-9, 7.1e18, -4.0e-120] {
            let s = fmt_float(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "text {s}");
        }
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        atomic_write(&path, b"one").unwrap();
        atomic_write(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        assert!(!path.with_file_name("a.csv.tmp").exists());
    }
}
