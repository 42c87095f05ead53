//! Minimal SVG line charts for reports.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

enum Kind {
    Line { markers: bool },
    Points,
    /// Lower edge in `pts`, upper edge here.
    Band(Vec<(f64, f64)>),
}

pub struct Series {
    name: String,
    pts: Vec<(f64, f64)>,
    kind: Kind,
}

impl Series {
    pub fn line(name: &str, pts: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            pts,
            kind: Kind::Line { markers: false },
        }
    }

    pub fn points(name: &str, pts: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            pts,
            kind: Kind::Points,
        }
    }

    pub fn band(name: &str, lower: Vec<(f64, f64)>, upper: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            pts: lower,
            kind: Kind::Band(upper),
        }
    }

    pub fn with_markers(mut self) -> Self {
        if let Kind::Line { markers } = &mut self.kind {
            *markers = true;
        }
        self
    }
}

pub struct Plot {
    title: String,
    xlabel: String,
    ylabel: String,
    series: Vec<Series>,
    symlog: bool,
}

/// `sign(y)·log10(1 + |y|)`, for traces spanning many decades.
fn symlog(y: f64) -> f64 {
    y.signum() * (1.0 + y.abs()).log10()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{}", (v * 1000.0).round() / 1000.0)
    }
}

impl Plot {
    pub fn new(title: &str, xlabel: &str, ylabel: &str) -> Self {
        Self {
            title: title.into(),
            xlabel: xlabel.into(),
            ylabel: ylabel.into(),
            series: Vec::new(),
            symlog: false,
        }
    }

    pub fn add(&mut self, s: Series) {
        self.series.push(s);
    }

    pub fn symlog_y(&mut self) {
        self.symlog = true;
    }

    fn ty(&self, y: f64) -> f64 {
        if self.symlog {
            symlog(y)
        } else {
            y
        }
    }

    pub fn render(&self) -> String {
        let all = self.series.iter().flat_map(|s| {
            let extra: &[(f64, f64)] = match &s.kind {
                Kind::Band(u) => u,
                _ => &[],
            };
            s.pts.iter().chain(extra).copied()
        });
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in all.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            let y = self.ty(y);
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 <= 0.0 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 <= 0.0 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let pad = 0.05 * (y1 - y0);
        let (y0, y1) = (y0 - pad, y1 + pad);
        let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (1.0 - (self.ty(y) - y0) / (y1 - y0)) * ph;
        let path = |pts: &[(f64, f64)]| {
            pts.iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect::<Vec<_>>()
                .join(" ")
        };

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(&self.title));
        let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let (px, py) = (LEFT + f * pw, TOP + (1.0 - f) * ph);
            let ylab = if self.symlog {
                let v = yv.signum() * (10f64.powf(yv.abs()) - 1.0);
                tick_label(v)
            } else {
                tick_label(yv)
            };
            let _ = writeln!(s, r##"<line x1="{px:.2}" y1="{}" x2="{px:.2}" y2="{}" stroke="#ccc"/>"##, TOP, TOP + ph);
            let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{py:.2}" x2="{}" y2="{py:.2}" stroke="#ccc"/>"##, LEFT + pw);
            let _ = writeln!(s, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#, TOP + ph + 16.0, tick_label(xv));
            let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, py + 4.0, ylab);
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 12.0, escape(&self.xlabel));
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.ylabel)
        );

        for (k, series) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            match &series.kind {
                Kind::Line { markers } => {
                    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, path(&series.pts));
                    if *markers {
                        for &(x, y) in series.pts.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
                            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(x), sy(y));
                        }
                    }
                }
                Kind::Points => {
                    for &(x, y) in series.pts.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
                        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="none" stroke="{color}" stroke-width="1.5"/>"#, sx(x), sy(y));
                    }
                }
                Kind::Band(upper) => {
                    let mut ring = series.pts.clone();
                    ring.extend(upper.iter().rev());
                    let _ = writeln!(s, r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, path(&ring));
                }
            }
            let ly = TOP + 14.0 + 18.0 * k as f64;
            let lx = LEFT + pw + 12.0;
            let _ = writeln!(s, r#"<rect x="{lx}" y="{}" width="12" height="8" fill="{color}"/>"#, ly - 8.0);
            let _ = writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, lx + 16.0, escape(&series.name));
        }
        s.push_str("</svg>\n");
        s
    }
}
