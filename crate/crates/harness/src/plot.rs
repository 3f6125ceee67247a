//! Standalone SVG figures. Each file embeds the plotted numbers in a comment
//! so it can be checked without a renderer.

use std::fmt::Write;

use nellcom::grammar::UtteranceClass;
use nellcom::training::{metric, Phase};

use crate::aggregate::Aggregate;

const W: f64 = 720.0;
const H: f64 = 420.0;
const MARGIN: f64 = 56.0;

const CLASS_COLORS: [&str; 5] = ["#9ecae1", "#08519c", "#fdae6b", "#a63603", "#bdbdbd"];
const GRAMMAR_COLORS: [&str; 4] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Maps data coordinates into a plotting rectangle.
#[derive(Clone, Copy)]
struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        self.x0 + (v - self.xr.0) / (self.xr.1 - self.xr.0) * self.w
    }
    fn y(&self, v: f64) -> f64 {
        self.y0 + self.h - (v - self.yr.0) / (self.yr.1 - self.yr.0) * self.h
    }

    fn axes(&self, out: &mut String, xlabel: &str, ylabel: &str, ticks: usize) {
        let (l, t, r, b) = (self.x0, self.y0, self.x0 + self.w, self.y0 + self.h);
        let _ = writeln!(
            out,
            r##"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="#333"/>"##,
            self.w, self.h
        );
        for i in 0..=ticks {
            let f = i as f64 / ticks as f64;
            let xv = self.xr.0 + f * (self.xr.1 - self.xr.0);
            let yv = self.yr.0 + f * (self.yr.1 - self.yr.0);
            let (x, y) = (self.x(xv), self.y(yv));
            let _ = writeln!(
                out,
                r##"<text x="{x:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"##,
                b + 14.0,
                tick(xv)
            );
            let _ = writeln!(
                out,
                r##"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{}</text>"##,
                l - 4.0,
                y + 3.0,
                tick(yv)
            );
        }
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"##,
            (l + r) / 2.0,
            b + 32.0,
            esc(xlabel)
        );
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{}</text>"##,
            l - 38.0,
            (t + b) / 2.0,
            l - 38.0,
            (t + b) / 2.0,
            esc(ylabel)
        );
    }
}

fn tick(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round())
    } else {
        format!("{v:.2}")
    }
}

fn open(title: &str, width: f64, height: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="20" font-size="14" text-anchor="middle">{}</text>"#,
        width / 2.0,
        esc(title)
    );
    s
}

fn data_comment(out: &mut String, header: &str, rows: &[String]) {
    out.push_str("<!-- data\n");
    out.push_str(header);
    out.push('\n');
    for r in rows {
        // "--" may not appear inside a comment
        out.push_str(&r.replace("--", "- -"));
        out.push('\n');
    }
    out.push_str("-->\n");
}

fn polyline(out: &mut String, f: &Frame, pts: &[(f64, f64)], color: &str, dashed: bool) {
    // undefined values break the line
    for run in pts.split(|p| !p.1.is_finite()) {
        if run.is_empty() {
            continue;
        }
        let coords: Vec<String> = run
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", f.x(x), f.y(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"{}/>"#,
            coords.join(" "),
            if dashed {
                r#" stroke-dasharray="5,4""#
            } else {
                ""
            }
        );
    }
}

fn legend(out: &mut String, x: f64, y: f64, items: &[(&str, &str)]) {
    for (i, (label, color)) in items.iter().enumerate() {
        let yy = y + i as f64 * 16.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{:.1}" width="12" height="10" fill="{color}"/><text x="{:.1}" y="{:.1}" font-size="11">{}</text>"#,
            yy - 9.0,
            x + 16.0,
            yy,
            esc(label)
        );
    }
}

/// Cross-seed mean proportions over both phases; communication epochs are
/// drawn after the supervised ones.
pub fn timeline_svg(agg: &Aggregate) -> String {
    let series = [
        (metric::PCT_SOV, "%SOV", "#08519c", false),
        (metric::PCT_OSV, "%OSV", "#a63603", false),
        (metric::PCT_MK, "%with mk", "#31a354", false),
        (metric::PCT_NO_MK, "%no mk", "#a1d99b", false),
        (metric::PCT_OTHER, "%other", "#969696", false),
        (
            metric::RECON_ACC_TEST,
            "reconstruction acc.",
            "#000000",
            true,
        ),
    ];
    let sl_len = agg.mean_series(Phase::Supervised, metric::PCT_SOV).len();
    let offset = sl_len.saturating_sub(1) as f64;
    let total = offset
        + agg
            .mean_series(Phase::Communication, metric::PCT_SOV)
            .len()
            .saturating_sub(1) as f64;
    let f = Frame {
        x0: MARGIN,
        y0: 36.0,
        w: W - MARGIN - 170.0,
        h: H - 36.0 - MARGIN,
        xr: (0.0, total.max(1.0)),
        yr: (0.0, 1.0),
    };
    let mut out = open(&format!("{}: production over training", agg.grammar), W, H);
    f.axes(
        &mut out,
        "epoch (supervised, then communication)",
        "proportion",
        5,
    );
    let _ = writeln!(
        out,
        r##"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="#666" stroke-dasharray="2,3"/>"##,
        f.x(offset),
        f.y0,
        f.y0 + f.h
    );
    let _ = writeln!(
        out,
        r##"<line x1="{0:.1}" y1="{1:.1}" x2="{2:.1}" y2="{1:.1}" stroke="#31a354" stroke-dasharray="6,3" stroke-width="0.8"/>"##,
        f.x0,
        f.y(2.0 / 3.0),
        f.x0 + f.w
    );
    let mut rows = Vec::new();
    for (key, _, color, dashed) in series {
        let mut pts: Vec<(f64, f64)> = agg
            .mean_series(Phase::Supervised, key)
            .into_iter()
            .map(|(e, v)| (e as f64, v))
            .collect();
        pts.extend(
            agg.mean_series(Phase::Communication, key)
                .into_iter()
                .map(|(e, v)| (offset + e as f64, v)),
        );
        polyline(&mut out, &f, &pts, color, dashed);
        for phase in [Phase::Supervised, Phase::Communication] {
            for (e, v) in agg.mean_series(phase, key) {
                rows.push(format!("{phase},{e},{key},{v}"));
            }
        }
    }
    let items: Vec<(&str, &str)> = series.iter().map(|s| (s.1, s.2)).collect();
    legend(&mut out, W - 160.0, 60.0, &items);
    data_comment(&mut out, "phase,epoch,metric,mean", &rows);
    out.push_str("</svg>\n");
    out
}

/// One small panel per seed: stacked class shares of the test productions
/// over the communication epochs.
pub fn distribution_svg(agg: &Aggregate) -> String {
    let seeds: Vec<_> = agg
        .seed_counts
        .iter()
        .filter(|s| s.phase == Phase::Communication)
        .collect();
    let cols = 5usize;
    let rows_n = seeds.len().div_ceil(cols).max(1);
    let (pw, ph) = (150.0, 110.0);
    let width = cols as f64 * pw + 40.0;
    let height = rows_n as f64 * ph + 90.0;
    let mut out = open(
        &format!(
            "{}: class distribution per seed during communication",
            agg.grammar
        ),
        width,
        height,
    );
    let mut rows = Vec::new();
    for (i, sc) in seeds.iter().enumerate() {
        let (cx, cy) = (20.0 + (i % cols) as f64 * pw, 40.0 + (i / cols) as f64 * ph);
        let n = sc.counts.len().max(1) as f64;
        let (bw, bh) = ((pw - 16.0) / n, ph - 30.0);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10">seed {}</text>"#,
            cx,
            cy + 8.0,
            sc.seed
        );
        for (e, c) in sc.counts.iter().enumerate() {
            let total = c.total().max(1) as f64;
            let mut y = cy + 12.0 + bh;
            for (k, class) in UtteranceClass::ALL.iter().enumerate() {
                let hgt = c.get(*class) as f64 / total * bh;
                y -= hgt;
                if hgt > 0.0 {
                    let _ = writeln!(
                        out,
                        r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                        cx + e as f64 * bw,
                        y,
                        bw,
                        hgt,
                        CLASS_COLORS[k]
                    );
                }
            }
            rows.push(format!(
                "{},{},{}",
                sc.seed,
                e,
                c.0.iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            ));
        }
    }
    let items: Vec<(&str, &str)> = UtteranceClass::ALL
        .iter()
        .zip(CLASS_COLORS)
        .map(|(c, col)| (c.label(), col))
        .collect();
    for (i, (label, color)) in items.iter().enumerate() {
        let x = 20.0 + i as f64 * 120.0;
        let y = height - 20.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{:.1}" width="12" height="10" fill="{color}"/><text x="{:.1}" y="{y:.1}" font-size="11">{}</text>"#,
            y - 9.0,
            x + 16.0,
            esc(label)
        );
    }
    let header = format!(
        "seed,epoch,{}",
        UtteranceClass::ALL.map(|c| c.label()).join(",")
    );
    data_comment(&mut out, &header, &rows);
    out.push_str("</svg>\n");
    out
}

/// Uncertainty against effort: a diamond for each grammar's own point, an
/// empty circle per seed and a filled circle for the seed mean.
pub fn tradeoff_svg(aggs: &[Aggregate]) -> String {
    let mut hs = vec![0.0, 0.5];
    let mut es = vec![3.0, 4.0];
    for a in aggs {
        hs.push(a.initial.h);
        es.push(a.initial.e);
        for p in &a.final_points {
            if let Some(h) = p.h {
                hs.push(h);
                es.push(p.e);
            }
        }
    }
    let max = |v: &[f64]| v.iter().copied().fold(f64::MIN, f64::max);
    let min = |v: &[f64]| v.iter().copied().fold(f64::MAX, f64::min);
    let f = Frame {
        x0: MARGIN + 10.0,
        y0: 36.0,
        w: W - MARGIN - 190.0,
        h: H - 36.0 - MARGIN,
        xr: (0.0, (max(&hs) * 10.0).ceil() / 10.0),
        yr: (
            (min(&es) * 4.0).floor() / 4.0,
            (max(&es) * 4.0).ceil() / 4.0,
        ),
    };
    let mut out = open("Uncertainty versus production effort", W, H);
    f.axes(&mut out, "uncertainty H (bits)", "effort E (words)", 5);
    let mut rows = Vec::new();
    let mut items = Vec::new();
    for (gi, a) in aggs.iter().enumerate() {
        let color = GRAMMAR_COLORS[gi % GRAMMAR_COLORS.len()];
        items.push((a.grammar.as_str(), color));
        let mut defined = Vec::new();
        for p in &a.final_points {
            rows.push(format!(
                "{},{},final,{},{}",
                a.grammar,
                p.seed,
                p.h.map(|h| h.to_string()).unwrap_or_default(),
                p.e
            ));
            let Some(h) = p.h else { continue };
            defined.push((h, p.e));
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="none" stroke="{color}" stroke-width="1.4"/>"#,
                f.x(h),
                f.y(p.e)
            );
        }
        if !defined.is_empty() {
            let n = defined.len() as f64;
            let mh = defined.iter().map(|p| p.0).sum::<f64>() / n;
            let me = defined.iter().map(|p| p.1).sum::<f64>() / n;
            rows.push(format!("{},,mean,{mh},{me}", a.grammar));
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="5" fill="{color}"/>"#,
                f.x(mh),
                f.y(me)
            );
        }
        let (x, y) = (f.x(a.initial.h), f.y(a.initial.e));
        let _ = writeln!(
            out,
            r##"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{color}" stroke="#000" stroke-width="0.6"/>"##,
            x,
            y - 7.0,
            x + 7.0,
            y,
            x,
            y + 7.0,
            x - 7.0,
            y
        );
        rows.push(format!(
            "{},,initial,{},{}",
            a.grammar, a.initial.h, a.initial.e
        ));
    }
    legend(&mut out, W - 170.0, 60.0, &items);
    data_comment(&mut out, "grammar,seed,stage,h,e", &rows);
    out.push_str("</svg>\n");
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    Timeline,
    Distribution,
    Tradeoff,
}

/// One SVG per kind. Timeline and distribution draw only the first aggregate.
pub fn render(kind: PlotKind, aggs: &[Aggregate]) -> Option<String> {
    match kind {
        PlotKind::Timeline => aggs.first().map(timeline_svg),
        PlotKind::Distribution => aggs.first().map(distribution_svg),
        PlotKind::Tradeoff => (!aggs.is_empty()).then(|| tradeoff_svg(aggs)),
    }
}
