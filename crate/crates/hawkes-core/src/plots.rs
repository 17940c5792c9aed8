//! Plain-text SVG rendering of the headline figures: posterior density
//! overlays, prior-scaling sweeps, and per-session trigger panels. No
//! rasterization and no external plotting dependency; every file is a small
//! standalone SVG document.

use crate::report::{BranchingPanel, Report};
use crate::sensitivity::SweepPoint;
use crate::Result;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Gaussian kernel density estimate on a uniform grid spanning the data plus
/// three bandwidths on each side. Returns (grid, density).
pub fn gaussian_kde(xs: &[f64], grid_n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(xs.len() > 1 && grid_n > 1);
    let n = xs.len() as f64;
    let sd = crate::stats::std_dev(xs);
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let iqr = crate::stats::quantile_sorted(&sorted, 0.75) - crate::stats::quantile_sorted(&sorted, 0.25);
    // Silverman's rule with the usual robust spread
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = (0.9 * spread * n.powf(-0.2)).max(1e-12);
    let lo = sorted[0] - 3.0 * h;
    let hi = sorted[sorted.len() - 1] + 3.0 * h;
    let grid: Vec<f64> =
        (0..grid_n).map(|i| lo + (hi - lo) * i as f64 / (grid_n - 1) as f64).collect();
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    let dens = grid
        .iter()
        .map(|&g| xs.iter().map(|&x| (-0.5 * ((g - x) / h).powi(2)).exp()).sum::<f64>() * norm)
        .collect();
    (grid, dens)
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        MARGIN + (v - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn y(&self, v: f64) -> f64 {
        // SVG y grows downward
        HEIGHT - MARGIN - (v - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"monospace\" font-size=\"11\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{MARGIN}\" y=\"20\">{title}</text>\n"
    )
}

fn axes(out: &mut String, frame: &Frame, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{r}\" y=\"{bl}\" text-anchor=\"end\">{x_label}</text>\n\
         <text x=\"{m}\" y=\"{tl}\">{y_label}</text>\n\
         <text x=\"{m}\" y=\"{bl}\" text-anchor=\"middle\">{x0:.3}</text>\n\
         <text x=\"{r}\" y=\"{bl2}\" text-anchor=\"end\">{x1:.3}</text>",
        m = MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN,
        bl = HEIGHT - MARGIN + 16.0,
        bl2 = HEIGHT - MARGIN + 30.0,
        tl = MARGIN - 8.0,
        x0 = frame.x0,
        x1 = frame.x1,
    );
}

fn polyline(out: &mut String, frame: &Frame, pts: &[(f64, f64)], color: &str) {
    let coords: Vec<String> =
        pts.iter().map(|(x, y)| format!("{:.2},{:.2}", frame.x(*x), frame.y(*y))).collect();
    let _ = writeln!(
        out,
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
        coords.join(" ")
    );
}

/// Overlayed kernel density estimates, one curve per named draw vector.
pub fn density_overlay_svg(title: &str, series: &[(String, Vec<f64>)]) -> String {
    let curves: Vec<(String, Vec<f64>, Vec<f64>)> = series
        .iter()
        .map(|(name, xs)| {
            let (g, d) = gaussian_kde(xs, 256);
            (name.clone(), g, d)
        })
        .collect();
    let x0 = curves.iter().map(|c| c.1[0]).fold(f64::INFINITY, f64::min);
    let x1 = curves.iter().map(|c| *c.1.last().unwrap()).fold(f64::NEG_INFINITY, f64::max);
    let y1 = curves.iter().flat_map(|c| c.2.iter()).fold(0.0f64, |a, &b| a.max(b));
    let frame = Frame { x0, x1, y0: 0.0, y1: y1 * 1.05 };
    let mut out = svg_open(title);
    axes(&mut out, &frame, "value", "density");
    for (i, (name, g, d)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = g.iter().copied().zip(d.iter().copied()).collect();
        polyline(&mut out, &frame, &pts, color);
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" fill=\"{color}\">{name}</text>",
            WIDTH - MARGIN - 120.0,
            MARGIN + 14.0 * (i + 1) as f64
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Prior-scaling sweep: one horizontal interval line per delta showing the
/// reweighted 90% interval with a mean marker.
pub fn sweep_svg(title: &str, sweep: &[SweepPoint]) -> String {
    let x0 = sweep.iter().map(|p| p.q5).fold(f64::INFINITY, f64::min);
    let x1 = sweep.iter().map(|p| p.q95).fold(f64::NEG_INFINITY, f64::max);
    let pad = (x1 - x0).max(1e-9) * 0.05;
    let frame = Frame { x0: x0 - pad, x1: x1 + pad, y0: 0.0, y1: (sweep.len() + 1) as f64 };
    let mut out = svg_open(title);
    axes(&mut out, &frame, "branching factor", "delta");
    for (i, p) in sweep.iter().enumerate() {
        let y = (i + 1) as f64;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            out,
            "<line class=\"sweep\" x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" \
             stroke=\"{color}\" stroke-width=\"2\"/>\n\
             <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n\
             <text x=\"{:.2}\" y=\"{:.2}\">d={}{}</text>",
            frame.x(p.q5),
            frame.y(y),
            frame.x(p.q95),
            frame.y(y),
            frame.x(p.mean),
            frame.y(y),
            frame.x(p.q95) + 8.0,
            frame.y(y) + 4.0,
            p.delta,
            if p.reliable { "" } else { " (unstable weights)" },
        );
    }
    out.push_str("</svg>\n");
    out
}

/// One session's trigger decomposition: the exogenous-probability band over
/// the window, event markers, and an arc from each event to its most likely
/// parent. Arcs always run forward in time because a parent precedes its
/// offspring.
pub fn branching_panel_svg(title: &str, panel: &BranchingPanel) -> String {
    let duration = *panel.curve.times.last().unwrap_or(&1.0);
    let frame = Frame { x0: 0.0, x1: duration, y0: 0.0, y1: 1.0 };
    let mut out = svg_open(title);
    axes(&mut out, &frame, "time (min)", "P(exogenous)");

    // credible band as a closed polygon: hi forward, lo backward
    let mut band: Vec<String> = panel
        .curve
        .times
        .iter()
        .zip(&panel.curve.hi)
        .map(|(t, v)| format!("{:.2},{:.2}", frame.x(*t), frame.y(v.clamp(0.0, 1.0))))
        .collect();
    band.extend(
        panel
            .curve
            .times
            .iter()
            .zip(&panel.curve.lo)
            .rev()
            .map(|(t, v)| format!("{:.2},{:.2}", frame.x(*t), frame.y(v.clamp(0.0, 1.0)))),
    );
    let _ = writeln!(out, "<polygon fill=\"#1f77b422\" stroke=\"none\" points=\"{}\"/>", band.join(" "));
    let pts: Vec<(f64, f64)> = panel
        .curve
        .times
        .iter()
        .zip(&panel.curve.median)
        .map(|(t, v)| (*t, v.clamp(0.0, 1.0)))
        .collect();
    polyline(&mut out, &frame, &pts, PALETTE[0]);

    // events on the baseline, colored by their own exogenous probability
    for (i, &t) in panel.event_times.iter().enumerate() {
        let color = if panel.best_parent[i].is_some() { PALETTE[1] } else { PALETTE[2] };
        let _ = writeln!(
            out,
            "<circle class=\"event\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>",
            frame.x(t),
            frame.y(0.0)
        );
    }

    // parent arcs, drawn below the baseline
    for (i, parent) in panel.best_parent.iter().enumerate() {
        let Some(j) = parent else { continue };
        let (tp, tc) = (panel.event_times[*j], panel.event_times[i]);
        debug_assert!(tp < tc, "parent must precede offspring");
        let (xa, xb) = (frame.x(tp), frame.x(tc));
        let depth = ((xb - xa) * 0.3).min(24.0);
        let _ = writeln!(
            out,
            "<path class=\"arc\" d=\"M {xa:.2} {y:.2} Q {:.2} {:.2} {xb:.2} {y:.2}\" \
             fill=\"none\" stroke=\"{}\" stroke-width=\"1\"/>",
            (xa + xb) / 2.0,
            frame.y(0.0) + depth,
            PALETTE[1],
            y = frame.y(0.0),
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Write every figure for a finished report. Returns the created paths.
pub fn emit_plots(
    report: &Report,
    branching_draws: &[(String, Vec<f64>)],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    if !branching_draws.is_empty() {
        let p = dir.join("branching_density.svg");
        std::fs::write(&p, density_overlay_svg("branching factor posterior", branching_draws))?;
        paths.push(p);
    }
    for m in &report.models {
        if !m.branching_prior_sweep.is_empty() {
            let p = dir.join(format!("sweep_{}.svg", m.name));
            std::fs::write(
                &p,
                sweep_svg(
                    &format!("{}: branching factor under prior scaling", m.name),
                    &m.branching_prior_sweep,
                ),
            )?;
            paths.push(p);
        }
        if let Some(panel) = &m.panel {
            let p = dir.join(format!("panel_{}.svg", m.name));
            let title = format!(
                "{}: triggers in session {}/{}",
                m.name, panel.person_id, panel.session_id
            );
            std::fs::write(&p, branching_panel_svg(&title, panel))?;
            paths.push(p);
        }
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::branching::ExogenousCurve;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn kde_integrates_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..2000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let (grid, dens) = gaussian_kde(&xs, 512);
        let mut area = 0.0;
        for i in 1..grid.len() {
            area += 0.5 * (dens[i] + dens[i - 1]) * (grid[i] - grid[i - 1]);
        }
        assert!((area - 1.0).abs() < 1e-3, "trapezoid area {area}");
    }

    #[test]
    fn density_overlay_has_one_curve_per_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let series: Vec<(String, Vec<f64>)> = (0..3)
            .map(|i| {
                let xs = (0..500).map(|_| rng.sample::<f64, _>(StandardNormal) + i as f64).collect();
                (format!("m{i}"), xs)
            })
            .collect();
        let svg = density_overlay_svg("t", &series);
        assert_eq!(svg.matches("<polyline").count(), 3);
        for (name, _) in &series {
            assert!(svg.contains(name.as_str()));
        }
    }

    #[test]
    fn sweep_has_one_line_per_delta() {
        let sweep: Vec<SweepPoint> = [0.5, 0.8, 1.25, 2.0]
            .iter()
            .map(|&delta| SweepPoint {
                delta,
                mean: 0.5 + 0.1 * delta,
                sd: 0.05,
                q5: 0.4,
                q95: 0.7 + 0.05 * delta,
                khat: 0.1,
                reliable: true,
            })
            .collect();
        let svg = sweep_svg("t", &sweep);
        assert_eq!(svg.matches("class=\"sweep\"").count(), 4);
    }

    #[test]
    fn panel_arcs_connect_temporally_ordered_events() {
        let times = vec![1.0, 2.0, 4.0, 7.0];
        let grid: Vec<f64> = (0..64).map(|i| 10.0 * i as f64 / 63.0).collect();
        let n = grid.len();
        let panel = BranchingPanel {
            person_id: "p".into(),
            session_id: "s".into(),
            event_times: times,
            p_exo: vec![0.9, 0.3, 0.4, 0.8],
            p_edge: vec![0.05, 0.1, 0.1, 0.1],
            best_parent: vec![None, Some(0), Some(1), None],
            curve: ExogenousCurve {
                times: grid,
                median: vec![0.6; n],
                lo: vec![0.4; n],
                hi: vec![0.8; n],
            },
        };
        let svg = branching_panel_svg("t", &panel);
        assert_eq!(svg.matches("class=\"event\"").count(), 4);
        assert_eq!(svg.matches("class=\"arc\"").count(), 2);
    }
}
